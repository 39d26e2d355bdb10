#pragma once

#include <Eigen/Dense>
#include <Eigen/SVD>

#include <fstream>
#include <iomanip>
#include <sstream>

#include "magnonrc/common.hpp"

namespace magnonrc {

using FeatureMatrix = Eigen::MatrixXd;
using TargetMatrix = Eigen::MatrixXd;

inline void check_finite(const Eigen::MatrixXd& m, const char* what) {
    if (!m.allFinite()) throw DataError(std::string(what) + ": non-finite entries");
}

/// Moore-Penrose pseudo-inverse with singular values below tol*sigma_max
/// truncated.
inline Eigen::MatrixXd pinv(const Eigen::MatrixXd& x, double tol = 1.0e-10) {
    Eigen::BDCSVD<Eigen::MatrixXd> svd(x, Eigen::ComputeThinU | Eigen::ComputeThinV);
    const auto& sv = svd.singularValues();
    const double cutoff = sv.size() > 0 ? tol * sv(0) : 0.0;
    Eigen::VectorXd inv = Eigen::VectorXd::Zero(sv.size());
    for (Eigen::Index i = 0; i < sv.size(); ++i)
        if (sv(i) > cutoff) inv(i) = 1.0 / sv(i);
    return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
}

/// Least-squares linear readout W = pinv(X) * Y; prediction = X * W.
struct LinearModel {
    Eigen::MatrixXd weights;  // features x outputs

    Eigen::MatrixXd predict(const FeatureMatrix& x) const { return x * weights; }
    int outputs() const { return static_cast<int>(weights.cols()); }
};

inline LinearModel fit_linear(const FeatureMatrix& x, const TargetMatrix& y) {
    if (x.rows() < 1) throw DataError("fit_linear: need at least one row");
    if (x.rows() != y.rows()) throw DataError("fit_linear: row count mismatch");
    check_finite(x, "fit_linear X");
    check_finite(y, "fit_linear Y");
    return {pinv(x) * y};
}

/// Mean of N linear maps fit on contiguous row chunks (remainder rows go to
/// the last chunk).
struct EnsembleModel {
    std::vector<LinearModel> members;

    Eigen::MatrixXd predict(const FeatureMatrix& x) const {
        Eigen::MatrixXd acc = Eigen::MatrixXd::Zero(x.rows(), members.front().weights.cols());
        for (const LinearModel& m : members) acc += m.predict(x);
        return acc / static_cast<double>(members.size());
    }
    int outputs() const { return members.front().outputs(); }
};

inline EnsembleModel fit_ensemble(const FeatureMatrix& x, const TargetMatrix& y, int n_chunks) {
    if (n_chunks < 1) throw ConfigError("fit_ensemble: chunk count must be >= 1");
    if (n_chunks > x.rows())
        throw ConfigError("fit_ensemble: more chunks than rows (" + std::to_string(n_chunks) +
                          " > " + std::to_string(x.rows()) + ")");
    const Eigen::Index rows = x.rows();
    const Eigen::Index base = rows / n_chunks;
    EnsembleModel out;
    for (int c = 0; c < n_chunks; ++c) {
        const Eigen::Index r0 = c * base;
        const Eigen::Index len = (c == n_chunks - 1) ? rows - r0 : base;
        out.members.push_back(fit_linear(x.middleRows(r0, len), y.middleRows(r0, len)));
    }
    return out;
}

enum class MlpTask { kBinary, kMulticlass };

struct MlpSpec {
    int hidden = 16;
    int epochs = 300;
    double learning_rate = 1.0e-3;
    bool standardize_inputs = true;
    MlpTask task = MlpTask::kBinary;
};

/// One-hidden-layer rectifier MLP; sigmoid/cross-entropy for binary tasks,
/// softmax/cross-entropy for multiclass. Trained full-batch with Adam.
struct MlpModel {
    MlpSpec spec;
    Eigen::MatrixXd w1;  // hidden x features
    Eigen::VectorXd b1;
    Eigen::MatrixXd w2;  // outputs x hidden
    Eigen::VectorXd b2;
    Eigen::VectorXd mean;   // input standardization, frozen at fit time
    Eigen::VectorXd scale;

    int outputs() const { return static_cast<int>(w2.rows()); }

    Eigen::MatrixXd standardized(const FeatureMatrix& x) const {
        Eigen::MatrixXd z = x;
        z.rowwise() -= mean.transpose();
        z.array().rowwise() /= scale.transpose().array();
        return z;
    }

    /// Raw scores: sigmoid probabilities (binary) or softmax rows.
    Eigen::MatrixXd predict(const FeatureMatrix& x) const {
        const Eigen::MatrixXd z = standardized(x);
        Eigen::MatrixXd h = (z * w1.transpose()).rowwise() + b1.transpose();
        h = h.cwiseMax(0.0);
        Eigen::MatrixXd o = (h * w2.transpose()).rowwise() + b2.transpose();
        if (spec.task == MlpTask::kBinary) {
            return (1.0 / (1.0 + (-o.array()).exp())).matrix();
        }
        Eigen::MatrixXd out(o.rows(), o.cols());
        for (Eigen::Index r = 0; r < o.rows(); ++r) {
            Eigen::ArrayXd row = o.row(r).array();
            row -= row.maxCoeff();
            Eigen::ArrayXd e = row.exp();
            out.row(r) = (e / e.sum()).matrix();
        }
        return out;
    }
};

namespace detail {

struct MlpGrads {
    Eigen::MatrixXd w1;
    Eigen::VectorXd b1;
    Eigen::MatrixXd w2;
    Eigen::VectorXd b2;
};

/// Mean cross-entropy loss and its analytic gradients at the current
/// parameters. Inputs are assumed already standardized.
inline double mlp_loss_and_grads(const MlpModel& m, const Eigen::MatrixXd& z,
                                 const TargetMatrix& y, MlpGrads* grads) {
    const double n = static_cast<double>(z.rows());
    Eigen::MatrixXd pre_h = (z * m.w1.transpose()).rowwise() + m.b1.transpose();
    Eigen::MatrixXd h = pre_h.cwiseMax(0.0);
    Eigen::MatrixXd o = (h * m.w2.transpose()).rowwise() + m.b2.transpose();

    Eigen::MatrixXd p;
    double loss = 0.0;
    const double eps = 1.0e-12;
    if (m.spec.task == MlpTask::kBinary) {
        p = (1.0 / (1.0 + (-o.array()).exp())).matrix();
        loss = -(y.array() * (p.array() + eps).log() +
                 (1.0 - y.array()) * (1.0 - p.array() + eps).log())
                    .sum() /
               n;
    } else {
        p.resize(o.rows(), o.cols());
        for (Eigen::Index r = 0; r < o.rows(); ++r) {
            Eigen::ArrayXd row = o.row(r).array();
            row -= row.maxCoeff();
            Eigen::ArrayXd e = row.exp();
            p.row(r) = (e / e.sum()).matrix();
        }
        loss = -(y.array() * (p.array() + eps).log()).sum() / n;
    }
    if (grads != nullptr) {
        // dL/do is (p - y)/n for both heads
        Eigen::MatrixXd dout = (p - y) / n;
        grads->w2 = dout.transpose() * h;
        grads->b2 = dout.colwise().sum().transpose();
        Eigen::MatrixXd dh = dout * m.w2;
        dh = (pre_h.array() > 0.0).select(dh, 0.0);
        grads->w1 = dh.transpose() * z;
        grads->b1 = dh.colwise().sum().transpose();
    }
    return loss;
}

}  // namespace detail

inline MlpModel fit_mlp(const FeatureMatrix& x, const TargetMatrix& y, MlpSpec spec,
                        uint64_t seed) {
    if (x.rows() != y.rows()) throw DataError("fit_mlp: row count mismatch");
    check_finite(x, "fit_mlp X");
    check_finite(y, "fit_mlp Y");
    const int features = static_cast<int>(x.cols());
    const int outputs = static_cast<int>(y.cols());

    MlpModel m;
    m.spec = spec;
    m.mean = x.colwise().mean();
    if (!spec.standardize_inputs) m.mean.setZero();
    Eigen::VectorXd var =
        ((x.rowwise() - m.mean.transpose()).array().square().colwise().sum() / x.rows())
            .transpose();
    m.scale = var.array().sqrt().max(1.0e-12).matrix();
    if (!spec.standardize_inputs) m.scale.setOnes();
    const Eigen::MatrixXd z = m.standardized(x);

    Rng rng(seed);
    auto init = [&](Eigen::MatrixXd& w, int rows, int cols, int fan_in) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        w.resize(rows, cols);
        for (int r = 0; r < rows; ++r)
            for (int c = 0; c < cols; ++c) w(r, c) = rng.uniform(-bound, bound);
    };
    init(m.w1, spec.hidden, features, features);
    m.b1 = Eigen::VectorXd::Zero(spec.hidden);
    init(m.w2, outputs, spec.hidden, spec.hidden);
    m.b2 = Eigen::VectorXd::Zero(outputs);

    // Adam, full batch
    const double beta1 = 0.9, beta2 = 0.999, adam_eps = 1.0e-8;
    detail::MlpGrads g;
    detail::MlpGrads mom{Eigen::MatrixXd::Zero(m.w1.rows(), m.w1.cols()),
                         Eigen::VectorXd::Zero(m.b1.size()),
                         Eigen::MatrixXd::Zero(m.w2.rows(), m.w2.cols()),
                         Eigen::VectorXd::Zero(m.b2.size())};
    detail::MlpGrads vel = mom;
    for (int epoch = 1; epoch <= spec.epochs; ++epoch) {
        const double loss = detail::mlp_loss_and_grads(m, z, y, &g);
        if (!std::isfinite(loss))
            throw TrainingError("fit_mlp: loss diverged at epoch " + std::to_string(epoch));
        const double bc1 = 1.0 - std::pow(beta1, epoch);
        const double bc2 = 1.0 - std::pow(beta2, epoch);
        auto adam = [&](Eigen::MatrixXd& w, Eigen::MatrixXd& mw, Eigen::MatrixXd& vw,
                        const Eigen::MatrixXd& gw) {
            mw = beta1 * mw + (1.0 - beta1) * gw;
            vw = beta2 * vw + (1.0 - beta2) * gw.array().square().matrix();
            w.array() -= spec.learning_rate * (mw.array() / bc1) /
                         ((vw.array() / bc2).sqrt() + adam_eps);
        };
        auto adam_v = [&](Eigen::VectorXd& w, Eigen::VectorXd& mw, Eigen::VectorXd& vw,
                          const Eigen::VectorXd& gw) {
            mw = beta1 * mw + (1.0 - beta1) * gw;
            vw = beta2 * vw + (1.0 - beta2) * gw.array().square().matrix();
            w.array() -= spec.learning_rate * (mw.array() / bc1) /
                         ((vw.array() / bc2).sqrt() + adam_eps);
        };
        adam(m.w1, mom.w1, vel.w1, g.w1);
        adam_v(m.b1, mom.b1, vel.b1, g.b1);
        adam(m.w2, mom.w2, vel.w2, g.w2);
        adam_v(m.b2, mom.b2, vel.b2, g.b2);
    }
    check_finite(m.w1, "fit_mlp w1");
    check_finite(m.w2, "fit_mlp w2");
    return m;
}

/// Analytic training-loss gradients of an MLP, flattened in parameter order
/// (w1 row-major, b1, w2 row-major, b2).
inline Eigen::VectorXd backprop_grad(const MlpModel& m, const FeatureMatrix& x,
                                     const TargetMatrix& y) {
    detail::MlpGrads g;
    detail::mlp_loss_and_grads(m, m.standardized(x), y, &g);
    Eigen::VectorXd out(m.w1.size() + m.b1.size() + m.w2.size() + m.b2.size());
    Eigen::Index at = 0;
    for (Eigen::Index r = 0; r < g.w1.rows(); ++r)
        for (Eigen::Index c = 0; c < g.w1.cols(); ++c) out(at++) = g.w1(r, c);
    for (Eigen::Index r = 0; r < g.b1.size(); ++r) out(at++) = g.b1(r);
    for (Eigen::Index r = 0; r < g.w2.rows(); ++r)
        for (Eigen::Index c = 0; c < g.w2.cols(); ++c) out(at++) = g.w2(r, c);
    for (Eigen::Index r = 0; r < g.b2.size(); ++r) out(at++) = g.b2(r);
    return out;
}

/// Mean-squared-error gradient of a linear readout, flattened column-major.
inline Eigen::VectorXd backprop_grad(const LinearModel& m, const FeatureMatrix& x,
                                     const TargetMatrix& y) {
    const double n = static_cast<double>(x.rows());
    Eigen::MatrixXd g = 2.0 * x.transpose() * (x * m.weights - y) / n;
    return Eigen::Map<Eigen::VectorXd>(g.data(), g.size());
}

inline double mlp_loss(const MlpModel& m, const FeatureMatrix& x, const TargetMatrix& y) {
    return detail::mlp_loss_and_grads(m, m.standardized(x), y, nullptr);
}

/// Forward-difference gradient estimate; exactly params.size() + 1
/// evaluations of f.
inline Eigen::VectorXd param_shift_grad(const std::function<double(const Eigen::VectorXd&)>& f,
                                        const Eigen::VectorXd& params, double delta) {
    if (delta <= 0.0) throw ConfigError("param_shift_grad: delta must be positive");
    const double f0 = f(params);
    Eigen::VectorXd grad(params.size());
    Eigen::VectorXd p = params;
    for (Eigen::Index i = 0; i < params.size(); ++i) {
        const double saved = p(i);
        p(i) = saved + delta;
        grad(i) = (f(p) - f0) / delta;
        p(i) = saved;
    }
    return grad;
}

/// Flattens MLP parameters in the backprop_grad order.
inline Eigen::VectorXd mlp_params(const MlpModel& m) {
    Eigen::VectorXd out(m.w1.size() + m.b1.size() + m.w2.size() + m.b2.size());
    Eigen::Index at = 0;
    for (Eigen::Index r = 0; r < m.w1.rows(); ++r)
        for (Eigen::Index c = 0; c < m.w1.cols(); ++c) out(at++) = m.w1(r, c);
    for (Eigen::Index r = 0; r < m.b1.size(); ++r) out(at++) = m.b1(r);
    for (Eigen::Index r = 0; r < m.w2.rows(); ++r)
        for (Eigen::Index c = 0; c < m.w2.cols(); ++c) out(at++) = m.w2(r, c);
    for (Eigen::Index r = 0; r < m.b2.size(); ++r) out(at++) = m.b2(r);
    return out;
}

inline void set_mlp_params(MlpModel& m, const Eigen::VectorXd& p) {
    Eigen::Index at = 0;
    for (Eigen::Index r = 0; r < m.w1.rows(); ++r)
        for (Eigen::Index c = 0; c < m.w1.cols(); ++c) m.w1(r, c) = p(at++);
    for (Eigen::Index r = 0; r < m.b1.size(); ++r) m.b1(r) = p(at++);
    for (Eigen::Index r = 0; r < m.w2.rows(); ++r)
        for (Eigen::Index c = 0; c < m.w2.cols(); ++c) m.w2(r, c) = p(at++);
    for (Eigen::Index r = 0; r < m.b2.size(); ++r) m.b2(r) = p(at++);
}

/// Class predictions from raw scores: binary threshold at 0.5 with ties to
/// class 1; multiclass argmax with ties to the lowest index.
inline std::vector<int> predicted_labels(const Eigen::MatrixXd& scores) {
    std::vector<int> out(static_cast<size_t>(scores.rows()));
    if (scores.cols() == 1) {
        for (Eigen::Index r = 0; r < scores.rows(); ++r) out[r] = scores(r, 0) >= 0.5 ? 1 : 0;
    } else {
        for (Eigen::Index r = 0; r < scores.rows(); ++r) {
            int best = 0;
            for (Eigen::Index c = 1; c < scores.cols(); ++c)
                if (scores(r, c) > scores(r, best)) best = static_cast<int>(c);
            out[r] = best;
        }
    }
    return out;
}

/// Accuracy percent against integer class labels.
template <typename Model>
double evaluate(const Model& model, const FeatureMatrix& x, const std::vector<int>& labels) {
    if (static_cast<Eigen::Index>(labels.size()) != x.rows())
        throw DataError("evaluate: label count mismatch");
    if (labels.empty()) throw DataError("evaluate: no samples");
    const std::vector<int> pred = predicted_labels(model.predict(x));
    int correct = 0;
    for (size_t i = 0; i < labels.size(); ++i)
        if (pred[i] == labels[i]) ++correct;
    return 100.0 * correct / static_cast<double>(labels.size());
}

/// One-hot targets for multiclass fits; a single 0/1 column for binary.
inline TargetMatrix targets_from_labels(const std::vector<int>& labels, int n_classes) {
    TargetMatrix y = TargetMatrix::Zero(static_cast<Eigen::Index>(labels.size()),
                                        n_classes <= 2 ? 1 : n_classes);
    for (size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= std::max(2, n_classes))
            throw DataError("targets_from_labels: label out of range");
        if (n_classes <= 2)
            y(static_cast<Eigen::Index>(i), 0) = labels[i];
        else
            y(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
    }
    return y;
}

/// CSV dump: one header line with layer sizes, then row-major weights.
inline void save_mlp_csv(const MlpModel& m, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << std::setprecision(17);
    out << "mlp," << m.w1.cols() << ',' << m.w1.rows() << ',' << m.w2.rows() << ','
        << (m.spec.task == MlpTask::kBinary ? "binary" : "multiclass") << '\n';
    const Eigen::VectorXd p = mlp_params(m);
    for (Eigen::Index i = 0; i < p.size(); ++i) out << p(i) << '\n';
    for (Eigen::Index i = 0; i < m.mean.size(); ++i)
        out << "s," << m.mean(i) << ',' << m.scale(i) << '\n';
}

inline MlpModel load_mlp_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::string line;
    if (!std::getline(in, line)) throw DataError("load_mlp_csv: empty file");
    std::stringstream hdr(line);
    std::string tag, taskname;
    int features = 0, hidden = 0, outputs = 0;
    char comma;
    std::getline(hdr, tag, ',');
    hdr >> features >> comma >> hidden >> comma >> outputs >> comma;
    std::getline(hdr, taskname);
    if (tag != "mlp") throw DataError("load_mlp_csv: bad header");
    MlpModel m;
    m.spec.hidden = hidden;
    m.spec.task = taskname == "binary" ? MlpTask::kBinary : MlpTask::kMulticlass;
    m.w1.resize(hidden, features);
    m.b1 = Eigen::VectorXd::Zero(hidden);
    m.w2.resize(outputs, hidden);
    m.b2 = Eigen::VectorXd::Zero(outputs);
    const Eigen::Index np = m.w1.size() + m.b1.size() + m.w2.size() + m.b2.size();
    Eigen::VectorXd p(np);
    for (Eigen::Index i = 0; i < np; ++i) {
        if (!std::getline(in, line)) throw DataError("load_mlp_csv: truncated weights");
        p(i) = std::stod(line);
    }
    set_mlp_params(m, p);
    m.mean = Eigen::VectorXd::Zero(features);
    m.scale = Eigen::VectorXd::Ones(features);
    Eigen::Index si = 0;
    while (std::getline(in, line) && si < features) {
        if (line.rfind("s,", 0) != 0) continue;
        std::stringstream row(line.substr(2));
        double mean_v = 0.0, scale_v = 1.0;
        row >> mean_v >> comma >> scale_v;
        m.mean(si) = mean_v;
        m.scale(si) = scale_v;
        ++si;
    }
    return m;
}

}  // namespace magnonrc
