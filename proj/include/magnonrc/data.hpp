#pragma once

#include <array>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "magnonrc/readout.hpp"

namespace magnonrc {

/// Tabular dataset with features scaled to a maximum of 1 and labels
/// contiguous from 0.
struct Dataset {
    FeatureMatrix features;
    std::vector<int> labels;
    int n_classes = 2;
    std::string source;
};

/// Per-sample ordered interval inputs (pairs for the 2-channel device,
/// single values with the second slot unused for series data).
struct SequentialDataset {
    std::vector<std::vector<std::array<double, 2>>> samples;
    std::vector<int> labels;
    int channels = 2;
    int n_classes = 2;
    std::string source;
};

namespace csv {

inline std::vector<std::string> split_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cell;
    std::stringstream ss(line);
    while (std::getline(ss, cell, ',')) {
        // trim spaces and CR
        size_t a = cell.find_first_not_of(" \t\r");
        size_t b = cell.find_last_not_of(" \t\r");
        out.push_back(a == std::string::npos ? "" : cell.substr(a, b - a + 1));
    }
    return out;
}

inline std::vector<std::vector<std::string>> read_rows(const std::string& path,
                                                       bool has_header) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    std::vector<std::vector<std::string>> rows;
    std::string line;
    bool first = true;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        if (first && has_header) {
            first = false;
            continue;
        }
        first = false;
        rows.push_back(split_line(line));
    }
    return rows;
}

inline double to_double(const std::string& s, const char* what) {
    try {
        size_t used = 0;
        const double v = std::stod(s, &used);
        if (used == 0) throw std::invalid_argument(s);
        return v;
    } catch (const std::exception&) {
        throw DataError(std::string(what) + ": cannot parse number '" + s + "'");
    }
}

}  // namespace csv

/// Daily closes -> percentage moves rescaled to [0,1]; target is 1 when the
/// next day's move is positive. The last move is dropped (no next-day
/// target). Degenerate min-max ranges map every value to 0.5.
inline SequentialDataset load_stock(const std::string& path, bool has_header = true) {
    const auto rows = csv::read_rows(path, has_header);
    if (rows.size() < 3) throw DataError("load_stock: need at least 3 rows");
    std::vector<std::string> dates;
    std::vector<double> closes;
    for (const auto& r : rows) {
        if (r.size() < 2) throw DataError("load_stock: expected date,close columns");
        dates.push_back(r[0]);
        const double c = csv::to_double(r[1], "load_stock");
        if (c <= 0.0) throw DataError("load_stock: non-positive close " + r[1]);
        closes.push_back(c);
    }
    for (size_t i = 1; i < dates.size(); ++i)
        if (!(dates[i - 1] < dates[i]))
            throw DataError("load_stock: dates not strictly increasing at row " +
                            std::to_string(i));

    std::vector<double> pct(closes.size() - 1);
    for (size_t i = 1; i < closes.size(); ++i)
        pct[i - 1] = (closes[i] - closes[i - 1]) / closes[i - 1];
    const auto [mn_it, mx_it] = std::minmax_element(pct.begin(), pct.end());
    const double mn = *mn_it, mx = *mx_it;

    SequentialDataset out;
    out.channels = 1;
    out.n_classes = 2;
    out.source = "stock:" + path;
    // moves 0..n-2 get targets from the following move
    for (size_t i = 0; i + 1 < pct.size(); ++i) {
        const double scaled = (mx > mn) ? (pct[i] - mn) / (mx - mn) : 0.5;
        out.samples.push_back({{scaled, 0.0}});
        out.labels.push_back(pct[i + 1] > 0.0 ? 1 : 0);
    }
    return out;
}

namespace detail {
inline int iris_feature_index(const std::string& name) {
    if (name == "sepal_length") return 0;
    if (name == "sepal_width") return 1;
    if (name == "petal_length") return 2;
    if (name == "petal_width") return 3;
    throw DataError("load_iris: unknown feature name '" + name + "'");
}
inline bool iris_is_width(const std::string& name) {
    return name.find("width") != std::string::npos;
}
}  // namespace detail

/// Standard 150x4 table with species labels. Each feature is scaled by its
/// full-dataset maximum, width features are inverted as 1 - w, then the
/// requested class subset and feature pair are selected.
inline Dataset load_iris(const std::string& path, const std::vector<std::string>& class_subset,
                         const std::pair<std::string, std::string>& feature_pair =
                             {"petal_length", "petal_width"},
                         bool has_header = true) {
    const auto rows = csv::read_rows(path, has_header);
    if (rows.empty()) throw DataError("load_iris: empty table");
    const int fa = detail::iris_feature_index(feature_pair.first);
    const int fb = detail::iris_feature_index(feature_pair.second);

    std::array<double, 4> fmax{0.0, 0.0, 0.0, 0.0};
    std::vector<std::array<double, 4>> feats;
    std::vector<std::string> species;
    for (const auto& r : rows) {
        if (r.size() < 5) throw DataError("load_iris: expected 5 columns");
        std::array<double, 4> f{};
        for (int c = 0; c < 4; ++c) {
            f[c] = csv::to_double(r[c], "load_iris");
            fmax[c] = std::max(fmax[c], f[c]);
        }
        feats.push_back(f);
        std::string name = r[4];
        for (char& ch : name) ch = static_cast<char>(std::tolower(ch));
        // accept both bare names and the Iris-<name> form
        const size_t dash = name.rfind('-');
        if (dash != std::string::npos) name = name.substr(dash + 1);
        species.push_back(name);
    }

    std::map<std::string, int> label_of;
    for (size_t c = 0; c < class_subset.size(); ++c) {
        std::string name = class_subset[c];
        for (char& ch : name) ch = static_cast<char>(std::tolower(ch));
        label_of[name] = static_cast<int>(c);
    }
    for (const auto& [name, unused] : label_of) {
        (void)unused;
        if (std::find(species.begin(), species.end(), name) == species.end())
            throw DataError("load_iris: class '" + name + "' not present in table");
    }

    Dataset out;
    out.n_classes = static_cast<int>(class_subset.size());
    out.source = "iris:" + path;
    std::vector<std::array<double, 2>> sel;
    std::vector<int> labels;
    for (size_t r = 0; r < feats.size(); ++r) {
        auto it = label_of.find(species[r]);
        if (it == label_of.end()) continue;
        double a = feats[r][fa] / fmax[fa];
        double b = feats[r][fb] / fmax[fb];
        if (detail::iris_is_width(feature_pair.first)) a = 1.0 - a;
        if (detail::iris_is_width(feature_pair.second)) b = 1.0 - b;
        sel.push_back({a, b});
        labels.push_back(it->second);
    }
    out.features.resize(static_cast<Eigen::Index>(sel.size()), 2);
    for (size_t r = 0; r < sel.size(); ++r) {
        out.features(static_cast<Eigen::Index>(r), 0) = sel[r][0];
        out.features(static_cast<Eigen::Index>(r), 1) = sel[r][1];
    }
    out.labels = std::move(labels);
    return out;
}

/// 24 attribute columns + label. The 12 columns with more than two distinct
/// values are the numeric features; anything else is a loud error so the
/// column-selection rule can never drift silently. Each selected column is
/// scaled by its maximum and the 12 values are stacked into 6 ordered pairs.
inline SequentialDataset load_statlog(const std::string& path, bool has_header = false) {
    const auto rows = csv::read_rows(path, has_header);
    if (rows.empty()) throw DataError("load_statlog: empty table");
    const size_t ncols = rows.front().size();
    if (ncols != 25)
        throw DataError("load_statlog: expected 25 columns, found " + std::to_string(ncols));
    std::vector<std::vector<double>> cols(24);
    std::vector<int> raw_labels;
    for (const auto& r : rows) {
        if (r.size() != ncols) throw DataError("load_statlog: ragged row");
        for (int c = 0; c < 24; ++c) cols[c].push_back(csv::to_double(r[c], "load_statlog"));
        raw_labels.push_back(static_cast<int>(csv::to_double(r[24], "load_statlog")));
    }

    std::vector<int> numeric_cols;
    for (int c = 0; c < 24; ++c) {
        std::set<double> distinct(cols[c].begin(), cols[c].end());
        if (distinct.size() > 2) numeric_cols.push_back(c);
    }
    if (numeric_cols.size() != 12)
        throw DataError("load_statlog: numeric-column rule selected " +
                        std::to_string(numeric_cols.size()) + " columns, expected 12");

    // labels arrive as {0,1} or the original {1,2}; map to 0 = good risk
    const auto [lmin, lmax] = std::minmax_element(raw_labels.begin(), raw_labels.end());
    const int offset = (*lmin == 1 && *lmax == 2) ? 1 : 0;

    SequentialDataset out;
    out.channels = 2;
    out.n_classes = 2;
    out.source = "statlog:" + path;
    std::vector<double> colmax(12);
    for (int k = 0; k < 12; ++k) {
        const auto& col = cols[numeric_cols[k]];
        colmax[k] = *std::max_element(col.begin(), col.end());
        if (colmax[k] <= 0.0)
            throw DataError("load_statlog: column max must be positive");
        if (*std::min_element(col.begin(), col.end()) < 0.0)
            throw DataError("load_statlog: negative feature value");
    }
    for (size_t r = 0; r < raw_labels.size(); ++r) {
        std::vector<std::array<double, 2>> seq;
        for (int k = 0; k < 12; k += 2) {
            const double a = cols[numeric_cols[k]][r] / colmax[k];
            const double b = cols[numeric_cols[k + 1]][r] / colmax[k + 1];
            seq.push_back({a, b});
        }
        out.samples.push_back(std::move(seq));
        out.labels.push_back(raw_labels[r] - offset);
    }
    return out;
}

/// Synthetic nearest-center dataset: 3 class centers drawn uniformly in
/// [0,1]^4 (redrawn until all pairs are at least 0.3 apart), points drawn
/// uniformly and labeled by the nearest center, ties to the lowest index.
inline Dataset gen_dimred(uint64_t seed, int n_samples, int n_classes = 3, int n_features = 4,
                          double min_center_dist = 0.3) {
    if (n_samples < n_classes) throw ConfigError("gen_dimred: need n_samples >= n_classes");
    Rng rng(seed);
    std::vector<Eigen::VectorXd> centers;
    for (int attempt = 0; attempt < 10000; ++attempt) {
        centers.clear();
        for (int c = 0; c < n_classes; ++c) {
            Eigen::VectorXd v(n_features);
            for (int f = 0; f < n_features; ++f) v(f) = rng.uniform();
            centers.push_back(v);
        }
        bool ok = true;
        for (int a = 0; a < n_classes && ok; ++a)
            for (int b = a + 1; b < n_classes; ++b)
                if ((centers[a] - centers[b]).norm() < min_center_dist) {
                    ok = false;
                    break;
                }
        if (ok) break;
        centers.clear();
    }
    if (centers.empty()) throw ConfigError("gen_dimred: failed to place separated centers");

    Dataset out;
    out.n_classes = n_classes;
    out.source = "dimred:seed=" + std::to_string(seed);
    out.features.resize(n_samples, n_features);
    out.labels.resize(static_cast<size_t>(n_samples));
    for (int s = 0; s < n_samples; ++s) {
        Eigen::VectorXd v(n_features);
        for (int f = 0; f < n_features; ++f) v(f) = rng.uniform();
        out.features.row(s) = v.transpose();
        int best = 0;
        double best_d = (v - centers[0]).squaredNorm();
        for (int c = 1; c < n_classes; ++c) {
            const double d = (v - centers[c]).squaredNorm();
            if (d < best_d) {
                best_d = d;
                best = c;
            }
        }
        out.labels[static_cast<size_t>(s)] = best;
    }
    return out;
}

/// Dumps a dataset with a provenance header line.
inline void save_dataset_csv(const Dataset& d, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << "# source=" << d.source << " classes=" << d.n_classes << '\n';
    out << std::setprecision(17);
    for (Eigen::Index r = 0; r < d.features.rows(); ++r) {
        for (Eigen::Index c = 0; c < d.features.cols(); ++c) out << d.features(r, c) << ',';
        out << d.labels[static_cast<size_t>(r)] << '\n';
    }
}

}  // namespace magnonrc
