#pragma once

#include "magnonrc/readout.hpp"
#include "magnonrc/sim.hpp"

namespace magnonrc {

enum class Encoding { kAmplitude, kPhase };

inline double encode(Encoding e, double input, double frequency, double t) {
    return e == Encoding::kAmplitude ? encode_amplitude(input, frequency, t)
                                     : encode_phase(input, frequency, t);
}

/// Auto-oscillation-ring configuration: an in-plane biased waveguide, one
/// input antenna, one output probe, an electronic feedback line and an
/// optional frozen amplification network acting on the previous interval's
/// output samples.
struct AorConfig {
    int grid_nx = 500;
    int grid_ny = 20;
    double cell_size = 2.5e-9;
    MaterialParams material{};
    double bias = 0.2;            // tesla, in-plane (y), perpendicular to propagation
    double frequency = 14.0e9;    // Hz
    double interval = 0.3e-9;     // s per input value
    double sample_period = 0.01e-9;
    double dt = 25.0e-15;
    int absorber_cells = 40;
    double absorber_alpha = 0.5;
    int antenna_x = 44;
    int antenna_width = 4;
    int probe_x = 88;
    int probe_width = 4;
    double base_amplitude = 1.0e-3;  // tesla
    double drive_cap = kDefaultDriveCap;
    double feedback_gain = 0.5;
    int feedback_delay_samples = 1;
    Encoding encoding = Encoding::kAmplitude;
    bool ann_enabled = false;
    uint64_t ann_seed = 2024;
    double relax_time = 1.0e-9;
    double relax_alpha = 0.1;
    bool zero_state_between_intervals = false;  // diagnostic hook

    int samples_per_interval() const {
        const double ratio = interval / sample_period;
        const int n = static_cast<int>(std::lround(ratio));
        if (std::abs(ratio - n) > 1.0e-9)
            throw ConfigError("AorConfig: sample_period must divide interval");
        return n + 1;  // inclusive endpoints
    }

    int steps_per_sample() const {
        const double ratio = sample_period / dt;
        const int n = static_cast<int>(std::lround(ratio));
        if (n < 1 || std::abs(ratio - n) > 1.0e-6)
            throw ConfigError("AorConfig: dt must divide sample_period");
        return n;
    }

    void validate() const {
        material.validate();
        if (feedback_gain < 0.0) throw ConfigError("AorConfig: feedback_gain must be >= 0");
        if (feedback_delay_samples < 1)
            throw ConfigError("AorConfig: feedback_delay_samples must be >= 1");
        samples_per_interval();
        steps_per_sample();
    }
};

/// Frozen 31 -> 10 -> 1 rectifier network with sigmoid output in (0,1).
/// Weights are drawn once from the seed and never updated.
struct AnnSpec {
    static constexpr int kInputs = 31;
    static constexpr int kHidden = 10;

    Eigen::MatrixXd w1;  // hidden x inputs
    Eigen::VectorXd b1;
    Eigen::RowVectorXd w2;  // 1 x hidden
    double b2 = 0.0;

    static AnnSpec make(uint64_t seed) {
        AnnSpec a;
        Rng rng(seed);
        const double bound1 = 1.0 / std::sqrt(static_cast<double>(kInputs));
        const double bound2 = 1.0 / std::sqrt(static_cast<double>(kHidden));
        a.w1.resize(kHidden, kInputs);
        for (int r = 0; r < kHidden; ++r)
            for (int c = 0; c < kInputs; ++c) a.w1(r, c) = rng.uniform(-bound1, bound1);
        a.b1.resize(kHidden);
        for (int r = 0; r < kHidden; ++r) a.b1(r) = rng.uniform(-bound1, bound1);
        a.w2.resize(kHidden);
        for (int c = 0; c < kHidden; ++c) a.w2(c) = rng.uniform(-bound2, bound2);
        a.b2 = rng.uniform(-bound2, bound2);
        return a;
    }

    int parameter_count() const {
        return kHidden * kInputs + kHidden + kHidden + 1;
    }

    Eigen::VectorXd params() const {
        Eigen::VectorXd p(parameter_count());
        Eigen::Index at = 0;
        for (int r = 0; r < kHidden; ++r)
            for (int c = 0; c < kInputs; ++c) p(at++) = w1(r, c);
        for (int r = 0; r < kHidden; ++r) p(at++) = b1(r);
        for (int c = 0; c < kHidden; ++c) p(at++) = w2(c);
        p(at++) = b2;
        return p;
    }

    static AnnSpec from_params(const Eigen::VectorXd& p) {
        AnnSpec a;
        a.w1.resize(kHidden, kInputs);
        a.b1.resize(kHidden);
        a.w2.resize(kHidden);
        Eigen::Index at = 0;
        for (int r = 0; r < kHidden; ++r)
            for (int c = 0; c < kInputs; ++c) a.w1(r, c) = p(at++);
        for (int r = 0; r < kHidden; ++r) a.b1(r) = p(at++);
        for (int c = 0; c < kHidden; ++c) a.w2(c) = p(at++);
        a.b2 = p(at++);
        return a;
    }
};

/// sigmoid(w2 . relu(W1 x + b1) + b2), strictly inside (0,1).
inline double ann_forward(const AnnSpec& ann, const std::vector<double>& prev_outputs) {
    if (static_cast<int>(prev_outputs.size()) != AnnSpec::kInputs)
        throw DataError("ann_forward: expected " + std::to_string(AnnSpec::kInputs) +
                        " inputs, got " + std::to_string(prev_outputs.size()));
    Eigen::Map<const Eigen::VectorXd> x(prev_outputs.data(), AnnSpec::kInputs);
    Eigen::VectorXd h = (ann.w1 * x + ann.b1).cwiseMax(0.0);
    const double o = ann.w2 * h + ann.b2;
    return 1.0 / (1.0 + std::exp(-o));
}

/// Per-interval record of the ring: synthesized pre-amplification input
/// samples, probe output samples, their difference and the applied gain.
struct IntervalRecord {
    std::vector<double> input_samples;
    std::vector<double> output_samples;
    std::vector<double> diff_samples;
    double ann_gain = 0.0;  // a_i; 0 when the network was not applied
};

struct ReservoirTrace {
    std::vector<IntervalRecord> intervals;
    int samples_per_interval = 31;
};

/// Runs the ring over the input sequence. Per interval: the encoded drive is
/// scaled by (1 + a_i) when the amplification network is enabled (i > 0),
/// the feedback line adds feedback_gain times the probe sample from
/// feedback_delay_samples earlier onto the drive multiplier (zero-order held
/// across each sample bin), and the probe is recorded on the sample grid.
inline ReservoirTrace run_aor(const std::vector<double>& inputs, const AorConfig& cfg,
                              const AnnSpec& ann) {
    cfg.validate();
    if (inputs.empty()) throw DataError("run_aor: empty input sequence");
    for (double v : inputs)
        if (v < 0.0 || v > 1.0) throw DataError("run_aor: input value outside [0, 1]");

    SimGrid grid(cfg.grid_nx, cfg.grid_ny, cfg.material, cfg.cell_size);
    grid.material = build_absorber(grid, cfg.absorber_cells, cfg.absorber_alpha);
    const Vec3 bias{0.0, cfg.bias, 0.0};
    Simulator sim(grid, bias);
    sim.set_drive_cap(cfg.drive_cap);

    AntennaSpec antenna;
    antenna.region = {cfg.antenna_x, cfg.antenna_x + cfg.antenna_width, 0, cfg.grid_ny};
    antenna.polarization = {0.0, 0.0, 1.0};  // out of plane, perpendicular to the bias
    antenna.base_amplitude = cfg.base_amplitude;
    antenna.frequency = cfg.frequency;
    sim.add_antenna(antenna);

    ProbeSpec probe;
    probe.region = {cfg.probe_x, cfg.probe_x + cfg.probe_width, 0, cfg.grid_ny};
    probe.component = 2;  // precessing out-of-plane component
    probe.validate(grid);
    if (probe.region.overlaps(antenna.region))
        throw ConfigError("run_aor: probe overlaps the antenna");

    sim.relax(cfg.relax_time, cfg.relax_alpha, cfg.dt);
    sim.set_time(0.0);
    const MagState relaxed = sim.state();

    const int per = cfg.samples_per_interval();     // 31
    const int bins = per - 1;                       // integration bins per interval
    const int steps_bin = cfg.steps_per_sample();

    ReservoirTrace trace;
    trace.samples_per_interval = per;
    std::vector<double> history;  // probe samples on the global sample grid
    history.push_back(sim.sample(probe));

    for (size_t i = 0; i < inputs.size(); ++i) {
        if (cfg.zero_state_between_intervals) {
            sim.state() = relaxed;
            history.assign(1, sim.sample(probe));
        }
        IntervalRecord rec;
        rec.input_samples.resize(per);
        for (int j = 0; j < per; ++j)
            rec.input_samples[j] = encode(cfg.encoding, inputs[i], cfg.frequency,
                                          j * cfg.sample_period);

        double gain = 1.0;
        if (cfg.ann_enabled && i > 0) {
            rec.ann_gain = ann_forward(ann, trace.intervals.back().output_samples);
            gain = 1.0 + rec.ann_gain;
        }

        const double t0 = sim.time();
        try {
            for (int j = 0; j < bins; ++j) {
                const int n_end = static_cast<int>(history.size());  // index of the upcoming sample
                const int fb_idx = n_end - cfg.feedback_delay_samples;
                const double fb = cfg.feedback_gain *
                                  (fb_idx >= 0 ? history[static_cast<size_t>(fb_idx)] : 0.0);
                Simulator::MultFn mult = [&](int, double t) {
                    return encode(cfg.encoding, inputs[i], cfg.frequency, t - t0) * gain + fb;
                };
                for (int s = 0; s < steps_bin; ++s) sim.step(cfg.dt, mult);
                history.push_back(sim.sample(probe));
            }
        } catch (const DriveSaturationError& e) {
            throw DriveSaturationError("run_aor: feedback runaway in interval " +
                                       std::to_string(i) + ": " + e.what());
        }

        rec.output_samples.resize(per);
        const size_t base = history.size() - static_cast<size_t>(per);
        for (int j = 0; j < per; ++j) rec.output_samples[j] = history[base + j];
        rec.diff_samples.resize(per);
        for (int j = 0; j < per; ++j)
            rec.diff_samples[j] = rec.input_samples[j] - rec.output_samples[j];
        trace.intervals.push_back(std::move(rec));
    }
    return trace;
}

/// Per-interval feature rows [input | output | diff], 93 columns.
inline FeatureMatrix trace_features(const ReservoirTrace& trace) {
    const int per = trace.samples_per_interval;
    FeatureMatrix out(static_cast<Eigen::Index>(trace.intervals.size()), 3 * per);
    for (size_t i = 0; i < trace.intervals.size(); ++i) {
        const IntervalRecord& r = trace.intervals[i];
        for (int j = 0; j < per; ++j) {
            out(static_cast<Eigen::Index>(i), j) = r.input_samples[j];
            out(static_cast<Eigen::Index>(i), per + j) = r.output_samples[j];
            out(static_cast<Eigen::Index>(i), 2 * per + j) = r.diff_samples[j];
        }
    }
    return out;
}

/// Trace CSV: (interval, sample, t_ns, input, output, diff, ann_gain).
inline void save_trace_csv(const ReservoirTrace& trace, double sample_period,
                           const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << "interval,sample,t_ns,input,output,diff,ann_gain\n";
    out << std::setprecision(17);
    const int per = trace.samples_per_interval;
    for (size_t i = 0; i < trace.intervals.size(); ++i) {
        const IntervalRecord& r = trace.intervals[i];
        for (int j = 0; j < per; ++j) {
            const double t_ns = (static_cast<double>(i) * (per - 1) + j) * sample_period * 1e9;
            out << i << ',' << j << ',' << t_ns << ',' << r.input_samples[j] << ','
                << r.output_samples[j] << ',' << r.diff_samples[j] << ',' << r.ann_gain << '\n';
        }
    }
}

}  // namespace magnonrc
