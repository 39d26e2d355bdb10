#pragma once

#include <array>

#include "magnonrc/sim.hpp"

namespace magnonrc {

/// Parallel-input scattering model: an out-of-plane biased waveguide whose
/// input end is split into two channels by a void slit, a randomized
/// reduced-Ms scattering region in the middle, and 1-3 output probes tiling
/// the output strip.
struct PsmConfig {
    int grid_nx = 500;
    int grid_ny = 20;
    double cell_size = 2.5e-9;
    MaterialParams material{};
    double bias = 0.25;          // tesla, out of plane
    double frequency = 6.2e9;    // Hz
    double interval = 0.3e-9;
    double sample_period = 0.01e-9;
    double dt = 25.0e-15;
    int absorber_cells = 40;
    double absorber_alpha = 0.5;
    int antenna_x = 44;
    int antenna_width = 4;
    double base_amplitude = 1.0e-3;
    double drive_cap = kDefaultDriveCap;
    int probe_x = 420;
    int probe_width = 4;
    int output_channels = 1;
    double slit_length_frac = 0.2;  // of the waveguide length, from the input end
    int slit_thickness = 2;         // cells, centered on the midline
    int spot_count = 20;
    double spot_radius = 12.5e-9;   // m
    double ms_reduction = 0.2;
    double spot_region_lo = 0.2;    // fraction of length
    double spot_region_hi = 0.8;
    int tail_intervals = 2;         // ring-down intervals appended after the inputs
    double relax_time = 1.0e-9;
    double relax_alpha = 0.1;
    uint64_t seed = 1;

    int samples_per_interval() const {
        const double ratio = interval / sample_period;
        const int n = static_cast<int>(std::lround(ratio));
        if (std::abs(ratio - n) > 1.0e-9)
            throw ConfigError("PsmConfig: sample_period must divide interval");
        return n + 1;
    }

    int steps_per_sample() const {
        const double ratio = sample_period / dt;
        const int n = static_cast<int>(std::lround(ratio));
        if (n < 1 || std::abs(ratio - n) > 1.0e-6)
            throw ConfigError("PsmConfig: dt must divide sample_period");
        return n;
    }

    void validate() const {
        material.validate();
        if (output_channels < 1 || output_channels > 3)
            throw ConfigError("PsmConfig: output_channels must be 1, 2 or 3");
        if (ms_reduction <= 0.0 || ms_reduction > 0.5)
            throw ConfigError("PsmConfig: ms_reduction must be in (0, 0.5]");
        if (tail_intervals < 0) throw ConfigError("PsmConfig: tail_intervals must be >= 0");
        samples_per_interval();
        steps_per_sample();
    }
};

struct Spot {
    int x = 0;
    int y = 0;
    double radius_cells = 0.0;
    double ms_reduction = 0.0;
};

/// Seeded random spot layout; bit-identical regeneration from the seed.
struct ScatterSpots {
    std::vector<Spot> spots;
    uint64_t seed = 0;
};

struct PsmSystem {
    PsmConfig cfg;
    SimGrid grid;
    Vec3 bias;
    std::vector<AntennaSpec> antennas;  // exactly 2, symmetric about the midline
    std::vector<ProbeSpec> probes;      // output_channels probes tiling the strip
    ScatterSpots spots;
    CellRect slit;
};

/// Constructs the slit, the two input antennas, the seeded spot layout
/// (applied as Ms reductions) and the output probe partition.
inline PsmSystem build_psm(const PsmConfig& cfg) {
    cfg.validate();
    PsmSystem sys;
    sys.cfg = cfg;
    sys.grid = SimGrid(cfg.grid_nx, cfg.grid_ny, cfg.material, cfg.cell_size);
    sys.bias = {0.0, 0.0, cfg.bias};

    // void slit centered on the midline over the first part of the guide
    const int slit_len = static_cast<int>(std::lround(cfg.slit_length_frac * cfg.grid_nx));
    const int y_mid_lo = cfg.grid_ny / 2 - cfg.slit_thickness / 2;
    sys.slit = {0, slit_len, y_mid_lo, y_mid_lo + cfg.slit_thickness};
    if (sys.slit.y0 <= 0 || sys.slit.y1 >= cfg.grid_ny)
        throw ConfigError("build_psm: slit leaves no input channels");
    sys.grid.carve_void(sys.slit);

    // seeded scattering spots, rejection-sampled inside the middle region
    const int x0 = static_cast<int>(std::lround(cfg.spot_region_lo * cfg.grid_nx));
    const int x1 = static_cast<int>(std::lround(cfg.spot_region_hi * cfg.grid_nx));
    const double rc = cfg.spot_radius / cfg.cell_size;
    if (cfg.spot_count > 0 &&
        (x0 + rc > x1 - 1 - rc || rc > cfg.grid_ny - 1 - rc))
        throw ConfigError("build_psm: spots do not fit the scattering region");
    sys.spots.seed = cfg.seed;
    Rng rng(cfg.seed);
    int guard = 0;
    while (static_cast<int>(sys.spots.spots.size()) < cfg.spot_count) {
        if (++guard > 100000) throw ConfigError("build_psm: spot rejection sampling stalled");
        const int sx = x0 + static_cast<int>(rng.integer(static_cast<uint64_t>(x1 - x0)));
        const int sy = static_cast<int>(rng.integer(static_cast<uint64_t>(cfg.grid_ny)));
        if (sx - rc < x0 || sx + rc > x1 - 1 || sy - rc < 0 || sy + rc > cfg.grid_ny - 1)
            continue;
        sys.spots.spots.push_back({sx, sy, rc, cfg.ms_reduction});
    }
    const double ms_spot = cfg.material.ms_base * (1.0 - cfg.ms_reduction);
    for (const Spot& s : sys.spots.spots)
        for (int y = 0; y < cfg.grid_ny; ++y)
            for (int x = x0; x < x1; ++x) {
                const double dx = x - s.x, dy = y - s.y;
                if (dx * dx + dy * dy <= s.radius_cells * s.radius_cells)
                    sys.grid.material.ms[sys.grid.idx(x, y)] = ms_spot;
            }

    sys.grid.material.alpha =
        build_absorber(sys.grid, cfg.absorber_cells, cfg.absorber_alpha).alpha;

    // input antennas fill each channel's height
    for (int side = 0; side < 2; ++side) {
        AntennaSpec a;
        a.region = side == 0
                       ? CellRect{cfg.antenna_x, cfg.antenna_x + cfg.antenna_width, 0, sys.slit.y0}
                       : CellRect{cfg.antenna_x, cfg.antenna_x + cfg.antenna_width, sys.slit.y1,
                                  cfg.grid_ny};
        a.polarization = {1.0, 0.0, 0.0};  // in plane, perpendicular to the bias
        a.base_amplitude = cfg.base_amplitude;
        a.frequency = cfg.frequency;
        a.validate(sys.grid, sys.bias);
        sys.antennas.push_back(a);
    }

    // output probes tile the strip without overlap
    std::vector<int> bounds{0};
    for (int c = 1; c < cfg.output_channels; ++c)
        bounds.push_back((c * cfg.grid_ny + cfg.output_channels / 2) / cfg.output_channels);
    bounds.push_back(cfg.grid_ny);
    for (int c = 0; c < cfg.output_channels; ++c) {
        ProbeSpec p;
        p.region = {cfg.probe_x, cfg.probe_x + cfg.probe_width, bounds[c], bounds[c + 1]};
        p.component = 0;  // in-plane precessing component under out-of-plane bias
        p.validate(sys.grid);
        for (const AntennaSpec& a : sys.antennas)
            if (p.region.overlaps(a.region))
                throw ConfigError("build_psm: probe overlaps an antenna");
        sys.probes.push_back(p);
    }
    return sys;
}

/// Convenience form mirroring the published knobs.
inline PsmSystem build_psm(uint64_t seed, int n_output_channels, int spot_count,
                           double spot_radius, double ms_reduction) {
    PsmConfig cfg;
    cfg.seed = seed;
    cfg.output_channels = n_output_channels;
    cfg.spot_count = spot_count;
    cfg.spot_radius = spot_radius;
    cfg.ms_reduction = ms_reduction;
    return build_psm(cfg);
}

/// Per output channel, per interval (inputs plus ring-down tail), the probe
/// samples on the 0.01 ns grid.
struct PsmTrace {
    std::vector<std::vector<std::vector<double>>> channels;  // [channel][interval][sample]
    int samples_per_interval = 31;

    int n_channels() const { return static_cast<int>(channels.size()); }
    int n_intervals() const { return channels.empty() ? 0 : static_cast<int>(channels[0].size()); }
};

/// Drives channel 1 with I1 and channel 2 with I2 per pair, amplitude
/// encoded, one interval per pair, then lets the film ring down for
/// tail_intervals while still sampling.
inline PsmTrace run_psm(const std::vector<std::array<double, 2>>& feature_pairs,
                        const PsmSystem& sys) {
    const PsmConfig& cfg = sys.cfg;
    cfg.validate();
    if (feature_pairs.empty()) throw DataError("run_psm: empty input sequence");
    for (const auto& p : feature_pairs)
        for (double v : p)
            if (v < 0.0 || v > 1.0) throw DataError("run_psm: input value outside [0, 1]");

    Simulator sim(sys.grid, sys.bias);
    sim.set_drive_cap(cfg.drive_cap);
    for (const AntennaSpec& a : sys.antennas) sim.add_antenna(a);
    sim.relax(cfg.relax_time, cfg.relax_alpha, cfg.dt);
    sim.set_time(0.0);

    const int per = cfg.samples_per_interval();
    const int bins = per - 1;
    const int steps_bin = cfg.steps_per_sample();
    const int n_int = static_cast<int>(feature_pairs.size()) + cfg.tail_intervals;
    const int nch = static_cast<int>(sys.probes.size());

    std::vector<std::vector<double>> history(nch);
    for (int c = 0; c < nch; ++c) history[c].push_back(sim.sample(sys.probes[c]));

    for (int i = 0; i < n_int; ++i) {
        const bool driven = i < static_cast<int>(feature_pairs.size());
        const double t0 = sim.time();
        for (int j = 0; j < bins; ++j) {
            if (driven) {
                const std::array<double, 2>& pair = feature_pairs[static_cast<size_t>(i)];
                Simulator::MultFn mult = [&](int antenna, double t) {
                    return encode_amplitude(pair[static_cast<size_t>(antenna)], cfg.frequency,
                                            t - t0);
                };
                for (int s = 0; s < steps_bin; ++s) sim.step(cfg.dt, mult);
            } else {
                for (int s = 0; s < steps_bin; ++s) sim.step(cfg.dt);
            }
            for (int c = 0; c < nch; ++c) history[c].push_back(sim.sample(sys.probes[c]));
        }
    }

    PsmTrace trace;
    trace.samples_per_interval = per;
    trace.channels.assign(static_cast<size_t>(nch), {});
    for (int c = 0; c < nch; ++c) {
        for (int i = 0; i < n_int; ++i) {
            std::vector<double> iv(static_cast<size_t>(per));
            for (int j = 0; j < per; ++j)
                iv[static_cast<size_t>(j)] = history[c][static_cast<size_t>(i * bins + j)];
            trace.channels[static_cast<size_t>(c)].push_back(std::move(iv));
        }
    }
    return trace;
}

/// Flat feature vector, channel-major then interval then sample:
/// index (c * n_intervals + i) * 31 + j.
inline Eigen::VectorXd psm_features(const PsmTrace& trace) {
    const int per = trace.samples_per_interval;
    const int nch = trace.n_channels();
    const int nint = trace.n_intervals();
    Eigen::VectorXd out(static_cast<Eigen::Index>(nch) * nint * per);
    for (int c = 0; c < nch; ++c)
        for (int i = 0; i < nint; ++i)
            for (int j = 0; j < per; ++j)
                out((static_cast<Eigen::Index>(c) * nint + i) * per + j) =
                    trace.channels[static_cast<size_t>(c)][static_cast<size_t>(i)]
                                  [static_cast<size_t>(j)];
    return out;
}

namespace detail {
inline double rms(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    double s = 0.0;
    for (double x : v) s += x * x;
    return std::sqrt(s / static_cast<double>(v.size()));
}
}  // namespace detail

/// Two-layer converging cascade: two single-output PSMs each consume one
/// feature pair; their output envelopes, rescaled so the trace RMS matches
/// the corresponding input drive RMS, feed the downstream PSM one interval
/// at a time.
struct CascadeSpec {
    std::vector<PsmConfig> layer1;  // size 2, output_channels must be 1
    PsmConfig layer2;

    void validate() const {
        if (layer1.size() != 2)
            throw ConfigError("CascadeSpec: expected two first-layer devices");
        for (const PsmConfig& c : layer1)
            if (c.output_channels != 1)
                throw ConfigError(
                    "CascadeSpec: fan mismatch, first-layer devices must have one output channel");
    }
};

/// Per-interval drive envelope of a single-channel trace, rescaled so the
/// whole-trace RMS matches the drive RMS, clamped into [0,1].
inline std::vector<double> cascade_envelope(const PsmTrace& trace,
                                            const std::vector<double>& drive_values) {
    if (trace.n_channels() != 1)
        throw ConfigError("cascade_envelope: expected a single-channel trace");
    double drive_ms = 0.0;
    for (double v : drive_values) drive_ms += v * v;
    const double drive_rms =
        drive_values.empty() ? 0.0 : std::sqrt(drive_ms / drive_values.size());
    std::vector<double> all;
    for (const auto& iv : trace.channels[0]) all.insert(all.end(), iv.begin(), iv.end());
    const double trace_rms = detail::rms(all);
    const double scale = trace_rms > 0.0 ? drive_rms / trace_rms : 0.0;
    std::vector<double> env;
    env.reserve(trace.channels[0].size());
    for (const auto& iv : trace.channels[0])
        env.push_back(std::clamp(scale * detail::rms(iv), 0.0, 1.0));
    return env;
}

/// Runs one 4-feature sample through the converging cascade and returns the
/// final single-channel trace.
inline PsmTrace cascade_psm(const Eigen::VectorXd& features, const CascadeSpec& spec) {
    spec.validate();
    if (features.size() != 4)
        throw ConfigError("cascade_psm: expected 4 features, got " +
                          std::to_string(features.size()));
    std::vector<std::vector<double>> envs;
    for (int d = 0; d < 2; ++d) {
        const PsmSystem sys = build_psm(spec.layer1[static_cast<size_t>(d)]);
        const std::array<double, 2> pair{features(2 * d), features(2 * d + 1)};
        const PsmTrace t = run_psm({pair}, sys);
        envs.push_back(cascade_envelope(t, {pair[0], pair[1]}));
    }
    if (envs[0].size() != envs[1].size())
        throw ConfigError("cascade_psm: first-layer trace lengths disagree");
    std::vector<std::array<double, 2>> next;
    for (size_t i = 0; i < envs[0].size(); ++i) next.push_back({envs[0][i], envs[1][i]});
    const PsmSystem sys2 = build_psm(spec.layer2);
    return run_psm(next, sys2);
}

/// Trace CSV: (sample_id, channel, interval, sample, t_ns, value).
inline void save_psm_trace_csv(const PsmTrace& trace, double sample_period, int sample_id,
                               const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << "sample_id,channel,interval,sample,t_ns,value\n";
    out << std::setprecision(17);
    const int per = trace.samples_per_interval;
    for (int c = 0; c < trace.n_channels(); ++c)
        for (int i = 0; i < trace.n_intervals(); ++i)
            for (int j = 0; j < per; ++j) {
                const double t_ns =
                    (static_cast<double>(i) * (per - 1) + j) * sample_period * 1e9;
                out << sample_id << ',' << c << ',' << i << ',' << j << ',' << t_ns << ','
                    << trace.channels[static_cast<size_t>(c)][static_cast<size_t>(i)]
                                     [static_cast<size_t>(j)]
                    << '\n';
            }
}

/// Spot layout CSV: (x_cell, y_cell, radius_cells, ms_reduction).
inline void save_spot_layout_csv(const ScatterSpots& spots, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << "x_cell,y_cell,radius_cells,ms_reduction\n";
    out << std::setprecision(17);
    for (const Spot& s : spots.spots)
        out << s.x << ',' << s.y << ',' << s.radius_cells << ',' << s.ms_reduction << '\n';
}

}  // namespace magnonrc
