#pragma once

#include "magnonrc/grid.hpp"

namespace magnonrc {

/// Rectangular drive transducer. The multiplier s(t) scales
/// base_amplitude * polarization, added uniformly over the region.
struct AntennaSpec {
    CellRect region;
    Vec3 polarization{0.0, 0.0, 1.0};
    double base_amplitude = 1.0e-3;  // tesla
    double frequency = 14.0e9;       // Hz

    void validate(const SimGrid& grid, const Vec3& static_direction) const {
        if (!grid.rect_in_bounds(region))
            throw ConfigError("AntennaSpec: region empty or outside grid");
        if (base_amplitude <= 0.0) throw ConfigError("AntennaSpec: base_amplitude must be > 0");
        if (frequency <= 0.0) throw ConfigError("AntennaSpec: frequency must be > 0");
        const double pn = polarization.norm();
        if (pn == 0.0) throw ConfigError("AntennaSpec: zero polarization");
        const double cosang = std::abs(polarization.dot(static_direction)) /
                              (pn * static_direction.norm());
        if (cosang > 1.0e-9)
            throw ConfigError("AntennaSpec: polarization must be perpendicular to the static magnetization");
    }
};

/// Rectangular readout region; samples the mean of one magnetization component.
struct ProbeSpec {
    CellRect region;
    int component = 2;  // 0:x 1:y 2:z

    void validate(const SimGrid& grid) const {
        if (!grid.rect_in_bounds(region))
            throw ConfigError("ProbeSpec: region empty or outside grid");
        if (component < 0 || component > 2) throw ConfigError("ProbeSpec: bad component index");
    }
};

/// Dimensionless drive waveform sampled on the readout grid, with the
/// saturation cap it was produced under.
struct DriveSignal {
    std::vector<double> samples;
    double cap = kDefaultDriveCap;
};

/// Amplitude encoding S = I * sin(2*pi*f*t).
inline double encode_amplitude(double input, double frequency, double t) {
    if (input < 0.0 || input > 1.0)
        throw DataError("encode_amplitude: input value outside [0, 1]");
    return input * std::sin(2.0 * kPi * frequency * t);
}

/// Phase encoding S = sin(2*pi*f*t + pi*I).
inline double encode_phase(double input, double frequency, double t) {
    if (input < 0.0 || input > 1.0)
        throw DataError("encode_phase: input value outside [0, 1]");
    return std::sin(2.0 * kPi * frequency * t + kPi * input);
}

/// Adds s * base_amplitude * polarization over the antenna region.
inline void apply_drive(const AntennaSpec& antenna, double s, const SimGrid& grid,
                        FieldGrid& out, double s_max = kDefaultDriveCap) {
    if (std::abs(s) > s_max)
        throw DriveSaturationError("apply_drive: multiplier " + std::to_string(s) +
                                   " exceeds cap " + std::to_string(s_max));
    if (out.size() != grid.cell_count())
        throw ConfigError("apply_drive: field dimensions do not match grid");
    const Vec3 dh = antenna.polarization * (s * antenna.base_amplitude);
    for (int y = antenna.region.y0; y < antenna.region.y1; ++y)
        for (int x = antenna.region.x0; x < antenna.region.x1; ++x)
            out.add(grid.idx(x, y), dh);
}

/// Mean of the chosen component over active cells of the probe region.
inline double sample_probe(const MagState& state, const SimGrid& grid, const ProbeSpec& probe) {
    const std::vector<double>* comp = nullptr;
    switch (probe.component) {
        case 0: comp = &state.mx; break;
        case 1: comp = &state.my; break;
        case 2: comp = &state.mz; break;
        default: throw ConfigError("sample_probe: bad component index");
    }
    double sum = 0.0;
    int count = 0;
    for (int y = probe.region.y0; y < probe.region.y1; ++y)
        for (int x = probe.region.x0; x < probe.region.x1; ++x) {
            const int i = grid.idx(x, y);
            if (grid.material.ms[i] <= 0.0) continue;
            sum += (*comp)[i];
            ++count;
        }
    if (count == 0) throw ConfigError("sample_probe: probe region is entirely void");
    return sum / count;
}

/// Probe trace rows (interval_index, sample_index, t_ns, value).
inline void write_probe_trace_csv(const std::string& path,
                                  const std::vector<std::vector<double>>& per_interval,
                                  double sample_period_s) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << "interval_index,sample_index,t_ns,value\n";
    out << std::setprecision(17);
    const int per = per_interval.empty() ? 0 : static_cast<int>(per_interval.front().size());
    for (size_t i = 0; i < per_interval.size(); ++i)
        for (int j = 0; j < per; ++j) {
            const double t_ns = (static_cast<double>(i) * (per - 1) + j) * sample_period_s * 1e9;
            out << i << ',' << j << ',' << t_ns << ',' << per_interval[i][j] << '\n';
        }
}

}  // namespace magnonrc
