#pragma once

#include <algorithm>
#include <fstream>
#include <iomanip>

#include "magnonrc/common.hpp"

namespace magnonrc {

/// Global material constants of the simulated film.
struct MaterialParams {
    double ms_base = 140.0e3;  // saturation magnetization, A/m
    double a_ex = 3.5e-12;     // exchange constant, J/m
    double alpha = 2.0e-4;     // Gilbert damping
    double gamma = kGamma;     // rad s^-1 T^-1

    void validate() const {
        if (ms_base <= 0.0) throw ConfigError("MaterialParams: ms_base must be > 0");
        if (a_ex <= 0.0) throw ConfigError("MaterialParams: a_ex must be > 0");
        if (alpha <= 0.0 || alpha >= 1.0) throw ConfigError("MaterialParams: alpha must be in (0, 1)");
        if (gamma <= 0.0) throw ConfigError("MaterialParams: gamma must be > 0");
    }
};

/// Per-cell saturation magnetization and damping. ms == 0 marks void cells
/// (removed geometry); those cells never take part in the dynamics.
struct MaterialMap {
    std::vector<double> ms;
    std::vector<double> alpha;

    void resize_uniform(int n, const MaterialParams& p) {
        ms.assign(static_cast<size_t>(n), p.ms_base);
        alpha.assign(static_cast<size_t>(n), p.alpha);
    }
};

/// Half-open cell-index rectangle [x0, x1) x [y0, y1).
struct CellRect {
    int x0 = 0, x1 = 0, y0 = 0, y1 = 0;

    int count() const { return std::max(0, x1 - x0) * std::max(0, y1 - y0); }
    bool empty() const { return count() == 0; }
    bool contains(int x, int y) const { return x >= x0 && x < x1 && y >= y0 && y < y1; }
    bool overlaps(const CellRect& o) const {
        return x0 < o.x1 && o.x0 < x1 && y0 < o.y1 && o.y0 < y1;
    }
};

/// Single-cell-thick finite-difference grid (nz = 1), x-major cell order.
struct SimGrid {
    int nx = 0;
    int ny = 0;
    int nz = 1;
    double cell_size = 2.5e-9;  // m
    MaterialParams params;
    MaterialMap material;

    SimGrid() = default;
    SimGrid(int nx_in, int ny_in, MaterialParams p = {}, double cell = 2.5e-9)
        : nx(nx_in), ny(ny_in), cell_size(cell), params(p) {
        params.validate();
        if (nx <= 0 || ny <= 0) throw ConfigError("SimGrid: cell counts must be positive");
        if (cell_size <= 0.0) throw ConfigError("SimGrid: cell_size must be positive");
        material.resize_uniform(nx * ny, params);
    }

    int cell_count() const { return nx * ny; }
    int idx(int x, int y) const { return y * nx + x; }
    bool in_bounds(int x, int y) const { return x >= 0 && x < nx && y >= 0 && y < ny; }

    bool rect_in_bounds(const CellRect& r) const {
        return r.x0 >= 0 && r.y0 >= 0 && r.x1 <= nx && r.y1 <= ny && !r.empty();
    }

    void carve_void(const CellRect& r) {
        if (!rect_in_bounds(r)) throw ConfigError("carve_void: rectangle outside grid");
        for (int y = r.y0; y < r.y1; ++y)
            for (int x = r.x0; x < r.x1; ++x) material.ms[idx(x, y)] = 0.0;
    }
};

/// Unit magnetization per cell plus the simulation clock. Void cells hold m = 0.
struct MagState {
    std::vector<double> mx, my, mz;
    double t = 0.0;

    MagState() = default;
    explicit MagState(int n)
        : mx(static_cast<size_t>(n), 0.0),
          my(static_cast<size_t>(n), 0.0),
          mz(static_cast<size_t>(n), 0.0) {}

    int size() const { return static_cast<int>(mx.size()); }

    Vec3 at(int i) const { return {mx[i], my[i], mz[i]}; }
    void set(int i, const Vec3& v) {
        mx[i] = v.x;
        my[i] = v.y;
        mz[i] = v.z;
    }

    /// Aligns every active cell with `dir`; void cells get m = 0.
    void fill_aligned(const SimGrid& grid, const Vec3& dir) {
        const Vec3 u = dir.normalized();
        for (int i = 0; i < grid.cell_count(); ++i) {
            if (grid.material.ms[i] > 0.0)
                set(i, u);
            else
                set(i, {0.0, 0.0, 0.0});
        }
    }
};

/// Magnetic field in tesla (mu0*H convention), same dimensions as the grid.
struct FieldGrid {
    std::vector<double> hx, hy, hz;

    FieldGrid() = default;
    explicit FieldGrid(int n)
        : hx(static_cast<size_t>(n), 0.0),
          hy(static_cast<size_t>(n), 0.0),
          hz(static_cast<size_t>(n), 0.0) {}

    int size() const { return static_cast<int>(hx.size()); }
    Vec3 at(int i) const { return {hx[i], hy[i], hz[i]}; }
    void add(int i, const Vec3& v) {
        hx[i] += v.x;
        hy[i] += v.y;
        hz[i] += v.z;
    }
    void clear() {
        std::fill(hx.begin(), hx.end(), 0.0);
        std::fill(hy.begin(), hy.end(), 0.0);
        std::fill(hz.begin(), hz.end(), 0.0);
    }
};

namespace detail {

/// Neumann (mirror) neighbor: clamps to the cell itself at film edges and at
/// void cells, which zeroes that neighbor's Laplacian contribution.
inline int mirror_neighbor(const SimGrid& g, int x, int y, int dx, int dy) {
    const int xn = x + dx;
    const int yn = y + dy;
    if (!g.in_bounds(xn, yn)) return g.idx(x, y);
    const int j = g.idx(xn, yn);
    return g.material.ms[j] > 0.0 ? j : g.idx(x, y);
}

}  // namespace detail

/// Exchange field h_ex = (2*A_ex / Ms_cell) * lap(m), 4-neighbor Laplacian,
/// mirror boundaries, output in tesla. Reference implementation; the
/// integrator uses a fused kernel that must agree with this one.
inline FieldGrid exchange_field(const MagState& state, const SimGrid& grid) {
    if (state.size() != grid.cell_count())
        throw ConfigError("exchange_field: state dimensions do not match grid");
    FieldGrid out(grid.cell_count());
    const double inv_d2 = 1.0 / (grid.cell_size * grid.cell_size);
    for (int y = 0; y < grid.ny; ++y) {
        for (int x = 0; x < grid.nx; ++x) {
            const int i = grid.idx(x, y);
            const double ms = grid.material.ms[i];
            if (ms <= 0.0) continue;
            const int xm = detail::mirror_neighbor(grid, x, y, -1, 0);
            const int xp = detail::mirror_neighbor(grid, x, y, +1, 0);
            const int ym = detail::mirror_neighbor(grid, x, y, 0, -1);
            const int yp = detail::mirror_neighbor(grid, x, y, 0, +1);
            const double c = 2.0 * grid.params.a_ex / ms * inv_d2;
            out.hx[i] = c * ((state.mx[xm] + state.mx[xp]) + (state.mx[ym] + state.mx[yp]) -
                             4.0 * state.mx[i]);
            out.hy[i] = c * ((state.my[xm] + state.my[xp]) + (state.my[ym] + state.my[yp]) -
                             4.0 * state.my[i]);
            out.hz[i] = c * ((state.mz[xm] + state.mz[xp]) + (state.mz[ym] + state.mz[yp]) -
                             4.0 * state.mz[i]);
        }
    }
    return out;
}

/// Uniform bias field in every active cell.
inline FieldGrid zeeman_field(const SimGrid& grid, const Vec3& bias) {
    FieldGrid out(grid.cell_count());
    for (int i = 0; i < grid.cell_count(); ++i) {
        if (grid.material.ms[i] <= 0.0) continue;
        out.hx[i] = bias.x;
        out.hy[i] = bias.y;
        out.hz[i] = bias.z;
    }
    return out;
}

/// Local thin-film demagnetization h_d = -mu0 * Ms_cell * m_z * zhat.
inline FieldGrid thin_film_demag_field(const MagState& state, const SimGrid& grid) {
    if (state.size() != grid.cell_count())
        throw ConfigError("thin_film_demag_field: state dimensions do not match grid");
    if (grid.nz != 1) throw ConfigError("thin_film_demag_field: requires nz == 1");
    FieldGrid out(grid.cell_count());
    for (int i = 0; i < grid.cell_count(); ++i)
        out.hz[i] = -kMu0 * grid.material.ms[i] * state.mz[i];
    return out;
}

/// dm/dt = -gamma/(1+a^2) * [ m x h + a * m x (m x h) ], per-cell damping.
inline void llg_rhs(const MagState& state, const FieldGrid& h_eff, const SimGrid& grid,
                    std::vector<double>& kx, std::vector<double>& ky,
                    std::vector<double>& kz) {
    const int n = grid.cell_count();
    kx.assign(static_cast<size_t>(n), 0.0);
    ky.assign(static_cast<size_t>(n), 0.0);
    kz.assign(static_cast<size_t>(n), 0.0);
    for (int i = 0; i < n; ++i) {
        if (grid.material.ms[i] <= 0.0) continue;
        const double a = grid.material.alpha[i];
        const double pref = grid.params.gamma / (1.0 + a * a);
        const Vec3 m = state.at(i);
        const Vec3 h = h_eff.at(i);
        const Vec3 p = m.cross(h);
        const Vec3 q = m.cross(p);
        kx[i] = -pref * (p.x + a * q.x);
        ky[i] = -pref * (p.y + a * q.y);
        kz[i] = -pref * (p.z + a * q.z);
    }
}

/// Quadratic damping ramps over `strip_cells` at both x-extremes, up to
/// alpha_max at the outermost column. Ms is left untouched.
inline MaterialMap build_absorber(const SimGrid& grid, int strip_cells, double alpha_max) {
    if (strip_cells < 0) throw ConfigError("build_absorber: strip_cells must be >= 0");
    if (2 * strip_cells >= grid.nx && strip_cells > 0)
        throw ConfigError("build_absorber: absorber strips wider than the grid");
    MaterialMap out = grid.material;
    if (strip_cells == 0) return out;
    const double a0 = grid.params.alpha;
    for (int y = 0; y < grid.ny; ++y) {
        for (int x = 0; x < grid.nx; ++x) {
            // depth 1 at the outer edge, 0 just inside the strip
            double depth = 0.0;
            if (x < strip_cells)
                depth = static_cast<double>(strip_cells - x) / strip_cells;
            else if (x >= grid.nx - strip_cells)
                depth = static_cast<double>(x - (grid.nx - 1 - strip_cells)) / strip_cells;
            if (depth <= 0.0) continue;
            const int i = grid.idx(x, y);
            out.alpha[i] = a0 + (alpha_max - a0) * depth * depth;
        }
    }
    return out;
}

/// Zeeman + exchange + demag energy in joules; quadratic self-terms carry 1/2.
inline double total_energy(const MagState& state, const SimGrid& grid, const Vec3& bias) {
    const FieldGrid hex = exchange_field(state, grid);
    const double vol = grid.cell_size * grid.cell_size * grid.cell_size;
    double e = 0.0;
    for (int i = 0; i < grid.cell_count(); ++i) {
        const double ms = grid.material.ms[i];
        if (ms <= 0.0) continue;
        const Vec3 m = state.at(i);
        e += -ms * m.dot(bias) * vol;
        e += -0.5 * ms * m.dot(hex.at(i)) * vol;
        e += 0.5 * kMu0 * ms * ms * m.z * m.z * vol;
    }
    return e;
}

/// Writes the per-cell magnetization as CSV, x-major then y.
inline void dump_state_csv(const MagState& state, const SimGrid& grid, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << "# magnetization snapshot t=" << std::setprecision(17) << state.t
        << " nx=" << grid.nx << " ny=" << grid.ny << " order=x-major-then-y\n";
    out << "x,y,mx,my,mz\n";
    out << std::setprecision(17);
    for (int y = 0; y < grid.ny; ++y)
        for (int x = 0; x < grid.nx; ++x) {
            const int i = grid.idx(x, y);
            out << x << ',' << y << ',' << state.mx[i] << ',' << state.my[i] << ','
                << state.mz[i] << '\n';
        }
}

}  // namespace magnonrc
