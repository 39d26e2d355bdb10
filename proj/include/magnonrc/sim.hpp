#pragma once

#include <cstdint>
#include <functional>

#include "magnonrc/excitation.hpp"

namespace magnonrc {

/// Fixed-step RK4 integrator of the thin-film LLG dynamics.
///
/// The right-hand side and the Runge-Kutta bookkeeping are fused into one
/// pass per stage: three branchless row loops (top row, interior, bottom row)
/// evaluate the local field and slope and immediately advance the stage
/// accumulators. Cells whose neighbor pattern the row loops get wrong (x
/// edges, voids and their neighbors) and cells under an antenna are then
/// corrected through a sparse fixup pass using clamped neighbor tables. The
/// fused path must agree with the reference operators in grid.hpp and with
/// the dense-drive path below; tests hold them together.
///
/// All loops are single-threaded and evaluation-order independent, so traces
/// are bit-identical for a fixed seed and config.
class Simulator {
  public:
    using MultFn = std::function<double(int antenna, double t)>;
    using FieldFn = std::function<void(double t, FieldGrid& add)>;

    Simulator(SimGrid grid, Vec3 bias)
        : grid_(std::move(grid)), bias_(bias), state_(grid_.cell_count()) {
        n_ = grid_.cell_count();
        nx_ = grid_.nx;
        const size_t ns = static_cast<size_t>(n_);
        kx_.assign(ns, 0.0); ky_.assign(ns, 0.0); kz_.assign(ns, 0.0);
        ax_.assign(ns, 0.0); ay_.assign(ns, 0.0); az_.assign(ns, 0.0);
        sx_.assign(ns, 0.0); sy_.assign(ns, 0.0); sz_.assign(ns, 0.0);
        ux_.assign(ns, 0.0); uy_.assign(ns, 0.0); uz_.assign(ns, 0.0);
        dhx_.assign(ns, 0.0); dhy_.assign(ns, 0.0); dhz_.assign(ns, 0.0);
        rebuild_material();
        state_.fill_aligned(grid_, bias_.norm() > 0.0 ? bias_ : Vec3{0.0, 0.0, 1.0});
    }

    const SimGrid& grid() const { return grid_; }
    SimGrid& grid() { return grid_; }
    const MagState& state() const { return state_; }
    MagState& state() { return state_; }
    const Vec3& bias() const { return bias_; }
    double time() const { return state_.t; }
    void set_time(double t) { state_.t = t; }
    void set_drive_cap(double cap) { drive_cap_ = cap; }
    double drive_cap() const { return drive_cap_; }

    /// Recomputes the per-cell coefficient tables after grid.material edits.
    void rebuild_material() {
        const size_t ns = static_cast<size_t>(n_);
        cex_.assign(ns, 0.0);
        dem_.assign(ns, 0.0);
        alp_.assign(ns, 0.0);
        gam_.assign(ns, 0.0);
        act_.assign(ns, 0.0);
        const double inv_d2 = 1.0 / (grid_.cell_size * grid_.cell_size);
        for (int i = 0; i < n_; ++i) {
            const double ms = grid_.material.ms[i];
            const double a = grid_.material.alpha[i];
            alp_[i] = a;
            if (ms > 0.0) {
                cex_[i] = 2.0 * grid_.params.a_ex / ms * inv_d2;
                dem_[i] = kMu0 * ms;
                gam_[i] = grid_.params.gamma / (1.0 + a * a);
                act_[i] = 1.0;
            }
        }
        build_tables();
    }

    void add_antenna(const AntennaSpec& spec) {
        spec.validate(grid_, bias_);
        antennas_.push_back(spec);
        rebuild_antenna_cells();
    }

    const std::vector<AntennaSpec>& antennas() const { return antennas_; }

    double sample(const ProbeSpec& probe) const { return sample_probe(state_, grid_, probe); }

    double energy() const { return total_energy(state_, grid_, bias_); }

    /// Max |dm/dt| over cells at the current state, drive off.
    double max_torque() {
        eval_rhs(state_.mx.data(), state_.my.data(), state_.mz.data(), nullptr, kx_.data(),
                 ky_.data(), kz_.data());
        double best = 0.0;
        for (int i = 0; i < n_; ++i) {
            const double m2 = kx_[i] * kx_[i] + ky_[i] * ky_[i] + kz_[i] * kz_[i];
            if (m2 > best) best = m2;
        }
        return std::sqrt(best);
    }

    /// Exposes one drive-free RHS evaluation at the current state for
    /// cross-checks against the reference field operators.
    void eval_rhs_at_state(std::vector<double>& outx, std::vector<double>& outy,
                           std::vector<double>& outz) {
        outx.assign(static_cast<size_t>(n_), 0.0);
        outy.assign(static_cast<size_t>(n_), 0.0);
        outz.assign(static_cast<size_t>(n_), 0.0);
        eval_rhs(state_.mx.data(), state_.my.data(), state_.mz.data(), nullptr, outx.data(),
                 outy.data(), outz.data());
    }

    void step(double dt) { step(dt, nullptr); }

    void step(double dt, const MultFn& mult) { step(dt, &mult); }

    /// One RK4 step with antenna drive multipliers supplied by `mult`,
    /// followed by renormalization of every active cell.
    void step(double dt, const MultFn* mult) {
        if (dt <= 0.0) throw ConfigError("Simulator::step: dt must be positive");
        const double t0 = state_.t;
        const double* mx = state_.mx.data();
        const double* my = state_.my.data();
        const double* mz = state_.mz.data();

        // acc starts at m; stages write the next trial state into u/s
        fused_stage(mx, my, mz, mx, my, mz, /*acc_init=*/true, dt / 6.0, dt / 2.0, t0, mult,
                    sx_.data(), sy_.data(), sz_.data());
        fused_stage(sx_.data(), sy_.data(), sz_.data(), mx, my, mz, false, dt / 3.0, dt / 2.0,
                    t0 + dt / 2.0, mult, ux_.data(), uy_.data(), uz_.data());
        fused_stage(ux_.data(), uy_.data(), uz_.data(), mx, my, mz, false, dt / 3.0, dt,
                    t0 + dt / 2.0, mult, sx_.data(), sy_.data(), sz_.data());
        fused_final(sx_.data(), sy_.data(), sz_.data(), dt / 6.0, t0 + dt, mult);
        state_.t = t0 + dt;
    }

    /// RK4 step with a dense user-supplied drive field. Slower reference
    /// path; the fused antenna path is validated against it.
    void step_with_field(double dt, const FieldFn& drive) {
        if (dt <= 0.0) throw ConfigError("Simulator::step_with_field: dt must be positive");
        const double t0 = state_.t;
        double* mx = state_.mx.data();
        double* my = state_.my.data();
        double* mz = state_.mz.data();
        FieldGrid extra(n_);

        auto eval_dense = [&](const double* px, const double* py, const double* pz, double t) {
            extra.clear();
            drive(t, extra);
            for (int i = 0; i < n_; ++i)
                cell_rhs(i, px, py, pz, extra.hx[i], extra.hy[i], extra.hz[i], kx_.data(),
                         ky_.data(), kz_.data());
        };

        eval_dense(mx, my, mz, t0);
        stage_advance(mx, my, mz, dt / 6.0, dt / 2.0, true);
        eval_dense(sx_.data(), sy_.data(), sz_.data(), t0 + dt / 2.0);
        stage_advance(mx, my, mz, dt / 3.0, dt / 2.0, false);
        eval_dense(sx_.data(), sy_.data(), sz_.data(), t0 + dt / 2.0);
        stage_advance(mx, my, mz, dt / 3.0, dt, false);
        eval_dense(sx_.data(), sy_.data(), sz_.data(), t0 + dt);
        finish_step(mx, my, mz, dt / 6.0);
        state_.t = t0 + dt;
    }

    /// Damped settling pass: runs with damping raised to at least
    /// `alpha_relax` for `duration`, exiting early once the maximum torque
    /// falls below `torque_tol` (checked every 100 steps). Restores the
    /// original damping map afterwards.
    void relax(double duration, double alpha_relax, double dt, double torque_tol = -1.0) {
        std::vector<double> saved_alpha = grid_.material.alpha;
        for (int i = 0; i < n_; ++i)
            grid_.material.alpha[i] = std::max(grid_.material.alpha[i], alpha_relax);
        rebuild_material();
        if (torque_tol < 0.0) torque_tol = 1.0e-9 * grid_.params.gamma * bias_.norm();
        const long steps = static_cast<long>(std::ceil(duration / dt));
        for (long s = 0; s < steps; ++s) {
            if (s % 100 == 0 && max_torque() < torque_tol) break;
            step(dt);
        }
        grid_.material.alpha = std::move(saved_alpha);
        rebuild_material();
    }

  private:
    struct Slope {
        double x, y, z;
    };

    struct FixupCell {
        int32_t cell;
        int8_t rk;            // row kind of the bulk loop that visited it
        int8_t bulk_visited;  // 0 only for the four grid corners
    };

    void build_tables() {
        const size_t ns = static_cast<size_t>(n_);
        nb_xm_.resize(ns); nb_xp_.resize(ns); nb_ym_.resize(ns); nb_yp_.resize(ns);
        exceptions_.clear();
        const int ny = grid_.ny;
        for (int y = 0; y < ny; ++y) {
            for (int x = 0; x < nx_; ++x) {
                const int i = grid_.idx(x, y);
                nb_xm_[i] = detail::mirror_neighbor(grid_, x, y, -1, 0);
                nb_xp_[i] = detail::mirror_neighbor(grid_, x, y, +1, 0);
                nb_ym_[i] = detail::mirror_neighbor(grid_, x, y, 0, -1);
                nb_yp_[i] = detail::mirror_neighbor(grid_, x, y, 0, +1);
                // top/bottom rows have dedicated vector loops; only x edges,
                // voids and their neighbors need the table-based recompute
                const bool edge = (x == 0 || x == nx_ - 1 || ny == 1);
                const bool self_void = grid_.material.ms[i] <= 0.0;
                auto void_at = [&](int xv, int yv) {
                    return grid_.in_bounds(xv, yv) && grid_.material.ms[grid_.idx(xv, yv)] <= 0.0;
                };
                const bool near_void = void_at(x - 1, y) || void_at(x + 1, y) ||
                                       void_at(x, y - 1) || void_at(x, y + 1);
                if (edge || self_void || near_void)
                    exceptions_.push_back({static_cast<int32_t>(i), row_kind(i), bulk_visits(i)});
            }
        }
        exception_mark_.assign(static_cast<size_t>(n_), 0);
        for (const FixupCell& f : exceptions_) exception_mark_[f.cell] = 1;
        rebuild_antenna_cells();
    }

    int8_t row_kind(int i) const {
        if (grid_.ny == 1) return 3;  // single row: both y-neighbors mirror
        if (i < nx_) return 1;
        if (i >= n_ - nx_) return 2;
        return 0;
    }

    int8_t bulk_visits(int i) const {
        if (grid_.ny == 1) return 0;
        const int x = i % nx_;
        const bool corner = (x == 0 || x == nx_ - 1) && (i < nx_ || i >= n_ - nx_);
        return corner ? 0 : 1;
    }

    void rebuild_antenna_cells() {
        antenna_cells_.assign(antennas_.size(), {});
        touched_.clear();
        std::vector<char> seen(static_cast<size_t>(n_), 0);
        for (size_t a = 0; a < antennas_.size(); ++a) {
            const CellRect& r = antennas_[a].region;
            for (int y = r.y0; y < r.y1; ++y)
                for (int x = r.x0; x < r.x1; ++x) {
                    const int i = grid_.idx(x, y);
                    antenna_cells_[a].push_back(i);
                    if (!seen[i]) {
                        seen[i] = 1;
                        touched_.push_back({static_cast<int32_t>(i), row_kind(i), bulk_visits(i)});
                    }
                }
        }
    }

    /// Slope via clamped-neighbor tables; correct at every cell.
    inline Slope slope_tables(int i, const double* mx, const double* my, const double* mz,
                              double dhx, double dhy, double dhz) const {
        const int xm = nb_xm_[i], xp = nb_xp_[i], ym = nb_ym_[i], yp = nb_yp_[i];
        const double lapx = (mx[xm] + mx[xp]) + (mx[ym] + mx[yp]) - 4.0 * mx[i];
        const double lapy = (my[xm] + my[xp]) + (my[ym] + my[yp]) - 4.0 * my[i];
        const double lapz = (mz[xm] + mz[xp]) + (mz[ym] + mz[yp]) - 4.0 * mz[i];
        return slope_from_lap(i, mx[i], my[i], mz[i], lapx, lapy, lapz, dhx, dhy, dhz);
    }

    /// Slope exactly as the bulk row loop of kind RK computes it, including
    /// its wrong neighbors near x edges; used to back bulk contributions out
    /// of the accumulators during fixup.
    template <int RK>
    inline Slope slope_bulk(int i, const double* mx, const double* my, const double* mz) const {
        const int nx = nx_;
        const int iym = (RK == 1) ? i : i - nx;
        const int iyp = (RK == 2) ? i : i + nx;
        const double lapx = (mx[i - 1] + mx[i + 1]) + (mx[iym] + mx[iyp]) - 4.0 * mx[i];
        const double lapy = (my[i - 1] + my[i + 1]) + (my[iym] + my[iyp]) - 4.0 * my[i];
        const double lapz = (mz[i - 1] + mz[i + 1]) + (mz[iym] + mz[iyp]) - 4.0 * mz[i];
        return slope_from_lap(i, mx[i], my[i], mz[i], lapx, lapy, lapz, 0.0, 0.0, 0.0);
    }

    Slope slope_bulk_rk(int8_t rk, int i, const double* mx, const double* my,
                        const double* mz) const {
        switch (rk) {
            case 1: return slope_bulk<1>(i, mx, my, mz);
            case 2: return slope_bulk<2>(i, mx, my, mz);
            default: return slope_bulk<0>(i, mx, my, mz);
        }
    }

    inline Slope slope_from_lap(int i, double mxi, double myi, double mzi, double lapx,
                                double lapy, double lapz, double dhx, double dhy,
                                double dhz) const {
        const double hx = cex_[i] * lapx + bias_.x + dhx;
        const double hy = cex_[i] * lapy + bias_.y + dhy;
        const double hz = cex_[i] * lapz + bias_.z + dhz - dem_[i] * mzi;
        const double px = myi * hz - mzi * hy;
        const double py = mzi * hx - mxi * hz;
        const double pz = mxi * hy - myi * hx;
        const double qx = myi * pz - mzi * py;
        const double qy = mzi * px - mxi * pz;
        const double qz = mxi * py - myi * px;
        return {-gam_[i] * (px + alp_[i] * qx), -gam_[i] * (py + alp_[i] * qy),
                -gam_[i] * (pz + alp_[i] * qz)};
    }

    inline void cell_rhs(int i, const double* mx, const double* my, const double* mz, double dhx,
                         double dhy, double dhz, double* kx, double* ky, double* kz) const {
        const Slope s = slope_tables(i, mx, my, mz, dhx, dhy, dhz);
        kx[i] = s.x;
        ky[i] = s.y;
        kz[i] = s.z;
    }

    // Fused stage pass for stages 1-3: k = f(cur); acc (+)= w_acc*k;
    // sout = base + w_stage*k. Row kinds as in slope_bulk.
    template <int RK, bool INIT>
    void fused_rows(int i0, int i1, const double* __restrict cx, const double* __restrict cy,
                    const double* __restrict cz, const double* __restrict bxv,
                    const double* __restrict byv, const double* __restrict bzv, double wa,
                    double ws, double* __restrict ox, double* __restrict oy,
                    double* __restrict oz) {
        const double bx = bias_.x, by = bias_.y, bz = bias_.z;
        const int nx = nx_;
        const double* __restrict cex = cex_.data();
        const double* __restrict dem = dem_.data();
        const double* __restrict gam = gam_.data();
        const double* __restrict alp = alp_.data();
        double* __restrict accx = ax_.data();
        double* __restrict accy = ay_.data();
        double* __restrict accz = az_.data();
#pragma omp simd
        for (int i = i0; i < i1; ++i) {
            const int iym = (RK == 1) ? i : i - nx;
            const int iyp = (RK == 2) ? i : i + nx;
            const double lapx = (cx[i - 1] + cx[i + 1]) + (cx[iym] + cx[iyp]) - 4.0 * cx[i];
            const double lapy = (cy[i - 1] + cy[i + 1]) + (cy[iym] + cy[iyp]) - 4.0 * cy[i];
            const double lapz = (cz[i - 1] + cz[i + 1]) + (cz[iym] + cz[iyp]) - 4.0 * cz[i];
            const double hx = cex[i] * lapx + bx;
            const double hy = cex[i] * lapy + by;
            const double hz = cex[i] * lapz + bz - dem[i] * cz[i];
            const double px = cy[i] * hz - cz[i] * hy;
            const double py = cz[i] * hx - cx[i] * hz;
            const double pz = cx[i] * hy - cy[i] * hx;
            const double qx = cy[i] * pz - cz[i] * py;
            const double qy = cz[i] * px - cx[i] * pz;
            const double qz = cx[i] * py - cy[i] * px;
            const double kx = -gam[i] * (px + alp[i] * qx);
            const double ky = -gam[i] * (py + alp[i] * qy);
            const double kz = -gam[i] * (pz + alp[i] * qz);
            if constexpr (INIT) {
                accx[i] = bxv[i] + wa * kx;
                accy[i] = byv[i] + wa * ky;
                accz[i] = bzv[i] + wa * kz;
            } else {
                accx[i] += wa * kx;
                accy[i] += wa * ky;
                accz[i] += wa * kz;
            }
            ox[i] = bxv[i] + ws * kx;
            oy[i] = byv[i] + ws * ky;
            oz[i] = bzv[i] + ws * kz;
        }
    }

    // Final pass: m = renorm(acc + w*k4) with blowup detection.
    template <int RK>
    void final_rows(int i0, int i1, const double* __restrict cx, const double* __restrict cy,
                    const double* __restrict cz, double w, double& ok_acc) {
        const double bx = bias_.x, by = bias_.y, bz = bias_.z;
        const int nx = nx_;
        const double* __restrict cex = cex_.data();
        const double* __restrict dem = dem_.data();
        const double* __restrict gam = gam_.data();
        const double* __restrict alp = alp_.data();
        const double* __restrict accx = ax_.data();
        const double* __restrict accy = ay_.data();
        const double* __restrict accz = az_.data();
        const double* __restrict act = act_.data();
        double* __restrict mx = state_.mx.data();
        double* __restrict my = state_.my.data();
        double* __restrict mz = state_.mz.data();
        double bad = 0.0;
#pragma omp simd reduction(+ : bad)
        for (int i = i0; i < i1; ++i) {
            const int iym = (RK == 1) ? i : i - nx;
            const int iyp = (RK == 2) ? i : i + nx;
            const double lapx = (cx[i - 1] + cx[i + 1]) + (cx[iym] + cx[iyp]) - 4.0 * cx[i];
            const double lapy = (cy[i - 1] + cy[i + 1]) + (cy[iym] + cy[iyp]) - 4.0 * cy[i];
            const double lapz = (cz[i - 1] + cz[i + 1]) + (cz[iym] + cz[iyp]) - 4.0 * cz[i];
            const double hx = cex[i] * lapx + bx;
            const double hy = cex[i] * lapy + by;
            const double hz = cex[i] * lapz + bz - dem[i] * cz[i];
            const double px = cy[i] * hz - cz[i] * hy;
            const double py = cz[i] * hx - cx[i] * hz;
            const double pz = cx[i] * hy - cy[i] * hx;
            const double qx = cy[i] * pz - cz[i] * py;
            const double qy = cz[i] * px - cx[i] * pz;
            const double qz = cx[i] * py - cy[i] * px;
            const double kx = -gam[i] * (px + alp[i] * qx);
            const double ky = -gam[i] * (py + alp[i] * qy);
            const double kz = -gam[i] * (pz + alp[i] * qz);
            const double x = accx[i] + w * kx;
            const double y = accy[i] + w * ky;
            const double z = accz[i] + w * kz;
            const double n2 = x * x + y * y + z * z;
            // NaN fails the comparison and poisons the flag as well
            bad += (n2 < 1.0e6) ? 0.0 : act[i];
            const double inv = act[i] / std::sqrt(n2 + (1.0 - act[i]));
            mx[i] = x * inv;
            my[i] = y * inv;
            mz[i] = z * inv;
        }
        ok_acc += bad;
    }

    void stage_drive(double t, const MultFn* mult) {
        for (const FixupCell& f : touched_) {
            dhx_[f.cell] = 0.0;
            dhy_[f.cell] = 0.0;
            dhz_[f.cell] = 0.0;
        }
        if (mult == nullptr) return;
        for (size_t a = 0; a < antennas_.size(); ++a) {
            const double s = (*mult)(static_cast<int>(a), t);
            if (std::abs(s) > drive_cap_)
                throw DriveSaturationError("drive multiplier " + std::to_string(s) +
                                           " exceeds cap " + std::to_string(drive_cap_) +
                                           " at t=" + std::to_string(t));
            const Vec3 dh = antennas_[a].polarization * (s * antennas_[a].base_amplitude);
            for (const int i : antenna_cells_[a]) {
                dhx_[i] += dh.x;
                dhy_[i] += dh.y;
                dhz_[i] += dh.z;
            }
        }
    }

    void fused_stage(const double* cx, const double* cy, const double* cz, const double* bxv,
                     const double* byv, const double* bzv, bool init, double wa, double ws,
                     double t, const MultFn* mult, double* ox, double* oy, double* oz) {
        if (grid_.ny > 1) {
            if (init) {
                fused_rows<1, true>(1, nx_ - 1, cx, cy, cz, bxv, byv, bzv, wa, ws, ox, oy, oz);
                fused_rows<0, true>(nx_, n_ - nx_, cx, cy, cz, bxv, byv, bzv, wa, ws, ox, oy, oz);
                fused_rows<2, true>(n_ - nx_ + 1, n_ - 1, cx, cy, cz, bxv, byv, bzv, wa, ws, ox,
                                    oy, oz);
            } else {
                fused_rows<1, false>(1, nx_ - 1, cx, cy, cz, bxv, byv, bzv, wa, ws, ox, oy, oz);
                fused_rows<0, false>(nx_, n_ - nx_, cx, cy, cz, bxv, byv, bzv, wa, ws, ox, oy,
                                     oz);
                fused_rows<2, false>(n_ - nx_ + 1, n_ - 1, cx, cy, cz, bxv, byv, bzv, wa, ws, ox,
                                     oy, oz);
            }
        }
        stage_drive(t, mult);
        // corrections: back out the bulk contribution, apply the exact one
        const bool has_drive = mult != nullptr && !antennas_.empty();
        for (const FixupCell& f : exceptions_) {
            const int i = f.cell;
            const Slope kn = slope_tables(i, cx, cy, cz, dhx_[i], dhy_[i], dhz_[i]);
            apply_stage_fix(f, i, kn, cx, cy, cz, bxv, byv, bzv, init, wa, ws, ox, oy, oz);
        }
        if (has_drive) {
            for (const FixupCell& f : touched_) {
                if (is_exception_cell(f.cell)) continue;  // already corrected with drive
                const int i = f.cell;
                const Slope kn = slope_tables(i, cx, cy, cz, dhx_[i], dhy_[i], dhz_[i]);
                apply_stage_fix(f, i, kn, cx, cy, cz, bxv, byv, bzv, init, wa, ws, ox, oy, oz);
            }
        }
    }

    inline void apply_stage_fix(const FixupCell& f, int i, const Slope& kn, const double* cx,
                                const double* cy, const double* cz, const double* bxv,
                                const double* byv, const double* bzv, bool init, double wa,
                                double ws, double* ox, double* oy, double* oz) {
        if (f.bulk_visited) {
            const Slope kb = slope_bulk_rk(f.rk, i, cx, cy, cz);
            ax_[i] += wa * (kn.x - kb.x);
            ay_[i] += wa * (kn.y - kb.y);
            az_[i] += wa * (kn.z - kb.z);
        } else if (init) {
            ax_[i] = bxv[i] + wa * kn.x;
            ay_[i] = byv[i] + wa * kn.y;
            az_[i] = bzv[i] + wa * kn.z;
        } else {
            ax_[i] += wa * kn.x;
            ay_[i] += wa * kn.y;
            az_[i] += wa * kn.z;
        }
        ox[i] = bxv[i] + ws * kn.x;
        oy[i] = byv[i] + ws * kn.y;
        oz[i] = bzv[i] + ws * kn.z;
    }

    void fused_final(const double* cx, const double* cy, const double* cz, double w, double t,
                     const MultFn* mult) {
        double ok_acc = 0.0;
        if (grid_.ny > 1) {
            final_rows<1>(1, nx_ - 1, cx, cy, cz, w, ok_acc);
            final_rows<0>(nx_, n_ - nx_, cx, cy, cz, w, ok_acc);
            final_rows<2>(n_ - nx_ + 1, n_ - 1, cx, cy, cz, w, ok_acc);
        }
        stage_drive(t, mult);
        const bool has_drive = mult != nullptr && !antennas_.empty();
        for (const FixupCell& f : exceptions_) {
            const Slope kn = slope_tables(f.cell, cx, cy, cz, dhx_[f.cell], dhy_[f.cell],
                                          dhz_[f.cell]);
            apply_final_fix(f.cell, kn, w, ok_acc);
        }
        if (has_drive) {
            for (const FixupCell& f : touched_) {
                if (is_exception_cell(f.cell)) continue;
                const Slope kn = slope_tables(f.cell, cx, cy, cz, dhx_[f.cell], dhy_[f.cell],
                                              dhz_[f.cell]);
                apply_final_fix(f.cell, kn, w, ok_acc);
            }
        }
        if (!(ok_acc == 0.0)) report_blowup(cx, cy, cz, w);
    }

    inline void apply_final_fix(int i, const Slope& kn, double w, double& ok_acc) {
        const double x = ax_[i] + w * kn.x;
        const double y = ay_[i] + w * kn.y;
        const double z = az_[i] + w * kn.z;
        const double n2 = x * x + y * y + z * z;
        ok_acc += (n2 < 1.0e6) ? 0.0 : act_[i];
        const double inv = act_[i] / std::sqrt(n2 + (1.0 - act_[i]));
        state_.mx[i] = x * inv;
        state_.my[i] = y * inv;
        state_.mz[i] = z * inv;
    }

    bool is_exception_cell(int i) const {
        if (exception_mark_.empty()) return false;
        return exception_mark_[static_cast<size_t>(i)] != 0;
    }

    // Reconstructs pre-renormalization stage-4 values to name the first
    // offending cell. dh arrays still hold the stage-4 drive.
    [[noreturn]] void report_blowup(const double* cx, const double* cy, const double* cz,
                                    double w) const {
        int bad = 0;
        for (int i = 0; i < n_; ++i) {
            const Slope kn = slope_tables(i, cx, cy, cz, dhx_[i], dhy_[i], dhz_[i]);
            const double x = ax_[i] + w * kn.x;
            const double y = ay_[i] + w * kn.y;
            const double z = az_[i] + w * kn.z;
            const double n2 = x * x + y * y + z * z;
            if (!(n2 < 1.0e6) && act_[i] != 0.0) {
                bad = i;
                break;
            }
        }
        throw NumericError("numeric blowup in cell " + std::to_string(bad) + " (x=" +
                               std::to_string(bad % nx_) + ", y=" + std::to_string(bad / nx_) +
                               ") at t=" + std::to_string(state_.t),
                           bad);
    }

    /// Drive-free RHS over all cells; reference-grade path used by
    /// diagnostics and the dense-drive integrator.
    void eval_rhs(const double* mx, const double* my, const double* mz, const MultFn*,
                  double* kx, double* ky, double* kz) {
        for (int i = 0; i < n_; ++i) cell_rhs(i, mx, my, mz, 0.0, 0.0, 0.0, kx, ky, kz);
    }

    /// acc (+)= w_acc * k; s = m + w_stage * k. Dense-path helper.
    void stage_advance(const double* __restrict mx, const double* __restrict my,
                       const double* __restrict mz, double w_acc, double w_stage, bool first) {
        double* __restrict axp = ax_.data();
        double* __restrict ayp = ay_.data();
        double* __restrict azp = az_.data();
        double* __restrict sxp = sx_.data();
        double* __restrict syp = sy_.data();
        double* __restrict szp = sz_.data();
        const double* __restrict kxp = kx_.data();
        const double* __restrict kyp = ky_.data();
        const double* __restrict kzp = kz_.data();
        if (first) {
            for (int i = 0; i < n_; ++i) {
                axp[i] = mx[i] + w_acc * kxp[i];
                ayp[i] = my[i] + w_acc * kyp[i];
                azp[i] = mz[i] + w_acc * kzp[i];
                sxp[i] = mx[i] + w_stage * kxp[i];
                syp[i] = my[i] + w_stage * kyp[i];
                szp[i] = mz[i] + w_stage * kzp[i];
            }
        } else {
            for (int i = 0; i < n_; ++i) {
                axp[i] += w_acc * kxp[i];
                ayp[i] += w_acc * kyp[i];
                azp[i] += w_acc * kzp[i];
                sxp[i] = mx[i] + w_stage * kxp[i];
                syp[i] = my[i] + w_stage * kyp[i];
                szp[i] = mz[i] + w_stage * kzp[i];
            }
        }
    }

    /// m = acc + w * k4, renormalized. Dense-path helper.
    void finish_step(double* __restrict mx, double* __restrict my, double* __restrict mz,
                     double w) {
        const double* __restrict kxp = kx_.data();
        const double* __restrict kyp = ky_.data();
        const double* __restrict kzp = kz_.data();
        const double* __restrict axp = ax_.data();
        const double* __restrict ayp = ay_.data();
        const double* __restrict azp = az_.data();
        const double* __restrict act = act_.data();
        double ok_acc = 0.0;
        for (int i = 0; i < n_; ++i) {
            const double x = axp[i] + w * kxp[i];
            const double y = ayp[i] + w * kyp[i];
            const double z = azp[i] + w * kzp[i];
            const double n2 = x * x + y * y + z * z;
            ok_acc += (n2 < 1.0e6) ? 0.0 : act[i];
            const double inv = act[i] / std::sqrt(n2 + (1.0 - act[i]));
            mx[i] = x * inv;
            my[i] = y * inv;
            mz[i] = z * inv;
        }
        if (!(ok_acc == 0.0)) {
            int bad = 0;
            for (int i = 0; i < n_; ++i) {
                const double x = axp[i] + w * kxp[i];
                const double y = ayp[i] + w * kyp[i];
                const double z = azp[i] + w * kzp[i];
                const double n2 = x * x + y * y + z * z;
                if (!(n2 < 1.0e6) && act[i] != 0.0) {
                    bad = i;
                    break;
                }
            }
            throw NumericError("numeric blowup in cell " + std::to_string(bad), bad);
        }
    }

    SimGrid grid_;
    Vec3 bias_;
    MagState state_;
    int n_ = 0;
    int nx_ = 0;
    double drive_cap_ = kDefaultDriveCap;

    std::vector<double> cex_, dem_, alp_, gam_, act_;
    std::vector<int32_t> nb_xm_, nb_xp_, nb_ym_, nb_yp_;
    std::vector<FixupCell> exceptions_;
    std::vector<char> exception_mark_;

    std::vector<AntennaSpec> antennas_;
    std::vector<std::vector<int>> antenna_cells_;
    std::vector<FixupCell> touched_;

    std::vector<double> kx_, ky_, kz_;  // dense-path stage slope
    std::vector<double> ax_, ay_, az_;  // weighted slope accumulator
    std::vector<double> sx_, sy_, sz_;  // stage state buffer A
    std::vector<double> ux_, uy_, uz_;  // stage state buffer B
    std::vector<double> dhx_, dhy_, dhz_;
};

}  // namespace magnonrc
