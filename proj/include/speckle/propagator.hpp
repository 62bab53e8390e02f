#pragma once

// Split-step spectral integration of the Ito-Schroedinger equation
//   2 i k0 dphi + Laplacian(phi) dz + k0^2 phi o dB = 0
// and exact free-space propagation.

#include <cmath>
#include <complex>
#include <functional>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "speckle/error.hpp"
#include "speckle/fft.hpp"
#include "speckle/grid.hpp"
#include "speckle/medium.hpp"
#include "speckle/rng.hpp"

namespace speckle {

enum class Splitting { strang, lie };

struct PropagationPlan {
    double k0 = 1.0;
    double ell = 0.0;
    int nz = 1;
    Splitting splitting = Splitting::strang;
    std::optional<MediumModel> medium;

    [[nodiscard]] double dz() const { return ell / nz; }

    /// Largest step that resolves the screen statistics and diffraction between screens.
    [[nodiscard]] static double max_step(const MediumModel& m, double k0) {
        const double lc = m.corr_length();
        return lc * std::min(1.0, k0 * lc) / 4.0;
    }

    void validate(const TransverseGrid& g) const {
        g.validate();
        if (!(k0 > 0.0) || !std::isfinite(k0)) throw ConfigError("propagation: k0 must be positive");
        if (!(ell >= 0.0) || !std::isfinite(ell)) throw ConfigError("propagation: ell must be non-negative");
        if (nz < 1) throw ConfigError("propagation: nz must be >= 1");
        if (medium) {
            const double bound = max_step(*medium, k0);
            if (dz() > bound * (1.0 + 1e-12)) {
                std::ostringstream os;
                os << "propagation: step dz = " << dz() << " exceeds " << bound
                   << " (corr_length * min(1, k0 * corr_length) / 4); raise nz to at least "
                   << static_cast<int>(std::ceil(ell / bound));
                throw ConfigError(os.str());
            }
        }
    }

    /// Non-fatal sanity notes (paraxial resolution).
    [[nodiscard]] std::vector<std::string> warnings(const TransverseGrid& g) const {
        std::vector<std::string> out;
        const double kmax = std::numbers::pi / g.dx;
        if (kmax / k0 > 0.5) {
            std::ostringstream os;
            os << "propagation: grid Nyquist wavenumber " << kmax << " exceeds k0/2; paraxial accuracy at the "
               << "highest grid frequencies is not guaranteed";
            out.push_back(os.str());
        }
        return out;
    }
};

/// Circular shift by r (each component an integer multiple of dx).
inline ComplexField make_incident(const ComplexField& mask, double rx, double ry = 0.0) {
    const auto& g = mask.grid;
    auto steps = [&](double r, const char* axis) {
        const double s = r / g.dx;
        const double si = std::round(s);
        if (std::abs(s - si) > 1e-9 * std::max(1.0, std::abs(s))) {
            std::ostringstream os;
            os << "make_incident: shift " << r << " along " << axis << " is not a multiple of dx = " << g.dx;
            throw PreconditionError(os.str());
        }
        return static_cast<long>(si);
    };
    const long sx = steps(rx, "x");
    const long sy = steps(ry, "y");
    if (g.dim == 1 && sy != 0) throw PreconditionError("make_incident: y shift on a 1-d grid");
    ComplexField out(g);
    const long n = g.n;
    auto wrap = [n](long i) { return static_cast<std::size_t>(((i % n) + n) % n); };
    if (g.dim == 1) {
        for (long i = 0; i < n; ++i) out.values[wrap(i + sx)] = mask.values[i];
    } else {
        for (long j = 0; j < n; ++j)
            for (long i = 0; i < n; ++i)
                out.values[wrap(j + sy) * n + wrap(i + sx)] = mask.values[static_cast<std::size_t>(j) * n + i];
    }
    return out;
}

namespace detail {

inline std::vector<cplx> diffraction_multiplier(const TransverseGrid& g, double k0, double h) {
    std::vector<cplx> d(g.size());
    for (std::size_t j = 0; j < d.size(); ++j) {
        const double ph = -g.native_k2(j) * h / (2.0 * k0);
        d[j] = {std::cos(ph), std::sin(ph)};
    }
    return d;
}

inline void to_native(const TransverseGrid& g, std::vector<cplx>& v) { half_shift<cplx>(g, v); }
inline void to_centered(const TransverseGrid& g, std::vector<cplx>& v) { half_shift<cplx>(g, v); }

}  // namespace detail

/// Exact spectral solution of 2 i k0 dphi/dz + Laplacian(phi) = 0 on the torus.
inline ComplexField free_space_propagate(const ComplexField& f, double k0, double z) {
    if (!(z >= 0.0)) throw PreconditionError("free_space_propagate: z must be non-negative");
    if (!(k0 > 0.0)) throw PreconditionError("free_space_propagate: k0 must be positive");
    ComplexField out = f;
    if (z == 0.0) return out;
    const auto& g = f.grid;
    detail::to_native(g, out.values);
    fft_inplace(g.fft_shape(), out.values, FftDirection::forward);
    const auto d = detail::diffraction_multiplier(g, k0, z);
    const double inv = 1.0 / static_cast<double>(g.size());
    for (std::size_t j = 0; j < d.size(); ++j) out.values[j] *= d[j] * inv;
    fft_inplace(g.fft_shape(), out.values, FftDirection::backward);
    detail::to_centered(g, out.values);
    return out;
}

/// Supplies the Brownian increment of z-step `step` in FFT-native node order.
using IncrementSource = std::function<void(int step, std::vector<double>& out)>;
/// Receives real-space fields (FFT-native order) after `steps_done` full steps.
using StepObserver = std::function<void(int steps_done, const std::vector<std::vector<cplx>>& fields)>;

/// Reusable split-step integrator for one grid and plan. Several fields can be
/// advanced together through one Brownian path, which is how a shift scan
/// shares a frozen medium realization.
class SplitStepPropagator {
public:
    SplitStepPropagator(const TransverseGrid& g, PropagationPlan plan) : grid_(g), plan_(std::move(plan)) {
        plan_.validate(g);
        if (plan_.medium) synth_.emplace(*plan_.medium, g);
        const double dz = plan_.dz();
        full_ = detail::diffraction_multiplier(g, plan_.k0, dz);
        half_ = detail::diffraction_multiplier(g, plan_.k0, 0.5 * dz);
    }

    [[nodiscard]] const PropagationPlan& plan() const { return plan_; }
    [[nodiscard]] const TransverseGrid& grid() const { return grid_; }
    [[nodiscard]] const std::optional<ScreenSynthesizer>& synthesizer() const { return synth_; }

    /// Increment source keyed by (seed, realization, step).
    [[nodiscard]] IncrementSource path(std::uint64_t seed, std::uint64_t realization) const {
        if (!synth_) return {};
        const double dz = plan_.dz();
        const ScreenSynthesizer* s = &*synth_;
        return [s, dz, seed, realization](int step, std::vector<double>& out) {
            auto rng = medium_stream(seed, realization, static_cast<std::uint64_t>(step));
            s->sample(dz, rng, out);
        };
    }

    /// Advances fields (FFT-native order, real space) in place over the whole plan.
    void run(std::vector<std::vector<cplx>>& fields, const IncrementSource& source,
             const StepObserver& observer = {}) const {
        for (const auto& f : fields)
            if (f.size() != grid_.size()) throw PreconditionError("propagate: field does not match the plan grid");
        const bool random = static_cast<bool>(source);
        if (plan_.medium && !random) throw PreconditionError("propagate: medium present but no increment source");
        const auto shape = grid_.fft_shape();
        const double inv = 1.0 / static_cast<double>(grid_.size());
        const double half_k0 = 0.5 * plan_.k0;
        std::vector<double> db;
        std::vector<cplx> screen(grid_.size());

        auto diffract = [&](std::vector<cplx>& f, const std::vector<cplx>& mult) {
            fft_inplace(shape, f, FftDirection::forward);
            for (std::size_t j = 0; j < f.size(); ++j) f[j] *= mult[j] * inv;
            fft_inplace(shape, f, FftDirection::backward);
        };
        auto apply_screen = [&](std::vector<cplx>& f) {
            for (std::size_t j = 0; j < f.size(); ++j) f[j] *= screen[j];
        };
        auto load_screen = [&](int step) {
            source(step, db);
            if (db.size() != grid_.size()) throw PreconditionError("propagate: increment size mismatch");
            for (std::size_t j = 0; j < db.size(); ++j) screen[j] = std::polar(1.0, half_k0 * db[j]);
        };
        auto observe = [&](int done, bool pending_half) {
            if (!observer) return;
            if (!pending_half) {
                observer(done, fields);
                return;
            }
            auto copy = fields;
            for (auto& f : copy) diffract(f, half_);
            observer(done, copy);
        };

        const int nz = plan_.nz;
        if (!random) {
            // homogeneous: a single exact diffraction over the full distance
            const auto all = detail::diffraction_multiplier(grid_, plan_.k0, plan_.ell);
            for (auto& f : fields) diffract(f, all);
            observe(nz, false);
            return;
        }
        if (plan_.splitting == Splitting::lie) {
            for (int s = 0; s < nz; ++s) {
                load_screen(s);
                for (auto& f : fields) {
                    diffract(f, full_);
                    apply_screen(f);
                }
                observe(s + 1, false);
            }
            return;
        }
        // Strang, merged: D/2 S D S ... D S D/2
        for (int s = 0; s < nz; ++s) {
            load_screen(s);
            for (auto& f : fields) {
                diffract(f, s == 0 ? half_ : full_);
                apply_screen(f);
            }
            if (s + 1 < nz) observe(s + 1, true);
        }
        for (auto& f : fields) diffract(f, half_);
        observe(nz, false);
    }

private:
    TransverseGrid grid_;
    PropagationPlan plan_;
    std::optional<ScreenSynthesizer> synth_;
    std::vector<cplx> full_;
    std::vector<cplx> half_;
};

/// One realization of the transmitted field for realization index `realization`
/// of master seed `seed`.
inline ComplexField propagate(const ComplexField& f, const PropagationPlan& plan, std::uint64_t seed,
                              std::uint64_t realization) {
    SplitStepPropagator p(f.grid, plan);
    std::vector<std::vector<cplx>> fields{f.values};
    detail::to_native(f.grid, fields[0]);
    p.run(fields, p.path(seed, realization));
    detail::to_centered(f.grid, fields[0]);
    return ComplexField(f.grid, std::move(fields[0]));
}

/// Propagation along an explicitly supplied increment path (FFT-native order).
inline ComplexField propagate_along(const ComplexField& f, const PropagationPlan& plan, const IncrementSource& src) {
    SplitStepPropagator p(f.grid, plan);
    std::vector<std::vector<cplx>> fields{f.values};
    detail::to_native(f.grid, fields[0]);
    p.run(fields, src);
    detail::to_centered(f.grid, fields[0]);
    return ComplexField(f.grid, std::move(fields[0]));
}

}  // namespace speckle
