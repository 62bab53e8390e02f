#pragma once

// Two-stage phase retrieval: offset covariance -> |U^|^2 -> U.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdint>
#include <limits>
#include <numbers>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "speckle/error.hpp"
#include "speckle/estimator.hpp"
#include "speckle/fft.hpp"
#include "speckle/parallel.hpp"
#include "speckle/rng.hpp"

namespace speckle {

/// Uniform lattice of n points per axis, centered index c = i - n/2 (any n).
struct ScanLattice {
    int dim = 1;
    int n = 0;
    double step = 1.0;

    [[nodiscard]] std::size_t size() const { return dim == 1 ? static_cast<std::size_t>(n) : static_cast<std::size_t>(n) * n; }
    [[nodiscard]] double coord(int i) const { return (i - n / 2) * step; }
    [[nodiscard]] Vec2 point(std::size_t j) const {
        if (dim == 1) return {coord(static_cast<int>(j)), 0.0};
        return {coord(static_cast<int>(j % n)), coord(static_cast<int>(j / n))};
    }
    /// Lattice of the conjugate variable (spacing 2 pi / (n step)).
    [[nodiscard]] ScanLattice dual() const { return {dim, n, 2.0 * std::numbers::pi / (n * step)}; }
    [[nodiscard]] FftShape fft_shape() const { return dim == 1 ? FftShape{n, 0} : FftShape{n, n}; }
    void validate() const {
        if (dim != 1 && dim != 2) throw PreconditionError("scan lattice: dim must be 1 or 2");
        if (n < 2) throw PreconditionError("scan lattice: need at least 2 points per axis");
        if (!(step > 0.0)) throw PreconditionError("scan lattice: step must be positive");
    }
};

namespace detail {

/// Moves a centered array into FFT-native order (forward) or back.
template <class T>
void recenter_axes(const ScanLattice& L, std::vector<T>& v, bool to_native) {
    const int n = L.n;
    const int s = to_native ? n / 2 : n - n / 2;
    if (L.dim == 1) {
        std::rotate(v.begin(), v.begin() + s, v.end());
        return;
    }
    for (int r = 0; r < n; ++r) std::rotate(v.begin() + r * n, v.begin() + r * n + s, v.begin() + (r + 1) * n);
    std::vector<T> tmp(v.size());
    for (int r = 0; r < n; ++r) std::copy_n(v.begin() + static_cast<std::size_t>((r + s) % n) * n, n, tmp.begin() + static_cast<std::size_t>(r) * n);
    v.swap(tmp);
}

/// Centered-in, centered-out unnormalized DFT.
inline std::vector<cplx> centered_dft(const ScanLattice& L, std::vector<cplx> v, FftDirection dir) {
    recenter_axes(L, v, true);
    fft_inplace(L.fft_shape(), v, dir);
    recenter_axes(L, v, false);
    return v;
}

}  // namespace detail

/// Covariance sampled over offsets r' - r on a lattice.
struct OffsetMap {
    ScanLattice lattice;
    std::vector<double> values;
};

/// Places a pair map on the offset lattice. Pair maps that contain the same
/// offset more than once need `average_midpoints`.
inline OffsetMap reduce_to_offsets(const CovarianceMap& map, const ScanLattice& lattice, bool average_midpoints) {
    lattice.validate();
    const auto off = covariance_by_offset(map, 1e-9 * lattice.step);
    if (!average_midpoints)
        for (int c : off.counts)
            if (c > 1) throw PreconditionError("covariance_to_modulus: shift pairs share offsets; enable mid-point averaging");
    OffsetMap out{lattice, std::vector<double>(lattice.size(), 0.0)};
    std::vector<int> seen(lattice.size(), 0);
    for (std::size_t k = 0; k < off.offsets.size(); ++k) {
        const double ix = off.offsets[k].x / lattice.step, iy = off.offsets[k].y / lattice.step;
        const long cx = std::lround(ix), cy = std::lround(iy);
        if (std::abs(ix - cx) > 1e-6 || std::abs(iy - cy) > 1e-6)
            throw PreconditionError("covariance_to_modulus: offset is not on the lattice");
        const long i = cx + lattice.n / 2, j = cy + lattice.n / 2;
        if (i < 0 || i >= lattice.n || (lattice.dim == 2 && (j < 0 || j >= lattice.n)) || (lattice.dim == 1 && cy != 0)) continue;
        const std::size_t flat = lattice.dim == 1 ? static_cast<std::size_t>(i) : static_cast<std::size_t>(j) * lattice.n + i;
        out.values[flat] = off.values[k];
        seen[flat] = 1;
    }
    if (std::find(seen.begin(), seen.end(), 0) != seen.end())
        throw PreconditionError("covariance_to_modulus: the pair map does not cover every lattice offset");
    return out;
}

/// Smallest centered lattice holding every offset of a pair map: step is the
/// smallest nonzero offset component, n = 2 max|offset| / step.
inline ScanLattice offset_lattice(const CovarianceMap& map) {
    if (map.size() < 2) throw PreconditionError("offset_lattice: need at least 2 shifts");
    double step = std::numeric_limits<double>::infinity(), reach = 0.0;
    bool two_d = false;
    for (const auto& a : map.shifts)
        for (const auto& b : map.shifts)
            for (double c : {b.x - a.x, b.y - a.y}) {
                if (std::abs(c) > 0.0) step = std::min(step, std::abs(c));
                reach = std::max(reach, std::abs(c));
            }
    for (const auto& a : map.shifts) two_d = two_d || a.y != map.shifts.front().y;
    if (!std::isfinite(step)) throw PreconditionError("offset_lattice: all shifts coincide");
    const double m = reach / step;
    if (std::abs(m - std::round(m)) > 1e-6) throw PreconditionError("offset_lattice: offsets are not multiples of one step");
    ScanLattice L{two_d ? 2 : 1, 2 * static_cast<int>(std::lround(m)), step};
    L.validate();
    return L;
}

struct ModulusData {
    ScanLattice lattice;
    std::vector<double> values;  ///< sqrt(max(C, 0)), peak 1
    double clipped_mass = 0.0;   ///< sum of |negative entries| / sum |entries|
};

inline ModulusData covariance_to_modulus(const OffsetMap& map) {
    map.lattice.validate();
    if (map.values.size() != map.lattice.size()) throw PreconditionError("covariance_to_modulus: size mismatch");
    ModulusData out{map.lattice, std::vector<double>(map.values.size(), 0.0), 0.0};
    double neg = 0.0, tot = 0.0, peak = 0.0;
    for (std::size_t j = 0; j < map.values.size(); ++j) {
        const double v = map.values[j];
        tot += std::abs(v);
        if (v < 0.0) neg -= v;
        out.values[j] = std::sqrt(std::max(v, 0.0));
        peak = std::max(peak, out.values[j]);
    }
    out.clipped_mass = tot > 0.0 ? neg / tot : 0.0;
    if (peak > 0.0)
        for (auto& v : out.values) v /= peak;
    return out;
}

struct RetrievalOptions {
    int hio_iterations = 40;
    int er_iterations = 10;
    int cycles = 10;  ///< HIO+ER rounds per restart
    int restarts = 20;
    double beta = 0.9;
    double residual_threshold = 1e-2;
    std::uint64_t seed = 0;
    int workers = 0;

    void validate() const {
        if (hio_iterations < 0 || er_iterations < 1 || cycles < 1 || restarts < 1)
            throw PreconditionError("retrieval: iteration budgets must be >= 1");
        if (!(beta > 0.0 && beta <= 1.0)) throw PreconditionError("retrieval: beta must lie in (0, 1]");
    }
};

struct RetrievalResult {
    ScanLattice lattice;           ///< object-domain lattice
    std::vector<double> object;    ///< real, non-negative, zero outside the support
    double residual = 0.0;         ///< ||  |F g| - data || / || data ||
    bool converged = false;        ///< residual <= threshold
    int best_restart = 0;
    int iterations = 0;            ///< iterations used by the best restart
    int fixed_point_iteration = -1;  ///< first iteration with a stationary residual (< 1e-12 change)
    int er_violations = 0;         ///< ER steps that increased the residual (expected 0)
    std::vector<double> restart_residuals;

    [[nodiscard]] nlohmann::json to_json() const {
        return {{"residual", residual},
                {"converged", converged},
                {"best_restart", best_restart},
                {"iterations", iterations},
                {"fixed_point_iteration", fixed_point_iteration},
                {"er_violations", er_violations},
                {"restart_residuals", restart_residuals}};
    }
};

namespace detail {

struct RestartOutcome {
    std::vector<double> object;
    double residual = std::numeric_limits<double>::infinity();
    int iterations = 0;
    int fixed_point = -1;
    int er_violations = 0;
};

/// Fienup HIO/ER for a real non-negative object with Fourier modulus `data`
/// (both centered on `L`; the object lives on the dual of the data lattice).
inline RestartOutcome run_restart(const ScanLattice& L, const std::vector<double>& data, const std::vector<char>& support,
                                  const RetrievalOptions& opt, std::uint64_t restart) {
    const std::size_t N = data.size();
    double dnorm = 0.0;
    for (double v : data) dnorm += v * v;
    dnorm = std::sqrt(dnorm);
    RestartOutcome out;
    if (dnorm == 0.0) {
        out.object.assign(N, 0.0);
        out.residual = 0.0;
        out.fixed_point = 0;
        return out;
    }
    RngStream rng(opt.seed, {restart, static_cast<std::uint64_t>(Purpose::restart)});
    std::vector<cplx> G(N);
    // restart 0 starts from zero phase, the rest from uniform random phases
    for (std::size_t j = 0; j < N; ++j) G[j] = std::polar(data[j], restart == 0 ? 0.0 : 2.0 * std::numbers::pi * rng.uniform());
    const double inv = 1.0 / static_cast<double>(N);
    auto to_object = [&](const std::vector<cplx>& spec) {
        auto g = centered_dft(L, spec, FftDirection::backward);
        std::vector<double> r(N);
        for (std::size_t j = 0; j < N; ++j) r[j] = g[j].real() * inv;
        return r;
    };
    auto project = [&](const std::vector<double>& g) {
        std::vector<double> p(N);
        for (std::size_t j = 0; j < N; ++j) p[j] = support[j] && g[j] > 0.0 ? g[j] : 0.0;
        return p;
    };
    // residual of the Fourier transform of g and its modulus-projected replacement
    auto fourier_step = [&](const std::vector<double>& g, double& residual) {
        std::vector<cplx> F(g.begin(), g.end());
        F = centered_dft(L, std::move(F), FftDirection::forward);
        double e = 0.0;
        for (std::size_t j = 0; j < N; ++j) {
            const double a = std::abs(F[j]);
            e += (a - data[j]) * (a - data[j]);
            F[j] = a > 0.0 ? F[j] * (data[j] / a) : cplx(data[j], 0.0);
        }
        residual = std::sqrt(e) / dnorm;
        return to_object(F);
    };

    std::vector<double> g = project(to_object(G));
    double res = 0.0, prev = std::numeric_limits<double>::infinity();
    int it = 0;
    for (int c = 0; c < opt.cycles; ++c) {
        for (int h = 0; h < opt.hio_iterations; ++h, ++it) {
            const auto gp = fourier_step(g, res);
            for (std::size_t j = 0; j < N; ++j) g[j] = support[j] && gp[j] > 0.0 ? gp[j] : g[j] - opt.beta * gp[j];
        }
        // ER from the constraint-projected HIO state
        g = project(g);
        double er_prev = std::numeric_limits<double>::infinity();
        for (int e = 0; e < opt.er_iterations; ++e, ++it) {
            const auto gp = fourier_step(g, res);
            if (res > er_prev * (1.0 + 1e-10) + 1e-14) ++out.er_violations;
            er_prev = res;
            if (out.fixed_point < 0 && std::abs(prev - res) < 1e-12) out.fixed_point = it;
            prev = res;
            g = project(gp);
        }
        double final_res = 0.0;
        (void)fourier_step(g, final_res);
        res = final_res;
        if (res < 1e-12) break;
    }
    out.object = std::move(g);
    out.residual = res;
    out.iterations = it;
    return out;
}

}  // namespace detail

/// Real non-negative object on lattice.dual() whose transform modulus matches
/// `data`; `support` (object domain) may be empty for no support constraint.
inline RetrievalResult phase_retrieve(const ScanLattice& data_lattice, const std::vector<double>& data, std::vector<char> support,
                                      const RetrievalOptions& opt) {
    data_lattice.validate();
    opt.validate();
    if (data.size() != data_lattice.size()) throw PreconditionError("retrieval: data size mismatch");
    for (double v : data)
        if (!(v >= 0.0)) throw PreconditionError("retrieval: modulus data must be non-negative");
    if (support.empty()) support.assign(data.size(), 1);
    if (support.size() != data.size()) throw PreconditionError("retrieval: support size mismatch");
    const ScanLattice obj = data_lattice.dual();
    std::vector<detail::RestartOutcome> runs(static_cast<std::size_t>(opt.restarts));
    parallel_for(runs.size(), opt.workers, [&](std::size_t r) { runs[r] = detail::run_restart(obj, data, support, opt, r); });
    RetrievalResult res;
    res.lattice = obj;
    std::size_t best = 0;
    for (std::size_t r = 0; r < runs.size(); ++r) {
        res.restart_residuals.push_back(runs[r].residual);
        if (runs[r].residual < runs[best].residual - 1e-12) best = r;
        res.er_violations += runs[r].er_violations;
    }
    res.best_restart = static_cast<int>(best);
    res.object = std::move(runs[best].object);
    res.residual = runs[best].residual;
    res.iterations = runs[best].iterations;
    res.fixed_point_iteration = runs[best].fixed_point;
    res.converged = res.residual <= opt.residual_threshold;
    return res;
}

/// Stage 1: |U^|^2 on the dual lattice of the offset scan.
inline RetrievalResult recover_power_spectrum(const ModulusData& modulus, const RetrievalOptions& opt = {},
                                              std::vector<char> support = {}) {
    return phase_retrieve(modulus.lattice, modulus.values, std::move(support), opt);
}

/// Support estimate for U: the region where |V| >= 2% of its peak has twice
/// the mask extent, so its extent is halved (centered at the origin).
inline std::vector<char> estimate_support(const ModulusData& modulus, double threshold = 0.02) {
    const auto& L = modulus.lattice;
    const double peak = *std::max_element(modulus.values.begin(), modulus.values.end());
    double ext = 0.0;
    for (std::size_t j = 0; j < modulus.values.size(); ++j)
        if (modulus.values[j] >= threshold * peak) ext = std::max(ext, L.point(j).norm());
    const double half = 0.5 * ext + 0.5 * L.step;
    std::vector<char> s(L.size());
    for (std::size_t j = 0; j < s.size(); ++j) s[j] = L.point(j).norm() <= half ? 1 : 0;
    return s;
}

struct MaskRecovery {
    ScanLattice lattice;
    std::vector<double> mask;  ///< real, non-negative, zero outside support
    std::vector<char> support;
    RetrievalResult stats;
};

/// Stage 2: U (zero phase assumed) from |U^| sampled on `spectrum_lattice`.
inline MaskRecovery recover_mask(const ScanLattice& spectrum_lattice, const std::vector<double>& abs_uhat, std::vector<char> support,
                                 const RetrievalOptions& opt = {}) {
    MaskRecovery out;
    out.stats = phase_retrieve(spectrum_lattice, abs_uhat, support, opt);
    out.lattice = out.stats.lattice;
    out.mask = out.stats.object;
    out.support = support.empty() ? std::vector<char>(out.mask.size(), 1) : std::move(support);
    return out;
}

/// |V(delta)| = |sum_k P(k) exp(i k delta) dk| on the dual of the spectrum lattice, peak 1.
inline ModulusData modulus_from_spectrum(const ScanLattice& spectrum_lattice, const std::vector<double>& power) {
    std::vector<cplx> v(power.begin(), power.end());
    v = detail::centered_dft(spectrum_lattice, std::move(v), FftDirection::backward);
    ModulusData m{spectrum_lattice.dual(), std::vector<double>(v.size()), 0.0};
    double peak = 0.0;
    for (std::size_t j = 0; j < v.size(); ++j) peak = std::max(peak, m.values[j] = std::abs(v[j]));
    if (peak > 0.0)
        for (auto& x : m.values) x /= peak;
    return m;
}

/// |U^(k)| on the dual lattice for a mask sampled on `lattice`.
inline std::vector<double> spectrum_modulus(const ScanLattice& lattice, const std::vector<cplx>& u) {
    auto v = detail::centered_dft(lattice, u, FftDirection::forward);
    std::vector<double> out(v.size());
    for (std::size_t j = 0; j < v.size(); ++j) out[j] = std::abs(v[j]) * std::pow(lattice.step, lattice.dim);
    return out;
}

struct Registration {
    std::vector<cplx> aligned;
    double error = 0.0;  ///< ||aligned - truth|| / ||truth||
    Vec2 shift;          ///< lattice shift applied (in nodes)
    bool mirrored = false;
    bool conjugated = false;
    cplx scale{1.0, 0.0};
};

/// Best alignment of `candidate` to `truth` over circular lattice shifts,
/// inversion x -> -x, complex conjugation and a least-squares complex scale.
inline Registration register_and_score(const ScanLattice& L, const std::vector<cplx>& candidate, const std::vector<cplx>& truth) {
    L.validate();
    if (candidate.size() != L.size() || truth.size() != L.size()) throw PreconditionError("register_and_score: size mismatch");
    const int n = L.n;
    auto index = [&](int ix, int iy) { return L.dim == 1 ? static_cast<std::size_t>(ix) : static_cast<std::size_t>(iy) * n + ix; };
    double tnorm = 0.0;
    for (const auto& t : truth) tnorm += std::norm(t);
    Registration best;
    best.error = std::numeric_limits<double>::infinity();
    if (tnorm == 0.0) {
        best.aligned.assign(L.size(), cplx{});
        best.error = 0.0;
        return best;
    }
    // truth in native order for the correlation
    std::vector<cplx> T = truth;
    detail::recenter_axes(L, T, true);
    fft_inplace(L.fft_shape(), T, FftDirection::forward);
    for (int variant = 0; variant < 4; ++variant) {
        const bool mirror = variant & 1, conj = variant & 2;
        std::vector<cplx> a(L.size());
        for (std::size_t j = 0; j < a.size(); ++j) {
            const int ix = L.dim == 1 ? static_cast<int>(j) : static_cast<int>(j % n);
            const int iy = L.dim == 1 ? 0 : static_cast<int>(j / n);
            // centered index c -> -c is i -> (2 (n/2) - i) mod n
            const int mx = mirror ? ((2 * (n / 2) - ix) % n + n) % n : ix;
            const int my = mirror && L.dim == 2 ? ((2 * (n / 2) - iy) % n + n) % n : iy;
            a[j] = conj ? std::conj(candidate[index(mx, my)]) : candidate[index(mx, my)];
        }
        double anorm = 0.0;
        for (const auto& v : a) anorm += std::norm(v);
        if (anorm == 0.0) continue;
        std::vector<cplx> A = a;
        detail::recenter_axes(L, A, true);
        fft_inplace(L.fft_shape(), A, FftDirection::forward);
        // xc[s] = sum_x conj(a(x - s)) t(x)
        std::vector<cplx> xc(L.size());
        for (std::size_t j = 0; j < xc.size(); ++j) xc[j] = T[j] * std::conj(A[j]);
        fft_inplace(L.fft_shape(), xc, FftDirection::backward);
        std::size_t arg = 0;
        for (std::size_t j = 1; j < xc.size(); ++j)
            if (std::abs(xc[j]) > std::abs(xc[arg])) arg = j;
        const cplx overlap = xc[arg] / static_cast<double>(L.size());
        const double err2 = std::max(0.0, tnorm - std::norm(overlap) / anorm);
        const double err = std::sqrt(err2 / tnorm);
        if (err < best.error) {
            const int sx = L.dim == 1 ? static_cast<int>(arg) : static_cast<int>(arg % n);
            const int sy = L.dim == 1 ? 0 : static_cast<int>(arg / n);
            best.error = err;
            best.mirrored = mirror;
            best.conjugated = conj;
            best.scale = overlap / anorm;
            best.shift = {static_cast<double>(sx <= n / 2 ? sx : sx - n), static_cast<double>(sy <= n / 2 ? sy : sy - n)};
            best.aligned.assign(L.size(), cplx{});
            for (std::size_t j = 0; j < a.size(); ++j) {
                const int ix = L.dim == 1 ? static_cast<int>(j) : static_cast<int>(j % n);
                const int iy = L.dim == 1 ? 0 : static_cast<int>(j / n);
                best.aligned[index((ix + sx) % n, (iy + sy) % n)] = best.scale * a[j];
            }
        }
    }
    // direct error of the aligned candidate (guards the correlation arithmetic)
    double e = 0.0;
    for (std::size_t j = 0; j < truth.size(); ++j) e += std::norm(best.aligned[j] - truth[j]);
    best.error = std::sqrt(e / tnorm);
    return best;
}

inline Registration register_and_score(const ScanLattice& L, const std::vector<double>& candidate, const std::vector<double>& truth) {
    return register_and_score(L, std::vector<cplx>(candidate.begin(), candidate.end()), std::vector<cplx>(truth.begin(), truth.end()));
}

struct PipelineResult {
    ModulusData modulus;
    RetrievalResult spectrum;  ///< stage 1, |U^|^2
    MaskRecovery mask;         ///< stage 2
};

/// Offset map -> |V| -> |U^|^2 -> U with an estimated support.
inline PipelineResult retrieve_mask(const OffsetMap& map, const RetrievalOptions& opt = {}, double support_threshold = 0.02) {
    PipelineResult out;
    out.modulus = covariance_to_modulus(map);
    out.spectrum = recover_power_spectrum(out.modulus, opt);
    std::vector<double> abs_uhat(out.spectrum.object.size());
    for (std::size_t j = 0; j < abs_uhat.size(); ++j) abs_uhat[j] = std::sqrt(std::max(out.spectrum.object[j], 0.0));
    out.mask = recover_mask(out.spectrum.lattice, abs_uhat, estimate_support(out.modulus, support_threshold), opt);
    return out;
}

}  // namespace speckle
