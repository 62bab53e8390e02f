#pragma once

// Closed-form moment formulas, length scales and regime classification in
// physical units.

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "speckle/error.hpp"
#include "speckle/grid.hpp"
#include "speckle/medium.hpp"
#include "speckle/propagator.hpp"
#include "speckle/quadrature.hpp"

namespace speckle {

/// Transverse vector; y is ignored in d = 1.
struct Vec2 {
    double x = 0.0;
    double y = 0.0;
    [[nodiscard]] double norm2() const { return x * x + y * y; }
    [[nodiscard]] double norm() const { return std::sqrt(norm2()); }
    friend Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
    friend Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
    friend Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
    friend double dot(Vec2 a, Vec2 b) { return a.x * b.x + a.y * b.y; }
};

// ---- length scales -----------------------------------------------------------

inline double scattering_mean_free_path(double gamma0_zero, double k0) {
    if (!(gamma0_zero > 0.0) || !(k0 > 0.0)) throw PreconditionError("scattering_mean_free_path: inputs must be positive");
    return 8.0 / (gamma0_zero * k0 * k0);
}

inline double speckle_radius(double gamma2bar, double k0, double ell) {
    if (!(gamma2bar > 0.0) || !(k0 > 0.0) || !(ell > 0.0)) throw PreconditionError("speckle_radius: inputs must be positive");
    return 2.0 / std::sqrt(gamma2bar * k0 * k0 * ell);
}

inline double beam_spread(double gamma2bar, double ell) {
    if (!(gamma2bar > 0.0) || !(ell > 0.0)) throw PreconditionError("beam_spread: inputs must be positive");
    return std::sqrt(gamma2bar * ell * ell * ell / 6.0);
}

/// Blur radius R of the observation-integrated covariance for pixel size rho_o.
inline double blur_radius(double rho_o, const MediumModel& m, double k0, double ell) {
    const double rho = speckle_radius(m.gamma2bar(), k0, ell);
    const double t = rho_o * rho_o / (rho * rho);
    return std::sqrt(m.gamma2bar() * ell * ell * ell / 6.0 * (1.0 + t) / (1.0 + 4.0 * t));
}

inline double K_factor(double gamma0_zero, double k0, double z) {
    if (!(z >= 0.0)) throw PreconditionError("K_factor: z must be non-negative");
    return std::exp(-0.5 * k0 * k0 * gamma0_zero * z);
}

/// Pixel-attenuated prefactor (6 / (pi gamma2bar ell^3))^d (1 + rho_o^2/rho^2)^(-d/2).
inline double covariance_prefactor(int dim, double rho_o, const MediumModel& m, double k0, double ell) {
    const double base = 6.0 / (std::numbers::pi * m.gamma2bar() * ell * ell * ell);
    const double rho = speckle_radius(m.gamma2bar(), k0, ell);
    const double att = 1.0 + rho_o * rho_o / (rho * rho);
    return std::pow(base, dim) * std::pow(att, -0.5 * dim);
}

// ---- ray integrals and kernels -------------------------------------------------

/// int_0^ell gamma0(a z - y) dz for transverse vectors a and y.
inline double ray_integral(const MediumModel& m, Vec2 a, Vec2 y, double ell) {
    if (ell <= 0.0) return 0.0;
    if (m.kind() == MediumKind::gaussian) {
        const double lc = m.corr_length();
        const double a2 = a.norm2();
        const double s2 = std::numbers::sqrt2 * lc;
        if (a2 * ell * ell < 1e-24 * lc * lc) return ell * m.profile(y.norm());
        const double an = std::sqrt(a2);
        const double par = dot(a, y) / an;  // component of y along a
        const double perp2 = std::max(0.0, y.norm2() - par * par);
        const double along = lc * std::sqrt(std::numbers::pi / 2.0) / an *
                             (std::erf((an * ell - par) / s2) - std::erf(-par / s2));
        return m.gamma0_zero() * std::exp(-perp2 / (2.0 * lc * lc)) * along;
    }
    auto f = [&](double z) { return m.profile((z * a - y).norm()); };
    const double scale = std::max(a.norm() * ell, 1e-300);
    const int pieces = std::clamp(static_cast<int>(std::ceil(4.0 * scale / m.corr_length())), 1, 4096);
    double acc = 0.0;
    for (int p = 0; p < pieces; ++p)
        acc += integrate_or_throw(f, ell * p / pieces, ell * (p + 1) / pieces, 1e-12 * ell / pieces * m.gamma0_zero(),
                                  "ray_integral");
    return acc;
}

/// exp((k0^2/4) int_0^ell [gamma0(zeta z / k0 - y) - gamma0(0)] dz).
inline double transfer_kernel(const MediumModel& m, double k0, double ell, Vec2 zeta, Vec2 y = {}) {
    const double I = ray_integral(m, (1.0 / k0) * zeta, y, ell);
    return std::exp(0.25 * k0 * k0 * (I - m.gamma0_zero() * ell));
}

/// A(xi, zeta, z) for d = 1, by nested quadrature with absolute tolerance `tol`.
inline cplx A_kernel(double xi, double zeta, double z, const MediumModel& m, double k0, double tol = 1e-8) {
    if (z <= 0.0) return {0.0, 0.0};
    const double reach = m.kind() == MediumKind::gaussian ? 12.0 * m.corr_length() : m.table_extent();
    const double drift = zeta * z / k0;
    const double lo = std::min(0.0, -drift) - reach;
    const double hi = std::max(0.0, -drift) + reach;
    auto f = [&](double x) {
        const double I = ray_integral(m, {zeta / k0, 0.0}, {-x, 0.0}, z);
        return std::expm1(0.25 * k0 * k0 * I) * std::polar(1.0, -xi * x);
    };
    const int pieces = std::clamp(static_cast<int>(std::ceil((hi - lo) * (1.0 + std::abs(xi)) / m.corr_length())), 8, 20000);
    cplx acc{0.0, 0.0};
    for (int p = 0; p < pieces; ++p) {
        const double a = lo + (hi - lo) * p / pieces;
        const double b = lo + (hi - lo) * (p + 1) / pieces;
        acc += integrate_or_throw<cplx>(f, a, b, tol * 2.0 * std::numbers::pi / pieces, "A_kernel");
    }
    return acc / (2.0 * std::numbers::pi);
}

// ---- grid helpers ----------------------------------------------------------------

namespace detail {

/// Centered-order wavevector of flat index j.
inline Vec2 centered_k(const TransverseGrid& g, std::size_t j) {
    if (g.dim == 1) return {g.centered_wavenumber(static_cast<int>(j)), 0.0};
    return {g.centered_wavenumber(static_cast<int>(j % g.n)), g.centered_wavenumber(static_cast<int>(j / g.n))};
}

inline Vec2 centered_x(const TransverseGrid& g, std::size_t j) {
    if (g.dim == 1) return {g.coord(static_cast<int>(j)), 0.0};
    return {g.coord(static_cast<int>(j % g.n)), g.coord(static_cast<int>(j / g.n))};
}

/// (2 pi)^-d sum_k S(k) exp(i k.x) dk^d at an arbitrary point x.
inline cplx inverse_at(const ComplexField& spec, Vec2 x) {
    cplx acc{0.0, 0.0};
    for (std::size_t j = 0; j < spec.values.size(); ++j) acc += spec.values[j] * std::polar(1.0, dot(centered_k(spec.grid, j), x));
    return acc * spec.grid.spectral_cell_volume();
}

/// W'(Y) = U(Y + delta) conj(U(Y)) on the grid (delta grid-aligned).
inline ComplexField lag_product(const ComplexField& u, Vec2 delta) {
    const auto shifted = make_incident(u, -delta.x, -delta.y);  // shifted(Y) = U(Y + delta)
    ComplexField w(u.grid);
    for (std::size_t j = 0; j < w.values.size(); ++j) w.values[j] = shifted.values[j] * std::conj(u.values[j]);
    return w;
}

inline ComplexField intensity_field(const ComplexField& u) {
    ComplexField p(u.grid);
    for (std::size_t j = 0; j < p.values.size(); ++j) p.values[j] = std::norm(u.values[j]);
    return p;
}

}  // namespace detail

// ---- mean intensity ----------------------------------------------------------------

/// General scintillation mean intensity over the whole grid for incident shift r.
inline RealField mean_intensity_map(const ComplexField& u, Vec2 r, const MediumModel& m, double k0, double ell) {
    auto spec = forward_transform(detail::intensity_field(make_incident(u, r.x, r.y)));
    for (std::size_t j = 0; j < spec.values.size(); ++j) spec.values[j] *= transfer_kernel(m, k0, ell, detail::centered_k(u.grid, j));
    const auto back = inverse_transform(spec);
    RealField out(u.grid);
    for (std::size_t j = 0; j < out.values.size(); ++j) out.values[j] = back.values[j].real();
    return out;
}

/// General scintillation mean intensity at observation point x0.
inline double mean_intensity_scintillation(const ComplexField& u, Vec2 r, Vec2 x0, const MediumModel& m, double k0, double ell) {
    auto spec = forward_transform(detail::intensity_field(make_incident(u, r.x, r.y)));
    for (std::size_t j = 0; j < spec.values.size(); ++j) spec.values[j] *= transfer_kernel(m, k0, ell, detail::centered_k(u.grid, j));
    return detail::inverse_at(spec, x0).real();
}

/// Strong-scattering mean intensity: |U(. - r)|^2 convolved with a Gaussian of
/// variance gamma2bar ell^3 / 12 per axis, evaluated at x0.
inline double mean_intensity_strong(const ComplexField& u, Vec2 r, Vec2 x0, const MediumModel& m, double ell) {
    const auto& g = u.grid;
    const double s2 = m.gamma2bar() * ell * ell * ell / 12.0;
    const double norm = std::pow(2.0 * std::numbers::pi * s2, -0.5 * g.dim);
    double acc = 0.0;
    for (std::size_t j = 0; j < u.values.size(); ++j) {
        const Vec2 d = detail::centered_x(g, j) - x0 + r;
        acc += std::norm(u.values[j]) * std::exp(-d.norm2() / (2.0 * s2));
    }
    return norm * acc * g.cell_volume();
}

// ---- intensity covariance ------------------------------------------------------------

/// Statistical intensity covariance for shifts r, r' at mid observation point X0
/// and observation offset Y0. `strong` selects the strong-scattering closed form.
inline double covariance_scintillation(const ComplexField& u, Vec2 r, Vec2 rp, Vec2 X0, Vec2 Y0, const MediumModel& m, double k0,
                                       double ell, bool strong) {
    const auto& g = u.grid;
    const Vec2 delta = rp - r;
    if (strong) {
        const Vec2 mid = 0.5 * (r + rp);
        const double g2 = m.gamma2bar();
        const double L3 = ell * ell * ell;
        const auto w = detail::lag_product(u, delta);  // W(X) = W'(X - delta/2)
        cplx acc{0.0, 0.0};
        for (std::size_t j = 0; j < w.values.size(); ++j) {
            const Vec2 X = detail::centered_x(g, j) + 0.5 * delta;
            const Vec2 d = X - X0 + mid;
            acc += w.values[j] * std::exp(-6.0 * d.norm2() / (g2 * L3)) * std::polar(1.0, -1.5 * k0 / ell * dot(Y0, d));
        }
        acc *= g.cell_volume();
        const double pref = std::pow(6.0 / (std::numbers::pi * g2 * L3), g.dim);
        return pref * std::norm(acc) * std::exp(-g2 * k0 * k0 * ell * Y0.norm2() / 16.0);
    }
    const auto w = detail::lag_product(u, delta);
    auto spec = forward_transform(w);
    for (std::size_t j = 0; j < spec.values.size(); ++j) spec.values[j] *= transfer_kernel(m, k0, ell, detail::centered_k(g, j), Y0);
    const Vec2 y = X0 - rp;
    const cplx first = detail::inverse_at(spec, y);
    const cplx base = detail::inverse_at(forward_transform(w), y);
    const double K = std::exp(-0.5 * k0 * k0 * m.gamma0_zero() * ell);
    return std::norm(first) - K * std::norm(base);
}

/// Mask autocorrelation V(q) = int U(X + q) conj(U(X)) dX for a grid-aligned lag q.
inline cplx mask_autocorrelation(const ComplexField& u, Vec2 q) {
    const auto w = detail::lag_product(u, q);
    cplx acc{0.0, 0.0};
    for (const auto& v : w.values) acc += v;
    return acc * u.grid.cell_volume();
}

/// V at every grid lag (centered order), by FFT; exact when the mask fits in half the box.
inline ComplexField mask_autocorrelation_map(const ComplexField& u) {
    auto spec = forward_transform(u);
    for (auto& v : spec.values) v = std::norm(v);
    return inverse_transform(spec);
}

/// Z^{rho_o} |V(delta)|^2.
inline double predicted_covariance_map(const ComplexField& u, Vec2 delta, double rho_o, const MediumModel& m, double k0, double ell) {
    return covariance_prefactor(u.grid.dim, rho_o, m, k0, ell) * std::norm(mask_autocorrelation(u, delta));
}

/// Observation-integrated covariance with Gaussian blur of radius R (pixel size rho_o).
inline double blurred_covariance(const ComplexField& u, Vec2 delta, double rho_o, const MediumModel& m, double k0, double ell) {
    const auto& g = u.grid;
    const double rho = speckle_radius(m.gamma2bar(), k0, ell);
    const double R = blur_radius(rho_o, m, k0, ell);
    const double pref = std::pow(3.0 / (std::numbers::pi * m.gamma2bar() * ell * ell * ell * (1.0 + rho_o * rho_o / (rho * rho))),
                                 0.5 * g.dim);
    const auto spec = forward_transform(detail::lag_product(u, delta));
    double acc = 0.0;
    for (std::size_t j = 0; j < spec.values.size(); ++j) {
        const double k2 = detail::centered_k(g, j).norm2();
        acc += std::norm(spec.values[j]) * std::exp(-0.5 * R * R * k2);
    }
    const double ghat0 = std::pow(2.0 * std::numbers::pi * R * R, 0.5 * g.dim);
    return pref * ghat0 * acc * g.spectral_cell_volume();
}

// ---- spot dancing ----------------------------------------------------------------

struct SpotDancingPrediction {
    double centroid_variance = 0.0;  ///< per axis
    ComplexField field;              ///< homogeneous-medium transmitted field E0
};

inline SpotDancingPrediction spot_dancing_predictions(const ComplexField& u, Vec2 r, double k0, double ell, double gamma2bar) {
    SpotDancingPrediction p;
    p.centroid_variance = gamma2bar * ell * ell * ell / 12.0;
    p.field = free_space_propagate(make_incident(u, r.x, r.y), k0, ell);
    return p;
}

/// Spatial autocovariance of |E0|^2 at lag q over a camera of measure `aperture`.
inline double spot_dancing_covariance(const ComplexField& e0, Vec2 q, double aperture) {
    const auto& g = e0.grid;
    const auto shifted = make_incident(e0, q.x, q.y);  // E0(x - q)
    double cross = 0.0, mass = 0.0;
    for (std::size_t j = 0; j < e0.values.size(); ++j) {
        cross += std::norm(e0.values[j]) * std::norm(shifted.values[j]);
        mass += std::norm(e0.values[j]);
    }
    cross *= g.cell_volume();
    mass *= g.cell_volume();
    return cross / aperture - (mass / aperture) * (mass / aperture);
}

// ---- regime classification ----------------------------------------------------------

struct MaskGeometry {
    Vec2 center;
    double rms_radius = 0.0;  ///< sqrt((2/d) <|x - c|^2>), equals r0 for exp(-|x|^2/(2 r0^2))
    double extent = 0.0;      ///< max |x - c| where |U|^2 >= 1e-4 peak
};

inline MaskGeometry mask_geometry(const ComplexField& u) {
    const auto& g = u.grid;
    double m0 = 0.0, peak = 0.0;
    Vec2 c;
    for (std::size_t j = 0; j < u.values.size(); ++j) {
        const double p = std::norm(u.values[j]);
        m0 += p;
        c = c + p * detail::centered_x(g, j);
        peak = std::max(peak, p);
    }
    if (!(m0 > 0.0)) throw PreconditionError("mask_geometry: mask has zero energy");
    c = (1.0 / m0) * c;
    double m2 = 0.0, ext = 0.0;
    for (std::size_t j = 0; j < u.values.size(); ++j) {
        const double p = std::norm(u.values[j]);
        const double d2 = (detail::centered_x(g, j) - c).norm2();
        m2 += p * d2;
        if (p >= 1e-4 * peak) ext = std::max(ext, std::sqrt(d2));
    }
    return {c, std::sqrt(2.0 / g.dim * m2 / m0), ext};
}

struct RegimeInputs {
    double mask_radius = 1.0;    ///< r_U
    double camera_radius = 1.0;  ///< R_A
    double pixel = 0.0;          ///< rho_o
    double max_shift = 0.0;      ///< largest |r|
    double k0 = 1.0;
    double ell = 1.0;
};

struct RegimeReport {
    double ell_sca = 0.0;
    double rho_speckle = 0.0;
    double beam_spread = 0.0;
    double ell_over_ell_sca = 0.0;
    double rU_over_lc = 0.0;
    double rA_over_rho = 0.0;
    double rU_over_spread = 0.0;
    double rA_over_spread = 0.0;
    double shift_over_spread = 0.0;
    bool camera_condition = false;  ///< R_A >= 10 sqrt(rho_o^2 + rho^2)
    std::string classification;

    [[nodiscard]] nlohmann::json to_json() const {
        return {{"ell_sca", ell_sca},
                {"rho_speckle", rho_speckle},
                {"beam_spread", beam_spread},
                {"ell_over_ell_sca", ell_over_ell_sca},
                {"rU_over_lc", rU_over_lc},
                {"rA_over_rho", rA_over_rho},
                {"rU_over_spread", rU_over_spread},
                {"rA_over_spread", rA_over_spread},
                {"shift_over_spread", shift_over_spread},
                {"camera_condition", camera_condition},
                {"classification", classification}};
    }
};

inline RegimeReport classify_regime(const RegimeInputs& in, const MediumModel& m) {
    RegimeReport r;
    r.ell_sca = scattering_mean_free_path(m.gamma0_zero(), in.k0);
    r.rho_speckle = speckle_radius(m.gamma2bar(), in.k0, in.ell);
    r.beam_spread = beam_spread(m.gamma2bar(), in.ell);
    r.ell_over_ell_sca = in.ell / r.ell_sca;
    r.rU_over_lc = in.mask_radius / m.corr_length();
    r.rA_over_rho = in.camera_radius / r.rho_speckle;
    r.rU_over_spread = in.mask_radius / r.beam_spread;
    r.rA_over_spread = in.camera_radius / r.beam_spread;
    r.shift_over_spread = in.max_shift / r.beam_spread;
    r.camera_condition = in.camera_radius >= 10.0 * std::hypot(in.pixel, r.rho_speckle);
    if (r.rU_over_lc < 1.0 / 3.0)
        r.classification = "spot-dancing";
    else if (r.rU_over_lc > 3.0)
        r.classification = r.ell_over_ell_sca >= 10.0 ? "scintillation-strong" : "scintillation-weak";
    else
        r.classification = "intermediate";
    return r;
}

}  // namespace speckle
