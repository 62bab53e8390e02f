#pragma once

// Random-medium statistics: the transverse covariance gamma0, derived
// quantities, and spectral synthesis of Brownian-field increments.

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "speckle/error.hpp"
#include "speckle/fft.hpp"
#include "speckle/grid.hpp"
#include "speckle/quadrature.hpp"
#include "speckle/rng.hpp"

namespace speckle {

enum class MediumKind { gaussian, tabulated };

/// Isotropic covariance model. For the tabulated kind, gamma0 is a radial
/// profile sampled at increasing offsets starting from 0, linearly interpolated.
class MediumModel {
public:
    static MediumModel gaussian(double gamma0_zero, double corr_length) {
        if (!(gamma0_zero > 0.0) || !std::isfinite(gamma0_zero))
            throw ConfigError("medium: gamma0(0) must be positive");
        if (!(corr_length > 0.0) || !std::isfinite(corr_length))
            throw ConfigError("medium: correlation length must be positive");
        MediumModel m;
        m.kind_ = MediumKind::gaussian;
        m.g0_ = gamma0_zero;
        m.lc_ = corr_length;
        m.g2bar_ = gamma0_zero / (corr_length * corr_length);
        return m;
    }

    static MediumModel tabulated(std::vector<double> offsets, std::vector<double> values) {
        if (offsets.size() != values.size() || offsets.size() < 4)
            throw ConfigError("medium: tabulated profile needs at least 4 (offset, value) rows");
        if (offsets.front() != 0.0) throw ConfigError("medium: tabulated offsets must start at 0");
        for (std::size_t i = 1; i < offsets.size(); ++i)
            if (!(offsets[i] > offsets[i - 1])) throw ConfigError("medium: tabulated offsets must be strictly increasing");
        if (!(values.front() > 0.0)) throw ConfigError("medium: tabulated gamma0(0) must be positive");
        for (double v : values)
            if (v > values.front()) throw ConfigError("medium: tabulated gamma0 must peak at offset 0");
        MediumModel m;
        m.kind_ = MediumKind::tabulated;
        m.g0_ = values.front();
        m.offsets_ = std::move(offsets);
        m.values_ = std::move(values);
        // gamma0(0) - v(x) = g2bar x^2 / 2 + c x^4 through the first two nonzero offsets.
        const double x1 = m.offsets_[1], x2 = m.offsets_[2];
        const double d1 = m.g0_ - m.values_[1], d2 = m.g0_ - m.values_[2];
        const double a = (d1 / (x1 * x1 * x1 * x1) - d2 / (x2 * x2 * x2 * x2)) /
                         (1.0 / (x1 * x1) - 1.0 / (x2 * x2));
        m.g2bar_ = 2.0 * a;
        if (!(m.g2bar_ > 0.0)) throw ConfigError("medium: tabulated profile has no positive curvature at 0");
        m.lc_ = std::sqrt(m.g0_ / m.g2bar_);
        m.check_spectrum();
        return m;
    }

    [[nodiscard]] MediumKind kind() const { return kind_; }
    [[nodiscard]] double gamma0_zero() const { return g0_; }
    [[nodiscard]] double corr_length() const { return lc_; }
    /// Curvature gamma0(x) = gamma0(0) - gamma2bar |x|^2 / 2 + O(|x|^4).
    [[nodiscard]] double gamma2bar() const { return g2bar_; }
    /// Largest tabulated offset (infinite for the Gaussian kind).
    [[nodiscard]] double table_extent() const {
        return kind_ == MediumKind::gaussian ? INFINITY : offsets_.back();
    }

    /// gamma0 at radial distance r. Tabulated models throw beyond their table.
    [[nodiscard]] double gamma0_at(double r) const {
        r = std::abs(r);
        if (kind_ == MediumKind::tabulated && r > offsets_.back()) {
            std::ostringstream os;
            os << "medium: offset " << r << " outside tabulated range [0, " << offsets_.back() << "]";
            throw OutOfRangeError(os.str());
        }
        return profile(r);
    }
    [[nodiscard]] double gamma0_at(double x, double y) const { return gamma0_at(std::hypot(x, y)); }

    /// gamma0 with the tabulated tail treated as zero beyond the table.
    [[nodiscard]] double profile(double r) const {
        r = std::abs(r);
        if (kind_ == MediumKind::gaussian) return g0_ * std::exp(-r * r / (2.0 * lc_ * lc_));
        if (r >= offsets_.back()) return 0.0;
        const auto it = std::upper_bound(offsets_.begin(), offsets_.end(), r);
        const auto j = static_cast<std::size_t>(it - offsets_.begin());
        const double t = (r - offsets_[j - 1]) / (offsets_[j] - offsets_[j - 1]);
        return values_[j - 1] + t * (values_[j] - values_[j - 1]);
    }

    /// gamma2(x) = int_0^1 gamma0(0) - gamma0(x s) ds.
    [[nodiscard]] double gamma2_at(double r) const {
        r = std::abs(r);
        if (r == 0.0) return 0.0;
        if (kind_ == MediumKind::gaussian) {
            const double u = r / lc_;
            return g0_ * (1.0 - std::sqrt(std::numbers::pi / 2.0) / u * std::erf(u / std::numbers::sqrt2));
        }
        auto f = [&](double s) { return g0_ - profile(r * s); };
        double acc = 0.0;
        // integrate piecewise between table knots for a smooth integrand
        double s0 = 0.0;
        for (std::size_t j = 1; j < offsets_.size() && s0 < 1.0; ++j) {
            const double s1 = std::min(1.0, offsets_[j] / r);
            if (s1 > s0) acc += integrate_or_throw(f, s0, s1, 1e-12, "gamma2");
            s0 = s1;
        }
        if (s0 < 1.0) acc += g0_ * (1.0 - s0);
        return acc;
    }
    [[nodiscard]] double gamma2_at(double x, double y) const { return gamma2_at(std::hypot(x, y)); }

    /// Fourier transform of gamma0 in dimension dim at wavenumber |k|.
    [[nodiscard]] double spectrum(double k, int dim) const {
        k = std::abs(k);
        if (kind_ == MediumKind::gaussian) {
            const double s = std::sqrt(2.0 * std::numbers::pi) * lc_;
            return g0_ * (dim == 1 ? s : s * s) * std::exp(-0.5 * k * k * lc_ * lc_);
        }
        double acc = 0.0;
        for (std::size_t j = 1; j < offsets_.size(); ++j) {
            const double a = offsets_[j - 1], b = offsets_[j];
            if (dim == 1) {
                // exact cosine transform of the linear segment p + q r
                const double q = (values_[j] - values_[j - 1]) / (b - a);
                const double p = values_[j - 1] - q * a;
                if (k * (b - a) < 1e-6 && k * b < 1e-3) {
                    acc += 2.0 * (p * (b - a) + 0.5 * q * (b * b - a * a));
                    continue;
                }
                const double sin_part = ((p + q * b) * std::sin(k * b) - (p + q * a) * std::sin(k * a)) / k;
                const double cos_diff = -2.0 * std::sin(0.5 * k * (a + b)) * std::sin(0.5 * k * (b - a));
                acc += 2.0 * (sin_part + q * cos_diff / (k * k));
                continue;
            }
            auto f = [&](double r) { return 2.0 * std::numbers::pi * r * profile(r) * std::cyl_bessel_j(0.0, k * r); };
            acc += integrate_or_throw(f, a, b, 1e-12, "spectrum");
        }
        return acc;
    }

private:
    void check_spectrum() const {
        auto check = [&](int d, double kmax, int npts) {
            const double ref = spectrum(0.0, d);
            for (int i = 0; i <= npts; ++i) {
                const double k = kmax * i / npts;
                const double s = spectrum(k, d);
                if (s < -1e-6 * ref) {
                    std::ostringstream os;
                    os << "medium: tabulated profile is not positive definite (spectrum " << s << " at k=" << k
                       << ", d=" << d << ")";
                    throw ConfigError(os.str());
                }
            }
        };
        double step = INFINITY;
        for (std::size_t j = 1; j < offsets_.size(); ++j) step = std::min(step, offsets_[j] - offsets_[j - 1]);
        const double nyquist = std::numbers::pi / step;
        check(1, nyquist, std::clamp(static_cast<int>(4.0 * nyquist * offsets_.back() / std::numbers::pi), 64, 4096));
        check(2, 20.0 / lc_, 64);
    }

    MediumKind kind_ = MediumKind::gaussian;
    double g0_ = 1.0;
    double lc_ = 1.0;
    double g2bar_ = 1.0;
    std::vector<double> offsets_;
    std::vector<double> values_;
};

struct ProfileTable {
    std::vector<double> offsets;
    std::vector<double> values;
};

/// Reads a two-column CSV (offset, value). A non-numeric first line is a header.
inline ProfileTable read_profile_table(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open gamma0 table: " + path);
    std::vector<double> xs, vs;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty() || line[0] == '#') continue;
        std::replace(line.begin(), line.end(), ',', ' ');
        std::istringstream ls(line);
        double x = 0.0, v = 0.0;
        if (!(ls >> x >> v)) {
            if (xs.empty() && lineno == 1) continue;
            throw IoError(path + ":" + std::to_string(lineno) + ": expected two numeric columns");
        }
        xs.push_back(x);
        vs.push_back(v);
    }
    return {std::move(xs), std::move(vs)};
}

inline MediumModel load_tabulated_profile(const std::string& path) {
    auto t = read_profile_table(path);
    return MediumModel::tabulated(std::move(t.offsets), std::move(t.values));
}

/// Periodized gamma0 sampled on the grid nodes in FFT-native order.
inline std::vector<double> periodized_gamma0(const MediumModel& m, const TransverseGrid& g) {
    std::vector<double> out(g.size());
    const double L = g.length();
    auto per = [&](double x, double y) {
        double s = 0.0;
        for (int a = -1; a <= 1; ++a)
            for (int b = (g.dim == 1 ? 0 : -1); b <= (g.dim == 1 ? 0 : 1); ++b)
                s += m.profile(std::hypot(x + a * L, y + b * L));
        return s;
    };
    auto native = [&](int i) { return (i < g.n / 2 ? i : i - g.n) * g.dx; };
    if (g.dim == 1) {
        for (int i = 0; i < g.n; ++i) out[i] = per(native(i), 0.0);
    } else {
        for (int j = 0; j < g.n; ++j)
            for (int i = 0; i < g.n; ++i) out[static_cast<std::size_t>(j) * g.n + i] = per(native(i), native(j));
    }
    return out;
}

/// Discrete torus weights w with gamma0_per(x_a) = sum_j w_j exp(i k_j x_a),
/// FFT-native order. Tiny negative round-off is clamped to zero.
inline std::vector<double> torus_weights(const MediumModel& m, const TransverseGrid& g) {
    const auto per = periodized_gamma0(m, g);
    std::vector<cplx> buf(per.begin(), per.end());
    fft_inplace(g.fft_shape(), buf, FftDirection::forward);
    std::vector<double> w(g.size());
    const double inv = 1.0 / static_cast<double>(g.size());
    for (std::size_t j = 0; j < w.size(); ++j) w[j] = std::max(0.0, buf[j].real() * inv);
    return w;
}

/// Draws Brownian increments Delta B with covariance gamma0(x - x') dz on the torus.
class ScreenSynthesizer {
public:
    ScreenSynthesizer(const MediumModel& m, const TransverseGrid& g) : grid_(g) {
        g.validate();
        if (g.length() < 8.0 * m.corr_length()) {
            std::ostringstream os;
            os << "medium: grid box " << g.length() << " is smaller than 8 correlation lengths ("
               << 8.0 * m.corr_length() << ")";
            throw ConfigError(os.str());
        }
        const auto w = torus_weights(m, g);
        amp_.resize(w.size());
        const double N = static_cast<double>(g.size());
        for (std::size_t j = 0; j < w.size(); ++j) amp_[j] = std::sqrt(w[j] / N);
    }

    [[nodiscard]] const TransverseGrid& grid() const { return grid_; }

    /// Fills `out` (FFT-native node order) with one increment over dz.
    /// If `imag_residue` is given it receives the largest discarded imaginary part.
    void sample(double dz, RngStream& rng, std::vector<double>& out, double* imag_residue = nullptr) const {
        if (!(dz > 0.0)) throw PreconditionError("synthesize_increment: dz must be positive");
        std::vector<cplx> buf(amp_.size());
        for (auto& b : buf) b = cplx{rng.normal(), 0.0};
        fft_inplace(grid_.fft_shape(), buf, FftDirection::forward);
        const double s = std::sqrt(dz);
        for (std::size_t j = 0; j < buf.size(); ++j) buf[j] *= amp_[j] * s;
        fft_inplace(grid_.fft_shape(), buf, FftDirection::backward);
        out.resize(buf.size());
        double worst = 0.0;
        for (std::size_t j = 0; j < buf.size(); ++j) {
            out[j] = buf[j].real();
            worst = std::max(worst, std::abs(buf[j].imag()));
        }
        if (imag_residue) *imag_residue = worst;
    }

private:
    TransverseGrid grid_;
    std::vector<double> amp_;
};

/// One increment in centered node order.
inline RealField synthesize_increment(const MediumModel& m, const TransverseGrid& g, double dz, RngStream& rng) {
    ScreenSynthesizer s(m, g);
    std::vector<double> v;
    s.sample(dz, rng, v);
    detail::half_shift<double>(g, v);
    return RealField(g, std::move(v));
}

}  // namespace speckle
