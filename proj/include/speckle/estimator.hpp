#pragma once

// Shift-scan experiments and their empirical statistics.

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <system_error>
#include <vector>

#include <json.hpp>

#include "speckle/analytic.hpp"
#include "speckle/error.hpp"
#include "speckle/grid.hpp"
#include "speckle/medium.hpp"
#include "speckle/parallel.hpp"
#include "speckle/propagator.hpp"
#include "speckle/rng.hpp"

namespace speckle {

struct Camera {
    Vec2 center;
    double radius = 1.0;  ///< R_A; interval half-width in d = 1, disk radius in d = 2
};

struct ExperimentConfig {
    ComplexField mask;
    std::vector<Vec2> shifts{Vec2{}};
    double k0 = 1.0;
    double ell = 1.0;
    int nz = 1;
    Splitting splitting = Splitting::strang;
    std::optional<MediumModel> medium;
    Camera camera;
    double pixel = 0.0;  ///< rho_o
    int realizations = 1;
    std::uint64_t seed = 0;
    bool keep_fields = false;
    int workers = 0;  ///< 0 selects the hardware concurrency

    [[nodiscard]] PropagationPlan plan() const { return {k0, ell, nz, splitting, medium}; }

    /// Speckle radius rho of the configuration (0 without a medium).
    [[nodiscard]] double speckle_scale() const {
        return medium && medium->gamma0_zero() > 0.0 ? speckle_radius(medium->gamma2bar(), k0, ell) : 0.0;
    }

    void validate() const {
        const auto& g = mask.grid;
        g.validate();
        if (shifts.empty()) throw ConfigError("experiment: at least one shift is required");
        if (realizations < 1) throw ConfigError("experiment: realizations must be >= 1");
        if (!(pixel >= 0.0)) throw ConfigError("experiment: pixel size must be >= 0");
        if (!(camera.radius > 0.0)) throw ConfigError("experiment: camera radius must be positive");
        for (const auto& r : shifts) {
            for (double c : {r.x, r.y}) {
                const double s = c / g.dx;
                if (std::abs(s - std::round(s)) > 1e-9 * std::max(1.0, std::abs(s)))
                    throw ConfigError("experiment: shifts must be multiples of dx");
            }
            if (g.dim == 1 && r.y != 0.0) throw ConfigError("experiment: y shift on a 1-D grid");
        }
        if (g.dim == 1 && camera.center.y != 0.0) throw ConfigError("experiment: camera y center on a 1-D grid");
        const double half = 0.5 * g.length();
        const double margin = 4.0 * speckle_scale();
        const double reach = camera.radius + margin;
        if (std::abs(camera.center.x) + reach > half || (g.dim == 2 && std::abs(camera.center.y) + reach > half)) {
            std::ostringstream os;
            os << "experiment: camera aperture (radius " << camera.radius << ") plus margin " << margin
               << " does not fit inside the grid box of half-width " << half;
            throw ConfigError(os.str());
        }
        plan().validate(g);
    }
};

/// Stable 64-bit FNV-1a hash (hex) of everything that determines the output.
inline std::string config_hash(const ExperimentConfig& c) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](const void* p, std::size_t n) {
        const auto* b = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= b[i];
            h *= 0x100000001b3ULL;
        }
    };
    auto num = [&](double v) { mix(&v, sizeof v); };
    mix(&c.mask.grid.dim, sizeof(int));
    mix(&c.mask.grid.n, sizeof(int));
    num(c.mask.grid.dx);
    mix(c.mask.values.data(), c.mask.values.size() * sizeof(cplx));
    for (const auto& r : c.shifts) {
        num(r.x);
        num(r.y);
    }
    for (double v : {c.k0, c.ell, c.pixel, c.camera.center.x, c.camera.center.y, c.camera.radius}) num(v);
    const int ints[] = {c.nz, static_cast<int>(c.splitting), c.realizations};
    mix(ints, sizeof ints);
    mix(&c.seed, sizeof c.seed);
    if (c.medium) {
        const int k = static_cast<int>(c.medium->kind());
        mix(&k, sizeof k);
        num(c.medium->gamma0_zero());
        num(c.medium->corr_length());
        num(c.medium->gamma2bar());
    }
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h;
    return os.str();
}

/// Intensities |E_r(x)|^2 on the full grid, realization-major.
struct IntensityStack {
    TransverseGrid grid;
    std::vector<Vec2> shifts;
    int realizations = 0;
    std::vector<std::vector<double>> intensity;  ///< index realization * shifts + shift, centered order
    std::vector<std::vector<cplx>> fields;       ///< same layout when retained
    std::string config_hash;

    [[nodiscard]] std::size_t slot(int realization, int shift) const {
        return static_cast<std::size_t>(realization) * shifts.size() + static_cast<std::size_t>(shift);
    }
    [[nodiscard]] const std::vector<double>& at(int realization, int shift) const { return intensity[slot(realization, shift)]; }
    [[nodiscard]] bool has_fields() const { return !fields.empty(); }
};

/// Runs the shift scan. Each realization freezes one Brownian path that every
/// shift of the scan is propagated through.
inline IntensityStack run_experiment(const ExperimentConfig& cfg) {
    cfg.validate();
    const auto& g = cfg.mask.grid;
    const SplitStepPropagator prop(g, cfg.plan());
    IntensityStack st;
    st.grid = g;
    st.shifts = cfg.shifts;
    st.realizations = cfg.realizations;
    st.config_hash = config_hash(cfg);
    const std::size_t ns = cfg.shifts.size();
    st.intensity.resize(static_cast<std::size_t>(cfg.realizations) * ns);
    if (cfg.keep_fields) st.fields.resize(st.intensity.size());

    std::vector<std::vector<cplx>> incident(ns);
    for (std::size_t s = 0; s < ns; ++s) {
        incident[s] = make_incident(cfg.mask, cfg.shifts[s].x, cfg.shifts[s].y).values;
        detail::to_native(g, incident[s]);
    }
    parallel_for(static_cast<std::size_t>(cfg.realizations), cfg.workers, [&](std::size_t real) {
        auto fields = incident;
        prop.run(fields, prop.path(cfg.seed, real));
        for (std::size_t s = 0; s < ns; ++s) {
            auto& f = fields[s];
            detail::to_centered(g, f);
            std::vector<double> in(f.size());
            for (std::size_t j = 0; j < f.size(); ++j) in[j] = std::norm(f[j]);
            const std::size_t k = real * ns + s;
            st.intensity[k] = std::move(in);
            if (cfg.keep_fields) st.fields[k] = std::move(f);
        }
    });
    return st;
}

/// Convolves one intensity image with the pixel kernel (2 pi)^{-d/2} rho^{-d} exp(-|y|^2 / (2 rho^2)).
inline std::vector<double> smooth_image(const TransverseGrid& g, const std::vector<double>& img, double rho_o) {
    if (!(rho_o >= 0.0)) throw PreconditionError("pixel_smooth: pixel size must be >= 0");
    if (rho_o == 0.0) return img;
    std::vector<cplx> buf(img.begin(), img.end());
    detail::half_shift<cplx>(g, buf);
    fft_inplace(g.fft_shape(), buf, FftDirection::forward);
    const double inv = 1.0 / static_cast<double>(g.size());
    for (std::size_t j = 0; j < buf.size(); ++j) buf[j] *= std::exp(-0.5 * rho_o * rho_o * g.native_k2(j)) * inv;
    fft_inplace(g.fft_shape(), buf, FftDirection::backward);
    detail::half_shift<cplx>(g, buf);
    std::vector<double> out(img.size());
    for (std::size_t j = 0; j < out.size(); ++j) out[j] = buf[j].real();
    return out;
}

inline IntensityStack pixel_smooth(const IntensityStack& st, double rho_o) {
    IntensityStack out = st;
    out.fields.clear();
    for (auto& img : out.intensity) img = smooth_image(st.grid, img, rho_o);
    return out;
}

/// Flat indices of the grid nodes inside the camera aperture.
inline std::vector<std::size_t> aperture_nodes(const TransverseGrid& g, const Camera& cam) {
    std::vector<std::size_t> idx;
    for (std::size_t j = 0; j < g.size(); ++j)
        if ((detail::centered_x(g, j) - cam.center).norm2() <= cam.radius * cam.radius) idx.push_back(j);
    if (idx.empty()) throw PreconditionError("camera aperture contains no grid nodes");
    return idx;
}

enum class CovarianceFlavor { single_realization, ensemble, analytic };

inline const char* to_string(CovarianceFlavor f) {
    switch (f) {
        case CovarianceFlavor::single_realization: return "empirical-single-realization";
        case CovarianceFlavor::ensemble: return "ensemble-averaged";
        case CovarianceFlavor::analytic: return "analytic";
    }
    return "?";
}

/// Covariance over all shift pairs, row-major in the shift list.
struct CovarianceMap {
    CovarianceFlavor flavor = CovarianceFlavor::single_realization;
    std::vector<Vec2> shifts;
    std::vector<double> values;
    std::vector<double> stderr_values;  ///< ensemble flavor only
    std::vector<std::string> warnings;

    [[nodiscard]] std::size_t size() const { return shifts.size(); }
    [[nodiscard]] double at(std::size_t i, std::size_t j) const { return values[i * shifts.size() + j]; }
};

struct EmpiricalCovariance {
    std::vector<CovarianceMap> per_realization;
    CovarianceMap ensemble;
};

/// Aperture average of I_r I_r' minus the product of aperture means, per realization.
inline CovarianceMap realization_covariance(const IntensityStack& st, int realization, const std::vector<std::size_t>& nodes) {
    const std::size_t ns = st.shifts.size();
    const double inv = 1.0 / static_cast<double>(nodes.size());
    std::vector<std::vector<double>> cut(ns, std::vector<double>(nodes.size()));
    std::vector<double> mean(ns, 0.0);
    for (std::size_t s = 0; s < ns; ++s) {
        const auto& img = st.at(realization, static_cast<int>(s));
        for (std::size_t q = 0; q < nodes.size(); ++q) {
            cut[s][q] = img[nodes[q]];
            mean[s] += cut[s][q];
        }
        mean[s] *= inv;
    }
    CovarianceMap c;
    c.shifts = st.shifts;
    c.values.assign(ns * ns, 0.0);
    for (std::size_t a = 0; a < ns; ++a)
        for (std::size_t b = a; b < ns; ++b) {
            double acc = 0.0;
            for (std::size_t q = 0; q < nodes.size(); ++q) acc += (cut[a][q] - mean[a]) * (cut[b][q] - mean[b]);
            c.values[a * ns + b] = c.values[b * ns + a] = acc * inv;
        }
    return c;
}

/// Per-realization empirical maps plus their ensemble average with standard errors.
/// `rho` is the speckle radius used for the self-averaging check (0 skips it).
inline EmpiricalCovariance empirical_covariance(const IntensityStack& st, const Camera& cam, double rho = 0.0) {
    const auto nodes = aperture_nodes(st.grid, cam);
    EmpiricalCovariance out;
    out.per_realization.resize(static_cast<std::size_t>(st.realizations));
    for (int m = 0; m < st.realizations; ++m) out.per_realization[m] = realization_covariance(st, m, nodes);
    std::vector<std::string> warnings;
    if (rho > 0.0 && cam.radius < 10.0 * rho) {
        std::ostringstream os;
        os << "low SNR: camera radius " << cam.radius << " is below 10 speckle radii (" << 10.0 * rho << ")";
        warnings.push_back(os.str());
    }
    for (auto& c : out.per_realization) c.warnings = warnings;
    auto& e = out.ensemble;
    e.flavor = CovarianceFlavor::ensemble;
    e.shifts = st.shifts;
    e.warnings = warnings;
    const std::size_t n = st.shifts.size() * st.shifts.size();
    e.values.assign(n, 0.0);
    e.stderr_values.assign(n, 0.0);
    const double M = st.realizations;
    for (const auto& c : out.per_realization)
        for (std::size_t i = 0; i < n; ++i) e.values[i] += c.values[i] / M;
    if (st.realizations > 1) {
        for (const auto& c : out.per_realization)
            for (std::size_t i = 0; i < n; ++i) e.stderr_values[i] += std::pow(c.values[i] - e.values[i], 2);
        for (auto& v : e.stderr_values) v = std::sqrt(v / (M - 1.0) / M);
    }
    return out;
}

/// Entries averaged over shift pairs sharing the same offset r' - r.
struct OffsetCovariance {
    std::vector<Vec2> offsets;
    std::vector<double> values;
    std::vector<int> counts;
};

inline OffsetCovariance covariance_by_offset(const CovarianceMap& c, double tol = 1e-9) {
    OffsetCovariance out;
    const std::size_t ns = c.size();
    for (std::size_t a = 0; a < ns; ++a)
        for (std::size_t b = 0; b < ns; ++b) {
            const Vec2 d = c.shifts[b] - c.shifts[a];
            std::size_t k = 0;
            while (k < out.offsets.size() && (out.offsets[k] - d).norm() > tol) ++k;
            if (k == out.offsets.size()) {
                out.offsets.push_back(d);
                out.values.push_back(0.0);
                out.counts.push_back(0);
            }
            out.values[k] += c.at(a, b);
            ++out.counts[k];
        }
    for (std::size_t k = 0; k < out.values.size(); ++k) out.values[k] /= out.counts[k];
    return out;
}

/// CSV with columns rx, ry, rpx, rpy, dx, dy, value, stderr and, when given, analytic.
inline void write_covariance_csv(const std::string& path, const CovarianceMap& c, const std::vector<double>& analytic = {}) {
    if (!analytic.empty() && analytic.size() != c.values.size()) throw PreconditionError("write_covariance_csv: analytic size mismatch");
    std::ofstream os(path);
    if (!os) throw IoError("cannot open for writing: " + path);
    os << "# flavor=" << to_string(c.flavor) << '\n';
    for (const auto& w : c.warnings) os << "# warning: " << w << '\n';
    os << "rx,ry,rpx,rpy,dx,dy,value,stderr" << (analytic.empty() ? "" : ",analytic") << '\n';
    os << std::setprecision(17);
    for (std::size_t a = 0; a < c.size(); ++a)
        for (std::size_t b = 0; b < c.size(); ++b) {
            const Vec2 r = c.shifts[a], rp = c.shifts[b];
            const std::size_t k = a * c.size() + b;
            const double se = c.stderr_values.empty() ? 0.0 : c.stderr_values[k];
            os << r.x << ',' << r.y << ',' << rp.x << ',' << rp.y << ',' << rp.x - r.x << ',' << rp.y - r.y << ','
               << c.values[k] << ',' << se;
            if (!analytic.empty()) os << ',' << analytic[k];
            os << '\n';
        }
    if (!os) throw IoError("write failed: " + path);
}

/// Inverse of write_covariance_csv. Any analytic column is ignored.
inline CovarianceMap read_covariance_csv(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw IoError("cannot open: " + path);
    CovarianceMap c;
    std::string line;
    int lineno = 0;
    bool header = false;
    std::vector<std::array<double, 8>> rows;
    auto fail = [&](const std::string& why) { throw IoError(path + ":" + std::to_string(lineno) + ": " + why); };
    while (std::getline(is, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line[0] == '#') {
            if (line.rfind("# flavor=", 0) == 0) {
                const auto f = line.substr(9);
                if (f == to_string(CovarianceFlavor::ensemble)) c.flavor = CovarianceFlavor::ensemble;
                else if (f == to_string(CovarianceFlavor::analytic)) c.flavor = CovarianceFlavor::analytic;
                else if (f != to_string(CovarianceFlavor::single_realization)) fail("unknown flavor '" + f + "'");
            } else if (line.rfind("# warning: ", 0) == 0) {
                c.warnings.push_back(line.substr(11));
            }
            continue;
        }
        if (!header) {
            if (line != "rx,ry,rpx,rpy,dx,dy,value,stderr" && line != "rx,ry,rpx,rpy,dx,dy,value,stderr,analytic")
                fail("unexpected header '" + line + "'");
            header = true;
            continue;
        }
        std::array<double, 8> v{};
        std::size_t pos = 0;
        int field = 0;
        while (pos <= line.size()) {
            const auto end = std::min(line.find(',', pos), line.size());
            if (field < 8) {
                const char* b = line.data() + pos;
                const auto [ptr, ec] = std::from_chars(b, line.data() + end, v[field]);
                if (ec != std::errc() || ptr != line.data() + end) fail("field " + std::to_string(field + 1) + " is not a number");
            }
            ++field;
            pos = end + 1;
        }
        if (field != 8 && field != 9) fail("expected 8 or 9 fields, got " + std::to_string(field));
        rows.push_back(v);
    }
    if (!header) throw IoError(path + ": missing header");
    if (rows.empty()) throw IoError(path + ": no data rows");
    for (const auto& r : rows) {
        const Vec2 s{r[0], r[1]};
        if (c.shifts.empty() || !(c.shifts.back().x == s.x && c.shifts.back().y == s.y)) {
            if (std::find_if(c.shifts.begin(), c.shifts.end(), [&](Vec2 q) { return q.x == s.x && q.y == s.y; }) != c.shifts.end())
                throw IoError(path + ": rows are not grouped by the first shift");
            c.shifts.push_back(s);
        }
    }
    const std::size_t ns = c.shifts.size();
    if (rows.size() != ns * ns) throw IoError(path + ": expected " + std::to_string(ns * ns) + " rows for " + std::to_string(ns) + " shifts");
    c.values.resize(rows.size());
    c.stderr_values.resize(rows.size());
    bool any_se = false;
    for (std::size_t a = 0; a < ns; ++a)
        for (std::size_t b = 0; b < ns; ++b) {
            const auto& r = rows[a * ns + b];
            if (r[0] != c.shifts[a].x || r[1] != c.shifts[a].y || r[2] != c.shifts[b].x || r[3] != c.shifts[b].y)
                throw IoError(path + ": row " + std::to_string(a * ns + b + 1) + " is out of order");
            c.values[a * ns + b] = r[6];
            c.stderr_values[a * ns + b] = r[7];
            any_se = any_se || r[7] != 0.0;
        }
    if (!any_se) c.stderr_values.clear();
    return c;
}

/// Binary 8-bit grayscale heatmap, min to black and max to white.
inline void write_pgm(const std::string& path, const std::vector<double>& v, int width, int height) {
    if (static_cast<std::size_t>(width) * height != v.size()) throw PreconditionError("write_pgm: shape mismatch");
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path);
    const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
    const double span = *hi - *lo > 0.0 ? *hi - *lo : 1.0;
    os << "P5\n" << width << ' ' << height << "\n255\n";
    for (double x : v) os.put(static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * (x - *lo) / span))));
    if (!os) throw IoError("write failed: " + path);
}

// ---- diagnostics -------------------------------------------------------------------

struct SpeckleDiagnostics {
    std::vector<double> lags;      ///< observation offsets along the first axis
    std::vector<double> autocov;   ///< ensemble-mean intensity autocovariance at each lag
    double radius = 0.0;           ///< rho from autocov ~ exp(-Y^2 / (4 rho^2))
    double fit_residual = 0.0;     ///< rms residual of the log fit
    double contrast = 0.0;         ///< Var(I) / E[I]^2 over the aperture
    double snr_predicted = 0.0;    ///< sqrt((R_A / rho)^d)
    double snr_observed = 0.0;     ///< mean / std of the single-realization variance
};

/// Log-linear Gaussian fit of the intensity autocovariance of shift 0.
inline SpeckleDiagnostics speckle_diagnostics(const IntensityStack& st, const Camera& cam, int max_lag = 0) {
    const auto& g = st.grid;
    const auto nodes = aperture_nodes(g, cam);
    if (max_lag <= 0) max_lag = std::max(4, static_cast<int>(cam.radius / g.dx / 4.0));
    SpeckleDiagnostics d;
    d.autocov.assign(static_cast<std::size_t>(max_lag) + 1, 0.0);
    std::vector<double> variances;
    double contrast = 0.0;
    for (int m = 0; m < st.realizations; ++m) {
        const auto& img = st.at(m, 0);
        double mean = 0.0;
        for (auto j : nodes) mean += img[j];
        mean /= static_cast<double>(nodes.size());
        for (int L = 0; L <= max_lag; ++L) {
            double acc = 0.0, ma = 0.0, mb = 0.0;
            std::size_t cnt = 0;
            for (auto j : nodes) {
                const int col = g.dim == 1 ? static_cast<int>(j) : static_cast<int>(j % g.n);
                if (col + L >= g.n) continue;
                const double a = img[j], b = img[j + static_cast<std::size_t>(L)];
                acc += a * b;
                ma += a;
                mb += b;
                ++cnt;
            }
            if (cnt == 0) continue;
            const double c = acc / cnt - (ma / cnt) * (mb / cnt);
            d.autocov[L] += c / st.realizations;
            if (L == 0) {
                variances.push_back(c);
                contrast += (mean > 0.0 ? c / (mean * mean) : 0.0) / st.realizations;
            }
        }
    }
    d.contrast = contrast;
    for (int L = 0; L <= max_lag; ++L) d.lags.push_back(L * g.dx);

    // ln C(Y) = a - Y^2 / (4 rho^2) over lags with C > 5% of C(0)
    std::vector<double> xs, ys;
    for (int L = 0; L <= max_lag; ++L) {
        if (d.autocov[L] <= 0.05 * d.autocov[0]) break;
        xs.push_back(d.lags[L] * d.lags[L]);
        ys.push_back(std::log(d.autocov[L]));
    }
    if (xs.size() < 3 || !(d.autocov[0] > 0.0)) {
        std::ostringstream os;
        os << "speckle_diagnostics: radius fit did not converge (" << xs.size() << " usable lags; autocov:";
        for (double v : d.autocov) os << ' ' << v;
        os << ")";
        throw NumericalError(os.str());
    }
    const double n = static_cast<double>(xs.size());
    const double sx = std::accumulate(xs.begin(), xs.end(), 0.0), sy = std::accumulate(ys.begin(), ys.end(), 0.0);
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sxx += xs[i] * xs[i];
        sxy += xs[i] * ys[i];
    }
    const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    const double icept = (sy - slope * sx) / n;
    if (!(slope < 0.0)) throw NumericalError("speckle_diagnostics: autocovariance does not decay");
    d.radius = std::sqrt(-1.0 / (4.0 * slope));
    double res = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) res += std::pow(ys[i] - icept - slope * xs[i], 2);
    d.fit_residual = std::sqrt(res / n);
    d.snr_predicted = std::pow(cam.radius / d.radius, 0.5 * g.dim);
    if (variances.size() > 1) {
        const double mu = std::accumulate(variances.begin(), variances.end(), 0.0) / variances.size();
        double v = 0.0;
        for (double x : variances) v += (x - mu) * (x - mu);
        v /= static_cast<double>(variances.size() - 1);
        d.snr_observed = v > 0.0 ? mu / std::sqrt(v) : INFINITY;
    }
    return d;
}

struct GaussianityReport {
    double value = 0.0;  ///< sum_x |E_m[E^2]| / sum_x E_m[|E|^2] over aperture nodes
    double ci_low = 0.0;  ///< basic bootstrap 95% interval
    double ci_high = 0.0;
};

/// Pseudo-variance ratio (0 for circular Gaussian fields, 1 for deterministic
/// fields) with a bootstrap interval over realizations.
inline GaussianityReport gaussianity_diagnostic(const IntensityStack& st, const Camera& cam, int shift = 0, int resamples = 200,
                                                std::uint64_t seed = 0) {
    if (!st.has_fields()) throw UnavailableError("gaussianity_diagnostic: field snapshots were not retained");
    const auto nodes = aperture_nodes(st.grid, cam);
    const int M = st.realizations;
    auto ratio = [&](const std::vector<int>& pick) {
        double num = 0.0, den = 0.0;
        for (auto j : nodes) {
            cplx s2{0.0, 0.0};
            double p = 0.0;
            for (int m : pick) {
                const cplx e = st.fields[st.slot(m, shift)][j];
                s2 += e * e;
                p += std::norm(e);
            }
            num += std::abs(s2);
            den += p;
        }
        return den > 0.0 ? num / den : 0.0;
    };
    std::vector<int> all(M);
    std::iota(all.begin(), all.end(), 0);
    GaussianityReport r;
    r.value = ratio(all);
    RngStream rng(seed, {static_cast<std::uint64_t>(Purpose::bootstrap)});
    std::vector<double> boot;
    std::vector<int> pick(M);
    for (int b = 0; b < resamples; ++b) {
        for (int& p : pick) p = static_cast<int>(rng.bits() % static_cast<std::uint64_t>(M));
        boot.push_back(ratio(pick));
    }
    std::sort(boot.begin(), boot.end());
    // basic interval; resampling with repeats biases |sum E^2| upward
    const double lo = boot[static_cast<std::size_t>(0.025 * (resamples - 1))];
    const double hi = boot[static_cast<std::size_t>(0.975 * (resamples - 1))];
    r.ci_low = std::clamp(2.0 * r.value - hi, 0.0, 1.0);
    r.ci_high = std::clamp(2.0 * r.value - lo, 0.0, 1.0);
    return r;
}

inline Vec2 intensity_centroid(const TransverseGrid& g, const std::vector<double>& img) {
    double m0 = 0.0;
    Vec2 c;
    for (std::size_t j = 0; j < img.size(); ++j) {
        m0 += img[j];
        c = c + img[j] * detail::centered_x(g, j);
    }
    if (!(m0 > 0.0)) throw PreconditionError("centroid: image has no energy");
    return (1.0 / m0) * c;
}

struct CentroidTrack {
    std::vector<Vec2> centroids;
    Vec2 mean;
    Vec2 variance;  ///< per axis sample variance
    Vec2 ci_low;    ///< 95% interval of the variance (normal approximation)
    Vec2 ci_high;
};

/// Intensity-weighted centroid of each realization for one shift. Fails when
/// more than 1e-4 of the energy lies in the outer eighth of the box.
inline CentroidTrack centroid_track(const IntensityStack& st, int shift = 0) {
    const auto& g = st.grid;
    const double edge = 0.5 * g.length() * 0.75;
    CentroidTrack t;
    for (int m = 0; m < st.realizations; ++m) {
        const auto& img = st.at(m, shift);
        double tot = 0.0, out = 0.0;
        for (std::size_t j = 0; j < img.size(); ++j) {
            tot += img[j];
            const Vec2 x = detail::centered_x(g, j);
            if (std::abs(x.x) > edge || std::abs(x.y) > edge) out += img[j];
        }
        if (out > 1e-4 * tot) {
            std::ostringstream os;
            os << "centroid_track: beam clipped by the box in realization " << m << " (edge energy fraction " << out / tot << ")";
            throw PreconditionError(os.str());
        }
        t.centroids.push_back(intensity_centroid(g, img));
    }
    const double M = st.realizations;
    for (const auto& c : t.centroids) t.mean = t.mean + (1.0 / M) * c;
    if (st.realizations > 1) {
        for (const auto& c : t.centroids) {
            t.variance.x += std::pow(c.x - t.mean.x, 2) / (M - 1.0);
            t.variance.y += std::pow(c.y - t.mean.y, 2) / (M - 1.0);
        }
    }
    const double w = 1.96 * std::sqrt(2.0 / std::max(1.0, M - 1.0));
    t.ci_low = {t.variance.x * (1.0 - w), t.variance.y * (1.0 - w)};
    t.ci_high = {t.variance.x * (1.0 + w), t.variance.y * (1.0 + w)};
    return t;
}

/// Image translated by -c (spectral shift, sub-node accurate for smooth images).
inline std::vector<double> recenter(const TransverseGrid& g, const std::vector<double>& img, Vec2 c) {
    std::vector<cplx> buf(img.begin(), img.end());
    detail::half_shift<cplx>(g, buf);
    fft_inplace(g.fft_shape(), buf, FftDirection::forward);
    const double inv = 1.0 / static_cast<double>(g.size());
    for (std::size_t j = 0; j < buf.size(); ++j) {
        const double kx = g.native_wavenumber(static_cast<int>(g.dim == 1 ? j : j % g.n));
        const double ky = g.dim == 1 ? 0.0 : g.native_wavenumber(static_cast<int>(j / g.n));
        buf[j] *= std::polar(inv, kx * c.x + ky * c.y);
    }
    fft_inplace(g.fft_shape(), buf, FftDirection::backward);
    detail::half_shift<cplx>(g, buf);
    std::vector<double> out(img.size());
    for (std::size_t j = 0; j < out.size(); ++j) out[j] = buf[j].real();
    return out;
}

/// Mean over realizations of the relative L2 distance between the re-centered
/// intensity and the re-centered reference profile.
inline double profile_invariance_error(const IntensityStack& st, const std::vector<double>& reference, int shift = 0) {
    const auto& g = st.grid;
    const auto ref = recenter(g, reference, intensity_centroid(g, reference));
    double norm = 0.0;
    for (double v : ref) norm += v * v;
    double acc = 0.0;
    for (int m = 0; m < st.realizations; ++m) {
        const auto& img = st.at(m, shift);
        const auto rc = recenter(g, img, intensity_centroid(g, img));
        double e = 0.0;
        for (std::size_t j = 0; j < rc.size(); ++j) e += (rc[j] - ref[j]) * (rc[j] - ref[j]);
        acc += std::sqrt(e / norm);
    }
    return acc / st.realizations;
}

// ---- stack persistence -----------------------------------------------------------------

/// `extra` entries are merged into the manifest (scenario hash, version).
inline void write_stack(const std::filesystem::path& dir, const IntensityStack& st, const nlohmann::json& extra = {}) {
    std::filesystem::create_directories(dir);
    nlohmann::json man = {{"dim", st.grid.dim},
                          {"n", st.grid.n},
                          {"dx", st.grid.dx},
                          {"realizations", st.realizations},
                          {"config_hash", st.config_hash},
                          {"has_fields", st.has_fields()},
                          {"payload", "intensity.bin"}};
    for (const auto& r : st.shifts) man["shifts"].push_back({r.x, r.y});
    if (extra.is_object())
        for (const auto& [k, v] : extra.items()) man[k] = v;
    {
        std::ofstream os(dir / "manifest.json");
        if (!os) throw IoError("cannot write manifest in " + dir.string());
        os << man.dump(2) << '\n';
    }
    std::ofstream os(dir / "intensity.bin", std::ios::binary);
    if (!os) throw IoError("cannot write payload in " + dir.string());
    for (const auto& img : st.intensity) detail::write_le_doubles(os, img);
    if (st.has_fields()) {
        std::ofstream fs(dir / "fields.bin", std::ios::binary);
        for (const auto& f : st.fields)
            detail::write_le_doubles(fs, std::span<const double>(reinterpret_cast<const double*>(f.data()), f.size() * 2));
        if (!fs) throw IoError("cannot write fields in " + dir.string());
    }
    if (!os) throw IoError("write failed in " + dir.string());
}

inline IntensityStack read_stack(const std::filesystem::path& dir) {
    std::ifstream ms(dir / "manifest.json");
    if (!ms) throw IoError("missing manifest.json in " + dir.string());
    IntensityStack st;
    bool fields = false;
    try {
        const auto man = nlohmann::json::parse(ms);
        st.grid = TransverseGrid::make(man.at("dim").get<int>(), man.at("n").get<int>(), man.at("dx").get<double>());
        st.realizations = man.at("realizations").get<int>();
        st.config_hash = man.at("config_hash").get<std::string>();
        fields = man.value("has_fields", false);
        for (const auto& r : man.at("shifts")) st.shifts.push_back({r.at(0).get<double>(), r.at(1).get<double>()});
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed manifest in " + dir.string() + ": " + e.what());
    }
    const std::size_t count = static_cast<std::size_t>(st.realizations) * st.shifts.size();
    std::ifstream is(dir / "intensity.bin", std::ios::binary);
    if (!is) throw IoError("missing intensity.bin in " + dir.string());
    st.intensity.assign(count, std::vector<double>(st.grid.size()));
    for (auto& img : st.intensity) {
        is.read(reinterpret_cast<char*>(img.data()), static_cast<std::streamsize>(img.size() * sizeof(double)));
        if (is.gcount() != static_cast<std::streamsize>(img.size() * sizeof(double))) throw IoError("truncated intensity.bin in " + dir.string());
    }
    if (fields) {
        std::ifstream fs(dir / "fields.bin", std::ios::binary);
        if (!fs) throw IoError("missing fields.bin in " + dir.string());
        st.fields.assign(count, std::vector<cplx>(st.grid.size()));
        for (auto& f : st.fields) {
            fs.read(reinterpret_cast<char*>(f.data()), static_cast<std::streamsize>(f.size() * sizeof(cplx)));
            if (fs.gcount() != static_cast<std::streamsize>(f.size() * sizeof(cplx))) throw IoError("truncated fields.bin in " + dir.string());
        }
    }
    return st;
}

}  // namespace speckle
