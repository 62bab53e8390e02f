#pragma once

// Fourth-order moment transport for d = 1 on a coarse periodic grid.
//
// The lattice stores
//   L(kx1, kx2, ky1, ky2) = E[ phi^(kx1) phi_r^(kx2) conj(phi^(ky1)) conj(phi_r^(ky2)) ]
// over the field wavenumbers of an m-point grid. The sum/difference variables
//   xi1 = (kx1 + kx2 + ky1 + ky2)/2   xi2 = (kx1 - kx2 + ky1 - ky2)/2
//   zeta1 = (kx1 + kx2 - ky1 - ky2)/2 zeta2 = (kx1 - kx2 - ky1 + ky2)/2
// are related by a unit-Jacobian linear map, so the lattice is mu^ sampled on
// that image; the transport phase is (xi1 zeta1 + xi2 zeta2)/k0 =
// (kx1^2 + kx2^2 - ky1^2 - ky2^2)/(2 k0). On this lattice the shift coupling
// with torus weights is exactly the moment equation of the split-step scheme
// on the same grid.

#include <cmath>
#include <complex>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "speckle/error.hpp"
#include "speckle/grid.hpp"
#include "speckle/medium.hpp"
#include "speckle/parallel.hpp"
#include "speckle/quadrature.hpp"

namespace speckle {

struct MomentLattice {
    int m = 0;        ///< points per axis
    double h = 0.0;   ///< spacing of the underlying transverse grid
    double k0 = 1.0;  ///< carried for the transport phase
    double z = 0.0;   ///< propagation distance reached
    std::vector<cplx> values;  ///< index ((a1 m + a2) m + b1) m + b2, centered order

    [[nodiscard]] double dk() const { return 2.0 * std::numbers::pi / (m * h); }
    [[nodiscard]] double wavenumber(int a) const { return (a - m / 2) * dk(); }
    [[nodiscard]] std::size_t index(int a1, int a2, int b1, int b2) const {
        return ((static_cast<std::size_t>(a1) * m + a2) * m + b1) * m + b2;
    }
    [[nodiscard]] cplx& at(int a1, int a2, int b1, int b2) { return values[index(a1, a2, b1, b2)]; }
    [[nodiscard]] const cplx& at(int a1, int a2, int b1, int b2) const { return values[index(a1, a2, b1, b2)]; }
    /// Transport phase (kx1^2 + kx2^2 - ky1^2 - ky2^2) / (2 k0).
    [[nodiscard]] double phase(int a1, int a2, int b1, int b2) const {
        const double p = wavenumber(a1), q = wavenumber(a2), s = wavenumber(b1), t = wavenumber(b2);
        return (p * p + q * q - s * s - t * t) / (2.0 * k0);
    }
};

namespace detail {

inline void check_lattice_grid(const TransverseGrid& g) {
    if (g.dim != 1) throw PreconditionError("moment lattice: only d = 1 is supported");
    if (g.n < 8 || g.n > 32) throw PreconditionError("moment lattice: grid must have 8 to 32 points");
    const double nodes = std::pow(static_cast<double>(g.n), 4);
    if (nodes > static_cast<double>(1 << 20)) throw PreconditionError("moment lattice: m^4 exceeds 2^20");
}

}  // namespace detail

/// z = 0 lattice for mask U (on an m-point grid) and shift r (multiple of dx).
inline MomentLattice init_lattice(const ComplexField& u, double r, double k0) {
    detail::check_lattice_grid(u.grid);
    const double s = r / u.grid.dx;
    if (std::abs(s - std::round(s)) > 1e-9 * std::max(1.0, std::abs(s)))
        throw PreconditionError("init_lattice: shift is not a multiple of dx");
    MomentLattice lat;
    lat.m = u.grid.n;
    lat.h = u.grid.dx;
    lat.k0 = k0;
    const auto uh = forward_transform(u).values;
    std::vector<cplx> ur(uh.size());
    for (int a = 0; a < lat.m; ++a) ur[a] = uh[a] * std::polar(1.0, -lat.wavenumber(a) * r);
    const int m = lat.m;
    lat.values.resize(static_cast<std::size_t>(m) * m * m * m);
    for (int a1 = 0; a1 < m; ++a1)
        for (int a2 = 0; a2 < m; ++a2) {
            const cplx xa = uh[a1] * ur[a2];
            for (int b1 = 0; b1 < m; ++b1)
                for (int b2 = 0; b2 < m; ++b2) lat.at(a1, a2, b1, b2) = xa * std::conj(uh[b1]) * std::conj(ur[b2]);
        }
    return lat;
}

/// Coupling weights w_j (FFT-native shift order) with gamma0_per(x) = sum_j w_j exp(i k_j x).
struct CouplingWeights {
    std::vector<double> w;
};

/// Rejects media whose spectral mass beyond the lattice edge exceeds 1e-6 of the total.
inline CouplingWeights medium_coupling(const MediumModel& medium, const TransverseGrid& g) {
    detail::check_lattice_grid(g);
    const double g0 = medium.gamma0_zero();
    if (g0 > 0.0) {
        const double kmax = std::numbers::pi / g.dx;
        const double span = 60.0 / medium.corr_length();
        const auto tail = integrate<double>([&](double k) { return medium.spectrum(k, 1); }, kmax, kmax + span, 1e-10 * g0);
        const double frac = tail.value / (std::numbers::pi * g0);
        if (frac > 1e-6) {
            std::ostringstream os;
            os << "moment lattice: medium spectrum beyond the lattice edge carries " << frac << " of the total; refine the grid";
            throw ConfigError(os.str());
        }
    }
    return {torus_weights(medium, g)};
}

/// Weights of the periodic analog of the quadratic expansion: w_{+-1} = gamma2bar / (2 dk^2).
inline CouplingWeights quadratic_coupling(double gamma2bar, const TransverseGrid& g) {
    detail::check_lattice_grid(g);
    CouplingWeights c{std::vector<double>(g.n, 0.0)};
    const double dk = g.dk();
    c.w[1] = c.w[g.n - 1] = gamma2bar / (2.0 * dk * dk);
    return c;
}

namespace detail {

/// (k0^2/4) times the seven-term shift coupling applied to `in`.
inline void apply_coupling(const MomentLattice& lat, const CouplingWeights& cw, const std::vector<cplx>& in, std::vector<cplx>& out) {
    const int m = lat.m;
    const int mask = m - 1;
    double total = 0.0;
    std::vector<std::pair<int, double>> taps;
    double wmax = 0.0;
    for (double v : cw.w) wmax = std::max(wmax, v);
    for (int j = 0; j < m; ++j) {
        total += cw.w[j];
        if (cw.w[j] > 1e-17 * wmax) taps.emplace_back(j < m / 2 ? j : j - m, cw.w[j]);
    }
    const double pref = 0.25 * lat.k0 * lat.k0;
    auto idx = [m](int a1, int a2, int b1, int b2) { return ((static_cast<std::size_t>(a1) * m + a2) * m + b1) * m + b2; };
    parallel_for(static_cast<std::size_t>(m), default_workers(), [&](std::size_t slab) {
        const int a1 = static_cast<int>(slab);
        for (int a2 = 0; a2 < m; ++a2)
            for (int b1 = 0; b1 < m; ++b1)
                for (int b2 = 0; b2 < m; ++b2) {
                    cplx acc = -2.0 * total * in[idx(a1, a2, b1, b2)];
                    for (const auto& [s, w] : taps) {
                        const int a1m = (a1 - s) & mask, a2m = (a2 - s) & mask, a2p = (a2 + s) & mask;
                        const int b1m = (b1 - s) & mask, b1p = (b1 + s) & mask, b2m = (b2 - s) & mask;
                        const cplx t = in[idx(a1m, a2, b1m, b2)] + in[idx(a1m, a2, b1, b2m)] + in[idx(a1, a2m, b1m, b2)] +
                                       in[idx(a1, a2m, b1, b2m)] - in[idx(a1m, a2p, b1, b2)] - in[idx(a1, a2, b1p, b2m)];
                        acc += w * t;
                    }
                    out[idx(a1, a2, b1, b2)] = pref * acc;
                }
    });
}

}  // namespace detail

/// Smallest step count passing the RK4 stability heuristic
/// dz max(2 k0^2 gamma0_per(0), 2 kmax^2 / k0) <= 2.8.
inline int min_moment_steps(const MomentLattice& lat, const CouplingWeights& cw, double ell) {
    double total = 0.0;
    for (double v : cw.w) total += v;
    if (total == 0.0) return 0;
    const double kmax = lat.m / 2 * lat.dk();
    const double rate = std::max(2.0 * lat.k0 * lat.k0 * total, 2.0 * kmax * kmax / lat.k0);
    return std::max(1, static_cast<int>(std::ceil(ell * rate / 2.8)));
}

/// Advances the lattice by `ell` with nz RK4 steps in the interaction picture.
inline MomentLattice evolve(const MomentLattice& lat, const CouplingWeights& cw, double ell, int nz) {
    if (static_cast<int>(cw.w.size()) != lat.m) throw PreconditionError("evolve: weight count does not match lattice");
    if (!(ell >= 0.0)) throw PreconditionError("evolve: ell must be non-negative");
    const int need = min_moment_steps(lat, cw, ell);
    if (nz < need) {
        std::ostringstream os;
        os << "evolve: nz = " << nz << " violates the RK4 stability heuristic; use at least " << need << " steps";
        throw ConfigError(os.str());
    }
    const int m = lat.m;
    const std::size_t N = lat.values.size();
    std::vector<double> phi(N);
    for (int a1 = 0; a1 < m; ++a1)
        for (int a2 = 0; a2 < m; ++a2)
            for (int b1 = 0; b1 < m; ++b1)
                for (int b2 = 0; b2 < m; ++b2) phi[lat.index(a1, a2, b1, b2)] = lat.phase(a1, a2, b1, b2);

    const double z0 = lat.z;
    // nu = L exp(i (z - z0) Phi); the transport phase is integrated exactly
    std::vector<cplx> nu = lat.values, tmp(N), work(N), k1(N), k2(N), k3(N), k4(N);
    auto rhs = [&](double s, const std::vector<cplx>& v, std::vector<cplx>& out) {
        for (std::size_t i = 0; i < N; ++i) tmp[i] = v[i] * std::polar(1.0, -s * phi[i]);
        detail::apply_coupling(lat, cw, tmp, out);
        for (std::size_t i = 0; i < N; ++i) out[i] *= std::polar(1.0, s * phi[i]);
    };
    const double dz = nz > 0 ? ell / nz : 0.0;
    for (int step = 0; step < nz; ++step) {
        const double s = step * dz;
        rhs(s, nu, k1);
        for (std::size_t i = 0; i < N; ++i) work[i] = nu[i] + 0.5 * dz * k1[i];
        rhs(s + 0.5 * dz, work, k2);
        for (std::size_t i = 0; i < N; ++i) work[i] = nu[i] + 0.5 * dz * k2[i];
        rhs(s + 0.5 * dz, work, k3);
        for (std::size_t i = 0; i < N; ++i) work[i] = nu[i] + dz * k3[i];
        rhs(s + dz, work, k4);
        for (std::size_t i = 0; i < N; ++i) nu[i] += dz / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
    }
    MomentLattice out = lat;
    out.z = z0 + ell;
    for (std::size_t i = 0; i < N; ++i) out.values[i] = nu[i] * std::polar(1.0, -ell * phi[i]);
    return out;
}

inline MomentLattice evolve(const MomentLattice& lat, const MediumModel& medium, double ell, int nz) {
    const auto g = TransverseGrid::make(1, lat.m, lat.h);
    return evolve(lat, medium_coupling(medium, g), ell, nz);
}

struct SecondMoment {
    double value = 0.0;
    double imag_residue = 0.0;
};

/// E[|phi(x0)|^2 |phi_r(x0')|^2] from the lattice (exact at grid nodes).
inline SecondMoment reconstruct_second_moment(const MomentLattice& lat, double x0, double x0p) {
    const int m = lat.m;
    std::vector<cplx> ex(m), exp_(m);
    for (int a = 0; a < m; ++a) {
        ex[a] = std::polar(1.0, lat.wavenumber(a) * x0);
        exp_[a] = std::polar(1.0, lat.wavenumber(a) * x0p);
    }
    cplx acc{0.0, 0.0};
    double scale = 0.0;
    for (int a1 = 0; a1 < m; ++a1)
        for (int a2 = 0; a2 < m; ++a2) {
            const cplx pa = ex[a1] * exp_[a2];
            for (int b1 = 0; b1 < m; ++b1) {
                const cplx pb = pa * std::conj(ex[b1]);
                for (int b2 = 0; b2 < m; ++b2) {
                    const cplx v = lat.at(a1, a2, b1, b2);
                    acc += v * pb * std::conj(exp_[b2]);
                    scale += std::abs(v);
                }
            }
        }
    const double w = std::pow(lat.dk() / (2.0 * std::numbers::pi), 4);
    SecondMoment out{acc.real() * w, std::abs(acc.imag()) * w};
    if (out.imag_residue > 1e-8 * std::max(std::abs(out.value), scale * w * 1e-6)) {
        std::ostringstream os;
        os << "reconstruct_second_moment: imaginary residue " << out.imag_residue << " for value " << out.value;
        throw NumericalError(os.str());
    }
    return out;
}

/// Sum of the zeta1 = zeta2 = 0 slice (kx1 = ky1, kx2 = ky2); conserved by evolve.
inline cplx zeta_zero_mass(const MomentLattice& lat) {
    cplx acc{0.0, 0.0};
    for (int a1 = 0; a1 < lat.m; ++a1)
        for (int a2 = 0; a2 < lat.m; ++a2) acc += lat.at(a1, a2, a1, a2);
    return acc;
}

/// Kernel psi(xi, zeta1, z) of the spot-dancing moment equation (d = 1).
inline cplx spot_dancing_kernel(double xi, double zeta1, double z, double k0, double gamma2bar) {
    const double var = k0 * k0 * gamma2bar * z;
    const double mag = std::exp(-gamma2bar * z * z * z / 24.0 * zeta1 * zeta1 - xi * xi / (2.0 * var)) /
                       std::sqrt(2.0 * std::numbers::pi * var);
    return std::polar(mag, -z / (2.0 * k0) * xi * zeta1);
}

/// Closed-form spot-dancing solution at every lattice node: the phase-advanced
/// initial condition convolved in xi1 with the kernel psi. U^ is the
/// periodic transform of the m-point mask evaluated off-lattice.
inline MomentLattice spot_dancing_moment_solution(const ComplexField& u, double r, double k0, double gamma2bar, double z) {
    detail::check_lattice_grid(u.grid);
    MomentLattice lat;
    lat.m = u.grid.n;
    lat.h = u.grid.dx;
    lat.k0 = k0;
    lat.z = z;
    const int m = lat.m;
    lat.values.resize(static_cast<std::size_t>(m) * m * m * m);
    auto uhat = [&](double k) {
        cplx acc{0.0, 0.0};
        for (int i = 0; i < m; ++i) acc += u.values[i] * std::polar(1.0, -k * u.grid.coord(i));
        return acc * u.grid.dx;
    };
    auto mu0 = [&](double xi1, double xi2, double z1, double z2) {
        return uhat(0.5 * (xi1 + xi2 + z1 + z2)) * std::conj(uhat(0.5 * (xi1 + xi2 - z1 - z2))) *
               uhat(0.5 * (xi1 - xi2 + z1 - z2)) * std::polar(1.0, -0.5 * (xi1 - xi2 + z1 - z2) * r) *
               std::conj(uhat(0.5 * (xi1 - xi2 - z1 + z2)) * std::polar(1.0, -0.5 * (xi1 - xi2 - z1 + z2) * r));
    };
    const double var = k0 * k0 * gamma2bar * z;
    for (int a1 = 0; a1 < m; ++a1)
        for (int a2 = 0; a2 < m; ++a2)
            for (int b1 = 0; b1 < m; ++b1)
                for (int b2 = 0; b2 < m; ++b2) {
                    const double p = lat.wavenumber(a1), q = lat.wavenumber(a2), s = lat.wavenumber(b1), t = lat.wavenumber(b2);
                    const double xi1 = 0.5 * (p + q + s + t), xi2 = 0.5 * (p - q + s - t);
                    const double z1 = 0.5 * (p + q - s - t), z2 = 0.5 * (p - q - s + t);
                    cplx v;
                    if (var <= 0.0) {
                        v = mu0(xi1, xi2, z1, z2) * std::polar(1.0, -z / k0 * (xi1 * z1 + xi2 * z2));
                    } else {
                        // trapezoid over +-10 sd; spectrally accurate for the Gaussian-weighted trig polynomial
                        const double sd = std::sqrt(var);
                        const int half = 40;
                        const double step = 10.0 * sd / half;
                        v = {0.0, 0.0};
                        for (int q = -half; q <= half; ++q) {
                            const double xp = xi1 + q * step;
                            v += mu0(xp, xi2, z1, z2) * std::polar(1.0, -z / k0 * (xp * z1 + xi2 * z2)) *
                                 spot_dancing_kernel(xi1 - xp, z1, z, k0, gamma2bar);
                        }
                        v *= step;
                    }
                    lat.at(a1, a2, b1, b2) = v;
                }
    return lat;
}

/// Lattice snapshot: JSON header line with the four axes, then interleaved doubles.
inline void write_lattice_dump(const std::string& path, const MomentLattice& lat) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("cannot open for writing: " + path);
    nlohmann::json h = {{"dim", 1},     {"n", lat.m},   {"dx", lat.h}, {"kind", "moment_lattice"},
                        {"axes", {"kx1", "kx2", "ky1", "ky2"}}, {"k0", lat.k0}, {"z", lat.z}};
    os << h.dump() << '\n';
    os.write(reinterpret_cast<const char*>(lat.values.data()), static_cast<std::streamsize>(lat.values.size() * sizeof(cplx)));
    if (!os) throw IoError("write failed: " + path);
}

inline MomentLattice read_lattice_dump(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("cannot open: " + path);
    std::string line;
    if (!std::getline(is, line)) throw IoError("missing header line: " + path);
    MomentLattice lat;
    try {
        const auto h = nlohmann::json::parse(line);
        if (h.at("kind") != "moment_lattice") throw IoError("not a moment lattice dump: " + path);
        lat.m = h.at("n").get<int>();
        lat.h = h.at("dx").get<double>();
        lat.k0 = h.at("k0").get<double>();
        lat.z = h.at("z").get<double>();
    } catch (const nlohmann::json::exception& e) {
        throw IoError("malformed lattice header in " + path + ": " + e.what());
    }
    if (lat.m < 8 || lat.m > 32) throw IoError("lattice size out of range in " + path);
    lat.values.resize(static_cast<std::size_t>(lat.m) * lat.m * lat.m * lat.m);
    is.read(reinterpret_cast<char*>(lat.values.data()), static_cast<std::streamsize>(lat.values.size() * sizeof(cplx)));
    if (is.gcount() != static_cast<std::streamsize>(lat.values.size() * sizeof(cplx))) throw IoError("truncated lattice payload: " + path);
    return lat;
}

}  // namespace speckle
