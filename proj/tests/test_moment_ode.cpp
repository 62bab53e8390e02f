#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numbers>

#include "speckle/moment_ode.hpp"
#include "speckle/propagator.hpp"

using namespace speckle;

namespace {

ComplexField gaussian_mask(int n, double h, double r0, double c = 0.0) {
    const auto g = TransverseGrid::make(1, n, h);
    return ComplexField::sample(g, [&](double x, double) { return cplx(std::exp(-(x - c) * (x - c) / (2 * r0 * r0)), 0.0); });
}

// independent DTFT of the mask samples
cplx dtft(const ComplexField& u, double k) {
    cplx acc{0.0, 0.0};
    for (int i = 0; i < u.grid.n; ++i) acc += u.values[i] * std::exp(cplx(0.0, -k * u.grid.coord(i)));
    return acc * u.grid.dx;
}

int mirror(int a, int m) { return (m - a) % m; }

double max_abs(const std::vector<cplx>& v) {
    double s = 0.0;
    for (const auto& x : v) s = std::max(s, std::abs(x));
    return s;
}

double max_diff(const MomentLattice& a, const MomentLattice& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.values.size(); ++i) s = std::max(s, std::abs(a.values[i] - b.values[i]));
    return s;
}

CouplingWeights zero_coupling(int m) { return {std::vector<double>(m, 0.0)}; }

}  // namespace

TEST(MomentLattice, RejectsIncompatibleGrids) {
    EXPECT_THROW(init_lattice(gaussian_mask(64, 0.5, 1.5), 0.0, 2.0), PreconditionError);
    EXPECT_THROW(init_lattice(gaussian_mask(16, 0.5, 1.5), 0.3, 2.0), PreconditionError);
    const auto g2 = TransverseGrid::make(2, 16, 0.5);
    EXPECT_THROW(init_lattice(ComplexField(g2), 0.0, 2.0), PreconditionError);
}

TEST(MomentLattice, InitialConditionMatchesFourfoldProduct) {
    const auto u = gaussian_mask(16, 0.5, 1.2, 0.3);
    const double r = 1.0;
    const auto lat = init_lattice(u, r, 2.0);
    double worst = 0.0, scale = 0.0;
    for (int a1 = 0; a1 < 16; ++a1)
        for (int a2 = 0; a2 < 16; ++a2)
            for (int b1 = 0; b1 < 16; ++b1)
                for (int b2 = 0; b2 < 16; ++b2) {
                    const double p = lat.wavenumber(a1), q = lat.wavenumber(a2), s = lat.wavenumber(b1), t = lat.wavenumber(b2);
                    const double z1 = 0.5 * (p + q - s - t), z2 = 0.5 * (p - q - s + t);
                    const cplx expect = dtft(u, p) * std::conj(dtft(u, s)) * dtft(u, q) * std::conj(dtft(u, t)) *
                                        std::exp(cplx(0.0, r * (z2 - z1)));
                    worst = std::max(worst, std::abs(lat.at(a1, a2, b1, b2) - expect));
                    scale = std::max(scale, std::abs(expect));
                }
    EXPECT_LT(worst, 1e-12 * scale);
}

TEST(MomentLattice, ZeroNodeIsFourthPowerOfMaskMass) {
    const auto u = gaussian_mask(16, 0.5, 1.2);
    const auto lat = init_lattice(u, 0.0, 2.0);
    const double u0 = std::abs(dtft(u, 0.0));
    EXPECT_NEAR(std::abs(lat.at(8, 8, 8, 8)), std::pow(u0, 4), 1e-12 * std::pow(u0, 4));
    EXPECT_NEAR(lat.at(8, 8, 8, 8).imag(), 0.0, 1e-12 * std::pow(u0, 4));
}

TEST(MomentLattice, RealOnZetaZeroSliceAndConjugateSymmetric) {
    const auto u = gaussian_mask(8, 0.5, 0.8);
    const auto lat = init_lattice(u, 0.0, 2.0);
    const double scale = max_abs(lat.values);
    for (int a1 = 0; a1 < 8; ++a1)
        for (int a2 = 0; a2 < 8; ++a2) EXPECT_NEAR(lat.at(a1, a2, a1, a2).imag(), 0.0, 1e-14 * scale);
    double worst = 0.0;
    for (int a1 = 0; a1 < 8; ++a1)
        for (int a2 = 0; a2 < 8; ++a2)
            for (int b1 = 0; b1 < 8; ++b1)
                for (int b2 = 0; b2 < 8; ++b2)
                    worst = std::max(worst, std::abs(lat.at(mirror(a1, 8), mirror(a2, 8), mirror(b1, 8), mirror(b2, 8)) -
                                                     std::conj(lat.at(a1, a2, b1, b2))));
    EXPECT_LT(worst, 1e-14 * scale);
}

TEST(MomentEvolve, HomogeneousIsExactTransportPhase) {
    const auto u = gaussian_mask(16, 0.5, 1.2);
    const auto lat = init_lattice(u, 1.0, 2.0);
    const double ell = 3.7;
    for (int nz : {0, 1, 5}) {
        const auto out = evolve(lat, zero_coupling(16), ell, nz);
        EXPECT_DOUBLE_EQ(out.z, ell);
        double worst = 0.0;
        for (int a1 = 0; a1 < 16; ++a1)
            for (int a2 = 0; a2 < 16; ++a2)
                for (int b1 = 0; b1 < 16; ++b1)
                    for (int b2 = 0; b2 < 16; ++b2) {
                        const cplx expect = lat.at(a1, a2, b1, b2) * std::exp(cplx(0.0, -ell * lat.phase(a1, a2, b1, b2)));
                        worst = std::max(worst, std::abs(out.at(a1, a2, b1, b2) - expect));
                    }
        EXPECT_LT(worst, 1e-12 * max_abs(lat.values));
    }
}

TEST(MomentEvolve, HomogeneousMatchesFreeSpaceFields) {
    const auto u = gaussian_mask(16, 0.5, 1.2);
    const double k0 = 2.0, ell = 3.0, r = 1.0;
    const auto out = evolve(init_lattice(u, r, k0), zero_coupling(16), ell, 0);
    const auto e0 = free_space_propagate(u, k0, ell);
    const auto er = free_space_propagate(make_incident(u, r), k0, ell);
    for (int i : {5, 8, 10})
        for (int j : {6, 8, 11}) {
            const double expect = std::norm(e0.values[i]) * std::norm(er.values[j]);
            const auto got = reconstruct_second_moment(out, u.grid.coord(i), u.grid.coord(j));
            EXPECT_NEAR(got.value, expect, 1e-10 * std::max(1.0, expect));
        }
}

TEST(MomentEvolve, RejectsTooFewSteps) {
    const auto u = gaussian_mask(16, 0.5, 1.5);
    const auto lat = init_lattice(u, 0.0, 2.0);
    const auto cw = medium_coupling(MediumModel::gaussian(0.1, 1.0), u.grid);
    const int need = min_moment_steps(lat, cw, 4.0);
    EXPECT_GT(need, 1);
    EXPECT_THROW(evolve(lat, cw, 4.0, need - 1), ConfigError);
    EXPECT_NO_THROW(evolve(lat, cw, 0.1, min_moment_steps(lat, cw, 0.1)));
}

TEST(MomentEvolve, RejectsUnderresolvedMedium) {
    const auto g = TransverseGrid::make(1, 16, 0.5);
    EXPECT_THROW(medium_coupling(MediumModel::gaussian(0.1, 0.2), g), ConfigError);
    EXPECT_NO_THROW(medium_coupling(MediumModel::gaussian(0.1, 1.0), g));
}

TEST(MomentEvolve, ZetaZeroMassIsConserved) {
    const auto u = gaussian_mask(16, 0.5, 1.5);
    const auto lat = init_lattice(u, 1.0, 2.0);
    const auto m = MediumModel::gaussian(0.25, 1.0);
    const auto cw = medium_coupling(m, u.grid);
    const auto out = evolve(lat, cw, 2.0, min_moment_steps(lat, cw, 2.0));
    const cplx before = zeta_zero_mass(lat), after = zeta_zero_mass(out);
    EXPECT_LT(std::abs(after - before), 1e-8 * std::abs(before));
    // the moment itself has changed
    EXPECT_GT(max_diff(lat, out), 1e-3 * max_abs(lat.values));
}

TEST(MomentEvolve, PreservesHermitianSymmetry) {
    const auto u = gaussian_mask(16, 0.5, 1.5);
    const auto lat = init_lattice(u, 0.0, 2.0);
    const auto cw = medium_coupling(MediumModel::gaussian(0.25, 1.0), u.grid);
    const auto out = evolve(lat, cw, 2.0, 80);
    double worst = 0.0;
    for (int a1 = 0; a1 < 16; ++a1)
        for (int a2 = 0; a2 < 16; ++a2)
            for (int b1 = 0; b1 < 16; ++b1)
                for (int b2 = 0; b2 < 16; ++b2)
                    worst = std::max(worst, std::abs(out.at(b1, b2, a1, a2) - std::conj(out.at(a1, a2, b1, b2))));
    EXPECT_LT(worst, 1e-10 * max_abs(out.values));
}

TEST(MomentEvolve, RungeKuttaIsFourthOrder) {
    const auto u = gaussian_mask(16, 0.5, 1.5);
    const auto lat = init_lattice(u, 1.0, 2.0);
    const auto cw = medium_coupling(MediumModel::gaussian(0.25, 1.0), u.grid);
    const double ell = 2.0;
    const auto a = evolve(lat, cw, ell, 50);
    const auto b = evolve(lat, cw, ell, 100);
    const auto c = evolve(lat, cw, ell, 200);
    const double order = std::log2(max_diff(a, b) / max_diff(b, c));
    std::printf("RK4 observed order %.3f\n", order);
    EXPECT_GE(order, 3.8);
}

TEST(SecondMoment, InitialIdentityAtGridNodes) {
    const auto u = gaussian_mask(16, 0.5, 1.2, 0.2);
    const double r = 1.5;
    const auto lat = init_lattice(u, r, 2.0);
    const auto ur = make_incident(u, r);
    for (int i = 3; i < 14; i += 2)
        for (int j = 2; j < 15; j += 3) {
            const double expect = std::norm(u.values[i]) * std::norm(ur.values[j]);
            EXPECT_NEAR(reconstruct_second_moment(lat, u.grid.coord(i), u.grid.coord(j)).value, expect, 1e-12);
        }
}

TEST(SecondMoment, ExchangeSymmetryForZeroShift) {
    const auto u = gaussian_mask(16, 0.5, 1.5);
    const auto lat = init_lattice(u, 0.0, 2.0);
    const auto cw = medium_coupling(MediumModel::gaussian(0.25, 1.0), u.grid);
    const auto out = evolve(lat, cw, 2.0, 80);
    for (double x : {-1.0, 0.0, 0.5})
        for (double y : {-0.5, 1.5}) {
            const auto a = reconstruct_second_moment(out, x, y);
            const auto b = reconstruct_second_moment(out, y, x);
            EXPECT_NEAR(a.value, b.value, 1e-10 * std::abs(a.value));
            EXPECT_LT(a.imag_residue, 1e-8 * std::abs(a.value));
        }
}

TEST(SpotDancingKernel, ReducesToHeatKernelAtZeroZeta) {
    const double k0 = 3.0, g2 = 0.02, z = 2.0;
    const double var = k0 * k0 * g2 * z;
    for (double xi : {-1.0, 0.0, 0.3, 0.9}) {
        const cplx v = spot_dancing_kernel(xi, 0.0, z, k0, g2);
        EXPECT_NEAR(v.real(), std::exp(-xi * xi / (2 * var)) / std::sqrt(2 * std::numbers::pi * var), 1e-14);
        EXPECT_EQ(v.imag(), 0.0);
    }
    const auto mass = integrate<cplx>([&](double x) { return spot_dancing_kernel(x, 0.7, z, k0, g2); }, -20.0, 20.0, 1e-13);
    const double expect = std::exp(-g2 * z * z * z / 24.0 * 0.49 - var * std::pow(z / (2 * k0) * 0.7, 2) / 2.0);
    EXPECT_NEAR(std::abs(mass.value), expect, 1e-10);
}

TEST(SpotDancingSolution, SmallDistanceLimitIsPhaseAdvancedInitialCondition) {
    const auto u = gaussian_mask(8, 0.5, 0.8);
    const double k0 = 2.0, r = 0.5;
    const auto lat = init_lattice(u, r, k0);
    const auto at0 = spot_dancing_moment_solution(u, r, k0, 0.01, 0.0);
    EXPECT_LT(max_diff(at0, lat), 1e-12 * max_abs(lat.values));
    const double z = 1e-4;
    const auto near = spot_dancing_moment_solution(u, r, k0, 0.01, z);
    auto ref = lat;
    for (int a1 = 0; a1 < 8; ++a1)
        for (int a2 = 0; a2 < 8; ++a2)
            for (int b1 = 0; b1 < 8; ++b1)
                for (int b2 = 0; b2 < 8; ++b2) ref.at(a1, a2, b1, b2) *= std::exp(cplx(0.0, -z * lat.phase(a1, a2, b1, b2)));
    EXPECT_LT(max_diff(near, ref), 1e-3 * max_abs(lat.values));
}

namespace {

struct SpotConfig {
    ComplexField u = gaussian_mask(16, 0.5, 0.9);
    double k0 = 2.0;
    double g2 = 0.02;
    double ell = 2.0;
    double r = 0.5;
};

}  // namespace

TEST(SpotDancingSolution, MatchesLatticeEvolutionWithQuadraticMedium) {
    SpotConfig c;
    const auto lat = init_lattice(c.u, c.r, c.k0);
    const auto cw = quadratic_coupling(c.g2, c.u.grid);
    const auto num = evolve(lat, cw, c.ell, std::max(200, min_moment_steps(lat, cw, c.ell)));
    const auto closed = spot_dancing_moment_solution(c.u, c.r, c.k0, c.g2, c.ell);
    const double dev = max_diff(num, closed) / max_abs(closed.values);
    std::printf("spot-dancing lattice max relative deviation %.4g\n", dev);
    EXPECT_LT(dev, 0.02);

    const auto hom = evolve(lat, zero_coupling(16), c.ell, 0);
    double worst = 0.0, effect = 0.0;
    for (int i = 6; i <= 10; i += 2)
        for (int j = 6; j <= 10; j += 2) {
            const double x = c.u.grid.coord(i), y = c.u.grid.coord(j);
            const double a = reconstruct_second_moment(num, x, y).value;
            const double b = reconstruct_second_moment(closed, x, y).value;
            worst = std::max(worst, std::abs(a - b) / std::abs(b));
            effect = std::max(effect, std::abs(reconstruct_second_moment(hom, x, y).value - b) / std::abs(b));
        }
    std::printf("spot-dancing second-moment relative deviation %.4g (medium effect %.4g)\n", worst, effect);
    EXPECT_LT(worst, 0.01);
    EXPECT_GT(effect, 5.0 * worst);
}

TEST(MomentLatticeDump, RoundTrip) {
    const auto lat = init_lattice(gaussian_mask(8, 0.5, 0.8), 0.5, 2.0);
    const auto path = (std::filesystem::temp_directory_path() / "lattice_roundtrip.bin").string();
    write_lattice_dump(path, lat);
    const auto back = read_lattice_dump(path);
    EXPECT_EQ(back.m, 8);
    EXPECT_DOUBLE_EQ(back.h, 0.5);
    EXPECT_DOUBLE_EQ(back.k0, 2.0);
    EXPECT_EQ(back.values, lat.values);
    std::filesystem::resize_file(path, 200);
    EXPECT_THROW(read_lattice_dump(path), IoError);
    std::filesystem::remove(path);
    EXPECT_THROW(read_lattice_dump(path), IoError);
}
