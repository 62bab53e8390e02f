#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <numbers>

#include "speckle/retrieval.hpp"

using namespace speckle;

namespace {

double l2_rel(const std::vector<double>& a, const std::vector<double>& b) {
    double e = 0.0, n = 0.0;
    for (std::size_t j = 0; j < a.size(); ++j) {
        e += (a[j] - b[j]) * (a[j] - b[j]);
        n += b[j] * b[j];
    }
    return std::sqrt(e / n);
}

// Offset map of the predicted covariance for mask u over lattice offsets.
OffsetMap analytic_offset_map(const ComplexField& u, const ScanLattice& L) {
    const auto m = MediumModel::gaussian(0.01, 1.0);
    OffsetMap out{L, std::vector<double>(L.size())};
    for (std::size_t j = 0; j < L.size(); ++j) out.values[j] = predicted_covariance_map(u, L.point(j), 0.0, m, 40.0, 20.0);
    return out;
}

ComplexField rect_mask(const TransverseGrid& g, int nodes) {
    ComplexField u(g);
    for (int i = 0; i < nodes; ++i) u.values[g.n / 2 - nodes / 2 + i] = 1.0;
    return u;
}

std::vector<double> slits(const ScanLattice& L, int width, int separation) {
    std::vector<double> u(L.size(), 0.0);
    const int c = L.n / 2;
    for (int i = 0; i < width; ++i) {
        u[c - separation / 2 - width / 2 + i] = 1.0;
        u[c + separation / 2 - width / 2 + i] = 1.0;
    }
    return u;
}

}  // namespace

TEST(CovarianceToModulus, RectangleGivesTriangle) {
    const auto g = TransverseGrid::make(1, 256, 0.1);
    const int w = 20;
    const ScanLattice L{1, 64, 0.1};
    const auto mod = covariance_to_modulus(analytic_offset_map(rect_mask(g, w), L));
    for (int i = 0; i < L.n; ++i) {
        const int c = i - L.n / 2;
        EXPECT_NEAR(mod.values[i], std::max(0.0, double(w - std::abs(c)) / w), 1e-12);
    }
    EXPECT_EQ(mod.clipped_mass, 0.0);
}

TEST(CovarianceToModulus, ZeroMapAndClippedMass) {
    const ScanLattice L{1, 16, 1.0};
    const auto zero = covariance_to_modulus(OffsetMap{L, std::vector<double>(16, 0.0)});
    for (double v : zero.values) EXPECT_EQ(v, 0.0);
    OffsetMap noisy{L, std::vector<double>(16, 0.0)};
    for (int i = 4; i < 12; ++i) noisy.values[i] = 9.9;  // total 79.2
    noisy.values[0] = -0.4;
    noisy.values[15] = -0.4;  // 0.8 / 80 = 1%
    const auto m = covariance_to_modulus(noisy);
    EXPECT_NEAR(m.clipped_mass, 0.01, 1e-12);
    EXPECT_EQ(m.values[0], 0.0);
    EXPECT_DOUBLE_EQ(m.values[5], 1.0);
}

TEST(CovarianceToModulus, PairMapsNeedMidpointAveraging) {
    CovarianceMap c;
    c.shifts = {{0.0, 0.0}, {1.0, 0.0}, {2.0, 0.0}};
    c.values = {4, 2, 1, 2, 4, 2, 1, 2, 4};
    const ScanLattice L{1, 5, 1.0};
    EXPECT_THROW(reduce_to_offsets(c, L, false), PreconditionError);
    const auto m = reduce_to_offsets(c, L, true);
    EXPECT_EQ(m.values, (std::vector<double>{1, 2, 4, 2, 1}));
    EXPECT_THROW(reduce_to_offsets(c, ScanLattice{1, 5, 0.7}, true), PreconditionError);
    EXPECT_THROW(reduce_to_offsets(c, ScanLattice{1, 7, 1.0}, true), PreconditionError);
}

TEST(PowerSpectrum, RectangleSpectrumFromTriangle) {
    const auto g = TransverseGrid::make(1, 1024, 0.025);
    const int w = 80;
    const ScanLattice L{1, 256, 0.025};
    const auto mod = covariance_to_modulus(analytic_offset_map(rect_mask(g, w), L));
    RetrievalOptions opt;
    opt.seed = 3;
    const auto res = recover_power_spectrum(mod, opt);
    const auto K = res.lattice;
    std::vector<double> truth(K.size());
    const double width = w * L.step;
    for (std::size_t j = 0; j < truth.size(); ++j) {
        const double k = K.point(j).x;
        truth[j] = k == 0.0 ? width * width : std::pow(2.0 * std::sin(0.5 * k * width) / k, 2);
    }
    const auto reg = register_and_score(K, res.object, truth);
    std::printf("spectrum error %.3g residual %.3g\n", reg.error, res.residual);
    EXPECT_LT(reg.error, 1e-3);
    EXPECT_TRUE(res.converged);
    EXPECT_EQ(res.er_violations, 0);
    EXPECT_EQ(res.restart_residuals.size(), 20u);
}

TEST(PowerSpectrum, SymmetricSpectrumReachesFixedPointQuickly) {
    const ScanLattice K{1, 96, 0.2};
    std::vector<double> power(K.size());
    for (std::size_t j = 0; j < power.size(); ++j) {
        const double k = K.point(j).x;
        power[j] = std::exp(-k * k) + 0.5 * std::exp(-(k * k) / 0.2) * (1.0 + std::cos(3.0 * k));
    }
    const auto mod = modulus_from_spectrum(K, power);
    RetrievalOptions opt;
    opt.seed = 9;
    const auto res = recover_power_spectrum(mod, opt);
    std::printf("fixed point at iteration %d, residual %.3g\n", res.fixed_point_iteration, res.residual);
    EXPECT_GE(res.fixed_point_iteration, 0);
    EXPECT_LE(res.fixed_point_iteration, 50);
    EXPECT_LT(register_and_score(K, res.object, power).error, 1e-6);
}

TEST(PowerSpectrum, ZeroDataGivesZeroObject) {
    const ModulusData zero{ScanLattice{1, 32, 0.1}, std::vector<double>(32, 0.0), 0.0};
    const auto res = recover_power_spectrum(zero);
    for (double v : res.object) EXPECT_EQ(v, 0.0);
    EXPECT_TRUE(res.converged);
}

TEST(PowerSpectrum, RejectsInvalidInputs) {
    const ModulusData bad{ScanLattice{1, 4, 0.1}, {0.0, -1.0, 0.0, 0.0}, 0.0};
    EXPECT_THROW(recover_power_spectrum(bad), PreconditionError);
    RetrievalOptions opt;
    opt.beta = 1.5;
    const ModulusData ok{ScanLattice{1, 4, 0.1}, {0.0, 1.0, 0.0, 0.0}, 0.0};
    EXPECT_THROW(recover_power_spectrum(ok, opt), PreconditionError);
    opt = {};
    opt.restarts = 0;
    EXPECT_THROW(recover_power_spectrum(ok, opt), PreconditionError);
}

TEST(RecoverMask, GaussianFromSpectrumModulus) {
    const ScanLattice X{1, 128, 0.1};
    std::vector<cplx> u(X.size());
    std::vector<double> truth(X.size());
    for (std::size_t j = 0; j < u.size(); ++j) u[j] = truth[j] = std::exp(-X.point(j).norm2() / (2 * 0.6 * 0.6));
    const auto K = X.dual();
    const auto abs_uhat = spectrum_modulus(X, u);
    std::vector<char> support(X.size());
    for (std::size_t j = 0; j < support.size(); ++j) support[j] = X.point(j).norm() <= 5.0;
    RetrievalOptions opt;
    opt.seed = 1;
    const auto rec = recover_mask(K, abs_uhat, support, opt);
    const auto reg = register_and_score(X, rec.mask, truth);
    std::printf("gaussian mask error %.3g\n", reg.error);
    EXPECT_LT(reg.error, 1e-3);
    for (std::size_t j = 0; j < rec.mask.size(); ++j) {
        EXPECT_GE(rec.mask[j], 0.0);
        if (!support[j]) EXPECT_EQ(rec.mask[j], 0.0);
    }
}

TEST(RecoverMask, DoubleSlitWithEstimatedSupport) {
    const ScanLattice X{1, 128, 1.0};
    const auto truth = slits(X, 4, 16);
    const std::vector<cplx> u(truth.begin(), truth.end());
    const auto abs_uhat = spectrum_modulus(X, u);
    std::vector<double> power(abs_uhat.size());
    for (std::size_t j = 0; j < power.size(); ++j) power[j] = abs_uhat[j] * abs_uhat[j];
    const auto support = estimate_support(modulus_from_spectrum(X.dual(), power));
    RetrievalOptions opt;
    opt.seed = 5;
    const auto rec = recover_mask(X.dual(), abs_uhat, support, opt);
    const auto reg = register_and_score(X, rec.mask, truth);
    std::printf("double slit error %.3g residual %.3g\n", reg.error, rec.stats.residual);
    EXPECT_LT(reg.error, 0.05);
    EXPECT_EQ(rec.stats.er_violations, 0);
}

TEST(RecoverMask, MirrorImageGivesIdenticalData) {
    const ScanLattice X{1, 64, 1.0};
    std::vector<cplx> u(64, 0.0), mirrored(64, 0.0);
    for (int i = 0; i < 6; ++i) u[30 + i] = 1.0 + i;
    for (int i = 0; i < 64; ++i) mirrored[(64 - i) % 64] = u[i];
    const auto a = spectrum_modulus(X, u), b = spectrum_modulus(X, mirrored);
    for (std::size_t j = 0; j < a.size(); ++j) EXPECT_NEAR(a[j], b[j], 1e-12);
    EXPECT_LT(register_and_score(X, mirrored, u).error, 1e-12);
}

TEST(Register, ShiftMirrorAndPerturbation) {
    const ScanLattice X{1, 64, 0.5};
    std::vector<double> truth(64, 0.0);
    for (int i = 0; i < 10; ++i) truth[25 + i] = 1.0 + 0.3 * i;
    std::vector<double> shifted(64, 0.0), mirrored(64, 0.0);
    for (int i = 0; i < 64; ++i) {
        shifted[(i + 3) % 64] = truth[i];
        mirrored[(64 - i) % 64] = truth[i];
    }
    const auto r1 = register_and_score(X, shifted, truth);
    EXPECT_LT(r1.error, 1e-14);
    EXPECT_EQ(r1.shift.x, -3.0);
    const auto r2 = register_and_score(X, mirrored, truth);
    EXPECT_LT(r2.error, 1e-14);
    EXPECT_TRUE(r2.mirrored);
    // 1% white perturbation
    RngStream rng(2, {static_cast<std::uint64_t>(Purpose::synthetic)});
    std::vector<double> noise(64);
    double nn = 0.0, tn = 0.0;
    for (int i = 0; i < 64; ++i) {
        noise[i] = rng.normal();
        nn += noise[i] * noise[i];
        tn += truth[i] * truth[i];
    }
    std::vector<double> noisy(64);
    for (int i = 0; i < 64; ++i) noisy[i] = truth[i] + 0.01 * noise[i] * std::sqrt(tn / nn);
    const auto r3 = register_and_score(X, noisy, truth);
    EXPECT_NEAR(r3.error, 0.01, 0.002);
    // scale is free
    std::vector<double> scaled(truth);
    for (auto& v : scaled) v *= 3.7;
    EXPECT_LT(register_and_score(X, scaled, truth).error, 1e-14);
}

TEST(Register, TwoDimensionalShiftAndMirror) {
    const ScanLattice X{2, 15, 1.0};
    std::vector<cplx> truth(X.size(), 0.0), cand(X.size(), 0.0);
    for (int y = 5; y < 9; ++y)
        for (int x = 4; x < 7 + (y % 2); ++x) truth[y * 15 + x] = cplx(1.0 + x, 0.5 * y);
    for (int y = 0; y < 15; ++y)
        for (int x = 0; x < 15; ++x) cand[((2 * 7 - y + 2 + 15) % 15) * 15 + (2 * 7 - x + 15 - 1) % 15] = std::conj(truth[y * 15 + x]);
    const auto r = register_and_score(X, cand, truth);
    EXPECT_LT(r.error, 1e-12);
    EXPECT_TRUE(r.mirrored);
    EXPECT_TRUE(r.conjugated);
}

TEST(Pipeline, AnalyticMapRoundTrip) {
    const auto g = TransverseGrid::make(1, 256, 1.0);
    ComplexField u(g);
    for (int i = 0; i < 4; ++i) {
        u.values[128 - 10 + i] = 1.0;
        u.values[128 + 6 + i] = 1.0;
    }
    const ScanLattice L{1, 128, 1.0};
    const auto map = analytic_offset_map(u, L);
    const auto mod = covariance_to_modulus(map);
    RetrievalOptions opt;
    opt.seed = 8;
    const auto p = recover_power_spectrum(mod, opt);
    std::vector<double> abs_uhat(p.object.size());
    for (std::size_t j = 0; j < abs_uhat.size(); ++j) abs_uhat[j] = std::sqrt(p.object[j]);
    const auto rec = recover_mask(p.lattice, abs_uhat, estimate_support(mod), opt);
    // forward-simulate the recovered mask back to a map
    ComplexField back(g);
    for (int i = 0; i < L.n; ++i) back.values[128 - L.n / 2 + i] = rec.mask[i];
    const auto again = covariance_to_modulus(analytic_offset_map(back, L));
    std::vector<double> m2(mod.values.size()), a2(mod.values.size());
    for (std::size_t j = 0; j < m2.size(); ++j) {
        m2[j] = mod.values[j] * mod.values[j];
        a2[j] = again.values[j] * again.values[j];
    }
    const double err = l2_rel(a2, m2);
    std::printf("pipeline map error %.3g\n", err);
    EXPECT_LT(err, 0.01);
}

TEST(Pipeline, RetrieveMaskChainsBothStages) {
    const ScanLattice L{1, 80, 1.0};
    const auto truth = slits(L, 8, 20);
    // discrete autocorrelation squared is the noiseless offset map
    OffsetMap map{L, std::vector<double>(L.size(), 0.0)};
    for (int d = -L.n / 2; d < L.n / 2; ++d) {
        double v = 0.0;
        for (int i = 0; i < L.n; ++i) {
            const int k = i + d;
            if (k >= 0 && k < L.n) v += truth[k] * truth[i];
        }
        map.values[d + L.n / 2] = v * v;
    }
    RetrievalOptions opt;
    opt.seed = 3;
    const auto p = retrieve_mask(map, opt);
    EXPECT_LT(p.spectrum.residual, 1e-8);
    EXPECT_EQ(p.mask.lattice.n, L.n);
    EXPECT_NEAR(p.mask.lattice.step, L.step, 1e-12);
    const auto reg = register_and_score(p.mask.lattice, p.mask.mask, truth);
    EXPECT_LT(reg.error, 1e-3);
    for (std::size_t j = 0; j < p.mask.mask.size(); ++j) {
        EXPECT_GE(p.mask.mask[j], 0.0);
        if (!p.mask.support[j]) EXPECT_EQ(p.mask.mask[j], 0.0);
    }
}

TEST(OffsetLattice, InferredFromShiftList) {
    CovarianceMap c;
    for (int i = -3; i <= 4; ++i) c.shifts.push_back({0.25 * i, 0.0});
    c.values.assign(c.size() * c.size(), 1.0);
    const auto L = offset_lattice(c);
    EXPECT_EQ(L.dim, 1);
    EXPECT_DOUBLE_EQ(L.step, 0.25);
    EXPECT_EQ(L.n, 14);  // offsets -7..7 steps; lattice covers -7..6
    EXPECT_NO_THROW(reduce_to_offsets(c, L, true));

    CovarianceMap d;
    for (int j = 0; j < 3; ++j)
        for (int i = 0; i < 3; ++i) d.shifts.push_back({0.5 * i, 0.5 * j});
    const auto L2 = offset_lattice(d);
    EXPECT_EQ(L2.dim, 2);
    EXPECT_EQ(L2.n, 4);

    CovarianceMap bad;
    bad.shifts = {{0.0, 0.0}, {0.3, 0.0}, {0.7, 0.0}};
    EXPECT_THROW(offset_lattice(bad), PreconditionError);
    bad.shifts = {{0.0, 0.0}};
    EXPECT_THROW(offset_lattice(bad), PreconditionError);
}
