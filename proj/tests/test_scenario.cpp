#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "speckle/scenario.hpp"

using namespace speckle;
namespace fs = std::filesystem;

namespace {

const char* kMinimal = R"(
# homogeneous d=1 setup
[grid]
dim = 1
n = 1024
dx = 0.025
dx_unit = mm

[mask]
shape = gaussian
radius = 0.5
radius_unit = mm

[propagation]
k0 = 10
k0_unit = 1/mm
distance = 20
distance_unit = mm
realizations = 2
seed = 7

[camera]
radius = 4
radius_unit = mm

[scan]
points = 16
step = 0.05
step_unit = mm
)";

const char* kScint = R"(
[grid]
dim = 1
n = 2048
dx = 0.025
dx_unit = mm
[medium]
model = gaussian
gamma0 = 0.01
gamma0_unit = mm
corr_length = 0.1
corr_length_unit = mm
[mask]
radius = 0.5
radius_unit = mm
[propagation]
k0 = 40
k0_unit = 1/mm
distance = 5
distance_unit = mm
[camera]
radius = 4
radius_unit = mm
[scan]
points = 16
step = 0.05
step_unit = mm
)";

std::string replace(std::string s, const std::string& from, const std::string& to) {
    const auto p = s.find(from);
    EXPECT_NE(p, std::string::npos) << from;
    if (p != std::string::npos) s.replace(p, from.size(), to);
    return s;
}

std::vector<std::string> issues_of(const std::string& text) {
    try {
        parse_scenario(text);
    } catch (const ScenarioError& e) {
        return e.issues();
    }
    return {};
}

bool mentions(const std::vector<std::string>& v, const std::string& what) {
    for (const auto& s : v)
        if (s.find(what) != std::string::npos) return true;
    return false;
}

fs::path scratch(const std::string& name) {
    const auto d = fs::temp_directory_path() / ("speckle_scenario_" + name);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

}  // namespace

TEST(Scenario, MinimalHomogeneousParsesInMetres) {
    const auto sc = parse_scenario(kMinimal);
    const auto& ex = sc.experiment;
    EXPECT_EQ(ex.mask.grid.n, 1024);
    EXPECT_NEAR(ex.mask.grid.dx, 2.5e-5, 1e-18);
    EXPECT_NEAR(ex.k0, 1e4, 1e-9);
    EXPECT_NEAR(ex.ell, 0.02, 1e-15);
    EXPECT_FALSE(ex.medium.has_value());
    EXPECT_EQ(ex.nz, 1);
    EXPECT_EQ(ex.realizations, 2);
    EXPECT_EQ(ex.seed, 7u);
    EXPECT_EQ(ex.shifts.size(), 16u);
    EXPECT_NEAR(ex.shifts.front().x, -8 * 5e-5, 1e-15);
    EXPECT_EQ(sc.hash.size(), 16u);
    EXPECT_NEAR(std::abs(ex.mask.values[512]), 1.0, 1e-12);
}

TEST(Scenario, UnitChoiceDoesNotChangePhysics) {
    auto um = replace(kMinimal, "dx = 0.025\ndx_unit = mm", "dx = 25\ndx_unit = um");
    um = replace(um, "k0 = 10\nk0_unit = 1/mm", "k0 = 10000\nk0_unit = 1/m");
    const auto a = parse_scenario(kMinimal).experiment;
    const auto b = parse_scenario(um).experiment;
    EXPECT_NEAR(b.mask.grid.dx / a.mask.grid.dx, 1.0, 1e-14);
    EXPECT_NEAR(b.k0 / a.k0, 1.0, 1e-14);
    for (std::size_t j = 0; j < a.shifts.size(); ++j) EXPECT_NEAR(a.shifts[j].x, b.shifts[j].x, 1e-15);
}

TEST(Scenario, DimensionlessUnits) {
    std::string s = kMinimal;
    for (const char* u : {"dx_unit = mm", "radius_unit = mm", "distance_unit = mm", "step_unit = mm", "radius_unit = mm"})
        s = replace(s, u, std::string(u).substr(0, std::string(u).size() - 2) + "1");
    s = replace(s, "k0_unit = 1/mm", "k0_unit = 1");
    const auto sc = parse_scenario(s);
    EXPECT_DOUBLE_EQ(sc.experiment.mask.grid.dx, 0.025);
    EXPECT_DOUBLE_EQ(sc.experiment.k0, 10.0);
}

TEST(Scenario, MixingDimensionlessAndPhysicalRejected) {
    const auto v = issues_of(replace(kMinimal, "radius_unit = mm", "radius_unit = 1"));
    EXPECT_TRUE(mentions(v, "cannot be mixed")) << v.size();
}

TEST(Scenario, UnknownKeysAndSectionsRejected) {
    auto v = issues_of(replace(kMinimal, "seed = 7", "seed = 7\nsede = 8"));
    ASSERT_EQ(v.size(), 1u);
    EXPECT_TRUE(mentions(v, "[propagation] sede: unknown key"));
    v = issues_of(std::string(kMinimal) + "\n[plots]\nstyle = dark\n");
    EXPECT_TRUE(mentions(v, "[plots]: unknown section"));
    v = issues_of("stray = 1\n" + std::string(kMinimal));
    EXPECT_TRUE(mentions(v, "outside any section"));
}

TEST(Scenario, MissingOrUnknownUnitsNamed) {
    auto v = issues_of(replace(kMinimal, "radius_unit = mm\n", ""));
    EXPECT_TRUE(mentions(v, "[mask] radius_unit: required"));
    v = issues_of(replace(kMinimal, "k0_unit = 1/mm", "k0_unit = mm"));
    EXPECT_TRUE(mentions(v, "[propagation] k0_unit: unknown unit 'mm'"));
    v = issues_of(replace(kMinimal, "dx_unit = mm", "dx_unit = furlong"));
    EXPECT_TRUE(mentions(v, "[grid] dx_unit"));
}

TEST(Scenario, MalformedValuesAndMissingSections) {
    auto v = issues_of(replace(kMinimal, "n = 1024", "n = 1024x"));
    EXPECT_TRUE(mentions(v, "[grid] n: '1024x' is not an integer"));
    v = issues_of(replace(kMinimal, "radius = 0.5", "radius = nan"));
    EXPECT_TRUE(mentions(v, "[mask] radius"));
    v = issues_of(replace(kMinimal, "[scan]", "[scanner]"));
    EXPECT_TRUE(mentions(v, "[scan]: missing section"));
    EXPECT_TRUE(mentions(v, "[scanner]: unknown section"));
    EXPECT_THROW(parse_scenario("[grid\nn=1"), ScenarioError);
    EXPECT_THROW(parse_scenario(std::string(kMinimal) + "\n[grid]\ndim = 2\n"), ScenarioError);
}

TEST(Scenario, AllProblemsListedTogether) {
    auto s = replace(kMinimal, "n = 1024", "n = 1000");
    s = replace(s, "realizations = 2", "realizations = 0");
    s = replace(s, "k0 = 10\n", "k0 = -1\n");
    const auto v = issues_of(s);
    EXPECT_GE(v.size(), 3u);
    EXPECT_TRUE(mentions(v, "[grid]"));
    EXPECT_TRUE(mentions(v, "[propagation] realizations"));
    EXPECT_TRUE(mentions(v, "[propagation] k0"));
}

TEST(Scenario, ApertureOutsideGridNamesKey) {
    const auto v = issues_of(replace(kMinimal, "radius = 4\n", "radius = 40\n"));
    ASSERT_FALSE(v.empty());
    EXPECT_TRUE(mentions(v, "[camera] radius"));
}

TEST(Scenario, MaskTooLargeForBoxRejected) {
    const auto v = issues_of(replace(kMinimal, "radius = 0.5", "radius = 2"));
    EXPECT_TRUE(mentions(v, "1/3 of the box half-width"));
}

TEST(Scenario, ScanStepMustBeMultipleOfDx) {
    const auto v = issues_of(replace(kMinimal, "step = 0.05", "step = 0.06"));
    EXPECT_TRUE(mentions(v, "[scan] step"));
}

TEST(Scenario, AutomaticAndExplicitSteps) {
    const auto sc = parse_scenario(kScint);
    EXPECT_EQ(sc.experiment.nz, 200);
    EXPECT_NEAR(sc.experiment.plan().dz(), PropagationPlan::max_step(*sc.experiment.medium, sc.experiment.k0), 1e-15);
    const auto v = issues_of(replace(kScint, "[camera]", "steps = 50\n[camera]"));
    EXPECT_TRUE(mentions(v, "[propagation] steps"));
    EXPECT_TRUE(mentions(v, "raise nz to at least 200"));
}

TEST(Scenario, RegimeAndSelfAveragingCondition) {
    const auto sc = parse_scenario(kScint);
    const auto r = sc.regime();
    EXPECT_EQ(r.classification, "scintillation-strong");
    EXPECT_TRUE(r.camera_condition);
    const auto v = issues_of(replace(kScint, "radius = 4\n", "radius = 0.1\n"));
    EXPECT_TRUE(mentions(v, "[camera] radius"));
    EXPECT_TRUE(mentions(v, "self-averaging"));
}

TEST(Scenario, HashIgnoresLayoutButTracksValues) {
    const auto a = parse_scenario(kMinimal).hash;
    auto reordered = replace(kMinimal, "realizations = 2\nseed = 7", "seed   =   7\n; comment\nrealizations = 2");
    EXPECT_EQ(parse_scenario(reordered).hash, a);
    EXPECT_NE(parse_scenario(replace(kMinimal, "seed = 7", "seed = 8")).hash, a);
}

TEST(Scenario, BoxMasks) {
    auto s = replace(kMinimal, "shape = gaussian\nradius = 0.5\nradius_unit = mm", "shape = rect\nwidth = 0.1\nwidth_unit = mm");
    auto sc = parse_scenario(s);
    int on = 0;
    for (const auto& v : sc.experiment.mask.values) on += v.real() > 0.5;
    EXPECT_EQ(on, 4);
    s = replace(kMinimal, "shape = gaussian\nradius = 0.5\nradius_unit = mm",
                "shape = double_slit\nwidth = 0.1\nwidth_unit = mm\nseparation = 0.4\nseparation_unit = mm");
    sc = parse_scenario(s);
    std::vector<int> nodes;
    for (int j = 0; j < 1024; ++j)
        if (sc.experiment.mask.values[j].real() > 0.5) nodes.push_back(j - 512);
    EXPECT_EQ(nodes, (std::vector<int>{-10, -9, -8, -7, 6, 7, 8, 9}));
    EXPECT_TRUE(mentions(issues_of(replace(s, "separation = 0.4", "separation = 0.05")), "overlap"));
}

TEST(Scenario, FileMaskAndTabulatedMedium) {
    const auto dir = scratch("files");
    const auto g = TransverseGrid::make(1, 1024, 0.025);
    const auto u = ComplexField::sample(g, [](double x, double) { return cplx(std::abs(x) < 0.3 ? 1.0 : 0.0, 0.0); });
    write_field_dump((dir / "mask.bin").string(), u, "mask");
    {
        std::ofstream t(dir / "g0.csv");
        t << "offset,value\n";
        for (int i = 0; i <= 80; ++i) t << i * 0.01 << "," << 0.01 * std::exp(-0.5 * (i * 0.01 / 0.1) * (i * 0.01 / 0.1)) << "\n";
    }
    auto s = replace(kScint, "model = gaussian\ngamma0 = 0.01\ngamma0_unit = mm\ncorr_length = 0.1\ncorr_length_unit = mm",
                     "model = tabulated\ntable = g0.csv\ntable_offset_unit = mm\ntable_value_unit = mm");
    s = replace(s, "n = 2048", "n = 1024");
    s = replace(s, "distance = 5", "distance = 1");
    s = replace(s, "radius = 0.5\nradius_unit = mm\n", "shape = file\nfile = mask.bin\n");
    const auto sc = parse_scenario(s, dir / "tab.ini");
    EXPECT_EQ(sc.experiment.medium->kind(), MediumKind::tabulated);
    EXPECT_NEAR(sc.experiment.medium->gamma0_zero(), 1e-5, 1e-15);
    EXPECT_NEAR(sc.experiment.medium->corr_length(), 1e-4, 2e-6);
    for (std::size_t j = 0; j < u.values.size(); ++j) ASSERT_EQ(sc.experiment.mask.values[j], u.values[j]);
    EXPECT_EQ(sc.name, "tab");

    try {
        parse_scenario(replace(s, "file = mask.bin", "file = missing.bin"), dir / "tab.ini");
        FAIL();
    } catch (const ScenarioError& e) {
        EXPECT_TRUE(mentions(e.issues(), "missing.bin"));
    }
    const auto small = TransverseGrid::make(1, 512, 0.025);
    write_field_dump((dir / "small.bin").string(), ComplexField(small), "mask");
    try {
        parse_scenario(replace(s, "file = mask.bin", "file = small.bin"), dir / "tab.ini");
        FAIL();
    } catch (const ScenarioError& e) {
        EXPECT_TRUE(mentions(e.issues(), "does not match [grid]"));
    }
}

TEST(Scenario, OutputRootFromEnvironment) {
    ::setenv("SPECKLE_OUTPUT_ROOT", "/tmp/speckle_root", 1);
    EXPECT_EQ(output_root("run1"), fs::path("/tmp/speckle_root/run1"));
    EXPECT_EQ(output_root("/abs/run"), fs::path("/abs/run"));
    ::unsetenv("SPECKLE_OUTPUT_ROOT");
    EXPECT_EQ(output_root("run1"), fs::path("run1"));
}

TEST(Scenario, RetrievalSectionDefaultsAndOverrides) {
    auto sc = parse_scenario(kMinimal);
    EXPECT_EQ(sc.retrieval.restarts, 20);
    EXPECT_EQ(sc.retrieval.seed, 7u);
    sc = parse_scenario(std::string(kMinimal) + "\n[retrieval]\nrestarts = 4\nbeta = 0.7\nsupport_threshold = 0.05\n");
    EXPECT_EQ(sc.retrieval.restarts, 4);
    EXPECT_DOUBLE_EQ(sc.retrieval.beta, 0.7);
    EXPECT_DOUBLE_EQ(sc.support_threshold, 0.05);
    EXPECT_TRUE(mentions(issues_of(std::string(kMinimal) + "\n[retrieval]\nbeta = 1.5\n"), "[retrieval]"));
}

TEST(Scenario, MaskOnScanLatticeMatchesGridSampling) {
    MaskSpec m;
    m.shape = "double_slit";
    m.width = 8.0;
    m.separation = 14.0;
    const ScanLattice L{1, 80, 1.0};
    const auto s = sample_mask(m, L);
    double total = 0.0;
    for (double v : s) total += v;
    EXPECT_EQ(total, 16.0);  // two half-open slits of 8 nodes
    EXPECT_EQ(s[40 + 3], 1.0);
    EXPECT_EQ(s[40 + 11], 0.0);
    EXPECT_EQ(s[40 - 11], 1.0);
    const auto g = TransverseGrid::make(1, 128, 1.0);
    const auto f = build_mask(m, g);
    for (int i = -40; i < 40; ++i) EXPECT_EQ(f.values[64 + i].real(), s[40 + i]) << i;
    m.shape = "file";
    EXPECT_THROW(sample_mask(m, L), ConfigError);
}
