// speckle: simulate, analyze, retrieve, validate, report.
// Exit codes: 0 ok, 1 validation or configuration, 2 numerical failure, 3 I/O.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "speckle/acceptance.hpp"
#include "speckle/scenario.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace speckle;

namespace {

enum Exit { ok = 0, validation = 1, numerical = 2, io = 3 };

void write_json(const fs::path& p, const json& j) {
    std::ofstream os(p);
    if (!os) throw IoError("cannot open for writing: " + p.string());
    os << j.dump(2) << '\n';
    if (!os) throw IoError("write failed: " + p.string());
}

json read_json(const fs::path& p) {
    std::ifstream is(p);
    if (!is) throw IoError("cannot open: " + p.string());
    try {
        return json::parse(is);
    } catch (const json::exception& e) {
        throw IoError("malformed JSON in " + p.string() + ": " + e.what());
    }
}

fs::path resolve_out(const std::string& flag, const Scenario& sc) {
    return output_root(flag.empty() ? sc.output_dir : fs::path(flag));
}

json version_stamp() { return {{"version", std::string(toolkit_version)}}; }

void pgm_map(const fs::path& p, const CovarianceMap& c) {
    const int n = static_cast<int>(c.size());
    write_pgm(p.string(), c.values, n, n);
}

// ---- simulate ----------------------------------------------------------------------

struct SimulateArgs {
    std::string scenario, out;
    int workers = -1;
};

int simulate(const SimulateArgs& a) {
    auto sc = load_scenario(a.scenario);
    if (a.workers >= 0) sc.experiment.workers = a.workers;
    for (const auto& w : sc.warnings) std::cerr << "warning: " << w << '\n';
    const auto out = resolve_out(a.out, sc);
    fs::create_directories(out);

    const auto t0 = std::chrono::steady_clock::now();
    const auto st = run_experiment(sc.experiment);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    json extra = sc.stamp();
    extra["warnings"] = sc.warnings;
    if (sc.experiment.medium) extra["regime"] = sc.regime().to_json();
    write_stack(out / "stack", st, extra);

    json rep = sc.stamp();
    rep["source"] = sc.source.string();
    rep["config_hash"] = st.config_hash;
    rep["realizations"] = st.realizations;
    rep["shifts"] = st.shifts.size();
    rep["grid"] = {{"dim", st.grid.dim}, {"n", st.grid.n}, {"dx", st.grid.dx}};
    rep["warnings"] = sc.warnings;
    rep["seconds"] = secs;
    if (sc.experiment.medium) rep["regime"] = sc.regime().to_json();
    write_json(out / "simulate.json", rep);

    if (sc.write_pgm) {
        const auto& img = st.at(0, 0);
        if (st.grid.dim == 2) write_pgm((out / "intensity.pgm").string(), img, st.grid.n, st.grid.n);
        else write_pgm((out / "intensity.pgm").string(), img, st.grid.n, 1);
    }
    std::cout << "simulated " << st.realizations << " realization(s) x " << st.shifts.size() << " shift(s) in " << secs
              << " s -> " << (out / "stack").string() << '\n';
    if (sc.experiment.medium) std::cout << "regime: " << sc.regime().classification << '\n';
    return ok;
}

// ---- analyze -----------------------------------------------------------------------

struct AnalyzeArgs {
    std::string scenario, stack, out;
    bool compare = false, force = false;
    int workers = -1;
};

int analyze(const AnalyzeArgs& a) {
    auto sc = load_scenario(a.scenario);
    const auto out = resolve_out(a.out, sc);
    const fs::path stack_dir = a.stack.empty() ? out / "stack" : fs::path(a.stack);
    if (!fs::exists(stack_dir / "manifest.json")) throw IoError("missing stack: " + (stack_dir / "manifest.json").string());
    const auto manifest = read_json(stack_dir / "manifest.json");
    const std::string stack_hash = manifest.value("scenario_hash", std::string());
    if (stack_hash != sc.hash) {
        const std::string msg = "stack in " + stack_dir.string() + " has scenario hash '" + stack_hash + "' but " + a.scenario +
                                " hashes to '" + sc.hash + "'";
        if (!a.force) throw ConfigError(msg + " (pass --force to analyze anyway)");
        std::cerr << "warning: " << msg << '\n';
    }
    auto st = read_stack(stack_dir);
    const auto& ex = sc.experiment;
    if (ex.pixel > 0.0) st = pixel_smooth(st, ex.pixel);
    double rho = 0.0;
    if (ex.medium) rho = speckle_radius(ex.medium->gamma2bar(), ex.k0, ex.ell);
    const auto cov = empirical_covariance(st, ex.camera, rho);
    const auto& map = st.realizations > 1 ? cov.ensemble : cov.per_realization.front();
    for (const auto& w : map.warnings) std::cerr << "warning: " << w << '\n';

    json rep = sc.stamp();
    rep["stack"] = stack_dir.string();
    rep["stack_scenario_hash"] = stack_hash;
    rep["forced"] = stack_hash != sc.hash;
    rep["flavor"] = to_string(map.flavor);
    rep["warnings"] = map.warnings;
    rep["realizations"] = st.realizations;
    rep["shifts"] = map.size();

    std::vector<double> analytic;
    if (a.compare) {
        if (!ex.medium) throw ConfigError("--compare-analytic needs a [medium] section");
        analytic.resize(map.values.size());
        for (std::size_t i = 0; i < map.size(); ++i)
            for (std::size_t j = i; j < map.size(); ++j)
                analytic[i * map.size() + j] = analytic[j * map.size() + i] =
                    predicted_covariance_map(ex.mask, map.shifts[j] - map.shifts[i], ex.pixel, *ex.medium, ex.k0, ex.ell);
        double num = 0.0, den = 0.0;
        for (std::size_t k = 0; k < analytic.size(); ++k) {
            num += (map.values[k] - analytic[k]) * (map.values[k] - analytic[k]);
            den += analytic[k] * analytic[k];
        }
        rep["compare_analytic"] = {{"pearson", acceptance::detail::pearson(map.values, analytic)},
                                   {"relative_rms", den > 0.0 ? std::sqrt(num / den) : 0.0},
                                   {"regime", sc.regime().to_json()}};
        std::cout << "analytic correlation " << rep["compare_analytic"]["pearson"].get<double>() << '\n';
    }
    if (ex.medium) {
        try {
            const auto d = speckle_diagnostics(st, ex.camera);
            rep["speckle"] = {{"radius", d.radius},
                              {"radius_predicted", rho},
                              {"contrast", d.contrast},
                              {"fit_residual", d.fit_residual},
                              {"snr_predicted", d.snr_predicted},
                              {"snr_observed", d.snr_observed}};
        } catch (const Error& e) {
            rep["speckle"] = {{"error", e.what()}};
        }
    }
    fs::create_directories(out);
    write_covariance_csv((out / "covariance.csv").string(), map, analytic);
    if (sc.write_pgm) pgm_map(out / "covariance.pgm", map);
    write_json(out / "analysis.json", rep);
    std::cout << "covariance (" << to_string(map.flavor) << ", " << map.size() << " shifts) -> " << (out / "covariance.csv").string() << '\n';
    return ok;
}

// ---- retrieve ----------------------------------------------------------------------

struct RetrieveArgs {
    std::string csv, scenario, truth, out;
    std::optional<std::uint64_t> seed;
    std::optional<int> restarts;
    double support_threshold = -1.0;
    bool exact_offsets = false;
    int workers = -1;
};

void write_lattice_csv(const fs::path& p, const ScanLattice& L, const std::vector<std::pair<std::string, const std::vector<double>*>>& cols) {
    std::ofstream os(p);
    if (!os) throw IoError("cannot open for writing: " + p.string());
    os << "x,y";
    for (const auto& c : cols) os << ',' << c.first;
    os << '\n' << std::setprecision(17);
    for (std::size_t j = 0; j < L.size(); ++j) {
        const Vec2 q = L.point(j);
        os << q.x << ',' << q.y;
        for (const auto& c : cols) os << ',' << (*c.second)[j];
        os << '\n';
    }
    if (!os) throw IoError("write failed: " + p.string());
}

int retrieve(const RetrieveArgs& a) {
    RetrievalOptions opt;
    double threshold = 0.02;
    bool midpoints = true;
    json rep = version_stamp();
    if (!a.scenario.empty()) {
        const auto sc = load_scenario(a.scenario);
        opt = sc.retrieval;
        threshold = sc.support_threshold;
        midpoints = sc.average_midpoints;
        rep["scenario"] = sc.name;
        rep["scenario_hash"] = sc.hash;
    }
    if (a.seed) opt.seed = *a.seed;
    if (a.restarts) opt.restarts = *a.restarts;
    if (a.workers >= 0) opt.workers = a.workers;
    if (a.support_threshold >= 0.0) threshold = a.support_threshold;
    if (a.exact_offsets) midpoints = false;
    opt.validate();

    const auto map = read_covariance_csv(a.csv);
    const auto lattice = offset_lattice(map);
    const auto om = reduce_to_offsets(map, lattice, midpoints);
    const auto res = retrieve_mask(om, opt, threshold);

    const fs::path out = a.out.empty() ? fs::path(a.csv).parent_path() : output_root(a.out);
    if (!out.empty()) fs::create_directories(out);
    rep["input"] = a.csv;
    rep["flavor"] = to_string(map.flavor);
    rep["lattice"] = {{"dim", lattice.dim}, {"n", lattice.n}, {"step", lattice.step}};
    rep["average_midpoints"] = midpoints;
    rep["clipped_mass"] = res.modulus.clipped_mass;
    rep["support_threshold"] = threshold;
    rep["support_nodes"] = std::count(res.mask.support.begin(), res.mask.support.end(), 1);
    rep["stage1"] = res.spectrum.to_json();
    rep["stage2"] = res.mask.stats.to_json();
    rep["seed"] = opt.seed;

    std::vector<double> support(res.mask.support.begin(), res.mask.support.end());
    std::vector<std::pair<std::string, const std::vector<double>*>> cols{{"mask", &res.mask.mask}, {"support", &support}};
    std::vector<double> aligned;
    if (!a.truth.empty()) {
        const auto truth_sc = load_scenario(a.truth);
        const auto truth = sample_mask(truth_sc.mask, res.mask.lattice);
        const auto reg = register_and_score(res.mask.lattice, res.mask.mask, truth);
        aligned.resize(reg.aligned.size());
        for (std::size_t j = 0; j < aligned.size(); ++j) aligned[j] = reg.aligned[j].real();
        cols.emplace_back("truth", &truth);
        cols.emplace_back("aligned", &aligned);
        rep["truth"] = {{"scenario", a.truth},
                        {"registered_error", reg.error},
                        {"shift", {reg.shift.x, reg.shift.y}},
                        {"mirrored", reg.mirrored},
                        {"conjugated", reg.conjugated}};
        write_lattice_csv(out / "mask.csv", res.mask.lattice, cols);
        std::cout << "registered error vs truth " << reg.error << '\n';
    } else {
        write_lattice_csv(out / "mask.csv", res.mask.lattice, cols);
    }
    write_lattice_csv(out / "spectrum.csv", res.spectrum.lattice, {{"power", &res.spectrum.object}});
    write_lattice_csv(out / "modulus.csv", res.modulus.lattice, {{"modulus", &res.modulus.values}});
    if (lattice.dim == 2) write_pgm((out / "mask.pgm").string(), res.mask.mask, lattice.n, lattice.n);
    write_json(out / "retrieval.json", rep);
    std::cout << "stage residuals " << res.spectrum.residual << ", " << res.mask.stats.residual << "; clipped mass "
              << res.modulus.clipped_mass << " -> " << (out / "retrieval.json").string() << '\n';
    return ok;
}

// ---- validate ----------------------------------------------------------------------

struct ValidateArgs {
    std::string tier = "fast", json_path;
    std::vector<int> only;
    std::uint64_t seed = acceptance::Options{}.seed;
    int workers = 0;
};

int validate(const ValidateArgs& a) {
    acceptance::Options opt;
    opt.tier = acceptance::parse_tier(a.tier);
    opt.seed = a.seed;
    opt.workers = a.workers;
    std::cout << "tier " << a.tier << ", seed " << opt.seed << '\n';
    const auto results = acceptance::run_suite(opt, a.only, [](const acceptance::CriterionResult& r) { std::cout << r.line() << std::endl; });
    int failed = 0;
    for (const auto& r : results)
        if (r.ran && !r.passed()) ++failed;
    std::cout << results.size() << " criteria, " << failed << " failed\n";
    if (!a.json_path.empty()) {
        const fs::path p = output_root(a.json_path);
        if (p.has_parent_path()) fs::create_directories(p.parent_path());
        write_json(p, acceptance::suite_json(opt, results));
    }
    return failed == 0 ? ok : validation;
}

// ---- report ------------------------------------------------------------------------

int report(const std::string& dir_flag) {
    const fs::path dir = output_root(dir_flag);
    if (!fs::is_directory(dir)) throw IoError("not a directory: " + dir.string());
    json rep = version_stamp();
    rep["directory"] = dir.string();
    int found = 0;
    for (const char* name : {"simulate.json", "analysis.json", "retrieval.json", "acceptance.json"}) {
        const auto p = dir / name;
        if (!fs::exists(p)) continue;
        rep[fs::path(name).stem().string()] = read_json(p);
        ++found;
    }
    if (found == 0) throw IoError("no artifacts (simulate.json, analysis.json, retrieval.json, acceptance.json) in " + dir.string());

    std::ostringstream md;
    md << "# speckle report\n\nDirectory: `" << dir.string() << "`, toolkit " << toolkit_version << "\n";
    if (rep.contains("simulate")) {
        const auto& s = rep["simulate"];
        md << "\n## Simulation\n\n- scenario: " << s.value("scenario", "") << " (hash " << s.value("scenario_hash", "") << ")\n"
           << "- realizations: " << s.value("realizations", 0) << ", shifts: " << s.value("shifts", 0) << "\n";
        if (s.contains("regime")) md << "- regime: " << s["regime"].value("classification", "") << "\n";
        for (const auto& w : s.value("warnings", json::array())) md << "- warning: " << w.get<std::string>() << "\n";
    }
    if (rep.contains("analysis")) {
        const auto& s = rep["analysis"];
        md << "\n## Covariance\n\n- flavor: " << s.value("flavor", "") << "\n";
        if (s.contains("compare_analytic")) md << "- analytic correlation: " << s["compare_analytic"].value("pearson", 0.0) << "\n";
        if (s.contains("speckle") && s["speckle"].contains("radius"))
            md << "- speckle radius: " << s["speckle"].value("radius", 0.0) << " (predicted " << s["speckle"].value("radius_predicted", 0.0)
               << ")\n";
        if (rep["analysis"].value("forced", false)) md << "- analyzed with --force against a different scenario hash\n";
    }
    if (rep.contains("retrieval")) {
        const auto& s = rep["retrieval"];
        md << "\n## Retrieval\n\n- clipped mass: " << s.value("clipped_mass", 0.0) << "\n- residuals: "
           << s["stage1"].value("residual", 0.0) << " (spectrum), " << s["stage2"].value("residual", 0.0) << " (mask)\n";
        if (s.contains("truth")) md << "- registered error vs truth: " << s["truth"].value("registered_error", 0.0) << "\n";
    }
    if (rep.contains("acceptance")) {
        const auto& s = rep["acceptance"];
        md << "\n## Acceptance (" << s.value("tier", "") << ")\n\n";
        for (const auto& c : s.value("criteria", json::array()))
            md << "- " << c.value("id", 0) << " " << c.value("title", "") << ": " << c.value("status", "") << "\n";
    }
    write_json(dir / "report.json", rep);
    std::ofstream os(dir / "report.md");
    if (!os) throw IoError("cannot write " + (dir / "report.md").string());
    os << md.str();
    std::cout << md.str();
    return ok;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"speckle correlation imaging toolkit"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(toolkit_version));

    SimulateArgs sa;
    auto* sim = app.add_subcommand("simulate", "run a scenario and write the intensity stack");
    sim->add_option("scenario", sa.scenario, "scenario file")->required();
    sim->add_option("--out", sa.out, "output directory (overrides [output] directory)");
    sim->add_option("--workers", sa.workers, "worker threads (0 = all cores)");

    AnalyzeArgs aa;
    auto* ana = app.add_subcommand("analyze", "covariance maps and diagnostics of a simulated stack");
    ana->add_option("scenario", aa.scenario, "scenario file")->required();
    ana->add_option("--stack", aa.stack, "stack directory (default <out>/stack)");
    ana->add_option("--out", aa.out, "output directory");
    ana->add_flag("--compare-analytic", aa.compare, "append the predicted covariance and a correlation score");
    ana->add_flag("--force", aa.force, "accept a stack produced by a different scenario");

    RetrieveArgs ra;
    auto* ret = app.add_subcommand("retrieve", "recover the mask from a covariance CSV");
    ret->add_option("csv", ra.csv, "covariance CSV from analyze")->required();
    ret->add_option("--scenario", ra.scenario, "take retrieval options from this scenario");
    ret->add_option("--truth", ra.truth, "scenario whose mask is the ground truth; adds a registered error");
    ret->add_option("--out", ra.out, "output directory (default: next to the CSV)");
    ret->add_option("--seed", ra.seed, "retrieval seed");
    ret->add_option("--restarts", ra.restarts, "random restarts");
    ret->add_option("--support-threshold", ra.support_threshold, "support estimate threshold (fraction of peak)");
    ret->add_flag("--exact-offsets", ra.exact_offsets, "reject maps where several shift pairs share an offset");
    ret->add_option("--workers", ra.workers, "worker threads (0 = all cores)");

    ValidateArgs va;
    auto* val = app.add_subcommand("validate", "run the acceptance suite");
    val->add_option("--tier", va.tier, "fast or full")->check(CLI::IsMember({"fast", "full"}));
    val->add_option("--only", va.only, "criterion ids")->delimiter(',');
    val->add_option("--seed", va.seed, "master seed");
    val->add_option("--workers", va.workers, "worker threads (0 = all cores)");
    val->add_option("--json", va.json_path, "write the per-criterion report here");

    std::string report_dir;
    auto* rep = app.add_subcommand("report", "summarize the artifacts of an output directory");
    rep->add_option("directory", report_dir, "output directory")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? ok : validation;
    }

    try {
        if (*sim) return simulate(sa);
        if (*ana) return analyze(aa);
        if (*ret) return retrieve(ra);
        if (*val) return validate(va);
        if (*rep) return report(report_dir);
    } catch (const ScenarioError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return validation;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return validation;
    } catch (const PreconditionError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return validation;
    } catch (const IoError& e) {
        std::cerr << "I/O error: " << e.what() << '\n';
        return io;
    } catch (const fs::filesystem_error& e) {
        std::cerr << "I/O error: " << e.what() << '\n';
        return io;
    } catch (const Error& e) {
        std::cerr << "numerical error: " << e.what() << '\n';
        return numerical;
    }
    return ok;
}
