#pragma once

// Scenario files: INI sections [grid] [medium] [mask] [propagation] [camera]
// [scan] [retrieval] [output]. Physical values carry a sibling `<key>_unit`.
// Lengths are stored internally in metres.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <json.hpp>

#include "speckle/analytic.hpp"
#include "speckle/error.hpp"
#include "speckle/estimator.hpp"
#include "speckle/grid.hpp"
#include "speckle/medium.hpp"
#include "speckle/retrieval.hpp"

namespace speckle {

inline constexpr std::string_view toolkit_version = "0.1.0";

/// Collects every validation problem of a scenario.
class ScenarioError : public ConfigError {
public:
    explicit ScenarioError(std::vector<std::string> issues)
        : ConfigError(join(issues)), issues_(std::move(issues)) {}
    [[nodiscard]] const std::vector<std::string>& issues() const { return issues_; }

private:
    static std::string join(const std::vector<std::string>& v) {
        std::string s = "invalid scenario:";
        for (const auto& i : v) s += "\n  - " + i;
        return s;
    }
    std::vector<std::string> issues_;
};

struct MaskSpec {
    std::string shape = "gaussian";  ///< gaussian | rect | double_slit | file
    double radius = 0.0;             ///< gaussian: exp(-|x - c|^2 / (2 radius^2))
    double width = 0.0;              ///< rect side, slit width
    double height = 0.0;             ///< slit length (d = 2)
    double separation = 0.0;         ///< slit center distance
    Vec2 center;
    std::filesystem::path file;      ///< field dump, dx in the [grid] unit
};

struct Scenario {
    std::string name;
    std::filesystem::path source;
    MaskSpec mask;
    ExperimentConfig experiment;
    ScanLattice scan;
    RetrievalOptions retrieval;
    double support_threshold = 0.02;
    bool average_midpoints = true;
    std::filesystem::path output_dir;
    bool write_pgm = true;
    std::string hash;
    std::vector<std::string> warnings;

    [[nodiscard]] RegimeReport regime() const {
        const auto geo = mask_geometry(experiment.mask);
        double reach = 0.0;
        for (const auto& r : experiment.shifts) reach = std::max(reach, r.norm());
        const RegimeInputs in{geo.rms_radius, experiment.camera.radius, experiment.pixel, reach, experiment.k0, experiment.ell};
        return classify_regime(in, *experiment.medium);
    }

    /// Identification block embedded in every artifact.
    [[nodiscard]] nlohmann::json stamp() const {
        return {{"scenario", name}, {"scenario_hash", hash}, {"version", std::string(toolkit_version)}};
    }
};

namespace detail {

inline const std::map<std::string, std::set<std::string>>& scenario_keys() {
    static const std::map<std::string, std::set<std::string>> keys = {
        {"grid", {"dim", "n", "dx", "dx_unit"}},
        {"medium", {"model", "gamma0", "gamma0_unit", "corr_length", "corr_length_unit", "table", "table_offset_unit", "table_value_unit"}},
        {"mask", {"shape", "radius", "radius_unit", "width", "width_unit", "height", "height_unit", "separation", "separation_unit",
                  "center_x", "center_x_unit", "center_y", "center_y_unit", "file"}},
        {"propagation", {"k0", "k0_unit", "distance", "distance_unit", "steps", "splitting", "realizations", "seed", "keep_fields", "workers"}},
        {"camera", {"center_x", "center_x_unit", "center_y", "center_y_unit", "radius", "radius_unit", "pixel", "pixel_unit"}},
        {"scan", {"points", "step", "step_unit"}},
        {"retrieval", {"hio", "er", "cycles", "restarts", "beta", "threshold", "support_threshold", "seed", "average_midpoints"}},
        {"output", {"directory", "pgm"}},
    };
    return keys;
}

inline std::optional<double> length_factor(const std::string& u) {
    static const std::map<std::string, double> f = {{"m", 1.0}, {"cm", 1e-2}, {"mm", 1e-3}, {"um", 1e-6}, {"nm", 1e-9}, {"1", 1.0}};
    const auto it = f.find(u);
    return it == f.end() ? std::nullopt : std::optional<double>(it->second);
}

inline std::optional<double> wavenumber_factor(const std::string& u) {
    if (u == "1") return 1.0;
    if (u.size() < 3 || u.compare(0, 2, "1/") != 0) return std::nullopt;
    const auto l = length_factor(u.substr(2));
    return l && u.substr(2) != "1" ? std::optional<double>(1.0 / *l) : std::nullopt;
}

class IniReader {
public:
    IniReader(const boost::property_tree::ptree& t, std::vector<std::string>& issues) : tree_(t), issues_(issues) {}

    [[nodiscard]] bool has_section(const std::string& s) const { return tree_.get_child_optional(s).has_value(); }

    [[nodiscard]] std::optional<std::string> raw(const std::string& s, const std::string& k) const {
        const auto sec = tree_.get_child_optional(s);
        if (!sec) return std::nullopt;
        const auto v = sec->get_optional<std::string>(k);
        if (!v) return std::nullopt;
        std::string x = *v;
        x.erase(0, x.find_first_not_of(" \t"));
        x.erase(x.find_last_not_of(" \t\r") + 1);
        return x;
    }

    std::string text(const std::string& s, const std::string& k, const std::string& def) const {
        return raw(s, k).value_or(def);
    }

    std::optional<double> number(const std::string& s, const std::string& k, bool required) {
        const auto v = raw(s, k);
        if (!v) {
            if (required) issues_.push_back(where(s, k) + ": required");
            return std::nullopt;
        }
        double x = 0.0;
        const auto* end = v->data() + v->size();
        const auto r = std::from_chars(v->data(), end, x);
        if (r.ec != std::errc() || r.ptr != end || !std::isfinite(x)) {
            issues_.push_back(where(s, k) + ": '" + *v + "' is not a finite number");
            return std::nullopt;
        }
        return x;
    }

    template <class T>
    std::optional<T> integer(const std::string& s, const std::string& k, bool required) {
        const auto v = raw(s, k);
        if (!v) {
            if (required) issues_.push_back(where(s, k) + ": required");
            return std::nullopt;
        }
        T x{};
        const auto* end = v->data() + v->size();
        const auto r = std::from_chars(v->data(), end, x);
        if (r.ec != std::errc() || r.ptr != end) {
            issues_.push_back(where(s, k) + ": '" + *v + "' is not an integer");
            return std::nullopt;
        }
        return x;
    }

    std::optional<bool> boolean(const std::string& s, const std::string& k) {
        const auto v = raw(s, k);
        if (!v) return std::nullopt;
        if (*v == "true" || *v == "yes" || *v == "1") return true;
        if (*v == "false" || *v == "no" || *v == "0") return false;
        issues_.push_back(where(s, k) + ": '" + *v + "' is not a boolean");
        return std::nullopt;
    }

    /// Value times the factor of its `<key>_unit` sibling, which is required whenever the value is present.
    std::optional<double> length(const std::string& s, const std::string& k, bool required) {
        return scaled(s, k, required, length_factor, "m, cm, mm, um, nm or 1");
    }
    std::optional<double> wavenumber(const std::string& s, const std::string& k, bool required) {
        return scaled(s, k, required, wavenumber_factor, "1/m, 1/cm, 1/mm, 1/um, 1/nm or 1");
    }

    std::optional<double> unit_factor(const std::string& s, const std::string& k) {
        const auto u = raw(s, k);
        if (!u) {
            issues_.push_back(where(s, k) + ": required");
            return std::nullopt;
        }
        note_unit(s, k, *u);
        const auto f = length_factor(*u);
        if (!f) issues_.push_back(where(s, k) + ": unknown unit '" + *u + "' (use m, cm, mm, um, nm or 1)");
        return f;
    }

    static std::string where(const std::string& s, const std::string& k) { return "[" + s + "] " + k; }

private:
    template <class F>
    std::optional<double> scaled(const std::string& s, const std::string& k, bool required, F factor, const char* allowed) {
        const auto x = number(s, k, required);
        const auto u = raw(s, k + "_unit");
        if (!x) {
            if (u) issues_.push_back(where(s, k + "_unit") + ": given without " + k);
            return std::nullopt;
        }
        if (!u) {
            issues_.push_back(where(s, k + "_unit") + ": required unit for " + k);
            return std::nullopt;
        }
        note_unit(s, k + "_unit", *u);
        const auto f = factor(*u);
        if (!f) {
            issues_.push_back(where(s, k + "_unit") + ": unknown unit '" + *u + "' (use " + allowed + ")");
            return std::nullopt;
        }
        return *x * *f;
    }

    void note_unit(const std::string& s, const std::string& k, const std::string& u) {
        auto& first = u == "1" ? first_dimensionless_ : first_physical_;
        if (first.empty()) first = where(s, k);
        if (!first_dimensionless_.empty() && !first_physical_.empty() && !mixed_reported_) {
            mixed_reported_ = true;
            issues_.push_back(where(s, k) + ": dimensionless '1' units (" + first_dimensionless_ + ") cannot be mixed with physical units (" +
                              first_physical_ + ")");
        }
    }

    const boost::property_tree::ptree& tree_;
    std::vector<std::string>& issues_;
    std::string first_dimensionless_, first_physical_;
    bool mixed_reported_ = false;
};

inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string slurp(const std::filesystem::path& p) {
    std::ifstream is(p, std::ios::binary);
    if (!is) throw IoError("cannot open: " + p.string());
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

}  // namespace detail

/// Analytic mask shape at (x, y). Boxes are half-open, [c - w/2, c + w/2).
inline double mask_value(const MaskSpec& m, int dim, double x, double y) {
    auto box = [](double t, double c, double w) { return t >= c - 0.5 * w && t < c + 0.5 * w; };
    const double dx = x - m.center.x, dy = y - m.center.y;
    if (m.shape == "gaussian") return std::exp(-(dx * dx + dy * dy) / (2.0 * m.radius * m.radius));
    if (m.shape == "rect") return box(dx, 0.0, m.width) && (dim == 1 || box(dy, 0.0, m.width)) ? 1.0 : 0.0;
    const bool along = dim == 1 || box(dy, 0.0, m.height);
    const bool in = box(dx, -0.5 * m.separation, m.width) || box(dx, 0.5 * m.separation, m.width);
    return in && along ? 1.0 : 0.0;
}

/// Mask samples on grid g.
inline ComplexField build_mask(const MaskSpec& m, const TransverseGrid& g, double file_dx = 0.0) {
    if (m.shape == "file") {
        auto d = read_field_dump(m.file.string());
        const auto& fg = d.field.grid;
        if (fg.dim != g.dim || fg.n != g.n || std::abs(fg.dx * (file_dx > 0.0 ? file_dx : 1.0) - g.dx) > 1e-9 * g.dx)
            throw ConfigError("[mask] file: grid of " + m.file.string() + " does not match [grid]");
        d.field.grid = g;
        return d.field;
    }
    const double eps = 1e-9 * g.dx;
    return ComplexField::sample(g, [&](double x, double y) { return cplx(mask_value(m, g.dim, x + eps, y + eps), 0.0); });
}

/// Mask samples at the points of a scan lattice (analytic shapes only).
inline std::vector<double> sample_mask(const MaskSpec& m, const ScanLattice& L) {
    if (m.shape == "file") throw ConfigError("[mask] shape: file masks cannot be resampled onto a scan lattice");
    const double eps = 1e-9 * L.step;
    std::vector<double> out(L.size());
    for (std::size_t j = 0; j < out.size(); ++j) {
        const Vec2 p = L.point(j);
        out[j] = mask_value(m, L.dim, p.x + eps, p.y + eps);
    }
    return out;
}

/// Parses and validates a scenario. All problems are reported together.
inline Scenario parse_scenario(const std::string& content, const std::filesystem::path& source = "scenario.ini") {
    namespace pt = boost::property_tree;
    pt::ptree tree;
    {
        std::istringstream is(content);
        try {
            pt::read_ini(is, tree);
        } catch (const pt::ini_parser_error& e) {
            throw ScenarioError({source.string() + ":" + std::to_string(e.line()) + ": " + e.message()});
        }
    }
    std::vector<std::string> issues;
    const auto& known = detail::scenario_keys();
    for (const auto& [sec, body] : tree) {
        const auto it = known.find(sec);
        if (body.empty() && !body.data().empty()) {
            issues.push_back("key '" + sec + "' outside any section");
            continue;
        }
        if (it == known.end()) {
            issues.push_back("[" + sec + "]: unknown section");
            continue;
        }
        for (const auto& [key, v] : body)
            if (!it->second.count(key)) issues.push_back(detail::IniReader::where(sec, key) + ": unknown key");
    }
    for (const char* s : {"grid", "mask", "propagation", "camera", "scan"})
        if (!tree.get_child_optional(s)) issues.push_back(std::string("[") + s + "]: missing section");
    if (!issues.empty()) throw ScenarioError(issues);

    detail::IniReader in(tree, issues);
    const auto base = source.parent_path();
    auto resolve = [&](const std::string& p) {
        const std::filesystem::path f(p);
        return f.is_absolute() ? f : base / f;
    };

    Scenario sc;
    sc.source = source;
    sc.name = source.stem().string();
    auto& ex = sc.experiment;

    // [grid]
    const auto dim = in.integer<int>("grid", "dim", true);
    const auto n = in.integer<int>("grid", "n", true);
    const auto dx = in.length("grid", "dx", true);
    std::optional<TransverseGrid> grid;
    if (dim && n && dx) {
        try {
            grid = TransverseGrid::make(*dim, *n, *dx);
        } catch (const ConfigError& e) {
            issues.push_back(std::string("[grid]: ") + e.what());
        }
    }
    const double grid_unit = in.raw("grid", "dx_unit") ? detail::length_factor(*in.raw("grid", "dx_unit")).value_or(1.0) : 1.0;

    // [medium]
    const auto model = in.text("medium", "model", "homogeneous");
    std::string hashed_files;
    if (model == "gaussian") {
        const auto g0 = in.length("medium", "gamma0", true);
        const auto lc = in.length("medium", "corr_length", true);
        if (g0 && lc) {
            try {
                ex.medium = MediumModel::gaussian(*g0, *lc);
            } catch (const ConfigError& e) {
                issues.push_back(std::string("[medium]: ") + e.what());
            }
        }
    } else if (model == "tabulated") {
        const auto path = in.raw("medium", "table");
        const auto fo = in.unit_factor("medium", "table_offset_unit");
        const auto fv = in.unit_factor("medium", "table_value_unit");
        if (!path) issues.push_back("[medium] table: required for the tabulated model");
        if (path && fo && fv) {
            try {
                auto t = read_profile_table(resolve(*path).string());
                hashed_files += detail::slurp(resolve(*path));
                for (auto& o : t.offsets) o *= *fo;
                for (auto& v : t.values) v *= *fv;
                ex.medium = MediumModel::tabulated(std::move(t.offsets), std::move(t.values));
            } catch (const IoError& e) {
                issues.push_back(std::string("[medium] table: ") + e.what());
            } catch (const ConfigError& e) {
                issues.push_back(std::string("[medium] table: ") + e.what());
            }
        }
    } else if (model != "homogeneous") {
        issues.push_back("[medium] model: '" + model + "' (use homogeneous, gaussian or tabulated)");
    }

    // [mask]
    auto& mk = sc.mask;
    mk.shape = in.text("mask", "shape", "gaussian");
    mk.center = {in.length("mask", "center_x", false).value_or(0.0), in.length("mask", "center_y", false).value_or(0.0)};
    if (mk.shape == "gaussian") {
        mk.radius = in.length("mask", "radius", true).value_or(0.0);
        if (in.raw("mask", "radius") && !(mk.radius > 0.0)) issues.push_back("[mask] radius: must be positive");
    } else if (mk.shape == "rect" || mk.shape == "double_slit") {
        mk.width = in.length("mask", "width", true).value_or(0.0);
        if (in.raw("mask", "width") && !(mk.width > 0.0)) issues.push_back("[mask] width: must be positive");
        if (mk.shape == "double_slit") {
            mk.separation = in.length("mask", "separation", true).value_or(0.0);
            if (mk.separation > 0.0 && mk.separation <= mk.width) issues.push_back("[mask] separation: slits overlap (separation <= width)");
            if (grid && grid->dim == 2) mk.height = in.length("mask", "height", true).value_or(0.0);
        }
    } else if (mk.shape == "file") {
        const auto f = in.raw("mask", "file");
        if (!f) issues.push_back("[mask] file: required for shape = file");
        else mk.file = resolve(*f);
    } else {
        issues.push_back("[mask] shape: '" + mk.shape + "' (use gaussian, rect, double_slit or file)");
    }
    if (grid && (mk.shape != "file" || !mk.file.empty())) {
        try {
            ex.mask = build_mask(mk, *grid, grid_unit);
            if (mk.shape == "file") hashed_files += detail::slurp(mk.file);
            if (energy(ex.mask) == 0.0) issues.push_back("[mask]: no grid node falls inside the mask");
        } catch (const IoError& e) {
            issues.push_back(std::string("[mask] file: ") + e.what());
        } catch (const ConfigError& e) {
            issues.push_back(e.what());
        }
    }

    // [propagation]
    ex.k0 = in.wavenumber("propagation", "k0", true).value_or(1.0);
    ex.ell = in.length("propagation", "distance", true).value_or(0.0);
    if (!(ex.k0 > 0.0)) issues.push_back("[propagation] k0: must be positive");
    if (!(ex.ell > 0.0)) issues.push_back("[propagation] distance: must be positive");
    const auto steps = in.text("propagation", "steps", "auto");
    if (steps == "auto") {
        ex.nz = ex.medium ? std::max(1, static_cast<int>(std::ceil(ex.ell / PropagationPlan::max_step(*ex.medium, ex.k0) - 1e-9))) : 1;
    } else {
        ex.nz = in.integer<int>("propagation", "steps", true).value_or(1);
        if (ex.nz < 1) issues.push_back("[propagation] steps: must be >= 1 or auto");
    }
    const auto split = in.text("propagation", "splitting", "strang");
    if (split == "lie") ex.splitting = Splitting::lie;
    else if (split != "strang") issues.push_back("[propagation] splitting: '" + split + "' (use strang or lie)");
    ex.realizations = in.integer<int>("propagation", "realizations", false).value_or(1);
    if (ex.realizations < 1) issues.push_back("[propagation] realizations: must be >= 1");
    ex.seed = in.integer<std::uint64_t>("propagation", "seed", false).value_or(0);
    ex.keep_fields = in.boolean("propagation", "keep_fields").value_or(false);
    ex.workers = in.integer<int>("propagation", "workers", false).value_or(0);
    if (ex.workers < 0) issues.push_back("[propagation] workers: must be >= 0");

    // [camera]
    ex.camera.center = {in.length("camera", "center_x", false).value_or(0.0), in.length("camera", "center_y", false).value_or(0.0)};
    ex.camera.radius = in.length("camera", "radius", true).value_or(0.0);
    ex.pixel = in.length("camera", "pixel", false).value_or(0.0);
    if (in.raw("camera", "radius") && !(ex.camera.radius > 0.0)) issues.push_back("[camera] radius: must be positive");
    if (ex.pixel < 0.0) issues.push_back("[camera] pixel: must be >= 0");

    // [scan]
    const auto points = in.integer<int>("scan", "points", true);
    const auto step = in.length("scan", "step", true);
    if (points && *points < 2) issues.push_back("[scan] points: need at least 2");
    if (step && !(*step > 0.0)) issues.push_back("[scan] step: must be positive");
    if (grid && points && step && *points >= 2 && *step > 0.0) {
        const double s = *step / grid->dx;
        if (std::abs(s - std::round(s)) > 1e-9 * std::max(1.0, s))
            issues.push_back("[scan] step: " + std::to_string(*step) + " is not a multiple of [grid] dx");
        sc.scan = ScanLattice{grid->dim, *points, std::round(s) * grid->dx};
        ex.shifts.clear();
        for (std::size_t j = 0; j < sc.scan.size(); ++j) ex.shifts.push_back(sc.scan.point(j));
        if (grid->dim == 2 && sc.scan.size() > 4096) issues.push_back("[scan] points: more than 4096 shifts in 2-D");
    }

    // [retrieval]
    auto& ro = sc.retrieval;
    ro.hio_iterations = in.integer<int>("retrieval", "hio", false).value_or(ro.hio_iterations);
    ro.er_iterations = in.integer<int>("retrieval", "er", false).value_or(ro.er_iterations);
    ro.cycles = in.integer<int>("retrieval", "cycles", false).value_or(ro.cycles);
    ro.restarts = in.integer<int>("retrieval", "restarts", false).value_or(ro.restarts);
    ro.beta = in.number("retrieval", "beta", false).value_or(ro.beta);
    ro.residual_threshold = in.number("retrieval", "threshold", false).value_or(ro.residual_threshold);
    ro.seed = in.integer<std::uint64_t>("retrieval", "seed", false).value_or(ex.seed);
    ro.workers = ex.workers;
    sc.support_threshold = in.number("retrieval", "support_threshold", false).value_or(sc.support_threshold);
    sc.average_midpoints = in.boolean("retrieval", "average_midpoints").value_or(true);
    try {
        ro.validate();
    } catch (const PreconditionError& e) {
        issues.push_back(std::string("[retrieval]: ") + e.what());
    }
    if (!(sc.support_threshold > 0.0 && sc.support_threshold < 1.0)) issues.push_back("[retrieval] support_threshold: must lie in (0, 1)");

    // [output]
    sc.output_dir = in.text("output", "directory", sc.name);
    sc.write_pgm = in.boolean("output", "pgm").value_or(true);

    // Cross-field constraints, only once every field parsed.
    if (issues.empty() && grid) {
        const double half = 0.5 * grid->length();
        const auto geo = mask_geometry(ex.mask);
        double reach = 0.0;
        for (const auto& r : ex.shifts) reach = std::max(reach, r.norm());
        const double spread = ex.medium ? beam_spread(ex.medium->gamma2bar(), ex.ell) : 0.0;
        const double extent = geo.center.norm() + geo.extent + reach + spread;
        if (!(extent < half / 3.0)) {
            std::ostringstream os;
            os << "[grid] n: mask extent " << geo.center.norm() + geo.extent << " + largest shift " << reach << " + beam spread " << spread
               << " = " << extent << " must stay below 1/3 of the box half-width " << half << "; raise [grid] n or dx, or shrink [mask]/[scan]";
            issues.push_back(os.str());
        }
        const double rho = ex.speckle_scale();
        const double cam = std::max(std::abs(ex.camera.center.x), grid->dim == 2 ? std::abs(ex.camera.center.y) : 0.0);
        if (cam + ex.camera.radius + 4.0 * rho > half) {
            std::ostringstream os;
            os << "[camera] radius: aperture at " << cam << " with radius " << ex.camera.radius << " plus margin " << 4.0 * rho
               << " leaves the grid box of half-width " << half;
            issues.push_back(os.str());
        }
        try {
            ex.plan().validate(*grid);
        } catch (const ConfigError& e) {
            issues.push_back(std::string("[propagation] steps: ") + e.what());
        }
        for (const auto& w : ex.plan().warnings(*grid)) sc.warnings.push_back(w);
        if (ex.medium && issues.empty()) {
            const auto rep = sc.regime();
            if (rep.classification.rfind("scintillation", 0) == 0 && !rep.camera_condition) {
                std::ostringstream os;
                os << "[camera] radius: " << ex.camera.radius << " violates R_A >= 10 sqrt(pixel^2 + rho^2) = "
                   << 10.0 * std::hypot(ex.pixel, rep.rho_speckle) << " required for self-averaging";
                issues.push_back(os.str());
            }
            if (rep.classification == "intermediate")
                sc.warnings.push_back("regime: mask radius is comparable to the medium correlation length; no closed-form prediction applies");
        }
        if (issues.empty()) {
            try {
                ex.validate();
            } catch (const ConfigError& e) {
                issues.push_back(e.what());
            }
        }
    }
    if (!issues.empty()) throw ScenarioError(issues);

    // Hash of the normalized key/value set plus referenced file contents.
    std::vector<std::string> lines;
    for (const auto& [sec, body] : tree)
        for (const auto& [key, v] : body) lines.push_back(sec + "." + key + "=" + *in.raw(sec, key));
    std::sort(lines.begin(), lines.end());
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const auto& l : lines) h = detail::fnv1a(l + "\n", h);
    h = detail::fnv1a(hashed_files, h);
    std::ostringstream hs;
    hs << std::hex;
    hs.width(16);
    hs.fill('0');
    hs << h;
    sc.hash = hs.str();
    return sc;
}

inline Scenario load_scenario(const std::filesystem::path& path) {
    return parse_scenario(detail::slurp(path), path);
}

/// Output directory: relative paths resolve under SPECKLE_OUTPUT_ROOT when set.
inline std::filesystem::path output_root(const std::filesystem::path& dir) {
    if (dir.is_absolute()) return dir;
    const char* env = std::getenv("SPECKLE_OUTPUT_ROOT");
    return env && *env ? std::filesystem::path(env) / dir : dir;
}

}  // namespace speckle
