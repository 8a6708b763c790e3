#include "rdinv/experiment.hpp"

#include <json.hpp>

#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <limits>
#include <ostream>
#include <set>
#include <sstream>

#include "rdinv/csv.hpp"
#include "rdinv/forward_solver.hpp"
#include "rdinv/parallel.hpp"

namespace rdinv {

namespace fs = std::filesystem;
using json = nlohmann::json;

Command parse_command(const std::string& name) {
    if (name == "forward") return Command::Forward;
    if (name == "synth") return Command::Synth;
    if (name == "invert") return Command::Invert;
    if (name == "svd") return Command::Svd;
    if (name == "sweep") return Command::Sweep;
    throw ConfigError("unknown command '" + name + "'");
}

const char* to_string(Command c) noexcept {
    switch (c) {
    case Command::Forward: return "forward";
    case Command::Synth: return "synth";
    case Command::Invert: return "invert";
    case Command::Svd: return "svd";
    case Command::Sweep: return "sweep";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// Config parsing

namespace {

constexpr unsigned kX = 1u, kU = 2u, kT = 4u;

/// Parses an expression and rejects variables outside `allowed`.
Expression checked_expression(const std::string& text, unsigned allowed, const std::string& where) {
    Expression e = [&] {
        try {
            return Expression::parse(text);
        } catch (const ExpressionError& ex) {
            throw ExpressionError(where + ": " + ex.what(), ex.position());
        }
    }();
    const auto reject = [&](bool used, unsigned bit, const char* name) {
        if (used && !(allowed & bit)) {
            throw ConfigError(where + ": variable '" + name + "' is not allowed here");
        }
    };
    reject(e.uses_x(), kX, "x");
    reject(e.uses_u(), kU, "u");
    reject(e.uses_t(), kT, "t");
    return e;
}

/// Object reader that rejects keys it was not asked about.
class Obj {
public:
    Obj(const json& j, std::string path) : j_(j), path_(std::move(path)) {
        if (!j_.is_object()) {
            throw ConfigError(path_ + " must be an object");
        }
    }
    ~Obj() = default;

    bool has(const char* key) {
        seen_.insert(key);
        return j_.contains(key) && !j_.at(key).is_null();
    }

    template <class T>
    T get(const char* key, T fallback) {
        if (!has(key)) {
            return fallback;
        }
        return as<T>(j_.at(key), path_ + "." + key);
    }

    template <class T>
    std::optional<T> opt(const char* key) {
        if (!has(key)) {
            return std::nullopt;
        }
        return as<T>(j_.at(key), path_ + "." + key);
    }

    const json& at(const char* key) {
        seen_.insert(key);
        return j_.at(key);
    }
    std::string sub(const char* key) const { return path_ + "." + key; }

    void finish(std::initializer_list<const char*> ignored = {}) const {
        for (auto it = j_.begin(); it != j_.end(); ++it) {
            bool known = seen_.count(it.key()) > 0;
            for (const char* k : ignored) {
                known = known || it.key() == k;
            }
            if (!known) {
                throw ConfigError(path_ + ": unknown key '" + it.key() + "'");
            }
        }
    }

    template <class T>
    static T as(const json& v, const std::string& where) {
        try {
            if constexpr (std::is_same_v<T, double>) {
                if (!v.is_number()) throw ConfigError(where + " must be a number");
                return v.get<double>();
            } else if constexpr (std::is_same_v<T, int>) {
                if (!v.is_number_integer()) throw ConfigError(where + " must be an integer");
                return v.get<int>();
            } else if constexpr (std::is_same_v<T, std::uint64_t>) {
                if (!v.is_number_unsigned()) throw ConfigError(where + " must be a nonnegative integer");
                return v.get<std::uint64_t>();
            } else if constexpr (std::is_same_v<T, bool>) {
                if (!v.is_boolean()) throw ConfigError(where + " must be true or false");
                return v.get<bool>();
            } else {
                if (!v.is_string()) throw ConfigError(where + " must be a string");
                return v.get<std::string>();
            }
        } catch (const json::exception& e) {
            throw ConfigError(where + ": " + e.what());
        }
    }

private:
    const json& j_;
    std::string path_;
    std::set<std::string> seen_;
};

BoundaryEnd parse_end(const std::string& s, const std::string& where) {
    if (s == "left") return BoundaryEnd::Left;
    if (s == "right") return BoundaryEnd::Right;
    throw ConfigError(where + " must be 'left' or 'right'");
}

const char* end_name(BoundaryEnd e) { return e == BoundaryEnd::Left ? "left" : "right"; }

SmoothingOrder parse_order(const std::string& s, const std::string& where) {
    if (s == "H1") return SmoothingOrder::H1;
    if (s == "H2") return SmoothingOrder::H2;
    throw ConfigError(where + " must be 'H1' or 'H2'");
}

const char* order_name(SmoothingOrder o) { return o == SmoothingOrder::H1 ? "H1" : "H2"; }

Scheme parse_scheme(const std::string& s, const std::string& where) {
    if (s == "two_final_sequential") return Scheme::TwoFinalSequential;
    if (s == "two_final_wronskian") return Scheme::TwoFinalWronskian;
    if (s == "final_plus_trace") return Scheme::FinalPlusTrace;
    throw ConfigError(where +
                      " must be two_final_sequential, two_final_wronskian or final_plus_trace");
}

const char* scheme_name(Scheme s) {
    switch (s) {
    case Scheme::TwoFinalSequential: return "two_final_sequential";
    case Scheme::TwoFinalWronskian: return "two_final_wronskian";
    case Scheme::FinalPlusTrace: return "final_plus_trace";
    }
    return "?";
}

BoundarySpec parse_boundary(const json& j, const std::string& where) {
    Obj o(j, where);
    BoundarySpec b;
    const std::string kind = o.get<std::string>("kind", "neumann");
    if (kind == "neumann") {
        b.kind = BoundaryKind::Impedance;
    } else if (kind == "impedance") {
        b.kind = BoundaryKind::Impedance;
        b.gamma = o.get<double>("gamma", 0.0);
        b.b = o.get<std::string>("b", "0");
    } else if (kind == "dirichlet") {
        b.kind = BoundaryKind::Dirichlet;
        b.b = o.get<std::string>("b", "0");
    } else {
        throw ConfigError(where + ".kind must be neumann, impedance or dirichlet");
    }
    o.finish();
    if (!(b.gamma >= 0.0) || !std::isfinite(b.gamma)) {
        throw ConfigError(where + ".gamma must be nonnegative");
    }
    checked_expression(b.b, kT, where + ".b");
    return b;
}

json dump_boundary(const BoundarySpec& b) {
    if (b.kind == BoundaryKind::Dirichlet) {
        return {{"kind", "dirichlet"}, {"b", b.b}};
    }
    if (b.gamma == 0.0 && b.b == "0") {
        return {{"kind", "neumann"}};
    }
    return {{"kind", "impedance"}, {"gamma", b.gamma}, {"b", b.b}};
}

RunSpec parse_run(const json& j, const std::string& where) {
    Obj o(j, where);
    RunSpec r;
    r.forcing = o.get<std::string>("forcing", "0");
    r.u0 = o.get<std::string>("u0", "0");
    checked_expression(r.forcing, kX | kT, where + ".forcing");
    checked_expression(r.u0, kX, where + ".u0");
    if (o.has("left")) {
        r.left = parse_boundary(o.at("left"), o.sub("left"));
    }
    if (o.has("right")) {
        r.right = parse_boundary(o.at("right"), o.sub("right"));
    }
    o.finish();
    return r;
}

json dump_run(const RunSpec& r) {
    return {{"forcing", r.forcing},
            {"u0", r.u0},
            {"left", dump_boundary(r.left)},
            {"right", dump_boundary(r.right)}};
}

void parse_scheme_block(const json& j, SchemeConfig& s) {
    Obj o(j, "scheme");
    s.scheme = parse_scheme(o.get<std::string>("name", "final_plus_trace"), "scheme.name");
    s.max_outer = o.get("max_outer", s.max_outer);
    s.max_f_inner = o.get("max_f_inner", s.max_f_inner);
    s.tol_outer = o.get("tol_outer", s.tol_outer);
    s.tol_inner = o.get("tol_inner", s.tol_inner);
    s.mu_floor = o.get("mu_floor", s.mu_floor);
    s.delta_floor = o.get("delta_floor", s.delta_floor);
    s.kappa_warn = o.get("kappa_warn", s.kappa_warn);
    s.a_floor = o.get("a_floor", s.a_floor);
    s.w_floor = o.get("w_floor", s.w_floor);
    s.end_layer_fraction = o.get("end_layer_fraction", s.end_layer_fraction);
    s.n_knots = o.get("n_knots", s.n_knots);
    s.a_anchor = o.opt<double>("a_anchor");
    s.anchor_end = parse_end(o.get<std::string>("anchor_end", "right"), "scheme.anchor_end");
    s.flux_left_u = o.opt<double>("flux_left_u");
    s.flux_right_u = o.opt<double>("flux_right_u");
    s.flux_left_v = o.opt<double>("flux_left_v");
    s.flux_right_v = o.opt<double>("flux_right_v");
    o.finish();
    s.validate();
}

json dump_scheme(const SchemeConfig& s) {
    json j = {{"name", scheme_name(s.scheme)},
              {"max_outer", s.max_outer},
              {"max_f_inner", s.max_f_inner},
              {"tol_outer", s.tol_outer},
              {"tol_inner", s.tol_inner},
              {"mu_floor", s.mu_floor},
              {"delta_floor", s.delta_floor},
              {"kappa_warn", s.kappa_warn},
              {"a_floor", s.a_floor},
              {"w_floor", s.w_floor},
              {"end_layer_fraction", s.end_layer_fraction},
              {"n_knots", s.n_knots},
              {"anchor_end", end_name(s.anchor_end)}};
    const auto put = [&j](const char* k, const std::optional<double>& v) {
        if (v) j[k] = *v;
    };
    put("a_anchor", s.a_anchor);
    put("flux_left_u", s.flux_left_u);
    put("flux_right_u", s.flux_right_u);
    put("flux_left_v", s.flux_left_v);
    put("flux_right_v", s.flux_right_v);
    return j;
}

void parse_observations(const json& j, ObservationSpec& ob) {
    Obj o(j, "observations");
    ob.n_x = o.get("n_x", ob.n_x);
    ob.n_t = o.get("n_t", ob.n_t);
    ob.noise = o.get("noise", ob.noise);
    const std::string dist = o.get<std::string>("distribution", "uniform");
    if (dist == "uniform") {
        ob.distribution = NoiseDistribution::Uniform;
    } else if (dist == "gaussian") {
        ob.distribution = NoiseDistribution::Gaussian;
    } else {
        throw ConfigError("observations.distribution must be 'uniform' or 'gaussian'");
    }
    ob.trace_end = parse_end(o.get<std::string>("trace_end", "right"), "observations.trace_end");
    ob.order_g = parse_order(o.get<std::string>("smoothing_g", "H2"), "observations.smoothing_g");
    ob.order_h = parse_order(o.get<std::string>("smoothing_h", "H2"), "observations.smoothing_h");
    ob.lambda = o.get("lambda", ob.lambda);
    if (auto rule = o.opt<std::string>("lambda_rule")) {
        if (*rule == "fixed") {
            ob.rule = LambdaRule::Fixed;
        } else if (*rule == "discrepancy") {
            ob.rule = LambdaRule::Discrepancy;
        } else if (*rule != "auto") {
            throw ConfigError("observations.lambda_rule must be auto, fixed or discrepancy");
        }
    }
    o.finish();
    if (ob.n_x < 4 || ob.n_t < 4) {
        throw ConfigError("observations need at least 4 samples in space and time");
    }
    if (!(ob.noise >= 0.0) || !(ob.noise < 1.0)) {
        throw ConfigError("observations.noise must lie in [0, 1)");
    }
    if (!(ob.lambda > 0.0) || !std::isfinite(ob.lambda)) {
        throw ConfigError("observations.lambda must be positive");
    }
}

json dump_observations(const ObservationSpec& ob) {
    const char* rule = !ob.rule ? "auto" : *ob.rule == LambdaRule::Fixed ? "fixed" : "discrepancy";
    return {{"n_x", ob.n_x},
            {"n_t", ob.n_t},
            {"noise", ob.noise},
            {"distribution", ob.distribution == NoiseDistribution::Uniform ? "uniform" : "gaussian"},
            {"trace_end", end_name(ob.trace_end)},
            {"smoothing_g", order_name(ob.order_g)},
            {"smoothing_h", order_name(ob.order_h)},
            {"lambda", ob.lambda},
            {"lambda_rule", rule}};
}

void parse_sensitivity(const json& j, SensitivitySetup& s) {
    Obj o(j, "sensitivity");
    s.horizon = o.get("horizon", s.horizon);
    s.n_cells = o.get("n_cells", s.n_cells);
    if (o.has("n_steps")) {
        const json& v = o.at("n_steps");
        if (!v.is_array()) {
            throw ConfigError("sensitivity.n_steps must be an array of integers");
        }
        s.n_steps.clear();
        for (const auto& e : v) {
            s.n_steps.push_back(Obj::as<int>(e, "sensitivity.n_steps[]"));
        }
    }
    s.n_modes = o.get("n_modes", s.n_modes);
    const std::string layout = o.get<std::string>("layout", "neumann_left");
    if (layout == "neumann_left") {
        s.layout = SensitivityLayout::NeumannLeft;
    } else if (layout == "neumann_right") {
        s.layout = SensitivityLayout::NeumannRight;
    } else {
        throw ConfigError("sensitivity.layout must be 'neumann_left' or 'neumann_right'");
    }
    s.raw = o.get("raw", s.raw);
    o.finish();
    s.validate();
}

}  // namespace

ExperimentConfig parse_config(const std::string& json_text, const fs::path& base_dir) {
    json j;
    try {
        j = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("malformed JSON: ") + e.what());
    }
    ExperimentConfig c;
    c.base_dir = base_dir;
    Obj o(j, "config");
    c.seed = o.get<std::uint64_t>("seed", c.seed);
    c.output_dir = o.get<std::string>("output_dir", c.output_dir);
    if (o.has("grid")) {
        Obj g(o.at("grid"), "grid");
        c.length = g.get("length", c.length);
        c.n_cells = g.get("n_cells", c.n_cells);
        c.horizon = g.get("horizon", c.horizon);
        c.n_steps = g.get("n_steps", c.n_steps);
        g.finish();
        // Grid constructors carry the range checks.
        (void)SpatialGrid(c.length, c.n_cells);
        (void)TimeGrid(c.horizon, c.n_steps);
    }
    if (o.has("truth")) {
        Obj t(o.at("truth"), "truth");
        TruthSpec ts;
        ts.a = t.get<std::string>("a", "");
        ts.f = t.get<std::string>("f", "");
        if (ts.a.empty() || ts.f.empty()) {
            throw ConfigError("truth needs both 'a' and 'f'");
        }
        checked_expression(ts.a, kX, "truth.a");
        checked_expression(ts.f, kU, "truth.f");
        if (t.has("f_domain")) {
            const json& d = t.at("f_domain");
            if (!d.is_array() || d.size() != 2) {
                throw ConfigError("truth.f_domain must be [lo, hi]");
            }
            ts.f_lo = Obj::as<double>(d[0], "truth.f_domain[0]");
            ts.f_hi = Obj::as<double>(d[1], "truth.f_domain[1]");
        }
        ts.f_knots = t.get("f_knots", ts.f_knots);
        t.finish();
        if (!(ts.f_lo < ts.f_hi) || ts.f_knots < 2) {
            throw ConfigError("truth.f_domain must be increasing and f_knots at least 2");
        }
        c.truth = ts;
    }
    if (o.has("run_u")) {
        c.run_u = parse_run(o.at("run_u"), "run_u");
    }
    if (o.has("run_v")) {
        c.run_v = parse_run(o.at("run_v"), "run_v");
    }
    if (o.has("observations")) {
        parse_observations(o.at("observations"), c.observations);
    }
    if (o.has("scheme")) {
        parse_scheme_block(o.at("scheme"), c.scheme);
    }
    if (o.has("initial")) {
        Obj i(o.at("initial"), "initial");
        c.a0 = i.get<std::string>("a", c.a0);
        c.f0 = i.get<std::string>("f", c.f0);
        i.finish();
    }
    checked_expression(c.a0, kX, "initial.a");
    checked_expression(c.f0, kU, "initial.f");
    if (o.has("data")) {
        Obj d(o.at("data"), "data");
        DataFiles df;
        df.g_u = d.get<std::string>("g_u", "");
        df.g_v = d.get<std::string>("g_v", "");
        df.h = d.get<std::string>("h", "");
        d.finish();
        c.data = df;
    }
    if (o.has("sweep")) {
        Obj s(o.at("sweep"), "sweep");
        SweepSpec sw;
        sw.parameter = s.get<std::string>("parameter", "");
        if (sw.parameter != "beta" && sw.parameter != "noise" && sw.parameter != "n_x" &&
            sw.parameter != "n_t") {
            throw ConfigError("sweep.parameter must be beta, noise, n_x or n_t");
        }
        if (!s.has("values") || !s.at("values").is_array() || s.at("values").empty()) {
            throw ConfigError("sweep.values must be a nonempty array");
        }
        for (const auto& v : s.at("values")) {
            sw.values.push_back(Obj::as<double>(v, "sweep.values[]"));
        }
        sw.shape = s.get<std::string>("shape", sw.shape);
        checked_expression(sw.shape, kX, "sweep.shape");
        s.finish();
        c.sweep = sw;
    }
    if (o.has("sensitivity")) {
        parse_sensitivity(o.at("sensitivity"), c.sensitivity);
    }
    o.finish({"conditions", "comment"});
    if (c.two_final() && !c.run_v && (c.truth || c.data)) {
        throw ConfigError("two-final schemes need a run_v block");
    }
    return c;
}

ExperimentConfig load_config(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ConfigError("cannot read config " + path.string());
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_config(ss.str(), path.parent_path());
}

std::string dump_config(const ExperimentConfig& c, bool include_truth) {
    json j;
    j["seed"] = c.seed;
    j["output_dir"] = c.output_dir;
    j["grid"] = {{"length", c.length}, {"n_cells", c.n_cells}, {"horizon", c.horizon},
                 {"n_steps", c.n_steps}};
    if (include_truth && c.truth) {
        j["truth"] = {{"a", c.truth->a},
                      {"f", c.truth->f},
                      {"f_domain", {c.truth->f_lo, c.truth->f_hi}},
                      {"f_knots", c.truth->f_knots}};
    }
    j["run_u"] = dump_run(c.run_u);
    if (c.run_v) {
        j["run_v"] = dump_run(*c.run_v);
    }
    j["observations"] = dump_observations(c.observations);
    j["scheme"] = dump_scheme(c.scheme);
    j["initial"] = {{"a", c.a0}, {"f", c.f0}};
    if (c.data) {
        json d = json::object();
        if (!c.data->g_u.empty()) d["g_u"] = c.data->g_u;
        if (!c.data->g_v.empty()) d["g_v"] = c.data->g_v;
        if (!c.data->h.empty()) d["h"] = c.data->h;
        j["data"] = d;
    }
    if (c.sweep) {
        j["sweep"] = {{"parameter", c.sweep->parameter}, {"values", c.sweep->values},
                      {"shape", c.sweep->shape}};
    }
    const auto& s = c.sensitivity;
    j["sensitivity"] = {{"horizon", s.horizon},
                        {"n_cells", s.n_cells},
                        {"n_steps", s.n_steps},
                        {"n_modes", s.n_modes},
                        {"layout", to_string(s.layout)},
                        {"raw", s.raw}};
    return j.dump(2) + "\n";
}

std::optional<std::uint64_t> seed_from_environment() {
    const char* v = std::getenv("RD_INVERT_SEED");
    if (!v || !*v) {
        return std::nullopt;
    }
    const std::string s(v);
    std::uint64_t out = 0;
    const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
    if (ec != std::errc() || end != s.data() + s.size()) {
        throw ConfigError("RD_INVERT_SEED must be an unsigned integer, got '" + s + "'");
    }
    return out;
}

// ---------------------------------------------------------------------------
// Problem assembly

namespace {

BoundaryCondition make_bc(const BoundarySpec& b) {
    const Expression e = Expression::parse(b.b);
    if (!e.uses_t()) {
        const double v = e.eval_xt(0.0, 0.0);
        return b.kind == BoundaryKind::Dirichlet ? BoundaryCondition::dirichlet(v)
                                                 : BoundaryCondition::impedance(b.gamma, v);
    }
    auto fn = [e](double t) { return e.eval_xt(0.0, t); };
    return b.kind == BoundaryKind::Dirichlet ? BoundaryCondition::dirichlet(fn)
                                             : BoundaryCondition::impedance(b.gamma, fn);
}

ScalarField field_of(const SpatialGrid& g, const std::string& text, const std::string& where) {
    const Expression e = Expression::parse(text);
    ScalarField f = ScalarField::from_function(g, [&e](double x) { return e.eval_x(x); });
    for (double v : f.values()) {
        if (!std::isfinite(v)) {
            throw ConfigError(where + " is not finite on the grid");
        }
    }
    return f;
}

SpatialGrid grid_of(const ExperimentConfig& c) { return SpatialGrid(c.length, c.n_cells); }
TimeGrid timegrid_of(const ExperimentConfig& c) { return TimeGrid(c.horizon, c.n_steps); }

std::function<double(double)> fn_x(const std::string& text) {
    const Expression e = Expression::parse(text);
    return [e](double x) { return e.eval_x(x); };
}

std::function<double(double)> fn_u(const std::string& text) {
    const Expression e = Expression::parse(text);
    return [e](double u) { return e.eval_u(u); };
}

}  // namespace

ProblemSpec build_problem(const ExperimentConfig& cfg, const RunSpec& run, const ScalarField& a,
                          const ReactionCurve& f) {
    const SpatialGrid g = grid_of(cfg);
    const Expression r = Expression::parse(run.forcing);
    Forcing forcing = [r](double x, double t) { return r.eval_xt(x, t); };
    return ProblemSpec(g, timegrid_of(cfg), a, f, std::move(forcing), field_of(g, run.u0, "u0"),
                       make_bc(run.left), make_bc(run.right));
}

ScalarField truth_a(const ExperimentConfig& cfg) {
    if (!cfg.truth) {
        throw ConfigError("this command needs a 'truth' block");
    }
    return field_of(grid_of(cfg), cfg.truth->a, "truth.a");
}

ReactionCurve truth_f(const ExperimentConfig& cfg) {
    if (!cfg.truth) {
        throw ConfigError("this command needs a 'truth' block");
    }
    const auto f = fn_u(cfg.truth->f);
    ReactionCurve c = ReactionCurve::sampled(cfg.truth->f_lo, cfg.truth->f_hi, cfg.truth->f_knots, f);
    for (double v : c.nodal_values()) {
        if (!std::isfinite(v)) {
            throw ConfigError("truth.f is not finite on f_domain");
        }
    }
    return c;
}

// ---------------------------------------------------------------------------
// Synthesis and inversion

SynthResult smooth_samples(const ExperimentConfig& cfg, std::optional<Samples> g_u,
                           std::optional<Samples> g_v, std::optional<Samples> h) {
    const auto& ob = cfg.observations;
    const auto spec = [&ob](SmoothingOrder order, const NoiseSpec& noise) {
        SmoothingSpec s = SmoothingSpec::default_for(order, noise);
        if (ob.rule) {
            s.rule = *ob.rule;
        }
        s.lambda = ob.lambda;
        return s;
    };
    SynthResult out;
    const SpatialGrid g = grid_of(cfg);
    if (!g_u) {
        throw ConfigError("final-time data g_u are required");
    }
    out.g_u_smooth = smooth_to_grid(*g_u, g, spec(ob.order_g, g_u->noise));
    if (g_v) {
        out.g_v_smooth = smooth_to_grid(*g_v, g, spec(ob.order_g, g_v->noise));
    }
    if (h) {
        out.h_smooth = smooth_to_grid(*h, timegrid_of(cfg), spec(ob.order_h, h->noise));
    }
    if (cfg.two_final() && !out.g_v_smooth) {
        throw ConfigError("two-final schemes need g_v data");
    }
    if (!cfg.two_final() && !out.h_smooth) {
        throw ConfigError("final_plus_trace needs trace data h");
    }
    out.g_u = std::move(g_u);
    out.g_v = std::move(g_v);
    out.h = std::move(h);
    out.conditions = check_conditions(out.g_u_smooth->field,
                                      out.g_v_smooth ? &out.g_v_smooth->field : nullptr,
                                      out.h_smooth ? &out.h_smooth->series : nullptr, cfg.scheme);
    return out;
}

SynthResult synthesize(const ExperimentConfig& cfg) {
    const ScalarField a = truth_a(cfg);
    const ReactionCurve f = truth_f(cfg);
    const auto& ob = cfg.observations;
    const NoiseSpec noise_g{ob.noise, ob.distribution, cfg.seed};
    const NoiseSpec noise_second{ob.noise, ob.distribution, cfg.seed + 1};

    const StateHistory su = solve_forward(build_problem(cfg, cfg.run_u, a, f));
    std::optional<Samples> g_u = sample_and_perturb(final_profile(su), ob.n_x, noise_g);
    std::optional<Samples> g_v, h;
    if (cfg.two_final()) {
        if (!cfg.run_v) {
            throw ConfigError("two-final schemes need a run_v block");
        }
        const StateHistory sv = solve_forward(build_problem(cfg, *cfg.run_v, a, f));
        g_v = sample_and_perturb(final_profile(sv), ob.n_x, noise_second);
    } else {
        h = sample_and_perturb(trace_at(su, ob.trace_end), ob.n_t, noise_second);
    }
    return smooth_samples(cfg, std::move(g_u), std::move(g_v), std::move(h));
}

InversionOutcome invert(const ExperimentConfig& cfg, const SynthResult& data) {
    const SpatialGrid g = grid_of(cfg);
    const ScalarField unit = ScalarField::constant(g, 1.0);
    const ReactionCurve zero = ReactionCurve::constant(0.0, 1.0, 2, 0.0);
    const ProblemSpec skel_u = build_problem(cfg, cfg.run_u, unit, zero);
    std::optional<ProblemSpec> skel_v;
    if (cfg.two_final()) {
        skel_v = build_problem(cfg, *cfg.run_v, unit, zero);
    }

    ReconstructionData rd{data.g_u_smooth->field, std::nullopt, std::nullopt,
                          cfg.observations.trace_end};
    if (data.g_v_smooth) {
        rd.g_v = data.g_v_smooth->field;
    }
    if (data.h_smooth) {
        rd.h = data.h_smooth->series;
    }
    const ValueRange j = cfg.two_final() ? data.conditions.range_u : *data.conditions.range_h;
    const ScalarField a0 = field_of(g, cfg.a0, "initial.a");
    const ReactionCurve f0 = ReactionCurve::sampled(j.lo, j.hi, cfg.scheme.n_knots, fn_u(cfg.f0));

    InversionOutcome out{run_reconstruction(rd, skel_u, skel_v ? &*skel_v : nullptr, cfg.scheme, a0,
                                            f0),
                         std::nullopt, std::nullopt, {}, {}};
    if (cfg.truth) {
        const auto a_ex = fn_x(cfg.truth->a);
        const auto f_ex = fn_u(cfg.truth->f);
        // Two-final schemes only see f on range(g_v); the rest of J keeps f0.
        const ValueRange seen = cfg.two_final() ? *data.conditions.range_v : j;
        for (std::size_t k = 0; k < out.result.a_iterates.size(); ++k) {
            out.a_errors.push_back(relative_l2_error(out.result.a_iterates[k], a_ex));
            out.f_errors.push_back(
                relative_l2_error(out.result.f_iterates[k], f_ex, seen.lo, seen.hi, 0.8));
        }
        out.a_error = out.a_errors.back();
        out.f_error = out.f_errors.back();
    }
    return out;
}

// ---------------------------------------------------------------------------
// Commands

namespace {

struct Failure {
    int code;
    std::string message;
};

/// Exit code for an exception escaping a command in the given phase.
Failure classify(std::exception_ptr ep, Command phase) {
    try {
        std::rethrow_exception(ep);
    } catch (const ReconstructionError& e) {
        return {e.data_condition() ? kExitDataCondition : kExitInversion, e.what()};
    } catch (const ConditionViolation& e) {
        return {kExitDataCondition, e.what()};
    } catch (const DegenerateDataError& e) {
        return {kExitDataCondition, e.what()};
    } catch (const SmoothingError& e) {
        return {kExitDataCondition, e.what()};
    } catch (const BlowUpError& e) {
        return {phase == Command::Invert ? kExitInversion : kExitForward, e.what()};
    } catch (const StiffnessError& e) {
        return {phase == Command::Invert ? kExitInversion : kExitForward, e.what()};
    } catch (const ContractionFailure& e) {
        return {kExitInversion, e.what()};
    } catch (const ConfigError& e) {
        return {kExitConfig, e.what()};
    } catch (const UnsupportedConfiguration& e) {
        return {kExitConfig, e.what()};
    } catch (const UsageError& e) {
        return {kExitConfig, e.what()};
    } catch (const RangeViolation& e) {
        return {phase == Command::Invert ? kExitInversion : kExitForward, e.what()};
    } catch (const fs::filesystem_error& e) {
        return {kExitConfig, e.what()};
    } catch (const std::exception& e) {
        return {phase == Command::Invert || phase == Command::Sweep ? kExitInversion
                                                                    : kExitForward,
                e.what()};
    }
}

std::string path_str(const fs::path& p) { return p.string(); }

fs::path output_dir(const ExperimentConfig& cfg, const RunOptions& opts) {
    fs::path dir = opts.out_dir ? *opts.out_dir : fs::path(cfg.output_dir);
    if (dir.is_relative() && !opts.out_dir) {
        dir = cfg.base_dir / dir;
    }
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) {
        throw ConfigError("cannot create output directory " + dir.string() + ": " + ec.message());
    }
    return dir;
}

void write_text(const fs::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::binary);
    if (!out) {
        throw ConfigError("cannot open " + p.string() + " for writing");
    }
    out << text;
}

CsvTable field_table(const ScalarField& f, const char* name) {
    CsvTable t;
    t.columns = {"x", name};
    for (std::size_t i = 0; i < f.size(); ++i) {
        t.rows.push_back({f.grid().node(i), f[i]});
    }
    return t;
}

CsvTable series_table(const TimeSeries& s, const char* name) {
    CsvTable t;
    t.columns = {"t", name};
    for (std::size_t k = 0; k < s.size(); ++k) {
        t.rows.push_back({s.timegrid().time(static_cast<int>(k)), s[k]});
    }
    return t;
}

int cmd_forward(const ExperimentConfig& cfg, const RunOptions& opts, std::ostream& log) {
    const auto start = std::chrono::steady_clock::now();
    const ProblemSpec p = build_problem(cfg, cfg.run_u, truth_a(cfg), truth_f(cfg));
    const StateHistory s = solve_forward(p);
    const fs::path dir = output_dir(cfg, opts);

    write_history_csv(s, path_str(dir / "history.csv"));
    const ScalarField fin = final_profile(s);
    field_table(fin, "u").write(path_str(dir / "final.csv"));
    CsvTable tr;
    tr.columns = {"t", "u_left", "u_right"};
    for (std::size_t k = 0; k < s.n_rows(); ++k) {
        tr.rows.push_back({s.timegrid().time(static_cast<int>(k)), s(k, 0), s(k, s.n_cols() - 1)});
    }
    tr.write(path_str(dir / "trace.csv"));

    const double dx = s.grid().dx();
    const auto mass = [&](std::size_t k) {
        const auto row = s.row(k);
        double m = 0.0;
        for (std::size_t i = 0; i + 1 < row.size(); ++i) {
            m += 0.5 * dx * (row[i] + row[i + 1]);
        }
        return m;
    };
    const double m0 = mass(0);
    double drift = 0.0;
    for (std::size_t k = 1; k < s.n_rows(); ++k) {
        drift = std::max(drift, std::abs(mass(k) - m0));
    }
    if (m0 != 0.0) {
        drift /= std::abs(m0);
    }
    double sup = 0.0;
    for (double v : fin.values()) {
        sup = std::max(sup, std::abs(v));
    }
    CsvTable summary;
    summary.columns = {"sup_norm", "mass", "mass_drift", "clamp_events"};
    summary.rows.push_back({sup, mass(s.n_rows() - 1), drift,
                            static_cast<double>(p.f().clamp_count())});
    summary.write(path_str(dir / "summary.csv"));

    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    log << "sup_norm=" << format_number(sup) << " mass=" << format_number(mass(s.n_rows() - 1))
        << " mass_drift=" << format_number(drift) << '\n';
    // Wall time differs between runs, so it stays out of the default output.
    if (opts.verbose) {
        log << "runtime_s=" << format_number(secs) << '\n';
    }
    if (p.f().clamp_count() > 0) {
        log << "warning: " << p.f().clamp_count()
            << " reaction evaluations fell outside truth.f_domain and were clamped\n";
    }
    return kExitOk;
}

json conditions_json(const ConditionReport& r) {
    json j = {{"min_gu_slope", r.min_gu_slope},
              {"raw_min_gu_slope", r.raw_min_gu_slope},
              {"range_u", {r.range_u.lo, r.range_u.hi}},
              {"range_contained", r.range_contained},
              {"warnings", r.warnings}};
    if (r.min_gv_slope) j["min_gv_slope"] = *r.min_gv_slope;
    if (r.min_abs_h_slope) j["min_abs_h_slope"] = *r.min_abs_h_slope;
    if (r.kappa) j["kappa"] = *r.kappa;
    if (r.range_v) j["range_v"] = {r.range_v->lo, r.range_v->hi};
    if (r.range_h) j["range_h"] = {r.range_h->lo, r.range_h->hi};
    return j;
}

int cmd_synth(const ExperimentConfig& cfg, const RunOptions& opts, std::ostream& log) {
    const SynthResult d = synthesize(cfg);
    const fs::path dir = output_dir(cfg, opts);

    ExperimentConfig manifest = cfg;
    manifest.data = DataFiles{};
    write_samples_csv(*d.g_u, "g", path_str(dir / "samples_g_u.csv"));
    field_table(d.g_u_smooth->field, "g_u").write(path_str(dir / "smoothed_g_u.csv"));
    manifest.data->g_u = "samples_g_u.csv";
    if (d.g_v) {
        write_samples_csv(*d.g_v, "g", path_str(dir / "samples_g_v.csv"));
        field_table(d.g_v_smooth->field, "g_v").write(path_str(dir / "smoothed_g_v.csv"));
        manifest.data->g_v = "samples_g_v.csv";
    }
    if (d.h) {
        write_samples_csv(*d.h, "h", path_str(dir / "samples_h.csv"));
        series_table(d.h_smooth->series, "h").write(path_str(dir / "smoothed_h.csv"));
        manifest.data->h = "samples_h.csv";
    }
    manifest.output_dir = "invert";
    json m = json::parse(dump_config(manifest, false));
    m["conditions"] = conditions_json(d.conditions);
    write_text(dir / "manifest.json", m.dump(2) + "\n");

    const auto& c = d.conditions;
    log << "samples: g " << d.g_u->values.size();
    if (d.g_v) log << ", g_v " << d.g_v->values.size();
    if (d.h) log << ", h " << d.h->values.size();
    log << "\nmin g_u'=" << format_number(c.min_gu_slope);
    if (c.min_gv_slope) log << " min g_v'=" << format_number(*c.min_gv_slope);
    if (c.min_abs_h_slope) log << " min |h'|=" << format_number(*c.min_abs_h_slope);
    if (c.kappa) log << " kappa=" << format_number(*c.kappa);
    log << '\n';
    for (const auto& w : c.warnings) {
        log << "warning: " << w << '\n';
    }
    return kExitOk;
}

SynthResult load_data(const ExperimentConfig& cfg) {
    if (!cfg.data) {
        if (cfg.truth) {
            return synthesize(cfg);
        }
        throw ConfigError("invert needs a 'data' or 'truth' block; run synth and pass its manifest.json");
    }
    const auto load = [&](const std::string& name) -> std::optional<Samples> {
        if (name.empty()) {
            return std::nullopt;
        }
        Samples s = read_samples_csv(path_str(cfg.base_dir / name));
        s.noise.distribution = cfg.observations.distribution;
        return s;
    };
    return smooth_samples(cfg, load(cfg.data->g_u), load(cfg.data->g_v), load(cfg.data->h));
}

void write_inversion(const ExperimentConfig& cfg, const InversionOutcome& out, const fs::path& dir) {
    const auto& r = out.result;
    {
        std::ofstream h(dir / "history.csv", std::ios::binary);
        write_history_csv(r, h);
    }
    {
        std::ofstream a(dir / "a.csv", std::ios::binary);
        write_a_csv(r.a(), a, cfg.truth ? fn_x(cfg.truth->a) : std::function<double(double)>{});
    }
    {
        std::ofstream f(dir / "f.csv", std::ios::binary);
        write_f_csv(r.f(), f, cfg.truth ? fn_u(cfg.truth->f) : std::function<double(double)>{});
    }
    if (cfg.truth) {
        CsvTable e;
        e.columns = {"k", "a_error", "f_error"};
        for (std::size_t k = 0; k < out.a_errors.size(); ++k) {
            e.rows.push_back({static_cast<double>(k), out.a_errors[k], out.f_errors[k]});
        }
        e.write(path_str(dir / "errors.csv"));
    }
}

int cmd_invert(const ExperimentConfig& cfg, const RunOptions& opts, std::ostream& log) {
    const SynthResult d = load_data(cfg);
    const InversionOutcome out = invert(cfg, d);
    const fs::path dir = output_dir(cfg, opts);
    write_inversion(cfg, out, dir);
    const auto& r = out.result;
    if (opts.verbose) {
        for (std::size_t k = 0; k < r.history.size(); ++k) {
            log << "k=" << k << " misfit_g=" << format_number(r.history[k].misfit_g)
                << " misfit_h=" << format_number(r.history[k].misfit_h);
            if (cfg.truth) {
                log << " a_error=" << format_number(out.a_errors[k])
                    << " f_error=" << format_number(out.f_errors[k]);
            }
            log << '\n';
        }
    }
    log << "iterations=" << r.history.size() - 1 << " converged=" << (r.converged ? 1 : 0);
    if (out.a_error) {
        log << " a_error=" << format_number(*out.a_error)
            << " f_error=" << format_number(*out.f_error);
    }
    log << '\n';
    for (const auto& w : r.warnings) {
        log << "warning: " << w << '\n';
    }
    return kExitOk;
}

int cmd_svd(const ExperimentConfig& cfg, const RunOptions& opts, std::ostream& log) {
    const SensitivitySetup& s = cfg.sensitivity;
    s.validate();
    const fs::path dir = output_dir(cfg, opts);
    CsvTable combined;
    combined.columns = {"n"};
    combined.rows.assign(static_cast<std::size_t>(s.n_modes), {});
    for (int n = 0; n < s.n_modes; ++n) {
        combined.rows[static_cast<std::size_t>(n)].push_back(n + 1);
    }
    CsvTable summary;
    summary.columns = {"n_steps", "sigma1_a", "sigma1_q", "ratio", "slope_a", "slope_q"};
    for (int nt : s.n_steps) {
        SensitivityContext ctx(s, nt);
        ctx.prepare();
        std::vector<double> sig[2];
        for (int m = 0; m < 2; ++m) {
            const auto mode = m == 0 ? SensitivityMode::DiffusionA : SensitivityMode::PotentialQ;
            sig[m] = jacobian_singular_values(ctx, mode, opts.jobs);
            const std::string name = std::string("sv_") + to_string(mode) + "_nt" +
                                     std::to_string(nt) + ".csv";
            std::ofstream out(dir / name, std::ios::binary);
            write_singular_values_csv(sig[m], out);
            combined.columns.push_back(std::string("log10_") + to_string(mode) + "_nt" +
                                       std::to_string(nt));
            for (std::size_t n = 0; n < sig[m].size(); ++n) {
                combined.rows[n].push_back(std::log10(sig[m][n]));
            }
        }
        const double ratio = sig[0][0] / sig[1][0];
        const bool slopes = sig[0].size() >= 2;
        const double nan = std::numeric_limits<double>::quiet_NaN();
        const double sa = slopes ? log10_decay_slope(sig[0]) : nan;
        const double sq = slopes ? log10_decay_slope(sig[1]) : nan;
        summary.rows.push_back({static_cast<double>(nt), sig[0][0], sig[1][0], ratio, sa, sq});
        log << "n_steps=" << nt << " sigma1_a=" << format_number(sig[0][0])
            << " sigma1_q=" << format_number(sig[1][0]) << " ratio=" << format_number(ratio)
            << " slope_a=" << format_number(sa) << " slope_q=" << format_number(sq) << '\n';
    }
    combined.write(path_str(dir / "sv_combined.csv"));
    summary.write(path_str(dir / "svd_summary.csv"));
    return kExitOk;
}

ExperimentConfig sweep_point(const ExperimentConfig& cfg, double value) {
    ExperimentConfig c = cfg;
    const std::string& p = cfg.sweep->parameter;
    if (p == "beta") {
        std::ostringstream u0;
        u0 << format_number(value) << "*(" << cfg.sweep->shape << ")";
        c.run_u.u0 = u0.str();
        if (c.run_v) {
            c.run_v->u0 = u0.str();
        }
    } else if (p == "noise") {
        if (!(value >= 0.0) || !(value < 1.0)) {
            throw ConfigError("noise sweep values must lie in [0, 1)");
        }
        c.observations.noise = value;
    } else {
        const int n = static_cast<int>(value);
        if (n != value || n < 4) {
            throw ConfigError("sample-count sweep values must be integers >= 4");
        }
        (p == "n_x" ? c.observations.n_x : c.observations.n_t) = n;
    }
    return c;
}

int cmd_sweep(const ExperimentConfig& cfg, const RunOptions& opts, std::ostream& log,
              std::ostream& err) {
    if (!cfg.sweep) {
        throw ConfigError("sweep needs a 'sweep' block");
    }
    if (!cfg.truth) {
        throw ConfigError("sweep needs a 'truth' block");
    }
    struct Row {
        int status = 0;
        std::string message;
        std::size_t iterations = 0;
        double a_error = std::numeric_limits<double>::quiet_NaN();
        double f_error = std::numeric_limits<double>::quiet_NaN();
        double clamps = std::numeric_limits<double>::quiet_NaN();
    };
    // Validate every point before any work starts.
    std::vector<ExperimentConfig> points;
    for (double v : cfg.sweep->values) {
        points.push_back(sweep_point(cfg, v));
    }
    const std::vector<Row> rows = parallel_map(points.size(), opts.jobs, [&](std::size_t i) {
        Row row;
        try {
            const SynthResult d = synthesize(points[i]);
            const InversionOutcome out = invert(points[i], d);
            row.iterations = out.result.history.size() - 1;
            row.a_error = *out.a_error;
            row.f_error = *out.f_error;
            row.clamps = static_cast<double>(out.result.history.back().clamp_events);
        } catch (...) {
            const Failure f = classify(std::current_exception(), Command::Sweep);
            row.status = f.code;
            row.message = f.message;
        }
        return row;
    });

    const fs::path dir = output_dir(cfg, opts);
    CsvTable t;
    t.columns = {cfg.sweep->parameter, "status", "iterations", "a_error", "f_error", "clamp_events"};
    std::size_t ok = 0;
    int first_failure = 0;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const Row& r = rows[i];
        t.rows.push_back({cfg.sweep->values[i], static_cast<double>(r.status),
                          static_cast<double>(r.iterations), r.a_error, r.f_error, r.clamps});
        log << cfg.sweep->parameter << '=' << format_number(cfg.sweep->values[i]);
        if (r.status == 0) {
            ++ok;
            log << " a_error=" << format_number(r.a_error) << " f_error=" << format_number(r.f_error)
                << '\n';
        } else {
            first_failure = first_failure ? first_failure : r.status;
            log << " failed (exit " << r.status << ")\n";
            err << "run " << cfg.sweep->parameter << '=' << format_number(cfg.sweep->values[i])
                << ": " << r.message << '\n';
        }
    }
    t.write(path_str(dir / "sweep.csv"));
    return ok > 0 ? kExitOk : first_failure;
}

}  // namespace

int run_command(Command cmd, const ExperimentConfig& config, const RunOptions& opts,
                std::ostream& log, std::ostream& err) {
    try {
        ExperimentConfig cfg = config;
        if (opts.seed_override) {
            cfg.seed = *opts.seed_override;
        }
        if (opts.jobs < 1) {
            throw ConfigError("--jobs must be at least 1");
        }
        switch (cmd) {
        case Command::Forward: return cmd_forward(cfg, opts, log);
        case Command::Synth: return cmd_synth(cfg, opts, log);
        case Command::Invert: return cmd_invert(cfg, opts, log);
        case Command::Svd: return cmd_svd(cfg, opts, log);
        case Command::Sweep: return cmd_sweep(cfg, opts, log, err);
        }
        return kExitConfig;
    } catch (...) {
        const Failure f = classify(std::current_exception(), cmd);
        err << "error: " << f.message << '\n';
        return f.code;
    }
}

int run_command(Command cmd, const fs::path& config_path, const RunOptions& opts, std::ostream& log,
                std::ostream& err) {
    ExperimentConfig cfg;
    try {
        cfg = load_config(config_path);
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitConfig;
    }
    return run_command(cmd, cfg, opts, log, err);
}

}  // namespace rdinv
