#pragma once

/// Run configuration: a JSON document (comments allowed) describing one model and the
/// solver settings. Every field error names the offending path, e.g.
/// `savings.R[1][0]: expected a number >= 0`.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"
#include "perov/mdp.hpp"
#include "perov/savings.hpp"

namespace perov::cli {

using json = nlohmann::json;

inline constexpr int config_schema_version = 1;

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class ModelKind { matrix, savings, abstract_mdp };

struct WeightSpec {
    std::string kind = "auto";  // auto | unit | affine | power | power-affine
    std::optional<double> offset;
    std::optional<double> exponent;
    double margin = 1e-3;
};

struct SolverSpec {
    double tol = 1e-8;
    std::size_t max_iter = 100000;
    double spectral_tol = 1e-8;
    unsigned threads = 1;
    std::string init = "zero";  // zero | constant | random
    double init_value = 0.0;
    double init_scale = 10.0;
    std::size_t verify_samples = 0;
};

struct ClassifySpec {
    std::size_t horizon = 200;
    double inconclusive_margin = 1e-6;
    std::string condition = "auto";  // auto | general | crra
};

struct OracleSpec {
    bool enabled = false;
    double tol = 1e-12;
    bool match_shares = true;
};

/// Tabulated abstract MDP: per state z, per grid point i, a list of actions with the
/// reward and the successor x' for every z'.
struct TabulatedAction {
    double a = 0.0;
    double reward = 0.0;
    std::vector<double> next;
};

struct AbstractMdpSpec {
    std::vector<double> x_grid;
    Matrix P;
    Matrix beta;
    std::vector<std::vector<std::vector<TabulatedAction>>> actions;  // [z][i][k]
};

struct ModelConfig {
    ModelKind kind = ModelKind::savings;
    std::optional<Matrix> matrix;
    std::optional<savings::SavingsParams> savings;
    std::optional<AbstractMdpSpec> mdp;
    WeightSpec weight;
    SolverSpec solver;
    ClassifySpec classify;
    OracleSpec oracle;
    std::uint64_t seed = 0;
    json source;  // the document as read, echoed into reports
};

namespace detail {

class Field {
public:
    Field(const json& j, std::string path) : j_(j), path_(std::move(path)) {}

    const json& raw() const noexcept { return j_; }
    const std::string& path() const noexcept { return path_; }

    [[noreturn]] void fail(const std::string& msg) const { throw ConfigError(path_ + ": " + msg); }

    bool has(const char* key) const { return j_.is_object() && j_.contains(key); }

    Field operator[](const char* key) const {
        if (!j_.is_object()) fail("expected an object");
        if (!j_.contains(key)) throw ConfigError(path_ + "." + key + ": missing required field");
        return {j_.at(key), path_ + "." + key};
    }
    Field operator[](std::size_t i) const { return {j_.at(i), path_ + "[" + std::to_string(i) + "]"}; }

    std::size_t size() const {
        if (!j_.is_array()) fail("expected an array");
        return j_.size();
    }
    bool is_array() const noexcept { return j_.is_array(); }
    bool is_number() const noexcept { return j_.is_number(); }
    bool is_string() const noexcept { return j_.is_string(); }

    double number() const {
        if (!j_.is_number()) fail("expected a number");
        const double v = j_.get<double>();
        if (!std::isfinite(v)) fail("expected a finite number");
        return v;
    }
    double nonnegative() const {
        const double v = number();
        if (v < 0.0) fail("expected a number >= 0");
        return v;
    }
    double positive() const {
        const double v = number();
        if (!(v > 0.0)) fail("expected a number > 0");
        return v;
    }
    std::uint64_t unsigned_integer() const {
        if (!j_.is_number_integer() || (j_.is_number_integer() && !j_.is_number_unsigned() && j_.get<long long>() < 0))
            fail("expected a nonnegative integer");
        return j_.get<std::uint64_t>();
    }
    bool boolean() const {
        if (!j_.is_boolean()) fail("expected true or false");
        return j_.get<bool>();
    }
    std::string string() const {
        if (!j_.is_string()) fail("expected a string");
        return j_.get<std::string>();
    }
    std::vector<double> numbers() const {
        std::vector<double> out(size());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = (*this)[i].number();
        return out;
    }
    Matrix square(std::size_t n) const {
        if (size() != n) fail("expected " + std::to_string(n) + " rows, got " + std::to_string(size()));
        Matrix m(n);
        for (std::size_t i = 0; i < n; ++i) {
            const Field row = (*this)[i];
            if (row.size() != n) row.fail("expected " + std::to_string(n) + " entries, got " + std::to_string(row.size()));
            for (std::size_t j = 0; j < n; ++j) m(i, j) = row[j].number();
        }
        return m;
    }
    Matrix square() const {
        const std::size_t n = size();
        if (n == 0) fail("expected a nonempty square matrix");
        return square(n);
    }
    /// Scalar (every entry), vector indexed by z' (every row), or full square matrix.
    Matrix broadcast(std::size_t n) const {
        Matrix m(n);
        if (is_number()) {
            const double v = number();
            for (double& x : m.data()) x = v;
            return m;
        }
        if (size() == n && n > 0 && (*this)[std::size_t{0}].is_number()) {
            const auto v = numbers();
            for (std::size_t i = 0; i < n; ++i)
                for (std::size_t j = 0; j < n; ++j) m(i, j) = v[j];
            return m;
        }
        return square(n);
    }

    template <class T, class F>
    T optional(const char* key, T fallback, F&& get) const {
        if (!has(key)) return fallback;
        return get((*this)[key]);
    }

private:
    const json& j_;
    std::string path_;
};

template <class F>
auto guarded(const Field& f, F&& fn) {
    try {
        return fn();
    } catch (const InvalidInput& e) {
        throw ConfigError(f.path() + ": " + e.what());
    }
}

inline savings::SavingsParams parse_savings(const Field& s) {
    const Matrix p = s["P"].square();
    const std::size_t zs = p.dim();
    const MarkovChain chain = guarded(s["P"], [&] { return MarkovChain(p); });
    Matrix r = s["R"].broadcast(zs);
    Matrix beta = s["beta"].broadcast(zs);
    std::vector<double> y(zs, 0.0);
    if (s.has("y")) {
        const Field fy = s["y"];
        if (fy.is_number()) y.assign(zs, fy.nonnegative());
        else {
            if (fy.size() != zs) fy.fail("expected " + std::to_string(zs) + " entries");
            for (std::size_t z = 0; z < zs; ++z) y[z] = fy[z].nonnegative();
        }
    }

    savings::Utility utility;
    {
        const Field u = s["utility"];
        const std::string kind = u["kind"].string();
        if (kind == "crra") {
            const double g = u["gamma"].number();
            if (!(g > 0.0 && g < 1.0)) u["gamma"].fail("expected a number in (0, 1)");
            utility = savings::CrraUtility{g};
        } else if (kind == "tabulated") {
            utility = savings::TabulatedUtility{u["c"].numbers(), u["u"].numbers()};
        } else {
            u["kind"].fail("expected \"crra\" or \"tabulated\", got \"" + kind + "\"");
        }
    }

    std::vector<double> w_grid = savings::default_wealth_grid();
    if (s.has("wealth_grid")) {
        const Field g = s["wealth_grid"];
        if (g.is_array()) {
            w_grid = g.numbers();
        } else {
            const std::string kind = g.optional("kind", std::string("geometric"), [](const Field& f) { return f.string(); });
            const double lo = g.optional("min", 1e-3, [](const Field& f) { return f.number(); });
            const double hi = g.optional("max", 1e3, [](const Field& f) { return f.number(); });
            const auto n = static_cast<std::size_t>(
                g.optional("points", std::uint64_t{300}, [](const Field& f) { return f.unsigned_integer(); }));
            if (kind == "geometric") w_grid = guarded(g, [&] { return geometric_grid(lo, hi, n); });
            else if (kind == "uniform") w_grid = guarded(g, [&] { return uniform_grid(lo, hi, n); });
            else g["kind"].fail("expected \"geometric\" or \"uniform\"");
        }
    }

    std::vector<double> shares = savings::default_shares();
    if (s.has("shares")) {
        const Field f = s["shares"];
        if (f.is_array()) shares = f.numbers();
        else {
            const auto n = static_cast<std::size_t>(f["count"].unsigned_integer());
            shares = guarded(f["count"], [&] { return savings::default_shares(n); });
        }
    }

    savings::SavingsParams params{chain, std::move(r), std::move(y), std::move(beta), std::move(utility),
                                  std::move(w_grid), std::move(shares)};
    guarded(s, [&] {
        savings::validate(params);
        return 0;
    });
    return params;
}

inline AbstractMdpSpec parse_mdp(const Field& m) {
    AbstractMdpSpec spec;
    spec.x_grid = m["x_grid"].numbers();
    guarded(m["x_grid"], [&] { return make_grid(spec.x_grid); });
    spec.P = m["P"].square();
    const std::size_t zs = spec.P.dim();
    guarded(m["P"], [&] { return MarkovChain(spec.P); });
    spec.beta = m["beta"].broadcast(zs);
    guarded(m["beta"], [&] { return NonnegativeMatrix(spec.beta); });
    const Field acts = m["actions"];
    if (acts.size() != zs) acts.fail("expected one entry per exogenous state (" + std::to_string(zs) + ")");
    spec.actions.resize(zs);
    for (std::size_t z = 0; z < zs; ++z) {
        const Field per_z = acts[z];
        if (per_z.size() != spec.x_grid.size())
            per_z.fail("expected one action list per grid point (" + std::to_string(spec.x_grid.size()) + ")");
        spec.actions[z].resize(spec.x_grid.size());
        for (std::size_t i = 0; i < spec.x_grid.size(); ++i) {
            const Field list = per_z[i];
            if (list.size() == 0) list.fail("empty action set");
            for (std::size_t k = 0; k < list.size(); ++k) {
                const Field a = list[k];
                TabulatedAction t{a["a"].number(), a["reward"].number(), a["next"].numbers()};
                if (t.next.size() != zs) a["next"].fail("expected " + std::to_string(zs) + " successor states");
                for (const auto& prev : spec.actions[z][i])
                    if (prev.a == t.a) a["a"].fail("duplicate action value at this grid point");
                spec.actions[z][i].push_back(std::move(t));
            }
        }
    }
    return spec;
}

}  // namespace detail

inline ModelConfig parse_config(const json& doc) {
    ModelConfig cfg;
    cfg.source = doc;
    const detail::Field root(doc, "config");
    if (!doc.is_object()) root.fail("expected a JSON object at top level");
    if (root.has("schema_version")) {
        const auto v = root["schema_version"].unsigned_integer();
        if (v != config_schema_version)
            root["schema_version"].fail("unsupported schema version " + std::to_string(v));
    }
    const std::string model = root["model"].string();
    if (model == "matrix") {
        cfg.kind = ModelKind::matrix;
        const detail::Field b = root["matrix"]["B"];
        Matrix m = b.square();
        detail::guarded(b, [&] { return NonnegativeMatrix(m); });
        cfg.matrix = std::move(m);
    } else if (model == "savings") {
        cfg.kind = ModelKind::savings;
        cfg.savings = detail::parse_savings(root["savings"]);
    } else if (model == "abstract-mdp") {
        cfg.kind = ModelKind::abstract_mdp;
        cfg.mdp = detail::parse_mdp(root["mdp"]);
    } else {
        root["model"].fail("expected \"matrix\", \"savings\" or \"abstract-mdp\", got \"" + model + "\"");
    }

    if (root.has("weight")) {
        const detail::Field w = root["weight"];
        cfg.weight.kind = w.optional("kind", cfg.weight.kind, [](const auto& f) { return f.string(); });
        static const std::vector<std::string> kinds{"auto", "unit", "affine", "power", "power-affine"};
        if (std::find(kinds.begin(), kinds.end(), cfg.weight.kind) == kinds.end())
            w["kind"].fail("unknown weight kind \"" + cfg.weight.kind + "\"");
        if (w.has("offset")) cfg.weight.offset = w["offset"].positive();
        if (w.has("exponent")) cfg.weight.exponent = w["exponent"].positive();
        cfg.weight.margin = w.optional("margin", cfg.weight.margin, [](const auto& f) { return f.positive(); });
    }
    if (root.has("solver")) {
        const detail::Field s = root["solver"];
        auto& o = cfg.solver;
        o.tol = s.optional("tol", o.tol, [](const auto& f) { return f.positive(); });
        o.max_iter = s.optional("max_iter", o.max_iter,
                                [](const auto& f) { return static_cast<std::size_t>(f.unsigned_integer()); });
        o.spectral_tol = s.optional("spectral_tol", o.spectral_tol, [](const auto& f) { return f.positive(); });
        o.threads = s.optional("threads", o.threads,
                               [](const auto& f) { return static_cast<unsigned>(f.unsigned_integer()); });
        o.init = s.optional("init", o.init, [](const auto& f) { return f.string(); });
        if (o.init != "zero" && o.init != "constant" && o.init != "random")
            s["init"].fail("expected \"zero\", \"constant\" or \"random\"");
        o.init_value = s.optional("init_value", o.init_value, [](const auto& f) { return f.number(); });
        o.init_scale = s.optional("init_scale", o.init_scale, [](const auto& f) { return f.nonnegative(); });
        o.verify_samples = s.optional("verify_samples", o.verify_samples,
                                      [](const auto& f) { return static_cast<std::size_t>(f.unsigned_integer()); });
    }
    if (root.has("classify")) {
        const detail::Field c = root["classify"];
        auto& o = cfg.classify;
        o.horizon = c.optional("horizon", o.horizon,
                               [](const auto& f) { return static_cast<std::size_t>(f.unsigned_integer()); });
        o.inconclusive_margin =
            c.optional("inconclusive_margin", o.inconclusive_margin, [](const auto& f) { return f.nonnegative(); });
        o.condition = c.optional("condition", o.condition, [](const auto& f) { return f.string(); });
        if (o.condition != "auto" && o.condition != "general" && o.condition != "crra")
            c["condition"].fail("expected \"auto\", \"general\" or \"crra\"");
    }
    if (root.has("oracle")) {
        const detail::Field c = root["oracle"];
        auto& o = cfg.oracle;
        o.enabled = c.optional("enabled", o.enabled, [](const auto& f) { return f.boolean(); });
        o.tol = c.optional("tol", o.tol, [](const auto& f) { return f.positive(); });
        o.match_shares = c.optional("match_shares", o.match_shares, [](const auto& f) { return f.boolean(); });
    }
    if (root.has("seed")) cfg.seed = root["seed"].unsigned_integer();
    return cfg;
}

inline ModelConfig parse_config_text(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text, nullptr, true, /*ignore_comments=*/true);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    return parse_config(doc);
}

inline ModelConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(path.string() + ": cannot open config file");
    std::ostringstream ss;
    ss << in.rdbuf();
    try {
        return parse_config_text(ss.str());
    } catch (const ConfigError& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

/// AdditiveMdp whose functions look up the tabulated entries by exact grid point and action.
inline AdditiveMdp build_tabulated_mdp(const AbstractMdpSpec& spec) {
    auto shared = std::make_shared<const AbstractMdpSpec>(spec);
    auto index_of = [shared](double x) {
        const auto& g = shared->x_grid;
        const auto it = std::lower_bound(g.begin(), g.end(), x);
        if (it == g.end() || *it != x) throw ModelError("tabulated mdp: state is not a grid point");
        return static_cast<std::size_t>(it - g.begin());
    };
    auto find = [shared, index_of](double x, std::size_t z, double a) -> const TabulatedAction& {
        for (const auto& t : shared->actions[z][index_of(x)])
            if (t.a == a) return t;
        throw ModelError("tabulated mdp: action is not feasible");
    };
    return AdditiveMdp{
        .x_grid = spec.x_grid,
        .chain = MarkovChain(spec.P),
        .discount = spec.beta,
        .feasible =
            [shared, index_of](double x, std::size_t z) {
                std::vector<double> a;
                for (const auto& t : shared->actions[z][index_of(x)]) a.push_back(t.a);
                return a;
            },
        .reward = [find](double x, std::size_t z, double a) { return find(x, z, a).reward; },
        .transition = [find](double x, std::size_t z, std::size_t zn, double a) { return find(x, z, a).next[zn]; },
    };
}

}  // namespace perov::cli
