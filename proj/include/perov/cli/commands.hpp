#pragma once

/// The four batch commands behind the command-line tool. Each one returns its exit
/// code and the JSON report; files go to the output directory when one is given.
///
/// Exit codes: 0 success, 2 config error, 3 spectral refusal, 4 non-convergence.

#include <chrono>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <optional>
#include <ostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "perov/cli/config.hpp"
#include "perov/mdp.hpp"
#include "perov/savings.hpp"
#include "perov/spectral.hpp"
#include "perov/vmetric.hpp"

namespace perov::cli {

inline constexpr int report_schema_version = 1;

namespace exit_code {
inline constexpr int ok = 0;
inline constexpr int config_error = 2;
inline constexpr int spectral_refusal = 3;
inline constexpr int not_converged = 4;
}  // namespace exit_code

struct RunSettings {
    std::filesystem::path out_dir;  // empty: no files written
    std::optional<std::uint64_t> seed;
    std::optional<double> tol;
    std::optional<std::size_t> max_iter;
    std::optional<unsigned> threads;
};

struct RunOutcome {
    int exit_code = exit_code::ok;
    json report;
};

/// 17 significant digits, enough to round-trip any double.
inline std::string fmt17(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

namespace detail {

inline json matrix_json(const Matrix& m) { return m.rows(); }

inline json certificate_json(const SpectralCertificate& c) {
    json trace = json::array();
    for (const auto& t : c.gelfand_trace) trace.push_back({{"k", t.k}, {"value", t.value}});
    return {{"radius", c.radius},
            {"lower_bound", c.lower_bound},
            {"upper_bound", c.upper_bound},
            {"certified", c.certified},
            {"tolerance", c.tolerance},
            {"row_sum_condition_holds", c.row_sum_condition_holds},
            {"gelfand_trace", trace}};
}

inline json uniform_json(const UniformCondition& u) {
    return {{"holds", u.holds}, {"row_sums", u.row_sums}, {"max_row_sum", u.max_row_sum}};
}

inline std::optional<double> crra_for_condition(const ModelConfig& cfg) {
    const auto& p = *cfg.savings;
    const auto g = savings::crra_gamma(p.utility);
    if (cfg.classify.condition == "general") return std::nullopt;
    if (cfg.classify.condition == "crra") {
        if (!g) throw ConfigError("config.classify.condition: \"crra\" requires CRRA utility");
        return g;
    }
    return g;
}

inline NonnegativeMatrix savings_condition_matrix(const ModelConfig& cfg, std::string& kind) {
    const auto g = crra_for_condition(cfg);
    kind = g ? "crra" : "general";
    return g ? savings::savings_B_crra(*cfg.savings, *g) : savings::savings_B_general(*cfg.savings);
}

struct ResolvedWeight {
    WeightFunction kappa;
    std::string kind;
    double offset = 0.0;
    double exponent = 1.0;
};

inline ResolvedWeight resolve_weight(const ModelConfig& cfg) {
    const auto& w = cfg.weight;
    if (cfg.kind != ModelKind::savings) {
        if (w.kind == "auto" || w.kind == "unit") return {WeightFunction::unit(), "unit"};
        if (w.kind == "affine") {
            const double b = w.offset.value_or(1.0);
            return {WeightFunction::affine(b), "affine", b};
        }
        if (w.kind == "power") {
            const double e = w.exponent.value_or(1.0);
            return {WeightFunction::power(e), "power", 0.0, e};
        }
        const double b = w.offset.value_or(1.0), e = w.exponent.value_or(1.0);
        return {WeightFunction::power_affine(b, e), "power-affine", b, e};
    }
    const auto& p = *cfg.savings;
    const auto gamma = savings::crra_gamma(p.utility);
    if (w.kind == "auto") {
        auto d = savings::default_weight(p, w.margin);
        return {d.kappa, d.kind, d.offset, d.exponent};
    }
    if (w.kind == "unit") return {WeightFunction::unit(), "unit"};
    if (w.kind == "power") {
        const double e = w.exponent ? *w.exponent : gamma ? 1.0 - *gamma : 1.0;
        return {WeightFunction::power(e), "power", 0.0, e};
    }
    const double e = w.kind == "affine" ? 1.0 : w.exponent ? *w.exponent : gamma ? 1.0 - *gamma : 1.0;
    double b = 0.0;
    if (w.offset) b = *w.offset;
    else b = savings::choose_weight_offset(p, w.margin, e).offset;
    if (w.kind == "affine") return {WeightFunction::affine(b), "affine", b, 1.0};
    return {WeightFunction::power_affine(b, e), "power-affine", b, e};
}

inline AdditiveMdp build_model(const ModelConfig& cfg) {
    if (cfg.kind == ModelKind::savings) return savings::build_savings_mdp(*cfg.savings);
    if (cfg.kind == ModelKind::abstract_mdp) return build_tabulated_mdp(*cfg.mdp);
    throw ConfigError("config.model: this command needs a \"savings\" or \"abstract-mdp\" model");
}

inline void write_report(const RunSettings& s, const json& report) {
    if (s.out_dir.empty()) return;
    std::filesystem::create_directories(s.out_dir);
    std::ofstream out(s.out_dir / "report.json");
    out << report.dump(2) << '\n';
}

inline json base_report(const char* command, const ModelConfig& cfg) {
    return {{"schema_version", report_schema_version}, {"command", command}, {"config", cfg.source}};
}

inline const char* pass_fail(bool b) { return b ? "pass" : "fail"; }

inline const char* spectral_label(RadiusVerdict v) {
    switch (v) {
        case RadiusVerdict::below_one: return "pass";
        case RadiusVerdict::above_one: return "fail";
        case RadiusVerdict::inconclusive: return "inconclusive";
    }
    return "inconclusive";
}

}  // namespace detail

/// Radius, bracket, Gelfand trace, row sums, and the (uniform, spectral) verdict pair.
inline RunOutcome cmd_spectral(const ModelConfig& cfg, const RunSettings& s, std::ostream& out) {
    RunOutcome res;
    res.report = detail::base_report("spectral", cfg);
    const double tol = s.tol.value_or(cfg.solver.spectral_tol);
    std::string matrix_kind;
    std::optional<NonnegativeMatrix> b;
    switch (cfg.kind) {
        case ModelKind::matrix:
            b.emplace(*cfg.matrix);
            matrix_kind = "given";
            break;
        case ModelKind::savings:
            b.emplace(detail::savings_condition_matrix(cfg, matrix_kind));
            break;
        case ModelKind::abstract_mdp: {
            const auto w = detail::resolve_weight(cfg);
            const auto mdp = detail::build_model(cfg);
            b.emplace(build_B(mdp.chain, compute_tilde_beta(mdp, w.kappa)));
            matrix_kind = "weighted(" + w.kappa.name() + ")";
            break;
        }
    }
    const auto cert = spectral_radius(*b, tol);
    const auto uniform = check_uniform_condition(*b);
    const auto verdict = classify_radius(cert, tol);

    res.report["spectral"] = {{"matrix_kind", matrix_kind},
                              {"B", detail::matrix_json(*b)},
                              {"certificate", detail::certificate_json(cert)},
                              {"uniform", detail::uniform_json(uniform)},
                              {"verdict", {{"uniform", detail::pass_fail(uniform.holds)},
                                           {"spectral", detail::spectral_label(verdict)}}}};

    out << "matrix: " << matrix_kind << " (" << b->dim() << "x" << b->dim() << ")\n";
    out << "spectral radius: " << fmt17(cert.radius) << "  bracket [" << fmt17(cert.lower_bound) << ", "
        << fmt17(cert.upper_bound) << "]" << (cert.certified ? "" : "  (not certified)") << "\n";
    out << "gelfand trace:";
    for (const auto& t : cert.gelfand_trace)
        if (t.k == 1 || t.k == 4 || t.k == 16 || t.k == 64 || t.k == 1024 || t.k == (1u << 20))
            out << "  k=" << t.k << ":" << fmt17(t.value);
    out << "\nrow sums:";
    for (double r : uniform.row_sums) out << " " << fmt17(r);
    out << "\nuniform condition: " << detail::pass_fail(uniform.holds)
        << "\nspectral condition: " << detail::spectral_label(verdict) << "\n";
    detail::write_report(s, res.report);
    return res;
}

/// Four-way comparison of the row-sum condition against the spectral condition.
inline RunOutcome cmd_compare_conditions(const ModelConfig& cfg, const RunSettings& s, std::ostream& out) {
    RunOutcome res;
    res.report = detail::base_report("compare-conditions", cfg);
    std::string matrix_kind = "given";
    std::optional<NonnegativeMatrix> b;
    if (cfg.kind == ModelKind::savings) b.emplace(detail::savings_condition_matrix(cfg, matrix_kind));
    else if (cfg.kind == ModelKind::matrix) b.emplace(*cfg.matrix);
    else throw ConfigError("config.model: compare-conditions needs a \"savings\" or \"matrix\" model");

    const double tol = s.tol.value_or(cfg.solver.spectral_tol);
    const auto cert = spectral_radius(*b, tol);
    const auto uniform = check_uniform_condition(*b);
    const auto verdict = classify_radius(cert, std::max(tol, cfg.classify.inconclusive_margin));
    std::string label;
    if (verdict == RadiusVerdict::inconclusive) label = "inconclusive";
    else if (verdict == RadiusVerdict::below_one) label = uniform.holds ? "both pass" : "only spectral passes";
    else label = uniform.holds ? "only uniform passes" : "both fail";  // first case cannot occur for B >= 0

    res.report["comparison"] = {{"matrix_kind", matrix_kind},
                                {"B", detail::matrix_json(*b)},
                                {"row_sums", uniform.row_sums},
                                {"max_row_sum", uniform.max_row_sum},
                                {"uniform", detail::pass_fail(uniform.holds)},
                                {"spectral", detail::spectral_label(verdict)},
                                {"radius", cert.radius},
                                {"certificate", detail::certificate_json(cert)},
                                {"classification", label}};

    out << std::left << std::setw(28) << "condition" << "result\n";
    for (std::size_t z = 0; z < uniform.row_sums.size(); ++z)
        out << std::setw(28) << ("row sum z=" + std::to_string(z)) << fmt17(uniform.row_sums[z]) << "\n";
    out << std::setw(28) << "max row sum" << fmt17(uniform.max_row_sum) << "\n";
    out << std::setw(28) << "spectral radius" << fmt17(cert.radius) << "\n";
    out << std::setw(28) << "uniform (row sums < 1)" << detail::pass_fail(uniform.holds) << "\n";
    out << std::setw(28) << "spectral (radius < 1)" << detail::spectral_label(verdict) << "\n";
    out << "classification: " << label << "\n";
    detail::write_report(s, res.report);
    return res;
}

/// Convergent / Divergent / Inconclusive verdict for a savings model.
inline RunOutcome cmd_classify(const ModelConfig& cfg, const RunSettings& s, std::ostream& out) {
    if (cfg.kind != ModelKind::savings) throw ConfigError("config.model: classify needs a \"savings\" model");
    RunOutcome res;
    res.report = detail::base_report("classify", cfg);
    savings::ClassifyOptions opt;
    opt.spectral_tol = s.tol.value_or(cfg.solver.spectral_tol);
    opt.inconclusive_margin = cfg.classify.inconclusive_margin;
    opt.horizon = cfg.classify.horizon;
    const auto c = savings::classify_problem(*cfg.savings, detail::crra_for_condition(cfg), opt);

    json block = {{"verdict", savings::to_string(c.verdict)},
                  {"reason", c.reason},
                  {"matrix_kind", c.matrix_kind},
                  {"B", detail::matrix_json(c.B)},
                  {"certificate", detail::certificate_json(c.certificate)},
                  {"uniform", detail::uniform_json(c.uniform)}};
    if (c.verdict == savings::ProblemClass::divergent) {
        const double rel = std::abs(c.growth_exponent - c.certificate.radius) / c.certificate.radius;
        block["growth"] = {{"horizon", c.horizon},
                           {"exponents", c.growth_exponents},
                           {"max_exponent", c.growth_exponent},
                           {"relative_gap_to_radius", rel},
                           {"within_5_percent", rel <= 0.05}};
    }
    res.report["classification"] = block;

    out << "verdict: " << savings::to_string(c.verdict) << "\n";
    out << "matrix: " << c.matrix_kind << ", spectral radius " << fmt17(c.certificate.radius) << " in ["
        << fmt17(c.certificate.lower_bound) << ", " << fmt17(c.certificate.upper_bound) << "]\n";
    out << "reason: " << c.reason << "\n";
    if (c.verdict == savings::ProblemClass::divergent)
        out << "growth exponent (v_T)^(1/T) at T=" << c.horizon << ": " << fmt17(c.growth_exponent) << "\n";
    detail::write_report(s, res.report);
    return res;
}

/// Perov iteration of the scaled Bellman operator; writes values.csv and trace.csv.
inline RunOutcome cmd_solve(const ModelConfig& cfg, const RunSettings& s, std::ostream& out) {
    RunOutcome res;
    res.report = detail::base_report("solve", cfg);
    const auto weight = detail::resolve_weight(cfg);
    const auto mdp = detail::build_model(cfg);
    auto tab = std::make_shared<const TabulatedMdp>(mdp);

    SolveOptions opt;
    opt.tol = s.tol.value_or(cfg.solver.tol);
    opt.max_iter = s.max_iter.value_or(cfg.solver.max_iter);
    opt.spectral_tol = cfg.solver.spectral_tol;
    opt.threads = s.threads.value_or(cfg.solver.threads);
    const std::uint64_t seed = s.seed.value_or(cfg.seed);

    ValueFunction v0 = ValueFunction::zeros(tab->grid(), tab->states());
    if (cfg.solver.init == "constant") v0 = ValueFunction::constant(tab->grid(), tab->states(), cfg.solver.init_value);
    else if (cfg.solver.init == "random") {
        std::mt19937_64 rng(seed);
        v0 = perov::detail::random_function(tab->grid(), tab->states(), rng, -cfg.solver.init_scale,
                                            cfg.solver.init_scale);
    }

    json weight_json = {{"kind", weight.kind},
                        {"name", weight.kappa.name()},
                        {"offset", weight.offset},
                        {"exponent", weight.exponent},
                        {"ratio_monotone", weight.kappa.ratio_monotone()}};

    std::optional<SolveResult> solved;
    try {
        solved = perov_solve(tab, weight.kappa, v0, opt);
    } catch (const SpectralRefusal& e) {
        res.exit_code = exit_code::spectral_refusal;
        res.report["solve"] = {{"refused", true},
                               {"message", e.what()},
                               {"weight", weight_json},
                               {"certificate", detail::certificate_json(e.certificate)}};
        out << "refused: " << e.what() << "\n";
        detail::write_report(s, res.report);
        return res;
    }
    const auto& r = solved->report;

    json trace = json::array();
    for (const auto& d : r.distance_trace) trace.push_back(d.vec());
    json block = {{"refused", false},
                  {"converged", r.converged},
                  {"iterations", r.iterations},
                  {"tol", r.tol},
                  {"weight", weight_json},
                  {"tilde_beta", detail::matrix_json(r.tilde_beta)},
                  {"B", detail::matrix_json(r.B)},
                  {"certificate", detail::certificate_json(r.certificate)},
                  {"uniform", detail::uniform_json(check_uniform_condition(r.B))},
                  {"aposteriori_bound", r.aposteriori_bound},
                  {"fitted_rate", r.fitted_rate ? json(*r.fitted_rate) : json(nullptr)},
                  {"log_radius", r.certificate.radius > 0.0 ? json(std::log(r.certificate.radius)) : json(nullptr)},
                  {"reward_bound", r.reward_bound},
                  {"distance_trace", trace}};
    res.report["counters"] = {{"clamp_high", r.clamp_high}, {"clamp_low", r.clamp_low}};
    res.report["timings"] = {{"solve_seconds", r.seconds}};

    if (!s.out_dir.empty()) {
        std::filesystem::create_directories(s.out_dir);
        std::ofstream tf(s.out_dir / "trace.csv");
        tf << "iteration";
        for (std::size_t z = 0; z < tab->states(); ++z) tf << ",d_" << z;
        tf << ",sup_collapse\n";
        for (std::size_t k = 0; k < r.distance_trace.size(); ++k) {
            tf << (k + 1);
            for (double x : r.distance_trace[k].components()) tf << "," << fmt17(x);
            tf << "," << fmt17(sup_collapse(r.distance_trace[k])) << "\n";
        }
    }

    out << "weight: " << weight.kappa.name() << "\n";
    out << "spectral radius of B: " << fmt17(r.certificate.radius) << "\n";
    out << "iterations: " << r.iterations << "  converged: " << (r.converged ? "yes" : "no") << "\n";
    if (r.clamp_high + r.clamp_low > 0)
        std::cerr << "warning: " << r.clamp_high << " transitions above and " << r.clamp_low
                  << " below the grid were clamped\n";

    if (!r.converged) {
        res.exit_code = exit_code::not_converged;
        res.report["solve"] = block;
        detail::write_report(s, res.report);
        return res;
    }

    const BellmanOperator op(tab, weight.kappa);
    const auto policy = extract_policy(op, *solved->scaled, ApplyOptions{opt.threads});
    const auto& vs = *solved->scaled;
    const auto& v = *solved->value;
    const std::size_t n = tab->points();
    if (!s.out_dir.empty()) {
        std::ofstream vf(s.out_dir / "values.csv");
        vf << "w,z,v,v_tilde,policy_share\n";
        for (std::size_t z = 0; z < tab->states(); ++z)
            for (std::size_t i = 0; i < n; ++i) {
                const std::size_t node = z * n + i;
                const double share = cfg.kind == ModelKind::savings ? cfg.savings->shares[policy.index[node]]
                                                                    : policy.actions[node];
                vf << fmt17((*tab->grid())[i]) << "," << z << "," << fmt17(v.at(i, z)) << "," << fmt17(vs.at(i, z))
                   << "," << fmt17(share) << "\n";
            }
    }
    block["residual"] = sup_collapse(vector_distance(vs, op.apply(vs, ApplyOptions{opt.threads})));
    if (cfg.kind == ModelKind::savings) {
        block["weighted_norm_w_plus_1"] = weighted_norm(v, WeightFunction::affine(1.0));
        block["utility_shift"] = savings::utility_shift(cfg.savings->utility);
    }

    if (cfg.solver.verify_samples > 0) {
        const auto bw = verify_blackwell(op, r.B, cfg.solver.verify_samples, seed);
        const auto pv = verify_perov_inequality(op, r.B, cfg.solver.verify_samples, seed + 1);
        block["verification"] = {{"samples", cfg.solver.verify_samples},
                                 {"monotonicity_violation", bw.monotonicity_violation},
                                 {"discounting_violation", bw.discounting_violation},
                                 {"perov_max_excess", pv.max_excess},
                                 {"perov_violations", pv.violations}};
    }

    if (cfg.oracle.enabled && cfg.kind == ModelKind::savings) {
        const auto& p = *cfg.savings;
        const auto gamma = savings::crra_gamma(p.utility);
        if (!gamma || !p.zero_income()) {
            block["oracle"] = {{"available", false}, {"reason", "needs CRRA utility with zero income"}};
        } else {
            const auto orc = savings::crra_zero_income_oracle(
                p, *gamma, cfg.oracle.tol,
                cfg.oracle.match_shares ? std::optional<std::vector<double>>(p.shares) : std::nullopt);
            const double pw = 1.0 - *gamma;
            double worst = 0.0;
            for (std::size_t z = 0; z < tab->states(); ++z)
                for (std::size_t i = 0; i < n; ++i) {
                    const double w = (*tab->grid())[i];
                    if (!(w > 0.0)) continue;
                    const double h_solved = v.at(i, z) * pw / std::pow(w, pw);
                    worst = std::max(worst, std::abs(h_solved - orc.h[z]) / orc.h[z]);
                }
            block["oracle"] = {{"available", true},
                               {"h", orc.h},
                               {"theta", orc.theta},
                               {"match_shares", cfg.oracle.match_shares},
                               {"max_relative_error", worst}};
            out << "oracle max relative error: " << fmt17(worst) << "\n";
        }
    }
    res.report["solve"] = block;
    out << "a-posteriori bound: " << fmt17(*std::max_element(r.aposteriori_bound.begin(), r.aposteriori_bound.end()))
        << "\n";
    detail::write_report(s, res.report);
    return res;
}

/// Dispatch by verb name; maps config problems to exit code 2.
inline RunOutcome run_command(const std::string& verb, const ModelConfig& cfg, const RunSettings& s,
                              std::ostream& out) {
    if (verb == "spectral") return cmd_spectral(cfg, s, out);
    if (verb == "solve") return cmd_solve(cfg, s, out);
    if (verb == "classify") return cmd_classify(cfg, s, out);
    if (verb == "compare-conditions") return cmd_compare_conditions(cfg, s, out);
    throw ConfigError("unknown command \"" + verb + "\"");
}

}  // namespace perov::cli
