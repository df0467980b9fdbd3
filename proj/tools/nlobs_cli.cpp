// nlobs command-line driver.
//
// Exit codes: 0 pass, 1 verdict failure, 2 usage error, 3 nonconvergence.

#include <CLI11.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "nlobs/nlobs.hpp"

namespace fs = std::filesystem;
using namespace nlobs;

namespace {

constexpr int kPass = 0;
constexpr int kVerdictFailure = 1;
constexpr int kUsage = 2;
constexpr int kNonConvergence = 3;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct Common {
    std::string op = "trace";
    std::string q;
    int dim = 3;
    double h = 0.25;
    double tol = 1e-10;
    int max_iter = 100;
    double ctol = 1e-3;
    double C = 0.1;
    std::uint64_t seed = 42;
    std::string out;
};

QuadraticPoly load_q(const std::string& spec) {
    if (spec.empty()) throw UsageError("--Q is required");
    const json j = !spec.empty() && spec.front() == '{' ? json::parse(spec) : read_json_file(spec);
    return poly_from_json(j);
}

json base_report(const std::string& command, const json& config) {
    return {{"command", command}, {"config", config}, {"config_hash", config_hash(config)}, {"version", NLOBS_VERSION}};
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

void emit(const json& report, const std::string& path = {}) {
    std::cout << report.dump(2) << '\n';
    if (!path.empty()) write_json_file(path, report);
}

bool certificates_pass(const GlobalSolution& gs) {
    for (const auto& r : gs.ladder) {
        const auto& c = r.certificates;
        if (c.trapping_lower < -gs.certificate_tol || c.trapping_upper < -gs.certificate_tol ||
            c.monotonicity < -gs.certificate_tol || c.contact_violations > 0)
            return false;
    }
    return true;
}

ConstructOptions construct_options(const Common& c, double R) {
    ConstructOptions o;
    o.h = c.h;
    o.continuation_tol = c.ctol;
    if (R > 0.0) o.R_final = R;
    o.certificate_C = c.C;
    o.strict = false;
    o.solver.residual_tol = c.tol;
    o.solver.max_iter = c.max_iter;
    return o;
}

json construct_config(const Common& c, const QuadraticPoly& Q, const EllipticOperator& f, double R) {
    return {{"operator", to_json(f)}, {"Q", to_json(Q)},  {"h", c.h},       {"R", R},
            {"ctol", c.ctol},         {"tol", c.tol},     {"max_iter", c.max_iter}, {"C", c.C}, {"seed", c.seed}};
}

int run_solve(const Common& c, double R) {
    const auto t0 = std::chrono::steady_clock::now();
    const QuadraticPoly Q = load_q(c.q);
    const EllipticOperator f = parse_operator(c.op, Q.dim());
    if (!(R > 0.0)) throw UsageError("--R must be positive");
    auto grid = build_grid(Q.dim(), R, c.h);
    SolverOptions so;
    so.residual_tol = c.tol;
    so.max_iter = c.max_iter;
    const SolveResult res = solve_obstacle({grid, f, sample_poly(grid, Q), std::nullopt}, so);
    const json config{{"operator", to_json(f)}, {"Q", to_json(Q)}, {"h", c.h}, {"R", R}, {"tol", c.tol},
                        {"max_iter", c.max_iter}};
    json rep = base_report("solve", config);
    rep["result"] = to_json(res);
    if (!c.out.empty()) {
        save_snapshot(c.out, res.solution, f, Q, res.contact_mask);
        rep["snapshot"] = c.out;
    }
    rep["seconds"] = seconds_since(t0);
    emit(rep);
    return kPass;
}

int run_construct(const Common& c, double R) {
    const auto t0 = std::chrono::steady_clock::now();
    const QuadraticPoly Q = load_q(c.q);
    const EllipticOperator f = parse_operator(c.op, Q.dim());
    const GlobalSolution gs = construct_global(Q, f, construct_options(c, R));
    json rep = base_report("construct", construct_config(c, Q, f, R));
    rep["certificates"] = certificates_json(gs);
    const bool pass = certificates_pass(gs);
    rep["certificates_pass"] = pass;
    if (!c.out.empty()) {
        fs::create_directories(c.out);
        for (std::size_t k = 0; k < gs.ladder.size(); ++k) {
            const auto& r = gs.ladder[k];
            save_snapshot(fs::path(c.out) / ("rung_" + std::to_string(k) + ".json"), r.result.solution, f, Q,
                          r.result.contact_mask, {{"R", r.R}});
        }
        save_snapshot(fs::path(c.out) / "final.json", gs.field, f, Q, gs.contact_mask);
        write_json_file(fs::path(c.out) / "certificates.json", rep["certificates"]);
    }
    rep["seconds"] = seconds_since(t0);
    emit(rep);
    return pass ? kPass : kVerdictFailure;
}

int run_extract(const Common& c, const std::string& in, const std::string& csv) {
    const auto t0 = std::chrono::steady_clock::now();
    const Snapshot snap = load_snapshot(in);
    std::optional<EllipticOperator> f = snap.op;
    if (!c.op.empty() && c.op != "auto") f = parse_operator(c.op, snap.field.grid->dim());
    FitOptions fo;
    fo.noise_floor = 10.0 * c.tol;
    const AsymptoticFit fit =
        extract_profile(snap.field, f, snap.contact_mask.empty() ? nullptr : &snap.contact_mask, fo);
    json config{{"in", in}, {"tol", c.tol}};
    if (f) config["operator"] = to_json(*f);
    json rep = base_report("extract", config);
    rep["fit"] = to_json(fit);
    if (!csv.empty()) {
        std::ofstream(csv) << residual_csv(fit.residual_profile);
        rep["csv"] = csv;
    }
    rep["seconds"] = seconds_since(t0);
    emit(rep, c.out);
    return fit.verdict.in_class ? kPass : kVerdictFailure;
}

int run_roundtrip(const Common& c, double R) {
    const auto t0 = std::chrono::steady_clock::now();
    const QuadraticPoly Q = load_q(c.q);
    const EllipticOperator f = parse_operator(c.op, Q.dim());
    GlobalSolution gs;
    try {
        gs = construct_global(Q, f, construct_options(c, R));
    } catch (const NonConvergenceError& e) {
        throw NonConvergenceError(std::string("construct stage: ") + e.what(), e.history());
    } catch (const Error& e) {
        throw std::runtime_error(std::string("construct stage: ") + e.what());
    }
    FitOptions fo;
    fo.noise_floor = 10.0 * c.tol;
    AsymptoticFit fit;
    try {
        fit = extract_profile(gs.field, f, &gs.contact_mask, fo);
    } catch (const NonConvergenceError& e) {
        throw NonConvergenceError(std::string("extract stage: ") + e.what(), e.history());
    } catch (const Error& e) {
        throw std::runtime_error(std::string("extract stage: ") + e.what());
    }
    json rep = base_report("roundtrip", construct_config(c, Q, f, R));
    rep["certificates"] = certificates_json(gs);
    rep["fit"] = to_json(fit);
    rep["errors"] = {{"A_max", (fit.Q_hat.hessian() - Q.hessian()).max_abs()},
                     {"center", (fit.Q_hat.center() - Q.center()).norm()},
                     {"constant", fit.Q_hat.constant() - Q.constant()},
                     {"F_of_A_hat_minus_1", op_eval(f, fit.Q_hat.hessian()) - 1.0}};
    if (fit.decay) rep["errors"]["slope_minus_target"] = fit.decay->slope - (2.0 - Q.dim());
    const bool pass = certificates_pass(gs) && fit.verdict.in_class;
    rep["pass"] = pass;
    rep["seconds"] = seconds_since(t0);
    if (!c.out.empty()) {
        fs::create_directories(c.out);
        save_snapshot(fs::path(c.out) / "final.json", gs.field, f, Q, gs.contact_mask);
        write_json_file(fs::path(c.out) / "report.json", rep);
    }
    emit(rep);
    return pass ? kPass : kVerdictFailure;
}

int run_verify(const Common& c, const std::string& suite, double R, int trials, int samples, double rbar,
               const std::string& in) {
    const auto t0 = std::chrono::steady_clock::now();
    json config{{"suite", suite}, {"operator", c.op}, {"dim", c.dim}, {"h", c.h}, {"R", R}, {"seed", c.seed}};
    json rep;
    bool pass = false;
    if (suite == "comparison") {
        const EllipticOperator f = parse_operator(c.op, c.dim);
        config["trials"] = trials;
        rep = base_report("verify", config);
        const auto r = comparison_fuzz(f, build_grid(c.dim, R, c.h), trials, c.seed);
        rep["report"] = {{"trials", r.trials},
                         {"skipped", r.skipped},
                         {"violations", r.violations},
                         {"worst_margin", r.worst_margin},
                         {"tolerance", r.tolerance}};
        pass = r.passed();
    } else if (suite == "barrier") {
        const QuadraticPoly Q = load_q(c.q);
        const EllipticOperator f = parse_operator(c.op, Q.dim());
        config["Q"] = to_json(Q);
        config["samples"] = samples;
        rep = base_report("verify", config);
        TailBarrier tb = tail_barrier(Q, f, c.seed);
        if (rbar > 0.0) tb.spec = BarrierSpec(rbar, Q.dim());
        const auto r = barrier_supersolution_check(tb.spec, tb.op.G, samples, c.seed, &tb.omega);
        rep["report"] = {{"r_bar", tb.spec.r_bar},
                         {"samples", r.samples},
                         {"violations", r.violations},
                         {"worst", r.worst},
                         {"tolerance", 1e-10},
                         {"condition_value", r.condition_value},
                         {"condition_holds", r.condition_holds}};
        pass = r.passed();
    } else if (suite == "tail") {
        config["in"] = in;
        config["C"] = c.C;
        rep = base_report("verify", config);
        const Snapshot snap = load_snapshot(in);
        if (!snap.Q || !snap.op) throw UsageError("tail suite needs a snapshot carrying Q and the operator");
        const TailBarrier tb = tail_barrier(*snap.Q, *snap.op, c.seed);
        const double h = snap.field.grid->h();
        const auto r = tail_bound_check(snap.field, *snap.Q, tb, 1e-8 + c.C * h * h);
        rep["report"] = {{"r_bar", r.r_bar},
                         {"nodes", r.nodes},
                         {"violations", r.violations},
                         {"worst_margin", r.worst_margin},
                         {"tolerance", r.tolerance}};
        pass = r.passed();
    } else if (suite == "oracle") {
        rep = base_report("verify", config);
        const RadialOracle o(c.dim, 1.0);
        double worst_ode = 0.0, worst_pde = 0.0;
        for (double r : {1.5, 2.0, 4.0, 8.0}) {
            const auto exact = o(r);
            const auto ode = integrate_radial_ode(c.dim, 1.0, r);
            worst_ode = std::max(worst_ode, std::abs(exact.u - ode.u) + std::abs(exact.du - ode.du));
            worst_pde = std::max(worst_pde, std::abs(exact.d2u + (c.dim - 1.0) / r * exact.du - 1.0));
        }
        const auto at_rho = o(1.0);
        rep["report"] = {{"c1", o.c1()},
                         {"c2", o.c2()},
                         {"ode_mismatch", worst_ode},
                         {"ode_tolerance", 1e-8},
                         {"pde_residual", worst_pde},
                         {"pde_tolerance", 1e-10},
                         {"u_at_rho", at_rho.u},
                         {"du_at_rho", at_rho.du}};
        pass = worst_ode <= 1e-8 && worst_pde <= 1e-10;
    } else {
        throw UsageError("unknown suite '" + suite + "'");
    }
    rep["pass"] = pass;
    rep["seconds"] = seconds_since(t0);
    emit(rep, c.out);
    return pass ? kPass : kVerdictFailure;
}

int run_oracle(int dim, double rho, double a, double R, const std::vector<double>& radii) {
    RadialOracle o;
    if (R > 0.0) o = RadialOracle::ball(dim, R, a);
    else if (rho > 0.0) o = RadialOracle(dim, rho);
    else o = RadialOracle::global(dim, a);
    json values = json::array();
    for (double r : radii) {
        const auto v = o(r);
        values.push_back({{"r", r}, {"u", v.u}, {"du", v.du}, {"d2u", v.d2u}});
    }
    emit({{"dim", dim}, {"rho", o.rho}, {"c1", o.c1()}, {"c2", o.c2()}, {"values", values}});
    return kPass;
}

int run_plot(const Common& c, const std::string& in, const std::string& kind, const std::string& fit_path) {
    const Snapshot snap = load_snapshot(in);
    const Grid& g = *snap.field.grid;
    std::ostream* out = &std::cout;
    std::ofstream file;
    if (!c.out.empty()) {
        file.open(c.out);
        if (!file) throw std::runtime_error("cannot write " + c.out);
        out = &file;
    }
    out->precision(17);
    if (kind == "radial_profile") {
        const auto shells = shell_stats(g, snap.field.values, Vec::Zero(g.dim()), g.h(), 0.0, g.radius());
        *out << "r,mean_u,max_u,Q,u_minus_Q\n";
        for (const auto& s : shells) {
            const double q = snap.Q ? (*snap.Q)(Vec(Vec::Unit(g.dim(), 0) * s.r_mean)) : std::nan("");
            *out << s.r_mean << ',' << s.mean << ',' << s.max << ',' << q << ',' << s.mean - q << '\n';
        }
    } else if (kind == "residual_decay") {
        AsymptoticFit fit;
        QuadraticPoly qhat;
        if (!fit_path.empty()) {
            const json j = read_json_file(fit_path);
            qhat = poly_from_json(j.contains("fit") ? j["fit"]["Q_hat"] : j.at("Q_hat"));
        } else {
            std::optional<EllipticOperator> f = snap.op;
            if (!c.op.empty() && c.op != "auto") f = parse_operator(c.op, g.dim());
            qhat = extract_profile(snap.field, f, snap.contact_mask.empty() ? nullptr : &snap.contact_mask).Q_hat;
        }
        const auto prof = residual_profile(snap.field, qhat, qhat.center(), g.h() / 2.0, g.h(), g.radius() / 2.0);
        *out << "log_r,log_max_residual\n";
        for (const auto& s : prof)
            if (s.max > 0.0) *out << std::log(s.r) << ',' << std::log(s.max) << '\n';
    } else if (kind == "contact_slice") {
        Vec center = snap.Q ? snap.Q->center() : Vec(Vec::Zero(g.dim()));
        *out << "x,y,contact\n";
        std::size_t count = 0;
        const auto mask = snap.contact_mask.empty()
                              ? detail::contact_from_values(snap.field, default_contact_tol(g.h()))
                              : snap.contact_mask;
        const int n = g.half_extent();
        MultiIndex fixed{};
        for (int i = 2; i < g.dim(); ++i)
            fixed[static_cast<std::size_t>(i)] = static_cast<int>(std::lround(center(i) / g.h()));
        for (int a = -n; a <= n; ++a)
            for (int b = -n; b <= n; ++b) {
                MultiIndex m = fixed;
                m[0] = a;
                m[1] = b;
                const std::size_t idx = g.index(m);
                if (!mask[idx]) continue;
                ++count;
                *out << a * g.h() << ',' << b * g.h() << ",1\n";
            }
        if (count == 0) {
            *out << "# warning: empty contact set in this slice\n";
            std::cerr << "warning: empty contact set in this slice\n";
        }
    } else {
        throw UsageError("unknown plot kind '" + kind + "'");
    }
    return kPass;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Global solutions of the fully nonlinear obstacle problem"};
    app.set_help_flag("--help", "print this help and exit");
    app.set_version_flag("--version", std::string(NLOBS_VERSION));
    app.require_subcommand(1);

    Common c;
    double R = 0.0;
    auto add_common = [&](CLI::App* sub, bool needs_q) {
        sub->set_help_flag("--help", "print this help and exit");
        sub->add_option("--operator", c.op, "trace | pucci:l,L | smoothpucci:l,L,s | maxlin:<file> | smoothmax:<file>:<s>");
        auto* q = sub->add_option("--Q", c.q, "profile polynomial: JSON file or inline JSON");
        if (needs_q) q->required();
        sub->add_option("--h", c.h, "grid spacing")->check(CLI::PositiveNumber);
        sub->add_option("--tol", c.tol, "solver residual tolerance")->check(CLI::PositiveNumber);
        sub->add_option("--max-iter", c.max_iter, "Newton iteration limit")->check(CLI::PositiveNumber);
        sub->add_option("--seed", c.seed, "random seed");
        sub->add_option("--out", c.out, "output path");
    };

    auto* solve = app.add_subcommand("solve", "solve the obstacle problem on one ball");
    add_common(solve, true);
    solve->add_option("--R", R, "ball radius")->required();

    auto* construct = app.add_subcommand("construct", "expanding-ball construction of the global solution");
    add_common(construct, true);
    construct->add_option("--ctol", c.ctol, "continuation tolerance")->check(CLI::PositiveNumber);
    construct->add_option("--R", R, "final radius (default: double until converged)");
    construct->add_option("--C", c.C, "certificate constant C in 1e-8 + C h^2");

    std::string in, csv, suite, kind, fit_path;
    auto* extract = app.add_subcommand("extract", "recover the asymptotic profile of a solution snapshot");
    add_common(extract, false);
    c.op = "trace";
    extract->add_option("--in", in, "snapshot header")->required();
    extract->add_option("--csv", csv, "residual profile CSV");

    auto* roundtrip = app.add_subcommand("roundtrip", "construct then extract, compare the profiles");
    add_common(roundtrip, true);
    roundtrip->add_option("--ctol", c.ctol, "continuation tolerance")->check(CLI::PositiveNumber);
    roundtrip->add_option("--R", R, "final radius");
    roundtrip->add_option("--C", c.C, "certificate constant");

    int trials = 100, samples = 10000;
    double rbar = 0.0;
    auto* verify = app.add_subcommand("verify", "property suites");
    add_common(verify, false);
    verify->add_option("--suite", suite, "comparison | barrier | tail | oracle")
        ->required()
        ->check(CLI::IsMember({"comparison", "barrier", "tail", "oracle"}));
    verify->add_option("--dim", c.dim, "dimension (3 or 4)")->check(CLI::Range(3, 4));
    verify->add_option("--R", R, "ball radius for the comparison suite");
    verify->add_option("--trials", trials, "comparison trials")->check(CLI::PositiveNumber);
    verify->add_option("--samples", samples, "barrier samples")->check(CLI::PositiveNumber);
    verify->add_option("--rbar", rbar, "barrier radius (default: chosen from the modulus)");
    verify->add_option("--in", in, "snapshot for the tail suite");
    verify->add_option("--C", c.C, "certificate constant");

    int odim = 3;
    double rho = 0.0, oa = -0.5, oR = 0.0;
    std::vector<double> radii;
    auto* oracle = app.add_subcommand("oracle", "exact radial solution of the Laplacian obstacle problem");
    oracle->add_option("--d", odim, "dimension")->check(CLI::Range(3, 4));
    oracle->add_option("--rho", rho, "contact radius (default: from --a)");
    oracle->add_option("--a", oa, "profile constant a < 0");
    oracle->add_option("--R", oR, "finite ball radius (ball oracle)");
    oracle->add_option("--r", radii, "radii to evaluate")->required();

    auto* plot = app.add_subcommand("plot", "CSV plot data from a snapshot");
    plot->add_option("--in", in, "snapshot header")->required();
    plot->add_option("--kind", kind, "radial_profile | residual_decay | contact_slice")->required();
    plot->add_option("--fit", fit_path, "fit JSON for residual_decay");
    plot->add_option("--operator", c.op, "operator for refitting");
    plot->add_option("--out", c.out, "CSV path (default stdout)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? kPass : kUsage;
    }
    if (verify->parsed() && R <= 0.0) R = 2.0;

    try {
        if (solve->parsed()) return run_solve(c, R);
        if (construct->parsed()) return run_construct(c, R);
        if (extract->parsed()) return run_extract(c, in, csv);
        if (roundtrip->parsed()) return run_roundtrip(c, R);
        if (verify->parsed()) return run_verify(c, suite, R, trials, samples, rbar, in);
        if (oracle->parsed()) return run_oracle(odim, rho, oa, oR, radii);
        if (plot->parsed()) return run_plot(c, in, kind, fit_path);
    } catch (const NonConvergenceError& e) {
        std::cerr << "nonconvergence: " << e.what() << '\n';
        return kNonConvergence;
    } catch (const UsageError& e) {
        std::cerr << "usage: " << e.what() << '\n';
        return kUsage;
    } catch (const std::invalid_argument& e) {
        std::cerr << "invalid input: " << e.what() << '\n';
        return kUsage;
    } catch (const CertificateError& e) {
        std::cerr << "certificate failure: " << e.what() << '\n';
        return kVerdictFailure;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kVerdictFailure;
    }
    return kUsage;
}
