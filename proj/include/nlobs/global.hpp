#pragma once

#include <algorithm>
#include <cstdio>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "nlobs/membership.hpp"
#include "nlobs/solver.hpp"

namespace nlobs {

struct ConstructOptions {
    double h = 0.25;
    double continuation_tol = 1e-3;
    /// Fixed final radius. The ladder is then R_final / 2^k for every k with
    /// R_final / 2^k >= 2 * circumradius({Q <= 0}).
    std::optional<double> R_final;
    /// Without R_final, doubling stops (unconverged) once R would exceed this.
    double R_cap = 64.0;
    /// Certificate tolerance is 1e-8 + certificate_C * h^2.
    double certificate_C = 0.1;
    /// Throw CertificateError when a certificate fails.
    bool strict = true;
    bool validate_input = true;
    double membership_tol = kDefaultMembershipTol;
    SolverOptions solver;
};

struct RungCertificates {
    /// min over active nodes of u_R - Q
    double trapping_lower = 0.0;
    /// min over active nodes of 1/2 (x - c) . A (x - c) - u_R
    double trapping_upper = 0.0;
    /// min over shared nodes of u_R - u_{previous rung}; +inf on the first rung
    double monotonicity = std::numeric_limits<double>::infinity();
    /// contact nodes with Q(x) > contact_tol * |A|
    std::size_t contact_violations = 0;
    double worst_contact_q = -std::numeric_limits<double>::infinity();
    /// max over shells of (shell max of u) / (r^2 + 1)
    double growth = 0.0;
};

struct Rung {
    double R = 0.0;
    SolveResult result;
    /// sup over B_{R_prev/2} of |u_R - u_{R_prev}|; +inf on the first rung
    double continuation_diff = std::numeric_limits<double>::infinity();
    RungCertificates certificates;
};

struct GlobalSolution {
    QuadraticPoly Q;
    EllipticOperator op = EllipticOperator::trace(3);
    double h = 0.0;
    double continuation_tol = 0.0;
    double certificate_tol = 0.0;
    std::vector<Rung> ladder;
    /// Final field: the largest rung, or Q sampled when a = 0.
    ScalarField field;
    std::vector<std::uint8_t> contact_mask;
    double contact_tol = 0.0;
    bool converged = false;
    std::vector<std::string> warnings;

    double R() const { return field.grid->radius(); }
};

namespace detail {

inline RungCertificates rung_certificates(const QuadraticPoly& Q, const ScalarField& u,
                                          const std::vector<std::uint8_t>& contact_mask, double contact_tol) {
    const Grid& g = *u.grid;
    const QuadraticPoly top = Q.with_constant(0.0);
    const double qnorm = spectral_norm(Q.hessian());
    RungCertificates c;
    c.trapping_lower = c.trapping_upper = std::numeric_limits<double>::infinity();
    auto visit = [&](std::size_t idx) {
        const Vec x = g.coords(idx);
        const double q = Q(x);
        c.trapping_lower = std::min(c.trapping_lower, u[idx] - q);
        c.trapping_upper = std::min(c.trapping_upper, top(x) - u[idx]);
        if (contact_mask[idx]) {
            c.worst_contact_q = std::max(c.worst_contact_q, q);
            if (q > contact_tol * qnorm) ++c.contact_violations;
        }
    };
    for (std::size_t idx : g.interior()) visit(idx);
    for (std::size_t idx : g.boundary_layer()) visit(idx);
    const auto shells = shell_stats(g, u.values, Vec::Zero(g.dim()), g.h(), 0.0, g.radius());
    for (const Shell& s : shells) c.growth = std::max(c.growth, s.max / (s.r_mean * s.r_mean + 1.0));
    return c;
}

/// min and sup-abs of (fine - coarse) over coarse active nodes, the sup only
/// within `radius`.
inline std::pair<double, double> compare_rungs(const ScalarField& coarse, const ScalarField& fine, double radius) {
    const Grid& gc = *coarse.grid;
    double lowest = std::numeric_limits<double>::infinity();
    double sup = 0.0;
    auto visit = [&](std::size_t idx) {
        const auto j = gc.map_to(*fine.grid, idx);
        if (!j || !fine.grid->is_active(*j)) return;
        const double diff = fine[*j] - coarse[idx];
        lowest = std::min(lowest, diff);
        if (gc.coords(idx).norm() < radius) sup = std::max(sup, std::abs(diff));
    };
    for (std::size_t idx : gc.interior()) visit(idx);
    for (std::size_t idx : gc.boundary_layer()) visit(idx);
    return {lowest, sup};
}

inline std::string fmt(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

}  // namespace detail

/// Ladder radii used by construct_global for a fixed final radius.
inline std::vector<double> ladder_radii(double R_final, double R_min) {
    std::vector<double> radii;
    for (double R = R_final; R >= R_min * (1.0 - 1e-12); R *= 0.5) radii.push_back(R);
    if (radii.empty()) radii.push_back(R_final);
    std::reverse(radii.begin(), radii.end());
    return radii;
}

/// Expanding-ball construction of the global solution with profile Q: solve
/// the obstacle problem on B_R with u = Q on the boundary for a doubling
/// sequence of radii, each rung started from the previous one.
inline GlobalSolution construct_global(const QuadraticPoly& Q, const EllipticOperator& f,
                                       const ConstructOptions& opt = {}) {
    if (Q.dim() != f.dim()) throw DimensionError("construct_global: polynomial and operator dimensions differ");
    if (!(opt.h > 0.0)) throw std::invalid_argument("construct_global: h must be positive");
    if (!(opt.continuation_tol > 0.0)) throw std::invalid_argument("construct_global: continuation_tol must be positive");
    if (opt.validate_input) {
        const auto verdict = pc_membership(Q, f, opt.membership_tol);
        if (!verdict.in_class) {
            std::string msg = "construct_global: Q is not in P_c:";
            for (const auto& v : verdict.violations) msg += " " + v.condition + " (" + detail::fmt(v.measured) + ")";
            throw std::invalid_argument(msg);
        }
    }

    GlobalSolution gs;
    gs.Q = Q;
    gs.op = f;
    gs.h = opt.h;
    gs.continuation_tol = opt.continuation_tol;
    gs.certificate_tol = 1e-8 + opt.certificate_C * opt.h * opt.h;
    gs.contact_tol = opt.solver.contact_tol.value_or(default_contact_tol(opt.h));
    const double d = Q.dim();

    if (Q.constant() >= 0.0) {
        const double R = opt.R_final.value_or(std::max(4.0, 8.0 * opt.h * std::sqrt(d)));
        gs.field = sample_poly(build_grid(Q.dim(), R, opt.h), Q);
        gs.contact_mask.assign(gs.field.values.size(), 0);
        for (std::size_t idx : gs.field.grid->interior())
            if (gs.field[idx] <= gs.contact_tol) gs.contact_mask[idx] = 1;
        gs.converged = true;
        return gs;
    }

    const double rho = sublevel_circumradius(QuadraticPoly::centered(Q.hessian(), Q.center(), Q.constant()));
    const double R0 = 2.0 * (rho + Q.center().norm());
    std::vector<double> radii;
    if (opt.R_final) {
        if (*opt.R_final < R0)
            throw std::invalid_argument("construct_global: R_final " + detail::fmt(*opt.R_final) +
                                        " is below 2 * circumradius of {Q <= 0} (" + detail::fmt(R0) + ")");
        radii = ladder_radii(*opt.R_final, R0);
    }

    std::optional<std::size_t> prev_rung;
    for (std::size_t k = 0;; ++k) {
        double R = 0.0;
        if (opt.R_final) {
            if (k >= radii.size()) break;
            R = radii[k];
        } else {
            R = R0 * std::pow(2.0, static_cast<double>(k));
            if (R > opt.R_cap * (1.0 + 1e-12)) {
                gs.warnings.push_back("continuation did not converge below R_cap = " + detail::fmt(opt.R_cap));
                break;
            }
        }
        auto grid = build_grid(Q.dim(), R, opt.h);
        ObstacleInstance inst{grid, f, sample_poly(grid, Q), std::nullopt};
        if (prev_rung) {
            const ScalarField* previous = &gs.ladder[*prev_rung].result.solution;
            ScalarField init = inst.boundary;
            const Grid& gp = *previous->grid;
            for (std::size_t idx : grid->interior()) {
                const auto j = grid->map_to(gp, idx);
                if (j && gp.is_active(*j)) init.values[idx] = (*previous)[*j];
            }
            inst.initial = std::move(init);
        }
        Rung rung;
        rung.R = R;
        try {
            rung.result = solve_obstacle(inst, opt.solver);
        } catch (const NonConvergenceError& e) {
            throw NonConvergenceError("construct_global: rung " + std::to_string(k) + " (R = " + detail::fmt(R) +
                                          "): " + e.what(),
                                      e.history());
        }
        for (const auto& w : rung.result.warnings) gs.warnings.push_back("R = " + detail::fmt(R) + ": " + w);
        rung.certificates = detail::rung_certificates(Q, rung.result.solution, rung.result.contact_mask,
                                                      rung.result.contact_tol);
        if (prev_rung) {
            const ScalarField& previous = gs.ladder[*prev_rung].result.solution;
            const auto [lowest, sup] = detail::compare_rungs(previous, rung.result.solution,
                                                             previous.grid->radius() / 2.0);
            rung.certificates.monotonicity = lowest;
            rung.continuation_diff = sup;
        }
        gs.ladder.push_back(std::move(rung));
        prev_rung = gs.ladder.size() - 1;
        if (!opt.R_final && gs.ladder.back().continuation_diff <= opt.continuation_tol) break;
    }

    if (gs.ladder.empty()) throw std::invalid_argument("construct_global: R_cap is below the first rung radius " + detail::fmt(R0));
    const Rung& last = gs.ladder.back();
    gs.field = last.result.solution;
    gs.contact_mask = last.result.contact_mask;
    gs.contact_tol = last.result.contact_tol;
    gs.converged = last.continuation_diff <= opt.continuation_tol;
    if (gs.ladder.size() == 1) gs.warnings.push_back("single rung: continuation criterion not evaluated");

    if (last.result.contact_count == 0)
        throw CertificateError("construct_global: final contact set is empty");
    if (opt.strict) {
        for (const Rung& r : gs.ladder) {
            const auto& c = r.certificates;
            std::string what;
            if (c.trapping_lower < -gs.certificate_tol) what = "trapping (lower) " + detail::fmt(c.trapping_lower);
            else if (c.trapping_upper < -gs.certificate_tol) what = "trapping (upper) " + detail::fmt(c.trapping_upper);
            else if (c.monotonicity < -gs.certificate_tol) what = "ladder monotonicity " + detail::fmt(c.monotonicity);
            else if (c.contact_violations > 0)
                what = "contact inclusion, " + std::to_string(c.contact_violations) + " nodes outside {Q <= 0}";
            if (!what.empty())
                throw CertificateError("construct_global: certificate failed at R = " + detail::fmt(r.R) + ": " + what +
                                       " (tolerance " + detail::fmt(gs.certificate_tol) + ")");
        }
    }
    return gs;
}

struct TrappingMargin {
    double R = 0.0;
    double lower = 0.0;
    double upper = 0.0;
    /// smallest C with both margins >= -(1e-8 + C h^2)
    double required_C = 0.0;
};

inline double required_constant(double margin, double h) {
    return std::max(0.0, (-margin - 1e-8) / (h * h));
}

inline std::vector<TrappingMargin> trapping_check(const GlobalSolution& gs) {
    if (gs.ladder.empty()) throw std::invalid_argument("trapping_check: ladder is empty");
    std::vector<TrappingMargin> out;
    for (const Rung& r : gs.ladder) {
        const auto c = detail::rung_certificates(gs.Q, r.result.solution, r.result.contact_mask, r.result.contact_tol);
        out.push_back({r.R, c.trapping_lower, c.trapping_upper,
                       required_constant(std::min(c.trapping_lower, c.trapping_upper), gs.h)});
    }
    return out;
}

struct MonotonicityMargin {
    double R_small = 0.0;
    double R_large = 0.0;
    double margin = 0.0;
    double required_C = 0.0;
};

inline std::vector<MonotonicityMargin> monotonicity_check(const GlobalSolution& gs) {
    std::vector<MonotonicityMargin> out;
    for (std::size_t k = 1; k < gs.ladder.size(); ++k) {
        const auto [lowest, sup] = detail::compare_rungs(gs.ladder[k - 1].result.solution, gs.ladder[k].result.solution, 0.0);
        (void)sup;
        out.push_back({gs.ladder[k - 1].R, gs.ladder[k].R, lowest, required_constant(lowest, gs.h)});
    }
    return out;
}

struct ContactInclusionReport {
    std::size_t violations = 0;
    /// max of Q over contact nodes, all rungs
    double worst_q = -std::numeric_limits<double>::infinity();
    double threshold = 0.0;
    std::size_t final_contact_count = 0;
    bool passed() const { return violations == 0 && final_contact_count > 0; }
};

inline ContactInclusionReport contact_inclusion_check(const GlobalSolution& gs) {
    if (gs.ladder.empty()) throw std::invalid_argument("contact_inclusion_check: ladder is empty");
    if (!(gs.Q.constant() < 0.0)) throw std::invalid_argument("contact_inclusion_check: requires a < 0");
    ContactInclusionReport rep;
    const double qnorm = spectral_norm(gs.Q.hessian());
    for (const Rung& r : gs.ladder) {
        const Grid& g = *r.result.solution.grid;
        rep.threshold = r.result.contact_tol * qnorm;
        for (std::size_t idx : g.interior()) {
            if (!r.result.contact_mask[idx]) continue;
            const double q = gs.Q(g.coords(idx));
            rep.worst_q = std::max(rep.worst_q, q);
            if (q > rep.threshold) ++rep.violations;
        }
    }
    rep.final_contact_count = gs.ladder.back().result.contact_count;
    if (rep.final_contact_count == 0) throw CertificateError("contact_inclusion_check: final contact set is empty");
    return rep;
}

/// Uniform bound over rungs of max over shells of (shell max u) / (r^2 + 1).
inline double growth_bound(const GlobalSolution& gs) {
    double b = 0.0;
    for (const Rung& r : gs.ladder) b = std::max(b, r.certificates.growth);
    if (gs.ladder.empty()) {
        const auto shells = shell_stats(*gs.field.grid, gs.field.values, Vec::Zero(gs.Q.dim()), gs.h, 0.0, gs.R());
        for (const Shell& s : shells) b = std::max(b, s.max / (s.r_mean * s.r_mean + 1.0));
    }
    return b;
}

}  // namespace nlobs
