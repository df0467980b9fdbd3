#include <gtest/gtest.h>

#include "nlobs/membership.hpp"
#include "nlobs/solver.hpp"
#include "nlobs/verify.hpp"

using namespace nlobs;

namespace {

QuadraticPoly radial_q(double a = -0.5) { return QuadraticPoly::at_origin(SymMatrix::identity(3, 1.0 / 3.0), a); }

SolveResult solve_with(const EllipticOperator& f, const QuadraticPoly& q, double R, double h, SolverOptions opt = {}) {
    const auto g = build_grid(q.dim(), R, h);
    return solve_obstacle({g, f, sample_poly(g, q), std::nullopt}, opt);
}

void expect_kkt(const EllipticOperator& f, const SolveResult& r, double tol) {
    const auto F = apply_operator_field(f, r.solution);
    const auto interior = r.solution.grid->interior();
    for (std::size_t n = 0; n < interior.size(); ++n) {
        const double u = r.solution[interior[n]];
        EXPECT_GE(u, -tol);
        EXPECT_LE(F[n], 1.0 + tol);
        EXPECT_LE(std::abs(std::min(u, 1.0 - F[n])), tol);
    }
}

}  // namespace

TEST(Solver, ZeroConstantReturnsProfile) {
    const auto q = radial_q(0.0);
    const auto r = solve_with(EllipticOperator::trace(3), q, 2.0, 0.25);
    EXPECT_LE(r.residual, 1e-10);
    for (std::size_t idx : r.solution.grid->interior())
        EXPECT_NEAR(r.solution[idx], q(r.solution.grid->coords(idx)), 1e-12);
}

TEST(Solver, PositiveDataHasNoContact) {
    const auto q = QuadraticPoly::at_origin(SymMatrix::diagonal({0.5, 0.3, 0.2}), 1.0);
    const auto f = EllipticOperator::trace(3);
    const auto g = build_grid(3, 2.0, 0.25);
    // start far from the answer so the solver has work to do
    const auto r = solve_obstacle({g, f, sample_poly(g, q), ScalarField(g, 0.0)});
    EXPECT_EQ(r.contact_count, 0u);
    for (double v : apply_operator_field(f, r.solution)) EXPECT_NEAR(v, 1.0, 1e-9);
    // the unconstrained discrete solution is the quadratic itself
    for (std::size_t idx : g->interior()) EXPECT_NEAR(r.solution[idx], q(g->coords(idx)), 1e-9);
}

TEST(Solver, RadialKktInvariants) {
    const auto f = EllipticOperator::trace(3);
    const auto r = solve_with(f, radial_q(), 4.0, 0.25);
    EXPECT_LE(r.residual, 1e-10);
    EXPECT_GT(r.contact_count, 0u);
    expect_kkt(f, r, 1e-9);
    for (std::size_t idx : r.solution.grid->interior())
        if (r.contact_mask[idx]) EXPECT_LE(r.solution.grid->node_radius(idx), 1.0 + 0.25 * std::sqrt(3.0) + 0.1);
}

TEST(Solver, SubsolutionBelowSolution) {
    const auto q = radial_q();
    const auto r = solve_with(EllipticOperator::trace(3), q, 4.0, 0.25);
    const auto& g = *r.solution.grid;
    for (std::size_t idx : g.interior()) EXPECT_LE(q(g.coords(idx)), r.solution[idx] + 1e-8);
}

TEST(Solver, Deterministic) {
    const auto f = EllipticOperator::smooth_pucci(3, 1, 2, 50);
    const auto q = QuadraticPoly::at_origin(project_to_level(f, SymMatrix::identity(3)), -0.3);
    const auto a = solve_with(f, q, 3.0, 0.25);
    const auto b = solve_with(f, q, 3.0, 0.25);
    EXPECT_EQ(a.solution.values, b.solution.values);
    EXPECT_EQ(a.iterations, b.iterations);
}

TEST(Solver, NonlinearOperatorsConverge) {
    for (const auto& f : {EllipticOperator::smooth_pucci(3, 1, 2, 50), EllipticOperator::pucci(3, 1, 2)}) {
        const auto q = QuadraticPoly::at_origin(project_to_level(f, SymMatrix::diagonal({1, 1.5, 2})), -1.0);
        const auto r = solve_with(f, q, 5.0, 0.5);
        EXPECT_LE(r.residual, 1e-10) << f.name();
        expect_kkt(f, r, 1e-9);
    }
}

TEST(Solver, IterativeLinearPath) {
    // more unknowns than the direct limit: conjugate gradients
    SolverOptions opt;
    opt.direct_limit = 100;
    const auto f = EllipticOperator::trace(3);
    const auto r = solve_with(f, radial_q(), 3.0, 0.25, opt);
    SolverOptions direct;
    const auto s = solve_with(f, radial_q(), 3.0, 0.25, direct);
    EXPECT_LE(r.residual, 1e-10);
    for (std::size_t i = 0; i < r.solution.values.size(); ++i) EXPECT_NEAR(r.solution[i], s.solution[i], 1e-9);
}

TEST(Solver, NonConvergenceCarriesHistory) {
    SolverOptions opt;
    opt.max_iter = 1;
    try {
        solve_with(EllipticOperator::trace(3), radial_q(), 4.0, 0.25, opt);
        FAIL() << "expected nonconvergence";
    } catch (const NonConvergenceError& e) {
        EXPECT_EQ(e.history().size(), 2u);
    }
}

TEST(Solver, DimensionMismatch) {
    const auto g = build_grid(3, 1.0, 0.25);
    EXPECT_THROW(solve_obstacle({g, EllipticOperator::trace(4), ScalarField(g, 0.0), std::nullopt}), DimensionError);
}

TEST(KktResidual, ProfileWithZeroConstant) {
    const auto g = build_grid(3, 2.0, 0.25);
    for (double v : kkt_residual(EllipticOperator::trace(3), sample_poly(g, radial_q(0.0)))) EXPECT_NEAR(v, 0.0, 1e-12);
}

TEST(KktResidual, ZeroField) {
    const auto g = build_grid(3, 1.0, 0.25);
    for (double v : kkt_residual(EllipticOperator::trace(3), ScalarField(g, 0.0))) EXPECT_EQ(v, 0.0);
}

TEST(KktResidual, OracleSecondOrder) {
    const auto oracle = RadialOracle::global(3, -0.5);
    auto worst = [&](double h) {
        const auto g = build_grid(3, 2.0, h);
        const auto field = sample_function(g, [&](const Vec& x) { return oracle.at(x); });
        const auto r = kkt_residual(EllipticOperator::trace(3), field);
        double m = 0.0;
        for (std::size_t n = 0; n < r.size(); ++n)
            if (std::abs(g->node_radius(g->interior()[n]) - 1.0) > 0.4) m = std::max(m, std::abs(r[n]));
        return m;
    };
    const double coarse = worst(0.125);
    const double fine = worst(0.0625);
    EXPECT_GT(coarse, 0.0);
    EXPECT_NEAR(coarse / fine, 4.0, 0.6);
}
