#include <gtest/gtest.h>

#include "nlobs/global.hpp"
#include "nlobs/verify.hpp"

using namespace nlobs;

namespace {

QuadraticPoly radial_q(double a = -0.5) { return QuadraticPoly::at_origin(SymMatrix::identity(3, 1.0 / 3.0), a); }

const GlobalSolution& radial_solution() {
    static const GlobalSolution gs = [] {
        ConstructOptions o;
        o.h = 0.25;
        o.R_final = 4.0;
        return construct_global(radial_q(), EllipticOperator::trace(3), o);
    }();
    return gs;
}

}  // namespace

TEST(Construct, ZeroConstantBypass) {
    const auto q = radial_q(0.0);
    ConstructOptions o;
    o.R_final = 2.0;
    const auto gs = construct_global(q, EllipticOperator::trace(3), o);
    EXPECT_TRUE(gs.ladder.empty());
    EXPECT_TRUE(gs.converged);
    for (std::size_t idx = 0; idx < gs.field.values.size(); ++idx)
        EXPECT_EQ(gs.field[idx], q(gs.field.grid->coords(idx)));
    EXPECT_GT(growth_bound(gs), 0.0);
}

TEST(Construct, RadialContactSet) {
    const auto& gs = radial_solution();
    ASSERT_EQ(gs.ladder.size(), 1u);
    const Grid& g = *gs.field.grid;
    std::size_t contact = 0;
    for (std::size_t idx : g.interior()) {
        if (!gs.contact_mask[idx]) continue;
        ++contact;
        EXPECT_LE(g.node_radius(idx), 1.0 + g.h() * std::sqrt(3.0));
    }
    EXPECT_GT(contact, 0u);
    // every node well inside the unit ball is in contact
    for (std::size_t idx : g.interior())
        if (g.node_radius(idx) < 1.0 - 2.0 * g.h()) EXPECT_TRUE(gs.contact_mask[idx]);
}

TEST(Construct, RadialCloseToBallOracle) {
    const auto& gs = radial_solution();
    const auto oracle = RadialOracle::ball(3, effective_radius(*gs.field.grid), -0.5);
    double err = 0.0;
    for (std::size_t idx : gs.field.grid->interior())
        err = std::max(err, std::abs(gs.field[idx] - oracle.at(gs.field.grid->coords(idx))));
    EXPECT_LE(err, 2e-2);
}

TEST(Construct, CertificatesPass) {
    const auto& gs = radial_solution();
    for (const auto& m : trapping_check(gs)) {
        EXPECT_GE(m.lower, -gs.certificate_tol);
        EXPECT_GE(m.upper, -gs.certificate_tol);
    }
    const auto inc = contact_inclusion_check(gs);
    EXPECT_TRUE(inc.passed());
    EXPECT_EQ(inc.violations, 0u);
}

TEST(Construct, DoublingLadderMonotone) {
    ConstructOptions o;
    o.h = 0.5;
    o.continuation_tol = 0.5;
    const auto gs = construct_global(radial_q(), EllipticOperator::trace(3), o);
    ASSERT_GE(gs.ladder.size(), 2u);
    EXPECT_NEAR(gs.ladder[1].R, 2.0 * gs.ladder[0].R, 1e-12);
    for (const auto& m : monotonicity_check(gs)) EXPECT_GE(m.margin, -gs.certificate_tol);
    EXPECT_TRUE(gs.converged);
}

TEST(Construct, TrappingViolationDetected) {
    GlobalSolution gs = radial_solution();
    auto& u = gs.ladder.back().result.solution;
    for (std::size_t idx = 0; idx < u.values.size(); ++idx) u.values[idx] = gs.Q(u.grid->coords(idx)) - 0.1;
    const auto margins = trapping_check(gs);
    EXPECT_NEAR(margins.back().lower, -0.1, 1e-12);
    EXPECT_GT(margins.back().required_C, 1.0);
}

TEST(Construct, ContactViolationDetected) {
    GlobalSolution gs = radial_solution();
    auto& r = gs.ladder.back().result;
    const Grid& g = *r.solution.grid;
    for (std::size_t idx : g.interior())
        if (g.node_radius(idx) > 3.0) {
            r.contact_mask[idx] = 1;
            break;
        }
    EXPECT_EQ(contact_inclusion_check(gs).violations, 1u);
}

TEST(Construct, EmptyContactIsError) {
    GlobalSolution gs = radial_solution();
    gs.ladder.back().result.contact_count = 0;
    EXPECT_THROW(contact_inclusion_check(gs), CertificateError);
}

TEST(Construct, ScalingEquivariance) {
    // u_s(x) = u(2x)/4 solves the problem for poly_rescale(Q, 2) on B_{R/2} with h/2
    const auto f = EllipticOperator::trace(3);
    const auto& gs = radial_solution();
    ConstructOptions o;
    o.h = gs.h / 2.0;
    o.R_final = gs.R() / 2.0;
    const auto gs2 = construct_global(poly_rescale(radial_q(), 2.0), f, o);
    const Grid& g2 = *gs2.field.grid;
    const Grid& g1 = *gs.field.grid;
    ASSERT_EQ(g2.side(), g1.side());
    double worst = 0.0;
    for (std::size_t idx : g2.interior()) {
        const std::size_t j = g1.index(g2.multi_index(idx));
        worst = std::max(worst, std::abs(gs2.field[idx] - gs.field[j] / 4.0));
    }
    EXPECT_LE(worst, 2.0 * (1e-10 + 0.1 * o.h * o.h));
    EXPECT_LE(worst, 1e-9);
}

TEST(Construct, RejectsInvalidInput) {
    const auto f = EllipticOperator::trace(3);
    EXPECT_THROW(construct_global(QuadraticPoly::at_origin(SymMatrix::identity(3), -1.0), f), std::invalid_argument);
    ConstructOptions o;
    o.R_final = 2.0;
    EXPECT_THROW(construct_global(radial_q(), f, o), std::invalid_argument);
    EXPECT_THROW(construct_global(QuadraticPoly::at_origin(SymMatrix::identity(4, 0.25), -1.0), f), DimensionError);
}

TEST(Ladder, Radii) {
    const auto r = ladder_radii(16.0, 3.4);
    ASSERT_EQ(r.size(), 3u);
    EXPECT_EQ(r[0], 4.0);
    EXPECT_EQ(r[2], 16.0);
}

TEST(Growth, BoundedOverRungs) {
    const double b = growth_bound(radial_solution());
    EXPECT_GT(b, 0.0);
    EXPECT_LT(b, 1.0);
}
