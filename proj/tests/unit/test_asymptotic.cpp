#include <gtest/gtest.h>

#include <random>

#include "nlobs/asymptotic.hpp"
#include "nlobs/global.hpp"
#include "nlobs/verify.hpp"

using namespace nlobs;

namespace {

const SymMatrix kThird = SymMatrix::identity(3, 1.0 / 3.0);

ScalarField oracle_field(double R, double h, const Vec& shift, double a = -0.5, int d = 3) {
    const auto o = RadialOracle::global(d, a);
    return sample_function(build_grid(d, R, h), [&](const Vec& x) { return o.at(x - shift); });
}

std::vector<ResidualShell> power_profile(double c, double p, double noise, std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u(-1.0, 1.0);
    std::vector<ResidualShell> out;
    for (double r = 2.0; r <= 8.0; r += 0.25) out.push_back({r, c * std::pow(r, p) + noise * u(rng), 0.0, 1});
    return out;
}

}  // namespace

TEST(BlowDown, HomogeneousQuadraticExact) {
    const SymMatrix A = SymMatrix::diagonal({0.2, 0.3, 0.5});
    const auto field = sample_poly(build_grid(3, 4.0, 0.25), QuadraticPoly::at_origin(A));
    for (const auto& b : blow_down(field, {1.0, 2.0, 4.0})) {
        ASSERT_TRUE(b.accepted) << b.reason;
        EXPECT_LE((b.p.hessian() - A).max_abs(), 1e-10);
    }
}

TEST(BlowDown, LinearPartRejected) {
    const SymMatrix A = SymMatrix::diagonal({0.2, 0.3, 0.5});
    const QuadraticPoly q(A, Vec::Zero(3), make_vec({0.3, -0.1, 0.2}), 0.0);
    const auto field = sample_poly(build_grid(3, 4.0, 0.25), q);
    std::vector<std::uint8_t> mask(field.values.size(), 0);
    mask[field.grid->index(MultiIndex{0, 0, 0})] = 1;
    for (const auto& b : blow_down(field, {2.0, 4.0}, &mask)) EXPECT_LE((b.p.hessian() - A).max_abs(), 1e-10);
}

TEST(BlowDown, ScaleOutsideRejected) {
    const auto field = oracle_field(4.0, 0.25, Vec::Zero(3));
    const auto fits = blow_down(field, {1.0, 8.0});
    EXPECT_FALSE(fits[0].accepted);  // contact radius 1 is not inside B_{1/2}
    EXPECT_FALSE(fits[1].accepted);
}

TEST(BlowDown, StabilizesOnOracle) {
    FitOptions opt;
    opt.tail_term = false;
    const auto field = oracle_field(12.0, 0.25, Vec::Zero(3));
    const auto fits = blow_down(field, {2.5, 5.0, 10.0}, nullptr, std::nullopt, opt);
    for (const auto& b : fits) ASSERT_TRUE(b.accepted) << b.reason;
    const double d1 = (fits[1].p.hessian() - fits[0].p.hessian()).max_abs();
    const double d2 = (fits[2].p.hessian() - fits[1].p.hessian()).max_abs();
    EXPECT_LT(d2, d1);
    EXPECT_LE((fits[2].p.hessian() - kThird).max_abs(), 5e-3);
}

TEST(DecayFit, ExactPowerLaw) {
    const auto fit = decay_fit(power_profile(1.0 / 3.0, -1.0, 0.0, 1), 0.0, 100.0);
    EXPECT_NEAR(fit.slope, -1.0, 1e-3);
    EXPECT_NEAR(fit.r_squared, 1.0, 1e-12);
}

TEST(DecayFit, NoisyPowerLaw) {
    for (int d : {3, 4}) {
        const auto fit = decay_fit(power_profile(0.5, 2.0 - d, 1e-12, 2), 0.0, 100.0);
        EXPECT_NEAR(fit.slope, 2.0 - d, 0.05);
    }
}

TEST(DecayFit, ConstantProfile) {
    const auto fit = decay_fit(power_profile(0.1, 0.0, 0.0, 3), 0.0, 100.0);
    EXPECT_NEAR(fit.slope, 0.0, 1e-12);
}

TEST(DecayFit, TooFewShells) {
    EXPECT_THROW(decay_fit(power_profile(1.0, -1.0, 0.0, 4), 2.0, 2.8), InsufficientDataError);
}

TEST(DecayFit, BelowFloorCounted) {
    auto profile = power_profile(1.0, -1.0, 0.0, 5);
    profile[3].max = 1e-14;
    const auto fit = decay_fit(profile, 0.0, 100.0, 1e-9);
    EXPECT_EQ(fit.below_floor, 1);
    EXPECT_EQ(fit.used, static_cast<int>(profile.size()) - 1);
}

TEST(Extract, RadialOracle) {
    const auto f = EllipticOperator::trace(3);
    const auto fit = extract_profile(oracle_field(8.0, 0.25, Vec::Zero(3)), f);
    EXPECT_LE((fit.Q_hat.hessian() - kThird).max_abs(), 5e-3);
    EXPECT_LE(fit.Q_hat.center().norm(), 0.25);
    EXPECT_NEAR(fit.Q_hat.constant(), -0.5, 2e-2);
    EXPECT_NEAR(fit.tail_coefficient, 1.0 / 3.0, 2e-2);
    ASSERT_TRUE(fit.decay);
    EXPECT_NEAR(fit.decay->slope, -1.0, 0.1);
    EXPECT_TRUE(fit.verdict.in_class);
    // shell max of the residual against the exact profile is the tail 1/(3r)
    const auto prof = residual_profile(oracle_field(8.0, 0.25, Vec::Zero(3)),
                                       QuadraticPoly::at_origin(kThird, -0.5), Vec::Zero(3), 0.25, 3.0, 4.0);
    for (const auto& s : prof) EXPECT_NEAR(s.max, 1.0 / (3.0 * s.r), 0.15 / (3.0 * s.r));
}

TEST(Extract, TranslatedOracle) {
    const Vec x0 = make_vec({0.3, -0.2, 0.1});
    const auto fit = extract_profile(oracle_field(8.0, 0.25, x0), EllipticOperator::trace(3));
    EXPECT_LE((fit.Q_hat.center() - x0).norm(), 0.25);
    EXPECT_LE((fit.Q_hat.hessian() - kThird).max_abs(), 5e-3);
    EXPECT_NEAR(fit.Q_hat.constant(), -0.5, 2e-2);
}

TEST(Extract, ZeroConstantIsExact) {
    const auto q = QuadraticPoly::at_origin(SymMatrix::diagonal({0.2, 0.3, 0.5}));
    const auto fit = extract_profile(sample_poly(build_grid(3, 4.0, 0.25), q), EllipticOperator::trace(3));
    EXPECT_TRUE(fit.exact);
    EXPECT_FALSE(fit.decay);
    EXPECT_LE((fit.Q_hat.hessian() - q.hessian()).max_abs(), 1e-10);
    EXPECT_LE(std::abs(fit.Q_hat.constant()), 1e-10);
    EXPECT_LE(fit.Q_hat.center().norm(), 1e-9);
}

TEST(Extract, AbsorbedFormMatchesRawExpansion) {
    const auto fit = extract_profile(oracle_field(8.0, 0.25, make_vec({0.3, -0.2, 0.1})), EllipticOperator::trace(3));
    const SymMatrix& A = fit.Q_hat.hessian();
    std::mt19937_64 rng(8);
    std::normal_distribution<double> n01;
    for (int t = 0; t < 50; ++t) {
        Vec x(3);
        for (int i = 0; i < 3; ++i) x(i) = 3.0 * n01(rng);
        const double raw = 0.5 * A.quadratic_form(x) + fit.b_hat.dot(x) + fit.c_hat;
        EXPECT_NEAR(fit.Q_hat(x), raw, 1e-10 * (1.0 + std::abs(raw)));
    }
}

TEST(Extract, DegenerateHessianReportsDirection) {
    const QuadraticPoly p(SymMatrix::diagonal({1.0, 1.0, 0.0}), Vec::Zero(3), make_vec({0, 0, 0.1}), 0.0);
    const auto field = sample_poly(build_grid(3, 4.0, 0.25), p);
    std::vector<std::uint8_t> mask(field.values.size(), 0);
    mask[field.grid->index(MultiIndex{0, 0, 0})] = 1;
    try {
        extract_profile(field, std::nullopt, &mask);
        FAIL() << "expected a degenerate profile";
    } catch (const DegenerateProfileError& e) {
        EXPECT_NEAR(std::abs(e.direction()(2)), 1.0, 1e-8);
        EXPECT_NEAR(e.eigenvalue(), 0.0, 1e-8);
    }
}

TEST(Extract, ContactTooLargeRejected) {
    EXPECT_THROW(extract_profile(oracle_field(3.0, 0.25, Vec::Zero(3)), EllipticOperator::trace(3)),
                 std::invalid_argument);
}

TEST(Extract, InjectivityProbe) {
    // distinct constants give solutions that differ by about |a1 - a2| far out
    const auto f = EllipticOperator::trace(3);
    ConstructOptions o;
    o.R_final = 4.0;
    const auto u1 = construct_global(QuadraticPoly::at_origin(kThird, -0.5), f, o);
    const auto u2 = construct_global(QuadraticPoly::at_origin(kThird, -0.3), f, o);
    double sup = 0.0;
    for (std::size_t idx : u1.field.grid->interior()) sup = std::max(sup, std::abs(u1.field[idx] - u2.field[idx]));
    EXPECT_GE(sup, 0.1);
}
