#pragma once

#include <boost/math/tools/roots.hpp>

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "nlobs/operators.hpp"
#include "nlobs/polynomial.hpp"

namespace nlobs {

inline constexpr double kDefaultMembershipTol = 1e-8;

struct Violation {
    std::string condition;
    double measured = 0.0;
    double threshold = 0.0;
};

struct MembershipVerdict {
    bool in_class = true;
    std::vector<Violation> violations;
    double min_eigenvalue = 0.0;
    double operator_value = 0.0;

    void add(std::string condition, double measured, double threshold) {
        violations.push_back({std::move(condition), measured, threshold});
        in_class = false;
    }
};

/// Q = 1/2 (x - c) . A (x - c) + a belongs to P_c when F(A) = 1, A > 0 and
/// a <= 0, and there is no linear part. Strict inequalities become >= tol.
inline MembershipVerdict pc_membership(const QuadraticPoly& q, const EllipticOperator& f,
                                       double tol = kDefaultMembershipTol) {
    if (q.dim() != f.dim()) throw DimensionError("pc_membership: polynomial and operator dimensions differ");
    if (!(tol > 0.0)) throw std::invalid_argument("pc_membership: tol must be positive");
    MembershipVerdict v;
    v.operator_value = op_eval(f, q.hessian());
    v.min_eigenvalue = min_eigenvalue(q.hessian());
    if (std::abs(v.operator_value - 1.0) > tol) v.add("F(A) = 1", v.operator_value, tol);
    if (v.min_eigenvalue < tol) v.add("A positive definite", v.min_eigenvalue, tol);
    if (q.constant() > tol) v.add("a <= 0", q.constant(), tol);
    const double b = q.linear().cwiseAbs().maxCoeff();
    if (b > tol) v.add("no linear part", b, tol);
    return v;
}

/// Blow-down class: p = 1/2 x . A x with A >= 0 and F(A) = 1.
inline MembershipVerdict q_class_membership(const QuadraticPoly& p, const EllipticOperator& f,
                                            double tol = kDefaultMembershipTol) {
    if (p.dim() != f.dim()) throw DimensionError("q_class_membership: polynomial and operator dimensions differ");
    MembershipVerdict v;
    v.operator_value = op_eval(f, p.hessian());
    v.min_eigenvalue = min_eigenvalue(p.hessian());
    if (std::abs(v.operator_value - 1.0) > tol) v.add("F(A) = 1", v.operator_value, tol);
    if (v.min_eigenvalue < -tol) v.add("A positive semidefinite", v.min_eigenvalue, -tol);
    const double rest = std::max({p.center().cwiseAbs().maxCoeff(), p.linear().cwiseAbs().maxCoeff(),
                                  std::abs(p.constant())});
    if (rest > tol) v.add("homogeneous quadratic", rest, tol);
    return v;
}

/// The multiple t A with F(t A) = 1, for A positive definite. F(tA) is
/// increasing in t by ellipticity, so the root is unique.
inline SymMatrix project_to_level(const EllipticOperator& f, const SymMatrix& A) {
    if (!(min_eigenvalue(A) > 0.0)) throw std::invalid_argument("project_to_level: A is not positive definite");
    auto g = [&](double t) { return op_eval(f, A * t) - 1.0; };
    double lo = 1.0, hi = 1.0;
    for (int k = 0; g(lo) > 0.0; ++k) {
        if (k > 200) throw std::runtime_error("project_to_level: no bracket");
        lo *= 0.5;
    }
    for (int k = 0; g(hi) < 0.0; ++k) {
        if (k > 200) throw std::runtime_error("project_to_level: no bracket");
        hi *= 2.0;
    }
    if (g(lo) == 0.0) return A * lo;
    if (g(hi) == 0.0) return A * hi;
    std::uintmax_t iters = 200;
    const auto [a, b] = boost::math::tools::toms748_solve(g, lo, hi, boost::math::tools::eps_tolerance<double>(52),
                                                          iters);
    return A * (0.5 * (a + b));
}

}  // namespace nlobs
