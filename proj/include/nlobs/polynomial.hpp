#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

#include "nlobs/symmatrix.hpp"

namespace nlobs {

/// Quadratic polynomial in centered form
///
///     Q(x) = 1/2 (x - c) . A (x - c) + b . (x - c) + a
///
/// with Hessian A, center c, linear part b and constant a. The profiles of
/// global solutions have b = 0; the linear slot exists for fitted raw
/// expansions before the linear part is absorbed into the center.
class QuadraticPoly {
public:
    QuadraticPoly() = default;

    QuadraticPoly(SymMatrix hessian, Vec center, Vec linear, double constant)
        : A_(std::move(hessian)), center_(std::move(center)), linear_(std::move(linear)), constant_(constant) {
        const int d = A_.dim();
        if (d < 3 || d > kMaxDim)
            throw DimensionError("QuadraticPoly: dimension " + std::to_string(d) + " not supported (3 or 4)");
        if (center_.size() != d || linear_.size() != d)
            throw DimensionError("QuadraticPoly: center/linear length does not match Hessian dimension");
    }

    /// 1/2 (x - center) . A (x - center) + constant.
    static QuadraticPoly centered(SymMatrix hessian, Vec center, double constant) {
        const auto d = hessian.dim();
        return {std::move(hessian), std::move(center), Vec::Zero(d), constant};
    }

    /// 1/2 x . A x + constant, centered at the origin.
    static QuadraticPoly at_origin(SymMatrix hessian, double constant = 0.0) {
        const auto d = hessian.dim();
        return centered(std::move(hessian), Vec::Zero(d), constant);
    }

    int dim() const noexcept { return A_.dim(); }
    const SymMatrix& hessian() const noexcept { return A_; }
    const Vec& center() const noexcept { return center_; }
    const Vec& linear() const noexcept { return linear_; }
    double constant() const noexcept { return constant_; }

    double operator()(const Vec& x) const {
        if (x.size() != dim())
            throw DimensionError("QuadraticPoly: point has dimension " + std::to_string(x.size()) +
                                 ", polynomial has " + std::to_string(dim()));
        const Vec y = x - center_;
        return 0.5 * A_.quadratic_form(y) + linear_.dot(y) + constant_;
    }

    Vec gradient(const Vec& x) const { return A_.matrix() * (x - center_) + linear_; }

    /// The same polynomial with the constant replaced.
    QuadraticPoly with_constant(double a) const { return {A_, center_, linear_, a}; }

private:
    SymMatrix A_;
    Vec center_;
    Vec linear_;
    double constant_ = 0.0;
};

inline double poly_eval(const QuadraticPoly& q, const Vec& x) { return q(x); }

/// Parabolic rescaling q~(x) = q(s x) / s^2: Hessian unchanged, center and
/// linear part divided by s, constant by s^2.
inline QuadraticPoly poly_rescale(const QuadraticPoly& q, double s) {
    if (!(s > 0.0) || !std::isfinite(s)) throw std::invalid_argument("poly_rescale: scale must be positive");
    return {q.hessian(), Vec(q.center() / s), Vec(q.linear() / s), q.constant() / (s * s)};
}

/// Radius of the smallest ball around the center containing {q <= 0}.
/// Requires a positive definite Hessian and no linear part; 0 when a >= 0.
inline double sublevel_circumradius(const QuadraticPoly& q) {
    if (q.linear().cwiseAbs().maxCoeff() > 0.0)
        throw std::invalid_argument("sublevel_circumradius: polynomial has a linear part");
    if (q.constant() >= 0.0) return 0.0;
    const double lmin = min_eigenvalue(q.hessian());
    if (lmin <= 0.0) throw std::invalid_argument("sublevel_circumradius: Hessian is not positive definite");
    return std::sqrt(-2.0 * q.constant() / lmin);
}

}  // namespace nlobs
