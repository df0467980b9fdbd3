#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "nlobs/errors.hpp"
#include "nlobs/symmatrix.hpp"

namespace nlobs {

class EllipticOperator;

/// One affine branch M -> trace(B M) + c of a max-of-linear family.
struct LinearBranch {
    SymMatrix B;
    double c = 0.0;
};

namespace op {

struct Trace {};

/// Pucci extremal operator. The maximal operator sums Lambda*e over positive
/// eigenvalues and lambda*e over negative ones; `maximal = false` gives the
/// (concave) minimal operator -M+(-M).
struct Pucci {
    double lambda = 1.0;
    double Lambda = 1.0;
    bool maximal = true;
};

struct MaxLinear {
    std::vector<LinearBranch> branches;
};

/// Log-sum-exp smoothing of a max-of-linear family: (1/s) log sum exp(s l_a).
struct SmoothMax {
    double sharpness = 1.0;
    std::vector<LinearBranch> branches;
};

/// Maximal Pucci operator with every eigenvalue term max(Lambda e, lambda e)
/// replaced by its softplus smoothing (1/s) log(exp(s Lambda e) + exp(s lambda e)).
/// Equivalently a smooth_max over the 2^d eigen-aligned matrices
/// lambda I + (Lambda - lambda) P_S.
struct SmoothPucci {
    double lambda = 1.0;
    double Lambda = 1.0;
    double sharpness = 1.0;
};

/// G(M) = F(M + A0) - F(A0).
struct Shifted {
    std::shared_ptr<const EllipticOperator> base;
    SymMatrix A0;
    double base_at_A0 = 0.0;
};

/// F~(M) = F(S M S): the operator seen through the change of variables
/// x -> S^{-1} x.
struct Congruence {
    std::shared_ptr<const EllipticOperator> base;
    SymMatrix S;
};

}  // namespace op

using OperatorKind = std::variant<op::Trace, op::Pucci, op::MaxLinear, op::SmoothMax, op::SmoothPucci, op::Shifted,
                                  op::Congruence>;

/// A convex, uniformly elliptic operator F : S_d -> R together with its
/// declared ellipticity constant Lambda, meaning
///     (1/Lambda) |P| <= F(M + P) - F(M) <= Lambda |P|  for P >= 0
/// with |.| the spectral norm. Immutable and cheap to copy.
class EllipticOperator {
public:
    static EllipticOperator trace(int dim) { return {dim, static_cast<double>(dim), op::Trace{}}; }

    static EllipticOperator pucci(int dim, double lambda, double Lambda, bool maximal = true) {
        if (!(lambda > 0.0) || !(Lambda >= lambda))
            throw std::invalid_argument("pucci: require 0 < lambda <= Lambda");
        return {dim, std::max(Lambda * dim, 1.0 / lambda), op::Pucci{lambda, Lambda, maximal}};
    }

    static EllipticOperator smooth_pucci(int dim, double lambda, double Lambda, double sharpness) {
        if (!(lambda > 0.0) || !(Lambda >= lambda))
            throw std::invalid_argument("smooth_pucci: require 0 < lambda <= Lambda");
        if (!(sharpness > 0.0)) throw std::invalid_argument("smooth_pucci: sharpness must be positive");
        return {dim, std::max(Lambda * dim, 1.0 / lambda), op::SmoothPucci{lambda, Lambda, sharpness}};
    }

    /// When `declared` is empty the tightest constant implied by the family is
    /// used. With `validate`, every B must satisfy (1/Lambda) I <= B <= Lambda I.
    static EllipticOperator max_linear(std::vector<LinearBranch> branches, std::optional<double> declared = {},
                                       bool validate = true) {
        const auto [dim, lam] = family_bounds(branches, declared, validate);
        return {dim, lam, op::MaxLinear{std::move(branches)}};
    }

    static EllipticOperator smooth_max(double sharpness, std::vector<LinearBranch> branches,
                                       std::optional<double> declared = {}, bool validate = true) {
        if (!(sharpness > 0.0)) throw std::invalid_argument("smooth_max: sharpness must be positive");
        const auto [dim, lam] = family_bounds(branches, declared, validate);
        return {dim, lam, op::SmoothMax{sharpness, std::move(branches)}};
    }

    static EllipticOperator shifted(const EllipticOperator& base, const SymMatrix& A0);
    static EllipticOperator congruence(const EllipticOperator& base, const SymMatrix& S);

    int dim() const noexcept { return dim_; }
    double ellipticity() const noexcept { return ellipticity_; }
    const OperatorKind& kind() const noexcept { return *kind_; }

    std::string name() const {
        return std::visit(
            [](const auto& k) -> std::string {
                using K = std::decay_t<decltype(k)>;
                if constexpr (std::is_same_v<K, op::Trace>) return "trace";
                else if constexpr (std::is_same_v<K, op::Pucci>) return k.maximal ? "pucci" : "pucci_min";
                else if constexpr (std::is_same_v<K, op::MaxLinear>) return "max_linear";
                else if constexpr (std::is_same_v<K, op::SmoothMax>) return "smooth_max";
                else if constexpr (std::is_same_v<K, op::SmoothPucci>) return "smooth_pucci";
                else if constexpr (std::is_same_v<K, op::Shifted>) return "shifted";
                else return "congruence";
            },
            *kind_);
    }

    /// Same operator with a different declared ellipticity constant.
    EllipticOperator with_ellipticity(double Lambda) const {
        if (!(Lambda >= 1.0)) throw std::invalid_argument("ellipticity constant must be >= 1");
        EllipticOperator copy = *this;
        copy.ellipticity_ = Lambda;
        return copy;
    }

private:
    EllipticOperator(int dim, double Lambda, OperatorKind kind)
        : dim_(dim), ellipticity_(Lambda), kind_(std::make_shared<const OperatorKind>(std::move(kind))) {
        if (dim < 1 || dim > kMaxDim) throw DimensionError("operator dimension out of range");
    }

    static std::pair<int, double> family_bounds(const std::vector<LinearBranch>& branches,
                                                std::optional<double> declared, bool validate) {
        if (branches.empty()) throw std::invalid_argument("operator family is empty");
        const int dim = branches.front().B.dim();
        double emin = std::numeric_limits<double>::infinity();
        double emax = -emin;
        for (const auto& br : branches) {
            if (br.B.dim() != dim) throw DimensionError("operator family: mixed dimensions");
            const Vec ev = eigenvalues(br.B);
            emin = std::min(emin, ev.minCoeff());
            emax = std::max(emax, ev.maxCoeff());
        }
        if (validate && !(emin > 0.0)) throw std::invalid_argument("operator family: B must be positive definite");
        const double Lambda =
            declared ? *declared : std::max({1.0, emax * dim, emin > 0.0 ? 1.0 / emin : 1.0});
        if (validate && (emin < 1.0 / Lambda - 1e-12 || emax > Lambda + 1e-12))
            throw std::invalid_argument("operator family: some B violates (1/Lambda) I <= B <= Lambda I");
        return {dim, Lambda};
    }

    int dim_ = 0;
    double ellipticity_ = 1.0;
    std::shared_ptr<const OperatorKind> kind_;
};

/// Raised where F is not differentiable. Carries the extreme points of the
/// subdifferential (active branches, or the eigen-aligned vertices for Pucci).
class KinkError : public Error {
public:
    KinkError(const std::string& what, std::vector<SymMatrix> extreme_points)
        : Error(what), extreme_points_(std::move(extreme_points)) {}

    const std::vector<SymMatrix>& extreme_points() const noexcept { return extreme_points_; }

    /// Largest spectral distance between two extreme points.
    double diameter() const {
        double diam = 0.0;
        for (std::size_t i = 0; i < extreme_points_.size(); ++i)
            for (std::size_t j = i + 1; j < extreme_points_.size(); ++j)
                diam = std::max(diam, spectral_norm(extreme_points_[i] - extreme_points_[j]));
        return diam;
    }

private:
    std::vector<SymMatrix> extreme_points_;
};

namespace detail {

inline void require_dim(const EllipticOperator& f, const SymMatrix& m) {
    if (m.dim() != f.dim())
        throw DimensionError("operator of dimension " + std::to_string(f.dim()) + " applied to " +
                             std::to_string(m.dim()) + "x" + std::to_string(m.dim()) + " matrix");
}

inline double softplus(double t) { return t > 0.0 ? t + std::log1p(std::exp(-t)) : std::log1p(std::exp(t)); }

inline double logistic(double t) {
    if (t >= 0.0) return 1.0 / (1.0 + std::exp(-t));
    const double e = std::exp(t);
    return e / (1.0 + e);
}

// max(Lambda e, lambda e) + (1/s) log(1 + exp(-s (Lambda - lambda) |e|))
inline double smooth_pucci_term(const op::SmoothPucci& p, double e) {
    const double gap = p.Lambda - p.lambda;
    return std::max(p.Lambda * e, p.lambda * e) + softplus(-p.sharpness * gap * std::abs(e)) / p.sharpness;
}

inline double smooth_pucci_slope(const op::SmoothPucci& p, double e) {
    return p.lambda + (p.Lambda - p.lambda) * logistic(p.sharpness * (p.Lambda - p.lambda) * e);
}

inline double smooth_pucci_curvature(const op::SmoothPucci& p, double e) {
    const double gap = p.Lambda - p.lambda;
    const double s = logistic(p.sharpness * gap * e);
    return p.sharpness * gap * gap * s * (1.0 - s);
}

inline std::vector<double> branch_values(const std::vector<LinearBranch>& branches, const SymMatrix& m) {
    std::vector<double> vals;
    vals.reserve(branches.size());
    for (const auto& br : branches) vals.push_back(br.B.dot(m) + br.c);
    return vals;
}

inline double pucci_eval(const op::Pucci& p, const Vec& ev) {
    const double up = p.maximal ? p.Lambda : p.lambda;
    const double down = p.maximal ? p.lambda : p.Lambda;
    double sum = 0.0;
    for (Eigen::Index i = 0; i < ev.size(); ++i) sum += ev(i) > 0.0 ? up * ev(i) : down * ev(i);
    return sum;
}

inline constexpr double kPucciKinkTol = 1e-10;
inline constexpr double kBranchTieTol = 1e-12;

}  // namespace detail

/// F(m).
inline double op_eval(const EllipticOperator& f, const SymMatrix& m) {
    detail::require_dim(f, m);
    return std::visit(
        [&](const auto& k) -> double {
            using K = std::decay_t<decltype(k)>;
            if constexpr (std::is_same_v<K, op::Trace>) {
                return m.trace();
            } else if constexpr (std::is_same_v<K, op::Pucci>) {
                return detail::pucci_eval(k, eigenvalues(m));
            } else if constexpr (std::is_same_v<K, op::MaxLinear>) {
                const auto vals = detail::branch_values(k.branches, m);
                return *std::max_element(vals.begin(), vals.end());
            } else if constexpr (std::is_same_v<K, op::SmoothMax>) {
                const auto vals = detail::branch_values(k.branches, m);
                const double top = *std::max_element(vals.begin(), vals.end());
                double acc = 0.0;
                for (double v : vals) acc += std::exp(k.sharpness * (v - top));
                return top + std::log(acc) / k.sharpness;
            } else if constexpr (std::is_same_v<K, op::SmoothPucci>) {
                const Vec ev = eigenvalues(m);
                double sum = 0.0;
                for (Eigen::Index i = 0; i < ev.size(); ++i) sum += detail::smooth_pucci_term(k, ev(i));
                return sum;
            } else if constexpr (std::is_same_v<K, op::Shifted>) {
                return op_eval(*k.base, m + k.A0) - k.base_at_A0;
            } else {
                return op_eval(*k.base, congruence(k.S, m));
            }
        },
        f.kind());
}

inline EllipticOperator EllipticOperator::shifted(const EllipticOperator& base, const SymMatrix& A0) {
    detail::require_dim(base, A0);
    auto ptr = std::make_shared<const EllipticOperator>(base);
    const double at = op_eval(base, A0);
    return {base.dim(), base.ellipticity(), op::Shifted{std::move(ptr), A0, at}};
}

inline EllipticOperator EllipticOperator::congruence(const EllipticOperator& base, const SymMatrix& S) {
    detail::require_dim(base, S);
    const Vec ev = eigenvalues(S).cwiseAbs();
    if (!(ev.minCoeff() > 0.0)) throw std::invalid_argument("congruence: S must be nonsingular");
    const double smax2 = ev.maxCoeff() * ev.maxCoeff();
    const double smin2 = ev.minCoeff() * ev.minCoeff();
    const double Lambda = base.ellipticity() * std::max(smax2, 1.0 / smin2);
    return {base.dim(), std::max(Lambda, 1.0), op::Congruence{std::make_shared<const EllipticOperator>(base), S}};
}

namespace detail {

// Shared core of op_derivative / op_subgradient. With `strict`, kinks throw.
inline SymMatrix derivative_impl(const EllipticOperator& f, const SymMatrix& m, bool strict) {
    require_dim(f, m);
    const int d = f.dim();
    return std::visit(
        [&](const auto& k) -> SymMatrix {
            using K = std::decay_t<decltype(k)>;
            if constexpr (std::is_same_v<K, op::Trace>) {
                return SymMatrix::identity(d);
            } else if constexpr (std::is_same_v<K, op::Pucci>) {
                const EigenPairs ep = eigen_decompose(m);
                const double up = k.maximal ? k.Lambda : k.lambda;
                const double down = k.maximal ? k.lambda : k.Lambda;
                std::vector<Eigen::Index> zero;
                for (Eigen::Index i = 0; i < d; ++i)
                    if (std::abs(ep.values(i)) <= kPucciKinkTol) zero.push_back(i);
                if (strict && !zero.empty() && k.Lambda > k.lambda) {
                    std::vector<SymMatrix> vertices;
                    for (unsigned mask = 0; mask < (1u << zero.size()); ++mask) {
                        Vec w(d);
                        for (Eigen::Index i = 0; i < d; ++i) w(i) = ep.values(i) > 0.0 ? up : down;
                        for (std::size_t z = 0; z < zero.size(); ++z) w(zero[z]) = (mask >> z) & 1u ? up : down;
                        vertices.emplace_back(Mat(ep.vectors * w.asDiagonal() * ep.vectors.transpose()));
                    }
                    throw KinkError("pucci: eigenvalue within 1e-10 of zero", std::move(vertices));
                }
                // Subgradient choice at a kink: the upper slope.
                return spectral_map(ep, [&](double e) { return e >= -kPucciKinkTol ? up : down; });
            } else if constexpr (std::is_same_v<K, op::MaxLinear>) {
                const auto vals = branch_values(k.branches, m);
                const double top = *std::max_element(vals.begin(), vals.end());
                const double tie = kBranchTieTol * (1.0 + std::abs(top));
                std::vector<SymMatrix> active;
                std::size_t first = vals.size();
                for (std::size_t a = 0; a < vals.size(); ++a)
                    if (vals[a] >= top - tie) {
                        active.push_back(k.branches[a].B);
                        if (first == vals.size()) first = a;
                    }
                if (strict && active.size() > 1) {
                    // Identical B's tie harmlessly.
                    bool distinct = false;
                    for (const auto& B : active) distinct = distinct || !(B == active.front());
                    if (distinct) throw KinkError("max_linear: tied active branches", std::move(active));
                }
                return k.branches[first].B;
            } else if constexpr (std::is_same_v<K, op::SmoothMax>) {
                const auto vals = branch_values(k.branches, m);
                const double top = *std::max_element(vals.begin(), vals.end());
                double z = 0.0;
                SymMatrix acc(d);
                for (std::size_t a = 0; a < vals.size(); ++a) {
                    const double w = std::exp(k.sharpness * (vals[a] - top));
                    z += w;
                    acc += w * k.branches[a].B;
                }
                return acc * (1.0 / z);
            } else if constexpr (std::is_same_v<K, op::SmoothPucci>) {
                return spectral_map(eigen_decompose(m), [&](double e) { return smooth_pucci_slope(k, e); });
            } else if constexpr (std::is_same_v<K, op::Shifted>) {
                return derivative_impl(*k.base, m + k.A0, strict);
            } else {
                return congruence(k.S, derivative_impl(*k.base, congruence(k.S, m), strict));
            }
        },
        f.kind());
}

}  // namespace detail

/// DF(m). Throws KinkError where F is not differentiable.
inline SymMatrix op_derivative(const EllipticOperator& f, const SymMatrix& m) {
    return detail::derivative_impl(f, m, true);
}

/// An element of the (Clarke) generalized derivative of F at m; equals
/// op_derivative wherever F is differentiable. Used by the Newton solver.
inline SymMatrix op_subgradient(const EllipticOperator& f, const SymMatrix& m) {
    return detail::derivative_impl(f, m, false);
}

/// Central finite differences of F in matrix space, `step` per entry.
/// Off-diagonal entries are perturbed symmetrically and halved.
inline SymMatrix fd_derivative(const EllipticOperator& f, const SymMatrix& m, double step = 1e-6) {
    const int d = f.dim();
    Mat out = Mat::Zero(d, d);
    for (int i = 0; i < d; ++i)
        for (int j = i; j < d; ++j) {
            Mat e = Mat::Zero(d, d);
            e(i, j) = step;
            e(j, i) = step;
            const SymMatrix E{e};
            const double diff = (op_eval(f, m + E) - op_eval(f, m - E)) / (2.0 * step);
            out(i, j) = out(j, i) = i == j ? diff : 0.5 * diff;
        }
    return SymMatrix(out);
}

/// Result of op_normalize: f~(N) = F(S N S) with S = DF(A)^{-1/2}, and the
/// transformed matrix A~ = DF(A)^{1/2} A DF(A)^{1/2} where Df~(A~) = I and
/// f~(A~) = F(A). A solution u of F(D^2u) = 1 corresponds to
/// u~(y) = u(S^{-1} y), i.e. y = S x.
struct NormalizedOperator {
    EllipticOperator op;
    SymMatrix change_of_variables;  // S
    SymMatrix A_tilde;
};

inline NormalizedOperator op_normalize(const EllipticOperator& f, const SymMatrix& A) {
    const SymMatrix D = op_derivative(f, A);
    if (!(min_eigenvalue(D) > 0.0)) throw std::invalid_argument("op_normalize: DF(A) is not positive definite");
    const SymMatrix S = inverse_sqrt_pd(D);
    const SymMatrix root = sqrt_psd(D);
    return {EllipticOperator::congruence(f, S), S, congruence(root, A)};
}

// ---------------------------------------------------------------------------
// Sampled structural checks.

namespace detail {

inline SymMatrix random_symmetric(int d, std::mt19937_64& rng, double scale = 1.0) {
    std::normal_distribution<double> n01(0.0, 1.0);
    Mat m(d, d);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) m(i, j) = n01(rng);
    return SymMatrix(Mat(scale * m));
}

inline Mat random_orthogonal(int d, std::mt19937_64& rng) {
    std::normal_distribution<double> n01(0.0, 1.0);
    Mat g(d, d);
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j) g(i, j) = n01(rng);
    Eigen::HouseholderQR<Mat> qr(g);
    Mat q = qr.householderQ();
    const Mat r = qr.matrixQR();
    for (int i = 0; i < d; ++i)
        if (r(i, i) < 0.0) q.col(i) *= -1.0;
    return q;
}

/// Positive semidefinite matrix with spectral norm exactly 1.
inline SymMatrix random_unit_psd(int d, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::uniform_int_distribution<int> pick(0, d - 1);
    Vec w(d);
    for (int i = 0; i < d; ++i) w(i) = u01(rng) < 0.3 ? 0.0 : u01(rng);
    w(pick(rng)) = 1.0;
    const Mat q = random_orthogonal(d, rng);
    return SymMatrix(Mat(q * w.asDiagonal() * q.transpose()));
}

}  // namespace detail

struct EllipticityReport {
    int trials = 0;
    int violations = 0;
    /// min over trials of (F(M+P) - F(M)) / |P| - 1/Lambda
    double worst_lower_margin = std::numeric_limits<double>::infinity();
    /// min over trials of Lambda - (F(M+P) - F(M)) / |P|
    double worst_upper_margin = std::numeric_limits<double>::infinity();
    bool passed() const { return violations == 0; }
};

inline EllipticityReport ellipticity_check(const EllipticOperator& f, int trials, std::uint64_t seed) {
    if (trials < 1) throw std::invalid_argument("ellipticity_check: trials must be >= 1");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> log_scale(std::log(1e-3), std::log(10.0));
    const double Lambda = f.ellipticity();
    EllipticityReport rep;
    rep.trials = trials;
    for (int t = 0; t < trials; ++t) {
        const SymMatrix M = detail::random_symmetric(f.dim(), rng);
        const double s = std::exp(log_scale(rng));
        const SymMatrix P = detail::random_unit_psd(f.dim(), rng) * s;
        const double f0 = op_eval(f, M);
        const double f1 = op_eval(f, M + P);
        const double slack = 1e-12 * (1.0 + std::abs(f0) + std::abs(f1)) / s;
        const double ratio = (f1 - f0) / s;
        const double lo = ratio - 1.0 / Lambda;
        const double hi = Lambda - ratio;
        rep.worst_lower_margin = std::min(rep.worst_lower_margin, lo);
        rep.worst_upper_margin = std::min(rep.worst_upper_margin, hi);
        if (lo < -slack || hi < -slack) ++rep.violations;
    }
    return rep;
}

struct ConvexityReport {
    int trials = 0;
    int violations = 0;
    /// min over trials of theta F(M) + (1-theta) F(N) - F(theta M + (1-theta) N)
    double worst_margin = std::numeric_limits<double>::infinity();
    bool passed() const { return violations == 0; }
};

inline ConvexityReport convexity_check(const EllipticOperator& f, int trials, std::uint64_t seed) {
    if (trials < 1) throw std::invalid_argument("convexity_check: trials must be >= 1");
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> theta_dist(0.0, 1.0);
    ConvexityReport rep;
    rep.trials = trials;
    for (int t = 0; t < trials; ++t) {
        const SymMatrix M = detail::random_symmetric(f.dim(), rng);
        const SymMatrix N = detail::random_symmetric(f.dim(), rng);
        double theta = theta_dist(rng);
        if (theta == 0.0) theta = 0.5;
        const double mid = op_eval(f, theta * M + (1.0 - theta) * N);
        const double chord = theta * op_eval(f, M) + (1.0 - theta) * op_eval(f, N);
        const double margin = chord - mid;
        rep.worst_margin = std::min(rep.worst_margin, margin);
        if (margin < -1e-12) ++rep.violations;
    }
    return rep;
}

struct DerivativeCheckReport {
    int samples = 0;
    int skipped_kinks = 0;
    double max_abs_error = 0.0;
    bool passed(double tol) const { return max_abs_error <= tol; }
};

/// True when F is only piecewise smooth (Pucci or a max-of-linear family
/// somewhere in its definition).
inline bool is_piecewise(const EllipticOperator& f) {
    return std::visit(
        [](const auto& k) -> bool {
            using K = std::decay_t<decltype(k)>;
            if constexpr (std::is_same_v<K, op::Pucci> || std::is_same_v<K, op::MaxLinear>) return true;
            else if constexpr (std::is_same_v<K, op::Shifted> || std::is_same_v<K, op::Congruence>)
                return is_piecewise(*k.base);
            else return false;
        },
        f.kind());
}

/// op_derivative against central finite differences at `samples` random
/// matrices. For piecewise operators, points where the derivative is not
/// locally constant within `kink_guard` (the stencil would straddle a kink)
/// are skipped and counted.
inline DerivativeCheckReport derivative_check(const EllipticOperator& f, int samples, std::uint64_t seed,
                                              double step = 1e-6, double kink_guard = 1e-4) {
    std::mt19937_64 rng(seed);
    DerivativeCheckReport rep;
    const bool piecewise = is_piecewise(f);
    for (int t = 0; t < samples; ++t) {
        const SymMatrix M = detail::random_symmetric(f.dim(), rng);
        SymMatrix exact;
        try {
            exact = op_derivative(f, M);
            if (piecewise) {
                for (double delta : {kink_guard, -kink_guard})
                    if ((op_derivative(f, M + SymMatrix::identity(f.dim(), delta)) - exact).max_abs() > 1e-12)
                        throw KinkError("near kink", {});
            }
        } catch (const KinkError&) {
            ++rep.skipped_kinks;
            continue;
        }
        ++rep.samples;
        rep.max_abs_error = std::max(rep.max_abs_error, (exact - fd_derivative(f, M, step)).max_abs());
    }
    return rep;
}

struct ModulusSample {
    double radius = 0.0;
    double measured = 0.0;  // sup |DF(A+P) - DF(A)| over sampled |P| <= radius
    int kinks = 0;
};

/// Sampled modulus of continuity of DF at a matrix, with its nondecreasing
/// envelope.
struct ModulusEstimate {
    SymMatrix center;
    std::vector<ModulusSample> samples;  // radii ascending
    std::vector<double> envelope;        // running maximum of `measured`

    /// Step-function envelope evaluated at t: the envelope at the smallest
    /// sampled radius >= t (the largest sample if t exceeds every radius).
    double operator()(double t) const {
        if (t <= 0.0 || samples.empty()) return 0.0;
        for (std::size_t i = 0; i < samples.size(); ++i)
            if (samples[i].radius >= t) return envelope[i];
        return envelope.back();
    }
};

inline ModulusEstimate modulus_estimate(const EllipticOperator& f, const SymMatrix& A, std::vector<double> radii,
                                        int directions = 64, std::uint64_t seed = 42) {
    if (radii.empty()) throw std::invalid_argument("modulus_estimate: no radii");
    std::sort(radii.begin(), radii.end());
    const SymMatrix D0 = op_derivative(f, A);
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    ModulusEstimate est;
    est.center = A;
    double running = 0.0;
    for (double t : radii) {
        if (!(t > 0.0)) throw std::invalid_argument("modulus_estimate: radii must be positive");
        ModulusSample s;
        s.radius = t;
        for (int k = 0; k < directions; ++k) {
            SymMatrix P = detail::random_symmetric(f.dim(), rng);
            const double scale = (k == 0 ? 1.0 : u01(rng)) * t / spectral_norm(P);
            P *= scale;
            double val = 0.0;
            try {
                val = spectral_norm(op_derivative(f, A + P) - D0);
            } catch (const KinkError& kink) {
                ++s.kinks;
                val = kink.diameter();
            }
            s.measured = std::max(s.measured, val);
        }
        running = std::max(running, s.measured);
        est.samples.push_back(s);
        est.envelope.push_back(running);
    }
    return est;
}

/// Log-spaced radii between lo and hi (inclusive).
inline std::vector<double> log_radii(double lo, double hi, int count) {
    std::vector<double> r;
    for (int i = 0; i < count; ++i)
        r.push_back(lo * std::pow(hi / lo, count == 1 ? 0.0 : static_cast<double>(i) / (count - 1)));
    return r;
}

}  // namespace nlobs
