#pragma once

#include <boost/math/tools/roots.hpp>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <limits>
#include <mutex>
#include <random>
#include <thread>
#include <vector>

#include "nlobs/global.hpp"

namespace nlobs {

// ---------------------------------------------------------------------------
// Radial oracle for the Laplacian.

/// u(r) = r^2/(2d) + c1 r^{2-d} + c2 for r >= rho, 0 inside, with
/// c1 = rho^d / (d(d-2)) and c2 = -rho^2 / (2(d-2)). This is the radial
/// solution of Delta u = 1 with u(rho) = u'(rho) = 0.
struct RadialOracle {
    int dim = 3;
    double rho = 1.0;

    RadialOracle() = default;
    RadialOracle(int d, double contact_radius) : dim(d), rho(contact_radius) {
        if (d < 3) throw DimensionError("RadialOracle: requires d >= 3");
        if (!(contact_radius > 0.0)) throw std::invalid_argument("RadialOracle: contact radius must be positive");
    }

    /// Global solution for the profile |x|^2/(2d) + a, a < 0.
    static RadialOracle global(int d, double a) {
        if (!(a < 0.0)) throw std::invalid_argument("RadialOracle::global: requires a < 0");
        return {d, std::sqrt(-2.0 * (d - 2) * a)};
    }

    /// Solution of the obstacle problem on B_R with u = |x|^2/(2d) + a on the
    /// sphere |x| = R; requires -R^2/(2d) < a < 0.
    static RadialOracle ball(int d, double R, double a) {
        if (!(a < 0.0) || !(a > -R * R / (2.0 * d)))
            throw std::invalid_argument("RadialOracle::ball: boundary value out of range");
        auto g = [&](double rho) { return RadialOracle(d, rho).tail_value(R) - a; };
        std::uintmax_t iters = 200;
        const auto [lo, hi] = boost::math::tools::toms748_solve(g, R * 1e-12, R * (1.0 - 1e-12),
                                                                boost::math::tools::eps_tolerance<double>(52), iters);
        return {d, 0.5 * (lo + hi)};
    }

    double c1() const { return std::pow(rho, dim) / (dim * (dim - 2.0)); }
    double c2() const { return -rho * rho / (2.0 * (dim - 2.0)); }
    /// c1 r^{2-d} + c2, the offset from r^2/(2d) outside the contact ball
    double tail_value(double r) const { return c1() * std::pow(r, 2.0 - dim) + c2(); }

    struct Value {
        double u = 0.0;
        double du = 0.0;
        double d2u = 0.0;
    };

    Value operator()(double r) const {
        if (r < 0.0) throw std::invalid_argument("RadialOracle: negative radius");
        if (r <= rho) return {};
        const double d = dim;
        return {r * r / (2.0 * d) + c1() * std::pow(r, 2.0 - d) + c2(),
                r / d + (2.0 - d) * c1() * std::pow(r, 1.0 - d),
                1.0 / d + (2.0 - d) * (1.0 - d) * c1() * std::pow(r, -d)};
    }

    double at(const Vec& x) const { return (*this)(x.norm()).u; }
};

inline RadialOracle::Value radial_oracle_eval(const RadialOracle& o, double r) { return o(r); }

/// RK4 integration of u'' + ((d-1)/r) u' = 1 from u(rho) = u'(rho) = 0 to r,
/// independent of the closed form.
inline RadialOracle::Value integrate_radial_ode(int d, double rho, double r, int steps = 20000) {
    if (r <= rho) return {};
    const double step = (r - rho) / steps;
    double s = rho, u = 0.0, v = 0.0;
    auto acc = [d](double s_, double v_) { return 1.0 - (d - 1.0) / s_ * v_; };
    for (int k = 0; k < steps; ++k) {
        const double k1u = v, k1v = acc(s, v);
        const double k2u = v + 0.5 * step * k1v, k2v = acc(s + 0.5 * step, v + 0.5 * step * k1v);
        const double k3u = v + 0.5 * step * k2v, k3v = acc(s + 0.5 * step, v + 0.5 * step * k2v);
        const double k4u = v + step * k3v, k4v = acc(s + step, v + step * k3v);
        u += step / 6.0 * (k1u + 2 * k2u + 2 * k3u + k4u);
        v += step / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v);
        s += step;
    }
    return {u, v, acc(r, v)};
}

/// Mean radius of the boundary-layer nodes: where a grid actually pins the
/// Dirichlet data.
inline double effective_radius(const Grid& g) {
    double sum = 0.0;
    for (std::size_t idx : g.boundary_layer()) sum += g.coords(idx).norm();
    return sum / static_cast<double>(g.boundary_layer().size());
}

// ---------------------------------------------------------------------------
// Barrier Psi_r(x) = r^{1/2} |x|^{-1/2}.

struct BarrierSpec {
    double r_bar = 1.0;
    int dim = 3;

    BarrierSpec() = default;
    BarrierSpec(double r, int d) : r_bar(r), dim(d) {
        if (!(r >= 1.0)) throw std::invalid_argument("BarrierSpec: r_bar must be >= 1");
    }
};

struct BarrierValue {
    double value = 0.0;
    SymMatrix hessian;
};

inline BarrierValue barrier_eval(const BarrierSpec& b, const Vec& x) {
    if (x.size() != b.dim) throw DimensionError("barrier_eval: point dimension differs from barrier");
    const double n = x.norm();
    if (n < 1e-12) throw SingularityError("barrier_eval: |x| below 1e-12");
    const double root = std::sqrt(b.r_bar);
    const Mat xx = x * x.transpose() / (n * n);
    const Mat hess = 0.5 * root * std::pow(n, -2.5) * (2.5 * xx - Mat::Identity(b.dim, b.dim));
    return {root / std::sqrt(n), SymMatrix(hess)};
}

/// Shifted operator in normalized variables: G(N) = F~(N + A~) - F~(A~),
/// with F~ = F seen through S = DF(A)^{-1/2}, so that DG(0) = I.
struct BarrierOperator {
    EllipticOperator G = EllipticOperator::trace(3);
    SymMatrix S;  // y = S (x - center)
};

inline BarrierOperator make_barrier_operator(const EllipticOperator& f, const SymMatrix& A) {
    const NormalizedOperator n = op_normalize(f, A);
    return {EllipticOperator::shifted(n.op, n.A_tilde), n.change_of_variables};
}

struct SupersolutionReport {
    int samples = 0;
    int violations = 0;
    double worst = -std::numeric_limits<double>::infinity();
    Vec worst_point;
    /// (5/2) * omega((5/4) r^{-2}) and whether it is < 1/2
    double condition_value = 0.0;
    bool condition_holds = false;
    bool passed(double tol = 1e-10) const { return worst <= tol; }
};

inline SupersolutionReport barrier_supersolution_check(const BarrierSpec& b, const EllipticOperator& g, int samples,
                                                       std::uint64_t seed,
                                                       const ModulusEstimate* modulus = nullptr,
                                                       double tol = 1e-10) {
    if (g.dim() != b.dim) throw DimensionError("barrier_supersolution_check: dimensions differ");
    if (!std::holds_alternative<op::Shifted>(g.kind()))
        throw std::invalid_argument("barrier_supersolution_check: operator must be of shifted kind");
    const SymMatrix D = op_subgradient(g, SymMatrix(b.dim));
    if ((D - SymMatrix::identity(b.dim)).max_abs() > 1e-6)
        throw std::invalid_argument("barrier_supersolution_check: operator is not normalized (DG(0) != I)");
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n01(0.0, 1.0);
    std::uniform_real_distribution<double> radius(b.r_bar, 10.0 * b.r_bar);
    SupersolutionReport rep;
    rep.samples = samples;
    for (int k = 0; k < samples; ++k) {
        Vec x(b.dim);
        for (int i = 0; i < b.dim; ++i) x(i) = n01(rng);
        x *= radius(rng) / x.norm();
        const double val = op_eval(g, barrier_eval(b, x).hessian);
        if (val > rep.worst) {
            rep.worst = val;
            rep.worst_point = x;
        }
        if (val > tol) ++rep.violations;
    }
    if (modulus) {
        rep.condition_value = 2.5 * (*modulus)(1.25 / (b.r_bar * b.r_bar));
        rep.condition_holds = rep.condition_value < 0.5;
    }
    return rep;
}

/// Smallest power of two r >= 1 with r > radius_needed and
/// (5/2) omega((5/4) r^{-2}) < 1/2.
inline double choose_barrier_radius(double radius_needed, const ModulusEstimate& omega, int max_doublings = 40) {
    double r = 1.0;
    for (int k = 0; k <= max_doublings; ++k, r *= 2.0)
        if (r > radius_needed && 2.5 * omega(1.25 / (r * r)) < 0.5) return r;
    throw std::runtime_error("choose_barrier_radius: no admissible radius");
}

/// Barrier data for a constructed solution, in the normalized frame
/// y = S (x - center) and after rescaling to a = -alpha with alpha >= 1.
struct TailBarrier {
    BarrierOperator op;
    BarrierSpec spec;
    double alpha = 1.0;  // the bound is alpha * Psi_{r sqrt(alpha)}(y)
    ModulusEstimate omega;

    double bound(const Vec& x, const Vec& center) const {
        const Vec y = op.S.matrix() * (x - center);
        const BarrierSpec scaled{spec.r_bar * std::sqrt(alpha), spec.dim};
        return alpha * barrier_eval(scaled, y).value;
    }
    double inner_radius() const { return spec.r_bar * std::sqrt(alpha); }
};

inline TailBarrier tail_barrier(const QuadraticPoly& Q, const EllipticOperator& f, std::uint64_t seed = 42) {
    TailBarrier t;
    t.op = make_barrier_operator(f, Q.hessian());
    t.alpha = std::max(1.0, -Q.constant());
    t.omega = modulus_estimate(t.op.G, SymMatrix(Q.dim()), log_radii(1e-6, 10.0, 36), 64, seed);
    // {Q <= 0} in the normalized, rescaled frame
    const SymMatrix At = congruence(inverse_pd(t.op.S), Q.hessian());
    const double needed =
        Q.constant() < 0.0 ? std::sqrt(-2.0 * Q.constant() / min_eigenvalue(At)) / std::sqrt(t.alpha) : 0.0;
    t.spec = BarrierSpec(choose_barrier_radius(needed, t.omega), Q.dim());
    return t;
}

struct TailBoundReport {
    std::size_t nodes = 0;
    std::size_t violations = 0;
    /// min over checked nodes of bound + tol - (u - Q)
    double worst_margin = std::numeric_limits<double>::infinity();
    double tolerance = 0.0;
    double r_bar = 0.0;
    bool passed() const { return violations == 0 && nodes > 0; }
};

/// u - Q <= alpha Psi + tol at every active node outside the barrier ball.
inline TailBoundReport tail_bound_check(const ScalarField& u, const QuadraticPoly& Q, const TailBarrier& t,
                                        double tol) {
    const Grid& g = *u.grid;
    TailBoundReport rep;
    rep.tolerance = tol;
    rep.r_bar = t.spec.r_bar;
    auto visit = [&](std::size_t idx) {
        const Vec x = g.coords(idx);
        const Vec y = t.op.S.matrix() * (x - Q.center());
        if (y.norm() <= t.inner_radius()) return;
        ++rep.nodes;
        const double margin = t.bound(x, Q.center()) + tol - (u[idx] - Q(x));
        rep.worst_margin = std::min(rep.worst_margin, margin);
        if (margin < 0.0) ++rep.violations;
    };
    for (std::size_t idx : g.interior()) visit(idx);
    for (std::size_t idx : g.boundary_layer()) visit(idx);
    return rep;
}

inline TailBoundReport tail_bound_check(const GlobalSolution& gs, const TailBarrier& t, double C = 0.1) {
    return tail_bound_check(gs.field, gs.Q, t, 1e-8 + C * gs.h * gs.h);
}

// ---------------------------------------------------------------------------
// Comparison fuzzing.

/// Worker count from NLOBS_THREADS, else the hardware concurrency.
inline unsigned thread_count() {
    if (const char* env = std::getenv("NLOBS_THREADS")) {
        const long n = std::strtol(env, nullptr, 10);
        if (n >= 1) return static_cast<unsigned>(n);
    }
    return std::max(1u, std::thread::hardware_concurrency());
}

struct ComparisonReport {
    int trials = 0;
    int skipped = 0;
    int violations = 0;
    /// min over trials and nodes of solution_2 - solution_1
    double worst_margin = std::numeric_limits<double>::infinity();
    double tolerance = 1e-8;
    bool passed() const { return violations == 0 && skipped < trials; }
};

/// Random boundary pair with b2 >= b1 nodewise: a random quadratic plus
/// bounded noise, and the same plus a positive random field.
inline std::pair<ScalarField, ScalarField> random_ordered_boundaries(const std::shared_ptr<const Grid>& g,
                                                                     std::uint64_t seed) {
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::normal_distribution<double> n01(0.0, 1.0);
    const int d = g->dim();
    const SymMatrix A = detail::random_unit_psd(d, rng) * (2.0 * u01(rng)) + SymMatrix::identity(d, 0.1 * u01(rng));
    Vec c(d);
    for (int i = 0; i < d; ++i) c(i) = 0.5 * n01(rng);
    const QuadraticPoly q = QuadraticPoly::centered(A, c, -u01(rng) + 0.3);
    const double noise = 0.1 * u01(rng);
    const double lift = 0.5 * u01(rng);
    ScalarField b1 = sample_poly(g, q);
    ScalarField b2 = b1;
    for (std::size_t idx = 0; idx < g->size(); ++idx) {
        b1.values[idx] += noise * (2.0 * u01(rng) - 1.0);
        b2.values[idx] = b1.values[idx] + lift * u01(rng);
    }
    return {std::move(b1), std::move(b2)};
}

inline ComparisonReport comparison_fuzz(const EllipticOperator& f, const std::shared_ptr<const Grid>& g, int trials,
                                        std::uint64_t seed, const SolverOptions& opt = {}, double tol = 1e-8) {
    if (trials < 1) throw std::invalid_argument("comparison_fuzz: trials must be >= 1");
    ComparisonReport rep;
    rep.trials = trials;
    rep.tolerance = tol;
    std::mutex mu;
    std::atomic<int> next{0};
    auto work = [&] {
        for (int t = next++; t < trials; t = next++) {
            auto [b1, b2] = random_ordered_boundaries(g, seed + 0x9e3779b97f4a7c15ULL * static_cast<std::uint64_t>(t + 1));
            double margin = std::numeric_limits<double>::infinity();
            bool ok = true;
            try {
                const SolveResult r1 = solve_obstacle({g, f, std::move(b1), std::nullopt}, opt);
                const SolveResult r2 = solve_obstacle({g, f, std::move(b2), std::nullopt}, opt);
                for (std::size_t idx = 0; idx < g->size(); ++idx)
                    if (g->is_active(idx)) margin = std::min(margin, r2.solution[idx] - r1.solution[idx]);
            } catch (const NonConvergenceError&) {
                ok = false;
            }
            std::lock_guard lock(mu);
            if (!ok) {
                ++rep.skipped;
                continue;
            }
            rep.worst_margin = std::min(rep.worst_margin, margin);
            if (margin < -tol) ++rep.violations;
        }
    };
    const unsigned n = std::min<unsigned>(thread_count(), static_cast<unsigned>(trials));
    std::vector<std::thread> pool;
    for (unsigned k = 1; k < n; ++k) pool.emplace_back(work);
    work();
    for (auto& th : pool) th.join();
    return rep;
}

}  // namespace nlobs
