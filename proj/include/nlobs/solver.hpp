#pragma once

#include <Eigen/IterativeLinearSolvers>
#include <Eigen/Sparse>
#include <Eigen/SparseLU>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "nlobs/grid.hpp"
#include "nlobs/operators.hpp"

namespace nlobs {

struct SolverOptions {
    double residual_tol = 1e-10;
    int max_iter = 100;
    /// Values u <= contact_tol count as contact; default max(1e-10, 1e-2 h^2).
    std::optional<double> contact_tol;
    int max_halvings = 20;
    /// Systems up to this many unknowns are factorized directly.
    std::size_t direct_limit = 4000;
    double linear_tol = 1e-12;
    int linear_max_iter = 20000;
};

inline double default_contact_tol(double h) { return std::max(1e-10, 1e-2 * h * h); }

/// The finite-ball problem: find u >= 0 with F_h(D^2_h u) <= 1 on the
/// interior, equality where u > 0, and u = boundary on the boundary layer.
struct ObstacleInstance {
    std::shared_ptr<const Grid> grid;
    EllipticOperator op;
    ScalarField boundary;  // read on the boundary layer only
    /// Interior starting values; default max(boundary, 0) nodewise, which is
    /// max(Q, 0) when the boundary field was sampled from a polynomial Q.
    std::optional<ScalarField> initial;
};

struct SolveResult {
    ScalarField solution;
    /// 1 at interior nodes with u <= contact_tol.
    std::vector<std::uint8_t> contact_mask;
    std::size_t contact_count = 0;
    double contact_tol = 0.0;
    /// max over interior nodes of |min(u, 1 - F_h[u])|
    double residual = 0.0;
    int iterations = 0;
    /// nodes whose phase changed in the final Newton iteration
    std::size_t phase_flips = 0;
    std::vector<double> residual_history;
    std::vector<std::string> warnings;
    std::size_t unknowns = 0;
};

namespace detail {

struct NodeState {
    std::vector<double> F;        // F_h[u] per interior node
    std::vector<SymMatrix> DF;    // generalized derivative per interior node
    std::vector<double> kkt;      // min(u, 1 - F)
    double max_abs = 0.0;
    double l2 = 0.0;
};

inline void evaluate_state(const EllipticOperator& f, const Grid& g, std::span<const double> u, NodeState& st,
                           bool with_derivative) {
    const auto interior = g.interior();
    st.F.resize(interior.size());
    st.kkt.resize(interior.size());
    if (with_derivative) st.DF.resize(interior.size());
    st.max_abs = 0.0;
    double sq = 0.0;
    for (std::size_t n = 0; n < interior.size(); ++n) {
        const SymMatrix H = hessian_unchecked(g, u, interior[n]);
        st.F[n] = op_eval(f, H);
        if (with_derivative) st.DF[n] = op_subgradient(f, H);
        const double r = std::min(u[interior[n]], 1.0 - st.F[n]);
        st.kkt[n] = r;
        st.max_abs = std::max(st.max_abs, std::abs(r));
        sq += r * r;
    }
    st.l2 = std::sqrt(sq);
}

/// Per-neighbour coefficients of the linearized operator B : D^2_h(.) at a
/// node, in the order of Grid::stencil(), plus the centre coefficient.
inline void stencil_weights(const SymMatrix& B, double h, std::vector<double>& w, double& centre) {
    const int d = B.dim();
    const double inv_h2 = 1.0 / (h * h);
    w.clear();
    centre = 0.0;
    for (int i = 0; i < d; ++i) {
        w.push_back(B(i, i) * inv_h2);
        w.push_back(B(i, i) * inv_h2);
        centre -= 2.0 * B(i, i) * inv_h2;
    }
    for (int i = 0; i < d; ++i)
        for (int j = i + 1; j < d; ++j)
            for (int si : {1, -1})
                for (int sj : {1, -1}) w.push_back(si * sj * 0.5 * B(i, j) * inv_h2);
}

inline bool solve_sparse(const Eigen::SparseMatrix<double, Eigen::RowMajor>& A, const Eigen::VectorXd& b,
                         Eigen::VectorXd& x, const SolverOptions& opt, bool symmetric, std::string& note) {
    if (static_cast<std::size_t>(A.rows()) <= opt.direct_limit) {
        Eigen::SparseMatrix<double> Ac(A);
        Eigen::SparseLU<Eigen::SparseMatrix<double>, Eigen::COLAMDOrdering<int>> lu;
        lu.compute(Ac);
        if (lu.info() != Eigen::Success) {
            note = "sparse LU factorization failed";
            return false;
        }
        x = lu.solve(b);
        return lu.info() == Eigen::Success;
    }
    if (symmetric) {
        Eigen::ConjugateGradient<Eigen::SparseMatrix<double, Eigen::RowMajor>, Eigen::Lower | Eigen::Upper,
                                 Eigen::IncompleteCholesky<double, Eigen::Lower | Eigen::Upper,
                                                           Eigen::NaturalOrdering<int>>>
            cg;
        cg.setTolerance(opt.linear_tol);
        cg.setMaxIterations(opt.linear_max_iter);
        cg.compute(A);
        x = cg.solveWithGuess(b, x);
        if (cg.info() == Eigen::Success) return true;
        note = "conjugate gradients stopped at relative residual " + std::to_string(cg.error());
    }
    Eigen::BiCGSTAB<Eigen::SparseMatrix<double, Eigen::RowMajor>, Eigen::IncompleteLUT<double>> bicg;
    bicg.preconditioner().setDroptol(1e-6);
    bicg.preconditioner().setFillfactor(4);
    bicg.setTolerance(opt.linear_tol);
    bicg.setMaxIterations(opt.linear_max_iter);
    bicg.compute(A);
    x = bicg.solveWithGuess(b, x);
    if (bicg.info() == Eigen::Success) return true;
    note = "BiCGSTAB stopped at relative residual " + std::to_string(bicg.error());
    return bicg.error() < 1e-8;
}

}  // namespace detail

/// min(u_i, 1 - F_h[u]_i) at every interior node, in Grid::interior() order.
inline std::vector<double> kkt_residual(const EllipticOperator& f, const ScalarField& field) {
    if (f.dim() != field.grid->dim()) throw DimensionError("kkt_residual: operator and grid dimensions differ");
    detail::NodeState st;
    detail::evaluate_state(f, *field.grid, field.values, st, false);
    return st.kkt;
}

/// Semismooth Newton / policy iteration for min(u, 1 - F_h(D^2_h u)) = 0.
///
/// Each iteration assigns every interior node a phase, contact (u_i <= 1 - F_i)
/// or equation, then takes the Newton step that sets contact nodes to zero and
/// linearizes F at the current Hessian on equation nodes. For a max-of-linear
/// family this is Howard's algorithm. Steps are halved until the l2 norm of
/// the KKT residual decreases.
inline SolveResult solve_obstacle(const ObstacleInstance& inst, const SolverOptions& opt = {}) {
    if (!inst.grid) throw std::invalid_argument("solve_obstacle: instance has no grid");
    const Grid& g = *inst.grid;
    if (inst.op.dim() != g.dim()) throw DimensionError("solve_obstacle: operator and grid dimensions differ");
    if (inst.boundary.grid.get() != inst.grid.get() && inst.boundary.values.size() != g.size())
        throw DimensionError("solve_obstacle: boundary field lives on another grid");
    if (!(opt.residual_tol > 0.0)) throw std::invalid_argument("solve_obstacle: residual_tol must be positive");

    const double ctol = opt.contact_tol.value_or(default_contact_tol(g.h()));
    const auto interior = g.interior();

    SolveResult res;
    res.contact_tol = ctol;
    res.unknowns = interior.size();

    std::vector<double> u(g.size(), 0.0);
    double min_boundary = std::numeric_limits<double>::infinity();
    for (std::size_t idx : g.boundary_layer()) {
        u[idx] = inst.boundary.values[idx];
        min_boundary = std::min(min_boundary, u[idx]);
    }
    for (std::size_t idx : interior)
        u[idx] = inst.initial ? inst.initial->values[idx] : std::max(inst.boundary.values[idx], 0.0);

    std::vector<std::uint8_t> phase(interior.size(), 0), prev_phase(interior.size(), 2);
    std::vector<std::int64_t> unknown(g.size(), -1);
    std::vector<double> weights;
    std::vector<double> trial(u.size());
    detail::NodeState st, st_trial;
    int infeasible_streak = 0;
    bool infeasible_warned = false;
    const auto stencil = g.stencil();

    detail::evaluate_state(inst.op, g, u, st, true);
    for (int it = 0;; ++it) {
        res.residual_history.push_back(st.max_abs);
        if (st.max_abs <= opt.residual_tol) {
            res.iterations = it;
            break;
        }
        if (it >= opt.max_iter)
            throw NonConvergenceError("solve_obstacle: no convergence after " + std::to_string(opt.max_iter) +
                                          " iterations (residual " + std::to_string(st.max_abs) + ")",
                                      res.residual_history);

        // Phase assignment.
        std::size_t flips = 0;
        std::int64_t count = 0;
        for (std::size_t n = 0; n < interior.size(); ++n) {
            const double ui = u[interior[n]];
            const double slack = 1.0 - st.F[n];
            const bool contact = ui <= slack;
            phase[n] = contact ? 1 : 0;
            if (phase[n] != prev_phase[n]) ++flips;
            unknown[interior[n]] = contact ? -1 : count++;
        }
        res.phase_flips = flips;

        // Newton system on equation-phase nodes; known increments elsewhere.
        std::vector<double> delta(g.size(), 0.0);
        for (std::size_t n = 0; n < interior.size(); ++n)
            if (phase[n]) delta[interior[n]] = -u[interior[n]];

        std::vector<Eigen::Triplet<double>> triplets;
        triplets.reserve(static_cast<std::size_t>(count) * 7);
        Eigen::VectorXd rhs(count);
        bool symmetric = true;
        const SymMatrix* first_B = nullptr;
        for (std::size_t n = 0; n < interior.size(); ++n) {
            if (phase[n]) continue;
            const std::size_t idx = interior[n];
            const std::int64_t row = unknown[idx];
            double centre = 0.0;
            detail::stencil_weights(st.DF[n], g.h(), weights, centre);
            if (!first_B) first_B = &st.DF[n];
            else if (symmetric && !(st.DF[n] == *first_B)) symmetric = false;
            double b = 1.0 - st.F[n];
            triplets.emplace_back(row, row, -centre);
            for (std::size_t s = 0; s < stencil.size(); ++s) {
                const double w = weights[s];
                if (w == 0.0) continue;
                const auto j = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(idx) + stencil[s]);
                const std::int64_t col = g.is_interior(j) ? unknown[j] : -1;
                if (col >= 0) triplets.emplace_back(row, col, -w);
                else b -= w * delta[j];
            }
            rhs(row) = -b;
        }
        if (count > 0) {
            Eigen::SparseMatrix<double, Eigen::RowMajor> A(count, count);
            A.setFromTriplets(triplets.begin(), triplets.end());
            // Constant coefficients give a symmetric system only without
            // mixed-derivative terms pointing at eliminated nodes; check directly.
            if (symmetric) {
                Eigen::SparseMatrix<double, Eigen::RowMajor> At = A.transpose();
                symmetric = (A - At).norm() == 0.0;
            }
            Eigen::VectorXd x = Eigen::VectorXd::Zero(count);
            std::string note;
            if (!detail::solve_sparse(A, rhs, x, opt, symmetric, note))
                throw NonConvergenceError("solve_obstacle: linear solve failed: " + note, res.residual_history);
            if (!note.empty()) res.warnings.push_back(note);
            for (std::size_t n = 0; n < interior.size(); ++n)
                if (!phase[n]) delta[interior[n]] = x(unknown[interior[n]]);
        }

        // Damped update: halve until the l2 merit decreases.
        double t = 1.0;
        bool accepted = false;
        for (int k = 0; k <= opt.max_halvings; ++k, t *= 0.5) {
            trial = u;
            for (std::size_t idx : interior) trial[idx] = u[idx] + t * delta[idx];
            detail::evaluate_state(inst.op, g, trial, st_trial, true);
            if (st_trial.l2 < st.l2 || st_trial.max_abs <= opt.residual_tol) {
                accepted = true;
                break;
            }
        }
        if (!accepted)
            throw NonConvergenceError("solve_obstacle: line search failed after " + std::to_string(opt.max_halvings) +
                                          " halvings",
                                      res.residual_history);
        u.swap(trial);
        std::swap(st, st_trial);
        prev_phase = phase;

        double umin = std::numeric_limits<double>::infinity();
        for (std::size_t idx : interior) umin = std::min(umin, u[idx]);
        if (min_boundary < 0.0 && umin < -0.1 * std::abs(min_boundary)) ++infeasible_streak;
        else infeasible_streak = 0;
        if (infeasible_streak >= 3 && !infeasible_warned) {
            res.warnings.push_back("iterates persistently below -0.1 |min boundary|: R may be too small for {Q <= 0}");
            infeasible_warned = true;
        }
    }

    res.residual = st.max_abs;
    res.solution = ScalarField(inst.grid, std::move(u));
    res.contact_mask.assign(g.size(), 0);
    for (std::size_t idx : interior)
        if (res.solution.values[idx] <= ctol) {
            res.contact_mask[idx] = 1;
            ++res.contact_count;
        }
    return res;
}

}  // namespace nlobs
