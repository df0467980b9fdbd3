#pragma once

#include <Eigen/QR>

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "nlobs/grid.hpp"
#include "nlobs/membership.hpp"
#include "nlobs/solver.hpp"

namespace nlobs {

/// Â cannot absorb the linear part: an eigenvalue of Â vanishes.
class DegenerateProfileError : public Error {
public:
    DegenerateProfileError(const std::string& what, Vec direction, double eigenvalue)
        : Error(what), direction_(std::move(direction)), eigenvalue_(eigenvalue) {}
    const Vec& direction() const noexcept { return direction_; }
    double eigenvalue() const noexcept { return eigenvalue_; }

private:
    Vec direction_;
    double eigenvalue_;
};

struct FitOptions {
    /// Include the fundamental-solution term (x . D^{-1} x)^{(2-d)/2} in the
    /// least-squares basis, D = DF(A) (identity without an operator).
    bool tail_term = true;
    /// Values u <= contact_tol count as contact when no mask is supplied.
    std::optional<double> contact_tol;
    /// Shell width for the residual profile; default h/2, halved (down to
    /// h/8) until the window holds at least 5 shells.
    std::optional<double> shell_width;
    /// Residuals below this are excluded from the decay fit.
    double noise_floor = 1e-9;
    double membership_tol = 1e-3;
    /// Fit window; defaults [2 * contact circumradius, R/2].
    std::optional<double> r_min;
    std::optional<double> r_max;
    /// Blow-down scale; default R/2 (annulus [R/4, R/2]).
    std::optional<double> scale;
};

struct BlowDownFit {
    double scale = 0.0;
    bool accepted = false;
    std::string reason;
    QuadraticPoly p;  // 1/2 x . Â x
    std::size_t nodes = 0;
};

struct ResidualShell {
    double r = 0.0;  // mean node radius in the shell
    double max = 0.0;
    double mean = 0.0;
    std::size_t count = 0;
};

struct DecayFit {
    double slope = 0.0;
    double r_squared = 0.0;
    int used = 0;
    int below_floor = 0;
};

struct AsymptoticFit {
    QuadraticPoly Q_hat;
    /// raw expansion 1/2 x . Â x + b.x + c before absorbing b into the center
    Vec b_hat;
    double c_hat = 0.0;
    double tail_coefficient = 0.0;
    std::vector<ResidualShell> residual_profile;
    std::optional<DecayFit> decay;
    /// residual below the noise floor everywhere in the window
    bool exact = false;
    double r_min = 0.0;
    double r_max = 0.0;
    double contact_circumradius = 0.0;
    Vec center_estimate;
    std::vector<BlowDownFit> blow_downs;
    MembershipVerdict verdict;
    std::vector<std::string> warnings;
};

namespace detail {

/// Columns of the least-squares design in the variable y = x / s:
/// d(d+1)/2 quadratic monomials, d linear, 1 constant, optional tail.
struct Design {
    int d = 3;
    bool tail = false;
    int cols() const { return d * (d + 1) / 2 + d + 1 + (tail ? 1 : 0); }
};

inline void design_row(const Design& des, const Vec& y, double tail_value, Eigen::MatrixXd& M, Eigen::Index r) {
    auto row = M.row(r);
    int k = 0;
    for (int i = 0; i < des.d; ++i)
        for (int j = i; j < des.d; ++j) row(k++) = (i == j ? 0.5 : 1.0) * y(i) * y(j);
    for (int i = 0; i < des.d; ++i) row(k++) = y(i);
    row(k++) = 1.0;
    if (des.tail) row(k) = tail_value;
}

inline SymMatrix design_hessian(const Design& des, const Eigen::VectorXd& coef) {
    Mat A(des.d, des.d);
    int k = 0;
    for (int i = 0; i < des.d; ++i)
        for (int j = i; j < des.d; ++j) {
            A(i, j) = coef(k);
            A(j, i) = coef(k);
            ++k;
        }
    return SymMatrix(A);
}

struct TailShape {
    Mat Dinv;
    Vec center;
    double eval(const Vec& x, int d) const {
        const Vec z = x - center;
        const double q = z.dot(Dinv * z);
        return std::pow(std::max(q, 1e-300), 0.5 * (2.0 - d));
    }
};

struct QuadraticFit {
    SymMatrix A;
    Vec b;
    double c = 0.0;
    double tail = 0.0;
    std::size_t nodes = 0;
};

/// Least squares u(x) ~ 1/2 x.Ax + b.x + c (+ k tail(x)) over active nodes
/// with r_lo <= |x| <= r_hi, in the scaled variable y = x / s.
inline QuadraticFit fit_quadratic(const ScalarField& u, double r_lo, double r_hi, double s,
                                  const std::optional<TailShape>& tail) {
    const Grid& g = *u.grid;
    const Design des{g.dim(), tail.has_value()};
    std::vector<std::size_t> nodes;
    for (std::size_t idx = 0; idx < g.size(); ++idx) {
        if (!g.is_active(idx)) continue;
        const double r = g.coords(idx).norm();
        if (r >= r_lo && r <= r_hi) nodes.push_back(idx);
    }
    if (nodes.size() < static_cast<std::size_t>(3 * des.cols()))
        throw InsufficientDataError("fit_quadratic: only " + std::to_string(nodes.size()) + " nodes in [" +
                                    std::to_string(r_lo) + ", " + std::to_string(r_hi) + "]");
    Eigen::MatrixXd M(static_cast<Eigen::Index>(nodes.size()), des.cols());
    Eigen::VectorXd rhs(static_cast<Eigen::Index>(nodes.size()));
    const double tail_scale = tail ? std::pow(s, 2.0 - g.dim()) : 1.0;
    for (std::size_t n = 0; n < nodes.size(); ++n) {
        const Vec x = g.coords(nodes[n]);
        const double tv = tail ? tail->eval(x, g.dim()) / tail_scale : 0.0;
        design_row(des, Vec(x / s), tv, M, static_cast<Eigen::Index>(n));
        rhs(static_cast<Eigen::Index>(n)) = u[nodes[n]] / (s * s);
    }
    const Eigen::VectorXd coef = M.colPivHouseholderQr().solve(rhs);
    QuadraticFit fit;
    fit.A = design_hessian(des, coef);
    const int nq = g.dim() * (g.dim() + 1) / 2;
    fit.b = Vec(coef.segment(nq, g.dim()) * s);
    fit.c = coef(nq + g.dim()) * s * s;
    if (tail) fit.tail = coef(des.cols() - 1) * s * s / tail_scale;
    fit.nodes = nodes.size();
    return fit;
}

inline std::vector<std::uint8_t> contact_from_values(const ScalarField& u, double ctol) {
    std::vector<std::uint8_t> mask(u.values.size(), 0);
    for (std::size_t idx : u.grid->interior())
        if (u[idx] <= ctol) mask[idx] = 1;
    return mask;
}

inline double contact_circumradius(const Grid& g, const std::vector<std::uint8_t>& mask, const Vec& center) {
    double r = 0.0;
    for (std::size_t idx : g.interior())
        if (mask[idx]) r = std::max(r, (g.coords(idx) - center).norm());
    return r;
}

inline Vec contact_centroid(const Grid& g, const std::vector<std::uint8_t>& mask) {
    Vec c = Vec::Zero(g.dim());
    std::size_t n = 0;
    for (std::size_t idx : g.interior())
        if (mask[idx]) {
            c += g.coords(idx);
            ++n;
        }
    return n ? Vec(c / static_cast<double>(n)) : c;
}

inline TailShape tail_shape(const std::optional<EllipticOperator>& f, const SymMatrix& A, const Vec& center) {
    const int d = A.dim();
    TailShape t{Mat::Identity(d, d), center};
    if (f) {
        try {
            t.Dinv = inverse_pd(op_subgradient(*f, A)).matrix();
        } catch (const std::exception&) {
        }
    }
    return t;
}

}  // namespace detail

/// Parabolic blow-downs u(s y)/s^2 fitted by a quadratic over the annulus
/// 1/2 <= |y| <= 1 for each scale s. With the default options the basis also
/// carries linear, constant and tail terms so that lower-order parts of u do
/// not leak into Â; only Â is returned.
inline std::vector<BlowDownFit> blow_down(const ScalarField& field, const std::vector<double>& scales,
                                          const std::vector<std::uint8_t>* contact_mask = nullptr,
                                          const std::optional<EllipticOperator>& f = std::nullopt,
                                          const FitOptions& opt = {}) {
    const Grid& g = *field.grid;
    const auto mask = contact_mask ? *contact_mask
                                   : detail::contact_from_values(field, opt.contact_tol.value_or(default_contact_tol(g.h())));
    const Vec centroid = detail::contact_centroid(g, mask);
    const double rc = detail::contact_circumradius(g, mask, Vec::Zero(g.dim()));
    std::vector<BlowDownFit> out;
    for (double s : scales) {
        BlowDownFit b;
        b.scale = s;
        if (!(s > 0.0) || s > g.radius() + 1e-12) {
            b.reason = "scale outside the field domain";
        } else if (rc >= 0.5 * s) {
            b.reason = "contact set not strictly inside s B_{1/2}";
        } else {
            try {
                std::optional<detail::TailShape> tail;
                if (opt.tail_term) {
                    // first pass without the tail to get D = DF(Â)
                    const auto pre = detail::fit_quadratic(field, 0.5 * s, s, s, detail::tail_shape(std::nullopt, SymMatrix::identity(g.dim()), centroid));
                    tail = detail::tail_shape(f, pre.A, centroid);
                }
                const auto fit = detail::fit_quadratic(field, 0.5 * s, s, s, tail);
                b.p = QuadraticPoly::at_origin(fit.A);
                b.nodes = fit.nodes;
                b.accepted = true;
            } catch (const InsufficientDataError& e) {
                b.reason = e.what();
            }
        }
        out.push_back(std::move(b));
    }
    return out;
}

/// Least-squares line through (log r, log residual). Profiles with entries
/// at or below `noise_floor` have those entries excluded and counted.
inline DecayFit decay_fit(const std::vector<ResidualShell>& profile, double r_min, double r_max,
                          double noise_floor = 0.0) {
    std::vector<double> xs, ys;
    DecayFit out;
    for (const auto& s : profile) {
        if (s.r < r_min || s.r > r_max) continue;
        if (!(s.max > noise_floor)) {
            ++out.below_floor;
            continue;
        }
        xs.push_back(std::log(s.r));
        ys.push_back(std::log(s.max));
    }
    out.used = static_cast<int>(xs.size());
    if (xs.size() < 5)
        throw InsufficientDataError("decay_fit: " + std::to_string(xs.size()) + " usable shells in window, need 5");
    const double n = static_cast<double>(xs.size());
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        mx += xs[i];
        my += ys[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, sxy = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        sxx += (xs[i] - mx) * (xs[i] - mx);
        sxy += (xs[i] - mx) * (ys[i] - my);
        syy += (ys[i] - my) * (ys[i] - my);
    }
    out.slope = sxy / sxx;
    out.r_squared = syy > 0.0 ? (sxy * sxy) / (sxx * syy) : 1.0;
    return out;
}

/// Shell max / mean of |u - q| around `center` over active nodes.
inline std::vector<ResidualShell> residual_profile(const ScalarField& u, const QuadraticPoly& q, const Vec& center,
                                                   double width, double r_lo, double r_hi) {
    const Grid& g = *u.grid;
    std::vector<double> res(u.values.size(), 0.0);
    for (std::size_t idx = 0; idx < g.size(); ++idx)
        if (g.is_active(idx)) res[idx] = std::abs(u[idx] - q(g.coords(idx)));
    std::vector<ResidualShell> out;
    for (const Shell& s : shell_stats(g, res, center, width, r_lo, r_hi)) out.push_back({s.r_mean, s.max, s.mean, s.count});
    return out;
}

/// Recover the profile Q̂ = 1/2 (x - x̂) . Â (x - x̂) + â of a global solution.
inline AsymptoticFit extract_profile(const ScalarField& field, const std::optional<EllipticOperator>& f,
                                     const std::vector<std::uint8_t>* contact_mask = nullptr,
                                     const FitOptions& opt = {}) {
    const Grid& g = *field.grid;
    const int d = g.dim();
    const double R = g.radius();
    const double h = g.h();
    AsymptoticFit out;

    const auto mask = contact_mask ? *contact_mask
                                   : detail::contact_from_values(field, opt.contact_tol.value_or(default_contact_tol(h)));
    const bool has_contact = std::any_of(mask.begin(), mask.end(), [](std::uint8_t m) { return m != 0; });
    out.center_estimate = detail::contact_centroid(g, mask);
    const double rc_origin = detail::contact_circumradius(g, mask, Vec::Zero(d));
    out.contact_circumradius = detail::contact_circumradius(g, mask, out.center_estimate);
    if (has_contact && rc_origin >= 0.5 * (R / 2.0))
        throw std::invalid_argument("extract_profile: contact set is not strictly inside B_{R/4}");

    // (i) Hessian from the blow-down at the largest admissible scale.
    const double s = opt.scale.value_or(R / 2.0);
    std::vector<double> scales;
    for (double t = s; t >= 4.0 * h && t > 2.0 * rc_origin; t *= 0.5) scales.insert(scales.begin(), t);
    if (scales.empty()) scales.push_back(s);
    out.blow_downs = blow_down(field, scales, &mask, f, opt);
    const BlowDownFit& top = out.blow_downs.back();
    if (!top.accepted) throw InsufficientDataError("extract_profile: blow-down rejected: " + top.reason);
    const SymMatrix A = top.p.hessian();
    if (out.blow_downs.size() >= 2) {
        const auto& prev = out.blow_downs[out.blow_downs.size() - 2];
        if (prev.accepted) {
            const double jump = (prev.p.hessian() - A).max_abs();
            if (jump > 1e-2 * (1.0 + A.max_abs()))
                out.warnings.push_back("blow-down Hessians disagree across scales by " + std::to_string(jump));
        }
    }

    // (ii) linear part and constant on the fit window.
    out.r_min = opt.r_min.value_or(std::max(2.0 * out.contact_circumradius, 2.0 * h));
    out.r_max = opt.r_max.value_or(R / 2.0);
    if (!(out.r_max > out.r_min)) throw InsufficientDataError("extract_profile: empty fit window");

    ScalarField rest(field.grid, field.values);
    const QuadraticPoly top_part = QuadraticPoly::at_origin(A);
    for (std::size_t idx = 0; idx < g.size(); ++idx)
        if (g.is_active(idx)) rest.values[idx] -= top_part(g.coords(idx));

    auto fit_lower = [&](const Vec& tail_center) {
        std::vector<std::size_t> nodes;
        for (std::size_t idx = 0; idx < g.size(); ++idx) {
            if (!g.is_active(idx)) continue;
            const double r = (g.coords(idx) - out.center_estimate).norm();
            if (r >= out.r_min && r <= out.r_max) nodes.push_back(idx);
        }
        const int cols = d + 1 + (opt.tail_term ? 1 : 0);
        if (nodes.size() < static_cast<std::size_t>(3 * cols))
            throw InsufficientDataError("extract_profile: too few nodes in the fit window");
        const auto tail = detail::tail_shape(f, A, tail_center);
        Eigen::MatrixXd M(static_cast<Eigen::Index>(nodes.size()), cols);
        Eigen::VectorXd y(static_cast<Eigen::Index>(nodes.size()));
        const double ts = std::pow(out.r_max, 2.0 - d);
        for (std::size_t n = 0; n < nodes.size(); ++n) {
            const Vec x = g.coords(nodes[n]);
            const auto row = static_cast<Eigen::Index>(n);
            for (int i = 0; i < d; ++i) M(row, i) = x(i) / out.r_max;
            M(row, d) = 1.0;
            if (opt.tail_term) M(row, d + 1) = tail.eval(x, d) / ts;
            y(row) = rest[nodes[n]];
        }
        const Eigen::VectorXd coef = M.colPivHouseholderQr().solve(y);
        out.b_hat = Vec(coef.head(d) / out.r_max);
        out.c_hat = coef(d);
        out.tail_coefficient = opt.tail_term ? coef(d + 1) / ts : 0.0;
    };

    // (iii) absorb the linear part into the center.
    auto absorb = [&]() -> QuadraticPoly {
        const EigenPairs ep = eigen_decompose(A);
        const double tol = opt.membership_tol;
        if (ep.values(0) < tol) {
            const Vec v = ep.vectors.col(0);
            throw DegenerateProfileError("extract_profile: eigenvalue " + std::to_string(ep.values(0)) +
                                             " of Â blocks absorption of the linear part along its eigenvector",
                                         v, ep.values(0));
        }
        const Vec xbar = -(inverse_pd(A).matrix() * out.b_hat);
        const double a = out.c_hat - 0.5 * xbar.dot(A.matrix() * xbar);
        return QuadraticPoly::centered(A, xbar, a);
    };

    fit_lower(out.center_estimate);
    out.Q_hat = absorb();
    if (opt.tail_term) {
        fit_lower(out.Q_hat.center());
        out.Q_hat = absorb();
    }

    // (iv) residual profile and decay slope.
    double width = opt.shell_width.value_or(h / 2.0);
    const Vec& xc = out.Q_hat.center();
    out.residual_profile = residual_profile(field, out.Q_hat, xc, width, out.r_min, out.r_max);
    while (!opt.shell_width && out.residual_profile.size() < 5 && width > h / 8.0 + 1e-15) {
        width *= 0.5;
        out.residual_profile = residual_profile(field, out.Q_hat, xc, width, out.r_min, out.r_max);
    }
    const bool all_below =
        std::all_of(out.residual_profile.begin(), out.residual_profile.end(),
                    [&](const ResidualShell& s) { return !(s.max > opt.noise_floor); });
    if (all_below) {
        out.exact = true;
    } else {
        try {
            out.decay = decay_fit(out.residual_profile, out.r_min, out.r_max, opt.noise_floor);
        } catch (const InsufficientDataError& e) {
            out.warnings.push_back(e.what());
        }
    }

    // (v) membership of Q̂.
    if (f) {
        out.verdict = pc_membership(out.Q_hat, *f, opt.membership_tol);
    } else {
        out.verdict = MembershipVerdict{};
        out.verdict.min_eigenvalue = min_eigenvalue(A);
        out.verdict.operator_value = std::numeric_limits<double>::quiet_NaN();
        if (out.verdict.min_eigenvalue < opt.membership_tol)
            out.verdict.add("A positive definite", out.verdict.min_eigenvalue, opt.membership_tol);
        if (out.Q_hat.constant() > opt.membership_tol) out.verdict.add("a <= 0", out.Q_hat.constant(), opt.membership_tol);
    }
    return out;
}

}  // namespace nlobs
