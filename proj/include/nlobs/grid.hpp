#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "nlobs/operators.hpp"
#include "nlobs/polynomial.hpp"

namespace nlobs {

enum class NodeClass : std::uint8_t { exterior = 0, boundary_layer = 1, interior = 2 };

using MultiIndex = std::array<int, kMaxDim>;

/// Structured grid x = h * k, k in [-n, n]^d, masked by the ball B_R.
///
/// Interior nodes satisfy |x| < R - h sqrt(d) and have their whole 2d + 2d(d-1)
/// point stencil inside the box. The boundary layer is every non-interior node
/// that is a stencil neighbour of an interior node; Dirichlet data lives there.
/// All other nodes are exterior and never read by a stencil.
class Grid {
public:
    static std::shared_ptr<const Grid> build(int dim, double R, double h) {
        return std::shared_ptr<const Grid>(new Grid(dim, R, h));
    }

    int dim() const noexcept { return dim_; }
    double h() const noexcept { return h_; }
    double radius() const noexcept { return R_; }
    int half_extent() const noexcept { return n_; }
    int side() const noexcept { return 2 * n_ + 1; }
    std::size_t size() const noexcept { return mask_.size(); }

    NodeClass node_class(std::size_t idx) const { return static_cast<NodeClass>(mask_[idx]); }
    bool is_interior(std::size_t idx) const { return mask_[idx] == static_cast<std::uint8_t>(NodeClass::interior); }
    /// Interior or boundary layer, i.e. the nodes that carry field values.
    bool is_active(std::size_t idx) const { return mask_[idx] != static_cast<std::uint8_t>(NodeClass::exterior); }

    std::span<const std::size_t> interior() const noexcept { return interior_; }
    std::span<const std::size_t> boundary_layer() const noexcept { return boundary_; }

    std::ptrdiff_t stride(int axis) const { return strides_[static_cast<std::size_t>(axis)]; }
    /// Flat offsets of the full Hessian stencil (excluding the centre).
    std::span<const std::ptrdiff_t> stencil() const noexcept { return stencil_; }

    MultiIndex multi_index(std::size_t idx) const {
        MultiIndex k{};
        for (int i = 0; i < dim_; ++i) {
            k[static_cast<std::size_t>(i)] = static_cast<int>(idx % static_cast<std::size_t>(side())) - n_;
            idx /= static_cast<std::size_t>(side());
        }
        return k;
    }

    bool contains(const MultiIndex& k) const {
        for (int i = 0; i < dim_; ++i)
            if (std::abs(k[static_cast<std::size_t>(i)]) > n_) return false;
        return true;
    }

    std::size_t index(const MultiIndex& k) const {
        if (!contains(k)) throw std::out_of_range("Grid::index: multi-index outside the box");
        std::size_t idx = 0;
        for (int i = dim_ - 1; i >= 0; --i)
            idx = idx * static_cast<std::size_t>(side()) + static_cast<std::size_t>(k[static_cast<std::size_t>(i)] + n_);
        return idx;
    }

    Vec coords(std::size_t idx) const {
        const MultiIndex k = multi_index(idx);
        Vec x(dim_);
        for (int i = 0; i < dim_; ++i) x(i) = h_ * k[static_cast<std::size_t>(i)];
        return x;
    }

    double node_radius(std::size_t idx) const { return coords(idx).norm(); }

    /// True when the Hessian stencil around idx stays inside the box.
    bool stencil_fits(std::size_t idx) const {
        const MultiIndex k = multi_index(idx);
        for (int i = 0; i < dim_; ++i)
            if (std::abs(k[static_cast<std::size_t>(i)]) > n_ - 1) return false;
        return true;
    }

    /// Index of the node of `other` (same h) at the physical position of
    /// node `idx` of this grid, if the position lies in other's box.
    std::optional<std::size_t> map_to(const Grid& other, std::size_t idx) const {
        if (other.dim_ != dim_ || other.h_ != h_) throw std::invalid_argument("Grid::map_to: incompatible grids");
        const MultiIndex k = multi_index(idx);
        if (!other.contains(k)) return std::nullopt;
        return other.index(k);
    }

private:
    Grid(int dim, double R, double h) : dim_(dim), R_(R), h_(h) {
        if (dim != 3 && dim != 4) throw DimensionError("Grid: dimension must be 3 or 4");
        if (!(h > 0.0) || !(R > 0.0)) throw std::invalid_argument("Grid: R and h must be positive");
        if (R <= h * std::sqrt(static_cast<double>(dim)))
            throw std::invalid_argument("Grid: R <= h sqrt(d) leaves no interior node");
        n_ = static_cast<int>(std::ceil(R / h - 1e-12));
        const auto s = static_cast<std::size_t>(side());
        std::size_t total = 1;
        for (int i = 0; i < dim; ++i) {
            strides_.push_back(static_cast<std::ptrdiff_t>(total));
            total *= s;
        }
        for (int i = 0; i < dim; ++i) {
            stencil_.push_back(strides_[static_cast<std::size_t>(i)]);
            stencil_.push_back(-strides_[static_cast<std::size_t>(i)]);
        }
        for (int i = 0; i < dim; ++i)
            for (int j = i + 1; j < dim; ++j)
                for (int si : {1, -1})
                    for (int sj : {1, -1})
                        stencil_.push_back(si * strides_[static_cast<std::size_t>(i)] +
                                           sj * strides_[static_cast<std::size_t>(j)]);

        mask_.assign(total, static_cast<std::uint8_t>(NodeClass::exterior));
        const double cut = R - h * std::sqrt(static_cast<double>(dim));
        for (std::size_t idx = 0; idx < total; ++idx) {
            if (!stencil_fits(idx)) continue;
            if (coords(idx).norm() < cut) {
                mask_[idx] = static_cast<std::uint8_t>(NodeClass::interior);
                interior_.push_back(idx);
            }
        }
        for (std::size_t idx : interior_)
            for (std::ptrdiff_t off : stencil_) {
                const auto j = static_cast<std::size_t>(static_cast<std::ptrdiff_t>(idx) + off);
                if (mask_[j] == static_cast<std::uint8_t>(NodeClass::exterior))
                    mask_[j] = static_cast<std::uint8_t>(NodeClass::boundary_layer);
            }
        for (std::size_t idx = 0; idx < total; ++idx)
            if (mask_[idx] == static_cast<std::uint8_t>(NodeClass::boundary_layer)) boundary_.push_back(idx);
    }

    int dim_;
    double R_;
    double h_;
    int n_ = 0;
    std::vector<std::ptrdiff_t> strides_;
    std::vector<std::ptrdiff_t> stencil_;
    std::vector<std::uint8_t> mask_;
    std::vector<std::size_t> interior_;
    std::vector<std::size_t> boundary_;
};

inline std::shared_ptr<const Grid> build_grid(int dim, double R, double h) { return Grid::build(dim, R, h); }

/// A function sampled at every node of a grid. Values at exterior nodes are
/// placeholders and are never read by stencils.
struct ScalarField {
    std::shared_ptr<const Grid> grid;
    std::vector<double> values;

    ScalarField() = default;
    explicit ScalarField(std::shared_ptr<const Grid> g, double fill = 0.0)
        : grid(std::move(g)), values(grid->size(), fill) {}
    ScalarField(std::shared_ptr<const Grid> g, std::vector<double> v) : grid(std::move(g)), values(std::move(v)) {
        if (values.size() != grid->size()) throw DimensionError("ScalarField: value count does not match grid");
    }

    double operator[](std::size_t idx) const { return values[idx]; }
    double& operator[](std::size_t idx) { return values[idx]; }
};

namespace detail {

/// Second-order central-difference Hessian at a node whose stencil fits.
inline SymMatrix hessian_unchecked(const Grid& g, std::span<const double> u, std::size_t idx) {
    const int d = g.dim();
    const double inv_h2 = 1.0 / (g.h() * g.h());
    const auto c = static_cast<std::ptrdiff_t>(idx);
    const double u0 = u[idx];
    Mat H(d, d);
    for (int i = 0; i < d; ++i) {
        const std::ptrdiff_t si = g.stride(i);
        H(i, i) = (u[static_cast<std::size_t>(c + si)] - 2.0 * u0 + u[static_cast<std::size_t>(c - si)]) * inv_h2;
        for (int j = i + 1; j < d; ++j) {
            const std::ptrdiff_t sj = g.stride(j);
            const double cross =
                u[static_cast<std::size_t>(c + si + sj)] - u[static_cast<std::size_t>(c + si - sj)] -
                u[static_cast<std::size_t>(c - si + sj)] + u[static_cast<std::size_t>(c - si - sj)];
            H(i, j) = H(j, i) = 0.25 * cross * inv_h2;
        }
    }
    return SymMatrix(H);
}

}  // namespace detail

/// Discrete Hessian D^2_h u at a node: second central differences on the
/// diagonal, the 4-point cross difference off the diagonal.
inline SymMatrix hessian_at(const ScalarField& field, std::size_t node) {
    const Grid& g = *field.grid;
    if (node >= g.size()) throw std::out_of_range("hessian_at: node index out of range");
    if (!g.stencil_fits(node)) throw std::out_of_range("hessian_at: stencil leaves the box");
    return detail::hessian_unchecked(g, field.values, node);
}

inline SymMatrix hessian_at(const ScalarField& field, const MultiIndex& k) {
    return hessian_at(field, field.grid->index(k));
}

/// F(D^2_h u) at every interior node, in Grid::interior() order.
inline std::vector<double> apply_operator_field(const EllipticOperator& f, const ScalarField& field) {
    const Grid& g = *field.grid;
    if (f.dim() != g.dim()) throw DimensionError("apply_operator_field: operator and grid dimensions differ");
    if (g.interior().empty()) throw std::invalid_argument("apply_operator_field: grid has no interior node");
    std::vector<double> out;
    out.reserve(g.interior().size());
    for (std::size_t idx : g.interior()) out.push_back(op_eval(f, detail::hessian_unchecked(g, field.values, idx)));
    return out;
}

/// q evaluated at every interior and boundary-layer node (exterior nodes too,
/// for convenience; they are never read).
inline ScalarField sample_poly(std::shared_ptr<const Grid> grid, const QuadraticPoly& q) {
    if (q.dim() != grid->dim()) throw DimensionError("sample_poly: polynomial and grid dimensions differ");
    ScalarField field(grid);
    for (std::size_t idx = 0; idx < grid->size(); ++idx) field.values[idx] = q(grid->coords(idx));
    return field;
}

/// Nodewise sample of an arbitrary function of position.
inline ScalarField sample_function(std::shared_ptr<const Grid> grid, const std::function<double(const Vec&)>& fn) {
    ScalarField field(grid);
    for (std::size_t idx = 0; idx < grid->size(); ++idx) field.values[idx] = fn(grid->coords(idx));
    return field;
}

/// Statistics of a nodal quantity over one spherical shell.
struct Shell {
    double r_lo = 0.0;
    double r_hi = 0.0;
    std::size_t count = 0;
    double mean = 0.0;
    double min = std::numeric_limits<double>::infinity();
    double max = -std::numeric_limits<double>::infinity();
    double r_mean = 0.0;  // mean node radius inside the shell
};

/// Shells [r_lo + k w, r_lo + (k+1) w) around `center`, covering [r_lo, r_hi],
/// over active nodes (interior + boundary layer) accepted by `keep`.
/// Empty shells are dropped.
inline std::vector<Shell> shell_stats(const Grid& g, std::span<const double> values, const Vec& center, double width,
                                      double r_lo, double r_hi,
                                      const std::function<bool(std::size_t)>& keep = {}) {
    if (!(width > 0.0)) throw std::invalid_argument("shell_stats: width must be positive");
    const auto count = static_cast<std::size_t>(std::ceil((r_hi - r_lo) / width - 1e-12));
    std::vector<Shell> shells(std::max<std::size_t>(count, 1));
    for (std::size_t k = 0; k < shells.size(); ++k) {
        shells[k].r_lo = r_lo + static_cast<double>(k) * width;
        shells[k].r_hi = shells[k].r_lo + width;
    }
    for (std::size_t idx = 0; idx < g.size(); ++idx) {
        if (!g.is_active(idx)) continue;
        if (keep && !keep(idx)) continue;
        const double r = (g.coords(idx) - center).norm();
        if (r < r_lo || r > r_hi) continue;
        auto k = static_cast<std::size_t>((r - r_lo) / width);
        if (k >= shells.size()) k = shells.size() - 1;
        Shell& s = shells[k];
        const double v = values[idx];
        ++s.count;
        s.mean += v;
        s.r_mean += r;
        s.min = std::min(s.min, v);
        s.max = std::max(s.max, v);
    }
    std::vector<Shell> out;
    for (Shell& s : shells)
        if (s.count > 0) {
            s.mean /= static_cast<double>(s.count);
            s.r_mean /= static_cast<double>(s.count);
            out.push_back(s);
        }
    return out;
}

}  // namespace nlobs
