#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "nlobs/errors.hpp"

namespace nlobs {

inline constexpr int kMaxDim = 4;

/// Small dense vector with inline storage (d <= kMaxDim).
using Vec = Eigen::Matrix<double, Eigen::Dynamic, 1, Eigen::ColMajor, kMaxDim, 1>;
/// Small dense matrix with inline storage (d <= kMaxDim).
using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::ColMajor, kMaxDim, kMaxDim>;

inline Vec make_vec(std::initializer_list<double> xs) {
    Vec v(static_cast<Eigen::Index>(xs.size()));
    Eigen::Index i = 0;
    for (double x : xs) v(i++) = x;
    return v;
}

/// Symmetric d x d matrix. Symmetry holds by construction: the input is
/// averaged with its transpose, so the two triangles are always identical.
class SymMatrix {
public:
    SymMatrix() = default;

    explicit SymMatrix(int dim) : m_(Mat::Zero(check_dim(dim), dim)) {}

    explicit SymMatrix(const Mat& m) {
        if (m.rows() != m.cols()) throw DimensionError("SymMatrix: matrix is not square");
        check_dim(static_cast<int>(m.rows()));
        m_ = 0.5 * (m + m.transpose());
    }

    static SymMatrix identity(int dim, double scale = 1.0) {
        SymMatrix s(dim);
        s.m_.diagonal().setConstant(scale);
        return s;
    }

    static SymMatrix diagonal(const Vec& diag) {
        SymMatrix s(static_cast<int>(diag.size()));
        s.m_.diagonal() = diag;
        return s;
    }

    static SymMatrix diagonal(std::initializer_list<double> diag) { return diagonal(make_vec(diag)); }

    static SymMatrix outer(const Vec& v) { return SymMatrix(Mat(v * v.transpose())); }

    /// Row-major upper triangle, d(d+1)/2 entries.
    static SymMatrix from_upper(int dim, std::span<const double> upper) {
        check_dim(dim);
        if (upper.size() != static_cast<std::size_t>(dim * (dim + 1) / 2))
            throw DimensionError("SymMatrix::from_upper: expected " + std::to_string(dim * (dim + 1) / 2) +
                                 " coefficients, got " + std::to_string(upper.size()));
        SymMatrix s(dim);
        std::size_t k = 0;
        for (int i = 0; i < dim; ++i)
            for (int j = i; j < dim; ++j) {
                s.m_(i, j) = upper[k];
                s.m_(j, i) = upper[k];
                ++k;
            }
        return s;
    }

    std::vector<double> upper() const {
        std::vector<double> out;
        out.reserve(static_cast<std::size_t>(dim() * (dim() + 1) / 2));
        for (int i = 0; i < dim(); ++i)
            for (int j = i; j < dim(); ++j) out.push_back(m_(i, j));
        return out;
    }

    int dim() const noexcept { return static_cast<int>(m_.rows()); }
    double operator()(int i, int j) const { return m_(i, j); }
    const Mat& matrix() const noexcept { return m_; }

    double trace() const { return m_.trace(); }
    double max_abs() const { return dim() == 0 ? 0.0 : m_.cwiseAbs().maxCoeff(); }
    /// Frobenius inner product <this, other> = trace(this * other).
    double dot(const SymMatrix& other) const {
        require_same_dim(other);
        return m_.cwiseProduct(other.m_).sum();
    }
    double quadratic_form(const Vec& x) const { return x.dot(m_ * x); }

    SymMatrix& operator+=(const SymMatrix& o) {
        require_same_dim(o);
        m_ += o.m_;
        return *this;
    }
    SymMatrix& operator-=(const SymMatrix& o) {
        require_same_dim(o);
        m_ -= o.m_;
        return *this;
    }
    SymMatrix& operator*=(double s) {
        m_ *= s;
        return *this;
    }
    friend SymMatrix operator+(SymMatrix a, const SymMatrix& b) { return a += b; }
    friend SymMatrix operator-(SymMatrix a, const SymMatrix& b) { return a -= b; }
    friend SymMatrix operator*(SymMatrix a, double s) { return a *= s; }
    friend SymMatrix operator*(double s, SymMatrix a) { return a *= s; }
    friend SymMatrix operator-(SymMatrix a) { return a *= -1.0; }
    friend bool operator==(const SymMatrix& a, const SymMatrix& b) {
        return a.dim() == b.dim() && a.m_ == b.m_;
    }

    void require_same_dim(const SymMatrix& o) const {
        if (o.dim() != dim())
            throw DimensionError("SymMatrix: dimension mismatch (" + std::to_string(dim()) + " vs " +
                                 std::to_string(o.dim()) + ")");
    }

private:
    static int check_dim(int dim) {
        if (dim < 1 || dim > kMaxDim)
            throw DimensionError("SymMatrix: dimension " + std::to_string(dim) + " outside [1, " +
                                 std::to_string(kMaxDim) + "]");
        return dim;
    }

    Mat m_;
};

/// Eigen-pairs of a symmetric matrix; eigenvalues nondecreasing, eigenvectors
/// stored as orthonormal columns.
struct EigenPairs {
    Vec values;
    Mat vectors;
};

inline EigenPairs eigen_decompose(const SymMatrix& m) {
    Eigen::SelfAdjointEigenSolver<Mat> solver(m.matrix(), Eigen::ComputeEigenvectors);
    return {solver.eigenvalues(), solver.eigenvectors()};
}

inline Vec eigenvalues(const SymMatrix& m) {
    Eigen::SelfAdjointEigenSolver<Mat> solver(m.matrix(), Eigen::EigenvaluesOnly);
    return solver.eigenvalues();
}

/// Sum_i f(lambda_i) v_i v_i^T.
template <class Fn>
SymMatrix spectral_map(const EigenPairs& ep, Fn&& fn) {
    Vec mapped(ep.values.size());
    for (Eigen::Index i = 0; i < ep.values.size(); ++i) mapped(i) = fn(ep.values(i));
    return SymMatrix(Mat(ep.vectors * mapped.asDiagonal() * ep.vectors.transpose()));
}

inline SymMatrix reconstruct(const EigenPairs& ep) {
    return spectral_map(ep, [](double l) { return l; });
}

inline double min_eigenvalue(const SymMatrix& m) { return eigenvalues(m).minCoeff(); }

inline double spectral_norm(const SymMatrix& m) { return eigenvalues(m).cwiseAbs().maxCoeff(); }

/// s * m * s (congruence by a symmetric matrix).
inline SymMatrix congruence(const SymMatrix& s, const SymMatrix& m) {
    s.require_same_dim(m);
    return SymMatrix(Mat(s.matrix() * m.matrix() * s.matrix()));
}

inline SymMatrix sqrt_psd(const SymMatrix& m) {
    return spectral_map(eigen_decompose(m), [](double l) { return std::sqrt(std::max(l, 0.0)); });
}

inline SymMatrix inverse_sqrt_pd(const SymMatrix& m) {
    const EigenPairs ep = eigen_decompose(m);
    if (ep.values.minCoeff() <= 0.0) throw std::invalid_argument("inverse_sqrt_pd: matrix is not positive definite");
    return spectral_map(ep, [](double l) { return 1.0 / std::sqrt(l); });
}

inline SymMatrix inverse_pd(const SymMatrix& m) {
    const EigenPairs ep = eigen_decompose(m);
    if (ep.values.minCoeff() <= 0.0) throw std::invalid_argument("inverse_pd: matrix is not positive definite");
    return spectral_map(ep, [](double l) { return 1.0 / l; });
}

}  // namespace nlobs
