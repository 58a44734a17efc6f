#pragma once

#include <cassert>
#include <cmath>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

namespace gmf {

using Vec = std::vector<double>;

/// Small dense row-major matrix. State dimensions here are tiny (n <= 8 in
/// practice), so no attempt is made at blocking or vectorization.
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<double> a;

    Mat() = default;
    Mat(int r, int c, double fill = 0.0) : rows(r), cols(c), a(static_cast<size_t>(r) * c, fill) {}

    static Mat identity(int n) {
        Mat m(n, n);
        for (int i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }
    static Mat scaled_identity(int n, double s) {
        Mat m(n, n);
        for (int i = 0; i < n; ++i) m(i, i) = s;
        return m;
    }

    double& operator()(int i, int j) { return a[static_cast<size_t>(i) * cols + j]; }
    double operator()(int i, int j) const { return a[static_cast<size_t>(i) * cols + j]; }

    bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }
};

inline double dot(std::span<const double> x, std::span<const double> y) {
    assert(x.size() == y.size());
    double s = 0.0;
    for (size_t i = 0; i < x.size(); ++i) s += x[i] * y[i];
    return s;
}

inline double norm2(std::span<const double> x) { return std::sqrt(dot(x, x)); }

inline double dist2(std::span<const double> x, std::span<const double> y) {
    assert(x.size() == y.size());
    double s = 0.0;
    for (size_t i = 0; i < x.size(); ++i) {
        const double d = x[i] - y[i];
        s += d * d;
    }
    return std::sqrt(s);
}

/// y += a * x
inline void axpy(double a, std::span<const double> x, std::span<double> y) {
    assert(x.size() == y.size());
    for (size_t i = 0; i < x.size(); ++i) y[i] += a * x[i];
}

/// y = A x
inline void matvec(const Mat& m, std::span<const double> x, std::span<double> y) {
    assert(static_cast<int>(x.size()) == m.cols && static_cast<int>(y.size()) == m.rows);
    for (int i = 0; i < m.rows; ++i) {
        double s = 0.0;
        for (int j = 0; j < m.cols; ++j) s += m(i, j) * x[j];
        y[i] = s;
    }
}

inline bool all_finite(std::span<const double> x) {
    for (double v : x)
        if (!std::isfinite(v)) return false;
    return true;
}

/// Solve A x = b by Gaussian elimination with partial pivoting.
/// Throws std::runtime_error on a (numerically) singular matrix.
inline Vec solve_linear(Mat m, Vec b) {
    if (m.rows != m.cols || m.rows != static_cast<int>(b.size()))
        throw std::invalid_argument("solve_linear: shape mismatch");
    const int n = m.rows;
    for (int col = 0; col < n; ++col) {
        int piv = col;
        for (int r = col + 1; r < n; ++r)
            if (std::fabs(m(r, col)) > std::fabs(m(piv, col))) piv = r;
        if (std::fabs(m(piv, col)) < 1e-300)
            throw std::runtime_error("solve_linear: singular matrix");
        if (piv != col) {
            for (int j = 0; j < n; ++j) std::swap(m(piv, j), m(col, j));
            std::swap(b[piv], b[col]);
        }
        for (int r = col + 1; r < n; ++r) {
            const double f = m(r, col) / m(col, col);
            if (f == 0.0) continue;
            for (int j = col; j < n; ++j) m(r, j) -= f * m(col, j);
            b[r] -= f * b[col];
        }
    }
    Vec x(n, 0.0);
    for (int i = n - 1; i >= 0; --i) {
        double s = b[i];
        for (int j = i + 1; j < n; ++j) s -= m(i, j) * x[j];
        x[i] = s / m(i, i);
    }
    return x;
}

/// Lower Cholesky factor of a symmetric positive-definite matrix.
inline Mat cholesky(const Mat& m) {
    if (m.rows != m.cols) throw std::invalid_argument("cholesky: not square");
    const int n = m.rows;
    Mat l(n, n);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j <= i; ++j) {
            double s = m(i, j);
            for (int k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
            if (i == j) {
                if (s <= 0.0) throw std::runtime_error("cholesky: matrix not positive definite");
                l(i, i) = std::sqrt(s);
            } else {
                l(i, j) = s / l(j, j);
            }
        }
    }
    return l;
}

}  // namespace gmf
