#pragma once
// Dense row-major matrices over double. Contraction order is pinned: every
// accumulated element is built by adding terms in ascending k, so repeated
// runs (and both matmul implementations) agree bit-for-bit.

#include <cassert>
#include <cstddef>
#include <vector>

namespace mup {

using Vec = std::vector<double>;

struct Matrix {
    int rows = 0;
    int cols = 0;
    std::vector<double> a;

    Matrix() = default;
    Matrix(int r, int c) : rows(r), cols(c), a(static_cast<size_t>(r) * c, 0.0) {}

    double& operator()(int i, int j) { return a[static_cast<size_t>(i) * cols + j]; }
    double operator()(int i, int j) const { return a[static_cast<size_t>(i) * cols + j]; }

    double* row(int i) { return a.data() + static_cast<size_t>(i) * cols; }
    const double* row(int i) const { return a.data() + static_cast<size_t>(i) * cols; }

    static Matrix identity(int n) {
        Matrix m(n, n);
        for (int i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }
};

// C = A*B, loops ordered i-k-j: the j-loop vectorizes while each C(i,j) still
// accumulates over k in ascending order.
inline Matrix matmul(const Matrix& A, const Matrix& B) {
    assert(A.cols == B.rows);
    Matrix C(A.rows, B.cols);
    for (int i = 0; i < A.rows; ++i) {
        double* ci = C.row(i);
        const double* ai = A.row(i);
        for (int k = 0; k < A.cols; ++k) {
            const double aik = ai[k];
            const double* bk = B.row(k);
            for (int j = 0; j < B.cols; ++j) ci[j] += aik * bk[j];
        }
    }
    return C;
}

inline Vec matvec(const Matrix& A, const Vec& x) {
    assert(static_cast<int>(x.size()) == A.cols);
    Vec y(A.rows, 0.0);
    for (int i = 0; i < A.rows; ++i) {
        const double* ai = A.row(i);
        double s = 0.0;
        for (int k = 0; k < A.cols; ++k) s += ai[k] * x[k];
        y[i] = s;
    }
    return y;
}

// y = A^T x without materializing the transpose; per-element accumulation is
// still ascending in k (rows of A).
inline Vec matTvec(const Matrix& A, const Vec& x) {
    assert(static_cast<int>(x.size()) == A.rows);
    Vec y(A.cols, 0.0);
    for (int k = 0; k < A.rows; ++k) {
        const double xk = x[k];
        const double* ak = A.row(k);
        for (int j = 0; j < A.cols; ++j) y[j] += ak[j] * xk;
    }
    return y;
}

// C = A * B^T; used for Gram products J J^T.
inline Matrix matmulT(const Matrix& A, const Matrix& B) {
    assert(A.cols == B.cols);
    Matrix C(A.rows, B.rows);
    for (int i = 0; i < A.rows; ++i) {
        const double* ai = A.row(i);
        double* ci = C.row(i);
        for (int j = 0; j < B.rows; ++j) {
            const double* bj = B.row(j);
            double s = 0.0;
            for (int k = 0; k < A.cols; ++k) s += ai[k] * bj[k];
            ci[j] = s;
        }
    }
    return C;
}

inline double dot(const Vec& u, const Vec& v) {
    assert(u.size() == v.size());
    double s = 0.0;
    for (size_t k = 0; k < u.size(); ++k) s += u[k] * v[k];
    return s;
}

inline double norm2sq(const Vec& v) { return dot(v, v); }

inline double frob2(const Matrix& A) {
    double s = 0.0;
    for (double x : A.a) s += x * x;
    return s;
}

inline double trace(const Matrix& A) {
    assert(A.rows == A.cols);
    double s = 0.0;
    for (int i = 0; i < A.rows; ++i) s += A(i, i);
    return s;
}

inline double frob_inner(const Matrix& A, const Matrix& B) {
    assert(A.rows == B.rows && A.cols == B.cols);
    double s = 0.0;
    for (size_t k = 0; k < A.a.size(); ++k) s += A.a[k] * B.a[k];
    return s;
}

inline void axpy(Matrix& Y, double alpha, const Matrix& X) {
    assert(Y.rows == X.rows && Y.cols == X.cols);
    for (size_t k = 0; k < Y.a.size(); ++k) Y.a[k] += alpha * X.a[k];
}

inline void axpy(Vec& y, double alpha, const Vec& x) {
    assert(y.size() == x.size());
    for (size_t k = 0; k < y.size(); ++k) y[k] += alpha * x[k];
}

}  // namespace mup
