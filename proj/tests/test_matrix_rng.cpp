#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdint>
#include <set>

#include "mup/matrix.hpp"
#include "mup/rng.hpp"

using namespace mup;

namespace {

// Definition-order reference: one scalar accumulator per element, ascending k.
Matrix matmul_ref(const Matrix& A, const Matrix& B) {
    Matrix C(A.rows, B.cols);
    for (int i = 0; i < A.rows; ++i)
        for (int j = 0; j < B.cols; ++j) {
            double s = 0.0;
            for (int k = 0; k < A.cols; ++k) s += A(i, k) * B(k, j);
            C(i, j) = s;
        }
    return C;
}

Matrix random_matrix(int r, int c, Stream& st) {
    Matrix m(r, c);
    for (double& x : m.a) x = st.next_gaussian();
    return m;
}

}  // namespace

TEST_CASE("matmul matches a hand example") {
    Matrix A(2, 3), B(3, 2);
    A(0, 0) = 1; A(0, 1) = 2; A(0, 2) = 3;
    A(1, 0) = 4; A(1, 1) = 5; A(1, 2) = 6;
    B(0, 0) = 7;  B(0, 1) = 8;
    B(1, 0) = 9;  B(1, 1) = 10;
    B(2, 0) = 11; B(2, 1) = 12;
    Matrix C = matmul(A, B);
    CHECK(C(0, 0) == 58.0);
    CHECK(C(0, 1) == 64.0);
    CHECK(C(1, 0) == 139.0);
    CHECK(C(1, 1) == 154.0);
}

TEST_CASE("matmul is bit-identical to the definition-order reference") {
    Stream st = derive_stream(11, Purpose::Generic);
    for (int trial = 0; trial < 5; ++trial) {
        int r = 1 + static_cast<int>(st.next_u64() % 17);
        int k = 1 + static_cast<int>(st.next_u64() % 17);
        int c = 1 + static_cast<int>(st.next_u64() % 17);
        Matrix A = random_matrix(r, k, st), B = random_matrix(k, c, st);
        Matrix C1 = matmul(A, B), C2 = matmul_ref(A, B);
        REQUIRE(C1.a == C2.a);
    }
}

TEST_CASE("matmulT equals matmul against an explicit transpose, bitwise") {
    Stream st = derive_stream(12, Purpose::Generic);
    Matrix A = random_matrix(7, 5, st), B = random_matrix(9, 5, st);
    Matrix Bt(5, 9);
    for (int i = 0; i < 9; ++i)
        for (int j = 0; j < 5; ++j) Bt(j, i) = B(i, j);
    Matrix C1 = matmulT(A, B), C2 = matmul_ref(A, Bt);
    REQUIRE(C1.a == C2.a);
}

TEST_CASE("matvec and matTvec agree with matmul on column vectors") {
    Stream st = derive_stream(13, Purpose::Generic);
    Matrix A = random_matrix(6, 4, st);
    Vec x(4), y(6);
    for (double& v : x) v = st.next_gaussian();
    for (double& v : y) v = st.next_gaussian();
    Vec Ax = matvec(A, x);
    Vec Aty = matTvec(A, y);
    for (int i = 0; i < 6; ++i) {
        double s = 0.0;
        for (int k = 0; k < 4; ++k) s += A(i, k) * x[k];
        CHECK(Ax[i] == s);
    }
    for (int j = 0; j < 4; ++j) {
        double s = 0.0;
        for (int k = 0; k < 6; ++k) s += A(k, j) * y[k];
        CHECK(Aty[j] == s);
    }
}

TEST_CASE("frobenius, trace, dot helpers") {
    Matrix A(2, 2);
    A(0, 0) = 1; A(0, 1) = -2; A(1, 0) = 3; A(1, 1) = 4;
    CHECK(frob2(A) == 30.0);
    CHECK(trace(A) == 5.0);
    CHECK(frob_inner(A, A) == frob2(A));
    Matrix I = Matrix::identity(3);
    CHECK(trace(I) == 3.0);
    CHECK(frob2(I) == 3.0);
    CHECK(dot(Vec{1, 2, 3}, Vec{4, 5, 6}) == 32.0);
    CHECK(norm2sq(Vec{3, 4}) == 25.0);
}

TEST_CASE("streams are deterministic and purpose/replicate-separated") {
    Stream a = derive_stream(42, Purpose::Weights, 3, 1);
    Stream b = derive_stream(42, Purpose::Weights, 3, 1);
    for (int i = 0; i < 100; ++i) REQUIRE(a.next_u64() == b.next_u64());

    Stream c = derive_stream(42, Purpose::Batch, 3, 1);
    Stream d = derive_stream(42, Purpose::Weights, 4, 1);
    Stream e = derive_stream(42, Purpose::Weights, 3, 2);
    Stream f = derive_stream(43, Purpose::Weights, 3, 1);
    Stream a2 = derive_stream(42, Purpose::Weights, 3, 1);
    std::set<std::uint64_t> seen;
    for (int i = 0; i < 64; ++i) {
        seen.insert(a2.next_u64());
        seen.insert(c.next_u64());
        seen.insert(d.next_u64());
        seen.insert(e.next_u64());
        seen.insert(f.next_u64());
    }
    // 5 distinct streams, no shared values in the prefix.
    CHECK(seen.size() == 5 * 64);
}

TEST_CASE("unit uniforms live in [0,1) and are roughly uniform") {
    Stream st = derive_stream(7, Purpose::Generic);
    const int n = 200000;
    double sum = 0.0, sum2 = 0.0;
    for (int i = 0; i < n; ++i) {
        double u = st.next_unit();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
        sum += u;
        sum2 += u * u;
    }
    double mean = sum / n;
    double var = sum2 / n - mean * mean;
    CHECK(std::abs(mean - 0.5) < 0.005);          // se ~ 0.00065
    CHECK(std::abs(var - 1.0 / 12.0) < 0.002);
}

TEST_CASE("gaussian moments match the standard normal") {
    Stream st = derive_stream(2026, Purpose::Generic);
    const int n = 1000000;
    double s1 = 0, s2 = 0, s3 = 0, s4 = 0;
    int tail = 0;
    for (int i = 0; i < n; ++i) {
        double z = st.next_gaussian();
        s1 += z;
        s2 += z * z;
        s3 += z * z * z;
        s4 += z * z * z * z;
        if (std::abs(z) > 2.0) ++tail;
    }
    double mean = s1 / n;
    double var = s2 / n - mean * mean;
    CHECK(std::abs(mean) < 0.004);                 // se = 0.001
    CHECK(std::abs(var - 1.0) < 0.01);             // 1% band on variance
    CHECK(std::abs(s3 / n) < 0.02);                // skew, se ~ 0.0024
    CHECK(std::abs(s4 / n - 3.0) < 0.05);          // kurtosis, se ~ 0.0098
    // P(|Z| > 2) = 0.04550, se ~ 0.00021
    CHECK(std::abs(static_cast<double>(tail) / n - 0.045500) < 0.0015);
}

TEST_CASE("gaussian sequence is reproducible including the cached spare") {
    Stream a = derive_stream(5, Purpose::Generic);
    Stream b = derive_stream(5, Purpose::Generic);
    Vec va, vb;
    for (int i = 0; i < 7; ++i) va.push_back(a.next_gaussian());
    for (int i = 0; i < 7; ++i) vb.push_back(b.next_gaussian());
    REQUIRE(va == vb);

    // Interleaving a u64 draw burns the spare's pairing deterministically too.
    Stream c = derive_stream(5, Purpose::Generic);
    Stream d = derive_stream(5, Purpose::Generic);
    (void)c.next_gaussian();
    (void)d.next_gaussian();
    (void)c.next_u64();
    (void)d.next_u64();
    REQUIRE(c.next_gaussian() == d.next_gaussian());
}

TEST_CASE("two derived streams are empirically uncorrelated") {
    Stream a = derive_stream(99, Purpose::Weights, 0);
    Stream b = derive_stream(99, Purpose::Weights, 1);
    const int n = 100000;
    double sxy = 0;
    for (int i = 0; i < n; ++i) sxy += a.next_gaussian() * b.next_gaussian();
    CHECK(std::abs(sxy / n) < 0.015);  // se ~ 0.0032
}
