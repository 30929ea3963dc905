#include "patn/matrix.hpp"

#include <cmath>
#include <stdexcept>

#ifdef PATN_USE_CBLAS
#include <cblas.h>
#endif

namespace patn {

std::string Matrix::shape_str() const {
    return "(" + std::to_string(rows_) + "x" + std::to_string(cols_) + ")";
}

bool Matrix::all_finite() const {
    for (double x : data_)
        if (!std::isfinite(x)) return false;
    return true;
}

namespace {

[[noreturn]] void throw_shape(const char* op, const Matrix& a, const Matrix& b) {
    throw std::invalid_argument(std::string(op) + ": incompatible shapes " + a.shape_str() + " vs " +
                                b.shape_str());
}

#ifndef PATN_USE_CBLAS
// Fallback kernel when no BLAS is available. ikj loop order keeps the inner
// loop contiguous for row-major storage.
void gemm(bool trans_a, bool trans_b, int m, int n, int k, const Matrix& a, const Matrix& b, Matrix& c) {
    auto a_at = [&](int i, int p) { return trans_a ? a.at(p, i) : a.at(i, p); };
    for (int i = 0; i < m; ++i) {
        double* crow = c.data() + static_cast<size_t>(i) * n;
        for (int p = 0; p < k; ++p) {
            const double av = a_at(i, p);
            if (av == 0.0) continue;
            if (!trans_b) {
                const double* brow = b.data() + static_cast<size_t>(p) * n;
                for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
            } else {
                for (int j = 0; j < n; ++j) crow[j] += av * b.at(j, p);
            }
        }
    }
}
#endif

Matrix gemm_dispatch(bool trans_a, bool trans_b, const Matrix& a, const Matrix& b, const char* op) {
    const int m = trans_a ? a.cols() : a.rows();
    const int k = trans_a ? a.rows() : a.cols();
    const int kb = trans_b ? b.cols() : b.rows();
    const int n = trans_b ? b.rows() : b.cols();
    if (k != kb) throw_shape(op, a, b);
    Matrix c(m, n);
#ifdef PATN_USE_CBLAS
    cblas_dgemm(CblasRowMajor, trans_a ? CblasTrans : CblasNoTrans, trans_b ? CblasTrans : CblasNoTrans, m,
                n, k, 1.0, a.data(), a.cols(), b.data(), b.cols(), 0.0, c.data(), n);
#else
    gemm(trans_a, trans_b, m, n, k, a, b, c);
#endif
    return c;
}

}  // namespace

Matrix matmul(const Matrix& a, const Matrix& b) { return gemm_dispatch(false, false, a, b, "matmul"); }
Matrix matmul_nt(const Matrix& a, const Matrix& b) { return gemm_dispatch(false, true, a, b, "matmul_nt"); }
Matrix matmul_tn(const Matrix& a, const Matrix& b) { return gemm_dispatch(true, false, a, b, "matmul_tn"); }

}  // namespace patn
