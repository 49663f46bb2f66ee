#pragma once

// Dense kernels backing the tensor graph. Every parallel kernel distributes
// whole output elements across threads and keeps the per-element accumulation
// order identical to the serial reference, so results are bit-equal to
// kernels::serial::* regardless of thread count. The serial namespace is the
// reference implementation used by tests and the benchmark.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace vtck::kernels {

// Work sizes below this run serially; the fork/join overhead is not worth it
// for the graph's many small ops.
inline constexpr int64_t kParallelCutoff = 16 * 1024;

// Inner kernels skip their own parallel regions when the caller already runs
// inside one (batch members parallelize at the example level instead).
inline bool use_threads(int64_t work) {
#ifdef _OPENMP
    return work >= kParallelCutoff && !omp_in_parallel();
#else
    (void)work;
    return false;
#endif
}

namespace detail {

// Four output rows per pass share each streamed B row; accumulation stays in
// k order per element, so any row blocking gives bit-identical results.
template <class Real>
void matmul_rows(int64_t i0, int64_t i1, int64_t k, int64_t n, const Real* __restrict__ a,
                 const Real* __restrict__ b, Real* __restrict__ c) {
    int64_t i = i0;
    for (; i + 4 <= i1; i += 4) {
        const Real* a0 = a + i * k;
        const Real* a1 = a0 + k;
        const Real* a2 = a1 + k;
        const Real* a3 = a2 + k;
        Real* c0 = c + i * n;
        Real* c1 = c0 + n;
        Real* c2 = c1 + n;
        Real* c3 = c2 + n;
        for (int64_t j = 0; j < n; ++j) c0[j] = c1[j] = c2[j] = c3[j] = Real(0);
        for (int64_t p = 0; p < k; ++p) {
            const Real v0 = a0[p], v1 = a1[p], v2 = a2[p], v3 = a3[p];
            const Real* bp = b + p * n;
            for (int64_t j = 0; j < n; ++j) {
                c0[j] += v0 * bp[j];
                c1[j] += v1 * bp[j];
                c2[j] += v2 * bp[j];
                c3[j] += v3 * bp[j];
            }
        }
    }
    for (; i < i1; ++i) {
        const Real* ai = a + i * k;
        Real* ci = c + i * n;
        for (int64_t j = 0; j < n; ++j) ci[j] = Real(0);
        for (int64_t p = 0; p < k; ++p) {
            const Real av = ai[p];
            const Real* bp = b + p * n;
            for (int64_t j = 0; j < n; ++j) ci[j] += av * bp[j];
        }
    }
}

}  // namespace detail

namespace serial {

// C[m,n] = A[m,k] * B[k,n]
template <class Real>
void matmul_nn(int64_t m, int64_t k, int64_t n, const Real* __restrict__ a, const Real* __restrict__ b, Real* __restrict__ c) {
    detail::matmul_rows(0, m, k, n, a, b, c);
}

// C[m,n] = A[m,k] * B[n,k]^T. B is transposed into scratch first so the
// accumulation runs along contiguous rows (reduction-free inner loop, which
// the compiler can vectorize without reassociating floats).
template <class Real>
void matmul_nt(int64_t m, int64_t k, int64_t n, const Real* a, const Real* b, Real* c) {
    std::vector<Real> bt(static_cast<size_t>(k * n));
    for (int64_t j = 0; j < n; ++j) {
        for (int64_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
    }
    matmul_nn(m, k, n, a, bt.data(), c);
}

// C[m,n] = A[k,m]^T * B[k,n]
template <class Real>
void matmul_tn(int64_t m, int64_t k, int64_t n, const Real* a, const Real* b, Real* c) {
    std::vector<Real> at(static_cast<size_t>(m * k));
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t p = 0; p < k; ++p) at[i * k + p] = a[p * m + i];
    }
    matmul_nn(m, k, n, at.data(), b, c);
}

template <class Real>
void softmax_rows(int64_t rows, int64_t cols, const Real* x, Real* y) {
    for (int64_t r = 0; r < rows; ++r) {
        const Real* xr = x + r * cols;
        Real* yr = y + r * cols;
        Real mx = xr[0];
        for (int64_t c = 1; c < cols; ++c) mx = xr[c] > mx ? xr[c] : mx;
        Real sum = Real(0);
        for (int64_t c = 0; c < cols; ++c) {
            yr[c] = std::exp(xr[c] - mx);
            sum += yr[c];
        }
        const Real inv = Real(1) / sum;
        for (int64_t c = 0; c < cols; ++c) yr[c] *= inv;
    }
}

// y = gain * (x - mean) / sqrt(var + eps) + bias, rowwise over the last dim.
// mean_out/rstd_out (length rows) are optional stashes for the backward pass.
template <class Real>
void layer_norm_rows(int64_t rows, int64_t cols, const Real* x, const Real* gain, const Real* bias,
                     Real eps, Real* y, Real* mean_out, Real* rstd_out) {
    for (int64_t r = 0; r < rows; ++r) {
        const Real* xr = x + r * cols;
        Real* yr = y + r * cols;
        Real mean = Real(0);
        for (int64_t c = 0; c < cols; ++c) mean += xr[c];
        mean /= Real(cols);
        Real var = Real(0);
        for (int64_t c = 0; c < cols; ++c) {
            const Real d = xr[c] - mean;
            var += d * d;
        }
        var /= Real(cols);
        const Real rstd = Real(1) / std::sqrt(var + eps);
        for (int64_t c = 0; c < cols; ++c) yr[c] = gain[c] * ((xr[c] - mean) * rstd) + bias[c];
        if (mean_out) mean_out[r] = mean;
        if (rstd_out) rstd_out[r] = rstd;
    }
}

template <class Real>
void add(int64_t n, const Real* __restrict__ a, const Real* __restrict__ b, Real* __restrict__ y) {
    for (int64_t i = 0; i < n; ++i) y[i] = a[i] + b[i];
}

template <class Real>
void mul(int64_t n, const Real* __restrict__ a, const Real* __restrict__ b, Real* __restrict__ y) {
    for (int64_t i = 0; i < n; ++i) y[i] = a[i] * b[i];
}

template <class Real>
void scale(int64_t n, Real s, const Real* __restrict__ a, Real* __restrict__ y) {
    for (int64_t i = 0; i < n; ++i) y[i] = s * a[i];
}

template <class Real>
void tanh(int64_t n, const Real* a, Real* y) {
    for (int64_t i = 0; i < n; ++i) y[i] = std::tanh(a[i]);
}

template <class Real>
Real gelu_one(Real x) {
    return Real(0.5) * x * (Real(1) + std::erf(x * Real(0.7071067811865475)));
}

template <class Real>
void gelu(int64_t n, const Real* a, Real* y) {
    for (int64_t i = 0; i < n; ++i) y[i] = gelu_one(a[i]);
}

}  // namespace serial

template <class Real>
void matmul_nn(int64_t m, int64_t k, int64_t n, const Real* __restrict__ a, const Real* __restrict__ b, Real* __restrict__ c) {
    const int64_t blocks = (m + 3) / 4;
#pragma omp parallel for schedule(static) if (use_threads(m * k * n))
    for (int64_t blk = 0; blk < blocks; ++blk) {
        const int64_t i0 = blk * 4;
        detail::matmul_rows(i0, std::min(i0 + 4, m), k, n, a, b, c);
    }
}

template <class Real>
void matmul_nt(int64_t m, int64_t k, int64_t n, const Real* a, const Real* b, Real* c) {
    std::vector<Real> bt(static_cast<size_t>(k * n));
    for (int64_t j = 0; j < n; ++j) {
        for (int64_t p = 0; p < k; ++p) bt[p * n + j] = b[j * k + p];
    }
    matmul_nn(m, k, n, a, bt.data(), c);
}

template <class Real>
void matmul_tn(int64_t m, int64_t k, int64_t n, const Real* a, const Real* b, Real* c) {
    std::vector<Real> at(static_cast<size_t>(m * k));
    for (int64_t i = 0; i < m; ++i) {
        for (int64_t p = 0; p < k; ++p) at[i * k + p] = a[p * m + i];
    }
    matmul_nn(m, k, n, at.data(), b, c);
}

template <class Real>
void softmax_rows(int64_t rows, int64_t cols, const Real* x, Real* y) {
#pragma omp parallel for schedule(static) if (use_threads(rows * cols))
    for (int64_t r = 0; r < rows; ++r) {
        serial::softmax_rows(1, cols, x + r * cols, y + r * cols);
    }
}

template <class Real>
void layer_norm_rows(int64_t rows, int64_t cols, const Real* x, const Real* gain, const Real* bias,
                     Real eps, Real* y, Real* mean_out, Real* rstd_out) {
#pragma omp parallel for schedule(static) if (use_threads(rows * cols))
    for (int64_t r = 0; r < rows; ++r) {
        serial::layer_norm_rows(1, cols, x + r * cols, gain, bias, eps, y + r * cols,
                                mean_out ? mean_out + r : nullptr, rstd_out ? rstd_out + r : nullptr);
    }
}

template <class Real>
void add(int64_t n, const Real* __restrict__ a, const Real* __restrict__ b, Real* __restrict__ y) {
#pragma omp parallel for schedule(static) if (use_threads(n))
    for (int64_t i = 0; i < n; ++i) y[i] = a[i] + b[i];
}

template <class Real>
void mul(int64_t n, const Real* __restrict__ a, const Real* __restrict__ b, Real* __restrict__ y) {
#pragma omp parallel for schedule(static) if (use_threads(n))
    for (int64_t i = 0; i < n; ++i) y[i] = a[i] * b[i];
}

template <class Real>
void scale(int64_t n, Real s, const Real* __restrict__ a, Real* __restrict__ y) {
#pragma omp parallel for schedule(static) if (use_threads(n))
    for (int64_t i = 0; i < n; ++i) y[i] = s * a[i];
}

template <class Real>
void tanh(int64_t n, const Real* a, Real* y) {
#pragma omp parallel for schedule(static) if (use_threads(n))
    for (int64_t i = 0; i < n; ++i) y[i] = std::tanh(a[i]);
}

template <class Real>
void gelu(int64_t n, const Real* a, Real* y) {
#pragma omp parallel for schedule(static) if (use_threads(n))
    for (int64_t i = 0; i < n; ++i) y[i] = serial::gelu_one(a[i]);
}

// Serial on purpose: a parallel reduction would make the summation order
// depend on the thread count.
template <class Real>
Real sum(int64_t n, const Real* a) {
    Real acc = Real(0);
    for (int64_t i = 0; i < n; ++i) acc += a[i];
    return acc;
}

template <class Real>
void axpy(int64_t n, Real alpha, const Real* __restrict__ x, Real* __restrict__ y) {
    for (int64_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

}  // namespace vtck::kernels
