#include "platoon/kernels.hpp"

#include <omp.h>

#include <atomic>
#include <string>

#include "platoon/errors.hpp"

namespace platoon {

namespace kernels {

namespace {

std::atomic<int> g_threads{1};
constexpr std::size_t kParallelWork = 1 << 15;

void check(bool ok, const char* what) {
  if (!ok) throw ShapeError(std::string("kernel shape mismatch: ") + what);
}

inline void axpy(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

Matrix transpose(const Matrix& b) {
  Matrix t(b.cols(), b.rows());
  for (std::size_t r = 0; r < b.rows(); ++r) {
    for (std::size_t c = 0; c < b.cols(); ++c) t(c, r) = b(r, c);
  }
  return t;
}

// y += sum_p alpha[p * stride] * x_p for four consecutive rows x_p of length n,
// added one after another so each y[i] sees the same order as four axpy calls.
inline void axpy4(const double* alpha, std::size_t stride, const double* x, std::size_t ldx,
                  double* __restrict y, std::size_t n) {
  const double a0 = alpha[0], a1 = alpha[stride], a2 = alpha[2 * stride], a3 = alpha[3 * stride];
  const double* __restrict x0 = x;
  const double* __restrict x1 = x + ldx;
  const double* __restrict x2 = x + 2 * ldx;
  const double* __restrict x3 = x + 3 * ldx;
  for (std::size_t i = 0; i < n; ++i) {
    double t = y[i];
    t += a0 * x0[i];
    t += a1 * x1[i];
    t += a2 * x2[i];
    t += a3 * x3[i];
    y[i] = t;
  }
}

// y += sum_p alpha[p * stride] * (row p of x), p = 0..k-1, in order of p.
inline void accumulate_rows(const double* alpha, std::size_t stride, const double* x,
                            std::size_t k, std::size_t n, double* y) {
  std::size_t p = 0;
  for (; p + 4 <= k; p += 4) axpy4(alpha + p * stride, stride, x + p * n, n, y, n);
  for (; p < k; ++p) axpy(alpha[p * stride], x + p * n, y, n);
}

// out = x * bt for one row x; each output sums over the inner index in order.
inline void row_times(const double* x, const Matrix& bt, double* out) {
  accumulate_rows(x, 1, bt.data(), bt.rows(), bt.cols(), out);
}

}  // namespace

namespace serial {

void gemm_nt(const Matrix& a, const Matrix& b, Matrix& c) {
  check(a.cols() == b.cols(), "gemm_nt inner");
  c = Matrix(a.rows(), b.rows());
  const Matrix bt = transpose(b);
  for (std::size_t i = 0; i < a.rows(); ++i) row_times(a.data() + i * a.cols(), bt, c.data() + i * c.cols());
}

void gemm_nn_acc(const Matrix& a, const Matrix& b, Matrix& c) {
  check(a.cols() == b.rows() && c.rows() == a.rows() && c.cols() == b.cols(), "gemm_nn_acc");
  const std::size_t n = b.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    accumulate_rows(a.data() + i * a.cols(), 1, b.data(), a.cols(), n, c.data() + i * n);
  }
}

void gemm_tn_acc(const Matrix& a, const Matrix& b, Matrix& c) {
  check(a.rows() == b.rows() && c.rows() == a.cols() && c.cols() == b.cols(), "gemm_tn_acc");
  const std::size_t k = b.cols();
  for (std::size_t j = 0; j < a.cols(); ++j) {
    accumulate_rows(a.data() + j, a.cols(), b.data(), a.rows(), k, c.data() + j * k);
  }
}

std::int64_t count_below(const std::vector<double>& values, double threshold) {
  std::int64_t count = 0;
  for (double v : values) count += v < threshold ? 1 : 0;
  return count;
}

}  // namespace serial

namespace parallel {

void gemm_nt(const Matrix& a, const Matrix& b, Matrix& c) {
  check(a.cols() == b.cols(), "gemm_nt inner");
  c = Matrix(a.rows(), b.rows());
  const Matrix bt = transpose(b);
  const auto m = static_cast<std::int64_t>(a.rows());
#pragma omp parallel for schedule(static) num_threads(g_threads.load())
  for (std::int64_t i = 0; i < m; ++i) {
    row_times(a.data() + i * a.cols(), bt, c.data() + i * c.cols());
  }
}

void gemm_nn_acc(const Matrix& a, const Matrix& b, Matrix& c) {
  check(a.cols() == b.rows() && c.rows() == a.rows() && c.cols() == b.cols(), "gemm_nn_acc");
  const std::size_t n = b.cols();
  const auto m = static_cast<std::int64_t>(a.rows());
#pragma omp parallel for schedule(static) num_threads(g_threads.load())
  for (std::int64_t i = 0; i < m; ++i) {
    accumulate_rows(a.data() + i * a.cols(), 1, b.data(), a.cols(), n, c.data() + i * n);
  }
}

void gemm_tn_acc(const Matrix& a, const Matrix& b, Matrix& c) {
  check(a.rows() == b.rows() && c.rows() == a.cols() && c.cols() == b.cols(), "gemm_tn_acc");
  const std::size_t k = b.cols();
  const auto n = static_cast<std::int64_t>(a.cols());
#pragma omp parallel for schedule(static) num_threads(g_threads.load())
  for (std::int64_t j = 0; j < n; ++j) {
    accumulate_rows(a.data() + j, a.cols(), b.data(), a.rows(), k, c.data() + j * k);
  }
}

std::int64_t count_below(const std::vector<double>& values, double threshold) {
  std::int64_t count = 0;
  const auto n = static_cast<std::int64_t>(values.size());
#pragma omp parallel for reduction(+ : count) schedule(static) num_threads(g_threads.load())
  for (std::int64_t i = 0; i < n; ++i) count += values[i] < threshold ? 1 : 0;
  return count;
}

}  // namespace parallel

void set_thread_count(int threads) { g_threads.store(threads < 1 ? 1 : threads); }
int thread_count() { return g_threads.load(); }

void gemm_nt(const Matrix& a, const Matrix& b, Matrix& c) {
  if (g_threads.load() > 1 && a.rows() * b.rows() * a.cols() >= kParallelWork) {
    parallel::gemm_nt(a, b, c);
  } else {
    serial::gemm_nt(a, b, c);
  }
}

void gemm_nn_acc(const Matrix& a, const Matrix& b, Matrix& c) {
  if (g_threads.load() > 1 && a.rows() * a.cols() * b.cols() >= kParallelWork) {
    parallel::gemm_nn_acc(a, b, c);
  } else {
    serial::gemm_nn_acc(a, b, c);
  }
}

void gemm_tn_acc(const Matrix& a, const Matrix& b, Matrix& c) {
  if (g_threads.load() > 1 && a.rows() * a.cols() * b.cols() >= kParallelWork) {
    parallel::gemm_tn_acc(a, b, c);
  } else {
    serial::gemm_tn_acc(a, b, c);
  }
}

}  // namespace kernels
}  // namespace platoon
