#pragma once

#include <cstdint>
#include <vector>

#include "platoon/matrix.hpp"

// Dense kernels behind the neural substrate and the Monte-Carlo estimators.
// Each kernel exists in two forms: `serial` is the reference used by the tests,
// `parallel` distributes independent output elements over OpenMP threads. Every
// output element is reduced by one thread in a fixed order, so both forms give
// bit-identical results regardless of thread count.
namespace platoon::kernels {

namespace serial {
// c = a * b^T          a: m x k, b: n x k, c: m x n
void gemm_nt(const Matrix& a, const Matrix& b, Matrix& c);
// c += a * b           a: m x k, b: k x n, c: m x n
void gemm_nn_acc(const Matrix& a, const Matrix& b, Matrix& c);
// c += a^T * b         a: m x n, b: m x k, c: n x k
void gemm_tn_acc(const Matrix& a, const Matrix& b, Matrix& c);
// Count of entries strictly below threshold.
std::int64_t count_below(const std::vector<double>& values, double threshold);
}  // namespace serial

namespace parallel {
void gemm_nt(const Matrix& a, const Matrix& b, Matrix& c);
void gemm_nn_acc(const Matrix& a, const Matrix& b, Matrix& c);
void gemm_tn_acc(const Matrix& a, const Matrix& b, Matrix& c);
std::int64_t count_below(const std::vector<double>& values, double threshold);
}  // namespace parallel

/// Worker threads used by the dispatching kernels. Defaults to 1; the CLI
/// reads PLATOON_SIM_THREADS.
void set_thread_count(int threads);
int thread_count();

// Dispatch to the parallel form when more than one thread is configured and
// the problem is large enough to amortize the fork.
void gemm_nt(const Matrix& a, const Matrix& b, Matrix& c);
void gemm_nn_acc(const Matrix& a, const Matrix& b, Matrix& c);
void gemm_tn_acc(const Matrix& a, const Matrix& b, Matrix& c);

}  // namespace platoon::kernels
