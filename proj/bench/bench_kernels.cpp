// Benchmark of the OpenMP kernels against the serial reference. The parallel
// kernels must match the reference bit for bit (checked here too), so this is
// purely a throughput comparison.
//
//   ./vtck_bench [size_multiplier]

#include <chrono>
#include <cstdio>
#include <cstring>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "vtck/kernels.hpp"
#include "vtck/rng.hpp"

using namespace vtck;
using Clock = std::chrono::steady_clock;

namespace {

std::vector<float> random_buf(int64_t n, uint64_t seed) {
    Rng rng(seed);
    std::vector<float> v(static_cast<size_t>(n));
    for (auto& x : v) x = static_cast<float>(rng.normal());
    return v;
}

template <class Fn>
double time_ms(Fn&& fn, int iters) {
    fn();  // warm up
    const auto t0 = Clock::now();
    for (int i = 0; i < iters; ++i) fn();
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count() / iters;
}

void report(const char* name, double serial_ms, double parallel_ms, double work, bool bit_equal) {
    std::printf("%-22s serial %9.3f ms  parallel %9.3f ms  speedup %5.2fx  %8.2f GMAC/s  %s\n", name,
                serial_ms, parallel_ms, serial_ms / parallel_ms, work / parallel_ms / 1e6,
                bit_equal ? "bit-equal" : "MISMATCH");
}

}  // namespace

int main(int argc, char** argv) {
    const int64_t mult = argc > 1 ? std::atoll(argv[1]) : 1;
#ifdef _OPENMP
    std::printf("threads: %d\n", omp_get_max_threads());
#else
    std::printf("threads: 1 (built without OpenMP)\n");
#endif

    {
        const int64_t m = 256 * mult, k = 256, n = 256;
        auto a = random_buf(m * k, 1);
        auto b = random_buf(k * n, 2);
        std::vector<float> c1(static_cast<size_t>(m * n)), c2(c1.size());
        const double ser = time_ms([&] { kernels::serial::matmul_nn(m, k, n, a.data(), b.data(), c1.data()); }, 5);
        const double par = time_ms([&] { kernels::matmul_nn(m, k, n, a.data(), b.data(), c2.data()); }, 5);
        report("matmul_nn 256^3", ser, par, double(m) * k * n,
               std::memcmp(c1.data(), c2.data(), c1.size() * 4) == 0);
    }
    {
        const int64_t m = 256 * mult, k = 256, n = 256;
        auto a = random_buf(m * k, 3);
        auto b = random_buf(n * k, 4);
        std::vector<float> c1(static_cast<size_t>(m * n)), c2(c1.size());
        const double ser = time_ms([&] { kernels::serial::matmul_nt(m, k, n, a.data(), b.data(), c1.data()); }, 5);
        const double par = time_ms([&] { kernels::matmul_nt(m, k, n, a.data(), b.data(), c2.data()); }, 5);
        report("matmul_nt 256^3", ser, par, double(m) * k * n,
               std::memcmp(c1.data(), c2.data(), c1.size() * 4) == 0);
    }
    {
        const int64_t rows = 4096 * mult, cols = 256;
        auto x = random_buf(rows * cols, 5);
        std::vector<float> y1(x.size()), y2(x.size());
        const double ser = time_ms([&] { kernels::serial::softmax_rows(rows, cols, x.data(), y1.data()); }, 10);
        const double par = time_ms([&] { kernels::softmax_rows(rows, cols, x.data(), y2.data()); }, 10);
        report("softmax 4096x256", ser, par, double(rows) * cols,
               std::memcmp(y1.data(), y2.data(), y1.size() * 4) == 0);
    }
    {
        const int64_t rows = 4096 * mult, cols = 256;
        auto x = random_buf(rows * cols, 6);
        auto gain = random_buf(cols, 7);
        auto bias = random_buf(cols, 8);
        std::vector<float> y1(x.size()), y2(x.size());
        const double ser = time_ms(
            [&] {
                kernels::serial::layer_norm_rows(rows, cols, x.data(), gain.data(), bias.data(), 1e-5f,
                                                 y1.data(), static_cast<float*>(nullptr), static_cast<float*>(nullptr));
            },
            10);
        const double par = time_ms(
            [&] {
                kernels::layer_norm_rows(rows, cols, x.data(), gain.data(), bias.data(), 1e-5f, y2.data(),
                                         static_cast<float*>(nullptr), static_cast<float*>(nullptr));
            },
            10);
        report("layer_norm 4096x256", ser, par, double(rows) * cols,
               std::memcmp(y1.data(), y2.data(), y1.size() * 4) == 0);
    }
    {
        const int64_t n = 1 << 22;
        auto a = random_buf(n, 9);
        std::vector<float> y1(static_cast<size_t>(n)), y2(static_cast<size_t>(n));
        const double ser = time_ms([&] { kernels::serial::gelu(n, a.data(), y1.data()); }, 10);
        const double par = time_ms([&] { kernels::gelu(n, a.data(), y2.data()); }, 10);
        report("gelu 4M", ser, par, double(n), std::memcmp(y1.data(), y2.data(), y1.size() * 4) == 0);
    }
    return 0;
}
