// Benchmark comparing the serial reference kernels against the OpenMP
// variants on convolution and matmul shapes used by the encoders.

#include <chrono>
#include <cstdio>
#include <vector>

#include "edemajoint/kernels.hpp"
#include "edemajoint/rng.hpp"

using namespace edemajoint;

namespace {

std::vector<double> random_vec(std::size_t n, Rng& rng) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.uniform(-1.0, 1.0);
    return v;
}

template <typename Fn>
double time_ms(Fn&& fn, int reps) {
    fn();  // warm-up
    auto t0 = std::chrono::steady_clock::now();
    for (int i = 0; i < reps; ++i) fn();
    auto t1 = std::chrono::steady_clock::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count() / reps;
}

}  // namespace

int main() {
    Rng rng(2024);
    std::printf("threads available: %d\n", kernels::max_threads());

    {
        kernels::ConvDims d{8, 16, 16, 16, 3, 3, 1, 1};
        auto x = random_vec(static_cast<std::size_t>(d.cin * d.h * d.w), rng);
        auto w = random_vec(static_cast<std::size_t>(d.cout * d.cin * d.kh * d.kw), rng);
        auto b = random_vec(static_cast<std::size_t>(d.cout), rng);
        std::vector<double> y(static_cast<std::size_t>(d.cout * d.ho() * d.wo()));
        double ts = time_ms(
            [&] { kernels::serial::conv2d_fw(x.data(), w.data(), b.data(), y.data(), d); }, 50);
        double tp = time_ms(
            [&] { kernels::omp::conv2d_fw(x.data(), w.data(), b.data(), y.data(), d); }, 50);
        std::printf("conv2d 8x16x16 -> 16ch 3x3 : serial %.3f ms, omp %.3f ms, speedup %.2fx\n",
                    ts, tp, ts / tp);
    }
    {
        int m = 64, k = 256, n = 64;
        auto a = random_vec(static_cast<std::size_t>(m * k), rng);
        auto b = random_vec(static_cast<std::size_t>(k * n), rng);
        std::vector<double> c(static_cast<std::size_t>(m * n));
        double ts =
            time_ms([&] { kernels::serial::matmul(a.data(), b.data(), c.data(), m, k, n); }, 50);
        double tp =
            time_ms([&] { kernels::omp::matmul(a.data(), b.data(), c.data(), m, k, n); }, 50);
        std::printf("matmul 64x256 * 256x64    : serial %.3f ms, omp %.3f ms, speedup %.2fx\n",
                    ts, tp, ts / tp);
    }
    {
        int m = 64, k = 64, n = 64;
        auto a = random_vec(static_cast<std::size_t>(m * k), rng);
        auto b = random_vec(static_cast<std::size_t>(n * k), rng);
        std::vector<double> c(static_cast<std::size_t>(m * n));
        double ts =
            time_ms([&] { kernels::serial::matmul_nt(a.data(), b.data(), c.data(), m, k, n); }, 100);
        double tp =
            time_ms([&] { kernels::omp::matmul_nt(a.data(), b.data(), c.data(), m, k, n); }, 100);
        std::printf("matmul_nt 64x64 * (64x64)T: serial %.3f ms, omp %.3f ms, speedup %.2fx\n",
                    ts, tp, ts / tp);
    }
    return 0;
}
