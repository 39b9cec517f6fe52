#include <doctest.h>

#include <vector>

#include "edemajoint/kernels.hpp"
#include "edemajoint/rng.hpp"

using namespace edemajoint;
using namespace edemajoint::kernels;

namespace {

std::vector<double> random_vec(std::size_t n, Rng& rng) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.uniform(-1.0, 1.0);
    return v;
}

}  // namespace

TEST_CASE("conv2d forward: omp matches serial bit-for-bit") {
    Rng rng(1);
    for (int stride : {1, 2}) {
        ConvDims d{3, 10, 10, 5, 3, 3, stride, 1};
        auto x = random_vec(static_cast<std::size_t>(d.cin * d.h * d.w), rng);
        auto w = random_vec(static_cast<std::size_t>(d.cout * d.cin * d.kh * d.kw), rng);
        auto b = random_vec(static_cast<std::size_t>(d.cout), rng);
        std::vector<double> y1(static_cast<std::size_t>(d.cout * d.ho() * d.wo()));
        std::vector<double> y2(y1.size());
        serial::conv2d_fw(x.data(), w.data(), b.data(), y1.data(), d);
        omp::conv2d_fw(x.data(), w.data(), b.data(), y2.data(), d);
        CHECK(y1 == y2);
    }
}

TEST_CASE("conv2d backward: omp matches serial bit-for-bit") {
    Rng rng(2);
    ConvDims d{4, 8, 8, 6, 3, 3, 2, 1};
    auto x = random_vec(static_cast<std::size_t>(d.cin * d.h * d.w), rng);
    auto w = random_vec(static_cast<std::size_t>(d.cout * d.cin * d.kh * d.kw), rng);
    auto gy = random_vec(static_cast<std::size_t>(d.cout * d.ho() * d.wo()), rng);

    std::vector<double> gx1(x.size(), 0.25), gx2(x.size(), 0.25);
    serial::conv2d_bw_input(gy.data(), w.data(), gx1.data(), d);
    omp::conv2d_bw_input(gy.data(), w.data(), gx2.data(), d);
    CHECK(gx1 == gx2);

    std::vector<double> gw1(w.size(), 0.5), gw2(w.size(), 0.5);
    std::vector<double> gb1(static_cast<std::size_t>(d.cout), 0.5), gb2(gb1);
    serial::conv2d_bw_weight(gy.data(), x.data(), gw1.data(), gb1.data(), d);
    omp::conv2d_bw_weight(gy.data(), x.data(), gw2.data(), gb2.data(), d);
    CHECK(gw1 == gw2);
    CHECK(gb1 == gb2);
}

TEST_CASE("matmul family: omp matches serial bit-for-bit") {
    Rng rng(3);
    const int m = 9, k = 7, n = 11;
    auto a = random_vec(static_cast<std::size_t>(m * k), rng);
    auto b = random_vec(static_cast<std::size_t>(k * n), rng);
    auto bt = random_vec(static_cast<std::size_t>(n * k), rng);
    auto at = random_vec(static_cast<std::size_t>(k * m), rng);
    std::vector<double> c1(static_cast<std::size_t>(m * n)), c2(c1);

    serial::matmul(a.data(), b.data(), c1.data(), m, k, n);
    omp::matmul(a.data(), b.data(), c2.data(), m, k, n);
    CHECK(c1 == c2);

    serial::matmul_nt(a.data(), bt.data(), c1.data(), m, k, n);
    omp::matmul_nt(a.data(), bt.data(), c2.data(), m, k, n);
    CHECK(c1 == c2);

    serial::matmul_tn(at.data(), b.data(), c1.data(), m, k, n);
    omp::matmul_tn(at.data(), b.data(), c2.data(), m, k, n);
    CHECK(c1 == c2);
}

TEST_CASE("matmul: tiny hand case") {
    // [1 2; 3 4] * [5 6; 7 8] = [19 22; 43 50]
    std::vector<double> a = {1, 2, 3, 4}, b = {5, 6, 7, 8}, c(4);
    serial::matmul(a.data(), b.data(), c.data(), 2, 2, 2);
    CHECK(c == std::vector<double>{19, 22, 43, 50});
    omp::matmul(a.data(), b.data(), c.data(), 2, 2, 2);
    CHECK(c == std::vector<double>{19, 22, 43, 50});
}

TEST_CASE("conv2d: identity kernel reproduces the input channel") {
    ConvDims d{1, 4, 4, 1, 1, 1, 1, 0};
    std::vector<double> x = {1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12, 13, 14, 15, 16};
    std::vector<double> w = {1.0}, b = {0.0}, y(16);
    serial::conv2d_fw(x.data(), w.data(), b.data(), y.data(), d);
    CHECK(y == x);
}

TEST_CASE("thread cap responds to set_max_threads") {
    int original = max_threads();
    set_max_threads(1);
    CHECK(max_threads() == 1);
    set_max_threads(4);
    CHECK(max_threads() == 4);
    set_max_threads(original);
    CHECK(max_threads() == original);
}

TEST_CASE("dispatch entry points agree with the serial reference") {
    Rng rng(4);
    ConvDims d{2, 6, 6, 3, 3, 3, 1, 1};
    auto x = random_vec(static_cast<std::size_t>(d.cin * d.h * d.w), rng);
    auto w = random_vec(static_cast<std::size_t>(d.cout * d.cin * d.kh * d.kw), rng);
    auto b = random_vec(static_cast<std::size_t>(d.cout), rng);
    std::vector<double> y1(static_cast<std::size_t>(d.cout * d.ho() * d.wo())), y2(y1);
    serial::conv2d_fw(x.data(), w.data(), b.data(), y1.data(), d);
    for (int cap : {1, 3}) {
        set_max_threads(cap);
        conv2d_fw(x.data(), w.data(), b.data(), y2.data(), d);
        CHECK(y1 == y2);
    }
}
