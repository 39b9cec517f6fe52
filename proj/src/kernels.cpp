#include "edemajoint/kernels.hpp"

#include <algorithm>
#include <cstdlib>
#include <thread>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace edemajoint::kernels {

// Forward kernels overwrite their output; backward kernels accumulate (+=)
// so a node consumed by several downstream ops collects all contributions.

namespace detail {

inline void conv2d_fw_rows(const double* x, const double* w, const double* b, double* y,
                           const ConvDims& d, int co_begin, int co_end) {
    const int ho = d.ho(), wo = d.wo();
    for (int co = co_begin; co < co_end; ++co) {
        const double* wc = w + static_cast<std::size_t>(co) * d.cin * d.kh * d.kw;
        double* yc = y + static_cast<std::size_t>(co) * ho * wo;
        for (int oy = 0; oy < ho; ++oy) {
            for (int ox = 0; ox < wo; ++ox) {
                double acc = b ? b[co] : 0.0;
                const int iy0 = oy * d.stride - d.pad;
                const int ix0 = ox * d.stride - d.pad;
                for (int ci = 0; ci < d.cin; ++ci) {
                    const double* xc = x + static_cast<std::size_t>(ci) * d.h * d.w;
                    const double* wk = wc + static_cast<std::size_t>(ci) * d.kh * d.kw;
                    for (int ky = 0; ky < d.kh; ++ky) {
                        const int iy = iy0 + ky;
                        if (iy < 0 || iy >= d.h) continue;
                        const double* xrow = xc + static_cast<std::size_t>(iy) * d.w;
                        const double* wrow = wk + static_cast<std::size_t>(ky) * d.kw;
                        for (int kx = 0; kx < d.kw; ++kx) {
                            const int ix = ix0 + kx;
                            if (ix < 0 || ix >= d.w) continue;
                            acc += xrow[ix] * wrow[kx];
                        }
                    }
                }
                yc[static_cast<std::size_t>(oy) * wo + ox] = acc;
            }
        }
    }
}

inline void conv2d_bw_input_rows(const double* gy, const double* w, double* gx,
                                 const ConvDims& d, int ci_begin, int ci_end) {
    const int ho = d.ho(), wo = d.wo();
    for (int ci = ci_begin; ci < ci_end; ++ci) {
        double* gxc = gx + static_cast<std::size_t>(ci) * d.h * d.w;
        for (int iy = 0; iy < d.h; ++iy) {
            for (int ix = 0; ix < d.w; ++ix) {
                double acc = 0.0;
                for (int co = 0; co < d.cout; ++co) {
                    const double* gyc = gy + static_cast<std::size_t>(co) * ho * wo;
                    const double* wk = w + (static_cast<std::size_t>(co) * d.cin + ci) * d.kh * d.kw;
                    for (int ky = 0; ky < d.kh; ++ky) {
                        const int num = iy + d.pad - ky;
                        if (num < 0 || num % d.stride) continue;
                        const int oy = num / d.stride;
                        if (oy >= ho) continue;
                        for (int kx = 0; kx < d.kw; ++kx) {
                            const int numx = ix + d.pad - kx;
                            if (numx < 0 || numx % d.stride) continue;
                            const int ox = numx / d.stride;
                            if (ox >= wo) continue;
                            acc += gyc[static_cast<std::size_t>(oy) * wo + ox] *
                                   wk[static_cast<std::size_t>(ky) * d.kw + kx];
                        }
                    }
                }
                gxc[static_cast<std::size_t>(iy) * d.w + ix] += acc;
            }
        }
    }
}

inline void conv2d_bw_weight_rows(const double* gy, const double* x, double* gw, double* gb,
                                  const ConvDims& d, int co_begin, int co_end) {
    const int ho = d.ho(), wo = d.wo();
    for (int co = co_begin; co < co_end; ++co) {
        const double* gyc = gy + static_cast<std::size_t>(co) * ho * wo;
        if (gb) {
            double acc = 0.0;
            for (int i = 0; i < ho * wo; ++i) acc += gyc[i];
            gb[co] += acc;
        }
        for (int ci = 0; ci < d.cin; ++ci) {
            const double* xc = x + static_cast<std::size_t>(ci) * d.h * d.w;
            double* gwk = gw + (static_cast<std::size_t>(co) * d.cin + ci) * d.kh * d.kw;
            for (int ky = 0; ky < d.kh; ++ky) {
                for (int kx = 0; kx < d.kw; ++kx) {
                    double acc = 0.0;
                    for (int oy = 0; oy < ho; ++oy) {
                        const int iy = oy * d.stride - d.pad + ky;
                        if (iy < 0 || iy >= d.h) continue;
                        const double* xrow = xc + static_cast<std::size_t>(iy) * d.w;
                        const double* gyrow = gyc + static_cast<std::size_t>(oy) * wo;
                        for (int ox = 0; ox < wo; ++ox) {
                            const int ix = ox * d.stride - d.pad + kx;
                            if (ix < 0 || ix >= d.w) continue;
                            acc += gyrow[ox] * xrow[ix];
                        }
                    }
                    gwk[static_cast<std::size_t>(ky) * d.kw + kx] += acc;
                }
            }
        }
    }
}

inline void matmul_rows(const double* a, const double* b, double* c, int m, int k, int n,
                        int row_begin, int row_end) {
    for (int i = row_begin; i < row_end; ++i) {
        double* crow = c + static_cast<std::size_t>(i) * n;
        std::fill(crow, crow + n, 0.0);
        const double* arow = a + static_cast<std::size_t>(i) * k;
        for (int p = 0; p < k; ++p) {
            const double av = arow[p];
            const double* brow = b + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

inline void matmul_nt_rows(const double* a, const double* b, double* c, int m, int k, int n,
                           int row_begin, int row_end) {
    for (int i = row_begin; i < row_end; ++i) {
        const double* arow = a + static_cast<std::size_t>(i) * k;
        double* crow = c + static_cast<std::size_t>(i) * n;
        for (int j = 0; j < n; ++j) {
            const double* brow = b + static_cast<std::size_t>(j) * k;
            double acc = 0.0;
            for (int p = 0; p < k; ++p) acc += arow[p] * brow[p];
            crow[j] = acc;
        }
    }
}

inline void matmul_tn_rows(const double* a, const double* b, double* c, int m, int k, int n,
                           int row_begin, int row_end) {
    // a stored [k][m]
    for (int i = row_begin; i < row_end; ++i) {
        double* crow = c + static_cast<std::size_t>(i) * n;
        std::fill(crow, crow + n, 0.0);
        for (int p = 0; p < k; ++p) {
            const double av = a[static_cast<std::size_t>(p) * m + i];
            const double* brow = b + static_cast<std::size_t>(p) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

}  // namespace detail

namespace serial {

void conv2d_fw(const double* x, const double* w, const double* b, double* y, const ConvDims& d) {
    detail::conv2d_fw_rows(x, w, b, y, d, 0, d.cout);
}
void conv2d_bw_input(const double* gy, const double* w, double* gx, const ConvDims& d) {
    detail::conv2d_bw_input_rows(gy, w, gx, d, 0, d.cin);
}
void conv2d_bw_weight(const double* gy, const double* x, double* gw, double* gb,
                      const ConvDims& d) {
    detail::conv2d_bw_weight_rows(gy, x, gw, gb, d, 0, d.cout);
}
void matmul(const double* a, const double* b, double* c, int m, int k, int n) {
    detail::matmul_rows(a, b, c, m, k, n, 0, m);
}
void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n) {
    detail::matmul_nt_rows(a, b, c, m, k, n, 0, m);
}
void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n) {
    detail::matmul_tn_rows(a, b, c, m, k, n, 0, m);
}

}  // namespace serial

namespace omp {

void conv2d_fw(const double* x, const double* w, const double* b, double* y, const ConvDims& d) {
#pragma omp parallel for schedule(static) num_threads(max_threads())
    for (int co = 0; co < d.cout; ++co) detail::conv2d_fw_rows(x, w, b, y, d, co, co + 1);
}
void conv2d_bw_input(const double* gy, const double* w, double* gx, const ConvDims& d) {
#pragma omp parallel for schedule(static) num_threads(max_threads())
    for (int ci = 0; ci < d.cin; ++ci) detail::conv2d_bw_input_rows(gy, w, gx, d, ci, ci + 1);
}
void conv2d_bw_weight(const double* gy, const double* x, double* gw, double* gb,
                      const ConvDims& d) {
#pragma omp parallel for schedule(static) num_threads(max_threads())
    for (int co = 0; co < d.cout; ++co) detail::conv2d_bw_weight_rows(gy, x, gw, gb, d, co, co + 1);
}
void matmul(const double* a, const double* b, double* c, int m, int k, int n) {
#pragma omp parallel for schedule(static) num_threads(max_threads())
    for (int i = 0; i < m; ++i) detail::matmul_rows(a, b, c, m, k, n, i, i + 1);
}
void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n) {
#pragma omp parallel for schedule(static) num_threads(max_threads())
    for (int i = 0; i < m; ++i) detail::matmul_nt_rows(a, b, c, m, k, n, i, i + 1);
}
void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n) {
#pragma omp parallel for schedule(static) num_threads(max_threads())
    for (int i = 0; i < m; ++i) detail::matmul_tn_rows(a, b, c, m, k, n, i, i + 1);
}

}  // namespace omp

namespace {

int g_max_threads = [] {
    if (const char* env = std::getenv("EDEMAJOINT_THREADS")) {
        int v = std::atoi(env);
        if (v >= 1) return v;
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw ? static_cast<int>(hw) : 1;
}();

}  // namespace

void set_max_threads(int n) { g_max_threads = std::max(1, n); }
int max_threads() { return g_max_threads; }

#ifdef _OPENMP
static constexpr bool kHaveOmp = true;
#else
static constexpr bool kHaveOmp = false;
#endif

void conv2d_fw(const double* x, const double* w, const double* b, double* y, const ConvDims& d) {
    if (kHaveOmp && max_threads() > 1)
        omp::conv2d_fw(x, w, b, y, d);
    else
        serial::conv2d_fw(x, w, b, y, d);
}
void conv2d_bw_input(const double* gy, const double* w, double* gx, const ConvDims& d) {
    if (kHaveOmp && max_threads() > 1)
        omp::conv2d_bw_input(gy, w, gx, d);
    else
        serial::conv2d_bw_input(gy, w, gx, d);
}
void conv2d_bw_weight(const double* gy, const double* x, double* gw, double* gb,
                      const ConvDims& d) {
    if (kHaveOmp && max_threads() > 1)
        omp::conv2d_bw_weight(gy, x, gw, gb, d);
    else
        serial::conv2d_bw_weight(gy, x, gw, gb, d);
}
void matmul(const double* a, const double* b, double* c, int m, int k, int n) {
    if (kHaveOmp && max_threads() > 1)
        omp::matmul(a, b, c, m, k, n);
    else
        serial::matmul(a, b, c, m, k, n);
}
void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n) {
    if (kHaveOmp && max_threads() > 1)
        omp::matmul_nt(a, b, c, m, k, n);
    else
        serial::matmul_nt(a, b, c, m, k, n);
}
void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n) {
    if (kHaveOmp && max_threads() > 1)
        omp::matmul_tn(a, b, c, m, k, n);
    else
        serial::matmul_tn(a, b, c, m, k, n);
}

}  // namespace edemajoint::kernels
