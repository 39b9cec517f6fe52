#pragma once

#include <cstddef>

namespace edemajoint::kernels {

// Low-level dense kernels behind the autodiff ops. Each kernel has a serial
// reference implementation (namespace serial) and an OpenMP variant
// (namespace omp). The omp variants partition work so that every output
// element is written by exactly one thread; results are bit-identical to the
// serial reference for any thread count.
//
// Conventions: tensors are row-major doubles.
//   conv input  x[Cin][H][W], weight w[Cout][Cin][kh][kw], bias b[Cout]
//   output      y[Cout][Ho][Wo] with Ho=(H+2p-kh)/s+1, Wo=(W+2p-kw)/s+1
//   matmul      C[m][n] = A[m][k] * B[k][n]   (op_nt: B given as [n][k])

struct ConvDims {
    int cin, h, w;
    int cout, kh, kw;
    int stride, pad;
    int ho() const { return (h + 2 * pad - kh) / stride + 1; }
    int wo() const { return (w + 2 * pad - kw) / stride + 1; }
};

namespace serial {

void conv2d_fw(const double* x, const double* w, const double* b, double* y, const ConvDims& d);
void conv2d_bw_input(const double* gy, const double* w, double* gx, const ConvDims& d);
void conv2d_bw_weight(const double* gy, const double* x, double* gw, double* gb,
                      const ConvDims& d);

void matmul(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n);

}  // namespace serial

namespace omp {

void conv2d_fw(const double* x, const double* w, const double* b, double* y, const ConvDims& d);
void conv2d_bw_input(const double* gy, const double* w, double* gx, const ConvDims& d);
void conv2d_bw_weight(const double* gy, const double* x, double* gw, double* gb,
                      const ConvDims& d);

void matmul(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n);

}  // namespace omp

// Worker cap, applied to all omp kernels. Defaults to the hardware thread
// count; the EDEMAJOINT_THREADS environment variable overrides it.
void set_max_threads(int n);
int max_threads();

// Dispatch: omp variant when more than one worker is allowed, serial otherwise.
void conv2d_fw(const double* x, const double* w, const double* b, double* y, const ConvDims& d);
void conv2d_bw_input(const double* gy, const double* w, double* gx, const ConvDims& d);
void conv2d_bw_weight(const double* gy, const double* x, double* gw, double* gb,
                      const ConvDims& d);
void matmul(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_nt(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_tn(const double* a, const double* b, double* c, int m, int k, int n);

}  // namespace edemajoint::kernels
