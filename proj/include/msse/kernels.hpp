#pragma once

// Dense compute kernels behind the tensor ops. Every kernel exists twice:
// a plain serial reference (kernels::serial) and an OpenMP version
// (kernels::omp) that parallelizes over independent output elements only,
// so both produce bitwise-identical results. The free functions at
// namespace scope dispatch on the global mode.
//
// Layouts (row-major):
//   matmul   a[m x k] * b[k x n] -> y[m x n]
//   conv2d   x[H x W x Cin], w[kh x kw x Cin x Cout], same zero padding
//   conv1d   x[T x Cin], w[k x Cin x Cout], causal left padding (k-1)*dil

namespace msse::kernels {

// Global execution mode; true selects the OpenMP kernels.
bool parallel_enabled();
void set_parallel(bool on);

namespace serial {
void matmul(const double* a, const double* b, double* y, int m, int k, int n);
void conv2d(const double* x, const double* w, const double* bias, double* y,
            int H, int W, int Cin, int kh, int kw, int Cout);
void conv2d_grad_x(const double* dy, const double* w, double* dx,
                   int H, int W, int Cin, int kh, int kw, int Cout);
void conv2d_grad_w(const double* x, const double* dy, double* dw,
                   int H, int W, int Cin, int kh, int kw, int Cout);
void conv1d(const double* x, const double* w, double* y,
            int T, int Cin, int k, int Cout, int dilation);
void conv1d_grad_x(const double* dy, const double* w, double* dx,
                   int T, int Cin, int k, int Cout, int dilation);
void conv1d_grad_w(const double* x, const double* dy, double* dw,
                   int T, int Cin, int k, int Cout, int dilation);
}  // namespace serial

namespace omp {
void matmul(const double* a, const double* b, double* y, int m, int k, int n);
void conv2d(const double* x, const double* w, const double* bias, double* y,
            int H, int W, int Cin, int kh, int kw, int Cout);
void conv2d_grad_x(const double* dy, const double* w, double* dx,
                   int H, int W, int Cin, int kh, int kw, int Cout);
void conv2d_grad_w(const double* x, const double* dy, double* dw,
                   int H, int W, int Cin, int kh, int kw, int Cout);
void conv1d(const double* x, const double* w, double* y,
            int T, int Cin, int k, int Cout, int dilation);
void conv1d_grad_x(const double* dy, const double* w, double* dx,
                   int T, int Cin, int k, int Cout, int dilation);
void conv1d_grad_w(const double* x, const double* dy, double* dw,
                   int T, int Cin, int k, int Cout, int dilation);
}  // namespace omp

void matmul(const double* a, const double* b, double* y, int m, int k, int n);
void conv2d(const double* x, const double* w, const double* bias, double* y,
            int H, int W, int Cin, int kh, int kw, int Cout);
void conv2d_grad_x(const double* dy, const double* w, double* dx,
                   int H, int W, int Cin, int kh, int kw, int Cout);
void conv2d_grad_w(const double* x, const double* dy, double* dw,
                   int H, int W, int Cin, int kh, int kw, int Cout);
void conv1d(const double* x, const double* w, double* y,
            int T, int Cin, int k, int Cout, int dilation);
void conv1d_grad_x(const double* dy, const double* w, double* dx,
                   int T, int Cin, int k, int Cout, int dilation);
void conv1d_grad_w(const double* x, const double* dy, double* dw,
                   int T, int Cin, int k, int Cout, int dilation);

}  // namespace msse::kernels
