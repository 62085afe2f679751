#include "msse/kernels.hpp"

// Reference kernels: straightforward nested loops, no pragmas. These are
// the ground truth the OpenMP kernels are tested against.

namespace msse::kernels::serial {

void matmul(const double* a, const double* b, double* y, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
            y[i * n + j] = acc;
        }
    }
}

void conv2d(const double* x, const double* w, const double* bias, double* y,
            int H, int W, int Cin, int kh, int kw, int Cout) {
    const int ph = kh / 2, pw = kw / 2;
    for (int h = 0; h < H; ++h) {
        for (int wd = 0; wd < W; ++wd) {
            for (int co = 0; co < Cout; ++co) {
                double acc = bias ? bias[co] : 0.0;
                for (int dh = 0; dh < kh; ++dh) {
                    const int sh = h + dh - ph;
                    if (sh < 0 || sh >= H) continue;
                    for (int dw = 0; dw < kw; ++dw) {
                        const int sw = wd + dw - pw;
                        if (sw < 0 || sw >= W) continue;
                        for (int ci = 0; ci < Cin; ++ci) {
                            acc += x[(sh * W + sw) * Cin + ci] *
                                   w[((dh * kw + dw) * Cin + ci) * Cout + co];
                        }
                    }
                }
                y[(h * W + wd) * Cout + co] = acc;
            }
        }
    }
}

void conv2d_grad_x(const double* dy, const double* w, double* dx,
                   int H, int W, int Cin, int kh, int kw, int Cout) {
    const int ph = kh / 2, pw = kw / 2;
    for (int h = 0; h < H; ++h) {
        for (int wd = 0; wd < W; ++wd) {
            for (int ci = 0; ci < Cin; ++ci) {
                double acc = 0.0;
                for (int dh = 0; dh < kh; ++dh) {
                    const int oh = h - dh + ph;
                    if (oh < 0 || oh >= H) continue;
                    for (int dw = 0; dw < kw; ++dw) {
                        const int ow = wd - dw + pw;
                        if (ow < 0 || ow >= W) continue;
                        for (int co = 0; co < Cout; ++co) {
                            acc += dy[(oh * W + ow) * Cout + co] *
                                   w[((dh * kw + dw) * Cin + ci) * Cout + co];
                        }
                    }
                }
                dx[(h * W + wd) * Cin + ci] = acc;
            }
        }
    }
}

void conv2d_grad_w(const double* x, const double* dy, double* dw,
                   int H, int W, int Cin, int kh, int kw, int Cout) {
    const int ph = kh / 2, pw = kw / 2;
    for (int dh = 0; dh < kh; ++dh) {
        for (int dwd = 0; dwd < kw; ++dwd) {
            for (int ci = 0; ci < Cin; ++ci) {
                for (int co = 0; co < Cout; ++co) {
                    double acc = 0.0;
                    for (int h = 0; h < H; ++h) {
                        const int sh = h + dh - ph;
                        if (sh < 0 || sh >= H) continue;
                        for (int wd = 0; wd < W; ++wd) {
                            const int sw = wd + dwd - pw;
                            if (sw < 0 || sw >= W) continue;
                            acc += x[(sh * W + sw) * Cin + ci] *
                                   dy[(h * W + wd) * Cout + co];
                        }
                    }
                    dw[((dh * kw + dwd) * Cin + ci) * Cout + co] = acc;
                }
            }
        }
    }
}

void conv1d(const double* x, const double* w, double* y,
            int T, int Cin, int k, int Cout, int dilation) {
    // tap i = k-1 lands on the current frame; earlier taps look back
    for (int t = 0; t < T; ++t) {
        for (int co = 0; co < Cout; ++co) {
            double acc = 0.0;
            for (int i = 0; i < k; ++i) {
                const int s = t - (k - 1 - i) * dilation;
                if (s < 0) continue;
                for (int ci = 0; ci < Cin; ++ci) {
                    acc += x[s * Cin + ci] * w[(i * Cin + ci) * Cout + co];
                }
            }
            y[t * Cout + co] = acc;
        }
    }
}

void conv1d_grad_x(const double* dy, const double* w, double* dx,
                   int T, int Cin, int k, int Cout, int dilation) {
    for (int t = 0; t < T; ++t) {
        for (int ci = 0; ci < Cin; ++ci) {
            double acc = 0.0;
            for (int i = 0; i < k; ++i) {
                const int o = t + (k - 1 - i) * dilation;
                if (o >= T) continue;
                for (int co = 0; co < Cout; ++co) {
                    acc += dy[o * Cout + co] * w[(i * Cin + ci) * Cout + co];
                }
            }
            dx[t * Cin + ci] = acc;
        }
    }
}

void conv1d_grad_w(const double* x, const double* dy, double* dw,
                   int T, int Cin, int k, int Cout, int dilation) {
    for (int i = 0; i < k; ++i) {
        for (int ci = 0; ci < Cin; ++ci) {
            for (int co = 0; co < Cout; ++co) {
                double acc = 0.0;
                for (int t = 0; t < T; ++t) {
                    const int s = t - (k - 1 - i) * dilation;
                    if (s < 0) continue;
                    acc += x[s * Cin + ci] * dy[t * Cout + co];
                }
                dw[(i * Cin + ci) * Cout + co] = acc;
            }
        }
    }
}

}  // namespace msse::kernels::serial
