// Times the serial reference kernels against the OpenMP ones on
// model-shaped workloads and checks the outputs stay bitwise identical.
// Exits nonzero if any pair diverges.

#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <string>
#include <vector>

#include "msse/kernels.hpp"
#include "msse/rng.hpp"

namespace {

using msse::Rng;

std::vector<double> random_vec(std::size_t n, Rng& rng) {
    std::vector<double> v(n);
    for (auto& x : v) x = rng.normal();
    return v;
}

double time_ms(const std::function<void()>& f, int reps) {
    double best = 1e300;
    for (int r = 0; r < reps; ++r) {
        const auto t0 = std::chrono::steady_clock::now();
        f();
        const auto t1 = std::chrono::steady_clock::now();
        best = std::min(best, std::chrono::duration<double, std::milli>(t1 - t0).count());
    }
    return best;
}

bool report(const char* name, const std::string& shape, const std::function<void()>& serial,
            const std::function<void()>& omp, const std::vector<double>& ys,
            const std::vector<double>& yo, int reps) {
    const double ts = time_ms(serial, reps);
    const double to = time_ms(omp, reps);
    const bool same = std::memcmp(ys.data(), yo.data(), ys.size() * sizeof(double)) == 0;
    std::printf("%-8s %-28s %10.3f %10.3f %8.2fx   %s\n", name, shape.c_str(), ts, to,
                ts / to, same ? "bitwise-equal" : "DIVERGED");
    return same;
}

}  // namespace

int main() {
    Rng rng(42);
    bool ok = true;
    const int reps = 5;

    std::printf("%-8s %-28s %10s %10s %9s   %s\n", "kernel", "shape", "serial ms", "omp ms",
                "speedup", "check");

    {
        const int m = 256, k = 256, n = 256;
        auto a = random_vec(static_cast<std::size_t>(m) * k, rng);
        auto b = random_vec(static_cast<std::size_t>(k) * n, rng);
        std::vector<double> ys(static_cast<std::size_t>(m) * n), yo(ys.size());
        ok &= report(
            "matmul", "256x256 * 256x256",
            [&] { msse::kernels::serial::matmul(a.data(), b.data(), ys.data(), m, k, n); },
            [&] { msse::kernels::omp::matmul(a.data(), b.data(), yo.data(), m, k, n); }, ys, yo,
            reps);
    }

    {
        const int H = 39, W = 300, Cin = 1, kh = 9, kw = 1, Cout = 39;
        auto x = random_vec(static_cast<std::size_t>(H) * W * Cin, rng);
        auto w = random_vec(static_cast<std::size_t>(kh) * kw * Cin * Cout, rng);
        auto bias = random_vec(Cout, rng);
        std::vector<double> ys(static_cast<std::size_t>(H) * W * Cout), yo(ys.size());
        ok &= report(
            "conv2d", "39x300x1, 9x1 -> 39",
            [&] {
                msse::kernels::serial::conv2d(x.data(), w.data(), bias.data(), ys.data(), H, W,
                                              Cin, kh, kw, Cout);
            },
            [&] {
                msse::kernels::omp::conv2d(x.data(), w.data(), bias.data(), yo.data(), H, W, Cin,
                                           kh, kw, Cout);
            },
            ys, yo, reps);
    }

    {
        const int T = 2048, Cin = 39, k = 2, Cout = 39, dil = 256;
        auto x = random_vec(static_cast<std::size_t>(T) * Cin, rng);
        auto w = random_vec(static_cast<std::size_t>(k) * Cin * Cout, rng);
        std::vector<double> ys(static_cast<std::size_t>(T) * Cout), yo(ys.size());
        ok &= report(
            "conv1d", "T=2048 C=39 k=2 dil=256",
            [&] {
                msse::kernels::serial::conv1d(x.data(), w.data(), ys.data(), T, Cin, k, Cout,
                                              dil);
            },
            [&] {
                msse::kernels::omp::conv1d(x.data(), w.data(), yo.data(), T, Cin, k, Cout, dil);
            },
            ys, yo, reps);
    }

    {
        const int H = 39, W = 300, Cin = 1, kh = 3, kw = 3, Cout = 39;
        auto dy = random_vec(static_cast<std::size_t>(H) * W * Cout, rng);
        auto x = random_vec(static_cast<std::size_t>(H) * W * Cin, rng);
        std::vector<double> ys(static_cast<std::size_t>(kh) * kw * Cin * Cout), yo(ys.size());
        ok &= report(
            "dconv2dw", "grad_w 39x300x1, 3x3 -> 39",
            [&] {
                msse::kernels::serial::conv2d_grad_w(x.data(), dy.data(), ys.data(), H, W, Cin,
                                                     kh, kw, Cout);
            },
            [&] {
                msse::kernels::omp::conv2d_grad_w(x.data(), dy.data(), yo.data(), H, W, Cin, kh,
                                                  kw, Cout);
            },
            ys, yo, reps);
    }

    if (!ok) {
        std::fprintf(stderr, "kernel outputs diverged between serial and omp\n");
        return 1;
    }
    return 0;
}
