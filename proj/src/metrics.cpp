#include <cmath>
#include <string>

#include "msse/training.hpp"

namespace msse::training {

namespace {

using i128 = __int128;

i128 gcd128(i128 a, i128 b) {
    while (b != 0) {
        i128 t = a % b;
        a = b;
        b = t;
    }
    return a;
}

struct Frac {
    i128 num = 0;
    i128 den = 1;
};

Frac reduce(i128 n, i128 d) {
    if (d == 0) throw NumericError("metric fraction with zero denominator");
    if (n == 0) return {0, 1};
    i128 g = gcd128(n, d);
    return {n / g, d / g};
}

// Throws on overflow; the caller falls back to long-double arithmetic.
struct RationalOverflow {};

i128 checked_mul(i128 a, i128 b) {
    i128 out;
    if (__builtin_mul_overflow(a, b, &out)) throw RationalOverflow{};
    return out;
}

i128 checked_add(i128 a, i128 b) {
    i128 out;
    if (__builtin_add_overflow(a, b, &out)) throw RationalOverflow{};
    return out;
}

Frac frac_add(const Frac& a, const Frac& b) {
    return reduce(checked_add(checked_mul(a.num, b.den), checked_mul(b.num, a.den)),
                  checked_mul(a.den, b.den));
}

// Correctly rounded num/den for 0 <= num <= den, via bitwise long division
// with round-to-nearest-even.
double fraction_to_double(i128 num, i128 den) {
    if (num == 0) return 0.0;
    if (num == den) return 1.0;
    int e = 0;
    i128 r = num;
    while (r < den) {
        r <<= 1;
        --e;
    }
    std::uint64_t mant = 0;
    for (int i = 0; i < 53; ++i) {
        mant <<= 1;
        if (r >= den) {
            mant |= 1;
            r -= den;
        }
        r <<= 1;
    }
    const bool guard = r >= den;
    if (guard) r -= den;
    const bool sticky = r != 0;
    if (guard && (sticky || (mant & 1))) ++mant;
    if (mant == (1ULL << 53)) {
        mant >>= 1;
        ++e;
    }
    return std::ldexp(static_cast<double>(mant), e - 52);
}

void validate_confusion(const Confusion& c) {
    if (c.empty()) throw DataError("empty evaluation: confusion matrix has no classes");
    const std::size_t k = c.size();
    for (const auto& row : c) {
        if (row.size() != k) throw DimensionError("confusion matrix must be square");
        for (long long v : row) {
            if (v < 0) throw DataError("confusion matrix entries must be non-negative");
        }
    }
}

Metrics uar_war_longdouble(const Confusion& c) {
    long double total = 0, trace = 0, recall_sum = 0;
    int present = 0;
    for (std::size_t i = 0; i < c.size(); ++i) {
        long double row = 0;
        for (long long v : c[i]) row += static_cast<long double>(v);
        total += row;
        trace += static_cast<long double>(c[i][i]);
        if (row > 0) {
            ++present;
            recall_sum += static_cast<long double>(c[i][i]) / row;
        }
    }
    return {static_cast<double>(recall_sum / present), static_cast<double>(trace / total)};
}

}  // namespace

Metrics uar_war(const Confusion& c) {
    validate_confusion(c);
    i128 total = 0, trace = 0;
    std::vector<i128> row_sums(c.size(), 0);
    for (std::size_t i = 0; i < c.size(); ++i) {
        for (long long v : c[i]) row_sums[i] += v;
        total += row_sums[i];
        trace += c[i][i];
    }
    if (total == 0) throw DataError("empty evaluation: confusion matrix is all zero");

    try {
        Frac recall_sum{0, 1};
        i128 present = 0;
        for (std::size_t i = 0; i < c.size(); ++i) {
            if (row_sums[i] == 0) continue;  // class absent from the evaluation
            ++present;
            recall_sum = frac_add(recall_sum, reduce(c[i][i], row_sums[i]));
        }
        const Frac uar = reduce(recall_sum.num, checked_mul(recall_sum.den, present));
        const Frac war = reduce(trace, total);
        return {fraction_to_double(uar.num, uar.den), fraction_to_double(war.num, war.den)};
    } catch (const RationalOverflow&) {
        // Astronomically large matrices only; documented reduced-precision path.
        return uar_war_longdouble(c);
    }
}

}  // namespace msse::training
