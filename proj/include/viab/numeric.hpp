#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "viab/errors.hpp"

namespace viab {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

// Value represented as value * exp(log_scale).  Keeps tail masses and tilt
// branch weights finite when the plain product would over/underflow.
struct Scaled {
    double log_scale = 0.0;
    double value = 0.0;

    double to_double() const {
        if (value == 0.0) return 0.0;
        return value * std::exp(log_scale);
    }
    // log(|value| * exp(log_scale))
    double log_abs() const { return log_scale + std::log(std::abs(value)); }

    Scaled times(double s) const { return {log_scale, value * s}; }
    Scaled times_log(double log_s) const { return {log_scale + log_s, value}; }
};

// a*exp(la) + b*exp(lb), returned in scaled form.
inline Scaled scaled_add(const Scaled& a, const Scaled& b) {
    if (a.value == 0.0) return b;
    if (b.value == 0.0) return a;
    if (a.log_scale >= b.log_scale)
        return {a.log_scale, a.value + b.value * std::exp(b.log_scale - a.log_scale)};
    return {b.log_scale, b.value + a.value * std::exp(a.log_scale - b.log_scale)};
}

// Pairwise summation; order-insensitive enough that parallel aggregation over
// a stored per-path array is bit-stable regardless of worker count.
inline double pairwise_sum(std::span<const double> xs) {
    if (xs.size() <= 8) {
        double s = 0.0;
        for (double x : xs) s += x;
        return s;
    }
    const std::size_t half = xs.size() / 2;
    return pairwise_sum(xs.subspan(0, half)) + pairwise_sum(xs.subspan(half));
}

struct QuadOptions {
    double abs_tol = 1e-10;
    std::size_t max_intervals = 40000;
};

namespace detail {

// Gauss-Kronrod 7/15 nodes on [0,1]-half, classic weights.
struct Gk15Nodes {
    // node, gauss weight, kronrod weight
    static constexpr double nw[8][3] = {
        {0.000000000000000, 0.417959183673469, 0.209482141084728},
        {0.405845151377397, 0.381830050505119, 0.190350578064785},
        {0.741531185599394, 0.279705391489277, 0.140653259715525},
        {0.949107912342759, 0.129484966168870, 0.063092092629979},
        {0.207784955007898, 0.0, 0.204432940075298},
        {0.586087235467691, 0.0, 0.169004726639267},
        {0.864864423359769, 0.0, 0.104790010322250},
        {0.991455371120813, 0.0, 0.022935322010529},
    };
};

template <class F>
inline double gk15(const F& f, double a, double b, double& err) {
    const double mid = 0.5 * (a + b);
    const double half = 0.5 * (b - a);
    const double y0 = f(mid);
    double g7 = Gk15Nodes::nw[0][1] * y0;
    double k15 = Gk15Nodes::nw[0][2] * y0;
    for (int i = 1; i < 8; ++i) {
        const double dx = half * Gk15Nodes::nw[i][0];
        const double yi = f(mid + dx) + f(mid - dx);
        g7 += Gk15Nodes::nw[i][1] * yi;
        k15 += Gk15Nodes::nw[i][2] * yi;
    }
    g7 *= half;
    k15 *= half;
    err = std::abs(g7 - k15);
    // Sharpened estimate as in QUADPACK: err ~ (200|g7-k15|)^{3/2}, capped.
    const double e = 200.0 * err;
    if (e > 0.0) err = std::min(err, e * std::sqrt(e) / 200.0);
    return k15;
}

// Plain 7-point Gauss-Legendre on [a,b]; used for smooth sweep cells where
// adaptivity would only reorder evaluations.
template <class F>
inline double gl7(const F& f, double a, double b) {
    static constexpr double xs[4] = {0.000000000000000, 0.405845151377397,
                                     0.741531185599394, 0.949107912342759};
    static constexpr double ws[4] = {0.417959183673469, 0.381830050505119,
                                     0.279705391489277, 0.129484966168870};
    const double mid = 0.5 * (a + b);
    const double half = 0.5 * (b - a);
    double s = ws[0] * f(mid);
    for (int i = 1; i < 4; ++i) {
        const double dx = half * xs[i];
        s += ws[i] * (f(mid + dx) + f(mid - dx));
    }
    return s * half;
}

}  // namespace detail

// Adaptive Gauss-Kronrod on a finite interval, absolute-error driven.
template <class F>
inline double integrate_adaptive(const F& f, double a, double b, const QuadOptions& opt = {}) {
    if (!(a < b)) return 0.0;
    struct Seg {
        double a, b, val, err;
    };
    std::vector<Seg> segs;
    double err0;
    double v0 = detail::gk15(f, a, b, err0);
    segs.push_back({a, b, v0, err0});
    double total_err = err0;
    std::size_t splits = 0;
    while (total_err > opt.abs_tol) {
        // split the segment with the largest error
        std::size_t worst = 0;
        for (std::size_t i = 1; i < segs.size(); ++i)
            if (segs[i].err > segs[worst].err) worst = i;
        Seg s = segs[worst];
        if (++splits > opt.max_intervals || s.b - s.a < 1e-15 * (std::abs(s.a) + std::abs(s.b) + 1.0)) {
            // tolerance unreachable: either genuinely rough integrand or noise floor
            if (total_err > 1e3 * opt.abs_tol + 1e-12)
                throw QuadratureFailure("adaptive quadrature: tolerance not met within budget");
            break;
        }
        const double m = 0.5 * (s.a + s.b);
        double e1, e2;
        const double v1 = detail::gk15(f, s.a, m, e1);
        const double v2 = detail::gk15(f, m, s.b, e2);
        total_err += e1 + e2 - s.err;
        segs[worst] = {s.a, m, v1, e1};
        segs.push_back({m, s.b, v2, e2});
    }
    std::vector<double> vals;
    vals.reserve(segs.size());
    std::sort(segs.begin(), segs.end(), [](const Seg& x, const Seg& y) { return x.a < y.a; });
    for (const Seg& s : segs) vals.push_back(s.val);
    return pairwise_sum(vals);
}

// Integral of f over (edge, edge+width] where f may blow up (integrably or
// not) at `edge`.  Geometric shells toward the endpoint; when shell
// contributions fail to decay the integral is classified divergent and
// +/-inf is returned with the sign of the near-edge contributions.
template <class F>
inline double integrate_to_singular_edge(const F& f, double edge, double width, bool edge_is_left,
                                         const QuadOptions& opt = {}) {
    if (!(width > 0.0)) return 0.0;
    const int max_shells = 220;  // down to width * 2^-220, beyond double support
    double sum = 0.0;
    double prev = kInf;
    int flat = 0;
    double hi_off = width;
    for (int k = 0; k < max_shells; ++k) {
        const double lo_off = hi_off * 0.5;
        double a = edge_is_left ? edge + lo_off : edge - hi_off;
        double b = edge_is_left ? edge + hi_off : edge - lo_off;
        QuadOptions shell_opt = opt;
        shell_opt.abs_tol = std::max(opt.abs_tol * 0.25, 1e-16 * std::abs(sum));
        const double c = integrate_adaptive(f, a, b, shell_opt);
        sum += c;
        if (std::abs(c) <= std::max(opt.abs_tol, 1e-14 * std::abs(sum))) return sum;
        if (std::abs(c) > 0.66 * std::abs(prev) && k > 4) {
            if (++flat >= 12)  // log-type or worse divergence: constant or growing shells
                return c > 0 ? kInf : -kInf;
        } else {
            flat = 0;
        }
        prev = c;
        hi_off = lo_off;
    }
    return sum;
}

// Bisection on a nonincreasing function g, converging to inf{p : g(p) <= 0}
// within [lo, hi]; assumes g(lo) > 0 >= g(hi) (infinite endpoint values allowed).
template <class G>
inline double bisect_nonincreasing(const G& g, double lo, double hi, double p_abs_tol,
                                   int max_iter = 200) {
    for (int i = 0; i < max_iter; ++i) {
        const double mid = 0.5 * (lo + hi);
        if (mid <= lo || mid >= hi) break;  // interval at floating resolution
        if (g(mid) <= 0.0)
            hi = mid;
        else
            lo = mid;
        if (hi - lo <= p_abs_tol) break;
    }
    return 0.5 * (lo + hi);
}

// x*x truncated against |x|: the integrand of the "special" criterion.
inline double abs_min_square(double x) {
    const double ax = std::abs(x);
    return std::min(ax, ax * ax);
}

// p*x - log(1+p*x), the growth-rate integrand, computed with full relative
// accuracy for small |p*x| (direct form loses everything to cancellation).
inline double px_minus_log1p(double px) {
    if (px <= -1.0) return kInf;
    const double apx = std::abs(px);
    if (apx < 1e-4) {
        // t^2 (1/2 - t/3 + t^2/4 - t^3/5 + t^4/6)
        const double t = px;
        return t * t * (0.5 + t * (-1.0 / 3.0 + t * (0.25 + t * (-0.2 + t / 6.0))));
    }
    return px - std::log1p(px);
}

}  // namespace viab
