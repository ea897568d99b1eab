#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstddef>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "viab/errors.hpp"
#include "viab/numeric.hpp"
#include "viab/rng.hpp"

namespace viab {

struct Atom {
    double x;  // location, != 0
    double w;  // mass, > 0
};

enum class Side { Positive, Negative };

// ---------------------------------------------------------------------------
// Density pieces.  A measure is a finite sum of atoms and pieces; pieces may
// overlap (overlaps just add).  Every kind has closed-form mass/CDF so that
// tail masses, quantiles and the tilt bookkeeping stay exact; generic
// f-integrals go through adaptive quadrature.
// ---------------------------------------------------------------------------

// density(x) = exp(log_amp - dir*rate*x) on [lo, hi]; dir=+1 decays rightward
// (hi may be +inf), dir=-1 decays leftward (lo may be -inf).
struct ExpPiece {
    double log_amp;
    double rate;
    int dir;
    double lo, hi;
};

struct UniformPiece {
    double height;
    double lo, hi;
};

// density(x) = coef * |x|^expo on [lo, hi]; support entirely on one side of 0.
// The only kind able to carry infinite mass / failed moments near 0.
struct PowerPiece {
    double coef;
    double expo;
    double lo, hi;
};

// Piecewise-linear density on knots (xs, ys), scaled.
struct TablePiece {
    std::vector<double> xs, ys;
    double scale = 1.0;
};

struct LayerPiece;  // boundary-layer piece of the y3/y4 tilt, defined below

using Piece = std::variant<ExpPiece, UniformPiece, PowerPiece, TablePiece, LayerPiece>;

// ---------------------------------------------------------------------------
// Boundary-layer piece: density scale * J(x) * base_density(x) on the layer
// (edge, edge+beta] in canonical orientation, where
//   J(x) = int_x^{edge+beta} r^2 / ((1+r w) log^2(1+r w) K(w)) dw,
//   K(w) = base-mass of (edge, w],  r = -1/edge > 0.
// With the substitutions u = r*(w-edge) and v = -1/log u the layer integrals
// become smooth:  int f J dbase = r * int_0^{v_max} (F/K)(u(v)) dv with
// F(w) = int_{(edge,w]} f dbase, which is what makes the piece tractable even
// though J blows up at the edge.  `mirrored` reflects the piece through 0.
// ---------------------------------------------------------------------------
struct LayerPiece {
    double edge;   // canonical singular endpoint (< 0)
    double r;      // -1/edge
    double beta;   // layer width, r*beta <= 1/2
    double scale = 1.0;
    bool mirrored = false;
    // near-edge restriction of the base measure, canonical orientation
    std::vector<Atom> base_atoms;                    // dist in (0, beta]
    std::vector<std::variant<ExpPiece, UniformPiece, PowerPiece, TablePiece>> base_pieces;

    double v_max() const { return -1.0 / std::log(r * beta); }
    double mass() const { return scale * r * v_max(); }
};

namespace detail {

// ---- per-kind helpers in "distance from a reference point" arithmetic ----

inline double exp_density(const ExpPiece& p, double x) {
    if (x < p.lo || x > p.hi) return 0.0;
    return std::exp(p.log_amp - p.dir * p.rate * x);
}

// mass of [a, b] (clipped), exact
inline Scaled exp_mass(const ExpPiece& p, double a, double b) {
    a = std::max(a, p.lo);
    b = std::min(b, p.hi);
    if (!(a < b)) return {0.0, 0.0};
    if (p.dir > 0) {
        // exp(log_amp - rate a) (1 - e^{-rate(b-a)}) / rate
        const double w = b == kInf ? 1.0 : -std::expm1(-p.rate * (b - a));
        return {p.log_amp - p.rate * a, w / p.rate};
    }
    const double w = a == -kInf ? 1.0 : -std::expm1(-p.rate * (b - a));
    return {p.log_amp + p.rate * b, w / p.rate};
}

inline double uniform_density(const UniformPiece& p, double x) {
    return (x < p.lo || x > p.hi) ? 0.0 : p.height;
}

inline Scaled uniform_mass(const UniformPiece& p, double a, double b) {
    a = std::max(a, p.lo);
    b = std::min(b, p.hi);
    if (!(a < b)) return {0.0, 0.0};
    return {0.0, p.height * (b - a)};
}

inline double power_density(const PowerPiece& p, double x) {
    if (x < p.lo || x > p.hi) return 0.0;
    return p.coef * std::pow(std::abs(x), p.expo);
}

inline bool power_mass_finite(const PowerPiece& p) {
    const double alo = std::min(std::abs(p.lo), std::abs(p.hi));
    const double ahi = std::max(std::abs(p.lo), std::abs(p.hi));
    if (alo == 0.0 && p.expo <= -1.0) return false;
    if (ahi == kInf && p.expo >= -1.0) return false;
    return true;
}

// antiderivative of coef*t^expo in |x|-coordinates: coef * t^{expo+1}/(expo+1)
inline Scaled power_mass(const PowerPiece& p, double a, double b) {
    a = std::max(a, p.lo);
    b = std::min(b, p.hi);
    if (!(a < b)) return {0.0, 0.0};
    if (!power_mass_finite(p)) {
        // finite unless the clipped range touches the divergence point
        const double alo = std::min(std::abs(a), std::abs(b));
        const double ahi = std::max(std::abs(a), std::abs(b));
        if ((alo == 0.0 && p.expo <= -1.0) || (ahi == kInf && p.expo >= -1.0))
            return {0.0, kInf};
    }
    const double t0 = std::min(std::abs(a), std::abs(b));
    const double t1 = std::max(std::abs(a), std::abs(b));
    const double e1 = p.expo + 1.0;
    if (std::abs(e1) < 1e-14) return {0.0, p.coef * std::log(t1 / t0)};
    if (t0 == 0.0) return {0.0, p.coef * std::pow(t1, e1) / e1};
    if (t1 == kInf) return {0.0, -p.coef * std::pow(t0, e1) / e1};
    // coef * t0^{e1} expm1(e1 log(t1/t0)) / e1, stable when t1-t0 << t0
    const double lr = std::log1p((t1 - t0) / t0);
    return {0.0, p.coef * std::pow(t0, e1) * std::expm1(e1 * lr) / e1};
}

inline double table_density(const TablePiece& p, double x) {
    if (x < p.xs.front() || x > p.xs.back()) return 0.0;
    const auto it = std::upper_bound(p.xs.begin(), p.xs.end(), x);
    std::size_t i = it == p.xs.begin() ? 0 : static_cast<std::size_t>(it - p.xs.begin()) - 1;
    if (i + 1 >= p.xs.size()) i = p.xs.size() - 2;
    const double t = (x - p.xs[i]) / (p.xs[i + 1] - p.xs[i]);
    return p.scale * (p.ys[i] + t * (p.ys[i + 1] - p.ys[i]));
}

inline Scaled table_mass(const TablePiece& p, double a, double b) {
    a = std::max(a, p.xs.front());
    b = std::min(b, p.xs.back());
    if (!(a < b)) return {0.0, 0.0};
    double m = 0.0;
    for (std::size_t i = 0; i + 1 < p.xs.size(); ++i) {
        const double c0 = std::max(a, p.xs[i]), c1 = std::min(b, p.xs[i + 1]);
        if (!(c0 < c1)) continue;
        // trapezoid of the linear density over [c0, c1]
        const double w = p.xs[i + 1] - p.xs[i];
        const double y0 = p.ys[i] + (c0 - p.xs[i]) / w * (p.ys[i + 1] - p.ys[i]);
        const double y1 = p.ys[i] + (c1 - p.xs[i]) / w * (p.ys[i + 1] - p.ys[i]);
        m += 0.5 * (y0 + y1) * (c1 - c0);
    }
    return {0.0, p.scale * m};
}

using SimplePiece = std::variant<ExpPiece, UniformPiece, PowerPiece, TablePiece>;

inline double simple_density(const SimplePiece& p, double x) {
    return std::visit(
        [&](const auto& q) -> double {
            using T = std::decay_t<decltype(q)>;
            if constexpr (std::is_same_v<T, ExpPiece>) return exp_density(q, x);
            if constexpr (std::is_same_v<T, UniformPiece>) return uniform_density(q, x);
            if constexpr (std::is_same_v<T, PowerPiece>) return power_density(q, x);
            if constexpr (std::is_same_v<T, TablePiece>) return table_density(q, x);
        },
        p);
}

inline Scaled simple_mass(const SimplePiece& p, double a, double b) {
    return std::visit(
        [&](const auto& q) -> Scaled {
            using T = std::decay_t<decltype(q)>;
            if constexpr (std::is_same_v<T, ExpPiece>) return exp_mass(q, a, b);
            if constexpr (std::is_same_v<T, UniformPiece>) return uniform_mass(q, a, b);
            if constexpr (std::is_same_v<T, PowerPiece>) return power_mass(q, a, b);
            if constexpr (std::is_same_v<T, TablePiece>) return table_mass(q, a, b);
        },
        p);
}

inline std::pair<double, double> simple_range(const SimplePiece& p) {
    return std::visit(
        [&](const auto& q) -> std::pair<double, double> {
            using T = std::decay_t<decltype(q)>;
            if constexpr (std::is_same_v<T, TablePiece>) return {q.xs.front(), q.xs.back()};
            else return {q.lo, q.hi};
        },
        p);
}

// generic f-integral of one simple piece over [a, b], scaled so that far
// exponential tails never underflow before the caller recombines them
template <class F>
inline Scaled simple_integrate(const SimplePiece& piece, F&& f, double a, double b,
                               const QuadOptions& opt) {
    auto [plo, phi] = simple_range(piece);
    a = std::max(a, plo);
    b = std::min(b, phi);
    if (!(a < b)) return {0.0, 0.0};

    if (const auto* e = std::get_if<ExpPiece>(&piece)) {
        // factor out the scale at the near end; integrate in shifted coords
        const double anchor = e->dir > 0 ? a : b;
        const double log_scale = e->log_amp - e->dir * e->rate * anchor;
        auto g = [&](double t) {
            const double x = e->dir > 0 ? a + t : b - t;
            return f(x) * std::exp(-e->rate * t);
        };
        const double span = b - a;  // may be inf
        double total = 0.0, t0 = 0.0;
        const double block = 45.0 / e->rate;
        for (int k = 0; k < 40; ++k) {
            const double t1 = std::min(span, t0 + block);
            const double c = integrate_adaptive(g, t0, t1, opt);
            total += c;
            t0 = t1;
            if (t0 >= span || std::abs(c) < 0.5 * opt.abs_tol) break;
        }
        return {log_scale, total};
    }

    if (const auto* pw = std::get_if<PowerPiece>(&piece)) {
        if (pw->expo < 0.0) {
            // integrable (or not) blow-up at the |x|->0 end of the support
            const double sing = std::abs(pw->lo) < std::abs(pw->hi) ? pw->lo : pw->hi;
            const bool at_a = a == sing, at_b = b == sing;
            if (at_a || at_b) {
                auto g = [&](double x) { return f(x) * power_density(*pw, x); };
                const double width = std::min(b - a, 0.5 * (b - a) + 0.0);
                double inner = integrate_to_singular_edge(g, sing, width, at_a, opt);
                if (at_a && a + width < b) inner += integrate_adaptive(g, a + width, b, opt);
                if (at_b && b - width > a) inner += integrate_adaptive(g, a, b - width, opt);
                return {0.0, inner};
            }
        }
        if (pw->hi == kInf || pw->lo == -kInf) {
            // polynomial tail: map t = 1/|x|
            const double s = pw->hi == kInf ? 1.0 : -1.0;
            const double afin = pw->hi == kInf ? a : -b;
            auto g = [&](double t) {
                const double ax = 1.0 / t;
                return f(s * ax) * pw->coef * std::pow(ax, pw->expo) / (t * t);
            };
            return {0.0, integrate_adaptive(g, 0.0, 1.0 / afin, opt)};
        }
    }

    auto g = [&](double x) { return f(x) * simple_density(piece, x); };
    return {0.0, integrate_adaptive(g, a, b, opt)};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// LayerPiece machinery
// ---------------------------------------------------------------------------
namespace detail {

// base-measure mass of (edge, edge+dist], computed in distance arithmetic so
// that distances far below |edge|*eps stay meaningful
inline double layer_base_mass(const LayerPiece& L, double dist) {
    if (dist <= 0.0) return 0.0;
    double m = 0.0;
    for (const Atom& a : L.base_atoms)
        if (a.x - L.edge <= dist) m += a.w;
    for (const auto& p : L.base_pieces) {
        auto [plo, phi] = simple_range(p);
        const double d0 = std::max(0.0, plo - L.edge);
        const double d1 = std::min(dist, phi - L.edge);
        if (!(d0 < d1)) continue;
        if (const auto* u = std::get_if<UniformPiece>(&p)) {
            m += u->height * (d1 - d0);
        } else if (const auto* e = std::get_if<ExpPiece>(&p)) {
            const double x0 = L.edge + d0;
            const double la = e->dir > 0 ? e->log_amp - e->rate * x0 : e->log_amp + e->rate * x0;
            const double w = -std::expm1(-e->rate * (d1 - d0));
            m += std::exp(la) * (e->dir > 0 ? w : std::expm1(e->rate * (d1 - d0))) / e->rate;
        } else if (const auto* pw = std::get_if<PowerPiece>(&p)) {
            // |x| = |edge| - dist on the negative axis (canonical edge < 0)
            const double t1 = std::abs(L.edge) - d0;  // larger |x|
            const double t0 = std::abs(L.edge) - d1;  // smaller |x|
            const double e1 = pw->expo + 1.0;
            if (std::abs(e1) < 1e-14) {
                m += pw->coef * std::log(t1 / t0);
            } else {
                const double lr = std::log1p((t1 - t0) / t0);
                m += pw->coef * std::pow(t0, e1) * std::expm1(e1 * lr) / e1;
            }
        } else {
            m += table_mass(std::get<TablePiece>(p), L.edge + d0, L.edge + d1).to_double();
        }
    }
    return m;
}

inline double layer_base_density_at_dist(const LayerPiece& L, double dist) {
    double d = 0.0;
    const double x = L.edge + dist;
    for (const auto& p : L.base_pieces) d += simple_density(p, x);
    return d;
}

// f integrated against the base measure over distances (d0, d1]; includes atoms
template <class F>
inline double layer_base_int(const LayerPiece& L, F&& f, double d0, double d1) {
    double s = 0.0;
    for (const Atom& a : L.base_atoms) {
        const double ad = a.x - L.edge;
        if (ad > d0 && ad <= d1) s += f(ad) * a.w;
    }
    auto g = [&](double dist) { return f(dist) * layer_base_density_at_dist(L, dist); };
    s += detail::gl7(g, d0, d1);
    return s;
}

// structural breakpoints of the base restriction, as distances in (0, beta)
inline std::vector<double> layer_kinks(const LayerPiece& L) {
    std::vector<double> ks;
    auto push = [&](double d) {
        if (d > 0.0 && d < L.beta) ks.push_back(d);
    };
    for (const Atom& a : L.base_atoms) push(a.x - L.edge);
    for (const auto& p : L.base_pieces) {
        auto [plo, phi] = simple_range(p);
        push(plo - L.edge);
        push(phi - L.edge);
        if (const auto* t = std::get_if<TablePiece>(&p))
            for (double xk : t->xs) push(xk - L.edge);
    }
    std::sort(ks.begin(), ks.end());
    ks.erase(std::unique(ks.begin(), ks.end()), ks.end());
    return ks;
}

// v-cells over [v_lo, v_max], split at mapped kinks and refined
inline std::vector<double> layer_v_grid(const LayerPiece& L, double v_lo) {
    const double vm = L.v_max();
    std::vector<double> cuts{v_lo, vm};
    for (double d : layer_kinks(L)) {
        const double u = L.r * d;
        if (u > 0.0 && u < L.r * L.beta) {
            const double v = -1.0 / std::log(u);
            if (v > v_lo && v < vm) cuts.push_back(v);
        }
    }
    std::sort(cuts.begin(), cuts.end());
    cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
    std::vector<double> grid;
    const double max_w = (vm - v_lo) / 24.0;
    for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
        const int n = std::max(1, static_cast<int>(std::ceil((cuts[i + 1] - cuts[i]) / max_w)));
        for (int k = 0; k < n; ++k)
            grid.push_back(cuts[i] + (cuts[i + 1] - cuts[i]) * k / n);
    }
    grid.push_back(vm);
    return grid;
}

// J(dist) = r * int_{v(r*dist)}^{v_max} dv / K(u(v)/r); +inf at/below the edge
inline double layer_J(const LayerPiece& L, double dist) {
    if (dist >= L.beta) return 0.0;
    const double u = L.r * dist;
    if (!(u > 0.0)) return kInf;
    const double v_lo = -1.0 / std::log(u);
    auto integrand = [&](double v) {
        const double K = layer_base_mass(L, std::exp(-1.0 / v) / L.r);
        return K > 0.0 ? 1.0 / K : 0.0;
    };
    const auto grid = layer_v_grid(L, v_lo);
    double s = 0.0;
    for (std::size_t i = 0; i + 1 < grid.size(); ++i) s += detail::gl7(integrand, grid[i], grid[i + 1]);
    return L.r * s;
}

// int f(dist)*J*dbase over distances in (dist_lo, beta], canonical coords.
// dist_lo <= 0 means the full layer.
template <class F>
inline double layer_integrate_above(const LayerPiece& L, F&& f, double dist_lo) {
    const double vm = L.v_max();
    const double rb = L.r * L.beta;
    double v_start, F0 = 0.0, head = 0.0, d_prev;
    if (dist_lo <= 0.0) {
        // asymptotic head: below u_asym the mean of f over (edge, w] is f(edge+)
        const double u_asym = rb * 1e-9;
        v_start = -1.0 / std::log(u_asym);
        head = L.r * v_start * f(0.5 * u_asym / L.r);
        d_prev = u_asym / L.r;
        F0 = layer_base_int(L, f, 0.0, d_prev);
    } else {
        if (dist_lo >= L.beta) return 0.0;
        v_start = -1.0 / std::log(L.r * dist_lo);
        d_prev = dist_lo;
        F0 = 0.0;  // relative cumulative: F(w) - F(dist_lo)
    }

    const auto grid = layer_v_grid(L, v_start);
    // collect ascending GL7 nodes per cell
    static constexpr double gx[7] = {-0.949107912342759, -0.741531185599394, -0.405845151377397,
                                     0.0, 0.405845151377397, 0.741531185599394, 0.949107912342759};
    static constexpr double gw[7] = {0.129484966168870, 0.279705391489277, 0.381830050505119,
                                     0.417959183673469, 0.381830050505119, 0.279705391489277,
                                     0.129484966168870};
    double total = 0.0;
    double Fcum = F0;
    for (std::size_t i = 0; i + 1 < grid.size(); ++i) {
        const double mid = 0.5 * (grid[i] + grid[i + 1]);
        const double half = 0.5 * (grid[i + 1] - grid[i]);
        double cell = 0.0;
        for (int k = 0; k < 7; ++k) {
            const double v = mid + half * gx[k];
            const double dist = std::exp(-1.0 / v) / L.r;
            Fcum += layer_base_int(L, f, d_prev, dist);
            d_prev = dist;
            const double K = layer_base_mass(L, dist) - (dist_lo > 0.0 ? 0.0 : 0.0);
            double Ebar;
            if (dist_lo > 0.0) {
                const double Kdiff = layer_base_mass(L, dist);
                Ebar = Kdiff > 0.0 ? Fcum / Kdiff : 0.0;
            } else {
                Ebar = K > 0.0 ? Fcum / K : 0.0;
            }
            cell += gw[k] * Ebar;
        }
        total += cell * half;
    }
    double result = L.r * total + head;
    if (dist_lo > 0.0) {
        // upper tail uses F measured from dist_lo; add the offset term F(beta-) via J
        // int_{x>d*} f J dbase = r*int_{v(d*)}^{vm} (F(w)-F(d*))/K dw ... already accumulated,
        // since Fcum started at 0.  Nothing else to add.
        (void)vm;
    }
    return result;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// JumpMeasure
// ---------------------------------------------------------------------------

struct SupportBounds {
    bool empty = true;
    double x_min = kInf;   // sentinel (+inf, -inf) for the null measure
    double x_max = -kInf;
};

class JumpMeasure {
  public:
    JumpMeasure() = default;

    static JumpMeasure empty() { return JumpMeasure(); }

    static JumpMeasure atomic(std::vector<Atom> atoms) {
        JumpMeasure m;
        m.atoms_ = std::move(atoms);
        m.normalize();
        return m;
    }

    // w * rate * exp(-rate (x - x0)) on [x0, +inf)
    static JumpMeasure exponential_right(double x0, double rate, double weight) {
        JumpMeasure m;
        m.pieces_.push_back(ExpPiece{std::log(weight * rate) + rate * x0, rate, +1, x0, kInf});
        m.normalize();
        return m;
    }

    // w * rate * exp(-rate (x1 - x)) on (-inf, x1]
    static JumpMeasure exponential_left(double x1, double rate, double weight) {
        JumpMeasure m;
        m.pieces_.push_back(ExpPiece{std::log(weight * rate) - rate * x1, rate, -1, -kInf, x1});
        m.normalize();
        return m;
    }

    static JumpMeasure uniform(double lo, double hi, double height) {
        JumpMeasure m;
        m.pieces_.push_back(UniformPiece{height, lo, hi});
        m.normalize();
        return m;
    }

    static JumpMeasure power(double lo, double hi, double coef, double expo) {
        JumpMeasure m;
        m.pieces_.push_back(PowerPiece{coef, expo, lo, hi});
        m.normalize();
        return m;
    }

    static JumpMeasure table(std::vector<double> xs, std::vector<double> ys, double scale = 1.0) {
        JumpMeasure m;
        m.pieces_.push_back(TablePiece{std::move(xs), std::move(ys), scale});
        m.normalize();
        return m;
    }

    static JumpMeasure sum(const std::vector<JumpMeasure>& parts) {
        JumpMeasure m;
        for (const auto& p : parts) {
            m.atoms_.insert(m.atoms_.end(), p.atoms_.begin(), p.atoms_.end());
            m.pieces_.insert(m.pieces_.end(), p.pieces_.begin(), p.pieces_.end());
        }
        m.normalize();
        return m;
    }

    const std::vector<Atom>& atoms() const { return atoms_; }
    const std::vector<Piece>& pieces() const { return pieces_; }
    bool is_empty() const { return atoms_.empty() && pieces_.empty(); }

    // kappa[R]; +inf carried analytically (power pieces), never by overflow
    double total_mass() const { return total_mass_; }
    bool has_infinite_mass() const { return total_mass_ == kInf; }

    SupportBounds support_bounds() const { return bounds_; }

    double atom_mass_at(double x) const {
        double w = 0.0;
        for (const Atom& a : atoms_)
            if (a.x == x) w += a.w;
        return w;
    }

    // mass of the interval with exact endpoint handling
    double interval_mass(double lo, double hi, bool open_lo = false, bool open_hi = false) const {
        return interval_mass_scaled(lo, hi, open_lo, open_hi).to_double();
    }

    Scaled interval_mass_scaled(double lo, double hi, bool open_lo = false,
                                bool open_hi = false) const {
        if (!(lo <= hi)) throw InvalidParam("interval_mass: lo > hi");
        Scaled s{0.0, 0.0};
        for (const Atom& a : atoms_) {
            const bool in = (a.x > lo || (a.x == lo && !open_lo)) &&
                            (a.x < hi || (a.x == hi && !open_hi));
            if (in) s = scaled_add(s, {0.0, a.w});
        }
        for (const auto& p : pieces_) s = scaled_add(s, piece_mass(p, lo, hi));
        return s;
    }

    // density of the absolutely-continuous part (atoms excluded)
    double density_at(double x) const {
        double d = 0.0;
        for (const auto& p : pieces_) {
            if (const auto* L = std::get_if<LayerPiece>(&p)) {
                const double xc = L->mirrored ? -x : x;
                const double dist = xc - L->edge;
                if (dist > 0.0 && dist <= L->beta)
                    d += L->scale * detail::layer_J(*L, dist) *
                         detail::layer_base_density_at_dist(*L, dist);
            } else {
                d += detail::simple_density(to_simple(p), x);
            }
        }
        return d;
    }

    // int_{[lo,hi]} f dkappa (closed interval; use interval_mass for endpoint
    // subtleties -- f-integrals at exact atom locations include the atom)
    template <class F>
    double integrate(F&& f, double lo = -kInf, double hi = kInf, QuadOptions opt = {}) const {
        return integrate_scaled(f, lo, hi, opt).to_double();
    }

    template <class F>
    Scaled integrate_scaled(F&& f, double lo = -kInf, double hi = kInf, QuadOptions opt = {}) const {
        Scaled s{0.0, 0.0};
        for (const Atom& a : atoms_)
            if (a.x >= lo && a.x <= hi) s = scaled_add(s, {0.0, f(a.x) * a.w});
        for (const auto& p : pieces_) {
            if (const auto* L = std::get_if<LayerPiece>(&p)) {
                s = scaled_add(s, {0.0, layer_f_integral(*L, f, lo, hi)});
            } else {
                s = scaled_add(s, detail::simple_integrate(to_simple(p), f, lo, hi, opt));
            }
        }
        return s;
    }

    // int (|x| ^ x^2) dkappa, +inf when the measure is not special
    double special_integral() const { return special_; }
    bool is_special() const { return special_ < kInf; }

    // signed int_{(lo,hi)} x dkappa with analytic +/-inf for divergent tails
    double first_moment(double lo = -kInf, double hi = kInf) const {
        double inf_part = 0.0;
        for (const auto& p : pieces_) {
            if (const auto* pw = std::get_if<PowerPiece>(&p)) {
                const double a = std::max(lo, pw->lo), b = std::min(hi, pw->hi);
                if (!(a < b)) continue;
                const double alo = std::min(std::abs(a), std::abs(b));
                const double ahi = std::max(std::abs(a), std::abs(b));
                const bool div_zero = alo == 0.0 && pw->expo <= -2.0;
                const bool div_inf = ahi == kInf && pw->expo >= -2.0;
                if (div_zero || div_inf) inf_part += (a >= 0.0 ? 1.0 : -1.0) * kInf;
            }
        }
        if (inf_part != 0.0) return inf_part;
        return integrate([](double x) { return x; }, lo, hi);
    }

    // inf{x>0 : kappa[(0,x]] >= m} / sup{x<0 : kappa[[x,0)] >= m}
    double lower_quantile(Side side, double m) const {
        if (!(m > 0.0)) throw InvalidParam("lower_quantile: m must be > 0");
        const double side_mass =
            side == Side::Positive ? interval_mass(0.0, kInf, true, false)
                                   : interval_mass(-kInf, 0.0, false, true);
        if (side_mass == kInf) {
            // a special measure can only accumulate infinite mass at 0
            return 0.0;
        }
        if (m > side_mass * (1.0 + 1e-13) + 0.0)
            throw InsufficientMass("lower_quantile: side mass below target");
        m = std::min(m, side_mass);
        auto cum = [&](double t) {  // t = |x| distance from 0
            return side == Side::Positive ? interval_mass(0.0, t, true, false)
                                          : interval_mass(-t, 0.0, false, true);
        };
        // exact walk over breakpoints, then bisection inside one cell
        std::vector<double> bps;
        for (const Atom& a : atoms_) {
            const double t = side == Side::Positive ? a.x : -a.x;
            if (t > 0.0) bps.push_back(t);
        }
        for (const auto& p : pieces_) {
            auto [plo, phi] = piece_range(p);
            for (double e : {plo, phi}) {
                const double t = side == Side::Positive ? e : -e;
                if (t > 0.0 && t < kInf) bps.push_back(t);
            }
        }
        std::sort(bps.begin(), bps.end());
        bps.erase(std::unique(bps.begin(), bps.end()), bps.end());
        double t_lo = 0.0, c_lo = 0.0;
        double t_hi = kInf;
        for (double t : bps) {
            const double c = cum(t);
            if (c >= m) {
                // the quantile is at an atom if the jump crosses m exactly here
                const double catom = atom_mass_at(side == Side::Positive ? t : -t);
                if (catom > 0.0 && c - catom < m) return side == Side::Positive ? t : -t;
                t_hi = t;
                break;
            }
            t_lo = t;
            c_lo = c;
        }
        if (t_hi == kInf) {
            // target inside an unbounded final piece
            double t = std::max(1.0, 2.0 * t_lo);
            while (cum(t) < m) t *= 2.0;
            t_hi = t;
        }
        (void)c_lo;
        for (int i = 0; i < 200; ++i) {
            const double mid = 0.5 * (t_lo + t_hi);
            if (mid <= t_lo || mid >= t_hi) break;
            if (cum(mid) >= m)
                t_hi = mid;
            else
                t_lo = mid;
        }
        return side == Side::Positive ? t_hi : -t_hi;
    }

    JumpMeasure reflected() const {
        JumpMeasure m;
        for (const Atom& a : atoms_) m.atoms_.push_back({-a.x, a.w});
        for (const auto& p : pieces_) m.pieces_.push_back(reflect_piece(p));
        m.normalize();
        return m;
    }

    // --- constructors used by the tilt step --------------------------------

    struct RegionScale {
        double lo, hi;
        bool open_lo, open_hi;
        double log_factor;  // multiply density/atom mass by exp(log_factor)
    };

    // multiply the measure by piecewise constants; pieces are split at region
    // boundaries so every closed-form query stays exact
    JumpMeasure scaled_by_regions(const std::vector<RegionScale>& regions) const {
        JumpMeasure m;
        for (const Atom& a : atoms_) {
            double lf = 0.0;
            for (const auto& r : regions) {
                const bool in = (a.x > r.lo || (a.x == r.lo && !r.open_lo)) &&
                                (a.x < r.hi || (a.x == r.hi && !r.open_hi));
                if (in) lf += r.log_factor;
            }
            m.atoms_.push_back({a.x, std::exp(std::log(a.w) + lf)});
        }
        for (const auto& p : pieces_) {
            std::vector<double> cuts;
            auto [plo, phi] = piece_range(p);
            cuts.push_back(plo);
            cuts.push_back(phi);
            for (const auto& r : regions) {
                for (double e : {r.lo, r.hi})
                    if (e > plo && e < phi) cuts.push_back(e);
            }
            std::sort(cuts.begin(), cuts.end());
            cuts.erase(std::unique(cuts.begin(), cuts.end()), cuts.end());
            for (std::size_t i = 0; i + 1 < cuts.size(); ++i) {
                const double mid_lo = cuts[i], mid_hi = cuts[i + 1];
                double lf = 0.0;
                const double probe = std::isinf(mid_hi)
                                         ? (std::isinf(mid_lo) ? 0.0 : mid_lo + 1.0)
                                         : (std::isinf(mid_lo) ? mid_hi - 1.0
                                                               : 0.5 * (mid_lo + mid_hi));
                for (const auto& r : regions)
                    if (probe > r.lo && probe < r.hi) lf += r.log_factor;
                m.pieces_.push_back(clip_and_scale(p, mid_lo, mid_hi, lf));
            }
        }
        m.normalize();
        return m;
    }

    // multiply everything by a constant factor > 0
    JumpMeasure scaled_global(double factor) const {
        return scaled_by_regions({{-kInf, kInf, false, false, std::log(factor)}});
    }

    JumpMeasure with_extra_piece(Piece extra) const {
        JumpMeasure m = *this;
        m.pieces_.push_back(std::move(extra));
        m.normalize();
        return m;
    }

    // restriction to (lo, hi] as plain atoms/pieces (used as a layer base)
    std::pair<std::vector<Atom>, std::vector<detail::SimplePiece>> restricted_simple(
        double lo, double hi) const {
        std::vector<Atom> as;
        for (const Atom& a : atoms_)
            if (a.x > lo && a.x <= hi) as.push_back(a);
        std::vector<detail::SimplePiece> ps;
        for (const auto& p : pieces_) {
            if (std::holds_alternative<LayerPiece>(p)) {
                const auto& L = std::get<LayerPiece>(p);
                const auto [alo, ahi] = piece_range(p);
                if (ahi > lo && alo < hi)
                    throw Error("restricted_simple: layer piece inside restriction range");
                continue;
            }
            auto [plo, phi] = piece_range(p);
            if (phi <= lo || plo >= hi) continue;
            ps.push_back(to_simple(clip_and_scale(p, std::max(lo, plo), std::min(hi, phi), 0.0)));
        }
        return {as, ps};
    }

    // --- sampling -----------------------------------------------------------

    // jump-size draw from kappa / kappa[R]; requires finite activity
    double sample(PathRng& rng) const {
        if (has_infinite_mass()) throw InfiniteActivity("sample: infinite-activity measure");
        if (is_empty() || total_mass_ <= 0.0) throw InvalidParam("sample: null measure");
        double u = rng.uniform01() * total_mass_;
        for (const Atom& a : atoms_) {
            if (u < a.w) return a.x;
            u -= a.w;
        }
        for (const auto& p : pieces_) {
            const double pm = piece_mass(p, -kInf, kInf).to_double();
            if (u < pm || &p == &pieces_.back()) return sample_piece(p, rng);
            u -= pm;
        }
        return atoms_.empty() ? sample_piece(pieces_.back(), rng) : atoms_.back().x;
    }

  private:
    std::vector<Atom> atoms_;
    std::vector<Piece> pieces_;
    double total_mass_ = 0.0;
    double special_ = 0.0;
    SupportBounds bounds_;

    static detail::SimplePiece to_simple(const Piece& p) {
        return std::visit(
            [](const auto& q) -> detail::SimplePiece {
                using T = std::decay_t<decltype(q)>;
                if constexpr (std::is_same_v<T, LayerPiece>)
                    throw Error("layer piece cannot convert to simple piece");
                else
                    return q;
            },
            p);
    }

    static std::pair<double, double> piece_range(const Piece& p) {
        if (const auto* L = std::get_if<LayerPiece>(&p)) {
            if (L->mirrored) return {-L->edge - L->beta, -L->edge};
            return {L->edge, L->edge + L->beta};
        }
        return detail::simple_range(to_simple(p));
    }

    static Scaled piece_mass(const Piece& p, double lo, double hi) {
        if (const auto* L = std::get_if<LayerPiece>(&p)) {
            // canonical distances: mirrored maps [lo,hi] -> [-hi,-lo]
            double clo = L->mirrored ? -hi : lo, chi = L->mirrored ? -lo : hi;
            double d0 = std::max(0.0, clo - L->edge), d1 = std::min(L->beta, chi - L->edge);
            if (!(d0 < d1)) return {0.0, 0.0};
            auto M = [&](double d) {  // mass of (edge, edge+d]
                if (d <= 0.0) return 0.0;
                if (d >= L->beta) return L->r * L->v_max();
                const double v = -1.0 / std::log(L->r * d);
                return L->r * v + detail::layer_base_mass(*L, d) * detail::layer_J(*L, d);
            };
            return {0.0, L->scale * (M(d1) - M(d0))};
        }
        return detail::simple_mass(to_simple(p), lo, hi);
    }

    template <class F>
    static double layer_f_integral(const LayerPiece& L, F&& f, double lo, double hi) {
        double clo = L.mirrored ? -hi : lo, chi = L.mirrored ? -lo : hi;
        const double d0 = std::max(0.0, clo - L.edge);
        const double d1 = std::min(L.beta, chi - L.edge);
        if (!(d0 < d1)) return 0.0;
        const double sgn = L.mirrored ? -1.0 : 1.0;
        auto fc = [&](double dist) { return f(sgn * (L.edge + dist)); };
        double v = detail::layer_integrate_above(L, fc, d0 > 0.0 ? d0 : 0.0);
        if (d1 < L.beta) v -= detail::layer_integrate_above(L, fc, d1);
        return L.scale * v;
    }

    static Piece reflect_piece(const Piece& p) {
        return std::visit(
            [](const auto& q) -> Piece {
                using T = std::decay_t<decltype(q)>;
                if constexpr (std::is_same_v<T, ExpPiece>)
                    return ExpPiece{q.log_amp, q.rate, -q.dir, -q.hi, -q.lo};
                else if constexpr (std::is_same_v<T, UniformPiece>)
                    return UniformPiece{q.height, -q.hi, -q.lo};
                else if constexpr (std::is_same_v<T, PowerPiece>)
                    return PowerPiece{q.coef, q.expo, -q.hi, -q.lo};
                else if constexpr (std::is_same_v<T, TablePiece>) {
                    TablePiece t;
                    t.scale = q.scale;
                    t.xs.assign(q.xs.rbegin(), q.xs.rend());
                    for (double& x : t.xs) x = -x;
                    t.ys.assign(q.ys.rbegin(), q.ys.rend());
                    return t;
                } else {
                    LayerPiece L = q;
                    L.mirrored = !L.mirrored;
                    return L;
                }
            },
            p);
    }

    static Piece clip_and_scale(const Piece& p, double lo, double hi, double log_factor) {
        return std::visit(
            [&](const auto& q) -> Piece {
                using T = std::decay_t<decltype(q)>;
                if constexpr (std::is_same_v<T, ExpPiece>) {
                    ExpPiece e = q;
                    e.lo = std::max(e.lo, lo);
                    e.hi = std::min(e.hi, hi);
                    e.log_amp += log_factor;  // exp pieces absorb any scale in log space
                    return e;
                } else if constexpr (std::is_same_v<T, UniformPiece>) {
                    UniformPiece u = q;
                    u.lo = std::max(u.lo, lo);
                    u.hi = std::min(u.hi, hi);
                    u.height *= std::exp(log_factor);
                    return u;
                } else if constexpr (std::is_same_v<T, PowerPiece>) {
                    PowerPiece w = q;
                    w.lo = std::max(w.lo, lo);
                    w.hi = std::min(w.hi, hi);
                    w.coef *= std::exp(log_factor);
                    return w;
                } else if constexpr (std::is_same_v<T, TablePiece>) {
                    TablePiece t = q;
                    clip_table(t, lo, hi);
                    t.scale *= std::exp(log_factor);
                    return t;
                } else {
                    LayerPiece L = q;
                    const auto [alo, ahi] = std::pair<double, double>{
                        L.mirrored ? -L.edge - L.beta : L.edge,
                        L.mirrored ? -L.edge : L.edge + L.beta};
                    if (lo > alo || hi < ahi)
                        throw Error("cannot clip a layer piece");
                    L.scale *= std::exp(log_factor);
                    return L;
                }
            },
            p);
    }

    static void clip_table(TablePiece& t, double lo, double hi) {
        lo = std::max(lo, t.xs.front());
        hi = std::min(hi, t.xs.back());
        std::vector<double> xs, ys;
        auto value_at = [&](double x) { return detail::table_density(t, x) / t.scale; };
        xs.push_back(lo);
        ys.push_back(value_at(lo));
        for (std::size_t i = 0; i < t.xs.size(); ++i)
            if (t.xs[i] > lo && t.xs[i] < hi) {
                xs.push_back(t.xs[i]);
                ys.push_back(t.ys[i]);
            }
        xs.push_back(hi);
        ys.push_back(value_at(hi));
        t.xs = std::move(xs);
        t.ys = std::move(ys);
    }

    double sample_piece(const Piece& p, PathRng& rng) const {
        if (const auto* L = std::get_if<LayerPiece>(&p)) {
            // stage 1: w from the density r du/(u log^2 u): u = (r beta)^(1/q)
            const double q = rng.uniform01_pos();
            const double u_w = std::exp(std::log(L->r * L->beta) / q);
            const double w_dist = u_w / L->r;
            // stage 2: x from base restricted to (edge, edge+w_dist]
            const double K = detail::layer_base_mass(*L, w_dist);
            double dist = w_dist;
            if (K > 0.0) {
                const double m2 = rng.uniform01() * K;
                dist = layer_base_quantile(*L, m2, w_dist);
            }
            const double x = L->edge + dist;
            return L->mirrored ? -x : x;
        }
        const auto sp = to_simple(p);
        const double m = detail::simple_mass(sp, -kInf, kInf).to_double();
        const double target = rng.uniform01() * m;
        return simple_quantile(sp, target);
    }

    static double layer_base_quantile(const LayerPiece& L, double m, double max_dist) {
        double lo = 0.0, hi = max_dist;
        for (int i = 0; i < 120; ++i) {
            const double mid = 0.5 * (lo + hi);
            if (mid <= lo || mid >= hi) break;
            if (detail::layer_base_mass(L, mid) >= m)
                hi = mid;
            else
                lo = mid;
        }
        return hi;
    }

    static double simple_quantile(const detail::SimplePiece& p, double target) {
        if (const auto* e = std::get_if<ExpPiece>(&p)) {
            if (e->dir > 0) {
                const double arg = -target * e->rate * std::exp(e->rate * e->lo - e->log_amp);
                return e->lo - std::log1p(std::max(arg, -1.0 + 1e-300)) / e->rate;
            }
            const double full = detail::exp_mass(*e, -kInf, kInf).to_double();
            const double from_hi = full - target;
            const double arg = -from_hi * e->rate * std::exp(-e->rate * e->hi - e->log_amp);
            return e->hi + std::log1p(std::max(arg, -1.0 + 1e-300)) / e->rate;
        }
        if (const auto* u = std::get_if<UniformPiece>(&p))
            return u->lo + target / u->height;
        if (const auto* pw = std::get_if<PowerPiece>(&p)) {
            const double sgn = pw->lo >= 0.0 ? 1.0 : -1.0;
            const double t0 = std::min(std::abs(pw->lo), std::abs(pw->hi));
            const double t1 = std::max(std::abs(pw->lo), std::abs(pw->hi));
            const double e1 = pw->expo + 1.0;
            // target measured from the end of the support nearest 0 in |x|
            double t;
            if (std::abs(e1) < 1e-14) {
                t = t0 * std::exp(target / pw->coef);
            } else {
                t = std::pow(std::pow(t0, e1) + e1 * target / pw->coef, 1.0 / e1);
            }
            t = std::clamp(t, t0, t1);
            const bool from_small_abs = (sgn > 0.0);
            if (from_small_abs) return sgn * t;
            // negative side: cumulative from lo = -t1 upward means from large |x| down
            const double full = detail::power_mass(*pw, pw->lo, pw->hi).to_double();
            double t_from_lo;
            if (std::abs(e1) < 1e-14)
                t_from_lo = t0 * std::exp((full - target) / pw->coef);
            else
                t_from_lo = std::pow(std::pow(t0, e1) + e1 * (full - target) / pw->coef, 1.0 / e1);
            return -std::clamp(t_from_lo, t0, t1);
        }
        const auto& t = std::get<TablePiece>(p);
        double acc = 0.0;
        for (std::size_t i = 0; i + 1 < t.xs.size(); ++i) {
            const double cell = detail::table_mass(t, t.xs[i], t.xs[i + 1]).to_double();
            if (acc + cell >= target || i + 2 == t.xs.size()) {
                double lo = t.xs[i], hi = t.xs[i + 1];
                const double want = target - acc;
                for (int k = 0; k < 80; ++k) {
                    const double mid = 0.5 * (lo + hi);
                    if (detail::table_mass(t, t.xs[i], mid).to_double() >= want)
                        hi = mid;
                    else
                        lo = mid;
                }
                return 0.5 * (lo + hi);
            }
            acc += cell;
        }
        return t.xs.back();
    }

    void validate() const {
        for (const Atom& a : atoms_) {
            if (a.x == 0.0) throw InvalidParam("atom at 0 not allowed");
            if (!(a.w > 0.0)) throw InvalidParam("atom mass must be positive");
        }
        for (const auto& p : pieces_) {
            auto [lo, hi] = piece_range(p);
            if (!(lo < hi)) throw InvalidParam("density piece with empty support");
            if (lo < 0.0 && hi > 0.0 && !std::holds_alternative<TablePiece>(p) &&
                !std::holds_alternative<UniformPiece>(p))
                throw InvalidParam("density support must not straddle 0");
            if (const auto* pw = std::get_if<PowerPiece>(&p)) {
                if (pw->lo < 0.0 && pw->hi > 0.0)
                    throw InvalidParam("power density must live on one side of 0");
                if (!(pw->coef > 0.0)) throw InvalidParam("power coef must be positive");
            }
            if (const auto* t = std::get_if<TablePiece>(&p)) {
                if (t->xs.size() < 2 || t->xs.size() != t->ys.size())
                    throw InvalidParam("table density needs matching xs/ys, >= 2 knots");
                for (std::size_t i = 0; i + 1 < t->xs.size(); ++i)
                    if (!(t->xs[i] < t->xs[i + 1])) throw InvalidParam("table xs must increase");
                for (double y : t->ys)
                    if (y < 0.0) throw InvalidParam("table density values must be >= 0");
            }
        }
    }

    void normalize() {
        validate();
        std::sort(atoms_.begin(), atoms_.end(), [](const Atom& a, const Atom& b) { return a.x < b.x; });
        // merge duplicate atoms
        std::vector<Atom> merged;
        for (const Atom& a : atoms_) {
            if (!merged.empty() && merged.back().x == a.x)
                merged.back().w += a.w;
            else
                merged.push_back(a);
        }
        atoms_ = std::move(merged);
        std::sort(pieces_.begin(), pieces_.end(), [](const Piece& a, const Piece& b) {
            return piece_range(a).first < piece_range(b).first;
        });

        bounds_ = SupportBounds{};
        bounds_.empty = atoms_.empty() && pieces_.empty();
        for (const Atom& a : atoms_) {
            bounds_.x_min = std::min(bounds_.x_min, a.x);
            bounds_.x_max = std::max(bounds_.x_max, a.x);
        }
        for (const auto& p : pieces_) {
            auto [lo, hi] = piece_range(p);
            bounds_.x_min = std::min(bounds_.x_min, lo);
            bounds_.x_max = std::max(bounds_.x_max, hi);
        }

        total_mass_ = 0.0;
        for (const Atom& a : atoms_) total_mass_ += a.w;
        for (const auto& p : pieces_) {
            if (const auto* pw = std::get_if<PowerPiece>(&p)) {
                if (!detail::power_mass_finite(*pw)) {
                    total_mass_ = kInf;
                    continue;
                }
            }
            if (total_mass_ < kInf) total_mass_ += piece_mass(p, -kInf, kInf).to_double();
        }

        special_ = 0.0;
        for (const Atom& a : atoms_) special_ += abs_min_square(a.x) * a.w;
        for (const auto& p : pieces_) {
            if (special_ == kInf) break;
            if (const auto* pw = std::get_if<PowerPiece>(&p)) {
                const double alo = std::min(std::abs(pw->lo), std::abs(pw->hi));
                const double ahi = std::max(std::abs(pw->lo), std::abs(pw->hi));
                if ((alo == 0.0 && pw->expo <= -3.0) || (ahi == kInf && pw->expo >= -2.0)) {
                    special_ = kInf;
                    continue;
                }
            }
            Scaled part{0.0, 0.0};
            for (double split : {-1.0, 1.0}) (void)split;  // kink handled by range split below
            auto [lo, hi] = piece_range(p);
            for (auto [a, b] : {std::pair{lo, std::min(hi, -1.0)},
                                std::pair{std::max(lo, -1.0), std::min(hi, 1.0)},
                                std::pair{std::max(lo, 1.0), hi}}) {
                if (!(a < b)) continue;
                if (const auto* L = std::get_if<LayerPiece>(&p)) {
                    part = scaled_add(part, {0.0, layer_f_integral(*L, abs_min_square, a, b)});
                } else {
                    part = scaled_add(part,
                                      detail::simple_integrate(to_simple(p), abs_min_square, a, b, {}));
                }
            }
            special_ += part.to_double();
        }
    }
};

}  // namespace viab
