#pragma once

// Truncated multivariate jet algebra over (w, z, zbar, hbar).
//
// A jet is a sparse polynomial in
//   - real parameter variables w_1..w_dw  (w-pairs (y_j, eta_j) interleaved:
//     y_j = w_{2j}, eta_j = w_{2j+1} whenever the w-space is symplectic),
//   - complex pairs (z_j, zbar_j), j = 1..pairs, with z_j = x_j + i xi_j,
//   - the formal parameter hbar,
// truncated to a GradeBound. The phase degree of z^a zbar^g hbar^l is
// |a| + |g| + 2l; w-powers are tracked separately and do not grade.
//
// The same container also carries jets whose pair slots hold the real
// coordinates (x_j, xi_j) instead of (z_j, zbar_j); the flag `real_basis`
// records which monomial basis is in use and complex_convert switches
// between them. Star products and brackets require the complex basis.

#include <algorithm>
#include <array>
#include <cmath>
#include <complex>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace magnf {

inline constexpr int kMaxW = 8;      // max w variables per jet
inline constexpr int kMaxPairs = 4;  // max complex pairs per jet

/// Truncation limits; every operation prunes to the tightest bound of its
/// operands.
struct GradeBound {
  int max_phase_degree = 8;
  int max_w_degree = 8;

  friend GradeBound min(const GradeBound& a, const GradeBound& b) {
    return {std::min(a.max_phase_degree, b.max_phase_degree),
            std::min(a.max_w_degree, b.max_w_degree)};
  }
  friend bool operator==(const GradeBound& a, const GradeBound& b) {
    return a.max_phase_degree == b.max_phase_degree &&
           a.max_w_degree == b.max_w_degree;
  }
};

/// Exponent vector of one monomial w^w z^a zbar^g hbar^l. Arrays are
/// zero-padded past the jet's dimensions so comparisons need no size info.
struct MultiIndex {
  std::array<int8_t, kMaxW> w{};
  std::array<int8_t, kMaxPairs> a{};
  std::array<int8_t, kMaxPairs> g{};
  int8_t l = 0;

  int w_degree() const {
    int s = 0;
    for (int8_t e : w) s += e;
    return s;
  }
  int z_degree() const {
    int s = 0;
    for (int i = 0; i < kMaxPairs; ++i) s += a[i] + g[i];
    return s;
  }
  int phase_degree() const { return z_degree() + 2 * l; }

  // Canonical order: lexicographic on (l, |a|+|g|, a, g, w).
  friend bool operator<(const MultiIndex& x, const MultiIndex& y) {
    if (x.l != y.l) return x.l < y.l;
    const int zx = x.z_degree(), zy = y.z_degree();
    if (zx != zy) return zx < zy;
    if (x.a != y.a) return x.a < y.a;
    if (x.g != y.g) return x.g < y.g;
    return x.w < y.w;
  }
  friend bool operator==(const MultiIndex& x, const MultiIndex& y) {
    return x.l == y.l && x.a == y.a && x.g == y.g && x.w == y.w;
  }
};

/// Scalar requirements for JetT. Specialize for exact coefficient types.
template <typename S>
struct ScalarOps {
  static S zero() { return S(0); }
  static S one() { return S(1); }
  static S imag_unit() { return S(0, 1); }
  static S conjugate(const S& v) { return std::conj(v); }
  static double abs_approx(const S& v) { return std::abs(v); }
  static bool is_zero(const S& v) { return v == S(0); }
  static S from_int(long long n) { return S(static_cast<double>(n)); }
  static S inverse(const S& v) { return S(1) / v; }
  /// Pruning threshold relative to the largest coefficient; 0 disables.
  /// Tight enough that pruning high-amplitude transients (normal-form
  /// generators reach ~1e4 before cancellation) stays below 1e-12 absolute.
  static constexpr double drop_ratio = 1e-16;
};

namespace detail {
inline long long falling(int n, int k) {
  long long r = 1;
  for (int i = 0; i < k; ++i) r *= (n - i);
  return r;
}
inline long long factorial(int n) {
  long long r = 1;
  for (int i = 2; i <= n; ++i) r *= i;
  return r;
}
}  // namespace detail

template <typename Scalar>
class JetT {
 public:
  using Ops = ScalarOps<Scalar>;
  using Map = std::map<MultiIndex, Scalar>;

  JetT() = default;
  JetT(int dim_w, int pairs, GradeBound bound, bool real_basis = false)
      : dim_w_(dim_w), pairs_(pairs), bound_(bound), real_basis_(real_basis) {
    if (dim_w < 0 || dim_w > kMaxW || pairs < 0 || pairs > kMaxPairs)
      throw std::invalid_argument("JetT: dimensions out of range");
  }

  int dim_w() const { return dim_w_; }
  int pairs() const { return pairs_; }
  bool real_basis() const { return real_basis_; }
  const GradeBound& bound() const { return bound_; }
  void set_bound(const GradeBound& b) { bound_ = b; }

  bool empty() const { return c_.empty(); }
  std::size_t size() const { return c_.size(); }
  const Map& terms() const { return c_; }

  bool same_shape(const JetT& o) const {
    return dim_w_ == o.dim_w_ && pairs_ == o.pairs_ &&
           (pairs_ == 0 || real_basis_ == o.real_basis_);
  }

  bool within_bound(const MultiIndex& m) const {
    return m.phase_degree() <= bound_.max_phase_degree &&
           m.w_degree() <= bound_.max_w_degree;
  }

  Scalar coeff(const MultiIndex& m) const {
    auto it = c_.find(m);
    return it == c_.end() ? Ops::zero() : it->second;
  }
  /// Coefficient of the constant monomial.
  Scalar constant_term() const { return coeff(MultiIndex{}); }

  void add_term(const MultiIndex& m, const Scalar& v) {
    if (!within_bound(m) || Ops::is_zero(v)) return;
    auto [it, fresh] = c_.emplace(m, v);
    if (!fresh) {
      it->second = it->second + v;
      if (Ops::is_zero(it->second)) c_.erase(it);
    }
  }
  void set_term(const MultiIndex& m, const Scalar& v) {
    if (!within_bound(m)) return;
    if (Ops::is_zero(v))
      c_.erase(m);
    else
      c_[m] = v;
  }

  double max_abs() const {
    double r = 0;
    for (auto& [m, v] : c_) r = std::max(r, Ops::abs_approx(v));
    return r;
  }

  /// Minimal phase degree over stored terms (bound + 1 when empty).
  int valuation() const {
    int v = bound_.max_phase_degree + 1;
    for (auto& [m, s] : c_) v = std::min(v, m.phase_degree());
    return v;
  }

  /// Drop coefficients below drop_ratio * max |coeff|.
  void canonicalize() {
    if constexpr (Ops::drop_ratio > 0) {
      const double cut = Ops::drop_ratio * max_abs();
      for (auto it = c_.begin(); it != c_.end();) {
        if (Ops::abs_approx(it->second) < cut)
          it = c_.erase(it);
        else
          ++it;
      }
    }
  }

  JetT truncated(const GradeBound& b) const {
    JetT r(dim_w_, pairs_, min(bound_, b), real_basis_);
    for (auto& [m, v] : c_) r.add_term(m, v);
    return r;
  }

  JetT& operator+=(const JetT& o) {
    require_shape(o);
    shrink_bound(min(bound_, o.bound_));
    for (auto& [m, v] : o.c_) add_term(m, v);
    return *this;
  }
  JetT& operator-=(const JetT& o) {
    require_shape(o);
    shrink_bound(min(bound_, o.bound_));
    for (auto& [m, v] : o.c_) add_term(m, Ops::zero() - v);
    return *this;
  }
  /// Tighten the bound, dropping stored terms that fall outside it.
  void shrink_bound(const GradeBound& b) {
    if (b == bound_) return;
    bound_ = b;
    for (auto it = c_.begin(); it != c_.end();)
      it = within_bound(it->first) ? std::next(it) : c_.erase(it);
  }
  JetT& operator*=(const Scalar& s) {
    if (Ops::is_zero(s)) {
      c_.clear();
      return *this;
    }
    for (auto& [m, v] : c_) v = v * s;
    return *this;
  }

  void require_shape(const JetT& o) const {
    if (!same_shape(o))
      throw std::invalid_argument("jet dimension/basis mismatch");
  }

 private:
  int dim_w_ = 0;
  int pairs_ = 0;
  GradeBound bound_{};
  bool real_basis_ = false;
  Map c_;
};

template <typename S>
JetT<S> operator+(JetT<S> a, const JetT<S>& b) {
  a += b;
  return a;
}
template <typename S>
JetT<S> operator-(JetT<S> a, const JetT<S>& b) {
  a -= b;
  return a;
}
template <typename S>
JetT<S> operator*(JetT<S> a, const S& s) {
  a *= s;
  return a;
}
template <typename S>
JetT<S> operator*(const S& s, JetT<S> a) {
  a *= s;
  return a;
}
template <typename S>
JetT<S> operator-(const JetT<S>& a) {
  JetT<S> r = a;
  r *= (ScalarOps<S>::zero() - ScalarOps<S>::one());
  return r;
}

template <typename S>
JetT<S> jet_add(const JetT<S>& a, const JetT<S>& b) {
  return a + b;
}

/// Cauchy product truncated to the shared bound.
template <typename S>
JetT<S> jet_mul(const JetT<S>& a, const JetT<S>& b) {
  a.require_shape(b);
  JetT<S> r(a.dim_w(), a.pairs(), min(a.bound(), b.bound()), a.real_basis());
  const int maxp = r.bound().max_phase_degree;
  const int maxw = r.bound().max_w_degree;
  for (auto& [ma, ca] : a.terms()) {
    for (auto& [mb, cb] : b.terms()) {
      if (ma.phase_degree() + mb.phase_degree() > maxp) continue;
      if (ma.w_degree() + mb.w_degree() > maxw) continue;
      MultiIndex m;
      for (int i = 0; i < kMaxW; ++i) m.w[i] = int8_t(ma.w[i] + mb.w[i]);
      for (int i = 0; i < kMaxPairs; ++i) {
        m.a[i] = int8_t(ma.a[i] + mb.a[i]);
        m.g[i] = int8_t(ma.g[i] + mb.g[i]);
      }
      m.l = int8_t(ma.l + mb.l);
      r.add_term(m, ca * cb);
    }
  }
  r.canonicalize();
  return r;
}
template <typename S>
JetT<S> operator*(const JetT<S>& a, const JetT<S>& b) {
  return jet_mul(a, b);
}

template <typename S>
JetT<S> jet_one(int dim_w, int pairs, GradeBound bound, bool real_basis = false) {
  JetT<S> r(dim_w, pairs, bound, real_basis);
  r.add_term(MultiIndex{}, ScalarOps<S>::one());
  return r;
}

/// Multiplicative inverse by Neumann series; requires a nonzero constant term.
template <typename S>
JetT<S> jet_invert(const JetT<S>& u) {
  const S c0 = u.constant_term();
  if (ScalarOps<S>::is_zero(c0) || ScalarOps<S>::abs_approx(c0) < 1e-300)
    throw std::domain_error("jet_invert: zero constant term");
  const S ic0 = ScalarOps<S>::inverse(c0);
  JetT<S> one = jet_one<S>(u.dim_w(), u.pairs(), u.bound(), u.real_basis());
  JetT<S> v = one - (u * ic0);  // valuation >= 1 in combined degree
  JetT<S> r = one, p = one;
  const int kmax = u.bound().max_phase_degree + u.bound().max_w_degree;
  for (int k = 1; k <= kmax; ++k) {
    p = p * v;
    if (p.empty()) break;
    r += p;
  }
  r *= ic0;
  r.canonicalize();
  return r;
}

/// Variable reference for derivative(). In real basis Z means x_j and
/// Zbar means xi_j.
enum class Var : uint8_t { W, Z, Zbar };

template <typename S>
JetT<S> derivative(const JetT<S>& a, Var kind, int idx) {
  JetT<S> r(a.dim_w(), a.pairs(), a.bound(), a.real_basis());
  for (auto& [m, v] : a.terms()) {
    MultiIndex n = m;
    int e = 0;
    switch (kind) {
      case Var::W:
        e = m.w[idx];
        if (e) n.w[idx] = int8_t(e - 1);
        break;
      case Var::Z:
        e = m.a[idx];
        if (e) n.a[idx] = int8_t(e - 1);
        break;
      case Var::Zbar:
        e = m.g[idx];
        if (e) n.g[idx] = int8_t(e - 1);
        break;
    }
    if (e) r.add_term(n, v * ScalarOps<S>::from_int(e));
  }
  return r;
}

/// Multiply by hbar^delta (delta may be negative; requires divisibility).
template <typename S>
JetT<S> shift_hbar(const JetT<S>& a, int delta) {
  JetT<S> r(a.dim_w(), a.pairs(), a.bound(), a.real_basis());
  for (auto& [m, v] : a.terms()) {
    if (m.l + delta < 0)
      throw std::domain_error("shift_hbar: not divisible by hbar");
    MultiIndex n = m;
    n.l = int8_t(m.l + delta);
    r.add_term(n, v);
  }
  return r;
}

/// Keep a single hbar power, dropping hbar from the monomial.
template <typename S>
JetT<S> hbar_slice(const JetT<S>& a, int l) {
  JetT<S> r(a.dim_w(), a.pairs(), a.bound(), a.real_basis());
  for (auto& [m, v] : a.terms()) {
    if (m.l != l) continue;
    MultiIndex n = m;
    n.l = 0;
    r.add_term(n, v);
  }
  return r;
}

/// (terms of phase degree < N, terms of phase degree >= N)
template <typename S>
std::pair<JetT<S>, JetT<S>> grade_split(const JetT<S>& a, int N) {
  JetT<S> lo(a.dim_w(), a.pairs(), a.bound(), a.real_basis());
  JetT<S> hi = lo;
  for (auto& [m, v] : a.terms())
    (m.phase_degree() < N ? lo : hi).add_term(m, v);
  return {lo, hi};
}

/// Terms of exact phase degree N.
template <typename S>
JetT<S> grade_part(const JetT<S>& a, int N) {
  JetT<S> r(a.dim_w(), a.pairs(), a.bound(), a.real_basis());
  for (auto& [m, v] : a.terms())
    if (m.phase_degree() == N) r.add_term(m, v);
  return r;
}

// ---------------------------------------------------------------------------
// Composition

/// Substitution target for every source variable. Components live over a
/// common target space; hbar passes through unchanged. Substitutes for pair
/// slots should vanish at the base point (otherwise the composition acts as a
/// base-point recentering and truncation is interpreted accordingly).
template <typename S>
struct JetMapT {
  std::vector<JetT<S>> w_comp;     // one per source w variable
  std::vector<JetT<S>> z_comp;     // one per source pair slot (z or x)
  std::vector<JetT<S>> zbar_comp;  // one per source pair slot (zbar or xi)

  const JetT<S>& any() const {
    if (!w_comp.empty()) return w_comp.front();
    if (!z_comp.empty()) return z_comp.front();
    return zbar_comp.front();
  }
};

template <typename S>
JetT<S> jet_compose(const JetT<S>& f, const JetMapT<S>& m) {
  if (static_cast<int>(m.w_comp.size()) != f.dim_w() ||
      static_cast<int>(m.z_comp.size()) != f.pairs() ||
      static_cast<int>(m.zbar_comp.size()) != f.pairs())
    throw std::invalid_argument("jet_compose: component count mismatch");
  const JetT<S>& proto = m.any();
  GradeBound b = proto.bound();
  for (auto& c : m.w_comp) b = min(b, c.bound());
  for (auto& c : m.z_comp) b = min(b, c.bound());
  for (auto& c : m.zbar_comp) b = min(b, c.bound());

  // Cached powers of each component.
  auto powers = [&](const JetT<S>& g, int maxe) {
    std::vector<JetT<S>> p;
    p.push_back(jet_one<S>(proto.dim_w(), proto.pairs(), b, proto.real_basis()));
    for (int e = 1; e <= maxe; ++e) p.push_back(p.back() * g);
    return p;
  };
  std::array<int, kMaxW> wmax{};
  std::array<int, kMaxPairs> amax{}, gmax{};
  for (auto& [mi, v] : f.terms()) {
    for (int i = 0; i < kMaxW; ++i) wmax[i] = std::max<int>(wmax[i], mi.w[i]);
    for (int i = 0; i < kMaxPairs; ++i) {
      amax[i] = std::max<int>(amax[i], mi.a[i]);
      gmax[i] = std::max<int>(gmax[i], mi.g[i]);
    }
  }
  std::vector<std::vector<JetT<S>>> wp(f.dim_w()), zp(f.pairs()), gp(f.pairs());
  for (int i = 0; i < f.dim_w(); ++i) wp[i] = powers(m.w_comp[i], wmax[i]);
  for (int i = 0; i < f.pairs(); ++i) zp[i] = powers(m.z_comp[i], amax[i]);
  for (int i = 0; i < f.pairs(); ++i) gp[i] = powers(m.zbar_comp[i], gmax[i]);

  JetT<S> r(proto.dim_w(), proto.pairs(), b, proto.real_basis());
  for (auto& [mi, v] : f.terms()) {
    JetT<S> t = jet_one<S>(proto.dim_w(), proto.pairs(), b, proto.real_basis());
    t *= v;
    for (int i = 0; i < f.dim_w(); ++i)
      if (mi.w[i]) t = t * wp[i][mi.w[i]];
    for (int i = 0; i < f.pairs(); ++i) {
      if (mi.a[i]) t = t * zp[i][mi.a[i]];
      if (mi.g[i]) t = t * gp[i][mi.g[i]];
    }
    t = shift_hbar(t, mi.l);
    r += t;
  }
  r.canonicalize();
  return r;
}

// ---------------------------------------------------------------------------
// Basis conversion  z_j = x_j + i xi_j

/// Switch the pair slots between the real monomial basis (x, xi) and the
/// complex basis (z, zbar). Round trip is the identity.
template <typename S>
JetT<S> complex_convert(const JetT<S>& a, bool to_complex) {
  using Ops = ScalarOps<S>;
  if (a.real_basis() != to_complex)
    throw std::invalid_argument("complex_convert: jet already in target basis");
  JetT<S> r(a.dim_w(), a.pairs(), a.bound(), !to_complex);
  const S I = Ops::imag_unit();
  const S half = Ops::inverse(Ops::from_int(2));
  for (auto& [m, v] : a.terms()) {
    // Expand each pair slot independently, accumulating partial monomials.
    std::vector<std::pair<MultiIndex, S>> acc;
    MultiIndex base = m;
    for (int j = 0; j < a.pairs(); ++j) { base.a[j] = 0; base.g[j] = 0; }
    acc.emplace_back(base, v);
    for (int j = 0; j < a.pairs(); ++j) {
      const int p = m.a[j], q = m.g[j];
      if (p == 0 && q == 0) continue;
      std::vector<std::pair<MultiIndex, S>> next;
      // to_complex: x^p xi^q = ((z+zb)/2)^p ((z-zb)/2i)^q
      // to real:    z^p zb^q = (x+i xi)^p (x-i xi)^q
      for (auto& [mi, cv] : acc) {
        for (int r1 = 0; r1 <= p; ++r1) {
          for (int r2 = 0; r2 <= q; ++r2) {
            S c = cv;
            c = c * Ops::from_int(detail::falling(p, r1) /
                                  detail::factorial(r1));
            c = c * Ops::from_int(detail::falling(q, r2) /
                                  detail::factorial(r2));
            MultiIndex n = mi;
            if (to_complex) {
              // (z+zb)/2: each factor contributes 1/2, both signs +1.
              // (z-zb)/(2i): each factor contributes -i/2, zbar picks -1.
              // r1, r2 count the z factors chosen from each binomial.
              S cc = c;
              for (int t = 0; t < p; ++t) cc = cc * half;
              for (int t = 0; t < q; ++t) cc = cc * (half * (Ops::zero() - I));
              if ((q - r2) % 2 == 1) cc = Ops::zero() - cc;
              n.a[j] = int8_t(r1 + r2);
              n.g[j] = int8_t((p - r1) + (q - r2));
              next.emplace_back(n, cc);
            } else {
              // z^p zb^q with z = x + i xi, zb = x - i xi
              S cc = c;
              for (int t = 0; t < p - r1; ++t) cc = cc * I;
              for (int t = 0; t < q - r2; ++t) cc = cc * (Ops::zero() - I);
              n.a[j] = int8_t(r1 + r2);             // x power
              n.g[j] = int8_t((p - r1) + (q - r2)); // xi power
              next.emplace_back(n, cc);
            }
          }
        }
      }
      acc.swap(next);
    }
    for (auto& [mi, cv] : acc) r.add_term(mi, cv);
  }
  r.canonicalize();
  return r;
}

// ---------------------------------------------------------------------------
// Poisson bracket and Moyal product
//
// {a,b} = sum_j (d_eta a d_y b - d_y a d_eta b)
//       + sum_j (d_xi a d_x b - d_x a d_xi b)
// with the z-part written in the complex basis as
//   2i (d_z a d_zbar b - d_zbar a d_z b).
// The w variables must form symplectic pairs (y_j, eta_j) = (w_2j, w_2j+1).

template <typename S>
JetT<S> poisson_bracket(const JetT<S>& a, const JetT<S>& b) {
  using Ops = ScalarOps<S>;
  a.require_shape(b);
  if (a.dim_w() % 2 != 0)
    throw std::invalid_argument("poisson_bracket: w variables must pair up");
  JetT<S> r(a.dim_w(), a.pairs(), min(a.bound(), b.bound()), a.real_basis());
  const S two_i = Ops::from_int(2) * Ops::imag_unit();
  for (int j = 0; j * 2 < a.dim_w(); ++j) {
    const int y = 2 * j, eta = 2 * j + 1;
    r += derivative(a, Var::W, eta) * derivative(b, Var::W, y);
    r -= derivative(a, Var::W, y) * derivative(b, Var::W, eta);
  }
  for (int j = 0; j < a.pairs(); ++j) {
    if (a.real_basis()) {
      // slots are (x, xi): d_xi a d_x b - d_x a d_xi b
      r += derivative(a, Var::Zbar, j) * derivative(b, Var::Z, j);
      r -= derivative(a, Var::Z, j) * derivative(b, Var::Zbar, j);
    } else {
      JetT<S> t = derivative(a, Var::Z, j) * derivative(b, Var::Zbar, j);
      t -= derivative(a, Var::Zbar, j) * derivative(b, Var::Z, j);
      t *= two_i;
      r += t;
    }
  }
  r.canonicalize();
  return r;
}

namespace detail {

// One bidifferential contraction pattern acting on a monomial pair. The Moyal
// exponential factorizes over variable pairs; for each pair we sum the two
// directed contractions (s "plus", u "minus") with the scalar weights
//   w-pair: (hbar/2i)^{s+u} (-1)^u / (s! u!)
//   z-pair: hbar^{s+u} (-1)^u / (s! u!)        (the 2i of the z-part cancels)
// and falling-factorial derivative factors. w-contractions raise the phase
// degree by 2 each and are capped by w_budget; z-contractions preserve it and
// are capped by the exponents. parity_mask: -1 all orders, 1 odd only.
template <typename S, typename Sink>
void star_pair_terms(const MultiIndex& ma, const MultiIndex& mb, int dim_w,
                     int pairs, int w_budget, int parity_mask, Sink&& sink) {
  using Ops = ScalarOps<S>;
  struct Branch {
    MultiIndex m;  // accumulated result exponents
    S coef;
    int order;  // total contraction order so far
  };
  static thread_local std::vector<Branch> cur, next;
  cur.clear();
  next.clear();
  MultiIndex m0;
  for (int i = 0; i < kMaxW; ++i) m0.w[i] = int8_t(ma.w[i] + mb.w[i]);
  for (int i = 0; i < kMaxPairs; ++i) {
    m0.a[i] = int8_t(ma.a[i] + mb.a[i]);
    m0.g[i] = int8_t(ma.g[i] + mb.g[i]);
  }
  m0.l = int8_t(ma.l + mb.l);
  cur.push_back({m0, Ops::one(), 0});

  const S half_over_i = Ops::inverse(Ops::from_int(2)) *
                        (Ops::zero() - Ops::imag_unit());  // hbar/(2i) scalar

  // w pairs (br.order counts only w-contractions while these loops run)
  for (int j = 0; j * 2 < dim_w; ++j) {
    const int y = 2 * j, eta = 2 * j + 1;
    const int smax = std::min<int>(ma.w[eta], mb.w[y]);
    const int umax = std::min<int>(ma.w[y], mb.w[eta]);
    if (smax == 0 && umax == 0) continue;
    next.clear();
    for (auto& br : cur) {
      for (int s = 0; s <= smax; ++s) {
        for (int u = 0; u <= umax; ++u) {
          if (br.order + s + u > w_budget) continue;
          S c = br.coef;
          if (s + u > 0) {
            long long num = falling(ma.w[eta], s) * falling(mb.w[y], s) *
                            falling(ma.w[y], u) * falling(mb.w[eta], u);
            c = c * Ops::from_int(num);
            c = c * ScalarOps<S>::inverse(
                        Ops::from_int(factorial(s) * factorial(u)));
            for (int t = 0; t < s + u; ++t) c = c * half_over_i;
            if (u % 2 == 1) c = Ops::zero() - c;
          }
          Branch nb = br;
          nb.coef = c;
          nb.order += s + u;
          nb.m.w[eta] = int8_t(nb.m.w[eta] - s - u);
          nb.m.w[y] = int8_t(nb.m.w[y] - s - u);
          nb.m.l = int8_t(nb.m.l + s + u);
          next.push_back(nb);
        }
      }
    }
    cur.swap(next);
  }
  // z pairs
  for (int j = 0; j < pairs; ++j) {
    const int smax = std::min<int>(ma.a[j], mb.g[j]);
    const int umax = std::min<int>(ma.g[j], mb.a[j]);
    if (smax == 0 && umax == 0) continue;
    next.clear();
    for (auto& br : cur) {
      for (int s = 0; s <= smax; ++s) {
        for (int u = 0; u <= umax; ++u) {
          S c = br.coef;
          if (s + u > 0) {
            long long num = falling(ma.a[j], s) * falling(mb.g[j], s) *
                            falling(ma.g[j], u) * falling(mb.a[j], u);
            c = c * Ops::from_int(num);
            c = c * ScalarOps<S>::inverse(
                        Ops::from_int(factorial(s) * factorial(u)));
            if (u % 2 == 1) c = Ops::zero() - c;
          }
          Branch nb = br;
          nb.coef = c;
          nb.order += s + u;
          nb.m.a[j] = int8_t(nb.m.a[j] - s - u);
          nb.m.g[j] = int8_t(nb.m.g[j] - s - u);
          nb.m.l = int8_t(nb.m.l + s + u);
          next.push_back(nb);
        }
      }
    }
    cur.swap(next);
  }
  for (auto& br : cur) {
    if (parity_mask != -1 && (br.order & 1) != parity_mask) continue;
    sink(br.m, br.coef, br.order);
  }
}

}  // namespace detail

/// Moyal star product a * b = sum_k (1/k!) (hbar/2i)^k Box^k(a (x) b)|_diag,
/// truncated to the shared bound. Requires the complex z basis.
template <typename S>
JetT<S> moyal_star(const JetT<S>& a, const JetT<S>& b) {
  a.require_shape(b);
  if (a.real_basis() && a.pairs() > 0)
    throw std::invalid_argument("moyal_star: convert to the complex basis");
  if (a.dim_w() % 2 != 0)
    throw std::invalid_argument("moyal_star: w variables must pair up");
  JetT<S> r(a.dim_w(), a.pairs(), min(a.bound(), b.bound()), a.real_basis());
  const int maxp = r.bound().max_phase_degree;
  const int maxw = r.bound().max_w_degree;
  for (auto& [ma, ca] : a.terms()) {
    const int pa = ma.phase_degree();
    for (auto& [mb, cb] : b.terms()) {
      const int pb = mb.phase_degree();
      if (pa + pb > maxp) continue;
      const S cab = ca * cb;
      detail::star_pair_terms<S>(
          ma, mb, a.dim_w(), a.pairs(), (maxp - pa - pb) / 2, -1,
          [&](const MultiIndex& m, const S& c, int) {
            if (m.phase_degree() <= maxp && m.w_degree() <= maxw)
              r.add_term(m, cab * c);
          });
    }
  }
  r.canonicalize();
  return r;
}

/// Moyal bracket [a,b] = a*b - b*a, computed directly from the odd
/// contraction orders so the cancellation of even orders is exact.
template <typename S>
JetT<S> moyal_bracket(const JetT<S>& a, const JetT<S>& b) {
  using Ops = ScalarOps<S>;
  a.require_shape(b);
  if (a.real_basis() && a.pairs() > 0)
    throw std::invalid_argument("moyal_bracket: convert to the complex basis");
  if (a.dim_w() % 2 != 0)
    throw std::invalid_argument("moyal_bracket: w variables must pair up");
  JetT<S> r(a.dim_w(), a.pairs(), min(a.bound(), b.bound()), a.real_basis());
  const int maxp = r.bound().max_phase_degree;
  const int maxw = r.bound().max_w_degree;
  for (auto& [ma, ca] : a.terms()) {
    const int pa = ma.phase_degree();
    for (auto& [mb, cb] : b.terms()) {
      const int pb = mb.phase_degree();
      if (pa + pb > maxp) continue;
      const S cab = ca * cb;
      detail::star_pair_terms<S>(
          ma, mb, a.dim_w(), a.pairs(), (maxp - pa - pb) / 2, 1,
          [&](const MultiIndex& m, const S& c, int) {
            if (m.phase_degree() <= maxp && m.w_degree() <= maxw)
              r.add_term(m, (cab * c) * Ops::from_int(2));
          });
    }
  }
  r.canonicalize();
  return r;
}

/// Copy with a different bound (existing terms outside it are dropped).
template <typename S>
JetT<S> rebound(const JetT<S>& a, const GradeBound& b) {
  JetT<S> r(a.dim_w(), a.pairs(), b, a.real_basis());
  for (auto& [m, v] : a.terms()) r.add_term(m, v);
  return r;
}

/// (i/hbar) [tau, a]: the bracket is formed with two grades of phase
/// headroom so the hbar division keeps the full target window, then
/// truncated back to the shared bound.
template <typename S>
JetT<S> scaled_ad(const JetT<S>& tau, const JetT<S>& a) {
  using Ops = ScalarOps<S>;
  const GradeBound target = min(tau.bound(), a.bound());
  const GradeBound ext{target.max_phase_degree + 2, target.max_w_degree};
  JetT<S> br = moyal_bracket(rebound(tau, ext), rebound(a, ext));
  JetT<S> r = rebound(shift_hbar(br, -1), target);
  r *= Ops::imag_unit();
  return r;
}

/// exp((i/hbar) ad_tau) a truncated to the bound. tau must have phase
/// valuation >= 3 so the series stabilizes.
template <typename S>
JetT<S> exp_ad(const JetT<S>& tau, const JetT<S>& a, int order = -1) {
  using Ops = ScalarOps<S>;
  if (!tau.empty() && tau.valuation() < 3)
    throw std::invalid_argument("exp_ad: generator must have valuation >= 3");
  if (order < 0) order = a.bound().max_phase_degree + 1;
  JetT<S> r = a;
  JetT<S> term = a;
  for (int n = 1; n <= order; ++n) {
    term = scaled_ad(tau, term);
    term *= Ops::inverse(Ops::from_int(n));
    if (term.empty()) break;
    r += term;
  }
  r.canonicalize();
  return r;
}

/// Pointwise evaluation; pair slots take (z, zbar) values in the complex
/// basis and (x, xi) values in the real basis.
inline std::complex<double> evaluate(
    const JetT<std::complex<double>>& a,
    const std::vector<std::complex<double>>& wv,
    const std::vector<std::complex<double>>& zv,
    const std::vector<std::complex<double>>& zbv, double hbar) {
  std::complex<double> r = 0;
  for (auto& [m, v] : a.terms()) {
    std::complex<double> t = v;
    for (int i = 0; i < a.dim_w(); ++i)
      for (int e = 0; e < m.w[i]; ++e) t *= wv[i];
    for (int j = 0; j < a.pairs(); ++j) {
      for (int e = 0; e < m.a[j]; ++e) t *= zv[j];
      for (int e = 0; e < m.g[j]; ++e) t *= zbv[j];
    }
    for (int e = 0; e < m.l; ++e) t *= hbar;
    r += t;
  }
  return r;
}

/// Real-symbol check: coeff(w,a,g,l) == conj(coeff(w,g,a,l)).
template <typename S>
double reality_defect(const JetT<S>& a) {
  double d = 0;
  for (auto& [m, v] : a.terms()) {
    MultiIndex n = m;
    std::swap(n.a, n.g);
    d = std::max(d, ScalarOps<S>::abs_approx(
                        v - ScalarOps<S>::conjugate(a.coeff(n))));
  }
  return d;
}

template <typename S>
double max_coeff_diff(const JetT<S>& a, const JetT<S>& b) {
  double d = 0;
  for (auto& [m, v] : a.terms())
    d = std::max(d, ScalarOps<S>::abs_approx(v - b.coeff(m)));
  for (auto& [m, v] : b.terms())
    d = std::max(d, ScalarOps<S>::abs_approx(v - a.coeff(m)));
  return d;
}

using Jet = JetT<std::complex<double>>;
using JetMap = JetMapT<std::complex<double>>;

}  // namespace magnf
