#include "magnf/birkhoff.hpp"

#include <Eigen/Eigenvalues>
#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include "magnf/field.hpp"

namespace magnf {

namespace {

using C = std::complex<double>;

Jet jet_like(const Jet& a) {
  return Jet(a.dim_w(), a.pairs(), a.bound(), a.real_basis());
}

MultiIndex w_part_of(const MultiIndex& m) {
  MultiIndex n;
  n.w = m.w;
  return n;
}

MultiIndex phase_part_of(const MultiIndex& m) {
  MultiIndex n = m;
  n.w = {};
  return n;
}

}  // namespace

std::pair<Jet, Jet> resonant_split(const Jet& a) {
  Jet K = jet_like(a), off = jet_like(a);
  for (auto& [m, v] : a.terms())
    (m.a == m.g ? K : off).add_term(m, v);
  return {K, off};
}

Jet t_action(const std::vector<Jet>& beta_hat, const Jet& a) {
  Jet r = jet_like(a);
  for (std::size_t j = 0; j < beta_hat.size(); ++j) {
    Jet weighted = jet_like(a);
    for (auto& [m, v] : a.terms()) {
      const int diff = m.a[j] - m.g[j];
      if (diff) weighted.add_term(m, v * C(diff, 0));
    }
    if (!weighted.empty()) r += beta_hat[j] * weighted;
  }
  r.canonicalize();
  return r;
}

Jet homological_solve(const Jet& offres, const std::vector<Jet>& beta_hat,
                      double tol) {
  const int half = static_cast<int>(beta_hat.size());
  double beta_scale = 0;
  for (auto& b : beta_hat) beta_scale += std::norm(b.constant_term());
  beta_scale = std::sqrt(beta_scale);

  // Group monomials by their phase pattern (alpha, gamma, l); each class is
  // a w-jet divided by the shared divisor <alpha-gamma, beta_hat(w)>.
  std::map<MultiIndex, Jet> classes;
  for (auto& [m, v] : offres.terms()) {
    if (m.a == m.g)
      throw std::invalid_argument(
          "homological_solve: input contains resonant (alpha == gamma) terms");
    const MultiIndex key = phase_part_of(m);
    auto it = classes.find(key);
    if (it == classes.end())
      it = classes.emplace(key, jet_like(offres)).first;
    it->second.add_term(w_part_of(m), v);
  }

  Jet out = jet_like(offres);
  std::map<std::vector<int>, Jet> inverse_cache;
  for (auto& [key, wjet] : classes) {
    std::vector<int> delta(half);
    for (int j = 0; j < half; ++j) delta[j] = key.a[j] - key.g[j];
    auto cit = inverse_cache.find(delta);
    if (cit == inverse_cache.end()) {
      Jet divisor = jet_like(offres);
      for (int j = 0; j < half; ++j)
        if (delta[j]) divisor += beta_hat[j] * C(delta[j], 0);
      const double d0 = std::abs(divisor.constant_term());
      if (d0 < tol * beta_scale) {
        std::ostringstream os;
        os << "homological_solve: resonance at alpha-gamma = (";
        for (int j = 0; j < half; ++j) os << (j ? "," : "") << delta[j];
        os << "), divisor " << d0;
        throw ResonanceError(delta, d0, os.str());
      }
      cit = inverse_cache.emplace(delta, jet_invert(divisor)).first;
    }
    Jet coeff = wjet * cit->second;
    for (auto& [wm, v] : coeff.terms()) {
      MultiIndex m = key;
      m.w = wm.w;
      out.add_term(m, v);
    }
  }
  out.canonicalize();
  return out;
}

NormalFormResult birkhoff_reduce(const Jet& symbol,
                                 const std::vector<Jet>& beta_hat, int r,
                                 double resonance_tol) {
  if (r < 3) throw std::invalid_argument("birkhoff_reduce: r must be >= 3");
  if (r > symbol.bound().max_phase_degree)
    throw std::invalid_argument("birkhoff_reduce: r exceeds the jet bound");
  const int half = symbol.pairs();
  if (static_cast<int>(beta_hat.size()) != half)
    throw std::invalid_argument("birkhoff_reduce: beta_hat size mismatch");

  Jet H0 = jet_like(symbol);
  for (int j = 0; j < half; ++j) {
    Jet Ij = jet_like(symbol);
    MultiIndex m;
    m.a[j] = 1;
    m.g[j] = 1;
    Ij.add_term(m, C(1, 0));
    H0 += beta_hat[j] * Ij;
  }

  const double scale = 1.0 + symbol.max_abs();
  {
    Jet gamma = symbol - H0;
    auto [lo, hi] = grade_split(gamma, 3);
    // Degree-2 content beyond H0 must be resonant (e.g. pure hbar terms);
    // anything else indicates a malformed input.
    auto [lo_res, lo_off] = resonant_split(lo);
    if (lo_off.max_abs() > 1e-9 * scale)
      throw std::invalid_argument(
          "birkhoff_reduce: non-resonant content below phase degree 3");
  }

  NormalFormResult out;
  out.r = r;
  out.beta_hat = beta_hat;
  out.tau = jet_like(symbol);
  double dust = 0;

  std::vector<Jet> K(r, jet_like(symbol));  // K[N] for N < r
  for (int N = 3; N <= r - 1; ++N) {
    Jet G = exp_ad(out.tau, symbol);
    Jet D = G - H0;
    for (int i = 0; i < N; ++i) D -= K[i];
    // Everything below degree N should have been removed already.
    auto [lo, atN] = grade_split(D, N);
    auto [lo_res, lo_off] = resonant_split(lo);
    for (auto& [m, v] : lo_res.terms()) K[m.phase_degree()].add_term(m, v);
    dust = std::max(dust, lo_off.max_abs());
    Jet RN = grade_part(atN, N);
    auto [KN, off] = resonant_split(RN);
    K[N] += KN;
    if (!off.empty()) {
      Jet tp = homological_solve(off, beta_hat, resonance_tol);
      tp *= C(0, 0.5);  // i/2: the honest bracket action is -2i T
      out.tau += tp;
    }
  }

  Jet G = exp_ad(out.tau, symbol);
  Jet D = G - H0;
  auto [low, high] = grade_split(D, r);
  auto [kap, off_low] = resonant_split(low);
  dust = std::max(dust, off_low.max_abs());
  out.kappa = kap;
  out.rho = high;
  out.split_dust = dust;
  if (dust > 1e-9 * scale)
    throw std::runtime_error(
        "birkhoff_reduce: off-resonant residue below the target order");
  out.fstar = star_rewrite(out.kappa);
  return out;
}

std::vector<FStarEntry> star_rewrite(const Jet& kappa) {
  const int half = kappa.pairs();
  // Classes keyed by (m, l), ordered by |m| descending for the triangular
  // inversion against the star powers.
  struct ClassKey {
    std::vector<int> m;
    int l;
    bool operator<(const ClassKey& o) const {
      int s = 0, so = 0;
      for (int x : m) s += x;
      for (int x : o.m) so += x;
      if (s != so) return s > so;
      if (m != o.m) return m < o.m;
      return l < o.l;
    }
  };

  // Star powers of the actions, cached per m.
  std::map<std::vector<int>, Jet> star_pow;
  auto star_power = [&](const std::vector<int>& m) -> const Jet& {
    auto it = star_pow.find(m);
    if (it != star_pow.end()) return it->second;
    Jet p = jet_one<C>(kappa.dim_w(), kappa.pairs(), kappa.bound(),
                       kappa.real_basis());
    for (int j = 0; j < half; ++j) {
      Jet Ij = jet_like(kappa);
      MultiIndex mi;
      mi.a[j] = 1;
      mi.g[j] = 1;
      Ij.add_term(mi, C(1, 0));
      for (int e = 0; e < m[j]; ++e) p = moyal_star(p, Ij);
    }
    return star_pow.emplace(m, std::move(p)).first->second;
  };

  Jet work = kappa;
  std::vector<FStarEntry> out;
  while (!work.empty()) {
    // Find the largest remaining |m| class.
    bool found = false;
    ClassKey best{{}, 0};
    for (auto& [mi, v] : work.terms()) {
      if (mi.a != mi.g)
        throw std::invalid_argument("star_rewrite: input is not resonant");
      ClassKey k{std::vector<int>(half), mi.l};
      for (int j = 0; j < half; ++j) k.m[j] = mi.a[j];
      if (!found || k < best) {
        best = k;
        found = true;
      }
    }
    // Collect the w-jet of that class.
    Jet cw = jet_like(work);
    for (auto& [mi, v] : work.terms()) {
      bool match = mi.l == best.l;
      for (int j = 0; j < half && match; ++j) match = mi.a[j] == best.m[j];
      if (match) cw.add_term(w_part_of(mi), v);
    }
    FStarEntry e;
    e.l = best.l;
    e.m = best.m;
    e.coeff = cw;
    out.push_back(e);
    Jet sub = cw * star_power(best.m);
    work -= shift_hbar(sub, best.l);
    work.canonicalize();
  }
  std::sort(out.begin(), out.end(), [](const FStarEntry& a, const FStarEntry& b) {
    const int ka = a.l + std::accumulate(a.m.begin(), a.m.end(), 0);
    const int kb = b.l + std::accumulate(b.m.begin(), b.m.end(), 0);
    if (ka != kb) return ka < kb;
    if (a.m != b.m) return a.m < b.m;
    return a.l < b.l;
  });
  return out;
}

Jet star_expand(const std::vector<FStarEntry>& table, int dim_w, int pairs,
                GradeBound bound) {
  Jet r(dim_w, pairs, bound, false);
  for (auto& e : table) {
    Jet p = jet_one<C>(dim_w, pairs, bound, false);
    for (int j = 0; j < pairs; ++j) {
      Jet Ij(dim_w, pairs, bound, false);
      MultiIndex mi;
      mi.a[j] = 1;
      mi.g[j] = 1;
      Ij.add_term(mi, C(1, 0));
      for (int k = 0; k < e.m[j]; ++k) p = moyal_star(p, Ij);
    }
    r += shift_hbar(e.coeff * p, e.l);
  }
  r.canonicalize();
  return r;
}

WilliamsonResult williamson(const Eigen::MatrixXd& Q) {
  const int n = static_cast<int>(Q.rows());
  if (n % 2 != 0 || Q.cols() != n)
    throw std::invalid_argument("williamson: need an even-dimensional form");
  if ((Q - Q.transpose()).norm() > 1e-10 * (1.0 + Q.norm()))
    throw std::invalid_argument("williamson: form matrix must be symmetric");
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> qs(Q);
  if (qs.eigenvalues().minCoeff() <= 0)
    throw std::invalid_argument("williamson: form must be positive definite");
  const int half = n / 2;
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(n, n);
  for (int j = 0; j < half; ++j) {
    J(2 * j, 2 * j + 1) = 1;
    J(2 * j + 1, 2 * j) = -1;
  }
  Eigen::MatrixXcd A = (J * Q).cast<C>();
  Eigen::ComplexEigenSolver<Eigen::MatrixXcd> es(A);
  if (es.info() != Eigen::Success)
    throw std::runtime_error("williamson: eigensolver failed");

  // Pick eigenpairs with positive imaginary part, sorted ascending.
  std::vector<std::pair<double, int>> pos;
  for (int k = 0; k < n; ++k) {
    const C ev = es.eigenvalues()[k];
    if (ev.imag() > 0) pos.push_back({ev.imag(), k});
  }
  std::sort(pos.begin(), pos.end());
  if (static_cast<int>(pos.size()) != half)
    throw std::runtime_error("williamson: unexpected eigenvalue structure");

  WilliamsonResult out;
  out.linear_map.resize(n, n);
  for (int j = 0; j < half; ++j) {
    out.nu.push_back(pos[j].first);
    Eigen::VectorXcd s = es.eigenvectors().col(pos[j].second);
    int lead = 0;
    while (lead < n - 1 && std::abs(s[lead]) <= 1e-8) ++lead;
    s *= std::polar(1.0, -std::arg(s[lead]));
    Eigen::VectorXd a = s.real(), b = s.imag();
    const double sigma = a.dot(J * b);
    if (std::abs(sigma) < 1e-12)
      throw std::runtime_error("williamson: degenerate symplectic pairing");
    const double sc = 1.0 / std::sqrt(std::abs(sigma));
    out.linear_map.col(2 * j) = sc * a;
    out.linear_map.col(2 * j + 1) = (sigma > 0 ? sc : -sc) * b;
  }
  const Eigen::MatrixXd M = out.linear_map;
  if ((M.transpose() * J * M - J).norm() > 1e-8)
    throw std::runtime_error("williamson: normalization failed (not symplectic)");
  return out;
}

WellExpansion well_reduce(const Jet& band_symbol, int order, int max_level_sum,
                          double resonance_tol) {
  if (band_symbol.pairs() != 0 || band_symbol.real_basis())
    throw std::invalid_argument("well_reduce: expected a (w, hbar) jet");
  const int d = band_symbol.dim_w();
  if (d % 2 != 0)
    throw std::invalid_argument("well_reduce: w dimension must be even");
  const int half = d / 2;
  const double scale = 1.0 + band_symbol.max_abs();

  WellExpansion out;
  out.order = order;
  out.b0 = band_symbol.constant_term().real();

  // Gradient must vanish at the expansion point.
  for (int i = 0; i < d; ++i) {
    MultiIndex m;
    m.w[i] = 1;
    if (std::abs(band_symbol.coeff(m)) > 1e-9 * scale)
      throw std::invalid_argument("well_reduce: symbol has a nonzero gradient at 0");
  }
  // Quadratic form of the hbar^0 part (the Taylor quadratic itself).
  Eigen::MatrixXd Q = Eigen::MatrixXd::Zero(d, d);
  for (int i = 0; i < d; ++i) {
    MultiIndex m;
    m.w[i] = 2;
    Q(i, i) = band_symbol.coeff(m).real();
    for (int j = i + 1; j < d; ++j) {
      MultiIndex mm;
      mm.w[i] = 1;
      mm.w[j] = 1;
      Q(i, j) = Q(j, i) = 0.5 * band_symbol.coeff(mm).real();
    }
  }
  out.normal = williamson(Q);

  const int nu_res = resonance_order(out.normal.nu, std::max(3, 2 * order), resonance_tol);
  if (nu_res != kNoResonance && nu_res <= order) {
    std::ostringstream os;
    os << "well_reduce: resonant well frequencies (order " << nu_res << ")";
    throw std::runtime_error(os.str());
  }

  // Subtract b0, apply the Williamson map, regrade w as phase variables.
  Jet shifted = band_symbol;
  shifted.add_term(MultiIndex{}, C(-out.b0, 0));
  JetMapT<C> lin;
  const GradeBound wb = band_symbol.bound();
  for (int i = 0; i < d; ++i) {
    Jet ci(d, 0, wb, false);
    for (int j = 0; j < d; ++j) {
      if (out.normal.linear_map(i, j) == 0) continue;
      MultiIndex m;
      m.w[j] = 1;
      ci.add_term(m, C(out.normal.linear_map(i, j), 0));
    }
    lin.w_comp.push_back(ci);
  }
  Jet mapped = jet_compose(shifted, lin);

  // Re-key: (y_j, eta_j) = (w_2j, w_2j+1) become the (x_j, xi_j) slots.
  const GradeBound pb{order, 0};
  Jet phase(0, half, pb, true);
  for (auto& [m, v] : mapped.terms()) {
    MultiIndex n;
    n.l = m.l;
    for (int j = 0; j < half; ++j) {
      n.a[j] = m.w[2 * j];
      n.g[j] = m.w[2 * j + 1];
    }
    phase.add_term(n, v);
  }
  Jet symbol = complex_convert(phase, true);

  std::vector<Jet> nu_jets;
  for (int j = 0; j < half; ++j) {
    Jet b(0, half, pb, false);
    b.add_term(MultiIndex{}, C(out.normal.nu[j], 0));
    nu_jets.push_back(b);
  }
  // The exact quadratic part must now be sum nu_j |z_j|^2; drop solver dust.
  {
    Jet H0(0, half, pb, false);
    for (int j = 0; j < half; ++j) {
      MultiIndex m;
      m.a[j] = 1;
      m.g[j] = 1;
      H0.add_term(m, C(out.normal.nu[j], 0));
    }
    Jet d2 = grade_part(symbol, 2) - H0;
    Jet d2clean = jet_like(d2);
    for (auto& [m, v] : d2.terms())
      if (m.l > 0) d2clean.add_term(m, v);  // pure-hbar degree-2 terms stay
    Jet dust = d2 - d2clean;
    if (dust.max_abs() > 1e-9 * scale)
      throw std::runtime_error("well_reduce: quadratic normalization failed");
    symbol = symbol - dust;
  }

  out.nf = birkhoff_reduce(symbol, nu_jets, order, resonance_tol);

  // Level expansions: mu_m = b0 + hbar E_m + resonant-table contributions.
  std::vector<std::vector<int>> ms;
  std::vector<int> cur(half, 0);
  auto enumerate = [&](auto&& self, int idx, int budget) -> void {
    if (idx == half) {
      ms.push_back(cur);
      return;
    }
    for (int v = 0; v <= budget; ++v) {
      cur[idx] = v;
      self(self, idx + 1, budget - v);
    }
  };
  enumerate(enumerate, 0, max_level_sum);

  for (auto& m : ms) {
    WellLevel lev;
    lev.m = m;
    for (int j = 0; j < half; ++j)
      lev.energy += (2 * m[j] + 1) * out.normal.nu[j];
    lev.coeff[0] = out.b0;
    lev.coeff[2] = lev.energy;
    for (auto& e : out.nf.fstar) {
      if (!e.coeff.terms().empty() && e.coeff.dim_w() != 0)
        throw std::runtime_error("well_reduce: non-constant fstar coefficient");
      const C c = e.coeff.constant_term();
      double factor = 1;
      int mm = 0;
      for (int j = 0; j < half; ++j) {
        for (int t = 0; t < e.m[j]; ++t) factor *= (2 * m[j] + 1);
        mm += e.m[j];
      }
      const int k = 2 * (e.l + mm);
      if (std::abs(c.imag()) > 1e-9 * (1.0 + std::abs(c)))
        throw std::runtime_error("well_reduce: complex level coefficient");
      lev.coeff[k] += factor * c.real();
    }
    out.levels.push_back(std::move(lev));
  }
  std::sort(out.levels.begin(), out.levels.end(),
            [](const WellLevel& a, const WellLevel& b) {
              if (std::abs(a.energy - b.energy) > 1e-12)
                return a.energy < b.energy;
              return a.m < b.m;
            });
  return out;
}

}  // namespace magnf
