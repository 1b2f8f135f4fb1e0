#include "magnf/spectral.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace magnf {

namespace {

using C = std::complex<double>;

/// Drop the (empty) pair slots of a z-free jet, keeping (w, hbar) only.
Jet strip_pairs(const Jet& a) {
  Jet r(a.dim_w(), 0, a.bound());
  for (auto& [m, v] : a.terms()) {
    if (m.z_degree() != 0)
      throw std::invalid_argument("strip_pairs: jet has z content");
    MultiIndex n;
    n.w = m.w;
    n.l = m.l;
    r.add_term(n, v);
  }
  return r;
}

}  // namespace

BandSymbol band_symbol(const NormalFormResult& nf, const std::vector<int>& n) {
  const int half = static_cast<int>(nf.beta_hat.size());
  if (static_cast<int>(n.size()) != half)
    throw std::invalid_argument("band_symbol: index size mismatch");
  for (int v : n)
    if (v < 0) throw std::invalid_argument("band_symbol: negative index");

  const Jet& proto = nf.beta_hat[0];
  // Generous hbar budget: every action substitution raises l by one.
  const GradeBound wb{2 * proto.bound().max_phase_degree + 2,
                      proto.bound().max_w_degree};
  Jet F(proto.dim_w(), 0, wb);
  for (int j = 0; j < half; ++j) {
    Jet bj = strip_pairs(nf.beta_hat[j]);
    for (auto& [m, v] : bj.terms()) {
      MultiIndex mm = m;
      mm.l = int8_t(mm.l + 1);
      F.add_term(mm, v * double(2 * n[j] + 1));
    }
  }
  for (auto& e : nf.fstar) {
    double factor = 1;
    int msum = 0;
    for (int j = 0; j < half; ++j) {
      for (int t = 0; t < e.m[j]; ++t) factor *= (2 * n[j] + 1);
      msum += e.m[j];
    }
    Jet cw = strip_pairs(e.coeff);
    for (auto& [m, v] : cw.terms()) {
      MultiIndex mm = m;
      mm.l = int8_t(mm.l + e.l + msum);
      F.add_term(mm, v * factor);
    }
  }
  F.canonicalize();
  BandSymbol out;
  out.n = n;
  out.symbol = F;
  return out;
}

double band_floor(double b0, const std::vector<int>& n, double c) {
  int s = 0;
  for (int v : n) s += v;
  return b0 + c * s;
}

double band_floor_margin(const MagneticSystem& sys, int grid_per_axis) {
  const int d = sys.dim();
  double minbeta = 1e300;
  std::vector<int> idx(d, 0);
  bool done = false;
  while (!done) {
    Eigen::VectorXd q(d);
    for (int i = 0; i < d; ++i)
      q[i] = (-1.0 + 2.0 * idx[i] / (grid_per_axis - 1)) * sys.box_half_widths()[i];
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(magnetic_matrix(sys, q));
    minbeta = std::min(minbeta, svd.singularValues().minCoeff());
    done = true;
    for (int i = 0; i < d; ++i) {
      if (++idx[i] < grid_per_axis) {
        done = false;
        break;
      }
      idx[i] = 0;
    }
  }
  return 2.0 * minbeta;
}

std::vector<std::vector<int>> enumerate_bands(double b0, double c, double b1,
                                              int half) {
  std::vector<std::vector<int>> out;
  if (c <= 0) throw std::invalid_argument("enumerate_bands: margin must be positive");
  const int nmax = std::max(0, static_cast<int>(std::floor((b1 - b0) / c)));
  std::vector<int> cur(half, 0);
  auto rec = [&](auto&& self, int idx, int budget) -> void {
    if (idx == half) {
      out.push_back(cur);
      return;
    }
    for (int v = 0; v <= budget; ++v) {
      cur[idx] = v;
      self(self, idx + 1, budget - v);
    }
  };
  rec(rec, 0, nmax);
  out.erase(std::remove_if(out.begin(), out.end(),
                           [&](const std::vector<int>& n) {
                             return band_floor(b0, n, c) > b1;
                           }),
            out.end());
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<HarmonicLevel> harmonic_levels(const std::vector<double>& nu, int N) {
  const int half = static_cast<int>(nu.size());
  double numin = 1e300, e0 = 0;
  for (double v : nu) {
    numin = std::min(numin, v);
    e0 += v;
  }
  if (numin <= 0) throw std::invalid_argument("harmonic_levels: nu must be positive");

  // Every state excluded by the cap |m| <= cap has energy at least
  // e0 + 2 numin (cap+1); grow the cap until the N-th smallest beats that.
  for (int cap = std::max(1, N);; cap += 4) {
    if (cap > 400) throw std::runtime_error("harmonic_levels: cap overflow");
    std::vector<std::pair<double, std::vector<int>>> states;
    std::vector<int> cur(half, 0);
    auto rec = [&](auto&& self, int idx, int budget) -> void {
      if (idx == half) {
        double e = 0;
        for (int j = 0; j < half; ++j) e += (2 * cur[j] + 1) * nu[j];
        states.push_back({e, cur});
        return;
      }
      for (int v = 0; v <= budget; ++v) {
        cur[idx] = v;
        self(self, idx + 1, budget - v);
      }
    };
    rec(rec, 0, cap);
    std::sort(states.begin(), states.end());
    if (static_cast<int>(states.size()) < N ||
        states[N - 1].first >= e0 + 2 * numin * (cap + 1))
      continue;

    std::vector<HarmonicLevel> out;
    int count = 0;
    for (auto& [e, m] : states) {
      if (!out.empty() && std::abs(out.back().energy - e) <= 1e-12) {
        out.back().multiplicity += 1;
        out.back().m.push_back(m);
        ++count;
      } else {
        if (count >= N) break;
        HarmonicLevel lev;
        lev.energy = e;
        lev.multiplicity = 1;
        lev.m.push_back(m);
        out.push_back(std::move(lev));
        ++count;
      }
    }
    return out;
  }
}

double SpectralPrediction::eval(int j, double hbar, int kmax) const {
  const auto& lev = levels.at(j);
  double s = 0;
  for (auto& [k, c] : lev.coeff)
    if (k <= kmax) s += c * std::pow(hbar, 0.5 * k);
  return s;
}

SpectralPrediction predict_eigenvalues(const NormalFormResult& nf, int N,
                                       const PredictOptions& opt) {
  const int half = static_cast<int>(nf.beta_hat.size());
  BandSymbol F0 = band_symbol(nf, std::vector<int>(half, 0));
  Jet mu_symbol = shift_hbar(F0.symbol, -1);

  SpectralPrediction out;
  out.b0 = mu_symbol.constant_term().real();
  {
    MultiIndex m;
    m.l = 1;
    out.c0 = mu_symbol.coeff(m).real();
  }

  // Order bookkeeping: the first-stage remainder contributes at
  // O(hbar^{r/2}) to lambda, so coefficients are trustworthy for
  // k <= r - 1; the second stage at order r2 pins mu through
  // hbar^{(r2-1)/2}, i.e. lambda through k <= r2 + 1.
  const int order = std::min(opt.order, nf.r);
  // Enough well quantum numbers to cover N states.
  WellExpansion wx = well_reduce(mu_symbol, order, N + 2);
  out.nu = wx.normal.nu;
  out.max_k = std::min(nf.r - 1, order + 1);

  for (std::size_t j = 0; j < wx.levels.size() && out.levels.size() < std::size_t(N); ++j) {
    PredictedLevel lev;
    lev.m = wx.levels[j].m;
    lev.harmonic_energy = wx.levels[j].energy;
    lev.coeff[2] = wx.levels[j].coeff.at(0);  // hbar b0
    for (auto& [k, c] : wx.levels[j].coeff)
      if (k > 0 && k + 2 <= out.max_k) lev.coeff[k + 2] = c;
    out.levels.push_back(std::move(lev));
  }
  return out;
}

WeylCount weyl_count(const MagneticSystem& sys, const WellData& well, double b1,
                     double hbar, const WeylOptions& opt) {
  const int d = sys.dim();
  const int half = d / 2;
  WeylCount out;
  out.b1 = b1;
  out.hbar = hbar;
  if (b1 <= well.b0) {
    out.total = 0;
    return out;
  }
  const double c = opt.floor_margin > 0 ? opt.floor_margin : band_floor_margin(sys);
  auto bands = enumerate_bands(well.b0, c, b1, half);

  // Bounding box of {b <= b1} from a coarse scan, padded by one cell.
  const int coarse = 41;
  Eigen::VectorXd lo = sys.box_half_widths(), hi = -sys.box_half_widths();
  {
    std::vector<int> idx(d, 0);
    bool done = false;
    while (!done) {
      Eigen::VectorXd q(d);
      for (int i = 0; i < d; ++i)
        q[i] = (-1.0 + 2.0 * idx[i] / (coarse - 1)) * sys.box_half_widths()[i];
      if (intensity(sys, q) <= b1) {
        for (int i = 0; i < d; ++i) {
          lo[i] = std::min(lo[i], q[i]);
          hi[i] = std::max(hi[i], q[i]);
        }
      }
      done = true;
      for (int i = 0; i < d; ++i) {
        if (++idx[i] < coarse) {
          done = false;
          break;
        }
        idx[i] = 0;
      }
    }
    for (int i = 0; i < d; ++i) {
      const double pad = 2.0 * sys.box_half_widths()[i] / (coarse - 1);
      lo[i] = std::max(lo[i] - pad, -sys.box_half_widths()[i]);
      hi[i] = std::min(hi[i] + pad, sys.box_half_widths()[i]);
    }
    for (int i = 0; i < d; ++i)
      if (lo[i] >= hi[i])
        throw std::runtime_error("weyl_count: empty sublevel bounding box");
    // The sublevel set must not touch the domain boundary.
    for (int i = 0; i < d; ++i) {
      const double cell = 2.0 * sys.box_half_widths()[i] / (coarse - 1);
      if (sys.box_half_widths()[i] - std::abs(lo[i]) < cell ||
          sys.box_half_widths()[i] - std::abs(hi[i]) < cell)
        throw std::runtime_error("weyl_count: sublevel set touches the box boundary");
    }
  }

  const int n_grid = opt.grid_per_axis;
  std::vector<double> cellw(d);
  for (int i = 0; i < d; ++i) cellw[i] = (hi[i] - lo[i]) / n_grid;
  double cellvol = 1;
  for (int i = 0; i < d; ++i) cellvol *= cellw[i];

  std::vector<double> integrals(bands.size(), 0.0);
  std::vector<int> idx(d, 0);
  bool done = false;
  while (!done) {
    Eigen::VectorXd q(d);
    for (int i = 0; i < d; ++i) q[i] = lo[i] + (idx[i] + 0.5) * cellw[i];
    Eigen::JacobiSVD<Eigen::MatrixXd> svd(magnetic_matrix(sys, q));
    Eigen::VectorXd sv = svd.singularValues();  // beta_j twice each, descending
    std::vector<double> beta(half);  // ascending, n_1 pairs with the smallest
    double prod = 1;
    for (int j = 0; j < half; ++j) {
      beta[j] = sv[2 * (half - 1 - j)];
      prod *= beta[j];
    }
    for (std::size_t bkt = 0; bkt < bands.size(); ++bkt) {
      double bn = 0;
      for (int j = 0; j < half; ++j) bn += (2 * bands[bkt][j] + 1) * beta[j];
      if (bn <= b1) integrals[bkt] += prod * cellvol;
    }
    done = true;
    for (int i = 0; i < d; ++i) {
      if (++idx[i] < n_grid) {
        done = false;
        break;
      }
      idx[i] = 0;
    }
  }

  const double scale = std::pow(2.0 * M_PI * hbar, -half);
  for (std::size_t bkt = 0; bkt < bands.size(); ++bkt) {
    WeylBandRow row;
    row.n = bands[bkt];
    row.integral = integrals[bkt];
    row.contribution = integrals[bkt] * scale;
    out.total += row.contribution;
    out.bands.push_back(std::move(row));
  }
  return out;
}

}  // namespace magnf
