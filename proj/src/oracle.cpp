#include "magnf/oracle.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SparseCholesky>
#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>

namespace magnf {

namespace {

using C = std::complex<double>;

struct Grid {
  int d;
  std::vector<int> n;  // interior unknowns per axis; walls sit at +-L exactly
  std::vector<double> h, lo;
  std::size_t total;

  explicit Grid(const MagneticSystem& sys, const DiscretizationSpec& spec)
      : d(sys.dim()) {
    if (spec.points_per_axis < 16)
      throw std::invalid_argument("oracle: need at least 16 points per axis");
    n.assign(d, spec.points_per_axis - 2);
    total = 1;
    for (int i = 0; i < d; ++i) {
      h.push_back(2.0 * spec.box_half[i] / (spec.points_per_axis - 1));
      lo.push_back(-spec.box_half[i] + h[i]);
      total *= n[i];
    }
    if (total > spec.max_unknowns)
      throw std::runtime_error("oracle: grid exceeds the memory cap");
  }
  std::size_t index(const std::vector<int>& idx) const {
    std::size_t r = 0;
    for (int i = d - 1; i >= 0; --i) r = r * n[i] + idx[i];
    return r;
  }
  Eigen::VectorXd point(const std::vector<int>& idx) const {
    Eigen::VectorXd q(d);
    for (int i = 0; i < d; ++i) q[i] = lo[i] + idx[i] * h[i];
    return q;
  }
};

/// Lanczos with full reorthogonalization on the shifted inverse.
class ShiftInvertLanczos {
 public:
  ShiftInvertLanczos(const SparseHermitian& M, double shift,
                     const DiscretizationSpec& spec)
      : M_(M), shift_(shift), spec_(spec) {
    SparseHermitian S = M;
    if (shift != 0.0) {
      SparseHermitian I(M.rows(), M.cols());
      I.setIdentity();
      S = M - C(shift, 0) * I;
    }
    ldlt_.compute(S);
    if (ldlt_.info() != Eigen::Success)
      throw std::runtime_error("oracle: factorization of the shifted operator failed");
    rng_.seed(spec.seed);
    append_random_start();
  }

  /// Extend the basis by `steps` Lanczos vectors.
  void expand(int steps) {
    for (int s = 0; s < steps; ++s) {
      if (static_cast<int>(basis_.size()) >= spec_.max_basis) return;
      Eigen::VectorXcd w = ldlt_.solve(basis_.back());
      // Tridiagonal recursion with full reorthogonalization (twice).
      const double alpha = basis_.back().dot(w).real();
      alphas_.push_back(alpha);
      for (int pass = 0; pass < 2; ++pass)
        for (auto& v : basis_) w -= v.dot(w) * v;
      const double beta = w.norm();
      if (beta < 1e-12) {
        betas_.push_back(0.0);
        append_random_start();  // invariant subspace: restart
      } else {
        betas_.push_back(beta);
        basis_.push_back(w / beta);
      }
    }
  }

  int size() const { return static_cast<int>(alphas_.size()); }

  /// Ritz values of M (converted from the inverse) with residual estimates
  /// on the inverse operator, ascending in eigenvalue of M.
  struct Ritz {
    double lambda, theta, residual;
    Eigen::VectorXd coeff;
  };
  std::vector<Ritz> ritz_values() const {
    const int m = size();
    Eigen::MatrixXd T = Eigen::MatrixXd::Zero(m, m);
    for (int i = 0; i < m; ++i) {
      T(i, i) = alphas_[i];
      if (i + 1 < m && betas_[i] != 0.0) {
        T(i, i + 1) = betas_[i];
        T(i + 1, i) = betas_[i];
      }
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(T);
    std::vector<Ritz> out;
    const double beta_last = betas_.empty() ? 0.0 : betas_.back();
    for (int i = m - 1; i >= 0; --i) {  // largest theta = closest to shift
      const double theta = es.eigenvalues()[i];
      if (theta <= 0) continue;  // other side of the shift
      Ritz r;
      r.theta = theta;
      r.lambda = shift_ + 1.0 / theta;
      r.residual = std::abs(beta_last * es.eigenvectors()(m - 1, i)) / theta;
      r.coeff = es.eigenvectors().col(i);
      out.push_back(std::move(r));
    }
    std::sort(out.begin(), out.end(),
              [](const Ritz& a, const Ritz& b) { return a.lambda < b.lambda; });
    return out;
  }

  Eigen::VectorXcd assemble(const Eigen::VectorXd& coeff) const {
    Eigen::VectorXcd v = Eigen::VectorXcd::Zero(M_.rows());
    for (int i = 0; i < coeff.size(); ++i) v += coeff[i] * basis_[i];
    return v;
  }

  double direct_residual(double lambda, const Eigen::VectorXcd& v) const {
    return (M_ * v - C(lambda, 0) * v).norm() / v.norm();
  }

  const SparseHermitian& matrix() const { return M_; }

 private:
  void append_random_start() {
    std::normal_distribution<double> g;
    Eigen::VectorXcd v(M_.rows());
    for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = C(g(rng_), g(rng_));
    for (int pass = 0; pass < 2; ++pass)
      for (auto& b : basis_) v -= b.dot(v) * b;
    v.normalize();
    basis_.push_back(v);
  }

  const SparseHermitian& M_;
  double shift_;
  DiscretizationSpec spec_;
  Eigen::SimplicialLDLT<SparseHermitian> ldlt_;
  std::vector<Eigen::VectorXcd> basis_;
  std::vector<double> alphas_, betas_;
  std::mt19937_64 rng_;
};

}  // namespace

SparseHermitian build_operator(const MagneticSystem& sys,
                               const DiscretizationSpec& spec) {
  const Grid grid(sys, spec);
  const int d = grid.d;
  const double hbar = spec.hbar;

  std::vector<Eigen::Triplet<C>> trip;
  trip.reserve(grid.total * (2 * d + 1));

  double diag = 0;
  for (int mu = 0; mu < d; ++mu) diag += 2.0 * hbar * hbar / (grid.h[mu] * grid.h[mu]);

  std::vector<int> idx(d, 0);
  bool done = false;
  while (!done) {
    const std::size_t row = grid.index(idx);
    trip.emplace_back(row, row, C(diag, 0));
    const Eigen::VectorXd q = grid.point(idx);
    for (int mu = 0; mu < d; ++mu) {
      if (idx[mu] + 1 >= grid.n[mu]) continue;  // Dirichlet: drop the hop
      std::vector<int> jdx = idx;
      jdx[mu] += 1;
      const std::size_t col = grid.index(jdx);
      // Link integral int A . dl along the mu edge.
      double link = 0;
      if (spec.gauge == LinkRule::Midpoint) {
        Eigen::VectorXd qm = q;
        qm[mu] += 0.5 * grid.h[mu];
        link = grid.h[mu] * eval_real(sys.potential(mu), qm);
      } else {
        Eigen::VectorXd qp = q;
        qp[mu] += grid.h[mu];
        link = 0.5 * grid.h[mu] *
               (eval_real(sys.potential(mu), q) + eval_real(sys.potential(mu), qp));
      }
      const double t = hbar * hbar / (grid.h[mu] * grid.h[mu]);
      const C hop = -t * std::exp(C(0, -link / hbar));
      trip.emplace_back(row, col, hop);
      trip.emplace_back(col, row, std::conj(hop));
    }
    done = true;
    for (int i = 0; i < d; ++i) {
      if (++idx[i] < grid.n[i]) {
        done = false;
        break;
      }
      idx[i] = 0;
    }
  }

  SparseHermitian M(grid.total, grid.total);
  M.setFromTriplets(trip.begin(), trip.end());
  M.makeCompressed();
  return M;
}

OracleSpectrum lowest_eigenvalues(const SparseHermitian& M, int k,
                                  const DiscretizationSpec& spec, double shift) {
  ShiftInvertLanczos lan(M, shift, spec);
  OracleSpectrum out;
  out.spec = spec;

  int budget = std::max(2 * k + 10, 20);
  for (;;) {
    lan.expand(budget - lan.size());
    auto ritz = lan.ritz_values();
    int converged = 0;
    for (auto& r : ritz) {
      if (converged == k) break;
      if (r.residual < spec.tol * std::max(1.0, r.theta))
        ++converged;
      else
        break;
    }
    if (converged >= k || lan.size() >= spec.max_basis) {
      if (converged < k)
        throw std::runtime_error("oracle: eigensolver did not converge within the basis cap");
      out.eigenvalues.clear();
      out.residuals.clear();
      for (int i = 0; i < k; ++i) {
        Eigen::VectorXcd v = lan.assemble(ritz[i].coeff);
        out.eigenvalues.push_back(ritz[i].lambda);
        out.residuals.push_back(lan.direct_residual(ritz[i].lambda, v));
      }
      out.iterations = lan.size();
      return out;
    }
    budget = std::min(spec.max_basis, budget + std::max(10, budget / 2));
  }
}

CountResult count_below(const SparseHermitian& M, const DiscretizationSpec& spec,
                        double threshold, double margin) {
  ShiftInvertLanczos lan(M, 0.0, spec);
  int budget = 40;
  for (;;) {
    lan.expand(budget - lan.size());
    auto ritz = lan.ritz_values();
    // All eigenvalues below the cut must be converged, and a converged one
    // must clear the margin above it.
    bool sentinel = false;
    bool all_below_ok = true;
    CountResult res;
    for (auto& r : ritz) {
      const bool conv = r.residual < spec.tol * std::max(1.0, r.theta);
      if (r.lambda <= threshold) {
        if (!conv) all_below_ok = false;
        if (conv) {
          res.below.push_back(r.lambda);
          if (std::abs(r.lambda - threshold) < spec.tol * threshold)
            res.clustered = true;
        }
      } else if (conv && r.lambda > threshold * (1.0 + margin)) {
        sentinel = true;
        break;
      } else if (conv && std::abs(r.lambda - threshold) < spec.tol * threshold) {
        res.clustered = true;
      }
    }
    if (all_below_ok && sentinel) {
      res.count = static_cast<int>(res.below.size());
      return res;
    }
    if (lan.size() >= spec.max_basis)
      throw std::runtime_error("oracle: count_below exceeded the basis cap");
    budget = std::min(spec.max_basis, budget + std::max(20, budget / 2));
  }
}

std::vector<SweepRow> hbar_sweep(const MagneticSystem& sys,
                                 const DiscretizationSpec& base,
                                 const std::vector<double>& hbars,
                                 const SweepOptions& opt) {
  std::vector<SweepRow> rows;
  for (double hb : hbars) {
    DiscretizationSpec spec = base;
    spec.hbar = hb;
    double Lmax = 0;
    for (int i = 0; i < base.box_half.size(); ++i)
      Lmax = std::max(Lmax, base.box_half[i]);
    const double target = opt.grid_rule_c * std::sqrt(hb);
    int n = static_cast<int>(std::ceil(2.0 * Lmax / target)) + 1;
    n = std::max(n, opt.n_min);
    if (n > opt.n_max)
      throw std::runtime_error("hbar_sweep: grid rule exceeds the size cap");
    spec.points_per_axis = n;
    SparseHermitian M = build_operator(sys, spec);
    OracleSpectrum sp = lowest_eigenvalues(M, opt.k, spec);
    SweepRow row;
    row.hbar = hb;
    row.n_grid = n;
    row.eigenvalues = sp.eigenvalues;
    row.residuals = sp.residuals;
    rows.push_back(std::move(row));
  }
  return rows;
}

FitResult fit_expansion(const std::vector<double>& hbars,
                        const std::vector<double>& values,
                        const std::vector<int>& powers) {
  const int n = static_cast<int>(hbars.size());
  const int p = static_cast<int>(powers.size());
  if (n != static_cast<int>(values.size()))
    throw std::invalid_argument("fit_expansion: size mismatch");
  if (n < p + 2)
    throw std::invalid_argument("fit_expansion: need at least len(powers)+2 samples");
  double hmin = 1e300, hmax = 0;
  for (double h : hbars) {
    hmin = std::min(hmin, h);
    hmax = std::max(hmax, h);
  }
  if (hmax < 4.0 * hmin)
    throw std::invalid_argument("fit_expansion: samples must span a factor of 4");

  Eigen::MatrixXd X(n, p);
  Eigen::VectorXd y(n);
  for (int i = 0; i < n; ++i) {
    y[i] = values[i];
    for (int t = 0; t < p; ++t) X(i, t) = std::pow(hbars[i], 0.5 * powers[t]);
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(X, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const double cond =
      svd.singularValues()(0) / svd.singularValues()(svd.singularValues().size() - 1);
  if (cond > 1e12)
    throw std::runtime_error("fit_expansion: ill-conditioned design matrix");
  Eigen::VectorXd c = svd.solve(y);
  Eigen::VectorXd res = y - X * c;

  FitResult out;
  for (int t = 0; t < p; ++t) out.coefficients.push_back(c[t]);
  const double rss = res.squaredNorm();
  const double sigma2 = rss / std::max(1, n - p);
  Eigen::MatrixXd XtX_inv =
      (X.transpose() * X).ldlt().solve(Eigen::MatrixXd::Identity(p, p));
  for (int t = 0; t < p; ++t)
    out.standard_errors.push_back(std::sqrt(std::max(0.0, sigma2 * XtX_inv(t, t))));

  double scale = 0;
  for (double v : values) scale = std::max(scale, std::abs(v));
  for (int i = 0; i < n; ++i)
    out.max_residual = std::max(out.max_residual, std::abs(res[i]));

  // Order of the unmodeled tail: augment the design with one free power
  // hbar^p and pick the p that minimizes the joint residual. A plain
  // log-log slope of the fit residuals would be meaningless because least
  // squares leaves them sign-indefinite.
  if (out.max_residual > 1e-13 * (1.0 + scale) && n >= p + 3) {
    double best_p = 0, best_rss = -1;
    for (int t = 2; t <= 64; ++t) {
      const double pw = 0.125 * t;  // 0.25 .. 8 in 1/8 steps
      bool clash = false;
      for (int k : powers)
        if (std::abs(0.5 * k - pw) < 1e-9) clash = true;
      if (clash) continue;
      Eigen::MatrixXd X2(n, p + 1);
      X2.leftCols(p) = X;
      for (int i = 0; i < n; ++i) X2(i, p) = std::pow(hbars[i], pw);
      Eigen::VectorXd c2 =
          X2.jacobiSvd(Eigen::ComputeThinU | Eigen::ComputeThinV).solve(y);
      const double rss2 = (y - X2 * c2).squaredNorm();
      if (best_rss < 0 || rss2 < best_rss) {
        best_rss = rss2;
        best_p = pw;
      }
    }
    out.residual_exponent = best_p;
  }
  return out;
}

}  // namespace magnf
