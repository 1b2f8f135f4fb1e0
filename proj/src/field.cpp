#include "magnf/field.hpp"

#include <Eigen/Eigenvalues>
#include <Eigen/SVD>
#include <cmath>
#include <sstream>

namespace magnf {

namespace {

GradeBound exact_bound_for(const std::vector<Jet>& polys) {
  int deg = 0;
  for (auto& p : polys)
    for (auto& [m, v] : p.terms()) deg = std::max(deg, m.w_degree());
  return GradeBound{0, deg};
}

}  // namespace

Jet make_polynomial(int dim,
                    const std::vector<std::pair<double, std::vector<int>>>& terms) {
  int deg = 0;
  for (auto& [c, p] : terms) {
    int s = 0;
    for (int e : p) s += e;
    deg = std::max(deg, s);
  }
  Jet a(dim, 0, GradeBound{0, deg});
  for (auto& [c, p] : terms) {
    if (static_cast<int>(p.size()) != dim)
      throw std::invalid_argument("make_polynomial: powers length != dim");
    MultiIndex m;
    for (int i = 0; i < dim; ++i) m.w[i] = int8_t(p[i]);
    a.add_term(m, std::complex<double>(c, 0.0));
  }
  return a;
}

double eval_real(const Jet& a, const Eigen::VectorXd& q) {
  std::vector<std::complex<double>> wv(a.dim_w());
  for (int i = 0; i < a.dim_w(); ++i) wv[i] = q[i];
  return evaluate(a, wv, {}, {}, 0.0).real();
}

MagneticSystem::MagneticSystem(int dim, std::vector<Jet> potential,
                               Eigen::VectorXd box_half_widths)
    : d_(dim), A_(std::move(potential)), box_(std::move(box_half_widths)) {
  if (d_ < 2 || d_ % 2 != 0)
    throw std::invalid_argument("MagneticSystem: dimension must be even and >= 2");
  if (static_cast<int>(A_.size()) != d_)
    throw std::invalid_argument("MagneticSystem: potential needs d components");
  if (box_.size() != d_)
    throw std::invalid_argument("MagneticSystem: box needs d half-widths");
  const GradeBound b = exact_bound_for(A_);
  curl_.assign(d_, std::vector<Jet>(d_, Jet(d_, 0, b)));
  for (int i = 0; i < d_; ++i) {
    if (A_[i].dim_w() != d_ || A_[i].pairs() != 0)
      throw std::invalid_argument("MagneticSystem: potential components must be w-only jets over d variables");
    for (auto& [m, v] : A_[i].terms())
      if (std::abs(v.imag()) > 0)
        throw std::invalid_argument("MagneticSystem: potential must be real");
    A_[i] = rebound(A_[i], b);  // shared bound keeps differences exact
  }
  for (int i = 0; i < d_; ++i)
    for (int j = 0; j < d_; ++j)
      curl_[i][j] = derivative(A_[j], Var::W, i) - derivative(A_[i], Var::W, j);
}

Eigen::MatrixXd MagneticSystem::form_matrix_at(const Eigen::VectorXd& q) const {
  Eigen::MatrixXd F = Eigen::MatrixXd::Zero(d_, d_);
  for (int i = 0; i < d_; ++i)
    for (int j = i + 1; j < d_; ++j) {
      F(i, j) = eval_real(curl_[i][j], q);
      F(j, i) = -F(i, j);
    }
  return F;
}

Eigen::VectorXd MagneticSystem::potential_at(const Eigen::VectorXd& q) const {
  Eigen::VectorXd a(d_);
  for (int i = 0; i < d_; ++i) a[i] = eval_real(A_[i], q);
  return a;
}

bool MagneticSystem::inside_box(const Eigen::VectorXd& q, double shrink) const {
  for (int i = 0; i < d_; ++i)
    if (std::abs(q[i]) > box_[i] - shrink) return false;
  return true;
}

FieldMatrix magnetic_matrix(const MagneticSystem& sys, const Eigen::VectorXd& q) {
  return sys.form_matrix_at(q).transpose();
}

SkewSpectrum skew_frequencies(const FieldMatrix& M, bool validate,
                              double gauge_rotation) {
  const int d = static_cast<int>(M.rows());
  if (d % 2 != 0 || M.cols() != d)
    throw std::invalid_argument("skew_frequencies: need an even square matrix");
  if ((M + M.transpose()).norm() > 1e-10 * (1.0 + M.norm()))
    throw std::invalid_argument("skew_frequencies: matrix is not skew-symmetric");

  // i M is Hermitian; its eigenpair at -beta_j carries c_j = u_j + i v_j with
  // M u_j = -beta_j v_j and M v_j = beta_j u_j.
  Eigen::MatrixXcd H = std::complex<double>(0, 1) * M.cast<std::complex<double>>();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXcd> es(H);
  if (es.info() != Eigen::Success)
    throw std::runtime_error("skew_frequencies: eigensolver failed");
  const Eigen::VectorXd ev = es.eigenvalues();  // ascending

  const double emax = ev.cwiseAbs().maxCoeff();
  const double emin = ev.cwiseAbs().minCoeff();
  if (validate && (emax == 0 || emin < 1e-10 * emax))
    throw std::runtime_error("skew_frequencies: degenerate field (near-singular matrix)");

  SkewSpectrum out;
  const int half = d / 2;
  // Negative eigenvalues ascending: -beta_max .. -beta_min.
  for (int k = half - 1; k >= 0; --k) out.beta.push_back(-ev[k]);
  if (validate) {
    for (int j = 0; j + 1 < half; ++j) {
      const double gap = out.beta[j + 1] - out.beta[j];
      if (gap < 1e-8 * out.beta.back())
        throw std::runtime_error(
            "skew_frequencies: near-coincident frequencies (resonance degeneracy)");
    }
  }
  for (int j = 0; j < half; ++j) {
    Eigen::VectorXcd c = es.eigenvectors().col(half - 1 - j);
    c *= std::sqrt(2.0) / c.norm();  // |u|^2 + |v|^2 = 2
    int lead = 0;
    while (lead < d - 1 && std::abs(c[lead]) <= 1e-8) ++lead;
    const std::complex<double> phase =
        std::polar(1.0, -std::arg(c[lead]) + gauge_rotation);
    c *= phase;
    FramePair fp;
    fp.u = c.real();
    fp.v = c.imag();
    out.frames.push_back(std::move(fp));
  }
  return out;
}

double intensity(const MagneticSystem& sys, const Eigen::VectorXd& q) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(magnetic_matrix(sys, q));
  return 0.5 * svd.singularValues().sum();
}

WellData find_well(const MagneticSystem& sys, const Eigen::VectorXd& q_init,
                   const WellOptions& opt) {
  const int d = sys.dim();
  if (!sys.inside_box(q_init))
    throw std::invalid_argument("find_well: initial point outside the domain box");
  auto b = [&](const Eigen::VectorXd& q) { return intensity(sys, q); };

  auto gradient = [&](const Eigen::VectorXd& q) {
    Eigen::VectorXd g(d);
    const double h = opt.fd_grad_step;
    for (int i = 0; i < d; ++i) {
      Eigen::VectorXd qp = q, qm = q;
      qp[i] += h;
      qm[i] -= h;
      g[i] = (b(qp) - b(qm)) / (2 * h);
    }
    return g;
  };
  auto hessian = [&](const Eigen::VectorXd& q) {
    Eigen::MatrixXd H(d, d);
    const double h = opt.fd_hess_step;
    const double b0 = b(q);
    for (int i = 0; i < d; ++i) {
      Eigen::VectorXd qp = q, qm = q;
      qp[i] += h;
      qm[i] -= h;
      H(i, i) = (b(qp) - 2 * b0 + b(qm)) / (h * h);
      for (int j = i + 1; j < d; ++j) {
        Eigen::VectorXd qpp = q, qpm = q, qmp = q, qmm = q;
        qpp[i] += h; qpp[j] += h;
        qpm[i] += h; qpm[j] -= h;
        qmp[i] -= h; qmp[j] += h;
        qmm[i] -= h; qmm[j] -= h;
        H(i, j) = H(j, i) = (b(qpp) - b(qpm) - b(qmp) + b(qmm)) / (4 * h * h);
      }
    }
    return H;
  };

  Eigen::VectorXd q = q_init;
  double fval = b(q);
  bool converged = false;
  for (int it = 0; it < opt.max_iter; ++it) {
    const Eigen::VectorXd g = gradient(q);
    if (g.norm() < opt.tol) {
      converged = true;
      break;
    }
    Eigen::MatrixXd H = hessian(q);
    Eigen::VectorXd step;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(H);
    if (es.eigenvalues().minCoeff() > 1e-10) {
      step = -H.ldlt().solve(g);
    } else {
      step = -g;  // fall back to steepest descent away from convexity
    }
    // Backtracking keeps iterates inside the box and non-increasing up to
    // rounding; a stalled search near the minimum ends the iteration and the
    // final gradient check decides.
    double t = 1.0;
    bool stalled = false;
    for (int ls = 0;; ++ls) {
      Eigen::VectorXd qn = q + t * step;
      const double fn = sys.inside_box(qn) ? b(qn) : 1e300;
      if (fn <= fval + 1e-14 * (1.0 + std::abs(fval))) {
        q = qn;
        fval = fn;
        break;
      }
      t *= 0.5;
      if (ls == 60) {
        stalled = true;
        break;
      }
    }
    if (stalled) break;
  }
  {
    const Eigen::VectorXd g = gradient(q);
    if (!converged && g.norm() >= opt.tol)
      throw std::runtime_error("find_well: no convergence within iteration cap");
  }
  if (!sys.inside_box(q, 2 * opt.fd_hess_step))
    throw std::runtime_error("find_well: minimizer adjacent to the box boundary");

  WellData well;
  well.q0 = q;
  well.b0 = b(q);
  well.hess_b = hessian(q);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> hs(well.hess_b);
  if (hs.eigenvalues().minCoeff() <= 0)
    throw std::runtime_error("find_well: degenerate Hessian at the minimizer");
  SkewSpectrum sp = skew_frequencies(magnetic_matrix(sys, q), true, opt.gauge_rotation);
  well.beta = sp.beta;
  well.frames = sp.frames;
  well.r0 = resonance_order(well.beta, opt.resonance_cap, opt.resonance_tol);
  well.resonance_cap = opt.resonance_cap;
  return well;
}

int resonance_order(const std::vector<double>& beta, int cap, double tol) {
  const int n = static_cast<int>(beta.size());
  double bnorm = 0;
  for (double x : beta) bnorm += x * x;
  bnorm = std::sqrt(bnorm);
  int best = kNoResonance;
  std::vector<int> alpha(n, 0);
  // Depth-first enumeration of |alpha|_1 <= cap.
  auto rec = [&](auto&& self, int idx, int budget, double dot, int norm1) -> void {
    if (idx == n) {
      if (norm1 > 0 && std::abs(dot) < tol * bnorm)
        if (best == kNoResonance || norm1 < best) best = norm1;
      return;
    }
    for (int a = -budget; a <= budget; ++a)
      self(self, idx + 1, budget - std::abs(a), dot + a * beta[idx],
           norm1 + std::abs(a));
  };
  rec(rec, 0, cap, 0.0, 0);
  return best;
}

AssumptionReport validate_assumptions(const MagneticSystem& sys,
                                      const WellData& well, double b_tilde1) {
  AssumptionReport rep;
  const int d = sys.dim();

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> hs(well.hess_b);
  const double hmin = hs.eigenvalues().minCoeff();
  rep.checks.push_back({"well_nondegenerate", hmin > 1e-8,
                        hmin, "smallest eigenvalue of Hess b at q0"});

  double bdry = 1e300;
  for (int i = 0; i < d; ++i)
    bdry = std::min(bdry, sys.box_half_widths()[i] - std::abs(well.q0[i]));
  rep.checks.push_back({"well_interior", bdry > 0.1, bdry,
                        "distance of q0 to the box boundary"});

  Eigen::JacobiSVD<Eigen::MatrixXd> svd(magnetic_matrix(sys, well.q0));
  const double smin = svd.singularValues().minCoeff();
  const double smax = svd.singularValues().maxCoeff();
  rep.checks.push_back({"field_invertible", smin > 1e-10 * smax, smin,
                        "smallest singular value of the field matrix at q0"});

  double gap = 1e300;
  for (std::size_t j = 0; j + 1 < well.beta.size(); ++j)
    gap = std::min(gap, well.beta[j + 1] - well.beta[j]);
  if (well.beta.size() < 2) gap = well.beta.empty() ? 0.0 : well.beta[0];
  rep.checks.push_back({"frequencies_simple", gap > 1e-8, gap,
                        "smallest gap between frequencies at q0"});

  {
    std::ostringstream os;
    if (well.r0 == kNoResonance)
      os << "no resonance found: r0 > " << well.resonance_cap;
    else
      os << "resonance order r0 = " << well.r0;
    rep.checks.push_back({"resonance_order", well.r0 == kNoResonance || well.r0 >= 3,
                          well.r0 == kNoResonance ? double(well.resonance_cap)
                                                  : double(well.r0),
                          os.str()});
  }

  // Stand-in for b0 < b_tilde1 < liminf b: the sublevel set {b <= b_tilde1}
  // must stay inside the box, measured by the minimum of b over the boundary
  // faces on a coarse grid.
  {
    double bmin_bdry = 1e300;
    const int npts = 21;
    std::vector<int> idx(d, 0);
    for (int face = 0; face < d; ++face) {
      for (int sign = -1; sign <= 1; sign += 2) {
        std::vector<int> grid(d - 1, 0);
        bool done = false;
        while (!done) {
          Eigen::VectorXd q(d);
          q[face] = sign * sys.box_half_widths()[face];
          int k = 0;
          for (int i = 0; i < d; ++i) {
            if (i == face) continue;
            q[i] = (-1.0 + 2.0 * grid[k] / (npts - 1)) * sys.box_half_widths()[i];
            ++k;
          }
          bmin_bdry = std::min(bmin_bdry, intensity(sys, q));
          done = true;
          for (int i = 0; i < d - 1; ++i) {
            if (++grid[i] < npts) {
              done = false;
              break;
            }
            grid[i] = 0;
          }
        }
      }
    }
    std::ostringstream os;
    os << "min of b on the box boundary (stand-in for b0 < b1~ < liminf b); "
       << "requires {b <= " << b_tilde1 << "} inside the box";
    rep.checks.push_back({"sublevel_contained", bmin_bdry > b_tilde1,
                          bmin_bdry, os.str()});
  }
  return rep;
}

}  // namespace magnf
