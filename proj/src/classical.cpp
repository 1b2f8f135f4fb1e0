#include "magnf/classical.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <functional>
#include <map>
#include <stdexcept>

namespace magnf {

namespace {

using C = std::complex<double>;

Jet coord_w(int dim_w, int pairs, GradeBound b, int i) {
  Jet a(dim_w, pairs, b, true);
  MultiIndex m;
  m.w[i] = 1;
  a.add_term(m, C(1, 0));
  return a;
}
Jet coord_x(int dim_w, int pairs, GradeBound b, int j) {
  Jet a(dim_w, pairs, b, true);
  MultiIndex m;
  m.a[j] = 1;
  a.add_term(m, C(1, 0));
  return a;
}
Jet coord_xi(int dim_w, int pairs, GradeBound b, int j) {
  Jet a(dim_w, pairs, b, true);
  MultiIndex m;
  m.g[j] = 1;
  a.add_term(m, C(1, 0));
  return a;
}

Jet conj_jet(const Jet& a) {
  Jet r(a.dim_w(), a.pairs(), a.bound(), a.real_basis());
  for (auto& [m, v] : a.terms()) r.add_term(m, std::conj(v));
  return r;
}

Jet realify(const Jet& a, double tol = 1e-9) {
  double imax = 0;
  Jet r(a.dim_w(), a.pairs(), a.bound(), a.real_basis());
  for (auto& [m, v] : a.terms()) {
    imax = std::max(imax, std::abs(v.imag()));
    r.add_term(m, C(v.real(), 0));
  }
  if (imax > tol * (1.0 + a.max_abs()))
    throw std::runtime_error("realify: unexpectedly large imaginary part");
  r.canonicalize();
  return r;
}

/// (1 + (u/c0 - 1))^{-1/2} / sqrt(c0) for u with positive constant term c0.
Jet jet_invsqrt(const Jet& u) {
  const C c0 = u.constant_term();
  if (std::abs(c0.imag()) > 1e-12 * std::abs(c0) || c0.real() <= 0)
    throw std::domain_error("jet_invsqrt: constant term must be positive");
  Jet eps = u * (C(1, 0) / c0);
  Jet one = jet_one<C>(u.dim_w(), u.pairs(), u.bound(), u.real_basis());
  eps -= one;
  Jet r = one, p = one;
  double coef = 1.0;
  const int kmax = u.bound().max_phase_degree + u.bound().max_w_degree;
  for (int k = 1; k <= kmax; ++k) {
    p = p * eps;
    if (p.empty()) break;
    coef *= -(2.0 * k - 1.0) / (2.0 * k);
    r += p * C(coef, 0);
  }
  r *= C(1.0 / std::sqrt(c0.real()), 0);
  r.canonicalize();
  return r;
}

/// Recenter a polynomial jet over d variables at q0: a(q0 + dq).
Jet shift_center(const Jet& a, const Eigen::VectorXd& q0, GradeBound b) {
  JetMap m;
  const int d = a.dim_w();
  for (int i = 0; i < d; ++i) {
    Jet ci = coord_w(d, 0, b, i);
    ci.add_term(MultiIndex{}, C(q0[i], 0));
    ci.set_bound(b);
    m.w_comp.push_back(ci);
  }
  return jet_compose(a, m);
}

Jet total_degree_part(const Jet& a, int m) {
  Jet r(a.dim_w(), a.pairs(), a.bound(), a.real_basis());
  for (auto& [mi, v] : a.terms())
    if (mi.w_degree() + mi.z_degree() == m) r.add_term(mi, v);
  return r;
}

Jet truncate_total(const Jet& a, int m) {
  Jet r(a.dim_w(), a.pairs(), a.bound(), a.real_basis());
  for (auto& [mi, v] : a.terms())
    if (mi.w_degree() + mi.z_degree() <= m) r.add_term(mi, v);
  return r;
}

JetVector truncate_total(const JetVector& v, int m) {
  JetVector r;
  r.reserve(v.size());
  for (auto& a : v) r.push_back(truncate_total(a, m));
  return r;
}

JetMatrix matrix_degree_part(const JetMatrix& M, int m) {
  JetMatrix R = M;
  for (auto& row : R)
    for (auto& e : row) e = total_degree_part(e, m);
  return R;
}

Jet embed(const Jet& a, int dim_w, int pairs, GradeBound b, bool real_basis) {
  Jet r(dim_w, pairs, b, real_basis);
  for (auto& [m, v] : a.terms()) r.add_term(m, v);
  return r;
}

}  // namespace

Eigen::MatrixXd omega_pairs(int n_pairs) {
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(2 * n_pairs, 2 * n_pairs);
  for (int j = 0; j < n_pairs; ++j) {
    J(2 * j, 2 * j + 1) = 1;
    J(2 * j + 1, 2 * j) = -1;
  }
  return J;
}

Eigen::MatrixXd omega_cotangent(int d) {
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(2 * d, 2 * d);
  J.topRightCorner(d, d) = -Eigen::MatrixXd::Identity(d, d);
  J.bottomLeftCorner(d, d) = Eigen::MatrixXd::Identity(d, d);
  return J;
}

Jet hamiltonian_jet(const MagneticSystem& sys, const Eigen::VectorXd& center,
                    int max_degree) {
  const int d = sys.dim();
  int degA = 0;
  for (int i = 0; i < d; ++i)
    for (auto& [m, v] : sys.potential(i).terms())
      degA = std::max(degA, m.w_degree());
  if (max_degree < 0) max_degree = 2 * std::max(degA, 1);
  const GradeBound b{0, max_degree};
  // Variables (dq_1..dq_d, dp_1..dp_d); H = sum_i (dp_i - (A_i(q)-A_i(q0)))^2.
  Jet H(2 * d, 0, b);
  for (int i = 0; i < d; ++i) {
    Jet dA = shift_center(sys.potential(i), center, GradeBound{0, max_degree});
    dA.add_term(MultiIndex{}, C(-eval_real(sys.potential(i), center), 0));
    Jet f(2 * d, 0, b);
    MultiIndex mp;
    mp.w[d + i] = 1;
    f.add_term(mp, C(1, 0));
    for (auto& [m, v] : dA.terms()) f.add_term(m, -v);  // same w slots 0..d-1
    H += f * f;
  }
  H.canonicalize();
  return H;
}

FrameJetData frame_jets(const MagneticSystem& sys, const Eigen::VectorXd& q0,
                        int order, double gauge_rotation) {
  const int d = sys.dim();
  const int half = d / 2;
  const GradeBound b{0, order};

  // Operator matrix jets at q0: Bop_ij(dq) = curl_ji(q0 + dq).
  JetMatrix Bop(d, JetVector(d, Jet(d, 0, b)));
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j)
      Bop[i][j] = shift_center(sys.curl(j, i), q0, b);

  FrameJetData out;
  out.base = skew_frequencies(magnetic_matrix(sys, q0), true, gauge_rotation);

  Eigen::MatrixXcd B0(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) B0(i, j) = Bop[i][j].constant_term();

  // Jets of d_i A_j at q0, for the momentum components of the frames.
  JetMatrix dAT(d, JetVector(d, Jet(d, 0, b)));
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j)
      dAT[i][j] = shift_center(derivative(sys.potential(j), Var::W, i), q0, b);

  for (int j = 0; j < half; ++j) {
    const double beta0 = out.base.beta[j];
    Eigen::VectorXcd c0 =
        out.base.frames[j].u.cast<C>() + C(0, 1) * out.base.frames[j].v.cast<C>();
    const C ev0(0, beta0);

    Eigen::MatrixXcd A0 = B0 - ev0 * Eigen::MatrixXcd::Identity(d, d);
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXcd> cod(A0);

    // Degree-by-degree eigenpair: (Bop - lambda) c = 0 with the gauge
    // <c0, c^{(m)}> = 0 for m >= 1.
    JetVector c(d, Jet(d, 0, b));
    for (int i = 0; i < d; ++i) {
      Jet ji(d, 0, b);
      ji.add_term(MultiIndex{}, c0[i]);
      c[i] = ji;
    }
    Jet lambda(d, 0, b);
    lambda.add_term(MultiIndex{}, ev0);

    const double c0n2 = c0.squaredNorm();
    for (int m = 1; m <= order; ++m) {
      // Residual of the eigen equation at homogeneous degree m.
      JetVector res(d, Jet(d, 0, b));
      for (int i = 0; i < d; ++i) {
        Jet s(d, 0, b);
        for (int k = 0; k < d; ++k) s += Bop[i][k] * c[k];
        s -= lambda * c[i];
        res[i] = total_degree_part(s, m);
      }
      // lambda^{(m)} from the solvability projection onto c0.
      Jet lm(d, 0, b);
      for (int i = 0; i < d; ++i) lm += res[i] * (std::conj(c0[i]) / c0n2);
      lambda += lm;
      // Coefficientwise minimal-norm solve of (B0 - ev0) x = lm c0 - res.
      std::map<MultiIndex, Eigen::VectorXcd> rhs;
      auto put = [&](const MultiIndex& mi, int comp, C v) {
        auto [it, fresh] = rhs.emplace(mi, Eigen::VectorXcd::Zero(d));
        it->second[comp] += v;
      };
      for (int i = 0; i < d; ++i) {
        for (auto& [mi, v] : lm.terms()) put(mi, i, v * c0[i]);
        for (auto& [mi, v] : res[i].terms()) put(mi, i, -v);
      }
      for (auto& [mi, vec] : rhs) {
        Eigen::VectorXcd x = cod.solve(vec);
        if ((A0 * x - vec).norm() > 1e-9 * (1.0 + vec.norm()))
          throw std::runtime_error(
              "frame_jets: eigenvalue gap collapse within the expansion radius");
        x -= (c0.dot(x) / c0n2) * c0;  // gauge component
        for (int i = 0; i < d; ++i) c[i].add_term(mi, x[i]);
      }
    }

    // Normalize |u|^2 + |v|^2 = 2 along q, then split into real frames.
    Jet n(d, 0, b);
    for (int i = 0; i < d; ++i) n += conj_jet(c[i]) * c[i];
    Jet scale = jet_invsqrt(realify(n * C(0.5, 0)));
    for (int i = 0; i < d; ++i) c[i] = c[i] * scale;

    Jet beta = realify(lambda * C(0, -1));
    out.beta.push_back(beta);
    Jet invs = jet_invsqrt(beta);

    JetVector ej(2 * d, Jet(d, 0, b)), fj(2 * d, Jet(d, 0, b));
    for (int i = 0; i < d; ++i) {
      Jet u = realify((c[i] + conj_jet(c[i])) * C(0.5, 0));
      Jet v = realify((c[i] - conj_jet(c[i])) * C(0, -0.5));
      ej[i] = u * invs;
      fj[i] = v * invs;
    }
    for (int i = 0; i < d; ++i) {
      Jet pu(d, 0, b), pv(d, 0, b);
      for (int k = 0; k < d; ++k) {
        Jet u = realify((c[k] + conj_jet(c[k])) * C(0.5, 0));
        Jet v = realify((c[k] - conj_jet(c[k])) * C(0, -0.5));
        pu += dAT[i][k] * u;
        pv += dAT[i][k] * v;
      }
      ej[d + i] = pu * invs;
      fj[d + i] = pv * invs;
    }
    out.e.push_back(std::move(ej));
    out.f.push_back(std::move(fj));
  }
  return out;
}

std::vector<Jet> beta_jets(const MagneticSystem& sys, const Eigen::VectorXd& q0,
                           int order) {
  return frame_jets(sys, q0, order).beta;
}

SigmaFrames sigma_frames(const MagneticSystem& sys, const Eigen::VectorXd& q,
                         double gauge_rotation) {
  const int d = sys.dim();
  SkewSpectrum sp = skew_frequencies(magnetic_matrix(sys, q), true, gauge_rotation);
  Eigen::MatrixXd dAT(d, d);  // (i,j) entry d_i A_j at q
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j)
      dAT(i, j) = eval_real(derivative(sys.potential(j), Var::W, i), q);
  SigmaFrames out;
  out.beta = sp.beta;
  for (int j = 0; j < d / 2; ++j) {
    const double s = 1.0 / std::sqrt(sp.beta[j]);
    Eigen::VectorXd e(2 * d), f(2 * d);
    e.head(d) = s * sp.frames[j].u;
    e.tail(d) = s * (dAT * sp.frames[j].u);
    f.head(d) = s * sp.frames[j].v;
    f.tail(d) = s * (dAT * sp.frames[j].v);
    out.e.push_back(e);
    out.f.push_back(f);
  }
  return out;
}

JetMatrix map_jacobian(const JetVector& comp, int dim_w, int pairs) {
  const int n = static_cast<int>(comp.size());
  const int cols = dim_w + 2 * pairs;
  JetMatrix D(n, JetVector(cols, Jet(dim_w, pairs, comp[0].bound(), true)));
  for (int i = 0; i < n; ++i) {
    for (int a = 0; a < dim_w; ++a) D[i][a] = derivative(comp[i], Var::W, a);
    for (int j = 0; j < pairs; ++j) {
      D[i][dim_w + 2 * j] = derivative(comp[i], Var::Z, j);
      D[i][dim_w + 2 * j + 1] = derivative(comp[i], Var::Zbar, j);
    }
  }
  return D;
}

JetVector compose_all(const JetVector& comps, const JetMapT<C>& inner) {
  JetVector out;
  out.reserve(comps.size());
  for (auto& c : comps) out.push_back(jet_compose(c, inner));
  return out;
}

namespace {

JetMatrix pullback_impl(const JetVector& comp, int dim_w, int pairs,
                        const std::function<Jet(int, int)>& form_entry) {
  const int n = static_cast<int>(comp.size());
  const int cols = dim_w + 2 * pairs;
  JetMatrix D = map_jacobian(comp, dim_w, pairs);
  // P_ab = sum_{i<j} F_ij (D_ia D_jb - D_ja D_ib), using skewness of F.
  Jet zero(dim_w, pairs, comp[0].bound(), true);
  JetMatrix P(cols, JetVector(cols, zero));
  for (int i = 0; i < n; ++i) {
    for (int j = i + 1; j < n; ++j) {
      Jet F = form_entry(i, j);
      if (F.empty()) continue;
      for (int a = 0; a < cols; ++a) {
        for (int bcol = a + 1; bcol < cols; ++bcol) {
          Jet t = D[i][a] * D[j][bcol] - D[j][a] * D[i][bcol];
          if (t.empty()) continue;
          P[a][bcol] += F * t;
        }
      }
    }
  }
  for (int a = 0; a < cols; ++a)
    for (int bcol = a + 1; bcol < cols; ++bcol) P[bcol][a] = -P[a][bcol];
  return P;
}

}  // namespace

JetMatrix pullback_form(const JetVector& comp, int dim_w, int pairs,
                        const Eigen::MatrixXd& target_form) {
  GradeBound b = comp[0].bound();
  return pullback_impl(comp, dim_w, pairs, [&](int i, int j) {
    Jet f(dim_w, pairs, b, true);
    if (target_form(i, j) != 0) f.add_term(MultiIndex{}, C(target_form(i, j), 0));
    return f;
  });
}

JetMatrix pullback_form(const JetVector& comp, int dim_w, int pairs,
                        const JetMatrix& target_form_jets,
                        const Eigen::VectorXd& target_center) {
  // Substitute the first n target variables by comp - center.
  const int n = static_cast<int>(comp.size());
  JetMapT<C> inner;
  for (int i = 0; i < n; ++i) {
    Jet ci = comp[i];
    ci.add_term(MultiIndex{}, C(-target_center[i], 0));
    inner.w_comp.push_back(ci);
  }
  JetMatrix composed(n, JetVector(n, Jet(dim_w, pairs, comp[0].bound(), true)));
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j) composed[i][j] = jet_compose(target_form_jets[i][j], inner);
  return pullback_impl(comp, dim_w, pairs,
                       [&](int i, int j) { return composed[i][j]; });
}

double matrix_max_abs(const JetMatrix& m) {
  double r = 0;
  for (auto& row : m)
    for (auto& e : row) r = std::max(r, e.max_abs());
  return r;
}

JetVector poincare_primitive_full(const JetMatrix& E, int dim_w) {
  // E homogeneous of coefficient degree m: lambda_a = sum_b w_b E_ba / (m+2).
  const GradeBound b = E[0][0].bound();
  JetVector lambda(dim_w, Jet(dim_w, 0, b, true));
  for (int a = 0; a < dim_w; ++a) {
    for (int bb = 0; bb < dim_w; ++bb) {
      for (auto& [mi, v] : E[bb][a].terms()) {
        MultiIndex n = mi;
        n.w[bb] = int8_t(n.w[bb] + 1);
        lambda[a].add_term(n, v / double(mi.w_degree() + 2));
      }
    }
  }
  return lambda;
}

JetVector poincare_primitive_vertical(const JetMatrix& E, int dim_w, int pairs) {
  // Homotopy scaling only the pair variables; divisors depend on the
  // monomial's z-degree k: /(k+1) into w slots, /(k+2) into z slots.
  const GradeBound b = E[0][0].bound();
  const int cols = dim_w + 2 * pairs;
  JetVector lambda(cols, Jet(dim_w, pairs, b, true));
  for (int a = 0; a < cols; ++a) {
    const bool a_vertical = a >= dim_w;
    for (int bb = dim_w; bb < cols; ++bb) {
      const int j = (bb - dim_w) / 2;
      const bool is_x = ((bb - dim_w) % 2) == 0;
      for (auto& [mi, v] : E[bb][a].terms()) {
        const int k = mi.z_degree();
        MultiIndex n = mi;
        if (is_x)
          n.a[j] = int8_t(n.a[j] + 1);
        else
          n.g[j] = int8_t(n.g[j] + 1);
        lambda[a].add_term(n, v / double(k + (a_vertical ? 2 : 1)));
      }
    }
  }
  return lambda;
}

JetMatrix one_form_d(const JetVector& lambda, int dim_w, int pairs) {
  const int cols = dim_w + 2 * pairs;
  auto dvar = [&](const Jet& g, int a) {
    if (a < dim_w) return derivative(g, Var::W, a);
    const int j = (a - dim_w) / 2;
    return ((a - dim_w) % 2 == 0) ? derivative(g, Var::Z, j)
                                  : derivative(g, Var::Zbar, j);
  };
  JetMatrix R(cols, JetVector(cols, Jet(dim_w, pairs, lambda[0].bound(), true)));
  for (int a = 0; a < cols; ++a)
    for (int bcol = 0; bcol < cols; ++bcol)
      R[a][bcol] = dvar(lambda[bcol], a) - dvar(lambda[a], bcol);
  return R;
}

JetVector map_inverse(const JetVector& psi, int order) {
  const int d = static_cast<int>(psi.size());
  const GradeBound b{0, order};
  Eigen::MatrixXd L(d, d);
  Eigen::VectorXd q0(d);
  for (int i = 0; i < d; ++i) {
    q0[i] = psi[i].constant_term().real();
    for (int j = 0; j < d; ++j) {
      MultiIndex m;
      m.w[j] = 1;
      L(i, j) = psi[i].coeff(m).real();
    }
  }
  Eigen::MatrixXd Linv = L.inverse();
  // phi_1(q) = Linv (q - q0)
  JetVector phi(d, Jet(d, 0, b, true));
  for (int i = 0; i < d; ++i) {
    for (int j = 0; j < d; ++j) {
      if (Linv(i, j) == 0) continue;
      MultiIndex m;
      m.w[j] = 1;
      phi[i].add_term(m, C(Linv(i, j), 0));
      phi[i].add_term(MultiIndex{}, C(-Linv(i, j) * q0[j], 0));
    }
  }
  JetMapT<C> psi_map;
  for (int i = 0; i < d; ++i) psi_map.w_comp.push_back(psi[i]);
  for (int m = 2; m <= order; ++m) {
    JetVector err = compose_all(phi, psi_map);  // should be Id + O(deg m)
    JetMapT<C> lin_inv;
    for (int i = 0; i < d; ++i) {
      Jet ci(d, 0, b, true);
      for (int j = 0; j < d; ++j) {
        if (Linv(i, j) == 0) continue;
        MultiIndex mm;
        mm.w[j] = 1;
        ci.add_term(mm, C(Linv(i, j), 0));
        ci.add_term(MultiIndex{}, C(-Linv(i, j) * q0[j], 0));
      }
      lin_inv.w_comp.push_back(ci);
    }
    for (int i = 0; i < d; ++i) {
      MultiIndex mi;
      mi.w[i] = 1;
      err[i].add_term(mi, C(-1, 0));
      Jet em = total_degree_part(err[i], m);
      if (em.empty()) continue;
      phi[i] -= jet_compose(em, lin_inv);
    }
  }
  return phi;
}

DarbouxChart darboux_jet(const MagneticSystem& sys, const WellData& well,
                         int order, int variant) {
  const int d = sys.dim();
  const int half = d / 2;
  const GradeBound b{0, order};

  // Linear symplectic normalization from the base frames:
  // columns (u_j / sqrt(beta_j), -v_j / sqrt(beta_j)).
  Eigen::MatrixXd L(d, d);
  for (int j = 0; j < half; ++j) {
    const double s = 1.0 / std::sqrt(well.beta[j]);
    L.col(2 * j) = s * well.frames[j].u;
    L.col(2 * j + 1) = -s * well.frames[j].v;
  }

  JetVector psi(d, Jet(d, 0, b, true));
  for (int i = 0; i < d; ++i) {
    psi[i].add_term(MultiIndex{}, C(well.q0[i], 0));
    for (int j = 0; j < d; ++j) {
      if (L(i, j) == 0) continue;
      MultiIndex m;
      m.w[j] = 1;
      psi[i].add_term(m, C(L(i, j), 0));
    }
  }

  // Field form jets F_ij(dq) around q0.
  JetMatrix F(d, JetVector(d, Jet(d, 0, b, true)));
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) F[i][j] = shift_center(sys.curl(i, j), well.q0, b);

  const Eigen::MatrixXd Jw = omega_pairs(half);
  const double scale = 1.0 + matrix_max_abs(F);

  for (int m = 1; m <= order - 1; ++m) {
    JetMatrix P = pullback_form(truncate_total(psi, m + 1), d, 0, F, well.q0);
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) {
        Jet c(d, 0, b, true);
        if (Jw(i, j) != 0) c.add_term(MultiIndex{}, C(Jw(i, j), 0));
        P[i][j] -= c;
      }
    JetMatrix Em = matrix_degree_part(P, m);
    if (matrix_max_abs(Em) < 1e-13 * scale) continue;
    JetVector lambda = poincare_primitive_full(Em, d);
    // X = Jw^{-1} lambda = -Jw lambda.
    JetMapT<C> inner;
    for (int i = 0; i < d; ++i) {
      Jet xi = coord_w(d, 0, b, i);
      for (int j = 0; j < d; ++j)
        if (Jw(i, j) != 0) xi -= lambda[j] * C(Jw(i, j), 0);
      inner.w_comp.push_back(xi);
    }
    psi = compose_all(psi, inner);
  }

  if (variant != 0) {
    // A genuinely different chart: post-compose with a fixed symplectic map
    // of the w space (rotation in the first pair plus a quadratic shear).
    JetMapT<C> sigma;
    const double th = 0.37, s = 0.25;
    for (int i = 0; i < d; ++i) sigma.w_comp.push_back(coord_w(d, 0, b, i));
    Jet y0 = coord_w(d, 0, b, 0), e0 = coord_w(d, 0, b, 1);
    sigma.w_comp[0] = y0 * C(std::cos(th), 0) - e0 * C(std::sin(th), 0);
    sigma.w_comp[1] = y0 * C(std::sin(th), 0) + e0 * C(std::cos(th), 0);
    JetMapT<C> shear;
    for (int i = 0; i < d; ++i) shear.w_comp.push_back(coord_w(d, 0, b, i));
    shear.w_comp[1] = shear.w_comp[1] + coord_w(d, 0, b, 0) * coord_w(d, 0, b, 0) * C(s, 0);
    psi = compose_all(compose_all(psi, sigma), shear);
  }

  DarbouxChart chart;
  chart.psi = psi;
  chart.phi = map_inverse(psi, order);
  chart.linear.resize(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) {
      MultiIndex m;
      m.w[j] = 1;
      chart.linear(i, j) = psi[i].coeff(m).real();
    }
  // Residual through degree order-1 (the derivative loses one degree).
  JetMatrix P = pullback_form(psi, d, 0, F, well.q0);
  double res = 0;
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) {
      res = std::max(res, std::abs(P[i][j].coeff(MultiIndex{}) - C(Jw(i, j), 0)));
      for (auto& [mi, v] : P[i][j].terms())
        if (mi.w_degree() >= 1 && mi.w_degree() <= order - 1)
          res = std::max(res, std::abs(v));
    }
  chart.residual = res;
  return chart;
}

namespace {

/// One jet-level flow step: replace (Q,P) components by the time-`time_sub`
/// flow of the ambient field (2d components over d q-variables at q0).
JetVector apply_flow(const JetVector& cur, const JetVector& field,
                     const Jet& time_sub, int d, const Eigen::VectorXd& q0,
                     GradeBound flow_bound) {
  // Flow space: d w-variables (dq) plus one pair slot whose x coordinate is
  // the flow time; phase truncation bounds the time powers.
  const GradeBound fb = flow_bound;
  auto lift = [&](const Jet& g) { return embed(g, d, 1, fb, true); };

  // Derivation D = sum_i VQ_i d_{dq_i}.
  std::vector<Jet> VQ(d), VP(d);
  for (int i = 0; i < d; ++i) VQ[i] = lift(field[i]);
  for (int i = 0; i < d; ++i) VP[i] = lift(field[d + i]);
  auto D = [&](const Jet& g) {
    Jet r(d, 1, fb, true);
    for (int i = 0; i < d; ++i) r += VQ[i] * derivative(g, Var::W, i);
    return r;
  };

  const int kmax = fb.max_phase_degree;
  Jet t = coord_x(d, 1, fb, 0);
  JetVector flowQ(d, Jet(d, 1, fb, true)), flowP(d, Jet(d, 1, fb, true));
  for (int i = 0; i < d; ++i) {
    flowQ[i] = coord_w(d, 1, fb, i);
    Jet termQ = VQ[i], termP = VP[i];
    Jet tpow = t;
    double fact = 1.0;
    for (int k = 1; k <= kmax; ++k) {
      fact /= k;
      flowQ[i] += tpow * termQ * C(fact, 0);
      flowP[i] += tpow * termP * C(fact, 0);
      if (k < kmax) {
        termQ = D(termQ);
        termP = D(termP);
        tpow = tpow * t;
        if (termQ.empty() && termP.empty()) break;
      }
    }
  }

  // Substitute dq -> curQ - q0 and t -> time_sub.
  JetMapT<C> inner;
  for (int i = 0; i < d; ++i) {
    Jet ci = cur[i];
    ci.add_term(MultiIndex{}, C(-q0[i], 0));
    inner.w_comp.push_back(ci);
  }
  inner.z_comp.push_back(time_sub);
  Jet zero = time_sub;
  zero *= C(0, 0);
  inner.zbar_comp.push_back(zero);

  JetVector out(2 * d, cur[0]);
  for (int i = 0; i < d; ++i) {
    out[i] = jet_compose(flowQ[i], inner);
    out[i].add_term(MultiIndex{}, C(q0[i], 0));
    out[d + i] = cur[d + i] + jet_compose(flowP[i], inner);
  }
  return out;
}

}  // namespace

TubularMap tubular_map_jet(const MagneticSystem& sys, const WellData& well,
                           const DarbouxChart& chart, GradeBound bound,
                           const TubularOptions& opt) {
  const int d = sys.dim();
  const int half = d / 2;
  const GradeBound Sb = bound;  // source space (d w-vars, d/2 pairs)

  // Base map w -> (psi(w), A(psi(w))).
  JetVector comp(2 * d, Jet(d, half, Sb, true));
  JetMapT<C> psi_inner;
  for (int i = 0; i < d; ++i) {
    Jet ci = embed(chart.psi[i], d, half, Sb, true);
    comp[i] = ci;
    ci.add_term(MultiIndex{}, C(-well.q0[i], 0));
    psi_inner.w_comp.push_back(ci);
  }
  for (int i = 0; i < d; ++i) {
    Jet Ai = shift_center(sys.potential(i), well.q0, GradeBound{0, Sb.max_w_degree + Sb.max_phase_degree});
    comp[d + i] = jet_compose(Ai, psi_inner);
  }

  // Frame fields to combined order, flowed in the fixed nesting order:
  // the innermost flow is f_{d/2} with time xi_{d/2}, the outermost e_1
  // with time x_1.
  const int qorder = Sb.max_w_degree + Sb.max_phase_degree;
  FrameJetData fr = frame_jets(sys, well.q0, qorder, opt.gauge_rotation);
  const GradeBound flow_bound{Sb.max_phase_degree, qorder};
  for (int j = half - 1; j >= 0; --j) {
    comp = apply_flow(comp, fr.f[j], coord_xi(d, half, Sb, j), d, well.q0, flow_bound);
    comp = apply_flow(comp, fr.e[j], coord_x(d, half, Sb, j), d, well.q0, flow_bound);
  }

  // Weinstein correction: kill Phi*omega - omega0 degree by degree with the
  // vertical homotopy; corrections are tangent to identity at order 2 in z.
  const Eigen::MatrixXd Om = omega_cotangent(d);
  const Eigen::MatrixXd Om0 = omega_pairs(d);  // uniform pair blocks on (w,z)
  const int cols = 2 * d;
  const double scale = 1.0 + matrix_max_abs(pullback_form(truncate_total(comp, 2), d, half, Om));
  for (int m = 1; m <= Sb.max_phase_degree + Sb.max_w_degree - 2; ++m) {
    JetMatrix P = pullback_form(truncate_total(comp, m + 1), d, half, Om);
    for (int a = 0; a < cols; ++a)
      for (int bb = 0; bb < cols; ++bb) {
        Jet c(d, half, Sb, true);
        if (Om0(a, bb) != 0) c.add_term(MultiIndex{}, C(Om0(a, bb), 0));
        P[a][bb] -= c;
      }
    JetMatrix Em = matrix_degree_part(P, m);
    if (matrix_max_abs(Em) < 1e-13 * scale) continue;
    // The chart handles the z-free part of the w-w block; everything the
    // vertical homotopy sees must vanish at z = 0.
    for (auto& row : Em)
      for (auto& e : row) {
        Jet keep(d, half, Sb, true);
        for (auto& [mi, v] : e.terms())
          if (mi.z_degree() >= 1) keep.add_term(mi, v);
        e = keep;
      }
    JetVector lambda = poincare_primitive_vertical(Em, d, half);
    // X = Om0^{-1} lambda = -Om0 lambda; all components must be O(|z|^2).
    JetVector X(cols, Jet(d, half, Sb, true));
    for (int a = 0; a < cols; ++a)
      for (int bb = 0; bb < cols; ++bb)
        if (Om0(a, bb) != 0) X[a] -= lambda[bb] * C(Om0(a, bb), 0);
    for (int a = 0; a < cols; ++a)
      for (auto& [mi, v] : X[a].terms())
        if (mi.z_degree() < 2)
          throw std::runtime_error(
              "tubular_map_jet: correction not tangent to identity (internal)");
    JetMapT<C> inner;
    for (int i = 0; i < d; ++i) inner.w_comp.push_back(coord_w(d, half, Sb, i) + X[i]);
    for (int j = 0; j < half; ++j) {
      inner.z_comp.push_back(coord_x(d, half, Sb, j) + X[d + 2 * j]);
      inner.zbar_comp.push_back(coord_xi(d, half, Sb, j) + X[d + 2 * j + 1]);
    }
    comp = compose_all(comp, inner);
  }

  TubularMap out;
  out.map.comp = comp;
  out.map.src_dim_w = d;
  out.map.src_pairs = half;
  out.chart = chart;
  // Residual over the window the truncated Jacobian can certify.
  JetMatrix P = pullback_form(comp, d, half, Om);
  double res = 0;
  for (int a = 0; a < cols; ++a)
    for (int bb = 0; bb < cols; ++bb) {
      res = std::max(res, std::abs(P[a][bb].coeff(MultiIndex{}) - C(Om0(a, bb), 0)));
      for (auto& [mi, v] : P[a][bb].terms()) {
        if (mi.z_degree() + mi.w_degree() == 0) continue;
        if (mi.z_degree() > Sb.max_phase_degree - 1 ||
            mi.w_degree() > Sb.max_w_degree - 1 ||
            mi.z_degree() + mi.w_degree() > Sb.max_phase_degree + Sb.max_w_degree - 2)
          continue;
        res = std::max(res, std::abs(v));
      }
    }
  out.symplectic_residual = res;
  if (res > opt.residual_tol)
    throw std::runtime_error("tubular_map_jet: symplectic residual above tolerance");
  return out;
}

HamiltonianJet reduce_hamiltonian(const MagneticSystem& sys, const WellData& well,
                                  GradeBound bound, const TubularOptions& opt) {
  DarbouxChart chart =
      darboux_jet(sys, well, bound.max_w_degree + 1, opt.darboux_variant);
  TubularMap tub = tubular_map_jet(sys, well, chart, bound, opt);
  return reduce_from_map(sys, well, tub, bound);
}

HamiltonianJet reduce_from_map(const MagneticSystem& sys, const WellData& well,
                               const TubularMap& tub, GradeBound bound) {
  const int d = sys.dim();
  const int half = d / 2;
  Jet H = hamiltonian_jet(sys, well.q0);
  JetMapT<C> phi_map;
  for (int i = 0; i < 2 * d; ++i) {
    Jet ci = tub.map.comp[i];
    const double base = (i < d) ? well.q0[i] : eval_real(sys.potential(i - d), well.q0);
    ci.add_term(MultiIndex{}, C(-base, 0));
    phi_map.w_comp.push_back(ci);
  }
  Jet Hreal = jet_compose(H, phi_map);
  Jet Hc = complex_convert(Hreal, true);

  HamiltonianJet out;
  out.order = bound;
  out.symplectic_residual = tub.symplectic_residual;
  out.jet = Jet(d, half, bound, false);
  out.beta_hat.assign(half, Jet(d, half, bound, false));
  double dropped = 0;
  const double scl = 1.0 + Hc.max_abs();
  for (auto& [m, v] : Hc.terms()) {
    const int zdeg = m.z_degree();
    bool forbidden = false;
    if (zdeg < 2) forbidden = true;  // H vanishes on Sigma to second order
    if (zdeg == 2) {
      // Only the diagonal pattern z_j zbar_j is allowed.
      bool diag = false;
      for (int j = 0; j < half; ++j)
        if (m.a[j] == 1 && m.g[j] == 1) diag = true;
      forbidden = !diag;
    }
    if (forbidden) {
      dropped = std::max(dropped, std::abs(v));
      continue;
    }
    out.jet.add_term(m, v);
    if (zdeg == 2) {
      for (int j = 0; j < half; ++j)
        if (m.a[j] == 1 && m.g[j] == 1) {
          MultiIndex n = m;
          n.a[j] = 0;
          n.g[j] = 0;
          out.beta_hat[j].add_term(n, v);
        }
    }
  }
  out.structure_residual = dropped;
  if (dropped > 1e-8 * scl)
    throw std::runtime_error(
        "reduce_hamiltonian: reduced Hamiltonian violates the normal structure");
  out.jet.canonicalize();
  return out;
}

}  // namespace magnf
