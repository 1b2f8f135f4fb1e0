#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "magnf/classical.hpp"
#include "test_systems.hpp"
#include "test_util.hpp"

using namespace magnf;
using test::block4_system;
using test::cubic_system;
using test::landau_system;
using C = std::complex<double>;

namespace {

Jet coord(int dim_w, int pairs, GradeBound b, int i) {
  Jet a(dim_w, pairs, b, true);
  MultiIndex m;
  m.w[i] = 1;
  a.add_term(m, C(1, 0));
  return a;
}

double eval_at(const Jet& a, const Eigen::VectorXd& x) {
  std::vector<C> wv(a.dim_w());
  for (int i = 0; i < a.dim_w(); ++i) wv[i] = x[i];
  return evaluate(a, wv, {}, {}, 0.0).real();
}

}  // namespace

TEST_CASE("hamiltonian jet: unit field, free case, pointwise oracle") {
  MagneticSystem lan = landau_system();
  Jet H = hamiltonian_jet(lan, Eigen::Vector2d(0, 0));
  // H = dp1^2 + (dp2 - dq1)^2 over (dq1, dq2, dp1, dp2).
  auto mono = [](int i, int j) {
    MultiIndex m;
    m.w[i] = int8_t(m.w[i] + 1);
    m.w[j] = int8_t(m.w[j] + 1);
    return m;
  };
  CHECK(H.coeff(mono(2, 2)) == C(1, 0));
  CHECK(H.coeff(mono(3, 3)) == C(1, 0));
  CHECK(H.coeff(mono(0, 0)) == C(1, 0));
  CHECK(H.coeff(mono(0, 3)) == C(-2, 0));
  CHECK(H.size() == 4);

  MagneticSystem free(2, {make_polynomial(2, {}), make_polynomial(2, {})},
                      Eigen::Vector2d(3, 3));
  Jet Hf = hamiltonian_jet(free, Eigen::Vector2d(0.5, -0.5));
  CHECK(Hf.coeff(mono(2, 2)) == C(1, 0));
  CHECK(Hf.coeff(mono(3, 3)) == C(1, 0));
  CHECK(Hf.size() == 2);

  MagneticSystem cub = cubic_system();
  Eigen::Vector2d center(0.2, -0.3);
  Jet Hc = hamiltonian_jet(cub, center);
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> u(-0.8, 0.8);
  const Eigen::Vector2d Ac = cub.potential_at(center);
  for (int t = 0; t < 10; ++t) {
    Eigen::Vector2d q(u(rng), u(rng));
    Eigen::Vector2d p(u(rng), u(rng));
    Eigen::VectorXd x(4);
    x << q[0] - center[0], q[1] - center[1], p[0] - Ac[0], p[1] - Ac[1];
    const double direct = (p - cub.potential_at(q)).squaredNorm();
    CHECK(std::abs(eval_at(Hc, x) - direct) < 1e-12);
  }
}

TEST_CASE("frequency jets: 2D curl, 4D blocks, constant, finite differences") {
  MagneticSystem cub = cubic_system();
  std::vector<Jet> bj = beta_jets(cub, Eigen::Vector2d::Zero(), 4);
  REQUIRE(bj.size() == 1);
  // In 2D the single frequency is |B_12| = 1 + |q|^2.
  MultiIndex c0, c20, c02;
  c20.w[0] = 2;
  c02.w[1] = 2;
  CHECK(std::abs(bj[0].coeff(c0) - C(1, 0)) < 1e-12);
  CHECK(std::abs(bj[0].coeff(c20) - C(1, 0)) < 1e-12);
  CHECK(std::abs(bj[0].coeff(c02) - C(1, 0)) < 1e-12);
  CHECK(bj[0].size() == 3);

  MagneticSystem b4 = block4_system();
  std::vector<Jet> bj4 = beta_jets(b4, Eigen::VectorXd::Zero(4), 4);
  REQUIRE(bj4.size() == 2);
  const double s2 = std::sqrt(2.0);
  // beta_1 = 1 + q1^2 + q2^2, beta_2 = sqrt(2)(1 + q3^2 + q4^2).
  MultiIndex m1, m2, m3, m4;
  m1.w[0] = 2;
  m2.w[1] = 2;
  m3.w[2] = 2;
  m4.w[3] = 2;
  CHECK(std::abs(bj4[0].coeff(m1) - C(1, 0)) < 1e-10);
  CHECK(std::abs(bj4[0].coeff(m2) - C(1, 0)) < 1e-10);
  CHECK(std::abs(bj4[0].coeff(m3)) < 1e-10);
  CHECK(std::abs(bj4[1].coeff(m3) - C(s2, 0)) < 1e-10);
  CHECK(std::abs(bj4[1].coeff(m4) - C(s2, 0)) < 1e-10);
  CHECK(std::abs(bj4[1].coeff(m1)) < 1e-10);

  // Constant field: frequency jets are constant.
  MagneticSystem lan = landau_system();
  std::vector<Jet> bl = beta_jets(lan, Eigen::Vector2d(0.3, 0.1), 4);
  CHECK(bl[0].size() == 1);
  CHECK(std::abs(bl[0].coeff(c0) - C(1, 0)) < 1e-13);

  // Finite-difference oracle along random rays for the 4D system.
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int t = 0; t < 5; ++t) {
    Eigen::VectorXd dir(4);
    for (int i = 0; i < 4; ++i) dir[i] = u(rng);
    const double s = 0.05;
    Eigen::VectorXd q = s * dir;
    SkewSpectrum sp = skew_frequencies(magnetic_matrix(b4, q));
    for (int j = 0; j < 2; ++j)
      CHECK(std::abs(eval_at(bj4[j], q) - sp.beta[j]) < 1e-6);
  }
}

TEST_CASE("sigma frames: normalization, pairings, scaling") {
  MagneticSystem lan = landau_system();
  SigmaFrames fr = sigma_frames(lan, Eigen::Vector2d(0, 0));
  const Eigen::MatrixXd Om = omega_cotangent(2);
  CHECK(fr.e[0].dot(Om * fr.f[0]) == doctest::Approx(1.0));

  MagneticSystem b4 = block4_system();
  const Eigen::MatrixXd Om4 = omega_cotangent(4);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-0.8, 0.8);
  for (int t = 0; t < 6; ++t) {
    Eigen::VectorXd q(4);
    for (int i = 0; i < 4; ++i) q[i] = u(rng);
    SigmaFrames f4 = sigma_frames(b4, q);
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j < 2; ++j) {
        CHECK(std::abs(f4.e[i].dot(Om4 * f4.f[j]) - (i == j ? 1.0 : 0.0)) < 1e-10);
        CHECK(std::abs(f4.e[i].dot(Om4 * f4.e[j])) < 1e-10);
        CHECK(std::abs(f4.f[i].dot(Om4 * f4.f[j])) < 1e-10);
      }
  }

  // Scaling the field by s > 0 scales the frames by s^{-1/2}.
  const double s = 2.7;
  MagneticSystem scaled(
      2, {make_polynomial(2, {}), make_polynomial(2, {{s, {1, 0}}})},
      Eigen::Vector2d(3, 3));
  SigmaFrames fs = sigma_frames(scaled, Eigen::Vector2d(0, 0));
  CHECK(fs.e[0].head(2).norm() ==
        doctest::Approx(fr.e[0].head(2).norm() / std::sqrt(s)));
}

TEST_CASE("poincare primitives invert d on closed forms") {
  std::mt19937_64 rng(6);
  std::uniform_int_distribution<int> cu(-2, 2);

  // Full homotopy: random exact 2-form E = d(mu) of homogeneous degree.
  const int d = 4;
  const GradeBound b{0, 6};
  for (int m = 1; m <= 4; ++m) {
    JetVector mu(d, Jet(d, 0, b, true));
    for (int i = 0; i < d; ++i)
      for (int t = 0; t < 4; ++t) {
        MultiIndex mi;
        int left = m + 1;
        for (int v = 0; v < d - 1; ++v) {
          const int e = cu(rng) >= 0 ? std::min(left, std::abs(cu(rng))) : 0;
          mi.w[v] = int8_t(e);
          left -= e;
        }
        mi.w[d - 1] = int8_t(left);
        mu[i].add_term(mi, C(cu(rng), 0));
      }
    JetMatrix E = one_form_d(mu, d, 0);
    JetVector lambda = poincare_primitive_full(E, d);
    JetMatrix dl = one_form_d(lambda, d, 0);
    double diff = 0;
    for (int i = 0; i < d; ++i)
      for (int j = 0; j < d; ++j) diff = std::max(diff, max_coeff_diff(dl[i][j], E[i][j]));
    CHECK(diff < 1e-12);
  }

  // Vertical homotopy: mu with z-degree >= 2 so E = d(mu) vanishes at z = 0.
  // Content stays small inside a roomy bound so the z-raising primitive
  // never truncates in the round trip.
  const int dw = 2, pairs = 1;
  const GradeBound content{3, 2}, bz{8, 6};
  JetVector mu(dw + 2 * pairs, Jet(dw, pairs, bz, true));
  for (std::size_t i = 0; i < mu.size(); ++i)
    for (int t = 0; t < 6; ++t) {
      MultiIndex mi = test::random_index(rng, dw, pairs, content);
      mi.l = 0;
      if (mi.z_degree() < 2) continue;
      mu[i].add_term(mi, C(cu(rng), 0));
    }
  JetMatrix E = one_form_d(mu, dw, pairs);
  JetVector lambda = poincare_primitive_vertical(E, dw, pairs);
  JetMatrix dl = one_form_d(lambda, dw, pairs);
  double diff = 0;
  for (std::size_t i = 0; i < mu.size(); ++i)
    for (std::size_t j = 0; j < mu.size(); ++j)
      diff = std::max(diff, max_coeff_diff(dl[i][j], E[i][j]));
  CHECK(diff < 1e-12);
}

TEST_CASE("darboux chart: constant field identity, cubic residual, inverse") {
  MagneticSystem lan = landau_system();
  WellData wl;
  wl.q0 = Eigen::Vector2d(0, 0);
  wl.b0 = 1.0;
  SkewSpectrum sp = skew_frequencies(magnetic_matrix(lan, wl.q0));
  wl.beta = sp.beta;
  wl.frames = sp.frames;
  DarbouxChart ch = darboux_jet(lan, wl, 4);
  // Identity chart: psi(w) = L w with L = [[1,0],[0,1]] and no corrections.
  CHECK(ch.residual < 1e-14);
  CHECK((ch.linear - Eigen::Matrix2d::Identity()).norm() < 1e-12);
  CHECK(ch.psi[0].size() == 1);
  CHECK(ch.psi[1].size() == 1);

  MagneticSystem cub = cubic_system();
  WellData well = find_well(cub, Eigen::Vector2d(0.3, -0.2));
  DarbouxChart chc = darboux_jet(cub, well, 5);
  CHECK(chc.residual < 1e-10);
  CHECK(std::abs(chc.linear.determinant() - 1.0) < 1e-9);  // b0 = 1 in 2D

  // phi o psi = Id through the built order.
  JetMapT<C> psi_map;
  for (auto& c : chc.psi) psi_map.w_comp.push_back(c);
  JetVector round = compose_all(chc.phi, psi_map);
  for (int i = 0; i < 2; ++i) {
    Jet expect = coord(2, 0, round[i].bound(), i);
    CHECK(max_coeff_diff(round[i], expect) < 1e-10);
  }

  // The variant chart is symplectic for the same form but differs.
  DarbouxChart alt = darboux_jet(cub, well, 5, 1);
  CHECK(alt.residual < 1e-10);
  double diff = 0;
  for (int i = 0; i < 2; ++i) diff = std::max(diff, max_coeff_diff(alt.psi[i], chc.psi[i]));
  CHECK(diff > 1e-3);
}

TEST_CASE("tubular map: base slice, symplectic residual, frame columns") {
  MagneticSystem lan = landau_system();
  WellData wl;
  wl.q0 = Eigen::Vector2d(0, 0);
  wl.b0 = 1.0;
  SkewSpectrum sp = skew_frequencies(magnetic_matrix(lan, wl.q0));
  wl.beta = sp.beta;
  wl.frames = sp.frames;
  DarbouxChart ch = darboux_jet(lan, wl, 5);
  TubularMap tub = tubular_map_jet(lan, wl, ch, GradeBound{4, 4});
  CHECK(tub.symplectic_residual < 1e-12);
  // Phi(w, 0) = (psi(w), A(psi(w))) exactly: z-free terms match the base map.
  for (int i = 0; i < 2; ++i) {
    Jet zfree(2, 1, tub.map.comp[i].bound(), true);
    for (auto& [m, v] : tub.map.comp[i].terms())
      if (m.z_degree() == 0) zfree.add_term(m, v);
    Jet psi_lift(2, 1, zfree.bound(), true);
    for (auto& [m, v] : ch.psi[i].terms()) psi_lift.add_term(m, v);
    CHECK(max_coeff_diff(zfree, psi_lift) < 1e-12);
  }

  MagneticSystem cub = cubic_system();
  WellData well = find_well(cub, Eigen::Vector2d(0.3, -0.2));
  DarbouxChart chc = darboux_jet(cub, well, 5);
  TubularMap tc = tubular_map_jet(cub, well, chc, GradeBound{4, 4});
  CHECK(tc.symplectic_residual < 1e-10);

  // d_z Phi at (w,z) = 0 reproduces the frames.
  SigmaFrames fr = sigma_frames(cub, well.q0);
  for (int i = 0; i < 4; ++i) {
    MultiIndex mx, mxi;
    mx.a[0] = 1;
    mxi.g[0] = 1;
    CHECK(std::abs(tc.map.comp[i].coeff(mx) - C(fr.e[0][i], 0)) < 1e-10);
    CHECK(std::abs(tc.map.comp[i].coeff(mxi) - C(fr.f[0][i], 0)) < 1e-10);
  }
}

TEST_CASE("reduced Hamiltonian: flat case exact, quadratic structure, oracle") {
  // Constant unit field: H-hat = |z1|^2 with nothing else.
  MagneticSystem lan = landau_system();
  WellData wl;
  wl.q0 = Eigen::Vector2d(0, 0);
  wl.b0 = 1.0;
  SkewSpectrum sp = skew_frequencies(magnetic_matrix(lan, wl.q0));
  wl.beta = sp.beta;
  wl.frames = sp.frames;
  HamiltonianJet hh = reduce_hamiltonian(lan, wl, GradeBound{4, 4});
  MultiIndex mI;
  mI.a[0] = 1;
  mI.g[0] = 1;
  CHECK(std::abs(hh.jet.coeff(mI) - C(1, 0)) < 1e-12);
  CHECK(hh.jet.size() == 1);
  CHECK(hh.structure_residual < 1e-12);

  // Cubic field: the z-quadratic coefficient jet equals the frequency jet
  // composed with the chart (independent composition oracle).
  MagneticSystem cub = cubic_system();
  WellData well = find_well(cub, Eigen::Vector2d(0.3, -0.2));
  HamiltonianJet hc = reduce_hamiltonian(cub, well, GradeBound{4, 4});
  CHECK(hc.structure_residual < 1e-10);
  CHECK(std::abs(hc.beta_hat[0].constant_term() - C(well.beta[0], 0)) < 1e-10);

  DarbouxChart chc = darboux_jet(cub, well, 5);
  std::vector<Jet> bj = beta_jets(cub, well.q0, 5);
  JetMapT<C> into;
  for (int i = 0; i < 2; ++i) {
    Jet ci = chc.psi[i];
    ci.add_term(MultiIndex{}, C(-well.q0[i], 0));
    into.w_comp.push_back(rebound(ci, GradeBound{0, 4}));
  }
  Jet beta_comp = jet_compose(bj[0], into);
  Jet beta_hat_w(2, 0, GradeBound{0, 4});
  for (auto& [m, v] : hc.beta_hat[0].terms()) {
    MultiIndex n;
    n.w = m.w;
    beta_hat_w.add_term(n, v);
  }
  CHECK(max_coeff_diff(beta_hat_w, beta_comp) < 1e-9);

  // 4D block system: diagonal quadratic part with both frequencies.
  MagneticSystem b4 = block4_system();
  Eigen::VectorXd qi(4);
  qi << 0.2, -0.1, 0.15, 0.1;
  WellData w4 = find_well(b4, qi);
  HamiltonianJet h4 = reduce_hamiltonian(b4, w4, GradeBound{3, 3});
  CHECK(h4.structure_residual < 1e-10);
  CHECK(std::abs(h4.beta_hat[0].constant_term() - C(1, 0)) < 1e-8);
  CHECK(std::abs(h4.beta_hat[1].constant_term() - C(std::sqrt(2.0), 0)) < 1e-8);

  // The reduced symbol is a real symbol.
  CHECK(reality_defect(hc.jet) < 1e-10);
}
