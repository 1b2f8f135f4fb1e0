#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "magnf/birkhoff.hpp"
#include "magnf/classical.hpp"
#include "test_systems.hpp"
#include "test_util.hpp"

using namespace magnf;
using test::cubic_system;
using test::monomial;
using C = std::complex<double>;

namespace {

Jet action_jet(int dim_w, int pairs, GradeBound b, int j) {
  MultiIndex m;
  m.a[j] = 1;
  m.g[j] = 1;
  return monomial(dim_w, pairs, b, m);
}

std::vector<Jet> const_beta(const std::vector<double>& beta, int dim_w,
                            int pairs, GradeBound b) {
  std::vector<Jet> out;
  for (double v : beta) {
    Jet j(dim_w, pairs, b);
    j.add_term(MultiIndex{}, C(v, 0));
    out.push_back(j);
  }
  return out;
}

Jet build_H0(const std::vector<Jet>& beta_hat, int dim_w, int pairs,
             GradeBound b) {
  Jet H0(dim_w, pairs, b);
  for (std::size_t j = 0; j < beta_hat.size(); ++j)
    H0 += beta_hat[j] * action_jet(dim_w, pairs, b, int(j));
  return H0;
}

/// Lowest eigenvalues of -hbar^2 u'' + V(y) u on [-L, L] (Dirichlet), via the
/// tridiagonal eigensolver: the independent oracle for the well expansions.
std::vector<double> oscillator_1d(const std::function<double(double)>& V,
                                  double hbar, double L, int n, int k) {
  const double h = 2 * L / (n - 1);
  Eigen::VectorXd diag(n), sub(n - 1);
  for (int i = 0; i < n; ++i) {
    const double y = -L + i * h;
    diag[i] = 2 * hbar * hbar / (h * h) + V(y);
  }
  sub.setConstant(-hbar * hbar / (h * h));
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es;
  es.computeFromTridiagonal(diag, sub, Eigen::EigenvaluesOnly);
  std::vector<double> out;
  for (int i = 0; i < k; ++i) out.push_back(es.eigenvalues()[i]);
  return out;
}

}  // namespace

TEST_CASE("resonant split") {
  const GradeBound b{6, 2};
  MultiIndex mres;
  mres.a[0] = 1;
  mres.g[0] = 1;
  mres.l = 1;
  Jet R = monomial(1, 2, b, mres);
  auto [K, off] = resonant_split(R);
  CHECK(max_coeff_diff(K, R) == 0.0);
  CHECK(off.empty());

  MultiIndex moff;
  moff.a[0] = 2;
  moff.g[1] = 1;
  Jet R2 = monomial(1, 2, b, moff);
  auto [K2, off2] = resonant_split(R2);
  CHECK(K2.empty());
  CHECK(max_coeff_diff(off2, R2) == 0.0);

  std::mt19937_64 rng(31);
  Jet mixed = test::random_jet<C>(rng, 1, 2, b, 12);
  auto [K3, off3] = resonant_split(mixed);
  CHECK(max_coeff_diff(K3 + off3, mixed) == 0.0);
  for (auto& [m, v] : K3.terms()) CHECK(m.a == m.g);
  for (auto& [m, v] : off3.terms()) CHECK(!(m.a == m.g));
}

TEST_CASE("diagonal action and homological division") {
  const GradeBound b{6, 4};

  // Constant frequencies: coefficient 1/beta on z1^2 zbar1.
  auto beta = const_beta({2.0}, 1, 1, b);
  MultiIndex m;
  m.a[0] = 2;
  m.g[0] = 1;
  Jet off = monomial(1, 1, b, m);
  Jet tp = homological_solve(off, beta);
  CHECK(std::abs(tp.coeff(m) - C(0.5, 0)) < 1e-15);
  CHECK(max_coeff_diff(t_action(beta, tp), off) < 1e-14);

  // w-dependent divisor: beta_hat = (1, 2 + w1), monomial z1 zbar2:
  // divisor 1 - (2 + w1) = -1 - w1, coefficient jet -(1 - w1 + w1^2 - ...).
  auto beta2 = const_beta({1.0, 2.0}, 1, 2, b);
  MultiIndex w1;
  w1.w[0] = 1;
  beta2[1].add_term(w1, C(1, 0));
  MultiIndex mz;
  mz.a[0] = 1;
  mz.g[1] = 1;
  Jet off2 = monomial(1, 2, b, mz);
  Jet tp2 = homological_solve(off2, beta2);
  for (int k = 0; k <= 4; ++k) {
    MultiIndex mk = mz;
    mk.w[0] = int8_t(k);
    const double expect = (k % 2 == 0) ? -1.0 : 1.0;
    CHECK(std::abs(tp2.coeff(mk) - C(expect, 0)) < 1e-13);
  }
  // Round trip: T tau' = offres modulo w-degrees beyond the bound.
  Jet round = t_action(beta2, tp2);
  CHECK(max_coeff_diff(round, off2) < 1e-13);

  // The diagonal eigenrelation: T with unit weight on slot j acts as
  // (alpha_j - gamma_j); the honest bracket action is -2i times it.
  std::mt19937_64 rng(32);
  for (int t = 0; t < 200; ++t) {
    MultiIndex mm = test::random_index(rng, 2, 2, GradeBound{6, 4});
    Jet mono = monomial(2, 2, GradeBound{6, 4}, mm);
    for (int j = 0; j < 2; ++j) {
      std::vector<double> unit(2, 0.0);
      unit[j] = 1.0;
      Jet tw = t_action(const_beta(unit, 2, 2, GradeBound{6, 4}), mono);
      Jet expect = mono * C(mm.a[j] - mm.g[j], 0);
      CHECK(max_coeff_diff(tw, expect) < 1e-12);
      Jet honest = scaled_ad(action_jet(2, 2, GradeBound{6, 4}, j), mono);
      CHECK(max_coeff_diff(honest, tw * C(0, -2)) < 1e-12);
    }
  }

  // Resonant input rejected.
  MultiIndex md;
  md.a[0] = 1;
  md.g[0] = 1;
  CHECK_THROWS_AS(homological_solve(monomial(1, 1, b, md), beta),
                  std::invalid_argument);
}

TEST_CASE("birkhoff_reduce: trivial and flat inputs") {
  const GradeBound b{4, 4};
  auto beta = const_beta({1.0}, 2, 1, b);
  Jet H0 = build_H0(beta, 2, 1, b);

  NormalFormResult nf = birkhoff_reduce(H0, beta, 4);
  CHECK(nf.tau.empty());
  CHECK(nf.kappa.empty());
  CHECK(nf.rho.empty());
}

TEST_CASE("birkhoff_reduce: reconstruction identity on the 2D reference") {
  MagneticSystem cub = cubic_system();
  WellData well = find_well(cub, Eigen::Vector2d(0.3, -0.2));
  HamiltonianJet ham = reduce_hamiltonian(cub, well, GradeBound{4, 4});
  NormalFormResult nf = birkhoff_reduce(ham.jet, ham.beta_hat, 4);

  CHECK(nf.tau.valuation() >= 3);
  CHECK(nf.rho.valuation() >= 4);
  for (auto& [m, v] : nf.kappa.terms()) CHECK(m.a == m.g);

  // Independent reconstruction: exp_ad(tau, H) = H0 + kappa + rho.
  Jet H0 = build_H0(ham.beta_hat, 2, 1, ham.jet.bound());
  Jet lhs = exp_ad(nf.tau, ham.jet);
  Jet rhs = H0 + nf.kappa + nf.rho;
  CHECK(max_coeff_diff(lhs, rhs) < 1e-10);

  // kappa commutes with the action.
  Jet c = moyal_bracket(nf.kappa, action_jet(2, 1, nf.kappa.bound(), 0));
  CHECK(c.max_abs() < 1e-12);

  // The generator is a real symbol, so the normal form stays real.
  CHECK(reality_defect(nf.kappa) < 1e-10);
}

TEST_CASE("birkhoff_reduce: resonance error names alpha - gamma") {
  const GradeBound b{4, 2};
  auto beta = const_beta({1.0, 2.0}, 2, 2, b);
  Jet H0 = build_H0(beta, 2, 2, b);
  MultiIndex m;  // z1^2 zbar2: <alpha-gamma, beta> = 2 - 2 = 0
  m.a[0] = 2;
  m.g[1] = 1;
  Jet gamma = monomial(2, 2, b, m);
  MultiIndex mc;  // conjugate partner keeps the symbol real
  mc.g[0] = 2;
  mc.a[1] = 1;
  gamma += monomial(2, 2, b, mc);
  bool caught = false;
  try {
    birkhoff_reduce(H0 + gamma, beta, 4);
  } catch (const ResonanceError& e) {
    caught = true;
    REQUIRE(e.delta().size() == 2);
    const bool plus = e.delta()[0] == 2 && e.delta()[1] == -1;
    const bool minus = e.delta()[0] == -2 && e.delta()[1] == 1;
    CHECK((plus || minus));
    CHECK(std::string(e.what()).find("alpha-gamma") != std::string::npos);
  }
  CHECK(caught);
}

TEST_CASE("star rewrite: quartic action, hbar stability, round trip") {
  const GradeBound b{6, 2};
  Jet I = action_jet(0, 1, b, 0);
  Jet kappa = I * I;  // |z1|^4
  auto table = star_rewrite(kappa);
  // I^2 = I*I + hbar^2: coefficient 1 on the star square, +1 on hbar^2.
  REQUIRE(table.size() == 2);
  bool found_sq = false, found_h2 = false;
  for (auto& e : table) {
    if (e.m == std::vector<int>{2} && e.l == 0) {
      found_sq = std::abs(e.coeff.constant_term() - C(1, 0)) < 1e-14;
    }
    if (e.m == std::vector<int>{0} && e.l == 2) {
      found_h2 = std::abs(e.coeff.constant_term() - C(1, 0)) < 1e-14;
    }
  }
  CHECK(found_sq);
  CHECK(found_h2);

  // m = 1 classes are star-stable.
  Jet lin = shift_hbar(I, 1);
  auto t2 = star_rewrite(lin);
  REQUIRE(t2.size() == 1);
  CHECK(t2[0].l == 1);
  CHECK(t2[0].m == std::vector<int>{1});

  // Round trip through star products is exact.
  std::mt19937_64 rng(33);
  Jet resonant(2, 2, GradeBound{6, 3});
  for (int t = 0; t < 10; ++t) {
    MultiIndex m = test::random_index(rng, 2, 2, GradeBound{6, 3});
    m.g = m.a;
    if (m.phase_degree() > 6) continue;
    resonant.add_term(m, C((t % 5) - 2, 0));
  }
  auto t3 = star_rewrite(resonant);
  Jet back = star_expand(t3, 2, 2, resonant.bound());
  CHECK(max_coeff_diff(back, resonant) < 1e-12);
}

TEST_CASE("williamson: scalar forms, geometric mean, random SPD") {
  WilliamsonResult w1 = williamson(2.0 * Eigen::Matrix2d::Identity());
  REQUIRE(w1.nu.size() == 1);
  CHECK(w1.nu[0] == doctest::Approx(2.0));
  CHECK((w1.linear_map - Eigen::Matrix2d::Identity()).norm() < 1e-10);

  Eigen::Matrix2d Q2 = Eigen::Vector2d(3.0, 5.0).asDiagonal();
  WilliamsonResult w2 = williamson(Q2);
  CHECK(w2.nu[0] == doctest::Approx(std::sqrt(15.0)));

  std::mt19937_64 rng(34);
  std::uniform_real_distribution<double> u(-1, 1);
  const Eigen::MatrixXd J = omega_pairs(2);
  for (int trial = 0; trial < 10; ++trial) {
    Eigen::MatrixXd A(4, 4);
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j) A(i, j) = u(rng);
    Eigen::MatrixXd Q = A * A.transpose() + 0.5 * Eigen::MatrixXd::Identity(4, 4);
    WilliamsonResult w = williamson(Q);
    const Eigen::MatrixXd& M = w.linear_map;
    CHECK((M.transpose() * J * M - J).norm() < 1e-10);
    Eigen::VectorXd expect(4);
    expect << w.nu[0], w.nu[0], w.nu[1], w.nu[1];
    CHECK((M.transpose() * Q * M - Eigen::MatrixXd(expect.asDiagonal())).norm() < 1e-9);

    // Frequencies are invariant under symplectic congruence.
    Eigen::MatrixXd S = Eigen::MatrixXd::Identity(4, 4);
    S(0, 1) = 0.7;  // shear within the first pair
    S(2, 3) = -0.4;
    WilliamsonResult wc = williamson(S.transpose() * Q * S);
    CHECK(wc.nu[0] == doctest::Approx(w.nu[0]));
    CHECK(wc.nu[1] == doctest::Approx(w.nu[1]));
  }

  CHECK_THROWS(williamson(-Eigen::Matrix2d::Identity()));
}

TEST_CASE("well_reduce: harmonic well is exact") {
  // Symbol 1 + w1^2 + w2^2: levels 1 + hbar (2m+1), nothing else.
  const GradeBound b{0, 6};
  Jet sym(2, 0, GradeBound{6, 6});
  sym.add_term(MultiIndex{}, C(1, 0));
  MultiIndex m1, m2;
  m1.w[0] = 2;
  m2.w[1] = 2;
  sym.add_term(m1, C(1, 0));
  sym.add_term(m2, C(1, 0));

  WellExpansion wx = well_reduce(sym, 6, 4);
  CHECK(wx.b0 == doctest::Approx(1.0));
  REQUIRE(wx.normal.nu.size() == 1);
  CHECK(wx.normal.nu[0] == doctest::Approx(1.0));
  for (auto& lev : wx.levels) {
    CHECK(lev.coeff.at(0) == doctest::Approx(1.0));
    CHECK(lev.coeff.at(2) == doctest::Approx(2 * lev.m[0] + 1));
    for (auto& [k, c] : lev.coeff) {
      if (k > 2) CHECK(std::abs(c) < 1e-12);
      CHECK(k % 2 == 0);  // no half powers for a non-resonant well
    }
  }

  // Adding hbar * c shifts every level by c at the hbar^1 order.
  Jet shifted = sym;
  MultiIndex mh;
  mh.l = 1;
  shifted.add_term(mh, C(0.37, 0));
  WellExpansion wx2 = well_reduce(shifted, 6, 4);
  CHECK(wx2.levels[0].coeff.at(2) ==
        doctest::Approx(wx.levels[0].coeff.at(2) + 0.37));
}

TEST_CASE("well_reduce: quartic correction against the 1D oracle") {
  // Symbol 1 + y^2 + eta^2 + y^4 with (y, eta) = (w1, w2).
  Jet sym(2, 0, GradeBound{8, 8});
  sym.add_term(MultiIndex{}, C(1, 0));
  MultiIndex m1, m2, m4;
  m1.w[0] = 2;
  m2.w[1] = 2;
  m4.w[0] = 4;
  sym.add_term(m1, C(1, 0));
  sym.add_term(m2, C(1, 0));
  sym.add_term(m4, C(1, 0));

  WellExpansion wx = well_reduce(sym, 6, 3);
  // First-order shifts of the pure quartic: <m| y^4 |m> = (3/4)(2m^2+2m+1).
  CHECK(wx.levels[0].coeff.at(4) == doctest::Approx(0.75).epsilon(1e-10));
  CHECK(wx.levels[1].coeff.at(4) == doctest::Approx(15.0 / 4.0).epsilon(1e-10));

  // Independent check: dense 1D discretization of -hbar^2 d^2 + y^2 + y^4.
  auto V = [](double y) { return 1.0 + y * y + y * y * y * y; };
  for (double hbar : {0.02, 0.01}) {
    auto ev = oscillator_1d(V, hbar, 2.0, 3000, 2);
    for (int j = 0; j < 2; ++j) {
      double series = 0;
      for (auto& [k, c] : wx.levels[j].coeff) series += c * std::pow(hbar, k / 2.0);
      // Residual must be at the next order in hbar (k = 6 -> hbar^3).
      CHECK(std::abs(ev[j] - series) < 20.0 * hbar * hbar * hbar);
    }
  }
}

TEST_CASE("well_reduce: parity symmetry kills odd coefficients") {
  // w -> -w symmetric symbol with asymmetric-looking quartic terms.
  Jet sym(2, 0, GradeBound{8, 8});
  sym.add_term(MultiIndex{}, C(2, 0));
  MultiIndex m1, m2, mc, m4;
  m1.w[0] = 2;
  m2.w[1] = 2;
  mc.w[0] = 1;
  mc.w[1] = 1;
  m4.w[0] = 2;
  m4.w[1] = 2;
  sym.add_term(m1, C(1.3, 0));
  sym.add_term(m2, C(0.8, 0));
  sym.add_term(mc, C(0.2, 0));
  sym.add_term(m4, C(0.5, 0));
  WellExpansion wx = well_reduce(sym, 5, 2);
  for (auto& lev : wx.levels)
    for (auto& [k, c] : lev.coeff) CHECK(k % 2 == 0);
}

TEST_CASE("well_reduce rejects resonant frequencies and moving minima") {
  Jet sym(4, 0, GradeBound{6, 6});
  sym.add_term(MultiIndex{}, C(1, 0));
  for (int i = 0; i < 4; ++i) {
    MultiIndex m;
    m.w[i] = 2;
    sym.add_term(m, C(i < 2 ? 1.0 : 2.0, 0));  // nu = (1, 2): resonant
  }
  CHECK_THROWS_AS(well_reduce(sym, 4, 2), std::runtime_error);

  Jet grad(2, 0, GradeBound{6, 6});
  grad.add_term(MultiIndex{}, C(1, 0));
  MultiIndex lin;
  lin.w[0] = 1;
  grad.add_term(lin, C(0.1, 0));
  CHECK_THROWS_AS(well_reduce(grad, 4, 2), std::invalid_argument);
}
