#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "magnf/spectral.hpp"
#include "test_systems.hpp"

using namespace magnf;
using test::block4_flat_system;
using test::cubic_system;
using test::landau_system;
using C = std::complex<double>;

namespace {

NormalFormResult reference_nf(const MagneticSystem& sys,
                              const Eigen::VectorXd& qi, int r,
                              TubularOptions topt = {}) {
  WellData well = find_well(sys, qi, [&] {
    WellOptions o;
    o.gauge_rotation = topt.gauge_rotation;
    return o;
  }());
  HamiltonianJet ham = reduce_hamiltonian(sys, well, GradeBound{r, r}, topt);
  return birkhoff_reduce(ham.jet, ham.beta_hat, r);
}

}  // namespace

TEST_CASE("band symbol: flat band, substitution, excited index") {
  // Constant unit field: kappa vanishes and F^(0) = hbar exactly.
  MagneticSystem lan = landau_system();
  WellData wl;
  wl.q0 = Eigen::Vector2d(0, 0);
  wl.b0 = 1.0;
  SkewSpectrum sp = skew_frequencies(magnetic_matrix(lan, wl.q0));
  wl.beta = sp.beta;
  wl.frames = sp.frames;
  HamiltonianJet hh = reduce_hamiltonian(lan, wl, GradeBound{4, 4});
  NormalFormResult nf = birkhoff_reduce(hh.jet, hh.beta_hat, 4);
  CHECK(nf.kappa.empty());
  BandSymbol F0 = band_symbol(nf, {0});
  MultiIndex mh;
  mh.l = 1;
  CHECK(std::abs(F0.symbol.coeff(mh) - C(1, 0)) < 1e-12);
  CHECK(F0.symbol.size() == 1);

  // n = (1): the hbar-linear part is 3 beta_hat(w).
  BandSymbol F1 = band_symbol(nf, {1});
  CHECK(std::abs(F1.symbol.coeff(mh) - C(3, 0)) < 1e-12);

  // Cubic field: F^(0) equals the independent substitution of the table.
  MagneticSystem cub = cubic_system();
  NormalFormResult nfc = reference_nf(cub, Eigen::Vector2d(0.3, -0.2), 4);
  BandSymbol Fc = band_symbol(nfc, {0});
  Jet expect(2, 0, Fc.symbol.bound());
  for (auto& [m, v] : nfc.beta_hat[0].terms()) {
    MultiIndex n;
    n.w = m.w;
    n.l = 1;
    expect.add_term(n, v);
  }
  for (auto& e : nfc.fstar) {
    int msum = 0;
    for (int x : e.m) msum += x;
    for (auto& [m, v] : e.coeff.terms()) {
      MultiIndex n;
      n.w = m.w;
      n.l = int8_t(m.l + e.l + msum);
      expect.add_term(n, v);
    }
  }
  CHECK(max_coeff_diff(Fc.symbol, expect) < 1e-12);
}

TEST_CASE("band floors and enumeration") {
  CHECK(band_floor(1.0, {0, 0}, 1.0) == doctest::Approx(1.0));
  auto bands = enumerate_bands(1.0, 1.0, 3.0, 2);
  // |n| <= 2 in two indices: 6 bands.
  CHECK(bands.size() == 6);

  // 4D flat field: the floor set contains every truly contributing band,
  // and the extra bands have empty sublevel sets.
  MagneticSystem b4 = block4_flat_system();
  const double s2 = std::sqrt(2.0);
  const double b0 = 1 + s2, b1 = 3 * (1 + s2);
  const double c = band_floor_margin(b4);
  CHECK(c == doctest::Approx(2.0).epsilon(1e-6));
  auto floor_set = enumerate_bands(b0, c, b1, 2);
  std::vector<std::vector<int>> truth;
  for (int n1 = 0; n1 < 8; ++n1)
    for (int n2 = 0; n2 < 8; ++n2)
      if ((2 * n1 + 1) * 1.0 + (2 * n2 + 1) * s2 <= b1)
        truth.push_back({n1, n2});
  for (auto& n : truth)
    CHECK(std::find(floor_set.begin(), floor_set.end(), n) != floor_set.end());
}

TEST_CASE("harmonic levels") {
  auto l1 = harmonic_levels({1.0}, 4);
  REQUIRE(l1.size() >= 4);
  for (int j = 0; j < 4; ++j) {
    CHECK(l1[j].energy == doctest::Approx(2 * j + 1));
    CHECK(l1[j].multiplicity == 1);
  }

  const double s2 = std::sqrt(2.0);
  auto l2 = harmonic_levels({1.0, s2}, 3);
  CHECK(l2[0].energy == doctest::Approx(1 + s2));
  CHECK(l2[1].energy == doctest::Approx(3 + s2));
  CHECK(l2[2].energy == doctest::Approx(1 + 3 * s2));

  auto l3 = harmonic_levels({1.0, 1.0}, 6);
  CHECK(l3[0].energy == doctest::Approx(2));
  CHECK(l3[0].multiplicity == 1);
  CHECK(l3[1].energy == doctest::Approx(4));
  CHECK(l3[1].multiplicity == 2);
  CHECK(l3[2].energy == doctest::Approx(6));
  CHECK(l3[2].multiplicity == 3);
}

TEST_CASE("predictions: structure, gap law, degenerate flat case") {
  MagneticSystem cub = cubic_system();
  NormalFormResult nf = reference_nf(cub, Eigen::Vector2d(0.3, -0.2), 5);
  SpectralPrediction pred = predict_eigenvalues(nf, 4);
  CHECK(pred.b0 == doctest::Approx(1.0));
  REQUIRE(pred.nu.size() == 1);
  CHECK(pred.nu[0] == doctest::Approx(1.0).epsilon(1e-8));
  REQUIRE(pred.levels.size() == 4);
  for (std::size_t j = 0; j < pred.levels.size(); ++j) {
    CHECK(pred.levels[j].coeff.at(2) == doctest::Approx(1.0));  // b0
    CHECK(pred.levels[j].coeff.at(4) ==
          doctest::Approx(pred.levels[j].harmonic_energy + pred.c0));
  }
  // Gap law at order hbar^2: independent of c0.
  CHECK(pred.levels[1].coeff.at(4) - pred.levels[0].coeff.at(4) ==
        doctest::Approx(2.0 * pred.nu[0]).epsilon(1e-8));

  // Flat Landau band: the well is degenerate and the predictor reports it.
  MagneticSystem lan = landau_system();
  WellData wl;
  wl.q0 = Eigen::Vector2d(0, 0);
  wl.b0 = 1.0;
  SkewSpectrum sp = skew_frequencies(magnetic_matrix(lan, wl.q0));
  wl.beta = sp.beta;
  wl.frames = sp.frames;
  HamiltonianJet hh = reduce_hamiltonian(lan, wl, GradeBound{4, 4});
  NormalFormResult nfl = birkhoff_reduce(hh.jet, hh.beta_hat, 4);
  CHECK_THROWS(predict_eigenvalues(nfl, 2));
}

TEST_CASE("chart and gauge invariance of the prediction coefficients") {
  MagneticSystem cub = cubic_system();
  NormalFormResult nf0 = reference_nf(cub, Eigen::Vector2d(0.3, -0.2), 5);
  SpectralPrediction p0 = predict_eigenvalues(nf0, 3);

  TubularOptions alt;
  alt.gauge_rotation = 0.4;
  alt.darboux_variant = 1;
  NormalFormResult nf1 = reference_nf(cub, Eigen::Vector2d(0.3, -0.2), 5, alt);
  SpectralPrediction p1 = predict_eigenvalues(nf1, 3);

  CHECK(p0.b0 == doctest::Approx(p1.b0).epsilon(1e-10));
  CHECK(p0.c0 == doctest::Approx(p1.c0).epsilon(1e-8));
  for (int j = 0; j < 3; ++j) {
    CHECK(p0.levels[j].coeff.at(2) ==
          doctest::Approx(p1.levels[j].coeff.at(2)).epsilon(1e-9));
    CHECK(std::abs(p0.levels[j].coeff.at(4) - p1.levels[j].coeff.at(4)) < 1e-8);
  }

  // A gauge-shifted potential gives the same predictions coefficientwise.
  Jet chi = make_polynomial(2, {{0.7, {1, 1}}, {0.3, {2, 1}}});
  std::vector<Jet> A2;
  for (int i = 0; i < 2; ++i) {
    GradeBound b{0, 8};
    A2.push_back(rebound(cub.potential(i), b) +
                 rebound(derivative(chi, Var::W, i), b));
  }
  MagneticSystem gauged(2, A2, cub.box_half_widths());
  NormalFormResult nfg = reference_nf(gauged, Eigen::Vector2d(0.3, -0.2), 5);
  SpectralPrediction pg = predict_eigenvalues(nfg, 3);
  for (int j = 0; j < 3; ++j)
    for (auto& [k, c] : p0.levels[j].coeff)
      CHECK(std::abs(pg.levels[j].coeff.at(k) - c) < 1e-9);
}

TEST_CASE("weyl count: closed-form reference, edge cases, convergence") {
  MagneticSystem cub = cubic_system();
  WellData well = find_well(cub, Eigen::Vector2d(0.3, -0.2));

  // b = 1 + r^2, b1 = 3: integral over {b <= 3} of b is 4 pi; only n = 0
  // contributes, and the count is 2/hbar.
  const double hbar = 0.05;
  WeylOptions opt;
  opt.grid_per_axis = 400;
  WeylCount wc = weyl_count(cub, well, 3.0, hbar, opt);
  CHECK(wc.total == doctest::Approx(2.0 / hbar).epsilon(0.01));
  double n0_integral = 0;
  for (auto& row : wc.bands) {
    if (row.n == std::vector<int>{0})
      n0_integral = row.integral;
    else
      CHECK(row.integral == doctest::Approx(0.0).epsilon(1e-12));
  }
  CHECK(n0_integral == doctest::Approx(4.0 * M_PI).epsilon(0.01));

  // Below the bottom of the well the count is empty.
  WeylCount none = weyl_count(cub, well, 0.5, hbar, opt);
  CHECK(none.total == 0.0);

  // Monotone in b1.
  WeylCount less = weyl_count(cub, well, 2.0, hbar, opt);
  CHECK(less.total <= wc.total);

  // Grid refinement changes the value by less than half a percent.
  WeylOptions fine;
  fine.grid_per_axis = 800;
  WeylCount wf = weyl_count(cub, well, 3.0, hbar, fine);
  CHECK(std::abs(wf.total - wc.total) / wf.total < 0.005);
}
