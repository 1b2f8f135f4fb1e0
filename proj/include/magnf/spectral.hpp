#pragma once

// Spectral predictions assembled from the normal-form data: band symbols,
// band floors, harmonic level enumeration, eigenvalue expansions in powers
// of hbar^{1/2}, and Weyl counts by sublevel-set quadrature.

#include <Eigen/Dense>
#include <map>
#include <vector>

#include "magnf/birkhoff.hpp"
#include "magnf/classical.hpp"
#include "magnf/field.hpp"
#include "magnf/jet.hpp"

namespace magnf {

struct BandSymbol {
  std::vector<int> n;
  Jet symbol;  // jet in (w, hbar) over d w-variables
};

/// F^{(n)}(w) = hbar sum_j beta_hat_j(w) (2 n_j + 1) + fstar(w, hbar(2n+1), hbar).
BandSymbol band_symbol(const NormalFormResult& nf, const std::vector<int>& n);

/// Lower bound b0 + c |n| for the n-th band; c comes from the frequency
/// margin on the domain.
double band_floor(double b0, const std::vector<int>& n, double c);

/// Frequency margin: 2 * min_j min_box beta_j on a coarse grid.
double band_floor_margin(const MagneticSystem& sys, int grid_per_axis = 15);

/// All n with band_floor(b0, n, c) <= b1.
std::vector<std::vector<int>> enumerate_bands(double b0, double c, double b1,
                                              int half);

struct HarmonicLevel {
  double energy = 0;
  int multiplicity = 0;
  std::vector<std::vector<int>> m;  // contributing indices
};

/// Levels E = sum_j (2 m_j + 1) nu_j sorted ascending, grouped at 1e-12,
/// covering at least N states counted with multiplicity.
std::vector<HarmonicLevel> harmonic_levels(const std::vector<double>& nu, int N);

struct PredictedLevel {
  std::vector<int> m;           // well quantum numbers (lowest band)
  std::map<int, double> coeff;  // k -> c_{j,k}, lambda_j = sum c_{j,k} hbar^{k/2}
  double harmonic_energy = 0;   // E_j
};

struct SpectralPrediction {
  double b0 = 0;
  double c0 = 0;  // hbar-linear w-constant part of F^(0)/hbar at the well
  bool c0_includes_quantization_remainder = false;
  std::vector<double> nu;
  std::vector<PredictedLevel> levels;  // j = 1.. ordering
  int max_k = 0;  // coefficients are computed for k <= max_k
  /// lambda_j(hbar) evaluated from the table through k <= kmax.
  double eval(int j, double hbar, int kmax) const;
};

struct PredictOptions {
  int order = 4;  // second-stage truncation (phase degree)
};

/// Eigenvalue expansions of the first N levels from the lowest band:
/// lambda_j = hbar b0 + hbar^2 (E_j + c0) + higher integer powers; odd
/// half-powers vanish for non-resonant well frequencies and are reported
/// as absent.
SpectralPrediction predict_eigenvalues(const NormalFormResult& nf, int N,
                                       const PredictOptions& opt = {});

struct WeylBandRow {
  std::vector<int> n;
  double integral = 0;      // int_{b^[n] <= b1} prod beta_j dq
  double contribution = 0;  // integral / (2 pi hbar)^{d/2}
};

struct WeylCount {
  double total = 0;
  std::vector<WeylBandRow> bands;
  double b1 = 0, hbar = 0;
};

struct WeylOptions {
  int grid_per_axis = 400;
  double floor_margin = 0;  // 0: compute via band_floor_margin
};

/// Predicted counting function via per-band sublevel quadrature
/// (midpoint rule, deterministic).
WeylCount weyl_count(const MagneticSystem& sys, const WellData& well, double b1,
                     double hbar, const WeylOptions& opt = {});

}  // namespace magnf
