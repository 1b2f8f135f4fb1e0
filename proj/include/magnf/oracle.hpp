#pragma once

// Direct numerical spectrum of the magnetic Schrodinger operator on a
// Dirichlet box: Peierls link-phase discretization (gauge-covariant on the
// lattice) and a shift-invert Lanczos eigensolver for the lowest part of the
// spectrum.

#include <Eigen/Dense>
#include <Eigen/Sparse>
#include <complex>
#include <cstdint>
#include <vector>

#include "magnf/field.hpp"

namespace magnf {

enum class LinkRule : uint8_t { Midpoint, Trapezoid };

struct DiscretizationSpec {
  Eigen::VectorXd box_half;  // L per axis
  int points_per_axis = 64;  // n >= 16
  double hbar = 0.1;
  LinkRule gauge = LinkRule::Midpoint;
  std::uint64_t seed = 0x5eed1234abcdULL;
  double tol = 1e-8;
  int max_basis = 600;
  std::size_t max_unknowns = 600000;

  double grid_step(int axis) const {
    return 2.0 * box_half[axis] / (points_per_axis - 1);
  }
};

struct OracleSpectrum {
  DiscretizationSpec spec;
  std::vector<double> eigenvalues;  // ascending
  std::vector<double> residuals;    // ||Mv - lambda v|| / ||v|| per pair
  int iterations = 0;
};

using SparseHermitian = Eigen::SparseMatrix<std::complex<double>>;

/// Discrete magnetic Laplacian with Dirichlet boundary: hopping between
/// neighbors carries the phase exp(-(i/hbar) int A . dl) with the line
/// integral from the configured link rule; diagonal sum_mu 2 hbar^2/h_mu^2.
SparseHermitian build_operator(const MagneticSystem& sys,
                               const DiscretizationSpec& spec);

/// k eigenvalues of a Hermitian nonnegative matrix nearest `shift`
/// (the k smallest for shift = 0), by Lanczos on the shifted inverse with
/// full reorthogonalization. Deterministic for a fixed seed.
OracleSpectrum lowest_eigenvalues(const SparseHermitian& M, int k,
                                  const DiscretizationSpec& spec,
                                  double shift = 0.0);

/// Number of eigenvalues <= threshold, expanding the Lanczos basis until a
/// converged eigenvalue clears threshold * (1 + margin). `clustered` flags
/// eigenvalues within tol * threshold of the cut.
struct CountResult {
  int count = 0;
  bool clustered = false;
  std::vector<double> below;  // the eigenvalues counted
};
CountResult count_below(const SparseHermitian& M, const DiscretizationSpec& spec,
                        double threshold, double margin = 0.02);

struct SweepRow {
  double hbar = 0;
  int n_grid = 0;
  std::vector<double> eigenvalues;
  std::vector<double> residuals;
};

struct SweepOptions {
  double grid_rule_c = 0.15;  // h_grid <= c sqrt(hbar)
  int n_min = 16;
  int n_max = 2000;
  int k = 6;
};

/// Per-hbar spectra with the magnetic-length grid rule.
std::vector<SweepRow> hbar_sweep(const MagneticSystem& sys,
                                 const DiscretizationSpec& base,
                                 const std::vector<double>& hbars,
                                 const SweepOptions& opt);

struct FitResult {
  std::vector<double> coefficients;    // per requested half-power
  std::vector<double> standard_errors;
  double residual_exponent = 0;        // log-log slope of |residual| vs hbar
  double max_residual = 0;
};

/// Least-squares fit lambda(hbar) ~ sum_k c_k hbar^{k/2} over the requested
/// half-integer powers (k given as integers, power = k/2).
FitResult fit_expansion(const std::vector<double>& hbars,
                        const std::vector<double>& values,
                        const std::vector<int>& powers);

}  // namespace magnf
