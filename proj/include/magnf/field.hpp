#pragma once

// Magnetic field model on Euclidean R^d (d even): polynomial vector
// potential, field matrices, pointwise frequencies and frames, the magnetic
// intensity b(q) and its well, and the assumption checks.

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "magnf/jet.hpp"

namespace magnf {

/// Skew-symmetric operator matrix of the field at a point.
using FieldMatrix = Eigen::MatrixXd;

/// Orthonormal frame pair (u_j, v_j) of one invariant plane.
struct FramePair {
  Eigen::VectorXd u, v;
};

struct SkewSpectrum {
  std::vector<double> beta;       // ascending, positive
  std::vector<FramePair> frames;  // B u_j = -beta_j v_j, B v_j = beta_j u_j
};

/// Sentinel meaning "no resonance found below the cap".
inline constexpr int kNoResonance = -1;

struct WellData {
  Eigen::VectorXd q0;
  double b0 = 0;
  std::vector<double> beta;  // frequencies at q0, ascending
  std::vector<FramePair> frames;
  Eigen::MatrixXd hess_b;
  int r0 = kNoResonance;  // kNoResonance means r0 > resonance cap
  int resonance_cap = 0;
};

struct AssumptionCheck {
  std::string name;
  bool pass = false;
  double margin = 0;  // measured quantity backing the verdict
  std::string note;
};

struct AssumptionReport {
  std::vector<AssumptionCheck> checks;
  bool all_pass() const {
    for (auto& c : checks)
      if (!c.pass) return false;
    return true;
  }
};

/// Problem definition: dimension, polynomial potential, computation box.
/// The curl jets F_ij = d_i A_j - d_j A_i are exact polynomials.
class MagneticSystem {
 public:
  MagneticSystem(int dim, std::vector<Jet> potential,
                 Eigen::VectorXd box_half_widths);

  int dim() const { return d_; }
  const Eigen::VectorXd& box_half_widths() const { return box_; }
  const Jet& potential(int i) const { return A_[i]; }
  const std::vector<Jet>& potential() const { return A_; }
  /// Curl component F_ij = d_i A_j - d_j A_i as an exact polynomial jet.
  const Jet& curl(int i, int j) const { return curl_[i][j]; }

  /// 2-form matrix F(q) with F_ij = d_i A_j - d_j A_i.
  Eigen::MatrixXd form_matrix_at(const Eigen::VectorXd& q) const;
  /// Potential value A(q).
  Eigen::VectorXd potential_at(const Eigen::VectorXd& q) const;
  bool inside_box(const Eigen::VectorXd& q, double shrink = 0.0) const;

 private:
  int d_;
  std::vector<Jet> A_;
  Eigen::VectorXd box_;
  std::vector<std::vector<Jet>> curl_;
};

/// Build a pure-w polynomial jet over `dim` variables from (coeff, powers)
/// terms; the bound is sized to the actual degree so arithmetic stays exact.
Jet make_polynomial(int dim, const std::vector<std::pair<double, std::vector<int>>>& terms);

double eval_real(const Jet& a, const Eigen::VectorXd& q);

/// Operator matrix of the field at q (skew-symmetric); the 2-form matrix is
/// its transpose under the Euclidean metric.
FieldMatrix magnetic_matrix(const MagneticSystem& sys, const Eigen::VectorXd& q);

/// Frequencies and frames of a skew-symmetric invertible matrix. The gauge is
/// deterministic: u_j is phase-rotated so its first significant coordinate is
/// positive, then v_j is forced; gauge_rotation applies an extra rotation in
/// each (u_j, v_j) plane (used by invariance tests).
SkewSpectrum skew_frequencies(const FieldMatrix& M, bool validate = true,
                              double gauge_rotation = 0.0);

/// Magnetic intensity b(q) = half the sum of singular values of the field
/// matrix; defined even at frequency crossings.
double intensity(const MagneticSystem& sys, const Eigen::VectorXd& q);

struct WellOptions {
  double tol = 1e-10;          // gradient norm target
  int max_iter = 200;
  double fd_grad_step = 1e-4;  // central differences
  double fd_hess_step = 1e-3;
  int resonance_cap = 12;
  double resonance_tol = 1e-9;
  double gauge_rotation = 0.0;
};

/// Newton/trust-region minimization of the intensity from q_init; validates
/// the well assumptions and returns the fully populated well description.
WellData find_well(const MagneticSystem& sys, const Eigen::VectorXd& q_init,
                   const WellOptions& opt = {});

/// Minimal |alpha|_1 over integer vectors with 0 < |alpha|_1 <= cap such that
/// |<alpha, beta>| < tol * |beta|; kNoResonance when none exists.
int resonance_order(const std::vector<double>& beta, int cap, double tol);

/// Aggregated assumption checks with measured margins. b_tilde1 is the energy
/// ceiling whose sublevel set must stay inside the box.
AssumptionReport validate_assumptions(const MagneticSystem& sys,
                                      const WellData& well, double b_tilde1);

}  // namespace magnf
