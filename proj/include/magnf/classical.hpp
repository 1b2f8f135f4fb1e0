#pragma once

// Classical reduction near the well: truncated jets of the Darboux chart for
// the field form, frames along the characteristic manifold, the corrected
// tubular map Phi with Phi* omega = omega0, and the reduced Hamiltonian
//   H(w,z) = sum_j beta_hat_j(w) |z_j|^2 + O(|z|^3).
//
// Conventions (used everywhere):
//   omega_{T*M}(V,V') = <P,Q'> - <P',Q>, matrix [[0,-I],[I,0]] in (q,p);
//   every canonical pair (y,eta) or (x,xi) carries the block [[0,1],[-1,0]];
//   w layout is interleaved pairs (y_1, eta_1, ..., y_{d/2}, eta_{d/2}).

#include <Eigen/Dense>
#include <vector>

#include "magnf/field.hpp"
#include "magnf/jet.hpp"

namespace magnf {

using JetMatrix = std::vector<std::vector<Jet>>;
using JetVector = std::vector<Jet>;

/// Block-diagonal [[0,1],[-1,0]] over n_pairs canonical pairs.
Eigen::MatrixXd omega_pairs(int n_pairs);
/// Cotangent form matrix [[0,-I],[I,0]] in (q,p) block order.
Eigen::MatrixXd omega_cotangent(int d);

/// Exact polynomial jet of |p - A(q)|^2 recentered at (center, A(center)),
/// over 2d real variables (dq_1..dq_d, dp_1..dp_d).
Jet hamiltonian_jet(const MagneticSystem& sys, const Eigen::VectorXd& center,
                    int max_degree = -1);

/// Taylor jets of the frequencies beta_j(q) at q0 (variables dq, length d/2,
/// ascending at the base point), by degree-by-degree perturbation of the
/// skew eigenproblem.
std::vector<Jet> beta_jets(const MagneticSystem& sys, const Eigen::VectorXd& q0,
                           int order);

/// Frequency and frame jets along q near q0. e[j], f[j] are 2d-component
/// ambient vector fields over the d variables dq (constant extension in p).
struct FrameJetData {
  std::vector<Jet> beta;          // d/2 scalar jets
  std::vector<JetVector> e, f;    // d/2 fields, 2d components each
  SkewSpectrum base;              // frames at q0
};
FrameJetData frame_jets(const MagneticSystem& sys, const Eigen::VectorXd& q0,
                        int order, double gauge_rotation = 0.0);

/// Pointwise frames (e_j, f_j) in (Q,P) coordinates at q with the symplectic
/// normalization omega(e_i, f_j) = delta_ij.
struct SigmaFrames {
  std::vector<Eigen::VectorXd> e, f;  // 2d components
  std::vector<double> beta;
};
SigmaFrames sigma_frames(const MagneticSystem& sys, const Eigen::VectorXd& q,
                         double gauge_rotation = 0.0);

/// Truncated coordinate map with jet components; source variables are
/// (w_1..w_{dim_w}, pair slots in the real (x, xi) basis).
struct SymplecticJetMap {
  JetVector comp;
  int src_dim_w = 0;
  int src_pairs = 0;
};

/// Jacobian of the components with respect to all source variables,
/// columns ordered (w_1..w_dw, x_1, xi_1, ..., x_p, xi_p).
JetMatrix map_jacobian(const JetVector& comp, int dim_w, int pairs);

/// Pullback matrix D^T (F o m) D for a constant or jet-valued target form.
JetMatrix pullback_form(const JetVector& comp, int dim_w, int pairs,
                        const Eigen::MatrixXd& target_form);
JetMatrix pullback_form(const JetVector& comp, int dim_w, int pairs,
                        const JetMatrix& target_form_jets,
                        const Eigen::VectorXd& target_center);

double matrix_max_abs(const JetMatrix& m);

/// Darboux chart for the field form: psi = phi^{-1} maps w to q with
/// Dpsi^T (F o psi) Dpsi = omega_pairs(d/2) through w-degree order-1,
/// built by a degree-by-degree Moser iteration from the symplectic
/// normalization at q0. `variant` post-composes a fixed symplectic
/// polynomial map of the w chart (a genuinely different chart for the
/// invariance tests).
struct DarbouxChart {
  JetVector psi;            // w -> q, constant term q0
  JetVector phi;            // q -> w, compositional inverse of psi
  Eigen::MatrixXd linear;   // Dpsi(0)
  double residual = 0;      // final pullback defect
};
DarbouxChart darboux_jet(const MagneticSystem& sys, const WellData& well,
                         int order, int variant = 0);

struct TubularOptions {
  double gauge_rotation = 0.0;
  int darboux_variant = 0;
  double residual_tol = 1e-10;
};

/// Weinstein-corrected tubular map Phi: (w, z) -> (q, p) with
/// Phi(w, 0) = (psi(w), A(psi(w))), d_z Phi|_{z=0} = frames, and
/// Phi* omega = omega0 through the build order.
struct TubularMap {
  SymplecticJetMap map;       // 2d components over (d w-vars, d/2 pairs)
  DarbouxChart chart;
  double symplectic_residual = 0;
};
TubularMap tubular_map_jet(const MagneticSystem& sys, const WellData& well,
                           const DarbouxChart& chart, GradeBound bound,
                           const TubularOptions& opt = {});

/// Reduced Hamiltonian jet in (w, z, zbar): no z-constant or z-linear part,
/// z-quadratic part exactly sum_j beta_hat_j(w) |z_j|^2.
struct HamiltonianJet {
  Jet jet;                     // complex basis, hbar-free
  std::vector<Jet> beta_hat;   // w-only jets embedded in the (w,z) space
  GradeBound order;
  double structure_residual = 0;  // largest dropped forbidden coefficient
  double symplectic_residual = 0;
};
HamiltonianJet reduce_hamiltonian(const MagneticSystem& sys, const WellData& well,
                                  GradeBound bound, const TubularOptions& opt = {});

/// Same reduction from an already-built tubular map.
HamiltonianJet reduce_from_map(const MagneticSystem& sys, const WellData& well,
                               const TubularMap& tub, GradeBound bound);

// Exposed for tests: homotopy primitives and map helpers.
JetVector poincare_primitive_full(const JetMatrix& E2form, int dim_w);
JetVector poincare_primitive_vertical(const JetMatrix& E2form, int dim_w, int pairs);
JetMatrix one_form_d(const JetVector& lambda, int dim_w, int pairs);
JetVector map_inverse(const JetVector& psi, int order);
JetVector compose_all(const JetVector& comps, const JetMapT<std::complex<double>>& inner);

}  // namespace magnf
