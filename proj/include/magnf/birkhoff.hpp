#pragma once

// Formal Birkhoff normal form: degree-by-degree homological solving in the
// jet algebra, rewriting of the resonant part in star powers of the harmonic
// actions, Williamson normalization of positive quadratic forms, and the
// second-stage normal form in the w variables.

#include <Eigen/Dense>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "magnf/jet.hpp"

namespace magnf {

/// Raised by the homological division when <alpha - gamma, beta(0)> is below
/// the resonance tolerance; carries the offending integer vector.
class ResonanceError : public std::runtime_error {
 public:
  ResonanceError(std::vector<int> delta, double divisor, std::string msg)
      : std::runtime_error(std::move(msg)), delta_(std::move(delta)),
        divisor_(divisor) {}
  const std::vector<int>& delta() const { return delta_; }
  double divisor() const { return divisor_; }

 private:
  std::vector<int> delta_;
  double divisor_;
};

/// One resonant coefficient c(w) on (|z_1|^2)^{* m_1} ... hbar^l.
struct FStarEntry {
  int l = 0;
  std::vector<int> m;
  Jet coeff;  // z-free jet
};

struct NormalFormResult {
  Jet tau;    // generating series, phase valuation >= 3
  Jet kappa;  // resonant part (alpha == gamma monomials only)
  Jet rho;    // remainder, phase valuation >= r
  int r = 0;
  std::vector<FStarEntry> fstar;
  std::vector<Jet> beta_hat;
  double split_dust = 0;  // dropped off-structure residue (diagnostic)
};

struct WilliamsonResult {
  std::vector<double> nu;    // ascending, positive
  Eigen::MatrixXd linear_map;  // symplectic for the pair blocks
};

/// Resonant projection of a jet: keeps exactly the alpha == gamma monomials.
std::pair<Jet, Jet> resonant_split(const Jet& a);

/// Diagonal action T(c(w) z^a zbar^g hbar^l) = <a-g, beta_hat(w)> c(w) ...,
/// the operator the homological equation inverts.
Jet t_action(const std::vector<Jet>& beta_hat, const Jet& a);

/// Solve T(tau') = offres by dividing each monomial class by the w-jet
/// <alpha-gamma, beta_hat(w)>; rejects alpha == gamma input and divisors with
/// near-zero constant term (resonance).
Jet homological_solve(const Jet& offres, const std::vector<Jet>& beta_hat,
                      double tol = 1e-9);

/// Full normal form at truncation order r: returns tau, kappa, rho with
/// exp_ad(tau, symbol) = H0 + kappa + rho within the bound, kappa resonant,
/// rho of phase valuation >= r. H0 is assembled from beta_hat.
NormalFormResult birkhoff_reduce(const Jet& symbol,
                                 const std::vector<Jet>& beta_hat, int r,
                                 double resonance_tol = 1e-9);

/// Rewrite a resonant series sum c_{l,m}(w) |z|^{2m} hbar^l into star powers
/// of the actions; exact within the bound (triangular inversion).
std::vector<FStarEntry> star_rewrite(const Jet& kappa);

/// Expand an fstar table back through star products (round-trip check).
Jet star_expand(const std::vector<FStarEntry>& table, int dim_w, int pairs,
                GradeBound bound);

/// Symplectic normalization of a positive definite quadratic form Q (given as
/// the matrix of the form itself): nu_j are the positive imaginary parts of
/// the eigenvalues of J Q, and linear_map M satisfies M^T J M = J and
/// M^T Q M = diag(nu_1, nu_1, ..., nu_{d/2}, nu_{d/2}).
WilliamsonResult williamson(const Eigen::MatrixXd& Q);

/// Eigenvalue expansion of one harmonic level of the second-stage reduction.
struct WellLevel {
  std::vector<int> m;
  std::map<int, double> coeff;  // k -> coefficient of hbar^{k/2} in mu_m
  double energy = 0;            // E_m = sum (2 m_j + 1) nu_j
};

struct WellExpansion {
  double b0 = 0;
  WilliamsonResult normal;
  NormalFormResult nf;
  std::vector<WellLevel> levels;  // sorted by (energy, m)
  int order = 0;
};

/// Second-stage normal form of a symbol in (w, hbar) with a nondegenerate
/// minimum at w = 0: Williamson-normalize, regrade the w variables as phase
/// variables, reduce, and read off the level expansions mu_m(hbar).
/// Half-integer powers of hbar vanish for non-resonant nu and are reported
/// as absent entries.
WellExpansion well_reduce(const Jet& band_symbol, int order, int max_level_sum,
                          double resonance_tol = 1e-9);

}  // namespace magnf
