#pragma once

// Run configuration: JSON ingestion with full validation, bundled presets,
// and the deterministic config hash embedded in every output.

#include <json.hpp>
#include <memory>
#include <string>
#include <vector>

#include "magnf/field.hpp"

namespace magnf {

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(std::vector<std::string> violations)
      : std::runtime_error(join(violations)), violations_(std::move(violations)) {}
  const std::vector<std::string>& violations() const { return violations_; }

 private:
  static std::string join(const std::vector<std::string>& v) {
    std::string s = "invalid configuration:";
    for (auto& x : v) s += "\n  - " + x;
    return s;
  }
  std::vector<std::string> violations_;
};

struct RunConfig {
  // system
  int dimension = 2;
  std::vector<Jet> potential;
  Eigen::VectorXd box_half_widths;
  // truncation
  int z_order = 4;
  int w_order = 4;
  int r = 4;
  // well search
  Eigen::VectorXd q_init;
  double well_tol = 1e-10;
  int resonance_cap = 12;
  double resonance_tol = 1e-9;
  // oracle
  std::vector<double> oracle_hbars;
  double grid_rule_c = 0.15;
  int oracle_n_min = 16;
  int oracle_n_max = 2000;
  int oracle_k = 6;
  double oracle_tol = 1e-8;
  std::uint64_t seed = 0x5eed1234abcdULL;
  // prediction
  int levels = 5;
  int order = 4;
  double b1 = 3.0;
  /// Optional declared hbar^2 symbol correction u: the normal form runs on
  /// the reduced Hamiltonian plus hbar^2 u (one record per monomial of u).
  struct CorrectionTerm {
    double re = 0, im = 0;
    std::vector<int> w, alpha, gamma;
    int l = 0;
  };
  std::vector<CorrectionTerm> hbar2_correction;
  // weyl
  int weyl_grid = 400;
  std::vector<double> weyl_hbars;
  // gauge / chart choices (invariance testing)
  double frame_rotation = 0.0;
  int darboux_variant = 0;
  // output
  std::string out_dir = "out";

  std::string hash;  // FNV-1a of the canonical JSON, hex

  MagneticSystem make_system() const {
    return MagneticSystem(dimension, potential, box_half_widths);
  }
  WellOptions well_options() const {
    WellOptions o;
    o.tol = well_tol;
    o.resonance_cap = resonance_cap;
    o.resonance_tol = resonance_tol;
    o.gauge_rotation = frame_rotation;
    return o;
  }
};

/// Parse and validate; throws ConfigError listing every violation.
RunConfig load_config(const nlohmann::json& j);
RunConfig load_config_file(const std::string& path);

/// Bundled reference configurations: "quadratic-well-2d", "landau",
/// "block-4d".
nlohmann::json preset_config(const std::string& name);
std::vector<std::string> preset_names();

std::string config_hash(const nlohmann::json& j);

}  // namespace magnf
