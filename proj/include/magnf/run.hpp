#pragma once

// Pipeline orchestration shared by the CLI and the test suites: each command
// materializes the stages it needs, writes deterministic CSV/JSON artifacts
// into the output directory, and returns a process exit code
// (0 ok, 2 config error, 3 numerical failure, 4 assumption failure).

#include <optional>
#include <ostream>
#include <string>

#include "magnf/birkhoff.hpp"
#include "magnf/classical.hpp"
#include "magnf/config.hpp"
#include "magnf/oracle.hpp"
#include "magnf/spectral.hpp"

namespace magnf {

struct RunOptions {
  bool dump_jets = false;
  bool dump_matrix = false;
  int threads = 1;
};

/// Lazily built pipeline stages; later commands reuse earlier results.
class RunContext {
 public:
  RunContext(RunConfig cfg, RunOptions opt, std::ostream& log)
      : cfg_(std::move(cfg)), opt_(opt), log_(log) {}

  const RunConfig& cfg() const { return cfg_; }
  const RunOptions& opt() const { return opt_; }
  std::ostream& log() { return log_; }

  const MagneticSystem& system();
  const WellData& well();
  const TubularMap& tubular();
  const HamiltonianJet& hamiltonian();
  const NormalFormResult& normal_form();
  const SpectralPrediction& prediction();
  const std::vector<SweepRow>& sweep();

 private:
  RunConfig cfg_;
  RunOptions opt_;
  std::ostream& log_;
  std::optional<MagneticSystem> sys_;
  std::optional<WellData> well_;
  std::optional<TubularMap> tub_;
  std::optional<HamiltonianJet> ham_;
  std::optional<NormalFormResult> nf_;
  std::optional<SpectralPrediction> pred_;
  std::optional<std::vector<SweepRow>> sweep_;
};

int cmd_analyze(RunContext& ctx);
int cmd_reduce(RunContext& ctx);
int cmd_normal_form(RunContext& ctx);
int cmd_predict(RunContext& ctx);
int cmd_oracle(RunContext& ctx);
int cmd_compare(RunContext& ctx);
int cmd_weyl(RunContext& ctx);

/// Dispatch by name; maps exceptions to exit codes.
int run_command(const std::string& name, const RunConfig& cfg,
                const RunOptions& opt, std::ostream& log);

/// Fixed-format float for byte-identical CSV output.
std::string csv_number(double v);

}  // namespace magnf
