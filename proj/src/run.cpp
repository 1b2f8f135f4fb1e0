#include "magnf/run.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>

#include "magnf/jet_io.hpp"
#include "magnf/version.hpp"

namespace magnf {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string header_line(const RunConfig& cfg) {
  return std::string("# magnf ") + kVersion + " config=" + cfg.hash;
}

std::ofstream open_out(const RunConfig& cfg, const std::string& name) {
  fs::create_directories(cfg.out_dir);
  std::ofstream out(fs::path(cfg.out_dir) / name);
  if (!out) throw std::runtime_error("cannot write output file: " + name);
  return out;
}

void write_json(const RunConfig& cfg, const std::string& name, json j) {
  j["tool_version"] = kVersion;
  j["config_hash"] = cfg.hash;
  j["seed"] = cfg.seed;
  auto out = open_out(cfg, name);
  out << j.dump(2) << "\n";
}

json report_to_json(const AssumptionReport& rep) {
  json checks = json::array();
  for (auto& c : rep.checks) {
    json e;
    e["name"] = c.name;
    e["pass"] = c.pass;
    e["margin"] = c.margin;
    e["note"] = c.note;
    checks.push_back(std::move(e));
  }
  json j;
  j["checks"] = std::move(checks);
  j["all_pass"] = rep.all_pass();
  return j;
}

int grid_points_for(const RunConfig& cfg, double hbar) {
  double Lmax = cfg.box_half_widths.maxCoeff();
  int n = static_cast<int>(std::ceil(2.0 * Lmax / (cfg.grid_rule_c * std::sqrt(hbar)))) + 1;
  return std::max(n, cfg.oracle_n_min);
}

}  // namespace

std::string csv_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12e", v);
  return buf;
}

const MagneticSystem& RunContext::system() {
  if (!sys_) sys_ = cfg_.make_system();
  return *sys_;
}

const WellData& RunContext::well() {
  if (!well_) well_ = find_well(system(), cfg_.q_init, cfg_.well_options());
  return *well_;
}

const TubularMap& RunContext::tubular() {
  if (!tub_) {
    DarbouxChart chart =
        darboux_jet(system(), well(), cfg_.w_order + 1, cfg_.darboux_variant);
    TubularOptions topt;
    topt.gauge_rotation = cfg_.frame_rotation;
    topt.darboux_variant = cfg_.darboux_variant;
    tub_ = tubular_map_jet(system(), well(), chart,
                           GradeBound{cfg_.z_order, cfg_.w_order}, topt);
  }
  return *tub_;
}

const HamiltonianJet& RunContext::hamiltonian() {
  if (!ham_)
    ham_ = reduce_from_map(system(), well(), tubular(),
                           GradeBound{cfg_.z_order, cfg_.w_order});
  return *ham_;
}

const NormalFormResult& RunContext::normal_form() {
  if (!nf_) {
    Jet symbol = hamiltonian().jet;
    if (!cfg_.hbar2_correction.empty()) {
      // Declared hbar^2 symbol correction u: reduce H + hbar^2 u.
      Jet u(symbol.dim_w(), symbol.pairs(), symbol.bound());
      for (auto& t : cfg_.hbar2_correction) {
        MultiIndex m;
        for (std::size_t i = 0; i < t.w.size(); ++i) m.w[i] = int8_t(t.w[i]);
        for (std::size_t i = 0; i < t.alpha.size(); ++i) m.a[i] = int8_t(t.alpha[i]);
        for (std::size_t i = 0; i < t.gamma.size(); ++i) m.g[i] = int8_t(t.gamma[i]);
        m.l = int8_t(t.l);
        u.add_term(m, std::complex<double>(t.re, t.im));
      }
      symbol += shift_hbar(u, 2);
    }
    nf_ = birkhoff_reduce(symbol, hamiltonian().beta_hat, cfg_.r,
                          cfg_.resonance_tol);
  }
  return *nf_;
}

const SpectralPrediction& RunContext::prediction() {
  if (!pred_) {
    PredictOptions popt;
    popt.order = cfg_.order;
    pred_ = predict_eigenvalues(normal_form(), cfg_.levels, popt);
  }
  return *pred_;
}

const std::vector<SweepRow>& RunContext::sweep() {
  if (!sweep_) {
    DiscretizationSpec base;
    base.box_half = cfg_.box_half_widths;
    base.hbar = cfg_.oracle_hbars.front();
    base.seed = cfg_.seed;
    base.tol = cfg_.oracle_tol;
    SweepOptions sopt;
    sopt.grid_rule_c = cfg_.grid_rule_c;
    sopt.n_min = cfg_.oracle_n_min;
    sopt.n_max = cfg_.oracle_n_max;
    sopt.k = cfg_.oracle_k;
    if (opt_.threads <= 1 || cfg_.oracle_hbars.size() <= 1) {
      sweep_ = hbar_sweep(system(), base, cfg_.oracle_hbars, sopt);
    } else {
      // Per-hbar tasks are independent; merge in input order.
      std::vector<std::future<std::vector<SweepRow>>> futs;
      for (double h : cfg_.oracle_hbars)
        futs.push_back(std::async(std::launch::async, [&, h] {
          return hbar_sweep(system(), base, {h}, sopt);
        }));
      std::vector<SweepRow> rows;
      for (auto& f : futs) {
        auto part = f.get();
        rows.insert(rows.end(), part.begin(), part.end());
      }
      sweep_ = std::move(rows);
    }
  }
  return *sweep_;
}

int cmd_analyze(RunContext& ctx) {
  const RunConfig& cfg = ctx.cfg();
  const MagneticSystem& sys = ctx.system();

  WellData well;
  bool well_ok = true;
  std::string well_error;
  try {
    well = ctx.well();
  } catch (const std::exception& e) {
    well_ok = false;
    well_error = e.what();
    // Degenerate configurations still get a report at the initial point.
    well.q0 = cfg.q_init;
    well.b0 = intensity(sys, cfg.q_init);
    well.hess_b = Eigen::MatrixXd::Zero(sys.dim(), sys.dim());
    try {
      SkewSpectrum sp = skew_frequencies(magnetic_matrix(sys, well.q0), false);
      well.beta = sp.beta;
      well.frames = sp.frames;
      well.r0 = resonance_order(well.beta, cfg.resonance_cap, cfg.resonance_tol);
      well.resonance_cap = cfg.resonance_cap;
    } catch (const std::exception&) {
    }
  }

  AssumptionReport rep = validate_assumptions(sys, well, cfg.b1);
  if (!well_ok)
    rep.checks.insert(rep.checks.begin(),
                      {"well_search", false, 0.0, well_error});

  json j;
  j["q0"] = std::vector<double>(well.q0.data(), well.q0.data() + well.q0.size());
  j["b0"] = well.b0;
  j["beta"] = well.beta;
  j["r0"] = well.r0;
  j["resonance_cap"] = well.resonance_cap;
  j["report"] = report_to_json(rep);
  write_json(cfg, "analyze.json", j);

  auto& log = ctx.log();
  log << "well at q0 = [";
  for (int i = 0; i < well.q0.size(); ++i) log << (i ? ", " : "") << well.q0[i];
  log << "], b0 = " << well.b0 << "\n";
  log << "frequencies:";
  for (double b : well.beta) log << " " << b;
  log << "\nresonance order: "
      << (well.r0 == kNoResonance ? "> cap" : std::to_string(well.r0)) << "\n";
  for (auto& c : rep.checks)
    log << (c.pass ? "  [pass] " : "  [FAIL] ") << c.name
        << "  margin=" << c.margin << "  (" << c.note << ")\n";
  return rep.all_pass() ? 0 : 4;
}

int cmd_reduce(RunContext& ctx) {
  const RunConfig& cfg = ctx.cfg();
  const HamiltonianJet& ham = ctx.hamiltonian();

  json j;
  j["symplectic_residual"] = ham.symplectic_residual;
  j["structure_residual"] = ham.structure_residual;
  json b0s = json::array();
  for (auto& b : ham.beta_hat) b0s.push_back(b.constant_term().real());
  j["beta_hat_at_0"] = std::move(b0s);
  j["terms"] = ham.jet.size();
  if (ctx.opt().dump_jets) {
    j["hamiltonian"] = to_json(ham.jet);
    json psi = json::array(), phi = json::array(), Phi = json::array();
    for (auto& c : ctx.tubular().chart.psi) psi.push_back(to_json(c));
    for (auto& c : ctx.tubular().chart.phi) phi.push_back(to_json(c));
    for (auto& c : ctx.tubular().map.comp) Phi.push_back(to_json(c));
    j["chart_psi"] = std::move(psi);
    j["chart_phi"] = std::move(phi);
    j["tubular_map"] = std::move(Phi);
  }
  write_json(cfg, "reduce.json", j);
  ctx.log() << "reduced Hamiltonian: " << ham.jet.size()
            << " terms, symplectic residual " << ham.symplectic_residual
            << ", structure residual " << ham.structure_residual << "\n";
  return 0;
}

int cmd_normal_form(RunContext& ctx) {
  const RunConfig& cfg = ctx.cfg();
  const NormalFormResult& nf = ctx.normal_form();

  // Independent reconstruction check of the normal form identity.
  Jet lhs = exp_ad(nf.tau, ctx.hamiltonian().jet);
  Jet H0(lhs.dim_w(), lhs.pairs(), lhs.bound());
  for (std::size_t jdx = 0; jdx < nf.beta_hat.size(); ++jdx) {
    Jet Ij(lhs.dim_w(), lhs.pairs(), lhs.bound());
    MultiIndex m;
    m.a[jdx] = 1;
    m.g[jdx] = 1;
    Ij.add_term(m, std::complex<double>(1, 0));
    H0 += nf.beta_hat[jdx] * Ij;
  }
  const double recon = max_coeff_diff(lhs, H0 + nf.kappa + nf.rho);

  json j;
  j["r"] = nf.r;
  j["reconstruction_residual"] = recon;
  j["kappa_terms"] = nf.kappa.size();
  j["rho_terms"] = nf.rho.size();
  json table = json::array();
  for (auto& e : nf.fstar) {
    json row;
    row["l"] = e.l;
    row["m"] = e.m;
    row["coeffs"] = to_json(e.coeff);
    table.push_back(std::move(row));
  }
  j["fstar"] = std::move(table);
  if (ctx.opt().dump_jets) {
    j["tau"] = to_json(nf.tau);
    j["kappa"] = to_json(nf.kappa);
    j["rho"] = to_json(nf.rho);
  }
  write_json(cfg, "normal_form.json", j);
  ctx.log() << "normal form at r=" << nf.r << ": reconstruction residual "
            << recon << ", fstar entries " << nf.fstar.size() << "\n";
  return recon < 1e-10 ? 0 : 3;
}

int cmd_predict(RunContext& ctx) {
  const RunConfig& cfg = ctx.cfg();
  const SpectralPrediction& pred = ctx.prediction();

  auto out = open_out(cfg, "predict.csv");
  out << header_line(cfg) << "\n";
  out << "j,k,coefficient\n";
  for (std::size_t j = 0; j < pred.levels.size(); ++j)
    for (auto& [k, c] : pred.levels[j].coeff)
      out << (j + 1) << "," << k << "," << csv_number(c) << "\n";

  json meta;
  meta["b0"] = pred.b0;
  meta["c0"] = pred.c0;
  meta["c0_includes_quantization_remainder"] =
      pred.c0_includes_quantization_remainder;
  meta["nu"] = pred.nu;
  meta["max_k"] = pred.max_k;
  write_json(cfg, "predict_meta.json", meta);
  ctx.log() << "predicted " << pred.levels.size() << " levels; b0=" << pred.b0
            << " c0=" << pred.c0 << " (quantization remainder not included)\n";
  return 0;
}

int cmd_oracle(RunContext& ctx) {
  const RunConfig& cfg = ctx.cfg();
  const auto& rows = ctx.sweep();

  auto out = open_out(cfg, "oracle.csv");
  out << header_line(cfg) << "\n";
  out << "hbar,n_grid,L,j,lambda,residual\n";
  for (auto& r : rows)
    for (std::size_t j = 0; j < r.eigenvalues.size(); ++j)
      out << csv_number(r.hbar) << "," << r.n_grid << ","
          << csv_number(cfg.box_half_widths.maxCoeff()) << "," << (j + 1) << ","
          << csv_number(r.eigenvalues[j]) << "," << csv_number(r.residuals[j])
          << "\n";

  if (ctx.opt().dump_matrix) {
    DiscretizationSpec spec;
    spec.box_half = cfg.box_half_widths;
    spec.hbar = cfg.oracle_hbars.front();
    spec.points_per_axis = grid_points_for(cfg, spec.hbar);
    spec.seed = cfg.seed;
    SparseHermitian M = build_operator(ctx.system(), spec);
    auto mout = open_out(cfg, "matrix.txt");
    mout << header_line(cfg) << "\n";
    for (int k = 0; k < M.outerSize(); ++k)
      for (SparseHermitian::InnerIterator it(M, k); it; ++it)
        mout << it.row() << " " << it.col() << " "
             << csv_number(it.value().real()) << " "
             << csv_number(it.value().imag()) << "\n";
  }
  ctx.log() << "oracle sweep: " << rows.size() << " hbar values\n";
  return 0;
}

int cmd_compare(RunContext& ctx) {
  const RunConfig& cfg = ctx.cfg();
  const SpectralPrediction& pred = ctx.prediction();
  const auto& rows = ctx.sweep();

  // The free c0 offset enters as delta hbar^2 for every level; fit it on the
  // ground level together with the order of the remaining tail.
  std::vector<double> hs, diff1;
  for (auto& r : rows)
    if (!r.eigenvalues.empty()) {
      hs.push_back(r.hbar);
      diff1.push_back(r.eigenvalues[0] - pred.eval(0, r.hbar, pred.max_k));
    }
  double delta = 0, expo = 0;
  if (hs.size() >= 3) {
    try {
      FitResult fr = fit_expansion(hs, diff1, {4});
      delta = fr.coefficients[0];
      expo = fr.residual_exponent;
    } catch (const std::exception& e) {
      ctx.log() << "offset fit skipped: " << e.what() << "\n";
    }
  } else if (!hs.empty()) {
    double num = 0, den = 0;
    for (std::size_t i = 0; i < hs.size(); ++i) {
      num += diff1[i] * hs[i] * hs[i];
      den += std::pow(hs[i], 4.0);
    }
    delta = den > 0 ? num / den : 0.0;
  }

  auto out = open_out(cfg, "compare.csv");
  out << header_line(cfg) << "\n";
  out << "hbar,j,lambda_oracle,lambda_predicted,lambda_predicted_offset,residual\n";
  for (auto& r : rows) {
    const std::size_t jmax = std::min(r.eigenvalues.size(), pred.levels.size());
    for (std::size_t j = 0; j < jmax; ++j) {
      const double lp = pred.eval(static_cast<int>(j), r.hbar, pred.max_k);
      const double lpo = lp + delta * r.hbar * r.hbar;
      out << csv_number(r.hbar) << "," << (j + 1) << ","
          << csv_number(r.eigenvalues[j]) << "," << csv_number(lp) << ","
          << csv_number(lpo) << "," << csv_number(r.eigenvalues[j] - lpo) << "\n";
    }
  }

  json j;
  j["c0_offset_fitted"] = delta;
  j["ground_residual_exponent"] = expo;
  write_json(cfg, "compare_summary.json", j);
  ctx.log() << "compare: fitted c0 offset " << delta
            << ", ground-level residual exponent " << expo << "\n";
  return 0;
}

int cmd_weyl(RunContext& ctx) {
  const RunConfig& cfg = ctx.cfg();
  const MagneticSystem& sys = ctx.system();
  const WellData& well = ctx.well();

  auto out = open_out(cfg, "weyl.csv");
  out << header_line(cfg) << "\n";
  out << "b1,hbar,predicted_count,oracle_count\n";
  auto bands_out = open_out(cfg, "weyl_bands.csv");
  bands_out << header_line(cfg) << "\n";
  bands_out << "b1,hbar,n,integral,contribution\n";

  for (double hb : cfg.weyl_hbars) {
    WeylOptions wopt;
    wopt.grid_per_axis = cfg.weyl_grid;
    WeylCount wc = weyl_count(sys, well, cfg.b1, hb, wopt);

    DiscretizationSpec spec;
    spec.box_half = cfg.box_half_widths;
    spec.hbar = hb;
    spec.points_per_axis = grid_points_for(cfg, hb);
    spec.seed = cfg.seed;
    spec.tol = cfg.oracle_tol;
    SparseHermitian M = build_operator(sys, spec);
    CountResult cr = count_below(M, spec, cfg.b1 * hb);

    out << csv_number(cfg.b1) << "," << csv_number(hb) << ","
        << csv_number(wc.total) << "," << cr.count << "\n";
    for (auto& row : wc.bands) {
      bands_out << csv_number(cfg.b1) << "," << csv_number(hb) << ",\"(";
      for (std::size_t i = 0; i < row.n.size(); ++i)
        bands_out << (i ? "," : "") << row.n[i];
      bands_out << ")\"," << csv_number(row.integral) << ","
                << csv_number(row.contribution) << "\n";
    }
    ctx.log() << "weyl at hbar=" << hb << ": predicted " << wc.total
              << ", oracle " << cr.count
              << (cr.clustered ? " (threshold clustering)" : "") << "\n";
  }
  return 0;
}

int run_command(const std::string& name, const RunConfig& cfg,
                const RunOptions& opt, std::ostream& log) {
  RunContext ctx(cfg, opt, log);
  try {
    if (name == "analyze") return cmd_analyze(ctx);
    if (name == "reduce") return cmd_reduce(ctx);
    if (name == "normal-form") return cmd_normal_form(ctx);
    if (name == "predict") return cmd_predict(ctx);
    if (name == "oracle") return cmd_oracle(ctx);
    if (name == "compare") return cmd_compare(ctx);
    if (name == "weyl") return cmd_weyl(ctx);
    log << "unknown command: " << name << "\n";
    return 2;
  } catch (const ConfigError& e) {
    log << e.what() << "\n";
    return 2;
  } catch (const std::invalid_argument& e) {
    log << "error: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    log << "error: " << e.what() << "\n";
    return 3;
  }
}

}  // namespace magnf
