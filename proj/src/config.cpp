#include "magnf/config.hpp"

#include <fstream>
#include <sstream>

namespace magnf {

namespace {

using nlohmann::json;

template <typename T>
T get_or(const json& j, const char* key, T def) {
  return j.contains(key) ? j.at(key).get<T>() : def;
}

}  // namespace

std::string config_hash(const json& j) {
  const std::string s = j.dump();
  std::uint64_t h = 1469598103934665603ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ULL;
  }
  std::ostringstream os;
  os << std::hex << h;
  return os.str();
}

RunConfig load_config(const json& j) {
  std::vector<std::string> bad;
  RunConfig c;
  c.hash = config_hash(j);

  if (!j.contains("system")) {
    bad.push_back("missing section: system");
  } else {
    const json& s = j.at("system");
    c.dimension = get_or(s, "dimension", 0);
    if (c.dimension < 2 || c.dimension % 2 != 0 || c.dimension > 8)
      bad.push_back("system.dimension must be even, >= 2 and <= 8");
    auto bh = get_or(s, "box_half_widths", std::vector<double>{});
    if (static_cast<int>(bh.size()) != c.dimension)
      bad.push_back("system.box_half_widths must have one entry per dimension");
    for (double v : bh)
      if (v <= 0) bad.push_back("system.box_half_widths entries must be positive");
    if (!s.contains("potential") ||
        static_cast<int>(s.at("potential").size()) != c.dimension) {
      bad.push_back("system.potential must list d component polynomials");
    } else if (bad.empty()) {
      c.box_half_widths = Eigen::Map<const Eigen::VectorXd>(bh.data(), bh.size());
      for (auto& comp : s.at("potential")) {
        std::vector<std::pair<double, std::vector<int>>> terms;
        for (auto& t : comp) {
          auto powers = t.at("powers").get<std::vector<int>>();
          if (static_cast<int>(powers.size()) != c.dimension) {
            bad.push_back("potential term powers must have d entries");
            continue;
          }
          for (int p : powers)
            if (p < 0) bad.push_back("potential powers must be nonnegative");
          terms.push_back({t.at("coeff").get<double>(), powers});
        }
        if (bad.empty()) c.potential.push_back(make_polynomial(c.dimension, terms));
      }
    }
  }

  const json t = j.value("truncation", json::object());
  c.z_order = get_or(t, "z_order", 4);
  c.w_order = get_or(t, "w_order", 4);
  c.r = get_or(t, "r", 4);
  if (c.r < 3) bad.push_back("truncation.r must be >= 3");
  if (c.z_order < c.r) bad.push_back("truncation.z_order must be >= r");
  if (c.w_order < 1) bad.push_back("truncation.w_order must be >= 1");

  const json w = j.value("well", json::object());
  auto qi = get_or(w, "q_init", std::vector<double>{});
  if (!qi.empty() && static_cast<int>(qi.size()) != c.dimension)
    bad.push_back("well.q_init must have d entries");
  if (qi.empty()) qi.assign(std::max(c.dimension, 0), 0.0);
  c.q_init = Eigen::Map<const Eigen::VectorXd>(qi.data(), qi.size());
  c.well_tol = get_or(w, "tol", 1e-10);
  c.resonance_cap = get_or(w, "resonance_cap", 2 * c.r);
  c.resonance_tol = get_or(w, "resonance_tol", 1e-9);
  if (c.resonance_cap < c.r)
    bad.push_back("well.resonance_cap must be >= truncation.r");

  const json o = j.value("oracle", json::object());
  c.oracle_hbars = get_or(o, "hbars", std::vector<double>{0.1});
  for (double h : c.oracle_hbars)
    if (h <= 0) bad.push_back("oracle.hbars must be positive");
  c.grid_rule_c = get_or(o, "grid_rule_c", 0.15);
  if (c.grid_rule_c <= 0) bad.push_back("oracle.grid_rule_c must be positive");
  c.oracle_n_min = get_or(o, "n_min", 16);
  c.oracle_n_max = get_or(o, "n_max", 2000);
  c.oracle_k = get_or(o, "k", 6);
  if (c.oracle_k < 1) bad.push_back("oracle.k must be >= 1");
  c.oracle_tol = get_or(o, "tol", 1e-8);
  c.seed = get_or(o, "seed", std::uint64_t{0x5eed1234abcdULL});

  const json p = j.value("prediction", json::object());
  c.levels = get_or(p, "levels", 5);
  if (c.levels < 1) bad.push_back("prediction.levels must be >= 1");
  c.order = get_or(p, "order", c.r);
  c.b1 = get_or(p, "b1", 3.0);
  if (p.contains("hbar2_correction")) {
    for (auto& t : p.at("hbar2_correction")) {
      RunConfig::CorrectionTerm ct;
      ct.re = get_or(t, "re", 0.0);
      ct.im = get_or(t, "im", 0.0);
      ct.w = get_or(t, "w", std::vector<int>(std::max(c.dimension, 0), 0));
      ct.alpha = get_or(t, "alpha", std::vector<int>(std::max(c.dimension / 2, 0), 0));
      ct.gamma = get_or(t, "gamma", std::vector<int>(std::max(c.dimension / 2, 0), 0));
      ct.l = get_or(t, "l", 0);
      if (static_cast<int>(ct.w.size()) != c.dimension ||
          static_cast<int>(ct.alpha.size()) != c.dimension / 2 ||
          static_cast<int>(ct.gamma.size()) != c.dimension / 2 || ct.l < 0)
        bad.push_back("prediction.hbar2_correction terms must match the dimension");
      else
        c.hbar2_correction.push_back(std::move(ct));
    }
  }

  const json wy = j.value("weyl", json::object());
  c.weyl_grid = get_or(wy, "grid_per_axis", 400);
  c.weyl_hbars = get_or(wy, "hbars", std::vector<double>{0.05});

  const json g = j.value("gauge", json::object());
  c.frame_rotation = get_or(g, "frame_rotation", 0.0);
  c.darboux_variant = get_or(g, "darboux_variant", 0);

  c.out_dir = get_or(j.value("output", json::object()), "dir", std::string("out"));

  if (!bad.empty()) throw ConfigError(std::move(bad));
  return c;
}

RunConfig load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError({"cannot open config file: " + path});
  json j;
  try {
    in >> j;
  } catch (const std::exception& e) {
    throw ConfigError({std::string("JSON parse error: ") + e.what()});
  }
  return load_config(j);
}

std::vector<std::string> preset_names() {
  return {"quadratic-well-2d", "landau", "block-4d"};
}

nlohmann::json preset_config(const std::string& name) {
  json j;
  auto term = [](double coeff, std::vector<int> powers) {
    json t;
    t["coeff"] = coeff;
    t["powers"] = powers;
    return t;
  };
  if (name == "quadratic-well-2d") {
    // A = (0, q1 + q1^3/3 + q1 q2^2): b(q) = 1 + |q|^2, well at the origin.
    j["system"]["dimension"] = 2;
    j["system"]["box_half_widths"] = {3.0, 3.0};
    j["system"]["potential"] = {
        json::array(),
        {term(1.0, {1, 0}), term(1.0 / 3.0, {3, 0}), term(1.0, {1, 2})}};
    j["truncation"] = {{"z_order", 4}, {"w_order", 4}, {"r", 4}};
    j["well"] = {{"q_init", {0.3, -0.2}}};
    j["oracle"] = {{"hbars", {0.1, 0.07, 0.05, 0.035, 0.025}},
                   {"grid_rule_c", 0.15},
                   {"k", 4}};
    j["prediction"] = {{"levels", 4}, {"order", 4}, {"b1", 3.0}};
    j["weyl"] = {{"grid_per_axis", 400}, {"hbars", {0.05}}};
  } else if (name == "landau") {
    // Constant unit field; the well is degenerate, oracle-only preset.
    j["system"]["dimension"] = 2;
    j["system"]["box_half_widths"] = {3.0, 3.0};
    j["system"]["potential"] = {json::array(), {term(1.0, {1, 0})}};
    j["oracle"] = {{"hbars", {0.1}}, {"k", 3}};
    j["prediction"] = {{"levels", 3}, {"b1", 2.0}};
  } else if (name == "block-4d") {
    // Two decoupled 2D blocks with strengths 1 and sqrt(2);
    // b0 = 1 + sqrt(2) at the origin, frequencies (1, sqrt(2)).
    const double s2 = std::sqrt(2.0);
    j["system"]["dimension"] = 4;
    j["system"]["box_half_widths"] = {3.0, 3.0, 3.0, 3.0};
    j["system"]["potential"] = {
        json::array(),
        {term(1.0, {1, 0, 0, 0}), term(1.0 / 3.0, {3, 0, 0, 0}),
         term(1.0, {1, 2, 0, 0})},
        json::array(),
        {term(s2, {0, 0, 1, 0}), term(s2 / 3.0, {0, 0, 3, 0}),
         term(s2, {0, 0, 1, 2})}};
    j["truncation"] = {{"z_order", 4}, {"w_order", 4}, {"r", 4}};
    j["well"] = {{"q_init", {0.2, -0.1, 0.15, 0.1}}};
    j["oracle"] = {{"hbars", {0.1}}, {"k", 2}, {"n_min", 16}};
    j["prediction"] = {{"levels", 3}, {"order", 4}, {"b1", 4.0}};
    j["weyl"] = {{"grid_per_axis", 60}, {"hbars", {0.1}}};
  } else {
    throw ConfigError({"unknown preset: " + name});
  }
  return j;
}

}  // namespace magnf
