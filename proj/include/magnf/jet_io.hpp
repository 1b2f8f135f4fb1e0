#pragma once

// JSON round-trip for jets: a list of term records
//   {"w": [...], "alpha": [...], "gamma": [...], "l": n, "re": x, "im": y}
// sorted in the canonical monomial order.

#include <json.hpp>

#include "magnf/jet.hpp"

namespace magnf {

inline nlohmann::json to_json(const Jet& a) {
  nlohmann::json terms = nlohmann::json::array();
  for (auto& [m, v] : a.terms()) {
    nlohmann::json t;
    t["w"] = std::vector<int>(m.w.begin(), m.w.begin() + a.dim_w());
    t["alpha"] = std::vector<int>(m.a.begin(), m.a.begin() + a.pairs());
    t["gamma"] = std::vector<int>(m.g.begin(), m.g.begin() + a.pairs());
    t["l"] = int(m.l);
    t["re"] = v.real();
    t["im"] = v.imag();
    terms.push_back(std::move(t));
  }
  nlohmann::json j;
  j["dim_w"] = a.dim_w();
  j["pairs"] = a.pairs();
  j["real_basis"] = a.real_basis();
  j["max_phase_degree"] = a.bound().max_phase_degree;
  j["max_w_degree"] = a.bound().max_w_degree;
  j["terms"] = std::move(terms);
  return j;
}

inline Jet jet_from_json(const nlohmann::json& j) {
  Jet a(j.at("dim_w").get<int>(), j.at("pairs").get<int>(),
        GradeBound{j.at("max_phase_degree").get<int>(),
                   j.at("max_w_degree").get<int>()},
        j.value("real_basis", false));
  for (auto& t : j.at("terms")) {
    MultiIndex m;
    auto wv = t.at("w").get<std::vector<int>>();
    auto av = t.at("alpha").get<std::vector<int>>();
    auto gv = t.at("gamma").get<std::vector<int>>();
    for (std::size_t i = 0; i < wv.size(); ++i) m.w[i] = int8_t(wv[i]);
    for (std::size_t i = 0; i < av.size(); ++i) m.a[i] = int8_t(av[i]);
    for (std::size_t i = 0; i < gv.size(); ++i) m.g[i] = int8_t(gv[i]);
    m.l = int8_t(t.at("l").get<int>());
    a.add_term(m, {t.at("re").get<double>(), t.at("im").get<double>()});
  }
  return a;
}

}  // namespace magnf
