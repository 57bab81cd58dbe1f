#pragma once

#include <cmath>
#include <string>

#include <nlohmann/json.hpp>

#include "encwatt/model_fit.hpp"
#include "encwatt/version.hpp"

namespace encwatt {

namespace detail {

inline nlohmann::ordered_json number_or_null(double v) {
  if (std::isfinite(v)) return v;
  return nullptr;
}

}  // namespace detail

/// Key order is fixed, so equal reports serialize to identical bytes.
inline nlohmann::ordered_json to_json(const FitReport& rep) {
  using oj = nlohmann::ordered_json;
  oj j;
  j["tool"] = "encwatt";
  j["version"] = std::string(kVersion);
  j["model_kind"] = std::string(to_string(rep.model_kind));
  j["objective"] = std::string(to_string(rep.objective));
  j["fold_scope"] = std::string(to_string(rep.scope));
  j["folds"] = rep.folds;
  j["seed"] = rep.seed;
  j["average_error"] = detail::number_or_null(rep.average_error);
  oj folds = oj::array();
  for (double e : rep.per_fold_errors) folds.push_back(detail::number_or_null(e));
  j["per_fold_errors"] = std::move(folds);
  oj presets = oj::array();
  for (const auto& p : rep.presets) {
    oj pj;
    pj["preset"] = std::string(to_string(p.preset));
    pj["n_rows"] = p.n_rows;
    pj["mean_error"] = detail::number_or_null(p.mean_error);
    oj fe = oj::array();
    for (double e : p.fold_errors) fe.push_back(detail::number_or_null(e));
    pj["fold_errors"] = std::move(fe);
    if (p.linear) {
      pj["covariate_kind"] = std::string(to_string(p.linear->covariate));
      pj["p_w"] = p.linear->p;
      pj["e0_j"] = p.linear->e0;
    }
    if (!p.qp_cells.empty()) {
      oj cells = oj::array();
      for (const auto& c : p.qp_cells) {
        cells.push_back({{"class", c.class_label},
                         {"n_rows", c.n_rows},
                         {"mean_error", detail::number_or_null(c.mean_error)},
                         {"kappa", c.params.kappa()},
                         {"lambda", c.params.lambda()},
                         {"mu", c.params.mu()},
                         {"t0", c.params.t0()},
                         {"p_avg", c.params.p_avg()},
                         {"qp_min", c.params.qp_min()},
                         {"qp_max", c.params.qp_max()}});
      }
      pj["qp_cells"] = std::move(cells);
    }
    presets.push_back(std::move(pj));
  }
  j["presets"] = std::move(presets);
  return j;
}

}  // namespace encwatt
