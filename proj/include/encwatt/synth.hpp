#pragma once

// Synthetic campaign datasets with known ground truth.
//
// For a sequence s at CRF c the ultrafast probe time is
//   t_uf = base_class * U(jitter) * crf_factor[c].
// Every preset X follows two exact affine laws in the noiseless case:
//   E = E0_X + P_X * t_uf          (uf-linear law)
//   E = E0_X + W_X * t_enc         (time-linear law, W_X = mean power)
// which is arranged by t_enc = P_X * t_uf * (1 + eta_t) / W_X and
// E = (E0_X + W_X * t_enc) * (1 + eta_e), with eta_t ~ N(0, time_noise)
// (zero for ultrafast, whose t_enc is t_uf) and eta_e ~ N(0, energy_noise).
// avg_qp = crf + qp_offset + per-sequence U(-j, j) + N(0, qp_noise), so QP
// tracks CRF but carries no information about the sequence's complexity.

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "encwatt/dataset.hpp"
#include "encwatt/detail/random.hpp"
#include "encwatt/error.hpp"
#include "encwatt/preset.hpp"

namespace encwatt {

struct SynthClass {
  std::string label;
  std::size_t sequences = 0;
  double base_uf_time_s = 1.0;
};

struct SynthPresetLaw {
  Preset preset = Preset::ultrafast;
  double uf_slope_w = 0.0;    // P_X
  double offset_j = 0.0;      // E0_X
  double mean_power_w = 0.0;  // W_X; ignored for ultrafast (equals P)
};

struct SynthRecipe {
  std::uint64_t seed = 0;
  double energy_noise = 0.05;
  double time_noise = 0.05;
  std::size_t frames = 100;
  std::vector<double> crfs = {18, 23, 28, 33};
  std::vector<double> crf_time_factors = {1.0, 0.78, 0.62, 0.5};
  double jitter_lo = 0.6;
  double jitter_hi = 1.4;
  double qp_offset = 1.5;
  double qp_sequence_jitter = 1.5;
  double qp_noise = 0.25;
  std::vector<SynthClass> classes;
  std::vector<SynthPresetLaw> presets;

  double time_slope(const SynthPresetLaw& law) const {
    return law.preset == Preset::ultrafast ? law.uf_slope_w : law.mean_power_w;
  }

  void validate() const {
    auto bad = [](const std::string& why) { return DomainError("synthetic recipe: " + why); };
    if (!(energy_noise >= 0.0) || !(time_noise >= 0.0) || !(qp_noise >= 0.0))
      throw bad("noise levels must be >= 0");
    if (frames == 0) throw bad("frames must be >= 1");
    if (crfs.empty()) throw bad("no CRF values");
    if (crfs.size() != crf_time_factors.size())
      throw bad("crfs and crf_time_factors differ in length");
    for (double c : crfs)
      if (!(c >= 0.0 && c <= 51.0)) throw bad("CRF outside [0, 51]");
    if (std::set<double>(crfs.begin(), crfs.end()).size() != crfs.size())
      throw bad("duplicate CRF values");
    for (double f : crf_time_factors)
      if (!(f > 0.0)) throw bad("CRF time factors must be positive");
    if (!(jitter_lo > 0.0 && jitter_lo <= jitter_hi)) throw bad("bad sequence jitter range");
    if (classes.empty()) throw bad("no sequence classes");
    std::set<std::string> labels;
    for (const auto& c : classes) {
      if (c.label.empty() || c.label.find(',') != std::string::npos)
        throw bad("class label empty or contains a comma");
      if (!labels.insert(c.label).second) throw bad("duplicate class " + c.label);
      if (!(c.base_uf_time_s > 0.0)) throw bad("class base time must be positive");
    }
    std::set<Preset> seen;
    bool has_uf = false;
    for (const auto& p : presets) {
      if (!seen.insert(p.preset).second)
        throw bad("duplicate preset " + std::string(to_string(p.preset)));
      if (!(p.uf_slope_w > 0.0)) throw bad("uf_slope_w must be positive");
      if (p.preset != Preset::ultrafast && !(p.mean_power_w > 0.0))
        throw bad("mean_power_w must be positive");
      has_uf |= p.preset == Preset::ultrafast;
    }
    if (!has_uf) throw bad("the ultrafast preset is required");
    // Smallest noiseless energy must stay positive.
    double min_t = 1e300;
    for (const auto& c : classes)
      for (double f : crf_time_factors) min_t = std::min(min_t, c.base_uf_time_s * jitter_lo * f);
    for (const auto& p : presets)
      if (!(p.offset_j + p.uf_slope_w * min_t > 0.0))
        throw bad("preset " + std::string(to_string(p.preset)) +
                  " yields non-positive energy at the shortest probe time");
  }
};

/// 25 sequences in seven classes, nine presets, CRF 18/23/28/33. The
/// non-ultrafast uf laws use the published per-preset slopes and offsets;
/// the mean powers and the ultrafast law are illustrative.
inline SynthRecipe default_synth_recipe() {
  SynthRecipe r;
  r.classes = {{"A1", 3, 4.0}, {"A2", 3, 4.0}, {"B", 5, 2.5}, {"C", 4, 1.2},
               {"D", 4, 0.8},  {"E", 3, 1.6},  {"F", 3, 1.4}};
  r.presets = {
      {Preset::ultrafast, 100.0, 0.0, 100.0},   {Preset::superfast, 160.36, -9.73, 105.0},
      {Preset::veryfast, 251.67, -24.28, 110.0}, {Preset::faster, 252.48, -20.15, 110.0},
      {Preset::fast, 378.68, -19.02, 115.0},     {Preset::medium, 358.21, -25.51, 115.0},
      {Preset::slow, 1137.65, -70.20, 120.0},    {Preset::slower, 4025.44, 230.18, 125.0},
      {Preset::veryslow, 6771.39, 425.15, 125.0},
  };
  return r;
}

inline Dataset generate_synthetic_dataset(const SynthRecipe& recipe) {
  recipe.validate();
  detail::Rng rng(recipe.seed);

  struct Seq {
    std::string id, cls;
    double base = 0.0, qp_shift = 0.0;
  };
  std::vector<Seq> seqs;
  for (const auto& c : recipe.classes) {
    for (std::size_t i = 0; i < c.sequences; ++i) {
      Seq s;
      s.cls = c.label;
      s.id = c.label + "_" + (i + 1 < 10 ? "0" : "") + std::to_string(i + 1);
      s.base = c.base_uf_time_s * rng.uniform(recipe.jitter_lo, recipe.jitter_hi);
      s.qp_shift = rng.uniform(-recipe.qp_sequence_jitter, recipe.qp_sequence_jitter);
      seqs.push_back(std::move(s));
    }
  }

  auto factor = [](double eta) { return std::max(0.05, 1.0 + eta); };
  Dataset ds;
  ds.provenance = "synthetic seed=" + std::to_string(recipe.seed);
  for (const auto& s : seqs) {
    for (const auto& law : recipe.presets) {
      for (std::size_t c = 0; c < recipe.crfs.size(); ++c) {
        // Three draws per row keep the stream aligned across recipes.
        const double eta_t = rng.normal(0.0, recipe.time_noise);
        const double eta_e = rng.normal(0.0, recipe.energy_noise);
        const double qp_eta = rng.normal(0.0, recipe.qp_noise);

        const double t_uf = s.base * recipe.crf_time_factors[c];
        const double w = recipe.time_slope(law);
        const double t_enc = law.preset == Preset::ultrafast
                                 ? t_uf
                                 : law.uf_slope_w * t_uf * factor(eta_t) / w;
        DatasetRow row;
        row.sequence_id = s.id;
        row.class_label = s.cls;
        row.preset = law.preset;
        row.crf = recipe.crfs[c];
        row.frames = recipe.frames;
        row.avg_qp = std::clamp(recipe.crfs[c] + recipe.qp_offset + s.qp_shift + qp_eta, 0.0, 51.0);
        row.t_enc = t_enc;
        row.t_enc_uf = t_uf;
        row.energy = (law.offset_j + w * t_enc) * factor(eta_e);
        row.reps = 1;
        row.confident = true;
        ds.rows.push_back(std::move(row));
      }
    }
  }
  validate_dataset(ds);
  return ds;
}

// ---------------------------------------------------------------------------
// JSON recipes. Every field is optional and defaults to default_synth_recipe().

inline nlohmann::ordered_json synth_recipe_to_json(const SynthRecipe& r) {
  nlohmann::ordered_json j;
  j["seed"] = r.seed;
  j["energy_noise"] = r.energy_noise;
  j["time_noise"] = r.time_noise;
  j["frames"] = r.frames;
  j["crfs"] = r.crfs;
  j["crf_time_factors"] = r.crf_time_factors;
  j["sequence_jitter"] = {r.jitter_lo, r.jitter_hi};
  j["qp_offset"] = r.qp_offset;
  j["qp_sequence_jitter"] = r.qp_sequence_jitter;
  j["qp_noise"] = r.qp_noise;
  auto& classes = j["classes"] = nlohmann::ordered_json::array();
  for (const auto& c : r.classes)
    classes.push_back({{"label", c.label}, {"sequences", c.sequences}, {"base_uf_time_s", c.base_uf_time_s}});
  auto& presets = j["presets"] = nlohmann::ordered_json::array();
  for (const auto& p : r.presets)
    presets.push_back({{"preset", std::string(to_string(p.preset))},
                       {"uf_slope_w", p.uf_slope_w},
                       {"offset_j", p.offset_j},
                       {"mean_power_w", p.mean_power_w}});
  return j;
}

inline SynthRecipe synth_recipe_from_json(const nlohmann::json& j) {
  auto r = default_synth_recipe();
  try {
    if (!j.is_object()) throw DomainError("synthetic recipe must be a JSON object");
    static const std::set<std::string> known = {
        "seed",      "energy_noise",       "time_noise", "frames",  "crfs",   "crf_time_factors",
        "sequence_jitter", "qp_offset",    "qp_sequence_jitter",   "qp_noise", "classes", "presets"};
    for (const auto& [k, v] : j.items())
      if (!known.count(k)) throw DomainError("synthetic recipe: unknown field '" + k + "'");
    if (j.contains("seed")) r.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("energy_noise")) r.energy_noise = j.at("energy_noise").get<double>();
    if (j.contains("time_noise")) r.time_noise = j.at("time_noise").get<double>();
    if (j.contains("frames")) r.frames = j.at("frames").get<std::size_t>();
    if (j.contains("crfs")) r.crfs = j.at("crfs").get<std::vector<double>>();
    if (j.contains("crf_time_factors"))
      r.crf_time_factors = j.at("crf_time_factors").get<std::vector<double>>();
    if (j.contains("sequence_jitter")) {
      const auto v = j.at("sequence_jitter").get<std::vector<double>>();
      if (v.size() != 2) throw DomainError("synthetic recipe: sequence_jitter needs 2 values");
      r.jitter_lo = v[0];
      r.jitter_hi = v[1];
    }
    if (j.contains("qp_offset")) r.qp_offset = j.at("qp_offset").get<double>();
    if (j.contains("qp_sequence_jitter")) r.qp_sequence_jitter = j.at("qp_sequence_jitter").get<double>();
    if (j.contains("qp_noise")) r.qp_noise = j.at("qp_noise").get<double>();
    if (j.contains("classes")) {
      r.classes.clear();
      for (const auto& c : j.at("classes"))
        r.classes.push_back({c.at("label").get<std::string>(), c.at("sequences").get<std::size_t>(),
                             c.at("base_uf_time_s").get<double>()});
    }
    if (j.contains("presets")) {
      r.presets.clear();
      for (const auto& p : j.at("presets"))
        r.presets.push_back({parse_preset(p.at("preset").get<std::string>()),
                             p.at("uf_slope_w").get<double>(), p.at("offset_j").get<double>(),
                             p.value("mean_power_w", 0.0)});
    }
  } catch (const nlohmann::json::exception& e) {
    throw DomainError(std::string("synthetic recipe: ") + e.what());
  }
  r.validate();
  return r;
}

inline SynthRecipe read_synth_recipe(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DomainError("cannot open recipe " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw DomainError("recipe " + path.string() + ": " + e.what());
  }
  return synth_recipe_from_json(j);
}

}  // namespace encwatt
