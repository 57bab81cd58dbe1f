// encwatt: measure encoder energy, fit and cross-validate energy models,
// and estimate encoding energy from an ultrafast probe time.
//
// Exit codes: 0 ok, 1 unexpected failure, 2 configuration or schema error,
// 3 meter error, 4 encoder error.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <regex>
#include <string>
#include <vector>

#include <fmt/core.h>
#include <fmt/ostream.h>

#include "CLI11.hpp"
#include "encwatt/encwatt.hpp"

namespace fs = std::filesystem;
using namespace encwatt;

namespace {

enum ExitCode : int { kOk = 0, kFailure = 1, kConfig = 2, kMeter = 3, kEncoder = 4 };

struct PolicyFlags {
  double alpha = 0.99;
  double beta = 0.02;
  std::size_t min_reps = 2;
  std::size_t max_reps = 50;
  std::string quantile = "one_sided";

  ConfidencePolicy policy() const {
    ConfidencePolicy p;
    p.alpha = alpha;
    p.beta = beta;
    p.min_reps = min_reps;
    p.max_reps = max_reps;
    if (quantile == "one_sided")
      p.quantile = QuantileConvention::one_sided;
    else if (quantile == "two_sided")
      p.quantile = QuantileConvention::two_sided;
    else
      throw DomainError("--quantile must be one_sided or two_sided");
    p.validate();
    return p;
  }
};

std::string pct(double v) { return std::isfinite(v) ? fmt::format("{:.4f}", 100.0 * v) : ""; }
std::string num(double v) { return fmt::format("{:.12g}", v); }

void print_error_table(std::ostream& out, const FitReport& rep) {
  fmt::print(out, "# mean relative estimation error: model={} folds={} seed={} objective={} version={}\n",
             to_string(rep.model_kind), rep.folds, rep.seed, to_string(rep.objective), kVersion);
  fmt::print(out, "preset,mean_error_pct,n_rows\n");
  for (const auto& p : rep.presets)
    fmt::print(out, "{},{},{}\n", to_string(p.preset), pct(p.mean_error), p.n_rows);
  fmt::print(out, "average,{},\n", pct(rep.average_error));
}

void print_param_table(std::ostream& out, const FitReport& rep) {
  fmt::print(out, "# fitted parameters\n");
  if (rep.model_kind == ModelKind::qp_cubic) {
    fmt::print(out, "preset,class,kappa,lambda,mu,t0,p_avg,qp_min,qp_max\n");
    for (const auto& p : rep.presets)
      for (const auto& c : p.qp_cells)
        fmt::print(out, "{},{},{},{},{},{},{},{},{}\n", to_string(p.preset), c.class_label,
                   num(c.params.kappa()), num(c.params.lambda()), num(c.params.mu()),
                   num(c.params.t0()), num(c.params.p_avg()), num(c.params.qp_min()),
                   num(c.params.qp_max()));
    return;
  }
  fmt::print(out, "preset,covariate_kind,p_w,e0_j\n");
  for (const auto& p : rep.presets)
    if (p.linear)
      fmt::print(out, "{},{},{},{}\n", to_string(p.preset), to_string(p.linear->covariate),
                 num(p.linear->p), num(p.linear->e0));
}

void write_report(const fs::path& path, const FitReport& rep) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write report " + path.string());
  out << to_json(rep).dump(2) << '\n';
}

void write_params(const fs::path& path, const FitReport& rep) {
  std::vector<ParamRecord> records;
  for (const auto& p : rep.presets)
    if (p.linear) records.push_back({p.preset, *p.linear, p.n_rows, std::string(to_string(rep.objective))});
  if (records.empty()) throw DomainError("--params-out needs a linear model");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write parameter file " + path.string());
  write_param_csv(out, records);
}

// ---------------------------------------------------------------------------

struct MeasureArgs {
  std::string manifest, out, meter, encoder_cmd, idle_trace, workdir;
  double period = 0.1;
  std::optional<std::uint64_t> wrap_uj;
  std::vector<std::string> qp_regex;
};

int cmd_measure(const MeasureArgs& a, const PolicyFlags& pf) {
  // Everything that can be validated is validated before any encode runs.
  const auto policy = pf.policy();
  const auto jobs = read_manifest(a.manifest);
  const auto spec = parse_meter_spec(a.meter, a.period);
  auto counter = counter_config_from_env();
  if (a.wrap_uj) counter.wrap_modulus_uj = *a.wrap_uj;

  CampaignConfig cfg;
  cfg.measure.policy = policy;
  if (!a.encoder_cmd.empty()) cfg.encoder.command_template = a.encoder_cmd;
  if (!a.qp_regex.empty()) cfg.encoder.qp_patterns = a.qp_regex;
  for (const auto& pat : cfg.encoder.qp_patterns) {
    try {
      std::regex re(pat);
    } catch (const std::regex_error& e) {
      throw DomainError("invalid --qp-regex '" + pat + "': " + e.what());
    }
  }
  if (!a.workdir.empty()) {
    fs::create_directories(a.workdir);
    cfg.encoder.output_dir = a.workdir;
  }
  std::unique_ptr<Meter> meter;
  try {
    meter = make_meter(spec, counter);
  } catch (const FormatError& e) {
    throw AcquisitionError(e.what());
  }
  if (!a.idle_trace.empty()) {
    cfg.measure.idle = IdleStrategy::shared;
    cfg.measure.shared_idle = parse_trace_csv(fs::path(a.idle_trace));
  }
  cfg.out_path = fs::path(a.out);
  cfg.log = &std::cout;

  const auto outcome = run_campaign(jobs, *meter, cfg);
  fmt::print("# {} rows ({} resumed, {} ultrafast probes added), {} failed -> {}\n",
             outcome.dataset.rows.size(), outcome.resumed_rows, outcome.added_ultrafast,
             outcome.failures.size(), a.out);
  return outcome.failures.empty() ? kOk : kEncoder;
}

struct FitArgs {
  std::string dataset, model = "uf_linear", out, params_out, objective = "squared",
                       scope = "per_preset";
  std::size_t folds = 10;
  std::uint64_t seed = 0;
};

int cmd_fit(const FitArgs& a, bool crossval) {
  const auto kind = parse_model_kind(a.model);
  const auto objective = parse_objective(a.objective);
  const auto data = read_dataset_csv(fs::path(a.dataset));
  FitReport rep;
  if (crossval) {
    CvOptions opt;
    opt.folds = a.folds;
    opt.seed = a.seed;
    opt.objective = objective;
    opt.scope = parse_fold_scope(a.scope);
    rep = cross_validate(data, kind, opt);
  } else {
    rep = fit_report(data, kind, objective);
    rep.seed = a.seed;
  }
  print_error_table(std::cout, rep);
  std::cout << '\n';
  print_param_table(std::cout, rep);
  if (!a.out.empty()) write_report(a.out, rep);
  if (!a.params_out.empty()) write_params(a.params_out, rep);
  return kOk;
}

struct EstimateArgs {
  bool defaults = false;
  std::string params, preset;
  std::optional<double> t_uf, t_enc;
};

int cmd_estimate(const EstimateArgs& a) {
  if (a.defaults == !a.params.empty()) throw DomainError("give exactly one of --defaults or --params");
  if (a.t_uf.has_value() == a.t_enc.has_value()) throw DomainError("give exactly one of --t-uf or --t-enc");
  if (a.defaults && a.t_enc) throw DomainError("the default table is keyed by ultrafast time; use --t-uf");
  const auto kind = a.t_uf ? CovariateKind::ultrafast_time : CovariateKind::own_time;
  const double t = a.t_uf ? *a.t_uf : *a.t_enc;
  if (!(t > 0.0)) throw DomainError("time must be positive");

  std::map<Preset, LinearParams> table;
  if (a.defaults) {
    table = load_default_params().rows();
  } else {
    for (const auto& r : read_param_csv(fs::path(a.params)))
      if (r.params.covariate == kind) table[r.preset] = r.params;
  }
  std::vector<Preset> wanted;
  if (!a.preset.empty()) {
    const auto p = parse_preset(a.preset);
    if (!table.count(p)) {
      if (a.defaults && p == Preset::ultrafast)
        throw DomainError("the default table has no ultrafast row: ultrafast is the probe preset "
                          "whose time is the model input");
      throw DomainError("no " + std::string(to_string(kind)) + " parameters for preset " + a.preset);
    }
    wanted.push_back(p);
  } else {
    for (const auto& [p, _] : table) wanted.push_back(p);
  }
  if (wanted.empty()) throw DomainError("parameter file has no " + std::string(to_string(kind)) + " rows");
  fmt::print("preset,t_s,energy_j,energy_kj\n");
  for (auto p : wanted) {
    const double e = predict_energy_linear(table.at(p), t);
    fmt::print("{},{},{},{}\n", to_string(p), num(t), num(e), num(e / 1000.0));
  }
  return kOk;
}

struct ReportArgs {
  std::string dataset, objective = "squared", out;
  std::size_t folds = 10;
  std::uint64_t seed = 0;
};

int cmd_report(const ReportArgs& a) {
  const auto data = read_dataset_csv(fs::path(a.dataset));
  CvOptions opt;
  opt.folds = a.folds;
  opt.seed = a.seed;
  opt.objective = parse_objective(a.objective);
  const auto qp = cross_validate(data, ModelKind::qp_cubic, opt);
  const auto time = cross_validate(data, ModelKind::time_linear, opt);
  const auto uf = cross_validate(data, ModelKind::uf_linear, opt);

  fmt::print("# cross-validated mean relative estimation error (%): folds={} seed={} version={}\n",
             a.folds, a.seed, kVersion);
  fmt::print("preset,qp_cubic,time_linear,uf_linear\n");
  for (auto p : kAllPresets) {
    const auto *q = qp.find(p), *t = time.find(p), *u = uf.find(p);
    if (!q && !t && !u) continue;
    fmt::print("{},{},{},{}\n", to_string(p), q ? pct(q->mean_error) : "",
               t ? pct(t->mean_error) : "", u ? pct(u->mean_error) : "");
  }
  fmt::print("average,{},{},{}\n\n", pct(qp.average_error), pct(time.average_error),
             pct(uf.average_error));

  fmt::print("# time/energy linearity over CRF-averaged points\n");
  fmt::print("preset,points,r_own_time,r_uf_time,slope_own_time_w,slope_uf_time_w\n");
  for (const auto& r : linearity_diagnostics(data))
    fmt::print("{},{},{},{},{},{}\n", to_string(r.preset), r.points, num(r.r_own_time),
               num(r.r_uf_time), num(r.slope_own_time), num(r.slope_uf_time));
  if (!a.out.empty()) {
    nlohmann::ordered_json j;
    j["qp_cubic"] = to_json(qp);
    j["time_linear"] = to_json(time);
    j["uf_linear"] = to_json(uf);
    std::ofstream out(a.out, std::ios::binary);
    if (!out) throw Error("cannot write report " + a.out);
    out << j.dump(2) << '\n';
  }
  return kOk;
}

struct SynthArgs {
  std::string recipe, out, write_recipe;
  std::optional<std::uint64_t> seed;
  std::optional<double> energy_noise, time_noise;
};

int cmd_synth(const SynthArgs& a) {
  auto recipe = a.recipe.empty() ? default_synth_recipe() : read_synth_recipe(a.recipe);
  if (a.seed) recipe.seed = *a.seed;
  if (a.energy_noise) recipe.energy_noise = *a.energy_noise;
  if (a.time_noise) recipe.time_noise = *a.time_noise;
  const auto ds = generate_synthetic_dataset(recipe);
  write_dataset_csv(fs::path(a.out), ds);
  if (!a.write_recipe.empty()) {
    std::ofstream out(a.write_recipe, std::ios::binary);
    out << synth_recipe_to_json(recipe).dump(2) << '\n';
  }
  fmt::print("# {} rows, seed={} -> {}\n", ds.rows.size(), recipe.seed, a.out);
  return kOk;
}

int run_guarded(const std::function<int()>& fn) {
  try {
    return fn();
  } catch (const EncodeFailedError& e) {
    fmt::print(stderr, "encoder error: {}\n{}", e.what(), e.log_tail());
    return kEncoder;
  } catch (const AcquisitionError& e) {
    fmt::print(stderr, "meter error: {}\n", e.what());
    return kMeter;
  } catch (const MalformedTraceError& e) {
    fmt::print(stderr, "meter error: {}\n", e.what());
    return kMeter;
  } catch (const RangeError& e) {
    fmt::print(stderr, "meter error: {}\n", e.what());
    return kMeter;
  } catch (const MeasurementError& e) {
    if (e.cause()) return run_guarded([&]() -> int { std::rethrow_exception(e.cause()); });
    fmt::print(stderr, "measurement error: {}\n", e.what());
    return kFailure;
  } catch (const Error& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kConfig;
  } catch (const std::exception& e) {
    fmt::print(stderr, "error: {}\n", e.what());
    return kFailure;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"encwatt - video encoding energy measurement and modeling"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);
  std::function<int()> action;

  PolicyFlags pf;
  MeasureArgs ma;
  auto* measure = app.add_subcommand("measure", "Run a measured encoding campaign");
  measure->add_option("--manifest", ma.manifest, "Campaign manifest (JSON Lines)")->required();
  measure->add_option("--out", ma.out, "Dataset CSV (appended to and resumed)")->required();
  measure->add_option("--meter", ma.meter, "csv:<path> | counter:<path> | synth:<recipe>")->required();
  measure->add_option("--encoder-cmd", ma.encoder_cmd,
                      "Command template with {input} {output} {preset} {crf} {frames}");
  measure->add_option("--idle-trace", ma.idle_trace, "Shared idle baseline trace (CSV)");
  measure->add_option("--period", ma.period, "Meter sample period in seconds")->capture_default_str();
  measure->add_option("--wrap-uj", ma.wrap_uj, "Counter wrap modulus in microjoules");
  measure->add_option("--workdir", ma.workdir, "Directory for encoded bitstreams");
  measure->add_option("--qp-regex", ma.qp_regex, "Average-QP pattern(s); group 1 is the value");
  measure->add_option("--alpha", pf.alpha, "Confidence level")->capture_default_str();
  measure->add_option("--beta", pf.beta, "Maximum relative deviation")->capture_default_str();
  measure->add_option("--min-reps", pf.min_reps)->capture_default_str();
  measure->add_option("--max-reps", pf.max_reps)->capture_default_str();
  measure->add_option("--quantile", pf.quantile, "one_sided | two_sided")->capture_default_str();
  measure->callback([&] { action = [&] { return cmd_measure(ma, pf); }; });

  FitArgs fa;
  auto add_fit_opts = [&](CLI::App* sub) {
    sub->add_option("--dataset", fa.dataset, "Dataset CSV")->required();
    sub->add_option("--model", fa.model, "qp_cubic | time_linear | uf_linear")->capture_default_str();
    sub->add_option("--out", fa.out, "Write the report as JSON");
    sub->add_option("--params-out", fa.params_out, "Write linear parameters as CSV");
    sub->add_option("--objective", fa.objective, "squared | absolute")->capture_default_str();
    sub->add_option("--seed", fa.seed)->capture_default_str();
  };
  auto* fit = app.add_subcommand("fit", "Fit a model on the whole dataset");
  add_fit_opts(fit);
  fit->callback([&] { action = [&] { return cmd_fit(fa, false); }; });
  auto* crossval = app.add_subcommand("crossval", "k-fold cross-validation of a model");
  add_fit_opts(crossval);
  crossval->add_option("--folds", fa.folds)->capture_default_str();
  crossval->add_option("--scope", fa.scope, "per_preset | joint")->capture_default_str();
  crossval->callback([&] { action = [&] { return cmd_fit(fa, true); }; });

  EstimateArgs ea;
  auto* estimate = app.add_subcommand("estimate", "Estimate encoding energy from a probe time");
  estimate->add_flag("--defaults", ea.defaults, "Use the bundled per-preset parameters");
  estimate->add_option("--params", ea.params, "Parameter CSV written by fit --params-out");
  estimate->add_option("--preset", ea.preset, "Single preset; all presets when omitted");
  estimate->add_option("--t-uf", ea.t_uf, "Ultrafast encoding time in seconds");
  estimate->add_option("--t-enc", ea.t_enc, "Own encoding time (own_time parameters)");
  estimate->callback([&] { action = [&] { return cmd_estimate(ea); }; });

  ReportArgs ra;
  auto* report = app.add_subcommand("report", "Cross-validate all three models and print tables");
  report->add_option("--dataset", ra.dataset, "Dataset CSV")->required();
  report->add_option("--folds", ra.folds)->capture_default_str();
  report->add_option("--seed", ra.seed)->capture_default_str();
  report->add_option("--objective", ra.objective)->capture_default_str();
  report->add_option("--out", ra.out, "Write all three reports as JSON");
  report->callback([&] { action = [&] { return cmd_report(ra); }; });

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic campaign dataset");
  synth->add_option("--recipe", sa.recipe, "Recipe JSON; built-in default when omitted");
  synth->add_option("--out", sa.out, "Dataset CSV")->required();
  synth->add_option("--seed", sa.seed);
  synth->add_option("--energy-noise", sa.energy_noise);
  synth->add_option("--time-noise", sa.time_noise);
  synth->add_option("--write-recipe", sa.write_recipe, "Also write the effective recipe");
  synth->callback([&] { action = [&] { return cmd_synth(sa); }; });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kConfig;
  }
  return run_guarded(action);
}
