// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
// failure.

#include <sys/wait.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <numbers>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "encwatt/encwatt.hpp"

namespace {

using namespace encwatt;
namespace fs = std::filesystem;

const fs::path kFixtures = ENCWATT_FIXTURES;
const fs::path kData = ENCWATT_DATA;

struct Check {
  std::vector<std::string> failures;

  void expect(bool ok, const std::string& what) {
    if (!ok) failures.push_back(what);
  }
  void near_rel(double got, double want, double rel, const std::string& what) {
    if (!(std::fabs(got - want) <= rel * std::fabs(want))) {
      std::ostringstream os;
      os.precision(15);
      os << what << ": got " << got << ", want " << want << " (rel " << rel << ")";
      failures.push_back(os.str());
    }
  }
};

std::string fmt_num(double v, int prec = 6) {
  std::ostringstream os;
  os.precision(prec);
  os << v;
  return os.str();
}

// Runs the CLI and captures stdout+stderr.
std::pair<int, std::string> run_cli(const std::string& args) {
  const std::string cmd = std::string(ENCWATT_CLI) + " " + args + " 2>&1";
  std::string out;
  FILE* p = ::popen(cmd.c_str(), "r");
  if (!p) return {-1, out};
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, p)) > 0) out.append(buf, n);
  const int st = ::pclose(p);
  return {WIFEXITED(st) ? WEXITSTATUS(st) : -1, out};
}

// ---------------------------------------------------------------------------

std::string criterion_estimator(Check& c) {
  const auto [status, out] = run_cli("estimate --defaults --t-uf 2.0");
  c.expect(status == 0, "estimate exit status " + std::to_string(status));
  const auto table = load_default_params();
  std::map<std::string, double> got;
  std::istringstream in(out);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#' || line.rfind("preset,", 0) == 0) continue;
    const auto f = detail::split(line, ',');
    if (f.size() == 4) got[std::string(f[0])] = std::stod(std::string(f[2]));
  }
  c.expect(got.size() == 8, "expected 8 preset rows, got " + std::to_string(got.size()));
  for (const auto& [preset, params] : table.rows()) {
    const auto name = std::string(to_string(preset));
    if (!got.count(name)) {
      c.expect(false, "missing row " + name);
      continue;
    }
    // Reference arithmetic done independently of the model code.
    c.near_rel(got[name], params.e0 + params.p * 2.0, 1e-9, name);
  }
  if (got.count("superfast")) c.near_rel(got["superfast"], 310.99, 1e-9, "superfast at 2 s");
  if (got.count("veryslow")) c.near_rel(got["veryslow"], 13967.93, 1e-9, "veryslow at 2 s");
  return "superfast=" + fmt_num(got["superfast"], 10) + " J veryslow=" + fmt_num(got["veryslow"], 10) + " J";
}

std::string criterion_integration(Check& c) {
  const PowerTrace total({{0, 50}, {10, 50}});
  const PowerTrace idle({{0, 20}, {10, 20}});
  const double net = net_energy(total, idle, 10.0);
  c.near_rel(net, 300.0, 1e-12, "constant net energy");

  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  double worst = 0.0;
  for (int trial = 0; trial < 500; ++trial) {
    // Random piecewise-linear power on an irregular grid; the trapezoid
    // rule is exact per segment, so the analytic integral is the sum of
    // segment areas computed here with the window clipped by hand.
    std::vector<PowerSample> s;
    double t = 10.0 * u(rng);
    const int n = 2 + static_cast<int>(u(rng) * 200);
    for (int i = 0; i < n; ++i) {
      s.push_back({t, 500.0 * u(rng)});
      t += 1e-3 + u(rng);
    }
    const PowerTrace tr(s);
    double a = tr.start_time() + u(rng) * tr.duration();
    double b = tr.start_time() + u(rng) * tr.duration();
    if (a > b) std::swap(a, b);
    long double exact = 0.0L;
    for (std::size_t i = 1; i < s.size(); ++i) {
      const double lo = std::max(a, s[i - 1].t), hi = std::min(b, s[i].t);
      if (!(hi > lo)) continue;
      const auto at = [&](double x) {
        const long double w = (x - s[i - 1].t) / static_cast<long double>(s[i].t - s[i - 1].t);
        return s[i - 1].p + w * (s[i].p - s[i - 1].p);
      };
      exact += 0.5L * (at(lo) + at(hi)) * (hi - lo);
    }
    const double got = integrate_energy(tr, a, b);
    if (exact > 1e-6) {
      const double rel = std::fabs(got - static_cast<double>(exact)) / static_cast<double>(exact);
      worst = std::max(worst, rel);
    }
  }
  c.expect(worst <= 1e-9, "worst relative integration error " + fmt_num(worst));
  return "net=" + fmt_num(net, 12) + " J worst_rel=" + fmt_num(worst, 3);
}

std::string criterion_coverage(Check& c) {
  ConfidencePolicy policy;  // alpha 0.99, beta 0.02
  const double mu = 1000.0;
  std::ostringstream detail_line;
  std::mt19937_64 rng(99);
  for (double rel : {0.005, 0.01, 0.02}) {
    std::normal_distribution<double> noise(mu, rel * mu);
    std::size_t confident = 0, within = 0;
    for (int campaign = 0; campaign < 10000; ++campaign) {
      const auto rec = measure_until_confident([&](std::size_t) { return noise(rng); }, policy);
      if (!rec.confident) continue;
      ++confident;
      if (std::fabs(rec.mean_energy - mu) <= policy.beta * mu) ++within;
    }
    const double frac = confident ? static_cast<double>(within) / confident : 0.0;
    c.expect(confident > 0, "no confident terminations at sigma/mu=" + fmt_num(rel));
    c.expect(frac >= 0.97, "coverage " + fmt_num(frac) + " < 0.97 at sigma/mu=" + fmt_num(rel));
    detail_line << "sigma/mu=" << rel << ":" << fmt_num(frac, 5) << "(" << confident << ") ";
  }
  return detail_line.str();
}

// Independent quantile: with x = sqrt(nu) tan(theta) the t density becomes
// c * cos(theta)^(nu-1), integrated by Simpson's rule and inverted by
// bisection.
double oracle_t_quantile(double alpha, int dof) {
  const double nu = dof;
  const double c = std::exp(std::lgamma(0.5 * (nu + 1.0)) - std::lgamma(0.5 * nu)) / std::sqrt(std::numbers::pi);
  auto half_mass = [&](double theta) {
    constexpr int n = 4000;
    const double h = theta / n;
    double s = 1.0 + std::pow(std::cos(theta), nu - 1.0);
    for (int i = 1; i < n; ++i) s += (i % 2 ? 4.0 : 2.0) * std::pow(std::cos(i * h), nu - 1.0);
    return c * s * h / 3.0;
  };
  double lo = 0.0, hi = std::numbers::pi / 2.0;
  for (int i = 0; i < 60; ++i) {
    const double mid = 0.5 * (lo + hi);
    (0.5 + half_mass(mid) < alpha ? lo : hi) = mid;
  }
  return std::sqrt(nu) * std::tan(0.5 * (lo + hi));
}

std::string criterion_t_critical(Check& c) {
  double worst = 0.0;
  for (double alpha : {0.9, 0.95, 0.99})
    for (int dof = 1; dof <= 200; ++dof) {
      const double got = t_critical(alpha, static_cast<std::size_t>(dof));
      const double want = oracle_t_quantile(alpha, dof);
      const double diff = std::fabs(got - want);
      worst = std::max(worst, diff);
      if (diff > 1e-6)
        c.expect(false, "alpha=" + fmt_num(alpha) + " dof=" + std::to_string(dof) + " got " +
                            fmt_num(got, 12) + " want " + fmt_num(want, 12));
    }
  const double spot = t_critical(0.99, 3);
  c.expect(std::fabs(spot - 4.5407) < 5e-5, "t_0.99(3)=" + fmt_num(spot, 10));
  return "t_0.99(3)=" + fmt_num(spot, 8) + " worst_abs=" + fmt_num(worst, 3);
}

std::string criterion_fit_recovery(Check& c) {
  const auto bundled = read_synth_recipe(kData / "synth_default.json");
  std::map<Preset, SynthPresetLaw> laws;
  for (const auto& l : bundled.presets) laws[l.preset] = l;

  auto clean = bundled;
  clean.energy_noise = 0.0;
  clean.time_noise = 0.0;
  const auto exact = generate_synthetic_dataset(clean);
  for (const auto& [preset, law] : laws) {
    if (preset == Preset::ultrafast) continue;
    const auto uf = fit_linear_model(exact, preset, CovariateKind::ultrafast_time);
    const auto name = std::string(to_string(preset));
    c.near_rel(uf.p, law.uf_slope_w, 1e-9, name + " uf slope");
    c.near_rel(uf.e0 + uf.p, law.offset_j + law.uf_slope_w, 1e-9, name + " uf energy at 1 s");
    const auto own = fit_linear_model(exact, preset, CovariateKind::own_time);
    c.near_rel(own.p, clean.time_slope(law), 1e-9, name + " own-time slope");
  }

  double worst_slope = 0.0, lo = 1.0, hi = 0.0;
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    auto noisy = bundled;
    noisy.seed = seed;
    // 5% multiplicative noise on the energy; the probe-to-encode time ratio
    // stays exact so the noise level seen by the ultrafast-time law is 5%.
    noisy.energy_noise = 0.05;
    noisy.time_noise = 0.0;
    const auto ds = generate_synthetic_dataset(noisy);
    c.expect(ds.rows.size() == 900, "noisy dataset rows " + std::to_string(ds.rows.size()));
    for (const auto& [preset, law] : laws) {
      if (preset == Preset::ultrafast) continue;
      const auto fit = fit_linear_model(ds, preset, CovariateKind::ultrafast_time);
      const double rel = std::fabs(fit.p - law.uf_slope_w) / law.uf_slope_w;
      worst_slope = std::max(worst_slope, rel);
      if (rel > 0.03)
        c.expect(false, "seed " + std::to_string(seed) + " " + std::string(to_string(preset)) +
                            " slope off by " + fmt_num(100 * rel, 4) + "%");
    }
    CvOptions opt;
    opt.seed = seed;
    const auto rep = cross_validate(ds, ModelKind::uf_linear, opt);
    lo = std::min(lo, rep.average_error);
    hi = std::max(hi, rep.average_error);
    if (!(rep.average_error >= 0.03 && rep.average_error <= 0.09))
      c.expect(false, "seed " + std::to_string(seed) + " cv error " + fmt_num(100 * rep.average_error, 4) +
                          "% outside [3%, 9%]");
  }
  return "worst_slope_rel=" + fmt_num(100 * worst_slope, 3) + "% cv_error=[" + fmt_num(100 * lo, 4) + "%, " +
         fmt_num(100 * hi, 4) + "%] over 20 seeds";
}

std::string criterion_model_ordering(Check& c) {
  const auto ds = read_dataset_csv(kData / "synthetic_dataset.csv");
  const auto qp = cross_validate(ds, ModelKind::qp_cubic);
  const auto own = cross_validate(ds, ModelKind::time_linear);
  const auto uf = cross_validate(ds, ModelKind::uf_linear);
  for (const auto& u : uf.presets) {
    const auto* o = own.find(u.preset);
    const auto* q = qp.find(u.preset);
    const auto name = std::string(to_string(u.preset));
    if (!o || !q) {
      c.expect(false, "missing preset " + name);
      continue;
    }
    c.expect(o->mean_error <= u.mean_error, name + ": time_linear " + fmt_num(o->mean_error) + " > uf_linear " +
                                                fmt_num(u.mean_error));
    c.expect(u.mean_error < q->mean_error, name + ": uf_linear " + fmt_num(u.mean_error) + " >= qp_cubic " +
                                               fmt_num(q->mean_error));
  }
  c.expect(uf.presets.size() == 8, "uf_linear presets " + std::to_string(uf.presets.size()));
  c.expect(own.average_error <= uf.average_error && uf.average_error < qp.average_error, "average ordering");
  return "average time_linear=" + fmt_num(100 * own.average_error, 4) + "% uf_linear=" +
         fmt_num(100 * uf.average_error, 4) + "% qp_cubic=" + fmt_num(100 * qp.average_error, 4) + "%";
}

std::string criterion_cv_structure(Check& c) {
  for (std::size_t n : {10u, 12u, 37u, 100u, 101u})
    for (std::size_t k : {2u, 3u, 10u}) {
      const auto fold = kfold_split(n, k, 7);
      std::vector<std::size_t> sizes(k, 0);
      bool in_range = fold.size() == n;
      for (auto f : fold) {
        if (f >= k) in_range = false;
        else ++sizes[f];
      }
      const auto [mn, mx] = std::minmax_element(sizes.begin(), sizes.end());
      c.expect(in_range, "fold ids out of range n=" + std::to_string(n));
      c.expect(*mx - *mn <= 1, "fold sizes differ by more than one n=" + std::to_string(n) + " k=" + std::to_string(k));
    }

  // Per preset, the folds used by cross_validate cover each bitstream exactly
  // once: pooled fold errors account for every row.
  const auto ds = read_dataset_csv(kData / "synthetic_dataset.csv");
  const auto rep = cross_validate(ds, ModelKind::uf_linear);
  for (const auto& p : rep.presets)
    c.expect(p.n_rows == 100 && p.fold_errors.size() == 10, std::string(to_string(p.preset)) + " fold layout");

  // Leave-one-out at n=12 against a direct refit per held-out row.
  std::mt19937_64 rng(12);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Dataset loo;
  std::vector<TimeEnergyPoint> pts;
  for (int i = 0; i < 12; ++i) {
    const double t = 0.5 + 3 * u(rng);
    pts.push_back({t, (30 + 220 * t) * (0.9 + 0.2 * u(rng))});
    DatasetRow r;
    r.sequence_id = "s" + std::to_string(100 + i);
    r.class_label = "B";
    r.preset = Preset::fast;
    r.crf = 23;
    r.frames = 100;
    r.avg_qp = 24;
    r.t_enc = t;
    r.t_enc_uf = t;
    r.energy = pts.back().e;
    r.reps = 2;
    r.confident = true;
    loo.rows.push_back(r);
  }
  CvOptions opt;
  opt.folds = 12;
  const auto cv = cross_validate(loo, ModelKind::time_linear, opt);
  std::vector<double> direct;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    std::vector<TimeEnergyPoint> train;
    for (std::size_t j = 0; j < pts.size(); ++j)
      if (j != i) train.push_back(pts[j]);
    const auto m = fit_linear(train, CovariateKind::own_time);
    direct.push_back(relative_error(predict_energy_linear(m, pts[i].t), pts[i].e));
  }
  const double want = mean_abs_relative_error(direct);
  c.expect(cv.presets.size() == 1 && std::fabs(cv.presets[0].mean_error - want) <= 1e-12,
           "leave-one-out mismatch");
  return "loo_error=" + fmt_num(100 * want, 6) + "%";
}

std::string criterion_end_to_end(Check& c) {
  const auto dir = fs::temp_directory_path() / "encwatt_acceptance" / "campaign";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const double active = 30.0, period = 0.01;
  SyntheticMeter meter(parse_synthetic_recipe("base=20,active=30,period=0.01"));

  std::vector<EncodeJob> jobs;
  for (std::string seq : {"A_01", "B_01"})
    for (auto preset : {Preset::ultrafast, Preset::fast, Preset::slow})
      for (double crf : {23.0, 28.0}) {
        EncodeJob j;
        j.sequence_id = seq;
        j.class_label = seq.substr(0, 1);
        j.input_path = kFixtures / "clip.yuv";
        j.preset = preset;
        j.crf = crf;
        j.extra_args = {"--sleep", preset == Preset::slow ? "0.3" : "0.1"};
        jobs.push_back(j);
      }
  CampaignConfig cfg;
  cfg.encoder.command_template =
      "sh " + (kFixtures / "stub_encoder.sh").string() + " {input} {output} {preset} {crf} {frames}";
  cfg.encoder.output_dir = dir;
  cfg.measure.policy.max_reps = 3;
  cfg.out_path = dir / "dataset.csv";
  const auto outcome = run_campaign(jobs, meter, cfg);

  c.expect(outcome.failures.empty(), std::to_string(outcome.failures.size()) + " failed jobs");
  c.expect(outcome.dataset.rows.size() == 12, "rows " + std::to_string(outcome.dataset.rows.size()));
  const auto written = read_dataset_csv(dir / "dataset.csv");  // validates the schema
  c.expect(written.rows.size() == 12, "written rows " + std::to_string(written.rows.size()));
  double worst = 0.0;
  for (const auto& r : written.rows) {
    const double dev = std::fabs(r.energy - active * r.t_enc);
    worst = std::max(worst, dev);
    c.expect(dev <= active * period, r.sequence_id + "/" + std::string(to_string(r.preset)) + " deviates by " +
                                         fmt_num(dev) + " J");
  }
  return "rows=" + std::to_string(written.rows.size()) + " worst_dev=" + fmt_num(worst, 4) +
         " J (bound " + fmt_num(active * period) + " J)";
}

}  // namespace

int main() {
  struct Criterion {
    const char* name;
    std::function<std::string(Check&)> run;
  };
  const Criterion criteria[] = {
      {"default-table estimator fidelity", criterion_estimator},
      {"energy integration", criterion_integration},
      {"stopping-rule coverage", criterion_coverage},
      {"t-critical accuracy", criterion_t_critical},
      {"fit recovery", criterion_fit_recovery},
      {"model error ordering", criterion_model_ordering},
      {"cross-validation structure", criterion_cv_structure},
      {"end-to-end with test doubles", criterion_end_to_end},
  };
  int failed = 0;
  int index = 0;
  for (const auto& cr : criteria) {
    ++index;
    Check check;
    std::string summary;
    const auto t0 = std::chrono::steady_clock::now();
    try {
      summary = cr.run(check);
    } catch (const std::exception& e) {
      check.failures.push_back(std::string("exception: ") + e.what());
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    const bool ok = check.failures.empty();
    failed += !ok;
    std::cout << (ok ? "PASS" : "FAIL") << " [" << index << "] " << cr.name << " (" << fmt_num(secs, 3) << " s) "
              << summary << '\n';
    for (std::size_t i = 0; i < check.failures.size() && i < 10; ++i)
      std::cout << "    " << check.failures[i] << '\n';
    if (check.failures.size() > 10) std::cout << "    ... " << check.failures.size() - 10 << " more\n";
  }
  std::cout << (failed ? "FAILED " : "ALL PASSED ") << (8 - failed) << "/8\n";
  return failed ? 1 : 0;
}
