#pragma once

// Power trace acquisition: CSV files, cumulative energy counter files
// (RAPL-style, microjoules) and synthetic generators.

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <sstream>
#include <stop_token>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include "encwatt/detail/random.hpp"
#include "encwatt/detail/text.hpp"
#include "encwatt/energy_core.hpp"
#include "encwatt/error.hpp"

namespace encwatt {

// ---------------------------------------------------------------------------
// CSV traces

inline constexpr std::string_view kTraceCsvHeader = "t_s,p_w";

/// Parses the `t_s,p_w` trace format from a stream. `label` names the
/// source in error messages and becomes the trace's source label.
inline PowerTrace parse_trace_csv(std::istream& in, const std::string& label = "<stream>") {
  std::string line;
  std::size_t lineno = 0;
  bool have_header = false;
  std::vector<PowerSample> samples;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view sv(line);
    if (!sv.empty() && sv.back() == '\r') sv.remove_suffix(1);
    if (!have_header) {
      if (detail::trim(sv) != kTraceCsvHeader)
        throw FormatError(label + ": expected header '" + std::string(kTraceCsvHeader) +
                          "' on line 1");
      have_header = true;
      continue;
    }
    if (detail::trim(sv).empty()) continue;
    const auto fields = detail::split(sv, ',');
    if (fields.size() != 2)
      throw FormatError(label + ": line " + std::to_string(lineno) + ": expected 2 columns, got " +
                        std::to_string(fields.size()));
    const auto t = detail::parse_double(detail::trim(fields[0]));
    const auto p = detail::parse_double(detail::trim(fields[1]));
    if (!t || !p)
      throw FormatError(label + ": line " + std::to_string(lineno) + ": unparseable number");
    if (*t < 0.0) throw MalformedTraceError(label + ": negative timestamp", lineno);
    if (*p < 0.0) throw MalformedTraceError(label + ": negative power", lineno);
    if (!samples.empty() && !(*t > samples.back().t))
      throw MalformedTraceError(label + ": timestamps not strictly increasing", lineno);
    samples.push_back({*t, *p});
  }
  if (!have_header) throw FormatError(label + ": missing header");
  if (samples.size() < 2)
    throw MalformedTraceError(label + ": trace needs at least 2 samples, found " +
                              std::to_string(samples.size()));
  return PowerTrace(std::move(samples), label);
}

inline PowerTrace parse_trace_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw AcquisitionError("cannot open trace file " + path.string());
  return parse_trace_csv(in, path.string());
}

/// Canonical form: header, LF line endings, shortest round-trip numbers.
inline void write_trace_csv(std::ostream& out, const PowerTrace& trace) {
  out << kTraceCsvHeader << '\n';
  for (const auto& s : trace.samples())
    out << detail::format_double(s.t) << ',' << detail::format_double(s.p) << '\n';
}

inline void write_trace_csv(const std::filesystem::path& path, const PowerTrace& trace) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write trace file " + path.string());
  write_trace_csv(out, trace);
}

// ---------------------------------------------------------------------------
// Cumulative energy counters

/// Modulus at which the counter wraps, in microjoules; 0 means the counter
/// never wraps and any decrease is corruption.
struct CounterConfig {
  std::uint64_t wrap_modulus_uj = 0;
  // A decrease is accepted as a wrap only if the implied increment is
  // below this fraction of the modulus.
  double max_wrap_fraction = 0.25;
};

/// ENCWATT_WRAP_UJ overrides the configured modulus when set.
inline CounterConfig counter_config_from_env(CounterConfig cfg = {}) {
  if (const char* env = std::getenv("ENCWATT_WRAP_UJ")) {
    const auto v = detail::parse_int<std::uint64_t>(detail::trim(env));
    if (!v) throw DomainError(std::string("ENCWATT_WRAP_UJ is not an integer: ") + env);
    cfg.wrap_modulus_uj = *v;
  }
  return cfg;
}

/// Energy increment between two counter readings, resolving wrap-around.
inline std::uint64_t counter_delta(std::uint64_t previous, std::uint64_t current,
                                   const CounterConfig& cfg) {
  if (current >= previous) return current - previous;
  if (cfg.wrap_modulus_uj == 0)
    throw CorruptCounterError("energy counter decreased from " + std::to_string(previous) +
                              " to " + std::to_string(current) + " and no wrap modulus is set");
  if (previous >= cfg.wrap_modulus_uj)
    throw CorruptCounterError("counter reading " + std::to_string(previous) +
                              " exceeds wrap modulus " + std::to_string(cfg.wrap_modulus_uj));
  const std::uint64_t wrapped = (cfg.wrap_modulus_uj - previous) + current;
  if (static_cast<double>(wrapped) >=
      cfg.max_wrap_fraction * static_cast<double>(cfg.wrap_modulus_uj))
    throw CorruptCounterError("energy counter dropped from " + std::to_string(previous) + " to " +
                              std::to_string(current) + ", beyond wrap tolerance");
  return wrapped;
}

/// Turns (time, counter) readings into interval-average power samples at
/// interval midpoints.
class CounterDecoder {
public:
  explicit CounterDecoder(CounterConfig cfg = {}) : cfg_(cfg) {}

  /// Returns a sample for every reading after the first.
  std::optional<PowerSample> feed(double t, std::uint64_t reading) {
    if (!prev_) {
      prev_ = std::pair{t, reading};
      return std::nullopt;
    }
    const auto [t_prev, r_prev] = *prev_;
    if (!(t > t_prev)) throw AcquisitionError("counter poll times not increasing");
    const auto delta = counter_delta(r_prev, reading, cfg_);
    prev_ = std::pair{t, reading};
    return PowerSample{0.5 * (t_prev + t), static_cast<double>(delta) / (t - t_prev) / 1e6};
  }

private:
  CounterConfig cfg_;
  std::optional<std::pair<double, std::uint64_t>> prev_;
};

inline std::uint64_t read_counter_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw AcquisitionError("cannot read counter file " + path.string());
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto v = detail::parse_int<std::uint64_t>(detail::trim(text));
  if (!v) throw AcquisitionError("counter file " + path.string() + " does not hold an integer");
  return *v;
}

/// Clock and sleep hooks for the live sampler. Defaults use steady_clock.
struct SamplerHooks {
  std::function<double()> now;                                // seconds, monotonic
  std::function<void(double, std::stop_token)> sleep;         // interruptible
  std::function<std::uint64_t(const std::filesystem::path&)> read = read_counter_file;
};

inline SamplerHooks default_sampler_hooks() {
  SamplerHooks h;
  h.now = [] {
    using namespace std::chrono;
    return duration<double>(steady_clock::now().time_since_epoch()).count();
  };
  h.sleep = [](double seconds, std::stop_token st) {
    std::mutex m;
    std::condition_variable_any cv;
    std::unique_lock lk(m);
    cv.wait_for(lk, st, std::chrono::duration<double>(seconds), [] { return false; });
  };
  return h;
}

namespace detail {

// Samples sit at interval midpoints, so the raw trace does not reach the
// session boundaries. Extending the first and last interval averages to
// t = 0 and t = end gives a trace spanning the whole session.
inline std::vector<PowerSample> pad_to_session(std::vector<PowerSample> s, double end) {
  if (s.empty()) return s;
  if (s.front().t > 0.0) s.insert(s.begin(), PowerSample{0.0, s.front().p});
  if (end > s.back().t) s.push_back(PowerSample{end, s.back().p});
  return s;
}

}  // namespace detail

/// Polls a cumulative counter file every `period` seconds until `stop` is
/// requested, taking one last reading at stop time. Timestamps are relative
/// to the first reading. When `first_reading` is given it is used as the
/// t = 0 reading instead of reading the file again.
inline PowerTrace sample_counter_file(const std::filesystem::path& path, double period,
                                      std::stop_token stop, CounterConfig cfg = {},
                                      SamplerHooks hooks = default_sampler_hooks(),
                                      std::optional<std::uint64_t> first_reading = std::nullopt) {
  if (!(period > 0.0)) throw DomainError("sample period must be positive");
  if (!hooks.now) hooks.now = default_sampler_hooks().now;
  if (!hooks.sleep) hooks.sleep = default_sampler_hooks().sleep;
  if (!hooks.read) hooks.read = read_counter_file;

  CounterDecoder decoder(cfg);
  std::vector<PowerSample> samples;
  const double t0 = hooks.now();
  decoder.feed(0.0, first_reading ? *first_reading : hooks.read(path));
  double last_t = 0.0;
  auto poll = [&] {
    const double t = hooks.now() - t0;
    if (!(t > last_t)) return;
    if (auto s = decoder.feed(t, hooks.read(path))) samples.push_back(*s);
    last_t = t;
  };
  while (!stop.stop_requested()) {
    hooks.sleep(period, stop);
    poll();
  }
  poll();
  if (samples.empty()) throw AcquisitionError("counter sampling stopped before any interval");
  return PowerTrace(detail::pad_to_session(std::move(samples), last_t), path.string());
}

// ---------------------------------------------------------------------------
// Synthetic traces

struct SyntheticRecipe {
  double base_power = 20.0;    // W
  double active_power = 30.0;  // W, added inside the active window
  double noise_std = 0.0;      // W
  double duration = 10.0;      // s
  std::uint64_t seed = 0;
  double sample_period = 0.1;  // s

  void validate() const {
    if (!(base_power >= 0.0) || !(active_power >= 0.0))
      throw DomainError("synthetic recipe: powers must be non-negative");
    if (!(noise_std >= 0.0)) throw DomainError("synthetic recipe: noise_std must be >= 0");
    if (!(duration > 0.0)) throw DomainError("synthetic recipe: duration must be positive");
    if (!(sample_period > 0.0)) throw DomainError("synthetic recipe: sample_period must be positive");
  }
};

/// Parses `key=value` pairs separated by commas, e.g.
/// `base=20,active=30,noise=0.5,period=0.05,seed=7,duration=10`.
inline SyntheticRecipe parse_synthetic_recipe(std::string_view text) {
  SyntheticRecipe r;
  if (detail::trim(text).empty()) return r;
  for (auto item : detail::split(text, ',')) {
    item = detail::trim(item);
    const auto eq = item.find('=');
    if (eq == std::string_view::npos)
      throw DomainError("synthetic recipe: expected key=value, got '" + std::string(item) + "'");
    const auto key = detail::trim(item.substr(0, eq));
    const auto val = detail::trim(item.substr(eq + 1));
    if (key == "seed") {
      const auto v = detail::parse_int<std::uint64_t>(val);
      if (!v) throw DomainError("synthetic recipe: bad seed '" + std::string(val) + "'");
      r.seed = *v;
      continue;
    }
    const auto v = detail::parse_double(val);
    if (!v) throw DomainError("synthetic recipe: bad value for " + std::string(key));
    if (key == "base")
      r.base_power = *v;
    else if (key == "active")
      r.active_power = *v;
    else if (key == "noise")
      r.noise_std = *v;
    else if (key == "duration")
      r.duration = *v;
    else if (key == "period")
      r.sample_period = *v;
    else
      throw DomainError("synthetic recipe: unknown key '" + std::string(key) + "'");
  }
  r.validate();
  return r;
}

/// Piecewise-constant power (base outside the window, base + active inside)
/// sampled every sample_period, plus truncated Gaussian noise.
///
/// Window edges away from the trace ends are represented by three samples
/// at e - d, e, e + d holding base, base + active/2 and base + active. The
/// trapezoid over that symmetric ramp integrates to exactly the step's
/// energy, so noiseless traces integrate to the analytic value.
inline PowerTrace generate_synthetic_trace(const SyntheticRecipe& recipe,
                                           std::pair<double, double> active_window) {
  recipe.validate();
  const auto [w0, w1] = active_window;
  const double dur = recipe.duration;
  if (!(w0 >= 0.0 && w0 <= w1 && w1 <= dur))
    throw DomainError("active window must lie within [0, duration]");
  const double period = recipe.sample_period;
  const bool has_window = w1 > w0;
  double delta = 1e-3 * period;
  if (has_window) delta = std::min(delta, 0.25 * (w1 - w0));

  auto value = [&](double t) {
    if (!has_window) return recipe.base_power;
    return (t >= w0 && t <= w1) ? recipe.base_power + recipe.active_power : recipe.base_power;
  };

  std::vector<double> grid;
  const auto n = static_cast<std::size_t>(std::floor(dur / period + 1e-9));
  for (std::size_t k = 0; k <= n; ++k) grid.push_back(std::min(static_cast<double>(k) * period, dur));
  if (dur - grid.back() > 1e-9 * period) grid.push_back(dur);
  else grid.back() = dur;

  struct Edge {
    double at;
    double below, above;  // power just before / after the edge
  };
  std::vector<Edge> edges;
  if (has_window) {
    const double hi = recipe.base_power + recipe.active_power;
    if (w0 > 0.0) edges.push_back({w0, recipe.base_power, hi});
    if (w1 < dur) edges.push_back({w1, hi, recipe.base_power});
  }

  std::vector<PowerSample> clean;
  auto near_edge = [&](double t) {
    if (t == 0.0 || t == dur) return false;
    for (const auto& e : edges)
      if (t > e.at - delta - 1e-15 && t < e.at + delta + 1e-15) return true;
    return false;
  };
  for (double t : grid)
    if (!near_edge(t)) clean.push_back({t, value(t)});
  for (const auto& e : edges) {
    if (e.at - delta > 0.0) clean.push_back({e.at - delta, e.below});
    if (e.at > 0.0 && e.at < dur) clean.push_back({e.at, 0.5 * (e.below + e.above)});
    if (e.at + delta < dur) clean.push_back({e.at + delta, e.above});
  }
  std::sort(clean.begin(), clean.end(),
            [](const PowerSample& a, const PowerSample& b) { return a.t < b.t; });

  if (recipe.noise_std > 0.0) {
    detail::Rng rng(recipe.seed);
    for (auto& s : clean) s.p = std::max(0.0, s.p + rng.normal(0.0, recipe.noise_std));
  }
  return PowerTrace(std::move(clean), "synthetic");
}

// ---------------------------------------------------------------------------
// Meters

enum class TraceSourceKind { csv_file, counter_file, synthetic };

struct TraceSourceSpec {
  TraceSourceKind kind = TraceSourceKind::synthetic;
  std::string path_or_recipe;
  double sample_period = 0.1;  // s; counter and synthetic kinds

  void validate() const {
    if (kind != TraceSourceKind::csv_file && !(sample_period > 0.0))
      throw DomainError("meter sample period must be positive");
  }
};

/// `csv:<path>`, `counter:<path>` or `synth:<recipe>`.
inline TraceSourceSpec parse_meter_spec(std::string_view text, double sample_period = 0.1) {
  const auto colon = text.find(':');
  if (colon == std::string_view::npos)
    throw DomainError("meter spec must be csv:<path>, counter:<path> or synth:<recipe>");
  const auto kind = text.substr(0, colon);
  TraceSourceSpec spec;
  spec.path_or_recipe = std::string(text.substr(colon + 1));
  spec.sample_period = sample_period;
  if (kind == "csv")
    spec.kind = TraceSourceKind::csv_file;
  else if (kind == "counter")
    spec.kind = TraceSourceKind::counter_file;
  else if (kind == "synth")
    spec.kind = TraceSourceKind::synthetic;
  else
    throw DomainError("unknown meter kind '" + std::string(kind) + "'");
  if (spec.kind != TraceSourceKind::synthetic && spec.path_or_recipe.empty())
    throw DomainError("meter spec needs a path");
  spec.validate();
  return spec;
}

/// A measurement session: start() before the workload, stop() after it.
/// Returned traces start at t = 0 (session start).
class Meter {
public:
  virtual ~Meter() = default;
  virtual void start() = 0;
  virtual PowerTrace stop() = 0;

  /// Idle baseline of at least `duration` seconds. The default runs an
  /// ordinary session while nothing else is scheduled.
  virtual PowerTrace capture_idle(double duration) {
    start();
    std::this_thread::sleep_for(std::chrono::duration<double>(duration));
    return stop();
  }
};

/// Live sampler over a counter file, running on its own thread for the
/// duration of a session.
class CounterFileMeter : public Meter {
public:
  CounterFileMeter(std::filesystem::path path, double period, CounterConfig cfg = {},
                   SamplerHooks hooks = default_sampler_hooks())
      : path_(std::move(path)), period_(period), cfg_(cfg), hooks_(std::move(hooks)) {
    if (!(period_ > 0.0)) throw DomainError("sample period must be positive");
  }

  ~CounterFileMeter() override {
    if (worker_.joinable()) {
      worker_.request_stop();
      worker_.join();
    }
  }

  void start() override {
    if (worker_.joinable()) throw AcquisitionError("counter meter session already running");
    // Read once up front so an unreadable counter fails before the workload.
    const auto first = hooks_.read ? hooks_.read(path_) : read_counter_file(path_);
    result_.reset();
    error_ = nullptr;
    worker_ = std::jthread([this, first](std::stop_token st) {
      try {
        result_ = sample_counter_file(path_, period_, st, cfg_, hooks_, first);
      } catch (...) {
        error_ = std::current_exception();
      }
    });
  }

  PowerTrace stop() override {
    if (!worker_.joinable()) throw AcquisitionError("counter meter stopped without start");
    worker_.request_stop();
    worker_.join();
    worker_ = std::jthread();
    if (error_) std::rethrow_exception(error_);
    return std::move(*result_);
  }

private:
  std::filesystem::path path_;
  double period_;
  CounterConfig cfg_;
  SamplerHooks hooks_;
  std::jthread worker_;
  std::optional<PowerTrace> result_;
  std::exception_ptr error_;
};

/// Test double: active power across the whole session, idle baselines
/// generated without waiting. Each session draws fresh noise.
class SyntheticMeter : public Meter {
public:
  explicit SyntheticMeter(SyntheticRecipe recipe) : recipe_(recipe) { recipe_.validate(); }

  void start() override {
    if (running_) throw AcquisitionError("synthetic meter session already running");
    running_ = true;
    started_ = std::chrono::steady_clock::now();
  }

  PowerTrace stop() override {
    if (!running_) throw AcquisitionError("synthetic meter stopped without start");
    running_ = false;
    const double elapsed =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started_).count();
    auto r = recipe_;
    r.duration = std::max(elapsed, 1e-6);
    r.seed = recipe_.seed + session_++;
    return generate_synthetic_trace(r, {0.0, r.duration});
  }

  PowerTrace capture_idle(double duration) override {
    auto r = recipe_;
    r.duration = duration;
    r.active_power = 0.0;
    r.seed = recipe_.seed + 0x9e3779b97f4a7c15ULL + session_++;
    return generate_synthetic_trace(r, {0.0, 0.0});
  }

  const SyntheticRecipe& recipe() const noexcept { return recipe_; }

private:
  SyntheticRecipe recipe_;
  bool running_ = false;
  std::uint64_t session_ = 0;
  std::chrono::steady_clock::time_point started_;
};

/// Replays a recorded trace for every session.
class ReplayMeter : public Meter {
public:
  explicit ReplayMeter(std::filesystem::path path) : trace_(parse_trace_csv(path)) {}
  explicit ReplayMeter(PowerTrace trace) : trace_(std::move(trace)) {}
  void start() override {}
  PowerTrace stop() override { return trace_; }

private:
  PowerTrace trace_;
};

inline std::unique_ptr<Meter> make_meter(const TraceSourceSpec& spec, CounterConfig cfg = {}) {
  spec.validate();
  switch (spec.kind) {
    case TraceSourceKind::csv_file:
      return std::make_unique<ReplayMeter>(std::filesystem::path(spec.path_or_recipe));
    case TraceSourceKind::counter_file:
      return std::make_unique<CounterFileMeter>(spec.path_or_recipe, spec.sample_period, cfg);
    case TraceSourceKind::synthetic: {
      auto r = parse_synthetic_recipe(spec.path_or_recipe);
      if (spec.path_or_recipe.find("period") == std::string::npos) r.sample_period = spec.sample_period;
      return std::make_unique<SyntheticMeter>(r);
    }
  }
  throw DomainError("unknown meter kind");
}

}  // namespace encwatt
