#pragma once

// Net encoding energy from power traces, and the repetition stopping rule.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <exception>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "encwatt/error.hpp"
#include "encwatt/student_t.hpp"

namespace encwatt {

struct PowerSample {
  double t = 0.0;  // seconds
  double p = 0.0;  // watts
};

/// Timestamped power samples. Construction enforces non-negative values and
/// strictly increasing timestamps; integration additionally needs two
/// samples.
class PowerTrace {
public:
  PowerTrace() = default;

  explicit PowerTrace(std::vector<PowerSample> samples, std::string source_label = {})
      : samples_(std::move(samples)), label_(std::move(source_label)) {
    for (std::size_t i = 0; i < samples_.size(); ++i) {
      const auto& s = samples_[i];
      if (!(s.t >= 0.0) || !std::isfinite(s.t))
        throw MalformedTraceError("sample " + std::to_string(i) + ": negative or non-finite time");
      if (!(s.p >= 0.0) || !std::isfinite(s.p))
        throw MalformedTraceError("sample " + std::to_string(i) + ": negative or non-finite power");
      if (i > 0 && !(s.t > samples_[i - 1].t))
        throw MalformedTraceError("sample " + std::to_string(i) + ": timestamps not strictly increasing");
    }
  }

  std::span<const PowerSample> samples() const noexcept { return samples_; }
  const std::string& source_label() const noexcept { return label_; }
  std::size_t size() const noexcept { return samples_.size(); }
  bool empty() const noexcept { return samples_.empty(); }

  double start_time() const { return samples_.at(0).t; }
  double end_time() const { return samples_.at(samples_.size() - 1).t; }
  double duration() const { return samples_.size() < 2 ? 0.0 : end_time() - start_time(); }

  friend bool operator==(const PowerTrace& a, const PowerTrace& b) {
    return a.samples_.size() == b.samples_.size() &&
           std::equal(a.samples_.begin(), a.samples_.end(), b.samples_.begin(),
                      [](const PowerSample& x, const PowerSample& y) {
                        return x.t == y.t && x.p == y.p;
                      });
  }

private:
  std::vector<PowerSample> samples_;
  std::string label_;
};

namespace detail {

// Linear interpolation of power at t inside segment [a, b].
inline double lerp_power(const PowerSample& a, const PowerSample& b, double t) {
  if (t <= a.t) return a.p;
  if (t >= b.t) return b.p;
  const double w = (t - a.t) / (b.t - a.t);
  return a.p + w * (b.p - a.p);
}

}  // namespace detail

/// Trapezoidal integral of power over [t_start, t_end] in joules. Window
/// endpoints falling between samples are interpolated linearly, so the
/// result is exact for piecewise-linear power.
inline double integrate_energy(const PowerTrace& trace, double t_start, double t_end) {
  if (trace.size() < 2) throw MalformedTraceError("integration needs at least 2 samples");
  const auto s = trace.samples();
  const double first = s.front().t;
  const double last = s.back().t;
  // Sub-nanosecond slack for durations computed from the same clock.
  const double slack = 1e-12 * (std::fabs(last) + 1.0);
  if (!(t_start < t_end)) throw RangeError("integration window is empty or reversed");
  if (t_start < first - slack || t_end > last + slack)
    throw RangeError("integration window [" + std::to_string(t_start) + ", " +
                     std::to_string(t_end) + "] outside trace span [" + std::to_string(first) +
                     ", " + std::to_string(last) + "]");
  t_start = std::max(t_start, first);
  t_end = std::min(t_end, last);

  // First segment whose right end lies beyond t_start.
  auto it = std::upper_bound(s.begin(), s.end(), t_start,
                             [](double t, const PowerSample& x) { return t < x.t; });
  std::size_t i = static_cast<std::size_t>(it - s.begin());
  if (i == 0) i = 1;
  if (i >= s.size()) i = s.size() - 1;

  double energy = 0.0;
  double t0 = t_start;
  double p0 = detail::lerp_power(s[i - 1], s[i], t_start);
  for (; i < s.size(); ++i) {
    const double t1 = std::min(s[i].t, t_end);
    const double p1 = t1 == s[i].t ? s[i].p : detail::lerp_power(s[i - 1], s[i], t1);
    energy += 0.5 * (p0 + p1) * (t1 - t0);
    if (t1 >= t_end) break;
    t0 = t1;
    p0 = p1;
  }
  return std::max(energy, 0.0);
}

/// Total minus idle energy over `duration` seconds, each trace integrated
/// from its own first timestamp. Negative results are returned unchanged;
/// they indicate an idle baseline above the loaded power.
inline double net_energy(const PowerTrace& total, const PowerTrace& idle, double duration) {
  if (!(duration > 0.0)) throw RangeError("net_energy: duration must be positive");
  if (total.size() < 2 || idle.size() < 2)
    throw MalformedTraceError("net_energy: traces need at least 2 samples");
  const double e_total = integrate_energy(total, total.start_time(), total.start_time() + duration);
  const double e_idle = integrate_energy(idle, idle.start_time(), idle.start_time() + duration);
  return e_total - e_idle;
}

/// Parameters of the repetition stopping rule.
struct ConfidencePolicy {
  double alpha = 0.99;
  double beta = 0.02;  // maximum relative deviation of the mean
  std::size_t min_reps = 2;
  std::size_t max_reps = 50;
  QuantileConvention quantile = QuantileConvention::one_sided;

  void validate() const {
    if (!(alpha > 0.0 && alpha < 1.0)) throw DomainError("alpha must lie in (0, 1)");
    if (!(beta > 0.0 && beta < 1.0)) throw DomainError("beta must lie in (0, 1)");
    if (min_reps < 2) throw DomainError("min_reps must be >= 2");
    if (max_reps < min_reps) throw DomainError("max_reps must be >= min_reps");
  }
};

struct SampleStats {
  double mean = 0.0;
  double std_dev = 0.0;  // n - 1 denominator; 0 for fewer than 2 values
};

inline SampleStats sample_stats(std::span<const double> xs) {
  SampleStats st;
  if (xs.empty()) return st;
  const double n = static_cast<double>(xs.size());
  st.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  if (xs.size() < 2) return st;
  double ss = 0.0;
  for (double x : xs) ss += (x - st.mean) * (x - st.mean);
  st.std_dev = std::sqrt(ss / (n - 1.0));
  return st;
}

/// True when 2 * sigma / sqrt(m) * t_alpha(m - 1) < beta * mean. The mean of
/// the observed energies stands in for the unknown true energy.
inline bool confidence_check(std::span<const double> energies, const ConfidencePolicy& policy) {
  if (energies.size() < 2) return false;
  const auto st = sample_stats(energies);
  if (!(st.mean > 0.0))
    throw InvalidMeasurementError("confidence_check: mean energy must be positive, got " +
                                  std::to_string(st.mean));
  const double m = static_cast<double>(energies.size());
  const double t = t_critical(policy.alpha, energies.size() - 1, policy.quantile);
  return 2.0 * st.std_dev / std::sqrt(m) * t < policy.beta * st.mean;
}

struct MeasurementRecord {
  std::string job_id;
  std::vector<double> energies;  // joules, one per repetition
  double mean_energy = 0.0;
  double std_dev = 0.0;
  std::size_t reps = 0;
  bool confident = false;
};

inline MeasurementRecord make_record(std::string job_id, std::vector<double> energies,
                                     bool confident) {
  MeasurementRecord rec;
  rec.job_id = std::move(job_id);
  const auto st = sample_stats(energies);
  rec.mean_energy = st.mean;
  rec.std_dev = st.std_dev;
  rec.reps = energies.size();
  rec.energies = std::move(energies);
  rec.confident = confident;
  return rec;
}

/// Invokes `run_once(rep)` (rep is 1-based) until the stopping rule passes
/// at some count >= min_reps, or max_reps is reached. Running out of
/// repetitions is not an error: the record comes back with confident=false.
/// A throwing callback surfaces as MeasurementError holding the energies
/// gathered so far.
inline MeasurementRecord measure_until_confident(const std::function<double(std::size_t)>& run_once,
                                                 const ConfidencePolicy& policy,
                                                 std::string job_id = {}) {
  policy.validate();
  std::vector<double> energies;
  energies.reserve(policy.min_reps);
  for (std::size_t rep = 1; rep <= policy.max_reps; ++rep) {
    double e;
    try {
      e = run_once(rep);
    } catch (const MeasurementError&) {
      throw;
    } catch (const std::exception& ex) {
      throw MeasurementError(rep, energies, std::current_exception(), ex.what());
    }
    energies.push_back(e);
    if (rep >= policy.min_reps && confidence_check(energies, policy))
      return make_record(std::move(job_id), std::move(energies), true);
  }
  return make_record(std::move(job_id), std::move(energies), false);
}

}  // namespace encwatt
