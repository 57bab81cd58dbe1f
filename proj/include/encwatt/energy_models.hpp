#pragma once

// Prediction side of the three energy models:
//   QP-cubic     E = (kappa*qp^3 - lambda*qp^2 - mu*qp + T0) * P_avg
//   time-linear  E = E0 + P * t_enc
//   uf-linear    E = E0 + P * t_enc,uf   (t of an ultrafast probe encode)

#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <istream>
#include <ostream>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "encwatt/detail/text.hpp"
#include "encwatt/error.hpp"
#include "encwatt/preset.hpp"

namespace encwatt {

enum class CovariateKind { own_time, ultrafast_time };

inline constexpr std::string_view to_string(CovariateKind k) {
  return k == CovariateKind::own_time ? "own_time" : "ultrafast_time";
}

inline CovariateKind parse_covariate_kind(std::string_view s) {
  if (s == "own_time") return CovariateKind::own_time;
  if (s == "ultrafast_time") return CovariateKind::ultrafast_time;
  throw DomainError("unknown covariate kind '" + std::string(s) + "'");
}

/// Affine energy law E = e0 + p * t. Slope in watts, offset in joules.
struct LinearParams {
  double p = 0.0;
  double e0 = 0.0;
  CovariateKind covariate = CovariateKind::ultrafast_time;

  static LinearParams make(double p, double e0, CovariateKind kind) {
    if (!(p > 0.0) || !std::isfinite(p))
      throw FitRejectedError("linear model slope must be positive, got " + std::to_string(p));
    if (!std::isfinite(e0)) throw FitRejectedError("linear model offset is not finite");
    return {p, e0, kind};
  }
};

inline double predict_energy_linear(const LinearParams& params, double t) {
  if (!(t > 0.0)) throw DomainError("predict_energy_linear: time must be positive");
  return params.e0 + params.p * t;
}

/// Coefficients of the cubic encoding-time law and the average power that
/// turns time into energy. When fitted in the energy domain without a
/// measured power, p_avg is 1 and the coefficients carry joules.
class QpModelParams {
public:
  QpModelParams(double kappa, double lam, double mu, double t0, double p_avg,
                double qp_min = 0.0, double qp_max = 51.0)
      : kappa_(kappa), lam_(lam), mu_(mu), t0_(t0), p_avg_(p_avg), qp_min_(qp_min),
        qp_max_(qp_max) {
    if (!(p_avg > 0.0)) throw DomainError("QP model: p_avg must be positive");
    if (!(qp_min <= qp_max)) throw DomainError("QP model: empty calibrated QP range");
  }

  double kappa() const noexcept { return kappa_; }
  double lambda() const noexcept { return lam_; }
  double mu() const noexcept { return mu_; }
  double t0() const noexcept { return t0_; }
  double p_avg() const noexcept { return p_avg_; }
  double qp_min() const noexcept { return qp_min_; }
  double qp_max() const noexcept { return qp_max_; }

  /// False when qp lies outside the QP range the model was calibrated on.
  bool covers(double qp) const noexcept { return qp >= qp_min_ && qp <= qp_max_; }

private:
  double kappa_, lam_, mu_, t0_, p_avg_, qp_min_, qp_max_;
};

inline double predict_time_qp(const QpModelParams& m, double qp) {
  if (!(qp >= 0.0 && qp <= 51.0)) throw DomainError("QP must lie in [0, 51]");
  return ((m.kappa() * qp - m.lambda()) * qp - m.mu()) * qp + m.t0();
}

inline double predict_energy_qp(const QpModelParams& m, double qp) {
  return predict_time_qp(m, qp) * m.p_avg();
}

/// Per-preset uf-linear parameters published with the model. Ultrafast has
/// no entry: it is the probe itself.
class DefaultParamTable {
public:
  explicit DefaultParamTable(std::map<Preset, LinearParams> rows) : rows_(std::move(rows)) {}

  std::optional<LinearParams> lookup(Preset p) const {
    if (auto it = rows_.find(p); it != rows_.end()) return it->second;
    return std::nullopt;
  }
  const std::map<Preset, LinearParams>& rows() const noexcept { return rows_; }
  std::size_t size() const noexcept { return rows_.size(); }

private:
  std::map<Preset, LinearParams> rows_;
};

inline DefaultParamTable load_default_params() {
  constexpr auto uf = CovariateKind::ultrafast_time;
  return DefaultParamTable({
      {Preset::superfast, {160.36, -9.73, uf}},
      {Preset::veryfast, {251.67, -24.28, uf}},
      {Preset::faster, {252.48, -20.15, uf}},
      {Preset::fast, {378.68, -19.02, uf}},
      {Preset::medium, {358.21, -25.51, uf}},
      {Preset::slow, {1137.65, -70.20, uf}},
      {Preset::slower, {4025.44, 230.18, uf}},
      {Preset::veryslow, {6771.39, 425.15, uf}},
  });
}

// ---------------------------------------------------------------------------
// Parameter files
//
//   preset,covariate_kind,p_w,e0_j,n_rows,objective
//   superfast,ultrafast_time,160.36,-9.73,0,published
//
// n_rows and objective are fit metadata; readers ignore them.

inline constexpr std::string_view kParamCsvHeader = "preset,covariate_kind,p_w,e0_j,n_rows,objective";

struct ParamRecord {
  Preset preset = Preset::ultrafast;
  LinearParams params;
  std::size_t n_rows = 0;
  std::string objective;
};

inline void write_param_csv(std::ostream& out, const std::vector<ParamRecord>& records) {
  out << kParamCsvHeader << '\n';
  for (const auto& r : records)
    out << to_string(r.preset) << ',' << to_string(r.params.covariate) << ','
        << detail::format_double(r.params.p) << ',' << detail::format_double(r.params.e0) << ','
        << r.n_rows << ',' << r.objective << '\n';
}

inline std::vector<ParamRecord> read_param_csv(std::istream& in, const std::string& label) {
  std::string line;
  std::size_t lineno = 0;
  std::vector<ParamRecord> out;
  while (std::getline(in, line)) {
    ++lineno;
    const auto sv = detail::trim(line);
    if (lineno == 1) {
      if (sv != kParamCsvHeader)
        throw FormatError(label + ": expected header '" + std::string(kParamCsvHeader) + "'");
      continue;
    }
    if (sv.empty() || sv.front() == '#') continue;
    const auto f = detail::split(sv, ',');
    const auto where = label + ": line " + std::to_string(lineno);
    if (f.size() != 6) throw FormatError(where + ": expected 6 columns");
    ParamRecord r;
    const auto preset = try_parse_preset(f[0]);
    if (!preset) throw FormatError(where + ": unknown preset '" + std::string(f[0]) + "'");
    r.preset = *preset;
    const auto p = detail::parse_double(f[2]);
    const auto e0 = detail::parse_double(f[3]);
    const auto n = detail::parse_int<std::size_t>(f[4]);
    if (!p || !e0 || !n) throw FormatError(where + ": unparseable number");
    try {
      r.params = LinearParams::make(*p, *e0, parse_covariate_kind(f[1]));
    } catch (const Error& e) {
      throw FormatError(where + ": " + e.what());
    }
    r.n_rows = *n;
    r.objective = std::string(f[5]);
    out.push_back(std::move(r));
  }
  if (lineno == 0) throw FormatError(label + ": empty parameter file");
  return out;
}

inline std::vector<ParamRecord> read_param_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open parameter file " + path.string());
  return read_param_csv(in, path.string());
}

}  // namespace encwatt
