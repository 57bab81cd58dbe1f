#pragma once

// Relative-error least-squares fitting of the energy models, k-fold
// cross-validation and the error metrics reported per preset.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <optional>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <tuple>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "encwatt/dataset.hpp"
#include "encwatt/detail/random.hpp"
#include "encwatt/energy_models.hpp"
#include "encwatt/error.hpp"
#include "encwatt/preset.hpp"

namespace encwatt {

// ---------------------------------------------------------------------------
// Error metrics

/// Signed relative estimation error (estimated - measured) / measured.
inline double relative_error(double estimated, double measured) {
  if (!(measured > 0.0)) throw DomainError("relative_error: measured energy must be positive");
  return (estimated - measured) / measured;
}

/// Mean of |e| over a non-empty list.
inline double mean_abs_relative_error(std::span<const double> errors) {
  if (errors.empty()) throw DomainError("mean_abs_relative_error: empty error list");
  double sum = 0.0;
  for (double e : errors) sum += std::fabs(e);
  return sum / static_cast<double>(errors.size());
}

// ---------------------------------------------------------------------------
// Fitting

/// Squared: least squares on relative residuals. Absolute: mean |relative
/// residual|, solved by iteratively reweighted least squares.
enum class Objective { squared, absolute };

inline constexpr std::string_view to_string(Objective o) {
  return o == Objective::squared ? "squared" : "absolute";
}

inline Objective parse_objective(std::string_view s) {
  if (s == "squared") return Objective::squared;
  if (s == "absolute") return Objective::absolute;
  throw DomainError("unknown objective '" + std::string(s) + "'");
}

struct TimeEnergyPoint {
  double t = 0.0;  // covariate, seconds
  double e = 0.0;  // measured energy, joules
};

struct QpEnergyPoint {
  double qp = 0.0;
  double e = 0.0;
};

namespace detail {

inline constexpr int kIrlsIterations = 200;
inline constexpr double kIrlsFloor = 1e-9;

// Minimizes sum w_i (e0 + p t_i - E_i)^2 in centered form.
inline std::pair<double, double> weighted_affine(std::span<const TimeEnergyPoint> pts,
                                                 std::span<const double> w) {
  double sw = 0.0, st = 0.0, se = 0.0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    sw += w[i];
    st += w[i] * pts[i].t;
    se += w[i] * pts[i].e;
  }
  const double tbar = st / sw;
  const double ebar = se / sw;
  double sxx = 0.0, sxy = 0.0, scale = 0.0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const double dt = pts[i].t - tbar;
    sxx += w[i] * dt * dt;
    sxy += w[i] * dt * (pts[i].e - ebar);
    scale += w[i] * pts[i].t * pts[i].t;
  }
  if (!(sxx > 1e-14 * scale)) throw SingularFitError("degenerate design: all covariate values equal");
  const double p = sxy / sxx;
  return {p, ebar - p * tbar};
}

inline double abs_relative_sum(double p, double e0, std::span<const TimeEnergyPoint> pts) {
  double s = 0.0;
  for (const auto& q : pts) s += std::fabs((e0 + p * q.t - q.e) / q.e);
  return s;
}

// The absolute objective is convex and piecewise linear in (p, e0), so a
// minimizer passes through two data points. Starting from the two points
// closest to the IRLS line, pivot one anchor at a time to the best partner
// until no pivot improves.
inline std::pair<double, double> polish_l1(std::span<const TimeEnergyPoint> pts, double p, double e0) {
  const std::size_t n = pts.size();
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return std::fabs((e0 + p * pts[a].t - pts[a].e) / pts[a].e) <
           std::fabs((e0 + p * pts[b].t - pts[b].e) / pts[b].e);
  });
  std::size_t a = idx[0], b = n;
  for (std::size_t k = 1; k < n && b == n; ++k)
    if (pts[idx[k]].t != pts[a].t) b = idx[k];
  if (b == n) return {p, e0};

  auto through = [&](std::size_t i, std::size_t j) {
    const double slope = (pts[j].e - pts[i].e) / (pts[j].t - pts[i].t);
    return std::pair{slope, pts[i].e - slope * pts[i].t};
  };
  auto line = through(a, b);
  double best = abs_relative_sum(line.first, line.second, pts);
  for (std::size_t round = 0; round < 4 * n; ++round) {
    bool moved = false;
    for (int side = 0; side < 2; ++side) {
      const std::size_t anchor = side == 0 ? a : b;
      for (std::size_t k = 0; k < n; ++k) {
        if (k == a || k == b || pts[k].t == pts[anchor].t) continue;
        const auto cand = through(anchor, k);
        const double obj = abs_relative_sum(cand.first, cand.second, pts);
        if (obj < best * (1.0 - 1e-15)) {
          best = obj;
          line = cand;
          (side == 0 ? b : a) = k;
          moved = true;
          break;
        }
      }
      if (moved) break;
    }
    if (!moved) break;
  }
  if (best <= abs_relative_sum(p, e0, pts)) return line;
  return {p, e0};
}

inline void check_energies(std::span<const double> es) {
  for (double e : es)
    if (!(e > 0.0) || !std::isfinite(e)) throw DomainError("fit: energies must be positive");
}

}  // namespace detail

/// Relative-error fit of E = e0 + p * t. Needs at least 3 points with
/// distinct covariates; a non-positive slope is rejected.
inline LinearParams fit_linear(std::span<const TimeEnergyPoint> pts, CovariateKind kind,
                               Objective objective = Objective::squared) {
  if (pts.size() < 3)
    throw DomainError("linear fit needs at least 3 rows, got " + std::to_string(pts.size()));
  std::vector<double> es;
  for (const auto& p : pts) es.push_back(p.e);
  detail::check_energies(es);

  std::vector<double> w(pts.size());
  for (std::size_t i = 0; i < pts.size(); ++i) w[i] = 1.0 / (pts[i].e * pts[i].e);
  auto [p, e0] = detail::weighted_affine(pts, w);

  if (objective == Objective::absolute) {
    for (int it = 0; it < detail::kIrlsIterations; ++it) {
      for (std::size_t i = 0; i < pts.size(); ++i) {
        const double r = std::fabs((e0 + p * pts[i].t - pts[i].e) / pts[i].e);
        w[i] = 1.0 / (pts[i].e * pts[i].e * std::max(r, detail::kIrlsFloor));
      }
      const auto [np, ne0] = detail::weighted_affine(pts, w);
      const bool done = std::fabs(np - p) <= 1e-13 * std::fabs(np) &&
                        std::fabs(ne0 - e0) <= 1e-13 * (std::fabs(ne0) + std::fabs(np));
      p = np;
      e0 = ne0;
      if (done) break;
    }
    std::tie(p, e0) = detail::polish_l1(pts, p, e0);
  }
  return LinearParams::make(p, e0, kind);
}

/// Sum of squared relative residuals; the quantity fit_linear minimizes.
inline double relative_sse(const LinearParams& params, std::span<const TimeEnergyPoint> pts) {
  double s = 0.0;
  for (const auto& p : pts) {
    const double r = (params.e0 + params.p * p.t - p.e) / p.e;
    s += r * r;
  }
  return s;
}

inline double covariate_of(const DatasetRow& r, CovariateKind kind) {
  return kind == CovariateKind::own_time ? r.t_enc : r.t_enc_uf;
}

inline std::vector<TimeEnergyPoint> time_points(const Dataset& data, Preset preset,
                                                CovariateKind kind) {
  std::vector<TimeEnergyPoint> pts;
  for (auto i : canonical_order(data)) {
    const auto& r = data.rows[i];
    if (r.preset == preset) pts.push_back({covariate_of(r, kind), r.energy});
  }
  return pts;
}

inline LinearParams fit_linear_model(const Dataset& data, Preset preset, CovariateKind kind,
                                     Objective objective = Objective::squared) {
  return fit_linear(time_points(data, preset, kind), kind, objective);
}

/// Relative-error fit of the cubic QP law in the energy domain. The fitted
/// coefficients are kappa*P, lambda*P, mu*P and T0*P; with `mean_power`
/// given they are divided by it and p_avg is set to it, otherwise p_avg is
/// 1. The fitted energy must stay positive over the training QP range.
inline QpModelParams fit_qp(std::span<const QpEnergyPoint> pts,
                            Objective objective = Objective::squared,
                            std::optional<double> mean_power = std::nullopt) {
  constexpr std::size_t kCoeffs = 4;
  if (pts.size() < kCoeffs + 1)
    throw UnderdeterminedFitError("QP fit needs at least 5 rows, got " + std::to_string(pts.size()));
  std::vector<double> es;
  std::set<double> distinct;
  double qmin = 51.0, qmax = 0.0;
  for (const auto& p : pts) {
    if (!(p.qp >= 0.0 && p.qp <= 51.0)) throw DomainError("QP fit: qp outside [0, 51]");
    es.push_back(p.e);
    distinct.insert(p.qp);
    qmin = std::min(qmin, p.qp);
    qmax = std::max(qmax, p.qp);
  }
  detail::check_energies(es);
  if (distinct.size() < kCoeffs)
    throw UnderdeterminedFitError("QP fit needs at least 4 distinct QP values, got " +
                                  std::to_string(distinct.size()));
  if (mean_power && !(*mean_power > 0.0)) throw DomainError("QP fit: mean power must be positive");

  // Basis [s^3, -s^2, -s, 1] with s = qp / 51 keeps the columns comparable.
  constexpr double kScale = 51.0;
  const auto n = static_cast<Eigen::Index>(pts.size());
  Eigen::MatrixXd basis(n, kCoeffs);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double s = pts[static_cast<std::size_t>(i)].qp / kScale;
    basis(i, 0) = s * s * s;
    basis(i, 1) = -s * s;
    basis(i, 2) = -s;
    basis(i, 3) = 1.0;
  }
  Eigen::VectorXd weight(n);
  for (Eigen::Index i = 0; i < n; ++i) weight(i) = 1.0 / pts[static_cast<std::size_t>(i)].e;

  auto solve = [&](const Eigen::VectorXd& sqrt_w_over_e) {
    // Rows scaled by sqrt(w_i); residual (f(qp_i) - E_i) * sqrt(w_i).
    Eigen::MatrixXd a = basis;
    Eigen::VectorXd b(n);
    for (Eigen::Index i = 0; i < n; ++i) {
      a.row(i) *= sqrt_w_over_e(i);
      b(i) = pts[static_cast<std::size_t>(i)].e * sqrt_w_over_e(i);
    }
    Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(a);
    qr.setThreshold(1e-12);
    if (qr.rank() < static_cast<Eigen::Index>(kCoeffs))
      throw UnderdeterminedFitError("QP fit design matrix is rank deficient");
    return Eigen::VectorXd(qr.solve(b));
  };

  Eigen::VectorXd c = solve(weight);
  if (objective == Objective::absolute) {
    for (int it = 0; it < detail::kIrlsIterations; ++it) {
      Eigen::VectorXd w(n);
      for (Eigen::Index i = 0; i < n; ++i) {
        const double r = std::fabs((basis.row(i).dot(c) - pts[static_cast<std::size_t>(i)].e) /
                                   pts[static_cast<std::size_t>(i)].e);
        w(i) = weight(i) / std::sqrt(std::max(r, detail::kIrlsFloor));
      }
      const Eigen::VectorXd next = solve(w);
      const bool done = (next - c).norm() <= 1e-13 * next.norm();
      c = next;
      if (done) break;
    }
  }

  const double power = mean_power.value_or(1.0);
  QpModelParams params(c(0) / (kScale * kScale * kScale) / power, c(1) / (kScale * kScale) / power,
                       c(2) / kScale / power, c(3) / power, power, qmin, qmax);
  constexpr int kChecks = 256;
  for (int k = 0; k <= kChecks; ++k) {
    const double qp = qmin + (qmax - qmin) * k / kChecks;
    if (!(predict_energy_qp(params, qp) > 0.0))
      throw FitRejectedError("QP fit predicts non-positive energy at qp " + std::to_string(qp));
  }
  return params;
}

inline std::vector<QpEnergyPoint> qp_points(const Dataset& data, Preset preset,
                                            const std::string& class_label) {
  std::vector<QpEnergyPoint> pts;
  for (auto i : canonical_order(data)) {
    const auto& r = data.rows[i];
    if (r.preset != preset || r.class_label != class_label) continue;
    if (!r.avg_qp) throw FormatError("row " + std::to_string(i + 1) + ": column 'avg_qp' is empty");
    pts.push_back({*r.avg_qp, r.energy});
  }
  return pts;
}

inline QpModelParams fit_qp_model(const Dataset& data, Preset preset, const std::string& class_label,
                                  Objective objective = Objective::squared,
                                  std::optional<double> mean_power = std::nullopt) {
  return fit_qp(qp_points(data, preset, class_label), objective, mean_power);
}

// ---------------------------------------------------------------------------
// Cross-validation

/// Fold id for each of n items: a seeded permutation dealt round-robin into
/// k folds, so fold sizes differ by at most one.
inline std::vector<std::size_t> kfold_split(std::size_t n, std::size_t k, std::uint64_t seed) {
  if (k < 2) throw DomainError("kfold_split: k must be >= 2");
  if (n < k)
    throw DomainError("kfold_split: need n >= k (n=" + std::to_string(n) +
                      ", k=" + std::to_string(k) + ")");
  std::vector<std::size_t> perm(n);
  for (std::size_t i = 0; i < n; ++i) perm[i] = i;
  detail::Rng rng(seed);
  rng.shuffle(perm.begin(), perm.end());
  std::vector<std::size_t> fold(n);
  for (std::size_t j = 0; j < n; ++j) fold[perm[j]] = j % k;
  return fold;
}

enum class ModelKind { qp_cubic, time_linear, uf_linear };

inline constexpr std::string_view to_string(ModelKind k) {
  switch (k) {
    case ModelKind::qp_cubic: return "qp_cubic";
    case ModelKind::time_linear: return "time_linear";
    case ModelKind::uf_linear: return "uf_linear";
  }
  return "?";
}

inline ModelKind parse_model_kind(std::string_view s) {
  if (s == "qp_cubic") return ModelKind::qp_cubic;
  if (s == "time_linear") return ModelKind::time_linear;
  if (s == "uf_linear") return ModelKind::uf_linear;
  throw DomainError("unknown model kind '" + std::string(s) + "'");
}

inline CovariateKind covariate_for(ModelKind k) {
  return k == ModelKind::time_linear ? CovariateKind::own_time : CovariateKind::ultrafast_time;
}

/// Presets the model is evaluated on; the uf-linear model has no ultrafast
/// row because ultrafast is its probe.
inline std::vector<Preset> evaluated_presets(const Dataset& data, ModelKind kind) {
  std::set<Preset> present;
  for (const auto& r : data.rows) present.insert(r.preset);
  std::vector<Preset> out;
  for (auto p : present)
    if (!(kind == ModelKind::uf_linear && p == Preset::ultrafast)) out.push_back(p);
  return out;
}

/// Per-preset: folds over the preset's bitstreams (sequence x CRF), so a
/// model never trains on the bitstream it validates. Joint: one partition
/// over every row of the dataset.
enum class FoldScope { per_preset, joint };

inline constexpr std::string_view to_string(FoldScope s) {
  return s == FoldScope::per_preset ? "per_preset" : "joint";
}

inline FoldScope parse_fold_scope(std::string_view s) {
  if (s == "per_preset") return FoldScope::per_preset;
  if (s == "joint") return FoldScope::joint;
  throw DomainError("unknown fold scope '" + std::string(s) + "'");
}

struct CvOptions {
  std::size_t folds = 10;
  std::uint64_t seed = 0;
  Objective objective = Objective::squared;
  FoldScope scope = FoldScope::per_preset;
};

struct QpCellReport {
  std::string class_label;
  QpModelParams params;
  double mean_error = 0.0;
  std::size_t n_rows = 0;
};

struct PresetReport {
  Preset preset = Preset::ultrafast;
  std::size_t n_rows = 0;
  double mean_error = 0.0;  // mean |relative error| (per-class average for qp_cubic)
  std::vector<double> fold_errors;  // NaN where the fold held none of this preset's rows
  std::optional<LinearParams> linear;
  std::vector<QpCellReport> qp_cells;
};

struct FitReport {
  ModelKind model_kind = ModelKind::uf_linear;
  Objective objective = Objective::squared;
  FoldScope scope = FoldScope::per_preset;
  std::size_t folds = 0;  // 0 for an in-sample fit
  std::uint64_t seed = 0;
  std::vector<PresetReport> presets;
  std::vector<double> per_fold_errors;  // pooled over presets
  double average_error = 0.0;           // mean of the per-preset errors

  const PresetReport* find(Preset p) const {
    for (const auto& r : presets)
      if (r.preset == p) return &r;
    return nullptr;
  }
};

namespace detail {

struct PresetRows {
  Preset preset;
  std::vector<std::size_t> rows;  // dataset indices, canonical order
};

inline std::vector<PresetRows> rows_by_preset(const Dataset& data, ModelKind kind) {
  const auto order = canonical_order(data);
  std::vector<PresetRows> out;
  for (auto p : evaluated_presets(data, kind)) {
    PresetRows pr{p, {}};
    for (auto i : order)
      if (data.rows[i].preset == p) pr.rows.push_back(i);
    out.push_back(std::move(pr));
  }
  return out;
}

inline void require_qp_columns(const Dataset& data, std::span<const std::size_t> rows) {
  for (auto i : rows) {
    if (data.rows[i].class_label.empty())
      throw FormatError("row " + std::to_string(i + 1) + ": column 'class' is empty");
    if (!data.rows[i].avg_qp)
      throw FormatError("row " + std::to_string(i + 1) + ": column 'avg_qp' is empty");
  }
}

inline std::vector<std::string> classes_of(const Dataset& data, std::span<const std::size_t> rows) {
  std::set<std::string> s;
  for (auto i : rows) s.insert(data.rows[i].class_label);
  return {s.begin(), s.end()};
}

inline std::vector<TimeEnergyPoint> gather_time(const Dataset& data,
                                                std::span<const std::size_t> rows,
                                                CovariateKind kind) {
  std::vector<TimeEnergyPoint> pts;
  pts.reserve(rows.size());
  for (auto i : rows) pts.push_back({covariate_of(data.rows[i], kind), data.rows[i].energy});
  return pts;
}

inline std::vector<QpEnergyPoint> gather_qp(const Dataset& data, std::span<const std::size_t> rows,
                                            const std::string& cls) {
  std::vector<QpEnergyPoint> pts;
  for (auto i : rows)
    if (data.rows[i].class_label == cls) pts.push_back({*data.rows[i].avg_qp, data.rows[i].energy});
  return pts;
}

inline double nan() { return std::numeric_limits<double>::quiet_NaN(); }

inline double mean_or_nan(const std::vector<double>& errs) {
  return errs.empty() ? nan() : mean_abs_relative_error(errs);
}

// Full-data parameters for the report.
inline void fill_params(PresetReport& rep, const Dataset& data, const PresetRows& pr,
                        ModelKind kind, Objective objective) {
  if (kind == ModelKind::qp_cubic) {
    for (const auto& cls : classes_of(data, pr.rows)) {
      auto pts = gather_qp(data, pr.rows, cls);
      rep.qp_cells.push_back({cls, fit_qp(pts, objective), 0.0, pts.size()});
    }
  } else {
    rep.linear = fit_linear(gather_time(data, pr.rows, covariate_for(kind)), covariate_for(kind),
                            objective);
  }
}

}  // namespace detail

/// k-fold cross-validation. Each fold trains on the complement and records
/// relative errors on its held-out rows; a preset's error is the mean
/// |error| over all of its held-out rows, or for the QP model the average
/// of per-class means. Any fit failure aborts with the fold index.
inline FitReport cross_validate(const Dataset& data, ModelKind kind, const CvOptions& opt = {}) {
  FitReport rep;
  rep.model_kind = kind;
  rep.objective = opt.objective;
  rep.scope = opt.scope;
  rep.folds = opt.folds;
  rep.seed = opt.seed;
  if (opt.folds < 2) throw DomainError("cross-validation needs at least 2 folds");

  const auto groups = detail::rows_by_preset(data, kind);
  if (groups.empty()) throw DomainError("cross-validation: no rows to evaluate");

  // Fold of each dataset row.
  std::vector<std::size_t> fold_of(data.rows.size(), 0);
  if (opt.scope == FoldScope::joint) {
    const auto order = canonical_order(data);
    const auto assign = kfold_split(order.size(), opt.folds, opt.seed);
    for (std::size_t j = 0; j < order.size(); ++j) fold_of[order[j]] = assign[j];
  } else {
    for (const auto& g : groups) {
      if (g.rows.size() < opt.folds)
        throw DomainError("preset " + std::string(to_string(g.preset)) + " has " +
                          std::to_string(g.rows.size()) + " rows, fewer than " +
                          std::to_string(opt.folds) + " folds");
      const auto assign = kfold_split(g.rows.size(), opt.folds, opt.seed);
      for (std::size_t j = 0; j < g.rows.size(); ++j) fold_of[g.rows[j]] = assign[j];
    }
  }

  std::vector<std::vector<double>> pooled(opt.folds);
  for (const auto& g : groups) {
    if (kind == ModelKind::qp_cubic) detail::require_qp_columns(data, g.rows);
    PresetReport pr;
    pr.preset = g.preset;
    pr.n_rows = g.rows.size();
    std::vector<double> all_errors;
    std::map<std::string, std::vector<double>> class_errors;

    for (std::size_t f = 0; f < opt.folds; ++f) {
      std::vector<std::size_t> train, test;
      for (auto i : g.rows) (fold_of[i] == f ? test : train).push_back(i);
      std::vector<double> fold_errs;
      if (!test.empty()) {
        try {
          if (kind == ModelKind::qp_cubic) {
            for (const auto& cls : detail::classes_of(data, test)) {
              const auto params = fit_qp(detail::gather_qp(data, train, cls), opt.objective);
              for (auto i : test) {
                const auto& r = data.rows[i];
                if (r.class_label != cls) continue;
                const double e = relative_error(predict_energy_qp(params, *r.avg_qp), r.energy);
                fold_errs.push_back(e);
                class_errors[cls].push_back(e);
              }
            }
          } else {
            const auto cov = covariate_for(kind);
            const auto params = fit_linear(detail::gather_time(data, train, cov), cov, opt.objective);
            for (auto i : test) {
              const auto& r = data.rows[i];
              fold_errs.push_back(
                  relative_error(predict_energy_linear(params, covariate_of(r, cov)), r.energy));
            }
          }
        } catch (const FoldError&) {
          throw;
        } catch (const Error& e) {
          throw FoldError(f, std::string(to_string(g.preset)) + ": " + e.what());
        }
      }
      pr.fold_errors.push_back(detail::mean_or_nan(fold_errs));
      all_errors.insert(all_errors.end(), fold_errs.begin(), fold_errs.end());
      pooled[f].insert(pooled[f].end(), fold_errs.begin(), fold_errs.end());
    }

    if (kind == ModelKind::qp_cubic) {
      double sum = 0.0;
      for (const auto& [cls, errs] : class_errors) sum += mean_abs_relative_error(errs);
      pr.mean_error = sum / static_cast<double>(class_errors.size());
    } else {
      pr.mean_error = mean_abs_relative_error(all_errors);
    }
    detail::fill_params(pr, data, g, kind, opt.objective);
    for (auto& cell : pr.qp_cells)
      if (auto it = class_errors.find(cell.class_label); it != class_errors.end())
        cell.mean_error = mean_abs_relative_error(it->second);
    rep.presets.push_back(std::move(pr));
  }

  for (const auto& errs : pooled) rep.per_fold_errors.push_back(detail::mean_or_nan(errs));
  double sum = 0.0;
  for (const auto& p : rep.presets) sum += p.mean_error;
  rep.average_error = sum / static_cast<double>(rep.presets.size());
  return rep;
}

/// In-sample fit on all rows; errors are training errors.
inline FitReport fit_report(const Dataset& data, ModelKind kind,
                            Objective objective = Objective::squared) {
  FitReport rep;
  rep.model_kind = kind;
  rep.objective = objective;
  rep.folds = 0;
  const auto groups = detail::rows_by_preset(data, kind);
  if (groups.empty()) throw DomainError("fit: no rows to evaluate");
  for (const auto& g : groups) {
    if (kind == ModelKind::qp_cubic) detail::require_qp_columns(data, g.rows);
    PresetReport pr;
    pr.preset = g.preset;
    pr.n_rows = g.rows.size();
    try {
      detail::fill_params(pr, data, g, kind, objective);
    } catch (const FormatError&) {
      throw;
    } catch (const Error& e) {
      throw Error(std::string(to_string(g.preset)) + ": " + e.what());
    }
    if (kind == ModelKind::qp_cubic) {
      double sum = 0.0;
      for (auto& cell : pr.qp_cells) {
        std::vector<double> errs;
        for (const auto& p : detail::gather_qp(data, g.rows, cell.class_label))
          errs.push_back(relative_error(predict_energy_qp(cell.params, p.qp), p.e));
        cell.mean_error = mean_abs_relative_error(errs);
        sum += cell.mean_error;
      }
      pr.mean_error = sum / static_cast<double>(pr.qp_cells.size());
    } else {
      std::vector<double> errs;
      for (const auto& p : detail::gather_time(data, g.rows, covariate_for(kind)))
        errs.push_back(relative_error(predict_energy_linear(*pr.linear, p.t), p.e));
      pr.mean_error = mean_abs_relative_error(errs);
    }
    rep.presets.push_back(std::move(pr));
  }
  double sum = 0.0;
  for (const auto& p : rep.presets) sum += p.mean_error;
  rep.average_error = sum / static_cast<double>(rep.presets.size());
  return rep;
}

// ---------------------------------------------------------------------------
// Time/energy linearity diagnostics

/// Per preset: points are (mean time, mean energy) over sequences at each
/// CRF. r is the Pearson correlation of those points (NaN when undefined).
struct LinearityRow {
  Preset preset = Preset::ultrafast;
  std::size_t points = 0;
  double r_own_time = 0.0;
  double r_uf_time = 0.0;
  double slope_own_time = 0.0;  // W
  double slope_uf_time = 0.0;   // W
};

namespace detail {

inline std::pair<double, double> pearson_and_slope(const std::vector<double>& x,
                                                   const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  if (x.size() < 2) return {nan(), nan()};
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double sxx = 0.0, syy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  const double r = (sxx > 0.0 && syy > 0.0) ? sxy / std::sqrt(sxx * syy) : nan();
  const double slope = sxx > 0.0 ? sxy / sxx : nan();
  return {r, slope};
}

}  // namespace detail

inline std::vector<LinearityRow> linearity_diagnostics(const Dataset& data) {
  struct Acc {
    double t = 0.0, tuf = 0.0, e = 0.0;
    std::size_t n = 0;
  };
  std::map<Preset, std::map<double, Acc>> acc;
  for (const auto& r : data.rows) {
    auto& a = acc[r.preset][r.crf];
    a.t += r.t_enc;
    a.tuf += r.t_enc_uf;
    a.e += r.energy;
    ++a.n;
  }
  std::vector<LinearityRow> out;
  for (const auto& [preset, by_crf] : acc) {
    std::vector<double> t, tuf, e;
    for (const auto& [crf, a] : by_crf) {
      const double n = static_cast<double>(a.n);
      t.push_back(a.t / n);
      tuf.push_back(a.tuf / n);
      e.push_back(a.e / n);
    }
    LinearityRow row;
    row.preset = preset;
    row.points = t.size();
    std::tie(row.r_own_time, row.slope_own_time) = detail::pearson_and_slope(t, e);
    std::tie(row.r_uf_time, row.slope_uf_time) = detail::pearson_and_slope(tuf, e);
    out.push_back(row);
  }
  return out;
}

}  // namespace encwatt
