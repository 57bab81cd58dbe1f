#pragma once

// Campaign dataset: one row per (sequence, preset, CRF) bitstream.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <optional>
#include <ostream>
#include <set>
#include <string>
#include <string_view>
#include <tuple>
#include <vector>

#include "encwatt/detail/text.hpp"
#include "encwatt/error.hpp"
#include "encwatt/preset.hpp"

namespace encwatt {

struct DatasetRow {
  std::string sequence_id;
  std::string class_label;
  Preset preset = Preset::ultrafast;
  double crf = 0.0;
  std::size_t frames = 0;
  std::optional<double> avg_qp;
  double t_enc = 0.0;     // s
  double t_enc_uf = 0.0;  // s, ultrafast encode of the same (sequence, crf)
  double energy = 0.0;    // J
  std::size_t reps = 0;
  bool confident = false;
};

using RowKey = std::tuple<std::string, Preset, double>;

inline RowKey key_of(const DatasetRow& r) { return {r.sequence_id, r.preset, r.crf}; }

struct Dataset {
  std::vector<DatasetRow> rows;
  std::string provenance;
};

/// Checks the per-row and cross-row invariants: positive energy and times,
/// unique (sequence, preset, crf) keys, and an ultrafast row for every
/// (sequence, crf) present. Diagnostics name the 1-based data row.
inline void validate_dataset(const Dataset& ds) {
  std::set<RowKey> keys;
  std::set<std::pair<std::string, double>> with_uf;
  for (std::size_t i = 0; i < ds.rows.size(); ++i) {
    const auto& r = ds.rows[i];
    const auto where = "row " + std::to_string(i + 1);
    if (r.sequence_id.empty()) throw FormatError(where + ": column 'sequence_id' is empty");
    if (!(r.energy > 0.0)) throw FormatError(where + ": column 'energy_j' must be positive");
    if (!(r.t_enc > 0.0)) throw FormatError(where + ": column 't_enc_s' must be positive");
    if (!(r.t_enc_uf > 0.0)) throw FormatError(where + ": column 't_enc_uf_s' must be positive");
    if (r.avg_qp && !(*r.avg_qp >= 0.0 && *r.avg_qp <= 51.0))
      throw FormatError(where + ": column 'avg_qp' outside [0, 51]");
    if (!keys.insert(key_of(r)).second)
      throw FormatError(where + ": duplicate key (" + r.sequence_id + ", " +
                        std::string(to_string(r.preset)) + ", crf " +
                        detail::format_double(r.crf) + ")");
    if (r.preset == Preset::ultrafast) with_uf.emplace(r.sequence_id, r.crf);
  }
  for (std::size_t i = 0; i < ds.rows.size(); ++i) {
    const auto& r = ds.rows[i];
    if (!with_uf.count({r.sequence_id, r.crf}))
      throw FormatError("row " + std::to_string(i + 1) + ": no ultrafast row for (" +
                        r.sequence_id + ", crf " + detail::format_double(r.crf) + ")");
  }
}

/// Sorted by (sequence_id, preset, crf).
inline std::vector<std::size_t> canonical_order(const Dataset& ds) {
  std::vector<std::size_t> idx(ds.rows.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    return key_of(ds.rows[a]) < key_of(ds.rows[b]);
  });
  return idx;
}

// ---------------------------------------------------------------------------
// CSV

inline constexpr std::string_view kDatasetCsvHeader =
    "sequence_id,class,preset,crf,frames,avg_qp,t_enc_s,t_enc_uf_s,energy_j,reps,confident";

inline void write_dataset_header(std::ostream& out) { out << kDatasetCsvHeader << '\n'; }

inline void write_dataset_row(std::ostream& out, const DatasetRow& r) {
  out << r.sequence_id << ',' << r.class_label << ',' << to_string(r.preset) << ','
      << detail::format_double(r.crf) << ',' << r.frames << ','
      << (r.avg_qp ? detail::format_double(*r.avg_qp) : std::string()) << ','
      << detail::format_double(r.t_enc) << ',' << detail::format_double(r.t_enc_uf) << ','
      << detail::format_double(r.energy) << ',' << r.reps << ','
      << (r.confident ? "true" : "false") << '\n';
}

inline void write_dataset_csv(std::ostream& out, const Dataset& ds) {
  write_dataset_header(out);
  for (const auto& r : ds.rows) write_dataset_row(out, r);
}

inline void write_dataset_csv(const std::filesystem::path& path, const Dataset& ds) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write dataset " + path.string());
  write_dataset_csv(out, ds);
}

/// Parses rows without the cross-row checks of validate_dataset, so
/// partially written campaign files can be resumed.
inline Dataset parse_dataset_rows(std::istream& in, const std::string& label) {
  static constexpr std::array<std::string_view, 11> columns = {
      "sequence_id", "class", "preset", "crf", "frames", "avg_qp",
      "t_enc_s", "t_enc_uf_s", "energy_j", "reps", "confident"};
  Dataset ds;
  ds.provenance = label;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto sv = std::string_view(line);
    if (!sv.empty() && sv.back() == '\r') sv.remove_suffix(1);
    if (lineno == 1) {
      if (sv != kDatasetCsvHeader)
        throw FormatError(label + ": line 1: expected header '" + std::string(kDatasetCsvHeader) +
                          "'");
      continue;
    }
    if (detail::trim(sv).empty()) continue;
    const auto f = detail::split(sv, ',');
    const auto where = label + ": line " + std::to_string(lineno);
    if (f.size() != columns.size())
      throw FormatError(where + ": expected " + std::to_string(columns.size()) + " columns, got " +
                        std::to_string(f.size()));
    auto col_error = [&](std::size_t c, std::string_view why) {
      return FormatError(where + ": column '" + std::string(columns[c]) + "' " + std::string(why));
    };
    auto num = [&](std::size_t c) {
      const auto v = detail::parse_double(detail::trim(f[c]));
      if (!v || !std::isfinite(*v)) throw col_error(c, "is not a number");
      return *v;
    };
    auto count = [&](std::size_t c) {
      const auto v = detail::parse_int<std::size_t>(detail::trim(f[c]));
      if (!v) throw col_error(c, "is not a non-negative integer");
      return *v;
    };
    DatasetRow r;
    r.sequence_id = std::string(detail::trim(f[0]));
    r.class_label = std::string(detail::trim(f[1]));
    const auto preset = try_parse_preset(detail::trim(f[2]));
    if (!preset) throw col_error(2, "holds unknown preset '" + std::string(f[2]) + "'");
    r.preset = *preset;
    r.crf = num(3);
    r.frames = count(4);
    if (!detail::trim(f[5]).empty()) r.avg_qp = num(5);
    r.t_enc = num(6);
    r.t_enc_uf = num(7);
    r.energy = num(8);
    r.reps = count(9);
    const auto conf = detail::trim(f[10]);
    if (conf == "true")
      r.confident = true;
    else if (conf == "false")
      r.confident = false;
    else
      throw col_error(10, "must be true or false");
    ds.rows.push_back(std::move(r));
  }
  if (lineno == 0) throw FormatError(label + ": empty dataset file");
  return ds;
}

inline Dataset read_dataset_csv(std::istream& in, const std::string& label = "<stream>") {
  auto ds = parse_dataset_rows(in, label);
  try {
    validate_dataset(ds);
  } catch (const FormatError& e) {
    throw FormatError(label + ": " + e.what());
  }
  return ds;
}

inline Dataset read_dataset_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open dataset " + path.string());
  return read_dataset_csv(in, path.string());
}

}  // namespace encwatt
