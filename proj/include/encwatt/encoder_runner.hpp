#pragma once

// Runs external encoder processes, measures them, and drives whole
// sequence x preset x CRF campaigns.

#include <fcntl.h>
#include <spawn.h>
#include <sys/wait.h>
#include <unistd.h>

#include <cerrno>
#include <chrono>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <regex>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "encwatt/dataset.hpp"
#include "encwatt/detail/text.hpp"
#include "encwatt/energy_core.hpp"
#include "encwatt/error.hpp"
#include "encwatt/meter_io.hpp"
#include "encwatt/preset.hpp"

extern char** environ;

namespace encwatt {

struct EncodeJob {
  std::string sequence_id;
  std::string class_label;
  std::filesystem::path input_path;
  std::size_t frames = 100;
  Preset preset = Preset::medium;
  double crf = 23.0;
  std::vector<std::string> extra_args;

  void validate() const {
    if (sequence_id.empty()) throw DomainError("job: sequence_id is empty");
    for (const auto* s : {&sequence_id, &class_label})
      if (s->find_first_of(",\n") != std::string::npos)
        throw DomainError("job: identifiers may not contain commas or newlines");
    if (frames < 1) throw DomainError("job " + sequence_id + ": frames must be >= 1");
    if (!(crf >= 0.0 && crf <= 51.0)) throw DomainError("job " + sequence_id + ": crf outside [0, 51]");
  }

  std::string id() const {
    return sequence_id + "/" + std::string(to_string(preset)) + "/crf" + detail::format_double(crf);
  }
};

struct EncodeResult {
  EncodeJob job;
  double wall_time = 0.0;  // s, spawn to exit
  std::optional<double> avg_qp;
  std::uintmax_t bitstream_bytes = 0;
  std::string encoder_log;
  std::vector<std::string> warnings;
};

/// Matches x265's final summary line first, then any "Avg QP:" figure.
inline std::vector<std::string> default_qp_patterns() {
  return {R"(encoded \d+ frames[^\n]*Avg QP:\s*([0-9]+(?:\.[0-9]+)?))",
          R"(Avg QP:\s*([0-9]+(?:\.[0-9]+)?))"};
}

struct EncoderConfig {
  // Placeholders: {input} {output} {preset} {crf} {frames}. Extra job
  // arguments are appended, shell-quoted.
  std::string command_template =
      "x265 --input {input} --preset {preset} --crf {crf} --frames {frames} -o {output}";
  std::filesystem::path output_dir = std::filesystem::temp_directory_path();
  std::vector<std::string> qp_patterns = default_qp_patterns();
};

/// Last match of the first pattern that matches anywhere in the log.
inline std::optional<double> parse_avg_qp(const std::string& log,
                                          const std::vector<std::string>& patterns) {
  for (const auto& pat : patterns) {
    const std::regex re(pat);
    std::optional<double> last;
    for (auto it = std::sregex_iterator(log.begin(), log.end(), re); it != std::sregex_iterator();
         ++it)
      if (it->size() > 1) last = detail::parse_double((*it)[1].str());
    if (last) return last;
  }
  return std::nullopt;
}

inline std::string expand_command(const std::string& tmpl, const EncodeJob& job,
                                  const std::filesystem::path& output) {
  const std::map<std::string, std::string> values = {
      {"{input}", detail::shell_quote(job.input_path.string())},
      {"{output}", detail::shell_quote(output.string())},
      {"{preset}", std::string(to_string(job.preset))},
      {"{crf}", detail::format_double(job.crf)},
      {"{frames}", std::to_string(job.frames)},
  };
  std::string out;
  for (std::size_t i = 0; i < tmpl.size();) {
    bool replaced = false;
    if (tmpl[i] == '{') {
      for (const auto& [key, val] : values) {
        if (tmpl.compare(i, key.size(), key) == 0) {
          out += val;
          i += key.size();
          replaced = true;
          break;
        }
      }
    }
    if (!replaced) out += tmpl[i++];
  }
  for (const auto& a : job.extra_args) out += " " + detail::shell_quote(a);
  return out;
}

namespace detail {

struct ProcessOutcome {
  int status = 0;  // raw waitpid status
  std::string output;
  double wall_time = 0.0;
};

// /bin/sh -c cmd with stdout and stderr merged into one pipe.
inline ProcessOutcome run_shell(const std::string& cmd) {
  int fds[2];
  if (::pipe2(fds, O_CLOEXEC) != 0) throw Error(std::string("pipe: ") + std::strerror(errno));
  posix_spawn_file_actions_t fa;
  posix_spawn_file_actions_init(&fa);
  posix_spawn_file_actions_addopen(&fa, 0, "/dev/null", O_RDONLY, 0);
  posix_spawn_file_actions_adddup2(&fa, fds[1], 1);
  posix_spawn_file_actions_adddup2(&fa, fds[1], 2);
  std::string sh = "sh", dash_c = "-c", command = cmd;
  char* argv[] = {sh.data(), dash_c.data(), command.data(), nullptr};

  const auto t0 = std::chrono::steady_clock::now();
  pid_t pid = 0;
  const int rc = ::posix_spawn(&pid, "/bin/sh", &fa, nullptr, argv, environ);
  posix_spawn_file_actions_destroy(&fa);
  ::close(fds[1]);
  if (rc != 0) {
    ::close(fds[0]);
    throw EncodeFailedError(std::string("cannot spawn encoder: ") + std::strerror(rc));
  }
  ProcessOutcome out;
  char buf[4096];
  while (true) {
    const auto n = ::read(fds[0], buf, sizeof buf);
    if (n > 0) {
      out.output.append(buf, static_cast<std::size_t>(n));
    } else if (n == 0 || errno != EINTR) {
      break;
    }
  }
  ::close(fds[0]);
  while (::waitpid(pid, &out.status, 0) < 0 && errno == EINTR) {
  }
  out.wall_time = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

inline std::string log_tail(const std::string& log, std::size_t lines = 20) {
  if (lines == 0) return {};
  // A trailing newline terminates the last line rather than starting a new one.
  std::size_t pos = log.size();
  if (pos > 0 && log[pos - 1] == '\n') --pos;
  for (std::size_t seen = 0; pos > 0; --pos)
    if (log[pos - 1] == '\n' && ++seen == lines) return log.substr(pos);
  return log;
}

}  // namespace detail

inline std::filesystem::path output_path_for(const EncodeJob& job, const std::filesystem::path& dir) {
  return dir / (job.sequence_id + "_" + std::string(to_string(job.preset)) + "_crf" +
                detail::format_double(job.crf) + ".hevc");
}

/// Spawns the encoder for one job and times it from spawn to exit.
inline EncodeResult run_encode(const EncodeJob& job, const EncoderConfig& cfg) {
  job.validate();
  std::error_code ec;
  if (!std::filesystem::exists(job.input_path, ec))
    throw EncodeFailedError("input file not found: " + job.input_path.string());
  const auto output = output_path_for(job, cfg.output_dir);
  const auto proc = detail::run_shell(expand_command(cfg.command_template, job, output));

  if (!WIFEXITED(proc.status) || WEXITSTATUS(proc.status) != 0) {
    const std::string how = WIFEXITED(proc.status)
                                ? "exit status " + std::to_string(WEXITSTATUS(proc.status))
                                : "signal " + std::to_string(WTERMSIG(proc.status));
    throw EncodeFailedError("encoder failed for " + job.id() + " (" + how + ")",
                            detail::log_tail(proc.output));
  }

  EncodeResult res;
  res.job = job;
  res.wall_time = proc.wall_time;
  res.encoder_log = proc.output;
  res.avg_qp = parse_avg_qp(proc.output, cfg.qp_patterns);
  if (res.avg_qp && !(*res.avg_qp >= 0.0 && *res.avg_qp <= 51.0)) {
    res.warnings.push_back("parsed avg QP " + detail::format_double(*res.avg_qp) +
                           " outside [0, 51], ignored");
    res.avg_qp.reset();
  }
  if (!res.avg_qp) res.warnings.push_back("no average QP found in encoder log");
  if (std::filesystem::exists(output, ec)) res.bitstream_bytes = std::filesystem::file_size(output, ec);
  return res;
}

// ---------------------------------------------------------------------------
// Measured encodes

enum class IdleStrategy {
  per_repetition,  // idle capture of equal length right after each encode
  shared,          // one baseline trace reused for every repetition
};

struct MeasureOptions {
  ConfidencePolicy policy;
  IdleStrategy idle = IdleStrategy::per_repetition;
  std::optional<PowerTrace> shared_idle;  // required for IdleStrategy::shared
};

struct MeasuredEncode {
  MeasurementRecord record;
  EncodeResult result;  // from the final repetition
  std::vector<double> wall_times;
  bool negative_energy = false;  // some repetition had idle above total

  double mean_wall_time() const {
    return sample_stats(wall_times).mean;
  }
};

/// Per repetition: start the meter, run the encoder, stop the meter, take
/// the idle baseline, and record total minus idle over the encode's wall
/// time. Repeats until the stopping rule passes.
inline MeasuredEncode run_measured_encode(const EncodeJob& job, const EncoderConfig& encoder,
                                          Meter& meter, const MeasureOptions& opt) {
  opt.policy.validate();
  if (opt.idle == IdleStrategy::shared && !opt.shared_idle)
    throw DomainError("shared idle strategy needs an idle trace");
  MeasuredEncode out;
  auto once = [&](std::size_t) {
    meter.start();
    EncodeResult res;
    try {
      res = run_encode(job, encoder);
    } catch (...) {
      try {
        meter.stop();
      } catch (...) {
      }
      throw;
    }
    const PowerTrace total = meter.stop();
    const PowerTrace idle =
        opt.idle == IdleStrategy::shared ? *opt.shared_idle : meter.capture_idle(res.wall_time);
    const double e = net_energy(total, idle, res.wall_time);
    if (e < 0.0) out.negative_energy = true;
    out.wall_times.push_back(res.wall_time);
    out.result = std::move(res);
    return e;
  };
  out.record = measure_until_confident(once, opt.policy, job.id());
  return out;
}

// ---------------------------------------------------------------------------
// Campaign manifests: JSON Lines, one job per line, '#' comments allowed.
//   {"sequence_id": "B_01", "class": "B", "input": "b01.yuv", "frames": 100,
//    "preset": "medium", "crf": 23, "extra_args": ["--input-res", "1920x1080"]}

inline EncodeJob job_from_json(const nlohmann::json& j) {
  static const std::set<std::string> known = {"sequence_id", "class", "input", "frames",
                                              "preset",      "crf",   "extra_args"};
  if (!j.is_object()) throw DomainError("job must be a JSON object");
  for (const auto& [k, v] : j.items())
    if (!known.count(k)) throw DomainError("unknown field '" + k + "'");
  for (const char* req : {"sequence_id", "input", "preset", "crf"})
    if (!j.contains(req)) throw DomainError(std::string("missing field '") + req + "'");
  EncodeJob job;
  job.sequence_id = j.at("sequence_id").get<std::string>();
  job.class_label = j.value("class", std::string());
  job.input_path = j.at("input").get<std::string>();
  job.frames = j.value("frames", std::size_t{100});
  job.preset = parse_preset(j.at("preset").get<std::string>());
  job.crf = j.at("crf").get<double>();
  if (j.contains("extra_args")) job.extra_args = j.at("extra_args").get<std::vector<std::string>>();
  job.validate();
  return job;
}

inline nlohmann::json job_to_json(const EncodeJob& job) {
  nlohmann::json j = {{"sequence_id", job.sequence_id}, {"class", job.class_label},
                      {"input", job.input_path.string()}, {"frames", job.frames},
                      {"preset", std::string(to_string(job.preset))}, {"crf", job.crf}};
  if (!job.extra_args.empty()) j["extra_args"] = job.extra_args;
  return j;
}

/// Relative input paths resolve against `base_dir`.
inline std::vector<EncodeJob> parse_manifest(std::istream& in, const std::string& label,
                                             const std::filesystem::path& base_dir = {}) {
  std::vector<EncodeJob> jobs;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto sv = detail::trim(line);
    if (sv.empty() || sv.front() == '#') continue;
    try {
      auto job = job_from_json(nlohmann::json::parse(sv));
      if (job.input_path.is_relative() && !base_dir.empty()) job.input_path = base_dir / job.input_path;
      jobs.push_back(std::move(job));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(label + ": line " + std::to_string(lineno) + ": " + e.what());
    } catch (const Error& e) {
      throw FormatError(label + ": line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  if (jobs.empty()) throw FormatError(label + ": manifest lists no jobs");
  return jobs;
}

inline std::vector<EncodeJob> read_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open manifest " + path.string());
  return parse_manifest(in, path.string(), path.parent_path());
}

/// Adds an ultrafast job for every (sequence, crf) lacking one, drops
/// duplicate keys, and orders ultrafast jobs first. Returns the number of
/// jobs added.
inline std::size_t close_over_ultrafast(std::vector<EncodeJob>& jobs) {
  std::set<RowKey> seen;
  std::vector<EncodeJob> uf, rest;
  for (const auto& j : jobs) {
    if (!seen.insert({j.sequence_id, j.preset, j.crf}).second) continue;
    (j.preset == Preset::ultrafast ? uf : rest).push_back(j);
  }
  std::size_t added = 0;
  for (const auto& j : rest) {
    if (seen.insert({j.sequence_id, Preset::ultrafast, j.crf}).second) {
      auto probe = j;
      probe.preset = Preset::ultrafast;
      uf.push_back(std::move(probe));
      ++added;
    }
  }
  jobs = std::move(uf);
  jobs.insert(jobs.end(), rest.begin(), rest.end());
  return added;
}

struct JobFailure {
  EncodeJob job;
  std::string reason;
  std::size_t repetition = 0;  // 0 when the failure was not inside a repetition
};

struct CampaignConfig {
  EncoderConfig encoder;
  MeasureOptions measure;
  std::optional<std::filesystem::path> out_path;  // incremental CSV; resumed when present
  std::ostream* log = nullptr;
};

struct CampaignOutcome {
  Dataset dataset;
  std::vector<JobFailure> failures;
  std::size_t added_ultrafast = 0;
  std::size_t resumed_rows = 0;
};

namespace detail {

inline bool is_meter_failure(const std::exception_ptr& p) {
  try {
    std::rethrow_exception(p);
  } catch (const AcquisitionError&) {
    return true;
  } catch (const MalformedTraceError&) {
    return true;
  } catch (const RangeError&) {
    return true;
  } catch (...) {
    return false;
  }
}

}  // namespace detail

/// Runs every job sequentially, one measured encode at a time. Rows are
/// appended to `out_path` as they complete; rows already in that file are
/// kept and their jobs skipped. Job failures are collected and logged; a
/// meter failure aborts the campaign by rethrowing it.
inline CampaignOutcome run_campaign(std::vector<EncodeJob> jobs, Meter& meter,
                                    const CampaignConfig& cfg) {
  if (jobs.empty()) throw DomainError("campaign has no jobs");
  for (const auto& j : jobs) j.validate();
  CampaignOutcome out;
  out.added_ultrafast = close_over_ultrafast(jobs);

  auto log = [&](const std::string& msg) {
    if (cfg.log) *cfg.log << msg << '\n' << std::flush;
  };

  std::set<RowKey> done;
  std::map<std::pair<std::string, double>, double> uf_time;
  std::ofstream sink;
  if (cfg.out_path) {
    std::error_code ec;
    const bool resume = std::filesystem::exists(*cfg.out_path, ec) &&
                        std::filesystem::file_size(*cfg.out_path, ec) > 0;
    if (resume) {
      std::ifstream in(*cfg.out_path);
      auto prior = parse_dataset_rows(in, cfg.out_path->string());
      for (auto& r : prior.rows) {
        done.insert(key_of(r));
        if (r.preset == Preset::ultrafast) uf_time[{r.sequence_id, r.crf}] = r.t_enc;
        out.dataset.rows.push_back(std::move(r));
      }
      out.resumed_rows = out.dataset.rows.size();
      log("resuming: " + std::to_string(out.resumed_rows) + " rows already measured");
    }
    sink.open(*cfg.out_path, std::ios::app | std::ios::binary);
    if (!sink) throw Error("cannot write dataset " + cfg.out_path->string());
    if (!resume) write_dataset_header(sink);
    sink.flush();
  }

  for (const auto& job : jobs) {
    if (done.count({job.sequence_id, job.preset, job.crf})) continue;
    if (job.preset != Preset::ultrafast && !uf_time.count({job.sequence_id, job.crf})) {
      out.failures.push_back({job, "ultrafast probe for this bitstream failed", 0});
      log("FAILED " + job.id() + ": ultrafast probe missing");
      continue;
    }
    MeasuredEncode m;
    try {
      m = run_measured_encode(job, cfg.encoder, meter, cfg.measure);
    } catch (const MeasurementError& e) {
      if (detail::is_meter_failure(e.cause())) std::rethrow_exception(e.cause());
      out.failures.push_back({job, e.what(), e.repetition()});
      log("FAILED " + job.id() + ": " + e.what());
      continue;
    } catch (const AcquisitionError&) {
      throw;
    } catch (const Error& e) {
      out.failures.push_back({job, e.what(), 0});
      log("FAILED " + job.id() + ": " + e.what());
      continue;
    }

    DatasetRow row;
    row.sequence_id = job.sequence_id;
    row.class_label = job.class_label;
    row.preset = job.preset;
    row.crf = job.crf;
    row.frames = job.frames;
    row.avg_qp = m.result.avg_qp;
    row.t_enc = m.mean_wall_time();
    if (job.preset == Preset::ultrafast) uf_time[{job.sequence_id, job.crf}] = row.t_enc;
    row.t_enc_uf = uf_time.at({job.sequence_id, job.crf});
    row.energy = m.record.mean_energy;
    row.reps = m.record.reps;
    row.confident = m.record.confident;
    if (!(row.energy > 0.0)) {
      out.failures.push_back({job, "non-positive net energy (idle baseline above load?)", 0});
      log("FAILED " + job.id() + ": non-positive net energy");
      continue;
    }
    for (const auto& w : m.result.warnings) log("warning " + job.id() + ": " + w);
    if (m.negative_energy) log("warning " + job.id() + ": a repetition had negative net energy");
    log(job.id() + " energy_j=" + detail::format_double(row.energy) +
        " reps=" + std::to_string(row.reps) + " confident=" + (row.confident ? "true" : "false"));
    if (sink.is_open()) {
      write_dataset_row(sink, row);
      sink.flush();
    }
    out.dataset.rows.push_back(std::move(row));
  }
  return out;
}

}  // namespace encwatt
