#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <gtest/gtest.h>

#include "encwatt/dataset.hpp"
#include "encwatt/detail/text.hpp"
#include "encwatt/energy_models.hpp"
#include "encwatt/synth.hpp"

namespace {

namespace fs = std::filesystem;
using namespace encwatt;

const fs::path kFixtures = ENCWATT_FIXTURES;
const fs::path kData = ENCWATT_DATA;

struct Run {
  int status = -1;
  std::string out;
};

Run cli(const std::string& args) {
  const std::string cmd = std::string(ENCWATT_CLI) + " " + args + " 2>&1";
  Run r;
  FILE* p = ::popen(cmd.c_str(), "r");
  if (!p) return r;
  char buf[4096];
  std::size_t n;
  while ((n = std::fread(buf, 1, sizeof buf, p)) > 0) r.out.append(buf, n);
  const int st = ::pclose(p);
  r.status = WIFEXITED(st) ? WEXITSTATUS(st) : -1;
  return r;
}

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "encwatt_cli_test" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::vector<std::vector<std::string>> csv_section(const std::string& out, const std::string& header) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(out);
  std::string line;
  bool inside = false;
  while (std::getline(in, line)) {
    if (line == header) {
      inside = true;
      continue;
    }
    if (!inside) continue;
    if (line.empty() || line[0] == '#') break;
    std::vector<std::string> f;
    for (auto sv : detail::split(line, ',')) f.emplace_back(sv);
    rows.push_back(f);
  }
  return rows;
}

TEST(Cli, EstimateSinglePreset) {
  const auto r = cli("estimate --defaults --preset superfast --t-uf 2.0");
  EXPECT_EQ(r.status, 0) << r.out;
  const auto rows = csv_section(r.out, "preset,t_s,energy_j,energy_kj");
  ASSERT_EQ(rows.size(), 1u);
  EXPECT_EQ(rows[0][0], "superfast");
  EXPECT_NEAR(std::stod(rows[0][2]), 310.99, 1e-9 * 310.99);
  EXPECT_NEAR(std::stod(rows[0][3]), 0.31099, 1e-9);
}

TEST(Cli, EstimateFullTable) {
  const auto r = cli("estimate --defaults --t-uf 2.0");
  EXPECT_EQ(r.status, 0) << r.out;
  const auto rows = csv_section(r.out, "preset,t_s,energy_j,energy_kj");
  ASSERT_EQ(rows.size(), 8u);
  std::map<std::string, double> e;
  for (const auto& row : rows) e[row[0]] = std::stod(row[2]);
  EXPECT_NEAR(e.at("veryslow"), 13967.93, 1e-9 * 13967.93);
  EXPECT_LT(e.at("superfast"), e.at("veryfast"));
  EXPECT_LT(e.at("veryfast"), e.at("faster"));
  EXPECT_LT(e.at("faster"), e.at("fast"));
  EXPECT_LT(e.at("slow"), e.at("slower"));
  EXPECT_LT(e.at("slower"), e.at("veryslow"));
}

TEST(Cli, EstimateUltrafastWithDefaultsExplains) {
  const auto r = cli("estimate --defaults --preset ultrafast --t-uf 2");
  EXPECT_EQ(r.status, 2);
  EXPECT_NE(r.out.find("no ultrafast row"), std::string::npos) << r.out;
}

TEST(Cli, EstimateArgumentErrors) {
  EXPECT_EQ(cli("estimate --t-uf 2").status, 2);
  EXPECT_EQ(cli("estimate --defaults").status, 2);
  EXPECT_EQ(cli("estimate --defaults --t-uf -1").status, 2);
  EXPECT_EQ(cli("estimate --defaults --t-uf abc").status, 2);
  EXPECT_EQ(cli("estimate --defaults --preset warp --t-uf 2").status, 2);
  EXPECT_EQ(cli("frobnicate").status, 2);
  EXPECT_EQ(cli("").status, 2);
}

TEST(Cli, EstimateFromBundledParamFile) {
  const auto r = cli("estimate --params " + (kData / "default_params.csv").string() +
                     " --preset veryslow --t-uf 2");
  EXPECT_EQ(r.status, 0) << r.out;
  EXPECT_NE(r.out.find("veryslow,2,13967.93,13.96793"), std::string::npos) << r.out;
}

TEST(Cli, SynthDefaultHas900Rows) {
  const auto dir = scratch("synth");
  const auto r = cli("synth --out " + (dir / "d.csv").string());
  EXPECT_EQ(r.status, 0) << r.out;
  const auto ds = read_dataset_csv(dir / "d.csv");
  EXPECT_EQ(ds.rows.size(), 900u);
}

TEST(Cli, SynthSeedChangesEnergiesNotSchema) {
  const auto dir = scratch("synth_seed");
  ASSERT_EQ(cli("synth --seed 1 --out " + (dir / "a.csv").string()).status, 0);
  ASSERT_EQ(cli("synth --seed 2 --out " + (dir / "b.csv").string()).status, 0);
  const auto a = read_dataset_csv(dir / "a.csv");
  const auto b = read_dataset_csv(dir / "b.csv");
  ASSERT_EQ(a.rows.size(), b.rows.size());
  EXPECT_NE(a.rows[5].energy, b.rows[5].energy);
  EXPECT_EQ(slurp(dir / "a.csv").substr(0, 90), slurp(dir / "b.csv").substr(0, 90));
}

TEST(Cli, SynthInvalidRecipeExits2) {
  const auto dir = scratch("synth_bad");
  std::ofstream(dir / "r.json") << R"({"energy_noise": -1})";
  EXPECT_EQ(cli("synth --recipe " + (dir / "r.json").string() + " --out " + (dir / "d.csv").string()).status, 2);
  std::ofstream(dir / "broken.json") << "{ not json";
  EXPECT_EQ(cli("synth --recipe " + (dir / "broken.json").string() + " --out " + (dir / "d.csv").string()).status, 2);
  EXPECT_FALSE(fs::exists(dir / "d.csv"));
}

TEST(Cli, ZeroNoiseFitRecoversRecipeConstants) {
  const auto dir = scratch("zero_noise");
  ASSERT_EQ(cli("synth --energy-noise 0 --time-noise 0 --out " + (dir / "d.csv").string()).status, 0);
  const auto r = cli("fit --dataset " + (dir / "d.csv").string() + " --model uf_linear --params-out " +
                     (dir / "p.csv").string());
  ASSERT_EQ(r.status, 0) << r.out;
  const auto params = read_param_csv(dir / "p.csv");
  const auto recipe = default_synth_recipe();
  ASSERT_EQ(params.size(), 8u);
  for (const auto& rec : params)
    for (const auto& law : recipe.presets)
      if (law.preset == rec.preset) {
        EXPECT_NEAR(rec.params.p, law.uf_slope_w, 1e-9 * law.uf_slope_w);
        EXPECT_NEAR(rec.params.e0, law.offset_j, 1e-9 * law.uf_slope_w);
      }
}

TEST(Cli, CrossvalTableAndDeterministicReport) {
  const auto dir = scratch("crossval");
  const auto data = (kData / "synthetic_dataset.csv").string();
  const auto a = cli("crossval --dataset " + data + " --model uf_linear --seed 3 --out " + (dir / "a.json").string());
  const auto b = cli("crossval --dataset " + data + " --model uf_linear --seed 3 --out " + (dir / "b.json").string());
  ASSERT_EQ(a.status, 0) << a.out;
  EXPECT_EQ(a.out, b.out);
  EXPECT_EQ(slurp(dir / "a.json"), slurp(dir / "b.json"));
  const auto rows = csv_section(a.out, "preset,mean_error_pct,n_rows");
  ASSERT_EQ(rows.size(), 9u);
  EXPECT_EQ(rows.back()[0], "average");
  const auto report = nlohmann::json::parse(slurp(dir / "a.json"));
  EXPECT_EQ(report["seed"], 3);
  EXPECT_EQ(report["folds"], 10);
  EXPECT_EQ(report["model_kind"], "uf_linear");
  EXPECT_EQ(report["per_fold_errors"].size(), 10u);
  EXPECT_EQ(report["presets"].size(), 8u);
  EXPECT_FALSE(report["version"].get<std::string>().empty());
  const auto params = csv_section(a.out, "preset,covariate_kind,p_w,e0_j");
  EXPECT_EQ(params.size(), 8u);
}

TEST(Cli, ReportComparesAllModels) {
  const auto r = cli("report --dataset " + (kData / "synthetic_dataset.csv").string());
  ASSERT_EQ(r.status, 0) << r.out;
  const auto rows = csv_section(r.out, "preset,qp_cubic,time_linear,uf_linear");
  ASSERT_EQ(rows.size(), 10u);
  EXPECT_EQ(rows.front()[0], "ultrafast");
  EXPECT_EQ(rows.back()[0], "average");
  const auto lin = csv_section(r.out, "preset,points,r_own_time,r_uf_time,slope_own_time_w,slope_uf_time_w");
  EXPECT_EQ(lin.size(), 9u);
}

TEST(Cli, QpModelWithoutClassesNamesColumn) {
  const auto dir = scratch("no_class");
  auto ds = generate_synthetic_dataset(default_synth_recipe());
  for (auto& row : ds.rows) row.class_label.clear();
  write_dataset_csv(dir / "d.csv", ds);
  const auto r = cli("crossval --dataset " + (dir / "d.csv").string() + " --model qp_cubic");
  EXPECT_EQ(r.status, 2);
  EXPECT_NE(r.out.find("column 'class'"), std::string::npos) << r.out;
}

TEST(Cli, SchemaViolationNamesRowAndColumn) {
  const auto dir = scratch("schema");
  std::ofstream(dir / "d.csv") << kDatasetCsvHeader << "\nA,B,ultrafast,23,100,24,1.5,1.5,oops,2,true\n";
  const auto r = cli("fit --dataset " + (dir / "d.csv").string());
  EXPECT_EQ(r.status, 2);
  EXPECT_NE(r.out.find("line 2"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("energy_j"), std::string::npos) << r.out;
  EXPECT_EQ(cli("fit --dataset " + (dir / "missing.csv").string()).status, 2);
}

std::string write_manifest(const fs::path& dir, const std::string& extra = "") {
  std::ostringstream m;
  for (std::string seq : {"A_01", "B_01"})
    for (std::string preset : {"ultrafast", "medium"})
      m << R"({"sequence_id":")" << seq << R"(","class":")" << seq.substr(0, 1) << R"(","input":")"
        << (kFixtures / "clip.yuv").string() << R"(","preset":")" << preset << R"(","crf":28)" << extra
        << "}\n";
  std::ofstream(dir / "m.jsonl") << m.str();
  return (dir / "m.jsonl").string();
}

std::string stub_cmd() {
  return "'sh " + (kFixtures / "stub_encoder.sh").string() + " {input} {output} {preset} {crf} {frames}'";
}

TEST(Cli, MeasureEndToEnd) {
  const auto dir = scratch("measure");
  const auto r = cli("measure --manifest " + write_manifest(dir) + " --meter synth:base=20,active=30,period=0.01" +
                     " --encoder-cmd " + stub_cmd() + " --max-reps 3 --workdir " + (dir / "bits").string() +
                     " --out " + (dir / "d.csv").string());
  ASSERT_EQ(r.status, 0) << r.out;
  const auto ds = read_dataset_csv(dir / "d.csv");
  EXPECT_EQ(ds.rows.size(), 4u);
  EXPECT_NE(r.out.find("energy_j="), std::string::npos);
  EXPECT_NE(r.out.find("reps="), std::string::npos);
  EXPECT_NE(r.out.find("confident="), std::string::npos);
}

TEST(Cli, MeasureBadManifestExits2WithoutCsv) {
  const auto dir = scratch("bad_manifest");
  std::ofstream(dir / "m.jsonl") << "{\"sequence_id\": \"A\"\n";
  const auto r = cli("measure --manifest " + (dir / "m.jsonl").string() + " --meter synth: --out " +
                     (dir / "d.csv").string());
  EXPECT_EQ(r.status, 2) << r.out;
  EXPECT_FALSE(fs::exists(dir / "d.csv"));
}

TEST(Cli, MeasureBadPolicyExits2) {
  const auto dir = scratch("bad_policy");
  const auto base = "measure --manifest " + write_manifest(dir) + " --meter synth: --out " + (dir / "d.csv").string();
  EXPECT_EQ(cli(base + " --alpha 1.5").status, 2);
  EXPECT_EQ(cli(base + " --min-reps 1").status, 2);
  EXPECT_EQ(cli(base + " --min-reps 5 --max-reps 4").status, 2);
  EXPECT_EQ(cli(base + " --quantile sideways").status, 2);
  EXPECT_EQ(cli("measure --manifest " + write_manifest(dir) + " --meter volt:x --out " + (dir / "d.csv").string()).status, 2);
  EXPECT_FALSE(fs::exists(dir / "d.csv"));
}

TEST(Cli, MeasureUnreadableCounterExits3) {
  const auto dir = scratch("counter");
  const auto r = cli("measure --manifest " + write_manifest(dir) + " --meter counter:" + (dir / "nope").string() +
                     " --encoder-cmd " + stub_cmd() + " --out " + (dir / "d.csv").string());
  EXPECT_EQ(r.status, 3) << r.out;
}

TEST(Cli, MeasureMissingTraceExits3) {
  const auto dir = scratch("trace");
  const auto r = cli("measure --manifest " + write_manifest(dir) + " --meter csv:" + (dir / "nope.csv").string() +
                     " --encoder-cmd " + stub_cmd() + " --out " + (dir / "d.csv").string());
  EXPECT_EQ(r.status, 3) << r.out;
}

TEST(Cli, MeasureEncoderFailureExits4) {
  const auto dir = scratch("encoder_fail");
  const auto r = cli("measure --manifest " + write_manifest(dir, R"(,"extra_args":["--bogus"])") +
                     " --meter synth:period=0.01 --encoder-cmd " + stub_cmd() + " --out " + (dir / "d.csv").string());
  EXPECT_EQ(r.status, 4) << r.out;
  EXPECT_NE(r.out.find("FAILED"), std::string::npos);
}

TEST(Cli, VersionAndHelp) {
  const auto v = cli("--version");
  EXPECT_EQ(v.status, 0);
  EXPECT_NE(v.out.find("0.1.0"), std::string::npos);
  EXPECT_EQ(cli("--help").status, 0);
  EXPECT_EQ(cli("estimate --help").status, 0);
}

}  // namespace
