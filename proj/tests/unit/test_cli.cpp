#include <doctest.h>

#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "helpers.hpp"
#include "mscdt/cli/cli.hpp"
#include "mscdt/evaluation/metrics.hpp"
#include "mscdt/numerics/tsr_io.hpp"
#include "mscdt/pipeline/checkpoint.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "mscdt");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = mscdt::cli::dispatch(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::map<std::string, std::string> hash_tree(const fs::path& root, bool skip_manifest = true) {
  std::map<std::string, std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    if (skip_manifest && e.path().filename() == "manifest.json") continue;
    out[fs::relative(e.path(), root).string()] = mscdt::sha256_hex(mscdt::read_file_bytes(e.path()));
  }
  return out;
}

json read_json(const fs::path& p) {
  std::ifstream in(p);
  return json::parse(in);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Small corpus and a briefly trained checkpoint shared by several cases.
struct Fixture {
  fs::path root = testutil::temp_dir("cli");
  fs::path data = root / "data";
  fs::path ckpt = root / "ckpt";
  Fixture() {
    REQUIRE(run({"phantom", "--seed", "3", "--count", "2", "--size", "16", "--out", data.string()}).code == 0);
    REQUIRE(run({"train", "--data", data.string(), "--steps", "2", "--batch", "2", "--log-every", "0",
                 "--out", ckpt.string()})
                .code == 0);
  }
};

Fixture& fixture() {
  static Fixture f;
  return f;
}

}  // namespace

TEST_CASE("cli help and usage errors") {
  auto help = run({"--help"});
  CHECK(help.code == 0);
  for (const char* sub : {"phantom", "train", "separate", "evaluate", "lbp", "sweep-tau"}) {
    CHECK(help.out.find(sub) != std::string::npos);
  }
  auto sub_help = run({"separate", "--help"});
  CHECK(sub_help.code == 0);
  for (const char* flag : {"--ckpt", "--input", "--seed", "--alpha", "--tau", "--out", "--threads"}) {
    CHECK(sub_help.out.find(flag) != std::string::npos);
  }
  auto unknown = run({"frobnicate"});
  CHECK(unknown.code == 2);
  CHECK(unknown.err.find("frobnicate") != std::string::npos);
  CHECK(run({"phantom", "--bogus", "1"}).code == 2);
  CHECK(run({"phantom", "--count", "2"}).code == 2);
  CHECK(run({}).code == 2);
}

TEST_CASE("cli phantom output is reproducible") {
  const auto a = testutil::temp_dir("cli_ph_a"), b = testutil::temp_dir("cli_ph_b");
  REQUIRE(run({"phantom", "--seed", "7", "--count", "4", "--out", a.string()}).code == 0);
  REQUIRE(run({"phantom", "--seed", "7", "--count", "4", "--out", b.string()}).code == 0);
  const auto ha = hash_tree(a);
  CHECK(ha.size() > 4);
  CHECK(ha == hash_tree(b));
  auto ma = read_json(a / "manifest.json"), mb = read_json(b / "manifest.json");
  ma.erase("wall_clock_seconds");
  mb.erase("wall_clock_seconds");
  ma["options"].erase("out");
  mb["options"].erase("out");
  CHECK(ma == mb);
  CHECK(ma.at("command") == "phantom");
  CHECK(ma.at("seed") == 7);
  CHECK(ma.at("tool_version") == mscdt::cli::kToolVersion);
  CHECK(ma.at("options").at("count") == 4);

  const auto c = testutil::temp_dir("cli_ph_c");
  REQUIRE(run({"--replay", (a / "manifest.json").string(), "--replay-out", c.string()}).code == 0);
  CHECK(hash_tree(c) == ha);
}

TEST_CASE("cli train writes a checkpoint with a run manifest") {
  auto& f = fixture();
  const auto m = read_json(f.ckpt / "manifest.json");
  CHECK(m.at("step") == 2);
  CHECK(m.at("run").at("command") == "train");
  CHECK(m.at("run").at("options").at("train").at("steps") == 2);
  CHECK(fs::exists(f.ckpt / "loss.csv"));
  CHECK(m.at("params").size() > 10);
}

TEST_CASE("cli config precedence") {
  auto& f = fixture();
  const auto dir = testutil::temp_dir("cli_cfg");
  {
    std::ofstream cfg(dir / "train.json");
    cfg << R"({"steps": 5, "batch": 1, "adam": {"learning_rate": 0.001}, "seed": 11})";
  }
  const auto out = dir / "ckpt";
  REQUIRE(run({"train", "--config", (dir / "train.json").string(), "--data", f.data.string(), "--steps", "1",
               "--log-every", "0", "--out", out.string()})
              .code == 0);
  const auto t = read_json(out / "manifest.json").at("train");
  CHECK(t.at("steps") == 1);
  CHECK(t.at("batch") == 1);
  CHECK(t.at("seed") == 11);
  CHECK(t.at("adam").at("learning_rate") == 0.001);
}

TEST_CASE("cli separate, evaluate and replay") {
  auto& f = fixture();
  const auto sep = f.root / "sep";
  REQUIRE(run({"separate", "--ckpt", f.ckpt.string(), "--input", f.data.string(), "--seed", "4", "--out",
               sep.string()})
              .code == 0);
  CHECK(fs::exists(sep / "phantom_000" / "tracer_0.tsr"));
  CHECK(fs::exists(sep / "phantom_001" / "raw_1.pgm"));
  const auto manifest = read_json(sep / "manifest.json");
  CHECK(manifest.at("checkpoint_hash") == mscdt::pipeline::checkpoint_hash(f.ckpt));

  const auto again = f.root / "sep_replay";
  REQUIRE(run({"--replay", (sep / "manifest.json").string(), "--replay-out", again.string()}).code == 0);
  CHECK(hash_tree(sep) == hash_tree(again));

  const auto csv = f.root / "metrics.csv";
  REQUIRE(run({"evaluate", "--pred", sep.string(), "--truth", f.data.string(), "--out", csv.string()}).code == 0);
  std::ifstream in(csv);
  auto report = mscdt::evaluation::MetricsReport::read_csv(in);
  CHECK(report.rows.size() == 4);
  CHECK(fs::exists(csv.string() + ".manifest.json"));
}

TEST_CASE("cli evaluate of truth against itself") {
  auto& f = fixture();
  const auto csv = f.root / "self.csv";
  REQUIRE(run({"evaluate", "--pred", f.data.string(), "--truth", f.data.string(), "--out", csv.string()}).code == 0);
  std::ifstream in(csv);
  auto report = mscdt::evaluation::MetricsReport::read_csv(in);
  REQUIRE(report.rows.size() == 4);
  for (const auto& r : report.rows) {
    CHECK(r.nrmse == 0.0);
    CHECK(r.ssim == 1.0);
    CHECK(std::isinf(r.psnr_db));
  }
}

TEST_CASE("cli sweep rows follow the requested taus") {
  auto& f = fixture();
  const auto csv = f.root / "sweep.csv";
  REQUIRE(run({"sweep-tau", "--ckpt", f.ckpt.string(), "--data", f.data.string(), "--taus", "200,120,180",
               "--out", csv.string()})
              .code == 0);
  std::istringstream lines(slurp(csv));
  std::string line;
  std::getline(lines, line);
  CHECK(line == "tau,psnr_db,ssim,nrmse,mask_density");
  std::vector<std::string> taus;
  while (std::getline(lines, line)) taus.push_back(line.substr(0, line.find(',')));
  CHECK(taus == std::vector<std::string>{"200", "120", "180"});
  CHECK(run({"sweep-tau", "--ckpt", f.ckpt.string(), "--data", f.data.string(), "--taus", "300", "--out",
             csv.string()})
            .code != 0);
}

TEST_CASE("cli single-tau sweep equals evaluate") {
  auto& f = fixture();
  const auto sep = f.root / "sep150";
  REQUIRE(run({"separate", "--ckpt", f.ckpt.string(), "--input", f.data.string(), "--tau", "150", "--seed", "2",
               "--out", sep.string()})
              .code == 0);
  const auto metrics = f.root / "m150.csv";
  REQUIRE(run({"evaluate", "--pred", sep.string(), "--truth", f.data.string(), "--out", metrics.string()}).code == 0);
  const auto sweep = f.root / "s150.csv";
  REQUIRE(run({"sweep-tau", "--ckpt", f.ckpt.string(), "--data", f.data.string(), "--taus", "150", "--seed", "2",
               "--out", sweep.string()})
              .code == 0);
  std::ifstream in(metrics);
  const auto mean = mscdt::evaluation::MetricsReport::read_csv(in).mean();
  std::istringstream lines(slurp(sweep));
  std::string header, row;
  std::getline(lines, header);
  std::getline(lines, row);
  std::vector<std::string> cells;
  std::stringstream rs(row);
  for (std::string c; std::getline(rs, c, ',');) cells.push_back(c);
  REQUIRE(cells.size() == 5);
  CHECK(cells[1] == mscdt::evaluation::format_metric(mean.psnr_db));
  CHECK(cells[2] == mscdt::evaluation::format_metric(mean.ssim));
  CHECK(cells[3] == mscdt::evaluation::format_metric(mean.nrmse));
}

TEST_CASE("cli lbp") {
  auto& f = fixture();
  const auto out = f.root / "lbp";
  auto r = run({"lbp", "--input", (f.data / "phantom_000" / "dual.tsr").string(), "--tau", "180", "--out",
                out.string()});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("mask density") != std::string::npos);
  CHECK(fs::exists(out / "manifest.json"));
  std::size_t pgm = 0;
  for (const auto& e : fs::directory_iterator(out)) pgm += e.path().extension() == ".pgm" ? 1 : 0;
  CHECK(pgm >= 2);
}

TEST_CASE("cli runtime failures exit with 1") {
  auto& f = fixture();
  CHECK(run({"separate", "--ckpt", (f.root / "nope").string(), "--input", f.data.string(), "--out",
             (f.root / "x").string()})
            .code == 1);
  CHECK(run({"sweep-tau", "--ckpt", (f.root / "nope").string(), "--data", f.data.string(), "--out",
             (f.root / "y.csv").string()})
            .code == 1);
}
