// Copyright 2026 The restpose Authors
// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <map>
#include <sstream>

#include "restpose/archive.hpp"
#include "restpose/cli.hpp"
#include "restpose/png_io.hpp"
#include "test_util.hpp"

using namespace restpose;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CliResult {
  int rc = 0;
  std::string out, err;
};

CliResult invoke(const std::vector<std::string>& args) {
  std::ostringstream out, err;
  CliResult r;
  r.rc = cli::run(args, out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::map<std::string, std::vector<std::uint8_t>> tree_bytes(const fs::path& root) {
  std::map<std::string, std::vector<std::uint8_t>> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) files[fs::relative(e.path(), root).string()] = io::read_file_bytes(e.path());
  }
  return files;
}

std::vector<std::string> train_args(const fs::path& data, const fs::path& run, int level, int steps) {
  return {"train", "--data", data.string(), "--run", run.string(), "--level", std::to_string(level),
          "--max-steps", std::to_string(steps), "--batch", "4"};
}

// One small run shared by the eval and report cases: levels 0-2 and all ablation models.
const fs::path& shared_run() {
  static const fs::path run = [] {
    const fs::path dir = testutil::temp_dir("cli_shared");
    const fs::path data = testutil::fixture_path("slp_mini");
    for (int k = 0; k < 3; ++k) REQUIRE(invoke(train_args(data, dir / "run", k, 2)).rc == 0);
    for (const auto& v : pyramid::ablation_variants()) {
      auto args = train_args(data, dir / "run", 0, 1);
      args.push_back("--variant");
      args.push_back(v);
      REQUIRE(invoke(args).rc == 0);
    }
    return dir / "run";
  }();
  return run;
}

// Table rows as cell lists, keyed by the first cell.
std::map<std::string, std::vector<std::string>> table_rows(const std::string& md, const std::string& title) {
  std::map<std::string, std::vector<std::string>> rows;
  std::istringstream in(md.substr(md.find(title)));
  std::string line;
  std::getline(in, line);
  int seen = 0;
  while (std::getline(in, line)) {
    if (line.empty()) {
      if (seen > 0) break;
      continue;
    }
    ++seen;
    if (seen <= 2) continue;  // header and rule
    std::vector<std::string> cells;
    std::stringstream ss(line.substr(1));
    std::string cell;
    while (std::getline(ss, cell, '|')) {
      const auto b = cell.find_first_not_of(' '), e = cell.find_last_not_of(' ');
      cells.push_back(b == std::string::npos ? "" : cell.substr(b, e - b + 1));
    }
    rows[cells.front()] = cells;
  }
  return rows;
}

std::string two_dp(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  return buf;
}

}  // namespace

TEST_SUITE("cli") {
  TEST_CASE("exit codes follow the error category") {
    CHECK(cli::exit_code(ErrorKind::kConfig) == 2);
    CHECK(cli::exit_code(ErrorKind::kData) == 3);
    CHECK(cli::exit_code(ErrorKind::kParse) == 3);
    CHECK(cli::exit_code(ErrorKind::kIo) == 3);
    CHECK(cli::exit_code(ErrorKind::kDependency) == 4);
    CHECK(cli::exit_code(ErrorKind::kOptimization) == 5);
    CHECK(cli::exit_code(ErrorKind::kDegenerate) == 5);
    CHECK(invoke({}).rc == 2);
    CHECK(invoke({"frobnicate"}).rc == 2);
    CHECK(invoke({"train", "--no-such-flag", "1"}).rc == 2);
  }

  TEST_CASE("run config JSON") {
    cli::RunConfig c;
    c.level = 2;
    c.seed = 11;
    c.step_size = 3e-5;
    c.recon = "bypass";
    c.augment = true;
    const cli::RunConfig back = cli::run_config_from_json(cli::to_json(c));
    CHECK(cli::to_json(back) == cli::to_json(c));

    auto kind_of = [](const json& j) {
      try {
        cli::run_config_from_json(j);
      } catch (const Error& e) {
        return e.kind();
      }
      return ErrorKind::kInvariant;
    };
    CHECK(kind_of(json{{"levle", 1}}) == ErrorKind::kConfig);
    CHECK(kind_of(json{{"level", "one"}}) == ErrorKind::kConfig);
    CHECK(kind_of(json{{"batch", 2.5}}) == ErrorKind::kConfig);
    CHECK(kind_of(json::array()) == ErrorKind::kConfig);

    cli::RunConfig bad;
    bad.data = "/nonexistent";
    bad.run = "r";
    CHECK_THROWS_AS(bad.validate(true), Error);
    bad.data = testutil::fixture_path("slp_mini").string();
    bad.level = 3;
    CHECK_THROWS_AS(bad.validate(true), Error);
    bad.level = 1;
    bad.variant = "single_D";
    CHECK_THROWS_AS(bad.validate(true), Error);
  }

  TEST_CASE("synth counts, recount and byte-identical regeneration") {
    const fs::path dir = testutil::temp_dir("cli_synth");
    const auto r = invoke({"synth", "--out", (dir / "a").string(), "--subjects", "4", "--poses", "8", "--covers", "all"});
    REQUIRE(r.rc == 0);
    const json manifest = testutil::load_json(dir / "a" / "manifest.json");
    CHECK(manifest.at("sample_count").get<int>() == 96);
    int walked = 0;
    for (const auto& e : fs::recursive_directory_iterator(dir / "a")) {
      if (e.is_regular_file() && e.path().filename() == "meta.json") ++walked;
    }
    CHECK(walked == 96);

    // The shipped fixture is the output of this command.
    REQUIRE(invoke({"synth", "--out", (dir / "mini").string(), "--subjects", "2", "--poses", "3", "--seed", "7"}).rc == 0);
    CHECK(tree_bytes(dir / "mini") == tree_bytes(testutil::fixture_path("slp_mini")));

    SUBCASE("refuses a non-empty directory") {
      const auto again = invoke({"synth", "--out", (dir / "mini").string(), "--subjects", "2", "--poses", "3"});
      CHECK(again.rc == 2);
      CHECK(tree_bytes(dir / "mini") == tree_bytes(testutil::fixture_path("slp_mini")));
    }
    SUBCASE("bad flags write nothing") {
      CHECK(invoke({"synth", "--out", (dir / "b").string(), "--covers", "cover3"}).rc == 2);
      CHECK(invoke({"synth", "--out", (dir / "c").string(), "--subjects", "0"}).rc == 2);
      CHECK_FALSE(fs::exists(dir / "b"));
      CHECK_FALSE(fs::exists(dir / "c"));
    }
    SUBCASE("covers subset") {
      REQUIRE(invoke({"synth", "--out", (dir / "d").string(), "--subjects", "1", "--poses", "2", "--covers", "cover2"}).rc == 0);
      CHECK(testutil::load_json(dir / "d" / "manifest.json").at("sample_count").get<int>() == 2);
    }
  }

  TEST_CASE("train validates before writing") {
    const fs::path dir = testutil::temp_dir("cli_train_errors");
    const fs::path data = testutil::fixture_path("slp_mini");

    const auto dep = invoke(train_args(data, dir / "run", 1, 1));
    CHECK(dep.rc == 4);
    CHECK(dep.err.find("level 0") != std::string::npos);
    CHECK_FALSE(fs::exists(dir / "run"));

    CHECK(invoke(train_args(data, dir / "run", 3, 1)).rc == 2);
    CHECK(invoke(train_args(dir / "missing", dir / "run", 0, 1)).rc == 2);
    auto bad_lr = train_args(data, dir / "run", 0, 1);
    bad_lr.insert(bad_lr.end(), {"--step-size", "-1"});
    CHECK(invoke(bad_lr).rc == 2);
    auto bad_number = train_args(data, dir / "run", 0, 1);
    bad_number.insert(bad_number.end(), {"--w-mask", "lots"});
    CHECK(invoke(bad_number).rc == 2);

    testutil::temp_dir("cli_train_errors/cfg");
    {
      std::ofstream(dir / "cfg" / "unknown.json") << R"({"levle": 0})";
      std::ofstream(dir / "cfg" / "broken.json") << R"({"level": )";
    }
    for (const char* f : {"unknown.json", "broken.json", "absent.json"}) {
      CAPTURE(std::string(f));
      CHECK(invoke({"train", "--config", (dir / "cfg" / f).string(), "--data", data.string(), "--run",
                 (dir / "run").string()})
                .rc == 2);
    }
    auto resume = train_args(data, dir / "run", 0, 1);
    resume.push_back("--resume");
    CHECK(invoke(resume).rc == 4);
    CHECK_FALSE(fs::exists(dir / "run"));
  }

  TEST_CASE("config file with flag overrides and the data environment default") {
    const fs::path dir = testutil::temp_dir("cli_config");
    const fs::path data = testutil::fixture_path("slp_mini");
    {
      std::ofstream(dir / "cfg.json") << json{{"run", (dir / "run").string()}, {"max_steps", 50}, {"batch", 4}}.dump();
    }
    ::setenv("RESTPOSE_DATA", data.c_str(), 1);
    const auto r = invoke({"train", "--config", (dir / "cfg.json").string(), "--max-steps", "1"});
    ::unsetenv("RESTPOSE_DATA");
    REQUIRE(r.rc == 0);
    const json used = testutil::load_json(dir / "run" / "level0" / "train_config.json");
    CHECK(used.at("max_steps").get<int>() == 1);
    CHECK(used.at("batch").get<int>() == 4);
    CHECK(used.at("data").get<std::string>() == data.string());
  }

  TEST_CASE("freeze manifest and resume through the command line") {
    const fs::path dir = testutil::temp_dir("cli_resume");
    const fs::path data = testutil::fixture_path("slp_mini");
    REQUIRE(invoke(train_args(data, dir / "a", 0, 4)).rc == 0);
    REQUIRE(invoke(train_args(data, dir / "b", 0, 2)).rc == 0);
    auto more = train_args(data, dir / "b", 0, 4);
    more.push_back("--resume");
    REQUIRE(invoke(more).rc == 0);

    const auto sa = io::Archive::load(dir / "a" / "level0" / "train_state.arc");
    const auto sb = io::Archive::load(dir / "b" / "level0" / "train_state.arc");
    const auto la = sa.get_f64("step_losses"), lb = sb.get_f64("step_losses");
    REQUIRE(la.size() == 4);
    REQUIRE(lb.size() == 4);
    for (std::size_t i = 0; i < la.size(); ++i) CHECK(std::abs(la[i] - lb[i]) <= 1e-6 * std::max(1.0, std::abs(la[i])));
    CHECK(io::read_file_bytes(dir / "a" / "level0" / "checkpoint.arc") ==
          io::read_file_bytes(dir / "b" / "level0" / "checkpoint.arc"));

    // A resume must keep the training configuration.
    auto changed = train_args(data, dir / "b", 0, 6);
    changed.insert(changed.end(), {"--resume", "--step-size", "0.01"});
    CHECK(invoke(changed).rc == 2);

    const auto before = io::read_file_bytes(dir / "a" / "level0" / "checkpoint.arc");
    REQUIRE(invoke(train_args(data, dir / "a", 1, 2)).rc == 0);
    const json freeze = testutil::load_json(dir / "a" / "level1" / "freeze_hashes.json");
    REQUIRE(freeze.at("lower_levels").size() == 1);
    CHECK(freeze["lower_levels"][0]["identical"].get<bool>());
    CHECK(freeze["lower_levels"][0]["sha256_before"] == io::sha256_hex(before));
    CHECK(io::read_file_bytes(dir / "a" / "level0" / "checkpoint.arc") == before);
    CHECK(fs::exists(dir / "a" / "level1" / "train_log.csv"));
  }

  TEST_CASE("eval tables are a pure function of metrics.json") {
    const fs::path run = shared_run();
    const auto r = invoke({"eval", "--run", run.string(), "--data", testutil::fixture_path("slp_mini").string(), "--ablate"});
    REQUIRE(r.rc == 0);
    const json metrics = testutil::load_json(run / "metrics.json");
    std::ifstream tin(run / "tables.md");
    const std::string md((std::istreambuf_iterator<char>(tin)), std::istreambuf_iterator<char>());
    CHECK(md == cli::render_tables(metrics));
    CHECK(r.out == md);

    // Column order: Cover2, Cover1, Uncover.
    const std::string header = "| Model | MPJPE Cover2 | MPJPE Cover1 | MPJPE Uncover | Rec Cover2 | Rec Cover1 | Rec Uncover |";
    CHECK(md.find(header) != std::string::npos);

    const auto t1 = table_rows(md, "Table 1");
    REQUIRE(metrics.at("levels").size() == 3);
    for (const auto& row : metrics.at("levels")) {
      const std::string name = "Pyramid K=" + std::to_string(row.at("K").get<int>());
      REQUIRE(t1.count(name) == 1);
      const auto& cells = t1.at(name);
      int c = 1;
      for (const char* key : {"mpjpe_mm", "reconstruction_error_mm"}) {
        for (const char* cover : {"cover2", "cover1", "uncover"}) {
          CHECK(cells[c++] == two_dp(row["strata"][cover][key].get<double>()));
        }
      }
    }
    const auto t2 = table_rows(md, "Table 2");
    for (const auto& row : metrics.at("levels")) {
      const auto& cells = t2.at("Pyramid K=" + std::to_string(row.at("K").get<int>()));
      CHECK(cells[1] == two_dp(100.0 * row["overall"]["seg_accuracy"].get<double>()));
      CHECK(std::stoul(cells[3]) == row["parameter_count"].get<std::size_t>());
    }
    const auto t3 = table_rows(md, "Table 3");
    CHECK(t3.size() == pyramid::ablation_variants().size() + 1);
    for (const auto& v : pyramid::ablation_variants()) CHECK(t3.count(v) == 1);

    // per_sample.jsonl recounts the table.
    std::ifstream in(run / "per_sample.jsonl");
    std::map<std::string, std::pair<double, int>> sums;
    for (std::string line; std::getline(in, line);) {
      const json j = json::parse(line);
      if (j["model"] != "pyramid" || j["K"] != 2) continue;
      auto& s = sums[j["cover_type"].get<std::string>()];
      s.first += j["mpjpe_mm"].get<double>();
      ++s.second;
    }
    REQUIRE(sums.size() == 3);
    for (const auto& [cover, s] : sums) {
      CHECK(s.first / s.second == doctest::Approx(metrics["levels"][2]["strata"][cover]["mpjpe_mm"].get<double>()).epsilon(1e-12));
      CHECK(s.second == metrics["levels"][2]["strata"][cover]["count"].get<int>());
    }
  }

  TEST_CASE("perfect predictor renders an all-zero error table") {
    const data::Dataset ds = data::load_slp(testutil::fixture_path("slp_mini"));
    const body::BodyTemplate tmpl = body::make_toy_template();
    std::vector<pyramid::SampleRecord> records;
    for (const auto& s : ds) {
      pyramid::Prediction p;
      p.params = *s.gt_params;
      p.cam = *s.gt_camera;
      p.mesh = body::forward(tmpl, p.params.pose, p.params.shape);
      records.push_back(pyramid::score_prediction(s, tmpl, p));
    }
    json row = pyramid::to_json(pyramid::summarize(records, 0));
    row["model"] = "pyramid";
    const std::string md = cli::render_tables({{"levels", json::array({row})}});
    const auto cells = table_rows(md, "Table 1").at("Pyramid K=0");
    REQUIRE(cells.size() == 7);
    for (std::size_t c = 1; c < cells.size(); ++c) CHECK(cells[c] == "0.00");
  }

  TEST_CASE("absent strata render as n/a") {
    pyramid::SampleRecord r;
    r.cover = data::CoverType::kCover1;
    r.mpjpe = 12.5;
    json row = pyramid::to_json(pyramid::summarize({r}, 1));
    row["model"] = "pyramid";
    const auto cells = table_rows(cli::render_tables({{"levels", json::array({row})}}), "Table 1").at("Pyramid K=1");
    CHECK(cells[1] == "n/a");
    CHECK(cells[2] == "12.50");
    CHECK(cells[3] == "n/a");
  }

  TEST_CASE("eval dependencies") {
    const fs::path dir = testutil::temp_dir("cli_eval_dep");
    const fs::path data = testutil::fixture_path("slp_mini");
    REQUIRE(invoke(train_args(data, dir / "run", 0, 1)).rc == 0);
    CHECK(invoke({"eval", "--run", (dir / "run").string(), "--data", data.string(), "--levels", "1"}).rc == 4);
    CHECK(invoke({"eval", "--run", (dir / "run").string(), "--data", data.string(), "--levels", "0", "--ablate"}).rc == 4);
    CHECK(invoke({"eval", "--run", (dir / "run").string(), "--data", data.string(), "--levels", "5"}).rc == 2);
    CHECK_FALSE(fs::exists(dir / "run" / "metrics.json"));
    CHECK(invoke({"eval", "--run", (dir / "run").string(), "--data", data.string(), "--levels", "0"}).rc == 0);
    CHECK(fs::exists(dir / "run" / "metrics.json"));
  }

  TEST_CASE("report figures are headless and deterministic") {
    const fs::path run = shared_run();
    const fs::path dir = testutil::temp_dir("cli_report");
    const std::string data = testutil::fixture_path("slp_mini").string();
    const auto a = invoke({"report", "--run", run.string(), "--data", data, "--figures", (dir / "a").string(), "--seed", "3"});
    const auto b = invoke({"report", "--run", run.string(), "--data", data, "--figures", (dir / "b").string(), "--seed", "3"});
    REQUIRE(a.rc == 0);
    REQUIRE(b.rc == 0);
    CHECK(tree_bytes(dir / "a") == tree_bytes(dir / "b"));
    const io::PngImage grid = io::read_png(dir / "a" / "qualitative.png");
    CHECK(grid.channels == 3);
    CHECK(grid.width == 8 * kCropSize + 7 * 4);
    CHECK(grid.height == 3 * kCropSize + 2 * 4);  // one row per cover type
    const io::PngImage pair = io::read_png(dir / "a" / "before_after.png");
    CHECK(pair.width == 3 * kCropSize + 2 * 4);

    CHECK(invoke({"report", "--run", (dir / "nothing").string(), "--data", data}).rc == 4);
  }

  TEST_CASE("export-template round trip") {
    const fs::path dir = testutil::temp_dir("cli_template");
    REQUIRE(invoke({"export-template", "--out", (dir / "toy.arc").string()}).rc == 0);
    const body::BodyTemplate back = body::load_template(dir / "toy.arc");
    const body::BodyTemplate toy = body::make_toy_template();
    CHECK(back.rest_vertices == toy.rest_vertices);
    CHECK(back.faces == toy.faces);
    CHECK(invoke({"export-template", "--out", (dir / "small.arc").string(), "--vertices", "5"}).rc == 2);

    // A saved template drives synthesis the same way as the built-in one.
    REQUIRE(invoke({"synth", "--out", (dir / "d").string(), "--subjects", "2", "--poses", "3", "--template",
                 (dir / "toy.arc").string()})
                .rc == 0);
    CHECK(tree_bytes(dir / "d") == tree_bytes(testutil::fixture_path("slp_mini")));
  }
}
