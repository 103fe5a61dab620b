// Copyright 2026 The restpose Authors
// SPDX-License-Identifier: Apache-2.0

// Command-line entry points: synth, train, eval, report, export-template.
//
// Exit codes: 0 success, 2 config error, 3 data error, 4 dependency error, 5 numeric failure.
// Every command validates its full configuration before creating or modifying any file.

#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "restpose/errors.hpp"
#include "restpose/pyramid.hpp"

namespace restpose::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitDependency = 4;
inline constexpr int kExitNumeric = 5;

int exit_code(ErrorKind kind);

// Flat training configuration; every key is also a command-line flag (--max-steps for
// "max_steps"). `data` defaults to $RESTPOSE_DATA.
struct RunConfig {
  std::string data;
  std::string run;
  int level = 0;
  std::string variant;  // ablation model instead of a pyramid level
  std::uint64_t seed = 7;
  double step_size = 1e-4;
  int batch = 8;
  int max_steps = 500;
  int max_epochs = 0;
  double loss_change_tol = 1e-4;
  double w_2d = 1.0;
  double w_3d = 0.01;
  double w_smpl = 1.0;
  double w_mask = 1.0;
  double w_recon = 1.0;
  std::string encoder_scale = "toy";
  std::string template_path = "toy";  // "toy" or a saved template
  std::string recon = "decoder";
  bool augment = false;
  double sharpness = 4.0;
  int fit_refresh_every = 1;
  int save_every_epochs = 25;  // training-state snapshots for --resume

  // Throws kConfig. With `check_paths`, the data directory (and a template file) must exist.
  void validate(bool check_paths) const;
  pyramid::TrainConfig train_config() const;
};

nlohmann::json to_json(const RunConfig& c);
// Unknown keys and wrongly typed values are config errors.
RunConfig run_config_from_json(const nlohmann::json& j);

// Parses argv and runs one command. Messages go to `out`, diagnostics to `err`.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Template named by a config value: "toy" or a file written by export-template.
body::BodyTemplate resolve_template(const std::string& spec);

// ---------------------------------------------------------------------------------------------
// Commands (also callable directly; they throw restpose::Error).

struct SynthOptions {
  std::filesystem::path out;
  data::SynthConfig config;
  std::string template_path = "toy";
  bool force = false;  // allow a non-empty output directory
};
data::Dataset cmd_synth(const SynthOptions& o, std::ostream& log);

struct TrainResult {
  std::string stop_reason;
  int steps = 0;
  int epochs = 0;
  double final_loss = 0.0;
  std::filesystem::path checkpoint;
};
TrainResult cmd_train(const RunConfig& c, bool resume, std::ostream& log);

struct EvalOptions {
  std::filesystem::path run;
  std::filesystem::path data;
  int levels = 2;  // report K = 0..levels
  bool ablate = false;
  std::string split = "eval";  // eval | train | all
  std::string template_path = "toy";
};
nlohmann::json cmd_eval(const EvalOptions& o, std::ostream& log);

// Table 1 (per-stratum MPJPE and reconstruction error), Table 2 (segmentation) and, when the
// metrics carry an ablation block, Table 3. A pure function of metrics.json.
std::string render_tables(const nlohmann::json& metrics);

struct ReportOptions {
  std::filesystem::path run;
  std::filesystem::path data;
  std::filesystem::path figures;  // defaults to <run>/figures
  int levels = 2;
  std::uint64_t seed = 7;
  std::string split = "eval";
  std::string template_path = "toy";
};
// Writes qualitative.png (one row per cover type) and before_after.png; returns the paths.
std::vector<std::filesystem::path> cmd_report(const ReportOptions& o, std::ostream& log);

void cmd_export_template(const std::filesystem::path& out, int n_vertices, std::uint64_t seed);

// Dataset subset named by split.json ("eval", "train") or everything ("all").
data::Dataset select_split(const data::Dataset& ds, const std::filesystem::path& data_root, const std::string& split);

}  // namespace restpose::cli
