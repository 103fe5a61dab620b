// Copyright 2026 The restpose Authors
// SPDX-License-Identifier: Apache-2.0

#include "restpose/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include <CLI11.hpp>

#include "restpose/archive.hpp"

namespace restpose::cli {

namespace fs = std::filesystem;
using nlohmann::json;

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kConfig:
      return kExitConfig;
    case ErrorKind::kDependency:
    case ErrorKind::kInvariant:
      return kExitDependency;
    case ErrorKind::kOptimization:
    case ErrorKind::kDegenerate:
      return kExitNumeric;
    default:
      return kExitData;
  }
}

namespace {

json read_json_file(const fs::path& path, ErrorKind kind) {
  std::ifstream in(path);
  require(static_cast<bool>(in), kind, "cannot read " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    fail(kind, path.string() + ": " + e.what());
  }
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  require(static_cast<bool>(out), ErrorKind::kIo, "cannot write " + path.string());
  out << text;
  require(static_cast<bool>(out), ErrorKind::kIo, "cannot write " + path.string());
}

void make_dirs(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  require(!ec, ErrorKind::kIo, "cannot create " + dir.string());
}

std::string file_hash(const fs::path& path) { return io::sha256_hex(io::read_file_bytes(path)); }

std::vector<data::CoverType> parse_covers(const std::string& s) {
  if (s == "all") return {data::CoverType::kUncover, data::CoverType::kCover1, data::CoverType::kCover2};
  std::vector<data::CoverType> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      out.push_back(data::cover_from_string(item));
    } catch (const Error&) {
      fail(ErrorKind::kConfig, "unknown cover type '" + item + "' (expected uncover, cover1, cover2 or all)");
    }
  }
  require(!out.empty(), ErrorKind::kConfig, "--covers is empty");
  return out;
}

data::MeanParamsFile run_mean_params(const fs::path& run) {
  const fs::path p = run / "mean_params.json";
  require(fs::exists(p), ErrorKind::kDependency, "run has no mean_params.json (train level 0 first): " + p.string());
  return data::load_mean_params(p);
}

pyramid::CycleOptions run_cycle_options(const fs::path& dir) {
  pyramid::CycleOptions o;
  const fs::path p = dir / "train_config.json";
  if (fs::exists(p)) {
    const RunConfig c = run_config_from_json(read_json_file(p, ErrorKind::kFormat));
    o.sharpness = c.sharpness;
    o.recon = c.recon == "bypass" ? pyramid::ReconMode::kBypass : pyramid::ReconMode::kDecoder;
  }
  return o;
}

// Integer, float, bool or string, following the type of the default value.
json convert_flag(const std::string& key, const std::string& text, const json& like) {
  try {
    std::size_t used = 0;
    if (like.is_boolean()) {
      if (text == "true" || text == "1") return true;
      if (text == "false" || text == "0") return false;
      fail(ErrorKind::kConfig, "--" + key + " expects true or false");
    }
    if (like.is_number_unsigned()) {
      require(!text.empty() && text[0] != '-', ErrorKind::kConfig, "--" + key + " must be non-negative");
      const unsigned long long v = std::stoull(text, &used);
      require(used == text.size(), ErrorKind::kConfig, "--" + key + " expects an integer");
      return v;
    }
    if (like.is_number_integer()) {
      const long long v = std::stoll(text, &used);
      require(used == text.size(), ErrorKind::kConfig, "--" + key + " expects an integer");
      return v;
    }
    if (like.is_number_float()) {
      const double v = std::stod(text, &used);
      require(used == text.size(), ErrorKind::kConfig, "--" + key + " expects a number");
      return v;
    }
  } catch (const std::logic_error&) {
    fail(ErrorKind::kConfig, "--" + key + ": cannot parse '" + text + "'");
  }
  return text;
}

std::string flag_name(std::string key) {
  std::replace(key.begin(), key.end(), '_', '-');
  return "--" + key;
}

}  // namespace

// ---------------------------------------------------------------------------------------------
// RunConfig.

void RunConfig::validate(bool check_paths) const {
  require(!data.empty(), ErrorKind::kConfig, "no dataset given (--data or RESTPOSE_DATA)");
  require(!run.empty(), ErrorKind::kConfig, "no run directory given (--run)");
  require(level >= 0 && level < pyramid::kNumLevels, ErrorKind::kConfig,
          "level must be 0, 1 or 2, got " + std::to_string(level));
  if (!variant.empty()) {
    pyramid::FusionLevelConfig::for_variant(variant);
    require(level == 0, ErrorKind::kConfig, "ablation variants are level-0 models");
  }
  require(encoder_scale == "toy" || encoder_scale == "paper", ErrorKind::kConfig,
          "encoder_scale must be 'toy' or 'paper'");
  require(save_every_epochs >= 0, ErrorKind::kConfig, "save_every_epochs must be non-negative");
  train_config().validate();
  if (check_paths) {
    require(fs::is_directory(data), ErrorKind::kConfig, "dataset directory not found: " + data);
    if (template_path != "toy") {
      require(fs::exists(template_path), ErrorKind::kConfig, "template not found: " + template_path);
    }
  }
}

pyramid::TrainConfig RunConfig::train_config() const {
  pyramid::TrainConfig t;
  t.max_steps = max_steps;
  t.max_epochs = max_epochs;
  t.batch = batch;
  t.lr = step_size;
  t.loss_change_tol = loss_change_tol;
  t.weights = {w_2d, w_3d, w_smpl, w_mask, w_recon};
  t.cycle.sharpness = sharpness;
  require(recon == "decoder" || recon == "bypass", ErrorKind::kConfig, "recon must be 'decoder' or 'bypass'");
  t.cycle.recon = recon == "decoder" ? pyramid::ReconMode::kDecoder : pyramid::ReconMode::kBypass;
  t.seed = seed;
  t.augment = augment;
  t.fit_refresh_every = fit_refresh_every;
  return t;
}

json to_json(const RunConfig& c) {
  return {{"data", c.data},
          {"run", c.run},
          {"level", c.level},
          {"variant", c.variant},
          {"seed", c.seed},
          {"step_size", c.step_size},
          {"batch", c.batch},
          {"max_steps", c.max_steps},
          {"max_epochs", c.max_epochs},
          {"loss_change_tol", c.loss_change_tol},
          {"w_2d", c.w_2d},
          {"w_3d", c.w_3d},
          {"w_smpl", c.w_smpl},
          {"w_mask", c.w_mask},
          {"w_recon", c.w_recon},
          {"encoder_scale", c.encoder_scale},
          {"template", c.template_path},
          {"recon", c.recon},
          {"augment", c.augment},
          {"sharpness", c.sharpness},
          {"fit_refresh_every", c.fit_refresh_every},
          {"save_every_epochs", c.save_every_epochs}};
}

RunConfig run_config_from_json(const json& j) {
  require(j.is_object(), ErrorKind::kConfig, "run config must be a JSON object");
  RunConfig c;
  const json known = to_json(c);
  for (const auto& [key, value] : j.items()) {
    require(known.contains(key), ErrorKind::kConfig, "unknown run config key '" + key + "'");
    const json& like = known.at(key);
    const bool ok = like.is_number() ? value.is_number() : value.type() == like.type();
    require(ok, ErrorKind::kConfig, "run config key '" + key + "' has the wrong type");
    if (like.is_number_integer()) {
      require(value.is_number_integer() || value.is_number_unsigned(), ErrorKind::kConfig,
              "run config key '" + key + "' must be an integer");
    }
  }
  try {
    c.data = j.value("data", c.data);
    c.run = j.value("run", c.run);
    c.level = j.value("level", c.level);
    c.variant = j.value("variant", c.variant);
    c.seed = j.value("seed", c.seed);
    c.step_size = j.value("step_size", c.step_size);
    c.batch = j.value("batch", c.batch);
    c.max_steps = j.value("max_steps", c.max_steps);
    c.max_epochs = j.value("max_epochs", c.max_epochs);
    c.loss_change_tol = j.value("loss_change_tol", c.loss_change_tol);
    c.w_2d = j.value("w_2d", c.w_2d);
    c.w_3d = j.value("w_3d", c.w_3d);
    c.w_smpl = j.value("w_smpl", c.w_smpl);
    c.w_mask = j.value("w_mask", c.w_mask);
    c.w_recon = j.value("w_recon", c.w_recon);
    c.encoder_scale = j.value("encoder_scale", c.encoder_scale);
    c.template_path = j.value("template", c.template_path);
    c.recon = j.value("recon", c.recon);
    c.augment = j.value("augment", c.augment);
    c.sharpness = j.value("sharpness", c.sharpness);
    c.fit_refresh_every = j.value("fit_refresh_every", c.fit_refresh_every);
    c.save_every_epochs = j.value("save_every_epochs", c.save_every_epochs);
  } catch (const json::exception& e) {
    fail(ErrorKind::kConfig, std::string("run config: ") + e.what());
  }
  return c;
}

body::BodyTemplate resolve_template(const std::string& spec) {
  if (spec == "toy") return body::make_toy_template();
  require(fs::exists(spec), ErrorKind::kConfig, "template not found: " + spec);
  return body::load_template(spec);
}

data::Dataset select_split(const data::Dataset& ds, const fs::path& data_root, const std::string& split) {
  if (split == "all") return ds;
  require(split == "train" || split == "eval", ErrorKind::kConfig, "split must be train, eval or all");
  const fs::path p = data_root / "split.json";
  require(fs::exists(p), ErrorKind::kData, "dataset has no split.json: " + p.string());
  const json j = read_json_file(p, ErrorKind::kParse);
  std::set<std::string> ids;
  try {
    for (const auto& s : j.at(split)) ids.insert(s.get<std::string>());
  } catch (const json::exception& e) {
    fail(ErrorKind::kParse, p.string() + ": " + e.what());
  }
  data::Dataset out;
  for (const auto& s : ds) {
    if (ids.count(s.subject_id)) out.push_back(s);
  }
  require(!out.empty(), ErrorKind::kData, "the " + split + " split of " + data_root.string() + " is empty");
  return out;
}

// ---------------------------------------------------------------------------------------------
// Commands.

data::Dataset cmd_synth(const SynthOptions& o, std::ostream& log) {
  o.config.validate();
  require(!o.out.empty(), ErrorKind::kConfig, "--out is required");
  const body::BodyTemplate tmpl = resolve_template(o.template_path);
  if (fs::exists(o.out)) {
    require(fs::is_directory(o.out), ErrorKind::kConfig, o.out.string() + " exists and is not a directory");
    require(o.force || fs::is_empty(o.out), ErrorKind::kConfig,
            o.out.string() + " is not empty (pass --force to overwrite)");
  }
  data::Dataset ds = data::generate_synthetic(o.config, tmpl, o.out);
  log << "wrote " << ds.size() << " samples to " << o.out.string() << "\n";
  return ds;
}

TrainResult cmd_train(const RunConfig& c, bool resume, std::ostream& log) {
  // Everything is checked before the first write.
  c.validate(true);
  const pyramid::TrainConfig tc = c.train_config();
  const body::BodyTemplate tmpl = resolve_template(c.template_path);
  const fs::path run = c.run;
  const bool is_variant = !c.variant.empty();
  const pyramid::FusionLevelConfig level_config =
      is_variant ? pyramid::FusionLevelConfig::for_variant(c.variant) : pyramid::FusionLevelConfig::for_level(c.level);
  const fs::path dir = pyramid::state_dir(run, level_config);

  std::vector<pyramid::FusionLevelState> lower;
  std::vector<std::string> lower_hash_before;
  if (!is_variant) {
    for (int j = 0; j < c.level; ++j) {
      lower.push_back(pyramid::load_level(run, j));
      lower_hash_before.push_back(file_hash(pyramid::level_dir(run, j) / "checkpoint.arc"));
    }
  }
  for (auto& s : lower) s.frozen = true;

  const data::Dataset all = data::load_slp(c.data);
  const data::Dataset train = select_split(all, c.data, "train");

  data::MeanParamsFile mean;
  const bool have_run_mean = fs::exists(run / "mean_params.json");
  if (have_run_mean) {
    mean = data::load_mean_params(run / "mean_params.json");
  } else {
    require(c.level == 0, ErrorKind::kDependency, "run has no mean_params.json (train level 0 first)");
    if (fs::exists(fs::path(c.data) / "mean_params.json")) {
      mean = data::load_mean_params(fs::path(c.data) / "mean_params.json");
    } else {
      std::set<std::string> ids;
      for (const auto& s : train) ids.insert(s.subject_id);
      mean = data::compute_mean_params(all, {ids.begin(), ids.end()});
    }
  }

  std::optional<io::Archive> saved;
  if (resume) {
    const fs::path p = dir / "train_state.arc";
    require(fs::exists(p), ErrorKind::kDependency, "nothing to resume: " + p.string() + " not found");
    saved = io::Archive::load(p);
    json stored = saved->meta.at("train_config");
    json now = pyramid::to_json(tc);
    for (const char* budget : {"max_steps", "max_epochs"}) {
      stored.erase(budget);
      now.erase(budget);
    }
    require(stored == now, ErrorKind::kConfig, "resumed run must keep its training configuration (only the step and epoch budgets may change)");
  }

  std::vector<const pyramid::FusionLevelState*> lower_ptrs;
  for (const auto& s : lower) lower_ptrs.push_back(&s);
  std::optional<pyramid::FusionLevelState> initial =
      is_variant ? pyramid::make_variant(c.variant, c.seed, c.encoder_scale)
                 : pyramid::make_level(c.level, c.seed, c.encoder_scale);
  pyramid::LevelTrainer trainer(c.level, train, lower_ptrs, pyramid::mean_head(mean), tmpl, tc, std::move(initial));
  if (saved) trainer.resume(*saved);

  make_dirs(dir);
  if (!have_run_mean) data::save_mean_params(mean, run / "mean_params.json");
  write_text(dir / "train_config.json", to_json(c).dump(2) + "\n");

  log << (is_variant ? "model " + c.variant : "level " + std::to_string(c.level)) << ": " << train.size()
      << " training samples\n";
  std::size_t logged = trainer.state().log.size();
  for (bool more = !trainer.finished(); more;) {
    more = trainer.run_epoch();
    for (const auto& log_entry = trainer.state().log; logged < log_entry.size(); ++logged) {
      const auto& e = log_entry[logged];
      log << "epoch " << e.epoch << " steps " << e.steps << " loss " << e.loss << "\n";
    }
    if (more && c.save_every_epochs > 0 && trainer.epoch() % c.save_every_epochs == 0) {
      trainer.training_state().save(dir / "train_state.arc");
      pyramid::write_train_log(trainer.state(), dir / "train_log.csv");
    }
  }
  trainer.training_state().save(dir / "train_state.arc");

  pyramid::FusionLevelState& state = trainer.state();
  state.frozen = true;
  pyramid::save_level(state, run, c.seed);

  json freeze = json::array();
  bool intact = true;
  for (int j = 0; j < static_cast<int>(lower_hash_before.size()); ++j) {
    const std::string after = file_hash(pyramid::level_dir(run, j) / "checkpoint.arc");
    intact = intact && after == lower_hash_before[j];
    freeze.push_back({{"level", j},
                      {"sha256_before", lower_hash_before[j]},
                      {"sha256_after", after},
                      {"identical", after == lower_hash_before[j]}});
  }
  write_text(dir / "freeze_hashes.json", json{{"lower_levels", freeze}}.dump(2) + "\n");
  require(intact, ErrorKind::kInvariant, "a frozen lower-level checkpoint changed during training");

  TrainResult r;
  r.stop_reason = trainer.stop_reason();
  r.steps = trainer.steps();
  r.epochs = static_cast<int>(state.log.size());
  r.final_loss = state.log.empty() ? 0.0 : state.log.back().loss;
  r.checkpoint = dir / "checkpoint.arc";
  log << "stopped (" << r.stop_reason << ") after " << r.steps << " steps; checkpoint " << r.checkpoint.string()
      << "\n";
  return r;
}

json cmd_eval(const EvalOptions& o, std::ostream& log) {
  require(o.levels >= 0 && o.levels < pyramid::kNumLevels, ErrorKind::kConfig, "--levels must be 0, 1 or 2");
  require(!o.run.empty(), ErrorKind::kConfig, "--run is required");
  require(!o.data.empty(), ErrorKind::kConfig, "no dataset given (--data or RESTPOSE_DATA)");
  require(fs::is_directory(o.data), ErrorKind::kConfig, "dataset directory not found: " + o.data.string());
  require(o.split == "eval" || o.split == "train" || o.split == "all", ErrorKind::kConfig,
          "--split must be eval, train or all");
  const body::BodyTemplate tmpl = resolve_template(o.template_path);

  std::vector<pyramid::FusionLevelState> levels;
  for (int k = 0; k <= o.levels; ++k) levels.push_back(pyramid::load_level(o.run, k));
  std::vector<pyramid::FusionLevelState> variants;
  if (o.ablate) {
    for (const auto& v : pyramid::ablation_variants()) variants.push_back(pyramid::load_variant(o.run, v));
  }
  const net::HeadVector mean = pyramid::mean_head(run_mean_params(o.run));
  const data::Dataset ds = select_split(data::load_slp(o.data), o.data, o.split);

  json metrics = {{"split", o.split}, {"samples", ds.size()}};
  json level_rows = json::array();
  std::ostringstream per_sample;
  auto emit_records = [&](const pyramid::EvalReport& rep, const std::string& model) {
    for (const auto& r : rep.records) {
      json row = pyramid::to_json(r);
      row["model"] = model;
      row["K"] = rep.K;
      per_sample << row.dump() << "\n";
    }
  };

  std::vector<const pyramid::FusionLevelState*> ptrs;
  for (auto& s : levels) ptrs.push_back(&s);
  for (int k = 0; k <= o.levels; ++k) {
    const pyramid::CycleOptions opt = run_cycle_options(pyramid::level_dir(o.run, k));
    const pyramid::EvalReport rep = pyramid::evaluate(ptrs, tmpl, ds, mean, k, opt);
    json row = pyramid::to_json(rep);
    row["model"] = "pyramid";
    level_rows.push_back(row);
    emit_records(rep, "pyramid");
    log << "K=" << k << ": MPJPE " << rep.overall.mpjpe << " mm, reconstruction error "
        << rep.overall.reconstruction_error << " mm\n";
  }
  metrics["levels"] = level_rows;

  if (o.ablate) {
    json rows = json::array();
    for (auto& v : variants) {
      const pyramid::CycleOptions opt = run_cycle_options(pyramid::variant_dir(o.run, v.config.variant));
      const pyramid::EvalReport rep = pyramid::evaluate({&v}, tmpl, ds, mean, 0, opt);
      json row = pyramid::to_json(rep);
      row["model"] = v.config.variant;
      row["modalities"] = v.config.modalities;
      rows.push_back(row);
      emit_records(rep, v.config.variant);
      log << v.config.variant << ": MPJPE " << rep.overall.mpjpe << " mm\n";
    }
    json pyr = level_rows.back();
    pyr["modalities"] = levels.back().config.modalities;
    rows.push_back(pyr);
    metrics["ablation"] = rows;
  }

  write_text(o.run / "metrics.json", metrics.dump(2) + "\n");
  write_text(o.run / "per_sample.jsonl", per_sample.str());
  write_text(o.run / "tables.md", render_tables(metrics));
  return metrics;
}

void cmd_export_template(const fs::path& out, int n_vertices, std::uint64_t seed) {
  require(!out.empty(), ErrorKind::kConfig, "--out is required");
  require(n_vertices >= 100, ErrorKind::kConfig, "--vertices must be at least 100");
  body::ToyTemplateConfig cfg;
  cfg.n_vertices = n_vertices;
  cfg.seed = seed;
  const body::BodyTemplate tmpl = body::make_toy_template(cfg);
  if (out.has_parent_path()) make_dirs(out.parent_path());
  body::save_template(tmpl, out);
}

// ---------------------------------------------------------------------------------------------
// Argument parsing.

namespace {

std::string env_data() {
  const char* v = std::getenv("RESTPOSE_DATA");
  return v != nullptr ? v : "";
}

int dispatch(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"restpose: in-bed body pose and shape estimation"};
  app.require_subcommand(1);
  app.set_version_flag("--version", "restpose 0.1.0");

  // synth
  SynthOptions synth;
  std::string synth_out, covers = "all";
  auto* s = app.add_subcommand("synth", "Generate a synthetic multimodal dataset");
  s->add_option("--out", synth_out, "Output directory")->required();
  s->add_option("--subjects", synth.config.n_subjects, "Number of subjects");
  s->add_option("--poses", synth.config.poses_per_subject, "Poses per subject");
  s->add_option("--seed", synth.config.seed, "Random seed");
  s->add_option("--covers", covers, "Comma-separated cover types or 'all'");
  s->add_flag("--pm-dropout", synth.config.pm_dropout, "Drop a raised forearm from the pressure map");
  s->add_flag("--ir-ghost", synth.config.ir_ghost, "Leave a thermal ghost of a shifted pose");
  s->add_option("--template", synth.template_path, "Body template: 'toy' or a file");
  s->add_flag("--force", synth.force, "Write into a non-empty directory");

  // train: every RunConfig key is a flag.
  const json defaults = to_json(RunConfig{});
  std::map<std::string, std::string> raw;
  std::string config_path;
  bool resume = false;
  auto* t = app.add_subcommand("train", "Train one pyramid level (or an ablation model)");
  t->add_option("--config", config_path, "Flat JSON run config");
  t->add_flag("--resume", resume, "Continue from the level's train_state.arc");
  for (const auto& [key, value] : defaults.items()) t->add_option(flag_name(key), raw[key], "Overrides '" + key + "'");

  // eval
  EvalOptions ev;
  std::string ev_run, ev_data = env_data();
  auto* e = app.add_subcommand("eval", "Evaluate a run: metrics.json, per_sample.jsonl, tables.md");
  e->add_option("--run", ev_run, "Run directory")->required();
  e->add_option("--data", ev_data, "Dataset root (default $RESTPOSE_DATA)");
  e->add_option("--levels", ev.levels, "Highest pyramid level K to report");
  e->add_flag("--ablate", ev.ablate, "Also evaluate the ablation models");
  e->add_option("--split", ev.split, "eval, train or all");
  e->add_option("--template", ev.template_path, "Body template: 'toy' or a file");

  // report
  ReportOptions rep;
  std::string rep_run, rep_data = env_data(), rep_fig;
  auto* r = app.add_subcommand("report", "Render qualitative figures (PNG)");
  r->add_option("--run", rep_run, "Run directory")->required();
  r->add_option("--data", rep_data, "Dataset root (default $RESTPOSE_DATA)");
  r->add_option("--figures", rep_fig, "Output directory (default <run>/figures)");
  r->add_option("--levels", rep.levels, "Pyramid level K to show");
  r->add_option("--seed", rep.seed, "Sample selection seed");
  r->add_option("--split", rep.split, "eval, train or all");
  r->add_option("--template", rep.template_path, "Body template: 'toy' or a file");

  // export-template
  std::string tmpl_out;
  int tmpl_vertices = 600;
  std::uint64_t tmpl_seed = 7;
  auto* x = app.add_subcommand("export-template", "Write the toy body template to a file");
  x->add_option("--out", tmpl_out, "Output file")->required();
  x->add_option("--vertices", tmpl_vertices, "Vertex count");
  x->add_option("--seed", tmpl_seed, "Template seed");

  std::vector<std::string> argv_rev(args.rbegin(), args.rend());
  try {
    app.parse(argv_rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return kExitOk;
  } catch (const CLI::CallForVersion& v) {
    out << v.what() << "\n";
    return kExitOk;
  } catch (const CLI::ParseError& pe) {
    err << "error: " << pe.what() << "\n";
    return kExitConfig;
  }

  if (s->parsed()) {
    synth.out = synth_out;
    synth.config.covers = parse_covers(covers);
    cmd_synth(synth, out);
  } else if (t->parsed()) {
    json merged = defaults;
    merged["data"] = env_data();
    if (!config_path.empty()) {
      require(fs::exists(config_path), ErrorKind::kConfig, "config file not found: " + config_path);
      const json file = read_json_file(config_path, ErrorKind::kConfig);
      require(file.is_object(), ErrorKind::kConfig, config_path + " is not a JSON object");
      run_config_from_json(file);  // key and type checks
      for (const auto& [key, value] : file.items()) merged[key] = value;
    }
    for (const auto& [key, value] : defaults.items()) {
      if (t->get_option(flag_name(key))->count() > 0) merged[key] = convert_flag(key, raw[key], value);
    }
    const TrainResult res = cmd_train(run_config_from_json(merged), resume, out);
    (void)res;
  } else if (e->parsed()) {
    ev.run = ev_run;
    ev.data = ev_data;
    const json metrics = cmd_eval(ev, err);
    out << render_tables(metrics);
  } else if (r->parsed()) {
    rep.run = rep_run;
    rep.data = rep_data;
    rep.figures = rep_fig;
    for (const auto& p : cmd_report(rep, err)) out << p.string() << "\n";
  } else if (x->parsed()) {
    cmd_export_template(tmpl_out, tmpl_vertices, tmpl_seed);
    out << "wrote " << tmpl_out << "\n";
  }
  return kExitOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  try {
    return dispatch(args, out, err);
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return exit_code(e.kind());
  } catch (const std::bad_alloc&) {
    err << "error: out of memory\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitData;
  }
}

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  std::vector<std::string> args;
  for (int i = 1; i < argc; ++i) args.emplace_back(argv[i]);
  return run(args, out, err);
}

}  // namespace restpose::cli
