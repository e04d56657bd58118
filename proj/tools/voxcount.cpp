// voxcount command-line driver.
//
//   voxcount synth-corpus --voices 20 --seed 7 --out corpus/
//   voxcount featurize --config desk.json --out shards/
//   voxcount train --shards shards/ --out run/
//   voxcount evaluate --checkpoint run/model.vxck --shard shards/test.vxfm --out eval/
//   voxcount ablate --grid architecture --out table1/
//   voxcount robustness --k 3 --out fig5/
//
// Exit codes: 0 ok, 1 bad input, 2 internal/numeric failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <memory>
#include <optional>
#include <string>
#include <thread>

#include <CLI11.hpp>
#include <json.hpp>

#include "voxcount/experiments.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace voxcount;

namespace {

struct CommonOptions {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::size_t jobs = std::max(1u, std::thread::hardware_concurrency());
  bool paper_scale = false;
  int verbosity = 0;
  std::string corpus_dir;
  std::optional<std::size_t> epochs;
  std::optional<std::size_t> count;
};

void add_common(CLI::App* cmd, CommonOptions& o, bool with_corpus = true) {
  cmd->add_option("--config", o.config_path, "JSON experiment config (flags override it)");
  cmd->add_option("--seed", o.seed, "64-bit master seed");
  cmd->add_option("--out", o.out_dir, "output directory")->required();
  cmd->add_option("--jobs", o.jobs, "worker thread cap")->check(CLI::PositiveNumber);
  cmd->add_flag("--paper-scale,!--desk-scale", o.paper_scale, "full paper geometry instead of the desk defaults");
  cmd->add_flag("-v,--verbose", o.verbosity, "per-epoch progress on stderr");
  if (with_corpus) {
    cmd->add_option("--corpus", o.corpus_dir, "corpus directory with manifest.json (default: synthesize)");
    cmd->add_option("--epochs", o.epochs, "override the epoch count");
    cmd->add_option("--count", o.count, "override the number of mixtures");
  }
}

void log(const std::string& msg) { std::cerr << "[voxcount] " << msg << '\n'; }

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw InputError(path + ": " + e.what());
  }
}

/// Preset, then config file, then flags.
ExperimentSpec resolve_spec(const CommonOptions& o) {
  ExperimentSpec spec = o.paper_scale ? ExperimentSpec::paper() : ExperimentSpec::desk();
  if (!o.config_path.empty()) {
    try {
      from_json(read_json_file(o.config_path), spec);
    } catch (const json::exception& e) {
      throw InputError(o.config_path + ": " + e.what());
    }
  }
  if (o.seed) spec.seed = *o.seed;
  if (o.epochs) spec.epochs = *o.epochs;
  if (o.count) spec.dataset.count = *o.count;
  spec.validate();
  return spec;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write " + path.string());
  out << text;
}

void write_run_manifest(const fs::path& dir, const std::string& command, const json& resolved) {
  write_text(dir / "run.json", json{{"command", command}, {"resolved", resolved}}.dump(2) + "\n");
}

void prepare_out_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw InputError("cannot create output directory " + dir + ": " + ec.message());
}

std::unique_ptr<DataProvider> make_provider(const CommonOptions& o) {
  auto p = std::make_unique<DataProvider>(o.jobs, log);
  if (!o.corpus_dir.empty()) p->set_corpus(Corpus::load(fs::path(o.corpus_dir) / "manifest.json"));
  return p;
}

ProgressFn progress_printer(const CommonOptions& o) {
  if (o.verbosity == 0) return {};
  return [](const MetricsRecord& r) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%s%sepoch %zu  train %.6f  val %.6f", r.point.c_str(), r.point.empty() ? "" : "  ",
                  r.epoch, r.train_mse, r.val_mse);
    log(buf);
  };
}

json eval_json(const EvalResult& e) {
  return {{"mse", e.mse}, {"count_accuracy", e.count_accuracy}, {"windows", e.windows}, {"clips", e.clips}};
}

// ---------------------------------------------------------------------------

int cmd_synth_corpus(const CommonOptions& o, std::size_t voices, std::size_t scenes) {
  ExperimentSpec spec = resolve_spec(o);
  spec.dataset.corpus.voices_per_gender = voices;
  spec.dataset.corpus.scenes = scenes;
  require(voices >= 1 && scenes >= 1, "--voices and --scenes must be >= 1");
  prepare_out_dir(o.out_dir);
  log("synthesizing " + std::to_string(voices) + " voices per gender, " + std::to_string(scenes) + " scenes");
  write_corpus(synth_corpus(spec.dataset.corpus, spec.corpus_seed()), o.out_dir);
  write_run_manifest(o.out_dir, "synth-corpus",
                     {{"seed", spec.seed}, {"voices_per_gender", voices}, {"scenes", scenes},
                      {"voice_duration_s", spec.dataset.corpus.voice_duration_s},
                      {"noise_duration_s", spec.dataset.corpus.noise_duration_s}});
  return 0;
}

int cmd_generate(const CommonOptions& o) {
  const ExperimentSpec spec = resolve_spec(o);
  auto provider = make_provider(o);
  const auto corpus = provider->corpus(spec);
  prepare_out_dir(o.out_dir);
  const fs::path dir = fs::path(o.out_dir) / "mixtures";
  fs::create_directories(dir);
  const auto recipes = plan_dataset(spec.dataset.count, spec.dataset_seed(), spec.dataset.n_max);
  MixtureOptions opt;
  opt.n_max = spec.dataset.n_max;
  std::vector<std::string> tags(recipes.size());
  log("mixing " + std::to_string(recipes.size()) + " clips");
  parallel_for(recipes.size(), o.jobs, [&](std::size_t i) {
    const auto s = generate_mixture(*corpus, recipes[i].n_males, recipes[i].n_females, spec.dataset.snr_db,
                                    recipes[i].seed, opt);
    char name[32];
    std::snprintf(name, sizeof name, "%06zu.wav", i);
    write_wav(dir / name, s.clip);
    tags[i] = s.noise_tag;
  });
  std::string labels = "index,file,n_males,n_females,noise,seed\n";
  for (std::size_t i = 0; i < recipes.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "%06zu.wav", i);
    labels += std::to_string(i) + ",mixtures/" + name + "," + std::to_string(recipes[i].n_males) + "," +
              std::to_string(recipes[i].n_females) + "," + tags[i] + "," + std::to_string(recipes[i].seed) + "\n";
  }
  write_text(fs::path(o.out_dir) / "labels.csv", labels);
  write_run_manifest(o.out_dir, "generate", {{"experiment", spec}, {"corpus", o.corpus_dir}});
  return 0;
}

int cmd_featurize(const CommonOptions& o) {
  const ExperimentSpec spec = resolve_spec(o);
  auto provider = make_provider(o);
  const auto all = provider->features(spec);
  const auto parts = make_split_shards(*all, spec.dataset.count, spec.split());
  const NormStats stats = fit_norm_stats(parts.train);
  prepare_out_dir(o.out_dir);
  const std::pair<const char*, const FeatureShard*> files[] = {
      {"train", &parts.train}, {"validation", &parts.validation}, {"test", &parts.test}};
  for (const auto& [name, shard] : files) {
    ShardSidecar side{name, spec.mfcc, spec.plan, stats, spec.dataset.n_max, shard->records.size()};
    write_shard(fs::path(o.out_dir) / (std::string(name) + ".vxfm"), *shard, side);
    log(std::string(name) + ": " + std::to_string(shard->records.size()) + " windows");
  }
  write_run_manifest(o.out_dir, "featurize", {{"experiment", spec}, {"corpus", o.corpus_dir}});
  return 0;
}

PreparedData load_shard_dir(const fs::path& dir, const ExperimentSpec& spec) {
  const auto train = read_shard(dir / "train.vxfm");
  const auto val = read_shard(dir / "validation.vxfm");
  const auto test = read_shard(dir / "test.vxfm");
  const auto expected = feature_config_hash(spec.mfcc, spec.plan);
  for (const auto* s : {&train, &val, &test})
    if (s->sidecar.config_hash() != expected)
      throw InputError("shard " + s->sidecar.split + " was produced with a different MFCC/window configuration");
  require(train.sidecar.n_max == spec.dataset.n_max, "shard n_max does not match the experiment");
  return prepare_from_shards(train.shard, val.shard, test.shard, spec.dataset.n_max, expected);
}

int cmd_train(const CommonOptions& o, const std::string& shard_dir) {
  ExperimentSpec spec = resolve_spec(o);
  if (!shard_dir.empty() && o.config_path.empty() && fs::exists(fs::path(shard_dir) / "run.json")) {
    // Without an explicit config, pick up the feature settings the shards were made with.
    const auto run = read_json_file((fs::path(shard_dir) / "run.json").string());
    from_json(run.at("resolved").at("experiment"), spec);
    if (o.seed) spec.seed = *o.seed;
    if (o.epochs) spec.epochs = *o.epochs;
    spec.validate();
  }
  PreparedData data;
  if (!shard_dir.empty()) {
    data = load_shard_dir(shard_dir, spec);
  } else {
    auto provider = make_provider(o);
    data = provider->prepare(spec);
  }
  log("training " + display_name(spec.architecture) + " on " + std::to_string(data.train.size()) + " windows");
  const auto result = train(spec, data, "", progress_printer(o));
  prepare_out_dir(o.out_dir);
  const fs::path out(o.out_dir);
  write_text(out / "metrics.csv", emit_metrics_csv(result.history));
  nn::write_checkpoint(out / "model.vxck", result.checkpoint);
  write_text(out / "model.vxck.json", checkpoint_sidecar(result.model, spec, false).dump(2) + "\n");
  auto net = load_network(result.model, result.checkpoint);
  const json summary = {{"best_epoch", result.best_epoch},
                        {"train_mse", result.best_train_mse},
                        {"val_mse", result.best_val_mse},
                        {"test", data.test.size() ? eval_json(evaluate(net, data.test)) : json()},
                        {"parameters", parameter_count(result.model)}};
  write_text(out / "summary.json", summary.dump(2) + "\n");
  write_run_manifest(out, "train", {{"experiment", spec}, {"shards", shard_dir}, {"corpus", o.corpus_dir}});
  log("best epoch " + std::to_string(result.best_epoch) + ", val MSE " + format_double(result.best_val_mse));
  return 0;
}

int cmd_evaluate(const CommonOptions& o, const std::string& checkpoint, const std::string& shard_path) {
  const auto side = read_json_file(checkpoint + ".json");
  ModelConfig model;
  std::uint64_t feature_hash = 0;
  try {
    model = side.at("model").get<ModelConfig>();
    feature_hash = side.at("feature_hash").get<std::uint64_t>();
  } catch (const json::exception& e) {
    throw InputError(checkpoint + ".json: " + e.what());
  }
  const auto snap = nn::read_checkpoint(fs::path(checkpoint));
  const auto shard = read_shard(shard_path);
  if (shard.sidecar.config_hash() != feature_hash)
    throw InputError("shard features do not match the checkpoint's MFCC/window configuration");
  const auto windows = make_window_set(shard.shard, shard.sidecar.norm_stats, shard.sidecar.n_max);
  const auto result = evaluate(model, snap, windows);
  prepare_out_dir(o.out_dir);
  write_text(fs::path(o.out_dir) / "eval.json", eval_json(result).dump(2) + "\n");
  write_run_manifest(o.out_dir, "evaluate", {{"checkpoint", checkpoint}, {"shard", shard_path}});
  log("MSE " + format_double(result.mse) + ", count accuracy " + format_double(result.count_accuracy));
  return 0;
}

int cmd_ablate(const CommonOptions& o, const std::string& grid_name) {
  const GridKind grid = parse_grid_kind(grid_name);
  const ExperimentSpec spec = resolve_spec(o);
  auto provider = make_provider(o);
  // Threads go to mixture synthesis first; points then train one per worker.
  const auto report = run_ablation(grid, spec, *provider, o.jobs, progress_printer(o));
  prepare_out_dir(o.out_dir);
  write_text(fs::path(o.out_dir) / "ablation.csv", emit_ablation_csv(report));
  write_text(fs::path(o.out_dir) / "metrics.csv", emit_metrics_csv(report.metrics));
  write_run_manifest(o.out_dir, "ablate", {{"grid", grid}, {"experiment", spec}, {"corpus", o.corpus_dir}});
  bool any_failed = false;
  for (const auto& row : report.rows) {
    log(row.point + ": " + (row.ok() ? "val MSE " + format_double(row.val_mse) : "failed: " + row.error));
    any_failed |= !row.ok();
  }
  return any_failed ? 2 : 0;
}

int cmd_robustness(const CommonOptions& o, std::size_t k) {
  const ExperimentSpec spec = resolve_spec(o);
  require(k >= 2, "--k must be >= 2");
  auto provider = make_provider(o);
  const auto report = run_split_robustness(spec, k, *provider, o.jobs, progress_printer(o));
  prepare_out_dir(o.out_dir);
  write_text(fs::path(o.out_dir) / "robustness.csv", emit_robustness_csv(report));
  write_text(fs::path(o.out_dir) / "metrics.csv", emit_metrics_csv(report.metrics));
  write_run_manifest(o.out_dir, "robustness", {{"k", k}, {"experiment", spec}, {"corpus", o.corpus_dir}});
  log("relative spread " + format_double(report.relative_spread()));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Estimate the number of concurrent male and female speakers"};
  app.require_subcommand(1);

  CommonOptions o;
  std::size_t voices = 20, scenes = 10, k = 3;
  std::string shard_dir, checkpoint, shard_path, grid;

  auto* synth = app.add_subcommand("synth-corpus", "write a synthetic voice/noise corpus");
  add_common(synth, o, false);
  synth->add_option("--voices", voices, "voices per gender");
  synth->add_option("--scenes", scenes, "noise scenes");

  auto* generate = app.add_subcommand("generate", "write labelled 5 s mixtures as WAV");
  add_common(generate, o);

  auto* featurize = app.add_subcommand("featurize", "write train/validation/test MFCC shards");
  add_common(featurize, o);

  auto* train_cmd = app.add_subcommand("train", "train one model");
  add_common(train_cmd, o);
  train_cmd->add_option("--shards", shard_dir, "directory written by featurize (default: build in memory)");

  auto* eval_cmd = app.add_subcommand("evaluate", "score a checkpoint on a shard");
  add_common(eval_cmd, o, false);
  eval_cmd->add_option("--checkpoint", checkpoint, "model.vxck from train")->required();
  eval_cmd->add_option("--shard", shard_path, "feature shard (.vxfm)")->required();

  auto* ablate = app.add_subcommand("ablate", "train every point of a comparison grid");
  add_common(ablate, o);
  ablate->add_option("--grid", grid, "architecture, kernel, channels, filters or window")->required();

  auto* robust = app.add_subcommand("robustness", "retrain under several split seeds");
  add_common(robust, o);
  robust->add_option("--k", k, "number of split seeds");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    if (*synth) return cmd_synth_corpus(o, voices, scenes);
    if (*generate) return cmd_generate(o);
    if (*featurize) return cmd_featurize(o);
    if (*train_cmd) return cmd_train(o, shard_dir);
    if (*eval_cmd) return cmd_evaluate(o, checkpoint, shard_path);
    if (*ablate) return cmd_ablate(o, grid);
    if (*robust) return cmd_robustness(o, k);
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << '\n';
    return 2;
  }
  return 1;
}
