// taformer: toy training, evaluation, gradient checks, ablations and dumps.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "taformer/core/tensor_io.hpp"
#include "taformer/harness/gradcheck.hpp"
#include "taformer/harness/run.hpp"

using namespace taf;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr int kOk = 0;
constexpr int kInvalid = 1;
constexpr int kCheckFailed = 2;

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

RunConfig resolve_config(const Globals& g) {
  RunConfig cfg = g.config.empty() ? RunConfig{} : load_run_config(g.config);
  if (g.seed) cfg.seed = *g.seed;
  cfg.validate();
  return cfg;
}

void write_json(const fs::path& path, const json& j) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream os(path);
  os << j.dump(1) << '\n';
  if (!os) throw FormatError("write failed for " + path.string());
}

json eval_json(const EvalMetrics& e) {
  return {{"mean_loss", e.mean_loss},
          {"mean_iou", e.mean_iou},
          {"intra_similarity", e.intra_similarity},
          {"inter_similarity", e.inter_similarity},
          {"separation", e.separation()},
          {"track_consistency", e.track_consistency}};
}

std::vector<SynthClip> load_clip_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw FormatError("clips directory " + dir.string() + " does not exist");
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_directory() && e.path().filename().string().rfind("clip_", 0) == 0) dirs.push_back(e.path());
  if (dirs.empty()) throw FormatError("no clip_<seed> directories under " + dir.string());
  std::sort(dirs.begin(), dirs.end());
  std::vector<SynthClip> clips;
  for (const auto& d : dirs) clips.push_back(load_clip(d));
  return clips;
}

void check_clip_shape(const RunConfig& cfg, const SynthClip& c) {
  const auto& o = c.options;
  if (o.frames != cfg.data.frames || o.height != cfg.data.height || o.width != cfg.data.width)
    throw ConfigError("clip " + std::to_string(c.seed) + " is " + std::to_string(o.frames) + "x" + std::to_string(o.height) +
                      "x" + std::to_string(o.width) + ", model expects " + std::to_string(cfg.data.frames) + "x" +
                      std::to_string(cfg.data.height) + "x" + std::to_string(cfg.data.width));
}

int cmd_train(const Globals& g, std::optional<std::size_t> steps) {
  RunConfig cfg = resolve_config(g);
  if (steps) cfg.steps = *steps;
  cfg.validate();
  const fs::path out = g.out.empty() ? "out/train" : g.out;
  TrainOptions opts;
  opts.out = out;
  opts.on_step = [&cfg](const StepRecord& r) {
    if (r.step % 50 == 0 || r.step + 1 == cfg.steps)
      std::printf("step %4zu  loss %.4f  grad_norm %.3f  %.1fs\n", r.step, r.total, r.grad_norm, r.wall_time_s);
  };
  const auto r = train(cfg, opts);
  std::printf("%s\n", r.report.to_json().dump(1).c_str());
  std::printf("wrote %s/{loss_log.jsonl,metrics.json,checkpoint/,clips/}\n", out.string().c_str());
  return kOk;
}

int cmd_eval(const Globals& g, const std::string& checkpoint, const std::string& clips_dir) {
  auto model = load_checkpoint(checkpoint);
  const auto& cfg = model->config();
  const auto clips = clips_dir.empty() ? training_pool(cfg) : load_clip_dir(clips_dir);
  for (const auto& c : clips) check_clip_shape(cfg, c);
  json predictions;
  const auto m = evaluate(*model, clips, &predictions);
  validate_predictions(predictions);
  const fs::path out = g.out.empty() ? "out/eval" : g.out;
  write_json(out / "metrics.json", eval_json(m));
  write_json(out / "predictions.json", predictions);
  std::printf("%s\n", eval_json(m).dump(1).c_str());
  return kOk;
}

int cmd_gradcheck(const Globals& g, std::size_t probes, const std::string& fault) {
  GradcheckOptions o;
  if (!g.config.empty()) o.seed = load_run_config(g.config).seed;
  if (g.seed) o.seed = *g.seed;
  o.probes_per_tensor = probes;
  o.inject_fault = fault;
  const auto r = run_gradcheck(o);
  std::printf("%s", r.table().c_str());
  std::printf("gradcheck %s\n", r.pass() ? "PASS" : "FAIL");
  return r.pass() ? kOk : kCheckFailed;
}

int cmd_ablate(const Globals& g, const std::string& axis_name) {
  const auto axis = parse_axis(axis_name);
  const RunConfig base = resolve_config(g);
  ablation_variants(base, axis);  // validates every variant before training
  const auto rows = run_ablation(base, axis, [](const AblationRow& r) {
    std::printf("%-24s loss %.4f -> %.4f  iou %.3f  track %.3f  sep %.3f\n", r.variant.c_str(), r.report.initial_loss,
                r.report.final_loss, r.report.eval.mean_iou, r.report.eval.track_consistency, r.report.eval.separation());
    std::fflush(stdout);
  });
  const fs::path out = g.out.empty() ? "out/ablate" : g.out;
  fs::create_directories(out);
  const fs::path csv = out / ("ablation_" + axis_name + ".csv");
  std::ofstream(csv) << ablation_csv(rows);
  std::printf("wrote %s\n", csv.string().c_str());
  return kOk;
}

int cmd_dump(const Globals& g, const std::string& checkpoint, const std::string& clip_dir) {
  auto model = load_checkpoint(checkpoint);
  const auto clip = clip_dir.empty() ? training_pool(model->config()).front() : load_clip(clip_dir);
  check_clip_shape(model->config(), clip);
  const fs::path out = g.out.empty() ? "out/dump" : g.out;
  const auto doc = dump_clip(*model, clip, out);
  std::printf("wrote %zu frame maps (x2) and %zu embeddings to %s\n", clip.options.frames, doc["entries"].size(),
              out.string().c_str());
  return kOk;
}

int cmd_synth(const Globals& g, const std::string& scenario, std::size_t count, std::size_t instances) {
  RunConfig cfg = resolve_config(g);
  SynthOptions o = cfg.synth_options();
  if (!scenario.empty()) o.scenario = parse_scenario(scenario);
  if (instances) o.instances = instances;
  o.validate();
  const fs::path out = g.out.empty() ? "out/clips" : g.out;
  for (std::size_t i = 0; i < count; ++i) {
    const auto p = save_clip(generate_clip(cfg.seed * 1000 + i, o), out);
    std::printf("%s\n", p.string().c_str());
  }
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"taformer: spatio-temporal video instance segmentation at toy scale"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config, "JSON run config (defaults apply when omitted)");
  app.add_option("--seed", g.seed, "override the config seed");
  app.add_option("--out", g.out, "output directory");

  std::optional<std::size_t> steps;
  auto* train = app.add_subcommand("train", "train on a synthetic clip pool");
  train->add_option("--steps", steps, "override the step count");

  std::string checkpoint, clips_dir, clip_dir;
  auto* eval = app.add_subcommand("eval", "forward-only metrics and prediction dump");
  eval->add_option("--checkpoint", checkpoint, "checkpoint directory")->required();
  eval->add_option("--clips", clips_dir, "directory of clip_<seed> folders (default: the training pool)");

  std::size_t probes = 8;
  std::string fault;
  auto* grad = app.add_subcommand("gradcheck", "finite-difference check of every op and parameter group");
  grad->add_option("--probes", probes, "entries probed per parameter tensor, 0 = all");
  grad->add_option("--inject-fault", fault, "perturb this op's backward rule (test fixture)");

  std::string axis;
  auto* ablate = app.add_subcommand("ablate", "train every variant along one axis and write a CSV");
  ablate->add_option("--axis", axis, "components | k_inter | fusion")->required();

  auto* dump = app.add_subcommand("dump", "encoder attention maps and box-query embeddings");
  dump->add_option("--checkpoint", checkpoint, "checkpoint directory")->required();
  dump->add_option("--clip", clip_dir, "clip_<seed> directory (default: first training clip)");

  std::string scenario;
  std::size_t count = 1, instances = 0;
  auto* synth = app.add_subcommand("synth", "write synthetic clips to disk");
  synth->add_option("--scenario", scenario, "plain | fast-motion | occlusion | same-class-pair");
  synth->add_option("--count", count, "number of clips");
  synth->add_option("--instances", instances, "instances per clip (default from config)");

  for (auto* sub : {train, eval, grad, ablate, dump, synth}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kInvalid;
  }

  try {
    if (*train) return cmd_train(g, steps);
    if (*eval) return cmd_eval(g, checkpoint, clips_dir);
    if (*grad) return cmd_gradcheck(g, probes, fault);
    if (*ablate) return cmd_ablate(g, axis);
    if (*dump) return cmd_dump(g, checkpoint, clip_dir);
    if (*synth) return cmd_synth(g, scenario, count, instances);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kInvalid;
  }
  return kInvalid;
}
