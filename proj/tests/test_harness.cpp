#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "taformer/core/tensor_io.hpp"
#include "taformer/harness/gradcheck.hpp"
#include "taformer/harness/run.hpp"

using namespace taf;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

RunConfig tiny(std::size_t steps = 3) {
  RunConfig c = gradcheck_config(11);
  c.steps = steps;
  c.data.clips = 2;
  return c;
}

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / "taformer_tests" / name;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::vector<double> flat_params(const Model& m) {
  std::vector<double> v;
  for (const auto& e : m.params().entries()) v.insert(v.end(), e.value.data().begin(), e.value.data().end());
  return v;
}

bool same(const EvalMetrics& a, const EvalMetrics& b) {
  return a.mean_loss == b.mean_loss && a.mean_iou == b.mean_iou && a.intra_similarity == b.intra_similarity &&
         a.inter_similarity == b.inter_similarity && a.track_consistency == b.track_consistency;
}

}  // namespace

TEST_CASE("run config") {
  SUBCASE("defaults are the toy scale") {
    const RunConfig c;
    CHECK(c.data.frames == 3);
    CHECK(c.data.height == 32);
    CHECK(c.encoder.channels == 32);
    CHECK(c.encoder.levels == 2);
    CHECK(c.encoder.heads == 2);
    CHECK(c.decoder.queries == 8);
    CHECK(c.encoder.layers == 2);
    CHECK(c.decoder.layers == 2);
    CHECK(c.steps == 500);
    CHECK(c.optim.lr == 1e-4);
    CHECK(c.optim.weight_decay == 1e-4);
    CHECK_NOTHROW(c.validate());
  }
  SUBCASE("json round trip") {
    RunConfig c = tiny();
    c.ablation.fusion = FusionMode::Concat;
    c.ablation.k_inter = 3;
    c.data.scenario = Scenario::Occlusion;
    const auto back = RunConfig::from_json(c.to_json());
    CHECK(back.to_json() == c.to_json());
    CHECK(back.ablation.fusion == FusionMode::Concat);
    CHECK(back.encoder_config().k_inter == 3);
  }
  SUBCASE("missing keys keep defaults") {
    const auto c = RunConfig::from_json(json{{"seed", 7}, {"data", {{"clips", 2}}}});
    CHECK(c.seed == 7);
    CHECK(c.data.clips == 2);
    CHECK(c.data.frames == 3);
  }
  SUBCASE("unknown keys and wrong types are rejected by name") {
    auto message = [](const json& j) {
      try {
        RunConfig::from_json(j);
      } catch (const ConfigError& e) {
        return std::string(e.what());
      }
      return std::string();
    };
    CHECK(message(json{{"ablation", {{"st_encc", true}}}}).find("st_encc") != std::string::npos);
    CHECK(message(json{{"colour", 1}}).find("colour") != std::string::npos);
    CHECK(message(json{{"data", {{"clips", "eight"}}}}).find("clips") != std::string::npos);
    CHECK(message(json{{"ablation", {{"fusion", "mean"}}}}).find("mean") != std::string::npos);
  }
  SUBCASE("invalid values") {
    RunConfig c;
    c.encoder.channels = 30;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = RunConfig{};
    c.data.height = 30;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = RunConfig{};
    c.ablation.st_enc = true;
    c.data.frames = 1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
  }
  SUBCASE("config files") {
    const auto dir = scratch("config");
    std::ofstream(dir / "good.json") << tiny().to_json().dump();
    CHECK(load_run_config(dir / "good.json").to_json() == tiny().to_json());
    std::ofstream(dir / "bad.json") << "{\"seed\": ";
    CHECK_THROWS(load_run_config(dir / "bad.json"));
    CHECK_THROWS(load_run_config(dir / "absent.json"));
  }
}

TEST_CASE("training") {
  SUBCASE("zero steps trains nothing and still evaluates") {
    const RunConfig c = tiny(0);
    const auto r = train(c);
    CHECK(r.report.losses.empty());
    CHECK(flat_params(*r.model) == flat_params(Model(c)));
    CHECK(r.report.final_loss == r.report.eval.mean_loss);
    CHECK(std::isfinite(r.report.final_loss));
  }
  SUBCASE("identical seeds give bit-identical runs, different seeds do not") {
    const auto a = train(tiny()), b = train(tiny());
    CHECK(a.report.losses == b.report.losses);
    CHECK(flat_params(*a.model) == flat_params(*b.model));
    CHECK(same(a.report.eval, b.report.eval));
    RunConfig other = tiny();
    other.seed = 12;
    CHECK(train(other).report.losses != a.report.losses);
  }
  SUBCASE("pool seeds follow the run seed") {
    const auto pool = training_pool(tiny());
    REQUIRE(pool.size() == 2);
    CHECK(pool[0].seed == 11000);
    CHECK(pool[1].seed == 11001);
  }
  SUBCASE("output files") {
    const auto dir = scratch("train");
    std::vector<std::size_t> seen;
    const auto r = train(tiny(), {dir, [&](const StepRecord& s) { seen.push_back(s.step); }});
    CHECK(seen == std::vector<std::size_t>{0, 1, 2});
    std::ifstream log(dir / "loss_log.jsonl");
    std::size_t lines = 0;
    for (std::string line; std::getline(log, line); ++lines) {
      const auto j = json::parse(line);
      CHECK(j["step"] == lines);
      CHECK(j["total"].get<double>() == r.report.losses[lines]);
      CHECK(j.contains("wall_time_s"));
    }
    CHECK(lines == 3);
    CHECK(json::parse(std::ifstream(dir / "metrics.json"))["final_loss"].get<double>() == r.report.final_loss);
    CHECK(fs::exists(dir / "checkpoint" / "params.taft"));
    CHECK(load_clip(dir / "clips" / "clip_11001").pixels.data().size() == 3 * 3 * 16 * 16);
  }
}

TEST_CASE("checkpoints") {
  const auto r = train(tiny(2));
  const auto dir = scratch("ckpt");
  save_checkpoint(*r.model, dir);

  SUBCASE("round trip reproduces parameters and metrics exactly") {
    const auto back = load_checkpoint(dir);
    CHECK(flat_params(*back) == flat_params(*r.model));
    CHECK(back->config().to_json() == r.model->config().to_json());
    CHECK(same(evaluate(*back, r.clips), r.report.eval));
  }
  SUBCASE("shape mismatch names every offending parameter") {
    auto manifest = json::parse(std::ifstream(dir / "manifest.json"));
    manifest["config"]["model"]["channels"] = 32;
    std::ofstream(dir / "manifest.json") << manifest.dump();
    try {
      load_checkpoint(dir);
      FAIL("expected FormatError");
    } catch (const FormatError& e) {
      const std::string msg = e.what();
      CHECK(msg.find("backbone") != std::string::npos);
      CHECK(msg.find("decoder") != std::string::npos);
    }
  }
  SUBCASE("truncated parameter file") {
    fs::resize_file(dir / "params.taft", fs::file_size(dir / "params.taft") / 2);
    CHECK_THROWS_AS(load_checkpoint(dir), FormatError);
  }
  SUBCASE("missing directory") { CHECK_THROWS_AS(load_checkpoint(dir / "nope"), FormatError); }
}

TEST_CASE("evaluation and prediction dumps") {
  const auto r = train(tiny(2));
  json pred;
  const auto m = evaluate(*r.model, r.clips, &pred);
  CHECK(same(m, r.report.eval));
  CHECK_NOTHROW(validate_predictions(pred));
  REQUIRE(pred["clips"].size() == 2);
  CHECK(pred["mask_shape"] == json::array({4, 4}));
  CHECK(m.mean_iou >= 0.0);
  CHECK(m.mean_iou <= 1.0);
  CHECK(m.track_consistency >= 1.0 / 3.0 - 1e-12);  // the majority slot owns at least one of three frames
  CHECK(m.track_consistency <= 1.0);

  auto broken = [&](auto mutate) {
    json p = pred;
    mutate(p);
    CHECK_THROWS_AS(validate_predictions(p), FormatError);
  };
  broken([](json& p) { p["format"] = "other"; });
  broken([](json& p) { p["clips"][0]["slots"].erase(0); });
  broken([](json& p) { p["clips"][0]["slots"][0]["class_probs"].push_back(0.5); });
  broken([](json& p) { p["clips"][0]["slots"][1]["boxes"][0][2] = 1.5; });
  broken([](json& p) { p["clips"][0]["instances"][0]["slot"] = 99; });
  broken([](json& p) {
    auto& inst = p["clips"][0]["instances"];
    inst[0]["slot"] = inst[1]["slot"];
  });
  broken([](json& p) { p["clips"][1]["instances"][0]["iou"][0] = -0.1; });
}

TEST_CASE("dump") {
  const auto r = train(tiny(2));
  const auto dir = scratch("dump");
  const auto doc = dump_clip(*r.model, r.clips[1], dir);
  const auto& cfg = r.model->config();
  for (std::size_t t = 0; t < cfg.data.frames; ++t)
    for (const char* kind : {"backbone", "encoder"}) {
      std::size_t h = 0, w = 0;
      const auto px = read_pgm(dir / (std::string(kind) + "_t" + std::to_string(t) + ".pgm"), h, w);
      CHECK(h == cfg.data.height / 4);
      CHECK(w == cfg.data.width / 4);
      CHECK(px.size() == h * w);
    }
  const auto& entries = doc["entries"];
  REQUIRE(entries.size() == cfg.data.frames * cfg.decoder.queries);
  CHECK(json::parse(std::ifstream(dir / "embeddings.json")) == doc);

  json pred;
  evaluate(*r.model, {r.clips[1]}, &pred);
  const auto& slots = pred["clips"][0]["slots"];
  for (const auto& e : entries) {
    CHECK(e["embedding"].size() == cfg.encoder.channels);
    CHECK(e["instance"] == slots[e["slot"].get<std::size_t>()]["instance"]);
    if (e["instance"].get<int>() >= 0)
      CHECK(e["class_id"] == r.clips[1].tracks[e["instance"].get<std::size_t>()].class_id);
  }
}

TEST_CASE("gradcheck catches a broken backward rule") {
  GradcheckOptions o;
  o.probes_per_tensor = 2;
  o.inject_fault = "linear";
  const auto r = run_gradcheck(o);
  CHECK_FALSE(r.pass());
  bool op_failed = false;
  for (const auto& row : r.ops) op_failed = op_failed || (row.name == "linear" && !row.pass());
  CHECK(op_failed);
  CHECK(r.table().find("FAIL") != std::string::npos);
  // the fault is scoped to the run
  const auto clean = run_gradcheck({.probes_per_tensor = 2});
  CHECK(clean.pass());
}

TEST_CASE("ablation variants") {
  const RunConfig base = tiny();
  auto names = [&](AblationAxis a) {
    std::vector<std::string> n;
    for (const auto& [name, cfg] : ablation_variants(base, a)) n.push_back(name);
    return n;
  };
  CHECK(names(AblationAxis::Components) ==
        std::vector<std::string>{"baseline", "baseline+st_enc", "baseline+st_enc+tsa", "baseline+st_enc+tsa+cl"});
  CHECK(names(AblationAxis::KInter) == std::vector<std::string>{"k_inter=1", "k_inter=2", "k_inter=3", "k_inter=4"});
  CHECK(names(AblationAxis::Fusion) == std::vector<std::string>{"fusion=add", "fusion=concat", "fusion=dynamic"});

  const auto comp = ablation_variants(base, AblationAxis::Components);
  CHECK_FALSE(comp[0].second.encoder_config().temporal);
  CHECK_FALSE(comp[0].second.decoder_config().tsa);
  CHECK_FALSE(comp[0].second.loss_weights().use_contrastive);
  CHECK(comp[1].second.encoder_config().temporal);
  CHECK_FALSE(comp[1].second.decoder_config().tsa);
  CHECK(comp[2].second.decoder_config().tsa);
  CHECK_FALSE(comp[2].second.loss_weights().use_contrastive);
  CHECK(comp[3].second.loss_weights().use_contrastive);
  for (const auto& [name, cfg] : comp) CHECK(cfg.seed == base.seed);
  CHECK_THROWS_AS(parse_axis("depth"), std::invalid_argument);

  RunConfig one = tiny(1);
  const auto rows = run_ablation(one, AblationAxis::Fusion);
  const auto csv = ablation_csv(rows);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);
  CHECK(csv.find("fusion=concat") != std::string::npos);
}

TEST_CASE("mask IoU") {
  const std::vector<double> logits{2, -1, 0.5, -3};
  CHECK(mask_iou(logits, {1, 0, 1, 0}) == 1.0);
  CHECK(mask_iou(logits, {1, 1, 0, 0}) == doctest::Approx(1.0 / 3.0));
  CHECK(mask_iou(std::vector<double>{-1, -1}, {0, 0}) == 1.0);
  CHECK(mask_iou(std::vector<double>{1, -1}, {0, 1}) == 0.0);
}
