#include "taformer/harness/config.hpp"

#include <fstream>
#include <set>

namespace taf {
using nlohmann::json;

namespace {

// Reads typed fields out of one JSON object and rejects keys nobody asked for.
class Section {
 public:
  Section(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(where() + " must be a JSON object");
  }

  template <typename T>
  void get(const char* key, T& dst) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      dst = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw ConfigError(where(key) + " has the wrong type (got " + std::string(j_.at(key).type_name()) + ")");
    }
  }

  void get_enum(const char* key, FusionMode& dst) {
    std::string s = fusion_mode_name(dst);
    get(key, s);
    dst = parse_fusion_mode(s);
  }

  void get_enum(const char* key, Scenario& dst) {
    std::string s = scenario_name(dst);
    get(key, s);
    try {
      dst = parse_scenario(s);
    } catch (const SynthError& e) {
      throw ConfigError(where(key) + ": " + e.what());
    }
  }

  Section child(const char* key) {
    seen_.insert(key);
    static const json empty = json::object();
    return Section(j_.contains(key) ? j_.at(key) : empty, path_.empty() ? key : path_ + "." + key);
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw ConfigError("unknown config key '" + (path_.empty() ? k : path_ + "." + k) + "'");
  }

 private:
  std::string where(const std::string& key = "") const {
    std::string p = path_.empty() ? key : (key.empty() ? path_ : path_ + "." + key);
    return "config " + (p.empty() ? std::string("root") : "'" + p + "'");
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace

EncoderConfig RunConfig::encoder_config() const {
  EncoderConfig e = encoder;
  e.temporal = ablation.st_enc;
  e.fusion = ablation.fusion;
  e.k_inter = ablation.k_inter;
  return e;
}

DecoderConfig RunConfig::decoder_config() const {
  DecoderConfig d = decoder;
  d.channels = encoder.channels;
  d.heads = encoder.heads;
  d.levels = encoder.levels;
  d.tsa = ablation.tsa;
  return d;
}

LossWeights RunConfig::loss_weights() const {
  LossWeights w = loss;
  w.use_contrastive = ablation.contrastive;
  w.contrastive_all_layers = ablation.aux_contrastive;
  return w;
}

SynthOptions RunConfig::synth_options() const {
  SynthOptions o;
  o.frames = data.frames;
  o.height = data.height;
  o.width = data.width;
  o.instances = data.instances;
  o.scenario = data.scenario;
  return o;
}

void RunConfig::validate() const {
  if (data.clips == 0) throw ConfigError("data.clips must be at least 1");
  if (data.frames == 0) throw ConfigError("data.frames must be at least 1");
  if (data.frames == 1 && ablation.st_enc)
    throw ConfigError("data.frames = 1 leaves temporal attention nothing to sample; set ablation.st_enc to false");
  encoder_config().validate();
  decoder_config().validate();
  loss_weights().validate();
  if (decoder.num_classes < 3) throw ConfigError("model.num_classes must be at least 3 (circle, square, triangle)");
  if (data.instances > decoder.queries)
    throw ConfigError("data.instances (" + std::to_string(data.instances) + ") exceeds model.queries (" +
                      std::to_string(decoder.queries) + ")");
  const std::size_t div = std::size_t{1} << (encoder.levels + 1);
  if (data.height % div || data.width % div)
    throw ConfigError("data.height and data.width must be multiples of " + std::to_string(div) + " for " +
                      std::to_string(encoder.levels) + " feature levels");
  try {
    synth_options().validate();
  } catch (const SynthError& e) {
    throw ConfigError(std::string("data: ") + e.what());
  }
  if (!(optim.lr > 0) || optim.weight_decay < 0 || !(optim.beta1 >= 0 && optim.beta1 < 1) ||
      !(optim.beta2 >= 0 && optim.beta2 < 1) || !(optim.eps > 0))
    throw ConfigError("optim: need lr > 0, weight_decay >= 0, 0 <= beta < 1, eps > 0");
  if (grad_clip < 0) throw ConfigError("optim.grad_clip must be >= 0");
}

json RunConfig::to_json() const {
  return {
      {"seed", seed},
      {"steps", steps},
      {"data",
       {{"clips", data.clips},
        {"frames", data.frames},
        {"height", data.height},
        {"width", data.width},
        {"instances", data.instances},
        {"scenario", scenario_name(data.scenario)}}},
      {"model",
       {{"channels", encoder.channels},
        {"heads", encoder.heads},
        {"levels", encoder.levels},
        {"k_intra", encoder.k_intra},
        {"window", encoder.window},
        {"enc_layers", encoder.layers},
        {"enc_ffn", encoder.ffn_hidden},
        {"gate_reduction", encoder.gate_reduction},
        {"pooled_gates", encoder.pooled_gates},
        {"queries", decoder.queries},
        {"dec_layers", decoder.layers},
        {"dec_points", decoder.points},
        {"dec_ffn", decoder.ffn_hidden},
        {"num_classes", decoder.num_classes},
        {"tsa_temporal_pos", decoder.tsa_temporal_pos},
        {"class_prior_bias", decoder.class_prior_bias}}},
      {"ablation",
       {{"st_enc", ablation.st_enc},
        {"tsa", ablation.tsa},
        {"contrastive", ablation.contrastive},
        {"aux_contrastive", ablation.aux_contrastive},
        {"fusion", fusion_mode_name(ablation.fusion)},
        {"k_inter", ablation.k_inter}}},
      {"loss",
       {{"cls", loss.cls},
        {"l1", loss.l1},
        {"giou", loss.giou},
        {"dice", loss.dice},
        {"focal", loss.focal},
        {"contrastive", loss.contrastive},
        {"tau", loss.tau},
        {"focal_alpha", loss.focal_alpha},
        {"focal_gamma", loss.focal_gamma},
        {"dice_eps", loss.dice_eps}}},
      {"optim",
       {{"lr", optim.lr},
        {"weight_decay", optim.weight_decay},
        {"beta1", optim.beta1},
        {"beta2", optim.beta2},
        {"eps", optim.eps},
        {"grad_clip", grad_clip}}},
  };
}

RunConfig RunConfig::from_json(const json& j) {
  RunConfig c;
  Section root(j, "");
  root.get("seed", c.seed);
  root.get("steps", c.steps);

  auto d = root.child("data");
  d.get("clips", c.data.clips);
  d.get("frames", c.data.frames);
  d.get("height", c.data.height);
  d.get("width", c.data.width);
  d.get("instances", c.data.instances);
  d.get_enum("scenario", c.data.scenario);
  d.finish();

  auto m = root.child("model");
  m.get("channels", c.encoder.channels);
  m.get("heads", c.encoder.heads);
  m.get("levels", c.encoder.levels);
  m.get("k_intra", c.encoder.k_intra);
  m.get("window", c.encoder.window);
  m.get("enc_layers", c.encoder.layers);
  m.get("enc_ffn", c.encoder.ffn_hidden);
  m.get("gate_reduction", c.encoder.gate_reduction);
  m.get("pooled_gates", c.encoder.pooled_gates);
  m.get("queries", c.decoder.queries);
  m.get("dec_layers", c.decoder.layers);
  m.get("dec_points", c.decoder.points);
  m.get("dec_ffn", c.decoder.ffn_hidden);
  m.get("num_classes", c.decoder.num_classes);
  m.get("tsa_temporal_pos", c.decoder.tsa_temporal_pos);
  m.get("class_prior_bias", c.decoder.class_prior_bias);
  m.finish();

  auto a = root.child("ablation");
  a.get("st_enc", c.ablation.st_enc);
  a.get("tsa", c.ablation.tsa);
  a.get("contrastive", c.ablation.contrastive);
  a.get("aux_contrastive", c.ablation.aux_contrastive);
  a.get_enum("fusion", c.ablation.fusion);
  a.get("k_inter", c.ablation.k_inter);
  a.finish();

  auto l = root.child("loss");
  l.get("cls", c.loss.cls);
  l.get("l1", c.loss.l1);
  l.get("giou", c.loss.giou);
  l.get("dice", c.loss.dice);
  l.get("focal", c.loss.focal);
  l.get("contrastive", c.loss.contrastive);
  l.get("tau", c.loss.tau);
  l.get("focal_alpha", c.loss.focal_alpha);
  l.get("focal_gamma", c.loss.focal_gamma);
  l.get("dice_eps", c.loss.dice_eps);
  l.finish();

  auto o = root.child("optim");
  o.get("lr", c.optim.lr);
  o.get("weight_decay", c.optim.weight_decay);
  o.get("beta1", c.optim.beta1);
  o.get("beta2", c.optim.beta2);
  o.get("eps", c.optim.eps);
  o.get("grad_clip", c.grad_clip);
  o.finish();

  root.finish();
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(is);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": malformed JSON at byte offset " + std::to_string(e.byte));
  }
  return RunConfig::from_json(j);
}

}  // namespace taf
