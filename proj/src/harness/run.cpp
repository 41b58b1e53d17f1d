#include "taformer/harness/run.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <sstream>

#include "taformer/core/ops.hpp"
#include "taformer/core/optim.hpp"
#include "taformer/core/tensor_io.hpp"

namespace taf {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

double cosine(const double* a, const double* b, std::size_t n) {
  double ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < n; ++i) {
    ab += a[i] * b[i];
    aa += a[i] * a[i];
    bb += b[i] * b[i];
  }
  return aa > 0 && bb > 0 ? ab / std::sqrt(aa * bb) : 0.0;
}

// Everything evaluate() and dump_clip() need from one clip.
struct ClipEval {
  ModelOutput out;
  GroundTruth gt;
  MatchAssignment match;  // final layer
  double loss = 0.0;
};

ClipEval eval_clip(const Model& model, const SynthClip& clip, bool traces = false) {
  ClipEval e;
  e.gt = clip.ground_truth(model.config().mask_stride());
  e.out = model.forward(clip.pixels, traces);
  const auto res = model.loss(e.out, e.gt);
  e.loss = res.total.item();
  e.match = res.matches.back();
  return e;
}

std::span<const double> mask_row(const LayerPrediction& p, std::size_t t, std::size_t slot) {
  const std::size_t q = p.mask_logits.dim(1), n0 = p.mask_logits.dim(2);
  return p.mask_logits.data().subspan((t * q + slot) * n0, n0);
}

void write_map_pgm(const fs::path& path, const Tensor& map) {
  const auto v = map.data();
  const auto [lo, hi] = std::minmax_element(v.begin(), v.end());
  std::vector<std::uint8_t> px(v.size(), 0);
  if (*hi > *lo)
    for (std::size_t i = 0; i < v.size(); ++i) px[i] = static_cast<std::uint8_t>(std::lround(255.0 * (v[i] - *lo) / (*hi - *lo)));
  write_pgm(path, px, map.dim(0), map.dim(1));
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace

double mask_iou(std::span<const double> logits, const std::vector<double>& truth) {
  std::size_t inter = 0, uni = 0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    const bool p = logits[k] > 0.0, g = truth[k] > 0.5;
    inter += p && g;
    uni += p || g;
  }
  return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

json MetricsReport::to_json() const {
  return {{"steps", steps},
          {"initial_loss", initial_loss},
          {"final_loss", final_loss},
          {"losses", losses},
          {"eval_loss", eval.mean_loss},
          {"mean_iou", eval.mean_iou},
          {"intra_similarity", eval.intra_similarity},
          {"inter_similarity", eval.inter_similarity},
          {"separation", eval.separation()},
          {"track_consistency", eval.track_consistency}};
}

json StepRecord::to_json() const {
  return {{"step", step},
          {"total", total},
          {"cls", terms.cls},
          {"l1", terms.l1},
          {"giou", terms.giou},
          {"dice", terms.dice},
          {"focal", terms.focal},
          {"contrastive", terms.contrastive},
          {"grad_norm", grad_norm},
          {"wall_time_s", wall_time_s}};
}

std::vector<SynthClip> training_pool(const RunConfig& cfg) {
  std::vector<SynthClip> clips;
  for (std::size_t i = 0; i < cfg.data.clips; ++i) clips.push_back(generate_clip(cfg.seed * 1000 + i, cfg.synth_options()));
  return clips;
}

EvalMetrics evaluate(const Model& model, const std::vector<SynthClip>& clips, json* predictions) {
  EvalMetrics m;
  double iou_sum = 0, intra_sum = 0, inter_sum = 0;
  std::size_t iou_n = 0, intra_n = 0, inter_n = 0, track_hits = 0, track_n = 0;
  json dump_clips = json::array();

  for (const auto& clip : clips) {
    const ClipEval e = eval_clip(model, clip);
    m.mean_loss += e.loss / static_cast<double>(clips.size());
    const auto& p = e.out.decoder.final();
    const std::size_t frames = p.boxes.dim(0), q = p.boxes.dim(1), c = p.box_queries.dim(2), k1 = p.class_logits.dim(1);
    const auto& inst = e.gt.instances;

    json slot_json = json::array();
    const auto owner = e.match.gt_of_slot(q);
    for (std::size_t s = 0; s < q; ++s) {
      json probs = json::array(), boxes = json::array();
      for (std::size_t k = 0; k < k1; ++k) probs.push_back(1.0 / (1.0 + std::exp(-p.class_logits[s * k1 + k])));
      for (std::size_t t = 0; t < frames; ++t) {
        const double* b = p.boxes.data().data() + (t * q + s) * 4;
        boxes.push_back({b[0], b[1], b[2], b[3]});
      }
      slot_json.push_back({{"slot", s}, {"instance", owner[s]}, {"class_probs", probs}, {"boxes", boxes}});
    }
    json inst_json = json::array();

    for (std::size_t i = 0; i < inst.size(); ++i) {
      const std::size_t s = e.match.slot_of_gt[i];
      json ious = json::array();
      std::vector<std::size_t> best;
      for (std::size_t t = 0; t < frames; ++t) {
        if (!inst[i].present[t]) {
          ious.push_back(nullptr);
          continue;
        }
        const double iou = mask_iou(mask_row(p, t, s), inst[i].masks[t]);
        ious.push_back(iou);
        iou_sum += iou;
        ++iou_n;
        std::size_t arg = 0;
        double top = -1.0;
        for (std::size_t r = 0; r < q; ++r) {
          const double v = mask_iou(mask_row(p, t, r), inst[i].masks[t]);
          if (v > top) top = v, arg = r;
        }
        best.push_back(arg);
      }
      if (!best.empty()) {
        std::map<std::size_t, std::size_t> votes;
        for (auto b : best) ++votes[b];
        std::size_t most = 0;  // frames voting for the majority slot
        for (auto [slot, n] : votes) most = std::max(most, n);
        track_hits += most;
        track_n += best.size();
      }
      inst_json.push_back({{"instance", i}, {"class_id", inst[i].class_id}, {"slot", s}, {"iou", ious}});

      const double* bq = p.box_queries.data().data();
      for (std::size_t t = 0; t < frames; ++t)
        for (std::size_t u = 0; u < frames; ++u) {
          if (!inst[i].present[t] || !inst[i].present[u]) continue;
          if (t != u) {
            intra_sum += cosine(bq + (t * q + s) * c, bq + (u * q + s) * c, c);
            ++intra_n;
          }
          for (std::size_t j = 0; j < inst.size(); ++j) {
            if (j == i || !inst[j].present[u]) continue;
            inter_sum += cosine(bq + (t * q + s) * c, bq + (u * q + e.match.slot_of_gt[j]) * c, c);
            ++inter_n;
          }
        }
    }
    if (predictions)
      dump_clips.push_back({{"seed", clip.seed},
                            {"frames", frames},
                            {"queries", q},
                            {"loss", e.loss},
                            {"slots", slot_json},
                            {"instances", inst_json}});
  }
  m.mean_iou = iou_n ? iou_sum / static_cast<double>(iou_n) : 0.0;
  m.intra_similarity = intra_n ? intra_sum / static_cast<double>(intra_n) : 0.0;
  m.inter_similarity = inter_n ? inter_sum / static_cast<double>(inter_n) : 0.0;
  m.track_consistency = track_n ? static_cast<double>(track_hits) / static_cast<double>(track_n) : 0.0;
  if (predictions) {
    const auto& cfg = model.config();
    *predictions = {{"format", "taformer-predictions-1"},
                    {"mask_shape", {cfg.data.height / cfg.mask_stride(), cfg.data.width / cfg.mask_stride()}},
                    {"num_classes", cfg.decoder.num_classes},
                    {"clips", dump_clips}};
  }
  return m;
}

void validate_predictions(const json& d) {
  auto need = [](bool ok, const std::string& what) {
    if (!ok) throw FormatError("prediction dump: " + what);
  };
  need(d.is_object(), "root must be an object");
  need(d.value("format", "") == "taformer-predictions-1", "format must be taformer-predictions-1");
  need(d.contains("mask_shape") && d["mask_shape"].is_array() && d["mask_shape"].size() == 2, "mask_shape must be [h, w]");
  need(d.contains("num_classes") && d["num_classes"].is_number_unsigned(), "num_classes must be an unsigned integer");
  need(d.contains("clips") && d["clips"].is_array(), "clips must be an array");
  const std::size_t k1 = d["num_classes"].get<std::size_t>() + 1;
  for (const auto& c : d["clips"]) {
    for (const char* key : {"seed", "frames", "queries"})
      need(c.contains(key) && c[key].is_number_unsigned(), std::string("clip.") + key + " must be an unsigned integer");
    need(c.contains("loss") && c["loss"].is_number(), "clip.loss must be a number");
    const std::size_t frames = c["frames"], q = c["queries"];
    need(c.contains("slots") && c["slots"].is_array() && c["slots"].size() == q, "clip.slots must have one entry per query");
    std::vector<int> claimed(q, -1);
    for (std::size_t s = 0; s < q; ++s) {
      const auto& sl = c["slots"][s];
      need(sl.value("slot", q) == s, "slots must be listed in order");
      need(sl.contains("instance") && sl["instance"].is_number_integer(), "slot.instance must be an integer");
      claimed[s] = sl["instance"].get<int>();
      need(sl.contains("class_probs") && sl["class_probs"].size() == k1, "slot.class_probs must have num_classes + 1 entries");
      for (const auto& v : sl["class_probs"]) need(v.is_number() && v >= 0.0 && v <= 1.0, "class probabilities lie in [0, 1]");
      need(sl.contains("boxes") && sl["boxes"].size() == frames, "slot.boxes must have one box per frame");
      for (const auto& b : sl["boxes"]) {
        need(b.is_array() && b.size() == 4, "boxes are [cx, cy, w, h]");
        for (const auto& v : b) need(v.is_number() && v >= 0.0 && v <= 1.0, "box coordinates lie in [0, 1]");
      }
    }
    need(c.contains("instances") && c["instances"].is_array(), "clip.instances must be an array");
    for (std::size_t i = 0; i < c["instances"].size(); ++i) {
      const auto& in = c["instances"][i];
      need(in.value("instance", std::size_t(-1)) == i, "instances must be listed in order");
      need(in.contains("slot") && in["slot"].is_number_unsigned() && in["slot"].get<std::size_t>() < q, "instance.slot out of range");
      need(claimed[in["slot"].get<std::size_t>()] == static_cast<int>(i), "instance.slot disagrees with slot.instance");
      need(in.contains("iou") && in["iou"].size() == frames, "instance.iou must have one entry per frame");
      for (const auto& v : in["iou"]) need(v.is_null() || (v.is_number() && v >= 0.0 && v <= 1.0), "IoU lies in [0, 1]");
    }
  }
}

TrainResult train(const RunConfig& cfg, const TrainOptions& opts) {
  cfg.validate();
  const auto start = std::chrono::steady_clock::now();
  TrainResult r;
  r.model = std::make_unique<Model>(cfg);
  r.clips = training_pool(cfg);
  Model& model = *r.model;
  std::vector<GroundTruth> truths;
  for (const auto& c : r.clips) truths.push_back(c.ground_truth(cfg.mask_stride()));

  std::ofstream log;
  if (!opts.out.empty()) {
    fs::create_directories(opts.out);
    log.open(opts.out / "loss_log.jsonl");
    if (!log) throw FormatError("cannot write " + (opts.out / "loss_log.jsonl").string());
    for (const auto& c : r.clips) save_clip(c, opts.out / "clips");
  }

  auto params = model.params().tensors();
  OptimizerState opt(cfg.optim, params);
  std::vector<std::vector<double>> accum(params.size());
  const double inv = 1.0 / static_cast<double>(r.clips.size());

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    StepRecord rec;
    rec.step = step;
    for (std::size_t k = 0; k < params.size(); ++k) accum[k].assign(params[k].numel(), 0.0);
    for (std::size_t i = 0; i < r.clips.size(); ++i) {
      Tape tape;
      LossResult res;
      {
        TapeScope scope(tape);
        res = model.loss(model.forward(r.clips[i].pixels), truths[i]);
      }
      backward(res.total, tape);
      for (std::size_t k = 0; k < params.size(); ++k) {
        const auto g = params[k].grad();
        for (std::size_t e = 0; e < g.size(); ++e) accum[k][e] += inv * g[e];
      }
      rec.total += inv * res.total.item();
      rec.terms.cls += inv * res.terms.cls;
      rec.terms.l1 += inv * res.terms.l1;
      rec.terms.giou += inv * res.terms.giou;
      rec.terms.dice += inv * res.terms.dice;
      rec.terms.focal += inv * res.terms.focal;
      rec.terms.contrastive += inv * res.terms.contrastive;
    }
    for (std::size_t k = 0; k < params.size(); ++k) std::copy(accum[k].begin(), accum[k].end(), params[k].mutable_grad().begin());
    rec.grad_norm = clip_grad_norm(params, cfg.grad_clip > 0 ? cfg.grad_clip : std::numeric_limits<double>::infinity());
    adamw_step(params, opt);
    rec.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    r.report.losses.push_back(rec.total);
    if (log) log << rec.to_json().dump() << '\n';
    if (opts.on_step) opts.on_step(rec);
  }

  r.report.steps = cfg.steps;
  r.report.eval = evaluate(model, r.clips);
  r.report.final_loss = r.report.eval.mean_loss;
  r.report.initial_loss = r.report.losses.empty() ? r.report.final_loss : r.report.losses.front();
  if (!opts.out.empty()) {
    std::ofstream(opts.out / "metrics.json") << r.report.to_json().dump(1) << '\n';
    save_checkpoint(model, opts.out / "checkpoint");
  }
  return r;
}

AblationAxis parse_axis(const std::string& s) {
  if (s == "components") return AblationAxis::Components;
  if (s == "k_inter") return AblationAxis::KInter;
  if (s == "fusion") return AblationAxis::Fusion;
  throw ConfigError("unknown ablation axis '" + s + "' (components, k_inter, fusion)");
}

std::vector<std::pair<std::string, RunConfig>> ablation_variants(const RunConfig& base, AblationAxis axis) {
  std::vector<std::pair<std::string, RunConfig>> out;
  auto with = [&](const std::string& name, auto edit) {
    RunConfig c = base;
    edit(c.ablation);
    out.emplace_back(name, c);
  };
  switch (axis) {
    case AblationAxis::Components:
      with("baseline", [](AblationSwitches& a) { a.st_enc = a.tsa = a.contrastive = false; });
      with("baseline+st_enc", [](AblationSwitches& a) { a.st_enc = true, a.tsa = a.contrastive = false; });
      with("baseline+st_enc+tsa", [](AblationSwitches& a) { a.st_enc = a.tsa = true, a.contrastive = false; });
      with("baseline+st_enc+tsa+cl", [](AblationSwitches& a) { a.st_enc = a.tsa = a.contrastive = true; });
      break;
    case AblationAxis::KInter:
      for (std::size_t k = 1; k <= 4; ++k)
        with("k_inter=" + std::to_string(k), [k](AblationSwitches& a) { a.st_enc = true, a.k_inter = k; });
      break;
    case AblationAxis::Fusion:
      for (FusionMode f : {FusionMode::Add, FusionMode::Concat, FusionMode::Dynamic})
        with(std::string("fusion=") + fusion_mode_name(f), [f](AblationSwitches& a) { a.st_enc = true, a.fusion = f; });
      break;
  }
  for (auto& [name, c] : out) c.validate();
  return out;
}

std::vector<AblationRow> run_ablation(const RunConfig& base, AblationAxis axis,
                                      const std::function<void(const AblationRow&)>& on_row) {
  std::vector<AblationRow> rows;
  for (auto& [name, cfg] : ablation_variants(base, axis)) {
    rows.push_back({name, cfg, train(cfg).report});
    if (on_row) on_row(rows.back());
  }
  return rows;
}

std::string ablation_csv(const std::vector<AblationRow>& rows) {
  std::ostringstream os;
  os << "variant,st_enc,tsa,contrastive,fusion,k_inter,steps,initial_loss,final_loss,mean_iou,track_consistency,"
        "intra_similarity,inter_similarity,separation\n";
  for (const auto& r : rows) {
    const auto& a = r.config.ablation;
    const auto& e = r.report.eval;
    os << r.variant << ',' << a.st_enc << ',' << a.tsa << ',' << a.contrastive << ',' << fusion_mode_name(a.fusion) << ','
       << a.k_inter << ',' << r.report.steps << ',' << fmt(r.report.initial_loss) << ',' << fmt(r.report.final_loss) << ','
       << fmt(e.mean_iou) << ',' << fmt(e.track_consistency) << ',' << fmt(e.intra_similarity) << ','
       << fmt(e.inter_similarity) << ',' << fmt(e.separation()) << '\n';
  }
  return os.str();
}

json dump_clip(const Model& model, const SynthClip& clip, const fs::path& out) {
  fs::create_directories(out);
  const ClipEval e = eval_clip(model, clip);
  const auto& p = e.out.decoder.final();
  const std::size_t frames = p.box_queries.dim(0), q = p.box_queries.dim(1), c = p.box_queries.dim(2);
  for (std::size_t t = 0; t < frames; ++t) {
    write_map_pgm(out / ("backbone_t" + std::to_string(t) + ".pgm"), channel_mean_map(e.out.backbone, t));
    write_map_pgm(out / ("encoder_t" + std::to_string(t) + ".pgm"), channel_mean_map(e.out.encoder.features, t));
  }
  const auto owner = e.match.gt_of_slot(q);
  json entries = json::array();
  for (std::size_t t = 0; t < frames; ++t)
    for (std::size_t s = 0; s < q; ++s) {
      const auto row = p.box_queries.data().subspan((t * q + s) * c, c);
      const long inst = owner[s];
      entries.push_back({{"frame", t},
                         {"slot", s},
                         {"instance", inst},
                         {"class_id", inst < 0 ? -1 : static_cast<long>(e.gt.instances[static_cast<std::size_t>(inst)].class_id)},
                         {"embedding", std::vector<double>(row.begin(), row.end())}});
    }
  const json doc{{"seed", clip.seed}, {"frames", frames}, {"queries", q}, {"channels", c}, {"entries", entries}};
  std::ofstream(out / "embeddings.json") << doc.dump(1) << '\n';
  return doc;
}

}  // namespace taf
