#include "taformer/synth/synthclip.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "taformer/core/random.hpp"

namespace taf {
namespace {

constexpr std::array<std::array<double, 3>, 3> kClassColor{{{0.9, 0.3, 0.25}, {0.3, 0.85, 0.35}, {0.3, 0.4, 0.95}}};
constexpr double kSquareHalf = 0.85;  // half-side per unit radius
constexpr double kMaxExtent = 1.21;   // square corner, per unit radius
constexpr int kMaxAttempts = 200;

struct Motion {
  double speed_lo, speed_hi, scale_amp;
};

Motion motion_of(Scenario s) {
  switch (s) {
    case Scenario::FastMotion: return {3.0, 5.0, 0.2};
    case Scenario::Occlusion: return {1.0, 2.0, 0.05};
    default: return {0.5, 1.5, 0.08};
  }
}

// Triangle wave folding x into [lo, hi]; 1-Lipschitz, so bounded velocity
// gives bounded per-frame displacement with reflection at the walls.
double fold(double x, double lo, double hi) {
  const double span = hi - lo;
  if (span <= 0) return lo;
  double u = std::fmod(x - lo, 2.0 * span);
  if (u < 0) u += 2.0 * span;
  return lo + (u <= span ? u : 2.0 * span - u);
}

bool inside(ShapeKind k, double dx, double dy, double r) {
  switch (k) {
    case ShapeKind::Circle: return dx * dx + dy * dy <= r * r;
    case ShapeKind::Square: return std::abs(dx) <= kSquareHalf * r && std::abs(dy) <= kSquareHalf * r;
    case ShapeKind::Triangle: return dy <= 0.5 * r && std::abs(dx) <= (dy + r) / std::numbers::sqrt3;
  }
  return false;
}

std::vector<std::uint8_t> raw_mask(ShapeKind k, double cx, double cy, double r, std::size_t h, std::size_t w) {
  std::vector<std::uint8_t> m(h * w, 0);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      m[y * w + x] = inside(k, static_cast<double>(x) + 0.5 - cx, static_cast<double>(y) + 0.5 - cy, r) ? 1 : 0;
  return m;
}

struct Plan {
  ShapeKind shape;
  std::array<double, 3> color;
  double r0, phase, px, py, vx, vy;
};

// Renders tracks from plans anchored at frame `anchor`. Returns false when a
// track disappears in some frame (fully hidden or off-canvas).
bool render(const SynthOptions& o, const std::vector<Plan>& plans, std::size_t anchor, std::vector<InstanceTrack>& tracks) {
  const std::size_t h = o.height, w = o.width, n = plans.size();
  const double amp = motion_of(o.scenario).scale_amp;
  tracks.assign(n, {});
  for (std::size_t i = 0; i < n; ++i) {
    auto& tr = tracks[i];
    tr.shape = plans[i].shape;
    tr.class_id = static_cast<std::size_t>(plans[i].shape);
    tr.color = plans[i].color;
  }
  for (std::size_t t = 0; t < o.frames; ++t) {
    std::vector<int> owner(h * w, -1);
    const double dt = static_cast<double>(t) - static_cast<double>(anchor);
    for (std::size_t j = n; j-- > 0;) {
      const auto& p = plans[j];
      const double r = p.r0 * (1.0 + amp * std::sin(static_cast<double>(t) + p.phase));
      const double e = kMaxExtent * p.r0 * (1.0 + amp);
      const double cx = fold(p.px + p.vx * dt, e, static_cast<double>(w) - e);
      const double cy = fold(p.py + p.vy * dt, e, static_cast<double>(h) - e);
      tracks[j].cx.push_back(cx);
      tracks[j].cy.push_back(cy);
      tracks[j].radius.push_back(r);
      const auto m = raw_mask(p.shape, cx, cy, r, h, w);
      for (std::size_t k = 0; k < m.size(); ++k)
        if (m[k]) owner[k] = static_cast<int>(j);
    }
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<std::uint8_t> m(h * w);
      for (std::size_t k = 0; k < m.size(); ++k) m[k] = owner[k] == static_cast<int>(i) ? 1 : 0;
      tracks[i].boxes.push_back(bounding_box(m, h, w));
      tracks[i].visible.push_back(!tracks[i].boxes.back().empty());
      tracks[i].masks.push_back(std::move(m));
    }
  }
  for (const auto& tr : tracks)
    for (bool v : tr.visible)
      if (!v) return false;
  return true;
}

bool occlusion_holds(const SynthOptions& o, const std::vector<InstanceTrack>& tracks, std::size_t t) {
  const auto front = raw_mask(tracks[0].shape, tracks[0].cx[t], tracks[0].cy[t], tracks[0].radius[t], o.height, o.width);
  const auto rear = raw_mask(tracks[1].shape, tracks[1].cx[t], tracks[1].cy[t], tracks[1].radius[t], o.height, o.width);
  bool overlap = false;
  for (std::size_t k = 0; k < front.size(); ++k) overlap = overlap || (front[k] && rear[k]);
  return overlap && tracks[1].visible[t];
}

}  // namespace

Scenario parse_scenario(const std::string& s) {
  if (s == "plain") return Scenario::Plain;
  if (s == "fast-motion") return Scenario::FastMotion;
  if (s == "occlusion") return Scenario::Occlusion;
  if (s == "same-class-pair") return Scenario::SameClassPair;
  throw SynthError("unknown scenario '" + s + "' (plain, fast-motion, occlusion, same-class-pair)");
}

std::string scenario_name(Scenario s) {
  switch (s) {
    case Scenario::Plain: return "plain";
    case Scenario::FastMotion: return "fast-motion";
    case Scenario::Occlusion: return "occlusion";
    case Scenario::SameClassPair: return "same-class-pair";
  }
  return "?";
}

std::string shape_name(ShapeKind k) {
  switch (k) {
    case ShapeKind::Circle: return "circle";
    case ShapeKind::Square: return "square";
    case ShapeKind::Triangle: return "triangle";
  }
  return "?";
}

PixelBox bounding_box(const std::vector<std::uint8_t>& mask, std::size_t height, std::size_t width) {
  PixelBox b{static_cast<int>(width), static_cast<int>(height), 0, 0};
  bool any = false;
  for (std::size_t y = 0; y < height; ++y)
    for (std::size_t x = 0; x < width; ++x) {
      if (!mask[y * width + x]) continue;
      any = true;
      b.x0 = std::min(b.x0, static_cast<int>(x));
      b.y0 = std::min(b.y0, static_cast<int>(y));
      b.x1 = std::max(b.x1, static_cast<int>(x) + 1);
      b.y1 = std::max(b.y1, static_cast<int>(y) + 1);
    }
  return any ? b : PixelBox{};
}

void SynthOptions::validate() const {
  if (frames == 0 || height == 0 || width == 0) throw SynthError("clip dimensions must be positive");
  if (instances == 0) throw SynthError("need at least one instance");
  if ((scenario == Scenario::Occlusion || scenario == Scenario::SameClassPair) && instances < 2)
    throw SynthError(scenario_name(scenario) + " needs at least two instances");
  if (!(min_radius_frac > 0) || max_radius_frac < min_radius_frac)
    throw SynthError("radius fractions must satisfy 0 < min <= max");
  const double side = static_cast<double>(std::min(height, width));
  const double extent = kMaxExtent * max_radius_frac * side * (1.0 + motion_of(scenario).scale_amp);
  if (2.0 * extent + 2.0 > side)
    throw SynthError("canvas " + std::to_string(height) + "x" + std::to_string(width) + " too small for shapes of radius " +
                     std::to_string(max_radius_frac * side) + " px");
  if (min_radius_frac * side < 1.5) throw SynthError("shapes below 1.5 px radius would vanish");
}

double SynthOptions::max_step() const { return motion_of(scenario).speed_hi; }

SynthClip generate_clip(std::uint64_t seed, const SynthOptions& o) {
  o.validate();
  Rng rng(mix_seed(seed, 0));
  Rng noise(mix_seed(seed, 1));
  const Motion mo = motion_of(o.scenario);
  const double side = static_cast<double>(std::min(o.height, o.width));
  const double r_lo = o.min_radius_frac * side, r_hi = o.max_radius_frac * side;
  const std::size_t anchor = o.scenario == Scenario::Occlusion ? o.frames / 2 : 0;

  SynthClip clip;
  clip.seed = seed;
  clip.options = o;
  bool ok = false;
  for (int attempt = 0; attempt < kMaxAttempts && !ok; ++attempt) {
    std::vector<Plan> plans(o.instances);
    const std::size_t offset = rng.index(3);
    for (std::size_t i = 0; i < o.instances; ++i) {
      auto& p = plans[i];
      const bool pair = o.scenario == Scenario::SameClassPair && i == 1;
      p.shape = pair ? plans[0].shape : static_cast<ShapeKind>((offset + i) % 3);
      p.color = kClassColor[static_cast<std::size_t>(p.shape)];
      if (pair) {
        p.color = plans[0].color;
      } else {
        for (auto& c : p.color) c = std::clamp(c + rng.uniform(-0.08, 0.08), 0.0, 1.0);
      }
      p.r0 = pair ? plans[0].r0 : rng.uniform(r_lo, r_hi);
      p.phase = rng.uniform(0, 2 * std::numbers::pi);
      const double e = kMaxExtent * p.r0 * (1.0 + mo.scale_amp);
      p.px = rng.uniform(e, static_cast<double>(o.width) - e);
      p.py = rng.uniform(e, static_cast<double>(o.height) - e);
      const double ang = rng.uniform(0, 2 * std::numbers::pi), speed = rng.uniform(mo.speed_lo, mo.speed_hi);
      p.vx = speed * std::cos(ang);
      p.vy = speed * std::sin(ang);
    }
    if (o.scenario == Scenario::Occlusion) {
      // front (0) small, rear (1) larger; placed overlapping at the anchor
      // frame and moving through each other.
      auto& f = plans[0];
      auto& b = plans[1];
      f.r0 = rng.uniform(r_lo, 0.5 * (r_lo + r_hi));
      b.r0 = rng.uniform(0.5 * (r_lo + r_hi), r_hi);
      const double ang = rng.uniform(0, 2 * std::numbers::pi), ux = std::cos(ang), uy = std::sin(ang);
      const double d = 0.35 * (f.r0 + b.r0);
      const double e = kMaxExtent * b.r0 * (1.0 + mo.scale_amp) + d;
      const double mx = rng.uniform(e, static_cast<double>(o.width) - e);
      const double my = rng.uniform(e, static_cast<double>(o.height) - e);
      const double speed = rng.uniform(mo.speed_lo, mo.speed_hi) / 2.0;
      f.px = mx + ux * d / 2, f.py = my + uy * d / 2;
      b.px = mx - ux * d / 2, b.py = my - uy * d / 2;
      f.vx = -ux * speed, f.vy = -uy * speed;
      b.vx = ux * speed, b.vy = uy * speed;
    }
    ok = render(o, plans, anchor, clip.tracks);
    if (ok && o.scenario == Scenario::Occlusion) ok = occlusion_holds(o, clip.tracks, anchor);
  }
  if (!ok) throw SynthError("could not place " + std::to_string(o.instances) + " visible instances on the canvas");

  const std::size_t h = o.height, w = o.width, plane = h * w;
  std::vector<double> px(o.frames * 3 * plane);
  for (std::size_t t = 0; t < o.frames; ++t)
    for (std::size_t k = 0; k < plane; ++k) {
      int who = -1;
      for (std::size_t i = 0; i < clip.tracks.size() && who < 0; ++i)
        if (clip.tracks[i].masks[t][k]) who = static_cast<int>(i);
      for (std::size_t c = 0; c < 3; ++c) {
        const double bg = 0.1 + 0.1 * noise.uniform();
        px[(t * 3 + c) * plane + k] = who < 0 ? bg : clip.tracks[static_cast<std::size_t>(who)].color[c];
      }
    }
  clip.pixels = Tensor({o.frames, 3, h, w}, std::move(px));
  return clip;
}

GroundTruth SynthClip::ground_truth(std::size_t stride) const {
  const std::size_t h = options.height, w = options.width;
  if (stride == 0 || h % stride || w % stride)
    throw SynthError("mask stride " + std::to_string(stride) + " does not divide " + std::to_string(h) + "x" +
                     std::to_string(w));
  GroundTruth gt;
  gt.frames = options.frames;
  gt.mask_shape = {h / stride, w / stride};
  const double cell = static_cast<double>(stride * stride);
  for (std::size_t i = 0; i < tracks.size(); ++i) {
    const auto& tr = tracks[i];
    InstanceTruth inst;
    inst.class_id = tr.class_id;
    inst.track_id = i;
    for (std::size_t t = 0; t < options.frames; ++t) {
      inst.present.push_back(tr.visible[t]);
      const PixelBox& b = tr.boxes[t];
      inst.boxes.push_back(Box{(b.x0 + b.x1) / (2.0 * static_cast<double>(w)), (b.y0 + b.y1) / (2.0 * static_cast<double>(h)),
                               (b.x1 - b.x0) / static_cast<double>(w), (b.y1 - b.y0) / static_cast<double>(h)});
      std::vector<double> low(gt.mask_shape.height * gt.mask_shape.width, 0.0);
      for (std::size_t y = 0; y < h; ++y)
        for (std::size_t x = 0; x < w; ++x) low[(y / stride) * gt.mask_shape.width + x / stride] += tr.masks[t][y * w + x];
      for (auto& v : low) v = v / cell >= 0.5 ? 1.0 : 0.0;
      inst.masks.push_back(std::move(low));
    }
    gt.instances.push_back(std::move(inst));
  }
  return gt;
}

}  // namespace taf
