#include <fstream>
#include <sstream>

#include "json.hpp"
#include "taformer/core/tensor_io.hpp"
#include "taformer/synth/synthclip.hpp"

namespace taf {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string mask_name(std::size_t t, std::size_t i) {
  return "mask_t" + std::to_string(t) + "_i" + std::to_string(i) + ".pgm";
}

template <typename T>
T field(const json& j, const char* key, const fs::path& where) {
  if (!j.contains(key)) throw FormatError(where.string() + ": missing key '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw FormatError(where.string() + ": bad value for '" + key + "': " + e.what());
  }
}

}  // namespace

void write_pgm(const fs::path& path, const std::vector<std::uint8_t>& pixels, std::size_t height, std::size_t width) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw FormatError("cannot open " + path.string() + " for writing");
  os << "P5\n" << width << ' ' << height << "\n255\n";
  os.write(reinterpret_cast<const char*>(pixels.data()), static_cast<std::streamsize>(pixels.size()));
  if (!os) throw FormatError("write failed for " + path.string());
}

std::vector<std::uint8_t> read_pgm(const fs::path& path, std::size_t& height, std::size_t& width) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("cannot open " + path.string());
  std::string magic;
  is >> magic;
  if (magic != "P5") throw FormatError(path.string() + ": bad PGM magic at byte offset 0");
  long long header[3];
  for (auto& v : header) {
    is >> std::ws;
    while (is.peek() == '#') {
      std::string skip;
      std::getline(is, skip);
      is >> std::ws;
    }
    const auto at = static_cast<long long>(is.tellg());
    if (!(is >> v) || v <= 0) throw FormatError(path.string() + ": bad PGM header field at byte offset " + std::to_string(at));
  }
  if (header[2] != 255) throw FormatError(path.string() + ": only maxval 255 is supported");
  is.get();  // single whitespace before the raster
  width = static_cast<std::size_t>(header[0]);
  height = static_cast<std::size_t>(header[1]);
  const auto start = static_cast<std::size_t>(is.tellg());
  std::vector<std::uint8_t> px(width * height);
  is.read(reinterpret_cast<char*>(px.data()), static_cast<std::streamsize>(px.size()));
  if (static_cast<std::size_t>(is.gcount()) != px.size())
    throw FormatError(path.string() + ": truncated PGM raster at byte offset " +
                      std::to_string(start + static_cast<std::size_t>(is.gcount())));
  return px;
}

fs::path save_clip(const SynthClip& clip, const fs::path& dir) {
  const auto& o = clip.options;
  const fs::path out = dir / ("clip_" + std::to_string(clip.seed));
  fs::create_directories(out);
  save_tensor(out / "frames.taft", clip.pixels);

  json tracks = json::array();
  for (std::size_t i = 0; i < clip.tracks.size(); ++i) {
    const auto& tr = clip.tracks[i];
    json boxes = json::array(), norm = json::array();
    for (const auto& b : tr.boxes) {
      boxes.push_back({b.x0, b.y0, b.x1, b.y1});
      norm.push_back({(b.x0 + b.x1) / (2.0 * o.width), (b.y0 + b.y1) / (2.0 * o.height), double(b.x1 - b.x0) / o.width,
                      double(b.y1 - b.y0) / o.height});
    }
    tracks.push_back({{"shape", shape_name(tr.shape)},
                      {"class_id", tr.class_id},
                      {"color", tr.color},
                      {"cx", tr.cx},
                      {"cy", tr.cy},
                      {"radius", tr.radius},
                      {"visible", tr.visible},
                      {"boxes", boxes},
                      {"boxes_normalized", norm}});
    for (std::size_t t = 0; t < o.frames; ++t) {
      std::vector<std::uint8_t> px(tr.masks[t].size());
      for (std::size_t k = 0; k < px.size(); ++k) px[k] = tr.masks[t][k] ? 255 : 0;
      write_pgm(out / mask_name(t, i), px, o.height, o.width);
    }
  }
  const json anno{{"seed", clip.seed},
                  {"scenario", scenario_name(o.scenario)},
                  {"frames", o.frames},
                  {"height", o.height},
                  {"width", o.width},
                  {"instances", o.instances},
                  {"min_radius_frac", o.min_radius_frac},
                  {"max_radius_frac", o.max_radius_frac},
                  {"tracks", tracks}};
  std::ofstream os(out / "anno.json");
  os << anno.dump(1) << '\n';
  if (!os) throw FormatError("write failed for " + (out / "anno.json").string());
  return out;
}

SynthClip load_clip(const fs::path& clip_dir) {
  const fs::path anno_path = clip_dir / "anno.json";
  std::ifstream is(anno_path);
  if (!is) throw FormatError("cannot open " + anno_path.string());
  json anno;
  try {
    anno = json::parse(is);
  } catch (const json::parse_error& e) {
    throw FormatError(anno_path.string() + ": malformed JSON at byte offset " + std::to_string(e.byte));
  }

  SynthClip clip;
  auto& o = clip.options;
  clip.seed = field<std::uint64_t>(anno, "seed", anno_path);
  try {
    o.scenario = parse_scenario(field<std::string>(anno, "scenario", anno_path));
  } catch (const SynthError& e) {
    throw FormatError(anno_path.string() + ": " + e.what());
  }
  o.frames = field<std::size_t>(anno, "frames", anno_path);
  o.height = field<std::size_t>(anno, "height", anno_path);
  o.width = field<std::size_t>(anno, "width", anno_path);
  o.instances = field<std::size_t>(anno, "instances", anno_path);
  o.min_radius_frac = field<double>(anno, "min_radius_frac", anno_path);
  o.max_radius_frac = field<double>(anno, "max_radius_frac", anno_path);

  clip.pixels = load_tensor(clip_dir / "frames.taft");
  if (clip.pixels.shape() != Shape{o.frames, 3, o.height, o.width})
    throw FormatError((clip_dir / "frames.taft").string() + ": shape " + shape_str(clip.pixels.shape()) +
                      " disagrees with anno.json");

  const auto tracks = field<json>(anno, "tracks", anno_path);
  if (!tracks.is_array() || tracks.size() != o.instances)
    throw FormatError(anno_path.string() + ": expected " + std::to_string(o.instances) + " tracks");
  for (std::size_t i = 0; i < tracks.size(); ++i) {
    const auto& j = tracks[i];
    InstanceTrack tr;
    const auto shape = field<std::string>(j, "shape", anno_path);
    if (shape == "circle") tr.shape = ShapeKind::Circle;
    else if (shape == "square") tr.shape = ShapeKind::Square;
    else if (shape == "triangle") tr.shape = ShapeKind::Triangle;
    else throw FormatError(anno_path.string() + ": unknown shape '" + shape + "'");
    tr.class_id = field<std::size_t>(j, "class_id", anno_path);
    tr.color = field<std::array<double, 3>>(j, "color", anno_path);
    tr.cx = field<std::vector<double>>(j, "cx", anno_path);
    tr.cy = field<std::vector<double>>(j, "cy", anno_path);
    tr.radius = field<std::vector<double>>(j, "radius", anno_path);
    tr.visible = field<std::vector<bool>>(j, "visible", anno_path);
    const auto boxes = field<std::vector<std::array<int, 4>>>(j, "boxes", anno_path);
    if (tr.cx.size() != o.frames || tr.cy.size() != o.frames || tr.radius.size() != o.frames ||
        tr.visible.size() != o.frames || boxes.size() != o.frames)
      throw FormatError(anno_path.string() + ": track " + std::to_string(i) + " does not have one entry per frame");
    for (std::size_t t = 0; t < o.frames; ++t) {
      tr.boxes.push_back({boxes[t][0], boxes[t][1], boxes[t][2], boxes[t][3]});
      std::size_t h = 0, w = 0;
      const auto px = read_pgm(clip_dir / mask_name(t, i), h, w);
      if (h != o.height || w != o.width)
        throw FormatError((clip_dir / mask_name(t, i)).string() + ": size " + std::to_string(h) + "x" + std::to_string(w) +
                          " disagrees with anno.json");
      std::vector<std::uint8_t> m(px.size());
      for (std::size_t k = 0; k < m.size(); ++k) m[k] = px[k] >= 128 ? 1 : 0;
      tr.masks.push_back(std::move(m));
    }
    clip.tracks.push_back(std::move(tr));
  }
  return clip;
}

}  // namespace taf
