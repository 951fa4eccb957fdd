#include "ia/synth.hpp"

#include "ia/ppm.hpp"
#include "ia/rng.hpp"

#include <json.hpp>

#include <cstdio>
#include <fstream>
#include <stdexcept>

namespace ia {

using json = nlohmann::json;

std::string_view to_string(ShapeKind k) {
  switch (k) {
    case ShapeKind::disk: return "disk";
    case ShapeKind::square: return "square";
    case ShapeKind::triangle: return "triangle";
  }
  return "?";
}

ShapeKind parse_shape(std::string_view s) {
  if (s == "disk") return ShapeKind::disk;
  if (s == "square") return ShapeKind::square;
  if (s == "triangle") return ShapeKind::triangle;
  throw std::invalid_argument("unknown shape '" + std::string(s) + "'");
}

void SceneSpec::validate() const {
  auto fail = [](const std::string& m) { throw std::invalid_argument("scene spec: " + m); };
  if (height < 1 || width < 1) fail("image size must be positive");
  if (classes.empty()) fail("no classes");
  if (min_objects < 1 || max_objects < min_objects) fail("bad objects-per-image range");
  if (min_size < 2 || max_size < min_size) fail("bad object size range");
  if (max_size > std::min(height, width)) fail("objects larger than the image");
  if (!(min_intensity >= 0 && max_intensity <= 1 && min_intensity <= max_intensity))
    fail("bad intensity range");
  if (!(max_background >= 0 && max_background <= 1)) fail("bad background range");
  const auto& c = corruption;
  if (!(c.occlusion_probability >= 0 && c.occlusion_probability <= 1))
    fail("occlusion probability outside [0,1]");
  if (c.occluder_min < 1 || c.occluder_max < c.occluder_min) fail("bad occluder size range");
  if (c.noise_sigma < 0 || c.blur_radius < 0) fail("negative noise or blur");
}

bool inside_shape(ShapeKind kind, const Box& b, double px, double py) {
  if (px < b.x1 || px > b.x2 || py < b.y1 || py > b.y2) return false;
  switch (kind) {
    case ShapeKind::square:
      return true;
    case ShapeKind::disk: {
      const double cx = 0.5 * (b.x1 + b.x2), cy = 0.5 * (b.y1 + b.y2);
      const double r = 0.5 * b.width();
      return (px - cx) * (px - cx) + (py - cy) * (py - cy) <= r * r;
    }
    case ShapeKind::triangle: {
      // Apex at top center, base along the bottom edge.
      const double t = (py - b.y1) / b.height();
      const double half = 0.5 * t * b.width();
      const double cx = 0.5 * (b.x1 + b.x2);
      return px >= cx - half && px <= cx + half;
    }
  }
  return false;
}

Tensor box_blur(const Tensor& image, Index radius) {
  if (radius <= 0) return image;
  const Index C = image.dim(0), H = image.dim(1), W = image.dim(2);
  const double norm = 1.0 / static_cast<double>(2 * radius + 1);
  Tensor tmp({C, H, W}), out({C, H, W});
  for (Index c = 0; c < C; ++c)
    for (Index y = 0; y < H; ++y)
      for (Index x = 0; x < W; ++x) {
        double s = 0;
        for (Index d = -radius; d <= radius; ++d)
          s += image.at(c, y, std::clamp<Index>(x + d, 0, W - 1));
        tmp.at(c, y, x) = s * norm;
      }
  for (Index c = 0; c < C; ++c)
    for (Index y = 0; y < H; ++y)
      for (Index x = 0; x < W; ++x) {
        double s = 0;
        for (Index d = -radius; d <= radius; ++d)
          s += tmp.at(c, std::clamp<Index>(y + d, 0, H - 1), x);
        out.at(c, y, x) = s * norm;
      }
  return out;
}

Tensor corrupt(const Tensor& image, const CorruptionSpec& spec, std::mt19937_64& rng,
               std::span<const Box> targets, std::vector<Box>* occluders) {
  Tensor out = image;
  const Index H = image.dim(1), W = image.dim(2);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  if (spec.occlusion_probability > 0 && unit(rng) < spec.occlusion_probability) {
    std::uniform_int_distribution<Index> side(spec.occluder_min, spec.occluder_max);
    const Index sw = std::min(side(rng), W), sh = std::min(side(rng), H);
    double cx, cy;
    if (!targets.empty()) {
      std::uniform_int_distribution<std::size_t> which(0, targets.size() - 1);
      const Box& t = targets[which(rng)];
      cx = t.x1 + unit(rng) * t.width();
      cy = t.y1 + unit(rng) * t.height();
    } else {
      cx = unit(rng) * static_cast<double>(W);
      cy = unit(rng) * static_cast<double>(H);
    }
    const Index x0 = std::clamp<Index>(static_cast<Index>(std::floor(cx - 0.5 * sw)), 0, W - sw);
    const Index y0 = std::clamp<Index>(static_cast<Index>(std::floor(cy - 0.5 * sh)), 0, H - sh);
    const double color[3] = {unit(rng), unit(rng), unit(rng)};
    for (Index c = 0; c < 3; ++c)
      for (Index y = y0; y < y0 + sh; ++y)
        for (Index x = x0; x < x0 + sw; ++x) out.at(c, y, x) = color[c];
    if (occluders)
      occluders->push_back({static_cast<double>(x0), static_cast<double>(y0),
                            static_cast<double>(x0 + sw), static_cast<double>(y0 + sh)});
  }

  out = box_blur(out, spec.blur_radius);

  if (spec.noise_sigma > 0) {
    std::normal_distribution<double> noise(0.0, spec.noise_sigma);
    for (Index i = 0; i < out.size(); ++i) out[i] += noise(rng);
  }
  out.vec() = out.vec().cwiseMax(0.0).cwiseMin(1.0);
  return out;
}

DetectionSample generate_sample(const SceneSpec& spec, Index index) {
  spec.validate();
  DetectionSample s;
  s.index = index;
  s.seed = derive_seed(spec.seed, Stream::data, static_cast<std::uint64_t>(index));
  std::mt19937_64 rng(s.seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const Index H = spec.height, W = spec.width;
  const int K = spec.num_classes();

  s.image = Tensor({3, H, W});
  for (Index c = 0; c < 3; ++c) {
    const double bg = unit(rng) * spec.max_background;
    for (Index i = 0; i < H * W; ++i) s.image[c * H * W + i] = bg;
  }

  const Index count = std::uniform_int_distribution<Index>(spec.min_objects, spec.max_objects)(rng);
  std::uniform_int_distribution<int> any_class(0, K - 1);
  for (Index o = 0; o < count; ++o) {
    const int cls = o == 0 ? static_cast<int>(index % K) : any_class(rng);
    Box box;
    bool placed = false;
    for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
      const Index side = std::uniform_int_distribution<Index>(spec.min_size, spec.max_size)(rng);
      const Index x0 = std::uniform_int_distribution<Index>(0, W - side)(rng);
      const Index y0 = std::uniform_int_distribution<Index>(0, H - side)(rng);
      box = {static_cast<double>(x0), static_cast<double>(y0), static_cast<double>(x0 + side),
             static_cast<double>(y0 + side)};
      placed = std::none_of(s.objects.begin(), s.objects.end(),
                            [&](const GtObject& g) { return iou(g.box, box) > 0; });
    }
    if (!placed)
      throw std::runtime_error("generate_sample: cannot place object " + std::to_string(o) +
                               " in sample " + std::to_string(index));
    double color[3];
    for (double& v : color)
      v = spec.min_intensity + unit(rng) * (spec.max_intensity - spec.min_intensity);
    const ShapeKind kind = spec.classes[cls];
    for (Index y = static_cast<Index>(box.y1); y < static_cast<Index>(box.y2); ++y)
      for (Index x = static_cast<Index>(box.x1); x < static_cast<Index>(box.x2); ++x)
        if (inside_shape(kind, box, x + 0.5, y + 0.5))
          for (Index c = 0; c < 3; ++c) s.image.at(c, y, x) = color[c];
    s.objects.push_back({cls, box});
  }

  std::vector<Box> targets;
  for (const auto& g : s.objects) targets.push_back(g.box);
  s.image = corrupt(s.image, spec.corruption, rng, targets, &s.occluders);
  return s;
}

std::vector<DetectionSample> generate_dataset(const SceneSpec& spec, Index n) {
  if (n < 1) throw std::invalid_argument("generate_dataset: n must be >= 1");
  std::vector<DetectionSample> out;
  out.reserve(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) out.push_back(generate_sample(spec, i));
  return out;
}

namespace {

json box_json(const Box& b) { return json::array({b.x1, b.y1, b.x2, b.y2}); }

Box json_box(const json& j) {
  if (!j.is_array() || j.size() != 4) throw std::runtime_error("box must be [x1,y1,x2,y2]");
  return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>(), j[3].get<double>()};
}

std::string image_name(Index index) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "img_%05ld.ppm", static_cast<long>(index));
  return buf;
}

}  // namespace

void write_dataset(const std::filesystem::path& dir, std::span<const DetectionSample> samples) {
  std::filesystem::create_directories(dir);
  std::ofstream manifest(dir / "manifest.jsonl", std::ios::binary);
  if (!manifest) throw std::runtime_error("write_dataset: cannot write manifest in " + dir.string());
  for (const DetectionSample& s : samples) {
    const std::string file = image_name(s.index);
    write_ppm(dir / file, s.image);
    json boxes = json::array(), classes = json::array(), occ = json::array();
    for (const auto& g : s.objects) {
      boxes.push_back(box_json(g.box));
      classes.push_back(g.cls);
    }
    for (const auto& b : s.occluders) occ.push_back(box_json(b));
    json line = {{"file", file}, {"boxes", boxes},  {"classes", classes},
                 {"index", s.index}, {"seed", s.seed}, {"occluders", occ}};
    manifest << line.dump() << '\n';
  }
}

std::vector<DetectionSample> read_dataset(const std::filesystem::path& dir) {
  std::ifstream manifest(dir / "manifest.jsonl");
  if (!manifest) throw std::runtime_error("read_dataset: no manifest.jsonl in " + dir.string());
  std::vector<DetectionSample> out;
  std::string line;
  int lineno = 0;
  while (std::getline(manifest, line)) {
    ++lineno;
    if (line.empty()) continue;
    DetectionSample s;
    std::string file;
    try {
      const json j = json::parse(line);
      file = j.at("file").get<std::string>();
      const auto& boxes = j.at("boxes");
      const auto& classes = j.at("classes");
      if (!boxes.is_array() || !classes.is_array() || boxes.size() != classes.size())
        throw std::runtime_error("boxes and classes must be arrays of equal length");
      for (std::size_t i = 0; i < boxes.size(); ++i)
        s.objects.push_back({classes[i].get<int>(), json_box(boxes[i])});
      if (j.contains("occluders"))
        for (const auto& b : j["occluders"]) s.occluders.push_back(json_box(b));
      s.index = j.at("index").get<Index>();
      s.seed = j.at("seed").get<std::uint64_t>();
    } catch (const std::exception& e) {
      throw std::runtime_error("read_dataset: malformed manifest line " + std::to_string(lineno) +
                               ": " + e.what());
    }
    const auto path = dir / file;
    if (!std::filesystem::exists(path))
      throw std::runtime_error("read_dataset: missing image file " + path.string() +
                               " (manifest line " + std::to_string(lineno) + ")");
    s.image = read_ppm(path);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace ia
