#include "ia/config.hpp"

#include "ia/train.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

namespace ia {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string fmt(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

template <typename T>
std::string join(const std::vector<T>& v, char sep) {
  std::ostringstream os;
  for (std::size_t i = 0; i < v.size(); ++i) os << (i ? std::string(1, sep) : "") << v[i];
  return os.str();
}

}  // namespace

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) {
    cur = trim(cur);
    if (!cur.empty()) out.push_back(cur);
  }
  return out;
}

KeyValueConfig KeyValueConfig::parse(std::istream& is, const std::string& source) {
  KeyValueConfig cfg;
  cfg.source_ = source;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(source + ":" + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError(source + ":" + std::to_string(lineno) + ": empty key");
    if (cfg.values_.count(key))
      throw ConfigError(source + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
    cfg.values_[key] = trim(line.substr(eq + 1));
  }
  return cfg;
}

KeyValueConfig KeyValueConfig::load(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config " + path.string());
  return parse(is, path.string());
}

const std::string& KeyValueConfig::raw(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError(source_ + ": missing key '" + key + "'");
  used_.insert(key);
  return it->second;
}

std::string KeyValueConfig::get(const std::string& key) const { return raw(key); }

std::string KeyValueConfig::get(const std::string& key, const std::string& fallback) const {
  return has(key) ? raw(key) : fallback;
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const {
  if (!has(key)) return fallback;
  const std::string& v = raw(key);
  double out = 0;
  auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || end != v.data() + v.size())
    throw ConfigError(source_ + ": key '" + key + "' is not a number: " + v);
  return out;
}

std::int64_t KeyValueConfig::get_int(const std::string& key, std::int64_t fallback) const {
  if (!has(key)) return fallback;
  const std::string& v = raw(key);
  std::int64_t out = 0;
  auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || end != v.data() + v.size())
    throw ConfigError(source_ + ": key '" + key + "' is not an integer: " + v);
  return out;
}

std::uint64_t KeyValueConfig::get_uint(const std::string& key, std::uint64_t fallback) const {
  if (!has(key)) return fallback;
  const std::string& v = raw(key);
  std::uint64_t out = 0;
  auto [end, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || end != v.data() + v.size())
    throw ConfigError(source_ + ": key '" + key + "' is not an unsigned integer: " + v);
  return out;
}

bool KeyValueConfig::get_bool(const std::string& key, bool fallback) const {
  if (!has(key)) return fallback;
  const std::string& v = raw(key);
  if (v == "true" || v == "on" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "off" || v == "0" || v == "no") return false;
  throw ConfigError(source_ + ": key '" + key + "' is not a boolean: " + v);
}

std::vector<std::string> KeyValueConfig::unused_keys() const {
  std::vector<std::string> out;
  for (const auto& [k, v] : values_)
    if (!used_.count(k)) out.push_back(k);
  return out;
}

void KeyValueConfig::reject_unused() const {
  const auto unused = unused_keys();
  if (!unused.empty()) throw ConfigError(source_ + ": unknown key '" + unused.front() + "'");
}

std::string KeyValueConfig::dump() const {
  std::ostringstream os;
  for (const auto& [k, v] : values_) os << k << " = " << v << '\n';
  return os.str();
}

void KeyValueConfig::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw ConfigError("cannot write config " + path.string());
  os << dump();
}

// ------------------------------------------------------------------ schemas

namespace {

std::vector<ConvLayerSpec> parse_backbone(const std::string& s) {
  std::vector<ConvLayerSpec> out;
  for (const std::string& layer : split(s, ',')) {
    const auto f = split(layer, ':');
    if (f.size() != 5)
      throw ConfigError("backbone layer '" + layer + "' must be out:kernel:stride:pad:pool");
    out.push_back({std::stol(f[0]), std::stol(f[1]), std::stol(f[2]), std::stol(f[3]),
                   std::stol(f[4])});
  }
  return out;
}

std::string backbone_string(const std::vector<ConvLayerSpec>& layers) {
  std::ostringstream os;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    os << (i ? "," : "") << l.out_channels << ':' << l.kernel << ':' << l.stride << ':' << l.pad
       << ':' << l.pool;
  }
  return os.str();
}

}  // namespace

TrainConfig train_config_from(const KeyValueConfig& c) {
  TrainConfig t;
  ModelSpec& m = t.model;
  m.mode = parse_model_mode(c.get("mode", "classifier"));
  m.image_h = c.get_int("image_h", m.image_h);
  m.image_w = c.get_int("image_w", m.image_w);
  if (c.has("backbone")) m.backbone = parse_backbone(c.get("backbone"));
  if (c.has("roi_out")) {
    const auto f = split(c.get("roi_out"), 'x');
    if (f.size() != 2) throw ConfigError("roi_out must be HxW");
    m.roi_out_h = std::stol(f[0]);
    m.roi_out_w = std::stol(f[1]);
  }
  if (c.has("fc_dims")) {
    m.fc_dims.clear();
    for (const auto& d : split(c.get("fc_dims"), ',')) m.fc_dims.push_back(std::stol(d));
  }
  m.num_classes = static_cast<int>(c.get_int("num_classes", m.num_classes));

  t.train_data = c.get("train_data", "");
  t.test_data = c.get("test_data", "");
  t.out_dir = c.get("out_dir", "");
  t.epochs = static_cast<int>(c.get_int("epochs", t.epochs));
  t.batch_size = static_cast<int>(c.get_int("batch_size", t.batch_size));
  t.lr = c.get_double("lr", t.lr);
  t.momentum = c.get_double("momentum", t.momentum);
  t.lr_decay_epoch = static_cast<int>(c.get_int("lr_decay_epoch", t.lr_decay_epoch));
  t.lr_decay_factor = c.get_double("lr_decay_factor", t.lr_decay_factor);
  t.seed = c.get_uint("seed", t.seed);
  t.checkpoint_every = static_cast<int>(c.get_int("checkpoint_every", t.checkpoint_every));
  t.proposals.jitter = c.get_double("proposal.jitter", t.proposals.jitter);
  t.proposals.per_gt = static_cast<int>(c.get_int("proposal.per_gt", t.proposals.per_gt));
  t.proposals.background =
      static_cast<int>(c.get_int("proposal.background", t.proposals.background));

  if (c.get_bool("ia", false)) {
    AttentionConfig a;
    a.strategy = parse_strategy(c.get("ia.strategy", std::string(to_string(a.strategy))));
    a.orientation =
        parse_orientation(c.get("ia.orientation", std::string(to_string(a.orientation))));
    a.spatial_drop_ratio = c.get_double("ia.spatial_drop_ratio", a.spatial_drop_ratio);
    a.hard_threshold = c.get_double("ia.hard_threshold", a.hard_threshold);
    a.channel_select_ratio = c.get_double("ia.channel_select_ratio", a.channel_select_ratio);
    a.placement = parse_placement(c.get("ia.placement", std::string(to_string(a.placement))));
    a.apply_probability = c.get_double(
        "ia.apply_probability",
        a.placement == Placement::full_feature || m.mode == ModelMode::classifier ? 0.2 : 1.0);
    a.probe = parse_probe(c.get("ia.probe", std::string(to_string(a.probe))));
    a.rng_seed = c.get_uint("ia.seed", t.seed);
    t.ia = a;
  } else {
    // ia.* keys without ia = on are ignored but still accepted.
    for (const auto& [k, v] : c.values())
      if (k.rfind("ia.", 0) == 0) c.get(k);
  }
  c.reject_unused();
  t.validate();
  return t;
}

void TrainConfig::validate() const {
  model.validate();
  if (!(lr > 0)) throw ConfigError("lr must be > 0");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(momentum >= 0 && momentum < 1)) throw ConfigError("momentum must lie in [0,1)");
  if (ia) ia->validate();
}

KeyValueConfig to_config(const TrainConfig& t) {
  KeyValueConfig c;
  const ModelSpec& m = t.model;
  c.set("mode", std::string(to_string(m.mode)));
  c.set("image_h", std::to_string(m.image_h));
  c.set("image_w", std::to_string(m.image_w));
  c.set("backbone", backbone_string(m.backbone));
  c.set("roi_out", std::to_string(m.roi_out_h) + "x" + std::to_string(m.roi_out_w));
  c.set("fc_dims", join(m.fc_dims, ','));
  c.set("num_classes", std::to_string(m.num_classes));
  c.set("train_data", t.train_data.string());
  c.set("test_data", t.test_data.string());
  c.set("out_dir", t.out_dir.string());
  c.set("epochs", std::to_string(t.epochs));
  c.set("batch_size", std::to_string(t.batch_size));
  c.set("lr", fmt(t.lr));
  c.set("momentum", fmt(t.momentum));
  c.set("lr_decay_epoch", std::to_string(t.decay_epoch()));
  c.set("lr_decay_factor", fmt(t.lr_decay_factor));
  c.set("seed", std::to_string(t.seed));
  c.set("checkpoint_every", std::to_string(t.checkpoint_every));
  c.set("proposal.jitter", fmt(t.proposals.jitter));
  c.set("proposal.per_gt", std::to_string(t.proposals.per_gt));
  c.set("proposal.background", std::to_string(t.proposals.background));
  c.set("ia", t.ia ? "on" : "off");
  if (t.ia) {
    const AttentionConfig& a = *t.ia;
    c.set("ia.strategy", std::string(to_string(a.strategy)));
    c.set("ia.orientation", std::string(to_string(a.orientation)));
    c.set("ia.spatial_drop_ratio", fmt(a.spatial_drop_ratio));
    c.set("ia.hard_threshold", fmt(a.hard_threshold));
    c.set("ia.channel_select_ratio", fmt(a.channel_select_ratio));
    c.set("ia.placement", std::string(to_string(a.placement)));
    c.set("ia.apply_probability", fmt(a.apply_probability));
    c.set("ia.probe", std::string(to_string(a.probe)));
    c.set("ia.seed", std::to_string(a.rng_seed));
  }
  return c;
}

SceneSpec scene_spec_from(const KeyValueConfig& c) {
  SceneSpec s;
  s.height = c.get_int("height", s.height);
  s.width = c.get_int("width", s.width);
  if (c.has("classes")) {
    s.classes.clear();
    for (const auto& name : split(c.get("classes"), ',')) s.classes.push_back(parse_shape(name));
  }
  s.min_objects = c.get_int("min_objects", s.min_objects);
  s.max_objects = c.get_int("max_objects", s.max_objects);
  s.min_size = c.get_int("min_size", s.min_size);
  s.max_size = c.get_int("max_size", s.max_size);
  s.min_intensity = c.get_double("min_intensity", s.min_intensity);
  s.max_intensity = c.get_double("max_intensity", s.max_intensity);
  s.max_background = c.get_double("max_background", s.max_background);
  auto& k = s.corruption;
  k.occlusion_probability = c.get_double("occlusion_probability", k.occlusion_probability);
  k.occluder_min = c.get_int("occluder_min", k.occluder_min);
  k.occluder_max = c.get_int("occluder_max", k.occluder_max);
  k.noise_sigma = c.get_double("noise_sigma", k.noise_sigma);
  k.blur_radius = c.get_int("blur_radius", k.blur_radius);
  s.seed = c.get_uint("seed", s.seed);
  c.get("count", "");
  c.reject_unused();
  s.validate();
  return s;
}

KeyValueConfig to_config(const SceneSpec& s) {
  KeyValueConfig c;
  c.set("height", std::to_string(s.height));
  c.set("width", std::to_string(s.width));
  std::vector<std::string> names;
  for (ShapeKind k : s.classes) names.emplace_back(to_string(k));
  c.set("classes", join(names, ','));
  c.set("min_objects", std::to_string(s.min_objects));
  c.set("max_objects", std::to_string(s.max_objects));
  c.set("min_size", std::to_string(s.min_size));
  c.set("max_size", std::to_string(s.max_size));
  c.set("min_intensity", fmt(s.min_intensity));
  c.set("max_intensity", fmt(s.max_intensity));
  c.set("max_background", fmt(s.max_background));
  c.set("occlusion_probability", fmt(s.corruption.occlusion_probability));
  c.set("occluder_min", std::to_string(s.corruption.occluder_min));
  c.set("occluder_max", std::to_string(s.corruption.occluder_max));
  c.set("noise_sigma", fmt(s.corruption.noise_sigma));
  c.set("blur_radius", std::to_string(s.corruption.blur_radius));
  c.set("seed", std::to_string(s.seed));
  return c;
}

}  // namespace ia
