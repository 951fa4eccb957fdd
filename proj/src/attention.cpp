#include "ia/attention.hpp"

#include <iomanip>
#include <istream>
#include <ostream>
#include <stdexcept>

namespace ia {

namespace {

template <typename Enum, std::size_t N>
Enum parse_enum(std::string_view s, const std::pair<std::string_view, Enum> (&table)[N],
                const char* what) {
  for (const auto& [name, value] : table)
    if (name == s) return value;
  throw std::invalid_argument(std::string("unknown ") + what + " '" + std::string(s) + "'");
}

constexpr std::pair<std::string_view, Strategy> kStrategies[] = {
    {"random", Strategy::random},
    {"overturn", Strategy::overturn},
    {"hard_threshold", Strategy::hard_threshold},
    {"soft_threshold", Strategy::soft_threshold}};
constexpr std::pair<std::string_view, Orientation> kOrientations[] = {
    {"spatial", Orientation::spatial},
    {"channel", Orientation::channel},
    {"spatial_and_channel", Orientation::spatial_and_channel}};
constexpr std::pair<std::string_view, Placement> kPlacements[] = {
    {"roi_feature", Placement::roi_feature}, {"full_feature", Placement::full_feature}};
constexpr std::pair<std::string_view, Probe> kProbes[] = {{"gt_score", Probe::gt_score},
                                                          {"gt_loss", Probe::gt_loss}};

template <typename Enum, std::size_t N>
std::string_view name_of(Enum v, const std::pair<std::string_view, Enum> (&table)[N]) {
  for (const auto& [name, value] : table)
    if (value == v) return name;
  return "?";
}

}  // namespace

std::string_view to_string(Strategy s) { return name_of(s, kStrategies); }
std::string_view to_string(Orientation o) { return name_of(o, kOrientations); }
std::string_view to_string(Placement p) { return name_of(p, kPlacements); }
std::string_view to_string(Probe p) { return name_of(p, kProbes); }
Strategy parse_strategy(std::string_view s) { return parse_enum(s, kStrategies, "strategy"); }
Orientation parse_orientation(std::string_view s) {
  return parse_enum(s, kOrientations, "orientation");
}
Placement parse_placement(std::string_view s) { return parse_enum(s, kPlacements, "placement"); }
Probe parse_probe(std::string_view s) { return parse_enum(s, kProbes, "probe"); }

void AttentionConfig::validate() const {
  auto unit = [](double v, const char* name) {
    if (!(v >= 0.0 && v <= 1.0))
      throw std::invalid_argument(std::string(name) + " must lie in [0,1], got " +
                                  std::to_string(v));
  };
  unit(spatial_drop_ratio, "spatial_drop_ratio");
  unit(channel_select_ratio, "channel_select_ratio");
  unit(apply_probability, "apply_probability");
}

void write_mask(std::ostream& os, const InvertedAttentionMask<double>& m) {
  const Index C = m.mask.dim(0), H = m.mask.dim(1), W = m.mask.dim(2);
  os << C << ' ' << H << ' ' << W << ' ' << to_string(m.strategy) << '\n';
  os << std::setprecision(17);
  for (Index c = 0; c < C; ++c)
    for (Index h = 0; h < H; ++h) {
      for (Index w = 0; w < W; ++w) os << (w ? " " : "") << m.mask.at(c, h, w);
      os << '\n';
    }
}

InvertedAttentionMask<double> read_mask(std::istream& is) {
  Index C = 0, H = 0, W = 0;
  std::string strategy;
  if (!(is >> C >> H >> W >> strategy)) throw std::runtime_error("read_mask: bad header");
  InvertedAttentionMask<double> m;
  m.strategy = parse_strategy(strategy);
  m.mask = Tensor({C, H, W});
  for (Index i = 0; i < m.mask.size(); ++i)
    if (!(is >> m.mask[i]))
      throw std::runtime_error("read_mask: truncated at value " + std::to_string(i));
  return m;
}

}  // namespace ia
