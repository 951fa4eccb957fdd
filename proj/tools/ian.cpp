// ian: data generation, training, evaluation and attention export for the
// inverted-attention toy models.

#include "ia/eval.hpp"
#include "ia/gradcheck.hpp"
#include "ia/heatmap.hpp"
#include "ia/ppm.hpp"
#include "ia/synth.hpp"
#include "ia/train.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <fstream>
#include <iostream>

namespace {

using namespace ia;

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  os << text;
}

std::optional<Box> parse_roi(const std::string& s) {
  if (s.empty()) return std::nullopt;
  const auto f = split(s, ',');
  if (f.size() != 4) throw std::invalid_argument("--roi expects x1,y1,x2,y2");
  return Box{std::stod(f[0]), std::stod(f[1]), std::stod(f[2]), std::stod(f[3])};
}

KeyValueConfig report_echo(const TrainConfig& cfg, const std::filesystem::path& ckpt,
                           const std::filesystem::path& data) {
  KeyValueConfig echo = to_config(cfg);
  echo.set("checkpoint", ckpt.string());
  echo.set("eval_data", data.string());
  return echo;
}

int gen_data(const std::string& spec_path, const std::string& out_dir) {
  const auto cfg = KeyValueConfig::load(spec_path);
  const SceneSpec spec = scene_spec_from(cfg);
  const Index count = cfg.get_int("count", 100);
  if (count < 1) throw ConfigError("count must be >= 1");
  const auto samples = generate_dataset(spec, count);
  write_dataset(out_dir, samples);
  KeyValueConfig echo = to_config(spec);
  echo.set("count", std::to_string(count));
  echo.save(std::filesystem::path(out_dir) / "effective.cfg");
  std::cout << "wrote " << count << " samples to " << out_dir << '\n';
  return 0;
}

// Trains one configuration; evaluates on test_data when set and writes report.json.
void train_and_report(const TrainConfig& cfg) {
  const TrainResult r = train(cfg);
  for (const auto& e : r.log) std::cout << format_log_line(e) << '\n';
  if (!cfg.test_data.empty()) {
    const auto data = read_dataset(cfg.test_data);
    const EvalReport report =
        evaluate(r.model, report_echo(cfg, cfg.out_dir / "final", cfg.test_data), data);
    write_text(cfg.out_dir / "report.json", to_json(report) + "\n");
  }
}

int train_cmd(const std::string& cfg_path) {
  train_and_report(train_config_from(KeyValueConfig::load(cfg_path)));
  return 0;
}

int eval_cmd(const std::string& ckpt, const std::string& data_dir, const std::string& out) {
  TrainConfig cfg;
  const Model model = load_model(ckpt, &cfg);
  const auto data = read_dataset(data_dir);
  const std::string json = to_json(evaluate(model, report_echo(cfg, ckpt, data_dir), data));
  if (!out.empty()) write_text(out, json + "\n");
  std::cout << json << '\n';
  return 0;
}

int occlusion_cmd(const std::string& ckpt, const std::string& data_dir, Index patch,
                  double fraction, bool minimum) {
  const Model model = load_model(ckpt);
  const auto data = read_dataset(data_dir);
  OcclusionOptions opts;
  opts.patch = patch;
  opts.patch_fraction = fraction;
  opts.minimum = minimum;
  const OcclusionResult r = occlusion_sensitivity(model, data, opts);
  const char* metric = model.spec.mode == ModelMode::classifier ? "accuracy" : "recall";
  std::cout << "metric\tclean\toccluded\tdrop\tobjects\n"
            << metric << '\t' << r.clean << '\t' << r.occluded << '\t' << r.drop() << '\t'
            << r.objects << '\n';
  return 0;
}

int heatmap_cmd(const std::string& ckpt, const std::string& image, const std::string& out,
                const std::string& roi, int cls) {
  const Model model = load_model(ckpt);
  export_heatmap(model, read_ppm(image), out, cls >= 0 ? std::optional<int>(cls) : std::nullopt,
                 parse_roi(roi));
  return 0;
}

int gradcheck_cmd(std::uint64_t seed, int instances) {
  bool ok = true;
  for (const auto& r : run_gradcheck(seed, instances)) {
    std::printf("%-16s instances=%d max_rel_error=%.3e %s\n", r.op.c_str(), r.instances,
                r.max_error, r.passed ? "ok" : "FAIL");
    ok = ok && r.passed;
  }
  return ok ? 0 : 1;
}

int ablate_cmd(const std::string& cfg_path) {
  const TrainConfig base = train_config_from(KeyValueConfig::load(cfg_path));
  if (base.out_dir.empty()) throw ConfigError("ablate: out_dir is required");
  if (base.test_data.empty()) throw ConfigError("ablate: test_data is required");
  AttentionConfig ia = base.ia.value_or(AttentionConfig{.rng_seed = base.seed});
  if (!base.ia && base.model.mode == ModelMode::classifier) ia.apply_probability = 0.2;

  std::vector<std::pair<std::string, std::optional<AttentionConfig>>> cells{{"baseline", {}}};
  for (Strategy s : {Strategy::random, Strategy::overturn, Strategy::hard_threshold,
                     Strategy::soft_threshold}) {
    AttentionConfig a = ia;
    a.strategy = s;
    cells.emplace_back("strategy_" + std::string(to_string(s)), a);
  }
  for (Orientation o :
       {Orientation::spatial, Orientation::channel, Orientation::spatial_and_channel}) {
    AttentionConfig a = ia;
    a.orientation = o;
    cells.emplace_back("orientation_" + std::string(to_string(o)), a);
  }
  for (const auto& [name, a] : cells) {
    TrainConfig cfg = base;
    cfg.ia = a;
    cfg.out_dir = base.out_dir / name;
    std::cout << "== " << name << '\n';
    train_and_report(cfg);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Inverted-attention toy detector and classifier"};
  app.require_subcommand(1);

  std::string spec_path, out_dir, cfg_path, ckpt, data_dir, image, out, roi;
  Index patch = -1;
  double fraction = 0.25;
  bool minimum = false;
  int cls = -1, instances = 10;
  std::uint64_t seed = 1;

  auto* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset");
  gen->add_option("spec", spec_path, "Scene spec config")->required();
  gen->add_option("out_dir", out_dir, "Output directory")->required();

  auto* tr = app.add_subcommand("train", "Train a model from a run config");
  tr->add_option("config", cfg_path, "Run config")->required();

  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  ev->add_option("checkpoint", ckpt, "Checkpoint base path")->required();
  ev->add_option("data_dir", data_dir, "Dataset directory")->required();
  ev->add_option("--out", out, "Also write the JSON report here");

  auto* occ = app.add_subcommand("occlusion-test", "Occlude the most attended patch");
  occ->add_option("checkpoint", ckpt, "Checkpoint base path")->required();
  occ->add_option("data_dir", data_dir, "Dataset directory")->required();
  occ->add_option("--patch", patch, "Patch side in pixels (default: fraction of object side)");
  occ->add_option("--patch-frac", fraction, "Patch side as a fraction of the object side");
  occ->add_flag("--minimum", minimum, "Occlude the least attended patch instead");

  auto* hm = app.add_subcommand("heatmap", "Render the overall attention map onto an image");
  hm->add_option("checkpoint", ckpt, "Checkpoint base path")->required();
  hm->add_option("image", image, "Input PPM")->required();
  hm->add_option("out", out, "Output PPM")->required();
  hm->add_option("--roi", roi, "Region x1,y1,x2,y2 in pixels (detector)");
  hm->add_option("--class", cls, "Class to explain (default: predicted)");

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every op");
  gc->add_option("--seed", seed, "Random seed");
  gc->add_option("--instances", instances, "Random instances per op");

  auto* ab = app.add_subcommand("ablate", "Train and evaluate every strategy and orientation");
  ab->add_option("config", cfg_path, "Run config")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) return gen_data(spec_path, out_dir);
    if (*tr) return train_cmd(cfg_path);
    if (*ev) return eval_cmd(ckpt, data_dir, out);
    if (*occ) return occlusion_cmd(ckpt, data_dir, patch, fraction, minimum);
    if (*hm) return heatmap_cmd(ckpt, image, out, roi, cls);
    if (*gc) return gradcheck_cmd(seed, instances);
    if (*ab) return ablate_cmd(cfg_path);
  } catch (const std::exception& e) {
    std::cerr << "ian: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
