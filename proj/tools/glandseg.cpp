// glandseg command-line interface.
//
//   glandseg synth      generate a synthetic dataset
//   glandseg preprocess write the network input planes for one image
//   glandseg train      train and write checkpoint + log
//   glandseg evaluate   metrics report for a split
//   glandseg segment    label map for one image
//   glandseg gradcheck  finite-difference gradient checks
//
// Every config key is also a flag (underscores become dashes); flags win
// over the --config file.

#include <CLI11.hpp>

#include <cstdio>
#include <iomanip>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include "glandseg/config.hpp"
#include "glandseg/dataset.hpp"
#include "glandseg/evaluate.hpp"
#include "glandseg/gradcheck_suite.hpp"
#include "glandseg/io.hpp"
#include "glandseg/synthetic.hpp"
#include "glandseg/trainer.hpp"

namespace {

using namespace glandseg;

std::string flag_name(const std::string& key) {
  std::string f = key;
  for (auto& ch : f)
    if (ch == '_') ch = '-';
  return "--" + f;
}

struct ConfigFlags {
  std::string config_path;
  std::map<std::string, std::string> values;
  std::map<std::string, CLI::Option*> options;

  void attach(CLI::App* app) {
    app->add_option("--config", config_path, "key = value configuration file");
    for (const auto& key : ExperimentConfig::keys())
      options[key.name] = app->add_option(flag_name(key.name), values[key.name], key.help);
  }

  // Config file first, then flags; prints every flag-supplied value.
  ExperimentConfig resolve() const {
    ExperimentConfig cfg = config_path.empty() ? ExperimentConfig{} : ExperimentConfig::load(config_path);
    const bool preset_flag = options.at("preset")->count() > 0;
    auto apply = [&](const std::string& key) {
      const std::string before = cfg.get(key);
      const std::string& value = values.at(key);
      cfg.set(key, value);
      std::cout << key << " = " << cfg.get(key);
      if (!config_path.empty() && before != cfg.get(key))
        std::cout << " (flag overrides config value " << before << ")";
      else
        std::cout << " (flag)";
      std::cout << "\n";
    };
    // A preset resets the widths, so it goes before width flags.
    if (preset_flag) apply("preset");
    for (const auto& key : ExperimentConfig::keys())
      if (key.name != "preset" && options.at(key.name)->count()) apply(key.name);
    cfg.validate();
    return cfg;
  }
};

void print_metrics_header() { std::cout << kReportHeader << "\n"; }

int run_gradcheck(std::size_t instances, std::uint64_t seed) {
  const auto res = run_gradcheck_suite(instances, seed);
  std::size_t failed = 0;
  for (const auto& c : res.cases) {
    std::cout << std::left << std::setw(20) << c.name << " instances=" << c.instances << " failures=" << c.failures
              << " worst_rel_error=" << std::scientific << std::setprecision(3) << c.worst_rel_error
              << std::defaultfloat << "\n";
    if (c.failures) ++failed;
  }
  std::cout << std::fixed << std::setprecision(2) << "elapsed " << res.seconds << " s, epsilon " << std::scientific
            << res.epsilon << ", tolerance " << res.tolerance << std::defaultfloat << "\n";
  if (failed) {
    std::cout << "gradcheck: " << failed << " of " << res.cases.size() << " cases FAILED\n";
    return 1;
  }
  std::cout << "gradcheck: all " << res.cases.size() << " cases passed\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gland segmentation toolkit"};
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "Generate synthetic H&E-like tiles with label maps");
  SyntheticSpec spec;
  std::string synth_out = "data/synthetic";
  std::size_t n_train = 32, n_test_a = 8, n_test_b = 0;
  synth->add_option("--out", synth_out, "output directory");
  synth->add_option("--train", n_train, "number of train_N images");
  synth->add_option("--testA", n_test_a, "number of testA_N images");
  synth->add_option("--testB", n_test_b, "number of testB_N images");
  synth->add_option("--seed", spec.seed, "generator seed");
  synth->add_option("--width", spec.width, "tile width");
  synth->add_option("--height", spec.height, "tile height");
  synth->add_option("--glands-min", spec.glands_min, "fewest glands per tile");
  synth->add_option("--glands-max", spec.glands_max, "most glands per tile");
  synth->add_option("--noise", spec.noise, "concentration noise stddev");

  // preprocess
  auto* pre = app.add_subcommand("preprocess", "Write the network input for one image as PNG");
  ConfigFlags pre_flags;
  pre_flags.attach(pre);
  std::string pre_image, pre_out;
  pre->add_option("--image", pre_image, "input RGB image")->required();
  pre->add_option("--output", pre_out, "output PNG")->required();

  // train
  auto* tr = app.add_subcommand("train", "Train a network");
  ConfigFlags train_flags;
  train_flags.attach(tr);
  std::size_t report_every = 0;
  tr->add_option("--report-every", report_every, "print losses every N steps (default: 20 reports per run)");

  // evaluate
  auto* ev = app.add_subcommand("evaluate", "Evaluate a checkpoint on a split");
  ConfigFlags eval_flags;
  eval_flags.attach(ev);
  std::string split = "testA", eval_ckpt;
  bool oracle = false;
  ev->add_option("--split", split, "train | testA | testB");
  ev->add_option("--checkpoint", eval_ckpt, "checkpoint (default: <out_dir>/checkpoint.bin)");
  ev->add_flag("--oracle", oracle, "use the annotation as the probability map (no network)");

  // segment
  auto* seg = app.add_subcommand("segment", "Segment one image");
  ConfigFlags seg_flags;
  seg_flags.attach(seg);
  std::string seg_image, seg_out, seg_prob, seg_ckpt;
  seg->add_option("--image", seg_image, "input RGB image")->required();
  seg->add_option("--output", seg_out, "16-bit label PNG")->required();
  seg->add_option("--probability", seg_prob, "also write the raw probability map");
  seg->add_option("--checkpoint", seg_ckpt, "checkpoint (default: <out_dir>/checkpoint.bin)");

  // gradcheck
  auto* gc = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable op and loss");
  std::size_t gc_instances = 20;
  std::uint64_t gc_seed = 1;
  gc->add_option("--instances", gc_instances, "random instances per case");
  gc->add_option("--seed", gc_seed, "seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) {
      generate_synthetic(synth_out, spec, n_train, Split::train);
      generate_synthetic(synth_out, spec, n_test_a, Split::testA);
      generate_synthetic(synth_out, spec, n_test_b, Split::testB);
      std::cout << "wrote " << n_train << " train, " << n_test_a << " testA, " << n_test_b << " testB tiles ("
                << spec.width << "x" << spec.height << ") to " << synth_out << "\n";
      return 0;
    }
    if (pre->parsed()) {
      const auto cfg = pre_flags.resolve();
      const auto planes = prepare_planes(io::read_rgb(pre_image), cfg);
      if (planes.size() == 1) {
        io::write_gray(pre_out, planes.front());
      } else {
        ImageRGB rgb(planes[0].rows(), planes[0].cols());
        auto to8 = [](float v) { return static_cast<std::uint8_t>(std::clamp(std::lround(v * 255.0f), 0L, 255L)); };
        for (std::size_t i = 0; i < rgb.size(); ++i) rgb[i] = Rgb{to8(planes[0][i]), to8(planes[1][i]), to8(planes[2][i])};
        io::write_rgb(pre_out, rgb);
      }
      std::cout << "wrote " << to_string(cfg.input_mode) << " input (" << planes.front().cols() << "x"
                << planes.front().rows() << ") to " << pre_out << "\n";
      return 0;
    }
    if (tr->parsed()) {
      const auto cfg = train_flags.resolve();
      std::size_t every = report_every;
      const auto res = train(cfg, [&](std::uint64_t s, std::uint64_t total, const LossValues& v) {
        if (!every) every = std::max<std::uint64_t>(1, total / 20);
        if (s % every == 0 || s == total)
          std::cout << "step " << s << "/" << total << "  l_final " << v.l_final << "  bce " << v.bce << "  dice "
                    << v.dice << "  accuracy " << v.accuracy << std::endl;
      });
      std::cout << "trained " << res.steps << " steps; checkpoint " << res.checkpoint.string() << ", log "
                << res.log.string() << "\n";
      return 0;
    }
    if (ev->parsed()) {
      const auto cfg = eval_flags.resolve();
      std::optional<std::filesystem::path> ck;
      if (!oracle) ck = eval_ckpt.empty() ? std::filesystem::path(cfg.out_dir) / "checkpoint.bin" : std::filesystem::path(eval_ckpt);
      const auto res = evaluate(cfg, ck, parse_split(split), oracle);
      print_metrics_header();
      for (const auto& m : res.report.images) std::cout << csv_row(m) << "\n";
      std::cout << csv_row(res.report.mean) << "\n";
      std::cout << "report: " << res.csv.string() << ", " << res.json.string() << "\n";
      return 0;
    }
    if (seg->parsed()) {
      const auto cfg = seg_flags.resolve();
      const std::filesystem::path ck =
          seg_ckpt.empty() ? std::filesystem::path(cfg.out_dir) / "checkpoint.bin" : std::filesystem::path(seg_ckpt);
      std::optional<std::filesystem::path> prob;
      if (!seg_prob.empty()) prob = seg_prob;
      const auto res = segment(cfg, ck, seg_image, seg_out, prob);
      std::cout << "segmented " << seg_image << ": " << max_label(res.labels) << " objects, wrote " << seg_out << "\n";
      return 0;
    }
    if (gc->parsed()) return run_gradcheck(gc_instances, gc_seed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
