#pragma once

// Experiment configuration: a flat `key = value` text format. Lines starting
// with '#' are comments. Every key is listed in ExperimentConfig::keys().

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "glandseg/losses.hpp"
#include "glandseg/metrics.hpp"
#include "glandseg/network.hpp"
#include "glandseg/postprocess.hpp"
#include "glandseg/preprocess.hpp"

namespace glandseg {

enum class InputMode { rgb, hematoxylin, hematoxylin_unsharp };

inline std::string to_string(InputMode m) {
  switch (m) {
    case InputMode::rgb: return "rgb";
    case InputMode::hematoxylin: return "hematoxylin";
    case InputMode::hematoxylin_unsharp: return "hematoxylin+unsharp";
  }
  return "?";
}

inline InputMode parse_input_mode(const std::string& s) {
  if (s == "rgb") return InputMode::rgb;
  if (s == "hematoxylin") return InputMode::hematoxylin;
  if (s == "hematoxylin+unsharp") return InputMode::hematoxylin_unsharp;
  throw std::invalid_argument("unknown input mode '" + s + "' (expected rgb, hematoxylin or hematoxylin+unsharp)");
}

inline std::size_t input_channels(InputMode m) { return m == InputMode::rgb ? 3 : 1; }

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
  std::string data_dir = "data";
  std::string out_dir = "runs";

  InputMode input_mode = InputMode::hematoxylin;
  Vec3 stain_hematoxylin{0.650, 0.704, 0.286};
  Vec3 stain_eosin{0.072, 0.990, 0.105};
  double unsharp_sigma = 2.0;
  double unsharp_amount = 1.0;
  std::size_t resize_width = 832;  // 0 keeps the original size
  std::size_t resize_height = 576;

  LossKind loss = LossKind::L3;
  LossOptions loss_options{};

  std::string preset = "full";
  NetworkConfig network = NetworkConfig::full();  // in_channels follows input_mode

  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t batch_size = 4;
  std::size_t epochs = 100;
  std::size_t max_steps = 0;         // 0: run all epochs
  std::size_t checkpoint_every = 0;  // 0: final checkpoint only
  std::uint64_t seed = 1;

  std::string augment_transforms = "standard";  // identity | standard
  std::string augment_crop = "quadrants";       // full | quadrants

  PostprocessParams postprocess{};
  MetricOptions metrics{};

  AugmentSpec augment_spec() const {
    AugmentSpec spec = augment_transforms == "standard" ? AugmentSpec::standard() : AugmentSpec::identity();
    spec.crops.kind = augment_crop == "quadrants" ? CropSpec::Kind::quadrants : CropSpec::Kind::full;
    return spec;
  }

  StainMatrix stain_matrix() const { return StainMatrix(stain_hematoxylin, stain_eosin); }

  NetworkConfig network_config() const {
    NetworkConfig n = network;
    n.in_channels = input_channels(input_mode);
    n.seed = seed;
    return n;
  }

  struct Key {
    std::string name;
    std::string help;
    std::function<std::string(const ExperimentConfig&)> get;
    std::function<void(ExperimentConfig&, const std::string&)> set;
  };

  static const std::vector<Key>& keys();

  std::string get(const std::string& key) const { return find(key).get(*this); }

  void set(const std::string& key, const std::string& value) {
    const Key& k = find(key);
    try {
      k.set(*this, value);
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception& e) {
      throw ConfigError("config key '" + key + "': invalid value '" + value + "': " + e.what());
    }
  }

  void validate() const;

  std::string serialize() const {
    std::ostringstream os;
    for (const auto& k : keys()) os << k.name << " = " << k.get(*this) << "\n";
    return os.str();
  }

  static ExperimentConfig parse(const std::string& text, const std::string& origin = "<config>");

  static ExperimentConfig load(const std::filesystem::path& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot read config file " + path.string());
    std::stringstream ss;
    ss << is.rdbuf();
    return parse(ss.str(), path.string());
  }

  // Settings the network weights depend on; a checkpoint is only usable when
  // these agree with the runtime configuration.
  std::vector<std::string> network_mismatches(const ExperimentConfig& other) const {
    std::vector<std::string> diffs;
    for (const char* key : {"input_mode", "stem_channels", "encoder_channels", "blocks_per_stage", "coarse_tap"})
      if (get(key) != other.get(key)) diffs.push_back(key);
    return diffs;
  }

 private:
  static const Key& find(const std::string& key) {
    for (const auto& k : keys())
      if (k.name == key) return k;
    throw ConfigError("unknown config key '" + key + "'");
  }
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::string fmt_double(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

inline double parse_double(const std::string& s) {
  std::size_t pos = 0;
  const double v = std::stod(s, &pos);
  if (pos != s.size()) throw std::invalid_argument("not a number");
  return v;
}

inline std::uint64_t parse_uint(const std::string& s) {
  if (s.empty() || s[0] == '-') throw std::invalid_argument("not a non-negative integer");
  std::size_t pos = 0;
  const auto v = std::stoull(s, &pos);
  if (pos != s.size()) throw std::invalid_argument("not an integer");
  return v;
}

inline bool parse_bool(const std::string& s) {
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw std::invalid_argument("not a boolean");
}

inline std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> parts;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) parts.push_back(trim(item));
  return parts;
}

inline Vec3 parse_vec3(const std::string& s) {
  const auto parts = split_list(s);
  if (parts.size() != 3) throw std::invalid_argument("expected three comma-separated numbers");
  return {parse_double(parts[0]), parse_double(parts[1]), parse_double(parts[2])};
}

inline std::string fmt_vec3(const Vec3& v) {
  return fmt_double(v[0]) + "," + fmt_double(v[1]) + "," + fmt_double(v[2]);
}

}  // namespace detail

inline const std::vector<ExperimentConfig::Key>& ExperimentConfig::keys() {
  using C = ExperimentConfig;
  using namespace detail;
  auto str = [](std::string C::*m, std::string name, std::string help) {
    return Key{std::move(name), std::move(help), [m](const C& c) { return c.*m; },
               [m](C& c, const std::string& v) { c.*m = v; }};
  };
  auto real = [](auto getter, std::string name, std::string help) {
    return Key{std::move(name), std::move(help), [getter](const C& c) { return fmt_double(getter(const_cast<C&>(c))); },
               [getter](C& c, const std::string& v) { getter(c) = parse_double(v); }};
  };
  auto count = [](auto getter, std::string name, std::string help) {
    return Key{std::move(name), std::move(help),
               [getter](const C& c) { return std::to_string(getter(const_cast<C&>(c))); },
               [getter](C& c, const std::string& v) {
                 getter(c) = static_cast<std::remove_reference_t<decltype(getter(c))>>(parse_uint(v));
               }};
  };
  static const std::vector<Key> table = {
      str(&C::data_dir, "data_dir", "dataset root (train_N / testA_N / testB_N files)"),
      str(&C::out_dir, "out_dir", "directory for checkpoints, logs and reports"),
      {"input_mode", "rgb | hematoxylin | hematoxylin+unsharp",
       [](const C& c) { return to_string(c.input_mode); },
       [](C& c, const std::string& v) { c.input_mode = parse_input_mode(v); }},
      {"stain_hematoxylin", "hematoxylin OD vector r,g,b",
       [](const C& c) { return fmt_vec3(c.stain_hematoxylin); },
       [](C& c, const std::string& v) { c.stain_hematoxylin = parse_vec3(v); }},
      {"stain_eosin", "eosin OD vector r,g,b", [](const C& c) { return fmt_vec3(c.stain_eosin); },
       [](C& c, const std::string& v) { c.stain_eosin = parse_vec3(v); }},
      real([](C& c) -> double& { return c.unsharp_sigma; }, "unsharp_sigma", "unsharp-mask blur sigma"),
      real([](C& c) -> double& { return c.unsharp_amount; }, "unsharp_amount", "unsharp-mask amount"),
      count([](C& c) -> std::size_t& { return c.resize_width; }, "resize_width", "network input width, 0 = original"),
      count([](C& c) -> std::size_t& { return c.resize_height; }, "resize_height", "network input height, 0 = original"),
      {"loss", "L1 | L2 | L3", [](const C& c) { return std::string(to_string(c.loss)); },
       [](C& c, const std::string& v) { c.loss = parse_loss_kind(v); }},
      real([](C& c) -> double& { return c.loss_options.smoothing; }, "dice_smoothing", "soft Dice smoothing S"),
      real([](C& c) -> double& { return c.loss_options.clamp_eps; }, "prob_clamp", "probability clamp for BCE"),
      real([](C& c) -> double& { return c.loss_options.coarse_weight; }, "coarse_weight", "weight of the coarse-head loss"),
      {"preset", "tiny | full (resets the network widths below when set)",
       [](const C& c) { return c.preset; },
       [](C& c, const std::string& v) {
         c.network = NetworkConfig::preset(v);
         c.preset = v;
       }},
      count([](C& c) -> std::size_t& { return c.network.stem_channels; }, "stem_channels", "stem width"),
      {"encoder_channels", "four comma-separated encoder widths",
       [](const C& c) {
         const auto& e = c.network.encoder_channels;
         return std::to_string(e[0]) + "," + std::to_string(e[1]) + "," + std::to_string(e[2]) + "," +
                std::to_string(e[3]);
       },
       [](C& c, const std::string& v) {
         const auto parts = split_list(v);
         if (parts.size() != 4) throw std::invalid_argument("expected four widths");
         for (std::size_t i = 0; i < 4; ++i) c.network.encoder_channels[i] = parse_uint(parts[i]);
       }},
      count([](C& c) -> std::size_t& { return c.network.blocks_per_stage; }, "blocks_per_stage",
            "residual blocks per encoder stage"),
      count([](C& c) -> std::size_t& { return c.network.coarse_tap; }, "coarse_tap",
            "downsampling factor of the coarse head: 2, 4, 8 or 16"),
      real([](C& c) -> double& { return c.learning_rate; }, "learning_rate", "Adam step size"),
      real([](C& c) -> double& { return c.beta1; }, "beta1", "Adam first-moment decay"),
      real([](C& c) -> double& { return c.beta2; }, "beta2", "Adam second-moment decay"),
      real([](C& c) -> double& { return c.adam_eps; }, "adam_eps", "Adam epsilon"),
      count([](C& c) -> std::size_t& { return c.batch_size; }, "batch_size", "samples per step"),
      count([](C& c) -> std::size_t& { return c.epochs; }, "epochs", "passes over the augmented training set"),
      count([](C& c) -> std::size_t& { return c.max_steps; }, "max_steps", "step limit, 0 = epochs decide"),
      count([](C& c) -> std::size_t& { return c.checkpoint_every; }, "checkpoint_every",
            "intermediate checkpoint interval in steps, 0 = none"),
      count([](C& c) -> std::uint64_t& { return c.seed; }, "seed", "seed for initialization and shuffling"),
      str(&C::augment_transforms, "augment_transforms", "identity | standard (4 rotations x 3 flip states)"),
      str(&C::augment_crop, "augment_crop", "full | quadrants"),
      {"morph_radius", "opening disk radius",
       [](const C& c) { return std::to_string(c.postprocess.radius); },
       [](C& c, const std::string& v) { c.postprocess.radius = static_cast<int>(parse_uint(v)); }},
      count([](C& c) -> std::size_t& { return c.postprocess.min_area; }, "min_area",
            "smallest kept object in pixels"),
      {"connectivity", "4 | 8", [](const C& c) { return std::to_string(c.postprocess.connectivity); },
       [](C& c, const std::string& v) { c.postprocess.connectivity = static_cast<int>(parse_uint(v)); }},
      real([](C& c) -> double& { return c.metrics.f1_overlap; }, "f1_overlap",
           "overlap fraction of a ground-truth object needed for a detection"),
      {"hausdorff_boundary", "true: Hausdorff over object boundaries only",
       [](const C& c) { return std::string(c.metrics.hausdorff_boundary ? "true" : "false"); },
       [](C& c, const std::string& v) { c.metrics.hausdorff_boundary = parse_bool(v); }},
  };
  return table;
}

inline void ExperimentConfig::validate() const {
  auto positive = [](double v, const char* name) {
    if (!(v > 0)) throw ConfigError(std::string("config: ") + name + " must be positive");
  };
  if (!(learning_rate >= 0)) throw ConfigError("config: learning_rate must be >= 0");
  positive(adam_eps, "adam_eps");
  positive(unsharp_sigma, "unsharp_sigma");
  positive(loss_options.smoothing, "dice_smoothing");
  positive(loss_options.clamp_eps, "prob_clamp");
  if (!(loss_options.coarse_weight >= 0)) throw ConfigError("config: coarse_weight must be >= 0");
  if (!(unsharp_amount >= 0)) throw ConfigError("config: unsharp_amount must be >= 0");
  if (!(beta1 >= 0 && beta1 < 1) || !(beta2 >= 0 && beta2 < 1))
    throw ConfigError("config: beta1 and beta2 must lie in [0, 1)");
  if (batch_size == 0) throw ConfigError("config: batch_size must be positive");
  if (epochs == 0 && max_steps == 0) throw ConfigError("config: epochs or max_steps must be positive");
  if (!(metrics.f1_overlap > 0 && metrics.f1_overlap < 1)) throw ConfigError("config: f1_overlap must lie in (0, 1)");
  if ((resize_width == 0) != (resize_height == 0))
    throw ConfigError("config: resize_width and resize_height must both be set or both be 0");
  if (resize_width % 32 || resize_height % 32)
    throw ConfigError("config: resize dimensions must be multiples of 32");
  if (augment_transforms != "identity" && augment_transforms != "standard")
    throw ConfigError("config: augment_transforms must be identity or standard");
  if (augment_crop != "full" && augment_crop != "quadrants")
    throw ConfigError("config: augment_crop must be full or quadrants");
  try {
    postprocess.validate();
    network_config().validate();
    (void)stain_matrix();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

inline ExperimentConfig ExperimentConfig::parse(const std::string& text, const std::string& origin) {
  ExperimentConfig cfg;
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  std::vector<std::pair<std::string, std::string>> entries;
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value'");
    entries.emplace_back(detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
  }
  // A preset resets the network widths, so apply it before any width override.
  std::stable_partition(entries.begin(), entries.end(), [](const auto& e) { return e.first == "preset"; });
  for (const auto& [key, value] : entries) {
    try {
      cfg.set(key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ": " + e.what());
    }
  }
  return cfg;
}

}  // namespace glandseg
