#pragma once

#include <algorithm>
#include <atomic>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

#include <json.hpp>

#include "glandseg/checkpoint.hpp"
#include "glandseg/config.hpp"
#include "glandseg/dataset.hpp"
#include "glandseg/io.hpp"
#include "glandseg/metrics.hpp"
#include "glandseg/network.hpp"
#include "glandseg/postprocess.hpp"

namespace glandseg {

class EvaluationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Frozen network plus the preprocessing it was trained with.
class Predictor {
 public:
  Predictor(const ExperimentConfig& runtime, const Checkpoint& ck) : cfg_(runtime), net_(build_checked(runtime, ck)) {}

  const ExperimentConfig& config() const { return cfg_; }

  // Probability map at network resolution (the resize target, or the image
  // size when resizing is off).
  ProbabilityMap probability(const ImageRGB& image) {
    NoGradGuard no_grad;
    const Planes planes = prepare_planes(image, cfg_);
    const std::size_t h = planes.front().rows(), w = planes.front().cols();
    const Tensor x = stack_planes({&planes});
    const Tensor y = net_.forward(x, Mode::eval).final;
    const std::size_t wp = y.dim(3);
    ProbabilityMap map(h, w);
    const auto data = y.data();
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t c = 0; c < w; ++c) map(r, c) = data[r * wp + c];
    return map;
  }

  LabeledMask segment(const ImageRGB& image) {
    return postprocess_pipeline(probability(image), cfg_.postprocess, image.cols(), image.rows());
  }

 private:
  static MiniLinkNet build_checked(const ExperimentConfig& runtime, const Checkpoint& ck) {
    const auto diffs = runtime.network_mismatches(ck.config);
    if (!diffs.empty()) {
      std::string msg = "checkpoint/config mismatch on";
      for (const auto& k : diffs) msg += " " + k + " (checkpoint " + ck.config.get(k) + ", config " + runtime.get(k) + ")";
      throw EvaluationError(msg);
    }
    return network_from_checkpoint(ck);
  }

  ExperimentConfig cfg_;
  MiniLinkNet net_;
};

// Worker count for per-image evaluation: GLANDSEG_THREADS when set, else 1.
inline std::size_t evaluation_threads() {
  if (const char* env = std::getenv("GLANDSEG_THREADS")) {
    try {
      const long n = std::stol(env);
      if (n >= 1) return static_cast<std::size_t>(n);
    } catch (const std::exception&) {
    }
    throw EvaluationError(std::string("GLANDSEG_THREADS must be a positive integer, got '") + env + "'");
  }
  return 1;
}

// Runs fn(i, worker) for i in [0, n) on `threads` workers; the first
// exception is rethrown.
template <typename Fn>
void parallel_for(std::size_t n, std::size_t threads, Fn fn) {
  threads = std::max<std::size_t>(1, std::min(threads, n));
  if (threads == 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i, std::size_t{0});
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < threads; ++t)
    pool.emplace_back([&, t] {
      for (std::size_t i; (i = next++) < n;) {
        try {
          fn(i, t);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
          next = n;
        }
      }
    });
  for (auto& th : pool) th.join();
  if (error) std::rethrow_exception(error);
}

struct EvaluationResult {
  MetricsReport report;
  std::filesystem::path csv, json;
};

inline nlohmann::json to_json(const ImageMetrics& m) {
  return {{"image", m.name},         {"object_dice", m.object_dice}, {"f1", m.f1},
          {"hausdorff", m.object_hausdorff}, {"precision", m.precision},  {"recall", m.recall},
          {"tp", m.tp},              {"fp", m.fp},                   {"fn", m.fn}};
}

inline std::string csv_row(const ImageMetrics& m) {
  std::ostringstream os;
  os.precision(10);
  os << m.name << ',' << m.object_dice << ',' << m.f1 << ',' << m.object_hausdorff << ',' << m.precision << ','
     << m.recall << ',' << m.tp << ',' << m.fp << ',' << m.fn;
  return os.str();
}

inline constexpr const char* kReportHeader = "image,object_dice,f1,hausdorff,precision,recall,tp,fp,fn";

inline void write_report(const MetricsReport& report, const std::filesystem::path& csv,
                         const std::filesystem::path& json, const std::string& split) {
  for (const auto& p : {csv, json})
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream c(csv);
  if (!c) throw EvaluationError(csv.string() + ": cannot write report");
  c << kReportHeader << '\n';
  for (const auto& m : report.images) c << csv_row(m) << '\n';
  c << csv_row(report.mean) << '\n';

  nlohmann::json doc;
  doc["split"] = split;
  doc["images"] = nlohmann::json::array();
  for (const auto& m : report.images) doc["images"].push_back(to_json(m));
  doc["aggregate"] = to_json(report.mean);
  std::ofstream j(json);
  if (!j) throw EvaluationError(json.string() + ": cannot write report");
  j << doc.dump(2) << '\n';
}

// Evaluates `split` of cfg.data_dir. With `oracle` set, the probability map
// is the annotation's foreground and no checkpoint is needed.
inline EvaluationResult evaluate(const ExperimentConfig& cfg, const std::optional<std::filesystem::path>& checkpoint,
                                 Split split, bool oracle = false) {
  cfg.validate();
  const auto index = load_dataset(cfg.data_dir);
  const auto records = index.split(split);
  if (records.empty()) throw EvaluationError(cfg.data_dir + ": split " + to_string(split) + " is missing");

  std::optional<Checkpoint> ck;
  if (!oracle) {
    if (!checkpoint) throw EvaluationError("evaluate: a checkpoint is required");
    ck = load_checkpoint(*checkpoint);
    Predictor probe(cfg, *ck);  // fail fast on a mismatch
  }

  const std::size_t threads = evaluation_threads();
  std::vector<ImageMetrics> rows(records.size());
  std::vector<std::optional<Predictor>> predictors(std::max<std::size_t>(1, std::min(threads, records.size())));

  parallel_for(records.size(), threads, [&](std::size_t i, std::size_t worker) {
    const auto& rec = records[i];
    const ImageRGB image = io::read_rgb(rec.image);
    const LabeledMask gt = io::read_labels(rec.annotation);
    LabeledMask seg;
    if (oracle) {
      ProbabilityMap map(gt.rows(), gt.cols());
      for (std::size_t k = 0; k < gt.size(); ++k) map[k] = gt[k] ? 1.0f : 0.0f;
      seg = postprocess_pipeline(map, cfg.postprocess, gt.cols(), gt.rows());
    } else {
      auto& predictor = predictors[worker];
      if (!predictor) predictor.emplace(cfg, *ck);
      seg = predictor->segment(image);
    }
    rows[i] = evaluate_masks(rec.name(), gt, seg, cfg.metrics);
  });

  EvaluationResult res;
  res.report = aggregate_report(std::move(rows));
  const std::filesystem::path out = cfg.out_dir;
  const std::string stem = "report_" + to_string(split) + (oracle ? "_oracle" : "");
  res.csv = out / (stem + ".csv");
  res.json = out / (stem + ".json");
  write_report(res.report, res.csv, res.json, to_string(split));
  return res;
}

struct SegmentResult {
  LabeledMask labels;
  ProbabilityMap probability;
};

// Full pipeline on one image; writes a 16-bit label PNG and, when
// `probability_out` is given, the raw probability map.
inline SegmentResult segment(const ExperimentConfig& cfg, const std::filesystem::path& checkpoint,
                             const std::filesystem::path& image_path, const std::filesystem::path& out_path,
                             const std::optional<std::filesystem::path>& probability_out = std::nullopt) {
  Predictor predictor(cfg, load_checkpoint(checkpoint));
  const ImageRGB image = io::read_rgb(image_path);
  SegmentResult res;
  res.probability = predictor.probability(image);
  res.labels = postprocess_pipeline(res.probability, cfg.postprocess, image.cols(), image.rows());
  io::write_labels(out_path, res.labels);
  if (probability_out) io::write_probability_map(*probability_out, res.probability);
  return res;
}

}  // namespace glandseg
