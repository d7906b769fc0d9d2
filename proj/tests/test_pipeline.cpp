#include <gtest/gtest.h>

#include <unistd.h>

#include <filesystem>
#include <fstream>
#include <iterator>
#include <set>

#include "glandseg/checkpoint.hpp"
#include "glandseg/config.hpp"
#include "glandseg/dataset.hpp"
#include "glandseg/evaluate.hpp"
#include "glandseg/io.hpp"
#include "glandseg/synthetic.hpp"
#include "glandseg/trainer.hpp"

using namespace glandseg;
namespace fs = std::filesystem;

namespace {

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

std::vector<float> values(const Tensor& t) { return {t.data().begin(), t.data().end()}; }

ExperimentConfig synthetic_config(const fs::path& data, const fs::path& out) {
  ExperimentConfig cfg = ExperimentConfig::parse(R"(
preset = tiny
input_mode = hematoxylin
loss = L3
resize_width = 0
resize_height = 0
augment_transforms = standard
augment_crop = full
batch_size = 4
max_steps = 300
learning_rate = 0.001
seed = 1
min_area = 40
)");
  cfg.data_dir = data.string();
  cfg.out_dir = out.string();
  return cfg;
}

// One synthetic dataset and one 300-step run shared by the whole file.
class Pipeline : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fs::temp_directory_path() / ("glandseg_pipeline_" + std::to_string(::getpid()));
    fs::remove_all(root_);
    SyntheticSpec spec;
    generate_synthetic(root_ / "data", spec, 32, Split::train);
    generate_synthetic(root_ / "data", spec, 8, Split::testA);
    cfg_ = synthetic_config(root_ / "data", root_ / "run");
    result_ = train(cfg_);
  }
  static void TearDownTestSuite() { fs::remove_all(root_); }

  static fs::path root_;
  static ExperimentConfig cfg_;
  static TrainResult result_;
};

fs::path Pipeline::root_;
ExperimentConfig Pipeline::cfg_;
TrainResult Pipeline::result_;

class TempDir : public ::testing::Test {
 protected:
  void SetUp() override {
    const auto* info = ::testing::UnitTest::GetInstance()->current_test_info();
    dir_ = fs::temp_directory_path() /
           ("glandseg_" + std::string(info->test_suite_name()) + "_" + info->name() + "_" + std::to_string(::getpid()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path dir_;
};

}  // namespace

// ---------------------------------------------------------------- config

TEST(Config, DefaultsValidate) {
  const ExperimentConfig cfg;
  EXPECT_NO_THROW(cfg.validate());
  EXPECT_EQ(cfg.network_config().in_channels, 1u);
  EXPECT_EQ(cfg.augment_spec().expansion_factor(), 48u);
  EXPECT_EQ(cfg.learning_rate, 1e-3);
  EXPECT_EQ(cfg.batch_size, 4u);
  EXPECT_EQ(cfg.epochs, 100u);
}

TEST(Config, ParseCommentsAndValues) {
  const auto cfg = ExperimentConfig::parse("# comment\n\n loss = L2   # trailing\ninput_mode = rgb\nmin_area=7\n");
  EXPECT_EQ(cfg.loss, LossKind::L2);
  EXPECT_EQ(cfg.input_mode, InputMode::rgb);
  EXPECT_EQ(cfg.postprocess.min_area, 7u);
  EXPECT_EQ(cfg.network_config().in_channels, 3u);
}

TEST(Config, PresetAppliesBeforeWidthOverrides) {
  const auto cfg = ExperimentConfig::parse("stem_channels = 12\npreset = tiny\n");
  EXPECT_EQ(cfg.network.stem_channels, 12u);
  EXPECT_EQ(cfg.network.encoder_channels, NetworkConfig::tiny().encoder_channels);
}

TEST(Config, SerializeRoundTrip) {
  auto cfg = ExperimentConfig::parse("preset = tiny\nloss = L1\nunsharp_sigma = 1.25\nstain_eosin = 0.1, 0.9, 0.2\n");
  const auto again = ExperimentConfig::parse(cfg.serialize());
  EXPECT_EQ(again.serialize(), cfg.serialize());
  for (const auto& k : ExperimentConfig::keys()) EXPECT_EQ(again.get(k.name), cfg.get(k.name)) << k.name;
}

TEST(Config, Errors) {
  EXPECT_THROW(ExperimentConfig::parse("no_such_key = 1\n"), ConfigError);
  EXPECT_THROW(ExperimentConfig::parse("loss\n"), ConfigError);
  EXPECT_THROW(ExperimentConfig::parse("batch_size = many\n"), ConfigError);
  EXPECT_THROW(ExperimentConfig::parse("input_mode = infrared\n"), ConfigError);
  EXPECT_THROW(ExperimentConfig::load("/nonexistent/glandseg.cfg"), ConfigError);
  auto bad = [](const std::string& text) { ExperimentConfig::parse(text).validate(); };
  EXPECT_THROW(bad("resize_width = 100\nresize_height = 64\n"), ConfigError);
  EXPECT_THROW(bad("resize_width = 0\n"), ConfigError);
  EXPECT_THROW(bad("learning_rate = -1\n"), ConfigError);
  EXPECT_THROW(bad("batch_size = 0\n"), ConfigError);
  EXPECT_THROW(bad("coarse_tap = 3\n"), ConfigError);
  EXPECT_NO_THROW(bad("learning_rate = 0\n"));
}

TEST(Config, ErrorNamesOrigin) {
  try {
    ExperimentConfig::parse("seed = 1\nbogus\n", "my.cfg");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("my.cfg:2"), std::string::npos) << e.what();
  }
}

TEST(Config, NetworkMismatches) {
  const ExperimentConfig a = ExperimentConfig::parse("preset = tiny\n");
  ExperimentConfig b = a;
  b.postprocess.min_area = 3;
  EXPECT_TRUE(a.network_mismatches(b).empty());
  b.input_mode = InputMode::rgb;
  b.network.coarse_tap = 8;
  EXPECT_EQ(a.network_mismatches(b), (std::vector<std::string>{"input_mode", "coarse_tap"}));
}

// ---------------------------------------------------------------- io

TEST_F(TempDir, RgbRoundTrip) {
  ImageRGB img(5, 7);
  for (std::size_t i = 0; i < img.size(); ++i)
    img[i] = {static_cast<std::uint8_t>(i * 7), static_cast<std::uint8_t>(255 - i), static_cast<std::uint8_t>(i * 31)};
  for (const char* ext : {".png", ".bmp"}) {
    io::write_rgb(dir_ / (std::string("x") + ext), img);
    EXPECT_EQ(io::read_rgb(dir_ / (std::string("x") + ext)), img) << ext;
  }
}

TEST_F(TempDir, LabelRoundTrip) {
  LabeledMask m(3, 4, 0);
  m(0, 0) = 1;
  m(1, 2) = 300;
  m(2, 3) = 65535;
  io::write_labels(dir_ / "sub" / "l.png", m);
  EXPECT_EQ(io::read_labels(dir_ / "sub" / "l.png"), m);
  m(0, 1) = 65536;
  EXPECT_THROW(io::write_labels(dir_ / "big.png", m), io::IoError);
}

TEST_F(TempDir, ProbabilityMapRoundTrip) {
  ProbabilityMap p(3, 5);
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = static_cast<float>(i) / 7.0f;
  io::write_probability_map(dir_ / "p.bin", p);
  EXPECT_EQ(io::read_probability_map(dir_ / "p.bin"), p);
  EXPECT_EQ(slurp(dir_ / "p.bin").substr(0, 4), "GSPM");
  EXPECT_EQ(fs::file_size(dir_ / "p.bin"), 16u + 15u * 4u);
}

TEST_F(TempDir, MissingImageNamesPath) {
  try {
    io::read_rgb(dir_ / "absent.png");
    FAIL();
  } catch (const io::IoError& e) {
    EXPECT_NE(std::string(e.what()).find("absent.png"), std::string::npos);
  }
}

// ---------------------------------------------------------------- dataset

TEST_F(TempDir, DatasetIndexesPairs) {
  SyntheticSpec spec;
  generate_synthetic(dir_, spec, 2, Split::train);
  generate_synthetic(dir_, spec, 1, Split::testB, 5);
  std::ofstream(dir_ / "notes.txt") << "ignored";
  const auto index = load_dataset(dir_);
  EXPECT_EQ(index.count(Split::train), 2u);
  EXPECT_EQ(index.count(Split::testA), 0u);
  ASSERT_EQ(index.count(Split::testB), 1u);
  EXPECT_EQ(index.split(Split::testB)[0].name(), "testB_5");
  EXPECT_EQ(index.split(Split::train)[1].index, 2u);
}

TEST_F(TempDir, DatasetErrorsNameTheFile) {
  auto expect_error = [&](const std::string& needle) {
    try {
      load_dataset(dir_);
      FAIL() << "expected an error mentioning " << needle;
    } catch (const DatasetError& e) {
      EXPECT_NE(std::string(e.what()).find(needle), std::string::npos) << e.what();
    }
  };
  SyntheticSpec spec;
  generate_synthetic(dir_, spec, 1, Split::train);
  io::write_rgb(dir_ / "train_2.png", ImageRGB(64, 64, Rgb{255, 255, 255}));
  expect_error("train_2.png");
  io::write_labels(dir_ / "train_2_anno.png", LabeledMask(32, 64, 0));
  expect_error("train_2");
  fs::remove(dir_ / "train_2.png");
  expect_error("train_2_anno.png");
  fs::remove(dir_ / "train_2_anno.png");
  EXPECT_NO_THROW(load_dataset(dir_));
  EXPECT_THROW(load_dataset(dir_ / "missing"), DatasetError);
}

TEST(Dataset, StackPadsToMultiplesOf32) {
  const Planes p{GrayImage(40, 33, 1.0f)};
  const BinaryMask m(40, 33, 1);
  const auto x = stack_planes({&p, &p});
  EXPECT_EQ(x.shape(), (Shape{2, 1, 64, 64}));
  EXPECT_EQ(x.data()[0], 1.0f);
  EXPECT_EQ(x.data()[32], 1.0f);
  EXPECT_EQ(x.data()[33], 0.0f);
  EXPECT_EQ(x.data()[40 * 64], 0.0f);
  const auto t = stack_masks({&m});
  EXPECT_EQ(t.shape(), (Shape{1, 1, 64, 64}));
  EXPECT_EQ(t.sum(), 40.0f * 33.0f);
}

TEST(Dataset, PlanesFollowInputMode) {
  ImageRGB img(40, 70, Rgb{200, 120, 180});
  img(3, 3) = {40, 30, 120};
  ExperimentConfig cfg;
  cfg.resize_width = 64;
  cfg.resize_height = 32;
  cfg.input_mode = InputMode::rgb;
  auto planes = prepare_planes(img, cfg);
  ASSERT_EQ(planes.size(), 3u);
  EXPECT_EQ(planes[0].cols(), 64u);
  EXPECT_EQ(planes[0].rows(), 32u);
  cfg.input_mode = InputMode::hematoxylin_unsharp;
  planes = prepare_planes(img, cfg);
  ASSERT_EQ(planes.size(), 1u);
  for (float v : planes[0].values()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
  const auto target = prepare_target(LabeledMask(40, 70, 2), cfg);
  EXPECT_EQ(target, BinaryMask(32, 64, 1));
}

// ---------------------------------------------------------------- synthetic

TEST(Synthetic, FixedGlandCount) {
  SyntheticSpec spec;
  spec.glands_min = spec.glands_max = 3;
  for (std::size_t i = 1; i <= 5; ++i) {
    const auto s = generate_synthetic_image(spec, 0, i);
    std::set<std::uint32_t> labels(s.labels.values().begin(), s.labels.values().end());
    EXPECT_EQ(labels, (std::set<std::uint32_t>{0, 1, 2, 3}));
  }
}

TEST_F(TempDir, SyntheticIsByteDeterministic) {
  SyntheticSpec spec;
  generate_synthetic(dir_ / "a", spec, 3, Split::train);
  generate_synthetic(dir_ / "b", spec, 3, Split::train);
  for (const auto& entry : fs::directory_iterator(dir_ / "a"))
    EXPECT_EQ(slurp(entry.path()), slurp(dir_ / "b" / entry.path().filename())) << entry.path();
  spec.seed = 8;
  generate_synthetic(dir_ / "c", spec, 1, Split::train);
  EXPECT_NE(slurp(dir_ / "a" / "train_1.png"), slurp(dir_ / "c" / "train_1.png"));
}

TEST(Synthetic, GlandsAreHematoxylinRich) {
  SyntheticSpec spec;
  for (std::size_t i = 1; i <= 10; ++i) {
    const auto s = generate_synthetic_image(spec, 0, i);
    const auto h = hematoxylin_channel(s.image);
    double in = 0, out = 0;
    std::size_t n_in = 0, n_out = 0;
    for (std::size_t k = 0; k < h.size(); ++k) {
      if (s.labels[k]) {
        in += h[k];
        ++n_in;
      } else {
        out += h[k];
        ++n_out;
      }
    }
    ASSERT_GT(n_in, 0u);
    EXPECT_GT(in / n_in, out / n_out) << "image " << i;
  }
}

TEST(Synthetic, AnnotationSurvivesPostprocessing) {
  SyntheticSpec spec;
  PostprocessParams p;
  p.min_area = 40;
  for (std::size_t i = 1; i <= 10; ++i) {
    const auto s = generate_synthetic_image(spec, 1, i);
    ProbabilityMap map(s.labels.rows(), s.labels.cols());
    for (std::size_t k = 0; k < map.size(); ++k) map[k] = s.labels[k] ? 1.0f : 0.0f;
    // Generated labels follow placement order, so compare foreground and object count.
    const auto out = postprocess_pipeline(map, p, map.cols(), map.rows());
    EXPECT_EQ(foreground(out), foreground(s.labels)) << "image " << i;
    EXPECT_EQ(max_label(out), max_label(s.labels)) << "image " << i;
  }
}

TEST(Synthetic, InvalidSpec) {
  SyntheticSpec spec;
  spec.glands_min = 5;
  spec.glands_max = 2;
  EXPECT_THROW(spec.validate(), std::invalid_argument);
}

// ---------------------------------------------------------------- optimizer

TEST(Adam, FirstStepMovesByLearningRate) {
  auto w = Tensor::from({3}, {1.0f, -2.0f, 0.5f});
  w.set_requires_grad();
  Adam adam({{"w", w}}, {0.01, 0.9, 0.999, 1e-8});
  auto g = w.mutable_grad();
  g[0] = 4.0f;
  g[1] = -0.25f;
  g[2] = 0.0f;
  adam.step();
  EXPECT_NEAR(w.data()[0], 0.99f, 1e-6);
  EXPECT_NEAR(w.data()[1], -1.99f, 1e-6);
  EXPECT_EQ(w.data()[2], 0.5f);
  EXPECT_EQ(adam.steps(), 1u);
  EXPECT_NEAR(adam.first_moment(0)[0], 0.4f, 1e-6);
  EXPECT_NEAR(adam.second_moment(0)[0], 0.016f, 1e-6);
}

TEST(Adam, RestoreChecksSizes) {
  auto w = Tensor::zeros({2});
  Adam adam({{"w", w}}, {});
  EXPECT_THROW(adam.restore(1, {{0.0f}}, {{0.0f, 0.0f}}), std::invalid_argument);
  adam.restore(7, {{1.0f, 2.0f}}, {{3.0f, 4.0f}});
  EXPECT_EQ(adam.steps(), 7u);
  EXPECT_EQ(adam.first_moment(0)[1], 2.0f);
}

// ---------------------------------------------------------------- training

TEST_F(Pipeline, TrainingCurveDrops) {
  ASSERT_EQ(result_.steps, 300u);
  ASSERT_EQ(result_.history.size(), 300u);
  double early = 0;
  for (std::size_t i = 0; i < 10; ++i) early += result_.history[i].l_final / 10.0;
  EXPECT_LT(result_.history.back().l_final, early);
  for (const auto& v : result_.history) {
    EXPECT_NEAR(v.l_final, 2 * v.l_i + v.l_o, 1e-4);
    EXPECT_TRUE(std::isfinite(v.l_final));
  }
}

TEST_F(Pipeline, TrainingLogAndCheckpointWritten) {
  std::ifstream log(result_.log);
  std::string line;
  std::getline(log, line);
  EXPECT_EQ(line, kTrainLogHeader);
  std::size_t rows = 0;
  while (std::getline(log, line)) ++rows;
  EXPECT_EQ(rows, 300u);
  const auto ck = load_checkpoint(result_.checkpoint);
  EXPECT_EQ(ck.step, 300u);
  EXPECT_EQ(ck.adam_step, 300u);
  EXPECT_EQ(ck.config.serialize(), cfg_.serialize());
  EXPECT_EQ(slurp(result_.checkpoint).substr(0, 8), "GLANDSEG");
}

TEST_F(Pipeline, CheckpointRoundTripIsBitIdentical) {
  Trainer trainer(cfg_, load_training_images(load_dataset(cfg_.data_dir), cfg_));
  for (int i = 0; i < 3; ++i) trainer.step();
  const auto path = root_ / "roundtrip.bin";
  save_checkpoint(path, trainer.checkpoint());
  const auto loaded = load_checkpoint(path);
  auto net = network_from_checkpoint(loaded);
  const auto x = Tensor::uniform({2, 1, 64, 64}, 3, 0, 1);
  const auto a = trainer.network().forward(x, Mode::eval), b = net.forward(x, Mode::eval);
  EXPECT_EQ(values(a.final), values(b.final));
  EXPECT_EQ(values(a.coarse), values(b.coarse));

  Adam adam(net.parameters(), {});
  restore_optimizer(loaded, adam);
  EXPECT_EQ(adam.steps(), 3u);
  for (std::size_t k = 0; k < adam.parameters().size(); ++k) {
    EXPECT_EQ(adam.first_moment(k), trainer.optimizer().first_moment(k));
    EXPECT_EQ(adam.second_moment(k), trainer.optimizer().second_moment(k));
  }
  save_checkpoint(root_ / "roundtrip2.bin", loaded);
  EXPECT_EQ(slurp(path), slurp(root_ / "roundtrip2.bin"));
}

TEST_F(Pipeline, CorruptCheckpointIsRejected) {
  const auto bytes = slurp(result_.checkpoint);
  const auto truncated = root_ / "truncated.bin";
  std::ofstream(truncated, std::ios::binary) << bytes.substr(0, bytes.size() / 2);
  EXPECT_THROW(load_checkpoint(truncated), CheckpointError);
  const auto garbage = root_ / "garbage.bin";
  std::ofstream(garbage, std::ios::binary) << "NOTACKPT" << bytes.substr(8);
  EXPECT_THROW(load_checkpoint(garbage), CheckpointError);
  EXPECT_THROW(load_checkpoint(root_ / "absent.bin"), std::runtime_error);
}

TEST_F(Pipeline, ZeroLearningRateKeepsParameters) {
  auto cfg = cfg_;
  cfg.learning_rate = 0;
  cfg.batch_size = 1;
  auto images = load_training_images(load_dataset(cfg.data_dir), cfg);
  images.resize(1);
  Trainer trainer(cfg, std::move(images));
  std::vector<std::vector<float>> before;
  for (const auto& [n, p] : trainer.network().parameters()) before.push_back(values(p));
  trainer.step();
  for (std::size_t k = 0; k < before.size(); ++k) EXPECT_EQ(values(trainer.network().parameters()[k].second), before[k]);
}

TEST_F(Pipeline, TinyLearningRateIsMonotoneOnOneBatch) {
  auto cfg = cfg_;
  cfg.learning_rate = 1e-5;
  cfg.augment_transforms = "identity";
  auto images = load_training_images(load_dataset(cfg.data_dir), cfg);
  images.resize(4);
  Trainer trainer(cfg, std::move(images));
  ASSERT_EQ(trainer.batches_per_epoch(), 1u);
  double prev = trainer.step().l_final;
  for (int i = 0; i < 9; ++i) {
    const double now = trainer.step().l_final;
    EXPECT_LE(now, prev) << "step " << i + 2;
    prev = now;
  }
}

TEST_F(Pipeline, TrainingIsDeterministic) {
  auto cfg = cfg_;
  cfg.max_steps = 12;
  cfg.out_dir = (root_ / "det1").string();
  const auto a = train(cfg);
  cfg.out_dir = (root_ / "det2").string();
  const auto b = train(cfg);
  // The stored config differs only in out_dir; compare everything after it.
  const auto ca = load_checkpoint(a.checkpoint), cb = load_checkpoint(b.checkpoint);
  EXPECT_EQ(ca.rng_state, cb.rng_state);
  ASSERT_EQ(ca.tensors.size(), cb.tensors.size());
  for (std::size_t i = 0; i < ca.tensors.size(); ++i) {
    EXPECT_EQ(ca.tensors[i].name, cb.tensors[i].name);
    EXPECT_EQ(ca.tensors[i].values, cb.tensors[i].values) << ca.tensors[i].name;
  }
  EXPECT_EQ(slurp(a.log), slurp(b.log));
}

TEST_F(Pipeline, PeriodicCheckpoints) {
  auto cfg = cfg_;
  cfg.max_steps = 6;
  cfg.checkpoint_every = 2;
  cfg.out_dir = (root_ / "periodic").string();
  train(cfg);
  EXPECT_TRUE(fs::exists(root_ / "periodic" / "checkpoint_step2.bin"));
  EXPECT_TRUE(fs::exists(root_ / "periodic" / "checkpoint_step4.bin"));
  EXPECT_FALSE(fs::exists(root_ / "periodic" / "checkpoint_step6.bin"));
  EXPECT_EQ(load_checkpoint(root_ / "periodic" / "checkpoint_step4.bin").step, 4u);
}

TEST_F(Pipeline, DivergenceReportsStep) {
  auto cfg = cfg_;
  cfg.learning_rate = 1e30;
  cfg.max_steps = 20;
  cfg.out_dir = (root_ / "diverge").string();
  try {
    train(cfg);
    FAIL() << "expected divergence";
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("non-finite loss at step "), std::string::npos) << e.what();
  }
}

TEST_F(TempDir, EmptyTrainingSetIsAnError) {
  SyntheticSpec spec;
  generate_synthetic(dir_, spec, 1, Split::testA);
  auto cfg = synthetic_config(dir_, dir_ / "out");
  EXPECT_THROW(train(cfg), TrainingError);
}

// ---------------------------------------------------------------- evaluation

TEST_F(Pipeline, OracleEvaluationIsPerfect) {
  auto cfg = cfg_;
  cfg.out_dir = (root_ / "oracle").string();
  for (auto split : {Split::train, Split::testA}) {
    const auto res = evaluate(cfg, std::nullopt, split, true);
    for (const auto& m : res.report.images) {
      EXPECT_EQ(m.object_dice, 1.0) << m.name;
      EXPECT_EQ(m.f1, 1.0) << m.name;
      EXPECT_EQ(m.object_hausdorff, 0.0) << m.name;
    }
  }
}

TEST_F(Pipeline, EvaluationReports) {
  const auto res = evaluate(cfg_, result_.checkpoint, Split::testA);
  ASSERT_EQ(res.report.images.size(), 8u);
  EXPECT_GE(res.report.mean.object_dice, 0.8);
  EXPECT_GE(res.report.mean.f1, 0.8);
  std::ifstream csv(res.csv);
  std::string line;
  std::vector<std::string> lines;
  while (std::getline(csv, line)) lines.push_back(line);
  ASSERT_EQ(lines.size(), 10u);
  EXPECT_EQ(lines.front(), kReportHeader);
  EXPECT_EQ(lines.back().rfind("mean,", 0), 0u);
  const auto doc = nlohmann::json::parse(slurp(res.json));
  EXPECT_EQ(doc["split"], "testA");
  EXPECT_EQ(doc["images"].size(), 8u);
  EXPECT_DOUBLE_EQ(doc["aggregate"]["object_dice"].get<double>(), res.report.mean.object_dice);
}

TEST_F(Pipeline, ParallelEvaluationMatchesSerial) {
  const auto serial = evaluate(cfg_, result_.checkpoint, Split::testA);
  ::setenv("GLANDSEG_THREADS", "3", 1);
  const auto parallel = evaluate(cfg_, result_.checkpoint, Split::testA);
  ::unsetenv("GLANDSEG_THREADS");
  ASSERT_EQ(serial.report.images.size(), parallel.report.images.size());
  for (std::size_t i = 0; i < serial.report.images.size(); ++i) {
    EXPECT_EQ(serial.report.images[i].name, parallel.report.images[i].name);
    EXPECT_EQ(serial.report.images[i].object_dice, parallel.report.images[i].object_dice);
    EXPECT_EQ(serial.report.images[i].object_hausdorff, parallel.report.images[i].object_hausdorff);
  }
}

TEST_F(Pipeline, CheckpointConfigMismatch) {
  auto cfg = cfg_;
  cfg.input_mode = InputMode::rgb;
  try {
    evaluate(cfg, result_.checkpoint, Split::testA);
    FAIL();
  } catch (const EvaluationError& e) {
    EXPECT_NE(std::string(e.what()).find("mismatch on input_mode"), std::string::npos) << e.what();
  }
}

TEST_F(Pipeline, MissingSplit) {
  EXPECT_THROW(evaluate(cfg_, result_.checkpoint, Split::testB), EvaluationError);
}

// ---------------------------------------------------------------- segment

TEST_F(Pipeline, SegmentKeepsImageSizeAndIsDeterministic) {
  const auto sample = generate_synthetic_image(SyntheticSpec{}, 2, 1);
  ImageRGB img(50, 70, Rgb{230, 200, 220});
  for (std::size_t r = 0; r < 50; ++r)
    for (std::size_t c = 0; c < 64; ++c) img(r, c) = sample.image(r, c);
  io::write_rgb(root_ / "odd.png", img);
  const auto a = segment(cfg_, result_.checkpoint, root_ / "odd.png", root_ / "odd_a.png", root_ / "odd_prob.bin");
  segment(cfg_, result_.checkpoint, root_ / "odd.png", root_ / "odd_b.png");
  EXPECT_EQ(a.labels.rows(), 50u);
  EXPECT_EQ(a.labels.cols(), 70u);
  EXPECT_EQ(slurp(root_ / "odd_a.png"), slurp(root_ / "odd_b.png"));
  EXPECT_EQ(io::read_labels(root_ / "odd_a.png"), a.labels);
  EXPECT_EQ(io::read_probability_map(root_ / "odd_prob.bin"), a.probability);
}

TEST_F(Pipeline, BlankWhiteImageGivesEmptyMask) {
  io::write_rgb(root_ / "white.png", ImageRGB(64, 64, Rgb{255, 255, 255}));
  const auto res = segment(cfg_, result_.checkpoint, root_ / "white.png", root_ / "white_labels.png");
  EXPECT_EQ(max_label(res.labels), 0u);
}
