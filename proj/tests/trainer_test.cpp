#include <random>

#include <gtest/gtest.h>

#include "fdan/synth.hpp"
#include "fdan/trainer.hpp"
#include "test_support.hpp"

namespace fdan {
namespace {

using testing::random_matrix;

Architecture small_arch() {
  Architecture a;
  a.width = 8;
  a.hidden = 16;
  a.layers = 2;
  return a;
}

struct SynthTask {
  FeatureDomain source, target_train, target_test;
};

SynthTask synth_task(std::uint64_t seed, std::size_t per_class = 60) {
  SynthSpec s;
  s.seed = seed;
  s.samples_per_class = per_class;
  auto [visual, acoustic] = synth_domains(s);
  auto [train, test] = stratified_split(acoustic, 0.8, seed);
  return {std::move(visual), std::move(train), std::move(test)};
}

TEST(SgdMomentum, Examples) {
  Matrix p{{1.0}}, v{{0.0}};
  sgd_momentum_step(p, Matrix{{2.0}}, v, 0.1, 0.9, 0.0);
  EXPECT_DOUBLE_EQ(p(0, 0), 0.8);
  EXPECT_DOUBLE_EQ(v(0, 0), 2.0);

  Matrix q{{3.0}}, inertia{{4.0}};
  sgd_momentum_step(q, Matrix{{0.0}}, inertia, 0.5, 0.25, 0.0);
  EXPECT_DOUBLE_EQ(q(0, 0), 3.0 - 0.5 * 0.25 * 4.0);

  // Constant gradient, lr 1: displacement after two steps is g + (0.99 g + g).
  Matrix r{{0.0}}, w{{0.0}};
  sgd_momentum_step(r, Matrix{{1.0}}, w, 1.0, 0.99, 0.0);
  sgd_momentum_step(r, Matrix{{1.0}}, w, 1.0, 0.99, 0.0);
  EXPECT_DOUBLE_EQ(-r(0, 0), 2.99);
}

TEST(SgdMomentum, DecayIsAddedToGradient) {
  Matrix p{{2.0}}, v{{0.0}};
  sgd_momentum_step(p, Matrix{{0.0}}, v, 1.0, 0.0, 0.5);
  EXPECT_DOUBLE_EQ(p(0, 0), 1.0);
}

TEST(SgdMomentum, ShapeMismatchIsShapeError) {
  Matrix p(2, 2), v(2, 2);
  EXPECT_THROW(sgd_momentum_step(p, Matrix(2, 3), v, 1.0, 0.0, 0.0), ShapeError);
}

TEST(BatchStream, EveryPassIsAPermutation) {
  BatchStream s(7, 42);
  for (int pass = 0; pass < 3; ++pass) {
    auto idx = s.next(7);
    std::sort(idx.begin(), idx.end());
    for (std::size_t i = 0; i < 7; ++i) EXPECT_EQ(idx[i], i);
  }
}

TEST(TrainConfig, RejectsInvalidSettings) {
  TrainConfig c;
  c.momentum = 1.0;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.alpha = -1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = {};
  c.epochs = 0;
  EXPECT_THROW(c.validate(), ConfigError);
  EXPECT_THROW(parse_ablation("half"), ConfigError);
  EXPECT_EQ(parse_ablation("no-lmmd"), Ablation::kNoLmmd);
}

TEST(Train, ZeroLearningRateLeavesInitialization) {
  const SynthTask task = synth_task(1, 10);
  TrainConfig c;
  c.epochs = 1;
  c.learning_rate = 0.0;
  const TrainResult r = train(c, task.source, task.target_train, task.target_test, small_arch());
  Architecture a = small_arch();
  a.input_visual = a.input_acoustic = 16;
  a.classes = 3;
  EXPECT_EQ(r.model, init_model(a, c.seed));
  ASSERT_EQ(r.history.epochs.size(), 1u);
}

TEST(Train, FixedSeedIsBitReproducible) {
  const SynthTask task = synth_task(2, 20);
  TrainConfig c;
  c.epochs = 3;
  c.learning_rate = 1e-3;
  const TrainResult a = train(c, task.source, task.target_train, task.target_test, small_arch());
  const TrainResult b = train(c, task.source, task.target_train, task.target_test, small_arch());
  EXPECT_EQ(a.history, b.history);
  EXPECT_EQ(a.model, b.model);
  EXPECT_EQ(format_history(a.history), format_history(b.history));
  c.seed = 3;
  EXPECT_FALSE(train(c, task.source, task.target_train, task.target_test, small_arch()).history ==
               a.history);
}

TEST(Train, NoLmmdStillRecordsTheComponent) {
  const SynthTask task = synth_task(3, 10);
  TrainConfig c;
  c.epochs = 1;
  c.ablation = Ablation::kNoLmmd;
  const TrainResult r = train(c, task.source, task.target_train, task.target_test, small_arch());
  const EpochRecord& e = r.history.epochs.front();
  EXPECT_GT(e.lmmd_sum, 0.0);
  EXPECT_NEAR(e.total, e.ce_visual + e.ce_acoustic, 1e-12);
}

TEST(Train, ClassCountMismatchIsConfigError) {
  SynthTask task = synth_task(4, 10);
  SynthSpec four;
  four.classes = 4;
  four.samples_per_class = 10;
  const FeatureDomain other = synth_domains(four).first;
  EXPECT_THROW(train(TrainConfig{}, other, task.target_train, task.target_test, small_arch()),
               ConfigError);
}

TEST(Train, NonFiniteLossIsDivergence) {
  SynthTask task = synth_task(5, 10);
  TrainConfig c;
  c.epochs = 50;
  c.learning_rate = 1e6;
  c.momentum = 0.0;
  try {
    train(c, task.source, task.target_train, task.target_test, small_arch());
    FAIL() << "expected divergence";
  } catch (const DivergenceError& e) {
    EXPECT_GE(e.epoch(), 1u);
    EXPECT_GE(e.step(), 1u);
  }
}

TEST(Train, SeparateHeadsIsolateTheAcousticPath) {
  const SynthTask task = synth_task(6, 20);
  FeatureDomain other_source = task.source;
  std::mt19937_64 gen(6);
  other_source.features = random_matrix(other_source.size(), other_source.width(), gen, -3, 3);

  TrainConfig c;
  c.epochs = 3;
  c.learning_rate = 1e-3;
  c.alpha = 0.0;
  c.ablation = Ablation::kNoAttention;
  auto acoustic_path = [](const ModelParams& p) {
    std::vector<Matrix> out{p.tensors.input_acoustic.weight, p.tensors.input_acoustic.bias};
    for (const auto& layer : p.tensors.layers) layer.acoustic.for_each([&](const Matrix& m) {
      out.push_back(m);
    });
    const Affine<Matrix>& head = p.tensors.head(Modality::kAcoustic);
    out.push_back(head.weight);
    out.push_back(head.bias);
    return out;
  };

  Architecture separate = small_arch();
  separate.shared_classifier = false;
  const auto a = train(c, task.source, task.target_train, task.target_test, separate);
  const auto b = train(c, other_source, task.target_train, task.target_test, separate);
  EXPECT_EQ(acoustic_path(a.model), acoustic_path(b.model));
  EXPECT_FALSE(a.model.tensors.classifier.weight == b.model.tensors.classifier.weight);

  // With the shared head the visual data reaches the acoustic path.
  const auto sa = train(c, task.source, task.target_train, task.target_test, small_arch());
  const auto sb = train(c, other_source, task.target_train, task.target_test, small_arch());
  EXPECT_NE(acoustic_path(sa.model), acoustic_path(sb.model));
}

TEST(Train, LossFallsOnTheSyntheticTask) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const SynthTask task = synth_task(seed);
    TrainConfig c;
    c.seed = seed;
    c.epochs = 50;
    const TrainResult r = train(c, task.source, task.target_train, task.target_test, Architecture{});
    EXPECT_LT(r.history.epochs.back().total, r.history.epochs.front().total) << "seed " << seed;
  }
}

TEST(Evaluate, PerfectPredictorScoresOne) {
  std::mt19937_64 gen(7);
  Architecture a = small_arch();
  a.input_visual = a.input_acoustic = 4;
  a.classes = 3;
  const ModelParams p = init_model(a, 7);
  const Matrix x = random_matrix(30, 4, gen, -3, 3);
  const Matrix logits = infer(p, x, Modality::kAcoustic).logits;
  std::vector<std::size_t> labels(30);
  for (std::size_t r = 0; r < 30; ++r) labels[r] = argmax(logits.row(r));
  const MetricsReport m = evaluate(p, make_domain(x, labels, 3, Modality::kAcoustic), Modality::kAcoustic);
  EXPECT_EQ(m.war, 1.0);
  EXPECT_EQ(m.uar, 1.0);
  EXPECT_NEAR(m.w_f1, 1.0, 1e-12);
}

TEST(Evaluate, ConstantPredictorOnBalancedSevenClasses) {
  std::mt19937_64 gen(8);
  Architecture a = small_arch();
  a.input_visual = a.input_acoustic = 4;
  a.classes = 7;
  ModelParams p = init_model(a, 8);
  p.tensors.classifier.weight = Matrix(8, 7);
  p.tensors.classifier.bias = Matrix(1, 7);
  p.tensors.classifier.bias(0, 2) = 5.0;
  std::vector<std::size_t> labels(70);
  for (std::size_t r = 0; r < 70; ++r) labels[r] = r % 7;
  const MetricsReport m = evaluate(
      p, make_domain(random_matrix(70, 4, gen), labels, 7, Modality::kVisual), Modality::kVisual);
  EXPECT_NEAR(m.war, 1.0 / 7.0, 1e-15);
  EXPECT_NEAR(m.uar, 1.0 / 7.0, 1e-15);
  EXPECT_EQ(m.confusion[4][2], 10u);
}

TEST(Evaluate, WidthMismatchIsShapeError) {
  Architecture a = small_arch();
  a.input_visual = a.input_acoustic = 4;
  a.classes = 3;
  const std::vector<std::size_t> labels{0, 1};
  EXPECT_THROW(evaluate(init_model(a, 1), make_domain(Matrix(2, 5), labels, 3, Modality::kVisual),
                        Modality::kVisual),
               ShapeError);
}

}  // namespace
}  // namespace fdan
