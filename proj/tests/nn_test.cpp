// Network layer: softmax/loss math, gradient correctness against finite
// differences, checkpoint round-trips, the architecture registry, and the
// leveled model-access gating.
#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "auditbench/nn/access.hpp"
#include "auditbench/nn/checkpoint.hpp"
#include "auditbench/nn/train.hpp"

using namespace auditbench;

namespace {

DatasetBundle tiny_corpus(std::uint64_t seed = 11) {
  return make_synthetic_bundle(3, 48, 1, 8, 8, seed, 0.15f, 0.3f);
}

std::shared_ptr<Network> tiny_net(std::uint64_t seed = 5) {
  auto net = std::shared_ptr<Network>(make_small_cnn(3, {1, 8, 8}, 0.5f));
  net->init(seed);
  return net;
}

// Cross-entropy at (x, y) computed in double from the float logits.
double ce_loss(Network& net, const Tensor& x, int y) {
  Tensor logits = net.forward_single(x, false);
  double mx = logits[0];
  for (float v : logits.data) mx = std::max(mx, double(v));
  double lse = 0.0;
  for (float v : logits.data) lse += std::exp(double(v) - mx);
  return mx + std::log(lse) - double(logits[std::size_t(y)]);
}

}  // namespace

TEST(Softmax, RowsNormalizeAndOrderPreserved) {
  Tensor logits({2, 3});
  logits.data = {1.0f, 2.0f, 3.0f, -1.0f, -1.0f, -1.0f};
  Tensor p = softmax(logits);
  EXPECT_NEAR(p[0] + p[1] + p[2], 1.0f, 1e-6f);
  EXPECT_LT(p[0], p[1]);
  EXPECT_LT(p[1], p[2]);
  for (int j = 3; j < 6; ++j) EXPECT_NEAR(p[std::size_t(j)], 1.0f / 3.0f, 1e-6f);
  // shift invariance
  Tensor shifted = logits;
  for (float& v : shifted.data) v += 100.0f;
  Tensor p2 = softmax(shifted);
  for (std::size_t i = 0; i < p.numel(); ++i) EXPECT_NEAR(p[i], p2[i], 1e-6f);
}

TEST(SoftmaxCeLossGrad, MatchesAnalyticForm) {
  Tensor logits({2, 3});
  logits.data = {0.5f, -0.25f, 1.5f, 2.0f, 0.0f, -1.0f};
  std::vector<int> labels{2, 0};
  Tensor grad;
  const float loss = softmax_ce_loss_grad(logits, labels, grad);
  const Tensor probs = softmax(logits);
  double expect_loss = 0.0;
  for (std::size_t i = 0; i < 2; ++i)
    expect_loss -= std::log(double(probs[i * 3 + std::size_t(labels[i])]));
  EXPECT_NEAR(loss, expect_loss / 2.0, 1e-6);
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t j = 0; j < 3; ++j) {
      const float onehot = int(j) == labels[i] ? 1.0f : 0.0f;
      EXPECT_NEAR(grad[i * 3 + j], (probs[i * 3 + j] - onehot) / 2.0f, 1e-6f);
    }
}

TEST(InputGradient, MatchesFiniteDifferencesAt1e3Relative) {
  auto net = tiny_net();
  NetworkClassifier clf(net);
  DatasetBundle data = tiny_corpus();
  Rng rng = make_rng(17);
  const float h = 1e-2f;
  for (int rep = 0; rep < 5; ++rep) {
    const Sample& s = data.samples[std::size_t(rep * 7)];
    const Tensor g = clf.input_gradient(s.image, s.label);
    ASSERT_EQ(g.shape, s.image.shape);
    ASSERT_TRUE(g.all_finite());
    // directional derivative check along random unit directions
    for (int dir = 0; dir < 4; ++dir) {
      Tensor v(s.image.shape);
      for (float& w : v.data) w = gaussian(rng, 0.0f, 1.0f);
      v *= 1.0f / v.l2_norm();
      Tensor xp = s.image, xm = s.image;
      for (std::size_t i = 0; i < v.numel(); ++i) {
        xp[i] += h * v[i];
        xm[i] -= h * v[i];
      }
      const double fd = (ce_loss(*net, xp, s.label) - ce_loss(*net, xm, s.label)) /
                        double(2.0f * h);
      const double analytic = double(dot(g, v));
      const double denom = std::max({std::fabs(fd), std::fabs(analytic), 1e-4});
      EXPECT_LT(std::fabs(fd - analytic) / denom, 1e-3)
          << "sample " << rep << " dir " << dir << " fd=" << fd
          << " analytic=" << analytic;
    }
  }
}

TEST(Training, LossDecreasesAndValidatesInputs) {
  DatasetBundle data = tiny_corpus();
  TrainConfig cfg;
  cfg.epochs = 8;
  cfg.batch_size = 16;
  cfg.learning_rate = 0.05;
  cfg.seed = 3;
  TrainReport rep;
  auto net = train_network(data, cfg, nullptr, &rep);
  ASSERT_EQ(rep.epoch_losses.size(), 8u);
  EXPECT_LT(rep.final_loss, rep.epoch_losses.front());
  EXPECT_GT(evaluate_accuracy(*net, data), 50.0);

  DatasetBundle empty;
  empty.class_count = 3;
  EXPECT_THROW(train_network(empty, cfg), std::invalid_argument);
  TrainConfig bad = cfg;
  bad.epochs = 0;
  EXPECT_THROW(train_network(data, bad), std::invalid_argument);
}

TEST(Training, DeterministicForFixedSeed) {
  DatasetBundle data = tiny_corpus();
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 16;
  cfg.seed = 9;
  auto a = train_network(data, cfg);
  auto b = train_network(data, cfg);
  const Tensor probe = data.samples[0].image;
  EXPECT_EQ(a->forward_single(probe).data, b->forward_single(probe).data);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  DatasetBundle data = tiny_corpus();
  TrainConfig cfg;
  cfg.epochs = 2;
  cfg.batch_size = 16;
  cfg.seed = 21;
  cfg.width_mult = 0.5f;
  auto net = train_network(data, cfg);
  const std::string path =
      (std::filesystem::temp_directory_path() / "auditbench_ckpt_test.bin").string();
  save_checkpoint(*net, cfg.width_mult, path);
  LoadedCheckpoint lc = load_checkpoint(path);
  EXPECT_EQ(lc.network->arch(), net->arch());
  EXPECT_EQ(lc.network->class_count(), net->class_count());
  EXPECT_FLOAT_EQ(lc.width_mult, 0.5f);
  for (const Sample& s : data.samples) {
    const Tensor a = net->forward_single(s.image);
    const Tensor b = lc.network->forward_single(s.image);
    EXPECT_EQ(a.data, b.data);
  }
  // corrupt the magic -> rejected
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.put('X');
  }
  EXPECT_THROW(load_checkpoint(path), std::runtime_error);
  std::filesystem::remove(path);
  EXPECT_THROW(load_checkpoint(path), std::runtime_error);
}

TEST(ArchitectureRegistry, BuildsEveryArchAndRejectsUnknown) {
  for (const char* arch : {"small_cnn", "resnet18", "resnet18_groupnorm", "mobilenet_v2"}) {
    auto net = make_network(arch, 4, {3, 8, 8}, 0.25f);
    net->init(1);
    Tensor x({3, 8, 8}, 0.5f);
    Tensor logits = net->forward_single(x);
    ASSERT_EQ(logits.numel(), 4u) << arch;
    EXPECT_TRUE(logits.all_finite()) << arch;
  }
  EXPECT_THROW(make_network("vgg16", 4, {3, 8, 8}), std::invalid_argument);
}

TEST(ModelAccess, GatesQueriesByLevel) {
  auto net = tiny_net();
  ModelAccess white = make_white_box(net);
  Tensor x({1, 8, 8}, 0.25f);

  EXPECT_EQ(white.level(), AccessLevel::white_box);
  EXPECT_NO_THROW(white.predict_probs(x));
  EXPECT_NO_THROW(white.predict_logits(x));
  EXPECT_NO_THROW(white.gradient(x, 0));
  EXPECT_NO_THROW(white.feature(x));

  ModelAccess logits = white.restrict(AccessLevel::logits);
  EXPECT_NO_THROW(logits.predict_probs(x));
  EXPECT_NO_THROW(logits.predict_logits(x));
  EXPECT_THROW(logits.gradient(x, 0), std::runtime_error);
  EXPECT_THROW(logits.feature(x), std::runtime_error);

  ModelAccess labels = logits.restrict(AccessLevel::label_only);
  EXPECT_NO_THROW(labels.predict_label(x));
  EXPECT_THROW(labels.predict_probs(x), std::runtime_error);
  EXPECT_THROW(labels.predict_logits(x), std::runtime_error);

  // escalation must be impossible
  EXPECT_THROW(labels.restrict(AccessLevel::logits), std::runtime_error);
  EXPECT_THROW(logits.restrict(AccessLevel::white_box), std::runtime_error);
}

TEST(ModelAccess, LogitsAndProbsAreConsistent) {
  auto net = tiny_net();
  NetworkClassifier clf(net);
  DatasetBundle data = tiny_corpus(13);
  for (int i = 0; i < 10; ++i) {
    const Tensor& x = data.samples[std::size_t(i)].image;
    const std::vector<float> logits = clf.predict_logits(x);
    const std::vector<float> probs = clf.predict_probs(x);
    Tensor lt({1, logits.size()});
    std::copy(logits.begin(), logits.end(), lt.data.begin());
    const Tensor sm = softmax(lt);
    for (std::size_t j = 0; j < probs.size(); ++j)
      EXPECT_NEAR(probs[j], sm[j], 1e-6f);
    // argmax agreement with the label surface
    ModelAccess white = make_white_box(net);
    const int label = white.predict_label(x);
    EXPECT_EQ(label, int(std::max_element(logits.begin(), logits.end()) -
                         logits.begin()));
  }
}

namespace {
// Query-only classifier with fixed probabilities, for the fallback path.
class FixedClassifier final : public Classifier {
 public:
  int class_count() const override { return 3; }
  std::vector<float> predict_probs(const Tensor&) override { return {0.2f, 0.5f, 0.3f}; }
};
}  // namespace

TEST(Classifier, DefaultLogitFallbackIsLogProbs) {
  FixedClassifier c;
  Tensor x({1, 2, 2});
  const std::vector<float> lg = c.predict_logits(x);
  EXPECT_NEAR(lg[0], std::log(0.2f), 1e-6f);
  EXPECT_NEAR(lg[1], std::log(0.5f), 1e-6f);
  EXPECT_NEAR(lg[2], std::log(0.3f), 1e-6f);
  EXPECT_THROW(c.input_gradient(x, 0), std::runtime_error);
  EXPECT_FALSE(c.supports_gradient());
}
