#include <gtest/gtest.h>

#include <cmath>
#include <cstdio>
#include <random>
#include <string>
#include <vector>

#include "tabfa/mlp.hpp"

using namespace tabfa;

namespace {

Schema blob_schema() {
  return Schema({{"u", FeatureKind::kContinuous, -50.0, 50.0, {}},
                 {"v", FeatureKind::kContinuous, -50.0, 50.0, {}}},
                "label", {"a", "b"});
}

// Two well-separated gaussian blobs, one per class.
Dataset make_blobs(size_t n, uint64_t seed) {
  Dataset d;
  d.schema = blob_schema();
  auto rng = make_rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  for (size_t i = 0; i < n; ++i) {
    int cls = static_cast<int>(i % 2);
    double cx = cls == 0 ? -6.0 : 6.0;
    double cy = cls == 0 ? 4.0 : -4.0;
    d.rows.push_back({cx + g(rng), cy + g(rng)});
    d.labels.push_back(cls);
  }
  return d;
}

Split full_split(size_t n, double test_fraction, uint64_t seed) {
  return make_split(n, test_fraction, seed);
}

std::string temp_path(const std::string& name) {
  return std::string("/tmp/tabfa_mlp_") + name;
}

}  // namespace

TEST(Mlp, ForwardIsDistribution) {
  auto m = MlpModel::make(4, 3, 2, 8, 7, 0);
  std::vector<double> x{0.3, -1.2, 2.0, 0.5};
  auto p = m.forward(x);
  ASSERT_EQ(p.size(), 3u);
  double sum = 0.0;
  for (double v : p) {
    EXPECT_GT(v, 0.0);
    sum += v;
  }
  EXPECT_NEAR(sum, 1.0, 1e-12);
}

TEST(Mlp, ZeroWeightsGiveUniformAndTieBreaksLow) {
  auto m = MlpModel::make(3, 4, 0, 0, 1, 0);
  m.set_layer(0, Eigen::MatrixXd::Zero(4, 3), Eigen::VectorXd::Zero(4));
  auto p = m.forward({1.0, 2.0, 3.0});
  for (double v : p) EXPECT_NEAR(v, 0.25, 1e-12);
  EXPECT_EQ(m.predict({1.0, 2.0, 3.0}), 0);

  Eigen::VectorXd b = Eigen::VectorXd::Zero(4);
  b(2) = 1.0;
  b(3) = 1.0;
  m.set_layer(0, Eigen::MatrixXd::Zero(4, 3), b);
  EXPECT_EQ(m.predict({0.0, 0.0, 0.0}), 2);
}

TEST(Mlp, SingleAffineLayerMatchesHandComputation) {
  auto m = MlpModel::make(1, 2, 0, 0, 3, 0);
  Eigen::MatrixXd w(2, 1);
  w << 2.0, -1.0;
  Eigen::VectorXd b(2);
  b << 0.5, -0.5;
  m.set_layer(0, w, b);
  Eigen::VectorXd mean(1), stdev(1);
  mean << 1.0;
  stdev << 2.0;
  m.set_normalization(mean, stdev);

  // x = 3 -> xn = 1 -> logits (2.5, -1.5)
  double l0 = 2.5, l1 = -1.5;
  double e0 = std::exp(l0), e1 = std::exp(l1);
  auto p = m.forward({3.0});
  EXPECT_NEAR(p[0], e0 / (e0 + e1), 1e-12);
  EXPECT_NEAR(p[1], e1 / (e0 + e1), 1e-12);
  EXPECT_EQ(m.predict({3.0}), 0);

  auto [loss, g] = m.loss_and_input_grad({3.0}, 1);
  EXPECT_NEAR(loss, -std::log(p[1]), 1e-12);
  // dlogits = (p0, p1 - 1); gx = (w0*p0 + w1*(p1-1)) / std
  double expect_g = (2.0 * p[0] + (-1.0) * (p[1] - 1.0)) / 2.0;
  ASSERT_EQ(g.size(), 1u);
  EXPECT_NEAR(g[0], expect_g, 1e-12);
}

TEST(Mlp, InputGradientMatchesCentralDifferences) {
  auto rng = make_rng(20260817);
  std::uniform_int_distribution<int> dim_d(5, 8);
  std::uniform_int_distribution<int> cls_d(2, 4);
  std::uniform_real_distribution<double> x_d(-3.0, 3.0);
  std::uniform_real_distribution<double> mean_d(-1.0, 1.0);
  std::uniform_real_distribution<double> std_d(0.5, 2.0);

  for (int trial = 0; trial < 100; ++trial) {
    int dim = dim_d(rng);
    int n_classes = cls_d(rng);
    auto m = MlpModel::make(dim, n_classes, 2, 16, rng(), 0);
    Eigen::VectorXd mean(dim), stdev(dim);
    for (int i = 0; i < dim; ++i) {
      mean(i) = mean_d(rng);
      stdev(i) = std_d(rng);
    }
    m.set_normalization(mean, stdev);

    std::vector<double> x(dim);
    for (int i = 0; i < dim; ++i) x[i] = x_d(rng);
    int y = static_cast<int>(rng() % static_cast<uint64_t>(n_classes));

    auto [loss, g] = m.loss_and_input_grad(x, y);
    ASSERT_TRUE(std::isfinite(loss));

    double num = 0.0, den = 1e-6;
    for (int i = 0; i < dim; ++i) {
      double h = 1e-6 * stdev(i);
      auto xp = x, xm = x;
      xp[i] += h;
      xm[i] -= h;
      double fd = (m.loss_and_input_grad(xp, y).first - m.loss_and_input_grad(xm, y).first) /
                  (2.0 * h);
      num = std::max(num, std::abs(g[i] - fd));
      den = std::max(den, std::max(std::abs(g[i]), std::abs(fd)));
    }
    EXPECT_LE(num / den, 1e-4) << "trial " << trial;
  }
}

TEST(Mlp, DoublingStdHalvesLinearInputGradient) {
  auto m = MlpModel::make(2, 2, 0, 0, 5, 0);
  Eigen::MatrixXd w(2, 2);
  w << 1.0, -2.0, 0.5, 1.5;
  m.set_layer(0, w, Eigen::VectorXd::Zero(2));
  Eigen::VectorXd mean = Eigen::VectorXd::Zero(2);
  Eigen::VectorXd s1 = Eigen::VectorXd::Ones(2);

  m.set_normalization(mean, s1);
  auto g1 = m.loss_and_input_grad({0.4, -0.7}, 1).second;
  m.set_normalization(mean, 2.0 * s1);
  auto g2 = m.loss_and_input_grad({0.8, -1.4}, 1).second;  // same normalized point
  for (size_t i = 0; i < g1.size(); ++i) EXPECT_NEAR(g2[i], 0.5 * g1[i], 1e-12);
}

TEST(Mlp, TrainsSeparableBlobs) {
  auto data = make_blobs(400, 11);
  auto split = full_split(data.rows.size(), 0.25, 11);
  TrainConfig cfg;
  cfg.hidden_layers = 2;
  cfg.hidden_width = 16;
  cfg.epochs = 60;
  cfg.batch_size = 64;
  cfg.learning_rate = 3e-3;
  cfg.seed = 11;
  TrainReport rep;
  auto model = train_mlp(data, split, cfg, &rep);
  EXPECT_GE(rep.train_accuracy, 0.99);
  EXPECT_GE(rep.test_accuracy, 0.99);
  EXPECT_TRUE(std::isfinite(rep.final_loss));
  EXPECT_EQ(rep.epochs, 60);
  EXPECT_EQ(model.input_dim(), 2u);
  EXPECT_EQ(model.n_classes(), 2u);
}

TEST(Mlp, TrainingIsDeterministic) {
  auto data = make_blobs(200, 3);
  auto split = full_split(data.rows.size(), 0.2, 3);
  TrainConfig cfg;
  cfg.hidden_layers = 1;
  cfg.hidden_width = 8;
  cfg.epochs = 10;
  cfg.batch_size = 32;
  cfg.seed = 99;
  TrainReport r1, r2;
  auto m1 = train_mlp(data, split, cfg, &r1);
  auto m2 = train_mlp(data, split, cfg, &r2);
  EXPECT_EQ(m1.to_json().dump(), m2.to_json().dump());
  EXPECT_EQ(r1.train_accuracy, r2.train_accuracy);
  EXPECT_EQ(r1.final_loss, r2.final_loss);

  cfg.seed = 100;
  auto m3 = train_mlp(data, split, cfg, nullptr);
  EXPECT_NE(m1.to_json().dump(), m3.to_json().dump());
}

TEST(Mlp, RejectsBadTrainingConfig) {
  auto data = make_blobs(50, 1);
  auto split = full_split(data.rows.size(), 0.2, 1);
  TrainConfig cfg;
  cfg.epochs = 0;
  EXPECT_THROW(train_mlp(data, split, cfg), ConfigError);
  cfg.epochs = 1;
  cfg.learning_rate = 0.0;
  EXPECT_THROW(train_mlp(data, split, cfg), ConfigError);
  cfg.learning_rate = 1e-3;
  cfg.batch_size = 0;
  EXPECT_THROW(train_mlp(data, split, cfg), ConfigError);
}

TEST(Mlp, DivergenceRaisesStageError) {
  auto data = make_blobs(100, 2);
  auto split = full_split(data.rows.size(), 0.1, 2);
  TrainConfig cfg;
  cfg.hidden_layers = 3;
  cfg.hidden_width = 8;
  cfg.epochs = 5;
  cfg.learning_rate = 1e200;
  cfg.seed = 2;
  EXPECT_THROW(train_mlp(data, split, cfg), StageError);
}

TEST(Mlp, CheckpointRoundTripAndSchemaGuard) {
  auto data = make_blobs(120, 7);
  auto split = full_split(data.rows.size(), 0.2, 7);
  TrainConfig cfg;
  cfg.hidden_layers = 1;
  cfg.hidden_width = 6;
  cfg.epochs = 5;
  cfg.batch_size = 32;
  cfg.seed = 7;
  auto model = train_mlp(data, split, cfg);

  auto path = temp_path("ckpt.json");
  model.save(path);
  auto loaded = MlpModel::load(path, data.schema);
  EXPECT_EQ(model.to_json().dump(), loaded.to_json().dump());
  for (size_t i = 0; i < 10; ++i) {
    auto enc = encode(data.schema, data.rows[i]);
    EXPECT_EQ(model.predict(enc), loaded.predict(enc));
    auto p1 = model.forward(enc);
    auto p2 = loaded.forward(enc);
    for (size_t k = 0; k < p1.size(); ++k) EXPECT_EQ(p1[k], p2[k]);
  }

  Schema other({{"z", FeatureKind::kContinuous, 0.0, 1.0, {}},
                {"w", FeatureKind::kContinuous, 0.0, 1.0, {}}},
               "label", {"a", "b"});
  EXPECT_THROW(MlpModel::load(path, other), ConfigError);
  std::remove(path.c_str());
}

TEST(Mlp, LoadRejectsGarbage) {
  auto path = temp_path("garbage.json");
  {
    std::ofstream out(path);
    out << "{\"format\": \"something-else\"}";
  }
  EXPECT_THROW(MlpModel::load(path), ConfigError);
  {
    std::ofstream out(path);
    out << "not json";
  }
  EXPECT_THROW(MlpModel::load(path), ConfigError);
  EXPECT_THROW(MlpModel::load("/nonexistent/path.json"), ConfigError);
  std::remove(path.c_str());
}

TEST(Mlp, AccuracyHelperCountsHits) {
  auto m = MlpModel::make(2, 2, 0, 0, 1, 0);
  Eigen::MatrixXd w(2, 2);
  w << 1.0, 0.0, -1.0, 0.0;  // class 0 iff u > 0
  m.set_layer(0, w, Eigen::VectorXd::Zero(2));
  Schema s = blob_schema();
  std::vector<Row> rows{{5.0, 0.0}, {-5.0, 0.0}, {3.0, 1.0}, {-2.0, 1.0}};
  std::vector<int> labels{0, 1, 1, 1};
  EXPECT_NEAR(accuracy(m, s, rows, labels), 0.75, 1e-12);
  EXPECT_THROW(accuracy(m, s, {}, {}), ConfigError);
}
