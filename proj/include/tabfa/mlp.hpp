#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "tabfa/common.hpp"
#include "tabfa/dataset.hpp"
#include "tabfa/encoding.hpp"
#include "tabfa/schema.hpp"

namespace tabfa {

struct TrainConfig {
  int hidden_layers = 5;
  int hidden_width = 128;
  double learning_rate = 5e-4;
  int epochs = 40;
  int batch_size = 256;
  uint64_t seed = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
};

struct TrainReport {
  double train_accuracy = 0.0;
  double test_accuracy = std::numeric_limits<double>::quiet_NaN();
  double final_loss = 0.0;
  int epochs = 0;
};

// Dense ReLU classifier over encoded samples. Normalization statistics are
// frozen at training time and applied inside forward, so callers always pass
// unnormalized encoded samples.
class MlpModel {
 public:
  MlpModel() = default;

  static MlpModel make(size_t input_dim, size_t n_classes, int hidden_layers,
                       int hidden_width, uint64_t seed, uint64_t schema_hash) {
    if (input_dim == 0 || n_classes < 2)
      throw ConfigError("model needs input_dim >= 1 and n_classes >= 2");
    if (hidden_layers < 0 || (hidden_layers > 0 && hidden_width < 1))
      throw ConfigError("invalid hidden layer configuration");
    MlpModel m;
    m.schema_hash_ = schema_hash;
    std::vector<size_t> dims;
    dims.push_back(input_dim);
    for (int l = 0; l < hidden_layers; ++l) dims.push_back(static_cast<size_t>(hidden_width));
    dims.push_back(n_classes);
    auto rng = make_rng(seed, /*stream=*/0xa11);
    for (size_t l = 0; l + 1 < dims.size(); ++l) {
      double s = 1.0 / std::sqrt(static_cast<double>(dims[l]));
      std::uniform_real_distribution<double> u(-s, s);
      Eigen::MatrixXd w(dims[l + 1], dims[l]);
      for (Eigen::Index i = 0; i < w.rows(); ++i)
        for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = u(rng);
      m.w_.push_back(std::move(w));
      m.b_.push_back(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dims[l + 1])));
    }
    m.mean_ = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(input_dim));
    m.std_ = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(input_dim));
    return m;
  }

  size_t input_dim() const { return w_.empty() ? 0 : static_cast<size_t>(w_.front().cols()); }
  size_t n_classes() const { return w_.empty() ? 0 : static_cast<size_t>(w_.back().rows()); }
  size_t n_layers() const { return w_.size(); }
  const Eigen::MatrixXd& weight(size_t l) const { return w_.at(l); }
  const Eigen::VectorXd& bias(size_t l) const { return b_.at(l); }
  uint64_t schema_hash() const { return schema_hash_; }
  const Eigen::VectorXd& norm_mean() const { return mean_; }
  const Eigen::VectorXd& norm_std() const { return std_; }

  void set_layer(size_t l, Eigen::MatrixXd w, Eigen::VectorXd b) {
    if (w.rows() != w_.at(l).rows() || w.cols() != w_.at(l).cols() || b.size() != b_.at(l).size())
      throw ConfigError("set_layer: shape mismatch");
    w_[l] = std::move(w);
    b_[l] = std::move(b);
  }

  void set_normalization(Eigen::VectorXd mean, Eigen::VectorXd std) {
    if (mean.size() != static_cast<Eigen::Index>(input_dim()) || std.size() != mean.size())
      throw ConfigError("set_normalization: dimension mismatch");
    for (Eigen::Index i = 0; i < std.size(); ++i)
      if (!(std(i) > 0)) throw ConfigError("set_normalization: std components must be > 0");
    mean_ = std::move(mean);
    std_ = std::move(std);
  }

  std::vector<double> forward(const std::vector<double>& x) const {
    Eigen::VectorXd logits = logits_of(to_vec(x));
    Eigen::VectorXd p = softmax(logits);
    return std::vector<double>(p.data(), p.data() + p.size());
  }

  // Ties break toward the lower class index.
  int predict(const std::vector<double>& x) const {
    Eigen::VectorXd logits = logits_of(to_vec(x));
    int best = 0;
    for (Eigen::Index i = 1; i < logits.size(); ++i)
      if (logits(i) > logits(best)) best = static_cast<int>(i);
    return best;
  }

  // Cross-entropy loss and its exact gradient w.r.t. the unnormalized encoded
  // input (chain rule through the normalization).
  std::pair<double, std::vector<double>> loss_and_input_grad(const std::vector<double>& x,
                                                             int y) const {
    if (y < 0 || static_cast<size_t>(y) >= n_classes())
      throw ConfigError("loss_and_input_grad: label out of range");
    Eigen::VectorXd a = (to_vec(x) - mean_).cwiseQuotient(std_);
    std::vector<Eigen::VectorXd> acts;  // activations per layer input
    std::vector<Eigen::VectorXd> pre;   // pre-activations
    acts.push_back(a);
    for (size_t l = 0; l < w_.size(); ++l) {
      Eigen::VectorXd z = w_[l] * acts.back() + b_[l];
      pre.push_back(z);
      if (l + 1 < w_.size()) acts.push_back(z.cwiseMax(0.0));
    }
    Eigen::VectorXd p = softmax(pre.back());
    double loss = -std::log(std::max(p(y), 1e-300));
    Eigen::VectorXd dz = p;
    dz(y) -= 1.0;
    for (size_t l = w_.size(); l-- > 1;) {
      Eigen::VectorXd da = w_[l].transpose() * dz;
      dz = da.cwiseProduct((pre[l - 1].array() > 0.0).cast<double>().matrix());
    }
    Eigen::VectorXd gx = (w_.front().transpose() * dz).cwiseQuotient(std_);
    return {loss, std::vector<double>(gx.data(), gx.data() + gx.size())};
  }

  nlohmann::json to_json() const {
    nlohmann::json layers = nlohmann::json::array();
    for (size_t l = 0; l < w_.size(); ++l) {
      nlohmann::json jw = nlohmann::json::array();
      for (Eigen::Index i = 0; i < w_[l].rows(); ++i) {
        nlohmann::json row = nlohmann::json::array();
        for (Eigen::Index j = 0; j < w_[l].cols(); ++j) row.push_back(w_[l](i, j));
        jw.push_back(std::move(row));
      }
      nlohmann::json jb = nlohmann::json::array();
      for (Eigen::Index i = 0; i < b_[l].size(); ++i) jb.push_back(b_[l](i));
      layers.push_back(nlohmann::json{{"w", std::move(jw)}, {"b", std::move(jb)}});
    }
    return nlohmann::json{{"format", "tabfa-mlp-v1"},
                          {"schema_hash", hex64(schema_hash_)},
                          {"mean", std::vector<double>(mean_.data(), mean_.data() + mean_.size())},
                          {"std", std::vector<double>(std_.data(), std_.data() + std_.size())},
                          {"layers", std::move(layers)}};
  }

  static MlpModel from_json(const nlohmann::json& j) {
    if (j.value("format", "") != std::string("tabfa-mlp-v1"))
      throw ConfigError("checkpoint: unknown format");
    MlpModel m;
    m.schema_hash_ = std::stoull(j.at("schema_hash").get<std::string>(), nullptr, 16);
    auto mean = j.at("mean").get<std::vector<double>>();
    auto std = j.at("std").get<std::vector<double>>();
    for (const auto& jl : j.at("layers")) {
      const auto& jw = jl.at("w");
      size_t rows = jw.size();
      if (rows == 0) throw ConfigError("checkpoint: empty layer");
      size_t cols = jw.at(0).size();
      Eigen::MatrixXd w(rows, cols);
      for (size_t i = 0; i < rows; ++i) {
        if (jw.at(i).size() != cols) throw ConfigError("checkpoint: ragged weight matrix");
        for (size_t k = 0; k < cols; ++k) w(i, k) = jw.at(i).at(k).get<double>();
      }
      auto bv = jl.at("b").get<std::vector<double>>();
      if (bv.size() != rows) throw ConfigError("checkpoint: bias size mismatch");
      m.w_.push_back(std::move(w));
      m.b_.push_back(Eigen::Map<Eigen::VectorXd>(bv.data(), static_cast<Eigen::Index>(rows)));
    }
    if (m.w_.empty()) throw ConfigError("checkpoint: no layers");
    for (size_t l = 0; l + 1 < m.w_.size(); ++l)
      if (m.w_[l + 1].cols() != m.w_[l].rows())
        throw ConfigError("checkpoint: layer shapes do not chain");
    if (mean.size() != static_cast<size_t>(m.w_.front().cols()) || std.size() != mean.size())
      throw ConfigError("checkpoint: normalization size mismatch");
    m.mean_ = Eigen::Map<Eigen::VectorXd>(mean.data(), static_cast<Eigen::Index>(mean.size()));
    m.std_ = Eigen::Map<Eigen::VectorXd>(std.data(), static_cast<Eigen::Index>(std.size()));
    for (Eigen::Index i = 0; i < m.std_.size(); ++i)
      if (!(m.std_(i) > 0)) throw ConfigError("checkpoint: std components must be > 0");
    return m;
  }

  void save(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write checkpoint '" + path + "'");
    out << to_json().dump() << "\n";
  }

  static MlpModel load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open checkpoint '" + path + "'");
    nlohmann::json j;
    try {
      in >> j;
    } catch (const std::exception& e) {
      throw ConfigError("checkpoint '" + path + "' is not valid JSON: " + e.what());
    }
    return from_json(j);
  }

  static MlpModel load(const std::string& path, const Schema& schema) {
    MlpModel m = load(path);
    if (m.schema_hash_ != schema.hash())
      throw ConfigError("checkpoint '" + path + "' was built for a different schema");
    if (m.input_dim() != schema.encoded_dim())
      throw ConfigError("checkpoint '" + path + "' input dimension mismatch");
    return m;
  }

 private:
  Eigen::VectorXd to_vec(const std::vector<double>& x) const {
    if (x.size() != input_dim()) throw DataError("model input dimension mismatch");
    return Eigen::Map<const Eigen::VectorXd>(x.data(), static_cast<Eigen::Index>(x.size()));
  }

  Eigen::VectorXd logits_of(const Eigen::VectorXd& x) const {
    Eigen::VectorXd a = (x - mean_).cwiseQuotient(std_);
    for (size_t l = 0; l + 1 < w_.size(); ++l) a = (w_[l] * a + b_[l]).cwiseMax(0.0);
    return w_.back() * a + b_.back();
  }

  static Eigen::VectorXd softmax(const Eigen::VectorXd& logits) {
    Eigen::VectorXd e = (logits.array() - logits.maxCoeff()).exp();
    return e / e.sum();
  }

  std::vector<Eigen::MatrixXd> w_;
  std::vector<Eigen::VectorXd> b_;
  Eigen::VectorXd mean_;
  Eigen::VectorXd std_;
  uint64_t schema_hash_ = 0;
};

inline double accuracy(const MlpModel& model, const Schema& schema,
                       const std::vector<Row>& rows, const std::vector<int>& labels) {
  if (rows.empty() || rows.size() != labels.size())
    throw ConfigError("accuracy: rows and labels must be nonempty and aligned");
  size_t hits = 0;
  for (size_t i = 0; i < rows.size(); ++i)
    if (model.predict(encode(schema, rows[i])) == labels[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(rows.size());
}

// Seeded, deterministic minibatch Adam training. Throws StageError if the
// loss stops being finite.
inline MlpModel train_mlp(const Dataset& data, const Split& split, const TrainConfig& cfg,
                          TrainReport* report = nullptr) {
  if (cfg.epochs < 1) throw ConfigError("train: epochs must be >= 1");
  if (!(cfg.learning_rate > 0)) throw ConfigError("train: learning rate must be > 0");
  if (cfg.batch_size < 1) throw ConfigError("train: batch size must be >= 1");
  if (split.train.empty()) throw ConfigError("train: empty training split");

  const Schema& schema = data.schema;
  const size_t n = split.train.size();
  const size_t dim = schema.encoded_dim();
  const size_t n_classes = schema.n_classes();

  Eigen::MatrixXd x(n, dim);
  std::vector<int> y(n);
  for (size_t i = 0; i < n; ++i) {
    auto enc = encode(schema, data.rows.at(split.train[i]));
    x.row(static_cast<Eigen::Index>(i)) =
        Eigen::Map<const Eigen::RowVectorXd>(enc.data(), static_cast<Eigen::Index>(dim));
    y[i] = data.labels.at(split.train[i]);
  }

  Eigen::RowVectorXd mean_r = x.colwise().mean();
  Eigen::RowVectorXd var_r =
      (x.rowwise() - mean_r).array().square().colwise().sum() / static_cast<double>(n);
  Eigen::RowVectorXd stdev_r(dim);
  for (size_t i = 0; i < dim; ++i) {
    double s = std::sqrt(std::max(var_r(static_cast<Eigen::Index>(i)), 0.0));
    stdev_r(static_cast<Eigen::Index>(i)) = s > 1e-12 ? s : 1.0;
  }

  MlpModel model = MlpModel::make(dim, n_classes, cfg.hidden_layers, cfg.hidden_width,
                                  cfg.seed, schema.hash());
  model.set_normalization(mean_r.transpose(), stdev_r.transpose());

  Eigen::MatrixXd xn =
      ((x.rowwise() - mean_r).array().rowwise() / stdev_r.array()).matrix();

  const size_t n_layers = model.n_layers();
  std::vector<Eigen::MatrixXd> w(n_layers), mw(n_layers), vw(n_layers);
  std::vector<Eigen::VectorXd> b(n_layers), mb(n_layers), vb(n_layers);
  for (size_t l = 0; l < n_layers; ++l) {
    w[l] = model.weight(l);
    b[l] = model.bias(l);
    mw[l] = Eigen::MatrixXd::Zero(w[l].rows(), w[l].cols());
    vw[l] = mw[l];
    mb[l] = Eigen::VectorXd::Zero(b[l].size());
    vb[l] = mb[l];
  }

  auto rng = make_rng(cfg.seed, /*stream=*/0x7a11);
  std::vector<size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  long long t = 0;
  double last_loss = 0.0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (size_t start = 0; start < n; start += static_cast<size_t>(cfg.batch_size)) {
      size_t bs = std::min(static_cast<size_t>(cfg.batch_size), n - start);
      Eigen::MatrixXd a0(bs, dim);
      std::vector<int> by(bs);
      for (size_t i = 0; i < bs; ++i) {
        a0.row(static_cast<Eigen::Index>(i)) = xn.row(static_cast<Eigen::Index>(order[start + i]));
        by[i] = y[order[start + i]];
      }
      std::vector<Eigen::MatrixXd> acts{a0};
      std::vector<Eigen::MatrixXd> pre;
      for (size_t l = 0; l < n_layers; ++l) {
        Eigen::MatrixXd z = (acts.back() * w[l].transpose()).rowwise() + b[l].transpose();
        pre.push_back(z);
        if (l + 1 < n_layers) acts.push_back(z.cwiseMax(0.0));
      }
      Eigen::MatrixXd p = pre.back();
      for (Eigen::Index i = 0; i < p.rows(); ++i) {
        Eigen::RowVectorXd e = (p.row(i).array() - p.row(i).maxCoeff()).exp();
        p.row(i) = e / e.sum();
      }
      double loss = 0.0;
      for (size_t i = 0; i < bs; ++i)
        loss -= std::log(std::max(p(static_cast<Eigen::Index>(i), by[i]), 1e-300));
      loss /= static_cast<double>(bs);
      last_loss = loss;
      if (!std::isfinite(loss)) throw StageError("training diverged: non-finite loss");

      Eigen::MatrixXd dz = p;
      for (size_t i = 0; i < bs; ++i) dz(static_cast<Eigen::Index>(i), by[i]) -= 1.0;
      dz /= static_cast<double>(bs);

      ++t;
      double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
      double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
      for (size_t l = n_layers; l-- > 0;) {
        Eigen::MatrixXd gw = dz.transpose() * acts[l];
        Eigen::VectorXd gb = dz.colwise().sum().transpose();
        if (l > 0) {
          Eigen::MatrixXd da = dz * w[l];
          dz = da.cwiseProduct((pre[l - 1].array() > 0.0).cast<double>().matrix());
        }
        mw[l] = cfg.beta1 * mw[l] + (1 - cfg.beta1) * gw;
        vw[l] = cfg.beta2 * vw[l] + (1 - cfg.beta2) * gw.cwiseProduct(gw);
        mb[l] = cfg.beta1 * mb[l] + (1 - cfg.beta1) * gb;
        vb[l] = cfg.beta2 * vb[l] + (1 - cfg.beta2) * gb.cwiseProduct(gb);
        w[l].array() -=
            cfg.learning_rate * (mw[l].array() / c1) / ((vw[l].array() / c2).sqrt() + cfg.adam_eps);
        b[l].array() -=
            cfg.learning_rate * (mb[l].array() / c1) / ((vb[l].array() / c2).sqrt() + cfg.adam_eps);
      }
    }
  }

  for (size_t l = 0; l < n_layers; ++l) model.set_layer(l, w[l], b[l]);

  if (report) {
    report->epochs = cfg.epochs;
    report->final_loss = last_loss;
    auto train_rows = gather(data.rows, split.train);
    auto train_labels = gather(data.labels, split.train);
    report->train_accuracy = accuracy(model, schema, train_rows, train_labels);
    if (!split.test.empty()) {
      auto test_rows = gather(data.rows, split.test);
      auto test_labels = gather(data.labels, split.test);
      report->test_accuracy = accuracy(model, schema, test_rows, test_labels);
    }
  }
  return model;
}

}  // namespace tabfa
