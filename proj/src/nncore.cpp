#include "lccnn/nncore.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace lccnn {

std::string to_string(Activation a) { return a == Activation::ReLU ? "relu" : "identity"; }
std::string to_string(LayerKind k) { return k == LayerKind::Conv ? "conv" : "dense"; }

void ConvShape::validate() const {
  if (in_maps < 1 || out_maps < 1 || kernel < 1 || input_size < 1 || kernel > input_size) {
    throw ConfigError("invalid convolution shape");
  }
}

int Layer::out_features() const {
  if (kind == LayerKind::Conv) return conv.out_maps * conv.out_size() * conv.out_size();
  return static_cast<int>(weight.rows());
}

Matrix Layer::pool(const Matrix& x) const {
  if (!pooled()) return x;
  Matrix out = Matrix::Zero(static_cast<Eigen::Index>(pools.size()), x.cols());
  for (std::size_t c = 0; c < pools.size(); ++c) {
    for (int j : pools[c]) out.row(static_cast<Eigen::Index>(c)) += x.row(j);
  }
  return out;
}

void Layer::validate() const {
  if (bias.size() != weight.rows()) throw ShapeError("layer: bias length does not match weight rows");
  if (kind == LayerKind::Conv) {
    conv.validate();
    if (weight.rows() != conv.out_maps || weight.cols() != conv.in_maps * conv.kernel * conv.kernel ||
        input_dim != conv.in_maps * conv.input_size * conv.input_size) {
      throw ShapeError("conv layer: weight shape does not match its ConvShape");
    }
    return;
  }
  if (pooled()) {
    if (static_cast<Eigen::Index>(pools.size()) != weight.cols()) throw ShapeError("dense layer: pool count != columns");
    for (const auto& p : pools) {
      if (p.empty()) throw ShapeError("dense layer: empty pool");
      for (int j : p) {
        if (j < 0 || j >= input_dim) throw ShapeError("dense layer: pool index out of range");
      }
    }
  } else if (weight.cols() != input_dim) {
    throw ShapeError("dense layer: weight columns != input_dim");
  }
}

void Model::validate() const {
  if (layers.empty()) throw ShapeError("model has no layers");
  for (std::size_t l = 0; l < layers.size(); ++l) {
    layers[l].validate();
    if (l > 0 && layers[l].input_dim != layers[l - 1].out_features()) {
      throw ShapeError("layer " + std::to_string(l) + ": input_dim does not match previous layer output");
    }
  }
}

Layer make_dense(int in, int out, Activation act) {
  Layer l;
  l.kind = LayerKind::Dense;
  l.activation = act;
  l.weight = Matrix::Zero(out, in);
  l.bias = Vector::Zero(out);
  l.input_dim = in;
  return l;
}

Layer make_conv(const ConvShape& shape, Activation act) {
  shape.validate();
  Layer l;
  l.kind = LayerKind::Conv;
  l.activation = act;
  l.conv = shape;
  l.weight = Matrix::Zero(shape.out_maps, shape.in_maps * shape.kernel * shape.kernel);
  l.bias = Vector::Zero(shape.out_maps);
  l.input_dim = shape.in_maps * shape.input_size * shape.input_size;
  return l;
}

void init_params(Model& model, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (auto& l : model.layers) {
    double fan_in = static_cast<double>(l.weight.cols());
    double fan_out = static_cast<double>(l.weight.rows());
    if (l.kind == LayerKind::Conv) fan_out *= l.conv.kernel * l.conv.kernel;
    const double bound = std::sqrt(6.0 / (fan_in + fan_out));
    std::uniform_real_distribution<double> u(-bound, bound);
    for (Eigen::Index c = 0; c < l.weight.cols(); ++c) {
      for (Eigen::Index r = 0; r < l.weight.rows(); ++r) l.weight(r, c) = u(rng);
    }
    l.bias.setZero();
  }
}

Model make_mlp(const std::vector<int>& sizes, std::uint64_t seed) {
  if (sizes.size() < 2) throw ConfigError("MLP needs at least input and output sizes");
  Model m;
  for (std::size_t i = 0; i + 1 < sizes.size(); ++i) {
    const bool last = i + 2 == sizes.size();
    m.layers.push_back(make_dense(sizes[i], sizes[i + 1], last ? Activation::Identity : Activation::ReLU));
  }
  init_params(m, seed);
  return m;
}

Dataset Dataset::head(int n) const {
  n = std::min(n, size());
  Dataset d;
  d.features = features.leftCols(n);
  d.labels.assign(labels.begin(), labels.begin() + n);
  return d;
}

namespace {

// (K*Z*Z x B) samples to (K*O*O x P*P*B) patches, sample-major columns.
Matrix im2col(const ConvShape& s, const Matrix& x) {
  const int z = s.input_size;
  const int o = s.kernel;
  const int p = s.out_size();
  const auto batch = x.cols();
  Matrix cols(s.in_maps * o * o, static_cast<Eigen::Index>(p) * p * batch);
  for (Eigen::Index b = 0; b < batch; ++b) {
    for (int r = 0; r < p; ++r) {
      for (int c = 0; c < p; ++c) {
        const Eigen::Index col = b * p * p + r * p + c;
        for (int k = 0; k < s.in_maps; ++k) {
          for (int i = 0; i < o; ++i) {
            for (int j = 0; j < o; ++j) cols(k * o * o + i * o + j, col) = x(k * z * z + (r + i) * z + (c + j), b);
          }
        }
      }
    }
  }
  return cols;
}

Matrix col2im(const ConvShape& s, const Matrix& cols, Eigen::Index batch) {
  const int z = s.input_size;
  const int o = s.kernel;
  const int p = s.out_size();
  Matrix x = Matrix::Zero(s.in_maps * z * z, batch);
  for (Eigen::Index b = 0; b < batch; ++b) {
    for (int r = 0; r < p; ++r) {
      for (int c = 0; c < p; ++c) {
        const Eigen::Index col = b * p * p + r * p + c;
        for (int k = 0; k < s.in_maps; ++k) {
          for (int i = 0; i < o; ++i) {
            for (int j = 0; j < o; ++j) x(k * z * z + (r + i) * z + (c + j), b) += cols(k * o * o + i * o + j, col);
          }
        }
      }
    }
  }
  return x;
}

// (N x P*P*B) map-major rows to (N*P*P x B) flattened samples, and back.
Matrix maps_to_samples(const Matrix& z, int n, int pp, Eigen::Index batch) {
  Matrix out(static_cast<Eigen::Index>(n) * pp, batch);
  for (Eigen::Index b = 0; b < batch; ++b) {
    for (int m = 0; m < n; ++m) out.col(b).segment(static_cast<Eigen::Index>(m) * pp, pp) = z.row(m).segment(b * pp, pp).transpose();
  }
  return out;
}

Matrix samples_to_maps(const Matrix& y, int n, int pp) {
  const auto batch = y.cols();
  Matrix out(n, pp * batch);
  for (Eigen::Index b = 0; b < batch; ++b) {
    for (int m = 0; m < n; ++m) out.row(m).segment(b * pp, pp) = y.col(b).segment(static_cast<Eigen::Index>(m) * pp, pp).transpose();
  }
  return out;
}

Matrix activate(Activation a, const Matrix& z) {
  if (a == Activation::ReLU) return z.cwiseMax(0.0);
  return z;
}

Matrix layer_pre(const Layer& l, const Matrix& input, Eigen::Index batch) {
  if (l.kind == LayerKind::Conv) {
    const int pp = l.conv.out_size() * l.conv.out_size();
    Matrix z = l.weight * input;
    z.colwise() += l.bias;
    return maps_to_samples(z, l.conv.out_maps, pp, batch);
  }
  Matrix z = l.weight * input;
  z.colwise() += l.bias;
  return z;
}

Matrix layer_input(const Layer& l, const Matrix& x) {
  if (l.kind == LayerKind::Conv) return im2col(l.conv, x);
  return l.pool(x);
}

Vector softmax(const Vector& logits) {
  const double mx = logits.maxCoeff();
  Vector e = (logits.array() - mx).exp();
  return e / e.sum();
}

}  // namespace

Activations forward_cached(const Model& model, const Matrix& x) {
  if (x.rows() != model.input_dim()) throw ShapeError("forward: input dimension mismatch");
  Activations a;
  Matrix cur = x;
  for (const auto& l : model.layers) {
    a.inputs.push_back(layer_input(l, cur));
    a.pre.push_back(layer_pre(l, a.inputs.back(), x.cols()));
    a.post.push_back(activate(l.activation, a.pre.back()));
    cur = a.post.back();
  }
  return a;
}

Matrix forward(const Model& model, const Matrix& x) {
  if (x.rows() != model.input_dim()) throw ShapeError("forward: input dimension mismatch");
  Matrix cur = x;
  for (const auto& l : model.layers) cur = activate(l.activation, layer_pre(l, layer_input(l, cur), x.cols()));
  return cur;
}

double loss_ce(const Vector& logits, int label) {
  if (label < 0 || label >= logits.size()) throw Error("loss_ce: label out of range");
  const double mx = logits.maxCoeff();
  const double lse = mx + std::log((logits.array() - mx).exp().sum());
  return lse - logits(label);
}

double batch_loss(const Model& model, const Matrix& x, const std::vector<int>& labels) {
  const Matrix logits = forward(model, x);
  double total = 0.0;
  for (Eigen::Index b = 0; b < logits.cols(); ++b) total += loss_ce(logits.col(b), labels[static_cast<std::size_t>(b)]);
  return total / static_cast<double>(logits.cols());
}

BackwardResult backward(const Model& model, const Matrix& x, const std::vector<int>& labels) {
  const auto batch = x.cols();
  if (static_cast<Eigen::Index>(labels.size()) != batch) throw ShapeError("backward: label count mismatch");
  const Activations a = forward_cached(model, x);
  BackwardResult out;
  out.grads.resize(model.layers.size());

  const Matrix& logits = a.post.back();
  Matrix delta(logits.rows(), batch);
  for (Eigen::Index b = 0; b < batch; ++b) {
    const int label = labels[static_cast<std::size_t>(b)];
    out.loss += loss_ce(logits.col(b), label);
    Vector p = softmax(logits.col(b));
    p(label) -= 1.0;
    delta.col(b) = p / static_cast<double>(batch);
  }
  out.loss /= static_cast<double>(batch);

  for (std::size_t li = model.layers.size(); li-- > 0;) {
    const Layer& l = model.layers[li];
    if (l.activation == Activation::ReLU) delta = delta.cwiseProduct((a.pre[li].array() > 0.0).cast<double>().matrix());
    auto& g = out.grads[li];
    if (l.kind == LayerKind::Conv) {
      const int pp = l.conv.out_size() * l.conv.out_size();
      const Matrix dz = samples_to_maps(delta, l.conv.out_maps, pp);
      g.weight = dz * a.inputs[li].transpose();
      g.bias = dz.rowwise().sum();
      if (li > 0) delta = col2im(l.conv, l.weight.transpose() * dz, batch);
    } else {
      g.weight = delta * a.inputs[li].transpose();
      g.bias = delta.rowwise().sum();
      if (li > 0) {
        const Matrix dpool = l.weight.transpose() * delta;
        if (!l.pooled()) {
          delta = dpool;
        } else {
          delta = Matrix::Zero(l.input_dim, batch);
          for (std::size_t c = 0; c < l.pools.size(); ++c) {
            for (int j : l.pools[c]) delta.row(j) += dpool.row(static_cast<Eigen::Index>(c));
          }
        }
      }
    }
  }
  return out;
}

void TrainConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("learning rate must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must be in [0, 1)");
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) throw ConfigError("lr decay must be in (0, 1]");
  if (decay_interval < 1) throw ConfigError("decay interval must be >= 1");
  if (batch_size < 1) throw ConfigError("batch size must be >= 1");
  if (epochs < 0) throw ConfigError("epochs must be >= 0");
}

double lr_at_epoch(const TrainConfig& cfg, int epoch) {
  if (epoch < 0) throw ConfigError("epoch must be >= 0");
  return cfg.lr * std::pow(cfg.lr_decay, epoch / cfg.decay_interval);
}

OptimizerState make_optimizer_state(const Model& model) {
  OptimizerState s;
  for (const auto& l : model.layers) {
    s.m_weight.push_back(Matrix::Zero(l.weight.rows(), l.weight.cols()));
    s.m_bias.push_back(Vector::Zero(l.bias.size()));
    s.v_weight.push_back(Matrix::Zero(l.weight.rows(), l.weight.cols()));
    s.v_bias.push_back(Vector::Zero(l.bias.size()));
  }
  return s;
}

void sgd_momentum_step(Model& model, const Gradients& grads, OptimizerState& state, double lr, double momentum) {
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    auto& layer = model.layers[l];
    if (grads[l].weight.rows() != layer.weight.rows() || grads[l].weight.cols() != layer.weight.cols()) {
      throw ShapeError("sgd step: gradient shape mismatch");
    }
    state.m_weight[l] = momentum * state.m_weight[l] + grads[l].weight;
    state.m_bias[l] = momentum * state.m_bias[l] + grads[l].bias;
    layer.weight -= lr * state.m_weight[l];
    layer.bias -= lr * state.m_bias[l];
  }
  ++state.steps;
}

void adam_step(Model& model, const Gradients& grads, OptimizerState& state, double lr, const TrainConfig& cfg) {
  ++state.steps;
  const double c1 = 1.0 - std::pow(cfg.adam_beta1, static_cast<double>(state.steps));
  const double c2 = 1.0 - std::pow(cfg.adam_beta2, static_cast<double>(state.steps));
  auto update = [&](auto& param, const auto& g, auto& m, auto& v) {
    m = cfg.adam_beta1 * m + (1.0 - cfg.adam_beta1) * g;
    v = cfg.adam_beta2 * v + (1.0 - cfg.adam_beta2) * g.cwiseProduct(g);
    param.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + cfg.adam_eps);
  };
  for (std::size_t l = 0; l < model.layers.size(); ++l) {
    update(model.layers[l].weight, grads[l].weight, state.m_weight[l], state.v_weight[l]);
    update(model.layers[l].bias, grads[l].bias, state.m_bias[l], state.v_bias[l]);
  }
}

TrainStats train(Model& model, const Dataset& data, const TrainConfig& cfg, const TrainHooks& hooks) {
  cfg.validate();
  model.validate();
  if (data.size() == 0) throw Error("train: empty dataset");
  TrainStats stats;
  OptimizerState state = make_optimizer_state(model);
  std::mt19937_64 rng(cfg.seed);
  std::vector<int> order(static_cast<std::size_t>(data.size()));
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    const double lr = lr_at_epoch(cfg, epoch);
    double loss_sum = 0.0;
    int batches = 0;
    for (int start = 0; start < data.size(); start += cfg.batch_size) {
      const int n = std::min(cfg.batch_size, data.size() - start);
      Matrix x(data.features.rows(), n);
      std::vector<int> labels(static_cast<std::size_t>(n));
      for (int i = 0; i < n; ++i) {
        const int idx = order[static_cast<std::size_t>(start + i)];
        x.col(i) = data.features.col(idx);
        labels[static_cast<std::size_t>(i)] = data.labels[static_cast<std::size_t>(idx)];
      }
      auto result = backward(model, x, labels);
      if (!std::isfinite(result.loss)) {
        throw Error("training diverged at epoch " + std::to_string(epoch) + " (loss is not finite)");
      }
      if (hooks.adjust_gradients) hooks.adjust_gradients(result.grads);
      if (cfg.optimizer == OptimizerKind::Adam) {
        adam_step(model, result.grads, state, lr, cfg);
      } else {
        sgd_momentum_step(model, result.grads, state, lr, cfg.momentum);
      }
      if (hooks.after_step) hooks.after_step(model, lr);
      loss_sum += result.loss;
      ++batches;
    }
    stats.epoch_loss.push_back(loss_sum / batches);
    if (hooks.on_epoch) hooks.on_epoch(epoch, stats.epoch_loss.back());
  }
  return stats;
}

int argmax(const Vector& v) {
  int best = 0;
  for (Eigen::Index i = 1; i < v.size(); ++i) {
    if (v(i) > v(best)) best = static_cast<int>(i);
  }
  return best;
}

double top1_accuracy(const Model& model, const Dataset& data) {
  if (data.size() == 0) throw Error("top1_accuracy: empty dataset");
  int correct = 0;
  constexpr int kChunk = 1000;
  for (int start = 0; start < data.size(); start += kChunk) {
    const int n = std::min(kChunk, data.size() - start);
    const Matrix logits = forward(model, data.features.middleCols(start, n));
    for (int i = 0; i < n; ++i) correct += argmax(logits.col(i)) == data.labels[static_cast<std::size_t>(start + i)];
  }
  return static_cast<double>(correct) / data.size();
}

double top1_accuracy(const Dataset& data, const std::function<Vector(const Vector&)>& logits) {
  if (data.size() == 0) throw Error("top1_accuracy: empty dataset");
  int correct = 0;
  for (int i = 0; i < data.size(); ++i) {
    correct += argmax(logits(data.features.col(i))) == data.labels[static_cast<std::size_t>(i)];
  }
  return static_cast<double>(correct) / data.size();
}

void snap_to_float(Model& model) {
  auto snap = [](double v) { return static_cast<double>(static_cast<float>(v)); };
  for (auto& l : model.layers) {
    l.weight = l.weight.unaryExpr(snap);
    l.bias = l.bias.unaryExpr(snap);
  }
}

}  // namespace lccnn
