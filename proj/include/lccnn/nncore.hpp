#pragma once

// Small deterministic training stack: dense and convolutional layers,
// softmax cross-entropy, SGD with momentum / Adam and a step-decay schedule.

#include "lccnn/types.hpp"

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace lccnn {

enum class Activation : std::uint8_t { Identity = 0, ReLU = 1 };
enum class LayerKind : std::uint8_t { Dense = 0, Conv = 1 };

std::string to_string(Activation a);
std::string to_string(LayerKind k);

/// K input maps of size Z x Z, N output maps, O x O kernels, stride 1, no padding.
struct ConvShape {
  int in_maps = 1;
  int out_maps = 1;
  int kernel = 1;
  int input_size = 1;

  int out_size() const { return input_size - kernel + 1; }
  void validate() const;
  friend bool operator==(const ConvShape&, const ConvShape&) = default;
};

/// Dense: y = f(W pool(x) + b) where pool sums groups of raw inputs (identity
/// when pools is empty). Conv: weight row n holds kernels (n, k, r, c) in
/// row-major order, input is (k, r, c) and output is (n, r, c) flattened.
struct Layer {
  LayerKind kind = LayerKind::Dense;
  Activation activation = Activation::ReLU;
  Matrix weight;
  Vector bias;
  int input_dim = 0;
  std::vector<std::vector<int>> pools;
  ConvShape conv;

  int out_features() const;
  bool pooled() const { return !pools.empty(); }
  /// Raw inputs (input_dim x B) to the columns the weight matrix multiplies.
  Matrix pool(const Matrix& x) const;
  void validate() const;
};

struct Model {
  std::vector<Layer> layers;

  int input_dim() const { return layers.front().input_dim; }
  int classes() const { return layers.back().out_features(); }
  void validate() const;
};

Layer make_dense(int in, int out, Activation act);
Layer make_conv(const ConvShape& shape, Activation act);
/// Uniform init in +-sqrt(6 / (fan_in + fan_out)), zero bias.
void init_params(Model& model, std::uint64_t seed);
Model make_mlp(const std::vector<int>& sizes, std::uint64_t seed);

struct Dataset {
  Matrix features;  // one sample per column
  std::vector<int> labels;

  int size() const { return static_cast<int>(labels.size()); }
  Dataset head(int n) const;
};

struct LayerGrad {
  Matrix weight;
  Vector bias;
};
using Gradients = std::vector<LayerGrad>;

/// Logits (classes x B) for a batch of raw inputs (input_dim x B).
Matrix forward(const Model& model, const Matrix& x);

struct Activations {
  std::vector<Matrix> inputs;  // per layer: pooled input or im2col patches
  std::vector<Matrix> pre;
  std::vector<Matrix> post;
};
Activations forward_cached(const Model& model, const Matrix& x);

double loss_ce(const Vector& logits, int label);
/// Mean softmax cross-entropy of a batch.
double batch_loss(const Model& model, const Matrix& x, const std::vector<int>& labels);

struct BackwardResult {
  Gradients grads;
  double loss = 0.0;
};
/// Gradients of the mean batch loss with respect to every weight and bias.
BackwardResult backward(const Model& model, const Matrix& x, const std::vector<int>& labels);

enum class OptimizerKind : std::uint8_t { SgdMomentum, Adam };

struct TrainConfig {
  int epochs = 30;
  int batch_size = 64;
  double lr = 0.001;
  double momentum = 0.9;
  double lr_decay = 0.95;
  int decay_interval = 10;
  std::uint64_t seed = 1;
  OptimizerKind optimizer = OptimizerKind::SgdMomentum;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  void validate() const;
};

double lr_at_epoch(const TrainConfig& cfg, int epoch);

struct OptimizerState {
  std::vector<Matrix> m_weight;
  std::vector<Vector> m_bias;
  std::vector<Matrix> v_weight;
  std::vector<Vector> v_bias;
  std::int64_t steps = 0;
};

OptimizerState make_optimizer_state(const Model& model);
/// Classical heavy-ball momentum: v <- mu v + g, w <- w - lr v.
void sgd_momentum_step(Model& model, const Gradients& grads, OptimizerState& state, double lr, double momentum);
void adam_step(Model& model, const Gradients& grads, OptimizerState& state, double lr, const TrainConfig& cfg);

struct TrainHooks {
  /// Called on every mini-batch gradient before the optimizer step.
  std::function<void(Gradients&)> adjust_gradients;
  /// Called after every optimizer step with the step's learning rate.
  std::function<void(Model&, double)> after_step;
  std::function<void(int, double)> on_epoch;
};

struct TrainStats {
  std::vector<double> epoch_loss;
};

/// Mini-batch training with a seeded shuffle. Throws Error if the loss turns NaN.
TrainStats train(Model& model, const Dataset& data, const TrainConfig& cfg, const TrainHooks& hooks = {});

/// Index of the largest entry, lowest index on ties.
int argmax(const Vector& v);
double top1_accuracy(const Model& model, const Dataset& data);
/// Accuracy of an arbitrary per-sample logit function.
double top1_accuracy(const Dataset& data, const std::function<Vector(const Vector&)>& logits);

/// Rounds every parameter to float32 so that checkpoints reload bit-exactly.
void snap_to_float(Model& model);

}  // namespace lccnn
