#pragma once

// Feed-forward classifier: ReLU hidden layers, softmax output, cross-entropy
// loss with an L2 penalty on weights, inverted dropout, SGD and Adam updates.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "fedpoison/errors.hpp"
#include "fedpoison/rng.hpp"

namespace fedpoison::nn {

template <typename Scalar>
using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;

using Index = Eigen::Index;

enum class Mode { train, eval };
enum class Optimizer { sgd, adam };

struct TrainingHyperparams {
  double learning_rate = 0.01;
  int local_epochs = 3;
  int batch_size = 100;
  double l2_coef = 0.0;
  double dropout_rate = 0.0;
  Optimizer optimizer = Optimizer::sgd;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;

  void validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
      throw ConfigError("learning_rate must be a finite non-negative number");
    if (local_epochs < 0) throw ConfigError("local_epochs must be >= 0");
    if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
    if (!(l2_coef >= 0.0)) throw ConfigError("l2_coef must be >= 0");
    if (!(dropout_rate >= 0.0 && dropout_rate < 1.0)) throw ConfigError("dropout_rate must lie in [0, 1)");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0) || !(adam_beta2 >= 0.0 && adam_beta2 < 1.0))
      throw ConfigError("adam betas must lie in [0, 1)");
    if (!(adam_epsilon > 0.0)) throw ConfigError("adam epsilon must be > 0");
  }
};

/// One affine layer; weights are [fan_in x fan_out] so activations are row-major samples.
template <typename Scalar>
struct DenseLayer {
  Matrix<Scalar> weights;
  Vector<Scalar> bias;

  friend bool operator==(const DenseLayer& a, const DenseLayer& b) {
    return a.weights.rows() == b.weights.rows() && a.weights.cols() == b.weights.cols() &&
           a.bias.size() == b.bias.size() && a.weights == b.weights && a.bias == b.bias;
  }
};

template <typename Scalar>
struct ModelParams {
  std::vector<DenseLayer<Scalar>> layers;

  Index input_dim() const { return layers.empty() ? 0 : layers.front().weights.rows(); }
  Index output_dim() const { return layers.empty() ? 0 : layers.back().weights.cols(); }

  std::vector<Index> layer_dims() const {
    std::vector<Index> dims;
    if (layers.empty()) return dims;
    dims.push_back(input_dim());
    for (const auto& l : layers) dims.push_back(l.weights.cols());
    return dims;
  }

  Index parameter_count() const {
    Index n = 0;
    for (const auto& l : layers) n += l.weights.size() + l.bias.size();
    return n;
  }

  bool all_finite() const {
    return std::all_of(layers.begin(), layers.end(), [](const DenseLayer<Scalar>& l) {
      return l.weights.allFinite() && l.bias.allFinite();
    });
  }

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

/// Gradients share the parameter layout.
template <typename Scalar>
using Gradient = ModelParams<Scalar>;

template <typename Scalar>
struct Batch {
  Matrix<Scalar> features;
  std::vector<int> labels;
};

template <typename Scalar>
bool same_shape(const ModelParams<Scalar>& a, const ModelParams<Scalar>& b) {
  if (a.layers.size() != b.layers.size()) return false;
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    const auto& x = a.layers[i];
    const auto& y = b.layers[i];
    if (x.weights.rows() != y.weights.rows() || x.weights.cols() != y.weights.cols() ||
        x.bias.size() != y.bias.size())
      return false;
  }
  return true;
}

/// Same layout as `shape`, every entry zero.
template <typename Scalar>
ModelParams<Scalar> zeros_like(const ModelParams<Scalar>& shape) {
  ModelParams<Scalar> out;
  out.layers.reserve(shape.layers.size());
  for (const auto& l : shape.layers)
    out.layers.push_back({Matrix<Scalar>::Zero(l.weights.rows(), l.weights.cols()),
                          Vector<Scalar>::Zero(l.bias.size())});
  return out;
}

/// Visits every scalar, weights before biases, layer by layer.
template <typename Params, typename Fn>
void for_each_coefficient(Params& p, Fn&& fn) {
  for (auto& l : p.layers) {
    for (Index i = 0; i < l.weights.size(); ++i) fn(l.weights.data()[i]);
    for (Index i = 0; i < l.bias.size(); ++i) fn(l.bias.data()[i]);
  }
}

template <typename Scalar>
std::vector<Scalar> flatten(const ModelParams<Scalar>& p) {
  std::vector<Scalar> flat;
  flat.reserve(static_cast<std::size_t>(p.parameter_count()));
  for_each_coefficient(p, [&](const Scalar& v) { flat.push_back(v); });
  return flat;
}

template <typename Scalar = double>
ModelParams<Scalar> init_model(std::span<const Index> layer_dims, Scalar init_range, std::uint64_t seed) {
  if (layer_dims.size() < 2) throw ConfigError("layer_dims needs at least an input and an output dimension");
  if (std::any_of(layer_dims.begin(), layer_dims.end(), [](Index d) { return d < 1; }))
    throw ConfigError("layer_dims entries must be positive");
  if (!(init_range > Scalar(0)) || !std::isfinite(static_cast<double>(init_range)))
    throw ConfigError("init_range must be a positive finite number");

  Rng rng = make_rng(seed, {stream::kInit});
  std::uniform_real_distribution<double> dist(-static_cast<double>(init_range), static_cast<double>(init_range));
  ModelParams<Scalar> params;
  for (std::size_t i = 0; i + 1 < layer_dims.size(); ++i) {
    DenseLayer<Scalar> layer{Matrix<Scalar>(layer_dims[i], layer_dims[i + 1]), Vector<Scalar>(layer_dims[i + 1])};
    for (Index k = 0; k < layer.weights.size(); ++k) layer.weights.data()[k] = Scalar(dist(rng));
    for (Index k = 0; k < layer.bias.size(); ++k) layer.bias.data()[k] = Scalar(dist(rng));
    params.layers.push_back(std::move(layer));
  }
  return params;
}

template <typename Scalar = double>
ModelParams<Scalar> init_model(std::initializer_list<Index> layer_dims, Scalar init_range, std::uint64_t seed) {
  return init_model<Scalar>(std::span<const Index>(layer_dims.begin(), layer_dims.size()), init_range, seed);
}

/// Row-wise softmax with max subtraction.
template <typename Scalar>
Matrix<Scalar> softmax_rows(const Matrix<Scalar>& logits) {
  Matrix<Scalar> out = logits.colwise() - logits.rowwise().maxCoeff();
  out = out.array().exp();
  out.array().colwise() /= out.rowwise().sum().array();
  return out;
}

/// Inverted-dropout mask for hidden layer `layer`: entries are 0 or 1/(1-rate).
template <typename Scalar>
Matrix<Scalar> dropout_mask(Index rows, Index cols, double rate, std::uint64_t dropout_seed, std::size_t layer) {
  Rng rng = make_rng(dropout_seed, {stream::kDropout, layer});
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const Scalar keep_scale = Scalar(1.0 / (1.0 - rate));
  Matrix<Scalar> mask(rows, cols);
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c) mask(r, c) = u(rng) < rate ? Scalar(0) : keep_scale;
  return mask;
}

namespace detail {

template <typename Scalar>
struct ForwardTrace {
  std::vector<Matrix<Scalar>> inputs;       // input to each layer (post-activation, post-dropout)
  std::vector<Matrix<Scalar>> preacts;      // pre-activation of each hidden layer
  std::vector<Matrix<Scalar>> masks;        // dropout masks, empty when inactive
  Matrix<Scalar> probabilities;
};

template <typename Scalar>
ForwardTrace<Scalar> forward_trace(const ModelParams<Scalar>& params, const Matrix<Scalar>& features, Mode mode,
                                   double dropout_rate, std::uint64_t dropout_seed) {
  if (params.layers.empty()) throw ShapeError("model has no layers");
  if (features.cols() != params.input_dim())
    throw ShapeError("feature width " + std::to_string(features.cols()) + " does not match model input dim " +
                     std::to_string(params.input_dim()));
  const bool drop = mode == Mode::train && dropout_rate > 0.0;
  ForwardTrace<Scalar> t;
  Matrix<Scalar> a = features;
  const std::size_t n_layers = params.layers.size();
  for (std::size_t i = 0; i < n_layers; ++i) {
    const auto& layer = params.layers[i];
    Matrix<Scalar> z = a * layer.weights;
    z.rowwise() += layer.bias.transpose();
    t.inputs.push_back(std::move(a));
    if (i + 1 == n_layers) {
      t.probabilities = softmax_rows<Scalar>(z);
      break;
    }
    a = z.cwiseMax(Scalar(0));
    t.preacts.push_back(std::move(z));
    if (drop) {
      t.masks.push_back(dropout_mask<Scalar>(a.rows(), a.cols(), dropout_rate, dropout_seed, i));
      a.array() *= t.masks.back().array();
    } else {
      t.masks.emplace_back();
    }
  }
  return t;
}

}  // namespace detail

/// Class probabilities, one row per sample.
template <typename Scalar>
Matrix<Scalar> forward(const ModelParams<Scalar>& params, const Matrix<Scalar>& features, Mode mode = Mode::eval,
                       double dropout_rate = 0.0, std::uint64_t dropout_seed = 0) {
  return detail::forward_trace(params, features, mode, dropout_rate, dropout_seed).probabilities;
}

template <typename Scalar>
std::vector<int> predict(const ModelParams<Scalar>& params, const Matrix<Scalar>& features) {
  const Matrix<Scalar> probs = forward(params, features, Mode::eval);
  std::vector<int> out(static_cast<std::size_t>(probs.rows()));
  for (Index r = 0; r < probs.rows(); ++r) {
    Index arg = 0;
    probs.row(r).maxCoeff(&arg);
    out[static_cast<std::size_t>(r)] = static_cast<int>(arg);
  }
  return out;
}

inline constexpr double kProbabilityFloor = 1e-12;

/// Mean cross-entropy of the true class plus l2_coef * sum of squared weights (biases excluded).
template <typename Scalar>
Scalar loss(const Matrix<Scalar>& probabilities, std::span<const int> labels, const ModelParams<Scalar>& params,
            double l2_coef) {
  if (probabilities.rows() != static_cast<Index>(labels.size()))
    throw ShapeError("probability rows and label count differ");
  if (labels.empty()) throw DataError("loss over an empty batch");
  Scalar nll(0);
  for (std::size_t r = 0; r < labels.size(); ++r) {
    const int y = labels[r];
    if (y < 0 || y >= probabilities.cols())
      throw DataError("label " + std::to_string(y) + " out of range [0, " + std::to_string(probabilities.cols()) + ")");
    nll -= std::log(std::max(probabilities(static_cast<Index>(r), y), Scalar(kProbabilityFloor)));
  }
  nll /= Scalar(labels.size());
  Scalar penalty(0);
  if (l2_coef != 0.0)
    for (const auto& l : params.layers) penalty += l.weights.squaredNorm();
  return nll + Scalar(l2_coef) * penalty;
}

template <typename Scalar>
Scalar loss(const Matrix<Scalar>& probabilities, const std::vector<int>& labels, const ModelParams<Scalar>& params,
            double l2_coef) {
  return loss(probabilities, std::span<const int>(labels), params, l2_coef);
}

/// Gradient of loss() on the batch, using the same dropout mask forward() draws for dropout_seed.
template <typename Scalar>
Gradient<Scalar> backward(const ModelParams<Scalar>& params, const Batch<Scalar>& batch,
                          const TrainingHyperparams& hyper, std::uint64_t dropout_seed) {
  const Index n = batch.features.rows();
  if (n < 1) throw DataError("backward over an empty batch");
  if (static_cast<Index>(batch.labels.size()) != n) throw ShapeError("batch feature rows and label count differ");
  auto trace = detail::forward_trace(params, batch.features, Mode::train, hyper.dropout_rate, dropout_seed);

  Matrix<Scalar> delta = trace.probabilities;
  for (Index r = 0; r < n; ++r) {
    const int y = batch.labels[static_cast<std::size_t>(r)];
    if (y < 0 || y >= delta.cols()) throw DataError("label " + std::to_string(y) + " out of range");
    delta(r, y) -= Scalar(1);
  }
  delta /= Scalar(n);

  Gradient<Scalar> grad = zeros_like(params);
  for (std::size_t i = params.layers.size(); i-- > 0;) {
    auto& g = grad.layers[i];
    g.weights.noalias() = trace.inputs[i].transpose() * delta;
    g.bias = delta.colwise().sum().transpose();
    if (hyper.l2_coef != 0.0) g.weights += Scalar(2.0 * hyper.l2_coef) * params.layers[i].weights;
    if (i == 0) break;
    Matrix<Scalar> upstream = delta * params.layers[i].weights.transpose();
    const std::size_t h = i - 1;
    if (trace.masks[h].size() != 0) upstream.array() *= trace.masks[h].array();
    delta = (trace.preacts[h].array() > Scalar(0)).select(upstream, Scalar(0));
  }
  return grad;
}

/// Adam moments; sized lazily on the first adam update.
template <typename Scalar>
struct OptimizerState {
  Gradient<Scalar> first_moment;
  Gradient<Scalar> second_moment;
};

/// sgd: p - lr*g.  adam: bias-corrected moments, step_index counts from 1.
template <typename Scalar>
ModelParams<Scalar> apply_update(const ModelParams<Scalar>& params, const Gradient<Scalar>& grad,
                                 const TrainingHyperparams& hyper, std::int64_t step_index,
                                 OptimizerState<Scalar>& state) {
  if (!same_shape(params, grad)) throw ShapeError("gradient shape does not match parameters");
  if (!grad.all_finite()) throw NumericError("non-finite gradient");
  ModelParams<Scalar> out = params;
  const Scalar lr(hyper.learning_rate);
  if (hyper.optimizer == Optimizer::sgd) {
    for (std::size_t i = 0; i < out.layers.size(); ++i) {
      out.layers[i].weights -= lr * grad.layers[i].weights;
      out.layers[i].bias -= lr * grad.layers[i].bias;
    }
  } else {
    if (step_index < 1) throw ConfigError("adam step_index counts from 1");
    if (!same_shape(state.first_moment, params)) {
      state.first_moment = zeros_like(params);
      state.second_moment = zeros_like(params);
    }
    const Scalar b1(hyper.adam_beta1), b2(hyper.adam_beta2), eps(hyper.adam_epsilon);
    const Scalar c1 = Scalar(1) - Scalar(std::pow(hyper.adam_beta1, static_cast<double>(step_index)));
    const Scalar c2 = Scalar(1) - Scalar(std::pow(hyper.adam_beta2, static_cast<double>(step_index)));
    auto step = [&](auto& p, const auto& g, auto& m, auto& v) {
      m = b1 * m + (Scalar(1) - b1) * g;
      v = b2 * v + (Scalar(1) - b2) * g.cwiseProduct(g);
      p.array() -= lr * (m.array() / c1) / ((v.array() / c2).sqrt() + eps);
    };
    for (std::size_t i = 0; i < out.layers.size(); ++i) {
      step(out.layers[i].weights, grad.layers[i].weights, state.first_moment.layers[i].weights,
           state.second_moment.layers[i].weights);
      step(out.layers[i].bias, grad.layers[i].bias, state.first_moment.layers[i].bias,
           state.second_moment.layers[i].bias);
    }
  }
  if (!out.all_finite()) throw NumericError("parameters became non-finite after update");
  return out;
}

}  // namespace fedpoison::nn
