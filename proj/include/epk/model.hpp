/* Copyright 2026 The epk Authors.
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "epk/dataset.hpp"

namespace epk {

enum class Activation { ReLU };

/// Output head. LogSoftmax is the classification head the kernel
/// representation is built for; Identity gives a model that is affine in its
/// weights when there are no hidden layers (used as a closed-form reference).
enum class Head { LogSoftmax, Identity };

struct ModelSpec {
  std::vector<std::size_t> layer_widths;  // {D, hidden..., K}
  Activation hidden_activation = Activation::ReLU;
  Head output_head = Head::LogSoftmax;

  std::size_t input_dim() const { return layer_widths.front(); }
  std::size_t output_dim() const { return layer_widths.back(); }
  std::size_t num_linear_layers() const { return layer_widths.size() - 1; }
  std::size_t weight_count() const;

  /// Throws ConfigError unless there are >= 2 widths, all >= 1.
  void validate() const;

  nlohmann::json to_json() const;
  static ModelSpec from_json(const nlohmann::json& j);

  bool operator==(const ModelSpec&) const = default;
};

/// Placement of one dense layer inside the flat weight vector. The weight
/// matrix is stored row-major [rows = fan_out, cols = fan_in], followed by
/// its bias.
struct LayerSlot {
  std::size_t weight_offset = 0;
  std::size_t bias_offset = 0;
  std::size_t rows = 0;
  std::size_t cols = 0;
};

/// Contiguous, non-overlapping layout of all parameters, covering [0, W).
class WeightLayout {
 public:
  explicit WeightLayout(const ModelSpec& spec);

  const std::vector<LayerSlot>& layers() const { return layers_; }
  const LayerSlot& layer(std::size_t l) const { return layers_.at(l); }
  const LayerSlot& final_layer() const { return layers_.back(); }
  std::size_t size() const { return size_; }

 private:
  std::vector<LayerSlot> layers_;
  std::size_t size_ = 0;
};

/// Row-major [K x W] matrix; row k is the gradient of output k w.r.t. all weights.
struct Jacobian {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  Jacobian() = default;
  Jacobian(std::size_t r, std::size_t c) : rows(r), cols(c), values(r * c, 0.0) {}

  std::span<double> row(std::size_t k) { return {values.data() + k * cols, cols}; }
  std::span<const double> row(std::size_t k) const { return {values.data() + k * cols, cols}; }
  double operator()(std::size_t k, std::size_t w) const { return values[k * cols + w]; }
};

/// Activations saved by one forward pass, consumed by pullback().
struct Tape {
  std::vector<std::vector<double>> inputs;  // input to layer l (x for l = 0)
  std::vector<std::vector<double>> pre;     // pre-activation of layer l
  std::vector<double> output;               // head output (logits)
  std::vector<double> probs;                // softmax(pre.back()), LogSoftmax head only

  /// Smallest |pre-activation| over hidden units; used to stay away from ReLU kinks.
  double min_hidden_margin() const;
};

/// Feed-forward ReLU network evaluated against an external flat weight vector.
class Network {
 public:
  explicit Network(ModelSpec spec);

  const ModelSpec& spec() const { return spec_; }
  const WeightLayout& layout() const { return layout_; }
  std::size_t weight_count() const { return layout_.size(); }
  std::size_t input_dim() const { return spec_.input_dim(); }
  std::size_t output_dim() const { return spec_.output_dim(); }

  Tape record(std::span<const double> w, std::span<const double> x) const;

  /// grad = J^T v for the recorded point (overwrites grad, length W).
  /// ReLU'(0) is taken as 0.
  void pullback(std::span<const double> w, const Tape& tape, std::span<const double> v,
                std::span<double> grad) const;

  /// Row-wise pullback of unit vectors, one reverse pass per output.
  Jacobian jacobian(std::span<const double> w, const Tape& tape) const;

  void check_weights(std::span<const double> w) const;
  void check_input(std::span<const double> x) const;

 private:
  ModelSpec spec_;
  WeightLayout layout_;
};

/// Log-softmax (or identity) outputs of the network at x.
std::vector<double> forward(const Network& net, std::span<const double> w, std::span<const double> x);

/// Exact reverse-mode Jacobian of the outputs with respect to every weight.
Jacobian per_sample_jacobian(const Network& net, std::span<const double> w, std::span<const double> x);

/// Training losses over the network outputs.
enum class Loss {
  NLL,           // -y . f  on log-softmax outputs (categorical cross-entropy)
  SquaredError,  // sum_k (f_k - y_k)^2
};

std::string to_string(Loss loss);
Loss loss_from_string(const std::string& name);

/// -logits[argmax y]. Throws InputError if y is not one-hot.
double loss_nll(std::span<const double> logits, std::span<const double> y);

/// dL/df for the NLL loss: exactly -y, independent of the logits.
std::vector<double> loss_grad_wrt_output(std::span<const double> logits, std::span<const double> y);

double loss_value(Loss loss, std::span<const double> outputs, std::span<const double> y);
std::vector<double> loss_gradient(Loss loss, std::span<const double> outputs, std::span<const double> y);

/// Throws InputError unless y has exactly one entry equal to 1 and the rest 0.
std::size_t one_hot_class(std::span<const double> y);

/// Mean-over-samples loss gradient (1/M) sum_i J_i^T dL/df(f(x_i), y_i).
///
/// Per-sample contributions are summed in index order and the sum is divided
/// by M, so the result is reproducible bit for bit.
std::vector<double> batch_loss_gradient(const Network& net, std::span<const double> w,
                                        const LabeledDataset& data, Loss loss = Loss::NLL);

/// Index of the largest entry, lowest index on ties.
std::size_t argmax(std::span<const double> v);

}  // namespace epk
