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

#include "epk/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "epk/errors.hpp"
#include "epk/parallel.hpp"

namespace epk {

std::size_t ModelSpec::weight_count() const {
  std::size_t total = 0;
  for (std::size_t l = 0; l + 1 < layer_widths.size(); ++l)
    total += (layer_widths[l] + 1) * layer_widths[l + 1];
  return total;
}

void ModelSpec::validate() const {
  if (layer_widths.size() < 2)
    throw ConfigError("model needs at least an input and an output width");
  for (std::size_t width : layer_widths)
    if (width == 0) throw ConfigError("layer widths must be >= 1");
}

nlohmann::json ModelSpec::to_json() const {
  return {{"layers", layer_widths},
          {"activation", "relu"},
          {"head", output_head == Head::LogSoftmax ? "log_softmax" : "identity"}};
}

ModelSpec ModelSpec::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("model spec must be a JSON object");
  for (const auto& [key, value] : j.items())
    if (key != "layers" && key != "activation" && key != "head")
      throw ConfigError("unknown model key '" + key + "'");
  ModelSpec spec;
  try {
    spec.layer_widths = j.at("layers").get<std::vector<std::size_t>>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model.layers: ") + e.what());
  }
  const std::string activation = j.value("activation", "relu");
  if (activation != "relu") throw ConfigError("unsupported activation '" + activation + "'");
  const std::string head = j.value("head", "log_softmax");
  if (head == "log_softmax") {
    spec.output_head = Head::LogSoftmax;
  } else if (head == "identity") {
    spec.output_head = Head::Identity;
  } else {
    throw ConfigError("unsupported head '" + head + "'");
  }
  spec.validate();
  return spec;
}

WeightLayout::WeightLayout(const ModelSpec& spec) {
  spec.validate();
  std::size_t offset = 0;
  for (std::size_t l = 0; l < spec.num_linear_layers(); ++l) {
    LayerSlot slot;
    slot.cols = spec.layer_widths[l];
    slot.rows = spec.layer_widths[l + 1];
    slot.weight_offset = offset;
    offset += slot.rows * slot.cols;
    slot.bias_offset = offset;
    offset += slot.rows;
    layers_.push_back(slot);
  }
  size_ = offset;
}

double Tape::min_hidden_margin() const {
  double margin = std::numeric_limits<double>::infinity();
  for (std::size_t l = 0; l + 1 < pre.size(); ++l)
    for (double z : pre[l]) margin = std::min(margin, std::abs(z));
  return margin;
}

Network::Network(ModelSpec spec) : spec_(std::move(spec)), layout_(spec_) {}

void Network::check_weights(std::span<const double> w) const {
  if (w.size() != layout_.size())
    throw ConfigError("weight vector has " + std::to_string(w.size()) + " entries, model expects " +
                      std::to_string(layout_.size()));
}

void Network::check_input(std::span<const double> x) const {
  if (x.size() != input_dim())
    throw ConfigError("input has dimension " + std::to_string(x.size()) + ", model expects " +
                      std::to_string(input_dim()));
}

Tape Network::record(std::span<const double> w, std::span<const double> x) const {
  check_weights(w);
  check_input(x);
  const auto& layers = layout_.layers();
  Tape tape;
  tape.inputs.reserve(layers.size());
  tape.pre.reserve(layers.size());
  std::vector<double> activation(x.begin(), x.end());
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const LayerSlot& slot = layers[l];
    std::vector<double> z(slot.rows);
    for (std::size_t o = 0; o < slot.rows; ++o) {
      const double* row = w.data() + slot.weight_offset + o * slot.cols;
      double acc = 0.0;
      for (std::size_t i = 0; i < slot.cols; ++i) acc += row[i] * activation[i];
      z[o] = acc + w[slot.bias_offset + o];
    }
    tape.inputs.push_back(std::move(activation));
    if (l + 1 < layers.size()) {
      activation.resize(slot.rows);
      for (std::size_t o = 0; o < slot.rows; ++o) activation[o] = z[o] > 0.0 ? z[o] : 0.0;
    }
    tape.pre.push_back(std::move(z));
  }

  const std::vector<double>& logits = tape.pre.back();
  if (spec_.output_head == Head::Identity) {
    tape.output = logits;
    return tape;
  }
  const double peak = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (double z : logits) total += std::exp(z - peak);
  const double log_norm = peak + std::log(total);
  tape.output.resize(logits.size());
  tape.probs.resize(logits.size());
  for (std::size_t k = 0; k < logits.size(); ++k) {
    tape.output[k] = logits[k] - log_norm;
    tape.probs[k] = std::exp(tape.output[k]);
  }
  return tape;
}

void Network::pullback(std::span<const double> w, const Tape& tape, std::span<const double> v,
                       std::span<double> grad) const {
  const auto& layers = layout_.layers();
  const std::size_t K = output_dim();
  if (v.size() != K) throw ConfigError("cotangent must have one entry per output");
  if (grad.size() != layout_.size()) throw ConfigError("gradient buffer has wrong length");

  std::vector<double> delta(K);
  if (spec_.output_head == Head::LogSoftmax) {
    double total = 0.0;
    for (std::size_t k = 0; k < K; ++k) total += v[k];
    for (std::size_t k = 0; k < K; ++k) delta[k] = v[k] - tape.probs[k] * total;
  } else {
    std::copy(v.begin(), v.end(), delta.begin());
  }

  for (std::size_t l = layers.size(); l-- > 0;) {
    const LayerSlot& slot = layers[l];
    const std::vector<double>& in = tape.inputs[l];
    for (std::size_t o = 0; o < slot.rows; ++o) {
      double* g = grad.data() + slot.weight_offset + o * slot.cols;
      const double d = delta[o];
      for (std::size_t i = 0; i < slot.cols; ++i) g[i] = d * in[i];
      grad[slot.bias_offset + o] = d;
    }
    if (l == 0) break;
    std::vector<double> upstream(slot.cols, 0.0);
    for (std::size_t o = 0; o < slot.rows; ++o) {
      const double* row = w.data() + slot.weight_offset + o * slot.cols;
      const double d = delta[o];
      for (std::size_t i = 0; i < slot.cols; ++i) upstream[i] += row[i] * d;
    }
    const std::vector<double>& z_prev = tape.pre[l - 1];
    for (std::size_t i = 0; i < slot.cols; ++i)
      if (!(z_prev[i] > 0.0)) upstream[i] = 0.0;
    delta = std::move(upstream);
  }
}

Jacobian Network::jacobian(std::span<const double> w, const Tape& tape) const {
  const std::size_t K = output_dim();
  Jacobian jac(K, layout_.size());
  std::vector<double> unit(K, 0.0);
  for (std::size_t k = 0; k < K; ++k) {
    unit[k] = 1.0;
    pullback(w, tape, unit, jac.row(k));
    unit[k] = 0.0;
  }
  return jac;
}

std::vector<double> forward(const Network& net, std::span<const double> w, std::span<const double> x) {
  return net.record(w, x).output;
}

Jacobian per_sample_jacobian(const Network& net, std::span<const double> w, std::span<const double> x) {
  return net.jacobian(w, net.record(w, x));
}

std::string to_string(Loss loss) { return loss == Loss::NLL ? "nll" : "squared_error"; }

Loss loss_from_string(const std::string& name) {
  if (name == "nll") return Loss::NLL;
  if (name == "squared_error") return Loss::SquaredError;
  throw ConfigError("unknown loss '" + name + "'");
}

std::size_t one_hot_class(std::span<const double> y) {
  std::size_t hot = y.size();
  for (std::size_t k = 0; k < y.size(); ++k) {
    if (y[k] == 1.0) {
      if (hot != y.size()) throw InputError("label vector has more than one hot entry");
      hot = k;
    } else if (y[k] != 0.0) {
      throw InputError("label vector entries must be 0 or 1");
    }
  }
  if (hot == y.size()) throw InputError("label vector has no hot entry");
  return hot;
}

double loss_nll(std::span<const double> logits, std::span<const double> y) {
  if (logits.size() != y.size()) throw InputError("logits and label sizes differ");
  return -logits[one_hot_class(y)];
}

std::vector<double> loss_grad_wrt_output(std::span<const double> logits, std::span<const double> y) {
  if (logits.size() != y.size()) throw InputError("logits and label sizes differ");
  one_hot_class(y);
  std::vector<double> g(y.size());
  for (std::size_t k = 0; k < y.size(); ++k) g[k] = -y[k];
  return g;
}

double loss_value(Loss loss, std::span<const double> outputs, std::span<const double> y) {
  if (loss == Loss::NLL) return loss_nll(outputs, y);
  if (outputs.size() != y.size()) throw InputError("outputs and label sizes differ");
  double total = 0.0;
  for (std::size_t k = 0; k < y.size(); ++k) total += (outputs[k] - y[k]) * (outputs[k] - y[k]);
  return total;
}

std::vector<double> loss_gradient(Loss loss, std::span<const double> outputs, std::span<const double> y) {
  if (loss == Loss::NLL) return loss_grad_wrt_output(outputs, y);
  if (outputs.size() != y.size()) throw InputError("outputs and label sizes differ");
  std::vector<double> g(y.size());
  for (std::size_t k = 0; k < y.size(); ++k) g[k] = 2.0 * (outputs[k] - y[k]);
  return g;
}

std::vector<double> batch_loss_gradient(const Network& net, std::span<const double> w,
                                        const LabeledDataset& data, Loss loss) {
  net.check_weights(w);
  if (data.size() == 0) throw InputError("batch gradient needs at least one sample");
  if (data.dim() != net.input_dim() || data.num_classes() != net.output_dim())
    throw ConfigError("dataset dimensions do not match the model");

  const std::size_t W = net.weight_count();
  const std::size_t M = data.size();
  constexpr std::size_t kBlock = 64;
  std::vector<double> sum(W, 0.0);
  std::vector<double> block(kBlock * W);
  for (std::size_t start = 0; start < M; start += kBlock) {
    const std::size_t count = std::min(kBlock, M - start);
    parallel_for(count, [&](std::size_t b) {
      const std::size_t i = start + b;
      const Tape tape = net.record(w, data.input(i));
      const auto g = loss_gradient(loss, tape.output, data.onehot(i));
      net.pullback(w, tape, g, std::span<double>(block.data() + b * W, W));
    });
    for (std::size_t b = 0; b < count; ++b) {
      const double* g = block.data() + b * W;
      for (std::size_t j = 0; j < W; ++j) sum[j] += g[j];
    }
  }
  const auto m = static_cast<double>(M);
  for (double& s : sum) s /= m;
  return sum;
}

std::size_t argmax(std::span<const double> v) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < v.size(); ++k)
    if (v[k] > v[best]) best = k;
  return best;
}

}  // namespace epk
