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

#include "epk/trainer.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include <json.hpp>

#include "epk/errors.hpp"
#include "epk/rng.hpp"

namespace epk {

namespace {

constexpr char kMagic[4] = {'E', 'P', 'K', '1'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int b = 0; b < 4; ++b) out.push_back(static_cast<std::uint8_t>(v >> (8 * b)));
}

void put_f64(std::vector<std::uint8_t>& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int b = 0; b < 8; ++b) out.push_back(static_cast<std::uint8_t>(bits >> (8 * b)));
}

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  void need(std::size_t n, const char* what) const {
    if (bytes_.size() - offset_ < n)
      throw FormatError(std::string("trajectory truncated at offset ") + std::to_string(offset_) +
                        " while reading " + what + " (" + std::to_string(n) + " bytes needed, " +
                        std::to_string(bytes_.size() - offset_) + " available)");
  }

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int b = 0; b < 4; ++b) v |= std::uint32_t{bytes_[offset_ + b]} << (8 * b);
    offset_ += 4;
    return v;
  }

  double f64(const char* what) {
    need(8, what);
    std::uint64_t v = 0;
    for (int b = 0; b < 8; ++b) v |= std::uint64_t{bytes_[offset_ + b]} << (8 * b);
    offset_ += 8;
    return std::bit_cast<double>(v);
  }

  std::span<const std::uint8_t> take(std::size_t n, const char* what) {
    need(n, what);
    auto s = bytes_.subspan(offset_, n);
    offset_ += n;
    return s;
  }

  std::size_t offset() const { return offset_; }
  std::size_t remaining() const { return bytes_.size() - offset_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t offset_ = 0;
};

void check_finite(std::span<const double> v, const char* what, std::size_t step) {
  for (std::size_t j = 0; j < v.size(); ++j)
    if (!std::isfinite(v[j]))
      throw NumericalError(std::string("training diverged at step ") + std::to_string(step) + ": " +
                           what + " entry " + std::to_string(j) + " is not finite");
}

}  // namespace

std::span<const double> Trajectory::checkpoint(std::size_t s) const {
  const std::size_t W = weight_count();
  if (s > num_steps())
    throw InputError("checkpoint " + std::to_string(s) + " out of range [0, " +
                     std::to_string(num_steps()) + "]");
  return {weights.data() + s * W, W};
}

void Trajectory::check_dataset(const LabeledDataset& data) const {
  if (data.fingerprint() != dataset_fingerprint)
    throw ConfigError("dataset fingerprint " + to_hex(data.fingerprint()) +
                      " does not match the trajectory's training set " + to_hex(dataset_fingerprint));
}

std::vector<double> init_model(const ModelSpec& spec, std::uint64_t seed) {
  const WeightLayout layout(spec);
  std::vector<double> w(layout.size(), 0.0);
  Pcg32 rng(seed);
  const auto& layers = layout.layers();
  for (std::size_t l = 0; l + 1 < layers.size(); ++l) {
    const LayerSlot& slot = layers[l];
    const double bound = 1.0 / std::sqrt(static_cast<double>(slot.cols));
    for (std::size_t j = 0; j < slot.rows * slot.cols; ++j)
      w[slot.weight_offset + j] = rng.uniform(-bound, bound);
    for (std::size_t o = 0; o < slot.rows; ++o) w[slot.bias_offset + o] = rng.uniform(-bound, bound);
  }
  return w;
}

Trajectory initial_trajectory(const ModelSpec& spec, const LabeledDataset& data,
                              std::span<const double> w0, std::uint64_t seed, Loss loss) {
  spec.validate();
  if (w0.size() != spec.weight_count()) throw ConfigError("initial weights have the wrong length");
  if (data.dim() != spec.input_dim() || data.num_classes() != spec.output_dim())
    throw ConfigError("dataset shape does not match the model");
  Trajectory traj;
  traj.spec = spec;
  traj.loss = loss;
  traj.weights.assign(w0.begin(), w0.end());
  traj.dataset_fingerprint = data.fingerprint();
  traj.seed = seed;
  traj.num_samples = data.size();
  return traj;
}

Trajectory train_full_batch(const ModelSpec& spec, const LabeledDataset& data,
                            std::span<const double> step_sizes, const TrainOptions& options) {
  if (step_sizes.empty()) throw ConfigError("training needs at least one step");
  for (std::size_t s = 0; s < step_sizes.size(); ++s) {
    const double eps = step_sizes[s];
    const bool ok = options.allow_zero_steps ? eps >= 0.0 : eps > 0.0;
    if (!ok || !std::isfinite(eps))
      throw ConfigError("step size " + std::to_string(s) + " must be " +
                        (options.allow_zero_steps ? ">= 0" : "> 0"));
  }
  if (data.size() == 0) throw ConfigError("training set is empty");

  const Network net(spec);
  Trajectory traj =
      initial_trajectory(spec, data, init_model(spec, options.seed), options.seed, options.loss);
  const std::size_t W = net.weight_count();
  const std::size_t N = step_sizes.size();
  traj.weights.resize((N + 1) * W);
  traj.step_sizes.assign(step_sizes.begin(), step_sizes.end());

  for (std::size_t s = 0; s < N; ++s) {
    const std::span<const double> current(traj.weights.data() + s * W, W);
    const auto grad = batch_loss_gradient(net, current, data, options.loss);
    check_finite(grad, "gradient", s);
    double* next = traj.weights.data() + (s + 1) * W;
    const double eps = step_sizes[s];
    for (std::size_t j = 0; j < W; ++j) next[j] = current[j] - eps * grad[j];
    check_finite({next, W}, "weight", s);
  }
  return traj;
}

Trajectory train_full_batch(const ModelSpec& spec, const LabeledDataset& data, double epsilon,
                            std::size_t steps, const TrainOptions& options) {
  const std::vector<double> sizes(steps, epsilon);
  return train_full_batch(spec, data, sizes, options);
}

double replay_error(const Trajectory& traj, const LabeledDataset& data) {
  traj.check_dataset(data);
  const Network net(traj.spec);
  double worst = 0.0;
  for (std::size_t s = 0; s < traj.num_steps(); ++s) {
    const auto current = traj.checkpoint(s);
    const auto stored = traj.checkpoint(s + 1);
    const auto grad = batch_loss_gradient(net, current, data, traj.loss);
    const double eps = traj.step_sizes[s];
    for (std::size_t j = 0; j < current.size(); ++j)
      worst = std::max(worst, std::abs((current[j] - eps * grad[j]) - stored[j]));
  }
  return worst;
}

std::vector<std::uint8_t> serialize_trajectory(const Trajectory& traj) {
  const nlohmann::json header = {{"spec", traj.spec.to_json()},
                                 {"N", traj.num_steps()},
                                 {"M", traj.num_samples},
                                 {"D", traj.spec.input_dim()},
                                 {"K", traj.spec.output_dim()},
                                 {"W", traj.weight_count()},
                                 {"seed", traj.seed},
                                 {"loss", to_string(traj.loss)},
                                 {"dataset_fingerprint", to_hex(traj.dataset_fingerprint)}};
  const std::string text = header.dump();
  std::vector<std::uint8_t> out;
  out.reserve(12 + text.size() + 8 * (traj.step_sizes.size() + traj.weights.size()));
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  put_u32(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  for (double eps : traj.step_sizes) put_f64(out, eps);
  for (double w : traj.weights) put_f64(out, w);
  return out;
}

Trajectory deserialize_trajectory(std::span<const std::uint8_t> bytes) {
  Reader in(bytes);
  const auto magic = in.take(4, "magic");
  if (std::memcmp(magic.data(), kMagic, 4) != 0)
    throw FormatError("bad trajectory magic at offset 0 (expected \"EPK1\")");
  const std::uint32_t version = in.u32("version");
  if (version != kVersion)
    throw FormatError("unsupported trajectory version " + std::to_string(version) + " at offset 4");
  const std::uint32_t header_len = in.u32("header length");
  const std::size_t header_offset = in.offset();
  const auto header_bytes = in.take(header_len, "header");

  Trajectory traj;
  std::size_t N = 0;
  std::size_t W = 0;
  try {
    const auto header = nlohmann::json::parse(header_bytes.begin(), header_bytes.end());
    traj.spec = ModelSpec::from_json(header.at("spec"));
    N = header.at("N").get<std::size_t>();
    traj.num_samples = header.at("M").get<std::size_t>();
    W = header.at("W").get<std::size_t>();
    traj.seed = header.at("seed").get<std::uint64_t>();
    traj.loss = loss_from_string(header.at("loss").get<std::string>());
    traj.dataset_fingerprint = fingerprint_from_hex(header.at("dataset_fingerprint").get<std::string>());
    if (header.at("D").get<std::size_t>() != traj.spec.input_dim() ||
        header.at("K").get<std::size_t>() != traj.spec.output_dim() || W != traj.weight_count())
      throw FormatError("header dimensions disagree with the model spec");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("malformed trajectory header at offset " + std::to_string(header_offset) + ": " +
                      e.what());
  } catch (const ConfigError& e) {
    throw FormatError("malformed trajectory header at offset " + std::to_string(header_offset) + ": " +
                      e.what());
  }

  traj.step_sizes.resize(N);
  for (auto& eps : traj.step_sizes) eps = in.f64("step sizes");
  in.need((N + 1) * W * 8, "weights");
  traj.weights.resize((N + 1) * W);
  for (auto& w : traj.weights) w = in.f64("weights");
  if (in.remaining() != 0)
    throw FormatError("trailing bytes after offset " + std::to_string(in.offset()));
  return traj;
}

void save_trajectory(const Trajectory& traj, const std::filesystem::path& path) {
  const auto bytes = serialize_trajectory(traj);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing '" + path.string() + "'");
}

Trajectory load_trajectory(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path.string() + "'");
  const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in),
                                        std::istreambuf_iterator<char>()};
  return deserialize_trajectory(bytes);
}

}  // namespace epk
