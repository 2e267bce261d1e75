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

#include "epk/experiment.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <map>

#include "epk/csv.hpp"
#include "epk/errors.hpp"
#include "epk/parallel.hpp"
#include "epk/rng.hpp"
#include "epk/trainer.hpp"

namespace epk {

namespace fs = std::filesystem;

namespace {

template <typename T>
T get_as(const nlohmann::json& value, const std::string& where) {
  try {
    return value.get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

fs::path resolve(const fs::path& base, const std::string& p) {
  const fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

/// Round-robin over classes: 0, 1, .., K-1, 0, 1, ..
LabeledDataset interleave_classes(const LabeledDataset& data, std::size_t count) {
  std::vector<std::vector<std::size_t>> by_class(data.num_classes());
  for (std::size_t i = 0; i < data.size(); ++i) by_class[data.label(i)].push_back(i);
  std::vector<std::size_t> picks;
  for (std::size_t round = 0; picks.size() < count; ++round) {
    bool any = false;
    for (const auto& members : by_class)
      if (round < members.size() && picks.size() < count) {
        picks.push_back(members[round]);
        any = true;
      }
    if (!any) break;
  }
  return data.subset(picks);
}

template <typename F>
auto run_stage(const std::string& name, F&& body) -> decltype(body()) {
  const std::string prefix = "stage '" + name + "': ";
  try {
    return body();
  } catch (const FormatError& e) {
    throw FormatError(prefix + e.what());
  } catch (const IoError& e) {
    throw IoError(prefix + e.what());
  } catch (const ReductionRefused& e) {
    throw ReductionRefused(prefix + e.what());
  } catch (const InputError& e) {
    throw InputError(prefix + e.what());
  } catch (const ConfigError& e) {
    throw ConfigError(prefix + e.what());
  } catch (const NumericalError& e) {
    throw NumericalError(prefix + e.what());
  } catch (const Error& e) {
    throw Error(prefix + e.what());
  } catch (const fs::filesystem_error& e) {
    throw IoError(prefix + e.what());
  }
}

std::vector<std::string> numbered(const std::string& stem, std::size_t n) {
  std::vector<std::string> out;
  for (std::size_t k = 0; k < n; ++k) out.push_back(stem + std::to_string(k));
  return out;
}

std::vector<std::string> concat(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

}  // namespace

// ---------------------------------------------------------------------------
// Data sources

nlohmann::json DataSource::to_json() const {
  if (kind == "blobs") return {{"kind", kind}, {"spec", blobs.to_json()}};
  if (kind == "csv") return {{"kind", kind}, {"path", path}, {"classes", classes}};
  return {{"kind", kind},           {"images", images},
          {"labels", labels},       {"per_class", per_class},
          {"skip_per_class", skip_per_class}, {"downsample", downsample}};
}

DataSource DataSource::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("data source must be a JSON object");
  DataSource src;
  src.kind = get_as<std::string>(j.value("kind", nlohmann::json("blobs")), "data.kind");
  std::vector<std::string> allowed;
  if (src.kind == "blobs") {
    allowed = {"kind", "spec"};
  } else if (src.kind == "csv") {
    allowed = {"kind", "path", "classes"};
  } else if (src.kind == "mnist") {
    allowed = {"kind", "images", "labels", "per_class", "skip_per_class", "downsample"};
  } else {
    throw ConfigError("unknown data source kind '" + src.kind + "' (expected blobs|csv|mnist)");
  }
  for (const auto& [key, value] : j.items())
    if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
      throw ConfigError("unknown key '" + key + "' for " + src.kind + " data source");
  if (src.kind == "blobs") {
    if (j.contains("spec")) src.blobs = BlobSpec::from_json(j.at("spec"));
  } else if (src.kind == "csv") {
    if (!j.contains("path")) throw ConfigError("csv data source needs 'path'");
    src.path = get_as<std::string>(j.at("path"), "data.path");
    src.classes = get_as<std::size_t>(j.value("classes", nlohmann::json(0)), "data.classes");
  } else {
    if (!j.contains("images") || !j.contains("labels"))
      throw ConfigError("mnist data source needs 'images' and 'labels'");
    src.images = get_as<std::string>(j.at("images"), "data.images");
    src.labels = get_as<std::string>(j.at("labels"), "data.labels");
    src.per_class = get_as<std::size_t>(j.value("per_class", nlohmann::json(50)), "data.per_class");
    src.skip_per_class = get_as<std::size_t>(j.value("skip_per_class", nlohmann::json(0)), "data.skip_per_class");
    src.downsample = get_as<std::size_t>(j.value("downsample", nlohmann::json(14)), "data.downsample");
  }
  return src;
}

LabeledDataset load_mnist_window(const fs::path& images, const fs::path& labels, std::size_t skip,
                                 std::size_t per_class, std::size_t downsample) {
  if (per_class == 0) throw ConfigError("mnist per_class must be >= 1");
  const LabeledDataset all = load_mnist(images, labels, skip + per_class, downsample);
  if (skip == 0) return all;
  std::map<std::uint32_t, std::size_t> rank;
  std::vector<std::size_t> keep;
  for (std::size_t i = 0; i < all.size(); ++i)
    if (rank[all.label(i)]++ >= skip) keep.push_back(i);
  return all.subset(keep);
}

LabeledDataset DataSource::load(const fs::path& base) const {
  if (kind == "blobs") return gen_blobs(blobs);
  if (kind == "csv") return load_dataset_csv(resolve(base, path), classes);
  if (kind == "mnist")
    return load_mnist_window(resolve(base, images), resolve(base, labels), skip_per_class, per_class, downsample);
  throw ConfigError("unknown data source kind '" + kind + "'");
}

// ---------------------------------------------------------------------------
// Configuration

nlohmann::json GpConfig::to_json() const {
  return {{"enabled", enabled},   {"grid", grid},       {"train_points", train_points},
          {"T", integration_steps}, {"kernel", kernel}, {"targets", targets},
          {"jitter", jitter},     {"mc_samples", mc_samples}, {"mc_seed", mc_seed}};
}

GpConfig GpConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("gp block must be a JSON object");
  GpConfig gp;
  gp.enabled = true;
  for (const auto& [key, value] : j.items()) {
    const std::string where = "gp." + key;
    if (key == "enabled") gp.enabled = get_as<bool>(value, where);
    else if (key == "grid") gp.grid = get_as<std::string>(value, where);
    else if (key == "train_points") gp.train_points = get_as<std::size_t>(value, where);
    else if (key == "T") gp.integration_steps = get_as<std::size_t>(value, where);
    else if (key == "kernel") gp.kernel = get_as<std::string>(value, where);
    else if (key == "targets") gp.targets = get_as<std::string>(value, where);
    else if (key == "jitter") gp.jitter = get_as<double>(value, where);
    else if (key == "mc_samples") gp.mc_samples = get_as<std::size_t>(value, where);
    else if (key == "mc_seed") gp.mc_seed = get_as<std::uint64_t>(value, where);
    else throw ConfigError("unknown gp key '" + key + "'");
  }
  gram_kernel_from_string(gp.kernel);
  if (gp.targets != "onehot" && gp.targets != "model")
    throw ConfigError("gp.targets must be 'onehot' or 'model'");
  if (gp.train_points == 0) throw ConfigError("gp.train_points must be >= 1");
  if (gp.integration_steps == 0) throw ConfigError("gp.T must be >= 1");
  if (gp.mc_samples < 2) throw ConfigError("gp.mc_samples must be >= 2");
  return gp;
}

void ExperimentConfig::validate() const {
  model.validate();
  if (schedule.empty()) {
    if (steps == 0) throw ConfigError("steps must be >= 1 (an empty training path has nothing to explain)");
    if (!(epsilon > 0.0) || !std::isfinite(epsilon)) throw ConfigError("epsilon must be positive");
  } else {
    for (double e : schedule)
      if (!(e > 0.0) || !std::isfinite(e)) throw ConfigError("every scheduled step size must be positive");
    if (steps != 0 && steps != schedule.size())
      throw ConfigError("steps disagrees with the length of the epsilon schedule");
  }
  if (integration_steps.empty()) throw ConfigError("T must list at least one value");
  for (std::size_t T : integration_steps)
    if (T == 0) throw ConfigError("T values must be >= 1");
  if (test_points == 0) throw ConfigError("test_points must be >= 1");
  if (pathdiag_resolution < 2) throw ConfigError("pathdiag_resolution must be >= 2");
  if (contrib_x.size() > model.input_dim()) throw ConfigError("contrib_x is longer than the input dimension");
  if (output_dir.empty()) throw ConfigError("output_dir must not be empty");
  if (data.kind == "csv" && !test) throw ConfigError("a csv data source needs an explicit test source");
}

std::vector<double> ExperimentConfig::step_sizes() const {
  if (!schedule.empty()) return schedule;
  return std::vector<double>(steps, epsilon);
}

nlohmann::json ExperimentConfig::to_json() const {
  nlohmann::json j;
  j["model"] = model.to_json();
  j["data"] = data.to_json();
  if (test) j["test"] = test->to_json();
  j["test_points"] = test_points;
  j["loss"] = to_string(loss);
  if (schedule.empty()) {
    j["epsilon"] = epsilon;
    j["steps"] = steps;
  } else {
    j["epsilon"] = schedule;
  }
  j["seed"] = seed;
  if (integration_steps.size() == 1) j["T"] = integration_steps.front();
  else j["T"] = integration_steps;
  j["quadrature"] = to_string(rule);
  j["align_points"] = align_points;
  j["contrib_point"] = contrib_point;
  if (!contrib_x.empty()) j["contrib_x"] = contrib_x;
  j["pathdiag_resolution"] = pathdiag_resolution;
  if (gp.enabled) j["gp"] = gp.to_json();
  j["threads"] = threads;
  j["output_dir"] = output_dir;
  if (!note.empty()) j["note"] = note;
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ConfigError("experiment config must be a JSON object");
  ExperimentConfig c;
  bool have_model = false;
  for (const auto& [key, value] : j.items()) {
    if (key == "model") {
      c.model = ModelSpec::from_json(value);
      have_model = true;
    } else if (key == "data") {
      c.data = DataSource::from_json(value);
    } else if (key == "test") {
      c.test = DataSource::from_json(value);
    } else if (key == "test_points") {
      c.test_points = get_as<std::size_t>(value, key);
    } else if (key == "loss") {
      c.loss = loss_from_string(get_as<std::string>(value, key));
    } else if (key == "epsilon") {
      if (value.is_array()) c.schedule = get_as<std::vector<double>>(value, key);
      else c.epsilon = get_as<double>(value, key);
    } else if (key == "steps") {
      c.steps = get_as<std::size_t>(value, key);
    } else if (key == "seed") {
      c.seed = get_as<std::uint64_t>(value, key);
    } else if (key == "T") {
      if (value.is_array()) c.integration_steps = get_as<std::vector<std::size_t>>(value, key);
      else c.integration_steps = {get_as<std::size_t>(value, key)};
    } else if (key == "quadrature") {
      c.rule = quadrature_from_string(get_as<std::string>(value, key));
    } else if (key == "align_points") {
      c.align_points = get_as<std::size_t>(value, key);
    } else if (key == "contrib_point") {
      c.contrib_point = get_as<std::size_t>(value, key);
    } else if (key == "contrib_x") {
      c.contrib_x = get_as<std::vector<double>>(value, key);
    } else if (key == "pathdiag_resolution") {
      c.pathdiag_resolution = get_as<std::size_t>(value, key);
    } else if (key == "gp") {
      c.gp = GpConfig::from_json(value);
    } else if (key == "threads") {
      c.threads = get_as<int>(value, key);
    } else if (key == "output_dir") {
      c.output_dir = get_as<std::string>(value, key);
    } else if (key == "note") {
      c.note = get_as<std::string>(value, key);
    } else {
      throw ConfigError("unknown experiment key '" + key + "'");
    }
  }
  if (!have_model) throw ConfigError("experiment config needs a 'model'");
  if (!c.schedule.empty() && c.steps == 0) c.steps = c.schedule.size();
  c.validate();
  if (!c.schedule.empty()) c.steps = 0;
  return c;
}

ExperimentConfig ExperimentConfig::load(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path.string() + " is not valid JSON: " + e.what());
  }
  return from_json(j);
}

LabeledDataset load_test_set(const ExperimentConfig& config, const fs::path& base) {
  if (config.test) return interleave_classes(config.test->load(base), config.test_points);
  const DataSource& src = config.data;
  if (src.kind == "blobs") {
    BlobSpec spec = src.blobs;
    spec.seed = splitmix64(spec.seed);
    const std::size_t K = spec.means.size();
    spec.per_class_count = (config.test_points + K - 1) / K;
    return interleave_classes(gen_blobs(spec), config.test_points);
  }
  if (src.kind == "mnist") {
    const std::size_t per = (config.test_points + 9) / 10;
    return interleave_classes(load_mnist_window(resolve(base, src.images), resolve(base, src.labels),
                                                src.skip_per_class + src.per_class, per, src.downsample),
                              config.test_points);
  }
  throw ConfigError("a " + src.kind + " data source needs an explicit test source");
}

// ---------------------------------------------------------------------------
// Artifact writers

void write_predictions_csv(const fs::path& path, const std::vector<PredictionReport>& reports) {
  const std::size_t K = reports.empty() ? 0 : reports.front().kernel_logits.size();
  CsvWriter out(path, concat(concat({"point"}, numbered("kernel_", K)), {"predicted"}));
  for (std::size_t p = 0; p < reports.size(); ++p) {
    out.add(p);
    for (double v : reports[p].kernel_logits) out.add(v);
    out.add(argmax(reports[p].kernel_logits));
    out.end_row();
  }
  out.close();
}

void write_compare_csv(const fs::path& path, const std::vector<PredictionReport>& reports) {
  const std::size_t K = reports.empty() ? 0 : reports.front().kernel_logits.size();
  auto header = concat(concat(concat({"point"}, numbered("model_", K)), numbered("kernel_", K)), numbered("bias_", K));
  header.push_back("max_abs_err");
  CsvWriter out(path, header);
  for (std::size_t p = 0; p < reports.size(); ++p) {
    const auto& r = reports[p];
    out.add(p);
    for (double v : r.model_logits) out.add(v);
    for (double v : r.kernel_logits) out.add(v);
    for (double v : r.bias) out.add(v);
    out.add(r.max_abs_err);
    out.end_row();
  }
  out.close();
}

void write_alignment_csv(const fs::path& path, const std::vector<std::vector<AlignmentRecord>>& records) {
  CsvWriter out(path, {"point", "step", "class", "epk_dpk_gap", "epk_ntk0_gap", "epk_ntkN_gap",
                       "cum_epk_dpk_gap", "cum_epk_ntk0_gap", "cum_epk_ntkN_gap"});
  for (std::size_t p = 0; p < records.size(); ++p)
    for (const auto& rec : records[p])
      for (std::size_t k = 0; k < rec.epk_dpk_gap.size(); ++k) {
        out.add(p).add(rec.step).add(k);
        out.add(rec.epk_dpk_gap[k]).add(rec.epk_ntk0_gap[k]).add(rec.epk_ntkN_gap[k]);
        out.add(rec.cum_epk_dpk_gap[k]).add(rec.cum_epk_ntk0_gap[k]).add(rec.cum_epk_ntkN_gap[k]);
        out.end_row();
      }
  out.close();
}

void write_contrib_csv(const fs::path& path, const ContributionReport& report, const LabeledDataset& data,
                       std::span<const double> x) {
  CsvWriter out(path, concat({"train_index", "label", "distance"}, numbered("contrib_", report.classes)));
  for (std::size_t i = 0; i < report.samples; ++i) {
    const auto xi = data.input(i);
    double sq = 0.0;
    for (std::size_t d = 0; d < xi.size(); ++d) sq += (xi[d] - x[d]) * (xi[d] - x[d]);
    out.add(i).add(static_cast<std::size_t>(data.label(i))).add(std::sqrt(sq));
    for (double v : report.row(i)) out.add(v);
    out.end_row();
  }
  out.close();
}

void write_pathdiag_csv(const fs::path& path, const std::vector<PathDiagnosticRecord>& records) {
  const std::size_t K = records.empty() ? 0 : records.front().class_grad_dot.size();
  CsvWriter out(path, concat({"t", "accuracy", "mean_loss", "l2_norm", "grad_dot_direction"},
                             numbered("grad_dot_", K)));
  for (const auto& r : records) {
    out.add(r.t).add(r.accuracy).add(r.mean_loss).add(r.l2_norm).add(r.grad_dot_direction);
    for (double v : r.class_grad_dot) out.add(v);
    out.end_row();
  }
  out.close();
}

void write_field_csv(const fs::path& path, const PosteriorField& field, const PointSet& grid) {
  const std::size_t K = field.classes;
  auto header = concat(concat({"point", "x0", "x1"}, numbered("mean_", K)), numbered("variance_", K));
  header.push_back("total_variance");
  header = concat(header, numbered("mc_std_", K));
  CsvWriter out(path, header);
  for (std::size_t p = 0; p < field.points; ++p) {
    const auto x = grid.point(p);
    out.add(p).add(x[0]).add(x.size() > 1 ? x[1] : 0.0);
    for (std::size_t k = 0; k < K; ++k) out.add(field.mean[p * K + k]);
    for (std::size_t k = 0; k < K; ++k) out.add(field.variance[p * K + k]);
    out.add(field.total_variance[p]);
    for (std::size_t k = 0; k < K; ++k) out.add(field.mc_prob_std.empty() ? 0.0 : field.mc_prob_std[p * K + k]);
    out.end_row();
  }
  out.close();
}

void write_gram_csv(const fs::path& path, const GramMatrix& g) {
  CsvWriter out(path, {"row_point", "row_class", "col_point", "col_class", "value"});
  for (std::size_t i = 0; i < g.rows; ++i)
    for (std::size_t k = 0; k < g.classes; ++k)
      for (std::size_t j = 0; j < g.cols; ++j)
        for (std::size_t c = 0; c < g.classes; ++c) {
          out.add(i).add(k).add(j).add(c);
          out.add(g.flat(static_cast<Eigen::Index>(i * g.classes + k), static_cast<Eigen::Index>(j * g.classes + c)));
          out.end_row();
        }
  out.close();
}

// ---------------------------------------------------------------------------
// Orchestration

ExperimentResult run_experiment(const ExperimentConfig& config, const fs::path& base) {
  config.validate();
  if (config.threads > 0) set_thread_limit(config.threads);
  const auto started = std::chrono::steady_clock::now();

  const fs::path out = resolve(base, config.output_dir);
  fs::path partial = out;
  partial += ".partial";
  if (fs::exists(out) && !fs::exists(out / "manifest.json"))
    throw IoError("output directory " + out.string() + " exists and is not an experiment directory");

  nlohmann::json manifest;
  try {
    run_stage("prepare output", [&] {
      fs::remove_all(partial);
      fs::create_directories(partial);
    });

    const LabeledDataset data = run_stage("load data", [&] { return config.data.load(base); });
    const LabeledDataset test = run_stage("load test data", [&] { return load_test_set(config, base); });
    run_stage("check shapes", [&] {
      if (data.dim() != config.model.input_dim() || test.dim() != config.model.input_dim())
        throw ConfigError("model input width " + std::to_string(config.model.input_dim()) +
                          " does not match data dimension " + std::to_string(data.dim()));
      if (data.num_classes() != config.model.output_dim())
        throw ConfigError("model output width " + std::to_string(config.model.output_dim()) +
                          " does not match " + std::to_string(data.num_classes()) + " classes");
    });

    const Trajectory traj = run_stage("train", [&] {
      TrainOptions options;
      options.loss = config.loss;
      options.seed = config.seed;
      const auto eps = config.step_sizes();
      return train_full_batch(config.model, data, eps, options);
    });
    run_stage("save trajectory", [&] { save_trajectory(traj, partial / "trajectory.epk"); });
    const Network net(config.model);

    const auto recon = run_stage("step reconstruction", [&] { return step_reconstruction_errors(traj, data); });
    const PointSet points = points_of(test);
    const std::size_t T_max = *std::max_element(config.integration_steps.begin(), config.integration_steps.end());
    const PathKernelOptions path_opts{T_max, config.rule};

    nlohmann::json compare = nlohmann::json::array();
    run_stage("predict", [&] {
      for (std::size_t T : config.integration_steps) {
        const auto reports = kernel_predict(traj, data, points, TestFeature::Path, {T, config.rule});
        const std::string name =
            config.integration_steps.size() == 1 ? "compare.csv" : "compare_T" + std::to_string(T) + ".csv";
        write_compare_csv(partial / name, reports);
        if (T == T_max) write_predictions_csv(partial / "preds.csv", reports);
        double worst = 0.0, total = 0.0;
        for (const auto& r : reports) {
          worst = std::max(worst, r.max_abs_err);
          total += r.max_abs_err;
        }
        compare.push_back({{"T", T}, {"file", name}, {"max_abs_err", worst},
                           {"mean_abs_err", total / static_cast<double>(reports.size())}});
      }
    });

    double max_dpk_gap = 0.0;
    run_stage("align", [&] {
      PointSet subset;
      subset.dim = points.dim;
      const std::size_t n = std::min(config.align_points, points.size());
      subset.values.assign(points.values.begin(), points.values.begin() + static_cast<std::ptrdiff_t>(n * points.dim));
      const auto records = alignment_error(traj, data, subset, path_opts);
      for (const auto& per_point : records)
        for (const auto& rec : per_point)
          for (double g : rec.epk_dpk_gap) max_dpk_gap = std::max(max_dpk_gap, std::abs(g));
      write_alignment_csv(partial / "align.csv", records);
    });

    std::vector<double> query;
    run_stage("contrib", [&] {
      if (!config.contrib_x.empty()) {
        query.assign(config.model.input_dim(), 0.0);
        std::copy(config.contrib_x.begin(), config.contrib_x.end(), query.begin());
      } else {
        if (config.contrib_point >= points.size())
          throw InputError("contrib_point " + std::to_string(config.contrib_point) + " out of range");
        const auto x = points.point(config.contrib_point);
        query.assign(x.begin(), x.end());
      }
      const auto report = kernel_contributions(traj, data, query, path_opts);
      write_contrib_csv(partial / "contrib.csv", report, data, query);
    });

    nlohmann::json gp_info = nullptr;
    if (config.gp.enabled) {
      run_stage("gp", [&] {
        const PointSet grid = parse_grid(config.gp.grid, data.dim());
        const std::size_t n = std::min(config.gp.train_points, data.size());
        std::vector<std::size_t> picks;
        for (std::size_t i = 0; i < n; ++i) picks.push_back(i * data.size() / n);
        const LabeledDataset cond_data = data.subset(picks);
        const PointSet cond = points_of(cond_data);
        const GramOptions gopts{gram_kernel_from_string(config.gp.kernel), {config.gp.integration_steps, config.rule}};
        const GramMatrix tt = path_gram(traj, data, cond, cond, gopts);
        const GramMatrix qt = path_gram(traj, data, grid, cond, gopts);
        const auto qq = path_gram_diagonal(traj, data, grid, gopts);
        std::vector<double> targets;
        for (std::size_t i = 0; i < cond_data.size(); ++i) {
          if (config.gp.targets == "model") {
            const auto f = forward(net, traj.final(), cond_data.input(i));
            targets.insert(targets.end(), f.begin(), f.end());
          } else {
            const auto y = cond_data.onehot(i);
            targets.insert(targets.end(), y.begin(), y.end());
          }
        }
        const auto prior = forward(net, traj.initial(), cond_data.input(0));
        KrigingOptions kopts;
        kopts.jitter = config.gp.jitter;
        PosteriorField field = kriging(tt, qt, qq, targets, prior, kopts);
        mc_prob_std(field, config.gp.mc_samples, config.gp.mc_seed);
        write_field_csv(partial / "field.csv", field, grid);
        const PsdReport psd = check_psd(tt);
        gp_info = {{"kernel", config.gp.kernel},
                   {"targets", config.gp.targets},
                   {"prior_mean", prior},
                   {"jitter", field.jitter},
                   {"min_raw_variance", field.min_raw_variance},
                   {"train_gram_min_eig", psd.min_eig},
                   {"train_gram_max_eig", psd.max_eig},
                   {"train_gram_symmetric_defect", psd.symmetric_defect}};
      });
    }

    nlohmann::json pathdiag;
    run_stage("pathdiag", [&] {
      const auto records = weight_path_diagnostic(traj, data, config.pathdiag_resolution);
      write_pathdiag_csv(partial / "pathdiag.csv", records);
      double lo = records.front().l2_norm, hi = lo;
      for (const auto& r : records) {
        lo = std::min(lo, r.l2_norm);
        hi = std::max(hi, r.l2_norm);
      }
      pathdiag = {{"l2_norm_start", records.front().l2_norm},
                  {"l2_norm_end", records.back().l2_norm},
                  {"l2_norm_relative_range", lo > 0.0 ? (hi - lo) / lo : 0.0}};
    });

    const double elapsed = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    manifest = {
        {"schema_version", kManifestSchemaVersion},
        {"tool", "epk"},
        {"version", kVersion},
        {"config", config.to_json()},
        {"seeds", {{"train", config.seed}, {"mc", config.gp.mc_seed}}},
        {"fingerprints", {{"train", to_hex(data.fingerprint())}, {"test", to_hex(test.fingerprint())}}},
        {"trajectory",
         {{"file", "trajectory.epk"},
          {"steps", traj.num_steps()},
          {"weights", traj.weight_count()},
          {"samples", data.size()},
          {"final_train_accuracy", accuracy(net, traj.final(), data)}}},
        {"model_note", config.data.kind == "mnist"
                           ? "fully connected ReLU network in place of a convolutional network"
                           : "fully connected ReLU network"},
        {"results",
         {{"compare", compare},
          {"step_reconstruction_max", *std::max_element(recon.begin(), recon.end())},
          {"max_abs_epk_dpk_step_gap", max_dpk_gap},
          {"pathdiag", pathdiag},
          {"gp", gp_info}}},
        {"threads", thread_limit()},
        {"wall_clock_seconds", elapsed},
    };
    run_stage("manifest", [&] {
      std::ofstream mf(partial / "manifest.json");
      mf << manifest.dump(2) << '\n';
      if (!mf) throw IoError("cannot write manifest.json");
    });
    run_stage("finalize", [&] {
      fs::remove_all(out);
      fs::rename(partial, out);
    });
  } catch (...) {
    std::error_code ignored;
    fs::remove_all(partial, ignored);
    throw;
  }
  return {out, manifest};
}

}  // namespace epk
