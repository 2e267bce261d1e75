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

#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "epk/csv.hpp"
#include "epk/data.hpp"
#include "epk/errors.hpp"
#include "epk/experiment.hpp"
#include "epk/gp.hpp"
#include "epk/parallel.hpp"
#include "epk/path_kernel.hpp"
#include "epk/trainer.hpp"

using namespace epk;

namespace {

std::vector<std::size_t> parse_layers(const std::string& text) {
  std::vector<std::size_t> widths;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    const double v = parse_number(item);
    if (!(v >= 1) || v != static_cast<double>(static_cast<std::size_t>(v)))
      throw ConfigError("bad layer width '" + item + "'");
    widths.push_back(static_cast<std::size_t>(v));
  }
  return widths;
}

nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path + " is not valid JSON: " + e.what());
  }
}

struct KernelArgs {
  std::string traj, data, inputs, out;
  std::size_t steps = 100;
  std::string rule = "left";
};

void add_kernel_args(CLI::App* cmd, KernelArgs& a, bool with_inputs = true) {
  cmd->add_option("--traj", a.traj, "Trajectory file written by 'train'")->required();
  cmd->add_option("--data", a.data, "Training dataset CSV (x0..x{D-1},label)")->required();
  if (with_inputs) cmd->add_option("--inputs", a.inputs, "Query points CSV (x0..; a label column is ignored)")->required();
  cmd->add_option("--steps,-T", a.steps, "Integration steps T per training step")->capture_default_str();
  cmd->add_option("--rule", a.rule, "Quadrature rule: left|midpoint")->capture_default_str();
  cmd->add_option("--out", a.out, "Output CSV")->required();
}

struct Loaded {
  Trajectory traj;
  LabeledDataset data;
  PathKernelOptions opts;
};

Loaded load_kernel_inputs(const KernelArgs& a) {
  Loaded l{load_trajectory(a.traj), load_dataset_csv(a.data), {a.steps, quadrature_from_string(a.rule)}};
  l.traj.check_dataset(l.data);
  return l;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Exact path kernel toolkit: train networks by full-batch gradient descent and "
               "reconstruct their predictions as kernel machines"};
  app.require_subcommand(1);
  int threads = 0;
  app.add_option("--threads", threads, "Worker thread cap (default: EPK_THREADS or all cores)");
  app.set_version_flag("--version", kVersion);

  // train
  auto* train = app.add_subcommand("train", "Train a network and write its trajectory");
  std::string t_data, t_layers, t_out, t_loss = "nll", t_head = "log_softmax";
  double t_eps = 0.05;
  std::size_t t_steps = 0;
  std::uint64_t t_seed = 0;
  train->add_option("--data", t_data, "Training dataset CSV")->required();
  train->add_option("--layers", t_layers, "Layer widths, e.g. 100,16,3")->required();
  train->add_option("--epsilon", t_eps, "Step size")->capture_default_str();
  train->add_option("--steps,-N", t_steps, "Number of gradient steps")->required();
  train->add_option("--seed", t_seed, "Initialization seed")->capture_default_str();
  train->add_option("--loss", t_loss, "nll|squared_error")->capture_default_str();
  train->add_option("--head", t_head, "log_softmax|identity")->capture_default_str();
  train->add_option("--out", t_out, "Trajectory output file")->required();

  // predict / compare
  KernelArgs pa;
  std::string p_method = "epk";
  auto* predict = app.add_subcommand("predict", "Kernel predictions for query points");
  add_kernel_args(predict, pa);
  predict->add_option("--method", p_method, "epk|dpk|ntk0|ntkN")->capture_default_str();
  KernelArgs ca;
  std::string c_method = "epk";
  auto* compare = app.add_subcommand("compare", "Model vs. kernel logits per query point");
  add_kernel_args(compare, ca);
  compare->add_option("--method", c_method, "epk|dpk|ntk0|ntkN")->capture_default_str();

  // align
  KernelArgs aa;
  auto* align = app.add_subcommand("align", "Per-step EPK minus DPK/NTK increments");
  add_kernel_args(align, aa);

  // reduce
  KernelArgs ra;
  auto* reduce = app.add_subcommand("reduce", "Single kernel machine (refused unless coefficients are constant)");
  add_kernel_args(reduce, ra);

  // contrib
  KernelArgs ka;
  std::size_t k_point = 0;
  auto* contrib = app.add_subcommand("contrib", "Per-training-point kernel contributions at one query point");
  add_kernel_args(contrib, ka);
  contrib->add_option("--point", k_point, "Row of --inputs to explain")->capture_default_str();

  // pathdiag
  KernelArgs da;
  std::size_t d_res = 21;
  auto* pathdiag = app.add_subcommand("pathdiag", "Diagnostics along the chord from w_0 to w_N");
  add_kernel_args(pathdiag, da, false);
  pathdiag->add_option("--resolution,-R", d_res, "Number of evenly spaced t values")->capture_default_str();

  // gram
  KernelArgs ga;
  std::string g_kernel = "epk";
  bool g_psd = false;
  auto* gramcmd = app.add_subcommand("gram", "Aggregated kernel Gram matrix over a point set");
  gramcmd->add_option("--points", ga.inputs, "Points CSV")->required();
  add_kernel_args(gramcmd, ga, false);
  gramcmd->add_option("--kernel", g_kernel, "epk|ntk0|ntkN")->capture_default_str();
  gramcmd->add_flag("--psd", g_psd, "Print the symmetry/PSD check as JSON");

  // gp
  KernelArgs gpa;
  std::string gp_grid, gp_kernel = "epk", gp_targets = "onehot";
  std::size_t gp_train = 30, gp_samples = 1000;
  std::uint64_t gp_seed = 0;
  double gp_jitter = 0.0;
  auto* gpcmd = app.add_subcommand("gp", "Kriging mean/variance and Monte-Carlo softmax std on a grid");
  add_kernel_args(gpcmd, gpa, false);
  gpcmd->add_option("--grid", gp_grid, "\"x0:x1:n,y0:y1:n\" or a points CSV")->required();
  gpcmd->add_option("--train-points", gp_train, "Size of the strided conditioning subset")->capture_default_str();
  gpcmd->add_option("--mc-samples", gp_samples, "Monte-Carlo draws per point")->capture_default_str();
  gpcmd->add_option("--seed", gp_seed, "Monte-Carlo seed")->capture_default_str();
  gpcmd->add_option("--kernel", gp_kernel, "epk|ntk0|ntkN")->capture_default_str();
  gpcmd->add_option("--targets", gp_targets, "onehot|model")->capture_default_str();
  gpcmd->add_option("--jitter", gp_jitter, "Absolute starting jitter (0: 1e-8 x mean diagonal)");

  // data
  auto* datacmd = app.add_subcommand("data", "Dataset generation and conversion");
  datacmd->require_subcommand(1);
  auto* blobs = datacmd->add_subcommand("gen-blobs", "Isotropic Gaussian classes");
  std::string b_spec, b_out;
  blobs->add_option("--spec", b_spec, "BlobSpec JSON file (omit for the 3-class default)");
  blobs->add_option("--out", b_out, "Output CSV")->required();
  auto* mnist = datacmd->add_subcommand("mnist", "IDX pair to CSV with subsetting and pooling");
  std::string m_images, m_labels, m_out;
  std::size_t m_per = 50, m_skip = 0, m_down = 14;
  mnist->add_option("--images", m_images, "IDX image file")->required();
  mnist->add_option("--labels", m_labels, "IDX label file")->required();
  mnist->add_option("--per-class", m_per, "Examples per class (first in file order)")->capture_default_str();
  mnist->add_option("--skip-per-class", m_skip, "Examples per class to skip first")->capture_default_str();
  mnist->add_option("--downsample", m_down, "Output side length (0 keeps 28)")->capture_default_str();
  mnist->add_option("--out", m_out, "Output CSV")->required();

  // run
  auto* run = app.add_subcommand("run", "Run a full experiment from a JSON config");
  std::string r_config, r_outdir;
  run->add_option("--config", r_config, "ExperimentConfig JSON")->required();
  run->add_option("--output-dir", r_outdir, "Override the config's output_dir");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (threads > 0) set_thread_limit(threads);

    if (*train) {
      const LabeledDataset data = load_dataset_csv(t_data);
      ModelSpec spec;
      spec.layer_widths = parse_layers(t_layers);
      if (t_head == "identity") spec.output_head = Head::Identity;
      else if (t_head != "log_softmax") throw ConfigError("unknown head '" + t_head + "'");
      spec.validate();
      TrainOptions options;
      options.loss = loss_from_string(t_loss);
      options.seed = t_seed;
      const Trajectory traj = train_full_batch(spec, data, t_eps, t_steps, options);
      save_trajectory(traj, t_out);
      std::cout << "steps " << traj.num_steps() << ", weights " << traj.weight_count() << ", train accuracy "
                << accuracy(Network(spec), traj.final(), data) << '\n';
    } else if (*predict || *compare) {
      const KernelArgs& a = *predict ? pa : ca;
      const Loaded l = load_kernel_inputs(a);
      const PointSet points = load_points_csv(a.inputs);
      const auto reports = kernel_predict(l.traj, l.data, points, test_feature_from_string(*predict ? p_method : c_method), l.opts);
      if (*predict) {
        write_predictions_csv(a.out, reports);
      } else {
        write_compare_csv(a.out, reports);
        double worst = 0.0;
        for (const auto& r : reports) worst = std::max(worst, r.max_abs_err);
        std::cout << "max_abs_err " << format_number(worst) << '\n';
      }
    } else if (*align) {
      const Loaded l = load_kernel_inputs(aa);
      write_alignment_csv(aa.out, alignment_error(l.traj, l.data, load_points_csv(aa.inputs), l.opts));
    } else if (*reduce) {
      const Loaded l = load_kernel_inputs(ra);
      const auto machines = reduce_to_kernel_machine(l.traj, l.data, load_points_csv(ra.inputs), l.opts);
      const std::size_t K = l.traj.num_classes();
      std::vector<std::string> header{"point"};
      for (const char* stem : {"reduced_", "ensemble_", "model_"})
        for (std::size_t k = 0; k < K; ++k) header.push_back(stem + std::to_string(k));
      header.push_back("bit_identical");
      CsvWriter out(ra.out, header);
      for (std::size_t p = 0; p < machines.size(); ++p) {
        const auto& m = machines[p];
        out.add(p);
        for (double v : m.kernel_logits) out.add(v);
        for (double v : m.ensemble_logits) out.add(v);
        for (double v : m.model_logits) out.add(v);
        out.add(m.kernel_logits == m.ensemble_logits ? 1 : 0);
        out.end_row();
      }
      out.close();
    } else if (*contrib) {
      const Loaded l = load_kernel_inputs(ka);
      const PointSet points = load_points_csv(ka.inputs);
      if (k_point >= points.size()) throw InputError("--point " + std::to_string(k_point) + " out of range");
      const auto x = points.point(k_point);
      write_contrib_csv(ka.out, kernel_contributions(l.traj, l.data, x, l.opts), l.data, x);
    } else if (*pathdiag) {
      const Loaded l = load_kernel_inputs(da);
      write_pathdiag_csv(da.out, weight_path_diagnostic(l.traj, l.data, d_res));
    } else if (*gramcmd) {
      const Loaded l = load_kernel_inputs(ga);
      const PointSet points = load_points_csv(ga.inputs);
      const GramMatrix g = path_gram(l.traj, l.data, points, points, {gram_kernel_from_string(g_kernel), l.opts});
      write_gram_csv(ga.out, g);
      if (g_psd) {
        const PsdReport r = check_psd(g);
        std::cout << nlohmann::json{{"min_eig", r.min_eig}, {"max_eig", r.max_eig},
                                    {"symmetric_defect", r.symmetric_defect}, {"pass", r.pass}}.dump()
                  << '\n';
      }
    } else if (*gpcmd) {
      const Loaded l = load_kernel_inputs(gpa);
      const PointSet grid = gp_grid.find(':') != std::string::npos ? parse_grid(gp_grid, l.data.dim())
                                                                    : load_points_csv(gp_grid);
      const std::size_t n = std::min(gp_train, l.data.size());
      std::vector<std::size_t> picks;
      for (std::size_t i = 0; i < n; ++i) picks.push_back(i * l.data.size() / n);
      const LabeledDataset cond_data = l.data.subset(picks);
      const PointSet cond = points_of(cond_data);
      const GramOptions gopts{gram_kernel_from_string(gp_kernel), l.opts};
      const Network net(l.traj.spec);
      std::vector<double> targets;
      for (std::size_t i = 0; i < cond_data.size(); ++i) {
        std::vector<double> y;
        if (gp_targets == "model") y = forward(net, l.traj.final(), cond_data.input(i));
        else if (gp_targets == "onehot") y.assign(cond_data.onehot(i).begin(), cond_data.onehot(i).end());
        else throw ConfigError("--targets must be onehot or model");
        targets.insert(targets.end(), y.begin(), y.end());
      }
      KrigingOptions kopts;
      kopts.jitter = gp_jitter;
      PosteriorField field = kriging(path_gram(l.traj, l.data, cond, cond, gopts),
                                     path_gram(l.traj, l.data, grid, cond, gopts),
                                     path_gram_diagonal(l.traj, l.data, grid, gopts), targets,
                                     forward(net, l.traj.initial(), cond_data.input(0)), kopts);
      mc_prob_std(field, gp_samples, gp_seed);
      write_field_csv(gpa.out, field, grid);
      std::cout << nlohmann::json{{"targets", gp_targets}, {"kernel", gp_kernel}, {"jitter", field.jitter}}.dump()
                << '\n';
    } else if (*blobs) {
      const BlobSpec spec = b_spec.empty() ? BlobSpec::toy_default() : BlobSpec::from_json(read_json(b_spec));
      save_dataset_csv(gen_blobs(spec), b_out);
    } else if (*mnist) {
      save_dataset_csv(load_mnist_window(m_images, m_labels, m_skip, m_per, m_down), m_out);
    } else if (*run) {
      ExperimentConfig config = ExperimentConfig::load(r_config);
      if (!r_outdir.empty()) config.output_dir = std::filesystem::absolute(r_outdir).string();
      if (threads > 0) config.threads = threads;
      const std::filesystem::path base = std::filesystem::path(r_config).parent_path();
      const ExperimentResult result = run_experiment(config, base.empty() ? "." : base);
      std::cout << result.directory.string() << '\n' << result.manifest["results"].dump(2) << '\n';
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return e.exit_code();
  } catch (const std::filesystem::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 4;
  }
  return 0;
}
