// Command-line front end: train / eval / classify / ablate / gradcheck / synth.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "affect/ablate.hpp"
#include "affect/data.hpp"
#include "affect/gradsuite.hpp"
#include "affect/train.hpp"

namespace fs = std::filesystem;
using namespace affect;

namespace {

// "n=64,seed=9[,corrupt=0.1]"
struct SynthSpec {
  int n = 0;
  std::uint64_t seed = 0;
  double corrupt = 0.0;
};

SynthSpec parse_synth_spec(const std::string& spec) {
  SynthSpec s;
  std::string cur;
  std::vector<std::string> parts;
  for (char ch : spec) {
    if (ch == ',') {
      parts.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  parts.push_back(cur);
  for (const auto& part : parts) {
    const auto eq = part.find('=');
    if (eq == std::string::npos) throw ValueError("synth spec wants k=v pairs: " + spec);
    const std::string key = part.substr(0, eq), value = part.substr(eq + 1);
    if (key == "n") s.n = std::stoi(value);
    else if (key == "seed") s.seed = std::stoull(value);
    else if (key == "corrupt") s.corrupt = std::stod(value);
    else throw ValueError("unknown synth spec key '" + key + "'");
  }
  if (s.n < 1) throw ValueError("synth spec needs n >= 1: " + spec);
  return s;
}

Dataset dataset_from_spec(const SynthSpec& spec) {
  Dataset d = synth_dataset(spec.n, spec.seed);
  if (spec.corrupt > 0.0)
    corrupt_regression_labels(d, spec.corrupt, derive_seed(spec.seed, 0x636f7272ULL));
  return d;
}

Dataset resolve_dataset(const std::string& manifest, const std::string& synth_spec,
                        const char* what) {
  if (!manifest.empty() && !synth_spec.empty())
    throw ValueError(std::string(what) + ": give either a manifest or a synth spec, not both");
  if (!manifest.empty()) return load_dataset(manifest);
  if (!synth_spec.empty()) return dataset_from_spec(parse_synth_spec(synth_spec));
  throw ValueError(std::string(what) + ": need --manifest or --synth data");
}

TrainConfig assemble_config(const std::string& config_path,
                            const std::vector<std::string>& overrides) {
  TrainConfig cfg;
  if (!config_path.empty()) cfg = load_config_file(config_path, cfg);
  for (const auto& kv : overrides) apply_config_line(cfg, kv);
  cfg.validate();
  return cfg;
}

std::vector<std::uint64_t> parse_seed_list(const std::string& spec) {
  std::vector<std::uint64_t> seeds;
  std::string cur;
  for (char ch : spec) {
    if (ch == ',') {
      seeds.push_back(std::stoull(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  if (!cur.empty()) seeds.push_back(std::stoull(cur));
  if (seeds.empty()) throw ValueError("empty seed list");
  return seeds;
}

void print_metrics(const EvalMetrics& m) {
  if (m.has_valence)
    std::printf("ccc_valence=%.6f rmse_valence=%.6f%s\n", m.ccc_valence, m.rmse_valence,
                m.degenerate_valence ? " (degenerate)" : "");
  if (m.has_arousal)
    std::printf("ccc_arousal=%.6f rmse_arousal=%.6f%s\n", m.ccc_arousal, m.rmse_arousal,
                m.degenerate_arousal ? " (degenerate)" : "");
  std::printf("ccc_mean=%.6f rmse_mean=%.6f\n", m.ccc_mean(), m.rmse_mean());
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"two-level attention valence/arousal estimation"};
  app.require_subcommand(1);
  app.fallthrough();  // --config/--set may follow the subcommand name

  std::string config_path;
  std::vector<std::string> overrides;
  app.add_option("--config", config_path, "config file (key=value lines)");
  app.add_option("--set", overrides, "config override key=value (repeatable)");

  // ---- train ----
  auto* train_cmd = app.add_subcommand("train", "train a model and write metrics + checkpoint");
  std::string train_manifest, val_manifest, synth_train, synth_val, out_dir;
  train_cmd->add_option("--train-manifest", train_manifest, "training manifest csv");
  train_cmd->add_option("--val-manifest", val_manifest, "validation manifest csv");
  train_cmd->add_option("--synth-train", synth_train, "synthetic training data n=..,seed=..[,corrupt=..]");
  train_cmd->add_option("--synth-val", synth_val, "synthetic validation data n=..,seed=..");
  train_cmd->add_option("--out-dir", out_dir, "output directory")->required();

  // ---- eval ----
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint (flip-averaged CCC/RMSE)");
  std::string ckpt_path, eval_manifest, eval_synth, eval_out;
  eval_cmd->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
  eval_cmd->add_option("--manifest", eval_manifest, "manifest csv");
  eval_cmd->add_option("--synth", eval_synth, "synthetic data n=..,seed=..");
  eval_cmd->add_option("--out", eval_out, "write metrics csv here");

  // ---- classify ----
  auto* clf_cmd = app.add_subcommand("classify", "seven-class accuracy of the categorical head");
  std::string clf_ckpt, clf_manifest, clf_synth, clf_out;
  clf_cmd->add_option("--checkpoint", clf_ckpt, "checkpoint file")->required();
  clf_cmd->add_option("--manifest", clf_manifest, "manifest csv");
  clf_cmd->add_option("--synth", clf_synth, "synthetic data n=..,seed=..");
  clf_cmd->add_option("--out", clf_out, "write accuracy here");

  // ---- ablate ----
  auto* abl_cmd = app.add_subcommand("ablate", "sweep config axes over a shared dataset");
  std::vector<std::string> grid_specs;
  std::string abl_seeds = "1,2,3", abl_train_manifest, abl_val_manifest, abl_synth_train,
              abl_synth_val, abl_out;
  int abl_threads = 0;
  abl_cmd->add_option("--grid", grid_specs, "axis key=v1,v2,... (repeatable)");
  abl_cmd->add_option("--seeds", abl_seeds, "comma-separated training seeds");
  abl_cmd->add_option("--train-manifest", abl_train_manifest, "training manifest csv");
  abl_cmd->add_option("--val-manifest", abl_val_manifest, "validation manifest csv");
  abl_cmd->add_option("--synth-train", abl_synth_train, "synthetic training spec");
  abl_cmd->add_option("--synth-val", abl_synth_val, "synthetic validation spec");
  abl_cmd->add_option("--threads", abl_threads, "worker threads (0 = all cores)");
  abl_cmd->add_option("--out", abl_out, "ablation csv path")->required();

  // ---- gradcheck ----
  auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference gradient suite");
  double grad_step = 1e-4, grad_tol = 1e-3;
  std::size_t grad_coords = 6;
  grad_cmd->add_option("--step", grad_step, "central difference step");
  grad_cmd->add_option("--tol", grad_tol, "max relative error tolerance");
  grad_cmd->add_option("--coords", grad_coords, "sampled coordinates per tensor (full model)");

  // ---- synth ----
  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic dataset (manifest + PNGs)");
  int synth_n = 0;
  std::uint64_t synth_seed = 0;
  double synth_corrupt = 0.0;
  std::string synth_out;
  synth_cmd->add_option("--n", synth_n, "sample count")->required();
  synth_cmd->add_option("--seed", synth_seed, "generator seed");
  synth_cmd->add_option("--corrupt-frac", synth_corrupt, "fraction of corrupted regression labels");
  synth_cmd->add_option("--out-dir", synth_out, "output directory")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) {
      TrainConfig cfg = assemble_config(config_path, overrides);
      Dataset train_set = resolve_dataset(train_manifest, synth_train, "train data");
      Dataset val_set = resolve_dataset(val_manifest, synth_val, "val data");
      fs::create_directories(out_dir);
      TrainResult result = train(cfg, train_set, val_set);
      const bool hv = result.metrics.front().metrics.has_valence;
      const bool ha = result.metrics.front().metrics.has_arousal;
      write_metrics_csv((fs::path(out_dir) / "metrics.csv").string(), result.metrics, hv, ha);
      write_curve_csv((fs::path(out_dir) / "curve.csv").string(), result.curve);
      save_checkpoint((fs::path(out_dir) / "best.ckpt").string(), result.best);
      std::printf("best epoch %d, validation mean CCC %.6f\n", result.best_epoch,
                  result.best_ccc_mean);
      std::printf("wrote %s/{metrics.csv,curve.csv,best.ckpt}\n", out_dir.c_str());
    } else if (*eval_cmd) {
      const Checkpoint ckpt = load_checkpoint(ckpt_path);
      Model model = model_from_checkpoint(ckpt);
      Dataset data = resolve_dataset(eval_manifest, eval_synth, "eval data");
      const EvalMetrics m = evaluate_model(model, data, ckpt.config.batch_size);
      print_metrics(m);
      if (!eval_out.empty()) {
        MetricRow row{"eval", ckpt.epoch, m};
        write_metrics_csv(eval_out, {row}, m.has_valence, m.has_arousal);
      }
    } else if (*clf_cmd) {
      const Checkpoint ckpt = load_checkpoint(clf_ckpt);
      Model model = model_from_checkpoint(ckpt);
      Dataset data = resolve_dataset(clf_manifest, clf_synth, "classify data");
      const real acc = classify_eval(model, data, ckpt.config.batch_size);
      std::printf("accuracy=%.6f\n", acc);
      if (!clf_out.empty()) {
        std::ofstream out(clf_out);
        out << "accuracy=" << detail::fmt6(acc) << "\n";
      }
    } else if (*abl_cmd) {
      AblateOptions opts;
      opts.base = assemble_config(config_path, overrides);
      for (const auto& spec : grid_specs) add_grid_axis(opts.grid, spec);
      opts.seeds = parse_seed_list(abl_seeds);
      opts.threads = abl_threads;
      Dataset train_set, val_set;
      if (!opts.grid.empty()) {
        train_set = resolve_dataset(abl_train_manifest, abl_synth_train, "ablate train data");
        val_set = resolve_dataset(abl_val_manifest, abl_synth_val, "ablate val data");
      }
      const auto rows = ablate(opts, train_set, val_set);
      write_ablation_csv(abl_out, rows);
      std::printf("%s\n", ablation_csv_header().c_str());
      for (const auto& row : rows) std::printf("%s\n", ablation_csv_row(row).c_str());
      std::printf("wrote %s\n", abl_out.c_str());
    } else if (*grad_cmd) {
      const auto t0 = std::chrono::steady_clock::now();
      const GradSuiteResult suite = run_gradient_suite(grad_step, grad_coords);
      const double secs =
          std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
      for (const auto& line : suite.lines)
        std::printf("%-22s max_rel_err=%.3e checked=%zu skipped=%zu\n", line.name.c_str(),
                    line.max_rel_err, line.coords_checked, line.coords_skipped);
      std::printf("overall max_rel_err=%.3e in %.1fs: %s\n", suite.max_rel_err(), secs,
                  suite.pass(grad_tol) ? "PASS" : "FAIL");
      return suite.pass(grad_tol) ? 0 : 1;
    } else if (*synth_cmd) {
      Dataset data = synth_dataset(synth_n, synth_seed);
      if (synth_corrupt > 0.0)
        corrupt_regression_labels(data, synth_corrupt, derive_seed(synth_seed, 0x636f7272ULL));
      export_dataset(synth_out, data);
      std::printf("wrote %d samples to %s (manifest.csv + PNGs)\n", synth_n, synth_out.c_str());
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
