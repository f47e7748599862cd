// gprcov command-line interface.
//
// Exit codes: 0 success, 1 failed check or runtime error, 2 configuration error.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>

#include "gprcov/gpr/dataset.hpp"
#include "gprcov/harness/experiments.hpp"
#include "gprcov/harness/gradcheck.hpp"
#include "gprcov/harness/train.hpp"

namespace fs = std::filesystem;
using namespace gprcov;

namespace {

void write_text(const std::string& path, const std::string& text) {
  io::write_file(path, std::vector<char>(text.begin(), text.end()));
}

nlohmann::json read_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  try {
    return nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("'" + path + "': " + e.what());
  }
}

int cmd_gen_data(const std::string& spec_path, const std::string& out, std::uint64_t seed) {
  gpr::DatasetSpec spec;
  if (!spec_path.empty()) spec = read_json(spec_path).get<gpr::DatasetSpec>();
  spec.validate();
  const auto entries = gpr::generate_dataset(spec, seed, out);
  std::printf("wrote %zu samples to %s\n", entries.size(), out.c_str());
  return 0;
}

template <typename Real>
int run_train(const harness::TrainConfig& cfg, const std::vector<data::Sample>& samples, const std::string& out) {
  const data::Split s = data::split(samples, {cfg.train_ratio, cfg.val_fraction, cfg.seed}, cfg.model.num_classes);
  std::vector<data::Sample> tr = data::select(samples, s.train);
  if (cfg.label_noise > 0.0) {
    tr = data::inject_label_noise(std::move(tr), cfg.label_noise, derive_seed(cfg.seed, 7), cfg.model.num_classes).samples;
  }
  auto res = harness::train<Real>(cfg, tr, data::select(samples, s.val), data::select(samples, s.test), cfg.seed);
  const nlohmann::json run = harness::to_json(res.result);
  models::save_checkpoint(out, res.model, nlohmann::json{{"run", run}});
  write_text(out + ".json", run.dump(2) + "\n");
  for (const auto& e : res.result.epochs) {
    std::printf("epoch %3zu  loss %.4f  train %.2f%%  val %.2f%%\n", e.epoch, e.train_loss, e.train_accuracy,
                e.val_accuracy);
  }
  std::printf("best epoch %zu  val %.2f%%  test %.2f%%  (%.1f s)\n", res.result.best_epoch,
              res.result.best_val_accuracy, res.result.test_accuracy, res.result.wall_seconds);
  return 0;
}

int cmd_train(const std::string& config, const std::string& data_dir, const std::string& out) {
  harness::TrainConfig cfg = harness::load_train_config(config);
  const std::string dir = data_dir.empty() ? cfg.dataset : data_dir;
  if (dir.empty()) throw ConfigError("train: no dataset given (--data or \"dataset\" in the config)");
  const auto samples = data::load_dataset(dir, cfg.model.num_classes);
  return cfg.precision == harness::Precision::f64 ? run_train<double>(cfg, samples, out)
                                                 : run_train<float>(cfg, samples, out);
}

int cmd_eval(const std::string& ckpt, const std::string& data_dir, std::size_t batch) {
  auto loaded = models::load_checkpoint<float>(ckpt);
  const std::size_t k = loaded.model.num_classes();
  std::vector<data::Sample> samples;
  try {
    samples = data::load_dataset(data_dir, k);
  } catch (const LabelRangeError& e) {
    throw ConfigError(std::string("eval: class mismatch between checkpoint and data: ") + e.what());
  }
  const auto ev = harness::evaluate(loaded.model, samples, batch);
  std::printf("accuracy %.2f%% on %zu samples\n", ev.accuracy, samples.size());
  std::printf("confusion (rows: true, columns: predicted)\n");
  for (const auto& row : ev.confusion) {
    for (std::size_t c = 0; c < row.size(); ++c) std::printf(c ? " %6zu" : "%6zu", row[c]);
    std::printf("\n");
  }
  return 0;
}

int cmd_gradcheck(const std::string& layer, std::size_t trials, double tol, double model_tol, std::uint64_t seed) {
  harness::GradcheckOptions opts;
  opts.trials = trials;
  opts.tol = tol;
  opts.model_tol = model_tol;
  opts.seed = seed;
  const auto reports = harness::run_gradcheck(layer, opts);
  bool ok = true;
  std::printf("%-14s %7s %9s %12s %10s  %s\n", "check", "trials", "rejected", "worst_rel", "tol", "result");
  for (const auto& r : reports) {
    std::printf("%-14s %7zu %9zu %12.3e %10.1e  %s\n", r.name.c_str(), r.trials, r.rejected, r.worst, r.tol,
                r.passed ? "pass" : "FAIL");
    ok = ok && r.passed;
  }
  return ok ? 0 : 1;
}

template <typename Real>
std::vector<harness::Row> run_protocol(const harness::TrainConfig& cfg, const std::vector<data::Sample>& samples) {
  const harness::Progress progress = [](const harness::Row& r) {
    std::fprintf(stderr, "%s %s seed %llu: test %.2f%%\n", r.protocol.c_str(), r.setting.c_str(),
                 static_cast<unsigned long long>(r.seed), r.test_accuracy);
  };
  switch (cfg.protocol) {
    case harness::Protocol::ratio_sweep:
      return harness::run_ratio_sweep<Real>(cfg, samples, progress);
    case harness::Protocol::mislabel_sweep:
      return harness::run_mislabel_sweep<Real>(cfg, samples, progress);
    case harness::Protocol::scenario:
      return harness::run_scenarios<Real>(cfg, samples, progress);
    case harness::Protocol::plain:
      break;
  }
  std::vector<harness::Row> rows;
  for (std::size_t k = 0; k < cfg.num_seeds; ++k) {
    rows.push_back(harness::run_plain_cell<Real>(cfg, samples, cfg.train_ratio, cfg.label_noise, cfg.seed + k, "plain",
                                                 harness::setting_label(cfg.train_ratio)));
    progress(rows.back());
  }
  return rows;
}

int cmd_experiment(const std::string& protocol, const std::string& config, std::size_t seeds,
                   const std::string& data_dir, const std::string& out) {
  harness::TrainConfig cfg = harness::load_train_config(config);
  if (!protocol.empty()) cfg.protocol = harness::parse_protocol(protocol);
  if (seeds > 0) cfg.num_seeds = seeds;
  cfg.validate();
  const std::string dir = data_dir.empty() ? cfg.dataset : data_dir;
  if (dir.empty()) throw ConfigError("experiment: no dataset given (--data or \"dataset\" in the config)");
  const auto samples = data::load_dataset(dir, cfg.model.num_classes);
  const auto rows = cfg.precision == harness::Precision::f64 ? run_protocol<double>(cfg, samples)
                                                             : run_protocol<float>(cfg, samples);
  write_text(out, harness::to_csv(rows));
  const fs::path p(out);
  const std::string summary = (p.parent_path() / (p.stem().string() + "_summary.csv")).string();
  write_text(summary, cfg.protocol == harness::Protocol::scenario ? harness::box_summary_csv(rows)
                                                                  : harness::quantile_summary_csv(rows));
  std::printf("wrote %zu rows to %s and the summary to %s\n", rows.size(), out.c_str(), summary.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SPD covariance networks for GPR radargram classification"};
  app.require_subcommand(1);

  std::string spec_path, out, config, data_dir, ckpt, layer = "all", protocol;
  std::uint64_t seed = 0, gc_seed = 1234;
  std::size_t trials = 20, seeds = 0, eval_batch = 64;
  double tol = 1e-5, model_tol = 1e-4;

  auto* gen = app.add_subcommand("gen-data", "generate a synthetic radargram dataset");
  gen->add_option("--spec", spec_path, "dataset spec JSON (defaults when omitted)");
  gen->add_option("--out", out, "output directory")->required();
  gen->add_option("--seed", seed, "master seed");

  auto* tr = app.add_subcommand("train", "train one model, keep the best-validation checkpoint");
  tr->add_option("--config", config, "training config JSON")->required();
  tr->add_option("--data", data_dir, "dataset directory (overrides the config)");
  tr->add_option("--out", out, "checkpoint path; the run summary goes to <out>.json")->required();

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a dataset");
  ev->add_option("--ckpt", ckpt, "checkpoint path")->required();
  ev->add_option("--data", data_dir, "dataset directory")->required();
  ev->add_option("--batch", eval_batch, "evaluation batch size");

  auto* gc = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  gc->add_option("--layer", layer, "all | layers | models | a single check name");
  gc->add_option("--trials", trials, "accepted trials per check");
  gc->add_option("--tol", tol, "relative tolerance of single layers");
  gc->add_option("--model-tol", model_tol, "relative tolerance of end-to-end networks");
  gc->add_option("--seed", gc_seed, "seed");

  auto* ex = app.add_subcommand("experiment", "ratio / mislabel / scenario sweeps");
  ex->add_option("--protocol", protocol, "ratio | mislabel | scenario (overrides the config)");
  ex->add_option("--config", config, "training config JSON")->required();
  ex->add_option("--seeds", seeds, "seeds per setting (overrides the config)");
  ex->add_option("--data", data_dir, "dataset directory (overrides the config)");
  ex->add_option("--out", out, "raw CSV; the summary goes to <stem>_summary.csv")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*gen) return cmd_gen_data(spec_path, out, seed);
    if (*tr) return cmd_train(config, data_dir, out);
    if (*ev) return cmd_eval(ckpt, data_dir, eval_batch);
    if (*gc) return cmd_gradcheck(layer, trials, tol, model_tol, gc_seed);
    if (*ex) return cmd_experiment(protocol, config, seeds, data_dir, out);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
