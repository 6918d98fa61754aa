#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include "fsaheat/checkpoint.hpp"
#include "fsaheat/config.hpp"
#include "fsaheat/dataset.hpp"
#include "fsaheat/harness.hpp"
#include "fsaheat/train.hpp"

namespace {

using namespace fsaheat;

KvConfig load_config(const std::string& path) {
  return path.empty() ? KvConfig{} : KvConfig::load(path);
}

// Every verb drops a manifest into its output directory recording what ran:
// the resolved config text, seeds, timing, and the files produced.
void write_run_manifest(const std::string& out_dir, const std::string& verb,
                        const KvConfig& cfg, const nlohmann::json& extra, double seconds) {
  nlohmann::json j;
  j["verb"] = verb;
  j["config"] = cfg.str();
  j["config_digest"] = config_digest(cfg);
  j["seconds"] = seconds;
  j["outputs"] = extra;
  std::ofstream out(std::filesystem::path(out_dir) / "run_manifest.json");
  check(out.good(), "cannot write run_manifest.json in " + out_dir);
  out << j.dump(2) << '\n';
}

int run_generate(const std::string& config_path, const std::string& out_dir,
                 std::int64_t n_override, std::int64_t seed_override,
                 const std::string& protocol, int threads) {
  const KvConfig cfg = load_config(config_path);
  const StackConfig stack = stack_from(cfg);
  DatasetParams dp = dataset_from(cfg);
  if (n_override > 0) dp.n = n_override;
  if (seed_override >= 0) dp.master_seed = static_cast<std::uint64_t>(seed_override);
  if (!protocol.empty()) dp = protocol_params(dp, protocol_by_name(protocol), dp.n);
  const auto t0 = std::chrono::steady_clock::now();
  const DatasetManifest m = build_dataset(stack, dp, out_dir, threads);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_run_manifest(out_dir, "generate", cfg,
                     {{"n", m.n},
                      {"rows", m.rows},
                      {"cols", m.cols},
                      {"master_seed", m.master_seed},
                      {"dataset_digest", m.config_digest}},
                     secs);
  std::printf("generated %lld samples (%lldx%lld) in %.2f s -> %s\n",
              static_cast<long long>(m.n), static_cast<long long>(m.rows),
              static_cast<long long>(m.cols), secs, out_dir.c_str());
  return 0;
}

int run_train(const std::string& config_path, const std::string& data_dir,
              const std::string& out_dir, std::int64_t seed_override) {
  const KvConfig cfg = load_config(config_path);
  const NetConfig ncfg = net_from(cfg);
  const LossParams lp = loss_from(cfg);
  TrainParams tp = train_from(cfg);
  if (seed_override >= 0) tp.seed = static_cast<std::uint64_t>(seed_override);
  const auto t0 = std::chrono::steady_clock::now();
  const TrainResult tr = train(data_dir, ncfg, lp, tp, out_dir);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_run_manifest(out_dir, "train", cfg,
                     {{"epochs_run", tr.log.size()},
                      {"best_epoch", tr.best_epoch},
                      {"best_val_rmse", tr.best_val_rmse},
                      {"val_is_train", tr.val_is_train},
                      {"best", tr.best_path},
                      {"final", tr.final_path},
                      {"log", tr.log_path}},
                     secs);
  std::printf("trained %zu epochs in %.1f s; best val rmse %.6g (epoch %lld) -> %s\n",
              tr.log.size(), secs, tr.best_val_rmse, static_cast<long long>(tr.best_epoch),
              tr.best_path.c_str());
  return 0;
}

int run_evaluate(const std::string& config_path, const std::string& ckpt_path,
                 const std::string& protocol, std::int64_t n, const std::string& out_dir,
                 int threads) {
  const KvConfig cfg = load_config(config_path);
  const StackConfig stack = stack_from(cfg);
  const DatasetParams dp = dataset_from(cfg);
  const Checkpoint ck = load_checkpoint(ckpt_path);
  const auto t0 = std::chrono::steady_clock::now();
  const EvalReport rep = evaluate(ck, stack, dp, protocol, n, out_dir, threads);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  const std::string report_path = out_dir + "/" + rep.protocol + "-report.json";
  save_report(rep, report_path);
  write_run_manifest(out_dir, "evaluate", cfg,
                     {{"report", report_path}, {"metrics_csv", rep.metrics_csv}}, secs);
  std::printf("%s: n=%lld rmse=%.6g mae=%.6g psnr=%.4g baseline_rmse=%.6g (%.3f s/sample)\n",
              rep.protocol.c_str(), static_cast<long long>(rep.n), rep.aggregate.rmse,
              rep.aggregate.mae, rep.aggregate.psnr, rep.baseline_rmse, rep.seconds_per_sample);
  return 0;
}

int run_predict(const std::string& config_path, const std::string& ckpt_path,
                const std::string& data_dir, std::int64_t index, std::int64_t seed_override,
                const std::string& out_dir) {
  const KvConfig cfg = load_config(config_path);
  const Checkpoint ck = load_checkpoint(ckpt_path);
  Tensor raw_inputs, oracle;
  if (!data_dir.empty()) {
    const DatasetManifest m = load_manifest(data_dir);
    const SampleRaw s = read_sample(data_dir, m, index);
    raw_inputs = s.inputs;
    oracle = s.target;
  } else {
    const StackConfig stack = stack_from(cfg);
    DatasetParams dp = dataset_from(cfg);
    if (seed_override >= 0) dp.master_seed = static_cast<std::uint64_t>(seed_override);
    const SampleRaw s = make_sample(stack, dp, index);
    raw_inputs = s.inputs;
    oracle = s.target;
  }
  const auto t0 = std::chrono::steady_clock::now();
  const PredictResult res = predict(ck, raw_inputs, &oracle, out_dir);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_run_manifest(out_dir, "predict", cfg,
                     {{"prediction_csv", out_dir + "/prediction.csv"},
                      {"error_csv", out_dir + "/error.csv"},
                      {"rmse", res.met.rmse},
                      {"forward_seconds", res.seconds}},
                     secs);
  std::printf("predicted in %.4f s (forward %.4f s); rmse vs oracle %.6g -> %s\n", secs,
              res.seconds, res.met.rmse, out_dir.c_str());
  return 0;
}

int run_ablate(const std::string& config_path, const std::string& data_dir, std::int64_t eval_n,
               const std::string& out_dir, int threads) {
  const KvConfig cfg = load_config(config_path);
  const StackConfig stack = stack_from(cfg);
  const DatasetParams dp = dataset_from(cfg);
  const NetConfig ncfg = net_from(cfg);
  const LossParams lp = loss_from(cfg);
  const TrainParams tp = train_from(cfg);
  const auto t0 = std::chrono::steady_clock::now();
  const AblationReport rep = ablate(data_dir, stack, dp, ncfg, lp, tp, eval_n, out_dir, threads);
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  write_run_manifest(out_dir, "ablate", cfg, {{"csv", rep.csv_path}}, secs);
  for (const AblationRow& r : rep.rows)
    std::printf("%-18s params=%-8lld test_rmse=%.6g grad_ang=%.4g\n", r.name.c_str(),
                static_cast<long long>(r.param_count), r.eval.aggregate.rmse,
                r.eval.aggregate.grad_ang_err);
  std::printf("ablation grid done in %.1f s -> %s\n", secs, rep.csv_path.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"FSA-Heat workbench: dataset generation, training, and evaluation"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "run", protocol, ckpt_path, data_dir;
  std::int64_t n = 0, seed = -1, index = 0;
  int threads = 1;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", config_path, "sectioned key-value config file");
    sub->add_option("--out", out_dir, "output directory");
    sub->add_option("--seed", seed, "override the config seed");
    sub->add_option("--threads", threads, "worker threads for dataset/eval batches");
  };

  CLI::App* gen = app.add_subcommand("generate", "build a dataset");
  add_common(gen);
  gen->add_option("--n", n, "sample count override");
  gen->add_option("--protocol", protocol, "apply a protocol recipe to the dataset");

  CLI::App* trn = app.add_subcommand("train", "train a network on a dataset");
  add_common(trn);
  trn->add_option("--data", data_dir, "dataset directory")->required();

  CLI::App* ev = app.add_subcommand("evaluate", "evaluate a checkpoint under a protocol");
  add_common(ev);
  ev->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
  ev->add_option("--protocol", protocol, "in-dist | k+50 | k-50 | sources-{10,60,80}")->required();
  ev->add_option("--n", n, "evaluation sample count")->required();

  CLI::App* pred = app.add_subcommand("predict", "export prediction and gradient fields");
  add_common(pred);
  pred->add_option("--checkpoint", ckpt_path, "checkpoint file")->required();
  pred->add_option("--data", data_dir, "dataset directory (otherwise synthesized from config)");
  pred->add_option("--index", index, "sample index");

  CLI::App* abl = app.add_subcommand("ablate", "train and evaluate the ablation grid");
  add_common(abl);
  abl->add_option("--data", data_dir, "training dataset directory")->required();
  abl->add_option("--n", n, "evaluation sample count")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (gen->parsed()) return run_generate(config_path, out_dir, n, seed, protocol, threads);
    if (trn->parsed()) return run_train(config_path, data_dir, out_dir, seed);
    if (ev->parsed()) return run_evaluate(config_path, ckpt_path, protocol, n, out_dir, threads);
    if (pred->parsed()) return run_predict(config_path, ckpt_path, data_dir, index, seed, out_dir);
    if (abl->parsed()) return run_ablate(config_path, data_dir, n, out_dir, threads);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
