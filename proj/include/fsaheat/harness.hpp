#pragma once

#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <vector>

#include <json.hpp>

#include "fsaheat/checkpoint.hpp"
#include "fsaheat/dataset.hpp"
#include "fsaheat/loss.hpp"
#include "fsaheat/net.hpp"
#include "fsaheat/parallel.hpp"
#include "fsaheat/train.hpp"

namespace fsaheat {

// Evaluation protocols are dataset recipes: the in-distribution set keeps the
// training sampling, the conductivity sets pin an exact multiplier, and the
// source-count sets pin the rectangle count. Each gets its own master seed
// derived from the base dataset seed and the protocol name.
struct Protocol {
  std::string name;
  double k_scale = 1.0;
  std::int64_t fixed_sources = 0;
};

inline Protocol protocol_by_name(const std::string& name) {
  if (name == "in-dist") return {name, 1.0, 0};
  if (name == "k+50") return {name, 1.5, 0};
  if (name == "k-50") return {name, 0.5, 0};
  if (name == "sources-10") return {name, 1.0, 10};
  if (name == "sources-60") return {name, 1.0, 60};
  if (name == "sources-80") return {name, 1.0, 80};
  check(false, "unknown protocol " + name +
                   " (expected in-dist, k+50, k-50, sources-10, sources-60, sources-80)");
  return {};
}

inline DatasetParams protocol_params(const DatasetParams& base, const Protocol& pr,
                                     std::int64_t n) {
  DatasetParams p = base;
  p.n = n;
  p.val_fraction = 0.0;
  p.k_scale = pr.k_scale;
  if (pr.fixed_sources > 0) p.fixed_sources = pr.fixed_sources;
  p.master_seed = derive_seed(base.master_seed, "protocol-" + pr.name, 0);
  p.validate();
  return p;
}

// Builds the protocol dataset under dir unless a manifest with the same
// recipe digest and size is already there.
inline DatasetManifest ensure_dataset(const StackConfig& stack, const DatasetParams& p,
                                      const std::string& dir, int threads) {
  if (std::filesystem::exists(std::filesystem::path(dir) / "manifest.json")) {
    DatasetManifest m = load_manifest(dir);
    if (m.config_digest == dataset_digest(stack, p) && m.n == p.n) return m;
  }
  return build_dataset(stack, p, dir, threads);
}

struct LayerMetrics {
  double rmse = 0.0, mae = 0.0, mape = 0.0, psnr = 0.0;
  double grad_mag_rmse = 0.0, grad_ang_err = 0.0;
  std::int64_t grad_defined = 0;  // samples contributing to grad_ang_err
};

struct EvalReport {
  std::string protocol;
  std::int64_t n = 0, rows = 0, cols = 0;
  std::uint64_t dataset_master_seed = 0;
  std::uint64_t dataset_digest = 0;
  std::uint64_t net_digest = 0;
  std::array<LayerMetrics, kLayers> per_layer{};
  LayerMetrics aggregate;
  double baseline_rmse = 0.0;  // constant-mean predictor over the set
  double kelvin_rmse = 0.0;    // aggregate.rmse scaled back to K
  double total_seconds = 0.0, seconds_per_sample = 0.0;
  std::string metrics_csv;
};

namespace detail {

inline Tensor layer_slice(const Tensor& t, int l) {
  const std::int64_t plane = t.numel() / kLayers;
  Tensor out(Shape{t.shape[1], t.shape[2]});
  for (std::int64_t i = 0; i < plane; ++i) out[i] = t[l * plane + i];
  return out;
}

inline GradientField layer_field(const GradientField& g, int l) {
  return {layer_slice(g.gx, l), layer_slice(g.gy, l)};
}

}  // namespace detail

// Per-sample, per-layer rows; metrics on the normalized temperature scale
// with the checkpoint's training statistics. psnr uses the per-sample layer
// peak; aggregate rmse/mae/mape pool all cells, psnr and the gradient scores
// average over samples (angular error over the samples where it is defined).
inline EvalReport evaluate(const Checkpoint& ck, const StackConfig& stack,
                           const DatasetParams& base_dp, const std::string& protocol,
                           std::int64_t n, const std::string& out_dir, int threads) {
  check(stack.rows == ck.rows && stack.cols == ck.cols,
        "evaluate: stack grid " + std::to_string(stack.rows) + "x" + std::to_string(stack.cols) +
            " does not match checkpoint grid " + std::to_string(ck.rows) + "x" +
            std::to_string(ck.cols));
  const Protocol pr = protocol_by_name(protocol);
  const DatasetParams dp = protocol_params(base_dp, pr, n);
  std::filesystem::create_directories(out_dir);
  const std::string data_dir = out_dir + "/data-" + pr.name;
  const DatasetManifest m = ensure_dataset(stack, dp, data_dir, threads);

  FsaHeatNet net(ck.net, 0);
  restore(net, ck);

  struct Row {
    Metrics met[kLayers];
    GradScore gs[kLayers];
    double sq[kLayers], ab[kLayers], ape[kLayers];
    double mean_sum = 0.0, sq_sum = 0.0;
  };
  std::vector<Row> rows(static_cast<std::size_t>(m.n));
  const auto t0 = std::chrono::steady_clock::now();
  parallel_for(m.n, threads, [&](std::int64_t i) {
    const SampleRaw raw = read_sample(data_dir, m, i);
    const Tensor x = standardize_inputs(raw.inputs, ck.stats);
    const Tensor y = normalize_target(raw.target, ck.stats);
    const Tensor pred = net.forward(x).value();
    const GradientField gp = gradient_field(pred);
    const GradientField gt = gradient_field(y);
    Row& row = rows[static_cast<std::size_t>(i)];
    const std::int64_t plane = y.numel() / kLayers;
    for (int l = 0; l < kLayers; ++l) {
      const Tensor pl = detail::layer_slice(pred, l);
      const Tensor yl = detail::layer_slice(y, l);
      double peak = 0.0;
      for (std::int64_t j = 0; j < plane; ++j) peak = std::max(peak, std::abs(yl[j]));
      row.met[l] = metrics(pl, yl, peak > 0.0 ? peak : 1.0);
      row.gs[l] = gradient_score(detail::layer_field(gp, l), detail::layer_field(gt, l));
      double sq = 0.0, ab = 0.0, ape = 0.0;
      for (std::int64_t j = 0; j < plane; ++j) {
        const double d = pl[j] - yl[j];
        sq += d * d;
        ab += std::abs(d);
        ape += std::abs(d) / (std::abs(yl[j]) + 1e-8);
      }
      row.sq[l] = sq;
      row.ab[l] = ab;
      row.ape[l] = ape;
    }
    for (std::int64_t j = 0; j < y.numel(); ++j) {
      row.mean_sum += y[j];
      row.sq_sum += y[j] * y[j];
    }
  });
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  EvalReport rep;
  rep.protocol = pr.name;
  rep.n = m.n;
  rep.rows = m.rows;
  rep.cols = m.cols;
  rep.dataset_master_seed = dp.master_seed;
  rep.dataset_digest = m.config_digest;
  rep.net_digest = net_digest(ck.net);
  rep.total_seconds = seconds;
  rep.seconds_per_sample = seconds / static_cast<double>(m.n);

  rep.metrics_csv = out_dir + "/" + pr.name + "-metrics.csv";
  std::ofstream csv(rep.metrics_csv);
  check(csv.good(), "evaluate: cannot open " + rep.metrics_csv);
  csv.precision(17);
  csv << "sample,layer,rmse,mae,mape,psnr,grad_mag_rmse,grad_ang_err\n";

  const std::int64_t plane = m.rows * m.cols;
  double set_sum = 0.0, set_sq = 0.0;
  for (std::int64_t i = 0; i < m.n; ++i) {
    const Row& row = rows[static_cast<std::size_t>(i)];
    set_sum += row.mean_sum;
    set_sq += row.sq_sum;
    for (int l = 0; l < kLayers; ++l) {
      LayerMetrics& lm = rep.per_layer[static_cast<std::size_t>(l)];
      lm.rmse += row.sq[l];
      lm.mae += row.ab[l];
      lm.mape += row.ape[l];
      lm.psnr += row.met[l].psnr;
      lm.grad_mag_rmse += row.gs[l].magnitude_rmse;
      if (row.gs[l].angular_defined) {
        lm.grad_ang_err += row.gs[l].angular_error;
        ++lm.grad_defined;
      }
      csv << i << ',' << l << ',' << row.met[l].rmse << ',' << row.met[l].mae << ','
          << row.met[l].mape << ',' << row.met[l].psnr << ',' << row.gs[l].magnitude_rmse << ','
          << row.gs[l].angular_error << '\n';
    }
  }
  const double cells_per_layer = static_cast<double>(m.n * plane);
  double total_sq = 0.0, total_ab = 0.0, total_ape = 0.0;
  for (int l = 0; l < kLayers; ++l) {
    LayerMetrics& lm = rep.per_layer[static_cast<std::size_t>(l)];
    total_sq += lm.rmse;
    total_ab += lm.mae;
    total_ape += lm.mape;
    lm.rmse = std::sqrt(lm.rmse / cells_per_layer);
    lm.mae /= cells_per_layer;
    lm.mape = 100.0 * lm.mape / cells_per_layer;
    lm.psnr /= static_cast<double>(m.n);
    lm.grad_mag_rmse /= static_cast<double>(m.n);
    lm.grad_ang_err = lm.grad_defined > 0 ? lm.grad_ang_err / static_cast<double>(lm.grad_defined)
                                          : std::numeric_limits<double>::quiet_NaN();
    rep.aggregate.psnr += lm.psnr / static_cast<double>(kLayers);
    rep.aggregate.grad_mag_rmse += lm.grad_mag_rmse / static_cast<double>(kLayers);
    if (lm.grad_defined > 0) {
      rep.aggregate.grad_ang_err += lm.grad_ang_err;
      ++rep.aggregate.grad_defined;
    }
  }
  const double cells = cells_per_layer * static_cast<double>(kLayers);
  rep.aggregate.rmse = std::sqrt(total_sq / cells);
  rep.aggregate.mae = total_ab / cells;
  rep.aggregate.mape = 100.0 * total_ape / cells;
  rep.aggregate.grad_ang_err = rep.aggregate.grad_defined > 0
                                   ? rep.aggregate.grad_ang_err / static_cast<double>(rep.aggregate.grad_defined)
                                   : std::numeric_limits<double>::quiet_NaN();
  const double set_mean = set_sum / cells;
  rep.baseline_rmse = std::sqrt(std::max(0.0, set_sq / cells - set_mean * set_mean));
  rep.kelvin_rmse = rep.aggregate.rmse * ck.stats.theta_max;
  return rep;
}

inline nlohmann::json report_to_json(const EvalReport& r) {
  auto lm = [](const LayerMetrics& m) {
    return nlohmann::json{{"rmse", m.rmse},
                          {"mae", m.mae},
                          {"mape", m.mape},
                          {"psnr", m.psnr},
                          {"grad_mag_rmse", m.grad_mag_rmse},
                          {"grad_ang_err", m.grad_ang_err},
                          {"grad_defined", m.grad_defined}};
  };
  nlohmann::json j;
  j["protocol"] = r.protocol;
  j["n"] = r.n;
  j["rows"] = r.rows;
  j["cols"] = r.cols;
  j["dataset_master_seed"] = r.dataset_master_seed;
  j["dataset_digest"] = r.dataset_digest;
  j["net_digest"] = r.net_digest;
  for (int l = 0; l < kLayers; ++l)
    j["per_layer"].push_back(lm(r.per_layer[static_cast<std::size_t>(l)]));
  j["aggregate"] = lm(r.aggregate);
  j["baseline_rmse"] = r.baseline_rmse;
  j["kelvin_rmse"] = r.kelvin_rmse;
  j["total_seconds"] = r.total_seconds;
  j["seconds_per_sample"] = r.seconds_per_sample;
  j["metrics_csv"] = r.metrics_csv;
  return j;
}

inline void save_report(const EvalReport& r, const std::string& path) {
  std::ofstream out(path);
  check(out.good(), "save_report: cannot open " + path);
  out << report_to_json(r).dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Ablation grid

struct AblationVariant {
  std::string name;
  NetConfig net;
};

// The six studied variants. "spatial-loss" keeps the architecture and drops
// the frequency loss term; "plain-cnn" strips every frequency-domain piece.
inline std::vector<AblationVariant> ablation_grid(const NetConfig& base) {
  std::vector<AblationVariant> out;
  auto push = [&](const std::string& name, auto mod) {
    NetConfig c = base;
    c.freq_branch = true;
    c.spatial_branch = true;
    c.fciformer = true;
    c.freq_loss = true;
    mod(c);
    c.validate();
    out.push_back({name, c});
  };
  push("full", [](NetConfig&) {});
  push("spatial-loss", [](NetConfig& c) { c.freq_loss = false; });
  push("no-fciformer", [](NetConfig& c) { c.fciformer = false; });
  push("no-freq-branch", [](NetConfig& c) { c.freq_branch = false; });
  push("no-spatial-branch", [](NetConfig& c) { c.spatial_branch = false; });
  push("plain-cnn", [](NetConfig& c) {
    c.freq_branch = false;
    c.fciformer = false;
    c.freq_loss = false;
  });
  return out;
}

struct AblationRow {
  std::string name;
  std::int64_t param_count = 0;
  bool has_freq_params = false, has_fci_params = false;
  bool expect_freq_params = false, expect_fci_params = false;
  double train_fsl = 0.0;  // final epoch
  double val_rmse = 0.0;   // best
  EvalReport eval;
};

struct AblationReport {
  std::vector<AblationRow> rows;
  std::string csv_path;
};

// Trains each variant on the shared dataset and evaluates on the shared
// in-distribution test recipe. The structural audit records whether the
// parameter list carries frequency-branch (".freq.") and FCIFormer ("fci.")
// names, next to what the variant promises.
inline AblationReport ablate(const std::string& data_dir, const StackConfig& stack,
                             const DatasetParams& base_dp, const NetConfig& base_net,
                             const LossParams& lp, const TrainParams& tp, std::int64_t eval_n,
                             const std::string& out_dir, int threads) {
  AblationReport rep;
  for (const AblationVariant& v : ablation_grid(base_net)) {
    const std::string vdir = out_dir + "/" + v.name;
    TrainResult tr = train(data_dir, v.net, lp, tp, vdir);
    const Checkpoint ck = load_checkpoint(tr.best_path);
    AblationRow row;
    row.name = v.name;
    row.expect_freq_params = v.net.freq_branch;
    row.expect_fci_params = v.net.fciformer;
    {
      FsaHeatNet net(v.net, tp.seed);
      row.param_count = net.params.scalar_count();
      row.has_freq_params = net.params.has_infix(".freq.");
      row.has_fci_params = net.params.has_infix("fci.");
    }
    row.train_fsl = tr.log.back().fsl;
    row.val_rmse = tr.best_val_rmse;
    row.eval = evaluate(ck, stack, base_dp, "in-dist", eval_n, vdir, threads);
    save_report(row.eval, vdir + "/in-dist-report.json");
    rep.rows.push_back(std::move(row));
  }
  rep.csv_path = out_dir + "/ablation.csv";
  std::ofstream csv(rep.csv_path);
  check(csv.good(), "ablate: cannot open " + rep.csv_path);
  csv.precision(17);
  csv << "variant,param_count,has_freq_params,has_fci_params,train_fsl,best_val_rmse,test_rmse,"
         "test_mae,test_psnr,grad_ang_err,baseline_rmse\n";
  for (const AblationRow& r : rep.rows)
    csv << r.name << ',' << r.param_count << ',' << (r.has_freq_params ? 1 : 0) << ','
        << (r.has_fci_params ? 1 : 0) << ',' << r.train_fsl << ',' << r.val_rmse << ','
        << r.eval.aggregate.rmse << ',' << r.eval.aggregate.mae << ',' << r.eval.aggregate.psnr
        << ',' << r.eval.aggregate.grad_ang_err << ',' << r.eval.baseline_rmse << '\n';
  return rep;
}

// ---------------------------------------------------------------------------
// Single-sample prediction export

// prediction.csv: layer,row,col,pred_norm,pred_kelvin,grad_x,grad_y,grad_mag
// error.csv (when the oracle target is given):
//   layer,row,col,oracle_norm,oracle_kelvin,abs_err_norm,oracle_grad_x,
//   oracle_grad_y,oracle_grad_mag
// Each file carries exactly 4*R*C data rows; gradients are per-cell
// differences of the normalized field.
struct PredictResult {
  Tensor pred_norm;  // [4, R, C]
  double seconds = 0.0;
  Metrics met;  // vs oracle, normalized scale; zeros when no oracle
  bool has_oracle = false;
};

inline PredictResult predict(const Checkpoint& ck, const Tensor& raw_inputs,
                             const Tensor* oracle_theta, const std::string& out_dir) {
  check(raw_inputs.shape == Shape{kChannels, kLayers, ck.rows, ck.cols},
        "predict: input shape " + raw_inputs.shape.str() + " does not match checkpoint grid [" +
            std::to_string(kChannels) + ",4," + std::to_string(ck.rows) + "," +
            std::to_string(ck.cols) + "]");
  std::filesystem::create_directories(out_dir);
  FsaHeatNet net(ck.net, 0);
  restore(net, ck);

  const auto t0 = std::chrono::steady_clock::now();
  const Tensor x = standardize_inputs(raw_inputs, ck.stats);
  PredictResult res;
  res.pred_norm = net.forward(x).value();
  res.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  const GradientField gp = gradient_field(res.pred_norm);
  const Tensor gpm = gp.magnitude();
  const std::int64_t R = ck.rows, C = ck.cols;
  {
    std::ofstream csv(out_dir + "/prediction.csv");
    check(csv.good(), "predict: cannot open prediction.csv");
    csv.precision(17);
    csv << "layer,row,col,pred_norm,pred_kelvin,grad_x,grad_y,grad_mag\n";
    for (int l = 0; l < kLayers; ++l)
      for (std::int64_t r = 0; r < R; ++r)
        for (std::int64_t c = 0; c < C; ++c) {
          const std::int64_t i = (l * R + r) * C + c;
          csv << l << ',' << r << ',' << c << ',' << res.pred_norm[i] << ','
              << res.pred_norm[i] * ck.stats.theta_max << ',' << gp.gx[i] << ',' << gp.gy[i]
              << ',' << gpm[i] << '\n';
        }
  }

  if (oracle_theta != nullptr) {
    check(oracle_theta->shape == Shape{kLayers, R, C},
          "predict: oracle shape " + oracle_theta->shape.str() + " does not match grid");
    res.has_oracle = true;
    const Tensor y = normalize_target(*oracle_theta, ck.stats);
    double peak = 0.0;
    for (std::int64_t i = 0; i < y.numel(); ++i) peak = std::max(peak, std::abs(y[i]));
    res.met = metrics(res.pred_norm, y, peak > 0.0 ? peak : 1.0);
    const GradientField gt = gradient_field(y);
    const Tensor gtm = gt.magnitude();
    std::ofstream csv(out_dir + "/error.csv");
    check(csv.good(), "predict: cannot open error.csv");
    csv.precision(17);
    csv << "layer,row,col,oracle_norm,oracle_kelvin,abs_err_norm,oracle_grad_x,oracle_grad_y,"
           "oracle_grad_mag\n";
    for (int l = 0; l < kLayers; ++l)
      for (std::int64_t r = 0; r < R; ++r)
        for (std::int64_t c = 0; c < C; ++c) {
          const std::int64_t i = (l * R + r) * C + c;
          csv << l << ',' << r << ',' << c << ',' << y[i] << ',' << y[i] * ck.stats.theta_max
              << ',' << std::abs(res.pred_norm[i] - y[i]) << ',' << gt.gx[i] << ',' << gt.gy[i]
              << ',' << gtm[i] << '\n';
        }
  }
  return res;
}

}  // namespace fsaheat
