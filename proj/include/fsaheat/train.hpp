#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "fsaheat/checkpoint.hpp"
#include "fsaheat/config.hpp"
#include "fsaheat/dataset.hpp"
#include "fsaheat/loss.hpp"
#include "fsaheat/net.hpp"

namespace fsaheat {

// One dataset sample in network units: standardized inputs, target scaled so
// the training-set maximum rise is 1.
struct TrainSample {
  Tensor x;  // [kChannels, 4, R, C]
  Tensor y;  // [4, R, C]
};

inline std::vector<TrainSample> load_samples(const std::string& dir, const DatasetManifest& m,
                                             const DatasetStats& stats) {
  std::vector<TrainSample> out;
  out.reserve(static_cast<std::size_t>(m.n));
  for (std::int64_t i = 0; i < m.n; ++i) {
    SampleRaw raw = read_sample(dir, m, i);
    out.push_back({standardize_inputs(raw.inputs, stats), normalize_target(raw.target, stats)});
  }
  return out;
}

// Adam. Moment buffers follow the parameter registration order; `t` counts
// applied steps for bias correction.
struct AdamState {
  std::vector<Tensor> m, v;
  std::int64_t t = 0;

  explicit AdamState(const ParamStore& params) {
    m.reserve(params.items.size());
    v.reserve(params.items.size());
    for (const auto& [name, p] : params.items) {
      m.emplace_back(p.value().shape);
      v.emplace_back(p.value().shape);
    }
  }

  void step(ParamStore& params, const TrainParams& tp, double lr) {
    ++t;
    const double c1 = 1.0 - std::pow(tp.beta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(tp.beta2, static_cast<double>(t));
    for (std::size_t i = 0; i < params.items.size(); ++i) {
      Node& n = *params.items[i].second.node();
      n.ensure_grad();
      Tensor& mi = m[i];
      Tensor& vi = v[i];
      for (std::int64_t j = 0; j < n.value.numel(); ++j) {
        const double g = n.grad[j];
        mi[j] = tp.beta1 * mi[j] + (1.0 - tp.beta1) * g;
        vi[j] = tp.beta2 * vi[j] + (1.0 - tp.beta2) * g * g;
        n.value[j] -= lr * (mi[j] / c1) / (std::sqrt(vi[j] / c2) + tp.adam_eps);
      }
    }
  }
};

// Half-cosine decay from lr to 0 over the run; the final epoch keeps a small
// nonzero step.
inline double cosine_lr(double lr, std::int64_t epoch, std::int64_t epochs) {
  const double pi = std::acos(-1.0);
  return lr * 0.5 * (1.0 + std::cos(pi * static_cast<double>(epoch) / static_cast<double>(epochs)));
}

struct EpochLog {
  std::int64_t epoch = 0;
  double lr = 0.0;
  double spatial = 0.0, frequency = 0.0, fsl = 0.0;
  double val_rmse = 0.0;
};

struct TrainResult {
  std::vector<EpochLog> log;
  std::int64_t best_epoch = -1;
  double best_val_rmse = std::numeric_limits<double>::infinity();
  bool val_is_train = false;
  std::string best_path, final_path, log_path;
};

inline double rmse_over(const FsaHeatNet& net, const std::vector<TrainSample>& samples,
                        std::int64_t lo, std::int64_t hi) {
  double sq = 0.0;
  std::int64_t n = 0;
  for (std::int64_t i = lo; i < hi; ++i) {
    const Tensor pred = net.forward(samples[static_cast<std::size_t>(i)].x).value();
    const Tensor& y = samples[static_cast<std::size_t>(i)].y;
    for (std::int64_t j = 0; j < y.numel(); ++j) {
      const double d = pred[j] - y[j];
      sq += d * d;
    }
    n += y.numel();
  }
  return std::sqrt(sq / static_cast<double>(n));
}

// Deterministic run: data order comes from per-epoch seeded shuffles, the
// step itself is sequential, and the best-validation weights are what
// best.ckpt retains. The frequency loss term is dropped (alpha treated as 0)
// when the config disables it.
inline TrainResult train(const std::string& data_dir, const NetConfig& ncfg,
                         const LossParams& lp, const TrainParams& tp,
                         const std::string& out_dir) {
  ncfg.validate();
  lp.validate();
  tp.validate();
  std::filesystem::create_directories(out_dir);

  const DatasetManifest m = load_manifest(data_dir);
  const std::vector<TrainSample> samples = load_samples(data_dir, m, m.stats);
  const std::int64_t n_train = m.n_train;
  check(n_train >= 1, "train: dataset has no training samples");

  TrainResult res;
  res.val_is_train = m.n_val == 0;
  const std::int64_t val_lo = res.val_is_train ? 0 : n_train;
  const std::int64_t val_hi = res.val_is_train ? n_train : m.n;

  FsaHeatNet net(ncfg, tp.seed);
  AdamState adam(net.params);
  const double alpha = ncfg.freq_loss ? lp.alpha : 0.0;

  res.log_path = out_dir + "/train_log.csv";
  std::ofstream log(res.log_path);
  check(log.good(), "train: cannot open " + res.log_path);
  log.precision(17);
  log << "epoch,lr,loss_spatial,loss_frequency,loss_fsl,val_rmse\n";

  Checkpoint best;
  std::vector<std::int64_t> order(static_cast<std::size_t>(n_train));
  for (std::int64_t i = 0; i < n_train; ++i) order[static_cast<std::size_t>(i)] = i;

  for (std::int64_t epoch = 0; epoch < tp.epochs; ++epoch) {
    const double lr = cosine_lr(tp.lr, epoch, tp.epochs);
    Rng shuffle_rng(derive_seed(tp.seed, "shuffle", static_cast<std::uint64_t>(epoch)));
    for (std::int64_t i = n_train - 1; i > 0; --i) {
      const std::int64_t j = shuffle_rng.uniform_int(0, i);
      std::swap(order[static_cast<std::size_t>(i)], order[static_cast<std::size_t>(j)]);
    }

    double sum_s = 0.0, sum_f = 0.0, sum_t = 0.0;
    for (std::int64_t b0 = 0; b0 < n_train; b0 += tp.batch) {
      const std::int64_t bn = std::min(tp.batch, n_train - b0);
      // Any batch failure — a non-finite loss scalar or an op-level finiteness
      // check tripping mid-forward — aborts naming the batch seed, which with
      // the epoch order pins down the exact samples involved.
      const std::uint64_t batch_seed =
          derive_seed(tp.seed, "batch",
                      static_cast<std::uint64_t>(epoch) * 1000003u + static_cast<std::uint64_t>(b0 / tp.batch));
      try {
        net.params.zero_grad();
        Var batch_total;
        for (std::int64_t k = 0; k < bn; ++k) {
          const TrainSample& s = samples[static_cast<std::size_t>(order[static_cast<std::size_t>(b0 + k)])];
          LossBreakdown bd = fsl(net.forward(s.x), s.y, alpha, lp.beta);
          sum_s += bd.spatial;
          sum_f += bd.frequency;
          sum_t += bd.total.value()[0];
          batch_total = batch_total.defined() ? add(batch_total, bd.total) : bd.total;
        }
        const Var batch_loss = scale(batch_total, 1.0 / static_cast<double>(bn));
        check(std::isfinite(batch_loss.value()[0]), "non-finite loss");
        backward(batch_loss);
        adam.step(net.params, tp, lr);
      } catch (const std::exception& e) {
        throw std::runtime_error("train: epoch " + std::to_string(epoch) + " batch " +
                                 std::to_string(b0 / tp.batch) + " (batch seed 0x" +
                                 hex64(batch_seed) + ") aborted: " + e.what());
      }
    }

    EpochLog el;
    el.epoch = epoch;
    el.lr = lr;
    el.spatial = sum_s / static_cast<double>(n_train);
    el.frequency = sum_f / static_cast<double>(n_train);
    el.fsl = sum_t / static_cast<double>(n_train);
    el.val_rmse = rmse_over(net, samples, val_lo, val_hi);
    res.log.push_back(el);
    log << el.epoch << ',' << el.lr << ',' << el.spatial << ',' << el.frequency << ',' << el.fsl
        << ',' << el.val_rmse << '\n';
    log.flush();

    if (el.val_rmse < res.best_val_rmse) {
      res.best_val_rmse = el.val_rmse;
      res.best_epoch = epoch;
      best = snapshot(net, m.rows, m.cols, m.stats, lp, epoch, el.val_rmse);
    }
    if (tp.checkpoint_every > 0 && (epoch + 1) % tp.checkpoint_every == 0) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "epoch_%05lld.ckpt", static_cast<long long>(epoch));
      save_checkpoint(out_dir + "/" + buf, snapshot(net, m.rows, m.cols, m.stats, lp, epoch, el.val_rmse));
    }
    if (tp.early_stop_fsl > 0.0 && el.fsl < tp.early_stop_fsl) break;
  }

  res.best_path = out_dir + "/best.ckpt";
  res.final_path = out_dir + "/final.ckpt";
  save_checkpoint(res.best_path, best);
  const EpochLog& last = res.log.back();
  save_checkpoint(res.final_path, snapshot(net, m.rows, m.cols, m.stats, lp, last.epoch, last.val_rmse));
  return res;
}

}  // namespace fsaheat
