#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "fsaheat/checkpoint.hpp"
#include "fsaheat/harness.hpp"
#include "fsaheat/train.hpp"
#include "testutil.hpp"

using namespace fsaheat;
namespace fs = std::filesystem;

namespace {

NetConfig tiny() {
  NetConfig c;
  c.base_channels = 2;
  c.blocks = {1, 1, 1, 1};
  c.fci_depth = 1;
  c.heads = 1;
  c.token_h = 1;
  c.token_w = 1;
  c.token_dim = 4;
  c.ffn_ratio = 1;
  c.ppnet_depth = 1;
  c.ppnet_channels = 2;
  return c;
}

StackConfig grid_config(std::int64_t rows, std::int64_t cols) {
  StackConfig s = stack_from(KvConfig{});
  s.rows = rows;
  s.cols = cols;
  return s;
}

fs::path fresh_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("fsaheat_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

// Small on-disk dataset shared by the training tests.
std::string make_data(const std::string& name, std::int64_t n, std::int64_t grid,
                      double val_fraction, std::uint64_t seed = 5) {
  const fs::path dir = fresh_dir(name);
  DatasetParams p;
  p.n = n;
  p.master_seed = seed;
  p.val_fraction = val_fraction;
  build_dataset(grid_config(grid, grid), p, dir.string(), 2);
  return dir.string();
}

TrainParams quick_train(std::int64_t epochs, std::uint64_t seed = 11) {
  TrainParams tp;
  tp.lr = 1e-3;
  tp.batch = 2;
  tp.epochs = epochs;
  tp.seed = seed;
  return tp;
}

}  // namespace

TEST_CASE("net, loss, and train configs round-trip through canonical text") {
  NetConfig n = tiny();
  n.blocks = {1, 2, 3, 1};
  n.fciformer = false;
  const NetConfig n2 = net_from(KvConfig::parse(net_to_kv(n).str()));
  CHECK(net_to_kv(n2).str() == net_to_kv(n).str());
  CHECK(net_digest(n2) == net_digest(n));
  NetConfig flipped = n;
  flipped.freq_branch = false;
  CHECK(net_digest(flipped) != net_digest(n));

  LossParams lp;
  lp.alpha = 0.25;
  lp.beta = 2.5;
  const LossParams lp2 = loss_from(KvConfig::parse(loss_to_kv(lp).str()));
  CHECK(lp2.alpha == lp.alpha);
  CHECK(lp2.beta == lp.beta);

  TrainParams tp;
  tp.lr = 7.5e-4;
  tp.batch = 3;
  tp.epochs = 17;
  tp.seed = 99;
  tp.early_stop_fsl = 0.125;
  const TrainParams tp2 = train_from(KvConfig::parse(train_to_kv(tp).str()));
  CHECK(train_to_kv(tp2).str() == train_to_kv(tp).str());
}

TEST_CASE("checkpoint round-trips parameters bit-exactly") {
  const fs::path dir = fresh_dir("ckpt_roundtrip");
  FsaHeatNet net(tiny(), 3);
  DatasetStats stats;
  for (int c = 0; c < kChannels; ++c) {
    stats.mean[static_cast<std::size_t>(c)] = 0.1 * c;
    stats.stdev[static_cast<std::size_t>(c)] = 1.0 + c;
  }
  stats.theta_max = 42.5;
  LossParams lp;
  lp.alpha = 0.75;
  const Checkpoint saved = snapshot(net, 16, 16, stats, lp, 12, 0.034);
  const std::string path = (dir / "net.ckpt").string();
  save_checkpoint(path, saved);

  const Checkpoint loaded = load_checkpoint(path);
  CHECK(net_digest(loaded.net) == net_digest(net.cfg));
  CHECK(loaded.rows == 16);
  CHECK(loaded.cols == 16);
  CHECK(loaded.stats.theta_max == 42.5);
  CHECK(loaded.stats.mean[3] == 0.1 * 3);
  CHECK(loaded.loss.alpha == 0.75);
  CHECK(loaded.epoch == 12);
  CHECK(loaded.val_rmse == 0.034);
  REQUIRE(loaded.params.size() == net.params.items.size());
  for (std::size_t i = 0; i < loaded.params.size(); ++i) {
    CHECK(loaded.params[i].first == net.params.items[i].first);
    CHECK(loaded.params[i].second.data == net.params.items[i].second.value().data);
  }

  // A net restored from disk computes the identical forward pass.
  FsaHeatNet other(tiny(), 999);
  restore(other, loaded);
  Rng rng(21);
  const Tensor x = fsaheat::test::random_tensor(Shape{kChannels, kLayers, 16, 16}, rng, -1.0, 1.0);
  CHECK(other.forward(x).value().data == net.forward(x).value().data);
}

TEST_CASE("checkpoint refuses mismatched architecture and corrupt files") {
  const fs::path dir = fresh_dir("ckpt_refuse");
  FsaHeatNet net(tiny(), 3);
  const std::string path = (dir / "net.ckpt").string();
  save_checkpoint(path, snapshot(net, 16, 16, DatasetStats{}, LossParams{}, 0, 0.0));

  NetConfig wide = tiny();
  wide.base_channels = 4;
  FsaHeatNet other(wide, 3);
  CHECK_THROWS_AS(restore(other, load_checkpoint(path)), std::invalid_argument);

  {
    std::ofstream out(dir / "junk.ckpt", std::ios::binary);
    out << "not a checkpoint";
  }
  CHECK_THROWS_AS(load_checkpoint((dir / "junk.ckpt").string()), std::invalid_argument);

  const std::string whole = slurp(path);
  {
    std::ofstream out(dir / "cut.ckpt", std::ios::binary);
    out.write(whole.data(), static_cast<std::streamsize>(whole.size() / 2));
  }
  CHECK_THROWS_AS(load_checkpoint((dir / "cut.ckpt").string()), std::invalid_argument);
}

TEST_CASE("cosine schedule and moment-estimate update match the formulas") {
  CHECK(cosine_lr(1e-3, 0, 100) == 1e-3);
  CHECK(cosine_lr(1e-3, 50, 100) == Catch::Approx(0.5e-3).epsilon(1e-12));
  for (std::int64_t e = 1; e < 100; ++e)
    CHECK(cosine_lr(1e-3, e, 100) < cosine_lr(1e-3, e - 1, 100));
  CHECK(cosine_lr(1e-3, 99, 100) > 0.0);

  // One parameter, one step: the update must be lr * mhat / (sqrt(vhat) + eps)
  // with bias-corrected first/second moments of the observed gradient.
  ParamStore ps;
  Var p = ps.add("w", Tensor(Shape{2}, {1.0, -2.0}));
  p.node()->ensure_grad();
  p.node()->grad[0] = 0.3;
  p.node()->grad[1] = -0.7;
  TrainParams tp;
  AdamState adam(ps);
  adam.step(ps, tp, 1e-3);
  for (int i = 0; i < 2; ++i) {
    const double g = i == 0 ? 0.3 : -0.7;
    const double m = (1.0 - tp.beta1) * g / (1.0 - tp.beta1);
    const double v = (1.0 - tp.beta2) * g * g / (1.0 - tp.beta2);
    const double want = (i == 0 ? 1.0 : -2.0) - 1e-3 * m / (std::sqrt(v) + tp.adam_eps);
    CHECK(p.value()[i] == Catch::Approx(want).epsilon(1e-15));
  }
}

TEST_CASE("training is deterministic in the seed") {
  const std::string data = make_data("train_det", 4, 16, 0.0);
  const TrainParams tp = quick_train(3);
  const TrainResult a = train(data, tiny(), LossParams{}, tp, fresh_dir("train_det_a").string());
  const TrainResult b = train(data, tiny(), LossParams{}, tp, fresh_dir("train_det_b").string());
  REQUIRE(a.log.size() == b.log.size());
  for (std::size_t e = 0; e < a.log.size(); ++e) {
    CHECK(a.log[e].fsl == b.log[e].fsl);
    CHECK(a.log[e].val_rmse == b.log[e].val_rmse);
  }
  CHECK(slurp(a.best_path) == slurp(b.best_path));

  TrainParams other = quick_train(3, 12);
  const TrainResult c = train(data, tiny(), LossParams{}, other, fresh_dir("train_det_c").string());
  CHECK(c.log.back().fsl != a.log.back().fsl);
}

TEST_CASE("frequency loss weight changes the trajectory; disabled term logs zero") {
  const std::string data = make_data("train_alpha", 4, 16, 0.0);
  const TrainParams tp = quick_train(3);
  LossParams with;
  with.alpha = 0.5;
  LossParams without;
  without.alpha = 0.0;
  const TrainResult a = train(data, tiny(), with, tp, fresh_dir("train_alpha_a").string());
  const TrainResult b = train(data, tiny(), without, tp, fresh_dir("train_alpha_b").string());
  std::size_t first_diff = a.log.size();
  for (std::size_t e = 0; e < a.log.size(); ++e) {
    if (a.log[e].val_rmse != b.log[e].val_rmse) {
      first_diff = e;
      break;
    }
  }
  INFO("first differing epoch: " << first_diff);
  CHECK(first_diff < a.log.size());

  // freq_loss=false trains exactly as alpha=0 and logs a zero frequency term.
  NetConfig no_freq_loss = tiny();
  no_freq_loss.freq_loss = false;
  const TrainResult c =
      train(data, no_freq_loss, with, tp, fresh_dir("train_alpha_c").string());
  for (std::size_t e = 0; e < c.log.size(); ++e) {
    CHECK(c.log[e].frequency == 0.0);
    CHECK(c.log[e].val_rmse == b.log[e].val_rmse);
  }
}

TEST_CASE("numeric blow-up aborts with the offending batch seed") {
  const std::string data = make_data("train_blowup", 4, 16, 0.0);
  TrainParams tp = quick_train(4);
  tp.lr = 1e260;  // first step catapults the parameters out of range
  try {
    train(data, tiny(), LossParams{}, tp, fresh_dir("train_blowup_out").string());
    FAIL("expected abort");
  } catch (const std::runtime_error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("aborted") != std::string::npos);
    CHECK(msg.find("batch seed 0x") != std::string::npos);
  }
}

TEST_CASE("best checkpoint reproduces the recorded validation rmse") {
  const std::string data = make_data("train_best", 4, 16, 0.0);
  const std::string out = fresh_dir("train_best_out").string();
  const TrainResult tr = train(data, tiny(), LossParams{}, quick_train(4), out);
  const Checkpoint ck = load_checkpoint(tr.best_path);
  CHECK(ck.epoch == tr.best_epoch);
  CHECK(ck.val_rmse == tr.best_val_rmse);

  FsaHeatNet net(tiny(), 0);
  restore(net, ck);
  const DatasetManifest m = load_manifest(data);
  const auto samples = load_samples(data, m, m.stats);
  // No validation split here, so the recorded value is the train-slice rmse.
  const double rmse = rmse_over(net, samples, 0, m.n_train);
  CHECK(rmse == Catch::Approx(tr.best_val_rmse).epsilon(1e-12));
}

TEST_CASE("protocol recipes pin the advertised dataset knobs") {
  DatasetParams base;
  base.n = 100;
  base.master_seed = 9;
  CHECK(protocol_params(base, protocol_by_name("in-dist"), 6).k_scale == 1.0);
  CHECK(protocol_params(base, protocol_by_name("k+50"), 6).k_scale == 1.5);
  CHECK(protocol_params(base, protocol_by_name("k-50"), 6).k_scale == 0.5);
  CHECK(protocol_params(base, protocol_by_name("sources-10"), 6).fixed_sources == 10);
  CHECK(protocol_params(base, protocol_by_name("sources-60"), 6).fixed_sources == 60);
  CHECK(protocol_params(base, protocol_by_name("sources-80"), 6).fixed_sources == 80);
  CHECK(protocol_params(base, protocol_by_name("k+50"), 6).n == 6);
  CHECK(protocol_params(base, protocol_by_name("k+50"), 6).val_fraction == 0.0);
  CHECK_THROWS_AS(protocol_by_name("bogus"), std::invalid_argument);

  // Distinct protocols must not share sample seeds.
  const auto a = protocol_params(base, protocol_by_name("k+50"), 6).master_seed;
  const auto b = protocol_params(base, protocol_by_name("k-50"), 6).master_seed;
  CHECK(a != b);
  CHECK(a != base.master_seed);
}

TEST_CASE("protocol datasets carry the pinned physics") {
  const StackConfig stack = grid_config(16, 16);
  DatasetParams base;
  base.n = 3;
  base.master_seed = 31;
  const fs::path up_dir = fresh_dir("proto_up");
  const fs::path dn_dir = fresh_dir("proto_dn");
  const DatasetParams up = protocol_params(base, protocol_by_name("k+50"), 3);
  const DatasetParams dn = protocol_params(base, protocol_by_name("k-50"), 3);
  build_dataset(stack, up, up_dir.string(), 1);
  build_dataset(stack, dn, dn_dir.string(), 1);
  const DatasetManifest mu = load_manifest(up_dir.string());
  const DatasetManifest md = load_manifest(dn_dir.string());
  // Same index -> same layout seed, conductivities scaled exactly 1.5 / 0.5.
  const SampleRaw su = read_sample(up_dir.string(), mu, 0);
  const SampleRaw sd = read_sample(dn_dir.string(), md, 0);
  const std::int64_t plane = kLayers * 16 * 16;
  for (std::int64_t i = 0; i < plane; ++i) {
    const double ku = su.inputs[ch_conductivity * plane + i];
    const double kd = sd.inputs[ch_conductivity * plane + i];
    CHECK(ku == Catch::Approx(3.0 * kd).epsilon(1e-12));
  }

  const fs::path src_dir = fresh_dir("proto_src");
  build_dataset(stack, protocol_params(base, protocol_by_name("sources-10"), 3),
                src_dir.string(), 1);
  const DatasetManifest ms = load_manifest(src_dir.string());
  for (const auto n_src : ms.sample_sources) CHECK(n_src == 10);
}

TEST_CASE("evaluate produces complete per-layer reports and the std baseline") {
  const StackConfig stack = grid_config(16, 16);
  DatasetParams base;
  base.n = 16;
  base.master_seed = 13;

  // An untrained net is a legitimate checkpoint for report mechanics; steal
  // stats from a small training build so normalization is realistic.
  const std::string stats_dir = make_data("eval_stats", 4, 16, 0.0, 13);
  const DatasetManifest sm = load_manifest(stats_dir);
  FsaHeatNet net(tiny(), 5);
  const Checkpoint ck = snapshot(net, 16, 16, sm.stats, LossParams{}, 0, 0.0);

  const std::string out = fresh_dir("eval_out").string();
  const EvalReport rep = evaluate(ck, stack, base, "in-dist", 6, out, 2);
  CHECK(rep.n == 6);
  CHECK(rep.protocol == "in-dist");
  CHECK(rep.rows == 16);
  for (int l = 0; l < kLayers; ++l) {
    const LayerMetrics& lm = rep.per_layer[static_cast<std::size_t>(l)];
    CHECK(std::isfinite(lm.rmse));
    CHECK(std::isfinite(lm.mae));
    CHECK(std::isfinite(lm.psnr));
    CHECK(lm.rmse > 0.0);
  }
  CHECK(rep.aggregate.rmse > 0.0);
  CHECK(rep.kelvin_rmse == Catch::Approx(rep.aggregate.rmse * sm.stats.theta_max));

  // The metrics CSV has header + n*layers rows.
  std::istringstream csv(slurp(rep.metrics_csv));
  std::string line;
  std::int64_t lines = 0;
  while (std::getline(csv, line))
    if (!line.empty()) ++lines;
  CHECK(lines == 1 + rep.n * kLayers);

  // Baseline equals the population std of the normalized targets.
  const DatasetManifest em = load_manifest(out + "/data-in-dist");
  double sum = 0.0, sq = 0.0;
  std::int64_t cells = 0;
  for (std::int64_t i = 0; i < em.n; ++i) {
    const Tensor y = normalize_target(read_sample(out + "/data-in-dist", em, i).target, ck.stats);
    for (std::int64_t j = 0; j < y.numel(); ++j) {
      sum += y[j];
      sq += y[j] * y[j];
    }
    cells += y.numel();
  }
  const double mean = sum / static_cast<double>(cells);
  const double stddev = std::sqrt(sq / static_cast<double>(cells) - mean * mean);
  CHECK(rep.baseline_rmse == Catch::Approx(stddev).epsilon(1e-12));

  // Determinism: a rerun reuses the dataset and reproduces the aggregates.
  const EvalReport rep2 = evaluate(ck, stack, base, "in-dist", 6, out, 1);
  CHECK(rep2.aggregate.rmse == rep.aggregate.rmse);
  CHECK(rep2.dataset_digest == rep.dataset_digest);

  // Grid mismatch is refused.
  CHECK_THROWS_AS(evaluate(ck, grid_config(24, 24), base, "in-dist", 6,
                           fresh_dir("eval_bad").string(), 1),
                  std::invalid_argument);
}

TEST_CASE("report serializes with sample counts and digests") {
  const StackConfig stack = grid_config(16, 16);
  DatasetParams base;
  base.n = 4;
  base.master_seed = 77;
  const std::string stats_dir = make_data("report_stats", 3, 16, 0.0, 77);
  const DatasetManifest sm = load_manifest(stats_dir);
  FsaHeatNet net(tiny(), 5);
  const Checkpoint ck = snapshot(net, 16, 16, sm.stats, LossParams{}, 0, 0.0);
  const std::string out = fresh_dir("report_out").string();
  const EvalReport rep = evaluate(ck, stack, base, "sources-10", 4, out, 1);
  save_report(rep, out + "/report.json");
  nlohmann::json j;
  std::ifstream in(out + "/report.json");
  in >> j;
  CHECK(j["n"].get<std::int64_t>() == 4);
  CHECK(j["dataset_digest"].get<std::uint64_t>() == rep.dataset_digest);
  CHECK(j["dataset_master_seed"].get<std::uint64_t>() != base.master_seed);
  CHECK(j["per_layer"].size() == kLayers);
  CHECK(j["aggregate"].contains("grad_ang_err"));
}

TEST_CASE("predict writes schema-complete field files") {
  const std::string data = make_data("predict_data", 3, 16, 0.0, 41);
  const DatasetManifest m = load_manifest(data);
  FsaHeatNet net(tiny(), 5);
  const Checkpoint ck = snapshot(net, 16, 16, m.stats, LossParams{}, 0, 0.0);
  const SampleRaw s = read_sample(data, m, 1);

  const std::string out = fresh_dir("predict_out").string();
  const PredictResult res = predict(ck, s.inputs, &s.target, out);
  CHECK(res.has_oracle);
  CHECK(res.met.rmse > 0.0);

  for (const char* name : {"prediction.csv", "error.csv"}) {
    std::istringstream csv(slurp(fs::path(out) / name));
    std::string line;
    std::int64_t lines = 0;
    while (std::getline(csv, line))
      if (!line.empty()) ++lines;
    INFO(name);
    CHECK(lines == 1 + kLayers * 16 * 16);
  }

  // Wrong grid is refused.
  Tensor bad(Shape{kChannels, kLayers, 8, 8});
  CHECK_THROWS_AS(predict(ck, bad, nullptr, fresh_dir("predict_bad").string()),
                  std::invalid_argument);
}

TEST_CASE("zero-power prediction reports absolute error equal to the prediction") {
  const std::string data = make_data("predict_zero_stats", 3, 16, 0.0, 43);
  const DatasetManifest m = load_manifest(data);
  FsaHeatNet net(tiny(), 5);
  const Checkpoint ck = snapshot(net, 16, 16, m.stats, LossParams{}, 0, 0.0);

  const StackConfig stack = grid_config(16, 16);
  const Tensor zero_power(Shape{kLayers, 16, 16});
  const Tensor inputs = encode_inputs_raw(stack, zero_power);
  const Tensor oracle(Shape{kLayers, 16, 16});  // theta = 0 exactly
  const std::string out = fresh_dir("predict_zero").string();
  const PredictResult res = predict(ck, inputs, &oracle, out);

  std::istringstream csv(slurp(fs::path(out) / "error.csv"));
  std::string line;
  std::getline(csv, line);  // header
  std::int64_t i = 0;
  while (std::getline(csv, line)) {
    std::istringstream row(line);
    std::string field;
    for (int f = 0; f < 5; ++f) std::getline(row, field, ',');  // ... oracle_kelvin
    CHECK(std::stod(field) == 0.0);
    std::getline(row, field, ',');  // abs_err_norm
    CHECK(std::stod(field) == Catch::Approx(std::abs(res.pred_norm[i])).epsilon(1e-12));
    ++i;
  }
  CHECK(i == kLayers * 16 * 16);
}

TEST_CASE("ablation grid covers the six variants with exact structural audits") {
  const auto grid = ablation_grid(tiny());
  REQUIRE(grid.size() == 6);
  CHECK(grid[0].name == "full");
  CHECK(grid[1].name == "spatial-loss");
  CHECK_FALSE(grid[1].net.freq_loss);
  CHECK(grid[1].net.freq_branch);
  CHECK_FALSE(grid[2].net.fciformer);
  CHECK_FALSE(grid[3].net.freq_branch);
  CHECK_FALSE(grid[4].net.spatial_branch);
  CHECK_FALSE(grid[5].net.freq_branch);
  CHECK_FALSE(grid[5].net.fciformer);
  CHECK_FALSE(grid[5].net.freq_loss);
  CHECK(grid[5].net.spatial_branch);

  for (const auto& v : grid) {
    FsaHeatNet net(v.net, 1);
    CHECK(net.params.has_infix(".freq.") == v.net.freq_branch);
    CHECK(net.params.has_infix("fci.") == v.net.fciformer);
  }
}

TEST_CASE("ablation run trains every variant and audits pass") {
  const std::string data = make_data("ablate_data", 4, 16, 0.0, 19);
  const StackConfig stack = grid_config(16, 16);
  DatasetParams base;
  base.n = 4;
  base.master_seed = 19;
  const std::string out = fresh_dir("ablate_out").string();
  const AblationReport rep =
      ablate(data, stack, base, tiny(), LossParams{}, quick_train(2), 2, out, 2);
  REQUIRE(rep.rows.size() == 6);
  std::int64_t full_params = 0;
  for (const AblationRow& r : rep.rows) {
    CHECK(r.has_freq_params == r.expect_freq_params);
    CHECK(r.has_fci_params == r.expect_fci_params);
    CHECK(r.eval.n == 2);
    CHECK(std::isfinite(r.eval.aggregate.rmse));
    if (r.name == "full") full_params = r.param_count;
  }
  for (const AblationRow& r : rep.rows)
    if (r.name != "full" && r.name != "spatial-loss") CHECK(r.param_count < full_params);

  std::istringstream csv(slurp(rep.csv_path));
  std::string line;
  std::int64_t lines = 0;
  while (std::getline(csv, line))
    if (!line.empty()) ++lines;
  CHECK(lines == 7);
}
