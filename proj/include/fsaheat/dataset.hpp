#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "fsaheat/config.hpp"
#include "fsaheat/parallel.hpp"
#include "fsaheat/rng.hpp"
#include "fsaheat/thermal.hpp"

namespace fsaheat {

enum Channel : int {
  ch_thickness = 0,
  ch_side,
  ch_hs_side,
  ch_conductivity,
  ch_hcoeff,
  ch_mask,
  ch_qs,
  ch_qt,
};
inline constexpr int kChannels = 8;

struct SourceRect {
  std::int64_t r = 0, c = 0, h = 1, w = 1;
  double density = 0.0;  // W per covered cell
};

struct LayoutSpec {
  std::uint64_t seed = 0;
  std::int64_t rows = 0, cols = 0;
  std::vector<SourceRect> sources;
};

namespace detail {

struct CellBox {
  std::int64_t r0, r1, c0, c1;  // inclusive
  std::int64_t height() const { return r1 - r0 + 1; }
  std::int64_t width() const { return c1 - c0 + 1; }
};

inline CellBox footprint_box(const StackConfig& cfg, int layer) {
  CellBox b{cfg.rows, -1, cfg.cols, -1};
  for (std::int64_t r = 0; r < cfg.rows; ++r)
    for (std::int64_t c = 0; c < cfg.cols; ++c)
      if (cfg.in_footprint(layer, r, c)) {
        b.r0 = std::min(b.r0, r);
        b.r1 = std::max(b.r1, r);
        b.c0 = std::min(b.c0, c);
        b.c1 = std::max(b.c1, c);
      }
  return b;
}

}  // namespace detail

// Rectangular heat sources on the source die, uniform in position and size,
// per-cell power from a truncated Gaussian. Overlaps add.
inline LayoutSpec generate_layout(const StackConfig& cfg, const DatasetParams& p,
                                  std::uint64_t seed) {
  const auto box = detail::footprint_box(cfg, 0);
  check(box.r1 >= box.r0 && box.c1 >= box.c0,
        "generate_layout: source footprint contains no grid cells");
  LayoutSpec layout;
  layout.seed = seed;
  layout.rows = cfg.rows;
  layout.cols = cfg.cols;
  Rng rng(seed);
  const std::int64_t count =
      p.fixed_sources > 0 ? p.fixed_sources : rng.uniform_int(p.min_sources, p.max_sources);
  const std::int64_t max_h = std::max<std::int64_t>(1, box.height() / 4);
  const std::int64_t max_w = std::max<std::int64_t>(1, box.width() / 4);
  layout.sources.reserve(static_cast<std::size_t>(count));
  for (std::int64_t i = 0; i < count; ++i) {
    SourceRect s;
    s.h = rng.uniform_int(1, max_h);
    s.w = rng.uniform_int(1, max_w);
    s.r = rng.uniform_int(box.r0, box.r1 - s.h + 1);
    s.c = rng.uniform_int(box.c0, box.c1 - s.w + 1);
    s.density = rng.truncated_normal(p.density_mean, p.density_std, p.density_min);
    layout.sources.push_back(s);
  }
  return layout;
}

inline Tensor power_map(const StackConfig& cfg, const LayoutSpec& layout) {
  check(layout.rows == cfg.rows && layout.cols == cfg.cols,
        "power_map: layout grid does not match config");
  Tensor q(Shape{kLayers, cfg.rows, cfg.cols});
  for (const SourceRect& s : layout.sources)
    for (std::int64_t r = s.r; r < s.r + s.h; ++r)
      for (std::int64_t c = s.c; c < s.c + s.w; ++c)
        q[(0 * cfg.rows + r) * cfg.cols + c] += s.density;
  return q;
}

// Raw (unstandardized) input channels [kChannels, 4, R, C] for one sample.
inline Tensor encode_inputs_raw(const StackConfig& cfg, const Tensor& power) {
  check(power.shape == Shape{kLayers, cfg.rows, cfg.cols},
        "encode_inputs_raw: power shape " + power.shape.str() + " does not match grid");
  const std::int64_t R = cfg.rows, C = cfg.cols, plane = R * C;
  Tensor x(Shape{kChannels, kLayers, R, C});
  std::array<double, kLayers> qt{};
  for (int l = 0; l < kLayers; ++l)
    for (std::int64_t i = 0; i < plane; ++i) qt[static_cast<std::size_t>(l)] += power[l * plane + i];
  for (int l = 0; l < kLayers; ++l) {
    for (std::int64_t r = 0; r < R; ++r)
      for (std::int64_t c = 0; c < C; ++c) {
        const std::int64_t i = r * C + c;
        x[(ch_thickness * kLayers + l) * plane + i] = cfg.layers[l].t;
        x[(ch_side * kLayers + l) * plane + i] = cfg.layers[l].l;
        x[(ch_hs_side * kLayers + l) * plane + i] = cfg.side();
        x[(ch_conductivity * kLayers + l) * plane + i] = cfg.layers[l].k;
        x[(ch_hcoeff * kLayers + l) * plane + i] = l == kLayers - 1 ? cfg.h : 0.0;
        x[(ch_mask * kLayers + l) * plane + i] = cfg.in_footprint(l, r, c) ? 1.0 : 0.0;
        x[(ch_qs * kLayers + l) * plane + i] = power[l * plane + i];
        x[(ch_qt * kLayers + l) * plane + i] = qt[static_cast<std::size_t>(l)];
      }
  }
  check(x.all_finite(), "encode_inputs_raw: non-finite channel value");
  return x;
}

// Per-layer conductivity variation: training jitter is uniform in +-k_jitter,
// generalization protocols pin an exact multiplier instead.
inline StackConfig jittered_config(const StackConfig& base, const DatasetParams& p,
                                   std::uint64_t seed) {
  StackConfig cfg = base;
  if (p.k_scale != 1.0) {
    for (auto& layer : cfg.layers) layer.k *= p.k_scale;
  } else if (p.k_jitter > 0.0) {
    Rng rng(seed);
    for (auto& layer : cfg.layers) layer.k *= 1.0 + rng.uniform(-p.k_jitter, p.k_jitter);
  }
  return cfg;
}

struct SampleRaw {
  Tensor inputs;  // [kChannels, 4, R, C]
  Tensor target;  // [4, R, C] temperature rise (K)
  std::uint64_t seed = 0;
  std::int64_t n_sources = 0;
};

inline SampleRaw make_sample(const StackConfig& base, const DatasetParams& p,
                             std::int64_t index) {
  const std::uint64_t layout_seed = derive_seed(p.master_seed, "layout", static_cast<std::uint64_t>(index));
  const std::uint64_t jitter_seed = derive_seed(p.master_seed, "jitter", static_cast<std::uint64_t>(index));
  const StackConfig cfg = jittered_config(base, p, jitter_seed);
  const LayoutSpec layout = generate_layout(cfg, p, layout_seed);
  const Tensor q = power_map(cfg, layout);
  SampleRaw s;
  s.seed = layout_seed;
  s.n_sources = static_cast<std::int64_t>(layout.sources.size());
  try {
    ConductanceNetwork net = assemble(cfg, q);
    s.target = solve(net, 1e-10);
    const double eb = energy_balance(net, s.target);
    check(eb <= 1e-8, "energy balance " + std::to_string(eb) + " above 1e-8");
  } catch (const std::exception& e) {
    throw std::invalid_argument("sample " + std::to_string(index) + " (seed " +
                                hex64(layout_seed) + ") failed: " + e.what());
  }
  s.inputs = encode_inputs_raw(cfg, q);
  return s;
}

struct DatasetStats {
  std::array<double, kChannels> mean{};
  std::array<double, kChannels> stdev{};
  double theta_max = 1.0;
};

struct DatasetManifest {
  int schema_version = 1;
  std::int64_t n = 0, n_train = 0, n_val = 0;
  std::int64_t rows = 0, cols = 0;
  std::uint64_t master_seed = 0;
  std::uint64_t config_digest = 0;
  DatasetStats stats;
  std::vector<std::uint64_t> sample_seeds;
  std::vector<std::int64_t> sample_sources;

  std::string sample_file(std::int64_t i) const {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "sample_%06lld.bin", static_cast<long long>(i));
    return buf;
  }
};

inline KvConfig stack_to_kv(const StackConfig& s) {
  auto join = [](double a, double b, double c, double d) {
    std::ostringstream os;
    os.precision(17);
    os << a << ", " << b << ", " << c << ", " << d;
    return os.str();
  };
  KvConfig kv;
  kv.set("stack", "thickness", join(s.layers[0].t, s.layers[1].t, s.layers[2].t, s.layers[3].t));
  kv.set("stack", "side", join(s.layers[0].l, s.layers[1].l, s.layers[2].l, s.layers[3].l));
  kv.set("stack", "conductivity", join(s.layers[0].k, s.layers[1].k, s.layers[2].k, s.layers[3].k));
  auto num = [](double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
  };
  kv.set("stack", "h", num(s.h));
  kv.set("stack", "t_amb", num(s.t_amb));
  kv.set("stack", "rows", std::to_string(s.rows));
  kv.set("stack", "cols", std::to_string(s.cols));
  return kv;
}

inline KvConfig dataset_to_kv(const DatasetParams& p) {
  KvConfig kv;
  auto num = [](double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
  };
  kv.set("dataset", "n", std::to_string(p.n));
  kv.set("dataset", "master_seed", std::to_string(p.master_seed));
  kv.set("dataset", "k_jitter", num(p.k_jitter));
  kv.set("dataset", "k_scale", num(p.k_scale));
  kv.set("dataset", "min_sources", std::to_string(p.min_sources));
  kv.set("dataset", "max_sources", std::to_string(p.max_sources));
  kv.set("dataset", "fixed_sources", std::to_string(p.fixed_sources));
  kv.set("dataset", "density_mean", num(p.density_mean));
  kv.set("dataset", "density_std", num(p.density_std));
  kv.set("dataset", "density_min", num(p.density_min));
  kv.set("dataset", "val_fraction", num(p.val_fraction));
  return kv;
}

inline std::uint64_t dataset_digest(const StackConfig& s, const DatasetParams& p) {
  KvConfig kv = stack_to_kv(s);
  for (const auto& [sec, entries] : dataset_to_kv(p).sections)
    for (const auto& [k, v] : entries) kv.set(sec, k, v);
  return config_digest(kv);
}

namespace detail {

inline void write_block(std::ofstream& out, const Tensor& t) {
  const std::uint64_t count = static_cast<std::uint64_t>(t.numel());
  out.write(reinterpret_cast<const char*>(&count), sizeof(count));
  out.write(reinterpret_cast<const char*>(t.data.data()),
            static_cast<std::streamsize>(count * sizeof(double)));
}

inline Tensor read_block(std::ifstream& in, Shape want) {
  std::uint64_t count = 0;
  in.read(reinterpret_cast<char*>(&count), sizeof(count));
  check(in.good() && count == static_cast<std::uint64_t>(want.numel()),
        "dataset record: block length " + std::to_string(count) + " does not match " + want.str());
  Tensor t(std::move(want));
  in.read(reinterpret_cast<char*>(t.data.data()),
          static_cast<std::streamsize>(count * sizeof(double)));
  check(in.good(), "dataset record: truncated payload");
  return t;
}

}  // namespace detail

inline void write_sample(const std::string& dir, const DatasetManifest& m, std::int64_t i,
                         const SampleRaw& s) {
  std::ofstream out(std::filesystem::path(dir) / m.sample_file(i), std::ios::binary);
  check(out.good(), "write_sample: cannot open output file");
  detail::write_block(out, s.inputs);
  detail::write_block(out, s.target);
  check(out.good(), "write_sample: write failed");
}

inline SampleRaw read_sample(const std::string& dir, const DatasetManifest& m, std::int64_t i) {
  check(i >= 0 && i < m.n, "read_sample: index out of range");
  std::ifstream in(std::filesystem::path(dir) / m.sample_file(i), std::ios::binary);
  check(in.good(), "read_sample: cannot open " + m.sample_file(i));
  SampleRaw s;
  s.inputs = detail::read_block(in, Shape{kChannels, kLayers, m.rows, m.cols});
  s.target = detail::read_block(in, Shape{kLayers, m.rows, m.cols});
  s.seed = m.sample_seeds[static_cast<std::size_t>(i)];
  s.n_sources = m.sample_sources[static_cast<std::size_t>(i)];
  return s;
}

inline void save_manifest(const std::string& dir, const DatasetManifest& m) {
  nlohmann::json j;
  j["schema_version"] = m.schema_version;
  j["n"] = m.n;
  j["n_train"] = m.n_train;
  j["n_val"] = m.n_val;
  j["rows"] = m.rows;
  j["cols"] = m.cols;
  j["master_seed"] = m.master_seed;
  j["config_digest"] = hex64(m.config_digest);
  j["channel_mean"] = m.stats.mean;
  j["channel_std"] = m.stats.stdev;
  j["theta_max"] = m.stats.theta_max;
  j["sample_seeds"] = m.sample_seeds;
  j["sample_sources"] = m.sample_sources;
  std::ofstream out(std::filesystem::path(dir) / "manifest.json");
  check(out.good(), "save_manifest: cannot open manifest.json");
  out << j.dump(2) << '\n';
}

inline DatasetManifest load_manifest(const std::string& dir) {
  std::ifstream in(std::filesystem::path(dir) / "manifest.json");
  check(in.good(), "load_manifest: no manifest.json in " + dir);
  nlohmann::json j;
  in >> j;
  DatasetManifest m;
  m.schema_version = j.at("schema_version").get<int>();
  check(m.schema_version == 1, "load_manifest: unsupported schema version");
  m.n = j.at("n").get<std::int64_t>();
  m.n_train = j.at("n_train").get<std::int64_t>();
  m.n_val = j.at("n_val").get<std::int64_t>();
  m.rows = j.at("rows").get<std::int64_t>();
  m.cols = j.at("cols").get<std::int64_t>();
  m.master_seed = j.at("master_seed").get<std::uint64_t>();
  m.config_digest = std::stoull(j.at("config_digest").get<std::string>(), nullptr, 16);
  check(j.contains("channel_mean") && j.contains("channel_std") && j.contains("theta_max"),
        "load_manifest: standardization statistics missing");
  for (int c = 0; c < kChannels; ++c) {
    m.stats.mean[static_cast<std::size_t>(c)] = j["channel_mean"].at(c).get<double>();
    m.stats.stdev[static_cast<std::size_t>(c)] = j["channel_std"].at(c).get<double>();
  }
  m.stats.theta_max = j.at("theta_max").get<double>();
  m.sample_seeds = j.at("sample_seeds").get<std::vector<std::uint64_t>>();
  m.sample_sources = j.at("sample_sources").get<std::vector<std::int64_t>>();
  check(static_cast<std::int64_t>(m.sample_seeds.size()) == m.n, "load_manifest: seed list length");
  return m;
}

// Generates, solves, and writes n samples; statistics come from the training
// slice only. Samples are built in parallel chunks but written in index order
// by this single writer.
inline DatasetManifest build_dataset(const StackConfig& base, const DatasetParams& p,
                                     const std::string& dir, int threads = 0) {
  base.validate();
  p.validate();
  check(base.rows >= 2 && base.cols >= 2, "build_dataset: dataset grids need at least 2x2 cells");
  std::filesystem::create_directories(dir);
  DatasetManifest m;
  m.n = p.n;
  m.n_val = static_cast<std::int64_t>(std::llround(static_cast<double>(p.n) * p.val_fraction));
  if (m.n_val >= p.n) m.n_val = p.n - 1;
  m.n_train = p.n - m.n_val;
  m.rows = base.rows;
  m.cols = base.cols;
  m.master_seed = p.master_seed;
  m.config_digest = dataset_digest(base, p);
  m.sample_seeds.resize(static_cast<std::size_t>(p.n));
  m.sample_sources.resize(static_cast<std::size_t>(p.n));

  if (threads <= 0) threads = default_threads();
  const std::int64_t chunk = std::max<std::int64_t>(1, 4 * threads);
  std::array<double, kChannels> sum{}, sumsq{};
  double theta_max = 0.0;
  const std::int64_t cells = kLayers * m.rows * m.cols;
  for (std::int64_t start = 0; start < p.n; start += chunk) {
    const std::int64_t count = std::min(chunk, p.n - start);
    std::vector<SampleRaw> batch(static_cast<std::size_t>(count));
    parallel_for(count, threads, [&](std::int64_t j) {
      batch[static_cast<std::size_t>(j)] = make_sample(base, p, start + j);
    });
    for (std::int64_t j = 0; j < count; ++j) {
      const std::int64_t i = start + j;
      const SampleRaw& s = batch[static_cast<std::size_t>(j)];
      write_sample(dir, m, i, s);
      m.sample_seeds[static_cast<std::size_t>(i)] = s.seed;
      m.sample_sources[static_cast<std::size_t>(i)] = s.n_sources;
      if (i < m.n_train) {
        for (int c = 0; c < kChannels; ++c) {
          const double* px = s.inputs.ptr() + c * cells;
          double a = 0.0, b = 0.0;
          for (std::int64_t e = 0; e < cells; ++e) {
            a += px[e];
            b += px[e] * px[e];
          }
          sum[static_cast<std::size_t>(c)] += a;
          sumsq[static_cast<std::size_t>(c)] += b;
        }
        theta_max = std::max(theta_max, s.target.max_abs());
      }
    }
  }
  const double denom = static_cast<double>(m.n_train) * static_cast<double>(cells);
  for (int c = 0; c < kChannels; ++c) {
    const double mu = sum[static_cast<std::size_t>(c)] / denom;
    const double var = std::max(0.0, sumsq[static_cast<std::size_t>(c)] / denom - mu * mu);
    m.stats.mean[static_cast<std::size_t>(c)] = mu;
    // Constant channels (footprint side, heatsink side, ...) standardize to
    // exactly zero via unit scale.
    m.stats.stdev[static_cast<std::size_t>(c)] = std::sqrt(var) < 1e-12 ? 1.0 : std::sqrt(var);
  }
  m.stats.theta_max = theta_max > 0.0 ? theta_max : 1.0;
  save_manifest(dir, m);
  return m;
}

inline Tensor standardize_inputs(const Tensor& raw, const DatasetStats& stats) {
  check(raw.shape.rank() == 4 && raw.shape[0] == kChannels,
        "standardize_inputs: expected [" + std::to_string(kChannels) + ",4,R,C], got " + raw.shape.str());
  Tensor x = raw;
  const std::int64_t cells = x.numel() / kChannels;
  for (int c = 0; c < kChannels; ++c) {
    double* px = x.ptr() + c * cells;
    const double mu = stats.mean[static_cast<std::size_t>(c)];
    const double inv = 1.0 / stats.stdev[static_cast<std::size_t>(c)];
    for (std::int64_t i = 0; i < cells; ++i) px[i] = (px[i] - mu) * inv;
  }
  return x;
}

inline Tensor normalize_target(const Tensor& theta, const DatasetStats& stats) {
  Tensor y = theta;
  const double inv = 1.0 / stats.theta_max;
  for (auto& v : y.data) v *= inv;
  return y;
}

}  // namespace fsaheat
