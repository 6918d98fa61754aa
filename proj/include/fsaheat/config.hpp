#pragma once

#include <array>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "fsaheat/common.hpp"
#include "fsaheat/thermal.hpp"

namespace fsaheat {

// Sectioned key-value text config. Sections and keys keep sorted order, so
// serialization is canonical: parse(str(parse(x))) == parse(x).
struct KvConfig {
  std::map<std::string, std::map<std::string, std::string>> sections;

  static std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
  }

  static KvConfig parse(const std::string& text) {
    KvConfig cfg;
    std::istringstream in(text);
    std::string line, section;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      const auto hash = line.find_first_of("#;");
      if (hash != std::string::npos) line = line.substr(0, hash);
      line = trim(line);
      if (line.empty()) continue;
      if (line.front() == '[') {
        check(line.back() == ']', "config line " + std::to_string(lineno) + ": unterminated section");
        section = trim(line.substr(1, line.size() - 2));
        check(!section.empty(), "config line " + std::to_string(lineno) + ": empty section name");
        cfg.sections[section];
        continue;
      }
      const auto eq = line.find('=');
      check(eq != std::string::npos, "config line " + std::to_string(lineno) + ": expected key = value");
      const std::string key = trim(line.substr(0, eq));
      check(!key.empty(), "config line " + std::to_string(lineno) + ": empty key");
      check(!section.empty(), "config line " + std::to_string(lineno) + ": key before any [section]");
      cfg.sections[section][key] = trim(line.substr(eq + 1));
    }
    return cfg;
  }

  static KvConfig load(const std::string& path) {
    std::ifstream in(path);
    check(in.good(), "config: cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse(buf.str());
  }

  std::string str() const {
    std::ostringstream os;
    bool first = true;
    for (const auto& [sec, kv] : sections) {
      if (!first) os << '\n';
      first = false;
      os << '[' << sec << "]\n";
      for (const auto& [k, v] : kv) os << k << " = " << v << '\n';
    }
    return os.str();
  }

  bool has(const std::string& sec, const std::string& key) const {
    auto it = sections.find(sec);
    return it != sections.end() && it->second.count(key) != 0;
  }

  std::string get(const std::string& sec, const std::string& key, const std::string& dflt) const {
    auto it = sections.find(sec);
    if (it == sections.end()) return dflt;
    auto kt = it->second.find(key);
    return kt == it->second.end() ? dflt : kt->second;
  }

  double get_double(const std::string& sec, const std::string& key, double dflt) const {
    const std::string v = get(sec, key, "");
    if (v.empty()) return dflt;
    std::size_t pos = 0;
    const double x = std::stod(v, &pos);
    check(pos == v.size(), "config [" + sec + "] " + key + ": not a number: " + v);
    return x;
  }

  std::int64_t get_int(const std::string& sec, const std::string& key, std::int64_t dflt) const {
    const std::string v = get(sec, key, "");
    if (v.empty()) return dflt;
    std::size_t pos = 0;
    const long long x = std::stoll(v, &pos);
    check(pos == v.size(), "config [" + sec + "] " + key + ": not an integer: " + v);
    return x;
  }

  bool get_bool(const std::string& sec, const std::string& key, bool dflt) const {
    const std::string v = get(sec, key, "");
    if (v.empty()) return dflt;
    if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "off" || v == "no") return false;
    check(false, "config [" + sec + "] " + key + ": not a boolean: " + v);
    return dflt;
  }

  std::vector<double> get_doubles(const std::string& sec, const std::string& key,
                                  std::vector<double> dflt) const {
    const std::string v = get(sec, key, "");
    if (v.empty()) return dflt;
    std::vector<double> out;
    std::istringstream in(v);
    std::string item;
    while (std::getline(in, item, ',')) {
      item = trim(item);
      check(!item.empty(), "config [" + sec + "] " + key + ": empty list element");
      std::size_t pos = 0;
      out.push_back(std::stod(item, &pos));
      check(pos == item.size(), "config [" + sec + "] " + key + ": not a number: " + item);
    }
    return out;
  }

  void set(const std::string& sec, const std::string& key, const std::string& v) {
    sections[sec][key] = v;
  }
};

// Canonical digest over the whole config text; stored in manifests and
// checkpoints so mismatched artifacts are refused.
inline std::uint64_t config_digest(const KvConfig& c) { return fnv1a(c.str()); }

// ---------------------------------------------------------------------------
// Typed views

inline StackConfig stack_from(const KvConfig& c) {
  StackConfig s;
  const auto t = c.get_doubles("stack", "thickness", {0.15e-3, 0.02e-3, 1.0e-3, 6.9e-3});
  const auto l = c.get_doubles("stack", "side", {10e-3, 10e-3, 14e-3, 18e-3});
  const auto k = c.get_doubles("stack", "conductivity", {100.0, 4.0, 400.0, 400.0});
  check(t.size() == 4 && l.size() == 4 && k.size() == 4,
        "config [stack]: thickness/side/conductivity need 4 comma-separated values");
  for (int i = 0; i < kLayers; ++i) s.layers[i] = {t[static_cast<std::size_t>(i)], l[static_cast<std::size_t>(i)], k[static_cast<std::size_t>(i)]};
  s.h = c.get_double("stack", "h", 2000.0);
  s.t_amb = c.get_double("stack", "t_amb", 298.15);
  s.rows = c.get_int("stack", "rows", 64);
  s.cols = c.get_int("stack", "cols", 64);
  s.validate();
  return s;
}

struct DatasetParams {
  std::int64_t n = 100;
  std::uint64_t master_seed = 1;
  double k_jitter = 0.3;       // training: per-layer uniform in +-jitter
  double k_scale = 1.0;        // generalization protocols: exact multiplier
  std::int64_t min_sources = 4, max_sources = 35;
  std::int64_t fixed_sources = 0;  // nonzero pins the count (protocol sets)
  double density_mean = 3.0, density_std = 1.4, density_min = 0.1;
  double val_fraction = 0.1;

  void validate() const {
    check(n >= 1, "dataset: n must be >= 1");
    check(k_jitter >= 0.0 && k_jitter < 1.0, "dataset: k_jitter must be in [0,1)");
    check(k_scale > 0.0, "dataset: k_scale must be > 0");
    check(min_sources >= 1 && max_sources >= min_sources, "dataset: bad source count range");
    check(density_std >= 0.0 && density_min > 0.0, "dataset: bad density parameters");
    check(val_fraction >= 0.0 && val_fraction < 1.0, "dataset: val_fraction must be in [0,1)");
  }
};

inline DatasetParams dataset_from(const KvConfig& c) {
  DatasetParams p;
  p.n = c.get_int("dataset", "n", p.n);
  p.master_seed = static_cast<std::uint64_t>(c.get_int("dataset", "master_seed", 1));
  p.k_jitter = c.get_double("dataset", "k_jitter", p.k_jitter);
  p.k_scale = c.get_double("dataset", "k_scale", p.k_scale);
  p.min_sources = c.get_int("dataset", "min_sources", p.min_sources);
  p.max_sources = c.get_int("dataset", "max_sources", p.max_sources);
  p.fixed_sources = c.get_int("dataset", "fixed_sources", p.fixed_sources);
  p.density_mean = c.get_double("dataset", "density_mean", p.density_mean);
  p.density_std = c.get_double("dataset", "density_std", p.density_std);
  p.density_min = c.get_double("dataset", "density_min", p.density_min);
  p.val_fraction = c.get_double("dataset", "val_fraction", p.val_fraction);
  p.validate();
  return p;
}

struct NetConfig {
  std::int64_t base_channels = 16;
  std::array<std::int64_t, 4> blocks = {1, 1, 2, 1};
  std::int64_t fci_depth = 2;
  std::int64_t heads = 4;
  std::int64_t token_h = 8, token_w = 8;
  std::int64_t token_dim = 128;
  std::int64_t ffn_ratio = 4;
  std::int64_t ppnet_depth = 2;
  std::int64_t ppnet_channels = 8;
  bool freq_branch = true;
  bool spatial_branch = true;
  bool fciformer = true;
  bool freq_loss = true;

  void validate() const {
    check(base_channels >= 1 && fci_depth >= 1 && heads >= 1 && token_h >= 1 &&
              token_w >= 1 && token_dim >= 1 && ffn_ratio >= 1 && ppnet_depth >= 1 &&
              ppnet_channels >= 1,
          "net: all counts must be >= 1");
    for (auto b : blocks) check(b >= 1, "net: stage block counts must be >= 1");
    check(freq_branch || spatial_branch, "net: at least one encoder branch must be enabled");
    check(token_dim % heads == 0, "net: token_dim must be divisible by heads");
  }
};

inline NetConfig net_from(const KvConfig& c) {
  NetConfig n;
  n.base_channels = c.get_int("net", "base_channels", n.base_channels);
  const auto blocks = c.get_doubles("net", "blocks", {1, 1, 2, 1});
  check(blocks.size() == 4, "config [net] blocks: need 4 comma-separated counts");
  for (int i = 0; i < 4; ++i) n.blocks[static_cast<std::size_t>(i)] = static_cast<std::int64_t>(blocks[static_cast<std::size_t>(i)]);
  n.fci_depth = c.get_int("net", "fci_depth", n.fci_depth);
  n.heads = c.get_int("net", "heads", n.heads);
  n.token_h = c.get_int("net", "token_h", n.token_h);
  n.token_w = c.get_int("net", "token_w", n.token_w);
  n.token_dim = c.get_int("net", "token_dim", n.token_dim);
  n.ffn_ratio = c.get_int("net", "ffn_ratio", n.ffn_ratio);
  n.ppnet_depth = c.get_int("net", "ppnet_depth", n.ppnet_depth);
  n.ppnet_channels = c.get_int("net", "ppnet_channels", n.ppnet_channels);
  n.freq_branch = c.get_bool("net", "freq_branch", n.freq_branch);
  n.spatial_branch = c.get_bool("net", "spatial_branch", n.spatial_branch);
  n.fciformer = c.get_bool("net", "fciformer", n.fciformer);
  n.freq_loss = c.get_bool("net", "freq_loss", n.freq_loss);
  n.validate();
  return n;
}

inline KvConfig net_to_kv(const NetConfig& n) {
  KvConfig kv;
  kv.set("net", "base_channels", std::to_string(n.base_channels));
  std::ostringstream bl;
  bl << n.blocks[0] << ", " << n.blocks[1] << ", " << n.blocks[2] << ", " << n.blocks[3];
  kv.set("net", "blocks", bl.str());
  kv.set("net", "fci_depth", std::to_string(n.fci_depth));
  kv.set("net", "heads", std::to_string(n.heads));
  kv.set("net", "token_h", std::to_string(n.token_h));
  kv.set("net", "token_w", std::to_string(n.token_w));
  kv.set("net", "token_dim", std::to_string(n.token_dim));
  kv.set("net", "ffn_ratio", std::to_string(n.ffn_ratio));
  kv.set("net", "ppnet_depth", std::to_string(n.ppnet_depth));
  kv.set("net", "ppnet_channels", std::to_string(n.ppnet_channels));
  kv.set("net", "freq_branch", n.freq_branch ? "true" : "false");
  kv.set("net", "spatial_branch", n.spatial_branch ? "true" : "false");
  kv.set("net", "fciformer", n.fciformer ? "true" : "false");
  kv.set("net", "freq_loss", n.freq_loss ? "true" : "false");
  return kv;
}

// Digest of the network architecture alone; checkpoints embed it so a load
// under a different NetConfig is refused.
inline std::uint64_t net_digest(const NetConfig& n) { return config_digest(net_to_kv(n)); }

struct LossParams {
  double alpha = 0.5;
  double beta = 1.0;
  void validate() const {
    check(alpha >= 0.0 && beta >= 0.0, "loss: alpha and beta must be >= 0");
  }
};

inline LossParams loss_from(const KvConfig& c) {
  LossParams p;
  p.alpha = c.get_double("loss", "alpha", p.alpha);
  p.beta = c.get_double("loss", "beta", p.beta);
  p.validate();
  return p;
}

inline KvConfig loss_to_kv(const LossParams& p) {
  KvConfig kv;
  auto num = [](double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
  };
  kv.set("loss", "alpha", num(p.alpha));
  kv.set("loss", "beta", num(p.beta));
  return kv;
}

struct TrainParams {
  double lr = 1e-3;
  std::int64_t batch = 8;
  std::int64_t epochs = 200;
  std::uint64_t seed = 1;
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  std::int64_t checkpoint_every = 0;  // 0: only best/final
  double early_stop_fsl = 0.0;       // stop when train fsl falls below (0: off)

  void validate() const {
    check(lr > 0.0 && batch >= 1 && epochs >= 1, "train: lr/batch/epochs must be positive");
    check(beta1 > 0.0 && beta1 < 1.0 && beta2 > 0.0 && beta2 < 1.0 && adam_eps > 0.0,
          "train: bad moment-estimate parameters");
  }
};

inline TrainParams train_from(const KvConfig& c) {
  TrainParams p;
  p.lr = c.get_double("train", "lr", p.lr);
  p.batch = c.get_int("train", "batch", p.batch);
  p.epochs = c.get_int("train", "epochs", p.epochs);
  p.seed = static_cast<std::uint64_t>(c.get_int("train", "seed", 1));
  p.beta1 = c.get_double("train", "beta1", p.beta1);
  p.beta2 = c.get_double("train", "beta2", p.beta2);
  p.adam_eps = c.get_double("train", "adam_eps", p.adam_eps);
  p.checkpoint_every = c.get_int("train", "checkpoint_every", p.checkpoint_every);
  p.early_stop_fsl = c.get_double("train", "early_stop_fsl", p.early_stop_fsl);
  p.validate();
  return p;
}

inline KvConfig train_to_kv(const TrainParams& p) {
  KvConfig kv;
  auto num = [](double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
  };
  kv.set("train", "lr", num(p.lr));
  kv.set("train", "batch", std::to_string(p.batch));
  kv.set("train", "epochs", std::to_string(p.epochs));
  kv.set("train", "seed", std::to_string(p.seed));
  kv.set("train", "beta1", num(p.beta1));
  kv.set("train", "beta2", num(p.beta2));
  kv.set("train", "adam_eps", num(p.adam_eps));
  kv.set("train", "checkpoint_every", std::to_string(p.checkpoint_every));
  kv.set("train", "early_stop_fsl", num(p.early_stop_fsl));
  return kv;
}

}  // namespace fsaheat
