#pragma once

#include <cstdint>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "fsaheat/config.hpp"
#include "fsaheat/dataset.hpp"
#include "fsaheat/net.hpp"

namespace fsaheat {

// Self-contained weight archive: the canonical network config text, the
// training grid and normalization statistics, and every parameter tensor by
// its dotted name. Restoring into a net whose architecture digest differs is
// refused, as is any name or shape mismatch.
struct Checkpoint {
  NetConfig net;
  std::int64_t rows = 0, cols = 0;
  DatasetStats stats;
  LossParams loss;
  std::int64_t epoch = 0;
  double val_rmse = 0.0;
  std::vector<std::pair<std::string, Tensor>> params;
};

namespace detail {

inline constexpr char kCkptMagic[8] = {'F', 'S', 'A', 'H', 'C', 'K', 'P', '1'};

inline void put_u64(std::ofstream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

inline void put_f64(std::ofstream& out, double v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

inline void put_str(std::ofstream& out, const std::string& s) {
  put_u64(out, s.size());
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::uint64_t take_u64(std::ifstream& in) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  check(in.good(), "checkpoint: truncated file");
  return v;
}

inline double take_f64(std::ifstream& in) {
  double v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  check(in.good(), "checkpoint: truncated file");
  return v;
}

inline std::string take_str(std::ifstream& in) {
  const std::uint64_t n = take_u64(in);
  check(n <= (1u << 20), "checkpoint: implausible string length");
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  check(in.good(), "checkpoint: truncated file");
  return s;
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const Checkpoint& ck) {
  std::ofstream out(path, std::ios::binary);
  check(out.good(), "save_checkpoint: cannot open " + path);
  out.write(detail::kCkptMagic, sizeof(detail::kCkptMagic));
  detail::put_str(out, net_to_kv(ck.net).str());
  detail::put_u64(out, static_cast<std::uint64_t>(ck.rows));
  detail::put_u64(out, static_cast<std::uint64_t>(ck.cols));
  for (int c = 0; c < kChannels; ++c) detail::put_f64(out, ck.stats.mean[static_cast<std::size_t>(c)]);
  for (int c = 0; c < kChannels; ++c) detail::put_f64(out, ck.stats.stdev[static_cast<std::size_t>(c)]);
  detail::put_f64(out, ck.stats.theta_max);
  detail::put_f64(out, ck.loss.alpha);
  detail::put_f64(out, ck.loss.beta);
  detail::put_u64(out, static_cast<std::uint64_t>(ck.epoch));
  detail::put_f64(out, ck.val_rmse);
  detail::put_u64(out, ck.params.size());
  for (const auto& [name, t] : ck.params) {
    detail::put_str(out, name);
    detail::put_u64(out, static_cast<std::uint64_t>(t.shape.rank()));
    for (int d = 0; d < t.shape.rank(); ++d) detail::put_u64(out, static_cast<std::uint64_t>(t.shape[d]));
    detail::put_u64(out, static_cast<std::uint64_t>(t.numel()));
    out.write(reinterpret_cast<const char*>(t.data.data()),
              static_cast<std::streamsize>(t.numel() * static_cast<std::int64_t>(sizeof(double))));
  }
  check(out.good(), "save_checkpoint: write failed for " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  check(in.good(), "load_checkpoint: cannot open " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  check(in.good() && std::equal(magic, magic + 8, detail::kCkptMagic),
        "load_checkpoint: " + path + " is not a checkpoint file");
  Checkpoint ck;
  ck.net = net_from(KvConfig::parse(detail::take_str(in)));
  ck.rows = static_cast<std::int64_t>(detail::take_u64(in));
  ck.cols = static_cast<std::int64_t>(detail::take_u64(in));
  for (int c = 0; c < kChannels; ++c) ck.stats.mean[static_cast<std::size_t>(c)] = detail::take_f64(in);
  for (int c = 0; c < kChannels; ++c) ck.stats.stdev[static_cast<std::size_t>(c)] = detail::take_f64(in);
  ck.stats.theta_max = detail::take_f64(in);
  ck.loss.alpha = detail::take_f64(in);
  ck.loss.beta = detail::take_f64(in);
  ck.loss.validate();
  ck.epoch = static_cast<std::int64_t>(detail::take_u64(in));
  ck.val_rmse = detail::take_f64(in);
  const std::uint64_t n = detail::take_u64(in);
  check(n <= (1u << 20), "load_checkpoint: implausible parameter count");
  ck.params.reserve(n);
  for (std::uint64_t i = 0; i < n; ++i) {
    const std::string name = detail::take_str(in);
    const std::uint64_t rank = detail::take_u64(in);
    check(rank <= 8, "load_checkpoint: implausible tensor rank");
    std::vector<std::int64_t> dims(rank);
    for (auto& d : dims) d = static_cast<std::int64_t>(detail::take_u64(in));
    Shape s(dims);
    const std::uint64_t count = detail::take_u64(in);
    check(count == static_cast<std::uint64_t>(s.numel()),
          "load_checkpoint: payload count mismatch for " + name);
    Tensor t(s);
    in.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(count * sizeof(double)));
    check(in.good(), "load_checkpoint: truncated payload for " + name);
    check(t.all_finite(), "load_checkpoint: non-finite values in " + name);
    ck.params.emplace_back(name, std::move(t));
  }
  return ck;
}

inline Checkpoint snapshot(const FsaHeatNet& net, std::int64_t rows, std::int64_t cols,
                           const DatasetStats& stats, const LossParams& loss,
                           std::int64_t epoch, double val_rmse) {
  Checkpoint ck;
  ck.net = net.cfg;
  ck.rows = rows;
  ck.cols = cols;
  ck.stats = stats;
  ck.loss = loss;
  ck.epoch = epoch;
  ck.val_rmse = val_rmse;
  ck.params.reserve(net.params.items.size());
  for (const auto& [name, v] : net.params.items) ck.params.emplace_back(name, v.value());
  return ck;
}

// Copies stored values into the net's leaves. The net must have the identical
// architecture (digest) and an identical parameter list.
inline void restore(FsaHeatNet& net, const Checkpoint& ck) {
  check(net_digest(net.cfg) == net_digest(ck.net),
        "restore: checkpoint architecture digest " + hex64(net_digest(ck.net)) +
            " does not match net " + hex64(net_digest(net.cfg)));
  check(net.params.items.size() == ck.params.size(),
        "restore: parameter count mismatch");
  for (std::size_t i = 0; i < ck.params.size(); ++i) {
    const auto& [name, t] = ck.params[i];
    auto& [have, v] = net.params.items[i];
    check(have == name, "restore: parameter order mismatch at " + name + " vs " + have);
    check(v.value().shape == t.shape, "restore: shape mismatch for " + name);
    v.node()->value = t;
  }
}

}  // namespace fsaheat
