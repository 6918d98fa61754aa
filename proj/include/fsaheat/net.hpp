#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "fsaheat/autodiff.hpp"
#include "fsaheat/config.hpp"
#include "fsaheat/dataset.hpp"
#include "fsaheat/nn_ops.hpp"
#include "fsaheat/rng.hpp"
#include "fsaheat/spectral.hpp"

namespace fsaheat {

// Named leaf parameters in registration order. Names are dotted paths; the
// checkpoint format and the ablation audits key off them.
struct ParamStore {
  std::vector<std::pair<std::string, Var>> items;
  std::unordered_map<std::string, std::size_t> by_name;

  Var add(const std::string& name, Tensor t) {
    check(by_name.count(name) == 0, "ParamStore: duplicate parameter " + name);
    Var v = leaf(std::move(t), true);
    by_name[name] = items.size();
    items.emplace_back(name, v);
    return v;
  }

  const Var& get(const std::string& name) const {
    auto it = by_name.find(name);
    check(it != by_name.end(), "ParamStore: no parameter named " + name);
    return items[it->second].second;
  }

  bool has(const std::string& name) const { return by_name.count(name) != 0; }

  bool has_infix(const std::string& piece) const {
    for (const auto& [n, v] : items)
      if (n.find(piece) != std::string::npos) return true;
    return false;
  }

  std::int64_t scalar_count() const {
    std::int64_t n = 0;
    for (const auto& [name, v] : items) n += v.value().numel();
    return n;
  }

  void zero_grad() {
    for (auto& [name, v] : items) {
      Node& n = *v.node();
      if (n.grad.numel()) n.grad.data.assign(n.grad.data.size(), 0.0);
    }
  }
};

namespace init {

inline Tensor fan_in_uniform(Rng& rng, Shape s, std::int64_t fan_in) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Tensor t(std::move(s));
  for (auto& v : t.data) v = rng.uniform(-bound, bound);
  return t;
}

inline Tensor conv_weight(Rng& rng, std::int64_t co, std::int64_t cig, std::int64_t kd,
                          std::int64_t kh, std::int64_t kw) {
  return fan_in_uniform(rng, Shape{co, cig, kd, kh, kw}, cig * kd * kh * kw);
}

inline Tensor linear_weight(Rng& rng, std::int64_t in, std::int64_t out) {
  return fan_in_uniform(rng, Shape{in, out}, in);
}

inline Tensor constant(Shape s, double v) {
  Tensor t(std::move(s));
  for (auto& e : t.data) e = v;
  return t;
}

}  // namespace init

// Multi-head cross-scale attention core. q: [N,d] for one scale; k, v: [M,d]
// with M a multiple of N (concatenated scale segments). The DCT acts on the
// token geometry (depth, token rows, token cols) of q and of each k segment;
// post-softmax scores pass through the inverse transform along the query axis
// before weighting v. scores_out, when given, collects the per-head softmax
// matrices (pre-inverse-transform) for inspection.
inline Var cross_scale_attention(const Var& q, const Var& k, const Var& v, std::int64_t heads,
                                 std::int64_t D, std::int64_t Ht, std::int64_t Wt,
                                 std::vector<Var>* scores_out = nullptr) {
  const std::int64_t N = D * Ht * Wt;
  check(q.shape().rank() == 2 && q.shape()[0] == N,
        "cross_scale_attention: q must be [" + std::to_string(N) + ",d], got " + q.shape().str());
  const std::int64_t d = q.shape()[1];
  check(k.shape().rank() == 2 && k.shape()[1] == d && v.shape() == k.shape() &&
            k.shape()[0] % N == 0,
        "cross_scale_attention: k/v must be [m*" + std::to_string(N) + "," + std::to_string(d) +
            "]");
  const std::int64_t M = k.shape()[0];
  check(heads >= 1 && d % heads == 0, "cross_scale_attention: heads must divide token dim");

  auto dct_tokens = [&](const Var& t) {
    const std::int64_t cols = t.shape()[1];
    Var grid = reshape(transpose2d(t), Shape{cols, D, Ht, Wt});
    return transpose2d(reshape(dct3(grid), Shape{cols, N}));
  };
  Var qh = dct_tokens(q);
  std::vector<Var> ksegs;
  for (std::int64_t j = 0; j < M / N; ++j) ksegs.push_back(dct_tokens(slice(k, 0, j * N, N)));
  Var kh = concat(ksegs, 0);

  const std::int64_t dh = d / heads;
  const double scl = 1.0 / std::sqrt(static_cast<double>(dh));
  std::vector<Var> outs;
  for (std::int64_t h = 0; h < heads; ++h) {
    Var qs = slice(qh, 1, h * dh, dh);
    Var ks = slice(kh, 1, h * dh, dh);
    Var vs = slice(v, 1, h * dh, dh);
    Var S = softmax_rows(scale(matmul(qs, transpose2d(ks)), scl));
    if (scores_out) scores_out->push_back(S);
    Var St = transpose2d(reshape(idct3(reshape(transpose2d(S), Shape{M, D, Ht, Wt})), Shape{M, N}));
    outs.push_back(matmul(St, vs));
  }
  return concat(outs, 1);
}

struct FsaHeatNet {
  NetConfig cfg;
  ParamStore params;

  FsaHeatNet(const NetConfig& c, std::uint64_t seed) : cfg(c) {
    cfg.validate();
    Rng rng(derive_seed(seed, "net-init", 0));
    build(rng);
  }

  std::int64_t stage_channels(int s) const { return cfg.base_channels << (s - 1); }
  std::int64_t encoder_input_channels() const { return cfg.ppnet_channels + 2; }
  std::int64_t tokens_per_scale() const { return kLayers * cfg.token_h * cfg.token_w; }

  // --- forward -------------------------------------------------------------

  Var forward(const Var& x) const {
    check(x.defined() && x.shape().rank() == 4 && x.shape()[0] == kChannels &&
              x.shape()[1] == kLayers,
          "forward: expected [8,4,R,C] standardized inputs");
    const std::int64_t R = x.shape()[2], C = x.shape()[3];
    check(R % 8 == 0 && C % 8 == 0, "forward: grid must be divisible by 8, got " +
                                        std::to_string(R) + "x" + std::to_string(C));
    check(R >= 16 && C >= 16,
          "forward: stage-4 resolution must be at least 2x2 (grid of 16 or more)");
    for (int s = 1; s <= 4; ++s) {
      const std::int64_t hs = R >> (s - 1), ws = C >> (s - 1);
      check(hs % cfg.token_h == 0 && ws % cfg.token_w == 0,
            "forward: token grid " + std::to_string(cfg.token_h) + "x" +
                std::to_string(cfg.token_w) + " does not divide stage " + std::to_string(s) +
                " resolution " + std::to_string(hs) + "x" + std::to_string(ws));
    }

    Var geom = slice(x, 0, 0, 6);
    Var source = slice(x, 0, 6, 2);
    Var pre = ppnet(geom);
    Var feat = concat({pre, source}, 0);

    std::array<Var, 4> stages = encoder(feat);
    std::array<Var, 4> skips = cfg.fciformer ? fciformer(stages) : stages;
    return decoder(stages[3], skips);
  }

  Var forward(const Tensor& x) const { return forward(constant(x)); }

  // --- submodules ----------------------------------------------------------

  Var ppnet(const Var& x6) const {
    check(x6.shape()[0] == 6, "ppnet: expected the 6 geometry/exchange channels, got " +
                                  x6.shape().str());
    const std::int64_t R = x6.shape()[2], C = x6.shape()[3];
    check(R % 2 == 0 && C % 2 == 0, "ppnet: grid must be even for the strided stem");
    Var h = conv3d(x6, params.get("ppnet.stem.w"), params.get("ppnet.stem.b"), 2,
                   PadMode::reflect);
    for (std::int64_t i = 0; i < cfg.ppnet_depth; ++i) {
      const std::string p = "ppnet.block" + std::to_string(i) + ".";
      Var f = conv3d(h, params.get(p + "conv1.w"), params.get(p + "conv1.b"), 1,
                     PadMode::reflect);
      f = silu(instance_norm(f, params.get(p + "in1.gamma"), params.get(p + "in1.beta")));
      f = conv3d(f, params.get(p + "conv2.w"), params.get(p + "conv2.b"), 1, PadMode::reflect);
      f = instance_norm(f, params.get(p + "in2.gamma"), params.get(p + "in2.beta"));
      h = silu(add(h, f));
    }
    return resample(h, R, C, ResampleMode::trilinear_up);
  }

  Var hl_fse_block(const Var& x, const std::string& p) const {
    Var y = norm(x, NormKind::layer, params.get(p + "ln1.gamma"), params.get(p + "ln1.beta"));
    const std::int64_t C = x.shape()[0];
    Var dw = conv3d(y, params.get(p + "dw.w"), params.get(p + "dw.b"), 1, PadMode::reflect, C);

    Var branches;
    if (cfg.freq_branch) {
      Var lin = conv3d(dw, params.get(p + "freq.lin.w"), params.get(p + "freq.lin.b"), 1,
                       PadMode::reflect);
      Var fw = idct3(apply_freq_weight(dct3(lin), params.get(p + "freq.e")));
      Var gate = sigmoid(conv3d(dw, params.get(p + "freq.gate.w"), params.get(p + "freq.gate.b"),
                                1, PadMode::reflect));
      branches = mul(fw, gate);
    }
    if (cfg.spatial_branch) {
      Var f = conv3d(dw, params.get(p + "sp.conv1.w"), params.get(p + "sp.conv1.b"), 1,
                     PadMode::reflect);
      f = silu(instance_norm(f, params.get(p + "sp.in1.gamma"), params.get(p + "sp.in1.beta")));
      f = conv3d(f, params.get(p + "sp.conv2.w"), params.get(p + "sp.conv2.b"), 1,
                 PadMode::reflect);
      f = instance_norm(f, params.get(p + "sp.in2.gamma"), params.get(p + "sp.in2.beta"));
      Var sp = silu(add(dw, f));
      branches = branches.defined() ? add(branches, sp) : sp;
    }
    check(branches.defined(), "hl_fse_block: both branches disabled");

    Var fused = conv3d(branches, params.get(p + "fuse.w"), params.get(p + "fuse.b"), 1,
                       PadMode::reflect);
    Var mid = add(x, fused);
    Var z = norm(mid, NormKind::layer, params.get(p + "ln2.gamma"), params.get(p + "ln2.beta"));
    z = conv3d(z, params.get(p + "ffn.w1"), params.get(p + "ffn.b1"), 1, PadMode::reflect);
    z = gelu(z);
    z = conv3d(z, params.get(p + "ffn.w2"), params.get(p + "ffn.b2"), 1, PadMode::reflect);
    return add(mid, z);
  }

  std::array<Var, 4> encoder(const Var& x) const {
    check(x.shape()[0] == encoder_input_channels(),
          "encoder: expected " + std::to_string(encoder_input_channels()) + " channels, got " +
              x.shape().str());
    Var h = conv3d(x, params.get("encoder.embed.w"), params.get("encoder.embed.b"), 1,
                   PadMode::reflect);
    std::array<Var, 4> out;
    for (int s = 1; s <= 4; ++s) {
      for (std::int64_t j = 0; j < cfg.blocks[static_cast<std::size_t>(s - 1)]; ++j)
        h = hl_fse_block(h, "encoder.stage" + std::to_string(s) + ".block" + std::to_string(j) +
                                ".");
      out[static_cast<std::size_t>(s - 1)] = h;
      if (s < 4) {
        const std::string p = "encoder.down" + std::to_string(s) + ".";
        h = conv3d(h, params.get(p + "w"), params.get(p + "b"), 2, PadMode::reflect);
      }
    }
    return out;
  }

  std::array<Var, 4> fciformer(const std::array<Var, 4>& stages,
                               std::vector<Var>* scores_out = nullptr) const {
    const std::int64_t N = tokens_per_scale(), d = cfg.token_dim;
    std::array<Var, 4> f;
    for (int i = 0; i < 4; ++i) {
      const std::string p = "fci.scale" + std::to_string(i + 1) + ".";
      Var pooled = resample(stages[static_cast<std::size_t>(i)], cfg.token_h, cfg.token_w,
                            ResampleMode::adaptive_pool);
      const std::int64_t Ci = pooled.shape()[0];
      Var tok = transpose2d(reshape(pooled, Shape{Ci, N}));
      tok = add(matmul(tok, params.get(p + "proj.w")), params.get(p + "proj.b"));
      f[static_cast<std::size_t>(i)] = add(tok, params.get(p + "pos"));
    }

    for (std::int64_t l = 0; l < cfg.fci_depth; ++l) {
      const std::string p = "fci.layer" + std::to_string(l) + ".";
      Var cat = concat({f[0], f[1], f[2], f[3]}, 0);
      Var kvin = norm(cat, NormKind::layer, params.get(p + "ln_kv.gamma"),
                      params.get(p + "ln_kv.beta"));
      Var k = add(matmul(kvin, params.get(p + "k.w")), params.get(p + "k.b"));
      Var v = add(matmul(kvin, params.get(p + "v.w")), params.get(p + "v.b"));
      for (int i = 0; i < 4; ++i) {
        const std::string q = p + "q" + std::to_string(i + 1), s = std::to_string(i + 1);
        Var qi = norm(f[static_cast<std::size_t>(i)], NormKind::layer,
                      params.get(p + "ln_q" + s + ".gamma"), params.get(p + "ln_q" + s + ".beta"));
        qi = add(matmul(qi, params.get(q + ".w")), params.get(q + ".b"));
        Var att = cross_scale_attention(qi, k, v, cfg.heads, kLayers, cfg.token_h, cfg.token_w,
                                        scores_out);
        Var mid = add(f[static_cast<std::size_t>(i)],
                      add(matmul(att, params.get(p + "proj" + s + ".w")),
                          params.get(p + "proj" + s + ".b")));
        Var z = norm(mid, NormKind::layer, params.get(p + "ln_ffn" + s + ".gamma"),
                     params.get(p + "ln_ffn" + s + ".beta"));
        z = gelu(add(matmul(z, params.get(p + "ffn" + s + ".w1")), params.get(p + "ffn" + s + ".b1")));
        z = add(matmul(z, params.get(p + "ffn" + s + ".w2")), params.get(p + "ffn" + s + ".b2"));
        f[static_cast<std::size_t>(i)] = add(mid, z);
      }
    }

    std::array<Var, 4> out;
    for (int i = 0; i < 4; ++i) {
      const std::string p = "fci.out" + std::to_string(i + 1) + ".";
      const Shape& s = stages[static_cast<std::size_t>(i)].shape();
      Var proj = add(matmul(f[static_cast<std::size_t>(i)], params.get(p + "w")),
                     params.get(p + "b"));
      Var grid = reshape(transpose2d(proj), Shape{s[0], kLayers, cfg.token_h, cfg.token_w});
      out[static_cast<std::size_t>(i)] = resample(grid, s[2], s[3], ResampleMode::trilinear_up);
    }
    return out;
  }

  Var decoder(const Var& bottleneck, const std::array<Var, 4>& skips) const {
    Var h = bottleneck;
    for (int s = 4; s >= 1; --s) {
      const std::string p = "decoder.stage" + std::to_string(s) + ".";
      if (s < 4) {
        const Shape& target = skips[static_cast<std::size_t>(s - 1)].shape();
        h = resample(h, target[2], target[3], ResampleMode::trilinear_up);
        h = conv3d(h, params.get(p + "up.w"), params.get(p + "up.b"), 1, PadMode::reflect);
        h = gelu(instance_norm(h, params.get(p + "up_in.gamma"), params.get(p + "up_in.beta")));
      }
      Var cat = concat({h, skips[static_cast<std::size_t>(s - 1)]}, 0);
      Var f = conv3d(cat, params.get(p + "res.conv1.w"), params.get(p + "res.conv1.b"), 1,
                     PadMode::reflect);
      f = leaky_relu(instance_norm(f, params.get(p + "res.in1.gamma"),
                                   params.get(p + "res.in1.beta")));
      f = conv3d(f, params.get(p + "res.conv2.w"), params.get(p + "res.conv2.b"), 1,
                 PadMode::reflect);
      f = instance_norm(f, params.get(p + "res.in2.gamma"), params.get(p + "res.in2.beta"));
      Var skip = conv3d(cat, params.get(p + "res.skip.w"), params.get(p + "res.skip.b"), 1,
                        PadMode::reflect);
      h = leaky_relu(add(skip, f));
    }
    Var y = conv3d(h, params.get("head.w"), params.get("head.b"), 1, PadMode::reflect);
    return reshape(y, Shape{kLayers, y.shape()[2], y.shape()[3]});
  }

 private:
  void build(Rng& rng) {
    const std::int64_t cp = cfg.ppnet_channels;
    add_conv(rng, "ppnet.stem", cp, 6, 1, 3, 3);
    for (std::int64_t i = 0; i < cfg.ppnet_depth; ++i) {
      const std::string p = "ppnet.block" + std::to_string(i) + ".";
      add_conv(rng, p + "conv1", cp, cp, 1, 3, 3);
      add_norm(p + "in1", cp);
      add_conv(rng, p + "conv2", cp, cp, 1, 3, 3);
      add_norm(p + "in2", cp);
    }

    add_conv(rng, "encoder.embed", cfg.base_channels, encoder_input_channels(), 3, 3, 3);
    for (int s = 1; s <= 4; ++s) {
      const std::int64_t C = stage_channels(s);
      for (std::int64_t j = 0; j < cfg.blocks[static_cast<std::size_t>(s - 1)]; ++j) {
        const std::string p =
            "encoder.stage" + std::to_string(s) + ".block" + std::to_string(j) + ".";
        add_norm(p + "ln1", C);
        params.add(p + "dw.w", init::fan_in_uniform(rng, Shape{C, 1, 3, 3, 3}, 27));
        params.add(p + "dw.b", Tensor(Shape{C}));
        if (cfg.freq_branch) {
          add_conv(rng, p + "freq.lin", C, C, 1, 1, 1);
          params.add(p + "freq.e", Tensor(Shape{C, 3}));
          params.add(p + "freq.gate.w", init::conv_weight(rng, C, C, 1, 1, 1));
          params.add(p + "freq.gate.b", init::constant(Shape{C}, 2.0));
        }
        if (cfg.spatial_branch) {
          add_conv(rng, p + "sp.conv1", C, C, 3, 3, 3);
          add_norm(p + "sp.in1", C);
          add_conv(rng, p + "sp.conv2", C, C, 3, 3, 3);
          add_norm(p + "sp.in2", C);
        }
        add_conv(rng, p + "fuse", C, C, 1, 1, 1);
        add_norm(p + "ln2", C);
        add_conv(rng, p + "ffn.w1", cfg.ffn_ratio * C, C, 1, 1, 1, "ffn.b1", p);
        add_conv(rng, p + "ffn.w2", C, cfg.ffn_ratio * C, 1, 1, 1, "ffn.b2", p);
      }
      if (s < 4)
        add_conv(rng, "encoder.down" + std::to_string(s), stage_channels(s + 1), C, 3, 3, 3);
    }

    if (cfg.fciformer) {
      const std::int64_t N = tokens_per_scale(), d = cfg.token_dim;
      for (int i = 1; i <= 4; ++i) {
        const std::string p = "fci.scale" + std::to_string(i) + ".";
        const std::int64_t Ci = stage_channels(i);
        params.add(p + "proj.w", init::linear_weight(rng, Ci, d));
        params.add(p + "proj.b", Tensor(Shape{d}));
        Tensor pos(Shape{N, d});
        for (auto& v : pos.data) v = rng.normal(0.0, 0.02);
        params.add(p + "pos", std::move(pos));
      }
      for (std::int64_t l = 0; l < cfg.fci_depth; ++l) {
        const std::string p = "fci.layer" + std::to_string(l) + ".";
        add_norm(p + "ln_kv", d);
        add_linear(rng, p + "k", d, d);
        add_linear(rng, p + "v", d, d);
        for (int i = 1; i <= 4; ++i) {
          const std::string s = std::to_string(i);
          add_norm(p + "ln_q" + s, d);
          add_linear(rng, p + "q" + s, d, d);
          add_linear(rng, p + "proj" + s, d, d);
          add_norm(p + "ln_ffn" + s, d);
          add_linear(rng, p + "ffn" + s + ".w1", d, cfg.ffn_ratio * d, p + "ffn" + s + ".b1");
          add_linear(rng, p + "ffn" + s + ".w2", cfg.ffn_ratio * d, d, p + "ffn" + s + ".b2");
        }
      }
      for (int i = 1; i <= 4; ++i)
        add_linear(rng, "fci.out" + std::to_string(i), d, stage_channels(i));
    }

    for (int s = 4; s >= 1; --s) {
      const std::string p = "decoder.stage" + std::to_string(s) + ".";
      const std::int64_t C = stage_channels(s);
      if (s < 4) {
        add_conv(rng, p + "up", C, stage_channels(s + 1), 1, 1, 1);
        add_norm(p + "up_in", C);
      }
      add_conv(rng, p + "res.conv1", C, 2 * C, 3, 3, 3);
      add_norm(p + "res.in1", C);
      add_conv(rng, p + "res.conv2", C, C, 3, 3, 3);
      add_norm(p + "res.in2", C);
      add_conv(rng, p + "res.skip", C, 2 * C, 1, 1, 1);
    }
    add_conv(rng, "head", 1, cfg.base_channels, 1, 1, 1);
  }

  void add_conv(Rng& rng, const std::string& name, std::int64_t co, std::int64_t ci,
                std::int64_t kd, std::int64_t kh, std::int64_t kw,
                const std::string& bias_name = "", const std::string& bias_prefix = "") {
    if (bias_name.empty()) {
      params.add(name + ".w", init::conv_weight(rng, co, ci, kd, kh, kw));
      params.add(name + ".b", Tensor(Shape{co}));
    } else {
      params.add(name, init::conv_weight(rng, co, ci, kd, kh, kw));
      params.add(bias_prefix + bias_name, Tensor(Shape{co}));
    }
  }

  void add_linear(Rng& rng, const std::string& name, std::int64_t in, std::int64_t out,
                  const std::string& bias_name = "") {
    if (bias_name.empty()) {
      params.add(name + ".w", init::linear_weight(rng, in, out));
      params.add(name + ".b", Tensor(Shape{out}));
    } else {
      params.add(name, init::linear_weight(rng, in, out));
      params.add(bias_name, Tensor(Shape{out}));
    }
  }

  void add_norm(const std::string& name, std::int64_t c) {
    params.add(name + ".gamma", init::constant(Shape{c}, 1.0));
    params.add(name + ".beta", Tensor(Shape{c}));
  }
};

}  // namespace fsaheat
