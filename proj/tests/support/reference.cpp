#include "reference.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <stdexcept>

#include "rofl/rng.hpp"

namespace rofl::testing {

namespace {

const Tensor& get(const Checkpoint& ckpt, const std::string& name) {
  const auto it = ckpt.tensors.find(name);
  if (it == ckpt.tensors.end()) throw std::runtime_error("reference: missing tensor " + name);
  return it->second;
}

// Element (r, c) of a row-major 2-D tensor; 1-D tensors use c only.
double at(const Tensor& t, std::size_t r, std::size_t c) {
  const std::size_t cols = t.shape.size() == 1 ? t.shape[0] : t.shape[1];
  return static_cast<double>(t.data[r * cols + c]);
}

std::vector<double> layer_norm(const std::vector<double>& x, const Tensor& gain, const Tensor& bias) {
  const double n = static_cast<double>(x.size());
  double mean = 0;
  for (double v : x) mean += v;
  mean /= n;
  double var = 0;
  for (double v : x) var += (v - mean) * (v - mean);
  var /= n;
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = (x[i] - mean) / std::sqrt(var + 1e-5) * at(gain, 0, i) + at(bias, 0, i);
  }
  return out;
}

// row vector times [in x out] matrix
std::vector<double> matvec(const std::vector<double>& x, const Tensor& w) {
  const std::size_t out_dim = w.shape[1];
  std::vector<double> y(out_dim, 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) {
    for (std::size_t j = 0; j < out_dim; ++j) y[j] += x[i] * at(w, i, j);
  }
  return y;
}

double gelu(double x) {
  return 0.5 * x * (1.0 + std::tanh(std::sqrt(2.0 / M_PI) * (x + 0.044715 * x * x * x)));
}

}  // namespace

Matrix reference_forward(const Checkpoint& ckpt, const Tokens& tokens, const Matrix& embed_offset) {
  const auto& c = ckpt.config;
  const std::size_t n = tokens.size();
  const std::size_t d = c.d_model;
  const std::size_t heads = c.n_heads;
  const std::size_t hd = d / heads;

  std::vector<std::vector<double>> x(n, std::vector<double>(d));
  const Tensor& tok = get(ckpt, "tok_emb");
  const Tensor& pos = get(ckpt, "pos_emb");
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      x[i][j] = at(tok, tokens[i], j) + at(pos, i, j) + (embed_offset.empty() ? 0.0 : embed_offset[i][j]);
    }
  }

  for (std::uint32_t l = 0; l < c.n_layers; ++l) {
    const std::string pre = "layers." + std::to_string(l) + ".";
    std::vector<std::vector<double>> q(n), k(n), v(n);
    for (std::size_t i = 0; i < n; ++i) {
      const auto a = layer_norm(x[i], get(ckpt, pre + "ln1.gain"), get(ckpt, pre + "ln1.bias"));
      q[i] = matvec(a, get(ckpt, pre + "attn.wq"));
      k[i] = matvec(a, get(ckpt, pre + "attn.wk"));
      v[i] = matvec(a, get(ckpt, pre + "attn.wv"));
    }
    for (std::size_t i = 0; i < n; ++i) {
      std::vector<double> concat(d, 0.0);
      for (std::size_t h = 0; h < heads; ++h) {
        std::vector<double> score(i + 1);
        for (std::size_t j = 0; j <= i; ++j) {
          double s = 0;
          for (std::size_t e = 0; e < hd; ++e) s += q[i][h * hd + e] * k[j][h * hd + e];
          score[j] = s / std::sqrt(static_cast<double>(hd));
        }
        const auto w = softmax(score);
        for (std::size_t j = 0; j <= i; ++j) {
          for (std::size_t e = 0; e < hd; ++e) concat[h * hd + e] += w[j] * v[j][h * hd + e];
        }
      }
      const auto proj = matvec(concat, get(ckpt, pre + "attn.wo"));
      for (std::size_t j = 0; j < d; ++j) x[i][j] += proj[j];
    }
    for (std::size_t i = 0; i < n; ++i) {
      const auto a = layer_norm(x[i], get(ckpt, pre + "ln2.gain"), get(ckpt, pre + "ln2.bias"));
      auto hidden = matvec(a, get(ckpt, pre + "mlp.w1"));
      const Tensor& b1 = get(ckpt, pre + "mlp.b1");
      for (std::size_t j = 0; j < hidden.size(); ++j) hidden[j] = gelu(hidden[j] + at(b1, 0, j));
      const auto out = matvec(hidden, get(ckpt, pre + "mlp.w2"));
      const Tensor& b2 = get(ckpt, pre + "mlp.b2");
      for (std::size_t j = 0; j < d; ++j) x[i][j] += out[j] + at(b2, 0, j);
    }
  }

  Matrix logits(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto a = layer_norm(x[i], get(ckpt, "final_norm.gain"), get(ckpt, "final_norm.bias"));
    logits[i] = matvec(a, get(ckpt, "lm_head"));
  }
  return logits;
}

std::vector<double> softmax(const std::vector<double>& row) {
  const double m = *std::max_element(row.begin(), row.end());
  std::vector<double> p(row.size());
  double sum = 0;
  for (std::size_t i = 0; i < row.size(); ++i) sum += p[i] = std::exp(row[i] - m);
  for (double& v : p) v /= sum;
  return p;
}

double reference_nll(const Checkpoint& ckpt, const Tokens& context, const Tokens& target,
                     const Matrix& embed_offset) {
  Tokens seq = context;
  seq.insert(seq.end(), target.begin(), target.end());
  seq.pop_back();
  const Matrix logits = reference_forward(ckpt, seq, embed_offset);
  double loss = 0;
  for (std::size_t j = 0; j < target.size(); ++j) {
    const auto p = softmax(logits[context.size() - 1 + j]);
    loss -= std::log(p[target[j]]);
  }
  return loss;
}

Tokens brute_force_greedy(const Checkpoint& ckpt, const Tokens& context, std::size_t n) {
  const std::uint32_t V = ckpt.config.vocab;
  std::size_t total = 1;
  for (std::size_t i = 0; i < n; ++i) total *= V;
  std::vector<Tokens> consistent;
  for (std::size_t code = 0; code < total; ++code) {
    Tokens cont(n);
    std::size_t c = code;
    for (std::size_t i = 0; i < n; ++i) {
      cont[i] = static_cast<TokenId>(c % V);
      c /= V;
    }
    Tokens seq = context;
    seq.insert(seq.end(), cont.begin(), cont.end());
    const Matrix logits = reference_forward(ckpt, seq);
    bool ok = true;
    for (std::size_t i = 0; i < n && ok; ++i) {
      const auto& row = logits[context.size() - 1 + i];
      const auto best = static_cast<TokenId>(std::max_element(row.begin(), row.end()) - row.begin());
      ok = best == cont[i];
    }
    if (ok) consistent.push_back(cont);
  }
  if (consistent.size() != 1) throw std::runtime_error("brute force: greedy continuation not unique");
  return consistent.front();
}

Checkpoint hand_model(std::uint32_t ctx_len) {
  ModelConfig cfg;
  cfg.vocab = 2;
  cfg.d_model = 2;
  cfg.n_layers = 1;
  cfg.n_heads = 1;
  cfg.ctx_len = ctx_len;
  Checkpoint ckpt = init_checkpoint(cfg);
  auto set = [&](const std::string& name, std::vector<float> values) {
    auto& t = ckpt.tensors.at(name);
    if (values.size() != t.data.size()) throw std::runtime_error("hand_model: wrong size for " + name);
    t.data = std::move(values);
  };
  set("tok_emb", {1.0f, -0.5f, -0.25f, 0.75f});
  std::vector<float> pos(static_cast<std::size_t>(ctx_len) * 2);
  for (std::size_t i = 0; i < ctx_len; ++i) {
    pos[2 * i] = 0.1f * static_cast<float>(i);
    pos[2 * i + 1] = -0.05f * static_cast<float>(i);
  }
  set("pos_emb", pos);
  set("layers.0.attn.wq", {0.5f, -0.3f, 0.2f, 0.8f});
  set("layers.0.attn.wk", {0.7f, 0.1f, -0.4f, 0.6f});
  set("layers.0.attn.wv", {0.9f, -0.2f, 0.3f, 0.5f});
  set("layers.0.attn.wo", {0.6f, 0.4f, -0.1f, 0.3f});
  set("layers.0.ln1.gain", {1.1f, 0.9f});
  set("layers.0.ln1.bias", {0.05f, -0.05f});
  set("layers.0.ln2.gain", {0.8f, 1.2f});
  set("layers.0.ln2.bias", {-0.1f, 0.1f});
  std::vector<float> w1(16), w2(16), b1(8);
  for (std::size_t i = 0; i < 16; ++i) {
    w1[i] = 0.1f * static_cast<float>(static_cast<int>(i % 5) - 2);
    w2[i] = 0.05f * static_cast<float>(static_cast<int>(i % 7) - 3);
  }
  for (std::size_t i = 0; i < 8; ++i) b1[i] = 0.02f * static_cast<float>(i);
  set("layers.0.mlp.w1", w1);
  set("layers.0.mlp.b1", b1);
  set("layers.0.mlp.w2", w2);
  set("layers.0.mlp.b2", {0.01f, -0.02f});
  set("final_norm.gain", {1.0f, 1.0f});
  set("final_norm.bias", {0.0f, 0.0f});
  set("lm_head", {1.5f, -1.0f, -0.5f, 2.0f});
  return ckpt;
}

Checkpoint random_model(const ModelConfig& cfg, std::uint64_t seed, double stddev) {
  Checkpoint ckpt = init_checkpoint(cfg);
  Rng rng(seed);
  for (auto& [name, t] : ckpt.tensors) {
    const bool gain = name.size() > 5 && name.compare(name.size() - 5, 5, ".gain") == 0;
    for (float& v : t.data) v = static_cast<float>((gain ? 1.0 : 0.0) + rng.normal() * stddev);
  }
  ckpt.lineage_id = tensors_digest(ckpt);
  return ckpt;
}

Checkpoint uniform_model(const ModelConfig& cfg) {
  Checkpoint ckpt = init_checkpoint(cfg);
  auto& head = ckpt.tensors.at("lm_head").data;
  std::fill(head.begin(), head.end(), 0.0f);
  return ckpt;
}

// ---- SHA-256 -------------------------------------------------------------------

namespace {

constexpr std::uint32_t kK[64] = {
    0x428a2f98, 0x71374491, 0xb5c0fbcf, 0xe9b5dba5, 0x3956c25b, 0x59f111f1, 0x923f82a4, 0xab1c5ed5,
    0xd807aa98, 0x12835b01, 0x243185be, 0x550c7dc3, 0x72be5d74, 0x80deb1fe, 0x9bdc06a7, 0xc19bf174,
    0xe49b69c1, 0xefbe4786, 0x0fc19dc6, 0x240ca1cc, 0x2de92c6f, 0x4a7484aa, 0x5cb0a9dc, 0x76f988da,
    0x983e5152, 0xa831c66d, 0xb00327c8, 0xbf597fc7, 0xc6e00bf3, 0xd5a79147, 0x06ca6351, 0x14292967,
    0x27b70a85, 0x2e1b2138, 0x4d2c6dfc, 0x53380d13, 0x650a7354, 0x766a0abb, 0x81c2c92e, 0x92722c85,
    0xa2bfe8a1, 0xa81a664b, 0xc24b8b70, 0xc76c51a3, 0xd192e819, 0xd6990624, 0xf40e3585, 0x106aa070,
    0x19a4c116, 0x1e376c08, 0x2748774c, 0x34b0bcb5, 0x391c0cb3, 0x4ed8aa4a, 0x5b9cca4f, 0x682e6ff3,
    0x748f82ee, 0x78a5636f, 0x84c87814, 0x8cc70208, 0x90befffa, 0xa4506ceb, 0xbef9a3f7, 0xc67178f2};

constexpr std::uint32_t rotr(std::uint32_t x, int n) { return (x >> n) | (x << (32 - n)); }

}  // namespace

Digest reference_sha256(const std::string& bytes) {
  std::uint32_t h[8] = {0x6a09e667, 0xbb67ae85, 0x3c6ef372, 0xa54ff53a,
                        0x510e527f, 0x9b05688c, 0x1f83d9ab, 0x5be0cd19};
  std::vector<std::uint8_t> msg(bytes.begin(), bytes.end());
  const std::uint64_t bit_len = static_cast<std::uint64_t>(bytes.size()) * 8;
  msg.push_back(0x80);
  while (msg.size() % 64 != 56) msg.push_back(0);
  for (int i = 7; i >= 0; --i) msg.push_back(static_cast<std::uint8_t>(bit_len >> (8 * i)));

  for (std::size_t block = 0; block < msg.size(); block += 64) {
    std::uint32_t w[64];
    for (int t = 0; t < 16; ++t) {
      w[t] = static_cast<std::uint32_t>(msg[block + 4 * t]) << 24 |
             static_cast<std::uint32_t>(msg[block + 4 * t + 1]) << 16 |
             static_cast<std::uint32_t>(msg[block + 4 * t + 2]) << 8 | msg[block + 4 * t + 3];
    }
    for (int t = 16; t < 64; ++t) {
      const std::uint32_t s0 = rotr(w[t - 15], 7) ^ rotr(w[t - 15], 18) ^ (w[t - 15] >> 3);
      const std::uint32_t s1 = rotr(w[t - 2], 17) ^ rotr(w[t - 2], 19) ^ (w[t - 2] >> 10);
      w[t] = w[t - 16] + s0 + w[t - 7] + s1;
    }
    std::uint32_t a = h[0], b = h[1], c = h[2], d = h[3], e = h[4], f = h[5], g = h[6], hh = h[7];
    for (int t = 0; t < 64; ++t) {
      const std::uint32_t t1 = hh + (rotr(e, 6) ^ rotr(e, 11) ^ rotr(e, 25)) + ((e & f) ^ (~e & g)) + kK[t] + w[t];
      const std::uint32_t t2 = (rotr(a, 2) ^ rotr(a, 13) ^ rotr(a, 22)) + ((a & b) ^ (a & c) ^ (b & c));
      hh = g;
      g = f;
      f = e;
      e = d + t1;
      d = c;
      c = b;
      b = a;
      a = t1 + t2;
    }
    h[0] += a;
    h[1] += b;
    h[2] += c;
    h[3] += d;
    h[4] += e;
    h[5] += f;
    h[6] += g;
    h[7] += hh;
  }
  Digest out{};
  for (int i = 0; i < 8; ++i) {
    for (int j = 0; j < 4; ++j) out[4 * i + j] = static_cast<std::uint8_t>(h[i] >> (24 - 8 * j));
  }
  return out;
}

}  // namespace rofl::testing
