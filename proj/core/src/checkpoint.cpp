#include "rofl/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "rofl/error.hpp"
#include "rofl/rng.hpp"

namespace rofl {

namespace {

constexpr char kMagic[8] = {'R', 'O', 'F', 'L', 'M', '1', '\0', '\0'};

static_assert(std::endian::native == std::endian::little, "checkpoint IO assumes a little-endian host");

void put_u32(std::string& out, std::uint32_t v) {
  char buf[4];
  std::memcpy(buf, &v, 4);
  out.append(buf, 4);
}

class Reader {
 public:
  explicit Reader(std::string_view bytes) : bytes_(bytes) {}

  std::string_view take(std::size_t n) {
    if (bytes_.size() - pos_ < n) throw FormatError("checkpoint truncated");
    auto out = bytes_.substr(pos_, n);
    pos_ += n;
    return out;
  }

  std::uint32_t u32() {
    std::uint32_t v;
    std::memcpy(&v, take(4).data(), 4);
    return v;
  }

  bool done() const { return pos_ == bytes_.size(); }

 private:
  std::string_view bytes_;
  std::size_t pos_ = 0;
};

void append_tensor_section(std::string& out, const Checkpoint& ckpt) {
  put_u32(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, tensor] : ckpt.tensors) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_u32(out, static_cast<std::uint32_t>(tensor.shape.size()));
    for (auto dim : tensor.shape) put_u32(out, dim);
    const std::size_t offset = out.size();
    out.resize(offset + tensor.data.size() * 4);
    std::memcpy(out.data() + offset, tensor.data.data(), tensor.data.size() * 4);
  }
}

std::size_t element_count(const std::vector<std::uint32_t>& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

}  // namespace

void ModelConfig::validate() const {
  if (vocab == 0 || d_model == 0 || n_layers == 0 || n_heads == 0 || ctx_len == 0) {
    throw InvalidArgument("model config has a zero dimension");
  }
  if (d_model % n_heads != 0) {
    throw InvalidArgument("d_model " + std::to_string(d_model) + " not divisible by n_heads " + std::to_string(n_heads));
  }
}

std::map<std::string, std::vector<std::uint32_t>> tensor_layout(const ModelConfig& c) {
  std::map<std::string, std::vector<std::uint32_t>> out;
  const std::uint32_t d = c.d_model;
  out["tok_emb"] = {c.vocab, d};
  out["pos_emb"] = {c.ctx_len, d};
  for (std::uint32_t l = 0; l < c.n_layers; ++l) {
    const std::string pre = "layers." + std::to_string(l) + ".";
    for (const char* w : {"attn.wq", "attn.wk", "attn.wv", "attn.wo"}) out[pre + w] = {d, d};
    for (const char* v : {"ln1.gain", "ln1.bias", "ln2.gain", "ln2.bias", "mlp.b2"}) out[pre + v] = {d};
    out[pre + "mlp.w1"] = {d, c.d_ff()};
    out[pre + "mlp.b1"] = {c.d_ff()};
    out[pre + "mlp.w2"] = {c.d_ff(), d};
  }
  out["final_norm.gain"] = {d};
  out["final_norm.bias"] = {d};
  out["lm_head"] = {d, c.vocab};
  return out;
}

Checkpoint init_checkpoint(const ModelConfig& config) {
  config.validate();
  Checkpoint ckpt;
  ckpt.config = config;
  const double residual_std = 0.02 / std::sqrt(2.0 * config.n_layers);
  std::uint64_t stream = 0;
  for (const auto& [name, shape] : tensor_layout(config)) {
    Tensor t;
    t.shape = shape;
    t.data.assign(element_count(shape), 0.0f);
    const auto ends_with = [&](std::string_view suffix) {
      return name.size() >= suffix.size() && name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
    };
    double stddev = 0.02;
    if (ends_with(".gain")) {
      std::fill(t.data.begin(), t.data.end(), 1.0f);
      stddev = 0;
    } else if (ends_with(".bias") || ends_with(".b1") || ends_with(".b2")) {
      stddev = 0;
    } else if (ends_with("attn.wo") || ends_with("mlp.w2")) {
      stddev = residual_std;
    } else if (name == "pos_emb") {
      stddev = 0.01;
    }
    if (stddev > 0) {
      Rng rng(mix_seed(config.seed, stream));
      for (float& v : t.data) v = static_cast<float>(rng.normal() * stddev);
    }
    ++stream;
    ckpt.tensors.emplace(name, std::move(t));
  }
  return ckpt;
}

void validate_checkpoint(const Checkpoint& ckpt) {
  ckpt.config.validate();
  const auto layout = tensor_layout(ckpt.config);
  if (layout.size() != ckpt.tensors.size()) throw FormatError("checkpoint tensor set does not match config");
  for (const auto& [name, shape] : layout) {
    const auto it = ckpt.tensors.find(name);
    if (it == ckpt.tensors.end()) throw FormatError("missing tensor " + name);
    if (it->second.shape != shape || it->second.data.size() != element_count(shape)) {
      throw FormatError("tensor " + name + " has the wrong shape");
    }
    for (float v : it->second.data) {
      if (!std::isfinite(v)) throw FormatError("tensor " + name + " contains a non-finite value");
    }
  }
  if (ckpt.quant_bits != 32 && ckpt.quant_bits != 16 && ckpt.quant_bits != 8 && ckpt.quant_bits != 4) {
    throw FormatError("unsupported quant_bits " + std::to_string(ckpt.quant_bits));
  }
}

std::string serialize(const Checkpoint& ckpt) {
  std::string out(kMagic, sizeof(kMagic));
  const ModelConfig& c = ckpt.config;
  for (std::uint32_t v : {c.vocab, c.d_model, c.n_layers, c.n_heads, c.ctx_len, ckpt.quant_bits, c.seed}) put_u32(out, v);
  out.append(reinterpret_cast<const char*>(ckpt.lineage_id.data()), ckpt.lineage_id.size());
  append_tensor_section(out, ckpt);
  return out;
}

Checkpoint deserialize(std::string_view bytes) {
  Reader in(bytes);
  if (in.take(sizeof(kMagic)) != std::string_view(kMagic, sizeof(kMagic))) throw FormatError("bad checkpoint magic");
  Checkpoint ckpt;
  ModelConfig& c = ckpt.config;
  c.vocab = in.u32();
  c.d_model = in.u32();
  c.n_layers = in.u32();
  c.n_heads = in.u32();
  c.ctx_len = in.u32();
  ckpt.quant_bits = in.u32();
  c.seed = in.u32();
  const auto lineage = in.take(ckpt.lineage_id.size());
  std::memcpy(ckpt.lineage_id.data(), lineage.data(), lineage.size());
  const std::uint32_t count = in.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name(in.take(in.u32()));
    Tensor t;
    t.shape.resize(in.u32());
    for (auto& dim : t.shape) dim = in.u32();
    t.data.resize(element_count(t.shape));
    const auto raw = in.take(t.data.size() * 4);
    std::memcpy(t.data.data(), raw.data(), raw.size());
    if (!ckpt.tensors.emplace(std::move(name), std::move(t)).second) throw FormatError("duplicate tensor name");
  }
  if (!in.done()) throw FormatError("trailing bytes after checkpoint");
  validate_checkpoint(ckpt);
  return ckpt;
}

void save(const Checkpoint& ckpt, const std::filesystem::path& path) {
  const std::string bytes = serialize(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  out.flush();
  if (!out) throw IoError("write failed: " + path.string());
}

Checkpoint load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize(buf.str());
}

Digest weights_digest(const Checkpoint& ckpt) { return sha256(serialize(ckpt)); }

Digest tensors_digest(const Checkpoint& ckpt) {
  std::string section;
  append_tensor_section(section, ckpt);
  return sha256(section);
}

}  // namespace rofl
