#include "mccot/model.hpp"

#include <cmath>
#include <numeric>

#include "mccot/error.hpp"
#include "mccot/vocab.hpp"

namespace mccot {
namespace {

constexpr std::uint64_t kInitStreamTag = 0x1417;

enum class Init { ones, zeros, embedding, dense };

struct ParamSpec {
  std::string name;
  Shape shape;
  Init init;
};

void add_norm(std::vector<ParamSpec>& out, const std::string& prefix, std::size_t d) {
  out.push_back({prefix + ".g", {d}, Init::ones});
  out.push_back({prefix + ".b", {d}, Init::zeros});
}

void add_attention(std::vector<ParamSpec>& out, const std::string& prefix, std::size_t d) {
  for (const char* m : {".wq", ".wk", ".wv", ".wo"}) out.push_back({prefix + m, {d, d}, Init::dense});
}

void add_ffn(std::vector<ParamSpec>& out, const std::string& prefix, std::size_t d, std::size_t f) {
  out.push_back({prefix + ".w1", {d, f}, Init::dense});
  out.push_back({prefix + ".b1", {f}, Init::zeros});
  out.push_back({prefix + ".w2", {f, d}, Init::dense});
  out.push_back({prefix + ".b2", {d}, Init::zeros});
}

std::vector<ParamSpec> layout(const ModelConfig& c) {
  const std::size_t d = c.d_model, f = c.ffn_dim();
  std::vector<ParamSpec> out;
  out.push_back({"tok_emb", {c.vocab_size, d}, Init::embedding});
  out.push_back({"img.proj.w", {c.image_feature_dim, d}, Init::dense});
  out.push_back({"img.proj.b", {d}, Init::zeros});
  out.push_back({"img.pos", {c.image_cells, d}, Init::embedding});
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const std::string p = "enc." + std::to_string(l);
    add_norm(out, p + ".ln1", d);
    add_attention(out, p + ".attn", d);
    add_norm(out, p + ".ln2", d);
    add_ffn(out, p + ".ffn", d, f);
  }
  add_norm(out, "fuse.ln_q", d);
  add_norm(out, "fuse.ln_kv", d);
  add_attention(out, "fuse.attn", d);
  add_norm(out, "enc.ln_f", d);
  for (std::size_t l = 0; l < c.n_layers; ++l) {
    const std::string p = "dec." + std::to_string(l);
    add_norm(out, p + ".ln1", d);
    add_attention(out, p + ".self", d);
    add_norm(out, p + ".ln2", d);
    add_attention(out, p + ".cross", d);
    add_norm(out, p + ".ln3", d);
    add_ffn(out, p + ".ffn", d, f);
  }
  add_norm(out, "dec.ln_f", d);
  out.push_back({"head.w", {d, c.vocab_size}, Init::dense});
  out.push_back({"head.b", {c.vocab_size}, Init::zeros});
  return out;
}

// Positions 0..len-1, repeated for each of `copies` stacked sequences.
Tensor sinusoid(std::size_t len, std::size_t d, std::size_t copies) {
  Tensor t(Shape{len * copies, d});
  for (std::size_t p = 0; p < len; ++p) {
    for (std::size_t i = 0; i < d; i += 2) {
      const double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(d));
      t[p * d + i] = std::sin(static_cast<double>(p) * freq);
      if (i + 1 < d) t[p * d + i + 1] = std::cos(static_cast<double>(p) * freq);
    }
  }
  for (std::size_t c = 1; c < copies; ++c) {
    std::copy_n(t.data().begin(), len * d, t.data().begin() + static_cast<std::ptrdiff_t>(c * len * d));
  }
  return t;
}

template <class T>
std::vector<T> repeat(std::span<const T> xs, std::size_t copies) {
  std::vector<T> out;
  out.reserve(xs.size() * copies);
  for (std::size_t c = 0; c < copies; ++c) out.insert(out.end(), xs.begin(), xs.end());
  return out;
}

std::size_t argmax(std::span<const double> xs) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < xs.size(); ++i)
    if (xs[i] > xs[best]) best = i;
  return best;
}

// Pre-norm residual blocks over a parameter prefix.
// `samples` sequences are stacked along the rows; sample i draws dropout from streams[i].
struct Blocks {
  const ModelParams& p;
  std::size_t heads;
  double drop;
  std::span<RngStream* const> streams;
  std::size_t samples;
  bool training;

  Var dropout_branch(const Var& x) const {
    if (!training || streams.empty()) return x;
    return dropout(x, drop, streams, true);
  }
  Var norm(const Var& x, const std::string& prefix) const { return layer_norm(x, p[prefix + ".g"], p[prefix + ".b"]); }
  Var attend(const Var& xq, const Var& xkv, const std::string& prefix, bool causal) const {
    const Var q = matmul(xq, p[prefix + ".wq"]);
    const Var k = matmul(xkv, p[prefix + ".wk"]);
    const Var v = matmul(xkv, p[prefix + ".wv"]);
    return matmul(attention(q, k, v, heads, causal, samples), p[prefix + ".wo"]);
  }
  Var self_attention(const Var& x, const std::string& norm_prefix, const std::string& prefix, bool causal) const {
    const Var h = norm(x, norm_prefix);
    return add(x, dropout_branch(attend(h, h, prefix, causal)));
  }
  Var feed_forward(const Var& x, const std::string& norm_prefix, const std::string& prefix) const {
    const Var h = gelu(add_row(matmul(norm(x, norm_prefix), p[prefix + ".w1"]), p[prefix + ".b1"]));
    return add(x, dropout_branch(add_row(matmul(h, p[prefix + ".w2"]), p[prefix + ".b2"])));
  }
};

}  // namespace

void ModelConfig::validate() const {
  if (vocab_size < 1 || d_model < 1 || n_layers < 1 || n_heads < 1 || max_rationale_len < 1 || max_answer_len < 1 ||
      image_feature_dim < 1 || image_cells < 1) {
    throw ConfigError("model: all counts must be >= 1");
  }
  if (d_model % n_heads != 0) throw ConfigError("model: d_model must be divisible by n_heads");
  if (!(dropout_p >= 0.0 && dropout_p < 1.0)) throw ConfigError("model: dropout_p must lie in [0, 1)");
}

Var& ModelParams::add(const std::string& name, Tensor value) {
  if (by_name_.contains(name)) throw ConfigError("duplicate parameter name '" + name + "'");
  return by_name_.emplace(name, Var::parameter(std::move(value))).first->second;
}

const Var& ModelParams::operator[](const std::string& name) const {
  const auto it = by_name_.find(name);
  if (it == by_name_.end()) throw ConfigError("missing parameter '" + name + "'");
  return it->second;
}

std::vector<Var> ModelParams::all() const {
  std::vector<Var> out;
  out.reserve(by_name_.size());
  for (const auto& [_, v] : by_name_) out.push_back(v);
  return out;
}

std::size_t ModelParams::count() const {
  std::size_t n = 0;
  for (const auto& [_, v] : by_name_) n += v.size();
  return n;
}

void ModelParams::zero_grad() {
  for (auto& [_, v] : by_name_) v.zero_grad();
}

ModelParams ModelParams::clone() const {
  ModelParams out;
  for (const auto& [name, v] : by_name_) {
    Tensor t(v.shape(), std::vector<double>(v.value().data().begin(), v.value().data().end()));
    out.add(name, std::move(t));
  }
  return out;
}

bool operator==(const ModelParams& a, const ModelParams& b) {
  if (a.by_name_.size() != b.by_name_.size()) return false;
  for (const auto& [name, v] : a.by_name_) {
    const auto it = b.by_name_.find(name);
    if (it == b.by_name_.end() || !(it->second.value() == v.value())) return false;
  }
  return true;
}

Seq2SeqModel::Seq2SeqModel(ModelConfig config, std::uint64_t seed) : config_(config) {
  config_.validate();
  const auto specs = layout(config_);
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const ParamSpec& s = specs[i];
    Tensor t(s.shape);
    RngStream rng(seed, derive_stream({kInitStreamTag, i}));
    switch (s.init) {
      case Init::ones:
        for (double& x : t.data()) x = 1.0;
        break;
      case Init::zeros:
        break;
      case Init::embedding:
        for (double& x : t.data()) x = rng.normal();
        break;
      case Init::dense: {
        const double sd = 1.0 / std::sqrt(static_cast<double>(s.shape[0]));
        for (double& x : t.data()) x = sd * rng.normal();
        break;
      }
    }
    params_.add(s.name, std::move(t));
  }
}

Seq2SeqModel::Seq2SeqModel(ModelConfig config, ModelParams params) : config_(config), params_(std::move(params)) {
  config_.validate();
  const auto specs = layout(config_);
  if (specs.size() != params_.entries().size()) throw ConfigError("checkpoint parameter set does not match config");
  for (const auto& s : specs) {
    if (!params_.contains(s.name)) throw ConfigError("checkpoint is missing parameter '" + s.name + "'");
    if (params_[s.name].shape() != s.shape) {
      throw ConfigError("parameter '" + s.name + "' has shape " + shape_to_string(params_[s.name].shape()) +
                        ", config expects " + shape_to_string(s.shape));
    }
  }
}

std::size_t Seq2SeqModel::parameter_count(const ModelConfig& config) {
  std::size_t n = 0;
  for (const auto& s : layout(config)) n += shape_size(s.shape);
  return n;
}

void Seq2SeqModel::check_tokens(std::span<const int> tokens) const {
  for (int t : tokens) {
    if (t < 0 || static_cast<std::size_t>(t) >= config_.vocab_size) {
      throw VocabularyError("token id " + std::to_string(t) + " outside vocabulary of " +
                            std::to_string(config_.vocab_size));
    }
  }
}

Var Seq2SeqModel::encode(std::span<const int> text, std::span<const double> image, RngStream& rng,
                         bool training) const {
  RngStream* const streams[] = {&rng};
  return encode_samples(text, image, streams, training);
}

Var Seq2SeqModel::encode_samples(std::span<const int> text, std::span<const double> image,
                                 std::span<RngStream* const> streams, bool training) const {
  if (text.empty()) throw InputError("encode: empty text");
  if (streams.empty()) throw InputError("encode: no sample streams");
  check_tokens(text);
  if (image.size() != config_.image_cells * config_.image_feature_dim) {
    throw DimensionError("encode: image has " + std::to_string(image.size()) + " values, expected " +
                         std::to_string(config_.image_cells) + " x " + std::to_string(config_.image_feature_dim));
  }
  const std::size_t n = streams.size(), d = config_.d_model;
  const Blocks b{params_, config_.n_heads, config_.dropout_p, streams, n, training};

  Var x = add(embedding(params_["tok_emb"], repeat(text, n)), Var::constant(sinusoid(text.size(), d, n)));
  x = b.dropout_branch(x);
  for (std::size_t l = 0; l < config_.n_layers; ++l) {
    const std::string p = "enc." + std::to_string(l);
    x = b.self_attention(x, p + ".ln1", p + ".attn", false);
    x = b.feed_forward(x, p + ".ln2", p + ".ffn");
  }
  const Var pixels =
      Var::constant(Tensor(Shape{config_.image_cells * n, config_.image_feature_dim}, repeat(image, n)));
  Var positions = params_["img.pos"];
  if (n > 1) {
    std::vector<int> cell_ids(config_.image_cells);
    std::iota(cell_ids.begin(), cell_ids.end(), 0);
    positions = embedding(positions, repeat(std::span<const int>(cell_ids), n));
  }
  Var cells = add(add_row(matmul(pixels, params_["img.proj.w"]), params_["img.proj.b"]), positions);
  cells = b.dropout_branch(cells);
  x = add(x, b.dropout_branch(b.attend(b.norm(x, "fuse.ln_q"), b.norm(cells, "fuse.ln_kv"), "fuse.attn", false)));
  return b.norm(x, "enc.ln_f");
}

Var Seq2SeqModel::decoder_logits(const Var& memory, std::span<const int> input, std::span<RngStream* const> streams,
                                 bool training) const {
  const std::size_t n = std::max<std::size_t>(1, streams.size());
  const Blocks b{params_, config_.n_heads, config_.dropout_p, streams, n, training};
  Var y = add(embedding(params_["tok_emb"], repeat(input, n)),
              Var::constant(sinusoid(input.size(), config_.d_model, n)));
  y = b.dropout_branch(y);
  for (std::size_t l = 0; l < config_.n_layers; ++l) {
    const std::string p = "dec." + std::to_string(l);
    y = b.self_attention(y, p + ".ln1", p + ".self", true);
    y = add(y, b.dropout_branch(b.attend(b.norm(y, p + ".ln2"), memory, p + ".cross", false)));
    y = b.feed_forward(y, p + ".ln3", p + ".ffn");
  }
  return add_row(matmul(b.norm(y, "dec.ln_f"), params_["head.w"]), params_["head.b"]);
}

Var Seq2SeqModel::teacher_forced_logits(const Var& memory, std::span<const int> target, RngStream& rng,
                                        bool training) const {
  RngStream* const streams[] = {&rng};
  return teacher_forced_samples(memory, target, streams, training);
}

Var Seq2SeqModel::teacher_forced_samples(const Var& memories, std::span<const int> target,
                                         std::span<RngStream* const> streams, bool training) const {
  if (target.empty()) throw InputError("teacher_forced_logits: empty target");
  const std::size_t limit = std::max(config_.max_rationale_len, config_.max_answer_len) + 1;
  if (target.size() > limit) {
    throw InputError("teacher_forced_logits: target of " + std::to_string(target.size()) + " tokens exceeds " +
                     std::to_string(limit));
  }
  if (streams.empty() || memories.shape()[0] % streams.size() != 0) {
    throw DimensionError("teacher_forced_logits: memory rows do not split into the sample count");
  }
  check_tokens(target);
  const std::vector<int> input = shift_right(target);
  return decoder_logits(memories, input, streams, training);
}

DecodeTrace Seq2SeqModel::trace_decode(const Var& memory, std::size_t max_len, int end_token, RngStream* rng) const {
  NoGradGuard no_grad;
  DecodeTrace trace;
  std::vector<int> input = {vocab::kBos};
  for (std::size_t step = 0; step < max_len; ++step) {
    RngStream* const stream[] = {rng};
    const Var logits = decoder_logits(memory, input, rng ? std::span<RngStream* const>(stream) : std::span<RngStream* const>(),
                                      rng != nullptr);
    const auto last = logits.value().data().subspan(step * config_.vocab_size, config_.vocab_size);
    trace.step_logits.emplace_back(Shape{config_.vocab_size}, std::vector<double>(last.begin(), last.end()));
    const int token = static_cast<int>(argmax(last));
    if (token == end_token) break;
    trace.tokens.push_back(token);
    input.push_back(token);
  }
  return trace;
}

std::vector<int> Seq2SeqModel::greedy_decode(const Var& memory, std::size_t max_len, int end_token) const {
  return trace_decode(memory, max_len, end_token, nullptr).tokens;
}

std::vector<int> shift_right(std::span<const int> target) {
  std::vector<int> input = {vocab::kBos};
  if (!target.empty()) input.insert(input.end(), target.begin(), target.end() - 1);
  return input;
}

std::vector<int> with_end(std::span<const int> tokens) {
  std::vector<int> out(tokens.begin(), tokens.end());
  out.push_back(vocab::kEos);
  return out;
}

}  // namespace mccot
