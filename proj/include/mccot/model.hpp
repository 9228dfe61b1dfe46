#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "mccot/autograd.hpp"
#include "mccot/example.hpp"

namespace mccot {

struct ModelConfig {
  std::size_t vocab_size = 96;
  std::size_t d_model = 64;
  std::size_t n_layers = 2;
  std::size_t n_heads = 4;
  double dropout_p = 0.1;
  std::size_t max_rationale_len = 48;
  std::size_t max_answer_len = 8;
  std::size_t image_feature_dim = 24;
  std::size_t image_cells = 16;

  /// Feed-forward hidden width.
  std::size_t ffn_dim() const { return 2 * d_model; }
  /// Throws ConfigError when a count is zero, heads do not divide d_model or p is outside [0,1).
  void validate() const;

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Named parameter tensors (ordered by name).
class ModelParams {
 public:
  Var& add(const std::string& name, Tensor value);
  const Var& operator[](const std::string& name) const;
  bool contains(const std::string& name) const { return by_name_.contains(name); }
  const std::map<std::string, Var>& entries() const { return by_name_; }
  std::vector<Var> all() const;
  std::size_t count() const;
  void zero_grad();
  /// Deep copy (fresh nodes, same values).
  ModelParams clone() const;

  friend bool operator==(const ModelParams& a, const ModelParams& b);

 private:
  std::map<std::string, Var> by_name_;
};

/// Greedy decode result: tokens (without the end token) and the logits of every step taken.
struct DecodeTrace {
  std::vector<int> tokens;
  std::vector<Tensor> step_logits;  // each [V]
};

/// Encoder-decoder over question tokens and an image feature grid.
///
/// Encoder: token embeddings + sinusoidal positions, n_layers pre-norm self-attention
/// blocks, then one cross-attention layer from text positions onto the linearly
/// projected image cells. Decoder: n_layers blocks of causal self-attention,
/// cross-attention over the encoder memory and a feed-forward layer. Dropout is
/// applied to embeddings and every residual branch when training.
class Seq2SeqModel {
 public:
  /// Random initialisation, deterministic in `seed`.
  Seq2SeqModel(ModelConfig config, std::uint64_t seed);
  /// Wraps existing parameters; throws ConfigError if names or shapes disagree with the config.
  Seq2SeqModel(ModelConfig config, ModelParams params);

  const ModelConfig& config() const { return config_; }
  ModelParams& params() { return params_; }
  const ModelParams& params() const { return params_; }

  /// Memory of shape [text.size() x d_model]. Throws VocabularyError on out-of-range ids.
  Var encode(std::span<const int> text, std::span<const double> image, RngStream& rng, bool training) const;

  /// Logits [target.size() x V]; row j conditions on the memory and target[0..j).
  Var teacher_forced_logits(const Var& memory, std::span<const int> target, RngStream& rng, bool training) const;

  /// One pass over n = streams.size() dropout samples stacked along the rows: sample i
  /// occupies row block i and draws its masks from streams[i]. Each block equals
  /// what the single-sample call with that stream computes.
  Var encode_samples(std::span<const int> text, std::span<const double> image, std::span<RngStream* const> streams,
                     bool training) const;
  /// Stacked logits [n * target.size() x V] over stacked memories from encode_samples.
  Var teacher_forced_samples(const Var& memories, std::span<const int> target, std::span<RngStream* const> streams,
                             bool training) const;

  /// Eval-mode argmax decoding; stops at end_token (not included) or after max_len tokens.
  std::vector<int> greedy_decode(const Var& memory, std::size_t max_len, int end_token) const;

  /// Argmax decoding that records per-step logits; dropout is live when `rng` is non-null.
  DecodeTrace trace_decode(const Var& memory, std::size_t max_len, int end_token, RngStream* rng) const;

  /// Number of scalar parameters implied by a config.
  static std::size_t parameter_count(const ModelConfig& config);

 private:
  Var decoder_logits(const Var& memory, std::span<const int> input, std::span<RngStream* const> streams,
                     bool training) const;
  void check_tokens(std::span<const int> tokens) const;

  ModelConfig config_;
  ModelParams params_;
};

/// Decoder input/target pair helpers: input = [bos] + target[0..n-1).
std::vector<int> shift_right(std::span<const int> target);
/// Tokens followed by the end token.
std::vector<int> with_end(std::span<const int> tokens);

}  // namespace mccot
