#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "mccot/checkpoint.hpp"
#include "mccot/error.hpp"
#include "mccot/model.hpp"
#include "mccot/vocab.hpp"
#include "test_helpers.hpp"

using namespace mccot;

namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.d_model = 16;
  c.n_heads = 2;
  c.n_layers = 1;
  return c;
}

std::vector<double> random_image(const ModelConfig& c, std::uint64_t stream) {
  RngStream rng(7, stream);
  std::vector<double> img(c.image_cells * c.image_feature_dim);
  for (double& x : img) x = rng.uniform();
  return img;
}

std::vector<int> question() { return vocab::encode("what shape is at row 2 column 3 ?"); }

// Independent count from the layer inventory.
std::size_t expected_count(const ModelConfig& c) {
  const std::size_t d = c.d_model, f = 2 * d, v = c.vocab_size;
  const std::size_t norm = 2 * d, attn = 4 * d * d, ffn = d * f + f + f * d + d;
  const std::size_t enc_layer = 2 * norm + attn + ffn;
  const std::size_t dec_layer = 3 * norm + 2 * attn + ffn;
  const std::size_t image = c.image_feature_dim * d + d + c.image_cells * d;
  const std::size_t fusion = 2 * norm + attn;
  return v * d + image + c.n_layers * enc_layer + fusion + norm + c.n_layers * dec_layer + norm + d * v + v;
}

}  // namespace

TEST_CASE("parameter count of the default config") {
  const ModelConfig c;
  CHECK(Seq2SeqModel::parameter_count(c) == 197792);
  CHECK(expected_count(c) == 197792);
  CHECK(Seq2SeqModel(c, 0).params().count() == 197792);
  CHECK(Seq2SeqModel::parameter_count(small_config()) == expected_count(small_config()));
}

TEST_CASE("config validation") {
  ModelConfig c;
  c.n_heads = 5;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = ModelConfig{};
  c.dropout_p = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = ModelConfig{};
  c.n_layers = 0;
  CHECK_THROWS_AS(Seq2SeqModel(c, 0), ConfigError);
}

TEST_CASE("initialisation is deterministic in the seed") {
  const auto c = small_config();
  CHECK(Seq2SeqModel(c, 3).params() == Seq2SeqModel(c, 3).params());
  CHECK_FALSE(Seq2SeqModel(c, 3).params() == Seq2SeqModel(c, 4).params());
}

TEST_CASE("eval-mode encode is a pure function of its inputs") {
  const auto c = small_config();
  const Seq2SeqModel m(c, 1);
  RngStream a(1, 1), b(99, 5);
  const auto img = random_image(c, 0);
  const Var m1 = m.encode(question(), img, a, false);
  const Var m2 = m.encode(question(), img, b, false);
  CHECK(m1.value() == m2.value());
  CHECK(m1.value().shape() == Shape{question().size(), c.d_model});
}

TEST_CASE("memory depends on the image") {
  const auto c = small_config();
  const Seq2SeqModel m(c, 1);
  RngStream rng(0, 0);
  const Var m1 = m.encode(question(), random_image(c, 0), rng, false);
  const Var m2 = m.encode(question(), random_image(c, 1), rng, false);
  CHECK_FALSE(m1.value() == m2.value());
}

TEST_CASE("training mode draws different dropout masks per stream") {
  const auto c = small_config();
  const Seq2SeqModel m(c, 1);
  const auto img = random_image(c, 0);
  const std::vector<int> target = {vocab::id("the"), vocab::id("answer"), vocab::kEos};
  auto logits = [&](std::uint64_t stream) {
    RngStream rng(0, stream);
    return m.teacher_forced_logits(m.encode(question(), img, rng, true), target, rng, true).value();
  };
  CHECK(logits(1) == logits(1));
  CHECK_FALSE(logits(1) == logits(2));
}

TEST_CASE("stacked samples match separate single-sample passes") {
  const auto c = small_config();
  const Seq2SeqModel m(c, 3);
  const auto img = random_image(c, 0);
  const std::vector<int> target = {vocab::id("the"), vocab::id("answer"), vocab::id("is"), vocab::kEos};
  constexpr std::size_t n = 3;
  std::vector<RngStream> rngs;
  for (std::size_t s = 0; s < n; ++s) rngs.emplace_back(5, 100 + s);
  std::vector<RngStream*> ptrs;
  for (auto& r : rngs) ptrs.push_back(&r);
  const Tensor stacked = m.teacher_forced_samples(m.encode_samples(question(), img, ptrs, true), target, ptrs, true).value();
  REQUIRE(stacked.shape() == Shape{n * target.size(), c.vocab_size});
  const std::size_t block = target.size() * c.vocab_size;
  for (std::size_t s = 0; s < n; ++s) {
    RngStream rng(5, 100 + s);
    const Tensor single = m.teacher_forced_logits(m.encode(question(), img, rng, true), target, rng, true).value();
    double worst = 0.0;
    for (std::size_t j = 0; j < block; ++j) worst = std::max(worst, std::abs(single[j] - stacked[s * block + j]));
    CHECK(worst < 1e-12);
  }
}

TEST_CASE("decoder is causal") {
  const auto c = small_config();
  const Seq2SeqModel m(c, 2);
  RngStream rng(0, 0);
  const Var memory = m.encode(question(), random_image(c, 0), rng, false);
  const std::vector<int> t1 = {10, 20, 30, 40, 2};
  const std::vector<int> t2 = {10, 20, 31, 41, 2};
  const Tensor a = m.teacher_forced_logits(memory, t1, rng, false).value();
  const Tensor b = m.teacher_forced_logits(memory, t2, rng, false).value();
  // Row j sees target[0..j); rows 0..2 only see the shared prefix {10, 20}.
  for (std::size_t j = 0; j < 3; ++j) {
    for (std::size_t v = 0; v < c.vocab_size; ++v) CHECK(a.at(j, v) == b.at(j, v));
  }
  bool row3_differs = false;
  for (std::size_t v = 0; v < c.vocab_size; ++v) row3_differs |= a.at(3, v) != b.at(3, v);
  CHECK(row3_differs);
}

TEST_CASE("greedy decode agrees with teacher forcing on its own output") {
  const auto c = small_config();
  const Seq2SeqModel m(c, 5);
  RngStream rng(0, 0);
  const Var memory = m.encode(question(), random_image(c, 0), rng, false);
  const auto tokens = m.greedy_decode(memory, 6, vocab::kEos);
  REQUIRE(!tokens.empty());
  const Tensor logits = m.teacher_forced_logits(memory, tokens, rng, false).value();
  for (std::size_t j = 0; j < tokens.size(); ++j) {
    std::size_t best = 0;
    for (std::size_t v = 1; v < c.vocab_size; ++v) best = logits.at(j, v) > logits.at(j, best) ? v : best;
    CHECK(static_cast<int>(best) == tokens[j]);
  }
  const auto trace = m.trace_decode(memory, 6, vocab::kEos, nullptr);
  CHECK(trace.tokens == tokens);
}

TEST_CASE("a head rigged towards the end token decodes to nothing") {
  const auto c = small_config();
  Seq2SeqModel m(c, 5);
  Var head_b = m.params()["head.b"];
  head_b.value()[vocab::kEos] = 1e6;
  RngStream rng(0, 0);
  const Var memory = m.encode(question(), random_image(c, 0), rng, false);
  CHECK(m.greedy_decode(memory, 10, vocab::kEos).empty());
  CHECK(m.trace_decode(memory, 10, vocab::kEos, nullptr).step_logits.size() == 1);
}

TEST_CASE("input validation") {
  const auto c = small_config();
  const Seq2SeqModel m(c, 0);
  RngStream rng(0, 0);
  const auto img = random_image(c, 0);
  CHECK_THROWS_AS(m.encode(std::vector<int>{1, 96}, img, rng, false), VocabularyError);
  CHECK_THROWS_AS(m.encode(std::vector<int>{-1}, img, rng, false), VocabularyError);
  CHECK_THROWS_AS(m.encode(question(), std::vector<double>(5), rng, false), DimensionError);
  const Var memory = m.encode(question(), img, rng, false);
  CHECK_THROWS_AS(m.teacher_forced_logits(memory, std::vector<int>{}, rng, false), InputError);
  CHECK_THROWS_AS(m.teacher_forced_logits(memory, std::vector<int>(c.max_rationale_len + 2, 5), rng, false),
                  InputError);
}

TEST_CASE("checkpoint round trip is bit-exact") {
  const auto c = small_config();
  const Seq2SeqModel m(c, 11);
  const std::string bytes = checkpoint_bytes(m);
  const Seq2SeqModel back = checkpoint_from_bytes(bytes);
  CHECK(back.config() == m.config());
  CHECK(back.params() == m.params());
  CHECK(checkpoint_bytes(back) == bytes);

  const auto path = std::filesystem::temp_directory_path() / "mccot_test_model.ckpt";
  save_checkpoint(path, m);
  CHECK(load_checkpoint(path).params() == m.params());
  std::filesystem::remove(path);
}

TEST_CASE("corrupt checkpoints are rejected") {
  const std::string bytes = checkpoint_bytes(Seq2SeqModel(small_config(), 0));
  CHECK_THROWS_AS(checkpoint_from_bytes(bytes.substr(0, bytes.size() - 3)), ParseError);
  CHECK_THROWS_AS(checkpoint_from_bytes("NOTACKPT" + bytes.substr(8)), ParseError);
  CHECK_THROWS_AS(checkpoint_from_bytes(bytes + "x"), ParseError);
  CHECK_THROWS_AS(load_checkpoint("/nonexistent/dir/x.ckpt"), InputError);
}

TEST_CASE("shift_right and with_end") {
  const std::vector<int> t = {7, 8, 9};
  CHECK(shift_right(t) == std::vector<int>{vocab::kBos, 7, 8});
  CHECK(with_end(t) == std::vector<int>{7, 8, 9, vocab::kEos});
}
