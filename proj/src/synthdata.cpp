#include "mccot/synthdata.hpp"

#include <cmath>
#include <fstream>
#include "json.hpp"
#include <sstream>
#include <unordered_set>

#include "mccot/error.hpp"
#include "mccot/vocab.hpp"

namespace mccot {
namespace {

constexpr std::uint64_t kExampleStreamTag = 0xDA7A;

std::string num(std::size_t v) { return std::to_string(v); }

template <class T>
void shuffle(std::vector<T>& xs, RngStream& rng) {
  for (std::size_t i = xs.size(); i > 1; --i) std::swap(xs[i - 1], xs[rng.uniform_index(i)]);
}

QuestionTemplate pick_template(const std::array<double, 3>& mix, RngStream& rng) {
  const double u = rng.uniform();
  if (u < mix[0]) return QuestionTemplate::largest_color;
  if (u < mix[0] + mix[1]) return QuestionTemplate::shape_at;
  return QuestionTemplate::compare_count;
}

// Gold first, then three distinct distractors from the same attribute family; shuffled.
void make_choices(int gold, int kinds, std::string_view (*name)(int), RngStream& rng, MultimodalExample& ex) {
  std::vector<int> others;
  for (int k = 0; k < kinds; ++k)
    if (k != gold) others.push_back(k);
  shuffle(others, rng);
  std::vector<int> picked = {gold, others[0], others[1], others[2]};
  shuffle(picked, rng);
  for (std::size_t i = 0; i < picked.size(); ++i) {
    ex.choices.push_back({vocab::id(name(picked[i]))});
    if (picked[i] == gold) ex.answer_index = i;
  }
}

std::string cell_phrase(std::size_t index, std::size_t G) {
  return "the cell at row " + num(index / G + 1) + " column " + num(index % G + 1);
}

struct Draft {
  MultimodalExample example;
  std::string signature;
};

Draft draft_example(const DatasetSpec& spec, RngStream& rng) {
  const std::size_t G = spec.grid_size;
  const GridWorld grid = sample_grid(G, spec.noise_sigma, rng);
  Draft d;
  MultimodalExample& ex = d.example;

  ex.image_cells = G * G;
  ex.image_feature_dim = spec.image_feature_dim;
  ex.image_features.assign(ex.image_cells * ex.image_feature_dim, 0.0);
  for (std::size_t c = 0; c < ex.image_cells; ++c) {
    double* f = ex.image_features.data() + c * ex.image_feature_dim;
    f[grid.cells[c].shape] = 1.0;
    f[vocab::kShapeKinds + grid.cells[c].color] = 1.0;
    f[vocab::kShapeKinds + vocab::kColorKinds] = grid.cells[c].count / 5.0;
    for (std::size_t k = 0; k < ex.image_feature_dim; ++k) f[k] += grid.noise_sigma * rng.normal();
  }

  std::string question, rationale;
  switch (pick_template(spec.template_mix, rng)) {
    case QuestionTemplate::largest_color: {
      const std::size_t best = grid.argmax_count();
      const auto color = vocab::color_name(grid.cells[best].color);
      question = "what is the color of the cell with the largest count ?";
      rationale = cell_phrase(best, G) + " has count " + num(static_cast<std::size_t>(grid.cells[best].count)) +
                  " . that is the largest count . its color is " + std::string(color) + " . the answer is " +
                  std::string(color) + " .";
      make_choices(grid.cells[best].color, vocab::kColorKinds, vocab::color_name, rng, ex);
      break;
    }
    case QuestionTemplate::shape_at: {
      const std::size_t cell = rng.uniform_index(G * G);
      const auto shape = vocab::shape_name(grid.cells[cell].shape);
      question = "what shape is at row " + num(cell / G + 1) + " column " + num(cell % G + 1) + " ?";
      rationale = cell_phrase(cell, G) + " has shape " + std::string(shape) + " . the answer is " +
                  std::string(shape) + " .";
      make_choices(grid.cells[cell].shape, vocab::kShapeKinds, vocab::shape_name, rng, ex);
      break;
    }
    case QuestionTemplate::compare_count: {
      std::size_t a = 0, b = 0;
      do {
        a = rng.uniform_index(G * G);
        b = rng.uniform_index(G * G);
      } while (grid.cells[a].count == grid.cells[b].count);
      const auto ka = static_cast<std::size_t>(grid.cells[a].count), kb = static_cast<std::size_t>(grid.cells[b].count);
      const bool greater = ka > kb;
      question = "is the count at row " + num(a / G + 1) + " column " + num(a % G + 1) +
                 " greater than the count at row " + num(b / G + 1) + " column " + num(b % G + 1) + " ?";
      rationale = cell_phrase(a, G) + " has count " + num(ka) + " . " + cell_phrase(b, G) + " has count " + num(kb) +
                  " . " + num(ka) + " is " + (greater ? "greater" : "less") + " than " + num(kb) +
                  " . the answer is " + (greater ? "yes" : "no") + " .";
      std::vector<std::string> options = {"yes", "no", "equal", "unknown"};
      shuffle(options, rng);
      for (std::size_t i = 0; i < options.size(); ++i) {
        ex.choices.push_back({vocab::id(options[i])});
        if (options[i] == (greater ? "yes" : "no")) ex.answer_index = i;
      }
      break;
    }
  }
  ex.question_tokens = vocab::encode(question);
  ex.rationale_tokens = vocab::encode(rationale);

  std::ostringstream sig;
  sig << question << '|';
  for (const auto& c : grid.cells) sig << c.shape << ',' << c.color << ',' << c.count << ';';
  d.signature = sig.str();
  return d;
}

std::vector<int> tokens_from_json(const nlohmann::json& j, const char* field) {
  return vocab::encode(j.at(field).get<std::string>());
}

}  // namespace

std::size_t GridWorld::argmax_count() const {
  std::size_t best = 0;
  for (std::size_t i = 1; i < cells.size(); ++i)
    if (cells[i].count > cells[best].count) best = i;
  return best;
}

void DatasetSpec::validate() const {
  if (n_train < 1 || n_val < 1 || n_test < 1) throw ConfigError("dataset: split sizes must be >= 1");
  if (grid_size < 2 || grid_size > 9) throw ConfigError("dataset: grid_size must lie in [2, 9]");
  double total = 0.0;
  for (double w : template_mix) {
    if (!(w >= 0.0)) throw ConfigError("dataset: template weights must be non-negative");
    total += w;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("dataset: template weights must sum to 1");
  if (!(noise_sigma >= 0.0)) throw ConfigError("dataset: noise_sigma must be >= 0");
  if (image_feature_dim < kUsedFeatures) {
    throw ConfigError("dataset: image_feature_dim must be >= " + std::to_string(kUsedFeatures));
  }
}

GridWorld sample_grid(std::size_t size, double noise_sigma, RngStream& rng) {
  GridWorld g;
  g.size = size;
  g.noise_sigma = noise_sigma;
  g.cells.resize(size * size);
  int top = 0;
  for (auto& c : g.cells) {
    c.shape = static_cast<int>(rng.uniform_index(vocab::kShapeKinds));
    c.color = static_cast<int>(rng.uniform_index(vocab::kColorKinds));
    c.count = 1 + static_cast<int>(rng.uniform_index(5));
    top = std::max(top, c.count);
  }
  // Keep one random holder of the top count; lower the others (or lift the winner when top is 1).
  std::vector<std::size_t> tied;
  for (std::size_t i = 0; i < g.cells.size(); ++i)
    if (g.cells[i].count == top) tied.push_back(i);
  const std::size_t winner = tied[rng.uniform_index(tied.size())];
  if (top == 1) {
    g.cells[winner].count = 2;
  } else {
    for (std::size_t i : tied)
      if (i != winner) g.cells[i].count = top - 1;
  }
  return g;
}

Dataset generate_dataset(const DatasetSpec& spec) {
  spec.validate();
  Dataset out;
  std::unordered_set<std::string> seen;
  const std::array<std::pair<std::vector<MultimodalExample>*, std::size_t>, 3> splits = {
      {{&out.train, spec.n_train}, {&out.val, spec.n_val}, {&out.test, spec.n_test}}};
  const std::array<const char*, 3> names = {"train", "val", "test"};
  for (std::size_t s = 0; s < splits.size(); ++s) {
    auto& [examples, count] = splits[s];
    examples->reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
      for (std::uint64_t attempt = 0;; ++attempt) {
        RngStream rng(spec.seed, derive_stream({kExampleStreamTag, s, i, attempt}));
        Draft d;
        try {
          d = draft_example(spec, rng);
        } catch (const VocabularyError& e) {
          throw GenerationError(std::string("template produced an unknown token: ") + e.what());
        }
        if (!seen.insert(d.signature).second) continue;
        char id[32];
        std::snprintf(id, sizeof id, "%s-%06zu", names[s], i);
        d.example.id = id;
        examples->push_back(std::move(d.example));
        break;
      }
    }
  }
  return out;
}

std::string serialize_example(const MultimodalExample& ex) {
  nlohmann::ordered_json j;
  j["id"] = ex.id;
  j["question"] = vocab::decode(ex.question_tokens);
  auto image = nlohmann::ordered_json::array();
  for (std::size_t c = 0; c < ex.image_cells; ++c) {
    const auto first = ex.image_features.begin() + static_cast<std::ptrdiff_t>(c * ex.image_feature_dim);
    image.push_back(std::vector<double>(first, first + static_cast<std::ptrdiff_t>(ex.image_feature_dim)));
  }
  j["image"] = std::move(image);
  auto choices = nlohmann::ordered_json::array();
  for (const auto& c : ex.choices) choices.push_back(vocab::decode(c));
  j["choices"] = std::move(choices);
  j["answer_index"] = ex.answer_index;
  j["rationale"] = vocab::decode(ex.rationale_tokens);
  return j.dump();
}

MultimodalExample parse_example(const std::string& line, std::size_t line_number) {
  const std::string where = "line " + std::to_string(line_number) + ": ";
  try {
    const auto j = nlohmann::json::parse(line);
    MultimodalExample ex;
    ex.id = j.at("id").get<std::string>();
    ex.question_tokens = tokens_from_json(j, "question");
    const auto& image = j.at("image");
    if (!image.is_array() || image.empty()) throw ParseError(where + "image must be a non-empty array of rows");
    ex.image_cells = image.size();
    ex.image_feature_dim = image.at(0).size();
    for (const auto& row : image) {
      const auto values = row.get<std::vector<double>>();
      if (values.size() != ex.image_feature_dim) throw ParseError(where + "ragged image rows");
      ex.image_features.insert(ex.image_features.end(), values.begin(), values.end());
    }
    for (const auto& c : j.at("choices")) ex.choices.push_back(vocab::encode(c.get<std::string>()));
    ex.answer_index = j.at("answer_index").get<std::size_t>();
    ex.rationale_tokens = tokens_from_json(j, "rationale");
    if (ex.answer_index >= ex.choices.size()) throw ParseError(where + "answer_index out of range");
    return ex;
  } catch (const ParseError&) {
    throw;
  } catch (const std::exception& e) {
    throw ParseError(where + e.what());
  }
}

void save_split(const std::filesystem::path& path, const std::vector<MultimodalExample>& examples) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot open " + path.string() + " for writing");
  for (const auto& ex : examples) out << serialize_example(ex) << '\n';
}

std::vector<MultimodalExample> load_split(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot open " + path.string());
  std::vector<MultimodalExample> out;
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.empty()) continue;
    out.push_back(parse_example(line, line_number));
  }
  return out;
}

std::optional<std::size_t> read_answer_from_rationale(const std::vector<int>& rationale,
                                                      const std::vector<std::vector<int>>& choices) {
  const std::vector<int> clause = vocab::encode("the answer is");
  for (std::size_t i = rationale.size(); i-- > 0;) {
    if (i + clause.size() >= rationale.size()) continue;
    if (!std::equal(clause.begin(), clause.end(), rationale.begin() + static_cast<std::ptrdiff_t>(i))) continue;
    const int answer = rationale[i + clause.size()];
    for (std::size_t c = 0; c < choices.size(); ++c)
      if (choices[c] == std::vector<int>{answer}) return c;
    return std::nullopt;
  }
  return std::nullopt;
}

}  // namespace mccot
