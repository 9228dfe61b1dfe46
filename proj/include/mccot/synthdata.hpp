#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "mccot/example.hpp"
#include "mccot/rng.hpp"

namespace mccot {

struct GridCell {
  int shape = 0;  // 0..7
  int color = 0;  // 0..7
  int count = 1;  // 1..5
};

struct GridWorld {
  std::size_t size = 4;
  std::vector<GridCell> cells;  // row-major, size x size
  double noise_sigma = 0.05;

  const GridCell& at(std::size_t row, std::size_t col) const { return cells[row * size + col]; }
  /// Index of the unique cell holding the largest count.
  std::size_t argmax_count() const;
};

enum class QuestionTemplate : std::uint8_t { largest_color, shape_at, compare_count };

struct DatasetSpec {
  std::uint64_t seed = 0;
  std::size_t n_train = 2000;
  std::size_t n_val = 500;
  std::size_t n_test = 500;
  std::size_t grid_size = 4;
  /// Weights over {largest_color, shape_at, compare_count}.
  std::array<double, 3> template_mix = {0.6, 0.2, 0.2};
  double noise_sigma = 0.05;
  std::size_t image_feature_dim = 24;

  /// Throws ConfigError for zero counts, bad weights or an unsupported grid.
  void validate() const;
};

struct Dataset {
  std::vector<MultimodalExample> train;
  std::vector<MultimodalExample> val;
  std::vector<MultimodalExample> test;
};

/// Feature width actually used per cell: one-hot shape, one-hot color, count / 5.
inline constexpr std::size_t kUsedFeatures = 17;

/// Random grid with a unique maximum count.
GridWorld sample_grid(std::size_t size, double noise_sigma, RngStream& rng);

/// Deterministic in `spec`; examples are drawn from per-example streams and never
/// repeat a (question, grid) pair across splits.
Dataset generate_dataset(const DatasetSpec& spec);

/// One JSON object per line with fields id, question, image, choices, answer_index, rationale.
std::string serialize_example(const MultimodalExample& ex);
/// Throws ParseError naming `line_number` on malformed input.
MultimodalExample parse_example(const std::string& line, std::size_t line_number);

void save_split(const std::filesystem::path& path, const std::vector<MultimodalExample>& examples);
std::vector<MultimodalExample> load_split(const std::filesystem::path& path);

/// Rule-based reader: answers from the final "the answer is X" clause of the rationale alone.
std::optional<std::size_t> read_answer_from_rationale(const std::vector<int>& rationale,
                                                      const std::vector<std::vector<int>>& choices);

}  // namespace mccot
