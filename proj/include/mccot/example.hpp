#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace mccot {

/// One multimodal question: text T, image grid I, gold rationale R, choices and gold answer Y.
struct MultimodalExample {
  std::string id;
  std::vector<int> question_tokens;
  std::size_t image_cells = 0;
  std::size_t image_feature_dim = 0;
  std::vector<double> image_features;  // image_cells x image_feature_dim, row-major
  std::vector<std::vector<int>> choices;
  std::size_t answer_index = 0;
  std::vector<int> rationale_tokens;

  const std::vector<int>& answer_tokens() const { return choices.at(answer_index); }

  friend bool operator==(const MultimodalExample&, const MultimodalExample&) = default;
};

}  // namespace mccot
