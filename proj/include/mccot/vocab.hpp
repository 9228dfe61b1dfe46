#pragma once

#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace mccot {

/// The fixed 96-token vocabulary of the synthetic grid task.
namespace vocab {

inline constexpr int kPad = 0;
inline constexpr int kBos = 1;
inline constexpr int kEos = 2;
inline constexpr int kSep = 3;
inline constexpr int kSize = 96;

inline constexpr int kShapeKinds = 8;
inline constexpr int kColorKinds = 8;

/// Token id of a word; throws VocabularyError for words outside the vocabulary.
int id(std::string_view word);
const std::string& word(int token);
bool contains(std::string_view word);

std::string_view shape_name(int shape);
std::string_view color_name(int color);
/// Token of the digit 0-9.
int digit(int value);

/// Space-separated words -> ids (throws VocabularyError on unknown words).
std::vector<int> encode(std::string_view text);
std::string decode(std::span<const int> tokens);

}  // namespace vocab
}  // namespace mccot
