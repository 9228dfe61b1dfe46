#include "mccot/vocab.hpp"

#include <array>
#include <sstream>
#include <unordered_map>

#include "mccot/error.hpp"

namespace mccot::vocab {
namespace {

constexpr std::array<std::string_view, kShapeKinds> kShapes = {"circle", "square", "triangle", "star",
                                                                "heart",  "diamond", "cross", "hexagon"};
constexpr std::array<std::string_view, kColorKinds> kColors = {"red",    "green",  "blue",  "yellow",
                                                                "purple", "orange", "black", "white"};

struct Table {
  std::vector<std::string> words;
  std::unordered_map<std::string, int> ids;

  Table() {
    for (auto w : {"<pad>", "<bos>", "<eos>", "<sep>"}) words.emplace_back(w);
    for (int d = 0; d <= 9; ++d) words.push_back(std::to_string(d));
    for (auto s : kShapes) words.emplace_back(s);
    for (auto c : kColors) words.emplace_back(c);
    for (auto w : {".", "?", "what", "is", "the", "color", "of", "cell", "with", "largest", "count", "shape", "at",
                   "row", "column", "greater", "than", "less", "that", "has", "its", "answer", "yes", "no", "equal",
                   "unknown"}) {
      words.emplace_back(w);
    }
    for (int r = 0; words.size() < static_cast<std::size_t>(kSize); ++r) words.push_back("<r" + std::to_string(r) + ">");
    for (std::size_t i = 0; i < words.size(); ++i) ids.emplace(words[i], static_cast<int>(i));
  }
};

const Table& table() {
  static const Table t;
  return t;
}

}  // namespace

int id(std::string_view w) {
  const auto& t = table();
  const auto it = t.ids.find(std::string(w));
  if (it == t.ids.end()) throw VocabularyError("unknown word '" + std::string(w) + "'");
  return it->second;
}

const std::string& word(int token) {
  const auto& t = table();
  if (token < 0 || token >= kSize) throw VocabularyError("token id " + std::to_string(token) + " outside vocabulary");
  return t.words[static_cast<std::size_t>(token)];
}

bool contains(std::string_view w) { return table().ids.contains(std::string(w)); }

std::string_view shape_name(int shape) { return kShapes.at(static_cast<std::size_t>(shape)); }
std::string_view color_name(int color) { return kColors.at(static_cast<std::size_t>(color)); }

int digit(int value) {
  if (value < 0 || value > 9) throw VocabularyError("no digit token for " + std::to_string(value));
  return 4 + value;
}

std::vector<int> encode(std::string_view text) {
  std::vector<int> out;
  std::istringstream in{std::string(text)};
  std::string w;
  while (in >> w) out.push_back(id(w));
  return out;
}

std::string decode(std::span<const int> tokens) {
  std::string out;
  for (int t : tokens) {
    if (!out.empty()) out += ' ';
    out += word(t);
  }
  return out;
}

}  // namespace mccot::vocab
