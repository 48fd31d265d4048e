#include "textspot/glyphs.hpp"

#include <stdexcept>

namespace textspot::data {

namespace {

// 7x5 stroke masks, one row per line. Chosen for mutual distinguishability
// (pairwise Hamming distance >= 4, enforced by tests).
constexpr const char* kToyGlyphs[12][7] = {
    // A
    {"01110", "10001", "10001", "11111", "10001", "10001", "10001"},
    // C
    {"01111", "10000", "10000", "10000", "10000", "10000", "01111"},
    // E
    {"11111", "10000", "10000", "11110", "10000", "10000", "11111"},
    // H
    {"10001", "10001", "10001", "11111", "10001", "10001", "10001"},
    // J
    {"00111", "00010", "00010", "00010", "00010", "10010", "01100"},
    // L
    {"10000", "10000", "10000", "10000", "10000", "10000", "11111"},
    // O
    {"01110", "10001", "10001", "10001", "10001", "10001", "01110"},
    // P
    {"11110", "10001", "10001", "11110", "10000", "10000", "10000"},
    // T
    {"11111", "00100", "00100", "00100", "00100", "00100", "00100"},
    // U
    {"10001", "10001", "10001", "10001", "10001", "10001", "01110"},
    // X
    {"10001", "10001", "01010", "00100", "01010", "10001", "10001"},
    // Z
    {"11111", "00001", "00010", "00100", "01000", "10000", "11111"},
};

constexpr const char* kToyChars = "ACEHJLOPTUXZ";

}  // namespace

const GlyphSet& GlyphSet::toy12() {
  static const GlyphSet set = [] {
    GlyphSet g;
    g.chars_ = kToyChars;
    g.stencils_.reserve(12 * kRows * kCols);
    for (const auto& rows : kToyGlyphs) {
      for (int r = 0; r < kRows; ++r) {
        for (int c = 0; c < kCols; ++c) {
          g.stencils_.push_back(rows[r][c] == '1' ? 1 : 0);
        }
      }
    }
    return g;
  }();
  return set;
}

GlyphSet GlyphSet::from_chars(const std::string& chars) {
  GlyphSet g;
  g.chars_ = chars;
  return g;
}

char GlyphSet::char_for(int cls) const {
  if (cls < 1 || cls > size()) {
    throw std::out_of_range("GlyphSet: class " + std::to_string(cls) +
                            " outside 1.." + std::to_string(size()));
  }
  return chars_[cls - 1];
}

int GlyphSet::cls_for(char c) const {
  const auto pos = chars_.find(c);
  return pos == std::string::npos ? -1 : static_cast<int>(pos) + 1;
}

std::span<const uint8_t> GlyphSet::stencil(int cls) const {
  if (!has_stencils()) throw std::logic_error("GlyphSet: no stencils available");
  if (cls < 1 || cls > size()) {
    throw std::out_of_range("GlyphSet: class " + std::to_string(cls));
  }
  return std::span<const uint8_t>(stencils_.data() + (cls - 1) * kRows * kCols,
                                  kRows * kCols);
}

std::vector<int> GlyphSet::encode(const std::string& transcript) const {
  std::vector<int> out;
  out.reserve(transcript.size());
  for (char c : transcript) {
    const int cls = cls_for(c);
    if (cls < 0) {
      throw std::invalid_argument("GlyphSet: character '" + std::string(1, c) +
                                  "' not in vocabulary \"" + chars_ + "\"");
    }
    out.push_back(cls);
  }
  return out;
}

std::string GlyphSet::decode(std::span<const int> classes) const {
  std::string out;
  out.reserve(classes.size());
  for (int c : classes) out.push_back(char_for(c));
  return out;
}

}  // namespace textspot::data
