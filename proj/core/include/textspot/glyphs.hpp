#pragma once

#include <span>
#include <string>
#include <vector>

namespace textspot::data {

/// Glyph vocabulary plus raster stencils for the synthetic renderer.
/// Class ids run 1..size(); id 0 is reserved for the CTC blank.
class GlyphSet {
 public:
  static constexpr int kRows = 7;
  static constexpr int kCols = 5;

  /// The default 12-symbol alphabet with 7x5 stroke stencils.
  static const GlyphSet& toy12();

  /// Vocabulary-only set (no stencils); enough for encoding/decoding
  /// transcripts of models trained elsewhere.
  static GlyphSet from_chars(const std::string& chars);

  int size() const { return static_cast<int>(chars_.size()); }
  const std::string& chars() const { return chars_; }
  bool has_stencils() const { return !stencils_.empty(); }

  char char_for(int cls) const;
  int cls_for(char c) const;  // -1 when unknown
  std::span<const uint8_t> stencil(int cls) const;  // kRows*kCols, 0/1

  /// Transcript to class ids; throws std::invalid_argument naming the
  /// offending character.
  std::vector<int> encode(const std::string& transcript) const;
  std::string decode(std::span<const int> classes) const;

 private:
  std::string chars_;
  std::vector<uint8_t> stencils_;  // size() * kRows * kCols
};

}  // namespace textspot::data
