// Copyright 2026 the speclab authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "speclab/common.hpp"

#include <unordered_map>

namespace speclab::lm {

// Character-level vocabulary: a bijection between unicode codepoints observed
// in a corpus and dense ids. Ids 0..3 are reserved (PAD, BOS, EOS, UNK);
// observed codepoints follow in ascending order so rebuilds are reproducible.
class Vocab {
 public:
  Vocab() = default;

  static Vocab build(const std::string& corpus_utf8);

  int size() const { return kNumSpecialTokens + static_cast<int>(codepoints_.size()); }

  TokenSeq encode(const std::string& utf8) const;
  // Inverse of encode for known codepoints; PAD/BOS/EOS decode to nothing and
  // UNK to U+FFFD.
  std::string decode(const TokenSeq& ids) const;

  bool knows(char32_t cp) const { return cp_to_id_.count(cp) != 0; }

  // Codepoints in id order (id 4 first); the checkpoint serializer stores
  // exactly this list.
  const std::vector<char32_t>& codepoints() const { return codepoints_; }
  static Vocab from_codepoints(std::vector<char32_t> cps);

  bool operator==(const Vocab& other) const { return codepoints_ == other.codepoints_; }

 private:
  std::vector<char32_t> codepoints_;
  std::unordered_map<char32_t, TokenId> cp_to_id_;
};

// Minimal UTF-8 transcoding used by Vocab (invalid bytes decode to U+FFFD).
std::vector<char32_t> utf8_decode(const std::string& s);
std::string utf8_encode(const std::vector<char32_t>& cps);

}  // namespace speclab::lm
