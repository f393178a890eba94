// Copyright 2026 the speclab authors
// SPDX-License-Identifier: Apache-2.0
#include "speclab/vocab.hpp"

#include <algorithm>
#include <set>

namespace speclab::lm {

std::vector<char32_t> utf8_decode(const std::string& s) {
  std::vector<char32_t> out;
  size_t i = 0;
  while (i < s.size()) {
    const auto b0 = static_cast<unsigned char>(s[i]);
    char32_t cp = 0xFFFD;
    size_t len = 1;
    if (b0 < 0x80) {
      cp = b0;
    } else if ((b0 >> 5) == 0x6 && i + 1 < s.size()) {
      cp = (b0 & 0x1F) << 6 | (static_cast<unsigned char>(s[i + 1]) & 0x3F);
      len = 2;
    } else if ((b0 >> 4) == 0xE && i + 2 < s.size()) {
      cp = (b0 & 0x0F) << 12 | (static_cast<unsigned char>(s[i + 1]) & 0x3F) << 6 |
           (static_cast<unsigned char>(s[i + 2]) & 0x3F);
      len = 3;
    } else if ((b0 >> 3) == 0x1E && i + 3 < s.size()) {
      cp = (b0 & 0x07) << 18 | (static_cast<unsigned char>(s[i + 1]) & 0x3F) << 12 |
           (static_cast<unsigned char>(s[i + 2]) & 0x3F) << 6 |
           (static_cast<unsigned char>(s[i + 3]) & 0x3F);
      len = 4;
    }
    out.push_back(cp);
    i += len;
  }
  return out;
}

std::string utf8_encode(const std::vector<char32_t>& cps) {
  std::string out;
  for (char32_t cp : cps) {
    if (cp < 0x80) {
      out.push_back(static_cast<char>(cp));
    } else if (cp < 0x800) {
      out.push_back(static_cast<char>(0xC0 | (cp >> 6)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else if (cp < 0x10000) {
      out.push_back(static_cast<char>(0xE0 | (cp >> 12)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    } else {
      out.push_back(static_cast<char>(0xF0 | (cp >> 18)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3F)));
      out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3F)));
      out.push_back(static_cast<char>(0x80 | (cp & 0x3F)));
    }
  }
  return out;
}

Vocab Vocab::build(const std::string& corpus_utf8) {
  std::set<char32_t> seen;
  for (char32_t cp : utf8_decode(corpus_utf8)) seen.insert(cp);
  return from_codepoints(std::vector<char32_t>(seen.begin(), seen.end()));
}

Vocab Vocab::from_codepoints(std::vector<char32_t> cps) {
  std::sort(cps.begin(), cps.end());
  cps.erase(std::unique(cps.begin(), cps.end()), cps.end());
  Vocab v;
  v.codepoints_ = std::move(cps);
  for (size_t i = 0; i < v.codepoints_.size(); ++i) {
    v.cp_to_id_.emplace(v.codepoints_[i], static_cast<TokenId>(i) + kNumSpecialTokens);
  }
  return v;
}

TokenSeq Vocab::encode(const std::string& utf8) const {
  TokenSeq ids;
  for (char32_t cp : utf8_decode(utf8)) {
    auto it = cp_to_id_.find(cp);
    ids.push_back(it == cp_to_id_.end() ? kUnkId : it->second);
  }
  return ids;
}

std::string Vocab::decode(const TokenSeq& ids) const {
  std::vector<char32_t> cps;
  for (TokenId id : ids) {
    if (id == kPadId || id == kBosId || id == kEosId) continue;
    if (id == kUnkId) {
      cps.push_back(0xFFFD);
    } else if (id >= kNumSpecialTokens && id < size()) {
      cps.push_back(codepoints_[static_cast<size_t>(id - kNumSpecialTokens)]);
    } else {
      throw std::invalid_argument("Vocab::decode: id out of range");
    }
  }
  return utf8_encode(cps);
}

}  // namespace speclab::lm
