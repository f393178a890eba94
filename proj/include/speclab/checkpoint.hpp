// Copyright 2026 the speclab authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "speclab/transformer.hpp"
#include "speclab/vocab.hpp"

namespace speclab::lm {

// Checkpoint container: model weights, the vocabulary they were trained
// against, and a free-form training provenance record (stages applied,
// seeds, step counts).
struct Checkpoint {
  Transformer model;
  Vocab vocab;
  std::vector<std::string> provenance;
};

// Binary little-endian layout (all integers fixed-width LE, doubles raw
// IEEE-754):
//   magic "SPLABCK1" | u32 version
//   config: u32 d_model, n_layers, n_heads, d_ff, max_context, vocab_size;
//           u64 init_seed
//   vocab:  u32 count; count x u32 codepoints (id order, specials implied)
//   provenance: u32 count; count x (u32 len, utf8 bytes)
//   tensors: u32 count; count x (u32 name_len, name, u32 ndims,
//            ndims x u32 extents, f64 values row-major)
// A human-readable sidecar is written next to the file as <path>.json.
void save_checkpoint(const std::string& path, Transformer& model, const Vocab& vocab,
                     const std::vector<std::string>& provenance);

Checkpoint load_checkpoint(const std::string& path);

}  // namespace speclab::lm
