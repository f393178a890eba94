// Copyright 2026 the speclab authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "speclab/training.hpp"
#include "speclab/vocab.hpp"

namespace speclab::data {

// ============================================================================
// Synthetic two-domain corpus
// ============================================================================

// The desk-scale stand-ins for the real corpora: a narrow "asset ledger"
// domain language whose facts are stated in the pretraining corpus and
// queried by the stage-2 pairs, and a broad general language for stage-1
// dialog priming. Everything is generated from seeded templates, so datasets
// are reproducible and train/eval splits are disjoint by construction.

struct AssetFact {
  std::string name;
  int yield = 0;        // 1..9
  char grade = 'a';     // a..e
  std::string sector;
};

struct DatasetBundle {
  std::vector<AssetFact> facts;
  std::vector<std::string> domain_corpus;       // one document per line
  std::vector<train::SftPair> stage1;           // weakly related dialog
  std::vector<train::SftPair> stage2_train;     // domain QA
  std::vector<train::SftPair> stage2_eval;      // held-out template/asset combos
  lm::Vocab vocab;                              // covers every generated string
};

struct DatagenConfig {
  uint64_t seed = 1;
  int corpus_lines = 1200;
  int stage1_pairs = 400;
  int stage2_pairs = 600;
  int eval_pairs = 64;
};

DatasetBundle make_datasets(const DatagenConfig& cfg);

// Writes corpus.txt, stage1.jsonl, stage2_train.jsonl, stage2_eval.jsonl.
void write_datasets(const DatasetBundle& bundle, const std::string& dir);

}  // namespace speclab::data
