// Copyright 2026 the speclab authors
// SPDX-License-Identifier: Apache-2.0
#include "speclab/datagen.hpp"

#include <filesystem>

namespace speclab::data {

namespace {

const std::vector<std::string> kAssetNames = {
    "arlo", "brim", "cove", "dune",  "ember", "flint", "grove", "helm",  "iris", "juno",
    "kite", "lumen", "mesa", "nook", "opal",  "pike",  "quill", "reef", "sable", "tern"};

const std::vector<std::string> kSectors = {"mining", "ports", "rail", "steel", "grain", "power"};

const std::vector<std::string> kObjects = {"cart", "ledger", "crate", "gate", "lamp", "desk"};
const std::vector<std::string> kColors = {"blue", "red", "green", "grey", "amber", "white"};
const std::vector<std::string> kWords = {"ledger", "harbor", "signal", "copper",
                                         "market", "anchor", "tunnel", "cargo"};

std::string corpus_line(const AssetFact& f, int tmpl) {
  const std::string y = std::to_string(f.yield);
  const std::string g(1, f.grade);
  switch (tmpl % 5) {
    case 0:
      return "asset " + f.name + " holds grade " + g + " at yield " + y + " in " + f.sector + ".";
    case 1:
      return "ledger note: " + f.name + " runs " + f.sector + " works at yield " + y + ".";
    case 2:
      return f.name + " files a " + f.sector + " report; grade " + g + " stands.";
    case 3:
      return "audit of " + f.name + ": yield " + y + ", grade " + g + ", sector " + f.sector + ".";
    default:
      return "the " + f.sector + " desk lists " + f.name + " at yield " + y + ".";
  }
}

constexpr int kQaTemplates = 4;

train::SftPair qa_pair(const AssetFact& f, int tmpl) {
  const std::string y = std::to_string(f.yield);
  const std::string g(1, f.grade);
  switch (tmpl % kQaTemplates) {
    case 0:
      return {"what yield does " + f.name + " hold?", "asset " + f.name + " holds yield " + y + ".",
              "stage2-domain"};
    case 1:
      return {"which sector lists " + f.name + "?", "the " + f.sector + " desk lists " + f.name + ".",
              "stage2-domain"};
    case 2:
      return {"state the grade of " + f.name + ".", f.name + " stands at grade " + g + ".",
              "stage2-domain"};
    default:
      return {"report on " + f.name + ".",
              "asset " + f.name + ": yield " + y + ", grade " + g + ", " + f.sector + ".",
              "stage2-domain"};
  }
}

train::SftPair general_pair(Rng& rng) {
  switch (rng.below(5)) {
    case 0: {
      const auto& n = kAssetNames[rng.below(kAssetNames.size())];
      return {"greet the clerk " + n + ".", "hello " + n + ", welcome in.", "stage1-weak"};
    }
    case 1: {
      const int a = 1 + static_cast<int>(rng.below(5));
      const int b = a + 1 + static_cast<int>(rng.below(4));
      std::string run;
      for (int i = a; i <= b; ++i) run += std::to_string(i) + (i < b ? " " : "");
      return {"count from " + std::to_string(a) + " to " + std::to_string(b) + ".", run + ".",
              "stage1-weak"};
    }
    case 2: {
      const auto& w = kWords[rng.below(kWords.size())];
      std::string spelled;
      for (size_t i = 0; i < w.size(); ++i) spelled += std::string(1, w[i]) + (i + 1 < w.size() ? " " : "");
      return {"spell the word " + w + ".", spelled + ".", "stage1-weak"};
    }
    case 3: {
      const auto& w = kWords[rng.below(kWords.size())];
      return {"echo twice: " + w + ".", w + " " + w + ".", "stage1-weak"};
    }
    default: {
      const auto& o = kObjects[rng.below(kObjects.size())];
      const auto& c = kColors[rng.below(kColors.size())];
      return {"name a color for the " + o + ".", "the " + o + " is " + c + ".", "stage1-weak"};
    }
  }
}

}  // namespace

DatasetBundle make_datasets(const DatagenConfig& cfg) {
  DatasetBundle bundle;
  Rng rng(cfg.seed);

  for (const auto& name : kAssetNames) {
    AssetFact f;
    f.name = name;
    f.yield = 1 + static_cast<int>(rng.below(9));
    f.grade = static_cast<char>('a' + rng.below(5));
    f.sector = kSectors[rng.below(kSectors.size())];
    bundle.facts.push_back(std::move(f));
  }

  for (int i = 0; i < cfg.corpus_lines; ++i) {
    const auto& f = bundle.facts[rng.below(bundle.facts.size())];
    bundle.domain_corpus.push_back(corpus_line(f, static_cast<int>(rng.below(5))));
  }

  for (int i = 0; i < cfg.stage1_pairs; ++i) bundle.stage1.push_back(general_pair(rng));

  // Hold out a fixed set of (asset, template) combos for evaluation; train
  // pairs never collide with them.
  std::vector<std::pair<size_t, int>> combos;
  for (size_t a = 0; a < bundle.facts.size(); ++a) {
    for (int t = 0; t < kQaTemplates; ++t) combos.emplace_back(a, t);
  }
  rng.shuffle(combos);
  const size_t n_eval = std::min<size_t>(static_cast<size_t>(cfg.eval_pairs), combos.size() / 4);
  for (size_t i = 0; i < n_eval; ++i) {
    bundle.stage2_eval.push_back(qa_pair(bundle.facts[combos[i].first], combos[i].second));
  }
  for (int i = 0; i < cfg.stage2_pairs; ++i) {
    const auto& [a, t] = combos[n_eval + rng.below(combos.size() - n_eval)];
    bundle.stage2_train.push_back(qa_pair(bundle.facts[a], t));
  }

  std::string all_text;
  for (const auto& l : bundle.domain_corpus) all_text += l;
  for (const auto* set : {&bundle.stage1, &bundle.stage2_train, &bundle.stage2_eval}) {
    for (const auto& p : *set) all_text += p.prompt + p.response;
  }
  bundle.vocab = lm::Vocab::build(all_text);
  return bundle;
}

void write_datasets(const DatasetBundle& bundle, const std::string& dir) {
  std::filesystem::create_directories(dir);
  const std::filesystem::path base(dir);
  train::write_lines((base / "corpus.txt").string(), bundle.domain_corpus);
  train::write_sft_pairs((base / "stage1.jsonl").string(), bundle.stage1);
  train::write_sft_pairs((base / "stage2_train.jsonl").string(), bundle.stage2_train);
  train::write_sft_pairs((base / "stage2_eval.jsonl").string(), bundle.stage2_eval);
}

}  // namespace speclab::data
