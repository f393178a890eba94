// Copyright 2026 the speclab authors
// SPDX-License-Identifier: Apache-2.0
#include "speclab/training.hpp"

#include "speclab/graph.hpp"

#include <json.hpp>

#include <cmath>
#include <fstream>
#include <numeric>

namespace speclab::train {

using num::Graph;

void TrainConfig::validate() const {
  if (batch_size < 1) throw std::invalid_argument("TrainConfig: batch_size must be >= 1");
  if (epochs < 0) throw std::invalid_argument("TrainConfig: epochs must be >= 0");
  if (pack_window < 2) throw std::invalid_argument("TrainConfig: pack_window must be >= 2");
}

uint64_t dataset_checksum(const std::vector<SftPair>& pairs) {
  uint64_t sum = 0;
  for (const auto& p : pairs) {
    uint64_t h = fnv1a(p.prompt);
    h = fnv1a(std::string("\x1f"), h);
    h = fnv1a(p.response, h);
    h = fnv1a(std::string("\x1f"), h);
    h = fnv1a(p.stage, h);
    sum += h;  // addition commutes: order independent
  }
  return sum;
}

// ============================================================================
// Dataset IO
// ============================================================================

std::vector<SftPair> read_sft_pairs(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("read_sft_pairs: cannot open " + path);
  std::vector<SftPair> out;
  std::string line;
  size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.contains("prompt") || !j.contains("response")) {
      throw std::runtime_error("read_sft_pairs: bad record at " + path + ":" +
                               std::to_string(lineno));
    }
    out.push_back({j["prompt"].get<std::string>(), j["response"].get<std::string>(),
                   j.value("stage", std::string{})});
  }
  return out;
}

void write_sft_pairs(const std::string& path, const std::vector<SftPair>& pairs) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("write_sft_pairs: cannot open " + path);
  for (const auto& p : pairs) {
    nlohmann::json j = {{"prompt", p.prompt}, {"response", p.response}, {"stage", p.stage}};
    os << j.dump() << "\n";
  }
}

std::vector<std::string> read_lines(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("read_lines: cannot open " + path);
  std::vector<std::string> out;
  std::string line;
  while (std::getline(is, line)) {
    if (!line.empty()) out.push_back(line);
  }
  return out;
}

void write_lines(const std::string& path, const std::vector<std::string>& lines) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("write_lines: cannot open " + path);
  for (const auto& l : lines) os << l << "\n";
}

// ============================================================================
// Packing
// ============================================================================

int PackedRow::active_targets() const {
  int n = 0;
  for (uint8_t m : loss_mask) n += (m != 0);
  return n;
}

std::vector<PackedRow> pack_sequences(const std::vector<PackDoc>& docs, int window) {
  if (window < 2) throw std::invalid_argument("pack_sequences: window must be >= 2");
  struct OpenRow {
    TokenSeq ids;
    std::vector<uint8_t> flags;   // per-token target flags
    std::vector<int> doc_of;      // document index per token
  };
  std::vector<OpenRow> rows;
  for (size_t d = 0; d < docs.size(); ++d) {
    const PackDoc& doc = docs[d];
    if (doc.ids.empty()) continue;
    if (doc.ids.size() != doc.target_flags.size()) {
      throw std::invalid_argument("pack_sequences: ids/flags length mismatch");
    }
    if (static_cast<int>(doc.ids.size()) > window) {
      throw std::invalid_argument("pack_sequences: document longer than pack window");
    }
    OpenRow* slot = nullptr;
    for (auto& r : rows) {
      if (r.ids.size() + doc.ids.size() <= static_cast<size_t>(window)) {
        slot = &r;
        break;  // first fit
      }
    }
    if (!slot) {
      rows.emplace_back();
      slot = &rows.back();
    }
    slot->ids.insert(slot->ids.end(), doc.ids.begin(), doc.ids.end());
    slot->flags.insert(slot->flags.end(), doc.target_flags.begin(), doc.target_flags.end());
    slot->doc_of.insert(slot->doc_of.end(), doc.ids.size(), static_cast<int>(d));
  }

  std::vector<PackedRow> out;
  out.reserve(rows.size());
  for (auto& r : rows) {
    PackedRow row;
    row.ids = std::move(r.ids);
    const size_t used = row.ids.size();
    row.ids.resize(static_cast<size_t>(window), kPadId);
    row.loss_mask.assign(static_cast<size_t>(window), 0);
    for (size_t t = 0; t + 1 < used; ++t) {
      // Loss at t predicts ids[t+1]; active only within one document and only
      // where the next token is flagged as a target.
      if (r.doc_of[t] == r.doc_of[t + 1] && r.flags[t + 1]) row.loss_mask[t] = 1;
    }
    out.push_back(std::move(row));
  }
  return out;
}

PackDoc make_pretrain_doc(const std::string& line, const Vocab& vocab) {
  PackDoc doc;
  doc.ids.push_back(kBosId);
  for (TokenId t : vocab.encode(line)) doc.ids.push_back(t);
  doc.ids.push_back(kEosId);
  doc.target_flags.assign(doc.ids.size(), 1);
  doc.target_flags[0] = 0;  // BOS is never a prediction target
  return doc;
}

PackDoc make_sft_doc(const SftPair& pair, const Vocab& vocab, MaskPolicy policy) {
  PackDoc doc;
  doc.ids.push_back(kBosId);
  doc.target_flags.push_back(0);
  for (TokenId t : vocab.encode(pair.prompt)) {
    doc.ids.push_back(t);
    doc.target_flags.push_back(policy == MaskPolicy::kAllTokens ? 1 : 0);
  }
  for (TokenId t : vocab.encode(pair.response)) {
    doc.ids.push_back(t);
    doc.target_flags.push_back(1);
  }
  doc.ids.push_back(kEosId);
  doc.target_flags.push_back(1);  // learning to stop is part of the response
  return doc;
}

// ============================================================================
// Teacher logit store
// ============================================================================

TeacherLogitStore::TeacherLogitStore(int vocab_size, int top_k)
    : vocab_size_(vocab_size), top_k_(std::min(top_k, vocab_size)) {
  if (vocab_size < 2) throw std::invalid_argument("TeacherLogitStore: vocab_size must be >= 2");
  if (top_k_ < 1) throw std::invalid_argument("TeacherLogitStore: top_k must be >= 1");
}

uint64_t row_content_hash(const TokenSeq& ids) {
  return fnv1a(ids.data(), ids.size() * sizeof(TokenId));
}

void TeacherLogitStore::add_record(uint64_t content_hash, const Mat& logits) {
  if (logits.cols() != vocab_size_) {
    throw std::invalid_argument("TeacherLogitStore: wrong vocabulary width");
  }
  hashes_.push_back(content_hash);
  // Canonicalize to log-probabilities so reconstruction is shift-free.
  Mat logp = num::log_softmax_rows(logits, 1.0);
  if (top_k_ >= vocab_size_) {
    full_.push_back(std::move(logp));
    return;
  }
  std::vector<TopKRow> rows;
  rows.reserve(static_cast<size_t>(logp.rows()));
  for (Eigen::Index r = 0; r < logp.rows(); ++r) {
    std::vector<int> order(static_cast<size_t>(vocab_size_));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](int a, int b) { return logp(r, a) > logp(r, b); });
    TopKRow row;
    double kept = 0.0;
    for (int k = 0; k < top_k_; ++k) {
      row.ids.push_back(static_cast<TokenId>(order[static_cast<size_t>(k)]));
      row.logp.push_back(logp(r, order[static_cast<size_t>(k)]));
      kept += std::exp(logp(r, order[static_cast<size_t>(k)]));
    }
    const double rest = std::max(1.0 - kept, 0.0);
    row.rest_logp = std::log(std::max(rest / (vocab_size_ - top_k_), 1e-300));
    rows.push_back(std::move(row));
  }
  sparse_.push_back(std::move(rows));
}

Mat TeacherLogitStore::logits(size_t record) const {
  if (record >= hashes_.size()) {
    throw std::runtime_error("TeacherLogitStore: missing record " + std::to_string(record));
  }
  if (top_k_ >= vocab_size_) return full_[record];
  const auto& rows = sparse_[record];
  Mat out(static_cast<Eigen::Index>(rows.size()), vocab_size_);
  for (size_t r = 0; r < rows.size(); ++r) {
    out.row(static_cast<Eigen::Index>(r)).setConstant(rows[r].rest_logp);
    for (size_t k = 0; k < rows[r].ids.size(); ++k) {
      out(static_cast<Eigen::Index>(r), rows[r].ids[k]) = rows[r].logp[k];
    }
  }
  return out;
}

namespace {
constexpr char kStoreMagic[8] = {'S', 'P', 'L', 'A', 'B', 'T', 'L', '1'};

void put_u32(std::ostream& os, uint32_t v) { os.write(reinterpret_cast<const char*>(&v), 4); }
void put_u64(std::ostream& os, uint64_t v) { os.write(reinterpret_cast<const char*>(&v), 8); }
uint32_t get_u32(std::istream& is) {
  uint32_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 4);
  return v;
}
uint64_t get_u64(std::istream& is) {
  uint64_t v = 0;
  is.read(reinterpret_cast<char*>(&v), 8);
  return v;
}
}  // namespace

void TeacherLogitStore::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("TeacherLogitStore::save: cannot open " + path);
  os.write(kStoreMagic, 8);
  put_u32(os, 1);
  put_u32(os, static_cast<uint32_t>(vocab_size_));
  put_u32(os, static_cast<uint32_t>(top_k_));
  put_u64(os, hashes_.size());
  // Index section: per record the content hash and position count.
  for (size_t i = 0; i < hashes_.size(); ++i) {
    put_u64(os, hashes_[i]);
    const auto positions = top_k_ >= vocab_size_ ? static_cast<uint64_t>(full_[i].rows())
                                                 : static_cast<uint64_t>(sparse_[i].size());
    put_u64(os, positions);
  }
  // Data section.
  for (size_t i = 0; i < hashes_.size(); ++i) {
    if (top_k_ >= vocab_size_) {
      const Mat& m = full_[i];
      os.write(reinterpret_cast<const char*>(m.data()),
               static_cast<std::streamsize>(m.size() * sizeof(double)));
    } else {
      for (const auto& row : sparse_[i]) {
        os.write(reinterpret_cast<const char*>(row.ids.data()),
                 static_cast<std::streamsize>(row.ids.size() * sizeof(TokenId)));
        os.write(reinterpret_cast<const char*>(row.logp.data()),
                 static_cast<std::streamsize>(row.logp.size() * sizeof(double)));
        os.write(reinterpret_cast<const char*>(&row.rest_logp), sizeof(double));
      }
    }
  }
  if (!os) throw std::runtime_error("TeacherLogitStore::save: write failed");
}

TeacherLogitStore TeacherLogitStore::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("TeacherLogitStore::load: cannot open " + path);
  char magic[8];
  is.read(magic, 8);
  if (!is || std::string(magic, 8) != std::string(kStoreMagic, 8)) {
    throw std::runtime_error("TeacherLogitStore::load: bad magic in " + path);
  }
  if (get_u32(is) != 1) throw std::runtime_error("TeacherLogitStore::load: unsupported version");
  const int vocab = static_cast<int>(get_u32(is));
  const int top_k = static_cast<int>(get_u32(is));
  const uint64_t count = get_u64(is);

  TeacherLogitStore store(vocab, top_k);
  std::vector<uint64_t> positions(count);
  store.hashes_.resize(count);
  for (uint64_t i = 0; i < count; ++i) {
    store.hashes_[i] = get_u64(is);
    positions[i] = get_u64(is);
  }
  for (uint64_t i = 0; i < count; ++i) {
    if (top_k >= vocab) {
      Mat m(static_cast<Eigen::Index>(positions[i]), vocab);
      is.read(reinterpret_cast<char*>(m.data()),
              static_cast<std::streamsize>(m.size() * sizeof(double)));
      store.full_.push_back(std::move(m));
    } else {
      std::vector<TopKRow> rows(positions[i]);
      for (auto& row : rows) {
        row.ids.resize(static_cast<size_t>(top_k));
        row.logp.resize(static_cast<size_t>(top_k));
        is.read(reinterpret_cast<char*>(row.ids.data()),
                static_cast<std::streamsize>(row.ids.size() * sizeof(TokenId)));
        is.read(reinterpret_cast<char*>(row.logp.data()),
                static_cast<std::streamsize>(row.logp.size() * sizeof(double)));
        is.read(reinterpret_cast<char*>(&row.rest_logp), sizeof(double));
      }
      store.sparse_.push_back(std::move(rows));
    }
  }
  if (!is) throw std::runtime_error("TeacherLogitStore::load: truncated file " + path);
  return store;
}

TeacherLogitStore export_teacher_logits(const lm::LanguageModel& teacher,
                                        const std::vector<PackedRow>& rows, int top_k) {
  TeacherLogitStore store(teacher.vocab_size(), top_k);
  for (const auto& row : rows) {
    store.add_record(row_content_hash(row.ids), lm::lm_logits(teacher, row.ids));
  }
  return store;
}

// ============================================================================
// Shared training loop
// ============================================================================

namespace {

// One optimizer run over packed rows. When `store` is null (or alpha == 0)
// each step is a pure supervised step; the tape is identical in both cases,
// which is what makes distill(alpha=0) reproduce sft() bit for bit.
TrainLog train_rows(lm::Transformer& model, const std::vector<PackedRow>& rows_in,
                    const TeacherLogitStore* store, double alpha, double tau, bool tau_squared,
                    const TrainConfig& cfg) {
  cfg.validate();
  if (alpha < 0.0 || alpha > 1.0) throw std::invalid_argument("train: alpha must be in [0,1]");

  // Rows without an active target cannot contribute a loss.
  std::vector<size_t> usable;
  for (size_t i = 0; i < rows_in.size(); ++i) {
    if (rows_in[i].active_targets() > 0) usable.push_back(i);
  }
  if (usable.empty()) throw std::invalid_argument("train: no usable training rows");

  if (store) {
    if (store->record_count() != rows_in.size()) {
      throw std::runtime_error("distill: teacher store has " +
                               std::to_string(store->record_count()) + " records but the dataset packs to " +
                               std::to_string(rows_in.size()) + " rows");
    }
    for (size_t i = 0; i < rows_in.size(); ++i) {
      if (store->content_hash(i) != row_content_hash(rows_in[i].ids)) {
        throw std::runtime_error("distill: teacher store record " + std::to_string(i) +
                                 " does not match dataset record (content hash mismatch)");
      }
    }
  }

  const int steps_per_epoch =
      static_cast<int>((usable.size() + cfg.batch_size - 1) / cfg.batch_size);
  num::LrSchedule schedule = cfg.schedule;
  if (cfg.auto_total_steps) schedule.total_steps = std::max(1, cfg.epochs * steps_per_epoch);
  schedule.validate();

  num::Adam opt(model.parameters());
  Rng rng(cfg.seed);
  TrainLog log;
  int step = 0;

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<size_t> order = usable;
    rng.shuffle(order);
    for (size_t b = 0; b < order.size(); b += static_cast<size_t>(cfg.batch_size)) {
      const size_t batch_end = std::min(order.size(), b + static_cast<size_t>(cfg.batch_size));
      Graph g;
      std::vector<Graph::NodeId> totals;
      double kl_sum = 0.0, ce_sum = 0.0;
      for (size_t bi = b; bi < batch_end; ++bi) {
        const PackedRow& row = rows_in[order[bi]];
        // Teacher-forced targets: position t predicts ids[t+1].
        TokenSeq targets(row.ids.begin() + 1, row.ids.end());
        targets.push_back(kPadId);
        Graph::NodeId logits = model.forward_logits(g, row.ids);
        if (store && alpha > 0.0) {
          auto parts = num::mixed_distill_loss(g, store->logits(order[bi]), logits, targets,
                                               row.loss_mask, alpha, tau, tau_squared);
          totals.push_back(parts.total);
          kl_sum += parts.kl;
          ce_sum += parts.ce;
        } else {
          Graph::NodeId ce = g.cross_entropy(logits, targets, row.loss_mask);
          totals.push_back(ce);
          ce_sum += g.scalar(ce);
          if (store) kl_sum += num::kl_loss_value(store->logits(order[bi]), g.value(logits), tau,
                                                  row.loss_mask);
        }
      }
      const double inv = 1.0 / static_cast<double>(totals.size());
      Graph::NodeId loss = totals.size() == 1
                               ? totals[0]
                               : g.weighted_sum(totals, std::vector<double>(totals.size(), inv));
      const double lr = num::lr_at(schedule, std::min(step, schedule.total_steps));
      opt.zero_grad();
      g.backward(loss);
      opt.step(lr);
      ++step;

      StepRecord rec;
      rec.step = step;
      rec.lr = lr;
      rec.loss = g.scalar(loss);
      rec.kl = kl_sum * inv;
      rec.ce = ce_sum * inv;
      log.steps.push_back(rec);
    }
  }
  return log;
}

}  // namespace

TrainLog pretrain(lm::Transformer& model, const std::vector<std::string>& corpus,
                  const Vocab& vocab, const TrainConfig& cfg) {
  if (corpus.empty()) throw std::invalid_argument("pretrain: empty corpus");
  std::vector<PackDoc> docs;
  docs.reserve(corpus.size());
  for (const auto& line : corpus) docs.push_back(make_pretrain_doc(line, vocab));
  return train_rows(model, pack_sequences(docs, cfg.pack_window), nullptr, 0.0, 1.0, false, cfg);
}

TrainLog sft(lm::Transformer& model, const std::vector<SftPair>& pairs, const Vocab& vocab,
             const TrainConfig& cfg) {
  if (pairs.empty()) throw std::invalid_argument("sft: empty dataset");
  std::vector<PackDoc> docs;
  docs.reserve(pairs.size());
  for (const auto& p : pairs) docs.push_back(make_sft_doc(p, vocab, cfg.mask_policy));
  return train_rows(model, pack_sequences(docs, cfg.pack_window), nullptr, 0.0, 1.0, false, cfg);
}

TrainLog distill(lm::Transformer& student, const TeacherLogitStore& store,
                 const std::vector<SftPair>& pairs, const Vocab& vocab, const DistillConfig& cfg) {
  if (pairs.empty()) throw std::invalid_argument("distill: empty dataset");
  if (cfg.tau <= 0.0) throw std::invalid_argument("distill: tau must be positive");
  std::vector<PackDoc> docs;
  docs.reserve(pairs.size());
  for (const auto& p : pairs) docs.push_back(make_sft_doc(p, vocab, cfg.train.mask_policy));
  return train_rows(student, pack_sequences(docs, cfg.train.pack_window), &store, cfg.alpha,
                    cfg.tau, cfg.tau_squared, cfg.train);
}

double eval_nll(const lm::Transformer& model, const std::vector<PackedRow>& rows) {
  double total = 0.0;
  int64_t active = 0;
  for (const auto& row : rows) {
    if (row.active_targets() == 0) continue;
    Mat logits = lm::lm_logits(model, row.ids);
    TokenSeq targets(row.ids.begin() + 1, row.ids.end());
    targets.push_back(kPadId);
    total += num::cross_entropy_value(logits, targets, row.loss_mask) * row.active_targets();
    active += row.active_targets();
  }
  if (active == 0) throw std::invalid_argument("eval_nll: no active targets");
  return total / static_cast<double>(active);
}

double eval_sft_nll(const lm::Transformer& model, const std::vector<SftPair>& pairs,
                    const Vocab& vocab, int pack_window) {
  std::vector<PackDoc> docs;
  for (const auto& p : pairs) docs.push_back(make_sft_doc(p, vocab, MaskPolicy::kResponseOnly));
  return eval_nll(model, pack_sequences(docs, pack_window));
}

double eval_token_kl(const lm::LanguageModel& teacher, const lm::Transformer& student,
                     const std::vector<TokenSeq>& contexts, double tau) {
  double total = 0.0;
  int64_t positions = 0;
  for (const auto& ctx : contexts) {
    if (ctx.empty()) continue;
    Mat t = lm::lm_logits(teacher, ctx);
    Mat s = lm::lm_logits(student, ctx);
    std::vector<uint8_t> mask(ctx.size(), 1);
    total += num::kl_loss_value(t, s, tau, mask) * static_cast<double>(ctx.size());
    positions += static_cast<int64_t>(ctx.size());
  }
  if (positions == 0) throw std::invalid_argument("eval_token_kl: empty context set");
  return total / static_cast<double>(positions);
}

void write_train_log(const std::string& path, const TrainLog& log) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw std::runtime_error("write_train_log: cannot open " + path);
  for (const auto& s : log.steps) {
    nlohmann::json j = {
        {"step", s.step}, {"lr", s.lr}, {"loss", s.loss}, {"kl", s.kl}, {"ce", s.ce}};
    os << j.dump() << "\n";
  }
}

// ============================================================================
// Curriculum
// ============================================================================

uint64_t model_checksum(lm::Transformer& model) {
  uint64_t h = 0xcbf29ce484222325ull;
  for (auto& [name, t] : model.named_parameters()) {
    h = fnv1a(name, h);
    h = fnv1a(t->value().data(), static_cast<size_t>(t->size()) * sizeof(double), h);
  }
  return h;
}

std::vector<StageSnapshot> run_curriculum(lm::Transformer& model, const CurriculumSpec& spec,
                                          const Vocab& vocab,
                                          const std::vector<SftPair>& eval_pairs) {
  if (spec.stages.empty()) throw std::invalid_argument("run_curriculum: no stages");
  for (const auto& stage : spec.stages) {
    if (stage.pairs.empty()) {
      throw std::invalid_argument("run_curriculum: empty stage '" + stage.name + "'");
    }
  }

  std::vector<StageSnapshot> snapshots;
  auto snapshot = [&](const std::string& name, int steps) {
    StageSnapshot s;
    s.name = name;
    s.steps = steps;
    if (!eval_pairs.empty()) {
      const int window = spec.stages.back().config.pack_window;
      s.eval_loss = eval_sft_nll(model, eval_pairs, vocab, window);
    }
    s.params_checksum = model_checksum(model);
    snapshots.push_back(std::move(s));
  };

  if (spec.mode == CurriculumMode::kStaged) {
    for (const auto& stage : spec.stages) {
      TrainLog log = sft(model, stage.pairs, vocab, stage.config);
      snapshot(stage.name, static_cast<int>(log.steps.size()));
    }
  } else {
    std::vector<SftPair> all;
    for (const auto& stage : spec.stages) {
      all.insert(all.end(), stage.pairs.begin(), stage.pairs.end());
    }
    // The union is shuffled by the training loop itself (seeded).
    TrainLog log = sft(model, all, vocab, spec.joint_config);
    snapshot("joint", static_cast<int>(log.steps.size()));
  }
  return snapshots;
}

}  // namespace speclab::train
