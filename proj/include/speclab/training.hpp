// Copyright 2026 the speclab authors
// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "speclab/optim.hpp"
#include "speclab/transformer.hpp"
#include "speclab/vocab.hpp"

namespace speclab::train {

using lm::Vocab;

// ============================================================================
// Configuration
// ============================================================================

enum class MaskPolicy { kAllTokens, kResponseOnly };

struct TrainConfig {
  int batch_size = 8;
  int epochs = 1;  // single epoch by default to avoid over-fitting
  num::LrSchedule schedule;
  int pack_window = 128;
  uint64_t seed = 0;
  MaskPolicy mask_policy = MaskPolicy::kResponseOnly;
  // When set, schedule.total_steps is derived from the dataset size instead
  // of being taken from the schedule literal.
  bool auto_total_steps = true;

  void validate() const;
};

struct SftPair {
  std::string prompt;
  std::string response;
  std::string stage;  // "stage1-weak" | "stage2-domain"
};

// Order-independent digest of a pair multiset; staged and joint curriculum
// arms must consume identical data.
uint64_t dataset_checksum(const std::vector<SftPair>& pairs);

// JSONL records with fields prompt/response/stage.
std::vector<SftPair> read_sft_pairs(const std::string& path);
void write_sft_pairs(const std::string& path, const std::vector<SftPair>& pairs);
std::vector<std::string> read_lines(const std::string& path);
void write_lines(const std::string& path, const std::vector<std::string>& lines);

// ============================================================================
// Sequence packing
// ============================================================================

// A tokenized document plus per-token supervision flags (flag[i] set when
// ids[i] may appear as a prediction target).
struct PackDoc {
  TokenSeq ids;
  std::vector<uint8_t> target_flags;
};

// One training row: ids padded to the pack window; loss_mask[t] set when the
// loss applies at position t (predicting ids[t+1]). Masks never cross a
// document boundary or reach padding.
struct PackedRow {
  TokenSeq ids;
  std::vector<uint8_t> loss_mask;
  int active_targets() const;
};

// Greedy first-fit packing of whole documents into rows of length `window`,
// EOS already included in each document's ids. Documents longer than the
// window are rejected.
std::vector<PackedRow> pack_sequences(const std::vector<PackDoc>& docs, int window);

// Document builders: BOS + text + EOS, with flags per mask policy.
PackDoc make_pretrain_doc(const std::string& line, const Vocab& vocab);
PackDoc make_sft_doc(const SftPair& pair, const Vocab& vocab, MaskPolicy policy);

// ============================================================================
// Teacher logit store
// ============================================================================

// Offline teacher distributions, one record per packed training row, aligned
// position-for-position with the student's teacher-forced logits. Rows are
// canonicalized to log-probabilities; in top-k mode only the k most likely
// tokens are kept exactly and the remaining mass is spread uniformly.
class TeacherLogitStore {
 public:
  TeacherLogitStore() = default;
  TeacherLogitStore(int vocab_size, int top_k);

  void add_record(uint64_t content_hash, const Mat& logits);

  size_t record_count() const { return hashes_.size(); }
  int vocab_size() const { return vocab_size_; }
  int top_k() const { return top_k_; }
  uint64_t content_hash(size_t record) const { return hashes_.at(record); }

  // Reconstructed log-probability rows for one record (positions x vocab).
  Mat logits(size_t record) const;

  // Binary file with an index section; see impl for the exact layout.
  void save(const std::string& path) const;
  static TeacherLogitStore load(const std::string& path);

 private:
  struct TopKRow {
    std::vector<TokenId> ids;
    std::vector<double> logp;
    double rest_logp = 0.0;  // log of the per-token mass outside the top-k
  };

  int vocab_size_ = 0;
  int top_k_ = 0;
  std::vector<uint64_t> hashes_;
  std::vector<Mat> full_;                      // full mode
  std::vector<std::vector<TopKRow>> sparse_;   // top-k mode
};

uint64_t row_content_hash(const TokenSeq& ids);

// One teacher forward per row; stores every position.
TeacherLogitStore export_teacher_logits(const lm::LanguageModel& teacher,
                                        const std::vector<PackedRow>& rows, int top_k);

// ============================================================================
// Training runs
// ============================================================================

struct StepRecord {
  int step = 0;
  double lr = 0.0;
  double loss = 0.0;
  double kl = 0.0;
  double ce = 0.0;
};

struct TrainLog {
  std::vector<StepRecord> steps;
  double final_loss() const { return steps.empty() ? 0.0 : steps.back().loss; }
};

void write_train_log(const std::string& path, const TrainLog& log);

struct DistillConfig {
  double alpha = 0.5;
  double tau = 2.0;
  bool tau_squared = false;  // classical tau^2 rescaling of the KL term
  TrainConfig train;
};

// Next-token training over the packed corpus (all-token masks).
TrainLog pretrain(lm::Transformer& model, const std::vector<std::string>& corpus,
                  const Vocab& vocab, const TrainConfig& cfg);

// Response-only supervised fine-tuning over packed pairs.
TrainLog sft(lm::Transformer& model, const std::vector<SftPair>& pairs, const Vocab& vocab,
             const TrainConfig& cfg);

// Mixed distillation against an offline teacher store aligned to the packed
// rows of `pairs`. With alpha = 0 the parameter trajectory is identical to
// sft() under the same config and seed.
TrainLog distill(lm::Transformer& student, const TeacherLogitStore& store,
                 const std::vector<SftPair>& pairs, const Vocab& vocab, const DistillConfig& cfg);

// Masked mean NLL over the packed dataset without updating the model.
double eval_nll(const lm::Transformer& model, const std::vector<PackedRow>& rows);
double eval_sft_nll(const lm::Transformer& model, const std::vector<SftPair>& pairs,
                    const Vocab& vocab, int pack_window);

// Mean per-position KL(teacher || student) at tau over plain (unpacked)
// contexts; the held-out alignment measure distillation must improve.
double eval_token_kl(const lm::LanguageModel& teacher, const lm::Transformer& student,
                     const std::vector<TokenSeq>& contexts, double tau);

// ============================================================================
// Curriculum
// ============================================================================

enum class CurriculumMode { kStaged, kJoint };

struct CurriculumStage {
  std::string name;
  std::vector<SftPair> pairs;
  TrainConfig config;
};

struct CurriculumSpec {
  std::vector<CurriculumStage> stages;
  CurriculumMode mode = CurriculumMode::kStaged;
  TrainConfig joint_config;  // used when mode == kJoint
};

struct StageSnapshot {
  std::string name;
  int steps = 0;
  double eval_loss = 0.0;      // response-only NLL on the eval pairs
  uint64_t params_checksum = 0;  // byte digest of all parameters after the stage
};

uint64_t model_checksum(lm::Transformer& model);

// Staged mode fine-tunes stage by stage with fresh optimizer state; joint
// mode shuffles the union of all stage pairs into one run. Snapshots record
// eval loss after each stage (staged) or after the single run (joint).
std::vector<StageSnapshot> run_curriculum(lm::Transformer& model, const CurriculumSpec& spec,
                                          const Vocab& vocab,
                                          const std::vector<SftPair>& eval_pairs);

}  // namespace speclab::train
