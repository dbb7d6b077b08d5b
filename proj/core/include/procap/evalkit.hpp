#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "procap/captioner.hpp"
#include "procap/model.hpp"
#include "procap/pipeline.hpp"
#include "procap/synthdata.hpp"
#include "procap/vq.hpp"

namespace procap::eval {

using Sentence = std::vector<std::string>;

// Corpus-level BLEU-4 with uniform weights and the corpus brevity penalty. Zero n-gram
// precisions are floored at kBleuEpsilon, so a corpus with no matches scores ~0.
inline constexpr double kBleuEpsilon = 1e-9;
double bleu4(const std::vector<Sentence>& candidates, const std::vector<std::vector<Sentence>>& references);

struct CiderScore {
  double value = 0;
  bool degenerate = false;  // fewer than two documents: every idf is zero
};
// Plain TF-IDF cosine averaged over n = 1..4 and over references, times 10.
CiderScore cider(const std::vector<Sentence>& candidates, const std::vector<std::vector<Sentence>>& references);

struct SlotTally {
  int correct = 0;
  int total = 0;
  double rate() const { return total == 0 ? 0.0 : static_cast<double>(correct) / total; }
};

struct SlotAccuracy {
  std::map<synth::ChangeType, SlotTally> per_type;
  SlotTally overall;
};
// Unparseable candidates count as wrong.
SlotAccuracy slot_accuracy(const std::vector<Sentence>& candidates, const std::vector<synth::ChangeSlots>& gold,
                           const synth::Grammar& grammar);

double exact_match(const std::vector<Sentence>& candidates, const std::vector<Sentence>& gold);

struct MetricReport {
  double bleu4 = 0;
  double cider = 0;
  bool cider_degenerate = false;
  double exact_match = 0;
  SlotAccuracy slots;
  std::size_t corpus_size = 0;
  std::string config_hash;

  std::string json() const;
};

MetricReport evaluate(const std::vector<Sentence>& candidates, const std::vector<synth::Record>& gold,
                      const std::string& config_hash);

// ---- cost model ----

struct CostInputs {
  int K = 3;  // frames in the encoded procedure, k + 2
  int n_I = 64;
  int d = 128;
  int l_e = 4;
  int l_d = 2;
  int d_decoder = 128;
  int n_T = 16;

  std::int64_t n_P() const { return static_cast<std::int64_t>(K) * n_I; }
};

// Multiply-accumulate counts of the encoder attention blocks, summed over layers.
struct OpCounts {
  std::int64_t projections = 0;  // query, key, value: 3 n_P d^2
  std::int64_t output = 0;       // n_P d^2
  std::int64_t scores_mix = 0;   // 2 n_P^2 d
  std::int64_t decoder_cross = 0;  // n_P n_T d_decoder per decoder layer, kept apart

  std::int64_t encoder_total() const { return projections + output + scores_mix; }
};

OpCounts attention_op_count(const CostInputs& in);

// Median wall time of one encoder forward over K frames of random embeddings.
double time_encoder_forward(ProcapModel<float>& model, int K, int repeats = 5);

enum class CaptionPath { implicit_queries, explicit_frames };

struct TpsResult {
  std::size_t tokens = 0;
  double seconds = 0;
  double tps() const { return seconds > 0 ? static_cast<double>(tokens) / seconds : 0.0; }
};

// Greedy decoding, batch size 1, warmup pairs excluded from timing. The explicit path times
// interpolation, keyframe sampling and encoding of the k + 2 real frames.
TpsResult measure_tps(ProcapModel<float>& model, const vq::PatchEmbedder& embedder,
                      const std::vector<FramePair>& pairs, CaptionPath path,
                      const pipeline::ProcedureOptions& procedure, int warmup = 3);

// One greedy caption through either path; returns emitted tokens.
std::size_t caption_once(ProcapModel<float>& model, const vq::PatchEmbedder& embedder, const FramePair& pair,
                         CaptionPath path, const pipeline::ProcedureOptions& procedure);

struct TpsArm {
  ProcapModel<float>* model = nullptr;
  CaptionPath path = CaptionPath::implicit_queries;
};

// Interleaves the arms pair by pair and keeps each arm's fastest of `repeats` runs per pair,
// so slow drift and scheduler hiccups hit every arm alike.
std::vector<TpsResult> measure_tps_paired(const std::vector<TpsArm>& arms, const vq::PatchEmbedder& embedder,
                                          const std::vector<FramePair>& pairs,
                                          const pipeline::ProcedureOptions& procedure, int repeats = 3,
                                          int warmup = 3);

struct CostProfile {
  CostInputs inputs;
  OpCounts counts;
  double encoder_seconds = 0;
  double tps = 0;

  static std::string csv_header();
  std::string csv_row() const;
};

}  // namespace procap::eval
