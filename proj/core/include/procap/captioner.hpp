#pragma once

#include <vector>

#include "procap/autograd.hpp"
#include "procap/frame.hpp"
#include "procap/model.hpp"
#include "procap/procedure.hpp"
#include "procap/vq.hpp"

namespace procap::captioner {

inline constexpr double kLengthPenalty = 0.7;

// Encoder states over [before | k n_I queries | after] for an embedded pair.
template <typename T>
ag::Var encode_pair(ag::Tape<T>& tape, ProcapModel<T>& model, const Mat<T>& before, const Mat<T>& after);

// Explicit path: real keyframe embeddings fill the query slots (k must match the model).
template <typename T>
ag::Var encode_procedure(ag::Tape<T>& tape, ProcapModel<T>& model, const std::vector<Mat<T>>& frames);

// Teacher-forced mean NLL of gold[1..] given gold[..n-1]; gold is BOS ... EOS.
template <typename T>
ag::Var caption_loss(ag::Tape<T>& tape, ProcapModel<T>& model, ag::Var encoded, const std::vector<int>& gold);

// Mean caption loss over a batch of (before, after, gold) triples.
template <typename T>
struct CaptionSample {
  Mat<T> before;
  Mat<T> after;
  std::vector<int> gold;
  std::vector<Mat<T>> procedure;  // explicit path only; empty for the implicit path
};

template <typename T>
ag::Var caption_batch_loss(ag::Tape<T>& tape, ProcapModel<T>& model, const std::vector<CaptionSample<T>>& batch);

struct Generated {
  std::vector<int> ids;            // without BOS / EOS
  std::vector<double> logprobs;    // one per emitted token, EOS included when reached
  bool finished = false;           // EOS emitted before the length limit
  std::size_t tokens() const { return logprobs.size(); }
};

enum class DecodeMode { greedy, beam };

struct DecodeOptions {
  DecodeMode mode = DecodeMode::greedy;
  int beam_size = 3;
  int max_len = 0;  // generated tokens including EOS; 0 = max_text_len - 1
};

// Decodes from precomputed encoder states (no gradient).
Generated decode(ProcapModel<float>& model, const MatF& encoded, int bos, int eos, const DecodeOptions& opts);

Generated caption_pair(ProcapModel<float>& model, const vq::PatchEmbedder& embedder, const FramePair& pair,
                       int bos, int eos, const DecodeOptions& opts = {});
Generated caption_explicit(ProcapModel<float>& model, const vq::PatchEmbedder& embedder,
                           const KeyframeProcedure& procedure, int bos, int eos,
                           const DecodeOptions& opts = {});

}  // namespace procap::captioner
