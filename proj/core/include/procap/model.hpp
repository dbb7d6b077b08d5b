#pragma once

#include <cstdint>
#include <vector>

#include "procap/autograd.hpp"
#include "procap/config.hpp"

namespace procap {

// Rows of the stage-1 encoder sequence: [align | text (n_T) | csy | visual].
struct EncoderLayout {
  int text_len = 0;
  int visual_len = 0;

  int align_row() const { return 0; }
  int text_begin() const { return 1; }
  int csy_row() const { return 1 + text_len; }
  int visual_begin() const { return 2 + text_len; }
  int total() const { return 2 + text_len + visual_len; }
};

// Procedure encoder, stage-1 heads, procedure queries and caption decoder.
// Parameter names are prefixed "enc.", "head.", "queries" and "dec.".
template <typename T>
class ProcapModel {
 public:
  ProcapModel(const ModelConfig& cfg, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  ag::ParameterStore<T>& params() { return params_; }
  const ag::ParameterStore<T>& params() const { return params_; }

  // (Re)creates k * n_I query rows, each a copy of the current mask embedding.
  void init_queries(int k);
  int keyframes() const { return keyframes_; }

  // Patch embeddings of consecutive frames (each n_I x d) plus learned patch-position and
  // frame-index embeddings. Flagged rows are replaced by the mask embedding first.
  ag::Var visual_input(ag::Tape<T>& tape, const std::vector<Mat<T>>& frames,
                       const std::vector<std::uint8_t>* mask = nullptr);
  ag::Var text_input(ag::Tape<T>& tape, const std::vector<int>& ids);
  ag::Var stage1_input(ag::Tape<T>& tape, const std::vector<int>& text_ids,
                       const std::vector<Mat<T>>& frames, const std::vector<std::uint8_t>* mask,
                       EncoderLayout* layout = nullptr);
  // [before | queries | after]; with k = 0 just the pair.
  ag::Var query_input(ag::Tape<T>& tape, const Mat<T>& before, const Mat<T>& after);

  // Pre-norm transformer stack; zero layers return the input untouched.
  ag::Var encode(ag::Tape<T>& tape, ag::Var input);

  ag::Var msm_logits(ag::Tape<T>& tape, ag::Var visual_states);
  ag::Var align_logit(ag::Tape<T>& tape, ag::Var state_row);
  ag::Var csy_logit(ag::Tape<T>& tape, ag::Var state_row);

  ag::Var decoder_memory(ag::Tape<T>& tape, ag::Var encoded);
  // Next-token logits for every prefix position (prefix.size() x vocab).
  ag::Var decoder_logits(ag::Tape<T>& tape, ag::Var memory, const std::vector<int>& prefix);

 private:
  void add_linear(const std::string& name, int in, int out, T stddev, bool zero = false);
  void add_norm(const std::string& name, int d);
  ag::Var apply_linear(ag::Tape<T>& tape, const std::string& name, ag::Var x);
  ag::Var apply_norm(ag::Tape<T>& tape, const std::string& name, ag::Var x);
  ag::Var self_block(ag::Tape<T>& tape, const std::string& p, ag::Var x, int heads, bool causal);
  ag::Var cross_block(ag::Tape<T>& tape, const std::string& p, ag::Var x, ag::Var memory, int heads);
  ag::Var ffn_block(ag::Tape<T>& tape, const std::string& p, ag::Var x);

  ModelConfig cfg_;
  std::uint64_t seed_;
  int keyframes_ = 0;
  ag::ParameterStore<T> params_;
};

extern template class ProcapModel<float>;
extern template class ProcapModel<double>;

}  // namespace procap
