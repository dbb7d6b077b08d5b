#include "procap/model.hpp"

#include <cmath>
#include <random>

#include "procap/error.hpp"
#include "procap/util.hpp"

namespace procap {

using ag::Var;

namespace {

template <typename T>
Mat<T> normal_matrix(Rng& rng, int rows, int cols, T stddev) {
  std::normal_distribution<double> dist(0.0, static_cast<double>(stddev));
  Mat<T> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(dist(rng));
  return m;
}

std::string layer_name(const char* stack, int i) { return std::string(stack) + ".L" + std::to_string(i); }

}  // namespace

template <typename T>
ProcapModel<T>::ProcapModel(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg), seed_(seed) {
  cfg_.validate();
  if (cfg_.vocab_size < 5) throw ConfigError("model needs a vocabulary (vocab_size < 5)");
  Rng rng(derive_seed(seed, "model-init"));
  const int d = cfg_.d_model;
  const int n_i = cfg_.patches_per_frame();

  params_.add("enc.align", normal_matrix<T>(rng, 1, d, T(0.5)));
  params_.add("enc.csy", normal_matrix<T>(rng, 1, d, T(0.5)));
  params_.add("enc.mask", normal_matrix<T>(rng, 1, d, T(0.5)));
  params_.add("enc.tok", normal_matrix<T>(rng, cfg_.vocab_size, d, T(0.5)));
  params_.add("enc.text_pos", normal_matrix<T>(rng, cfg_.max_text_len, d, T(0.1)));
  params_.add("enc.vis_pos", normal_matrix<T>(rng, n_i, d, T(0.1)));
  params_.add("enc.frame", normal_matrix<T>(rng, cfg_.max_frames, d, T(0.1)));
  const T resid = T(1) / std::sqrt(T(2) * T(std::max(1, cfg_.enc_layers)));
  for (int l = 0; l < cfg_.enc_layers; ++l) {
    const auto p = layer_name("enc", l);
    add_norm(p + ".ln1", d);
    add_linear(p + ".q", d, d, T(1) / std::sqrt(T(d)));
    add_linear(p + ".k", d, d, T(1) / std::sqrt(T(d)));
    add_linear(p + ".v", d, d, T(1) / std::sqrt(T(d)));
    add_linear(p + ".o", d, d, resid / std::sqrt(T(d)));
    add_norm(p + ".ln2", d);
    add_linear(p + ".ff1", d, d * cfg_.ffn_mult, T(1) / std::sqrt(T(d)));
    add_linear(p + ".ff2", d * cfg_.ffn_mult, d, resid / std::sqrt(T(d * cfg_.ffn_mult)));
  }
  add_norm("enc.ln_f", d);

  add_linear("head.msm", d, cfg_.codebook_size, 0, true);
  add_linear("head.align", d, 1, 0, true);
  add_linear("head.csy", d, 1, 0, true);

  const int dd = cfg_.d_decoder;
  const T dres = T(1) / std::sqrt(T(3) * T(std::max(1, cfg_.dec_layers)));
  add_linear("dec.mem", d, dd, T(1) / std::sqrt(T(d)));
  params_.add("dec.tok", normal_matrix<T>(rng, cfg_.vocab_size, dd, T(0.5)));
  params_.add("dec.pos", normal_matrix<T>(rng, cfg_.max_text_len, dd, T(0.1)));
  for (int l = 0; l < cfg_.dec_layers; ++l) {
    const auto p = layer_name("dec", l);
    add_norm(p + ".ln1", dd);
    add_linear(p + ".q", dd, dd, T(1) / std::sqrt(T(dd)));
    add_linear(p + ".k", dd, dd, T(1) / std::sqrt(T(dd)));
    add_linear(p + ".v", dd, dd, T(1) / std::sqrt(T(dd)));
    add_linear(p + ".o", dd, dd, dres / std::sqrt(T(dd)));
    add_norm(p + ".ln2", dd);
    add_linear(p + ".xq", dd, dd, T(1) / std::sqrt(T(dd)));
    add_linear(p + ".xk", dd, dd, T(1) / std::sqrt(T(dd)));
    add_linear(p + ".xv", dd, dd, T(1) / std::sqrt(T(dd)));
    add_linear(p + ".xo", dd, dd, dres / std::sqrt(T(dd)));
    add_norm(p + ".ln3", dd);
    add_linear(p + ".ff1", dd, dd * cfg_.ffn_mult, T(1) / std::sqrt(T(dd)));
    add_linear(p + ".ff2", dd * cfg_.ffn_mult, dd, dres / std::sqrt(T(dd * cfg_.ffn_mult)));
  }
  add_norm("dec.ln_f", dd);
  add_linear("dec.out", dd, cfg_.vocab_size, 0, true);
}

// Each linear draws from its own named stream so adding layers never shifts other draws.
template <typename T>
void ProcapModel<T>::add_linear(const std::string& name, int in, int out, T stddev, bool zero) {
  Rng rng(derive_seed(seed_, name));
  params_.add(name + ".w", zero ? Mat<T>::Zero(in, out) : normal_matrix<T>(rng, in, out, stddev));
  params_.add(name + ".b", Mat<T>::Zero(1, out));
}

template <typename T>
void ProcapModel<T>::add_norm(const std::string& name, int d) {
  params_.add(name + ".g", Mat<T>::Ones(1, d));
  params_.add(name + ".b", Mat<T>::Zero(1, d));
}

template <typename T>
Var ProcapModel<T>::apply_linear(ag::Tape<T>& tape, const std::string& name, Var x) {
  return tape.linear(x, tape.param(params_.get(name + ".w")), tape.param(params_.get(name + ".b")));
}

template <typename T>
Var ProcapModel<T>::apply_norm(ag::Tape<T>& tape, const std::string& name, Var x) {
  return tape.layer_norm(x, tape.param(params_.get(name + ".g")), tape.param(params_.get(name + ".b")));
}

template <typename T>
void ProcapModel<T>::init_queries(int k) {
  if (k < 0) throw ConfigError("keyframes must be non-negative");
  if (k + 2 > cfg_.max_frames) throw ConfigError("keyframes + 2 exceeds max_frames");
  keyframes_ = k;
  if (k == 0) return;
  const int n_i = cfg_.patches_per_frame();
  Mat<T> q = params_.get("enc.mask").value.replicate(k * n_i, 1);
  if (params_.has("queries")) {
    auto& p = params_.get("queries");
    if (p.value.rows() != q.rows()) throw ConfigError("query count differs from existing queries");
    p.value = std::move(q);
    p.zero_grad();
  } else {
    params_.add("queries", std::move(q));
  }
}

template <typename T>
Var ProcapModel<T>::visual_input(ag::Tape<T>& tape, const std::vector<Mat<T>>& frames,
                                 const std::vector<std::uint8_t>* mask) {
  const int n_i = cfg_.patches_per_frame();
  const int d = cfg_.d_model;
  const int f = static_cast<int>(frames.size());
  if (f < 1 || f > cfg_.max_frames) throw ShapeMismatchError("visual_input: frame count out of range");
  Mat<T> stacked(f * n_i, d);
  std::vector<int> pos(static_cast<std::size_t>(f * n_i));
  std::vector<int> idx(static_cast<std::size_t>(f * n_i));
  for (int i = 0; i < f; ++i) {
    if (frames[static_cast<std::size_t>(i)].rows() != n_i || frames[static_cast<std::size_t>(i)].cols() != d) {
      throw ShapeMismatchError("visual_input: frame embedding must be n_I x d");
    }
    stacked.middleRows(i * n_i, n_i) = frames[static_cast<std::size_t>(i)];
    for (int j = 0; j < n_i; ++j) {
      pos[static_cast<std::size_t>(i * n_i + j)] = j;
      idx[static_cast<std::size_t>(i * n_i + j)] = i;
    }
  }
  Var x = tape.constant(std::move(stacked));
  if (mask != nullptr) x = tape.replace_rows(x, tape.param(params_.get("enc.mask")), *mask);
  x = tape.add(x, tape.gather_rows(tape.param(params_.get("enc.vis_pos")), pos));
  return tape.add(x, tape.gather_rows(tape.param(params_.get("enc.frame")), idx));
}

template <typename T>
Var ProcapModel<T>::text_input(ag::Tape<T>& tape, const std::vector<int>& ids) {
  if (ids.empty() || static_cast<int>(ids.size()) > cfg_.max_text_len) {
    throw ConfigError("caption of " + std::to_string(ids.size()) + " tokens exceeds max_text_len " +
                      std::to_string(cfg_.max_text_len));
  }
  std::vector<int> pos(ids.size());
  for (std::size_t i = 0; i < ids.size(); ++i) pos[i] = static_cast<int>(i);
  return tape.add(tape.gather_rows(tape.param(params_.get("enc.tok")), ids),
                  tape.gather_rows(tape.param(params_.get("enc.text_pos")), pos));
}

template <typename T>
Var ProcapModel<T>::stage1_input(ag::Tape<T>& tape, const std::vector<int>& text_ids,
                                 const std::vector<Mat<T>>& frames,
                                 const std::vector<std::uint8_t>* mask, EncoderLayout* layout) {
  Var text = text_input(tape, text_ids);
  Var vis = visual_input(tape, frames, mask);
  if (layout != nullptr) {
    layout->text_len = static_cast<int>(text_ids.size());
    layout->visual_len = static_cast<int>(tape.value(vis).rows());
  }
  return tape.concat_rows({tape.param(params_.get("enc.align")), text,
                           tape.param(params_.get("enc.csy")), vis});
}

template <typename T>
Var ProcapModel<T>::query_input(ag::Tape<T>& tape, const Mat<T>& before, const Mat<T>& after) {
  const int n_i = cfg_.patches_per_frame();
  const int d = cfg_.d_model;
  if (before.rows() != n_i || after.rows() != n_i || before.cols() != d || after.cols() != d) {
    throw ShapeMismatchError("query_input: pair embeddings must be n_I x d");
  }
  const int k = keyframes_;
  std::vector<Var> parts{tape.constant(before)};
  if (k > 0) parts.push_back(tape.param(params_.get("queries")));
  parts.push_back(tape.constant(after));
  Var x = tape.concat_rows(parts);
  const int rows = (k + 2) * n_i;
  std::vector<int> pos(static_cast<std::size_t>(rows)), idx(static_cast<std::size_t>(rows));
  for (int r = 0; r < rows; ++r) {
    pos[static_cast<std::size_t>(r)] = r % n_i;
    idx[static_cast<std::size_t>(r)] = r / n_i;
  }
  x = tape.add(x, tape.gather_rows(tape.param(params_.get("enc.vis_pos")), pos));
  return tape.add(x, tape.gather_rows(tape.param(params_.get("enc.frame")), idx));
}

template <typename T>
Var ProcapModel<T>::self_block(ag::Tape<T>& tape, const std::string& p, Var x, int heads, bool causal) {
  Var h = apply_norm(tape, p + ".ln1", x);
  tape.set_attention_scope(true);
  Var q = apply_linear(tape, p + ".q", h);
  Var k = apply_linear(tape, p + ".k", h);
  Var v = apply_linear(tape, p + ".v", h);
  Var a = tape.attention(q, k, v, heads, causal);
  Var o = apply_linear(tape, p + ".o", a);
  tape.set_attention_scope(false);
  return tape.add(x, o);
}

template <typename T>
Var ProcapModel<T>::cross_block(ag::Tape<T>& tape, const std::string& p, Var x, Var memory, int heads) {
  Var h = apply_norm(tape, p + ".ln2", x);
  Var q = apply_linear(tape, p + ".xq", h);
  Var k = apply_linear(tape, p + ".xk", memory);
  Var v = apply_linear(tape, p + ".xv", memory);
  Var a = tape.attention(q, k, v, heads, false);
  return tape.add(x, apply_linear(tape, p + ".xo", a));
}

template <typename T>
Var ProcapModel<T>::ffn_block(ag::Tape<T>& tape, const std::string& p, Var x) {
  const std::string ln = params_.has(p + ".ln3.g") ? p + ".ln3" : p + ".ln2";
  Var h = apply_norm(tape, ln, x);
  h = tape.gelu(apply_linear(tape, p + ".ff1", h));
  return tape.add(x, apply_linear(tape, p + ".ff2", h));
}

template <typename T>
Var ProcapModel<T>::encode(ag::Tape<T>& tape, Var input) {
  if (tape.value(input).cols() != cfg_.d_model) throw ShapeMismatchError("encode: width differs from d_model");
  if (cfg_.enc_layers == 0) return input;
  Var x = input;
  for (int l = 0; l < cfg_.enc_layers; ++l) {
    const auto p = layer_name("enc", l);
    x = self_block(tape, p, x, cfg_.n_heads, false);
    x = ffn_block(tape, p, x);
  }
  return apply_norm(tape, "enc.ln_f", x);
}

template <typename T>
Var ProcapModel<T>::msm_logits(ag::Tape<T>& tape, Var visual_states) {
  return apply_linear(tape, "head.msm", visual_states);
}

template <typename T>
Var ProcapModel<T>::align_logit(ag::Tape<T>& tape, Var state_row) {
  return apply_linear(tape, "head.align", state_row);
}

template <typename T>
Var ProcapModel<T>::csy_logit(ag::Tape<T>& tape, Var state_row) {
  return apply_linear(tape, "head.csy", state_row);
}

template <typename T>
Var ProcapModel<T>::decoder_memory(ag::Tape<T>& tape, Var encoded) {
  return apply_linear(tape, "dec.mem", encoded);
}

template <typename T>
Var ProcapModel<T>::decoder_logits(ag::Tape<T>& tape, Var memory, const std::vector<int>& prefix) {
  if (prefix.empty() || static_cast<int>(prefix.size()) > cfg_.max_text_len) {
    throw ConfigError("decoder prefix of " + std::to_string(prefix.size()) +
                      " tokens exceeds max_text_len " + std::to_string(cfg_.max_text_len));
  }
  std::vector<int> pos(prefix.size());
  for (std::size_t i = 0; i < prefix.size(); ++i) pos[i] = static_cast<int>(i);
  Var x = tape.add(tape.gather_rows(tape.param(params_.get("dec.tok")), prefix),
                   tape.gather_rows(tape.param(params_.get("dec.pos")), pos));
  for (int l = 0; l < cfg_.dec_layers; ++l) {
    const auto p = layer_name("dec", l);
    // Decoder self-attention is not part of the encoder cost, keep it out of the tally.
    Var h = apply_norm(tape, p + ".ln1", x);
    Var q = apply_linear(tape, p + ".q", h);
    Var k = apply_linear(tape, p + ".k", h);
    Var v = apply_linear(tape, p + ".v", h);
    x = tape.add(x, apply_linear(tape, p + ".o", tape.attention(q, k, v, cfg_.dec_heads, true)));
    x = cross_block(tape, p, x, memory, cfg_.dec_heads);
    x = ffn_block(tape, p, x);
  }
  x = apply_norm(tape, "dec.ln_f", x);
  return apply_linear(tape, "dec.out", x);
}

template class ProcapModel<float>;
template class ProcapModel<double>;

}  // namespace procap
