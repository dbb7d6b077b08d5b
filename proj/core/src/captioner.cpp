#include "procap/captioner.hpp"

#include <algorithm>
#include <cmath>

#include "procap/error.hpp"

namespace procap::captioner {

using ag::Var;

template <typename T>
Var encode_pair(ag::Tape<T>& tape, ProcapModel<T>& model, const Mat<T>& before, const Mat<T>& after) {
  return model.encode(tape, model.query_input(tape, before, after));
}

template <typename T>
Var encode_procedure(ag::Tape<T>& tape, ProcapModel<T>& model, const std::vector<Mat<T>>& frames) {
  if (static_cast<int>(frames.size()) != model.keyframes() + 2) {
    throw ShapeMismatchError("explicit procedure has " + std::to_string(frames.size()) +
                             " frames, model expects k + 2 = " + std::to_string(model.keyframes() + 2));
  }
  return model.encode(tape, model.visual_input(tape, frames));
}

template <typename T>
Var caption_loss(ag::Tape<T>& tape, ProcapModel<T>& model, Var encoded, const std::vector<int>& gold) {
  if (gold.size() < 2) throw ShapeMismatchError("caption_loss: gold needs BOS and EOS");
  if (static_cast<int>(gold.size()) > model.config().max_text_len) {
    throw ConfigError("caption of " + std::to_string(gold.size()) + " tokens exceeds max_text_len " +
                      std::to_string(model.config().max_text_len) + "; truncation refused");
  }
  Var memory = model.decoder_memory(tape, encoded);
  const std::vector<int> input(gold.begin(), gold.end() - 1);
  const std::vector<int> target(gold.begin() + 1, gold.end());
  return tape.cross_entropy(model.decoder_logits(tape, memory, input), target);
}

template <typename T>
Var caption_batch_loss(ag::Tape<T>& tape, ProcapModel<T>& model, const std::vector<CaptionSample<T>>& batch) {
  if (batch.empty()) throw ShapeMismatchError("caption_batch_loss: empty batch");
  std::vector<Var> terms;
  for (const auto& s : batch) {
    Var enc = s.procedure.empty() ? encode_pair(tape, model, s.before, s.after)
                                  : encode_procedure(tape, model, s.procedure);
    terms.push_back(caption_loss(tape, model, enc, s.gold));
  }
  return tape.scale(tape.sum(terms), T(1) / static_cast<T>(batch.size()));
}

namespace {

std::vector<double> last_row_log_softmax(const MatF& logits) {
  const auto row = logits.row(logits.rows() - 1);
  const double mx = row.maxCoeff();
  double z = 0;
  for (Eigen::Index j = 0; j < row.size(); ++j) z += std::exp(static_cast<double>(row(j)) - mx);
  const double lz = mx + std::log(z);
  std::vector<double> out(static_cast<std::size_t>(row.size()));
  for (Eigen::Index j = 0; j < row.size(); ++j) out[static_cast<std::size_t>(j)] = row(j) - lz;
  return out;
}

struct Hypothesis {
  std::vector<int> prefix;  // BOS + tokens
  std::vector<double> logprobs;
  double score = 0;
  bool finished = false;
};

double normalized(const Hypothesis& h) {
  const double len = std::max<std::size_t>(1, h.logprobs.size());
  return h.score / std::pow(len, kLengthPenalty);
}

Generated to_generated(const Hypothesis& h, int eos) {
  Generated g;
  g.logprobs = h.logprobs;
  g.finished = h.finished;
  for (std::size_t i = 1; i < h.prefix.size(); ++i) {
    if (h.prefix[i] != eos) g.ids.push_back(h.prefix[i]);
  }
  return g;
}

}  // namespace

Generated decode(ProcapModel<float>& model, const MatF& encoded, int bos, int eos, const DecodeOptions& opts) {
  const int max_len = opts.max_len > 0 ? opts.max_len : model.config().max_text_len - 1;
  MatF memory;
  {
    ag::Tape<float> tape(false);
    memory = tape.value(model.decoder_memory(tape, tape.constant(encoded)));
  }
  auto step_logprobs = [&](const std::vector<int>& prefix) {
    ag::Tape<float> tape(false);
    return last_row_log_softmax(tape.value(model.decoder_logits(tape, tape.constant(memory), prefix)));
  };

  const int beam = opts.mode == DecodeMode::greedy ? 1 : std::max(1, opts.beam_size);
  if (opts.mode == DecodeMode::greedy) {
    Hypothesis h;
    h.prefix = {bos};
    for (int s = 0; s < max_len; ++s) {
      const auto lp = step_logprobs(h.prefix);
      const int best = static_cast<int>(std::max_element(lp.begin(), lp.end()) - lp.begin());
      h.prefix.push_back(best);
      h.logprobs.push_back(lp[static_cast<std::size_t>(best)]);
      h.score += lp[static_cast<std::size_t>(best)];
      if (best == eos) {
        h.finished = true;
        break;
      }
    }
    return to_generated(h, eos);
  }

  std::vector<Hypothesis> alive(1);
  alive[0].prefix = {bos};
  std::vector<Hypothesis> done;
  for (int s = 0; s < max_len && !alive.empty() && static_cast<int>(done.size()) < beam; ++s) {
    struct Cand {
      double score;
      int hyp;
      int token;
      double lp;
    };
    std::vector<Cand> cands;
    for (std::size_t h = 0; h < alive.size(); ++h) {
      const auto lp = step_logprobs(alive[h].prefix);
      for (std::size_t t = 0; t < lp.size(); ++t) {
        cands.push_back({alive[h].score + lp[t], static_cast<int>(h), static_cast<int>(t), lp[t]});
      }
    }
    // Ties keep the earlier hypothesis and the lower token id, matching greedy argmax.
    std::stable_sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
      if (a.score != b.score) return a.score > b.score;
      return a.lp > b.lp;
    });
    std::vector<Hypothesis> next;
    const int slots = beam - static_cast<int>(done.size());
    for (int c = 0; c < slots && c < static_cast<int>(cands.size()); ++c) {
      Hypothesis h = alive[static_cast<std::size_t>(cands[static_cast<std::size_t>(c)].hyp)];
      h.prefix.push_back(cands[static_cast<std::size_t>(c)].token);
      h.logprobs.push_back(cands[static_cast<std::size_t>(c)].lp);
      h.score = cands[static_cast<std::size_t>(c)].score;
      if (cands[static_cast<std::size_t>(c)].token == eos) {
        h.finished = true;
        done.push_back(std::move(h));
      } else {
        next.push_back(std::move(h));
      }
    }
    alive = std::move(next);
  }
  const auto& pool = done.empty() ? alive : done;
  std::size_t best = 0;
  for (std::size_t i = 1; i < pool.size(); ++i) {
    if (normalized(pool[i]) > normalized(pool[best])) best = i;
  }
  return to_generated(pool[best], eos);
}

Generated caption_pair(ProcapModel<float>& model, const vq::PatchEmbedder& embedder, const FramePair& pair,
                       int bos, int eos, const DecodeOptions& opts) {
  MatF encoded;
  {
    ag::Tape<float> tape(false);
    encoded = tape.value(encode_pair(tape, model, embedder.embed(pair.before), embedder.embed(pair.after)));
  }
  return decode(model, encoded, bos, eos, opts);
}

Generated caption_explicit(ProcapModel<float>& model, const vq::PatchEmbedder& embedder,
                           const KeyframeProcedure& procedure, int bos, int eos, const DecodeOptions& opts) {
  std::vector<MatF> frames;
  for (const auto& f : procedure.frames) frames.push_back(embedder.embed(f));
  MatF encoded;
  {
    ag::Tape<float> tape(false);
    encoded = tape.value(encode_procedure(tape, model, frames));
  }
  return decode(model, encoded, bos, eos, opts);
}

#define PROCAP_INSTANTIATE(T)                                                                        \
  template Var encode_pair<T>(ag::Tape<T>&, ProcapModel<T>&, const Mat<T>&, const Mat<T>&);         \
  template Var encode_procedure<T>(ag::Tape<T>&, ProcapModel<T>&, const std::vector<Mat<T>>&);      \
  template Var caption_loss<T>(ag::Tape<T>&, ProcapModel<T>&, Var, const std::vector<int>&);        \
  template Var caption_batch_loss<T>(ag::Tape<T>&, ProcapModel<T>&, const std::vector<CaptionSample<T>>&);

PROCAP_INSTANTIATE(float)
PROCAP_INSTANTIATE(double)

#undef PROCAP_INSTANTIATE

}  // namespace procap::captioner
