#include "procap/evalkit.hpp"

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "json.hpp"
#include "procap/error.hpp"
#include "procap/interp.hpp"
#include "procap/sampler.hpp"

namespace procap::eval {

namespace {

using NGramCounts = std::map<std::vector<std::string>, int>;

NGramCounts ngrams(const Sentence& s, int n) {
  NGramCounts out;
  for (std::size_t i = 0; i + static_cast<std::size_t>(n) <= s.size(); ++i) {
    ++out[Sentence(s.begin() + static_cast<std::ptrdiff_t>(i), s.begin() + static_cast<std::ptrdiff_t>(i) + n)];
  }
  return out;
}

void check_aligned(std::size_t c, std::size_t r, const char* who) {
  if (c == 0) throw ConfigError(std::string(who) + ": empty corpus");
  if (c != r) throw ShapeMismatchError(std::string(who) + ": candidates and references differ in length");
}

}  // namespace

double bleu4(const std::vector<Sentence>& candidates, const std::vector<std::vector<Sentence>>& references) {
  check_aligned(candidates.size(), references.size(), "bleu4");
  std::array<double, 4> matched{}, total{};
  double cand_len = 0, ref_len = 0;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const auto& c = candidates[i];
    const auto& refs = references[i];
    if (refs.empty()) throw ConfigError("bleu4: candidate without reference");
    cand_len += static_cast<double>(c.size());
    // closest reference length, shorter on ties
    std::size_t best = refs[0].size();
    for (const auto& r : refs) {
      const auto dr = std::abs(static_cast<long>(r.size()) - static_cast<long>(c.size()));
      const auto db = std::abs(static_cast<long>(best) - static_cast<long>(c.size()));
      if (dr < db || (dr == db && r.size() < best)) best = r.size();
    }
    ref_len += static_cast<double>(best);
    for (int n = 1; n <= 4; ++n) {
      const auto cc = ngrams(c, n);
      NGramCounts max_ref;
      for (const auto& r : refs) {
        for (const auto& [g, k] : ngrams(r, n)) max_ref[g] = std::max(max_ref[g], k);
      }
      for (const auto& [g, k] : cc) {
        total[static_cast<std::size_t>(n - 1)] += k;
        const auto it = max_ref.find(g);
        if (it != max_ref.end()) matched[static_cast<std::size_t>(n - 1)] += std::min(k, it->second);
      }
    }
  }
  if (matched[0] == 0) return 0.0;
  double log_sum = 0;
  for (std::size_t n = 0; n < 4; ++n) {
    const double p = total[n] > 0 ? matched[n] / total[n] : 0.0;
    log_sum += std::log(std::max(p, kBleuEpsilon));
  }
  const double bp = cand_len >= ref_len ? 1.0 : std::exp(1.0 - ref_len / cand_len);
  return bp * std::exp(log_sum / 4.0);
}

CiderScore cider(const std::vector<Sentence>& candidates, const std::vector<std::vector<Sentence>>& references) {
  check_aligned(candidates.size(), references.size(), "cider");
  const double n_docs = static_cast<double>(references.size());
  CiderScore out;
  out.degenerate = references.size() < 2;
  double total = 0;
  for (int n = 1; n <= 4; ++n) {
    std::map<std::vector<std::string>, int> df;
    std::vector<std::vector<NGramCounts>> ref_counts(references.size());
    for (std::size_t i = 0; i < references.size(); ++i) {
      std::map<std::vector<std::string>, bool> seen;
      for (const auto& r : references[i]) {
        ref_counts[i].push_back(ngrams(r, n));
        for (const auto& kv : ref_counts[i].back()) seen[kv.first] = true;
      }
      for (const auto& kv : seen) ++df[kv.first];
    }
    auto weight = [&](const NGramCounts& counts) {
      std::map<std::vector<std::string>, double> v;
      for (const auto& [g, k] : counts) {
        const auto it = df.find(g);
        const double d = it == df.end() ? 1.0 : static_cast<double>(it->second);
        v[g] = k * std::log(n_docs / d);
      }
      return v;
    };
    auto norm = [](const std::map<std::vector<std::string>, double>& v) {
      double s = 0;
      for (const auto& kv : v) s += kv.second * kv.second;
      return std::sqrt(s);
    };
    double sum_n = 0;
    for (std::size_t i = 0; i < candidates.size(); ++i) {
      const auto vc = weight(ngrams(candidates[i], n));
      const double nc = norm(vc);
      double per_ref = 0;
      for (const auto& rc : ref_counts[i]) {
        const auto vr = weight(rc);
        const double nr = norm(vr);
        if (nc == 0 || nr == 0) continue;
        double dot = 0;
        for (const auto& [g, w] : vc) {
          const auto it = vr.find(g);
          if (it != vr.end()) dot += w * it->second;
        }
        per_ref += dot / (nc * nr);
      }
      if (!ref_counts[i].empty()) sum_n += per_ref / static_cast<double>(ref_counts[i].size());
    }
    total += sum_n / static_cast<double>(candidates.size());
  }
  out.value = 10.0 * total / 4.0;
  return out;
}

SlotAccuracy slot_accuracy(const std::vector<Sentence>& candidates, const std::vector<synth::ChangeSlots>& gold,
                           const synth::Grammar& grammar) {
  if (candidates.size() != gold.size()) throw ShapeMismatchError("slot_accuracy: size mismatch");
  SlotAccuracy acc;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    const auto parsed = synth::parse_slots(candidates[i], grammar);
    const bool ok = parsed && *parsed == gold[i];
    auto& t = acc.per_type[gold[i].type];
    ++t.total;
    ++acc.overall.total;
    if (ok) {
      ++t.correct;
      ++acc.overall.correct;
    }
  }
  return acc;
}

double exact_match(const std::vector<Sentence>& candidates, const std::vector<Sentence>& gold) {
  if (candidates.size() != gold.size()) throw ShapeMismatchError("exact_match: size mismatch");
  if (candidates.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < candidates.size(); ++i) hits += candidates[i] == gold[i];
  return static_cast<double>(hits) / static_cast<double>(candidates.size());
}

std::string MetricReport::json() const {
  nlohmann::json j;
  j["bleu4"] = bleu4;
  j["cider"] = cider;
  j["cider_degenerate"] = cider_degenerate;
  j["exact_match"] = exact_match;
  j["slot_accuracy"] = slots.overall.rate();
  nlohmann::json per = nlohmann::json::object();
  for (const auto& [type, tally] : slots.per_type) {
    per[std::string(synth::name(type))] = {{"accuracy", tally.rate()}, {"correct", tally.correct}, {"total", tally.total}};
  }
  j["slot_accuracy_per_type"] = per;
  j["corpus_size"] = corpus_size;
  j["config_hash"] = config_hash;
  return j.dump();
}

MetricReport evaluate(const std::vector<Sentence>& candidates, const std::vector<synth::Record>& gold,
                      const std::string& config_hash) {
  if (candidates.size() != gold.size()) throw ShapeMismatchError("evaluate: size mismatch");
  std::vector<std::vector<Sentence>> refs;
  std::vector<Sentence> gold_words;
  std::vector<synth::ChangeSlots> slots;
  for (const auto& r : gold) {
    refs.push_back({r.caption.surface});
    gold_words.push_back(r.caption.surface);
    slots.push_back(r.caption.slots);
  }
  MetricReport m;
  m.bleu4 = bleu4(candidates, refs);
  const auto c = cider(candidates, refs);
  m.cider = c.value;
  m.cider_degenerate = c.degenerate;
  m.exact_match = exact_match(candidates, gold_words);
  m.slots = slot_accuracy(candidates, slots, synth::default_grammar());
  m.corpus_size = candidates.size();
  m.config_hash = config_hash;
  return m;
}

OpCounts attention_op_count(const CostInputs& in) {
  if (in.K < 0 || in.n_I < 0 || in.d < 0 || in.l_e < 0 || in.l_d < 0 || in.n_T < 0 || in.d_decoder < 0) {
    throw ConfigError("attention_op_count: negative dimension");
  }
  const std::int64_t np = in.n_P();
  const std::int64_t d = in.d;
  OpCounts c;
  c.projections = in.l_e * 3 * np * d * d;
  c.output = in.l_e * np * d * d;
  c.scores_mix = in.l_e * 2 * np * np * d;
  c.decoder_cross = static_cast<std::int64_t>(in.l_d) * np * in.n_T * in.d_decoder;
  return c;
}

double time_encoder_forward(ProcapModel<float>& model, int K, int repeats) {
  const auto& cfg = model.config();
  std::mt19937_64 rng(derive_seed(0, "encoder-timing:" + std::to_string(K)));
  std::normal_distribution<float> nd(0.0f, 1.0f);
  std::vector<MatF> frames;
  for (int f = 0; f < K; ++f) {
    MatF m(cfg.patches_per_frame(), cfg.d_model);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = nd(rng);
    frames.push_back(std::move(m));
  }
  auto once = [&] {
    const auto t0 = std::chrono::steady_clock::now();
    ag::Tape<float> tape(false);
    const MatF out = tape.value(model.encode(tape, model.visual_input(tape, frames)));
    const auto dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!out.allFinite()) throw RuntimeFailure("encoder produced non-finite values");
    return dt;
  };
  once();
  std::vector<double> t;
  for (int r = 0; r < std::max(1, repeats); ++r) t.push_back(once());
  std::nth_element(t.begin(), t.begin() + static_cast<std::ptrdiff_t>(t.size() / 2), t.end());
  return t[t.size() / 2];
}

std::size_t caption_once(ProcapModel<float>& model, const vq::PatchEmbedder& embedder, const FramePair& pair,
                         CaptionPath path, const pipeline::ProcedureOptions& procedure) {
  const captioner::DecodeOptions opts;
  if (path == CaptionPath::implicit_queries) {
    return captioner::caption_pair(model, embedder, pair, synth::kBos, synth::kEos, opts).tokens();
  }
  // No caption exists at inference time, so the sampler falls back to visual similarity.
  interp::BlendInterpolator blend(procedure.blend_mask);
  const auto pseudo = interp::generate_procedure(blend, pair, procedure.process_length);
  sampler::SimilarityOptions sim;
  sim.strategy = sampler::Strategy::visual_only;
  const auto profile = sampler::similarity_profile(pair, pseudo, sim, std::nullopt);
  const auto kp = sampler::sample_keyframes(pair, pseudo, sampler::confidence_scores(profile), model.keyframes());
  return captioner::caption_explicit(model, embedder, kp, synth::kBos, synth::kEos, opts).tokens();
}

TpsResult measure_tps(ProcapModel<float>& model, const vq::PatchEmbedder& embedder,
                      const std::vector<FramePair>& pairs, CaptionPath path,
                      const pipeline::ProcedureOptions& procedure, int warmup) {
  if (warmup < 3) throw ConfigError("measure_tps needs at least 3 warmup iterations");
  if (pairs.empty()) throw ConfigError("measure_tps: no pairs");
  auto run = [&](const FramePair& pair) { return caption_once(model, embedder, pair, path, procedure); };
  for (int i = 0; i < warmup; ++i) run(pairs[static_cast<std::size_t>(i) % pairs.size()]);
  TpsResult r;
  const auto t0 = std::chrono::steady_clock::now();
  for (const auto& p : pairs) r.tokens += run(p);
  r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return r;
}

std::vector<TpsResult> measure_tps_paired(const std::vector<TpsArm>& arms, const vq::PatchEmbedder& embedder,
                                          const std::vector<FramePair>& pairs,
                                          const pipeline::ProcedureOptions& procedure, int repeats, int warmup) {
  if (warmup < 3) throw ConfigError("measure_tps_paired needs at least 3 warmup iterations");
  if (pairs.empty() || arms.empty()) throw ConfigError("measure_tps_paired: no pairs or arms");
  if (repeats < 1) throw ConfigError("measure_tps_paired: repeats must be positive");
  for (const auto& arm : arms) {
    for (int i = 0; i < warmup; ++i)
      caption_once(*arm.model, embedder, pairs[static_cast<std::size_t>(i) % pairs.size()], arm.path, procedure);
  }
  std::vector<TpsResult> out(arms.size());
  for (const auto& pair : pairs) {
    std::vector<double> best(arms.size(), std::numeric_limits<double>::infinity());
    for (int rep = 0; rep < repeats; ++rep) {
      for (std::size_t a = 0; a < arms.size(); ++a) {
        const auto t0 = std::chrono::steady_clock::now();
        const auto tokens = caption_once(*arms[a].model, embedder, pair, arms[a].path, procedure);
        best[a] = std::min(best[a], std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
        if (rep == 0) out[a].tokens += tokens;
      }
    }
    for (std::size_t a = 0; a < arms.size(); ++a) out[a].seconds += best[a];
  }
  return out;
}

std::string CostProfile::csv_header() {
  return "K,n_I,d,l_e,l_d,n_T,n_P,projection_macs,output_macs,score_mix_macs,encoder_macs,decoder_cross_macs,"
         "encoder_seconds,tps";
}

std::string CostProfile::csv_row() const {
  std::ostringstream s;
  s << inputs.K << ',' << inputs.n_I << ',' << inputs.d << ',' << inputs.l_e << ',' << inputs.l_d << ','
    << inputs.n_T << ',' << inputs.n_P() << ',' << counts.projections << ',' << counts.output << ','
    << counts.scores_mix << ',' << counts.encoder_total() << ',' << counts.decoder_cross << ',';
  s.precision(6);
  s << encoder_seconds << ',' << tps;
  return s.str();
}

}  // namespace procap::eval
