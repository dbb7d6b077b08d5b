#include "procap/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "procap/error.hpp"

namespace procap::sampler {

std::vector<double> PixelPoolEmbedder::embed(const Frame& frame) const {
  if (frame.height % pool_ != 0 || frame.width % pool_ != 0) {
    throw ShapeMismatchError("pixel-pool embedder: frame size not divisible by pool");
  }
  const int gh = frame.height / pool_;
  const int gw = frame.width / pool_;
  std::vector<double> v(static_cast<std::size_t>(gh) * gw * 3, 0.0);
  const double inv = 1.0 / (pool_ * pool_);
  for (int y = 0; y < frame.height; ++y) {
    for (int x = 0; x < frame.width; ++x) {
      const std::size_t cell = (static_cast<std::size_t>(y / pool_) * gw + x / pool_) * 3;
      for (int c = 0; c < 3; ++c) v[cell + c] += frame.at(y, x, c) * inv;
    }
  }
  double norm = 0;
  for (double e : v) norm += e * e;
  norm = std::sqrt(norm);
  if (norm > 0) {
    for (double& e : v) e /= norm;
  }
  return v;
}

double cosine(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw ShapeMismatchError("cosine: length mismatch");
  double dot = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += a[i] * b[i];
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  if (na == 0 || nb == 0) return 0.0;
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

std::vector<double> embed_visual(const Frame& frame, const VisualEmbedder& embedder) {
  return embedder.embed(frame);
}

namespace {

using Vec3 = std::array<double, 3>;

Vec3 direction(synth::Color c) {
  const auto col = synth::rgb(c);
  return {col[0] - synth::kBackground[0], col[1] - synth::kBackground[1],
          col[2] - synth::kBackground[2]};
}

double dot3(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }

constexpr double kBackgroundTol = 0.03;
constexpr double kResidualTol = 0.08;

}  // namespace

std::vector<double> OracleScorer::frame_summary(const Frame& frame) {
  constexpr int n = synth::kNumColors;
  std::array<Vec3, n> dirs{};
  for (int c = 0; c < n; ++c) dirs[c] = direction(static_cast<synth::Color>(c));

  std::vector<double> s(3 * n, 0.0);
  const double scale = 100.0 / (static_cast<double>(frame.height) * frame.width);

  // Background covers most of the canvas, so the median brightness measures illumination.
  std::vector<float> lum(static_cast<std::size_t>(frame.height) * frame.width);
  for (std::size_t i = 0; i < lum.size(); ++i) {
    lum[i] = (frame.data[3 * i] + frame.data[3 * i + 1] + frame.data[3 * i + 2]) / 3.0f;
  }
  const auto mid = lum.begin() + static_cast<std::ptrdiff_t>(lum.size() / 2);
  std::nth_element(lum.begin(), mid, lum.end());
  const float bg = (synth::kBackground[0] + synth::kBackground[1] + synth::kBackground[2]) / 3.0f;
  const double gain = *mid > 1e-6f ? bg / *mid : 1.0;
  for (int y = 0; y < frame.height; ++y) {
    for (int x = 0; x < frame.width; ++x) {
      Vec3 d{};
      for (int k = 0; k < 3; ++k) d[k] = gain * frame.at(y, x, k) - synth::kBackground[k];
      if (std::sqrt(dot3(d, d)) < kBackgroundTol) continue;

      // Unmix the pixel as one palette color or a non-negative mix of two.
      double best_res = 1e30;
      std::array<double, n> best{};
      for (int a = 0; a < n; ++a) {
        const double alpha = dot3(d, dirs[a]) / dot3(dirs[a], dirs[a]);
        if (alpha < 0) continue;
        Vec3 r{};
        for (int k = 0; k < 3; ++k) r[k] = d[k] - alpha * dirs[a][k];
        const double res = std::sqrt(dot3(r, r));
        if (res < best_res) {
          best_res = res;
          best.fill(0);
          best[a] = alpha;
        }
        for (int b = a + 1; b < n; ++b) {
          const double aa = dot3(dirs[a], dirs[a]), bb = dot3(dirs[b], dirs[b]);
          const double ab = dot3(dirs[a], dirs[b]);
          const double det = aa * bb - ab * ab;
          if (std::abs(det) < 1e-12) continue;
          const double da = dot3(d, dirs[a]), db = dot3(d, dirs[b]);
          const double wa = (bb * da - ab * db) / det;
          const double wb = (aa * db - ab * da) / det;
          if (wa < 0 || wb < 0) continue;
          Vec3 r2{};
          for (int k = 0; k < 3; ++k) r2[k] = d[k] - wa * dirs[a][k] - wb * dirs[b][k];
          const double res2 = std::sqrt(dot3(r2, r2));
          if (res2 + 1e-9 < best_res) {
            best_res = res2;
            best.fill(0);
            best[a] = wa;
            best[b] = wb;
          }
        }
      }
      if (best_res > kResidualTol) continue;
      const double fy = (y + 0.5) / frame.height;
      const double fx = (x + 0.5) / frame.width;
      for (int c = 0; c < n; ++c) {
        const double m = std::min(best[c], 1.0) * scale;
        s[c] += m;
        s[n + c] += m * fy;
        s[2 * n + c] += m * fx;
      }
    }
  }
  return s;
}

std::vector<double> OracleScorer::caption_vector(const synth::ChangeSlots& slots) {
  using synth::ChangeType;
  constexpr int n = synth::kNumColors;
  std::vector<double> v(3 * n + 1, 0.0);
  const auto col = [&] { return static_cast<int>(slots.target.value().color); };
  switch (slots.type) {
    case ChangeType::color:
      v[col()] -= 1.0;
      v[static_cast<int>(slots.new_color.value())] += 1.0;
      break;
    case ChangeType::move:
      switch (slots.direction.value()) {
        case synth::Direction::up:
          v[n + col()] = -1.0;
          break;
        case synth::Direction::down:
          v[n + col()] = 1.0;
          break;
        case synth::Direction::left:
          v[2 * n + col()] = -1.0;
          break;
        case synth::Direction::right:
          v[2 * n + col()] = 1.0;
          break;
      }
      break;
    case ChangeType::add:
      v[col()] = 1.0;
      break;
    case ChangeType::drop:
      v[col()] = -1.0;
      break;
    case ChangeType::none:
      v[3 * n] = 1.0;
      break;
  }
  return v;
}

double OracleScorer::score(const Frame& target, const Frame& candidate,
                           const synth::ChangeSlots& caption) const {
  const auto a = frame_summary(target);
  const auto b = frame_summary(candidate);
  std::vector<double> feature(a.size() + 1);
  for (std::size_t i = 0; i < a.size(); ++i) feature[i] = b[i] - a[i];
  feature.back() = kResidual;
  // Reversed transformations describe the same change, so orientation is ignored.
  return std::abs(cosine(feature, caption_vector(caption)));
}

SimilarityProfile similarity_profile(const FramePair& pair, const PseudoFrameSequence& pseudo,
                                     const SimilarityOptions& options,
                                     const std::optional<synth::ChangeSlots>& caption) {
  SimilarityProfile p;
  p.strategy = options.strategy;
  if (options.strategy == Strategy::visual_only) {
    static const PixelPoolEmbedder fallback(4);
    const VisualEmbedder& e = options.embedder ? *options.embedder : fallback;
    const auto eb = e.embed(pair.before);
    const auto ea = e.embed(pair.after);
    for (const auto& f : pseudo.frames) {
      const auto ef = e.embed(f);
      p.s_before.push_back(cosine(eb, ef));
      p.s_after.push_back(cosine(ea, ef));
    }
    return p;
  }
  if (!caption) throw ConfigError("visual_text similarity requires a caption");
  static const OracleScorer oracle;
  const PairTextScorer& s = options.scorer ? *options.scorer : oracle;
  for (const auto& f : pseudo.frames) {
    p.s_before.push_back(s.score(pair.before, f, *caption));
    p.s_after.push_back(s.score(pair.after, f, *caption));
  }
  return p;
}

ConfidenceVector confidence_scores(const SimilarityProfile& profile) {
  const std::size_t l = profile.s_before.size();
  if (l == 0 || profile.s_after.size() != l) {
    throw ShapeMismatchError("confidence_scores: profile vectors must share a positive length");
  }
  std::vector<double> d2(l);
  for (std::size_t i = 0; i < l; ++i) {
    if (!std::isfinite(profile.s_before[i]) || !std::isfinite(profile.s_after[i])) {
      throw RuntimeFailure("confidence_scores: non-finite similarity");
    }
    const double diff = profile.s_before[i] - profile.s_after[i];
    d2[i] = diff * diff;
  }
  const double mx = *std::max_element(d2.begin(), d2.end());
  double z = 0;
  for (double& v : d2) {
    v = std::exp(v - mx);
    z += v;
  }
  ConfidenceVector out;
  out.w.resize(l);
  for (std::size_t i = 0; i < l; ++i) out.w[i] = 1.0 - d2[i] / z;
  return out;
}

std::vector<int> top_k_indices(const std::vector<double>& w, int k) {
  std::vector<int> idx(w.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return w[a] > w[b]; });
  idx.resize(static_cast<std::size_t>(k));
  std::sort(idx.begin(), idx.end());
  return idx;
}

KeyframeProcedure sample_keyframes(const FramePair& pair, const PseudoFrameSequence& pseudo,
                                   const ConfidenceVector& w, int k) {
  const int l = static_cast<int>(pseudo.size());
  if (static_cast<int>(w.w.size()) != l) {
    throw ShapeMismatchError("sample_keyframes: confidence length differs from procedure length");
  }
  if (k < 1 || k > l) {
    throw ConfigError("keyframe count " + std::to_string(k) + " outside [1, " + std::to_string(l) +
                      "]");
  }
  KeyframeProcedure proc;
  proc.sampled_indices = top_k_indices(w.w, k);
  proc.frames.push_back(pair.before);
  for (int i : proc.sampled_indices) proc.frames.push_back(pseudo.frames[i]);
  proc.frames.push_back(pair.after);
  return proc;
}

}  // namespace procap::sampler
