#pragma once

#include <optional>
#include <vector>

#include "procap/frame.hpp"
#include "procap/procedure.hpp"
#include "procap/synthdata.hpp"

namespace procap::sampler {

enum class Strategy { visual_only, visual_text };

class VisualEmbedder {
 public:
  virtual ~VisualEmbedder() = default;
  virtual std::vector<double> embed(const Frame& frame) const = 0;
};

// Average over pool x pool pixel windows per channel, flattened and L2-normalized.
class PixelPoolEmbedder final : public VisualEmbedder {
 public:
  explicit PixelPoolEmbedder(int pool = 4) : pool_(pool) {}
  std::vector<double> embed(const Frame& frame) const override;

 private:
  int pool_;
};

double cosine(const std::vector<double>& a, const std::vector<double>& b);

std::vector<double> embed_visual(const Frame& frame, const VisualEmbedder& embedder);

// Scores how well the transformation from `target` to `candidate` matches a caption.
class PairTextScorer {
 public:
  virtual ~PairTextScorer() = default;
  virtual double score(const Frame& target, const Frame& candidate,
                       const synth::ChangeSlots& caption) const = 0;
};

// Training-free scorer for the synthetic palette world. A frame is summarized by the
// per-palette-color coverage and its first spatial moments; the pair feature is the
// difference of those summaries and the caption maps to the delta its slots imply.
// Brightness is first rescaled so the median pixel matches the background grey.
class OracleScorer final : public PairTextScorer {
 public:
  double score(const Frame& target, const Frame& candidate,
               const synth::ChangeSlots& caption) const override;

  static std::vector<double> frame_summary(const Frame& frame);
  static std::vector<double> caption_vector(const synth::ChangeSlots& caption);
  static constexpr double kResidual = 0.05;
};

struct SimilarityProfile {
  std::vector<double> s_before;
  std::vector<double> s_after;
  Strategy strategy = Strategy::visual_only;

  std::size_t size() const { return s_before.size(); }
};

struct SimilarityOptions {
  Strategy strategy = Strategy::visual_only;
  const VisualEmbedder* embedder = nullptr;   // defaults to PixelPoolEmbedder(4)
  const PairTextScorer* scorer = nullptr;     // defaults to OracleScorer
};

SimilarityProfile similarity_profile(const FramePair& pair, const PseudoFrameSequence& pseudo,
                                     const SimilarityOptions& options,
                                     const std::optional<synth::ChangeSlots>& caption);

struct ConfidenceVector {
  std::vector<double> w;
};

// w = 1 - softmax((s_before - s_after)^2)
ConfidenceVector confidence_scores(const SimilarityProfile& profile);

// Top-k by w (ties to the smaller index), reordered temporally, endpoints attached.
KeyframeProcedure sample_keyframes(const FramePair& pair, const PseudoFrameSequence& pseudo,
                                   const ConfidenceVector& w, int k);

std::vector<int> top_k_indices(const std::vector<double>& w, int k);

}  // namespace procap::sampler
