#pragma once

#include <memory>

#include "procap/frame.hpp"
#include "procap/procedure.hpp"
#include "procap/synthdata.hpp"

namespace procap::interp {

// Per-pixel, per-channel soft mask with entries in [0,1].
struct BlendMask {
  Frame weights;

  static BlendMask constant(int height, int width, float h);
  // 1 where |a - b| < threshold, else `fallback`.
  static BlendMask difference_gated(const Frame& a, const Frame& b, float threshold = 0.02f,
                                    float fallback = 0.5f);
};

// clamp(H * bef + (1 - H) * aft + residual, 0, 1). residual may be an empty frame (zero).
Frame blend_frame(const Frame& before, const Frame& after, const BlendMask& mask,
                  const Frame& residual = {});

// Produces the frame halfway between two neighbours at timestamps t_left < t_right.
class Interpolator {
 public:
  virtual ~Interpolator() = default;
  virtual Frame midpoint(const Frame& left, const Frame& right, double t_left,
                         double t_right) const = 0;
  virtual ProcedureSource source() const = 0;
};

enum class MaskMode { constant, gated };

// Identity warp, zero residual; H constant 0.5 or difference-gated.
class BlendInterpolator final : public Interpolator {
 public:
  explicit BlendInterpolator(MaskMode mode = MaskMode::constant, float h = 0.5f)
      : mode_(mode), h_(h) {}
  Frame midpoint(const Frame& left, const Frame& right, double, double) const override;
  ProcedureSource source() const override { return ProcedureSource::blend; }

 private:
  MaskMode mode_;
  float h_;
};

// Ground truth from the scene generator; ignores the neighbour frames.
class OracleInterpolator final : public Interpolator {
 public:
  OracleInterpolator(synth::SceneState before, synth::ChangeSpec change, int image_size)
      : before_(std::move(before)), change_(std::move(change)), image_size_(image_size) {}
  Frame midpoint(const Frame&, const Frame&, double t_left, double t_right) const override;
  ProcedureSource source() const override { return ProcedureSource::oracle; }

 private:
  synth::SceneState before_;
  synth::ChangeSpec change_;
  int image_size_;
};

// True when l = 2^m - 1 for some m >= 1.
bool valid_process_length(int l);

// Recursive midpoint subdivision to depth log2(l + 1); frames ordered by i / (l + 1).
PseudoFrameSequence generate_procedure(const Interpolator& interpolator, const FramePair& pair,
                                       int l);

}  // namespace procap::interp
