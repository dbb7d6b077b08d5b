#include "procap/interp.hpp"

#include <algorithm>
#include <cmath>

#include "procap/error.hpp"

namespace procap::interp {

BlendMask BlendMask::constant(int height, int width, float h) {
  return {Frame(height, width, std::clamp(h, 0.0f, 1.0f))};
}

BlendMask BlendMask::difference_gated(const Frame& a, const Frame& b, float threshold,
                                      float fallback) {
  if (!a.same_shape(b)) throw ShapeMismatchError("gated mask: frames differ in shape");
  BlendMask m{Frame(a.height, a.width)};
  for (std::size_t i = 0; i < a.data.size(); ++i) {
    m.weights.data[i] = std::abs(a.data[i] - b.data[i]) < threshold ? 1.0f : fallback;
  }
  return m;
}

Frame blend_frame(const Frame& before, const Frame& after, const BlendMask& mask,
                  const Frame& residual) {
  if (!before.same_shape(after) || !before.same_shape(mask.weights)) {
    throw ShapeMismatchError("blend_frame: inputs differ in shape");
  }
  const bool has_residual = !residual.data.empty();
  if (has_residual && !residual.same_shape(before)) {
    throw ShapeMismatchError("blend_frame: residual differs in shape");
  }
  Frame out(before.height, before.width);
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    const float h = mask.weights.data[i];
    float v = h * before.data[i] + (1.0f - h) * after.data[i];
    if (has_residual) v += residual.data[i];
    out.data[i] = std::clamp(v, 0.0f, 1.0f);
  }
  return out;
}

Frame BlendInterpolator::midpoint(const Frame& left, const Frame& right, double, double) const {
  const auto mask = mode_ == MaskMode::gated ? BlendMask::difference_gated(left, right)
                                             : BlendMask::constant(left.height, left.width, h_);
  return blend_frame(left, right, mask);
}

Frame OracleInterpolator::midpoint(const Frame&, const Frame&, double t_left,
                                   double t_right) const {
  return synth::oracle_frame(before_, change_, 0.5 * (t_left + t_right), image_size_);
}

bool valid_process_length(int l) { return l >= 1 && ((l + 1) & l) == 0; }

PseudoFrameSequence generate_procedure(const Interpolator& interpolator, const FramePair& pair,
                                       int l) {
  if (!valid_process_length(l)) {
    throw ConfigError("process length " + std::to_string(l) + " is not of the form 2^m - 1");
  }
  if (!pair.before.same_shape(pair.after)) {
    throw ShapeMismatchError("generate_procedure: pair frames differ in shape");
  }
  // slots[0] and slots[l+1] are the endpoints; filled breadth-first by halving spans.
  std::vector<Frame> slots(static_cast<std::size_t>(l) + 2);
  slots.front() = pair.before;
  slots.back() = pair.after;
  const double denom = l + 1;
  for (int span = l + 1; span >= 2; span /= 2) {
    for (int lo = 0; lo + span <= l + 1; lo += span) {
      const int hi = lo + span;
      const int mid = lo + span / 2;
      slots[mid] = interpolator.midpoint(slots[lo], slots[hi], lo / denom, hi / denom);
    }
  }
  PseudoFrameSequence seq;
  seq.source = interpolator.source();
  for (int i = 1; i <= l; ++i) {
    seq.frames.push_back(std::move(slots[i]));
    seq.timestamps.push_back(i / denom);
  }
  return seq;
}

}  // namespace procap::interp
