#include "procap/procnet.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "procap/error.hpp"

namespace procap::procnet {

using ag::Var;

std::string_view name(MaskScheme s) {
  static constexpr std::array<std::string_view, 4> names = {"entire", "random_patch", "in_block",
                                                            "out_block"};
  return names[static_cast<int>(s)];
}

std::string_view name(WarpStrategy s) {
  static constexpr std::array<std::string_view, 4> names = {"batch_swap", "frame_shuffle",
                                                            "color_shift", "affine"};
  return names[static_cast<int>(s)];
}

int MaskIndexSet::count() const {
  return static_cast<int>(std::count(flags.begin(), flags.end(), std::uint8_t{1}));
}

MaskScheme sample_scheme(Rng& rng) {
  const double u = std::uniform_real_distribution<double>(0.0, 1.0)(rng);
  double acc = 0;
  for (std::size_t i = 0; i < kSchemeProbabilities.size(); ++i) {
    acc += kSchemeProbabilities[i];
    if (u < acc) return static_cast<MaskScheme>(i);
  }
  return MaskScheme::out_block;
}

BlockRegion sample_block(Rng& rng, int grid_h, int grid_w) {
  if (grid_h < 1 || grid_w < 1 || grid_h * grid_w < 2) {
    throw ConfigError("block masking needs a patch grid with at least two cells");
  }
  // Strict interior when the grid allows one; otherwise any proper sub-rectangle.
  const bool strict = grid_h >= 3 && grid_w >= 3;
  const int lo_x = strict ? 1 : 0, hi_x = strict ? grid_w - 1 : grid_w;
  const int lo_y = strict ? 1 : 0, hi_y = strict ? grid_h - 1 : grid_h;
  const int avail_w = hi_x - lo_x, avail_h = hi_y - lo_y;
  const int total = grid_h * grid_w;

  BlockRegion r;
  r.target_ratio = std::uniform_real_distribution<double>(kBlockAreaLow, kBlockAreaHigh)(rng);
  const double target = r.target_ratio * total;

  std::vector<std::pair<int, int>> feasible;  // (width, height)
  for (int w = 1; w <= avail_w; ++w) {
    const int h = static_cast<int>(std::lround(target / w));
    if (h >= 1 && h <= avail_h && w * h < total) feasible.emplace_back(w, h);
  }
  int bw = 1, bh = 1;
  if (!feasible.empty()) {
    const auto pick = std::uniform_int_distribution<std::size_t>(0, feasible.size() - 1)(rng);
    std::tie(bw, bh) = feasible[pick];
  } else {
    double best = 1e300;
    for (int w = 1; w <= avail_w; ++w) {
      for (int h = 1; h <= avail_h; ++h) {
        if (w * h >= total) continue;
        const double gap = std::abs(w * h - target);
        if (gap < best) {
          best = gap;
          bw = w;
          bh = h;
        }
      }
    }
  }
  r.x1 = std::uniform_int_distribution<int>(lo_x, hi_x - bw)(rng);
  r.y1 = std::uniform_int_distribution<int>(lo_y, hi_y - bh)(rng);
  r.x2 = r.x1 + bw;
  r.y2 = r.y1 + bh;
  return r;
}

MaskIndexSet block_mask(const BlockRegion& region, int frames, int grid_h, int grid_w, bool inside) {
  MaskIndexSet m;
  m.scheme = inside ? MaskScheme::in_block : MaskScheme::out_block;
  m.region = region;
  m.flags.resize(static_cast<std::size_t>(frames) * grid_h * grid_w);
  std::size_t i = 0;
  for (int f = 0; f < frames; ++f) {
    for (int y = 0; y < grid_h; ++y) {
      for (int x = 0; x < grid_w; ++x) m.flags[i++] = region.contains(x, y) == inside ? 1 : 0;
    }
  }
  return m;
}

MaskIndexSet sample_mask(Rng& rng, MaskScheme scheme, int frames, int grid_h, int grid_w) {
  if (frames < 1 || grid_h < 1 || grid_w < 1) throw ShapeMismatchError("sample_mask: empty grid");
  const std::size_t n = static_cast<std::size_t>(frames) * grid_h * grid_w;
  switch (scheme) {
    case MaskScheme::entire: {
      MaskIndexSet m;
      m.scheme = scheme;
      m.flags.assign(n, 1);
      return m;
    }
    case MaskScheme::random_patch: {
      MaskIndexSet m;
      m.scheme = scheme;
      m.patch_rate = std::uniform_real_distribution<double>(kPatchRateLow, kPatchRateHigh)(rng);
      std::uniform_real_distribution<double> u(0.0, 1.0);
      m.flags.resize(n);
      for (auto& f : m.flags) f = u(rng) < m.patch_rate ? 1 : 0;
      return m;
    }
    case MaskScheme::in_block:
    case MaskScheme::out_block:
      break;
  }
  return block_mask(sample_block(rng, grid_h, grid_w), frames, grid_h, grid_w,
                    scheme == MaskScheme::in_block);
}

MaskIndexSet sample_mask(Rng& rng, int frames, int grid_h, int grid_w) {
  return sample_mask(rng, sample_scheme(rng), frames, grid_h, grid_w);
}

MatF apply_mask(const MatF& visual, const std::vector<std::uint8_t>& flags, const RowVec<float>& e_m) {
  if (static_cast<Eigen::Index>(flags.size()) != visual.rows() || e_m.cols() != visual.cols()) {
    throw ShapeMismatchError("apply_mask: flag count or mask width mismatch");
  }
  MatF out = visual;
  for (std::size_t i = 0; i < flags.size(); ++i) {
    if (flags[i]) out.row(static_cast<Eigen::Index>(i)) = e_m;
  }
  return out;
}

// ---- warps ----

Frame affine_warp(const Frame& frame, const AffineParams& p) {
  const double th = p.theta_deg * M_PI / 180.0;
  const double a = p.scale * std::cos(th), b = -p.scale * std::sin(th);
  const double c = p.scale * std::sin(th), d = p.scale * std::cos(th);
  const double cx = (frame.width - 1) / 2.0, cy = (frame.height - 1) / 2.0;
  const double tx = p.tx * frame.width / 2.0, ty = p.ty * frame.height / 2.0;
  Frame out(frame.height, frame.width, 0.0f);
  auto sample = [&](int y, int x, int ch) -> double {
    if (y < 0 || x < 0 || y >= frame.height || x >= frame.width) return 0.0;
    return frame.at(y, x, ch);
  };
  for (int y = 0; y < frame.height; ++y) {
    for (int x = 0; x < frame.width; ++x) {
      const double u = x - cx, v = y - cy;
      const double sx = a * u + b * v + tx + cx;
      const double sy = c * u + d * v + ty + cy;
      const int x0 = static_cast<int>(std::floor(sx)), y0 = static_cast<int>(std::floor(sy));
      const double fx = sx - x0, fy = sy - y0;
      for (int ch = 0; ch < 3; ++ch) {
        double val = (1 - fy) * ((1 - fx) * sample(y0, x0, ch));
        if (fx != 0) val += (1 - fy) * fx * sample(y0, x0 + 1, ch);
        if (fy != 0) {
          val += fy * (1 - fx) * sample(y0 + 1, x0, ch);
          if (fx != 0) val += fy * fx * sample(y0 + 1, x0 + 1, ch);
        }
        out.at(y, x, ch) = static_cast<float>(val);
      }
    }
  }
  return out;
}

Frame color_shift(const Frame& frame, int channel, double a, bool clamp) {
  if (channel < 0 || channel > 2) throw ShapeMismatchError("color_shift: channel out of range");
  Frame out = frame;
  for (int y = 0; y < frame.height; ++y) {
    for (int x = 0; x < frame.width; ++x) {
      float v = static_cast<float>(frame.at(y, x, channel) + a);
      if (clamp) v = std::clamp(v, 0.0f, 1.0f);
      out.at(y, x, channel) = v;
    }
  }
  return out;
}

namespace {

void fill_color(Rng& rng, WarpParams& p) {
  p.strategy = WarpStrategy::color_shift;
  p.channel = std::uniform_int_distribution<int>(0, 2)(rng);
  const double mag = std::uniform_real_distribution<double>(kColorShiftLow, kColorShiftHigh)(rng);
  p.shift = std::bernoulli_distribution(0.5)(rng) ? mag : -mag;
}

void fill_shuffle(Rng& rng, WarpParams& p, int length) {
  p.strategy = WarpStrategy::frame_shuffle;
  p.permutation.resize(static_cast<std::size_t>(length));
  std::iota(p.permutation.begin(), p.permutation.end(), 0);
  // Rejection keeps the draw uniform over non-identity permutations.
  do {
    std::shuffle(p.permutation.begin(), p.permutation.end(), rng);
  } while (std::is_sorted(p.permutation.begin(), p.permutation.end()));
}

}  // namespace

WarpParams sample_warp(Rng& rng, int length, int batch_size, int self_index) {
  WarpParams p;
  p.strategy = static_cast<WarpStrategy>(std::uniform_int_distribution<int>(0, 3)(rng));
  switch (p.strategy) {
    case WarpStrategy::batch_swap:
      if (batch_size >= 2) {
        p.swap_index = std::uniform_int_distribution<int>(0, length - 1)(rng);
        const int off = std::uniform_int_distribution<int>(1, batch_size - 1)(rng);
        p.swap_source = (self_index + off) % batch_size;
        break;
      }
      [[fallthrough]];
    case WarpStrategy::frame_shuffle:
      if (length >= 2) {
        fill_shuffle(rng, p, length);
      } else {
        fill_color(rng, p);
      }
      break;
    case WarpStrategy::color_shift:
      fill_color(rng, p);
      break;
    case WarpStrategy::affine: {
      std::uniform_real_distribution<double> ang(-kAffineAngleDeg, kAffineAngleDeg);
      std::uniform_real_distribution<double> sh(-kAffineShift, kAffineShift);
      std::uniform_real_distribution<double> sc(1.0 - kAffineScale, 1.0 + kAffineScale);
      p.affine.theta_deg = ang(rng);
      p.affine.tx = sh(rng);
      p.affine.ty = sh(rng);
      p.affine.scale = sc(rng);
      break;
    }
  }
  return p;
}

std::vector<Frame> warp_negative(const std::vector<Frame>& frames, WarpParams& params,
                                 const std::vector<const std::vector<Frame>*>& batch, Rng& rng) {
  if (frames.empty()) throw ShapeMismatchError("warp_negative: empty procedure");
  std::vector<Frame> out;
  switch (params.strategy) {
    case WarpStrategy::batch_swap: {
      const auto idx = static_cast<std::size_t>(params.swap_source);
      if (idx < batch.size() && batch[idx] != nullptr && batch[idx]->size() == frames.size()) {
        out = frames;
        out[static_cast<std::size_t>(params.swap_index)] =
            (*batch[idx])[static_cast<std::size_t>(params.swap_index)];
        return out;
      }
      if (frames.size() < 2) {
        fill_color(rng, params);
        return warp_negative(frames, params, batch, rng);
      }
      fill_shuffle(rng, params, static_cast<int>(frames.size()));
      [[fallthrough]];
    }
    case WarpStrategy::frame_shuffle: {
      if (params.permutation.size() != frames.size()) {
        throw ShapeMismatchError("warp_negative: permutation length differs from procedure");
      }
      for (int i : params.permutation) out.push_back(frames[static_cast<std::size_t>(i)]);
      if (out != frames) return out;
      // Repeated frames made the permutation a no-op; swap the first differing neighbours.
      for (std::size_t i = 0; i + 1 < frames.size(); ++i) {
        if (!(frames[i] == frames[i + 1])) {
          std::iota(params.permutation.begin(), params.permutation.end(), 0);
          std::swap(params.permutation[i], params.permutation[i + 1]);
          out = frames;
          std::swap(out[i], out[i + 1]);
          return out;
        }
      }
      fill_color(rng, params);
      return warp_negative(frames, params, batch, rng);
    }
    case WarpStrategy::color_shift:
      for (const auto& f : frames) out.push_back(color_shift(f, params.channel, params.shift));
      return out;
    case WarpStrategy::affine:
      for (const auto& f : frames) out.push_back(affine_warp(f, params.affine));
      return out;
  }
  return out;
}

std::vector<int> derangement(Rng& rng, int n) {
  std::vector<int> out(static_cast<std::size_t>(std::max(n, 0)));
  if (n < 2) {
    std::iota(out.begin(), out.end(), 0);
    return out;
  }
  const int shift = std::uniform_int_distribution<int>(1, n - 1)(rng);
  for (int i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = (i + shift) % n;
  return out;
}

// ---- losses ----

template <typename T>
EncoderOutput encode_stage1(ag::Tape<T>& tape, ProcapModel<T>& model, const std::vector<int>& caption,
                            const std::vector<Mat<T>>& frames, const std::vector<std::uint8_t>& mask) {
  EncoderOutput out;
  Var in = model.stage1_input(tape, caption, frames, &mask, &out.layout);
  out.states = model.encode(tape, in);
  return out;
}

template <typename T>
Var msm_loss(ag::Tape<T>& tape, ProcapModel<T>& model, const EncoderOutput& out,
             const std::vector<int>& targets, const std::vector<std::uint8_t>& mask, int* empty_counter) {
  if (targets.size() != mask.size() || static_cast<int>(mask.size()) != out.layout.visual_len) {
    throw ShapeMismatchError("msm_loss: targets, mask and visual length must agree");
  }
  std::vector<int> rows, gold;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (mask[i]) {
      rows.push_back(out.layout.visual_begin() + static_cast<int>(i));
      gold.push_back(targets[i]);
    }
  }
  if (rows.empty()) {
    if (empty_counter != nullptr) ++*empty_counter;
    return tape.constant(Mat<T>::Zero(1, 1));
  }
  Var picked = tape.gather_rows(out.states, rows);
  return tape.cross_entropy(model.msm_logits(tape, picked), gold);
}

template <typename T>
Var align_loss(ag::Tape<T>& tape, ProcapModel<T>& model, const EncoderOutput& pos, const EncoderOutput& neg) {
  Var zp = model.align_logit(tape, tape.slice_rows(pos.states, pos.layout.align_row(), 1));
  Var zn = model.align_logit(tape, tape.slice_rows(neg.states, neg.layout.align_row(), 1));
  return tape.sum({tape.binary_cross_entropy(zp, 1), tape.binary_cross_entropy(zn, 0)});
}

template <typename T>
Var csy_loss(ag::Tape<T>& tape, ProcapModel<T>& model, const EncoderOutput& pos, const EncoderOutput& neg) {
  Var zp = model.csy_logit(tape, tape.slice_rows(pos.states, pos.layout.csy_row(), 1));
  Var zn = model.csy_logit(tape, tape.slice_rows(neg.states, neg.layout.csy_row(), 1));
  return tape.sum({tape.binary_cross_entropy(zp, 1), tape.binary_cross_entropy(zn, 0)});
}

template <typename T>
Var stage1_loss(ag::Tape<T>& tape, ProcapModel<T>& model, const std::vector<Stage1Sample<T>>& batch,
                const LossToggles& toggles, LossBreakdown* breakdown) {
  if (batch.empty()) throw ShapeMismatchError("stage1_loss: empty batch");
  LossBreakdown local;
  int n_align = 0, n_csy = 0;
  std::vector<Var> per_sample;
  for (const auto& s : batch) {
    const EncoderOutput pos = encode_stage1(tape, model, s.caption, s.frames, s.mask);
    std::vector<Var> terms;
    if (toggles.msm) {
      Var l = msm_loss(tape, model, pos, s.targets, s.mask, &local.empty_masks);
      local.msm += static_cast<double>(tape.scalar(l));
      terms.push_back(l);
    }
    if (toggles.align) {
      if (s.negative_caption.empty()) {
        ++local.skipped_align;
      } else {
        const EncoderOutput neg = encode_stage1(tape, model, s.negative_caption, s.frames, s.mask);
        Var l = align_loss(tape, model, pos, neg);
        local.align += static_cast<double>(tape.scalar(l));
        ++n_align;
        terms.push_back(l);
      }
    }
    if (toggles.csy) {
      if (s.warped_frames.empty()) {
        ++local.skipped_csy;
      } else {
        const EncoderOutput neg = encode_stage1(tape, model, s.caption, s.warped_frames, s.mask);
        Var l = csy_loss(tape, model, pos, neg);
        local.csy += static_cast<double>(tape.scalar(l));
        ++n_csy;
        terms.push_back(l);
      }
    }
    per_sample.push_back(terms.empty() ? tape.constant(Mat<T>::Zero(1, 1)) : tape.sum(terms));
  }
  const T inv = T(1) / static_cast<T>(batch.size());
  Var total = tape.scale(tape.sum(per_sample), inv);
  if (breakdown != nullptr) {
    local.msm /= static_cast<double>(batch.size());
    if (n_align > 0) local.align /= n_align;
    if (n_csy > 0) local.csy /= n_csy;
    local.total = static_cast<double>(tape.scalar(total));
    *breakdown = local;
  }
  return total;
}

#define PROCAP_INSTANTIATE(T)                                                                      \
  template EncoderOutput encode_stage1<T>(ag::Tape<T>&, ProcapModel<T>&, const std::vector<int>&,  \
                                          const std::vector<Mat<T>>&, const std::vector<std::uint8_t>&); \
  template Var msm_loss<T>(ag::Tape<T>&, ProcapModel<T>&, const EncoderOutput&,                  \
                           const std::vector<int>&, const std::vector<std::uint8_t>&, int*);       \
  template Var align_loss<T>(ag::Tape<T>&, ProcapModel<T>&, const EncoderOutput&,                \
                             const EncoderOutput&);                                                \
  template Var csy_loss<T>(ag::Tape<T>&, ProcapModel<T>&, const EncoderOutput&,                  \
                           const EncoderOutput&);                                                  \
  template Var stage1_loss<T>(ag::Tape<T>&, ProcapModel<T>&, const std::vector<Stage1Sample<T>>&, \
                              const LossToggles&, LossBreakdown*);

PROCAP_INSTANTIATE(float)
PROCAP_INSTANTIATE(double)

#undef PROCAP_INSTANTIATE

}  // namespace procap::procnet
