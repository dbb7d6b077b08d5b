#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string_view>
#include <vector>

#include "procap/autograd.hpp"
#include "procap/frame.hpp"
#include "procap/model.hpp"
#include "procap/util.hpp"

namespace procap::procnet {

// ---- multi-granularity masking ----

enum class MaskScheme : std::uint8_t { entire, random_patch, in_block, out_block };
inline constexpr std::array<double, 4> kSchemeProbabilities = {0.1, 0.7, 0.1, 0.1};
inline constexpr double kPatchRateLow = 0.2;
inline constexpr double kPatchRateHigh = 0.5;
inline constexpr double kBlockAreaLow = 0.2;
inline constexpr double kBlockAreaHigh = 0.8;

std::string_view name(MaskScheme s);

// Cells [x1, x2) x [y1, y2) of the patch grid, strictly inside the border.
struct BlockRegion {
  int x1 = 0, y1 = 0, x2 = 0, y2 = 0;
  double target_ratio = 0;  // requested area ratio before snapping to the grid

  int width() const { return x2 - x1; }
  int height() const { return y2 - y1; }
  int cells() const { return width() * height(); }
  bool contains(int x, int y) const { return x >= x1 && x < x2 && y >= y1 && y < y2; }
};

struct MaskIndexSet {
  std::vector<std::uint8_t> flags;  // one per visual position, frame-major
  MaskScheme scheme = MaskScheme::entire;
  std::optional<BlockRegion> region;
  double patch_rate = 0;  // random_patch only

  int count() const;
};

MaskScheme sample_scheme(Rng& rng);
// Strictly interior on grids of at least 3x3; smaller grids allow any proper sub-rectangle.
BlockRegion sample_block(Rng& rng, int grid_h, int grid_w);
MaskIndexSet block_mask(const BlockRegion& region, int frames, int grid_h, int grid_w, bool inside);
MaskIndexSet sample_mask(Rng& rng, int frames, int grid_h, int grid_w);
MaskIndexSet sample_mask(Rng& rng, MaskScheme scheme, int frames, int grid_h, int grid_w);

// Flagged rows become e_m; others are copied.
MatF apply_mask(const MatF& visual, const std::vector<std::uint8_t>& flags, const RowVec<float>& e_m);

// ---- warping negatives ----

enum class WarpStrategy : std::uint8_t { batch_swap, frame_shuffle, color_shift, affine };
inline constexpr double kAffineAngleDeg = 30.0;
inline constexpr double kAffineShift = 0.1;
inline constexpr double kAffineScale = 0.1;
inline constexpr double kColorShiftLow = 0.1;
inline constexpr double kColorShiftHigh = 0.3;

std::string_view name(WarpStrategy s);

struct AffineParams {
  double theta_deg = 0;
  double tx = 0;
  double ty = 0;
  double scale = 1;
};

struct WarpParams {
  WarpStrategy strategy = WarpStrategy::frame_shuffle;
  AffineParams affine;
  int channel = 0;
  double shift = 0;
  std::vector<int> permutation;  // frame_shuffle: output i takes input permutation[i]
  int swap_index = 0;            // batch_swap: frame replaced
  int swap_source = 0;           // batch_swap: donor record within the batch
};

// Output pixel x samples the input at A x (centered pixel coordinates), bilinear, zero fill.
Frame affine_warp(const Frame& frame, const AffineParams& params);
Frame color_shift(const Frame& frame, int channel, double a, bool clamp = true);

// Uniform strategy; batch_swap falls back to frame_shuffle without a donor.
WarpParams sample_warp(Rng& rng, int length, int batch_size, int self_index);
// Applies params; a shuffle that would reproduce the input swaps the first differing
// neighbours instead, and an all-identical sequence falls back to a color shift.
std::vector<Frame> warp_negative(const std::vector<Frame>& frames, WarpParams& params,
                                 const std::vector<const std::vector<Frame>*>& batch, Rng& rng);

// ---- stage-1 objective ----

struct LossToggles {
  bool msm = true;
  bool align = true;
  bool csy = true;
};

// Everything one record contributes to a stage-1 step.
template <typename T>
struct Stage1Sample {
  std::vector<int> caption;            // BOS ... EOS
  std::vector<int> negative_caption;   // empty: align term skipped
  std::vector<Mat<T>> frames;          // k + 2 patch embeddings
  std::vector<Mat<T>> warped_frames;   // empty: csy term skipped
  std::vector<int> targets;            // (k + 2) n_I token ids
  std::vector<std::uint8_t> mask;      // (k + 2) n_I flags
};

struct LossBreakdown {
  double msm = 0;
  double align = 0;
  double csy = 0;
  double total = 0;
  int empty_masks = 0;
  int skipped_align = 0;
  int skipped_csy = 0;
};

// Encoded stage-1 sequence with its row layout.
struct EncoderOutput {
  ag::Var states;
  EncoderLayout layout;
};

template <typename T>
EncoderOutput encode_stage1(ag::Tape<T>& tape, ProcapModel<T>& model, const std::vector<int>& caption,
                            const std::vector<Mat<T>>& frames, const std::vector<std::uint8_t>& mask);

// Mean NLL of targets over flagged visual positions; an empty mask yields 0 and bumps
// `empty_counter` when given.
template <typename T>
ag::Var msm_loss(ag::Tape<T>& tape, ProcapModel<T>& model, const EncoderOutput& out,
                 const std::vector<int>& targets, const std::vector<std::uint8_t>& mask,
                 int* empty_counter = nullptr);
template <typename T>
ag::Var align_loss(ag::Tape<T>& tape, ProcapModel<T>& model, const EncoderOutput& pos,
                   const EncoderOutput& neg);
template <typename T>
ag::Var csy_loss(ag::Tape<T>& tape, ProcapModel<T>& model, const EncoderOutput& pos,
                 const EncoderOutput& neg);

// Mean over samples of L_msm + L_align + L_csy (enabled terms only, unweighted).
template <typename T>
ag::Var stage1_loss(ag::Tape<T>& tape, ProcapModel<T>& model,
                    const std::vector<Stage1Sample<T>>& batch, const LossToggles& toggles,
                    LossBreakdown* breakdown = nullptr);

// Picks a derangement partner for every index (i -> (i + shift) mod n, shift in [1, n)).
std::vector<int> derangement(Rng& rng, int n);

}  // namespace procap::procnet
