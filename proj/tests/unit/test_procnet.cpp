#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "procap/error.hpp"
#include "procap/procnet.hpp"
#include "procap/util.hpp"

using namespace procap;
using namespace procap::procnet;

namespace {

ModelConfig small_model(int layers = 1) {
  ModelConfig mc;
  mc.image_size = 16;
  mc.patch_size = 4;
  mc.d_model = 16;
  mc.n_heads = 2;
  mc.ffn_mult = 2;
  mc.enc_layers = layers;
  mc.dec_layers = 1;
  mc.d_decoder = 16;
  mc.dec_heads = 2;
  mc.max_text_len = 8;
  mc.max_frames = 6;
  mc.codebook_size = 256;
  mc.vocab_size = 12;
  return mc;
}

Frame ramp(int h, int w, float offset) {
  Frame f(h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      for (int c = 0; c < 3; ++c) f.at(y, x, c) = std::fmod(offset + 0.03f * y + 0.05f * x + 0.1f * c, 1.0f);
    }
  }
  return f;
}

double channel_mean(const Frame& f, int c) {
  double s = 0;
  for (int y = 0; y < f.height; ++y) {
    for (int x = 0; x < f.width; ++x) s += f.at(y, x, c);
  }
  return s / (f.height * f.width);
}

Stage1Sample<float> zero_sample(const ModelConfig& mc, int k, Rng& rng) {
  Stage1Sample<float> s;
  s.caption = {1, 5, 6, 7, 2};
  s.negative_caption = {1, 8, 9, 2};
  const int n_i = mc.patches_per_frame();
  std::normal_distribution<float> nd;
  for (int f = 0; f < k + 2; ++f) {
    MatF m(n_i, mc.d_model);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = nd(rng);
    s.frames.push_back(m);
    s.warped_frames.push_back(-m);
  }
  for (int i = 0; i < (k + 2) * n_i; ++i) {
    s.targets.push_back(static_cast<int>(rng() % 256));
    s.mask.push_back(i % 3 == 0);
  }
  return s;
}

}  // namespace

TEST_SUITE("procnet") {
  TEST_CASE("entire masks every visual position") {
    Rng rng(1);
    const auto m = sample_mask(rng, MaskScheme::entire, 4, 8, 8);
    CHECK(m.count() == 256);
    CHECK(m.flags.size() == 256u);
  }

  TEST_CASE("in-block and out-block are exact complements per frame") {
    BlockRegion r{2, 2, 6, 6, 0.25};
    const auto in = block_mask(r, 4, 8, 8, true);
    const auto out = block_mask(r, 4, 8, 8, false);
    CHECK(in.count() == 16 * 4);
    CHECK(out.count() == 48 * 4);
    for (std::size_t i = 0; i < in.flags.size(); ++i) CHECK(in.flags[i] + out.flags[i] == 1);
  }

  TEST_CASE("sampled block regions stay strictly interior with bounded area") {
    Rng rng(5);
    for (int trial = 0; trial < 2000; ++trial) {
      const auto r = sample_block(rng, 8, 8);
      REQUIRE(r.x1 > 0);
      REQUIRE(r.y1 > 0);
      REQUIRE(r.x2 < 8);
      REQUIRE(r.y2 < 8);
      REQUIRE(r.x1 < r.x2);
      REQUIRE(r.y1 < r.y2);
      REQUIRE(r.target_ratio >= kBlockAreaLow);
      REQUIRE(r.target_ratio <= kBlockAreaHigh);
      const auto m = sample_mask(rng, MaskScheme::in_block, 3, 8, 8);
      REQUIRE(m.count() == m.region->cells() * 3);
    }
  }

  TEST_CASE("random-patch rate and scheme frequencies match their distributions") {
    Rng rng(9);
    double rate = 0;
    for (int i = 0; i < 10000; ++i) rate += sample_mask(rng, MaskScheme::random_patch, 4, 4, 4).count() / 64.0;
    rate /= 10000;
    CHECK(rate >= 0.33);
    CHECK(rate <= 0.37);
    std::array<int, 4> hits{};
    for (int i = 0; i < 10000; ++i) ++hits[static_cast<std::size_t>(sample_scheme(rng))];
    for (std::size_t s = 0; s < 4; ++s) CHECK(std::abs(hits[s] / 10000.0 - kSchemeProbabilities[s]) <= 0.02);
  }

  TEST_CASE("apply_mask replaces exactly the flagged rows") {
    MatF v = MatF::Random(6, 4);
    RowVec<float> em = RowVec<float>::Constant(4, 9.0f);
    CHECK(apply_mask(v, std::vector<std::uint8_t>(6, 0), em) == v);
    const auto all = apply_mask(v, std::vector<std::uint8_t>(6, 1), em);
    for (int r = 0; r < 6; ++r) CHECK(all.row(r) == em);
    const std::vector<std::uint8_t> mixed = {1, 0, 0, 1, 0, 1};
    const auto m = apply_mask(v, mixed, em);
    for (int r = 0; r < 6; ++r) CHECK((m.row(r) != v.row(r)) == static_cast<bool>(mixed[static_cast<std::size_t>(r)]));
  }

  TEST_CASE("identity affine parameters reproduce the frame exactly") {
    const auto f = ramp(16, 12, 0.1f);
    CHECK(affine_warp(f, AffineParams{}) == f);
  }

  TEST_CASE("frame shuffle is never the identity and is the swap on two frames") {
    Rng rng(3);
    const std::vector<Frame> two = {ramp(8, 8, 0.0f), ramp(8, 8, 0.5f)};
    auto draw_shuffle = [&](int len) {
      WarpParams w;
      do w = sample_warp(rng, len, 1, 0);
      while (w.strategy != WarpStrategy::frame_shuffle);
      return w;
    };
    WarpParams p = draw_shuffle(2);
    const auto out = warp_negative(two, p, {}, rng);
    CHECK(out[0] == two[1]);
    CHECK(out[1] == two[0]);
    for (int trial = 0; trial < 500; ++trial) {
      std::vector<Frame> seq;
      const int len = 2 + trial % 4;
      for (int i = 0; i < len; ++i) seq.push_back(ramp(8, 8, 0.1f * static_cast<float>(i % 3)));
      WarpParams q = draw_shuffle(len);
      REQUIRE(warp_negative(seq, q, {}, rng) != seq);
    }
  }

  TEST_CASE("color shift moves one channel mean by exactly a before clamping") {
    const Frame gray(8, 8, 0.5f);
    const auto shifted = color_shift(gray, 0, 0.1, false);
    CHECK(channel_mean(shifted, 0) == doctest::Approx(0.6).epsilon(1e-6));
    CHECK(channel_mean(shifted, 1) == doctest::Approx(0.5));
    CHECK(channel_mean(shifted, 2) == doctest::Approx(0.5));
    const auto clamped = color_shift(Frame(4, 4, 0.95f), 2, 0.2, true);
    CHECK(channel_mean(clamped, 2) == doctest::Approx(1.0));
  }

  TEST_CASE("sampled warps respect parameter ranges and batch fallbacks") {
    Rng rng(21);
    int strategies[4] = {};
    for (int i = 0; i < 4000; ++i) {
      const auto p = sample_warp(rng, 4, 8, 0);
      ++strategies[static_cast<int>(p.strategy)];
      if (p.strategy == WarpStrategy::affine) {
        REQUIRE(std::abs(p.affine.theta_deg) <= kAffineAngleDeg);
        REQUIRE(std::abs(p.affine.tx) <= kAffineShift);
        REQUIRE(std::abs(p.affine.ty) <= kAffineShift);
        REQUIRE(std::abs(p.affine.scale - 1.0) <= kAffineScale);
      }
      if (p.strategy == WarpStrategy::color_shift) {
        REQUIRE(std::abs(p.shift) >= kColorShiftLow);
        REQUIRE(std::abs(p.shift) <= kColorShiftHigh);
      }
      if (p.strategy == WarpStrategy::batch_swap) REQUIRE(p.swap_source != 0);
    }
    for (int s : strategies) CHECK(std::abs(s / 4000.0 - 0.25) < 0.03);
    for (int i = 0; i < 200; ++i) CHECK(sample_warp(rng, 4, 1, 0).strategy != WarpStrategy::batch_swap);
  }

  TEST_CASE("batch swap takes one frame from the donor record") {
    Rng rng(4);
    const std::vector<Frame> self = {ramp(8, 8, 0.0f), ramp(8, 8, 0.2f), ramp(8, 8, 0.4f)};
    const std::vector<Frame> donor = {ramp(8, 8, 0.6f), ramp(8, 8, 0.7f), ramp(8, 8, 0.8f)};
    WarpParams p;
    p.strategy = WarpStrategy::batch_swap;
    p.swap_index = 1;
    p.swap_source = 1;
    const auto out = warp_negative(self, p, {&self, &donor}, rng);
    CHECK(out[0] == self[0]);
    CHECK(out[1] == donor[1]);
    CHECK(out[2] == self[2]);
  }

  TEST_CASE("derangements never fix a point") {
    Rng rng(8);
    for (int n = 2; n < 12; ++n) {
      const auto d = derangement(rng, n);
      for (int i = 0; i < n; ++i) CHECK(d[static_cast<std::size_t>(i)] != i);
      auto sorted = d;
      std::sort(sorted.begin(), sorted.end());
      for (int i = 0; i < n; ++i) CHECK(sorted[static_cast<std::size_t>(i)] == i);
    }
  }

  TEST_CASE("zero-initialized heads give the closed-form stage-1 losses") {
    const auto mc = small_model();
    ProcapModel<float> model(mc, 3);
    Rng rng(2);
    std::vector<Stage1Sample<float>> batch = {zero_sample(mc, 2, rng), zero_sample(mc, 2, rng)};
    ag::Tape<float> tape(false);
    LossBreakdown br;
    const double total = tape.scalar(stage1_loss(tape, model, batch, LossToggles{}, &br));
    CHECK(br.msm == doctest::Approx(std::log(256.0)).epsilon(1e-6));
    CHECK(br.align == doctest::Approx(2 * std::log(2.0)).epsilon(1e-6));
    CHECK(br.csy == doctest::Approx(2 * std::log(2.0)).epsilon(1e-6));
    CHECK(total == doctest::Approx(std::log(256.0) + 4 * std::log(2.0)).epsilon(1e-6));

    ag::Tape<float> t2(false);
    LossBreakdown only;
    t2.scalar(stage1_loss(t2, model, batch, LossToggles{true, false, false}, &only));
    CHECK(only.total == doctest::Approx(std::log(256.0)).epsilon(1e-6));
  }

  TEST_CASE("degenerate inputs: empty mask and missing negatives") {
    const auto mc = small_model();
    ProcapModel<float> model(mc, 3);
    Rng rng(2);
    auto s = zero_sample(mc, 1, rng);
    std::fill(s.mask.begin(), s.mask.end(), 0);
    s.negative_caption.clear();
    s.warped_frames.clear();
    ag::Tape<float> tape(false);
    LossBreakdown br;
    const double total = tape.scalar(stage1_loss(tape, model, {s}, LossToggles{}, &br));
    CHECK(br.empty_masks == 1);
    CHECK(br.skipped_align == 1);
    CHECK(br.skipped_csy == 1);
    CHECK(total == 0.0);
  }

  TEST_CASE("identical coherent and warped inputs cannot beat the 2 ln 2 floor") {
    const auto mc = small_model();
    ProcapModel<double> model(mc, 3);
    for (auto* p : model.params().all()) {
      if (p->name.rfind("head.csy", 0) == 0) p->value.setConstant(0.3);
    }
    Rng rng(6);
    Stage1Sample<double> s;
    s.caption = {1, 5, 2};
    for (int f = 0; f < 3; ++f) s.frames.push_back(Mat<double>::Random(mc.patches_per_frame(), mc.d_model));
    s.warped_frames = s.frames;
    s.targets.assign(3 * 16, 0);
    s.mask.assign(3 * 16, 0);
    ag::Tape<double> tape(false);
    LossBreakdown br;
    tape.scalar(stage1_loss(tape, model, {s}, LossToggles{false, false, true}, &br));
    CHECK(br.csy >= 2 * std::log(2.0) - 1e-12);
  }

  TEST_CASE("stage-1 terms stay non-negative on random heads") {
    const auto mc = small_model(2);
    ProcapModel<float> model(mc, 4);
    std::mt19937_64 g(4);
    std::normal_distribution<float> nd;
    for (auto* p : model.params().all()) {
      if (p->name.rfind("head.", 0) == 0) {
        for (Eigen::Index i = 0; i < p->value.size(); ++i) p->value.data()[i] = nd(g);
      }
    }
    Rng rng(3);
    for (int trial = 0; trial < 5; ++trial) {
      ag::Tape<float> tape(false);
      LossBreakdown br;
      tape.scalar(stage1_loss(tape, model, {zero_sample(mc, 2, rng)}, LossToggles{}, &br));
      CHECK(br.msm >= 0);
      CHECK(br.align >= 0);
      CHECK(br.csy >= 0);
    }
  }

  TEST_CASE("a zero-layer encoder returns its input") {
    auto mc = small_model(0);
    ProcapModel<float> model(mc, 1);
    ag::Tape<float> tape(false);
    const std::vector<MatF> frames = {MatF::Random(16, 16), MatF::Random(16, 16)};
    ag::Var in = model.visual_input(tape, frames);
    CHECK(tape.value(model.encode(tape, in)) == tape.value(in));
  }

  TEST_CASE("swapping two content rows swaps the outputs when positions are swapped too") {
    const auto mc = small_model(2);
    ProcapModel<double> model(mc, 7);
    Mat<double> x = Mat<double>::Random(10, mc.d_model);
    Mat<double> y = x;
    y.row(3).swap(y.row(7));
    ag::Tape<double> ta(false), tb(false);
    const auto a = ta.value(model.encode(ta, ta.constant(x)));
    const auto b = tb.value(model.encode(tb, tb.constant(y)));
    CHECK((a.row(3) - b.row(7)).norm() < 1e-12);
    CHECK((a.row(7) - b.row(3)).norm() < 1e-12);
    CHECK((a.row(0) - b.row(0)).norm() < 1e-12);
  }

  TEST_CASE("stage-1 input layout and masking never touch the caption rows") {
    const auto mc = small_model();
    ProcapModel<float> model(mc, 3);
    const std::vector<int> caption = {1, 5, 6, 2};
    const std::vector<MatF> frames = {MatF::Random(16, 16), MatF::Random(16, 16), MatF::Random(16, 16)};
    std::vector<std::uint8_t> all(48, 1), none(48, 0);
    ag::Tape<float> tape(false);
    EncoderLayout la, lb;
    const auto masked = tape.value(model.stage1_input(tape, caption, frames, &all, &la));
    const auto clean = tape.value(model.stage1_input(tape, caption, frames, &none, &lb));
    CHECK(la.total() == 2 + 4 + 48);
    CHECK(masked.rows() == la.total());
    CHECK(masked.topRows(la.visual_begin()) == clean.topRows(lb.visual_begin()));
    CHECK(masked.bottomRows(48) != clean.bottomRows(48));
  }
}
