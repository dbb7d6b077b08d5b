#include <cmath>
#include <random>

#include "../support/gradcheck.hpp"
#include "../support/micro.hpp"
#include "doctest.h"
#include "procap/autograd.hpp"
#include "procap/captioner.hpp"
#include "procap/error.hpp"
#include "procap/procnet.hpp"

using namespace procap;
using procap::testing::gradient_check;

namespace {

Mat<double> random_mat(std::mt19937_64& rng, int r, int c, double s = 1.0) {
  std::normal_distribution<double> n(0.0, s);
  Mat<double> m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

}  // namespace

TEST_SUITE("autograd") {
  TEST_CASE("each primitive matches central differences") {
    std::mt19937_64 rng(3);
    ag::ParameterStore<double> store;
    auto& a = store.add("a", random_mat(rng, 5, 4));
    auto& w = store.add("w", random_mat(rng, 4, 4));
    auto& b = store.add("b", random_mat(rng, 1, 4));
    auto& g = store.add("g", random_mat(rng, 1, 4, 0.3));
    auto& row = store.add("row", random_mat(rng, 1, 4));
    const std::vector<std::uint8_t> flags = {0, 1, 0, 0, 1};
    auto build = [&](ag::Tape<double>& t) {
      ag::Var x = t.linear(t.param(a), t.param(w), t.param(b));
      x = t.layer_norm(x, t.param(g), t.param(b));
      x = t.gelu(x);
      x = t.replace_rows(x, t.param(row), flags);
      ag::Var att = t.attention(x, x, t.matmul(x, t.param(w)), 2, true);
      ag::Var cat = t.concat_rows({att, t.slice_rows(x, 1, 2)});
      ag::Var picked = t.add_row(t.gather_rows(cat, {0, 6, 3, 3}), t.param(row));
      ag::Var ce = t.cross_entropy(picked, {1, 0, 3, 2});
      ag::Var z = t.matmul(t.slice_rows(picked, 0, 1), t.constant(Mat<double>::Ones(4, 1)));
      return t.sum({ce, t.binary_cross_entropy(z, 1), t.binary_cross_entropy(t.scale(z, -2.0), 0)});
    };
    auto loss = [&] {
      ag::Tape<double> t(false);
      return t.scalar(build(t));
    };
    auto analytic = [&] {
      ag::Tape<double> t;
      t.backward(build(t));
    };
    const auto rep = gradient_check(store, loss, analytic, 1e-6);
    for (const auto& r : rep.rows) INFO(r.name << " " << r.rel_error);
    CHECK(rep.worst < 1e-6);
  }

  TEST_CASE("binary cross entropy closed form at +z / -z") {
    ag::Tape<double> t(false);
    Mat<double> zp(1, 1), zn(1, 1);
    zp(0, 0) = 1.0;
    zn(0, 0) = -1.0;
    const double l = t.scalar(t.sum({t.binary_cross_entropy(t.constant(zp), 1),
                                     t.binary_cross_entropy(t.constant(zn), 0)}));
    CHECK(l == doctest::Approx(2.0 * std::log1p(std::exp(-1.0))).epsilon(1e-12));
    CHECK(l == doctest::Approx(0.6265).epsilon(1e-3));
  }

  TEST_CASE("cross entropy of a hand-built two-position case") {
    ag::Tape<double> t(false);
    Mat<double> logits(2, 2);
    logits << 0.0, 0.0, std::log(3.0), 0.0;
    const double l = t.scalar(t.cross_entropy(t.constant(logits), {0, 0}));
    // brute force: position 1 p = 1/2, position 2 p = 3/4
    const double expect = (std::log(2.0) + std::log(4.0 / 3.0)) / 2.0;
    CHECK(l == doctest::Approx(expect).epsilon(1e-14));
  }

  TEST_CASE("no-grad tape refuses backward and frozen parameters get no gradient") {
    ag::ParameterStore<double> store;
    auto& p = store.add("frozen", Mat<double>::Ones(2, 2), false);
    ag::Tape<double> t;
    ag::Var v = t.matmul(t.param(p), t.param(p));
    ag::Var l = t.cross_entropy(v, {0, 1});
    t.backward(l);
    CHECK(p.grad.isZero());
    ag::Tape<double> ng(false);
    ag::Var l2 = ng.cross_entropy(ng.param(p), {0, 0});
    CHECK_THROWS_AS(ng.backward(l2), RuntimeFailure);
  }

  TEST_CASE("stage-1 and captioning losses match finite differences on the micro config") {
    auto micro = procap::testing::make_micro();
    ProcapModel<double>& model = *micro.model;
    auto stage1 = [&](ag::Tape<double>& t) {
      return procnet::stage1_loss(t, model, micro.stage1_batch, procnet::LossToggles{});
    };
    auto rep1 = gradient_check(
        model.params(), [&] { ag::Tape<double> t(false); return t.scalar(stage1(t)); },
        [&] { ag::Tape<double> t; t.backward(stage1(t)); });
    INFO("worst stage-1 tensor " << rep1.worst_name);
    CHECK(rep1.worst < 1e-4);

    auto stage2 = [&](ag::Tape<double>& t) {
      return captioner::caption_batch_loss(t, model, micro.caption_batch);
    };
    auto rep2 = gradient_check(
        model.params(), [&] { ag::Tape<double> t(false); return t.scalar(stage2(t)); },
        [&] { ag::Tape<double> t; t.backward(stage2(t)); });
    INFO("worst captioning tensor " << rep2.worst_name);
    CHECK(rep2.worst < 1e-4);
  }
}
