#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "procap/error.hpp"
#include "procap/trainer.hpp"
#include "support/tiny_data.hpp"

using namespace procap;
using namespace procap::trainer;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / ("procap_trainer_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

ConfigFile snapshot(const ModelConfig& mc, const TrainConfig& tc) {
  ConfigFile cfg;
  mc.write_to(cfg);
  tc.write_to(cfg);
  return cfg;
}

}  // namespace

TEST_SUITE("trainer") {
  TEST_CASE("learning-rate schedules") {
    TrainConfig tc;
    CHECK(lr_at(0, tc, LrGroup::stage1) == doctest::Approx(1e-6));
    CHECK(lr_at(2500, tc, LrGroup::stage1) == doctest::Approx(0.5 * (1e-6 + 1e-4)));
    CHECK(lr_at(5000, tc, LrGroup::stage1) == doctest::Approx(1e-4));
    CHECK(lr_at(10000, tc, LrGroup::stage1) == doctest::Approx(1e-4));
    for (int s : {0, 17, 999}) CHECK(lr_at(s, tc, LrGroup::encoder, 1000) == doctest::Approx(5e-5));
    CHECK(lr_at(0, tc, LrGroup::decoder, 1000) == 0.0);
    CHECK(lr_at(50, tc, LrGroup::decoder, 1000) == doctest::Approx(2.5e-5));
    CHECK(lr_at(100, tc, LrGroup::decoder, 1000) == doctest::Approx(5e-5));
    CHECK(lr_at(900, tc, LrGroup::decoder, 1000) == doctest::Approx(5e-5));
  }

  TEST_CASE("adam minimizes a quadratic and clipping reports the pre-clip norm") {
    ag::ParameterStore<float> store;
    auto& p = store.add("x", MatF::Constant(1, 2, 3.0f));
    Adam adam;
    for (int i = 0; i < 2000; ++i) {
      p.grad = 2 * p.value;
      adam.step(store, [](const std::string&) { return 1e-2; });
    }
    CHECK(p.value.norm() < 1e-2f);
    p.grad = MatF::Constant(1, 2, 3.0f);
    CHECK(Adam::clip(store, 1.0) == doctest::Approx(std::sqrt(18.0)));
    CHECK(p.grad.norm() == doctest::Approx(1.0f));
    p.trainable = false;
    const MatF before = p.value;
    p.grad.setOnes();
    adam.step(store, [](const std::string&) { return 1.0; });
    CHECK(p.value == before);
  }

  TEST_CASE("parameter files round trip and reject dimension mismatches as config errors") {
    const auto dir = scratch_dir("params");
    ag::ParameterStore<float> a;
    a.add("enc.w", MatF::Random(3, 4));
    a.add("dec.w", MatF::Random(2, 2));
    write_params(dir / "p.bin", a);
    ag::ParameterStore<float> b;
    b.add("enc.w", MatF::Zero(3, 4));
    b.add("dec.w", MatF::Zero(2, 2));
    CHECK(read_params(dir / "p.bin", b, true).size() == 2u);
    CHECK(b.hash() == a.hash());
    ag::ParameterStore<float> only_enc;
    only_enc.add("enc.w", MatF::Zero(3, 4));
    CHECK(read_params(dir / "p.bin", only_enc, false, "enc.") == std::vector<std::string>{"enc.w"});
    ag::ParameterStore<float> wrong;
    wrong.add("enc.w", MatF::Zero(4, 3));
    CHECK_THROWS_AS(read_params(dir / "p.bin", wrong, false, "enc."), ConfigError);
    ag::ParameterStore<float> extra;
    extra.add("enc.w", MatF::Zero(3, 4));
    extra.add("dec.w", MatF::Zero(2, 2));
    extra.add("queries", MatF::Zero(1, 1));
    CHECK_THROWS(read_params(dir / "p.bin", extra, true));
    fs::remove_all(dir);
  }

  TEST_CASE("stage-1 batches have the expected shape") {
    auto tiny = testing::make_tiny();
    ProcapModel<float> model(tiny.model, 1);
    Stage1Trainer s1(model, tiny.embedder, tiny.train, testing::tiny_train(1));
    const auto batch = s1.make_batch(3);
    REQUIRE(batch.size() == 4u);
    for (const auto& s : batch) {
      CHECK(s.frames.size() == 4u);
      CHECK(s.warped_frames.size() == 4u);
      CHECK(s.mask.size() == 64u);
      CHECK(s.targets.size() == 64u);
      CHECK(s.caption != s.negative_caption);
    }
    const auto again = s1.make_batch(3);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      CHECK(again[i].mask == batch[i].mask);
      CHECK(again[i].warped_frames == batch[i].warped_frames);
    }
  }

  TEST_CASE("toggling off align and coherence leaves only the reconstruction term") {
    auto tiny = testing::make_tiny();
    ProcapModel<float> model(tiny.model, 1);
    auto tc = testing::tiny_train(1);
    tc.use_align = false;
    tc.use_csy = false;
    Stage1Trainer s1(model, tiny.embedder, tiny.train, tc);
    const auto log = s1.step();
    CHECK(log.align == 0.0);
    CHECK(log.csy == 0.0);
    CHECK(log.loss == doctest::Approx(log.msm));
  }

  TEST_CASE("same seed gives identical parameters and the embedder stays frozen") {
    auto tiny = testing::make_tiny();
    const auto embedder_hash = tiny.embedder.hash();
    auto run = [&] {
      ProcapModel<float> model(tiny.model, 4);
      Stage1Trainer s1(model, tiny.embedder, tiny.train, testing::tiny_train(1));
      for (int i = 0; i < 6; ++i) s1.step();
      model.init_queries(2);
      Stage2Trainer s2(model, tiny.train, testing::tiny_train(2));
      for (int i = 0; i < 6; ++i) s2.step();
      return model.params().hash();
    };
    const auto a = run();
    CHECK(run() == a);
    CHECK(tiny.embedder.hash() == embedder_hash);
  }

  TEST_CASE("stage-1 resume from a checkpoint matches the uninterrupted run") {
    auto tiny = testing::make_tiny();
    const auto tc = testing::tiny_train(1);
    std::vector<double> straight;
    {
      ProcapModel<float> model(tiny.model, tc.seed);
      Stage1Trainer s1(model, tiny.embedder, tiny.train, tc);
      for (int i = 0; i < 10; ++i) straight.push_back(s1.step().loss);
    }
    const auto dir = scratch_dir("resume1");
    {
      ProcapModel<float> model(tiny.model, tc.seed);
      Stage1Trainer s1(model, tiny.embedder, tiny.train, tc);
      for (int i = 0; i < 5; ++i) CHECK(s1.step().loss == straight[static_cast<std::size_t>(i)]);
      save_checkpoint(dir, model, s1.optimizer(), snapshot(tiny.model, tc), tiny.prepared.vocab, tiny.embedder,
                      CheckpointInfo{1, s1.current_step(), 0});
    }
    auto ck = load_checkpoint(dir);
    CHECK(ck.info.step == 5);
    CHECK(ck.embedder.hash() == tiny.embedder.hash());
    Stage1Trainer resumed(*ck.model, ck.embedder, tiny.train, TrainConfig::from(ck.config));
    resumed.optimizer() = ck.adam;
    resumed.set_step(ck.info.step);
    for (int i = 5; i < 10; ++i) {
      const double l = resumed.step().loss;
      CHECK(std::abs(l - straight[static_cast<std::size_t>(i)]) <= 1e-5 * std::abs(straight[static_cast<std::size_t>(i)]));
    }
    fs::remove_all(dir);
  }

  TEST_CASE("stage-2 resume keeps queries and the decoder schedule") {
    auto tiny = testing::make_tiny();
    const auto tc = testing::tiny_train(2);
    std::vector<double> straight;
    {
      ProcapModel<float> model(tiny.model, tc.seed);
      model.init_queries(2);
      Stage2Trainer s2(model, tiny.train, tc);
      for (int i = 0; i < 10; ++i) straight.push_back(s2.step().loss);
    }
    const auto dir = scratch_dir("resume2");
    {
      ProcapModel<float> model(tiny.model, tc.seed);
      model.init_queries(2);
      Stage2Trainer s2(model, tiny.train, tc);
      for (int i = 0; i < 4; ++i) s2.step();
      save_checkpoint(dir, model, s2.optimizer(), snapshot(tiny.model, tc), tiny.prepared.vocab, tiny.embedder,
                      CheckpointInfo{2, s2.current_step(), 2});
    }
    auto ck = load_checkpoint(dir);
    CHECK(ck.model->keyframes() == 2);
    Stage2Trainer resumed(*ck.model, tiny.train, TrainConfig::from(ck.config));
    resumed.optimizer() = ck.adam;
    resumed.set_step(ck.info.step);
    for (int i = 4; i < 10; ++i) {
      const double l = resumed.step().loss;
      CHECK(std::abs(l - straight[static_cast<std::size_t>(i)]) <= 1e-5 * std::abs(straight[static_cast<std::size_t>(i)]));
    }
    fs::remove_all(dir);
  }

  TEST_CASE("missing artifacts carry a remediation hint") {
    const auto dir = scratch_dir("missing");
    CHECK_THROWS_AS(load_checkpoint(dir / "nothing"), MissingArtifactError);
    auto tiny = testing::make_tiny(20);
    ProcapModel<float> model(tiny.model, 1);
    try {
      transfer_encoder(dir / "nothing", model);
      FAIL("expected a missing-artifact error");
    } catch (const MissingArtifactError& e) {
      CHECK(std::string(e.what()).find("--from-scratch") != std::string::npos);
    }
    fs::remove_all(dir);
  }

  TEST_CASE("encoder transfer copies only encoder tensors") {
    auto tiny = testing::make_tiny(20);
    const auto tc = testing::tiny_train(1);
    const auto dir = scratch_dir("transfer");
    ProcapModel<float> trained(tiny.model, 8);
    Stage1Trainer s1(trained, tiny.embedder, tiny.train, tc);
    for (int i = 0; i < 3; ++i) s1.step();
    save_checkpoint(dir, trained, s1.optimizer(), snapshot(tiny.model, tc), tiny.prepared.vocab, tiny.embedder,
                    CheckpointInfo{1, 3, 0});
    ProcapModel<float> fresh(tiny.model, 9);
    const MatF dec_before = fresh.params().get("dec.out.w").value;
    const auto names = transfer_encoder(dir, fresh);
    CHECK_FALSE(names.empty());
    for (const auto& n : names) {
      CHECK(n.rfind("enc.", 0) == 0);
      CHECK(fresh.params().get(n).value == trained.params().get(n).value);
    }
    CHECK(fresh.params().get("dec.out.w").value == dec_before);
    fs::remove_all(dir);
  }

  TEST_CASE("stage 2 refuses a model with the wrong query count") {
    auto tiny = testing::make_tiny(20);
    ProcapModel<float> model(tiny.model, 1);
    model.init_queries(1);
    CHECK_THROWS_AS(Stage2Trainer(model, tiny.train, testing::tiny_train(2)), ConfigError);
  }

  TEST_CASE("step logs serialize as one json object per line") {
    StepLog log;
    log.step = 3;
    log.loss = 1.5;
    const auto s = log.json(1);
    CHECK(s.find('\n') == std::string::npos);
    CHECK(s.find("\"step\":3") != std::string::npos);
  }
}
