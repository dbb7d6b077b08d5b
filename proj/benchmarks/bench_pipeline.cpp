#include <benchmark/benchmark.h>

#include "procap/interp.hpp"
#include "procap/sampler.hpp"
#include "procap/synthdata.hpp"
#include "procap/vq.hpp"

namespace {

const procap::synth::Record& sample_record() {
  static const auto rec = procap::synth::generate_record(
      5, procap::synth::Split::train, 0, procap::synth::SceneConfig{},
      procap::synth::grammar_vocabulary(procap::synth::default_grammar()));
  return rec;
}

void BM_RenderScene(benchmark::State& state) {
  const auto& rec = sample_record();
  for (auto _ : state) benchmark::DoNotOptimize(procap::synth::render(rec.before, 32).data.data());
}
BENCHMARK(BM_RenderScene);

// Pseudo-frames, similarity profile and top-k selection for one pair.
void BM_SampleKeyframes(benchmark::State& state) {
  const auto& rec = sample_record();
  const procap::interp::BlendInterpolator blend;
  const auto strategy = state.range(0) == 0 ? procap::sampler::Strategy::visual_only : procap::sampler::Strategy::visual_text;
  procap::sampler::SimilarityOptions opt;
  opt.strategy = strategy;
  for (auto _ : state) {
    const auto seq = procap::interp::generate_procedure(blend, rec.frames, 7);
    const auto p = procap::sampler::similarity_profile(rec.frames, seq, opt, rec.caption.slots);
    benchmark::DoNotOptimize(procap::sampler::sample_keyframes(rec.frames, seq, procap::sampler::confidence_scores(p), 2));
  }
}
BENCHMARK(BM_SampleKeyframes)->Arg(0)->Arg(1);

void BM_Tokenize(benchmark::State& state) {
  const auto& rec = sample_record();
  const std::vector<procap::Frame> corpus = {rec.frames.before, rec.frames.after};
  const auto cb = procap::vq::fit_codebook(corpus, 8, 4, 1);
  for (auto _ : state) benchmark::DoNotOptimize(procap::vq::tokenize(rec.frames.after, cb));
}
BENCHMARK(BM_Tokenize);

}  // namespace
BENCHMARK_MAIN();
