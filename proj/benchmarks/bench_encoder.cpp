#include <benchmark/benchmark.h>

#include "procap/captioner.hpp"
#include "procap/model.hpp"
#include "procap/synthdata.hpp"

namespace {

procap::ModelConfig desk_model() {
  procap::ModelConfig mc;
  mc.vocab_size = procap::synth::grammar_vocabulary(procap::synth::default_grammar()).size();
  return mc;
}

// Encoder forward over K frames; attention cost grows with (K n_I)^2.
void BM_EncoderForward(benchmark::State& state) {
  const int K = static_cast<int>(state.range(0));
  auto mc = desk_model();
  procap::ProcapModel<float> model(mc, 1);
  const procap::MatF x = procap::MatF::Random(K * mc.patches_per_frame(), mc.d_model);
  for (auto _ : state) {
    procap::ag::Tape<float> tape(false);
    benchmark::DoNotOptimize(tape.value(model.encode(tape, tape.constant(x))).data());
  }
  state.counters["n_P"] = K * mc.patches_per_frame();
}
BENCHMARK(BM_EncoderForward)->Arg(3)->Arg(4)->Arg(6)->Arg(9)->Unit(benchmark::kMillisecond);

// Greedy captioning of one pair through k query groups.
void BM_CaptionPair(benchmark::State& state) {
  const int k = static_cast<int>(state.range(0));
  auto mc = desk_model();
  procap::ProcapModel<float> model(mc, 1);
  model.init_queries(k);
  const procap::vq::PatchEmbedder embedder(mc.patch_size, mc.patches_per_frame(), mc.d_model, mc.embedder_seed);
  const procap::synth::SceneConfig sc;
  const auto vocab = procap::synth::grammar_vocabulary(procap::synth::default_grammar());
  const auto rec = procap::synth::generate_record(3, procap::synth::Split::test, 0, sc, vocab);
  std::size_t tokens = 0;
  for (auto _ : state) {
    tokens += procap::captioner::caption_pair(model, embedder, rec.frames, procap::synth::kBos, procap::synth::kEos).tokens();
  }
  state.counters["tokens_per_second"] = benchmark::Counter(static_cast<double>(tokens), benchmark::Counter::kIsRate);
}
BENCHMARK(BM_CaptionPair)->Arg(0)->Arg(1)->Arg(2)->Arg(4)->Arg(7)->Unit(benchmark::kMillisecond);

}  // namespace
