#include <iostream>

#include "CLI11.hpp"
#include "commands.hpp"
#include "procap/error.hpp"

using namespace procap;

namespace {

void add_common(CLI::App* cmd, cli::Common& c, bool data = true) {
  cmd->add_option("--config", c.config, "key=value config file")->check(CLI::ExistingFile);
  cmd->add_option("--set", c.sets, "override one config key (key=value), repeatable");
  cmd->add_option("--out", c.out, "output root (default $PROCAP_OUT_ROOT or ./procap_out)");
  if (data) cmd->add_option("--data", c.data, "dataset root (default <out>/data)");
  cmd->add_flag("--force", c.force, "overwrite outputs produced under a different configuration");
}

int report(const char* category, const std::string& what, int code) {
  std::cerr << "procap: error[" << category << "]: " << what << '\n';
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Procedure-aware change captioning on a synthetic scene world"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all", "show help for every subcommand");

  cli::Common common;
  cli::TrainFlags train;
  cli::CaptionFlags cap;
  cli::SampleFlags sample;
  cli::EvalFlags ev;
  cli::BenchFlags bench;

  auto* gen = app.add_subcommand("gen-data", "render the synthetic before/after dataset");
  add_common(gen, common);
  auto* pre = app.add_subcommand("precompute", "interpolate pseudo-frames and sample keyframes for every split");
  add_common(pre, common);
  auto* fit = app.add_subcommand("fit-codebook", "fit the patch codebook and write the frozen embedder");
  add_common(fit, common);

  auto* s1 = app.add_subcommand("train-stage1", "procedure modeling: masked reconstruction, alignment, coherence");
  add_common(s1, common);
  s1->add_flag("--resume", train.resume, "continue from <out>/stage1");
  s1->add_option("--checkpoint-every", train.checkpoint_every, "also checkpoint every N steps");

  auto* s2 = app.add_subcommand("train-stage2", "captioning with procedure queries");
  add_common(s2, common);
  s2->add_flag("--from-scratch", train.from_scratch, "skip the stage-1 encoder transfer");
  s2->add_flag("--resume", train.resume, "continue from <out>/stage2");
  s2->add_option("--checkpoint-every", train.checkpoint_every, "also checkpoint every N steps");

  auto* capc = app.add_subcommand("caption", "caption one before/after image pair");
  add_common(capc, common, false);
  capc->add_option("--ckpt", cap.checkpoint, "stage-2 checkpoint directory (default <out>/stage2)");
  capc->add_option("--before", cap.before, "before image (PNG)")->required();
  capc->add_option("--after", cap.after, "after image (PNG)")->required();
  capc->add_option("--beam", cap.beam, "beam width; 0 decodes greedily");

  auto* sf = app.add_subcommand("sample-frames", "show the keyframes picked for one pair");
  add_common(sf, common);
  sf->add_option("--before", sample.before, "before image (PNG)");
  sf->add_option("--after", sample.after, "after image (PNG)");
  sf->add_option("--id", sample.record_id, "dataset record id instead of image files");
  sf->add_option("--split", sample.split, "split holding --id");
  sf->add_option("--sheet", sample.sheet, "contact sheet path (default <out>/sample_frames.png)");

  auto* evc = app.add_subcommand("eval", "caption a split and score BLEU-4, CIDEr, exact match, slots");
  add_common(evc, common);
  evc->add_option("--ckpt", ev.checkpoint, "stage-2 checkpoint directory (default <out>/stage2)");
  evc->add_option("--split", ev.split, "train | val | test");
  evc->add_option("--beam", ev.beam, "beam width; 0 decodes greedily");
  evc->add_option("--limit", ev.limit, "score only the first N records");

  auto* bc = app.add_subcommand("bench", "attention op counts, encoder time and TPS per query length");
  add_common(bc, common, false);
  bc->add_option("--k", bench.k_list, "comma-separated query lengths");
  bc->add_option("--path", bench.path, "implicit | explicit");
  bc->add_option("--pairs", bench.pairs, "timed pairs per k");
  bc->add_option("--repeats", bench.repeats, "encoder timing repeats (median)");
  bc->add_option("--warmup", bench.warmup, "untimed pairs before TPS timing (>= 3)");

  auto* keys = app.add_subcommand("keys", "list every config key with its default as a markdown table");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report("config", e.what(), 2);
  }

  try {
    if (*keys) return cli::list_keys(std::cout);
    if (*gen) return cli::gen_data(common);
    if (*pre) return cli::precompute(common);
    if (*fit) return cli::fit_codebook(common);
    if (*s1) return cli::train_stage1(common, train);
    if (*s2) return cli::train_stage2(common, train);
    if (*capc) return cli::caption(common, cap);
    if (*sf) return cli::sample_frames(common, sample);
    if (*evc) return cli::evaluate(common, ev);
    if (*bc) return cli::bench(common, bench);
  } catch (const ConfigError& e) {
    return report("config", e.what(), 2);
  } catch (const MissingArtifactError& e) {
    return report("missing-artifact", e.what(), 3);
  } catch (const std::exception& e) {
    return report("runtime", e.what(), 1);
  }
  return 1;
}
