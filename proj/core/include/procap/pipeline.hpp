#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "procap/config.hpp"
#include "procap/interp.hpp"
#include "procap/procedure.hpp"
#include "procap/sampler.hpp"
#include "procap/synthdata.hpp"
#include "procap/trainer.hpp"
#include "procap/vq.hpp"

// Glue between the data modules and the trainers: procedure precomputation, the on-disk
// layout under a dataset root, and Example assembly.
namespace procap::pipeline {

struct ProcedureOptions {
  ProcedureSource interpolator = ProcedureSource::blend;
  interp::MaskMode blend_mask = interp::MaskMode::constant;
  sampler::Strategy similarity = sampler::Strategy::visual_text;
  int process_length = 7;
  int keyframes = 2;

  static ProcedureOptions from(const ConfigFile& cfg);
};

// Pseudo-frames then confidence sampling. The caption only feeds the visual-text scorer;
// without one the visual-only similarity is used.
KeyframeProcedure build_procedure(const synth::Record& record, const ProcedureOptions& options,
                                  bool use_caption);

// Rebuilds the scene-level record behind a manifest entry; frames come from the PNGs.
synth::Record load_record(const std::filesystem::path& root, const synth::ManifestRecord& entry,
                          synth::Split split, int index, const DatasetConfig& cfg, const synth::Vocabulary& vocab);
std::vector<synth::Record> load_split(const std::filesystem::path& root, synth::Split split);

// procedures/<id>_kJ.png for the sampled keyframes plus procedures_<split>.jsonl.
void write_procedures(const std::filesystem::path& root, synth::Split split,
                      const std::vector<synth::Record>& records, const std::vector<KeyframeProcedure>& procedures);
std::vector<KeyframeProcedure> load_procedures(const std::filesystem::path& root, synth::Split split,
                                               const std::vector<synth::Record>& records);

std::vector<trainer::Example> make_examples(const std::vector<synth::Record>& records,
                                            const std::vector<KeyframeProcedure>& procedures,
                                            const vq::PatchEmbedder& embedder, const vq::Codebook* codebook);

// Full in-memory preparation used by tests and the acceptance harness.
struct PreparedData {
  synth::Vocabulary vocab;
  std::map<synth::Split, std::vector<synth::Record>> records;
  std::map<synth::Split, std::vector<KeyframeProcedure>> procedures;
};
PreparedData prepare_in_memory(const DatasetConfig& data, const ProcedureOptions& options);

// Endpoint frames of every record, the codebook fit corpus.
std::vector<Frame> codebook_corpus(const std::vector<synth::Record>& records,
                                   const std::vector<KeyframeProcedure>* procedures = nullptr);

}  // namespace procap::pipeline
