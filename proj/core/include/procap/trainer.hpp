#pragma once

#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <ostream>
#include <string>
#include <vector>

#include "procap/autograd.hpp"
#include "procap/config.hpp"
#include "procap/frame.hpp"
#include "procap/model.hpp"
#include "procap/procnet.hpp"
#include "procap/synthdata.hpp"
#include "procap/vq.hpp"

namespace procap::trainer {

enum class LrGroup { stage1, encoder, decoder };

// Piecewise-linear warmup then constant. total_steps is only used by the decoder group.
double lr_at(int step, const TrainConfig& cfg, LrGroup group, int total_steps = 0);

// One record ready for either stage.
struct Example {
  std::string id;
  std::vector<int> caption;       // BOS ... EOS
  synth::ChangeType change = synth::ChangeType::none;
  std::vector<Frame> procedure;   // k + 2 frames, endpoints first and last
  std::vector<MatF> embeds;       // patch embeddings of `procedure`
  std::vector<int> tokens;        // (k + 2) n_I codebook ids
};

// Adaptive moments, default betas, no weight decay.
class Adam {
 public:
  Adam(double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : beta1_(beta1), beta2_(beta2), eps_(eps) {}

  // Global L2 norm over trainable gradients; rescales in place when above max_norm > 0.
  static double clip(ag::ParameterStore<float>& store, double max_norm);
  void step(ag::ParameterStore<float>& store, const std::function<double(const std::string&)>& lr_for);

  long long steps() const { return t_; }
  void save(const std::filesystem::path& path) const;
  void load(const std::filesystem::path& path);

 private:
  double beta1_, beta2_, eps_;
  long long t_ = 0;
  std::map<std::string, MatF> m_, v_;
};

struct StepLog {
  int step = 0;
  double lr = 0;          // stage-1 lr, or the encoder lr in stage 2
  double lr_decoder = 0;  // stage 2 only
  double loss = 0;
  double msm = 0, align = 0, csy = 0;
  double grad_norm = 0;
  int empty_masks = 0;
  int skipped_align = 0;

  std::string json(int stage) const;
};

class Stage1Trainer {
 public:
  Stage1Trainer(ProcapModel<float>& model, const vq::PatchEmbedder& embedder,
                const std::vector<Example>& data, TrainConfig cfg);

  StepLog step();
  // Builds the batch of the given step without touching parameters.
  std::vector<procnet::Stage1Sample<float>> make_batch(int step) const;

  int current_step() const { return step_; }
  void set_step(int s) { step_ = s; }
  Adam& optimizer() { return adam_; }
  const Adam& optimizer() const { return adam_; }

 private:
  const std::vector<int>& order(int epoch) const;

  ProcapModel<float>& model_;
  const vq::PatchEmbedder& embedder_;
  const std::vector<Example>& data_;
  TrainConfig cfg_;
  Adam adam_;
  int step_ = 0;
  mutable std::map<int, std::vector<int>> orders_;
};

class Stage2Trainer {
 public:
  // explicit_frames: feed real keyframe embeddings instead of queries (comparison baseline).
  Stage2Trainer(ProcapModel<float>& model, const std::vector<Example>& data, TrainConfig cfg,
                bool explicit_frames = false);

  StepLog step();
  int steps_per_epoch() const;
  int total_steps() const { return steps_per_epoch() * cfg_.epochs; }
  int current_step() const { return step_; }
  void set_step(int s) { step_ = s; }
  Adam& optimizer() { return adam_; }
  const Adam& optimizer() const { return adam_; }

 private:
  const std::vector<int>& order(int epoch) const;

  ProcapModel<float>& model_;
  const std::vector<Example>& data_;
  TrainConfig cfg_;
  bool explicit_;
  Adam adam_;
  int step_ = 0;
  mutable std::map<int, std::vector<int>> orders_;
};

// Mean teacher-forced caption loss without gradients.
double caption_eval_loss(ProcapModel<float>& model, const std::vector<Example>& data);

// ---- checkpoints ----

void write_params(const std::filesystem::path& path, const ag::ParameterStore<float>& store);
// Every tensor in the file must exist in the store with the same shape; with require_all
// every store tensor must also be present in the file. Returns the names loaded.
std::vector<std::string> read_params(const std::filesystem::path& path, ag::ParameterStore<float>& store,
                                     bool require_all, const std::string& prefix = "");

struct CheckpointInfo {
  int stage = 1;
  int step = 0;
  int keyframes = 0;
};

// Directory: params.bin, optimizer.bin, config.cfg, rng.txt, state.txt, vocab.txt, embedder.bin.
void save_checkpoint(const std::filesystem::path& dir, const ProcapModel<float>& model, const Adam& adam,
                     const ConfigFile& snapshot, const synth::Vocabulary& vocab,
                     const vq::PatchEmbedder& embedder, const CheckpointInfo& info);

struct LoadedCheckpoint {
  ConfigFile config;
  synth::Vocabulary vocab;
  vq::PatchEmbedder embedder;
  std::unique_ptr<ProcapModel<float>> model;
  Adam adam;
  CheckpointInfo info;
};

LoadedCheckpoint load_checkpoint(const std::filesystem::path& dir);

// Copies every "enc." tensor of a stage-1 checkpoint into the model; the mask embedding
// arrives with them so queries should be (re)initialized afterwards.
std::vector<std::string> transfer_encoder(const std::filesystem::path& stage1_dir, ProcapModel<float>& model);

}  // namespace procap::trainer
