#pragma once

#include <filesystem>
#include <ostream>
#include <string>
#include <vector>

#include "procap/config.hpp"

namespace procap::cli {

// Flags shared by every subcommand.
struct Common {
  std::string config;              // optional key=value file
  std::vector<std::string> sets;   // --set key=value, applied after the file
  std::string out;                 // output root; empty means $PROCAP_OUT_ROOT or ./procap_out
  std::string data;                // dataset root; empty means <out>/data
  bool force = false;

  std::filesystem::path out_root() const;
  std::filesystem::path data_root() const;
};

struct TrainFlags {
  bool resume = false;
  bool from_scratch = false;
  int checkpoint_every = 0;
};

struct CaptionFlags {
  std::string checkpoint;
  std::string before;
  std::string after;
  int beam = 0;
};

struct SampleFlags {
  std::string before;
  std::string after;
  std::string record_id;
  std::string split = "train";
  std::string sheet;
};

struct EvalFlags {
  std::string checkpoint;
  std::string split = "test";
  int beam = 0;
  int limit = 0;
};

struct BenchFlags {
  std::string k_list = "1,2,4,7";
  std::string path = "implicit";
  int pairs = 20;
  int repeats = 5;
  int warmup = 3;
};

// Config file, then --set overrides. When the dataset root already holds a dataset.cfg its
// generation keys are the base and may not be contradicted.
ConfigFile resolve_config(const Common& common, bool with_dataset);

int list_keys(std::ostream& out);
int gen_data(const Common& common);
int precompute(const Common& common);
int fit_codebook(const Common& common);
int train_stage1(const Common& common, const TrainFlags& flags);
int train_stage2(const Common& common, const TrainFlags& flags);
int caption(const Common& common, const CaptionFlags& flags);
int sample_frames(const Common& common, const SampleFlags& flags);
int evaluate(const Common& common, const EvalFlags& flags);
int bench(const Common& common, const BenchFlags& flags);

}  // namespace procap::cli
