#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace procap {

struct ConfigKey {
  const char* name;
  const char* default_value;
  const char* description;
};

// Every key accepted by config files and --set overrides.
std::span<const ConfigKey> documented_keys();

// Flat UTF-8 key=value store. '#' starts a comment; blank lines ignored.
// Unknown keys are rejected on load so typos surface as config errors.
class ConfigFile {
 public:
  ConfigFile() = default;

  static ConfigFile parse(const std::string& text, const std::string& origin = "<string>");
  static ConfigFile load(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::string get_string(const std::string& key) const;
  long long get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;

  // Only explicitly set keys, sorted; defaults are implied.
  const std::map<std::string, std::string>& values() const { return values_; }
  std::string serialize() const;
  std::string hash() const;

 private:
  std::map<std::string, std::string> values_;
};

struct DatasetConfig {
  int num_records = 5000;
  double train_fraction = 0.8;
  double val_fraction = 0.1;
  int image_size = 32;
  int grid_rows = 4;
  int grid_cols = 4;
  int min_objects = 2;
  int max_objects = 4;
  double distractor_prob = 0.2;
  std::uint64_t seed = 0;
  int patch_size = 4;
  int process_length = 7;
  int keyframes = 2;

  static DatasetConfig from(const ConfigFile& cfg);
  void validate() const;
};

struct ModelConfig {
  int image_size = 32;
  int patch_size = 4;
  int d_model = 128;
  int n_heads = 4;
  int ffn_mult = 4;
  int enc_layers = 4;
  int dec_layers = 2;
  int d_decoder = 128;
  int dec_heads = 4;
  int max_text_len = 16;
  int max_frames = 16;
  int codebook_size = 256;
  int vocab_size = 0;  // taken from the vocabulary at build time
  std::uint64_t embedder_seed = 17;

  int grid_side() const { return image_size / patch_size; }
  int patches_per_frame() const { return grid_side() * grid_side(); }
  int patch_dim() const { return patch_size * patch_size * 3; }

  static ModelConfig from(const ConfigFile& cfg);
  void validate() const;
  void write_to(ConfigFile& cfg) const;
};

struct TrainConfig {
  int stage = 1;
  int steps = 5000;
  int epochs = 20;
  int batch_size = 8;
  std::uint64_t seed = 0;
  int keyframes = 2;
  // stage 1 schedule
  int warmup_steps = 5000;
  double lr_start = 1e-6;
  double lr_peak = 1e-4;
  // stage 2 schedule
  double encoder_lr = 5e-5;
  double decoder_lr = 5e-5;
  double decoder_warmup_fraction = 0.1;
  double grad_clip = 1.0;
  bool use_msm = true;
  bool use_align = true;
  bool use_csy = true;
  bool freeze_queries = false;
  int log_every = 50;

  static TrainConfig from(const ConfigFile& cfg);
  void validate() const;
  void write_to(ConfigFile& cfg) const;
};

}  // namespace procap
