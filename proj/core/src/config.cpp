#include "procap/config.hpp"

#include <algorithm>
#include <array>
#include <sstream>

#include "procap/error.hpp"
#include "procap/util.hpp"

namespace procap {

namespace {

constexpr std::array kKeys = {
    // dataset
    ConfigKey{"num_records", "5000", "number of before/after pairs generated"},
    ConfigKey{"train_fraction", "0.8", "fraction of records in the train split"},
    ConfigKey{"val_fraction", "0.1", "fraction of records in the val split (rest is test)"},
    ConfigKey{"image_size", "32", "rendered square image size in pixels"},
    ConfigKey{"grid_rows", "4", "scene grid rows"},
    ConfigKey{"grid_cols", "4", "scene grid columns"},
    ConfigKey{"min_objects", "2", "minimum objects per scene"},
    ConfigKey{"max_objects", "4", "maximum objects per scene"},
    ConfigKey{"distractor_prob", "0.2", "probability that a real change also carries a distractor"},
    ConfigKey{"data_seed", "0", "base seed for scene generation"},
    ConfigKey{"patch_size", "4", "patch side in pixels for tokenizer and embedder"},
    ConfigKey{"process_length", "7", "pseudo-frames per procedure (2^m - 1)"},
    ConfigKey{"keyframes", "2", "keyframes k kept by the sampler and query groups in stage 2"},
    ConfigKey{"similarity", "visual_text", "sampler similarity: visual_only | visual_text"},
    ConfigKey{"interpolator", "blend", "procedure interpolator: blend | oracle"},
    ConfigKey{"blend_mask", "constant", "blend interpolator mask: constant | gated"},
    // codebook
    ConfigKey{"codebook_seed", "7", "k-means initialization seed"},
    ConfigKey{"kmeans_iters", "30", "maximum Lloyd iterations"},
    // model
    ConfigKey{"d_model", "128", "encoder hidden size"},
    ConfigKey{"n_heads", "4", "encoder attention heads"},
    ConfigKey{"ffn_mult", "4", "feed-forward expansion factor"},
    ConfigKey{"enc_layers", "4", "procedure encoder layers"},
    ConfigKey{"dec_layers", "2", "caption decoder layers"},
    ConfigKey{"d_decoder", "128", "caption decoder hidden size"},
    ConfigKey{"dec_heads", "4", "caption decoder attention heads"},
    ConfigKey{"max_text_len", "16", "maximum caption tokens including BOS/EOS"},
    ConfigKey{"max_frames", "16", "size of the frame-index embedding table"},
    ConfigKey{"codebook_size", "256", "number of discrete image tokens"},
    ConfigKey{"embedder_seed", "17", "seed of the frozen patch projector"},
    // training
    ConfigKey{"stage", "1", "training stage: 1 or 2"},
    ConfigKey{"steps", "5000", "stage-1 optimizer steps"},
    ConfigKey{"epochs", "20", "stage-2 epochs"},
    ConfigKey{"batch_size", "8", "records per optimizer step"},
    ConfigKey{"seed", "0", "training seed (init, data order, masking, negatives)"},
    ConfigKey{"warmup_steps", "5000", "stage-1 linear warmup length"},
    ConfigKey{"lr_start", "1e-6", "stage-1 learning rate at step 0"},
    ConfigKey{"lr_peak", "1e-4", "stage-1 learning rate after warmup"},
    ConfigKey{"encoder_lr", "5e-5", "stage-2 fixed encoder learning rate"},
    ConfigKey{"decoder_lr", "5e-5", "stage-2 decoder learning rate after warmup"},
    ConfigKey{"decoder_warmup_fraction", "0.1", "stage-2 decoder warmup as fraction of total steps"},
    ConfigKey{"grad_clip", "1.0", "global gradient norm clip (0 disables)"},
    ConfigKey{"use_msm", "true", "stage-1 masked sequence modeling term"},
    ConfigKey{"use_align", "true", "stage-1 caption alignment term"},
    ConfigKey{"use_csy", "true", "stage-1 temporal consistency term"},
    ConfigKey{"freeze_queries", "false", "keep stage-2 procedure queries fixed"},
    ConfigKey{"log_every", "50", "training log interval in steps"},
};

const ConfigKey* find_key(const std::string& name) {
  for (const auto& k : kKeys) {
    if (name == k.name) return &k;
  }
  return nullptr;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::span<const ConfigKey> documented_keys() { return kKeys; }

ConfigFile ConfigFile::parse(const std::string& text, const std::string& origin) {
  ConfigFile cfg;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key=value");
    }
    cfg.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return cfg;
}

ConfigFile ConfigFile::load(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path.string());
  return parse(read_text_file(path), path.string());
}

void ConfigFile::set(const std::string& key, const std::string& value) {
  if (!find_key(key)) throw ConfigError("unknown config key '" + key + "'");
  values_[key] = value;
}

std::string ConfigFile::get_string(const std::string& key) const {
  if (auto it = values_.find(key); it != values_.end()) return it->second;
  const auto* k = find_key(key);
  if (!k) throw ConfigError("unknown config key '" + key + "'");
  return k->default_value;
}

long long ConfigFile::get_int(const std::string& key) const {
  const auto s = get_string(key);
  try {
    std::size_t pos = 0;
    const long long v = std::stoll(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' expects an integer, got '" + s + "'");
  }
}

double ConfigFile::get_double(const std::string& key) const {
  const auto s = get_string(key);
  try {
    std::size_t pos = 0;
    const double v = std::stod(s, &pos);
    if (pos != s.size()) throw std::invalid_argument(s);
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' expects a number, got '" + s + "'");
  }
}

bool ConfigFile::get_bool(const std::string& key) const {
  const auto s = get_string(key);
  if (s == "true" || s == "1" || s == "yes") return true;
  if (s == "false" || s == "0" || s == "no") return false;
  throw ConfigError("config key '" + key + "' expects true/false, got '" + s + "'");
}

std::string ConfigFile::serialize() const {
  std::string out;
  for (const auto& [k, v] : values_) out += k + "=" + v + "\n";
  return out;
}

std::string ConfigFile::hash() const {
  Fnv1a h;
  h.update(serialize());
  return h.hex();
}

DatasetConfig DatasetConfig::from(const ConfigFile& cfg) {
  DatasetConfig c;
  c.num_records = static_cast<int>(cfg.get_int("num_records"));
  c.train_fraction = cfg.get_double("train_fraction");
  c.val_fraction = cfg.get_double("val_fraction");
  c.image_size = static_cast<int>(cfg.get_int("image_size"));
  c.grid_rows = static_cast<int>(cfg.get_int("grid_rows"));
  c.grid_cols = static_cast<int>(cfg.get_int("grid_cols"));
  c.min_objects = static_cast<int>(cfg.get_int("min_objects"));
  c.max_objects = static_cast<int>(cfg.get_int("max_objects"));
  c.distractor_prob = cfg.get_double("distractor_prob");
  c.seed = static_cast<std::uint64_t>(cfg.get_int("data_seed"));
  c.patch_size = static_cast<int>(cfg.get_int("patch_size"));
  c.process_length = static_cast<int>(cfg.get_int("process_length"));
  c.keyframes = static_cast<int>(cfg.get_int("keyframes"));
  c.validate();
  return c;
}

void DatasetConfig::validate() const {
  if (num_records < 1) throw ConfigError("num_records must be positive");
  if (train_fraction < 0 || val_fraction < 0 || train_fraction + val_fraction > 1.0) {
    throw ConfigError("split fractions must be non-negative and sum to at most 1");
  }
  if (grid_rows < 1 || grid_cols < 1) throw ConfigError("grid dimensions must be positive");
  if (image_size % grid_rows != 0 || image_size % grid_cols != 0) {
    throw ConfigError("image_size must be divisible by the grid dimensions");
  }
  if (patch_size < 1 || image_size % patch_size != 0) {
    throw ConfigError("image_size must be divisible by patch_size");
  }
  if (min_objects < 0 || max_objects < min_objects) throw ConfigError("invalid object-count range");
  if (distractor_prob < 0 || distractor_prob > 1) throw ConfigError("distractor_prob outside [0,1]");
  if (keyframes < 1 || keyframes > process_length) {
    throw ConfigError("keyframes must lie in [1, process_length]");
  }
}

ModelConfig ModelConfig::from(const ConfigFile& cfg) {
  ModelConfig c;
  c.image_size = static_cast<int>(cfg.get_int("image_size"));
  c.patch_size = static_cast<int>(cfg.get_int("patch_size"));
  c.d_model = static_cast<int>(cfg.get_int("d_model"));
  c.n_heads = static_cast<int>(cfg.get_int("n_heads"));
  c.ffn_mult = static_cast<int>(cfg.get_int("ffn_mult"));
  c.enc_layers = static_cast<int>(cfg.get_int("enc_layers"));
  c.dec_layers = static_cast<int>(cfg.get_int("dec_layers"));
  c.d_decoder = static_cast<int>(cfg.get_int("d_decoder"));
  c.dec_heads = static_cast<int>(cfg.get_int("dec_heads"));
  c.max_text_len = static_cast<int>(cfg.get_int("max_text_len"));
  c.max_frames = static_cast<int>(cfg.get_int("max_frames"));
  c.codebook_size = static_cast<int>(cfg.get_int("codebook_size"));
  c.embedder_seed = static_cast<std::uint64_t>(cfg.get_int("embedder_seed"));
  c.validate();
  return c;
}

void ModelConfig::validate() const {
  if (patch_size < 1 || image_size % patch_size != 0) {
    throw ConfigError("image_size must be divisible by patch_size");
  }
  if (d_model < 1 || n_heads < 1 || d_model % n_heads != 0) {
    throw ConfigError("d_model must be a positive multiple of n_heads");
  }
  if (d_decoder < 1 || dec_heads < 1 || d_decoder % dec_heads != 0) {
    throw ConfigError("d_decoder must be a positive multiple of dec_heads");
  }
  if (enc_layers < 0 || dec_layers < 0 || ffn_mult < 1) throw ConfigError("invalid layer config");
  if (codebook_size < 2) throw ConfigError("codebook_size must be at least 2");
  if (max_text_len < 2 || max_frames < 2) throw ConfigError("max_text_len/max_frames too small");
}

void ModelConfig::write_to(ConfigFile& cfg) const {
  cfg.set("image_size", std::to_string(image_size));
  cfg.set("patch_size", std::to_string(patch_size));
  cfg.set("d_model", std::to_string(d_model));
  cfg.set("n_heads", std::to_string(n_heads));
  cfg.set("ffn_mult", std::to_string(ffn_mult));
  cfg.set("enc_layers", std::to_string(enc_layers));
  cfg.set("dec_layers", std::to_string(dec_layers));
  cfg.set("d_decoder", std::to_string(d_decoder));
  cfg.set("dec_heads", std::to_string(dec_heads));
  cfg.set("max_text_len", std::to_string(max_text_len));
  cfg.set("max_frames", std::to_string(max_frames));
  cfg.set("codebook_size", std::to_string(codebook_size));
  cfg.set("embedder_seed", std::to_string(embedder_seed));
}

namespace {

std::string fmt_double(double v) {
  std::ostringstream ss;
  ss.precision(17);
  ss << v;
  return ss.str();
}

}  // namespace

TrainConfig TrainConfig::from(const ConfigFile& cfg) {
  TrainConfig c;
  c.stage = static_cast<int>(cfg.get_int("stage"));
  c.steps = static_cast<int>(cfg.get_int("steps"));
  c.epochs = static_cast<int>(cfg.get_int("epochs"));
  c.batch_size = static_cast<int>(cfg.get_int("batch_size"));
  c.seed = static_cast<std::uint64_t>(cfg.get_int("seed"));
  c.keyframes = static_cast<int>(cfg.get_int("keyframes"));
  c.warmup_steps = static_cast<int>(cfg.get_int("warmup_steps"));
  c.lr_start = cfg.get_double("lr_start");
  c.lr_peak = cfg.get_double("lr_peak");
  c.encoder_lr = cfg.get_double("encoder_lr");
  c.decoder_lr = cfg.get_double("decoder_lr");
  c.decoder_warmup_fraction = cfg.get_double("decoder_warmup_fraction");
  c.grad_clip = cfg.get_double("grad_clip");
  c.use_msm = cfg.get_bool("use_msm");
  c.use_align = cfg.get_bool("use_align");
  c.use_csy = cfg.get_bool("use_csy");
  c.freeze_queries = cfg.get_bool("freeze_queries");
  c.log_every = static_cast<int>(cfg.get_int("log_every"));
  c.validate();
  return c;
}

void TrainConfig::validate() const {
  if (stage != 1 && stage != 2) throw ConfigError("stage must be 1 or 2");
  if (steps < 0 || epochs < 0) throw ConfigError("steps/epochs must be non-negative");
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  if (keyframes < 0) throw ConfigError("keyframes must be non-negative");
  if (warmup_steps < 0) throw ConfigError("warmup_steps must be non-negative");
  if (decoder_warmup_fraction < 0 || decoder_warmup_fraction > 1) {
    throw ConfigError("decoder_warmup_fraction outside [0,1]");
  }
  if (lr_start < 0 || lr_peak < 0 || encoder_lr < 0 || decoder_lr < 0) {
    throw ConfigError("learning rates must be non-negative");
  }
  if (log_every < 1) throw ConfigError("log_every must be positive");
}

void TrainConfig::write_to(ConfigFile& cfg) const {
  cfg.set("stage", std::to_string(stage));
  cfg.set("steps", std::to_string(steps));
  cfg.set("epochs", std::to_string(epochs));
  cfg.set("batch_size", std::to_string(batch_size));
  cfg.set("seed", std::to_string(seed));
  cfg.set("keyframes", std::to_string(keyframes));
  cfg.set("warmup_steps", std::to_string(warmup_steps));
  cfg.set("lr_start", fmt_double(lr_start));
  cfg.set("lr_peak", fmt_double(lr_peak));
  cfg.set("encoder_lr", fmt_double(encoder_lr));
  cfg.set("decoder_lr", fmt_double(decoder_lr));
  cfg.set("decoder_warmup_fraction", fmt_double(decoder_warmup_fraction));
  cfg.set("grad_clip", fmt_double(grad_clip));
  cfg.set("use_msm", use_msm ? "true" : "false");
  cfg.set("use_align", use_align ? "true" : "false");
  cfg.set("use_csy", use_csy ? "true" : "false");
  cfg.set("freeze_queries", freeze_queries ? "true" : "false");
  cfg.set("log_every", std::to_string(log_every));
}

}  // namespace procap
