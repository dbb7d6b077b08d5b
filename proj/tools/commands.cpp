#include "commands.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <memory>
#include <sstream>

#include "json.hpp"

#include "procap/captioner.hpp"
#include "procap/error.hpp"
#include "procap/evalkit.hpp"
#include "procap/pipeline.hpp"
#include "procap/trainer.hpp"
#include "procap/util.hpp"

namespace procap::cli {

namespace fs = std::filesystem;
using nlohmann::json;

fs::path Common::out_root() const {
  if (!out.empty()) return out;
  if (const char* env = std::getenv("PROCAP_OUT_ROOT"); env && *env) return env;
  return "procap_out";
}

fs::path Common::data_root() const { return data.empty() ? out_root() / "data" : fs::path(data); }

namespace {

const std::vector<std::string> kGenerationKeys = {
    "num_records", "train_fraction", "val_fraction", "image_size", "grid_rows",
    "grid_cols",   "min_objects",    "max_objects",  "distractor_prob", "data_seed"};

const std::vector<std::string> kProcedureKeys = {"patch_size", "process_length", "keyframes",
                                                 "similarity", "interpolator", "blend_mask"};

const std::vector<std::string> kCodebookKeys = {"patch_size", "codebook_size", "codebook_seed",
                                                "kmeans_iters", "d_model", "embedder_seed"};

bool same_value(const std::string& a, const std::string& b) {
  if (a == b) return true;
  char* ea = nullptr;
  char* eb = nullptr;
  const double x = std::strtod(a.c_str(), &ea);
  const double y = std::strtod(b.c_str(), &eb);
  return *ea == '\0' && *eb == '\0' && !a.empty() && !b.empty() && x == y;
}

void apply(ConfigFile& cfg, const ConfigFile* base, const std::string& key, const std::string& value) {
  if (base && std::find(kGenerationKeys.begin(), kGenerationKeys.end(), key) != kGenerationKeys.end() &&
      !same_value(base->get_string(key), value)) {
    throw ConfigError("'" + key + "=" + value + "' contradicts the dataset (generated with " + key + "=" +
                      base->get_string(key) + ")");
  }
  cfg.set(key, value);
}

// Hash over the effective values of `keys`, defaults included.
std::string effective_hash(const ConfigFile& cfg, const std::vector<std::string>& keys) {
  ConfigFile sub;
  for (const auto& k : keys) sub.set(k, cfg.get_string(k));
  return sub.hash();
}

std::vector<std::string> concat(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

ConfigFile effective(const ConfigFile& cfg) {
  ConfigFile out;
  for (const auto& k : documented_keys()) out.set(k.name, cfg.get_string(k.name));
  return out;
}

// Each producer leaves a stamp naming the configuration it ran with. A rerun with the same
// configuration regenerates identical outputs; a different one needs --force.
void claim(const fs::path& dir, const std::string& producer, const std::string& hash, bool force) {
  const auto stamp = dir / (".stamp-" + producer);
  if (!fs::exists(stamp) || force) return;
  const auto prev = read_text_file(stamp);
  if (prev.rfind(hash, 0) != 0) {
    throw ConfigError(dir.string() + " holds " + producer + " outputs of a different configuration; pass --force to overwrite");
  }
}

void stamp(const fs::path& dir, const std::string& producer, const std::string& hash) {
  write_text_file(dir / (".stamp-" + producer), hash + "\n");
}

constexpr synth::Split kSplits[] = {synth::Split::train, synth::Split::val, synth::Split::test};

synth::Split split_from(const std::string& s) {
  const auto sp = synth::parse_split(s);
  if (!sp) throw ConfigError("unknown split '" + s + "' (train | val | test)");
  return *sp;
}

void require_dataset(const fs::path& root) {
  if (!fs::exists(root / "dataset.cfg")) {
    throw MissingArtifactError("no dataset under " + root.string() + "; run gen-data first");
  }
}

struct VqArtifacts {
  vq::Codebook codebook;
  vq::PatchEmbedder embedder;
};

VqArtifacts load_vq(const fs::path& root, const ModelConfig& mc) {
  for (const char* f : {"codebook.bin", "embedder.bin"}) {
    if (!fs::exists(root / f)) throw MissingArtifactError((root / f).string() + " missing; run fit-codebook first");
  }
  VqArtifacts a{vq::Codebook::load(root / "codebook.bin"), vq::PatchEmbedder::load(root / "embedder.bin")};
  if (a.embedder.d_model() != mc.d_model || a.embedder.patch_size() != mc.patch_size ||
      a.embedder.patches_per_frame() != mc.patches_per_frame()) {
    throw ConfigError("embedder.bin does not fit d_model=" + std::to_string(mc.d_model) + " patch_size=" +
                      std::to_string(mc.patch_size) + "; rerun fit-codebook with this config");
  }
  if (a.codebook.size != mc.codebook_size) {
    throw ConfigError("codebook.bin has " + std::to_string(a.codebook.size) + " entries, config asks for " +
                      std::to_string(mc.codebook_size) + "; rerun fit-codebook");
  }
  return a;
}

ModelConfig model_config(const ConfigFile& cfg, const synth::Vocabulary& vocab) {
  auto mc = ModelConfig::from(cfg);
  mc.vocab_size = vocab.size();
  mc.validate();
  return mc;
}

std::vector<trainer::Example> examples_for(const fs::path& root, synth::Split split, const vq::PatchEmbedder& embedder,
                                           const vq::Codebook* codebook) {
  const auto records = pipeline::load_split(root, split);
  const auto procs = pipeline::load_procedures(root, split, records);
  return pipeline::make_examples(records, procs, embedder, codebook);
}

trainer::LoadedCheckpoint load_stage2(const fs::path& dir) {
  auto ck = trainer::load_checkpoint(dir);
  if (ck.info.stage != 2) throw ConfigError(dir.string() + " is a stage-1 checkpoint; captioning needs train-stage2 output");
  return ck;
}

captioner::DecodeOptions decode_options(int beam) {
  captioner::DecodeOptions o;
  if (beam > 0) {
    o.mode = captioner::DecodeMode::beam;
    o.beam_size = beam;
  }
  return o;
}

Frame read_sized(const std::string& path, int size) {
  if (path.empty()) throw ConfigError("both --before and --after are required");
  if (!fs::exists(path)) throw MissingArtifactError(path + " not found");
  auto f = read_png(path);
  if (f.height != size || f.width != size) {
    throw ConfigError(path + " is " + std::to_string(f.width) + "x" + std::to_string(f.height) + ", expected " +
                      std::to_string(size) + "x" + std::to_string(size));
  }
  return f;
}

void print_log(std::ostream& file, const std::string& line) {
  file << line << '\n';
  std::cout << line << '\n';
}

}  // namespace

ConfigFile resolve_config(const Common& common, bool with_dataset) {
  ConfigFile cfg;
  ConfigFile base;
  const ConfigFile* guard = nullptr;
  const auto ds = common.data_root() / "dataset.cfg";
  if (with_dataset && fs::exists(ds)) {
    base = ConfigFile::load(ds);
    cfg = base;
    guard = &base;
  }
  if (!common.config.empty()) {
    const auto file = ConfigFile::load(common.config);
    for (const auto& [k, v] : file.values()) apply(cfg, guard, k, v);
  }
  for (const auto& s : common.sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError("--set expects key=value, got '" + s + "'");
    auto key = s.substr(0, eq);
    auto value = s.substr(eq + 1);
    apply(cfg, guard, key, value);
  }
  return cfg;
}

int list_keys(std::ostream& out) {
  out << "| key | default | meaning |\n|---|---|---|\n";
  for (const auto& k : documented_keys()) {
    std::string desc = k.description;
    for (std::size_t at = desc.find('|'); at != std::string::npos; at = desc.find('|', at + 2)) desc.insert(at, "\\");
    out << "| `" << k.name << "` | `" << k.default_value << "` | " << desc << " |\n";
  }
  return 0;
}

int gen_data(const Common& common) {
  const auto cfg = resolve_config(common, false);
  const auto dc = DatasetConfig::from(cfg);
  dc.validate();
  const auto root = common.data_root();
  const auto hash = effective_hash(cfg, kGenerationKeys);
  claim(root, "gen-data", hash, common.force);
  if (common.force && fs::exists(root)) fs::remove_all(root);
  const auto manifests = synth::build_dataset(cfg, root);
  stamp(root, "gen-data", hash);
  json summary = {{"root", root.string()}, {"config_hash", hash}};
  for (const auto& m : manifests) summary["splits"][std::string(synth::name(m.split))] = m.records.size();
  if (!manifests.empty()) summary["vocab_size"] = manifests.front().vocab.size();
  std::cout << summary.dump() << '\n';
  return 0;
}

int precompute(const Common& common) {
  const auto root = common.data_root();
  require_dataset(root);
  const auto cfg = resolve_config(common, true);
  const auto options = pipeline::ProcedureOptions::from(cfg);
  if (options.keyframes < 1) throw ConfigError("precompute needs keyframes >= 1");
  const auto hash = effective_hash(cfg, concat(kGenerationKeys, kProcedureKeys));
  claim(root, "precompute", hash, common.force);
  json summary = {{"root", root.string()}};
  for (auto split : kSplits) {
    const auto records = pipeline::load_split(root, split);
    std::vector<KeyframeProcedure> procs;
    procs.reserve(records.size());
    // Captions only guide the sampler where they are legitimately available.
    for (const auto& r : records) procs.push_back(pipeline::build_procedure(r, options, split == synth::Split::train));
    pipeline::write_procedures(root, split, records, procs);
    summary["procedures"][std::string(synth::name(split))] = procs.size();
  }
  stamp(root, "precompute", hash);
  std::cout << summary.dump() << '\n';
  return 0;
}

int fit_codebook(const Common& common) {
  const auto root = common.data_root();
  require_dataset(root);
  const auto cfg = resolve_config(common, true);
  const auto vocab = synth::Vocabulary::load(root / "vocab.txt");
  const auto mc = model_config(cfg, vocab);
  const auto hash = effective_hash(cfg, concat(kGenerationKeys, kCodebookKeys));
  claim(root, "fit-codebook", hash, common.force);
  const auto records = pipeline::load_split(root, synth::Split::train);
  const auto corpus = pipeline::codebook_corpus(records);
  vq::FitOptions fo;
  fo.max_iterations = static_cast<int>(cfg.get_int("kmeans_iters"));
  const auto cb = vq::fit_codebook(corpus, mc.codebook_size, mc.patch_size,
                                   static_cast<std::uint64_t>(cfg.get_int("codebook_seed")), fo);
  cb.save(root / "codebook.bin");
  const vq::PatchEmbedder embedder(mc.patch_size, mc.patches_per_frame(), mc.d_model, mc.embedder_seed);
  embedder.save(root / "embedder.bin");
  stamp(root, "fit-codebook", hash);
  json summary = {{"codebook_size", cb.size},
                  {"patch_dim", cb.patch_dim},
                  {"iterations", cb.inertia.size()},
                  {"inertia", cb.inertia.empty() ? 0.0 : cb.inertia.back()},
                  {"error_bound", cb.error_bound},
                  {"embedder_hash", embedder.hash()}};
  std::cout << summary.dump() << '\n';
  return 0;
}

int train_stage1(const Common& common, const TrainFlags& flags) {
  const auto root = common.data_root();
  require_dataset(root);
  auto cfg = resolve_config(common, true);
  cfg.set("stage", "1");
  auto tc = TrainConfig::from(cfg);
  tc.validate();
  const auto vocab = synth::Vocabulary::load(root / "vocab.txt");
  const auto mc = model_config(cfg, vocab);
  const auto vqa = load_vq(root, mc);
  const auto examples = examples_for(root, synth::Split::train, vqa.embedder, &vqa.codebook);
  if (!examples.empty() && static_cast<int>(examples.front().procedure.size()) != tc.keyframes + 2) {
    throw ConfigError("precomputed procedures hold " + std::to_string(examples.front().procedure.size() - 2) +
                      " keyframes, config asks for " + std::to_string(tc.keyframes) + "; rerun precompute");
  }

  const auto dir = common.out_root() / "stage1";
  const auto snapshot = effective(cfg);
  std::unique_ptr<ProcapModel<float>> model;
  trainer::Adam adam;
  int start = 0;
  if (flags.resume) {
    auto ck = trainer::load_checkpoint(dir);
    if (ck.info.stage != 1) throw ConfigError(dir.string() + " is not a stage-1 checkpoint");
    if (ck.embedder.hash() != vqa.embedder.hash()) throw ConfigError("checkpoint embedder differs from the dataset's");
    model = std::move(ck.model);
    adam = ck.adam;
    start = ck.info.step;
  } else {
    claim(dir, "train-stage1", snapshot.hash(), common.force);
    fs::create_directories(dir);
    model = std::make_unique<ProcapModel<float>>(mc, tc.seed);
  }
  trainer::Stage1Trainer s1(*model, vqa.embedder, examples, tc);
  s1.optimizer() = adam;
  s1.set_step(start);
  std::ofstream log(dir / "log.jsonl", flags.resume ? std::ios::app : std::ios::trunc);
  auto save = [&] {
    trainer::save_checkpoint(dir, *model, s1.optimizer(), snapshot, vocab, vqa.embedder,
                             trainer::CheckpointInfo{1, s1.current_step(), 0});
  };
  while (s1.current_step() < tc.steps) {
    const auto l = s1.step();
    if (l.step % std::max(1, tc.log_every) == 0 || s1.current_step() == tc.steps) print_log(log, l.json(1));
    if (flags.checkpoint_every > 0 && s1.current_step() % flags.checkpoint_every == 0) save();
  }
  save();
  stamp(dir, "train-stage1", snapshot.hash());
  std::cout << json{{"checkpoint", dir.string()}, {"step", s1.current_step()}, {"params_hash", model->params().hash()}}.dump()
            << '\n';
  return 0;
}

int train_stage2(const Common& common, const TrainFlags& flags) {
  const auto root = common.data_root();
  require_dataset(root);
  auto cfg = resolve_config(common, true);
  cfg.set("stage", "2");
  const auto tc = TrainConfig::from(cfg);
  tc.validate();
  const auto vocab = synth::Vocabulary::load(root / "vocab.txt");
  const auto mc = model_config(cfg, vocab);
  const auto vqa = load_vq(root, mc);
  const auto stage1 = common.out_root() / "stage1";
  if (!flags.from_scratch && !flags.resume && !fs::exists(stage1 / "state.txt")) {
    throw MissingArtifactError("no stage-1 checkpoint under " + stage1.string() +
                               "; run train-stage1 or pass --from-scratch");
  }
  const auto train = examples_for(root, synth::Split::train, vqa.embedder, nullptr);
  const auto val = examples_for(root, synth::Split::val, vqa.embedder, nullptr);

  const auto dir = common.out_root() / "stage2";
  auto snapshot = effective(cfg);
  std::unique_ptr<ProcapModel<float>> model;
  trainer::Adam adam;
  int start = 0;
  if (flags.resume) {
    auto ck = load_stage2(dir);
    model = std::move(ck.model);
    adam = ck.adam;
    start = ck.info.step;
  } else {
    claim(dir, "train-stage2", snapshot.hash() + (flags.from_scratch ? "-scratch" : ""), common.force);
    fs::create_directories(dir);
    model = std::make_unique<ProcapModel<float>>(mc, tc.seed);
    if (!flags.from_scratch) {
      const auto names = trainer::transfer_encoder(stage1, *model);
      std::cout << json{{"transferred_tensors", names.size()}, {"from", stage1.string()}}.dump() << '\n';
    }
    model->init_queries(tc.keyframes);
  }
  trainer::Stage2Trainer s2(*model, train, tc);
  s2.optimizer() = adam;
  s2.set_step(start);
  std::ofstream log(dir / "log.jsonl", flags.resume ? std::ios::app : std::ios::trunc);
  auto save = [&] {
    trainer::save_checkpoint(dir, *model, s2.optimizer(), snapshot, vocab, vqa.embedder,
                             trainer::CheckpointInfo{2, s2.current_step(), tc.keyframes});
  };
  const int per_epoch = s2.steps_per_epoch();
  double epoch_loss = 0;
  int in_epoch = 0;
  while (s2.current_step() < s2.total_steps()) {
    const auto l = s2.step();
    epoch_loss += l.loss;
    ++in_epoch;
    if (l.step % std::max(1, tc.log_every) == 0) log << l.json(2) << '\n';
    if (flags.checkpoint_every > 0 && s2.current_step() % flags.checkpoint_every == 0) save();
    if (s2.current_step() % per_epoch == 0) {
      json e = {{"epoch", s2.current_step() / per_epoch}, {"train_loss", epoch_loss / in_epoch}};
      if (!val.empty()) e["val_loss"] = trainer::caption_eval_loss(*model, val);
      print_log(log, e.dump());
      epoch_loss = 0;
      in_epoch = 0;
    }
  }
  save();
  stamp(dir, "train-stage2", snapshot.hash() + (flags.from_scratch ? "-scratch" : ""));
  std::cout << json{{"checkpoint", dir.string()}, {"step", s2.current_step()}, {"params_hash", model->params().hash()}}.dump()
            << '\n';
  return 0;
}

int caption(const Common& common, const CaptionFlags& flags) {
  const fs::path dir = flags.checkpoint.empty() ? common.out_root() / "stage2" : fs::path(flags.checkpoint);
  auto ck = load_stage2(dir);
  const int size = ck.model->config().image_size;
  const FramePair pair{read_sized(flags.before, size), read_sized(flags.after, size)};
  const auto g = captioner::caption_pair(*ck.model, ck.embedder, pair, synth::kBos, synth::kEos, decode_options(flags.beam));
  const auto words = synth::decode(g.ids, ck.vocab);
  std::cout << join(words) << '\n';
  return 0;
}

int sample_frames(const Common& common, const SampleFlags& flags) {
  const auto cfg = resolve_config(common, true);
  const auto options = pipeline::ProcedureOptions::from(cfg);
  synth::Record record;
  bool with_caption = false;
  if (!flags.record_id.empty()) {
    const auto root = common.data_root();
    require_dataset(root);
    const auto records = pipeline::load_split(root, split_from(flags.split));
    const auto it = std::find_if(records.begin(), records.end(), [&](const auto& r) { return r.id == flags.record_id; });
    if (it == records.end()) throw ConfigError("record " + flags.record_id + " not in split " + flags.split);
    record = *it;
    with_caption = options.similarity == sampler::Strategy::visual_text;
  } else {
    if (options.interpolator == ProcedureSource::oracle) {
      throw ConfigError("the oracle interpolator needs scene state; pass --id instead of image files");
    }
    const int size = DatasetConfig::from(cfg).image_size;
    record.frames = FramePair{read_sized(flags.before, size), read_sized(flags.after, size)};
  }
  const auto kp = pipeline::build_procedure(record, options, with_caption);
  const fs::path sheet = flags.sheet.empty() ? common.out_root() / "sample_frames.png" : fs::path(flags.sheet);
  if (sheet.has_parent_path()) fs::create_directories(sheet.parent_path());
  write_png(sheet, contact_sheet(kp.frames));
  std::cout << json{{"indices", kp.sampled_indices},
                    {"similarity", with_caption ? "visual_text" : "visual_only"},
                    {"sheet", sheet.string()}}
                   .dump()
            << '\n';
  return 0;
}

int evaluate(const Common& common, const EvalFlags& flags) {
  const auto root = common.data_root();
  require_dataset(root);
  const fs::path dir = flags.checkpoint.empty() ? common.out_root() / "stage2" : fs::path(flags.checkpoint);
  auto ck = load_stage2(dir);
  auto records = pipeline::load_split(root, split_from(flags.split));
  if (flags.limit > 0 && static_cast<int>(records.size()) > flags.limit) records.resize(static_cast<std::size_t>(flags.limit));
  if (records.empty()) throw ConfigError("split " + flags.split + " is empty");
  std::vector<eval::Sentence> cands;
  cands.reserve(records.size());
  const auto opts = decode_options(flags.beam);
  for (const auto& r : records) {
    const auto g = captioner::caption_pair(*ck.model, ck.embedder, r.frames, synth::kBos, synth::kEos, opts);
    cands.push_back(synth::decode(g.ids, ck.vocab));
  }
  const auto report = eval::evaluate(cands, records, ck.config.hash());
  const auto path = common.out_root() / ("eval_" + flags.split + ".json");
  write_text_file(path, report.json() + "\n");
  std::cout << report.json() << '\n';
  return 0;
}

int bench(const Common& common, const BenchFlags& flags) {
  const auto cfg = resolve_config(common, false);
  const auto vocab = synth::grammar_vocabulary(synth::default_grammar());
  const auto mc = model_config(cfg, vocab);
  const auto dc = DatasetConfig::from(cfg);
  auto po = pipeline::ProcedureOptions::from(cfg);
  eval::CaptionPath path;
  if (flags.path == "implicit") path = eval::CaptionPath::implicit_queries;
  else if (flags.path == "explicit") path = eval::CaptionPath::explicit_frames;
  else throw ConfigError("--path must be implicit or explicit");
  if (flags.pairs < 1 || flags.repeats < 1) throw ConfigError("--pairs and --repeats must be positive");

  std::vector<int> ks;
  std::stringstream ss(flags.k_list);
  for (std::string item; std::getline(ss, item, ',');) {
    try {
      std::size_t pos = 0;
      ks.push_back(std::stoi(item, &pos));
      if (pos != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError("--k expects comma-separated integers, got '" + flags.k_list + "'");
    }
  }
  if (ks.empty()) throw ConfigError("--k is empty");

  const auto seed = static_cast<std::uint64_t>(cfg.get_int("seed"));
  const auto sc = synth::SceneConfig::from(dc);
  std::vector<FramePair> pairs;
  for (int i = 0; i < flags.pairs; ++i) {
    pairs.push_back(synth::generate_record(derive_seed(seed, "bench:" + std::to_string(i)), synth::Split::test, i, sc, vocab).frames);
  }
  const vq::PatchEmbedder embedder(mc.patch_size, mc.patches_per_frame(), mc.d_model, mc.embedder_seed);

  std::cout << eval::CostProfile::csv_header() << '\n';
  for (int k : ks) {
    if (k < 0) throw ConfigError("--k values must be non-negative");
    if (path == eval::CaptionPath::explicit_frames && (k < 1 || k > po.process_length)) {
      throw ConfigError("explicit path needs 1 <= k <= process_length");
    }
    ProcapModel<float> model(mc, seed);
    model.init_queries(k);
    eval::CostProfile row;
    row.inputs = eval::CostInputs{k + 2, mc.patches_per_frame(), mc.d_model, mc.enc_layers,
                                  mc.dec_layers, mc.d_decoder, mc.max_text_len};
    row.counts = eval::attention_op_count(row.inputs);
    row.encoder_seconds = eval::time_encoder_forward(model, k + 2, flags.repeats);
    po.keyframes = std::max(k, 1);
    row.tps = eval::measure_tps(model, embedder, pairs, path, po, flags.warmup).tps();
    std::cout << row.csv_row() << '\n';
  }
  return 0;
}

}  // namespace procap::cli
