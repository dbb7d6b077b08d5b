#include "procap/pipeline.hpp"

#include <sstream>

#include "json.hpp"
#include "procap/error.hpp"
#include "procap/util.hpp"

namespace procap::pipeline {

namespace fs = std::filesystem;

ProcedureOptions ProcedureOptions::from(const ConfigFile& cfg) {
  ProcedureOptions o;
  const auto src = cfg.get_string("interpolator");
  if (src == "blend") o.interpolator = ProcedureSource::blend;
  else if (src == "oracle") o.interpolator = ProcedureSource::oracle;
  else throw ConfigError("interpolator must be blend or oracle, got '" + src + "'");
  const auto mask = cfg.get_string("blend_mask");
  if (mask == "constant") o.blend_mask = interp::MaskMode::constant;
  else if (mask == "gated") o.blend_mask = interp::MaskMode::gated;
  else throw ConfigError("blend_mask must be constant or gated, got '" + mask + "'");
  const auto sim = cfg.get_string("similarity");
  if (sim == "visual_only") o.similarity = sampler::Strategy::visual_only;
  else if (sim == "visual_text") o.similarity = sampler::Strategy::visual_text;
  else throw ConfigError("similarity must be visual_only or visual_text, got '" + sim + "'");
  o.process_length = static_cast<int>(cfg.get_int("process_length"));
  o.keyframes = static_cast<int>(cfg.get_int("keyframes"));
  if (!interp::valid_process_length(o.process_length)) {
    throw ConfigError("process_length must be 2^m - 1, got " + std::to_string(o.process_length));
  }
  if (o.keyframes < 0 || o.keyframes > o.process_length) {
    throw ConfigError("keyframes must lie in [0, process_length]");
  }
  return o;
}

KeyframeProcedure build_procedure(const synth::Record& record, const ProcedureOptions& options,
                                  bool use_caption) {
  const int size = record.frames.before.height;
  PseudoFrameSequence pseudo;
  if (options.interpolator == ProcedureSource::oracle) {
    pseudo = interp::generate_procedure(interp::OracleInterpolator(record.before, record.change, size),
                                        record.frames, options.process_length);
  } else {
    pseudo = interp::generate_procedure(interp::BlendInterpolator(options.blend_mask), record.frames,
                                        options.process_length);
  }
  sampler::SimilarityOptions sim;
  std::optional<synth::ChangeSlots> caption;
  sim.strategy = options.similarity;
  if (sim.strategy == sampler::Strategy::visual_text && use_caption) {
    caption = record.caption.slots;
  } else {
    sim.strategy = sampler::Strategy::visual_only;
  }
  const auto profile = sampler::similarity_profile(record.frames, pseudo, sim, caption);
  return sampler::sample_keyframes(record.frames, pseudo, sampler::confidence_scores(profile), options.keyframes);
}

synth::Record load_record(const fs::path& root, const synth::ManifestRecord& entry, synth::Split split, int index,
                          const DatasetConfig& cfg, const synth::Vocabulary& vocab) {
  auto rec = synth::generate_record(entry.seed, split, index, synth::SceneConfig::from(cfg), vocab);
  if (rec.id != entry.id || !rec.change.same_change(entry.change)) {
    throw RuntimeFailure("manifest entry " + entry.id + " does not match its generator seed");
  }
  const auto before = root / entry.before_path;
  const auto after = root / entry.after_path;
  if (!fs::exists(before) || !fs::exists(after)) {
    throw MissingArtifactError("images of " + entry.id + " missing under " + root.string() + " (rerun gen-data)");
  }
  rec.frames.before = read_png(before);
  rec.frames.after = read_png(after);
  return rec;
}

std::vector<synth::Record> load_split(const fs::path& root, synth::Split split) {
  const auto manifest = synth::load_manifest(root, split);
  if (!fs::exists(root / "dataset.cfg")) throw MissingArtifactError("dataset.cfg missing under " + root.string());
  const auto cfg = DatasetConfig::from(ConfigFile::load(root / "dataset.cfg"));
  std::vector<synth::Record> out;
  out.reserve(manifest.records.size());
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    out.push_back(load_record(root, manifest.records[i], split, static_cast<int>(i), cfg, manifest.vocab));
  }
  return out;
}

namespace {

fs::path procedure_manifest(const fs::path& root, synth::Split split) {
  return root / ("procedures_" + std::string(synth::name(split)) + ".jsonl");
}

}  // namespace

void write_procedures(const fs::path& root, synth::Split split, const std::vector<synth::Record>& records,
                      const std::vector<KeyframeProcedure>& procedures) {
  if (records.size() != procedures.size()) throw RuntimeFailure("write_procedures: size mismatch");
  fs::create_directories(root / "procedures");
  std::string lines;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const auto& p = procedures[i];
    nlohmann::json j;
    j["id"] = records[i].id;
    j["indices"] = p.sampled_indices;
    std::vector<std::string> paths;
    for (int f = 1; f + 1 < static_cast<int>(p.frames.size()); ++f) {
      const std::string rel = "procedures/" + records[i].id + "_k" + std::to_string(f - 1) + ".png";
      write_png(root / rel, p.frames[static_cast<std::size_t>(f)]);
      paths.push_back(rel);
    }
    j["keyframes"] = paths;
    lines += j.dump() + "\n";
  }
  write_text_file(procedure_manifest(root, split), lines);
}

std::vector<KeyframeProcedure> load_procedures(const fs::path& root, synth::Split split,
                                               const std::vector<synth::Record>& records) {
  const auto path = procedure_manifest(root, split);
  if (!fs::exists(path)) throw MissingArtifactError(path.string() + " not found (run precompute first)");
  std::istringstream in(read_text_file(path));
  std::string line;
  std::vector<KeyframeProcedure> out;
  std::size_t i = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (i >= records.size()) throw RuntimeFailure(path.string() + " has more entries than the manifest");
    const auto j = nlohmann::json::parse(line);
    if (j.at("id").get<std::string>() != records[i].id) {
      throw RuntimeFailure(path.string() + ": entry order differs from the manifest at " + records[i].id);
    }
    KeyframeProcedure p;
    p.sampled_indices = j.at("indices").get<std::vector<int>>();
    p.frames.push_back(records[i].frames.before);
    for (const auto& rel : j.at("keyframes")) {
      const auto f = root / rel.get<std::string>();
      if (!fs::exists(f)) throw MissingArtifactError(f.string() + " missing (rerun precompute)");
      p.frames.push_back(read_png(f));
    }
    p.frames.push_back(records[i].frames.after);
    out.push_back(std::move(p));
    ++i;
  }
  if (i != records.size()) throw RuntimeFailure(path.string() + " has fewer entries than the manifest");
  return out;
}

std::vector<trainer::Example> make_examples(const std::vector<synth::Record>& records,
                                            const std::vector<KeyframeProcedure>& procedures,
                                            const vq::PatchEmbedder& embedder, const vq::Codebook* codebook) {
  if (records.size() != procedures.size()) throw RuntimeFailure("make_examples: size mismatch");
  std::vector<trainer::Example> out;
  out.reserve(records.size());
  for (std::size_t i = 0; i < records.size(); ++i) {
    trainer::Example e;
    e.id = records[i].id;
    e.caption = records[i].caption.token_ids;
    e.change = records[i].change.type;
    e.procedure = procedures[i].frames;
    for (const auto& f : e.procedure) {
      e.embeds.push_back(embedder.embed(f));
      if (codebook) {
        const auto ids = vq::tokenize(f, *codebook);
        e.tokens.insert(e.tokens.end(), ids.begin(), ids.end());
      }
    }
    out.push_back(std::move(e));
  }
  return out;
}

PreparedData prepare_in_memory(const DatasetConfig& data, const ProcedureOptions& options) {
  PreparedData p;
  p.vocab = synth::grammar_vocabulary(synth::default_grammar());
  for (auto& r : synth::generate_records(data, p.vocab)) {
    const bool train = r.split == synth::Split::train;
    p.procedures[r.split].push_back(build_procedure(r, options, train));
    p.records[r.split].push_back(std::move(r));
  }
  return p;
}

std::vector<Frame> codebook_corpus(const std::vector<synth::Record>& records,
                                   const std::vector<KeyframeProcedure>* procedures) {
  std::vector<Frame> frames;
  for (std::size_t i = 0; i < records.size(); ++i) {
    if (procedures) {
      for (const auto& f : (*procedures)[i].frames) frames.push_back(f);
    } else {
      frames.push_back(records[i].frames.before);
      frames.push_back(records[i].frames.after);
    }
  }
  return frames;
}

}  // namespace procap::pipeline
