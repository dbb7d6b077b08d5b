#include "procap/trainer.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "procap/captioner.hpp"
#include "procap/error.hpp"
#include "procap/util.hpp"

namespace procap::trainer {

namespace fs = std::filesystem;

double lr_at(int step, const TrainConfig& cfg, LrGroup group, int total_steps) {
  if (step < 0) throw ConfigError("lr_at: negative step");
  switch (group) {
    case LrGroup::stage1:
      if (cfg.warmup_steps <= 0 || step >= cfg.warmup_steps) return cfg.lr_peak;
      return cfg.lr_start + (cfg.lr_peak - cfg.lr_start) * static_cast<double>(step) / cfg.warmup_steps;
    case LrGroup::encoder:
      return cfg.encoder_lr;
    case LrGroup::decoder: {
      const double warm = cfg.decoder_warmup_fraction * total_steps;
      if (warm <= 0 || step >= warm) return cfg.decoder_lr;
      return cfg.decoder_lr * static_cast<double>(step) / warm;
    }
  }
  return 0.0;
}

// ---- Adam ----

double Adam::clip(ag::ParameterStore<float>& store, double max_norm) {
  double sq = 0;
  for (const auto* p : std::as_const(store).all()) {
    if (p->trainable) sq += p->grad.cast<double>().squaredNorm();
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0 && norm > max_norm) {
    const float s = static_cast<float>(max_norm / norm);
    for (auto* p : store.all()) {
      if (p->trainable) p->grad *= s;
    }
  }
  return norm;
}

void Adam::step(ag::ParameterStore<float>& store, const std::function<double(const std::string&)>& lr_for) {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  const float b1 = static_cast<float>(beta1_), b2 = static_cast<float>(beta2_);
  for (auto* p : store.all()) {
    if (!p->trainable) continue;
    auto& m = m_[p->name];
    auto& v = v_[p->name];
    if (m.size() == 0) {
      m.setZero(p->value.rows(), p->value.cols());
      v.setZero(p->value.rows(), p->value.cols());
    }
    m = b1 * m + (1.0f - b1) * p->grad;
    v = b2 * v + (1.0f - b2) * p->grad.cwiseProduct(p->grad);
    const float lr = static_cast<float>(lr_for(p->name));
    if (lr == 0.0f) continue;
    const float ic1 = static_cast<float>(1.0 / c1), ic2 = static_cast<float>(1.0 / c2);
    const float eps = static_cast<float>(eps_);
    p->value.array() -= lr * (m.array() * ic1) / ((v.array() * ic2).sqrt() + eps);
  }
}

namespace {

constexpr std::string_view kParamsMagic = "procap-params";

void write_tensors(const fs::path& path, const std::vector<std::pair<std::string, const MatF*>>& tensors,
                   const std::string& extra_header) {
  static_assert(std::endian::native == std::endian::little, "checkpoint writer assumes little-endian host");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  out << kParamsMagic << " tensors=" << tensors.size() << extra_header << '\n';
  for (const auto& [name, m] : tensors) {
    out << name << ' ' << m->rows() << ' ' << m->cols() << '\n';
    out.write(reinterpret_cast<const char*>(m->data()), static_cast<std::streamsize>(m->size() * sizeof(float)));
  }
  if (!out) throw RuntimeFailure("write failed: " + path.string());
}

struct TensorFile {
  std::map<std::string, std::string> header;
  std::vector<std::pair<std::string, MatF>> tensors;
};

TensorFile read_tensors(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifactError("cannot read " + path.string());
  std::string line;
  std::getline(in, line);
  std::istringstream hs(line);
  std::string magic;
  hs >> magic;
  if (magic != kParamsMagic) throw RuntimeFailure(path.string() + ": not a parameter table");
  TensorFile tf;
  std::string kv;
  while (hs >> kv) {
    const auto eq = kv.find('=');
    if (eq != std::string::npos) tf.header[kv.substr(0, eq)] = kv.substr(eq + 1);
  }
  const std::size_t n = std::stoull(tf.header.at("tensors"));
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::getline(in, line)) throw RuntimeFailure(path.string() + ": truncated table");
    std::istringstream ts(line);
    std::string name;
    Eigen::Index r = 0, c = 0;
    if (!(ts >> name >> r >> c)) throw RuntimeFailure(path.string() + ": malformed entry");
    MatF m(r, c);
    in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(float)));
    if (static_cast<std::size_t>(in.gcount()) != m.size() * sizeof(float)) {
      throw RuntimeFailure(path.string() + ": truncated tensor " + name);
    }
    tf.tensors.emplace_back(std::move(name), std::move(m));
  }
  return tf;
}

std::string fmt(double v) {
  std::ostringstream ss;
  ss.precision(9);
  ss << v;
  return ss.str();
}

}  // namespace

void Adam::save(const fs::path& path) const {
  std::vector<std::pair<std::string, const MatF*>> t;
  for (const auto& [name, m] : m_) t.emplace_back("m/" + name, &m);
  for (const auto& [name, v] : v_) t.emplace_back("v/" + name, &v);
  write_tensors(path, t, " t=" + std::to_string(t_) + " beta1=" + fmt(beta1_) + " beta2=" + fmt(beta2_) +
                             " eps=" + fmt(eps_));
}

void Adam::load(const fs::path& path) {
  auto tf = read_tensors(path);
  t_ = std::stoll(tf.header.at("t"));
  m_.clear();
  v_.clear();
  for (auto& [name, m] : tf.tensors) {
    if (name.rfind("m/", 0) == 0) {
      m_[name.substr(2)] = std::move(m);
    } else if (name.rfind("v/", 0) == 0) {
      v_[name.substr(2)] = std::move(m);
    } else {
      throw RuntimeFailure(path.string() + ": unexpected optimizer entry " + name);
    }
  }
}

std::string StepLog::json(int stage) const {
  nlohmann::json j;
  j["stage"] = stage;
  j["step"] = step;
  j["lr"] = lr;
  if (stage == 2) j["lr_decoder"] = lr_decoder;
  j["loss"] = loss;
  if (stage == 1) {
    j["msm"] = msm;
    j["align"] = align;
    j["csy"] = csy;
    j["empty_masks"] = empty_masks;
    j["skipped_align"] = skipped_align;
  }
  j["grad_norm"] = grad_norm;
  return j.dump();
}

// ---- stage 1 ----

namespace {

std::vector<int> epoch_order(std::uint64_t seed, const char* purpose, int epoch, int n) {
  std::vector<int> o(static_cast<std::size_t>(n));
  std::iota(o.begin(), o.end(), 0);
  Rng rng(derive_seed(seed, std::string(purpose) + ":" + std::to_string(epoch)));
  std::shuffle(o.begin(), o.end(), rng);
  return o;
}

std::string key(const char* purpose, int step, int j = -1) {
  std::string s = std::string(purpose) + ":" + std::to_string(step);
  if (j >= 0) s += ":" + std::to_string(j);
  return s;
}

}  // namespace

Stage1Trainer::Stage1Trainer(ProcapModel<float>& model, const vq::PatchEmbedder& embedder,
                             const std::vector<Example>& data, TrainConfig cfg)
    : model_(model), embedder_(embedder), data_(data), cfg_(std::move(cfg)) {
  if (data_.empty()) throw ConfigError("stage 1 needs at least one training record");
  for (const auto& e : data_) {
    if (e.procedure.size() != e.embeds.size() || e.procedure.size() < 2) {
      throw RuntimeFailure("record " + e.id + ": procedure frames and embeddings disagree");
    }
  }
}

const std::vector<int>& Stage1Trainer::order(int epoch) const {
  auto it = orders_.find(epoch);
  if (it == orders_.end()) {
    if (orders_.size() > 4) orders_.erase(orders_.begin());
    it = orders_.emplace(epoch, epoch_order(cfg_.seed, "order1", epoch, static_cast<int>(data_.size()))).first;
  }
  return it->second;
}

std::vector<procnet::Stage1Sample<float>> Stage1Trainer::make_batch(int step) const {
  const int b = cfg_.batch_size;
  const int n = static_cast<int>(data_.size());
  std::vector<const Example*> rows;
  for (int j = 0; j < b; ++j) {
    const long long pos = static_cast<long long>(step) * b + j;
    const int epoch = static_cast<int>(pos / n);
    rows.push_back(&data_[static_cast<std::size_t>(order(epoch)[static_cast<std::size_t>(pos % n)])]);
  }
  const int side = model_.config().grid_side();

  Rng neg_rng(derive_seed(cfg_.seed, key("negative", step)));
  const auto partner = procnet::derangement(neg_rng, b);
  std::vector<const std::vector<Frame>*> procedures;
  for (const auto* r : rows) procedures.push_back(&r->procedure);

  std::vector<procnet::Stage1Sample<float>> batch;
  for (int j = 0; j < b; ++j) {
    const Example& ex = *rows[static_cast<std::size_t>(j)];
    procnet::Stage1Sample<float> s;
    s.caption = ex.caption;
    s.frames = ex.embeds;
    s.targets = ex.tokens;
    Rng mask_rng(derive_seed(cfg_.seed, key("mask", step, j)));
    s.mask = procnet::sample_mask(mask_rng, static_cast<int>(ex.procedure.size()), side, side).flags;

    if (cfg_.use_align && b >= 2) {
      // Walk forward from the deranged partner to the first record with a different caption.
      for (int r = 0; r < b; ++r) {
        const int c = (partner[static_cast<std::size_t>(j)] + r) % b;
        if (c != j && rows[static_cast<std::size_t>(c)]->caption != ex.caption) {
          s.negative_caption = rows[static_cast<std::size_t>(c)]->caption;
          break;
        }
      }
    }
    if (cfg_.use_csy) {
      Rng warp_rng(derive_seed(cfg_.seed, key("warp", step, j)));
      auto params = procnet::sample_warp(warp_rng, static_cast<int>(ex.procedure.size()), b, j);
      const auto warped = procnet::warp_negative(ex.procedure, params, procedures, warp_rng);
      for (const auto& f : warped) s.warped_frames.push_back(embedder_.embed(f));
    }
    batch.push_back(std::move(s));
  }
  return batch;
}

StepLog Stage1Trainer::step() {
  auto& store = model_.params();
  store.zero_grad();
  const auto batch = make_batch(step_);
  procnet::LossBreakdown br;
  StepLog log;
  {
    ag::Tape<float> tape;
    ag::Var loss = procnet::stage1_loss(tape, model_, batch, {cfg_.use_msm, cfg_.use_align, cfg_.use_csy}, &br);
    tape.backward(loss);
    log.loss = tape.scalar(loss);
  }
  log.step = step_;
  log.msm = br.msm;
  log.align = br.align;
  log.csy = br.csy;
  log.empty_masks = br.empty_masks;
  log.skipped_align = br.skipped_align;
  log.grad_norm = Adam::clip(store, cfg_.grad_clip);
  log.lr = lr_at(step_, cfg_, LrGroup::stage1);
  adam_.step(store, [&](const std::string&) { return log.lr; });
  ++step_;
  return log;
}

// ---- stage 2 ----

Stage2Trainer::Stage2Trainer(ProcapModel<float>& model, const std::vector<Example>& data, TrainConfig cfg,
                             bool explicit_frames)
    : model_(model), data_(data), cfg_(std::move(cfg)), explicit_(explicit_frames) {
  if (data_.empty()) throw ConfigError("stage 2 needs at least one training record");
  if (model_.keyframes() != cfg_.keyframes) {
    throw ConfigError("model holds " + std::to_string(model_.keyframes()) + " query groups, config asks for " +
                      std::to_string(cfg_.keyframes));
  }
  if (model_.params().has("queries")) model_.params().get("queries").trainable = !cfg_.freeze_queries;
}

int Stage2Trainer::steps_per_epoch() const {
  return static_cast<int>((data_.size() + static_cast<std::size_t>(cfg_.batch_size) - 1) /
                          static_cast<std::size_t>(cfg_.batch_size));
}

const std::vector<int>& Stage2Trainer::order(int epoch) const {
  auto it = orders_.find(epoch);
  if (it == orders_.end()) {
    if (orders_.size() > 4) orders_.erase(orders_.begin());
    it = orders_.emplace(epoch, epoch_order(cfg_.seed, "order2", epoch, static_cast<int>(data_.size()))).first;
  }
  return it->second;
}

StepLog Stage2Trainer::step() {
  auto& store = model_.params();
  store.zero_grad();
  const int spe = steps_per_epoch();
  const int epoch = step_ / spe;
  const int begin = (step_ % spe) * cfg_.batch_size;
  const int end = std::min<int>(begin + cfg_.batch_size, static_cast<int>(data_.size()));
  const auto& ord = order(epoch);
  std::vector<captioner::CaptionSample<float>> batch;
  for (int i = begin; i < end; ++i) {
    const Example& ex = data_[static_cast<std::size_t>(ord[static_cast<std::size_t>(i)])];
    captioner::CaptionSample<float> s;
    s.before = ex.embeds.front();
    s.after = ex.embeds.back();
    s.gold = ex.caption;
    if (explicit_) s.procedure = ex.embeds;
    batch.push_back(std::move(s));
  }
  StepLog log;
  {
    ag::Tape<float> tape;
    ag::Var loss = captioner::caption_batch_loss(tape, model_, batch);
    tape.backward(loss);
    log.loss = tape.scalar(loss);
  }
  log.step = step_;
  log.grad_norm = Adam::clip(store, cfg_.grad_clip);
  log.lr = lr_at(step_, cfg_, LrGroup::encoder);
  log.lr_decoder = lr_at(step_, cfg_, LrGroup::decoder, total_steps());
  adam_.step(store, [&](const std::string& name) {
    return name.rfind("dec.", 0) == 0 ? log.lr_decoder : log.lr;
  });
  ++step_;
  return log;
}

double caption_eval_loss(ProcapModel<float>& model, const std::vector<Example>& data) {
  if (data.empty()) return 0.0;
  double total = 0;
  for (const auto& ex : data) {
    ag::Tape<float> tape(false);
    ag::Var enc = captioner::encode_pair(tape, model, ex.embeds.front(), ex.embeds.back());
    total += tape.scalar(captioner::caption_loss(tape, model, enc, ex.caption));
  }
  return total / static_cast<double>(data.size());
}

// ---- checkpoints ----

void write_params(const fs::path& path, const ag::ParameterStore<float>& store) {
  std::vector<std::pair<std::string, const MatF*>> t;
  for (const auto* p : store.all()) t.emplace_back(p->name, &p->value);
  write_tensors(path, t, "");
}

std::vector<std::string> read_params(const fs::path& path, ag::ParameterStore<float>& store, bool require_all,
                                     const std::string& prefix) {
  auto tf = read_tensors(path);
  std::vector<std::string> loaded;
  for (auto& [name, m] : tf.tensors) {
    if (!prefix.empty() && name.rfind(prefix, 0) != 0) continue;
    if (!store.has(name)) {
      if (!prefix.empty()) {
        throw ConfigError(path.string() + ": tensor " + name + " has no counterpart in the model");
      }
      throw ConfigError(path.string() + ": unknown tensor " + name);
    }
    auto& p = store.get(name);
    if (p.value.rows() != m.rows() || p.value.cols() != m.cols()) {
      throw ConfigError(path.string() + ": tensor " + name + " is " + std::to_string(m.rows()) + "x" +
                        std::to_string(m.cols()) + ", model expects " + std::to_string(p.value.rows()) + "x" +
                        std::to_string(p.value.cols()));
    }
    p.value = std::move(m);
    loaded.push_back(name);
  }
  if (require_all && loaded.size() != store.size()) {
    for (const auto* p : std::as_const(store).all()) {
      if (std::find(loaded.begin(), loaded.end(), p->name) == loaded.end()) {
        throw ConfigError(path.string() + ": missing tensor " + p->name);
      }
    }
  }
  return loaded;
}

void save_checkpoint(const fs::path& dir, const ProcapModel<float>& model, const Adam& adam,
                     const ConfigFile& snapshot, const synth::Vocabulary& vocab, const vq::PatchEmbedder& embedder,
                     const CheckpointInfo& info) {
  fs::create_directories(dir);
  write_params(dir / "params.bin", model.params());
  adam.save(dir / "optimizer.bin");
  write_text_file(dir / "config.cfg", "# config-hash " + snapshot.hash() + "\n" + snapshot.serialize());
  const auto seed = snapshot.get_string("seed");
  write_text_file(dir / "rng.txt", "base_seed=" + seed +
                                       "\n# streams are derived per step: order1/order2:<epoch>, "
                                       "mask:<step>:<j>, negative:<step>, warp:<step>:<j>\n");
  write_text_file(dir / "state.txt", "stage=" + std::to_string(info.stage) + "\nstep=" + std::to_string(info.step) +
                                         "\nkeyframes=" + std::to_string(info.keyframes) +
                                         "\nparams_hash=" + model.params().hash() + "\n");
  vocab.save(dir / "vocab.txt");
  embedder.save(dir / "embedder.bin");
}

namespace {

std::map<std::string, std::string> read_state(const fs::path& path) {
  std::map<std::string, std::string> out;
  std::istringstream in(read_text_file(path));
  std::string line;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq != std::string::npos) out[line.substr(0, eq)] = line.substr(eq + 1);
  }
  return out;
}

}  // namespace

LoadedCheckpoint load_checkpoint(const fs::path& dir) {
  for (const char* f : {"params.bin", "optimizer.bin", "config.cfg", "state.txt", "vocab.txt", "embedder.bin"}) {
    if (!fs::exists(dir / f)) {
      throw MissingArtifactError("checkpoint " + dir.string() + " lacks " + f +
                                 "; run the matching train-stage command first");
    }
  }
  LoadedCheckpoint ck;
  ck.config = ConfigFile::load(dir / "config.cfg");
  ck.vocab = synth::Vocabulary::load(dir / "vocab.txt");
  ck.embedder = vq::PatchEmbedder::load(dir / "embedder.bin");
  const auto state = read_state(dir / "state.txt");
  try {
    ck.info.stage = std::stoi(state.at("stage"));
    ck.info.step = std::stoi(state.at("step"));
    ck.info.keyframes = std::stoi(state.at("keyframes"));
  } catch (const std::exception&) {
    throw RuntimeFailure(dir.string() + "/state.txt is incomplete");
  }
  ModelConfig mc = ModelConfig::from(ck.config);
  mc.vocab_size = ck.vocab.size();
  const auto tc = TrainConfig::from(ck.config);
  ck.model = std::make_unique<ProcapModel<float>>(mc, tc.seed);
  if (ck.info.keyframes > 0 && ck.info.stage == 2) ck.model->init_queries(ck.info.keyframes);
  else if (ck.info.stage == 2) ck.model->init_queries(0);
  read_params(dir / "params.bin", ck.model->params(), true);
  ck.adam.load(dir / "optimizer.bin");
  return ck;
}

std::vector<std::string> transfer_encoder(const fs::path& stage1_dir, ProcapModel<float>& model) {
  if (!fs::exists(stage1_dir / "params.bin")) {
    throw MissingArtifactError("no stage-1 checkpoint at " + stage1_dir.string() +
                               "; run train-stage1 or pass --from-scratch");
  }
  return read_params(stage1_dir / "params.bin", model.params(), false, "enc.");
}

}  // namespace procap::trainer
