#include "procap/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>

#include "json.hpp"
#include "procap/error.hpp"
#include "procap/util.hpp"

namespace procap::synth {

using nlohmann::json;

namespace {

constexpr std::array<std::string_view, kNumShapes> kShapeNames = {"square", "circle", "triangle"};
constexpr std::array<std::string_view, kNumColors> kColorNames = {"red",    "green",  "blue",
                                                                  "yellow", "purple", "cyan"};
constexpr std::array<std::string_view, kNumSizes> kSizeNames = {"small", "large"};
constexpr std::array<std::string_view, kNumChangeTypes> kChangeNames = {"color", "move", "add",
                                                                        "drop", "none"};
constexpr std::array<std::string_view, 3> kDistractorNames = {"none", "viewpoint_shift",
                                                              "illumination_shift"};
constexpr std::array<std::string_view, 4> kDirectionNames = {"up", "down", "left", "right"};
constexpr std::array<std::string_view, 3> kSplitNames = {"train", "val", "test"};

template <typename E, std::size_t N>
std::optional<E> lookup(const std::array<std::string_view, N>& names, std::string_view w) {
  for (std::size_t i = 0; i < N; ++i) {
    if (names[i] == w) return static_cast<E>(i);
  }
  return std::nullopt;
}

constexpr double kLargeHalf = 0.42;
constexpr double kSmallHalf = 0.27;

}  // namespace

std::string_view name(Shape s) { return kShapeNames[static_cast<int>(s)]; }
std::string_view name(Color c) { return kColorNames[static_cast<int>(c)]; }
std::string_view name(Size s) { return kSizeNames[static_cast<int>(s)]; }
std::string_view name(ChangeType t) { return kChangeNames[static_cast<int>(t)]; }
std::string_view name(Distractor d) { return kDistractorNames[static_cast<int>(d)]; }
std::string_view name(Direction d) { return kDirectionNames[static_cast<int>(d)]; }
std::string_view name(Split s) { return kSplitNames[static_cast<int>(s)]; }

std::optional<Shape> parse_shape(std::string_view w) { return lookup<Shape>(kShapeNames, w); }
std::optional<Color> parse_color(std::string_view w) { return lookup<Color>(kColorNames, w); }
std::optional<Size> parse_size(std::string_view w) { return lookup<Size>(kSizeNames, w); }
std::optional<ChangeType> parse_change_type(std::string_view w) {
  return lookup<ChangeType>(kChangeNames, w);
}
std::optional<Distractor> parse_distractor(std::string_view w) {
  return lookup<Distractor>(kDistractorNames, w);
}
std::optional<Direction> parse_direction(std::string_view w) {
  return lookup<Direction>(kDirectionNames, w);
}
std::optional<Split> parse_split(std::string_view w) { return lookup<Split>(kSplitNames, w); }

std::array<float, 3> rgb(Color c) {
  switch (c) {
    case Color::red:
      return {0.90f, 0.10f, 0.10f};
    case Color::green:
      return {0.10f, 0.75f, 0.20f};
    case Color::blue:
      return {0.15f, 0.25f, 0.95f};
    case Color::yellow:
      return {0.95f, 0.90f, 0.10f};
    case Color::purple:
      return {0.60f, 0.15f, 0.80f};
    case Color::cyan:
      return {0.10f, 0.85f, 0.90f};
  }
  return {0, 0, 0};
}

GridPos step(GridPos p, Direction d) {
  switch (d) {
    case Direction::up:
      return {p.row - 1, p.col};
    case Direction::down:
      return {p.row + 1, p.col};
    case Direction::left:
      return {p.row, p.col - 1};
    case Direction::right:
      return {p.row, p.col + 1};
  }
  return p;
}

bool SceneState::occupied(GridPos p) const {
  return std::any_of(objects.begin(), objects.end(),
                     [&](const ObjectSpec& o) { return o.exists && o.position == p; });
}

std::optional<int> SceneState::find(const Attributes& a) const {
  for (std::size_t i = 0; i < objects.size(); ++i) {
    if (objects[i].exists && objects[i].attributes() == a) return static_cast<int>(i);
  }
  return std::nullopt;
}

std::optional<GridPos> SceneState::first_free_cell() const {
  for (int r = 0; r < grid_rows; ++r) {
    for (int c = 0; c < grid_cols; ++c) {
      if (!occupied({r, c})) return GridPos{r, c};
    }
  }
  return std::nullopt;
}

int SceneState::existing_count() const {
  return static_cast<int>(
      std::count_if(objects.begin(), objects.end(), [](const ObjectSpec& o) { return o.exists; }));
}

bool ChangeSpec::same_change(const ChangeSpec& other) const {
  return type == other.type && target_index == other.target_index && new_value == other.new_value;
}

SceneConfig SceneConfig::from(const DatasetConfig& cfg) {
  SceneConfig s;
  s.image_size = cfg.image_size;
  s.grid_rows = cfg.grid_rows;
  s.grid_cols = cfg.grid_cols;
  s.min_objects = cfg.min_objects;
  s.max_objects = cfg.max_objects;
  s.distractor_prob = cfg.distractor_prob;
  return s;
}

namespace {

bool in_bounds(const SceneState& s, GridPos p) {
  return p.row >= 0 && p.row < s.grid_rows && p.col >= 0 && p.col < s.grid_cols;
}

std::vector<Attributes> all_attributes() {
  std::vector<Attributes> out;
  for (int sh = 0; sh < kNumShapes; ++sh) {
    for (int co = 0; co < kNumColors; ++co) {
      for (int si = 0; si < kNumSizes; ++si) {
        out.push_back({static_cast<Shape>(sh), static_cast<Color>(co), static_cast<Size>(si)});
      }
    }
  }
  return out;
}

template <typename T>
const T& pick(const std::vector<T>& v, Rng& rng) {
  std::uniform_int_distribution<std::size_t> d(0, v.size() - 1);
  return v[d(rng)];
}

}  // namespace

SceneState generate_scene(std::uint64_t seed, const SceneConfig& cfg) {
  const int cells = cfg.grid_rows * cfg.grid_cols;
  if (cfg.min_objects < 0 || cfg.max_objects < cfg.min_objects) {
    throw ConfigError("invalid object-count range");
  }
  if (cfg.max_objects > cells) {
    throw InfeasibleError("cannot place " + std::to_string(cfg.max_objects) + " objects on a " +
                          std::to_string(cfg.grid_rows) + "x" + std::to_string(cfg.grid_cols) +
                          " grid");
  }
  const auto attrs_all = all_attributes();
  if (cfg.max_objects > static_cast<int>(attrs_all.size())) {
    throw InfeasibleError("more objects requested than distinct attribute combinations");
  }
  if (cfg.image_size % cfg.grid_rows != 0 || cfg.image_size % cfg.grid_cols != 0) {
    throw ConfigError("image_size must be divisible by the grid dimensions");
  }

  Rng rng(derive_seed(seed, "scene"));
  std::uniform_int_distribution<int> count(cfg.min_objects, cfg.max_objects);
  const int n = count(rng);

  std::vector<GridPos> cell_list;
  for (int r = 0; r < cfg.grid_rows; ++r) {
    for (int c = 0; c < cfg.grid_cols; ++c) cell_list.push_back({r, c});
  }
  std::shuffle(cell_list.begin(), cell_list.end(), rng);
  auto attrs = attrs_all;
  std::shuffle(attrs.begin(), attrs.end(), rng);

  SceneState scene;
  scene.canvas_height = cfg.image_size;
  scene.canvas_width = cfg.image_size;
  scene.grid_rows = cfg.grid_rows;
  scene.grid_cols = cfg.grid_cols;
  for (int i = 0; i < n; ++i) {
    scene.objects.push_back({attrs[i].shape, attrs[i].color, attrs[i].size, cell_list[i], true});
  }
  return scene;
}

void validate(const SceneState& scene) {
  if (scene.illumination < 0.5 || scene.illumination > 1.5) {
    throw ConfigError("illumination outside [0.5, 1.5]");
  }
  for (std::size_t i = 0; i < scene.objects.size(); ++i) {
    const auto& a = scene.objects[i];
    if (!in_bounds(scene, a.position)) throw InfeasibleError("object outside the grid");
    if (!a.exists) continue;
    for (std::size_t j = i + 1; j < scene.objects.size(); ++j) {
      const auto& b = scene.objects[j];
      if (!b.exists) continue;
      if (a.position == b.position) throw InfeasibleError("two objects share a cell");
      if (a.attributes() == b.attributes()) {
        throw InfeasibleError("two objects share shape, color and size");
      }
    }
  }
}

void validate(const ChangeSpec& change, const SceneState& scene) {
  const int n = static_cast<int>(scene.objects.size());
  auto require_target = [&] {
    if (change.target_index < 0 || change.target_index >= n ||
        !scene.objects[change.target_index].exists) {
      throw InfeasibleError("change target " + std::to_string(change.target_index) +
                            " is not an existing object");
    }
    return scene.objects[change.target_index];
  };

  switch (change.type) {
    case ChangeType::color: {
      const auto obj = require_target();
      const auto* c = std::get_if<Color>(&change.new_value);
      if (!c) throw InfeasibleError("color change needs a Color payload");
      if (*c == obj.color) throw InfeasibleError("color change to the same color");
      if (scene.find({obj.shape, *c, obj.size})) {
        throw InfeasibleError("color change would duplicate an existing object");
      }
      break;
    }
    case ChangeType::move: {
      const auto obj = require_target();
      const auto* d = std::get_if<Direction>(&change.new_value);
      if (!d) throw InfeasibleError("move change needs a Direction payload");
      const GridPos to = step(obj.position, *d);
      if (!in_bounds(scene, to)) throw InfeasibleError("move leaves the grid");
      if (scene.occupied(to)) throw InfeasibleError("move into an occupied cell");
      break;
    }
    case ChangeType::add: {
      if (change.target_index != n) {
        throw InfeasibleError("add must target index " + std::to_string(n));
      }
      const auto* o = std::get_if<ObjectSpec>(&change.new_value);
      if (!o) throw InfeasibleError("add change needs an ObjectSpec payload");
      if (!o->exists) throw InfeasibleError("added object must exist");
      if (!in_bounds(scene, o->position)) throw InfeasibleError("added object outside the grid");
      if (scene.occupied(o->position)) throw InfeasibleError("add into an occupied cell");
      if (scene.find(o->attributes())) throw InfeasibleError("add would duplicate an object");
      break;
    }
    case ChangeType::drop:
      require_target();
      break;
    case ChangeType::none:
      if (change.distractor.kind == Distractor::none) {
        throw InfeasibleError("a no-change pair must carry a distractor");
      }
      break;
  }

  const auto& d = change.distractor;
  if (d.kind == Distractor::viewpoint_shift && d.offset_y == 0 && d.offset_x == 0) {
    throw InfeasibleError("viewpoint shift with zero offset");
  }
  if (d.kind == Distractor::illumination_shift &&
      (d.illumination * scene.illumination < 0.5 || d.illumination * scene.illumination > 1.5)) {
    throw InfeasibleError("illumination shift leaves [0.5, 1.5]");
  }
}

SceneState apply_change(const SceneState& scene, const ChangeSpec& change) {
  validate(change, scene);
  SceneState out = scene;
  switch (change.type) {
    case ChangeType::color:
      out.objects[change.target_index].color = std::get<Color>(change.new_value);
      break;
    case ChangeType::move: {
      auto& obj = out.objects[change.target_index];
      obj.position = step(obj.position, std::get<Direction>(change.new_value));
      break;
    }
    case ChangeType::add:
      out.objects.push_back(std::get<ObjectSpec>(change.new_value));
      break;
    case ChangeType::drop:
      out.objects[change.target_index].exists = false;
      break;
    case ChangeType::none:
      break;
  }
  switch (change.distractor.kind) {
    case Distractor::viewpoint_shift:
      out.offset_y += change.distractor.offset_y;
      out.offset_x += change.distractor.offset_x;
      break;
    case Distractor::illumination_shift:
      out.illumination *= change.distractor.illumination;
      break;
    case Distractor::none:
      break;
  }
  return out;
}

// ---- rendering ----

namespace {

bool inside(Shape shape, double dy, double dx, double h) {
  switch (shape) {
    case Shape::square:
      return std::abs(dy) <= h && std::abs(dx) <= h;
    case Shape::circle:
      return dy * dy + dx * dx <= h * h;
    case Shape::triangle:
      return dy >= -h && dy <= h && std::abs(dx) <= 0.5 * (dy + h);
  }
  return false;
}

struct Geometry {
  double cell_h;
  double cell_w;
  double scale;
};

Geometry geometry(const SceneState& scene, int image_size) {
  return {static_cast<double>(image_size) / scene.grid_rows,
          static_cast<double>(image_size) / scene.grid_cols,
          static_cast<double>(image_size) / scene.canvas_height};
}

double half_extent(Size s, const Geometry& g) {
  return (s == Size::large ? kLargeHalf : kSmallHalf) * std::min(g.cell_h, g.cell_w);
}

double lerp(double a, double b, double t) { return (1.0 - t) * a + t * b; }

}  // namespace

Frame render_objects(int height, int width, const std::vector<RenderObject>& objects,
                     double illumination) {
  Frame frame(height, width);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      for (int c = 0; c < 3; ++c) frame.at(y, x, c) = kBackground[c];
    }
  }
  for (const auto& o : objects) {
    if (o.alpha <= 0.0) continue;
    const int y0 = std::max(0, static_cast<int>(std::floor(o.center_y - o.half_extent - 1)));
    const int y1 = std::min(height, static_cast<int>(std::ceil(o.center_y + o.half_extent + 1)));
    const int x0 = std::max(0, static_cast<int>(std::floor(o.center_x - o.half_extent - 1)));
    const int x1 = std::min(width, static_cast<int>(std::ceil(o.center_x + o.half_extent + 1)));
    for (int y = y0; y < y1; ++y) {
      for (int x = x0; x < x1; ++x) {
        if (!inside(o.shape, y + 0.5 - o.center_y, x + 0.5 - o.center_x, o.half_extent)) continue;
        for (int c = 0; c < 3; ++c) {
          float& p = frame.at(y, x, c);
          p = static_cast<float>((1.0 - o.alpha) * p + o.alpha * o.color[c]);
        }
      }
    }
  }
  if (illumination != 1.0) {
    for (auto& v : frame.data) {
      v = std::clamp(static_cast<float>(v * illumination), 0.0f, 1.0f);
    }
  }
  return frame;
}

std::vector<RenderObject> layout(const SceneState& scene, int image_size) {
  const auto g = geometry(scene, image_size);
  std::vector<RenderObject> out;
  for (const auto& o : scene.objects) {
    if (!o.exists) continue;
    const double cy = (o.position.row + 0.5) * g.cell_h;
    const double cx = (o.position.col + 0.5) * g.cell_w;
    out.push_back({cy + scene.offset_y * g.scale, cx + scene.offset_x * g.scale,
                   half_extent(o.size, g), o.shape, rgb(o.color), 1.0});
  }
  return out;
}

Frame render(const SceneState& scene, int image_size) {
  if (image_size < 1 || image_size % scene.grid_rows != 0 || image_size % scene.grid_cols != 0) {
    throw ConfigError("render size " + std::to_string(image_size) +
                      " is not divisible by the scene grid");
  }
  return render_objects(image_size, image_size, layout(scene, image_size), scene.illumination);
}

PixelBox cell_box(const SceneState& scene, GridPos cell, int image_size) {
  const auto g = geometry(scene, image_size);
  const int oy = static_cast<int>(std::lround(scene.offset_y * g.scale));
  const int ox = static_cast<int>(std::lround(scene.offset_x * g.scale));
  return {static_cast<int>(std::lround(cell.row * g.cell_h)) + oy,
          static_cast<int>(std::lround(cell.col * g.cell_w)) + ox,
          static_cast<int>(std::lround((cell.row + 1) * g.cell_h)) + oy,
          static_cast<int>(std::lround((cell.col + 1) * g.cell_w)) + ox};
}

// ---- vocabulary & grammar ----

Vocabulary::Vocabulary() : words_{"<pad>", "<bos>", "<eos>", "<unk>"} {}

Vocabulary::Vocabulary(std::vector<std::string> words) : words_(std::move(words)) {
  if (words_.size() < 4 || words_[kPad] != "<pad>" || words_[kBos] != "<bos>" ||
      words_[kEos] != "<eos>" || words_[kUnk] != "<unk>") {
    throw ConfigError("vocabulary must reserve ids 0-3 for <pad> <bos> <eos> <unk>");
  }
}

int Vocabulary::id(std::string_view word) const {
  for (std::size_t i = 0; i < words_.size(); ++i) {
    if (words_[i] == word) return static_cast<int>(i);
  }
  return kUnk;
}

const std::string& Vocabulary::word(int id) const {
  if (id < 0 || id >= size()) return words_[kUnk];
  return words_[static_cast<std::size_t>(id)];
}

bool Vocabulary::contains(std::string_view word) const {
  return std::find(words_.begin(), words_.end(), word) != words_.end();
}

int Vocabulary::add(const std::string& word) {
  if (const int i = id(word); i != kUnk || word == "<unk>") return i;
  words_.push_back(word);
  return size() - 1;
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::string out;
  for (const auto& w : words_) out += w + "\n";
  write_text_file(path, out);
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  return Vocabulary(split_words(read_text_file(path)));
}

std::string Caption::text() const { return join(surface); }

const Grammar& default_grammar() {
  static const Grammar g{{
      "the {size} {color} {shape} changed to {new_color}",
      "the {size} {color} {shape} moved {direction}",
      "a {size} {color} {shape} has appeared",
      "the {size} {color} {shape} has disappeared",
      "the scene remains the same",
  }};
  return g;
}

Vocabulary grammar_vocabulary(const Grammar& grammar) {
  Vocabulary v;
  for (const auto& tmpl : grammar.templates) {
    for (const auto& tok : split_words(tmpl)) {
      if (tok == "{size}") {
        for (auto n : kSizeNames) v.add(std::string(n));
      } else if (tok == "{color}" || tok == "{new_color}") {
        for (auto n : kColorNames) v.add(std::string(n));
      } else if (tok == "{shape}") {
        for (auto n : kShapeNames) v.add(std::string(n));
      } else if (tok == "{direction}") {
        for (auto n : kDirectionNames) v.add(std::string(n));
      } else {
        v.add(tok);
      }
    }
  }
  return v;
}

ChangeSlots slots_of(const ChangeSpec& change, const SceneState& scene) {
  ChangeSlots s;
  s.type = change.type;
  switch (change.type) {
    case ChangeType::color:
      s.target = scene.objects.at(change.target_index).attributes();
      s.new_color = std::get<Color>(change.new_value);
      break;
    case ChangeType::move:
      s.target = scene.objects.at(change.target_index).attributes();
      s.direction = std::get<Direction>(change.new_value);
      break;
    case ChangeType::add:
      s.target = std::get<ObjectSpec>(change.new_value).attributes();
      break;
    case ChangeType::drop:
      s.target = scene.objects.at(change.target_index).attributes();
      break;
    case ChangeType::none:
      break;
  }
  return s;
}

std::vector<std::string> realize(const ChangeSlots& slots, const Grammar& grammar) {
  std::vector<std::string> words;
  for (const auto& tok : split_words(grammar.templates[static_cast<int>(slots.type)])) {
    if (tok == "{size}") {
      words.emplace_back(name(slots.target.value().size));
    } else if (tok == "{color}") {
      words.emplace_back(name(slots.target.value().color));
    } else if (tok == "{shape}") {
      words.emplace_back(name(slots.target.value().shape));
    } else if (tok == "{new_color}") {
      words.emplace_back(name(slots.new_color.value()));
    } else if (tok == "{direction}") {
      words.emplace_back(name(slots.direction.value()));
    } else {
      words.push_back(tok);
    }
  }
  return words;
}

std::vector<int> encode(const std::vector<std::string>& words, const Vocabulary& vocab) {
  std::vector<int> ids{kBos};
  for (const auto& w : words) ids.push_back(vocab.id(w));
  ids.push_back(kEos);
  return ids;
}

std::vector<std::string> decode(const std::vector<int>& ids, const Vocabulary& vocab) {
  std::vector<std::string> words;
  for (int id : ids) {
    if (id == kBos || id == kPad) continue;
    if (id == kEos) break;
    words.push_back(vocab.word(id));
  }
  return words;
}

Caption caption_of(const ChangeSpec& change, const SceneState& scene, const Grammar& grammar,
                   const Vocabulary& vocab) {
  Caption cap;
  cap.slots = slots_of(change, scene);
  cap.surface = realize(cap.slots, grammar);
  cap.token_ids = encode(cap.surface, vocab);
  return cap;
}

std::optional<ChangeSlots> parse_slots(const std::vector<std::string>& words,
                                       const Grammar& grammar) {
  for (int t = 0; t < kNumChangeTypes; ++t) {
    const auto toks = split_words(grammar.templates[t]);
    if (toks.size() != words.size()) continue;
    ChangeSlots s;
    s.type = static_cast<ChangeType>(t);
    Attributes a;
    bool has_target = false;
    bool ok = true;
    for (std::size_t i = 0; i < toks.size() && ok; ++i) {
      const auto& tok = toks[i];
      const auto& w = words[i];
      if (tok == "{size}") {
        auto v = parse_size(w);
        ok = v.has_value();
        if (ok) a.size = *v, has_target = true;
      } else if (tok == "{color}") {
        auto v = parse_color(w);
        ok = v.has_value();
        if (ok) a.color = *v, has_target = true;
      } else if (tok == "{shape}") {
        auto v = parse_shape(w);
        ok = v.has_value();
        if (ok) a.shape = *v, has_target = true;
      } else if (tok == "{new_color}") {
        s.new_color = parse_color(w);
        ok = s.new_color.has_value();
      } else if (tok == "{direction}") {
        s.direction = parse_direction(w);
        ok = s.direction.has_value();
      } else {
        ok = tok == w;
      }
    }
    if (!ok) continue;
    if (has_target) s.target = a;
    return s;
  }
  return std::nullopt;
}

std::optional<ChangeSpec> resolve(const ChangeSlots& slots, const SceneState& scene) {
  ChangeSpec c;
  c.type = slots.type;
  if (slots.type == ChangeType::none) return c;
  if (!slots.target) return std::nullopt;
  if (slots.type == ChangeType::add) {
    const auto cell = scene.first_free_cell();
    if (!cell) return std::nullopt;
    c.target_index = static_cast<int>(scene.objects.size());
    c.new_value = ObjectSpec{slots.target->shape, slots.target->color, slots.target->size, *cell,
                             true};
    return c;
  }
  const auto idx = scene.find(*slots.target);
  if (!idx) return std::nullopt;
  c.target_index = *idx;
  if (slots.type == ChangeType::color) {
    if (!slots.new_color) return std::nullopt;
    c.new_value = *slots.new_color;
  } else if (slots.type == ChangeType::move) {
    if (!slots.direction) return std::nullopt;
    c.new_value = *slots.direction;
  }
  return c;
}

// ---- oracle procedure ----

Frame oracle_frame(const SceneState& before, const ChangeSpec& change, double t, int image_size) {
  const SceneState after = apply_change(before, change);
  if (image_size % before.grid_rows != 0 || image_size % before.grid_cols != 0) {
    throw ConfigError("render size is not divisible by the scene grid");
  }
  const auto g = geometry(before, image_size);
  const double off_y = lerp(before.offset_y, after.offset_y, t);
  const double off_x = lerp(before.offset_x, after.offset_x, t);

  std::vector<RenderObject> objects;
  auto place = [&](const ObjectSpec& o, double cell_y, double cell_x, std::array<float, 3> color,
                   double alpha) {
    objects.push_back({cell_y + off_y * g.scale, cell_x + off_x * g.scale, half_extent(o.size, g),
                       o.shape, color, alpha});
  };

  for (std::size_t i = 0; i < before.objects.size(); ++i) {
    const auto& o = before.objects[i];
    if (!o.exists) continue;
    const double cy0 = (o.position.row + 0.5) * g.cell_h;
    const double cx0 = (o.position.col + 0.5) * g.cell_w;
    const bool target = static_cast<int>(i) == change.target_index;
    if (!target || change.type == ChangeType::none || change.type == ChangeType::add) {
      place(o, cy0, cx0, rgb(o.color), 1.0);
      continue;
    }
    switch (change.type) {
      case ChangeType::color: {
        const auto c0 = rgb(o.color);
        const auto c1 = rgb(std::get<Color>(change.new_value));
        std::array<float, 3> c{};
        for (int k = 0; k < 3; ++k) c[k] = static_cast<float>(lerp(c0[k], c1[k], t));
        place(o, cy0, cx0, c, 1.0);
        break;
      }
      case ChangeType::move: {
        const GridPos to = after.objects[i].position;
        const double cy1 = (to.row + 0.5) * g.cell_h;
        const double cx1 = (to.col + 0.5) * g.cell_w;
        place(o, lerp(cy0, cy1, t), lerp(cx0, cx1, t), rgb(o.color), 1.0);
        break;
      }
      case ChangeType::drop:
        place(o, cy0, cx0, rgb(o.color), lerp(1.0, 0.0, t));
        break;
      default:
        break;
    }
  }
  if (change.type == ChangeType::add) {
    const auto& o = std::get<ObjectSpec>(change.new_value);
    place(o, (o.position.row + 0.5) * g.cell_h, (o.position.col + 0.5) * g.cell_w, rgb(o.color),
          lerp(0.0, 1.0, t));
  }
  return render_objects(image_size, image_size, objects,
                        lerp(before.illumination, after.illumination, t));
}

PseudoFrameSequence oracle_procedure(const SceneState& before, const ChangeSpec& change, int l,
                                     int image_size) {
  if (l < 1) throw ConfigError("procedure length must be at least 1");
  PseudoFrameSequence seq;
  seq.source = ProcedureSource::oracle;
  for (int i = 1; i <= l; ++i) {
    const double t = static_cast<double>(i) / (l + 1);
    seq.timestamps.push_back(t);
    seq.frames.push_back(oracle_frame(before, change, t, image_size));
  }
  return seq;
}

// ---- dataset generation ----

namespace {

DistractorSpec sample_distractor(Rng& rng) {
  DistractorSpec d;
  std::bernoulli_distribution coin(0.5);
  if (coin(rng)) {
    d.kind = Distractor::viewpoint_shift;
    std::uniform_int_distribution<int> off(-2, 2);
    do {
      d.offset_y = off(rng);
      d.offset_x = off(rng);
    } while (d.offset_y == 0 && d.offset_x == 0);
  } else {
    d.kind = Distractor::illumination_shift;
    std::uniform_real_distribution<double> mag(0.10, 0.25);
    const double m = mag(rng);
    d.illumination = coin(rng) ? 1.0 + m : 1.0 - m;
  }
  return d;
}

}  // namespace

ChangeSpec sample_change(const SceneState& scene, std::uint64_t seed, const SceneConfig& cfg) {
  Rng rng(derive_seed(seed, "change"));
  std::uniform_int_distribution<int> type_dist(0, kNumChangeTypes - 1);
  std::bernoulli_distribution with_distractor(cfg.distractor_prob);

  std::vector<int> existing;
  for (std::size_t i = 0; i < scene.objects.size(); ++i) {
    if (scene.objects[i].exists) existing.push_back(static_cast<int>(i));
  }

  for (int attempt = 0; attempt < 64; ++attempt) {
    ChangeSpec c;
    c.type = static_cast<ChangeType>(type_dist(rng));
    bool ok = true;
    switch (c.type) {
      case ChangeType::none:
        c.distractor = sample_distractor(rng);
        return c;
      case ChangeType::color: {
        if (existing.empty()) {
          ok = false;
          break;
        }
        c.target_index = pick(existing, rng);
        const auto& o = scene.objects[c.target_index];
        std::vector<Color> options;
        for (int k = 0; k < kNumColors; ++k) {
          const auto col = static_cast<Color>(k);
          if (col != o.color && !scene.find({o.shape, col, o.size})) options.push_back(col);
        }
        if (options.empty()) {
          ok = false;
          break;
        }
        c.new_value = pick(options, rng);
        break;
      }
      case ChangeType::move: {
        if (existing.empty()) {
          ok = false;
          break;
        }
        c.target_index = pick(existing, rng);
        const auto& o = scene.objects[c.target_index];
        std::vector<Direction> options;
        for (int k = 0; k < 4; ++k) {
          const auto d = static_cast<Direction>(k);
          const auto to = step(o.position, d);
          if (in_bounds(scene, to) && !scene.occupied(to)) options.push_back(d);
        }
        if (options.empty()) {
          ok = false;
          break;
        }
        c.new_value = pick(options, rng);
        break;
      }
      case ChangeType::add: {
        const auto cell = scene.first_free_cell();
        std::vector<Attributes> options;
        for (const auto& a : all_attributes()) {
          if (!scene.find(a)) options.push_back(a);
        }
        if (!cell || options.empty()) {
          ok = false;
          break;
        }
        const auto a = pick(options, rng);
        c.target_index = static_cast<int>(scene.objects.size());
        c.new_value = ObjectSpec{a.shape, a.color, a.size, *cell, true};
        break;
      }
      case ChangeType::drop:
        if (existing.empty()) {
          ok = false;
          break;
        }
        c.target_index = pick(existing, rng);
        break;
    }
    if (!ok) continue;
    if (with_distractor(rng)) c.distractor = sample_distractor(rng);
    return c;
  }
  ChangeSpec fallback;
  fallback.distractor = sample_distractor(rng);
  return fallback;
}

Record generate_record(std::uint64_t seed, Split split, int index, const SceneConfig& cfg,
                       const Vocabulary& vocab) {
  Record r;
  char buf[64];
  std::snprintf(buf, sizeof buf, "%s_%05d", std::string(name(split)).c_str(), index);
  r.id = buf;
  r.split = split;
  r.seed = seed;
  r.before = generate_scene(seed, cfg);
  r.change = sample_change(r.before, seed, cfg);
  r.after = apply_change(r.before, r.change);
  r.caption = caption_of(r.change, r.before, default_grammar(), vocab);
  r.frames.before = render(r.before, cfg.image_size);
  r.frames.after = render(r.after, cfg.image_size);
  return r;
}

std::vector<SplitRange> split_ranges(const DatasetConfig& cfg) {
  const int n_train = static_cast<int>(std::lround(cfg.num_records * cfg.train_fraction));
  const int n_val = std::min(cfg.num_records - n_train,
                             static_cast<int>(std::lround(cfg.num_records * cfg.val_fraction)));
  return {{Split::train, 0, n_train},
          {Split::val, n_train, n_train + n_val},
          {Split::test, n_train + n_val, cfg.num_records}};
}

std::uint64_t record_seed(const DatasetConfig& cfg, int index) {
  return cfg.seed * 1000003ULL + static_cast<std::uint64_t>(index);
}

std::vector<Record> generate_records(const DatasetConfig& cfg, const Vocabulary& vocab) {
  cfg.validate();
  const auto scfg = SceneConfig::from(cfg);
  std::vector<Record> out;
  out.reserve(static_cast<std::size_t>(cfg.num_records));
  for (const auto& range : split_ranges(cfg)) {
    for (int i = range.begin; i < range.end; ++i) {
      out.push_back(generate_record(record_seed(cfg, i), range.split, i - range.begin, scfg, vocab));
    }
  }
  return out;
}

// ---- manifest serialization ----

namespace {

json change_json(const ChangeSpec& c) {
  json j;
  j["type"] = name(c.type);
  j["target"] = c.target_index;
  if (const auto* col = std::get_if<Color>(&c.new_value)) {
    j["new_value"] = name(*col);
  } else if (const auto* dir = std::get_if<Direction>(&c.new_value)) {
    j["new_value"] = name(*dir);
  } else if (const auto* obj = std::get_if<ObjectSpec>(&c.new_value)) {
    j["new_value"] = {{"shape", name(obj->shape)},
                      {"color", name(obj->color)},
                      {"size", name(obj->size)},
                      {"position", {obj->position.row, obj->position.col}}};
  } else {
    j["new_value"] = nullptr;
  }
  j["distractor"] = {{"kind", name(c.distractor.kind)},
                     {"offset", {c.distractor.offset_y, c.distractor.offset_x}},
                     {"illumination", c.distractor.illumination}};
  return j;
}

template <typename T>
T require(std::optional<T> v, const std::string& what) {
  if (!v) throw RuntimeFailure("manifest: unrecognized " + what);
  return *v;
}

ChangeSpec change_from(const json& j) {
  ChangeSpec c;
  c.type = require(parse_change_type(j.at("type").get<std::string>()), "change type");
  c.target_index = j.at("target").get<int>();
  const auto& v = j.at("new_value");
  switch (c.type) {
    case ChangeType::color:
      c.new_value = require(parse_color(v.get<std::string>()), "color");
      break;
    case ChangeType::move:
      c.new_value = require(parse_direction(v.get<std::string>()), "direction");
      break;
    case ChangeType::add: {
      ObjectSpec o;
      o.shape = require(parse_shape(v.at("shape").get<std::string>()), "shape");
      o.color = require(parse_color(v.at("color").get<std::string>()), "color");
      o.size = require(parse_size(v.at("size").get<std::string>()), "size");
      o.position = {v.at("position").at(0).get<int>(), v.at("position").at(1).get<int>()};
      c.new_value = o;
      break;
    }
    default:
      break;
  }
  const auto& d = j.at("distractor");
  c.distractor.kind = require(parse_distractor(d.at("kind").get<std::string>()), "distractor");
  c.distractor.offset_y = d.at("offset").at(0).get<int>();
  c.distractor.offset_x = d.at("offset").at(1).get<int>();
  c.distractor.illumination = d.at("illumination").get<double>();
  return c;
}

}  // namespace

std::string change_to_json(const ChangeSpec& change) { return change_json(change).dump(); }

ChangeSpec change_from_json(const std::string& text) {
  try {
    return change_from(json::parse(text));
  } catch (const json::exception& e) {
    throw RuntimeFailure(std::string("malformed change spec: ") + e.what());
  }
}

std::string manifest_line(const ManifestRecord& r) {
  json j;
  j["id"] = r.id;
  j["before_path"] = r.before_path;
  j["after_path"] = r.after_path;
  j["captions"] = r.captions;
  j["change_spec"] = change_json(r.change);
  j["seed"] = r.seed;
  return j.dump();
}

ManifestRecord parse_manifest_line(const std::string& line) {
  try {
    const auto j = json::parse(line);
    ManifestRecord r;
    r.id = j.at("id").get<std::string>();
    r.before_path = j.at("before_path").get<std::string>();
    r.after_path = j.at("after_path").get<std::string>();
    r.captions = j.at("captions").get<std::vector<std::string>>();
    r.change = change_from(j.at("change_spec"));
    r.seed = j.at("seed").get<std::uint64_t>();
    return r;
  } catch (const json::exception& e) {
    throw RuntimeFailure(std::string("malformed manifest line: ") + e.what());
  }
}

std::vector<DatasetManifest> build_dataset(const ConfigFile& cfg_file,
                                           const std::filesystem::path& out_dir) {
  namespace fs = std::filesystem;
  const auto cfg = DatasetConfig::from(cfg_file);
  const auto vocab = grammar_vocabulary(default_grammar());
  const auto scfg = SceneConfig::from(cfg);

  std::error_code ec;
  fs::create_directories(out_dir / "images", ec);
  if (ec) throw RuntimeFailure("cannot create " + (out_dir / "images").string() + ": " + ec.message());

  std::vector<DatasetManifest> manifests;
  for (const auto& range : split_ranges(cfg)) {
    DatasetManifest m;
    m.split = range.split;
    m.vocab = vocab;
    m.config_hash = cfg_file.hash();
    std::string lines;
    for (int i = range.begin; i < range.end; ++i) {
      const auto rec =
          generate_record(record_seed(cfg, i), range.split, i - range.begin, scfg, vocab);
      ManifestRecord mr;
      mr.id = rec.id;
      mr.before_path = "images/" + rec.id + "_before.png";
      mr.after_path = "images/" + rec.id + "_after.png";
      mr.captions = {rec.caption.text()};
      mr.change = rec.change;
      mr.seed = rec.seed;
      write_png(out_dir / mr.before_path, rec.frames.before);
      write_png(out_dir / mr.after_path, rec.frames.after);
      lines += manifest_line(mr) + "\n";
      m.records.push_back(std::move(mr));
    }
    write_text_file(out_dir / ("manifest_" + std::string(name(range.split)) + ".jsonl"), lines);
    manifests.push_back(std::move(m));
  }
  vocab.save(out_dir / "vocab.txt");
  write_text_file(out_dir / "dataset.cfg",
                  "# config-hash " + cfg_file.hash() + "\n" + cfg_file.serialize());
  return manifests;
}

DatasetManifest load_manifest(const std::filesystem::path& root, Split split) {
  const auto path = root / ("manifest_" + std::string(name(split)) + ".jsonl");
  if (!std::filesystem::exists(path)) {
    throw MissingArtifactError(path.string() + " not found (run gen-data first)");
  }
  DatasetManifest m;
  m.split = split;
  m.vocab = Vocabulary::load(root / "vocab.txt");
  std::istringstream in(read_text_file(path));
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) m.records.push_back(parse_manifest_line(line));
  }
  const auto cfg_text = read_text_file(root / "dataset.cfg");
  const std::string tag = "# config-hash ";
  if (cfg_text.rfind(tag, 0) == 0) {
    m.config_hash = cfg_text.substr(tag.size(), cfg_text.find('\n') - tag.size());
  }
  return m;
}

}  // namespace procap::synth
