#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "procap/config.hpp"
#include "procap/frame.hpp"
#include "procap/procedure.hpp"

namespace procap::synth {

enum class Shape : std::uint8_t { square, circle, triangle };
enum class Color : std::uint8_t { red, green, blue, yellow, purple, cyan };
enum class Size : std::uint8_t { small, large };
enum class ChangeType : std::uint8_t { color, move, add, drop, none };
enum class Distractor : std::uint8_t { none, viewpoint_shift, illumination_shift };
enum class Direction : std::uint8_t { up, down, left, right };

inline constexpr int kNumShapes = 3;
inline constexpr int kNumColors = 6;
inline constexpr int kNumSizes = 2;
inline constexpr int kNumChangeTypes = 5;

std::string_view name(Shape s);
std::string_view name(Color c);
std::string_view name(Size s);
std::string_view name(ChangeType t);
std::string_view name(Distractor d);
std::string_view name(Direction d);

std::optional<Shape> parse_shape(std::string_view w);
std::optional<Color> parse_color(std::string_view w);
std::optional<Size> parse_size(std::string_view w);
std::optional<ChangeType> parse_change_type(std::string_view w);
std::optional<Distractor> parse_distractor(std::string_view w);
std::optional<Direction> parse_direction(std::string_view w);

std::array<float, 3> rgb(Color c);
inline constexpr std::array<float, 3> kBackground = {0.5f, 0.5f, 0.5f};

struct GridPos {
  int row = 0;
  int col = 0;
  bool operator==(const GridPos&) const = default;
};

GridPos step(GridPos p, Direction d);

struct Attributes {
  Shape shape = Shape::square;
  Color color = Color::red;
  Size size = Size::small;
  bool operator==(const Attributes&) const = default;
};

struct ObjectSpec {
  Shape shape = Shape::square;
  Color color = Color::red;
  Size size = Size::small;
  GridPos position;
  bool exists = true;

  Attributes attributes() const { return {shape, color, size}; }
  bool operator==(const ObjectSpec&) const = default;
};

struct SceneState {
  std::vector<ObjectSpec> objects;
  int canvas_height = 32;
  int canvas_width = 32;
  int grid_rows = 4;
  int grid_cols = 4;
  double illumination = 1.0;
  int offset_y = 0;
  int offset_x = 0;

  bool occupied(GridPos p) const;
  std::optional<int> find(const Attributes& a) const;  // existing objects only
  std::optional<GridPos> first_free_cell() const;
  int existing_count() const;
  bool operator==(const SceneState&) const = default;
};

struct DistractorSpec {
  Distractor kind = Distractor::none;
  int offset_y = 0;
  int offset_x = 0;
  double illumination = 1.0;
  bool operator==(const DistractorSpec&) const = default;
};

// Payload: color -> new Color, move -> Direction (one cell), add -> ObjectSpec.
using ChangeValue = std::variant<std::monostate, Color, Direction, ObjectSpec>;

struct ChangeSpec {
  ChangeType type = ChangeType::none;
  int target_index = 0;
  ChangeValue new_value;
  DistractorSpec distractor;

  bool same_change(const ChangeSpec& other) const;  // ignores the distractor
  bool operator==(const ChangeSpec&) const = default;
};

struct SceneConfig {
  int image_size = 32;
  int grid_rows = 4;
  int grid_cols = 4;
  int min_objects = 2;
  int max_objects = 4;
  double distractor_prob = 0.2;

  static SceneConfig from(const DatasetConfig& cfg);
};

SceneState generate_scene(std::uint64_t seed, const SceneConfig& cfg);
void validate(const SceneState& scene);
void validate(const ChangeSpec& change, const SceneState& scene);
SceneState apply_change(const SceneState& scene, const ChangeSpec& change);

// Rendering primitive shared by render() and the oracle so endpoints match bit-exactly.
struct RenderObject {
  double center_y = 0;
  double center_x = 0;
  double half_extent = 0;
  Shape shape = Shape::square;
  std::array<float, 3> color{};
  double alpha = 1.0;
};

Frame render_objects(int height, int width, const std::vector<RenderObject>& objects,
                     double illumination);
std::vector<RenderObject> layout(const SceneState& scene, int image_size);
Frame render(const SceneState& scene, int image_size);
inline Frame render(const SceneState& scene) { return render(scene, scene.canvas_height); }

// Pixel rectangle [y0,y1) x [x0,x1) covered by a grid cell at the scene's offset.
struct PixelBox {
  int y0, x0, y1, x1;
};
PixelBox cell_box(const SceneState& scene, GridPos cell, int image_size);

// ---- caption grammar ----

inline constexpr int kPad = 0;
inline constexpr int kBos = 1;
inline constexpr int kEos = 2;
inline constexpr int kUnk = 3;

class Vocabulary {
 public:
  Vocabulary();  // reserved tokens only
  explicit Vocabulary(std::vector<std::string> words);

  int id(std::string_view word) const;  // kUnk when absent
  const std::string& word(int id) const;
  int size() const { return static_cast<int>(words_.size()); }
  bool contains(std::string_view word) const;
  int add(const std::string& word);

  const std::vector<std::string>& words() const { return words_; }

  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);
  bool operator==(const Vocabulary& other) const { return words_ == other.words_; }

 private:
  std::vector<std::string> words_;
};

struct ChangeSlots {
  ChangeType type = ChangeType::none;
  std::optional<Attributes> target;
  std::optional<Color> new_color;
  std::optional<Direction> direction;
  bool operator==(const ChangeSlots&) const = default;
};

struct Caption {
  std::vector<int> token_ids;  // BOS ... EOS
  std::vector<std::string> surface;
  ChangeSlots slots;

  std::string text() const;
};

// One template per change type; placeholders {size} {color} {shape} {new_color} {direction}.
struct Grammar {
  std::array<std::string, kNumChangeTypes> templates;
};

const Grammar& default_grammar();
Vocabulary grammar_vocabulary(const Grammar& grammar);

ChangeSlots slots_of(const ChangeSpec& change, const SceneState& scene);
std::vector<std::string> realize(const ChangeSlots& slots, const Grammar& grammar);
Caption caption_of(const ChangeSpec& change, const SceneState& scene, const Grammar& grammar,
                   const Vocabulary& vocab);
std::optional<ChangeSlots> parse_slots(const std::vector<std::string>& words,
                                       const Grammar& grammar);
// Inverts slots to a change on the given scene; add uses the first free cell in row-major order.
std::optional<ChangeSpec> resolve(const ChangeSlots& slots, const SceneState& scene);

std::vector<int> encode(const std::vector<std::string>& words, const Vocabulary& vocab);
std::vector<std::string> decode(const std::vector<int>& ids, const Vocabulary& vocab);

// ---- ground-truth procedure ----

Frame oracle_frame(const SceneState& before, const ChangeSpec& change, double t, int image_size);
PseudoFrameSequence oracle_procedure(const SceneState& before, const ChangeSpec& change, int l,
                                     int image_size);

// ---- dataset ----

enum class Split : std::uint8_t { train, val, test };
std::string_view name(Split s);
std::optional<Split> parse_split(std::string_view w);

struct Record {
  std::string id;
  Split split = Split::train;
  std::uint64_t seed = 0;
  SceneState before;
  ChangeSpec change;
  SceneState after;
  Caption caption;
  FramePair frames;
};

// Samples a feasible change for the scene; distractor-only when type is none.
ChangeSpec sample_change(const SceneState& scene, std::uint64_t seed, const SceneConfig& cfg);
Record generate_record(std::uint64_t seed, Split split, int index, const SceneConfig& cfg,
                       const Vocabulary& vocab);

struct SplitRange {
  Split split;
  int begin;
  int end;
};
std::vector<SplitRange> split_ranges(const DatasetConfig& cfg);
std::uint64_t record_seed(const DatasetConfig& cfg, int index);

std::vector<Record> generate_records(const DatasetConfig& cfg, const Vocabulary& vocab);

struct ManifestRecord {
  std::string id;
  std::string before_path;  // relative to the dataset root
  std::string after_path;
  std::vector<std::string> captions;
  ChangeSpec change;
  std::uint64_t seed = 0;
};

struct DatasetManifest {
  Split split = Split::train;
  std::vector<ManifestRecord> records;
  Vocabulary vocab;
  std::string config_hash;
};

std::string change_to_json(const ChangeSpec& change);
ChangeSpec change_from_json(const std::string& json);

std::string manifest_line(const ManifestRecord& record);
ManifestRecord parse_manifest_line(const std::string& line);

// Writes images/, manifest_<split>.jsonl, vocab.txt and dataset.cfg under out_dir.
std::vector<DatasetManifest> build_dataset(const ConfigFile& cfg, const std::filesystem::path& out_dir);
DatasetManifest load_manifest(const std::filesystem::path& root, Split split);

}  // namespace procap::synth
