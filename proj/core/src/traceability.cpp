#include "procap/traceability.hpp"

#include <array>
#include <map>
#include <sstream>

#include "procap/error.hpp"
#include "procap/util.hpp"

namespace procap::trace {

namespace {

constexpr std::array<std::string_view, 22> kAnchors = {
    "change-procedure-oracle",
    "recursive-frame-interpolation",
    "blend-synthesis",
    "confidence-score",
    "keyframe-sampling",
    "visual-token-targets",
    "encoder-input-layout",
    "multi-granularity-masking",
    "masked-sequence-loss",
    "caption-alignment-loss",
    "coherence-loss",
    "procedure-objective",
    "warping-strategies",
    "procedure-queries",
    "caption-loss",
    "inference-path",
    "similarity-visual-only",
    "similarity-visual-text",
    "attention-complexity",
    "hyperparameter-defaults",
    "keyframe-ablation-trend",
    "caption-metrics",
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

}  // namespace

std::span<const std::string_view> required_anchors() { return kAnchors; }

std::vector<TraceabilityRow> parse_traceability(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<TraceabilityRow> rows;
  bool header = true;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) f.push_back(trim(cell));
    if (f.size() != 4) throw ConfigError("traceability line " + std::to_string(lineno) + ": expected 4 fields");
    if (header) {
      if (f[0] != "anchor" || f[1] != "module" || f[2] != "operation" || f[3] != "test")
        throw ConfigError("traceability: bad header");
      header = false;
      continue;
    }
    rows.push_back({f[0], f[1], f[2], f[3]});
  }
  if (header) throw ConfigError("traceability: empty matrix");
  return rows;
}

std::vector<TraceabilityRow> read_traceability(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw MissingArtifactError("traceability matrix not found: " + path.string());
  return parse_traceability(read_text_file(path));
}

std::string TraceabilityReport::text() const {
  std::ostringstream s;
  auto list = [&](const char* what, const std::vector<std::string>& v) {
    for (const auto& x : v) s << what << ": " << x << "\n";
  };
  list("missing anchor", missing);
  list("duplicated anchor", duplicated);
  list("unknown anchor", unknown);
  list("unregistered test", dangling);
  return s.str();
}

TraceabilityReport check_traceability(const std::vector<TraceabilityRow>& rows,
                                      const std::set<std::string>& registry) {
  std::map<std::string, int> seen;
  TraceabilityReport r;
  const std::set<std::string_view> known(kAnchors.begin(), kAnchors.end());
  for (const auto& row : rows) {
    if (!known.count(row.anchor)) r.unknown.push_back(row.anchor);
    if (++seen[row.anchor] == 2) r.duplicated.push_back(row.anchor);
    if (!registry.count(row.test)) r.dangling.push_back(row.anchor + " -> " + row.test);
  }
  for (auto a : kAnchors) {
    if (!seen.count(std::string(a))) r.missing.emplace_back(a);
  }
  return r;
}

}  // namespace procap::trace
