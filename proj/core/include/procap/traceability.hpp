#pragma once

#include <filesystem>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <vector>

// Matrix linking each modelled method component to the module, operation and test that cover it.
namespace procap::trace {

struct TraceabilityRow {
  std::string anchor;
  std::string module;
  std::string operation;
  std::string test;  // "<suite>/<case name>" or "acceptance/<criterion>"
};

// Every anchor the matrix must cover, once each.
std::span<const std::string_view> required_anchors();

// Header line "anchor,module,operation,test" then one row per line; fields may not contain commas.
std::vector<TraceabilityRow> parse_traceability(const std::string& text);
std::vector<TraceabilityRow> read_traceability(const std::filesystem::path& path);

struct TraceabilityReport {
  std::vector<std::string> missing;     // required anchors with no row
  std::vector<std::string> duplicated;  // anchors with more than one row
  std::vector<std::string> unknown;     // rows naming an anchor outside the list
  std::vector<std::string> dangling;    // rows whose test is not registered

  bool ok() const { return missing.empty() && duplicated.empty() && unknown.empty() && dangling.empty(); }
  std::string text() const;
};

TraceabilityReport check_traceability(const std::vector<TraceabilityRow>& rows,
                                      const std::set<std::string>& registry);

}  // namespace procap::trace
