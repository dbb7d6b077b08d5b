#include <set>
#include <string>

#include "doctest.h"
#include "procap/config.hpp"
#include "procap/error.hpp"
#include "procap/traceability.hpp"
#include "procap/util.hpp"

namespace doctest::detail {
std::set<TestCase>& getRegisteredTests();
}

using namespace procap;

namespace {

std::set<std::string> registry() {
  std::set<std::string> ids;
  for (const auto& tc : doctest::detail::getRegisteredTests())
    ids.insert(std::string(tc.m_test_suite) + "/" + tc.m_name);
  // Criteria of the acceptance binary, registered with ctest separately.
  for (int i = 1; i <= 10; ++i) ids.insert("acceptance/" + std::to_string(i));
  return ids;
}

const char* matrix_path() { return PROCAP_SOURCE_DIR "/docs/traceability.csv"; }

}  // namespace

TEST_SUITE("docs") {
  TEST_CASE("traceability matrix covers every anchor with a registered test") {
    const auto rep = trace::check_traceability(trace::read_traceability(matrix_path()), registry());
    INFO(rep.text());
    CHECK(rep.ok());
  }

  TEST_CASE("dropping a row names the orphaned anchor") {
    auto rows = trace::read_traceability(matrix_path());
    const auto victim = rows[3].anchor;
    rows.erase(rows.begin() + 3);
    const auto rep = trace::check_traceability(rows, registry());
    REQUIRE(rep.missing.size() == 1);
    CHECK(rep.missing[0] == victim);
    CHECK(rep.text().find(victim) != std::string::npos);
  }

  TEST_CASE("duplicates, strays and unregistered tests are all reported") {
    auto rows = trace::read_traceability(matrix_path());
    rows.push_back(rows[0]);
    rows.push_back({"made-up", "x", "y", "acceptance/1"});
    rows.push_back({rows[1].anchor, "x", "y", "nowhere/no such case"});
    const auto rep = trace::check_traceability(rows, registry());
    CHECK(rep.duplicated.size() == 2);
    CHECK(rep.unknown == std::vector<std::string>{"made-up"});
    CHECK(rep.dangling.size() == 1);
  }

  TEST_CASE("malformed matrices are config errors") {
    CHECK_THROWS_AS(trace::parse_traceability(""), ConfigError);
    CHECK_THROWS_AS(trace::parse_traceability("a,b,c\n"), ConfigError);
    CHECK_THROWS_AS(trace::parse_traceability("anchor,module,operation,test\nx,y\n"), ConfigError);
    CHECK_THROWS_AS(trace::read_traceability("/nonexistent/matrix.csv"), MissingArtifactError);
  }
}

TEST_SUITE("docs") {
  TEST_CASE("configuration reference lists every key") {
    const auto text = read_text_file(PROCAP_SOURCE_DIR "/docs/config.md");
    for (const auto& k : documented_keys()) {
      INFO(k.name);
      CHECK(text.find(std::string("| `") + k.name + "` |") != std::string::npos);
    }
  }
}
