#pragma once

#include <cmath>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

// Second, deliberately naive CIDEr: n-grams keyed by joined strings, dense vectors over the
// union vocabulary, idf recounted per n from scratch.
namespace procap::testing {

inline double cider_recount(const std::vector<std::vector<std::string>>& cands,
                            const std::vector<std::vector<std::vector<std::string>>>& refs) {
  auto grams = [](const std::vector<std::string>& s, int n) {
    std::vector<std::string> out;
    for (int i = 0; i + n <= static_cast<int>(s.size()); ++i) {
      std::string g;
      for (int j = 0; j < n; ++j) g += s[static_cast<std::size_t>(i + j)] + "\x1f";
      out.push_back(g);
    }
    return out;
  };
  const double docs = static_cast<double>(refs.size());
  double score = 0;
  for (int n = 1; n <= 4; ++n) {
    std::vector<std::string> vocab;
    std::set<std::string> uniq;
    for (std::size_t i = 0; i < refs.size(); ++i) {
      for (const auto& r : refs[i]) for (const auto& g : grams(r, n)) uniq.insert(g);
      for (const auto& g : grams(cands[i], n)) uniq.insert(g);
    }
    vocab.assign(uniq.begin(), uniq.end());
    std::vector<double> idf(vocab.size());
    for (std::size_t v = 0; v < vocab.size(); ++v) {
      int df = 0;
      for (const auto& rs : refs) {
        bool hit = false;
        for (const auto& r : rs) for (const auto& g : grams(r, n)) hit = hit || g == vocab[v];
        df += hit;
      }
      idf[v] = std::log(docs / std::max(1, df));
    }
    auto vec = [&](const std::vector<std::string>& s) {
      std::vector<double> x(vocab.size(), 0.0);
      const auto gs = grams(s, n);
      for (std::size_t v = 0; v < vocab.size(); ++v) {
        int c = 0;
        for (const auto& g : gs) c += g == vocab[v];
        x[v] = c * idf[v];
      }
      return x;
    };
    double per_n = 0;
    for (std::size_t i = 0; i < cands.size(); ++i) {
      const auto c = vec(cands[i]);
      double acc = 0;
      for (const auto& r : refs[i]) {
        const auto rv = vec(r);
        double dot = 0, nc = 0, nr = 0;
        for (std::size_t v = 0; v < c.size(); ++v) {
          dot += c[v] * rv[v];
          nc += c[v] * c[v];
          nr += rv[v] * rv[v];
        }
        if (nc > 0 && nr > 0) acc += dot / std::sqrt(nc * nr);
      }
      per_n += acc / static_cast<double>(refs[i].size());
    }
    score += per_n / static_cast<double>(cands.size()) / 4.0;
  }
  return 10.0 * score;
}

}  // namespace procap::testing
