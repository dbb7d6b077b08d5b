#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace procap {

using Rng = std::mt19937_64;

// FNV-1a over raw bytes; used for parameter and config fingerprints.
class Fnv1a {
 public:
  void update(const void* data, std::size_t size);
  void update(std::string_view text) { update(text.data(), text.size()); }
  template <typename T>
  void update_span(std::span<const T> values) {
    update(values.data(), values.size_bytes());
  }
  std::uint64_t digest() const { return state_; }
  std::string hex() const;

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

std::string to_hex(std::uint64_t value);

// Derives an independent stream seed for a named purpose ("mask", "order", ...).
std::uint64_t derive_seed(std::uint64_t base, std::string_view purpose);

std::vector<std::string> split_words(std::string_view text);
std::string join(std::span<const std::string> words, std::string_view sep = " ");

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view content);

// Little-endian float32 blob with a single text header line.
struct BlobFile {
  std::map<std::string, std::string> header;
  std::vector<float> values;
};
void write_blob(const std::filesystem::path& path, std::string_view magic, const BlobFile& blob);
BlobFile read_blob(const std::filesystem::path& path, std::string_view magic);

}  // namespace procap
