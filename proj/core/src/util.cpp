#include "procap/util.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "procap/error.hpp"

namespace procap {

void Fnv1a::update(const void* data, std::size_t size) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < size; ++i) {
    state_ ^= bytes[i];
    state_ *= 0x100000001b3ULL;
  }
}

std::string Fnv1a::hex() const { return to_hex(state_); }

std::string to_hex(std::uint64_t value) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[static_cast<std::size_t>(i)] = digits[value & 0xf];
    value >>= 4;
  }
  return out;
}

std::uint64_t derive_seed(std::uint64_t base, std::string_view purpose) {
  Fnv1a h;
  h.update(&base, sizeof base);
  h.update(purpose);
  // splitmix64 finalizer
  std::uint64_t z = h.digest() + 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && (text[i] == ' ' || text[i] == '\t' || text[i] == '\n')) ++i;
    std::size_t j = i;
    while (j < text.size() && text[j] != ' ' && text[j] != '\t' && text[j] != '\n') ++j;
    if (j > i) words.emplace_back(text.substr(i, j - i));
    i = j;
  }
  return words;
}

std::string join(std::span<const std::string> words, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i) out += sep;
    out += words[i];
  }
  return out;
}

std::string read_text_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifactError("cannot read " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::filesystem::path& path, std::string_view content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  out.write(content.data(), static_cast<std::streamsize>(content.size()));
  if (!out) throw RuntimeFailure("write failed: " + path.string());
}

void write_blob(const std::filesystem::path& path, std::string_view magic, const BlobFile& blob) {
  static_assert(std::endian::native == std::endian::little, "blob writer assumes little-endian host");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw RuntimeFailure("cannot write " + path.string());
  out << magic;
  for (const auto& [key, value] : blob.header) out << ' ' << key << '=' << value;
  out << " count=" << blob.values.size() << '\n';
  out.write(reinterpret_cast<const char*>(blob.values.data()),
            static_cast<std::streamsize>(blob.values.size() * sizeof(float)));
  if (!out) throw RuntimeFailure("write failed: " + path.string());
}

BlobFile read_blob(const std::filesystem::path& path, std::string_view magic) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifactError("cannot read " + path.string());
  std::string line;
  std::getline(in, line);
  std::istringstream hs(line);
  std::string got;
  hs >> got;
  if (got != magic) {
    throw RuntimeFailure(path.string() + ": expected header '" + std::string(magic) + "'");
  }
  BlobFile blob;
  std::string kv;
  while (hs >> kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw RuntimeFailure(path.string() + ": malformed header");
    blob.header[kv.substr(0, eq)] = kv.substr(eq + 1);
  }
  const auto it = blob.header.find("count");
  if (it == blob.header.end()) throw RuntimeFailure(path.string() + ": header lacks count");
  const std::size_t count = std::stoull(it->second);
  blob.header.erase(it);
  blob.values.resize(count);
  in.read(reinterpret_cast<char*>(blob.values.data()),
          static_cast<std::streamsize>(count * sizeof(float)));
  if (static_cast<std::size_t>(in.gcount()) != count * sizeof(float)) {
    throw RuntimeFailure(path.string() + ": truncated payload");
  }
  return blob;
}

}  // namespace procap
