#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "procap/frame.hpp"
#include "procap/tensor.hpp"

namespace procap::vq {

// Non-overlapping patches in row-major grid order; each patch flattened as (py, px, c).
MatF extract_patches(const Frame& frame, int patch_size);

struct Codebook {
  int size = 0;        // K_cb
  int patch_size = 0;
  int patch_dim = 0;
  std::uint64_t seed = 0;
  MatF entries;                  // size x patch_dim
  double error_bound = 0;        // max per-patch mean absolute error over the fit corpus
  std::vector<double> inertia;   // sum of squared distances after each assignment step

  void save(const std::filesystem::path& path) const;
  static Codebook load(const std::filesystem::path& path);
};

struct FitOptions {
  int max_iterations = 30;
};

// k-means++ seeding then Lloyd iterations over every patch of the corpus.
Codebook fit_codebook(std::span<const Frame> frames, int codebook_size, int patch_size,
                      std::uint64_t seed, const FitOptions& options = {});

using TokenIds = std::vector<int>;

// Nearest entry by Euclidean distance; ties resolve to the lowest id.
TokenIds tokenize(const Frame& frame, const Codebook& codebook);
Frame decode(const TokenIds& tokens, const Codebook& codebook, int height, int width);

double mean_abs_error(const Frame& a, const Frame& b);

// Frozen linear patch projector plus a fixed sinusoidal positional channel.
// Never registered with any optimizer.
class PatchEmbedder {
 public:
  PatchEmbedder() = default;
  PatchEmbedder(int patch_size, int patches_per_frame, int d_model, std::uint64_t seed);

  MatF embed(const Frame& frame) const;  // n_I x d

  int patch_size() const { return patch_size_; }
  int patch_dim() const { return static_cast<int>(weight_.rows()); }
  int d_model() const { return static_cast<int>(weight_.cols()); }
  int patches_per_frame() const { return static_cast<int>(position_.rows()); }
  std::uint64_t seed() const { return seed_; }

  const MatF& weight() const { return weight_; }
  const RowVec<float>& bias() const { return bias_; }
  const MatF& position() const { return position_; }

  std::string hash() const;
  void save(const std::filesystem::path& path) const;
  static PatchEmbedder load(const std::filesystem::path& path);

 private:
  int patch_size_ = 0;
  std::uint64_t seed_ = 0;
  MatF weight_;           // patch_dim x d
  RowVec<float> bias_;    // d
  MatF position_;         // n_I x d
};

}  // namespace procap::vq
