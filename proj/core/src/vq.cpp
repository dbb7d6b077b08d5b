#include "procap/vq.hpp"

#include <cmath>
#include <limits>
#include <random>
#include <unordered_map>

#include "procap/error.hpp"
#include "procap/util.hpp"

namespace procap::vq {

MatF extract_patches(const Frame& frame, int patch_size) {
  if (patch_size < 1 || frame.height % patch_size != 0 || frame.width % patch_size != 0) {
    throw ShapeMismatchError("frame " + std::to_string(frame.height) + "x" +
                             std::to_string(frame.width) + " is not divisible by patch size " +
                             std::to_string(patch_size));
  }
  const int gh = frame.height / patch_size;
  const int gw = frame.width / patch_size;
  const int dim = patch_size * patch_size * 3;
  MatF out(gh * gw, dim);
  for (int gy = 0; gy < gh; ++gy) {
    for (int gx = 0; gx < gw; ++gx) {
      float* row = out.row(gy * gw + gx).data();
      int k = 0;
      for (int py = 0; py < patch_size; ++py) {
        for (int px = 0; px < patch_size; ++px) {
          for (int c = 0; c < 3; ++c) {
            row[k++] = frame.at(gy * patch_size + py, gx * patch_size + px, c);
          }
        }
      }
    }
  }
  return out;
}

namespace {

int nearest(const float* x, const MatF& entries) {
  int best = 0;
  float best_d = std::numeric_limits<float>::infinity();
  const int dim = static_cast<int>(entries.cols());
  for (int k = 0; k < entries.rows(); ++k) {
    const float* e = entries.row(k).data();
    float d = 0;
    for (int j = 0; j < dim; ++j) {
      const float diff = x[j] - e[j];
      d += diff * diff;
    }
    if (d < best_d) {
      best_d = d;
      best = k;
    }
  }
  return best;
}

// Squared distances of a block of points to all centers, clamped at zero.
MatD block_distances(const MatD& points, Eigen::Index begin, Eigen::Index rows,
                     const MatD& centers, const Eigen::VectorXd& center_norms) {
  const auto block = points.middleRows(begin, rows);
  MatD d = -2.0 * block * centers.transpose();
  d.colwise() += block.rowwise().squaredNorm().transpose().transpose();
  d.rowwise() += center_norms.transpose();
  return d.cwiseMax(0.0);
}

}  // namespace

Codebook fit_codebook(std::span<const Frame> frames, int codebook_size, int patch_size,
                      std::uint64_t seed, const FitOptions& options) {
  if (codebook_size < 2) throw ConfigError("codebook size must be at least 2");

  // Deduplicate patches, keeping multiplicities as weights.
  std::unordered_map<std::string, int> index;
  std::vector<std::vector<float>> unique;
  std::vector<double> weight;
  int dim = patch_size * patch_size * 3;
  for (const auto& f : frames) {
    const MatF p = extract_patches(f, patch_size);
    for (Eigen::Index r = 0; r < p.rows(); ++r) {
      std::string key(reinterpret_cast<const char*>(p.row(r).data()), dim * sizeof(float));
      auto [it, inserted] = index.try_emplace(std::move(key), static_cast<int>(unique.size()));
      if (inserted) {
        unique.emplace_back(p.row(r).data(), p.row(r).data() + dim);
        weight.push_back(1.0);
      } else {
        weight[static_cast<std::size_t>(it->second)] += 1.0;
      }
    }
  }
  const Eigen::Index n = static_cast<Eigen::Index>(unique.size());
  if (n < codebook_size) {
    throw ConfigError("corpus has only " + std::to_string(n) + " distinct patches; reduce K_cb below " +
                      std::to_string(codebook_size + 1));
  }

  MatD points(n, dim);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (int j = 0; j < dim; ++j) points(i, j) = unique[static_cast<std::size_t>(i)][j];
  }

  // k-means++ seeding; already-chosen points have zero distance so centers stay distinct.
  Rng rng(derive_seed(seed, "kmeans"));
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  auto sample = [&](const std::vector<double>& mass) {
    double total = 0;
    for (double m : mass) total += m;
    double u = unif(rng) * total;
    for (std::size_t i = 0; i < mass.size(); ++i) {
      u -= mass[i];
      if (u <= 0 && mass[i] > 0) return static_cast<Eigen::Index>(i);
    }
    for (std::size_t i = mass.size(); i-- > 0;) {
      if (mass[i] > 0) return static_cast<Eigen::Index>(i);
    }
    return Eigen::Index{0};
  };

  MatD centers(codebook_size, dim);
  std::vector<double> dist2(static_cast<std::size_t>(n), std::numeric_limits<double>::infinity());
  Eigen::Index chosen = sample(weight);
  for (int k = 0; k < codebook_size; ++k) {
    centers.row(k) = points.row(chosen);
    std::vector<double> mass(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
      const double d = (points.row(i) - centers.row(k)).squaredNorm();
      dist2[static_cast<std::size_t>(i)] = std::min(dist2[static_cast<std::size_t>(i)], d);
      mass[static_cast<std::size_t>(i)] = weight[static_cast<std::size_t>(i)] * dist2[static_cast<std::size_t>(i)];
    }
    if (k + 1 < codebook_size) chosen = sample(mass);
  }

  Codebook cb;
  cb.size = codebook_size;
  cb.patch_size = patch_size;
  cb.patch_dim = dim;
  cb.seed = seed;

  std::vector<int> assign(static_cast<std::size_t>(n), -1);
  std::vector<double> own_dist(static_cast<std::size_t>(n), 0.0);
  constexpr Eigen::Index kBlock = 4096;

  for (int iter = 0; iter < std::max(1, options.max_iterations); ++iter) {
    const Eigen::VectorXd cn = centers.rowwise().squaredNorm();
    bool changed = false;
    double inertia = 0;
    for (Eigen::Index b = 0; b < n; b += kBlock) {
      const Eigen::Index rows = std::min(kBlock, n - b);
      const MatD d = block_distances(points, b, rows, centers, cn);
      for (Eigen::Index r = 0; r < rows; ++r) {
        Eigen::Index best = 0;
        d.row(r).minCoeff(&best);
        const auto i = static_cast<std::size_t>(b + r);
        if (assign[i] != static_cast<int>(best)) changed = true;
        assign[i] = static_cast<int>(best);
        own_dist[i] = d(r, best);
        inertia += weight[i] * own_dist[i];
      }
    }
    cb.inertia.push_back(inertia);
    if (!changed && iter > 0) break;

    MatD sums = MatD::Zero(codebook_size, dim);
    std::vector<double> mass(static_cast<std::size_t>(codebook_size), 0.0);
    for (Eigen::Index i = 0; i < n; ++i) {
      const int a = assign[static_cast<std::size_t>(i)];
      sums.row(a) += weight[static_cast<std::size_t>(i)] * points.row(i);
      mass[static_cast<std::size_t>(a)] += weight[static_cast<std::size_t>(i)];
    }
    for (int k = 0; k < codebook_size; ++k) {
      if (mass[static_cast<std::size_t>(k)] > 0) {
        centers.row(k) = sums.row(k) / mass[static_cast<std::size_t>(k)];
        continue;
      }
      // Empty cluster: move it onto the worst-served point.
      Eigen::Index worst = 0;
      double worst_cost = -1;
      for (Eigen::Index i = 0; i < n; ++i) {
        const double cost = weight[static_cast<std::size_t>(i)] * own_dist[static_cast<std::size_t>(i)];
        if (cost > worst_cost) {
          worst_cost = cost;
          worst = i;
        }
      }
      centers.row(k) = points.row(worst);
      own_dist[static_cast<std::size_t>(worst)] = 0;
    }
  }

  cb.entries = centers.cast<float>();

  double bound = 0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& p = unique[static_cast<std::size_t>(i)];
    const int k = nearest(p.data(), cb.entries);
    double err = 0;
    for (int j = 0; j < dim; ++j) err += std::abs(p[j] - cb.entries(k, j));
    bound = std::max(bound, err / dim);
  }
  cb.error_bound = bound;
  return cb;
}

TokenIds tokenize(const Frame& frame, const Codebook& codebook) {
  const MatF p = extract_patches(frame, codebook.patch_size);
  if (p.cols() != codebook.entries.cols()) {
    throw ShapeMismatchError("patch dimension does not match the codebook");
  }
  TokenIds ids(static_cast<std::size_t>(p.rows()));
  for (Eigen::Index r = 0; r < p.rows(); ++r) {
    ids[static_cast<std::size_t>(r)] = nearest(p.row(r).data(), codebook.entries);
  }
  return ids;
}

Frame decode(const TokenIds& tokens, const Codebook& codebook, int height, int width) {
  const int ps = codebook.patch_size;
  const int gw = width / ps;
  if (static_cast<int>(tokens.size()) != (height / ps) * gw) {
    throw ShapeMismatchError("token count does not match the frame size");
  }
  Frame f(height, width);
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    const int gy = static_cast<int>(t) / gw;
    const int gx = static_cast<int>(t) % gw;
    const float* e = codebook.entries.row(tokens[t]).data();
    int k = 0;
    for (int py = 0; py < ps; ++py) {
      for (int px = 0; px < ps; ++px) {
        for (int c = 0; c < 3; ++c) f.at(gy * ps + py, gx * ps + px, c) = e[k++];
      }
    }
  }
  return f;
}

double mean_abs_error(const Frame& a, const Frame& b) {
  if (!a.same_shape(b)) throw ShapeMismatchError("mean_abs_error: shape mismatch");
  double s = 0;
  for (std::size_t i = 0; i < a.data.size(); ++i) s += std::abs(a.data[i] - b.data[i]);
  return s / static_cast<double>(a.data.size());
}

void Codebook::save(const std::filesystem::path& path) const {
  BlobFile blob;
  blob.header["K_cb"] = std::to_string(size);
  blob.header["patch_dim"] = std::to_string(patch_dim);
  blob.header["patch_size"] = std::to_string(patch_size);
  blob.header["seed"] = std::to_string(seed);
  blob.header["error_bound"] = std::to_string(error_bound);
  blob.values.assign(entries.data(), entries.data() + entries.size());
  write_blob(path, "procap-codebook", blob);
}

Codebook Codebook::load(const std::filesystem::path& path) {
  const auto blob = read_blob(path, "procap-codebook");
  Codebook cb;
  try {
    cb.size = std::stoi(blob.header.at("K_cb"));
    cb.patch_dim = std::stoi(blob.header.at("patch_dim"));
    cb.patch_size = std::stoi(blob.header.at("patch_size"));
    cb.seed = std::stoull(blob.header.at("seed"));
    cb.error_bound = std::stod(blob.header.at("error_bound"));
  } catch (const std::exception&) {
    throw RuntimeFailure(path.string() + ": incomplete codebook header");
  }
  if (blob.values.size() != static_cast<std::size_t>(cb.size) * cb.patch_dim) {
    throw RuntimeFailure(path.string() + ": payload size does not match header");
  }
  cb.entries = Eigen::Map<const MatF>(blob.values.data(), cb.size, cb.patch_dim);
  return cb;
}

PatchEmbedder::PatchEmbedder(int patch_size, int patches_per_frame, int d_model,
                             std::uint64_t seed)
    : patch_size_(patch_size), seed_(seed) {
  const int dim = patch_size * patch_size * 3;
  Rng rng(derive_seed(seed, "patch-embedder"));
  std::normal_distribution<float> w(0.0f, 1.0f / std::sqrt(static_cast<float>(dim)));
  std::normal_distribution<float> b(0.0f, 0.02f);
  weight_.resize(dim, d_model);
  for (Eigen::Index i = 0; i < weight_.size(); ++i) weight_.data()[i] = w(rng);
  bias_.resize(d_model);
  for (Eigen::Index i = 0; i < bias_.size(); ++i) bias_(i) = b(rng);
  position_.resize(patches_per_frame, d_model);
  for (int p = 0; p < patches_per_frame; ++p) {
    for (int j = 0; j < d_model; ++j) {
      const double freq = std::pow(10000.0, -static_cast<double>(2 * (j / 2)) / d_model);
      const double angle = p * freq;
      position_(p, j) = static_cast<float>(0.1 * (j % 2 == 0 ? std::sin(angle) : std::cos(angle)));
    }
  }
}

MatF PatchEmbedder::embed(const Frame& frame) const {
  const MatF patches = extract_patches(frame, patch_size_);
  if (patches.rows() != position_.rows()) {
    throw ShapeMismatchError("frame yields " + std::to_string(patches.rows()) +
                             " patches, embedder expects " + std::to_string(position_.rows()));
  }
  MatF out = patches * weight_;
  out.rowwise() += bias_;
  out += position_;
  return out;
}

std::string PatchEmbedder::hash() const {
  Fnv1a h;
  h.update(weight_.data(), weight_.size() * sizeof(float));
  h.update(bias_.data(), bias_.size() * sizeof(float));
  h.update(position_.data(), position_.size() * sizeof(float));
  return h.hex();
}

void PatchEmbedder::save(const std::filesystem::path& path) const {
  BlobFile blob;
  blob.header["patch_size"] = std::to_string(patch_size_);
  blob.header["patch_dim"] = std::to_string(patch_dim());
  blob.header["d"] = std::to_string(d_model());
  blob.header["n_I"] = std::to_string(patches_per_frame());
  blob.header["seed"] = std::to_string(seed_);
  blob.values.assign(weight_.data(), weight_.data() + weight_.size());
  blob.values.insert(blob.values.end(), bias_.data(), bias_.data() + bias_.size());
  blob.values.insert(blob.values.end(), position_.data(), position_.data() + position_.size());
  write_blob(path, "procap-embedder", blob);
}

PatchEmbedder PatchEmbedder::load(const std::filesystem::path& path) {
  const auto blob = read_blob(path, "procap-embedder");
  PatchEmbedder e;
  int dim = 0, d = 0, n = 0;
  try {
    e.patch_size_ = std::stoi(blob.header.at("patch_size"));
    dim = std::stoi(blob.header.at("patch_dim"));
    d = std::stoi(blob.header.at("d"));
    n = std::stoi(blob.header.at("n_I"));
    e.seed_ = std::stoull(blob.header.at("seed"));
  } catch (const std::exception&) {
    throw RuntimeFailure(path.string() + ": incomplete embedder header");
  }
  const std::size_t expected = static_cast<std::size_t>(dim) * d + d + static_cast<std::size_t>(n) * d;
  if (blob.values.size() != expected) {
    throw RuntimeFailure(path.string() + ": payload size does not match header");
  }
  const float* p = blob.values.data();
  e.weight_ = Eigen::Map<const MatF>(p, dim, d);
  p += static_cast<std::size_t>(dim) * d;
  e.bias_ = Eigen::Map<const RowVec<float>>(p, d);
  p += d;
  e.position_ = Eigen::Map<const MatF>(p, n, d);
  return e;
}

}  // namespace procap::vq
