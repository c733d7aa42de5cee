#pragma once

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <memory>
#include <string>
#include <vector>

#include "neuroalign/core/types.hpp"
#include "neuroalign/data/array_io.hpp"
#include "neuroalign/random.hpp"

namespace neuroalign::data {

inline void normalize_rows(Tensor& m) {
  const std::size_t n = m.dim(0), d = m.dim(1);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t k = 0; k < d; ++k) s += m[i * d + k] * m[i * d + k];
    const double inv = 1.0 / (std::sqrt(s) + 1e-12);
    for (std::size_t k = 0; k < d; ++k) m[i * d + k] *= inv;
  }
}

// Rows of `table` (indexed by image id) in the order of `ids`.
inline EmbeddingMatrix gather_rows(const Tensor& table, const std::vector<int>& ids, const std::string& source) {
  const std::size_t n = table.dim(0), d = table.dim(1);
  EmbeddingMatrix out{Tensor({ids.size(), d}), true};
  for (std::size_t r = 0; r < ids.size(); ++r) {
    if (ids[r] < 0 || static_cast<std::size_t>(ids[r]) >= n)
      throw DataError("image id " + std::to_string(ids[r]) + " not found in " + source + " (" + std::to_string(n) + " rows)");
    std::copy_n(table.data() + static_cast<std::size_t>(ids[r]) * d, d, out.values.data() + r * d);
  }
  return out;
}

// Frozen image-side embeddings, looked up by image id.
class EmbeddingProvider {
 public:
  virtual ~EmbeddingProvider() = default;
  virtual std::string kind() const = 0;
  virtual std::size_t embedding_dim() const = 0;
  // Unit-norm rows in the order of `ids`.
  virtual EmbeddingMatrix get(const std::vector<int>& ids) = 0;
};

// (n_images, d) array container; row i belongs to image id i.
class PrecomputedFileProvider : public EmbeddingProvider {
 public:
  PrecomputedFileProvider(std::string path, std::size_t expected_dim) : path_(std::move(path)) {
    table_ = load_f32(path_);
    if (table_.rank() != 2) throw DataError("embedding file '" + path_ + "' must be 2-D, got " + shape_str(table_.shape()));
    if (expected_dim && table_.dim(1) != expected_dim) {
      throw DataError("embedding file '" + path_ + "' has dimension " + std::to_string(table_.dim(1)) +
                      ", config expects " + std::to_string(expected_dim));
    }
    normalize_rows(table_);
  }
  std::string kind() const override { return "precomputed_file"; }
  std::size_t embedding_dim() const override { return table_.dim(1); }
  EmbeddingMatrix get(const std::vector<int>& ids) override { return gather_rows(table_, ids, "'" + path_ + "'"); }
  const Tensor& table() const { return table_; }

 private:
  std::string path_;
  Tensor table_;
};

// Deterministic pseudo-embeddings: a seeded Gaussian vector per image id. Stands in for a real
// image encoder in plumbing tests.
class RandomProjectionStub : public EmbeddingProvider {
 public:
  RandomProjectionStub(std::size_t dim, std::uint64_t seed) : dim_(dim), seed_(seed) {}
  std::string kind() const override { return "random_projection_stub"; }
  std::size_t embedding_dim() const override { return dim_; }
  EmbeddingMatrix get(const std::vector<int>& ids) override {
    EmbeddingMatrix out{Tensor({ids.size(), dim_}), true};
    for (std::size_t r = 0; r < ids.size(); ++r) {
      if (ids[r] < 0) throw DataError("negative image id " + std::to_string(ids[r]));
      Rng rng = derive_rng(seed_, "stub-image-" + std::to_string(ids[r]));
      for (std::size_t k = 0; k < dim_; ++k) out.values[r * dim_ + k] = gaussian(rng);
    }
    normalize_rows(out.values);
    return out;
  }

 private:
  std::size_t dim_;
  std::uint64_t seed_;
};

// Runs an external image encoder once over every image file and caches the result as a
// precomputed file. The command template gets {list} (one image path per line, in id order) and
// {out} (where it must write an (n_images, d) float32 array container). Resizing and pixel
// normalization are the external encoder's business.
class ExternalEncoderProvider : public EmbeddingProvider {
 public:
  ExternalEncoderProvider(std::string command, std::vector<std::string> image_files, std::size_t dim, std::string cache_path)
      : command_(std::move(command)), files_(std::move(image_files)), dim_(dim), cache_(std::move(cache_path)) {}

  std::string kind() const override { return "external_encoder"; }
  std::size_t embedding_dim() const override { return dim_; }

  EmbeddingMatrix get(const std::vector<int>& ids) override {
    if (!std::filesystem::exists(cache_)) compute();
    return PrecomputedFileProvider(cache_, dim_).get(ids);
  }

 private:
  void compute() {
    if (command_.empty()) throw DataError("external_encoder provider needs data.external_command");
    if (files_.empty()) throw DataError("external_encoder provider has no image files to encode");
    const std::string list = cache_ + ".list", raw = cache_ + ".raw";
    std::filesystem::create_directories(std::filesystem::path(cache_).parent_path());
    {
      std::ofstream out(list);
      for (const auto& f : files_) out << f << '\n';
    }
    std::string cmd = command_;
    auto sub = [&](const std::string& key, const std::string& value) {
      for (std::size_t p; (p = cmd.find(key)) != std::string::npos;) cmd.replace(p, key.size(), value);
    };
    sub("{list}", list);
    sub("{out}", raw);
    if (std::system(cmd.c_str()) != 0) throw DataError("external image encoder failed: " + cmd);
    Tensor t = load_f32(raw);
    if (t.rank() != 2 || t.dim(0) != files_.size() || t.dim(1) != dim_) {
      throw DataError("external encoder wrote " + shape_str(t.shape()) + ", expected (" + std::to_string(files_.size()) + ", " +
                      std::to_string(dim_) + ")");
    }
    normalize_rows(t);
    save_f32(cache_, t);
    std::filesystem::remove(list);
    std::filesystem::remove(raw);
  }

  std::string command_;
  std::vector<std::string> files_;
  std::size_t dim_;
  std::string cache_;
};

inline EmbeddingMatrix get_image_embeddings(EmbeddingProvider& provider, const std::vector<int>& ids) {
  return provider.get(ids);
}

}  // namespace neuroalign::data
