#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "i2i/kvconfig.hpp"
#include "i2i/tensor.hpp"

namespace i2i {

// Procedural shape families for the two synthetic domains.
enum class ShapeKind {
  StripedTriangles,  // filled triangle, two-colour stripe texture
  ShadedEllipses,    // filled ellipse, smooth radial shading
};

std::string shape_kind_name(ShapeKind kind);
ShapeKind parse_shape_kind(const std::string& name);

struct DomainSpec {
  std::string name;
  ShapeKind kind = ShapeKind::StripedTriangles;
  std::size_t size = 16;
  std::size_t count = 200;
  std::uint64_t seed = 0;

  void validate() const;
};

// Two domains written to <root>/<name>/NNNNN.png. Each domain draws from
// its own seed derived from `seed`.
struct DatasetSpec {
  std::filesystem::path root = "data";
  std::size_t size = 16;
  std::size_t count = 200;
  std::uint64_t seed = 1;
  std::array<std::string, 2> names{"triangles", "ellipses"};
  std::array<ShapeKind, 2> kinds{ShapeKind::StripedTriangles, ShapeKind::ShadedEllipses};

  /// Keys: root, size, count, seed, domain1.name, domain1.kind, domain2.name, domain2.kind.
  /// Unknown keys are rejected.
  static DatasetSpec from_config(const KvConfig& config);
  KvConfig to_config() const;
  void validate() const;

  DomainSpec domain(std::size_t index) const;
  std::filesystem::path domain_dir(std::size_t index) const { return root / names.at(index); }
};

/// Renders image `index` of a domain as 8-bit interleaved RGB, size*size*3 bytes.
std::vector<std::uint8_t> render_sample(const DomainSpec& spec, std::size_t index);

/// Same sample as a [1 x 3 x s x s] tensor in [-1, 1].
template <typename T>
Tensor<T> render_sample_tensor(const DomainSpec& spec, std::size_t index);

/// Writes spec.count images into `dir` (created if missing) and returns the file paths.
std::vector<std::filesystem::path> generate_domain(const DomainSpec& spec, const std::filesystem::path& dir);

/// Generates both domains under spec.root.
void generate_dataset(const DatasetSpec& spec);

// Endless source of unpaired index pairs. Each domain walks its own
// permutation, reshuffled every epoch from a seed derived from
// (seed, domain, epoch), so the two streams are independent.
class UnpairedSampler {
 public:
  struct State {
    std::array<std::uint64_t, 2> epoch{};
    std::array<std::uint64_t, 2> position{};
    bool operator==(const State&) const = default;
  };

  UnpairedSampler(std::size_t size1, std::size_t size2, std::uint64_t seed);

  /// (index into domain one, index into domain two)
  std::array<std::size_t, 2> next();

  const State& state() const { return state_; }
  void set_state(const State& state);

  std::size_t domain_size(std::size_t domain) const { return sizes_.at(domain); }

 private:
  void refresh(std::size_t domain);

  std::array<std::size_t, 2> sizes_;
  std::uint64_t seed_;
  State state_;
  std::array<std::vector<std::size_t>, 2> order_;
};

/// Permutation of [0, n) used for `epoch` of `domain`.
std::vector<std::size_t> epoch_permutation(std::size_t n, std::uint64_t seed, std::size_t domain, std::uint64_t epoch);

}  // namespace i2i
