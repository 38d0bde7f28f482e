#pragma once

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace mulde {

using EntityId = std::uint32_t;
using RelationId = std::uint32_t;

// Dense row-major parameter table of 64-bit reals.
struct Table {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> values;

  Table() = default;
  Table(std::size_t r, std::size_t c, double fill = 0.0) : rows(r), cols(c), values(r * c, fill) {}

  bool empty() const noexcept { return values.empty(); }
  std::size_t size() const noexcept { return values.size(); }

  std::span<double> row(std::size_t i) noexcept { return {values.data() + i * cols, cols}; }
  std::span<const double> row(std::size_t i) const noexcept {
    return {values.data() + i * cols, cols};
  }
  double& at(std::size_t i, std::size_t j) noexcept { return values[i * cols + j]; }
  double at(std::size_t i, std::size_t j) const noexcept { return values[i * cols + j]; }

  void zero() noexcept { std::fill(values.begin(), values.end(), 0.0); }

  friend bool operator==(const Table&, const Table&) = default;
};

// A named view of a table, used by the optimizer, the regularizer and checkpoints.
struct NamedTable {
  std::string name;
  Table* table;
};

struct ConstNamedTable {
  std::string name;
  const Table* table;
};

// splitmix64 finalizer; derives independent stream seeds from (seed, tags...).
inline std::uint64_t mix_seed(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0,
                                 std::uint64_t c = 0) noexcept {
  std::uint64_t h = mix_seed(seed);
  h = mix_seed(h ^ a);
  h = mix_seed(h ^ b);
  return mix_seed(h ^ c);
}

// Small counter-based generator; all randomness in training derives from one
// run seed through derive_seed, so streams do not depend on thread scheduling.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed) {}

  std::uint64_t next() noexcept {
    state_ += 0x9e3779b97f4a7c15ULL;
    std::uint64_t z = state_;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  }
  double uniform() noexcept { return static_cast<double>(next() >> 11) * 0x1.0p-53; }
  // Uniform integer in [0, n); n > 0. Rejection sampling removes modulo bias.
  std::uint64_t below(std::uint64_t n) noexcept {
    const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
    std::uint64_t x;
    do {
      x = next();
    } while (x >= limit);
    return x % n;
  }

 private:
  std::uint64_t state_;
};

}  // namespace mulde
