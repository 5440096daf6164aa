#pragma once

#include <array>
#include <cstdint>
#include <string_view>
#include <vector>

namespace bifl {

// xoshiro256** with splitmix64 seeding. The full generator state is four
// u64 words, so it serializes into checkpoints verbatim, and independent
// streams are derived from (seed, label, a, b) alone: a client/round stream
// never depends on how many draws any other stream has made.
class Rng {
 public:
  Rng() : Rng(0) {}
  explicit Rng(uint64_t seed) { *this = stream(seed, "root"); }

 private:
  struct Raw {};
  explicit Rng(Raw) {}

 public:

  static Rng stream(uint64_t seed, std::string_view label, uint64_t a = 0, uint64_t b = 0);

  uint64_t next_u64();
  // [0,1) with 53 random bits.
  double uniform();
  double uniform(double lo, double hi);
  // Standard normal; two uniforms per draw, no cached spare, so the
  // serialized state fully determines every future value.
  double normal();
  double normal(double mean, double sd);
  // Unbiased draw from {0..n-1}, n >= 1.
  int uniform_int(int n);
  std::vector<int> permutation(int n);
  // k distinct values from {0..n-1}, returned ascending.
  std::vector<int> sample_without_replacement(int n, int k);

  std::array<uint64_t, 4> state() const { return s_; }
  void set_state(const std::array<uint64_t, 4>& s) { s_ = s; }

 private:
  std::array<uint64_t, 4> s_{};
};

}  // namespace bifl
