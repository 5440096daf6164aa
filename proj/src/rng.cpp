#include "bifl/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace bifl {
namespace {

uint64_t splitmix64(uint64_t& x) {
  x += 0x9e3779b97f4a7c15ULL;
  uint64_t z = x;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

uint64_t fnv1a(std::string_view s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

uint64_t rotl(uint64_t x, int k) { return (x << k) | (x >> (64 - k)); }

}  // namespace

Rng Rng::stream(uint64_t seed, std::string_view label, uint64_t a, uint64_t b) {
  uint64_t h = seed;
  (void)splitmix64(h);
  h ^= fnv1a(label);
  (void)splitmix64(h);
  h ^= a + 0x9e3779b97f4a7c15ULL;
  (void)splitmix64(h);
  h ^= b + 0x517cc1b727220a95ULL;
  Rng r{Raw{}};
  for (auto& w : r.s_) w = splitmix64(h);
  if ((r.s_[0] | r.s_[1] | r.s_[2] | r.s_[3]) == 0) r.s_[0] = 0x9e3779b97f4a7c15ULL;
  return r;
}

uint64_t Rng::next_u64() {
  uint64_t result = rotl(s_[1] * 5, 7) * 9;
  uint64_t t = s_[1] << 17;
  s_[2] ^= s_[0];
  s_[3] ^= s_[1];
  s_[1] ^= s_[2];
  s_[0] ^= s_[3];
  s_[2] ^= t;
  s_[3] = rotl(s_[3], 45);
  return result;
}

double Rng::uniform() { return double(next_u64() >> 11) * 0x1.0p-53; }

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
  // Box-Muller, cosine branch only. u1 is kept away from 0 so log stays finite.
  double u1 = (double(next_u64() >> 11) + 1.0) * 0x1.0p-53;
  double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

double Rng::normal(double mean, double sd) { return mean + sd * normal(); }

int Rng::uniform_int(int n) {
  // Lemire's multiply-shift rejection; exact uniformity over {0..n-1}.
  uint64_t range = uint64_t(n);
  __uint128_t m = __uint128_t(next_u64()) * range;
  auto lo = uint64_t(m);
  if (lo < range) {
    uint64_t thresh = -range % range;
    while (lo < thresh) {
      m = __uint128_t(next_u64()) * range;
      lo = uint64_t(m);
    }
  }
  return int(m >> 64);
}

std::vector<int> Rng::permutation(int n) {
  std::vector<int> p(n);
  for (int i = 0; i < n; ++i) p[i] = i;
  for (int i = n - 1; i > 0; --i) std::swap(p[i], p[uniform_int(i + 1)]);
  return p;
}

std::vector<int> Rng::sample_without_replacement(int n, int k) {
  std::vector<int> p(n);
  for (int i = 0; i < n; ++i) p[i] = i;
  for (int i = 0; i < k; ++i) std::swap(p[i], p[i + uniform_int(n - i)]);
  p.resize(k);
  std::sort(p.begin(), p.end());
  return p;
}

}  // namespace bifl
