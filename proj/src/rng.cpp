#include "scl/rng.hpp"

#include <cmath>

namespace scl {

namespace {

constexpr std::uint64_t kGamma = 0x9e3779b97f4a7c15ULL;

std::uint64_t mix64(std::uint64_t z) {
  z ^= z >> 30;
  z *= 0xbf58476d1ce4e5b9ULL;
  z ^= z >> 27;
  z *= 0x94d049bb133111ebULL;
  z ^= z >> 31;
  return z;
}

std::uint64_t fold(std::uint64_t state, std::uint64_t word) {
  return mix64(state + kGamma + word);
}

std::uint64_t fold_tag(std::uint64_t state, std::string_view tag) {
  // FNV-1a over the tag bytes, then folded into the state.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const char c : tag) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return fold(state, h);
}

}  // namespace

RngStream::RngStream(std::uint64_t seed, std::string_view tag,
                     std::initializer_list<std::uint64_t> indices) {
  std::uint64_t s = fold(0, seed);
  s = fold_tag(s, tag);
  for (const std::uint64_t i : indices) s = fold(s, i);
  state_ = s;
}

RngStream RngStream::child(std::string_view tag,
                           std::initializer_list<std::uint64_t> indices) const {
  std::uint64_t s = fold_tag(state_, tag);
  for (const std::uint64_t i : indices) s = fold(s, i);
  return RngStream(s);
}

std::uint64_t RngStream::next_u64() {
  state_ += kGamma;
  return mix64(state_);
}

double RngStream::uniform() {
  // 53 random bits into [0, 1).
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

std::int64_t RngStream::uniform_int(std::int64_t lo, std::int64_t hi) {
  if (lo > hi) throw DomainError("uniform_int: empty range");
  const std::uint64_t span = static_cast<std::uint64_t>(hi - lo) + 1;
  if (span == 0) return static_cast<std::int64_t>(next_u64());  // full 64-bit range
  // Rejection sampling to avoid modulo bias.
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % span;
  std::uint64_t r = next_u64();
  while (r >= limit) r = next_u64();
  return lo + static_cast<std::int64_t>(r % span);
}

double RngStream::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double a = 2.0 * 3.14159265358979323846 * u2;
  spare_ = r * std::sin(a);
  has_spare_ = true;
  return r * std::cos(a);
}

bool RngStream::bernoulli(double p) { return uniform() < p; }

}  // namespace scl
