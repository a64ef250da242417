#pragma once

#include <cstdint>
#include <initializer_list>
#include <string_view>

#include "scl/common.hpp"

namespace scl {

// Counter-based splittable random stream. A stream is identified by
// (seed, purpose tag, indices); identical identification yields an identical
// sequence on every platform. Generation is the splitmix64 counter scheme:
// the state advances by a fixed odd gamma and each output is a finalizer of
// the state, so streams never share state and splitting is cheap.
class RngStream {
 public:
  RngStream(std::uint64_t seed, std::string_view tag,
            std::initializer_list<std::uint64_t> indices = {});

  // Derives an independent child stream from this stream's identity.
  RngStream child(std::string_view tag, std::initializer_list<std::uint64_t> indices = {}) const;

  std::uint64_t next_u64();
  // Uniform on [0, 1).
  double uniform();
  // Uniform on [lo, hi).
  double uniform(double lo, double hi);
  // Uniform integer on [lo, hi] inclusive.
  std::int64_t uniform_int(std::int64_t lo, std::int64_t hi);
  // Standard normal via Box-Muller (one spare cached per stream).
  double normal();
  bool bernoulli(double p);

  // Fisher-Yates shuffle of [first, first+n).
  template <typename T>
  void shuffle(T* first, std::int64_t n) {
    for (std::int64_t i = n - 1; i > 0; --i) {
      const std::int64_t j = uniform_int(0, i);
      T tmp = first[i];
      first[i] = first[j];
      first[j] = tmp;
    }
  }

 private:
  explicit RngStream(std::uint64_t state) : state_(state) {}

  std::uint64_t state_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace scl
