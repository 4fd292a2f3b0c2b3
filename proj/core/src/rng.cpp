#include "seqmatch/rng.hpp"

#include <cmath>

namespace seqmatch {
namespace {
__extension__ typedef unsigned __int128 u128;
}  // namespace

CounterRng CounterRng::split(std::uint64_t index) const {
  return CounterRng(mix(key_ ^ mix(index + 0x632BE59BD9B4E019ULL)) ^ 0xD6E8FEB86659FD93ULL);
}

double CounterRng::uniform() { return static_cast<double>((*this)() >> 11) * 0x1.0p-53; }

std::uint64_t CounterRng::below(std::uint64_t bound) {
  // Lemire's multiply-shift with rejection of the biased low region.
  u128 product = static_cast<u128>((*this)()) * bound;
  auto low = static_cast<std::uint64_t>(product);
  if (low < bound) {
    const std::uint64_t threshold = (0 - bound) % bound;
    while (low < threshold) {
      product = static_cast<u128>((*this)()) * bound;
      low = static_cast<std::uint64_t>(product);
    }
  }
  return static_cast<std::uint64_t>(product >> 64);
}

double CounterRng::normal() {
  double u, v, s;
  do {
    u = 2.0 * uniform() - 1.0;
    v = 2.0 * uniform() - 1.0;
    s = u * u + v * v;
  } while (s >= 1.0 || s == 0.0);
  return u * std::sqrt(-2.0 * std::log(s) / s);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b, std::uint64_t c) {
  return CounterRng(seed).split(a).split(b).split(c).key();
}

}  // namespace seqmatch
