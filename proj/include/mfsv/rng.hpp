#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

#include <boost/random/normal_distribution.hpp>

namespace mfsv::rng {

using Engine = std::mt19937_64;

/// SplitMix64 finalizer; used only to decorrelate derived seeds.
constexpr std::uint64_t mix64(std::uint64_t z) {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

/// Deterministic child seed for stream `key` under `base`. Streams form a tree:
/// derive(derive(seed, path), series) identifies one series of one path.
constexpr std::uint64_t derive(std::uint64_t base, std::uint64_t key) {
  return mix64(mix64(base) ^ mix64(key + 0x632be59bd9b4e019ULL));
}

inline Engine make_engine(std::uint64_t seed) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    0x6d667376u};
  return Engine(seq);
}

/// Standard normal draws (ziggurat).
class NormalStream {
 public:
  explicit NormalStream(std::uint64_t seed) : engine_(make_engine(seed)) {}
  double operator()() { return dist_(engine_); }
  Engine& engine() { return engine_; }

 private:
  Engine engine_;
  boost::random::normal_distribution<double> dist_;
};

}  // namespace mfsv::rng
