#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace ulab {

// Failure categories; the CLI maps these onto process exit codes.
enum class errc {
  validation,  // bad inputs, schema violations, shape mismatches
  gate,        // quality gates not met (accuracy gate, NaN guard, degenerate data)
  io,          // filesystem and serialization failures
};

class Error : public std::runtime_error {
 public:
  Error(errc kind, const std::string& msg) : std::runtime_error(msg), kind_(kind) {}
  errc kind() const { return kind_; }

 private:
  errc kind_;
};

[[noreturn]] inline void fail(errc kind, const std::string& msg) { throw Error(kind, msg); }

inline void require(bool cond, errc kind, const std::string& msg) {
  if (!cond) fail(kind, msg);
}

// Deterministic RNG. The mt19937_64 engine is pinned by the standard;
// the distribution functions here are our own so that streams are
// byte-reproducible across compilers and platforms.
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed), seed_value_(seed) {}

  uint64_t next_u64() { return eng_(); }

  // Uniform in [0, 1) with 53 random bits.
  double next_unit() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  // Uniform in [0, n), unbiased via rejection.
  uint64_t below(uint64_t n);

  // Standard normal, Box-Muller with cached spare.
  double normal();

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  // Independent child stream; mixing keeps streams decorrelated while the
  // (seed, id) -> stream mapping stays stable.
  Rng child(uint64_t stream_id) const;

  uint64_t seed() const { return seed_value_; }

 private:
  std::mt19937_64 eng_;
  uint64_t seed_value_ = 0;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

inline Rng make_rng(uint64_t seed) { return Rng(seed); }

uint64_t splitmix64(uint64_t x);

// FNV-1a 64-bit, used for artifact checksums in run manifests.
uint64_t fnv1a64(const void* data, size_t len);
std::string checksum_hex(uint64_t h);
std::string checksum_file(const std::filesystem::path& p);
std::string checksum_bytes(const void* data, size_t len);

// Whole-file helpers. write_file_atomic stages to a temp file in the same
// directory and renames into place.
std::string read_file(const std::filesystem::path& p);
void write_file_atomic(const std::filesystem::path& p, const std::string& contents);

std::string format_double(double v, int precision);

}  // namespace ulab
