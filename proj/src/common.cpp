#include "ulab/common.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace ulab {

uint64_t Rng::below(uint64_t n) {
  require(n > 0, errc::validation, "Rng::below requires n > 0");
  // Rejection sampling over the largest multiple of n.
  const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  uint64_t x = eng_();
  while (x >= limit) x = eng_();
  return x % n;
}

double Rng::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  const double u1 = 1.0 - next_unit();  // (0, 1], keeps log() finite
  const double u2 = next_unit();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * M_PI * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

Rng Rng::child(uint64_t stream_id) const {
  return Rng(splitmix64(seed_value_ ^ splitmix64(stream_id + 0x9e3779b97f4a7c15ULL)));
}

uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

uint64_t fnv1a64(const void* data, size_t len) {
  const auto* p = static_cast<const unsigned char*>(data);
  uint64_t h = 0xcbf29ce484222325ULL;
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::string checksum_hex(uint64_t h) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "fnv1a64:%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string checksum_bytes(const void* data, size_t len) {
  return checksum_hex(fnv1a64(data, len));
}

std::string checksum_file(const std::filesystem::path& p) {
  const std::string contents = read_file(p);
  return checksum_bytes(contents.data(), contents.size());
}

std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) fail(errc::io, "cannot open file for reading: " + p.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  if (!in.good() && !in.eof()) fail(errc::io, "failed while reading: " + p.string());
  return ss.str();
}

void write_file_atomic(const std::filesystem::path& p, const std::string& contents) {
  namespace fs = std::filesystem;
  const fs::path tmp = p.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(errc::io, "cannot open file for writing: " + tmp.string());
    out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
    if (!out.good()) fail(errc::io, "failed while writing: " + tmp.string());
  }
  std::error_code ec;
  fs::rename(tmp, p, ec);
  if (ec) fail(errc::io, "rename failed for " + p.string() + ": " + ec.message());
}

std::string format_double(double v, int precision) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.*f", precision, v);
  return buf;
}

}  // namespace ulab
