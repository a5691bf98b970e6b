#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace cardset {

// Centralized numeric tolerances. Everything that compares floating point
// in the library or in the verifiers goes through these constants.
namespace tol {
inline constexpr double prob_sum = 1e-9;       // probability vectors must sum to 1 within this
inline constexpr double algebra = 1e-12;       // closed-form identity comparisons
inline constexpr double kink_distance = 1e-3;  // flag gradients this close to a hinge kink
inline constexpr double grad_check_rel = 1e-5; // finite-difference agreement requirement
inline constexpr double inner_grad = 1e-9;     // target gradient norm for inner minimizations
inline constexpr double bound_margin = 1e-6;   // slack allowed when asserting bound margins
}

struct config_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct data_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct training_divergence : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline bool all_finite(std::span<const double> v) {
  for (double x : v)
    if (!std::isfinite(x)) return false;
  return true;
}

inline void require_finite(std::span<const double> v, const char* what) {
  if (!all_finite(v)) throw std::invalid_argument(std::string(what) + ": non-finite value");
}

// 9 significant digits, the fixed precision of every CSV this toolkit writes.
inline std::string fmt_g9(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

inline std::string fmt_g17(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

// Minimal SHA-1, used for content hashes of experiment inputs (same construction
// as git blob ids so hashes can be cross-checked with `git hash-object`).
class Sha1 {
 public:
  Sha1() { reset(); }

  void reset() {
    h_[0] = 0x67452301u; h_[1] = 0xEFCDAB89u; h_[2] = 0x98BADCFEu;
    h_[3] = 0x10325476u; h_[4] = 0xC3D2E1F0u;
    len_ = 0; buflen_ = 0;
  }

  void update(const void* data, std::size_t n) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    len_ += n;
    while (n > 0) {
      std::size_t take = std::min<std::size_t>(64 - buflen_, n);
      std::memcpy(buf_ + buflen_, p, take);
      buflen_ += take; p += take; n -= take;
      if (buflen_ == 64) { process(buf_); buflen_ = 0; }
    }
  }

  std::string hex_digest() {
    unsigned char pad[72];
    std::size_t padlen = (buflen_ < 56) ? (56 - buflen_) : (120 - buflen_);
    pad[0] = 0x80;
    std::memset(pad + 1, 0, padlen - 1);
    std::uint64_t bits = len_ * 8;
    for (int i = 0; i < 8; ++i) pad[padlen + i] = static_cast<unsigned char>(bits >> (56 - 8 * i));
    update(pad, padlen + 8);
    char out[41];
    for (int i = 0; i < 5; ++i) std::snprintf(out + 8 * i, 9, "%08x", h_[i]);
    return std::string(out, 40);
  }

 private:
  static std::uint32_t rol(std::uint32_t x, int s) { return (x << s) | (x >> (32 - s)); }

  void process(const unsigned char* block) {
    std::uint32_t w[80];
    for (int i = 0; i < 16; ++i)
      w[i] = (std::uint32_t(block[4 * i]) << 24) | (std::uint32_t(block[4 * i + 1]) << 16) |
             (std::uint32_t(block[4 * i + 2]) << 8) | std::uint32_t(block[4 * i + 3]);
    for (int i = 16; i < 80; ++i) w[i] = rol(w[i - 3] ^ w[i - 8] ^ w[i - 14] ^ w[i - 16], 1);
    std::uint32_t a = h_[0], b = h_[1], c = h_[2], d = h_[3], e = h_[4];
    for (int i = 0; i < 80; ++i) {
      std::uint32_t f, k;
      if (i < 20)      { f = (b & c) | (~b & d);           k = 0x5A827999u; }
      else if (i < 40) { f = b ^ c ^ d;                    k = 0x6ED9EBA1u; }
      else if (i < 60) { f = (b & c) | (b & d) | (c & d);  k = 0x8F1BBCDCu; }
      else             { f = b ^ c ^ d;                    k = 0xCA62C1D6u; }
      std::uint32_t t = rol(a, 5) + f + e + k + w[i];
      e = d; d = c; c = rol(b, 30); b = a; a = t;
    }
    h_[0] += a; h_[1] += b; h_[2] += c; h_[3] += d; h_[4] += e;
  }

  std::uint32_t h_[5];
  std::uint64_t len_;
  unsigned char buf_[64];
  std::size_t buflen_;
};

inline std::string git_blob_hash(std::string_view content) {
  Sha1 s;
  std::string header = "blob " + std::to_string(content.size());
  s.update(header.data(), header.size() + 1);  // git includes the NUL terminator
  s.update(content.data(), content.size());
  return s.hex_digest();
}

}  // namespace cardset
