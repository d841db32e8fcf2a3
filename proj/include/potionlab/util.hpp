#pragma once

#include <algorithm>
#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <ostream>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace potionlab {

using Rng = std::mt19937_64;

// splitmix64 finaliser, used to derive independent streams from one seed
inline std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline Rng make_rng(std::uint64_t seed, std::uint64_t stream = 0) {
  return Rng(mix_seed(seed, stream));
}

// k distinct indices from [0, n), returned in ascending order
inline std::vector<std::size_t> sample_indices(Rng& rng, std::size_t n, std::size_t k) {
  if (k > n) throw std::invalid_argument("sample_indices: k exceeds population");
  std::vector<std::size_t> pool(n);
  for (std::size_t i = 0; i < n; ++i) pool[i] = i;
  // partial Fisher-Yates
  for (std::size_t i = 0; i < k; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(pool[i], pool[pick(rng)]);
  }
  pool.resize(k);
  std::sort(pool.begin(), pool.end());
  return pool;
}

// FNV-1a 64
class Checksum {
 public:
  void update(const void* data, std::size_t size) {
    auto p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < size; ++i) {
      state_ ^= p[i];
      state_ *= 0x100000001b3ULL;
    }
  }
  void update(std::string_view s) { update(s.data(), s.size()); }
  template <class T>
  void update_values(std::span<const T> v) {
    for (const T& x : v) update_le(x);
  }
  template <class T>
  void update_le(T x) {
    unsigned char buf[sizeof(T)];
    to_le_bytes(x, buf);
    update(buf, sizeof(T));
  }
  std::uint64_t value() const { return state_; }
  std::string hex() const {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 0; i < 16; ++i) out[15 - i] = digits[(state_ >> (4 * i)) & 0xf];
    return out;
  }

  template <class T>
  static void to_le_bytes(T x, unsigned char* out) {
    using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
              std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint8_t>>;
    U u = std::bit_cast<U>(x);
    for (std::size_t i = 0; i < sizeof(T); ++i) out[i] = static_cast<unsigned char>(u >> (8 * i));
  }

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

template <class T>
std::string checksum_of(std::span<const T> v) {
  Checksum c;
  c.update_values(v);
  return c.hex();
}

// Little-endian tensor blobs.
template <class T>
void write_blob(const std::string& path, std::span<const T> values) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  std::vector<unsigned char> buf(values.size() * sizeof(T));
  for (std::size_t i = 0; i < values.size(); ++i) Checksum::to_le_bytes(values[i], &buf[i * sizeof(T)]);
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!out) throw std::runtime_error("write failed: " + path);
}

template <class T>
std::vector<T> read_blob(const std::string& path, std::size_t count) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for reading: " + path);
  std::vector<unsigned char> buf(count * sizeof(T));
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (static_cast<std::size_t>(in.gcount()) != buf.size())
    throw std::runtime_error("truncated blob: " + path);
  if (in.peek() != std::char_traits<char>::eof()) throw std::runtime_error("oversized blob: " + path);
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t,
            std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint8_t>>;
  std::vector<T> out(count);
  for (std::size_t i = 0; i < count; ++i) {
    U u = 0;
    for (std::size_t b = 0; b < sizeof(T); ++b) u |= static_cast<U>(static_cast<U>(buf[i * sizeof(T) + b]) << (8 * b));
    out[i] = std::bit_cast<T>(u);
  }
  return out;
}

// Shortest round-trip decimal form.
inline std::string format_number(double x) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

}  // namespace potionlab
