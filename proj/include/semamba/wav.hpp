// Copyright 2026 semamba authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)

#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "semamba/tensor.hpp"

namespace semamba {

// 16-bit PCM mono WAV only; anything else is rejected rather than converted.

struct WavData {
  std::vector<double> samples;
  long sample_rate = 0;
};

namespace detail {

inline uint32_t rd_u32(const uint8_t* p) {
  return uint32_t(p[0]) | uint32_t(p[1]) << 8 | uint32_t(p[2]) << 16 |
         uint32_t(p[3]) << 24;
}
inline uint16_t rd_u16(const uint8_t* p) {
  return uint16_t(p[0] | p[1] << 8);
}
inline void wr_u32(std::vector<uint8_t>& v, uint32_t x) {
  for (int i = 0; i < 4; ++i) v.push_back(uint8_t(x >> (8 * i)));
}
inline void wr_u16(std::vector<uint8_t>& v, uint16_t x) {
  v.push_back(uint8_t(x));
  v.push_back(uint8_t(x >> 8));
}

}  // namespace detail

inline WavData read_wav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("wav: cannot open " + path);
  std::vector<uint8_t> b((std::istreambuf_iterator<char>(in)),
                         std::istreambuf_iterator<char>());
  if (b.size() < 44 || std::memcmp(b.data(), "RIFF", 4) != 0 ||
      std::memcmp(b.data() + 8, "WAVE", 4) != 0)
    throw IoError("wav: " + path + " is not a RIFF/WAVE file");
  WavData out;
  bool have_fmt = false;
  size_t pos = 12;
  while (pos + 8 <= b.size()) {
    const char* id = reinterpret_cast<const char*>(b.data() + pos);
    uint32_t sz = detail::rd_u32(b.data() + pos + 4);
    size_t body = pos + 8;
    if (body + sz > b.size()) throw IoError("wav: truncated chunk in " + path);
    if (std::memcmp(id, "fmt ", 4) == 0) {
      if (sz < 16) throw IoError("wav: malformed fmt chunk");
      uint16_t format = detail::rd_u16(b.data() + body);
      uint16_t channels = detail::rd_u16(b.data() + body + 2);
      uint32_t rate = detail::rd_u32(b.data() + body + 4);
      uint16_t bits = detail::rd_u16(b.data() + body + 14);
      if (format != 1) throw IoError("wav: only PCM supported");
      if (channels != 1) throw IoError("wav: only mono supported");
      if (bits != 16) throw IoError("wav: only 16-bit supported");
      out.sample_rate = long(rate);
      have_fmt = true;
    } else if (std::memcmp(id, "data", 4) == 0) {
      if (!have_fmt) throw IoError("wav: data chunk before fmt");
      size_t n = sz / 2;
      out.samples.resize(n);
      for (size_t i = 0; i < n; ++i) {
        int16_t s;
        std::memcpy(&s, b.data() + body + 2 * i, 2);
        out.samples[i] = double(s) / 32767.0;
      }
      return out;
    }
    pos = body + sz + (sz & 1);  // chunks are word-aligned
  }
  throw IoError("wav: no data chunk in " + path);
}

// Writes 16-bit PCM; returns how many samples hit the rails.
inline long write_wav(const std::string& path, const std::vector<double>& x,
                      long sample_rate) {
  std::vector<uint8_t> b;
  b.reserve(44 + 2 * x.size());
  b.insert(b.end(), {'R', 'I', 'F', 'F'});
  detail::wr_u32(b, uint32_t(36 + 2 * x.size()));
  b.insert(b.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  detail::wr_u32(b, 16);
  detail::wr_u16(b, 1);  // PCM
  detail::wr_u16(b, 1);  // mono
  detail::wr_u32(b, uint32_t(sample_rate));
  detail::wr_u32(b, uint32_t(sample_rate * 2));
  detail::wr_u16(b, 2);
  detail::wr_u16(b, 16);
  b.insert(b.end(), {'d', 'a', 't', 'a'});
  detail::wr_u32(b, uint32_t(2 * x.size()));
  long clipped = 0;
  for (double v : x) {
    long s = std::lround(v * 32767.0);
    if (s > 32767) {
      s = 32767;
      ++clipped;
    } else if (s < -32768) {
      s = -32768;
      ++clipped;
    }
    detail::wr_u16(b, uint16_t(int16_t(s)));
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("wav: cannot open " + path + " for writing");
  out.write(reinterpret_cast<const char*>(b.data()), long(b.size()));
  if (!out) throw IoError("wav: short write to " + path);
  return clipped;
}

}  // namespace semamba
