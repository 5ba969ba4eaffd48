// vibspoof/audio.hpp

// Copyright 2026  The vibspoof Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//  http://www.apache.org/licenses/LICENSE-2.0
//
// THIS CODE IS PROVIDED *AS IS* BASIS, WITHOUT WARRANTIES OR CONDITIONS OF ANY
// KIND, EITHER EXPRESS OR IMPLIED, INCLUDING WITHOUT LIMITATION ANY IMPLIED
// WARRANTIES OR CONDITIONS OF TITLE, FITNESS FOR A PARTICULAR PURPOSE,
// MERCHANTABLITY OR NON-INFRINGEMENT.
// See the Apache 2 License for the specific language governing permissions and
// limitations under the License.

// Mono waveform loading: RIFF/WAVE (PCM and IEEE float) and FLAC.  Multi-
// channel input is averaged down to mono.  No resampling is done here.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "vibspoof/common.hpp"

namespace vibspoof {

struct Waveform {
  std::vector<double> samples;  // amplitude-normalized to [-1, 1)
  int sample_rate = 16000;
};

// Throws unless the waveform is non-empty and finite.
inline void ValidateWaveform(const Waveform& w, std::string_view what = "waveform") {
  if (w.samples.empty()) throw ValidationError(std::string(what) + " is empty");
  if (w.sample_rate <= 0) throw ValidationError(std::string(what) + " has no sample rate");
  for (double s : w.samples) {
    if (!std::isfinite(s)) throw ValidationError(std::string(what) + " has non-finite samples");
  }
}

namespace internal {

inline std::uint32_t ReadLe32(const unsigned char* p) {
  return std::uint32_t(p[0]) | (std::uint32_t(p[1]) << 8) | (std::uint32_t(p[2]) << 16) |
         (std::uint32_t(p[3]) << 24);
}
inline std::uint16_t ReadLe16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}
inline void PutLe32(std::string* s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s->push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void PutLe16(std::string* s, std::uint16_t v) {
  s->push_back(static_cast<char>(v & 0xff));
  s->push_back(static_cast<char>(v >> 8));
}

}  // namespace internal

// ---------------------------------------------------------------------------
// WAV

inline Waveform DecodeWav(std::span<const unsigned char> data) {
  using internal::ReadLe16;
  using internal::ReadLe32;
  if (data.size() < 12 || std::memcmp(data.data(), "RIFF", 4) != 0 ||
      std::memcmp(data.data() + 8, "WAVE", 4) != 0) {
    throw ParseError("not a RIFF/WAVE stream");
  }
  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  std::span<const unsigned char> payload;
  std::size_t pos = 12;
  while (pos + 8 <= data.size()) {
    const unsigned char* chunk = data.data() + pos;
    const std::uint32_t size = ReadLe32(chunk + 4);
    const std::size_t body = pos + 8;
    const std::size_t avail = std::min<std::size_t>(size, data.size() - body);
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (avail < 16) throw ParseError("WAV fmt chunk too short");
      format = ReadLe16(data.data() + body);
      channels = ReadLe16(data.data() + body + 2);
      rate = ReadLe32(data.data() + body + 4);
      bits = ReadLe16(data.data() + body + 14);
      if (format == 0xFFFE && avail >= 26) format = ReadLe16(data.data() + body + 24);
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      payload = data.subspan(body, avail);
    }
    pos = body + size + (size & 1);
  }
  if (!have_fmt) throw ParseError("WAV stream has no fmt chunk");
  if (channels == 0) throw ParseError("WAV stream declares zero channels");
  const bool pcm = format == 1, flt = format == 3;
  if (!(pcm && (bits == 8 || bits == 16 || bits == 24 || bits == 32)) &&
      !(flt && (bits == 32 || bits == 64))) {
    throw ParseError("unsupported WAV encoding (format " + std::to_string(format) + ", " +
                     std::to_string(bits) + " bits)");
  }
  const std::size_t bytes = bits / 8;
  const std::size_t frames = payload.size() / (bytes * channels);
  Waveform w;
  w.sample_rate = static_cast<int>(rate);
  w.samples.resize(frames);
  for (std::size_t f = 0; f < frames; ++f) {
    double acc = 0.0;
    for (std::size_t c = 0; c < channels; ++c) {
      const unsigned char* p = payload.data() + (f * channels + c) * bytes;
      double v = 0.0;
      if (flt && bits == 32) {
        float x;
        std::memcpy(&x, p, 4);
        v = x;
      } else if (flt) {
        std::memcpy(&v, p, 8);
      } else if (bits == 8) {
        v = (static_cast<int>(p[0]) - 128) / 128.0;
      } else if (bits == 16) {
        v = static_cast<std::int16_t>(ReadLe16(p)) / 32768.0;
      } else if (bits == 24) {
        std::int32_t x = static_cast<std::int32_t>(p[0] | (p[1] << 8) | (p[2] << 16));
        if (x & 0x800000) x -= 0x1000000;
        v = x / 8388608.0;
      } else {
        v = static_cast<std::int32_t>(ReadLe32(p)) / 2147483648.0;
      }
      acc += v;
    }
    w.samples[f] = acc / channels;
  }
  return w;
}

enum class WavEncoding { kPcm16, kFloat32 };

inline std::string EncodeWav(const Waveform& w, WavEncoding enc = WavEncoding::kPcm16) {
  using internal::PutLe16;
  using internal::PutLe32;
  const std::uint16_t bits = enc == WavEncoding::kPcm16 ? 16 : 32;
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(w.samples.size() * (bits / 8));
  std::string out = "RIFF";
  PutLe32(&out, 36 + data_bytes);
  out += "WAVEfmt ";
  PutLe32(&out, 16);
  PutLe16(&out, enc == WavEncoding::kPcm16 ? 1 : 3);
  PutLe16(&out, 1);
  PutLe32(&out, static_cast<std::uint32_t>(w.sample_rate));
  PutLe32(&out, static_cast<std::uint32_t>(w.sample_rate) * (bits / 8));
  PutLe16(&out, bits / 8);
  PutLe16(&out, bits);
  out += "data";
  PutLe32(&out, data_bytes);
  for (double s : w.samples) {
    if (enc == WavEncoding::kPcm16) {
      const double c = std::clamp(s, -1.0, 32767.0 / 32768.0);
      PutLe16(&out, static_cast<std::uint16_t>(
                        static_cast<std::int16_t>(std::lround(c * 32768.0))));
    } else {
      const float f = static_cast<float>(s);
      std::uint32_t u;
      std::memcpy(&u, &f, 4);
      PutLe32(&out, u);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// FLAC (fixed and LPC subframes, Rice-coded residuals, inter-channel
// decorrelation; frame CRCs are verified).

namespace internal {

class FlacBitReader {
 public:
  explicit FlacBitReader(std::span<const unsigned char> d) : data_(d) {}

  std::uint32_t Bits(int n) {
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v = (v << 1) | Bit();
    return static_cast<std::uint32_t>(v);
  }
  std::uint64_t Bits64(int n) {
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v = (v << 1) | Bit();
    return v;
  }
  std::int32_t Signed(int n) {
    if (n == 0) return 0;
    const std::uint64_t v = Bits64(n);
    const std::int64_t sv = (v & (1ULL << (n - 1))) ? static_cast<std::int64_t>(v) - (1LL << n)
                                                    : static_cast<std::int64_t>(v);
    return static_cast<std::int32_t>(sv);
  }
  std::int64_t Signed64(int n) {
    if (n == 0) return 0;
    const std::uint64_t v = Bits64(n);
    if (n == 64) return static_cast<std::int64_t>(v);
    return (v & (1ULL << (n - 1))) ? static_cast<std::int64_t>(v) - (1LL << n)
                                   : static_cast<std::int64_t>(v);
  }
  std::uint32_t Unary() {
    std::uint32_t n = 0;
    while (Bit() == 0) ++n;
    return n;
  }
  unsigned Bit() {
    if (pos_ >= data_.size() * 8) throw ParseError("FLAC stream truncated");
    const unsigned b = (data_[pos_ >> 3] >> (7 - (pos_ & 7))) & 1u;
    ++pos_;
    return b;
  }
  void AlignToByte() { pos_ = (pos_ + 7) & ~std::size_t{7}; }
  std::size_t byte_pos() const { return pos_ >> 3; }
  void SeekByte(std::size_t b) { pos_ = b * 8; }
  bool AtEnd() const { return pos_ >= data_.size() * 8; }

 private:
  std::span<const unsigned char> data_;
  std::size_t pos_ = 0;
};

inline std::uint8_t Crc8(std::span<const unsigned char> d) {
  std::uint8_t crc = 0;
  for (unsigned char b : d) {
    crc ^= b;
    for (int i = 0; i < 8; ++i) crc = (crc & 0x80) ? static_cast<std::uint8_t>((crc << 1) ^ 0x07)
                                                    : static_cast<std::uint8_t>(crc << 1);
  }
  return crc;
}

inline std::uint16_t Crc16(std::span<const unsigned char> d) {
  std::uint16_t crc = 0;
  for (unsigned char b : d) {
    crc ^= static_cast<std::uint16_t>(b << 8);
    for (int i = 0; i < 8; ++i) {
      crc = (crc & 0x8000) ? static_cast<std::uint16_t>((crc << 1) ^ 0x8005)
                           : static_cast<std::uint16_t>(crc << 1);
    }
  }
  return crc;
}

inline void FlacResidual(FlacBitReader& br, int order, std::size_t block_size,
                         std::int64_t* out) {
  const std::uint32_t method = br.Bits(2);
  if (method > 1) throw ParseError("FLAC reserved residual coding method");
  const int param_bits = method == 0 ? 4 : 5;
  const std::uint32_t escape = method == 0 ? 15 : 31;
  const std::uint32_t partition_order = br.Bits(4);
  const std::size_t partitions = std::size_t{1} << partition_order;
  if ((block_size >> partition_order) < static_cast<std::size_t>(order) ||
      (block_size % partitions) != 0) {
    throw ParseError("FLAC residual partition order inconsistent with block size");
  }
  std::size_t i = static_cast<std::size_t>(order);
  for (std::size_t p = 0; p < partitions; ++p) {
    std::size_t n = block_size >> partition_order;
    if (p == 0) n -= static_cast<std::size_t>(order);
    const std::uint32_t param = br.Bits(param_bits);
    if (param == escape) {
      const int raw = static_cast<int>(br.Bits(5));
      for (std::size_t k = 0; k < n; ++k) out[i++] = br.Signed(raw);
    } else {
      for (std::size_t k = 0; k < n; ++k) {
        const std::uint64_t q = br.Unary();
        const std::uint64_t u = (q << param) | br.Bits64(static_cast<int>(param));
        out[i++] = static_cast<std::int64_t>(u >> 1) ^ -static_cast<std::int64_t>(u & 1);
      }
    }
  }
}

inline void FlacSubframe(FlacBitReader& br, int bps, std::size_t block_size, std::int64_t* out) {
  if (br.Bit() != 0) throw ParseError("FLAC subframe padding bit set");
  const std::uint32_t type = br.Bits(6);
  int wasted = 0;
  if (br.Bit()) wasted = static_cast<int>(br.Unary()) + 1;
  bps -= wasted;
  if (bps <= 0) throw ParseError("FLAC wasted bits exceed sample size");
  if (type == 0) {
    const std::int64_t v = br.Signed64(bps);
    for (std::size_t i = 0; i < block_size; ++i) out[i] = v;
  } else if (type == 1) {
    for (std::size_t i = 0; i < block_size; ++i) out[i] = br.Signed64(bps);
  } else if (type >= 8 && type <= 12) {
    const int order = static_cast<int>(type - 8);
    if (static_cast<std::size_t>(order) > block_size) throw ParseError("FLAC order > block size");
    for (int i = 0; i < order; ++i) out[i] = br.Signed64(bps);
    FlacResidual(br, order, block_size, out);
    for (std::size_t i = order; i < block_size; ++i) {
      switch (order) {
        case 1: out[i] += out[i - 1]; break;
        case 2: out[i] += 2 * out[i - 1] - out[i - 2]; break;
        case 3: out[i] += 3 * out[i - 1] - 3 * out[i - 2] + out[i - 3]; break;
        case 4: out[i] += 4 * out[i - 1] - 6 * out[i - 2] + 4 * out[i - 3] - out[i - 4]; break;
        default: break;
      }
    }
  } else if (type >= 32) {
    const int order = static_cast<int>(type - 31);
    if (static_cast<std::size_t>(order) > block_size) throw ParseError("FLAC order > block size");
    for (int i = 0; i < order; ++i) out[i] = br.Signed64(bps);
    const int precision = static_cast<int>(br.Bits(4)) + 1;
    if (precision == 16) throw ParseError("FLAC invalid LPC precision");
    const int shift = br.Signed(5);
    if (shift < 0) throw ParseError("FLAC negative LPC shift");
    std::array<std::int64_t, 32> coef{};
    for (int i = 0; i < order; ++i) coef[i] = br.Signed(precision);
    FlacResidual(br, order, block_size, out);
    for (std::size_t i = order; i < block_size; ++i) {
      std::int64_t acc = 0;
      for (int j = 0; j < order; ++j) acc += coef[j] * out[i - 1 - j];
      out[i] += acc >> shift;
    }
  } else {
    throw ParseError("FLAC reserved subframe type " + std::to_string(type));
  }
  if (wasted) {
    for (std::size_t i = 0; i < block_size; ++i) out[i] <<= wasted;
  }
}

}  // namespace internal

inline Waveform DecodeFlac(std::span<const unsigned char> data) {
  using internal::FlacBitReader;
  if (data.size() < 8 || std::memcmp(data.data(), "fLaC", 4) != 0) {
    throw ParseError("not a FLAC stream");
  }
  FlacBitReader br(data);
  br.SeekByte(4);
  int rate = 0, bps = 0;
  std::uint64_t total = 0;
  bool have_info = false;
  for (bool last = false; !last;) {
    last = br.Bit() != 0;
    const std::uint32_t type = br.Bits(7);
    const std::uint32_t len = br.Bits(24);
    const std::size_t start = br.byte_pos();
    if (type == 0) {
      br.Bits(16);  // min block size
      br.Bits(16);  // max block size
      br.Bits(24);
      br.Bits(24);
      rate = static_cast<int>(br.Bits(20));
      br.Bits(3);  // channel count; frame headers carry the layout
      bps = static_cast<int>(br.Bits(5)) + 1;
      total = br.Bits64(36);
      have_info = true;
    }
    if (start + len > data.size()) throw ParseError("FLAC metadata block truncated");
    br.SeekByte(start + len);
  }
  if (!have_info) throw ParseError("FLAC stream has no STREAMINFO");

  static constexpr int kRates[] = {0,     88200, 176400, 192000, 8000,  16000, 22050, 24000,
                                   32000, 44100, 48000,  96000,  0,     0,     0,     0};
  static constexpr int kBits[] = {0, 8, 12, 0, 16, 20, 24, 32};
  Waveform w;
  w.sample_rate = rate;
  if (total) w.samples.reserve(total);
  std::vector<std::vector<std::int64_t>> chan(8);
  while (!br.AtEnd()) {
    const std::size_t frame_start = br.byte_pos();
    if (frame_start + 2 > data.size()) break;
    const std::uint32_t sync = br.Bits(14);
    if (sync != 0x3FFE) throw ParseError("FLAC frame sync lost at byte " + std::to_string(frame_start));
    br.Bit();
    br.Bit();  // blocking strategy; the sample/frame number is not needed
    const std::uint32_t bs_code = br.Bits(4);
    const std::uint32_t sr_code = br.Bits(4);
    const std::uint32_t ch_code = br.Bits(4);
    const std::uint32_t sz_code = br.Bits(3);
    br.Bit();
    // UTF-8 style coded frame/sample number.
    std::uint32_t lead = br.Bits(8);
    int extra = 0;
    while (lead & 0x80) {
      lead = (lead << 1) & 0xff;
      ++extra;
    }
    if (extra == 1) throw ParseError("FLAC bad coded number");
    for (int i = 1; i < extra; ++i) br.Bits(8);
    std::size_t block = 0;
    if (bs_code == 1) block = 192;
    else if (bs_code >= 2 && bs_code <= 5) block = 576u << (bs_code - 2);
    else if (bs_code == 6) block = br.Bits(8) + 1;
    else if (bs_code == 7) block = br.Bits(16) + 1;
    else if (bs_code >= 8) block = 256u << (bs_code - 8);
    else throw ParseError("FLAC reserved block size code");
    if (sr_code == 12) br.Bits(8);
    else if (sr_code == 13 || sr_code == 14) br.Bits(16);
    else if (sr_code == 15) throw ParseError("FLAC invalid sample rate code");
    else if (sr_code != 0 && kRates[sr_code] != rate) {
      throw ParseError("FLAC frame sample rate differs from STREAMINFO");
    }
    const std::size_t crc_end = br.byte_pos();
    const std::uint32_t crc8 = br.Bits(8);
    if (crc8 != internal::Crc8(data.subspan(frame_start, crc_end - frame_start))) {
      throw ParseError("FLAC frame header CRC mismatch");
    }
    const int frame_bps = sz_code == 0 ? bps : kBits[sz_code];
    if (frame_bps == 0) throw ParseError("FLAC reserved sample size code");
    int n_ch;
    if (ch_code < 8) n_ch = static_cast<int>(ch_code) + 1;
    else if (ch_code <= 10) n_ch = 2;
    else throw ParseError("FLAC reserved channel assignment");
    for (int c = 0; c < n_ch; ++c) {
      chan[c].assign(block, 0);
      int sub_bps = frame_bps;
      if ((ch_code == 8 && c == 1) || (ch_code == 9 && c == 0) || (ch_code == 10 && c == 1)) {
        ++sub_bps;  // side channel
      }
      internal::FlacSubframe(br, sub_bps, block, chan[c].data());
    }
    br.AlignToByte();
    const std::size_t body_end = br.byte_pos();
    const std::uint32_t crc16 = br.Bits(16);
    if (crc16 != internal::Crc16(data.subspan(frame_start, body_end - frame_start))) {
      throw ParseError("FLAC frame CRC mismatch");
    }
    if (ch_code >= 8) {
      auto& a = chan[0];
      auto& b = chan[1];
      for (std::size_t i = 0; i < block; ++i) {
        if (ch_code == 8) {
          b[i] = a[i] - b[i];
        } else if (ch_code == 9) {
          a[i] = a[i] + b[i];
        } else {
          const std::int64_t side = b[i];
          const std::int64_t mid = (a[i] << 1) | (side & 1);
          a[i] = (mid + side) >> 1;
          b[i] = (mid - side) >> 1;
        }
      }
    }
    const double scale = std::ldexp(1.0, frame_bps - 1);
    for (std::size_t i = 0; i < block; ++i) {
      double acc = 0.0;
      for (int c = 0; c < n_ch; ++c) acc += static_cast<double>(chan[c][i]) / scale;
      w.samples.push_back(acc / n_ch);
    }
  }
  return w;
}

// Decodes a file by content (FLAC or RIFF/WAVE).
inline Waveform LoadAudio(const std::filesystem::path& path) {
  const std::string bytes = ReadFileToString(path.string());
  const std::span<const unsigned char> data(
      reinterpret_cast<const unsigned char*>(bytes.data()), bytes.size());
  try {
    if (bytes.size() >= 4 && bytes.compare(0, 4, "fLaC") == 0) return DecodeFlac(data);
    return DecodeWav(data);
  } catch (const ParseError& e) {
    throw ParseError(path.string() + ": " + e.what());
  }
}

inline void SaveWav(const std::filesystem::path& path, const Waveform& w,
                    WavEncoding enc = WavEncoding::kPcm16) {
  WriteStringToFile(path.string(), EncodeWav(w, enc));
}

}  // namespace vibspoof
