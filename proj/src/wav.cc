// Copyright 2026 The spkv Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//   http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "spkv/wav.h"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

#include "spkv/errors.h"

namespace spkv {
namespace {

void PutU32(std::vector<std::uint8_t>* out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out->push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void PutU16(std::vector<std::uint8_t>* out, std::uint16_t v) {
  out->push_back(static_cast<std::uint8_t>(v & 0xff));
  out->push_back(static_cast<std::uint8_t>(v >> 8));
}

std::uint32_t GetU32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) |
         (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t GetU16(const std::uint8_t* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

}  // namespace

void CheckWaveform(const Waveform& wave) {
  if (wave.sample_rate != kSampleRate)
    throw FormatError("expected an 8000 Hz waveform, got " +
                      std::to_string(wave.sample_rate) + " Hz");
  if (!wave.samples.allFinite())
    throw FormatError("waveform contains non-finite samples");
}

std::vector<std::uint8_t> EncodeWav(const Waveform& wave) {
  const auto n = static_cast<std::uint32_t>(wave.samples.size());
  std::vector<std::uint8_t> out;
  out.reserve(44 + 2 * n);
  const char* riff = "RIFF";
  out.insert(out.end(), riff, riff + 4);
  PutU32(&out, 36 + 2 * n);
  const char* wave_fmt = "WAVEfmt ";
  out.insert(out.end(), wave_fmt, wave_fmt + 8);
  PutU32(&out, 16);
  PutU16(&out, 1);  // PCM
  PutU16(&out, 1);  // mono
  PutU32(&out, static_cast<std::uint32_t>(wave.sample_rate));
  PutU32(&out, static_cast<std::uint32_t>(wave.sample_rate) * 2);
  PutU16(&out, 2);
  PutU16(&out, 16);
  const char* data = "data";
  out.insert(out.end(), data, data + 4);
  PutU32(&out, 2 * n);
  for (Eigen::Index i = 0; i < wave.samples.size(); ++i) {
    const double q = std::round(wave.samples[i] * 32768.0);
    const auto s = static_cast<std::int16_t>(std::clamp(q, -32768.0, 32767.0));
    PutU16(&out, static_cast<std::uint16_t>(s));
  }
  return out;
}

Waveform DecodeWav(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw FormatError("not a RIFF/WAVE file");
  std::size_t pos = 12;
  bool have_fmt = false;
  Waveform wave;
  while (pos + 8 <= bytes.size()) {
    const std::uint8_t* chunk = bytes.data() + pos;
    const std::uint32_t size = GetU32(chunk + 4);
    const std::size_t body = pos + 8;
    if (body + size > bytes.size()) throw FormatError("truncated WAV chunk");
    if (std::memcmp(chunk, "fmt ", 4) == 0) {
      if (size < 16) throw FormatError("short fmt chunk");
      const std::uint8_t* f = bytes.data() + body;
      if (GetU16(f) != 1) throw FormatError("WAV is not PCM");
      if (GetU16(f + 2) != 1) throw FormatError("WAV is not mono");
      wave.sample_rate = static_cast<int>(GetU32(f + 4));
      if (GetU16(f + 14) != 16) throw FormatError("WAV is not 16-bit");
      have_fmt = true;
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      if (!have_fmt) throw FormatError("WAV data chunk before fmt chunk");
      const std::size_t n = size / 2;
      wave.samples.resize(static_cast<Eigen::Index>(n));
      const std::uint8_t* d = bytes.data() + body;
      for (std::size_t i = 0; i < n; ++i) {
        const auto s = static_cast<std::int16_t>(GetU16(d + 2 * i));
        wave.samples[static_cast<Eigen::Index>(i)] = s / 32768.0;
      }
      CheckWaveform(wave);
      return wave;
    }
    pos = body + size + (size & 1);
  }
  throw FormatError("WAV has no data chunk");
}

Waveform ReadWav(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  try {
    return DecodeWav(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path + ": " + e.what());
  }
}

void WriteWav(const std::string& path, const Waveform& wave) {
  const auto bytes = EncodeWav(wave);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
}

}  // namespace spkv
