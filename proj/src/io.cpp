// Copyright 2026 The egt Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "egt/io.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

#include "egt/common.hpp"

namespace egt {

std::string hex64(uint64_t v) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 15; i >= 0; --i) {
    out[i] = digits[v & 0xf];
    v >>= 4;
  }
  return out;
}

void ByteWriter::u16(uint16_t v) {
  u8(static_cast<uint8_t>(v & 0xff));
  u8(static_cast<uint8_t>(v >> 8));
}

void ByteWriter::u32(uint32_t v) {
  for (int i = 0; i < 4; ++i) u8(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
}

void ByteWriter::u64(uint64_t v) {
  for (int i = 0; i < 8; ++i) u8(static_cast<uint8_t>((v >> (8 * i)) & 0xff));
}

void ByteWriter::f32(float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, sizeof(bits));
  u32(bits);
}

void ByteWriter::bytes(const void* data, size_t len) {
  buf_.append(static_cast<const char*>(data), len);
}

void ByteWriter::str16(std::string_view s) {
  if (s.size() > 0xffff) throw InvariantError("string record longer than 65535 bytes");
  u16(static_cast<uint16_t>(s.size()));
  buf_.append(s.data(), s.size());
}

void ByteReader::require(size_t n, std::string_view what) {
  if (data_.size() - pos_ < n) {
    std::ostringstream os;
    os << context_ << ": truncated while reading " << what;
    throw FormatError(os.str());
  }
}

void ByteReader::fail(std::string_view message) const {
  std::ostringstream os;
  os << context_ << ": " << message;
  throw FormatError(os.str());
}

uint8_t ByteReader::u8(std::string_view what) {
  require(1, what);
  return static_cast<uint8_t>(data_[pos_++]);
}

uint16_t ByteReader::u16(std::string_view what) {
  require(2, what);
  uint16_t v = static_cast<uint16_t>(static_cast<uint8_t>(data_[pos_])) |
               static_cast<uint16_t>(static_cast<uint8_t>(data_[pos_ + 1])) << 8;
  pos_ += 2;
  return v;
}

uint32_t ByteReader::u32(std::string_view what) {
  require(4, what);
  uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<uint8_t>(data_[pos_ + i]);
  pos_ += 4;
  return v;
}

uint64_t ByteReader::u64(std::string_view what) {
  require(8, what);
  uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<uint8_t>(data_[pos_ + i]);
  pos_ += 8;
  return v;
}

float ByteReader::f32(std::string_view what) {
  uint32_t bits = u32(what);
  float v;
  std::memcpy(&v, &bits, sizeof(v));
  return v;
}

std::string ByteReader::raw(size_t len, std::string_view what) {
  require(len, what);
  std::string out = data_.substr(pos_, len);
  pos_ += len;
  return out;
}

std::string ByteReader::str16(std::string_view what) {
  uint16_t len = u16(what);
  return raw(len, what);
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError(path + ": cannot open file");
  std::ostringstream os;
  os << in.rdbuf();
  return std::move(os).str();
}

void write_file(const std::string& path, std::string_view data) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error(path + ": cannot open for writing");
  out.write(data.data(), static_cast<std::streamsize>(data.size()));
  if (!out) throw std::runtime_error(path + ": write failed");
}

}  // namespace egt
