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

// Little-endian binary readers/writers shared by the model, compressed-model
// and trie file formats. All multi-byte fields are explicitly little-endian
// regardless of host byte order.

#ifndef EGT_IO_HPP
#define EGT_IO_HPP

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace egt {

class ByteWriter {
 public:
  void u8(uint8_t v) { buf_.push_back(static_cast<char>(v)); }
  void u16(uint16_t v);
  void u32(uint32_t v);
  void u64(uint64_t v);
  void i64(int64_t v) { u64(static_cast<uint64_t>(v)); }
  void f32(float v);
  void bytes(const void* data, size_t len);
  // Length-prefixed (u16) name/string record.
  void str16(std::string_view s);

  const std::string& data() const { return buf_; }

 private:
  std::string buf_;
};

// Reader over an in-memory buffer. `context` names the stream (usually the
// file path) so errors point at the offending file. Throws FormatError on
// truncation.
class ByteReader {
 public:
  ByteReader(std::string data, std::string context)
      : data_(std::move(data)), context_(std::move(context)) {}

  uint8_t u8(std::string_view what);
  uint16_t u16(std::string_view what);
  uint32_t u32(std::string_view what);
  uint64_t u64(std::string_view what);
  int64_t i64(std::string_view what) { return static_cast<int64_t>(u64(what)); }
  float f32(std::string_view what);
  std::string raw(size_t len, std::string_view what);
  std::string str16(std::string_view what);

  bool at_end() const { return pos_ == data_.size(); }
  size_t remaining() const { return data_.size() - pos_; }
  const std::string& context() const { return context_; }

  [[noreturn]] void fail(std::string_view message) const;

 private:
  void require(size_t n, std::string_view what);

  std::string data_;
  std::string context_;
  size_t pos_ = 0;
};

// Whole-file helpers. read_file throws FormatError if the file cannot be
// opened; write_file throws std::runtime_error on I/O failure.
std::string read_file(const std::string& path);
void write_file(const std::string& path, std::string_view data);

}  // namespace egt

#endif  // EGT_IO_HPP
