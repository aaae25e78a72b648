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

// EGTQ compressed-model files. Layout per layer: name, pattern and storage
// tags, shape, then either the quantization tables and nibble-packed codes or
// the kept fp values, the keep bitmap for pruned layers, and optionally the
// 2-bit offset index stream when the mask is exact-N packable.

#include <cstring>

#include "egt/compress.hpp"
#include "egt/io.hpp"
#include "egt/packed.hpp"

namespace egt {

namespace {

constexpr uint32_t kCompressedVersion = 1;

bool mask_packable(const PruneMask& mask, int n) {
  if (mask.cols % 4 != 0) return false;
  for (uint32_t r = 0; r < mask.rows; ++r) {
    for (uint32_t start = 0; start < mask.cols; start += 4) {
      int kept = 0;
      for (uint32_t c = start; c < start + 4; ++c) kept += mask.at(r, c) ? 1 : 0;
      if (kept != n) return false;
    }
  }
  return true;
}

std::vector<uint16_t> index_stream(const PruneMask& mask, int n) {
  return pack(mask, Matrix::Zero(mask.rows, mask.cols), n, 4).index_words;
}

size_t mask_bytes(uint32_t rows, uint32_t cols) {
  return (static_cast<size_t>(rows) * cols + 7) / 8;
}

void write_layer(ByteWriter& w, const CompressedLayer& layer) {
  uint32_t rows = layer.mask.rows;
  uint32_t cols = layer.mask.cols;
  if (layer.mask.bits.size() != mask_bytes(rows, cols))
    throw std::invalid_argument("serialize: mask bitmap size mismatch at " +
                                layer.name);

  w.str16(layer.name);
  w.u8(static_cast<uint8_t>(layer.pattern));
  w.u8(layer.has_quant ? 1 : 0);
  w.u32(rows);
  w.u32(cols);

  if (layer.has_quant) {
    const QuantizedMatrix& q = layer.quant;
    if (q.rows != rows || q.cols != cols)
      throw std::invalid_argument("serialize: quantized shape mismatch at " +
                                  layer.name);
    for (uint32_t r = 0; r < rows; ++r) w.u32(q.group_sizes[r]);
    w.u32(static_cast<uint32_t>(q.scales.size()));
    for (float s : q.scales) w.f32(s);
    for (uint8_t zp : q.zero_points) w.u8(zp);
    w.u64(q.codes.size());
    for (size_t i = 0; i < q.codes.size(); i += 2) {
      uint8_t b = q.codes[i] & 0xf;
      if (i + 1 < q.codes.size()) b |= static_cast<uint8_t>((q.codes[i + 1] & 0xf) << 4);
      w.u8(b);
    }
  } else {
    std::vector<float> kept;
    for (uint32_t r = 0; r < rows; ++r)
      for (uint32_t c = 0; c < cols; ++c)
        if (layer.mask.at(r, c)) kept.push_back(layer.dense_values(r, c));
    w.u64(kept.size());
    for (float v : kept) w.f32(v);
  }

  if (layer.pattern != SparsityPattern::kDense) {
    w.bytes(layer.mask.bits.data(), layer.mask.bits.size());
    if (layer.has_quant) {
      int n = pattern_keep_count(layer.pattern);
      if (mask_packable(layer.mask, n)) {
        w.u8(1);
        std::vector<uint16_t> words = index_stream(layer.mask, n);
        w.u8(static_cast<uint8_t>(n));
        w.u8(4);
        w.u32(static_cast<uint32_t>(words.size()));
        for (uint16_t word : words) w.u16(word);
      } else {
        w.u8(0);
      }
    }
  }
}

CompressedLayer read_layer(ByteReader& r) {
  CompressedLayer layer;
  layer.name = r.str16("layer name");
  uint8_t pattern = r.u8("pattern tag");
  if (pattern > 2) r.fail("bad pattern tag " + std::to_string(pattern));
  layer.pattern = static_cast<SparsityPattern>(pattern);
  uint8_t storage = r.u8("storage tag");
  if (storage > 1) r.fail("bad storage tag " + std::to_string(storage));
  layer.has_quant = storage == 1;
  uint32_t rows = r.u32("rows");
  uint32_t cols = r.u32("cols");
  if (rows == 0 || cols == 0) r.fail("empty shape for layer " + layer.name);

  std::vector<float> kept_values;  // fp storage, scattered once the mask is known
  if (layer.has_quant) {
    QuantizedMatrix& q = layer.quant;
    q.rows = rows;
    q.cols = cols;
    q.group_sizes.resize(rows);
    q.group_offsets.resize(rows + 1);
    q.group_offsets[0] = 0;
    for (uint32_t i = 0; i < rows; ++i) {
      uint32_t g = q.group_sizes[i] = r.u32("group size");
      if (g == 0) r.fail("zero group size for layer " + layer.name);
      q.group_offsets[i + 1] = q.group_offsets[i] + (cols + g - 1) / g;
    }
    uint32_t n_groups = r.u32("group count");
    if (n_groups != q.group_offsets[rows])
      r.fail("group count differs from group sizes for layer " + layer.name);
    q.scales.resize(n_groups);
    for (uint32_t i = 0; i < n_groups; ++i) q.scales[i] = r.f32("scale");
    q.zero_points.resize(n_groups);
    for (uint32_t i = 0; i < n_groups; ++i) {
      q.zero_points[i] = r.u8("zero point");
      if (q.zero_points[i] > 15) r.fail("zero point out of range");
    }
    uint64_t n_kept = r.u64("code count");
    std::string packed_codes = r.raw((n_kept + 1) / 2, "codes");
    q.codes.resize(n_kept);
    for (uint64_t i = 0; i < n_kept; ++i) {
      uint8_t b = static_cast<uint8_t>(packed_codes[i / 2]);
      q.codes[i] = (b >> ((i % 2) * 4)) & 0xf;
    }
    if (n_kept % 2 == 1 &&
        (static_cast<uint8_t>(packed_codes.back()) >> 4) != 0)
      r.fail("nonzero padding nibble in codes");
  } else {
    uint64_t n_kept = r.u64("value count");
    kept_values.resize(n_kept);
    for (uint64_t i = 0; i < n_kept; ++i) kept_values[i] = r.f32("kept value");
  }

  if (layer.pattern == SparsityPattern::kDense) {
    layer.mask = PruneMask::all_kept(rows, cols);
  } else {
    layer.mask.rows = rows;
    layer.mask.cols = cols;
    std::string bits = r.raw(mask_bytes(rows, cols), "keep bitmap");
    layer.mask.bits.assign(bits.begin(), bits.end());
    size_t total = static_cast<size_t>(rows) * cols;
    for (size_t i = total; i < layer.mask.bits.size() * 8; ++i)
      if ((layer.mask.bits[i / 8] >> (i % 8)) & 1)
        r.fail("nonzero padding bit in keep bitmap");
  }

  size_t kept_count = layer.mask.kept_count();
  if (layer.has_quant) {
    size_t expect = layer.pattern == SparsityPattern::kDense
                        ? static_cast<size_t>(rows) * cols
                        : kept_count;
    if (layer.quant.codes.size() != expect)
      r.fail("code count differs from keep bitmap for layer " + layer.name);
    if (layer.pattern != SparsityPattern::kDense)
      layer.quant.mask = layer.mask.bits;
  } else {
    if (kept_values.size() != kept_count)
      r.fail("value count differs from keep bitmap for layer " + layer.name);
    layer.dense_values = Matrix::Zero(rows, cols);
    size_t vi = 0;
    for (uint32_t rr = 0; rr < rows; ++rr)
      for (uint32_t c = 0; c < cols; ++c)
        if (layer.mask.at(rr, c)) layer.dense_values(rr, c) = kept_values[vi++];
  }

  if (layer.pattern != SparsityPattern::kDense && layer.has_quant) {
    uint8_t has_index = r.u8("index section tag");
    if (has_index > 1) r.fail("bad index section tag");
    if (has_index == 1) {
      uint8_t n = r.u8("index keep count");
      uint8_t m = r.u8("index group width");
      if (m != 4 || n != pattern_keep_count(layer.pattern))
        r.fail("index pattern differs from layer pattern");
      uint32_t n_words = r.u32("index word count");
      std::vector<uint16_t> words(n_words);
      for (uint32_t i = 0; i < n_words; ++i) words[i] = r.u16("index word");
      if (!mask_packable(layer.mask, n))
        r.fail("index section present but keep bitmap is not exact-" +
               std::to_string(n));
      if (words != index_stream(layer.mask, n))
        r.fail("index stream differs from keep bitmap for layer " + layer.name);
    }
  }
  return layer;
}

}  // namespace

std::string serialize_compressed(const CompressedModel& model) {
  ByteWriter w;
  w.bytes("EGTQ", 4);
  w.u32(kCompressedVersion);
  w.u32(static_cast<uint32_t>(model.layers.size()));
  for (const CompressedLayer& layer : model.layers) write_layer(w, layer);
  return w.data();
}

CompressedModel parse_compressed(std::string bytes, const std::string& context) {
  ByteReader r(std::move(bytes), context);
  if (r.raw(4, "magic") != "EGTQ") r.fail("bad magic (want EGTQ)");
  uint32_t version = r.u32("version");
  if (version != kCompressedVersion)
    r.fail("unsupported version " + std::to_string(version));
  uint32_t count = r.u32("layer count");
  CompressedModel model;
  model.layers.reserve(count);
  for (uint32_t i = 0; i < count; ++i) model.layers.push_back(read_layer(r));
  if (!r.at_end()) r.fail("trailing bytes after last layer");
  return model;
}

void save_compressed(const CompressedModel& model, const std::string& path) {
  write_file(path, serialize_compressed(model));
}

CompressedModel load_compressed(const std::string& path) {
  return parse_compressed(read_file(path), path);
}

}  // namespace egt
