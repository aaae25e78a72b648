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

// Storage and matrix-vector kernel for N:M semi-structured sparse matrices.
// Because every aligned group of M columns keeps exactly N entries, the usual
// CSR row-pointer and 16-bit column-index arrays collapse to a stream of
// 2-bit in-group offsets packed into 16-bit words.

#ifndef EGT_PACKED_HPP
#define EGT_PACKED_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "egt/common.hpp"
#include "egt/compress.hpp"

namespace egt {

enum class PackedValueKind : uint8_t {
  kFloat32 = 0,  // raw f32 values per kept position
  kInt4 = 1,     // 4-bit codes plus per-group scale/zero-point tables
};

struct PackedSparseMatrix {
  uint8_t n = 2;
  uint8_t m = 4;
  uint32_t rows = 0;
  uint32_t cols = 0;
  PackedValueKind kind = PackedValueKind::kInt4;

  // 2-bit in-group offsets, eight per word; offset i of a word occupies bits
  // [15 - 2i, 14 - 2i]. Row pointers are implicit: nnz per row = cols * n / m.
  std::vector<uint16_t> index_words;

  // kInt4 payload: codes two per byte (low nibble first) plus quantization
  // group metadata keyed by original column indices.
  std::vector<uint8_t> value_bytes;
  std::vector<uint32_t> group_sizes;    // per row
  std::vector<uint32_t> group_offsets;  // rows+1 prefix sums
  std::vector<float> scales;
  std::vector<uint8_t> zero_points;

  // kFloat32 payload.
  std::vector<float> values;

  size_t nnz() const {
    return static_cast<size_t>(rows) * cols * n / m;
  }
  size_t row_nnz() const { return static_cast<size_t>(cols) * n / m; }
  // In-group offset of the k-th nonzero (stream order).
  uint32_t offset_at(size_t k) const {
    return (index_words[k / 8] >> (14 - 2 * (k % 8))) & 0x3u;
  }
};

// Requires cols divisible by m and exactly n kept entries in every aligned
// group; the quantized variant additionally requires codes for exactly the
// mask's kept positions. A dense pattern (n == m) is rejected.
PackedSparseMatrix pack(const PruneMask& mask, const QuantizedMatrix& quant,
                        int n, int m);
PackedSparseMatrix pack(const PruneMask& mask, const Matrix& values, int n, int m);

struct UnpackResult {
  Matrix values;   // dense; dequantized for kInt4, zeros at dropped positions
  PruneMask mask;  // recovered keep bitmap
};

UnpackResult unpack(const PackedSparseMatrix& packed);

// y = W x accumulated left to right in f32 per row, dequantizing on the fly
// for kInt4. x length must equal cols.
Vector spmv(const PackedSparseMatrix& packed, const Vector& x);

struct FootprintReport {
  size_t index_bytes = 0;
  size_t value_bytes = 0;
  size_t scale_bytes = 0;  // scale + zero-point tables (kInt4 only)
  size_t packed_bytes = 0;
  // Plain CSR of the same nonzeros: 2-byte column indices, 2-byte values,
  // 4-byte row pointers (rows + 1 of them).
  size_t baseline_bytes = 0;
  double ratio = 0.0;  // packed / baseline
};

FootprintReport footprint(const PackedSparseMatrix& packed);

struct BenchShape {
  uint32_t rows = 0;
  uint32_t cols = 0;
};

struct BenchRow {
  std::string variant;  // dense-fp | quant-dense | packed-2:4 | packed-1:4
  uint32_t rows = 0;
  uint32_t cols = 0;
  std::string pattern;
  uint64_t median_ns = 0;
  uint64_t p95_ns = 0;
  uint64_t bytes = 0;  // weight-side bytes touched per product, analytic
};

// Matrix-vector product micro-benchmark over random seeded matrices. The
// bytes column is computed from the storage formats and is deterministic for
// a fixed seed; the timing columns are wall-clock measurements.
std::vector<BenchRow> bench_spmv(const std::vector<BenchShape>& shapes, int reps,
                                 uint64_t seed);

std::string bench_csv(const std::vector<BenchRow>& rows);

}  // namespace egt

#endif  // EGT_PACKED_HPP
