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

#include "egt/packed.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <random>
#include <sstream>

namespace egt {

namespace {

void check_pattern(int n, int m) {
  if (m != 4) throw std::invalid_argument("pack: group width must be 4");
  if (n == m) throw std::invalid_argument("pack: dense pattern unsupported");
  if (n < 1 || n > m)
    throw std::invalid_argument("pack: keep count must be in [1, group width)");
}

void check_mask_shape(const PruneMask& mask, int n, int m) {
  if (mask.cols % m != 0)
    throw std::invalid_argument("pack: columns must be a multiple of the group width");
  for (uint32_t r = 0; r < mask.rows; ++r) {
    for (uint32_t start = 0; start < mask.cols; start += m) {
      int kept = 0;
      for (uint32_t c = start; c < start + m; ++c) kept += mask.at(r, c) ? 1 : 0;
      if (kept != n) {
        std::ostringstream os;
        os << "pack: group at row " << r << ", column " << start << " keeps "
           << kept << " entries (want " << n << ")";
        throw std::invalid_argument(os.str());
      }
    }
  }
}

class IndexStreamWriter {
 public:
  void push(uint32_t offset) {
    word_ |= static_cast<uint16_t>(offset << (14 - 2 * slot_));
    if (++slot_ == 8) flush();
  }
  std::vector<uint16_t> finish() {
    if (slot_ > 0) flush();
    return std::move(words_);
  }

 private:
  void flush() {
    words_.push_back(word_);
    word_ = 0;
    slot_ = 0;
  }
  std::vector<uint16_t> words_;
  uint16_t word_ = 0;
  int slot_ = 0;
};

PackedSparseMatrix pack_common(const PruneMask& mask, int n, int m) {
  check_pattern(n, m);
  check_mask_shape(mask, n, m);
  PackedSparseMatrix p;
  p.n = static_cast<uint8_t>(n);
  p.m = static_cast<uint8_t>(m);
  p.rows = mask.rows;
  p.cols = mask.cols;

  IndexStreamWriter writer;
  for (uint32_t r = 0; r < mask.rows; ++r)
    for (uint32_t c = 0; c < mask.cols; ++c)
      if (mask.at(r, c)) writer.push(c % m);
  p.index_words = writer.finish();
  return p;
}

}  // namespace

PackedSparseMatrix pack(const PruneMask& mask, const QuantizedMatrix& quant,
                        int n, int m) {
  if (quant.rows != mask.rows || quant.cols != mask.cols)
    throw std::invalid_argument("pack: quantized shape differs from mask");
  const bool dense_codes = quant.mask.empty();
  if (!dense_codes && quant.mask != mask.bits)
    throw std::invalid_argument("pack: quantized mask differs from prune mask");

  PackedSparseMatrix p = pack_common(mask, n, m);
  p.kind = PackedValueKind::kInt4;
  p.group_sizes = quant.group_sizes;
  p.group_offsets = quant.group_offsets;
  p.scales = quant.scales;
  p.zero_points = quant.zero_points;

  size_t emitted = 0;
  size_t code_i = 0;  // walks quant.codes when codes cover kept positions only
  for (uint32_t r = 0; r < mask.rows; ++r) {
    for (uint32_t c = 0; c < mask.cols; ++c) {
      uint8_t code = 0;
      if (dense_codes) {
        code = quant.codes.at(static_cast<size_t>(r) * mask.cols + c);
        if (!mask.at(r, c)) continue;
      } else {
        if (!mask.at(r, c)) continue;
        code = quant.codes.at(code_i++);
      }
      if (emitted % 2 == 0)
        p.value_bytes.push_back(code);
      else
        p.value_bytes.back() |= static_cast<uint8_t>(code << 4);
      ++emitted;
    }
  }
  if (emitted != p.nnz()) throw InvariantError("pack: nonzero count mismatch");
  return p;
}

PackedSparseMatrix pack(const PruneMask& mask, const Matrix& values, int n, int m) {
  if (values.rows() != mask.rows || values.cols() != mask.cols)
    throw std::invalid_argument("pack: value shape differs from mask");

  PackedSparseMatrix p = pack_common(mask, n, m);
  p.kind = PackedValueKind::kFloat32;
  p.values.reserve(p.nnz());
  for (uint32_t r = 0; r < mask.rows; ++r)
    for (uint32_t c = 0; c < mask.cols; ++c)
      if (mask.at(r, c)) p.values.push_back(values(r, c));
  return p;
}

namespace {

void check_packed(const PackedSparseMatrix& p) {
  if (p.m != 4) throw FormatError("packed matrix: group width must be 4");
  if (p.n < 1 || p.n >= p.m)
    throw FormatError("packed matrix: bad keep count");
  if (p.cols % p.m != 0)
    throw FormatError("packed matrix: columns not a multiple of the group width");
  const size_t nnz = p.nnz();
  if (p.index_words.size() != (nnz + 7) / 8)
    throw FormatError("packed matrix: index word count mismatch");
  if (p.kind == PackedValueKind::kInt4) {
    if (p.value_bytes.size() != (nnz + 1) / 2)
      throw FormatError("packed matrix: value byte count mismatch");
    if (p.group_sizes.size() != p.rows || p.group_offsets.size() != p.rows + 1)
      throw FormatError("packed matrix: group table size mismatch");
    if (p.scales.size() != p.group_offsets[p.rows] ||
        p.zero_points.size() != p.scales.size())
      throw FormatError("packed matrix: scale table size mismatch");
  } else {
    if (p.values.size() != nnz)
      throw FormatError("packed matrix: value count mismatch");
  }
}

// Walks every nonzero as (row, col, stream index), validating offsets.
template <typename Fn>
void for_each_nonzero(const PackedSparseMatrix& p, Fn&& fn) {
  const size_t row_nnz = p.row_nnz();
  size_t k = 0;
  for (uint32_t r = 0; r < p.rows; ++r) {
    uint32_t prev_off = 0;
    for (size_t j = 0; j < row_nnz; ++j, ++k) {
      uint32_t off = p.offset_at(k);
      if (j % p.n != 0 && off <= prev_off)
        throw FormatError("packed matrix: in-group offsets not increasing");
      prev_off = off;
      uint32_t col = static_cast<uint32_t>(j / p.n) * p.m + off;
      fn(r, col, k);
    }
  }
}

float packed_value(const PackedSparseMatrix& p, uint32_t r, uint32_t col, size_t k) {
  if (p.kind == PackedValueKind::kFloat32) return p.values[k];
  uint8_t code = (p.value_bytes[k / 2] >> ((k % 2) * 4)) & 0xf;
  uint32_t gi = col / p.group_sizes[r];
  GroupParams params{p.scales[p.group_offsets[r] + gi],
                     p.zero_points[p.group_offsets[r] + gi]};
  return decode_value(code, params);
}

}  // namespace

UnpackResult unpack(const PackedSparseMatrix& packed) {
  check_packed(packed);
  UnpackResult out;
  out.values = Matrix::Zero(packed.rows, packed.cols);
  out.mask.rows = packed.rows;
  out.mask.cols = packed.cols;
  out.mask.bits.assign((static_cast<size_t>(packed.rows) * packed.cols + 7) / 8, 0);
  for_each_nonzero(packed, [&](uint32_t r, uint32_t col, size_t k) {
    out.mask.set(r, col, true);
    out.values(r, col) = packed_value(packed, r, col, k);
  });
  return out;
}

Vector spmv(const PackedSparseMatrix& packed, const Vector& x) {
  check_packed(packed);
  if (x.size() != static_cast<Eigen::Index>(packed.cols))
    throw std::invalid_argument("spmv: input length differs from columns");
  Vector y = Vector::Zero(packed.rows);
  for_each_nonzero(packed, [&](uint32_t r, uint32_t col, size_t k) {
    y(r) += packed_value(packed, r, col, k) * x(col);
  });
  return y;
}

FootprintReport footprint(const PackedSparseMatrix& packed) {
  if (packed.n == packed.m)
    throw std::invalid_argument("footprint: dense pattern unsupported");
  check_packed(packed);
  FootprintReport rep;
  rep.index_bytes = packed.index_words.size() * 2;
  if (packed.kind == PackedValueKind::kInt4) {
    rep.value_bytes = packed.value_bytes.size();
    rep.scale_bytes = packed.scales.size() * 4 + packed.zero_points.size();
  } else {
    rep.value_bytes = packed.values.size() * 4;
  }
  rep.packed_bytes = rep.index_bytes + rep.value_bytes + rep.scale_bytes;
  rep.baseline_bytes =
      packed.nnz() * 4 + (static_cast<size_t>(packed.rows) + 1) * 4;
  rep.ratio = static_cast<double>(rep.packed_bytes) /
              static_cast<double>(rep.baseline_bytes);
  return rep;
}

namespace {

// Exactly-n keep mask by magnitude, used for benchmark inputs.
PruneMask magnitude_mask(const Matrix& w, int n, int m) {
  PruneMask mask;
  mask.rows = static_cast<uint32_t>(w.rows());
  mask.cols = static_cast<uint32_t>(w.cols());
  mask.bits.assign((static_cast<size_t>(mask.rows) * mask.cols + 7) / 8, 0);
  std::vector<std::pair<float, uint32_t>> entries;
  for (uint32_t r = 0; r < mask.rows; ++r) {
    for (uint32_t start = 0; start < mask.cols; start += m) {
      entries.clear();
      for (uint32_t c = start; c < start + m; ++c)
        entries.emplace_back(std::abs(w(r, c)), c);
      std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
      });
      for (int i = 0; i < n; ++i) mask.set(r, entries[i].second, true);
    }
  }
  return mask;
}

Vector quant_dense_gemv(const QuantizedMatrix& q, const Vector& x) {
  Vector y = Vector::Zero(q.rows);
  size_t k = 0;
  for (uint32_t r = 0; r < q.rows; ++r) {
    const uint32_t gsize = q.group_sizes[r];
    float acc = 0.0f;
    for (uint32_t c = 0; c < q.cols; ++c) {
      uint32_t gi = c / gsize;
      GroupParams params{q.scales[q.group_offsets[r] + gi],
                         q.zero_points[q.group_offsets[r] + gi]};
      acc += decode_value(q.codes[k++], params) * x(c);
    }
    y(r) = acc;
  }
  return y;
}

struct TimingStats {
  uint64_t median_ns = 0;
  uint64_t p95_ns = 0;
};

template <typename Fn>
TimingStats time_reps(int reps, Fn&& fn) {
  fn();  // warmup
  std::vector<uint64_t> samples(reps);
  for (int i = 0; i < reps; ++i) {
    auto t0 = std::chrono::steady_clock::now();
    fn();
    auto t1 = std::chrono::steady_clock::now();
    samples[i] = static_cast<uint64_t>(
        std::chrono::duration_cast<std::chrono::nanoseconds>(t1 - t0).count());
  }
  std::sort(samples.begin(), samples.end());
  TimingStats stats;
  stats.median_ns = samples[samples.size() / 2];
  stats.p95_ns = samples[std::min(samples.size() - 1, samples.size() * 95 / 100)];
  return stats;
}

volatile float g_bench_sink = 0.0f;

}  // namespace

std::vector<BenchRow> bench_spmv(const std::vector<BenchShape>& shapes, int reps,
                                 uint64_t seed) {
  if (reps < 1) throw std::invalid_argument("bench: repetitions must be positive");
  std::vector<BenchRow> out;
  for (size_t si = 0; si < shapes.size(); ++si) {
    const BenchShape& shape = shapes[si];
    if (shape.rows == 0 || shape.cols == 0)
      throw std::invalid_argument("bench: shape dimensions must be positive");
    if (shape.cols % 4 != 0)
      throw std::invalid_argument("bench: columns must be a multiple of 4");

    std::mt19937_64 rng(seed + 0x9e3779b97f4a7c15ull * (si + 1));
    std::uniform_real_distribution<float> dist(-1.0f, 1.0f);
    Matrix w(shape.rows, shape.cols);
    for (Eigen::Index r = 0; r < w.rows(); ++r)
      for (Eigen::Index c = 0; c < w.cols(); ++c) w(r, c) = dist(rng);
    Vector x(shape.cols);
    for (Eigen::Index i = 0; i < x.size(); ++i) x(i) = dist(rng);

    GroupQuantSpec spec;
    spec.group_sizes.assign(shape.rows, std::min<uint32_t>(64, shape.cols));

    {
      BenchRow row{"dense-fp", shape.rows, shape.cols, "dense", 0, 0,
                   static_cast<uint64_t>(shape.rows) * shape.cols * 4};
      Vector y(shape.rows);
      TimingStats t = time_reps(reps, [&] {
        y.noalias() = w * x;
        g_bench_sink = y(0);
      });
      row.median_ns = t.median_ns;
      row.p95_ns = t.p95_ns;
      out.push_back(row);
    }

    {
      QuantizedMatrix q = quantize_matrix(w, spec);
      BenchRow row{"quant-dense", shape.rows, shape.cols, "dense", 0, 0,
                   (static_cast<uint64_t>(shape.rows) * shape.cols + 1) / 2 +
                       q.scales.size() * 4 + q.zero_points.size()};
      TimingStats t = time_reps(reps, [&] {
        Vector y = quant_dense_gemv(q, x);
        g_bench_sink = y(0);
      });
      row.median_ns = t.median_ns;
      row.p95_ns = t.p95_ns;
      out.push_back(row);
    }

    for (int n : {2, 1}) {
      PruneMask mask = magnitude_mask(w, n, 4);
      QuantizedMatrix q = quantize_matrix(w, spec, mask);
      PackedSparseMatrix packed = pack(mask, q, n, 4);
      BenchRow row{std::string("packed-") + pattern_name(n == 2
                                                             ? SparsityPattern::kTwoOfFour
                                                             : SparsityPattern::kOneOfFour),
                   shape.rows,
                   shape.cols,
                   pattern_name(n == 2 ? SparsityPattern::kTwoOfFour
                                       : SparsityPattern::kOneOfFour),
                   0,
                   0,
                   footprint(packed).packed_bytes};
      TimingStats t = time_reps(reps, [&] {
        Vector y = spmv(packed, x);
        g_bench_sink = y(0);
      });
      row.median_ns = t.median_ns;
      row.p95_ns = t.p95_ns;
      out.push_back(row);
    }
  }
  return out;
}

std::string bench_csv(const std::vector<BenchRow>& rows) {
  std::ostringstream os;
  os << "variant,rows,cols,pattern,median_ns,p95_ns,bytes\n";
  for (const BenchRow& r : rows) {
    os << r.variant << ',' << r.rows << ',' << r.cols << ',' << r.pattern << ','
       << r.median_ns << ',' << r.p95_ns << ',' << r.bytes << '\n';
  }
  return os.str();
}

}  // namespace egt
