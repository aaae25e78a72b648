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

#include "egt/compress.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace egt {

namespace {

void check_rho(double rho, const char* name) {
  if (!(rho >= 0.0 && rho <= 1.0))
    throw std::invalid_argument(std::string(name) + " must be in [0, 1]");
}

size_t bitmap_bytes(uint32_t rows, uint32_t cols) {
  return (static_cast<size_t>(rows) * cols + 7) / 8;
}

}  // namespace

PruneMask PruneMask::all_kept(uint32_t rows, uint32_t cols) {
  PruneMask m;
  m.rows = rows;
  m.cols = cols;
  m.bits.assign(bitmap_bytes(rows, cols), 0xff);
  // Clear the padding bits of the final byte.
  size_t total = static_cast<size_t>(rows) * cols;
  for (size_t i = total; i < m.bits.size() * 8; ++i)
    m.bits[i / 8] &= static_cast<uint8_t>(~(1u << (i % 8)));
  return m;
}

bool PruneMask::at(uint32_t r, uint32_t c) const {
  size_t i = static_cast<size_t>(r) * cols + c;
  return (bits[i / 8] >> (i % 8)) & 1;
}

void PruneMask::set(uint32_t r, uint32_t c, bool keep) {
  size_t i = static_cast<size_t>(r) * cols + c;
  if (keep)
    bits[i / 8] |= static_cast<uint8_t>(1u << (i % 8));
  else
    bits[i / 8] &= static_cast<uint8_t>(~(1u << (i % 8)));
}

size_t PruneMask::kept_count() const {
  size_t n = 0;
  for (uint8_t b : bits) n += static_cast<size_t>(__builtin_popcount(b));
  return n;
}

bool QuantizedMatrix::retained(uint32_t r, uint32_t c) const {
  if (mask.empty()) return true;
  size_t i = static_cast<size_t>(r) * cols + c;
  return (mask[i / 8] >> (i % 8)) & 1;
}

uint32_t QuantizedMatrix::group_count(uint32_t r) const {
  return group_offsets[r + 1] - group_offsets[r];
}

GroupParams fit_group(const std::vector<double>& values) {
  GroupParams p;
  if (values.empty()) return p;  // scale floor, zero point 0
  double mn = values[0], mx = values[0];
  for (double v : values) {
    mn = std::min(mn, v);
    mx = std::max(mx, v);
  }
  double scale = std::max(kScaleFloor, (mx - mn) / 15.0);
  double zp = std::clamp(std::round(-mn / scale), 0.0, 15.0);
  p.scale = static_cast<float>(scale);
  p.zero_point = static_cast<uint8_t>(zp);
  return p;
}

uint8_t encode_value(double value, const GroupParams& params) {
  double code = std::round(value / static_cast<double>(params.scale)) +
                static_cast<double>(params.zero_point);
  return static_cast<uint8_t>(std::clamp(code, 0.0, 15.0));
}

float decode_value(uint8_t code, const GroupParams& params) {
  return (static_cast<float>(code) - static_cast<float>(params.zero_point)) *
         params.scale;
}

SensitivityReport channel_sensitivity(const Matrix& w, const Vector& x_norms,
                                      uint32_t probe_group) {
  if (probe_group == 0)
    throw std::invalid_argument("channel_sensitivity: probe group must be positive");
  if (x_norms.size() != w.cols())
    throw std::invalid_argument(
        "channel_sensitivity: x_norms length differs from input width");

  SensitivityReport report;
  report.sensitivity.setZero(w.rows());
  const uint32_t cols = static_cast<uint32_t>(w.cols());
  std::vector<double> group;
  for (uint32_t r = 0; r < static_cast<uint32_t>(w.rows()); ++r) {
    double acc = 0.0;
    for (uint32_t start = 0; start < cols; start += probe_group) {
      uint32_t end = std::min(start + probe_group, cols);
      group.clear();
      for (uint32_t c = start; c < end; ++c) group.push_back(w(r, c));
      GroupParams p = fit_group(group);
      for (uint32_t c = start; c < end; ++c) {
        double dq = decode_value(encode_value(w(r, c), p), p);
        double err = static_cast<double>(x_norms(c)) * (w(r, c) - dq);
        acc += err * err;
      }
    }
    report.sensitivity(r) = acc;
  }
  return report;
}

GroupQuantSpec assign_group_sizes(const SensitivityReport& report, double rho_q,
                                  uint32_t g_fine, uint32_t g_coarse) {
  check_rho(rho_q, "rho_q");
  if (g_fine == 0 || g_coarse == 0)
    throw std::invalid_argument("group sizes must be positive");

  const auto channels = static_cast<size_t>(report.sensitivity.size());
  std::vector<size_t> order(channels);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return report.sensitivity(a) > report.sensitivity(b);
  });

  const auto n_fine = static_cast<size_t>(
      std::ceil(rho_q * static_cast<double>(channels)));
  GroupQuantSpec spec;
  spec.group_sizes.assign(channels, g_coarse);
  for (size_t i = 0; i < n_fine && i < channels; ++i)
    spec.group_sizes[order[i]] = g_fine;
  return spec;
}

namespace {

QuantizedMatrix quantize_impl(const Matrix& w, const GroupQuantSpec& spec,
                              const PruneMask* mask) {
  const auto rows = static_cast<uint32_t>(w.rows());
  const auto cols = static_cast<uint32_t>(w.cols());
  if (spec.group_sizes.size() != rows)
    throw std::invalid_argument("quantize: group spec length differs from rows");
  if (mask && (mask->rows != rows || mask->cols != cols))
    throw std::invalid_argument("quantize: mask shape differs from matrix");

  QuantizedMatrix q;
  q.rows = rows;
  q.cols = cols;
  q.group_sizes = spec.group_sizes;
  q.group_offsets.resize(rows + 1);
  q.group_offsets[0] = 0;
  for (uint32_t r = 0; r < rows; ++r) {
    uint32_t g = spec.group_sizes[r];
    if (g == 0) throw std::invalid_argument("quantize: zero group size");
    q.group_offsets[r + 1] = q.group_offsets[r] + (cols + g - 1) / g;
  }
  q.scales.resize(q.group_offsets[rows]);
  q.zero_points.resize(q.group_offsets[rows]);
  if (mask) q.mask = mask->bits;

  std::vector<double> group;
  for (uint32_t r = 0; r < rows; ++r) {
    const uint32_t gsize = spec.group_sizes[r];
    for (uint32_t start = 0, gi = 0; start < cols; start += gsize, ++gi) {
      uint32_t end = std::min(start + gsize, cols);
      group.clear();
      for (uint32_t c = start; c < end; ++c)
        if (!mask || mask->at(r, c)) group.push_back(w(r, c));
      GroupParams p = fit_group(group);
      q.scales[q.group_offsets[r] + gi] = p.scale;
      q.zero_points[q.group_offsets[r] + gi] = p.zero_point;
      for (uint32_t c = start; c < end; ++c)
        if (!mask || mask->at(r, c)) q.codes.push_back(encode_value(w(r, c), p));
    }
  }
  return q;
}

}  // namespace

QuantizedMatrix quantize_matrix(const Matrix& w, const GroupQuantSpec& spec) {
  return quantize_impl(w, spec, nullptr);
}

QuantizedMatrix quantize_matrix(const Matrix& w, const GroupQuantSpec& spec,
                                const PruneMask& mask) {
  return quantize_impl(w, spec, &mask);
}

Matrix dequantize(const QuantizedMatrix& q) {
  Matrix out = Matrix::Zero(q.rows, q.cols);
  size_t code_i = 0;
  for (uint32_t r = 0; r < q.rows; ++r) {
    const uint32_t gsize = q.group_sizes[r];
    for (uint32_t c = 0; c < q.cols; ++c) {
      if (!q.retained(r, c)) continue;
      uint32_t gi = c / gsize;
      GroupParams p{q.scales[q.group_offsets[r] + gi],
                    q.zero_points[q.group_offsets[r] + gi]};
      if (code_i >= q.codes.size())
        throw InvariantError("dequantize: fewer codes than retained positions");
      out(r, c) = decode_value(q.codes[code_i++], p);
    }
  }
  if (code_i != q.codes.size())
    throw InvariantError("dequantize: more codes than retained positions");
  return out;
}

ImportanceMatrix importance_scores(const Matrix& w, const Vector& x_norms,
                                   const Matrix& grad_abs) {
  if (x_norms.size() != w.cols())
    throw std::invalid_argument("importance: x_norms length differs from input width");
  if (grad_abs.rows() != w.rows() || grad_abs.cols() != w.cols())
    throw std::invalid_argument("importance: gradient shape differs from weights");

  ImportanceMatrix im;
  im.scores.resize(w.rows(), w.cols());
  for (Eigen::Index r = 0; r < w.rows(); ++r)
    for (Eigen::Index c = 0; c < w.cols(); ++c)
      im.scores(r, c) = std::abs(w(r, c)) * x_norms(c) +
                        std::abs(w(r, c)) * grad_abs(r, c);
  return im;
}

PruneMask prune_nm(const Matrix& w, const ImportanceMatrix& scores, int n, int m) {
  if (m != 4) throw std::invalid_argument("prune_nm: group width must be 4");
  if (n < 1 || n >= m)
    throw std::invalid_argument("prune_nm: keep count must be in [1, group width)");
  if (scores.scores.rows() != w.rows() || scores.scores.cols() != w.cols())
    throw std::invalid_argument("prune_nm: score shape differs from weights");

  const auto rows = static_cast<uint32_t>(w.rows());
  const auto cols = static_cast<uint32_t>(w.cols());
  PruneMask mask;
  mask.rows = rows;
  mask.cols = cols;
  mask.bits.assign(bitmap_bytes(rows, cols), 0);

  std::vector<std::pair<float, uint32_t>> entries;  // (-score used via comparator)
  for (uint32_t r = 0; r < rows; ++r) {
    for (uint32_t start = 0; start < cols; start += m) {
      uint32_t end = std::min<uint32_t>(start + m, cols);
      entries.clear();
      for (uint32_t c = start; c < end; ++c) {
        float s = scores.scores(r, c);
        if (s > 0.0f) entries.emplace_back(s, c);
      }
      std::sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first > b.first;
        return a.second < b.second;
      });
      size_t keep = std::min<size_t>(n, entries.size());
      for (size_t i = 0; i < keep; ++i) mask.set(r, entries[i].second, true);
    }
  }
  return mask;
}

int pattern_keep_count(SparsityPattern p) {
  switch (p) {
    case SparsityPattern::kDense: return 4;
    case SparsityPattern::kOneOfFour: return 1;
    case SparsityPattern::kTwoOfFour: return 2;
  }
  throw InvariantError("unknown sparsity pattern");
}

const char* pattern_name(SparsityPattern p) {
  switch (p) {
    case SparsityPattern::kDense: return "dense";
    case SparsityPattern::kOneOfFour: return "1:4";
    case SparsityPattern::kTwoOfFour: return "2:4";
  }
  throw InvariantError("unknown sparsity pattern");
}

LayerSparsityPlan plan_sparsity(const std::vector<ImportanceMatrix>& scores,
                                const std::vector<const Matrix*>& weights,
                                double rho_s) {
  check_rho(rho_s, "rho_s");
  if (scores.size() != weights.size())
    throw std::invalid_argument("plan_sparsity: score and weight lists differ");

  const size_t layers = scores.size();
  std::vector<double> importance(layers, 0.0);
  for (size_t i = 0; i < layers; ++i) {
    double mean_score = scores[i].scores.cast<double>().mean();
    double mean_abs = weights[i]->cast<double>().cwiseAbs().mean();
    importance[i] = mean_abs > 0.0 ? mean_score / mean_abs : 0.0;
  }

  std::vector<size_t> order(layers);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) {
    return importance[a] > importance[b];
  });

  const auto n_critical =
      static_cast<size_t>(std::ceil(rho_s * static_cast<double>(layers)));
  LayerSparsityPlan plan;
  plan.patterns.assign(layers, SparsityPattern::kOneOfFour);
  for (size_t i = 0; i < n_critical && i < layers; ++i)
    plan.patterns[order[i]] = SparsityPattern::kTwoOfFour;
  return plan;
}

CompressedModel compress_model(const ToyTransformer& model,
                               const CalibrationBatch& batch, double rho_q,
                               double rho_s, uint32_t g_fine, uint32_t g_coarse,
                               CompressMode mode) {
  check_rho(rho_q, "rho_q");
  check_rho(rho_s, "rho_s");
  if (g_fine == 0 || g_coarse == 0)
    throw std::invalid_argument("group sizes must be positive");

  ForwardTrace trace = calibrate(model, batch);
  const auto names = linear_layer_names(model.config);

  std::vector<const Matrix*> weights;
  std::vector<ImportanceMatrix> importances;
  weights.reserve(names.size());
  importances.reserve(names.size());
  for (size_t i = 0; i < names.size(); ++i) {
    const Matrix& w = linear_layer(model, names[i]);
    weights.push_back(&w);
    importances.push_back(
        importance_scores(w, trace.layers[i].x_norms, trace.layers[i].grad_abs));
  }

  LayerSparsityPlan plan;
  if (mode == CompressMode::kQuantOnly) {
    plan.patterns.assign(names.size(), SparsityPattern::kDense);
  } else {
    plan = plan_sparsity(importances, weights, rho_s);
  }

  CompressedModel out;
  out.layers.resize(names.size());
  for (size_t i = 0; i < names.size(); ++i) {
    const Matrix& w = *weights[i];
    CompressedLayer& layer = out.layers[i];
    layer.name = names[i];
    layer.pattern = plan.patterns[i];

    if (layer.pattern == SparsityPattern::kDense) {
      layer.mask = PruneMask::all_kept(static_cast<uint32_t>(w.rows()),
                                       static_cast<uint32_t>(w.cols()));
    } else {
      layer.mask = prune_nm(w, importances[i], pattern_keep_count(layer.pattern), 4);
    }

    if (mode == CompressMode::kSparseOnly) {
      layer.has_quant = false;
      layer.dense_values = Matrix::Zero(w.rows(), w.cols());
      for (uint32_t r = 0; r < layer.mask.rows; ++r)
        for (uint32_t c = 0; c < layer.mask.cols; ++c)
          if (layer.mask.at(r, c)) layer.dense_values(r, c) = w(r, c);
    } else {
      layer.has_quant = true;
      SensitivityReport sens =
          channel_sensitivity(w, trace.layers[i].x_norms, g_coarse);
      GroupQuantSpec spec = assign_group_sizes(sens, rho_q, g_fine, g_coarse);
      layer.quant = quantize_matrix(w, spec, layer.mask);
    }
  }
  return out;
}

Matrix reconstruct_layer(const CompressedLayer& layer) {
  if (layer.has_quant) return dequantize(layer.quant);
  return layer.dense_values;
}

ToyTransformer materialize_model(const ToyTransformer& base,
                                 const CompressedModel& compressed) {
  const auto names = linear_layer_names(base.config);
  if (compressed.layers.size() != names.size())
    throw std::invalid_argument(
        "materialize: compressed layer count differs from model");

  ToyTransformer out = base;
  for (size_t i = 0; i < names.size(); ++i) {
    const CompressedLayer& layer = compressed.layers[i];
    if (layer.name != names[i])
      throw std::invalid_argument("materialize: layer name mismatch at " + names[i]);
    Matrix w = reconstruct_layer(layer);
    Matrix& target = linear_layer(out, names[i]);
    if (w.rows() != target.rows() || w.cols() != target.cols())
      throw std::invalid_argument("materialize: layer shape mismatch at " + names[i]);
    target = std::move(w);
  }
  return out;
}

}  // namespace egt
