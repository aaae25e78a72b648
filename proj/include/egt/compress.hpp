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

// Post-training compression of GEMV-shaped weight matrices: group-wise
// asymmetric 4-bit quantization with per-channel group sizes chosen from an
// activation-weighted sensitivity probe, and N:M semi-structured pruning
// driven by weight/activation/gradient importance. Matrices are [out x in];
// "channel" means output row, input features run along columns.

#ifndef EGT_COMPRESS_HPP
#define EGT_COMPRESS_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "egt/common.hpp"
#include "egt/model.hpp"

namespace egt {

inline constexpr double kScaleFloor = 1e-8;

// Row-major keep bitmap, 1 = weight retained.
struct PruneMask {
  uint32_t rows = 0;
  uint32_t cols = 0;
  std::vector<uint8_t> bits;  // bit (r*cols + c), LSB-first within each byte

  static PruneMask all_kept(uint32_t rows, uint32_t cols);
  bool at(uint32_t r, uint32_t c) const;
  void set(uint32_t r, uint32_t c, bool keep);
  size_t kept_count() const;
};

// Per-channel quantization group size; groups tile the original column
// indices [0,g), [g,2g), ... and the last group of a row may be short.
struct GroupQuantSpec {
  std::vector<uint32_t> group_sizes;
};

struct SensitivityReport {
  Eigen::VectorXd sensitivity;  // per output channel
};

// 4-bit codes for the retained positions of a matrix plus per-group scale
// and zero point. An empty mask bitmap means every position is retained.
struct QuantizedMatrix {
  uint32_t rows = 0;
  uint32_t cols = 0;
  std::vector<uint32_t> group_sizes;    // per channel
  std::vector<uint32_t> group_offsets;  // rows+1 prefix sums into scales/zero_points
  std::vector<float> scales;
  std::vector<uint8_t> zero_points;
  std::vector<uint8_t> mask;            // as PruneMask::bits; empty = all retained
  std::vector<uint8_t> codes;           // one per retained position, row-major

  bool retained(uint32_t r, uint32_t c) const;
  uint32_t group_count(uint32_t r) const;
};

// Parameters of one quantization group fitted over its retained values.
// Fitting runs in double so half-way zero points round predictably; storage
// stays f32/u8.
struct GroupParams {
  float scale = static_cast<float>(kScaleFloor);
  uint8_t zero_point = 0;
};

GroupParams fit_group(const std::vector<double>& values);
uint8_t encode_value(double value, const GroupParams& params);
float decode_value(uint8_t code, const GroupParams& params);

// Squared reconstruction error per output channel under a uniform probe
// grouping, weighted by the input activation norms:
//   sens[r] = sum_j (x_norms[j] * (w[r,j] - dequant(quant(w[r,j]))))^2
SensitivityReport channel_sensitivity(const Matrix& w, const Vector& x_norms,
                                      uint32_t probe_group);

// Top ceil(rho_q * channels) channels by sensitivity (ties to the lower
// channel index) quantize at g_fine, the rest at g_coarse.
GroupQuantSpec assign_group_sizes(const SensitivityReport& report, double rho_q,
                                  uint32_t g_fine, uint32_t g_coarse);

QuantizedMatrix quantize_matrix(const Matrix& w, const GroupQuantSpec& spec);
QuantizedMatrix quantize_matrix(const Matrix& w, const GroupQuantSpec& spec,
                                const PruneMask& mask);
// Dense reconstruction; dropped positions decode to zero.
Matrix dequantize(const QuantizedMatrix& q);

struct ImportanceMatrix {
  Matrix scores;
};

// score[i,j] = |w[i,j]| * x_norms[j] + |w[i,j]| * grad_abs[i,j]
ImportanceMatrix importance_scores(const Matrix& w, const Vector& x_norms,
                                   const Matrix& grad_abs);

// Keep the min(n, positive-score count) highest-scoring entries of every
// aligned group of m consecutive columns (ties to the lower column index).
// A short trailing group is pruned the same way.
PruneMask prune_nm(const Matrix& w, const ImportanceMatrix& scores, int n, int m);

enum class SparsityPattern : uint8_t {
  kDense = 0,
  kOneOfFour = 1,
  kTwoOfFour = 2,
};

int pattern_keep_count(SparsityPattern p);
const char* pattern_name(SparsityPattern p);

struct LayerSparsityPlan {
  std::vector<SparsityPattern> patterns;  // aligned with the layer list
};

// Layer importance = mean importance score / mean |w|. The top
// ceil(rho_s * layers) layers (ties to the earlier layer) keep 2:4, the rest
// 1:4.
LayerSparsityPlan plan_sparsity(const std::vector<ImportanceMatrix>& scores,
                                const std::vector<const Matrix*>& weights,
                                double rho_s);

enum class CompressMode {
  kFull,        // prune then quantize
  kQuantOnly,   // all-keep masks
  kSparseOnly,  // no codes, masked fp values retained
};

struct CompressedLayer {
  std::string name;
  SparsityPattern pattern = SparsityPattern::kDense;
  PruneMask mask;
  bool has_quant = true;
  QuantizedMatrix quant;  // when has_quant
  Matrix dense_values;    // when !has_quant; zeros at dropped positions
};

struct CompressedModel {
  std::vector<CompressedLayer> layers;  // aligned with linear_layer_names()
};

// Calibrate, score, plan sparsity, prune, then quantize the retained weights
// with group boundaries still tied to original column indices.
CompressedModel compress_model(const ToyTransformer& model,
                               const CalibrationBatch& batch, double rho_q,
                               double rho_s, uint32_t g_fine, uint32_t g_coarse,
                               CompressMode mode = CompressMode::kFull);

// Dense weights a compressed layer stands for (dequantized or masked fp).
Matrix reconstruct_layer(const CompressedLayer& layer);

// Replace every linear layer of `base` with its compressed reconstruction.
ToyTransformer materialize_model(const ToyTransformer& base,
                                 const CompressedModel& compressed);

// Binary compressed-model file ("EGTQ"); little-endian, byte-stable.
std::string serialize_compressed(const CompressedModel& model);
CompressedModel parse_compressed(std::string bytes, const std::string& context);
void save_compressed(const CompressedModel& model, const std::string& path);
CompressedModel load_compressed(const std::string& path);

}  // namespace egt

#endif  // EGT_COMPRESS_HPP
