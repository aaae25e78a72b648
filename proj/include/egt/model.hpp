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

// A deliberately small decoder-only transformer used as the compression and
// decoding substrate. Everything is deterministic given the seed, forward
// math is float32, and the forward pass accepts an arbitrary visibility mask
// so the same code serves causal decoding and tree-structured verification.

#ifndef EGT_MODEL_HPP
#define EGT_MODEL_HPP

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "egt/common.hpp"

namespace egt {

struct ModelConfig {
  uint32_t vocab_size = 64;
  uint32_t d_model = 32;
  uint32_t n_layers = 2;
  uint32_t n_heads = 4;
  uint32_t d_ff = 64;
  uint32_t max_positions = 128;
  uint64_t seed = 42;

  // Throws std::invalid_argument with a field-specific message.
  void validate() const;
};

// Per-layer weight matrices, all stored [out x in] so y = W x is the natural
// kernel orientation. The forward pass computes X * W^T.
struct LayerWeights {
  Matrix wq, wk, wv, wo;  // [d_model x d_model]
  Matrix ff1;             // [d_ff x d_model]
  Matrix ff2;             // [d_model x d_ff]
};

struct ToyTransformer {
  ModelConfig config;
  Matrix embedding;                 // [vocab x d_model]
  std::vector<LayerWeights> layers;
  Matrix head;                      // [vocab x d_model]
  Matrix positions;                 // sinusoidal table, derived from config
};

// Weights drawn uniform(-1/sqrt(d_model), +1/sqrt(d_model)) from a seeded
// generator in a fixed fill order; same (config, seed) gives identical bits.
ToyTransformer init_model(const ModelConfig& config);

// Lower-triangular visibility (row q sees keys 0..q).
Mask causal_mask(int n);

// Logits [n x vocab] for an arbitrary visibility mask and explicit position
// indices. Pure function of its arguments. A query row with no visible key
// yields zero attention output for that row; logits stay finite.
Matrix forward(const ToyTransformer& model, std::span<const int> tokens,
               const Mask& mask, std::span<const int> positions);

// Convenience: positions 0..n-1 with a causal mask.
Matrix forward_causal(const ToyTransformer& model, std::span<const int> tokens);

// Numerically stable log-softmax of one logits row.
RowVector log_softmax(const RowVector& logits);

// The GEMV-shaped weight matrices, in canonical order:
// layer.<l>.{wq,wk,wv,wo,ff1,ff2} for each layer, then "head". The embedding
// is a lookup table and is not part of this set.
std::vector<std::string> linear_layer_names(const ModelConfig& config);
const Matrix& linear_layer(const ToyTransformer& model, const std::string& name);
Matrix& linear_layer(ToyTransformer& model, const std::string& name);

struct CalibrationBatch {
  // Token id sequences; each no longer than max_positions.
  std::vector<std::vector<int>> sequences;
};

// Per linear layer: the activation statistics and gradient magnitudes that
// drive compression decisions.
struct LayerTrace {
  std::string name;
  // x_norms[j] = l2 norm over all calibration tokens of input feature j.
  Vector x_norms;
  // Mean over calibration sequences of the absolute per-sequence gradient of
  // the mean next-token cross-entropy.
  Matrix grad_abs;
};

struct ForwardTrace {
  std::vector<LayerTrace> layers;  // aligned with linear_layer_names()
  double loss = 0.0;               // mean next-token cross-entropy
};

ForwardTrace calibrate(const ToyTransformer& model, const CalibrationBatch& batch);

// Signed batch gradient (mean over sequences of per-sequence gradients), for
// gradient checking against finite differences.
struct LossGradients {
  double loss = 0.0;
  std::vector<Matrix> grads;  // aligned with linear_layer_names()
};

LossGradients loss_and_gradients(const ToyTransformer& model,
                                 const CalibrationBatch& batch);
double batch_loss(const ToyTransformer& model, const CalibrationBatch& batch);

// Binary model file ("EGTM"). Little-endian; save -> load -> save is
// byte-identical.
std::string serialize_model(const ToyTransformer& model);
ToyTransformer parse_model(std::string bytes, const std::string& context);
void save_model(const ToyTransformer& model, const std::string& path);
ToyTransformer load_model(const std::string& path);

}  // namespace egt

#endif  // EGT_MODEL_HPP
