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

#include "egt/model.hpp"

#include <cmath>
#include <random>
#include <sstream>

#include "egt/io.hpp"

namespace egt {

namespace {

constexpr float kNormEps = 1e-6f;

void check_positive(uint32_t v, const char* field) {
  if (v == 0) {
    std::ostringstream os;
    os << "model config: " << field << " must be positive";
    throw std::invalid_argument(os.str());
  }
}

void fill_uniform(Matrix& m, std::mt19937_64& rng, float bound) {
  std::uniform_real_distribution<float> dist(-bound, bound);
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = dist(rng);
  }
}

Matrix sinusoidal_positions(uint32_t max_positions, uint32_t d_model) {
  Matrix p(max_positions, d_model);
  for (uint32_t pos = 0; pos < max_positions; ++pos) {
    for (uint32_t i = 0; i < d_model; ++i) {
      double expo = static_cast<double>(2 * (i / 2)) / static_cast<double>(d_model);
      double angle = static_cast<double>(pos) / std::pow(10000.0, expo);
      p(pos, i) = static_cast<float>(i % 2 == 0 ? std::sin(angle) : std::cos(angle));
    }
  }
  return p;
}

// Row-wise x / rms(x). inv_out receives 1/rms per row for the backward pass.
Matrix rmsnorm(const Matrix& x, Vector* inv_out) {
  Matrix y(x.rows(), x.cols());
  if (inv_out) inv_out->resize(x.rows());
  const float d = static_cast<float>(x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    float inv = 1.0f / std::sqrt(x.row(r).squaredNorm() / d + kNormEps);
    y.row(r) = x.row(r) * inv;
    if (inv_out) (*inv_out)(r) = inv;
  }
  return y;
}

// Given y = x/rms(x) and upstream dy: dx = inv * (dy - y * dot(dy, y)/d).
Matrix rmsnorm_backward(const Matrix& y, const Vector& inv, const Matrix& dy) {
  Matrix dx(y.rows(), y.cols());
  const float d = static_cast<float>(y.cols());
  for (Eigen::Index r = 0; r < y.rows(); ++r) {
    float coupling = y.row(r).dot(dy.row(r)) / d;
    dx.row(r) = inv(r) * (dy.row(r) - coupling * y.row(r));
  }
  return dx;
}

float sigmoidf(float x) { return 1.0f / (1.0f + std::exp(-x)); }

Matrix silu(const Matrix& x) {
  return x.unaryExpr([](float v) { return v * sigmoidf(v); });
}

Matrix silu_backward(const Matrix& x, const Matrix& dy) {
  Matrix dx(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    for (Eigen::Index c = 0; c < x.cols(); ++c) {
      float s = sigmoidf(x(r, c));
      dx(r, c) = dy(r, c) * s * (1.0f + x(r, c) * (1.0f - s));
    }
  }
  return dx;
}

struct LayerCache {
  Matrix a;                  // rmsnorm(x_in)
  Vector inv1;
  Matrix q, k, v;            // [n x d]
  std::vector<Matrix> attn;  // per-head softmax matrices [n x n]
  Matrix o;                  // concatenated attention output [n x d]
  Matrix x_mid;
  Matrix b;                  // rmsnorm(x_mid)
  Vector inv2;
  Matrix f1;                 // [n x d_ff]
  Matrix g;                  // silu(f1)
};

struct ForwardCache {
  Matrix x0;
  std::vector<LayerCache> layers;
  Matrix x_last;  // input of the final norm
  Matrix xf;      // final normalized activations (input of the head)
  Vector invf;
};

Matrix forward_impl(const ToyTransformer& model, std::span<const int> tokens,
                    const Mask& mask, std::span<const int> positions,
                    ForwardCache* cache) {
  const ModelConfig& cfg = model.config;
  const auto n = static_cast<Eigen::Index>(tokens.size());
  if (n == 0) throw std::invalid_argument("forward: empty token sequence");
  if (positions.size() != tokens.size())
    throw std::invalid_argument("forward: positions length differs from tokens length");
  if (mask.rows() != n || mask.cols() != n)
    throw std::invalid_argument("forward: mask shape differs from sequence length");
  for (int t : tokens) {
    if (t < 0 || static_cast<uint32_t>(t) >= cfg.vocab_size)
      throw std::invalid_argument("forward: token out of range");
  }
  for (int p : positions) {
    if (p < 0 || static_cast<uint32_t>(p) >= cfg.max_positions)
      throw std::invalid_argument("forward: position out of range");
  }

  const Eigen::Index d = cfg.d_model;
  const Eigen::Index dh = cfg.d_model / cfg.n_heads;
  const float att_scale = 1.0f / std::sqrt(static_cast<float>(dh));

  Matrix x(n, d);
  for (Eigen::Index i = 0; i < n; ++i)
    x.row(i) = model.embedding.row(tokens[i]) + model.positions.row(positions[i]);

  if (cache) {
    cache->x0 = x;
    cache->layers.resize(cfg.n_layers);
  }

  for (uint32_t l = 0; l < cfg.n_layers; ++l) {
    const LayerWeights& w = model.layers[l];
    LayerCache local;
    LayerCache& lc = cache ? cache->layers[l] : local;

    lc.a = rmsnorm(x, &lc.inv1);
    lc.q = lc.a * w.wq.transpose();
    lc.k = lc.a * w.wk.transpose();
    lc.v = lc.a * w.wv.transpose();

    lc.o.setZero(n, d);
    lc.attn.assign(cfg.n_heads, Matrix());
    for (uint32_t h = 0; h < cfg.n_heads; ++h) {
      auto qh = lc.q.middleCols(h * dh, dh);
      auto kh = lc.k.middleCols(h * dh, dh);
      auto vh = lc.v.middleCols(h * dh, dh);
      Matrix s = (qh * kh.transpose()) * att_scale;
      Matrix& a = lc.attn[h];
      a.setZero(n, n);
      for (Eigen::Index q = 0; q < n; ++q) {
        float m = -std::numeric_limits<float>::infinity();
        for (Eigen::Index key = 0; key < n; ++key)
          if (mask(q, key) && s(q, key) > m) m = s(q, key);
        if (!std::isfinite(m)) continue;  // no visible key: zero attention row
        float z = 0.0f;
        for (Eigen::Index key = 0; key < n; ++key) {
          if (!mask(q, key)) continue;
          float e = std::exp(s(q, key) - m);
          a(q, key) = e;
          z += e;
        }
        a.row(q) /= z;
      }
      lc.o.middleCols(h * dh, dh) = a * vh;
    }

    lc.x_mid = x + lc.o * w.wo.transpose();
    lc.b = rmsnorm(lc.x_mid, &lc.inv2);
    lc.f1 = lc.b * w.ff1.transpose();
    lc.g = silu(lc.f1);
    x = lc.x_mid + lc.g * w.ff2.transpose();
  }

  Vector invf;
  Matrix xf = rmsnorm(x, &invf);
  Matrix logits = xf * model.head.transpose();
  if (cache) {
    cache->x_last = std::move(x);
    cache->xf = xf;
    cache->invf = std::move(invf);
  }
  return logits;
}

// Gradients of all linear layers, aligned with linear_layer_names().
// dlogits rows for non-predicting positions must be zero.
void backward_impl(const ToyTransformer& model, const ForwardCache& cache,
                   const Matrix& dlogits, std::vector<Matrix>& grads) {
  const ModelConfig& cfg = model.config;
  const Eigen::Index n = dlogits.rows();
  const Eigen::Index d = cfg.d_model;
  const Eigen::Index dh = cfg.d_model / cfg.n_heads;
  const float att_scale = 1.0f / std::sqrt(static_cast<float>(dh));

  grads[6 * cfg.n_layers] += dlogits.transpose() * cache.xf;  // head
  Matrix dxf = dlogits * model.head;
  Matrix dx = rmsnorm_backward(cache.xf, cache.invf, dxf);

  for (int l = static_cast<int>(cfg.n_layers) - 1; l >= 0; --l) {
    const LayerWeights& w = model.layers[l];
    const LayerCache& lc = cache.layers[l];
    const int base = 6 * l;

    // Feed-forward block: x_out = x_mid + silu(b ff1^T) ff2^T
    Matrix dg = dx * w.ff2;
    grads[base + 5] += dx.transpose() * lc.g;  // ff2
    Matrix df1 = silu_backward(lc.f1, dg);
    grads[base + 4] += df1.transpose() * lc.b;  // ff1
    Matrix db = df1 * w.ff1;
    Matrix dx_mid = dx + rmsnorm_backward(lc.b, lc.inv2, db);

    // Attention block: x_mid = x_in + (concat_h softmax(q k^T) v) wo^T
    Matrix dO = dx_mid * w.wo;
    grads[base + 3] += dx_mid.transpose() * lc.o;  // wo

    Matrix dq(n, d), dk(n, d), dv(n, d);
    for (uint32_t h = 0; h < cfg.n_heads; ++h) {
      auto qh = lc.q.middleCols(h * dh, dh);
      auto kh = lc.k.middleCols(h * dh, dh);
      auto vh = lc.v.middleCols(h * dh, dh);
      const Matrix& a = lc.attn[h];
      auto doh = dO.middleCols(h * dh, dh);

      Matrix da = doh * vh.transpose();
      dv.middleCols(h * dh, dh) = a.transpose() * doh;
      // softmax backward; rows that attended to nothing have a == 0 and
      // propagate nothing.
      Matrix ds(n, n);
      for (Eigen::Index r = 0; r < n; ++r) {
        float inner = a.row(r).dot(da.row(r));
        ds.row(r) = a.row(r).cwiseProduct(da.row(r).array().matrix() -
                                          Matrix::Constant(1, n, inner));
      }
      dq.middleCols(h * dh, dh) = (ds * kh) * att_scale;
      dk.middleCols(h * dh, dh) = (ds.transpose() * qh) * att_scale;
    }

    grads[base + 0] += dq.transpose() * lc.a;  // wq
    grads[base + 1] += dk.transpose() * lc.a;  // wk
    grads[base + 2] += dv.transpose() * lc.a;  // wv
    Matrix da_total = dq * w.wq + dk * w.wk + dv * w.wv;

    dx = dx_mid + rmsnorm_backward(lc.a, lc.inv1, da_total);
  }
}

// Cross-entropy of next-token prediction for one sequence. Returns the mean
// over predicting rows and fills dlogits (zeroed rows elsewhere); sequences
// of length < 2 predict nothing and contribute zero.
double sequence_loss(const Matrix& logits, const std::vector<int>& tokens,
                     Matrix* dlogits) {
  const Eigen::Index n = logits.rows();
  if (dlogits) dlogits->setZero(n, logits.cols());
  if (n < 2) return 0.0;
  const double inv_rows = 1.0 / static_cast<double>(n - 1);
  double total = 0.0;
  for (Eigen::Index r = 0; r + 1 < n; ++r) {
    RowVector lp = log_softmax(logits.row(r));
    int target = tokens[r + 1];
    total += -static_cast<double>(lp(target));
    if (dlogits) {
      RowVector p = lp.array().exp();
      dlogits->row(r) = p * static_cast<float>(inv_rows);
      (*dlogits)(r, target) -= static_cast<float>(inv_rows);
    }
  }
  return total * inv_rows;
}

void check_batch(const ToyTransformer& model, const CalibrationBatch& batch) {
  if (batch.sequences.empty())
    throw std::invalid_argument("calibration batch is empty");
  for (const auto& seq : batch.sequences) {
    if (seq.empty()) throw std::invalid_argument("calibration sequence is empty");
    if (seq.size() > model.config.max_positions)
      throw std::invalid_argument("calibration sequence longer than max_positions");
  }
}

std::vector<Matrix> zero_linear_grads(const ToyTransformer& model) {
  std::vector<Matrix> grads;
  for (const auto& name : linear_layer_names(model.config)) {
    const Matrix& w = linear_layer(model, name);
    grads.push_back(Matrix::Zero(w.rows(), w.cols()));
  }
  return grads;
}

}  // namespace

void ModelConfig::validate() const {
  check_positive(vocab_size, "vocab_size");
  check_positive(d_model, "d_model");
  check_positive(n_layers, "n_layers");
  check_positive(n_heads, "n_heads");
  check_positive(d_ff, "d_ff");
  check_positive(max_positions, "max_positions");
  if (d_model % n_heads != 0)
    throw std::invalid_argument("model config: d_model must be divisible by n_heads");
}

ToyTransformer init_model(const ModelConfig& config) {
  config.validate();
  ToyTransformer m;
  m.config = config;
  std::mt19937_64 rng(config.seed);
  const float bound = 1.0f / std::sqrt(static_cast<float>(config.d_model));

  m.embedding.resize(config.vocab_size, config.d_model);
  fill_uniform(m.embedding, rng, bound);
  m.layers.resize(config.n_layers);
  for (auto& lw : m.layers) {
    lw.wq.resize(config.d_model, config.d_model);
    lw.wk.resize(config.d_model, config.d_model);
    lw.wv.resize(config.d_model, config.d_model);
    lw.wo.resize(config.d_model, config.d_model);
    lw.ff1.resize(config.d_ff, config.d_model);
    lw.ff2.resize(config.d_model, config.d_ff);
    fill_uniform(lw.wq, rng, bound);
    fill_uniform(lw.wk, rng, bound);
    fill_uniform(lw.wv, rng, bound);
    fill_uniform(lw.wo, rng, bound);
    fill_uniform(lw.ff1, rng, bound);
    fill_uniform(lw.ff2, rng, bound);
  }
  m.head.resize(config.vocab_size, config.d_model);
  fill_uniform(m.head, rng, bound);
  m.positions = sinusoidal_positions(config.max_positions, config.d_model);
  return m;
}

Mask causal_mask(int n) {
  Mask m(n, n);
  for (int q = 0; q < n; ++q)
    for (int k = 0; k < n; ++k) m(q, k) = k <= q;
  return m;
}

Matrix forward(const ToyTransformer& model, std::span<const int> tokens,
               const Mask& mask, std::span<const int> positions) {
  return forward_impl(model, tokens, mask, positions, nullptr);
}

Matrix forward_causal(const ToyTransformer& model, std::span<const int> tokens) {
  std::vector<int> positions(tokens.size());
  for (size_t i = 0; i < tokens.size(); ++i) positions[i] = static_cast<int>(i);
  return forward_impl(model, tokens, causal_mask(static_cast<int>(tokens.size())),
                      positions, nullptr);
}

RowVector log_softmax(const RowVector& logits) {
  float m = logits.maxCoeff();
  double z = 0.0;
  for (Eigen::Index i = 0; i < logits.size(); ++i)
    z += std::exp(static_cast<double>(logits(i) - m));
  float lz = static_cast<float>(std::log(z));
  return logits.array() - m - lz;
}

std::vector<std::string> linear_layer_names(const ModelConfig& config) {
  static const char* kParts[] = {"wq", "wk", "wv", "wo", "ff1", "ff2"};
  std::vector<std::string> names;
  names.reserve(6 * config.n_layers + 1);
  for (uint32_t l = 0; l < config.n_layers; ++l)
    for (const char* part : kParts)
      names.push_back("layer." + std::to_string(l) + "." + part);
  names.push_back("head");
  return names;
}

namespace {

Matrix* linear_lookup(ToyTransformer& model, const std::string& name) {
  if (name == "head") return &model.head;
  if (name.rfind("layer.", 0) != 0) return nullptr;
  size_t dot = name.find('.', 6);
  if (dot == std::string::npos) return nullptr;
  uint32_t l = 0;
  try {
    l = static_cast<uint32_t>(std::stoul(name.substr(6, dot - 6)));
  } catch (const std::exception&) {
    return nullptr;
  }
  if (l >= model.config.n_layers) return nullptr;
  std::string part = name.substr(dot + 1);
  LayerWeights& lw = model.layers[l];
  if (part == "wq") return &lw.wq;
  if (part == "wk") return &lw.wk;
  if (part == "wv") return &lw.wv;
  if (part == "wo") return &lw.wo;
  if (part == "ff1") return &lw.ff1;
  if (part == "ff2") return &lw.ff2;
  return nullptr;
}

}  // namespace

Matrix& linear_layer(ToyTransformer& model, const std::string& name) {
  Matrix* w = linear_lookup(model, name);
  if (!w) throw std::invalid_argument("unknown linear layer: " + name);
  return *w;
}

const Matrix& linear_layer(const ToyTransformer& model, const std::string& name) {
  return linear_layer(const_cast<ToyTransformer&>(model), name);
}

ForwardTrace calibrate(const ToyTransformer& model, const CalibrationBatch& batch) {
  check_batch(model, batch);
  const auto names = linear_layer_names(model.config);
  const size_t n_layers = names.size();

  std::vector<Eigen::MatrixXd> grad_acc(n_layers);
  std::vector<Eigen::VectorXd> xsq_acc(n_layers);
  for (size_t i = 0; i < n_layers; ++i) {
    const Matrix& w = linear_layer(model, names[i]);
    grad_acc[i] = Eigen::MatrixXd::Zero(w.rows(), w.cols());
    xsq_acc[i] = Eigen::VectorXd::Zero(w.cols());
  }

  double loss_total = 0.0;
  std::vector<Matrix> grads = zero_linear_grads(model);
  for (const auto& seq : batch.sequences) {
    ForwardCache cache;
    std::vector<int> positions(seq.size());
    for (size_t i = 0; i < seq.size(); ++i) positions[i] = static_cast<int>(i);
    Matrix logits = forward_impl(model, seq, causal_mask(static_cast<int>(seq.size())),
                                 positions, &cache);

    Matrix dlogits;
    loss_total += sequence_loss(logits, seq, &dlogits);
    if (seq.size() >= 2) {
      for (auto& g : grads) g.setZero();
      backward_impl(model, cache, dlogits, grads);
      for (size_t i = 0; i < n_layers; ++i)
        grad_acc[i] += grads[i].cwiseAbs().cast<double>();
    }

    for (uint32_t l = 0; l < model.config.n_layers; ++l) {
      const LayerCache& lc = cache.layers[l];
      Eigen::VectorXd a_sq = lc.a.colwise().squaredNorm().cast<double>();
      xsq_acc[6 * l + 0] += a_sq;
      xsq_acc[6 * l + 1] += a_sq;
      xsq_acc[6 * l + 2] += a_sq;
      xsq_acc[6 * l + 3] += lc.o.colwise().squaredNorm().cast<double>();
      xsq_acc[6 * l + 4] += lc.b.colwise().squaredNorm().cast<double>();
      xsq_acc[6 * l + 5] += lc.g.colwise().squaredNorm().cast<double>();
    }
    xsq_acc[6 * model.config.n_layers] += cache.xf.colwise().squaredNorm().cast<double>();
  }

  const double inv_s = 1.0 / static_cast<double>(batch.sequences.size());
  ForwardTrace trace;
  trace.loss = loss_total * inv_s;
  trace.layers.resize(n_layers);
  for (size_t i = 0; i < n_layers; ++i) {
    trace.layers[i].name = names[i];
    trace.layers[i].grad_abs = (grad_acc[i] * inv_s).cast<float>();
    trace.layers[i].x_norms = xsq_acc[i].array().sqrt().cast<float>();
  }
  return trace;
}

LossGradients loss_and_gradients(const ToyTransformer& model,
                                 const CalibrationBatch& batch) {
  check_batch(model, batch);
  LossGradients out;
  out.grads = zero_linear_grads(model);
  std::vector<Matrix> grads = zero_linear_grads(model);
  for (const auto& seq : batch.sequences) {
    ForwardCache cache;
    std::vector<int> positions(seq.size());
    for (size_t i = 0; i < seq.size(); ++i) positions[i] = static_cast<int>(i);
    Matrix logits = forward_impl(model, seq, causal_mask(static_cast<int>(seq.size())),
                                 positions, &cache);
    Matrix dlogits;
    out.loss += sequence_loss(logits, seq, &dlogits);
    if (seq.size() >= 2) {
      for (auto& g : grads) g.setZero();
      backward_impl(model, cache, dlogits, grads);
      for (size_t i = 0; i < grads.size(); ++i) out.grads[i] += grads[i];
    }
  }
  const float inv_s = 1.0f / static_cast<float>(batch.sequences.size());
  out.loss /= static_cast<double>(batch.sequences.size());
  for (auto& g : out.grads) g *= inv_s;
  return out;
}

double batch_loss(const ToyTransformer& model, const CalibrationBatch& batch) {
  check_batch(model, batch);
  double total = 0.0;
  for (const auto& seq : batch.sequences) {
    Matrix logits = forward_causal(model, seq);
    total += sequence_loss(logits, seq, nullptr);
  }
  return total / static_cast<double>(batch.sequences.size());
}

namespace {

constexpr uint32_t kModelVersion = 1;

void write_tensor(ByteWriter& w, const std::string& name, const Matrix& m) {
  w.str16(name);
  w.u32(static_cast<uint32_t>(m.rows()));
  w.u32(static_cast<uint32_t>(m.cols()));
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) w.f32(m(r, c));
}

Matrix read_tensor(ByteReader& r, const std::string& expect_name,
                   uint32_t expect_rows, uint32_t expect_cols) {
  std::string name = r.str16("tensor name");
  if (name != expect_name)
    r.fail("unexpected tensor name '" + name + "' (want '" + expect_name + "')");
  uint32_t rows = r.u32("tensor dims of " + expect_name);
  uint32_t cols = r.u32("tensor dims of " + expect_name);
  if (rows != expect_rows || cols != expect_cols)
    r.fail("tensor " + expect_name + " has unexpected shape");
  Matrix m(rows, cols);
  const std::string what = "tensor values of " + expect_name;
  for (uint32_t i = 0; i < rows; ++i)
    for (uint32_t j = 0; j < cols; ++j) m(i, j) = r.f32(what);
  return m;
}

}  // namespace

std::string serialize_model(const ToyTransformer& model) {
  ByteWriter w;
  w.bytes("EGTM", 4);
  w.u32(kModelVersion);
  const ModelConfig& c = model.config;
  w.u32(c.vocab_size);
  w.u32(c.d_model);
  w.u32(c.n_layers);
  w.u32(c.n_heads);
  w.u32(c.d_ff);
  w.u32(c.max_positions);
  w.u32(0);  // reserved
  w.u64(c.seed);
  w.u32(2 + 6 * c.n_layers);
  write_tensor(w, "embedding", model.embedding);
  for (uint32_t l = 0; l < c.n_layers; ++l) {
    const std::string p = "layer." + std::to_string(l) + ".";
    const LayerWeights& lw = model.layers[l];
    write_tensor(w, p + "wq", lw.wq);
    write_tensor(w, p + "wk", lw.wk);
    write_tensor(w, p + "wv", lw.wv);
    write_tensor(w, p + "wo", lw.wo);
    write_tensor(w, p + "ff1", lw.ff1);
    write_tensor(w, p + "ff2", lw.ff2);
  }
  write_tensor(w, "head", model.head);
  return w.data();
}

ToyTransformer parse_model(std::string bytes, const std::string& context) {
  ByteReader r(std::move(bytes), context);
  if (r.raw(4, "magic") != "EGTM") r.fail("bad magic (want EGTM)");
  uint32_t version = r.u32("version");
  if (version != kModelVersion)
    r.fail("unsupported version " + std::to_string(version));

  ModelConfig c;
  c.vocab_size = r.u32("config.vocab_size");
  c.d_model = r.u32("config.d_model");
  c.n_layers = r.u32("config.n_layers");
  c.n_heads = r.u32("config.n_heads");
  c.d_ff = r.u32("config.d_ff");
  c.max_positions = r.u32("config.max_positions");
  r.u32("config.reserved");
  c.seed = r.u64("config.seed");
  try {
    c.validate();
  } catch (const std::invalid_argument& e) {
    r.fail(std::string("invalid config: ") + e.what());
  }

  uint32_t tensor_count = r.u32("tensor count");
  if (tensor_count != 2 + 6 * c.n_layers) r.fail("unexpected tensor count");

  ToyTransformer m;
  m.config = c;
  m.embedding = read_tensor(r, "embedding", c.vocab_size, c.d_model);
  m.layers.resize(c.n_layers);
  for (uint32_t l = 0; l < c.n_layers; ++l) {
    const std::string p = "layer." + std::to_string(l) + ".";
    LayerWeights& lw = m.layers[l];
    lw.wq = read_tensor(r, p + "wq", c.d_model, c.d_model);
    lw.wk = read_tensor(r, p + "wk", c.d_model, c.d_model);
    lw.wv = read_tensor(r, p + "wv", c.d_model, c.d_model);
    lw.wo = read_tensor(r, p + "wo", c.d_model, c.d_model);
    lw.ff1 = read_tensor(r, p + "ff1", c.d_ff, c.d_model);
    lw.ff2 = read_tensor(r, p + "ff2", c.d_model, c.d_ff);
  }
  m.head = read_tensor(r, "head", c.vocab_size, c.d_model);
  if (!r.at_end()) r.fail("trailing bytes after last tensor");
  m.positions = sinusoidal_positions(c.max_positions, c.d_model);
  return m;
}

void save_model(const ToyTransformer& model, const std::string& path) {
  write_file(path, serialize_model(model));
}

ToyTransformer load_model(const std::string& path) {
  return parse_model(read_file(path), path);
}

}  // namespace egt
