#include "lace/backbone.hpp"

#include <cmath>
#include <stdexcept>

#include "lace/kernels.hpp"

namespace lace {

// ---------------------------------------------------------------------------
// MLP

Mlp::Mlp(MlpSpec spec) : spec_(std::move(spec)) {
  if (spec_.input_dim == 0 || spec_.embed_dim == 0)
    throw std::invalid_argument("Mlp: zero input or embedding dimension");
  std::size_t offset = 0;
  std::size_t in = spec_.input_dim;
  auto add_layer = [&](std::size_t out) {
    layers_.push_back({offset, offset + in * out, in, out});
    offset += in * out + out;
    in = out;
  };
  for (std::size_t h : spec_.hidden) add_layer(h);
  add_layer(spec_.embed_dim);
  params_.assign(offset, 0.0);
}

std::string Mlp::signature() const {
  std::string s = "mlp:" + std::to_string(spec_.input_dim);
  for (std::size_t h : spec_.hidden) s += "-" + std::to_string(h);
  s += ">" + std::to_string(spec_.embed_dim);
  return s;
}

void Mlp::init_he(Rng& rng) {
  for (const LayerView& l : layers_) {
    const double std_dev = std::sqrt(2.0 / static_cast<double>(l.in));
    for (std::size_t i = 0; i < l.in * l.out; ++i)
      params_[l.w_offset + i] = std_dev * rng.gaussian();
    for (std::size_t i = 0; i < l.out; ++i) params_[l.b_offset + i] = 0.0;
  }
}

Matrix Mlp::forward(const Matrix& batch, Tape& tape) const {
  if (batch.cols() != spec_.input_dim)
    throw std::invalid_argument("Mlp::forward: batch width " +
                                std::to_string(batch.cols()) + " != input_dim " +
                                std::to_string(spec_.input_dim));
  tape = Tape{};
  tape.signature = signature();
  tape.batch = batch.rows();
  tape.acts.push_back(batch);

  Matrix a = batch;
  for (std::size_t li = 0; li < layers_.size(); ++li) {
    const LayerView& l = layers_[li];
    Matrix z(a.rows(), l.out);
    // weights stored (out, in) row-major: z = a * W^T + b
    kern::gemm_nt(a.data(), params_.data() + l.w_offset, z.data(), a.rows(), l.in, l.out);
    for (std::size_t n = 0; n < z.rows(); ++n)
      for (std::size_t j = 0; j < l.out; ++j) z(n, j) += params_[l.b_offset + j];

    const bool last = li + 1 == layers_.size();
    if (last) return z;  // linear embedding layer

    tape.preacts.push_back(z);
    for (double& v : z.span()) v = v > 0.0 ? v : 0.0;
    tape.acts.push_back(z);
    a = std::move(z);
  }
  throw std::logic_error("Mlp::forward: unreachable");
}

std::vector<double> Mlp::backward(const Tape& tape, const Matrix& d_embeddings) const {
  if (tape.signature != signature())
    throw std::invalid_argument("Mlp::backward: tape from a different model");
  if (d_embeddings.rows() != tape.batch || d_embeddings.cols() != spec_.embed_dim)
    throw std::invalid_argument("Mlp::backward: cotangent shape mismatch");

  std::vector<double> grads(params_.size(), 0.0);
  Matrix delta = d_embeddings;
  for (std::size_t li = layers_.size(); li-- > 0;) {
    const LayerView& l = layers_[li];
    const Matrix& input = tape.acts[li];
    // dW = delta^T * input, db = column sums of delta
    kern::gemm_tn(delta.data(), input.data(), grads.data() + l.w_offset,
                  l.out, delta.rows(), l.in);
    for (std::size_t n = 0; n < delta.rows(); ++n)
      for (std::size_t j = 0; j < l.out; ++j) grads[l.b_offset + j] += delta(n, j);

    if (li == 0) break;
    Matrix prev(delta.rows(), l.in);
    kern::gemm_nn(delta.data(), params_.data() + l.w_offset, prev.data(),
                  delta.rows(), l.out, l.in);
    const Matrix& pre = tape.preacts[li - 1];
    for (std::size_t i = 0; i < prev.span().size(); ++i)
      if (pre.span()[i] <= 0.0) prev.span()[i] = 0.0;
    delta = std::move(prev);
  }
  return grads;
}

// ---------------------------------------------------------------------------
// CNN

Cnn::Cnn(CnnSpec spec) : spec_(std::move(spec)) {
  if (spec_.channels.empty())
    throw std::invalid_argument("Cnn: need at least one block");
  if (spec_.in_c == 0 || spec_.in_h == 0 || spec_.in_w == 0)
    throw std::invalid_argument("Cnn: zero input shape");
  const std::size_t div = std::size_t{1} << spec_.channels.size();
  if (spec_.in_h % div != 0 || spec_.in_w % div != 0)
    throw std::invalid_argument("Cnn: H and W must be divisible by 2^blocks");

  std::size_t offset = 0;
  std::size_t in_c = spec_.in_c, h = spec_.in_h, w = spec_.in_w;
  for (std::size_t out_c : spec_.channels) {
    blocks_.push_back({offset, offset + out_c * in_c * 9, in_c, out_c, h, w});
    offset += out_c * in_c * 9 + out_c;
    in_c = out_c;
    h /= 2;
    w /= 2;
  }
  params_.assign(offset, 0.0);
}

std::string Cnn::signature() const {
  std::string s = "cnn:" + std::to_string(spec_.in_c) + "x" +
                  std::to_string(spec_.in_h) + "x" + std::to_string(spec_.in_w);
  for (std::size_t c : spec_.channels) s += "-" + std::to_string(c);
  return s;
}

void Cnn::init_he(Rng& rng) {
  for (const BlockView& b : blocks_) {
    const double std_dev = std::sqrt(2.0 / static_cast<double>(b.in_c * 9));
    for (std::size_t i = 0; i < b.out_c * b.in_c * 9; ++i)
      params_[b.w_offset + i] = std_dev * rng.gaussian();
    for (std::size_t i = 0; i < b.out_c; ++i) params_[b.b_offset + i] = 0.0;
  }
}

namespace {

// 3x3 same-padding convolution on a single (C,H,W) image stored row-major.
void conv3x3_forward(const double* in, std::size_t in_c, std::size_t h, std::size_t w,
                     const double* weights, const double* bias, std::size_t out_c,
                     double* out) {
  const std::size_t hw = h * w;
  for (std::size_t oc = 0; oc < out_c; ++oc) {
    double* o = out + oc * hw;
    for (std::size_t i = 0; i < hw; ++i) o[i] = bias[oc];
    for (std::size_t ic = 0; ic < in_c; ++ic) {
      const double* x = in + ic * hw;
      const double* k = weights + (oc * in_c + ic) * 9;
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t ky = 0; ky < 3; ++ky) {
          const std::size_t iy = y + ky;
          if (iy < 1 || iy > h) continue;  // pad 1
          const double* xrow = x + (iy - 1) * w;
          double* orow = o + y * w;
          for (std::size_t kx = 0; kx < 3; ++kx) {
            const double kv = k[ky * 3 + kx];
            if (kv == 0.0) continue;
            // output col range where ix = col+kx-1 lands in [0, w)
            const std::size_t lo = kx == 0 ? 1 : 0;
            const std::size_t hi = kx == 2 ? w - 1 : w;
            for (std::size_t col = lo; col < hi; ++col)
              orow[col] += kv * xrow[col + kx - 1];
          }
        }
      }
    }
  }
}

void conv3x3_backward(const double* in, std::size_t in_c, std::size_t h, std::size_t w,
                      const double* weights, std::size_t out_c, const double* d_out,
                      double* d_in, double* d_weights, double* d_bias) {
  const std::size_t hw = h * w;
  for (std::size_t oc = 0; oc < out_c; ++oc) {
    const double* dout = d_out + oc * hw;
    for (std::size_t i = 0; i < hw; ++i) d_bias[oc] += dout[i];
    for (std::size_t ic = 0; ic < in_c; ++ic) {
      const double* x = in + ic * hw;
      double* dx = d_in ? d_in + ic * hw : nullptr;
      const double* k = weights + (oc * in_c + ic) * 9;
      double* dk = d_weights + (oc * in_c + ic) * 9;
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t ky = 0; ky < 3; ++ky) {
          const std::size_t iy = y + ky;
          if (iy < 1 || iy > h) continue;
          const double* xrow = x + (iy - 1) * w;
          double* dxrow = dx ? dx + (iy - 1) * w : nullptr;
          const double* drow = dout + y * w;
          for (std::size_t kx = 0; kx < 3; ++kx) {
            const std::size_t lo = kx == 0 ? 1 : 0;
            const std::size_t hi = kx == 2 ? w - 1 : w;
            double acc = 0.0;
            const double kv = k[ky * 3 + kx];
            for (std::size_t col = lo; col < hi; ++col) {
              acc += drow[col] * xrow[col + kx - 1];
              if (dxrow) dxrow[col + kx - 1] += kv * drow[col];
            }
            dk[ky * 3 + kx] += acc;
          }
        }
      }
    }
  }
}

}  // namespace

void gap_forward(const double* map, std::size_t channels, std::size_t hw, double* out) {
  const double inv = 1.0 / static_cast<double>(hw);
  for (std::size_t c = 0; c < channels; ++c)
    out[c] = kern::sum(map + c * hw, hw) * inv;
}

void gap_backward(const double* d_out, std::size_t channels, std::size_t hw, double* d_map) {
  const double inv = 1.0 / static_cast<double>(hw);
  for (std::size_t c = 0; c < channels; ++c) {
    const double g = d_out[c] * inv;
    for (std::size_t i = 0; i < hw; ++i) d_map[c * hw + i] = g;
  }
}

Matrix Cnn::forward(const Matrix& batch, Tape& tape) const {
  if (batch.cols() != input_dim())
    throw std::invalid_argument("Cnn::forward: batch width does not match C*H*W");
  const std::size_t B = batch.rows();
  tape = Tape{};
  tape.signature = signature();
  tape.batch = B;
  tape.acts.push_back(batch);

  Matrix a = batch;  // rows: (C,H,W) flattened
  std::size_t h = spec_.in_h, w = spec_.in_w;
  for (const BlockView& blk : blocks_) {
    const std::size_t hw = h * w;
    const std::size_t ph = h / 2, pw = w / 2;

    Matrix pre(B, blk.out_c * hw);
    for (std::size_t n = 0; n < B; ++n)
      conv3x3_forward(a.row(n), blk.in_c, h, w, params_.data() + blk.w_offset,
                      params_.data() + blk.b_offset, blk.out_c, pre.row(n));
    tape.preacts.push_back(pre);

    for (double& v : pre.span()) v = v > 0.0 ? v : 0.0;

    // 2x2 max pool, argmax recorded for backward
    Matrix pooled(B, blk.out_c * ph * pw);
    std::vector<std::uint32_t> argmax(B * blk.out_c * ph * pw);
    for (std::size_t n = 0; n < B; ++n) {
      const double* src = pre.row(n);
      double* dst = pooled.row(n);
      std::uint32_t* am = argmax.data() + n * blk.out_c * ph * pw;
      for (std::size_t c = 0; c < blk.out_c; ++c) {
        const double* m = src + c * hw;
        for (std::size_t y = 0; y < ph; ++y)
          for (std::size_t x = 0; x < pw; ++x) {
            const std::size_t base = (2 * y) * w + 2 * x;
            std::size_t best = base;
            double bv = m[base];
            const std::size_t cand[3] = {base + 1, base + w, base + w + 1};
            for (std::size_t k = 0; k < 3; ++k)
              if (m[cand[k]] > bv) {
                bv = m[cand[k]];
                best = cand[k];
              }
            dst[c * ph * pw + y * pw + x] = bv;
            am[c * ph * pw + y * pw + x] = static_cast<std::uint32_t>(c * hw + best);
          }
      }
    }
    tape.pool_argmax.push_back(std::move(argmax));
    tape.acts.push_back(pooled);
    a = std::move(pooled);
    h = ph;
    w = pw;
  }

  const std::size_t hw = h * w;
  const std::size_t d = embed_dim();
  Matrix emb(B, d);
  for (std::size_t n = 0; n < B; ++n) gap_forward(a.row(n), d, hw, emb.row(n));
  return emb;
}

std::vector<double> Cnn::backward(const Tape& tape, const Matrix& d_embeddings) const {
  if (tape.signature != signature())
    throw std::invalid_argument("Cnn::backward: tape from a different model");
  if (d_embeddings.rows() != tape.batch || d_embeddings.cols() != embed_dim())
    throw std::invalid_argument("Cnn::backward: cotangent shape mismatch");

  const std::size_t B = tape.batch;
  std::vector<double> grads(params_.size(), 0.0);

  std::size_t h = spec_.in_h >> spec_.channels.size();
  std::size_t w = spec_.in_w >> spec_.channels.size();

  // GAP adjoint into the last pooled map.
  Matrix delta(B, embed_dim() * h * w);
  for (std::size_t n = 0; n < B; ++n)
    gap_backward(d_embeddings.row(n), embed_dim(), h * w, delta.row(n));

  for (std::size_t bi = blocks_.size(); bi-- > 0;) {
    const BlockView& blk = blocks_[bi];
    const std::size_t hw = blk.in_h * blk.in_w;
    const std::size_t ph = blk.in_h / 2, pw = blk.in_w / 2;
    const Matrix& pre = tape.preacts[bi];
    const std::vector<std::uint32_t>& argmax = tape.pool_argmax[bi];

    // unpool + ReLU mask
    Matrix d_pre(B, blk.out_c * hw);
    for (std::size_t n = 0; n < B; ++n) {
      const std::uint32_t* am = argmax.data() + n * blk.out_c * ph * pw;
      const double* dp = delta.row(n);
      double* dst = d_pre.row(n);
      for (std::size_t i = 0; i < blk.out_c * ph * pw; ++i) dst[am[i]] += dp[i];
      const double* p = pre.row(n);
      for (std::size_t i = 0; i < blk.out_c * hw; ++i)
        if (p[i] <= 0.0) dst[i] = 0.0;
    }

    const Matrix& input = tape.acts[bi];
    const bool need_dx = bi > 0;
    Matrix d_in;
    if (need_dx) d_in = Matrix(B, blk.in_c * hw);
    for (std::size_t n = 0; n < B; ++n)
      conv3x3_backward(input.row(n), blk.in_c, blk.in_h, blk.in_w,
                       params_.data() + blk.w_offset, blk.out_c, d_pre.row(n),
                       need_dx ? d_in.row(n) : nullptr,
                       grads.data() + blk.w_offset, grads.data() + blk.b_offset);
    if (!need_dx) break;
    delta = std::move(d_in);
    h = blk.in_h;
    w = blk.in_w;
  }
  return grads;
}

// ---------------------------------------------------------------------------

std::size_t Backbone::embed_dim() const {
  return std::visit([](const auto& m) { return m.embed_dim(); }, impl_);
}
std::size_t Backbone::input_dim() const {
  return std::visit([](const auto& m) { return m.input_dim(); }, impl_);
}
std::size_t Backbone::num_params() const {
  return std::visit([](const auto& m) { return m.num_params(); }, impl_);
}
std::vector<double>& Backbone::params() {
  return std::visit([](auto& m) -> std::vector<double>& { return m.params(); }, impl_);
}
const std::vector<double>& Backbone::params() const {
  return std::visit([](const auto& m) -> const std::vector<double>& { return m.params(); },
                    impl_);
}
std::string Backbone::signature() const {
  return std::visit([](const auto& m) { return m.signature(); }, impl_);
}
void Backbone::init_he(Rng& rng) {
  std::visit([&](auto& m) { m.init_he(rng); }, impl_);
}
Matrix Backbone::forward(const Matrix& batch, Tape& tape) const {
  return std::visit([&](const auto& m) { return m.forward(batch, tape); }, impl_);
}
std::vector<double> Backbone::backward(const Tape& tape, const Matrix& d_embeddings) const {
  return std::visit([&](const auto& m) { return m.backward(tape, d_embeddings); }, impl_);
}

}  // namespace lace
