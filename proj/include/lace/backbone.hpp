#pragma once

// Desk-scale trainable feature extractors: an MLP (flatten -> hidden ReLU
// layers -> linear embedding) and a small CNN (3x3 conv / ReLU / 2x2 maxpool
// blocks, then global average pooling). Parameters live in one flat vector in
// declaration order — the same order the checkpoint stream uses — and the
// backward pass returns gradients in that layout.

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "lace/linalg.hpp"
#include "lace/rng.hpp"

namespace lace {

struct MlpSpec {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden;  // may be empty: single linear layer
  std::size_t embed_dim = 0;
};

struct CnnSpec {
  std::size_t in_c = 0, in_h = 0, in_w = 0;  // rows are C*H*W flattened
  std::vector<std::size_t> channels;         // one conv/relu/pool block each
  // embedding dim = channels.back() via global average pooling
};

// Activation record from one forward pass; consumed by backward.
struct Tape {
  std::string signature;          // spec digest it was produced under
  std::size_t batch = 0;
  std::vector<Matrix> acts;       // layer inputs / feature maps
  std::vector<Matrix> preacts;    // pre-ReLU values (ReLU masks)
  std::vector<std::vector<std::uint32_t>> pool_argmax;  // CNN only
};

class Mlp {
 public:
  explicit Mlp(MlpSpec spec);

  const MlpSpec& spec() const { return spec_; }
  std::size_t embed_dim() const { return spec_.embed_dim; }
  std::size_t input_dim() const { return spec_.input_dim; }
  std::size_t num_params() const { return params_.size(); }
  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }
  std::string signature() const;

  void init_he(Rng& rng);

  Matrix forward(const Matrix& batch, Tape& tape) const;
  std::vector<double> backward(const Tape& tape, const Matrix& d_embeddings) const;

 private:
  struct LayerView {
    std::size_t w_offset, b_offset, in, out;
  };
  MlpSpec spec_;
  std::vector<LayerView> layers_;
  std::vector<double> params_;
};

class Cnn {
 public:
  explicit Cnn(CnnSpec spec);

  const CnnSpec& spec() const { return spec_; }
  std::size_t embed_dim() const { return spec_.channels.back(); }
  std::size_t input_dim() const { return spec_.in_c * spec_.in_h * spec_.in_w; }
  std::size_t num_params() const { return params_.size(); }
  std::vector<double>& params() { return params_; }
  const std::vector<double>& params() const { return params_; }
  std::string signature() const;

  void init_he(Rng& rng);

  Matrix forward(const Matrix& batch, Tape& tape) const;
  std::vector<double> backward(const Tape& tape, const Matrix& d_embeddings) const;

 private:
  struct BlockView {
    std::size_t w_offset, b_offset, in_c, out_c, in_h, in_w;  // pre-pool size
  };
  CnnSpec spec_;
  std::vector<BlockView> blocks_;
  std::vector<double> params_;
};

// Global average pooling over the spatial dims of a (C,H,W) map, and its
// adjoint. Exposed for the adjoint test.
void gap_forward(const double* map, std::size_t channels, std::size_t hw, double* out);
void gap_backward(const double* d_out, std::size_t channels, std::size_t hw, double* d_map);

// Uniform wrapper so the trainer does not care which architecture it drives.
class Backbone {
 public:
  explicit Backbone(Mlp mlp) : impl_(std::move(mlp)) {}
  explicit Backbone(Cnn cnn) : impl_(std::move(cnn)) {}

  std::size_t embed_dim() const;
  std::size_t input_dim() const;
  std::size_t num_params() const;
  std::vector<double>& params();
  const std::vector<double>& params() const;
  std::string signature() const;
  void init_he(Rng& rng);
  Matrix forward(const Matrix& batch, Tape& tape) const;
  std::vector<double> backward(const Tape& tape, const Matrix& d_embeddings) const;

  bool is_cnn() const { return std::holds_alternative<Cnn>(impl_); }

 private:
  std::variant<Mlp, Cnn> impl_;
};

}  // namespace lace
