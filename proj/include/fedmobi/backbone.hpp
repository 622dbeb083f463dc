#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedmobi/tensor.hpp"

namespace fedmobi {

struct BackboneConfig {
  std::string id;
  std::uint32_t num_layers = 4;
  std::uint32_t hidden = 32;
  std::uint32_t heads = 4;
  std::uint32_t ffn_mult = 4;
  std::uint32_t vocab = 64;
  std::uint32_t max_seq = 32;
  std::uint32_t num_classes = 4;
  std::uint64_t init_seed = 1;

  void validate() const;
};

// Deterministically initialized classifier transformer whose weights never
// change: pre-norm blocks (bidirectional attention, gelu FFN), learned
// positional embeddings, and a mean-pool + linear head. Every parameter is
// requires_grad=false, so forward passes build no autodiff graph; the tap of
// layer l (1-based) is the residual-stream output of block l, and the tap of
// the last layer is exactly the hidden state the head consumes.
class FrozenBackbone {
 public:
  static FrozenBackbone build(const BackboneConfig& cfg);

  const BackboneConfig& config() const { return cfg_; }
  std::size_t param_count() const;
  std::uint64_t param_checksum() const;

  struct TapsResult {
    Tensor logits;             // [batch, num_classes]
    std::vector<Tensor> taps;  // one [batch, seq, hidden] per requested layer
  };

  // tokens is batch*seq ids, row-major; tap_layers are 1-based block indices.
  TapsResult forward_with_taps(const std::vector<std::uint32_t>& tokens, std::size_t batch,
                               std::size_t seq,
                               const std::vector<std::uint32_t>& tap_layers) const;

  Tensor forward_logits(const std::vector<std::uint32_t>& tokens, std::size_t batch,
                        std::size_t seq) const;

  // Exposed stages so a test can re-execute the pipeline layer by layer.
  Tensor embed(const std::vector<std::uint32_t>& tokens, std::size_t batch,
               std::size_t seq) const;                       // [batch*seq, hidden]
  Tensor block_forward(std::uint32_t layer, const Tensor& x, std::size_t batch,
                       std::size_t seq) const;               // layer is 1-based
  Tensor head_logits(const Tensor& x, std::size_t batch, std::size_t seq) const;

  // Analytic forward cost. Matmuls count 2*m*k*n; elementwise, normalization
  // and reduction work counts one FLOP per produced element. Linear in batch.
  double forward_flops(std::size_t seq, std::size_t batch) const;

  std::uint64_t param_bytes(std::size_t bytes_per_value) const;

 private:
  struct Block {
    Tensor ln1_g, ln1_b, ln2_g, ln2_b;
    Tensor wq, bq, wk, bk, wv, bv, wo, bo;
    Tensor w_up, b_up, w_down, b_down;
  };

  BackboneConfig cfg_;
  Tensor tok_emb_;  // [vocab, hidden]
  Tensor pos_emb_;  // [max_seq, hidden]
  std::vector<Block> blocks_;
  Tensor head_w_;  // [hidden, num_classes]
  Tensor head_b_;  // [num_classes]

  Tensor attention(const Block& blk, const Tensor& xn, std::size_t batch, std::size_t seq) const;
  void for_each_param(const std::function<void(const Tensor&)>& fn) const;
};

}  // namespace fedmobi
