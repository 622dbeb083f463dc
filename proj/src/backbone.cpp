#include "fedmobi/backbone.hpp"

#include <cmath>
#include <cstring>

#include "fedmobi/errors.hpp"
#include "fedmobi/rng.hpp"

namespace fedmobi {

void BackboneConfig::validate() const {
  if (id.empty()) throw ConfigError("backbone: id must be non-empty");
  if (num_layers == 0) throw ConfigError("backbone '" + id + "': num_layers must be positive");
  if (hidden == 0 || heads == 0 || hidden % heads != 0)
    throw ConfigError("backbone '" + id + "': hidden (" + std::to_string(hidden) +
                      ") must be a positive multiple of heads (" + std::to_string(heads) + ")");
  if (ffn_mult == 0) throw ConfigError("backbone '" + id + "': ffn_mult must be positive");
  if (vocab == 0 || max_seq == 0 || num_classes == 0)
    throw ConfigError("backbone '" + id + "': vocab, max_seq and num_classes must be positive");
}

namespace {

Tensor init_normal(Rng& rng, std::vector<std::size_t> shape, double stddev) {
  Tensor t = Tensor::zeros(std::move(shape), false);
  for (auto& v : t.data()) v = rng.normal(0.0, stddev);
  return t;
}

}  // namespace

FrozenBackbone FrozenBackbone::build(const BackboneConfig& cfg) {
  cfg.validate();
  FrozenBackbone bb;
  bb.cfg_ = cfg;
  Rng rng(derive_seed(cfg.init_seed, "backbone." + cfg.id));
  const std::size_t h = cfg.hidden;
  const double w_std = 0.02;
  bb.tok_emb_ = init_normal(rng, {cfg.vocab, h}, w_std);
  bb.pos_emb_ = init_normal(rng, {cfg.max_seq, h}, w_std);
  bb.blocks_.resize(cfg.num_layers);
  for (auto& blk : bb.blocks_) {
    blk.ln1_g = Tensor::full({h}, 1.0);
    blk.ln1_b = Tensor::zeros({h});
    blk.ln2_g = Tensor::full({h}, 1.0);
    blk.ln2_b = Tensor::zeros({h});
    blk.wq = init_normal(rng, {h, h}, w_std);
    blk.bq = Tensor::zeros({h});
    blk.wk = init_normal(rng, {h, h}, w_std);
    blk.bk = Tensor::zeros({h});
    blk.wv = init_normal(rng, {h, h}, w_std);
    blk.bv = Tensor::zeros({h});
    blk.wo = init_normal(rng, {h, h}, w_std);
    blk.bo = Tensor::zeros({h});
    blk.w_up = init_normal(rng, {h, std::size_t(cfg.ffn_mult) * h}, w_std);
    blk.b_up = Tensor::zeros({std::size_t(cfg.ffn_mult) * h});
    blk.w_down = init_normal(rng, {std::size_t(cfg.ffn_mult) * h, h}, w_std);
    blk.b_down = Tensor::zeros({h});
  }
  bb.head_w_ = init_normal(rng, {h, cfg.num_classes}, w_std);
  bb.head_b_ = Tensor::zeros({cfg.num_classes});
  return bb;
}

void FrozenBackbone::for_each_param(const std::function<void(const Tensor&)>& fn) const {
  fn(tok_emb_);
  fn(pos_emb_);
  for (const auto& b : blocks_) {
    for (const auto* t : {&b.ln1_g, &b.ln1_b, &b.ln2_g, &b.ln2_b, &b.wq, &b.bq, &b.wk, &b.bk,
                          &b.wv, &b.bv, &b.wo, &b.bo, &b.w_up, &b.b_up, &b.w_down, &b.b_down})
      fn(*t);
  }
  fn(head_w_);
  fn(head_b_);
}

std::size_t FrozenBackbone::param_count() const {
  std::size_t n = 0;
  for_each_param([&](const Tensor& t) { n += t.numel(); });
  return n;
}

std::uint64_t FrozenBackbone::param_checksum() const {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for_each_param([&](const Tensor& t) {
    std::uint64_t c = t.checksum();
    h = fnv1a64(&c, sizeof(c), h);
  });
  return h;
}

std::uint64_t FrozenBackbone::param_bytes(std::size_t bytes_per_value) const {
  return static_cast<std::uint64_t>(param_count()) * bytes_per_value;
}

Tensor FrozenBackbone::embed(const std::vector<std::uint32_t>& tokens, std::size_t batch,
                             std::size_t seq) const {
  if (tokens.size() != batch * seq)
    throw ShapeError("backbone: " + std::to_string(tokens.size()) + " tokens for batch " +
                     std::to_string(batch) + " x seq " + std::to_string(seq));
  if (seq > cfg_.max_seq)
    throw ShapeError("backbone '" + cfg_.id + "': seq " + std::to_string(seq) +
                     " exceeds max_seq " + std::to_string(cfg_.max_seq));
  Tensor x = embedding(tok_emb_, tokens);  // [batch*seq, hidden]
  const auto& pd = pos_emb_.data();
  auto& xd = x.data();
  const std::size_t h = cfg_.hidden;
  for (std::size_t i = 0; i < batch; ++i)
    for (std::size_t t = 0; t < seq; ++t) {
      double* row = &xd[(i * seq + t) * h];
      const double* pos = &pd[t * h];
      for (std::size_t j = 0; j < h; ++j) row[j] += pos[j];
    }
  return x;
}

Tensor FrozenBackbone::attention(const Block& blk, const Tensor& xn, std::size_t batch,
                                 std::size_t seq) const {
  const std::size_t h = cfg_.hidden;
  const std::size_t nh = cfg_.heads;
  const std::size_t dh = h / nh;
  Tensor q = add_bias(matmul(xn, blk.wq), blk.bq);
  Tensor k = add_bias(matmul(xn, blk.wk), blk.bk);
  Tensor v = add_bias(matmul(xn, blk.wv), blk.bv);
  Tensor ctx = Tensor::zeros({batch * seq, h});
  const double inv_sqrt_dh = 1.0 / std::sqrt(double(dh));
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t head = 0; head < nh; ++head) {
      // Per-head [seq, dh] slices; copies are fine on this frozen path.
      Tensor qh = Tensor::zeros({seq, dh});
      Tensor kh = Tensor::zeros({seq, dh});
      Tensor vh = Tensor::zeros({seq, dh});
      for (std::size_t t = 0; t < seq; ++t) {
        std::size_t src = (b * seq + t) * h + head * dh;
        std::memcpy(&qh.data()[t * dh], &q.data()[src], dh * sizeof(double));
        std::memcpy(&kh.data()[t * dh], &k.data()[src], dh * sizeof(double));
        std::memcpy(&vh.data()[t * dh], &v.data()[src], dh * sizeof(double));
      }
      Tensor probs = softmax(scale(matmul(qh, transpose(kh)), inv_sqrt_dh));
      Tensor mixed = matmul(probs, vh);  // [seq, dh]
      for (std::size_t t = 0; t < seq; ++t)
        std::memcpy(&ctx.data()[(b * seq + t) * h + head * dh], &mixed.data()[t * dh],
                    dh * sizeof(double));
    }
  }
  return add_bias(matmul(ctx, blk.wo), blk.bo);
}

Tensor FrozenBackbone::block_forward(std::uint32_t layer, const Tensor& x, std::size_t batch,
                                     std::size_t seq) const {
  if (layer < 1 || layer > cfg_.num_layers)
    throw PlanError("backbone '" + cfg_.id + "': layer " + std::to_string(layer) +
                            " out of range 1.." + std::to_string(cfg_.num_layers));
  const Block& blk = blocks_[layer - 1];
  Tensor attn_out = attention(blk, layernorm(x, blk.ln1_g, blk.ln1_b), batch, seq);
  Tensor x1 = add(x, attn_out);
  Tensor ffn_in = layernorm(x1, blk.ln2_g, blk.ln2_b);
  Tensor ffn = add_bias(matmul(gelu(add_bias(matmul(ffn_in, blk.w_up), blk.b_up)), blk.w_down),
                        blk.b_down);
  return add(x1, ffn);
}

Tensor FrozenBackbone::head_logits(const Tensor& x, std::size_t batch, std::size_t seq) const {
  Tensor pooled = mean_seq(reshape(x, {batch, seq, cfg_.hidden}));
  return add_bias(matmul(pooled, head_w_), head_b_);
}

FrozenBackbone::TapsResult FrozenBackbone::forward_with_taps(
    const std::vector<std::uint32_t>& tokens, std::size_t batch, std::size_t seq,
    const std::vector<std::uint32_t>& tap_layers) const {
  for (auto l : tap_layers)
    if (l < 1 || l > cfg_.num_layers)
      throw PlanError("backbone '" + cfg_.id + "': tap layer " + std::to_string(l) +
                              " out of range 1.." + std::to_string(cfg_.num_layers));
  TapsResult res;
  res.taps.resize(tap_layers.size());
  Tensor x = embed(tokens, batch, seq);
  for (std::uint32_t layer = 1; layer <= cfg_.num_layers; ++layer) {
    x = block_forward(layer, x, batch, seq);
    for (std::size_t i = 0; i < tap_layers.size(); ++i)
      if (tap_layers[i] == layer) res.taps[i] = reshape(x, {batch, seq, cfg_.hidden});
  }
  res.logits = head_logits(x, batch, seq);
  return res;
}

Tensor FrozenBackbone::forward_logits(const std::vector<std::uint32_t>& tokens, std::size_t batch,
                                      std::size_t seq) const {
  return forward_with_taps(tokens, batch, seq, {}).logits;
}

double FrozenBackbone::forward_flops(std::size_t seq, std::size_t batch) const {
  const double b = double(batch), s = double(seq), h = double(cfg_.hidden);
  const double f = double(cfg_.ffn_mult) * h;
  const double L = double(cfg_.num_layers), c = double(cfg_.num_classes);
  const double tokens = b * s;

  double per_layer = 0.0;
  per_layer += 2.0 * tokens * h;                  // two layernorms, 1/elem
  per_layer += 3.0 * (2.0 * tokens * h * h + tokens * h);  // qkv matmuls + biases
  per_layer += 2.0 * b * s * s * h;               // scores (2*s*s*dh per head, summed)
  per_layer += b * double(cfg_.heads) * s * s;    // score scaling
  per_layer += b * double(cfg_.heads) * s * s;    // softmax, 1/elem
  per_layer += 2.0 * b * s * s * h;               // probs x values
  per_layer += 2.0 * tokens * h * h + tokens * h;  // output projection + bias
  per_layer += 2.0 * tokens * h * f + tokens * f;  // ffn up + bias
  per_layer += tokens * f;                         // gelu, 1/elem
  per_layer += 2.0 * tokens * f * h + tokens * h;  // ffn down + bias
  per_layer += 2.0 * tokens * h;                   // two residual adds

  double total = tokens * h;                 // positional add (lookup is free)
  total += L * per_layer;
  total += tokens * h;                       // mean-pool accumulate
  total += 2.0 * b * h * c + b * c;          // head matmul + bias
  return total;
}

}  // namespace fedmobi
