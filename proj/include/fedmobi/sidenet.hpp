#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedmobi/alignment.hpp"
#include "fedmobi/packet.hpp"
#include "fedmobi/tensor.hpp"

namespace fedmobi {

struct SideNetConfig {
  std::uint32_t rank = 8;     // adapter bottleneck width
  std::uint64_t init_seed = 7;

  void validate() const;
};

// The one trainable model in the system: per-backbone input projections into a
// shared width, a gated ladder of low-rank adapters (one per aligned block),
// and a linear head that emits an additive correction to backbone logits.
// Initialization guarantees the correction starts at exactly zero (adapter up
// weights and gates at zero, head bias zero) while leaving every parameter on
// a live gradient path.
class SideNetwork {
 public:
  static SideNetwork build(const AlignmentPlan& plan, const SideNetConfig& cfg);

  const AlignmentPlan& plan() const { return plan_; }
  const SideNetConfig& config() const { return cfg_; }
  ParamGroup& params() { return params_; }
  const ParamGroup& params() const { return params_; }

  // blocks: block_count tensors [batch, seq, hidden_of(backbone_id)].
  // Returns the logit correction [batch, num_classes].
  Tensor forward(const std::string& backbone_id, const std::vector<Tensor>& blocks) const;

  // softmax(logits) - onehot(labels), built without a graph. This is the only
  // label-derived value a client ever uploads.
  static Tensor compute_deviation(const Tensor& logits, const std::vector<std::uint32_t>& labels);

  // Mean squared residual per batch row: (1/batch) * sum((forward + deviation)^2),
  // i.e. the correction is regressed onto -deviation.
  Tensor loss(const ActivationPacket& p) const;

  // argmax_c (softmax(logits) + correction), lowest index on ties.
  static std::vector<std::uint32_t> corrected_predict(const Tensor& logits,
                                                      const Tensor& correction);

  // Analytic costs, same conventions as the backbone counter: matmuls at
  // 2*m*k*n, elementwise work at one FLOP per produced element.
  double forward_flops(const std::string& backbone_id, std::size_t batch, std::size_t seq) const;
  double train_step_flops(const std::string& backbone_id, std::size_t batch,
                          std::size_t seq) const;

  // Leave-one-block-out scores over a packet sample: score_j is the mean loss
  // increase when block j's activations are zeroed. Higher = more important.
  std::vector<double> block_importance(const std::vector<ActivationPacket>& sample) const;

  // Binary checkpoint bound to the alignment plan digest; loading into a net
  // built from a different plan throws StateError.
  void save_checkpoint(const std::string& path) const;
  void load_checkpoint(const std::string& path);

 private:
  AlignmentPlan plan_;
  SideNetConfig cfg_;
  ParamGroup params_;
};

}  // namespace fedmobi
