#include "fedmobi/client.hpp"

#include <algorithm>

#include "fedmobi/errors.hpp"
#include "fedmobi/float16.hpp"
#include "fedmobi/sidenet.hpp"

namespace fedmobi {

namespace {

void quantize_in_place(Tensor& t) {
  for (double& v : t.data()) v = float16_quantize(v);
}

}  // namespace

void ClientConfig::validate() const {
  if (backbone_id.empty()) throw ConfigError("client needs a backbone id");
  if (batch_size == 0) throw ConfigError("client batch size must be positive");
}

ClientRuntime::ClientRuntime(ClientConfig cfg, const FrozenBackbone& backbone,
                             const AlignmentPlan& plan, const Dataset& data, Shard shard)
    : cfg_(std::move(cfg)), backbone_(&backbone), plan_(&plan), data_(&data),
      shard_(std::move(shard)) {
  cfg_.validate();
  if (backbone_->config().id != cfg_.backbone_id)
    throw IdentityError("client backbone id does not match the provided backbone");
  plan_->taps_for(cfg_.backbone_id);  // membership check, throws IdentityError
  for (std::uint32_t id : shard_.sample_ids) {
    if (id >= data_->size()) throw DataError("shard references a sample outside the dataset");
  }
  cost_.backbone_bytes = backbone_->param_bytes(2);
}

std::size_t ClientRuntime::batches_total() const {
  return (shard_.sample_ids.size() + cfg_.batch_size - 1) / cfg_.batch_size;
}

std::size_t ClientRuntime::batch_rows(std::size_t batch_index) const {
  const std::size_t start = batch_index * cfg_.batch_size;
  if (start >= shard_.sample_ids.size()) return 0;
  return std::min<std::size_t>(cfg_.batch_size, shard_.sample_ids.size() - start);
}

double ClientRuntime::step_flops(std::size_t batch) const {
  return backbone_->forward_flops(data_->task.seq, batch);
}

std::uint64_t ClientRuntime::step_upload_bytes(std::size_t batch) const {
  const auto& taps = plan_->taps_for(cfg_.backbone_id);
  return packet_frame_bytes(static_cast<std::uint16_t>(taps.size()),
                            static_cast<std::uint16_t>(batch),
                            static_cast<std::uint16_t>(data_->task.seq),
                            backbone_->config().hidden,
                            static_cast<std::uint16_t>(backbone_->config().num_classes),
                            cfg_.backbone_id.size());
}

std::optional<ActivationPacket> ClientRuntime::process_batch() {
  if (exhausted()) return std::nullopt;
  const std::size_t batch = std::min<std::size_t>(cfg_.batch_size,
                                                  shard_.sample_ids.size() - next_);
  const std::size_t seq = data_->task.seq;

  std::vector<std::uint32_t> sample_ids(shard_.sample_ids.begin() + next_,
                                        shard_.sample_ids.begin() + next_ + batch);
  std::vector<std::uint32_t> tokens(batch * seq);
  std::vector<std::uint32_t> labels(batch);
  for (std::size_t i = 0; i < batch; ++i) {
    const std::uint32_t sid = sample_ids[i];
    std::copy(data_->sample_tokens(sid), data_->sample_tokens(sid) + seq, &tokens[i * seq]);
    labels[i] = data_->labels[sid];
  }

  const auto& taps = plan_->taps_for(cfg_.backbone_id);
  FrozenBackbone::TapsResult fw = backbone_->forward_with_taps(tokens, batch, seq, taps);
  Tensor deviation = SideNetwork::compute_deviation(fw.logits, labels);

  // Everything that crosses the wire passes through 16-bit precision here, so
  // the sender's view and any receiver's view are the same numbers.
  for (Tensor& t : fw.taps) quantize_in_place(t);
  quantize_in_place(deviation);

  ActivationPacket p;
  p.client_id = cfg_.client_id;
  p.backbone_id = cfg_.backbone_id;
  p.sample_ids = std::move(sample_ids);
  p.seq = static_cast<std::uint16_t>(seq);
  p.hidden = backbone_->config().hidden;
  p.num_classes = static_cast<std::uint16_t>(backbone_->config().num_classes);
  p.epoch_flag = 0;
  p.blocks = std::move(fw.taps);
  p.deviation = std::move(deviation);

  next_ += batch;
  ++batches_done_;
  cost_.forward_flops += step_flops(batch);
  cost_.upload_bytes += step_upload_bytes(batch);
  cost_.packets += 1;
  const std::uint64_t staged =
      2ull * taps.size() * batch * seq * backbone_->config().hidden +
      2ull * batch * backbone_->config().num_classes;
  cost_.activation_bytes = std::max(cost_.activation_bytes, staged);
  return p;
}

}  // namespace fedmobi
