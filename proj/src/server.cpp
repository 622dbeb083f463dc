#include "fedmobi/server.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "fedmobi/errors.hpp"
#include "fedmobi/float16.hpp"

namespace fedmobi {

void ActivationCache::insert(ActivationPacket p) {
  const std::uint64_t k = p.digest(salt_);
  const auto it = std::upper_bound(keys_.begin(), keys_.end(), k);
  const std::size_t pos = static_cast<std::size_t>(it - keys_.begin());
  payload_bytes_ += packet_frame_bytes(p.block_count(), p.batch(), p.seq, p.hidden,
                                       p.num_classes, p.backbone_id.size());
  keys_.insert(it, k);
  records_.insert(records_.begin() + static_cast<std::ptrdiff_t>(pos), std::move(p));
}

std::uint64_t ActivationCache::order_digest() const {
  return fnv1a64(keys_.data(), keys_.size() * sizeof(std::uint64_t));
}

std::size_t ActivationCache::sample(Rng& rng) const {
  if (records_.empty()) throw StateError("cannot sample from an empty cache");
  return static_cast<std::size_t>(rng.uniform_int(static_cast<std::uint64_t>(records_.size())));
}

std::vector<std::size_t> ActivationCache::epoch_order(Rng& rng) const {
  std::vector<std::size_t> order(records_.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  rng.shuffle(order);
  return order;
}

void ActivationCache::spill(const std::string& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw StateError("cannot open spill file for writing: " + path);
  for (const ActivationPacket& p : records_) {
    const std::vector<std::uint8_t> frame = encode_packet(p);
    out.write(reinterpret_cast<const char*>(frame.data()),
              static_cast<std::streamsize>(frame.size()));
  }
  if (!out) throw StateError("spill write failed: " + path);
}

ActivationCache ActivationCache::load(const std::string& path, std::uint64_t salt) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StateError("cannot open spill file: " + path);
  ActivationCache cache(salt);
  for (;;) {
    std::uint8_t prefix[4];
    in.read(reinterpret_cast<char*>(prefix), 4);
    if (in.gcount() == 0 && in.eof()) break;
    if (in.gcount() != 4) throw ProtocolError("spill file truncated");
    std::uint32_t body = 0;
    for (int i = 0; i < 4; ++i) body |= static_cast<std::uint32_t>(prefix[i]) << (8 * i);
    std::vector<std::uint8_t> frame(4 + static_cast<std::size_t>(body));
    std::copy(prefix, prefix + 4, frame.begin());
    in.read(reinterpret_cast<char*>(frame.data() + 4), body);
    if (in.gcount() != static_cast<std::streamsize>(body)) throw ProtocolError("spill file truncated");
    cache.insert(decode_packet(frame));
  }
  return cache;
}

void ServerConfig::validate() const {
  if (optimizer.lr <= 0.0) throw ConfigError("server learning rate must be positive");
}

ServerRuntime::ServerRuntime(SideNetwork net, ServerConfig cfg)
    : net_(std::move(net)), cfg_(cfg), opt_(net_.params(), cfg.optimizer),
      cache_(derive_seed(cfg.cache_seed, "server.cache")),
      replay_rng_(derive_seed(cfg.replay_seed, "server.replay")) {
  cfg_.validate();
}

void ServerRuntime::register_client(std::uint32_t client_id, const std::string& backbone_id) {
  if (phase_ != ServerPhase::Streaming) throw PhaseError("roster is closed after streaming ends");
  if (counters_.packets != 0) throw PhaseError("roster is closed once packets have arrived");
  if (roster_.count(client_id)) throw ProtocolError("client registered twice");
  net_.plan().taps_for(backbone_id);  // throws IdentityError on unknown backbone
  roster_[client_id] = backbone_id;
  done_[client_id] = false;
  uploaded_ids_[client_id] = {};
}

void ServerRuntime::train_step(const ActivationPacket& p, std::uint64_t& counter) {
  net_.params().zero_grads();
  Tensor loss = net_.loss(p);
  const double value = loss.data()[0];
  if (!std::isfinite(value)) throw NumericError("side-network loss diverged");
  backward(loss);
  opt_.step();
  counters_.last_loss = value;
  ++counter;
}

void ServerRuntime::on_packet(const ActivationPacket& p) {
  if (phase_ != ServerPhase::Streaming) throw PhaseError("packet arrived after streaming ended");
  const auto it = roster_.find(p.client_id);
  if (it == roster_.end()) throw ProtocolError("packet from unregistered client");
  if (it->second != p.backbone_id) throw ProtocolError("packet backbone does not match roster");
  if (done_.at(p.client_id)) throw ProtocolError("packet from a client that already finished");
  if (p.num_classes != net_.plan().num_classes) throw ProtocolError("packet class count mismatch");
  if (p.hidden != net_.plan().hidden_for(p.backbone_id))
    throw ProtocolError("packet hidden size does not match the plan");
  if (p.block_count() != net_.plan().block_count)
    throw ProtocolError("packet block count does not match the plan");

  counters_.packets += 1;
  counters_.bytes_received += packet_frame_bytes(p.block_count(), p.batch(), p.seq, p.hidden,
                                                 p.num_classes, p.backbone_id.size());
  auto& ids = uploaded_ids_.at(p.client_id);
  ids.insert(ids.end(), p.sample_ids.begin(), p.sample_ids.end());

  for (std::uint32_t s = 0; s < cfg_.steps_per_arrival; ++s)
    train_step(p, counters_.arrival_steps);
  cache_.insert(p);
}

std::size_t ServerRuntime::idle_replay(std::size_t max_steps) {
  if (phase_ != ServerPhase::Streaming) throw PhaseError("replay only runs while streaming");
  if (cache_.empty()) return 0;
  for (std::size_t s = 0; s < max_steps; ++s)
    train_step(cache_.record(cache_.sample(replay_rng_)), counters_.replay_steps);
  return max_steps;
}

void ServerRuntime::client_done(std::uint32_t client_id) {
  if (phase_ != ServerPhase::Streaming) throw PhaseError("finish signal after streaming ended");
  const auto it = done_.find(client_id);
  if (it == done_.end()) throw ProtocolError("finish signal from unregistered client");
  if (it->second) throw ProtocolError("client finished twice");
  it->second = true;
}

bool ServerRuntime::all_clients_done() const {
  if (done_.empty()) return false;
  for (const auto& [id, d] : done_) {
    if (!d) return false;
  }
  return true;
}

void ServerRuntime::standalone_begin() {
  if (phase_ != ServerPhase::Streaming) throw PhaseError("standalone tuning already started");
  if (!all_clients_done()) throw PhaseError("standalone tuning before every client finished");
  phase_ = ServerPhase::Standalone;
  epochs_run_ = 0;
}

std::size_t ServerRuntime::standalone_epoch() {
  if (phase_ != ServerPhase::Standalone) throw PhaseError("not in the standalone phase");
  const std::vector<std::size_t> order = cache_.epoch_order(replay_rng_);
  for (std::size_t idx : order) train_step(cache_.record(idx), counters_.standalone_steps);
  ++epochs_run_;
  return order.size();
}

void ServerRuntime::standalone_end() {
  if (phase_ != ServerPhase::Standalone) throw PhaseError("not in the standalone phase");
  phase_ = ServerPhase::Done;
}

void ServerRuntime::standalone_tune() {
  standalone_begin();
  for (std::uint32_t e = 0; e < cfg_.standalone_epochs; ++e) standalone_epoch();
  standalone_end();
}

const std::vector<std::uint32_t>& ServerRuntime::uploaded_ids(std::uint32_t client_id) const {
  const auto it = uploaded_ids_.find(client_id);
  if (it == uploaded_ids_.end()) throw ProtocolError("unknown client");
  return it->second;
}

FrozenEvalSet FrozenEvalSet::build(const FrozenBackbone& backbone, const AlignmentPlan& plan,
                                   const Dataset& data, std::size_t batch) {
  if (batch == 0) throw ConfigError("evaluation batch must be positive");
  if (data.size() == 0) throw DataError("evaluation set is empty");
  FrozenEvalSet set;
  set.backbone_id_ = backbone.config().id;
  set.sample_count_ = data.size();
  const auto& taps = plan.taps_for(set.backbone_id_);
  const std::size_t seq = data.task.seq;
  for (std::size_t start = 0; start < data.size(); start += batch) {
    const std::size_t rows = std::min(batch, data.size() - start);
    std::vector<std::uint32_t> tokens(rows * seq);
    Slice slice;
    slice.labels.resize(rows);
    for (std::size_t i = 0; i < rows; ++i) {
      std::copy(data.sample_tokens(start + i), data.sample_tokens(start + i) + seq,
                &tokens[i * seq]);
      slice.labels[i] = data.labels[start + i];
    }
    FrozenBackbone::TapsResult fw = backbone.forward_with_taps(tokens, rows, seq, taps);
    // Taps cross the wire in deployment, so evaluation sees wire precision too.
    for (Tensor& t : fw.taps) {
      for (double& v : t.data()) v = float16_quantize(v);
    }
    slice.taps = std::move(fw.taps);
    slice.logits = std::move(fw.logits);
    set.slices_.push_back(std::move(slice));
  }
  return set;
}

double FrozenEvalSet::raw_accuracy() const {
  std::size_t hits = 0;
  for (const Slice& s : slices_) {
    Tensor zero = Tensor::zeros(s.logits.shape());
    const std::vector<std::uint32_t> pred = SideNetwork::corrected_predict(s.logits, zero);
    for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == s.labels[i];
  }
  return static_cast<double>(hits) / static_cast<double>(sample_count_);
}

double FrozenEvalSet::corrected_accuracy(const SideNetwork& net) const {
  std::size_t hits = 0;
  for (const Slice& s : slices_) {
    const Tensor correction = net.forward(backbone_id_, s.taps);
    const std::vector<std::uint32_t> pred = SideNetwork::corrected_predict(s.logits, correction);
    for (std::size_t i = 0; i < pred.size(); ++i) hits += pred[i] == s.labels[i];
  }
  return static_cast<double>(hits) / static_cast<double>(sample_count_);
}

}  // namespace fedmobi
