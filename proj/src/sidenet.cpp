#include "fedmobi/sidenet.hpp"

#include <cmath>
#include <cstring>
#include <fstream>

#include "fedmobi/errors.hpp"
#include "fedmobi/rng.hpp"

namespace fedmobi {

namespace {

constexpr std::uint8_t kCkptMagic[4] = {'F', 'M', 'C', 'K'};
constexpr std::uint16_t kCkptVersion = 1;

Tensor normal_init(Rng& rng, std::vector<std::size_t> shape, double stddev) {
  Tensor t = Tensor::zeros(std::move(shape), true);
  for (double& v : t.data()) v = rng.normal(0.0, stddev);
  return t;
}

std::string adapter_name(std::uint32_t j, const char* leaf) {
  return "adapter." + std::to_string(j) + "." + leaf;
}

void write_u16(std::ofstream& out, std::uint16_t v) {
  std::uint8_t b[2] = {static_cast<std::uint8_t>(v & 0xff), static_cast<std::uint8_t>(v >> 8)};
  out.write(reinterpret_cast<const char*>(b), 2);
}

void write_u32(std::ofstream& out, std::uint32_t v) {
  std::uint8_t b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<std::uint8_t>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 4);
}

void write_u64(std::ofstream& out, std::uint64_t v) {
  std::uint8_t b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<std::uint8_t>((v >> (8 * i)) & 0xff);
  out.write(reinterpret_cast<const char*>(b), 8);
}

void write_f64(std::ofstream& out, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, 8);
  write_u64(out, bits);
}

std::uint8_t read_u8(std::ifstream& in) {
  char c;
  if (!in.get(c)) throw StateError("checkpoint truncated");
  return static_cast<std::uint8_t>(c);
}

std::uint16_t read_u16(std::ifstream& in) {
  std::uint16_t v = read_u8(in);
  v = static_cast<std::uint16_t>(v | (read_u8(in) << 8));
  return v;
}

std::uint32_t read_u32(std::ifstream& in) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(read_u8(in)) << (8 * i);
  return v;
}

std::uint64_t read_u64(std::ifstream& in) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(read_u8(in)) << (8 * i);
  return v;
}

double read_f64(std::ifstream& in) {
  std::uint64_t bits = read_u64(in);
  double v;
  std::memcpy(&v, &bits, 8);
  return v;
}

}  // namespace

void SideNetConfig::validate() const {
  if (rank == 0) throw ConfigError("side-network rank must be positive");
}

SideNetwork SideNetwork::build(const AlignmentPlan& plan, const SideNetConfig& cfg) {
  cfg.validate();
  if (plan.block_count == 0 || plan.side_hidden == 0 || plan.num_classes == 0)
    throw ConfigError("side-network needs a populated alignment plan");
  SideNetwork net;
  net.plan_ = plan;
  net.cfg_ = cfg;

  Rng rng(derive_seed(cfg.init_seed, "sidenet"));
  const std::size_t d = plan.side_hidden;
  const std::size_t r = cfg.rank;
  const std::size_t C = plan.num_classes;

  // Draw order is fixed: projections in backbone-id order, then adapters in
  // block order, then the head. Changing it changes every initialization.
  for (const auto& [id, hidden] : plan.hidden_of) {
    const std::size_t h = hidden;
    net.params_.add("proj." + id, normal_init(rng, {h, d}, 1.0 / std::sqrt(static_cast<double>(h))));
  }
  for (std::uint32_t j = 1; j <= plan.block_count; ++j) {
    net.params_.add(adapter_name(j, "down"),
                    normal_init(rng, {d, r}, 1.0 / std::sqrt(static_cast<double>(d))));
    net.params_.add(adapter_name(j, "up"), Tensor::zeros({r, d}, true));
    net.params_.add(adapter_name(j, "gate"), Tensor::zeros({1}, true));
  }
  net.params_.add("head.w", normal_init(rng, {d, C}, 0.02));
  net.params_.add("head.b", Tensor::zeros({C}, true));
  return net;
}

Tensor SideNetwork::forward(const std::string& backbone_id,
                            const std::vector<Tensor>& blocks) const {
  const std::uint32_t hidden = plan_.hidden_for(backbone_id);
  if (blocks.size() != plan_.block_count)
    throw ShapeError("side-network forward expects one tensor per aligned block");
  if (blocks.front().rank() != 3) throw ShapeError("activation blocks must be [batch, seq, hidden]");
  const std::size_t batch = blocks.front().dim(0);
  const std::size_t seq = blocks.front().dim(1);
  const std::size_t tokens = batch * seq;
  const std::size_t d = plan_.side_hidden;
  for (const Tensor& b : blocks) {
    const std::vector<std::size_t> want{batch, seq, static_cast<std::size_t>(hidden)};
    if (b.shape() != want) throw ShapeError("activation block shape mismatch");
  }

  const Tensor& proj = params_.at("proj." + backbone_id);
  Tensor state = Tensor::zeros({tokens, d});
  for (std::uint32_t j = 1; j <= plan_.block_count; ++j) {
    Tensor x = reshape(blocks[j - 1], {tokens, static_cast<std::size_t>(hidden)});
    Tensor p = matmul(x, proj);
    Tensor a = matmul(gelu(matmul(p, params_.at(adapter_name(j, "down")))),
                      params_.at(adapter_name(j, "up")));
    Tensor g = sigmoid(params_.at(adapter_name(j, "gate")));
    Tensor keep = affine(g, -1.0, 1.0);
    state = add(broadcast_scale(state, keep), broadcast_scale(a, g));
  }
  Tensor pooled = mean_seq(reshape(state, {batch, seq, d}));
  return add_bias(matmul(pooled, params_.at("head.w")), params_.at("head.b"));
}

Tensor SideNetwork::compute_deviation(const Tensor& logits,
                                      const std::vector<std::uint32_t>& labels) {
  if (logits.rank() != 2) throw ShapeError("deviation expects [batch, classes] logits");
  const std::size_t batch = logits.dim(0);
  const std::size_t classes = logits.dim(1);
  if (labels.size() != batch) throw ShapeError("one label per batch row required");
  Tensor probs = softmax(logits);
  std::vector<double> out = probs.data();
  for (std::size_t i = 0; i < batch; ++i) {
    if (labels[i] >= classes) throw DataError("label out of class range");
    out[i * classes + labels[i]] -= 1.0;
  }
  return Tensor::from({batch, classes}, std::move(out));
}

Tensor SideNetwork::loss(const ActivationPacket& p) const {
  if (p.num_classes != plan_.num_classes) throw ShapeError("packet class count mismatch");
  Tensor correction = forward(p.backbone_id, p.blocks);
  Tensor residual = add(correction, p.deviation);
  return scale(sum_squares(residual), 1.0 / static_cast<double>(p.batch()));
}

std::vector<std::uint32_t> SideNetwork::corrected_predict(const Tensor& logits,
                                                          const Tensor& correction) {
  if (logits.shape() != correction.shape() || logits.rank() != 2)
    throw ShapeError("logits and correction must both be [batch, classes]");
  const std::size_t batch = logits.dim(0);
  const std::size_t classes = logits.dim(1);
  Tensor probs = softmax(logits);
  const std::vector<double>& pd = probs.data();
  const std::vector<double>& cd = correction.data();
  std::vector<std::uint32_t> out(batch);
  for (std::size_t i = 0; i < batch; ++i) {
    std::size_t best = 0;
    double best_v = pd[i * classes] + cd[i * classes];
    for (std::size_t c = 1; c < classes; ++c) {
      const double v = pd[i * classes + c] + cd[i * classes + c];
      if (v > best_v) {
        best_v = v;
        best = c;
      }
    }
    out[i] = static_cast<std::uint32_t>(best);
  }
  return out;
}

double SideNetwork::forward_flops(const std::string& backbone_id, std::size_t batch,
                                  std::size_t seq) const {
  const double h = plan_.hidden_for(backbone_id);
  const double d = plan_.side_hidden;
  const double r = cfg_.rank;
  const double C = plan_.num_classes;
  const double B = plan_.block_count;
  const double tokens = static_cast<double>(batch) * static_cast<double>(seq);
  double per_block = 2.0 * tokens * h * d;       // projection
  per_block += 2.0 * tokens * d * r;             // adapter down
  per_block += tokens * r;                       // gelu
  per_block += 2.0 * tokens * r * d;             // adapter up
  per_block += 3.0 * tokens * d + 2.0;           // gate mix
  double total = B * per_block;
  total += static_cast<double>(batch) * d;                 // sequence mean
  total += 2.0 * static_cast<double>(batch) * d * C;       // head matmul
  total += static_cast<double>(batch) * C;                 // head bias
  return total;
}

double SideNetwork::train_step_flops(const std::string& backbone_id, std::size_t batch,
                                     std::size_t seq) const {
  // Reverse mode roughly doubles the forward work.
  return 3.0 * forward_flops(backbone_id, batch, seq);
}

std::vector<double> SideNetwork::block_importance(
    const std::vector<ActivationPacket>& sample) const {
  if (sample.empty()) throw DataError("block importance needs a non-empty packet sample");
  double baseline = 0.0;
  for (const ActivationPacket& p : sample) baseline += loss(p).data()[0];
  baseline /= static_cast<double>(sample.size());

  std::vector<double> scores(plan_.block_count, 0.0);
  for (std::uint32_t j = 0; j < plan_.block_count; ++j) {
    double acc = 0.0;
    for (const ActivationPacket& p : sample) {
      ActivationPacket masked = p;
      masked.blocks[j] = Tensor::zeros(p.blocks[j].shape());
      acc += loss(masked).data()[0];
    }
    scores[j] = acc / static_cast<double>(sample.size()) - baseline;
  }
  return scores;
}

void SideNetwork::save_checkpoint(const std::string& path) const {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw StateError("cannot open checkpoint for writing: " + path);
  out.write(reinterpret_cast<const char*>(kCkptMagic), 4);
  write_u16(out, kCkptVersion);
  write_u64(out, plan_.digest());
  write_u32(out, static_cast<std::uint32_t>(params_.size()));
  for (const auto& [name, t] : params_.all()) {
    write_u16(out, static_cast<std::uint16_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    out.put(static_cast<char>(t.rank()));
    for (std::size_t dim : t.shape()) write_u64(out, dim);
    for (double v : t.data()) write_f64(out, v);
  }
  if (!out) throw StateError("checkpoint write failed: " + path);
}

void SideNetwork::load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StateError("cannot open checkpoint: " + path);
  std::uint8_t magic[4];
  for (std::uint8_t& m : magic) m = read_u8(in);
  if (std::memcmp(magic, kCkptMagic, 4) != 0) throw StateError("not a checkpoint file");
  if (read_u16(in) != kCkptVersion) throw StateError("unsupported checkpoint version");
  const std::uint64_t digest = read_u64(in);
  if (digest != plan_.digest())
    throw StateError("checkpoint was trained under a different alignment plan");
  const std::uint32_t count = read_u32(in);
  if (count != params_.size()) throw StateError("checkpoint parameter count mismatch");
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint16_t name_len = read_u16(in);
    std::string name(name_len, '\0');
    for (char& c : name) c = static_cast<char>(read_u8(in));
    if (!params_.contains(name)) throw StateError("checkpoint has unknown parameter: " + name);
    Tensor& t = params_.at(name);
    const std::uint8_t ndim = read_u8(in);
    std::vector<std::size_t> shape(ndim);
    for (std::size_t& dim : shape) dim = static_cast<std::size_t>(read_u64(in));
    if (shape != t.shape()) throw StateError("checkpoint shape mismatch for " + name);
    for (double& v : t.data()) v = read_f64(in);
  }
}

}  // namespace fedmobi
