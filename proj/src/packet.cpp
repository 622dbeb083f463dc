#include "fedmobi/packet.hpp"

#include <cstring>

#include "fedmobi/errors.hpp"
#include "fedmobi/float16.hpp"
#include "fedmobi/rng.hpp"

namespace fedmobi {

namespace {

constexpr std::uint8_t kMagic[4] = {'F', 'M', 'L', 'P'};
constexpr std::uint16_t kVersion = 1;

void put_u8(std::vector<std::uint8_t>& out, std::uint8_t v) { out.push_back(v); }

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
}

struct Reader {
  const std::uint8_t* p;
  std::size_t n;
  std::size_t pos = 0;

  void need(std::size_t k) const {
    if (pos + k > n) throw ProtocolError("packet truncated");
  }
  std::uint8_t u8() {
    need(1);
    return p[pos++];
  }
  std::uint16_t u16() {
    need(2);
    std::uint16_t v = static_cast<std::uint16_t>(p[pos] | (p[pos + 1] << 8));
    pos += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
};

void put_halves(std::vector<std::uint8_t>& out, const Tensor& t) {
  const std::vector<double>& d = t.data();
  for (double v : d) put_u16(out, float16_encode(v));
}

void read_halves(Reader& r, Tensor& t) {
  std::vector<double>& d = t.data();
  for (double& v : d) v = float16_decode(r.u16());
}

}  // namespace

std::vector<std::uint8_t> encode_packet(const ActivationPacket& p) {
  if (p.backbone_id.empty()) throw ProtocolError("packet missing backbone id");
  if (p.backbone_id.size() > 0xffff) throw ProtocolError("backbone id too long");
  if (p.sample_ids.empty()) throw ProtocolError("packet has empty batch");
  if (p.blocks.empty()) throw ProtocolError("packet has no activation blocks");
  const std::size_t batch = p.sample_ids.size();
  for (const Tensor& b : p.blocks) {
    const std::vector<std::size_t> want{batch, static_cast<std::size_t>(p.seq),
                                        static_cast<std::size_t>(p.hidden)};
    if (b.shape() != want) throw ShapeError("packet block shape mismatch");
  }
  {
    const std::vector<std::size_t> want{batch, static_cast<std::size_t>(p.num_classes)};
    if (p.deviation.shape() != want) throw ShapeError("packet deviation shape mismatch");
  }

  std::vector<std::uint8_t> out;
  const std::uint64_t frame = packet_frame_bytes(p.block_count(), static_cast<std::uint16_t>(batch),
                                                 p.seq, p.hidden, p.num_classes,
                                                 p.backbone_id.size());
  out.reserve(static_cast<std::size_t>(frame));
  put_u32(out, static_cast<std::uint32_t>(frame - 4));
  for (std::uint8_t m : kMagic) put_u8(out, m);
  put_u16(out, kVersion);
  put_u32(out, p.client_id);
  put_u16(out, static_cast<std::uint16_t>(p.backbone_id.size()));
  for (char c : p.backbone_id) put_u8(out, static_cast<std::uint8_t>(c));
  put_u16(out, p.block_count());
  put_u16(out, static_cast<std::uint16_t>(batch));
  put_u16(out, p.seq);
  put_u32(out, p.hidden);
  put_u16(out, p.num_classes);
  put_u8(out, p.epoch_flag);
  for (std::uint32_t id : p.sample_ids) put_u32(out, id);
  for (const Tensor& b : p.blocks) put_halves(out, b);
  put_halves(out, p.deviation);
  if (out.size() != frame) throw ProtocolError("packet frame size accounting is wrong");
  return out;
}

ActivationPacket decode_packet(const std::uint8_t* bytes, std::size_t len) {
  Reader r{bytes, len};
  const std::uint32_t body = r.u32();
  if (static_cast<std::size_t>(body) + 4 != len) throw ProtocolError("packet frame length mismatch");
  for (std::uint8_t m : kMagic) {
    if (r.u8() != m) throw ProtocolError("packet magic mismatch");
  }
  const std::uint16_t version = r.u16();
  if (version != kVersion) throw ProtocolError("unsupported packet version");

  ActivationPacket p;
  p.client_id = r.u32();
  const std::uint16_t id_len = r.u16();
  p.backbone_id.resize(id_len);
  for (std::uint16_t i = 0; i < id_len; ++i) p.backbone_id[i] = static_cast<char>(r.u8());
  const std::uint16_t block_count = r.u16();
  const std::uint16_t batch = r.u16();
  p.seq = r.u16();
  p.hidden = r.u32();
  p.num_classes = r.u16();
  p.epoch_flag = r.u8();
  if (block_count == 0 || batch == 0) throw ProtocolError("packet header has zero extent");
  p.sample_ids.resize(batch);
  for (std::uint16_t i = 0; i < batch; ++i) p.sample_ids[i] = r.u32();
  p.blocks.reserve(block_count);
  for (std::uint16_t b = 0; b < block_count; ++b) {
    Tensor t = Tensor::zeros({batch, p.seq, p.hidden});
    read_halves(r, t);
    p.blocks.push_back(std::move(t));
  }
  p.deviation = Tensor::zeros({batch, p.num_classes});
  read_halves(r, p.deviation);
  if (r.pos != len) throw ProtocolError("packet has trailing bytes");
  return p;
}

ActivationPacket decode_packet(const std::vector<std::uint8_t>& bytes) {
  return decode_packet(bytes.data(), bytes.size());
}

std::uint64_t packet_frame_bytes(std::uint16_t block_count, std::uint16_t batch,
                                 std::uint16_t seq, std::uint32_t hidden,
                                 std::uint16_t num_classes, std::size_t backbone_id_len) {
  std::uint64_t header = 4 + 4 + 2 + 4 + 2 + backbone_id_len + 2 + 2 + 2 + 4 + 2 + 1;
  std::uint64_t ids = 4ull * batch;
  std::uint64_t blocks = 2ull * block_count * batch * seq * hidden;
  std::uint64_t dev = 2ull * batch * num_classes;
  return header + ids + blocks + dev;
}

std::uint64_t ActivationPacket::digest(std::uint64_t salt) const {
  const std::vector<std::uint8_t> bytes = encode_packet(*this);
  return fnv1a64(bytes.data(), bytes.size(), salt ^ 0x9e3779b97f4a7c15ull);
}

}  // namespace fedmobi
