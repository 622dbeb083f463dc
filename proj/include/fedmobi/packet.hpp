#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedmobi/tensor.hpp"

namespace fedmobi {

// One uploaded batch: sampled activations plus the output deviation. Holds no
// tokens and no labels; the deviation is the only label-derived quantity that
// crosses the wire. Block and deviation values are already quantized through
// the 16-bit wire precision when the packet is produced, so encoding is
// lossless and every consumer sees bit-identical numbers.
struct ActivationPacket {
  std::uint32_t client_id = 0;
  std::string backbone_id;
  std::vector<std::uint32_t> sample_ids;  // one per row in the batch
  std::uint16_t seq = 0;
  std::uint32_t hidden = 0;
  std::uint16_t num_classes = 0;
  std::uint8_t epoch_flag = 0;            // single-pass protocol: always 0
  std::vector<Tensor> blocks;             // block_count tensors [batch, seq, hidden]
  Tensor deviation;                       // [batch, num_classes]

  std::uint16_t batch() const { return static_cast<std::uint16_t>(sample_ids.size()); }
  std::uint16_t block_count() const { return static_cast<std::uint16_t>(blocks.size()); }
  // Stable content digest over the encoded bytes.
  std::uint64_t digest(std::uint64_t salt = 0) const;
};

// Wire layout, little-endian, one packet per frame:
//   u32  frame length (bytes that follow)
//   u8[4]  magic "FMLP"
//   u16  version (1)
//   u32  client_id
//   u16  backbone id length, then that many bytes
//   u16  block count B
//   u16  batch
//   u16  seq
//   u32  hidden
//   u16  num_classes
//   u8   epoch_flag
//   u32[batch]  sample ids
//   B x batch*seq*hidden  binary16 block payloads, row-major
//   batch*num_classes     binary16 deviation payload
std::vector<std::uint8_t> encode_packet(const ActivationPacket& p);
ActivationPacket decode_packet(const std::uint8_t* bytes, std::size_t len);
ActivationPacket decode_packet(const std::vector<std::uint8_t>& bytes);

// Closed-form frame size (including the length prefix) for cost accounting.
std::uint64_t packet_frame_bytes(std::uint16_t block_count, std::uint16_t batch,
                                 std::uint16_t seq, std::uint32_t hidden,
                                 std::uint16_t num_classes, std::size_t backbone_id_len);

}  // namespace fedmobi
