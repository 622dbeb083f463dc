#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <numeric>

#include "doctest.h"
#include "fedmobi/client.hpp"
#include "fedmobi/float16.hpp"
#include "fedmobi/sidenet.hpp"

using namespace fedmobi;

namespace {

struct Rig {
  BackboneConfig bc;
  FrozenBackbone backbone;
  AlignmentPlan plan;
  Dataset data;

  static Rig make(std::size_t samples = 20) {
    BackboneConfig bc;
    bc.id = "tiny";
    bc.num_layers = 4;
    bc.hidden = 32;
    bc.heads = 4;
    bc.vocab = 64;
    bc.max_seq = 32;
    bc.init_seed = 2;
    SyntheticTaskConfig task;
    task.seq = 12;
    return Rig{bc, FrozenBackbone::build(bc), make_plan({bc}),
               generate_dataset(task, samples, 6)};
  }
};

Shard first_n(std::size_t n) {
  Shard s;
  s.sample_ids.resize(n);
  std::iota(s.sample_ids.begin(), s.sample_ids.end(), 0);
  return s;
}

ClientConfig client_cfg(std::uint32_t batch) {
  ClientConfig c;
  c.client_id = 3;
  c.backbone_id = "tiny";
  c.batch_size = batch;
  return c;
}

}  // namespace

TEST_CASE("single pass emits every shard sample exactly once, in order") {
  Rig rig = Rig::make(20);
  ClientRuntime client(client_cfg(8), rig.backbone, rig.plan, rig.data, first_n(20));
  CHECK(client.batches_total() == 3);  // 8 + 8 + 4
  CHECK(client.batch_rows(0) == 8);
  CHECK(client.batch_rows(2) == 4);
  CHECK(client.samples_total() == 20);

  std::vector<std::uint32_t> seen;
  std::size_t packets = 0;
  while (auto p = client.process_batch()) {
    ++packets;
    CHECK(p->client_id == 3);
    CHECK(p->backbone_id == "tiny");
    CHECK(p->epoch_flag == 0);
    CHECK(p->seq == 12);
    CHECK(p->hidden == 32);
    CHECK(p->num_classes == 4);
    CHECK(p->block_count() == rig.plan.block_count);
    seen.insert(seen.end(), p->sample_ids.begin(), p->sample_ids.end());
  }
  CHECK(packets == 3);
  CHECK(client.exhausted());
  CHECK(client.batches_done() == 3);
  CHECK(!client.process_batch().has_value());  // stays exhausted
  std::vector<std::uint32_t> expect(20);
  std::iota(expect.begin(), expect.end(), 0);
  CHECK(seen == expect);
}

TEST_CASE("packets carry wire-precision activations and deviations") {
  Rig rig = Rig::make(8);
  ClientRuntime client(client_cfg(8), rig.backbone, rig.plan, rig.data, first_n(8));
  auto p = client.process_batch();
  REQUIRE(p.has_value());
  for (const Tensor& blk : p->blocks)
    for (double v : blk.data()) CHECK(float16_quantize(v) == v);
  for (double v : p->deviation.data()) CHECK(float16_quantize(v) == v);

  // deviation equals the on-device computation from raw logits, then quantized
  std::vector<std::uint32_t> toks;
  std::vector<std::uint32_t> labels;
  for (std::uint32_t i = 0; i < 8; ++i) {
    const std::uint32_t* t = rig.data.sample_tokens(i);
    toks.insert(toks.end(), t, t + rig.data.task.seq);
    labels.push_back(rig.data.labels[i]);
  }
  const Tensor logits = rig.backbone.forward_logits(toks, 8, rig.data.task.seq);
  Tensor dev = SideNetwork::compute_deviation(logits, labels);
  for (std::size_t i = 0; i < dev.numel(); ++i)
    CHECK(p->deviation.data()[i] == float16_quantize(dev.data()[i]));

  // and the blocks are the tapped activations, quantized
  const auto ref = rig.backbone.forward_with_taps(toks, 8, rig.data.task.seq,
                                                  rig.plan.taps_for("tiny"));
  for (std::size_t j = 0; j < ref.taps.size(); ++j)
    for (std::size_t i = 0; i < ref.taps[j].numel(); ++i)
      CHECK(p->blocks[j].data()[i] == float16_quantize(ref.taps[j].data()[i]));
}

TEST_CASE("cost ledger accounts every byte and flop") {
  Rig rig = Rig::make(20);
  ClientRuntime client(client_cfg(8), rig.backbone, rig.plan, rig.data, first_n(20));
  double flops = 0.0;
  std::uint64_t bytes = 0;
  std::size_t k = 0;
  while (auto p = client.process_batch()) {
    flops += client.step_flops(p->batch());
    bytes += packet_frame_bytes(p->block_count(), p->batch(), p->seq, p->hidden,
                                p->num_classes, p->backbone_id.size());
    CHECK(client.step_upload_bytes(p->batch()) ==
          packet_frame_bytes(p->block_count(), p->batch(), p->seq, p->hidden, p->num_classes,
                             p->backbone_id.size()));
    CHECK(encode_packet(*p).size() == client.step_upload_bytes(p->batch()));
    ++k;
  }
  const ClientCost& cost = client.cost();
  CHECK(cost.packets == k);
  CHECK(cost.forward_flops == doctest::Approx(flops));
  CHECK(cost.upload_bytes == bytes);
  CHECK(cost.optimizer_bytes == 0);
  CHECK(cost.retained_graph_bytes == 0);
  CHECK(cost.backbone_bytes == rig.backbone.param_bytes(2));
  CHECK(cost.activation_bytes > 0);
  CHECK(cost.peak_memory_bytes() == cost.backbone_bytes + cost.activation_bytes);
}

TEST_CASE("constructor rejects inconsistent wiring") {
  Rig rig = Rig::make(10);
  // shard id beyond the dataset
  Shard bad;
  bad.sample_ids = {0, 1, 99};
  CHECK_THROWS_AS(ClientRuntime(client_cfg(4), rig.backbone, rig.plan, rig.data, bad),
                  DataError);
  // config names a different backbone than the one wired in
  ClientConfig wrong = client_cfg(4);
  wrong.backbone_id = "other";
  CHECK_THROWS_AS(ClientRuntime(wrong, rig.backbone, rig.plan, rig.data, first_n(4)),
                  IdentityError);
  // plan lacks this backbone
  BackboneConfig other = rig.bc;
  other.id = "other";
  const AlignmentPlan foreign = make_plan({other});
  CHECK_THROWS_AS(ClientRuntime(client_cfg(4), rig.backbone, foreign, rig.data, first_n(4)),
                  IdentityError);
  // batch size zero
  ClientConfig zero = client_cfg(0);
  CHECK_THROWS_AS(ClientRuntime(zero, rig.backbone, rig.plan, rig.data, first_n(4)),
                  ConfigError);
}

TEST_CASE("packet wire round trip") {
  Rig rig = Rig::make(8);
  ClientRuntime client(client_cfg(5), rig.backbone, rig.plan, rig.data, first_n(8));
  auto p = client.process_batch();
  REQUIRE(p.has_value());
  const std::vector<std::uint8_t> wire = encode_packet(*p);
  const ActivationPacket back = decode_packet(wire);
  CHECK(back.client_id == p->client_id);
  CHECK(back.backbone_id == p->backbone_id);
  CHECK(back.sample_ids == p->sample_ids);
  CHECK(back.seq == p->seq);
  CHECK(back.hidden == p->hidden);
  CHECK(back.num_classes == p->num_classes);
  CHECK(back.epoch_flag == p->epoch_flag);
  REQUIRE(back.blocks.size() == p->blocks.size());
  for (std::size_t j = 0; j < back.blocks.size(); ++j)
    CHECK(back.blocks[j].checksum() == p->blocks[j].checksum());
  CHECK(back.deviation.checksum() == p->deviation.checksum());
  CHECK(back.digest() == p->digest());
  CHECK(back.digest(7) == p->digest(7));
  CHECK(back.digest(7) != p->digest(8));

  // corrupted frames are rejected with a reason
  std::vector<std::uint8_t> cut(wire.begin(), wire.begin() + wire.size() / 2);
  CHECK_THROWS_AS(decode_packet(cut), ProtocolError);
  std::vector<std::uint8_t> magic = wire;
  magic[4] ^= 0xff;
  CHECK_THROWS_AS(decode_packet(magic), ProtocolError);
  std::vector<std::uint8_t> padded = wire;
  padded.push_back(0);
  CHECK_THROWS_AS(decode_packet(padded), ProtocolError);
  std::vector<std::uint8_t> version = wire;
  version[8] = 0x7f;
  CHECK_THROWS_AS(decode_packet(version), ProtocolError);

  // closed-form frame size matches reality
  CHECK(wire.size() == packet_frame_bytes(p->block_count(), p->batch(), p->seq, p->hidden,
                                          p->num_classes, p->backbone_id.size()));
}
