#include "fedmobi/diagnostics.hpp"

#include <functional>

#include "fedmobi/alignment.hpp"
#include "fedmobi/float16.hpp"
#include "fedmobi/packet.hpp"
#include "fedmobi/rng.hpp"
#include "fedmobi/sidenet.hpp"
#include "fedmobi/tensor.hpp"

namespace fedmobi {

namespace {

Tensor randn(Rng& rng, std::vector<std::size_t> shape, double stddev, bool trainable) {
  Tensor t = Tensor::zeros(std::move(shape), trainable);
  for (double& v : t.data()) v = rng.normal(0.0, stddev);
  return t;
}

struct Case {
  std::string name;
  std::function<double(std::uint64_t)> run;  // returns max relative error
};

double check(ParamGroup& params, const std::function<Tensor()>& f) {
  return grad_check(f, params);
}

}  // namespace

std::vector<DiagnosticResult> gradcheck_suite(std::uint64_t seed, double bound) {
  std::vector<Case> cases;

  cases.push_back({"matmul", [](std::uint64_t s) {
    Rng rng(derive_seed(s, "gc.matmul"));
    ParamGroup p;
    Tensor& a = p.add("a", randn(rng, {3, 4}, 0.8, true));
    Tensor& b = p.add("b", randn(rng, {4, 2}, 0.8, true));
    return check(p, [&] { return sum_squares(matmul(a, b)); });
  }});
  cases.push_back({"transpose", [](std::uint64_t s) {
    Rng rng(derive_seed(s, "gc.transpose"));
    ParamGroup p;
    Tensor& a = p.add("a", randn(rng, {3, 4}, 0.8, true));
    Tensor c = randn(rng, {3, 2}, 0.7, false);
    return check(p, [&] { return sum_squares(matmul(transpose(a), c)); });
  }});
  cases.push_back({"add", [](std::uint64_t s) {
    Rng rng(derive_seed(s, "gc.add"));
    ParamGroup p;
    Tensor& a = p.add("a", randn(rng, {2, 5}, 0.8, true));
    Tensor& b = p.add("b", randn(rng, {2, 5}, 0.8, true));
    return check(p, [&] { return sum_squares(add(a, b)); });
  }});
  cases.push_back({"add_bias", [](std::uint64_t s) {
    Rng rng(derive_seed(s, "gc.add_bias"));
    ParamGroup p;
    Tensor& a = p.add("a", randn(rng, {3, 4}, 0.8, true));
    Tensor& b = p.add("b", randn(rng, {4}, 0.8, true));
    return check(p, [&] { return sum_squares(add_bias(a, b)); });
  }});
  cases.push_back({"affine", [](std::uint64_t s) {
    Rng rng(derive_seed(s, "gc.affine"));
    ParamGroup p;
    Tensor& a = p.add("a", randn(rng, {2, 3}, 0.8, true));
    return check(p, [&] { return sum_squares(affine(a, 1.7, -0.3)); });
  }});
  cases.push_back({"broadcast_scale", [](std::uint64_t s) {
    Rng rng(derive_seed(s, "gc.broadcast_scale"));
    ParamGroup p;
    Tensor& a = p.add("a", randn(rng, {2, 3}, 0.8, true));
    Tensor& g = p.add("g", randn(rng, {1}, 0.5, true));
    return check(p, [&] { return sum_squares(broadcast_scale(a, g)); });
  }});
  cases.push_back({"sigmoid", [](std::uint64_t s) {
    Rng rng(derive_seed(s, "gc.sigmoid"));
    ParamGroup p;
    Tensor& a = p.add("a", randn(rng, {2, 4}, 1.2, true));
    return check(p, [&] { return sum_squares(sigmoid(a)); });
  }});
  cases.push_back({"gelu", [](std::uint64_t s) {
    Rng rng(derive_seed(s, "gc.gelu"));
    ParamGroup p;
    Tensor& a = p.add("a", randn(rng, {2, 4}, 1.2, true));
    return check(p, [&] { return sum_squares(gelu(a)); });
  }});
  cases.push_back({"layernorm", [](std::uint64_t s) {
    Rng rng(derive_seed(s, "gc.layernorm"));
    ParamGroup p;
    Tensor& x = p.add("x", randn(rng, {3, 5}, 1.0, true));
    Tensor& g = p.add("g", randn(rng, {5}, 0.3, true));
    Tensor& b = p.add("b", randn(rng, {5}, 0.3, true));
    Tensor target = randn(rng, {3, 5}, 0.5, false);
    return check(p, [&] { return mse(layernorm(x, g, b), target); });
  }});
  cases.push_back({"softmax", [](std::uint64_t s) {
    Rng rng(derive_seed(s, "gc.softmax"));
    ParamGroup p;
    Tensor& x = p.add("x", randn(rng, {3, 4}, 1.0, true));
    Tensor target = randn(rng, {3, 4}, 0.4, false);
    return check(p, [&] { return mse(softmax(x), target); });
  }});
  cases.push_back({"embedding", [](std::uint64_t s) {
    Rng rng(derive_seed(s, "gc.embedding"));
    ParamGroup p;
    Tensor& table = p.add("table", randn(rng, {6, 3}, 0.8, true));
    const std::vector<std::uint32_t> ids{1, 4, 1, 0, 5};
    return check(p, [&] { return sum_squares(embedding(table, ids)); });
  }});
  cases.push_back({"mean_seq", [](std::uint64_t s) {
    Rng rng(derive_seed(s, "gc.mean_seq"));
    ParamGroup p;
    Tensor& x = p.add("x", randn(rng, {2, 3, 4}, 0.8, true));
    return check(p, [&] { return sum_squares(mean_seq(x)); });
  }});
  cases.push_back({"reshape", [](std::uint64_t s) {
    Rng rng(derive_seed(s, "gc.reshape"));
    ParamGroup p;
    Tensor& x = p.add("x", randn(rng, {2, 6}, 0.8, true));
    return check(p, [&] { return sum_squares(reshape(x, {3, 4})); });
  }});
  cases.push_back({"mse", [](std::uint64_t s) {
    Rng rng(derive_seed(s, "gc.mse"));
    ParamGroup p;
    Tensor& x = p.add("x", randn(rng, {3, 3}, 0.8, true));
    Tensor target = randn(rng, {3, 3}, 0.8, false);
    return check(p, [&] { return mse(x, target); });
  }});
  cases.push_back({"sum_squares", [](std::uint64_t s) {
    Rng rng(derive_seed(s, "gc.sum_squares"));
    ParamGroup p;
    Tensor& x = p.add("x", randn(rng, {4, 2}, 0.8, true));
    return check(p, [&] { return sum_squares(x); });
  }});
  cases.push_back({"cross_entropy", [](std::uint64_t s) {
    Rng rng(derive_seed(s, "gc.cross_entropy"));
    ParamGroup p;
    Tensor& x = p.add("x", randn(rng, {3, 4}, 1.0, true));
    const std::vector<std::uint32_t> labels{2, 0, 3};
    return check(p, [&] { return cross_entropy(x, labels); });
  }});
  cases.push_back({"sidenet_loss", [](std::uint64_t s) {
    Rng rng(derive_seed(s, "gc.sidenet"));
    AlignmentPlan plan;
    plan.block_count = 2;
    plan.side_hidden = 5;
    plan.num_classes = 3;
    plan.tap_layers["g"] = {1, 2};
    plan.hidden_of["g"] = 6;
    SideNetConfig sc;
    sc.rank = 2;
    sc.init_seed = derive_seed(s, "gc.sidenet.init");
    SideNetwork net = SideNetwork::build(plan, sc);
    // The zero initialization of adapter ups and gates parks some parameters
    // at zero-gradient points; one optimizer-free nudge moves everything off
    // the origin so the check exercises live paths.
    Rng jitter(derive_seed(s, "gc.sidenet.jitter"));
    for (auto& [name, t] : net.params().all())
      for (double& v : t.data()) v += jitter.normal(0.0, 0.05);
    ActivationPacket p;
    p.client_id = 1;
    p.backbone_id = "g";
    p.sample_ids = {0, 1};
    p.seq = 3;
    p.hidden = 6;
    p.num_classes = 3;
    p.blocks.push_back(randn(rng, {2, 3, 6}, 0.8, false));
    p.blocks.push_back(randn(rng, {2, 3, 6}, 0.8, false));
    p.deviation = randn(rng, {2, 3}, 0.4, false);
    for (Tensor& b : p.blocks)
      for (double& v : b.data()) v = float16_quantize(v);
    for (double& v : p.deviation.data()) v = float16_quantize(v);
    return grad_check([&] { return net.loss(p); }, net.params());
  }});

  std::vector<DiagnosticResult> out;
  for (const Case& c : cases) {
    DiagnosticResult r;
    r.name = c.name;
    r.bound = bound;
    r.max_rel_err = c.run(seed);
    r.pass = r.max_rel_err < bound;
    out.push_back(r);
  }
  return out;
}

}  // namespace fedmobi
