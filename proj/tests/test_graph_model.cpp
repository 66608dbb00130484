#include <algorithm>
#include <map>
#include <set>

#include "doctest.h"
#include "nseg/checkpoint.hpp"
#include "nseg/model.hpp"
#include "nseg/rng.hpp"
#include "oracles.hpp"

using namespace nseg;

namespace {

GraphConfig small_config(int depth, int base = 4) {
  GraphConfig cfg;
  cfg.depth = depth;
  cfg.base_channels = base;
  cfg.kernel = 3;
  cfg.input_channels = 1;
  return cfg;
}

/// Test-side reachability oracle: walk node_inputs backwards from the heads.
std::set<NodeId> reachable_from_heads(const GraphConfig& cfg, const std::vector<int>& heads) {
  std::set<NodeId> seen;
  std::vector<NodeId> frontier;
  for (const int j : heads) frontier.push_back(NodeId{0, j});
  while (!frontier.empty()) {
    const NodeId id = frontier.back();
    frontier.pop_back();
    if (!seen.insert(id).second) continue;
    for (const NodeSource& src : node_inputs(id, cfg)) {
      if (src.kind != SourceKind::external_input) frontier.push_back(src.from);
    }
  }
  return seen;
}

}  // namespace

TEST_CASE("node_inputs follows the nested-skip wiring") {
  const GraphConfig cfg = small_config(4);

  const auto root = node_inputs(NodeId{0, 0}, cfg);
  REQUIRE(root.size() == 1);
  CHECK(root[0].kind == SourceKind::external_input);

  const auto enc2 = node_inputs(NodeId{2, 0}, cfg);
  REQUIRE(enc2.size() == 1);
  CHECK(enc2[0].kind == SourceKind::downsample);
  CHECK(enc2[0].from == NodeId{1, 0});

  const auto skip = node_inputs(NodeId{0, 2}, cfg);
  REQUIRE(skip.size() == 3);
  CHECK(skip[0] == NodeSource{SourceKind::feature, NodeId{0, 0}});
  CHECK(skip[1] == NodeSource{SourceKind::feature, NodeId{0, 1}});
  CHECK(skip[2] == NodeSource{SourceKind::upsample, NodeId{1, 1}});

  CHECK_THROWS_AS(node_inputs(NodeId{2, 2}, cfg), ContractError);
  CHECK_THROWS_AS(node_inputs(NodeId{-1, 0}, cfg), ContractError);
}

TEST_CASE("node count and input arity across depths") {
  for (int depth = 2; depth <= 8; ++depth) {
    const GraphConfig cfg = small_config(depth);
    const auto ids = active_nodes(cfg, depth - 1);
    CHECK(static_cast<int>(ids.size()) == depth * (depth + 1) / 2);
    CHECK(static_cast<int>(ids.size()) == cfg.node_count());
    for (const NodeId id : ids) {
      const auto src = node_inputs(id, cfg);
      if (id.pos > 0) {
        CHECK(static_cast<int>(src.size()) == id.pos + 1);
      } else {
        CHECK(src.size() == 1);
      }
    }
  }
}

TEST_CASE("evaluation order exists and respects dependencies up to depth 8") {
  for (int depth = 2; depth <= 8; ++depth) {
    const GraphConfig cfg = small_config(depth);
    const auto order = evaluation_order(cfg, depth - 1);
    CHECK(order.size() == static_cast<std::size_t>(cfg.node_count()));
    std::map<NodeId, std::size_t> position;
    for (std::size_t i = 0; i < order.size(); ++i) position[order[i]] = i;
    for (const NodeId id : order) {
      for (const NodeSource& src : node_inputs(id, cfg)) {
        if (src.kind == SourceKind::external_input) continue;
        CHECK(position.at(src.from) < position.at(id));
      }
    }
  }
}

TEST_CASE("build instantiates every node deterministically") {
  const GraphConfig d4 = small_config(4);
  const auto m4 = NestedUNetF::build(d4, 7);
  CHECK(m4.nodes.size() == 10);
  CHECK(m4.heads.size() == 3);
  CHECK(m4.prune_level == 3);

  const GraphConfig d2 = small_config(2);
  const auto m2 = NestedUNetF::build(d2, 7);
  CHECK(m2.nodes.size() == 3);  // x0_0, x1_0, x0_1
  CHECK(m2.node_index(NodeId{0, 0}) == 0);
  CHECK(m2.node_index(NodeId{0, 1}) == 1);
  CHECK(m2.node_index(NodeId{1, 0}) == 2);

  const auto again = NestedUNetF::build(d4, 7);
  CHECK(checkpoint_bytes(m4) == checkpoint_bytes(again));
  const auto other = NestedUNetF::build(d4, 8);
  CHECK(checkpoint_bytes(m4) != checkpoint_bytes(other));
}

TEST_CASE("closed-form parameter count equals instantiated weight enumeration") {
  // single-unit check is covered in the ops suite; here the whole model
  for (int depth = 2; depth <= 5; ++depth) {
    for (const int base : {4, 8}) {
      const GraphConfig cfg = small_config(depth, base);
      const auto model = NestedUNetF::build(cfg, 3);
      CHECK(param_count(cfg, depth - 1) == model.learned_element_count());
      // strictly increasing in the prune level
      for (int d = 1; d < depth - 1; ++d) {
        CHECK(param_count(cfg, d) < param_count(cfg, d + 1));
      }
    }
  }
}

TEST_CASE("forward yields one probability map per active head, all in (0,1)") {
  const GraphConfig cfg = small_config(4);
  auto model = NestedUNetF::build(cfg, 11);
  SplitMix64 rng(5);
  TensorF batch(Shape{2, 1, 16, 16});
  for (auto& v : batch.data) v = static_cast<float>(rng.uniform());

  const auto maps = model.forward(batch, Mode::train);
  REQUIRE(maps.size() == 3);  // prune_level 3, deep supervision on
  for (const TensorF& m : maps) {
    CHECK(m.shape == Shape{2, 1, 16, 16});
    for (const float v : m.data) {
      CHECK(v > 0.0f);
      CHECK(v < 1.0f);
    }
  }

  model.prune_level = 1;
  CHECK(model.forward(batch, Mode::train).size() == 1);

  model.prune_level = 3;
  model.config.deep_supervision = false;
  CHECK(model.forward(batch, Mode::train).size() == 1);

  TensorF bad(Shape{2, 1, 12, 12});  // not divisible by 2^3
  CHECK_THROWS_AS(model.forward(bad, Mode::train), ContractError);
}

TEST_CASE("mask head: zero weights give 0.5 everywhere, any channel count maps to one") {
  TensorF features(Shape{2, 5, 8, 8});
  SplitMix64 rng(13);
  for (auto& v : features.data) v = static_cast<float>(rng.uniform(-2.0, 2.0));
  ConvParams<float> head{TensorF(Shape{1, 5, 1, 1})};
  const TensorF out = mask_head(features, head);
  CHECK(out.shape == Shape{2, 1, 8, 8});
  for (const float v : out.data) CHECK(v == 0.5f);
  // thresholded at 0.5 the all-zero head claims every pixel as foreground
  int fg = 0;
  for (const float v : out.data) fg += v >= 0.5f ? 1 : 0;
  CHECK(fg == out.size());
}

TEST_CASE("pruned model forward is bitwise identical to the source model's same head") {
  const GraphConfig cfg = small_config(4);
  const auto model = NestedUNetF::build(cfg, 21);
  SplitMix64 rng(9);
  TensorF batch(Shape{1, 1, 16, 16});
  for (auto& v : batch.data) v = static_cast<float>(rng.uniform());

  for (int d = 1; d <= 3; ++d) {
    const NestedUNetF pruned = model.prune(d);
    CHECK(pruned.config.depth == d + 1);
    CHECK(pruned.prune_level == d);
    CHECK(static_cast<int>(pruned.nodes.size()) == (d + 1) * (d + 2) / 2);

    NestedUNetF full = model;
    full.prune_level = d;
    const auto full_maps = full.forward(batch, Mode::infer);
    const auto pruned_maps = pruned.forward(batch, Mode::infer);
    REQUIRE(full_maps.size() == pruned_maps.size());
    CHECK(full_maps.back().data == pruned_maps.back().data);  // bitwise
  }

  CHECK_THROWS_AS(model.prune(0), ContractError);
  CHECK_THROWS_AS(model.prune(4), ContractError);
  CHECK(param_count(cfg, 1) < param_count(cfg, 3));
}

TEST_CASE("prune keeps exactly the i+j <= d nodes") {
  const GraphConfig cfg = small_config(4);
  const auto pruned = NestedUNetF::build(cfg, 2).prune(1);
  CHECK(pruned.nodes.size() == 3);
  const auto ids = active_nodes(pruned.config, 1);
  const std::vector<NodeId> expect{{0, 0}, {0, 1}, {1, 0}};
  CHECK(ids == expect);
}

TEST_CASE("zero head gradients produce all-zero parameter gradients") {
  const GraphConfig cfg = small_config(3, 2);
  const auto model = NestedUNetF::build(cfg, 31);
  SplitMix64 rng(17);
  TensorF batch(Shape{1, 1, 8, 8});
  for (auto& v : batch.data) v = static_cast<float>(rng.uniform());

  const auto trace = model.forward_trace(batch);
  std::vector<TensorF> zero_grads;
  for (int j = 1; j <= 2; ++j) zero_grads.emplace_back(Shape{1, 1, 8, 8});
  const auto grads = model.backward(trace, zero_grads);
  CHECK(!grads.empty());
  for (const auto& [name, g] : grads) {
    for (const float v : g) CHECK(v == 0.0f);
  }

  // wrong gradient count is a contract violation
  std::vector<TensorF> short_grads;
  short_grads.emplace_back(Shape{1, 1, 8, 8});
  CHECK_THROWS_AS(model.backward(trace, short_grads), ContractError);
}

TEST_CASE("gradient entries exist exactly for nodes reachable from the active heads") {
  const GraphConfig cfg = small_config(4, 2);
  auto model = NestedUNetF::build(cfg, 41);
  model.prune_level = 1;
  SplitMix64 rng(19);
  TensorF batch(Shape{1, 1, 16, 16});
  for (auto& v : batch.data) v = static_cast<float>(rng.uniform());

  const auto trace = model.forward_trace(batch);
  std::vector<TensorF> head_grads;
  head_grads.emplace_back(Shape{1, 1, 16, 16}, std::vector<float>(256, 1.0f));
  const auto grads = model.backward(trace, head_grads);

  const std::set<NodeId> reach = reachable_from_heads(cfg, {1});
  for (const NodeId id : active_nodes(cfg, cfg.depth - 1)) {
    const bool has_grad = grads.count(id.str() + "/unit0/conv") > 0;
    CHECK(has_grad == (reach.count(id) > 0));
  }
  CHECK(grads.count("head_1/conv") == 1);
  CHECK(grads.count("head_2/conv") == 0);
  CHECK(grads.count("head_3/conv") == 0);
}

TEST_CASE("whole-network backward matches finite differences end to end") {
  const GraphConfig base = small_config(3, 2);
  GraphConfig cfg = base;
  auto model = NestedUNetD::build(cfg, 5);
  SplitMix64 rng(23);
  TensorD batch(Shape{1, 1, 8, 8});
  for (auto& v : batch.data) v = rng.uniform(0.1, 0.9);
  TensorD mask(Shape{1, 1, 8, 8});
  for (auto& v : mask.data) v = rng.coin() ? 1.0 : 0.0;

  const auto head_positions = model.active_head_positions();
  const double head_scale = 1.0 / static_cast<double>(head_positions.size());

  const auto loss = [&]() {
    const auto maps = model.forward(batch, Mode::train);
    double acc = 0.0;
    for (const auto& m : maps) acc += head_scale * bce_loss(m, mask).loss;
    return acc;
  };

  const auto trace = model.forward_trace(batch);
  std::vector<TensorD> head_grads;
  for (const int j : head_positions) {
    BceResult<double> bce = bce_loss(trace.head_probs.at(j), mask);
    for (auto& g : bce.grad_pred.data) g *= head_scale;
    head_grads.push_back(std::move(bce.grad_pred));
  }
  const auto grads = model.backward(trace, head_grads);

  double worst = 0.0;
  model.for_each_param_mut([&](const ParamRef<double>& p) {
    if (!p.learned) return;
    const auto it = grads.find(p.name);
    REQUIRE(it != grads.end());
    for (std::int64_t i = 0; i < p.count; ++i) {
      const double fd =
          oracle::central_diff(loss, p.values[static_cast<std::size_t>(i)], 1e-6);
      worst = std::max(worst, oracle::rel_err(fd, it->second[static_cast<std::size_t>(i)]));
    }
  });
  CHECK(worst < 1e-4);
}

TEST_CASE("checkpoint round trip is bit exact and rejects corrupt bytes") {
  const GraphConfig cfg = small_config(3);
  auto model = NestedUNetF::build(cfg, 77);
  model.prune_level = 2;

  const std::string bytes = checkpoint_bytes(model);
  CHECK(bytes.substr(0, 6) == "NSEG1\n");
  CHECK(bytes.substr(6, 10) == "3 4 3 1 2\n");

  const NestedUNetF back = checkpoint_from_bytes(bytes);
  CHECK(back.config.depth == 3);
  CHECK(back.config.base_channels == 4);
  CHECK(back.prune_level == 2);
  CHECK(checkpoint_bytes(back) == bytes);

  std::string corrupt = bytes;
  corrupt[0] = 'X';
  CHECK_THROWS_AS(checkpoint_from_bytes(corrupt), DataError);
  CHECK_THROWS_AS(checkpoint_from_bytes(bytes.substr(0, bytes.size() / 2)), DataError);

  // file round trip
  const auto path = std::filesystem::temp_directory_path() / "nseg_test_ckpt.nseg";
  save_checkpoint(path, model);
  const NestedUNetF loaded = load_checkpoint(path);
  CHECK(checkpoint_bytes(loaded) == bytes);
  std::filesystem::remove(path);
}

TEST_CASE("checkpoint parameter order is canonical") {
  const GraphConfig cfg = small_config(2);
  const auto model = NestedUNetF::build(cfg, 1);
  std::vector<std::string> names;
  model.for_each_param([&](const ParamRef<float>& p) { names.push_back(p.name); });
  const std::vector<std::string> expect{
      "x0_0/unit0/conv", "x0_0/unit0/bn_gamma", "x0_0/unit0/bn_beta", "x0_0/unit0/bn_rmean",
      "x0_0/unit0/bn_rvar", "x0_0/unit1/conv", "x0_0/unit1/bn_gamma", "x0_0/unit1/bn_beta",
      "x0_0/unit1/bn_rmean", "x0_0/unit1/bn_rvar", "x0_1/unit0/conv", "x0_1/unit0/bn_gamma",
      "x0_1/unit0/bn_beta", "x0_1/unit0/bn_rmean", "x0_1/unit0/bn_rvar", "x0_1/unit1/conv",
      "x0_1/unit1/bn_gamma", "x0_1/unit1/bn_beta", "x0_1/unit1/bn_rmean", "x0_1/unit1/bn_rvar",
      "x1_0/unit0/conv", "x1_0/unit0/bn_gamma", "x1_0/unit0/bn_beta", "x1_0/unit0/bn_rmean",
      "x1_0/unit0/bn_rvar", "x1_0/unit1/conv", "x1_0/unit1/bn_gamma", "x1_0/unit1/bn_beta",
      "x1_0/unit1/bn_rmean", "x1_0/unit1/bn_rvar", "head_1/conv"};
  CHECK(names == expect);
}

TEST_CASE("graph config validation") {
  GraphConfig cfg = small_config(4);
  cfg.depth = 1;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = small_config(4);
  cfg.kernel = 4;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
  cfg = small_config(4);
  cfg.base_channels = 0;
  CHECK_THROWS_AS(cfg.validate(), ConfigError);
}
