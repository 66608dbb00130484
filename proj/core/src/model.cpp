#include "nseg/model.hpp"

#include <algorithm>
#include <cmath>

#include "nseg/rng.hpp"

namespace nseg {

namespace {

template <typename T>
ConvParams<T> init_conv(int c_out, int c_in, int k, SplitMix64& rng) {
  Tensor<T> w(Shape{c_out, c_in, k, k});
  const double fan_in = static_cast<double>(c_in) * k * k;
  const double bound = std::sqrt(6.0 / fan_in);
  for (auto& v : w.data) v = static_cast<T>(rng.uniform(-bound, bound));
  return ConvParams<T>(std::move(w));
}

std::string unit_prefix(NodeId id, int unit) {
  return id.str() + "/unit" + std::to_string(unit);
}

}  // namespace

template <typename T>
Tensor<T> mask_head(const Tensor<T>& features, const ConvParams<T>& head) {
  return sigmoid_forward(conv2d_forward(features, head));
}

template <typename T>
NestedUNet<T> NestedUNet<T>::build(const GraphConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  NestedUNet<T> model;
  model.config = cfg;
  model.prune_level = cfg.depth - 1;

  SplitMix64 rng(seed);
  for (const NodeId id : active_nodes(cfg, cfg.depth - 1)) {
    NodeBlock<T> block;
    int c_in = node_input_channels(id, cfg);
    const int c_out = cfg.channels_at(id.level);
    for (int unit = 0; unit < GraphConfig::convs_per_node; ++unit) {
      block.units.push_back({init_conv<T>(c_out, c_in, cfg.kernel, rng), BatchNormParams<T>(c_out)});
      c_in = c_out;
    }
    model.nodes.push_back(std::move(block));
  }
  for (int j = 1; j <= cfg.depth - 1; ++j) {
    model.heads.push_back(init_conv<T>(1, cfg.base_channels, 1, rng));
  }
  return model;
}

template <typename T>
int NestedUNet<T>::node_index(NodeId id) const {
  if (!config.valid_node(id) || id.level + id.pos > config.depth - 1) {
    throw ContractError("node " + id.str() + " not stored in this model");
  }
  // nodes are stored by (level asc, pos asc); level i holds depth - i entries
  int offset = 0;
  for (int i = 0; i < id.level; ++i) offset += config.depth - i;
  return offset + id.pos;
}

template <typename T>
std::vector<int> NestedUNet<T>::active_head_positions() const {
  std::vector<int> out;
  if (config.deep_supervision) {
    for (int j = 1; j <= prune_level; ++j) out.push_back(j);
  } else {
    out.push_back(prune_level);
  }
  return out;
}

template <typename T>
void NestedUNet<T>::validate_batch(const Tensor<T>& batch) const {
  if (batch.shape.c != config.input_channels) {
    throw ContractError("batch has " + std::to_string(batch.shape.c) + " channels, model expects " +
                        std::to_string(config.input_channels));
  }
  const int div = 1 << (config.depth - 1);
  if (batch.shape.h % div != 0 || batch.shape.w % div != 0) {
    throw ContractError("input " + std::to_string(batch.shape.h) + "x" +
                        std::to_string(batch.shape.w) + " not divisible by 2^" +
                        std::to_string(config.depth - 1));
  }
}

template <typename T>
std::vector<Tensor<T>> NestedUNet<T>::run_forward(const Tensor<T>& batch, Mode mode,
                                                  ForwardTrace<T>* trace) const {
  validate_batch(batch);
  if (trace) trace->nodes.assign(nodes.size(), std::nullopt);

  std::vector<std::optional<Tensor<T>>> outputs(nodes.size());
  for (const NodeId id : evaluation_order(config, prune_level)) {
    const int idx = node_index(id);
    NodeTrace<T> nt;

    // gather the node input per Eq-style wiring: pooled parent, or the
    // same-level features plus the upsampled lower neighbor
    Tensor<T> x;
    const std::vector<NodeSource> sources = node_inputs(id, config);
    if (sources.size() == 1 && sources[0].kind == SourceKind::external_input) {
      x = batch;
    } else if (sources.size() == 1 && sources[0].kind == SourceKind::downsample) {
      MaxPoolResult<T> pooled = maxpool2x2_forward(*outputs[node_index(sources[0].from)]);
      nt.pool_argmax = std::move(pooled.argmax);
      nt.pool_input_shape = outputs[node_index(sources[0].from)]->shape;
      x = std::move(pooled.output);
    } else {
      std::vector<Tensor<T>> owned;
      owned.reserve(sources.size());  // parts holds pointers into owned
      std::vector<const Tensor<T>*> parts;
      for (const NodeSource& src : sources) {
        if (src.kind == SourceKind::feature) {
          parts.push_back(&*outputs[node_index(src.from)]);
        } else {
          owned.push_back(upsample2x_forward(*outputs[node_index(src.from)]));
          parts.push_back(&owned.back());
        }
      }
      for (const Tensor<T>* p : parts) nt.concat_channels.push_back(p->shape.c);
      x = concat_channels(parts);
    }

    const NodeBlock<T>& block = nodes[static_cast<std::size_t>(idx)];
    for (const ConvBnUnit<T>& unit : block.units) {
      Tensor<T> conv_out = conv2d_forward(x, unit.conv);
      BatchNormResult<T> bn = batchnorm_forward(conv_out, unit.bn, mode);
      Tensor<T> act = relu_forward(bn.output);
      if (trace) {
        nt.units.push_back(UnitTrace<T>{std::move(x), std::move(bn.cache), std::move(bn.updated),
                                        std::move(bn.output)});
      }
      x = std::move(act);
    }
    if (trace) {
      nt.output = x;
      trace->nodes[static_cast<std::size_t>(idx)] = std::move(nt);
    }
    outputs[static_cast<std::size_t>(idx)] = std::move(x);
  }

  std::vector<Tensor<T>> probs;
  for (const int j : active_head_positions()) {
    Tensor<T> p = mask_head(*outputs[node_index(NodeId{0, j})], heads[static_cast<std::size_t>(j - 1)]);
    if (trace) trace->head_probs[j] = p;
    probs.push_back(std::move(p));
  }
  return probs;
}

template <typename T>
std::vector<Tensor<T>> NestedUNet<T>::forward(const Tensor<T>& batch, Mode mode) const {
  return run_forward(batch, mode, nullptr);
}

template <typename T>
ForwardTrace<T> NestedUNet<T>::forward_trace(const Tensor<T>& batch) const {
  ForwardTrace<T> trace;
  run_forward(batch, Mode::train, &trace);
  return trace;
}

template <typename T>
Gradients<T> NestedUNet<T>::backward(const ForwardTrace<T>& trace,
                                     const std::vector<Tensor<T>>& head_grads) const {
  const std::vector<int> head_positions = active_head_positions();
  if (head_grads.size() != head_positions.size()) {
    throw ContractError("backward: expected " + std::to_string(head_positions.size()) +
                        " head gradients, got " + std::to_string(head_grads.size()));
  }

  Gradients<T> grads;
  std::vector<std::optional<Tensor<T>>> out_grad(nodes.size());
  auto accumulate = [&](int idx, Tensor<T>&& g) {
    if (!out_grad[static_cast<std::size_t>(idx)]) {
      out_grad[static_cast<std::size_t>(idx)] = std::move(g);
      return;
    }
    Tensor<T>& acc = *out_grad[static_cast<std::size_t>(idx)];
    for (std::size_t i = 0; i < acc.data.size(); ++i) acc.data[i] += g.data[i];
  };

  // heads: sigmoid then the 1x1 conv, gradient lands on x0_j's output
  for (std::size_t h = 0; h < head_positions.size(); ++h) {
    const int j = head_positions[h];
    const auto prob_it = trace.head_probs.find(j);
    if (prob_it == trace.head_probs.end()) {
      throw ContractError("backward: trace is missing head " + std::to_string(j));
    }
    if (!(head_grads[h].shape == prob_it->second.shape)) {
      throw ContractError("backward: head " + std::to_string(j) + " gradient shape " +
                          head_grads[h].shape.str() + " does not match output " +
                          prob_it->second.shape.str());
    }
    const int idx = node_index(NodeId{0, j});
    const Tensor<T>& features = trace.nodes[static_cast<std::size_t>(idx)]->output;
    Tensor<T> g_logit = sigmoid_backward(prob_it->second, head_grads[h]);
    ConvGrads<T> cg = conv2d_backward(features, heads[static_cast<std::size_t>(j - 1)], g_logit);
    grads["head_" + std::to_string(j) + "/conv"] = std::move(cg.weights.data);
    accumulate(idx, std::move(cg.input));
  }

  // reverse dependency order over the active sub-network
  std::vector<NodeId> order = evaluation_order(config, prune_level);
  std::reverse(order.begin(), order.end());
  for (const NodeId id : order) {
    const int idx = node_index(id);
    const NodeTrace<T>& nt = *trace.nodes[static_cast<std::size_t>(idx)];
    if (!out_grad[static_cast<std::size_t>(idx)]) {
      throw ContractError("backward: no gradient reached active node " + id.str());
    }
    Tensor<T> g = std::move(*out_grad[static_cast<std::size_t>(idx)]);
    out_grad[static_cast<std::size_t>(idx)].reset();

    const NodeBlock<T>& block = nodes[static_cast<std::size_t>(idx)];
    for (int unit = GraphConfig::convs_per_node - 1; unit >= 0; --unit) {
      const UnitTrace<T>& ut = nt.units[static_cast<std::size_t>(unit)];
      const ConvBnUnit<T>& params = block.units[static_cast<std::size_t>(unit)];
      Tensor<T> g_bn = relu_backward(ut.relu_in, g);
      BatchNormGrads<T> bg = batchnorm_backward(ut.bn_cache, g_bn);
      ConvGrads<T> cg = conv2d_backward(ut.conv_in, params.conv, bg.input);
      const std::string prefix = unit_prefix(id, unit);
      grads[prefix + "/conv"] = std::move(cg.weights.data);
      grads[prefix + "/bn_gamma"] = std::move(bg.gamma);
      grads[prefix + "/bn_beta"] = std::move(bg.beta);
      g = std::move(cg.input);
    }

    // route the node-input gradient back along the incoming edges
    const std::vector<NodeSource> sources = node_inputs(id, config);
    if (sources.size() == 1 && sources[0].kind == SourceKind::external_input) {
      continue;  // gradient w.r.t. the network input is not needed
    }
    if (sources.size() == 1 && sources[0].kind == SourceKind::downsample) {
      accumulate(node_index(sources[0].from),
                 maxpool2x2_backward(nt.pool_input_shape, nt.pool_argmax, g));
      continue;
    }
    std::vector<Tensor<T>> parts = concat_backward(g, nt.concat_channels);
    for (std::size_t s = 0; s < sources.size(); ++s) {
      if (sources[s].kind == SourceKind::feature) {
        accumulate(node_index(sources[s].from), std::move(parts[s]));
      } else {
        accumulate(node_index(sources[s].from), upsample2x_backward(parts[s]));
      }
    }
  }
  return grads;
}

template <typename T>
void NestedUNet<T>::commit_batchnorm(const ForwardTrace<T>& trace) {
  for (std::size_t idx = 0; idx < nodes.size(); ++idx) {
    if (!trace.nodes[idx]) continue;
    for (std::size_t unit = 0; unit < nodes[idx].units.size(); ++unit) {
      nodes[idx].units[unit].bn = trace.nodes[idx]->units[unit].bn_updated;
    }
  }
}

template <typename T>
NestedUNet<T> NestedUNet<T>::prune(int d) const {
  if (d < 1 || d > prune_level) {
    throw ContractError("prune level " + std::to_string(d) + " out of range [1, " +
                        std::to_string(prune_level) + "]");
  }
  NestedUNet<T> out;
  out.config = config;
  out.config.depth = d + 1;
  out.prune_level = d;
  for (const NodeId id : active_nodes(out.config, d)) {
    out.nodes.push_back(nodes[static_cast<std::size_t>(node_index(id))]);
  }
  for (int j = 1; j <= d; ++j) out.heads.push_back(heads[static_cast<std::size_t>(j - 1)]);
  return out;
}

template <typename T>
Tensor<T> NestedUNet<T>::predict(const Tensor<T>& batch) const {
  std::vector<Tensor<T>> probs = forward(batch, Mode::infer);
  return std::move(probs.back());  // active heads are ordered; the last is prune_level
}

template <typename T>
std::int64_t NestedUNet<T>::learned_element_count() const {
  std::int64_t total = 0;
  for (const NodeBlock<T>& block : nodes) {
    for (const ConvBnUnit<T>& unit : block.units) {
      total += unit.conv.element_count() + unit.bn.learned_count();
    }
  }
  for (const ConvParams<T>& head : heads) total += head.element_count();
  return total;
}

namespace {

template <typename T, typename Model, typename Fn>
void visit_params(Model& model, Fn&& fn) {
  auto vec_ref = [](const std::string& name, auto& vec, bool learned) {
    ParamRef<T> r;
    r.name = name;
    r.dims = {static_cast<std::uint32_t>(vec.size())};
    r.values = const_cast<T*>(vec.data());
    r.count = static_cast<std::int64_t>(vec.size());
    r.learned = learned;
    return r;
  };
  auto conv_ref = [](const std::string& name, auto& conv) {
    ParamRef<T> r;
    r.name = name;
    const Shape& s = conv.weights.shape;
    r.dims = {static_cast<std::uint32_t>(s.n), static_cast<std::uint32_t>(s.c),
              static_cast<std::uint32_t>(s.h), static_cast<std::uint32_t>(s.w)};
    r.values = const_cast<T*>(conv.weights.data.data());
    r.count = conv.weights.size();
    r.learned = true;
    return r;
  };

  for (const NodeId id : active_nodes(model.config, model.config.depth - 1)) {
    auto& block = model.nodes[static_cast<std::size_t>(model.node_index(id))];
    for (int unit = 0; unit < GraphConfig::convs_per_node; ++unit) {
      auto& u = block.units[static_cast<std::size_t>(unit)];
      const std::string prefix = unit_prefix(id, unit);
      fn(conv_ref(prefix + "/conv", u.conv));
      fn(vec_ref(prefix + "/bn_gamma", u.bn.gamma, true));
      fn(vec_ref(prefix + "/bn_beta", u.bn.beta, true));
      fn(vec_ref(prefix + "/bn_rmean", u.bn.running_mean, false));
      fn(vec_ref(prefix + "/bn_rvar", u.bn.running_var, false));
    }
  }
  for (std::size_t h = 0; h < model.heads.size(); ++h) {
    fn(conv_ref("head_" + std::to_string(h + 1) + "/conv", model.heads[h]));
  }
}

}  // namespace

template <typename T>
void NestedUNet<T>::for_each_param(const std::function<void(const ParamRef<T>&)>& fn) const {
  visit_params<T>(*this, fn);
}

template <typename T>
void NestedUNet<T>::for_each_param_mut(const std::function<void(const ParamRef<T>&)>& fn) {
  visit_params<T>(*this, fn);
}

template Tensor<float> mask_head<float>(const Tensor<float>&, const ConvParams<float>&);
template Tensor<double> mask_head<double>(const Tensor<double>&, const ConvParams<double>&);
template class NestedUNet<float>;
template class NestedUNet<double>;

}  // namespace nseg
