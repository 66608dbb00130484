#include "nseg/graph.hpp"

#include <algorithm>
#include <map>

namespace nseg {

void GraphConfig::validate() const {
  if (depth < 2) throw ConfigError("depth must be >= 2, got " + std::to_string(depth));
  if (base_channels < 1) {
    throw ConfigError("base_channels must be >= 1, got " + std::to_string(base_channels));
  }
  if (kernel < 1 || kernel % 2 == 0) {
    throw ConfigError("kernel must be odd and >= 1, got " + std::to_string(kernel));
  }
  if (input_channels < 1) {
    throw ConfigError("input_channels must be >= 1, got " + std::to_string(input_channels));
  }
}

std::vector<NodeSource> node_inputs(NodeId id, const GraphConfig& cfg) {
  if (!cfg.valid_node(id)) {
    throw ContractError("invalid node " + id.str() + " for depth " + std::to_string(cfg.depth));
  }
  std::vector<NodeSource> sources;
  if (id.pos == 0) {
    if (id.level == 0) {
      sources.push_back({SourceKind::external_input, {}});
    } else {
      sources.push_back({SourceKind::downsample, NodeId{id.level - 1, 0}});
    }
  } else {
    for (int k = 0; k < id.pos; ++k) {
      sources.push_back({SourceKind::feature, NodeId{id.level, k}});
    }
    sources.push_back({SourceKind::upsample, NodeId{id.level + 1, id.pos - 1}});
  }
  return sources;
}

std::vector<NodeId> active_nodes(const GraphConfig& cfg, int prune_level) {
  cfg.validate();
  if (prune_level < 1 || prune_level > cfg.depth - 1) {
    throw ContractError("prune level " + std::to_string(prune_level) + " out of range [1, " +
                        std::to_string(cfg.depth - 1) + "]");
  }
  std::vector<NodeId> ids;
  for (int i = 0; i <= prune_level; ++i) {
    for (int j = 0; i + j <= prune_level; ++j) ids.push_back({i, j});
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

std::vector<NodeId> evaluation_order(const GraphConfig& cfg, int prune_level) {
  const std::vector<NodeId> ids = active_nodes(cfg, prune_level);

  std::map<NodeId, int> in_degree;
  std::map<NodeId, std::vector<NodeId>> consumers;
  for (const NodeId id : ids) in_degree[id] = 0;
  for (const NodeId id : ids) {
    for (const NodeSource& src : node_inputs(id, cfg)) {
      if (src.kind == SourceKind::external_input) continue;
      consumers[src.from].push_back(id);
      ++in_degree[id];
    }
  }

  // ready set ordered by (pos, level): same-level chains unlock left to right
  auto ready_less = [](NodeId a, NodeId b) {
    return std::pair(a.pos, a.level) < std::pair(b.pos, b.level);
  };
  std::vector<NodeId> ready;
  for (const auto& [id, deg] : in_degree) {
    if (deg == 0) ready.push_back(id);
  }
  std::sort(ready.begin(), ready.end(), ready_less);

  std::vector<NodeId> order;
  order.reserve(ids.size());
  while (!ready.empty()) {
    const NodeId id = ready.front();
    ready.erase(ready.begin());
    order.push_back(id);
    for (const NodeId next : consumers[id]) {
      if (--in_degree[next] == 0) {
        ready.insert(std::upper_bound(ready.begin(), ready.end(), next, ready_less), next);
      }
    }
  }
  if (order.size() != ids.size()) {
    throw ContractError("node graph contains a cycle");  // cannot happen for valid configs
  }
  return order;
}

int node_input_channels(NodeId id, const GraphConfig& cfg) {
  if (!cfg.valid_node(id)) {
    throw ContractError("invalid node " + id.str());
  }
  if (id.pos == 0) {
    return id.level == 0 ? cfg.input_channels : cfg.channels_at(id.level - 1);
  }
  return id.pos * cfg.channels_at(id.level) + cfg.channels_at(id.level + 1);
}

std::int64_t param_count(const GraphConfig& cfg, int prune_level) {
  const std::int64_t k2 = static_cast<std::int64_t>(cfg.kernel) * cfg.kernel;
  std::int64_t total = 0;
  for (const NodeId id : active_nodes(cfg, prune_level)) {
    const std::int64_t c_out = cfg.channels_at(id.level);
    std::int64_t c_in = node_input_channels(id, cfg);
    for (int unit = 0; unit < GraphConfig::convs_per_node; ++unit) {
      total += c_in * k2 * c_out;  // conv weights
      total += 2 * c_out;          // batch norm gamma + beta
      c_in = c_out;
    }
  }
  // output heads at x0_1 .. x0_d: 1x1 conv from base channels to one channel
  total += static_cast<std::int64_t>(prune_level) * cfg.base_channels;
  return total;
}

}  // namespace nseg
