#pragma once

#include <compare>
#include <cstdint>
#include <string>
#include <vector>

#include "nseg/errors.hpp"

namespace nseg {

/// Identifies the node at down-sampling level `level` and position `pos`
/// along that level's dense skip pathway. Valid ids for depth L are
/// { (i, j) : i >= 0, j >= 0, i + j <= L - 1 }.
struct NodeId {
  int level = 0;
  int pos = 0;

  auto operator<=>(const NodeId&) const = default;

  std::string str() const {
    return "x" + std::to_string(level) + "_" + std::to_string(pos);
  }
};

struct GraphConfig {
  int depth = 4;
  int base_channels = 8;
  int kernel = 3;
  int input_channels = 1;
  bool deep_supervision = true;

  static constexpr int convs_per_node = 2;

  void validate() const;

  int channels_at(int level) const { return base_channels << level; }
  int node_count() const { return depth * (depth + 1) / 2; }
  bool valid_node(NodeId id) const {
    return id.level >= 0 && id.pos >= 0 && id.level + id.pos <= depth - 1;
  }
};

enum class SourceKind {
  external_input,  // the network input feeds this node
  downsample,      // 2x2 max pooling of `from`'s output
  feature,         // `from`'s output, unchanged (skip connection)
  upsample         // nearest 2x upsampling of `from`'s output
};

struct NodeSource {
  SourceKind kind = SourceKind::external_input;
  NodeId from{};

  bool operator==(const NodeSource&) const = default;
};

/// Inputs of a node, in concatenation order: the external input for (0,0);
/// the pooled parent for (i>0, 0); all same-level predecessors followed by
/// the upsampled lower-level neighbor for j > 0.
std::vector<NodeSource> node_inputs(NodeId id, const GraphConfig& cfg);

/// All nodes reachable at prune level d: { (i, j) : i + j <= d }, sorted by
/// (level, pos), the canonical storage order.
std::vector<NodeId> active_nodes(const GraphConfig& cfg, int prune_level);

/// Dependency-respecting evaluation order of the active nodes (Kahn's
/// algorithm; ties broken by (pos, level) so the order is deterministic).
std::vector<NodeId> evaluation_order(const GraphConfig& cfg, int prune_level);

/// Channel count entering a node's first convolution.
int node_input_channels(NodeId id, const GraphConfig& cfg);

/// Closed-form learned-parameter total over nodes { i + j <= d } plus output
/// heads 1..d: each conv contributes c_in * k^2 * c_out and each batch norm
/// 2 * c_out; heads are 1x1 convs to one channel.
std::int64_t param_count(const GraphConfig& cfg, int prune_level);

}  // namespace nseg
