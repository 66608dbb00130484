#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "nseg/graph.hpp"
#include "nseg/ops.hpp"
#include "nseg/tensor.hpp"

namespace nseg {

/// One conv -> batchnorm -> relu stage.
template <typename T>
struct ConvBnUnit {
  ConvParams<T> conv;
  BatchNormParams<T> bn;
};

template <typename T>
struct NodeBlock {
  std::vector<ConvBnUnit<T>> units;  // GraphConfig::convs_per_node entries
};

/// Gradients keyed by canonical parameter name ("x0_1/unit0/conv",
/// "x0_1/unit0/bn_gamma", "head_2/conv", ...). Parameters of nodes outside
/// the pruned sub-network have no entry.
template <typename T>
using Gradients = std::map<std::string, std::vector<T>>;

template <typename T>
struct UnitTrace {
  Tensor<T> conv_in;
  BatchNormCache<T> bn_cache;
  BatchNormParams<T> bn_updated;
  Tensor<T> relu_in;  // batchnorm output
};

template <typename T>
struct NodeTrace {
  std::vector<UnitTrace<T>> units;
  Tensor<T> output;
  std::vector<std::uint32_t> pool_argmax;  // j == 0, level > 0: edge from the parent
  Shape pool_input_shape{};
  std::vector<int> concat_channels;  // j > 0: channel split for backward
};

template <typename T>
struct ForwardTrace {
  std::vector<std::optional<NodeTrace<T>>> nodes;  // indexed like NestedUNet::nodes
  std::map<int, Tensor<T>> head_probs;             // head position -> probability map
};

/// Metadata handed to parameter visitors, in canonical order: nodes by
/// (level asc, pos asc), units in order, conv before batch norm
/// (gamma, beta, running mean, running var), then heads by position.
template <typename T>
struct ParamRef {
  std::string name;
  std::vector<std::uint32_t> dims;
  T* values = nullptr;
  std::int64_t count = 0;
  bool learned = true;  // false for running statistics
};

/// 1x1 convolution to one channel followed by sigmoid: the per-pixel mask
/// probability read from a top-level node.
template <typename T>
Tensor<T> mask_head(const Tensor<T>& features, const ConvParams<T>& head);

/// The nested-skip segmentation network: one NodeBlock per node plus output
/// heads at every top-level position 1..depth-1. `prune_level` selects the
/// active sub-network { (i, j) : i + j <= prune_level }.
template <typename T>
class NestedUNet {
 public:
  GraphConfig config;
  int prune_level = 1;
  std::vector<NodeBlock<T>> nodes;   // canonical (level asc, pos asc) order
  std::vector<ConvParams<T>> heads;  // heads[j - 1] reads x0_j

  /// Instantiates all depth*(depth+1)/2 nodes with He-uniform weights drawn
  /// from a SplitMix64 stream; identical seeds give identical weights.
  static NestedUNet build(const GraphConfig& cfg, std::uint64_t seed);

  int node_index(NodeId id) const;

  /// Head positions whose outputs are produced and trained: 1..prune_level
  /// with deep supervision, just prune_level without.
  std::vector<int> active_head_positions() const;

  /// Probability maps (n, 1, h, w) per active head, in head-position order.
  /// Train mode uses batch statistics but does not commit running stats.
  std::vector<Tensor<T>> forward(const Tensor<T>& batch, Mode mode) const;

  /// Train-mode forward keeping every intermediate needed by backward().
  ForwardTrace<T> forward_trace(const Tensor<T>& batch) const;

  /// Head gradients (one per active head, in head-position order) propagated
  /// back to every parameter reachable from the active heads.
  Gradients<T> backward(const ForwardTrace<T>& trace,
                        const std::vector<Tensor<T>>& head_grads) const;

  /// Adopts the running statistics advanced during a train-mode forward.
  void commit_batchnorm(const ForwardTrace<T>& trace);

  /// Sub-network at prune level d: depth shrinks to d+1, weights are shared
  /// copies, and head d becomes the final output.
  NestedUNet prune(int d) const;

  /// Infer-mode probability map of the final head (position prune_level).
  Tensor<T> predict(const Tensor<T>& batch) const;

  /// Learned elements only (conv weights + gamma + beta); matches
  /// param_count(config, depth - 1).
  std::int64_t learned_element_count() const;

  void for_each_param(const std::function<void(const ParamRef<T>&)>& fn) const;
  void for_each_param_mut(const std::function<void(const ParamRef<T>&)>& fn);

 private:
  void validate_batch(const Tensor<T>& batch) const;
  std::vector<Tensor<T>> run_forward(const Tensor<T>& batch, Mode mode,
                                     ForwardTrace<T>* trace) const;
};

using NestedUNetF = NestedUNet<float>;
using NestedUNetD = NestedUNet<double>;

}  // namespace nseg
