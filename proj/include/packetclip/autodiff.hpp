#pragma once

#include <cstdint>
#include <vector>

#include "packetclip/mat.hpp"

namespace packetclip::ad {

using NodeId = int32_t;

// Reverse-mode tape over Mat values. A fresh tape is built per training step;
// leaves marked needs_grad accumulate into grad(id) after backward().
class Tape {
public:
  NodeId leaf(Mat v, bool needs_grad = false);

  // y = x * W^T + b (row-broadcast bias); W is (out x in), b is (1 x out)
  NodeId linear(NodeId x, NodeId w, NodeId b);
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);  // elementwise
  NodeId scale(NodeId a, double s);
  NodeId tanh_(NodeId a);
  NodeId gelu(NodeId a);  // exact erf form
  NodeId sum_list(const std::vector<NodeId>& xs);
  NodeId layer_norm(NodeId x, NodeId gamma, NodeId beta);
  // multi-head attention over fixed-length windows; q,k,v are
  // (n_windows*win_len x heads*head_dim)
  NodeId window_attention(NodeId q, NodeId k, NodeId v, int n_windows, int win_len, int heads);
  NodeId add_position(NodeId x, NodeId pos, int win_len);  // pos is (win_len x d)
  NodeId gather_rows(NodeId x, std::vector<int> rows);
  NodeId group_mean_rows(NodeId x, int group);  // (G*group x d) -> (G x d)
  NodeId broadcast_row(NodeId x, int n);        // (1 x d) -> (n x d)
  NodeId concat_cols(const std::vector<NodeId>& xs);
  NodeId softmax_rows(NodeId x);
  // scalar (1x1): mean negative log of the label-indexed probabilities
  NodeId nll_mean(NodeId probs, std::vector<int> labels);
  NodeId sum_all(NodeId x);  // scalar (1x1)

  const Mat& val(NodeId id) const { return nodes_[size_t(id)].val; }
  const Mat& grad(NodeId id) const { return nodes_[size_t(id)].grad; }
  bool needs_grad(NodeId id) const { return nodes_[size_t(id)].needs_grad; }

  void backward(NodeId loss);

  size_t node_count() const { return nodes_.size(); }

private:
  enum class Op {
    leaf,
    linear,
    add,
    sub,
    mul,
    scale,
    tanh_,
    gelu,
    sum_list,
    layer_norm,
    attention,
    add_position,
    gather_rows,
    group_mean,
    broadcast_row,
    concat_cols,
    softmax_rows,
    nll_mean,
    sum_all,
  };

  struct Node {
    Op op = Op::leaf;
    Mat val;
    Mat grad;
    bool needs_grad = false;
    NodeId a = -1, b = -1, c = -1;
    std::vector<NodeId> list;
    std::vector<int> idx;
    int i0 = 0, i1 = 0, i2 = 0;
    double s = 0.0;
    Mat saved;   // op-specific forward state (softmax probs, layer-norm stats, ...)
    Mat saved2;
  };

  NodeId push(Node n);
  Mat& ensure_grad(NodeId id);
  void backprop_node(NodeId id);

  std::vector<Node> nodes_;
};

// Adam with bias correction; beta2 follows the training-kernel defaults.
struct Adam {
  double lr = 5.0e-4;
  double beta1 = 0.9;
  double beta2 = 0.8;
  double epsilon = 1.0e-6;
  int64_t t = 0;
  std::vector<Mat> m;
  std::vector<Mat> v;

  void init(const std::vector<Mat*>& params);
  void step(const std::vector<Mat*>& params, const std::vector<const Mat*>& grads);
};

}  // namespace packetclip::ad
