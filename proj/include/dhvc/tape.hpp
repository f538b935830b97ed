// dhvc/tape.hpp -- minimal reverse-mode gradient engine over a fixed op set.
//
// A Tape owns a topologically ordered arena of nodes; ops append nodes and
// record backward closures. backward() seeds d(loss)=1 and sweeps the arena
// in reverse. Deliberately not a general framework: only the operations the
// score estimators and encoders need, each one checkable by central
// differences.
#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "dhvc/tensor.hpp"

namespace dhvc::nets {

class Tape {
 public:
  using NodeId = int;
  static constexpr NodeId kNone = -1;

  explicit Tape(bool check_finite = true) : check_finite_(check_finite) {}

  NodeId leaf(Tensor value, bool needs_grad = false);
  const Tensor& val(NodeId id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  // Valid after backward(); zero tensor if the node never received gradient.
  const Tensor& grad(NodeId id);
  bool needs_grad(NodeId id) const { return nodes_[static_cast<std::size_t>(id)].needs_grad; }
  std::size_t size() const { return nodes_.size(); }

  // Seeds gradient 1 at a scalar node and runs the reverse sweep.
  void backward(NodeId loss);

  // Elementwise.
  NodeId add(NodeId a, NodeId b);
  NodeId sub(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId scale(NodeId a, double c);
  NodeId add_const(NodeId a, double c);
  NodeId tanh_op(NodeId a);
  NodeId silu(NodeId a);
  NodeId gated(NodeId a, NodeId b);  // tanh(a) * sigmoid(b)
  NodeId mask_fill(NodeId a, const std::vector<std::uint8_t>& mask, double fill);

  // Linear algebra. Bias arguments accept kNone.
  NodeId affine(NodeId x, NodeId w, NodeId b);                     // [N],[M,N],[M] -> [M]
  NodeId conv1d(NodeId x, NodeId w, NodeId b, int dilation = 1);   // [Cin,L],[Cout,Cin,K] -> [Cout,L]
  NodeId conv2d(NodeId x, NodeId w, NodeId b);                     // [Cin,H,W],[Cout,Cin,3,3] -> [Cout,H,W]
  NodeId add_channel_bias(NodeId x, NodeId v);                     // [C,...] + [C]
  NodeId group_norm(NodeId x, NodeId gamma, NodeId beta, int groups, double eps = 1e-5);

  // Shape and resolution.
  NodeId reshape(NodeId a, std::vector<std::int64_t> shape);
  NodeId transpose2(NodeId a);                 // [A,B] -> [B,A]
  NodeId slice_channels(NodeId a, std::int64_t from, std::int64_t to);  // first axis
  NodeId avg_pool1d(NodeId a, int k);          // [C,L] -> [C,L/k], L divisible by k
  NodeId down2(NodeId a);                      // [C,H,W] -> [C,H/2,W/2], nearest
  NodeId up2(NodeId a);                        // [C,H,W] -> [C,2H,2W], nearest

  // Reductions to scalar [1].
  NodeId sum_all(NodeId a);
  NodeId mean_all(NodeId a);
  NodeId mean_abs_diff(NodeId a, NodeId b);
  NodeId mean_sq_diff(NodeId a, NodeId b);
  NodeId dot_const(NodeId a, const Tensor& w);

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool needs_grad = false;
    std::function<void()> backward_fn;
  };

  NodeId push(Tensor value, bool needs_grad, std::function<void()> backward_fn,
              const char* op);
  Tensor& grad_buf(NodeId id);
  void accumulate(NodeId id, const Tensor& g);

  std::vector<Node> nodes_;
  bool check_finite_;
};

// Named parameter tensors; std::map keeps iteration order deterministic.
struct ParamStore {
  std::map<std::string, Tensor> tensors;

  Tensor& at(const std::string& name);
  const Tensor& at(const std::string& name) const;
  bool contains(const std::string& name) const { return tensors.count(name) > 0; }
  void insert(const std::string& name, Tensor t);
  std::int64_t total_params() const;
};

using GradMap = std::map<std::string, Tensor>;

// Binds store tensors to tape leaves on demand so each forward pass sees one
// node per parameter; collect_grads reads them back after backward().
class ParamBinder {
 public:
  ParamBinder(Tape& tape, const ParamStore& store, bool trainable)
      : tape_(tape), store_(store), trainable_(trainable) {}

  Tape::NodeId operator()(const std::string& name);
  // Adds this tape's parameter gradients into `out` (created as zeros if absent).
  void collect_grads(GradMap& out);

 private:
  Tape& tape_;
  const ParamStore& store_;
  bool trainable_;
  std::map<std::string, Tape::NodeId> bound_;
};

}  // namespace dhvc::nets
