#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "qkd/param.hpp"
#include "qkd/tensor.hpp"

namespace qkd {
namespace ag {

// Reverse-mode tape node. A fresh graph is built per forward pass and used
// by exactly one backward() call. Reductions and traversals are sequential
// with a fixed order, so repeated runs are bitwise identical.
struct Node {
  Tensor value;
  Tensor grad;  // allocated by backward()
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> inputs;
  std::function<void(Node&)> backprop;  // reads this->grad, accumulates into inputs' grads
  Parameter* param = nullptr;           // set for parameter leaves
};

using NodePtr = std::shared_ptr<Node>;

// Cheap handle around a tape node.
class Value {
 public:
  Value() = default;
  explicit Value(NodePtr n) : node_(std::move(n)) {}

  bool defined() const { return node_ != nullptr; }
  const Tensor& tensor() const { return node_->value; }
  const std::vector<std::size_t>& shape() const { return node_->value.shape(); }
  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

Value constant(Tensor t);
Value leaf(Parameter& p);
Value detach(const Value& v);

Value matmul(const Value& a, const Value& b);
Value conv2d(const Value& x, const Value& w, int stride, int padding);
Value relu(const Value& x);
Value add(const Value& a, const Value& b);
Value sub(const Value& a, const Value& b);
Value mul(const Value& a, const Value& b);
Value scale(const Value& x, double s);
Value add_bias(const Value& x, const Value& b);        // rows+vector or NCHW+per-channel
Value channel_affine(const Value& x, const Value& s, const Value& b);
Value global_avg_pool(const Value& x);                 // NCHW -> N x C
Value log_softmax(const Value& z);                     // rows of a 2-d tensor
Value exp(const Value& x);
Value sum(const Value& x);
Value nll(const Value& log_probs, const std::vector<int>& labels);  // mean over rows

// Runs reverse-mode accumulation from a scalar root. Visits each reachable
// node exactly once and then folds leaf gradients into their Parameters.
void backward(const Value& root);

}  // namespace ag
}  // namespace qkd
