#pragma once

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "stablecde/array.hpp"

namespace stablecde::ad {

enum class Op : std::uint8_t {
  kLeaf,
  kConstant,
  kMatMul,
  kMatVec,
  kAdd,
  kSub,
  kMul,
  kScale,
  kRelu,
  kTanh,
  kAbs,
  kLayerNorm,
  kPearson,
  kSum,
  kMean,
  kReshape,
  kSliceCol,
  kLinComb,
  kSoftmaxCrossEntropy,
  kPick,
};

struct Node {
  Op op = Op::kLeaf;
  int a = -1;
  int b = -1;
  int c = -1;
  double aux[4] = {0, 0, 0, 0};
  Array val;
  Array grad;
  bool has_grad = false;
  bool requires_grad = true;
  std::vector<int> extra;        // kLinComb parent list
  std::vector<double> weights;   // kLinComb coefficients
};

// Reverse-mode tape over Arrays. Nodes are recorded in topological order;
// rewind() reuses node slots (and their buffers) so steady-state recording
// does not allocate. A tape is single-threaded; run one per worker.
class Tape {
 public:
  int leaf(const Array& v) { return push_value(Op::kLeaf, v, true); }
  int constant(const Array& v) { return push_value(Op::kConstant, v, false); }

  int matmul(int a, int b);
  int matvec(int w, int x);
  int add(int a, int b);
  int sub(int a, int b);
  int mul(int a, int b);
  int scale(int a, double k);
  int relu(int a);
  int tanh_(int a);
  int abs_(int a);
  int layer_norm(int x, int gain, int bias, double eps = 1e-5);
  int pearson(int x, int y);
  int sum(int a);
  int mean(int a);
  int reshape(int a, std::vector<std::size_t> shape);
  int slice_col(int m, std::size_t col);
  // Affine combination sum_k w_k * node_k + offset (scalar nodes).
  int lincomb(std::span<const int> nodes, std::span<const double> w, double offset);
  // -log softmax(logits)[target]; logits is a vector node.
  int softmax_cross_entropy(int logits, int target);
  int pick(int v, std::size_t index);

  const Array& value(int id) const { return nodes_[static_cast<std::size_t>(id)].val; }
  const Array& grad(int id) const;
  bool has_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].has_grad; }

  // Reverse accumulation from a scalar root (seeded with 1).
  void backward(int root);
  // Reverse accumulation from externally supplied cotangents.
  void backward_seeded(std::span<const std::pair<int, const Array*>> seeds);

  // Clears gradients and re-arms backward; recorded nodes stay valid.
  void reset_grads();
  // Drops all nodes but keeps slot capacity for reuse.
  void rewind();

  std::size_t size() const { return size_; }

 private:
  int push_value(Op op, const Array& v, bool requires_grad);
  Node& fresh(Op op, int a, int b, int c);
  Array& ensure_grad(int id);
  void run_backward();
  void backprop_node(std::size_t i);

  std::vector<Node> nodes_;
  std::size_t size_ = 0;
  bool backward_ran_ = false;
};

// Convenience free function mirroring the tape method, for gradient checks.
double pearson_value(const Array& x, const Array& y);

}  // namespace stablecde::ad
