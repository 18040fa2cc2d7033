#pragma once

// Reverse-mode differentiation over vector-valued nodes, Adam, and global-norm
// clipping. A Tape lives for one episode: nodes are appended during the
// forward pass and backward() walks them once in reverse.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "riiu/tensor.hpp"

namespace riiu::ad {

using NodeId = std::uint32_t;

class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  std::size_t size() const { return nodes_.size(); }
  std::span<const double> value(NodeId id) const { return nodes_[id].value; }
  double scalar(NodeId id) const;
  Vector value_vector(NodeId id) const { return Vector(nodes_[id].value); }
  /// Adjoint after backward(); zeros before.
  std::span<const double> adjoint(NodeId id) const { return nodes_[id].grad; }

  NodeId constant(std::span<const double> v);
  NodeId constant(const Vector& v) { return constant(v.span()); }
  NodeId scalar_constant(double v);

  /// w·x. When `dw` is non-null the outer product of the output adjoint and x
  /// is accumulated into it on backward.
  NodeId matvec(const Matrix& w, Matrix* dw, NodeId x);
  NodeId add_bias(NodeId x, const Vector& b, Vector* db);

  NodeId add(NodeId a, NodeId b);
  NodeId mul(NodeId a, NodeId b);
  NodeId scale(NodeId a, double s);
  NodeId one_minus(NodeId a);
  /// Elementwise product with a constant mask.
  NodeId mask(NodeId a, std::span<const double> m);

  NodeId gelu(NodeId a);
  NodeId tanh(NodeId a);
  NodeId sigmoid(NodeId a);

  NodeId concat(std::span<const NodeId> parts);
  NodeId concat(std::initializer_list<NodeId> parts) {
    return concat(std::span<const NodeId>(parts.begin(), parts.size()));
  }
  NodeId slice(NodeId a, std::size_t offset, std::size_t length);
  /// Elementwise mean of equal-width nodes.
  NodeId mean(std::span<const NodeId> parts);

  /// log softmax(logits)[index] as a scalar node.
  NodeId log_softmax_at(NodeId logits, std::size_t index);

  /// Scalar node with externally supplied value and gradient with respect to
  /// `input` (a locally linearised custom primitive).
  NodeId linearized_scalar(NodeId input, double value, Vector gradient);

  /// sum_i weights[i] * scalars[i].
  NodeId weighted_sum(std::span<const NodeId> scalars, std::span<const double> weights);

  /// Seeds d loss / d loss = 1 and propagates to every node and parameter
  /// gradient slot. Throws ShapeError unless `loss` is a scalar.
  void backward(NodeId loss);

 private:
  struct Node {
    std::vector<double> value;
    std::vector<double> grad;
    std::function<void(Tape&, NodeId)> backward;
  };

  NodeId push(std::vector<double> value, std::function<void(Tape&, NodeId)> backward);
  Node& node(NodeId id) { return nodes_[id]; }

  std::vector<Node> nodes_;
};

/// Named view of one contiguous parameter (or gradient) tensor.
struct TensorView {
  std::string name;
  std::span<double> data;
  std::size_t rows = 0;
  std::size_t cols = 0;
};

double global_norm(std::span<const TensorView> grads);

/// Rescales all gradients by max_norm / norm when their global L2 norm exceeds
/// max_norm. Returns the norm before clipping.
double clip_global_norm(std::span<const TensorView> grads, double max_norm);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class AdamState {
 public:
  AdamState() = default;
  explicit AdamState(std::span<const TensorView> params, AdamConfig cfg = {});

  std::size_t step() const { return step_; }
  const AdamConfig& config() const { return cfg_; }

  /// One bias-corrected Adam step. Shapes must mirror the constructor's.
  void update(std::span<const TensorView> params, std::span<const TensorView> grads, double lr);

 private:
  AdamConfig cfg_;
  std::vector<std::vector<double>> first_;
  std::vector<std::vector<double>> second_;
  std::size_t step_ = 0;
};

}  // namespace riiu::ad
