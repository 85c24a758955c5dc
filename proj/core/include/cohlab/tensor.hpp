#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace cohlab {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& s);

struct TensorError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ShapeError : TensorError {
  using TensorError::TensorError;
};
struct IndexError : TensorError {
  using TensorError::TensorError;
};
struct NumericError : TensorError {
  using TensorError::TensorError;
};
struct ContractError : TensorError {
  using TensorError::TensorError;
};

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first backward touch
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;  // accumulates into parents' grads
  std::uint64_t id = 0;
  const char* op = "leaf";

  void ensure_grad() {
    if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
  }
};

}  // namespace detail

/// Dense row-major f64 tensor. Value-semantics handle onto a graph node;
/// copies alias the same node, so lineage survives assignment.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  /// Rank-1 tensor from values.
  static Tensor vector(std::vector<double> values, bool requires_grad = false);
  /// Rank-2 tensor, rows*cols values row-major.
  static Tensor matrix(std::size_t rows, std::size_t cols,
                       std::vector<double> values, bool requires_grad = false);
  static Tensor randn(Shape shape, double stddev, std::mt19937_64& rng,
                      bool requires_grad = false);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node()->shape; }
  std::size_t rank() const { return node()->shape.size(); }
  std::size_t size() const { return node()->data.size(); }
  std::size_t dim(std::size_t axis) const;

  std::vector<double>& data() { return node()->data; }
  const std::vector<double>& data() const { return node()->data; }
  double value() const;  // scalar-only accessor

  bool requires_grad() const { return node()->requires_grad; }
  Tensor& set_requires_grad(bool flag);
  bool has_grad() const { return !node()->grad.empty(); }
  const std::vector<double>& grad() const;
  void zero_grad();

  /// Same data, no lineage, no grad requirement. The only form safe to move
  /// across threads.
  Tensor detach() const;

  std::uint64_t node_id() const { return node()->id; }
  /// True when both handles alias the same graph node (structural sharing).
  bool same_node(const Tensor& other) const { return node_ == other.node_; }

  std::shared_ptr<detail::Node> node_ptr() const { return node_; }

 private:
  friend Tensor make_op(const char* op, Shape shape, std::vector<double> data,
                        std::vector<Tensor> parents,
                        std::function<void(detail::Node&)> backward_fn);
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  detail::Node* node() const {
    if (!node_) throw ContractError("use of undefined tensor");
    return node_.get();
  }
  std::shared_ptr<detail::Node> node_;
};

// ---- primitive differentiable ops -----------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);  // elementwise
Tensor scale(const Tensor& a, double c);
/// x: [m x n], bias: [n]; bias broadcast over rows.
Tensor add_bias(const Tensor& x, const Tensor& bias);
Tensor relu(const Tensor& x);
Tensor gelu(const Tensor& x);
/// Inverted-scaling dropout: train mode masks with prob p and scales kept
/// entries by 1/(1-p); eval mode is the identity.
Tensor dropout(const Tensor& x, double p, std::mt19937_64& rng, bool train);
Tensor softmax(const Tensor& x, std::size_t axis);
/// Row-wise softmax over [m x n] where keep[j]==false columns get exactly
/// zero weight. At least one column must be kept.
Tensor softmax_masked_rows(const Tensor& x, const std::vector<bool>& keep);
/// Normalizes over the last axis then applies gain/bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps);
Tensor cross_entropy(const Tensor& logits, const std::vector<std::size_t>& targets);
Tensor mse(const Tensor& pred, const Tensor& target);
Tensor margin_ranking_loss(const Tensor& s_pos, const Tensor& s_neg, double margin);
/// table: [V x d]; gathers rows, scatter-adds gradient.
Tensor embedding_lookup(const Tensor& table, const std::vector<std::size_t>& ids);
Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
/// Stacks rank-1 tensors of equal length into [n x d].
Tensor stack_rows(const std::vector<Tensor>& rows);
/// Stacks rank-2 tensors of equal shape [l x d] into [b x l x d].
Tensor stack_matrices(const std::vector<Tensor>& mats);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count);
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count);
Tensor row(const Tensor& x, std::size_t i);
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

enum class PoolKind { min, max, mean, sum };
/// Reduces rows [begin, end) of a [m x n] tensor to one [n] vector.
Tensor pool_rows(const Tensor& x, std::size_t begin, std::size_t end, PoolKind kind);

/// Reverse-mode sweep from a scalar loss. Grad fields of every reachable
/// node are accumulated; calling twice without zero_grad doubles them.
void backward(const Tensor& loss);

// ---- gradcheck -------------------------------------------------------------

struct GradcheckReport {
  bool pass = false;
  double max_rel_err = 0.0;
  std::size_t worst_index = 0;
  std::vector<double> analytic;
  std::vector<double> numeric;
};

/// Central-difference check of d f / d x. f must be scalar-valued and
/// deterministic; nondeterminism (e.g. live dropout) raises ContractError.
GradcheckReport gradcheck(const std::function<Tensor(const Tensor&)>& f,
                          const Tensor& x, double eps = 1e-5, double tol = 1e-6);

}  // namespace cohlab
