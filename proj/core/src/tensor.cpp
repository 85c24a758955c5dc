#include "cohlab/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace cohlab {

namespace {

std::atomic<std::uint64_t> g_next_id{1};

std::size_t shape_product(const Shape& s) {
  std::size_t n = 1;
  for (std::size_t d : s) n *= d;
  return n;
}

void check_finite(const detail::Node& n) {
  for (double v : n.data) {
    if (!std::isfinite(v)) {
      throw NumericError(std::string("non-finite value produced by op '") +
                         n.op + "'");
    }
  }
}

void require_rank2(const Tensor& t, const char* what) {
  if (t.rank() != 2)
    throw ShapeError(std::string(what) + " must be rank 2, got shape " +
                     shape_str(t.shape()));
}

constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;

}  // namespace

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << 'x';
    os << s[i];
  }
  os << ']';
  return os.str();
}

Tensor make_op(const char* op, Shape shape, std::vector<double> data,
               std::vector<Tensor> parents,
               std::function<void(detail::Node&)> backward_fn) {
  auto node = std::make_shared<detail::Node>();
  node->shape = std::move(shape);
  node->data = std::move(data);
  if (node->data.size() != shape_product(node->shape))
    throw ShapeError(std::string("op '") + op + "': data size mismatch");
  node->op = op;
  node->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
  bool rg = false;
  for (const auto& p : parents) rg = rg || p.requires_grad();
  node->requires_grad = rg;
  if (rg) {
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.node_ptr());
    node->backward_fn = std::move(backward_fn);
  }
  check_finite(*node);
  return Tensor(std::move(node));
}

// ---- Tensor ---------------------------------------------------------------

Tensor::Tensor(Shape shape, std::vector<double> data, bool requires_grad) {
  if (data.size() != shape_product(shape))
    throw ShapeError("tensor data length " + std::to_string(data.size()) +
                     " does not match shape " + shape_str(shape));
  node_ = std::make_shared<detail::Node>();
  node_->shape = std::move(shape);
  node_->data = std::move(data);
  node_->requires_grad = requires_grad;
  node_->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  std::vector<double> d(shape_product(shape), 0.0);
  return Tensor(std::move(shape), std::move(d), requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  std::vector<double> d(shape_product(shape), value);
  return Tensor(std::move(shape), std::move(d), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor(Shape{}, {value}, requires_grad);
}

Tensor Tensor::vector(std::vector<double> values, bool requires_grad) {
  Shape s{values.size()};
  return Tensor(std::move(s), std::move(values), requires_grad);
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols,
                      std::vector<double> values, bool requires_grad) {
  return Tensor(Shape{rows, cols}, std::move(values), requires_grad);
}

Tensor Tensor::randn(Shape shape, double stddev, std::mt19937_64& rng,
                     bool requires_grad) {
  std::normal_distribution<double> dist(0.0, stddev);
  std::vector<double> d(shape_product(shape));
  for (double& v : d) v = dist(rng);
  return Tensor(std::move(shape), std::move(d), requires_grad);
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank())
    throw IndexError("axis " + std::to_string(axis) + " out of range for shape " +
                     shape_str(shape()));
  return shape()[axis];
}

double Tensor::value() const {
  if (size() != 1)
    throw ContractError("value() requires a scalar tensor, got shape " +
                        shape_str(shape()));
  return data()[0];
}

Tensor& Tensor::set_requires_grad(bool flag) {
  node()->requires_grad = flag;
  return *this;
}

const std::vector<double>& Tensor::grad() const {
  if (node()->grad.empty())
    throw ContractError("gradient not populated; run backward() first");
  return node()->grad;
}

void Tensor::zero_grad() { node()->grad.assign(size(), 0.0); }

Tensor Tensor::detach() const {
  return Tensor(shape(), data(), false);
}

// ---- backward -------------------------------------------------------------

void backward(const Tensor& loss) {
  if (loss.size() != 1)
    throw ContractError("backward() requires a scalar loss, got shape " +
                        shape_str(loss.shape()));
  // Iterative post-order DFS gives reverse topological order.
  std::vector<detail::Node*> order;
  std::unordered_set<detail::Node*> seen;
  struct Frame {
    detail::Node* node;
    std::size_t next_parent;
  };
  std::vector<Frame> stack;
  detail::Node* root = loss.node_ptr().get();
  if (seen.insert(root).second) stack.push_back({root, 0});
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.node->parents.size()) {
      detail::Node* p = f.node->parents[f.next_parent++].get();
      if (seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }
  // Stash previously accumulated grads so this sweep propagates only the
  // fresh unit seed; re-add them afterwards (repeated backward accumulates).
  std::vector<std::vector<double>> stash(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    stash[i] = std::move(order[i]->grad);
    order[i]->grad.clear();
  }
  root->ensure_grad();
  root->grad[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (stash[i].empty()) continue;
    order[i]->ensure_grad();
    for (std::size_t j = 0; j < stash[i].size(); ++j)
      order[i]->grad[j] += stash[i][j];
  }
}

// ---- ops ------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank2(a, "matmul lhs");
  require_rank2(b, "matmul rhs");
  const std::size_t m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  if (k != k2)
    throw ShapeError("matmul inner dimensions differ: " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  std::vector<double> out(m * n, 0.0);
  const auto& ad = a.data();
  const auto& bd = b.data();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double av = ad[i * k + p];
      if (av == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += av * bd[p * n + j];
    }
  auto an = a.node_ptr();
  auto bn = b.node_ptr();
  return make_op("matmul", {m, n}, std::move(out), {a, b},
                 [m, k, n, an, bn](detail::Node& self) {
                   // dA = dC * B^T ; dB = A^T * dC
                   const auto& g = self.grad;
                   if (an->requires_grad) {
                     an->ensure_grad();
                     for (std::size_t i = 0; i < m; ++i)
                       for (std::size_t j = 0; j < n; ++j) {
                         const double gv = g[i * n + j];
                         if (gv == 0.0) continue;
                         for (std::size_t p = 0; p < k; ++p)
                           an->grad[i * k + p] += gv * bn->data[p * n + j];
                       }
                   }
                   if (bn->requires_grad) {
                     bn->ensure_grad();
                     for (std::size_t i = 0; i < m; ++i)
                       for (std::size_t p = 0; p < k; ++p) {
                         const double av = an->data[i * k + p];
                         if (av == 0.0) continue;
                         for (std::size_t j = 0; j < n; ++j)
                           bn->grad[p * n + j] += av * g[i * n + j];
                       }
                   }
                 });
}

Tensor transpose(const Tensor& a) {
  require_rank2(a, "transpose input");
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = a.data()[i * n + j];
  auto an = a.node_ptr();
  return make_op("transpose", {n, m}, std::move(out), {a},
                 [m, n, an](detail::Node& self) {
                   if (!an->requires_grad) return;
                   an->ensure_grad();
                   for (std::size_t i = 0; i < m; ++i)
                     for (std::size_t j = 0; j < n; ++j)
                       an->grad[i * n + j] += self.grad[j * m + i];
                 });
}

namespace {

Tensor elementwise2(const char* op, const Tensor& a, const Tensor& b,
                    double (*fwd)(double, double),
                    void (*bwd)(double ga, double av, double bv, double* da,
                                double* db)) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = fwd(a.data()[i], b.data()[i]);
  auto an = a.node_ptr();
  auto bn = b.node_ptr();
  return make_op(op, a.shape(), std::move(out), {a, b},
                 [an, bn, bwd](detail::Node& self) {
                   const bool ga = an->requires_grad, gb = bn->requires_grad;
                   if (ga) an->ensure_grad();
                   if (gb) bn->ensure_grad();
                   for (std::size_t i = 0; i < self.grad.size(); ++i) {
                     double da = 0, db = 0;
                     bwd(self.grad[i], an->data[i], bn->data[i], &da, &db);
                     if (ga) an->grad[i] += da;
                     if (gb) bn->grad[i] += db;
                   }
                 });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return elementwise2(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double g, double, double, double* da, double* db) {
        *da = g;
        *db = g;
      });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return elementwise2(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double g, double, double, double* da, double* db) {
        *da = g;
        *db = -g;
      });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return elementwise2(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double g, double av, double bv, double* da, double* db) {
        *da = g * bv;
        *db = g * av;
      });
}

Tensor scale(const Tensor& a, double c) {
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.data()[i] * c;
  auto an = a.node_ptr();
  return make_op("scale", a.shape(), std::move(out), {a},
                 [an, c](detail::Node& self) {
                   if (!an->requires_grad) return;
                   an->ensure_grad();
                   for (std::size_t i = 0; i < self.grad.size(); ++i)
                     an->grad[i] += self.grad[i] * c;
                 });
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require_rank2(x, "add_bias input");
  if (bias.rank() != 1 || bias.dim(0) != x.dim(1))
    throw ShapeError("add_bias: bias " + shape_str(bias.shape()) +
                     " does not match last axis of " + shape_str(x.shape()));
  const std::size_t m = x.dim(0), n = x.dim(1);
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j)
      out[i * n + j] = x.data()[i * n + j] + bias.data()[j];
  auto xn = x.node_ptr();
  auto bn = bias.node_ptr();
  return make_op("add_bias", {m, n}, std::move(out), {x, bias},
                 [m, n, xn, bn](detail::Node& self) {
                   if (xn->requires_grad) {
                     xn->ensure_grad();
                     for (std::size_t i = 0; i < m * n; ++i)
                       xn->grad[i] += self.grad[i];
                   }
                   if (bn->requires_grad) {
                     bn->ensure_grad();
                     for (std::size_t i = 0; i < m; ++i)
                       for (std::size_t j = 0; j < n; ++j)
                         bn->grad[j] += self.grad[i * n + j];
                   }
                 });
}

Tensor relu(const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i)
    out[i] = x.data()[i] > 0.0 ? x.data()[i] : 0.0;
  auto xn = x.node_ptr();
  return make_op("relu", x.shape(), std::move(out), {x},
                 [xn](detail::Node& self) {
                   if (!xn->requires_grad) return;
                   xn->ensure_grad();
                   for (std::size_t i = 0; i < self.grad.size(); ++i)
                     if (xn->data[i] > 0.0) xn->grad[i] += self.grad[i];
                 });
}

Tensor gelu(const Tensor& x) {
  // Exact erf form; derivative is Phi(x) + x * phi(x).
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = x.data()[i];
    out[i] = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
  }
  auto xn = x.node_ptr();
  return make_op("gelu", x.shape(), std::move(out), {x},
                 [xn](detail::Node& self) {
                   if (!xn->requires_grad) return;
                   xn->ensure_grad();
                   for (std::size_t i = 0; i < self.grad.size(); ++i) {
                     const double v = xn->data[i];
                     const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
                     const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
                     xn->grad[i] += self.grad[i] * (cdf + v * pdf);
                   }
                 });
}

Tensor dropout(const Tensor& x, double p, std::mt19937_64& rng, bool train) {
  if (p < 0.0 || p >= 1.0)
    throw ContractError("dropout probability must be in [0,1), got " +
                        std::to_string(p));
  if (!train || p == 0.0) return scale(x, 1.0);
  const double keep_scale = 1.0 / (1.0 - p);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  auto mask = std::make_shared<std::vector<double>>(x.size());
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    (*mask)[i] = unif(rng) < p ? 0.0 : keep_scale;
    out[i] = x.data()[i] * (*mask)[i];
  }
  auto xn = x.node_ptr();
  return make_op("dropout", x.shape(), std::move(out), {x},
                 [xn, mask](detail::Node& self) {
                   if (!xn->requires_grad) return;
                   xn->ensure_grad();
                   for (std::size_t i = 0; i < self.grad.size(); ++i)
                     xn->grad[i] += self.grad[i] * (*mask)[i];
                 });
}

namespace {

// Softmax over contiguous rows of length n with an optional keep mask.
// Masked columns get exactly zero probability.
Tensor softmax_impl(const char* op, const Tensor& x, std::size_t rows,
                    std::size_t n, const std::vector<bool>* keep) {
  if (keep) {
    bool any = false;
    for (bool k : *keep) any = any || k;
    if (!any) throw ContractError("softmax mask keeps no positions");
  }
  std::vector<double> out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = x.data().data() + r * n;
    double* o = out.data() + r * n;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j)
      if ((!keep || (*keep)[j]) && in[j] > mx) mx = in[j];
    double denom = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      o[j] = (!keep || (*keep)[j]) ? std::exp(in[j] - mx) : 0.0;
      denom += o[j];
    }
    for (std::size_t j = 0; j < n; ++j) o[j] /= denom;
  }
  auto xn = x.node_ptr();
  auto out_copy = out;  // saved activation for backward
  return make_op(op, x.shape(), std::move(out), {x},
                 [xn, rows, n, y = std::move(out_copy)](detail::Node& self) {
                   if (!xn->requires_grad) return;
                   xn->ensure_grad();
                   for (std::size_t r = 0; r < rows; ++r) {
                     const double* g = self.grad.data() + r * n;
                     const double* yr = y.data() + r * n;
                     double dot = 0.0;
                     for (std::size_t j = 0; j < n; ++j) dot += g[j] * yr[j];
                     for (std::size_t j = 0; j < n; ++j)
                       xn->grad[r * n + j] += yr[j] * (g[j] - dot);
                   }
                 });
}

}  // namespace

Tensor softmax(const Tensor& x, std::size_t axis) {
  if (x.rank() == 1) {
    if (axis != 0) throw IndexError("softmax axis out of range for rank-1 input");
    return softmax_impl("softmax", x, 1, x.dim(0), nullptr);
  }
  if (x.rank() == 2) {
    if (axis == 1) return softmax_impl("softmax", x, x.dim(0), x.dim(1), nullptr);
    if (axis == 0) return transpose(softmax(transpose(x), 1));
    throw IndexError("softmax axis out of range for rank-2 input");
  }
  throw ShapeError("softmax supports rank-1 and rank-2 tensors, got " +
                   shape_str(x.shape()));
}

Tensor softmax_masked_rows(const Tensor& x, const std::vector<bool>& keep) {
  require_rank2(x, "softmax_masked_rows input");
  if (keep.size() != x.dim(1))
    throw ShapeError("softmax mask length " + std::to_string(keep.size()) +
                     " does not match " + shape_str(x.shape()));
  return softmax_impl("softmax_masked", x, x.dim(0), x.dim(1), &keep);
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps) {
  const std::size_t n = x.rank() == 1 ? x.dim(0) : x.dim(x.rank() - 1);
  const std::size_t rows = x.size() / n;
  if (gain.rank() != 1 || gain.dim(0) != n || bias.rank() != 1 || bias.dim(0) != n)
    throw ShapeError("layer_norm gain/bias must match last axis size " +
                     std::to_string(n));
  std::vector<double> out(x.size());
  auto stats = std::make_shared<std::vector<double>>();  // per row: mean, inv_std
  stats->reserve(rows * 2);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* in = x.data().data() + r * n;
    double m = 0.0;
    for (std::size_t j = 0; j < n; ++j) m += in[j];
    m /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (in[j] - m) * (in[j] - m);
    var /= static_cast<double>(n);
    const double inv_std = 1.0 / std::sqrt(var + eps);
    stats->push_back(m);
    stats->push_back(inv_std);
    for (std::size_t j = 0; j < n; ++j)
      out[r * n + j] = (in[j] - m) * inv_std * gain.data()[j] + bias.data()[j];
  }
  auto xn = x.node_ptr();
  auto gn = gain.node_ptr();
  auto bn = bias.node_ptr();
  return make_op(
      "layer_norm", x.shape(), std::move(out), {x, gain, bias},
      [xn, gn, bn, rows, n, stats](detail::Node& self) {
        if (gn->requires_grad) gn->ensure_grad();
        if (bn->requires_grad) bn->ensure_grad();
        if (xn->requires_grad) xn->ensure_grad();
        for (std::size_t r = 0; r < rows; ++r) {
          const double m = (*stats)[2 * r];
          const double inv_std = (*stats)[2 * r + 1];
          const double* in = xn->data.data() + r * n;
          const double* g = self.grad.data() + r * n;
          if (gn->requires_grad || bn->requires_grad) {
            for (std::size_t j = 0; j < n; ++j) {
              const double xhat = (in[j] - m) * inv_std;
              if (gn->requires_grad) gn->grad[j] += g[j] * xhat;
              if (bn->requires_grad) bn->grad[j] += g[j];
            }
          }
          if (xn->requires_grad) {
            // d xhat_j = gain_j * g_j ; standard layer-norm backward
            double sum_d = 0.0, sum_dx = 0.0;
            for (std::size_t j = 0; j < n; ++j) {
              const double d = g[j] * gn->data[j];
              sum_d += d;
              sum_dx += d * (in[j] - m) * inv_std;
            }
            const double inv_n = 1.0 / static_cast<double>(n);
            for (std::size_t j = 0; j < n; ++j) {
              const double d = g[j] * gn->data[j];
              const double xhat = (in[j] - m) * inv_std;
              xn->grad[r * n + j] +=
                  inv_std * (d - inv_n * sum_d - xhat * inv_n * sum_dx);
            }
          }
        }
      });
}

Tensor cross_entropy(const Tensor& logits, const std::vector<std::size_t>& targets) {
  require_rank2(logits, "cross_entropy logits");
  const std::size_t b = logits.dim(0), k = logits.dim(1);
  if (targets.size() != b)
    throw ShapeError("cross_entropy: " + std::to_string(targets.size()) +
                     " targets for batch of " + std::to_string(b));
  for (std::size_t t : targets)
    if (t >= k)
      throw IndexError("cross_entropy target " + std::to_string(t) +
                       " out of range [0," + std::to_string(k) + ")");
  auto probs = std::make_shared<std::vector<double>>(b * k);
  double loss = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    const double* in = logits.data().data() + i * k;
    double mx = in[0];
    for (std::size_t j = 1; j < k; ++j) mx = std::max(mx, in[j]);
    double denom = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      (*probs)[i * k + j] = std::exp(in[j] - mx);
      denom += (*probs)[i * k + j];
    }
    for (std::size_t j = 0; j < k; ++j) (*probs)[i * k + j] /= denom;
    loss -= std::log((*probs)[i * k + targets[i]]);
  }
  loss /= static_cast<double>(b);
  auto ln = logits.node_ptr();
  return make_op("cross_entropy", {}, {loss}, {logits},
                 [ln, probs, targets, b, k](detail::Node& self) {
                   if (!ln->requires_grad) return;
                   ln->ensure_grad();
                   const double g = self.grad[0] / static_cast<double>(b);
                   for (std::size_t i = 0; i < b; ++i)
                     for (std::size_t j = 0; j < k; ++j)
                       ln->grad[i * k + j] +=
                           g * ((*probs)[i * k + j] -
                                (j == targets[i] ? 1.0 : 0.0));
                 });
}

Tensor mse(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape())
    throw ShapeError("mse: shape mismatch " + shape_str(pred.shape()) + " vs " +
                     shape_str(target.shape()));
  const std::size_t n = pred.size();
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double d = pred.data()[i] - target.data()[i];
    loss += d * d;
  }
  loss /= static_cast<double>(n);
  auto pn = pred.node_ptr();
  auto tn = target.node_ptr();
  return make_op("mse", {}, {loss}, {pred, target},
                 [pn, tn, n](detail::Node& self) {
                   const double g = self.grad[0] * 2.0 / static_cast<double>(n);
                   if (pn->requires_grad) {
                     pn->ensure_grad();
                     for (std::size_t i = 0; i < n; ++i)
                       pn->grad[i] += g * (pn->data[i] - tn->data[i]);
                   }
                   if (tn->requires_grad) {
                     tn->ensure_grad();
                     for (std::size_t i = 0; i < n; ++i)
                       tn->grad[i] -= g * (pn->data[i] - tn->data[i]);
                   }
                 });
}

Tensor margin_ranking_loss(const Tensor& s_pos, const Tensor& s_neg, double margin) {
  if (margin < 0.0) throw ContractError("margin must be >= 0");
  if (s_pos.size() != 1 || s_neg.size() != 1)
    throw ShapeError("margin_ranking_loss expects scalar scores");
  const double raw = margin - (s_pos.data()[0] - s_neg.data()[0]);
  const double loss = raw > 0.0 ? raw : 0.0;
  auto pn = s_pos.node_ptr();
  auto nn = s_neg.node_ptr();
  // Subgradient at the hinge point (raw == 0) is zero.
  const bool active = raw > 0.0;
  return make_op("margin_ranking", {}, {loss}, {s_pos, s_neg},
                 [pn, nn, active](detail::Node& self) {
                   const double g = active ? self.grad[0] : 0.0;
                   if (pn->requires_grad) {
                     pn->ensure_grad();
                     pn->grad[0] -= g;
                   }
                   if (nn->requires_grad) {
                     nn->ensure_grad();
                     nn->grad[0] += g;
                   }
                 });
}

Tensor embedding_lookup(const Tensor& table, const std::vector<std::size_t>& ids) {
  require_rank2(table, "embedding table");
  const std::size_t v = table.dim(0), d = table.dim(1);
  std::vector<double> out(ids.size() * d);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= v)
      throw IndexError("embedding id " + std::to_string(ids[i]) +
                       " out of range for table of " + std::to_string(v));
    std::copy_n(table.data().data() + ids[i] * d, d, out.data() + i * d);
  }
  auto tn = table.node_ptr();
  return make_op("embedding_lookup", {ids.size(), d}, std::move(out), {table},
                 [tn, ids, d](detail::Node& self) {
                   if (!tn->requires_grad) return;
                   tn->ensure_grad();
                   for (std::size_t i = 0; i < ids.size(); ++i)
                     for (std::size_t j = 0; j < d; ++j)
                       tn->grad[ids[i] * d + j] += self.grad[i * d + j];
                 });
}

namespace {

Tensor concat_axis0(const char* op, const std::vector<Tensor>& parts,
                    Shape out_shape, std::size_t part_rows_axis) {
  std::vector<double> out;
  std::vector<std::size_t> offsets;
  for (const auto& p : parts) {
    offsets.push_back(out.size());
    out.insert(out.end(), p.data().begin(), p.data().end());
  }
  std::vector<std::shared_ptr<detail::Node>> nodes;
  for (const auto& p : parts) nodes.push_back(p.node_ptr());
  (void)part_rows_axis;
  return make_op(op, std::move(out_shape), std::move(out), parts,
                 [nodes, offsets](detail::Node& self) {
                   for (std::size_t i = 0; i < nodes.size(); ++i) {
                     if (!nodes[i]->requires_grad) continue;
                     nodes[i]->ensure_grad();
                     for (std::size_t j = 0; j < nodes[i]->data.size(); ++j)
                       nodes[i]->grad[j] += self.grad[offsets[i] + j];
                   }
                 });
}

}  // namespace

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat_rows of zero tensors");
  const std::size_t n = parts[0].dim(1);
  std::size_t rows = 0;
  for (const auto& p : parts) {
    require_rank2(p, "concat_rows part");
    if (p.dim(1) != n) throw ShapeError("concat_rows: column counts differ");
    rows += p.dim(0);
  }
  return concat_axis0("concat_rows", parts, {rows, n}, 0);
}

Tensor stack_rows(const std::vector<Tensor>& rows_in) {
  if (rows_in.empty()) throw ContractError("stack_rows of zero tensors");
  const std::size_t d = rows_in[0].dim(0);
  for (const auto& r : rows_in)
    if (r.rank() != 1 || r.dim(0) != d)
      throw ShapeError("stack_rows: all parts must be rank-1 of equal length");
  return concat_axis0("stack_rows", rows_in, {rows_in.size(), d}, 0);
}

Tensor stack_matrices(const std::vector<Tensor>& mats) {
  if (mats.empty()) throw ContractError("stack_matrices of zero tensors");
  const Shape s = mats[0].shape();
  for (const auto& m : mats) {
    require_rank2(m, "stack_matrices part");
    if (m.shape() != s) throw ShapeError("stack_matrices: shapes differ");
  }
  return concat_axis0("stack_matrices", mats, {mats.size(), s[0], s[1]}, 0);
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw ContractError("concat_cols of zero tensors");
  const std::size_t m = parts[0].dim(0);
  std::size_t cols = 0;
  for (const auto& p : parts) {
    require_rank2(p, "concat_cols part");
    if (p.dim(0) != m) throw ShapeError("concat_cols: row counts differ");
    cols += p.dim(1);
  }
  std::vector<double> out(m * cols);
  std::vector<std::size_t> col_off;
  std::size_t off = 0;
  for (const auto& p : parts) {
    col_off.push_back(off);
    const std::size_t n = p.dim(1);
    for (std::size_t i = 0; i < m; ++i)
      std::copy_n(p.data().data() + i * n, n, out.data() + i * cols + off);
    off += n;
  }
  std::vector<std::shared_ptr<detail::Node>> nodes;
  for (const auto& p : parts) nodes.push_back(p.node_ptr());
  return make_op("concat_cols", {m, cols}, std::move(out), parts,
                 [nodes, col_off, m, cols](detail::Node& self) {
                   for (std::size_t i = 0; i < nodes.size(); ++i) {
                     if (!nodes[i]->requires_grad) continue;
                     nodes[i]->ensure_grad();
                     const std::size_t n = nodes[i]->shape[1];
                     for (std::size_t r = 0; r < m; ++r)
                       for (std::size_t j = 0; j < n; ++j)
                         nodes[i]->grad[r * n + j] +=
                             self.grad[r * cols + col_off[i] + j];
                   }
                 });
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count) {
  require_rank2(x, "slice_rows input");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (begin + count > m)
    throw IndexError("slice_rows [" + std::to_string(begin) + "," +
                     std::to_string(begin + count) + ") out of range for " +
                     shape_str(x.shape()));
  std::vector<double> out(x.data().begin() + begin * n,
                          x.data().begin() + (begin + count) * n);
  auto xn = x.node_ptr();
  return make_op("slice_rows", {count, n}, std::move(out), {x},
                 [xn, begin, count, n](detail::Node& self) {
                   if (!xn->requires_grad) return;
                   xn->ensure_grad();
                   for (std::size_t i = 0; i < count * n; ++i)
                     xn->grad[begin * n + i] += self.grad[i];
                 });
}

Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count) {
  require_rank2(x, "slice_cols input");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (begin + count > n)
    throw IndexError("slice_cols out of range for " + shape_str(x.shape()));
  std::vector<double> out(m * count);
  for (std::size_t i = 0; i < m; ++i)
    std::copy_n(x.data().data() + i * n + begin, count, out.data() + i * count);
  auto xn = x.node_ptr();
  return make_op("slice_cols", {m, count}, std::move(out), {x},
                 [xn, begin, count, m, n](detail::Node& self) {
                   if (!xn->requires_grad) return;
                   xn->ensure_grad();
                   for (std::size_t i = 0; i < m; ++i)
                     for (std::size_t j = 0; j < count; ++j)
                       xn->grad[i * n + begin + j] += self.grad[i * count + j];
                 });
}

Tensor row(const Tensor& x, std::size_t i) {
  require_rank2(x, "row input");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (i >= m) throw IndexError("row " + std::to_string(i) + " out of range");
  std::vector<double> out(x.data().begin() + i * n, x.data().begin() + (i + 1) * n);
  auto xn = x.node_ptr();
  return make_op("row", {n}, std::move(out), {x},
                 [xn, i, n](detail::Node& self) {
                   if (!xn->requires_grad) return;
                   xn->ensure_grad();
                   for (std::size_t j = 0; j < n; ++j)
                     xn->grad[i * n + j] += self.grad[j];
                 });
}

namespace {

Tensor reduce_all(const char* op, const Tensor& x, bool take_mean) {
  double acc = 0.0;
  for (double v : x.data()) acc += v;
  const double denom = take_mean ? static_cast<double>(x.size()) : 1.0;
  auto xn = x.node_ptr();
  return make_op(op, {}, {acc / denom}, {x},
                 [xn, denom](detail::Node& self) {
                   if (!xn->requires_grad) return;
                   xn->ensure_grad();
                   const double g = self.grad[0] / denom;
                   for (double& gv : xn->grad) gv += g;
                 });
}

}  // namespace

Tensor sum(const Tensor& x) { return reduce_all("sum", x, false); }
Tensor mean(const Tensor& x) { return reduce_all("mean", x, true); }

Tensor pool_rows(const Tensor& x, std::size_t begin, std::size_t end, PoolKind kind) {
  require_rank2(x, "pool_rows input");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (begin >= end || end > m)
    throw IndexError("pool_rows segment [" + std::to_string(begin) + "," +
                     std::to_string(end) + ") invalid for " +
                     shape_str(x.shape()));
  const std::size_t len = end - begin;
  std::vector<double> out(n);
  auto argext = std::make_shared<std::vector<std::size_t>>();  // min/max rows
  if (kind == PoolKind::sum || kind == PoolKind::mean) {
    for (std::size_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::size_t i = begin; i < end; ++i) acc += x.data()[i * n + j];
      out[j] = kind == PoolKind::mean ? acc / static_cast<double>(len) : acc;
    }
  } else {
    argext->resize(n);
    for (std::size_t j = 0; j < n; ++j) {
      std::size_t best = begin;
      for (std::size_t i = begin + 1; i < end; ++i) {
        const double v = x.data()[i * n + j];
        const double b = x.data()[best * n + j];
        if (kind == PoolKind::max ? v > b : v < b) best = i;
      }
      (*argext)[j] = best;
      out[j] = x.data()[best * n + j];
    }
  }
  auto xn = x.node_ptr();
  return make_op("pool_rows", {n}, std::move(out), {x},
                 [xn, begin, end, n, len, kind, argext](detail::Node& self) {
                   if (!xn->requires_grad) return;
                   xn->ensure_grad();
                   if (kind == PoolKind::sum || kind == PoolKind::mean) {
                     const double s =
                         kind == PoolKind::mean ? 1.0 / static_cast<double>(len) : 1.0;
                     for (std::size_t j = 0; j < n; ++j)
                       for (std::size_t i = begin; i < end; ++i)
                         xn->grad[i * n + j] += self.grad[j] * s;
                   } else {
                     for (std::size_t j = 0; j < n; ++j)
                       xn->grad[(*argext)[j] * n + j] += self.grad[j];
                   }
                 });
}

// ---- gradcheck -------------------------------------------------------------

GradcheckReport gradcheck(const std::function<Tensor(const Tensor&)>& f,
                          const Tensor& x, double eps, double tol) {
  Tensor probe = x.detach();
  const double y0 = f(probe).value();
  const double y1 = f(probe).value();
  if (y0 != y1)
    throw ContractError(
        "gradcheck: function is not deterministic (disable dropout)");

  Tensor xg = x.detach().set_requires_grad(true);
  Tensor loss = f(xg);
  if (loss.size() != 1) throw ContractError("gradcheck: f must be scalar-valued");
  backward(loss);

  GradcheckReport rep;
  rep.analytic = xg.grad();
  rep.numeric.resize(x.size());
  Tensor xp = x.detach();
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = xp.data()[i];
    xp.data()[i] = orig + eps;
    const double fp = f(xp).value();
    xp.data()[i] = orig - eps;
    const double fm = f(xp).value();
    xp.data()[i] = orig;
    rep.numeric[i] = (fp - fm) / (2.0 * eps);
  }
  rep.max_rel_err = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double a = rep.analytic[i], nu = rep.numeric[i];
    const double denom = std::max({std::abs(a), std::abs(nu), 1e-8});
    const double err = std::abs(a - nu) / denom;
    if (err > rep.max_rel_err) {
      rep.max_rel_err = err;
      rep.worst_index = i;
    }
  }
  rep.pass = rep.max_rel_err < tol;
  return rep;
}

}  // namespace cohlab
