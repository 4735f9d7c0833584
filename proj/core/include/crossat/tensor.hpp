#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "crossat/errors.hpp"

namespace crossat {

// Dense row-major tensor of doubles. Copies share storage, so a Tensor acts
// as a handle: gradients written through one copy are visible through all.
// Committed values must be finite; the constructor enforces this.
class Tensor {
 public:
  Tensor() = default;
  Tensor(std::vector<std::size_t> shape, std::vector<double> values,
         bool requires_grad = false);

  static Tensor zeros(std::vector<std::size_t> shape, bool requires_grad = false);
  static Tensor full(std::vector<std::size_t> shape, double value,
                     bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  // n x m matrix from row-major values.
  static Tensor matrix(std::size_t n, std::size_t m, std::vector<double> values,
                       bool requires_grad = false);
  static Tensor identity(std::size_t n, bool requires_grad = false);

  bool defined() const { return storage_ != nullptr; }
  const std::vector<std::size_t>& shape() const;
  std::size_t rank() const { return shape().size(); }
  std::size_t size() const;
  // 2-D accessors; throw DimensionError when the tensor is not 2-D.
  std::size_t rows() const;
  std::size_t cols() const;

  bool requires_grad() const;
  double item() const;
  double at(std::size_t i, std::size_t j) const;

  std::span<const double> values() const;
  std::span<double> values();
  std::span<const double> grad() const;
  std::span<double> grad();
  void zero_grad();
  void accumulate_grad(std::span<const double> g);

  // Stable identity of the underlying storage (for aliasing checks).
  const void* id() const { return storage_.get(); }

  // Same shape, shared nothing, requires_grad off.
  Tensor detached_copy() const;

 private:
  struct Storage {
    std::vector<std::size_t> shape;
    std::vector<double> data;
    std::vector<double> grad;  // allocated iff requires_grad
    bool requires_grad = false;
  };
  std::shared_ptr<Storage> storage_;
};

// Records the forward pass as an ordered list of nodes, each carrying a
// closure that propagates output gradients to input gradients. Nodes are
// appended in execution order, so inputs always precede their consumers;
// backward() runs the closures in reverse, which visits every node after all
// of its consumers. Not safe for concurrent use.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // `touched` lists every tensor the node reads or writes (inputs + output);
  // their grads are reset at the start of backward().
  void record(const Tensor& output, std::vector<Tensor> touched,
              std::function<void()> backward);

  // Seeds d(loss)/d(loss) = 1, runs all node closures in reverse order, then
  // clears the tape. `loss` must be a scalar produced on this tape.
  void backward(const Tensor& loss);

  void clear();
  std::size_t node_count() const { return nodes_.size(); }
  bool contains(const Tensor& t) const { return outputs_.count(t.id()) != 0; }

 private:
  struct Node {
    std::vector<Tensor> touched;
    std::function<void()> fn;
  };
  std::vector<Node> nodes_;
  std::unordered_set<const void*> outputs_;
};

enum class Activation { LeakyRelu, Sigmoid, Tanh };

// ---- Differentiable operations -------------------------------------------
// Every op takes the tape as its first argument; pass nullptr for a pure
// forward evaluation (frozen model, finite-difference probes). Recording is
// skipped when no input requires a gradient.

// out[i,j] = sum_k x[i,k] * weight[k,j] + bias[j]
Tensor affine(Tape* tape, const Tensor& x, const Tensor& weight, const Tensor& bias);
Tensor matmul(Tape* tape, const Tensor& a, const Tensor& b);
Tensor add(Tape* tape, const Tensor& a, const Tensor& b);
Tensor subtract(Tape* tape, const Tensor& a, const Tensor& b);
Tensor hadamard(Tape* tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape* tape, const Tensor& a, double c);
Tensor activation(Tape* tape, const Tensor& x, Activation kind, double slope = 0.01);
// Mean over each contiguous group of cols/groups inputs per row.
Tensor global_average_pool(Tape* tape, const Tensor& x, std::size_t groups);
Tensor gather_rows(Tape* tape, const Tensor& x, std::span<const std::size_t> rows);
Tensor concat_rows(Tape* tape, const Tensor& a, const Tensor& b);
Tensor concat_cols(Tape* tape, const Tensor& a, const Tensor& b);
Tensor sum_all(Tape* tape, const Tensor& x);
// Scalar: (1/n) * sum_i ||a_i - b_i||^2 over rows.
Tensor mean_row_sq_dist(Tape* tape, const Tensor& a, const Tensor& b);
// Per-row Euclidean distance, shape {n}.
Tensor row_l2_distance(Tape* tape, const Tensor& a, const Tensor& b);
// Scalar: (1/n) * sum_i max(d_pos[i] - d_neg[i] + margin, 0).
Tensor triplet_hinge_mean(Tape* tape, const Tensor& d_pos, const Tensor& d_neg,
                          double margin);
// Scalar: mean over rows of -log softmax(logits_i)[label_i].
Tensor softmax_cross_entropy(Tape* tape, const Tensor& logits,
                             std::span<const std::size_t> labels);
// Elementwise signum with sgn(0) = 0; not differentiable, never recorded.
Tensor hard_sign(const Tensor& x);

// ---- Gradient verification ------------------------------------------------

struct FiniteDiffReport {
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
  std::size_t probes = 0;
  std::string worst_param;
  std::size_t worst_index = 0;
};

// Compares analytic gradients of scalar_fn against central finite differences
// at `probes` randomly chosen parameter coordinates (at least one per
// parameter tensor). scalar_fn must rebuild the forward graph on every call;
// it receives a tape on the analytic pass and nullptr on value-only probes.
// Relative error uses max(1, |analytic|, |numeric|) as the denominator so the
// reported figure degrades to absolute error near zero-gradient plateaus.
FiniteDiffReport finite_diff_check(
    const std::function<Tensor(Tape*)>& scalar_fn,
    std::span<const std::pair<std::string, Tensor>> params, double epsilon,
    std::uint64_t seed, std::size_t probes);

}  // namespace crossat
