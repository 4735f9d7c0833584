#include "crossat/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <sstream>

#include "crossat/rng.hpp"

namespace crossat {

namespace {

std::size_t shape_product(const std::vector<std::size_t>& shape) {
  std::size_t p = 1;
  for (std::size_t e : shape) p *= e;
  return p;
}

std::string shape_str(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  os << "]";
  return os.str();
}

void require_finite(std::span<const double> values) {
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw NumericError("tensor holds a non-finite value");
    }
  }
}

void require_2d(const Tensor& t, const char* what) {
  if (t.rank() != 2) {
    throw DimensionError(std::string(what) + " must be 2-D, got " +
                         shape_str(t.shape()));
  }
}

// Largest double strictly below 1; used to keep sigmoid outputs in (0, 1).
const double kOneBelow = std::nextafter(1.0, 0.0);
const double kTinyPositive = std::numeric_limits<double>::min();

}  // namespace

// ---- Tensor ----------------------------------------------------------------

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> values,
               bool requires_grad) {
  if (shape.empty()) throw DimensionError("tensor shape must not be empty");
  for (std::size_t e : shape) {
    if (e == 0) throw DimensionError("tensor extents must be positive");
  }
  if (shape_product(shape) != values.size()) {
    throw DimensionError("shape " + shape_str(shape) + " does not match " +
                         std::to_string(values.size()) + " values");
  }
  require_finite(values);
  storage_ = std::make_shared<Storage>();
  storage_->shape = std::move(shape);
  storage_->data = std::move(values);
  storage_->requires_grad = requires_grad;
  if (requires_grad) storage_->grad.assign(storage_->data.size(), 0.0);
}

Tensor Tensor::zeros(std::vector<std::size_t> shape, bool requires_grad) {
  const std::size_t n = shape_product(shape);
  return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

Tensor Tensor::full(std::vector<std::size_t> shape, double value,
                    bool requires_grad) {
  const std::size_t n = shape_product(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor({1}, {value}, requires_grad);
}

Tensor Tensor::matrix(std::size_t n, std::size_t m, std::vector<double> values,
                      bool requires_grad) {
  return Tensor({n, m}, std::move(values), requires_grad);
}

Tensor Tensor::identity(std::size_t n, bool requires_grad) {
  std::vector<double> v(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) v[i * n + i] = 1.0;
  return Tensor({n, n}, std::move(v), requires_grad);
}

const std::vector<std::size_t>& Tensor::shape() const {
  if (!storage_) throw ContractError("use of an undefined tensor");
  return storage_->shape;
}

std::size_t Tensor::size() const {
  if (!storage_) throw ContractError("use of an undefined tensor");
  return storage_->data.size();
}

std::size_t Tensor::rows() const {
  require_2d(*this, "tensor");
  return shape()[0];
}

std::size_t Tensor::cols() const {
  require_2d(*this, "tensor");
  return shape()[1];
}

bool Tensor::requires_grad() const {
  return storage_ && storage_->requires_grad;
}

double Tensor::item() const {
  if (size() != 1) {
    throw ContractError("item() requires a scalar tensor, got shape " +
                        shape_str(shape()));
  }
  return storage_->data[0];
}

double Tensor::at(std::size_t i, std::size_t j) const {
  require_2d(*this, "tensor");
  return storage_->data[i * cols() + j];
}

std::span<const double> Tensor::values() const {
  if (!storage_) throw ContractError("use of an undefined tensor");
  return storage_->data;
}

std::span<double> Tensor::values() {
  if (!storage_) throw ContractError("use of an undefined tensor");
  return storage_->data;
}

std::span<const double> Tensor::grad() const {
  if (!requires_grad()) {
    throw ContractError("grad() on a tensor without requires_grad");
  }
  return storage_->grad;
}

std::span<double> Tensor::grad() {
  if (!requires_grad()) {
    throw ContractError("grad() on a tensor without requires_grad");
  }
  return storage_->grad;
}

void Tensor::zero_grad() {
  if (requires_grad()) {
    std::fill(storage_->grad.begin(), storage_->grad.end(), 0.0);
  }
}

void Tensor::accumulate_grad(std::span<const double> g) {
  if (!requires_grad()) return;
  if (g.size() != storage_->grad.size()) {
    throw DimensionError("gradient size mismatch");
  }
  for (std::size_t i = 0; i < g.size(); ++i) storage_->grad[i] += g[i];
}

Tensor Tensor::detached_copy() const {
  if (!storage_) return Tensor();
  return Tensor(storage_->shape, storage_->data, false);
}

// ---- Tape ------------------------------------------------------------------

void Tape::record(const Tensor& output, std::vector<Tensor> touched,
                  std::function<void()> backward) {
  outputs_.insert(output.id());
  nodes_.push_back(Node{std::move(touched), std::move(backward)});
}

void Tape::backward(const Tensor& loss) {
  if (loss.size() != 1) {
    throw ContractError("backward() requires a scalar loss");
  }
  if (!contains(loss)) {
    throw ContractError("backward() loss was not recorded on this tape");
  }
  // Reset the grads of every tensor this tape touches, then seed the loss.
  std::unordered_set<const void*> seen;
  for (auto& node : nodes_) {
    for (auto& t : node.touched) {
      if (t.requires_grad() && seen.insert(t.id()).second) t.zero_grad();
    }
  }
  Tensor seed = loss;
  seed.grad()[0] = 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
    it->fn();
  }
  clear();
}

void Tape::clear() {
  nodes_.clear();
  outputs_.clear();
}

// ---- Ops -------------------------------------------------------------------

namespace {

bool should_record(Tape* tape, std::initializer_list<const Tensor*> inputs) {
  if (!tape) return false;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

}  // namespace

Tensor affine(Tape* tape, const Tensor& x, const Tensor& weight,
              const Tensor& bias) {
  require_2d(x, "affine input");
  require_2d(weight, "affine weight");
  if (bias.rank() != 1) {
    throw DimensionError("affine bias must be 1-D, got " +
                         shape_str(bias.shape()));
  }
  const std::size_t n = x.rows(), d_in = x.cols();
  const std::size_t d_out = weight.cols();
  if (weight.rows() != d_in || bias.size() != d_out) {
    throw DimensionError("affine shape mismatch: x " + shape_str(x.shape()) +
                         " vs weight " + shape_str(weight.shape()) +
                         " and bias " + shape_str(bias.shape()));
  }
  std::vector<double> out(n * d_out);
  const double* xd = x.values().data();
  const double* wd = weight.values().data();
  const double* bd = bias.values().data();
  for (std::size_t i = 0; i < n; ++i) {
    double* orow = out.data() + i * d_out;
    for (std::size_t j = 0; j < d_out; ++j) orow[j] = bd[j];
    const double* xrow = xd + i * d_in;
    for (std::size_t k = 0; k < d_in; ++k) {
      const double xv = xrow[k];
      const double* wrow = wd + k * d_out;
      for (std::size_t j = 0; j < d_out; ++j) orow[j] += xv * wrow[j];
    }
  }
  Tensor result({n, d_out}, std::move(out),
                x.requires_grad() || weight.requires_grad() || bias.requires_grad());
  if (should_record(tape, {&x, &weight, &bias})) {
    Tensor xc = x, wc = weight, bc = bias, oc = result;
    tape->record(result, {xc, wc, bc, oc}, [xc, wc, bc, oc, n, d_in, d_out]() mutable {
      const double* g = oc.grad().data();
      if (xc.requires_grad()) {
        std::vector<double> gx(n * d_in, 0.0);
        const double* wd2 = wc.values().data();
        for (std::size_t i = 0; i < n; ++i) {
          const double* grow = g + i * d_out;
          double* gxrow = gx.data() + i * d_in;
          for (std::size_t k = 0; k < d_in; ++k) {
            const double* wrow = wd2 + k * d_out;
            double s = 0.0;
            for (std::size_t j = 0; j < d_out; ++j) s += grow[j] * wrow[j];
            gxrow[k] = s;
          }
        }
        xc.accumulate_grad(gx);
      }
      if (wc.requires_grad()) {
        std::vector<double> gw(d_in * d_out, 0.0);
        const double* xd2 = xc.values().data();
        for (std::size_t i = 0; i < n; ++i) {
          const double* xrow = xd2 + i * d_in;
          const double* grow = g + i * d_out;
          for (std::size_t k = 0; k < d_in; ++k) {
            const double xv = xrow[k];
            double* gwrow = gw.data() + k * d_out;
            for (std::size_t j = 0; j < d_out; ++j) gwrow[j] += xv * grow[j];
          }
        }
        wc.accumulate_grad(gw);
      }
      if (bc.requires_grad()) {
        std::vector<double> gb(d_out, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
          const double* grow = g + i * d_out;
          for (std::size_t j = 0; j < d_out; ++j) gb[j] += grow[j];
        }
        bc.accumulate_grad(gb);
      }
    });
  }
  return result;
}

Tensor matmul(Tape* tape, const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul lhs");
  require_2d(b, "matmul rhs");
  const std::size_t n = a.rows(), k = a.cols(), m = b.cols();
  if (b.rows() != k) {
    throw DimensionError("matmul shape mismatch: " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
  }
  std::vector<double> out(n * m, 0.0);
  const double* ad = a.values().data();
  const double* bd = b.values().data();
  for (std::size_t i = 0; i < n; ++i) {
    const double* arow = ad + i * k;
    double* orow = out.data() + i * m;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = arow[p];
      const double* brow = bd + p * m;
      for (std::size_t j = 0; j < m; ++j) orow[j] += av * brow[j];
    }
  }
  Tensor result({n, m}, std::move(out), a.requires_grad() || b.requires_grad());
  if (should_record(tape, {&a, &b})) {
    Tensor ac = a, bc = b, oc = result;
    tape->record(result, {ac, bc, oc}, [ac, bc, oc, n, k, m]() mutable {
      const double* g = oc.grad().data();
      if (ac.requires_grad()) {
        std::vector<double> ga(n * k, 0.0);
        const double* bd2 = bc.values().data();
        for (std::size_t i = 0; i < n; ++i) {
          const double* grow = g + i * m;
          double* garow = ga.data() + i * k;
          for (std::size_t p = 0; p < k; ++p) {
            const double* brow = bd2 + p * m;
            double s = 0.0;
            for (std::size_t j = 0; j < m; ++j) s += grow[j] * brow[j];
            garow[p] = s;
          }
        }
        ac.accumulate_grad(ga);
      }
      if (bc.requires_grad()) {
        std::vector<double> gb(k * m, 0.0);
        const double* ad2 = ac.values().data();
        for (std::size_t i = 0; i < n; ++i) {
          const double* arow = ad2 + i * k;
          const double* grow = g + i * m;
          for (std::size_t p = 0; p < k; ++p) {
            const double av = arow[p];
            double* gbrow = gb.data() + p * m;
            for (std::size_t j = 0; j < m; ++j) gbrow[j] += av * grow[j];
          }
        }
        bc.accumulate_grad(gb);
      }
    });
  }
  return result;
}

namespace {

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + " shape mismatch: " +
                         shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
}

}  // namespace

Tensor add(Tape* tape, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  Tensor result(a.shape(), std::move(out), a.requires_grad() || b.requires_grad());
  if (should_record(tape, {&a, &b})) {
    Tensor ac = a, bc = b, oc = result;
    tape->record(result, {ac, bc, oc}, [ac, bc, oc]() mutable {
      ac.accumulate_grad(oc.grad());
      bc.accumulate_grad(oc.grad());
    });
  }
  return result;
}

Tensor subtract(Tape* tape, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "subtract");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
  Tensor result(a.shape(), std::move(out), a.requires_grad() || b.requires_grad());
  if (should_record(tape, {&a, &b})) {
    Tensor ac = a, bc = b, oc = result;
    tape->record(result, {ac, bc, oc}, [ac, bc, oc]() mutable {
      ac.accumulate_grad(oc.grad());
      if (bc.requires_grad()) {
        std::vector<double> gb(oc.size());
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] = -oc.grad()[i];
        bc.accumulate_grad(gb);
      }
    });
  }
  return result;
}

Tensor hadamard(Tape* tape, const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "hadamard");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
  Tensor result(a.shape(), std::move(out), a.requires_grad() || b.requires_grad());
  if (should_record(tape, {&a, &b})) {
    Tensor ac = a, bc = b, oc = result;
    tape->record(result, {ac, bc, oc}, [ac, bc, oc]() mutable {
      if (ac.requires_grad()) {
        std::vector<double> ga(oc.size());
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] = bc.values()[i] * oc.grad()[i];
        ac.accumulate_grad(ga);
      }
      if (bc.requires_grad()) {
        std::vector<double> gb(oc.size());
        for (std::size_t i = 0; i < gb.size(); ++i) gb[i] = ac.values()[i] * oc.grad()[i];
        bc.accumulate_grad(gb);
      }
    });
  }
  return result;
}

Tensor scale(Tape* tape, const Tensor& a, double c) {
  if (!std::isfinite(c)) throw NumericError("scale factor must be finite");
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = c * a.values()[i];
  Tensor result(a.shape(), std::move(out), a.requires_grad());
  if (should_record(tape, {&a})) {
    Tensor ac = a, oc = result;
    tape->record(result, {ac, oc}, [ac, oc, c]() mutable {
      std::vector<double> ga(oc.size());
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] = c * oc.grad()[i];
      ac.accumulate_grad(ga);
    });
  }
  return result;
}

Tensor activation(Tape* tape, const Tensor& x, Activation kind, double slope) {
  if (kind == Activation::LeakyRelu && !(slope > 0.0 && slope < 1.0)) {
    throw ConfigError("leaky_relu slope must lie in (0,1)");
  }
  std::vector<double> out(x.size());
  switch (kind) {
    case Activation::LeakyRelu:
      for (std::size_t i = 0; i < out.size(); ++i) {
        const double v = x.values()[i];
        out[i] = v > 0.0 ? v : slope * v;
      }
      break;
    case Activation::Sigmoid:
      for (std::size_t i = 0; i < out.size(); ++i) {
        double s = 1.0 / (1.0 + std::exp(-x.values()[i]));
        // Keep the range an open interval so gate outputs stay in (0,1).
        out[i] = std::clamp(s, kTinyPositive, kOneBelow);
      }
      break;
    case Activation::Tanh:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(x.values()[i]);
      break;
    default:
      throw ConfigError("unknown activation kind");
  }
  Tensor result(x.shape(), std::move(out), x.requires_grad());
  if (should_record(tape, {&x})) {
    Tensor xc = x, oc = result;
    tape->record(result, {xc, oc}, [xc, oc, kind, slope]() mutable {
      std::vector<double> gx(oc.size());
      switch (kind) {
        case Activation::LeakyRelu:
          for (std::size_t i = 0; i < gx.size(); ++i) {
            gx[i] = (xc.values()[i] > 0.0 ? 1.0 : slope) * oc.grad()[i];
          }
          break;
        case Activation::Sigmoid:
          for (std::size_t i = 0; i < gx.size(); ++i) {
            const double s = oc.values()[i];
            gx[i] = s * (1.0 - s) * oc.grad()[i];
          }
          break;
        case Activation::Tanh:
          for (std::size_t i = 0; i < gx.size(); ++i) {
            const double t = oc.values()[i];
            gx[i] = (1.0 - t * t) * oc.grad()[i];
          }
          break;
      }
      xc.accumulate_grad(gx);
    });
  }
  return result;
}

Tensor global_average_pool(Tape* tape, const Tensor& x, std::size_t groups) {
  require_2d(x, "global_average_pool input");
  const std::size_t n = x.rows(), d = x.cols();
  if (groups == 0 || d % groups != 0) {
    throw DimensionError("global_average_pool: width " + std::to_string(d) +
                         " not divisible by " + std::to_string(groups) +
                         " groups");
  }
  const std::size_t w = d / groups;
  std::vector<double> out(n * groups, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t g = 0; g < groups; ++g) {
      double s = 0.0;
      for (std::size_t j = 0; j < w; ++j) s += x.values()[i * d + g * w + j];
      out[i * groups + g] = s / static_cast<double>(w);
    }
  }
  Tensor result({n, groups}, std::move(out), x.requires_grad());
  if (should_record(tape, {&x})) {
    Tensor xc = x, oc = result;
    tape->record(result, {xc, oc}, [xc, oc, n, d, groups, w]() mutable {
      std::vector<double> gx(n * d);
      const double inv = 1.0 / static_cast<double>(w);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t g = 0; g < groups; ++g) {
          const double gv = oc.grad()[i * groups + g] * inv;
          for (std::size_t j = 0; j < w; ++j) gx[i * d + g * w + j] = gv;
        }
      }
      xc.accumulate_grad(gx);
    });
  }
  return result;
}

Tensor gather_rows(Tape* tape, const Tensor& x, std::span<const std::size_t> rows) {
  require_2d(x, "gather_rows input");
  const std::size_t d = x.cols();
  std::vector<double> out(rows.size() * d);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i] >= x.rows()) throw DimensionError("gather_rows index out of range");
    std::copy_n(x.values().data() + rows[i] * d, d, out.data() + i * d);
  }
  Tensor result({rows.size(), d}, std::move(out), x.requires_grad());
  if (should_record(tape, {&x})) {
    Tensor xc = x, oc = result;
    std::vector<std::size_t> idx(rows.begin(), rows.end());
    tape->record(result, {xc, oc}, [xc, oc, idx = std::move(idx), d]() mutable {
      std::vector<double> gx(xc.size(), 0.0);
      for (std::size_t i = 0; i < idx.size(); ++i) {
        for (std::size_t j = 0; j < d; ++j) {
          gx[idx[i] * d + j] += oc.grad()[i * d + j];
        }
      }
      xc.accumulate_grad(gx);
    });
  }
  return result;
}

Tensor concat_rows(Tape* tape, const Tensor& a, const Tensor& b) {
  require_2d(a, "concat_rows lhs");
  require_2d(b, "concat_rows rhs");
  if (a.cols() != b.cols()) {
    throw DimensionError("concat_rows column mismatch: " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
  }
  std::vector<double> out;
  out.reserve(a.size() + b.size());
  out.insert(out.end(), a.values().begin(), a.values().end());
  out.insert(out.end(), b.values().begin(), b.values().end());
  Tensor result({a.rows() + b.rows(), a.cols()}, std::move(out),
                a.requires_grad() || b.requires_grad());
  if (should_record(tape, {&a, &b})) {
    Tensor ac = a, bc = b, oc = result;
    tape->record(result, {ac, bc, oc}, [ac, bc, oc]() mutable {
      if (ac.requires_grad()) {
        ac.accumulate_grad(oc.grad().subspan(0, ac.size()));
      }
      if (bc.requires_grad()) {
        bc.accumulate_grad(oc.grad().subspan(ac.size(), bc.size()));
      }
    });
  }
  return result;
}

Tensor concat_cols(Tape* tape, const Tensor& a, const Tensor& b) {
  require_2d(a, "concat_cols lhs");
  require_2d(b, "concat_cols rhs");
  if (a.rows() != b.rows()) {
    throw DimensionError("concat_cols row mismatch: " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
  }
  const std::size_t n = a.rows(), da = a.cols(), db = b.cols();
  std::vector<double> out(n * (da + db));
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(a.values().data() + i * da, da, out.data() + i * (da + db));
    std::copy_n(b.values().data() + i * db, db, out.data() + i * (da + db) + da);
  }
  Tensor result({n, da + db}, std::move(out),
                a.requires_grad() || b.requires_grad());
  if (should_record(tape, {&a, &b})) {
    Tensor ac = a, bc = b, oc = result;
    tape->record(result, {ac, bc, oc}, [ac, bc, oc, n, da, db]() mutable {
      if (ac.requires_grad()) {
        std::vector<double> ga(n * da);
        for (std::size_t i = 0; i < n; ++i) {
          std::copy_n(oc.grad().data() + i * (da + db), da, ga.data() + i * da);
        }
        ac.accumulate_grad(ga);
      }
      if (bc.requires_grad()) {
        std::vector<double> gb(n * db);
        for (std::size_t i = 0; i < n; ++i) {
          std::copy_n(oc.grad().data() + i * (da + db) + da, db, gb.data() + i * db);
        }
        bc.accumulate_grad(gb);
      }
    });
  }
  return result;
}

Tensor sum_all(Tape* tape, const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  Tensor result = Tensor::scalar(s, x.requires_grad());
  if (should_record(tape, {&x})) {
    Tensor xc = x, oc = result;
    tape->record(result, {xc, oc}, [xc, oc]() mutable {
      std::vector<double> gx(xc.size(), oc.grad()[0]);
      xc.accumulate_grad(gx);
    });
  }
  return result;
}

Tensor mean_row_sq_dist(Tape* tape, const Tensor& a, const Tensor& b) {
  require_2d(a, "mean_row_sq_dist lhs");
  require_2d(b, "mean_row_sq_dist rhs");
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw PairingError("mean_row_sq_dist batches disagree: " +
                       shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const std::size_t n = a.rows();
  double total = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.values()[i] - b.values()[i];
    total += d * d;
  }
  Tensor result = Tensor::scalar(total / static_cast<double>(n),
                                 a.requires_grad() || b.requires_grad());
  if (should_record(tape, {&a, &b})) {
    Tensor ac = a, bc = b, oc = result;
    tape->record(result, {ac, bc, oc}, [ac, bc, oc, n]() mutable {
      const double g = oc.grad()[0] * 2.0 / static_cast<double>(n);
      if (ac.requires_grad()) {
        std::vector<double> ga(ac.size());
        for (std::size_t i = 0; i < ga.size(); ++i) {
          ga[i] = g * (ac.values()[i] - bc.values()[i]);
        }
        ac.accumulate_grad(ga);
      }
      if (bc.requires_grad()) {
        std::vector<double> gb(bc.size());
        for (std::size_t i = 0; i < gb.size(); ++i) {
          gb[i] = -g * (ac.values()[i] - bc.values()[i]);
        }
        bc.accumulate_grad(gb);
      }
    });
  }
  return result;
}

Tensor row_l2_distance(Tape* tape, const Tensor& a, const Tensor& b) {
  require_2d(a, "row_l2_distance lhs");
  require_2d(b, "row_l2_distance rhs");
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw PairingError("row_l2_distance batches disagree: " +
                       shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  }
  const std::size_t n = a.rows(), d = a.cols();
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) {
      const double diff = a.values()[i * d + j] - b.values()[i * d + j];
      s += diff * diff;
    }
    out[i] = std::sqrt(s);
  }
  Tensor result({n}, std::move(out), a.requires_grad() || b.requires_grad());
  if (should_record(tape, {&a, &b})) {
    Tensor ac = a, bc = b, oc = result;
    tape->record(result, {ac, bc, oc}, [ac, bc, oc, n, d]() mutable {
      std::vector<double> ga(ac.size(), 0.0);
      std::vector<double> gb(bc.size(), 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        const double dist = oc.values()[i];
        if (dist == 0.0) continue;  // subgradient 0 at coincident rows
        const double g = oc.grad()[i] / dist;
        for (std::size_t j = 0; j < d; ++j) {
          const double diff = ac.values()[i * d + j] - bc.values()[i * d + j];
          ga[i * d + j] = g * diff;
          gb[i * d + j] = -g * diff;
        }
      }
      if (ac.requires_grad()) ac.accumulate_grad(ga);
      if (bc.requires_grad()) bc.accumulate_grad(gb);
    });
  }
  return result;
}

Tensor triplet_hinge_mean(Tape* tape, const Tensor& d_pos, const Tensor& d_neg,
                          double margin) {
  if (d_pos.rank() != 1 || d_neg.rank() != 1 || d_pos.size() != d_neg.size()) {
    throw PairingError("triplet_hinge_mean distance vectors disagree");
  }
  const std::size_t n = d_pos.size();
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    total += std::max(d_pos.values()[i] - d_neg.values()[i] + margin, 0.0);
  }
  Tensor result = Tensor::scalar(total / static_cast<double>(n),
                                 d_pos.requires_grad() || d_neg.requires_grad());
  if (should_record(tape, {&d_pos, &d_neg})) {
    Tensor pc = d_pos, nc = d_neg, oc = result;
    tape->record(result, {pc, nc, oc}, [pc, nc, oc, margin, n]() mutable {
      const double g = oc.grad()[0] / static_cast<double>(n);
      std::vector<double> gp(n, 0.0), gn(n, 0.0);
      for (std::size_t i = 0; i < n; ++i) {
        if (pc.values()[i] - nc.values()[i] + margin > 0.0) {
          gp[i] = g;
          gn[i] = -g;
        }
      }
      if (pc.requires_grad()) pc.accumulate_grad(gp);
      if (nc.requires_grad()) nc.accumulate_grad(gn);
    });
  }
  return result;
}

Tensor softmax_cross_entropy(Tape* tape, const Tensor& logits,
                             std::span<const std::size_t> labels) {
  require_2d(logits, "softmax_cross_entropy logits");
  const std::size_t n = logits.rows(), c = logits.cols();
  if (labels.size() != n) {
    throw PairingError("softmax_cross_entropy: " + std::to_string(labels.size()) +
                       " labels for " + std::to_string(n) + " rows");
  }
  for (std::size_t lbl : labels) {
    if (lbl >= c) {
      throw ContractError("label index " + std::to_string(lbl) +
                          " out of range for " + std::to_string(c) + " classes");
    }
  }
  std::vector<double> probs(n * c);
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double* row = logits.values().data() + i * c;
    double mx = row[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) {
      probs[i * c + j] = std::exp(row[j] - mx);
      z += probs[i * c + j];
    }
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] /= z;
    total -= std::log(probs[i * c + labels[i]]);
  }
  Tensor result = Tensor::scalar(total / static_cast<double>(n),
                                 logits.requires_grad());
  if (should_record(tape, {&logits})) {
    Tensor lc = logits, oc = result;
    std::vector<std::size_t> lbl(labels.begin(), labels.end());
    tape->record(result, {lc, oc},
                 [lc, oc, probs = std::move(probs), lbl = std::move(lbl), n, c]() mutable {
      const double g = oc.grad()[0] / static_cast<double>(n);
      std::vector<double> gl(n * c);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < c; ++j) {
          gl[i * c + j] = g * (probs[i * c + j] - (lbl[i] == j ? 1.0 : 0.0));
        }
      }
      lc.accumulate_grad(gl);
    });
  }
  return result;
}

Tensor hard_sign(const Tensor& x) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double v = x.values()[i];
    out[i] = v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0);
  }
  return Tensor(x.shape(), std::move(out), false);
}

// ---- finite_diff_check -----------------------------------------------------

FiniteDiffReport finite_diff_check(
    const std::function<Tensor(Tape*)>& scalar_fn,
    std::span<const std::pair<std::string, Tensor>> params, double epsilon,
    std::uint64_t seed, std::size_t probes) {
  if (!(epsilon >= 1e-7 && epsilon <= 1e-3)) {
    throw ConfigError("finite_diff_check epsilon must lie in [1e-7, 1e-3]");
  }
  if (params.empty()) throw ContractError("finite_diff_check needs parameters");

  // Analytic pass.
  Tape tape;
  Tensor loss = scalar_fn(&tape);
  if (loss.size() != 1) throw ContractError("scalar_fn must return a scalar");
  tape.backward(loss);
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (const auto& [name, p] : params) {
    (void)name;
    if (!p.requires_grad()) {
      throw ContractError("finite_diff_check parameters must require grad");
    }
    analytic.emplace_back(p.grad().begin(), p.grad().end());
  }

  // Probe plan: at least one coordinate per parameter, remainder sampled
  // uniformly over all coordinates.
  Rng rng(seed);
  std::vector<std::pair<std::size_t, std::size_t>> plan;  // (param, coord)
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    plan.emplace_back(pi, rng.index(params[pi].second.size()));
  }
  std::size_t total_coords = 0;
  for (const auto& [name, p] : params) {
    (void)name;
    total_coords += p.size();
  }
  while (plan.size() < probes) {
    std::size_t flat = rng.index(total_coords);
    std::size_t pi = 0;
    while (flat >= params[pi].second.size()) {
      flat -= params[pi].second.size();
      ++pi;
    }
    plan.emplace_back(pi, flat);
  }

  FiniteDiffReport report;
  for (const auto& [pi, ci] : plan) {
    Tensor p = params[pi].second;
    const double original = p.values()[ci];
    p.values()[ci] = original + epsilon;
    const double f_plus = scalar_fn(nullptr).item();
    p.values()[ci] = original - epsilon;
    const double f_minus = scalar_fn(nullptr).item();
    p.values()[ci] = original;
    if (!std::isfinite(f_plus) || !std::isfinite(f_minus)) {
      throw NumericError("finite_diff_check: non-finite objective at perturbed point");
    }
    const double numeric = (f_plus - f_minus) / (2.0 * epsilon);
    const double exact = analytic[pi][ci];
    const double abs_err = std::abs(numeric - exact);
    const double rel_err =
        abs_err / std::max({1.0, std::abs(numeric), std::abs(exact)});
    report.max_abs_err = std::max(report.max_abs_err, abs_err);
    if (rel_err > report.max_rel_err) {
      report.max_rel_err = rel_err;
      report.worst_param = params[pi].first;
      report.worst_index = ci;
    }
    ++report.probes;
  }
  return report;
}

}  // namespace crossat
