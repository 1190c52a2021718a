#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "classkit/errors.hpp"
#include "classkit/rng.hpp"

namespace classkit {

using Shape = std::vector<int64_t>;

int64_t shape_numel(const Shape& s);

struct TensorImpl;

// Dense 64-bit tensor with reverse-mode autodiff. A Tensor is a cheap handle
// onto a graph node; ops build the graph eagerly and backward() walks it from
// a scalar root. Gradients accumulate across backward calls until zeroed.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape);
  static Tensor full(Shape shape, double v);
  static Tensor from(std::vector<double> data, Shape shape);
  static Tensor uniform(Shape shape, Rng& rng, double lo, double hi);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const;
  int ndim() const;
  int64_t dim(int i) const;
  int64_t numel() const;

  const std::vector<double>& value() const;
  std::vector<double>& value_mut();  // leaf updates (optimizer, loaders)

  bool requires_grad() const;
  Tensor& set_requires_grad(bool v);

  bool has_grad() const;
  const std::vector<double>& grad() const;  // ContractError if never populated
  void zero_grad();

  double item() const;  // numel()==1 only

  TensorImpl* impl() const { return impl_.get(); }
  const std::shared_ptr<TensorImpl>& impl_ptr() const { return impl_; }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<TensorImpl> impl_;
  friend Tensor make_node(Shape shape, std::vector<Tensor> parents);
};

struct TensorImpl {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::vector<std::shared_ptr<TensorImpl>> parents;
  std::function<void()> backward_fn;  // unset on leaves and no-grad nodes

  int64_t numel() const { return static_cast<int64_t>(value.size()); }
  void ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
  }
};

// While a guard is alive, ops compute values only: no parents, no backward
// functions, outputs never require grad. Used for inference and evaluation.
struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};
bool grad_enabled();

// Allocates a graph node for a new op. Requires-grad and parent links follow
// from the parents and the grad mode; the caller fills value and backward_fn.
Tensor make_node(Shape shape, std::vector<Tensor> parents);

// --- ops ------------------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);      // 2-D only
Tensor transpose2d(const Tensor& x);
Tensor softmax_rows(const Tensor& x);                 // 2-D, softmax over dim 1

// x: [N,Cin,H,W], w: [Cout,Cin,k,k], bias: [Cout] (may be undefined)
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias, int64_t stride,
              int64_t padding);

Tensor bilinear_resize(const Tensor& x, int64_t out_h, int64_t out_w);

// Train mode normalizes with batch statistics and updates the running
// buffers in place (momentum 0.1); eval mode uses the running buffers.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& shift,
                  Tensor& running_mean, Tensor& running_var, bool training,
                  double momentum = 0.1, double eps = 1e-5);

Tensor relu(const Tensor& x);
Tensor sigmoid(const Tensor& x);

Tensor reshape(const Tensor& x, Shape shape);
Tensor concat_channels(const std::vector<Tensor>& xs);  // 4-D along dim 1
Tensor slice_batch(const Tensor& x, int64_t n);          // [N,C,H,W] -> [C,H,W]
Tensor stack_batch(const std::vector<Tensor>& xs);       // inverse of the above

Tensor add(const Tensor& a, const Tensor& b);  // same shape, elementwise
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add_const(const Tensor& x, double c);
Tensor mul_const(const Tensor& x, double c);
Tensor sub_from_const(double c, const Tensor& x);  // c - x
Tensor max_const(const Tensor& x, double c);       // max(x, c), d/dx = [x > c]

// alpha: scalar tensor (shape [1]); out = alpha * x + y
Tensor scale_add(const Tensor& alpha, const Tensor& x, const Tensor& y);

// whole-tensor reductions (exact accumulation, order-independent)
Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor std_dev(const Tensor& x);  // population, sqrt(var + 1e-12)

// window reductions over one (n, c) plane of a 4-D tensor (2-D maps are
// treated as [1,1,H,W]); r0/c0/h/w select the window
Tensor window_mean(const Tensor& x, int64_t n, int64_t c, int64_t r0, int64_t c0,
                   int64_t h, int64_t w);
Tensor window_std(const Tensor& x, int64_t n, int64_t c, int64_t r0, int64_t c0,
                  int64_t h, int64_t w);

// Topological reverse pass from a scalar root. Deterministic order; grads of
// every reachable requires_grad tensor are accumulated (+=).
void backward(const Tensor& root);

// Kink fingerprinting for finite-difference validity. While a sink is armed,
// every op with a non-smooth point (relu, max_const, the bce log clamp) folds
// its active branch pattern into *sink. Two forward passes with different
// fingerprints took different branches somewhere in between, so a difference
// quotient spanning them straddles a kink and is not a usable oracle there.
// Thread-local; disarm with nullptr. fold_branch_event requires an armed sink.
void set_branch_fingerprint_sink(uint64_t* sink);
bool branch_fingerprint_armed();
void fold_branch_event(uint64_t tag);

}  // namespace classkit
