#include "classkit/tensor.hpp"

#include <cmath>
#include <cstring>
#include <unordered_set>

#include "classkit/kernels.hpp"
#include "classkit/numerics.hpp"

namespace classkit {

int64_t shape_numel(const Shape& s) {
  if (s.empty()) throw ShapeError("empty shape");
  int64_t n = 1;
  for (int64_t d : s) {
    if (d <= 0) throw ShapeError("non-positive extent in shape " + shape_str(s));
    n *= d;
  }
  return n;
}

namespace {
thread_local int g_no_grad_depth = 0;
}

NoGradGuard::NoGradGuard() { ++g_no_grad_depth; }
NoGradGuard::~NoGradGuard() { --g_no_grad_depth; }
bool grad_enabled() { return g_no_grad_depth == 0; }

Tensor make_node(Shape shape, std::vector<Tensor> parents) {
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->value.assign(shape_numel(impl->shape), 0.0);
  if (grad_enabled()) {
    for (const Tensor& p : parents) {
      if (p.defined() && p.requires_grad()) {
        impl->requires_grad = true;
        break;
      }
    }
    if (impl->requires_grad) {
      for (Tensor& p : parents)
        if (p.defined()) impl->parents.push_back(p.impl_ptr());
    }
  }
  return Tensor(std::move(impl));
}

Tensor Tensor::zeros(Shape shape) { return make_node(std::move(shape), {}); }

Tensor Tensor::full(Shape shape, double v) {
  Tensor t = make_node(std::move(shape), {});
  for (double& x : t.impl()->value) x = v;
  return t;
}

Tensor Tensor::from(std::vector<double> data, Shape shape) {
  if (static_cast<int64_t>(data.size()) != shape_numel(shape))
    throw ShapeError("data size " + std::to_string(data.size()) +
                     " does not match shape " + shape_str(shape));
  Tensor t = make_node(std::move(shape), {});
  t.impl()->value = std::move(data);
  return t;
}

Tensor Tensor::uniform(Shape shape, Rng& rng, double lo, double hi) {
  Tensor t = make_node(std::move(shape), {});
  for (double& x : t.impl()->value) x = rng.uniform(lo, hi);
  return t;
}

static TensorImpl* checked(const Tensor& t) {
  if (!t.defined()) throw ContractError("undefined tensor");
  return t.impl();
}

const Shape& Tensor::shape() const { return checked(*this)->shape; }
int Tensor::ndim() const { return static_cast<int>(shape().size()); }
int64_t Tensor::dim(int i) const { return shape().at(static_cast<size_t>(i)); }
int64_t Tensor::numel() const { return checked(*this)->numel(); }

const std::vector<double>& Tensor::value() const { return checked(*this)->value; }

std::vector<double>& Tensor::value_mut() {
  TensorImpl* t = checked(*this);
  if (t->backward_fn)
    throw ContractError("value_mut on a non-leaf tensor would corrupt the graph");
  return t->value;
}

bool Tensor::requires_grad() const { return checked(*this)->requires_grad; }

Tensor& Tensor::set_requires_grad(bool v) {
  TensorImpl* t = checked(*this);
  if (v && t->backward_fn)
    throw ContractError("requires_grad can only be toggled on leaf tensors");
  t->requires_grad = v;
  return *this;
}

bool Tensor::has_grad() const { return !checked(*this)->grad.empty(); }

const std::vector<double>& Tensor::grad() const {
  TensorImpl* t = checked(*this);
  if (t->grad.empty())
    throw ContractError("grad read before any backward pass populated it");
  return t->grad;
}

void Tensor::zero_grad() {
  TensorImpl* t = checked(*this);
  if (!t->grad.empty()) std::fill(t->grad.begin(), t->grad.end(), 0.0);
}

double Tensor::item() const {
  TensorImpl* t = checked(*this);
  if (t->numel() != 1)
    throw ContractError("item() on tensor of shape " + shape_str(t->shape));
  return t->value[0];
}

// --- matmul / transpose / softmax ------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2)
    throw ShapeError("matmul needs 2-D operands, got " + shape_str(a.shape()) +
                     " and " + shape_str(b.shape()));
  if (a.dim(1) != b.dim(0))
    throw ShapeError("matmul inner extents disagree: " + shape_str(a.shape()) +
                     " vs " + shape_str(b.shape()));
  int64_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor out = make_node({m, n}, {a, b});
  kernels::matmul_fwd(a.value().data(), b.value().data(),
                      out.impl()->value.data(), m, k, n);
  if (out.requires_grad()) {
    TensorImpl* o = out.impl();
    auto pa = a.impl_ptr(), pb = b.impl_ptr();
    o->backward_fn = [o, pa, pb, m, k, n]() {
      if (pa->requires_grad) {
        pa->ensure_grad();
        kernels::matmul_bwd_a(o->grad.data(), pb->value.data(),
                              pa->grad.data(), m, k, n);
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        kernels::matmul_bwd_b(pa->value.data(), o->grad.data(),
                              pb->grad.data(), m, k, n);
      }
    };
  }
  return out;
}

Tensor transpose2d(const Tensor& x) {
  if (x.ndim() != 2)
    throw ShapeError("transpose2d needs a 2-D tensor, got " +
                     shape_str(x.shape()));
  int64_t m = x.dim(0), n = x.dim(1);
  Tensor out = make_node({n, m}, {x});
  const auto& xv = x.value();
  auto& ov = out.impl()->value;
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) ov[j * m + i] = xv[i * n + j];
  if (out.requires_grad()) {
    TensorImpl* o = out.impl();
    auto px = x.impl_ptr();
    o->backward_fn = [o, px, m, n]() {
      px->ensure_grad();
      for (int64_t i = 0; i < m; ++i)
        for (int64_t j = 0; j < n; ++j)
          px->grad[i * n + j] += o->grad[j * m + i];
    };
  }
  return out;
}

Tensor softmax_rows(const Tensor& x) {
  if (x.ndim() != 2)
    throw ShapeError("softmax_rows needs a 2-D tensor, got " +
                     shape_str(x.shape()));
  int64_t m = x.dim(0), n = x.dim(1);
  Tensor out = make_node({m, n}, {x});
  kernels::softmax_rows_fwd(x.value().data(), out.impl()->value.data(), m, n);
  if (out.requires_grad()) {
    TensorImpl* o = out.impl();
    auto px = x.impl_ptr();
    o->backward_fn = [o, px, m, n]() {
      px->ensure_grad();
      kernels::softmax_rows_bwd(o->value.data(), o->grad.data(),
                                px->grad.data(), m, n);
    };
  }
  return out;
}

// --- conv2d -----------------------------------------------------------------

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& bias,
              int64_t stride, int64_t padding) {
  if (x.ndim() != 4)
    throw ShapeError("conv2d input must be [N,C,H,W], got " +
                     shape_str(x.shape()));
  if (w.ndim() != 4 || w.dim(2) != w.dim(3))
    throw ShapeError("conv2d weight must be [Cout,Cin,k,k], got " +
                     shape_str(w.shape()));
  if (w.dim(1) != x.dim(1))
    throw ShapeError("conv2d channel mismatch: input " + shape_str(x.shape()) +
                     " vs weight " + shape_str(w.shape()));
  int64_t k = w.dim(2);
  if (k != 1 && k != 3) throw ContractError("conv2d kernel size must be 1 or 3");
  if (stride != 1 && stride != 2) throw ContractError("conv2d stride must be 1 or 2");
  if (padding < 0 || padding >= k)
    throw ContractError("conv2d padding must lie in [0, k)");
  if (bias.defined() && (bias.ndim() != 1 || bias.dim(0) != w.dim(0)))
    throw ShapeError("conv2d bias must be [Cout], got " + shape_str(bias.shape()));

  kernels::ConvDims d;
  d.n = x.dim(0); d.cin = x.dim(1); d.h = x.dim(2); d.w = x.dim(3);
  d.cout = w.dim(0); d.k = k; d.stride = stride; d.pad = padding;
  d.oh = d.out_extent_h(); d.ow = d.out_extent_w();
  if (d.oh <= 0 || d.ow <= 0)
    throw ShapeError("conv2d output would be empty for input " +
                     shape_str(x.shape()));

  Tensor out = make_node({d.n, d.cout, d.oh, d.ow}, {x, w, bias});
  kernels::conv2d_fwd(x.value().data(), w.value().data(),
                      bias.defined() ? bias.value().data() : nullptr,
                      out.impl()->value.data(), d);
  if (out.requires_grad()) {
    TensorImpl* o = out.impl();
    auto px = x.impl_ptr(), pw = w.impl_ptr();
    auto pbias = bias.defined() ? bias.impl_ptr() : nullptr;
    o->backward_fn = [o, px, pw, pbias, d]() {
      if (px->requires_grad) {
        px->ensure_grad();
        kernels::conv2d_bwd_input(o->grad.data(), pw->value.data(),
                                  px->grad.data(), d);
      }
      if (pw->requires_grad) {
        pw->ensure_grad();
        kernels::conv2d_bwd_weight(px->value.data(), o->grad.data(),
                                   pw->grad.data(), d);
      }
      if (pbias && pbias->requires_grad) {
        pbias->ensure_grad();
        kernels::conv2d_bwd_bias(o->grad.data(), pbias->grad.data(), d);
      }
    };
  }
  return out;
}

// --- bilinear resize ---------------------------------------------------------

Tensor bilinear_resize(const Tensor& x, int64_t out_h, int64_t out_w) {
  if (x.ndim() != 4)
    throw ShapeError("bilinear_resize input must be [N,C,H,W], got " +
                     shape_str(x.shape()));
  if (out_h <= 0 || out_w <= 0)
    throw ShapeError("bilinear_resize target extents must be positive");
  kernels::ResizeDims d{x.dim(0), x.dim(1), x.dim(2), x.dim(3), out_h, out_w};
  Tensor out = make_node({d.n, d.c, out_h, out_w}, {x});
  kernels::bilinear_fwd(x.value().data(), out.impl()->value.data(), d);
  if (out.requires_grad()) {
    TensorImpl* o = out.impl();
    auto px = x.impl_ptr();
    o->backward_fn = [o, px, d]() {
      px->ensure_grad();
      kernels::bilinear_bwd(o->grad.data(), px->grad.data(), d);
    };
  }
  return out;
}

// --- batch norm ---------------------------------------------------------------

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& shift,
                  Tensor& running_mean, Tensor& running_var, bool training,
                  double momentum, double eps) {
  if (x.ndim() != 4)
    throw ShapeError("batch_norm input must be [N,C,H,W], got " +
                     shape_str(x.shape()));
  int64_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  auto check_c = [c](const Tensor& t, const char* name) {
    if (t.ndim() != 1 || t.dim(0) != c)
      throw ShapeError(std::string("batch_norm ") + name + " must be [C=" +
                       std::to_string(c) + "], got " + shape_str(t.shape()));
  };
  check_c(gamma, "gamma");
  check_c(shift, "shift");
  check_c(running_mean, "running_mean");
  check_c(running_var, "running_var");

  Tensor out = make_node(x.shape(), {x, gamma, shift});
  if (training) {
    if (n * hw < 2)
      throw ContractError(
          "batch_norm: train mode needs at least 2 elements per channel, got " +
          shape_str(x.shape()));
    std::vector<double> bm(c), bv(c);
    kernels::bn_stats(x.value().data(), bm.data(), bv.data(), n, c, hw);
    kernels::bn_apply(x.value().data(), bm.data(), bv.data(),
                      gamma.value().data(), shift.value().data(),
                      out.impl()->value.data(), n, c, hw, eps);
    {
      auto& rm = running_mean.value_mut();
      auto& rv = running_var.value_mut();
      for (int64_t ch = 0; ch < c; ++ch) {
        rm[ch] = (1.0 - momentum) * rm[ch] + momentum * bm[ch];
        rv[ch] = (1.0 - momentum) * rv[ch] + momentum * bv[ch];
      }
    }
    if (out.requires_grad()) {
      TensorImpl* o = out.impl();
      auto px = x.impl_ptr(), pg = gamma.impl_ptr(), ps = shift.impl_ptr();
      o->backward_fn = [o, px, pg, ps, bm = std::move(bm), bv = std::move(bv),
                        n, c, hw, eps]() {
        // the kernel needs all three output buffers; route unused ones into
        // scratch so a frozen gamma/shift stays untouched
        std::vector<double> scratch_dx, scratch_dg, scratch_ds;
        double* dx = nullptr;
        if (px->requires_grad) {
          px->ensure_grad();
          dx = px->grad.data();
        } else {
          scratch_dx.assign(static_cast<size_t>(n * c * hw), 0.0);
          dx = scratch_dx.data();
        }
        double* dg = nullptr;
        if (pg->requires_grad) {
          pg->ensure_grad();
          dg = pg->grad.data();
        } else {
          scratch_dg.assign(static_cast<size_t>(c), 0.0);
          dg = scratch_dg.data();
        }
        double* ds = nullptr;
        if (ps->requires_grad) {
          ps->ensure_grad();
          ds = ps->grad.data();
        } else {
          scratch_ds.assign(static_cast<size_t>(c), 0.0);
          ds = scratch_ds.data();
        }
        kernels::bn_bwd(px->value.data(), o->grad.data(), bm.data(), bv.data(),
                        pg->value.data(), dx, dg, ds, n, c, hw, eps);
      };
    }
  } else {
    kernels::bn_apply(x.value().data(), running_mean.value().data(),
                      running_var.value().data(), gamma.value().data(),
                      shift.value().data(), out.impl()->value.data(), n, c, hw,
                      eps);
    if (out.requires_grad()) {
      TensorImpl* o = out.impl();
      auto px = x.impl_ptr(), pg = gamma.impl_ptr(), ps = shift.impl_ptr();
      std::vector<double> rm = running_mean.value(), rv = running_var.value();
      o->backward_fn = [o, px, pg, ps, rm = std::move(rm), rv = std::move(rv),
                        n, c, hw, eps]() {
        // eval mode: statistics are constants
        for (int64_t ch = 0; ch < c; ++ch) {
          double invstd = 1.0 / std::sqrt(rv[ch] + eps);
          double g = pg->value[ch] * invstd;
          double sum_dy = 0.0, sum_dy_xhat = 0.0;
          for (int64_t in = 0; in < n; ++in) {
            int64_t base = (in * c + ch) * hw;
            for (int64_t p = 0; p < hw; ++p) {
              double dy = o->grad[base + p];
              sum_dy += dy;
              sum_dy_xhat += dy * (px->value[base + p] - rm[ch]) * invstd;
            }
          }
          if (px->requires_grad) {
            px->ensure_grad();
            for (int64_t in = 0; in < n; ++in) {
              int64_t base = (in * c + ch) * hw;
              for (int64_t p = 0; p < hw; ++p)
                px->grad[base + p] += g * o->grad[base + p];
            }
          }
          if (pg->requires_grad) {
            pg->ensure_grad();
            pg->grad[ch] += sum_dy_xhat;
          }
          if (ps->requires_grad) {
            ps->ensure_grad();
            ps->grad[ch] += sum_dy;
          }
        }
      };
    }
  }
  return out;
}

// --- activations --------------------------------------------------------------

namespace {
thread_local uint64_t* g_branch_sink = nullptr;
}

void set_branch_fingerprint_sink(uint64_t* sink) { g_branch_sink = sink; }

bool branch_fingerprint_armed() { return g_branch_sink != nullptr; }

void fold_branch_event(uint64_t tag) {
  *g_branch_sink = (*g_branch_sink ^ tag) * 1099511628211ull;
}

Tensor relu(const Tensor& x) {
  Tensor out = make_node(x.shape(), {x});
  kernels::relu_fwd(x.value().data(), out.impl()->value.data(), x.numel());
  if (branch_fingerprint_armed()) {
    // the op-boundary tag keeps chains from different call sites distinct
    fold_branch_event(0x72656c75);
    const std::vector<double>& xv = x.value();
    for (size_t i = 0; i < xv.size(); ++i)
      if (!(xv[i] > 0.0)) fold_branch_event(i);
  }
  if (out.requires_grad()) {
    TensorImpl* o = out.impl();
    auto px = x.impl_ptr();
    o->backward_fn = [o, px]() {
      px->ensure_grad();
      kernels::relu_bwd(px->value.data(), o->grad.data(), px->grad.data(),
                        o->numel());
    };
  }
  return out;
}

Tensor sigmoid(const Tensor& x) {
  Tensor out = make_node(x.shape(), {x});
  kernels::sigmoid_fwd(x.value().data(), out.impl()->value.data(), x.numel());
  if (out.requires_grad()) {
    TensorImpl* o = out.impl();
    auto px = x.impl_ptr();
    o->backward_fn = [o, px]() {
      px->ensure_grad();
      kernels::sigmoid_bwd(o->value.data(), o->grad.data(), px->grad.data(),
                           o->numel());
    };
  }
  return out;
}

// --- shape ops ------------------------------------------------------------------

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw ShapeError("reshape " + shape_str(x.shape()) + " -> " +
                     shape_str(shape) + " changes element count");
  Tensor out = make_node(std::move(shape), {x});
  out.impl()->value = x.value();
  if (out.requires_grad()) {
    TensorImpl* o = out.impl();
    auto px = x.impl_ptr();
    o->backward_fn = [o, px]() {
      px->ensure_grad();
      for (size_t i = 0; i < o->grad.size(); ++i) px->grad[i] += o->grad[i];
    };
  }
  return out;
}

Tensor concat_channels(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw ContractError("concat_channels needs at least one input");
  for (const Tensor& t : xs)
    if (t.ndim() != 4)
      throw ShapeError("concat_channels inputs must be [N,C,H,W], got " +
                       shape_str(t.shape()));
  int64_t n = xs[0].dim(0), h = xs[0].dim(2), w = xs[0].dim(3);
  int64_t ctot = 0;
  for (const Tensor& t : xs) {
    if (t.dim(0) != n || t.dim(2) != h || t.dim(3) != w)
      throw ShapeError("concat_channels extent mismatch: " +
                       shape_str(xs[0].shape()) + " vs " + shape_str(t.shape()));
    ctot += t.dim(1);
  }
  std::vector<Tensor> parents = xs;
  Tensor out = make_node({n, ctot, h, w}, parents);
  auto& ov = out.impl()->value;
  int64_t hw = h * w;
  int64_t coff = 0;
  for (const Tensor& t : xs) {
    int64_t c = t.dim(1);
    const auto& tv = t.value();
    for (int64_t in = 0; in < n; ++in)
      std::memcpy(ov.data() + ((in * ctot + coff) * hw),
                  tv.data() + (in * c * hw),
                  static_cast<size_t>(c * hw) * sizeof(double));
    coff += c;
  }
  if (out.requires_grad()) {
    TensorImpl* o = out.impl();
    std::vector<std::shared_ptr<TensorImpl>> ps;
    std::vector<int64_t> cs;
    for (const Tensor& t : xs) {
      ps.push_back(t.impl_ptr());
      cs.push_back(t.dim(1));
    }
    o->backward_fn = [o, ps, cs, n, hw, ctot]() {
      int64_t coff = 0;
      for (size_t idx = 0; idx < ps.size(); ++idx) {
        int64_t c = cs[idx];
        if (ps[idx]->requires_grad) {
          ps[idx]->ensure_grad();
          for (int64_t in = 0; in < n; ++in) {
            const double* src = o->grad.data() + ((in * ctot + coff) * hw);
            double* dst = ps[idx]->grad.data() + (in * c * hw);
            for (int64_t i = 0; i < c * hw; ++i) dst[i] += src[i];
          }
        }
        coff += c;
      }
    };
  }
  return out;
}

Tensor slice_batch(const Tensor& x, int64_t n) {
  if (x.ndim() != 4)
    throw ShapeError("slice_batch input must be [N,C,H,W], got " +
                     shape_str(x.shape()));
  if (n < 0 || n >= x.dim(0))
    throw ContractError("slice_batch index " + std::to_string(n) +
                        " out of range for " + shape_str(x.shape()));
  int64_t chw = x.dim(1) * x.dim(2) * x.dim(3);
  Tensor out = make_node({x.dim(1), x.dim(2), x.dim(3)}, {x});
  std::memcpy(out.impl()->value.data(), x.value().data() + n * chw,
              static_cast<size_t>(chw) * sizeof(double));
  if (out.requires_grad()) {
    TensorImpl* o = out.impl();
    auto px = x.impl_ptr();
    o->backward_fn = [o, px, n, chw]() {
      px->ensure_grad();
      double* dst = px->grad.data() + n * chw;
      for (int64_t i = 0; i < chw; ++i) dst[i] += o->grad[i];
    };
  }
  return out;
}

Tensor stack_batch(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw ContractError("stack_batch needs at least one input");
  for (const Tensor& t : xs)
    if (t.ndim() != 3 || t.shape() != xs[0].shape())
      throw ShapeError("stack_batch inputs must share a 3-D shape, got " +
                       shape_str(xs[0].shape()) + " vs " + shape_str(t.shape()));
  int64_t n = static_cast<int64_t>(xs.size());
  int64_t chw = xs[0].numel();
  Tensor out = make_node({n, xs[0].dim(0), xs[0].dim(1), xs[0].dim(2)}, xs);
  for (int64_t i = 0; i < n; ++i)
    std::memcpy(out.impl()->value.data() + i * chw, xs[i].value().data(),
                static_cast<size_t>(chw) * sizeof(double));
  if (out.requires_grad()) {
    TensorImpl* o = out.impl();
    std::vector<std::shared_ptr<TensorImpl>> ps;
    for (const Tensor& t : xs) ps.push_back(t.impl_ptr());
    o->backward_fn = [o, ps, chw]() {
      for (size_t i = 0; i < ps.size(); ++i) {
        if (!ps[i]->requires_grad) continue;
        ps[i]->ensure_grad();
        const double* src = o->grad.data() + static_cast<int64_t>(i) * chw;
        for (int64_t j = 0; j < chw; ++j) ps[i]->grad[j] += src[j];
      }
    };
  }
  return out;
}

// --- elementwise ------------------------------------------------------------------

static void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + " needs matching shapes, got " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  Tensor out = make_node(a.shape(), {a, b});
  const auto& av = a.value();
  const auto& bv = b.value();
  auto& ov = out.impl()->value;
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] + bv[i];
  if (out.requires_grad()) {
    TensorImpl* o = out.impl();
    auto pa = a.impl_ptr(), pb = b.impl_ptr();
    o->backward_fn = [o, pa, pb]() {
      if (pa->requires_grad) {
        pa->ensure_grad();
        for (size_t i = 0; i < o->grad.size(); ++i) pa->grad[i] += o->grad[i];
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        for (size_t i = 0; i < o->grad.size(); ++i) pb->grad[i] += o->grad[i];
      }
    };
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  Tensor out = make_node(a.shape(), {a, b});
  const auto& av = a.value();
  const auto& bv = b.value();
  auto& ov = out.impl()->value;
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] - bv[i];
  if (out.requires_grad()) {
    TensorImpl* o = out.impl();
    auto pa = a.impl_ptr(), pb = b.impl_ptr();
    o->backward_fn = [o, pa, pb]() {
      if (pa->requires_grad) {
        pa->ensure_grad();
        for (size_t i = 0; i < o->grad.size(); ++i) pa->grad[i] += o->grad[i];
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        for (size_t i = 0; i < o->grad.size(); ++i) pb->grad[i] -= o->grad[i];
      }
    };
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  Tensor out = make_node(a.shape(), {a, b});
  const auto& av = a.value();
  const auto& bv = b.value();
  auto& ov = out.impl()->value;
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] * bv[i];
  if (out.requires_grad()) {
    TensorImpl* o = out.impl();
    auto pa = a.impl_ptr(), pb = b.impl_ptr();
    o->backward_fn = [o, pa, pb]() {
      if (pa->requires_grad) {
        pa->ensure_grad();
        for (size_t i = 0; i < o->grad.size(); ++i)
          pa->grad[i] += o->grad[i] * pb->value[i];
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        for (size_t i = 0; i < o->grad.size(); ++i)
          pb->grad[i] += o->grad[i] * pa->value[i];
      }
    };
  }
  return out;
}

Tensor div(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "div");
  Tensor out = make_node(a.shape(), {a, b});
  const auto& av = a.value();
  const auto& bv = b.value();
  auto& ov = out.impl()->value;
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = av[i] / bv[i];
  if (out.requires_grad()) {
    TensorImpl* o = out.impl();
    auto pa = a.impl_ptr(), pb = b.impl_ptr();
    o->backward_fn = [o, pa, pb]() {
      if (pa->requires_grad) {
        pa->ensure_grad();
        for (size_t i = 0; i < o->grad.size(); ++i)
          pa->grad[i] += o->grad[i] / pb->value[i];
      }
      if (pb->requires_grad) {
        pb->ensure_grad();
        for (size_t i = 0; i < o->grad.size(); ++i)
          pb->grad[i] -= o->grad[i] * pa->value[i] / (pb->value[i] * pb->value[i]);
      }
    };
  }
  return out;
}

static Tensor unary_affine(const Tensor& x, double scale, double offset) {
  Tensor out = make_node(x.shape(), {x});
  const auto& xv = x.value();
  auto& ov = out.impl()->value;
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = scale * xv[i] + offset;
  if (out.requires_grad()) {
    TensorImpl* o = out.impl();
    auto px = x.impl_ptr();
    o->backward_fn = [o, px, scale]() {
      px->ensure_grad();
      for (size_t i = 0; i < o->grad.size(); ++i)
        px->grad[i] += scale * o->grad[i];
    };
  }
  return out;
}

Tensor add_const(const Tensor& x, double c) { return unary_affine(x, 1.0, c); }
Tensor mul_const(const Tensor& x, double c) { return unary_affine(x, c, 0.0); }
Tensor sub_from_const(double c, const Tensor& x) { return unary_affine(x, -1.0, c); }

Tensor max_const(const Tensor& x, double c) {
  Tensor out = make_node(x.shape(), {x});
  const auto& xv = x.value();
  auto& ov = out.impl()->value;
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = xv[i] > c ? xv[i] : c;
  if (branch_fingerprint_armed()) {
    fold_branch_event(0x6d6178);
    for (size_t i = 0; i < xv.size(); ++i)
      if (!(xv[i] > c)) fold_branch_event(i);
  }
  if (out.requires_grad()) {
    TensorImpl* o = out.impl();
    auto px = x.impl_ptr();
    o->backward_fn = [o, px, c]() {
      px->ensure_grad();
      for (size_t i = 0; i < o->grad.size(); ++i)
        if (px->value[i] > c) px->grad[i] += o->grad[i];
    };
  }
  return out;
}

Tensor scale_add(const Tensor& alpha, const Tensor& x, const Tensor& y) {
  if (alpha.numel() != 1)
    throw ShapeError("scale_add alpha must be a scalar tensor, got " +
                     shape_str(alpha.shape()));
  check_same_shape(x, y, "scale_add");
  double a = alpha.value()[0];
  Tensor out = make_node(x.shape(), {alpha, x, y});
  const auto& xv = x.value();
  const auto& yv = y.value();
  auto& ov = out.impl()->value;
  for (size_t i = 0; i < ov.size(); ++i) ov[i] = a * xv[i] + yv[i];
  if (out.requires_grad()) {
    TensorImpl* o = out.impl();
    auto pal = alpha.impl_ptr(), px = x.impl_ptr(), py = y.impl_ptr();
    o->backward_fn = [o, pal, px, py]() {
      double a = pal->value[0];
      if (pal->requires_grad) {
        pal->ensure_grad();
        double s = 0.0;
        for (size_t i = 0; i < o->grad.size(); ++i)
          s += o->grad[i] * px->value[i];
        pal->grad[0] += s;
      }
      if (px->requires_grad) {
        px->ensure_grad();
        for (size_t i = 0; i < o->grad.size(); ++i)
          px->grad[i] += a * o->grad[i];
      }
      if (py->requires_grad) {
        py->ensure_grad();
        for (size_t i = 0; i < o->grad.size(); ++i) py->grad[i] += o->grad[i];
      }
    };
  }
  return out;
}

// --- reductions ----------------------------------------------------------------

Tensor sum(const Tensor& x) {
  Tensor out = make_node({1}, {x});
  out.impl()->value[0] = exact_sum(x.value().data(), x.value().size());
  if (out.requires_grad()) {
    TensorImpl* o = out.impl();
    auto px = x.impl_ptr();
    o->backward_fn = [o, px]() {
      px->ensure_grad();
      double g = o->grad[0];
      for (double& d : px->grad) d += g;
    };
  }
  return out;
}

Tensor mean(const Tensor& x) {
  int64_t n = x.numel();
  Tensor out = make_node({1}, {x});
  out.impl()->value[0] =
      exact_sum(x.value().data(), x.value().size()) / static_cast<double>(n);
  if (out.requires_grad()) {
    TensorImpl* o = out.impl();
    auto px = x.impl_ptr();
    o->backward_fn = [o, px, n]() {
      px->ensure_grad();
      double g = o->grad[0] / static_cast<double>(n);
      for (double& d : px->grad) d += g;
    };
  }
  return out;
}

// shared by std_dev and window_std; gradient of sqrt(var + 1e-12)
static constexpr double kVarStabilizer = 1e-12;

Tensor std_dev(const Tensor& x) {
  int64_t n = x.numel();
  const auto& xv = x.value();
  double mu = exact_sum(xv.data(), xv.size()) / static_cast<double>(n);
  ExactSum sq;
  for (double v : xv) sq.add((v - mu) * (v - mu));
  double var = sq.result() / static_cast<double>(n);
  double sd = std::sqrt(var + kVarStabilizer);
  Tensor out = make_node({1}, {x});
  out.impl()->value[0] = sd;
  if (out.requires_grad()) {
    TensorImpl* o = out.impl();
    auto px = x.impl_ptr();
    o->backward_fn = [o, px, mu, sd, n]() {
      px->ensure_grad();
      double g = o->grad[0] / (static_cast<double>(n) * sd);
      for (size_t i = 0; i < px->grad.size(); ++i)
        px->grad[i] += g * (px->value[i] - mu);
    };
  }
  return out;
}

struct WindowRef {
  int64_t plane_off, row0, col0, h, w, row_stride;
};

static WindowRef window_ref(const Tensor& x, int64_t n, int64_t c, int64_t r0,
                            int64_t c0, int64_t h, int64_t w, const char* op) {
  int64_t H, W, planes_n = 1, planes_c = 1;
  if (x.ndim() == 2) {
    H = x.dim(0);
    W = x.dim(1);
  } else if (x.ndim() == 4) {
    planes_n = x.dim(0);
    planes_c = x.dim(1);
    H = x.dim(2);
    W = x.dim(3);
  } else {
    throw ShapeError(std::string(op) + " needs a 2-D or 4-D tensor, got " +
                     shape_str(x.shape()));
  }
  if (n < 0 || n >= planes_n || c < 0 || c >= planes_c)
    throw ContractError(std::string(op) + " plane index out of range");
  if (h <= 0 || w <= 0)
    throw ContractError(std::string(op) + " window is empty");
  if (r0 < 0 || c0 < 0 || r0 + h > H || c0 + w > W)
    throw ContractError(std::string(op) + " window exceeds map extents");
  return WindowRef{(n * planes_c + c) * H * W, r0, c0, h, w, W};
}

Tensor window_mean(const Tensor& x, int64_t n, int64_t c, int64_t r0,
                   int64_t c0, int64_t h, int64_t w) {
  WindowRef r = window_ref(x, n, c, r0, c0, h, w, "window_mean");
  const auto& xv = x.value();
  ExactSum s;
  for (int64_t i = 0; i < r.h; ++i)
    for (int64_t j = 0; j < r.w; ++j)
      s.add(xv[r.plane_off + (r.row0 + i) * r.row_stride + r.col0 + j]);
  double m = s.result() / static_cast<double>(r.h * r.w);
  Tensor out = make_node({1}, {x});
  out.impl()->value[0] = m;
  if (out.requires_grad()) {
    TensorImpl* o = out.impl();
    auto px = x.impl_ptr();
    o->backward_fn = [o, px, r]() {
      px->ensure_grad();
      double g = o->grad[0] / static_cast<double>(r.h * r.w);
      for (int64_t i = 0; i < r.h; ++i)
        for (int64_t j = 0; j < r.w; ++j)
          px->grad[r.plane_off + (r.row0 + i) * r.row_stride + r.col0 + j] += g;
    };
  }
  return out;
}

Tensor window_std(const Tensor& x, int64_t n, int64_t c, int64_t r0, int64_t c0,
                  int64_t h, int64_t w) {
  WindowRef r = window_ref(x, n, c, r0, c0, h, w, "window_std");
  const auto& xv = x.value();
  int64_t cnt = r.h * r.w;
  ExactSum s;
  for (int64_t i = 0; i < r.h; ++i)
    for (int64_t j = 0; j < r.w; ++j)
      s.add(xv[r.plane_off + (r.row0 + i) * r.row_stride + r.col0 + j]);
  double mu = s.result() / static_cast<double>(cnt);
  ExactSum sq;
  for (int64_t i = 0; i < r.h; ++i)
    for (int64_t j = 0; j < r.w; ++j) {
      double d = xv[r.plane_off + (r.row0 + i) * r.row_stride + r.col0 + j] - mu;
      sq.add(d * d);
    }
  double var = sq.result() / static_cast<double>(cnt);
  double sd = std::sqrt(var + kVarStabilizer);
  Tensor out = make_node({1}, {x});
  out.impl()->value[0] = sd;
  if (out.requires_grad()) {
    TensorImpl* o = out.impl();
    auto px = x.impl_ptr();
    o->backward_fn = [o, px, r, mu, sd, cnt]() {
      px->ensure_grad();
      double g = o->grad[0] / (static_cast<double>(cnt) * sd);
      for (int64_t i = 0; i < r.h; ++i)
        for (int64_t j = 0; j < r.w; ++j) {
          int64_t idx = r.plane_off + (r.row0 + i) * r.row_stride + r.col0 + j;
          px->grad[idx] += g * (px->value[idx] - mu);
        }
    };
  }
  return out;
}

// --- backward -------------------------------------------------------------------

void backward(const Tensor& root) {
  TensorImpl* r = checked(root);
  if (r->numel() != 1)
    throw ContractError("backward root must be scalar, got shape " +
                        shape_str(r->shape));
  if (!r->requires_grad) return;

  struct Frame {
    TensorImpl* node;
    size_t next;
  };
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> seen;
  std::vector<Frame> stack;
  stack.push_back({r, 0});
  seen.insert(r);
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next < f.node->parents.size()) {
      TensorImpl* p = f.node->parents[f.next++].get();
      if (p->requires_grad && !seen.count(p)) {
        seen.insert(p);
        stack.push_back({p, 0});
      }
    } else {
      order.push_back(f.node);
      stack.pop_back();
    }
  }

  r->ensure_grad();
  r->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it)
    if ((*it)->backward_fn) (*it)->backward_fn();
}

}  // namespace classkit
