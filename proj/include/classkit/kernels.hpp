#pragma once

#include <cstdint>

// Raw numeric kernels over dense row-major buffers. Every kernel exists twice:
// kernels::serial is the plain-loop reference, kernels::par runs the same
// per-element code under OpenMP. Parallel loops only ever split independent
// output elements (or exclusive slices), and contracted sums keep one fixed
// per-element order, so the two backends produce bit-identical results.
// Backward kernels accumulate (+=) into their output buffers.

namespace classkit::kernels {

enum class Backend { serial, parallel };

Backend backend();
void set_backend(Backend b);

struct ConvDims {
  int64_t n, cin, h, w;   // input
  int64_t cout, k;        // square kernel
  int64_t stride, pad;
  int64_t oh, ow;         // output extents

  int64_t out_extent_h() const { return (h + 2 * pad - k) / stride + 1; }
  int64_t out_extent_w() const { return (w + 2 * pad - k) / stride + 1; }
};

struct ResizeDims {
  int64_t n, c, hin, win, hout, wout;
};

#define CLASSKIT_KERNEL_API                                                    \
  void matmul_fwd(const double* a, const double* b, double* out, int64_t m,    \
                  int64_t k, int64_t n);                                       \
  void matmul_bwd_a(const double* dout, const double* b, double* da,           \
                    int64_t m, int64_t k, int64_t n);                          \
  void matmul_bwd_b(const double* a, const double* dout, double* db,           \
                    int64_t m, int64_t k, int64_t n);                          \
  void softmax_rows_fwd(const double* x, double* y, int64_t m, int64_t n);     \
  void softmax_rows_bwd(const double* y, const double* dy, double* dx,         \
                        int64_t m, int64_t n);                                 \
  void conv2d_fwd(const double* x, const double* w, const double* bias,        \
                  double* y, const ConvDims& d);                               \
  void conv2d_bwd_input(const double* dy, const double* w, double* dx,         \
                        const ConvDims& d);                                    \
  void conv2d_bwd_weight(const double* x, const double* dy, double* dw,        \
                         const ConvDims& d);                                   \
  void conv2d_bwd_bias(const double* dy, double* dbias, const ConvDims& d);    \
  void bilinear_fwd(const double* x, double* y, const ResizeDims& d);          \
  void bilinear_bwd(const double* dy, double* dx, const ResizeDims& d);        \
  void bn_stats(const double* x, double* mean, double* var, int64_t n,         \
                int64_t c, int64_t hw);                                        \
  void bn_apply(const double* x, const double* mean, const double* var,        \
                const double* gamma, const double* shift, double* y,           \
                int64_t n, int64_t c, int64_t hw, double eps);                 \
  void bn_bwd(const double* x, const double* dy, const double* mean,           \
              const double* var, const double* gamma, double* dx,              \
              double* dgamma, double* dshift, int64_t n, int64_t c,            \
              int64_t hw, double eps);                                         \
  void relu_fwd(const double* x, double* y, int64_t n);                        \
  void relu_bwd(const double* x, const double* dy, double* dx, int64_t n);     \
  void sigmoid_fwd(const double* x, double* y, int64_t n);                     \
  void sigmoid_bwd(const double* y, const double* dy, double* dx, int64_t n);

CLASSKIT_KERNEL_API  // dispatching entry points, routed by backend()

namespace serial {
CLASSKIT_KERNEL_API
}

namespace par {
CLASSKIT_KERNEL_API
}

#undef CLASSKIT_KERNEL_API

}  // namespace classkit::kernels
