#include "classkit/kernels.hpp"

namespace classkit::kernels {

namespace {
Backend g_backend = Backend::parallel;
}

Backend backend() { return g_backend; }
void set_backend(Backend b) { g_backend = b; }

#define CLASSKIT_DISPATCH(fn, ...)                \
  do {                                            \
    if (g_backend == Backend::parallel)           \
      par::fn(__VA_ARGS__);                       \
    else                                          \
      serial::fn(__VA_ARGS__);                    \
  } while (0)

void matmul_fwd(const double* a, const double* b, double* out, int64_t m,
                int64_t k, int64_t n) {
  CLASSKIT_DISPATCH(matmul_fwd, a, b, out, m, k, n);
}
void matmul_bwd_a(const double* dout, const double* b, double* da, int64_t m,
                  int64_t k, int64_t n) {
  CLASSKIT_DISPATCH(matmul_bwd_a, dout, b, da, m, k, n);
}
void matmul_bwd_b(const double* a, const double* dout, double* db, int64_t m,
                  int64_t k, int64_t n) {
  CLASSKIT_DISPATCH(matmul_bwd_b, a, dout, db, m, k, n);
}
void softmax_rows_fwd(const double* x, double* y, int64_t m, int64_t n) {
  CLASSKIT_DISPATCH(softmax_rows_fwd, x, y, m, n);
}
void softmax_rows_bwd(const double* y, const double* dy, double* dx, int64_t m,
                      int64_t n) {
  CLASSKIT_DISPATCH(softmax_rows_bwd, y, dy, dx, m, n);
}
void conv2d_fwd(const double* x, const double* w, const double* bias,
                double* y, const ConvDims& d) {
  CLASSKIT_DISPATCH(conv2d_fwd, x, w, bias, y, d);
}
void conv2d_bwd_input(const double* dy, const double* w, double* dx,
                      const ConvDims& d) {
  CLASSKIT_DISPATCH(conv2d_bwd_input, dy, w, dx, d);
}
void conv2d_bwd_weight(const double* x, const double* dy, double* dw,
                       const ConvDims& d) {
  CLASSKIT_DISPATCH(conv2d_bwd_weight, x, dy, dw, d);
}
void conv2d_bwd_bias(const double* dy, double* dbias, const ConvDims& d) {
  CLASSKIT_DISPATCH(conv2d_bwd_bias, dy, dbias, d);
}
void bilinear_fwd(const double* x, double* y, const ResizeDims& d) {
  CLASSKIT_DISPATCH(bilinear_fwd, x, y, d);
}
void bilinear_bwd(const double* dy, double* dx, const ResizeDims& d) {
  CLASSKIT_DISPATCH(bilinear_bwd, dy, dx, d);
}
void bn_stats(const double* x, double* mean, double* var, int64_t n, int64_t c,
              int64_t hw) {
  CLASSKIT_DISPATCH(bn_stats, x, mean, var, n, c, hw);
}
void bn_apply(const double* x, const double* mean, const double* var,
              const double* gamma, const double* shift, double* y, int64_t n,
              int64_t c, int64_t hw, double eps) {
  CLASSKIT_DISPATCH(bn_apply, x, mean, var, gamma, shift, y, n, c, hw, eps);
}
void bn_bwd(const double* x, const double* dy, const double* mean,
            const double* var, const double* gamma, double* dx, double* dgamma,
            double* dshift, int64_t n, int64_t c, int64_t hw, double eps) {
  CLASSKIT_DISPATCH(bn_bwd, x, dy, mean, var, gamma, dx, dgamma, dshift, n, c,
                    hw, eps);
}
void relu_fwd(const double* x, double* y, int64_t n) {
  CLASSKIT_DISPATCH(relu_fwd, x, y, n);
}
void relu_bwd(const double* x, const double* dy, double* dx, int64_t n) {
  CLASSKIT_DISPATCH(relu_bwd, x, dy, dx, n);
}
void sigmoid_fwd(const double* x, double* y, int64_t n) {
  CLASSKIT_DISPATCH(sigmoid_fwd, x, y, n);
}
void sigmoid_bwd(const double* y, const double* dy, double* dx, int64_t n) {
  CLASSKIT_DISPATCH(sigmoid_bwd, y, dy, dx, n);
}

#undef CLASSKIT_DISPATCH

}  // namespace classkit::kernels
