#include <cmath>

#include "classkit/kernels.hpp"
#include "classkit/numerics.hpp"

// Reference kernels: straight loops, no threading. The parallel backend must
// reproduce these bit-for-bit (tests/test_kernels.cpp holds it to that), so
// any change to an accumulation order here is a semantic change.

namespace classkit::kernels::serial {

void matmul_fwd(const double* a, const double* b, double* out, int64_t m,
                int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t j = 0; j < n; ++j) {
      ExactSum s;
      for (int64_t kk = 0; kk < k; ++kk) s.add(a[i * k + kk] * b[kk * n + j]);
      out[i * n + j] = s.result();
    }
  }
}

void matmul_bwd_a(const double* dout, const double* b, double* da, int64_t m,
                  int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    for (int64_t kk = 0; kk < k; ++kk) {
      ExactSum s;
      for (int64_t j = 0; j < n; ++j) s.add(dout[i * n + j] * b[kk * n + j]);
      da[i * k + kk] += s.result();
    }
  }
}

void matmul_bwd_b(const double* a, const double* dout, double* db, int64_t m,
                  int64_t k, int64_t n) {
  for (int64_t kk = 0; kk < k; ++kk) {
    for (int64_t j = 0; j < n; ++j) {
      ExactSum s;
      for (int64_t i = 0; i < m; ++i) s.add(a[i * k + kk] * dout[i * n + j]);
      db[kk * n + j] += s.result();
    }
  }
}

void softmax_rows_fwd(const double* x, double* y, int64_t m, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const double* xr = x + i * n;
    double* yr = y + i * n;
    double mx = xr[0];
    for (int64_t j = 1; j < n; ++j) mx = xr[j] > mx ? xr[j] : mx;
    ExactSum den;
    for (int64_t j = 0; j < n; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      den.add(yr[j]);
    }
    double d = den.result();
    for (int64_t j = 0; j < n; ++j) yr[j] /= d;
  }
}

void softmax_rows_bwd(const double* y, const double* dy, double* dx, int64_t m,
                      int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    const double* yr = y + i * n;
    const double* dyr = dy + i * n;
    double dot = 0.0;
    for (int64_t j = 0; j < n; ++j) dot += dyr[j] * yr[j];
    for (int64_t j = 0; j < n; ++j) dx[i * n + j] += yr[j] * (dyr[j] - dot);
  }
}

void conv2d_fwd(const double* x, const double* w, const double* bias,
                double* y, const ConvDims& d) {
  for (int64_t in = 0; in < d.n; ++in) {
    for (int64_t co = 0; co < d.cout; ++co) {
      for (int64_t oh = 0; oh < d.oh; ++oh) {
        for (int64_t ow = 0; ow < d.ow; ++ow) {
          double acc = bias ? bias[co] : 0.0;
          for (int64_t ci = 0; ci < d.cin; ++ci) {
            for (int64_t kh = 0; kh < d.k; ++kh) {
              int64_t ih = oh * d.stride - d.pad + kh;
              if (ih < 0 || ih >= d.h) continue;
              for (int64_t kw = 0; kw < d.k; ++kw) {
                int64_t iw = ow * d.stride - d.pad + kw;
                if (iw < 0 || iw >= d.w) continue;
                acc += x[((in * d.cin + ci) * d.h + ih) * d.w + iw] *
                       w[((co * d.cin + ci) * d.k + kh) * d.k + kw];
              }
            }
          }
          y[((in * d.cout + co) * d.oh + oh) * d.ow + ow] = acc;
        }
      }
    }
  }
}

void conv2d_bwd_input(const double* dy, const double* w, double* dx,
                      const ConvDims& d) {
  // gather form: each input cell sums the output cells it contributed to
  for (int64_t in = 0; in < d.n; ++in) {
    for (int64_t ci = 0; ci < d.cin; ++ci) {
      for (int64_t ih = 0; ih < d.h; ++ih) {
        for (int64_t iw = 0; iw < d.w; ++iw) {
          double acc = 0.0;
          for (int64_t co = 0; co < d.cout; ++co) {
            for (int64_t kh = 0; kh < d.k; ++kh) {
              int64_t th = ih + d.pad - kh;
              if (th < 0 || th % d.stride != 0) continue;
              int64_t oh = th / d.stride;
              if (oh >= d.oh) continue;
              for (int64_t kw = 0; kw < d.k; ++kw) {
                int64_t tw = iw + d.pad - kw;
                if (tw < 0 || tw % d.stride != 0) continue;
                int64_t ow = tw / d.stride;
                if (ow >= d.ow) continue;
                acc += w[((co * d.cin + ci) * d.k + kh) * d.k + kw] *
                       dy[((in * d.cout + co) * d.oh + oh) * d.ow + ow];
              }
            }
          }
          dx[((in * d.cin + ci) * d.h + ih) * d.w + iw] += acc;
        }
      }
    }
  }
}

void conv2d_bwd_weight(const double* x, const double* dy, double* dw,
                       const ConvDims& d) {
  for (int64_t co = 0; co < d.cout; ++co) {
    for (int64_t ci = 0; ci < d.cin; ++ci) {
      for (int64_t kh = 0; kh < d.k; ++kh) {
        for (int64_t kw = 0; kw < d.k; ++kw) {
          double acc = 0.0;
          for (int64_t in = 0; in < d.n; ++in) {
            for (int64_t oh = 0; oh < d.oh; ++oh) {
              int64_t ih = oh * d.stride - d.pad + kh;
              if (ih < 0 || ih >= d.h) continue;
              for (int64_t ow = 0; ow < d.ow; ++ow) {
                int64_t iw = ow * d.stride - d.pad + kw;
                if (iw < 0 || iw >= d.w) continue;
                acc += x[((in * d.cin + ci) * d.h + ih) * d.w + iw] *
                       dy[((in * d.cout + co) * d.oh + oh) * d.ow + ow];
              }
            }
          }
          dw[((co * d.cin + ci) * d.k + kh) * d.k + kw] += acc;
        }
      }
    }
  }
}

void conv2d_bwd_bias(const double* dy, double* dbias, const ConvDims& d) {
  for (int64_t co = 0; co < d.cout; ++co) {
    double acc = 0.0;
    for (int64_t in = 0; in < d.n; ++in)
      for (int64_t oh = 0; oh < d.oh; ++oh)
        for (int64_t ow = 0; ow < d.ow; ++ow)
          acc += dy[((in * d.cout + co) * d.oh + oh) * d.ow + ow];
    dbias[co] += acc;
  }
}

// half-pixel centers ("align corners false"); source coords clamped to edges
static inline void bilinear_axis(int64_t o, double scale, int64_t in_extent,
                                 int64_t& i0, int64_t& i1, double& frac) {
  double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
  if (src < 0.0) src = 0.0;
  double last = static_cast<double>(in_extent - 1);
  if (src > last) src = last;
  i0 = static_cast<int64_t>(src);
  i1 = i0 + 1 < in_extent ? i0 + 1 : in_extent - 1;
  frac = src - static_cast<double>(i0);
}

void bilinear_fwd(const double* x, double* y, const ResizeDims& d) {
  double sh = static_cast<double>(d.hin) / static_cast<double>(d.hout);
  double sw = static_cast<double>(d.win) / static_cast<double>(d.wout);
  for (int64_t in = 0; in < d.n; ++in) {
    for (int64_t c = 0; c < d.c; ++c) {
      const double* xs = x + (in * d.c + c) * d.hin * d.win;
      double* ys = y + (in * d.c + c) * d.hout * d.wout;
      for (int64_t oh = 0; oh < d.hout; ++oh) {
        int64_t h0, h1;
        double fh;
        bilinear_axis(oh, sh, d.hin, h0, h1, fh);
        for (int64_t ow = 0; ow < d.wout; ++ow) {
          int64_t w0, w1;
          double fw;
          bilinear_axis(ow, sw, d.win, w0, w1, fw);
          ys[oh * d.wout + ow] = (1.0 - fh) * (1.0 - fw) * xs[h0 * d.win + w0] +
                                 (1.0 - fh) * fw * xs[h0 * d.win + w1] +
                                 fh * (1.0 - fw) * xs[h1 * d.win + w0] +
                                 fh * fw * xs[h1 * d.win + w1];
        }
      }
    }
  }
}

void bilinear_bwd(const double* dy, double* dx, const ResizeDims& d) {
  double sh = static_cast<double>(d.hin) / static_cast<double>(d.hout);
  double sw = static_cast<double>(d.win) / static_cast<double>(d.wout);
  for (int64_t in = 0; in < d.n; ++in) {
    for (int64_t c = 0; c < d.c; ++c) {
      const double* dys = dy + (in * d.c + c) * d.hout * d.wout;
      double* dxs = dx + (in * d.c + c) * d.hin * d.win;
      for (int64_t oh = 0; oh < d.hout; ++oh) {
        int64_t h0, h1;
        double fh;
        bilinear_axis(oh, sh, d.hin, h0, h1, fh);
        for (int64_t ow = 0; ow < d.wout; ++ow) {
          int64_t w0, w1;
          double fw;
          bilinear_axis(ow, sw, d.win, w0, w1, fw);
          double g = dys[oh * d.wout + ow];
          dxs[h0 * d.win + w0] += (1.0 - fh) * (1.0 - fw) * g;
          dxs[h0 * d.win + w1] += (1.0 - fh) * fw * g;
          dxs[h1 * d.win + w0] += fh * (1.0 - fw) * g;
          dxs[h1 * d.win + w1] += fh * fw * g;
        }
      }
    }
  }
}

void bn_stats(const double* x, double* mean, double* var, int64_t n, int64_t c,
              int64_t hw) {
  int64_t m = n * hw;
  for (int64_t ch = 0; ch < c; ++ch) {
    double s = 0.0;
    for (int64_t in = 0; in < n; ++in) {
      const double* xs = x + (in * c + ch) * hw;
      for (int64_t p = 0; p < hw; ++p) s += xs[p];
    }
    double mu = s / static_cast<double>(m);
    double sq = 0.0;
    for (int64_t in = 0; in < n; ++in) {
      const double* xs = x + (in * c + ch) * hw;
      for (int64_t p = 0; p < hw; ++p) {
        double dlt = xs[p] - mu;
        sq += dlt * dlt;
      }
    }
    mean[ch] = mu;
    var[ch] = sq / static_cast<double>(m);  // population variance
  }
}

void bn_apply(const double* x, const double* mean, const double* var,
              const double* gamma, const double* shift, double* y, int64_t n,
              int64_t c, int64_t hw, double eps) {
  for (int64_t in = 0; in < n; ++in) {
    for (int64_t ch = 0; ch < c; ++ch) {
      double invstd = 1.0 / std::sqrt(var[ch] + eps);
      double g = gamma[ch], b = shift[ch], mu = mean[ch];
      const double* xs = x + (in * c + ch) * hw;
      double* ys = y + (in * c + ch) * hw;
      for (int64_t p = 0; p < hw; ++p) ys[p] = g * (xs[p] - mu) * invstd + b;
    }
  }
}

void bn_bwd(const double* x, const double* dy, const double* mean,
            const double* var, const double* gamma, double* dx, double* dgamma,
            double* dshift, int64_t n, int64_t c, int64_t hw, double eps) {
  int64_t m = n * hw;
  for (int64_t ch = 0; ch < c; ++ch) {
    double invstd = 1.0 / std::sqrt(var[ch] + eps);
    double mu = mean[ch];
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (int64_t in = 0; in < n; ++in) {
      const double* xs = x + (in * c + ch) * hw;
      const double* dys = dy + (in * c + ch) * hw;
      for (int64_t p = 0; p < hw; ++p) {
        sum_dy += dys[p];
        sum_dy_xhat += dys[p] * (xs[p] - mu) * invstd;
      }
    }
    dgamma[ch] += sum_dy_xhat;
    dshift[ch] += sum_dy;
    double gm = gamma[ch] * invstd;
    double dm = static_cast<double>(m);
    for (int64_t in = 0; in < n; ++in) {
      const double* xs = x + (in * c + ch) * hw;
      const double* dys = dy + (in * c + ch) * hw;
      double* dxs = dx + (in * c + ch) * hw;
      for (int64_t p = 0; p < hw; ++p) {
        double xhat = (xs[p] - mu) * invstd;
        dxs[p] += gm * (dys[p] - sum_dy / dm - xhat * sum_dy_xhat / dm);
      }
    }
  }
}

void relu_fwd(const double* x, double* y, int64_t n) {
  for (int64_t i = 0; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_bwd(const double* x, const double* dy, double* dx, int64_t n) {
  for (int64_t i = 0; i < n; ++i) dx[i] += x[i] > 0.0 ? dy[i] : 0.0;
}

void sigmoid_fwd(const double* x, double* y, int64_t n) {
  for (int64_t i = 0; i < n; ++i) y[i] = 1.0 / (1.0 + std::exp(-x[i]));
}

void sigmoid_bwd(const double* y, const double* dy, double* dx, int64_t n) {
  for (int64_t i = 0; i < n; ++i) dx[i] += dy[i] * y[i] * (1.0 - y[i]);
}

}  // namespace classkit::kernels::serial
