#include "classkit/decoder.hpp"

#include "classkit/errors.hpp"

namespace classkit {

FusionStage::FusionStage(int64_t channels, FusionMode mode, Rng& rng,
                         double eps)
    : mode(mode),
      refine1(channels, channels, 3, 1, 1, rng, eps),
      refine2(channels, channels, 3, 1, 1, rng, eps) {
  if (mode == FusionMode::ffm) {
    compress.emplace(3 * channels, channels, 1, 1, 0, /*with_bias=*/true, rng);
    gate.emplace(channels, channels, 1, 1, 0, /*with_bias=*/true, rng);
  }
}

Tensor FusionStage::forward(const Tensor& f_l, const Tensor& f_h,
                            const Tensor& d_prev, bool training) {
  const Shape& ls = f_l.shape();
  const Shape& hs = f_h.shape();
  const Shape& ds = d_prev.shape();
  if (ls.size() != 4 || hs.size() != 4 || ds.size() != 4) {
    throw ShapeError("fusion expects 4-D inputs");
  }
  if (hs[1] != ls[1] || ds[1] != ls[1]) {
    throw ShapeError("fusion channel mismatch: " + shape_str(ls) + ", " +
                     shape_str(hs) + ", " + shape_str(ds));
  }
  if (ds[2] != (ls[2] + 1) / 2 || ds[3] != (ls[3] + 1) / 2) {
    throw ShapeError("previous stage extent " + shape_str(ds) +
                     " is not half of " + shape_str(ls));
  }

  Tensor h_up = bilinear_resize(f_h, ls[2], ls[3]);
  Tensor d_up = bilinear_resize(d_prev, ls[2], ls[3]);

  Tensor refined;
  if (mode == FusionMode::ffm) {
    Tensor mixed = compress->forward(concat_channels({f_l, h_up, d_up}));
    refined = refine2.forward(refine1.forward(mixed, training), training);
    return mul(refined, sigmoid(gate->forward(refined)));
  }
  Tensor mixed = add(add(f_l, h_up), d_up);
  return refine2.forward(refine1.forward(mixed, training), training);
}

void FusionStage::params(std::vector<NamedTensor>& out,
                         const std::string& prefix) const {
  if (compress) compress->params(out, prefix + ".compress");
  refine1.params(out, prefix + ".refine1");
  refine2.params(out, prefix + ".refine2");
  if (gate) gate->params(out, prefix + ".gate");
}

void FusionStage::buffers(std::vector<NamedTensor>& out,
                          const std::string& prefix) const {
  refine1.buffers(out, prefix + ".refine1");
  refine2.buffers(out, prefix + ".refine2");
}

SaliencyHead::SaliencyHead(int64_t channels, Rng& rng)
    : predict(channels, 1, 1, 1, 0, /*with_bias=*/true, rng) {}

Tensor SaliencyHead::forward(const Tensor& d, int64_t target_h,
                             int64_t target_w) const {
  const Shape& s = d.shape();
  if (s.size() != 4) throw ShapeError("head expects a 4-D input");
  if (target_h < s[2] || target_w < s[3]) {
    throw ShapeError("head target extent is smaller than the feature");
  }
  return sigmoid(bilinear_resize(predict.forward(d), target_h, target_w));
}

void SaliencyHead::params(std::vector<NamedTensor>& out,
                          const std::string& prefix) const {
  predict.params(out, prefix);
}

}  // namespace classkit
