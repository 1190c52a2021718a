#include "classkit/attention.hpp"

#include "classkit/errors.hpp"

namespace classkit {

namespace {

void check_pair(const Tensor& F_h, const Tensor& F_l) {
  const Shape& h = F_h.shape();
  const Shape& l = F_l.shape();
  if (h.size() != 4 || l.size() != 4) {
    throw ShapeError("attention expects 4-D inputs, got " + shape_str(h) +
                     " and " + shape_str(l));
  }
  if (h[0] != l[0]) {
    throw ShapeError("attention batch mismatch: " + shape_str(h) + " vs " +
                     shape_str(l));
  }
  if (h[1] != l[1]) {
    throw ShapeError("attention channel mismatch: " + shape_str(h) + " vs " +
                     shape_str(l));
  }
  if (l[2] < h[2] || l[3] < h[3]) {
    throw ShapeError("fine input must be at least as large as the coarse: " +
                     shape_str(h) + " vs " + shape_str(l));
  }
}

}  // namespace

PositionAttention::PositionAttention(int64_t channels, Rng& rng)
    : query(channels, channels, 1, 1, 0, /*with_bias=*/true, rng),
      key(channels, channels, 1, 1, 0, /*with_bias=*/true, rng),
      value(channels, channels, 1, 1, 0, /*with_bias=*/true, rng) {
  alpha = Tensor::zeros({1});
  alpha.set_requires_grad(true);
}

Tensor PositionAttention::forward(const Tensor& F_h, const Tensor& F_l,
                                  std::vector<Tensor>* maps) const {
  check_pair(F_h, F_l);
  const Shape& hs = F_h.shape();
  const Shape& ls = F_l.shape();
  int64_t batch = hs[0], c = hs[1];
  int64_t nh = hs[2] * hs[3], nl = ls[2] * ls[3];

  Tensor q = query.forward(F_h);
  Tensor k = key.forward(F_l);
  Tensor v = value.forward(F_l);

  std::vector<Tensor> outs;
  outs.reserve(batch);
  for (int64_t n = 0; n < batch; ++n) {
    Tensor qn = reshape(slice_batch(q, n), {c, nh});
    Tensor kn = reshape(slice_batch(k, n), {c, nl});
    Tensor vn = reshape(slice_batch(v, n), {c, nl});
    Tensor s = softmax_rows(matmul(transpose2d(qn), kn));  // [nh, nl]
    if (maps) maps->push_back(s);
    Tensor fn = matmul(vn, transpose2d(s));  // [c, nh]
    outs.push_back(reshape(fn, {c, hs[2], hs[3]}));
  }
  return scale_add(alpha, stack_batch(outs), F_h);
}

void PositionAttention::params(std::vector<NamedTensor>& out,
                               const std::string& prefix) const {
  query.params(out, prefix + ".query");
  key.params(out, prefix + ".key");
  value.params(out, prefix + ".value");
  collect_named(out, prefix, "alpha", alpha);
}

ChannelAttention::ChannelAttention() {
  beta = Tensor::zeros({1});
  beta.set_requires_grad(true);
}

Tensor ChannelAttention::forward(const Tensor& F_h, const Tensor& F_l,
                                 std::vector<Tensor>* maps) const {
  check_pair(F_h, F_l);
  const Shape& ls = F_l.shape();
  int64_t batch = ls[0], c = ls[1];
  int64_t nl = ls[2] * ls[3];

  Tensor up = bilinear_resize(F_h, ls[2], ls[3]);

  std::vector<Tensor> outs;
  outs.reserve(batch);
  for (int64_t n = 0; n < batch; ++n) {
    Tensor fl = reshape(slice_batch(F_l, n), {c, nl});
    Tensor fh = reshape(slice_batch(up, n), {c, nl});
    Tensor z = softmax_rows(matmul(fl, transpose2d(fh)));  // [c, c]
    if (maps) maps->push_back(z);
    Tensor fn = matmul(z, fh);  // [c, nl]
    outs.push_back(reshape(fn, {c, ls[2], ls[3]}));
  }
  return scale_add(beta, stack_batch(outs), F_l);
}

void ChannelAttention::params(std::vector<NamedTensor>& out,
                              const std::string& prefix) const {
  collect_named(out, prefix, "beta", beta);
}

CrossLevelAttention::CrossLevelAttention(int64_t channels, bool use_position,
                                         bool use_channel, Rng& rng) {
  if (use_position) position.emplace(channels, rng);
  if (use_channel) channel.emplace();
}

CrossLevelAttention::Out CrossLevelAttention::forward(
    const Tensor& F_h, const Tensor& F_l,
    std::vector<AttentionMaps>* maps) const {
  std::vector<Tensor> pos_maps;
  std::vector<Tensor> chan_maps;
  Out out;
  out.f_h = position ? position->forward(F_h, F_l, maps ? &pos_maps : nullptr)
                     : F_h;
  out.f_l = channel ? channel->forward(F_h, F_l, maps ? &chan_maps : nullptr)
                    : F_l;
  if (maps) {
    int64_t batch = F_h.shape()[0];
    for (int64_t n = 0; n < batch; ++n) {
      AttentionMaps m;
      if (position) m.position_map = pos_maps[static_cast<size_t>(n)];
      if (channel) m.channel_map = chan_maps[static_cast<size_t>(n)];
      maps->push_back(m);
    }
  }
  return out;
}

void CrossLevelAttention::params(std::vector<NamedTensor>& out,
                                 const std::string& prefix) const {
  if (position) position->params(out, prefix + ".pos");
  if (channel) channel->params(out, prefix + ".chan");
}

}  // namespace classkit
