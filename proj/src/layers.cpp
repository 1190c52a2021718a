#include "classkit/layers.hpp"

#include <cmath>

#include "classkit/errors.hpp"

namespace classkit {

namespace {

std::string join(const std::string& prefix, const std::string& leaf) {
  return prefix.empty() ? leaf : prefix + "." + leaf;
}

}  // namespace

void collect_named(std::vector<NamedTensor>& out, const std::string& prefix,
                   const std::string& leaf, const Tensor& t) {
  std::string name = join(prefix, leaf);
  for (const NamedTensor& nt : out) {
    if (nt.name == name) throw ContractError("duplicate tensor name: " + name);
  }
  out.push_back({std::move(name), t});
}

Conv2d::Conv2d(int64_t cin, int64_t cout, int64_t k, int64_t stride,
               int64_t padding, bool with_bias, Rng& rng)
    : stride(stride), padding(padding) {
  double bound = 1.0 / std::sqrt(static_cast<double>(cin * k * k));
  weight = Tensor::uniform({cout, cin, k, k}, rng, -bound, bound);
  weight.set_requires_grad(true);
  if (with_bias) {
    bias = Tensor::zeros({cout});
    bias.set_requires_grad(true);
  }
}

Tensor Conv2d::forward(const Tensor& x) const {
  return conv2d(x, weight, bias, stride, padding);
}

void Conv2d::params(std::vector<NamedTensor>& out,
                    const std::string& prefix) const {
  collect_named(out, prefix, "weight", weight);
  if (bias.defined()) collect_named(out, prefix, "bias", bias);
}

BatchNorm2d::BatchNorm2d(int64_t channels, double eps) : eps(eps) {
  gamma = Tensor::full({channels}, 1.0);
  shift = Tensor::zeros({channels});
  gamma.set_requires_grad(true);
  shift.set_requires_grad(true);
  running_mean = Tensor::zeros({channels});
  running_var = Tensor::full({channels}, 1.0);
}

Tensor BatchNorm2d::forward(const Tensor& x, bool training) {
  return batch_norm(x, gamma, shift, running_mean, running_var, training,
                    /*momentum=*/0.1, eps);
}

void BatchNorm2d::params(std::vector<NamedTensor>& out,
                         const std::string& prefix) const {
  collect_named(out, prefix, "gamma", gamma);
  collect_named(out, prefix, "shift", shift);
}

void BatchNorm2d::buffers(std::vector<NamedTensor>& out,
                          const std::string& prefix) const {
  collect_named(out, prefix, "running_mean", running_mean);
  collect_named(out, prefix, "running_var", running_var);
}

ConvBnRelu::ConvBnRelu(int64_t cin, int64_t cout, int64_t k, int64_t stride,
                       int64_t padding, Rng& rng, double eps)
    : conv(cin, cout, k, stride, padding, /*with_bias=*/false, rng),
      bn(cout, eps) {}

Tensor ConvBnRelu::forward(const Tensor& x, bool training) {
  return relu(bn.forward(conv.forward(x), training));
}

void ConvBnRelu::params(std::vector<NamedTensor>& out,
                        const std::string& prefix) const {
  conv.params(out, join(prefix, "conv"));
  bn.params(out, join(prefix, "bn"));
}

void ConvBnRelu::buffers(std::vector<NamedTensor>& out,
                         const std::string& prefix) const {
  bn.buffers(out, join(prefix, "bn"));
}

}  // namespace classkit
