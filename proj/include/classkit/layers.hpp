#pragma once

#include <string>
#include <vector>

#include "classkit/rng.hpp"
#include "classkit/tensor.hpp"

namespace classkit {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

// Appends (prefix + leaf, t) and rejects duplicate names.
void collect_named(std::vector<NamedTensor>& out, const std::string& prefix,
                   const std::string& leaf, const Tensor& t);

// 2-D convolution with learned weight and optional bias. Weight entries are
// drawn uniform in +-1/sqrt(cin*k*k); the bias starts at zero.
class Conv2d {
 public:
  Conv2d(int64_t cin, int64_t cout, int64_t k, int64_t stride, int64_t padding,
         bool with_bias, Rng& rng);

  Tensor forward(const Tensor& x) const;

  void params(std::vector<NamedTensor>& out, const std::string& prefix) const;

  Tensor weight;
  Tensor bias;  // undefined handle when constructed without bias
  int64_t stride = 1;
  int64_t padding = 0;
};

// Per-channel batch normalization with learned scale (gamma) and offset
// (shift). Running statistics live in buffers, not parameters.
class BatchNorm2d {
 public:
  explicit BatchNorm2d(int64_t channels, double eps = 1e-5);

  Tensor forward(const Tensor& x, bool training);

  void params(std::vector<NamedTensor>& out, const std::string& prefix) const;
  void buffers(std::vector<NamedTensor>& out, const std::string& prefix) const;

  Tensor gamma;
  Tensor shift;
  Tensor running_mean;
  Tensor running_var;
  double eps = 1e-5;
};

// conv (no bias) -> batch norm -> relu
class ConvBnRelu {
 public:
  ConvBnRelu(int64_t cin, int64_t cout, int64_t k, int64_t stride,
             int64_t padding, Rng& rng, double eps = 1e-5);

  Tensor forward(const Tensor& x, bool training);

  void params(std::vector<NamedTensor>& out, const std::string& prefix) const;
  void buffers(std::vector<NamedTensor>& out, const std::string& prefix) const;

  Conv2d conv;
  BatchNorm2d bn;
};

}  // namespace classkit
