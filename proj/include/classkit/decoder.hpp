#pragma once

#include <optional>
#include <vector>

#include "classkit/layers.hpp"
#include "classkit/tensor.hpp"

namespace classkit {

enum class FusionMode { ffm, sum };

// One decoder stage. The fine feature fixes the output extent; the coarse
// feature and the previous stage's output are bilinearly resized to match.
// ffm mode concatenates the three, compresses 3C back to C, refines with two
// 3x3 conv-bn-relu blocks, and gates the result with a learned sigmoid weight
// map. sum mode adds the three and refines, with no compression or gate.
class FusionStage {
 public:
  FusionStage(int64_t channels, FusionMode mode, Rng& rng,
              double eps = 1e-5);

  // f_l: [N,C,H,W], f_h: [N,C,Hh,Wh], d_prev: [N,C,ceil(H/2),ceil(W/2)]
  Tensor forward(const Tensor& f_l, const Tensor& f_h, const Tensor& d_prev,
                 bool training);

  void params(std::vector<NamedTensor>& out, const std::string& prefix) const;
  void buffers(std::vector<NamedTensor>& out, const std::string& prefix) const;

  FusionMode mode;
  std::optional<Conv2d> compress;  // ffm only
  ConvBnRelu refine1;
  ConvBnRelu refine2;
  std::optional<Conv2d> gate;  // ffm only
};

// Per-stage supervision head: 1x1 conv to one channel, resize to the target
// extent, sigmoid. Output values are strictly inside (0,1).
class SaliencyHead {
 public:
  SaliencyHead(int64_t channels, Rng& rng);

  Tensor forward(const Tensor& d, int64_t target_h, int64_t target_w) const;

  void params(std::vector<NamedTensor>& out, const std::string& prefix) const;

  Conv2d predict;
};

}  // namespace classkit
