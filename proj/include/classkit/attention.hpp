#pragma once

#include <optional>
#include <vector>

#include "classkit/layers.hpp"
#include "classkit/tensor.hpp"

namespace classkit {

// Per-sample attention maps, captured on request. position_map is
// [N_h, N_l]; channel_map is [C, C]. Rows of both sum to 1.
struct AttentionMaps {
  Tensor position_map;
  Tensor channel_map;
};

// Refines the coarse feature with content selected from the fine one.
// Query comes from F_h; key and value come from F_l through their own 1x1
// convolutions. The blend weight alpha starts at zero, so a fresh module is
// the identity on F_h.
class PositionAttention {
 public:
  PositionAttention(int64_t channels, Rng& rng);

  // F_h: [N,C,Hh,Wh], F_l: [N,C,Hl,Wl] -> [N,C,Hh,Wh].
  // maps, when non-null, receives one [N_h,N_l] map per sample.
  Tensor forward(const Tensor& F_h, const Tensor& F_l,
                 std::vector<Tensor>* maps = nullptr) const;

  void params(std::vector<NamedTensor>& out, const std::string& prefix) const;

  Conv2d query;
  Conv2d key;
  Conv2d value;
  Tensor alpha;
};

// Reweights the fine feature's channels against the upsampled coarse one.
// Both branches are reshapes; there are no learned projections. The blend
// weight beta starts at zero, so a fresh module is the identity on F_l.
class ChannelAttention {
 public:
  ChannelAttention();

  // F_h: [N,C,Hh,Wh], F_l: [N,C,Hl,Wl] -> [N,C,Hl,Wl].
  // maps, when non-null, receives one [C,C] map per sample.
  Tensor forward(const Tensor& F_h, const Tensor& F_l,
                 std::vector<Tensor>* maps = nullptr) const;

  void params(std::vector<NamedTensor>& out, const std::string& prefix) const;

  Tensor beta;
};

// Both sub-modules read the same (F_h, F_l) pair independently. Either side
// can be disabled, in which case the corresponding input passes through
// untouched (used by the ablation grid).
class CrossLevelAttention {
 public:
  CrossLevelAttention(int64_t channels, bool use_position, bool use_channel,
                      Rng& rng);

  struct Out {
    Tensor f_h;  // refined coarse feature
    Tensor f_l;  // refined fine feature
  };

  Out forward(const Tensor& F_h, const Tensor& F_l,
              std::vector<AttentionMaps>* maps = nullptr) const;

  void params(std::vector<NamedTensor>& out, const std::string& prefix) const;

  std::optional<PositionAttention> position;
  std::optional<ChannelAttention> channel;
};

}  // namespace classkit
