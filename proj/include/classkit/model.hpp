#pragma once

#include <string>
#include <vector>

#include "classkit/attention.hpp"
#include "classkit/decoder.hpp"
#include "classkit/layers.hpp"

namespace classkit {

struct ModelConfig {
  int64_t channels = 16;  // width of every post-encoder feature
  int64_t input_h = 64;
  int64_t input_w = 64;
  double norm_epsilon = 1e-5;
  uint64_t init_seed = 0;
  bool use_position_attention = true;
  bool use_channel_attention = true;
  FusionMode fusion = FusionMode::ffm;

  // Throws ConfigError naming the offending field.
  void validate() const;

  bool operator==(const ModelConfig&) const = default;
};

// One encoder level: a stride-2 conv-bn-relu that halves the extent, then a
// stride-1 one at the same width.
class EncoderBlock {
 public:
  EncoderBlock(int64_t cin, int64_t cout, Rng& rng, double eps);

  Tensor forward(const Tensor& x, bool training);
  void params(std::vector<NamedTensor>& out, const std::string& prefix) const;
  void buffers(std::vector<NamedTensor>& out, const std::string& prefix) const;

  ConvBnRelu down;
  ConvBnRelu same;
};

// Saliency network: four encoder levels (extents input/2 .. input/16), a
// 1x1 + 3x3 bridge on the deepest feature, one cross-level attention block
// pairing the bridge with each shallower level, and a deepest-first chain of
// fusion stages. Four heads supervise the three stages and the bridge; the
// stage-2 head is the final prediction.
class ClassMini {
 public:
  explicit ClassMini(const ModelConfig& config);

  struct ForwardOut {
    // index 0 is the final prediction; each is [N,1,H,W] in (0,1)
    std::vector<Tensor> preds;
    // per level (2,3,4), per sample; filled only when want_maps
    std::vector<std::vector<AttentionMaps>> maps;
  };

  // x: [N,3,H,W] with extents divisible by 16. Any such extent is accepted;
  // the configured input size is the default the heads were sized for.
  ForwardOut forward(const Tensor& x, bool training, bool want_maps = false);

  std::vector<NamedTensor> parameters() const;
  std::vector<NamedTensor> buffers() const;
  void zero_grads();

  ModelConfig config;
  EncoderBlock e2, e3, e4, e5;
  ConvBnRelu bridge1, bridge2;
  CrossLevelAttention cla2, cla3, cla4;
  FusionStage ffm4, ffm3, ffm2;
  SaliencyHead head2, head3, head4, head_bridge;

 private:
  ClassMini(const ModelConfig& config, Rng rng);
};

// Versioned binary checkpoint: magic "CLSK", format version, config echo,
// then named parameter and buffer blobs (64-bit little-endian values).
void save_checkpoint(const ClassMini& model, const std::string& path);
// Rejects magic/version/config mismatches; fills parameters and buffers.
void load_checkpoint(ClassMini& model, const std::string& path);
// Reads only the config echo, for rebuilding a model before loading.
ModelConfig peek_config(const std::string& path);

}  // namespace classkit
