#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "classkit/data.hpp"
#include "classkit/losses.hpp"
#include "classkit/metrics.hpp"
#include "classkit/model.hpp"

namespace classkit {

struct TrainConfig {
  int64_t epochs = 30;
  int64_t batch_size = 8;
  double lr_max_backbone = 0.005;  // encoder.* parameters
  double lr_max_rest = 0.05;       // everything else
  double momentum = 0.9;
  double weight_decay = 0.0005;
  double warmup_fraction = 0.1;  // of total steps
  uint64_t seed = 0;
  LossConfig loss;
  std::vector<double> scales = {0.75, 1.0, 1.25};
  std::string out_dir;           // empty: keep everything in memory
  int64_t checkpoint_every = 1;  // epochs
  int64_t start_epoch = 0;       // epochs already completed (resume)
  bool multi_stage = true;       // off: supervise the final head only

  // Scales must map the input extents to multiples of 16.
  void validate(int64_t input_h, int64_t input_w) const;
};

struct LrPair {
  double backbone = 0.0;
  double rest = 0.0;
};

// Linear ramp 0 -> max over the warm-up span, then linear decay to 0 at
// total_steps. Both groups share the shape and differ only in peak.
LrPair lr_at(int64_t step, int64_t total_steps, const TrainConfig& cfg);

// Blend weights, all batch-norm parameters, and all biases skip weight decay.
bool weight_decay_exempt(const std::string& name);

// Momentum SGD with per-group learning rates. Velocity is keyed by parameter
// name and starts at zero.
class SgdState {
 public:
  void step(const std::vector<NamedTensor>& params, LrPair lr, double momentum,
            double weight_decay);

  std::map<std::string, std::vector<double>>& velocity() { return v_; }

 private:
  std::map<std::string, std::vector<double>> v_;
};

struct StepRecord {
  int64_t step = 0;
  double lr = 0.0;  // rest group
  double pixel = 0.0, region = 0.0, object = 0.0;
  std::array<double, 4> level{};  // batch-mean total per level
  double final = 0.0;
};

struct EpochRecord {
  int64_t epoch = 0;  // 1-based, after this many epochs
  MetricsReport val;
};

struct TrainLog {
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;
};

// --- augmentation (value-only, no graph) ------------------------------------

Tensor flip_horizontal(const Tensor& x);                          // [C,H,W]
Tensor resize_bilinear(const Tensor& x, int64_t h, int64_t w);    // [C,H,W]
Tensor resize_nearest(const Tensor& x, int64_t h, int64_t w);     // [C,H,W]
double pick_scale(Rng& rng, const std::vector<double>& scales);

struct AugmentedSample {
  Tensor image;  // [3,h,w], bilinear
  Tensor mask;   // [1,h,w], nearest, stays binary
};
AugmentedSample augment_sample(const SaliencySample& s, bool flip, int64_t h,
                               int64_t w);

// Per step: shared batch scale, per-sample flips, forward, per-level batch
// means combined per the level weights, backward, SGD with the scheduled
// rates. Per epoch: validation on the final head, plus checkpoints and CSVs
// under out_dir. Fully reproducible from (seed, config, data).
TrainLog train_loop(ClassMini& model,
                    const std::vector<SaliencySample>& train_set,
                    const std::vector<SaliencySample>& val_set,
                    const TrainConfig& cfg);

// Final-head predictions in eval mode, one [1,H,W] map per sample.
std::vector<Tensor> predict_maps(ClassMini& model,
                                 const std::vector<SaliencySample>& set,
                                 int64_t batch_size = 8);

void write_train_log_csv(const std::string& path, const TrainLog& log);
void write_val_log_csv(const std::string& path, const TrainLog& log);

}  // namespace classkit
