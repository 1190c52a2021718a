#pragma once

#include <string>
#include <vector>

#include "classkit/metrics.hpp"
#include "classkit/trainer.hpp"

namespace classkit {

// One grid row: which loss terms supervise, whether every stage is
// supervised, which attention halves run, and how stages fuse.
struct AblationCase {
  std::string name;
  bool pixel = true;
  bool region = false;
  bool object = false;
  bool multi_stage = false;
  bool cla_channel = false;
  bool cla_position = false;
  bool ffm = false;
};

// The fixed ten-row grid, from the bare pixel baseline up to the full
// model, adding one ingredient at a time plus the two leave-one-out
// attention rows and the loss-ablated attention row.
const std::vector<AblationCase>& ablation_grid();

struct AblationOptions {
  uint64_t seed = 0;
  int64_t train_count = 60;
  int64_t val_count = 20;
  int64_t size = 32;
  int64_t channels = 8;
  int64_t epochs = 6;
  int64_t batch_size = 8;
  std::string out_dir;  // empty: no per-run logs or checkpoints

  void validate() const;
};

struct AblationRow {
  AblationCase config;
  MetricsReport val;  // final-epoch held-out metrics
  double first_epoch_loss = 0.0;
  double last_epoch_loss = 0.0;
};

// Expected orderings between grid rows. agrees records whether the measured
// metrics went the expected way; at this scale a miss is noise, not failure.
struct DirectionalClaim {
  std::string label;
  std::string metric;  // f_max | s_measure | mae
  std::string better;  // row expected to win
  std::string worse;
  bool lower_is_better = false;  // mae
  double better_value = 0.0;
  double worse_value = 0.0;
  bool agrees = false;
};

// Trains every grid row on one shared synthetic split, deterministic from
// opts. Per-row logs and checkpoints land under out_dir/<row name>/.
std::vector<AblationRow> run_ablation(const AblationOptions& opts);

std::vector<DirectionalClaim> directional_claims(
    const std::vector<AblationRow>& rows);

void write_ablation_csv(const std::string& path,
                        const std::vector<AblationRow>& rows);
void write_agreement_csv(const std::string& path,
                         const std::vector<DirectionalClaim>& claims);

}  // namespace classkit
