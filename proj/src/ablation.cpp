#include "classkit/ablation.hpp"

#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "classkit/data.hpp"
#include "classkit/errors.hpp"

namespace classkit {

namespace {

std::ofstream open_out(const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f << std::setprecision(17);
  return f;
}

// mean of the logged combined loss over one epoch's steps
double epoch_mean_loss(const TrainLog& log, int64_t steps_per_epoch,
                       int64_t epoch_index) {
  double sum = 0.0;
  int64_t lo = epoch_index * steps_per_epoch;
  for (int64_t i = lo; i < lo + steps_per_epoch; ++i)
    sum += log.steps[static_cast<size_t>(i)].final;
  return sum / static_cast<double>(steps_per_epoch);
}

const AblationRow& row_named(const std::vector<AblationRow>& rows,
                             const std::string& name) {
  for (const AblationRow& r : rows)
    if (r.config.name == name) return r;
  throw ContractError("directional_claims: no ablation row named '" + name +
                      "'");
}

double metric_value(const AblationRow& r, const std::string& metric) {
  if (metric == "f_max") return r.val.f_max;
  if (metric == "s_measure") return r.val.s_measure;
  if (metric == "mae") return r.val.mae;
  throw ContractError("directional_claims: unknown metric '" + metric + "'");
}

}  // namespace

const std::vector<AblationCase>& ablation_grid() {
  // name, pixel, region, object, multi_stage, cla_channel, cla_position, ffm
  static const std::vector<AblationCase> grid = {
      {"pixel_only", true, false, false, false, false, false, false},
      {"add_region", true, true, false, false, false, false, false},
      {"add_object", true, true, true, false, false, false, false},
      {"add_multi_stage", true, true, true, true, false, false, false},
      {"add_ffm", true, true, true, true, false, false, true},
      {"cla_sum_fusion", true, true, true, true, true, true, false},
      {"cla_channel_ffm", true, true, true, true, true, false, true},
      {"cla_position_ffm", true, true, true, true, false, true, true},
      {"attention_pixel_only", true, false, false, true, true, true, true},
      {"full", true, true, true, true, true, true, true},
  };
  return grid;
}

void AblationOptions::validate() const {
  if (train_count <= 0 || val_count <= 0)
    throw ConfigError("ablation counts must be positive");
  if (size < 16 || size % 16 != 0)
    throw ConfigError("ablation size must be a positive multiple of 16");
  if (epochs <= 0) throw ConfigError("ablation epochs must be positive");
  if (batch_size <= 0) throw ConfigError("ablation batch_size must be positive");
  if (channels < 4 || channels % 2 != 0)
    throw ConfigError("ablation channels must be even and at least 4");
}

std::vector<AblationRow> run_ablation(const AblationOptions& opts) {
  opts.validate();
  // one shared split; validation indices continue past the training ones so
  // the two draw disjoint sample streams
  std::vector<SaliencySample> train_set, val_set;
  for (int64_t i = 0; i < opts.train_count; ++i)
    train_set.push_back(generate_sample(opts.seed, i, opts.size));
  for (int64_t i = 0; i < opts.val_count; ++i)
    val_set.push_back(
        generate_sample(opts.seed, opts.train_count + i, opts.size));

  if (!opts.out_dir.empty()) std::filesystem::create_directories(opts.out_dir);

  std::vector<AblationRow> rows;
  for (const AblationCase& c : ablation_grid()) {
    ModelConfig mc;
    mc.channels = opts.channels;
    mc.input_h = opts.size;
    mc.input_w = opts.size;
    mc.init_seed = opts.seed;
    mc.use_position_attention = c.cla_position;
    mc.use_channel_attention = c.cla_channel;
    mc.fusion = c.ffm ? FusionMode::ffm : FusionMode::sum;

    TrainConfig tc;
    tc.epochs = opts.epochs;
    tc.batch_size = opts.batch_size;
    tc.seed = opts.seed;
    tc.scales = {1.0};  // rescale needs extents on multiples of 16
    tc.multi_stage = c.multi_stage;
    tc.loss.use_pixel = c.pixel;
    tc.loss.use_region = c.region;
    tc.loss.use_object = c.object;
    if (!opts.out_dir.empty()) tc.out_dir = opts.out_dir + "/" + c.name;

    ClassMini model(mc);
    TrainLog log = train_loop(model, train_set, val_set, tc);

    AblationRow row;
    row.config = c;
    row.val = log.epochs.back().val;
    int64_t spe = (opts.train_count + opts.batch_size - 1) / opts.batch_size;
    row.first_epoch_loss = epoch_mean_loss(log, spe, 0);
    row.last_epoch_loss = epoch_mean_loss(log, spe, opts.epochs - 1);
    rows.push_back(row);
  }
  return rows;
}

std::vector<DirectionalClaim> directional_claims(
    const std::vector<AblationRow>& rows) {
  std::vector<DirectionalClaim> claims = {
      {"region term helps structure", "s_measure", "add_region", "pixel_only"},
      {"object term helps f-measure", "f_max", "add_object", "add_region"},
      {"stage-wise supervision helps", "s_measure", "add_multi_stage",
       "add_object"},
      {"gated fusion beats summation", "f_max", "add_ffm", "add_multi_stage"},
      {"attention pair helps without gating", "f_max", "cla_sum_fusion",
       "add_multi_stage"},
      {"channel attention helps over plain gating", "f_max", "cla_channel_ffm",
       "add_ffm"},
      {"position attention helps over plain gating", "f_max",
       "cla_position_ffm", "add_ffm"},
      {"full model lowers error", "mae", "full", "add_multi_stage", true},
      {"region and object terms help the attention model", "s_measure", "full",
       "attention_pixel_only"},
      {"full model beats pixel baseline", "f_max", "full", "pixel_only"},
  };
  for (DirectionalClaim& cl : claims) {
    cl.better_value = metric_value(row_named(rows, cl.better), cl.metric);
    cl.worse_value = metric_value(row_named(rows, cl.worse), cl.metric);
    cl.agrees = cl.lower_is_better ? cl.better_value <= cl.worse_value
                                   : cl.better_value >= cl.worse_value;
  }
  return claims;
}

void write_ablation_csv(const std::string& path,
                        const std::vector<AblationRow>& rows) {
  std::ofstream f = open_out(path);
  f << "name,pixel,region,object,multi_stage,cla_channel,cla_position,ffm,"
       "f_max,f_mean,f_adaptive,mae,s_measure,first_epoch_loss,"
       "last_epoch_loss\n";
  for (const AblationRow& r : rows) {
    const AblationCase& c = r.config;
    f << c.name << ',' << c.pixel << ',' << c.region << ',' << c.object << ','
      << c.multi_stage << ',' << c.cla_channel << ',' << c.cla_position << ','
      << c.ffm << ',' << r.val.f_max << ',' << r.val.f_mean << ','
      << r.val.f_adaptive << ',' << r.val.mae << ',' << r.val.s_measure << ','
      << r.first_epoch_loss << ',' << r.last_epoch_loss << '\n';
  }
  if (!f.flush()) throw IoError("short write to '" + path + "'");
}

void write_agreement_csv(const std::string& path,
                         const std::vector<DirectionalClaim>& claims) {
  std::ofstream f = open_out(path);
  f << "label,metric,expected_better,expected_worse,better_value,worse_value,"
       "agrees\n";
  for (const DirectionalClaim& c : claims)
    f << c.label << ',' << c.metric << ',' << c.better << ',' << c.worse << ','
      << c.better_value << ',' << c.worse_value << ',' << c.agrees << '\n';
  if (!f.flush()) throw IoError("short write to '" + path + "'");
}

}  // namespace classkit
