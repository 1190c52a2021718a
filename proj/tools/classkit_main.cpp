#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <utility>
#include <vector>

#include "CLI11.hpp"
#include "classkit/ablation.hpp"
#include "classkit/config.hpp"
#include "classkit/data.hpp"
#include "classkit/errors.hpp"
#include "classkit/gradcheck.hpp"
#include "classkit/kernels.hpp"
#include "classkit/metrics.hpp"
#include "classkit/model.hpp"
#include "classkit/trainer.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace ck = classkit;

namespace {

struct Timer {
  std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
        .count();
  }
};

std::string iso8601_now() {
  std::time_t t = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

// every other output is byte-identical across reruns; wall time and date
// live only in this sidecar
void write_run_log(const std::string& out_dir, const std::string& command,
                   double seconds) {
  std::string path = out_dir + "/run.log";
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ck::IoError("cannot open '" + path + "' for writing");
  f << "command: " << command << "\nfinished: " << iso8601_now()
    << "\nelapsed_seconds: " << seconds << "\n";
}

void write_text(const std::string& path, const std::string& body) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ck::IoError("cannot open '" + path + "' for writing");
  f << body;
  if (!f.flush()) throw ck::IoError("short write to '" + path + "'");
}

void apply_threads(int threads) {
  if (threads < 0) throw ck::ConfigError("--threads must be nonnegative");
  if (threads == 1) {
    ck::kernels::set_backend(ck::kernels::Backend::serial);
    return;
  }
  ck::kernels::set_backend(ck::kernels::Backend::parallel);
#ifdef _OPENMP
  if (threads > 0) omp_set_num_threads(threads);
#endif
}

std::string manifest_path(const std::string& p) {
  return p.ends_with(".tsv") ? p : p + "/manifest.tsv";
}

std::vector<ck::SaliencySample> load_split(const std::string& p) {
  return ck::load_dataset(ck::read_manifest(manifest_path(p)));
}

ck::ClassMini load_model(const std::string& ckpt) {
  ck::ClassMini model(ck::peek_config(ckpt));
  ck::load_checkpoint(model, ckpt);
  return model;
}

// attention matrices are row-stochastic, so raw entries scale with 1/row
// length; map-max normalization keeps the structure visible in 8 bits
ck::Tensor normalized_map(const ck::Tensor& m) {
  ck::Tensor y = ck::Tensor::zeros(m.shape());
  const std::vector<double>& a = m.value();
  std::vector<double>& b = y.value_mut();
  double mx = 0.0;
  for (double v : a) mx = std::max(mx, v);
  double s = mx > 0.0 ? 1.0 / mx : 1.0;
  for (size_t i = 0; i < a.size(); ++i) b[i] = a[i] * s;
  return y;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "saliency toolkit: synthetic data, training, evaluation, inference, "
      "attention dumps, gradient checks, and the ablation grid"};
  app.require_subcommand(1);

  int threads = 0;
  app.add_option("--threads", threads,
                 "worker threads; 0 keeps the OpenMP default, 1 forces the "
                 "serial backend");

  int rc = 0;

  // --- gen-data --------------------------------------------------------------
  auto* gen = app.add_subcommand(
      "gen-data", "write a synthetic dataset: images/, masks/, manifest.tsv");
  struct {
    uint64_t seed = 0;
    int64_t count = 0;
    int64_t size = 64;
    std::string split = "train";
    std::string out;
  } gd;
  gen->add_option("--seed", gd.seed, "generator seed [default: 0]");
  gen->add_option("--count", gd.count, "number of samples")->required();
  gen->add_option("--size", gd.size, "square extent in pixels [default: 64]");
  gen->add_option("--split", gd.split,
                  "split name used in sample ids [default: train]");
  gen->add_option("--out", gd.out, "output directory")->required();
  gen->callback([&] {
    apply_threads(threads);
    Timer t;
    ck::DatasetManifest m =
        ck::generate_dataset(gd.seed, gd.count, gd.size, gd.out, gd.split);
    write_run_log(gd.out, "gen-data", t.seconds());
    std::cout << "wrote " << m.entries.size() << " samples under " << gd.out
              << "\n";
  });

  // --- train -----------------------------------------------------------------
  auto* tr = app.add_subcommand(
      "train",
      "train a model; writes checkpoints, train/val logs, and the effective "
      "config");
  struct {
    std::string config, data, val, out, resume;
  } to;
  std::vector<std::pair<std::string, std::string>> tr_over;
  tr->add_option("--config", to.config,
                 "key=value file applied before per-key flags");
  {
    ck::RunConfig defaults;
    for (const ck::ConfigKeyInfo& k : ck::run_config_keys()) {
      std::string name = k.name;
      tr->add_option_function<std::string>(
          "--" + name,
          [&tr_over, name](const std::string& v) {
            tr_over.emplace_back(name, v);
          },
          k.doc + " [default: " + ck::get_key(defaults, name) + "]");
    }
  }
  tr->add_option("--data", to.data,
                 "training dataset directory (holds manifest.tsv)")
      ->required();
  tr->add_option("--val", to.val, "validation dataset directory")->required();
  tr->add_option("--out", to.out, "output directory")->required();
  tr->add_option("--resume", to.resume,
                 "checkpoint to load first; pair with --start_epoch to "
                 "continue a schedule");
  tr->callback([&] {
    apply_threads(threads);
    Timer t;
    ck::RunConfig cfg;
    try {
      if (!to.config.empty()) ck::load_config_file(cfg, to.config);
      for (const auto& [k, v] : tr_over) ck::set_key(cfg, k, v);
      cfg.model.validate();
    } catch (const ck::ConfigError& e) {
      // a bad key or value is a usage error, not a runtime failure
      throw CLI::ValidationError(e.what());
    }
    cfg.train.out_dir = to.out;
    std::vector<ck::SaliencySample> train_set = load_split(to.data);
    std::vector<ck::SaliencySample> val_set = load_split(to.val);
    ck::ClassMini model(cfg.model);
    if (!to.resume.empty()) ck::load_checkpoint(model, to.resume);
    std::filesystem::create_directories(to.out);
    write_text(to.out + "/config.cfg", ck::dump_config(cfg));
    ck::TrainLog log = ck::train_loop(model, train_set, val_set, cfg.train);
    write_run_log(to.out, "train", t.seconds());
    const ck::MetricsReport& v = log.epochs.back().val;
    std::cout << "epochs " << cfg.train.start_epoch + 1 << ".."
              << cfg.train.epochs << " done; val f_max=" << v.f_max
              << " mae=" << v.mae << " s_measure=" << v.s_measure
              << "; outputs under " << to.out << "\n";
  });

  // --- eval ------------------------------------------------------------------
  auto* ev = app.add_subcommand(
      "eval",
      "score saliency maps against a dataset; writes metrics.csv and "
      "pr_curve.csv");
  struct {
    std::string data, pred, ckpt, out;
    int64_t batch = 8;
  } eo;
  ev->add_option("--data", eo.data, "dataset directory with ground truth")
      ->required();
  auto* ev_pred =
      ev->add_option("--pred", eo.pred, "directory of <id>.pgm predictions");
  auto* ev_ckpt = ev->add_option(
      "--ckpt", eo.ckpt, "checkpoint to predict with instead of --pred");
  ev_pred->excludes(ev_ckpt);
  ev_ckpt->excludes(ev_pred);
  ev->add_option("--batch", eo.batch,
                 "checkpoint-mode batch size [default: 8]");
  ev->add_option("--out", eo.out, "output directory")->required();
  ev->callback([&] {
    apply_threads(threads);
    if (eo.pred.empty() && eo.ckpt.empty())
      throw CLI::RequiredError("eval: one of --pred or --ckpt");
    Timer t;
    std::vector<ck::SaliencySample> set = load_split(eo.data);
    std::vector<ck::EvalPair> pairs;
    if (!eo.pred.empty()) {
      for (const ck::SaliencySample& s : set)
        pairs.push_back(
            {s.id, ck::read_pgm(eo.pred + "/" + s.id + ".pgm"), s.mask});
    } else {
      ck::ClassMini model = load_model(eo.ckpt);
      std::vector<ck::Tensor> maps = ck::predict_maps(model, set, eo.batch);
      for (size_t i = 0; i < set.size(); ++i)
        pairs.push_back({set[i].id, maps[i], set[i].mask});
    }
    std::vector<std::pair<std::string, ck::ImageMetrics>> rows;
    ck::MetricsReport rep = ck::evaluate_dataset(pairs, &rows);
    std::filesystem::create_directories(eo.out);
    ck::write_metrics_csv(eo.out + "/metrics.csv", rows, rep);
    ck::write_pr_csv(eo.out + "/pr_curve.csv", rep.curve);
    write_run_log(eo.out, "eval", t.seconds());
    std::cout << "images=" << rep.images << " f_max=" << rep.f_max
              << " f_mean=" << rep.f_mean << " f_adaptive=" << rep.f_adaptive
              << " mae=" << rep.mae << " s_measure=" << rep.s_measure << "\n";
  });

  // --- gradcheck ---------------------------------------------------------------
  auto* gc = app.add_subcommand(
      "gradcheck",
      "finite-difference audit of every differentiable op and the full model");
  ck::GradCheckConfig gcfg;
  gc->add_option("--seed", gcfg.seed, "suite seed [default: 7]");
  gc->add_option("--instances", gcfg.instances,
                 "random instances per check [default: 20]");
  gc->add_option("--step", gcfg.step,
                 "central-difference half step [default: 1e-05]");
  gc->add_option("--tolerance", gcfg.tolerance,
                 "relative error bound [default: 0.0001]");
  gc->callback([&] {
    apply_threads(threads);
    std::vector<ck::CheckResult> res = ck::run_gradient_suite(gcfg);
    ck::print_gradient_report(std::cout, res);
    if (!ck::all_passed(res)) {
      std::cerr << "error: gradient checks failed\n";
      rc = 1;
    }
  });

  // --- infer -------------------------------------------------------------------
  auto* in = app.add_subcommand(
      "infer", "predict saliency maps for a dataset or a folder of .ppm files");
  struct {
    std::string ckpt, data, images, out;
    int64_t batch = 8;
  } io;
  in->add_option("--ckpt", io.ckpt, "trained checkpoint")->required();
  auto* in_data =
      in->add_option("--data", io.data, "dataset directory (uses manifest ids)");
  auto* in_imgs =
      in->add_option("--images", io.images, "directory scanned for *.ppm");
  in_data->excludes(in_imgs);
  in_imgs->excludes(in_data);
  in->add_option("--batch", io.batch, "batch size [default: 8]");
  in->add_option("--out", io.out, "output directory")->required();
  in->callback([&] {
    apply_threads(threads);
    if (io.data.empty() && io.images.empty())
      throw CLI::RequiredError("infer: one of --data or --images");
    Timer t;
    std::vector<std::pair<std::string, ck::Tensor>> items;
    if (!io.data.empty()) {
      for (const ck::SaliencySample& s : load_split(io.data))
        items.emplace_back(s.id, s.image);
    } else {
      std::vector<std::filesystem::path> found;
      for (const auto& ent : std::filesystem::directory_iterator(io.images))
        if (ent.path().extension() == ".ppm") found.push_back(ent.path());
      std::sort(found.begin(), found.end());
      if (found.empty())
        throw ck::IoError("no .ppm images under '" + io.images + "'");
      for (const std::filesystem::path& p : found)
        items.emplace_back(p.stem().string(), ck::read_ppm(p.string()));
    }
    ck::ClassMini model = load_model(io.ckpt);
    std::filesystem::create_directories(io.out);
    ck::NoGradGuard guard;
    size_t i = 0;
    while (i < items.size()) {
      // batches flush on a shape change so mixed-size folders still run
      size_t j = i + 1;
      while (j < items.size() && j - i < static_cast<size_t>(io.batch) &&
             items[j].second.shape() == items[i].second.shape())
        ++j;
      std::vector<ck::Tensor> imgs;
      for (size_t k = i; k < j; ++k) imgs.push_back(items[k].second);
      ck::ClassMini::ForwardOut out =
          model.forward(ck::stack_batch(imgs), /*training=*/false);
      for (size_t k = i; k < j; ++k)
        ck::write_pgm(io.out + "/" + items[k].first + ".pgm",
                      ck::slice_batch(out.preds[0], static_cast<int64_t>(k - i)));
      i = j;
    }
    write_run_log(io.out, "infer", t.seconds());
    std::cout << "wrote " << items.size() << " maps under " << io.out << "\n";
  });

  // --- attn-dump -----------------------------------------------------------------
  auto* ad = app.add_subcommand(
      "attn-dump",
      "write each level's position/channel attention matrices for one image "
      "as map-max normalized PGMs");
  struct {
    std::string ckpt, image, out;
  } ao;
  ad->add_option("--ckpt", ao.ckpt, "trained checkpoint")->required();
  ad->add_option("--image", ao.image, "input .ppm image")->required();
  ad->add_option("--out", ao.out, "output directory")->required();
  ad->callback([&] {
    apply_threads(threads);
    Timer t;
    ck::ClassMini model = load_model(ao.ckpt);
    ck::Tensor img = ck::read_ppm(ao.image);
    ck::NoGradGuard guard;
    ck::ClassMini::ForwardOut out = model.forward(
        ck::stack_batch({img}), /*training=*/false, /*want_maps=*/true);
    std::filesystem::create_directories(ao.out);
    int written = 0;
    for (size_t li = 0; li < out.maps.size(); ++li) {
      const ck::AttentionMaps& m = out.maps[li][0];
      std::string lvl = std::to_string(li + 2);
      if (m.position_map.defined()) {
        ck::write_pgm(ao.out + "/position_level" + lvl + ".pgm",
                      normalized_map(m.position_map));
        ++written;
      }
      if (m.channel_map.defined()) {
        ck::write_pgm(ao.out + "/channel_level" + lvl + ".pgm",
                      normalized_map(m.channel_map));
        ++written;
      }
    }
    write_run_log(ao.out, "attn-dump", t.seconds());
    if (written == 0)
      std::cout << "both attention halves are disabled in this checkpoint; "
                   "nothing to write\n";
    else
      std::cout << "wrote " << written << " maps under " << ao.out << "\n";
  });

  // --- ablate ----------------------------------------------------------------
  auto* ab = app.add_subcommand(
      "ablate",
      "train the ten-row ingredient grid; writes report.csv and "
      "agreement.csv");
  ck::AblationOptions aopt;
  ab->add_option("--seed", aopt.seed, "data/init/shuffle seed [default: 0]");
  ab->add_option("--train-count", aopt.train_count,
                 "training samples [default: 60]");
  ab->add_option("--val-count", aopt.val_count,
                 "held-out samples [default: 20]");
  ab->add_option("--size", aopt.size,
                 "square extent, multiple of 16 [default: 32]");
  ab->add_option("--channels", aopt.channels,
                 "model width, even and >= 4 [default: 8]");
  ab->add_option("--epochs", aopt.epochs, "epochs per row [default: 6]");
  ab->add_option("--batch", aopt.batch_size, "batch size [default: 8]");
  ab->add_option("--out", aopt.out_dir, "output directory")->required();
  ab->callback([&] {
    apply_threads(threads);
    Timer t;
    std::vector<ck::AblationRow> rows = ck::run_ablation(aopt);
    std::vector<ck::DirectionalClaim> claims = ck::directional_claims(rows);
    ck::write_ablation_csv(aopt.out_dir + "/report.csv", rows);
    ck::write_agreement_csv(aopt.out_dir + "/agreement.csv", claims);
    write_run_log(aopt.out_dir, "ablate", t.seconds());
    int agree = 0;
    for (const ck::DirectionalClaim& c : claims) agree += c.agrees;
    std::cout << rows.size() << " configurations done; " << agree << "/"
              << claims.size() << " expected directions held; report under "
              << aopt.out_dir << "\n";
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return rc;
}
