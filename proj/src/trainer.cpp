#include "classkit/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "classkit/errors.hpp"
#include "classkit/kernels.hpp"

namespace classkit {

namespace {

// A scale is usable only if it lands the extent exactly on a positive
// multiple of 16; anything else would silently change the aspect contract.
int64_t scaled_extent(double scale, int64_t extent) {
  double t = scale * static_cast<double>(extent);
  int64_t r = std::llround(t);
  if (!(scale > 0.0) || std::fabs(t - static_cast<double>(r)) > 1e-9 ||
      r <= 0 || r % 16 != 0) {
    std::ostringstream os;
    os << "scale " << scale << " maps extent " << extent << " to " << t
       << ", not a positive multiple of 16";
    throw ConfigError(os.str());
  }
  return r;
}

void require_chw(const Tensor& x, const char* who) {
  if (x.shape().size() != 3)
    throw ShapeError(std::string(who) + " expects [C,H,W], got " +
                     shape_str(x.shape()));
}

std::ofstream open_csv(const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open '" + path + "' for writing");
  f << std::setprecision(17);
  return f;
}

}  // namespace

void TrainConfig::validate(int64_t input_h, int64_t input_w) const {
  if (epochs <= 0) throw ConfigError("epochs must be positive");
  if (batch_size <= 0) throw ConfigError("batch_size must be positive");
  if (!(lr_max_backbone > 0.0))
    throw ConfigError("lr_max_backbone must be positive");
  if (!(lr_max_rest > 0.0)) throw ConfigError("lr_max_rest must be positive");
  if (!(momentum >= 0.0) || momentum >= 1.0)
    throw ConfigError("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0))
    throw ConfigError("weight_decay must be nonnegative");
  if (!(warmup_fraction > 0.0) || !(warmup_fraction < 1.0))
    throw ConfigError("warmup_fraction must lie in (0, 1)");
  if (scales.empty()) throw ConfigError("scales must be nonempty");
  for (double s : scales) {
    scaled_extent(s, input_h);
    scaled_extent(s, input_w);
  }
  if (checkpoint_every <= 0)
    throw ConfigError("checkpoint_every must be positive");
  if (start_epoch < 0 || start_epoch >= epochs)
    throw ConfigError("start_epoch must lie in [0, epochs)");
}

LrPair lr_at(int64_t step, int64_t total_steps, const TrainConfig& cfg) {
  if (total_steps <= 0) throw ContractError("lr_at: total_steps must be positive");
  if (step < 0 || step >= total_steps) {
    std::ostringstream os;
    os << "lr_at: step " << step << " outside [0, " << total_steps << ")";
    throw ContractError(os.str());
  }
  int64_t warm = std::max<int64_t>(
      1, std::llround(cfg.warmup_fraction * static_cast<double>(total_steps)));
  // ramp hits 1 exactly at step == warm; the decay branch would agree there
  double shape =
      step <= warm
          ? static_cast<double>(step) / static_cast<double>(warm)
          : static_cast<double>(total_steps - step) /
                static_cast<double>(total_steps - warm);
  return {cfg.lr_max_backbone * shape, cfg.lr_max_rest * shape};
}

bool weight_decay_exempt(const std::string& name) {
  return name.ends_with(".bias") || name.ends_with(".gamma") ||
         name.ends_with(".shift") || name.ends_with(".alpha") ||
         name.ends_with(".beta");
}

void SgdState::step(const std::vector<NamedTensor>& params, LrPair lr,
                    double momentum, double weight_decay) {
  for (const NamedTensor& np : params) {
    Tensor t = np.tensor;  // same storage, non-const handle
    if (!t.has_grad())
      throw ContractError("sgd_step: no gradient for parameter '" + np.name +
                          "'");
    const std::vector<double>& g = t.grad();
    std::vector<double>& x = t.value_mut();
    std::vector<double>& v = v_[np.name];
    if (v.empty()) v.assign(x.size(), 0.0);
    if (v.size() != x.size())
      throw ContractError("sgd_step: stale velocity for parameter '" +
                          np.name + "'");
    double wd = weight_decay_exempt(np.name) ? 0.0 : weight_decay;
    double rate = np.name.starts_with("encoder.") ? lr.backbone : lr.rest;
    for (size_t i = 0; i < x.size(); ++i) {
      v[i] = momentum * v[i] + g[i] + wd * x[i];
      x[i] -= rate * v[i];
    }
  }
}

Tensor flip_horizontal(const Tensor& x) {
  require_chw(x, "flip_horizontal");
  const Shape& s = x.shape();
  Tensor y = Tensor::zeros(s);
  const std::vector<double>& a = x.value();
  std::vector<double>& b = y.value_mut();
  int64_t h = s[1], w = s[2];
  for (int64_t c = 0; c < s[0]; ++c)
    for (int64_t r = 0; r < h; ++r) {
      const double* src = a.data() + (c * h + r) * w;
      double* dst = b.data() + (c * h + r) * w;
      for (int64_t col = 0; col < w; ++col) dst[col] = src[w - 1 - col];
    }
  return y;
}

Tensor resize_bilinear(const Tensor& x, int64_t h, int64_t w) {
  require_chw(x, "resize_bilinear");
  if (h <= 0 || w <= 0)
    throw ShapeError("resize_bilinear: target extents must be positive");
  const Shape& s = x.shape();
  if (s[1] == h && s[2] == w) return x;
  Tensor y = Tensor::zeros({s[0], h, w});
  kernels::ResizeDims d{1, s[0], s[1], s[2], h, w};
  kernels::bilinear_fwd(x.value().data(), y.value_mut().data(), d);
  return y;
}

Tensor resize_nearest(const Tensor& x, int64_t h, int64_t w) {
  require_chw(x, "resize_nearest");
  if (h <= 0 || w <= 0)
    throw ShapeError("resize_nearest: target extents must be positive");
  const Shape& s = x.shape();
  if (s[1] == h && s[2] == w) return x;
  Tensor y = Tensor::zeros({s[0], h, w});
  const std::vector<double>& a = x.value();
  std::vector<double>& b = y.value_mut();
  for (int64_t c = 0; c < s[0]; ++c)
    for (int64_t oy = 0; oy < h; ++oy) {
      // source index of the output sample center, floored
      int64_t sy = ((2 * oy + 1) * s[1]) / (2 * h);
      for (int64_t ox = 0; ox < w; ++ox) {
        int64_t sx = ((2 * ox + 1) * s[2]) / (2 * w);
        b[(c * h + oy) * w + ox] = a[(c * s[1] + sy) * s[2] + sx];
      }
    }
  return y;
}

double pick_scale(Rng& rng, const std::vector<double>& scales) {
  if (scales.empty()) throw ContractError("pick_scale: empty scale list");
  return scales[rng.uniform_int(0, static_cast<int64_t>(scales.size()) - 1)];
}

AugmentedSample augment_sample(const SaliencySample& s, bool flip, int64_t h,
                               int64_t w) {
  Tensor img = s.image;
  Tensor msk = s.mask;
  if (flip) {
    img = flip_horizontal(img);
    msk = flip_horizontal(msk);
  }
  return {resize_bilinear(img, h, w), resize_nearest(msk, h, w)};
}

std::vector<Tensor> predict_maps(ClassMini& model,
                                 const std::vector<SaliencySample>& set,
                                 int64_t batch_size) {
  if (set.empty()) throw ContractError("predict_maps: empty dataset");
  if (batch_size <= 0)
    throw ContractError("predict_maps: batch_size must be positive");
  NoGradGuard guard;
  std::vector<Tensor> maps;
  maps.reserve(set.size());
  for (size_t lo = 0; lo < set.size(); lo += static_cast<size_t>(batch_size)) {
    size_t hi = std::min(set.size(), lo + static_cast<size_t>(batch_size));
    std::vector<Tensor> imgs;
    for (size_t i = lo; i < hi; ++i) imgs.push_back(set[i].image);
    ClassMini::ForwardOut out =
        model.forward(stack_batch(imgs), /*training=*/false);
    for (size_t i = lo; i < hi; ++i)
      maps.push_back(slice_batch(out.preds[0], static_cast<int64_t>(i - lo)));
  }
  return maps;
}

void write_train_log_csv(const std::string& path, const TrainLog& log) {
  std::ofstream f = open_csv(path);
  f << "step,lr,pixel,region,object,total,final,level2,level3,level4\n";
  for (const StepRecord& r : log.steps)
    f << r.step << ',' << r.lr << ',' << r.pixel << ',' << r.region << ','
      << r.object << ',' << r.level[0] << ',' << r.final << ',' << r.level[1]
      << ',' << r.level[2] << ',' << r.level[3] << '\n';
  if (!f.flush()) throw IoError("short write to '" + path + "'");
}

void write_val_log_csv(const std::string& path, const TrainLog& log) {
  std::ofstream f = open_csv(path);
  f << "epoch,f_max,f_mean,f_adaptive,mae,s_measure\n";
  for (const EpochRecord& r : log.epochs)
    f << r.epoch << ',' << r.val.f_max << ',' << r.val.f_mean << ','
      << r.val.f_adaptive << ',' << r.val.mae << ',' << r.val.s_measure
      << '\n';
  if (!f.flush()) throw IoError("short write to '" + path + "'");
}

TrainLog train_loop(ClassMini& model,
                    const std::vector<SaliencySample>& train_set,
                    const std::vector<SaliencySample>& val_set,
                    const TrainConfig& cfg) {
  if (train_set.empty() || val_set.empty())
    throw ContractError("train_loop: datasets must be nonempty");
  const Shape& is = train_set[0].image.shape();
  int64_t base_h = is[1], base_w = is[2];
  cfg.validate(base_h, base_w);

  if (!cfg.out_dir.empty()) std::filesystem::create_directories(cfg.out_dir);

  const int64_t n = static_cast<int64_t>(train_set.size());
  const int64_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const int64_t total_steps = cfg.epochs * steps_per_epoch;

  TrainLog log;
  SgdState sgd;
  // with final-head-only supervision the other heads get no gradient, so
  // they stay at init and must not be handed to the optimizer
  std::vector<NamedTensor> params = model.parameters();
  if (!cfg.multi_stage)
    std::erase_if(params, [](const NamedTensor& p) {
      return p.name.starts_with("head3.") || p.name.starts_with("head4.") ||
             p.name.starts_with("head_bridge.");
    });
  for (int64_t epoch = cfg.start_epoch; epoch < cfg.epochs; ++epoch) {
    // stream 0 is parameter init; epochs use 1+epoch so a resumed run draws
    // the same augmentations the uninterrupted one would
    Rng rng = derive_rng(cfg.seed, static_cast<uint64_t>(1 + epoch));
    std::vector<int64_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    for (int64_t i = n - 1; i > 0; --i) {
      int64_t j = rng.uniform_int(0, i);
      std::swap(order[i], order[j]);
    }

    for (int64_t b = 0; b < steps_per_epoch; ++b) {
      const int64_t lo = b * cfg.batch_size;
      const int64_t hi = std::min(lo + cfg.batch_size, n);
      const int64_t bs = hi - lo;
      // one scale per batch keeps it rectangular; flips are per sample
      double scale = pick_scale(rng, cfg.scales);
      int64_t th = scaled_extent(scale, base_h);
      int64_t tw = scaled_extent(scale, base_w);
      std::vector<Tensor> imgs, masks;
      std::vector<std::string> ids;
      for (int64_t k = lo; k < hi; ++k) {
        const SaliencySample& smp = train_set[order[k]];
        AugmentedSample a = augment_sample(smp, rng.bernoulli(0.5), th, tw);
        imgs.push_back(a.image);
        masks.push_back(a.mask);
        ids.push_back(smp.id);
      }

      ClassMini::ForwardOut out =
          model.forward(stack_batch(imgs), /*training=*/true);
      if (out.preds.size() != 4)
        throw ContractError("train_loop: expected 4 supervision levels");

      // batch loss: mean per level over per-sample losses, then the usual
      // halving weights, folded left to right so the log reproduces it
      std::vector<Tensor> level_mean;
      std::array<double, 4> level_val{};
      double pixel_sum = 0.0, region_sum = 0.0, object_sum = 0.0;
      const size_t supervised = cfg.multi_stage ? out.preds.size() : 1;
      for (size_t li = 0; li < supervised; ++li) {
        Tensor acc;
        for (int64_t j = 0; j < bs; ++j) {
          LossBreakdown lb = combined_loss(slice_batch(out.preds[li], j),
                                           masks[static_cast<size_t>(j)],
                                           cfg.loss);
          if (li == 0) {
            pixel_sum += lb.pixel.item();
            region_sum += lb.region.item();
            object_sum += lb.object.item();
          }
          acc = j == 0 ? lb.total : add(acc, lb.total);
        }
        Tensor mean = mul_const(acc, 1.0 / static_cast<double>(bs));
        level_val[li] = mean.item();
        level_mean.push_back(mean);
      }
      Tensor final_t = level_mean[0];
      for (size_t li = 1; li < level_mean.size(); ++li)
        final_t = add(final_t, mul_const(level_mean[li],
                                         std::ldexp(1.0, -static_cast<int>(li))));
      double final_v = final_t.item();

      const int64_t step = epoch * steps_per_epoch + b;
      if (!std::isfinite(final_v)) {
        std::ostringstream os;
        os << "train_loop: loss " << final_v << " at step " << step
           << " (epoch " << epoch + 1 << "); batch ids:";
        for (const std::string& id : ids) os << ' ' << id;
        throw ContractError(os.str());
      }

      LrPair lr = lr_at(step, total_steps, cfg);
      backward(final_t);
      sgd.step(params, lr, cfg.momentum, cfg.weight_decay);
      model.zero_grads();

      StepRecord rec;
      rec.step = step;
      rec.lr = lr.rest;
      rec.pixel = pixel_sum / static_cast<double>(bs);
      rec.region = region_sum / static_cast<double>(bs);
      rec.object = object_sum / static_cast<double>(bs);
      rec.level = level_val;
      rec.final = final_v;
      log.steps.push_back(rec);
    }

    std::vector<Tensor> maps = predict_maps(model, val_set, cfg.batch_size);
    std::vector<EvalPair> pairs;
    pairs.reserve(val_set.size());
    for (size_t i = 0; i < val_set.size(); ++i)
      pairs.push_back({val_set[i].id, maps[i], val_set[i].mask});
    EpochRecord er;
    er.epoch = epoch + 1;
    er.val = evaluate_dataset(pairs);
    log.epochs.push_back(er);

    if (!cfg.out_dir.empty()) {
      if ((epoch + 1) % cfg.checkpoint_every == 0 || epoch + 1 == cfg.epochs) {
        std::ostringstream name;
        name << cfg.out_dir << "/ckpt_epoch_" << epoch + 1 << ".clsk";
        save_checkpoint(model, name.str());
      }
      write_train_log_csv(cfg.out_dir + "/train_log.csv", log);
      write_val_log_csv(cfg.out_dir + "/val_log.csv", log);
    }
  }
  if (!cfg.out_dir.empty())
    save_checkpoint(model, cfg.out_dir + "/ckpt_final.clsk");
  return log;
}

}  // namespace classkit
