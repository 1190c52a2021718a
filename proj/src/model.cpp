#include "classkit/model.hpp"

#include <cstring>
#include <fstream>

#include "classkit/errors.hpp"

namespace classkit {

void ModelConfig::validate() const {
  if (channels < 4 || channels % 2 != 0) {
    throw ConfigError("channels must be even and at least 4, got " +
                      std::to_string(channels));
  }
  if (input_h < 16 || input_h % 16 != 0) {
    throw ConfigError("input_h must be a positive multiple of 16, got " +
                      std::to_string(input_h));
  }
  if (input_w < 16 || input_w % 16 != 0) {
    throw ConfigError("input_w must be a positive multiple of 16, got " +
                      std::to_string(input_w));
  }
  if (!(norm_epsilon > 0.0)) {
    throw ConfigError("norm_epsilon must be positive");
  }
}

EncoderBlock::EncoderBlock(int64_t cin, int64_t cout, Rng& rng, double eps)
    : down(cin, cout, 3, 2, 1, rng, eps), same(cout, cout, 3, 1, 1, rng, eps) {}

Tensor EncoderBlock::forward(const Tensor& x, bool training) {
  return same.forward(down.forward(x, training), training);
}

void EncoderBlock::params(std::vector<NamedTensor>& out,
                          const std::string& prefix) const {
  down.params(out, prefix + ".down");
  same.params(out, prefix + ".same");
}

void EncoderBlock::buffers(std::vector<NamedTensor>& out,
                           const std::string& prefix) const {
  down.buffers(out, prefix + ".down");
  same.buffers(out, prefix + ".same");
}

namespace {

Rng init_rng(const ModelConfig& cfg) {
  cfg.validate();
  return derive_rng(cfg.init_seed, 0);
}

}  // namespace

ClassMini::ClassMini(const ModelConfig& cfg) : ClassMini(cfg, init_rng(cfg)) {}

// Members initialize in declaration order, each drawing from the same rng,
// so initialization is a fixed function of the seed.
ClassMini::ClassMini(const ModelConfig& cfg, Rng rng)
    : config(cfg),
      e2(3, cfg.channels, rng, cfg.norm_epsilon),
      e3(cfg.channels, cfg.channels, rng, cfg.norm_epsilon),
      e4(cfg.channels, cfg.channels, rng, cfg.norm_epsilon),
      e5(cfg.channels, cfg.channels, rng, cfg.norm_epsilon),
      bridge1(cfg.channels, cfg.channels, 1, 1, 0, rng, cfg.norm_epsilon),
      bridge2(cfg.channels, cfg.channels, 3, 1, 1, rng, cfg.norm_epsilon),
      cla2(cfg.channels, cfg.use_position_attention,
           cfg.use_channel_attention, rng),
      cla3(cfg.channels, cfg.use_position_attention,
           cfg.use_channel_attention, rng),
      cla4(cfg.channels, cfg.use_position_attention,
           cfg.use_channel_attention, rng),
      ffm4(cfg.channels, cfg.fusion, rng, cfg.norm_epsilon),
      ffm3(cfg.channels, cfg.fusion, rng, cfg.norm_epsilon),
      ffm2(cfg.channels, cfg.fusion, rng, cfg.norm_epsilon),
      head2(cfg.channels, rng),
      head3(cfg.channels, rng),
      head4(cfg.channels, rng),
      head_bridge(cfg.channels, rng) {}

ClassMini::ForwardOut ClassMini::forward(const Tensor& x, bool training,
                                         bool want_maps) {
  const Shape& s = x.shape();
  if (s.size() != 4 || s[1] != 3) {
    throw ShapeError("model input must be [N,3,H,W], got " + shape_str(s));
  }
  if (s[2] % 16 != 0 || s[3] % 16 != 0 || s[2] < 16 || s[3] < 16) {
    throw ShapeError("model input extents must be positive multiples of 16, got " +
                     shape_str(s));
  }
  int64_t h = s[2], w = s[3];

  Tensor f2 = e2.forward(x, training);
  Tensor f3 = e3.forward(f2, training);
  Tensor f4 = e4.forward(f3, training);
  Tensor f5 = e5.forward(f4, training);
  Tensor fh = bridge2.forward(bridge1.forward(f5, training), training);

  ForwardOut out;
  if (want_maps) out.maps.resize(3);
  auto a2 = cla2.forward(fh, f2, want_maps ? &out.maps[0] : nullptr);
  auto a3 = cla3.forward(fh, f3, want_maps ? &out.maps[1] : nullptr);
  auto a4 = cla4.forward(fh, f4, want_maps ? &out.maps[2] : nullptr);

  Tensor d4 = ffm4.forward(a4.f_l, a4.f_h, fh, training);
  Tensor d3 = ffm3.forward(a3.f_l, a3.f_h, d4, training);
  Tensor d2 = ffm2.forward(a2.f_l, a2.f_h, d3, training);

  out.preds.push_back(head2.forward(d2, h, w));
  out.preds.push_back(head3.forward(d3, h, w));
  out.preds.push_back(head4.forward(d4, h, w));
  out.preds.push_back(head_bridge.forward(fh, h, w));
  return out;
}

std::vector<NamedTensor> ClassMini::parameters() const {
  std::vector<NamedTensor> out;
  e2.params(out, "encoder.e2");
  e3.params(out, "encoder.e3");
  e4.params(out, "encoder.e4");
  e5.params(out, "encoder.e5");
  bridge1.params(out, "bridge.c1");
  bridge2.params(out, "bridge.c2");
  cla2.params(out, "cla2");
  cla3.params(out, "cla3");
  cla4.params(out, "cla4");
  ffm4.params(out, "ffm4");
  ffm3.params(out, "ffm3");
  ffm2.params(out, "ffm2");
  head2.params(out, "head2");
  head3.params(out, "head3");
  head4.params(out, "head4");
  head_bridge.params(out, "head_bridge");
  return out;
}

std::vector<NamedTensor> ClassMini::buffers() const {
  std::vector<NamedTensor> out;
  e2.buffers(out, "encoder.e2");
  e3.buffers(out, "encoder.e3");
  e4.buffers(out, "encoder.e4");
  e5.buffers(out, "encoder.e5");
  bridge1.buffers(out, "bridge.c1");
  bridge2.buffers(out, "bridge.c2");
  ffm4.buffers(out, "ffm4");
  ffm3.buffers(out, "ffm3");
  ffm2.buffers(out, "ffm2");
  return out;
}

void ClassMini::zero_grads() {
  for (NamedTensor& p : parameters()) p.tensor.zero_grad();
}

// --- checkpoint io ----------------------------------------------------------
// Plain little-endian dump; every build target here is little-endian.

namespace {

constexpr char kMagic[4] = {'C', 'L', 'S', 'K'};
constexpr uint32_t kVersion = 1;

void put_bytes(std::ofstream& f, const void* p, size_t n) {
  f.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

template <typename T>
void put(std::ofstream& f, T v) {
  put_bytes(f, &v, sizeof v);
}

void put_str(std::ofstream& f, const std::string& s) {
  put<uint32_t>(f, static_cast<uint32_t>(s.size()));
  put_bytes(f, s.data(), s.size());
}

struct Reader {
  std::ifstream f;
  std::string path;
  int64_t at = 0;

  explicit Reader(const std::string& p) : f(p, std::ios::binary), path(p) {
    if (!f) throw IoError("cannot open " + p);
  }
  void bytes(void* p, size_t n) {
    f.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (f.gcount() != static_cast<std::streamsize>(n)) {
      throw IoError("truncated checkpoint " + path + " at byte " +
                    std::to_string(at));
    }
    at += static_cast<int64_t>(n);
  }
  template <typename T>
  T get() {
    T v;
    bytes(&v, sizeof v);
    return v;
  }
  std::string str() {
    uint32_t n = get<uint32_t>();
    if (n > 1u << 16) {
      throw IoError("implausible name length in " + path + " at byte " +
                    std::to_string(at));
    }
    std::string s(n, '\0');
    bytes(s.data(), n);
    return s;
  }
};

void put_section(std::ofstream& f, const std::vector<NamedTensor>& ts) {
  put<uint32_t>(f, static_cast<uint32_t>(ts.size()));
  for (const NamedTensor& nt : ts) {
    put_str(f, nt.name);
    put<uint64_t>(f, static_cast<uint64_t>(nt.tensor.numel()));
    put_bytes(f, nt.tensor.value().data(),
              sizeof(double) * static_cast<size_t>(nt.tensor.numel()));
  }
}

void get_section(Reader& r, std::vector<NamedTensor> ts, const char* what) {
  uint32_t n = r.get<uint32_t>();
  if (n != ts.size()) {
    throw ConfigError("checkpoint " + r.path + " holds " + std::to_string(n) +
                      " " + what + ", model expects " +
                      std::to_string(ts.size()));
  }
  for (NamedTensor& nt : ts) {
    std::string name = r.str();
    if (name != nt.name) {
      throw ConfigError("checkpoint " + r.path + ": expected " + what + " '" +
                        nt.name + "', found '" + name + "'");
    }
    uint64_t count = r.get<uint64_t>();
    if (count != static_cast<uint64_t>(nt.tensor.numel())) {
      throw ConfigError("checkpoint " + r.path + ": '" + name + "' holds " +
                        std::to_string(count) + " values, model expects " +
                        std::to_string(nt.tensor.numel()));
    }
    r.bytes(nt.tensor.value_mut().data(),
            sizeof(double) * static_cast<size_t>(count));
  }
}

void put_config(std::ofstream& f, const ModelConfig& c) {
  put<int64_t>(f, c.channels);
  put<int64_t>(f, c.input_h);
  put<int64_t>(f, c.input_w);
  put<double>(f, c.norm_epsilon);
  put<uint64_t>(f, c.init_seed);
  put<uint8_t>(f, c.use_position_attention ? 1 : 0);
  put<uint8_t>(f, c.use_channel_attention ? 1 : 0);
  put<uint8_t>(f, c.fusion == FusionMode::ffm ? 0 : 1);
}

ModelConfig get_config(Reader& r) {
  ModelConfig c;
  c.channels = r.get<int64_t>();
  c.input_h = r.get<int64_t>();
  c.input_w = r.get<int64_t>();
  c.norm_epsilon = r.get<double>();
  c.init_seed = r.get<uint64_t>();
  c.use_position_attention = r.get<uint8_t>() != 0;
  c.use_channel_attention = r.get<uint8_t>() != 0;
  c.fusion = r.get<uint8_t>() == 0 ? FusionMode::ffm : FusionMode::sum;
  return c;
}

void check_header(Reader& r) {
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) {
    throw ConfigError(r.path + " is not a checkpoint (bad magic)");
  }
  uint32_t version = r.get<uint32_t>();
  if (version != kVersion) {
    throw ConfigError(r.path + ": unsupported checkpoint version " +
                      std::to_string(version));
  }
}

}  // namespace

void save_checkpoint(const ClassMini& model, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path);
  put_bytes(f, kMagic, 4);
  put<uint32_t>(f, kVersion);
  put_config(f, model.config);
  put_section(f, model.parameters());
  put_section(f, model.buffers());
  if (!f.good()) throw IoError("short write to " + path);
}

void load_checkpoint(ClassMini& model, const std::string& path) {
  Reader r(path);
  check_header(r);
  ModelConfig stored = get_config(r);
  if (!(stored == model.config)) {
    throw ConfigError("checkpoint " + path + " was written for a different configuration");
  }
  get_section(r, model.parameters(), "parameters");
  get_section(r, model.buffers(), "buffers");
}

ModelConfig peek_config(const std::string& path) {
  Reader r(path);
  check_header(r);
  return get_config(r);
}

}  // namespace classkit
