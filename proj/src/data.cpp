#include "classkit/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "classkit/errors.hpp"
#include "classkit/rng.hpp"

namespace classkit {

namespace {

uint8_t to_byte(double v) {
  long q = std::lround(v * 255.0);
  return static_cast<uint8_t>(std::clamp(q, 0L, 255L));
}

void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write " + path);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f.good()) throw IoError("short write to " + path);
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// Cursor over a netpbm header; all failures carry the byte offset.
struct PnmCursor {
  const std::string& buf;
  const std::string& path;
  size_t at = 0;

  [[noreturn]] void fail(const std::string& what) const {
    throw ParseError(path + ": " + what + " at byte " + std::to_string(at));
  }
  void skip_space() {
    while (at < buf.size()) {
      char c = buf[at];
      if (c == '#') {
        while (at < buf.size() && buf[at] != '\n') ++at;
      } else if (c == ' ' || c == '\t' || c == '\r' || c == '\n') {
        ++at;
      } else {
        break;
      }
    }
  }
  int64_t number() {
    skip_space();
    if (at >= buf.size() || buf[at] < '0' || buf[at] > '9') {
      fail("expected a number");
    }
    int64_t v = 0;
    while (at < buf.size() && buf[at] >= '0' && buf[at] <= '9') {
      v = v * 10 + (buf[at] - '0');
      if (v > (1 << 20)) fail("implausibly large value");
      ++at;
    }
    return v;
  }
};

std::string encode_netpbm(const char* magic, int64_t channels,
                          const Tensor& t, int64_t h, int64_t w) {
  std::string out = std::string(magic) + "\n" + std::to_string(w) + " " +
                    std::to_string(h) + "\n255\n";
  const auto& v = t.value();
  out.reserve(out.size() + static_cast<size_t>(channels * h * w));
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x)
      for (int64_t c = 0; c < channels; ++c)
        out.push_back(static_cast<char>(to_byte(v[(c * h + y) * w + x])));
  return out;
}

Tensor decode_netpbm(const std::string& path, const char* magic,
                     int64_t channels) {
  std::string buf = read_file(path);
  PnmCursor cur{buf, path};
  if (buf.size() < 2 || buf[0] != magic[0] || buf[1] != magic[1]) {
    cur.fail(std::string("not a ") + magic + " file");
  }
  cur.at = 2;
  int64_t w = cur.number();
  int64_t h = cur.number();
  int64_t maxval = cur.number();
  if (w < 1 || h < 1) cur.fail("degenerate extent");
  if (maxval != 255) cur.fail("only maxval 255 is supported");
  if (cur.at >= buf.size()) cur.fail("missing raster separator");
  ++cur.at;  // single whitespace byte after maxval
  size_t need = static_cast<size_t>(channels * h * w);
  if (buf.size() - cur.at != need) cur.fail("raster size mismatch");

  Tensor t = Tensor::zeros({channels, h, w});
  auto& v = t.value_mut();
  for (int64_t y = 0; y < h; ++y)
    for (int64_t x = 0; x < w; ++x)
      for (int64_t c = 0; c < channels; ++c) {
        uint8_t b = static_cast<uint8_t>(buf[cur.at++]);
        v[(c * h + y) * w + x] = static_cast<double>(b) / 255.0;
      }
  return t;
}

}  // namespace

void write_ppm(const std::string& path, const Tensor& image) {
  const Shape& s = image.shape();
  if (s.size() != 3 || s[0] != 3) {
    throw ShapeError("write_ppm wants [3,H,W], got " + shape_str(s));
  }
  write_file(path, encode_netpbm("P6", 3, image, s[1], s[2]));
}

void write_pgm(const std::string& path, const Tensor& map) {
  const Shape& s = map.shape();
  int64_t h, w;
  if (s.size() == 2) {
    h = s[0];
    w = s[1];
  } else if (s.size() == 3 && s[0] == 1) {
    h = s[1];
    w = s[2];
  } else {
    throw ShapeError("write_pgm wants [H,W] or [1,H,W], got " + shape_str(s));
  }
  write_file(path, encode_netpbm("P5", 1, map, h, w));
}

Tensor read_ppm(const std::string& path) { return decode_netpbm(path, "P6", 3); }

Tensor read_pgm(const std::string& path) { return decode_netpbm(path, "P5", 1); }

// --- synthetic scenes -------------------------------------------------------

namespace {

struct Pt {
  int64_t x, y;
};

int64_t cross(Pt o, Pt a, Pt b) {
  return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
}

std::vector<Pt> convex_hull(std::vector<Pt> pts) {
  std::sort(pts.begin(), pts.end(), [](Pt a, Pt b) {
    return a.x != b.x ? a.x < b.x : a.y < b.y;
  });
  pts.erase(std::unique(pts.begin(), pts.end(),
                        [](Pt a, Pt b) { return a.x == b.x && a.y == b.y; }),
            pts.end());
  if (pts.size() < 3) return {};
  std::vector<Pt> h;
  for (Pt p : pts) {  // lower
    while (h.size() >= 2 && cross(h[h.size() - 2], h.back(), p) <= 0)
      h.pop_back();
    h.push_back(p);
  }
  size_t lower = h.size() + 1;
  for (size_t i = pts.size() - 1; i-- > 0;) {  // upper
    Pt p = pts[i];
    while (h.size() >= lower && cross(h[h.size() - 2], h.back(), p) <= 0)
      h.pop_back();
    h.push_back(p);
  }
  h.pop_back();
  return h.size() >= 3 ? h : std::vector<Pt>{};
}

// Integer rotations come from Pythagorean triples, so membership tests stay
// exact. (p,q,r): rotate by the angle with cos = p/r, sin = q/r.
struct Triple {
  int64_t p, q, r;
};
constexpr Triple kTriples[] = {{1, 0, 1},   {3, 4, 5},   {4, 3, 5},
                               {5, 12, 13}, {12, 5, 13}, {8, 15, 17},
                               {15, 8, 17}, {20, 21, 29}};

enum class ShapeType { ellipse, polygon, square, ring };

struct SceneShape {
  ShapeType type = ShapeType::ellipse;
  int64_t cx = 0, cy = 0;
  int64_t a = 1, b = 1;  // semi-axes (ellipse/ring) or half-side (square)
  int64_t band = 0;      // ring thickness
  Triple rot{1, 0, 1};
  std::vector<Pt> hull;  // CCW, polygon only

  bool inside_ellipse(int64_t x, int64_t y, int64_t sa, int64_t sb) const {
    int64_t dx = x - cx, dy = y - cy;
    int64_t u = dx * rot.p + dy * rot.q;
    int64_t v = -dx * rot.q + dy * rot.p;
    return u * u * sb * sb + v * v * sa * sa <= sa * sa * sb * sb * rot.r * rot.r;
  }
  bool contains(int64_t x, int64_t y) const {
    switch (type) {
      case ShapeType::ellipse:
        return inside_ellipse(x, y, a, b);
      case ShapeType::ring:
        return inside_ellipse(x, y, a, b) &&
               !inside_ellipse(x, y, std::max<int64_t>(1, a - band),
                               std::max<int64_t>(1, b - band));
      case ShapeType::square:
        return std::llabs(x - cx) <= a && std::llabs(y - cy) <= a;
      case ShapeType::polygon:
        for (size_t i = 0; i < hull.size(); ++i) {
          Pt e0 = hull[i], e1 = hull[(i + 1) % hull.size()];
          if (cross(e0, e1, {x, y}) < 0) return false;
        }
        return true;
    }
    return false;
  }
};

using Color = std::array<int, 3>;

int luma(const Color& c) { return (299 * c[0] + 587 * c[1] + 114 * c[2]) / 1000; }

Color pick_color(Rng& rng) {
  return {static_cast<int>(rng.uniform_int(10, 245)),
          static_cast<int>(rng.uniform_int(10, 245)),
          static_cast<int>(rng.uniform_int(10, 245))};
}

Color pick_contrasting(Rng& rng, int against_luma) {
  for (;;) {
    Color c = pick_color(rng);
    if (std::abs(luma(c) - against_luma) >= 60) return c;
  }
}

uint64_t hash_u64(uint64_t x) { return Rng(x).next_u64(); }

SceneShape random_salient_shape(Rng& rng, int64_t size, bool* ok) {
  SceneShape s;
  s.cx = size / 2 + rng.uniform_int(-size / 8, size / 8);
  s.cy = size / 2 + rng.uniform_int(-size / 8, size / 8);
  *ok = true;
  if (rng.bernoulli(0.5)) {
    s.type = ShapeType::ellipse;
    s.a = rng.uniform_int(size / 6, size / 3);
    s.b = rng.uniform_int(size / 6, size / 3);
    s.rot = kTriples[rng.uniform_int(0, 7)];
  } else {
    s.type = ShapeType::polygon;
    int64_t n = rng.uniform_int(5, 8);
    std::vector<Pt> pts;
    for (int64_t i = 0; i < n; ++i) {
      pts.push_back({s.cx + rng.uniform_int(-size / 3, size / 3),
                     s.cy + rng.uniform_int(-size / 3, size / 3)});
    }
    s.hull = convex_hull(pts);
    if (s.hull.empty()) *ok = false;
  }
  return s;
}

SceneShape random_distractor(Rng& rng, int64_t size) {
  SceneShape s;
  s.cx = rng.uniform_int(2, size - 3);
  s.cy = rng.uniform_int(2, size - 3);
  switch (rng.uniform_int(0, 2)) {
    case 0:  // small filled blob
      s.type = ShapeType::ellipse;
      s.a = rng.uniform_int(std::max<int64_t>(2, size / 16), size / 8);
      s.b = rng.uniform_int(std::max<int64_t>(2, size / 16), size / 8);
      s.rot = kTriples[rng.uniform_int(0, 7)];
      break;
    case 1:  // hollow outline
      s.type = ShapeType::ring;
      s.a = rng.uniform_int(std::max<int64_t>(3, size / 10), size / 5);
      s.b = rng.uniform_int(std::max<int64_t>(3, size / 10), size / 5);
      s.band = std::max<int64_t>(1, size / 32);
      s.rot = kTriples[rng.uniform_int(0, 7)];
      break;
    default:  // small square
      s.type = ShapeType::square;
      s.a = rng.uniform_int(std::max<int64_t>(2, size / 16), size / 8);
      break;
  }
  return s;
}

}  // namespace

SaliencySample generate_sample(uint64_t seed, int64_t index, int64_t size) {
  if (size < 16 || size % 16 != 0) {
    throw ConfigError("sample size must be a positive multiple of 16, got " +
                      std::to_string(size));
  }
  Rng rng = derive_rng(seed, static_cast<uint64_t>(index) + 1);
  int64_t n = size * size;

  for (int attempt = 0; attempt < 100; ++attempt) {
    Color bg = pick_color(rng);
    uint64_t salt = rng.next_u64();
    Color obj = pick_contrasting(rng, luma(bg));

    int64_t kind_roll = rng.uniform_int(0, 9);
    const char* kind = kind_roll < 3   ? "ellipse"
                       : kind_roll < 6 ? "polygon"
                                       : "twotone";
    bool two_tone = kind_roll >= 6;
    Color obj2 = obj;
    Triple split{1, 0, 1};
    if (two_tone) {
      // halves must differ from each other and from the background
      for (;;) {
        obj2 = pick_contrasting(rng, luma(bg));
        if (std::abs(luma(obj2) - luma(obj)) >= 60) break;
      }
      split = kTriples[rng.uniform_int(1, 7)];
    }

    bool ok = true;
    SceneShape salient = random_salient_shape(rng, size, &ok);

    int64_t n_distract = rng.uniform_int(0, 3);
    std::vector<SceneShape> distractors;
    std::vector<Color> dist_colors;
    for (int64_t i = 0; i < n_distract; ++i) {
      distractors.push_back(random_distractor(rng, size));
      dist_colors.push_back(pick_contrasting(rng, luma(bg)));
    }
    if (!ok) continue;

    std::vector<uint8_t> px(static_cast<size_t>(3 * n));
    std::vector<uint8_t> mk(static_cast<size_t>(n), 0);
    int64_t fg = 0;
    for (int64_t y = 0; y < size; ++y) {
      for (int64_t x = 0; x < size; ++x) {
        uint64_t h = hash_u64(salt ^ static_cast<uint64_t>(y * size + x));
        Color c;
        for (int ch = 0; ch < 3; ++ch) {
          int noise = static_cast<int>((h >> (8 * ch)) & 31) - 16;
          c[ch] = std::clamp(bg[ch] + noise, 0, 255);
        }
        for (size_t d = 0; d < distractors.size(); ++d) {
          if (distractors[d].contains(x, y)) c = dist_colors[d];
        }
        if (salient.contains(x, y)) {
          bool second = two_tone && ((x - salient.cx) * split.q -
                                     (y - salient.cy) * split.p) >= 0;
          c = second ? obj2 : obj;
          mk[static_cast<size_t>(y * size + x)] = 1;
          ++fg;
        }
        for (int ch = 0; ch < 3; ++ch) {
          px[static_cast<size_t>(ch * n + y * size + x)] =
              static_cast<uint8_t>(c[ch]);
        }
      }
    }

    if (fg < (n * 2 + 99) / 100 || fg > n * 7 / 10) continue;

    SaliencySample out;
    out.image = Tensor::zeros({3, size, size});
    out.mask = Tensor::zeros({1, size, size});
    auto& iv = out.image.value_mut();
    auto& mv = out.mask.value_mut();
    for (int64_t i = 0; i < 3 * n; ++i) {
      iv[i] = static_cast<double>(px[static_cast<size_t>(i)]) / 255.0;
    }
    for (int64_t i = 0; i < n; ++i) {
      mv[i] = static_cast<double>(mk[static_cast<size_t>(i)]);
    }
    out.meta.kind = kind;
    out.meta.distractors = n_distract;
    out.meta.contrast =
        std::abs(luma(obj) - luma(bg)) / 255.0;
    return out;
  }
  throw ContractError("sample generation failed to satisfy the mask bounds");
}

// --- dataset files ----------------------------------------------------------

namespace {

std::string pad_index(int64_t i) {
  std::string s = std::to_string(i);
  return std::string(5 - std::min<size_t>(5, s.size()), '0') + s;
}

}  // namespace

DatasetManifest generate_dataset(uint64_t seed, int64_t count, int64_t size,
                                 const std::string& dir,
                                 const std::string& split) {
  if (count < 1) throw ConfigError("dataset count must be at least 1");
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(fs::path(dir) / "images", ec);
  fs::create_directories(fs::path(dir) / "masks", ec);
  if (ec) throw IoError("cannot create " + dir + ": " + ec.message());

  DatasetManifest m;
  m.root = dir;
  m.split = split;
  m.seed = seed;

  std::string manifest = "classkit-manifest v1\nsplit\t" + split + "\nseed\t" +
                         std::to_string(seed) + "\n";
  std::string meta = "id\tkind\tdistractors\tcontrast\n";
  for (int64_t i = 0; i < count; ++i) {
    SaliencySample s = generate_sample(seed, i, size);
    s.id = split + "_" + pad_index(i);
    std::string img_rel = "images/" + s.id + ".ppm";
    std::string msk_rel = "masks/" + s.id + ".pgm";
    write_ppm((fs::path(dir) / img_rel).string(), s.image);
    write_pgm((fs::path(dir) / msk_rel).string(), s.mask);
    manifest += s.id + "\t" + img_rel + "\t" + msk_rel + "\n";
    meta += s.id + "\t" + s.meta.kind + "\t" +
            std::to_string(s.meta.distractors) + "\t" +
            std::to_string(s.meta.contrast) + "\n";
    m.entries.push_back({s.id, img_rel, msk_rel});
  }
  write_file((fs::path(dir) / "manifest.tsv").string(), manifest);
  write_file((fs::path(dir) / "meta.tsv").string(), meta);
  return m;
}

DatasetManifest read_manifest(const std::string& path) {
  std::string buf = read_file(path);
  std::istringstream in(buf);
  std::string line;
  auto next_line = [&](const char* what) {
    if (!std::getline(in, line)) {
      throw ParseError(path + ": missing " + std::string(what));
    }
    return line;
  };
  if (next_line("header") != "classkit-manifest v1") {
    throw ParseError(path + ": not a classkit manifest");
  }

  DatasetManifest m;
  namespace fs = std::filesystem;
  std::string root = fs::path(path).parent_path().string();
  m.root = root.empty() ? "." : root;

  std::string split_line = next_line("split line");
  if (split_line.rfind("split\t", 0) != 0) {
    throw ParseError(path + ": expected a split line");
  }
  m.split = split_line.substr(6);

  std::string seed_line = next_line("seed line");
  if (seed_line.rfind("seed\t", 0) != 0) {
    throw ParseError(path + ": expected a seed line");
  }
  m.seed = std::stoull(seed_line.substr(5));

  while (std::getline(in, line)) {
    if (line.empty()) continue;
    size_t t1 = line.find('\t');
    size_t t2 = t1 == std::string::npos ? t1 : line.find('\t', t1 + 1);
    if (t2 == std::string::npos) {
      throw ParseError(path + ": malformed entry '" + line + "'");
    }
    ManifestEntry e;
    e.id = line.substr(0, t1);
    e.image_path = line.substr(t1 + 1, t2 - t1 - 1);
    e.mask_path = line.substr(t2 + 1);
    for (const ManifestEntry& prev : m.entries) {
      if (prev.id == e.id) {
        throw ParseError(path + ": duplicate id '" + e.id + "'");
      }
    }
    m.entries.push_back(std::move(e));
  }
  return m;
}

std::vector<SaliencySample> load_dataset(const DatasetManifest& m) {
  if (m.entries.empty()) throw ContractError("dataset manifest has no entries");
  namespace fs = std::filesystem;
  std::vector<SaliencySample> out;
  out.reserve(m.entries.size());
  for (const ManifestEntry& e : m.entries) {
    try {
      SaliencySample s;
      s.id = e.id;
      s.image = read_ppm((fs::path(m.root) / e.image_path).string());
      Tensor raw = read_pgm((fs::path(m.root) / e.mask_path).string());
      if (raw.shape()[1] != s.image.shape()[1] ||
          raw.shape()[2] != s.image.shape()[2]) {
        throw IoError("mask extent differs from image extent");
      }
      s.mask = Tensor::zeros(raw.shape());
      auto& mv = s.mask.value_mut();
      const auto& rv = raw.value();
      for (size_t i = 0; i < rv.size(); ++i) {
        mv[i] = std::lround(rv[i] * 255.0) >= 128 ? 1.0 : 0.0;
      }
      out.push_back(std::move(s));
    } catch (const std::runtime_error& err) {
      throw IoError("sample '" + e.id + "': " + err.what());
    }
  }
  return out;
}

}  // namespace classkit
