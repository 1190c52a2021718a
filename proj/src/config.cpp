#include "classkit/config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "classkit/errors.hpp"

namespace classkit {

namespace {

struct KeyEntry {
  ConfigKeyInfo info;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
};

[[noreturn]] void bad_value(const std::string& key, const std::string& kind,
                            const std::string& value) {
  throw ConfigError("key '" + key + "': expected " + kind + ", got '" + value +
                    "'");
}

// to_chars gives the shortest string that parses back to the same double,
// so dump -> load is an exact round trip
std::string fmt_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc()) throw ContractError("fmt_double: to_chars failed");
  return std::string(buf, p);
}

std::string fmt_bool(bool v) { return v ? "true" : "false"; }

std::string fmt_scales(const std::vector<double>& v) {
  std::string out;
  for (size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += fmt_double(v[i]);
  }
  return out;
}

int64_t parse_int(const std::string& key, const std::string& value) {
  int64_t v = 0;
  auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (ec != std::errc() || p != value.data() + value.size())
    bad_value(key, "integer", value);
  return v;
}

uint64_t parse_uint(const std::string& key, const std::string& value) {
  uint64_t v = 0;
  auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (ec != std::errc() || p != value.data() + value.size())
    bad_value(key, "unsigned integer", value);
  return v;
}

double parse_double(const std::string& key, const std::string& value) {
  double v = 0;
  auto [p, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (ec != std::errc() || p != value.data() + value.size())
    bad_value(key, "number", value);
  return v;
}

bool parse_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1") return true;
  if (value == "false" || value == "0") return false;
  bad_value(key, "true/false", value);
}

std::vector<double> parse_scales(const std::string& key,
                                 const std::string& value) {
  std::vector<double> out;
  size_t pos = 0;
  while (pos <= value.size()) {
    size_t comma = value.find(',', pos);
    if (comma == std::string::npos) comma = value.size();
    out.push_back(parse_double(key, value.substr(pos, comma - pos)));
    pos = comma + 1;
  }
  return out;
}

// every key lives in this one table; help text, set, and dump all read it
const std::vector<KeyEntry>& table() {
  static const std::vector<KeyEntry> t = {
      {{"channels", "int", "feature width of every post-encoder map"},
       [](const RunConfig& c) { return std::to_string(c.model.channels); },
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.model.channels = parse_int(k, v);
       }},
      {{"input_h", "int", "nominal input height, multiple of 16"},
       [](const RunConfig& c) { return std::to_string(c.model.input_h); },
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.model.input_h = parse_int(k, v);
       }},
      {{"input_w", "int", "nominal input width, multiple of 16"},
       [](const RunConfig& c) { return std::to_string(c.model.input_w); },
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.model.input_w = parse_int(k, v);
       }},
      {{"norm_epsilon", "float", "batch-norm variance floor"},
       [](const RunConfig& c) { return fmt_double(c.model.norm_epsilon); },
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.model.norm_epsilon = parse_double(k, v);
       }},
      {{"init_seed", "uint", "parameter initialization stream"},
       [](const RunConfig& c) { return std::to_string(c.model.init_seed); },
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.model.init_seed = parse_uint(k, v);
       }},
      {{"use_position_attention", "bool",
        "enable the position half of cross-level attention"},
       [](const RunConfig& c) {
         return fmt_bool(c.model.use_position_attention);
       },
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.model.use_position_attention = parse_bool(k, v);
       }},
      {{"use_channel_attention", "bool",
        "enable the channel half of cross-level attention"},
       [](const RunConfig& c) {
         return fmt_bool(c.model.use_channel_attention);
       },
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.model.use_channel_attention = parse_bool(k, v);
       }},
      {{"fusion", "choice", "decoder fusion: ffm or sum"},
       [](const RunConfig& c) {
         return c.model.fusion == FusionMode::ffm ? "ffm" : "sum";
       },
       [](RunConfig& c, const std::string& k, const std::string& v) {
         if (v == "ffm")
           c.model.fusion = FusionMode::ffm;
         else if (v == "sum")
           c.model.fusion = FusionMode::sum;
         else
           bad_value(k, "ffm or sum", v);
       }},
      {{"epochs", "int", "training epochs"},
       [](const RunConfig& c) { return std::to_string(c.train.epochs); },
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.train.epochs = parse_int(k, v);
       }},
      {{"batch_size", "int", "samples per optimizer step"},
       [](const RunConfig& c) { return std::to_string(c.train.batch_size); },
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.train.batch_size = parse_int(k, v);
       }},
      {{"lr_max_backbone", "float", "peak learning rate, encoder group"},
       [](const RunConfig& c) { return fmt_double(c.train.lr_max_backbone); },
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.train.lr_max_backbone = parse_double(k, v);
       }},
      {{"lr_max_rest", "float", "peak learning rate, everything else"},
       [](const RunConfig& c) { return fmt_double(c.train.lr_max_rest); },
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.train.lr_max_rest = parse_double(k, v);
       }},
      {{"momentum", "float", "SGD momentum"},
       [](const RunConfig& c) { return fmt_double(c.train.momentum); },
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.train.momentum = parse_double(k, v);
       }},
      {{"weight_decay", "float",
        "L2 pull on conv weights; norm affines, biases, and blends exempt"},
       [](const RunConfig& c) { return fmt_double(c.train.weight_decay); },
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.train.weight_decay = parse_double(k, v);
       }},
      {{"warmup_fraction", "float", "share of steps ramping 0 to peak"},
       [](const RunConfig& c) { return fmt_double(c.train.warmup_fraction); },
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.train.warmup_fraction = parse_double(k, v);
       }},
      {{"seed", "uint", "shuffle and augmentation stream"},
       [](const RunConfig& c) { return std::to_string(c.train.seed); },
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.train.seed = parse_uint(k, v);
       }},
      {{"scales", "float list",
        "comma-separated batch rescale factors; each must land on a multiple "
        "of 16"},
       [](const RunConfig& c) { return fmt_scales(c.train.scales); },
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.train.scales = parse_scales(k, v);
       }},
      {{"checkpoint_every", "int", "epochs between checkpoints"},
       [](const RunConfig& c) {
         return std::to_string(c.train.checkpoint_every);
       },
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.train.checkpoint_every = parse_int(k, v);
       }},
      {{"start_epoch", "int", "epochs already completed (resume point)"},
       [](const RunConfig& c) { return std::to_string(c.train.start_epoch); },
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.train.start_epoch = parse_int(k, v);
       }},
      {{"multi_stage", "bool",
        "supervise every decoder stage; off trains the final head only"},
       [](const RunConfig& c) { return fmt_bool(c.train.multi_stage); },
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.train.multi_stage = parse_bool(k, v);
       }},
      {{"use_pixel", "bool", "pixel-level cross-entropy term"},
       [](const RunConfig& c) { return fmt_bool(c.train.loss.use_pixel); },
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.train.loss.use_pixel = parse_bool(k, v);
       }},
      {{"use_region", "bool", "region-level mean/deviation term"},
       [](const RunConfig& c) { return fmt_bool(c.train.loss.use_region); },
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.train.loss.use_region = parse_bool(k, v);
       }},
      {{"use_object", "bool", "object-level soft F-measure term"},
       [](const RunConfig& c) { return fmt_bool(c.train.loss.use_object); },
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.train.loss.use_object = parse_bool(k, v);
       }},
      {{"region_window", "int",
        "region-loss window side at the 64-pixel reference scale"},
       [](const RunConfig& c) {
         return std::to_string(c.train.loss.region.window);
       },
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.train.loss.region.window = parse_int(k, v);
       }},
      {{"region_stride", "int",
        "region-loss stride at the 64-pixel reference scale"},
       [](const RunConfig& c) {
         return std::to_string(c.train.loss.region.stride);
       },
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.train.loss.region.stride = parse_int(k, v);
       }},
      {{"beta_sq", "float", "beta-squared of the soft F-measure"},
       [](const RunConfig& c) { return fmt_double(c.train.loss.beta_sq); },
       [](RunConfig& c, const std::string& k, const std::string& v) {
         c.train.loss.beta_sq = parse_double(k, v);
       }},
  };
  return t;
}

const KeyEntry& find_key(const std::string& key) {
  for (const KeyEntry& e : table())
    if (e.info.name == key) return e;
  throw ConfigError("unknown config key '" + key + "'");
}

std::string strip(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

const std::vector<ConfigKeyInfo>& run_config_keys() {
  static const std::vector<ConfigKeyInfo> infos = [] {
    std::vector<ConfigKeyInfo> v;
    for (const KeyEntry& e : table()) v.push_back(e.info);
    return v;
  }();
  return infos;
}

std::string get_key(const RunConfig& cfg, const std::string& key) {
  return find_key(key).get(cfg);
}

void set_key(RunConfig& cfg, const std::string& key, const std::string& value) {
  find_key(key).set(cfg, key, value);
}

void load_config_file(RunConfig& cfg, const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open config file '" + path + "'");
  std::set<std::string> seen;
  std::string line;
  int64_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    size_t hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    std::string body = strip(line);
    if (body.empty()) continue;
    size_t eq = body.find('=');
    std::ostringstream at;
    at << path << ":" << lineno;
    if (eq == std::string::npos)
      throw ConfigError(at.str() + ": expected key=value, got '" + body + "'");
    std::string key = strip(body.substr(0, eq));
    std::string value = strip(body.substr(eq + 1));
    if (key.empty())
      throw ConfigError(at.str() + ": empty key");
    if (!seen.insert(key).second)
      throw ConfigError(at.str() + ": duplicate key '" + key + "'");
    try {
      set_key(cfg, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError(at.str() + ": " + e.what());
    }
  }
}

std::string dump_config(const RunConfig& cfg) {
  std::string out;
  for (const KeyEntry& e : table())
    out += e.info.name + "=" + e.get(cfg) + "\n";
  return out;
}

}  // namespace classkit
