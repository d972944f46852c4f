#include "apseg/config.hpp"

#include <algorithm>
#include <charconv>
#include <functional>
#include <iomanip>
#include <sstream>

#include "apseg/errors.hpp"
#include "apseg/feature_file.hpp"

namespace apseg {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

std::string where(const std::string& section, const std::string& key) { return "[" + section + "] " + key; }

template <typename I>
I parse_integer(const std::string& v, const std::string& name) {
  I out{};
  const auto* end = v.data() + v.size();
  auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc() || p != end) throw ConfigError(name + ": expected an integer, got '" + v + "'");
  return out;
}

double parse_real(const std::string& v, const std::string& name) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument(v);
    return d;
  } catch (const std::exception&) {
    throw ConfigError(name + ": expected a number, got '" + v + "'");
  }
}

bool parse_bool(const std::string& v, const std::string& name) {
  if (v == "true" || v == "yes" || v == "on" || v == "1") return true;
  if (v == "false" || v == "no" || v == "off" || v == "0") return false;
  throw ConfigError(name + ": expected true or false, got '" + v + "'");
}

template <typename I>
std::vector<I> parse_list(const std::string& v, const std::string& name) {
  std::vector<I> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_integer<I>(trim(item), name));
  if (out.empty()) throw ConfigError(name + ": empty list");
  return out;
}

template <typename I>
std::string join(const std::vector<I>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
  return s;
}

// Shortest text that parses back to the same double.
std::string real(double d) {
  char buf[32];
  const auto r = std::to_chars(buf, buf + sizeof buf, d);
  return std::string(buf, r.ptr);
}

std::string pseudo_name(dpat::PseudoMode m) {
  switch (m) {
    case dpat::PseudoMode::None: return "none";
    case dpat::PseudoMode::Ccs: return "ccs";
    case dpat::PseudoMode::PmMap: return "pm-map";
  }
  return "ccs";
}

struct Key {
  std::string section;
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&, const std::string&)> set;
};

#define APSEG_SIZE_KEY(SEC, KEY, FIELD)                                                             \
  Key{SEC, KEY, [](const RunConfig& c) { return std::to_string(c.FIELD); },                        \
      [](RunConfig& c, const std::string& v, const std::string& n) { c.FIELD = parse_integer<std::size_t>(v, n); }}
#define APSEG_U64_KEY(SEC, KEY, FIELD)                                                              \
  Key{SEC, KEY, [](const RunConfig& c) { return std::to_string(c.FIELD); },                        \
      [](RunConfig& c, const std::string& v, const std::string& n) { c.FIELD = parse_integer<std::uint64_t>(v, n); }}
#define APSEG_REAL_KEY(SEC, KEY, FIELD)                                                             \
  Key{SEC, KEY, [](const RunConfig& c) { return real(c.FIELD); },                                   \
      [](RunConfig& c, const std::string& v, const std::string& n) { c.FIELD = parse_real(v, n); }}
#define APSEG_BOOL_KEY(SEC, KEY, FIELD)                                                             \
  Key{SEC, KEY, [](const RunConfig& c) { return std::string(c.FIELD ? "true" : "false"); },         \
      [](RunConfig& c, const std::string& v, const std::string& n) { c.FIELD = parse_bool(v, n); }}
#define APSEG_INT_KEY(SEC, KEY, FIELD)                                                              \
  Key{SEC, KEY, [](const RunConfig& c) { return std::to_string(c.FIELD); },                        \
      [](RunConfig& c, const std::string& v, const std::string& n) { c.FIELD = parse_integer<int>(v, n); }}

#define APSEG_DOMAIN_KEYS(PREFIX, FIELD)                                                          \
  APSEG_BOOL_KEY("data", PREFIX ".invert", FIELD.invert),                                         \
      APSEG_REAL_KEY("data", PREFIX ".noise", FIELD.noise_sigma),                                 \
      APSEG_REAL_KEY("data", PREFIX ".frequency", FIELD.texture_frequency),                       \
      APSEG_INT_KEY("data", PREFIX ".blur", FIELD.blur_radius),                                   \
      APSEG_U64_KEY("data", PREFIX ".palette_seed", FIELD.palette_seed)

const std::vector<Key>& keys() {
  static const std::vector<Key> k = {
      APSEG_SIZE_KEY("encoder", "mid_channels", encoder.mid_channels),
      APSEG_SIZE_KEY("encoder", "high_channels", encoder.high_channels),
      APSEG_U64_KEY("encoder", "seed", encoder.seed),

      APSEG_BOOL_KEY("dpat", "enabled", model.use_dpat),
      Key{"dpat", "pseudo", [](const RunConfig& c) { return pseudo_name(c.model.pseudo); },
          [](RunConfig& c, const std::string& v, const std::string& n) {
            if (v == "none") c.model.pseudo = dpat::PseudoMode::None;
            else if (v == "ccs") c.model.pseudo = dpat::PseudoMode::Ccs;
            else if (v == "pm-map") c.model.pseudo = dpat::PseudoMode::PmMap;
            else throw ConfigError(n + ": expected none, ccs or pm-map, got '" + v + "'");
          }},

      APSEG_BOOL_KEY("mpg", "enabled", model.use_mpg),
      APSEG_SIZE_KEY("mpg", "reduce_channels", model.mpg.reduce_channels),
      APSEG_SIZE_KEY("mpg", "out_channels", model.mpg.out_channels),
      APSEG_SIZE_KEY("mpg", "sparse_count", model.mpg.sparse_count),
      APSEG_SIZE_KEY("mpg", "decoder_layers", model.mpg.decoder_layers),
      Key{"mpg", "pyramid", [](const RunConfig& c) { return join(c.model.mpg.pyramid); },
          [](RunConfig& c, const std::string& v, const std::string& n) {
            c.model.mpg.pyramid = parse_list<std::size_t>(v, n);
          }},

      APSEG_SIZE_KEY("decoder", "attention_dim", model.decoder.attention_dim),
      APSEG_SIZE_KEY("decoder", "ffn_dim", model.decoder.ffn_dim),
      APSEG_SIZE_KEY("decoder", "blocks", model.decoder.blocks),

      APSEG_SIZE_KEY("data", "image_size", data.image_size),
      APSEG_SIZE_KEY("data", "train_per_class", data.train_per_class),
      APSEG_SIZE_KEY("data", "test_per_class", data.test_per_class),
      Key{"data", "train_classes", [](const RunConfig& c) { return join(c.data.train_classes); },
          [](RunConfig& c, const std::string& v, const std::string& n) {
            c.data.train_classes = parse_list<int>(v, n);
          }},
      Key{"data", "test_classes", [](const RunConfig& c) { return join(c.data.test_classes); },
          [](RunConfig& c, const std::string& v, const std::string& n) {
            c.data.test_classes = parse_list<int>(v, n);
          }},
      APSEG_U64_KEY("data", "seed", data.seed),
      APSEG_DOMAIN_KEYS("source", data.source),
      APSEG_DOMAIN_KEYS("target", data.target),

      APSEG_REAL_KEY("train", "lr", train.lr),
      APSEG_SIZE_KEY("train", "batch", train.batch),
      APSEG_SIZE_KEY("train", "steps", train.steps),
      APSEG_SIZE_KEY("train", "shots", train.shots),
      APSEG_U64_KEY("train", "seed", train.seed),
      APSEG_SIZE_KEY("train", "log_every", train.log_every),

      APSEG_SIZE_KEY("eval", "runs", eval.runs),
      APSEG_SIZE_KEY("eval", "episodes", eval.episodes),
      APSEG_SIZE_KEY("eval", "shots", eval.shots),
      APSEG_U64_KEY("eval", "seed", eval.seed),
      Key{"eval", "aggregation",
          [](const RunConfig& c) { return std::string(aggregation_name(c.eval.aggregation)); },
          [](RunConfig& c, const std::string& v, const std::string& n) {
            if (v == "per-class") c.eval.aggregation = Aggregation::PerClass;
            else if (v == "per-episode") c.eval.aggregation = Aggregation::PerEpisode;
            else throw ConfigError(n + ": expected per-class or per-episode, got '" + v + "'");
          }},
  };
  return k;
}

const char* const kSections[] = {"encoder", "dpat", "mpg", "decoder", "data", "train", "eval"};
const char* const kArchitectureSections[] = {"encoder", "dpat", "mpg", "decoder"};

}  // namespace

void RunConfig::resolve() {
  if (encoder.mid_channels == 0 || encoder.high_channels == 0)
    throw ConfigError("[encoder] channel counts must be positive");
  model.mpg.mid_channels = encoder.mid_channels;
  model.mpg.high_channels = encoder.high_channels;
  model.seed = train.seed;
  model.resolve();
  data.source.name = "source";
  data.source.id = 0;
  data.target.name = "target";
  data.target.id = 1;
  data.source.validate();
  data.target.validate();
  if (data.image_size < 32 || data.image_size % 4 != 0)
    throw ConfigError("[data] image_size must be a multiple of 4 and at least 32");
  for (const auto* list : {&data.train_classes, &data.test_classes})
    for (int c : *list)
      if (c < 0 || c >= kNumShapeClasses) throw ConfigError("[data] class id " + std::to_string(c) + " out of range");
  try {
    require_disjoint(data.train_classes, data.test_classes);
  } catch (const ContractError& e) {
    throw ConfigError(std::string("[data] ") + e.what());
  }
  train.validate();
  if (data.train_per_class < train.shots + 1 || data.test_per_class < eval.shots + 1)
    throw ConfigError("[data] per-class counts are too small for the requested shots");
  if (eval.runs == 0 || eval.episodes == 0) throw ConfigError("[eval] runs and episodes must be positive");
  if (eval.shots == 0) throw ConfigError("[eval] shots must be at least 1");
}

RunConfig desk_config() {
  RunConfig c;
  c.resolve();
  return c;
}

RunConfig paper_config() {
  RunConfig c;
  c.preset = "paper";
  c.encoder.mid_channels = 768;
  c.encoder.high_channels = 256;
  c.model.mpg.reduce_channels = 64;
  c.model.mpg.out_channels = 256;
  c.model.mpg.pyramid = {60, 30, 15, 8};
  c.data.image_size = 256;
  c.eval.episodes = 1200;
  c.resolve();
  return c;
}

RunConfig preset_config(const std::string& name) {
  if (name == "desk") return desk_config();
  if (name == "paper") return paper_config();
  throw ConfigError("unknown preset '" + name + "' (expected desk or paper)");
}

void set_config_value(RunConfig& cfg, const std::string& section, const std::string& key,
                      const std::string& value) {
  for (const auto& k : keys())
    if (k.section == section && k.key == key) {
      k.set(cfg, value, where(section, key));
      return;
    }
  if (std::find(std::begin(kSections), std::end(kSections), section) == std::end(kSections))
    throw ConfigError("unknown section [" + section + "]");
  throw ConfigError("unknown key " + where(section, key));
}

RunConfig parse_config(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> top;
  std::vector<std::tuple<std::string, std::string, std::string, int>> entries;
  std::stringstream ss(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    const auto hash = line.find_first_of("#;");
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("line " + std::to_string(lineno) + ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      if (std::find(std::begin(kSections), std::end(kSections), section) == std::end(kSections))
        throw ConfigError("line " + std::to_string(lineno) + ": unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("line " + std::to_string(lineno) + ": expected key = value");
    auto key = trim(line.substr(0, eq));
    auto value = trim(line.substr(eq + 1));
    if (section.empty()) {
      if (key != "preset") throw ConfigError("line " + std::to_string(lineno) + ": unknown top-level key " + key);
      top.emplace_back(key, value);
    } else {
      entries.emplace_back(section, key, value, lineno);
    }
  }
  RunConfig cfg = top.empty() ? desk_config() : preset_config(top.back().second);
  for (const auto& [sec, key, value, ln] : entries) {
    try {
      set_config_value(cfg, sec, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError("line " + std::to_string(ln) + ": " + e.what());
    }
  }
  cfg.resolve();
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::vector<std::uint8_t> bytes;
  try {
    bytes = read_file_bytes(path);
  } catch (const FormatError& e) {
    throw ConfigError(e.what());
  }
  return parse_config(std::string(bytes.begin(), bytes.end()));
}

namespace {

std::string sections_text(const RunConfig& cfg, std::span<const char* const> sections) {
  std::ostringstream os;
  for (const char* sec : sections) {
    os << "[" << sec << "]\n";
    for (const auto& k : keys())
      if (k.section == sec) os << k.key << " = " << k.get(cfg) << "\n";
    os << "\n";
  }
  return os.str();
}

}  // namespace

std::string config_to_text(const RunConfig& cfg) {
  return "preset = " + cfg.preset + "\n\n" + sections_text(cfg, kSections);
}

std::uint64_t architecture_hash(const RunConfig& cfg) {
  const auto text = sections_text(cfg, kArchitectureSections);
  return fnv1a(text.data(), text.size());
}

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

}  // namespace apseg
