#include <charconv>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "mcnet/cli.hpp"

namespace mcnet::cli {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::size_t parse_size(const std::string& key, const std::string& v) {
  std::size_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size() || v.empty()) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

double parse_double(const std::string& key, const std::string& v) {
  double out = 0.0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc{} || p != v.data() + v.size() || v.empty()) {
    throw ConfigError(key + ": expected a number, got '" + v + "'");
  }
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::vector<std::size_t> parse_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_size(key, trim(item)));
  if (out.empty()) throw ConfigError(key + ": expected a comma-separated list");
  return out;
}

std::string show(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

template <typename Range>
std::string show_list(const Range& r) {
  std::string out;
  for (auto v : r) out += (out.empty() ? "" : ",") + std::to_string(v);
  return out;
}

struct Field {
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define SIZE_FIELD(key, member)                                                        \
  {key, {[](RunConfig& c, const std::string& v) { c.member = parse_size(key, v); },     \
         [](const RunConfig& c) { return std::to_string(c.member); }}}
#define DOUBLE_FIELD(key, member)                                                      \
  {key, {[](RunConfig& c, const std::string& v) { c.member = parse_double(key, v); },   \
         [](const RunConfig& c) { return show(c.member); }}}
#define LIST_FIELD(key, member)                                                        \
  {key, {[](RunConfig& c, const std::string& v) { c.member = parse_list(key, v); },     \
         [](const RunConfig& c) { return show_list(c.member); }}}

const std::vector<std::pair<std::string, Field>>& fields() {
  static const std::vector<std::pair<std::string, Field>> table = {
      {"preset",
       {[](RunConfig& c, const std::string& v) {
          TrainConfig::from_preset(v);
          c.train.preset = v;
        },
        [](const RunConfig& c) { return c.train.preset; }}},
      {"seed",
       {[](RunConfig& c, const std::string& v) {
          c.train.seed = parse_size("seed", v);
          c.model.seed = c.train.seed;
        },
        [](const RunConfig& c) { return std::to_string(c.train.seed); }}},
      SIZE_FIELD("n_context", train.n_context),
      SIZE_FIELD("t_train", train.t_train),
      SIZE_FIELD("batch", train.batch),
      SIZE_FIELD("iterations", train.iterations),
      DOUBLE_FIELD("lr", train.lr),
      DOUBLE_FIELD("beta1", train.beta1),
      DOUBLE_FIELD("beta2", train.beta2),
      DOUBLE_FIELD("eps", train.eps),
      DOUBLE_FIELD("alpha", train.loss.alpha),
      DOUBLE_FIELD("beta", train.loss.beta),
      DOUBLE_FIELD("p", train.loss.p),
      DOUBLE_FIELD("lambda", train.loss.lambda),
      {"normalization",
       {[](RunConfig& c, const std::string& v) {
          try {
            c.train.loss.normalization = normalization_from_string(v);
          } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string("normalization: ") + e.what());
          }
        },
        [](const RunConfig& c) { return to_string(c.train.loss.normalization); }}},
      SIZE_FIELD("checkpoint_interval", train.checkpoint_interval),
      SIZE_FIELD("disc_steps", train.disc_steps),
      DOUBLE_FIELD("ema_decay", train.ema_decay),
      {"arch",
       {[](RunConfig& c, const std::string& v) {
          try {
            c.model.arch = architecture_from_string(v);
          } catch (const std::invalid_argument& e) {
            throw ConfigError(std::string("arch: ") + e.what());
          }
        },
        [](const RunConfig& c) { return to_string(c.model.arch); }}},
      SIZE_FIELD("height", model.height),
      SIZE_FIELD("width", model.width),
      SIZE_FIELD("channels", model.channels),
      SIZE_FIELD("scales", model.scales),
      LIST_FIELD("content_widths", model.content_widths),
      LIST_FIELD("content_convs", model.content_convs),
      LIST_FIELD("motion_widths", model.motion_widths),
      LIST_FIELD("motion_kernels", model.motion_kernels),
      {"combination",
       {[](RunConfig& c, const std::string& v) {
          const auto l = parse_list("combination", v);
          if (l.size() != 3) throw ConfigError("combination: expected exactly 3 widths");
          c.model.combination = {l[0], l[1], l[2]};
        },
        [](const RunConfig& c) { return show_list(c.model.combination); }}},
      SIZE_FIELD("residual_convs", model.residual_convs),
      {"residual",
       {[](RunConfig& c, const std::string& v) { c.model.residual = parse_bool("residual", v); },
        [](const RunConfig& c) { return std::string(c.model.residual ? "true" : "false"); }}},
      SIZE_FIELD("lstm_kernel", model.lstm_kernel),
      {"unpool_position",
       {[](RunConfig& c, const std::string& v) {
          const std::size_t pos = parse_size("unpool_position", v);
          if (pos > 3) throw ConfigError("unpool_position: must be 0..3");
          c.model.unpool_position = static_cast<std::uint8_t>(pos);
        },
        [](const RunConfig& c) { return std::to_string(c.model.unpool_position); }}},
      LIST_FIELD("disc_widths", model.disc_widths),
      DOUBLE_FIELD("disc_slope", model.disc_slope),
  };
  return table;
}

#undef SIZE_FIELD
#undef DOUBLE_FIELD
#undef LIST_FIELD

const Field& field(const std::string& key) {
  for (const auto& [name, f] : fields()) {
    if (name == key) return f;
  }
  throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

std::vector<ConfigEntry> parse_config_text(const std::string& text, const std::string& origin) {
  std::vector<ConfigEntry> out;
  std::stringstream ss(text);
  std::string line;
  for (std::size_t n = 1; std::getline(ss, line); ++n) {
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = origin + ":" + std::to_string(n);
    if (eq == std::string::npos) throw ConfigError(where + ": expected 'key = value'");
    ConfigEntry e{trim(line.substr(0, eq)), trim(line.substr(eq + 1)), where};
    if (e.key.empty()) throw ConfigError(where + ": missing key");
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<ConfigEntry> read_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str(), path.string());
}

ConfigEntry parse_override(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos) throw ConfigError("--set " + text + ": expected key=value");
  ConfigEntry e{trim(text.substr(0, eq)), trim(text.substr(eq + 1)), "--set"};
  if (e.key.empty()) throw ConfigError("--set " + text + ": missing key");
  return e;
}

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& [name, f] : fields()) out.push_back(name);
    return out;
  }();
  return names;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  try {
    field(key).set(*this, value);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(key + ": " + e.what());
  }
}

std::string RunConfig::get(const std::string& key) const { return field(key).get(*this); }

std::string RunConfig::to_text() const {
  std::string out;
  for (const auto& [name, f] : fields()) out += name + " = " + f.get(*this) + "\n";
  return out;
}

RunConfig resolve_config(std::span<const ConfigEntry> entries) {
  RunConfig cfg;
  std::string preset = "custom";
  for (const auto& e : entries) {
    if (e.key == "preset") preset = e.value;
  }
  try {
    cfg.train = TrainConfig::from_preset(preset);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  for (const auto& e : entries) {
    if (e.key == "preset") continue;
    try {
      cfg.set(e.key, e.value);
    } catch (const ConfigError& err) {
      throw ConfigError(e.origin + ": " + err.what());
    }
  }
  try {
    cfg.model.validate();
    cfg.train.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(e.what());
  }
  return cfg;
}

}  // namespace mcnet::cli
