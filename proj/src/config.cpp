#include "segattack/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

#include "segattack/error.hpp"

namespace segattack::config {
using nlohmann::json;

namespace {

class TomlParser {
 public:
  explicit TomlParser(std::string_view text) : s_(text) {}

  json parse() {
    json root = json::object();
    json* current = &root;
    std::set<std::string> defined_tables;
    while (true) {
      skip_blank_lines();
      if (eof()) break;
      if (peek() == '[') {
        ++pos_;
        const bool array = !eof() && peek() == '[';
        if (array) ++pos_;
        skip_space();
        const std::string name = key();
        skip_space();
        expect(']');
        if (array) expect(']');
        end_of_line();
        if (array) {
          json& slot = root[name];
          if (slot.is_null()) slot = json::array();
          if (!slot.is_array()) error("'" + name + "' is already a table");
          slot.push_back(json::object());
          current = &slot.back();
        } else {
          if (!defined_tables.insert(name).second) error("table [" + name + "] defined twice");
          json& slot = root[name];
          if (!slot.is_null()) error("'" + name + "' is already defined");
          slot = json::object();
          current = &slot;
        }
        continue;
      }
      const std::string k = key();
      skip_space();
      expect('=');
      skip_space();
      json v = value();
      end_of_line();
      if (current->contains(k)) error("duplicate key '" + k + "'");
      (*current)[k] = std::move(v);
    }
    return root;
  }

 private:
  [[noreturn]] void error(const std::string& msg) const {
    fail(ErrorKind::config, "TOML line " + std::to_string(line_) + ": " + msg);
  }

  bool eof() const { return pos_ >= s_.size(); }
  char peek() const { return s_[pos_]; }

  void expect(char c) {
    if (eof() || peek() != c) error(std::string("expected '") + c + "'");
    ++pos_;
  }

  void skip_space() {
    while (!eof() && (peek() == ' ' || peek() == '\t')) ++pos_;
  }

  void skip_comment() {
    if (!eof() && peek() == '#') {
      while (!eof() && peek() != '\n') ++pos_;
    }
  }

  void skip_blank_lines() {
    while (true) {
      skip_space();
      skip_comment();
      if (eof()) return;
      if (peek() == '\r') {
        ++pos_;
        continue;
      }
      if (peek() != '\n') return;
      ++pos_;
      ++line_;
    }
  }

  // Inside arrays newlines and comments are insignificant.
  void skip_array_space() { skip_blank_lines(); }

  void end_of_line() {
    skip_space();
    skip_comment();
    if (!eof() && peek() == '\r') ++pos_;
    if (eof()) return;
    if (peek() != '\n') error("unexpected text after value");
    ++pos_;
    ++line_;
  }

  std::string key() {
    if (!eof() && peek() == '"') return basic_string();
    if (!eof() && peek() == '\'') return literal_string();
    const std::size_t start = pos_;
    while (!eof() && (std::isalnum(static_cast<unsigned char>(peek())) || peek() == '_' || peek() == '-')) ++pos_;
    if (pos_ == start) error("expected a key");
    if (!eof() && peek() == '.') error("dotted keys are not supported");
    return std::string(s_.substr(start, pos_ - start));
  }

  std::string basic_string() {
    expect('"');
    std::string out;
    while (true) {
      if (eof() || peek() == '\n') error("unterminated string");
      const char c = s_[pos_++];
      if (c == '"') break;
      if (c != '\\') {
        out.push_back(c);
        continue;
      }
      if (eof()) error("unterminated escape");
      const char e = s_[pos_++];
      switch (e) {
        case 'n': out.push_back('\n'); break;
        case 't': out.push_back('\t'); break;
        case 'r': out.push_back('\r'); break;
        case '"': out.push_back('"'); break;
        case '\\': out.push_back('\\'); break;
        default: error(std::string("unsupported escape \\") + e);
      }
    }
    return out;
  }

  std::string literal_string() {
    expect('\'');
    const std::size_t start = pos_;
    while (!eof() && peek() != '\'' && peek() != '\n') ++pos_;
    if (eof() || peek() != '\'') error("unterminated string");
    std::string out(s_.substr(start, pos_ - start));
    ++pos_;
    return out;
  }

  json value() {
    if (eof()) error("missing value");
    const char c = peek();
    if (c == '"') return basic_string();
    if (c == '\'') return literal_string();
    if (c == '[') return array();
    if (s_.substr(pos_, 4) == "true") {
      pos_ += 4;
      return true;
    }
    if (s_.substr(pos_, 5) == "false") {
      pos_ += 5;
      return false;
    }
    if (c == '{') error("inline tables are not supported");
    return number();
  }

  json array() {
    expect('[');
    json out = json::array();
    while (true) {
      skip_array_space();
      if (eof()) error("unterminated array");
      if (peek() == ']') {
        ++pos_;
        return out;
      }
      json v = value();
      if (v.is_array()) error("nested arrays are not supported");
      out.push_back(std::move(v));
      skip_array_space();
      if (!eof() && peek() == ',') {
        ++pos_;
        continue;
      }
      skip_array_space();
      expect(']');
      return out;
    }
  }

  json number() {
    const std::size_t start = pos_;
    while (!eof() && (std::isalnum(static_cast<unsigned char>(peek())) || peek() == '+' || peek() == '-' ||
                      peek() == '.' || peek() == '_')) {
      ++pos_;
    }
    std::string text;
    for (char ch : s_.substr(start, pos_ - start)) {
      if (ch != '_') text.push_back(ch);
    }
    if (text.empty()) error("expected a value");
    const bool is_float = text.find_first_of(".eE") != std::string::npos;
    try {
      std::size_t used = 0;
      if (is_float) {
        const double d = std::stod(text, &used);
        if (used == text.size() && std::isfinite(d)) return d;
      } else {
        const long long i = std::stoll(text, &used, 10);
        if (used == text.size()) return i;
      }
    } catch (const std::exception&) {
    }
    error("invalid value '" + text + "'");
  }

  std::string_view s_;
  std::size_t pos_ = 0;
  int line_ = 1;
};

// Typed access with key tracking: every key read is marked; leftovers are
// unknown.
class Section {
 public:
  Section(const json& j, std::string name, std::vector<std::string>* defaulted)
      : j_(j), name_(std::move(name)), defaulted_(defaulted) {
    if (!j_.is_object()) fail(ErrorKind::config, "'" + name_ + "' must be a table");
  }

  bool has(const std::string& k) {
    seen_.insert(k);
    return j_.contains(k);
  }

  template <typename T>
  T get(const std::string& k, T fallback) {
    if (!has(k)) {
      if (defaulted_) defaulted_->push_back(path(k));
      return fallback;
    }
    return convert<T>(j_.at(k), k);
  }

  template <typename T>
  std::optional<T> optional(const std::string& k) {
    if (!has(k)) return std::nullopt;
    return convert<T>(j_.at(k), k);
  }

  const json& raw(const std::string& k) {
    seen_.insert(k);
    return j_.at(k);
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) fail(ErrorKind::config, "unknown key '" + path(k) + "'");
    }
  }

  std::string path(const std::string& k) const { return name_.empty() ? k : name_ + "." + k; }

 private:
  template <typename T>
  T convert(const json& v, const std::string& k) const {
    const auto bad = [&](const char* what) -> T {
      fail(ErrorKind::config, "'" + path(k) + "' must be " + what);
    };
    if constexpr (std::is_same_v<T, bool>) {
      return v.is_boolean() ? v.get<bool>() : bad("a boolean");
    } else if constexpr (std::is_same_v<T, std::string>) {
      return v.is_string() ? v.get<std::string>() : bad("a string");
    } else if constexpr (std::is_same_v<T, double>) {
      if (v.is_number()) return v.get<double>();
      if (v.is_string()) return parse_number(v.get<std::string>());
      return bad("a number");
    } else if constexpr (std::is_same_v<T, std::vector<std::string>>) {
      if (!v.is_array()) return bad("an array of strings");
      std::vector<std::string> out;
      for (const auto& e : v) {
        if (e.is_string()) {
          out.push_back(e.get<std::string>());
        } else if (e.is_number()) {
          out.push_back(e.dump());
        } else {
          return bad("an array of strings");
        }
      }
      return out;
    } else {
      static_assert(std::is_integral_v<T>);
      if (!v.is_number_integer()) return bad("an integer");
      const auto i = v.get<long long>();
      if constexpr (std::is_unsigned_v<T>) {
        if (i < 0) return bad("a nonnegative integer");
      }
      return static_cast<T>(i);
    }
  }

  const json& j_;
  std::string name_;
  std::vector<std::string>* defaulted_;
  std::set<std::string> seen_;
};

std::vector<ModelRef> model_list(Section& root, const std::string& key) {
  std::vector<ModelRef> out;
  if (!root.has(key)) return out;
  const json& arr = root.raw(key);
  if (!arr.is_array()) fail(ErrorKind::config, "'" + key + "' must be an array of tables ([[" + key + "]])");
  for (std::size_t i = 0; i < arr.size(); ++i) {
    Section s(arr[i], key + "[" + std::to_string(i) + "]", nullptr);
    ModelRef m;
    m.model_id = s.get<std::string>("model", "");
    if (m.model_id.empty()) fail(ErrorKind::config, "'" + s.path("model") + "' is required");
    if (auto w = s.optional<std::string>("weights")) m.weights = *w;
    s.finish();
    out.push_back(std::move(m));
  }
  return out;
}

json model_list_json(const std::vector<ModelRef>& list) {
  json out = json::array();
  for (const auto& m : list) {
    json e = {{"model", m.model_id}};
    if (m.weights) e["weights"] = m.weights->string();
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace

json parse_toml(std::string_view text) { return TomlParser(text).parse(); }

json read_toml(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::config, "cannot read config file " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  try {
    return parse_toml(buf.str());
  } catch (const Error& e) {
    fail(ErrorKind::config, path.string() + ": " + e.what());
  }
}

double parse_number(const std::string& text) {
  const auto one = [&](const std::string& t) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(t, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != t.size() || !std::isfinite(v)) fail(ErrorKind::config, "not a number: '" + text + "'");
    return v;
  };
  const auto slash = text.find('/');
  if (slash == std::string::npos) return one(text);
  const double den = one(text.substr(slash + 1));
  if (den == 0.0) fail(ErrorKind::config, "division by zero in '" + text + "'");
  return one(text.substr(0, slash)) / den;
}

ModelRef parse_model_ref(const std::string& text) {
  ModelRef m;
  const auto at = text.find('@');
  m.model_id = text.substr(0, at);
  if (at != std::string::npos) m.weights = text.substr(at + 1);
  if (m.model_id.empty()) fail(ErrorKind::config, "empty model id in '" + text + "'");
  return m;
}

evalx::AttackSpec attack_from_json(const json& table, std::uint64_t root_seed, bool* seed_explicit,
                                   std::vector<std::string>* defaulted, const std::string& prefix) {
  Section s(table, prefix, defaulted);
  evalx::AttackSpec a;
  a.name = s.get<std::string>("name", "fspgd");
  a.label = s.get<std::string>("label", a.name);
  attacker::AttackConfig& c = a.config;
  c.epsilon = s.get<double>("epsilon", c.epsilon);
  c.alpha = s.get<double>("alpha", c.alpha);
  c.iterations = s.get<int>("iterations", c.iterations);
  c.tau = s.get<double>("tau", c.tau);
  c.layer_id = s.get<std::string>("layer", c.layer_id);
  const auto seed = s.optional<std::uint64_t>("seed");
  if (seed_explicit != nullptr) *seed_explicit = seed.has_value();
  c.seed = seed.value_or(root_seed);
  if (!seed && defaulted) defaulted->push_back(s.path("seed"));
  c.loss_mode = attacker::LossMode::parse(s.get<std::string>("loss_mode", c.loss_mode.name()));
  c.pixel_clamp = s.get<bool>("pixel_clamp", c.pixel_clamp);
  c.tiling.dense_limit = s.get<std::size_t>("dense_limit", c.tiling.dense_limit);
  c.tiling.tile_rows = s.get<std::size_t>("tile_rows", c.tiling.tile_rows);
  s.finish();
  c.validate();
  return a;
}

void RunConfig::set_seed(std::uint64_t s) {
  seed = s;
  for (std::size_t i = 0; i < attacks.size(); ++i) {
    if (i >= attack_seed_explicit.size() || !attack_seed_explicit[i]) attacks[i].config.seed = s;
  }
}

RunConfig load_config(const json& doc) {
  RunConfig cfg;
  auto* d = &cfg.defaulted;
  static const json kNull = json::object();
  Section root(doc.is_null() ? kNull : doc, "", d);
  cfg.seed = root.get<std::uint64_t>("seed", cfg.seed);
  cfg.workers = root.get<int>("workers", cfg.workers);
  if (cfg.workers < 1) fail(ErrorKind::config, "'workers' must be >= 1");
  cfg.out = root.get<std::string>("out", cfg.out.string());

  const json& kEmpty = kNull;
  {
    Section s(root.has("data") ? root.raw("data") : kEmpty, "data", d);
    cfg.data_root = s.get<std::string>("root", "");
    cfg.data_limit = s.get<std::size_t>("limit", 0);
    cfg.data_format = s.get<std::string>("format", cfg.data_format);
    if (cfg.data_format != "manifest" && cfg.data_format != "voc") {
      fail(ErrorKind::config, "data.format must be \"manifest\" or \"voc\"");
    }
    s.finish();
  }
  cfg.sources = model_list(root, "sources");
  cfg.targets = model_list(root, "targets");
  if (root.has("attacks")) {
    const json& arr = root.raw("attacks");
    if (!arr.is_array()) fail(ErrorKind::config, "'attacks' must be an array of tables ([[attacks]])");
    for (std::size_t i = 0; i < arr.size(); ++i) {
      bool explicit_seed = false;
      cfg.attacks.push_back(
          attack_from_json(arr[i], cfg.seed, &explicit_seed, d, "attacks[" + std::to_string(i) + "]"));
      cfg.attack_seed_explicit.push_back(explicit_seed);
    }
  }
  {
    Section s(root.has("report") ? root.raw("report") : kEmpty, "report", d);
    cfg.report.quantized = s.get<bool>("quantized", cfg.report.quantized);
    cfg.report.save_images = s.get<bool>("save_images", cfg.report.save_images);
    cfg.report.save_traces = s.get<bool>("save_traces", cfg.report.save_traces);
    s.finish();
  }
  {
    Section s(root.has("sweep") ? root.raw("sweep") : kEmpty, "sweep", d);
    cfg.sweep.kind = s.get<std::string>("kind", "");
    cfg.sweep.grid = s.get<std::vector<std::string>>("grid", {});
    s.finish();
  }
  {
    Section s(root.has("simmap") ? root.raw("simmap") : kEmpty, "simmap", d);
    if (s.has("ref")) {
      const json& r = s.raw("ref");
      if (!r.is_array() || r.size() != 2 || !r[0].is_number_integer() || !r[1].is_number_integer()) {
        fail(ErrorKind::config, "'simmap.ref' must be [row, col]");
      }
      cfg.simmap.ref = std::make_pair(r[0].get<int>(), r[1].get<int>());
    }
    cfg.simmap.image = s.get<std::string>("image", "");
    cfg.simmap.scale = s.get<int>("scale", cfg.simmap.scale);
    cfg.simmap.limit = s.get<std::size_t>("limit", cfg.simmap.limit);
    if (cfg.simmap.scale < 1) fail(ErrorKind::config, "'simmap.scale' must be >= 1");
    s.finish();
  }
  {
    Section s(root.has("synth") ? root.raw("synth") : kEmpty, "synth", d);
    auto& y = cfg.synth;
    y.preset = s.get<std::string>("preset", y.preset);
    y.train_images = s.get<int>("train_images", y.train_images);
    y.eval_images = s.get<int>("eval_images", y.eval_images);
    y.height = s.get<int>("height", y.height);
    y.width = s.get<int>("width", y.width);
    y.min_radius = s.get<int>("min_radius", y.min_radius);
    y.max_radius = s.get<int>("max_radius", y.max_radius);
    y.color_jitter = s.get<double>("color_jitter", y.color_jitter);
    y.pixel_noise = s.get<double>("pixel_noise", y.pixel_noise);
    y.background_texture = s.get<double>("background_texture", y.background_texture);
    if (y.preset != "desk") fail(ErrorKind::config, "unknown synth preset '" + y.preset + "' (desk)");
    s.finish();
  }
  {
    Section s(root.has("train") ? root.raw("train") : kEmpty, "train", d);
    auto& t = cfg.train;
    t.models = s.get<std::vector<std::string>>("models", t.models);
    t.epochs = s.get<int>("epochs", t.epochs);
    t.learning_rate = s.get<double>("learning_rate", t.learning_rate);
    t.batch_size = s.get<int>("batch_size", t.batch_size);
    t.data = s.get<std::string>("data", t.data.string());
    t.eval = s.get<std::string>("eval", t.eval.string());
    t.out_dir = s.get<std::string>("out_dir", t.out_dir.string());
    s.finish();
  }
  root.finish();
  return cfg;
}

json RunConfig::to_json() const {
  json attacks_json = json::array();
  for (std::size_t i = 0; i < attacks.size(); ++i) {
    const auto& a = attacks[i];
    json e = evalx::to_json(a.config);
    e.erase("layer_id");
    e["layer"] = a.config.layer_id;
    e["name"] = a.name;
    e["label"] = a.label;
    attacks_json.push_back(std::move(e));
  }
  json simmap_json = {{"image", simmap.image}, {"scale", simmap.scale}, {"limit", simmap.limit}};
  if (simmap.ref) simmap_json["ref"] = {simmap.ref->first, simmap.ref->second};
  json doc = {
      {"seed", seed},
      {"workers", workers},
      {"out", out.string()},
      {"data", {{"root", data_root.string()}, {"limit", data_limit}, {"format", data_format}}},
      {"attacks", attacks_json},
      {"report",
       {{"quantized", report.quantized}, {"save_images", report.save_images}, {"save_traces", report.save_traces}}},
      {"sweep", {{"kind", sweep.kind}, {"grid", sweep.grid}}},
      {"simmap", simmap_json},
      {"synth",
       {{"preset", synth.preset},
        {"train_images", synth.train_images},
        {"eval_images", synth.eval_images},
        {"height", synth.height},
        {"width", synth.width},
        {"min_radius", synth.min_radius},
        {"max_radius", synth.max_radius},
        {"color_jitter", synth.color_jitter},
        {"pixel_noise", synth.pixel_noise},
        {"background_texture", synth.background_texture}}},
      {"train",
       {{"models", train.models},
        {"epochs", train.epochs},
        {"learning_rate", train.learning_rate},
        {"batch_size", train.batch_size},
        {"data", train.data.string()},
        {"eval", train.eval.string()},
        {"out_dir", train.out_dir.string()}}},
  };
  if (!sources.empty()) doc["sources"] = model_list_json(sources);
  if (!targets.empty()) doc["targets"] = model_list_json(targets);
  return doc;
}

}  // namespace segattack::config
