#include "c2f/config.hpp"

#include "c2f/util.hpp"

#include <cstdlib>
#include <fstream>
#include <functional>
#include <iomanip>
#include <map>
#include <sstream>

namespace c2f {

std::string to_string(SelectorKind k) {
  switch (k) {
    case SelectorKind::bow: return "bow";
    case SelectorKind::chunk: return "chunk";
    case SelectorKind::cnn: return "cnn";
  }
  return "?";
}

std::string to_string(SummaryMode m) { return m == SummaryMode::hard ? "hard" : "soft"; }

std::string to_string(Method m) {
  switch (m) {
    case Method::pipeline: return "pipeline";
    case Method::reinforce: return "reinforce";
    case Method::soft: return "soft";
    case Method::base: return "base";
  }
  return "?";
}

std::string to_string(RewardBaseline b) { return b == RewardBaseline::none ? "none" : "mean"; }

SelectorKind parse_selector_kind(const std::string& s) {
  if (s == "bow") return SelectorKind::bow;
  if (s == "chunk") return SelectorKind::chunk;
  if (s == "cnn") return SelectorKind::cnn;
  throw ConfigError("selector.kind must be one of bow, chunk, cnn (got '" + s + "')");
}

SummaryMode parse_summary_mode(const std::string& s) {
  if (s == "hard") return SummaryMode::hard;
  if (s == "soft") return SummaryMode::soft;
  throw ConfigError("summary.mode must be hard or soft (got '" + s + "')");
}

Method parse_method(const std::string& s) {
  if (s == "pipeline") return Method::pipeline;
  if (s == "reinforce") return Method::reinforce;
  if (s == "soft") return Method::soft;
  if (s == "base") return Method::base;
  throw ConfigError("train.method must be one of pipeline, reinforce, soft, base (got '" + s + "')");
}

RewardBaseline parse_baseline(const std::string& s) {
  if (s == "none") return RewardBaseline::none;
  if (s == "mean") return RewardBaseline::mean;
  throw ConfigError("reinforce.baseline must be none or mean (got '" + s + "')");
}

namespace {

enum class Kind { integer, real, boolean, text };

struct Field {
  Kind kind;
  std::function<nlohmann::json(const RunConfig&)> get;
  std::function<void(RunConfig&, const nlohmann::json&)> set;
};

template <class T>
Field int_field(T RunConfig::*m) {
  return {Kind::integer, [m](const RunConfig& c) { return nlohmann::json(c.*m); },
          [m](RunConfig& c, const nlohmann::json& v) { c.*m = v.get<T>(); }};
}

Field real_field(double RunConfig::*m) {
  return {Kind::real, [m](const RunConfig& c) { return nlohmann::json(c.*m); },
          [m](RunConfig& c, const nlohmann::json& v) { c.*m = v.get<double>(); }};
}

Field bool_field(bool RunConfig::*m) {
  return {Kind::boolean, [m](const RunConfig& c) { return nlohmann::json(c.*m); },
          [m](RunConfig& c, const nlohmann::json& v) { c.*m = v.get<bool>(); }};
}

template <class E>
Field enum_field(E RunConfig::*m, E (*parse)(const std::string&)) {
  return {Kind::text, [m](const RunConfig& c) { return nlohmann::json(to_string(c.*m)); },
          [m, parse](RunConfig& c, const nlohmann::json& v) { c.*m = parse(v.get<std::string>()); }};
}

const std::map<std::string, Field>& fields() {
  static const std::map<std::string, Field> table = {
      {"limits.sentences", int_field(&RunConfig::sentences)},
      {"limits.tokens", int_field(&RunConfig::tokens)},
      {"limits.title_append", bool_field(&RunConfig::title_append)},
      {"vocab.size", int_field(&RunConfig::vocab_size)},
      {"vocab.placeholders", int_field(&RunConfig::placeholders)},
      {"vocab.min_count", int_field(&RunConfig::min_count)},
      {"selector.kind", enum_field(&RunConfig::selector, &parse_selector_kind)},
      {"selector.hidden", int_field(&RunConfig::selector_hidden)},
      {"selector.chunk_size", int_field(&RunConfig::chunk_size)},
      {"selector.chunk_fixed_j", bool_field(&RunConfig::chunk_fixed_j)},
      {"selector.filters", int_field(&RunConfig::filters)},
      {"selector.width", int_field(&RunConfig::width)},
      {"summary.mode", enum_field(&RunConfig::summary, &parse_summary_mode)},
      {"summary.k", int_field(&RunConfig::k)},
      {"summary.rank_order", bool_field(&RunConfig::rank_order)},
      {"model.hidden", int_field(&RunConfig::hidden)},
      {"model.embed", int_field(&RunConfig::embed)},
      {"model.max_answer_len", int_field(&RunConfig::max_answer_len)},
      {"model.init_scale", real_field(&RunConfig::init_scale)},
      {"encoder.process_pads", bool_field(&RunConfig::process_pads)},
      {"base.tokens", int_field(&RunConfig::base_tokens)},
      {"train.method", enum_field(&RunConfig::method, &parse_method)},
      {"train.epochs", int_field(&RunConfig::epochs)},
      {"train.batch_size", int_field(&RunConfig::batch_size)},
      {"train.lr", real_field(&RunConfig::learning_rate)},
      {"train.clip", real_field(&RunConfig::clip_norm)},
      {"train.decay", real_field(&RunConfig::decay)},
      {"train.seed", int_field(&RunConfig::seed)},
      {"train.eval_train", bool_field(&RunConfig::eval_train)},
      {"reinforce.baseline", enum_field(&RunConfig::baseline, &parse_baseline)},
      {"bench.repetitions", int_field(&RunConfig::repetitions)},
  };
  return table;
}

const Field& field(const std::string& key) {
  auto it = fields().find(key);
  if (it == fields().end()) throw ConfigError("unknown config key '" + key + "'");
  return it->second;
}

void flatten(const nlohmann::json& obj, const std::string& prefix, std::vector<std::pair<std::string, nlohmann::json>>& out) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    const std::string key = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (it->is_object()) {
      flatten(*it, key, out);
    } else {
      out.emplace_back(key, *it);
    }
  }
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

}  // namespace

void RunConfig::set(const std::string& key, const nlohmann::json& value) {
  const Field& f = field(key);
  bool ok = false;
  switch (f.kind) {
    case Kind::integer: ok = value.is_number_integer(); break;
    case Kind::real: ok = value.is_number(); break;
    case Kind::boolean: ok = value.is_boolean(); break;
    case Kind::text: ok = value.is_string(); break;
  }
  if (!ok) throw ConfigError("config key '" + key + "' has the wrong type: " + value.dump());
  f.set(*this, value);
}

void RunConfig::set_string(const std::string& key, const std::string& text) {
  const Field& f = field(key);
  const std::string v = trim(text);
  try {
    switch (f.kind) {
      case Kind::integer: {
        std::size_t pos = 0;
        long long n = std::stoll(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        f.set(*this, nlohmann::json(n));
        break;
      }
      case Kind::real: {
        std::size_t pos = 0;
        double d = std::stod(v, &pos);
        if (pos != v.size()) throw std::invalid_argument(v);
        f.set(*this, nlohmann::json(d));
        break;
      }
      case Kind::boolean:
        if (v == "true" || v == "1") {
          f.set(*this, nlohmann::json(true));
        } else if (v == "false" || v == "0") {
          f.set(*this, nlohmann::json(false));
        } else {
          throw std::invalid_argument(v);
        }
        break;
      case Kind::text: f.set(*this, nlohmann::json(v)); break;
    }
  } catch (const ConfigError&) {
    throw;
  } catch (const std::exception&) {
    throw ConfigError("config key '" + key + "' cannot take value '" + v + "'");
  }
}

void RunConfig::merge(const nlohmann::json& obj) {
  if (!obj.is_object()) throw ConfigError("config must be a JSON object");
  std::vector<std::pair<std::string, nlohmann::json>> flat;
  flatten(obj, "", flat);
  for (const auto& [k, v] : flat) set(k, v);
}

void RunConfig::merge_environment() {
  for (const auto& key : keys()) {
    if (const char* v = std::getenv(env_name(key).c_str())) set_string(key, v);
  }
}

void RunConfig::merge_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  const std::string text = ss.str();
  const std::string head = trim(text);
  if (!head.empty() && head.front() == '{') {
    try {
      merge(nlohmann::json::parse(text));
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError("config file " + path + ": " + e.what());
    }
    return;
  }
  std::istringstream lines(text);
  std::string line;
  int n = 0;
  while (std::getline(lines, line)) {
    ++n;
    const std::string t = trim(line);
    if (t.empty() || t.front() == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("config file " + path + " line " + std::to_string(n) + ": expected key=value");
    }
    set_string(trim(t.substr(0, eq)), t.substr(eq + 1));
  }
}

void RunConfig::validate() const {
  auto require = [](bool ok, const std::string& msg) {
    if (!ok) throw ConfigError(msg);
  };
  require(sentences >= 1 && tokens >= 1, "limits must be positive");
  require(min_count >= 1, "vocab.min_count must be >= 1");
  require(placeholders >= 0 && vocab_size > 4 + placeholders, "vocab.size must exceed 4 + vocab.placeholders");
  require(selector_hidden >= 1 && chunk_size >= 1 && filters >= 1 && width >= 1, "selector sizes must be positive");
  require(k >= 1 && k <= 4, "summary.k must be in [1, 4]");
  require(hidden >= 1 && embed >= 1 && max_answer_len >= 1, "model sizes must be positive");
  require(init_scale > 0, "model.init_scale must be positive");
  require(base_tokens >= 1, "base.tokens must be positive");
  require(epochs >= 0 && batch_size >= 1, "train.epochs >= 0 and train.batch_size >= 1 required");
  require(learning_rate > 0 && clip_norm > 0, "train.lr and train.clip must be positive");
  require(decay >= 0.3 && decay <= 1.0, "train.decay must lie in [0.3, 1]");
  require(repetitions >= 5, "bench.repetitions must be at least 5");
  if (method == Method::soft) require(summary == SummaryMode::soft, "train.method=soft requires summary.mode=soft");
  if (method == Method::pipeline || method == Method::reinforce) {
    require(summary == SummaryMode::hard, "hard-attention methods require summary.mode=hard");
  }
}

nlohmann::json RunConfig::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [k, f] : fields()) j[k] = f.get(*this);
  return j;
}

std::uint64_t RunConfig::hash() const { return fnv1a(to_json().dump()); }

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

std::string RunConfig::hash_hex() const { return hex64(hash()); }

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> ks = [] {
    std::vector<std::string> out;
    for (const auto& [k, f] : fields()) out.push_back(k);
    return out;
  }();
  return ks;
}

std::string RunConfig::env_name(const std::string& key) {
  std::string out = "C2F_";
  for (char c : key) out.push_back(c == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(c))));
  return out;
}

}  // namespace c2f
