#pragma once

#include <cctype>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <istream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "samsa/model.hpp"
#include "samsa/tasks.hpp"
#include "samsa/train.hpp"

// Run configuration: defaults < config file < SAMSA_* environment < flags.
//
// File format, one `key = value` per line under section headers:
//
//   [task]
//   kind = seq-select
//   n = 256
//   [train]
//   lr = 0.001
//
// '#' starts a comment. Keys are addressed as section.key everywhere; the
// environment form is SAMSA_SECTION_KEY (e.g. SAMSA_TRAIN_LR).
namespace samsa {

class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string key, const std::string& msg)
      : std::runtime_error(msg), key_(std::move(key)) {}
  const std::string& key() const { return key_; }

 private:
  std::string key_;
};

struct RunConfig {
  tasks::TaskSpec task;
  ModelConfig model;
  TrainConfig train;
  std::uint64_t seed = 0;
  int precision = 32;
  std::string out_dir = "runs/default";
  std::string data_cache;  // empty = no dataset cache
  bool graph_pe_noise_at_eval = true;

  RunConfig() {
    train.steps = 800;
    train.warmup = 100;
    train.length_warmup = 600;
    train.min_length = 16;
  }
};

namespace config_detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

inline std::size_t to_size(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  unsigned long long out = 0;
  try {
    if (!v.empty() && v[0] == '-') throw std::invalid_argument(v);
    out = std::stoull(v, &pos);
  } catch (const std::exception&) {
    throw ConfigError(key, "config key '" + key + "': expected a non-negative integer, got '" + v + "'");
  }
  if (pos != v.size()) throw ConfigError(key, "config key '" + key + "': trailing characters in '" + v + "'");
  return static_cast<std::size_t>(out);
}

inline double to_double(const std::string& key, const std::string& v) {
  std::size_t pos = 0;
  double out = 0;
  try {
    out = std::stod(v, &pos);
  } catch (const std::exception&) {
    throw ConfigError(key, "config key '" + key + "': expected a number, got '" + v + "'");
  }
  if (pos != v.size()) throw ConfigError(key, "config key '" + key + "': trailing characters in '" + v + "'");
  return out;
}

inline bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "on") return true;
  if (v == "false" || v == "0" || v == "off") return false;
  throw ConfigError(key, "config key '" + key + "': expected true/false, got '" + v + "'");
}

inline std::string fmt(double v) {
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

struct Key {
  std::string name;
  std::string help;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

#define SAMSA_SIZE_KEY(NAME, FIELD, HELP)                                              \
  Key {                                                                                \
    NAME, HELP, [](RunConfig& c, const std::string& v) { c.FIELD = to_size(NAME, v); }, \
        [](const RunConfig& c) { return std::to_string(c.FIELD); }                     \
  }
#define SAMSA_REAL_KEY(NAME, FIELD, HELP)                                                \
  Key {                                                                                  \
    NAME, HELP, [](RunConfig& c, const std::string& v) { c.FIELD = to_double(NAME, v); }, \
        [](const RunConfig& c) { return fmt(c.FIELD); }                                   \
  }

inline const std::vector<Key>& keys() {
  static const std::vector<Key> table = {
      {"task.kind", "seq-select | seq-listops-lite | graph-degree | cloud-centroid",
       [](RunConfig& c, const std::string& v) {
         try {
           c.task.kind = tasks::parse_task(v);
         } catch (const std::exception&) {
           throw ConfigError("task.kind", "config key 'task.kind': unknown task '" + v + "'");
         }
       },
       [](const RunConfig& c) { return std::string(tasks::task_name(c.task.kind)); }},
      SAMSA_SIZE_KEY("task.n", task.n, "tokens / max nodes / points per example"),
      SAMSA_SIZE_KEY("task.vocab", task.vocab, "seq-select class count"),
      SAMSA_SIZE_KEY("task.n_train", task.n_train, "training examples"),
      SAMSA_SIZE_KEY("task.n_val", task.n_val, "validation examples"),
      SAMSA_SIZE_KEY("task.n_test", task.n_test, "test examples"),
      {"model.kind", "samsa | full",
       [](RunConfig& c, const std::string& v) {
         if (v == "samsa") c.model.kind = AttentionKind::samsa;
         else if (v == "full") c.model.kind = AttentionKind::full;
         else throw ConfigError("model.kind", "config key 'model.kind': expected samsa|full, got '" + v + "'");
       },
       [](const RunConfig& c) { return std::string(c.model.kind == AttentionKind::full ? "full" : "samsa"); }},
      {"model.mode", "hard | soft sampler",
       [](RunConfig& c, const std::string& v) {
         if (v == "hard") c.model.attention.mode = SampleMode::hard;
         else if (v == "soft") c.model.attention.mode = SampleMode::soft;
         else throw ConfigError("model.mode", "config key 'model.mode': expected hard|soft, got '" + v + "'");
       },
       [](const RunConfig& c) {
         return std::string(c.model.attention.mode == SampleMode::hard ? "hard" : "soft");
       }},
      {"model.locality", "truncated | full comparison set",
       [](RunConfig& c, const std::string& v) {
         if (v == "truncated") c.model.attention.locality = Locality::truncated;
         else if (v == "full") c.model.attention.locality = Locality::full;
         else
           throw ConfigError("model.locality",
                             "config key 'model.locality': expected truncated|full, got '" + v + "'");
       },
       [](const RunConfig& c) {
         return std::string(c.model.attention.locality == Locality::truncated ? "truncated" : "full");
       }},
      SAMSA_SIZE_KEY("model.d_model", model.attention.d_model, "token width d"),
      SAMSA_SIZE_KEY("model.n_heads", model.attention.n_heads, "attention heads h"),
      SAMSA_SIZE_KEY("model.k", model.attention.k, "tokens sampled per head"),
      SAMSA_SIZE_KEY("model.d_ffn", model.attention.d_ffn, "feed-forward width"),
      SAMSA_SIZE_KEY("model.n_depth", model.n_depth, "layers"),
      SAMSA_REAL_KEY("model.tau", model.attention.tau, "relaxation temperature"),
      SAMSA_REAL_KEY("model.p_dropout", model.attention.p_dropout, "dropout probability"),
      SAMSA_REAL_KEY("model.p_droppath", model.attention.p_droppath, "drop-path probability"),
      SAMSA_SIZE_KEY("train.steps", train.steps, "optimizer steps"),
      SAMSA_SIZE_KEY("train.batch", train.batch, "examples per step"),
      SAMSA_REAL_KEY("train.lr", train.lr, "peak learning rate"),
      SAMSA_SIZE_KEY("train.warmup", train.warmup, "linear warmup steps"),
      SAMSA_REAL_KEY("train.weight_decay", train.weight_decay, "AdamW decoupled weight decay"),
      SAMSA_REAL_KEY("train.clip_norm", train.clip_norm, "global gradient-norm clip"),
      SAMSA_SIZE_KEY("train.eval_every", train.eval_every, "steps between validations (0 = end only)"),
      SAMSA_SIZE_KEY("train.eval_samples", train.eval_samples, "validation examples per eval (0 = all)"),
      SAMSA_SIZE_KEY("train.length_warmup", train.length_warmup, "seq-select crop warmup steps (0 = off)"),
      SAMSA_SIZE_KEY("train.min_length", train.min_length, "first crop length"),
      {"run.seed", "seed for data, init, noise and ordering",
       [](RunConfig& c, const std::string& v) { c.seed = to_size("run.seed", v); },
       [](const RunConfig& c) { return std::to_string(c.seed); }},
      {"run.precision", "32 | 64",
       [](RunConfig& c, const std::string& v) {
         if (v == "32") c.precision = 32;
         else if (v == "64") c.precision = 64;
         else throw ConfigError("run.precision", "config key 'run.precision': expected 32|64, got '" + v + "'");
       },
       [](const RunConfig& c) { return std::to_string(c.precision); }},
      {"run.out_dir", "output directory",
       [](RunConfig& c, const std::string& v) { c.out_dir = v; },
       [](const RunConfig& c) { return c.out_dir; }},
      {"run.data_cache", "dataset cache directory (empty = none)",
       [](RunConfig& c, const std::string& v) { c.data_cache = v; },
       [](const RunConfig& c) { return c.data_cache; }},
      {"run.graph_pe_noise_at_eval", "draw graph PE noise at evaluation",
       [](RunConfig& c, const std::string& v) { c.graph_pe_noise_at_eval = to_bool("run.graph_pe_noise_at_eval", v); },
       [](const RunConfig& c) { return std::string(c.graph_pe_noise_at_eval ? "true" : "false"); }},
  };
  return table;
}

#undef SAMSA_SIZE_KEY
#undef SAMSA_REAL_KEY

}  // namespace config_detail

inline std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const auto& k : config_detail::keys()) out.push_back(k.name);
  return out;
}

inline std::string config_help() {
  std::string out = "Config keys (file section.key, env SAMSA_SECTION_KEY):\n";
  for (const auto& k : config_detail::keys()) out += "  " + k.name + "  " + k.help + "\n";
  return out;
}

inline void set_config(RunConfig& c, const std::string& key, const std::string& value) {
  for (const auto& k : config_detail::keys())
    if (k.name == key) return k.set(c, config_detail::trim(value));
  throw ConfigError(key, "unknown config key '" + key + "'");
}

inline std::string get_config(const RunConfig& c, const std::string& key) {
  for (const auto& k : config_detail::keys())
    if (k.name == key) return k.get(c);
  throw ConfigError(key, "unknown config key '" + key + "'");
}

inline void apply_config_stream(RunConfig& c, std::istream& in) {
  std::string line, section;
  while (std::getline(in, line)) {
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = config_detail::trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(line, "malformed section header '" + line + "'");
      section = config_detail::trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(line, "expected key = value, got '" + line + "'");
    const auto key = config_detail::trim(line.substr(0, eq));
    set_config(c, section.empty() ? key : section + "." + key, line.substr(eq + 1));
  }
}

inline void apply_config_file(RunConfig& c, const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path, "cannot read config file '" + path + "'");
  apply_config_stream(c, in);
}

inline std::string env_name(const std::string& key) {
  std::string out = "SAMSA_";
  for (char ch : key) out += ch == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
  return out;
}

inline void apply_config_env(RunConfig& c) {
  for (const auto& k : config_detail::keys())
    if (const char* v = std::getenv(env_name(k.name).c_str())) k.set(c, config_detail::trim(v));
}

// Section-grouped text that apply_config_stream reads back to the same config.
inline std::string config_to_text(const RunConfig& c) {
  std::string out, section;
  for (const auto& k : config_detail::keys()) {
    const auto dot = k.name.find('.');
    const auto sec = k.name.substr(0, dot);
    if (sec != section) {
      out += (section.empty() ? "[" : "\n[") + sec + "]\n";
      section = sec;
    }
    out += k.name.substr(dot + 1) + " = " + k.get(c) + "\n";
  }
  return out;
}

inline nlohmann::json config_to_json(const RunConfig& c) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& k : config_detail::keys()) j[k.name] = k.get(c);
  return j;
}

// Spec of the dataset a run uses; the data seed follows the run seed.
inline tasks::TaskSpec effective_task(const RunConfig& c) {
  auto t = c.task;
  t.seed = c.seed;
  return t;
}

inline TrainConfig effective_train(const RunConfig& c) {
  auto t = c.train;
  t.seed = c.seed;
  return t;
}

inline void validate_config(const RunConfig& c) {
  try {
    c.model.attention.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError("model", e.what());
  }
  if (c.train.batch == 0) throw ConfigError("train.batch", "config key 'train.batch' must be >= 1");
  if (c.train.steps == 0) throw ConfigError("train.steps", "config key 'train.steps' must be >= 1");
  if (c.train.warmup >= c.train.steps)
    throw ConfigError("train.warmup", "config key 'train.warmup' must be < train.steps");
  if (c.task.n == 0) throw ConfigError("task.n", "config key 'task.n' must be >= 1");
}

}  // namespace samsa
