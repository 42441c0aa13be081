#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace mogo {

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// Flat `key = value` document with dotted namespaces. Unknown keys are
// rejected so typos fail loudly; the fully resolved document is echoed into
// every run directory.
class RunConfig {
 public:
  static const std::set<std::string>& known_keys() {
    static const std::set<std::string> keys = {
        "preset",
        // synthetic data
        "data.seed", "data.count", "data.dim", "data.fps", "data.frames_min", "data.frames_max",
        "data.distinct_captions",
        // tokenizer
        "rvq.num_layers", "rvq.codebook_size", "rvq.code_dim", "rvq.beta", "rvq.ema_decay",
        "rvq.reset_window", "rvq.reset_usage_threshold", "rvq.kernel", "rvq.res_blocks",
        "rvq.dropout", "rvq.input_dim", "rvq.hidden",
        // transformer
        "hct.d_model", "hct.num_layers", "hct.heads", "hct.depths", "hct.codebook_size",
        "hct.max_rel_distance", "hct.dropout", "hct.corruption_rate", "hct.text_seed",
        "hct.pnq_condition", "hct.ffn_mult",
        // training
        "train.seed", "train.rvq_steps", "train.rvq_lr", "train.rvq_batch", "train.rvq_crop",
        "train.hct_steps", "train.hct_lr_max", "train.hct_lr_min", "train.hct_batch",
        "train.val_interval", "train.fid_interval", "train.fid_samples", "train.grad_clip",
        "train.adam_beta1", "train.adam_beta2", "train.adam_eps", "train.weight_decay",
        // generation
        "gen.policy", "gen.top_k", "gen.temperature", "gen.seed", "gen.frames", "gen.gateway",
        "gen.prompt_text",
        // gateway
        "gateway.tables", "gateway.verbose",
        // evaluation
        "eval.extractor", "eval.mmodality_repeats",
        // bookkeeping written by training runs
        "run.stage", "run.step", "run.best_val", "run.rng_state", "run.tokenizer_hash",
    };
    return keys;
  }

  // Desk preset: trains in minutes on one core. Paper preset: the published
  // hyperparameters, kept constructible and configurable.
  static RunConfig preset(const std::string& name) {
    RunConfig c;
    c.set("preset", name);
    c.set("data.seed", "1"); c.set("data.count", "120"); c.set("data.dim", "16");
    c.set("data.fps", "20"); c.set("data.frames_min", "40"); c.set("data.frames_max", "196");
    c.set("data.distinct_captions", "false");
    c.set("rvq.beta", "0.02"); c.set("rvq.ema_decay", "0.99");
    c.set("rvq.reset_window", "256"); c.set("rvq.reset_usage_threshold", "1");
    c.set("rvq.kernel", "3"); c.set("rvq.res_blocks", "2"); c.set("rvq.dropout", "0.2");
    c.set("rvq.input_dim", "16"); c.set("rvq.hidden", "0");
    c.set("hct.max_rel_distance", "512"); c.set("hct.dropout", "0");
    c.set("hct.corruption_rate", "0.5"); c.set("hct.text_seed", "2024");
    c.set("hct.pnq_condition", "true"); c.set("hct.ffn_mult", "4");
    c.set("train.seed", "7"); c.set("train.val_interval", "100");
    c.set("train.fid_interval", "500"); c.set("train.fid_samples", "8");
    c.set("train.grad_clip", "1.0");
    c.set("train.adam_beta1", "0.9"); c.set("train.adam_beta2", "0.99");
    c.set("train.adam_eps", "1e-8"); c.set("train.weight_decay", "1e-4");
    c.set("train.rvq_lr", "2e-4"); c.set("train.rvq_steps", "2000");
    c.set("train.hct_lr_max", "2.5e-5"); c.set("train.hct_lr_min", "3e-6");
    c.set("gen.policy", "greedy"); c.set("gen.top_k", "10"); c.set("gen.temperature", "1.0");
    c.set("gen.seed", "7"); c.set("gen.frames", "60"); c.set("gen.gateway", "false");
    c.set("gateway.tables", ""); c.set("gateway.verbose", "false");
    c.set("eval.extractor", "identity-pool"); c.set("eval.mmodality_repeats", "4");
    if (name == "desk") {
      c.set("rvq.num_layers", "3"); c.set("rvq.codebook_size", "256"); c.set("rvq.code_dim", "32");
      c.set("hct.d_model", "64"); c.set("hct.num_layers", "3");
      c.set("hct.heads", "4,2,2"); c.set("hct.depths", "4,2,2");
      c.set("hct.codebook_size", "256");
      c.set("train.rvq_batch", "64"); c.set("train.rvq_crop", "32");
      c.set("train.hct_steps", "2000"); c.set("train.hct_batch", "16");
    } else if (name == "paper") {
      c.set("rvq.num_layers", "6"); c.set("rvq.codebook_size", "8192");
      c.set("rvq.code_dim", "128");
      c.set("hct.d_model", "1024"); c.set("hct.num_layers", "6");
      c.set("hct.heads", "16,12,6,2,2,2"); c.set("hct.depths", "18,16,8,4,2,2");
      c.set("hct.codebook_size", "8192");
      c.set("train.rvq_batch", "512"); c.set("train.rvq_crop", "64");
      c.set("train.hct_steps", "800000"); c.set("train.hct_batch", "32");
    } else {
      throw ConfigError("unknown preset '" + name + "' (expected desk or paper)");
    }
    return c;
  }

  void set(const std::string& key, const std::string& value) {
    if (!known_keys().count(key)) throw ConfigError("unknown config key '" + key + "'");
    entries_[key] = value;
  }

  bool has(const std::string& key) const { return entries_.count(key) > 0; }

  const std::string& get(const std::string& key) const {
    auto it = entries_.find(key);
    if (it == entries_.end()) throw ConfigError("config key '" + key + "' is not set");
    return it->second;
  }

  std::string get_or(const std::string& key, const std::string& fallback) const {
    auto it = entries_.find(key);
    return it == entries_.end() ? fallback : it->second;
  }

  int64_t get_int(const std::string& key) const {
    try {
      size_t pos = 0;
      const int64_t v = std::stoll(get(key), &pos);
      if (pos != get(key).size()) throw std::invalid_argument("trailing characters");
      return v;
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key + "' is not an integer: '" + get(key) + "'");
    }
  }

  double get_float(const std::string& key) const {
    try {
      size_t pos = 0;
      const double v = std::stod(get(key), &pos);
      if (pos != get(key).size()) throw std::invalid_argument("trailing characters");
      return v;
    } catch (const ConfigError&) {
      throw;
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key + "' is not a number: '" + get(key) + "'");
    }
  }

  bool get_bool(const std::string& key) const {
    const std::string& v = get(key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("config key '" + key + "' is not a boolean: '" + v + "'");
  }

  std::vector<int> get_int_list(const std::string& key) const {
    std::vector<int> out;
    std::stringstream ss(get(key));
    std::string part;
    while (std::getline(ss, part, ',')) {
      try {
        out.push_back(std::stoi(part));
      } catch (const std::exception&) {
        throw ConfigError("config key '" + key + "' is not an integer list: '" + get(key) + "'");
      }
    }
    if (out.empty()) throw ConfigError("config key '" + key + "' is an empty list");
    return out;
  }

  // Parses `key = value` lines; '#' starts a comment; blank lines ignored.
  void parse_text(const std::string& text) {
    std::istringstream is(text);
    std::string line;
    int line_no = 0;
    while (std::getline(is, line)) {
      ++line_no;
      const size_t hash = line.find('#');
      if (hash != std::string::npos) line.erase(hash);
      const auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        const auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
      };
      line = trim(line);
      if (line.empty()) continue;
      const size_t eq = line.find('=');
      if (eq == std::string::npos) {
        throw ConfigError("config line " + std::to_string(line_no) + " is not 'key = value'");
      }
      const std::string key = trim(line.substr(0, eq));
      const std::string value = trim(line.substr(eq + 1));
      set(key, value);
    }
  }

  void parse_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("cannot open config file: " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    parse_text(ss.str());
  }

  std::string to_text() const {
    std::ostringstream os;
    for (const auto& [k, v] : entries_) os << k << " = " << v << "\n";
    return os.str();
  }

  void save(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw ConfigError("cannot write config file: " + path);
    os << to_text();
  }

  const std::map<std::string, std::string>& entries() const { return entries_; }

 private:
  std::map<std::string, std::string> entries_;
};

}  // namespace mogo
