#pragma once

#include <cctype>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "mogo/text_embed.hpp"

#include "httplib.h"
#include "json.hpp"

namespace mogo {

// Editable prompt-gateway data: LLM system prompt templates, the dataset
// style examples spliced into them, the fallback keyword list and the
// keyword -> limb-level rewrite templates. Ships as data/gateway.json; the
// builtin copy keeps the gateway usable without a data path.
struct GatewayTables {
  std::string determine_system_template;  // contains {examples}
  std::string rewrite_system_template;    // contains {examples}
  std::vector<std::string> style_examples;
  std::vector<std::string> keywords;
  std::map<std::string, std::string> rewrites;  // keyword -> template with {subject}
  std::vector<std::string> banned_objects;

  static GatewayTables builtin();

  static GatewayTables load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open gateway tables: " + path);
    nlohmann::json j;
    is >> j;
    GatewayTables t;
    t.determine_system_template = j.at("determine_system_template").get<std::string>();
    t.rewrite_system_template = j.at("rewrite_system_template").get<std::string>();
    for (const auto& e : j.at("style_examples")) t.style_examples.push_back(e.get<std::string>());
    for (const auto& e : j.at("keywords")) t.keywords.push_back(e.get<std::string>());
    for (const auto& [k, v] : j.at("rewrites").items()) t.rewrites[k] = v.get<std::string>();
    for (const auto& e : j.at("banned_objects")) t.banned_objects.push_back(e.get<std::string>());
    return t;
  }

  std::string compose(const std::string& tmpl) const {
    std::string examples;
    for (const auto& e : style_examples) {
      examples += e;
      examples += '\n';
    }
    if (!examples.empty()) examples.pop_back();
    std::string out = tmpl;
    const size_t pos = out.find("{examples}");
    if (pos != std::string::npos) out.replace(pos, 10, examples);
    return out;
  }
};

struct GatewayConfig {
  std::string endpoint;  // e.g. http://host:port or http://host:port/custom/path
  std::string api_key;
  std::string model = "glm-4";
  bool verbose = false;
  int timeout_seconds = 10;

  static GatewayConfig from_env() {
    GatewayConfig c;
    if (const char* e = std::getenv("MOGO_LLM_ENDPOINT")) c.endpoint = e;
    if (const char* k = std::getenv("MOGO_LLM_KEY")) c.api_key = k;
    if (const char* m = std::getenv("MOGO_LLM_MODEL")) c.model = m;
    return c;
  }
};

struct PromptDecision {
  bool needs_rewrite = false;
  std::string rewritten_text;  // set iff needs_rewrite
  std::string backend_used;    // "external" | "fallback"
  std::string warning;
};

// Checks the one-sentence / <= 25 words / no object nouns contract on a
// candidate rewrite.
inline bool validate_rewrite(const std::string& text, const std::vector<std::string>& banned) {
  if (text.empty()) return false;
  if (text.find('\n') != std::string::npos) return false;
  int words = 0;
  bool in_word = false;
  int terminators = 0;
  for (size_t i = 0; i < text.size(); ++i) {
    const char ch = text[i];
    if (std::isspace(static_cast<unsigned char>(ch))) {
      in_word = false;
    } else {
      if (!in_word) ++words;
      in_word = true;
    }
    if (ch == '.' || ch == '!' || ch == '?') {
      const bool at_end = text.find_first_not_of(" \t", i + 1) == std::string::npos;
      if (!at_end) ++terminators;
    }
  }
  if (words == 0 || words > 25) return false;
  if (terminators > 0) return false;
  const auto tokens = tokenize_text(text);
  for (const auto& tok : tokens) {
    for (const auto& b : banned) {
      if (tok == b) return false;
    }
  }
  return true;
}

class PromptGateway {
 public:
  explicit PromptGateway(GatewayTables tables = GatewayTables::builtin(),
                         GatewayConfig config = GatewayConfig::from_env())
      : tables_(std::move(tables)), cfg_(std::move(config)) {}

  const GatewayTables& tables() const { return tables_; }
  bool has_external_backend() const { return !cfg_.endpoint.empty(); }

  // determine phase: does the prompt need rephrasing toward the dataset
  // style? External LLM when configured, keyword/script heuristic otherwise.
  bool determine(const std::string& prompt, std::string* backend_used = nullptr) {
    if (has_external_backend()) {
      std::string reply;
      if (chat(tables_.compose(tables_.determine_system_template), prompt, &reply)) {
        if (backend_used) *backend_used = "external";
        const std::string lowered = lower(trim(reply));
        if (lowered.rfind("no", 0) == 0) return false;
        // "yes" or anything unparseable is treated as yes
        return true;
      }
    }
    if (backend_used) *backend_used = "fallback";
    return fallback_determine(prompt);
  }

  // rewrite phase; call after determine said yes.
  PromptDecision rewrite(const std::string& prompt) {
    PromptDecision d;
    d.needs_rewrite = true;
    if (has_external_backend()) {
      const std::string system = tables_.compose(tables_.rewrite_system_template);
      for (int attempt = 0; attempt < 2; ++attempt) {
        std::string reply;
        if (!chat(system, prompt, &reply)) break;
        const std::string candidate = trim(reply);
        if (validate_rewrite(candidate, tables_.banned_objects)) {
          d.rewritten_text = candidate;
          d.backend_used = "external";
          return d;
        }
      }
    }
    d.backend_used = "fallback";
    std::string out;
    if (fallback_rewrite(prompt, &out) && validate_rewrite(out, tables_.banned_objects)) {
      d.rewritten_text = out;
      return d;
    }
    d.needs_rewrite = false;
    d.rewritten_text.clear();
    d.warning = "no valid rewrite available; keeping the original prompt";
    return d;
  }

  // Full gateway pass: determine, then rewrite when needed.
  PromptDecision process(const std::string& prompt) {
    std::string backend;
    const bool needs = determine(prompt, &backend);
    if (!needs) {
      PromptDecision d;
      d.needs_rewrite = false;
      d.backend_used = backend;
      return d;
    }
    return rewrite(prompt);
  }

  bool fallback_determine(const std::string& prompt) const {
    const auto tokens = tokenize_text(prompt);
    for (const auto& tok : tokens) {
      for (const auto& kw : tables_.keywords) {
        if (tok == kw) return true;
      }
    }
    // not English-alphabet dominant -> rewrite
    int alpha = 0, other = 0;
    for (unsigned char ch : prompt) {
      if (std::isspace(ch) || std::ispunct(ch) || std::isdigit(ch)) continue;
      if (std::isalpha(ch)) {
        ++alpha;
      } else {
        ++other;
      }
    }
    return other > alpha;
  }

  bool fallback_rewrite(const std::string& prompt, std::string* out) const {
    const auto tokens = tokenize_text(prompt);
    for (const auto& tok : tokens) {
      auto it = tables_.rewrites.find(tok);
      if (it == tables_.rewrites.end()) continue;
      std::string text = it->second;
      const size_t pos = text.find("{subject}");
      if (pos != std::string::npos) text.replace(pos, 9, detect_subject(prompt));
      *out = text;
      return true;
    }
    return false;
  }

  static std::string detect_subject(const std::string& prompt) {
    const std::string lowered = lower(prompt);
    for (const char* subj : {"a man", "a woman", "a person", "the man", "the woman",
                             "the person", "a figure"}) {
      if (lowered.rfind(subj, 0) == 0) return subj;
    }
    return "a person";
  }

 private:
  static std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n\"");
    const auto e = s.find_last_not_of(" \t\r\n\"");
    return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
  }

  static std::string lower(std::string s) {
    for (auto& ch : s) ch = static_cast<char>(std::tolower(static_cast<unsigned char>(ch)));
    return s;
  }

  // One chat-completions round trip (system + user, temperature 0). Returns
  // false on any transport/shape failure so callers can fall back.
  bool chat(const std::string& system, const std::string& user, std::string* reply) {
    std::string host_base, path;
    if (!split_endpoint(cfg_.endpoint, &host_base, &path)) {
      log("gateway: cannot parse endpoint URL");
      return false;
    }
    nlohmann::json body = {
        {"model", cfg_.model},
        {"temperature", 0},
        {"messages",
         {{{"role", "system"}, {"content", system}}, {{"role", "user"}, {"content", user}}}},
    };
    httplib::Client client(host_base);
    client.set_connection_timeout(cfg_.timeout_seconds);
    client.set_read_timeout(cfg_.timeout_seconds);
    httplib::Headers headers;
    if (!cfg_.api_key.empty()) headers.emplace("Authorization", "Bearer " + cfg_.api_key);
    const std::string payload = body.dump();
    log("gateway: POST " + host_base + path + " body=" + payload);
    auto res = client.Post(path, headers, payload, "application/json");
    if (!res) {
      log("gateway: request failed (unreachable endpoint)");
      return false;
    }
    log("gateway: status " + std::to_string(res->status) + " body=" + res->body);
    if (res->status != 200) return false;
    try {
      const nlohmann::json j = nlohmann::json::parse(res->body);
      *reply = j.at("choices").at(0).at("message").at("content").get<std::string>();
      return true;
    } catch (const nlohmann::json::exception&) {
      log("gateway: malformed response body");
      return false;
    }
  }

  static bool split_endpoint(const std::string& url, std::string* base, std::string* path) {
    const size_t scheme = url.find("://");
    if (scheme == std::string::npos) return false;
    const size_t path_start = url.find('/', scheme + 3);
    if (path_start == std::string::npos) {
      *base = url;
      *path = "/v1/chat/completions";
    } else {
      *base = url.substr(0, path_start);
      *path = url.substr(path_start);
      if (path->empty() || *path == "/") *path = "/v1/chat/completions";
    }
    return true;
  }

  void log(const std::string& msg) const {
    if (!cfg_.verbose) return;
    // never leak the bearer token into logs
    std::string redacted = msg;
    if (!cfg_.api_key.empty()) {
      size_t pos;
      while ((pos = redacted.find(cfg_.api_key)) != std::string::npos) {
        redacted.replace(pos, cfg_.api_key.size(), "[redacted]");
      }
    }
    std::fprintf(stderr, "%s\n", redacted.c_str());
  }

  GatewayTables tables_;
  GatewayConfig cfg_;
};

inline GatewayTables GatewayTables::builtin() {
  GatewayTables t;
  t.determine_system_template =
      "You are now an expert in human motion machine learning. Your task is to determine "
      "prompts for a model trained on the HumanML3D dataset, which generates motion sequences "
      "from text. I will provide you with some training set prompt examples. Please use these "
      "examples to determine whether the user's input needs to be rephrased to better match the "
      "dataset's description style. Simply respond with yes or no.\nExamples:\n{examples}";
  t.rewrite_system_template =
      "You are now an expert in human behavior machine learning. You need to write prompts for "
      "a model trained on the HumanML3D dataset that generates motion sequences from text. You "
      "need to describe abstract actions directly in English as concrete movements, specifying "
      "detailed limb movements and directions. Please output the detailed description directly, "
      "limited to one sentence and within 25 words. Do not include interactions with specific "
      "objects, only describe human movements. If the input prompt is already a concrete motion "
      "description and in English, please return the original input prompt without "
      "modification. As a reference, the original dataset contains only everyday actions, "
      "boxing actions, and street dance types.\nExamples from the training set:\n{examples}\n"
      "Note:\nDo not write specific characters; the action subject should be \"a man\" or \"a "
      "person\" since there are no specific characters in the training set, such as knights, "
      "wizards, soldiers, etc. You should describe their figure through limb movement as much "
      "as possible.\nDo not include objects being held, as the training set does not have "
      "specific objects like swords, knives, or guns. Describe their figure through limb "
      "movement instead.\nYour description should use simple and clear language, avoiding "
      "complex vocabulary.\nTry to mimic the wording style of the prompt examples I provided as "
      "much as possible.\nExamples:\nInput: A person anxiously paces after getting up, feeling "
      "restless.\nOutput: a man rises from the ground, walks in a circle, and sits back down on "
      "the ground.\n\nInput: A medieval knight is fighting.\nOutput: A person stands firmly, "
      "raising a sword high, then lunges forward, swinging the sword from right to left while "
      "shifting weight onto his front foot.\n\nInput: a man walks in a figure 8\nOutput: a man "
      "walks in a figure 8\n\nInput: a man crawls forward\nOutput: a man crawls forward\n\n"
      "Input: a person walks in a circle\nOutput: a person walks in a circle\n\nInput: a man is "
      "battling\nOutput: a man is boxing and bouncing around";
  t.style_examples = {
      "person walking with their arms swinging back to front and walking in a general circle",
      "a person is standing and then makes a stomping gesture",
      "the figure bends down on its hands and knees and then crawls forward",
      "a person jumps and then side steps to the left",
      "a person casually walks forward",
      "The person takes 4 steps backwards.",
      "The person was pushed but did not fall.",
      "This person kicks with his right leg then jabs several times.",
      "a person lifting both arms together in front of them and then lifts them back down",
  };
  t.keywords = {"zombie", "ninja", "knight",  "wizard", "warrior",   "soldier", "robot",
                "pirate", "witch", "monkey",  "superhero", "battling", "fighting", "casting",
                "sword",  "knife", "gun"};
  t.rewrites = {
      {"zombie", "{subject} walks stiffly with arms stretched forward, dragging each foot"},
      {"ninja", "{subject} crouches low, darts forward quickly, then rolls and springs back up"},
      {"knight",
       "{subject} stands firmly, raises both arms overhead, then lunges forward swinging one "
       "arm down from right to left"},
      {"wizard", "{subject} sweeps both arms upward in wide circles, then thrusts one palm forward"},
      {"casting",
       "{subject} sweeps both arms upward in wide circles, then thrusts one palm forward"},
      {"warrior",
       "{subject} stands wide, punches forward with alternating fists while stepping ahead"},
      {"soldier", "{subject} marches in place with straight posture, swinging the arms in rhythm"},
      {"robot", "{subject} moves the arms in stiff right angles while stepping with rigid legs"},
      {"pirate", "{subject} staggers side to side with one arm raised and swings it downward"},
      {"witch", "{subject} hunches forward, stirs one arm in wide circles, then raises both arms"},
      {"monkey", "{subject} crouches with bent knees and swings both arms loosely while hopping"},
      {"superhero",
       "{subject} plants both feet, places fists on hips, then leaps forward with one arm "
       "extended"},
      {"battling", "{subject} is boxing and bouncing around"},
      {"fighting", "{subject} is boxing and bouncing around"},
  };
  t.banned_objects = {"sword", "knife", "gun", "shield", "spear", "staff", "axe"};
  return t;
}

}  // namespace mogo
