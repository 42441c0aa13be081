#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <atomic>
#include <cmath>
#include <string>
#include <thread>

#include "mogo/gateway.hpp"
#include "mogo/text_embed.hpp"

#include "httplib.h"
#include "json.hpp"

using namespace mogo;

TEST_CASE("embed_text is a pure function of text and seed") {
  TextEmbedding a = embed_text("a person walks forward", 99, 32);
  TextEmbedding b = embed_text("a person walks forward", 99, 32);
  CHECK(a.vector == b.vector);
  TextEmbedding c = embed_text("a person walks forward", 100, 32);
  CHECK(a.vector != c.vector);
}

TEST_CASE("embed_text output is unit length before the learned projection") {
  for (const char* text : {"walk", "a person spins twice and waves", "ONE two THREE"}) {
    TextEmbedding e = embed_text(text, 7, 48);
    double norm = 0.0;
    for (float v : e.vector) norm += static_cast<double>(v) * v;
    CHECK(std::sqrt(norm) == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("embed_text rejects empty and tokenless text") {
  CHECK_THROWS(embed_text("", 7, 16));
  CHECK_THROWS(embed_text("   \t  ", 7, 16));
}

TEST_CASE("shared tokens pull sentences together: walk vs walks vs jump") {
  const uint64_t seed = 2024;
  const int dim = 64;
  TextEmbedding walk = embed_text("walk", seed, dim);
  TextEmbedding person_walks = embed_text("a person walks", seed, dim);
  TextEmbedding jump = embed_text("jump", seed, dim);
  const float sim_walk = cosine_similarity(walk.vector, person_walks.vector);
  const float sim_jump = cosine_similarity(walk.vector, jump.vector);
  CHECK(sim_walk > sim_jump);
}

TEST_CASE("tokenizer folds case, punctuation and plural s") {
  const auto tokens = tokenize_text("The Knights, walk! ");
  REQUIRE(tokens.size() == 3);
  CHECK(tokens[0] == "the");
  CHECK(tokens[1] == "knight");
  CHECK(tokens[2] == "walk");
}

TEST_CASE("fallback determine: dataset-style prompts pass through") {
  PromptGateway gw(GatewayTables::builtin(), GatewayConfig{});
  std::string backend;
  CHECK(!gw.determine("a person walks forward", &backend));
  CHECK(backend == "fallback");
  CHECK(!gw.determine("a person casually walks forward", &backend));
}

TEST_CASE("fallback determine: role keywords and non-english trigger a rewrite") {
  PromptGateway gw(GatewayTables::builtin(), GatewayConfig{});
  CHECK(gw.determine("A medieval knight is fighting."));
  CHECK(gw.determine("walk like a zombie"));
  CHECK(gw.determine("漫画のように歩く"));
}

TEST_CASE("empty keyword list never requests a rewrite for english prompts") {
  GatewayTables t = GatewayTables::builtin();
  t.keywords.clear();
  PromptGateway gw(std::move(t), GatewayConfig{});
  CHECK(!gw.determine("A medieval knight is fighting."));
  CHECK(!gw.determine("a wizard casting a spell"));
}

TEST_CASE("fallback rewrite reproduces the worked battling example") {
  PromptGateway gw(GatewayTables::builtin(), GatewayConfig{});
  PromptDecision d = gw.process("a man is battling");
  CHECK(d.needs_rewrite);
  CHECK(d.backend_used == "fallback");
  CHECK(d.rewritten_text == "a man is boxing and bouncing around");
}

TEST_CASE("concrete prompts come back unchanged") {
  PromptGateway gw(GatewayTables::builtin(), GatewayConfig{});
  PromptDecision d = gw.process("a man walks in a figure 8");
  CHECK(!d.needs_rewrite);
  CHECK(d.rewritten_text.empty());
}

TEST_CASE("knight prompt rewrites to limb-level motion under 25 words") {
  PromptGateway gw(GatewayTables::builtin(), GatewayConfig{});
  PromptDecision d = gw.process("A medieval knight is fighting.");
  CHECK(d.needs_rewrite);
  CHECK(validate_rewrite(d.rewritten_text, GatewayTables::builtin().banned_objects));
}

TEST_CASE("rewrite validator enforces the length and sentence rules") {
  const std::vector<std::string> banned = {"sword"};
  CHECK(validate_rewrite("a man walks forward", banned));
  CHECK(!validate_rewrite("", banned));
  CHECK(!validate_rewrite("he stops. then walks", banned));
  CHECK(!validate_rewrite("a man raises a sword high", banned));
  std::string long_text = "word";
  for (int i = 0; i < 26; ++i) long_text += " word";
  CHECK(!validate_rewrite(long_text, banned));
  CHECK(validate_rewrite("A person stands firmly, then lunges forward.", banned));
}

TEST_CASE("subject detection keeps the original subject") {
  CHECK(PromptGateway::detect_subject("a man is battling") == "a man");
  CHECK(PromptGateway::detect_subject("A woman does a cartwheel") == "a woman");
  CHECK(PromptGateway::detect_subject("Suddenly, lightning!") == "a person");
}

TEST_CASE("gateway table file round trips through json") {
  GatewayTables t = GatewayTables::load(std::string(MOGO_SOURCE_DIR) + "/data/gateway.json");
  const GatewayTables b = GatewayTables::builtin();
  CHECK(t.keywords == b.keywords);
  CHECK(t.rewrites == b.rewrites);
  CHECK(t.style_examples == b.style_examples);
  CHECK(t.determine_system_template == b.determine_system_template);
}

namespace {

// Tiny chat-completions stand-in so the external path is exercised without a
// network.
class MockLlm {
 public:
  explicit MockLlm(std::string reply) : reply_(std::move(reply)) {
    server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      last_body = req.body;
      auth = req.get_header_value("Authorization");
      ++calls;
      nlohmann::json out = {
          {"choices", {{{"message", {{"role", "assistant"}, {"content", reply_}}}}}}};
      res.set_content(out.dump(), "application/json");
    });
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  ~MockLlm() {
    server_.stop();
    thread_.join();
  }

  std::string endpoint() const { return "http://127.0.0.1:" + std::to_string(port_); }

  std::string last_body;
  std::string auth;
  std::atomic<int> calls{0};

 private:
  std::string reply_;
  httplib::Server server_;
  int port_ = 0;
  std::thread thread_;
};

GatewayConfig mock_config(const MockLlm& llm) {
  GatewayConfig c;
  c.endpoint = llm.endpoint();
  c.api_key = "secret-token";
  c.model = "mock-model";
  c.timeout_seconds = 5;
  return c;
}

}  // namespace

TEST_CASE("external determine parses yes and no replies") {
  {
    MockLlm llm("no");
    PromptGateway gw(GatewayTables::builtin(), mock_config(llm));
    std::string backend;
    CHECK(!gw.determine("a person walks forward", &backend));
    CHECK(backend == "external");
    CHECK(llm.auth == "Bearer secret-token");
    const nlohmann::json body = nlohmann::json::parse(llm.last_body);
    CHECK(body["temperature"] == 0);
    CHECK(body["messages"][0]["role"] == "system");
    CHECK(body["messages"][1]["content"] == "a person walks forward");
  }
  {
    MockLlm llm("Yes");
    PromptGateway gw(GatewayTables::builtin(), mock_config(llm));
    std::string backend;
    CHECK(gw.determine("whatever", &backend));
    CHECK(backend == "external");
  }
}

TEST_CASE("unparseable determine replies are treated as yes") {
  MockLlm llm("I am not sure what you mean");
  PromptGateway gw(GatewayTables::builtin(), mock_config(llm));
  std::string backend;
  CHECK(gw.determine("a person walks forward", &backend));
  CHECK(backend == "external");
}

TEST_CASE("external rewrite accepted when it passes validation") {
  MockLlm llm("a man swings both arms and hops in place");
  PromptGateway gw(GatewayTables::builtin(), mock_config(llm));
  PromptDecision d = gw.rewrite("a man is battling");
  CHECK(d.needs_rewrite);
  CHECK(d.backend_used == "external");
  CHECK(d.rewritten_text == "a man swings both arms and hops in place");
}

TEST_CASE("invalid external rewrite retries once then falls back") {
  MockLlm llm("a man raises a sword high");  // banned noun every time
  PromptGateway gw(GatewayTables::builtin(), mock_config(llm));
  PromptDecision d = gw.rewrite("a man is battling");
  CHECK(llm.calls == 2);
  CHECK(d.backend_used == "fallback");
  CHECK(d.needs_rewrite);
  CHECK(d.rewritten_text == "a man is boxing and bouncing around");
}

TEST_CASE("unreachable endpoint falls back") {
  GatewayConfig cfg;
  cfg.endpoint = "http://127.0.0.1:1";  // nothing listens here
  cfg.timeout_seconds = 1;
  PromptGateway gw(GatewayTables::builtin(), cfg);
  std::string backend;
  CHECK(gw.determine("A medieval knight is fighting.", &backend));
  CHECK(backend == "fallback");
}

TEST_CASE("no rewrite available returns the original with a warning") {
  GatewayTables t = GatewayTables::builtin();
  t.rewrites.clear();
  PromptGateway gw(std::move(t), GatewayConfig{});
  PromptDecision d = gw.rewrite("walk like a zombie");
  CHECK(!d.needs_rewrite);
  CHECK(!d.warning.empty());
}
