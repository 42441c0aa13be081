#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstring>
#include <thread>

#include "mogo/generate.hpp"
#include "testutil.hpp"

using namespace mogo;

namespace {

struct Fixture {
  RvqTokenizer tokenizer;
  HctModel model;
  NormStats stats;

  Fixture() {
    Rng rng(101);
    RvqConfig rcfg;
    rcfg.num_layers = 3;
    rcfg.codebook_size = 16;
    rcfg.code_dim = 8;
    rcfg.input_dim = 6;
    rcfg.dropout = 0.0f;
    tokenizer = RvqTokenizer(rcfg, rng);
    Rng lat_rng(102);
    std::vector<float> latents(64 * rcfg.code_dim);
    for (auto& v : latents) v = lat_rng.uniform(-1.0f, 1.0f);
    tokenizer.init_codebook_from(latents, lat_rng);

    HctConfig hcfg;
    hcfg.d_model = 16;
    hcfg.num_quant_layers = 3;
    hcfg.heads = {2, 2, 1};
    hcfg.depths = {1, 1, 1};
    hcfg.codebook_size = 16;
    hcfg.max_relative_distance = 16;
    hcfg.text_seed = 5;
    Rng mrng(103);
    model = HctModel(hcfg, mrng);

    stats.mean.assign(6, 0.0f);
    stats.std.assign(6, 1.0f);
  }
};

}  // namespace

TEST_CASE("greedy sampling takes the argmax with lowest-index ties") {
  Rng rng(1);
  CHECK(sample_token({0.0f, 3.0f, 1.0f}, SamplePolicy::kGreedy, 0, 1.0f, rng) == 1);
  CHECK(sample_token({2.0f, 2.0f, 1.0f}, SamplePolicy::kGreedy, 0, 1.0f, rng) == 0);
}

TEST_CASE("top-1 sampling is greedy") {
  Rng rng(2);
  Rng lr(3);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<float> logits(12);
    for (auto& v : logits) v = lr.uniform(-2.0f, 2.0f);
    Rng g(0);
    CHECK(sample_token(logits, SamplePolicy::kTopK, 1, 1.0f, rng) ==
          sample_token(logits, SamplePolicy::kGreedy, 0, 1.0f, g));
  }
}

TEST_CASE("very high temperature approaches uniform over the top k") {
  Rng rng(4);
  std::vector<float> logits = {1.0f, 0.8f, 0.5f, 0.2f, -4.0f, -5.0f};
  const int k = 4, draws = 10000;
  std::vector<int> counts(6, 0);
  for (int i = 0; i < draws; ++i) {
    counts[static_cast<size_t>(sample_token(logits, SamplePolicy::kTopK, k, 1e6f, rng))]++;
  }
  CHECK(counts[4] == 0);
  CHECK(counts[5] == 0);
  // binomial 3 sigma around draws/k
  const double expect = draws / static_cast<double>(k);
  const double sigma = std::sqrt(draws * (1.0 / k) * (1.0 - 1.0 / k));
  for (int c = 0; c < k; ++c) {
    CHECK(std::fabs(counts[static_cast<size_t>(c)] - expect) < 3.0 * sigma);
  }
}

TEST_CASE("top-k clamps k to the vocabulary size") {
  Rng rng(5);
  const int32_t id = sample_token({0.5f, 0.1f}, SamplePolicy::kTopK, 99, 1.0f, rng);
  CHECK(id >= 0);
  CHECK(id < 2);
}

TEST_CASE("sampling validation rejects bad temperature and frame counts") {
  GenRequest req;
  req.prompt = "x";
  req.target_frames = 0;
  CHECK_THROWS(req.validate());
  req.target_frames = 4;
  req.policy = SamplePolicy::kTopK;
  req.temperature = 0.0f;
  CHECK_THROWS(req.validate());
}

TEST_CASE("greedy generation with a fixed seed is bit-identical across runs") {
  Fixture fx;
  GenRequest req;
  req.prompt = "a person sways fast and drifts left";
  req.target_frames = 10;
  req.seed = 7;
  GenResult a = generate(req, fx.model, fx.tokenizer, fx.stats);
  GenResult b = generate(req, fx.model, fx.tokenizer, fx.stats);
  CHECK(a.grid.ids == b.grid.ids);
  CHECK(std::memcmp(a.motion.frames.data(), b.motion.frames.data(),
                    a.motion.frames.size() * 4) == 0);
}

TEST_CASE("streaming tokens equal full-prefix teacher recomputation") {
  Fixture fx;
  Rng req_rng(11);
  for (int trial = 0; trial < 20; ++trial) {
    GenRequest req;
    req.prompt = "a figure bounces slowly, variant " + std::to_string(trial);
    req.target_frames = 12;
    req.seed = 100 + static_cast<uint64_t>(trial);
    GenResult r = generate(req, fx.model, fx.tokenizer, fx.stats);
    const TextEmbedding p = fx.model.embed_prompt(req.prompt);
    NoGrad ng;
    for (int j = 0; j < 12; ++j) {
      TokenGrid prefix = r.grid;
      prefix.length = j + 1;
      prefix.ids.resize(static_cast<size_t>(j + 1) * 3);
      auto logits = fx.model.forward_teacher(prefix, p);
      for (int v = 0; v < 3; ++v) {
        const auto& lv = logits[static_cast<size_t>(v)].values();
        const int k = logits[static_cast<size_t>(v)].dim(1);
        int best = 0;
        for (int c = 1; c < k; ++c) {
          if (lv[static_cast<size_t>(j) * k + c] > lv[static_cast<size_t>(j) * k + best]) best = c;
        }
        CHECK(best == r.grid.at(j, v));
      }
    }
  }
}

TEST_CASE("stream callback fires once per position in order before later positions") {
  Fixture fx;
  GenRequest req;
  req.prompt = "a person twists widely";
  req.target_frames = 8;
  std::vector<int> positions;
  std::vector<std::vector<float>> streamed;
  StreamCallback cb = [&](int pos, const std::vector<int32_t>& ids,
                          const std::vector<float>& frame) {
    CHECK(ids.size() == 3);
    positions.push_back(pos);
    streamed.push_back(frame);
  };
  GenResult r = generate(req, fx.model, fx.tokenizer, fx.stats, nullptr, &cb);
  REQUIRE(positions.size() == 8);
  for (int i = 0; i < 8; ++i) CHECK(positions[static_cast<size_t>(i)] == i);
  // causal decoder: streamed frames equal the final batch decode
  for (int f = 0; f < 8; ++f) {
    for (int c = 0; c < 6; ++c) {
      CHECK(std::fabs(streamed[static_cast<size_t>(f)][static_cast<size_t>(c)] -
                      r.motion.at(f, c)) < 1e-4f);
    }
  }
}

TEST_CASE("callback exceptions abort generation cleanly") {
  Fixture fx;
  GenRequest req;
  req.prompt = "a person stretches";
  req.target_frames = 6;
  int calls = 0;
  StreamCallback cb = [&](int pos, const std::vector<int32_t>&, const std::vector<float>&) {
    ++calls;
    if (pos == 2) throw std::runtime_error("stop here");
  };
  CHECK_THROWS_WITH(generate(req, fx.model, fx.tokenizer, fx.stats, nullptr, &cb), "stop here");
  CHECK(calls == 3);
}

TEST_CASE("requests beyond the relative-distance table clamp with a warning") {
  Fixture fx;
  GenRequest req;
  req.prompt = "a person sways";
  req.target_frames = 24;  // model max_relative_distance is 16
  GenResult r = generate(req, fx.model, fx.tokenizer, fx.stats);
  CHECK(r.grid.length == 24);
  REQUIRE(r.warnings.size() == 1);
  CHECK(r.warnings[0].find("max_relative_distance") != std::string::npos);
}

TEST_CASE("gateway bypass equals feeding the raw prompt") {
  Fixture fx;
  PromptGateway gateway(GatewayTables::builtin(), GatewayConfig{});
  GenRequest raw;
  raw.prompt = "walk like a zombie";
  raw.target_frames = 6;
  raw.gateway_enabled = false;
  GenResult no_gateway = generate(raw, fx.model, fx.tokenizer, fx.stats, &gateway);
  GenRequest same = raw;
  GenResult no_gateway_ptr = generate(same, fx.model, fx.tokenizer, fx.stats);
  CHECK(no_gateway.grid.ids == no_gateway_ptr.grid.ids);
  CHECK(no_gateway.final_prompt == "walk like a zombie");

  GenRequest with;
  with.prompt = "walk like a zombie";
  with.target_frames = 6;
  with.gateway_enabled = true;
  GenResult rewritten = generate(with, fx.model, fx.tokenizer, fx.stats, &gateway);
  CHECK(rewritten.prompt_rewritten);
  CHECK(rewritten.final_prompt != "walk like a zombie");
  CHECK(rewritten.grid.ids != no_gateway.grid.ids);
}

TEST_CASE("per-frame timings are recorded for every position and layer") {
  Fixture fx;
  GenRequest req;
  req.prompt = "a figure sways";
  req.target_frames = 5;
  GenResult r = generate(req, fx.model, fx.tokenizer, fx.stats);
  REQUIRE(r.frame_seconds.size() == 5);
  REQUIRE(r.layer_seconds.size() == 5);
  double cumulative = 0.0;
  for (int j = 0; j < 5; ++j) {
    CHECK(r.layer_seconds[static_cast<size_t>(j)].size() == 3);
    CHECK(r.frame_seconds[static_cast<size_t>(j)] >= 0.0);
    cumulative += r.frame_seconds[static_cast<size_t>(j)];
  }
  CHECK(cumulative > 0.0);
}

TEST_CASE("a frozen model serves concurrent generate calls identically") {
  Fixture fx;
  GenRequest req;
  req.prompt = "a person bounces fast and drifts right";
  req.target_frames = 9;
  req.seed = 55;
  GenResult results[2];
  std::thread t1([&] { results[0] = generate(req, fx.model, fx.tokenizer, fx.stats); });
  std::thread t2([&] { results[1] = generate(req, fx.model, fx.tokenizer, fx.stats); });
  t1.join();
  t2.join();
  CHECK(results[0].grid.ids == results[1].grid.ids);
  CHECK(results[0].motion.frames == results[1].motion.frames);
}

TEST_CASE("model and tokenizer codebook sizes must agree") {
  Fixture fx;
  Rng rng(200);
  HctConfig bad;
  bad.d_model = 16;
  bad.num_quant_layers = 3;
  bad.heads = {2, 2, 1};
  bad.depths = {1, 1, 1};
  bad.codebook_size = 32;  // tokenizer has 16
  HctModel wrong(bad, rng);
  GenRequest req;
  req.prompt = "a person sways";
  req.target_frames = 3;
  CHECK_THROWS((void)generate(req, wrong, fx.tokenizer, fx.stats));
}
