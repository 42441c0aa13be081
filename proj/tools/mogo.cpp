// mogo: train, tokenize, generate and evaluate the motion pipeline from one
// binary. Subcommands mirror the pipeline stages; every run directory gets
// the fully resolved configuration echoed back for reproducibility.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "mogo/config.hpp"
#include "mogo/gateway.hpp"
#include "mogo/generate.hpp"
#include "mogo/metrics.hpp"
#include "mogo/motion.hpp"
#include "mogo/rvq.hpp"
#include "mogo/synthetic.hpp"
#include "mogo/train.hpp"

#include "CLI11.hpp"
#include "json.hpp"

namespace fs = std::filesystem;
using namespace mogo;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;
constexpr int kExitNumeric = 4;

struct CommonArgs {
  std::string config_path;
  std::string preset = "desk";
  bool json = false;
  bool verbose = false;
  std::vector<std::string> overrides;  // key=value pairs
};

RunConfig resolve_config(const CommonArgs& args) {
  RunConfig cfg = RunConfig::preset(args.preset);
  if (!args.config_path.empty()) cfg.parse_file(args.config_path);
  for (const auto& kv : args.overrides) {
    const size_t eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("override '" + kv + "' is not key=value");
    cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
  }
  return cfg;
}

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "config file (key = value lines)");
  cmd->add_option("--preset", args.preset, "hyperparameter preset: desk or paper")
      ->check(CLI::IsMember({"desk", "paper"}));
  cmd->add_flag("--json", args.json, "machine-readable JSON result on stdout");
  cmd->add_flag("--verbose", args.verbose, "extra logging on stderr");
  cmd->add_option("--set", args.overrides, "override a config key, e.g. --set train.seed=9")
      ->take_all();
}

RvqConfig rvq_config_from(const RunConfig& c) {
  RvqConfig cfg;
  cfg.num_layers = static_cast<int>(c.get_int("rvq.num_layers"));
  cfg.codebook_size = static_cast<int>(c.get_int("rvq.codebook_size"));
  cfg.code_dim = static_cast<int>(c.get_int("rvq.code_dim"));
  cfg.input_dim = static_cast<int>(c.get_int("rvq.input_dim"));
  cfg.beta = static_cast<float>(c.get_float("rvq.beta"));
  cfg.ema_decay = static_cast<float>(c.get_float("rvq.ema_decay"));
  cfg.reset_window = static_cast<int>(c.get_int("rvq.reset_window"));
  cfg.reset_usage_threshold = static_cast<int>(c.get_int("rvq.reset_usage_threshold"));
  cfg.kernel = static_cast<int>(c.get_int("rvq.kernel"));
  cfg.res_blocks = static_cast<int>(c.get_int("rvq.res_blocks"));
  cfg.hidden = static_cast<int>(c.get_int("rvq.hidden"));
  cfg.dropout = static_cast<float>(c.get_float("rvq.dropout"));
  cfg.validate();
  return cfg;
}

HctConfig hct_config_from(const RunConfig& c) {
  HctConfig cfg;
  cfg.d_model = static_cast<int>(c.get_int("hct.d_model"));
  cfg.num_quant_layers = static_cast<int>(c.get_int("hct.num_layers"));
  cfg.heads = c.get_int_list("hct.heads");
  cfg.depths = c.get_int_list("hct.depths");
  cfg.codebook_size = static_cast<int>(c.get_int("hct.codebook_size"));
  cfg.max_relative_distance = static_cast<int>(c.get_int("hct.max_rel_distance"));
  cfg.dropout = static_cast<float>(c.get_float("hct.dropout"));
  cfg.corruption_rate = static_cast<float>(c.get_float("hct.corruption_rate"));
  cfg.text_seed = static_cast<uint64_t>(c.get_int("hct.text_seed"));
  cfg.pnq_condition = c.get_bool("hct.pnq_condition");
  cfg.ffn_mult = static_cast<int>(c.get_int("hct.ffn_mult"));
  cfg.validate();
  return cfg;
}

// Dataset directory layout: item_XXXXX.mgo1 plus a caption sidecar
// item_XXXXX.txt with one caption per line.
void save_dataset(const Dataset& ds, const std::string& dir) {
  fs::create_directories(dir);
  for (size_t i = 0; i < ds.items.size(); ++i) {
    std::ostringstream stem;
    stem << dir << "/item_" << std::setw(5) << std::setfill('0') << i;
    save_motion_mgo1(ds.items[i].motion, stem.str() + ".mgo1");
    std::ofstream captions(stem.str() + ".txt");
    for (const auto& c : ds.items[i].captions) captions << c << "\n";
  }
}

Dataset load_dataset(const std::string& dir, uint64_t split_seed) {
  Dataset ds;
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.path().extension() == ".mgo1") files.push_back(entry.path());
  }
  if (files.empty()) throw IoError("no .mgo1 items found in " + dir);
  std::sort(files.begin(), files.end());
  for (const auto& path : files) {
    DatasetItem item;
    item.motion = load_motion_mgo1(path.string());
    const fs::path sidecar = fs::path(path).replace_extension(".txt");
    if (fs::exists(sidecar)) {
      std::ifstream is(sidecar);
      std::string line;
      while (std::getline(is, line)) {
        if (!line.empty()) item.captions.push_back(line);
      }
    }
    if (item.captions.empty()) item.captions.push_back("a person moves");
    ds.items.push_back(std::move(item));
  }
  split_dataset(ds, split_seed);
  compute_train_norm_stats(ds);
  return ds;
}

void emit(const CommonArgs& args, const nlohmann::json& result, const std::string& text) {
  if (args.json) {
    std::cout << result.dump(2) << "\n";
  } else if (!text.empty()) {
    std::cout << text;
  }
}

GatewayConfig gateway_config(const CommonArgs& args) {
  GatewayConfig gc = GatewayConfig::from_env();
  gc.verbose = args.verbose;
  return gc;
}

GatewayTables gateway_tables(const RunConfig& cfg) {
  const std::string path = cfg.get_or("gateway.tables", "");
  if (!path.empty()) return GatewayTables::load(path);
  const std::string shipped = std::string(MOGO_SOURCE_DIR) + "/data/gateway.json";
  if (fs::exists(shipped)) return GatewayTables::load(shipped);
  return GatewayTables::builtin();
}

int cmd_make_synth(const CommonArgs& args, const RunConfig& cfg, const std::string& out_dir) {
  Dataset ds = make_synthetic_dataset(
      static_cast<uint64_t>(cfg.get_int("data.seed")), static_cast<int>(cfg.get_int("data.count")),
      static_cast<int>(cfg.get_int("data.frames_min")),
      static_cast<int>(cfg.get_int("data.frames_max")), static_cast<int>(cfg.get_int("data.dim")),
      static_cast<float>(cfg.get_float("data.fps")), cfg.get_bool("data.distinct_captions"));
  save_dataset(ds, out_dir);
  cfg.save(out_dir + "/run.config");
  nlohmann::json j = {{"items", ds.items.size()}, {"out", out_dir}};
  emit(args, j, "wrote " + std::to_string(ds.items.size()) + " items to " + out_dir + "\n");
  return 0;
}

int cmd_train_rvq(const CommonArgs& args, const RunConfig& cfg, const std::string& data_dir,
                  const std::string& run_dir, const std::string& resume) {
  Dataset ds = load_dataset(data_dir, static_cast<uint64_t>(cfg.get_int("data.seed")));
  TrainRvqOptions opt;
  opt.steps = cfg.get_int("train.rvq_steps");
  opt.lr = static_cast<float>(cfg.get_float("train.rvq_lr"));
  opt.batch = static_cast<int>(cfg.get_int("train.rvq_batch"));
  opt.crop = static_cast<int>(cfg.get_int("train.rvq_crop"));
  opt.val_interval = cfg.get_int("train.val_interval");
  opt.grad_clip = static_cast<float>(cfg.get_float("train.grad_clip"));
  opt.seed = static_cast<uint64_t>(cfg.get_int("train.seed"));
  opt.adam_beta1 = static_cast<float>(cfg.get_float("train.adam_beta1"));
  opt.adam_beta2 = static_cast<float>(cfg.get_float("train.adam_beta2"));
  opt.adam_eps = static_cast<float>(cfg.get_float("train.adam_eps"));
  opt.weight_decay = static_cast<float>(cfg.get_float("train.weight_decay"));
  opt.run_dir = run_dir;
  opt.resume_from = resume;
  opt.quiet = !args.verbose;
  fs::create_directories(run_dir);
  RunConfig resolved = cfg;
  if (!ds.items.empty()) {
    resolved.set("rvq.input_dim", std::to_string(ds.items[0].motion.dim));
  }
  resolved.save(run_dir + "/run.config");
  TrainRvqResult res = train_rvq(ds, rvq_config_from(resolved), opt);
  nlohmann::json j = {{"steps", res.steps_run},
                      {"first_val_l1", res.first_val_l1},
                      {"best_val_l1", res.best_val_l1},
                      {"final_val_l1", res.final_val_l1},
                      {"checkpoint", res.checkpoint_path}};
  std::ostringstream os;
  os << "tokenizer trained: val L1 " << res.first_val_l1 << " -> " << res.final_val_l1
     << " (best " << res.best_val_l1 << ")\ncheckpoint: " << res.checkpoint_path << "\n";
  emit(args, j, os.str());
  return 0;
}

int cmd_train_hct(const CommonArgs& args, const RunConfig& cfg, const std::string& data_dir,
                  const std::string& run_dir, const std::string& resume) {
  Dataset ds = load_dataset(data_dir, static_cast<uint64_t>(cfg.get_int("data.seed")));
  TrainHctOptions opt;
  opt.steps = cfg.get_int("train.hct_steps");
  opt.schedule = {static_cast<float>(cfg.get_float("train.hct_lr_max")),
                  static_cast<float>(cfg.get_float("train.hct_lr_min")), opt.steps};
  opt.batch = static_cast<int>(cfg.get_int("train.hct_batch"));
  opt.val_interval = cfg.get_int("train.val_interval");
  opt.fid_interval = cfg.get_int("train.fid_interval");
  opt.fid_samples = static_cast<int>(cfg.get_int("train.fid_samples"));
  opt.grad_clip = static_cast<float>(cfg.get_float("train.grad_clip"));
  opt.seed = static_cast<uint64_t>(cfg.get_int("train.seed"));
  opt.adam_beta1 = static_cast<float>(cfg.get_float("train.adam_beta1"));
  opt.adam_beta2 = static_cast<float>(cfg.get_float("train.adam_beta2"));
  opt.adam_eps = static_cast<float>(cfg.get_float("train.adam_eps"));
  opt.weight_decay = static_cast<float>(cfg.get_float("train.weight_decay"));
  opt.run_dir = run_dir;
  opt.resume_from = resume;
  opt.quiet = !args.verbose;
  fs::create_directories(run_dir);
  cfg.save(run_dir + "/run.config");
  TrainHctResult res = train_hct(ds, run_dir + "/rvq.ckpt", hct_config_from(cfg), opt);
  nlohmann::json j = {{"steps", res.steps_run},
                      {"final_val_loss", res.final_val_loss},
                      {"best_val_loss", res.best_val_loss},
                      {"final_val_accuracy", res.final_val_accuracy},
                      {"checkpoint", res.checkpoint_path}};
  std::ostringstream os;
  os << "transformer trained: val loss " << res.final_val_loss << ", accuracy "
     << res.final_val_accuracy << "\ncheckpoint: " << res.checkpoint_path << "\n";
  emit(args, j, os.str());
  return 0;
}

int cmd_tokenize(const CommonArgs& args, const std::string& run_dir,
                 const std::string& motion_path, const std::string& out_path) {
  RvqTokenizer tok = RvqTokenizer::load(run_dir + "/rvq.ckpt");
  NormStats stats = NormStats::load(run_dir + "/norm.stats");
  MotionSequence m = load_motion(motion_path, format_from_path(motion_path));
  MotionSequence norm = normalize(m, stats);
  NoGrad ng;
  TokenGrid grid = tok.quantize(tok.encode(norm)).grid;
  save_token_grid(grid, out_path);
  nlohmann::json j = {{"positions", grid.length}, {"layers", grid.num_layers}, {"out", out_path}};
  emit(args, j,
       "tokenized " + std::to_string(grid.length) + " frames x " +
           std::to_string(grid.num_layers) + " layers -> " + out_path + "\n");
  return 0;
}

int cmd_generate(const CommonArgs& args, const RunConfig& cfg, const std::string& run_dir,
                 const std::string& out_dir) {
  RvqTokenizer tok = RvqTokenizer::load(run_dir + "/rvq.ckpt");
  NormStats stats = NormStats::load(run_dir + "/norm.stats");
  HctModel model = HctModel::load(run_dir + "/hct.ckpt", nullptr, /*trainable=*/false);
  GenRequest req;
  req.prompt = cfg.get("gen.prompt_text");
  req.target_frames = static_cast<int>(cfg.get_int("gen.frames"));
  const std::string policy = cfg.get("gen.policy");
  if (policy == "greedy") {
    req.policy = SamplePolicy::kGreedy;
  } else if (policy == "top-k" || policy == "topk") {
    req.policy = SamplePolicy::kTopK;
  } else {
    throw ConfigError("gen.policy must be greedy or top-k, got '" + policy + "'");
  }
  req.top_k = static_cast<int>(cfg.get_int("gen.top_k"));
  req.temperature = static_cast<float>(cfg.get_float("gen.temperature"));
  req.seed = static_cast<uint64_t>(cfg.get_int("gen.seed"));
  req.gateway_enabled = cfg.get_bool("gen.gateway");
  req.fps = static_cast<float>(cfg.get_float("data.fps"));

  PromptGateway gateway(gateway_tables(cfg), gateway_config(args));
  GenResult res = generate(req, model, tok, stats, &gateway);

  fs::create_directories(out_dir);
  save_motion_mgo1(res.motion, out_dir + "/motion.mgo1");
  save_token_grid(res.grid, out_dir + "/tokens.mgt1");
  double total_seconds = 0.0;
  for (double s : res.frame_seconds) total_seconds += s;
  nlohmann::json meta = {{"prompt", req.prompt},
                         {"final_prompt", res.final_prompt},
                         {"prompt_rewritten", res.prompt_rewritten},
                         {"gateway_backend", res.gateway_backend},
                         {"seed", req.seed},
                         {"policy", policy},
                         {"top_k", req.top_k},
                         {"temperature", req.temperature},
                         {"frames", req.target_frames},
                         {"frame_seconds", res.frame_seconds},
                         {"total_seconds", total_seconds},
                         {"warnings", res.warnings}};
  std::ofstream meta_os(out_dir + "/meta.json");
  meta_os << meta.dump(2) << "\n";
  cfg.save(out_dir + "/run.config");
  for (const auto& w : res.warnings) std::cerr << "warning: " << w << "\n";
  nlohmann::json j = {{"out", out_dir},
                      {"frames", res.grid.length},
                      {"final_prompt", res.final_prompt},
                      {"total_seconds", total_seconds}};
  emit(args, j,
       "generated " + std::to_string(res.grid.length) + " frames in " +
           std::to_string(total_seconds) + " s -> " + out_dir + "\n");
  return 0;
}

int cmd_eval(const CommonArgs& args, const RunConfig& cfg, const std::string& run_dir,
             const std::string& data_dir, bool csv, bool with_mmodality) {
  Dataset ds = load_dataset(data_dir, static_cast<uint64_t>(cfg.get_int("data.seed")));
  RvqTokenizer tok = RvqTokenizer::load(run_dir + "/rvq.ckpt");
  NormStats stats = NormStats::load(run_dir + "/norm.stats");
  std::vector<const MotionSequence*> test_split;
  for (int idx : ds.indices_of(Split::kTest)) {
    test_split.push_back(&ds.items[static_cast<size_t>(idx)].motion);
  }
  if (test_split.empty()) throw IoError("eval: empty test split");
  EvalReport rep = reconstruction_report(tok, stats, test_split);

  if (with_mmodality) {
    HctModel model = HctModel::load(run_dir + "/hct.ckpt", nullptr, false);
    FeatureExtractor extractor(ds.items[0].motion.dim);
    std::vector<std::string> prompts;
    for (int idx : ds.indices_of(Split::kTest)) {
      prompts.push_back(ds.items[static_cast<size_t>(idx)].captions[0]);
      if (prompts.size() >= 4) break;
    }
    auto gen = [&](const std::string& prompt, uint64_t seed) {
      GenRequest req;
      req.prompt = prompt;
      req.target_frames = 32;
      req.policy = SamplePolicy::kTopK;
      req.top_k = static_cast<int>(cfg.get_int("gen.top_k"));
      req.temperature = static_cast<float>(cfg.get_float("gen.temperature"));
      req.seed = seed;
      return generate(req, model, tok, stats).motion;
    };
    rep.mmodality = mmodality(gen, prompts,
                              static_cast<int>(cfg.get_int("eval.mmodality_repeats")), true,
                              extractor);
    rep.has_mmodality = true;
  }

  nlohmann::json j = nlohmann::json::parse(rep.to_json());
  emit(args, j, csv ? rep.to_csv() : rep.to_table());
  return 0;
}

int cmd_rewrite_prompt(const CommonArgs& args, const RunConfig& cfg, const std::string& text) {
  PromptGateway gateway(gateway_tables(cfg), gateway_config(args));
  PromptDecision d = gateway.process(text);
  const std::string final_text = d.needs_rewrite ? d.rewritten_text : text;
  nlohmann::json j = {{"prompt", text},
                      {"needs_rewrite", d.needs_rewrite},
                      {"rewritten", final_text},
                      {"backend_used", d.backend_used}};
  if (!d.warning.empty()) j["warning"] = d.warning;
  std::ostringstream os;
  os << final_text << "\n"
     << "needs_rewrite=" << (d.needs_rewrite ? "yes" : "no") << " backend_used=" << d.backend_used
     << "\n";
  if (!d.warning.empty()) os << "warning: " << d.warning << "\n";
  emit(args, j, os.str());
  return 0;
}

int cmd_inspect(const CommonArgs& args, const std::string& path) {
  const Checkpoint ck = Checkpoint::load(path);
  nlohmann::json j = {{"magic", ck.magic}, {"tensors", ck.tensors.size()}};
  std::ostringstream os;
  os << "magic: " << ck.magic << "\n" << "header:\n" << ck.header;
  int64_t total = 0;
  for (const auto& [name, rec] : ck.tensors) total += static_cast<int64_t>(rec.data.size());
  os << "tensors: " << ck.tensors.size() << " (" << total << " parameters)\n";
  j["parameters"] = total;
  j["header"] = ck.header;
  if (ck.magic == "RVQ1") {
    // usage histogram per quantization layer
    nlohmann::json layers = nlohmann::json::array();
    for (int v = 0;; ++v) {
      const std::string key = "codebook." + std::to_string(v) + ".usage_total";
      if (!ck.tensors.count(key)) break;
      const auto& usage = ck.at(key).data;
      int dead = 0;
      double total_usage = 0.0;
      float max_usage = 0.0f;
      for (float u : usage) {
        dead += u == 0.0f;
        total_usage += u;
        max_usage = std::max(max_usage, u);
      }
      os << "layer " << v << ": " << usage.size() << " codes, " << dead << " never used, "
         << "mean usage " << total_usage / static_cast<double>(usage.size()) << ", max "
         << max_usage << "\n";
      // coarse histogram over usage counts
      const int buckets[5] = {0, 1, 10, 100, 1000};
      os << "  usage histogram:";
      for (int b = 0; b < 5; ++b) {
        const float lo = static_cast<float>(buckets[b]);
        const float hi = b + 1 < 5 ? static_cast<float>(buckets[b + 1]) : 3.4e38f;
        int count = 0;
        for (float u : usage) count += u >= lo && u < hi;
        os << " [" << buckets[b] << (b + 1 < 5 ? "-" + std::to_string(buckets[b + 1]) : "+")
           << ") " << count;
      }
      os << "\n";
      layers.push_back({{"codes", usage.size()}, {"never_used", dead}});
    }
    j["layers"] = layers;
  }
  emit(args, j, os.str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"mogo: residual-quantized text-to-motion pipeline"};
  app.require_subcommand(1);

  CommonArgs args;
  std::string data_dir, run_dir, out_path, motion_path, text, ckpt_path, resume;
  bool csv = false, with_mmodality = false;

  auto* make_synth = app.add_subcommand("make-synth", "write a synthetic motion dataset");
  add_common(make_synth, args);
  make_synth->add_option("--out", out_path, "output dataset directory")->required();

  auto* train_rvq_cmd = app.add_subcommand("train-rvq", "train the motion tokenizer");
  add_common(train_rvq_cmd, args);
  train_rvq_cmd->add_option("--data", data_dir, "dataset directory")->required();
  train_rvq_cmd->add_option("--run-dir", run_dir, "checkpoint/metrics directory")->required();
  train_rvq_cmd->add_option("--resume", resume, "resume from rvq_last.ckpt");

  auto* train_hct_cmd = app.add_subcommand("train-hct", "train the hierarchical transformer");
  add_common(train_hct_cmd, args);
  train_hct_cmd->add_option("--data", data_dir, "dataset directory")->required();
  train_hct_cmd->add_option("--run-dir", run_dir, "directory holding rvq.ckpt")->required();
  train_hct_cmd->add_option("--resume", resume, "resume from hct_last.ckpt");

  auto* tokenize_cmd = app.add_subcommand("tokenize", "tokenize one motion file to MGT1");
  add_common(tokenize_cmd, args);
  tokenize_cmd->add_option("--run-dir", run_dir, "directory holding rvq.ckpt")->required();
  tokenize_cmd->add_option("--motion", motion_path, "input motion (.mgo1/.csv/.json)")->required();
  tokenize_cmd->add_option("--out", out_path, "output .mgt1 path")->required();

  auto* generate_cmd = app.add_subcommand("generate", "generate motion from text");
  add_common(generate_cmd, args);
  generate_cmd->add_option("--run-dir", run_dir, "directory holding rvq.ckpt + hct.ckpt")
      ->required();
  generate_cmd->add_option("--text", text, "prompt text")->required();
  generate_cmd->add_option("--out", out_path, "output directory")->required();
  int frames = -1;
  uint64_t gen_seed = 0;
  generate_cmd->add_option("--frames", frames, "target frame count (length restriction)");
  generate_cmd->add_option("--seed", gen_seed, "sampling seed");
  std::string policy_flag;
  generate_cmd->add_option("--policy", policy_flag, "greedy or top-k");
  bool gateway_flag = false;
  generate_cmd->add_flag("--gateway", gateway_flag, "run the prompt gateway first");

  auto* eval_cmd = app.add_subcommand("eval", "reconstruction + FID report on the test split");
  add_common(eval_cmd, args);
  eval_cmd->add_option("--run-dir", run_dir, "directory holding rvq.ckpt")->required();
  eval_cmd->add_option("--data", data_dir, "dataset directory")->required();
  eval_cmd->add_flag("--csv", csv, "emit CSV instead of the table");
  eval_cmd->add_flag("--mmodality", with_mmodality, "also measure generation diversity");

  auto* rewrite_cmd = app.add_subcommand("rewrite-prompt", "run the prompt gateway only");
  add_common(rewrite_cmd, args);
  rewrite_cmd->add_option("--text", text, "prompt text")->required();

  auto* inspect_cmd = app.add_subcommand("inspect-ckpt", "print checkpoint header and stats");
  add_common(inspect_cmd, args);
  inspect_cmd->add_option("ckpt", ckpt_path, "checkpoint path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    RunConfig cfg = resolve_config(args);
    if (generate_cmd->parsed()) {
      // flags override config file values
      if (generate_cmd->count("--frames")) cfg.set("gen.frames", std::to_string(frames));
      if (generate_cmd->count("--seed")) cfg.set("gen.seed", std::to_string(gen_seed));
      if (!policy_flag.empty()) cfg.set("gen.policy", policy_flag);
      if (gateway_flag) cfg.set("gen.gateway", "true");
      cfg.set("gen.prompt_text", text);
    }

    if (make_synth->parsed()) return cmd_make_synth(args, cfg, out_path);
    if (train_rvq_cmd->parsed()) return cmd_train_rvq(args, cfg, data_dir, run_dir, resume);
    if (train_hct_cmd->parsed()) return cmd_train_hct(args, cfg, data_dir, run_dir, resume);
    if (tokenize_cmd->parsed()) return cmd_tokenize(args, run_dir, motion_path, out_path);
    if (generate_cmd->parsed()) return cmd_generate(args, cfg, run_dir, out_path);
    if (eval_cmd->parsed()) return cmd_eval(args, cfg, run_dir, data_dir, csv, with_mmodality);
    if (rewrite_cmd->parsed()) return cmd_rewrite_prompt(args, cfg, text);
    if (inspect_cmd->parsed()) return cmd_inspect(args, ckpt_path);
    std::cerr << "error: no subcommand\n";
    return kExitConfig;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const NumericFault& e) {
    std::cerr << "numeric fault: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}
