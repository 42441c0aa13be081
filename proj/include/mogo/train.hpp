#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "mogo/generate.hpp"
#include "mogo/hct.hpp"
#include "mogo/metrics.hpp"
#include "mogo/motion.hpp"
#include "mogo/optim.hpp"
#include "mogo/rng.hpp"
#include "mogo/rvq.hpp"
#include "mogo/serialize.hpp"

namespace mogo {

// Append-only `step,split,metric,value` log.
class MetricsLog {
 public:
  explicit MetricsLog(const std::string& path) : os_(path, std::ios::app) {
    if (!os_) throw IoError("cannot open metrics log: " + path);
  }

  void add(int64_t step, const std::string& split, const std::string& metric, double value) {
    os_ << step << ',' << split << ',' << metric << ',' << value << '\n';
    os_.flush();
  }

 private:
  std::ofstream os_;
};

namespace detail_train {

inline void write_fault_dump(const std::string& run_dir, const std::string& stage, int64_t step,
                             float lr, const std::string& what,
                             std::vector<Tensor>& params) {
  std::ofstream os(run_dir + "/fault_dump.txt");
  os << "stage = " << stage << "\nstep = " << step << "\nlr = " << lr << "\nerror = " << what
     << "\n";
  double norm_sq = 0.0, grad_sq = 0.0;
  int64_t numel = 0;
  for (auto& p : params) {
    for (float v : p.values()) norm_sq += static_cast<double>(v) * v;
    if (p.requires_grad()) {
      for (float g : p.grad()) grad_sq += static_cast<double>(g) * g;
    }
    numel += p.numel();
  }
  os << "param_count = " << numel << "\nparam_norm = " << std::sqrt(norm_sq)
     << "\ngrad_norm = " << std::sqrt(grad_sq) << "\n";
}

inline std::vector<int> sample_batch(Rng& rng, int dataset_size, int batch) {
  std::vector<int> out(static_cast<size_t>(batch));
  for (auto& i : out) i = rng.below_int(dataset_size);
  return out;
}

}  // namespace detail_train

// ---- tokenizer training ----

struct TrainRvqOptions {
  int64_t steps = 2000;
  float lr = 2e-4f;
  int batch = 64;
  int crop = 32;  // random temporal crop length for training samples
  int64_t val_interval = 100;
  float grad_clip = 1.0f;
  uint64_t seed = 7;
  float adam_beta1 = 0.9f;
  float adam_beta2 = 0.99f;
  float adam_eps = 1e-8f;
  float weight_decay = 1e-4f;
  std::string run_dir;
  std::string resume_from;  // optional rvq_last.ckpt to continue
  bool quiet = false;
};

struct TrainRvqResult {
  double first_val_l1 = 0.0;
  double best_val_l1 = 0.0;
  double final_val_l1 = 0.0;
  int64_t steps_run = 0;
  std::string checkpoint_path;       // best validation checkpoint
  std::string last_checkpoint_path;  // resumable latest state
};

// Mean per-element L1 between a sequence and its tokenize->decode round trip,
// eval mode throughout.
inline double reconstruction_l1(const RvqTokenizer& tok, const MotionSequence& normalized) {
  NoGrad ng;
  Tensor latent = tok.encode(normalized, false, nullptr);
  QuantizeResult q = tok.quantize(latent);
  const std::vector<float> recon_latent = dequantize(q.grid, tok.codebook());
  MotionSequence decoded = tok.decode(recon_latent, normalized.frame_count, normalized.fps);
  double acc = 0.0;
  for (size_t i = 0; i < decoded.frames.size(); ++i) {
    acc += std::fabs(static_cast<double>(decoded.frames[i]) - normalized.frames[i]);
  }
  return acc / static_cast<double>(decoded.frames.size());
}

inline double validation_l1(const RvqTokenizer& tok, const std::vector<MotionSequence>& val) {
  double acc = 0.0;
  for (const auto& m : val) acc += reconstruction_l1(tok, m);
  return val.empty() ? 0.0 : acc / static_cast<double>(val.size());
}

namespace detail_train {

inline void save_rvq_state(const RvqTokenizer& tok, AdamW& adam, const Rng& rng, int64_t step,
                           double best_val, const std::string& path) {
  std::ostringstream extra;
  extra << "run.stage = rvq\nrun.step = " << step << "\nrun.best_val = " << best_val
        << "\nrun.rng_state = " << rng.state_string() << "\n"
        << "adam.step_count = " << adam.step_count << "\n";
  tok.save(path, extra.str());
  // append optimizer moments in a sidecar next to the checkpoint
  CheckpointWriter w(path + ".opt", "OPT1", "");
  for (size_t i = 0; i < adam.m.size(); ++i) {
    w.add_raw("m." + std::to_string(i), {static_cast<int>(adam.m[i].size())}, adam.m[i]);
    w.add_raw("v." + std::to_string(i), {static_cast<int>(adam.v[i].size())}, adam.v[i]);
  }
  w.finish();
}

inline std::map<std::string, std::string> parse_header(const std::string& text) {
  std::map<std::string, std::string> kv;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    const size_t eq = line.find('=');
    if (eq == std::string::npos) continue;
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      const auto e = s.find_last_not_of(" \t\r");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
  }
  return kv;
}

inline void load_opt_sidecar(const std::string& path, AdamW& adam, size_t param_count) {
  const Checkpoint ck = Checkpoint::load(path);
  adam.m.resize(param_count);
  adam.v.resize(param_count);
  for (size_t i = 0; i < param_count; ++i) {
    adam.m[i] = ck.at("m." + std::to_string(i)).data;
    adam.v[i] = ck.at("v." + std::to_string(i)).data;
  }
}

}  // namespace detail_train

inline TrainRvqResult train_rvq(const Dataset& ds, const RvqConfig& cfg,
                                const TrainRvqOptions& opt) {
  if (!ds.has_norm_stats) throw std::invalid_argument("train_rvq: dataset has no norm stats");
  if (opt.run_dir.empty()) throw std::invalid_argument("train_rvq: run_dir required");
  std::filesystem::create_directories(opt.run_dir);

  // normalized copies of the splits
  std::vector<MotionSequence> train, val;
  for (size_t i = 0; i < ds.items.size(); ++i) {
    if (ds.split[i] == Split::kTrain) train.push_back(normalize(ds.items[i].motion, ds.norm_stats));
    if (ds.split[i] == Split::kVal) val.push_back(normalize(ds.items[i].motion, ds.norm_stats));
  }
  if (train.empty()) throw std::invalid_argument("train_rvq: empty train split");
  if (val.empty()) val.push_back(train[0]);  // degenerate datasets still validate

  Rng init_rng(opt.seed);
  RvqTokenizer tok(cfg, init_rng);
  Rng rng(opt.seed ^ 0xA5A5A5A5ull);
  AdamW adam;
  adam.lr = opt.lr;
  adam.beta1 = opt.adam_beta1;
  adam.beta2 = opt.adam_beta2;
  adam.eps = opt.adam_eps;
  adam.weight_decay = opt.weight_decay;
  int64_t start_step = 0;
  double best_val = -1.0;

  if (!opt.resume_from.empty()) {
    std::string header;
    tok = RvqTokenizer::load(opt.resume_from, &header);
    auto kv = detail_train::parse_header(header);
    start_step = std::stoll(kv.at("run.step"));
    best_val = std::stod(kv.at("run.best_val"));
    adam.step_count = std::stoll(kv.at("adam.step_count"));
    if (!rng.restore_state(kv.at("run.rng_state"))) {
      throw IoError("resume: bad rng state in checkpoint header");
    }
    detail_train::load_opt_sidecar(opt.resume_from + ".opt",
                                   adam, tok.parameters().size());
  }

  ds.norm_stats.save(opt.run_dir + "/norm.stats");
  MetricsLog log(opt.run_dir + "/metrics.log");
  auto params = tok.parameters();

  TrainRvqResult result;
  result.checkpoint_path = opt.run_dir + "/rvq.ckpt";
  result.last_checkpoint_path = opt.run_dir + "/rvq_last.ckpt";

  if (start_step == 0) {
    result.first_val_l1 = validation_l1(tok, val);
    log.add(0, "val", "recon_l1", result.first_val_l1);
  }

  for (int64_t step = start_step + 1; step <= opt.steps; ++step) {
    const auto batch_idx = detail_train::sample_batch(rng, static_cast<int>(train.size()),
                                                      opt.batch);
    // crop windows drawn up front so rng use per step is fixed
    std::vector<std::pair<int, int>> windows;
    windows.reserve(batch_idx.size());
    for (int idx : batch_idx) {
      const int len = train[static_cast<size_t>(idx)].frame_count;
      const int crop = std::min(opt.crop, len);
      const int start = len > crop ? rng.below_int(len - crop + 1) : 0;
      windows.emplace_back(start, crop);
    }

    Tensor batch_loss;
    std::vector<QuantizeResult> batch_quant;
    std::vector<float> batch_latents;
    try {
      for (size_t bi = 0; bi < batch_idx.size(); ++bi) {
        const MotionSequence& full = train[static_cast<size_t>(batch_idx[bi])];
        const auto [w_start, w_len] = windows[bi];
        MotionSequence crop;
        crop.frame_count = w_len;
        crop.dim = full.dim;
        crop.fps = full.fps;
        crop.is_normalized = true;
        crop.frames.assign(full.frames.begin() + static_cast<size_t>(w_start) * full.dim,
                           full.frames.begin() + static_cast<size_t>(w_start + w_len) * full.dim);
        Tensor latent = tok.encode(crop, true, &rng);
        if (!tok.codebook().initialized && step == 1 && bi == 0) {
          // codebook bootstraps from the very first encoder outputs
          std::vector<float> boot = latent.values();
          tok.init_codebook_from(boot, rng);
        }
        QuantizeResult q = tok.quantize(latent);
        Tensor st = RvqTokenizer::straight_through(latent, q.stack);
        Tensor decoded = tok.decode_rows(st, true, &rng);
        Tensor target = Tensor::of({crop.frame_count, crop.dim}, crop.frames);
        Tensor item_loss = RvqTokenizer::rvq_loss(target, decoded, latent, q.stack, cfg.beta);
        batch_loss = batch_loss.defined() ? add(batch_loss, item_loss) : item_loss;
        batch_latents.insert(batch_latents.end(), latent.values().begin(), latent.values().end());
        batch_quant.push_back(std::move(q));
      }
      batch_loss = mul_scalar(batch_loss, 1.0f / static_cast<float>(opt.batch));
      zero_grads(params);
      batch_loss.backward();
    } catch (const NumericFault& e) {
      detail_train::write_fault_dump(opt.run_dir, "rvq", step, opt.lr, e.what(), params);
      throw NumericFault(std::string("train_rvq aborted at step ") + std::to_string(step) + ": " +
                         e.what() + " (see fault_dump.txt)");
    }
    clip_grad_norm(params, opt.grad_clip);
    adam.step(params);
    ema_update_batch(tok.codebook(), batch_quant, cfg.ema_decay);
    reset_dead_codes(tok.codebook(), rng, batch_latents, cfg.reset_window,
                     static_cast<float>(cfg.reset_usage_threshold));

    if (step % opt.val_interval == 0 || step == opt.steps) {
      const double train_loss = batch_loss.item();
      const double val_l1 = validation_l1(tok, val);
      log.add(step, "train", "loss", train_loss);
      log.add(step, "val", "recon_l1", val_l1);
      if (!opt.quiet) {
        std::cerr << "[rvq] step " << step << " loss " << train_loss << " val_l1 " << val_l1
                  << "\n";
      }
      if (best_val < 0.0 || val_l1 < best_val) {
        best_val = val_l1;
        detail_train::save_rvq_state(tok, adam, rng, step, best_val, result.checkpoint_path);
      }
      result.final_val_l1 = val_l1;
    }
    result.steps_run = step;
  }
  result.best_val_l1 = best_val;
  detail_train::save_rvq_state(tok, adam, rng, result.steps_run, best_val,
                               result.last_checkpoint_path);
  return result;
}

// ---- transformer training ----

// Greedy generations for a few validation captions scored against the
// validation motions with identity-pool features.
inline double validation_fid(const HctModel& model, const RvqTokenizer& tok,
                             const NormStats& stats, const Dataset& ds,
                             const std::vector<int>& val_idx, int samples) {
  const int n = std::min<int>(samples, static_cast<int>(val_idx.size()));
  if (n < 2) return 0.0;
  std::vector<float> real_feats, gen_feats;
  int fdim = 0;
  for (int i = 0; i < n; ++i) {
    const DatasetItem& item = ds.items[static_cast<size_t>(val_idx[static_cast<size_t>(i)])];
    GenRequest req;
    req.prompt = item.captions[0];
    req.target_frames = std::min(item.motion.frame_count, 48);
    req.policy = SamplePolicy::kGreedy;
    req.fps = item.motion.fps;
    const GenResult r = generate(req, model, tok, stats);
    const auto rf = identity_pool_features(item.motion);
    const auto gf = identity_pool_features(r.motion);
    fdim = static_cast<int>(rf.size());
    real_feats.insert(real_feats.end(), rf.begin(), rf.end());
    gen_feats.insert(gen_feats.end(), gf.begin(), gf.end());
  }
  return frechet_distance(real_feats, n, gen_feats, n, fdim);
}

struct TrainHctOptions {
  int64_t steps = 2000;
  CosineSchedule schedule{2.5e-5f, 3e-6f, 2000};
  int batch = 16;
  int64_t val_interval = 100;
  int64_t fid_interval = 0;  // 0 disables mid-run generation FID
  int fid_samples = 8;
  float grad_clip = 1.0f;
  uint64_t seed = 7;
  float adam_beta1 = 0.9f;
  float adam_beta2 = 0.99f;
  float adam_eps = 1e-8f;
  float weight_decay = 1e-4f;
  std::string run_dir;
  std::string resume_from;
  bool train_on_all = false;     // memorization runs ignore the split
  double stop_accuracy = 0.0;    // early stop once val accuracy reaches this
  bool quiet = false;
};

struct TrainHctResult {
  int64_t steps_run = 0;
  double final_val_loss = 0.0;
  double best_val_loss = -1.0;
  double final_val_accuracy = 0.0;
  std::string checkpoint_path;
  std::string last_checkpoint_path;
};

struct TokenizedItem {
  TokenGrid grid;
  std::vector<std::string> captions;
  float fps = 20.0f;
};

// Tokenizes every dataset item through the frozen tokenizer, cached as MGT1
// files keyed by the tokenizer checkpoint hash.
inline std::vector<TokenizedItem> tokenize_dataset(const Dataset& ds, const RvqTokenizer& tok,
                                                   const NormStats& stats,
                                                   const std::string& cache_dir,
                                                   uint64_t tokenizer_hash) {
  std::filesystem::create_directories(cache_dir);
  const std::string manifest_path = cache_dir + "/manifest.txt";
  bool cache_ok = false;
  {
    std::ifstream is(manifest_path);
    if (is) {
      auto kv = detail_train::parse_header(std::string(std::istreambuf_iterator<char>(is), {}));
      cache_ok = kv.count("run.tokenizer_hash") &&
                 kv.at("run.tokenizer_hash") == std::to_string(tokenizer_hash) &&
                 kv.count("count") &&
                 kv.at("count") == std::to_string(ds.items.size());
    }
  }
  std::vector<TokenizedItem> out(ds.items.size());
  for (size_t i = 0; i < ds.items.size(); ++i) {
    out[i].captions = ds.items[i].captions;
    out[i].fps = ds.items[i].motion.fps;
    const std::string path = cache_dir + "/item_" + std::to_string(i) + ".mgt1";
    if (cache_ok && std::filesystem::exists(path)) {
      out[i].grid = load_token_grid(path);
    } else {
      NoGrad ng;
      MotionSequence norm = normalize(ds.items[i].motion, stats);
      Tensor latent = tok.encode(norm, false, nullptr);
      out[i].grid = tok.quantize(latent).grid;
      save_token_grid(out[i].grid, path);
    }
  }
  std::ofstream os(manifest_path);
  os << "run.tokenizer_hash = " << tokenizer_hash << "\ncount = " << ds.items.size() << "\n";
  return out;
}

struct HctEval {
  double loss_per_token = 0.0;
  double loss_eq = 0.0;  // summed form / batch count
  double accuracy = 0.0;
};

// Clean teacher-forced evaluation (no corruption, eval mode).
inline HctEval evaluate_hct(const HctModel& model, const std::vector<TokenizedItem>& items,
                            const std::vector<int>& indices) {
  NoGrad ng;
  double loss_sum = 0.0;
  int64_t tokens = 0, correct = 0;
  for (int idx : indices) {
    const TokenizedItem& it = items[static_cast<size_t>(idx)];
    const TextEmbedding p = model.embed_prompt(it.captions[0]);
    auto logits = model.forward_teacher(it.grid, p, false, nullptr);
    HctLoss l = HctModel::hct_loss(logits, it.grid);
    loss_sum += l.loss.item();
    tokens += l.tokens;
    correct += l.correct;
  }
  HctEval ev;
  ev.loss_eq = indices.empty() ? 0.0 : loss_sum / static_cast<double>(indices.size());
  ev.loss_per_token = tokens ? loss_sum / static_cast<double>(tokens) : 0.0;
  ev.accuracy = tokens ? static_cast<double>(correct) / static_cast<double>(tokens) : 0.0;
  return ev;
}

namespace detail_train {

inline void save_hct_state(HctModel& model, AdamW& adam, const Rng& rng, int64_t step,
                           double best_val, const std::string& path) {
  std::ostringstream extra;
  extra << "run.stage = hct\nrun.step = " << step << "\nrun.best_val = " << best_val
        << "\nrun.rng_state = " << rng.state_string() << "\n"
        << "adam.step_count = " << adam.step_count << "\n";
  model.save(path, extra.str());
  CheckpointWriter w(path + ".opt", "OPT1", "");
  for (size_t i = 0; i < adam.m.size(); ++i) {
    w.add_raw("m." + std::to_string(i), {static_cast<int>(adam.m[i].size())}, adam.m[i]);
    w.add_raw("v." + std::to_string(i), {static_cast<int>(adam.v[i].size())}, adam.v[i]);
  }
  w.finish();
}

}  // namespace detail_train

inline TrainHctResult train_hct(const Dataset& ds, const std::string& tokenizer_ckpt,
                                const HctConfig& cfg, const TrainHctOptions& opt) {
  if (opt.run_dir.empty()) throw std::invalid_argument("train_hct: run_dir required");
  std::filesystem::create_directories(opt.run_dir);
  RvqTokenizer tok = RvqTokenizer::load(tokenizer_ckpt);
  if (tok.config().codebook_size != cfg.codebook_size) {
    throw std::invalid_argument("train_hct: tokenizer codebook size " +
                                std::to_string(tok.config().codebook_size) +
                                " != model codebook size " + std::to_string(cfg.codebook_size));
  }
  if (tok.config().num_layers != cfg.num_quant_layers) {
    throw std::invalid_argument("train_hct: tokenizer has " +
                                std::to_string(tok.config().num_layers) +
                                " quantization layers, model expects " +
                                std::to_string(cfg.num_quant_layers));
  }
  NormStats stats = NormStats::load(std::filesystem::path(tokenizer_ckpt).parent_path().string() +
                                    "/norm.stats");
  const uint64_t tok_hash = hash_file(tokenizer_ckpt);
  const auto items = tokenize_dataset(ds, tok, stats, opt.run_dir + "/tokens", tok_hash);

  std::vector<int> train_idx, val_idx;
  for (size_t i = 0; i < ds.items.size(); ++i) {
    if (opt.train_on_all) {
      train_idx.push_back(static_cast<int>(i));
    } else if (ds.split[i] == Split::kTrain) {
      train_idx.push_back(static_cast<int>(i));
    } else if (ds.split[i] == Split::kVal) {
      val_idx.push_back(static_cast<int>(i));
    }
  }
  if (opt.train_on_all || val_idx.empty()) val_idx = train_idx;

  Rng init_rng(opt.seed ^ 0xC0FFEEull);
  HctModel model(cfg, init_rng);
  Rng rng(opt.seed ^ 0xFACEFEEDull);
  AdamW adam;
  adam.beta1 = opt.adam_beta1;
  adam.beta2 = opt.adam_beta2;
  adam.eps = opt.adam_eps;
  adam.weight_decay = opt.weight_decay;
  int64_t start_step = 0;
  double best_val = -1.0;
  if (!opt.resume_from.empty()) {
    std::string header;
    model = HctModel::load(opt.resume_from, &header);
    auto kv = detail_train::parse_header(header);
    start_step = std::stoll(kv.at("run.step"));
    best_val = std::stod(kv.at("run.best_val"));
    adam.step_count = std::stoll(kv.at("adam.step_count"));
    if (!rng.restore_state(kv.at("run.rng_state"))) {
      throw IoError("resume: bad rng state in checkpoint header");
    }
    detail_train::load_opt_sidecar(opt.resume_from + ".opt", adam, model.parameters().size());
  }

  MetricsLog log(opt.run_dir + "/metrics.log");
  auto params = model.parameters();
  TrainHctResult result;
  result.checkpoint_path = opt.run_dir + "/hct.ckpt";
  result.last_checkpoint_path = opt.run_dir + "/hct_last.ckpt";

  for (int64_t step = start_step + 1; step <= opt.steps; ++step) {
    adam.lr = cosine_lr(opt.schedule, step - 1);
    const auto batch_idx =
        detail_train::sample_batch(rng, static_cast<int>(train_idx.size()), opt.batch);
    Tensor batch_loss;
    try {
      for (int bpos : batch_idx) {
        const TokenizedItem& it = items[static_cast<size_t>(train_idx[static_cast<size_t>(bpos)])];
        const std::string& caption =
            it.captions[rng.below(it.captions.size())];
        const TextEmbedding p = model.embed_prompt(caption);
        TokenGrid corrupted = corrupt_tokens(it.grid, cfg.corruption_rate, rng, cfg.codebook_size);
        auto logits = model.forward_teacher(corrupted, p, true, &rng);
        HctLoss l = HctModel::hct_loss(logits, it.grid);
        batch_loss = batch_loss.defined() ? add(batch_loss, l.loss) : l.loss;
      }
      batch_loss = mul_scalar(batch_loss, 1.0f / static_cast<float>(opt.batch));
      zero_grads(params);
      batch_loss.backward();
    } catch (const NumericFault& e) {
      detail_train::write_fault_dump(opt.run_dir, "hct", step, adam.lr, e.what(), params);
      throw NumericFault(std::string("train_hct aborted at step ") + std::to_string(step) + ": " +
                         e.what() + " (see fault_dump.txt)");
    }
    clip_grad_norm(params, opt.grad_clip);
    adam.step(params);
    result.steps_run = step;

    if (step % opt.val_interval == 0 || step == opt.steps) {
      const HctEval ev = evaluate_hct(model, items, val_idx);
      log.add(step, "train", "loss", batch_loss.item());
      log.add(step, "val", "loss", ev.loss_eq);
      log.add(step, "val", "loss_per_token", ev.loss_per_token);
      log.add(step, "val", "accuracy", ev.accuracy);
      if (!opt.quiet) {
        std::cerr << "[hct] step " << step << " lr " << adam.lr << " loss " << batch_loss.item()
                  << " val_acc " << ev.accuracy << "\n";
      }
      result.final_val_loss = ev.loss_eq;
      result.final_val_accuracy = ev.accuracy;
      if (best_val < 0.0 || ev.loss_eq < best_val) {
        best_val = ev.loss_eq;
        detail_train::save_hct_state(model, adam, rng, step, best_val, result.checkpoint_path);
      }
      if (opt.fid_interval > 0 && step % opt.fid_interval == 0) {
        log.add(step, "val", "fid", validation_fid(model, tok, stats, ds, val_idx,
                                                   opt.fid_samples));
      }
      if (opt.stop_accuracy > 0.0 && ev.accuracy >= opt.stop_accuracy) break;
    }
  }
  result.best_val_loss = best_val;
  detail_train::save_hct_state(model, adam, rng, result.steps_run, best_val,
                               result.last_checkpoint_path);
  return result;
}

}  // namespace mogo
