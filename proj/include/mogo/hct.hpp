#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "mogo/nn.hpp"
#include "mogo/rng.hpp"
#include "mogo/rvq.hpp"
#include "mogo/serialize.hpp"
#include "mogo/tensor.hpp"
#include "mogo/text_embed.hpp"

namespace mogo {

struct HctConfig {
  int d_model = 64;
  int num_quant_layers = 3;          // V+1, must match the tokenizer
  std::vector<int> heads = {4, 2, 2};
  std::vector<int> depths = {4, 2, 2};
  int codebook_size = 256;           // K
  int max_relative_distance = 512;   // distances beyond clamp to the last row
  float dropout = 0.0f;
  float corruption_rate = 0.5f;      // tau
  uint64_t text_seed = 2024;
  bool pnq_condition = true;         // single summed prefix vs [p, q] prefix rows
  int ffn_mult = 4;

  int prefix_rows() const { return pnq_condition ? 1 : 2; }

  void validate() const {
    if (d_model < 1) throw std::invalid_argument("hct: d_model must be >= 1");
    if (num_quant_layers < 1) throw std::invalid_argument("hct: num_quant_layers must be >= 1");
    if (static_cast<int>(heads.size()) != num_quant_layers ||
        static_cast<int>(depths.size()) != num_quant_layers) {
      throw std::invalid_argument("hct: heads/depths lists must have one entry per layer");
    }
    for (int h : heads) {
      if (h < 1 || h > d_model) {
        throw std::invalid_argument("hct: head counts must be in [1, d_model]");
      }
    }
    for (int d : depths) {
      if (d < 1) throw std::invalid_argument("hct: every depth must be >= 1");
    }
    if (codebook_size < 2) throw std::invalid_argument("hct: codebook_size must be >= 2");
    if (max_relative_distance < 1) {
      throw std::invalid_argument("hct: max_relative_distance must be >= 1");
    }
    if (corruption_rate < 0.0f || corruption_rate > 1.0f) {
      throw std::invalid_argument("hct: corruption_rate must be in [0,1]");
    }
  }
};

// Replaces each token independently with a uniform random id with
// probability tau. Applied to teacher-forcing inputs only, never to targets.
inline TokenGrid corrupt_tokens(const TokenGrid& grid, float tau, Rng& rng, int codebook_size) {
  if (tau < 0.0f || tau > 1.0f) throw std::invalid_argument("corrupt_tokens: tau must be in [0,1]");
  TokenGrid out = grid;
  if (tau == 0.0f) return out;
  for (auto& id : out.ids) {
    if (rng.uniform() < tau) id = static_cast<int32_t>(rng.below(static_cast<uint64_t>(codebook_size)));
  }
  return out;
}

// One attention block with the four-term relative-position scores: content
// against content, content against distance, plus the two global bias terms,
// every positional contribution entering through the shared R table.
// head_dim floors to d_model / heads; head counts that do not divide d_model
// (the published schedule pairs 12 heads with d_model 1024) project to an
// inner width of heads * head_dim.
struct RelAttention {
  int d_model = 0, heads = 0, head_dim = 0, max_dist = 0;
  Tensor wq, wke, wkr, wv;  // (d_model, heads * head_dim)
  Tensor wo;                // (heads * head_dim, d_model)
  Tensor u, vbias;          // (heads, head_dim)
  Tensor r_table;           // (max_dist + 1, d_model), distance 0 first

  static RelAttention make(int d_model, int heads, int max_dist, Rng& rng, bool trainable) {
    RelAttention a;
    a.d_model = d_model;
    a.heads = heads;
    a.head_dim = d_model / heads;
    a.max_dist = max_dist;
    const int inner = heads * a.head_dim;
    const float ws = 1.0f / std::sqrt(static_cast<float>(d_model));
    a.wq = Tensor::randn({d_model, inner}, rng, ws, trainable);
    a.wke = Tensor::randn({d_model, inner}, rng, ws, trainable);
    a.wkr = Tensor::randn({d_model, inner}, rng, ws, trainable);
    a.wv = Tensor::randn({d_model, inner}, rng, ws, trainable);
    a.wo = Tensor::randn({inner, d_model}, rng, ws, trainable);
    a.u = Tensor::zeros({heads, a.head_dim}, trainable);
    a.vbias = Tensor::zeros({heads, a.head_dim}, trainable);
    a.r_table = Tensor::randn({max_dist + 1, d_model}, rng, 0.02f, trainable);
    return a;
  }

  // Unscaled, unmasked score matrix for one head; the per-head building
  // block the term-by-term oracle checks against.
  Tensor head_scores(const Tensor& x, int h) const {
    const int n = x.dim(0);
    Tensor q = slice_cols(matmul(x, wq), h * head_dim, (h + 1) * head_dim);
    Tensor k = slice_cols(matmul(x, wke), h * head_dim, (h + 1) * head_dim);
    Tensor r_rows = slice_rows(r_table, 0, std::min(n, max_dist + 1));
    Tensor p = slice_cols(matmul(r_rows, wkr), h * head_dim, (h + 1) * head_dim);
    Tensor u_h = reshape(slice_rows(u, h, h + 1), {head_dim});
    Tensor v_h = reshape(slice_rows(vbias, h, h + 1), {head_dim});
    Tensor content = matmul(add_rowvec(q, u_h), transpose(k));   // terms (a) + (c)
    Tensor positional = rel_pos_scores(add_rowvec(q, v_h), p);   // terms (b) + (d)
    return add(content, positional);
  }

  Tensor forward(const Tensor& x, float drop_rate, bool training, Rng* rng) const {
    const int n = x.dim(0);
    Tensor q = matmul(x, wq);
    Tensor k = matmul(x, wke);
    Tensor v = matmul(x, wv);
    Tensor r_rows = slice_rows(r_table, 0, std::min(n, max_dist + 1));
    Tensor p_all = matmul(r_rows, wkr);
    const float scale = 1.0f / std::sqrt(static_cast<float>(head_dim));
    std::vector<Tensor> head_outs;
    head_outs.reserve(static_cast<size_t>(heads));
    for (int h = 0; h < heads; ++h) {
      const int c0 = h * head_dim, c1 = (h + 1) * head_dim;
      Tensor qh = slice_cols(q, c0, c1);
      Tensor kh = slice_cols(k, c0, c1);
      Tensor vh = slice_cols(v, c0, c1);
      Tensor ph = slice_cols(p_all, c0, c1);
      Tensor u_h = reshape(slice_rows(u, h, h + 1), {head_dim});
      Tensor v_h = reshape(slice_rows(vbias, h, h + 1), {head_dim});
      Tensor scores = add(matmul(add_rowvec(qh, u_h), transpose(kh)),
                          rel_pos_scores(add_rowvec(qh, v_h), ph));
      Tensor weights = masked_softmax_causal(mul_scalar(scores, scale));
      head_outs.push_back(matmul(weights, vh));
    }
    Tensor out = matmul(heads > 1 ? concat_cols(head_outs) : head_outs[0], wo);
    if (training && drop_rate > 0.0f && rng) out = dropout(out, drop_rate, *rng, true);
    return out;
  }
};

struct HctBlock {
  RelAttention attn;
  Tensor ln1_g, ln1_b, ln2_g, ln2_b;
  Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;

  static HctBlock make(int d_model, int heads, int max_dist, int ffn_mult, Rng& rng,
                       bool trainable) {
    HctBlock b;
    b.attn = RelAttention::make(d_model, heads, max_dist, rng, trainable);
    b.ln1_g = Tensor::full({d_model}, 1.0f, trainable);
    b.ln1_b = Tensor::zeros({d_model}, trainable);
    b.ln2_g = Tensor::full({d_model}, 1.0f, trainable);
    b.ln2_b = Tensor::zeros({d_model}, trainable);
    const int hidden = d_model * ffn_mult;
    b.ffn_w1 = Tensor::randn({d_model, hidden}, rng, 1.0f / std::sqrt(static_cast<float>(d_model)),
                             trainable);
    b.ffn_b1 = Tensor::zeros({hidden}, trainable);
    b.ffn_w2 = Tensor::randn({hidden, d_model}, rng, 1.0f / std::sqrt(static_cast<float>(hidden)),
                             trainable);
    b.ffn_b2 = Tensor::zeros({d_model}, trainable);
    return b;
  }

  // pre-norm residual block
  Tensor forward(const Tensor& x, float drop_rate, bool training, Rng* rng) const {
    Tensor h = add(x, attn.forward(layernorm(x, ln1_g, ln1_b), drop_rate, training, rng));
    Tensor f = gelu(add_rowvec(matmul(layernorm(h, ln2_g, ln2_b), ffn_w1), ffn_b1));
    if (training && drop_rate > 0.0f && rng) f = dropout(f, drop_rate, *rng, true);
    f = add_rowvec(matmul(f, ffn_w2), ffn_b2);
    return add(h, f);
  }
};

struct HctLoss {
  Tensor loss;       // Eq-style sum over positions and layers, / batch size
  int64_t tokens = 0;  // valid (position, layer) cells contributing
  int64_t correct = 0; // argmax matches among those cells
};

// V+1 sub-transformers over a shared token embedding. Sub-transformer v
// consumes the text+layer condition prefix followed by the cumulative token
// embeddings of layers 0..v, and predicts layer v's next token everywhere.
class HctModel {
 public:
  HctModel() = default;

  HctModel(const HctConfig& cfg, Rng& rng, bool trainable = true) : cfg_(cfg) {
    cfg_.validate();
    const float es = 0.02f;
    tok_emb_ = Tensor::randn({cfg_.codebook_size, cfg_.d_model}, rng, es, trainable);
    layer_emb_ = Tensor::randn({cfg_.num_quant_layers, cfg_.d_model}, rng, es, trainable);
    text_w_ = Tensor::randn({cfg_.d_model, cfg_.d_model}, rng,
                            1.0f / std::sqrt(static_cast<float>(cfg_.d_model)), trainable);
    text_b_ = Tensor::zeros({cfg_.d_model}, trainable);
    stacks_.resize(static_cast<size_t>(cfg_.num_quant_layers));
    for (int v = 0; v < cfg_.num_quant_layers; ++v) {
      for (int d = 0; d < cfg_.depths[static_cast<size_t>(v)]; ++d) {
        stacks_[static_cast<size_t>(v)].push_back(
            HctBlock::make(cfg_.d_model, cfg_.heads[static_cast<size_t>(v)],
                           cfg_.max_relative_distance, cfg_.ffn_mult, rng, trainable));
      }
      lnf_g_.push_back(Tensor::full({cfg_.d_model}, 1.0f, trainable));
      lnf_b_.push_back(Tensor::zeros({cfg_.d_model}, trainable));
      // half-scale head init keeps the initial loss near the uniform ln(K)
      head_w_.push_back(Tensor::randn({cfg_.d_model, cfg_.codebook_size}, rng,
                                      0.5f / std::sqrt(static_cast<float>(cfg_.d_model)),
                                      trainable));
      head_b_.push_back(Tensor::zeros({cfg_.codebook_size}, trainable));
    }
  }

  const HctConfig& config() const { return cfg_; }

  int stack_depth(int v) const { return static_cast<int>(stacks_[static_cast<size_t>(v)].size()); }

  std::vector<float> q_embedding(int v) const {
    const auto& w = layer_emb_.values();
    return std::vector<float>(w.begin() + static_cast<size_t>(v) * cfg_.d_model,
                              w.begin() + static_cast<size_t>(v + 1) * cfg_.d_model);
  }

  const RelAttention& attention(int v, int block) const {
    return stacks_[static_cast<size_t>(v)][static_cast<size_t>(block)].attn;
  }

  std::vector<Tensor> parameters() {
    std::vector<Tensor> out;
    for (auto& [name, t] : named_parameters()) out.push_back(t);
    return out;
  }

  int64_t parameter_count() {
    int64_t n = 0;
    for (auto& [name, t] : named_parameters()) n += t.numel();
    return n;
  }

  std::vector<std::pair<std::string, Tensor>> named_parameters() {
    std::vector<std::pair<std::string, Tensor>> out;
    out.emplace_back("tok_emb", tok_emb_);
    out.emplace_back("layer_emb", layer_emb_);
    out.emplace_back("text.w", text_w_);
    out.emplace_back("text.b", text_b_);
    for (int v = 0; v < cfg_.num_quant_layers; ++v) {
      const std::string lp = "layer" + std::to_string(v) + ".";
      auto& stack = stacks_[static_cast<size_t>(v)];
      for (size_t bi = 0; bi < stack.size(); ++bi) {
        const std::string bp = lp + "block" + std::to_string(bi) + ".";
        HctBlock& b = stack[bi];
        out.emplace_back(bp + "attn.wq", b.attn.wq);
        out.emplace_back(bp + "attn.wke", b.attn.wke);
        out.emplace_back(bp + "attn.wkr", b.attn.wkr);
        out.emplace_back(bp + "attn.wv", b.attn.wv);
        out.emplace_back(bp + "attn.wo", b.attn.wo);
        out.emplace_back(bp + "attn.u", b.attn.u);
        out.emplace_back(bp + "attn.vbias", b.attn.vbias);
        out.emplace_back(bp + "attn.r_table", b.attn.r_table);
        out.emplace_back(bp + "ln1.g", b.ln1_g);
        out.emplace_back(bp + "ln1.b", b.ln1_b);
        out.emplace_back(bp + "ln2.g", b.ln2_g);
        out.emplace_back(bp + "ln2.b", b.ln2_b);
        out.emplace_back(bp + "ffn.w1", b.ffn_w1);
        out.emplace_back(bp + "ffn.b1", b.ffn_b1);
        out.emplace_back(bp + "ffn.w2", b.ffn_w2);
        out.emplace_back(bp + "ffn.b2", b.ffn_b2);
      }
      out.emplace_back(lp + "lnf.g", lnf_g_[static_cast<size_t>(v)]);
      out.emplace_back(lp + "lnf.b", lnf_b_[static_cast<size_t>(v)]);
      out.emplace_back(lp + "head.w", head_w_[static_cast<size_t>(v)]);
      out.emplace_back(lp + "head.b", head_b_[static_cast<size_t>(v)]);
    }
    return out;
  }

  // Projected text condition (1, d_model); trained jointly via text.w/b.
  Tensor project_text(const TextEmbedding& p) const {
    if (static_cast<int>(p.vector.size()) != cfg_.d_model) {
      throw ShapeError("project_text: embedding dim " + std::to_string(p.vector.size()) +
                       " != d_model " + std::to_string(cfg_.d_model));
    }
    Tensor pv = Tensor::of({1, cfg_.d_model}, p.vector);
    return add_rowvec(matmul(pv, text_w_), text_b_);
  }

  // Input rows for sub-transformer v given the first `count` grid positions:
  // the condition prefix, then per position the sum of token embeddings of
  // layers 0..v. Layers above v in the grid are ignored.
  Tensor build_layer_input(const Tensor& p_proj, int v, const TokenGrid& grid, int count) const {
    if (v < 0 || v >= cfg_.num_quant_layers) {
      throw std::invalid_argument("build_layer_input: layer index " + std::to_string(v) +
                                  " out of range");
    }
    if (grid.num_layers < v + 1) {
      throw std::invalid_argument("build_layer_input: grid has " +
                                  std::to_string(grid.num_layers) + " layers, need " +
                                  std::to_string(v + 1));
    }
    if (count > grid.length) {
      throw std::invalid_argument("build_layer_input: prefix length exceeds grid");
    }
    Tensor q_emb = slice_rows(layer_emb_, v, v + 1);  // (1, d_model)
    std::vector<Tensor> rows;
    if (cfg_.pnq_condition) {
      rows.push_back(add(p_proj, q_emb));
    } else {
      rows.push_back(p_proj);
      rows.push_back(q_emb);
    }
    if (count > 0) {
      Tensor emb = embedding_lookup(tok_emb_, grid.layer_ids(0, count));
      for (int w = 1; w <= v; ++w) {
        emb = add(emb, embedding_lookup(tok_emb_, grid.layer_ids(w, count)));
      }
      rows.push_back(emb);
    }
    return rows.size() == 1 ? rows[0] : concat_rows(rows);
  }

  // Runs sub-transformer v over prepared input rows and returns logits for
  // every row (the last prefix row predicts position 0).
  Tensor forward_layer(int v, const Tensor& input, bool training, Rng* rng) const {
    Tensor x = input;
    for (const auto& block : stacks_[static_cast<size_t>(v)]) {
      x = block.forward(x, cfg_.dropout, training, rng);
    }
    x = layernorm(x, lnf_g_[static_cast<size_t>(v)], lnf_b_[static_cast<size_t>(v)]);
    return add_rowvec(matmul(x, head_w_[static_cast<size_t>(v)]), head_b_[static_cast<size_t>(v)]);
  }

  // Teacher forcing: inputs are the grid's first n-1 positions (callers pass
  // an already-corrupted grid during training); logits row i predicts
  // position i of every layer. Returns one (n, K) logits tensor per layer.
  std::vector<Tensor> forward_teacher(const TokenGrid& input_grid, const TextEmbedding& p,
                                      bool training = false, Rng* rng = nullptr) const {
    if (input_grid.num_layers != cfg_.num_quant_layers) {
      throw std::invalid_argument("forward_teacher: grid layers " +
                                  std::to_string(input_grid.num_layers) + " != model layers " +
                                  std::to_string(cfg_.num_quant_layers));
    }
    const int n = input_grid.length;
    Tensor p_proj = project_text(p);
    std::vector<Tensor> logits;
    logits.reserve(static_cast<size_t>(cfg_.num_quant_layers));
    const int extra = cfg_.prefix_rows() - 1;  // rows before the predictive one
    for (int v = 0; v < cfg_.num_quant_layers; ++v) {
      Tensor input = build_layer_input(p_proj, v, input_grid, n - 1);
      Tensor out = forward_layer(v, input, training, rng);
      // with a 2-row prefix the first row's logits precede position 0
      logits.push_back(extra > 0 ? slice_rows(out, extra, out.dim(0)) : out);
    }
    return logits;
  }

  // Eq-style maximum likelihood loss: cross-entropy summed over valid
  // positions and all layers. valid_len masks positions >= valid_len with
  // exactly zero gradient. Divide by batch size at the call site.
  static HctLoss hct_loss(const std::vector<Tensor>& logits, const TokenGrid& targets,
                          int valid_len = -1) {
    if (valid_len < 0) valid_len = targets.length;
    if (valid_len > targets.length) {
      throw std::invalid_argument("hct_loss: valid_len exceeds target grid length");
    }
    HctLoss out;
    Tensor total;
    for (int v = 0; v < targets.num_layers; ++v) {
      const Tensor& lg = logits[static_cast<size_t>(v)];
      if (lg.dim(0) != targets.length) {
        throw std::invalid_argument("hct_loss: logits rows " + std::to_string(lg.dim(0)) +
                                    " != target length " + std::to_string(targets.length));
      }
      std::vector<int32_t> tgt(static_cast<size_t>(targets.length));
      std::vector<float> weights(static_cast<size_t>(targets.length), 0.0f);
      for (int pos = 0; pos < targets.length; ++pos) {
        tgt[static_cast<size_t>(pos)] = targets.at(pos, v);
        if (pos < valid_len) weights[static_cast<size_t>(pos)] = 1.0f;
      }
      Tensor ce = cross_entropy(lg, tgt, Reduction::kSum, weights);
      total = total.defined() ? add(total, ce) : ce;
      // argmax accuracy over the valid cells
      const auto& lv = lg.values();
      const int k = lg.dim(1);
      for (int pos = 0; pos < valid_len; ++pos) {
        const float* row = lv.data() + static_cast<size_t>(pos) * k;
        int best = 0;
        for (int c = 1; c < k; ++c) {
          if (row[c] > row[best]) best = c;
        }
        out.tokens += 1;
        out.correct += best == tgt[static_cast<size_t>(pos)];
      }
    }
    out.loss = total;
    return out;
  }

  void save(const std::string& path, const std::string& extra_header = "") {
    std::ostringstream header;
    header << "hct.d_model = " << cfg_.d_model << "\n"
           << "hct.num_layers = " << cfg_.num_quant_layers << "\n"
           << "hct.heads = " << join(cfg_.heads) << "\n"
           << "hct.depths = " << join(cfg_.depths) << "\n"
           << "hct.codebook_size = " << cfg_.codebook_size << "\n"
           << "hct.max_rel_distance = " << cfg_.max_relative_distance << "\n"
           << "hct.dropout = " << cfg_.dropout << "\n"
           << "hct.corruption_rate = " << cfg_.corruption_rate << "\n"
           << "hct.text_seed = " << cfg_.text_seed << "\n"
           << "hct.pnq_condition = " << (cfg_.pnq_condition ? "true" : "false") << "\n"
           << "hct.ffn_mult = " << cfg_.ffn_mult << "\n"
           << extra_header;
    CheckpointWriter w(path, "HCT1", header.str());
    for (auto& [name, t] : named_parameters()) w.add(name, t);
    w.finish();
  }

  static HctModel load(const std::string& path, std::string* header_out = nullptr,
                       bool trainable = true) {
    const Checkpoint ck = Checkpoint::load(path);
    if (ck.magic != "HCT1") throw IoError("not a model checkpoint: " + path);
    HctConfig cfg;
    std::istringstream is(ck.header);
    std::string line;
    std::map<std::string, std::string> kv;
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
    auto need = [&](const std::string& k) -> const std::string& {
      auto it = kv.find(k);
      if (it == kv.end()) throw IoError("model checkpoint header missing '" + k + "'");
      return it->second;
    };
    cfg.d_model = std::stoi(need("hct.d_model"));
    cfg.num_quant_layers = std::stoi(need("hct.num_layers"));
    cfg.heads = parse_list(need("hct.heads"));
    cfg.depths = parse_list(need("hct.depths"));
    cfg.codebook_size = std::stoi(need("hct.codebook_size"));
    cfg.max_relative_distance = std::stoi(need("hct.max_rel_distance"));
    cfg.dropout = std::stof(need("hct.dropout"));
    cfg.corruption_rate = std::stof(need("hct.corruption_rate"));
    cfg.text_seed = std::stoull(need("hct.text_seed"));
    cfg.pnq_condition = need("hct.pnq_condition") == "true";
    cfg.ffn_mult = std::stoi(need("hct.ffn_mult"));
    Rng tmp(1);
    HctModel model(cfg, tmp, trainable);
    for (auto& [name, t] : model.named_parameters()) {
      const TensorRecord& rec = ck.at(name);
      if (rec.shape != t.shape()) throw IoError("checkpoint tensor '" + name + "' shape mismatch");
      t.values() = rec.data;
    }
    if (header_out) *header_out = ck.header;
    return model;
  }

  TextEmbedding embed_prompt(const std::string& text) const {
    return embed_text(text, cfg_.text_seed, cfg_.d_model);
  }

 private:
  static std::string join(const std::vector<int>& v) {
    std::string s;
    for (size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + std::to_string(v[i]);
    return s;
  }

  static std::vector<int> parse_list(const std::string& s) {
    std::vector<int> out;
    std::stringstream ss(s);
    std::string part;
    while (std::getline(ss, part, ',')) out.push_back(std::stoi(part));
    return out;
  }

  HctConfig cfg_;
  Tensor tok_emb_;
  Tensor layer_emb_;
  Tensor text_w_, text_b_;
  std::vector<std::vector<HctBlock>> stacks_;
  std::vector<Tensor> lnf_g_, lnf_b_;
  std::vector<Tensor> head_w_, head_b_;
};

}  // namespace mogo
