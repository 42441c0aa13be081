#pragma once

#include <cctype>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "mogo/rng.hpp"

namespace mogo {

// Lowercase, strip surrounding punctuation, fold a plural 's' on longer
// tokens so e.g. "walks" and "walk" share a hash row.
inline std::vector<std::string> tokenize_text(const std::string& text) {
  std::vector<std::string> tokens;
  std::string cur;
  auto flush = [&]() {
    while (!cur.empty() && !std::isalnum(static_cast<unsigned char>(cur.back()))) cur.pop_back();
    size_t start = 0;
    while (start < cur.size() && !std::isalnum(static_cast<unsigned char>(cur[start]))) ++start;
    std::string tok = cur.substr(start);
    cur.clear();
    if (tok.empty()) return;
    if (tok.size() >= 4 && tok.back() == 's') tok.pop_back();
    tokens.push_back(std::move(tok));
  };
  for (char ch : text) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      flush();
    } else {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    }
  }
  flush();
  return tokens;
}

struct TextEmbedding {
  std::vector<float> vector;
  std::string source_text;
};

// Vocabulary-free sentence encoder: each token hashes into a seeded random
// projection row, rows are averaged and L2-normalized. Pure function of
// (text, table_seed, dim); the learned projection to the model comes later.
inline TextEmbedding embed_text(const std::string& text, uint64_t table_seed, int dim) {
  const std::vector<std::string> tokens = tokenize_text(text);
  if (tokens.empty()) {
    throw std::invalid_argument("embed_text: text has no tokens: '" + text + "'");
  }
  TextEmbedding emb;
  emb.source_text = text;
  emb.vector.assign(static_cast<size_t>(dim), 0.0f);
  for (const auto& tok : tokens) {
    const uint64_t h = Rng::fnv1a(tok.data(), tok.size());
    uint64_t mix = table_seed ^ (h * 0x9e3779b97f4a7c15ull);
    Rng row_rng(Rng::splitmix64(mix));
    for (int i = 0; i < dim; ++i) emb.vector[static_cast<size_t>(i)] += row_rng.normal();
  }
  const float inv_count = 1.0f / static_cast<float>(tokens.size());
  double norm_sq = 0.0;
  for (auto& v : emb.vector) {
    v *= inv_count;
    norm_sq += static_cast<double>(v) * v;
  }
  const float inv_norm = static_cast<float>(1.0 / std::sqrt(std::max(norm_sq, 1e-30)));
  for (auto& v : emb.vector) v *= inv_norm;
  return emb;
}

inline float cosine_similarity(const std::vector<float>& a, const std::vector<float>& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (size_t i = 0; i < a.size(); ++i) {
    dot += static_cast<double>(a[i]) * b[i];
    na += static_cast<double>(a[i]) * a[i];
    nb += static_cast<double>(b[i]) * b[i];
  }
  return static_cast<float>(dot / std::sqrt(std::max(na * nb, 1e-30)));
}

}  // namespace mogo
