#include "uop/text.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>

namespace uop {

std::vector<std::string> Tokenizer::split(const std::string& text) const {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : text) {
    if (std::isspace(static_cast<unsigned char>(ch))) {
      if (!cur.empty()) {
        out.push_back(cur);
        cur.clear();
      }
    } else {
      cur.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

std::vector<int64_t> Tokenizer::tokenize(const std::string& text) const {
  std::vector<int64_t> ids;
  for (const auto& tok : split(text))
    ids.push_back(static_cast<int64_t>(fnv1a(tok) % static_cast<uint64_t>(vocab_size)));
  return ids;
}

// ---------------------------------------------------------------------------

TeacherEncoder::TeacherEncoder(uint64_t seed, int64_t dim) : seed_(seed), dim_(dim) {
  Rng rng(fnv1a("teacher-mix", seed));
  mix_ = Tensor({dim, dim});
  const double sigma = 1.0 / std::sqrt(static_cast<double>(dim));
  for (auto& x : mix_.v) x = rng.normal() * sigma;
}

std::vector<double> TeacherEncoder::token_vector(const std::string& token) const {
  Rng rng(fnv1a(token, fnv1a("teacher-token", seed_)));
  std::vector<double> v(dim_);
  for (auto& x : v) x = rng.normal();
  return v;
}

std::vector<double> TeacherEncoder::encode(const std::string& sentence) const {
  Tokenizer tok;
  const auto words = tok.split(sentence);
  UOP_CHECK(!words.empty(), "teacher encode: empty sentence");
  std::vector<double> mean(dim_, 0.0);
  for (const auto& w : words) {
    const auto tv = token_vector(w);
    for (int64_t i = 0; i < dim_; ++i) mean[i] += tv[i];
  }
  for (auto& x : mean) x /= static_cast<double>(words.size());
  // fixed linear map, then L2 normalize
  std::vector<double> out(dim_, 0.0);
  for (int64_t i = 0; i < dim_; ++i)
    for (int64_t j = 0; j < dim_; ++j) out[i] += mix_.at(j, i) * mean[j];
  double nrm = 0.0;
  for (double x : out) nrm += x * x;
  nrm = std::sqrt(nrm);
  if (nrm > 0.0)
    for (auto& x : out) x /= nrm;
  return out;
}

Tensor TeacherEncoder::encode_all(const std::vector<std::string>& sentences) const {
  Tensor out({static_cast<int64_t>(sentences.size()), dim_});
  for (size_t i = 0; i < sentences.size(); ++i) {
    const auto row = encode(sentences[i]);
    std::copy(row.begin(), row.end(), out.v.begin() + static_cast<int64_t>(i) * dim_);
  }
  return out;
}

// ---------------------------------------------------------------------------

StudentEncoder::StudentEncoder(ParamStore& ps, const std::string& name, int64_t vocab_size,
                               int64_t dim, int layers, int heads, Rng& rng, double lr_mult)
    : dim_(dim) {
  tokenizer.vocab_size = vocab_size;
  Tensor table({vocab_size, dim});
  for (auto& x : table.v) x = rng.normal() * 0.2;
  embed_ = ps.create(name + ".embed", std::move(table), lr_mult);
  for (int l = 0; l < layers; ++l) {
    Block b;
    const std::string base = name + ".block" + std::to_string(l);
    b.ln1 = LayerNorm::create(ps, base + ".ln1", dim, lr_mult);
    b.ln2 = LayerNorm::create(ps, base + ".ln2", dim, lr_mult);
    b.attn = MultiheadAttention::create(ps, base + ".attn", dim, heads, rng, true, true, lr_mult);
    b.ffn = Mlp::create(ps, base + ".ffn", {dim, 2 * dim, dim}, true, rng, lr_mult);
    blocks_.push_back(b);
  }
  final_ln_ = LayerNorm::create(ps, name + ".final_ln", dim, lr_mult);
  out_ = Linear::create(ps, name + ".out", dim, dim, true, rng, lr_mult);
}

int StudentEncoder::encode_sentences(Tape& t, const ParamStore& ps,
                                     const std::vector<std::string>& sentences) const {
  UOP_CHECK(!sentences.empty(), "encode_sentences: need at least one sentence");
  std::vector<int> rows;
  rows.reserve(sentences.size());
  for (const auto& s : sentences) {
    const auto ids = tokenizer.tokenize(s);
    UOP_CHECK(!ids.empty(), "empty category name");
    int x = t.gather_rows(ps.node(embed_), ids);  // [L,D]
    for (const auto& b : blocks_) {
      const int n1 = b.ln1.apply(t, ps, x);
      x = t.add(x, b.attn.apply(t, ps, n1, n1));
      x = t.add(x, b.ffn.apply(t, ps, b.ln2.apply(t, ps, x)));
    }
    x = final_ln_.apply(t, ps, x);
    rows.push_back(t.mean_rows(x));  // [1,D]
  }
  const int stacked = rows.size() == 1 ? rows[0] : t.concat_rows(rows);
  return out_.apply(t, ps, stacked);
}

int encode_categories(Tape& t, const ParamStore& ps, const StudentEncoder& student,
                      const std::vector<std::string>& names) {
  UOP_CHECK(!names.empty(), "encode_categories: K must be >= 1");
  return student.encode_sentences(t, ps, names);
}

std::vector<int> pad_category_list(const std::vector<int>& positives,
                                   const std::vector<int>& negative_pool, size_t target_size,
                                   Rng& rng) {
  if (positives.size() >= target_size) return positives;
  std::set<int> pos_set(positives.begin(), positives.end());
  std::vector<int> pool;
  for (int id : negative_pool)
    if (!pos_set.count(id)) pool.push_back(id);
  const size_t need = target_size - positives.size();
  UOP_CHECK(pool.size() >= need, "negative pool exhausted");
  std::vector<int> out = positives;
  for (size_t idx : rng.sample_without_replacement(pool.size(), need))
    out.push_back(pool[idx]);
  return out;
}

double distillation_loss(const Tensor& student, const Tensor& teacher) {
  UOP_CHECK(student.same_shape(teacher), "distillation_loss: shape mismatch");
  const int64_t k = student.rows();
  double total = 0.0;
  for (int64_t i = 0; i < student.numel(); ++i)
    total += std::fabs(student.v[i] - teacher.v[i]);
  return total / static_cast<double>(k);
}

}  // namespace uop
