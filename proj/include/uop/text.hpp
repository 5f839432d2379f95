#pragma once

#include <string>
#include <vector>

#include "uop/graph.hpp"
#include "uop/nn.hpp"
#include "uop/rng.hpp"
#include "uop/tensor.hpp"

namespace uop {

// Lowercase + whitespace split; token -> id by stable hash mod vocab size.
struct Tokenizer {
  int64_t vocab_size = 1024;
  std::vector<std::string> split(const std::string& text) const;
  std::vector<int64_t> tokenize(const std::string& text) const;
};

// Frozen stand-in for a pretrained text tower: hash each token to a fixed
// seeded vector, average over the sentence, apply a fixed linear map, then
// L2-normalize. Deterministic given (seed, dim).
class TeacherEncoder {
 public:
  TeacherEncoder(uint64_t seed, int64_t dim);
  int64_t dim() const { return dim_; }
  std::vector<double> encode(const std::string& sentence) const;
  Tensor encode_all(const std::vector<std::string>& sentences) const;  // [K,D]

 private:
  std::vector<double> token_vector(const std::string& token) const;
  uint64_t seed_;
  int64_t dim_;
  Tensor mix_;  // [D,D]
};

// Trainable student: token embedding table + one positional-encoding-free
// attention block + output projection; sentence embedding is the mean over
// token outputs. Width matches the teacher.
class StudentEncoder {
 public:
  StudentEncoder() = default;
  StudentEncoder(ParamStore& ps, const std::string& name, int64_t vocab_size, int64_t dim,
                 int layers, int heads, Rng& rng, double lr_mult);

  // One row per sentence, [K,D]. Throws on empty strings.
  int encode_sentences(Tape& t, const ParamStore& ps,
                       const std::vector<std::string>& sentences) const;
  int encode_expression(Tape& t, const ParamStore& ps, const std::string& expr) const {
    return encode_sentences(t, ps, {expr});
  }

  Tokenizer tokenizer;

 private:
  struct Block {
    LayerNorm ln1, ln2;
    MultiheadAttention attn;
    Mlp ffn;
  };
  int64_t dim_ = 0;
  int embed_ = -1;  // [V,D]
  std::vector<Block> blocks_;
  LayerNorm final_ln_;
  Linear out_;
};

// Spec-level convenience wrappers.
int encode_categories(Tape& t, const ParamStore& ps, const StudentEncoder& student,
                      const std::vector<std::string>& names);  // [K,D]

// Positives preserved, remaining slots drawn (distinct) from the pool.
std::vector<int> pad_category_list(const std::vector<int>& positives,
                                   const std::vector<int>& negative_pool, size_t target_size,
                                   Rng& rng);

// (1/K) sum_i |student_i - teacher_i|_1 ; plain reference form.
double distillation_loss(const Tensor& student, const Tensor& teacher);

}  // namespace uop
