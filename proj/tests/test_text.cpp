#include <doctest.h>

#include <set>

#include "helpers.hpp"
#include "uop/losses.hpp"
#include "uop/text.hpp"

using namespace uop;
using namespace uop::testing;

TEST_CASE("tokenizer lowercases, splits on whitespace, hashes stably") {
  Tokenizer tok;
  const auto words = tok.split("  The RED  Square ");
  REQUIRE(words.size() == 3);
  CHECK(words[0] == "the");
  CHECK(words[1] == "red");
  const auto ids1 = tok.tokenize("the red square");
  const auto ids2 = tok.tokenize("THE red SQUARE");
  CHECK(ids1 == ids2);
  for (auto id : ids1) {
    CHECK(id >= 0);
    CHECK(id < tok.vocab_size);
  }
  CHECK(tok.tokenize("   ").empty());
}

TEST_CASE("teacher encoder is deterministic across instances and L2-normalized") {
  const TeacherEncoder t1(42, 16), t2(42, 16);
  const auto a = t1.encode("a striped cat");
  const auto b = t2.encode("a striped cat");
  REQUIRE(a.size() == 16);
  for (size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
  double norm = 0;
  for (double x : a) norm += x * x;
  CHECK(norm == doctest::Approx(1.0).epsilon(1e-12));
  const TeacherEncoder t3(43, 16);
  const auto c = t3.encode("a striped cat");
  bool differs = false;
  for (size_t i = 0; i < a.size(); ++i) differs = differs || a[i] != c[i];
  CHECK(differs);
  CHECK_THROWS(t1.encode("   "));
}

namespace {
struct StudentFixture {
  ParamStore ps;
  StudentEncoder student;
  StudentFixture(int layers, int64_t dim = 12, int64_t vocab = 64) {
    Rng rng(5);
    student = StudentEncoder(ps, "stud", vocab, dim, layers, 2, rng, 1.0);
  }
  Tensor encode(const std::vector<std::string>& names) {
    Tape t;
    t.grad_enabled = false;
    ps.mount(t);
    return t.val(student.encode_sentences(t, ps, names));
  }
};
}  // namespace

TEST_CASE("encode_categories: repeated names give identical rows, empty names throw") {
  StudentFixture f(1);
  const Tensor rows = f.encode({"circle", "square", "circle"});
  REQUIRE(rows.rows() == 3);
  for (int64_t c = 0; c < rows.cols(); ++c) CHECK(rows.at(0, c) == rows.at(2, c));
  CHECK_THROWS_WITH(f.encode({"circle", ""}), doctest::Contains("empty category name"));
}

TEST_CASE("single-token sentences equal their duplicated-token sentences") {
  // attention without positions + mean pooling: "red" and "red red" coincide
  StudentFixture f(1);
  const Tensor a = f.encode({"red"});
  const Tensor b = f.encode({"red red"});
  for (int64_t c = 0; c < a.cols(); ++c)
    CHECK(a.at(0, c) == doctest::Approx(b.at(0, c)).epsilon(1e-9));
}

TEST_CASE("token-order permutation leaves the embedding unchanged") {
  StudentFixture f(1);
  const Tensor a = f.encode({"the red square"});
  const Tensor b = f.encode({"square red the"});
  for (int64_t c = 0; c < a.cols(); ++c)
    CHECK(a.at(0, c) == doctest::Approx(b.at(0, c)).epsilon(1e-9));
}

TEST_CASE("with a bag-of-tokens stand-in the rows equal independent token means") {
  // zero attention blocks: encode = out_linear(mean(final_ln(embed[token])))
  StudentFixture f(0);
  const std::vector<std::string> names = {"small red circle", "the blue square",
                                          "big green triangle"};
  const Tensor rows = f.encode(names);

  const auto& table = f.ps.find("stud.embed")->value;
  const auto& gamma = f.ps.find("stud.final_ln.gamma")->value;
  const auto& beta = f.ps.find("stud.final_ln.beta")->value;
  const auto& w = f.ps.find("stud.out.w")->value;
  const auto& b = f.ps.find("stud.out.b")->value;
  Tokenizer tok;
  tok.vocab_size = 64;
  for (size_t s = 0; s < names.size(); ++s) {
    const auto ids = tok.tokenize(names[s]);
    const int64_t d = table.cols();
    std::vector<double> mean(d, 0.0);
    for (auto id : ids) {
      double mu = 0, var = 0;
      for (int64_t c = 0; c < d; ++c) mu += table.at(id, c);
      mu /= static_cast<double>(d);
      for (int64_t c = 0; c < d; ++c)
        var += (table.at(id, c) - mu) * (table.at(id, c) - mu);
      var /= static_cast<double>(d);
      const double inv = 1.0 / std::sqrt(var + 1e-5);
      for (int64_t c = 0; c < d; ++c)
        mean[c] += gamma.v[c] * ((table.at(id, c) - mu) * inv) + beta.v[c];
    }
    for (auto& x : mean) x /= static_cast<double>(ids.size());
    for (int64_t c = 0; c < d; ++c) {
      double out = b.v[c];
      for (int64_t cc = 0; cc < d; ++cc) out += mean[cc] * w.at(cc, c);
      CHECK(rows.at(static_cast<int64_t>(s), c) == doctest::Approx(out).epsilon(1e-9));
    }
  }
}

TEST_CASE("pad_category_list pads with distinct negatives and preserves positives") {
  Rng rng(11);
  std::vector<int> positives = {3, 500, 77};
  std::vector<int> pool;
  for (int i = 0; i < 1200; ++i)
    if (i != 3 && i != 500 && i != 77) pool.push_back(i);
  const auto padded = pad_category_list(positives, pool, 100, rng);
  REQUIRE(padded.size() == 100);
  std::set<int> seen(padded.begin(), padded.end());
  CHECK(seen.size() == 100);  // no duplicates
  for (int p : positives) CHECK(seen.count(p) == 1);
  CHECK(padded[0] == 3);
  CHECK(padded[1] == 500);
  CHECK(padded[2] == 77);

  std::vector<int> full(100);
  for (int i = 0; i < 100; ++i) full[i] = i;
  Rng r2(1);
  CHECK(pad_category_list(full, {200, 201}, 100, r2) == full);

  Rng ra(9), rb(9);
  CHECK(pad_category_list(positives, pool, 100, ra) ==
        pad_category_list(positives, pool, 100, rb));

  Rng rc(2);
  CHECK_THROWS_WITH(pad_category_list({1}, {2, 3}, 10, rc),
                    doctest::Contains("negative pool exhausted"));
}

TEST_CASE("student gradient reaches the embedding table through the distillation loss") {
  StudentFixture f(1);
  const TeacherEncoder teacher(42, 12);
  const std::vector<std::string> names = {"red circle", "blue square"};
  Tape t;
  f.ps.mount(t);
  const int student_rows = f.student.encode_sentences(t, f.ps, names);
  const int loss = distillation_node(t, student_rows, teacher.encode_all(names));
  t.backward(loss);
  double table_norm = 0;
  for (double g : t.grad(f.ps.find("stud.embed")->node).v) table_norm += g * g;
  CHECK(table_norm > 0.0);
}

TEST_CASE("distillation gradient passes finite differences through the student") {
  StudentFixture f(1, 8, 32);
  const TeacherEncoder teacher(7, 8);
  const std::vector<std::string> names = {"green dot"};
  const Tensor teacher_rows = teacher.encode_all(names);
  Tokenizer tok;
  tok.vocab_size = 32;
  auto& table = f.ps.find("stud.embed")->value;

  Tape tape;
  f.ps.mount(tape);
  const int loss = distillation_node(
      tape, f.student.encode_sentences(tape, f.ps, names), teacher_rows);
  tape.backward(loss);
  const Tensor analytic = tape.grad(f.ps.find("stud.embed")->node);

  auto eval = [&] {
    Tape t2;
    t2.grad_enabled = false;
    f.ps.mount(t2);
    return t2.val(distillation_node(t2, f.student.encode_sentences(t2, f.ps, names),
                                    teacher_rows))
        .v[0];
  };
  double max_rel = 0;
  for (auto id : tok.tokenize("green dot")) {
    for (int64_t c = 0; c < 8; ++c) {
      const double keep = table.at(id, c);
      const double h = 1e-6 * std::max(1.0, std::fabs(keep));
      table.at(id, c) = keep + h;
      const double fp = eval();
      table.at(id, c) = keep - h;
      const double fm = eval();
      table.at(id, c) = keep;
      const double fd = (fp - fm) / (2 * h);
      const double an = analytic.at(id, c);
      max_rel = std::max(max_rel,
                         std::fabs(an - fd) / std::max({std::fabs(an), std::fabs(fd), 1e-8}));
    }
  }
  CHECK(max_rel < 1e-4);
}
