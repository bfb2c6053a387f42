#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "dlfs/rng.hpp"
#include "dlfs/tensor.hpp"
#include "dlfs/tensor_io.hpp"

using namespace dlfs;

namespace {

// independent oracle: naive triple-loop matrix product
Tensor matmul_oracle(const Tensor& a, const Tensor& b) {
  const int64_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  Tensor out({m, n});
  for (int64_t i = 0; i < m; ++i)
    for (int64_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (int64_t l = 0; l < k; ++l) s += a[i * k + l] * b[l * n + j];
      out[i * n + j] = s;
    }
  return out;
}

std::vector<char> read_bytes(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  return std::vector<char>((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
}

std::string temp_path(const char* name) { return std::string("tensor_test_") + name + ".dten"; }

}  // namespace

TEST_CASE("tensor construction and invariants") {
  Tensor t({2, 3});
  CHECK(t.size() == 6);
  CHECK(t.rank() == 2);
  for (int64_t i = 0; i < 6; ++i) CHECK(t[i] == 0.0);
  CHECK_THROWS_AS(Tensor({2, 3}, {1.0, 2.0}), ShapeMismatch);
  CHECK_THROWS_AS(Tensor({0, 3}), ShapeMismatch);
  CHECK_THROWS_AS(Tensor({2, -1}), ShapeMismatch);
}

TEST_CASE("row-major indexing matches exhaustive enumeration") {
  // flat index of (i0,...,ik-1) must equal sum of i_j * stride_j
  const std::vector<int64_t> shape{2, 3, 4};
  Tensor t(shape);
  int64_t flat = 0;
  for (int64_t i = 0; i < 2; ++i)
    for (int64_t j = 0; j < 3; ++j)
      for (int64_t k = 0; k < 4; ++k) {
        CHECK(t.flat_index({i, j, k}) == flat);
        CHECK(t.flat_index({i, j, k}) == i * 12 + j * 4 + k);
        ++flat;
      }
  CHECK_THROWS_AS(t.flat_index({2, 0, 0}), AxisOutOfRange);
  CHECK_THROWS_AS(t.flat_index({0, 0}), AxisOutOfRange);
}

TEST_CASE("elementwise operations") {
  Tensor a({2}, {1.0, 2.0});
  Tensor b({2}, {3.0, 4.0});
  CHECK(add(a, b).values() == std::vector<double>{4.0, 6.0});
  CHECK(sub(b, a).values() == std::vector<double>{2.0, 2.0});
  CHECK(mul(a, b).values() == std::vector<double>{3.0, 8.0});
  CHECK(scale(a, 0.0).values() == std::vector<double>{0.0, 0.0});
  Tensor c({3}, {-1.0, 0.0, 2.0});
  CHECK(max0(c).values() == std::vector<double>{0.0, 0.0, 2.0});
  CHECK(abs_elem(c).values() == std::vector<double>{1.0, 0.0, 2.0});
  Tensor wrong({3});
  CHECK_THROWS_AS(add(a, wrong), ShapeMismatch);
}

TEST_CASE("reductions") {
  Tensor m({2, 2}, {1.0, 2.0, 3.0, 4.0});
  CHECK(reduce_sum(m, 0).values() == std::vector<double>{4.0, 6.0});
  CHECK(reduce_sum(m, 1).values() == std::vector<double>{3.0, 7.0});
  Tensor v({3}, {5.0, -1.0, 7.0});
  CHECK(max_all(v).value == 7.0);
  CHECK(max_all(v).index == 2);
  Tensor two({2}, {2.0, 4.0});
  CHECK(mean_all(two) == 3.0);
  CHECK_THROWS_AS(reduce_sum(m, 2), AxisOutOfRange);

  AxisReduce r = reduce_max(m, 1);
  CHECK(r.values.values() == std::vector<double>{2.0, 4.0});
  CHECK(r.argmax == std::vector<int64_t>{1, 3});
}

TEST_CASE("matmul identity and selector rows") {
  Tensor eye({2, 2}, {1.0, 0.0, 0.0, 1.0});
  Tensor m({2, 2}, {1.0, 2.0, 3.0, 4.0});
  CHECK(matmul(eye, m).values() == m.values());

  Tensor sel({1, 2}, {1.0, 0.0});
  Tensor col({2, 1}, {11.0, 22.0});
  CHECK(matmul(sel, col).values() == std::vector<double>{11.0});
  CHECK_THROWS_AS(matmul(m, col.reshaped({1, 2})), ShapeMismatch);
}

TEST_CASE("matmul against triple-loop oracle") {
  Rng rng(11);
  Tensor a = draw_normal(rng, 0.0, 1.0, {3, 4});
  Tensor b = draw_normal(rng, 0.0, 1.0, {4, 2});
  Tensor got = matmul(a, b);
  Tensor want = matmul_oracle(a, b);
  for (int64_t i = 0; i < got.size(); ++i) CHECK(got[i] == doctest::Approx(want[i]).epsilon(1e-12));
}

TEST_CASE("matmul associativity on random small tensors") {
  Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor a = draw_uniform(rng, -1.0, 1.0, {3, 4});
    Tensor b = draw_uniform(rng, -1.0, 1.0, {4, 5});
    Tensor c = draw_uniform(rng, -1.0, 1.0, {5, 2});
    Tensor lhs = matmul(matmul(a, b), c);
    Tensor rhs = matmul(a, matmul(b, c));
    for (int64_t i = 0; i < lhs.size(); ++i) CHECK(std::fabs(lhs[i] - rhs[i]) < 1e-10);
  }
}

TEST_CASE("cosine similarity") {
  Tensor a({2}, {1.0, 1.0});
  CHECK(cosine_similarity(a, a) == doctest::Approx(1.0));
  Tensor ex({2}, {1.0, 0.0});
  Tensor ey({2}, {0.0, 1.0});
  CHECK(cosine_similarity(ex, ey) == doctest::Approx(0.0));
  Tensor na({2}, {-1.0, -1.0});
  CHECK(cosine_similarity(a, na) == doctest::Approx(-1.0));
  Tensor zero({2});
  CHECK(cosine_similarity(a, zero) == 0.0);

  Rng rng(3);
  for (int trial = 0; trial < 200; ++trial) {
    Tensor u = draw_normal(rng, 0.0, 2.0, {7});
    Tensor v = draw_normal(rng, 0.0, 2.0, {7});
    const double c = cosine_similarity(u, v);
    CHECK(c >= -1.0 - 1e-12);
    CHECK(c <= 1.0 + 1e-12);
  }
}

TEST_CASE("rng determinism and distributions") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  Rng c(42), d(43);
  bool differs = false;
  for (int i = 0; i < 10; ++i) differs |= (c.next_u64() != d.next_u64());
  CHECK(differs);

  Rng r(7);
  Tensor z = draw_normal(r, 0.0, 0.0, {4});
  CHECK(z.values() == std::vector<double>{0.0, 0.0, 0.0, 0.0});

  Rng r1(9), r2(9);
  Tensor t1 = draw_uniform(r1, -2.0, 5.0, {3, 3});
  Tensor t2 = draw_uniform(r2, -2.0, 5.0, {3, 3});
  CHECK(t1.values() == t2.values());

  CHECK_THROWS_AS(r.uniform(2.0, 1.0), BadParam);
  CHECK_THROWS_AS(r.normal(0.0, -1.0), BadParam);
}

TEST_CASE("rng uniform law of large numbers") {
  Rng rng(12345);
  double sum = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) sum += rng.uniform(0.0, 1.0);
  const double mean = sum / n;
  CHECK(mean > 0.49);
  CHECK(mean < 0.51);
}

TEST_CASE("rng substreams are independent and reproducible") {
  Rng root(100);
  Rng s1 = root.split(1);
  Rng s2 = root.split(2);
  Rng s1b = root.split(1);
  CHECK(s1.next_u64() == s1b.next_u64());
  Rng s1c = root.split(1);
  s1c.next_u64();
  CHECK(s1.next_u64() == s1c.next_u64());
  CHECK(s1.base() != s2.base());
}

TEST_CASE("tensor file roundtrip is bitwise") {
  const std::string p1 = temp_path("a");
  const std::string p2 = temp_path("b");

  Tensor z({3, 3});
  save_tensor(p1, z);
  Tensor z2 = load_tensor(p1);
  CHECK(z2.shape() == z.shape());
  CHECK(z2.values() == z.values());
  save_tensor(p2, z2);
  CHECK(read_bytes(p1) == read_bytes(p2));

  Rng rng(21);
  Tensor t = draw_normal(rng, 0.0, 3.0, {2, 5, 7});
  save_tensor(p1, t);
  Tensor back = load_tensor(p1);
  CHECK(back.shape() == t.shape());
  for (int64_t i = 0; i < t.size(); ++i) CHECK(back[i] == t[i]);
  save_tensor(p2, back);
  CHECK(read_bytes(p1) == read_bytes(p2));

  std::remove(p1.c_str());
  std::remove(p2.c_str());
}

TEST_CASE("tensor file error cases") {
  const std::string p = temp_path("bad");
  {
    std::ofstream os(p, std::ios::binary);
    os.write("NOPE", 4);
    os.write("\x01\x00\x00\x00", 4);
  }
  CHECK_THROWS_AS(load_tensor(p), BadMagic);

  {
    std::ofstream os(p, std::ios::binary | std::ios::trunc);
    os.write("DTEN", 4);
    os.write("\x01\x00\x00\x00", 4);
    os.put(2);  // unknown dtype
    os.put(1);
  }
  CHECK_THROWS_AS(load_tensor(p), DtypeUnsupported);

  {
    Tensor t({4}, {1.0, 2.0, 3.0, 4.0});
    save_tensor(p, t);
    std::vector<char> bytes = read_bytes(p);
    std::ofstream os(p, std::ios::binary | std::ios::trunc);
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size() - 5));
  }
  CHECK_THROWS_AS(load_tensor(p), TruncatedFile);

  CHECK_THROWS_AS(load_tensor("does_not_exist.dten"), MissingFile);
  std::remove(p.c_str());
}
