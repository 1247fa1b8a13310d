#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <functional>
#include <vector>

#include "reppad/adam.hpp"
#include "reppad/kernels.hpp"
#include "reppad/rng.hpp"
#include "reppad/tensor.hpp"

using namespace reppad;

namespace {

// Central finite differences in 64-bit; inf-norm relative comparison.
// leaves: tensors whose analytic grads get checked. build: graph builder.
void fd_check(std::vector<Tensor<double>> leaves,
              const std::function<Tensor<double>(Tape<double>&)>& build,
              double tol = 1e-4) {
  for (auto& leaf : leaves) leaf.clear_grad();
  Tape<double> tape;
  Tensor<double> loss = build(tape);
  tape.backward(loss);
  const double eps = 1e-3;
  for (auto& leaf : leaves) {
    std::vector<double> analytic(leaf.numel(), 0.0);
    if (leaf.has_grad())
      analytic.assign(leaf.grad_values().begin(), leaf.grad_values().end());
    double max_a = 0, max_n = 0, max_diff = 0;
    for (int64_t i = 0; i < leaf.numel(); ++i) {
      double orig = leaf.data()[i];
      leaf.data()[i] = orig + eps;
      Tape<double> t1(false);
      double fp = build(t1).scalar();
      leaf.data()[i] = orig - eps;
      Tape<double> t2(false);
      double fm = build(t2).scalar();
      leaf.data()[i] = orig;
      double numeric = (fp - fm) / (2 * eps);
      max_a = std::max(max_a, std::fabs(analytic[i]));
      max_n = std::max(max_n, std::fabs(numeric));
      max_diff = std::max(max_diff, std::fabs(analytic[i] - numeric));
    }
    double rel = max_diff / std::max({1.0, max_a, max_n});
    CHECK(rel <= tol);
  }
}

Tensor<double> rand_tensor(Shape s, Rng& rng, double lo = -1.0, double hi = 1.0) {
  return Tensor<double>::uniform(std::move(s), lo, hi, rng, true);
}

}  // namespace

// ----------------------------------------------------------------------------
// rng
// ----------------------------------------------------------------------------

TEST_CASE("rng streams are deterministic and derivation is order-free") {
  Rng a = derive_stream(7, "pad", 3, 11);
  Rng b = derive_stream(7, "pad", 3, 11);
  for (int i = 0; i < 16; ++i) CHECK(a.next_u64() == b.next_u64());
  // different coordinates give different streams
  Rng c = derive_stream(7, "pad", 3, 12);
  CHECK(derive_stream(7, "pad", 3, 11).next_u64() != c.next_u64());
  Rng d = derive_stream(7, "shuffle", 3, 11);
  CHECK(derive_stream(7, "pad", 3, 11).next_u64() != d.next_u64());
}

TEST_CASE("rng bounded draws are uniform (chi-square, 3 sigma)") {
  Rng rng(123);
  const int k = 7, n = 70000;
  std::vector<int> counts(k, 0);
  for (int i = 0; i < n; ++i) ++counts[rng.next_below(k)];
  double expected = static_cast<double>(n) / k, chi2 = 0;
  for (int c : counts) chi2 += (c - expected) * (c - expected) / expected;
  // df=6: mean 6, sd sqrt(12); 6 + 3*3.46 ~ 16.4
  CHECK(chi2 < 16.5);
}

TEST_CASE("rng randint is inclusive on both ends") {
  Rng rng(5);
  bool lo = false, hi = false;
  for (int i = 0; i < 2000; ++i) {
    int64_t v = rng.randint(1, 3);
    CHECK(v >= 1);
    CHECK(v <= 3);
    lo |= v == 1;
    hi |= v == 3;
  }
  CHECK(lo);
  CHECK(hi);
}

// ----------------------------------------------------------------------------
// kernels: serial reference == parallel path, bitwise
// ----------------------------------------------------------------------------

TEST_CASE("gemm and scatter parallel kernels match serial reference bitwise") {
  Rng rng(99);
  for (int trial = 0; trial < 3; ++trial) {
    int64_t m = 17 + trial * 13, n = 23 + trial * 7, k = 31 + trial * 5;
    std::vector<float> A(m * k), B(k * n), Bt(n * k);
    for (auto& x : A) x = static_cast<float>(rng.uniform(-1, 1));
    for (auto& x : B) x = static_cast<float>(rng.uniform(-1, 1));
    for (auto& x : Bt) x = static_cast<float>(rng.uniform(-1, 1));
    std::vector<float> c1(m * n, 0.f), c2(m * n, 0.f);
    kernels::gemm_nn_serial(m, n, k, A.data(), k, B.data(), n, c1.data(), n);
    kernels::gemm_nn_omp(m, n, k, A.data(), k, B.data(), n, c2.data(), n);
    CHECK(c1 == c2);
    std::fill(c1.begin(), c1.end(), 0.f);
    std::fill(c2.begin(), c2.end(), 0.f);
    kernels::gemm_nt_serial(m, n, k, A.data(), k, Bt.data(), k, c1.data(), n);
    kernels::gemm_nt_omp(m, n, k, A.data(), k, Bt.data(), k, c2.data(), n);
    CHECK(c1 == c2);
    std::vector<float> At(k * m);
    for (auto& x : At) x = static_cast<float>(rng.uniform(-1, 1));
    std::fill(c1.begin(), c1.end(), 0.f);
    std::fill(c2.begin(), c2.end(), 0.f);
    kernels::gemm_tn_serial(m, n, k, At.data(), m, B.data(), n, c1.data(), n);
    kernels::gemm_tn_omp(m, n, k, At.data(), m, B.data(), n, c2.data(), n);
    CHECK(c1 == c2);

    std::vector<float> src(40 * 8), d1(10 * 8, 0.f), d2(10 * 8, 0.f);
    for (auto& x : src) x = static_cast<float>(rng.uniform(-1, 1));
    std::vector<int32_t> idx(40);
    for (auto& id : idx) id = static_cast<int32_t>(rng.next_below(10));
    kernels::scatter_rows_add_serial(d1.data(), 8, idx.data(), 40, src.data());
    kernels::scatter_rows_add_omp(d2.data(), 8, idx.data(), 40, src.data());
    CHECK(d1 == d2);
  }
}

// ----------------------------------------------------------------------------
// autodiff: finite-difference checks per primitive
// ----------------------------------------------------------------------------

TEST_CASE("fd: matmul") {
  Rng rng(1);
  auto a = rand_tensor({3, 4}, rng), b = rand_tensor({4, 5}, rng);
  fd_check({a, b}, [&](Tape<double>& t) { return sum(t, matmul(t, a, b)); });
}

TEST_CASE("fd: matmul with batched lhs") {
  Rng rng(2);
  auto a = rand_tensor({2, 3, 4}, rng), b = rand_tensor({4, 5}, rng);
  fd_check({a, b}, [&](Tape<double>& t) { return sum(t, matmul(t, a, b)); });
}

TEST_CASE("fd: matmul_nt (tied logits head)") {
  Rng rng(3);
  auto h = rand_tensor({5, 4}, rng), e = rand_tensor({7, 4}, rng);
  fd_check({h, e}, [&](Tape<double>& t) {
    auto logits = matmul_nt(t, h, e);
    return sum(t, tanh_op(t, logits));
  });
}

TEST_CASE("fd: add with suffix broadcast") {
  Rng rng(4);
  auto a = rand_tensor({2, 3, 4}, rng), b = rand_tensor({3, 4}, rng),
       c = rand_tensor({4}, rng);
  fd_check({a, b, c}, [&](Tape<double>& t) {
    return sum(t, tanh_op(t, add(t, add(t, a, b), c)));
  });
}

TEST_CASE("fd: mul, scalar_affine, tanh, sigmoid") {
  Rng rng(5);
  auto a = rand_tensor({4, 4}, rng), b = rand_tensor({4, 4}, rng);
  fd_check({a, b}, [&](Tape<double>& t) {
    auto z = mul(t, tanh_op(t, a), sigmoid_op(t, b));
    return sum(t, scalar_affine(t, z, -2.0, 0.5));
  });
}

TEST_CASE("fd: relu away from the kink") {
  Rng rng(6);
  auto a = rand_tensor({4, 4}, rng);
  for (int64_t i = 0; i < a.numel(); ++i)
    if (std::fabs(a.data()[i]) < 0.05) a.data()[i] = 0.3;
  fd_check({a}, [&](Tape<double>& t) { return sum(t, relu_op(t, a)); });
}

TEST_CASE("fd: softmax_rows") {
  Rng rng(7);
  auto a = rand_tensor({3, 6}, rng, -2, 2);
  auto w = rand_tensor({3, 6}, rng);
  fd_check({a}, [&](Tape<double>& t) {
    return sum(t, mul(t, softmax_rows(t, a), w));
  });
}

TEST_CASE("softmax of an all-equal row is exactly uniform") {
  Tape<float> t(false);
  auto x = Tensor<float>::from({1, 2}, {0.f, 0.f});
  auto y = softmax_rows(t, x);
  CHECK(y.data()[0] == 0.5f);
  CHECK(y.data()[1] == 0.5f);
  auto rows = softmax_rows(t, Tensor<float>::from({2, 3}, {1, 1, 1, 5, 5, 5}));
  for (int r = 0; r < 2; ++r) {
    float s = rows.data()[r * 3] + rows.data()[r * 3 + 1] + rows.data()[r * 3 + 2];
    CHECK(s == doctest::Approx(1.0f).epsilon(1e-6));
  }
}

TEST_CASE("fd: layer_norm with gain and bias") {
  Rng rng(8);
  auto x = rand_tensor({4, 6}, rng, -2, 2);
  auto g = rand_tensor({6}, rng, 0.5, 1.5);
  auto b = rand_tensor({6}, rng);
  auto w = rand_tensor({4, 6}, rng);
  fd_check({x, g, b}, [&](Tape<double>& t) {
    return sum(t, mul(t, layer_norm(t, x, g, b), w));
  });
}

TEST_CASE("layer_norm rows have mean 0 and unit variance before affine") {
  Rng rng(9);
  Tape<float> t(false);
  auto x = Tensor<float>::uniform({5, 8}, -3, 3, rng, false);
  auto g = Tensor<float>::full({8}, 1.f);
  auto b = Tensor<float>::zeros({8});
  auto y = layer_norm(t, x, g, b);
  for (int r = 0; r < 5; ++r) {
    double mu = 0, var = 0;
    for (int j = 0; j < 8; ++j) mu += y.data()[r * 8 + j];
    mu /= 8;
    for (int j = 0; j < 8; ++j) {
      double d = y.data()[r * 8 + j] - mu;
      var += d * d;
    }
    var /= 8;
    CHECK(std::fabs(mu) < 1e-5);
    CHECK(std::fabs(var - 1.0) < 1e-3);
  }
}

TEST_CASE("fd: embedding_lookup scatters grads into looked-up rows only") {
  Rng rng(10);
  auto table = rand_tensor({6, 3}, rng);
  std::vector<int32_t> ids = {1, 4, 1, 0};
  fd_check({table}, [&](Tape<double>& t) {
    return sum(t, tanh_op(t, embedding_lookup(t, table, ids, {4})));
  });
  // row never looked up gets no grad
  table.clear_grad();
  Tape<double> t;
  auto out = embedding_lookup(t, table, ids, {4});
  t.backward(sum(t, out));
  for (int j = 0; j < 3; ++j) {
    CHECK(table.grad()[2 * 3 + j] == 0.0);
    CHECK(table.grad()[1 * 3 + j] == 2.0);  // looked up twice, d(sum)/dx = 1 each
  }
}

TEST_CASE("fd: gather_rows / concat_rows") {
  Rng rng(11);
  auto x = rand_tensor({5, 3}, rng), y = rand_tensor({2, 3}, rng);
  std::vector<int32_t> idx = {4, 0, 4};
  fd_check({x, y}, [&](Tape<double>& t) {
    auto g = gather_rows(t, x, idx);
    auto c = concat_rows(t, std::vector<Tensor<double>>{g, y});
    return sum(t, tanh_op(t, c));
  });
}

TEST_CASE("fd: masked_attention with causal + padding mask, 1 and 2 heads") {
  Rng rng(12);
  int64_t B = 2, N = 4, d = 6;
  auto q = rand_tensor({B, N, d}, rng), k = rand_tensor({B, N, d}, rng),
       v = rand_tensor({B, N, d}, rng);
  auto mask = std::make_shared<std::vector<uint8_t>>(B * N * N, 0);
  for (int64_t b = 0; b < B; ++b)
    for (int64_t i = 0; i < N; ++i)
      for (int64_t j = 0; j <= i; ++j)
        (*mask)[b * N * N + i * N + j] = (b == 1 && j == 0) ? 0 : 1;  // pad col on b=1
  auto w = rand_tensor({B, N, d}, rng);
  for (int heads : {1, 2}) {
    fd_check({q, k, v}, [&](Tape<double>& t) {
      return sum(t, mul(t, masked_attention(t, q, k, v, mask, heads), w));
    });
  }
}

TEST_CASE("masked_attention: fully masked query row yields a zero output row") {
  Rng rng(13);
  Tape<float> t(false);
  int64_t B = 1, N = 3, d = 4;
  auto q = Tensor<float>::uniform({B, N, d}, -1, 1, rng, false);
  auto k = Tensor<float>::uniform({B, N, d}, -1, 1, rng, false);
  auto v = Tensor<float>::uniform({B, N, d}, -1, 1, rng, false);
  auto mask = std::make_shared<std::vector<uint8_t>>(N * N, 1);
  for (int64_t j = 0; j < N; ++j) (*mask)[0 * N + j] = 0;  // row 0 sees nothing
  auto o = masked_attention(t, q, k, v, mask, 1);
  for (int64_t c = 0; c < d; ++c) CHECK(o.data()[c] == 0.f);
}

TEST_CASE("fd: masked_cross_entropy") {
  Rng rng(14);
  auto logits = rand_tensor({5, 7}, rng, -2, 2);
  std::vector<int32_t> targets = {2, 0, 6, 3, 1};
  std::vector<uint8_t> mask = {1, 0, 1, 1, 0};
  fd_check({logits}, [&](Tape<double>& t) {
    return masked_cross_entropy(t, logits, targets, mask);
  });
}

TEST_CASE("masked_cross_entropy: all-false mask gives zero loss and zero grads") {
  Rng rng(15);
  Tape<double> t;
  auto logits = rand_tensor({3, 4}, rng);
  auto loss = masked_cross_entropy(t, logits, {0, 1, 2}, {0, 0, 0});
  CHECK(loss.scalar() == 0.0);
  t.backward(loss);
  CHECK_FALSE(logits.has_grad());
}

TEST_CASE("masked_cross_entropy: duplicating every row keeps the mean loss") {
  Rng rng(16);
  Tape<double> t(false);
  auto logits = rand_tensor({4, 9}, rng, -2, 2);
  std::vector<int32_t> tg = {1, 8, 0, 5};
  std::vector<uint8_t> mk = {1, 1, 0, 1};
  double base = masked_cross_entropy(t, logits, tg, mk).scalar();
  std::vector<double> dup_vals;
  for (int rep = 0; rep < 2; ++rep)
    dup_vals.insert(dup_vals.end(), logits.values().begin(), logits.values().end());
  auto logits2 = Tensor<double>::from({8, 9}, dup_vals);
  std::vector<int32_t> tg2 = {1, 8, 0, 5, 1, 8, 0, 5};
  std::vector<uint8_t> mk2 = {1, 1, 0, 1, 1, 1, 0, 1};
  double dup = masked_cross_entropy(t, logits2, tg2, mk2).scalar();
  CHECK(dup == doctest::Approx(base).epsilon(1e-12));
}

TEST_CASE("fd: three-layer composite graph") {
  Rng rng(17);
  auto x = rand_tensor({4, 5}, rng);
  auto w1 = rand_tensor({5, 6}, rng), w2 = rand_tensor({6, 6}, rng),
       w3 = rand_tensor({6, 3}, rng);
  auto b1 = rand_tensor({6}, rng), g = rand_tensor({6}, rng, 0.5, 1.5),
       be = rand_tensor({6}, rng);
  std::vector<int32_t> targets = {0, 2, 1, 2};
  std::vector<uint8_t> mask = {1, 1, 1, 0};
  fd_check({x, w1, w2, w3, b1, g, be}, [&](Tape<double>& t) {
    auto h1 = tanh_op(t, add(t, matmul(t, x, w1), b1));
    auto h2 = layer_norm(t, add(t, matmul(t, h1, w2), h1), g, be);
    auto logits = matmul(t, h2, w3);
    return masked_cross_entropy(t, logits, targets, mask);
  });
}

TEST_CASE("backward accumulates across multiple uses of the same tensor") {
  Rng rng(18);
  Tape<double> t;
  auto x = rand_tensor({3}, rng);
  auto y = add(t, x, x);  // dy/dx = 2
  t.backward(sum(t, y));
  for (int i = 0; i < 3; ++i) CHECK(x.grad()[i] == doctest::Approx(2.0));
}

TEST_CASE("sum backward fills ones") {
  Rng rng(19);
  Tape<double> t;
  auto x = rand_tensor({2, 3}, rng);
  t.backward(sum(t, x));
  for (int i = 0; i < 6; ++i) CHECK(x.grad()[i] == 1.0);
}

TEST_CASE("fd: add_scaled combines chunked losses exactly") {
  Rng rng(20);
  auto a = rand_tensor({4, 3}, rng);
  fd_check({a}, [&](Tape<double>& t) {
    auto s1 = sum(t, gather_rows(t, a, {0, 1}));
    auto s2 = sum(t, gather_rows(t, a, {2, 3}));
    return add_scaled(t, s1, s2, 0.5, 0.5);
  });
}

TEST_CASE("backward on a non-scalar is a hard error") {
  Rng rng(21);
  Tape<double> t;
  auto x = rand_tensor({2, 2}, rng);
  auto y = tanh_op(t, x);
  CHECK_THROWS_AS(t.backward(y), std::runtime_error);
}

TEST_CASE("shape mismatches raise errors naming the shapes") {
  Tape<float> t;
  auto a = Tensor<float>::zeros({2, 3});
  auto b = Tensor<float>::zeros({4, 5});
  try {
    matmul(t, a, b);
    CHECK(false);
  } catch (const std::invalid_argument& e) {
    std::string msg = e.what();
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[4,5]") != std::string::npos);
  }
  CHECK_THROWS_AS(mul(t, a, b), std::invalid_argument);
}

TEST_CASE("dropout: inverted scaling, eval identity, backward matches mask") {
  Rng rng(22);
  auto x = Tensor<float>::uniform({200}, 0.5, 1.5, rng, true);
  // eval mode / rate 0: identity (same storage, no copy)
  Tape<float> te(false);
  Rng r1(1);
  CHECK(dropout(te, x, 0.5, r1, false).same_storage(x));
  Tape<float> tt;
  CHECK(dropout(tt, x, 0.0, r1, true).same_storage(x));
  // training: kept entries scaled by 2, dropped are exact zero; grads follow
  Rng r2(7);
  Tape<float> t;
  auto y = dropout(t, x, 0.5, r2, true);
  t.backward(sum(t, y));
  int kept = 0;
  for (int i = 0; i < 200; ++i) {
    if (y.data()[i] == 0.f) {
      CHECK(x.grad()[i] == 0.f);
    } else {
      ++kept;
      CHECK(y.data()[i] == doctest::Approx(x.data()[i] * 2.f));
      CHECK(x.grad()[i] == 2.f);
    }
  }
  CHECK(kept > 60);
  CHECK(kept < 140);
}

// ----------------------------------------------------------------------------
// adam
// ----------------------------------------------------------------------------

TEST_CASE("adam: first step matches the closed form") {
  AdamState<double> st;
  std::vector<Param<double>> params{{"w", Tensor<double>::full({2}, 1.0, true)}};
  auto& w = params[0].tensor;
  w.grad()[0] = 1.0;
  w.grad()[1] = -0.5;
  adam_step(st, params);
  // mhat = g, vhat = g^2 -> step = lr * g/(|g| + eps) = lr * sign(g)
  CHECK(w.data()[0] == doctest::Approx(1.0 - 0.001).epsilon(1e-7));
  CHECK(w.data()[1] == doctest::Approx(1.0 + 0.001).epsilon(1e-7));
}

TEST_CASE("adam: zero gradient leaves the entry unchanged, moments decay only") {
  AdamState<double> st;
  std::vector<Param<double>> params{{"w", Tensor<double>::full({2}, 3.0, true)}};
  auto& w = params[0].tensor;
  w.grad()[0] = 1.0;  // entry 1 stays zero-grad
  adam_step(st, params);
  double after_first = w.data()[0];
  CHECK(w.data()[1] == 3.0);
  double m0 = st.moments["w"].first[0];
  // second step: both grads zero
  w.clear_grad();
  adam_step(st, params);
  CHECK(w.data()[0] == after_first);
  CHECK(w.data()[1] == 3.0);
  CHECK(st.moments["w"].first[0] == doctest::Approx(m0 * 0.9));
}

TEST_CASE("adam: zero gradients forever leave parameters fixed") {
  AdamState<float> st;
  std::vector<Param<float>> params{{"w", Tensor<float>::full({4}, 2.5f, true)}};
  for (int i = 0; i < 50; ++i) adam_step(st, params);
  for (int i = 0; i < 4; ++i) CHECK(params[0].tensor.data()[i] == 2.5f);
}

TEST_CASE("adam: identical runs are bit-identical") {
  auto run = [] {
    Rng rng(33);
    AdamState<float> st;
    std::vector<Param<float>> params{
        {"w", Tensor<float>::uniform({8}, -1, 1, rng, true)}};
    for (int s = 0; s < 10; ++s) {
      for (int i = 0; i < 8; ++i)
        params[0].tensor.grad()[i] = static_cast<float>(rng.uniform(-1, 1));
      adam_step(st, params);
      params[0].tensor.clear_grad();
    }
    return params[0].tensor.values();
  };
  CHECK(run() == run());
}

TEST_CASE("adam: non-finite gradient raises an error naming the parameter") {
  AdamState<float> st;
  std::vector<Param<float>> params{{"item_embedding", Tensor<float>::full({2}, 1.f, true)}};
  params[0].tensor.grad()[1] = std::numeric_limits<float>::quiet_NaN();
  try {
    adam_step(st, params);
    CHECK(false);
  } catch (const std::runtime_error& e) {
    CHECK(std::string(e.what()).find("item_embedding") != std::string::npos);
  }
}

// ----------------------------------------------------------------------------
// gradient histogram
// ----------------------------------------------------------------------------

TEST_CASE("grad_histogram: zero bucket, constant bucket, random oracle") {
  auto edges = default_grad_bucket_edges();
  auto z = grad_histogram(std::vector<double>(17, 0.0), edges);
  CHECK(z[0] == 17);
  int64_t total = 0;
  for (auto c : z) total += c;
  CHECK(total == 17);

  auto c5 = grad_histogram(std::vector<double>(9, 3e-5), edges);
  // 3e-5 lies in (1e-5, 1e-4]; edges[0]=1e-10 so that's bucket index 6+1
  int expect_bucket = 0;
  for (size_t i = 0; i < edges.size(); ++i)
    if (3e-5 <= edges[i]) {
      expect_bucket = static_cast<int>(i) + 1;
      break;
    }
  CHECK(c5[expect_bucket] == 9);

  Rng rng(44);
  std::vector<double> vals(500);
  for (auto& v : vals) {
    double sign = rng.next_below(2) ? 1.0 : -1.0;
    v = rng.next_below(10) == 0 ? 0.0 : sign * std::pow(10.0, rng.uniform(-11, 0));
  }
  auto got = grad_histogram(vals, edges);
  std::vector<int64_t> want(edges.size() + 2, 0);
  for (double v : vals) {
    double a = std::fabs(v);
    if (a == 0.0) {
      ++want[0];
      continue;
    }
    size_t b = edges.size() + 1;
    for (size_t i = 0; i < edges.size(); ++i)
      if (a <= edges[i]) {
        b = i + 1;
        break;
      }
    ++want[b];
  }
  CHECK(got == want);
  CHECK_THROWS_AS(grad_histogram(vals, {}), std::invalid_argument);
}
