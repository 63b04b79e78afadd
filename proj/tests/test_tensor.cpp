#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "etclip/optim.hpp"
#include "etclip/rng.hpp"
#include "etclip/tensor.hpp"
#include "fd_check.hpp"

using namespace etclip;

using DTensor = TensorT<double>;
using DTape = TapeT<double>;

namespace {

DTensor randt(DTape&, std::vector<int> shape, Rng& rng, bool rg = true) {
  auto t = make_tensor<double>(shape, rg);
  fill_gaussian(t, rng, 1.0);
  return t;
}

}  // namespace

TEST_CASE("matmul forward") {
  Tape tape;
  auto eye = make_tensor<float>({2, 2}, {1, 0, 0, 1});
  auto a = make_tensor<float>({2, 2}, {1, 2, 3, 4});
  auto c = tape.matmul(eye, a);
  CHECK(c->value == std::vector<float>{1, 2, 3, 4});

  auto r = make_tensor<float>({1, 2}, {1, 2});
  auto col = make_tensor<float>({2, 1}, {3, 4});
  auto p = tape.matmul(r, col);
  CHECK(p->value[0] == doctest::Approx(11));

  auto bad = make_tensor<float>({3, 3});
  CHECK_THROWS_WITH_AS(tape.matmul(r, bad),
                       doctest::Contains("matmul shape mismatch"), Error);
}

TEST_CASE("matmul gradient vs finite differences") {
  Rng rng(42);
  DTape tape;
  auto a = randt(tape, {3, 4}, rng);
  auto b = randt(tape, {4, 2}, rng);
  auto run = [&]() {
    DTape t2;
    return t2.sum_all(t2.matmul(a, b))->value[0];
  };
  auto bwd = [&]() {
    DTape t;
    t.backward(t.sum_all(t.matmul(a, b)));
  };
  auto res = fd::check({a, b}, run, bwd, rng, 20);
  CHECK(res.max_rel_err < 1e-3);
}

TEST_CASE("softmax") {
  Tape tape;
  auto x = make_tensor<float>({3}, {0, 0, 0});
  auto y = tape.softmax(x);
  for (float v : y->value) CHECK(v == doctest::Approx(1.0f / 3));

  auto big = make_tensor<float>({2}, {1000, 0});
  auto yb = tape.softmax(big);
  CHECK(yb->value[0] == doctest::Approx(1.0));
  CHECK(yb->value[1] == doctest::Approx(0.0));
  CHECK(all_finite(yb));

  // brute-force oracle
  auto z = make_tensor<float>({3}, {1, 2, 3});
  auto yz = tape.softmax(z);
  double s = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  for (int i = 0; i < 3; ++i)
    CHECK(yz->value[i] ==
          doctest::Approx(std::exp(1.0 + i) / s).epsilon(1e-6));
}

TEST_CASE("softmax properties: positive rows summing to 1") {
  Rng rng(7);
  Tape tape;
  for (int trial = 0; trial < 50; ++trial) {
    auto x = make_tensor<float>({4, 6});
    fill_gaussian(x, rng, 3.0);
    auto y = tape.softmax(x);
    for (int r = 0; r < 4; ++r) {
      float sum = 0;
      for (int c = 0; c < 6; ++c) {
        float v = y->value[r * 6 + c];
        CHECK(v > 0.0f);
        sum += v;
      }
      CHECK(sum == doctest::Approx(1.0f).epsilon(1e-6));
    }
  }
}

TEST_CASE("cross_entropy") {
  Tape tape;
  auto sure = make_tensor<float>({3}, {100, 0, 0});
  CHECK(tape.cross_entropy(sure, 0)->value[0] == doctest::Approx(0.0));

  auto uni = make_tensor<float>({5}, {2, 2, 2, 2, 2});
  CHECK(tape.cross_entropy(uni, 3)->value[0] ==
        doctest::Approx(std::log(5.0)).epsilon(1e-6));

  auto z = make_tensor<float>({3}, {1, 2, 3});
  double s = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  CHECK(tape.cross_entropy(z, 0)->value[0] ==
        doctest::Approx(-std::log(std::exp(1.0) / s)).epsilon(1e-6));

  CHECK_THROWS_AS(tape.cross_entropy(z, 3), Error);
  CHECK_THROWS_AS(tape.cross_entropy(z, -1), Error);
}

TEST_CASE("cross_entropy is non-negative") {
  Rng rng(11);
  Tape tape;
  for (int trial = 0; trial < 100; ++trial) {
    auto x = make_tensor<float>({7});
    fill_gaussian(x, rng, 5.0);
    CHECK(tape.cross_entropy(x, rng.uniform_int(7))->value[0] >= 0.0f);
  }
}

TEST_CASE("layer_norm") {
  Tape tape;
  auto gain = make_tensor<float>({4}, {1, 1, 1, 1});
  auto bias = make_tensor<float>({4}, {0, 0, 0, 0});

  auto flat = make_tensor<float>({1, 4}, {5, 5, 5, 5});
  auto y = tape.layer_norm(flat, gain, bias);
  for (float v : y->value) CHECK(std::abs(v) < 1e-3f);

  auto pm = make_tensor<float>({1, 2}, {1, -1});
  auto g2 = make_tensor<float>({2}, {1, 1});
  auto b2 = make_tensor<float>({2}, {0, 0});
  auto y2 = tape.layer_norm(pm, g2, b2);
  CHECK(y2->value[0] == doctest::Approx(1.0).epsilon(1e-4));
  CHECK(y2->value[1] == doctest::Approx(-1.0).epsilon(1e-4));

  Rng rng(3);
  auto x = make_tensor<float>({1, 32});
  fill_gaussian(x, rng, 2.0);
  auto g = make_tensor<float>({32});
  std::fill(g->value.begin(), g->value.end(), 1.0f);
  auto b = make_tensor<float>({32});
  auto yr = tape.layer_norm(x, g, b);
  double mean = 0, var = 0;
  for (float v : yr->value) mean += v;
  mean /= 32;
  for (float v : yr->value) var += (v - mean) * (v - mean);
  var /= 32;
  CHECK(std::abs(mean) < 1e-6);
  CHECK(std::abs(var - 1.0) < 1e-3);
}

TEST_CASE("backward basics") {
  DTape tape;
  auto x = make_tensor<double>({3}, {1, 2, 3}, true);
  auto loss = tape.sum_all(tape.mul(x, x));
  tape.backward(loss);
  CHECK(x->grad == std::vector<double>{2, 4, 6});

  // fan-out accumulation: y = x + x
  DTape t2;
  auto x2 = make_tensor<double>({1}, {5.0}, true);
  auto y = t2.add(x2, x2);
  t2.backward(y);
  CHECK(x2->grad[0] == doctest::Approx(2.0));

  // non-scalar loss rejected
  DTape t3;
  auto v = make_tensor<double>({2}, {1, 2}, true);
  auto w = t3.add(v, v);
  CHECK_THROWS_AS(t3.backward(w), Error);
}

TEST_CASE("backward twice doubles leaf grads") {
  DTape tape;
  auto x = make_tensor<double>({3}, {1, 2, 3}, true);
  auto loss = tape.mean_all(tape.gelu(tape.mul(x, x)));
  tape.backward(loss);
  auto first = x->grad;
  tape.backward(loss);
  for (int i = 0; i < 3; ++i)
    CHECK(x->grad[i] == doctest::Approx(2.0 * first[i]).epsilon(1e-12));
}

TEST_CASE("per-op gradient checks") {
  Rng rng(100);
  auto check_unary = [&](auto builder, std::vector<int> shape) {
    auto x = make_tensor<double>(shape, true);
    fill_gaussian(x, rng, 1.0);
    auto run = [&]() {
      DTape t;
      return t.mean_all(builder(t, x))->value[0];
    };
    auto bwd = [&]() {
      DTape t;
      t.backward(t.mean_all(builder(t, x)));
    };
    auto res = fd::check({x}, run, bwd, rng, 15);
    CHECK(res.max_rel_err < 1e-3);
  };

  check_unary([](DTape& t, DTensor x) { return t.softmax(x); }, {4, 5});
  check_unary([](DTape& t, DTensor x) { return t.gelu(x); }, {12});
  check_unary([](DTape& t, DTensor x) { return t.exp_op(x); }, {5});
  check_unary([](DTape& t, DTensor x) { return t.l2_normalize_rows(x); },
              {3, 8});
  check_unary([](DTape& t, DTensor x) { return t.transpose(x); }, {3, 4});
  check_unary(
      [](DTape& t, DTensor x) { return t.cross_entropy_rows_mean(x, {1, 0}); },
      {2, 6});
  check_unary([](DTape& t, DTensor x) { return t.slice_cols(x, 1, 3); },
              {4, 5});
  check_unary([](DTape& t, DTensor x) { return t.gather_rows(x, {2, 0, 2}); },
              {4, 3});
  check_unary([](DTape& t, DTensor x) { return t.mean_rows(x); }, {4, 3});

  // layer_norm wrt all three inputs
  {
    auto x = make_tensor<double>({3, 6}, true);
    auto g = make_tensor<double>({6}, true);
    auto b = make_tensor<double>({6}, true);
    fill_gaussian(x, rng, 1.0);
    fill_gaussian(g, rng, 1.0);
    fill_gaussian(b, rng, 1.0);
    auto fwd = [&](DTape& t) {
      return t.mean_all(t.mul(t.layer_norm(x, g, b), t.layer_norm(x, g, b)));
    };
    auto run = [&]() {
      DTape t;
      return fwd(t)->value[0];
    };
    auto bwd = [&]() {
      DTape t;
      t.backward(fwd(t));
    };
    auto res = fd::check({x, g, b}, run, bwd, rng, 30);
    CHECK(res.max_rel_err < 1e-3);
  }

  // embedding lookup scatter-add
  {
    auto table = make_tensor<double>({5, 4}, true);
    fill_gaussian(table, rng, 1.0);
    std::vector<int> ids{0, 3, 3, 1};
    auto run = [&]() {
      DTape t;
      return t.mean_all(t.embedding_lookup(table, ids))->value[0];
    };
    auto bwd = [&]() {
      DTape t;
      t.backward(t.mean_all(t.embedding_lookup(table, ids)));
    };
    auto res = fd::check({table}, run, bwd, rng, 20);
    CHECK(res.max_rel_err < 1e-3);
  }

  // masked_fill + softmax path
  {
    auto x = make_tensor<double>({3, 3}, true);
    fill_gaussian(x, rng, 1.0);
    std::vector<std::uint8_t> allow{1, 0, 0, 1, 1, 0, 1, 1, 1};
    auto run = [&]() {
      DTape t;
      return t.mean_all(t.softmax(t.masked_fill(x, allow)))->value[0];
    };
    auto bwd = [&]() {
      DTape t;
      t.backward(t.mean_all(t.softmax(t.masked_fill(x, allow))));
    };
    auto res = fd::check({x}, run, bwd, rng, 9);
    CHECK(res.max_rel_err < 1e-3);
  }
}

TEST_CASE("adam") {
  // zero gradient leaves the parameter unchanged
  Adam opt(0.1f);
  auto p = make_tensor<float>({2}, {1.0f, -2.0f}, true);
  opt.add_param(p);
  opt.step();
  CHECK(p->value[0] == doctest::Approx(1.0f));
  CHECK(p->value[1] == doctest::Approx(-2.0f));

  // constant gradient 1, one step, lr=0.1 -> decrease by ~0.1
  Adam opt2(0.1f);
  auto q = make_scalar<float>(1.0f, true);
  opt2.add_param(q);
  q->grad[0] = 1.0f;
  opt2.step();
  CHECK(q->value[0] == doctest::Approx(0.9f).epsilon(1e-4));
  CHECK(q->grad[0] == 0.0f);  // cleared
  CHECK(opt2.step_count() == 1);

  // descent on f(x)=x^2 from x=1: |x| strictly decreases
  Adam opt3(0.05f);
  auto x = make_scalar<float>(1.0f, true);
  opt3.add_param(x);
  float prev = 1.0f;
  for (int i = 0; i < 10; ++i) {
    Tape t;
    t.backward(t.mul(x, x));
    opt3.step();
    CHECK(std::abs(x->value[0]) < prev);
    prev = std::abs(x->value[0]);
  }
}

TEST_CASE("determinism: same seed, same op sequence, identical bits") {
  auto run = [](std::uint64_t seed) {
    Rng rng(seed);
    Tape t;
    auto a = make_tensor<float>({4, 4}, true);
    auto b = make_tensor<float>({4, 4}, true);
    fill_gaussian(a, rng, 1.0);
    fill_gaussian(b, rng, 1.0);
    auto loss = t.mean_all(t.gelu(t.matmul(a, b)));
    t.backward(loss);
    return std::make_pair(a->grad, loss->value[0]);
  };
  auto r1 = run(9);
  auto r2 = run(9);
  CHECK(r1.first == r2.first);
  CHECK(r1.second == r2.second);
}

TEST_CASE("concat and slice round trips") {
  Tape t;
  auto a = make_tensor<float>({2, 3}, {1, 2, 3, 4, 5, 6});
  auto b = make_tensor<float>({1, 3}, {7, 8, 9});
  auto c = t.concat_rows({a, b});
  CHECK(c->shape == std::vector<int>{3, 3});
  auto back = t.slice_rows(c, 0, 2);
  CHECK(back->value == a->value);

  auto cc = t.concat_cols({a, a});
  CHECK(cc->shape == std::vector<int>{2, 6});
  CHECK(t.slice_cols(cc, 3, 6)->value == a->value);
}
