#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "weakloc/sampling.hpp"

using namespace weakloc;

TEST_CASE("gumbel transform analytic values") {
  CHECK(gumbel_from_uniform(std::exp(-1.0)) == Catch::Approx(0.0).margin(1e-12));
  CHECK(gumbel_from_uniform(std::exp(-std::exp(1.0))) == Catch::Approx(-1.0));
  // clamping keeps the tails finite
  CHECK(std::isfinite(gumbel_from_uniform(0.0)));
  CHECK(std::isfinite(gumbel_from_uniform(1.0)));
}

TEST_CASE("gumbel noise empirical mean approaches Euler-Mascheroni") {
  Rng rng(123);
  const auto g = gumbel_noise(rng, 100000);
  double mean = 0.0;
  for (double v : g) mean += v;
  mean /= double(g.size());
  CHECK(mean == Catch::Approx(0.5772156649).margin(0.02));
}

TEST_CASE("gumbel noise is deterministic per seed") {
  Rng a(9), b(9);
  CHECK(gumbel_noise(a, 32) == gumbel_noise(b, 32));
}

TEST_CASE("gumbel_softmax rejects non-positive tau and respects strong logits") {
  Tape t;
  Rng rng(1);
  Var logits = t.constant({2}, {10.0, -10.0});
  CHECK_THROWS_AS(gumbel_softmax(logits, 0.0, rng), config_error);
  CHECK_THROWS_AS(gumbel_softmax(logits, -1.0, rng), config_error);

  // with a 20-logit gap the first entry wins essentially always
  int wins = 0;
  const int trials = 10000;
  for (int i = 0; i < trials; ++i) {
    Tape tt;
    Rng r(derive_seed(77, i));
    Var l = tt.constant({2}, {10.0, -10.0});
    const auto& v = tt.value(gumbel_softmax(l, 1.0, r));
    if (v[0] > 0.99) ++wins;
  }
  CHECK(wins >= trials - 10);
}

TEST_CASE("gumbel_softmax of equal logits at huge tau is uniform") {
  Tape t;
  Rng rng(5);
  Var logits = t.constant({4}, std::vector<double>(4, 0.3));
  const auto& v = t.value(gumbel_softmax(logits, 1e9, rng));
  for (double x : v) CHECK(x == Catch::Approx(0.25).margin(1e-6));
}

TEST_CASE("gumbel_softmax gradient matches finite differences under frozen noise") {
  Rng rng(42);
  Tensor logits = rand_uniform({5}, rng, -1.0, 1.0);
  Tensor w = rand_uniform({5}, rng, -1.0, 1.0);
  const std::uint64_t noise_seed = 31337;
  const double err = grad_check(
      [&](Tape& tp, Var x) {
        Rng frozen(noise_seed);
        return vsum(mul(tp.constant(w), gumbel_softmax(x, 0.7, frozen)));
      },
      logits, 1e-5);
  CHECK(err < 1e-4);
}

TEST_CASE("straight_through forward is the one-hot argmax") {
  Tape t;
  Var soft = t.constant({3}, {0.2, 0.5, 0.3});
  const CategoricalSample s = straight_through(soft);
  CHECK(s.index == 1);
  CHECK(t.value(s.hard) == std::vector<double>{0.0, 1.0, 0.0});
  CHECK(s.soft == std::vector<double>{0.2, 0.5, 0.3});

  Var onehot = t.constant({3}, {0.0, 0.0, 1.0});
  const CategoricalSample s2 = straight_through(onehot);
  CHECK(t.value(s2.hard) == t.value(onehot));

  // argmax ties break to the lowest index
  Var tie = t.constant({3}, {0.4, 0.4, 0.2});
  CHECK(straight_through(tie).index == 0);
}

TEST_CASE("ST surrogate gradient equals the soft gradient under frozen noise") {
  Rng rng(2024);
  Tensor logits = rand_uniform({6}, rng, -1.0, 1.0);
  Tensor w = rand_uniform({6}, rng, -1.0, 1.0);
  const std::uint64_t noise_seed = 99;

  Tape ta;
  Var la = ta.input(logits);
  Rng na(noise_seed);
  Var soft_a = gumbel_softmax(la, 0.5, na);
  ta.backward(vsum(mul(ta.constant(w), straight_through(soft_a).hard)));
  const Tensor g_st = ta.grad_tensor(la);

  Tape tb;
  Var lb = tb.input(logits);
  Rng nb(noise_seed);
  Var soft_b = gumbel_softmax(lb, 0.5, nb);
  tb.backward(vsum(mul(tb.constant(w), soft_b)));
  const Tensor g_soft = tb.grad_tensor(lb);

  for (std::size_t i = 0; i < logits.numel(); ++i)
    CHECK(g_st.data[i] == Catch::Approx(g_soft.data[i]).margin(1e-12));
}

TEST_CASE("ST selection frequencies match the softmax distribution") {
  const std::vector<double> logits{1.0, 0.3, -0.5, -1.2};
  std::vector<double> pi(4);
  double z = 0.0;
  for (std::size_t i = 0; i < 4; ++i) z += std::exp(logits[i]);
  for (std::size_t i = 0; i < 4; ++i) pi[i] = std::exp(logits[i]) / z;

  std::vector<int> counts(4, 0);
  const int n = 10000;
  Rng rng(4242);
  for (int i = 0; i < n; ++i) {
    Tape t;
    Var l = t.constant({4}, std::vector<double>(logits));
    Var soft = gumbel_softmax(l, 0.1, rng);
    const CategoricalSample s = straight_through(soft);
    double hsum = 0.0;
    for (double v : t.value(s.hard)) hsum += v;
    REQUIRE(hsum == 1.0);  // sum_n hard_n = 1 on every draw
    ++counts[s.index];
  }
  double tv = 0.0;
  for (std::size_t i = 0; i < 4; ++i) tv += std::abs(counts[i] / double(n) - pi[i]);
  CHECK(tv / 2.0 < 0.05);
}

TEST_CASE("same seed and tau give an identical sample sequence") {
  auto run = [](std::uint64_t seed) {
    Rng rng(seed);
    std::vector<int> seq;
    for (int i = 0; i < 50; ++i) {
      Tape t;
      Var l = t.constant({3}, {0.1, 0.2, 0.3});
      seq.push_back(straight_through(gumbel_softmax(l, 0.4, rng)).index);
    }
    return seq;
  };
  CHECK(run(7) == run(7));
  CHECK(run(7) != run(8));
}

TEST_CASE("temperature schedule endpoints and midpoint") {
  const TemperatureSchedule s(1.0, 0.001, 1000);
  CHECK(tau_at(s, 0) == 1.0);       // exact endpoint
  CHECK(tau_at(s, 1000) == 0.001);  // exact endpoint
  CHECK(tau_at(s, 500) == Catch::Approx(0.0316227766016838).epsilon(1e-12));
  // clamped outside the range
  CHECK(tau_at(s, -5) == 1.0);
  CHECK(tau_at(s, 2000) == 0.001);
  // strictly non-increasing
  double prev = 2.0;
  for (int i = 0; i <= 1000; i += 50) {
    const double v = tau_at(s, i);
    CHECK(v <= prev);
    prev = v;
  }
  CHECK_THROWS_AS(TemperatureSchedule(0.001, 1.0, 10), config_error);
  CHECK_THROWS_AS(TemperatureSchedule(1.0, 0.0, 10), config_error);
}
