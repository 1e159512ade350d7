#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "cunmt/errors.hpp"
#include "cunmt/graph.hpp"
#include "cunmt/optim.hpp"
#include "gradcheck.hpp"
#include "op_cases.hpp"

using namespace cunmt;
using namespace cunmt::testing;

TEST_CASE("softmax of equal logits is uniform") {
  Graph g;
  NodeId x = g.leaf(Tensor({1, 2}, {0.0, 0.0}));
  NodeId y = g.softmax_lastdim(x);
  CHECK(g.value(y).data[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(g.value(y).data[1] == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("matmul by identity returns the other operand") {
  Rng rng(11);
  Tensor a = Tensor::randn({3, 3}, rng);
  Tensor eye = Tensor::zeros({3, 3});
  for (int i = 0; i < 3; ++i) eye.at(i, i) = 1.0;
  Graph g;
  NodeId r = g.matmul(g.leaf(eye), g.leaf(a));
  for (std::size_t i = 0; i < a.data.size(); ++i) CHECK(g.value(r).data[i] == doctest::Approx(a.data[i]).epsilon(1e-15));
}

TEST_CASE("layer_norm rows have mean 0 variance 1") {
  Rng rng(5);
  Tensor x = Tensor::randn({4, 8}, rng, 2.0);
  Graph g;
  NodeId y = g.layer_norm(g.leaf(x));
  for (int r = 0; r < 4; ++r) {
    double mean = 0.0, var = 0.0;
    for (int c = 0; c < 8; ++c) mean += g.value(y).at(r, c);
    mean /= 8.0;
    for (int c = 0; c < 8; ++c) {
      const double d = g.value(y).at(r, c) - mean;
      var += d * d;
    }
    var /= 8.0;
    CHECK(std::fabs(mean) < 1e-9);
    CHECK(std::fabs(var - 1.0) < 1e-9);
  }
}

TEST_CASE("softmax rows sum to one and stay positive") {
  Rng rng(17);
  for (int it = 0; it < 50; ++it) {
    Tensor x = Tensor::randn({3, 7}, rng, 5.0);
    Graph g;
    NodeId y = g.softmax_lastdim(g.leaf(x));
    for (int r = 0; r < 3; ++r) {
      double sum = 0.0;
      for (int c = 0; c < 7; ++c) {
        CHECK(g.value(y).at(r, c) > 0.0);
        sum += g.value(y).at(r, c);
      }
      CHECK(std::fabs(sum - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("cross entropy of uniform logits is log vocab") {
  Graph g;
  NodeId logits = g.leaf(Tensor::zeros({2, 8}));
  NodeId loss = g.cross_entropy(logits, {3, 5}, -1);
  CHECK(g.value(loss).data[0] == doctest::Approx(std::log(8.0)).epsilon(1e-12));
}

TEST_CASE("cross entropy falls monotonically as the target margin grows") {
  double prev = 1e300;
  for (double margin : {0.0, 1.0, 2.0, 4.0, 8.0, 16.0}) {
    Graph g;
    Tensor logits = Tensor::zeros({1, 4});
    logits.at(0, 2) = margin;
    NodeId loss = g.cross_entropy(g.leaf(logits), {2}, -1);
    CHECK(g.value(loss).data[0] < prev);
    prev = g.value(loss).data[0];
  }
  CHECK(prev < 1e-6);
}

TEST_CASE("cross entropy matches per-row scalar recomputation") {
  Rng rng(23);
  Tensor logits = Tensor::randn({3, 5}, rng, 2.0);
  std::vector<std::int32_t> targets = {4, 0, 2};
  Graph g;
  NodeId loss = g.cross_entropy(g.leaf(logits), targets, -1);

  double expect = 0.0;
  for (int r = 0; r < 3; ++r) {
    double denom = 0.0;
    for (int c = 0; c < 5; ++c) denom += std::exp(logits.at(r, c));
    expect += -std::log(std::exp(logits.at(r, targets[static_cast<std::size_t>(r)])) / denom);
  }
  expect /= 3.0;
  CHECK(g.value(loss).data[0] == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("cross entropy rejects an all-pad batch") {
  Graph g;
  NodeId logits = g.leaf(Tensor::zeros({2, 4}));
  CHECK_THROWS_AS(g.cross_entropy(logits, {9, 9}, 9), ContractError);
}

TEST_CASE("backward of a linear op is its coefficient") {
  Graph g;
  NodeId x = g.leaf(Tensor::scalar(2.0), true);
  NodeId y = g.scale(x, 3.0);
  GradMap grads = g.backward(y);
  CHECK(grads.at(x).data[0] == doctest::Approx(3.0));
}

TEST_CASE("unused parameters get zero gradients") {
  Graph g;
  NodeId x = g.leaf(Tensor::scalar(2.0), true);
  NodeId unused = g.leaf(Tensor::zeros({3, 3}), true);
  NodeId y = g.scale(x, 3.0);
  GradMap grads = g.backward(y);
  for (double v : grads.at(unused).data) CHECK(v == 0.0);
}

TEST_CASE("backward rejects a non-scalar loss") {
  Graph g;
  NodeId x = g.leaf(Tensor::zeros({2, 2}), true);
  NodeId y = g.scale(x, 1.0);
  CHECK_THROWS_AS(g.backward(y), ContractError);
}

TEST_CASE("shape mismatch errors name the op and both shapes") {
  Graph g;
  NodeId a = g.leaf(Tensor::zeros({2, 3}));
  NodeId b = g.leaf(Tensor::zeros({4, 5}));
  try {
    g.matmul(a, b);
    FAIL("expected ContractError");
  } catch (const ContractError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("matmul") != std::string::npos);
    CHECK(msg.find("[2,3]") != std::string::npos);
    CHECK(msg.find("[4,5]") != std::string::npos);
  }
}

TEST_CASE("non-finite inputs are rejected") {
  Graph g;
  Tensor bad = Tensor::zeros({2});
  bad.data[1] = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(g.leaf(bad), ContractError);
}

TEST_CASE("every op passes randomized finite-difference checks") {
  Rng rng(101);
  double worst = 0.0;
  for (int rep = 0; rep < 12; ++rep) {
    for (auto& c : make_op_cases(rng)) {
      auto res = gradcheck(c.build, c.inputs, rng);
      INFO("op " << c.name);
      CHECK(res.max_rel_err <= 1e-4);
      worst = std::max(worst, res.max_rel_err);
    }
  }
  MESSAGE("worst relative error: " << worst);
}

TEST_CASE("backward is bitwise deterministic") {
  Rng rng(31);
  Tensor a = Tensor::randn({4, 6}, rng);
  Tensor b = Tensor::randn({6, 3}, rng);
  auto run = [&](std::vector<double>& out) {
    Graph g;
    NodeId na = g.leaf(a, true);
    NodeId nb = g.leaf(b, true);
    NodeId y = g.softmax_lastdim(g.matmul(na, nb));
    NodeId flat = g.reshape(y, {1, 12});
    NodeId w = g.leaf(Tensor::full({12, 1}, 0.25));
    NodeId loss = g.reshape(g.matmul(flat, w), {1});
    GradMap grads = g.backward(loss);
    out = grads.at(na).data;
    auto gb = grads.at(nb).data;
    out.insert(out.end(), gb.begin(), gb.end());
  };
  std::vector<double> g1, g2;
  run(g1);
  run(g2);
  CHECK(g1 == g2);
}

TEST_CASE("adam leaves parameters alone under zero gradients") {
  Tensor p = Tensor::full({3}, 1.5);
  Tensor g = Tensor::zeros({3});
  auto st = AdamState::init_like({p});
  std::vector<Tensor*> ps = {&p};
  std::vector<const Tensor*> gs = {&g};
  // seed the moments, then feed zero gradients
  Tensor g1 = Tensor::full({3}, 0.5);
  gs[0] = &g1;
  adam_step(ps, gs, st, 0.0);
  const double m_before = st.m[0].data[0];
  gs[0] = &g;
  Tensor snapshot = p;
  adam_step(ps, gs, st, 0.0);
  CHECK(p.data == snapshot.data);
  CHECK(std::fabs(st.m[0].data[0]) < std::fabs(m_before));
}

TEST_CASE("adam first step on unit gradient moves by about lr") {
  Tensor p = Tensor::scalar(0.0);
  Tensor g = Tensor::scalar(1.0);
  auto st = AdamState::init_like({p});
  std::vector<Tensor*> ps = {&p};
  std::vector<const Tensor*> gs = {&g};
  adam_step(ps, gs, st, 0.1);
  CHECK(st.step == 1);
  CHECK(p.data[0] == doctest::Approx(-0.1).epsilon(1e-6));
}

TEST_CASE("adam matches the scalar two-step recurrence") {
  const double b1 = 0.9, b2 = 0.999, eps = 1e-8, lr = 0.05, grad = 0.7;
  Tensor p = Tensor::scalar(1.0);
  Tensor g = Tensor::scalar(grad);
  auto st = AdamState::init_like({p}, b1, b2, eps);
  std::vector<Tensor*> ps = {&p};
  std::vector<const Tensor*> gs = {&g};
  adam_step(ps, gs, st, lr);
  adam_step(ps, gs, st, lr);

  // independent scalar recurrence
  double m = 0.0, v = 0.0, x = 1.0;
  for (int t = 1; t <= 2; ++t) {
    m = b1 * m + (1 - b1) * grad;
    v = b2 * v + (1 - b2) * grad * grad;
    const double mhat = m / (1 - std::pow(b1, t));
    const double vhat = v / (1 - std::pow(b2, t));
    x -= lr * mhat / (std::sqrt(vhat) + eps);
  }
  CHECK(p.data[0] == doctest::Approx(x).epsilon(1e-14));
}

TEST_CASE("adam with zero learning rate is the identity on parameters") {
  Rng rng(7);
  Tensor p = Tensor::randn({4, 4}, rng);
  Tensor g = Tensor::randn({4, 4}, rng);
  Tensor before = p;
  auto st = AdamState::init_like({p});
  std::vector<Tensor*> ps = {&p};
  std::vector<const Tensor*> gs = {&g};
  adam_step(ps, gs, st, 0.0);
  CHECK(p.data == before.data);
}

TEST_CASE("learning rate schedule") {
  LrSchedule s;
  s.warmup_steps = 100;
  s.peak_lr = 3e-4;
  CHECK(lr_at(s, 0) == 0.0);
  CHECK(lr_at(s, 100) == doctest::Approx(3e-4));
  CHECK(lr_at(s, 400) == doctest::Approx(1.5e-4));
  for (int i = 1; i <= 100; ++i) CHECK(lr_at(s, i) >= lr_at(s, i - 1));
  LrSchedule def;
  CHECK(def.peak_lr >= 1e-4);
  CHECK(def.peak_lr <= 5e-4);
}
