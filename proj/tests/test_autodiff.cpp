#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "mtdl/errors.hpp"
#include "mtdl/exact_sum.hpp"
#include "mtdl/tape.hpp"
#include "support.hpp"

using namespace mtdl;
using test::central_diff;
using test::random_matrix;
using test::random_vector;
using test::rel_err;

TEST_CASE("matvec forward hand cases") {
  Tape tape;
  NodeId w = tape.leaf(Tensor::matrix(2, 2, {1, 2, 3, 4}));
  NodeId x = tape.leaf(Tensor::vector({1, 1}));
  NodeId y = tape.matvec(w, x);
  CHECK(tape.value(y).data == std::vector<double>{3, 7});

  // identity leaves any vector unchanged
  auto gen = test::rng(7);
  Tensor v = random_vector(3, gen);
  Tensor eye = Tensor::zeros({3, 3});
  for (int i = 0; i < 3; ++i) eye.at(i, i) = 1.0;
  Tape t2;
  NodeId out = t2.matvec(t2.leaf(eye), t2.leaf(v));
  CHECK(t2.value(out).data == v.data);
}

TEST_CASE("matvec shape mismatch names both shapes") {
  Tape tape;
  NodeId w = tape.leaf(Tensor::matrix(2, 3, {1, 2, 3, 4, 5, 6}));
  NodeId x = tape.leaf(Tensor::vector({1, 1}));
  CHECK_THROWS_WITH_AS(tape.matvec(w, x),
                       "matvec: inner dimensions disagree, [2 x 3] vs [2]", ShapeError);
}

TEST_CASE("matvec gradients match central finite differences") {
  auto gen = test::rng(0);
  Tensor w = random_matrix(4, 3, gen);
  Tensor x = random_vector(3, gen);
  Tensor probe = random_vector(4, gen);

  auto loss = [&]() {
    Tape tape;
    NodeId y = tape.matvec(tape.leaf(w), tape.leaf(x));
    NodeId l = tape.dot(tape.leaf(probe), y);
    return tape.scalar_value(l);
  };

  Tape tape;
  NodeId wn = tape.leaf(w);
  NodeId xn = tape.leaf(x);
  NodeId l = tape.dot(tape.leaf(probe), tape.matvec(wn, xn));
  tape.backward(l);

  for (std::size_t i = 0; i < w.numel(); ++i) {
    CHECK(rel_err(tape.grad(wn).data[i], central_diff(loss, w, i)) < 1e-6);
  }
  for (std::size_t i = 0; i < x.numel(); ++i) {
    CHECK(rel_err(tape.grad(xn).data[i], central_diff(loss, x, i)) < 1e-6);
  }
}

TEST_CASE("sigmoid values and gradient") {
  Tape tape;
  NodeId x = tape.leaf(Tensor::vector({0.0, std::log(3.0), -800.0, 800.0}));
  NodeId y = tape.sigmoid(x);
  CHECK(tape.value(y).data[0] == 0.5);
  CHECK(tape.value(y).data[1] == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(tape.value(y).all_finite());  // guarded exponent never overflows

  NodeId l = tape.dot(tape.leaf(Tensor::vector({1, 0, 0, 0})), y);
  tape.backward(l);
  CHECK(tape.grad(x).data[0] == 0.25);
}

TEST_CASE("ste_threshold forward and straight-through backward") {
  SUBCASE("above threshold") {
    Tape tape;
    NodeId s = tape.ste_threshold(tape.leaf_scalar(0.6), 0.5);
    CHECK(tape.scalar_value(s) == 1.0);
  }
  SUBCASE("boundary is strict") {
    Tape tape;
    NodeId s = tape.ste_threshold(tape.leaf_scalar(0.5), 0.5);
    CHECK(tape.scalar_value(s) == 0.0);
  }
  SUBCASE("combined chain through sigmoid at q = 0 is exactly 0.25") {
    Tape tape;
    NodeId q = tape.leaf_scalar(0.0);
    NodeId a = tape.sigmoid(q);
    NodeId s = tape.ste_threshold(a, 0.5);
    tape.backward(s);
    CHECK(tape.grad(q).data[0] == 0.25);
  }
  SUBCASE("threshold outside (0,1) is a configuration error") {
    Tape tape;
    NodeId a = tape.leaf_scalar(0.5);
    CHECK_THROWS_AS(tape.ste_threshold(a, 0.0), ConfigError);
    CHECK_THROWS_AS(tape.ste_threshold(a, 1.0), ConfigError);
    CHECK_THROWS_AS(tape.ste_threshold(a, -2.0), ConfigError);
  }
  SUBCASE("output binary, backward never zeroed") {
    auto gen = test::rng(3);
    std::uniform_real_distribution<double> u(0.001, 0.999);
    for (int i = 0; i < 1000; ++i) {
      Tape tape;
      double a = u(gen);
      NodeId an = tape.leaf_scalar(a);
      NodeId s = tape.ste_threshold(an, 0.5);
      double sv = tape.scalar_value(s);
      CHECK((sv == 0.0 || sv == 1.0));
      tape.backward(s);
      CHECK(tape.grad(an).data[0] == 1.0);
    }
  }
}

TEST_CASE("mean_pool hand cases and permutation invariance") {
  Tape tape;
  std::vector<NodeId> items = {tape.leaf(Tensor::vector({1, 3})),
                               tape.leaf(Tensor::vector({3, 5}))};
  NodeId m = tape.mean_pool(items);
  CHECK(tape.value(m).data == std::vector<double>{2, 4});

  NodeId single = tape.mean_pool(std::vector<NodeId>{items[0]});
  CHECK(tape.value(single).data == tape.value(items[0]).data);

  CHECK_THROWS_AS(tape.mean_pool(std::vector<NodeId>{}), EmptyPoolError);

  auto gen = test::rng(11);
  for (int rep = 0; rep < 200; ++rep) {
    std::uniform_int_distribution<std::size_t> nd(1, 12);
    std::size_t n = nd(gen);
    std::vector<Tensor> values;
    for (std::size_t i = 0; i < n; ++i) values.push_back(random_vector(5, gen, 100.0));

    auto pooled = [&](const std::vector<Tensor>& vs) {
      Tape t;
      std::vector<NodeId> ids;
      for (const auto& v : vs) ids.push_back(t.leaf(v));
      return t.value(t.mean_pool(ids)).data;
    };
    std::vector<double> base = pooled(values);
    std::shuffle(values.begin(), values.end(), gen);
    CHECK(pooled(values) == base);
  }
}

TEST_CASE("mean_pool backward distributes g/N") {
  Tape tape;
  NodeId a = tape.leaf(Tensor::vector({1, 2}));
  NodeId b = tape.leaf(Tensor::vector({5, 6}));
  NodeId m = tape.mean_pool(std::vector<NodeId>{a, b});
  NodeId l = tape.dot(tape.leaf(Tensor::vector({1, 1})), m);
  tape.backward(l);
  CHECK(tape.grad(a).data == std::vector<double>{0.5, 0.5});
  CHECK(tape.grad(b).data == std::vector<double>{0.5, 0.5});
}

TEST_CASE("elementwise op values") {
  Tape tape;
  NodeId x = tape.leaf(Tensor::vector({-2, 3, 0}));
  CHECK(tape.value(tape.relu(x)).data == std::vector<double>{0, 3, 0});
  CHECK(tape.value(tape.tanh(x)).data[2] == 0.0);
  NodeId y = tape.leaf(Tensor::vector({1, -1, 4}));
  CHECK(tape.value(tape.add(x, y)).data == std::vector<double>{-1, 2, 4});
  CHECK(tape.value(tape.mul(x, y)).data == std::vector<double>{-2, -3, 0});
  CHECK_THROWS_AS(tape.add(x, tape.leaf(Tensor::vector({1}))), ShapeError);
}

TEST_CASE("elementwise gradients match central finite differences") {
  auto gen = test::rng(0);
  Tensor a = random_vector(6, gen);
  Tensor b = random_vector(6, gen);
  Tensor probe = random_vector(6, gen);

  enum Kind { kAdd, kMul, kTanh, kRelu, kSigmoid };
  for (Kind kind : {kAdd, kMul, kTanh, kRelu, kSigmoid}) {
    auto build = [&](Tape& tape, NodeId& an, NodeId& bn) {
      an = tape.leaf(a);
      bn = tape.leaf(b);
      switch (kind) {
        case kAdd: return tape.add(an, bn);
        case kMul: return tape.mul(an, bn);
        case kTanh: return tape.tanh(an);
        case kRelu: return tape.relu(an);
        default: return tape.sigmoid(an);
      }
    };
    auto loss = [&]() {
      Tape tape;
      NodeId an, bn;
      NodeId y = build(tape, an, bn);
      return tape.scalar_value(tape.dot(tape.leaf(probe), y));
    };
    Tape tape;
    NodeId an, bn;
    NodeId y = build(tape, an, bn);
    tape.backward(tape.dot(tape.leaf(probe), y));
    for (std::size_t i = 0; i < a.numel(); ++i) {
      CHECK(rel_err(tape.grad(an).data[i], central_diff(loss, a, i)) < 1e-6);
    }
    if (kind == kAdd || kind == kMul) {
      for (std::size_t i = 0; i < b.numel(); ++i) {
        CHECK(rel_err(tape.grad(bn).data[i], central_diff(loss, b, i)) < 1e-6);
      }
    }
  }
}

TEST_CASE("softmax cross entropy") {
  SUBCASE("uniform logits give ln C") {
    Tape tape;
    NodeId logits = tape.leaf(Tensor::vector({0.3, 0.3, 0.3, 0.3}));
    NodeId l = tape.softmax_cross_entropy(logits, 2);
    CHECK(tape.scalar_value(l) == doctest::Approx(std::log(4.0)).epsilon(1e-14));
  }
  SUBCASE("saturated logits give near-zero loss") {
    Tape tape;
    NodeId logits = tape.leaf(Tensor::vector({0.0, 1000.0, 0.0}));
    NodeId l = tape.softmax_cross_entropy(logits, 1);
    CHECK(std::fabs(tape.scalar_value(l)) < 1e-9);
  }
  SUBCASE("gradient sums to zero across classes") {
    auto gen = test::rng(0);
    Tensor logits = random_vector(5, gen, 3.0);
    Tape tape;
    NodeId ln = tape.leaf(logits);
    NodeId l = tape.softmax_cross_entropy(ln, 3);
    tape.backward(l);
    double s = std::accumulate(tape.grad(ln).data.begin(), tape.grad(ln).data.end(), 0.0);
    CHECK(std::fabs(s) < 1e-12);
    // and matches finite differences
    auto loss = [&]() {
      Tape t;
      return t.scalar_value(t.softmax_cross_entropy(t.leaf(logits), 3));
    };
    for (std::size_t i = 0; i < logits.numel(); ++i) {
      CHECK(rel_err(tape.grad(ln).data[i], central_diff(loss, logits, i)) < 1e-6);
    }
  }
  SUBCASE("label out of range") {
    Tape tape;
    NodeId logits = tape.leaf(Tensor::vector({0.0, 1.0}));
    CHECK_THROWS_AS(tape.softmax_cross_entropy(logits, 2), ConfigError);
  }
  SUBCASE("needs at least two classes") {
    Tape tape;
    NodeId logits = tape.leaf(Tensor::vector({0.0}));
    CHECK_THROWS_AS(tape.softmax_cross_entropy(logits, 0), ShapeError);
  }
}

TEST_CASE("backward seeds dL/dL = 1 and leaves disconnected nodes at zero") {
  Tape tape;
  NodeId x = tape.leaf_scalar(3.0);
  NodeId unused = tape.leaf(Tensor::vector({4.0, 5.0}));
  NodeId sq = tape.mul(x, x);
  tape.backward(sq);
  CHECK(tape.grad(x).data[0] == 6.0);
  CHECK(tape.grad(sq).data[0] == 1.0);
  CHECK(tape.grad(unused).data == std::vector<double>{0.0, 0.0});
}

TEST_CASE("backward twice without reset is a state error") {
  Tape tape;
  NodeId x = tape.leaf_scalar(2.0);
  NodeId y = tape.mul(x, x);
  tape.backward(y);
  CHECK_THROWS_AS(tape.backward(y), StateError);
  tape.reset();
  NodeId x2 = tape.leaf_scalar(2.0);
  NodeId y2 = tape.mul(x2, x2);
  tape.backward(y2);
  CHECK(tape.grad(x2).data[0] == 4.0);
}

TEST_CASE("backward is deterministic") {
  auto build = [](Tape& tape, NodeId& w, NodeId& x) {
    auto gen = test::rng(123);
    w = tape.leaf(random_matrix(8, 8, gen));
    x = tape.leaf(random_vector(8, gen));
    NodeId h = tape.tanh(tape.matvec(w, x));
    NodeId s = tape.sigmoid(tape.dot(x, h));
    return tape.mul(s, s);
  };
  Tape t1, t2;
  NodeId w1, x1, w2, x2;
  NodeId l1 = build(t1, w1, x1);
  NodeId l2 = build(t2, w2, x2);
  t1.backward(l1);
  t2.backward(l2);
  CHECK(t1.grad(w1).data == t2.grad(w2).data);
  CHECK(t1.grad(x1).data == t2.grad(x2).data);
}

TEST_CASE("scale op forwards and backwards") {
  Tape tape;
  NodeId v = tape.leaf(Tensor::vector({2.0, -3.0}));
  NodeId s = tape.leaf_scalar(0.5);
  NodeId y = tape.scale(v, s);
  CHECK(tape.value(y).data == std::vector<double>{1.0, -1.5});
  NodeId l = tape.dot(tape.leaf(Tensor::vector({1.0, 2.0})), y);
  tape.backward(l);
  CHECK(tape.grad(v).data == std::vector<double>{0.5, 1.0});
  CHECK(tape.grad(s).data[0] == 2.0 * 1.0 + (-3.0) * 2.0);
}

TEST_CASE("slice forwards and scatters gradient") {
  Tape tape;
  NodeId x = tape.leaf(Tensor::vector({1, 2, 3, 4, 5}));
  NodeId y = tape.slice(x, 1, 3);
  CHECK(tape.value(y).data == std::vector<double>{2, 3, 4});
  CHECK_THROWS_AS(tape.slice(x, 3, 3), ShapeError);
  NodeId l = tape.dot(tape.leaf(Tensor::vector({1, 10, 100})), y);
  tape.backward(l);
  CHECK(tape.grad(x).data == std::vector<double>{0, 1, 10, 100, 0});
}

TEST_CASE("exact_sum is exact and permutation invariant") {
  CHECK(exact_sum(std::vector<double>{1e16, 1.0, -1e16}) == 1.0);
  CHECK(exact_sum(std::vector<double>{}) == 0.0);

  auto gen = test::rng(21);
  std::uniform_real_distribution<double> u(-1e6, 1e6);
  for (int rep = 0; rep < 100; ++rep) {
    std::vector<double> xs(37);
    for (double& x : xs) x = u(gen);
    double base = exact_sum(xs);
    for (int p = 0; p < 5; ++p) {
      std::shuffle(xs.begin(), xs.end(), gen);
      CHECK(exact_sum(xs) == base);
    }
  }
}
