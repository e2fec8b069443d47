#include "doctest.h"

#include <cmath>
#include <memory>
#include <vector>

#include "countnet/autodiff.hpp"
#include "countnet/grad_check.hpp"

using namespace countnet;

namespace {

Tensor<double> random_tensor(Shape shape, Rng& rng, double lo = -1, double hi = 1) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

}  // namespace

TEST_CASE("backward of sum is all ones") {
  Tape<double> tape;
  auto x = tape.leaf(Tensor<double>::from({1, 2, 3, 4}, {2, 2}), true);
  auto loss = sum_all(x);
  tape.backward(loss);
  for (double g : tape.grad(x.id).values()) CHECK(g == 1.0);
}

TEST_CASE("backward of sum(x*x) is 2x") {
  Tape<double> tape;
  auto x = tape.leaf(Tensor<double>::from({1, 2}), true);
  auto loss = sum_all(mul(x, x));
  tape.backward(loss);
  CHECK(tape.grad(x.id)[0] == doctest::Approx(2.0).epsilon(1e-14));
  CHECK(tape.grad(x.id)[1] == doctest::Approx(4.0).epsilon(1e-14));
}

TEST_CASE("backward twice is an error; non-scalar loss is an error") {
  Tape<double> tape;
  auto x = tape.leaf(Tensor<double>::from({1, 2}), true);
  auto loss = sum_all(x);
  tape.backward(loss);
  CHECK_THROWS_AS(tape.backward(loss), ValueError);
  tape.reset();
  auto y = tape.leaf(Tensor<double>::from({1, 2}), true);
  CHECK_THROWS_AS(tape.backward(y), ShapeError);
}

TEST_CASE("broadcasting add/mul and error case") {
  Tape<double> tape;
  auto a = tape.leaf(Tensor<double>::from({1, 2}), false);
  auto b = tape.leaf(Tensor<double>::from({10, 20}), false);
  CHECK(add(a, b).value().to_vector() == std::vector<double>{11, 22});
  CHECK(mul(a, tape.leaf(Tensor<double>::from({0, 0}), false)).value().to_vector() ==
        std::vector<double>{0, 0});

  // (2,3,4) * (2,3,1): per-token scalar scales all channels
  Tensor<double> big(Shape{2, 3, 4});
  for (std::size_t i = 0; i < big.size(); ++i) big[i] = static_cast<double>(i);
  Tensor<double> sc(Shape{2, 3, 1});
  for (std::size_t i = 0; i < sc.size(); ++i) sc[i] = static_cast<double>(i + 1);
  auto prod = mul(tape.leaf(big, false), tape.leaf(sc, false));
  for (std::size_t t = 0; t < 6; ++t)
    for (std::size_t c = 0; c < 4; ++c)
      CHECK(prod.value()[t * 4 + c] == big[t * 4 + c] * sc[t]);

  auto bad = tape.leaf(Tensor<double>(Shape{3}), false);
  CHECK_THROWS_AS(add(a, bad), ShapeError);
}

TEST_CASE("matmul shape errors name both shapes") {
  Tape<double> tape;
  auto a = tape.leaf(Tensor<double>(Shape{2, 3}), false);
  auto b = tape.leaf(Tensor<double>(Shape{4, 2}), false);
  try {
    matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    std::string msg = e.what();
    CHECK(msg.find("(2, 3)") != std::string::npos);
    CHECK(msg.find("(4, 2)") != std::string::npos);
  }
}

TEST_CASE("softmax invalid axis") {
  Tape<double> tape;
  auto a = tape.leaf(Tensor<double>(Shape{2, 3}), false);
  CHECK_THROWS_AS(softmax(a, 2), ShapeError);
}

TEST_CASE("grad_check: exact for sum, near zero for softmax-sum") {
  Rng rng(1);
  auto sum_fn = [](Tape<double>&, const std::vector<Var<double>>& xs) {
    return sum_all(xs[0]);
  };
  auto r1 = grad_check<double>(sum_fn, {random_tensor({3, 3}, rng)}, 1e-4, 1e-9);
  CHECK(r1.pass);
  CHECK(r1.max_error <= 1e-10);

  auto soft_fn = [](Tape<double>&, const std::vector<Var<double>>& xs) {
    return sum_all(softmax(xs[0], 0));
  };
  auto r2 = grad_check<double>(soft_fn, {random_tensor({5}, rng)}, 1e-4, 1e-6);
  CHECK(r2.pass);  // constant function, gradient ~ 0
}

TEST_CASE("grad_check across elementary ops") {
  Rng rng(2);
  double h = 1e-5, tol = 1e-6;

  SUBCASE("matmul both operands") {
    auto fn = [](Tape<double>&, const std::vector<Var<double>>& xs) {
      return sum_all(mul(matmul(xs[0], xs[1]), matmul(xs[0], xs[1])));
    };
    auto r = grad_check<double>(fn, {random_tensor({4, 3}, rng), random_tensor({3, 5}, rng)}, h,
                                tol);
    CHECK(r.pass);
  }
  SUBCASE("batched broadcast matmul") {
    auto fn = [](Tape<double>&, const std::vector<Var<double>>& xs) {
      return sum_all(mul(matmul(xs[0], xs[1]), matmul(xs[0], xs[1])));
    };
    auto r = grad_check<double>(fn, {random_tensor({2, 3, 4}, rng), random_tensor({4, 2}, rng)},
                                h, tol);
    CHECK(r.pass);
  }
  SUBCASE("softmax middle axis") {
    auto fn = [](Tape<double>&, const std::vector<Var<double>>& xs) {
      auto y = softmax(xs[0], 1);
      return sum_all(mul(y, xs[1]));
    };
    auto r = grad_check<double>(fn, {random_tensor({2, 4, 3}, rng), random_tensor({2, 4, 3}, rng)},
                                h, tol);
    CHECK(r.pass);
  }
  SUBCASE("layer_norm x, gamma, beta") {
    auto fn = [](Tape<double>&, const std::vector<Var<double>>& xs) {
      auto y = layer_norm(xs[0], 1, xs[1], xs[2], 1e-5);
      return sum_all(mul(y, y));
    };
    auto r = grad_check<double>(
        fn, {random_tensor({3, 6}, rng), random_tensor({6}, rng, 0.5, 1.5),
             random_tensor({6}, rng)},
        h, tol);
    CHECK(r.pass);
  }
  SUBCASE("mean, gelu, scale, sub, broadcast mul") {
    auto fn = [](Tape<double>&, const std::vector<Var<double>>& xs) {
      auto m = mean(xs[0], 1);            // [2, 1, 3]
      auto g = gelu(sub(xs[0], m));       // broadcast sub
      return sum_all(mul(scale(g, 1.7), xs[1]));
    };
    auto r = grad_check<double>(fn, {random_tensor({2, 4, 3}, rng), random_tensor({2, 4, 3}, rng)},
                                h, tol);
    CHECK(r.pass);
  }
  SUBCASE("relu away from the kink") {
    Tensor<double> x({8});
    Rng r2(77);
    for (auto& v : x.values()) {
      v = r2.uniform(0.2, 1.0) * (r2.uniform() < 0.5 ? -1 : 1);
    }
    auto fn = [](Tape<double>&, const std::vector<Var<double>>& xs) {
      return sum_all(mul(relu(xs[0]), xs[0]));
    };
    auto r = grad_check<double>(fn, {x}, h, tol);
    CHECK(r.pass);
  }
  SUBCASE("permute + reshape + concat") {
    auto fn = [](Tape<double>&, const std::vector<Var<double>>& xs) {
      auto p = permute(xs[0], {1, 0, 2});
      auto q = reshape(p, {4, 6});
      auto c = concat_last(q, reshape(xs[1], Shape{4, 2}));
      return sum_all(mul(c, c));
    };
    auto r = grad_check<double>(fn, {random_tensor({2, 4, 3}, rng), random_tensor({8}, rng)}, h,
                                tol);
    CHECK(r.pass);
  }
  SUBCASE("roll") {
    auto fn = [](Tape<double>&, const std::vector<Var<double>>& xs) {
      auto rl = roll_hw(xs[0], -1, 2);
      return sum_all(mul(rl, xs[1]));
    };
    auto r = grad_check<double>(fn, {random_tensor({2, 3, 4, 2}, rng),
                                     random_tensor({2, 3, 4, 2}, rng)},
                                h, tol);
    CHECK(r.pass);
  }
  SUBCASE("embed_rows") {
    auto idx = std::make_shared<const std::vector<std::size_t>>(
        std::vector<std::size_t>{0, 2, 2, 1, 0});
    auto fn = [idx](Tape<double>&, const std::vector<Var<double>>& xs) {
      auto e = embed_rows(xs[0], idx);
      return sum_all(mul(e, e));
    };
    auto r = grad_check<double>(fn, {random_tensor({3, 4}, rng)}, h, tol);
    CHECK(r.pass);
  }
  SUBCASE("conv2d") {
    auto fn = [](Tape<double>&, const std::vector<Var<double>>& xs) {
      auto y = conv2d(xs[0], xs[1], xs[2]);
      return sum_all(mul(y, y));
    };
    auto r = grad_check<double>(fn,
                                {random_tensor({2, 4, 5, 3}, rng), random_tensor({3, 3, 3, 2}, rng),
                                 random_tensor({2}, rng)},
                                h, tol);
    CHECK(r.pass);
  }
  SUBCASE("upsample2x") {
    auto fn = [](Tape<double>&, const std::vector<Var<double>>& xs) {
      auto y = upsample2x(xs[0]);
      return sum_all(mul(y, y));
    };
    auto r = grad_check<double>(fn, {random_tensor({2, 3, 4, 2}, rng)}, h, tol);
    CHECK(r.pass);
  }
}

TEST_CASE("roll then inverse roll is identity") {
  Rng rng(6);
  Tape<double> tape;
  auto x = tape.leaf(random_tensor({2, 4, 6, 3}, rng), false);
  auto y = roll_hw(roll_hw(x, -2, -2), 2, 2);
  CHECK(y.value().to_vector() == x.value().to_vector());
}

TEST_CASE("forward evaluation is deterministic") {
  Rng rng(8);
  Tensor<double> a = random_tensor({6, 6}, rng);
  Tensor<double> b = random_tensor({6, 6}, rng);
  auto run = [&]() {
    Tape<double> tape;
    auto va = tape.leaf(a, false);
    auto vb = tape.leaf(b, false);
    return softmax(matmul(va, vb), 1).value().to_vector();
  };
  CHECK(run() == run());
}

TEST_CASE("gradients accumulate across multiple uses of a node") {
  Tape<double> tape;
  auto x = tape.leaf(Tensor<double>::from({3.0}), true);
  auto y = add(mul(x, x), mul(x, x));  // 2x^2, dy/dx = 4x = 12
  tape.backward(sum_all(y));
  CHECK(tape.grad(x.id)[0] == doctest::Approx(12.0).epsilon(1e-12));
}
