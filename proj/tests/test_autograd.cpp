#include <doctest.h>

#include <cmath>

#include "afn/grad_check.hpp"
#include "afn/tape.hpp"
#include "testutil.hpp"

using afn::Rng;
using afn::autograd::GradCheckResult;
using afn::autograd::Tape;
using afn::autograd::Tensor;
using afn::autograd::grad_check;

TEST_CASE("matmul identity and selector") {
  Tape tape;
  Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  Tensor m = Tensor::from({2, 2}, {1, 2, 3, 4});
  Tensor out = tape.matmul(eye, m);
  CHECK(out.values()[0] == 1);
  CHECK(out.values()[1] == 2);
  CHECK(out.values()[2] == 3);
  CHECK(out.values()[3] == 4);

  Tensor row = Tensor::from({1, 2}, {1, 0});
  Tensor col = Tensor::from({2, 1}, {5, 7});
  Tensor picked = tape.matmul(row, col);
  CHECK(picked.scalar_value() == 5);
}

TEST_CASE("matmul rejects mismatched shapes with both shapes named") {
  Tape tape;
  Tensor a = Tensor::zeros({3, 4});
  Tensor b = Tensor::zeros({5, 2});
  try {
    tape.matmul(a, b);
    FAIL("expected ShapeError");
  } catch (const afn::ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("[3x4]") != std::string::npos);
    CHECK(msg.find("[5x2]") != std::string::npos);
  }
}

TEST_CASE("matmul gradient matches central differences") {
  Rng rng(7);
  Tensor a = testutil::random_tensor({3, 4}, rng);
  Tensor b = testutil::random_tensor({4, 2}, rng);

  auto wrt_a = [&b](Tape& t, const Tensor& x) {
    return t.sum(t.square(t.matmul(x, b)));
  };
  auto wrt_b = [&a](Tape& t, const Tensor& x) {
    return t.sum(t.square(t.matmul(a, x)));
  };
  CHECK(grad_check(wrt_a, a, 1e-4).ok(1e-6));
  CHECK(grad_check(wrt_b, b, 1e-4).ok(1e-6));
}

TEST_CASE("relu sign cases") {
  Tape tape;
  Tensor x = Tensor::from({3}, {-1, 0, 2});
  Tensor y = tape.relu(x);
  CHECK(y.values()[0] == 0);
  CHECK(y.values()[1] == 0);
  CHECK(y.values()[2] == 2);
}

TEST_CASE("square backward") {
  Tape tape;
  Tensor x = Tensor::from({1}, {3}, true);
  Tensor y = tape.square(x);
  tape.backward(y);
  CHECK(x.grad()[0] == 6);
}

TEST_CASE("exp of log is the identity with unit gradient") {
  auto fn = [](Tape& t, const Tensor& x) { return t.sum(t.exp(t.log(x))); };

  Tensor x = Tensor::from({2}, {0.5, 2.0}, true);
  Tape tape;
  Tensor y = tape.exp(tape.log(x));
  CHECK(y.values()[0] == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(y.values()[1] == doctest::Approx(2.0).epsilon(1e-12));

  Tensor loss = tape.sum(y);
  tape.backward(loss);
  CHECK(std::fabs(x.grad()[0] - 1.0) < 1e-10);
  CHECK(std::fabs(x.grad()[1] - 1.0) < 1e-10);

  CHECK(grad_check(fn, Tensor::from({2}, {0.5, 2.0}), 1e-5).ok(1e-8));
}

TEST_CASE("log rejects nonpositive input") {
  Tape tape;
  Tensor x = Tensor::from({2}, {1.0, -0.5});
  CHECK_THROWS_AS(tape.log(x), afn::DomainError);
  Tensor z = Tensor::from({1}, {0.0});
  CHECK_THROWS_AS(tape.log(z), afn::DomainError);
}

TEST_CASE("row_l2_norm on the 3-4-5 triangle") {
  Tape tape;
  Tensor x = Tensor::from({1, 2}, {3, 4});
  Tensor n = tape.row_l2_norm(x);
  CHECK(std::fabs(n.values()[0] - 5.0) < 1e-6);
}

TEST_CASE("mean of 1..4") {
  Tape tape;
  Tensor x = Tensor::from({4}, {1, 2, 3, 4});
  CHECK(tape.mean(x).scalar_value() == 2.5);
}

TEST_CASE("row_l2_norm gradient matches central differences") {
  Rng rng(11);
  Tensor x = testutil::random_tensor({4, 8}, rng, -2.0, 2.0);
  auto fn = [](Tape& t, const Tensor& v) { return t.sum(t.row_l2_norm(v)); };
  CHECK(grad_check(fn, x, 1e-4).ok(1e-5));
}

TEST_CASE("row_l2_norm requires rank 2") {
  Tape tape;
  CHECK_THROWS_AS(tape.row_l2_norm(Tensor::from({3}, {1, 2, 3})),
                  afn::ShapeError);
}

TEST_CASE("epsilon guard keeps the norm and its gradient finite at zero") {
  Tape tape;
  Tensor x = Tensor::from({1, 3}, {0, 0, 0}, true);
  Tensor n = tape.row_l2_norm(x);
  CHECK(std::isfinite(n.values()[0]));
  CHECK(n.values()[0] < 1e-5);
  Tensor loss = tape.sum(n);
  tape.backward(loss);
  for (double g : x.grad()) {
    CHECK(std::isfinite(g));
    CHECK(g == 0.0);
  }
}

TEST_CASE("backward of sum gives ones") {
  Tape tape;
  Tensor x = Tensor::from({3}, {5, -2, 9}, true);
  tape.backward(tape.sum(x));
  CHECK(x.grad()[0] == 1);
  CHECK(x.grad()[1] == 1);
  CHECK(x.grad()[2] == 1);
}

TEST_CASE("backward of mean(square(x))") {
  Tape tape;
  Tensor x = Tensor::from({2}, {1, 2}, true);
  tape.backward(tape.mean(tape.square(x)));
  CHECK(x.grad()[0] == doctest::Approx(1.0));  // 2x/n
  CHECK(x.grad()[1] == doctest::Approx(2.0));
}

TEST_CASE("a detached copy carries values but no gradient flow") {
  Tape tape;
  Tensor x = Tensor::from({2}, {2, 3}, true);
  Tensor frozen = x.detached();
  CHECK_FALSE(frozen.requires_grad());
  CHECK(frozen.values()[0] == 2);

  // d/dx of x * stop_gradient(x) is the frozen value, not 2x
  tape.backward(tape.sum(tape.mul(x, frozen)));
  CHECK(x.grad()[0] == 2);
  CHECK(x.grad()[1] == 3);

  // mutating the copy leaves the original untouched
  frozen.mutable_values()[0] = 99;
  CHECK(x.values()[0] == 2);
}

TEST_CASE("a tensor used twice accumulates both path gradients") {
  Tape tape;
  Tensor x = Tensor::from({1}, {3}, true);
  Tensor loss = tape.add(x, x);
  tape.backward(loss);
  CHECK(x.grad()[0] == 2);
}

TEST_CASE("backward twice is a state error") {
  Tape tape;
  Tensor x = Tensor::from({1}, {1}, true);
  Tensor loss = tape.square(x);
  tape.backward(loss);
  CHECK_THROWS_AS(tape.backward(loss), afn::StateError);
}

TEST_CASE("non-scalar loss is rejected") {
  Tape tape;
  Tensor x = Tensor::from({2}, {1, 2}, true);
  Tensor y = tape.square(x);
  CHECK_THROWS_AS(tape.backward(y), afn::ShapeError);
}

TEST_CASE("gradients of unreachable tensors stay untouched") {
  Tape tape;
  Tensor x = Tensor::from({1}, {2}, true);
  Tensor y = Tensor::from({1}, {4}, true);
  Tensor keep = tape.square(x);
  tape.square(y);  // on tape, but not part of the loss
  tape.backward(keep);
  CHECK(x.grad()[0] == 4);
  CHECK_FALSE(y.has_grad());
}

TEST_CASE("identical tapes produce bitwise-identical gradients") {
  auto run_once = [] {
    Rng rng(3);
    Tensor x = testutil::random_tensor({4, 4}, rng, -1, 1, true);
    Tensor w = testutil::random_tensor({4, 3}, rng, -1, 1, true);
    Tape tape;
    Tensor loss = tape.mean(tape.square(tape.relu(tape.matmul(x, w))));
    tape.backward(loss);
    std::vector<double> out(x.grad().begin(), x.grad().end());
    out.insert(out.end(), w.grad().begin(), w.grad().end());
    return out;
  };
  const auto a = run_once();
  const auto b = run_once();
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    CHECK(a[i] == b[i]);
  }
}

TEST_CASE("grad_check is near-exact on a quadratic") {
  auto fn = [](Tape& t, const Tensor& x) { return t.sum(t.square(x)); };
  Tensor point = Tensor::from({3}, {1, 2, 3});
  const auto result = grad_check(fn, point, 1e-4);
  CHECK(result.ok(1e-8));
}

TEST_CASE("fault injection flips a backward rule and grad_check notices") {
  auto fn = [](Tape& t, const Tensor& x) { return t.sum(t.square(x)); };
  Tensor point = Tensor::from({3}, {1, 2, 3});

  Tape::inject_backward_fault("square");
  const auto broken = grad_check(fn, point, 1e-4);
  Tape::clear_backward_fault();

  CHECK_FALSE(broken.ok(1e-4));
  CHECK(grad_check(fn, point, 1e-4).ok(1e-8));
}

TEST_CASE("scalar ops and sub/mul behave and differentiate") {
  Rng rng(5);
  Tensor a = testutil::random_tensor({6}, rng);
  Tensor b = testutil::random_tensor({6}, rng);

  auto fn = [&b](Tape& t, const Tensor& x) {
    Tensor scaled = t.scalar_add(t.scalar_mul(x, 3.0), -0.25);
    return t.sum(t.mul(t.sub(scaled, b), scaled));
  };
  CHECK(grad_check(fn, a, 1e-4).ok(1e-6));

  Tape tape;
  CHECK_THROWS_AS(tape.sub(a, Tensor::zeros({3})), afn::ShapeError);
  CHECK_THROWS_AS(tape.mul(a, Tensor::zeros({2, 3})), afn::ShapeError);
}

TEST_CASE("sqrt differentiates away from zero and rejects negatives") {
  Tensor x = Tensor::from({3}, {0.25, 1.0, 4.0});
  auto fn = [](Tape& t, const Tensor& v) { return t.sum(t.sqrt(v)); };
  CHECK(grad_check(fn, x, 1e-5).ok(1e-7));

  Tape tape;
  CHECK_THROWS_AS(tape.sqrt(Tensor::from({1}, {-1.0})), afn::DomainError);
}
