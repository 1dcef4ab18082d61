#include <doctest.h>

#include <cmath>
#include <functional>

#include "taigan/nn.hpp"

using namespace taigan;
using namespace taigan::nn;

namespace {

Var rand_param(Shape s, Rng& rng, double sd = 0.5) { return parameter(random_normal(s, rng, sd)); }

// Central-difference check of d loss / d p for every entry of every parameter.
void check_gradients(const std::vector<Var>& params, const std::function<Var()>& loss, double tol = 1e-5) {
  for (const auto& p : params) p->grad.clear();
  const Var l = loss();
  backward(l);
  for (const auto& p : params) {
    const auto analytic = p->grad_buffer();
    for (std::size_t i = 0; i < p->value.numel(); ++i) {
      const double h = 1e-6, keep = p->value[i];
      p->value[i] = keep + h;
      const double up = loss()->value[0];
      p->value[i] = keep - h;
      const double down = loss()->value[0];
      p->value[i] = keep;
      const double fd = (up - down) / (2 * h);
      CHECK(analytic[i] == doctest::Approx(fd).epsilon(tol).scale(1e-4));
    }
  }
}

Var target_like(const Var& x, Rng& rng) { return constant(random_normal(x->shape(), rng, 1.0)); }

}  // namespace

TEST_CASE("conv3d gradients, stride 1 and stride 2 with padding") {
  Rng rng(51);
  for (int stride : {1, 2}) {
    const Var x = rand_param({2, 2, 4, 5, 4}, rng);
    const Var w = rand_param({3, 2, 3, 3, 3}, rng);
    const Var b = rand_param({1, 3}, rng);
    Conv3dOptions opt{{stride, stride, stride}, {1, 1, 1}};
    const Var t = target_like(conv3d(x, w, b, opt), rng);
    check_gradients({x, w, b}, [&] { return mse(conv3d(x, w, b, opt), t); });
  }
}

TEST_CASE("conv3d forward matches a direct sum") {
  Rng rng(52);
  const Var x = rand_param({1, 1, 3, 3, 3}, rng);
  const Var w = rand_param({1, 1, 3, 3, 3}, rng);
  const Var b = parameter(Tensor({1, 1}, 0.25));
  const Var y = conv3d(x, w, b, {{1, 1, 1}, {0, 0, 0}});
  REQUIRE(y->shape() == Shape{1, 1, 1, 1, 1});
  double s = 0.25;
  for (std::size_t i = 0; i < 27; ++i) s += x->value[i] * w->value[i];
  CHECK(y->value[0] == doctest::Approx(s));
}

TEST_CASE("pointwise and normalisation op gradients") {
  Rng rng(53);
  const Var x = rand_param({2, 3, 2, 3, 2}, rng);
  const Var y = rand_param({2, 3, 2, 3, 2}, rng);
  const Var t = target_like(x, rng);
  check_gradients({x}, [&] { return mse(leaky_relu(x), t); });
  check_gradients({x}, [&] { return mse(tanh(x), t); });
  check_gradients({x}, [&] { return mse(sigmoid(x), t); });
  check_gradients({x}, [&] { return mse(instance_norm(x), t); }, 1e-4);
  check_gradients({x, y}, [&] { return mse(mul(add(x, y), y), t); });
  check_gradients({x}, [&] { return mse(scale(x, -1.7), t); });
  check_gradients({x}, [&] { return bce_with_logits(x, 1.0); });
  check_gradients({x}, [&] { return bce_with_logits(x, 0.0); });
}

TEST_CASE("structural op gradients") {
  Rng rng(54);
  const Var a = rand_param({1, 2, 2, 2, 2}, rng);
  const Var b = rand_param({1, 3, 2, 2, 2}, rng);
  const Var cat = concat_channels(a, b);
  CHECK(cat->shape() == Shape{1, 5, 2, 2, 2});
  const Var t5 = target_like(cat, rng);
  check_gradients({a, b}, [&] { return mse(concat_channels(a, b), t5); });
  const Var t2 = constant(random_normal({1, 2, 2, 2, 2}, rng, 1.0));
  check_gradients({b}, [&] { return mse(slice_channels(b, 1, 2), t2); });
  const Var tu = constant(random_normal({1, 2, 4, 4, 4}, rng, 1.0));
  check_gradients({a}, [&] { return mse(upsample_nearest(a, 4, 4, 4), tu); });
  const Var tf = constant(random_normal({1, 16, 1, 1, 1}, rng, 1.0));
  check_gradients({a}, [&] { return mse(flatten(a), tf); });
}

TEST_CASE("linear, FiLM and stack gradients") {
  Rng rng(55);
  const Var x = rand_param({3, 4, 1, 1, 1}, rng);
  const Var w = rand_param({2, 4, 1, 1, 1}, rng);
  const Var b = rand_param({1, 2}, rng);
  const Var t = constant(random_normal({3, 2, 1, 1, 1}, rng, 1.0));
  check_gradients({x, w, b}, [&] { return mse(linear(x, w, b), t); });

  const Var f = rand_param({2, 3, 2, 2, 2}, rng);
  const Var g = rand_param({2, 3}, rng);
  const Var be = rand_param({2, 3}, rng);
  const Var tf = target_like(f, rng);
  check_gradients({f, g, be}, [&] { return mse(film(f, g, be), tf); });

  const Var s0 = rand_param({2, 3, 1, 1, 1}, rng);
  const Var s1 = rand_param({2, 3, 1, 1, 1}, rng);
  const Var ts = constant(random_normal({2, 3, 2, 1, 1}, rng, 1.0));
  check_gradients({s0, s1}, [&] { return mse(stack_z({s0, s1}), ts); });
}

TEST_CASE("detach blocks gradients and NoGradGuard disables recording") {
  Rng rng(56);
  const Var x = rand_param({1, 1, 2, 2, 2}, rng);
  const Var l = mse(detach(x), constant(Tensor({1, 1, 2, 2, 2})));
  backward(l);
  for (double g : x->grad) CHECK(g == 0.0);
  {
    NoGradGuard guard;
    CHECK_FALSE(grad_enabled());
    const Var y = tanh(x);
    CHECK(y->parents.empty());
  }
  CHECK(grad_enabled());
}

TEST_CASE("Adam minimises a quadratic") {
  Rng rng(57);
  const Var x = rand_param({1, 1, 1, 1, 4}, rng, 3.0);
  const Var target = constant(Tensor({1, 1, 1, 1, 4}, 0.5));
  Adam opt({x}, {0.05, 0.9, 0.999, 1e-8});
  for (int i = 0; i < 500; ++i) {
    opt.zero_grad();
    backward(mse(x, target));
    opt.step();
  }
  CHECK(opt.steps() == 500);
  for (double v : x->value.data) CHECK(v == doctest::Approx(0.5).epsilon(1e-2));
}

TEST_CASE("shape mismatches are rejected") {
  Rng rng(58);
  const Var a = rand_param({1, 2, 2, 2, 2}, rng);
  const Var b = rand_param({1, 3, 2, 2, 2}, rng);
  CHECK_THROWS(add(a, b));
  CHECK_THROWS(mse(a, b));
}
