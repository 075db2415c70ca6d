#include <doctest.h>

#include <cmath>

#include "dcmrl/error.hpp"
#include "dcmrl/gaussian.hpp"
#include "dcmrl/rng.hpp"
#include "support/finite_diff.hpp"

using namespace dcmrl;

namespace {

DiagGaussian random_gaussian(Rng& rng, std::size_t d) {
  DiagGaussian g = DiagGaussian::standard(d);
  for (std::size_t i = 0; i < d; ++i) {
    g.mean[i] = rng.uniform(-2.0, 2.0);
    g.log_std[i] = rng.uniform(-1.0, 1.0);
  }
  return g;
}

// Monte-Carlo E_p[log p(x) - log q(x)] with reparameterized samples.
double monte_carlo_kl(const DiagGaussian& p, const DiagGaussian& q, Rng& rng, int n) {
  auto log_density = [](const DiagGaussian& g, const std::vector<double>& x) {
    double s = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const double z = (x[i] - g.mean[i]) / std::exp(g.log_std[i]);
      s += -0.5 * z * z - g.log_std[i] - 0.5 * std::log(2.0 * M_PI);
    }
    return s;
  };
  double acc = 0.0;
  for (int k = 0; k < n; ++k) {
    const std::vector<double> x = sample_reparam(p, rng.normal_vector(p.dim()));
    acc += log_density(p, x) - log_density(q, x);
  }
  return acc / n;
}

}  // namespace

TEST_CASE("kl closed-form examples") {
  const DiagGaussian a({0.3, -1.0}, {0.1, 0.5});
  CHECK(kl(a, a) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(std::abs(kl(a, a)) < 1e-12);
  CHECK(kl(DiagGaussian({0.0}, {0.0}), DiagGaussian({1.0}, {0.0})) == doctest::Approx(0.5));
  CHECK(kl(DiagGaussian({0.0}, {std::log(2.0)}), DiagGaussian({0.0}, {0.0})) ==
        doctest::Approx(std::log(0.5) + 2.0 - 0.5));
  CHECK(kl(DiagGaussian({0.0}, {std::log(2.0)}), DiagGaussian({0.0}, {0.0})) == doctest::Approx(0.80685).epsilon(1e-5));
  CHECK_THROWS_AS(kl(DiagGaussian({0.0}, {0.0}), DiagGaussian({0.0, 1.0}, {0.0, 0.0})), Error);
}

TEST_CASE("kl is nonnegative on random pairs") {
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    CHECK(kl(random_gaussian(rng, 4), random_gaussian(rng, 4)) >= 0.0);
  }
}

TEST_CASE("closed-form kl matches Monte-Carlo on random pairs") {
  Rng rng(2);
  for (int i = 0; i < 5; ++i) {
    const DiagGaussian p = random_gaussian(rng, 3), q = random_gaussian(rng, 3);
    const double exact = kl(p, q);
    const double mc = monte_carlo_kl(p, q, rng, 100000);
    CHECK(std::abs(mc - exact) / exact < 0.01);
  }
}

TEST_CASE("taped kl matches value form and finite differences") {
  Rng rng(4);
  Parameter pm("pm", Tensor(2, 3)), ps("ps", Tensor(2, 3)), qm("qm", Tensor(2, 3)), qs("qs", Tensor(2, 3));
  for (Parameter* p : {&pm, &ps, &qm, &qs}) {
    for (double& v : p->value.data) v = rng.uniform(-1.0, 1.0);
  }
  auto build = [&](Tape& t) {
    return sum(kl(GaussianBatch{t.leaf(pm), t.leaf(ps)}, GaussianBatch{t.leaf(qm), t.leaf(qs)}));
  };
  CHECK(dcmrl::testing::max_gradient_error({&pm, &ps, &qm, &qs}, build) < 1e-4);

  Tape t;
  GaussianBatch p{t.leaf(pm), t.leaf(ps)}, q{t.leaf(qm), t.leaf(qs)};
  const Tensor& per_row = kl(p, q).value();
  for (std::size_t r = 0; r < 2; ++r) CHECK(per_row.data[r] == doctest::Approx(kl(p.row(r), q.row(r))));
}

TEST_CASE("sample_reparam") {
  const DiagGaussian g({1.0, -2.0}, {0.3, -0.7});
  CHECK(sample_reparam(g, std::vector<double>{0.0, 0.0}) == g.mean);
  CHECK_THROWS_AS(sample_reparam(g, std::vector<double>{0.0}), Error);

  Rng rng(6);
  const DiagGaussian unit = DiagGaussian::standard(1);
  const int n = 100000;
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < n; ++i) {
    const double x = sample_reparam(unit, rng.normal_vector(1))[0];
    s += x;
    s2 += x * x;
  }
  const double m = s / n;
  CHECK(std::abs(m) < 0.02);
  CHECK(std::abs(std::sqrt(s2 / n - m * m) - 1.0) < 0.02);

  Parameter mean("mean", Tensor::row({0.0})), log_std("log_std", Tensor::row({0.4}));
  Tape t;
  t.backward(sum(sample_reparam(GaussianBatch{t.leaf(mean), t.leaf(log_std)}, Tensor::row({1.0}))));
  CHECK(log_std.value.grad[0] == doctest::Approx(std::exp(0.4)));
  CHECK(mean.value.grad[0] == doctest::Approx(1.0));
}

TEST_CASE("log_prob agrees with the closed-form density") {
  Tape t;
  GaussianBatch g{t.constant(Tensor::row({0.5, -1.0})), t.constant(Tensor::row({0.2, -0.3}))};
  const double lp = log_prob(g, t.constant(Tensor::row({1.0, 0.0}))).value().item();
  double expect = 0.0;
  const double x[2] = {1.0, 0.0}, m[2] = {0.5, -1.0}, ls[2] = {0.2, -0.3};
  for (int i = 0; i < 2; ++i) {
    const double z = (x[i] - m[i]) / std::exp(ls[i]);
    expect += -0.5 * z * z - ls[i] - 0.5 * std::log(2.0 * M_PI);
  }
  CHECK(lp == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("embed and distances") {
  CHECK(embed(DiagGaussian({1.0, 2.0}, {0.0, 0.0})) == std::vector<double>{1, 2, 0, 0});
  CHECK(euclidean(embed(DiagGaussian({0.0}, {0.0})), embed(DiagGaussian({0.0}, {1.0}))) == doctest::Approx(1.0));
  CHECK(euclidean(embed(DiagGaussian({0.0}, {0.0})), embed(DiagGaussian({3.0}, {0.0}))) == doctest::Approx(3.0));
  const DiagGaussian g({0.25, -3.0}, {1.5, 0.0});
  CHECK(unembed(embed(g)) == g);
}

TEST_CASE("embed is injective on random pairs") {
  Rng rng(13);
  for (int i = 0; i < 100; ++i) {
    const DiagGaussian a = random_gaussian(rng, 2), b = random_gaussian(rng, 2);
    if (a == b) continue;
    CHECK(embed(a) != embed(b));
  }
}

TEST_CASE("cosine similarity") {
  const DiagGaussian a({1.0, 2.0}, {0.5, -1.0});
  CHECK(cosine_sim(a, a) == doctest::Approx(1.0));
  // embeds [1,0,0,0] and [0,1,0,0]
  CHECK(cosine_sim(DiagGaussian({1.0, 0.0}, {0.0, 0.0}), DiagGaussian({0.0, 1.0}, {0.0, 0.0})) == doctest::Approx(0.0));
  // embeds [1,0] and [-1,0]
  CHECK(cosine_sim(DiagGaussian({1.0}, {0.0}), DiagGaussian({-1.0}, {0.0})) == doctest::Approx(-1.0));
  bool degenerate = false;
  CHECK(cosine_sim(DiagGaussian({0.0}, {0.0}), DiagGaussian({0.0}, {0.0}), &degenerate) == 0.0);
  CHECK(degenerate);

  Tape t;
  GaussianBatch x{t.constant(Tensor::row({1.0, 2.0})), t.constant(Tensor::row({0.5, -1.0}))};
  CHECK(cosine_sim(x, x).value().item() == doctest::Approx(1.0));
}
