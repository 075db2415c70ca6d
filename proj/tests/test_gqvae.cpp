#include <doctest.h>

#include <cmath>
#include <sstream>

#include "dcmrl/error.hpp"
#include "dcmrl/gqvae.hpp"
#include "dcmrl/mlp.hpp"
#include "support/finite_diff.hpp"
#include "support/kmeans.hpp"

using namespace dcmrl;

namespace {

Codebook two_d_codes(const std::vector<std::vector<double>>& embeds) {
  Codebook cb("cb", embeds.size(), embeds.front().size() / 2, CodebookMode::gaussian);
  for (std::size_t k = 0; k < embeds.size(); ++k) cb.set_embedding(k, embeds[k]);
  return cb;
}

Tensor random_tensor(std::size_t r, std::size_t c, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(r, c);
  for (double& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

void randomize(Codebook& cb, Rng& rng) {
  for (std::size_t k = 0; k < cb.size(); ++k) {
    std::vector<double> e(cb.embed_dim());
    for (double& v : e) v = rng.uniform(-1.0, 1.0);
    cb.set_embedding(k, e);
  }
}

}  // namespace

TEST_CASE("match: nearest code, identity, lowest-index ties, usage") {
  // Embeddings (mean, log_std) with d = 1.
  Codebook cb = two_d_codes({{0, 0}, {3, 0}});
  CHECK(cb.match(std::vector<double>{1, 0}).index == 0);
  const Match exact = cb.match(std::vector<double>{3, 0});
  CHECK(exact.index == 1);
  CHECK(exact.distance == 0.0);
  CHECK(cb.usage() == std::vector<std::uint64_t>{1, 1});

  Codebook four = two_d_codes({{9, 9}, {-1, 0}, {5, 5}, {1, 0}});
  const Match tie = four.match(std::vector<double>{0, 0});
  CHECK(tie.index == 1);
  CHECK(four.usage()[1] == 1);
  CHECK(four.nearest(std::vector<double>{0, 0}).index == 1);
  CHECK(four.usage()[1] == 1);

  CHECK_THROWS_AS(Codebook("empty", 0, 2, CodebookMode::gaussian), Error);
  CHECK_THROWS_AS(cb.match(std::vector<double>{1, 0, 0}), Error);
}

TEST_CASE("returned indices always lie in [0, K)") {
  Rng rng(4);
  Codebook cb("cb", 7, 3, CodebookMode::gaussian);
  randomize(cb, rng);
  for (int i = 0; i < 2000; ++i) {
    std::vector<double> e(6);
    for (double& v : e) v = rng.uniform(-5.0, 5.0);
    CHECK(cb.match(e).index < 7);
  }
}

TEST_CASE("vector mode matches like gaussian mode with zero log_std") {
  Rng rng(8);
  Codebook g("g", 6, 3, CodebookMode::gaussian);
  Codebook v("v", 6, 3, CodebookMode::vector);
  for (std::size_t k = 0; k < 6; ++k) {
    std::vector<double> m(3);
    for (double& x : m) x = rng.uniform(-2.0, 2.0);
    v.set_embedding(k, m);
    std::vector<double> e = m;
    e.insert(e.end(), 3, 0.0);
    g.set_embedding(k, e);
  }
  for (int i = 0; i < 500; ++i) {
    std::vector<double> m(3);
    for (double& x : m) x = rng.uniform(-2.0, 2.0);
    std::vector<double> e = m;
    e.insert(e.end(), 3, 0.0);
    CHECK(v.match(m).index == g.match(e).index);
  }
  CHECK(v.embed_dim() == 3);
  CHECK(v.parameters().size() == 1);
  CHECK_THROWS_AS(v.code(0), Error);
}

TEST_CASE("gq_loss: direct evaluation and perfect quantization") {
  Tape t;
  Var enc = t.constant(Tensor::row({0, 0}));
  Var code = t.constant(Tensor::row({1, 0}));
  Var x = t.constant(Tensor::row({0.3, 0.4}));
  Var xr = t.constant(Tensor::row({0, 0}));
  const GqTerms terms = gq_loss(enc, code, x, xr, 0.25, NormMode::squared);
  CHECK(terms.total.value().item() == doctest::Approx(1.5).epsilon(1e-14));
  CHECK(terms.encoder_commit.value().item() == doctest::Approx(1.0));
  CHECK(terms.code_commit.value().item() == doctest::Approx(0.25));
  CHECK(terms.reconstruction.value().item() == doctest::Approx(0.25));

  const GqTerms plain = gq_loss(enc, code, x, xr, 0.25, NormMode::plain);
  CHECK(plain.total.value().item() == doctest::Approx(1.0 + 0.25 + 0.5).epsilon(1e-9));

  const GqTerms zero = gq_loss(code, code, x, x, 0.25, NormMode::squared);
  CHECK(zero.total.value().item() == 0.0);
  CHECK_THROWS_AS(gq_loss(enc, code, x, xr, 0.0, NormMode::squared), Error);
}

TEST_CASE("gq_loss stop-gradient contract") {
  Rng rng(2);
  Tape t;
  Var enc = t.input(random_tensor(5, 4, rng));
  Var code = t.input(random_tensor(5, 4, rng));
  Var x = t.constant(random_tensor(5, 6, rng));
  Var xr = t.input(random_tensor(5, 6, rng));
  const GqTerms terms = gq_loss(enc, code, x, xr, 0.25, NormMode::squared);

  t.backward(terms.encoder_commit);
  for (double g : t.grad(code)) CHECK(g == 0.0);
  for (double g : t.grad(xr)) CHECK(g == 0.0);
  t.backward(terms.code_commit);
  for (double g : t.grad(enc)) CHECK(g == 0.0);
  for (double g : t.grad(xr)) CHECK(g == 0.0);
  t.backward(terms.reconstruction);
  for (double g : t.grad(enc)) CHECK(g == 0.0);
  for (double g : t.grad(code)) CHECK(g == 0.0);
}

TEST_CASE("per-batch code gradient equals mu * sum 2(O - O~) over matched samples") {
  Rng rng(11);
  const std::size_t d = 3, b = 40;
  const double mu = 0.25;
  Codebook cb("cb", 5, d, CodebookMode::gaussian);
  randomize(cb, rng);
  for (Parameter* p : cb.parameters()) p->value.zero_grad();
  Tape t;
  GaussianBatch enc{t.input(random_tensor(b, d, rng)), t.input(random_tensor(b, d, rng))};
  const Quantized q = quantize(t, cb, enc);
  const GqTerms terms = gq_loss(q.encoder_embed, q.code_embed, t.constant(Tensor(b, 1)), t.constant(Tensor(b, 1)),
                                mu, NormMode::squared);
  t.backward(terms.code_commit);

  std::vector<std::vector<double>> expected(cb.size(), std::vector<double>(2 * d, 0.0));
  const Tensor& e = q.encoder_embed.value();
  for (std::size_t r = 0; r < b; ++r) {
    const std::vector<double> code = cb.embedding(q.index[r]);
    for (std::size_t j = 0; j < 2 * d; ++j) expected[q.index[r]][j] += mu * 2.0 * (code[j] - e(r, j));
  }
  const std::vector<Parameter*> ps = cb.parameters();
  for (std::size_t k = 0; k < cb.size(); ++k) {
    for (std::size_t j = 0; j < d; ++j) {
      CHECK(std::abs(ps[0]->value.grad[k * d + j] - expected[k][j]) < 1e-10);
      CHECK(std::abs(ps[1]->value.grad[k * d + j] - expected[k][d + j]) < 1e-10);
    }
  }
  // Unmatched codes get nothing.
  for (std::size_t k = 0; k < cb.size(); ++k) {
    if (cb.usage()[k] != 0) continue;
    for (std::size_t j = 0; j < d; ++j) CHECK(ps[0]->value.grad[k * d + j] == 0.0);
  }
  for (double g : t.grad(enc.mean)) CHECK(g == 0.0);
  for (double g : t.grad(enc.log_std)) CHECK(g == 0.0);
}

TEST_CASE("quantize_forward: exact code values, straight-through gradients") {
  Rng rng(5);
  const std::size_t d = 2, b = 6;
  Codebook cb("cb", 4, d, CodebookMode::gaussian);
  randomize(cb, rng);
  for (Parameter* p : cb.parameters()) p->value.zero_grad();
  Tape t;
  GaussianBatch enc{t.input(random_tensor(b, d, rng)), t.input(random_tensor(b, d, rng))};
  const Quantized q = quantize(t, cb, enc);
  for (std::size_t r = 0; r < b; ++r) {
    const DiagGaussian code = cb.code(q.index[r]);
    CHECK(q.out.row(r) == code);
  }
  // Nonlinear downstream loss: the encoder receives dL/dx evaluated at the code.
  Var loss = add(sum(square(q.out.mean)), sum(exp(q.out.log_std)));
  t.backward(loss);
  Tape ref;
  Var cm = ref.input(q.out.mean.value());
  Var cs = ref.input(q.out.log_std.value());
  ref.backward(add(sum(square(cm)), sum(exp(cs))));
  CHECK(t.grad(enc.mean) == ref.grad(cm));
  CHECK(t.grad(enc.log_std) == ref.grad(cs));
  for (const Parameter* p : cb.parameters()) {
    for (double g : p->value.grad) CHECK(g == 0.0);
  }

  // use_encoder_output passes O~ through untouched.
  Tape t2;
  GaussianBatch enc2{t2.constant(enc.mean.value()), t2.constant(enc.log_std.value())};
  const Quantized raw = quantize(t2, cb, enc2, true, true);
  CHECK(raw.out.mean.value().data == enc.mean.value().data);
}

TEST_CASE("one-code codebook: gradient through quantize_forward equals the unquantized gradient") {
  Rng rng(21);
  const std::size_t d = 3, b = 4;
  Codebook cb("cb", 1, d, CodebookMode::gaussian);
  randomize(cb, rng);
  Mlp net("enc", {2, 8, 2 * d}, Activation::tanh, rng);
  const Tensor x = random_tensor(b, 2, rng);
  const Tensor w = random_tensor(b, d, rng);
  auto grads = [&](bool quantized) {
    for (Parameter* p : net.parameters()) p->value.zero_grad();
    Tape t;
    GaussianBatch g = gaussian_head(net.forward(t, t.constant(x)), d);
    GaussianBatch out = quantized ? quantize(t, cb, g).out : g;
    t.backward(add(sum(mul(out.mean, t.constant(w))), sum(out.log_std)));
    std::vector<double> all;
    for (const Parameter* p : net.parameters()) all.insert(all.end(), p->value.grad.begin(), p->value.grad.end());
    return all;
  };
  CHECK(grads(true) == grads(false));
}

TEST_CASE("full GQ-VAE loss gradients match finite differences per trained group") {
  Rng rng(13);
  const std::size_t d = 2, b = 5, in = 6;
  Mlp encoder("enc", {in, 8, 2 * d}, Activation::tanh, rng);
  Mlp decoder("dec", {2 * d, 8, in}, Activation::tanh, rng);
  Codebook cb("cb", 3, d, CodebookMode::gaussian);
  const Tensor x = random_tensor(b, in, rng);
  {
    Tape t;
    cb.initialize(embed(gaussian_head(encoder.forward(t, t.constant(x)), d)).value(), rng);
  }
  // Spread the codes so a 1e-5 perturbation cannot flip a match.
  randomize(cb, rng);
  const Tensor down = random_tensor(b, d, rng);

  auto loss = [&](Tape& t, int term) {
    GaussianBatch g = gaussian_head(encoder.forward(t, t.constant(x)), d);
    const Quantized q = quantize(t, cb, g, true, false, false);
    Var recon = decoder.forward(t, stop_gradient(q.code_embed));
    const GqTerms terms = gq_loss(q.encoder_embed, q.code_embed, t.constant(x), recon, 0.25, NormMode::squared);
    Var downstream = sum(mul(tanh(q.out.mean), t.constant(down)));
    if (term == 1) return add(terms.encoder_commit, downstream);
    if (term == 2) return terms.code_commit;
    if (term == 3) return terms.reconstruction;
    return add(terms.total, downstream);
  };
  // Encoder: the downstream term is evaluated at the code, so only the
  // encoder-commitment term is a genuine function of the encoder here.
  auto enc_only = [&](Tape& t) {
    GaussianBatch g = gaussian_head(encoder.forward(t, t.constant(x)), d);
    const Quantized q = quantize(t, cb, g, true, false, false);
    return gq_loss(q.encoder_embed, q.code_embed, t.constant(x), t.constant(x), 0.25, NormMode::squared).encoder_commit;
  };
  CHECK(testing::max_gradient_error(encoder.parameters(), enc_only) < 1e-4);
  CHECK(testing::max_gradient_error(cb.parameters(), [&](Tape& t) { return loss(t, 2); }) < 1e-4);
  CHECK(testing::max_gradient_error(decoder.parameters(), [&](Tape& t) { return loss(t, 3); }) < 1e-4);
  std::vector<Parameter*> all = encoder.parameters();
  for (Parameter* p : cb.parameters()) all.push_back(p);
  for (Parameter* p : decoder.parameters()) all.push_back(p);
  CHECK(testing::max_gradient_error(all, [&](Tape& t) { return loss(t, 0); }) < 1e-4);

  // Total loss: each group's tape gradient equals the sum of the per-term
  // gradients that route to it.
  auto grads_of = [&](int term) {
    for (Parameter* p : encoder.parameters()) p->value.zero_grad();
    for (Parameter* p : decoder.parameters()) p->value.zero_grad();
    for (Parameter* p : cb.parameters()) p->value.zero_grad();
    Tape t;
    t.backward(loss(t, term));
    std::vector<double> all;
    for (const Parameter* p : decoder.parameters()) all.insert(all.end(), p->value.grad.begin(), p->value.grad.end());
    for (const Parameter* p : cb.parameters()) all.insert(all.end(), p->value.grad.begin(), p->value.grad.end());
    for (const Parameter* p : encoder.parameters()) all.insert(all.end(), p->value.grad.begin(), p->value.grad.end());
    return all;
  };
  const std::vector<double> total = grads_of(0), g1 = grads_of(1), g2 = grads_of(2), g3 = grads_of(3);
  for (std::size_t i = 0; i < total.size(); ++i) CHECK(total[i] == doctest::Approx(g1[i] + g2[i] + g3[i]).epsilon(1e-12));
}

TEST_CASE("term-2 updates behave like k-means and reach the scratch centroids") {
  Rng rng(31);
  const std::vector<std::vector<double>> centers = {{3, 3, 0.5, 0.5}, {-3, 3, -0.5, 0.5}, {3, -3, 0.5, -0.5},
                                                    {-3, -3, -0.5, -0.5}};
  std::vector<std::vector<double>> points;
  for (const auto& c : centers) {
    for (int i = 0; i < 50; ++i) {
      std::vector<double> p = c;
      for (double& v : p) v += 0.3 * rng.normal();
      points.push_back(p);
    }
  }
  Tensor data(points.size(), 4);
  for (std::size_t i = 0; i < points.size(); ++i) std::copy(points[i].begin(), points[i].end(), data.row_ptr(i));

  Codebook cb("cb", 4, 2, CodebookMode::gaussian);
  Rng init(1);
  cb.initialize(data, init);
  const double mu = 0.25, lr = 0.02;
  std::vector<double> last(4, std::numeric_limits<double>::infinity());
  for (int epoch = 0; epoch < 100; ++epoch) {
    for (Parameter* p : cb.parameters()) p->value.zero_grad();
    std::vector<std::size_t> idx(points.size());
    for (std::size_t i = 0; i < points.size(); ++i) idx[i] = cb.match(points[i]).index;
    // Distance of each code to the centroid of its matched set.
    for (std::size_t k = 0; k < 4; ++k) {
      std::vector<double> centroid(4, 0.0);
      int n = 0;
      for (std::size_t i = 0; i < points.size(); ++i) {
        if (idx[i] != k) continue;
        for (std::size_t j = 0; j < 4; ++j) centroid[j] += points[i][j];
        ++n;
      }
      REQUIRE(n > 0);
      for (double& v : centroid) v /= n;
      const double dist = euclidean(cb.embedding(k), centroid);
      CHECK(dist <= last[k] + 1e-12);
      last[k] = dist;
    }
    Tape t;
    Var code = gather_rows(cb.table(t), idx);
    t.backward(gq_loss(t.constant(data), code, t.constant(Tensor(points.size(), 1)),
                       t.constant(Tensor(points.size(), 1)), mu, NormMode::squared)
                   .code_commit);
    for (Parameter* p : cb.parameters()) {
      for (std::size_t i = 0; i < p->value.size(); ++i) p->value.data[i] -= lr * p->value.grad[i];
    }
    cb.project();
  }
  std::vector<std::vector<double>> codes;
  for (std::size_t k = 0; k < 4; ++k) codes.push_back(cb.embedding(k));
  const auto scratch = testing::lloyd(points, {points[0], points[60], points[110], points[160]});
  CHECK(testing::greedy_max_distance(codes, scratch) < 0.1);
}

TEST_CASE("farthest-point initialization places codes on distinct data points") {
  Rng rng(3);
  Tensor data(30, 4);
  for (double& v : data.data) v = rng.uniform(-1.0, 1.0);
  Codebook cb("cb", 5, 2, CodebookMode::gaussian);
  cb.initialize(data, rng);
  CHECK(cb.initialized());
  for (std::size_t k = 0; k < 5; ++k) {
    bool on_point = false;
    for (std::size_t r = 0; r < 30; ++r) {
      on_point = on_point || euclidean(cb.embedding(k), std::span<const double>(data.row_ptr(r), 4)) == 0.0;
    }
    CHECK(on_point);
    for (std::size_t j = 0; j < k; ++j) CHECK(euclidean(cb.embedding(k), cb.embedding(j)) > 0.0);
  }
  // Fewer distinct points than codes still yields a usable codebook.
  Tensor one(1, 4, 0.5);
  Codebook small("s", 3, 2, CodebookMode::gaussian);
  small.initialize(one, rng);
  CHECK(small.embedding(0) == std::vector<double>(4, 0.5));
}

TEST_CASE("maintenance: unchanged when all codes used, replaces only dead codes") {
  Rng rng(17);
  Codebook cb("cb", 3, 1, CodebookMode::gaussian);
  cb.set_embedding(0, std::vector<double>{0, 0});
  cb.set_embedding(1, std::vector<double>{5, 0});
  cb.set_embedding(2, std::vector<double>{-5, 0});
  Tensor recent = Tensor::from_rows({{1, 0.2}, {1.5, -0.3}, {0.7, 0.1}});

  for (double v : {0.0, 5.0, -5.0}) cb.match(std::vector<double>{v, 0});
  const Tensor before = cb.embeddings();
  auto none = cb.maintain(recent, rng);
  REQUIRE(none.has_value());
  CHECK(none->empty());
  CHECK(cb.embeddings().data == before.data);
  CHECK(cb.usage() == std::vector<std::uint64_t>{0, 0, 0});

  cb.match(std::vector<double>{0.1, 0});
  cb.match(std::vector<double>{4.0, 0});
  auto replaced = cb.maintain(recent, rng);
  REQUIRE(replaced.has_value());
  CHECK(*replaced == std::vector<std::size_t>{2});
  CHECK(cb.embedding(0) == std::vector<double>{0, 0});
  CHECK(cb.embedding(1) == std::vector<double>{5, 0});
  const std::vector<double> fresh = cb.embedding(2);
  const double sigma = 0.01;
  CHECK(fresh[0] >= 0.7 - 3 * sigma);
  CHECK(fresh[0] <= 1.5 + 3 * sigma);
  CHECK(fresh[1] >= -0.3 - 3 * sigma);
  CHECK(fresh[1] <= 0.2 + 3 * sigma);

  const Tensor snapshot = cb.embeddings();
  CHECK_FALSE(cb.maintain(Tensor(0, 2), rng).has_value());
  CHECK(cb.embeddings().data == snapshot.data);
}

TEST_CASE("maintenance runs every interval on buffered outputs") {
  Rng rng(2);
  Codebook cb("cb", 2, 1, CodebookMode::gaussian);
  cb.set_embedding(1, std::vector<double>{9, 0});
  CodebookMaintenance m(3, 4);
  for (int i = 0; i < 6; ++i) m.remember(Tensor::from_rows({{double(i), 0}}));
  CHECK(m.recent().rows() == 4);
  cb.match(std::vector<double>{9, 0});
  CHECK_FALSE(m.tick(cb, rng));
  CHECK_FALSE(m.tick(cb, rng));
  std::optional<std::vector<std::size_t>> replaced;
  CHECK(m.tick(cb, rng, &replaced));
  REQUIRE(replaced.has_value());
  CHECK(*replaced == std::vector<std::size_t>{0});
  CHECK(cb.embedding(0)[0] >= 2.0 - 0.03);
}

TEST_CASE("codebook CSV dump and usage entropy") {
  Codebook cb = two_d_codes({{0, 0}, {3, -1}});
  CHECK(cb.usage_entropy() == 0.0);
  cb.match(std::vector<double>{0, 0});
  cb.match(std::vector<double>{3, -1});
  CHECK(cb.usage_entropy() == doctest::Approx(std::log(2.0)));
  std::ostringstream os;
  cb.write_csv(os);
  CHECK(os.str() == "index,usage,mean0,log_std0\n0,1,0,0\n1,1,3,-1\n");
  Codebook v("v", 1, 2, CodebookMode::vector);
  std::ostringstream ov;
  v.write_csv(ov);
  CHECK(ov.str() == "index,usage,code0,code1\n0,0,0,0\n");
}

TEST_CASE("vector mode quantization is a point value with standard VQ loss") {
  Rng rng(9);
  Codebook cb("v", 3, 2, CodebookMode::vector);
  randomize(cb, rng);
  Tape t;
  GaussianBatch enc{t.input(random_tensor(4, 2, rng)), t.input(random_tensor(4, 2, rng))};
  const Quantized q = quantize(t, cb, enc);
  CHECK(q.point);
  CHECK(q.encoder_embed.cols() == 2);
  const Tensor noise = random_tensor(4, 2, rng);
  CHECK(draw(q, noise).value().data == q.out.mean.value().data);
  for (std::size_t r = 0; r < 4; ++r) {
    CHECK(std::vector<double>(q.out.mean.value().row_ptr(r), q.out.mean.value().row_ptr(r) + 2) ==
          cb.embedding(q.index[r]));
  }
  const GqTerms terms = gq_loss(q.encoder_embed, q.code_embed, t.constant(Tensor(4, 1)), t.constant(Tensor(4, 1)),
                                0.25, NormMode::squared);
  double expect = 0.0;
  for (std::size_t r = 0; r < 4; ++r) {
    const double dist = euclidean(std::span<const double>(enc.mean.value().row_ptr(r), 2), cb.embedding(q.index[r]));
    expect += 1.25 * dist * dist;
  }
  CHECK(terms.total.value().item() == doctest::Approx(expect).epsilon(1e-12));
}
