#include <cmath>

#include "doctest.h"
#include "motor/tcn.hpp"
#include "oracles.hpp"

using namespace motor;

namespace {

TokenLayout layout_of(std::size_t modalities, std::size_t slots) {
  TokenLayout l;
  for (std::size_t m = 0; m < modalities; ++m) {
    l.modalities.push_back(static_cast<Modality>(m));
    l.slots.push_back(slots);
  }
  l.codebook_size = 4;
  return l;
}

std::vector<double> rand_vec(std::size_t n, Rng& rng) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.normal();
  return v;
}

void zero_group(TcnGroup<double>& g) {
  std::fill(g.slot_weights.begin(), g.slot_weights.end(), 0.0);
  for (auto& l : g.mlp) {
    l.weight.fill(0.0);
    std::fill(l.bias.begin(), l.bias.end(), 0.0);
  }
}

void randomize(TokenCrossNetwork<double>& net, Rng& rng) {
  for (auto& g : net.groups) {
    for (double& w : g.slot_weights) w = rng.normal();
    for (auto& l : g.mlp) {
      for (double& v : l.weight.values()) v = 0.5 * rng.normal();
      for (double& b : l.bias) b = 0.5 * rng.normal();
    }
  }
}

}  // namespace

TEST_CASE("one_order examples") {
  const Matrix<double> e(2, 2, std::vector<double>{1, 2, 3, 4});
  const std::vector<double> half{0.5, 0.5};
  CHECK(one_order<double>(e, half) == std::vector<double>{2, 3});
  const std::vector<double> zero{0, 0};
  CHECK(one_order<double>(e, zero) == std::vector<double>{0, 0});
  const Matrix<double> single(1, 2, std::vector<double>{7, -1});
  const std::vector<double> unit{1.0};
  CHECK(one_order<double>(single, unit) == std::vector<double>{7, -1});
}

TEST_CASE("second_order examples and FM identity") {
  const Matrix<double> single(1, 3, std::vector<double>{1, 2, 3});
  const std::vector<double> w1{2.0};
  CHECK(second_order<double>(single, w1) == std::vector<double>{0, 0, 0});
  const Matrix<double> pair(2, 2, std::vector<double>{1, 1, 2, 2});
  const std::vector<double> ones{1, 1};
  CHECK(second_order<double>(pair, ones) == std::vector<double>{2, 2});

  Rng rng(4);
  for (std::size_t n : {1u, 2u, 4u, 8u, 16u}) {
    for (std::size_t d : {1u, 3u, 8u}) {
      const auto e = oracle::random_matrix(n, d, rng);
      const auto w = rand_vec(n, rng);
      const auto fast = second_order<double>(e, w);
      const auto slow = oracle::pairwise_second_order(e, w);
      for (std::size_t k = 0; k < d; ++k) CHECK(oracle::relative_error(fast[k], slow[k], 1e-12) < 1e-9);
    }
  }
}

TEST_CASE("scaling properties") {
  Rng rng(5);
  const auto e = oracle::random_matrix(5, 4, rng);
  const auto w = rand_vec(5, rng);
  std::vector<double> w3 = w;
  for (double& x : w3) x *= 3.0;
  const auto s = second_order<double>(e, w);
  const auto s3 = second_order<double>(e, w3);
  const auto o = one_order<double>(e, w);
  const auto o3 = one_order<double>(e, w3);
  for (std::size_t k = 0; k < 4; ++k) {
    CHECK(s3[k] == doctest::Approx(9.0 * s[k]));
    CHECK(o3[k] == doctest::Approx(3.0 * o[k]));
  }
}

TEST_CASE("high_order examples") {
  Rng rng(6);
  const auto e = oracle::random_matrix(3, 2, rng);
  auto net = make_tcn<double>(TcnVariant::modal_agnostic, layout_of(1, 3), 2, 1);
  auto& mlp = net.groups[0].mlp;
  REQUIRE(mlp.size() == 2);
  CHECK(mlp[0].weight.rows() == 2);
  CHECK(mlp[0].weight.cols() == 6);
  CHECK(mlp[1].weight.rows() == 2);

  const auto ref = oracle::mlp_forward(oracle::concat_rows(e), mlp);
  const auto got = high_order<double>(e, mlp);
  for (std::size_t k = 0; k < 2; ++k) CHECK(got[k] == doctest::Approx(ref[k]).epsilon(1e-12));

  for (auto& l : mlp) {
    l.weight.fill(0.0);
    std::fill(l.bias.begin(), l.bias.end(), 0.0);
  }
  CHECK(high_order<double>(e, mlp) == std::vector<double>{0, 0});

  // single linear layer W = [I | 0] picks out the first embedding
  std::vector<DenseLayer<double>> proj(1);
  proj[0].weight = Matrix<double>(2, 6, 0.0);
  proj[0].weight(0, 0) = 1.0;
  proj[0].weight(1, 1) = 1.0;
  proj[0].bias = {0.0, 0.0};
  const auto first = high_order<double>(e, proj);
  CHECK(first[0] == e(0, 0));
  CHECK(first[1] == e(0, 1));

  const auto wrong = oracle::random_matrix(2, 2, rng);
  CHECK_THROWS_AS(high_order<double>(wrong, mlp), ConfigError);
}

TEST_CASE("modal-specific representation is the sum of per-modality groups") {
  Rng rng(7);
  const auto layout = layout_of(2, 3);
  auto net = make_tcn<double>(TcnVariant::modal_specific, layout, 4, 2);
  REQUIRE(net.groups.size() == 2);
  randomize(net, rng);
  const auto e = oracle::random_matrix(6, 4, rng);
  Matrix<double> ev(3, 4), et(3, 4);
  for (std::size_t s = 0; s < 3; ++s) {
    for (std::size_t k = 0; k < 4; ++k) {
      ev(s, k) = e(s, k);
      et(s, k) = e(s + 3, k);
    }
  }
  const auto rv = oracle::cross_group(ev, net.groups[0].slot_weights, net.groups[0].mlp);
  const auto rt = oracle::cross_group(et, net.groups[1].slot_weights, net.groups[1].mlp);
  const auto r = token_representation(net, e);
  for (std::size_t k = 0; k < 4; ++k) CHECK(r[k] == doctest::Approx(rv[k] + rt[k]).epsilon(1e-12));

  zero_group(net.groups[1]);
  const auto vision_only = token_representation(net, e);
  for (std::size_t k = 0; k < 4; ++k) CHECK(vision_only[k] == doctest::Approx(rv[k]).epsilon(1e-12));

  zero_group(net.groups[0]);
  for (double v : token_representation(net, e)) CHECK(v == 0.0);
}

TEST_CASE("modal-agnostic crosses across modalities") {
  Rng rng(8);
  const auto layout = layout_of(2, 1);
  auto agnostic = make_tcn<double>(TcnVariant::modal_agnostic, layout, 3, 1);
  auto specific = make_tcn<double>(TcnVariant::modal_specific, layout, 3, 1);
  REQUIRE(agnostic.groups.size() == 1);
  const auto e = oracle::random_matrix(2, 3, rng);
  const std::vector<double> w{0.7, -1.3};
  const auto cross = second_order<double>(e, w);
  for (std::size_t k = 0; k < 3; ++k) CHECK(cross[k] == doctest::Approx(w[0] * w[1] * e(0, k) * e(1, k)));
  Matrix<double> one(1, 3);
  const std::vector<double> w0{0.7};
  for (double v : second_order<double>(one, w0)) CHECK(v == 0.0);

  randomize(agnostic, rng);
  const auto ref = oracle::cross_group(e, agnostic.groups[0].slot_weights, agnostic.groups[0].mlp);
  const auto got = token_representation(agnostic, e);
  for (std::size_t k = 0; k < 3; ++k) CHECK(got[k] == doctest::Approx(ref[k]).epsilon(1e-12));
  zero_group(agnostic.groups[0]);
  for (double v : token_representation(agnostic, e)) CHECK(v == 0.0);
  CHECK(specific.groups.size() == 2);
}

TEST_CASE("mean and linear ablations") {
  Rng rng(9);
  const auto layout = layout_of(2, 2);
  const auto e = oracle::random_matrix(4, 3, rng);
  const auto mean = make_tcn<double>(TcnVariant::mean, layout, 3, 1);
  const auto r = token_representation(mean, e);
  for (std::size_t k = 0; k < 3; ++k) {
    CHECK(r[k] == doctest::Approx((e(0, k) + e(1, k) + e(2, k) + e(3, k)) / 4.0));
  }
  CHECK(mean.parameter_count() == 0);

  const auto lin = make_tcn<double>(TcnVariant::linear, layout, 3, 1);
  REQUIRE(lin.groups[0].mlp.size() == 1);
  const auto ref = oracle::mlp_forward(oracle::concat_rows(e), lin.groups[0].mlp);
  const auto got = token_representation(lin, e);
  for (std::size_t k = 0; k < 3; ++k) CHECK(got[k] == doctest::Approx(ref[k]));
}

TEST_CASE("slot weights start at 1/n") {
  const auto net = make_tcn<float>(TcnVariant::modal_agnostic, layout_of(2, 4), 8, 3);
  for (float w : net.groups[0].slot_weights) CHECK(w == doctest::Approx(1.0 / 8));
}

TEST_CASE("batched forward equals per-item representation") {
  Rng rng(10);
  const auto layout = layout_of(2, 2);
  for (auto variant : {TcnVariant::modal_specific, TcnVariant::modal_agnostic, TcnVariant::mean, TcnVariant::linear}) {
    auto net = make_tcn<double>(variant, layout, 3, 4);
    randomize(net, rng);
    std::vector<Matrix<double>> inputs;
    for (std::size_t s = 0; s < 4; ++s) inputs.push_back(oracle::random_matrix(5, 3, rng));
    TcnCache<double> cache;
    const auto out = tcn_forward(net, inputs, cache);
    for (std::size_t b = 0; b < 5; ++b) {
      Matrix<double> e(4, 3);
      for (std::size_t s = 0; s < 4; ++s) for (std::size_t k = 0; k < 3; ++k) e(s, k) = inputs[s](b, k);
      const auto r = token_representation(net, e);
      for (std::size_t k = 0; k < 3; ++k) CHECK(out(b, k) == doctest::Approx(r[k]).epsilon(1e-12));
    }
  }
}

namespace {

// loss = sum_b sum_k G(b,k) * out(b,k) with fixed random G
double linear_probe(const TokenCrossNetwork<double>& net, const std::vector<Matrix<double>>& inputs,
                    const Matrix<double>& g) {
  TcnCache<double> cache;
  const auto out = tcn_forward(net, inputs, cache);
  double s = 0;
  for (std::size_t i = 0; i < out.size(); ++i) s += out.data()[i] * g.data()[i];
  return s;
}

}  // namespace

TEST_CASE("tcn backward matches finite differences") {
  Rng rng(11);
  for (auto variant : {TcnVariant::modal_specific, TcnVariant::modal_agnostic, TcnVariant::linear, TcnVariant::mean}) {
    const auto layout = layout_of(2, 2);
    auto net = make_tcn<double>(variant, layout, 3, 7);
    randomize(net, rng);
    std::vector<Matrix<double>> inputs;
    for (std::size_t s = 0; s < 4; ++s) inputs.push_back(oracle::random_matrix(3, 3, rng));
    const auto g = oracle::random_matrix(3, 3, rng);

    TcnCache<double> cache;
    tcn_forward(net, inputs, cache);
    auto grads = zeros_like(net);
    std::vector<Matrix<double>> input_grads;
    tcn_backward(net, cache, g, grads, input_grads);

    auto f = [&] { return linear_probe(net, inputs, g); };
    for (std::size_t gi = 0; gi < net.groups.size(); ++gi) {
      for (std::size_t x = 0; x < net.groups[gi].slot_weights.size(); ++x) {
        const double fd = oracle::central_difference(net.groups[gi].slot_weights[x], 1e-4, f);
        CHECK(oracle::relative_error(grads.groups[gi].slot_weights[x], fd) < 1e-4);
      }
      for (std::size_t l = 0; l < net.groups[gi].mlp.size(); ++l) {
        auto& layer = net.groups[gi].mlp[l];
        for (std::size_t k = 0; k < layer.weight.size(); ++k) {
          const double fd = oracle::central_difference(layer.weight.data()[k], 1e-4, f);
          CHECK(oracle::relative_error(grads.groups[gi].mlp[l].weight.data()[k], fd) < 1e-4);
        }
        for (std::size_t k = 0; k < layer.bias.size(); ++k) {
          const double fd = oracle::central_difference(layer.bias[k], 1e-4, f);
          CHECK(oracle::relative_error(grads.groups[gi].mlp[l].bias[k], fd) < 1e-4);
        }
      }
    }
    for (std::size_t s = 0; s < 4; ++s) {
      for (std::size_t k = 0; k < inputs[s].size(); ++k) {
        const double fd = oracle::central_difference(inputs[s].data()[k], 1e-4, f);
        CHECK(oracle::relative_error(input_grads[s].data()[k], fd) < 1e-4);
      }
    }
  }
}

TEST_CASE("backward special cases") {
  Rng rng(12);
  const auto layout = layout_of(1, 3);
  auto net = make_tcn<double>(TcnVariant::modal_agnostic, layout, 2, 1);
  randomize(net, rng);
  std::vector<Matrix<double>> inputs;
  for (std::size_t s = 0; s < 3; ++s) inputs.push_back(oracle::random_matrix(1, 2, rng));
  TcnCache<double> cache;
  tcn_forward(net, inputs, cache);

  auto grads = zeros_like(net);
  std::vector<Matrix<double>> ig;
  tcn_backward(net, cache, Matrix<double>(1, 2, 0.0), grads, ig);
  for (double w : grads.groups[0].slot_weights) CHECK(w == 0.0);
  for (const auto& m : ig) for (double v : m.values()) CHECK(v == 0.0);

  // zero MLP: d/dw_x = sum_k G_k e_xk (1 + sum_{y != x} w_y e_yk)
  for (auto& l : net.groups[0].mlp) {
    l.weight.fill(0.0);
    std::fill(l.bias.begin(), l.bias.end(), 0.0);
  }
  const Matrix<double> g(1, 2, std::vector<double>{0.3, -0.8});
  TcnCache<double> c2;
  tcn_forward(net, inputs, c2);
  auto g2 = zeros_like(net);
  tcn_backward(net, c2, g, g2, ig);
  const auto& w = net.groups[0].slot_weights;
  for (std::size_t x = 0; x < 3; ++x) {
    double expect = 0;
    for (std::size_t k = 0; k < 2; ++k) {
      double others = 0;
      for (std::size_t y = 0; y < 3; ++y) if (y != x) others += w[y] * inputs[y](0, k);
      expect += g(0, k) * inputs[x](0, k) * (1.0 + others);
    }
    CHECK(g2.groups[0].slot_weights[x] == doctest::Approx(expect).epsilon(1e-12));
  }
}

TEST_CASE("one-order gradient of a single slot") {
  Rng rng(13);
  auto net = make_tcn<double>(TcnVariant::modal_agnostic, layout_of(1, 1), 3, 1);
  for (auto& l : net.groups[0].mlp) {
    l.weight.fill(0.0);
    std::fill(l.bias.begin(), l.bias.end(), 0.0);
  }
  std::vector<Matrix<double>> inputs{oracle::random_matrix(1, 3, rng)};
  const auto g = oracle::random_matrix(1, 3, rng);
  TcnCache<double> cache;
  tcn_forward(net, inputs, cache);
  auto grads = zeros_like(net);
  std::vector<Matrix<double>> ig;
  tcn_backward(net, cache, g, grads, ig);
  double dot = 0;
  for (std::size_t k = 0; k < 3; ++k) dot += inputs[0](0, k) * g(0, k);
  CHECK(grads.groups[0].slot_weights[0] == doctest::Approx(dot).epsilon(1e-12));
}
