#include <catch2/catch_amalgamated.hpp>

#include "magex/nn.hpp"
#include "support/finite_diff.hpp"

using namespace magex;
using magex::testing::gradcheck;

namespace {

LayerParams layer_from(const std::string& name, std::vector<std::size_t> shape,
                       std::vector<double> w, std::vector<double> b) {
  LayerParams lp;
  lp.name = name;
  lp.weight = Tensor(std::move(shape), std::move(w), true);
  lp.bias = Tensor({lp.weight.dim(1)}, std::move(b), true);
  return lp;
}

}  // namespace

TEST_CASE("mlp identity and zero layers") {
  auto id = layer_from("id", {2, 2}, {1, 0, 0, 1}, {0, 0});
  Tensor x({2}, {1.0, 2.0});
  Tensor y = mlp_forward(std::vector<LayerParams>{id}, x);
  REQUIRE(y.at(0) == 1.0);
  REQUIRE(y.at(1) == 2.0);

  auto zero = layer_from("zero", {2, 3}, std::vector<double>(6, 0.0), {0, 0, 0});
  Tensor z = mlp_forward(std::vector<LayerParams>{zero}, x);
  for (int i = 0; i < 3; ++i) REQUIRE(z.at(i) == 0.0);

  auto bad = layer_from("narrow", {3, 1}, {1, 1, 1}, {0});
  REQUIRE_THROWS_WITH(mlp_forward(std::vector<LayerParams>{bad}, x),
                      Catch::Matchers::ContainsSubstring("narrow"));
}

TEST_CASE("two-layer mlp gradient vs finite differences") {
  Rng rng(21);
  for (int trial = 0; trial < 5; ++trial) {
    std::vector<LayerParams> net;
    net.push_back(make_layer("l0", 4, 6, rng));
    net.push_back(make_layer("l1", 6, 3, rng));
    Tensor x = Tensor::randn({4}, rng, 1.0, true);
    auto forward = [&] { return mean_all(mlp_forward(net, x)); };
    REQUIRE(gradcheck(x, forward) < 1e-4);
    REQUIRE(gradcheck(net[0].weight, forward) < 1e-4);
    REQUIRE(gradcheck(net[1].bias, forward) < 1e-4);
  }
}

TEST_CASE("gcn single node with identity weight returns input") {
  auto w = layer_from("gcn", {3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1}, {0, 0, 0});
  Tensor h({1, 3}, {0.4, -0.7, 1.1});
  Tensor a({1, 1}, {0.0});  // self-loop added internally, degree 1
  Tensor out = gcn_layer(h, a, w, Activation::Identity);
  for (int j = 0; j < 3; ++j) REQUIRE(out.at(0, j) == Catch::Approx(h.at(0, j)).margin(1e-15));
}

TEST_CASE("gcn rejects bad adjacency") {
  Rng rng(2);
  auto w = make_layer("w", 2, 2, rng);
  Tensor h = Tensor::randn({3, 2}, rng);
  REQUIRE_THROWS_AS(gcn_layer(h, Tensor::zeros({3, 2}), w), ShapeError);
  Tensor neg({3, 3}, {0, 0, 0, 0, -1, 0, 0, 0, 0});
  REQUIRE_THROWS_AS(gcn_layer(h, neg, w), ShapeError);
}

TEST_CASE("gcn permutation equivariance") {
  Rng rng(23);
  for (int trial = 0; trial < 10; ++trial) {
    const std::size_t n = 2 + rng.uniform_int(7);  // up to 8 nodes
    auto w = make_layer("w", 5, 4, rng);
    Tensor h = Tensor::randn({n, 5}, rng);
    // random symmetric non-negative adjacency
    std::vector<double> adj(n * n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = i + 1; j < n; ++j)
        if (rng.uniform() < 0.5) adj[i * n + j] = adj[j * n + i] = rng.uniform(0.1, 2.0);
    Tensor a({n, n}, adj);
    Tensor out = gcn_layer(h, a, w);

    // random permutation
    std::vector<std::size_t> perm(n);
    for (std::size_t i = 0; i < n; ++i) perm[i] = i;
    for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.uniform_int(static_cast<int>(i))]);

    std::vector<double> hp(n * 5), ap(n * n);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < 5; ++j) hp[i * 5 + j] = h.at(perm[i], j);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) ap[i * n + j] = a.at(perm[i], perm[j]);
    Tensor outp = gcn_layer(Tensor({n, 5}, hp), Tensor({n, n}, ap), w);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < 4; ++j)
        REQUIRE(outp.at(i, j) == Catch::Approx(out.at(perm[i], j)).margin(1e-10));
  }
}

TEST_CASE("gcn gradient wrt node features and adjacency") {
  Rng rng(29);
  auto w = make_layer("w", 3, 3, rng);
  Tensor h = Tensor::randn({4, 3}, rng, 1.0, true);
  std::vector<double> adj(16);
  for (auto& v : adj) v = rng.uniform(0.05, 1.0);
  Tensor a({4, 4}, adj, true);
  auto forward = [&] { return sum_all(gcn_layer(h, a, w, Activation::Identity)); };
  REQUIRE(gradcheck(h, forward) < 1e-4);
  REQUIRE(gradcheck(a, forward) < 1e-4);
  // with the ReLU path too
  auto forward_relu = [&] { return sum_all(gcn_layer(h, a, w, Activation::Relu)); };
  REQUIRE(gradcheck(h, forward_relu) < 1e-4);
}

TEST_CASE("gru zero input, zero hidden, zero weights gives zero") {
  GruCell cell;
  cell.hidden_size = 4;
  cell.input = layer_from("gi", {4, 12}, std::vector<double>(48, 0.0),
                          std::vector<double>(12, 0.0));
  cell.hidden = layer_from("gh", {4, 12}, std::vector<double>(48, 0.0),
                           std::vector<double>(12, 0.0));
  Tensor out = recurrent_step(cell, Tensor::zeros({4}), Tensor::zeros({4}));
  for (int i = 0; i < 4; ++i) REQUIRE(out.at(i) == 0.0);
}

TEST_CASE("gru determinism and gradient wrt previous hidden") {
  Rng rng(31);
  GruCell cell = make_gru("cell", 3, 5, rng);
  Tensor x = Tensor::randn({3}, rng);
  Tensor h = Tensor::randn({5}, rng, 1.0, true);
  Tensor a = recurrent_step(cell, x, h);
  Tensor b = recurrent_step(cell, x, h);
  for (int i = 0; i < 5; ++i) REQUIRE(a.at(i) == b.at(i));
  REQUIRE_THROWS_AS(recurrent_step(cell, x, Tensor::zeros({4})), ShapeError);
  auto forward = [&] { return mean_all(recurrent_step(cell, x, h)); };
  REQUIRE(gradcheck(h, forward) < 1e-4);
  REQUIRE(gradcheck(cell.input.weight, forward) < 1e-4);
}

TEST_CASE("gumbel softmax basics") {
  Rng rng(37);
  Tensor logits({3}, {10.0, 0.0, 0.0});
  REQUIRE_THROWS_AS(gumbel_softmax(logits, 0.0, rng), InputError);
  REQUIRE_THROWS_AS(gumbel_softmax(logits, -1.0, rng), InputError);

  // low temperature: the dominant logit wins almost always
  int wins = 0;
  for (int i = 0; i < 1000; ++i) {
    auto s = gumbel_softmax(logits, 0.01, rng);
    double soft_sum = 0.0;
    for (int j = 0; j < 3; ++j) soft_sum += s.soft.at(j);
    REQUIRE(std::fabs(soft_sum - 1.0) < 1e-9);
    int count_ones = 0;
    for (int j = 0; j < 3; ++j)
      if (s.hard.at(j) == 1.0) ++count_ones;
    REQUIRE(count_ones == 1);
    if (s.hard.at(0) == 1.0) ++wins;
  }
  REQUIRE(wins >= 990);
}

TEST_CASE("gumbel softmax high temperature is near uniform") {
  Rng rng(41);
  Tensor logits({4}, {0.3, 0.3, 0.3, 0.3});
  const int draws = 10000;
  std::vector<int> counts(4, 0);
  for (int i = 0; i < draws; ++i) {
    auto s = gumbel_softmax(logits, 100.0, rng);
    for (int j = 0; j < 4; ++j)
      if (s.hard.at(j) == 1.0) ++counts[j];
  }
  const double expect = draws / 4.0;
  const double sigma = std::sqrt(draws * 0.25 * 0.75);
  for (int j = 0; j < 4; ++j)
    REQUIRE(std::fabs(counts[j] - expect) < 3.0 * sigma);
}

TEST_CASE("gumbel soft path gradient with frozen noise") {
  Rng rng(43);
  Tensor logits = Tensor::randn({2, 3}, rng, 1.0, true);
  Tensor noise = draw_gumbel_noise({2, 3}, rng);
  Tensor w = Tensor::randn({2, 3}, rng);
  auto forward = [&] {
    auto s = gumbel_softmax_with_noise(logits, 0.7, noise);
    return sum_all(mul(s.soft, w));
  };
  REQUIRE(gradcheck(logits, forward) < 1e-4);
  // straight-through: hard output, gradient identical to the soft path
  auto forward_hard = [&] {
    auto s = gumbel_softmax_with_noise(logits, 0.7, noise);
    return sum_all(mul(s.hard, w));
  };
  logits.drop_grad();
  Tensor l1 = forward_hard();
  l1.backward();
  auto hard_grad = logits.grad();
  logits.drop_grad();
  Tensor l2 = forward();
  l2.backward();
  for (std::size_t i = 0; i < hard_grad.size(); ++i)
    REQUIRE(hard_grad[i] == Catch::Approx(logits.grad()[i]).margin(1e-14));
}

TEST_CASE("orthogonal init has orthonormal columns") {
  Rng rng(47);
  for (auto [in, out] : std::vector<std::pair<std::size_t, std::size_t>>{
           {8, 8}, {32, 8}, {40, 32}, {5, 3}}) {
    auto w = orthogonal_matrix(in, out, rng);
    for (std::size_t c1 = 0; c1 < out; ++c1)
      for (std::size_t c2 = 0; c2 < out; ++c2) {
        double dot = 0.0;
        for (std::size_t r = 0; r < in; ++r) dot += w[r * out + c1] * w[r * out + c2];
        REQUIRE(std::fabs(dot - (c1 == c2 ? 1.0 : 0.0)) < 1e-6);
      }
  }
}

TEST_CASE("adam zero gradient leaves parameters unchanged") {
  Rng rng(53);
  Tensor p = Tensor::randn({4}, rng, 1.0, true);
  auto before = p.values();
  Adam opt(0.1);
  p.zero_grad();
  opt.step({{"p", &p}});
  for (int i = 0; i < 4; ++i) REQUIRE(p.at(i) == before[i]);
}

TEST_CASE("adam moves against a constant gradient monotonically") {
  Tensor p({1}, {0.0}, true);
  Adam opt(0.01);
  double prev = 0.0;
  for (int i = 0; i < 25; ++i) {
    p.zero_grad();
    p.node()->grad[0] = 2.5;  // constant positive gradient
    opt.step({{"p", &p}});
    REQUIRE(p.at(0) < prev);
    prev = p.at(0);
  }
}

TEST_CASE("gradients clipped to global norm before the step") {
  Tensor a({2}, {0.0, 0.0}, true);
  Tensor b({2}, {0.0, 0.0}, true);
  a.zero_grad();
  b.zero_grad();
  // global norm 20: (12, 16) across two tensors
  a.node()->grad = {12.0, 0.0};
  b.node()->grad = {0.0, 16.0};
  ParamRefs refs = {{"a", &a}, {"b", &b}};
  const double pre = clip_gradients(refs, 10.0);
  REQUIRE(pre == Catch::Approx(20.0));
  double post = std::sqrt(a.grad()[0] * a.grad()[0] + b.grad()[1] * b.grad()[1]);
  REQUIRE(post == Catch::Approx(10.0).margin(1e-12));
}

TEST_CASE("adam aborts on NaN gradient naming the parameter") {
  Tensor p({1}, {0.0}, true);
  p.zero_grad();
  p.node()->grad[0] = std::nan("");
  Adam opt(0.01);
  REQUIRE_THROWS_WITH(opt.step({{"theta", &p}}),
                      Catch::Matchers::ContainsSubstring("theta"));
}
