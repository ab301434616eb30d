#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "gtp/error.hpp"
#include "gtp/network.hpp"
#include "helpers.hpp"

using namespace gtp;
using gtp::test::check_gradients;
using gtp::test::project_to_scalar;
using gtp::test::random_tensor;

namespace {

NetworkConfig small_config(EdgeMode mode = EdgeMode::Shared) {
  NetworkConfig c;
  c.image_size = 16;
  c.encoder_channels = {4, 4, 4};
  c.feature_dim = 8;
  c.model_dim = 8;
  c.heads = 2;
  c.edge_mode = mode;
  c.edge_dim = 3;
  c.max_batch = 8;
  return c;
}

// Random edge embeddings so edges actually influence the output.
void randomize_edges(GtpNetwork& net, std::uint64_t seed) {
  if (!net.params().contains("graph.edge_embedding")) return;
  Rng rng(seed);
  for (auto& v : net.params().get("graph.edge_embedding").values()) v = rng.uniform(-0.5, 0.5);
}

struct BlockFixture {
  ParameterStore store;
  BlockShape shape;
  Tape tape;

  BlockFixture(std::size_t d_in, std::size_t d_out, std::size_t d_edge, std::size_t heads, std::uint64_t seed) {
    shape = {d_in, d_out, d_edge, heads, false};
    Rng rng(seed);
    init_block(store, "blk", shape, rng);
  }
  GtpBlockParams params() { return bind_block(ParamBinder(tape, store), "blk", shape); }
};

double dot(const Tensor& a, std::size_t i, const Tensor& b, std::size_t j, std::size_t from, std::size_t to) {
  double s = 0.0;
  for (std::size_t f = from; f < to; ++f) s += a.at(i, f) * b.at(j, f);
  return s;
}

}  // namespace

TEST_SUITE("gtp") {
  TEST_CASE("batch graph structure") {
    Tape t;
    const BatchGraph g1 = build_batch_graph(t.constant(Tensor({1, 4})), EdgeMode::None);
    CHECK(g1.neighbors(0).empty());
    CHECK(g1.edge_count() == 0);
    const BatchGraph g4 = build_batch_graph(t.constant(Tensor({4, 4})), EdgeMode::Shared, t.constant(Tensor({1, 2})));
    CHECK(g4.edge_count() == 12);
    std::size_t edges = 0;
    for (std::size_t i = 0; i < 4; ++i) {
      const auto n = g4.neighbors(i);
      CHECK(std::find(n.begin(), n.end(), i) == n.end());
      edges += n.size();
      for (auto j : n) CHECK(g4.edge_row(i, j) == 0);
    }
    CHECK(edges == 12);
    const BatchGraph gp =
        build_batch_graph(t.constant(Tensor({3, 4})), EdgeMode::Positional, t.constant(Tensor({16, 2})), 4);
    CHECK(gp.edge_row(2, 1) == 9);
    CHECK_THROWS_AS(build_batch_graph(t.constant(Tensor({5, 4})), EdgeMode::Positional, t.constant(Tensor({16, 2})), 4),
                    ConfigError);
    CHECK_THROWS_AS(build_batch_graph(t.constant(Tensor({2, 4})), EdgeMode::Shared), ConfigError);
    CHECK(parse_edge_mode("Positional") == EdgeMode::Positional);
    CHECK_THROWS_AS(parse_edge_mode("dense"), ConfigError);
  }

  TEST_CASE("attention: singleton neighbor, normalization, zero diagonal") {
    BlockFixture f(4, 4, 0, 2, 7);
    Rng rng(8);
    Var c2 = f.tape.constant(random_tensor({2, 4}, rng));
    const Tensor a2 = attention_coefficients(build_batch_graph(c2, EdgeMode::None), f.params()).value();
    for (std::size_t h = 0; h < 2; ++h) {
      CHECK(a2[(h * 2 + 0) * 2 + 1] == 1.0);
      CHECK(a2[(h * 2 + 1) * 2 + 0] == 1.0);
      CHECK(a2[(h * 2 + 0) * 2 + 0] == 0.0);
    }
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      Rng r(seed);
      BlockFixture g(5, 6, 3, 3, seed);
      Var c = g.tape.constant(random_tensor({4, 5}, r));
      Var e = g.tape.constant(random_tensor({1, 3}, r));
      const Tensor a = attention_coefficients(build_batch_graph(c, EdgeMode::Shared, e), g.params()).value();
      CHECK(a.dims() == Dims{3, 4, 4});
      for (std::size_t h = 0; h < 3; ++h)
        for (std::size_t i = 0; i < 4; ++i) {
          double s = 0.0;
          for (std::size_t j = 0; j < 4; ++j) s += a[(h * 4 + i) * 4 + j];
          CHECK(std::abs(s - 1.0) <= 1e-9);
          CHECK(a[(h * 4 + i) * 4 + i] == 0.0);
        }
    }
    Var c1 = f.tape.constant(random_tensor({1, 4}, rng));
    const Tensor a1 = attention_coefficients(build_batch_graph(c1, EdgeMode::None), f.params()).value();
    for (double v : a1.values()) CHECK(v == 0.0);
  }

  TEST_CASE("attention matches a scalar hand computation") {
    // d = 2, one head, W_q = W_k = I, no edges; three nodes so the softmax
    // has two terms.
    ParameterStore store;
    store.add("blk.w_q", Tensor::identity(2));
    store.add("blk.w_k", Tensor::identity(2));
    store.add("blk.w_v", Tensor::identity(2));
    store.add("blk.w_r", Tensor::identity(2));
    store.add("blk.w_g", Tensor({6, 1}));
    Tape t;
    const BlockShape shape{2, 2, 0, 1, false};
    const Tensor c = Tensor::matrix({{0.3, -1.2}, {0.8, 0.5}, {-0.4, 0.9}});
    const Tensor a = attention_coefficients(build_batch_graph(t.constant(c), EdgeMode::None),
                                            bind_block(ParamBinder(t, store), "blk", shape))
                         .value();
    for (std::size_t i = 0; i < 3; ++i) {
      double denom = 0.0;
      for (std::size_t j = 0; j < 3; ++j)
        if (j != i) denom += std::exp(dot(c, i, c, j, 0, 2) / std::sqrt(2.0));
      for (std::size_t j = 0; j < 3; ++j) {
        const double want = j == i ? 0.0 : std::exp(dot(c, i, c, j, 0, 2) / std::sqrt(2.0)) / denom;
        CHECK(std::abs(a[i * 3 + j] - want) <= 1e-12);
      }
    }
    // Two nodes: each attends to its single neighbor with weight 1.
    const Tensor a2 = attention_coefficients(
                          build_batch_graph(t.constant(Tensor::matrix({{0.3, -1.2}, {0.8, 0.5}})), EdgeMode::None),
                          bind_block(ParamBinder(t, store), "blk", shape))
                          .value();
    CHECK(a2[1] == 1.0);
    CHECK(a2[2] == 1.0);
  }

  TEST_CASE("full-dimension scaling flag") {
    ParameterStore store;
    store.add("blk.w_q", Tensor::identity(2));
    store.add("blk.w_k", Tensor::identity(2));
    store.add("blk.w_v", Tensor::identity(2));
    store.add("blk.w_r", Tensor::identity(2));
    store.add("blk.w_g", Tensor({6, 1}));
    Tape t;
    const Tensor c = Tensor::matrix({{1.0, 0.0}, {0.0, 1.0}, {1.0, 1.0}});
    for (bool full : {false, true}) {
      const BlockShape shape{2, 2, 0, 2, full};
      const Tensor a = attention_coefficients(build_batch_graph(t.constant(c), EdgeMode::None),
                                              bind_block(ParamBinder(t, store), "blk", shape))
                           .value();
      // Head 0 of node 0 sees scores c0[0] * cj[0]: 0 for node 1, 1 for node 2.
      const double scale = full ? std::sqrt(2.0) : 1.0;
      const double want = std::exp(1.0 / scale) / (1.0 + std::exp(1.0 / scale));
      CHECK(std::abs(a[0 * 3 + 2] - want) <= 1e-12);
    }
  }

  TEST_CASE("message aggregation") {
    Rng rng(11);
    {
      BlockFixture f(3, 4, 2, 2, 1);
      Var c = f.tape.constant(random_tensor({1, 3}, rng));
      Var e = f.tape.constant(random_tensor({1, 2}, rng));
      const BatchGraph g = build_batch_graph(c, EdgeMode::Shared, e);
      const auto p = f.params();
      const Tensor m = message_aggregate(g, attention_coefficients(g, p), p).value();
      for (double v : m.values()) CHECK(v == 0.0);
    }
    {
      BlockFixture f(3, 4, 2, 2, 2);
      const Tensor cv = random_tensor({2, 3}, rng), ev = random_tensor({1, 2}, rng);
      Var c = f.tape.constant(cv);
      Var e = f.tape.constant(ev);
      const BatchGraph g = build_batch_graph(c, EdgeMode::Shared, e);
      const auto p = f.params();
      const Tensor m = message_aggregate(g, attention_coefficients(g, p), p).value();
      const Tensor v = matmul(cv, p.w_v.value());
      const Tensor we = matmul(ev, p.w_e.value());
      for (std::size_t k = 0; k < 4; ++k) CHECK(std::abs(m.at(0, k) - (v.at(1, k) + we.at(0, k))) <= 1e-15);
    }
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      // Brute-force double loop over (i, j) with positional edges.
      BlockFixture f(3, 4, 2, 2, 10 + seed);
      const std::size_t b = 3, bmax = 4;
      const Tensor cv = random_tensor({b, 3}, rng), ev = random_tensor({bmax * bmax, 2}, rng);
      Var c = f.tape.constant(cv);
      const BatchGraph g = build_batch_graph(c, EdgeMode::Positional, f.tape.constant(ev), bmax);
      const auto p = f.params();
      const Tensor alpha = attention_coefficients(g, p).value();
      const Tensor m = message_aggregate(g, attention_coefficients(g, p), p).value();
      const Tensor v = matmul(cv, p.w_v.value());
      const Tensor we = matmul(ev, p.w_e.value());
      const std::size_t dh = 2;
      for (std::size_t i = 0; i < b; ++i)
        for (std::size_t k = 0; k < 4; ++k) {
          const std::size_t h = k / dh;
          double want = 0.0;
          for (std::size_t j = 0; j < b; ++j) {
            if (j == i) continue;
            want += alpha[(h * b + i) * b + j] * (v.at(j, k) + we.at(i * bmax + j, k));
          }
          CHECK(std::abs(m.at(i, k) - want) <= 1e-12);
        }
    }
  }

  TEST_CASE("gated residual") {
    Rng rng(21);
    BlockFixture f(3, 4, 0, 1, 3);
    const Tensor cv = random_tensor({2, 3}, rng), chv = random_tensor({2, 4}, rng);
    Var c = f.tape.constant(cv), ch = f.tape.constant(chv);
    auto p = f.params();
    const Tensor r = matmul(cv, p.w_r.value());

    // Hand evaluation of beta and the convex combination.
    const Tensor out = gated_residual(c, ch, p).value();
    const Tensor& wg = p.w_g.value();
    for (std::size_t i = 0; i < 2; ++i) {
      double z = 0.0;
      for (std::size_t k = 0; k < 4; ++k) {
        z += chv.at(i, k) * wg[k] + r.at(i, k) * wg[4 + k] + (chv.at(i, k) - r.at(i, k)) * wg[8 + k];
      }
      const double beta = 1.0 / (1.0 + std::exp(-z));
      for (std::size_t k = 0; k < 4; ++k) {
        CHECK(std::abs(out.at(i, k) - (beta * r.at(i, k) + (1.0 - beta) * chv.at(i, k))) <= 1e-12);
      }
    }

    // W_g = 0 gives the midpoint.
    f.store.get("blk.w_g").zero_grad();
    for (auto& v : f.store.get("blk.w_g").values()) v = 0.0;
    p = f.params();
    const Tensor mid = gated_residual(c, ch, p).value();
    for (std::size_t i = 0; i < 2; ++i)
      for (std::size_t k = 0; k < 4; ++k)
        CHECK(std::abs(mid.at(i, k) - 0.5 * (r.at(i, k) + chv.at(i, k))) <= 1e-15);

    // c_hat = r gives r whatever the gate.
    Rng g2(5);
    for (auto& v : f.store.get("blk.w_g").values()) v = g2.uniform(-2, 2);
    p = f.params();
    const Tensor same = gated_residual(c, f.tape.constant(r), p).value();
    for (std::size_t i = 0; i < same.size(); ++i) CHECK(std::abs(same[i] - r[i]) <= 1e-15);
  }

  TEST_CASE("single-node block reduces to the gated residual of zero messages") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
      Rng rng(50 + seed);
      BlockFixture f(5, 4, 3, 2, seed);
      const Tensor cv = random_tensor({1, 5}, rng);
      Var c = f.tape.constant(cv);
      const auto p = f.params();
      const Tensor out =
          apply_block(build_batch_graph(c, EdgeMode::Shared, f.tape.constant(random_tensor({1, 3}, rng))), p).value();
      const Tensor r = matmul(cv, p.w_r.value());
      const Tensor& wg = p.w_g.value();
      double z = 0.0;
      for (std::size_t k = 0; k < 4; ++k) z += r[k] * wg[4 + k] - r[k] * wg[8 + k];
      const double beta = 1.0 / (1.0 + std::exp(-z));
      for (std::size_t k = 0; k < 4; ++k) {
        CHECK(std::isfinite(out[k]));
        CHECK(std::abs(out[k] - beta * r[k]) <= 1e-12);
      }
    }
    GtpNetwork net(small_config(), 3);
    Rng rng(4);
    CHECK(net.logits(random_tensor({1, 3, 16, 16}, rng, 0, 1)).all_finite());
  }

  TEST_CASE("project_normalize train, eval and errors") {
    Rng rng(31);
    ParameterStore store;
    init_head(store, 8, 8, rng);
    Tape t;
    const auto head = bind_head(ParamBinder(t, store));
    const Tensor x = random_tensor({4, 8}, rng, -2, 2);
    BatchNormState state = BatchNormState::identity(8);
    const Tensor y = project_normalize(t.constant(x), head, state, Mode::Train).value();
    const Tensor lin = add_bias(matmul(t.constant(x), head.linear_weight), head.linear_bias).value();
    for (std::size_t j = 0; j < 8; ++j) {
      double m = 0.0, v = 0.0;
      for (std::size_t i = 0; i < 4; ++i) m += y.at(i, j);
      m /= 4;
      for (std::size_t i = 0; i < 4; ++i) v += (y.at(i, j) - m) * (y.at(i, j) - m);
      v /= 4;
      CHECK(std::abs(m) <= 1e-6);

      // Direct formula.
      double mu = 0.0, var = 0.0;
      for (std::size_t i = 0; i < 4; ++i) mu += lin.at(i, j);
      mu /= 4;
      for (std::size_t i = 0; i < 4; ++i) var += (lin.at(i, j) - mu) * (lin.at(i, j) - mu);
      var /= 4;
      CHECK(std::abs(v - var / (var + 1e-5)) <= 1e-9);  // 1 up to epsilon
      for (std::size_t i = 0; i < 4; ++i) {
        CHECK(std::abs(y.at(i, j) - (lin.at(i, j) - mu) / std::sqrt(var + 1e-5)) <= 1e-9);
      }
      // Running statistics moved by momentum 0.1, unbiased variance.
      CHECK(std::abs(state.running_mean[j] - 0.1 * mu) <= 1e-12);
      CHECK(std::abs(state.running_var[j] - (0.9 + 0.1 * var * 4.0 / 3.0)) <= 1e-12);
    }

    const BatchNormState neutral = BatchNormState::identity(8);
    const Tensor e = project_normalize(t.constant(x), head, neutral).value();
    for (std::size_t i = 0; i < e.size(); ++i) CHECK(std::abs(e[i] - lin[i] / std::sqrt(1.0 + 1e-5)) <= 1e-12);
    BatchNormState s1 = BatchNormState::identity(8);
    CHECK_THROWS_AS(project_normalize(t.constant(random_tensor({1, 8}, rng)), head, s1, Mode::Train), UsageError);
    CHECK_NOTHROW(project_normalize(t.constant(random_tensor({1, 8}, rng)), head, neutral));
  }

  TEST_CASE("batch norm gradients") {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      Rng rng(seed);
      ParameterStore ps;
      ps.add("x", random_tensor({4, 3}, rng));
      ps.add("gamma", random_tensor({3}, rng, 0.5, 1.5));
      ps.add("beta", random_tensor({3}, rng));
      const Tensor mean = random_tensor({3}, rng), var = random_tensor({3}, rng, 0.5, 2.0);
      auto train = [&](Tape& t, ParameterStore& p) {
        return project_to_scalar(batch_norm_train(t.parameter(p.get("x")), t.parameter(p.get("gamma")),
                                                  t.parameter(p.get("beta")), 1e-5),
                                 seed);
      };
      auto eval = [&](Tape& t, ParameterStore& p) {
        return project_to_scalar(batch_norm_eval(t.parameter(p.get("x")), t.parameter(p.get("gamma")),
                                                 t.parameter(p.get("beta")), mean, var, 1e-5),
                                 seed);
      };
      CHECK(check_gradients(ps, train).error <= 1e-4);
      CHECK(check_gradients(ps, eval).error <= 1e-4);
    }
  }

  TEST_CASE("cnn encoder") {
    Rng rng(41);
    ParameterStore store;
    init_encoder(store, EncoderShape{3, {4, 4, 4}, 6}, rng);
    Tape t;
    const auto enc = bind_encoder(ParamBinder(t, store));
    const Tensor zero = cnn_encode(t.constant(Tensor({2, 3, 16, 16})), enc).value();
    for (double v : zero.values()) CHECK(v == 0.0);
    for (std::size_t b : {1, 4, 32}) {
      CHECK(cnn_encode(t.constant(random_tensor({b, 3, 8, 8}, rng, 0, 1)), enc).value().dims() == Dims{b, 6});
    }
    CHECK_THROWS_AS(cnn_encode(t.constant(Tensor({1, 3, 7, 16})), enc), ShapeError);
    CHECK_THROWS_AS(cnn_encode(t.constant(Tensor({1, 1, 16, 16})), enc), ShapeError);

    // Gradient against finite differences, including the input images.
    for (std::uint64_t seed = 0; seed < 3; ++seed) {
      ParameterStore ps;
      Rng r(seed);
      init_encoder(ps, EncoderShape{3, {3, 3, 3}, 4}, r);
      for (auto& e : ps)
        if (e.name.find("bias") != std::string::npos)
          for (auto& v : e.tensor.values()) v = r.uniform(-0.1, 0.1);
      ps.add("images", random_tensor({2, 3, 16, 16}, r, 0, 1));
      const auto worst = check_gradients(ps, [&](Tape& tape, ParameterStore& p) {
        return project_to_scalar(cnn_encode(tape.parameter(p.get("images")), bind_encoder(ParamBinder(tape, p))), seed);
      });
      INFO("worst " << worst.name << "[" << worst.index << "]");
      CHECK(worst.error <= 1e-4);
    }
  }

  TEST_CASE("network shapes and modes") {
    for (EdgeMode mode : {EdgeMode::None, EdgeMode::Shared, EdgeMode::Positional}) {
      GtpNetwork net(small_config(mode), 1);
      Rng rng(2);
      for (std::size_t b : {2, 8}) {
        Tape t;
        CHECK(net.forward(t, random_tensor({b, 3, 16, 16}, rng, 0, 1), Mode::Train).value().dims() == Dims{b, 4});
      }
    }
    NetworkConfig big = small_config(EdgeMode::Shared);
    GtpNetwork net(big, 3);
    Rng rng(4);
    Tape t;
    const Tensor z = net.forward(t, random_tensor({32, 3, 16, 16}, rng, 0, 1), Mode::Train).value();
    CHECK(z.dims() == Dims{32, 4});
    CHECK(z.all_finite());
    Tape t1;
    CHECK_THROWS_AS(net.forward(t1, random_tensor({1, 3, 16, 16}, rng, 0, 1), Mode::Train), UsageError);
    CHECK(net.config().blocks == 4);
    CHECK(net.params().contains("block4.w_g"));
    CHECK(!net.params().contains("block5.w_q"));
    CHECK(net.params().get("classifier.weight").dims() == Dims{8, 4});
    CHECK(net.params().get("block1.w_q").dims() == Dims{8, 8});
    CHECK(NetworkConfig::from_json(big.to_json()).to_json() == big.to_json());
    NetworkConfig bad = big;
    bad.heads = 3;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
  }

  TEST_CASE("edge embeddings start at zero and shared equals none initially") {
    GtpNetwork shared(small_config(EdgeMode::Shared), 5);
    for (double v : shared.params().get("graph.edge_embedding").values()) CHECK(v == 0.0);
    Rng rng(6);
    const Tensor images = random_tensor({4, 3, 16, 16}, rng, 0, 1);
    const Tensor z = shared.logits(images);
    CHECK(z.all_finite());
  }

  TEST_CASE("eval-mode permutation equivariance is bit-exact") {
    for (EdgeMode mode : {EdgeMode::None, EdgeMode::Shared}) {
      GtpNetwork net(small_config(mode), 7);
      randomize_edges(net, 8);
      Rng rng(9);
      const std::size_t b = 6;
      const Tensor images = random_tensor({b, 3, 16, 16}, rng, 0, 1);
      const Tensor z = net.logits(images);
      for (int rep = 0; rep < 5; ++rep) {
        std::vector<std::size_t> perm(b);
        std::iota(perm.begin(), perm.end(), std::size_t{0});
        rng.shuffle(perm);
        Tensor permuted(images.dims());
        const std::size_t n = images.size() / b;
        for (std::size_t i = 0; i < b; ++i)
          std::copy_n(images.data() + perm[i] * n, n, permuted.data() + i * n);
        const Tensor zp = net.logits(permuted);
        for (std::size_t i = 0; i < b; ++i)
          for (std::size_t k = 0; k < 4; ++k) CHECK(zp.at(i, k) == z.at(perm[i], k));
      }
    }
  }

  TEST_CASE("dnn mode rows are independent of the batch") {
    NetworkConfig c = small_config();
    c.use_gtp = false;
    GtpNetwork net(c, 10);
    CHECK(!net.params().contains("block1.w_q"));
    CHECK(net.params().get("classifier.weight").dims() == Dims{8, 4});
    Rng rng(11);
    Tensor images = random_tensor({4, 3, 16, 16}, rng, 0, 1);
    const Tensor z = net.logits(images);
    const std::size_t n = images.size() / 4;
    for (std::size_t i = n; i < images.size(); ++i) images[i] = rng.uniform();
    const Tensor z2 = net.logits(images);
    for (std::size_t k = 0; k < 4; ++k) CHECK(z2.at(0, k) == z.at(0, k));
  }

  TEST_CASE("end-to-end gradients for each edge mode") {
    for (EdgeMode mode : {EdgeMode::None, EdgeMode::Shared, EdgeMode::Positional}) {
      GtpNetwork net(small_config(mode), 12);
      randomize_edges(net, 13);
      Rng rng(14);
      for (auto& e : net.params())
        if (e.name.find("bias") != std::string::npos)
          for (auto& v : e.tensor.values()) v = rng.uniform(-0.05, 0.05);
      const Tensor images = random_tensor({4, 3, 16, 16}, rng, 0, 1);
      const auto worst = check_gradients(net.params(), [&](Tape& t, ParameterStore&) {
        return project_to_scalar(net.forward(t, images, Mode::Train), 15);
      });
      INFO(to_string(mode) << " worst " << worst.name << "[" << worst.index << "] analytic " << worst.analytic
                           << " numeric " << worst.numeric);
      CHECK(worst.error <= 1e-4);
    }
  }

  TEST_CASE("every parameter receives a gradient") {
    for (EdgeMode mode : {EdgeMode::Shared, EdgeMode::Positional}) {
      GtpNetwork net(small_config(mode), 16);
      randomize_edges(net, 17);
      Rng rng(18);
      Tape t;
      net.params().zero_grads();
      t.backward(project_to_scalar(net.forward(t, random_tensor({4, 3, 16, 16}, rng, 0, 1), Mode::Train), 19));
      for (const auto& e : net.params()) {
        double linf = 0.0;
        for (double g : e.tensor.grad()) linf = std::max(linf, std::abs(g));
        INFO(e.name);
        CHECK(linf > 0.0);
      }
    }
  }
}
