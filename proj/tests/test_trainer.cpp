#include <cmath>
#include <sstream>
#include <vector>

#include "doctest.h"
#include "gtp/checkpoint.hpp"
#include "gtp/error.hpp"
#include "gtp/image.hpp"
#include "gtp/radam.hpp"
#include "gtp/synthetic.hpp"
#include "gtp/trainer.hpp"
#include "helpers.hpp"

using namespace gtp;

namespace {

// Straight transcription of the RAdam recurrences for one scalar.
struct ScalarRAdam {
  double lr, b1 = 0.9, b2 = 0.999, eps = 1e-8;
  double m = 0, v = 0;
  int t = 0;
  double step(double theta, double g) {
    ++t;
    m = b1 * m + (1 - b1) * g;
    v = b2 * v + (1 - b2) * g * g;
    const double mhat = m / (1 - std::pow(b1, t));
    const double rho_inf = 2 / (1 - b2) - 1;
    const double rho = rho_inf - 2 * t * std::pow(b2, t) / (1 - std::pow(b2, t));
    if (rho > 4) {
      const double r = std::sqrt((rho - 4) * (rho - 2) * rho_inf / ((rho_inf - 4) * (rho_inf - 2) * rho));
      return theta - lr * r * mhat / (std::sqrt(v / (1 - std::pow(b2, t))) + eps);
    }
    return theta - lr * mhat;
  }
};

TrainConfig tiny_config() {
  TrainConfig c;
  c.network.image_size = 16;
  c.network.encoder_channels = {4, 8, 8};
  c.network.feature_dim = 16;
  c.network.model_dim = 16;
  c.network.heads = 2;
  c.network.edge_dim = 4;
  c.epochs = 2;
  c.batch_size = 8;
  c.eval_batch_size = 8;
  c.optimizer.lr = 3e-3;
  c.seed = 1;
  return c;
}

std::pair<LabeledDataset, LabeledDataset> tiny_data() {
  SynthConfig s;
  s.counts = {13, 12, 13, 12};  // 40 training samples after the split
  s.image_size = 16;
  s.seed = 2;
  return stratified_split(generate_synthetic(s), 2);
}

}  // namespace

TEST_SUITE("trainer") {
  TEST_CASE("rectification schedule") {
    CHECK(std::abs(radam_rho(1, 0.999) - (1999.0 - 2 * 0.999 / 0.001)) <= 1e-6);
    CHECK(radam_rho(1, 0.999) < 4);
    CHECK(!radam_rectification(1, 0.999).has_value());
    std::uint64_t first = 0;
    for (std::uint64_t t = 1; t < 20 && !first; ++t)
      if (radam_rho(t, 0.999) > 4) first = t;
    CHECK(first == 5);
    CHECK(!radam_rectification(4, 0.999).has_value());
    CHECK(radam_rectification(5, 0.999).has_value());
    CHECK(*radam_rectification(100000, 0.999) > 0.99);
  }

  TEST_CASE("RAdam step") {
    ParameterStore ps;
    Tensor& x = ps.add("x", Tensor({2}, {1.0, -2.0}));
    RAdam opt(RAdamConfig{0.01});
    CHECK_THROWS_AS(opt.step(ps), UsageError);
    x.grad()[0] = 0.5;
    x.grad()[1] = -3.0;
    opt.step(ps);
    CHECK(!opt.last_step_rectified());
    CHECK(std::abs(x[0] - (1.0 - 0.01 * 0.5)) <= 1e-15);
    CHECK(std::abs(x[1] - (-2.0 + 0.01 * 3.0)) <= 1e-15);
    CHECK(x.grad()[0] == 0.0);

    ParameterStore zs;
    Tensor& z = zs.add("z", Tensor({1}, {0.7}));
    RAdam zopt(RAdamConfig{0.01});
    for (int i = 0; i < 10; ++i) {
      z.grad();
      zopt.step(zs);
    }
    CHECK(z[0] == 0.7);
    CHECK(zopt.steps() == 10);

    ParameterStore ss;
    Tensor& s = ss.add("s", Tensor({1}, {0.0}));
    RAdam sopt(RAdamConfig{1e-3});
    ScalarRAdam ref{1e-3};
    double theta = 0.0, prev = 0.0;
    for (int i = 0; i < 50; ++i) {
      s.grad()[0] = 0.4;
      sopt.step(ss);
      theta = ref.step(theta, 0.4);
      CHECK(std::abs(s[0] - theta) <= 1e-15);
      CHECK(s[0] < prev);
      prev = s[0];
    }
    CHECK(sopt.last_step_rectified());
    RAdamConfig bad;
    bad.lr = -1;
    CHECK_THROWS_AS(bad.validate(), ConfigError);
  }

  TEST_CASE("config validation") {
    TrainConfig c = tiny_config();
    CHECK_NOTHROW(c.validate());
    c.batch_size = 1;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = tiny_config();
    c.epochs = 0;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    c = tiny_config();
    c.network.edge_mode = EdgeMode::Positional;
    c.network.max_batch = 4;
    CHECK_THROWS_AS(c.validate(), ConfigError);
    const auto [train_set, test] = tiny_data();
    c = tiny_config();
    c.batch_size = 1;
    CHECK_THROWS_AS(train(c, train_set, test), ConfigError);
  }

  TEST_CASE("short training run, determinism, checkpoints") {
    const auto [train_set, test] = tiny_data();
    CHECK(train_set.size() == 40);
    const TrainConfig c = tiny_config();
    std::ostringstream progress;
    const TrainResult a = train(c, train_set, test, &progress);
    CHECK(progress.str().find("class counts (train): silicosis=10 normal=10") != std::string::npos);
    REQUIRE(a.log.size() == 3);
    CHECK(a.log[2].train_loss < a.log[0].train_loss);
    CHECK(a.best_epoch >= 1);
    CHECK(a.final.counts.n == train_set.counts().n);
    CHECK(a.final.loss == LossKind::Balanced);

    const TrainResult b = train(c, train_set, test);
    CHECK(encode_checkpoint(a.final) == encode_checkpoint(b.final));
    CHECK(encode_checkpoint(a.best) == encode_checkpoint(b.best));
    CHECK(format_epoch_log(a.log) == format_epoch_log(b.log));
    CHECK(format_epoch_log(a.log).rfind("epoch,train_loss,test_macro_f1\n", 0) == 0);

    // Round trip at 32-bit resolution.
    const std::string bytes = encode_checkpoint(a.final);
    const Checkpoint back = decode_checkpoint(bytes);
    GtpNetwork rounded = a.final.network;
    round_to_float(rounded);
    for (const auto& e : rounded.params()) {
      INFO(e.name);
      CHECK(back.network.params().get(e.name) == e.tensor);
    }
    CHECK(back.network.batch_norm().running_mean == rounded.batch_norm().running_mean);
    CHECK(back.network.batch_norm().running_var == rounded.batch_norm().running_var);
    CHECK(back.counts.n == a.final.counts.n);
    CHECK(back.seed == c.seed);
    CHECK(encode_checkpoint(back) == bytes);

    const auto dir = gtp::test::temp_dir("trainer_ckpt");
    save_checkpoint(a.final, (dir / "m.ckpt").string());
    CHECK(encode_checkpoint(load_checkpoint((dir / "m.ckpt").string())) == bytes);
    CHECK_THROWS_AS(load_checkpoint((dir / "none.ckpt").string()), IoError);
    std::string bad = bytes;
    bad[0] = 'X';
    CHECK_THROWS_AS(decode_checkpoint(bad), ParseError);
    CHECK_THROWS_AS(decode_checkpoint(bytes.substr(0, bytes.size() - 3)), ParseError);
    CHECK_THROWS_AS(decode_checkpoint(bytes + "x"), ParseError);

    // Evaluation.
    const Evaluation e1 = evaluate(back.network, test, 8, "m");
    const Evaluation e2 = evaluate(back.network, test, 8, "m");
    CHECK(e1.predictions == e2.predictions);
    CHECK(e1.report.to_json() == e2.report.to_json());
    for (const auto& row : e1.predictions.rows) {
      double s = 0.0;
      for (double v : row.probs) s += v;
      CHECK(std::abs(s - 1.0) <= 1e-6);
    }
    const auto recomputed = confusion_matrix(e1.predictions.argmax_classes(), e1.predictions.labels());
    CHECK(e1.report.macro_f1 == macro_f1(recomputed));
    CHECK(e1.predictions.labels() == test.labels());
  }

  TEST_CASE("dnn baseline training") {
    const auto [train_set, test] = tiny_data();
    TrainConfig c = tiny_config();
    c.network.use_gtp = false;
    c.loss = LossKind::CrossEntropy;
    c.epochs = 1;
    const TrainResult r = train(c, train_set, test);
    CHECK(r.log.size() == 2);
    CHECK(std::isfinite(r.log[1].train_loss));
    const Checkpoint back = decode_checkpoint(encode_checkpoint(r.final));
    CHECK(!back.network.config().use_gtp);
    CHECK(back.loss == LossKind::CrossEntropy);
  }

  TEST_CASE("batch norm recalibration uses batch statistics") {
    const auto [train_set, test] = tiny_data();
    TrainConfig c = tiny_config();
    GtpNetwork net(c.network, 3);
    recalibrate_batch_norm(net, test, 4);
    // A single train-mode pass over the first batch gives the same stats when
    // the whole set is one batch.
    GtpNetwork one(c.network, 3);
    recalibrate_batch_norm(one, test, test.size());
    GtpNetwork manual(c.network, 3);
    manual.batch_norm().momentum = 1.0;
    std::vector<const Tensor*> imgs;
    for (const auto& s : test.items) imgs.push_back(&s.image);
    Tape t;
    manual.forward(t, stack_images(imgs), Mode::Train);
    for (std::size_t j = 0; j < 16; ++j) {
      CHECK(std::abs(one.batch_norm().running_mean[j] - manual.batch_norm().running_mean[j]) <= 1e-12);
      CHECK(std::abs(one.batch_norm().running_var[j] - manual.batch_norm().running_var[j]) <= 1e-12);
    }
    CHECK(one.batch_norm().momentum == c.network.bn_momentum);
    CHECK(net.batch_norm().running_mean.all_finite());
  }
}
