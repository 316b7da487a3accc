#include <cmath>
#include <cstring>
#include <fstream>
#include <random>
#include <sstream>

#include "doctest.h"

#include "cpdmom/errors.hpp"
#include "cpdmom/lstm.hpp"
#include "support.hpp"

using namespace cpdmom;
using namespace cpdmom::dmn;

namespace {

LstmParams random_params(int d, int h, double scale, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-scale, scale);
  LstmParams p = LstmParams::zeros(d, h);
  Eigen::VectorXd flat = p.flatten();
  for (Eigen::Index i = 0; i < flat.size(); ++i) flat[i] = u(rng);
  p.assign(flat);
  return p;
}

Batch random_batch(int n, int d, int tau, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(0.0, 1.0);
  Batch b;
  for (int s = 0; s < n; ++s) {
    Eigen::MatrixXd x(d, tau);
    Eigen::VectorXd y(tau);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = z(rng);
    for (int t = 0; t < tau; ++t) y[t] = 0.01 * z(rng) + 0.002;
    b.inputs.push_back(x);
    b.targets.push_back(y);
  }
  return b;
}

bool same_bits(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  return a.size() == b.size() && std::memcmp(a.data(), b.data(), sizeof(double) * static_cast<std::size_t>(a.size())) == 0;
}

}  // namespace

TEST_CASE("zero weights give zero positions") {
  const auto p = LstmParams::zeros(8, 5);
  const Eigen::MatrixXd x = Eigen::MatrixXd::Random(8, 63);
  const auto pos = lstm_forward(p, x);
  CHECK(pos.size() == 63);
  CHECK(pos.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("positions stay strictly inside the unit interval") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto p = random_params(10, 6, 2.0, seed);
    const auto b = random_batch(1, 10, 63, 100 + seed);
    const auto pos = lstm_forward(p, b.inputs[0]);
    CHECK(pos.cwiseAbs().maxCoeff() < 1.0);
  }
}

TEST_CASE("forward rejects mismatched inputs") {
  const auto p = LstmParams::zeros(8, 5);
  CHECK_THROWS_AS(lstm_forward(p, Eigen::MatrixXd::Zero(7, 10)), ValidationError);
  std::mt19937_64 rng(1);
  const auto m = make_masks(8, 5, 9, 0.2, rng);
  CHECK_THROWS_AS(lstm_forward(p, Eigen::MatrixXd::Zero(8, 10), &m), ValidationError);
  CHECK_THROWS_AS(make_masks(8, 5, 9, 1.0, rng), ValidationError);
}

TEST_CASE("seeded dropout is deterministic") {
  const auto p = random_params(8, 5, 0.5, 3);
  const auto b = random_batch(1, 8, 63, 4);
  std::mt19937_64 r1(77), r2(77);
  const auto m1 = make_masks(8, 5, 63, 0.3, r1);
  const auto m2 = make_masks(8, 5, 63, 0.3, r2);
  CHECK(same_bits(lstm_forward(p, b.inputs[0], &m1), lstm_forward(p, b.inputs[0], &m2)));
  for (Eigen::Index i = 0; i < m1.input.size(); ++i) CHECK((m1.input[i] == 0.0 || m1.input[i] == doctest::Approx(1.0 / 0.7)));
  std::mt19937_64 r3(1);
  const auto none = make_masks(8, 5, 63, 0.0, r3);
  CHECK(same_bits(lstm_forward(p, b.inputs[0], &none), lstm_forward(p, b.inputs[0])));
}

TEST_CASE("sharpe loss values") {
  CHECK(sharpe_loss(std::vector<double>{0.01, -0.01}) == 0.0);
  CHECK(sharpe_loss(std::vector<double>{0.02, 0.0}) == doctest::Approx(-std::sqrt(252.0)).epsilon(1e-12));
  CHECK(sharpe_loss(std::vector<double>{0.02, 0.0}) == doctest::Approx(-15.8745).epsilon(1e-5));
  CHECK_THROWS_AS(sharpe_loss(std::vector<double>{0.01, 0.01}), DegenerateBatchError);
  CHECK_THROWS_AS(sharpe_loss(std::vector<double>{0.01}), DegenerateBatchError);

  const auto r = testing::gaussian(100, 0.001, 0.01, 5);
  auto scaled = r;
  for (double& v : scaled) v *= 3.7;
  CHECK(sharpe_loss(scaled) == doctest::Approx(sharpe_loss(r)).epsilon(1e-12));
  auto twice = r;
  twice.insert(twice.end(), r.begin(), r.end());
  CHECK(sharpe_loss(twice) == doctest::Approx(sharpe_loss(r)).epsilon(1e-12));
}

TEST_CASE("sharpe loss gradient matches finite differences") {
  auto r = testing::gaussian(30, 0.002, 0.01, 6);
  std::vector<double> g;
  const double l = sharpe_loss_gradient(r, g);
  CHECK(l == sharpe_loss(r));
  for (std::size_t k = 0; k < r.size(); ++k) {
    auto a = r, b = r;
    a[k] += 1e-7;
    b[k] -= 1e-7;
    const double fd = (sharpe_loss(a) - sharpe_loss(b)) / 2e-7;
    CHECK(g[k] == doctest::Approx(fd).epsilon(1e-5));
  }
}

TEST_CASE("backpropagation matches central finite differences") {
  const int d = 3, h = 4, tau = 12;
  const auto p = random_params(d, h, 0.6, 21);
  const auto b = random_batch(2, d, tau, 22);
  LstmParams grad;
  batch_loss_and_gradient_serial(p, b, nullptr, grad);
  const Eigen::VectorXd g = grad.flatten();
  const Eigen::VectorXd theta = p.flatten();
  LstmParams q = p;
  double worst = 0.0;
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    const double step = 1e-5;
    Eigen::VectorXd a = theta, c = theta;
    a[i] += step;
    c[i] -= step;
    q.assign(a);
    const double la = batch_loss(q, b);
    q.assign(c);
    const double lc = batch_loss(q, b);
    const double fd = (la - lc) / (2 * step);
    const double rel = std::abs(fd - g[i]) / std::max(1e-3, std::abs(fd) + std::abs(g[i]));
    worst = std::max(worst, rel);
  }
  CHECK(worst < 1e-4);
}

TEST_CASE("backpropagation with dropout masks matches finite differences") {
  const int d = 4, h = 3, tau = 10;
  const auto p = random_params(d, h, 0.6, 31);
  const auto b = random_batch(3, d, tau, 32);
  std::mt19937_64 rng(9);
  std::vector<DropoutMasks> masks;
  for (int s = 0; s < 3; ++s) masks.push_back(make_masks(d, h, tau, 0.3, rng));
  auto loss = [&](const LstmParams& q) {
    std::vector<double> r;
    for (std::size_t s = 0; s < b.size(); ++s) {
      const auto pos = lstm_forward(q, b.inputs[s], &masks[s]);
      for (int t = 0; t < tau; ++t) r.push_back(pos[t] * b.targets[s][t]);
    }
    return sharpe_loss(r);
  };
  LstmParams grad;
  const double l = batch_loss_and_gradient_serial(p, b, &masks, grad);
  CHECK(l == doctest::Approx(loss(p)).epsilon(1e-12));
  const Eigen::VectorXd g = grad.flatten();
  const Eigen::VectorXd theta = p.flatten();
  LstmParams q = p;
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    Eigen::VectorXd a = theta, c = theta;
    a[i] += 1e-5;
    c[i] -= 1e-5;
    q.assign(a);
    const double la = loss(q);
    q.assign(c);
    const double fd = (la - loss(q)) / 2e-5;
    CHECK(std::abs(fd - g[i]) <= 1e-4 * std::max(1e-2, std::abs(fd)));
  }
}

TEST_CASE("head gradients vanish when positions are constant") {
  LstmParams p = LstmParams::zeros(5, 4);
  p.b_out = 0.3;
  const auto b = random_batch(4, 5, 20, 40);
  LstmParams grad;
  batch_loss_and_gradient_serial(p, b, nullptr, grad);
  CHECK(std::abs(grad.b_out) < 1e-10);
  CHECK(grad.w_out.cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("duplicating a batch leaves loss and gradient unchanged") {
  const auto p = random_params(4, 3, 0.5, 50);
  const auto b = random_batch(3, 4, 15, 51);
  Batch twice = b;
  twice.inputs.insert(twice.inputs.end(), b.inputs.begin(), b.inputs.end());
  twice.targets.insert(twice.targets.end(), b.targets.begin(), b.targets.end());
  LstmParams g1, g2;
  const double l1 = batch_loss_and_gradient_serial(p, b, nullptr, g1);
  const double l2 = batch_loss_and_gradient_serial(p, twice, nullptr, g2);
  CHECK(l2 == doctest::Approx(l1).epsilon(1e-12));
  CHECK((g1.flatten() - g2.flatten()).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("parallel batch gradient matches the serial reference bit for bit") {
  const auto p = random_params(10, 8, 0.4, 60);
  const auto b = random_batch(37, 10, 63, 61);
  std::mt19937_64 rng(5);
  std::vector<DropoutMasks> masks;
  for (std::size_t s = 0; s < b.size(); ++s) masks.push_back(make_masks(10, 8, 63, 0.2, rng));
  LstmParams ref;
  const double lref = batch_loss_and_gradient_serial(p, b, &masks, ref);
  for (int w : {1, 2, 3, 4}) {
    LstmParams g;
    const double l = batch_loss_and_gradient(p, b, &masks, g, w);
    CHECK(std::memcmp(&l, &lref, sizeof l) == 0);
    CHECK(same_bits(g.flatten(), ref.flatten()));
  }
}

TEST_CASE("degenerate batch raises") {
  const auto p = LstmParams::zeros(3, 2);
  const auto b = random_batch(2, 3, 5, 1);
  LstmParams g;
  CHECK_THROWS_AS(batch_loss_and_gradient(p, b, nullptr, g), DegenerateBatchError);
}

TEST_CASE("adam update") {
  Eigen::VectorXd theta = Eigen::VectorXd::Constant(3, 0.5);
  AdamState st;
  clip_and_adam_step(theta, Eigen::VectorXd::Zero(3), 0.1, 1.0, st);
  CHECK((theta.array() == 0.5).all());

  // Two steps on a scalar, recomputed by hand.
  Eigen::VectorXd x(1);
  x << 1.0;
  AdamState s;
  const double lr = 0.01, g1 = 0.3, g2 = -0.2;
  clip_and_adam_step(x, Eigen::VectorXd::Constant(1, g1), lr, 10.0, s);
  clip_and_adam_step(x, Eigen::VectorXd::Constant(1, g2), lr, 10.0, s);
  double m = 0.0, v = 0.0, ref = 1.0;
  for (int t = 1; t <= 2; ++t) {
    const double g = t == 1 ? g1 : g2;
    m = 0.9 * m + 0.1 * g;
    v = 0.999 * v + 0.001 * g * g;
    const double mh = m / (1.0 - std::pow(0.9, t));
    const double vh = v / (1.0 - std::pow(0.999, t));
    ref -= lr * mh / (std::sqrt(vh) + 1e-8);
  }
  CHECK(std::abs(x[0] - ref) < 1e-12);
  CHECK(s.step == 2);

  Eigen::VectorXd y = Eigen::VectorXd::Zero(2);
  AdamState c;
  clip_and_adam_step(y, Eigen::Vector2d(30.0, 40.0), 0.01, 5.0, c);
  CHECK(c.m.norm() == doctest::Approx(0.1 * 5.0));

  Eigen::VectorXd z = Eigen::VectorXd::Zero(2);
  CHECK_THROWS_AS(clip_and_adam_step(z, Eigen::Vector2d(std::nan(""), 1.0), 0.01, 1.0, c), ValidationError);
}

TEST_CASE("init_model shapes and ranges") {
  LstmHyperparams hp;
  hp.hidden_size = 10;
  const auto m = init_model(8, hp, 3);
  CHECK(m.params.W.rows() == 40);
  CHECK(m.params.W.cols() == 8);
  CHECK(m.params.U.rows() == 40);
  CHECK(m.params.count() == 40 * 8 + 40 * 10 + 40 + 10 + 1);
  CHECK(m.params.W.cwiseAbs().maxCoeff() <= 1.0 / std::sqrt(10.0));
  CHECK(m.params.b.segment(10, 10).isConstant(1.0));
  CHECK(m.params.b.head(10).isZero());
  CHECK(same_bits(init_model(8, hp, 3).params.flatten(), m.params.flatten()));
  CHECK_THROWS_AS(LstmParams::zeros(3, 2).assign(Eigen::VectorXd::Zero(4)), ValidationError);
}

TEST_CASE("checkpoints round-trip exactly") {
  const auto dir = testing::scratch_dir("ckpt");
  LstmHyperparams hp;
  hp.hidden_size = 6;
  hp.dropout_rate = 0.3;
  hp.cpd_lookback = 21;
  auto m = init_model(10, hp, 11);
  m.features.cpd_lookback = 21;
  m.params = random_params(10, 6, 0.7, 12);
  save_model(dir / "m.ckpt", m);
  const auto back = load_model(dir / "m.ckpt");
  CHECK(same_bits(back.params.flatten(), m.params.flatten()));
  CHECK(back.hyper.hidden_size == 6);
  CHECK(back.hyper.dropout_rate == 0.3);
  CHECK(back.hyper.cpd_lookback == 21);
  CHECK(back.features.cpd_lookback == 21);
  CHECK(back.features.macd.pairs == m.features.macd.pairs);
  CHECK(back.seed == 11);
}

TEST_CASE("damaged checkpoints are rejected") {
  const auto dir = testing::scratch_dir("ckpt_bad");
  const auto m = init_model(8, LstmHyperparams{}, 1);
  save_model(dir / "m.ckpt", m);
  std::stringstream ss;
  ss << std::ifstream(dir / "m.ckpt").rdbuf();
  const std::string text = ss.str();

  std::ofstream(dir / "v2.ckpt") << "cpdmom-lstm 2.0" << text.substr(text.find('\n'));
  CHECK_THROWS_AS(load_model(dir / "v2.ckpt"), ParseError);
  std::ofstream(dir / "cut.ckpt") << text.substr(0, text.size() / 2);
  CHECK_THROWS_AS(load_model(dir / "cut.ckpt"), ParseError);
  std::ofstream(dir / "garbage.ckpt") << "hello\n";
  CHECK_THROWS_AS(load_model(dir / "garbage.ckpt"), ParseError);
  CHECK_THROWS_AS(load_model(dir / "absent.ckpt"), ParseError);

  std::string extra = text;
  extra.insert(extra.find('\n') + 1, "future_key 1 2 3\n");
  std::ofstream(dir / "extra.ckpt") << extra;
  CHECK(same_bits(load_model(dir / "extra.ckpt").params.flatten(), m.params.flatten()));
}
