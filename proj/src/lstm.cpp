#include "cpdmom/lstm.hpp"

#include <omp.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "cpdmom/errors.hpp"

namespace cpdmom::dmn {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

LstmParams LstmParams::zeros(int input_size, int hidden_size) {
  LstmParams p;
  p.W = MatrixXd::Zero(4 * hidden_size, input_size);
  p.U = MatrixXd::Zero(4 * hidden_size, hidden_size);
  p.b = VectorXd::Zero(4 * hidden_size);
  p.w_out = VectorXd::Zero(hidden_size);
  p.b_out = 0.0;
  return p;
}

Index LstmParams::count() const { return W.size() + U.size() + b.size() + w_out.size() + 1; }

VectorXd LstmParams::flatten() const {
  VectorXd v(count());
  Index k = 0;
  v.segment(k, W.size()) = W.reshaped();
  k += W.size();
  v.segment(k, U.size()) = U.reshaped();
  k += U.size();
  v.segment(k, b.size()) = b;
  k += b.size();
  v.segment(k, w_out.size()) = w_out;
  k += w_out.size();
  v[k] = b_out;
  return v;
}

void LstmParams::assign(const VectorXd& v) {
  if (v.size() != count()) throw ValidationError("parameter vector has the wrong length");
  Index k = 0;
  W.reshaped() = v.segment(k, W.size());
  k += W.size();
  U.reshaped() = v.segment(k, U.size());
  k += U.size();
  b = v.segment(k, b.size());
  k += b.size();
  w_out = v.segment(k, w_out.size());
  k += w_out.size();
  b_out = v[k];
}

LstmParams& LstmParams::operator+=(const LstmParams& o) {
  W += o.W;
  U += o.U;
  b += o.b;
  w_out += o.w_out;
  b_out += o.b_out;
  return *this;
}

LstmModel init_model(int input_size, const LstmHyperparams& hyper, std::uint64_t seed) {
  if (input_size < 1 || hyper.hidden_size < 1) throw ValidationError("LSTM sizes must be positive");
  const int h = hyper.hidden_size;
  LstmModel m;
  m.hyper = hyper;
  m.seed = seed;
  m.params = LstmParams::zeros(input_size, h);
  std::mt19937_64 rng(seed);
  const double k = 1.0 / std::sqrt(static_cast<double>(h));
  std::uniform_real_distribution<double> u(-k, k);
  for (Index i = 0; i < m.params.W.size(); ++i) m.params.W.data()[i] = u(rng);
  for (Index i = 0; i < m.params.U.size(); ++i) m.params.U.data()[i] = u(rng);
  for (Index i = 0; i < h; ++i) m.params.w_out[i] = u(rng);
  m.params.b.segment(h, h).setOnes();
  return m;
}

DropoutMasks make_masks(int input_size, int hidden_size, int steps, double rate, std::mt19937_64& rng) {
  if (rate < 0.0 || rate >= 1.0) throw ValidationError("dropout rate must lie in [0, 1)");
  std::bernoulli_distribution keep(1.0 - rate);
  const double scale = 1.0 / (1.0 - rate);
  DropoutMasks m;
  m.input.resize(input_size);
  for (Index i = 0; i < input_size; ++i) m.input[i] = keep(rng) ? scale : 0.0;
  m.output.resize(hidden_size, steps);
  for (Index i = 0; i < m.output.size(); ++i) m.output.data()[i] = keep(rng) ? scale : 0.0;
  return m;
}

namespace {

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void check_dims(const LstmParams& p, const MatrixXd& inputs, const DropoutMasks* masks) {
  if (inputs.rows() != p.input_size()) {
    throw ValidationError("LSTM expects " + std::to_string(p.input_size()) + " features, got " +
                          std::to_string(inputs.rows()));
  }
  if (masks && (masks->input.size() != inputs.rows() || masks->output.rows() != p.hidden_size() ||
                masks->output.cols() != inputs.cols())) {
    throw ValidationError("dropout masks do not match the sequence");
  }
}

}  // namespace

VectorXd lstm_forward(const LstmParams& p, const MatrixXd& inputs, const DropoutMasks* masks, SequenceCache* cache) {
  check_dims(p, inputs, masks);
  const Index h = p.hidden_size();
  const Index tau = inputs.cols();

  SequenceCache local;
  SequenceCache& s = cache ? *cache : local;
  s.x = masks ? MatrixXd(masks->input.asDiagonal() * inputs) : inputs;
  s.gates.resize(4 * h, tau);
  s.c = MatrixXd::Zero(h, tau + 1);
  s.h = MatrixXd::Zero(h, tau + 1);
  s.h_out.resize(h, tau);
  s.positions.resize(tau);

  const MatrixXd wx = p.W * s.x;
  VectorXd a(4 * h);
  for (Index t = 0; t < tau; ++t) {
    a.noalias() = wx.col(t) + p.b;
    a.noalias() += p.U * s.h.col(t);
    for (Index j = 0; j < h; ++j) {
      const double i = sigmoid(a[j]);
      const double f = sigmoid(a[h + j]);
      const double g = std::tanh(a[2 * h + j]);
      const double o = sigmoid(a[3 * h + j]);
      s.gates(j, t) = i;
      s.gates(h + j, t) = f;
      s.gates(2 * h + j, t) = g;
      s.gates(3 * h + j, t) = o;
      const double c = f * s.c(j, t) + i * g;
      s.c(j, t + 1) = c;
      s.h(j, t + 1) = o * std::tanh(c);
    }
    s.h_out.col(t) = s.h.col(t + 1);
    if (masks) s.h_out.col(t).array() *= masks->output.col(t).array();
    s.positions[t] = std::tanh(p.w_out.dot(s.h_out.col(t)) + p.b_out);
  }
  return s.positions;
}

namespace {

// Backpropagates dLoss/dX_t for one cached sequence, accumulating into g.
void lstm_backward(const LstmParams& p, const SequenceCache& s, const VectorXd& d_pos, const DropoutMasks* masks,
                   LstmParams& g) {
  const Index h = p.hidden_size();
  const Index tau = s.x.cols();
  MatrixXd da(4 * h, tau);
  VectorXd dh_next = VectorXd::Zero(h);
  VectorXd dc_next = VectorXd::Zero(h);
  VectorXd dh(h);
  for (Index t = tau - 1; t >= 0; --t) {
    const double x = s.positions[t];
    const double dz = d_pos[t] * (1.0 - x * x);
    g.w_out.noalias() += dz * s.h_out.col(t);
    g.b_out += dz;
    dh = dz * p.w_out;
    if (masks) dh.array() *= masks->output.col(t).array();
    dh += dh_next;
    for (Index j = 0; j < h; ++j) {
      const double i = s.gates(j, t);
      const double f = s.gates(h + j, t);
      const double gg = s.gates(2 * h + j, t);
      const double o = s.gates(3 * h + j, t);
      const double tc = std::tanh(s.c(j, t + 1));
      const double dc = dc_next[j] + dh[j] * o * (1.0 - tc * tc);
      da(j, t) = dc * gg * i * (1.0 - i);
      da(h + j, t) = dc * s.c(j, t) * f * (1.0 - f);
      da(2 * h + j, t) = dc * i * (1.0 - gg * gg);
      da(3 * h + j, t) = dh[j] * tc * o * (1.0 - o);
      dc_next[j] = dc * f;
    }
    dh_next.noalias() = p.U.transpose() * da.col(t);
  }
  g.W.noalias() += da * s.x.transpose();
  g.U.noalias() += da * s.h.leftCols(tau).transpose();
  g.b += da.rowwise().sum();
}

constexpr std::size_t kChunk = 8;

void check_batch(const Batch& batch, const std::vector<DropoutMasks>* masks) {
  if (batch.inputs.size() != batch.targets.size()) throw ValidationError("batch inputs/targets differ in count");
  for (std::size_t k = 0; k < batch.size(); ++k) {
    if (batch.inputs[k].cols() != batch.targets[k].size()) throw ValidationError("sequence/target length mismatch");
  }
  if (masks && masks->size() != batch.size()) throw ValidationError("one dropout mask per sequence is required");
}

double flatten_loss(const std::vector<SequenceCache>& caches, const Batch& batch, std::vector<double>& captured,
                    std::vector<double>& d_captured) {
  captured.clear();
  for (std::size_t k = 0; k < batch.size(); ++k) {
    for (Index t = 0; t < batch.targets[k].size(); ++t) {
      captured.push_back(caches[k].positions[t] * batch.targets[k][t]);
    }
  }
  return sharpe_loss_gradient(captured, d_captured);
}

VectorXd position_grad(const std::vector<double>& d_captured, std::size_t offset, const VectorXd& target) {
  VectorXd d(target.size());
  for (Index t = 0; t < target.size(); ++t) d[t] = d_captured[offset + static_cast<std::size_t>(t)] * target[t];
  return d;
}

}  // namespace

double sharpe_loss(std::span<const double> r) {
  std::vector<double> unused;
  return sharpe_loss_gradient(r, unused);
}

double sharpe_loss_gradient(std::span<const double> r, std::vector<double>& grad) {
  const std::size_t n = r.size();
  if (n < 2) throw DegenerateBatchError("Sharpe loss needs at least two returns");
  double mean = 0.0;
  for (double v : r) mean += v;
  mean /= static_cast<double>(n);
  double ss = 0.0;
  for (double v : r) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / static_cast<double>(n));
  if (!(sd >= 1e-12)) throw DegenerateBatchError("captured returns have zero spread");
  const double root = std::sqrt(252.0);
  grad.resize(n);
  const double scale = -root / (static_cast<double>(n) * sd);
  for (std::size_t k = 0; k < n; ++k) grad[k] = scale * (1.0 - mean * (r[k] - mean) / (sd * sd));
  return -root * mean / sd;
}

std::vector<double> captured_returns(const LstmParams& params, const Batch& batch) {
  check_batch(batch, nullptr);
  std::vector<double> out;
  for (std::size_t k = 0; k < batch.size(); ++k) {
    const VectorXd x = lstm_forward(params, batch.inputs[k]);
    for (Index t = 0; t < x.size(); ++t) out.push_back(x[t] * batch.targets[k][t]);
  }
  return out;
}

double batch_loss(const LstmParams& params, const Batch& batch) { return sharpe_loss(captured_returns(params, batch)); }

double batch_loss_and_gradient(const LstmParams& params, const Batch& batch, const std::vector<DropoutMasks>* masks,
                               LstmParams& grad, int workers) {
  check_batch(batch, masks);
  const std::size_t n = batch.size();
  const int threads = workers > 0 ? workers : omp_get_max_threads();
  std::vector<SequenceCache> caches(n);
  const auto sn = static_cast<std::ptrdiff_t>(n);
#pragma omp parallel for schedule(static) num_threads(threads)
  for (std::ptrdiff_t k = 0; k < sn; ++k) {
    const auto u = static_cast<std::size_t>(k);
    lstm_forward(params, batch.inputs[u], masks ? &(*masks)[u] : nullptr, &caches[u]);
  }

  std::vector<double> captured, d_captured;
  const double loss = flatten_loss(caches, batch, captured, d_captured);
  std::vector<std::size_t> offsets(n + 1, 0);
  for (std::size_t k = 0; k < n; ++k) offsets[k + 1] = offsets[k] + static_cast<std::size_t>(batch.targets[k].size());

  const std::size_t chunks = (n + kChunk - 1) / kChunk;
  std::vector<LstmParams> partial(chunks, LstmParams::zeros(params.input_size(), params.hidden_size()));
  const auto sc = static_cast<std::ptrdiff_t>(chunks);
#pragma omp parallel for schedule(dynamic, 1) num_threads(threads)
  for (std::ptrdiff_t c = 0; c < sc; ++c) {
    const auto uc = static_cast<std::size_t>(c);
    for (std::size_t k = uc * kChunk; k < std::min(n, (uc + 1) * kChunk); ++k) {
      lstm_backward(params, caches[k], position_grad(d_captured, offsets[k], batch.targets[k]),
                    masks ? &(*masks)[k] : nullptr, partial[uc]);
    }
  }
  grad = LstmParams::zeros(params.input_size(), params.hidden_size());
  for (const auto& p : partial) grad += p;
  return loss;
}

double batch_loss_and_gradient_serial(const LstmParams& params, const Batch& batch,
                                      const std::vector<DropoutMasks>* masks, LstmParams& grad) {
  check_batch(batch, masks);
  const std::size_t n = batch.size();
  std::vector<SequenceCache> caches(n);
  for (std::size_t k = 0; k < n; ++k) lstm_forward(params, batch.inputs[k], masks ? &(*masks)[k] : nullptr, &caches[k]);

  std::vector<double> captured, d_captured;
  const double loss = flatten_loss(caches, batch, captured, d_captured);

  grad = LstmParams::zeros(params.input_size(), params.hidden_size());
  LstmParams chunk = grad;
  std::size_t offset = 0;
  for (std::size_t k = 0; k < n; ++k) {
    if (k % kChunk == 0) chunk = LstmParams::zeros(params.input_size(), params.hidden_size());
    lstm_backward(params, caches[k], position_grad(d_captured, offset, batch.targets[k]),
                  masks ? &(*masks)[k] : nullptr, chunk);
    offset += static_cast<std::size_t>(batch.targets[k].size());
    if (k % kChunk == kChunk - 1 || k + 1 == n) grad += chunk;
  }
  return loss;
}

void clip_and_adam_step(VectorXd& params, VectorXd grad, double learning_rate, double max_grad_norm,
                        AdamState& state) {
  if (grad.size() != params.size()) throw ValidationError("gradient and parameters differ in length");
  if (!grad.allFinite()) throw ValidationError("non-finite gradient at Adam step " + std::to_string(state.step + 1));
  const double norm = grad.norm();
  if (norm > max_grad_norm) grad *= max_grad_norm / norm;
  if (state.m.size() != params.size()) {
    state.m = VectorXd::Zero(params.size());
    state.v = VectorXd::Zero(params.size());
    state.step = 0;
  }
  ++state.step;
  state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad;
  state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad.cwiseProduct(grad);
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  params.array() -= learning_rate * (state.m.array() / c1) / ((state.v.array() / c2).sqrt() + state.epsilon);
}

// --- checkpoints ----------------------------------------------------------

namespace {

constexpr const char* kMagic = "cpdmom-lstm";
constexpr int kMajor = 1;
constexpr int kMinor = 0;

void write_matrix(std::ostream& out, const char* name, const MatrixXd& m) {
  out << name << ' ' << m.rows() << ' ' << m.cols();
  char buf[32];
  for (Index i = 0; i < m.size(); ++i) {
    std::snprintf(buf, sizeof buf, " %.17g", m.data()[i]);
    out << buf;
  }
  out << '\n';
}

MatrixXd read_matrix(std::istringstream& in, const std::string& name) {
  Index r = 0, c = 0;
  if (!(in >> r >> c) || r < 0 || c < 0) throw ParseError("checkpoint: bad shape for " + name);
  MatrixXd m(r, c);
  for (Index i = 0; i < m.size(); ++i) {
    std::string tok;
    if (!(in >> tok)) throw ParseError("checkpoint: " + name + " is truncated");
    try {
      m.data()[i] = std::stod(tok);
    } catch (const std::exception&) {
      throw ParseError("checkpoint: bad value '" + tok + "' in " + name);
    }
  }
  return m;
}

}  // namespace

void save_model(const std::filesystem::path& path, const LstmModel& m) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write " + path.string());
  char buf[64];
  out << kMagic << ' ' << kMajor << '.' << kMinor << '\n';
  out << "seed " << m.seed << '\n';
  out << "input_size " << m.params.input_size() << '\n';
  out << "hidden_size " << m.hyper.hidden_size << '\n';
  std::snprintf(buf, sizeof buf, "%.17g", m.hyper.dropout_rate);
  out << "dropout_rate " << buf << '\n';
  out << "minibatch_size " << m.hyper.minibatch_size << '\n';
  std::snprintf(buf, sizeof buf, "%.17g", m.hyper.learning_rate);
  out << "learning_rate " << buf << '\n';
  std::snprintf(buf, sizeof buf, "%.17g", m.hyper.max_grad_norm);
  out << "max_grad_norm " << buf << '\n';
  out << "cpd_lookback " << m.hyper.cpd_lookback << '\n';
  out << "return_offsets";
  for (int k : m.features.return_offsets) out << ' ' << k;
  out << '\n';
  out << "macd_pairs";
  for (const auto& [s, l] : m.features.macd.pairs) out << ' ' << s << ':' << l;
  out << '\n';
  out << "macd_std_windows " << m.features.macd.price_std_window << ' ' << m.features.macd.signal_std_window << '\n';
  out << "feature_cpd_lookback " << m.features.cpd_lookback << '\n';
  write_matrix(out, "W", m.params.W);
  write_matrix(out, "U", m.params.U);
  write_matrix(out, "b", m.params.b);
  write_matrix(out, "w_out", m.params.w_out);
  std::snprintf(buf, sizeof buf, "%.17g", m.params.b_out);
  out << "b_out " << buf << '\n';
  out << "end\n";
  if (!out) throw ValidationError("failed writing " + path.string());
}

LstmModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ParseError("cannot open checkpoint " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path.string() + ": empty checkpoint");
  {
    std::istringstream head(line);
    std::string magic, version;
    head >> magic >> version;
    if (magic != kMagic) throw ParseError(path.string() + ": not an LSTM checkpoint");
    const int major = std::atoi(version.substr(0, version.find('.')).c_str());
    if (major != kMajor) {
      throw ParseError(path.string() + ": checkpoint version " + version + " is not readable by version " +
                       std::to_string(kMajor) + ".x");
    }
  }
  LstmModel m;
  m.features.return_offsets.clear();
  m.features.macd.pairs.clear();
  int input_size = -1;
  bool done = false;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string key;
    if (!(ls >> key)) continue;
    if (key == "end") {
      done = true;
      break;
    }
    try {
      if (key == "seed") {
        ls >> m.seed;
      } else if (key == "input_size") {
        ls >> input_size;
      } else if (key == "hidden_size") {
        ls >> m.hyper.hidden_size;
      } else if (key == "dropout_rate") {
        ls >> m.hyper.dropout_rate;
      } else if (key == "minibatch_size") {
        ls >> m.hyper.minibatch_size;
      } else if (key == "learning_rate") {
        ls >> m.hyper.learning_rate;
      } else if (key == "max_grad_norm") {
        ls >> m.hyper.max_grad_norm;
      } else if (key == "cpd_lookback") {
        ls >> m.hyper.cpd_lookback;
      } else if (key == "return_offsets") {
        for (int k; ls >> k;) m.features.return_offsets.push_back(k);
      } else if (key == "macd_pairs") {
        for (std::string tok; ls >> tok;) {
          const auto colon = tok.find(':');
          if (colon == std::string::npos) throw ParseError("bad MACD pair '" + tok + "'");
          m.features.macd.pairs.emplace_back(std::stoi(tok.substr(0, colon)), std::stoi(tok.substr(colon + 1)));
        }
      } else if (key == "macd_std_windows") {
        ls >> m.features.macd.price_std_window >> m.features.macd.signal_std_window;
      } else if (key == "feature_cpd_lookback") {
        ls >> m.features.cpd_lookback;
      } else if (key == "W") {
        m.params.W = read_matrix(ls, key);
      } else if (key == "U") {
        m.params.U = read_matrix(ls, key);
      } else if (key == "b") {
        m.params.b = read_matrix(ls, key).reshaped();
      } else if (key == "w_out") {
        m.params.w_out = read_matrix(ls, key).reshaped();
      } else if (key == "b_out") {
        ls >> m.params.b_out;
      }
      // Unknown keys come from newer minor versions and are skipped.
    } catch (const std::invalid_argument&) {
      throw ParseError(path.string() + ": bad value for " + key);
    }
    if (ls.fail() && !ls.eof()) throw ParseError(path.string() + ": bad value for " + key);
  }
  if (!done) throw ParseError(path.string() + ": checkpoint is truncated (no end marker)");
  const int h = m.hyper.hidden_size;
  if (m.params.W.rows() != 4 * h || m.params.W.cols() != input_size || m.params.U.rows() != 4 * h ||
      m.params.U.cols() != h || m.params.b.size() != 4 * h || m.params.w_out.size() != h) {
    throw ParseError(path.string() + ": weight shapes do not match hidden_size/input_size");
  }
  if (m.features.size() != input_size) {
    throw ParseError(path.string() + ": feature configuration does not match input_size");
  }
  return m;
}

}  // namespace cpdmom::dmn
