#include "kdream/diffusion.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>

#include "kdream/binio.hpp"
#include "kdream/error.hpp"
#include "kdream/parallel.hpp"

namespace kdream::diffusion {

using ad::Tensor;
using ad::Var;

GraphState encode(const mol::MolecularGraph& m, std::size_t n_max) {
  if (m.atom_count() > n_max)
    throw Error(ErrorKind::kInvalidArgument, "molecule " + mol::write_smiles(m) + " has " +
                                                 std::to_string(m.atom_count()) + " atoms, limit is " +
                                                 std::to_string(n_max));
  GraphState g{Tensor(n_max, kChannels), Tensor(n_max, n_max), 0.0};
  for (std::size_t i = 0; i < m.atom_count(); ++i) {
    const auto& a = m.atom(i);
    if (a.charge != 0)
      throw Error(ErrorKind::kInvalidArgument, "charged atoms cannot be encoded: " + mol::write_smiles(m));
    g.X(i, static_cast<std::size_t>(a.element)) = 1.0;
  }
  for (std::size_t i = m.atom_count(); i < n_max; ++i) g.X(i, kNoAtomChannel) = 1.0;
  for (const auto& b : m.bonds()) g.E(b.a, b.b) = g.E(b.b, b.a) = b.order / 3.0;
  return g;
}

mol::MolecularGraph quantize(const GraphState& g) {
  const std::size_t n = g.nodes();
  mol::MolecularGraph full;
  std::vector<std::size_t> index(n, static_cast<std::size_t>(-1));
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < g.X.cols(); ++c)
      if (g.X(i, c) > g.X(i, best)) best = c;
    if (best == kNoAtomChannel) continue;
    index[i] = full.add_atom(static_cast<mol::Element>(best));
  }
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      if (index[i] == static_cast<std::size_t>(-1) || index[j] == static_cast<std::size_t>(-1)) continue;
      const double e = std::clamp(0.5 * (g.E(i, j) + g.E(j, i)), 0.0, 1.0);
      const int order = static_cast<int>(std::ceil(3.0 * e - 0.5));
      if (order > 0) full.add_bond(index[i], index[j], order);
    }
  return full.largest_component();
}

void NoiseSchedule::validate() const {
  require(beta_min > 0 && beta_min < beta_max, "noise schedule needs 0 < beta_min < beta_max");
  require(steps >= 10, "noise schedule needs at least 10 steps");
  require(eps > 0 && eps < 1, "noise schedule eps must lie in (0, 1)");
}

double NoiseSchedule::alpha(double t) const { return std::exp(-0.5 * beta_integral(t)); }

double NoiseSchedule::sigma(double t) const {
  return std::sqrt(-std::expm1(-beta_integral(t)));
}

Tensor symmetric_normal(std::size_t n, Rng& rng) {
  std::normal_distribution<double> normal;
  Tensor e(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) e(i, j) = e(j, i) = normal(rng);
  return e;
}

Noise sample_noise(std::size_t nodes, std::size_t channels, Rng& rng) {
  std::normal_distribution<double> normal;
  Noise xi{Tensor(nodes, channels), Tensor()};
  for (auto& v : xi.X.values()) v = normal(rng);
  xi.E = symmetric_normal(nodes, rng);
  return xi;
}

GraphState perturb_with(const GraphState& g0, double t, const NoiseSchedule& s, const Noise& xi) {
  const double a = s.alpha(t), sd = s.sigma(t);
  GraphState g{g0.X, g0.E, t};
  for (std::size_t i = 0; i < g.X.size(); ++i) g.X[i] = a * g0.X[i] + sd * xi.X[i];
  const std::size_t n = g.nodes();
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) g.E(i, j) = i == j ? 0.0 : a * g0.E(i, j) + sd * xi.E(i, j);
  return g;
}

GraphState forward_perturb(const GraphState& g0, double t, const NoiseSchedule& s, Rng& rng) {
  if (!(t > 0.0 && t <= 1.0)) throw Error(ErrorKind::kInvalidArgument, "diffusion time must lie in (0, 1]");
  return perturb_with(g0, t, s, sample_noise(g0.nodes(), g0.X.cols(), rng));
}

Tensor time_features(double t, std::size_t count) {
  Tensor f(1, count);
  for (std::size_t k = 0; k < count / 2; ++k) {
    const double freq = 0.5 * M_PI * std::pow(2.0, static_cast<double>(k));
    f[2 * k] = std::sin(freq * t);
    f[2 * k + 1] = std::cos(freq * t);
  }
  if (count % 2) f[count - 1] = t;
  return f;
}

namespace {

struct Shape {
  std::size_t rows, cols;
};

std::vector<Shape> param_shapes(const ScoreNetConfig& c) {
  const std::size_t h = c.hidden, m = c.channels, tf = c.time_features;
  std::vector<Shape> s{{m + tf, h}, {1, h}};
  for (std::size_t l = 0; l < c.layers; ++l) {
    s.push_back({h, h});
    s.push_back({h, h});
    s.push_back({1, h});
  }
  s.push_back({(c.layers + 1) * h + m + tf, h});
  s.push_back({1, h});
  s.push_back({h, m});
  s.push_back({1, m});
  s.push_back({2 * h + 1 + tf, h});
  s.push_back({1, h});
  s.push_back({h, 1});
  s.push_back({1, 1});
  return s;
}

Tensor repeat_rows(const Tensor& row, std::size_t n) {
  Tensor out(n, row.cols());
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < row.cols(); ++c) out(r, c) = row[c];
  return out;
}

}  // namespace

std::vector<std::string> ScoreNetwork::param_names(const ScoreNetConfig& cfg) {
  std::vector<std::string> n{"in.w", "in.b"};
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    const auto p = "mp" + std::to_string(l) + ".";
    n.push_back(p + "agg");
    n.push_back(p + "self");
    n.push_back(p + "b");
  }
  for (const char* s : {"x.w1", "x.b1", "x.w2", "x.b2", "e.w1", "e.b1", "e.w2", "e.b2"}) n.emplace_back(s);
  return n;
}

ScoreNetwork::ScoreNetwork(ScoreNetConfig cfg, NoiseSchedule schedule, std::uint64_t seed)
    : cfg_(cfg), schedule_(schedule) {
  require(cfg_.layers >= 1 && cfg_.hidden >= 1, "score network needs layers >= 1 and hidden >= 1");
  require(cfg_.channels == kChannels, "score network channel count must be " + std::to_string(kChannels));
  schedule_.validate();
  auto rng = derive_stream(seed, "diffusion.init");
  std::normal_distribution<double> normal;
  const auto shapes = param_shapes(cfg_);
  const auto names = param_names(cfg_);
  for (std::size_t k = 0; k < shapes.size(); ++k) {
    Tensor p(shapes[k].rows, shapes[k].cols);
    const bool bias = shapes[k].rows == 1;
    // Output projections start small so the initial score is close to zero.
    const bool head = names[k] == "x.w2" || names[k] == "e.w2";
    if (!bias) {
      const double sd = (head ? 0.1 : 1.0) / std::sqrt(static_cast<double>(shapes[k].rows));
      for (auto& v : p.values()) v = sd * normal(rng);
    }
    params_.push_back(std::move(p));
  }
}

ScoreNetwork::Heads ScoreNetwork::forward(ad::Tape& tape, const std::vector<Var>& pv, Var X, Var E,
                                          double t) const {
  const std::size_t n = X.rows();
  if (X.cols() != cfg_.channels || E.rows() != n || E.cols() != n)
    throw DimensionError("score network input shapes " + X.value().shape_str() + " / " + E.value().shape_str() +
                         " do not match " + std::to_string(cfg_.channels) + " channels");
  const Tensor temb_row = time_features(t, cfg_.time_features);
  Var temb = tape.constant(repeat_rows(temb_row, n));

  std::size_t k = 0;
  auto next = [&] { return pv.at(k++); };

  Var w_in = next(), b_in = next();
  Var h = ad::tanh(ad::add_row(ad::matmul(ad::concat(X, temb), w_in), b_in));
  std::vector<Var> hidden{h};
  for (std::size_t l = 0; l < cfg_.layers; ++l) {
    Var agg = next(), self = next(), b = next();
    Var msg = ad::matmul(ad::matmul(E, h), agg);
    h = ad::tanh(ad::add_row(ad::add(msg, ad::matmul(h, self)), b));
    hidden.push_back(h);
  }

  std::vector<Var> xin = hidden;
  xin.push_back(X);
  xin.push_back(temb);
  Var xw1 = next(), xb1 = next(), xw2 = next(), xb2 = next();
  Var xh = ad::tanh(ad::add_row(ad::matmul(ad::concat(xin), xw1), xb1));
  Var eps_x = ad::add_row(ad::matmul(xh, xw2), xb2);

  Var ew1 = next(), eb1 = next(), ew2 = next(), eb2 = next();
  Var pair_temb = tape.constant(repeat_rows(temb_row, n * n));
  Var pairs = ad::concat({ad::pair_hadamard(h), ad::pair_sum(h), ad::reshape(E, n * n, 1), pair_temb});
  Var eh = ad::tanh(ad::add_row(ad::matmul(pairs, ew1), eb1));
  Var eps_e = ad::symmetrize(ad::reshape(ad::add_row(ad::matmul(eh, ew2), eb2), n, n));
  return {eps_x, eps_e};
}

ScoreNetwork::Score ScoreNetwork::score(const GraphState& g) const {
  ad::Tape tape;
  std::vector<Var> pv;
  pv.reserve(params_.size());
  for (const auto& p : params_) pv.push_back(tape.constant(p));
  auto heads = forward(tape, pv, tape.constant(g.X), tape.constant(g.E), g.t);
  const double inv = -1.0 / schedule_.sigma(g.t);
  Score s{heads.eps_x.value(), heads.eps_e.value()};
  for (auto& v : s.X.values()) v *= inv;
  for (auto& v : s.E.values()) v *= inv;
  return s;
}

double dsm_example_loss(const ScoreNetwork& net, const GraphState& g0, double t, const Noise& xi,
                        std::vector<Tensor>* grads) {
  const auto gt = perturb_with(g0, t, net.schedule(), xi);
  ad::Tape tape;
  std::vector<Var> pv;
  for (const auto& p : net.params()) pv.push_back(grads ? tape.leaf(p) : tape.constant(p));
  auto heads = net.forward(tape, pv, tape.constant(gt.X), tape.constant(gt.E), t);
  // σ·s_θ + ξ = ξ − ε̂ since s_θ = −ε̂/σ.
  Var loss = ad::add(ad::squared_distance(heads.eps_x, tape.constant(xi.X)),
                     ad::squared_distance(heads.eps_e, tape.constant(xi.E)));
  const double value = loss.value()[0];
  if (!std::isfinite(value)) throw NumericalError("non-finite denoising loss at t=" + std::to_string(t));
  if (grads) {
    tape.backward(loss);
    grads->clear();
    for (auto v : pv) grads->push_back(tape.grad(v));
  }
  return value;
}

double dsm_loss(const ScoreNetwork& net, std::span<const GraphState> batch, Rng& rng, std::vector<Tensor>* grads) {
  if (batch.empty()) throw Error(ErrorKind::kInvalidArgument, "empty batch");
  const double eps = net.schedule().eps;
  std::uniform_real_distribution<double> time(eps, 1.0);
  double total = 0;
  std::vector<Tensor> g;
  if (grads) {
    grads->clear();
    for (const auto& p : net.params()) grads->emplace_back(p.rows(), p.cols());
  }
  for (const auto& g0 : batch) {
    const double t = time(rng);
    const auto xi = sample_noise(g0.nodes(), g0.X.cols(), rng);
    total += dsm_example_loss(net, g0, t, xi, grads ? &g : nullptr);
    if (grads)
      for (std::size_t k = 0; k < g.size(); ++k)
        for (std::size_t i = 0; i < g[k].size(); ++i) (*grads)[k][i] += g[k][i];
  }
  const double inv = 1.0 / static_cast<double>(batch.size());
  if (grads)
    for (auto& gk : *grads)
      for (auto& v : gk.values()) v *= inv;
  return total * inv;
}

ScoreNetwork train_score(const std::vector<mol::MolecularGraph>& dataset, const ScoreTrainConfig& cfg,
                         TrainLog* log) {
  require(!dataset.empty(), "score training needs a non-empty dataset");
  require(cfg.batch_size >= 1 && cfg.iterations >= 1, "score training needs batch_size >= 1 and iterations >= 1");
  std::vector<GraphState> encoded;
  encoded.reserve(dataset.size());
  for (const auto& m : dataset) encoded.push_back(encode(m, cfg.net.max_nodes));

  ScoreNetwork net(cfg.net, cfg.schedule, cfg.seed);
  optim::Optimizer opt(cfg.optimizer, cfg.learning_rate, net.params());
  std::vector<Tensor> shadow = net.params();
  std::uniform_int_distribution<std::size_t> pick(0, encoded.size() - 1);
  std::uniform_real_distribution<double> time(cfg.schedule.eps, 1.0);

  const std::size_t b = cfg.batch_size;
  std::vector<std::vector<Tensor>> example_grads(b);
  std::vector<double> example_loss(b);
  std::vector<Tensor> grads;
  double window = 0;
  std::size_t window_count = 0;
  if (log) *log = {};

  for (std::size_t it = 0; it < cfg.iterations; ++it) {
    parallel_for(b, cfg.jobs, [&](std::size_t k) {
      auto rng = derive_stream(cfg.seed, "diffusion.example", it * b + k);
      const auto& g0 = encoded[pick(rng)];
      const double t = time(rng);
      const auto xi = sample_noise(g0.nodes(), g0.X.cols(), rng);
      example_loss[k] = dsm_example_loss(net, g0, t, xi, &example_grads[k]);
    });
    grads = example_grads[0];
    for (std::size_t k = 1; k < b; ++k)
      for (std::size_t p = 0; p < grads.size(); ++p)
        for (std::size_t i = 0; i < grads[p].size(); ++i) grads[p][i] += example_grads[k][p][i];
    double loss = 0;
    for (double l : example_loss) loss += l;
    loss /= static_cast<double>(b);
    for (auto& gp : grads)
      for (auto& v : gp.values()) v /= static_cast<double>(b);
    opt.step(net.params(), grads);
    if (cfg.ema_decay > 0)
      optim::ema_update(shadow, net.params(), cfg.ema_decay);
    else
      shadow = net.params();
    window += loss;
    ++window_count;
    if (window_count == cfg.log_every || it + 1 == cfg.iterations) {
      if (log) log->window_loss.push_back(window / static_cast<double>(window_count));
      window = 0;
      window_count = 0;
    }
  }
  net.params() = std::move(shadow);
  return net;
}

namespace {

void symmetrize_in_place(Tensor& e) {
  const std::size_t n = e.rows();
  for (std::size_t i = 0; i < n; ++i) {
    e(i, i) = 0.0;
    for (std::size_t j = i + 1; j < n; ++j) e(i, j) = e(j, i) = 0.5 * (e(i, j) + e(j, i));
  }
}

double norm(const Tensor& t) {
  double s = 0;
  for (double v : t.values()) s += v * v;
  return std::sqrt(s);
}

void check_finite(const GraphState& g, std::size_t step) {
  if (!g.X.all_finite() || !g.E.all_finite())
    throw NumericalError("non-finite sampler state at step " + std::to_string(step));
}

}  // namespace

GraphState reverse_sample(const ScoreNetwork& net, std::size_t n_atoms, const SamplerConfig& cfg, Rng& rng,
                          const ScoreCorrection* correction, const StepObserver& observer) {
  require(cfg.steps >= 10, "sampler needs at least 10 steps");
  require(n_atoms >= 1, "sampler needs at least one node");
  const auto& sched = net.schedule();
  const std::size_t m = net.config().channels;
  std::normal_distribution<double> normal;

  const double prior_sd = 1.0 + cfg.ood;
  GraphState g{Tensor(n_atoms, m), symmetric_normal(n_atoms, rng), 1.0};
  for (auto& v : g.X.values()) v = prior_sd * normal(rng);
  for (auto& v : g.E.values()) v *= prior_sd;

  auto score_at = [&](const GraphState& s) {
    auto sc = net.score(s);
    if (correction) correction->apply(s, sc);
    return sc;
  };

  const double dt = 1.0 / static_cast<double>(cfg.steps);
  GraphState mean = g;
  for (std::size_t i = 0; i < cfg.steps; ++i) {
    const double t = 1.0 - (1.0 - sched.eps) * static_cast<double>(i) / static_cast<double>(cfg.steps - 1);
    g.t = t;
    const double beta = sched.beta(t);

    for (std::size_t c = 0; c < cfg.corrector_steps; ++c) {
      const auto sc = score_at(g);
      const auto z = sample_noise(n_atoms, m, rng);
      const double alpha = 1.0 - beta * dt;
      // One step size for the whole graph state: norms are taken over X and E jointly.
      const double gn = std::hypot(norm(sc.X), norm(sc.E));
      const double nn = std::hypot(norm(z.X), norm(z.E));
      const double step = gn > 0 ? 2.0 * alpha * std::pow(cfg.snr * nn / gn, 2) : 0.0;
      const double amp = std::sqrt(2.0 * step);
      for (std::size_t k = 0; k < g.X.size(); ++k) g.X[k] += step * sc.X[k] + amp * z.X[k];
      for (std::size_t k = 0; k < g.E.size(); ++k) g.E[k] += step * sc.E[k] + amp * z.E[k];
      symmetrize_in_place(g.E);
      check_finite(g, i);
    }

    const auto sc = score_at(g);
    const auto z = sample_noise(n_atoms, m, rng);
    const double diffusion = std::sqrt(beta);
    auto predictor = [&](Tensor& x, Tensor& x_mean, const Tensor& score, const Tensor& noise) {
      x_mean = x;
      for (std::size_t k = 0; k < x.size(); ++k) {
        // Reverse drift f − g²s with f = −½βx, integrated backwards over dt.
        const double drift = -0.5 * beta * x[k] - beta * score[k];
        x_mean[k] = x[k] - drift * dt;
        x[k] = x_mean[k] + diffusion * std::sqrt(dt) * noise[k];
      }
    };
    predictor(g.X, mean.X, sc.X, z.X);
    predictor(g.E, mean.E, sc.E, z.E);
    symmetrize_in_place(g.E);
    symmetrize_in_place(mean.E);
    mean.t = t;
    check_finite(g, i);
    assert(g.E == g.E.transposed());
    if (observer) observer(i, g);
  }
  mean.t = sched.eps;
  return mean;
}

namespace {
constexpr std::string_view kMagic = "KDSN";
constexpr std::uint16_t kVersion = 1;
}  // namespace

std::string serialize(const ScoreNetwork& net) {
  binio::Writer w;
  w.bytes(kMagic);
  w.put<std::uint16_t>(kVersion);
  const auto& c = net.config();
  for (auto v : {c.layers, c.hidden, c.time_features, c.max_nodes, c.channels})
    w.put<std::uint32_t>(static_cast<std::uint32_t>(v));
  const auto& s = net.schedule();
  w.put<double>(s.beta_min);
  w.put<double>(s.beta_max);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(s.steps));
  w.put<double>(s.eps);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(net.params().size()));
  for (const auto& p : net.params()) binio::write_block(w, p.shape(), p.values());
  return w.data();
}

ScoreNetwork deserialize(std::string_view bytes) {
  binio::Reader r(bytes);
  binio::expect_magic(r, kMagic, kVersion);
  ScoreNetConfig c;
  c.layers = r.get<std::uint32_t>();
  c.hidden = r.get<std::uint32_t>();
  c.time_features = r.get<std::uint32_t>();
  c.max_nodes = r.get<std::uint32_t>();
  c.channels = r.get<std::uint32_t>();
  NoiseSchedule s;
  s.beta_min = r.get<double>();
  s.beta_max = r.get<double>();
  s.steps = r.get<std::uint32_t>();
  s.eps = r.get<double>();
  if (c.channels != kChannels || c.layers == 0 || c.layers > 64 || c.hidden == 0 || c.hidden > 4096)
    throw Error(ErrorKind::kFormat, "implausible score network header");
  ScoreNetwork net(c, s, 0);
  const auto count = r.get<std::uint32_t>();
  if (count != net.params().size())
    throw Error(ErrorKind::kFormat, "score network checkpoint has " + std::to_string(count) + " tensors, expected " +
                                        std::to_string(net.params().size()));
  for (auto& p : net.params()) {
    std::vector<std::size_t> shape;
    auto values = binio::read_block(r, shape);
    if (shape != p.shape())
      throw DimensionError("score network tensor shape mismatch in checkpoint");
    p = Tensor(p.rows(), p.cols(), std::move(values));
  }
  if (!r.at_end()) throw Error(ErrorKind::kFormat, "trailing bytes in score network checkpoint");
  return net;
}

void save(const ScoreNetwork& net, const std::string& path) { binio::write_file(path, serialize(net)); }
ScoreNetwork load(const std::string& path) { return deserialize(binio::read_file(path)); }

}  // namespace kdream::diffusion
