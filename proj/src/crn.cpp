#include "kdream/crn.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "kdream/binio.hpp"
#include "kdream/error.hpp"
#include "kdream/parallel.hpp"
#include "kdream/rng.hpp"

namespace kdream::crn {

using ad::Tensor;
using ad::Var;
using diffusion::GraphState;

Attention parse_attention(const std::string& s) {
  if (s == "sparse") return Attention::kSparse;
  if (s == "dense") return Attention::kDense;
  throw Error(ErrorKind::kInvalidArgument, "unknown attention mode '" + s + "' (expected sparse or dense)");
}

std::string to_string(Attention a) { return a == Attention::kSparse ? "sparse" : "dense"; }

void CrnConfig::validate() const {
  require(layers >= 1 && hidden >= 1 && out_dim >= 1, "crn needs layers, hidden and out_dim >= 1");
  require(channels == diffusion::kChannels, "crn channel count must be " + std::to_string(diffusion::kChannels));
  require(max_nodes >= 1, "crn needs max_nodes >= 1");
  require(std::isfinite(tau), "crn tau must be finite");
}

std::vector<std::string> CrnParams::names(const CrnConfig& cfg) {
  std::vector<std::string> n{"w0"};
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    n.push_back("att" + std::to_string(l) + ".w");
    n.push_back("att" + std::to_string(l) + ".a");
  }
  n.emplace_back("readout.w");
  n.emplace_back("readout.b");
  return n;
}

namespace {

std::vector<std::pair<std::size_t, std::size_t>> shapes(const CrnConfig& c) {
  std::vector<std::pair<std::size_t, std::size_t>> s{{c.channels, c.hidden}};
  for (std::size_t l = 0; l < c.layers; ++l) {
    s.emplace_back(c.hidden, c.hidden);
    s.emplace_back(2 * c.hidden, 1);
  }
  s.emplace_back(c.hidden, c.out_dim);
  s.emplace_back(1, c.out_dim);
  return s;
}

void check_state(const CrnConfig& cfg, const Tensor& X, const Tensor& E) {
  if (X.cols() != cfg.channels || E.rows() != X.rows() || E.cols() != X.rows())
    throw DimensionError("crn input X " + X.shape_str() + ", E " + E.shape_str() + " does not fit " +
                         std::to_string(cfg.channels) + " channels");
}

void check_target(const CrnConfig& cfg, const std::vector<double>& y) {
  if (y.size() != cfg.out_dim)
    throw DimensionError("target dimension " + std::to_string(y.size()) + " does not match crn output dimension " +
                         std::to_string(cfg.out_dim));
}

}  // namespace

CrnParams CrnParams::init(const CrnConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  CrnParams p{cfg, {}};
  auto rng = derive_stream(seed, "crn.init");
  std::normal_distribution<double> normal;
  for (auto [r, c] : shapes(cfg)) {
    Tensor t(r, c);
    if (r > 1) {
      const double sd = 1.0 / std::sqrt(static_cast<double>(r));
      for (auto& v : t.values()) v = sd * normal(rng);
    }
    p.tensors.push_back(std::move(t));
  }
  return p;
}

Tensor attention_mask(const CrnConfig& cfg, const Tensor& E) {
  const std::size_t n = E.rows();
  Tensor m(n, n, 1.0);
  if (cfg.attention == Attention::kDense) return m;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) m(i, j) = (i == j || E(i, j) > cfg.tau) ? 1.0 : 0.0;
  return m;
}

Var crn_forward(const CrnConfig& cfg, const std::vector<Var>& params, Var X, Var E) {
  check_state(cfg, X.value(), E.value());
  if (params.size() != 2 * cfg.layers + 3)
    throw DimensionError("crn expects " + std::to_string(2 * cfg.layers + 3) + " parameter tensors, got " +
                         std::to_string(params.size()));
  const std::size_t n = X.rows();
  const Tensor mask = attention_mask(cfg, E.value());
  Var h = ad::tanh(ad::matmul(ad::matmul(E, X), params[0]));
  for (std::size_t l = 0; l < cfg.layers; ++l) {
    Var wh = ad::matmul(h, params[1 + 2 * l]);
    Var logits = ad::reshape(ad::matmul(ad::pair_concat(wh), params[2 + 2 * l]), n, n);
    Var alpha = ad::masked_row_softmax(ad::leaky_relu(logits, 0.2), mask);
    h = ad::matmul(alpha, wh);
  }
  return ad::add_row(ad::matmul(ad::sum_rows(h), params[1 + 2 * cfg.layers]), params[2 + 2 * cfg.layers]);
}

namespace {

std::vector<Var> as_constants(ad::Tape& tape, const CrnParams& p) {
  std::vector<Var> v;
  v.reserve(p.tensors.size());
  for (const auto& t : p.tensors) v.push_back(tape.constant(t));
  return v;
}

}  // namespace

std::vector<double> crn_forward(const CrnParams& p, const GraphState& g) {
  ad::Tape tape;
  auto pv = as_constants(tape, p);
  return crn_forward(p.config, pv, tape.constant(g.X), tape.constant(g.E)).value().values();
}

InputGradient input_gradient(const CrnParams& p, const GraphState& g, const std::vector<double>& y) {
  check_target(p.config, y);
  ad::Tape tape;
  auto pv = as_constants(tape, p);
  Var X = tape.leaf(g.X), E = tape.leaf(g.E);
  Var loss = ad::squared_distance(crn_forward(p.config, pv, X, E), tape.constant(Tensor::row(y)));
  tape.backward(loss);
  InputGradient out{tape.grad(X), tape.grad(E), loss.value()[0]};
  const std::size_t n = out.E.rows();
  for (std::size_t i = 0; i < n; ++i) {
    out.E(i, i) = 0.0;
    for (std::size_t j = i + 1; j < n; ++j) out.E(i, j) = out.E(j, i) = 0.5 * (out.E(i, j) + out.E(j, i));
  }
  return out;
}

double crn_example_loss(const CrnParams& p, const GraphState& gt, const std::vector<double>& y,
                        std::vector<Tensor>* grads) {
  check_target(p.config, y);
  ad::Tape tape;
  std::vector<Var> pv;
  for (const auto& t : p.tensors) pv.push_back(grads ? tape.leaf(t) : tape.constant(t));
  Var loss = ad::squared_distance(crn_forward(p.config, pv, tape.constant(gt.X), tape.constant(gt.E)),
                                  tape.constant(Tensor::row(y)));
  const double value = loss.value()[0];
  if (!std::isfinite(value)) throw NumericalError("non-finite crn loss at t=" + std::to_string(gt.t));
  if (grads) {
    tape.backward(loss);
    grads->clear();
    for (auto v : pv) grads->push_back(tape.grad(v));
  }
  return value;
}

CrnParams train_crn(const std::vector<TrainingPair>& pairs, const CrnTrainConfig& cfg, TrainLog* log) {
  require(!pairs.empty(), "crn training needs at least one (molecule, embedding) pair");
  require(cfg.epochs >= 1 && cfg.batch_size >= 1, "crn training needs epochs >= 1 and batch_size >= 1");
  cfg.schedule.validate();
  std::vector<GraphState> encoded;
  for (const auto& [m, y] : pairs) {
    check_target(cfg.crn, y);
    encoded.push_back(diffusion::encode(m, cfg.crn.max_nodes));
  }
  CrnParams p = CrnParams::init(cfg.crn, cfg.seed);
  optim::Optimizer opt(cfg.optimizer, cfg.learning_rate, p.tensors);
  std::uniform_real_distribution<double> time(cfg.schedule.eps, 1.0);
  if (log) *log = {};

  std::vector<std::size_t> order(pairs.size());
  std::vector<std::vector<Tensor>> example_grads(cfg.batch_size);
  std::vector<double> example_loss(cfg.batch_size);
  std::uint64_t drawn = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), 0);
    auto shuffle_rng = derive_stream(cfg.seed, "crn.epoch", epoch);
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_loss = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t b = std::min(cfg.batch_size, order.size() - start);
      parallel_for(b, cfg.jobs, [&](std::size_t k) {
        auto rng = derive_stream(cfg.seed, "crn.example", drawn + k);
        const std::size_t idx = order[start + k];
        const double t = time(rng);
        const auto gt = diffusion::forward_perturb(encoded[idx], t, cfg.schedule, rng);
        example_loss[k] = crn_example_loss(p, gt, pairs[idx].second, &example_grads[k]);
      });
      drawn += b;
      auto grads = example_grads[0];
      for (std::size_t k = 1; k < b; ++k)
        for (std::size_t q = 0; q < grads.size(); ++q)
          for (std::size_t i = 0; i < grads[q].size(); ++i) grads[q][i] += example_grads[k][q][i];
      for (auto& gq : grads)
        for (auto& v : gq.values()) v /= static_cast<double>(b);
      opt.step(p.tensors, grads);
      for (std::size_t k = 0; k < b; ++k) epoch_loss += example_loss[k];
    }
    if (log) log->epoch_loss.push_back(epoch_loss / static_cast<double>(pairs.size()));
  }
  return p;
}

namespace {
constexpr std::string_view kMagic = "KDCR";
constexpr std::uint16_t kVersion = 1;
}  // namespace

std::string serialize(const CrnParams& p) {
  const auto& c = p.config;
  binio::Writer w;
  w.bytes(kMagic);
  w.put<std::uint16_t>(kVersion);
  for (auto v : {c.layers, c.hidden, c.out_dim, c.channels, c.max_nodes})
    w.put<std::uint32_t>(static_cast<std::uint32_t>(v));
  w.put<double>(c.tau);
  w.put<std::uint8_t>(static_cast<std::uint8_t>(c.attention));
  w.put<std::uint8_t>(static_cast<std::uint8_t>(Activation::kTanh));
  w.put<std::uint8_t>(static_cast<std::uint8_t>(Activation::kLeakyRelu02));
  w.put<std::uint32_t>(static_cast<std::uint32_t>(p.tensors.size()));
  for (const auto& t : p.tensors) binio::write_block(w, t.shape(), t.values());
  return w.data();
}

CrnParams deserialize(std::string_view bytes) {
  binio::Reader r(bytes);
  binio::expect_magic(r, kMagic, kVersion);
  CrnConfig c;
  c.layers = r.get<std::uint32_t>();
  c.hidden = r.get<std::uint32_t>();
  c.out_dim = r.get<std::uint32_t>();
  c.channels = r.get<std::uint32_t>();
  c.max_nodes = r.get<std::uint32_t>();
  c.tau = r.get<double>();
  const auto attention = r.get<std::uint8_t>();
  const auto agg = r.get<std::uint8_t>();
  const auto att = r.get<std::uint8_t>();
  if (attention > 1) throw Error(ErrorKind::kFormat, "unknown attention mode id in crn checkpoint");
  if (agg != static_cast<std::uint8_t>(Activation::kTanh) || att != static_cast<std::uint8_t>(Activation::kLeakyRelu02))
    throw Error(ErrorKind::kFormat, "unsupported activation ids in crn checkpoint");
  c.attention = static_cast<Attention>(attention);
  if (c.layers == 0 || c.layers > 64 || c.hidden == 0 || c.hidden > 4096 || c.out_dim == 0 || c.out_dim > 65536)
    throw Error(ErrorKind::kFormat, "implausible crn header");
  c.validate();
  const auto expected = shapes(c);
  const auto count = r.get<std::uint32_t>();
  if (count != expected.size())
    throw Error(ErrorKind::kFormat, "crn checkpoint has " + std::to_string(count) + " tensors, expected " +
                                        std::to_string(expected.size()));
  CrnParams p{c, {}};
  for (auto [rows, cols] : expected) {
    std::vector<std::size_t> shape;
    auto values = binio::read_block(r, shape);
    if (shape != std::vector<std::size_t>{rows, cols}) throw DimensionError("crn tensor shape mismatch in checkpoint");
    p.tensors.emplace_back(rows, cols, std::move(values));
  }
  if (!r.at_end()) throw Error(ErrorKind::kFormat, "trailing bytes in crn checkpoint");
  return p;
}

void save(const CrnParams& p, const std::string& path) { binio::write_file(path, serialize(p)); }
CrnParams load(const std::string& path) { return deserialize(binio::read_file(path)); }

}  // namespace kdream::crn
