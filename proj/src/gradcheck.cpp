#include "kdream/gradcheck.hpp"

#include <cmath>

#include "kdream/crn.hpp"
#include "kdream/diffusion.hpp"
#include "kdream/error.hpp"
#include "kdream/kge.hpp"
#include "kdream/rng.hpp"

namespace kdream::gradcheck {

using ad::Tensor;

namespace {

std::vector<double> flatten(const std::vector<Tensor>& ts) {
  std::vector<double> v;
  for (const auto& t : ts) v.insert(v.end(), t.values().begin(), t.values().end());
  return v;
}

void unflatten(std::span<const double> flat, std::vector<Tensor>& ts) {
  std::size_t k = 0;
  for (auto& t : ts)
    for (auto& x : t.values()) x = flat[k++];
}

Tensor random_tensor(std::size_t r, std::size_t c, Rng& rng, double scale = 1.0) {
  std::normal_distribution<double> normal;
  Tensor t(r, c);
  for (auto& v : t.values()) v = scale * normal(rng);
  return t;
}

diffusion::GraphState random_state(std::size_t n, Rng& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  diffusion::GraphState g{random_tensor(n, diffusion::kChannels, rng), Tensor(n, n), 0.3};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) g.E(i, j) = g.E(j, i) = u(rng);
  return g;
}

}  // namespace

Report transe_margin(std::uint64_t seed) {
  auto rng = derive_stream(seed, "gradcheck.transe");
  const std::size_t d = 6, ne = 5, nr = 2;
  std::normal_distribution<double> normal;
  kge::TranseParams p{d, std::vector<double>(ne * d), std::vector<double>(nr * d)};
  for (auto& v : p.entities) v = normal(rng);
  for (auto& v : p.relations) v = normal(rng);
  const kg::Triple pos{0, 1, 2}, neg{3, 1, 2};
  // A margin this wide keeps the hinge active, where the loss is smooth.
  const double margin = 50.0;
  kge::TranseParams g{d, std::vector<double>(ne * d, 0.0), std::vector<double>(nr * d, 0.0)};
  kge::margin_pair_loss(p, pos, neg, margin, &g);
  std::vector<double> point = p.entities, analytic = g.entities;
  point.insert(point.end(), p.relations.begin(), p.relations.end());
  analytic.insert(analytic.end(), g.relations.begin(), g.relations.end());
  auto f = [&](std::span<const double> x) {
    kge::TranseParams q{d, {x.begin(), x.begin() + static_cast<std::ptrdiff_t>(ne * d)},
                        {x.begin() + static_cast<std::ptrdiff_t>(ne * d), x.end()}};
    return kge::margin_pair_loss(q, pos, neg, margin);
  };
  return {"transe", point.size(), ad::grad_check(f, point, analytic)};
}

Report dsm(std::uint64_t seed) {
  auto rng = derive_stream(seed, "gradcheck.dsm");
  diffusion::ScoreNetConfig cfg{2, 6, 4, 2, diffusion::kChannels};
  diffusion::ScoreNetwork net(cfg, {}, seed);
  auto g0 = random_state(2, rng);
  g0.t = 0;
  const double t = 0.4;
  const auto xi = diffusion::sample_noise(2, diffusion::kChannels, rng);
  std::vector<Tensor> grads;
  diffusion::dsm_example_loss(net, g0, t, xi, &grads);
  const auto point = flatten(net.params());
  auto f = [&](std::span<const double> x) {
    auto copy = net;
    unflatten(x, copy.params());
    return diffusion::dsm_example_loss(copy, g0, t, xi);
  };
  return {"dsm", point.size(), ad::grad_check(f, point, flatten(grads))};
}

Report crn_params(std::uint64_t seed) {
  auto rng = derive_stream(seed, "gradcheck.crn");
  crn::CrnConfig cfg;
  cfg.layers = 2;
  cfg.hidden = 5;
  cfg.out_dim = 3;
  cfg.max_nodes = 4;
  auto p = crn::CrnParams::init(cfg, seed);
  for (auto& t : p.tensors)
    for (auto& v : t.values()) v += 0.1 * std::normal_distribution<double>()(rng);
  const auto g = random_state(4, rng);
  const std::vector<double> y{0.5, -1.0, 2.0};
  std::vector<Tensor> grads;
  crn::crn_example_loss(p, g, y, &grads);
  const auto point = flatten(p.tensors);
  auto f = [&](std::span<const double> x) {
    auto copy = p;
    unflatten(x, copy.tensors);
    return crn::crn_example_loss(copy, g, y);
  };
  return {"crn", point.size(), ad::grad_check(f, point, flatten(grads))};
}

Report guidance_input(std::uint64_t seed) {
  auto rng = derive_stream(seed, "gradcheck.guidance");
  crn::CrnConfig cfg;
  cfg.layers = 2;
  cfg.hidden = 5;
  cfg.out_dim = 3;
  cfg.max_nodes = 4;
  const auto p = crn::CrnParams::init(cfg, seed);
  const std::size_t n = 4;
  auto g = random_state(n, rng);
  // Keep E entries away from the attention threshold so the support is locally constant.
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j)
      if (std::abs(g.E(i, j) - cfg.tau) < 0.01) g.E(i, j) = g.E(j, i) = cfg.tau + 0.05;
  const std::vector<double> y{1.0, 0.0, -1.0};
  const auto grad = crn::input_gradient(p, g, y);

  // Coordinates: every X entry, then each unordered E pair moved symmetrically.
  std::vector<double> point = g.X.values(), analytic = grad.X.values();
  std::vector<std::pair<std::size_t, std::size_t>> pairs;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = i + 1; j < n; ++j) {
      pairs.emplace_back(i, j);
      point.push_back(g.E(i, j));
      analytic.push_back(2.0 * grad.E(i, j));
    }
  auto f = [&](std::span<const double> x) {
    auto s = g;
    for (std::size_t k = 0; k < s.X.size(); ++k) s.X[k] = x[k];
    for (std::size_t k = 0; k < pairs.size(); ++k) {
      const auto [i, j] = pairs[k];
      s.E(i, j) = s.E(j, i) = x[s.X.size() + k];
    }
    return crn::input_gradient(p, s, y).value;
  };
  return {"guidance", point.size(), ad::grad_check(f, point, analytic)};
}

std::vector<Report> all(std::uint64_t seed) {
  return {transe_margin(seed), dsm(seed), crn_params(seed), guidance_input(seed)};
}

std::vector<Report> run(const std::string& module, std::uint64_t seed) {
  if (module == "all") return all(seed);
  if (module == "transe") return {transe_margin(seed)};
  if (module == "dsm") return {dsm(seed)};
  if (module == "crn") return {crn_params(seed)};
  if (module == "guidance") return {guidance_input(seed)};
  throw Error(ErrorKind::kInvalidArgument,
              "unknown gradcheck module '" + module + "' (expected transe, dsm, crn, guidance or all)");
}

}  // namespace kdream::gradcheck
