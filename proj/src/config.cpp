#include "kdream/config.hpp"

#include <charconv>
#include <cmath>
#include <functional>
#include <map>
#include <sstream>

#include "kdream/binio.hpp"
#include "kdream/error.hpp"

namespace kdream::config {

namespace {

std::string fmt(double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

double to_double(std::string_view key, std::string_view v) {
  double out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || ptr != v.data() + v.size() || !std::isfinite(out))
    throw Error(ErrorKind::kInvalidArgument, std::string(key) + ": expected a number, got '" + std::string(v) + "'");
  return out;
}

std::uint64_t to_uint(std::string_view key, std::string_view v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || ec != std::errc() || ptr != v.data() + v.size())
    throw Error(ErrorKind::kInvalidArgument,
                std::string(key) + ": expected a non-negative integer, got '" + std::string(v) + "'");
  return out;
}

struct Entry {
  std::function<void(RunConfig&, std::string_view key, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename F>
Entry size_entry(F field) {
  return {[field](RunConfig& c, std::string_view k, std::string_view v) { field(c) = to_uint(k, v); },
          [field](const RunConfig& c) { return std::to_string(field(c)); }};
}

template <typename F>
Entry real_entry(F field) {
  return {[field](RunConfig& c, std::string_view k, std::string_view v) { field(c) = to_double(k, v); },
          [field](const RunConfig& c) { return fmt(field(c)); }};
}

// "off" disables an optional threshold.
template <typename F>
Entry optional_entry(F field, const char* unset) {
  return {[field, unset](RunConfig& c, std::string_view k, std::string_view v) {
            if (v == unset)
              field(c).reset();
            else
              field(c) = to_double(k, v);
          },
          [field, unset](const RunConfig& c) {
            const auto& o = field(c);
            return o ? fmt(*o) : std::string(unset);
          }};
}

template <typename F>
Entry optimizer_entry(F field) {
  return {[field](RunConfig& c, std::string_view, std::string_view v) { field(c) = optim::parse_kind(std::string(v)); },
          [field](const RunConfig& c) { return optim::to_string(field(c)); }};
}

const std::map<std::string, Entry, std::less<>>& table() {
  static const auto* t = new std::map<std::string, Entry, std::less<>>{
      {"seed", size_entry([](auto& c) -> auto& { return c.seed; })},
      {"kg.train", real_entry([](auto& c) -> auto& { return c.kg.ratios.train; })},
      {"kg.valid", real_entry([](auto& c) -> auto& { return c.kg.ratios.valid; })},
      {"kg.test", real_entry([](auto& c) -> auto& { return c.kg.ratios.test; })},
      {"kge.dim", size_entry([](auto& c) -> auto& { return c.kge.dim; })},
      {"kge.epochs", size_entry([](auto& c) -> auto& { return c.kge.epochs; })},
      {"kge.learning_rate", real_entry([](auto& c) -> auto& { return c.kge.learning_rate; })},
      {"kge.margin", real_entry([](auto& c) -> auto& { return c.kge.margin; })},
      {"kge.negatives", size_entry([](auto& c) -> auto& { return c.kge.negatives; })},
      {"diffusion.layers", size_entry([](auto& c) -> auto& { return c.diffusion.net.layers; })},
      {"diffusion.hidden", size_entry([](auto& c) -> auto& { return c.diffusion.net.hidden; })},
      {"diffusion.time_features",
       size_entry([](auto& c) -> auto& { return c.diffusion.net.time_features; })},
      {"diffusion.max_nodes", size_entry([](auto& c) -> auto& { return c.diffusion.net.max_nodes; })},
      {"diffusion.beta_min", real_entry([](auto& c) -> auto& { return c.diffusion.schedule.beta_min; })},
      {"diffusion.beta_max", real_entry([](auto& c) -> auto& { return c.diffusion.schedule.beta_max; })},
      {"diffusion.steps", size_entry([](auto& c) -> auto& { return c.diffusion.schedule.steps; })},
      {"diffusion.eps", real_entry([](auto& c) -> auto& { return c.diffusion.schedule.eps; })},
      {"diffusion.iterations", size_entry([](auto& c) -> auto& { return c.diffusion.iterations; })},
      {"diffusion.batch_size", size_entry([](auto& c) -> auto& { return c.diffusion.batch_size; })},
      {"diffusion.learning_rate", real_entry([](auto& c) -> auto& { return c.diffusion.learning_rate; })},
      {"diffusion.optimizer", optimizer_entry([](auto& c) -> auto& { return c.diffusion.optimizer; })},
      {"diffusion.ema_decay", real_entry([](auto& c) -> auto& { return c.diffusion.ema_decay; })},
      {"diffusion.snr", real_entry([](auto& c) -> auto& { return c.diffusion.snr; })},
      {"diffusion.corrector_steps",
       size_entry([](auto& c) -> auto& { return c.diffusion.corrector_steps; })},
      {"diffusion.ood", real_entry([](auto& c) -> auto& { return c.diffusion.ood; })},
      {"crn.layers", size_entry([](auto& c) -> auto& { return c.crn.layers; })},
      {"crn.hidden", size_entry([](auto& c) -> auto& { return c.crn.hidden; })},
      {"crn.tau", real_entry([](auto& c) -> auto& { return c.crn.tau; })},
      {"crn.attention",
       {[](RunConfig& c, std::string_view, std::string_view v) { c.crn.attention = crn::parse_attention(std::string(v)); },
        [](const RunConfig& c) { return crn::to_string(c.crn.attention); }}},
      {"crn.epochs", size_entry([](auto& c) -> auto& { return c.crn.epochs; })},
      {"crn.batch_size", size_entry([](auto& c) -> auto& { return c.crn.batch_size; })},
      {"crn.learning_rate", real_entry([](auto& c) -> auto& { return c.crn.learning_rate; })},
      {"crn.optimizer", optimizer_entry([](auto& c) -> auto& { return c.crn.optimizer; })},
      {"crn.beta_min", optional_entry([](auto& c) -> auto& { return c.crn.beta_min; }, "auto")},
      {"crn.beta_max", optional_entry([](auto& c) -> auto& { return c.crn.beta_max; }, "auto")},
      {"guidance.lambda_x", real_entry([](auto& c) -> auto& { return c.guidance.lambda_x; })},
      {"guidance.lambda_e",
       optional_entry([](auto& c) -> auto& { return c.guidance.lambda_e; }, "auto")},
      {"guidance.sigma_y2", real_entry([](auto& c) -> auto& { return c.guidance.sigma_y2; })},
      {"guidance.domain",
       {[](RunConfig& c, std::string_view, std::string_view v) {
          c.guidance.domain = guidance::parse_domain_mode(std::string(v));
        },
        [](const RunConfig& c) { return guidance::to_string(c.guidance.domain); }}},
      {"guidance.relation",
       {[](RunConfig& c, std::string_view k, std::string_view v) {
          if (v.empty()) throw Error(ErrorKind::kInvalidArgument, std::string(k) + ": empty relation name");
          c.guidance.relation = std::string(v);
        },
        [](const RunConfig& c) { return c.guidance.relation; }}},
      {"guidance.count", size_entry([](auto& c) -> auto& { return c.guidance.count; })},
      {"guidance.n_atoms", size_entry([](auto& c) -> auto& { return c.guidance.n_atoms; })},
      {"eval.qed_min", optional_entry([](auto& c) -> auto& { return c.eval.qed_min; }, "off")},
      {"eval.sa_min", optional_entry([](auto& c) -> auto& { return c.eval.sa_min; }, "off")},
      {"eval.sa_scale",
       {[](RunConfig& c, std::string_view k, std::string_view v) {
          if (v == "normalized")
            c.eval.sa_scale = eval::SaScale::kNormalized;
          else if (v == "raw")
            c.eval.sa_scale = eval::SaScale::kRaw;
          else
            throw Error(ErrorKind::kInvalidArgument, std::string(k) + ": expected normalized or raw");
        },
        [](const RunConfig& c) { return std::string(c.eval.sa_scale == eval::SaScale::kRaw ? "raw" : "normalized"); }}},
      {"eval.max_similarity",
       optional_entry([](auto& c) -> auto& { return c.eval.max_similarity; }, "off")},
      {"eval.top_fraction", real_entry([](auto& c) -> auto& { return c.eval.top_fraction; })},
      {"eval.adapter_timeout", real_entry([](auto& c) -> auto& { return c.eval.adapter_timeout; })},
  };
  return *t;
}

}  // namespace

const std::vector<std::string>& RunConfig::keys() {
  static const auto* k = [] {
    auto* v = new std::vector<std::string>{"seed"};
    for (const char* section : {"kg.", "kge.", "diffusion.", "crn.", "guidance.", "eval."})
      for (const auto& [key, _] : table())
        if (key.rfind(section, 0) == 0) v->push_back(key);
    return v;
  }();
  return *k;
}

void RunConfig::set(std::string_view key, std::string_view value) {
  const auto it = table().find(key);
  if (it == table().end()) throw Error(ErrorKind::kInvalidArgument, "unknown config key '" + std::string(key) + "'");
  it->second.set(*this, key, value);
}

std::string RunConfig::get(std::string_view key) const {
  const auto it = table().find(key);
  if (it == table().end()) throw Error(ErrorKind::kInvalidArgument, "unknown config key '" + std::string(key) + "'");
  return it->second.get(*this);
}

void RunConfig::validate() const {
  require(std::abs(kg.ratios.train + kg.ratios.valid + kg.ratios.test - 1.0) <= 1e-9, "kg ratios must sum to 1");
  kge_train().validate();
  diffusion.schedule.validate();
  require(diffusion.net.layers >= 1 && diffusion.net.hidden >= 1 && diffusion.net.max_nodes >= 1,
          "diffusion layers, hidden and max_nodes must be >= 1");
  require(diffusion.iterations >= 1 && diffusion.batch_size >= 1, "diffusion iterations and batch_size must be >= 1");
  require(diffusion.learning_rate > 0, "diffusion learning_rate must be positive");
  require(diffusion.ema_decay >= 0 && diffusion.ema_decay < 1, "diffusion ema_decay must lie in [0, 1)");
  require(diffusion.snr > 0, "diffusion snr must be positive");
  require(diffusion.ood > -1, "diffusion ood must exceed -1");
  require(crn.layers >= 1 && crn.hidden >= 1 && crn.epochs >= 1 && crn.batch_size >= 1,
          "crn layers, hidden, epochs and batch_size must be >= 1");
  require(crn.learning_rate > 0, "crn learning_rate must be positive");
  crn_schedule().validate();
  require(guidance.lambda_x >= 0 && lambda_e() >= 0, "guidance weights must be non-negative");
  require(guidance.sigma_y2 > 0, "guidance sigma_y2 must be positive");
  require(eval.top_fraction > 0 && eval.top_fraction <= 1, "eval top_fraction must lie in (0, 1]");
  require(eval.adapter_timeout > 0, "eval adapter_timeout must be positive");
}

kge::KgeTrainConfig RunConfig::kge_train() const {
  return {kge.dim, kge.epochs, kge.learning_rate, kge.margin, kge.negatives, seed};
}

diffusion::ScoreTrainConfig RunConfig::score_train(unsigned jobs) const {
  diffusion::ScoreTrainConfig c;
  c.net = diffusion.net;
  c.schedule = diffusion.schedule;
  c.iterations = diffusion.iterations;
  c.batch_size = diffusion.batch_size;
  c.learning_rate = diffusion.learning_rate;
  c.optimizer = diffusion.optimizer;
  c.ema_decay = diffusion.ema_decay;
  c.seed = seed;
  c.jobs = jobs;
  return c;
}

diffusion::SamplerConfig RunConfig::sampler() const {
  return {diffusion.schedule.steps, diffusion.snr, diffusion.corrector_steps, diffusion.ood};
}

crn::CrnTrainConfig RunConfig::crn_train(std::size_t out_dim, unsigned jobs) const {
  crn::CrnTrainConfig c;
  c.crn.layers = crn.layers;
  c.crn.hidden = crn.hidden;
  c.crn.out_dim = out_dim;
  c.crn.max_nodes = diffusion.net.max_nodes;
  c.crn.tau = crn.tau;
  c.crn.attention = crn.attention;
  c.schedule = crn_schedule();
  c.epochs = crn.epochs;
  c.batch_size = crn.batch_size;
  c.learning_rate = crn.learning_rate;
  c.optimizer = crn.optimizer;
  c.seed = seed;
  c.jobs = jobs;
  return c;
}

diffusion::NoiseSchedule RunConfig::crn_schedule() const {
  diffusion::NoiseSchedule s = diffusion.schedule;
  s.beta_min = crn.beta_min.value_or(s.beta_min);
  s.beta_max = crn.beta_max.value_or(s.beta_max);
  return s;
}

eval::FilterConfig RunConfig::filters() const {
  return {eval.qed_min, eval.sa_min, eval.sa_scale, eval.max_similarity};
}

RunConfig parse(std::string_view text) {
  RunConfig cfg;
  std::string section;
  std::size_t line_no = 0, pos = 0;
  while (pos < text.size()) {
    auto end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string_view::npos || line[first] == '#') continue;
    line = line.substr(first, line.find_last_not_of(" \t\r") - first + 1);
    if (line.front() == '[') {
      if (line.back() != ']' || line.size() < 3) throw ParseError(line_no, "malformed section header");
      section = std::string(line.substr(1, line.size() - 2));
      static const std::vector<std::string> known{"kg", "kge", "diffusion", "crn", "guidance", "eval"};
      if (std::find(known.begin(), known.end(), section) == known.end())
        throw ParseError(line_no, "unknown section [" + section + "]");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ParseError(line_no, "expected key = value");
    auto trim = [](std::string_view s) {
      const auto a = s.find_first_not_of(" \t");
      if (a == std::string_view::npos) return std::string_view{};
      return s.substr(a, s.find_last_not_of(" \t") - a + 1);
    };
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    if (key.empty()) throw ParseError(line_no, "empty key");
    const std::string full = section.empty() ? std::string(key) : section + "." + std::string(key);
    try {
      cfg.set(full, value);
    } catch (const ParseError&) {
      throw;
    } catch (const Error& e) {
      throw ParseError(line_no, e.what());
    }
  }
  return cfg;
}

RunConfig load(const std::string& path) { return parse(binio::read_file(path)); }

std::string write(const RunConfig& cfg) {
  std::ostringstream os;
  std::string section;
  for (const auto& key : RunConfig::keys()) {
    const auto dot = key.find('.');
    if (dot != std::string::npos) {
      const auto s = key.substr(0, dot);
      if (s != section) {
        section = s;
        os << "\n[" << section << "]\n";
      }
      os << key.substr(dot + 1) << " = " << cfg.get(key) << '\n';
    } else {
      os << key << " = " << cfg.get(key) << '\n';
    }
  }
  return os.str();
}

bool operator==(const RunConfig& a, const RunConfig& b) { return write(a) == write(b); }

}  // namespace kdream::config
