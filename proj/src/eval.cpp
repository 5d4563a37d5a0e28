#include "kdream/eval.hpp"

#include <fcntl.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <thread>
#include <unordered_set>

#include <json.hpp>

#include "kdream/error.hpp"
#include "kdream/parallel.hpp"

namespace kdream::eval {

namespace {

std::string fmt_double(double v) {
  char buf[32];
  const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

std::string fmt_cell(const std::optional<double>& v) { return v ? fmt_double(*v) : "NA"; }

}  // namespace

void ScoreMatrix::set_column(const std::string& name, Column values) {
  if (values.size() != rows())
    throw DimensionError("column '" + name + "' has " + std::to_string(values.size()) + " values for " +
                         std::to_string(rows()) + " molecules");
  const auto it = std::find(names_.begin(), names_.end(), name);
  if (it != names_.end()) {
    columns_[static_cast<std::size_t>(it - names_.begin())] = std::move(values);
    return;
  }
  names_.push_back(name);
  columns_.push_back(std::move(values));
}

bool ScoreMatrix::has_column(const std::string& name) const {
  return std::find(names_.begin(), names_.end(), name) != names_.end();
}

const Column& ScoreMatrix::column(const std::string& name) const {
  const auto it = std::find(names_.begin(), names_.end(), name);
  if (it == names_.end()) throw Error(ErrorKind::kInvalidArgument, "missing score column '" + name + "'");
  return columns_[static_cast<std::size_t>(it - names_.begin())];
}

Column max_tanimoto(const std::vector<mol::MolecularGraph>& mols, const std::vector<mol::MolecularGraph>& actives) {
  std::vector<mol::Fingerprint> ref;
  ref.reserve(actives.size());
  for (const auto& a : actives) ref.push_back(mol::fingerprint(a));
  Column out(mols.size());
  for (std::size_t i = 0; i < mols.size(); ++i) {
    if (mols[i].atom_count() == 0) continue;
    const auto fp = mol::fingerprint(mols[i]);
    double best = 0;
    for (const auto& r : ref) best = std::max(best, mol::tanimoto(fp, r));
    out[i] = best;
  }
  return out;
}

MetricsReport compute_metrics(const std::vector<mol::MolecularGraph>& mols,
                              const std::vector<mol::MolecularGraph>& reference) {
  MetricsReport r;
  r.total = mols.size();
  std::vector<std::string> names;
  for (const auto& m : mols) names.push_back(mol::write_smiles(m));
  r.per_molecule = ScoreMatrix(names);
  Column valid(mols.size());
  std::vector<mol::MolecularGraph> valid_mols;
  std::unordered_set<std::uint64_t> keys;
  for (std::size_t i = 0; i < mols.size(); ++i) {
    const bool ok = mols[i].atom_count() > 0 && mol::is_valid(mols[i]).valid;
    valid[i] = ok ? 1.0 : 0.0;
    if (!ok) continue;
    ++r.valid;
    keys.insert(mol::canonical_key(mols[i]));
  }
  const auto sims = max_tanimoto(mols, reference);
  r.validity = r.total ? static_cast<double>(r.valid) / static_cast<double>(r.total) : 0.0;
  if (r.valid) {
    r.uniqueness = static_cast<double>(keys.size()) / static_cast<double>(r.valid);
    std::size_t novel = 0;
    for (std::size_t i = 0; i < mols.size(); ++i)
      if (*valid[i] == 1.0 && *sims[i] < kNoveltyThreshold) ++novel;
    r.novelty = static_cast<double>(novel) / static_cast<double>(r.valid);
  }
  r.per_molecule.set_column("valid", std::move(valid));
  r.per_molecule.set_column("max_sim_ref", sims);
  return r;
}

double normalize_sa(double raw) { return (10.0 - raw) / 9.0; }

FilterResult apply_filters(const ScoreMatrix& scores, const FilterConfig& cfg) {
  FilterResult res;
  const Column* qed = cfg.qed_min ? &scores.column("qed") : nullptr;
  const Column* sa = cfg.sa_min ? &scores.column("sa") : nullptr;
  const Column* sim = cfg.max_similarity ? &scores.column("max_sim_actives") : nullptr;
  if (qed) res.rejected["qed"] = 0;
  if (sa) res.rejected["sa"] = 0;
  if (sim) res.rejected["tanimoto"] = 0;
  for (std::size_t i = 0; i < scores.rows(); ++i) {
    bool keep = true;
    if (qed && !((*qed)[i] && *(*qed)[i] >= *cfg.qed_min)) {
      ++res.rejected["qed"];
      keep = false;
    }
    if (sa) {
      const auto& v = (*sa)[i];
      const bool pass = v && (cfg.sa_scale == SaScale::kRaw ? normalize_sa(*v) : *v) >= *cfg.sa_min;
      if (!pass) {
        ++res.rejected["sa"];
        keep = false;
      }
    }
    if (sim && !((*sim)[i] && *(*sim)[i] < *cfg.max_similarity)) {
      ++res.rejected["tanimoto"];
      keep = false;
    }
    if (keep) res.kept.push_back(i);
  }
  return res;
}

namespace {

std::string shell_quote(const std::string& s) {
  std::string out = "'";
  for (char c : s) {
    if (c == '\'')
      out += "'\\''";
    else
      out += c;
  }
  return out + "'";
}

std::string replace_all(std::string s, const std::string& from, const std::string& to) {
  for (std::size_t pos = 0; (pos = s.find(from, pos)) != std::string::npos; pos += to.size()) s.replace(pos, from.size(), to);
  return s;
}

enum class RunStatus { kOk, kExit, kTimeout, kSpawn };

RunStatus run_command(const std::string& cmd, double timeout_seconds, int* exit_code) {
  const pid_t pid = fork();
  if (pid < 0) return RunStatus::kSpawn;
  if (pid == 0) {
    setpgid(0, 0);
    const int devnull = open("/dev/null", O_RDWR);
    if (devnull >= 0) {
      dup2(devnull, STDIN_FILENO);
      dup2(devnull, STDOUT_FILENO);
    }
    execl("/bin/sh", "sh", "-c", cmd.c_str(), static_cast<char*>(nullptr));
    _exit(127);
  }
  setpgid(pid, pid);
  const auto deadline = std::chrono::steady_clock::now() + std::chrono::duration<double>(timeout_seconds);
  int status = 0;
  while (true) {
    const pid_t r = waitpid(pid, &status, WNOHANG);
    if (r == pid) break;
    if (r < 0) return RunStatus::kSpawn;
    if (std::chrono::steady_clock::now() >= deadline) {
      kill(-pid, SIGKILL);
      kill(pid, SIGKILL);
      waitpid(pid, &status, 0);
      return RunStatus::kTimeout;
    }
    std::this_thread::sleep_for(std::chrono::milliseconds(5));
  }
  *exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : 128 + WTERMSIG(status);
  return *exit_code == 0 ? RunStatus::kOk : RunStatus::kExit;
}

struct Batch {
  std::size_t begin, end;
  Column scores;
  std::string diagnostic;
  std::optional<Error> failure;
};

void run_batch(const std::string& tmpl, const std::vector<std::string>& smiles, const std::filesystem::path& dir,
               std::size_t index, double timeout, Batch& b) {
  const auto in = dir / ("input_" + std::to_string(index) + ".smi");
  const auto out = dir / ("output_" + std::to_string(index) + ".txt");
  {
    std::ofstream f(in);
    for (std::size_t i = b.begin; i < b.end; ++i) f << smiles[i] << '\n';
    if (!f) throw Error(ErrorKind::kIo, "cannot write adapter input " + in.string());
  }
  const std::string cmd = replace_all(replace_all(tmpl, "{input}", shell_quote(in.string())), "{output}",
                                      shell_quote(out.string()));
  b.scores.assign(b.end - b.begin, std::nullopt);
  int code = 0;
  const auto status = run_command(cmd, timeout, &code);
  const std::string range = "molecules " + std::to_string(b.begin) + ".." + std::to_string(b.end);
  if (status == RunStatus::kTimeout) {
    b.diagnostic = "adapter timed out after " + fmt_double(timeout) + " s for " + range;
    return;
  }
  if (status == RunStatus::kSpawn) {
    b.diagnostic = "adapter could not be started for " + range;
    return;
  }
  if (status == RunStatus::kExit) {
    b.diagnostic = "adapter exited with status " + std::to_string(code) + " for " + range;
    return;
  }
  std::ifstream f(out);
  if (!f) {
    b.diagnostic = "adapter wrote no output file for " + range;
    return;
  }
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::optional<double>> values;
  while (std::getline(f, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto first = line.find_first_not_of(" \t");
    const auto last = line.find_last_not_of(" \t");
    const std::string cell = first == std::string::npos ? "" : line.substr(first, last - first + 1);
    if (cell == "NA") {
      values.emplace_back();
      continue;
    }
    double v = 0;
    const auto [ptr, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
    if (cell.empty() || ec != std::errc() || ptr != cell.data() + cell.size())
      throw ParseError(line_no, "adapter output is not a number: '" + cell + "'");
    values.emplace_back(v);
  }
  if (values.size() != b.end - b.begin)
    throw Error(ErrorKind::kExternal, "adapter returned " + std::to_string(values.size()) + " scores for " +
                                          std::to_string(b.end - b.begin) + " molecules");
  b.scores = std::move(values);
}

}  // namespace

ExternalResult external_score(const std::string& command_template, const std::vector<std::string>& smiles,
                              const ExternalConfig& cfg) {
  if (command_template.find("{input}") == std::string::npos || command_template.find("{output}") == std::string::npos)
    throw Error(ErrorKind::kInvalidArgument, "adapter template must contain {input} and {output}");
  require(cfg.timeout_seconds > 0, "adapter timeout must be positive");
  ExternalResult result;
  if (smiles.empty()) return result;

  std::string pattern = (std::filesystem::temp_directory_path() / "kdream-adapter-XXXXXX").string();
  if (!mkdtemp(pattern.data())) throw Error(ErrorKind::kIo, "cannot create a temporary directory for the adapter");
  const std::filesystem::path dir(pattern);

  const std::size_t jobs = std::max<std::size_t>(1, std::min<std::size_t>(cfg.jobs, smiles.size()));
  std::vector<Batch> batches(jobs);
  for (std::size_t j = 0; j < jobs; ++j) {
    batches[j].begin = smiles.size() * j / jobs;
    batches[j].end = smiles.size() * (j + 1) / jobs;
  }
  try {
    parallel_for(jobs, static_cast<unsigned>(jobs), [&](std::size_t j) {
      run_batch(command_template, smiles, dir, j, cfg.timeout_seconds, batches[j]);
    });
  } catch (...) {
    std::error_code ec;
    std::filesystem::remove_all(dir, ec);
    throw;
  }
  std::error_code ec;
  std::filesystem::remove_all(dir, ec);
  for (auto& b : batches) {
    result.scores.insert(result.scores.end(), b.scores.begin(), b.scores.end());
    if (!b.diagnostic.empty()) result.diagnostics.push_back(b.diagnostic);
  }
  return result;
}

namespace {
double logistic(double z) { return 1.0 / (1.0 + std::exp(-z)); }
}  // namespace

double proxy_qed(const mol::MolecularGraph& g) {
  const double heavy = static_cast<double>(g.atom_count());
  const double rings = static_cast<double>(g.ring_count());
  return logistic(0.3 * (heavy - 6.0) + 0.8 * rings);
}

double proxy_sa(const mol::MolecularGraph& g) {
  double branching = 0;
  for (std::size_t i = 0; i < g.atom_count(); ++i) branching += std::max(0, g.degree(i) - 2);
  return logistic(1.5 - 0.7 * branching);
}

Column proxy_score(const std::string& name, const std::vector<mol::MolecularGraph>& mols) {
  double (*fn)(const mol::MolecularGraph&) = nullptr;
  if (name == "proxy:qed")
    fn = proxy_qed;
  else if (name == "proxy:sa")
    fn = proxy_sa;
  else
    throw Error(ErrorKind::kInvalidArgument, "unknown proxy scorer '" + name + "' (expected proxy:qed or proxy:sa)");
  Column out(mols.size());
  for (std::size_t i = 0; i < mols.size(); ++i)
    if (mols[i].atom_count() > 0 && mol::is_valid(mols[i]).valid) out[i] = fn(mols[i]);
  return out;
}

double threshold_proportion(const ScoreMatrix& scores,
                            const std::vector<std::pair<std::string, double>>& thresholds) {
  if (scores.rows() == 0) throw Error(ErrorKind::kInvalidArgument, "threshold proportion of an empty table");
  std::vector<const Column*> cols;
  for (const auto& [name, _] : thresholds) cols.push_back(&scores.column(name));
  std::size_t hits = 0;
  for (std::size_t i = 0; i < scores.rows(); ++i) {
    bool ok = true;
    for (std::size_t k = 0; k < cols.size() && ok; ++k) ok = (*cols[k])[i] && *(*cols[k])[i] <= thresholds[k].second;
    hits += ok;
  }
  return static_cast<double>(hits) / static_cast<double>(scores.rows());
}

std::string report_tsv(const MetricsReport& report, const ScoreMatrix& scores) {
  std::ostringstream os;
  os << "# total\t" << report.total << "\n# valid\t" << report.valid << "\n# validity\t" << fmt_double(report.validity)
     << "\n# uniqueness\t" << fmt_cell(report.uniqueness) << "\n# novelty\t" << fmt_cell(report.novelty)
     << "\n# uniqueness and novelty denominators: valid molecules\n";
  os << "smiles";
  for (const auto& c : scores.columns()) os << '\t' << c;
  os << '\n';
  for (std::size_t i = 0; i < scores.rows(); ++i) {
    os << scores.molecules()[i];
    for (const auto& c : scores.columns()) os << '\t' << fmt_cell(scores.column(c)[i]);
    os << '\n';
  }
  return os.str();
}

std::string report_jsonl(const MetricsReport& report, const ScoreMatrix& scores) {
  using nlohmann::ordered_json;
  auto opt = [](const std::optional<double>& v) { return v ? ordered_json(*v) : ordered_json(nullptr); };
  std::ostringstream os;
  ordered_json summary{{"record", "summary"},       {"total", report.total},
                       {"valid", report.valid},      {"validity", report.validity},
                       {"uniqueness", opt(report.uniqueness)}, {"novelty", opt(report.novelty)},
                       {"denominator", "valid"}};
  os << summary.dump() << '\n';
  for (std::size_t i = 0; i < scores.rows(); ++i) {
    ordered_json row{{"record", "molecule"}, {"index", i}, {"smiles", scores.molecules()[i]}};
    for (const auto& c : scores.columns()) row[c] = opt(scores.column(c)[i]);
    os << row.dump() << '\n';
  }
  return os.str();
}

std::string histogram_tsv(const std::vector<std::pair<double, std::vector<double>>>& by_lambda, std::size_t bins,
                          bool negate) {
  require(bins >= 1, "histogram needs at least one bin");
  const double sign = negate ? -1.0 : 1.0;
  double lo = std::numeric_limits<double>::infinity(), hi = -lo;
  for (const auto& [_, v] : by_lambda)
    for (double x : v) {
      lo = std::min(lo, sign * x);
      hi = std::max(hi, sign * x);
    }
  std::ostringstream os;
  os << "lambda\tbin_lo\tbin_hi\tcount\n";
  if (!std::isfinite(lo)) return os.str();
  const double width = hi > lo ? (hi - lo) / static_cast<double>(bins) : 1.0;
  for (const auto& [lambda, values] : by_lambda) {
    std::vector<std::size_t> counts(bins, 0);
    for (double x : values) {
      auto b = static_cast<std::size_t>((sign * x - lo) / width);
      ++counts[std::min(b, bins - 1)];
    }
    for (std::size_t b = 0; b < bins; ++b)
      os << fmt_double(lambda) << '\t' << fmt_double(lo + width * static_cast<double>(b)) << '\t'
         << fmt_double(lo + width * static_cast<double>(b + 1)) << '\t' << counts[b] << '\n';
  }
  return os.str();
}

std::string scatter_tsv(const ScoreMatrix& scores, const std::string& x, const std::string& y, bool negate) {
  const auto& cx = scores.column(x);
  const auto& cy = scores.column(y);
  const double sign = negate ? -1.0 : 1.0;
  std::ostringstream os;
  os << x << '\t' << y << '\n';
  for (std::size_t i = 0; i < scores.rows(); ++i)
    if (cx[i] && cy[i]) os << fmt_double(sign * *cx[i]) << '\t' << fmt_double(sign * *cy[i]) << '\n';
  return os.str();
}

}  // namespace kdream::eval
