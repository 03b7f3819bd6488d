#include "ngfn/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "ngfn/parallel.hpp"
#include "ngfn/rng.hpp"

namespace ngfn {
namespace {

constexpr const char* kCsvHeader =
    "step,mean_reward,diversity,prior_distance,target_tv,terminal_g_norm,"
    "loss_fwd,loss_rev,loss_terminal,loss_reg";

void check_batch(const std::vector<Vec>& samples, const char* who) {
  if (samples.empty()) throw ConfigError(std::string(who) + ": empty sample batch");
}

}  // namespace

std::vector<Vec> sample_terminals(const Policy& policy, const NoiseSchedule& schedule, int dim,
                                  long n, std::uint64_t seed) {
  std::vector<Vec> out(static_cast<size_t>(n));
  parallel_for(n, [&](long i) {
    out[static_cast<size_t>(i)] =
        sample_trajectory(policy, schedule, dim, seed_mix({seed, static_cast<std::uint64_t>(i)}))
            .states.back();
  });
  return out;
}

double mean_reward(const std::vector<Vec>& samples, const RewardSpec& spec) {
  check_batch(samples, "mean_reward");
  double total = 0.0;
  for (const auto& x : samples) total += reward(spec, x);
  return total / static_cast<double>(samples.size());
}

double diversity(const std::vector<Vec>& samples) {
  check_batch(samples, "diversity");
  const int d = static_cast<int>(samples[0].size());
  const double n = static_cast<double>(samples.size());
  Vec mean = Vec::Zero(d);
  for (const auto& x : samples) mean += x;
  mean /= n;
  double total = 0.0;
  for (const auto& x : samples) total += (x - mean).squaredNorm();
  return total / (n * d);
}

double prior_distance(const std::vector<Vec>& a, const std::vector<Vec>& b) {
  check_batch(a, "prior_distance");
  check_batch(b, "prior_distance");
  const auto mean_pair_dist = [](const std::vector<Vec>& u, const std::vector<Vec>& v) {
    double total = 0.0;
    for (const auto& x : u) {
      for (const auto& y : v) total += (x - y).norm();
    }
    return total / (static_cast<double>(u.size()) * static_cast<double>(v.size()));
  };
  return 2.0 * mean_pair_dist(a, b) - mean_pair_dist(a, a) - mean_pair_dist(b, b);
}

double mean_terminal_g_norm(const Mlp& g_phi, const std::vector<Vec>& samples) {
  check_batch(samples, "mean_terminal_g_norm");
  double total = 0.0;
  for (const auto& x : samples) total += g_phi.forward(x, g_phi.time_scale()).norm();
  return total / static_cast<double>(samples.size());
}

double mean_reward_grad_norm(const RewardSpec& spec, double beta,
                             const std::vector<Vec>& samples) {
  check_batch(samples, "mean_reward_grad_norm");
  double total = 0.0;
  for (const auto& x : samples) total += beta * log_reward_grad(spec, x).norm();
  return total / static_cast<double>(samples.size());
}

int GridOracle::n_cells() const {
  int n = bins;
  for (int i = 1; i < dim; ++i) n *= bins;
  return n;
}

int GridOracle::cell_of(const Vec& x) const {
  int cell = 0;
  for (int j = 0; j < dim; ++j) {
    if (x[j] < lo || x[j] > hi) return -1;
    int idx = static_cast<int>((x[j] - lo) / cell_width());
    if (idx == bins) idx = bins - 1;  // fold the closed upper edge in
    cell = cell * bins + idx;
  }
  return cell;
}

Vec GridOracle::center_of(int cell) const {
  Vec x(dim);
  for (int j = dim - 1; j >= 0; --j) {
    const int idx = cell % bins;
    cell /= bins;
    x[j] = lo + (idx + 0.5) * cell_width();
  }
  return x;
}

void GridOracle::validate() const {
  if (dim < 1 || dim > 2) throw ConfigError("grid: dim must be 1 or 2");
  if (bins < 2) throw ConfigError("grid: bins must be >= 2");
  if (!(hi > lo)) throw ConfigError("grid: box must be nonempty");
  if (static_cast<int>(density.size()) != n_cells()) {
    throw ConfigError("grid: density size does not match cell count");
  }
  double total = 0.0;
  for (const double p : density) {
    if (!(p >= 0.0)) throw ConfigError("grid: negative or non-finite density entry");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) throw ConfigError("grid: density must sum to 1");
}

GridOracle make_grid(int dim) {
  if (dim < 1 || dim > 2) throw ConfigError("grid: dim must be 1 or 2");
  GridOracle g;
  g.dim = dim;
  g.bins = dim == 1 ? 200 : 50;
  g.density.assign(static_cast<size_t>(g.n_cells()), 0.0);
  return g;
}

GridOracle histogram_oracle(const std::vector<Vec>& samples, int dim) {
  check_batch(samples, "histogram_oracle");
  GridOracle g = make_grid(dim);
  long inside = 0;
  for (const auto& x : samples) {
    const int cell = g.cell_of(x);
    if (cell >= 0) {
      g.density[static_cast<size_t>(cell)] += 1.0;
      ++inside;
    }
  }
  if (inside == 0) throw NumericalError("histogram_oracle: no sample lies inside the box");
  for (double& p : g.density) p /= static_cast<double>(inside);
  return g;
}

GridOracle reward_power_oracle(const RewardSpec& spec, double beta, int dim) {
  GridOracle g = make_grid(dim);
  double total = 0.0;
  for (int cell = 0; cell < g.n_cells(); ++cell) {
    const double mass = std::exp(beta * log_reward(spec, g.center_of(cell)));
    g.density[static_cast<size_t>(cell)] = mass;
    total += mass;
  }
  if (!(total > 0.0) || !std::isfinite(total)) {
    throw NumericalError("reward_power_oracle: reward mass vanishes or overflows on the grid");
  }
  for (double& p : g.density) p /= total;
  return g;
}

GridOracle build_target_oracle(const Policy& pretrained, const RewardSpec& spec, double beta,
                               const NoiseSchedule& schedule, int dim, long n_dense,
                               std::uint64_t seed) {
  if (dim < 1 || dim > 2) throw ConfigError("build_target_oracle: dim must be 1 or 2");
  if (n_dense < 100000) {
    throw ConfigError("build_target_oracle: n_dense must be >= 1e5 for a usable table");
  }
  GridOracle g = histogram_oracle(sample_terminals(pretrained, schedule, dim, n_dense, seed), dim);
  double total = 0.0;
  for (int cell = 0; cell < g.n_cells(); ++cell) {
    g.density[static_cast<size_t>(cell)] *=
        std::exp(beta * log_reward(spec, g.center_of(cell)));
    total += g.density[static_cast<size_t>(cell)];
  }
  if (!(total > 0.0) || !std::isfinite(total)) {
    throw NumericalError("build_target_oracle: tilted mass vanishes or overflows");
  }
  for (double& p : g.density) p /= total;
  return g;
}

double target_tv(const std::vector<Vec>& samples, const GridOracle& oracle) {
  check_batch(samples, "target_tv");
  oracle.validate();
  std::vector<double> hist(oracle.density.size(), 0.0);
  long outside = 0;
  for (const auto& x : samples) {
    const int cell = oracle.cell_of(x);
    if (cell >= 0) {
      hist[static_cast<size_t>(cell)] += 1.0;
    } else {
      ++outside;
    }
  }
  const double n = static_cast<double>(samples.size());
  double tv = static_cast<double>(outside) / n;  // oracle mass there is zero
  for (size_t i = 0; i < hist.size(); ++i) tv += std::abs(hist[i] / n - oracle.density[i]);
  return 0.5 * tv;
}

double tv_between(const GridOracle& a, const GridOracle& b) {
  a.validate();
  b.validate();
  if (a.dim != b.dim || a.bins != b.bins || a.lo != b.lo || a.hi != b.hi) {
    throw ConfigError("tv_between: mismatched grids");
  }
  double tv = 0.0;
  for (size_t i = 0; i < a.density.size(); ++i) tv += std::abs(a.density[i] - b.density[i]);
  return 0.5 * tv;
}

void export_metrics(const std::vector<MetricsRecord>& records, const std::string& path) {
  std::ostringstream out;
  out << kCsvHeader << '\n';
  char buf[512];
  for (const auto& r : records) {
    const double fields[] = {r.mean_reward, r.diversity,   r.prior_distance,
                             r.target_tv,   r.terminal_g_norm, r.loss_fwd,
                             r.loss_rev,    r.loss_terminal,   r.loss_reg};
    for (const double v : fields) {
      if (!std::isfinite(v)) throw ConfigError("export_metrics: non-finite metric value");
    }
    std::snprintf(buf, sizeof(buf),
                  "%ld,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g\n", r.step,
                  r.mean_reward, r.diversity, r.prior_distance, r.target_tv, r.terminal_g_norm,
                  r.loss_fwd, r.loss_rev, r.loss_terminal, r.loss_reg);
    out << buf;
  }
  std::ofstream file(path, std::ios::binary);
  if (!file) throw IoError("export_metrics: cannot open " + path);
  file << out.str();
  if (!file) throw IoError("export_metrics: write failed for " + path);
}

std::vector<MetricsRecord> import_metrics(const std::string& path) {
  std::ifstream file(path);
  if (!file) throw IoError("import_metrics: cannot open " + path);
  std::string line;
  if (!std::getline(file, line) || line != kCsvHeader) {
    throw IoError("import_metrics: bad header in " + path);
  }
  std::vector<MetricsRecord> records;
  while (std::getline(file, line)) {
    if (line.empty()) continue;
    MetricsRecord r;
    double* const fields[] = {&r.mean_reward, &r.diversity,   &r.prior_distance,
                              &r.target_tv,   &r.terminal_g_norm, &r.loss_fwd,
                              &r.loss_rev,    &r.loss_terminal,   &r.loss_reg};
    std::istringstream row(line);
    std::string tok;
    if (!std::getline(row, tok, ',')) throw IoError("import_metrics: short row");
    r.step = std::stol(tok);
    for (double* f : fields) {
      if (!std::getline(row, tok, ',')) throw IoError("import_metrics: short row");
      *f = std::stod(tok);
    }
    if (std::getline(row, tok, ',')) throw IoError("import_metrics: extra column");
    records.push_back(r);
  }
  return records;
}

}  // namespace ngfn
