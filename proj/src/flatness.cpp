#include "flatmin/flatness.hpp"

#include "flatmin/model.hpp"

#include <json.hpp>

#include <charconv>
#include <cmath>
#include <cstring>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace flatmin {

double sq_distance(const WeightMatrix& w, const WeightMatrix& wprime) {
  if (w.rows() != wprime.rows() || w.cols() != wprime.cols())
    throw std::invalid_argument("sq_distance: dimension mismatch");
  return 0.5 * (wprime - w).squaredNorm();
}

std::string weights_hash(const WeightMatrix& w) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const auto* bytes = reinterpret_cast<const unsigned char*>(w.data());
  for (std::size_t k = 0; k < static_cast<std::size_t>(w.size()) * sizeof(double); ++k) {
    h ^= bytes[k];
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace {

void check_grid(const std::vector<double>& grid, bool allow_zero_start) {
  if (grid.empty()) throw std::invalid_argument("empty flatness grid");
  for (std::size_t j = 0; j < grid.size(); ++j) {
    if (!std::isfinite(grid[j]) || grid[j] < 0.0 || (!allow_zero_start && grid[j] <= 0.0))
      throw std::invalid_argument("invalid flatness grid value");
    if (j > 0 && !(grid[j] > grid[j - 1])) throw std::invalid_argument("flatness grid must be strictly increasing");
  }
}

ErrorFn committee_error(const LabeledSet& data) {
  if (data.empty()) throw std::invalid_argument("empty dataset");
  return [&data](const WeightMatrix& w) { return train_error(w, data); };
}

}  // namespace

FlatnessProfile local_energy_profile(const WeightMatrix& w, const LabeledSet& data,
                                     const std::vector<double>& sigma_grid,
                                     std::size_t samples_per_point, std::uint64_t seed) {
  return local_energy_profile(w, committee_error(data), sigma_grid, samples_per_point, seed);
}

FlatnessProfile local_energy_profile(const WeightMatrix& w, const ErrorFn& error,
                                     const std::vector<double>& sigma_grid,
                                     std::size_t samples_per_point, std::uint64_t seed) {
  check_grid(sigma_grid, true);
  if (samples_per_point == 0) throw std::invalid_argument("samples_per_point must be >= 1");
  FlatnessProfile prof;
  prof.kind = AbscissaKind::Sigma;
  prof.reference_error = error(w);
  prof.reference_hash = weights_hash(w);

  for (std::size_t j = 0; j < sigma_grid.size(); ++j) {
    const double sigma = sigma_grid[j];
    ProfilePoint pt;
    pt.abscissa = sigma;
    pt.samples = samples_per_point;
    if (sigma == 0.0) {
      prof.points.push_back(pt);
      continue;
    }
    double sum = 0.0;
    double sum_sq = 0.0;
    WeightMatrix perturbed(w.rows(), w.cols());
    for (std::size_t k = 0; k < samples_per_point; ++k) {
      Rng rng(derive_seed(seed, j * samples_per_point + k));
      std::normal_distribution<double> normal;
      for (Eigen::Index i = 0; i < w.size(); ++i)
        perturbed.data()[i] = w.data()[i] * (1.0 + sigma * normal(rng));
      const double delta = error(perturbed) - prof.reference_error;
      sum += delta;
      sum_sq += delta * delta;
    }
    const double s = static_cast<double>(samples_per_point);
    pt.mean = sum / s;
    if (samples_per_point > 1) {
      const double var = std::max(0.0, (sum_sq - s * pt.mean * pt.mean) / (s - 1.0));
      pt.std_error = std::sqrt(var / s);
    }
    prof.points.push_back(pt);
  }
  return prof;
}

WeightMatrix sample_in_ball(const WeightMatrix& center, double d, Rng& rng) {
  if (!(d > 0.0)) throw std::invalid_argument("ball size d must be positive");
  std::normal_distribution<double> normal;
  WeightMatrix dir(center.rows(), center.cols());
  double norm_sq = 0.0;
  do {
    for (Eigen::Index i = 0; i < dir.size(); ++i) dir.data()[i] = normal(rng);
    norm_sq = dir.squaredNorm();
  } while (norm_sq == 0.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const double m = static_cast<double>(center.size());
  const double radius = std::sqrt(2.0 * d) * std::pow(unif(rng), 1.0 / m);
  return center + dir * (radius / std::sqrt(norm_sq));
}

ProfilePoint entropy_point(double d, std::size_t hits, std::size_t samples, double params) {
  if (samples == 0) throw std::invalid_argument("entropy point needs samples");
  ProfilePoint pt;
  pt.abscissa = d;
  pt.samples = samples;
  const double s = static_cast<double>(samples);
  if (hits == 0) {
    pt.censored = true;
    pt.mean = std::log(1.0 / (s + 1.0)) / params;
    return pt;
  }
  const double p = static_cast<double>(hits) / s;
  pt.mean = std::log(p) / params;
  pt.std_error = std::sqrt(p * (1.0 - p) / s) / (params * p);
  return pt;
}

FlatnessProfile local_entropy_mc(const WeightMatrix& w, const LabeledSet& data,
                                 const std::vector<double>& d_grid, std::size_t samples_per_point,
                                 std::uint64_t seed) {
  return local_entropy_mc(w, committee_error(data), d_grid, samples_per_point, seed);
}

FlatnessProfile local_entropy_mc(const WeightMatrix& w, const ErrorFn& error,
                                 const std::vector<double>& d_grid, std::size_t samples_per_point,
                                 std::uint64_t seed) {
  check_grid(d_grid, false);
  if (samples_per_point == 0) throw std::invalid_argument("samples_per_point must be >= 1");
  FlatnessProfile prof;
  prof.kind = AbscissaKind::SquaredDistance;
  prof.reference_error = error(w);
  prof.reference_hash = weights_hash(w);
  const double params = static_cast<double>(w.size());
  for (std::size_t j = 0; j < d_grid.size(); ++j) {
    std::size_t hits = 0;
    for (std::size_t k = 0; k < samples_per_point; ++k) {
      Rng rng(derive_seed(seed, j * samples_per_point + k));
      if (error(sample_in_ball(w, d_grid[j], rng)) <= prof.reference_error) ++hits;
    }
    prof.points.push_back(entropy_point(d_grid[j], hits, samples_per_point, params));
  }
  return prof;
}

WeightMatrix gibbs_mean_oracle(const QuadraticLoss& loss, const WeightMatrix& w, double beta,
                               double gamma) {
  if (!(beta > 0.0) || !(gamma > 0.0)) throw std::invalid_argument("beta and gamma must be positive");
  if (loss.a < 0.0) throw std::invalid_argument("quadratic curvature must be non-negative");
  return w * (gamma / (loss.a + gamma));
}

WeightMatrix gibbs_mean_metropolis(const QuadraticLoss& loss, const WeightMatrix& w, double beta,
                                   double gamma, std::size_t steps, Rng& rng) {
  if (!(beta > 0.0) || !(gamma > 0.0)) throw std::invalid_argument("beta and gamma must be positive");
  auto energy = [&](const WeightMatrix& v) {
    return beta * (0.5 * loss.a * v.squaredNorm() + gamma * sq_distance(v, w));
  };
  const double step = 2.4 / std::sqrt(beta * (loss.a + gamma) * static_cast<double>(w.size()));
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  WeightMatrix cur = w;
  double e_cur = energy(cur);
  WeightMatrix acc = WeightMatrix::Zero(w.rows(), w.cols());
  const std::size_t burn = steps / 10;
  WeightMatrix prop(w.rows(), w.cols());
  for (std::size_t s = 0; s < steps + burn; ++s) {
    for (Eigen::Index i = 0; i < prop.size(); ++i) prop.data()[i] = cur.data()[i] + step * normal(rng);
    const double e_prop = energy(prop);
    if (e_prop <= e_cur || unif(rng) < std::exp(e_cur - e_prop)) {
      cur = prop;
      e_cur = e_prop;
    }
    if (s >= burn) acc += cur;
  }
  return acc / static_cast<double>(steps);
}

Eigen::MatrixXd replica_precision_from_local_entropy(const QuadraticLoss& loss, double beta,
                                                     double gamma, int replicas) {
  if (replicas < 1) throw std::invalid_argument("need at least one replica");
  const int y = replicas;
  // Joint precision over (w^1..w^y, w): beta [sum_a a/2 (w^a)^2 + gamma/2 sum_a (w^a - w)^2].
  Eigen::MatrixXd joint = Eigen::MatrixXd::Zero(y + 1, y + 1);
  for (int a = 0; a < y; ++a) {
    joint(a, a) = beta * (loss.a + gamma);
    joint(a, y) = joint(y, a) = -beta * gamma;
  }
  joint(y, y) = beta * gamma * y;
  const Eigen::MatrixXd rr = joint.topLeftCorner(y, y);
  const Eigen::VectorXd rw = joint.topRightCorner(y, 1);
  return rr - rw * rw.transpose() / joint(y, y);
}

Eigen::MatrixXd replicated_loss_precision(const QuadraticLoss& loss, double beta, double gamma,
                                          int replicas) {
  if (replicas < 1) throw std::invalid_argument("need at least one replica");
  const int y = replicas;
  const Eigen::MatrixXd eye = Eigen::MatrixXd::Identity(y, y);
  const Eigen::MatrixXd center = Eigen::MatrixXd::Constant(y, y, 1.0 / y);
  // d(w^a, center) summed over a is (1/2) w^T (I - 11^T / y) w.
  return beta * (loss.a * eye + gamma * (eye - center));
}

FlatnessProfile average_profiles(const std::vector<FlatnessProfile>& profiles) {
  if (profiles.empty()) throw std::invalid_argument("nothing to average");
  FlatnessProfile out;
  out.kind = profiles.front().kind;
  const std::size_t n = profiles.size();
  const std::size_t grid = profiles.front().points.size();
  double ref = 0.0;
  for (const auto& p : profiles) {
    if (p.kind != out.kind || p.points.size() != grid) throw std::invalid_argument("profiles do not share a grid");
    ref += p.reference_error;
  }
  out.reference_error = ref / static_cast<double>(n);
  out.reference_hash = "average-of-" + std::to_string(n);
  const double nn = static_cast<double>(n);
  for (std::size_t j = 0; j < grid; ++j) {
    ProfilePoint pt;
    pt.abscissa = profiles.front().points[j].abscissa;
    double mean = 0.0;
    double mc_var = 0.0;
    for (const auto& p : profiles) {
      if (p.points[j].abscissa != pt.abscissa) throw std::invalid_argument("profiles do not share a grid");
      mean += p.points[j].mean;
      mc_var += p.points[j].std_error * p.points[j].std_error;
      pt.samples += p.points[j].samples;
      pt.censored = pt.censored || p.points[j].censored;
    }
    mean /= nn;
    double between = 0.0;
    if (n > 1) {
      for (const auto& p : profiles) between += (p.points[j].mean - mean) * (p.points[j].mean - mean);
      between /= nn - 1.0;
    }
    pt.mean = mean;
    // Propagated per-record Monte-Carlo error plus the spread across records.
    pt.std_error = std::sqrt(mc_var / (nn * nn) + between / nn);
    out.points.push_back(pt);
  }
  return out;
}

std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 17);
  return std::string(buf, res.ptr);
}

void write_profile_csv(const FlatnessProfile& profile, std::ostream& out) {
  out << "abscissa,mean,stderr,samples,censored\n";
  for (const auto& p : profile.points) {
    out << format_double(p.abscissa) << ',' << format_double(p.mean) << ','
        << format_double(p.std_error) << ',' << p.samples << ',' << (p.censored ? 1 : 0) << '\n';
  }
}

FlatnessProfile read_profile_csv(std::istream& in, AbscissaKind kind) {
  FlatnessProfile prof;
  prof.kind = kind;
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("empty profile CSV");
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 5) throw std::runtime_error("malformed profile CSV row: " + line);
    ProfilePoint pt;
    pt.abscissa = std::stod(cells[0]);
    pt.mean = std::stod(cells[1]);
    pt.std_error = std::stod(cells[2]);
    pt.samples = std::stoul(cells[3]);
    pt.censored = cells[4] == "1";
    prof.points.push_back(pt);
  }
  return prof;
}

std::string profile_to_json(const FlatnessProfile& profile) {
  nlohmann::json j;
  j["abscissa_kind"] = profile.kind == AbscissaKind::Sigma ? "sigma" : "squared-distance";
  j["reference_error"] = profile.reference_error;
  j["reference_hash"] = profile.reference_hash;
  j["points"] = nlohmann::json::array();
  for (const auto& p : profile.points) {
    j["points"].push_back({{"abscissa", p.abscissa},
                           {"mean", p.mean},
                           {"stderr", p.std_error},
                           {"samples", p.samples},
                           {"censored", p.censored}});
  }
  return j.dump(2);
}

std::vector<double> linspace(double lo, double hi, std::size_t count) {
  if (count == 0) return {};
  if (count == 1) return {lo};
  std::vector<double> out(count);
  for (std::size_t k = 0; k < count; ++k)
    out[k] = lo + (hi - lo) * static_cast<double>(k) / static_cast<double>(count - 1);
  return out;
}

std::vector<double> logspace(double lo, double hi, std::size_t count) {
  if (!(lo > 0.0) || !(hi > 0.0)) throw std::invalid_argument("logspace bounds must be positive");
  auto exps = linspace(std::log10(lo), std::log10(hi), count);
  for (auto& e : exps) e = std::pow(10.0, e);
  if (count > 0) {
    exps.front() = lo;
    exps.back() = count > 1 ? hi : lo;
  }
  return exps;
}

}  // namespace flatmin
