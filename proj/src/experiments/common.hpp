#pragma once

#include <Eigen/Core>
#include <functional>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "diffem/experiments.hpp"
#include "diffem/fespace.hpp"
#include "diffem/neural.hpp"

namespace diffem::experiments {

/// Typed, range-checked view of a JSON config object. Unknown keys are
/// rejected by finish().
class Config {
 public:
  explicit Config(const Json& j);

  int integer(const std::string& key, int fallback, int lo, int hi);
  double real(const std::string& key, double fallback, double lo, double hi);
  std::string text(const std::string& key, const std::string& fallback, const std::set<std::string>& allowed = {});
  std::vector<int> integers(const std::string& key, const std::vector<int>& fallback, int lo, int hi);
  std::vector<double> reals(const std::string& key, const std::vector<double>& fallback, double lo, double hi);
  bool flag(const std::string& key, bool fallback);
  /// Accept a key without reading it here.
  void allow(const std::string& key) { used_.insert(key); }
  void finish() const;

 private:
  const Json& get(const std::string& key);
  Json j_;
  std::set<std::string> used_;
};

[[noreturn]] void config_error(const std::string& what);

/// Deterministic seed for a named stream.
std::uint64_t stream_seed(std::uint64_t seed, const std::string& stream);

struct RandomFieldSpec {
  int n_modes = 3;
  double decay = 2.0;
  double amplitude = 0.3;
};

RandomFieldSpec read_field_spec(Config& c, const std::string& prefix, RandomFieldSpec fallback);

/// sum_{k,l <= n_modes} a_kl sin(k pi x) sin(l pi y), a_kl ~ N(0, amplitude (k^2 + l^2)^(-decay/2)),
/// evaluated at the nodes of `space`.
Eigen::VectorXd random_sine_field(const RandomFieldSpec& spec, const SpacePtr& space, std::mt19937_64& rng);

void ensure_dir(const std::filesystem::path& p);
/// Writes metrics.json (sorted keys, two-space indent); every number must be finite.
void write_metrics(const RunContext& ctx, const Json& metrics);
void write_text(const std::filesystem::path& p, const std::string& text);
std::string read_text(const std::filesystem::path& p, const std::string& what);
/// CSV with a header row.
void write_csv(const std::filesystem::path& p, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows);
void write_fields(const RunContext& ctx, const std::string& name, const std::vector<const Function*>& fields);

Json to_json(const Eigen::VectorXd& v);
Eigen::VectorXd vector_from_json(const Json& j, const std::string& what);

/// ||u - exact||_L2 by a degree-4 cell rule (scalar spaces).
double l2_error(const Function& u, const ScalarField& exact);

/// Exact-decimal formatting for CSV and logs.
std::string format_double(double v);

}  // namespace diffem::experiments
