#include "common.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "diffem/error.hpp"

namespace diffem::experiments {

namespace fs = std::filesystem;

void config_error(const std::string& what) { fail(ErrorKind::InvalidConfig, what); }

Config::Config(const Json& j) : j_(j.is_null() ? Json::object() : j) {
  if (!j_.is_object()) config_error("config must be a JSON object");
}

const Json& Config::get(const std::string& key) {
  used_.insert(key);
  return j_.at(key);
}

int Config::integer(const std::string& key, int fallback, int lo, int hi) {
  if (!j_.contains(key)) return fallback;
  const Json& v = get(key);
  if (!v.is_number_integer()) config_error("'" + key + "' must be an integer");
  const auto x = v.get<long long>();
  if (x < lo || x > hi) {
    config_error("'" + key + "' must lie in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
  }
  return static_cast<int>(x);
}

double Config::real(const std::string& key, double fallback, double lo, double hi) {
  if (!j_.contains(key)) return fallback;
  const Json& v = get(key);
  if (!v.is_number()) config_error("'" + key + "' must be a number");
  const double x = v.get<double>();
  if (!std::isfinite(x) || x < lo || x > hi) {
    config_error("'" + key + "' must lie in [" + format_double(lo) + ", " + format_double(hi) + "]");
  }
  return x;
}

std::string Config::text(const std::string& key, const std::string& fallback, const std::set<std::string>& allowed) {
  std::string s = fallback;
  if (j_.contains(key)) {
    const Json& v = get(key);
    if (!v.is_string()) config_error("'" + key + "' must be a string");
    s = v.get<std::string>();
  }
  if (!allowed.empty() && !allowed.count(s)) config_error("'" + key + "' has unsupported value '" + s + "'");
  return s;
}

std::vector<int> Config::integers(const std::string& key, const std::vector<int>& fallback, int lo, int hi) {
  if (!j_.contains(key)) return fallback;
  const Json& v = get(key);
  if (!v.is_array() || v.empty()) config_error("'" + key + "' must be a non-empty array of integers");
  std::vector<int> out;
  for (const Json& e : v) {
    if (!e.is_number_integer()) config_error("'" + key + "' must contain integers");
    const auto x = e.get<long long>();
    if (x < lo || x > hi) config_error("'" + key + "' entries out of range");
    out.push_back(static_cast<int>(x));
  }
  return out;
}

std::vector<double> Config::reals(const std::string& key, const std::vector<double>& fallback, double lo, double hi) {
  if (!j_.contains(key)) return fallback;
  const Json& v = get(key);
  if (!v.is_array() || v.empty()) config_error("'" + key + "' must be a non-empty array of numbers");
  std::vector<double> out;
  for (const Json& e : v) {
    if (!e.is_number()) config_error("'" + key + "' must contain numbers");
    const double x = e.get<double>();
    if (!std::isfinite(x) || x < lo || x > hi) config_error("'" + key + "' entries out of range");
    out.push_back(x);
  }
  return out;
}

bool Config::flag(const std::string& key, bool fallback) {
  if (!j_.contains(key)) return fallback;
  const Json& v = get(key);
  if (!v.is_boolean()) config_error("'" + key + "' must be a boolean");
  return v.get<bool>();
}

void Config::finish() const {
  for (const auto& [k, v] : j_.items()) {
    if (!used_.count(k)) config_error("unknown config key '" + k + "'");
  }
}

std::uint64_t stream_seed(std::uint64_t seed, const std::string& stream) {
  // FNV-1a over the stream name, mixed with the run seed (splitmix64 finaliser).
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : stream) h = (h ^ c) * 1099511628211ull;
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (h | 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

RandomFieldSpec read_field_spec(Config& c, const std::string& prefix, RandomFieldSpec fallback) {
  RandomFieldSpec s;
  s.n_modes = c.integer(prefix + "_modes", fallback.n_modes, 1, 32);
  s.decay = c.real(prefix + "_decay", fallback.decay, 0.0, 10.0);
  s.amplitude = c.real(prefix + "_amplitude", fallback.amplitude, 0.0, 10.0);
  return s;
}

Eigen::VectorXd random_sine_field(const RandomFieldSpec& spec, const SpacePtr& space, std::mt19937_64& rng) {
  require(space->components() == 1, "random_sine_field: scalar space required");
  std::normal_distribution<double> normal(0.0, 1.0);
  const int m = spec.n_modes;
  Eigen::MatrixXd a(m, m);
  for (int k = 1; k <= m; ++k) {
    for (int l = 1; l <= m; ++l) {
      a(k - 1, l - 1) = spec.amplitude * std::pow(double(k * k + l * l), -0.5 * spec.decay) * normal(rng);
    }
  }
  Eigen::VectorXd out(space->node_count());
  for (int n = 0; n < space->node_count(); ++n) {
    const Point& p = space->node_coords(n);
    double s = 0.0;
    for (int k = 1; k <= m; ++k) {
      for (int l = 1; l <= m; ++l) s += a(k - 1, l - 1) * std::sin(k * M_PI * p.x) * std::sin(l * M_PI * p.y);
    }
    out[n] = s;
  }
  return out;
}

void ensure_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) config_error("cannot create directory '" + p.string() + "': " + ec.message());
}

namespace {

void check_finite(const Json& j, const std::string& path) {
  if (j.is_number_float() && !std::isfinite(j.get<double>())) {
    fail(ErrorKind::NumericalFailure, "non-finite metric '" + path + "'");
  }
  if (j.is_object()) {
    for (const auto& [k, v] : j.items()) check_finite(v, path.empty() ? k : path + "." + k);
  } else if (j.is_array()) {
    for (std::size_t i = 0; i < j.size(); ++i) check_finite(j[i], path + "[" + std::to_string(i) + "]");
  }
}

}  // namespace

void write_text(const fs::path& p, const std::string& text) {
  ensure_dir(p.parent_path().empty() ? fs::path(".") : p.parent_path());
  std::ofstream f(p, std::ios::binary);
  if (!f) config_error("cannot write '" + p.string() + "'");
  f << text;
  if (!f) config_error("write failed for '" + p.string() + "'");
}

std::string read_text(const fs::path& p, const std::string& what) {
  std::ifstream f(p, std::ios::binary);
  if (!f) fail(ErrorKind::NotFound, what + " not found at '" + p.string() + "'");
  std::ostringstream s;
  s << f.rdbuf();
  return s.str();
}

void write_metrics(const RunContext& ctx, const Json& metrics) {
  check_finite(metrics, "");
  write_text(ctx.out / "metrics.json", metrics.dump(2) + "\n");
}

std::string format_double(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

void write_csv(const fs::path& p, const std::vector<std::string>& header, const std::vector<std::vector<double>>& rows) {
  std::string s;
  for (std::size_t i = 0; i < header.size(); ++i) s += (i ? "," : "") + header[i];
  s += "\n";
  for (const auto& row : rows) {
    for (std::size_t i = 0; i < row.size(); ++i) s += (i ? "," : "") + format_double(row[i]);
    s += "\n";
  }
  write_text(p, s);
}

void write_fields(const RunContext& ctx, const std::string& name, const std::vector<const Function*>& fields) {
  std::ostringstream s;
  write_field_csv(s, fields);
  write_text(ctx.out / "fields" / (name + ".csv"), s.str());
}

double l2_error(const Function& u, const ScalarField& exact) {
  const FunctionSpace& V = *u.space();
  require(V.components() == 1, "l2_error: scalar space required");
  const Mesh& mesh = V.mesh();
  const QuadratureRule& q = cell_rule(mesh.dim(), 4);
  const int nn = V.nodes_per_cell();
  std::vector<double> phi(nn), dphi(nn * 2);
  double s = 0.0;
  for (int c = 0; c < mesh.cell_count(); ++c) {
    const CellGeometry geo = cell_geometry(mesh, c);
    for (std::size_t k = 0; k < q.points.size(); ++k) {
      V.element().tabulate(q.points[k], phi.data(), dphi.data());
      double uh = 0.0;
      for (int a = 0; a < nn; ++a) uh += phi[a] * u.coeffs()[V.cell_node(c, a)];
      const double e = uh - exact(geo.map(q.points[k]));
      s += q.weights[k] * std::abs(geo.detJ) * e * e;
    }
  }
  return std::sqrt(s);
}

Json to_json(const Eigen::VectorXd& v) { return Json(std::vector<double>(v.data(), v.data() + v.size())); }

Eigen::VectorXd vector_from_json(const Json& j, const std::string& what) {
  if (!j.is_array()) config_error(what + " must be an array of numbers");
  Eigen::VectorXd v(j.size());
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) config_error(what + " must be an array of numbers");
    v[i] = j[i].get<double>();
  }
  return v;
}

Json run(const std::string& experiment, const std::string& subcommand, const RunContext& ctx) {
  auto only = [&](const std::string& sub) {
    if (subcommand != sub) config_error("experiment '" + experiment + "' has no subcommand '" + subcommand + "'");
  };
  if (experiment == "helmholtz") {
    only("adjoint");
    return helmholtz_adjoint(ctx);
  }
  if (experiment == "divfree") {
    only("loss");
    return divfree_loss(ctx);
  }
  if (experiment == "heat") return heat(subcommand, ctx);
  if (experiment == "constitutive") return constitutive(subcommand, ctx);
  if (experiment == "seismic") return seismic(subcommand, ctx);
  config_error("unknown experiment '" + experiment + "'");
}

int exit_code_for(const std::exception& e) {
  if (const auto* err = dynamic_cast<const Error*>(&e)) {
    switch (err->kind()) {
      case ErrorKind::InvalidConfig:
      case ErrorKind::InvalidArgument:
      case ErrorKind::NotFound:
        return 2;
      case ErrorKind::NumericalFailure:
      case ErrorKind::NonlinearDivergence:
      case ErrorKind::MaxIterations:
      case ErrorKind::TrainingFailure:
        return 3;
      default:
        return 1;
    }
  }
  if (dynamic_cast<const nlohmann::json::exception*>(&e)) return 2;
  return 1;
}

}  // namespace diffem::experiments
