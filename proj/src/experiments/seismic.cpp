#include <Eigen/Eigenvalues>
#include <cmath>

#include "common.hpp"
#include "diffem/coupling.hpp"
#include "diffem/error.hpp"
#include "diffem/solve.hpp"

namespace diffem::experiments {

namespace {

namespace fs = std::filesystem;

struct Setup {
  int n = 16;
  double T = 1.0;
  double frequency = 5.0;
  double amplitude = 100.0;
  double source_x = 0.5, source_y = 0.8, source_width = 0.05;
  double background = 1.5;
  double anomaly = 0.5, anomaly_x = 0.5, anomaly_y = 0.45, anomaly_width = 0.12;
  double cfl = 0.5;
  double dt = 0.0;  // 0: cfl * stability limit
};

Setup read_setup(Config& c) {
  Setup s;
  s.n = c.integer("n", s.n, 2, 128);
  s.T = c.real("T", s.T, 1e-6, 100.0);
  s.frequency = c.real("frequency", s.frequency, 1e-3, 1e3);
  s.amplitude = c.real("source_amplitude", s.amplitude, 0.0, 1e12);
  s.source_x = c.real("source_x", s.source_x, 0.0, 1.0);
  s.source_y = c.real("source_y", s.source_y, 0.0, 1.0);
  s.source_width = c.real("source_width", s.source_width, 1e-4, 1.0);
  s.background = c.real("background", s.background, 1e-3, 1e3);
  s.anomaly = c.real("anomaly", s.anomaly, -1e3, 1e3);
  s.anomaly_x = c.real("anomaly_x", s.anomaly_x, 0.0, 1.0);
  s.anomaly_y = c.real("anomaly_y", s.anomaly_y, 0.0, 1.0);
  s.anomaly_width = c.real("anomaly_width", s.anomaly_width, 1e-4, 1.0);
  s.cfl = c.real("cfl", s.cfl, 1e-3, 1.0);
  s.dt = c.real("dt", 0.0, 0.0, 10.0);
  return s;
}

double gaussian(const Point& p, double x, double y, double w) {
  const double r2 = (p.x - x) * (p.x - x) + (p.y - y) * (p.y - y);
  return std::exp(-r2 / (2 * w * w));
}

double ricker(double t, double f) {
  const double a = M_PI * M_PI * f * f * (t - 1.0 / f) * (t - 1.0 / f);
  return (1.0 - 2.0 * a) * std::exp(-a);
}

// phi_tt - div(c^2 grad phi) = r(t) g(x) on the unit square, phi = 0 on the
// left, right and bottom; the top is free and carries the receivers.
struct Wave {
  Setup s;
  MeshPtr mesh;
  SpacePtr V;
  FunctionPtr g;
  BCs bcs;
  double dt = 0.0;
  double dt_limit = 0.0;
  int steps = 0;

  Wave(const Setup& setup, double c_max) : s(setup) {
    mesh = unit_square_mesh(s.n, s.n);
    V = function_space(mesh, 1);
    const double w = s.source_width;
    g = std::make_shared<Function>(interpolate(
        [&](const Point& p) { return gaussian(p, s.source_x, s.source_y, w) / (2 * M_PI * w * w); }, V));
    bcs = {DirichletBC(V, "left", 0.0), DirichletBC(V, "right", 0.0), DirichletBC(V, "bottom", 0.0)};

    // Central differences are stable for dt < 2 / omega_max with omega_max^2 the
    // largest eigenvalue of K v = lambda M v on the free dofs.
    PauseScope pause;
    auto u = trial_function(V), v = test_function(V);
    const Eigen::MatrixXd M = to_dense(assemble_matrix(inner(u, v) * dx));
    const Eigen::MatrixXd K = to_dense(assemble_matrix(c_max * c_max * inner(grad(u), grad(v)) * dx));
    std::vector<char> fixed(V->dof_count(), 0);
    for (const auto& bc : bcs) {
      for (int d : bc.dofs()) fixed[d] = 1;
    }
    std::vector<int> free;
    for (int i = 0; i < V->dof_count(); ++i) {
      if (!fixed[i]) free.push_back(i);
    }
    Eigen::MatrixXd Mf(free.size(), free.size()), Kf(free.size(), free.size());
    for (std::size_t i = 0; i < free.size(); ++i) {
      for (std::size_t j = 0; j < free.size(); ++j) {
        Mf(i, j) = M(free[i], free[j]);
        Kf(i, j) = K(free[i], free[j]);
      }
    }
    const double lmax = Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd>(Kf, Mf, Eigen::EigenvaluesOnly)
                            .eigenvalues()
                            .maxCoeff();
    dt_limit = 2.0 / std::sqrt(lmax);
    dt = s.dt > 0.0 ? s.dt : s.cfl * dt_limit;
    if (dt >= dt_limit) {
      config_error("dt = " + format_double(dt) + " violates the CFL limit " + format_double(dt_limit));
    }
    steps = static_cast<int>(std::ceil(s.T / dt));
  }

  Function true_speed() const {
    Function c = interpolate(
        [&](const Point& p) { return s.background + s.anomaly * gaussian(p, s.anomaly_x, s.anomaly_y, s.anomaly_width); },
        V);
    c.name = "c_true";
    return c;
  }

  // Time stepping; returns the states phi^1..phi^steps and, when `obs` is given,
  // the misfit 1/2 sum_n int_top (phi^n - obs^n)^2 ds.
  Scalar run(const FunctionPtr& c, const std::vector<Eigen::VectorXd>* obs, std::vector<Eigen::VectorXd>* states) const {
    auto prev = make_function(V), cur = make_function(V);
    auto u = trial_function(V), v = test_function(V);
    Scalar J = 0.0;
    for (int k = 0; k < steps; ++k) {
      auto next = make_function(V, "phi");
      const double r = s.amplitude * ricker(k * dt, s.frequency);
      const Form L = inner(2.0 * Expr(cur) - Expr(prev), v) * dx -
                     (dt * dt) * (Expr(c) * Expr(c)) * inner(grad(cur), grad(v)) * dx + (dt * dt * r) * inner(g, v) * dx;
      solve(inner(u, v) * dx, L, next, bcs);
      if (states) states->push_back(next->coeffs());
      if (obs) {
        auto o = std::make_shared<Function>(V, (*obs)[k]);
        const Scalar m = assemble_scalar(0.5 * inner(next - Expr(o), next - Expr(o)) * ds("top"));
        J = k == 0 ? m : J + m;
      }
      prev = cur;
      cur = next;
    }
    return J;
  }
};

MLPParams load_regulariser(const fs::path& p) {
  return mlp_from_json(Json::parse(read_text(p, "seismic regulariser checkpoint")).at("model").dump());
}

Json pretrain(const RunContext& ctx) {
  Config c(ctx.config);
  const int n = c.integer("n", 16, 2, 128);
  const int samples = c.integer("samples", 256, 1, 1000000);
  const int epochs = c.integer("epochs", 200, 0, 1000000);
  const int batch = c.integer("batch_size", 32, 1, 1000000);
  const double lr = c.real("lr", 1e-3, 0.0, 10.0);
  const double noise = c.real("noise", 0.05, 0.0, 10.0);
  const double background = c.real("background", 1.5, 1e-3, 1e3);
  const std::vector<int> hidden = c.integers("hidden", {64}, 1, 100000);
  const RandomFieldSpec spec = read_field_spec(c, "field", {4, 2.0, 0.5});
  c.finish();

  auto V = function_space(unit_square_mesh(n, n), 1);
  const int dofs = V->dof_count();
  std::mt19937_64 rng(stream_seed(ctx.seed, "seismic.pretrain"));
  std::normal_distribution<double> normal;
  Eigen::MatrixXd X(samples, dofs), Y(samples, dofs);
  double noise_energy = 0.0;
  for (int i = 0; i < samples; ++i) {
    const Eigen::VectorXd clean = Eigen::VectorXd::Constant(dofs, background) + random_sine_field(spec, V, rng);
    Y.row(i) = clean.transpose();
    for (int k = 0; k < dofs; ++k) {
      const double e = noise * normal(rng);
      X(i, k) = clean[k] + e;
      noise_energy += e * e / samples;
    }
  }
  // Denoiser: N(c) ~ the smooth field underlying c.
  std::vector<int> sizes{dofs};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(dofs);
  MLPParams p = mlp_init(sizes, Activation::Tanh, stream_seed(ctx.seed, "seismic.init"));
  p.layers.back().b.setConstant(background);
  AdamState adam;
  adam.lr = lr;
  std::vector<int> order(samples);
  for (int i = 0; i < samples; ++i) order[i] = i;
  std::vector<std::vector<double>> history;
  auto mse = [&] { return (mlp_forward(p, X) - Y).squaredNorm() / samples; };
  const double initial = mse();
  for (int e = 0; e < epochs; ++e) {
    std::shuffle(order.begin(), order.end(), rng);
    for (int start = 0; start < samples; start += batch) {
      const int m = std::min(batch, samples - start);
      Eigen::MatrixXd xb(m, dofs), yb(m, dofs);
      for (int b = 0; b < m; ++b) {
        xb.row(b) = X.row(order[start + b]);
        yb.row(b) = Y.row(order[start + b]);
      }
      const Eigen::MatrixXd w = 2.0 * (mlp_forward(p, xb) - yb) / m;
      adam_step(p, mlp_vjp(p, xb, w).dtheta, adam);
    }
    const double loss = mse();
    if (!std::isfinite(loss)) fail(ErrorKind::TrainingFailure, "non-finite pretraining loss");
    history.push_back({double(e + 1), loss});
  }
  Json ck;
  ck["model"] = Json::parse(mlp_to_json(p));
  ck["n"] = n;
  write_text(ctx.out / "checkpoint.json", ck.dump(2) + "\n");
  write_csv(ctx.out / "history.csv", {"epoch", "mse"}, history);
  Json m;
  m["samples"] = samples;
  m["epochs"] = epochs;
  m["mse_initial"] = initial;
  m["mse_final"] = history.empty() ? initial : history.back()[1];
  m["noise_energy"] = noise_energy;
  write_metrics(ctx, m);
  return m;
}

Json invert(const RunContext& ctx) {
  Config c(ctx.config);
  Setup s = read_setup(c);
  const std::string reg = c.text("regulariser", "tikhonov", {"none", "tikhonov", "ml"});
  const double alpha = c.real("alpha", 1e-3, 0.0, 1e6);
  const int maxiter = c.integer("maxiter", 20, 0, 100000);
  const double noise = c.real("noise", 0.0, 0.0, 10.0);
  const fs::path ckpt = c.text("regulariser_checkpoint", (ctx.out / "checkpoint.json").string());
  const bool preflight = c.flag("taylor", true);
  c.finish();

  // Stability margin for speeds the optimiser may visit above the true maximum.
  const double c_max = 1.2 * std::max(s.background, s.background + s.anomaly);
  const Wave wave(s, c_max);
  const Function c_true = wave.true_speed();

  std::vector<Eigen::VectorXd> obs;
  {
    PauseScope pause;
    wave.run(std::make_shared<Function>(c_true), nullptr, &obs);
  }
  if (noise > 0.0) {
    std::mt19937_64 rng(stream_seed(ctx.seed, "seismic.noise"));
    std::normal_distribution<double> normal;
    double peak = 0.0;
    for (const auto& o : obs) peak = std::max(peak, o.cwiseAbs().maxCoeff());
    for (auto& o : obs) {
      for (int k = 0; k < o.size(); ++k) o[k] += noise * peak * normal(rng);
    }
  }

  std::unique_ptr<MLOperator> N;
  if (reg == "ml") {
    const MLPParams p = load_regulariser(ckpt);
    if (p.input_size() != wave.V->dof_count()) config_error("regulariser checkpoint does not match the mesh");
    N = std::make_unique<MLOperator>(ml_operator(p, wave.V, ApplicationMode::GlobalVector, "R"));
  }

  auto c0 = std::make_shared<Function>(wave.V, Eigen::VectorXd::Constant(wave.V->dof_count(), s.background));
  c0->name = "c";
  auto tape = std::make_shared<Tape>();
  Scalar J;
  {
    TapeScope scope(*tape);
    J = wave.run(c0, &obs, nullptr);
    if (reg == "tikhonov") J = J + assemble_scalar(0.5 * alpha * inner(grad(c0), grad(c0)) * dx);
    if (reg == "ml") {
      const Expr r = Expr(c0) - (*N)(Expr(c0));
      J = J + assemble_scalar(0.5 * alpha * inner(r, r) * dx);
    }
  }
  ReducedFunctional rf(tape, var(*tape, J), {var(*tape, *c0)});

  Json m;
  m["regulariser"] = reg;
  m["alpha"] = alpha;
  m["steps"] = wave.steps;
  m["dt"] = wave.dt;
  m["dt_limit"] = wave.dt_limit;
  m["misfit_at_truth"] = 0.0;
  {
    // Misfit of the true speed against its own data (zero without noise).
    PauseScope pause;
    m["misfit_at_truth"] = wave.run(std::make_shared<Function>(c_true), &obs, nullptr).value;
  }
  if (preflight) {
    auto dm = std::make_shared<Function>(interpolate(
        [](const Point& p) { return 0.1 * std::sin(M_PI * p.x) * std::sin(2 * M_PI * p.y) + 0.05; }, wave.V));
    const TaylorResult r = taylor_test(rf, c0->coeffs(), dm->coeffs());
    m["taylor_order"] = r.order;
    if (!(r.order >= 1.9)) fail(ErrorKind::NumericalFailure, "Taylor preflight failed");
    rf({c0->coeffs()});
  }

  MinimizeOptions opt;
  opt.maxiter = maxiter;
  const MinimizeResult res = minimize(rf, opt);
  const double J0 = res.objective.front(), J1 = res.objective.back();
  if (!std::isfinite(J1)) fail(ErrorKind::NumericalFailure, "non-finite objective");
  Function c_rec(wave.V, res.x);
  c_rec.name = "c_recovered";
  Function c_init(wave.V, c0->coeffs());
  c_init.name = "c_initial";
  std::vector<std::vector<double>> history;
  for (std::size_t k = 0; k < res.objective.size(); ++k) history.push_back({double(k), res.objective[k]});
  write_csv(ctx.out / "history.csv", {"iteration", "objective"}, history);
  write_fields(ctx, "velocity", {&c_true, &c_init, &c_rec});

  m["objective_initial"] = J0;
  m["objective_final"] = J1;
  m["objective_reduction"] = 1.0 - J1 / J0;
  m["iterations"] = res.iterations;
  m["evaluations"] = res.evaluations;
  m["velocity_error_initial"] = norm(Function(wave.V, c0->coeffs() - c_true.coeffs()), NormKind::L2);
  m["velocity_error_final"] = norm(Function(wave.V, res.x - c_true.coeffs()), NormKind::L2);
  write_metrics(ctx, m);
  return m;
}

}  // namespace

Json seismic(const std::string& subcommand, const RunContext& ctx) {
  if (subcommand == "pretrain") return pretrain(ctx);
  if (subcommand == "invert") return invert(ctx);
  config_error("seismic has no subcommand '" + subcommand + "'");
}

}  // namespace diffem::experiments
