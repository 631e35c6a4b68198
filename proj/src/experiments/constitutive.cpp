#include <cmath>
#include <Eigen/Eigenvalues>
#include <limits>

#include "common.hpp"
#include "diffem/coupling.hpp"
#include "diffem/error.hpp"
#include "diffem/solve.hpp"

namespace diffem::experiments {

namespace {

namespace fs = std::filesystem;

// Units: mm, N, MPa.
constexpr double kLength = 38.09;
constexpr double kHeight = 4.64;
constexpr double kWidth = 4.64;
constexpr double kYoung = 142290.0;
constexpr double kPoisson = 0.27;
constexpr double kHalfSpan = 10.0;
constexpr double kHalfPatch = 1.0;
constexpr double kStrainScale = 1e-3;

// Plane-stress Hooke matrix in Voigt form (xx, yy, engineering xy).
Eigen::Matrix3d hooke() {
  const double c = kYoung / (1.0 - kPoisson * kPoisson);
  Eigen::Matrix3d C;
  C << c, c * kPoisson, 0.0, c * kPoisson, c, 0.0, 0.0, 0.0, c * (1.0 - kPoisson) / 2.0;
  return C;
}

Expr strain(const Expr& u) {
  const Expr g = grad(u);
  return as_vector({component(g, 0, 0), component(g, 1, 1), component(g, 0, 1) + component(g, 1, 0)});
}

struct Beam {
  MeshPtr mesh;
  SpacePtr V;  // P1 displacement
  SpacePtr S;  // cellwise-constant Voigt stress
  BCs bcs;
  int mid_dof = -1;  // u_y at mid-span, bottom
  double patch_area = 0.0;

  Beam(int nx, int ny) {
    if (nx % 2) config_error("nx must be even so that mid-span is a mesh node");
    auto base = rectangle_mesh(0.0, kLength, 0.0, kHeight, nx, ny);
    mesh = retag_facets(*base, "load", [](const Point& p) {
      return p.y > kHeight - 1e-9 && std::abs(p.x - kLength / 2) <= kHalfPatch;
    });
    V = function_space(mesh, 1, ValueShape::vector(2));
    S = function_space(mesh, 0, ValueShape::vector(3));
    auto nearest_bottom = [&](double x) {
      int best = -1;
      for (int n = 0; n < V->node_count(); ++n) {
        const Point& p = V->node_coords(n);
        if (std::abs(p.y) > 1e-12) continue;
        if (best < 0 || std::abs(p.x - x) < std::abs(V->node_coords(best).x - x)) best = n;
      }
      return V->node_coords(best);
    };
    const Point left = nearest_bottom(kLength / 2 - kHalfSpan), right = nearest_bottom(kLength / 2 + kHalfSpan);
    auto at = [](Point q) { return [q](const Point& p) { return p.x == q.x && p.y == q.y; }; };
    bcs = {DirichletBC::at_points(V, at(left), 0.0, 1), DirichletBC::at_points(V, at(right), 0.0, 1),
           DirichletBC::at_points(V, at(left), 0.0, 0)};
    for (int n = 0; n < V->node_count(); ++n) {
      const Point& p = V->node_coords(n);
      if (p.y == 0.0 && std::abs(p.x - kLength / 2) < 1e-9) mid_dof = 2 * n + 1;
    }
    PauseScope pause;
    patch_area = assemble_scalar(Expr(1.0) * ds_on(mesh, "load")).value * kWidth;
    if (!(patch_area > 0.0)) config_error("load patch contains no boundary facet; refine the mesh");
  }

  Form load(double force, const Expr& v) const {
    const double t = force / patch_area;
    return inner(as_vector({Expr(0.0), Expr(-t)}), v) * ds("load");
  }

  // Downward deflection at mid-span for the exact linear elastic model.
  double exact_deflection(double force) const {
    PauseScope pause;
    const Eigen::Matrix3d C = hooke();
    auto u = make_function(V);
    const Expr v = test_function(V), w = trial_function(V);
    const Expr e = strain(w);
    const Expr s = as_vector({C(0, 0) * e[0] + C(0, 1) * e[1], C(1, 0) * e[0] + C(1, 1) * e[1], C(2, 2) * e[2]});
    solve(inner(s, strain(v)) * dx, load(force, v), u, bcs);
    return -u->coeffs()[mid_dof];
  }
};

// sigma = s_sigma * N(eps(u) / s_eps), evaluated cellwise.
struct MLBeam {
  const Beam& beam;
  MLOperator N;
  std::vector<FunctionPtr> u;
  std::vector<std::unique_ptr<ReducedFunctional>> rf;
  std::vector<char> ok;

  MLBeam(const Beam& b, const MLPParams& mlp, const std::vector<double>& forces)
      : beam(b), N(ml_operator(mlp, b.S, ApplicationMode::PointwiseDof, "sigma")) {
    const double s_sigma = kYoung * kStrainScale;
    for (double F : forces) {
      auto tape = std::make_shared<Tape>();
      auto uf = make_function(b.V, "u");
      auto v = test_function(b.V);
      bool solved = true;
      {
        TapeScope s(*tape);
        const Expr sigma = s_sigma * N((1.0 / kStrainScale) * strain(uf));
        try {
          solve(inner(sigma, strain(v)) * dx - b.load(F, v), uf, b.bcs);
        } catch (const NonlinearDivergence&) {
          solved = false;
        }
      }
      ok.push_back(solved);
      rf.push_back(solved ? std::make_unique<ReducedFunctional>(tape, var(*tape, *uf),
                                                                std::vector<VarRef>{var(*tape, *N.params())})
                          : nullptr);
      u.push_back(uf);
    }
  }

  // Deflection (downward) at each force for parameters theta; NaN where Newton fails.
  double deflection(int i, const Eigen::VectorXd& theta) {
    if (!rf[i]) return std::nan("");
    try {
      return -(*rf[i])({theta}).data[beam.mid_dof];
    } catch (const NonlinearDivergence&) {
      return std::nan("");
    } catch (const Error& e) {
      if (e.kind() == ErrorKind::NumericalFailure) return std::nan("");
      throw;
    }
  }

  // d(deflection)/d(theta) at the point of the last evaluation of force i.
  Eigen::VectorXd deflection_gradient(int i) {
    Eigen::VectorXd seed = Eigen::VectorXd::Zero(beam.V->dof_count());
    seed[beam.mid_dof] = -1.0;
    return rf[i]->adjoint(seed)[0].data;
  }
};

struct Dataset {
  int nx = 0, ny = 0;
  std::vector<double> forces, deflections;
};

Dataset load_dataset(const fs::path& p) {
  const Json j = Json::parse(read_text(p, "constitutive dataset"));
  Dataset d;
  d.nx = j.at("nx").get<int>();
  d.ny = j.at("ny").get<int>();
  d.forces = j.at("forces").get<std::vector<double>>();
  d.deflections = j.at("deflections").get<std::vector<double>>();
  if (d.forces.empty() || d.forces.size() != d.deflections.size()) config_error("constitutive dataset is malformed");
  return d;
}

MLPParams exact_model() {
  MLPParams p = mlp_init({3, 3}, Activation::Tanh, 0);
  p.layers[0].W = hooke() / kYoung;
  p.layers[0].b.setZero();
  return p;
}

struct LossEval {
  double loss = 0.0;
  std::vector<double> deflection;
  int failed = 0;
};

LossEval mean_relative_error(MLBeam& m, const Dataset& d, const Eigen::VectorXd& theta) {
  LossEval r;
  int counted = 0;
  for (std::size_t i = 0; i < d.forces.size(); ++i) {
    const double delta = m.deflection(int(i), theta);
    r.deflection.push_back(delta);
    if (std::isnan(delta)) {
      ++r.failed;
      continue;
    }
    r.loss += std::abs(delta - d.deflections[i]) / std::abs(d.deflections[i]);
    ++counted;
  }
  r.loss = counted ? r.loss / counted : std::nan("");
  return r;
}

Json gen(const RunContext& ctx) {
  Config c(ctx.config);
  const int nx = c.integer("nx", 40, 2, 2000);
  const int ny = c.integer("ny", 4, 1, 500);
  const std::vector<double> forces =
      c.reals("forces", {10, 20, 30, 40, 50, 60, 70, 80, 90, 100}, -1e9, 1e9);
  c.allow("dataset");
  c.finish();
  for (double F : forces) {
    if (F == 0.0) config_error("forces must be non-zero");
  }
  const Beam beam(nx, ny);
  std::vector<double> delta;
  std::vector<std::vector<double>> rows;
  for (double F : forces) {
    delta.push_back(beam.exact_deflection(F));
    rows.push_back({F, delta.back()});
  }
  Json d;
  d["nx"] = nx;
  d["ny"] = ny;
  d["forces"] = forces;
  d["deflections"] = delta;
  write_text(ctx.out / "dataset.json", d.dump(2) + "\n");
  write_csv(ctx.out / "force_deflection.csv", {"force", "deflection"}, rows);
  Json m;
  m["nx"] = nx;
  m["ny"] = ny;
  m["forces"] = forces.size();
  m["compliance"] = delta.back() / forces.back();
  m["patch_area"] = beam.patch_area;
  write_metrics(ctx, m);
  return m;
}

fs::path dataset_path(Config& c, const RunContext& ctx) {
  return c.text("dataset", (ctx.out / "dataset.json").string());
}

MLPParams load_model(const fs::path& p) {
  return mlp_from_json(Json::parse(read_text(p, "constitutive checkpoint")).at("model").dump());
}

Json train(const RunContext& ctx) {
  Config c(ctx.config);
  const fs::path path = dataset_path(c, ctx);
  const int epochs = c.integer("epochs", 100, 0, 100000);
  const double lr = c.real("lr", 0.05, 0.0, 10.0);
  const double lr_final = c.real("lr_final", 1e-3, 0.0, 10.0);
  const std::string init = c.text("init", "random", {"random", "exact"});
  const std::vector<int> hidden = c.integers("hidden", {}, 1, 100000);
  const Activation act = parse_activation(c.text("activation", "tanh", {"tanh", "relu"}));
  const bool preflight = c.flag("taylor", true);
  c.finish();
  if (init == "exact" && !hidden.empty()) config_error("exact init needs a single linear layer (hidden = [])");

  const Dataset d = load_dataset(path);
  const Beam beam(d.nx, d.ny);
  MLPParams p;
  int redraws = 0;
  if (init == "exact") {
    p = exact_model();
  } else {
    std::vector<int> sizes{3};
    sizes.insert(sizes.end(), hidden.begin(), hidden.end());
    sizes.push_back(3);
    // Draws whose tangent at zero strain is not positive definite describe an
    // unstable material (singular or indefinite stiffness); redraw those.
    for (;; ++redraws) {
      p = mlp_init(sizes, act, stream_seed(ctx.seed, "constitutive.init." + std::to_string(redraws)));
      const Eigen::Matrix3d T = mlp_jacobian_input(p, Eigen::Vector3d::Zero());
      if (Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d>(0.5 * (T + T.transpose())).eigenvalues().minCoeff() > 0.0) break;
      if (redraws == 1000) fail(ErrorKind::TrainingFailure, "no stable random initialisation found");
    }
  }
  MLBeam m(beam, p, d.forces);
  Eigen::VectorXd theta = p.flatten();
  const int nf = static_cast<int>(d.forces.size());

  Json metrics;
  if (preflight) {
    // Deflection at the largest force as a function of theta, through Newton.
    const int last = nf - 1;
    const double J0 = m.deflection(last, theta);
    if (std::isnan(J0)) fail(ErrorKind::NumericalFailure, "Taylor preflight: Newton failed at the initial model");
    const Eigen::VectorXd g = m.deflection_gradient(last);
    std::mt19937_64 rng(stream_seed(ctx.seed, "constitutive.taylor"));
    std::normal_distribution<double> normal;
    Eigen::VectorXd dm(theta.size());
    for (int i = 0; i < dm.size(); ++i) dm[i] = normal(rng);
    dm *= 0.05 * std::max(1.0, theta.norm()) / dm.norm();
    const TaylorResult r = taylor_test([&](const Eigen::VectorXd& th) { return m.deflection(last, th); }, theta, g, dm);
    metrics["taylor_order"] = r.order;
    if (!(r.order >= 1.9)) fail(ErrorKind::NumericalFailure, "Taylor preflight failed");
  }

  AdamState adam;
  std::vector<std::vector<double>> history;
  int aborted = 0;
  for (int e = 0; e < epochs; ++e) {
    adam.lr = epochs > 1 ? lr * std::pow(lr_final / lr, double(e) / (epochs - 1)) : lr;
    Eigen::VectorXd g = Eigen::VectorXd::Zero(theta.size());
    double loss = 0.0;
    int counted = 0, failed = 0;
    for (int i = 0; i < nf; ++i) {
      const double delta = m.deflection(i, theta);
      if (std::isnan(delta)) {
        ++failed;
        continue;
      }
      const double scale = std::abs(d.deflections[i]);
      const double r = (delta - d.deflections[i]) / scale;
      loss += std::abs(r);
      if (r != 0.0) g += (r > 0 ? 1.0 : -1.0) / scale * m.deflection_gradient(i);
      ++counted;
    }
    if (counted == 0) fail(ErrorKind::TrainingFailure, "Newton failed for every force level");
    aborted += failed;
    loss /= counted;
    g /= counted;
    if (!std::isfinite(loss) || !g.allFinite()) fail(ErrorKind::TrainingFailure, "non-finite training loss");
    history.push_back({double(e), loss, double(failed)});
    adam_step(theta, g, adam);
  }

  const LossEval final_eval = mean_relative_error(m, d, theta);
  double max_rel = 0.0;
  for (int i = 0; i < nf; ++i) {
    const double rel = std::abs(final_eval.deflection[i] - d.deflections[i]) / std::abs(d.deflections[i]);
    max_rel = std::max(max_rel, std::isnan(rel) ? std::numeric_limits<double>::infinity() : rel);
  }
  p.unflatten(theta);
  Json ck;
  ck["model"] = Json::parse(mlp_to_json(p));
  write_text(ctx.out / "checkpoint.json", ck.dump(2) + "\n");
  write_csv(ctx.out / "history.csv", {"epoch", "loss", "failed_solves"}, history);

  metrics["init"] = init;
  metrics["epochs"] = epochs;
  metrics["init_redraws"] = redraws;
  metrics["parameters"] = p.parameter_count();
  if (!history.empty()) metrics["loss_epoch0"] = history.front()[1];
  metrics["loss_final"] = final_eval.loss;
  metrics["max_relative_error"] = max_rel;
  metrics["aborted_solves"] = aborted + final_eval.failed;
  write_metrics(ctx, metrics);
  return metrics;
}

Json eval(const RunContext& ctx) {
  Config c(ctx.config);
  const fs::path path = dataset_path(c, ctx);
  const fs::path ckpt = c.text("checkpoint", (ctx.out / "checkpoint.json").string());
  c.finish();
  const Dataset d = load_dataset(path);
  const Beam beam(d.nx, d.ny);
  MLPParams p = load_model(ckpt);
  if (p.input_size() != 3 || p.output_size() != 3) config_error("checkpoint is not a 3 -> 3 constitutive model");
  MLBeam m(beam, p, d.forces);
  const LossEval r = mean_relative_error(m, d, p.flatten());
  std::vector<std::vector<double>> rows;
  double max_rel = 0.0;
  for (std::size_t i = 0; i < d.forces.size(); ++i) {
    const double rel = std::abs(r.deflection[i] - d.deflections[i]) / std::abs(d.deflections[i]);
    max_rel = std::max(max_rel, std::isnan(rel) ? std::numeric_limits<double>::infinity() : rel);
    rows.push_back({d.forces[i], d.deflections[i], r.deflection[i], rel});
  }
  write_csv(ctx.out / "force_deflection.csv", {"force", "deflection_exp", "deflection_model", "relative_error"}, rows);

  // Cellwise stress at the largest force for the learned and the exact model.
  const int last = static_cast<int>(d.forces.size()) - 1;
  if (m.rf[last]) {
    PauseScope pause;
    auto u = std::make_shared<Function>((*m.rf[last])({p.flatten()}).to_function());
    const Expr e = (1.0 / kStrainScale) * strain(u);
    Function s_model = assemble_function(Form::bare(m.N(e)));
    Function s_exact = assemble_function(Form::bare(ml_operator(exact_model(), beam.S)(e)));
    s_model.mutable_coeffs() *= kYoung * kStrainScale;
    s_exact.mutable_coeffs() *= kYoung * kStrainScale;
    s_model.name = "stress_model";
    s_exact.name = "stress_exact";
    write_fields(ctx, "stress", {&s_model, &s_exact});
  }
  Json metrics;
  metrics["loss"] = r.loss;
  metrics["max_relative_error"] = max_rel;
  metrics["failed_solves"] = r.failed;
  write_metrics(ctx, metrics);
  return metrics;
}

}  // namespace

Json constitutive(const std::string& subcommand, const RunContext& ctx) {
  if (subcommand == "gen") return gen(ctx);
  if (subcommand == "train") return train(ctx);
  if (subcommand == "eval") return eval(ctx);
  config_error("constitutive has no subcommand '" + subcommand + "'");
}

}  // namespace diffem::experiments
