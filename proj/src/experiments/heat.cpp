#include <cmath>

#include "common.hpp"
#include "diffem/coupling.hpp"
#include "diffem/error.hpp"
#include "diffem/solve.hpp"

namespace diffem::experiments {

namespace {

namespace fs = std::filesystem;

struct Dataset {
  int n = 0;
  int n_train = 0;
  int n_test = 0;
  std::vector<Eigen::VectorXd> kappa;
  std::vector<Eigen::VectorXd> u_obs;
};

// -div(exp(kappa) grad u) = 1 with u = 0 on the boundary.
void forward_solve(const FunctionPtr& kappa, const FunctionPtr& u) {
  const SpacePtr& V = u->space();
  auto w = trial_function(V), v = test_function(V);
  solve(exp(Expr(kappa)) * inner(grad(w), grad(v)) * dx, inner(Expr(1.0), v) * dx, u, {DirichletBC(V, "", 0.0)});
}

// The two operators used in training: kappa -> u, and (kappa, u, kappa_exact, u_obs) -> loss.
struct HeatOperators {
  SpacePtr V;
  std::unique_ptr<FemOperator> solve;
  std::unique_ptr<FemOperator> loss;

  HeatOperators(int n, double alpha) {
    V = function_space(unit_square_mesh(n, n), 1);
    const Tensor zero = Tensor::vector(Eigen::VectorXd::Zero(V->dof_count()));
    {
      auto tape = std::make_shared<Tape>();
      Tensor k = zero;
      VarRef ck, out;
      {
        TapeScope s(*tape);
        auto kappa = std::make_shared<Function>(to_fem(k, V));
        ck = var(*tape, k);
        auto u = make_function(V, "u");
        forward_solve(kappa, u);
        out = var(*tape, *u);
      }
      solve = std::make_unique<FemOperator>(std::make_shared<ReducedFunctional>(tape, out, std::vector<VarRef>{ck}));
    }
    {
      auto tape = std::make_shared<Tape>();
      std::vector<Tensor> in(4, zero);
      std::vector<VarRef> refs;
      Scalar L;
      {
        TapeScope s(*tape);
        std::vector<FunctionPtr> f;
        for (Tensor& t : in) {
          f.push_back(std::make_shared<Function>(to_fem(t, V)));
          refs.push_back(var(*tape, t));
        }
        L = assemble_scalar(0.5 * (inner(f[0] - f[2], f[0] - f[2]) + alpha * inner(f[1] - f[3], f[1] - f[3])) * dx);
      }
      loss = std::make_unique<FemOperator>(std::make_shared<ReducedFunctional>(tape, var(*tape, L), refs));
    }
  }
};

struct Model {
  MLPParams mlp;
  Eigen::VectorXd input_mean;
  double input_scale = 1.0;

  Eigen::VectorXd input(const Eigen::VectorXd& u_obs) const { return (u_obs - input_mean) * input_scale; }
  Eigen::VectorXd predict(const Eigen::VectorXd& u_obs) const {
    return mlp_forward(mlp, Eigen::MatrixXd(input(u_obs).transpose())).row(0).transpose();
  }
};

struct SampleEval {
  double loss = 0.0;
  double relative = 0.0;  // ||kappa_theta - kappa||^2 / ||kappa||^2
  Eigen::VectorXd dtheta;
};

double l2_squared(const SpacePtr& V, const Eigen::VectorXd& c) { return std::pow(norm(Function(V, c), NormKind::L2), 2); }

SampleEval evaluate(HeatOperators& ops, const Model& m, const Eigen::VectorXd& kappa, const Eigen::VectorXd& u_obs,
                    bool gradient) {
  SampleEval r;
  const Eigen::VectorXd x = m.input(u_obs);
  const Tensor k = Tensor::vector(m.predict(u_obs));
  const Tensor u = ops.solve->forward({k});
  r.loss = ops.loss->forward({k, u, Tensor::vector(kappa), Tensor::vector(u_obs)}).data[0];
  if (!std::isfinite(r.loss)) fail(ErrorKind::TrainingFailure, "non-finite training loss");
  r.relative = l2_squared(ops.V, k.data - kappa) / l2_squared(ops.V, kappa);
  if (gradient) {
    const std::vector<Tensor> g = ops.loss->backward(Tensor::scalar(1.0));
    const Eigen::VectorXd dk = g[0].data + ops.solve->backward(g[1])[0].data;
    r.dtheta = mlp_vjp(m.mlp, Eigen::MatrixXd(x.transpose()), Eigen::MatrixXd(dk.transpose())).dtheta;
  }
  return r;
}

fs::path dataset_path(Config& c, const RunContext& ctx) {
  return c.text("dataset", (ctx.out / "dataset.json").string());
}

Dataset load_dataset(const fs::path& p) {
  const Json j = Json::parse(read_text(p, "heat dataset"));
  Dataset d;
  d.n = j.at("n").get<int>();
  d.n_train = j.at("n_train").get<int>();
  d.n_test = j.at("n_test").get<int>();
  for (const Json& k : j.at("kappa")) d.kappa.push_back(vector_from_json(k, "kappa"));
  for (const Json& u : j.at("u_obs")) d.u_obs.push_back(vector_from_json(u, "u_obs"));
  const std::size_t total = d.n_train + d.n_test;
  if (d.kappa.size() != total || d.u_obs.size() != total) config_error("heat dataset: sample count mismatch");
  const int dofs = (d.n + 1) * (d.n + 1);
  for (std::size_t i = 0; i < total; ++i) {
    if (d.kappa[i].size() != dofs || d.u_obs[i].size() != dofs) config_error("heat dataset: field size mismatch");
  }
  return d;
}

Json model_to_json(const Model& m, double alpha) {
  Json j;
  j["model"] = Json::parse(mlp_to_json(m.mlp));
  j["input_mean"] = to_json(m.input_mean);
  j["input_scale"] = m.input_scale;
  j["alpha"] = alpha;
  return j;
}

Model model_from_json(const Json& j) {
  Model m;
  m.mlp = mlp_from_json(j.at("model").dump());
  m.input_mean = vector_from_json(j.at("input_mean"), "input_mean");
  m.input_scale = j.at("input_scale").get<double>();
  return m;
}

Json gen(const RunContext& ctx) {
  Config c(ctx.config);
  const int n = c.integer("n", 12, 2, 64);
  const int n_train = c.integer("n_train", 64, 1, 100000);
  const int n_test = c.integer("n_test", 16, 1, 100000);
  const double noise = c.real("noise", 0.01, 0.0, 1.0);
  const RandomFieldSpec spec = read_field_spec(c, "kappa", {2, 2.0, 1.0});
  c.allow("dataset");
  c.finish();

  auto V = function_space(unit_square_mesh(n, n), 1);
  std::mt19937_64 rng(stream_seed(ctx.seed, "heat.gen"));
  std::normal_distribution<double> normal;
  Json kappas = Json::array(), observed = Json::array();
  double mean_linf = 0.0;
  FunctionPtr kappa0, u0, obs0;
  PauseScope pause;
  for (int i = 0; i < n_train + n_test; ++i) {
    auto kappa = std::make_shared<Function>(V, random_sine_field(spec, V, rng));
    auto u = make_function(V, "u");
    forward_solve(kappa, u);
    const double linf = u->coeffs().cwiseAbs().maxCoeff();
    Eigen::VectorXd obs = u->coeffs();
    for (int k = 0; k < obs.size(); ++k) obs[k] += noise * linf * normal(rng);
    mean_linf += linf / (n_train + n_test);
    kappas.push_back(to_json(kappa->coeffs()));
    observed.push_back(to_json(obs));
    if (i == 0) {
      kappa0 = kappa;
      u0 = u;
      obs0 = std::make_shared<Function>(V, obs);
    }
  }
  Json d;
  d["n"] = n;
  d["n_train"] = n_train;
  d["n_test"] = n_test;
  d["kappa"] = std::move(kappas);
  d["u_obs"] = std::move(observed);
  write_text(ctx.out / "dataset.json", d.dump() + "\n");

  kappa0->name = "kappa";
  obs0->name = "u_obs";
  write_fields(ctx, "sample0", {kappa0.get(), u0.get(), obs0.get()});
  Json m;
  m["n"] = n;
  m["n_train"] = n_train;
  m["n_test"] = n_test;
  m["noise"] = noise;
  m["mean_u_linf"] = mean_linf;
  write_metrics(ctx, m);
  return m;
}

Json train(const RunContext& ctx) {
  Config c(ctx.config);
  const fs::path path = dataset_path(c, ctx);
  const double alpha = c.real("alpha", 0.5, 0.0, 1e6);
  const int epochs = c.integer("epochs", 60, 0, 100000);
  const int batch = c.integer("batch_size", 8, 1, 100000);
  const double lr = c.real("lr", 1e-3, 0.0, 10.0);
  const std::vector<int> hidden = c.integers("hidden", {64}, 1, 100000);
  const Activation act = parse_activation(c.text("activation", "tanh", {"tanh", "relu"}));
  const bool preflight = c.flag("taylor", true);
  c.finish();

  const Dataset d = load_dataset(path);
  HeatOperators ops(d.n, alpha);
  const int dofs = ops.V->dof_count();

  Model m;
  std::vector<int> sizes{dofs};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(dofs);
  m.mlp = mlp_init(sizes, act, stream_seed(ctx.seed, "heat.init"));
  m.input_mean = Eigen::VectorXd::Zero(dofs);
  Eigen::VectorXd kappa_mean = Eigen::VectorXd::Zero(dofs);
  for (int i = 0; i < d.n_train; ++i) {
    m.input_mean += d.u_obs[i] / d.n_train;
    kappa_mean += d.kappa[i] / d.n_train;
  }
  double var = 0.0;
  for (int i = 0; i < d.n_train; ++i) var += (d.u_obs[i] - m.input_mean).squaredNorm() / (d.n_train * dofs);
  m.input_scale = var > 0.0 ? 1.0 / std::sqrt(var) : 1.0;
  m.mlp.layers.back().b = kappa_mean;

  Json metrics;
  PauseScope pause;
  if (preflight) {
    // Loss of the first sample as a function of theta, through both operators.
    const Eigen::VectorXd theta0 = m.mlp.flatten();
    auto J = [&](const Eigen::VectorXd& th) {
      Model mm = m;
      mm.mlp.unflatten(th);
      return evaluate(ops, mm, d.kappa[0], d.u_obs[0], false).loss;
    };
    const Eigen::VectorXd g = evaluate(ops, m, d.kappa[0], d.u_obs[0], true).dtheta;
    std::mt19937_64 rng(stream_seed(ctx.seed, "heat.taylor"));
    std::normal_distribution<double> normal;
    Eigen::VectorXd dm(theta0.size());
    for (int i = 0; i < dm.size(); ++i) dm[i] = normal(rng);
    dm *= 0.1 / dm.norm() * theta0.norm();
    const TaylorResult r = taylor_test(J, theta0, g, dm);
    metrics["taylor_order"] = r.order;
    if (!(r.order >= 1.9)) fail(ErrorKind::NumericalFailure, "Taylor preflight failed");
  }

  AdamState adam;
  adam.lr = lr;
  std::vector<int> order(d.n_train);
  for (int i = 0; i < d.n_train; ++i) order[i] = i;
  std::mt19937_64 shuffle(stream_seed(ctx.seed, "heat.shuffle"));
  std::vector<std::vector<double>> history;
  double initial_R = 0.0;
  for (int i = 0; i < d.n_train; ++i) initial_R += evaluate(ops, m, d.kappa[i], d.u_obs[i], false).relative / d.n_train;
  for (int e = 0; e < epochs; ++e) {
    std::shuffle(order.begin(), order.end(), shuffle);
    double epoch_loss = 0.0, epoch_R = 0.0;
    for (int start = 0; start < d.n_train; start += batch) {
      const int stop = std::min(d.n_train, start + batch);
      Eigen::VectorXd g = Eigen::VectorXd::Zero(m.mlp.parameter_count());
      for (int b = start; b < stop; ++b) {
        const int i = order[b];
        const SampleEval r = evaluate(ops, m, d.kappa[i], d.u_obs[i], true);
        g += r.dtheta / (stop - start);
        epoch_loss += r.loss / d.n_train;
        epoch_R += r.relative / d.n_train;
      }
      adam_step(m.mlp, g, adam);
    }
    history.push_back({double(e + 1), epoch_loss, epoch_R});
  }

  double train_loss = 0.0, train_R = 0.0;
  for (int i = 0; i < d.n_train; ++i) {
    const SampleEval r = evaluate(ops, m, d.kappa[i], d.u_obs[i], false);
    train_loss += r.loss / d.n_train;
    train_R += r.relative / d.n_train;
  }
  bool decreasing = true;
  for (std::size_t e = 1; e < std::min<std::size_t>(10, history.size()); ++e) {
    decreasing = decreasing && history[e][1] < history[e - 1][1];
  }

  write_text(ctx.out / "checkpoint.json", model_to_json(m, alpha).dump(2) + "\n");
  write_csv(ctx.out / "history.csv", {"epoch", "loss", "R_train"}, history);
  metrics["epochs"] = epochs;
  metrics["alpha"] = alpha;
  metrics["parameters"] = m.mlp.parameter_count();
  metrics["R_train_initial"] = initial_R;
  metrics["R_train"] = train_R;
  metrics["loss_train"] = train_loss;
  metrics["loss_decreasing_first_10_epochs"] = decreasing;
  write_metrics(ctx, metrics);
  return metrics;
}

Json eval(const RunContext& ctx) {
  Config c(ctx.config);
  const fs::path path = dataset_path(c, ctx);
  const fs::path ckpt = c.text("checkpoint", (ctx.out / "checkpoint.json").string());
  c.finish();
  const Dataset d = load_dataset(path);
  const Json cj = Json::parse(read_text(ckpt, "heat checkpoint"));
  const Model m = model_from_json(cj);
  const double alpha = cj.at("alpha").get<double>();
  if (m.mlp.input_size() != (d.n + 1) * (d.n + 1)) config_error("checkpoint does not match the dataset mesh");
  HeatOperators ops(d.n, alpha);
  PauseScope pause;
  double R = 0.0, loss = 0.0;
  std::vector<std::vector<double>> rows;
  for (int t = 0; t < d.n_test; ++t) {
    const int i = d.n_train + t;
    const SampleEval r = evaluate(ops, m, d.kappa[i], d.u_obs[i], false);
    R += r.relative / d.n_test;
    loss += r.loss / d.n_test;
    rows.push_back({double(t), r.loss, r.relative});
  }
  const int first = d.n_train;
  Function k_exact(ops.V, d.kappa[first]), k_pred(ops.V, m.predict(d.u_obs[first])), obs(ops.V, d.u_obs[first]);
  k_exact.name = "kappa_exact";
  k_pred.name = "kappa_predicted";
  obs.name = "u_obs";
  write_fields(ctx, "test0", {&k_exact, &k_pred, &obs});
  write_csv(ctx.out / "history.csv", {"test_sample", "loss", "relative_error"}, rows);
  Json metrics;
  metrics["R_test"] = R;
  metrics["loss_test"] = loss;
  metrics["n_test"] = d.n_test;
  write_metrics(ctx, metrics);
  return metrics;
}

}  // namespace

Json heat(const std::string& subcommand, const RunContext& ctx) {
  if (subcommand == "gen") return gen(ctx);
  if (subcommand == "train") return train(ctx);
  if (subcommand == "eval") return eval(ctx);
  config_error("heat has no subcommand '" + subcommand + "'");
}

}  // namespace diffem::experiments
