// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "diffem/assemble.hpp"
#include "diffem/coupling.hpp"
#include "diffem/error.hpp"
#include "diffem/experiments.hpp"
#include "diffem/solve.hpp"

using namespace diffem;
using experiments::Json;
using experiments::RunContext;
namespace fs = std::filesystem;

namespace {

const fs::path kRoot = fs::current_path() / "acceptance_out";

struct Outcome {
  bool pass = true;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& title, double limit_s, const std::function<Outcome()>& body) {
  const auto t0 = std::chrono::steady_clock::now();
  Outcome o;
  try {
    o = body();
  } catch (const std::exception& e) {
    o = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (secs > limit_s) {
    o.pass = false;
    o.detail += " (over time limit)";
  }
  if (!o.pass) ++failures;
  std::printf("%s %2d %s: %s [%.2f s / %.0f s]\n", o.pass ? "PASS" : "FAIL", id, title.c_str(), o.detail.c_str(), secs,
              limit_s);
  std::fflush(stdout);
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3g", v);
  return buf;
}

Eigen::VectorXd random_vector(Eigen::Index n, std::mt19937_64& rng) {
  std::normal_distribution<double> d;
  Eigen::VectorXd v(n);
  for (Eigen::Index i = 0; i < n; ++i) v[i] = d(rng);
  return v;
}

Json run(const std::string& exp, const std::string& sub, const std::string& dir, Json config, std::uint64_t seed = 0) {
  RunContext ctx;
  ctx.config = std::move(config);
  ctx.seed = seed;
  ctx.out = kRoot / dir;
  return experiments::run(exp, sub, ctx);
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p, std::ios::binary);
  std::stringstream s;
  s << f.rdbuf();
  return s.str();
}

std::vector<std::map<std::string, double>> read_csv(const fs::path& p) {
  std::ifstream f(p);
  std::string line;
  std::getline(f, line);
  std::vector<std::string> header;
  {
    std::stringstream s(line);
    std::string h;
    while (std::getline(s, h, ',')) header.push_back(h);
  }
  std::vector<std::map<std::string, double>> rows;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::stringstream s(line);
    std::string cell;
    std::map<std::string, double> row;
    for (const auto& h : header) {
      std::getline(s, cell, ',');
      row[h] = std::stod(cell);
    }
    rows.push_back(std::move(row));
  }
  return rows;
}

// 1. Exact assembly.

Outcome exact_assembly() {
  auto V = function_space(unit_interval_mesh(1), 1);
  auto u = trial_function(V), v = test_function(V);
  Eigen::Matrix2d mass, stiff;
  mass << 2.0 / 6.0, 1.0 / 6.0, 1.0 / 6.0, 2.0 / 6.0;
  stiff << 1, -1, -1, 1;
  const double em = (to_dense(assemble_matrix(inner(u, v) * dx)) - mass).cwiseAbs().maxCoeff();
  const double ek = (to_dense(assemble_matrix(inner(grad(u), grad(v)) * dx)) - stiff).cwiseAbs().maxCoeff();
  const double ea = std::abs(assemble_scalar(Expr(1.0) * dx_on(unit_square_mesh(7, 5))).value - 1.0);
  return {em <= 1e-14 && ek <= 1e-14 && ea <= 1e-12,
          "mass " + fmt(em) + ", stiffness " + fmt(ek) + ", area " + fmt(ea)};
}

// 2. Helmholtz P1 convergence with an error integral that shares no code with the library quadrature.

double helmholtz_exact(double x, double y) {
  const double k = 2.0 * M_PI * M_PI;
  return k / (1.0 + k) * std::sin(M_PI * x) * std::sin(M_PI * y);
}

// Each triangle is split into m^2 similar pieces, each integrated with the edge-midpoint rule.
double p1_l2_error(const Function& u) {
  const FunctionSpace& V = *u.space();
  const int m = 8;
  double total = 0.0;
  for (int c = 0; c < V.mesh().cell_count(); ++c) {
    Point p[3];
    double val[3];
    for (int k = 0; k < 3; ++k) {
      const int node = V.cell_node(c, k);
      p[k] = V.node_coords(node);
      val[k] = u.coeffs()[node];
    }
    const double area = 0.5 * std::abs((p[1].x - p[0].x) * (p[2].y - p[0].y) - (p[2].x - p[0].x) * (p[1].y - p[0].y));
    auto err2 = [&](double a, double b) {
      const double l0 = 1.0 - a - b;
      const double x = l0 * p[0].x + a * p[1].x + b * p[2].x;
      const double y = l0 * p[0].y + a * p[1].y + b * p[2].y;
      const double e = l0 * val[0] + a * val[1] + b * val[2] - helmholtz_exact(x, y);
      return e * e;
    };
    auto piece = [&](double a0, double b0, double a1, double b1, double a2, double b2) {
      return (err2(0.5 * (a0 + a1), 0.5 * (b0 + b1)) + err2(0.5 * (a1 + a2), 0.5 * (b1 + b2)) +
              err2(0.5 * (a0 + a2), 0.5 * (b0 + b2))) /
             3.0;
    };
    double sum = 0.0;
    const double h = 1.0 / m;
    for (int i = 0; i < m; ++i) {
      for (int j = 0; i + j < m; ++j) {
        sum += piece(i * h, j * h, (i + 1) * h, j * h, i * h, (j + 1) * h);
        if (i + j + 1 < m) sum += piece((i + 1) * h, j * h, (i + 1) * h, (j + 1) * h, i * h, (j + 1) * h);
      }
    }
    total += sum * area / (m * m);
  }
  return std::sqrt(total);
}

Function solve_p1_helmholtz(int n) {
  auto V = function_space(unit_square_mesh(n, n), 1);
  auto f = std::make_shared<Function>(interpolate(
      [](const Point& p) { return 2.0 * M_PI * M_PI * std::sin(M_PI * p.x) * std::sin(M_PI * p.y); }, V));
  auto u = make_function(V, "u");
  auto a = trial_function(V), v = test_function(V);
  solve(inner(a, v) * dx + inner(grad(a), grad(v)) * dx, inner(f, v) * dx, u, {DirichletBC(V, "", 0.0)});
  return *u;
}

Outcome helmholtz_convergence() {
  const double e8 = p1_l2_error(solve_p1_helmholtz(8));
  const double e16 = p1_l2_error(solve_p1_helmholtz(16));
  const double ratio = e8 / e16;
  return {ratio >= 3.6 && ratio <= 4.4, "e(1/8) " + fmt(e8) + ", e(1/16) " + fmt(e16) + ", ratio " + fmt(ratio)};
}

// 3. Adjoint/TLM duality for a reduced functional and for every block of a tape using all block kinds.

double block_duality(const Tape& tape, const Block& b, std::mt19937_64& rng) {
  std::vector<TapeValue> values;
  for (int i = 0; i < tape.variable_count(); ++i) values.push_back(tape.checkpoint(i));
  const int n = tape.variable_count();
  std::vector<Eigen::VectorXd> t(n), adj(n);
  for (int i : b.inputs()) t[i] = random_vector(values[i].data.size(), rng);
  for (int o : b.outputs()) adj[o] = random_vector(values[o].data.size(), rng);
  double lhs = 0.0, rhs = 0.0, vn = 0.0, wn = 0.0;
  for (int o : b.outputs()) wn += adj[o].squaredNorm();
  for (int i : b.inputs()) vn += t[i].squaredNorm();
  std::vector<Eigen::VectorXd> w_saved;
  for (int o : b.outputs()) w_saved.push_back(adj[o]);
  b.evaluate_tlm(values, t);
  b.evaluate_adjoint(values, adj, std::vector<char>(n, 1));
  for (std::size_t k = 0; k < b.outputs().size(); ++k) {
    const auto& to = t[b.outputs()[k]];
    if (to.size() > 0) lhs += w_saved[k].dot(to);
  }
  std::set<int> seen;
  for (int i : b.inputs()) {
    if (!seen.insert(i).second) continue;
    if (adj[i].size() > 0) rhs += adj[i].dot(t[i]);
  }
  return std::abs(lhs - rhs) / (std::sqrt(vn) * std::sqrt(wn));
}

Outcome duality() {
  std::mt19937_64 rng(2024);
  double worst = 0.0;

  // Taped Helmholtz solve u(f).
  auto mesh = unit_square_mesh(8, 8);
  auto V = function_space(mesh, 2), Q = function_space(mesh, 1);
  auto f = make_function(Q, "f");
  f->assign(interpolate([](const Point& p) { return 1.0 + p.x * p.y; }, Q).coeffs());
  auto u = make_function(V, "u");
  auto h = std::make_shared<Tape>();
  {
    TapeScope s(*h);
    auto a = trial_function(V), v = test_function(V);
    solve(inner(a, v) * dx + inner(grad(a), grad(v)) * dx, inner(f, v) * dx, u, {DirichletBC(V, "", 0.0)});
  }
  ReducedFunctional rf(h, var(*h, *u), {var(*h, *f)});
  for (int s = 0; s < 100; ++s) {
    std::mt19937_64 r(s);
    const Eigen::VectorXd w = random_vector(V->dof_count(), r), dv = random_vector(Q->dof_count(), r);
    const double gap = std::abs(w.dot(rf.tlm({dv}).data) - rf.adjoint(w)[0].data.dot(dv));
    worst = std::max(worst, gap / (w.norm() * dv.norm()));
  }
  const double helmholtz_worst = worst;

  // A tape holding every block kind.
  auto W = function_space(mesh, 2);
  auto tape = std::make_shared<Tape>();
  const Tensor x = Tensor::vector(Eigen::VectorXd::LinSpaced(Q->dof_count(), -0.5, 0.5));
  MLOperator N = ml_operator(mlp_init({1, 5, 1}, Activation::Tanh, 7), W);
  {
    TapeScope s(*tape);
    auto g = std::make_shared<Function>(to_fem(x, Q));
    auto gw = std::make_shared<Function>(interpolate(*g, W));
    auto w = make_function(W, "w");
    auto v = test_function(W);
    solve(inner((1.0 + Expr(w) * w) * grad(w), grad(v)) * dx + inner(w, v) * dx - inner(gw, v) * dx, w,
          {DirichletBC(W, "left", 0.0)});
    auto nw = std::make_shared<Function>(assemble_function(Form::bare(N(w))));
    Cofunction r = assemble_vector(inner(nw, v) * dx + inner(grad(w), grad(v)) * dx);
    Scalar a = assemble_scalar(inner(w, w) * dx);
    Scalar b = assemble_scalar(inner(nw, gw) * dx);
    Scalar J = a - 2.0 * b;
    to_ml(r);
    (void)J;
  }
  std::map<std::string, double> per_kind;
  for (int s = 0; s < 100; ++s) {
    std::mt19937_64 r(1000 + s);
    for (const auto& b : tape->blocks()) {
      double& k = per_kind[b->kind()];
      k = std::max(k, block_duality(*tape, *b, r));
    }
  }
  const std::set<std::string> expected = {"AssembleBlock", "CastBlock",   "ExternalOperatorBlock", "InterpolateBlock",
                                          "ScalarSumBlock", "SolveBlock"};
  bool all_kinds = true;
  for (const auto& k : expected) all_kinds = all_kinds && per_kind.count(k);
  std::string detail = "helmholtz " + fmt(helmholtz_worst);
  for (const auto& [k, v] : per_kind) {
    detail += ", " + k + " " + fmt(v);
    worst = std::max(worst, v);
  }
  if (!all_kinds) detail += ", missing block kinds";
  return {all_kinds && worst <= 1e-10, detail};
}

// 4. Taylor tests through the experiment drivers.

Outcome taylor() {
  const double a = run("helmholtz", "adjoint", "taylor_helmholtz", {{"n", 16}, {"taylor_n", 16}})["taylor_order"];
  run("heat", "gen", "taylor_heat", Json::object());
  const double b = run("heat", "train", "taylor_heat", {{"epochs", 0}})["taylor_order"];
  run("constitutive", "gen", "taylor_constitutive", Json::object());
  const double c = run("constitutive", "train", "taylor_constitutive", {{"epochs", 0}})["taylor_order"];
  const double d =
      run("seismic", "invert", "taylor_seismic", {{"n", 16}, {"maxiter", 0}, {"regulariser", "tikhonov"}})["taylor_order"];
  const double lo = std::min(std::min(a, b), std::min(c, d));
  return {lo >= 1.9, "helmholtz " + fmt(a) + ", heat " + fmt(b) + ", constitutive " + fmt(c) + ", seismic " + fmt(d)};
}

// 5. Network derivatives against central differences.

Outcome neural() {
  std::mt19937_64 rng(5);
  MLPParams p = mlp_init({3, 8, 8, 2}, Activation::Tanh, 11);
  for (auto& l : p.layers) l.b = 0.1 * random_vector(l.b.size(), rng);
  Eigen::MatrixXd x(4, 3), w(4, 2), v(4, 3);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = random_vector(1, rng)[0];
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = random_vector(1, rng)[0];
  for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = random_vector(1, rng)[0];
  const double h = 1e-5;
  auto J = [&](const MLPParams& q, const Eigen::MatrixXd& xx) { return (w.array() * mlp_forward(q, xx).array()).sum(); };

  const MLPVjp g = mlp_vjp(p, x, w);
  Eigen::MatrixXd fd_x(x.rows(), x.cols());
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    Eigen::MatrixXd xp = x, xm = x;
    xp.data()[i] += h;
    xm.data()[i] -= h;
    fd_x.data()[i] = (J(p, xp) - J(p, xm)) / (2 * h);
  }
  const Eigen::VectorXd theta = p.flatten();
  Eigen::VectorXd fd_t(theta.size());
  for (Eigen::Index k = 0; k < theta.size(); ++k) {
    MLPParams pp = p, pm = p;
    Eigen::VectorXd tp = theta, tm = theta;
    tp[k] += h;
    tm[k] -= h;
    pp.unflatten(tp);
    pm.unflatten(tm);
    fd_t[k] = (J(pp, x) - J(pm, x)) / (2 * h);
  }
  const Eigen::MatrixXd fd_v = (mlp_forward(p, x + h * v) - mlp_forward(p, x - h * v)) / (2 * h);
  const double ex = (g.dx - fd_x).norm() / fd_x.norm();
  const double et = (g.dtheta - fd_t).norm() / fd_t.norm();
  const double ev = (mlp_jvp(p, x, v) - fd_v).norm() / fd_v.norm();

  double dual = 0.0;
  for (int s = 0; s < 20; ++s) {
    std::mt19937_64 r(100 + s);
    Eigen::MatrixXd ww(4, 2), vv(4, 3);
    for (Eigen::Index i = 0; i < ww.size(); ++i) ww.data()[i] = random_vector(1, r)[0];
    for (Eigen::Index i = 0; i < vv.size(); ++i) vv.data()[i] = random_vector(1, r)[0];
    const Eigen::VectorXd dt = random_vector(theta.size(), r);
    const MLPVjp gv = mlp_vjp(p, x, ww);
    const double a = (ww.array() * mlp_jvp(p, x, vv).array()).sum() - (gv.dx.array() * vv.array()).sum();
    const double b = (ww.array() * mlp_jvp_params(p, x, dt).array()).sum() - gv.dtheta.dot(dt);
    dual = std::max(dual, std::abs(a) / (ww.norm() * vv.norm()));
    dual = std::max(dual, std::abs(b) / (ww.norm() * dt.norm()));
  }
  const double fd = std::max(ex, std::max(et, ev));
  return {fd <= 1e-5 && dual <= 1e-12,
          "vjp_x " + fmt(ex) + ", vjp_theta " + fmt(et) + ", jvp " + fmt(ev) + ", duality " + fmt(dual)};
}

// 6. Coupling equivalences.

Outcome coupling() {
  auto mesh = unit_square_mesh(4, 4);
  auto Q = function_space(mesh, 1), V = function_space(mesh, 2);
  auto tape = std::make_shared<Tape>();
  const Tensor x = Tensor::vector(Eigen::VectorXd::LinSpaced(Q->dof_count(), 0.5, 1.5));
  FunctionPtr u = make_function(V, "u");
  VarRef control;
  {
    TapeScope s(*tape);
    auto f = std::make_shared<Function>(to_fem(x, Q));
    control = var(*tape, x);
    auto a = trial_function(V), v = test_function(V);
    solve(inner(a, v) * dx + inner(grad(a), grad(v)) * dx, inner(f, v) * dx, u, {DirichletBC(V, "", 0.0)});
    to_ml(*u);
  }
  auto rf = std::make_shared<ReducedFunctional>(tape, var(*tape, *u), std::vector<VarRef>{control});
  FemOperator G = fem_operator(rf);
  std::mt19937_64 rng(3);
  bool identical = true;
  for (int s = 0; s < 10; ++s) {
    const Eigen::VectorXd xs = random_vector(Q->dof_count(), rng), w = random_vector(V->dof_count(), rng);
    G.forward({Tensor::vector(xs)});
    const Eigen::VectorXd via_op = G.backward(Tensor::vector(w))[0].data;
    rf->operator()({xs});
    const Eigen::VectorXd via_rf = rf->adjoint(w)[0].data;
    identical = identical && via_op.size() == via_rf.size() &&
                std::memcmp(via_op.data(), via_rf.data(), sizeof(double) * via_op.size()) == 0;
  }

  auto Vv = function_space(mesh, 1, ValueShape::vector(2));
  MLPParams p = mlp_init({2, 6, 2}, Activation::Tanh, 9);
  MLOperator N = ml_operator(p, Vv);
  auto z = make_function(Vv, "z");
  z->assign(random_vector(Vv->dof_count(), rng));
  const Eigen::MatrixXd A = to_dense(assemble_matrix(derivative(Form::bare(N(z)), z)));
  Eigen::MatrixXd B = Eigen::MatrixXd::Zero(Vv->dof_count(), Vv->dof_count());
  for (int n = 0; n < Vv->node_count(); ++n) {
    B.block(2 * n, 2 * n, 2, 2) = mlp_jacobian_input(p, z->coeffs().segment(2 * n, 2));
  }
  const double jac = (A - B).cwiseAbs().maxCoeff();
  return {identical && jac <= 1e-12,
          std::string("backward ") + (identical ? "bit-identical" : "differs") + ", jacobian " + fmt(jac)};
}

// 7. Divergence-free loss identities.

Outcome divfree() {
  const Json m = run("divfree", "loss", "divfree", Json::object());
  const double rot = m["loss_rotation_matched"];
  const double gap = std::abs(m["alpha0_loss"].get<double>() - m["alpha0_direct_L2_squared"].get<double>());
  return {std::abs(rot) < 1e-12 && gap <= 1e-12, "rotation " + fmt(rot) + ", alpha=0 gap " + fmt(gap)};
}

// 8. Heat inverse.

Outcome heat() {
  run("heat", "gen", "heat", Json::object());
  run("heat", "train", "heat", Json::object());
  const auto hist = read_csv(kRoot / "heat" / "history.csv");
  bool decreasing = hist.size() >= 10;
  for (std::size_t e = 1; e < 10 && e < hist.size(); ++e) decreasing = decreasing && hist[e].at("loss") < hist[e - 1].at("loss");
  const double R = run("heat", "eval", "heat", Json::object())["R_test"];
  return {decreasing && R < 0.5, std::string(decreasing ? "loss decreasing" : "loss not decreasing") + ", R_test " + fmt(R)};
}

// 9. Constitutive model.

Outcome constitutive() {
  run("constitutive", "gen", "constitutive_exact", Json::object());
  const double l0 = run("constitutive", "train", "constitutive_exact", {{"init", "exact"}, {"epochs", 0}})["loss_final"];
  run("constitutive", "gen", "constitutive", Json::object());
  run("constitutive", "train", "constitutive", {{"init", "random"}, {"epochs", 100}});
  run("constitutive", "eval", "constitutive", Json::object());
  double worst = 0.0;
  const auto rows = read_csv(kRoot / "constitutive" / "force_deflection.csv");
  for (const auto& r : rows) {
    const double e = std::abs(r.at("deflection_model") - r.at("deflection_exp")) / std::abs(r.at("deflection_exp"));
    worst = std::max(worst, std::isnan(e) ? INFINITY : e);
  }
  return {l0 < 1e-10 && !rows.empty() && worst < 0.05,
          "exact-init loss " + fmt(l0) + ", trained max relative error " + fmt(worst)};
}

// 10. Seismic inversion.

Outcome seismic() {
  const double t = run("seismic", "invert", "seismic_tikhonov", {{"regulariser", "tikhonov"}, {"maxiter", 20}})["objective_reduction"];
  run("seismic", "pretrain", "seismic_ml", Json::object());
  const double m = run("seismic", "invert", "seismic_ml", {{"regulariser", "ml"}, {"maxiter", 20}})["objective_reduction"];
  return {t >= 0.5 && m >= 0.5, "tikhonov reduction " + fmt(t) + ", ml reduction " + fmt(m)};
}

// 11. Reruns reproduce metrics.json byte for byte.

Outcome reproducible() {
  struct Step {
    std::string exp, sub;
    Json config;
  };
  const std::vector<std::vector<Step>> pipelines = {
      {{"helmholtz", "adjoint", {{"n", 12}}}},
      {{"divfree", "loss", Json::object()}},
      {{"heat", "gen", {{"n_train", 8}, {"n_test", 4}}}, {"heat", "train", {{"epochs", 2}}}, {"heat", "eval", Json::object()}},
      {{"constitutive", "gen", Json::object()}, {"constitutive", "train", {{"epochs", 5}}}},
  };
  int checked = 0;
  std::string differs;
  for (const auto& steps : pipelines) {
    for (const auto& s : steps) {
      run(s.exp, s.sub, "repro_a_" + s.exp, s.config, 17);
      run(s.exp, s.sub, "repro_b_" + s.exp, s.config, 17);
      const std::string a = slurp(kRoot / ("repro_a_" + s.exp) / "metrics.json");
      const std::string b = slurp(kRoot / ("repro_b_" + s.exp) / "metrics.json");
      if (a.empty() || a != b) differs += " " + s.exp + "/" + s.sub;
      ++checked;
    }
  }
  return {differs.empty(), std::to_string(checked) + " runs" + (differs.empty() ? " identical" : ", differ:" + differs)};
}

}  // namespace

int main() {
  fs::remove_all(kRoot);
  fs::create_directories(kRoot);
  report(1, "exact assembly", 1, exact_assembly);
  report(2, "helmholtz convergence", 10, helmholtz_convergence);
  report(3, "adjoint/tlm duality", 30, duality);
  report(4, "taylor tests", 120, taylor);
  report(5, "neural derivatives", 5, neural);
  report(6, "coupling equivalences", 60, coupling);
  report(7, "divergence-free loss", 60, divfree);
  report(8, "heat inverse", 600, heat);
  report(9, "constitutive model", 900, constitutive);
  report(10, "seismic inversion", 600, seismic);
  report(11, "reproducibility", 600, reproducible);
  std::printf("%d of 11 criteria failed\n", failures);
  return failures == 0 ? 0 : 1;
}
