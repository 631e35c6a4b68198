#include <algorithm>
#include <set>

#include "diffem/error.hpp"
#include "diffem/tape.hpp"

namespace diffem {

ReducedFunctional::ReducedFunctional(std::shared_ptr<const Tape> tape, VarRef output, std::vector<VarRef> controls)
    : tape_(std::move(tape)), output_(std::move(output)), controls_(std::move(controls)) {
  require(tape_ != nullptr, "reduced functional needs a tape");
  const int n = tape_->variable_count();
  if (output_.id < 0 || output_.id >= n) fail(ErrorKind::NotFound, "output is not a variable of the tape");
  if (controls_.empty()) fail(ErrorKind::InvalidArgument, "reduced functional needs at least one control");
  depends_.assign(n, 0);
  std::set<int> seen;
  for (const auto& c : controls_) {
    if (c.id < 0 || c.id >= n) fail(ErrorKind::NotFound, "control is not a variable of the tape");
    if (!seen.insert(c.id).second) fail(ErrorKind::InvalidArgument, "duplicate control");
    depends_[c.id] = 1;
  }
  const auto& blocks = tape_->blocks();
  std::vector<char> forward(blocks.size(), 0);
  for (std::size_t b = 0; b < blocks.size(); ++b) {
    for (int in : blocks[b]->inputs()) forward[b] |= depends_[in];
    if (!forward[b]) continue;
    for (int out : blocks[b]->outputs()) {
      if (seen.count(out)) fail(ErrorKind::InvalidArgument, "a control is computed from another control");
      depends_[out] = 1;
    }
  }
  std::vector<char> wanted(n, 0);
  wanted[output_.id] = 1;
  for (std::size_t b = blocks.size(); b-- > 0;) {
    if (!forward[b]) continue;
    bool hit = false;
    for (int out : blocks[b]->outputs()) hit = hit || wanted[out];
    if (!hit) continue;
    slice_.push_back(static_cast<int>(b));
    for (int in : blocks[b]->inputs()) wanted[in] = 1;
  }
  std::reverse(slice_.begin(), slice_.end());
  values_.reserve(n);
  for (int i = 0; i < n; ++i) values_.push_back(tape_->checkpoint(i));
}

TapeValue ReducedFunctional::operator()(const std::vector<TapeValue>& controls) {
  std::vector<Eigen::VectorXd> data;
  for (const auto& c : controls) data.push_back(c.data);
  return (*this)(data);
}

TapeValue ReducedFunctional::operator()(const std::vector<Eigen::VectorXd>& controls) {
  if (controls.size() != controls_.size()) fail(ErrorKind::InvalidArgument, "wrong number of control values");
  for (std::size_t i = 0; i < controls.size(); ++i) {
    if (controls[i].size() != controls_[i].size) fail(ErrorKind::InvalidArgument, "control value has the wrong size");
    values_[controls_[i].id].data = controls[i];
  }
  for (int b : slice_) tape_->blocks()[b]->recompute(values_);
  return values_[output_.id];
}

std::vector<TapeValue> ReducedFunctional::control_values() const {
  std::vector<TapeValue> out;
  for (const auto& c : controls_) out.push_back(values_[c.id]);
  return out;
}

std::vector<TapeValue> ReducedFunctional::adjoint(const std::optional<Eigen::VectorXd>& seed) {
  const int n = tape_->variable_count();
  std::vector<Eigen::VectorXd> adj(n);
  if (seed) {
    if (seed->size() != output_.size) fail(ErrorKind::InvalidArgument, "adjoint seed has the wrong size");
    adj[output_.id] = *seed;
  } else {
    if (output_.kind != ValueKind::Scalar) fail(ErrorKind::InvalidArgument, "non-scalar output needs an adjoint seed");
    adj[output_.id] = Eigen::VectorXd::Ones(1);
  }
  for (auto it = slice_.rbegin(); it != slice_.rend(); ++it) {
    tape_->blocks()[*it]->evaluate_adjoint(values_, adj, depends_);
  }
  std::vector<TapeValue> out;
  for (const auto& c : controls_) {
    TapeValue v{dual_kind(c.kind), adj[c.id], c.space, c.shape};
    if (v.data.size() == 0) v.data = Eigen::VectorXd::Zero(c.size);
    out.push_back(std::move(v));
  }
  return out;
}

TapeValue ReducedFunctional::tlm(const std::vector<Eigen::VectorXd>& directions) {
  if (directions.size() != controls_.size()) fail(ErrorKind::InvalidArgument, "wrong number of directions");
  std::vector<Eigen::VectorXd> t(tape_->variable_count());
  for (std::size_t i = 0; i < directions.size(); ++i) {
    if (directions[i].size() != controls_[i].size) fail(ErrorKind::InvalidArgument, "direction has the wrong size");
    t[controls_[i].id] = directions[i];
  }
  for (int b : slice_) tape_->blocks()[b]->evaluate_tlm(values_, t);
  TapeValue out{output_.kind, t[output_.id], output_.space, output_.shape};
  if (out.data.size() == 0) out.data = Eigen::VectorXd::Zero(output_.size);
  return out;
}

Eigen::VectorXd concat(const std::vector<TapeValue>& values) {
  Eigen::Index n = 0;
  for (const auto& v : values) n += v.data.size();
  Eigen::VectorXd out(n);
  n = 0;
  for (const auto& v : values) {
    out.segment(n, v.data.size()) = v.data;
    n += v.data.size();
  }
  return out;
}

std::vector<Eigen::VectorXd> split(const ReducedFunctional& rf, const Eigen::VectorXd& flat) {
  std::vector<Eigen::VectorXd> out;
  Eigen::Index n = 0;
  for (const auto& c : rf.controls()) {
    if (n + c.size > flat.size()) fail(ErrorKind::InvalidArgument, "flat control vector is too short");
    out.push_back(flat.segment(n, c.size));
    n += c.size;
  }
  if (n != flat.size()) fail(ErrorKind::InvalidArgument, "flat control vector is too long");
  return out;
}

}  // namespace diffem
