#include "tropictwin/autodiff.hpp"

#include <cmath>
#include <stdexcept>

namespace tropictwin::autodiff {

void Tape::check(Var v) const {
  if (!v.valid() || v.tape != this || static_cast<std::size_t>(v.idx) >= nodes_.size())
    throw std::invalid_argument("autodiff: variable does not belong to this tape");
}

Var Tape::push(Op op, int32_t a, int32_t b, double val, double aux) {
  if (!std::isfinite(val)) throw std::domain_error("autodiff: operation produced a non-finite value");
  nodes_.push_back(Node{op, a, b, val, 0.0, aux});
  return Var{static_cast<int32_t>(nodes_.size() - 1), this};
}

Var Tape::input(double v) { return push(Op::Input, -1, -1, v); }
Var Tape::constant(double v) { return push(Op::Const, -1, -1, v); }

Var Tape::add(Var a, Var b) { check(a); check(b); return push(Op::Add, a.idx, b.idx, nodes_[a.idx].val + nodes_[b.idx].val); }
Var Tape::sub(Var a, Var b) { check(a); check(b); return push(Op::Sub, a.idx, b.idx, nodes_[a.idx].val - nodes_[b.idx].val); }
Var Tape::mul(Var a, Var b) { check(a); check(b); return push(Op::Mul, a.idx, b.idx, nodes_[a.idx].val * nodes_[b.idx].val); }

Var Tape::div(Var a, Var b) {
  check(a); check(b);
  if (nodes_[b.idx].val == 0.0) throw std::domain_error("autodiff: division by zero");
  return push(Op::Div, a.idx, b.idx, nodes_[a.idx].val / nodes_[b.idx].val);
}

Var Tape::neg(Var a) { check(a); return push(Op::Neg, a.idx, -1, -nodes_[a.idx].val); }
Var Tape::exp(Var a) { check(a); return push(Op::Exp, a.idx, -1, std::exp(nodes_[a.idx].val)); }

Var Tape::log(Var a) {
  check(a);
  if (!(nodes_[a.idx].val > 0.0)) throw std::domain_error("autodiff: log of non-positive value");
  return push(Op::Log, a.idx, -1, std::log(nodes_[a.idx].val));
}

Var Tape::tanh(Var a) { check(a); return push(Op::Tanh, a.idx, -1, std::tanh(nodes_[a.idx].val)); }

Var Tape::vmax(Var a, Var b) {
  check(a); check(b);
  return push(Op::Max, a.idx, b.idx, nodes_[a.idx].val >= nodes_[b.idx].val ? nodes_[a.idx].val : nodes_[b.idx].val);
}

Var Tape::vmin(Var a, Var b) {
  check(a); check(b);
  return push(Op::Min, a.idx, b.idx, nodes_[a.idx].val <= nodes_[b.idx].val ? nodes_[a.idx].val : nodes_[b.idx].val);
}

Var Tape::pow(Var a, double exponent) {
  check(a);
  return push(Op::PowC, a.idx, -1, std::pow(nodes_[a.idx].val, exponent), exponent);
}

double Tape::value(Var v) const { check(v); return nodes_[v.idx].val; }

void Tape::set_input(Var v, double value) {
  check(v);
  if (nodes_[v.idx].op != Op::Input)
    throw std::invalid_argument("autodiff: set_input on a non-input node");
  nodes_[v.idx].val = value;
}

double Tape::eval(const Node& n) const {
  switch (n.op) {
    case Op::Input:
    case Op::Const: return n.val;
    case Op::Add: return nodes_[n.a].val + nodes_[n.b].val;
    case Op::Sub: return nodes_[n.a].val - nodes_[n.b].val;
    case Op::Mul: return nodes_[n.a].val * nodes_[n.b].val;
    case Op::Div:
      if (nodes_[n.b].val == 0.0) throw std::domain_error("autodiff: division by zero");
      return nodes_[n.a].val / nodes_[n.b].val;
    case Op::Neg: return -nodes_[n.a].val;
    case Op::Exp: return std::exp(nodes_[n.a].val);
    case Op::Log:
      if (!(nodes_[n.a].val > 0.0)) throw std::domain_error("autodiff: log of non-positive value");
      return std::log(nodes_[n.a].val);
    case Op::Tanh: return std::tanh(nodes_[n.a].val);
    case Op::Max: return nodes_[n.a].val >= nodes_[n.b].val ? nodes_[n.a].val : nodes_[n.b].val;
    case Op::Min: return nodes_[n.a].val <= nodes_[n.b].val ? nodes_[n.a].val : nodes_[n.b].val;
    case Op::PowC: return std::pow(nodes_[n.a].val, n.aux);
  }
  throw std::logic_error("autodiff: unreachable op");
}

void Tape::recompute() {
  for (auto& n : nodes_) {
    double v = eval(n);
    if (!std::isfinite(v)) throw std::domain_error("autodiff: operation produced a non-finite value");
    n.val = v;
  }
}

void Tape::backward(Var out) {
  check(out);
  for (auto& n : nodes_) n.adj = 0.0;
  nodes_[out.idx].adj = 1.0;
  for (int32_t i = out.idx; i >= 0; --i) {
    const Node& n = nodes_[i];
    double a = n.adj;
    if (a == 0.0) continue;
    switch (n.op) {
      case Op::Input:
      case Op::Const: break;
      case Op::Add:
        nodes_[n.a].adj += a;
        nodes_[n.b].adj += a;
        break;
      case Op::Sub:
        nodes_[n.a].adj += a;
        nodes_[n.b].adj -= a;
        break;
      case Op::Mul:
        nodes_[n.a].adj += a * nodes_[n.b].val;
        nodes_[n.b].adj += a * nodes_[n.a].val;
        break;
      case Op::Div: {
        double bv = nodes_[n.b].val;
        nodes_[n.a].adj += a / bv;
        nodes_[n.b].adj -= a * nodes_[n.a].val / (bv * bv);
        break;
      }
      case Op::Neg: nodes_[n.a].adj -= a; break;
      case Op::Exp: nodes_[n.a].adj += a * n.val; break;
      case Op::Log: nodes_[n.a].adj += a / nodes_[n.a].val; break;
      case Op::Tanh: nodes_[n.a].adj += a * (1.0 - n.val * n.val); break;
      case Op::Max:
        // ties route the gradient to the first operand
        if (nodes_[n.a].val >= nodes_[n.b].val) nodes_[n.a].adj += a;
        else nodes_[n.b].adj += a;
        break;
      case Op::Min:
        if (nodes_[n.a].val <= nodes_[n.b].val) nodes_[n.a].adj += a;
        else nodes_[n.b].adj += a;
        break;
      case Op::PowC:
        nodes_[n.a].adj += a * n.aux * std::pow(nodes_[n.a].val, n.aux - 1.0);
        break;
    }
  }
}

double Tape::grad(Var v) const { check(v); return nodes_[v.idx].adj; }

namespace {
Tape* same_tape(Var a, Var b) {
  if (a.tape != b.tape) throw std::invalid_argument("autodiff: variables live on different tapes");
  return a.tape;
}
}  // namespace

Var exp(Var a) { return a.tape->exp(a); }
Var log(Var a) { return a.tape->log(a); }
Var tanh(Var a) { return a.tape->tanh(a); }
Var pow(Var a, double exponent) { return a.tape->pow(a, exponent); }
Var vmax(Var a, Var b) { return same_tape(a, b)->vmax(a, b); }
Var vmin(Var a, Var b) { return same_tape(a, b)->vmin(a, b); }
Var vmax(Var a, double b) { return a.tape->vmax(a, a.tape->constant(b)); }
Var vmin(Var a, double b) { return a.tape->vmin(a, a.tape->constant(b)); }
Var vmax(double a, Var b) { return b.tape->vmax(b.tape->constant(a), b); }
Var vmin(double a, Var b) { return b.tape->vmin(b.tape->constant(a), b); }

Var operator+(Var a, Var b) { return same_tape(a, b)->add(a, b); }
Var operator-(Var a, Var b) { return same_tape(a, b)->sub(a, b); }
Var operator*(Var a, Var b) { return same_tape(a, b)->mul(a, b); }
Var operator/(Var a, Var b) { return same_tape(a, b)->div(a, b); }
Var operator-(Var a) { return a.tape->neg(a); }
Var operator+(Var a, double c) { return a.tape->add(a, a.tape->constant(c)); }
Var operator+(double c, Var a) { return a + c; }
Var operator-(Var a, double c) { return a.tape->sub(a, a.tape->constant(c)); }
Var operator-(double c, Var a) { return a.tape->sub(a.tape->constant(c), a); }
Var operator*(Var a, double c) { return a.tape->mul(a, a.tape->constant(c)); }
Var operator*(double c, Var a) { return a * c; }
Var operator/(Var a, double c) { return a.tape->div(a, a.tape->constant(c)); }
Var operator/(double c, Var a) { return a.tape->div(a.tape->constant(c), a); }

void adam_step(std::vector<double>& params, const std::vector<double>& grads, AdamState& state,
               const AdamConfig& cfg) {
  if (params.size() != grads.size())
    throw std::invalid_argument("adam_step: parameter/gradient size mismatch");
  if (state.m.empty() && state.v.empty() && state.t == 0) {
    state.m.assign(params.size(), 0.0);
    state.v.assign(params.size(), 0.0);
  }
  if (state.m.size() != params.size() || state.v.size() != params.size())
    throw std::invalid_argument("adam_step: state size mismatch");
  state.t += 1;
  double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.t));
  double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * grads[i];
    state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * grads[i] * grads[i];
    double mhat = state.m[i] / bc1;
    double vhat = state.v[i] / bc2;
    params[i] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.eps);
  }
}

}  // namespace tropictwin::autodiff
