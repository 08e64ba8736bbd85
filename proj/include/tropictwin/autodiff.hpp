#pragma once

// Tape-based scalar reverse-mode autodiff. Values are computed eagerly as the
// graph is built; a built tape can be re-evaluated after set_input (same
// topology, new leaf values) and swept backward any number of times.

#include <cstdint>
#include <vector>

namespace tropictwin::autodiff {

class Tape;

struct Var {
  int32_t idx = -1;
  Tape* tape = nullptr;
  bool valid() const { return idx >= 0 && tape != nullptr; }
};

class Tape {
 public:
  Var input(double v);
  Var constant(double v);

  Var add(Var a, Var b);
  Var sub(Var a, Var b);
  Var mul(Var a, Var b);
  Var div(Var a, Var b);  // throws std::domain_error on zero denominator
  Var neg(Var a);
  Var exp(Var a);
  Var log(Var a);         // throws std::domain_error for arguments <= 0
  Var tanh(Var a);
  Var vmax(Var a, Var b); // ties route the gradient to the first operand
  Var vmin(Var a, Var b);
  Var pow(Var a, double exponent);  // fixed exponent

  Var constant_like(Var a, double v) { (void)a; return constant(v); }

  double value(Var v) const;
  void set_input(Var v, double value);  // only Input nodes may be reassigned

  // Re-evaluates every node in build order with current leaf values.
  void recompute();

  // Reverse sweep from `out`; afterwards grad(v) is d out / d v.
  void backward(Var out);
  double grad(Var v) const;

  std::size_t size() const { return nodes_.size(); }
  void clear() { nodes_.clear(); }

 private:
  enum class Op : uint8_t { Input, Const, Add, Sub, Mul, Div, Neg, Exp, Log, Tanh, Max, Min, PowC };

  struct Node {
    Op op;
    int32_t a = -1;
    int32_t b = -1;
    double val = 0.0;
    double adj = 0.0;
    double aux = 0.0;  // exponent for PowC
  };

  Var push(Op op, int32_t a, int32_t b, double val, double aux = 0.0);
  double eval(const Node& n) const;
  void check(Var v) const;

  std::vector<Node> nodes_;
};

// Free-function forms for expression-style graph building.
Var exp(Var a);
Var log(Var a);
Var tanh(Var a);
Var pow(Var a, double exponent);
Var vmax(Var a, Var b);
Var vmin(Var a, Var b);
Var vmax(Var a, double b);
Var vmin(Var a, double b);
Var vmax(double a, Var b);
Var vmin(double a, Var b);

// Convenience operators (both vars must live on the same tape).
Var operator+(Var a, Var b);
Var operator-(Var a, Var b);
Var operator*(Var a, Var b);
Var operator/(Var a, Var b);
Var operator-(Var a);
Var operator+(Var a, double c);
Var operator+(double c, Var a);
Var operator-(Var a, double c);
Var operator-(double c, Var a);
Var operator*(Var a, double c);
Var operator*(double c, Var a);
Var operator/(Var a, double c);
Var operator/(double c, Var a);

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<double> m, v;
  std::int64_t t = 0;
};

// One bias-corrected Adam update in place. The state is sized on first use;
// later size mismatches throw std::invalid_argument.
void adam_step(std::vector<double>& params, const std::vector<double>& grads, AdamState& state,
               const AdamConfig& cfg);

}  // namespace tropictwin::autodiff
