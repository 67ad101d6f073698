#include "pflow/autodiff.hpp"

#include <cmath>

namespace pflow::ad {

namespace {

double sigmoid_val(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

Var Tape::leaf(double v) { return push({Op::kLeaf}, v); }

Var Tape::constant(double v) { return push({Op::kConst}, v); }

Var Tape::detach(Var v) {
  check(v);
  return push({Op::kDetach, v.idx}, val_[v.idx]);
}

Var Tape::binary(Op op, Var a, Var b) {
  check(a);
  check(b);
  if (a.tape != b.tape) throw TapeMismatch("operands live on different tapes");
  const double x = val_[a.idx], y = val_[b.idx];
  Node n{op, a.idx, b.idx};
  double v = 0.0;
  switch (op) {
    case Op::kAdd:
      v = x + y;
      n.pa = 1.0;
      n.pb = 1.0;
      break;
    case Op::kSub:
      v = x - y;
      n.pa = 1.0;
      n.pb = -1.0;
      break;
    case Op::kMul:
      v = x * y;
      n.pa = y;
      n.pb = x;
      break;
    case Op::kDiv:
      if (y == 0.0) throw DomainError("division by zero", static_cast<std::int64_t>(nodes_.size()));
      v = x / y;
      n.pa = 1.0 / y;
      n.pb = -v / y;
      break;
    default:
      throw std::logic_error("binary() called with non-binary op");
  }
  return push(n, v);
}

Var Tape::unary(Op op, Var a) {
  check(a);
  const double x = val_[a.idx];
  Node n{op, a.idx};
  double v = 0.0;
  switch (op) {
    case Op::kNeg:
      v = -x;
      n.pa = -1.0;
      break;
    case Op::kTanh:
      v = std::tanh(x);
      n.pa = 1.0 - v * v;
      break;
    case Op::kExp:
      v = std::exp(x);
      n.pa = v;
      break;
    case Op::kLog:
      if (x <= 0.0) throw DomainError("log of non-positive value", static_cast<std::int64_t>(nodes_.size()));
      v = std::log(x);
      n.pa = 1.0 / x;
      break;
    case Op::kSqrt:
      if (x < 0.0) throw DomainError("sqrt of negative value", static_cast<std::int64_t>(nodes_.size()));
      v = std::sqrt(x);
      n.pa = v > 0.0 ? 0.5 / v : 0.0;
      break;
    case Op::kSigmoid:
      v = sigmoid_val(x);
      n.pa = v * (1.0 - v);
      break;
    default:
      throw std::logic_error("unary() called with non-unary op");
  }
  return push(n, v);
}

Var Tape::pow(Var a, double exponent) {
  check(a);
  const double x = val_[a.idx];
  const bool integral = exponent == std::floor(exponent);
  if (x < 0.0 && !integral)
    throw DomainError("pow of negative base with fractional exponent",
                      static_cast<std::int64_t>(nodes_.size()));
  if (x == 0.0 && exponent < 0.0)
    throw DomainError("pow of zero base with negative exponent",
                      static_cast<std::int64_t>(nodes_.size()));
  Node n{Op::kPow, a.idx};
  n.aux = exponent;
  const double v = std::pow(x, exponent);
  n.pa = exponent == 0.0 ? 0.0 : exponent * std::pow(x, exponent - 1.0);
  return push(n, v);
}

Var Tape::abs_smooth(Var a, double eps) {
  check(a);
  const double x = val_[a.idx];
  Node n{Op::kAbsSmooth, a.idx};
  n.aux = eps;
  const double v = std::sqrt(x * x + eps);
  n.pa = v > 0.0 ? x / v : 0.0;
  return push(n, v);
}

std::vector<double> Tape::gradient(Var output, std::span<const Var> inputs) {
  check(output);
  for (const Var& in : inputs) check(in);

  std::vector<double> adj(static_cast<std::size_t>(output.idx) + 1, 0.0);
  adj[output.idx] = 1.0;
  for (std::int32_t i = output.idx; i >= 0; --i) {
    ++backward_visits_;
    const double w = adj[i];
    if (w == 0.0) continue;
    const Node& n = nodes_[i];
    switch (n.op) {
      case Op::kConst:
      case Op::kLeaf:
      case Op::kDetach:
        break;  // kDetach: adjoint stops here by design of the op
      default:
        adj[n.a] += n.pa * w;
        if (n.b >= 0) adj[n.b] += n.pb * w;
        break;
    }
  }

  std::vector<double> out(inputs.size());
  for (std::size_t k = 0; k < inputs.size(); ++k)
    out[k] = inputs[k].idx <= output.idx ? adj[inputs[k].idx] : 0.0;
  return out;
}

std::vector<Var> Tape::gradient_as_vars(Var output, std::span<const Var> inputs) {
  check(output);
  for (const Var& in : inputs) check(in);

  // Adjoints as vars; invalid == structural zero. The sweep below only
  // touches nodes at or below output.idx; new nodes appended as part of the
  // sweep never get adjoints themselves.
  std::vector<Var> adj(static_cast<std::size_t>(output.idx) + 1);
  adj[output.idx] = constant(1.0);

  auto accumulate = [&](std::int32_t parent, Var contribution) {
    adj[parent] = adj[parent].valid() ? adj[parent] + contribution : contribution;
  };

  for (std::int32_t i = output.idx; i >= 0; --i) {
    if (!adj[i].valid()) continue;
    const Node n = nodes_[i];  // copy: push() may reallocate nodes_
    const Var w = adj[i];
    const Var va{this, n.a}, vb{this, n.b}, self{this, i};
    switch (n.op) {
      case Op::kConst:
      case Op::kLeaf:
      case Op::kDetach:
        break;
      case Op::kAdd:
        accumulate(n.a, w);
        accumulate(n.b, w);
        break;
      case Op::kSub:
        accumulate(n.a, w);
        accumulate(n.b, -w);
        break;
      case Op::kMul:
        accumulate(n.a, w * vb);
        accumulate(n.b, w * va);
        break;
      case Op::kDiv:
        accumulate(n.a, w / vb);
        accumulate(n.b, -(w * self) / vb);
        break;
      case Op::kNeg:
        accumulate(n.a, -w);
        break;
      case Op::kTanh:
        accumulate(n.a, w * (1.0 - self * self));
        break;
      case Op::kExp:
        accumulate(n.a, w * self);
        break;
      case Op::kLog:
        accumulate(n.a, w / va);
        break;
      case Op::kSqrt:
        accumulate(n.a, w * 0.5 / self);
        break;
      case Op::kPow:
        if (n.aux != 0.0) accumulate(n.a, w * n.aux * this->pow(va, n.aux - 1.0));
        break;
      case Op::kSigmoid:
        accumulate(n.a, w * self * (1.0 - self));
        break;
      case Op::kAbsSmooth:
        accumulate(n.a, w * va / self);
        break;
    }
  }

  std::vector<Var> out(inputs.size());
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const Var in = inputs[k];
    out[k] = (in.idx <= output.idx && adj[in.idx].valid()) ? adj[in.idx] : constant(0.0);
  }
  return out;
}

}  // namespace pflow::ad
