#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace pflow::ad {

class Tape;

/// Handle to one scalar node recorded on a Tape.
struct Var {
  Tape* tape = nullptr;
  std::int32_t idx = -1;

  double value() const;
  bool valid() const { return tape != nullptr && idx >= 0; }
};

/// Thrown when an elementary operation is evaluated outside its domain
/// (division by zero, sqrt of a negative, log of a non-positive value).
class DomainError : public std::runtime_error {
 public:
  DomainError(const std::string& what, std::int64_t node)
      : std::runtime_error(what + " (node " + std::to_string(node) + ")"), node_index(node) {}
  std::int64_t node_index;
};

/// Thrown when vars from different tapes are mixed.
class TapeMismatch : public std::logic_error {
  using std::logic_error::logic_error;
};

enum class Op : std::uint8_t {
  kConst,
  kLeaf,
  kAdd,
  kSub,
  kMul,
  kDiv,
  kNeg,
  kTanh,
  kExp,
  kLog,
  kSqrt,
  kPow,       // aux = exponent
  kSigmoid,
  kAbsSmooth, // aux = epsilon; value = sqrt(x^2 + eps)
  kDetach,    // value passthrough, zero adjoint into the parent
};

/// Append-only expression tape for reverse-mode differentiation of scalars.
///
/// Nodes are topologically ordered by construction (parents precede
/// children). `gradient` runs a value-only backward sweep using the local
/// partials stored at record time. `gradient_as_vars` re-records the
/// backward sweep as new tape nodes, so derivatives stay differentiable and
/// second or third order derivatives are obtained by calling it again.
class Tape {
 public:
  Var leaf(double v);
  Var constant(double v);

  /// Value passthrough that blocks adjoint flow into `v`'s subgraph.
  Var detach(Var v);

  Var binary(Op op, Var a, Var b);
  Var unary(Op op, Var a);
  Var pow(Var a, double exponent);
  Var abs_smooth(Var a, double eps);

  double value(Var v) const { check(v); return val_[static_cast<std::size_t>(v.idx)]; }
  std::size_t size() const { return nodes_.size(); }

  /// Drops all nodes but keeps allocated capacity.
  void clear() {
    nodes_.clear();
    val_.clear();
  }

  /// d(output)/d(input) for each input, by one numeric backward sweep.
  /// Inputs the output does not depend on get gradient 0.
  std::vector<double> gradient(Var output, std::span<const Var> inputs);

  /// Same derivatives, but recorded as new tape nodes (differentiable).
  std::vector<Var> gradient_as_vars(Var output, std::span<const Var> inputs);

  /// Total nodes visited by all numeric backward sweeps (instrumentation).
  std::size_t backward_visits() const { return backward_visits_; }

 private:
  struct Node {
    Op op;
    std::int32_t a = -1, b = -1;
    double pa = 0.0, pb = 0.0;  // local partials d(value)/d(parent)
    double aux = 0.0;           // exponent / epsilon for kPow / kAbsSmooth
  };

  void check(Var v) const {
    if (v.tape != this) throw TapeMismatch("var does not live on this tape");
    if (v.idx < 0 || static_cast<std::size_t>(v.idx) >= nodes_.size())
      throw TapeMismatch("var index out of range");
  }

  Var push(Node n, double value) {
    nodes_.push_back(n);
    val_.push_back(value);
    return Var{this, static_cast<std::int32_t>(nodes_.size() - 1)};
  }

  std::vector<Node> nodes_;
  std::vector<double> val_;
  std::size_t backward_visits_ = 0;
};

inline double Var::value() const { return tape->value(*this); }

// ---- operator sugar ------------------------------------------------------

inline Var operator+(Var a, Var b) { return a.tape->binary(Op::kAdd, a, b); }
inline Var operator-(Var a, Var b) { return a.tape->binary(Op::kSub, a, b); }
inline Var operator*(Var a, Var b) { return a.tape->binary(Op::kMul, a, b); }
inline Var operator/(Var a, Var b) { return a.tape->binary(Op::kDiv, a, b); }
inline Var operator-(Var a) { return a.tape->unary(Op::kNeg, a); }

inline Var operator+(Var a, double c) { return a + a.tape->constant(c); }
inline Var operator+(double c, Var a) { return a.tape->constant(c) + a; }
inline Var operator-(Var a, double c) { return a - a.tape->constant(c); }
inline Var operator-(double c, Var a) { return a.tape->constant(c) - a; }
inline Var operator*(Var a, double c) { return a * a.tape->constant(c); }
inline Var operator*(double c, Var a) { return a.tape->constant(c) * a; }
inline Var operator/(Var a, double c) { return a / a.tape->constant(c); }
inline Var operator/(double c, Var a) { return a.tape->constant(c) / a; }

inline Var tanh(Var a) { return a.tape->unary(Op::kTanh, a); }
inline Var exp(Var a) { return a.tape->unary(Op::kExp, a); }
inline Var log(Var a) { return a.tape->unary(Op::kLog, a); }
inline Var sqrt(Var a) { return a.tape->unary(Op::kSqrt, a); }
inline Var sigmoid(Var a) { return a.tape->unary(Op::kSigmoid, a); }
inline Var pow(Var a, double exponent) { return a.tape->pow(a, exponent); }
inline Var abs_smooth(Var a, double eps = 1e-12) { return a.tape->abs_smooth(a, eps); }
inline Var detach(Var a) { return a.tape->detach(a); }

inline Var sq(Var a) { return a * a; }

}  // namespace pflow::ad
