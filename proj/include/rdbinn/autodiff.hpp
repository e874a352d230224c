#pragma once
#include <array>
#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

#include "rdbinn/errors.hpp"

namespace rdbinn::ad {

// Second-order forward-mode number tracking K input directions: the value,
// first directional derivatives d1[i], and pure second directional
// derivatives d2[i]. Mixed partials are outside the contract; the PDE
// residual is expanded so it never needs them.
template <int K>
struct Dual {
  double v = 0.0;
  std::array<double, K> d1{};
  std::array<double, K> d2{};
};

// Value, first, second and third derivative of a scalar primitive at a
// point. The third derivative feeds the reverse sweep through second-order
// forward components.
struct Prim {
  double g0, g1, g2, g3;
};

inline double sigmoid(double x) {
  if (x >= 0.0) {
    const double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Prim silu_prim(double x) {
  const double s = sigmoid(x);
  const double s1 = s * (1.0 - s);
  const double s2 = s1 * (1.0 - 2.0 * s);
  const double s3 = s2 * (1.0 - 2.0 * s) - 2.0 * s1 * s1;
  return {x * s, s + x * s1, 2.0 * s1 + x * s2, 3.0 * s2 + x * s3};
}

inline Prim softplus_prim(double x) {
  const double s = sigmoid(x);
  const double s1 = s * (1.0 - s);
  const double s2 = s1 * (1.0 - 2.0 * s);
  const double v = x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x));
  return {v, s, s1, s2};
}

inline Prim exp_prim(double x) {
  const double e = std::exp(x);
  return {e, e, e, e};
}

inline Prim square_prim(double x) { return {x * x, 2.0 * x, 2.0, 0.0}; }

// ---- Dual arithmetic (shared by the standalone forward mode and the tape) ----

template <int K>
inline Dual<K> dual_add(const Dual<K>& a, const Dual<K>& b) {
  Dual<K> c;
  c.v = a.v + b.v;
  for (int i = 0; i < K; ++i) {
    c.d1[i] = a.d1[i] + b.d1[i];
    c.d2[i] = a.d2[i] + b.d2[i];
  }
  return c;
}

template <int K>
inline Dual<K> dual_sub(const Dual<K>& a, const Dual<K>& b) {
  Dual<K> c;
  c.v = a.v - b.v;
  for (int i = 0; i < K; ++i) {
    c.d1[i] = a.d1[i] - b.d1[i];
    c.d2[i] = a.d2[i] - b.d2[i];
  }
  return c;
}

template <int K>
inline Dual<K> dual_mul(const Dual<K>& a, const Dual<K>& b) {
  Dual<K> c;
  c.v = a.v * b.v;
  for (int i = 0; i < K; ++i) {
    c.d1[i] = a.d1[i] * b.v + a.v * b.d1[i];
    c.d2[i] = a.d2[i] * b.v + 2.0 * a.d1[i] * b.d1[i] + a.v * b.d2[i];
  }
  return c;
}

template <int K>
inline Dual<K> dual_scale(const Dual<K>& a, double k) {
  Dual<K> c;
  c.v = a.v * k;
  for (int i = 0; i < K; ++i) {
    c.d1[i] = a.d1[i] * k;
    c.d2[i] = a.d2[i] * k;
  }
  return c;
}

template <int K>
inline Dual<K> dual_neg(const Dual<K>& a) {
  return dual_scale(a, -1.0);
}

template <int K>
inline Dual<K> dual_addc(const Dual<K>& a, double k) {
  Dual<K> c = a;
  c.v += k;
  return c;
}

// Second-order chain rule c = g(a) given g's derivatives at a.v.
template <int K>
inline Dual<K> dual_unary(const Dual<K>& a, const Prim& g) {
  Dual<K> c;
  c.v = g.g0;
  for (int i = 0; i < K; ++i) {
    c.d1[i] = g.g1 * a.d1[i];
    c.d2[i] = g.g2 * a.d1[i] * a.d1[i] + g.g1 * a.d2[i];
  }
  return c;
}

template <int K>
inline Dual<K> dual_silu(const Dual<K>& a) { return dual_unary(a, silu_prim(a.v)); }
template <int K>
inline Dual<K> dual_softplus(const Dual<K>& a) { return dual_unary(a, softplus_prim(a.v)); }
template <int K>
inline Dual<K> dual_exp(const Dual<K>& a) { return dual_unary(a, exp_prim(a.v)); }
template <int K>
inline Dual<K> dual_square(const Dual<K>& a) { return dual_unary(a, square_prim(a.v)); }

// ---- Tape ----

enum class Op : std::uint8_t {
  kLeaf,       // parameter or constant; no inputs
  kInput,      // leaf carrying a d1 seed on one axis
  kAdd, kSub, kMul,
  kNeg, kMulC, kAddC,
  kSquare, kSiLU, kSoftplus, kExp,
  kDense,      // b_row + sum_j w_j x_j over contiguous weight/input ranges
  kExtractV,   // scalar view of a component; passive in forward directions
  kExtractD1,
  kExtractD2,
};

// Reverse-over-forward tape. Forward values are Dual<K>; the reverse sweep
// propagates Dual<K> adjoints, so gradients of any loss assembled from
// values, first or second input derivatives are exact to machine precision.
//
// Usage pattern for batched losses: push all parameter leaves, mark(), then
// per sample rewind(mark), build the sample subgraph and call backward();
// leaf adjoints accumulate across samples until zero_leaf_adjoints().
template <int K>
class Tape {
 public:
  using Id = std::int32_t;

  Tape() { reserve(1 << 12); }

  void reserve(std::size_t n) {
    nodes_.reserve(n);
    vals_.reserve(n);
    adj_.reserve(n);
    prim_.reserve(n);
  }

  void clear() {
    nodes_.clear();
    vals_.clear();
    adj_.clear();
    prim_.clear();
  }

  Id size() const { return static_cast<Id>(nodes_.size()); }
  Id mark() const { return size(); }

  // Drops every node at or above `m`. Leaf adjoints below `m` are kept.
  void rewind(Id m) {
    nodes_.resize(m);
    vals_.resize(m);
    adj_.resize(m);
    prim_.resize(m);
  }

  Id leaf(double v) {
    Dual<K> d;
    d.v = v;
    return push({Op::kLeaf, -1, -1, 0, 0.0}, d);
  }

  Id input(double v, int axis) {
    Dual<K> d;
    d.v = v;
    d.d1[axis] = 1.0;
    return push({Op::kInput, -1, -1, 0, 0.0}, d);
  }

  Id add(Id a, Id b) { return push({Op::kAdd, a, b, 0, 0.0}, dual_add(vals_[a], vals_[b])); }
  Id sub(Id a, Id b) { return push({Op::kSub, a, b, 0, 0.0}, dual_sub(vals_[a], vals_[b])); }
  Id mul(Id a, Id b) { return push({Op::kMul, a, b, 0, 0.0}, dual_mul(vals_[a], vals_[b])); }
  Id neg(Id a) { return push({Op::kNeg, a, -1, 0, 0.0}, dual_neg(vals_[a])); }
  Id mulc(Id a, double k) { return push({Op::kMulC, a, -1, 0, k}, dual_scale(vals_[a], k)); }
  Id addc(Id a, double k) { return push({Op::kAddC, a, -1, 0, k}, dual_addc(vals_[a], k)); }

  Id square(Id a) { return unary(Op::kSquare, a, square_prim(vals_[a].v)); }
  Id silu(Id a) { return unary(Op::kSiLU, a, silu_prim(vals_[a].v)); }
  Id softplus(Id a) { return unary(Op::kSoftplus, a, softplus_prim(vals_[a].v)); }
  Id exp(Id a) { return unary(Op::kExp, a, exp_prim(vals_[a].v)); }

  // out = vals[w0+n].v (bias) + sum_{j<n} vals[w0+j].v * vals[x0+j].
  // Weights and bias must be passive leaves (their dual parts are ignored);
  // the inputs x0..x0+n-1 must be contiguous.
  Id dense_row(Id w0, int n, Id x0) {
    Dual<K> c;
    c.v = vals_[w0 + n].v;
    for (int j = 0; j < n; ++j) {
      const double w = vals_[w0 + j].v;
      const Dual<K>& x = vals_[x0 + j];
      c.v += w * x.v;
      for (int i = 0; i < K; ++i) {
        c.d1[i] += w * x.d1[i];
        c.d2[i] += w * x.d2[i];
      }
    }
    return push({Op::kDense, w0, x0, n, 0.0}, c);
  }

  Id extract_value(Id a) {
    Dual<K> c;
    c.v = vals_[a].v;
    return push({Op::kExtractV, a, -1, 0, 0.0}, c);
  }

  Id extract_d1(Id a, int axis) {
    Dual<K> c;
    c.v = vals_[a].d1[axis];
    return push({Op::kExtractD1, a, -1, axis, 0.0}, c);
  }

  Id extract_d2(Id a, int axis) {
    Dual<K> c;
    c.v = vals_[a].d2[axis];
    return push({Op::kExtractD2, a, -1, axis, 0.0}, c);
  }

  double value(Id a) const { return vals_[a].v; }
  const Dual<K>& dual(Id a) const { return vals_[a]; }

  // d(seed * value(loss)) / d(leaf values), accumulated into the adjoints.
  // Reverse sweep over [low, loss]; references below `low` are terminal
  // (leaves/parameters). The caller is responsible for zeroing the adjoints
  // of [low, loss] range nodes — rewind() and push() do it automatically,
  // and leaf adjoints persist to accumulate across backward() calls.
  void backward(Id loss, double seed, Id low = 0) {
    adj_[loss].v += seed;
    for (Id id = loss; id >= low; --id) {
      const Node& n = nodes_[id];
      const Dual<K>& cb = adj_[id];
      if (!nonzero(cb)) continue;
      switch (n.op) {
        case Op::kLeaf:
        case Op::kInput:
          break;
        case Op::kAdd:
          axpy(adj_[n.a], cb, 1.0);
          axpy(adj_[n.b], cb, 1.0);
          break;
        case Op::kSub:
          axpy(adj_[n.a], cb, 1.0);
          axpy(adj_[n.b], cb, -1.0);
          break;
        case Op::kNeg:
          axpy(adj_[n.a], cb, -1.0);
          break;
        case Op::kMulC:
          axpy(adj_[n.a], cb, n.c);
          break;
        case Op::kAddC:
          axpy(adj_[n.a], cb, 1.0);
          break;
        case Op::kMul:
          mul_reverse(adj_[n.a], cb, vals_[n.b]);
          mul_reverse(adj_[n.b], cb, vals_[n.a]);
          break;
        case Op::kSquare:
        case Op::kSiLU:
        case Op::kSoftplus:
        case Op::kExp:
          unary_reverse(adj_[n.a], cb, vals_[n.a], prim_[id]);
          break;
        case Op::kDense: {
          const Id w0 = n.a, x0 = n.b;
          const int cnt = n.aux;
          for (int j = 0; j < cnt; ++j) {
            const double w = vals_[w0 + j].v;
            const Dual<K>& x = vals_[x0 + j];
            Dual<K>& xb = adj_[x0 + j];
            double wdot = cb.v * x.v;
            xb.v += w * cb.v;
            for (int i = 0; i < K; ++i) {
              xb.d1[i] += w * cb.d1[i];
              xb.d2[i] += w * cb.d2[i];
              wdot += cb.d1[i] * x.d1[i] + cb.d2[i] * x.d2[i];
            }
            adj_[w0 + j].v += wdot;
          }
          adj_[w0 + cnt].v += cb.v;  // bias
          break;
        }
        case Op::kExtractV:
          adj_[n.a].v += cb.v;
          break;
        case Op::kExtractD1:
          adj_[n.a].d1[n.aux] += cb.v;
          break;
        case Op::kExtractD2:
          adj_[n.a].d2[n.aux] += cb.v;
          break;
      }
    }
  }

  // Gradient of the swept losses with respect to leaf `id`'s value.
  double adjoint_value(Id id) const { return adj_[id].v; }

  void zero_leaf_adjoints(Id up_to) {
    for (Id i = 0; i < up_to; ++i) adj_[i] = Dual<K>{};
  }

 private:
  struct Node {
    Op op;
    Id a, b;
    int aux;    // dense: input count; extract: axis
    double c;   // mulc/addc constant
  };

  Id push(const Node& n, const Dual<K>& v) {
    nodes_.push_back(n);
    vals_.push_back(v);
    adj_.push_back(Dual<K>{});
    prim_.push_back(Prim{});
    return static_cast<Id>(nodes_.size() - 1);
  }

  Id unary(Op op, Id a, const Prim& p) {
    const Id id = push({op, a, -1, 0, 0.0}, dual_unary(vals_[a], p));
    prim_[id] = p;
    return id;
  }

  static bool nonzero(const Dual<K>& d) {
    if (d.v != 0.0) return true;
    for (int i = 0; i < K; ++i)
      if (d.d1[i] != 0.0 || d.d2[i] != 0.0) return true;
    return false;
  }

  static void axpy(Dual<K>& acc, const Dual<K>& src, double k) {
    acc.v += k * src.v;
    for (int i = 0; i < K; ++i) {
      acc.d1[i] += k * src.d1[i];
      acc.d2[i] += k * src.d2[i];
    }
  }

  // Reverse rule of c = a*b with respect to a, given the adjoint of c and
  // the forward dual of b. Mirrors the component structure of dual_mul.
  static void mul_reverse(Dual<K>& ab, const Dual<K>& cb, const Dual<K>& b) {
    double v_acc = cb.v * b.v;
    for (int i = 0; i < K; ++i) {
      v_acc += cb.d1[i] * b.d1[i] + cb.d2[i] * b.d2[i];
      ab.d1[i] += cb.d1[i] * b.v + 2.0 * cb.d2[i] * b.d1[i];
      ab.d2[i] += cb.d2[i] * b.v;
    }
    ab.v += v_acc;
  }

  // Reverse rule of c = g(a). The d2 components of c depend on a.v through
  // g'' and g''', hence the third derivative in the value adjoint.
  static void unary_reverse(Dual<K>& ab, const Dual<K>& cb, const Dual<K>& a,
                            const Prim& g) {
    double v_acc = cb.v * g.g1;
    for (int i = 0; i < K; ++i) {
      v_acc += cb.d1[i] * g.g2 * a.d1[i] +
               cb.d2[i] * (g.g3 * a.d1[i] * a.d1[i] + g.g2 * a.d2[i]);
      ab.d1[i] += cb.d1[i] * g.g1 + 2.0 * cb.d2[i] * g.g2 * a.d1[i];
      ab.d2[i] += cb.d2[i] * g.g1;
    }
    ab.v += v_acc;
  }

  std::vector<Node> nodes_;
  std::vector<Dual<K>> vals_;
  std::vector<Dual<K>> adj_;
  std::vector<Prim> prim_;
};

}  // namespace rdbinn::ad
