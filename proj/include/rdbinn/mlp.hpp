#pragma once
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "rdbinn/autodiff.hpp"
#include "rdbinn/rng.hpp"

namespace rdbinn {

enum class Activation { kSiLU, kSoftplus, kLinear };

std::string activation_name(Activation a);
Activation activation_from_name(const std::string& name);

struct LayerSpec {
  int in = 0;
  int out = 0;
  Activation act = Activation::kLinear;
};

// Fully connected feed-forward network. Parameters are stored layer-major;
// within a layer, per output neuron: its weights, then its bias. Every
// dense-row push onto the tape relies on that contiguity.
struct Network {
  std::vector<LayerSpec> layers;
  std::vector<double> params;

  int input_dim() const { return layers.front().in; }
  int output_dim() const { return layers.back().out; }
  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += std::size_t(l.in + 1) * l.out;
    return n;
  }
  // Start of layer k's block within params.
  std::size_t layer_offset(std::size_t k) const {
    std::size_t off = 0;
    for (std::size_t i = 0; i < k; ++i)
      off += std::size_t(layers[i].in + 1) * layers[i].out;
    return off;
  }

  void validate() const;
};

// Scalar-output MLP with the given hidden widths.
Network make_mlp(int in_dim, const std::vector<int>& hidden, Activation hidden_act,
                 Activation out_act);

// The three surrogate roles: density (x1,x2,t) -> u with non-negative
// output, diffusivity u -> D likewise, per-capita growth u -> G unbounded.
Network make_density_net();
Network make_diffusion_net();
Network make_growth_net();

// Glorot-uniform weights, zero biases.
void init_params(Network& net, Rng& rng);

// Plain forward pass; scratch buffers live in the evaluator so per-point
// calls do not allocate.
class Evaluator {
 public:
  explicit Evaluator(const Network& net);
  double operator()(std::span<const double> x);
  double eval1(double x);

 private:
  const Network* net_;
  std::vector<double> buf_a_, buf_b_;
};

std::string network_to_json(const Network& net);
Network network_from_json(const std::string& text, const std::string& context);

// ---- Second-order forward evaluation (no tape) ----

template <int K>
struct DualWork {
  std::vector<ad::Dual<K>> a, b;
};

template <int K>
ad::Dual<K> eval_dual(const Network& net, std::span<const ad::Dual<K>> x,
                      DualWork<K>& work) {
  auto* cur = &work.a;
  auto* nxt = &work.b;
  cur->assign(x.begin(), x.end());
  std::size_t off = 0;
  for (const LayerSpec& l : net.layers) {
    nxt->resize(l.out);
    for (int n = 0; n < l.out; ++n) {
      const double* w = net.params.data() + off + std::size_t(n) * (l.in + 1);
      ad::Dual<K> acc;
      acc.v = w[l.in];
      for (int j = 0; j < l.in; ++j) {
        const ad::Dual<K>& xx = (*cur)[j];
        acc.v += w[j] * xx.v;
        for (int i = 0; i < K; ++i) {
          acc.d1[i] += w[j] * xx.d1[i];
          acc.d2[i] += w[j] * xx.d2[i];
        }
      }
      switch (l.act) {
        case Activation::kSiLU: (*nxt)[n] = ad::dual_silu(acc); break;
        case Activation::kSoftplus: (*nxt)[n] = ad::dual_softplus(acc); break;
        case Activation::kLinear: (*nxt)[n] = acc; break;
      }
    }
    std::swap(cur, nxt);
    off += std::size_t(l.in + 1) * l.out;
  }
  return (*cur)[0];
}

// ---- Tape registration ----

// Pushes every parameter as a leaf, in storage order; returns the base id.
template <int K>
typename ad::Tape<K>::Id tape_params(ad::Tape<K>& t, const Network& net) {
  const auto base = t.size();
  for (double p : net.params) t.leaf(p);
  return base;
}

// Builds the network subgraph on the tape. `x0` must be the first of
// input_dim() contiguous nodes. Returns the output node (output_dim() == 1).
template <int K>
typename ad::Tape<K>::Id tape_forward(ad::Tape<K>& t, const Network& net,
                                      typename ad::Tape<K>::Id params_base,
                                      typename ad::Tape<K>::Id x0) {
  using Id = typename ad::Tape<K>::Id;
  Id cur = x0;
  std::size_t off = 0;
  for (const LayerSpec& l : net.layers) {
    Id first_pre = -1;
    for (int n = 0; n < l.out; ++n) {
      const Id w0 = params_base + static_cast<Id>(off + std::size_t(n) * (l.in + 1));
      const Id pre = t.dense_row(w0, l.in, cur);
      if (n == 0) first_pre = pre;
    }
    Id first_out = first_pre;
    if (l.act != Activation::kLinear) {
      for (int n = 0; n < l.out; ++n) {
        const Id a = l.act == Activation::kSiLU ? t.silu(first_pre + n)
                                                : t.softplus(first_pre + n);
        if (n == 0) first_out = a;
      }
    }
    cur = first_out;
    off += std::size_t(l.in + 1) * l.out;
  }
  return cur;
}

// Copies d(loss)/d(param) out of the tape's leaf adjoints.
template <int K>
void copy_param_grads(const ad::Tape<K>& t, typename ad::Tape<K>::Id base,
                      std::span<double> grad) {
  for (std::size_t i = 0; i < grad.size(); ++i)
    grad[i] = t.adjoint_value(base + static_cast<typename ad::Tape<K>::Id>(i));
}

}  // namespace rdbinn
