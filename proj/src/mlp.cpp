#include "rdbinn/mlp.hpp"

#include <cmath>
#include <json.hpp>

#include "rdbinn/errors.hpp"

namespace rdbinn {

using nlohmann::json;

std::string activation_name(Activation a) {
  switch (a) {
    case Activation::kSiLU: return "silu";
    case Activation::kSoftplus: return "softplus";
    case Activation::kLinear: return "linear";
  }
  return "linear";
}

Activation activation_from_name(const std::string& name) {
  if (name == "silu") return Activation::kSiLU;
  if (name == "softplus") return Activation::kSoftplus;
  if (name == "linear") return Activation::kLinear;
  throw InputError("unknown activation '" + name + "'");
}

void Network::validate() const {
  if (layers.empty()) throw InputError("network has no layers");
  for (std::size_t k = 0; k < layers.size(); ++k) {
    if (layers[k].in <= 0 || layers[k].out <= 0)
      throw InputError("network layer " + std::to_string(k) + " has non-positive width");
    if (k > 0 && layers[k].in != layers[k - 1].out)
      throw InputError("network layer " + std::to_string(k) + " input width mismatch");
  }
  if (params.size() != param_count())
    throw InputError("network parameter vector has " + std::to_string(params.size()) +
                     " entries, layer spec needs " + std::to_string(param_count()));
}

Network make_mlp(int in_dim, const std::vector<int>& hidden, Activation hidden_act,
                 Activation out_act) {
  Network net;
  int prev = in_dim;
  for (int h : hidden) {
    net.layers.push_back({prev, h, hidden_act});
    prev = h;
  }
  net.layers.push_back({prev, 1, out_act});
  net.params.assign(net.param_count(), 0.0);
  return net;
}

Network make_density_net() {
  return make_mlp(3, {64, 64, 64}, Activation::kSiLU, Activation::kSoftplus);
}

Network make_diffusion_net() {
  return make_mlp(1, {4, 4, 4}, Activation::kSiLU, Activation::kSoftplus);
}

Network make_growth_net() {
  return make_mlp(1, {4, 4, 4}, Activation::kSiLU, Activation::kLinear);
}

void init_params(Network& net, Rng& rng) {
  net.params.assign(net.param_count(), 0.0);
  std::size_t off = 0;
  for (const LayerSpec& l : net.layers) {
    const double limit = std::sqrt(6.0 / (l.in + l.out));
    for (int n = 0; n < l.out; ++n) {
      double* w = net.params.data() + off + std::size_t(n) * (l.in + 1);
      for (int j = 0; j < l.in; ++j) w[j] = rng.uniform(-limit, limit);
      w[l.in] = 0.0;
    }
    off += std::size_t(l.in + 1) * l.out;
  }
}

Evaluator::Evaluator(const Network& net) : net_(&net) {
  std::size_t widest = net.input_dim();
  for (const auto& l : net.layers) widest = std::max(widest, std::size_t(l.out));
  buf_a_.resize(widest);
  buf_b_.resize(widest);
}

double Evaluator::operator()(std::span<const double> x) {
  double* cur = buf_a_.data();
  double* nxt = buf_b_.data();
  for (std::size_t i = 0; i < x.size(); ++i) cur[i] = x[i];
  std::size_t off = 0;
  for (const LayerSpec& l : net_->layers) {
    const double* w = net_->params.data() + off;
    for (int n = 0; n < l.out; ++n, w += l.in + 1) {
      double acc = w[l.in];
      for (int j = 0; j < l.in; ++j) acc += w[j] * cur[j];
      switch (l.act) {
        case Activation::kSiLU: acc = acc * ad::sigmoid(acc); break;
        case Activation::kSoftplus:
          acc = acc > 0.0 ? acc + std::log1p(std::exp(-acc)) : std::log1p(std::exp(acc));
          break;
        case Activation::kLinear: break;
      }
      nxt[n] = acc;
    }
    std::swap(cur, nxt);
    off += std::size_t(l.in + 1) * l.out;
  }
  return cur[0];
}

double Evaluator::eval1(double x) {
  return (*this)(std::span<const double>(&x, 1));
}

std::string network_to_json(const Network& net) {
  json j;
  j["layers"] = json::array();
  for (const auto& l : net.layers)
    j["layers"].push_back({{"in", l.in}, {"out", l.out}, {"act", activation_name(l.act)}});
  j["params"] = net.params;
  return j.dump(2);
}

Network network_from_json(const std::string& text, const std::string& context) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw InputError(context + ": invalid JSON: " + e.what());
  }
  Network net;
  try {
    for (const auto& lj : j.at("layers")) {
      LayerSpec l;
      l.in = lj.at("in").get<int>();
      l.out = lj.at("out").get<int>();
      l.act = activation_from_name(lj.at("act").get<std::string>());
      net.layers.push_back(l);
    }
    net.params = j.at("params").get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw InputError(context + ": bad network checkpoint: " + e.what());
  }
  net.validate();
  return net;
}

}  // namespace rdbinn
