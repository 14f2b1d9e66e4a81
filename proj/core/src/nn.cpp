#include "wsx/nn.hpp"

#include <cmath>

namespace wsx {

void ParamSet::add(std::string name, Var var) {
  if (!var.requires_grad()) throw Error("ParamSet: '" + name + "' is not trainable");
  if (find(name)) throw Error("ParamSet: duplicate parameter '" + name + "'");
  items_.push_back({std::move(name), std::move(var)});
}

void ParamSet::append(const std::string& prefix, const ParamSet& other) {
  for (const auto& p : other.items_) add(prefix + p.name, p.var);
}

const Var* ParamSet::find(std::string_view name) const {
  for (const auto& p : items_)
    if (p.name == name) return &p.var;
  return nullptr;
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : items_) n += p.var.size();
  return n;
}

void ParamSet::zero_grad() const {
  for (auto p : items_) p.var.zero_grad();
}

Tensor glorot(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  const double limit = std::sqrt(6.0 / double(in + out));
  std::uniform_real_distribution<double> u(-limit, limit);
  Tensor t({in, out});
  for (auto& x : t.values()) x = u(rng);
  return t;
}

Linear Linear::init(std::size_t in, std::size_t out, std::mt19937_64& rng) {
  return Linear{Var::parameter(glorot(in, out, rng)), Var::parameter(Tensor({out}, 0.0))};
}

Var Linear::operator()(const Var& x) const { return add_row(matmul(as_row(x), weight), bias); }

void Linear::collect(const std::string& prefix, ParamSet& out) const {
  out.add(prefix + ".weight", weight);
  out.add(prefix + ".bias", bias);
}

Var as_row(const Var& v) { return v.shape().size() == 1 ? reshape(v, {1, v.size()}) : v; }

}  // namespace wsx
