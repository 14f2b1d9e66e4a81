#pragma once

// Small building blocks shared by the scorers and the model: named parameter
// sets and affine layers.

#include "wsx/tensor.hpp"

#include <random>
#include <string>
#include <vector>

namespace wsx {

struct NamedParam {
  std::string name;
  Var var;
};

class ParamSet {
 public:
  void add(std::string name, Var var);
  void append(const std::string& prefix, const ParamSet& other);

  const std::vector<NamedParam>& items() const noexcept { return items_; }
  std::size_t size() const noexcept { return items_.size(); }
  const Var* find(std::string_view name) const;
  std::size_t scalar_count() const;
  void zero_grad() const;

 private:
  std::vector<NamedParam> items_;
};

/// Glorot-uniform matrix (in x out).
Tensor glorot(std::size_t in, std::size_t out, std::mt19937_64& rng);

/// y = x W + b, with W stored (in x out) and x given as rows.
struct Linear {
  Var weight;
  Var bias;

  static Linear init(std::size_t in, std::size_t out, std::mt19937_64& rng);
  Var operator()(const Var& x) const;
  void collect(const std::string& prefix, ParamSet& out) const;
  std::size_t in_dim() const { return weight.shape()[0]; }
  std::size_t out_dim() const { return weight.shape()[1]; }
};

/// Reshapes a vector to a single row; matrices pass through.
Var as_row(const Var& v);

}  // namespace wsx
