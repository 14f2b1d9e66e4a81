#pragma once

// Projections of score vectors onto the probability simplex.
//
// softmax  : negative-entropy regularizer, closed form exp(s/T)/sum.
// fusedmax : squared norm plus fused lasso, computed as
//            simplex_project(tv_prox(s / T, tv_weight)).

#include "wsx/tensor.hpp"

#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace wsx {

enum class ProjectionKind { softmax, fusedmax };

std::string_view to_string(ProjectionKind kind);
ProjectionKind parse_projection_kind(std::string_view name);

struct ProjectionConfig {
  ProjectionKind kind = ProjectionKind::softmax;
  double temperature = 1.0;
  double tv_weight = 1.0;

  void validate() const;
};

/// Weights on the simplex. Entries below kSimplexClamp are stored as exact zeros.
using SimplexVector = std::vector<double>;

inline constexpr double kSimplexClamp = 1e-12;

SimplexVector softmax_project(std::span<const double> scores, const ProjectionConfig& cfg);

/// Euclidean projection onto the simplex (sort and threshold).
SimplexVector simplex_project(std::span<const double> v);

/// argmin_y 0.5*||y - s||^2 + lambda * sum |y[d+1] - y[d]|, by Condat's direct method.
std::vector<double> tv_prox(std::span<const double> s, double lambda);

/// Everything fusedmax_jvp needs from a forward pass.
struct FusedmaxState {
  std::vector<std::size_t> segment_start;  // first index of each constant TV segment
  std::vector<bool> support;               // simplex support mask
  double temperature = 1.0;
};

SimplexVector fusedmax_project(std::span<const double> scores, const ProjectionConfig& cfg,
                               FusedmaxState* state = nullptr);

/// Vector-Jacobian product of fusedmax at the saved point. The generalized
/// Jacobian is symmetric, so this is also the JVP.
std::vector<double> fusedmax_jvp(const FusedmaxState& state, std::span<const double> upstream);

/// Maximal runs of exactly equal values in v.
std::vector<std::size_t> constant_segments(std::span<const double> v);

// Differentiable versions operating on a score vector (any shape; flattened).
Var softmax(const Var& scores, double temperature = 1.0);
Var fusedmax(const Var& scores, const ProjectionConfig& cfg);
Var project(const Var& scores, const ProjectionConfig& cfg);

}  // namespace wsx
