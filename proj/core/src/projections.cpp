#include "wsx/projections.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>

namespace wsx {

namespace {

void require_finite(const char* op, std::span<const double> v) {
  for (double x : v) {
    if (std::isnan(x)) throw Error(std::string(op) + ": NaN in input");
    if (!std::isfinite(x)) throw Error(std::string(op) + ": non-finite value in input");
  }
}

void require_nonempty(const char* op, std::span<const double> v) {
  if (v.empty()) throw Error(std::string(op) + ": empty input");
}

void clamp_tiny(std::vector<double>& w) {
  for (double& x : w)
    if (x < kSimplexClamp) x = 0.0;
}

}  // namespace

std::string_view to_string(ProjectionKind kind) {
  return kind == ProjectionKind::softmax ? "softmax" : "fusedmax";
}

ProjectionKind parse_projection_kind(std::string_view name) {
  if (name == "softmax") return ProjectionKind::softmax;
  if (name == "fusedmax") return ProjectionKind::fusedmax;
  throw Error("unknown projection '" + std::string(name) + "' (expected softmax or fusedmax)");
}

void ProjectionConfig::validate() const {
  if (!(temperature > 0.0)) throw Error("ProjectionConfig: temperature must be > 0");
  if (!(tv_weight > 0.0)) throw Error("ProjectionConfig: tv_weight must be > 0");
}

SimplexVector softmax_project(std::span<const double> scores, const ProjectionConfig& cfg) {
  require_nonempty("softmax_project", scores);
  require_finite("softmax_project", scores);
  cfg.validate();
  const double top = *std::max_element(scores.begin(), scores.end());
  SimplexVector out(scores.size());
  double total = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    out[i] = std::exp((scores[i] - top) / cfg.temperature);
    total += out[i];
  }
  for (double& x : out) x /= total;
  return out;
}

SimplexVector simplex_project(std::span<const double> v) {
  require_nonempty("simplex_project", v);
  require_finite("simplex_project", v);

  // Points already on the simplex are returned as they are.
  const double total = std::accumulate(v.begin(), v.end(), 0.0);
  const bool nonneg = std::all_of(v.begin(), v.end(), [](double x) { return x >= 0.0; });
  if (nonneg && std::abs(total - 1.0) <= 4.0 * std::numeric_limits<double>::epsilon() * double(v.size())) {
    SimplexVector out(v.begin(), v.end());
    clamp_tiny(out);
    return out;
  }

  std::vector<double> u(v.begin(), v.end());
  std::sort(u.begin(), u.end(), std::greater<>());
  double cumsum = 0.0;
  double tau = 0.0;
  for (std::size_t i = 0; i < u.size(); ++i) {
    cumsum += u[i];
    const double t = (cumsum - 1.0) / double(i + 1);
    if (u[i] - t > 0.0) tau = t;
  }
  SimplexVector out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = std::max(v[i] - tau, 0.0);
  clamp_tiny(out);
  return out;
}

std::vector<double> tv_prox(std::span<const double> s, double lambda) {
  require_finite("tv_prox", s);
  if (!(lambda > 0.0)) throw Error("tv_prox: lambda must be > 0");
  const std::size_t n = s.size();
  std::vector<double> out(n);
  if (n == 0) return out;

  // Condat (2013), "A direct algorithm for 1D total variation denoising".
  std::size_t k = 0, k0 = 0, kplus = 0, kminus = 0;
  double umin = lambda, umax = -lambda;
  double vmin = s[0] - lambda, vmax = s[0] + lambda;
  const double twolambda = 2.0 * lambda;
  const double minlambda = -lambda;
  for (;;) {
    while (k == n - 1) {
      if (umin < 0.0) {
        do out[k0++] = vmin; while (k0 <= kminus);
        k = kminus = k0;
        vmin = s[k];
        umin = lambda;
        umax = vmin + umin - vmax;
      } else if (umax > 0.0) {
        do out[k0++] = vmax; while (k0 <= kplus);
        k = kplus = k0;
        vmax = s[k];
        umax = minlambda;
        umin = vmax + umax - vmin;
      } else {
        vmin += umin / double(k - k0 + 1);
        do out[k0++] = vmin; while (k0 <= k);
        return out;
      }
    }
    if ((umin += s[k + 1] - vmin) < minlambda) {
      do out[k0++] = vmin; while (k0 <= kminus);
      k = kplus = kminus = k0;
      vmin = s[k];
      vmax = vmin + twolambda;
      umin = lambda;
      umax = minlambda;
    } else if ((umax += s[k + 1] - vmax) > lambda) {
      do out[k0++] = vmax; while (k0 <= kplus);
      k = kplus = kminus = k0;
      vmax = s[k];
      vmin = vmax - twolambda;
      umin = lambda;
      umax = minlambda;
    } else {
      ++k;
      if (umin >= lambda) {
        kminus = k;
        vmin += (umin - lambda) / double(kminus - k0 + 1);
        umin = lambda;
      }
      if (umax <= minlambda) {
        kplus = k;
        vmax += (umax + lambda) / double(kplus - k0 + 1);
        umax = minlambda;
      }
    }
  }
}

std::vector<std::size_t> constant_segments(std::span<const double> v) {
  std::vector<std::size_t> starts;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i == 0 || v[i] != v[i - 1]) starts.push_back(i);
  }
  return starts;
}

SimplexVector fusedmax_project(std::span<const double> scores, const ProjectionConfig& cfg, FusedmaxState* state) {
  require_nonempty("fusedmax_project", scores);
  require_finite("fusedmax_project", scores);
  cfg.validate();
  std::vector<double> scaled(scores.begin(), scores.end());
  for (double& x : scaled) x /= cfg.temperature;
  const std::vector<double> smooth = tv_prox(scaled, cfg.tv_weight);
  SimplexVector out = simplex_project(smooth);
  if (state) {
    state->segment_start = constant_segments(smooth);
    state->support.assign(out.size(), false);
    for (std::size_t i = 0; i < out.size(); ++i) state->support[i] = out[i] > 0.0;
    state->temperature = cfg.temperature;
  }
  return out;
}

std::vector<double> fusedmax_jvp(const FusedmaxState& state, std::span<const double> upstream) {
  const std::size_t n = state.support.size();
  if (upstream.size() != n) {
    throw Error("fusedmax_jvp: gradient length " + std::to_string(upstream.size()) + " does not match state length " +
                std::to_string(n));
  }
  // Simplex stage: g - mean(g over support), restricted to the support.
  double acc = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (state.support[i]) {
      acc += upstream[i];
      ++count;
    }
  }
  const double mu = count ? acc / double(count) : 0.0;
  std::vector<double> g(n, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    if (state.support[i]) g[i] = upstream[i] - mu;

  // TV stage: average within each constant segment.
  for (std::size_t s = 0; s < state.segment_start.size(); ++s) {
    const std::size_t begin = state.segment_start[s];
    const std::size_t end = s + 1 < state.segment_start.size() ? state.segment_start[s + 1] : n;
    double seg = 0.0;
    for (std::size_t i = begin; i < end; ++i) seg += g[i];
    seg /= double(end - begin);
    for (std::size_t i = begin; i < end; ++i) g[i] = seg;
  }
  for (double& x : g) x /= state.temperature;
  return g;
}

Var softmax(const Var& scores, double temperature) {
  if (scores.size() == 0) throw Error("softmax_project: empty input");
  require_finite("softmax_project", scores.value().data());
  if (!(temperature > 0.0)) throw Error("softmax_project: temperature must be > 0");
  const Shape shape = scores.shape();
  Var row = reshape(scores, {1, scores.size()});
  if (temperature != 1.0) row = scale(row, 1.0 / temperature);
  return reshape(softmax_rows(row), shape);
}

Var fusedmax(const Var& scores, const ProjectionConfig& cfg) {
  CustomOp op = register_custom(
      "fusedmax",
      [cfg](std::span<const Tensor> in) {
        FusedmaxState state;
        SimplexVector w = fusedmax_project(in[0].data(), cfg, &state);
        return CustomForwardResult{Tensor(in[0].shape(), std::move(w)), std::move(state)};
      },
      [](const std::any& saved, std::span<const Tensor> in, const Tensor& upstream) {
        const auto& state = std::any_cast<const FusedmaxState&>(saved);
        return std::vector<Tensor>{Tensor(in[0].shape(), fusedmax_jvp(state, upstream.data()))};
      });
  return op({scores});
}

Var project(const Var& scores, const ProjectionConfig& cfg) {
  cfg.validate();
  return cfg.kind == ProjectionKind::softmax ? softmax(scores, cfg.temperature) : fusedmax(scores, cfg);
}

}  // namespace wsx
