#pragma once
#include <cmath>
#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "reppad/tensor.hpp"

namespace reppad {

template <class T>
struct Param {
  std::string name;
  Tensor<T> tensor;
};

// Adam with exact bias correction. Entries whose gradient is exactly zero this step
// keep their value and only decay their moments, so untouched embedding rows stay
// fixed (sparse-friendly).
template <class T>
struct AdamState {
  double lr = 0.001, beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  int64_t step = 0;
  std::map<std::string, std::pair<std::vector<T>, std::vector<T>>> moments;
};

template <class T>
void adam_step(AdamState<T>& state, std::vector<Param<T>>& params) {
  ++state.step;
  double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  T b1 = static_cast<T>(state.beta1), b2 = static_cast<T>(state.beta2);
  for (auto& p : params) {
    auto& mv = state.moments[p.name];
    int64_t n = p.tensor.numel();
    if (mv.first.empty()) {
      mv.first.assign(n, T(0));
      mv.second.assign(n, T(0));
    }
    if (!p.tensor.has_grad()) {  // never touched: moments decay, value fixed
      for (int64_t i = 0; i < n; ++i) {
        mv.first[i] *= b1;
        mv.second[i] *= b2;
      }
      continue;
    }
    const T* g = p.tensor.grad();
    T* x = p.tensor.data();
    for (int64_t i = 0; i < n; ++i) {
      if (!std::isfinite(static_cast<double>(g[i])))
        throw std::runtime_error("adam_step: non-finite gradient in parameter '" +
                                 p.name + "' at entry " + std::to_string(i));
      T m = mv.first[i] * b1;
      T v = mv.second[i] * b2;
      if (g[i] != T(0)) {
        m += static_cast<T>(1.0 - state.beta1) * g[i];
        v += static_cast<T>(1.0 - state.beta2) * g[i] * g[i];
        double mhat = static_cast<double>(m) / bc1;
        double vhat = static_cast<double>(v) / bc2;
        x[i] -= static_cast<T>(state.lr * mhat / (std::sqrt(vhat) + state.eps));
      }
      mv.first[i] = m;
      mv.second[i] = v;
    }
  }
}

// ----------------------------------------------------------------------------
// gradient histogram (log-spaced magnitude buckets with an explicit zero bucket)
// ----------------------------------------------------------------------------

// counts[0]            : exact zeros
// counts[1]            : 0 < |v| <= edges[0]
// counts[i+1]          : edges[i-1] < |v| <= edges[i]
// counts[edges.size()+1]: |v| > edges.back()
inline std::vector<int64_t> grad_histogram(const std::vector<double>& values,
                                           const std::vector<double>& edges) {
  if (edges.empty()) throw std::invalid_argument("grad_histogram: no bucket edges");
  for (size_t i = 0; i + 1 < edges.size(); ++i)
    if (edges[i] >= edges[i + 1])
      throw std::invalid_argument("grad_histogram: edges must be strictly increasing");
  std::vector<int64_t> counts(edges.size() + 2, 0);
  for (double v : values) {
    double a = std::fabs(v);
    if (a == 0.0) {
      ++counts[0];
      continue;
    }
    size_t b = edges.size() + 1;
    for (size_t i = 0; i < edges.size(); ++i) {
      if (a <= edges[i]) {
        b = i + 1;
        break;
      }
    }
    ++counts[b];
  }
  return counts;
}

inline std::vector<double> default_grad_bucket_edges() {
  std::vector<double> e;
  for (int p = -10; p <= -1; ++p) e.push_back(std::pow(10.0, p));
  return e;
}

}  // namespace reppad
