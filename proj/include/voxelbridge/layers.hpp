#pragma once

#include <cmath>
#include <string>

#include "voxelbridge/autograd.hpp"
#include "voxelbridge/rng.hpp"

namespace voxelbridge::nn {

using ad::Graph;
using ad::Matrix;
using ad::ParamStore;
using ad::Var;

template <class T>
Matrix<T> normal_matrix(Eigen::Index rows, Eigen::Index cols, double stddev, Rng& rng) {
  Matrix<T> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = static_cast<T>(rng.normal() * stddev);
  return m;
}

/// Slots of a y = x W + b layer inside a ParamStore.
struct LinearSlots {
  std::size_t weight = 0;
  std::size_t bias = 0;
};

template <class T>
LinearSlots add_linear(ParamStore<T>& store, const std::string& name, int in, int out, Rng& rng, double gain = 1.0) {
  LinearSlots s;
  s.weight = store.add(name + ".weight", normal_matrix<T>(in, out, gain / std::sqrt(static_cast<double>(in)), rng)).slot;
  s.bias = store.add(name + ".bias", Matrix<T>::Zero(1, out)).slot;
  return s;
}

template <class T>
Var apply(Graph<T>& g, ParamStore<T>& store, const LinearSlots& s, Var x) {
  return ad::linear(g, x, g.param(store[s.weight]), g.param(store[s.bias]));
}

struct NormSlots {
  std::size_t gamma = 0;
  std::size_t beta = 0;
};

template <class T>
NormSlots add_norm(ParamStore<T>& store, const std::string& name, int dim) {
  NormSlots s;
  s.gamma = store.add(name + ".gamma", Matrix<T>::Ones(1, dim)).slot;
  s.beta = store.add(name + ".beta", Matrix<T>::Zero(1, dim)).slot;
  return s;
}

template <class T>
Var apply(Graph<T>& g, ParamStore<T>& store, const NormSlots& s, Var x) {
  return ad::layer_norm(g, x, g.param(store[s.gamma]), g.param(store[s.beta]));
}

/// Two-layer perceptron: Linear -> GELU -> Linear.
struct MlpSlots {
  LinearSlots fc1;
  LinearSlots fc2;
};

template <class T>
MlpSlots add_mlp(ParamStore<T>& store, const std::string& name, int in, int hidden, int out, Rng& rng) {
  return {add_linear(store, name + ".fc1", in, hidden, rng), add_linear(store, name + ".fc2", hidden, out, rng)};
}

template <class T>
Var apply(Graph<T>& g, ParamStore<T>& store, const MlpSlots& s, Var x) {
  return apply(g, store, s.fc2, ad::gelu(g, apply(g, store, s.fc1, x)));
}

/// Pre-norm transformer block: x + Attn(LN(x)), then + MLP(LN(.)).
struct BlockSlots {
  NormSlots ln1;
  LinearSlots qkv;
  LinearSlots proj;
  NormSlots ln2;
  MlpSlots mlp;
};

template <class T>
BlockSlots add_block(ParamStore<T>& store, const std::string& name, int width, int mlp_width, int depth, Rng& rng) {
  const double residual_gain = 1.0 / std::sqrt(2.0 * std::max(depth, 1));
  BlockSlots b;
  b.ln1 = add_norm(store, name + ".ln1", width);
  b.qkv = add_linear(store, name + ".attn.qkv", width, 3 * width, rng);
  b.proj = add_linear(store, name + ".attn.proj", width, width, rng, residual_gain);
  b.ln2 = add_norm(store, name + ".ln2", width);
  b.mlp.fc1 = add_linear(store, name + ".mlp.fc1", width, mlp_width, rng);
  b.mlp.fc2 = add_linear(store, name + ".mlp.fc2", mlp_width, width, rng, residual_gain);
  return b;
}

template <class T>
Var apply(Graph<T>& g, ParamStore<T>& store, const BlockSlots& b, Var x, int heads, bool causal) {
  const Var attn = ad::attention(g, apply(g, store, b.qkv, apply(g, store, b.ln1, x)), heads, causal);
  const Var h = ad::add(g, x, apply(g, store, b.proj, attn));
  return ad::add(g, h, apply(g, store, b.mlp, apply(g, store, b.ln2, h)));
}

}  // namespace voxelbridge::nn
