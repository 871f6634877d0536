#pragma once

#include "tcq/common.hpp"

namespace tcq {

// Dense tanh MLP with a softmax head. Layer l maps d_l -> d_{l+1} and is
// stored d_{l+1} x d_l; hidden layers apply tanh, the last emits logits.
// Activations are row-major batches (one sample per row).
struct ToyModel {
  std::vector<Matrix> weights;

  std::size_t n_layers() const { return weights.size(); }
  std::size_t d_in() const { return weights.front().cols; }
  std::size_t d_out() const { return weights.back().rows; }
  bool is_last(std::size_t layer) const { return layer + 1 == weights.size(); }
};

// Weights iid N(0, sigma_w^2); layer l draws from
// derive_seed(derive_seed(seed, kTeacherWeights), l). Dimensions must be
// powers of two.
ToyModel make_teacher(std::span<const std::size_t> dims, double sigma_w,
                      std::uint64_t seed);

Matrix standard_normal_batch(std::size_t n, std::size_t d, std::uint64_t seed);

// One layer: tanh(h W^T), or h W^T for the last layer.
Matrix layer_forward(const Matrix &w, const Matrix &h, bool last);

// acts[0] = x, acts[l + 1] = output of layer l (acts.back() are logits).
std::vector<Matrix> forward_all(const ToyModel &m, const Matrix &x);

// Runs layers [from, n_layers) starting at activation h.
std::vector<Matrix> forward_from(const ToyModel &m, std::size_t from,
                                 const Matrix &h);

// Per-sample KL(softmax(teacher) || softmax(student)).
std::vector<double> kl_per_sample(const Matrix &teacher_logits,
                                  const Matrix &student_logits);
double mean(std::span<const double> v);

// d(mean KL)/d(student logits).
Matrix kl_logit_grad(const Matrix &teacher_logits, const Matrix &student_logits);

// Backpropagates a logit gradient down to the weights of layer `from`. `acts` holds the
// activations of forward_from(m, from, h): acts[0] = h, acts[i + 1] = output
// of layer from + i. Returns dL/dW_from.
Matrix backprop_to_layer(const ToyModel &m, std::size_t from,
                         const std::vector<Matrix> &acts, const Matrix &d_out);

// Gradient of a layer given its input h, output y and dL/dy.
Matrix layer_weight_grad(const Matrix &h, const Matrix &y, const Matrix &dy,
                         bool last);

} // namespace tcq
