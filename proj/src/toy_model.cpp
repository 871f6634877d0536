#include "tcq/toy_model.hpp"

#include <algorithm>
#include <cmath>

namespace tcq {

ToyModel make_teacher(std::span<const std::size_t> dims, double sigma_w,
                      std::uint64_t seed) {
  if (dims.size() < 2)
    throw ParameterError("toy model needs at least two dimensions");
  for (auto d : dims)
    if (!is_power_of_two(d))
      throw ParameterError("toy model dimensions must be powers of two");
  if (!(sigma_w > 0.0))
    throw ParameterError("sigma_w must be positive");
  ToyModel m;
  const auto base = derive_seed(seed, seed_stream::kTeacherWeights);
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    Matrix w(dims[l + 1], dims[l]);
    fill_normal(w.data, derive_seed(base, l), sigma_w);
    m.weights.push_back(std::move(w));
  }
  return m;
}

Matrix standard_normal_batch(std::size_t n, std::size_t d, std::uint64_t seed) {
  Matrix x(n, d);
  fill_normal(x.data, seed);
  return x;
}

Matrix layer_forward(const Matrix &w, const Matrix &h, bool last) {
  Matrix y = matmul_nt(h, w);
  if (!last)
    for (auto &v : y.data)
      v = std::tanh(v);
  return y;
}

std::vector<Matrix> forward_from(const ToyModel &m, std::size_t from,
                                 const Matrix &h) {
  std::vector<Matrix> acts{h};
  for (std::size_t l = from; l < m.n_layers(); ++l)
    acts.push_back(layer_forward(m.weights[l], acts.back(), m.is_last(l)));
  return acts;
}

std::vector<Matrix> forward_all(const ToyModel &m, const Matrix &x) {
  return forward_from(m, 0, x);
}

namespace {

void log_softmax_row(std::span<const double> z, std::vector<double> &out) {
  const double mx = *std::max_element(z.begin(), z.end());
  double acc = 0.0;
  for (double v : z)
    acc += std::exp(v - mx);
  const double lse = mx + std::log(acc);
  out.resize(z.size());
  for (std::size_t i = 0; i < z.size(); ++i)
    out[i] = z[i] - lse;
}

} // namespace

std::vector<double> kl_per_sample(const Matrix &teacher_logits,
                                  const Matrix &student_logits) {
  if (teacher_logits.rows != student_logits.rows ||
      teacher_logits.cols != student_logits.cols)
    throw DimensionError("logit shapes differ");
  std::vector<double> out(teacher_logits.rows);
  std::vector<double> lp, lq;
  for (std::size_t i = 0; i < teacher_logits.rows; ++i) {
    log_softmax_row(teacher_logits.row(i), lp);
    log_softmax_row(student_logits.row(i), lq);
    double kl = 0.0;
    for (std::size_t j = 0; j < lp.size(); ++j)
      kl += std::exp(lp[j]) * (lp[j] - lq[j]);
    out[i] = kl;
  }
  return out;
}

double mean(std::span<const double> v) {
  if (v.empty())
    throw DimensionError("mean of an empty array");
  double acc = 0.0;
  for (double x : v)
    acc += x;
  return acc / static_cast<double>(v.size());
}

Matrix kl_logit_grad(const Matrix &teacher_logits, const Matrix &student_logits) {
  Matrix g(student_logits.rows, student_logits.cols);
  std::vector<double> lp, lq;
  const double inv_n = 1.0 / static_cast<double>(student_logits.rows);
  for (std::size_t i = 0; i < student_logits.rows; ++i) {
    log_softmax_row(teacher_logits.row(i), lp);
    log_softmax_row(student_logits.row(i), lq);
    for (std::size_t j = 0; j < lp.size(); ++j)
      g(i, j) = (std::exp(lq[j]) - std::exp(lp[j])) * inv_n;
  }
  return g;
}

Matrix layer_weight_grad(const Matrix &h, const Matrix &y, const Matrix &dy,
                         bool last) {
  Matrix dz = dy;
  if (!last)
    for (std::size_t i = 0; i < dz.size(); ++i)
      dz.data[i] *= 1.0 - y.data[i] * y.data[i];
  return matmul_tn(dz, h);
}

Matrix backprop_to_layer(const ToyModel &m, std::size_t from,
                         const std::vector<Matrix> &acts, const Matrix &d_out) {
  Matrix d = d_out;
  for (std::size_t l = m.n_layers(); l-- > from;) {
    const std::size_t i = l - from;
    const Matrix &h = acts[i];
    const Matrix &y = acts[i + 1];
    if (l == from)
      return layer_weight_grad(h, y, d, m.is_last(l));
    Matrix dz = d;
    if (!m.is_last(l))
      for (std::size_t j = 0; j < dz.size(); ++j)
        dz.data[j] *= 1.0 - y.data[j] * y.data[j];
    d = matmul(dz, m.weights[l]);
  }
  throw ParameterError("layer index out of range");
}

} // namespace tcq
