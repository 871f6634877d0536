#include "tcq/common.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <thread>

namespace tcq {

Matrix matmul(const Matrix &a, const Matrix &b) {
  if (a.cols != b.rows)
    throw DimensionError("matmul: inner dimensions differ");
  Matrix c(a.rows, b.cols);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t p = 0; p < a.cols; ++p) {
      const double aip = a(i, p);
      if (aip == 0.0)
        continue;
      for (std::size_t j = 0; j < b.cols; ++j)
        c(i, j) += aip * b(p, j);
    }
  return c;
}

Matrix matmul_tn(const Matrix &a, const Matrix &b) {
  if (a.rows != b.rows)
    throw DimensionError("matmul_tn: row counts differ");
  Matrix c(a.cols, b.cols);
  for (std::size_t p = 0; p < a.rows; ++p)
    for (std::size_t i = 0; i < a.cols; ++i) {
      const double api = a(p, i);
      if (api == 0.0)
        continue;
      for (std::size_t j = 0; j < b.cols; ++j)
        c(i, j) += api * b(p, j);
    }
  return c;
}

Matrix matmul_nt(const Matrix &a, const Matrix &b) {
  if (a.cols != b.cols)
    throw DimensionError("matmul_nt: column counts differ");
  Matrix c(a.rows, b.rows);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < b.rows; ++j) {
      double acc = 0.0;
      for (std::size_t p = 0; p < a.cols; ++p)
        acc += a(i, p) * b(j, p);
      c(i, j) = acc;
    }
  return c;
}

Matrix transpose(const Matrix &a) {
  Matrix t(a.cols, a.rows);
  for (std::size_t i = 0; i < a.rows; ++i)
    for (std::size_t j = 0; j < a.cols; ++j)
      t(j, i) = a(i, j);
  return t;
}

double frobenius_norm(const Matrix &a) {
  double acc = 0.0;
  for (double v : a.data)
    acc += v * v;
  return std::sqrt(acc);
}

double max_abs_diff(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size())
    throw DimensionError("max_abs_diff: length mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  return splitmix64(seed ^ splitmix64(stream));
}

void fill_normal(std::span<double> out, std::uint64_t seed, double sigma) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> dist(0.0, sigma);
  for (double &v : out)
    v = dist(rng);
}

void parallel_for(std::size_t n, unsigned workers,
                  const std::function<void(std::size_t)> &fn) {
  if (n == 0)
    return;
  const std::size_t nw = std::clamp<std::size_t>(workers, 1, n);
  if (nw == 1) {
    for (std::size_t i = 0; i < n; ++i)
      fn(i);
    return;
  }
  std::vector<std::jthread> pool;
  pool.reserve(nw);
  std::vector<std::exception_ptr> errors(nw);
  for (std::size_t w = 0; w < nw; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += nw)
          fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  pool.clear();
  for (auto &e : errors)
    if (e)
      std::rethrow_exception(e);
}

unsigned default_workers() {
  return std::max(1u, std::thread::hardware_concurrency());
}

bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

std::size_t next_power_of_two(std::size_t n) {
  std::size_t p = 1;
  while (p < n)
    p <<= 1;
  return p;
}

} // namespace tcq
