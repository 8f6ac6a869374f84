#include "support/oracles.hpp"

#include <cmath>
#include <stdexcept>

namespace oracles {

double nt_xent_enum(const std::vector<double>& z, std::int64_t rows, std::int64_t d, double tau) {
  if (static_cast<std::int64_t>(z.size()) != rows * d) throw std::invalid_argument("nt_xent_enum: size mismatch");
  std::vector<double> u(z.size());
  for (std::int64_t i = 0; i < rows; ++i) {
    double nrm = 0;
    for (std::int64_t c = 0; c < d; ++c) nrm += z[i * d + c] * z[i * d + c];
    nrm = std::sqrt(nrm);
    for (std::int64_t c = 0; c < d; ++c) u[i * d + c] = z[i * d + c] / nrm;
  }
  auto cos_ij = [&](std::int64_t i, std::int64_t j) {
    double s = 0;
    for (std::int64_t c = 0; c < d; ++c) s += u[i * d + c] * u[j * d + c];
    return s;
  };
  double acc = 0;
  for (std::int64_t i = 0; i < rows; ++i) {
    double denom = 0;
    for (std::int64_t k = 0; k < rows; ++k)
      if (k != i) denom += std::exp(cos_ij(i, k) / tau);
    const double num = std::exp(cos_ij(i, i ^ 1) / tau);
    acc += -std::log(num / denom);
  }
  return acc / static_cast<double>(rows);
}

namespace {

std::vector<double> softmax_row(const double* row, std::int64_t k, double tau) {
  std::vector<double> p(static_cast<std::size_t>(k));
  double denom = 0;
  for (std::int64_t j = 0; j < k; ++j) denom += std::exp(row[j] / tau);
  for (std::int64_t j = 0; j < k; ++j) p[static_cast<std::size_t>(j)] = std::exp(row[j] / tau) / denom;
  return p;
}

}  // namespace

double cross_entropy_enum(const std::vector<double>& logits, const std::vector<int>& labels, std::int64_t n,
                          std::int64_t k) {
  double acc = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    const auto p = softmax_row(logits.data() + i * k, k, 1.0);
    acc += -std::log(p[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])]);
  }
  return acc / static_cast<double>(n);
}

double kd_enum(const std::vector<double>& teacher, const std::vector<double>& student, std::int64_t n, std::int64_t k,
               double tau) {
  double acc = 0;
  for (std::int64_t i = 0; i < n; ++i) {
    const auto p = softmax_row(teacher.data() + i * k, k, tau);
    const auto q = softmax_row(student.data() + i * k, k, tau);
    for (std::int64_t j = 0; j < k; ++j) {
      const auto ju = static_cast<std::size_t>(j);
      acc += p[ju] * (std::log(p[ju]) - std::log(q[ju]));
    }
  }
  return tau * tau * acc / static_cast<double>(n);
}

double distill_enum(const std::vector<double>& teacher, const std::vector<double>& student, std::int64_t n,
                    std::int64_t k, double tau, double alpha, const std::vector<int>& labels) {
  const double ce = alpha > 0 ? cross_entropy_enum(student, labels, n, k) : 0.0;
  const double kd = alpha < 1 ? kd_enum(teacher, student, n, k, tau) : 0.0;
  return alpha * ce + (1 - alpha) * kd;
}

std::vector<int> argmax_rows_enum(const std::vector<double>& logits, std::int64_t n, std::int64_t k) {
  std::vector<int> out(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    int best = 0;
    for (std::int64_t j = 1; j < k; ++j)
      if (logits[i * k + j] > logits[i * k + best]) best = static_cast<int>(j);
    out[static_cast<std::size_t>(i)] = best;
  }
  return out;
}

}  // namespace oracles
