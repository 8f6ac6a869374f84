#pragma once

// Independent reference computations for the loss functions, written
// definition-first (direct exp/sum enumeration, no log-sum-exp tricks, no
// shared code with the engine). Everything runs in double.

#include <cstdint>
#include <vector>

namespace oracles {

// Contrastive loss over `rows` L2-normalized embeddings of dimension d,
// interleaved so the positive of row i is row i^1:
//   L = (1/rows) * sum_i -log( exp(cos(i, i^1)/tau) / sum_{k != i} exp(cos(i,k)/tau) )
double nt_xent_enum(const std::vector<double>& z, std::int64_t rows, std::int64_t d, double tau);

// Mean softmax cross-entropy with integer labels.
double cross_entropy_enum(const std::vector<double>& logits, const std::vector<int>& labels, std::int64_t n,
                          std::int64_t k);

// Softened teacher-student KL, scaled by tau^2 and averaged over rows:
//   (tau^2 / n) * sum_i KL( softmax(t_i/tau) || softmax(s_i/tau) )
double kd_enum(const std::vector<double>& teacher, const std::vector<double>& student, std::int64_t n, std::int64_t k,
               double tau);

// alpha * CE + (1 - alpha) * KD.
double distill_enum(const std::vector<double>& teacher, const std::vector<double>& student, std::int64_t n,
                    std::int64_t k, double tau, double alpha, const std::vector<int>& labels);

// Per-sample argmax with ties broken toward the lowest index.
std::vector<int> argmax_rows_enum(const std::vector<double>& logits, std::int64_t n, std::int64_t k);

}  // namespace oracles
