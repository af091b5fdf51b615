#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "bga/nn.hpp"
#include "bga/tensor.hpp"

namespace bga {

/// Linear-chain CRF with log-linear potentials
///   score(y) = start[y_0] + sum_i emit[i][y_i] + sum_{i>0} trans[y_{i-1}][y_i].
/// No end scores.
struct CrfParams {
  Tensor transitions;   // L x L, row = previous label
  Tensor start_scores;  // L

  static CrfParams init(std::size_t labels);
  std::size_t labels() const { return start_scores.numel(); }
  void collect(const std::string& prefix, nn::ParamList& out) const;
};

/// Label indices, one per word.
using TagSequence = std::vector<std::size_t>;

/// log sum over all label sequences of exp(score), by the forward recursion.
/// Differentiable in emissions, transitions and start scores; the backward
/// pass uses forward-backward marginals.
Tensor crf_log_partition(const Tensor& emissions, const CrfParams& params);

/// Score of one label sequence (differentiable).
Tensor crf_sequence_score(const Tensor& emissions, const TagSequence& tags,
                          const CrfParams& params);

/// -(score(tags) - log Z) >= 0.
Tensor crf_nll(const Tensor& emissions, const TagSequence& tags, const CrfParams& params);

/// Max-product decoding. Ties resolve to the lowest label index, both for the
/// final label and at every backtrack step.
TagSequence viterbi_decode(const Tensor& emissions, const CrfParams& params);

/// Plain-value score of a label sequence; shared by the enumeration oracles.
double path_score(const Tensor& emissions, const TagSequence& tags, const CrfParams& params);

inline constexpr double kBruteForceLimit = 1e6;

/// Enumerates all L^n sequences. Throws std::length_error when L^n > 1e6.
double brute_force_log_partition(const Tensor& emissions, const CrfParams& params);

struct BruteForceBest {
  TagSequence tags;
  double score;
};
BruteForceBest brute_force_best(const Tensor& emissions, const CrfParams& params);

}  // namespace bga
