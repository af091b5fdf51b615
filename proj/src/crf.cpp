#include "bga/crf.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace bga {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

double log_sum_exp(std::span<const double> v) {
  double mx = kNegInf;
  for (double x : v) mx = std::max(mx, x);
  if (mx == kNegInf) return kNegInf;
  double s = 0.0;
  for (double x : v) s += std::exp(x - mx);
  return mx + std::log(s);
}

// Validates shapes; returns (n, L).
std::pair<std::size_t, std::size_t> check(const Tensor& emissions, const CrfParams& params) {
  const std::size_t L = params.labels();
  if (L == 0) throw std::invalid_argument("crf: empty label set");
  if (params.transitions.shape() != Shape{L, L}) {
    throw DimensionError("crf: transitions " + shape_str(params.transitions.shape()) +
                         " for " + std::to_string(L) + " labels");
  }
  if (emissions.rank() != 2 || emissions.shape()[1] != L) {
    throw DimensionError("crf: emissions " + shape_str(emissions.shape()) + " for " +
                         std::to_string(L) + " labels");
  }
  return {emissions.shape()[0], L};
}

void check_tags(const TagSequence& tags, std::size_t n, std::size_t L) {
  if (tags.size() != n) {
    throw DimensionError("crf: " + std::to_string(tags.size()) + " tags for " + std::to_string(n) +
                         " positions");
  }
  for (auto t : tags) {
    if (t >= L) throw std::out_of_range("crf: tag index " + std::to_string(t) + " out of range");
  }
}

}  // namespace

CrfParams CrfParams::init(std::size_t labels) {
  if (labels == 0) throw std::invalid_argument("crf: empty label set");
  return {Tensor::zeros({labels, labels}, true), Tensor::zeros({labels}, true)};
}

void CrfParams::collect(const std::string& prefix, nn::ParamList& out) const {
  out.emplace_back(prefix + ".transitions", transitions);
  out.emplace_back(prefix + ".start", start_scores);
}

namespace {

struct Forward {
  std::vector<double> alpha;  // n x L
  double log_z;
};

Forward forward_pass(std::span<const double> e, std::span<const double> T, std::span<const double> s,
                     std::size_t n, std::size_t L) {
  Forward f{std::vector<double>(n * L), 0.0};
  std::vector<double> tmp(L);
  for (std::size_t y = 0; y < L; ++y) f.alpha[y] = s[y] + e[y];
  for (std::size_t i = 1; i < n; ++i) {
    for (std::size_t y = 0; y < L; ++y) {
      for (std::size_t a = 0; a < L; ++a) tmp[a] = f.alpha[(i - 1) * L + a] + T[a * L + y];
      f.alpha[i * L + y] = e[i * L + y] + log_sum_exp(tmp);
    }
  }
  f.log_z = log_sum_exp(std::span<const double>(f.alpha).subspan((n - 1) * L, L));
  return f;
}

// Adds g times the node and edge marginals to the input gradients.
void add_marginals(detail::Node& out, const Forward& f, std::size_t n, std::size_t L, double g) {
  detail::Node& em = *out.inputs[0];
  detail::Node& tr = *out.inputs[1];
  detail::Node& st = *out.inputs[2];
  const auto& e = em.value;
  const auto& T = tr.value;
  const auto& alpha = f.alpha;
  std::vector<double> beta(n * L, 0.0), tmp(L);
  for (std::size_t i = n - 1; i-- > 0;) {
    for (std::size_t a = 0; a < L; ++a) {
      for (std::size_t y = 0; y < L; ++y) tmp[y] = T[a * L + y] + e[(i + 1) * L + y] + beta[(i + 1) * L + y];
      beta[i * L + a] = log_sum_exp(tmp);
    }
  }
  if (em.requires_grad) {
    auto& ge = em.grad_buffer();
    for (std::size_t k = 0; k < n * L; ++k) ge[k] += g * std::exp(alpha[k] + beta[k] - f.log_z);
  }
  if (st.requires_grad) {
    auto& gs = st.grad_buffer();
    for (std::size_t y = 0; y < L; ++y) gs[y] += g * std::exp(alpha[y] + beta[y] - f.log_z);
  }
  if (tr.requires_grad) {
    auto& gt = tr.grad_buffer();
    for (std::size_t i = 1; i < n; ++i)
      for (std::size_t a = 0; a < L; ++a)
        for (std::size_t b = 0; b < L; ++b)
          gt[a * L + b] += g * std::exp(alpha[(i - 1) * L + a] + T[a * L + b] + e[i * L + b] +
                                        beta[i * L + b] - f.log_z);
  }
}

// Subtracts g at every entry the tagged path uses.
void add_path(detail::Node& out, const TagSequence& tags, std::size_t L, double g) {
  detail::Node& em = *out.inputs[0];
  detail::Node& tr = *out.inputs[1];
  detail::Node& st = *out.inputs[2];
  const std::size_t n = tags.size();
  if (em.requires_grad) {
    auto& ge = em.grad_buffer();
    for (std::size_t i = 0; i < n; ++i) ge[i * L + tags[i]] += g;
  }
  if (st.requires_grad) st.grad_buffer()[tags[0]] += g;
  if (tr.requires_grad) {
    auto& gt = tr.grad_buffer();
    for (std::size_t i = 1; i < n; ++i) gt[tags[i - 1] * L + tags[i]] += g;
  }
}

}  // namespace

Tensor crf_log_partition(const Tensor& emissions, const CrfParams& params) {
  const auto [n, L] = check(emissions, params);
  auto f = forward_pass(emissions.values(), params.transitions.values(), params.start_scores.values(), n, L);
  const double log_z = f.log_z;
  return detail::make_result({1}, {log_z}, {emissions, params.transitions, params.start_scores},
                             "crf_log_partition", [f = std::move(f), n, L](detail::Node& out) {
                               add_marginals(out, f, n, L, out.grad[0]);
                             });
}

Tensor crf_sequence_score(const Tensor& emissions, const TagSequence& tags,
                          const CrfParams& params) {
  const auto [n, L] = check(emissions, params);
  check_tags(tags, n, L);
  const double score = path_score(emissions, tags, params);
  return detail::make_result({1}, {score}, {emissions, params.transitions, params.start_scores},
                             "crf_sequence_score",
                             [tags, L](detail::Node& out) { add_path(out, tags, L, out.grad[0]); });
}

Tensor crf_nll(const Tensor& emissions, const TagSequence& tags, const CrfParams& params) {
  const auto [n, L] = check(emissions, params);
  check_tags(tags, n, L);
  // One label: a single possible sequence, the loss is identically zero.
  if (L == 1) {
    return detail::make_result({1}, {0.0}, {emissions, params.transitions, params.start_scores}, "crf_nll",
                               [](detail::Node&) {});
  }
  auto f = forward_pass(emissions.values(), params.transitions.values(), params.start_scores.values(), n, L);
  // log Z >= score(tags) exactly; clamp the rounding residue.
  const double nll = std::max(0.0, f.log_z - path_score(emissions, tags, params));
  return detail::make_result({1}, {nll}, {emissions, params.transitions, params.start_scores}, "crf_nll",
                             [f = std::move(f), tags, n, L](detail::Node& out) {
                               add_marginals(out, f, n, L, out.grad[0]);
                               add_path(out, tags, L, -out.grad[0]);
                             });
}

double path_score(const Tensor& emissions, const TagSequence& tags, const CrfParams& params) {
  const auto [n, L] = check(emissions, params);
  check_tags(tags, n, L);
  auto e = emissions.values();
  auto T = params.transitions.values();
  double score = params.start_scores.values()[tags[0]];
  for (std::size_t i = 0; i < n; ++i) {
    score += e[i * L + tags[i]];
    if (i > 0) score += T[tags[i - 1] * L + tags[i]];
  }
  return score;
}

TagSequence viterbi_decode(const Tensor& emissions, const CrfParams& params) {
  const auto [n, L] = check(emissions, params);
  auto e = emissions.values();
  auto T = params.transitions.values();
  auto s = params.start_scores.values();
  std::vector<double> best(L), next(L);
  std::vector<std::size_t> back((n - 1) * L);
  for (std::size_t y = 0; y < L; ++y) best[y] = s[y] + e[y];
  for (std::size_t i = 1; i < n; ++i) {
    for (std::size_t y = 0; y < L; ++y) {
      std::size_t arg = 0;
      double top = best[0] + T[y];
      for (std::size_t a = 1; a < L; ++a) {
        const double v = best[a] + T[a * L + y];
        if (v > top) {
          top = v;
          arg = a;
        }
      }
      next[y] = top + e[i * L + y];
      back[(i - 1) * L + y] = arg;
    }
    std::swap(best, next);
  }
  TagSequence tags(n);
  tags[n - 1] = static_cast<std::size_t>(std::max_element(best.begin(), best.end()) - best.begin());
  for (std::size_t i = n - 1; i > 0; --i) tags[i - 1] = back[(i - 1) * L + tags[i]];
  return tags;
}

namespace {

template <class Visit>
void enumerate_sequences(std::size_t n, std::size_t L, Visit visit) {
  if (std::pow(static_cast<double>(L), static_cast<double>(n)) > kBruteForceLimit) {
    throw std::length_error("brute force: " + std::to_string(L) + "^" + std::to_string(n) +
                            " sequences exceed the enumeration limit");
  }
  TagSequence tags(n, 0);
  while (true) {
    visit(tags);
    std::size_t i = n;
    while (i > 0) {
      --i;
      if (++tags[i] < L) break;
      tags[i] = 0;
      if (i == 0) return;
    }
  }
}

}  // namespace

double brute_force_log_partition(const Tensor& emissions, const CrfParams& params) {
  const auto [n, L] = check(emissions, params);
  std::vector<double> scores;
  enumerate_sequences(n, L, [&](const TagSequence& t) { scores.push_back(path_score(emissions, t, params)); });
  return log_sum_exp(scores);
}

BruteForceBest brute_force_best(const Tensor& emissions, const CrfParams& params) {
  const auto [n, L] = check(emissions, params);
  BruteForceBest best{{}, kNegInf};
  enumerate_sequences(n, L, [&](const TagSequence& t) {
    const double s = path_score(emissions, t, params);
    if (s > best.score) best = {t, s};
  });
  return best;
}

}  // namespace bga
