#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "attnflow/types.hpp"

namespace attnflow {

// One classification sample: token sequence X (L x d, rows are tokens),
// query z, binary label y in {-1, +1}.
struct Sample {
  Mat X;
  Vec z;
  double y = 1.0;
};

// Orthogonal frame certifying the aligned-data structure: the normalized
// optimal token of sample i is column pi[i] of U_K, the normalized query is
// column pi[i] of U_Q, and the non-optimal tokens of each sample pair up
// symmetrically around a multiple of the optimal token.
struct AlignedStructure {
  Mat U_K;
  Mat U_Q;
  std::vector<Index> pi;  // injective [n] -> [d]
  std::vector<std::vector<std::pair<Index, Index>>> pairing;        // per sample
  std::vector<std::vector<double>> pair_constants;                  // c per pair, in [-1, 1)
};

struct Dataset {
  std::vector<Sample> samples;
  Vec v;  // fixed prediction head

  // Derived fields, populated by finalize().
  Mat scores;               // n x L token scores
  std::vector<Index> opt;   // per-sample optimal token index
  Vec gamma_nonopt;         // shared non-optimal score, valid iff has_gamma_nonopt
  bool has_gamma_nonopt = false;

  Index n() const { return static_cast<Index>(samples.size()); }
  Index L() const { return samples.empty() ? 0 : samples.front().X.rows(); }
  Index d() const { return v.size(); }

  // Recomputes scores and optimal tokens from the raw fields; throws TieError
  // when an argmax is not unique. Sets gamma_nonopt when the non-optimal
  // scores of every sample agree within 1e-12.
  void finalize();
};

// Score matrix gamma with gamma(i, l) = y_i * v^T x_il, recomputed from raw fields.
Mat token_scores(const Dataset& data);

// Unique per-row argmax of the score matrix; throws TieError on ties.
std::vector<Index> optimal_tokens(const Mat& scores);

struct Feasibility {
  bool feasible = false;
  Mat witness;     // separates with margin >= 1 when feasible
  double margin = 0.0;
};

// Linear feasibility of (x_opt - x_l)^T W z_i >= 1 over all constraints,
// decided exactly by the LP machinery on the vectorized constraints.
Feasibility check_separability(const Dataset& data);

struct A1Report {
  bool holds = false;
  Vec gamma_nonopt;
  std::vector<std::string> violations;
};

// Unique optimal token per sample and equal non-optimal scores (within tol).
A1Report check_assumption_A1(const Dataset& data, double tol = 1e-12);

struct B1Report {
  bool holds = false;
  std::vector<std::string> violations;
  AlignedStructure structure;  // valid only when holds
};

// Aligned-data check: cross-sample orthogonality of optimal tokens and
// queries, query parallel to its optimal token, and a symmetric pairing of
// the non-optimal tokens. On success reconstructs U_K, U_Q by Gram-Schmidt
// completion with pi(i) = i.
B1Report check_assumption_B1(const Dataset& data, double tol = 1e-10);

// Seeded dataset with equal non-optimal scores (enforced by projection onto
// the affine score set) at the requested optimal/non-optimal score gap.
// Separability is certified before returning; draws that fail are rejected.
Dataset generate_diagonal_dataset(Index n, Index L, Index d, double score_gap,
                                  std::uint64_t seed);

// Seeded dataset satisfying the aligned-structure check, L odd, n <= d.
// Non-optimal tokens come in symmetric pairs c*x_opt +/- r with r drawn from
// the orthogonal complement of the optimal-token frame; one c per sample
// (equal non-optimal scores force the pair constants to agree when L > 3).
// When constraint_scale > 0 the query norms are set so every separating
// constraint has value constraint_scale at the unit optimal direction.
std::pair<Dataset, AlignedStructure> generate_aligned_dataset(Index n, Index L, Index d,
                                                              std::uint64_t seed,
                                                              double constraint_scale = 8.0);

// Fixed 1-sample reference dataset used across tests and docs.
Dataset reference_d1();

// JSON round-trip (round-trip exact doubles) and a stable content hash.
std::string dataset_to_json(const Dataset& data);
Dataset dataset_from_json(const std::string& text);
void save_dataset(const Dataset& data, const std::string& path);
Dataset load_dataset(const std::string& path);
std::uint64_t dataset_hash(const Dataset& data);

}  // namespace attnflow
