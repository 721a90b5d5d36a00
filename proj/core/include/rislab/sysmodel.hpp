#pragma once

#include <cstddef>
#include <vector>

#include "rislab/channel.hpp"
#include "rislab/complex_matrix.hpp"

namespace rislab {

/** One downlink optimization instance: a channel draw plus link budget. */
struct ProblemInstance {
  const ChannelRealization* realization = nullptr;
  const ScenarioConfig* scenario = nullptr;
  std::vector<double> weights;   ///< per-user rate weights, sum to 1
  double noise_power = 0.0;      ///< sigma^2 in watts
  double p_max = 0.0;            ///< transmit power budget in watts

  /** Throws std::invalid_argument when invariants are violated. */
  void validate() const;
  std::size_t num_users() const { return weights.size(); }
};

/** Binary user-to-surface assignment; each row selects exactly one surface. */
struct Association {
  std::size_t K = 0;
  std::size_t R = 0;
  std::vector<int> U;  ///< row-major K x R, entries 0/1, one 1 per row

  int at(std::size_t k, std::size_t i) const { return U[k * R + i]; }
  /** Index of the surface serving user k. */
  std::size_t served_by(std::size_t k) const;
  void validate() const;
  bool operator==(const Association& other) const {
    return K == other.K && R == other.R && U == other.U;
  }
};

/** A complete design: beamformer, phase profiles, assignment, and its value. */
struct Solution {
  ComplexMatrix F;                    ///< N_t x K beamformer
  std::vector<ComplexMatrix> theta;   ///< per-surface 1 x M unit-modulus rows
  Association assoc;
  double wsr = 0.0;
};

enum class CaseMode {
  kNearest,   ///< each user served by its nearest surface
  kFarthest,  ///< each user served by its farthest surface
  kSingle,    ///< every user served by one fixed surface
};

/**
 * Per-user effective BS->user row channels h_k = sum_i u_{k,i} theta_i H_ik,
 * returned as a K x N_t matrix (row k is user k's channel).
 */
ComplexMatrix effective_channel(const ProblemInstance& inst,
                                const Association& assoc,
                                const std::vector<ComplexMatrix>& theta);

/** SINR_k = |h_k f_k|^2 / (sum_{j!=k} |h_k f_j|^2 + sigma^2). */
std::vector<double> sinr(const ProblemInstance& inst, const ComplexMatrix& h_eff,
                         const ComplexMatrix& F);

/** Weighted sum rate sum_k w_k log2(1 + SINR_k). */
double wsr(const ProblemInstance& inst, const std::vector<double>& sinrs);

/**
 * Scales a nonzero beamformer onto the full-power sphere:
 * F = sqrt(p_max) * F_raw / ||F_raw||_F. Rejects all-zero input.
 */
ComplexMatrix project_power(const ComplexMatrix& F_raw, double p_max);

/**
 * Normalizes each entry to unit modulus, preserving phase.  Entries with
 * magnitude <= 1e-12 become 1+0j; their count is added to *degenerate_count
 * when the pointer is non-null (training must survive dead units).
 */
ComplexMatrix project_unit_modulus(const ComplexMatrix& theta_raw,
                                   std::size_t* degenerate_count = nullptr);

/**
 * Hardens row-stochastic scores (K x R, rows sum to 1 within 1e-6) into an
 * Association by per-row argmax; ties break toward the lowest surface index.
 * Rejects NaN scores and malformed rows.
 */
Association decode_association(const ComplexMatrix& scores);
Association decode_association(std::size_t K, std::size_t R,
                               const std::vector<double>& scores);

/**
 * Fixed-rule assignment: nearest/farthest by user-to-surface distance
 * (ties to the lowest index), or single(r) pinning all users to surface r.
 */
Association case_association(const ProblemInstance& inst, CaseMode mode,
                             std::size_t single_index = 0);
Association case_association(const ScenarioConfig& sc,
                             const ChannelRealization& cr, CaseMode mode,
                             std::size_t single_index = 0);

}  // namespace rislab
