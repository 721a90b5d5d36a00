#pragma once

#include <cstddef>
#include <random>
#include <vector>

#include "rislab/complex_matrix.hpp"
#include "rislab/sysmodel.hpp"

namespace rislab {

/** Outcome of the weighted-MMSE beamformer update loop. */
struct WmmseResult {
  ComplexMatrix F;            ///< N_t x K beamformer, power-feasible
  std::vector<double> trace;  ///< WSR per iterate, starting with the input
  double lambda = 0.0;        ///< final power dual variable (>= 0)
  std::size_t iterations = 0;
};

/** Outcome of the manifold phase search. */
struct RcgResult {
  std::vector<ComplexMatrix> theta;  ///< per-surface 1 x M unit-modulus rows
  std::vector<double> trace;         ///< WSR per accepted iterate
  std::size_t iterations = 0;
  bool line_search_failed = false;   ///< 50 halvings without sufficient increase
};

struct AoOptions {
  std::vector<ComplexMatrix> theta_init;  ///< empty -> per-surface co-phasing
  ComplexMatrix F_init;                   ///< empty -> matched filter, full power
  double outer_tol = 1e-4;
  std::size_t max_rounds = 50;
};

struct AoResult {
  Solution solution;          ///< best iterate encountered
  std::vector<double> trace;  ///< WSR after each outer round (index 0 = init)
  std::size_t rounds = 0;
};

struct BruteForceResult {
  Association best;
  double best_wsr = 0.0;
  std::vector<Association> candidates;  ///< enumeration order, user 0 most significant
  std::vector<double> wsrs;             ///< AO value per candidate
};

/** f_k = sqrt(p_max/K) h_k^H / ||h_k||; zero rows fall back to the first basis vector. */
ComplexMatrix matched_filter_beamformer(const ProblemInstance& inst,
                                        const ComplexMatrix& h_eff);

/**
 * Weighted-MMSE beamforming for fixed effective channels h_eff (K x N_t).
 * Alternates the MMSE receive scalar, the MSE weight, and the regularized
 * least-squares transmit update; the power dual variable is found by
 * bisection (zero when the unconstrained update is already feasible).
 * Stops when the relative WSR change drops below 1e-6 or after 200 updates.
 * F_init must satisfy the power constraint.
 */
WmmseResult wmmse_solve(const ProblemInstance& inst, const ComplexMatrix& h_eff,
                        const ComplexMatrix& F_init);

/**
 * Euclidean gradient of the weighted sum rate with respect to the stacked
 * phase vector (surface-major, 1 x R*M).  Convention: for theta_s = x + jy,
 * d(wsr)/dx = Re(G_s) and d(wsr)/dy = Im(G_s).
 */
ComplexMatrix wsr_phase_gradient(const ProblemInstance& inst,
                                 const Association& assoc,
                                 const ComplexMatrix& F,
                                 const std::vector<ComplexMatrix>& theta);

/**
 * Conjugate-gradient ascent of the weighted sum rate over unit-modulus phases
 * with the beamformer held fixed: tangent-space projection, Polak-Ribiere
 * directions with restart on non-ascent, Armijo backtracking (start 1, factor
 * 0.5, coefficient 1e-4) along the normalized direction, and element-wise
 * normalization as retraction.  Stops when the relative WSR change drops
 * below 1e-6 or after 300 iterations; a failed line search (50 halvings)
 * returns the current point with the flag set.
 */
RcgResult rcg_phase_solve(const ProblemInstance& inst, const Association& assoc,
                          const ComplexMatrix& F,
                          const std::vector<ComplexMatrix>& theta_init);

/**
 * Alternates wmmse_solve and rcg_phase_solve with warm starts until the
 * relative outer WSR change drops below outer_tol or max_rounds is reached.
 * The outer trace is non-decreasing; the best iterate is returned.
 */
AoResult ao_solve(const ProblemInstance& inst, const Association& assoc,
                  const AoOptions& opts = AoOptions{});

/** Phases i.i.d. uniform on the circle, beamformer from wmmse_solve. */
Solution random_phase_baseline(const ProblemInstance& inst,
                               const Association& assoc, std::mt19937_64& rng);

/**
 * Evaluates ao_solve for every row-wise one-hot assignment (guarded to
 * R^K <= 256 candidates) and returns the argmax with the full value table.
 */
BruteForceResult brute_force_association(const ProblemInstance& inst,
                                         const AoOptions& opts = AoOptions{});

}  // namespace rislab
