#include "rislab/baselines.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "rislab/rng.hpp"

namespace rislab {

namespace {

constexpr double kInvLn2 = 1.4426950408889634074;
constexpr double kTwoPi = 6.28318530717958647692;

using EigenCMat =
    Eigen::Matrix<std::complex<double>, Eigen::Dynamic, Eigen::Dynamic>;

EigenCMat to_eigen(const ComplexMatrix& m) {
  EigenCMat out(m.rows(), m.cols());
  for (std::size_t r = 0; r < m.rows(); ++r) {
    for (std::size_t c = 0; c < m.cols(); ++c) out(r, c) = m.at(r, c);
  }
  return out;
}

ComplexMatrix from_eigen(const EigenCMat& m) {
  ComplexMatrix out(static_cast<std::size_t>(m.rows()),
                    static_cast<std::size_t>(m.cols()));
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    for (Eigen::Index c = 0; c < m.cols(); ++c) {
      out.at(static_cast<std::size_t>(r), static_cast<std::size_t>(c)) = m(r, c);
    }
  }
  return out;
}

double frob_sq(const ComplexMatrix& m) {
  const double f = frobenius_norm(m);
  return f * f;
}

double wsr_of(const ProblemInstance& inst, const ComplexMatrix& h_eff,
              const ComplexMatrix& F) {
  return wsr(inst, sinr(inst, h_eff, F));
}

bool converged(double current, double previous, double rel_tol) {
  return std::abs(current - previous) <=
         rel_tol * std::max(std::abs(previous), 1e-12);
}

// Per-(k,j) sensitivity vectors of a_kj = h_k f_j to the stacked phase
// vector: entry (i*M + m) is u_{k,i} * (H_ik f_j)_m, so a_kj = theta . c_kj.
std::vector<std::vector<std::vector<cplx>>> phase_coefficients(
    const ProblemInstance& inst, const Association& assoc,
    const ComplexMatrix& F) {
  const ScenarioConfig& sc = *inst.scenario;
  const std::size_t M = sc.M();
  const std::size_t dim = sc.R * M;
  std::vector<std::vector<std::vector<cplx>>> c(
      sc.K, std::vector<std::vector<cplx>>(sc.K, std::vector<cplx>(dim, cplx())));
  for (std::size_t k = 0; k < sc.K; ++k) {
    const std::size_t i = assoc.served_by(k);
    const ComplexMatrix& H = inst.realization->H_of(i, k, sc.K);
    for (std::size_t j = 0; j < sc.K; ++j) {
      std::vector<cplx>& ckj = c[k][j];
      for (std::size_t m = 0; m < M; ++m) {
        cplx acc(0.0, 0.0);
        for (std::size_t n = 0; n < sc.N_t; ++n) acc += H.at(m, n) * F.at(n, j);
        ckj[i * M + m] = acc;
      }
    }
  }
  return c;
}

std::vector<cplx> flatten_theta(const std::vector<ComplexMatrix>& theta,
                                std::size_t R, std::size_t M) {
  if (theta.size() != R) {
    throw std::invalid_argument("phase search: one phase row per surface required");
  }
  std::vector<cplx> flat(R * M);
  for (std::size_t i = 0; i < R; ++i) {
    if (theta[i].rows() != 1 || theta[i].cols() != M) {
      throw std::invalid_argument("phase search: phase rows must be 1 x M");
    }
    for (std::size_t m = 0; m < M; ++m) flat[i * M + m] = theta[i].at(0, m);
  }
  return flat;
}

std::vector<ComplexMatrix> unflatten_theta(const std::vector<cplx>& flat,
                                           std::size_t R, std::size_t M) {
  std::vector<ComplexMatrix> theta(R, ComplexMatrix(1, M));
  for (std::size_t i = 0; i < R; ++i) {
    for (std::size_t m = 0; m < M; ++m) theta[i].at(0, m) = flat[i * M + m];
  }
  return theta;
}

double phase_objective(const ProblemInstance& inst,
                       const std::vector<std::vector<std::vector<cplx>>>& c,
                       const std::vector<cplx>& theta) {
  const std::size_t K = c.size();
  const std::size_t dim = theta.size();
  double total = 0.0;
  for (std::size_t k = 0; k < K; ++k) {
    double signal = 0.0;
    double interference = 0.0;
    for (std::size_t j = 0; j < K; ++j) {
      cplx a(0.0, 0.0);
      for (std::size_t s = 0; s < dim; ++s) a += theta[s] * c[k][j][s];
      if (j == k) {
        signal = std::norm(a);
      } else {
        interference += std::norm(a);
      }
    }
    const double n_k = interference + inst.noise_power;
    total += inst.weights[k] * std::log1p(signal / n_k) * kInvLn2;
  }
  return total;
}

// Euclidean gradient with the Re/Im convention documented in the header:
// G_s = sum_k (2 w_k / ln2) [ a_kk conj(c_kk_s) / (N_k + S_k)
//                             - S_k/(N_k (N_k+S_k)) sum_{j!=k} a_kj conj(c_kj_s) ].
std::vector<cplx> phase_gradient(const ProblemInstance& inst,
                                 const std::vector<std::vector<std::vector<cplx>>>& c,
                                 const std::vector<cplx>& theta) {
  const std::size_t K = c.size();
  const std::size_t dim = theta.size();
  std::vector<cplx> grad(dim, cplx());
  std::vector<cplx> a(K);
  for (std::size_t k = 0; k < K; ++k) {
    for (std::size_t j = 0; j < K; ++j) {
      cplx acc(0.0, 0.0);
      for (std::size_t s = 0; s < dim; ++s) acc += theta[s] * c[k][j][s];
      a[j] = acc;
    }
    double interference = 0.0;
    for (std::size_t j = 0; j < K; ++j) {
      if (j != k) interference += std::norm(a[j]);
    }
    const double s_k = std::norm(a[k]);
    const double n_k = interference + inst.noise_power;
    const double w2 = 2.0 * inst.weights[k] * kInvLn2;
    const double sig_coeff = w2 / (n_k + s_k);
    const double int_coeff = w2 * s_k / (n_k * (n_k + s_k));
    for (std::size_t s = 0; s < dim; ++s) {
      grad[s] += sig_coeff * a[k] * std::conj(c[k][k][s]);
      for (std::size_t j = 0; j < K; ++j) {
        if (j == k) continue;
        grad[s] -= int_coeff * a[j] * std::conj(c[k][j][s]);
      }
    }
  }
  return grad;
}

std::vector<cplx> tangent_project(const std::vector<cplx>& v,
                                  const std::vector<cplx>& theta) {
  std::vector<cplx> out(v.size());
  for (std::size_t s = 0; s < v.size(); ++s) {
    const double radial = v[s].real() * theta[s].real() + v[s].imag() * theta[s].imag();
    out[s] = v[s] - radial * theta[s];
  }
  return out;
}

double real_inner(const std::vector<cplx>& u, const std::vector<cplx>& v) {
  double acc = 0.0;
  for (std::size_t s = 0; s < u.size(); ++s) {
    acc += u[s].real() * v[s].real() + u[s].imag() * v[s].imag();
  }
  return acc;
}

std::vector<cplx> retract(const std::vector<cplx>& theta,
                          const std::vector<cplx>& dir, double step) {
  std::vector<cplx> out(theta.size());
  for (std::size_t s = 0; s < theta.size(); ++s) {
    const cplx moved = theta[s] + step * dir[s];
    const double mag = std::abs(moved);
    out[s] = (mag <= 1e-12) ? theta[s] : moved / mag;
  }
  return out;
}

}  // namespace

ComplexMatrix matched_filter_beamformer(const ProblemInstance& inst,
                                        const ComplexMatrix& h_eff) {
  inst.validate();
  const std::size_t K = inst.num_users();
  const std::size_t N_t = h_eff.cols();
  if (h_eff.rows() != K) {
    throw std::invalid_argument("matched_filter_beamformer: one channel row per user");
  }
  ComplexMatrix F(N_t, K);
  const double col_power = std::sqrt(inst.p_max / static_cast<double>(K));
  for (std::size_t k = 0; k < K; ++k) {
    double norm_sq = 0.0;
    for (std::size_t n = 0; n < N_t; ++n) norm_sq += std::norm(h_eff.at(k, n));
    if (norm_sq == 0.0) {
      F.at(0, k) = cplx(col_power, 0.0);
      continue;
    }
    const double inv_norm = col_power / std::sqrt(norm_sq);
    for (std::size_t n = 0; n < N_t; ++n) {
      F.at(n, k) = std::conj(h_eff.at(k, n)) * inv_norm;
    }
  }
  return F;
}

WmmseResult wmmse_solve(const ProblemInstance& inst, const ComplexMatrix& h_eff,
                        const ComplexMatrix& F_init) {
  inst.validate();
  const std::size_t K = inst.num_users();
  const std::size_t N_t = h_eff.cols();
  if (h_eff.rows() != K) {
    throw std::invalid_argument("wmmse_solve: one channel row per user required");
  }
  if (F_init.rows() != N_t || F_init.cols() != K) {
    throw std::invalid_argument("wmmse_solve: F_init must be N_t x K");
  }
  if (frob_sq(F_init) > inst.p_max * (1.0 + 1e-9)) {
    throw std::invalid_argument("wmmse_solve: F_init violates the power budget");
  }

  const EigenCMat H = to_eigen(h_eff);
  EigenCMat F = to_eigen(F_init);

  WmmseResult result;
  result.trace.push_back(wsr_of(inst, h_eff, from_eigen(F)));

  for (std::size_t iter = 1; iter <= 200; ++iter) {
    const EigenCMat A = H * F;  // a_kj = h_k f_j

    // MMSE receive scalar, MSE inverse weight (real, >= 1).
    std::vector<cplx> chi(K);
    std::vector<double> kappa(K);
    for (std::size_t k = 0; k < K; ++k) {
      double denom = inst.noise_power;
      for (std::size_t j = 0; j < K; ++j) denom += std::norm(A(k, j));
      chi[k] = A(k, k) / denom;
      const double mse = 1.0 - (std::conj(chi[k]) * A(k, k)).real();
      kappa[k] = 1.0 / mse;
    }

    // Regularized LS transmit update: f_k = (Acc + lambda I)^{-1} b_k with
    // Acc = sum_i w_i kappa_i |chi_i|^2 h_i^H h_i and
    // b_k = w_k kappa_k conj(chi_k) h_k^H; lambda chosen so the update is
    // power-feasible (zero when it already is).
    EigenCMat Acc = EigenCMat::Zero(N_t, N_t);
    EigenCMat B(N_t, K);
    for (std::size_t k = 0; k < K; ++k) {
      const EigenCMat hk = H.row(k);
      const double coef = inst.weights[k] * kappa[k] * std::norm(chi[k]);
      Acc.noalias() += coef * hk.adjoint() * hk;
      B.col(k) = (inst.weights[k] * kappa[k] * std::conj(chi[k])) * hk.adjoint();
    }

    Eigen::SelfAdjointEigenSolver<EigenCMat> es(Acc);
    if (es.info() != Eigen::Success) {
      throw std::runtime_error("wmmse_solve: eigendecomposition failed");
    }
    Eigen::VectorXd evals = es.eigenvalues().cwiseMax(0.0);
    const EigenCMat C = es.eigenvectors().adjoint() * B;

    const double eval_max = evals.maxCoeff();
    const double rank_tol = std::max(eval_max, 1.0e-300) * 1e-13;
    const auto power_at = [&](double lambda) {
      double p = 0.0;
      for (std::size_t j = 0; j < N_t; ++j) {
        const double d = evals(static_cast<Eigen::Index>(j)) + lambda;
        if (lambda == 0.0 && evals(static_cast<Eigen::Index>(j)) <= rank_tol) {
          continue;  // pseudo-inverse: b has no mass outside range(Acc)
        }
        for (std::size_t k = 0; k < K; ++k) {
          p += std::norm(C(static_cast<Eigen::Index>(j),
                           static_cast<Eigen::Index>(k))) /
               (d * d);
        }
      }
      return p;
    };

    double lambda = 0.0;
    if (power_at(0.0) > inst.p_max) {
      double hi = std::max(eval_max, 1.0) * 1e-8 + 1e-300;
      std::size_t doublings = 0;
      while (power_at(hi) > inst.p_max) {
        hi *= 2.0;
        if (++doublings > 2000) {
          throw std::runtime_error(
              "wmmse_solve: dual bracket failure, power " +
              std::to_string(power_at(hi)) + " at lambda " + std::to_string(hi));
        }
      }
      double lo = 0.0;
      const double tol = 1e-10 * inst.p_max;
      for (std::size_t b = 0; b < 500; ++b) {
        if (inst.p_max - power_at(hi) <= tol) break;
        const double mid = 0.5 * (lo + hi);
        if (power_at(mid) > inst.p_max) {
          lo = mid;
        } else {
          hi = mid;
        }
      }
      lambda = hi;
    }

    for (std::size_t k = 0; k < K; ++k) {
      Eigen::VectorXcd scaled(N_t);
      for (std::size_t j = 0; j < N_t; ++j) {
        const Eigen::Index je = static_cast<Eigen::Index>(j);
        const double ev = evals(je);
        if (lambda == 0.0 && ev <= rank_tol) {
          scaled(je) = cplx(0.0, 0.0);
        } else {
          scaled(je) = C(je, static_cast<Eigen::Index>(k)) / (ev + lambda);
        }
      }
      F.col(static_cast<Eigen::Index>(k)) = es.eigenvectors() * scaled;
    }

    result.lambda = lambda;
    result.iterations = iter;
    result.trace.push_back(wsr_of(inst, h_eff, from_eigen(F)));
    const double now = result.trace.back();
    const double prev = result.trace[result.trace.size() - 2];
    if (converged(now, prev, 1e-6)) break;
  }

  result.F = from_eigen(F);
  return result;
}

ComplexMatrix wsr_phase_gradient(const ProblemInstance& inst,
                                 const Association& assoc,
                                 const ComplexMatrix& F,
                                 const std::vector<ComplexMatrix>& theta) {
  inst.validate();
  assoc.validate();
  const ScenarioConfig& sc = *inst.scenario;
  const std::size_t M = sc.M();
  const auto c = phase_coefficients(inst, assoc, F);
  const std::vector<cplx> flat = flatten_theta(theta, sc.R, M);
  const std::vector<cplx> g = phase_gradient(inst, c, flat);
  ComplexMatrix out(1, sc.R * M);
  for (std::size_t s = 0; s < g.size(); ++s) out.at(0, s) = g[s];
  return out;
}

RcgResult rcg_phase_solve(const ProblemInstance& inst, const Association& assoc,
                          const ComplexMatrix& F,
                          const std::vector<ComplexMatrix>& theta_init) {
  inst.validate();
  assoc.validate();
  const ScenarioConfig& sc = *inst.scenario;
  const std::size_t M = sc.M();
  const auto c = phase_coefficients(inst, assoc, F);

  std::vector<cplx> theta = flatten_theta(theta_init, sc.R, M);
  for (const cplx& t : theta) {
    if (std::abs(std::abs(t) - 1.0) > 1e-9) {
      throw std::invalid_argument("rcg_phase_solve: theta_init must be unit-modulus");
    }
  }

  RcgResult result;
  double value = phase_objective(inst, c, theta);
  result.trace.push_back(value);

  std::vector<cplx> grad = tangent_project(phase_gradient(inst, c, theta), theta);
  std::vector<cplx> dir = grad;

  for (std::size_t iter = 1; iter <= 300; ++iter) {
    double slope = real_inner(grad, dir);
    if (slope <= 0.0) {
      dir = grad;  // restart on a non-ascent direction
      slope = real_inner(grad, grad);
    }
    const double dir_norm = std::sqrt(real_inner(dir, dir));
    if (dir_norm <= 1e-300) break;  // stationary point
    std::vector<cplx> unit_dir(dir.size());
    for (std::size_t s = 0; s < dir.size(); ++s) unit_dir[s] = dir[s] / dir_norm;
    slope /= dir_norm;

    double step = 1.0;
    bool accepted = false;
    std::vector<cplx> trial;
    double trial_value = 0.0;
    for (std::size_t halving = 0; halving <= 50; ++halving) {
      trial = retract(theta, unit_dir, step);
      trial_value = phase_objective(inst, c, trial);
      if (trial_value >= value + 1e-4 * step * slope) {
        accepted = true;
        break;
      }
      step *= 0.5;
    }
    if (!accepted) {
      result.line_search_failed = true;
      break;
    }

    const std::vector<cplx> grad_new =
        tangent_project(phase_gradient(inst, c, trial), trial);
    // Polak-Ribiere with transport by reprojection onto the new tangent space.
    const std::vector<cplx> grad_old_t = tangent_project(grad, trial);
    std::vector<cplx> diff(grad_new.size());
    for (std::size_t s = 0; s < diff.size(); ++s) diff[s] = grad_new[s] - grad_old_t[s];
    const double denom = real_inner(grad, grad);
    const double beta =
        (denom > 0.0) ? std::max(0.0, real_inner(grad_new, diff) / denom) : 0.0;
    const std::vector<cplx> dir_t = tangent_project(dir, trial);
    std::vector<cplx> dir_new(dir.size());
    for (std::size_t s = 0; s < dir.size(); ++s) {
      dir_new[s] = grad_new[s] + beta * dir_t[s];
    }

    theta = trial;
    grad = grad_new;
    dir = dir_new;
    result.iterations = iter;
    result.trace.push_back(trial_value);
    if (converged(trial_value, value, 1e-6)) {
      value = trial_value;
      break;
    }
    value = trial_value;
  }

  result.theta = unflatten_theta(theta, sc.R, M);
  return result;
}

// Deterministic phase initialization: each surface co-phases the cascaded
// link of the strongest user it serves.  For the row convention
// h_k = theta_i H_ik, the gain ||theta H||^2 equals y^H (H H^H) y with
// y = conj(theta), so the unit-modulus projection of the dominant
// eigenvector of H H^H is the standard alignment heuristic.  An all-ones
// start is a poor choice here: with line-of-sight-dominant links it sits
// near a stationary point of the rate surface and strands the alternating
// loop in a low basin that even random phases beat.
static std::vector<ComplexMatrix> cophase_theta_init(
    const ProblemInstance& inst, const Association& assoc) {
  const ScenarioConfig& sc = *inst.scenario;
  const std::size_t M = sc.M();
  std::vector<ComplexMatrix> theta(sc.R, ComplexMatrix(1, M));
  for (std::size_t i = 0; i < sc.R; ++i) {
    for (std::size_t m = 0; m < M; ++m) theta[i].at(0, m) = cplx(1.0, 0.0);

    const ComplexMatrix* cascade = nullptr;
    double best_norm = -1.0;
    for (std::size_t k = 0; k < sc.K; ++k) {
      if (assoc.at(k, i) == 0) continue;
      const ComplexMatrix& H = inst.realization->H_of(i, k, sc.K);
      const double f = frobenius_norm(H);
      if (f > best_norm) {
        best_norm = f;
        cascade = &H;
      }
    }
    // A surface serving nobody never enters the effective channel; leave it
    // at the neutral point.
    if (cascade == nullptr || best_norm <= 0.0) continue;

    const EigenCMat H = to_eigen(*cascade);
    const EigenCMat gram = H * H.adjoint();
    Eigen::SelfAdjointEigenSolver<EigenCMat> eig(gram);
    if (eig.info() != Eigen::Success) continue;
    const auto u = eig.eigenvectors().col(static_cast<Eigen::Index>(M) - 1);
    for (std::size_t m = 0; m < M; ++m) {
      const cplx um = u(static_cast<Eigen::Index>(m));
      const double mag = std::abs(um);
      if (mag > 1e-300) theta[i].at(0, m) = std::conj(um) / mag;
    }
  }
  return theta;
}

AoResult ao_solve(const ProblemInstance& inst, const Association& assoc,
                  const AoOptions& opts) {
  inst.validate();
  assoc.validate();
  const ScenarioConfig& sc = *inst.scenario;
  const std::size_t M = sc.M();
  (void)M;

  std::vector<ComplexMatrix> theta = opts.theta_init;
  if (theta.empty()) theta = cophase_theta_init(inst, assoc);
  ComplexMatrix h = effective_channel(inst, assoc, theta);
  ComplexMatrix F = opts.F_init;
  if (F.numel() == 0) F = matched_filter_beamformer(inst, h);

  AoResult result;
  double value = wsr_of(inst, h, F);
  result.trace.push_back(value);
  result.solution.F = F;
  result.solution.theta = theta;
  result.solution.assoc = assoc;
  result.solution.wsr = value;

  for (std::size_t round = 1; round <= opts.max_rounds; ++round) {
    F = wmmse_solve(inst, h, F).F;
    RcgResult phase = rcg_phase_solve(inst, assoc, F, theta);
    theta = std::move(phase.theta);
    h = effective_channel(inst, assoc, theta);

    const double now = wsr_of(inst, h, F);
    result.trace.push_back(now);
    result.rounds = round;
    if (now > result.solution.wsr) {
      result.solution.F = F;
      result.solution.theta = theta;
      result.solution.wsr = now;
    }
    if (converged(now, value, opts.outer_tol)) break;
    value = now;
  }
  return result;
}

Solution random_phase_baseline(const ProblemInstance& inst,
                               const Association& assoc, std::mt19937_64& rng) {
  inst.validate();
  assoc.validate();
  const ScenarioConfig& sc = *inst.scenario;
  const std::size_t M = sc.M();
  std::vector<ComplexMatrix> theta(sc.R, ComplexMatrix(1, M));
  for (std::size_t i = 0; i < sc.R; ++i) {
    for (std::size_t m = 0; m < M; ++m) {
      const double phase = draw_uniform(rng, 0.0, kTwoPi);
      theta[i].at(0, m) = cplx(std::cos(phase), std::sin(phase));
    }
  }
  const ComplexMatrix h = effective_channel(inst, assoc, theta);
  const WmmseResult beam = wmmse_solve(inst, h, matched_filter_beamformer(inst, h));
  Solution sol;
  sol.F = beam.F;
  sol.theta = std::move(theta);
  sol.assoc = assoc;
  sol.wsr = wsr_of(inst, h, sol.F);
  return sol;
}

BruteForceResult brute_force_association(const ProblemInstance& inst,
                                         const AoOptions& opts) {
  inst.validate();
  const std::size_t K = inst.scenario->K;
  const std::size_t R = inst.scenario->R;
  std::size_t count = 1;
  for (std::size_t k = 0; k < K; ++k) {
    count *= R;
    if (count > 256) {
      throw std::invalid_argument(
          "brute_force_association: R^K exceeds the 256-candidate guard");
    }
  }

  BruteForceResult result;
  result.best_wsr = -1.0;
  std::vector<std::size_t> pick(K, 0);
  for (std::size_t idx = 0; idx < count; ++idx) {
    std::size_t rem = idx;
    for (std::size_t k = K; k-- > 0;) {  // user 0 most significant
      pick[k] = rem % R;
      rem /= R;
    }
    Association assoc;
    assoc.K = K;
    assoc.R = R;
    assoc.U.assign(K * R, 0);
    for (std::size_t k = 0; k < K; ++k) assoc.U[k * R + pick[k]] = 1;

    const AoResult ao = ao_solve(inst, assoc, opts);
    result.candidates.push_back(assoc);
    result.wsrs.push_back(ao.solution.wsr);
    if (ao.solution.wsr > result.best_wsr) {
      result.best_wsr = ao.solution.wsr;
      result.best = assoc;
    }
  }
  return result;
}

}  // namespace rislab
