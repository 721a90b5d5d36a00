#include "rislab/sysmodel.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace rislab {

void ProblemInstance::validate() const {
  if (realization == nullptr || scenario == nullptr) {
    throw std::invalid_argument("instance: realization/scenario not set");
  }
  if (weights.empty() || weights.size() != scenario->K) {
    throw std::invalid_argument("instance: weight count must equal user count");
  }
  double sum = 0.0;
  for (double w : weights) {
    if (!(w > 0.0)) throw std::invalid_argument("instance: weights must be > 0");
    sum += w;
  }
  if (std::abs(sum - 1.0) > 1e-12) {
    throw std::invalid_argument("instance: weights sum to " + std::to_string(sum) +
                                ", expected 1");
  }
  if (!(noise_power > 0.0)) {
    throw std::invalid_argument("instance: noise power must be > 0");
  }
  if (!(p_max > 0.0)) throw std::invalid_argument("instance: p_max must be > 0");
}

std::size_t Association::served_by(std::size_t k) const {
  for (std::size_t i = 0; i < R; ++i) {
    if (U[k * R + i] == 1) return i;
  }
  throw std::logic_error("association row " + std::to_string(k) + " has no 1");
}

void Association::validate() const {
  if (K == 0 || R == 0 || U.size() != K * R) {
    throw std::invalid_argument("association: bad shape");
  }
  for (std::size_t k = 0; k < K; ++k) {
    int row_sum = 0;
    for (std::size_t i = 0; i < R; ++i) {
      const int v = U[k * R + i];
      if (v != 0 && v != 1) {
        throw std::invalid_argument("association: entries must be 0/1");
      }
      row_sum += v;
    }
    if (row_sum != 1) {
      throw std::invalid_argument("association: row " + std::to_string(k) +
                                  " selects " + std::to_string(row_sum) +
                                  " surfaces, expected exactly 1");
    }
  }
}

ComplexMatrix effective_channel(const ProblemInstance& inst,
                                const Association& assoc,
                                const std::vector<ComplexMatrix>& theta) {
  inst.validate();
  assoc.validate();
  const ScenarioConfig& sc = *inst.scenario;
  if (assoc.K != sc.K || assoc.R != sc.R) {
    throw std::invalid_argument("effective_channel: association shape mismatch");
  }
  if (theta.size() != sc.R) {
    throw std::invalid_argument("effective_channel: expected one phase row per surface");
  }
  const std::size_t M = sc.M();
  for (const ComplexMatrix& t : theta) {
    if (t.rows() != 1 || t.cols() != M) {
      throw std::invalid_argument("effective_channel: phase row must be 1 x M");
    }
  }
  ComplexMatrix h(sc.K, sc.N_t);
  for (std::size_t k = 0; k < sc.K; ++k) {
    for (std::size_t i = 0; i < sc.R; ++i) {
      if (assoc.at(k, i) == 0) continue;
      const ComplexMatrix row =
          multiply(theta[i], inst.realization->H_of(i, k, sc.K));
      for (std::size_t n = 0; n < sc.N_t; ++n) h.at(k, n) += row.at(0, n);
    }
  }
  return h;
}

std::vector<double> sinr(const ProblemInstance& inst, const ComplexMatrix& h_eff,
                         const ComplexMatrix& F) {
  inst.validate();
  const std::size_t K = inst.num_users();
  if (h_eff.rows() != K || F.cols() != K || F.rows() != h_eff.cols()) {
    throw std::invalid_argument("sinr: shape mismatch between channels and beamformer");
  }
  // a_{kj} = h_k f_j for all pairs in one product.
  const ComplexMatrix A = multiply(h_eff, F);
  std::vector<double> out(K);
  for (std::size_t k = 0; k < K; ++k) {
    double signal = 0.0;
    double interference = 0.0;
    for (std::size_t j = 0; j < K; ++j) {
      const double p = std::norm(A.at(k, j));
      if (j == k) {
        signal = p;
      } else {
        interference += p;
      }
    }
    out[k] = signal / (interference + inst.noise_power);
  }
  return out;
}

double wsr(const ProblemInstance& inst, const std::vector<double>& sinrs) {
  inst.validate();
  if (sinrs.size() != inst.num_users()) {
    throw std::invalid_argument("wsr: one SINR per user required");
  }
  constexpr double kInvLn2 = 1.4426950408889634074;
  double total = 0.0;
  for (std::size_t k = 0; k < sinrs.size(); ++k) {
    if (sinrs[k] < 0.0) throw std::invalid_argument("wsr: negative SINR");
    total += inst.weights[k] * std::log1p(sinrs[k]) * kInvLn2;
  }
  return total;
}

ComplexMatrix project_power(const ComplexMatrix& F_raw, double p_max) {
  if (!(p_max > 0.0)) throw std::invalid_argument("project_power: p_max must be > 0");
  const double norm = frobenius_norm(F_raw);
  if (norm == 0.0) {
    throw std::invalid_argument("project_power: all-zero beamformer has no direction");
  }
  return scalar_multiply(F_raw, std::sqrt(p_max) / norm);
}

ComplexMatrix project_unit_modulus(const ComplexMatrix& theta_raw,
                                   std::size_t* degenerate_count) {
  constexpr double kEps = 1e-12;
  ComplexMatrix out(theta_raw.rows(), theta_raw.cols());
  for (std::size_t i = 0; i < theta_raw.numel(); ++i) {
    const cplx v = theta_raw.data()[i];
    const double mag = std::abs(v);
    if (mag <= kEps) {
      out.data()[i] = cplx(1.0, 0.0);
      if (degenerate_count != nullptr) ++*degenerate_count;
    } else {
      out.data()[i] = v / mag;
    }
  }
  return out;
}

Association decode_association(std::size_t K, std::size_t R,
                               const std::vector<double>& scores) {
  if (K == 0 || R == 0 || scores.size() != K * R) {
    throw std::invalid_argument("decode_association: bad score shape");
  }
  Association assoc;
  assoc.K = K;
  assoc.R = R;
  assoc.U.assign(K * R, 0);
  for (std::size_t k = 0; k < K; ++k) {
    double row_sum = 0.0;
    std::size_t best = 0;
    double best_score = scores[k * R];
    for (std::size_t i = 0; i < R; ++i) {
      const double s = scores[k * R + i];
      if (std::isnan(s)) {
        throw std::invalid_argument("decode_association: NaN score in row " +
                                    std::to_string(k));
      }
      row_sum += s;
      if (s > best_score) {
        best_score = s;
        best = i;
      }
    }
    if (std::abs(row_sum - 1.0) > 1e-6) {
      throw std::invalid_argument("decode_association: row " + std::to_string(k) +
                                  " sums to " + std::to_string(row_sum));
    }
    assoc.U[k * R + best] = 1;
  }
  return assoc;
}

Association decode_association(const ComplexMatrix& scores) {
  std::vector<double> real_scores(scores.numel());
  for (std::size_t i = 0; i < scores.numel(); ++i) {
    const cplx v = scores.data()[i];
    if (v.imag() != 0.0) {
      throw std::invalid_argument("decode_association: scores must be real");
    }
    real_scores[i] = v.real();
  }
  return decode_association(scores.rows(), scores.cols(), real_scores);
}

Association case_association(const ProblemInstance& inst, CaseMode mode,
                             std::size_t single_index) {
  inst.validate();
  return case_association(*inst.scenario, *inst.realization, mode, single_index);
}

Association case_association(const ScenarioConfig& sc,
                             const ChannelRealization& cr, CaseMode mode,
                             std::size_t single_index) {
  const std::size_t K = sc.K;
  const std::size_t R = sc.R;
  Association assoc;
  assoc.K = K;
  assoc.R = R;
  assoc.U.assign(K * R, 0);
  if (mode == CaseMode::kSingle) {
    if (single_index >= R) {
      throw std::invalid_argument("case_association: surface index out of range");
    }
    for (std::size_t k = 0; k < K; ++k) assoc.U[k * R + single_index] = 1;
    return assoc;
  }
  const std::vector<double>& d = cr.distances;
  if (d.size() != K * R) {
    throw std::invalid_argument("case_association: realization lacks distances");
  }
  for (std::size_t k = 0; k < K; ++k) {
    std::size_t pick = 0;
    double pick_d = d[k * R];
    for (std::size_t i = 1; i < R; ++i) {
      const double di = d[k * R + i];
      const bool better =
          (mode == CaseMode::kNearest) ? (di < pick_d) : (di > pick_d);
      if (better) {
        pick = i;
        pick_d = di;
      }
    }
    assoc.U[k * R + pick] = 1;
  }
  return assoc;
}

}  // namespace rislab
