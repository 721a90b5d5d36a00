#include <algorithm>
#include <cmath>
#include <complex>
#include <random>
#include <stdexcept>
#include <vector>

#include "doctest.h"
#include "oracles.hpp"
#include "rislab/baselines.hpp"
#include "rislab/channel.hpp"
#include "rislab/sysmodel.hpp"
#include "rislab/train.hpp"
#include "test_support.hpp"

using namespace rislab;

namespace {

bool non_decreasing(const std::vector<double>& trace, double slack) {
  for (std::size_t i = 1; i < trace.size(); ++i) {
    if (trace[i] < trace[i - 1] - slack) return false;
  }
  return true;
}

double unit_modulus_error(const std::vector<ComplexMatrix>& theta) {
  double worst = 0.0;
  for (const auto& row : theta) {
    for (std::size_t m = 0; m < row.cols(); ++m) {
      worst = std::max(worst, std::abs(std::abs(row.at(0, m)) - 1.0));
    }
  }
  return worst;
}

/** Instance over externally owned scenario/realization storage. */
ProblemInstance raw_instance(const ScenarioConfig& sc,
                             const ChannelRealization& cr,
                             std::vector<double> weights, double noise,
                             double p_max) {
  ProblemInstance inst;
  inst.scenario = &sc;
  inst.realization = &cr;
  inst.weights = std::move(weights);
  inst.noise_power = noise;
  inst.p_max = p_max;
  return inst;
}

}  // namespace

TEST_SUITE("baselines") {

TEST_CASE("scalar link reaches the closed-form fixed point") {
  ScenarioConfig sc = testsup::tiny_scenario();
  sc.K = 1;
  sc.R = 1;
  sc.N_t = 1;
  sc.M_x = 1;
  sc.M_y = 1;
  sc.ris_positions = {{30.0, 25.0}};
  const ChannelRealization cr = testsup::unit_realization(sc);
  const ProblemInstance inst = raw_instance(sc, cr, {1.0}, 1.0, 1.0);

  ComplexMatrix h(1, 1, cplx(1.0, 0.0));
  ComplexMatrix f0(1, 1, cplx(1.0, 0.0));
  const WmmseResult res = wmmse_solve(inst, h, f0);

  // At h = f = sigma^2 = 1: receive scalar 1/2, error weight 2, rate 1.
  const cplx hf = h.at(0, 0) * res.F.at(0, 0);
  const double chi = (std::conj(hf) / (1.0 + std::norm(hf))).real();
  const double kappa = 1.0 / (1.0 - chi * hf.real());
  CHECK(chi == doctest::Approx(0.5).epsilon(1e-9));
  CHECK(kappa == doctest::Approx(2.0).epsilon(1e-9));
  CHECK(res.trace.back() == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(std::abs(res.F.at(0, 0)) == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(res.trace.front() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(non_decreasing(res.trace, 1e-9));
  CHECK(res.lambda >= 0.0);
}

TEST_CASE("single-user solution is a full-power matched filter") {
  ScenarioConfig sc = testsup::desk_scenario();
  sc.K = 1;
  const Dataset ds = generate_dataset(sc, 3, 31, 2, 1);
  for (std::size_t idx = 0; idx < 3; ++idx) {
    const ProblemInstance inst = testsup::instance_for(ds, idx, 20.0);
    const Association assoc =
        case_association(sc, ds.samples[idx], CaseMode::kNearest);
    const ComplexMatrix h_eff =
        effective_channel(inst, assoc, testsup::ones_theta(sc.R, sc.M()));
    const WmmseResult res =
        wmmse_solve(inst, h_eff, matched_filter_beamformer(inst, h_eff));

    const double p = frobenius_norm(res.F);
    CHECK(std::abs(p * p - inst.p_max) <= 1e-9 * inst.p_max);
    // Cauchy-Schwarz holds with equality iff f is parallel to h^H.
    cplx inner(0.0, 0.0);
    double hn = 0.0, fn = 0.0;
    for (std::size_t n = 0; n < sc.N_t; ++n) {
      inner += h_eff.at(0, n) * res.F.at(n, 0);
      hn += std::norm(h_eff.at(0, n));
      fn += std::norm(res.F.at(n, 0));
    }
    CHECK(std::abs(inner) >=
          std::sqrt(hn * fn) * (1.0 - 1e-6));
    CHECK(non_decreasing(res.trace, 1e-9));
  }
}

TEST_CASE("beamformer updates never lose rate and beat random designs") {
  const ScenarioConfig sc = testsup::desk_scenario();
  const Dataset ds = generate_dataset(sc, 20, 32, 16, 4);
  std::mt19937_64 rng(4711);
  std::normal_distribution<double> dist;

  for (std::size_t idx = 0; idx < ds.samples.size(); ++idx) {
    const ProblemInstance inst = testsup::instance_for(ds, idx, 20.0);
    const Association assoc =
        case_association(sc, ds.samples[idx], CaseMode::kNearest);
    const ComplexMatrix h_eff =
        effective_channel(inst, assoc, testsup::ones_theta(sc.R, sc.M()));
    const WmmseResult res =
        wmmse_solve(inst, h_eff, matched_filter_beamformer(inst, h_eff));
    CHECK(non_decreasing(res.trace, 1e-9));
    const double p = frobenius_norm(res.F);
    CHECK(p * p <= inst.p_max * (1.0 + 1e-9));

    if (idx == 0) {
      // The converged point dominates 50 random feasible beamformers.
      for (int trial = 0; trial < 50; ++trial) {
        ComplexMatrix guess(sc.N_t, sc.K);
        for (std::size_t i = 0; i < guess.numel(); ++i) {
          guess.data()[i] = cplx(dist(rng), dist(rng));
        }
        const ComplexMatrix feasible = project_power(guess, inst.p_max);
        CHECK(res.trace.back() >=
              wsr(inst, sinr(inst, h_eff, feasible)) - 1e-12);
      }
    }
  }
}

TEST_CASE("infeasible warm starts are rejected") {
  const ScenarioConfig sc = testsup::desk_scenario();
  const Dataset ds = generate_dataset(sc, 1, 33, 1, 0);
  const ProblemInstance inst = testsup::instance_for(ds, 0, 20.0);
  const Association assoc =
      case_association(sc, ds.samples[0], CaseMode::kNearest);
  const ComplexMatrix h_eff =
      effective_channel(inst, assoc, testsup::ones_theta(sc.R, sc.M()));
  ComplexMatrix hot(sc.N_t, sc.K, cplx(1.0, 0.0));  // way over budget
  CHECK_THROWS_AS(wmmse_solve(inst, h_eff, hot), std::invalid_argument);
}

TEST_CASE("phase gradient matches finite differences") {
  const ScenarioConfig sc = testsup::tiny_scenario();
  const Dataset ds = generate_dataset(sc, 5, 34, 4, 1);
  const double h = 1e-6;
  for (std::size_t idx = 0; idx < 5; ++idx) {
    const ProblemInstance inst = testsup::instance_for(ds, idx, 20.0);
    const Association assoc =
        case_association(sc, ds.samples[idx], CaseMode::kNearest);
    const ComplexMatrix F = matched_filter_beamformer(
        inst, effective_channel(inst, assoc,
                                testsup::ones_theta(sc.R, sc.M())));

    // Pack phases as [Re, Im] pairs, surface-major; rate is linear in theta
    // so the objective is well-defined off the unit-modulus manifold too.
    const auto unpack = [&](const std::vector<double>& v) {
      std::vector<ComplexMatrix> theta(sc.R, ComplexMatrix(1, sc.M()));
      for (std::size_t i = 0; i < sc.R; ++i) {
        for (std::size_t m = 0; m < sc.M(); ++m) {
          const std::size_t e = 2 * (i * sc.M() + m);
          theta[i].at(0, m) = cplx(v[e], v[e + 1]);
        }
      }
      return theta;
    };
    const auto objective = [&](const std::vector<double>& v) {
      const auto theta = unpack(v);
      return wsr(inst, sinr(inst, effective_channel(inst, assoc, theta), F));
    };

    std::mt19937_64 rng(100 + idx);
    std::uniform_real_distribution<double> u(0.0, 2.0 * std::acos(-1.0));
    std::vector<double> x(2 * sc.R * sc.M());
    for (std::size_t e = 0; e < x.size(); e += 2) {
      const double phi = u(rng);
      x[e] = std::cos(phi);
      x[e + 1] = std::sin(phi);
    }

    const ComplexMatrix g = wsr_phase_gradient(inst, assoc, F, unpack(x));
    std::vector<double> analytic(x.size());
    for (std::size_t i = 0; i < sc.R; ++i) {
      for (std::size_t m = 0; m < sc.M(); ++m) {
        analytic[2 * (i * sc.M() + m)] = g.at(0, i * sc.M() + m).real();
        analytic[2 * (i * sc.M() + m) + 1] = g.at(0, i * sc.M() + m).imag();
      }
    }
    const std::vector<double> fd = oracles::fd_gradient(objective, x, h);
    CHECK(oracles::fd_max_rel_error(analytic, fd, objective(x), h) < 1e-5);
  }
}

TEST_CASE("degenerate single-element link leaves the trace flat") {
  ScenarioConfig sc = testsup::tiny_scenario();
  sc.K = 1;
  sc.R = 1;
  sc.N_t = 1;
  sc.M_x = 1;
  sc.M_y = 1;
  sc.L = 1;
  sc.ris_positions = {{30.0, 25.0}};
  const Dataset ds = generate_dataset(sc, 1, 35, 1, 0);
  const ProblemInstance inst = testsup::instance_for(ds, 0, 20.0);
  const Association assoc = testsup::make_assoc(1, {0});
  const ComplexMatrix F = matched_filter_beamformer(
      inst, effective_channel(inst, assoc, testsup::ones_theta(1, 1)));

  const RcgResult res = rcg_phase_solve(inst, assoc, F, testsup::ones_theta(1, 1));
  REQUIRE(!res.trace.empty());
  const auto [lo, hi] = std::minmax_element(res.trace.begin(), res.trace.end());
  CHECK(*hi - *lo <= 1e-12 * std::max(1.0, std::abs(*hi)));
  CHECK(unit_modulus_error(res.theta) <= 1e-12);
}

TEST_CASE("two-element phase search hits the grid oracle and the bound") {
  ScenarioConfig sc = testsup::tiny_scenario();
  sc.K = 1;
  sc.R = 1;
  sc.ris_positions = {{30.0, 25.0}};
  const Dataset ds = generate_dataset(sc, 2, 36, 1, 1);
  for (std::size_t idx = 0; idx < 2; ++idx) {
    const ProblemInstance inst = testsup::instance_for(ds, idx, 20.0);
    const Association assoc = testsup::make_assoc(1, {0});
    const ComplexMatrix F = matched_filter_beamformer(
        inst, effective_channel(inst, assoc,
                                testsup::ones_theta(1, sc.M())));

    // Coefficients of the linear form h(theta) f = sum_m theta_m c_m.
    const ComplexMatrix c = multiply(ds.samples[idx].H_of(0, 0, 1), F);
    std::vector<cplx> coeffs(sc.M());
    for (std::size_t m = 0; m < sc.M(); ++m) coeffs[m] = c.at(m, 0);

    const RcgResult res =
        rcg_phase_solve(inst, assoc, F, testsup::ones_theta(1, sc.M()));
    const double got = res.trace.back();
    const double bound =
        oracles::cophase_bound_wsr(coeffs, inst.noise_power, 1.0);
    const double grid =
        oracles::grid_best_wsr(coeffs, inst.noise_power, 1.0, 360);

    CHECK(got <= bound * (1.0 + 1e-9));
    CHECK(got >= bound * (1.0 - 1e-6));
    CHECK(got >= grid - 1e-12 * std::max(1.0, grid));
    CHECK(grid >= bound * (1.0 - 1e-3));
  }
}

TEST_CASE("manifold iterates stay feasible and stationary-consistent") {
  const ScenarioConfig sc = testsup::desk_scenario();
  const Dataset ds = generate_dataset(sc, 5, 37, 4, 1);
  for (std::size_t idx = 0; idx < 5; ++idx) {
    const ProblemInstance inst = testsup::instance_for(ds, idx, 20.0);
    const Association assoc =
        case_association(sc, ds.samples[idx], CaseMode::kNearest);
    const ComplexMatrix F = matched_filter_beamformer(
        inst, effective_channel(inst, assoc,
                                testsup::ones_theta(sc.R, sc.M())));
    const RcgResult res =
        rcg_phase_solve(inst, assoc, F, testsup::ones_theta(sc.R, sc.M()));
    CHECK(unit_modulus_error(res.theta) <= 1e-12);
    CHECK(non_decreasing(res.trace, 1e-9));

    // The tangent projection at any unit-modulus point is radially orthogonal.
    const ComplexMatrix g = wsr_phase_gradient(inst, assoc, F, res.theta);
    for (std::size_t i = 0; i < sc.R; ++i) {
      for (std::size_t m = 0; m < sc.M(); ++m) {
        const cplx gv = g.at(0, i * sc.M() + m);
        const cplx tv = res.theta[i].at(0, m);
        const double radial = (gv * std::conj(tv)).real();
        const cplx tangent = gv - radial * tv;
        CHECK(std::abs((tangent * std::conj(tv)).real()) <= 1e-9);
      }
    }

    CHECK_THROWS_AS(
        rcg_phase_solve(inst, assoc, F,
                        std::vector<ComplexMatrix>(
                            sc.R, ComplexMatrix(1, sc.M(), cplx(0.5, 0.0)))),
        std::invalid_argument);
  }
}

TEST_CASE("alternating optimization improves monotonically to its best") {
  const ScenarioConfig sc = testsup::desk_scenario();
  const Dataset ds = generate_dataset(sc, 20, 38, 16, 4);
  for (std::size_t idx = 0; idx < ds.samples.size(); ++idx) {
    const ProblemInstance inst = testsup::instance_for(ds, idx, 20.0);
    const Association assoc =
        case_association(sc, ds.samples[idx], CaseMode::kNearest);
    const AoResult res = ao_solve(inst, assoc);
    CHECK(non_decreasing(res.trace, 1e-9));
    CHECK(res.solution.wsr == *std::max_element(res.trace.begin(),
                                                res.trace.end()));
    const double p = frobenius_norm(res.solution.F);
    CHECK(p * p <= inst.p_max * (1.0 + 1e-9));
    CHECK(unit_modulus_error(res.solution.theta) <= 1e-12);
  }
}

TEST_CASE("alternating optimization beats random phases almost always") {
  const ScenarioConfig sc = testsup::desk_scenario();
  const std::size_t n = 200;
  const Dataset ds = generate_dataset(sc, n, 39, n, 0);
  std::size_t wins = 0;
  for (std::size_t idx = 0; idx < n; ++idx) {
    const ProblemInstance inst = testsup::instance_for(ds, idx, 20.0);
    const Association assoc =
        case_association(sc, ds.samples[idx], CaseMode::kNearest);
    std::mt19937_64 rng(5000 + idx);
    const Solution rnd = random_phase_baseline(inst, assoc, rng);
    const AoResult ao = ao_solve(inst, assoc);
    if (ao.solution.wsr >= rnd.wsr) ++wins;
  }
  CHECK(wins >= 198);  // >= 99% of 200
}

TEST_CASE("random phase draws are feasible, distinct, and weaker on average") {
  const ScenarioConfig sc = testsup::desk_scenario();
  const Dataset ds = generate_dataset(sc, 1, 40, 1, 0);
  const ProblemInstance inst = testsup::instance_for(ds, 0, 20.0);
  const Association assoc =
      case_association(sc, ds.samples[0], CaseMode::kNearest);

  double acc = 0.0;
  bool any_different = false;
  Solution first;
  for (int trial = 0; trial < 100; ++trial) {
    std::mt19937_64 rng(9000 + trial);
    const Solution s = random_phase_baseline(inst, assoc, rng);
    CHECK(unit_modulus_error(s.theta) <= 1e-12);
    acc += s.wsr;
    if (trial == 0) {
      first = s;
    } else if (testsup::cmax_abs_diff(s.theta[0], first.theta[0]) > 1e-9) {
      any_different = true;
    }
  }
  CHECK(any_different);
  const AoResult ao = ao_solve(inst, assoc);
  CHECK(acc / 100.0 < ao.solution.wsr);
}

TEST_CASE("brute force enumerates every assignment, user zero leading") {
  const ScenarioConfig sc = testsup::desk_scenario();
  const Dataset ds = generate_dataset(sc, 30, 41, 24, 6);
  std::size_t nearest_wins = 0;
  for (std::size_t idx = 0; idx < 30; ++idx) {
    const ProblemInstance inst = testsup::instance_for(ds, idx, 20.0);
    const BruteForceResult bf = brute_force_association(inst);
    const Association nearest =
        case_association(sc, ds.samples[idx], CaseMode::kNearest);
    if (idx == 0) {
      REQUIRE(bf.candidates.size() == 4);
      REQUIRE(bf.wsrs.size() == 4);
      CHECK(bf.candidates[0].served_by(0) == 0);
      CHECK(bf.candidates[0].served_by(1) == 0);
      CHECK(bf.candidates[1].served_by(0) == 0);
      CHECK(bf.candidates[1].served_by(1) == 1);
      CHECK(bf.candidates[2].served_by(0) == 1);
      CHECK(bf.candidates[2].served_by(1) == 0);
      CHECK(bf.candidates[3].served_by(0) == 1);
      CHECK(bf.candidates[3].served_by(1) == 1);
    }
    CHECK(bf.best_wsr ==
          *std::max_element(bf.wsrs.begin(), bf.wsrs.end()));
    // The exhaustive optimum dominates the fixed nearest rule's AO value.
    for (std::size_t c = 0; c < bf.candidates.size(); ++c) {
      if (bf.candidates[c] == nearest) {
        CHECK(bf.best_wsr >= bf.wsrs[c] - 1e-12);
        if (bf.best == nearest) ++nearest_wins;
      }
    }
  }
  (void)nearest_wins;
}

// Kept separate from the enumeration checks above because it asserts a
// statistical property of the scenario rather than solver bookkeeping.  At
// this power budget the solver pours nearly all power into the stronger
// user, so the runner-up association trails the winner by well under a ppm
// and the argmax is decided by the weak user's instantaneous link draw; the
// distance rule tracks that draw only when shadowing and small-scale fading
// do not flip the link order.
TEST_CASE("nearest rule is the modal brute-force winner") {
  const ScenarioConfig sc = testsup::desk_scenario();
  const Dataset ds = generate_dataset(sc, 30, 41, 24, 6);
  std::size_t nearest_wins = 0;
  for (std::size_t idx = 0; idx < 30; ++idx) {
    const ProblemInstance inst = testsup::instance_for(ds, idx, 20.0);
    const BruteForceResult bf = brute_force_association(inst);
    const Association nearest =
        case_association(sc, ds.samples[idx], CaseMode::kNearest);
    if (bf.best == nearest) ++nearest_wins;
  }
  CHECK(nearest_wins > 15);  // nearest is the modal optimum
}

TEST_CASE("brute force refuses combinatorial blowups") {
  ScenarioConfig sc = testsup::tiny_scenario();
  sc.K = 9;  // 2^9 = 512 > 256 candidates
  sc.M_x = 1;
  sc.M_y = 1;
  sc.N_t = 1;
  const ChannelRealization cr = testsup::unit_realization(sc);
  const ProblemInstance inst =
      raw_instance(sc, cr, equal_weights(9), 1e-11, 0.1);
  CHECK_THROWS_AS(brute_force_association(inst), std::invalid_argument);
}

}  // TEST_SUITE("baselines")
