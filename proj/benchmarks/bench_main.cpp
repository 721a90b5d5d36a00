// Microbenchmarks for the hot paths: channel drawing, the classical solvers,
// and batched network forward/backward passes.

#include <benchmark/benchmark.h>

#include <map>
#include <random>
#include <vector>

#include "rislab/baselines.hpp"
#include "rislab/channel.hpp"
#include "rislab/hgnn.hpp"
#include "rislab/sysmodel.hpp"
#include "rislab/tape.hpp"
#include "rislab/train.hpp"

namespace {

const rislab::Dataset& bench_dataset() {
  static const rislab::Dataset ds = [] {
    rislab::ScenarioConfig sc;
    return rislab::generate_dataset(sc, 64, 12345, 48, 16);
  }();
  return ds;
}

rislab::ProblemInstance bench_instance(std::size_t idx) {
  static const std::vector<double> weights = rislab::equal_weights(2);
  return rislab::make_instance(bench_dataset(), idx, weights, 20.0);
}

void bm_sample_realization(benchmark::State& state) {
  rislab::ScenarioConfig sc;
  std::mt19937_64 rng(7);
  for (auto _ : state) {
    benchmark::DoNotOptimize(rislab::sample_realization(sc, rng));
  }
}
BENCHMARK(bm_sample_realization);

void bm_wmmse(benchmark::State& state) {
  const rislab::ProblemInstance inst = bench_instance(0);
  const rislab::Association assoc = rislab::case_association(
      *inst.scenario, *inst.realization, rislab::CaseMode::kNearest, 0);
  std::vector<rislab::ComplexMatrix> theta(
      inst.scenario->R,
      rislab::ComplexMatrix(1, inst.scenario->M(), rislab::cplx(1.0, 0.0)));
  const rislab::ComplexMatrix h_eff =
      rislab::effective_channel(inst, assoc, theta);
  const rislab::ComplexMatrix F0 =
      rislab::matched_filter_beamformer(inst, h_eff);
  for (auto _ : state) {
    benchmark::DoNotOptimize(rislab::wmmse_solve(inst, h_eff, F0));
  }
}
BENCHMARK(bm_wmmse);

void bm_rcg(benchmark::State& state) {
  const rislab::ProblemInstance inst = bench_instance(0);
  const rislab::Association assoc = rislab::case_association(
      *inst.scenario, *inst.realization, rislab::CaseMode::kNearest, 0);
  std::vector<rislab::ComplexMatrix> theta(
      inst.scenario->R,
      rislab::ComplexMatrix(1, inst.scenario->M(), rislab::cplx(1.0, 0.0)));
  const rislab::ComplexMatrix h_eff =
      rislab::effective_channel(inst, assoc, theta);
  const rislab::ComplexMatrix F =
      rislab::wmmse_solve(inst, h_eff,
                          rislab::matched_filter_beamformer(inst, h_eff))
          .F;
  for (auto _ : state) {
    benchmark::DoNotOptimize(rislab::rcg_phase_solve(inst, assoc, F, theta));
  }
}
BENCHMARK(bm_rcg);

void bm_ao(benchmark::State& state) {
  const rislab::ProblemInstance inst = bench_instance(0);
  const rislab::Association assoc = rislab::case_association(
      *inst.scenario, *inst.realization, rislab::CaseMode::kNearest, 0);
  for (auto _ : state) {
    benchmark::DoNotOptimize(rislab::ao_solve(inst, assoc));
  }
}
BENCHMARK(bm_ao);

void bm_make_batch(benchmark::State& state) {
  const rislab::Dataset& ds = bench_dataset();
  rislab::HgnnConfig mc;
  std::vector<std::size_t> idx(32);
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  for (auto _ : state) {
    benchmark::DoNotOptimize(rislab::make_batch(ds, idx, mc, 1e-10));
  }
}
BENCHMARK(bm_make_batch);

void bm_gnn_forward_backward(benchmark::State& state) {
  const rislab::Dataset& ds = bench_dataset();
  rislab::HgnnConfig mc;
  const rislab::Model model =
      rislab::init_model(rislab::Model::Kind::kGnn, mc, 3);
  std::vector<std::size_t> idx(static_cast<std::size_t>(state.range(0)));
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  const rislab::BatchData batch =
      rislab::make_batch(ds, idx, mc, rislab::dataset_input_scale(ds));
  const double p_max = rislab::dbm_to_watts(20.0);
  const double noise = rislab::dbm_to_watts(ds.scenario.noise_power_dbm);
  const std::vector<double> weights = rislab::equal_weights(mc.K);
  for (auto _ : state) {
    rislab::Tape tape;
    std::map<std::string, rislab::Tape::NodeId> params;
    const rislab::ForwardNodes fwd = rislab::hgnn_forward_graph(
        tape, batch, model, p_max, params, /*with_assoc_head=*/true);
    const rislab::LossNodes loss = rislab::training_loss_graph(
        tape, batch, fwd, weights, noise, 0.1, 1.0, /*soft_association=*/true);
    tape.backward(loss.total);
    benchmark::DoNotOptimize(tape.grad(params.at("enc_pair_w")));
  }
}
BENCHMARK(bm_gnn_forward_backward)->Arg(8)->Arg(32);

}  // namespace

BENCHMARK_MAIN();
