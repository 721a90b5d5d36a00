#include "rislab/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>

#include "rislab/rng.hpp"
#include "rislab/tape.hpp"

namespace rislab {

namespace {

constexpr double kPi = 3.14159265358979323846;

double cosine_lr(const TrainConfig& cfg, std::size_t epoch) {
  const double floor = cfg.lr * cfg.lr_floor_frac;
  if (cfg.epochs <= 1) return cfg.lr;
  const double t = static_cast<double>(epoch) / static_cast<double>(cfg.epochs - 1);
  return floor + (cfg.lr - floor) * 0.5 * (1.0 + std::cos(kPi * t));
}

std::size_t count_score_clamps(const Tape& tape, const ForwardNodes& fwd,
                               const BatchData& batch) {
  if (!fwd.has_scores) return 0;
  const RealTensor& scores = tape.value(fwd.scores);
  std::size_t clamps = 0;
  for (std::size_t e = 0; e < scores.numel(); ++e) {
    if (batch.labels[e] != 0.0 && scores[e] < 1e-12) ++clamps;
  }
  return clamps;
}

struct FitPhase {
  bool pretrain = false;
};

TrainResult fit(const Dataset& ds, Model model, const TrainConfig& cfg,
                const MetricsCallback& callback, AdamState adam, FitPhase phase) {
  cfg.validate();
  model.config.validate();
  if (ds.train_count == 0 || ds.val_count == 0) {
    throw std::invalid_argument("fit: dataset needs both train and val samples");
  }
  if (model.completed_epochs > cfg.epochs) {
    throw std::invalid_argument("fit: model already has more epochs than requested");
  }
  const double noise = dbm_to_watts(ds.scenario.noise_power_dbm);
  const double p_max = dbm_to_watts(cfg.pmax_dbm);
  const std::vector<double> weights = equal_weights(model.config.K);
  model.pmax_dbm = cfg.pmax_dbm;
  model.label_mode = cfg.label_mode;
  model.label_single_index = cfg.label_single_index;

  // input_scale/rate_scale default to the 1.0 sentinel on a fresh model; they
  // are frozen here once and travel with the checkpoint afterwards.
  if (model.input_scale == 1.0) model.input_scale = dataset_input_scale(ds);
  if (model.rate_scale == 1.0) {
    const EvalSummary init_eval =
        evaluate_model(ds, ds.train_count, ds.train_count + ds.val_count, model,
                       cfg.pmax_dbm, /*use_label_association=*/true,
                       cfg.batch_size);
    model.rate_scale = std::max(init_eval.mean_wsr, 1e-300);
  }

  TrainResult result{std::move(model), std::move(adam), {}};
  const double eta = phase.pretrain ? 0.0 : cfg.eta;
  // Stamp eta before the loop so mid-run checkpoints carry it.
  if (!phase.pretrain) result.model.eta = eta;

  std::vector<std::size_t> order(ds.train_count);
  for (std::size_t epoch = result.model.completed_epochs; epoch < cfg.epochs;
       ++epoch) {
    const double lr = cosine_lr(cfg, epoch);
    result.adam.config().lr = lr;
    result.adam.config().weight_decay = cfg.weight_decay;

    std::iota(order.begin(), order.end(), 0);
    std::mt19937_64 shuffle_rng(substream_seed(cfg.seed, 1000 + epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double loss_sum = 0.0;
    std::size_t dead_units = 0;
    std::size_t clamps = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t stop = std::min(order.size(), start + cfg.batch_size);
      const std::vector<std::size_t> chunk(order.begin() + start,
                                           order.begin() + stop);
      Tape tape;
      const BatchData batch =
          make_batch(ds, chunk, result.model.config, result.model.input_scale,
                     result.model.label_mode, result.model.label_single_index);
      std::map<std::string, Tape::NodeId> param_nodes;
      const ForwardNodes fwd =
          model_forward_graph(tape, batch, result.model, p_max, param_nodes,
                              /*with_assoc_head=*/!phase.pretrain);
      const LossNodes loss =
          training_loss_graph(tape, batch, fwd, weights, noise, eta,
                              result.model.rate_scale,
                              /*soft_association=*/!phase.pretrain);
      const double value = tape.value(loss.total).at(0, 0);
      if (!std::isfinite(value)) {
        throw std::runtime_error("fit: non-finite loss at epoch " +
                                 std::to_string(epoch) + ", batch offset " +
                                 std::to_string(start));
      }
      tape.backward(loss.total);

      std::map<std::string, RealTensor> grads;
      for (const auto& [name, node] : param_nodes) {
        if (tape.has_grad(node)) grads.emplace(name, tape.grad(node));
      }
      adam_step(result.model.params, grads, result.adam);

      loss_sum += value * static_cast<double>(chunk.size());
      dead_units += static_cast<std::size_t>(tape.dead_unit_count());
      clamps += count_score_clamps(tape, fwd, batch);
    }

    const EvalSummary val =
        evaluate_model(ds, ds.train_count, ds.train_count + ds.val_count,
                       result.model, cfg.pmax_dbm,
                       /*use_label_association=*/phase.pretrain, cfg.batch_size);

    EpochMetrics m;
    m.epoch = epoch;
    m.train_loss = loss_sum / static_cast<double>(ds.train_count);
    m.val_wsr = val.mean_wsr;
    m.assoc_match_rate = val.assoc_match_rate;
    m.lr = lr;
    m.dead_phase_units = dead_units;
    m.score_clamps = clamps;
    result.metrics.push_back(m);
    result.model.completed_epochs = epoch + 1;
    if (callback) callback(m, result.model, result.adam);
  }
  return result;
}

}  // namespace

void TrainConfig::validate() const {
  if (epochs == 0) throw std::invalid_argument("train config: epochs must be > 0");
  if (batch_size == 0) {
    throw std::invalid_argument("train config: batch size must be > 0");
  }
  if (!(lr > 0.0)) throw std::invalid_argument("train config: lr must be > 0");
  if (!(lr_floor_frac > 0.0) || lr_floor_frac > 1.0) {
    throw std::invalid_argument("train config: lr floor fraction must be in (0, 1]");
  }
  if (weight_decay < 0.0) {
    throw std::invalid_argument("train config: weight decay must be >= 0");
  }
  if (eta < 0.0) throw std::invalid_argument("train config: eta must be >= 0");
}

std::vector<double> equal_weights(std::size_t K) {
  if (K == 0) throw std::invalid_argument("equal_weights: K must be > 0");
  return std::vector<double>(K, 1.0 / static_cast<double>(K));
}

ProblemInstance make_instance(const Dataset& ds, std::size_t idx,
                              const std::vector<double>& weights,
                              double pmax_dbm) {
  if (idx >= ds.samples.size()) {
    throw std::invalid_argument("make_instance: sample index out of range");
  }
  ProblemInstance inst;
  inst.realization = &ds.samples[idx];
  inst.scenario = &ds.scenario;
  inst.weights = weights;
  inst.noise_power = dbm_to_watts(ds.scenario.noise_power_dbm);
  inst.p_max = dbm_to_watts(pmax_dbm);
  return inst;
}

EvalSummary evaluate_model(const Dataset& ds, std::size_t begin, std::size_t end,
                           const Model& model, double pmax_dbm,
                           bool use_label_association, std::size_t batch_size) {
  if (begin >= end || end > ds.samples.size()) {
    throw std::invalid_argument("evaluate_model: bad sample range");
  }
  if (batch_size == 0) {
    throw std::invalid_argument("evaluate_model: batch size must be > 0");
  }
  const std::vector<double> weights = equal_weights(model.config.K);
  const double p_max = dbm_to_watts(pmax_dbm);

  EvalSummary summary;
  std::size_t user_matches = 0;
  std::size_t user_total = 0;

  for (std::size_t start = begin; start < end; start += batch_size) {
    const std::size_t stop = std::min(end, start + batch_size);
    std::vector<std::size_t> chunk(stop - start);
    std::iota(chunk.begin(), chunk.end(), start);

    Tape tape;
    const BatchData batch =
        make_batch(ds, chunk, model.config, model.input_scale, model.label_mode,
                   model.label_single_index);
    std::map<std::string, Tape::NodeId> param_nodes;
    const ForwardNodes fwd = model_forward_graph(
        tape, batch, model, p_max, param_nodes, /*with_assoc_head=*/true);
    const std::vector<DecodedSample> decoded = read_forward(tape, batch, fwd);

    for (std::size_t b = 0; b < decoded.size(); ++b) {
      const std::size_t idx = chunk[b];
      const ProblemInstance inst = make_instance(ds, idx, weights, pmax_dbm);
      const Association labels =
          case_association(ds.scenario, ds.samples[idx], model.label_mode,
                           model.label_single_index);
      const Association& used =
          use_label_association ? labels : decoded[b].assoc;
      const ComplexMatrix h = effective_channel(inst, used, decoded[b].theta);
      summary.per_sample_wsr.push_back(wsr(inst, sinr(inst, h, decoded[b].F)));
      summary.per_sample_assoc.push_back(used);
      for (std::size_t k = 0; k < model.config.K; ++k) {
        user_total += 1;
        if (decoded[b].assoc.served_by(k) == labels.served_by(k)) ++user_matches;
      }
    }
  }

  summary.n = summary.per_sample_wsr.size();
  double mean = 0.0;
  for (double v : summary.per_sample_wsr) mean += v;
  mean /= static_cast<double>(summary.n);
  double var = 0.0;
  for (double v : summary.per_sample_wsr) var += (v - mean) * (v - mean);
  summary.mean_wsr = mean;
  summary.std_wsr =
      (summary.n > 1) ? std::sqrt(var / static_cast<double>(summary.n - 1)) : 0.0;
  summary.assoc_match_rate =
      static_cast<double>(user_matches) / static_cast<double>(user_total);
  return summary;
}

TrainResult run_pretraining(const Dataset& ds, Model model, const TrainConfig& cfg,
                            const MetricsCallback& callback, AdamState adam) {
  return fit(ds, std::move(model), cfg, callback, std::move(adam),
             FitPhase{/*pretrain=*/true});
}

TrainResult run_training(const Dataset& ds, Model model, const TrainConfig& cfg,
                         const MetricsCallback& callback, AdamState adam) {
  return fit(ds, std::move(model), cfg, callback, std::move(adam),
             FitPhase{/*pretrain=*/false});
}

double compute_eta(const Dataset& ds, const Model& pretrained) {
  const std::size_t begin = ds.train_count;
  const std::size_t end = ds.train_count + ds.val_count;
  const double numerator =
      evaluate_model(ds, begin, end, pretrained, pretrained.pmax_dbm,
                     /*use_label_association=*/true)
          .mean_wsr;
  const double denominator =
      evaluate_model(ds, begin, end, pretrained, 30.0,
                     /*use_label_association=*/true)
          .mean_wsr;
  if (!(denominator > 0.0)) {
    throw std::domain_error("compute_eta: 30 dBm reference WSR is not positive");
  }
  return numerator / denominator;
}

}  // namespace rislab
