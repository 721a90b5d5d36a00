#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <vector>

#include "rislab/adam.hpp"
#include "rislab/channel.hpp"
#include "rislab/hgnn.hpp"
#include "rislab/sysmodel.hpp"

namespace rislab {

struct TrainConfig {
  std::size_t epochs = 60;
  std::size_t batch_size = 128;
  double lr = 5e-4;
  double lr_floor_frac = 0.1;  ///< cosine schedule decays to this fraction
  double weight_decay = 2.5e-5;
  double eta = 0.0;            ///< cross-entropy coefficient (training phase)
  double pmax_dbm = 20.0;
  /** Association rule generating labels (nearest for the standard pipeline;
   *  single(r) trains a fixed-surface deployment baseline). */
  CaseMode label_mode = CaseMode::kNearest;
  std::size_t label_single_index = 0;
  std::uint64_t seed = 1;

  void validate() const;
};

struct EpochMetrics {
  std::size_t epoch = 0;        ///< 0-based, global across resumes
  double train_loss = 0.0;      ///< mean optimized objective over the epoch
  double val_wsr = 0.0;         ///< bits/s/Hz, never rescaled
  double assoc_match_rate = 0.0;
  double lr = 0.0;
  std::size_t dead_phase_units = 0;
  std::size_t score_clamps = 0;
};

/** Invoked after every epoch with the live model/optimizer (for logging and
 *  periodic checkpoints); must not mutate them. */
using MetricsCallback =
    std::function<void(const EpochMetrics&, const Model&, const AdamState&)>;

struct TrainResult {
  Model model;
  AdamState adam{AdamConfig{}};
  std::vector<EpochMetrics> metrics;  ///< one entry per epoch run in this call
};

/** Aggregate validation-style evaluation of a model over [begin, end). */
struct EvalSummary {
  double mean_wsr = 0.0;
  double std_wsr = 0.0;  ///< sample standard deviation
  double assoc_match_rate = 0.0;  ///< per-user agreement with the model's labels
  std::size_t n = 0;
  std::vector<double> per_sample_wsr;
  std::vector<Association> per_sample_assoc;  ///< hard decoded (or labels)
};

/**
 * Batched forward evaluation.  Reported WSR uses exact complex arithmetic on
 * the decoded outputs; the association is the hard decoded one, or the
 * nearest-surface labels when `use_label_association` is set (pretraining
 * metric).  `pmax_dbm` overrides the model's operating point (the value used
 * for both the power projection and the rate).
 */
EvalSummary evaluate_model(const Dataset& ds, std::size_t begin, std::size_t end,
                           const Model& model, double pmax_dbm,
                           bool use_label_association,
                           std::size_t batch_size = 128);

/**
 * Rate-only fit against the nearest-surface labels (the association branch is
 * not built, so its parameters keep their initialization).  On a fresh model
 * this freezes input_scale (train-set RMS) and rate_scale (initial validation
 * WSR under labels) into the returned model.  Aborts with the epoch/batch id
 * if the loss turns non-finite.
 */
TrainResult run_pretraining(const Dataset& ds, Model model, const TrainConfig& cfg,
                            const MetricsCallback& callback = nullptr,
                            AdamState adam = AdamState{AdamConfig{}});

/**
 * Full fit: rate loss through the soft association scores plus eta times the
 * label cross-entropy.  Per-epoch validation WSR uses the hard decoded
 * association.  Resuming continues the epoch numbering and cosine schedule
 * from model.completed_epochs.
 */
TrainResult run_training(const Dataset& ds, Model model, const TrainConfig& cfg,
                         const MetricsCallback& callback = nullptr,
                         AdamState adam = AdamState{AdamConfig{}});

/**
 * Penalty coefficient: validation WSR of the pretrained model at its operating
 * power divided by the same evaluation at 30 dBm (label association both
 * times).  Exactly 1 when the model operates at 30 dBm.  Rejects a
 * non-positive denominator.
 */
double compute_eta(const Dataset& ds, const Model& pretrained);

/** Equal user weights 1/K. */
std::vector<double> equal_weights(std::size_t K);

/** Problem instance for sample `idx` of the dataset at the given power. */
ProblemInstance make_instance(const Dataset& ds, std::size_t idx,
                              const std::vector<double>& weights,
                              double pmax_dbm);

}  // namespace rislab
