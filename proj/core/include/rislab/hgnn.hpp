#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "rislab/channel.hpp"
#include "rislab/sysmodel.hpp"
#include "rislab/tape.hpp"
#include "rislab/tensor.hpp"

namespace rislab {

/** Architecture hyperparameters shared by the graph model and the MLP benchmark. */
struct HgnnConfig {
  std::size_t hidden = 64;      ///< feature width D
  std::size_t depth = 4;        ///< total blocks T: 1 encoder + (T-2) core + 1 decoder
  std::size_t N_t = 8;
  std::size_t M = 16;
  std::size_t R = 2;
  std::size_t K = 2;
  double leaky_slope = 0.01;

  std::size_t core_steps() const { return depth - 2; }
  std::size_t pair_feature_dim() const { return 2 * M * N_t; }
  void validate() const;
};

/** A trained (or initialized) network plus the scalars needed to use it. */
struct Model {
  enum class Kind : std::uint32_t { kGnn = 0, kDnn = 1 };

  Kind kind = Kind::kGnn;
  HgnnConfig config;
  double eta = 0.0;          ///< rate/cross-entropy balance used in training
  double input_scale = 1.0;  ///< train-set RMS of cascaded-channel magnitudes
  double rate_scale = 1.0;   ///< rate normalizer frozen at pretraining start
  double pmax_dbm = 20.0;    ///< operating transmit power this model targets
  /** Association rule that generated this model's training labels. */
  CaseMode label_mode = CaseMode::kNearest;
  std::size_t label_single_index = 0;
  std::size_t completed_epochs = 0;
  std::map<std::string, RealTensor> params;  ///< name -> tensor, shared heads
};

/**
 * Fresh parameters for the given architecture: every tensor drawn uniform on
 * [-1/sqrt(fan_in), 1/sqrt(fan_in)] from a per-tensor substream of `seed`, so
 * initialization is independent of map iteration order.
 */
Model init_model(Model::Kind kind, const HgnnConfig& config, std::uint64_t seed);

/** Total scalar parameter count (logged at startup). */
std::size_t parameter_count(const Model& model);

/**
 * Raw per-user input feature: flatten([Re(Hbar_k), Im(Hbar_k)]) where Hbar_k
 * stacks the user's cascaded channels from every surface (R*M x N_t).
 * Length 2*R*M*N_t; the inverse reconstruction is lossless.
 */
std::vector<double> user_raw_feature(const ChannelRealization& cr, std::size_t R,
                                     std::size_t K, std::size_t k);

/** Train-set RMS of |H_ik| entries, the dataset-global input standardizer. */
double dataset_input_scale(const Dataset& ds);

/**
 * Constant tensors for one mini-batch, laid out block-major so that node
 * states slice cleanly: pair rows at ((k*R+i)*B + b), user rows at (k*B + b),
 * surface rows at (i*B + b).
 */
struct BatchData {
  std::size_t B = 0;
  HgnnConfig dims;
  RealTensor pair_features;  ///< (K*R*B) x 2MN_t, standardized
  RealTensor user_context;   ///< (K*B) x 4MN_t: mean over other users' summaries
  RealTensor ris_context;    ///< (R*B) x 2MN_t: mean over users of pair features
  RealTensor flat_features;  ///< B x (K*2RMN_t): all-CSI rows for the MLP benchmark
  /** Realified phase-application kernels, one 2M x 2N_t block per pair row:
   *  [Re theta, Im theta] * [[Re H, Im H], [-Im H, Re H]] = [Re tH, Im tH]. */
  std::shared_ptr<std::vector<double>> phase_kernels;
  RealTensor labels;  ///< (K*B) x R one-hot nearest-surface labels
  std::vector<std::size_t> sample_ids;
};

BatchData make_batch(const Dataset& ds, const std::vector<std::size_t>& indices,
                     const HgnnConfig& dims, double input_scale,
                     CaseMode label_mode = CaseMode::kNearest,
                     std::size_t label_single_index = 0);

/** Tape nodes a forward pass exposes to losses and readout. */
struct ForwardNodes {
  Tape::NodeId f_raw = 0;     ///< B x 2*N_t*K pre-projection beamformer rows
  Tape::NodeId f = 0;         ///< after full-power normalization
  Tape::NodeId theta_raw = 0; ///< (R*B) x 2M pre-projection phase rows
  Tape::NodeId theta = 0;     ///< after unit-modulus normalization
  Tape::NodeId logits = 0;    ///< (K*B) x R association logits
  Tape::NodeId scores = 0;    ///< row-stochastic softmax of logits
  bool has_scores = false;
};

/**
 * Heterogeneous message-passing forward pass over one batch.  `param_nodes`
 * receives the tape input id of every parameter tensor (created here in name
 * order).  When `with_assoc_head` is false the association branch is skipped
 * (pretraining leaves those parameters untouched).
 */
ForwardNodes hgnn_forward_graph(Tape& tape, const BatchData& batch,
                                const Model& model, double p_max_watts,
                                std::map<std::string, Tape::NodeId>& param_nodes,
                                bool with_assoc_head);

/** Dense encoder/processor/decoder benchmark producing the same heads. */
ForwardNodes dnn_forward_graph(Tape& tape, const BatchData& batch,
                               const Model& model, double p_max_watts,
                               std::map<std::string, Tape::NodeId>& param_nodes);

/** Dispatches on model.kind. */
ForwardNodes model_forward_graph(Tape& tape, const BatchData& batch,
                                 const Model& model, double p_max_watts,
                                 std::map<std::string, Tape::NodeId>& param_nodes,
                                 bool with_assoc_head);

struct LossNodes {
  Tape::NodeId rate_loss = 0;   ///< -mean batch WSR (bits/s/Hz)
  Tape::NodeId ce_loss = 0;     ///< mean over batch of the label cross-entropy
  Tape::NodeId total = 0;       ///< rate_loss/rate_scale + eta*ce_loss
  bool has_ce = false;
};

/**
 * Differentiable training loss on top of a forward pass.  The rate term uses
 * soft association weights (the softmax scores) when `soft_association` is
 * true, otherwise the one-hot labels from the batch.  `rate_scale` only
 * conditions the optimization; reported metrics are never scaled.
 */
LossNodes training_loss_graph(Tape& tape, const BatchData& batch,
                              const ForwardNodes& fwd,
                              const std::vector<double>& weights,
                              double noise_power, double eta, double rate_scale,
                              bool soft_association);

/** Per-sample decoded outputs read back from an evaluated forward pass. */
struct DecodedSample {
  ComplexMatrix F;                   ///< N_t x K
  std::vector<ComplexMatrix> theta;  ///< R rows of 1 x M
  std::vector<double> scores;        ///< K x R row-major
  Association assoc;                 ///< decoded hard association (if scores)
};

std::vector<DecodedSample> read_forward(const Tape& tape, const BatchData& batch,
                                        const ForwardNodes& fwd);

/**
 * Reference value of the rate loss for one instance: h_k built from
 * arbitrary row-stochastic association weights (K x R), then
 * -sum_k w_k log2(1 + SINR_k).  Coincides with -wsr(...) at one-hot weights.
 */
double loss_wsr_value(const ProblemInstance& inst, const ComplexMatrix& F,
                      const std::vector<ComplexMatrix>& theta,
                      const std::vector<double>& assoc_weights);

/**
 * Label cross-entropy -sum_k sum_i U_{k,i} ln c_{k,i} (natural log); scores at
 * labeled positions are clamped at 1e-12 and each clamp is counted.
 */
double loss_ce_value(const Association& labels, const std::vector<double>& scores,
                     std::size_t* clamp_count = nullptr);

}  // namespace rislab
