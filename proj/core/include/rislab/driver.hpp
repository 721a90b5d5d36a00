#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "rislab/channel.hpp"
#include "rislab/train.hpp"

namespace rislab {

/** Everything an experiment command needs, file-configurable and flag-overridable. */
struct RunConfig {
  ScenarioConfig scenario;

  // Architecture + optimization (desk-scale defaults).
  std::size_t hidden = 64;
  std::size_t depth = 4;
  std::string model_kind = "gnn";  ///< "gnn" | "dnn"
  std::size_t epochs = 60;
  std::size_t pretrain_epochs = 20;
  std::size_t batch_size = 128;
  double lr = 5e-4;
  double lr_floor_frac = 0.1;
  double weight_decay = 2.5e-5;
  double eta = -1.0;  ///< < 0 -> calibrate from the pretrained model
  double pmax_dbm = 20.0;
  std::string label_case = "nearest";  ///< "nearest" | "farthest" | "single"
  std::size_t label_single_index = 0;

  // Dataset.
  std::size_t n_samples = 11000;
  std::size_t train_count = 10000;
  std::size_t val_count = 1000;
  std::string dataset_path;  ///< default <out_dir>/dataset.bin

  // Run control.
  std::string out_dir = ".";
  std::uint64_t seed = 0;
  bool seed_set = false;
  bool resume = false;
  std::size_t checkpoint_every = 10;
  std::size_t eval_limit = 0;  ///< 0 -> whole validation split
  std::string methods;         ///< comma list; empty -> command default
  std::string checkpoint_path;  ///< default <out_dir>/model.ckpt

  // Sweep.
  std::string sweep_axis = "pmax_dbm";  ///< "pmax_dbm" | "m" | "n_t"
  std::string sweep_values;             ///< comma-separated numbers

  void validate_common() const;  ///< seed presence, counts, paths derivable
  std::string dataset_file() const;
  std::string model_file() const;
  std::string pretrain_file() const;
};

/**
 * Reads a sectioned key=value config file ([scenario], [train], [data],
 * [run]; '#' comments).  Returns "section.key" -> value; unknown keys are an
 * error so typos cannot silently vanish.
 */
std::map<std::string, std::string> parse_config_file(const std::string& path);

/** Applies parsed config-file entries onto the run configuration. */
void apply_config(const std::map<std::string, std::string>& kv, RunConfig& cfg);

/** One aggregated result line of an evaluation or sweep. */
struct ResultRow {
  double sweep_value = 0.0;
  std::string method;
  double mean_wsr = 0.0;
  double std_wsr = 0.0;
  std::size_t n = 0;
  double assoc_match = 0.0;  ///< per-user agreement with nearest-surface labels
  double seconds = 0.0;
};

/** CSV with the fixed schema sweep_value,method,mean_wsr,std_wsr,n,assoc_match,seconds. */
void write_result_csv(const std::vector<ResultRow>& rows, const std::string& path);

// Subcommand entry points; all throw std::exception subclasses on fatal errors.
void run_gen_data(const RunConfig& cfg);
void run_pretrain(const RunConfig& cfg);
void run_train(const RunConfig& cfg);
void run_eval(const RunConfig& cfg);
void run_sweep(const RunConfig& cfg);
void run_oracle(const RunConfig& cfg);
/** Returns the number of failed checks (0 = all numerics checks pass). */
int run_grad_check(const RunConfig& cfg);

}  // namespace rislab
