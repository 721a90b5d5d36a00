// Command-line front end: dataset generation, training, evaluation, sweeps,
// the brute-force association oracle, and the gradient self-check.

#include <cmath>
#include <cstdio>
#include <exception>
#include <functional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "rislab/driver.hpp"

namespace {

struct CliState {
  rislab::RunConfig cfg;
  std::string eta_text;  ///< "auto" or a number
  double square_m = 0.0; ///< convenience override: M with a square grid
};

void add_common_options(CLI::App* sub, CliState& st) {
  rislab::RunConfig& cfg = st.cfg;
  sub->add_option("--config", "sectioned key=value config file (already applied)")
      ->check(CLI::ExistingFile);
  sub->add_option("--seed", cfg.seed, "master RNG seed (required)");
  sub->add_option("--out", cfg.out_dir, "output directory")
      ->capture_default_str();
  sub->add_option("--dataset", cfg.dataset_path,
                  "dataset file (default <out>/dataset.bin)");
  sub->add_option("--checkpoint", cfg.checkpoint_path,
                  "model checkpoint (default <out>/model.ckpt)");
  sub->add_option("--methods", cfg.methods,
                  "comma list: gnn,dnn,ao_case1,ao_case2,ao_case3,random_phase,"
                  "brute_force");
  sub->add_option("--eval-limit", cfg.eval_limit,
                  "cap on evaluated validation instances (0 = all)")
      ->capture_default_str();
  sub->add_flag("--resume", cfg.resume, "continue from existing checkpoints");
  sub->add_option("--checkpoint-every", cfg.checkpoint_every,
                  "save every N epochs (0 = only at the end)")
      ->capture_default_str();

  sub->add_option("--epochs", cfg.epochs, "training epochs")
      ->capture_default_str();
  sub->add_option("--pretrain-epochs", cfg.pretrain_epochs,
                  "rate-only warmup epochs")
      ->capture_default_str();
  sub->add_option("--batch-size", cfg.batch_size, "minibatch size")
      ->capture_default_str();
  sub->add_option("--lr", cfg.lr, "peak learning rate")->capture_default_str();
  sub->add_option("--weight-decay", cfg.weight_decay, "decoupled weight decay")
      ->capture_default_str();
  sub->add_option("--eta", st.eta_text,
                  "cross-entropy coefficient, or 'auto' to calibrate");
  sub->add_option("--pmax-dbm", cfg.pmax_dbm, "transmit power budget, dBm")
      ->capture_default_str();
  sub->add_option("--hidden", cfg.hidden, "feature width")->capture_default_str();
  sub->add_option("--depth", cfg.depth, "network depth")->capture_default_str();
  sub->add_option("--model-kind", cfg.model_kind, "gnn or dnn")
      ->capture_default_str();
  sub->add_option("--label-case", cfg.label_case,
                  "association rule for training labels (nearest/farthest/single)")
      ->capture_default_str();
  sub->add_option("--label-single-index", cfg.label_single_index,
                  "surface index when --label-case=single")
      ->capture_default_str();

  sub->add_option("--n-samples", cfg.n_samples, "dataset size")
      ->capture_default_str();
  sub->add_option("--train-count", cfg.train_count, "training split size")
      ->capture_default_str();
  sub->add_option("--val-count", cfg.val_count, "validation split size")
      ->capture_default_str();
  sub->add_option("--n-t", cfg.scenario.N_t, "transmit antennas")
      ->capture_default_str();
  sub->add_option("--m", st.square_m,
                  "surface elements (perfect square, square grid)");
  sub->add_option("--noise-dbm", cfg.scenario.noise_power_dbm,
                  "noise power, dBm")
      ->capture_default_str();

  sub->add_option("--sweep-axis", cfg.sweep_axis, "pmax_dbm, m, or n_t")
      ->capture_default_str();
  sub->add_option("--sweep-values", cfg.sweep_values,
                  "comma-separated sweep points");
}

void finalize(CLI::App* sub, CliState& st) {
  if (sub->count("--seed") > 0) st.cfg.seed_set = true;
  if (!st.eta_text.empty()) {
    if (st.eta_text == "auto") {
      st.cfg.eta = -1.0;
    } else {
      try {
        st.cfg.eta = std::stod(st.eta_text);
      } catch (const std::exception&) {
        throw CLI::ValidationError("--eta", "must be a number or 'auto'");
      }
    }
  }
  if (sub->count("--m") > 0) {
    const double v = st.square_m;
    const auto side = static_cast<std::size_t>(std::llround(std::sqrt(v)));
    if (v <= 0 || static_cast<double>(side * side) != v) {
      throw CLI::ValidationError("--m", "must be a positive perfect square");
    }
    st.cfg.scenario.M_x = side;
    st.cfg.scenario.M_y = side;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multi-surface downlink lab: channels, solvers, learned models"};
  app.require_subcommand(1);

  CliState st;

  // Load the config file (if any) before CLI11 assigns flag values, so
  // explicit flags override file entries.
  try {
    for (int i = 1; i < argc; ++i) {
      const std::string arg = argv[i];
      std::string path;
      if (arg == "--config" && i + 1 < argc) {
        path = argv[i + 1];
      } else if (arg.rfind("--config=", 0) == 0) {
        path = arg.substr(9);
      }
      if (!path.empty()) {
        rislab::apply_config(rislab::parse_config_file(path), st.cfg);
      }
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }

  int rc = 0;
  const struct {
    const char* name;
    const char* help;
    std::function<void(const rislab::RunConfig&)> fn;
  } commands[] = {
      {"gen-data", "draw a channel dataset and write it to disk",
       rislab::run_gen_data},
      {"pretrain", "rate-only warmup against nearest-surface labels",
       rislab::run_pretrain},
      {"train", "full pipeline: pretrain, calibrate eta, train",
       rislab::run_train},
      {"eval", "aggregate validation comparison across methods",
       rislab::run_eval},
      {"sweep", "repeat train/eval along one scenario axis",
       rislab::run_sweep},
      {"oracle", "brute-force association table on validation instances",
       rislab::run_oracle},
      {"grad-check", "finite-difference self-check of the autodiff training loss",
       nullptr},
  };

  for (const auto& cmd : commands) {
    CLI::App* sub = app.add_subcommand(cmd.name, cmd.help);
    add_common_options(sub, st);
    auto fn = cmd.fn;
    sub->callback([sub, &st, fn, &rc]() {
      finalize(sub, st);
      if (fn) {
        fn(st.cfg);
      } else {
        if (!st.cfg.seed_set) {
          throw std::invalid_argument("a --seed value is required for every command");
        }
        rc = rislab::run_grad_check(st.cfg) == 0 ? 0 : 1;
      }
    });
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return rc;
}
