#include "rislab/driver.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <random>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "rislab/baselines.hpp"
#include "rislab/checkpoint.hpp"
#include "rislab/hgnn.hpp"
#include "rislab/rng.hpp"
#include "rislab/sysmodel.hpp"
#include "rislab/tape.hpp"

namespace rislab {
namespace {

using ordered_json = nlohmann::ordered_json;

std::string fmt_g(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return std::string(buf);
}

std::string fmt_seconds(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  return std::string(buf);
}

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, sep)) out.push_back(trim(item));
  if (!s.empty() && s.back() == sep) out.push_back("");
  return out;
}

double to_double(const std::string& key, const std::string& v) {
  try {
    std::size_t pos = 0;
    const double d = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing characters");
    return d;
  } catch (const std::exception&) {
    throw std::invalid_argument("config: bad number for " + key + ": '" + v + "'");
  }
}

std::uint64_t to_u64(const std::string& key, const std::string& v) {
  const double d = to_double(key, v);
  if (d < 0 || d != std::floor(d)) {
    throw std::invalid_argument("config: " + key + " must be a non-negative integer");
  }
  return static_cast<std::uint64_t>(d);
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument("config: " + key + " must be true/false");
}

std::vector<Point2> parse_points(const std::string& key, const std::string& v) {
  std::vector<Point2> pts;
  for (const std::string& pair : split(v, ';')) {
    if (pair.empty()) continue;
    const std::vector<std::string> xy = split(pair, ',');
    if (xy.size() != 2) {
      throw std::invalid_argument("config: " + key + " entries must be x,y pairs");
    }
    pts.push_back({to_double(key, xy[0]), to_double(key, xy[1])});
  }
  if (pts.empty()) throw std::invalid_argument("config: " + key + " is empty");
  return pts;
}

Model::Kind kind_from_string(const std::string& s) {
  if (s == "gnn") return Model::Kind::kGnn;
  if (s == "dnn") return Model::Kind::kDnn;
  throw std::invalid_argument("model kind must be 'gnn' or 'dnn', got '" + s + "'");
}

HgnnConfig model_config_for(const RunConfig& cfg, const ScenarioConfig& sc) {
  HgnnConfig mc;
  mc.hidden = cfg.hidden;
  mc.depth = cfg.depth;
  mc.N_t = sc.N_t;
  mc.M = sc.M();
  mc.R = sc.R;
  mc.K = sc.K;
  mc.validate();
  return mc;
}

CaseMode label_mode_from_string(const std::string& s) {
  if (s == "nearest") return CaseMode::kNearest;
  if (s == "farthest") return CaseMode::kFarthest;
  if (s == "single") return CaseMode::kSingle;
  throw std::invalid_argument("label case must be nearest/farthest/single, got '" +
                              s + "'");
}

TrainConfig train_config_for(const RunConfig& cfg, std::size_t epochs, double eta) {
  TrainConfig tc;
  tc.epochs = epochs;
  tc.batch_size = cfg.batch_size;
  tc.lr = cfg.lr;
  tc.lr_floor_frac = cfg.lr_floor_frac;
  tc.weight_decay = cfg.weight_decay;
  tc.eta = eta;
  tc.pmax_dbm = cfg.pmax_dbm;
  tc.label_mode = label_mode_from_string(cfg.label_case);
  tc.label_single_index = cfg.label_single_index;
  tc.seed = cfg.seed;
  tc.validate();
  return tc;
}

void ensure_out_dir(const RunConfig& cfg) {
  std::filesystem::create_directories(cfg.out_dir);
}

Dataset load_dataset_checked(const RunConfig& cfg) {
  const std::string path = cfg.dataset_file();
  if (!std::filesystem::exists(path)) {
    throw std::runtime_error("dataset not found at " + path +
                             " (run gen-data first or set data.dataset)");
  }
  Dataset ds = read_dataset(path);
  if (ds.train_count == 0 || ds.val_count == 0) {
    throw std::runtime_error("dataset at " + path + " has an empty split");
  }
  return ds;
}

/** Streams one JSON object per epoch and checkpoints every `every` epochs. */
class EpochLogger {
 public:
  EpochLogger(const std::string& metrics_path, bool append,
              const std::string& ckpt_path, std::size_t every)
      : ckpt_path_(ckpt_path), every_(every) {
    stream_.open(metrics_path, append ? std::ios::app : std::ios::trunc);
    if (!stream_) {
      throw std::runtime_error("cannot open metrics file " + metrics_path);
    }
  }

  void operator()(const EpochMetrics& m, const Model& model,
                  const AdamState& adam) {
    ordered_json line;
    line["epoch"] = m.epoch;
    line["train_loss"] = m.train_loss;
    line["val_wsr"] = m.val_wsr;
    line["assoc_match_rate"] = m.assoc_match_rate;
    stream_ << line.dump() << '\n';
    stream_.flush();
    std::printf("epoch %4zu  loss %.6g  val_wsr %.6g  assoc %.3f  lr %.3g",
                m.epoch, m.train_loss, m.val_wsr, m.assoc_match_rate, m.lr);
    if (m.dead_phase_units > 0 || m.score_clamps > 0) {
      std::printf("  [degenerate: %zu phase rows, %zu score clamps]",
                  m.dead_phase_units, m.score_clamps);
    }
    std::printf("\n");
    std::fflush(stdout);
    if (every_ > 0 && (m.epoch + 1) % every_ == 0) {
      save_model(model, ckpt_path_, &adam);
    }
  }

 private:
  std::ofstream stream_;
  std::string ckpt_path_;
  std::size_t every_ = 0;
};

std::string metrics_path(const RunConfig& cfg, const char* phase) {
  return cfg.out_dir + "/" + phase + "_metrics.jsonl";
}

/**
 * Pretrain -> calibrate eta -> train, honoring resume from either phase's
 * checkpoint.  Returns the fully trained model (also saved to model_file()).
 */
Model run_train_chain(const RunConfig& cfg, const Dataset& ds) {
  const std::string pre_path = cfg.pretrain_file();
  const std::string train_path = cfg.model_file();
  const Model::Kind kind = kind_from_string(cfg.model_kind);
  const HgnnConfig mc = model_config_for(cfg, ds.scenario);

  if (cfg.resume && std::filesystem::exists(train_path)) {
    AdamState adam{AdamConfig{}};
    Model model = load_model(train_path, &adam);
    if (model.completed_epochs >= cfg.epochs) {
      std::printf("training already complete at %s (%zu epochs)\n",
                  train_path.c_str(),
                  static_cast<std::size_t>(model.completed_epochs));
      return model;
    }
    std::printf("resuming training from epoch %zu\n",
                static_cast<std::size_t>(model.completed_epochs));
    // The checkpoint carries the calibrated eta; an explicit config value wins.
    const double eta = cfg.eta >= 0.0 ? cfg.eta : model.eta;
    EpochLogger log(metrics_path(cfg, "train"), /*append=*/true, train_path,
                    cfg.checkpoint_every);
    TrainResult res =
        run_training(ds, std::move(model), train_config_for(cfg, cfg.epochs, eta),
                     std::ref(log), std::move(adam));
    save_model(res.model, train_path, &res.adam);
    return res.model;
  }

  // Phase 1: rate-only fit against the nearest-surface labels.
  Model pre;
  AdamState pre_adam{AdamConfig{}};
  bool pre_resumed = false;
  if (cfg.resume && std::filesystem::exists(pre_path)) {
    pre = load_model(pre_path, &pre_adam);
    pre_resumed = true;
    std::printf("resuming pretraining from epoch %zu\n",
                static_cast<std::size_t>(pre.completed_epochs));
  } else {
    pre = init_model(kind, mc, cfg.seed);
    std::printf("initialized %s model: %zu parameters\n", cfg.model_kind.c_str(),
                parameter_count(pre));
  }
  if (pre.completed_epochs < cfg.pretrain_epochs) {
    EpochLogger log(metrics_path(cfg, "pretrain"), pre_resumed, pre_path,
                    cfg.checkpoint_every);
    TrainResult res =
        run_pretraining(ds, std::move(pre),
                        train_config_for(cfg, cfg.pretrain_epochs, 0.0),
                        std::ref(log), std::move(pre_adam));
    pre = std::move(res.model);
    save_model(pre, pre_path, &res.adam);
  }

  // Phase 2: calibrate the cross-entropy coefficient.
  const double eta = cfg.eta >= 0.0 ? cfg.eta : compute_eta(ds, pre);
  std::printf("cross-entropy coefficient eta = %.12g%s\n", eta,
              cfg.eta >= 0.0 ? " (explicit)" : " (calibrated)");

  // Phase 3: joint fit with the association branch; epoch numbering restarts.
  pre.completed_epochs = 0;
  EpochLogger log(metrics_path(cfg, "train"), /*append=*/false, train_path,
                  cfg.checkpoint_every);
  TrainResult res =
      run_training(ds, std::move(pre), train_config_for(cfg, cfg.epochs, eta),
                   std::ref(log), AdamState{AdamConfig{}});
  save_model(res.model, train_path, &res.adam);
  return res.model;
}

std::vector<std::string> method_list(const RunConfig& cfg,
                                     const std::string& fallback) {
  const std::string joined = cfg.methods.empty() ? fallback : cfg.methods;
  std::vector<std::string> out;
  for (const std::string& tok : split(joined, ',')) {
    if (!tok.empty()) out.push_back(tok);
  }
  if (out.empty()) throw std::invalid_argument("empty methods list");
  return out;
}

struct MethodOutcome {
  std::vector<double> wsr;
  std::vector<Association> assoc;
  double seconds = 0.0;
};

ResultRow aggregate(const std::string& method, double sweep_value,
                    const MethodOutcome& mo,
                    const std::vector<Association>& labels) {
  ResultRow row;
  row.sweep_value = sweep_value;
  row.method = method;
  row.n = mo.wsr.size();
  row.seconds = mo.seconds;
  if (row.n == 0) return row;
  double sum = 0.0;
  for (double w : mo.wsr) sum += w;
  row.mean_wsr = sum / static_cast<double>(row.n);
  if (row.n > 1) {
    double acc = 0.0;
    for (double w : mo.wsr) acc += (w - row.mean_wsr) * (w - row.mean_wsr);
    row.std_wsr = std::sqrt(acc / static_cast<double>(row.n - 1));
  }
  std::size_t agree = 0;
  std::size_t total = 0;
  for (std::size_t s = 0; s < mo.assoc.size(); ++s) {
    for (std::size_t k = 0; k < labels[s].K; ++k) {
      agree += mo.assoc[s].served_by(k) == labels[s].served_by(k) ? 1 : 0;
      ++total;
    }
  }
  row.assoc_match = total > 0 ? static_cast<double>(agree) / total : 0.0;
  return row;
}

/**
 * Per-instance evaluation of one method over validation samples
 * [begin, begin+n).  Learned methods must pass a loaded model.
 */
MethodOutcome run_method(const std::string& method, const RunConfig& cfg,
                         const Dataset& ds, std::size_t begin, std::size_t n,
                         const Model* learned) {
  const auto t0 = std::chrono::steady_clock::now();
  MethodOutcome mo;
  const std::vector<double> weights = equal_weights(ds.scenario.K);

  if (method == "gnn" || method == "dnn") {
    if (learned == nullptr) {
      throw std::runtime_error("method '" + method + "' needs a trained checkpoint");
    }
    const Model::Kind want = kind_from_string(method);
    if (learned->kind != want) {
      throw std::runtime_error("checkpoint kind does not match method '" + method + "'");
    }
    const EvalSummary es =
        evaluate_model(ds, begin, begin + n, *learned, cfg.pmax_dbm,
                       /*use_label_association=*/false, cfg.batch_size);
    mo.wsr = es.per_sample_wsr;
    mo.assoc = es.per_sample_assoc;
  } else {
    for (std::size_t s = 0; s < n; ++s) {
      const std::size_t idx = begin + s;
      const ProblemInstance inst =
          make_instance(ds, idx, weights, cfg.pmax_dbm);
      if (method == "ao_case1" || method == "ao_case2" || method == "ao_case3") {
        const CaseMode mode = method == "ao_case1"   ? CaseMode::kSingle
                              : method == "ao_case2" ? CaseMode::kNearest
                                                     : CaseMode::kFarthest;
        const Association assoc =
            case_association(ds.scenario, ds.samples[idx], mode, 0);
        const AoResult ao = ao_solve(inst, assoc);
        mo.wsr.push_back(ao.solution.wsr);
        mo.assoc.push_back(assoc);
      } else if (method == "random_phase") {
        const Association assoc =
            case_association(ds.scenario, ds.samples[idx], CaseMode::kNearest, 0);
        std::mt19937_64 rng(substream_seed(cfg.seed, 7000 + idx));
        const Solution sol = random_phase_baseline(inst, assoc, rng);
        mo.wsr.push_back(sol.wsr);
        mo.assoc.push_back(assoc);
      } else if (method == "brute_force") {
        const BruteForceResult bf = brute_force_association(inst);
        mo.wsr.push_back(bf.best_wsr);
        mo.assoc.push_back(bf.best);
      } else {
        throw std::invalid_argument("unknown method '" + method + "'");
      }
    }
  }
  const auto t1 = std::chrono::steady_clock::now();
  mo.seconds = std::chrono::duration<double>(t1 - t0).count();
  return mo;
}

std::vector<ResultRow> eval_methods(const RunConfig& cfg, const Dataset& ds,
                                    const std::vector<std::string>& methods,
                                    const Model* learned, double sweep_value) {
  const std::size_t begin = ds.train_count;
  std::size_t n = ds.val_count;
  if (cfg.eval_limit > 0) n = std::min<std::size_t>(n, cfg.eval_limit);

  std::vector<Association> labels;
  labels.reserve(n);
  for (std::size_t s = 0; s < n; ++s) {
    labels.push_back(case_association(ds.scenario, ds.samples[begin + s],
                                      CaseMode::kNearest, 0));
  }

  std::vector<ResultRow> rows;
  for (const std::string& method : methods) {
    const MethodOutcome mo = run_method(method, cfg, ds, begin, n, learned);
    rows.push_back(aggregate(method, sweep_value, mo, labels));
    const ResultRow& r = rows.back();
    std::printf("%-14s mean_wsr %.6g  std %.6g  assoc %.3f  (%zu samples, %.2fs)\n",
                r.method.c_str(), r.mean_wsr, r.std_wsr, r.assoc_match, r.n,
                r.seconds);
    std::fflush(stdout);
  }
  return rows;
}

bool wants_learned(const std::vector<std::string>& methods) {
  for (const std::string& m : methods) {
    if (m == "gnn" || m == "dnn") return true;
  }
  return false;
}

std::string assoc_pattern(const Association& a) {
  std::string s;
  for (std::size_t k = 0; k < a.K; ++k) {
    s += std::to_string(a.served_by(k));
  }
  return s;
}

}  // namespace

void RunConfig::validate_common() const {
  if (!seed_set) {
    throw std::invalid_argument("a --seed value is required for every command");
  }
  if (out_dir.empty()) throw std::invalid_argument("out_dir must not be empty");
  kind_from_string(model_kind);
  label_mode_from_string(label_case);
  scenario.validate();
  if (train_count == 0 || val_count == 0 || train_count + val_count != n_samples) {
    throw std::invalid_argument(
        "data counts must satisfy train_count + val_count == n_samples, both > 0");
  }
}

std::string RunConfig::dataset_file() const {
  return dataset_path.empty() ? out_dir + "/dataset.bin" : dataset_path;
}

std::string RunConfig::model_file() const {
  return checkpoint_path.empty() ? out_dir + "/model.ckpt" : checkpoint_path;
}

std::string RunConfig::pretrain_file() const {
  return out_dir + "/pretrain.ckpt";
}

std::map<std::string, std::string> parse_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  std::string section;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') {
        throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                 ": unterminated section header");
      }
      section = trim(line.substr(1, line.size() - 2));
      if (section.empty()) {
        throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                 ": empty section name");
      }
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": expected key=value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.empty()) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) + ": empty key");
    }
    if (section.empty()) {
      throw std::runtime_error(path + ":" + std::to_string(lineno) +
                               ": key outside any [section]");
    }
    kv[section + "." + key] = value;
  }
  return kv;
}

void apply_config(const std::map<std::string, std::string>& kv, RunConfig& cfg) {
  for (const auto& [key, v] : kv) {
    if (key == "scenario.n_t") cfg.scenario.N_t = to_u64(key, v);
    else if (key == "scenario.r") cfg.scenario.R = to_u64(key, v);
    else if (key == "scenario.k") cfg.scenario.K = to_u64(key, v);
    else if (key == "scenario.m_x") cfg.scenario.M_x = to_u64(key, v);
    else if (key == "scenario.m_y") cfg.scenario.M_y = to_u64(key, v);
    else if (key == "scenario.bs_x") cfg.scenario.bs_position.x = to_double(key, v);
    else if (key == "scenario.bs_y") cfg.scenario.bs_position.y = to_double(key, v);
    else if (key == "scenario.ris_positions")
      cfg.scenario.ris_positions = parse_points(key, v);
    else if (key == "scenario.user_x_min") cfg.scenario.user_x_min = to_double(key, v);
    else if (key == "scenario.user_x_max") cfg.scenario.user_x_max = to_double(key, v);
    else if (key == "scenario.user_y_min") cfg.scenario.user_y_min = to_double(key, v);
    else if (key == "scenario.user_y_max") cfg.scenario.user_y_max = to_double(key, v);
    else if (key == "scenario.paths") cfg.scenario.L = to_u64(key, v);
    else if (key == "scenario.pl_a") cfg.scenario.pl_a = to_double(key, v);
    else if (key == "scenario.pl_b") cfg.scenario.pl_b = to_double(key, v);
    else if (key == "scenario.shadow_sigma_db")
      cfg.scenario.shadow_sigma_db = to_double(key, v);
    else if (key == "scenario.nlos_gain_factor")
      cfg.scenario.nlos_gain_factor = to_double(key, v);
    else if (key == "scenario.noise_dbm")
      cfg.scenario.noise_power_dbm = to_double(key, v);
    else if (key == "scenario.carrier_ghz")
      cfg.scenario.carrier_ghz = to_double(key, v);
    else if (key == "train.epochs") cfg.epochs = to_u64(key, v);
    else if (key == "train.pretrain_epochs") cfg.pretrain_epochs = to_u64(key, v);
    else if (key == "train.batch_size") cfg.batch_size = to_u64(key, v);
    else if (key == "train.lr") cfg.lr = to_double(key, v);
    else if (key == "train.lr_floor_frac") cfg.lr_floor_frac = to_double(key, v);
    else if (key == "train.weight_decay") cfg.weight_decay = to_double(key, v);
    else if (key == "train.eta") cfg.eta = v == "auto" ? -1.0 : to_double(key, v);
    else if (key == "train.pmax_dbm") cfg.pmax_dbm = to_double(key, v);
    else if (key == "train.label_case") cfg.label_case = v;
    else if (key == "train.label_single_index")
      cfg.label_single_index = to_u64(key, v);
    else if (key == "train.hidden") cfg.hidden = to_u64(key, v);
    else if (key == "train.depth") cfg.depth = to_u64(key, v);
    else if (key == "train.model_kind") cfg.model_kind = v;
    else if (key == "data.n_samples") cfg.n_samples = to_u64(key, v);
    else if (key == "data.train_count") cfg.train_count = to_u64(key, v);
    else if (key == "data.val_count") cfg.val_count = to_u64(key, v);
    else if (key == "data.dataset") cfg.dataset_path = v;
    else if (key == "run.out_dir") cfg.out_dir = v;
    else if (key == "run.seed") { cfg.seed = to_u64(key, v); cfg.seed_set = true; }
    else if (key == "run.resume") cfg.resume = to_bool(key, v);
    else if (key == "run.checkpoint_every") cfg.checkpoint_every = to_u64(key, v);
    else if (key == "run.eval_limit") cfg.eval_limit = to_u64(key, v);
    else if (key == "run.methods") cfg.methods = v;
    else if (key == "run.checkpoint") cfg.checkpoint_path = v;
    else if (key == "run.sweep_axis") cfg.sweep_axis = v;
    else if (key == "run.sweep_values") cfg.sweep_values = v;
    else throw std::invalid_argument("config: unknown key '" + key + "'");
  }
}

void write_result_csv(const std::vector<ResultRow>& rows,
                      const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out << "sweep_value,method,mean_wsr,std_wsr,n,assoc_match,seconds\n";
  for (const ResultRow& r : rows) {
    out << fmt_g(r.sweep_value) << ',' << r.method << ',' << fmt_g(r.mean_wsr)
        << ',' << fmt_g(r.std_wsr) << ',' << r.n << ',' << fmt_g(r.assoc_match)
        << ',' << fmt_seconds(r.seconds) << '\n';
  }
  if (!out) throw std::runtime_error("write to " + path + " failed");
}

void run_gen_data(const RunConfig& cfg) {
  cfg.validate_common();
  ensure_out_dir(cfg);
  const Dataset ds = generate_dataset(cfg.scenario, cfg.n_samples, cfg.seed,
                                      cfg.train_count, cfg.val_count);
  write_dataset(ds, cfg.dataset_file());

  // Quick feel for the magnitude scale of what was just generated.
  double abs_sum = 0.0;
  double abs_max = 0.0;
  std::size_t count = 0;
  const std::size_t probe = std::min<std::size_t>(ds.samples.size(), 32);
  for (std::size_t s = 0; s < probe; ++s) {
    for (const ComplexMatrix& Hm : ds.samples[s].H) {
      for (std::size_t r = 0; r < Hm.rows(); ++r) {
        for (std::size_t c = 0; c < Hm.cols(); ++c) {
          const double a = std::abs(Hm.at(r, c));
          abs_sum += a;
          abs_max = std::max(abs_max, a);
          ++count;
        }
      }
    }
  }
  std::printf("wrote %s: %zu samples (%zu train / %zu val), seed %llu\n",
              cfg.dataset_file().c_str(), ds.samples.size(),
              static_cast<std::size_t>(ds.train_count),
              static_cast<std::size_t>(ds.val_count),
              static_cast<unsigned long long>(ds.rng_seed));
  std::printf("cascaded channel magnitude over first %zu samples: mean %.6g, max %.6g\n",
              probe, count > 0 ? abs_sum / count : 0.0, abs_max);
}

void run_pretrain(const RunConfig& cfg) {
  cfg.validate_common();
  ensure_out_dir(cfg);
  const Dataset ds = load_dataset_checked(cfg);
  const std::string pre_path = cfg.pretrain_file();

  Model model;
  AdamState adam{AdamConfig{}};
  bool resumed = false;
  if (cfg.resume && std::filesystem::exists(pre_path)) {
    model = load_model(pre_path, &adam);
    resumed = true;
    std::printf("resuming pretraining from epoch %zu\n",
                static_cast<std::size_t>(model.completed_epochs));
  } else {
    model = init_model(kind_from_string(cfg.model_kind),
                       model_config_for(cfg, ds.scenario), cfg.seed);
    std::printf("initialized %s model: %zu parameters\n", cfg.model_kind.c_str(),
                parameter_count(model));
  }

  EpochLogger log(metrics_path(cfg, "pretrain"), resumed, pre_path,
                  cfg.checkpoint_every);
  TrainResult res =
      run_pretraining(ds, std::move(model),
                      train_config_for(cfg, cfg.pretrain_epochs, 0.0),
                      std::ref(log), std::move(adam));
  save_model(res.model, pre_path, &res.adam);
  std::printf("saved pretrained model to %s\n", pre_path.c_str());
}

void run_train(const RunConfig& cfg) {
  cfg.validate_common();
  ensure_out_dir(cfg);
  const Dataset ds = load_dataset_checked(cfg);
  const Model model = run_train_chain(cfg, ds);

  const EvalSummary final_eval = evaluate_model(
      ds, ds.train_count, ds.train_count + ds.val_count, model, cfg.pmax_dbm,
      /*use_label_association=*/false, cfg.batch_size);
  std::printf("final validation: mean_wsr %.6g  std %.6g  assoc %.3f (%zu samples)\n",
              final_eval.mean_wsr, final_eval.std_wsr,
              final_eval.assoc_match_rate, final_eval.n);
  std::printf("saved trained model to %s\n", cfg.model_file().c_str());
}

void run_eval(const RunConfig& cfg) {
  cfg.validate_common();
  ensure_out_dir(cfg);
  const Dataset ds = load_dataset_checked(cfg);
  const std::vector<std::string> methods =
      method_list(cfg, "gnn,ao_case1,ao_case2,ao_case3,random_phase");

  Model learned;
  const Model* learned_ptr = nullptr;
  if (wants_learned(methods)) {
    learned = load_model(cfg.model_file(), nullptr);
    learned_ptr = &learned;
  }

  const std::vector<ResultRow> rows =
      eval_methods(cfg, ds, methods, learned_ptr, cfg.pmax_dbm);
  const std::string csv = cfg.out_dir + "/eval.csv";
  write_result_csv(rows, csv);
  std::printf("wrote %s\n", csv.c_str());
}

void run_sweep(const RunConfig& cfg) {
  cfg.validate_common();
  ensure_out_dir(cfg);
  if (cfg.sweep_values.empty()) {
    throw std::invalid_argument("sweep needs run.sweep_values (comma-separated)");
  }
  std::vector<double> values;
  for (const std::string& tok : split(cfg.sweep_values, ',')) {
    if (!tok.empty()) values.push_back(to_double("run.sweep_values", tok));
  }
  if (values.empty()) throw std::invalid_argument("sweep values list is empty");
  const std::vector<std::string> methods =
      method_list(cfg, "ao_case2,random_phase");

  std::vector<ResultRow> rows;
  ordered_json failures = ordered_json::array();
  for (const double v : values) {
    std::printf("--- sweep %s = %s ---\n", cfg.sweep_axis.c_str(),
                fmt_g(v).c_str());
    try {
      RunConfig pc = cfg;
      pc.out_dir = cfg.out_dir + "/point_" + fmt_g(v);
      pc.dataset_path.clear();
      pc.checkpoint_path.clear();
      if (cfg.sweep_axis == "pmax_dbm") {
        pc.pmax_dbm = v;
      } else if (cfg.sweep_axis == "m") {
        const double root = std::sqrt(v);
        const std::size_t side = static_cast<std::size_t>(std::llround(root));
        if (v <= 0 || static_cast<double>(side * side) != v) {
          throw std::invalid_argument(
              "surface size sweep values must be perfect squares (square grid)");
        }
        pc.scenario.M_x = side;
        pc.scenario.M_y = side;
      } else if (cfg.sweep_axis == "n_t") {
        if (v <= 0 || v != std::floor(v)) {
          throw std::invalid_argument("antenna sweep values must be positive integers");
        }
        pc.scenario.N_t = static_cast<std::size_t>(v);
      } else {
        throw std::invalid_argument("unknown sweep axis '" + cfg.sweep_axis +
                                    "' (pmax_dbm, m, n_t)");
      }
      pc.scenario.validate();
      ensure_out_dir(pc);

      // Same seed at every point: the generator's draw count does not depend
      // on the array sizes, so points share their fading (common random
      // numbers) and the sweep isolates the axis under study.
      Dataset ds;
      if (std::filesystem::exists(pc.dataset_file())) {
        ds = read_dataset(pc.dataset_file());
      } else {
        ds = generate_dataset(pc.scenario, pc.n_samples, pc.seed,
                              pc.train_count, pc.val_count);
        write_dataset(ds, pc.dataset_file());
      }

      Model learned;
      const Model* learned_ptr = nullptr;
      if (wants_learned(methods)) {
        learned = run_train_chain(pc, ds);
        learned_ptr = &learned;
      }
      const std::vector<ResultRow> point_rows =
          eval_methods(pc, ds, methods, learned_ptr, v);
      rows.insert(rows.end(), point_rows.begin(), point_rows.end());
    } catch (const std::exception& e) {
      std::printf("sweep point %s failed: %s\n", fmt_g(v).c_str(), e.what());
      ordered_json f;
      f["value"] = v;
      f["error"] = e.what();
      failures.push_back(f);
    }
  }

  const std::string csv = cfg.out_dir + "/sweep.csv";
  write_result_csv(rows, csv);

  ordered_json plot;
  plot["axis"] = cfg.sweep_axis;
  plot["values"] = values;
  plot["rows"] = ordered_json::array();
  for (const ResultRow& r : rows) {
    ordered_json jr;
    jr["sweep_value"] = r.sweep_value;
    jr["method"] = r.method;
    jr["mean_wsr"] = r.mean_wsr;
    jr["std_wsr"] = r.std_wsr;
    jr["n"] = r.n;
    jr["assoc_match"] = r.assoc_match;
    jr["seconds"] = r.seconds;
    plot["rows"].push_back(jr);
  }
  plot["failures"] = failures;
  const std::string jpath = cfg.out_dir + "/sweep.json";
  std::ofstream jout(jpath, std::ios::trunc);
  jout << plot.dump(2) << '\n';
  if (!jout) throw std::runtime_error("write to " + jpath + " failed");
  std::printf("wrote %s and %s (%zu rows, %zu failures)\n", csv.c_str(),
              jpath.c_str(), rows.size(), failures.size());
  if (!failures.empty() && rows.empty()) {
    throw std::runtime_error("every sweep point failed");
  }
}

void run_oracle(const RunConfig& cfg) {
  cfg.validate_common();
  ensure_out_dir(cfg);
  const Dataset ds = load_dataset_checked(cfg);
  const std::size_t begin = ds.train_count;
  std::size_t n = cfg.eval_limit > 0 ? cfg.eval_limit : 100;
  n = std::min<std::size_t>(n, ds.val_count);
  const std::vector<double> weights = equal_weights(ds.scenario.K);

  ordered_json detail = ordered_json::array();
  std::map<std::string, std::vector<double>> per_pattern;
  std::vector<double> best_wsrs;
  std::size_t best_matches_nearest = 0;
  std::vector<Association> bests;
  std::vector<Association> labels;

  const auto t0 = std::chrono::steady_clock::now();
  for (std::size_t s = 0; s < n; ++s) {
    const std::size_t idx = begin + s;
    const ProblemInstance inst = make_instance(ds, idx, weights, cfg.pmax_dbm);
    const BruteForceResult bf = brute_force_association(inst);
    const Association nearest =
        case_association(ds.scenario, ds.samples[idx], CaseMode::kNearest, 0);

    ordered_json entry;
    entry["index"] = idx;
    ordered_json table;
    for (std::size_t c = 0; c < bf.candidates.size(); ++c) {
      const std::string pat = assoc_pattern(bf.candidates[c]);
      table[pat] = bf.wsrs[c];
      per_pattern[pat].push_back(bf.wsrs[c]);
    }
    entry["wsrs"] = table;
    entry["best"] = assoc_pattern(bf.best);
    entry["nearest"] = assoc_pattern(nearest);
    detail.push_back(entry);

    best_wsrs.push_back(bf.best_wsr);
    bests.push_back(bf.best);
    labels.push_back(nearest);
    if (bf.best == nearest) ++best_matches_nearest;
  }
  const auto t1 = std::chrono::steady_clock::now();
  const double total_seconds = std::chrono::duration<double>(t1 - t0).count();

  std::vector<ResultRow> rows;
  for (const auto& [pat, wsrs] : per_pattern) {
    MethodOutcome mo;
    mo.wsr = wsrs;
    // Fixed-pattern rows reuse the candidate association for every sample.
    for (std::size_t s = 0; s < wsrs.size(); ++s) {
      Association a;
      a.K = ds.scenario.K;
      a.R = ds.scenario.R;
      a.U.assign(a.K * a.R, 0);
      for (std::size_t k = 0; k < a.K; ++k) {
        a.U[k * a.R + static_cast<std::size_t>(pat[k] - '0')] = 1;
      }
      mo.assoc.push_back(a);
    }
    mo.seconds = 0.0;
    rows.push_back(aggregate("assoc_" + pat, cfg.pmax_dbm, mo, labels));
  }
  {
    MethodOutcome mo;
    mo.wsr = best_wsrs;
    mo.assoc = bests;
    mo.seconds = total_seconds;
    rows.push_back(aggregate("brute_force", cfg.pmax_dbm, mo, labels));
  }
  const std::string csv = cfg.out_dir + "/oracle.csv";
  write_result_csv(rows, csv);

  const std::string jpath = cfg.out_dir + "/oracle.json";
  std::ofstream jout(jpath, std::ios::trunc);
  ordered_json top;
  top["n"] = n;
  top["pmax_dbm"] = cfg.pmax_dbm;
  top["best_matches_nearest"] = best_matches_nearest;
  top["instances"] = detail;
  jout << top.dump(2) << '\n';
  if (!jout) throw std::runtime_error("write to " + jpath + " failed");
  std::printf(
      "oracle over %zu instances: best matches nearest on %zu (%.1f%%); wrote %s\n",
      n, best_matches_nearest, 100.0 * best_matches_nearest / std::max<std::size_t>(n, 1),
      csv.c_str());
}

namespace {

/** Loss of a model on a fixed batch; used for the finite-difference probe. */
double probe_loss(const Dataset& ds, const Model& model,
                  const std::vector<std::size_t>& chunk, double p_max,
                  double noise, double eta, bool soft) {
  Tape tape;
  const BatchData batch = make_batch(ds, chunk, model.config, model.input_scale);
  std::map<std::string, Tape::NodeId> params;
  const ForwardNodes fwd =
      model_forward_graph(tape, batch, model, p_max, params,
                          /*with_assoc_head=*/soft);
  const LossNodes loss =
      training_loss_graph(tape, batch, fwd, equal_weights(model.config.K), noise,
                          eta, model.rate_scale, soft);
  return tape.value(loss.total).at(0, 0);
}

struct CheckTally {
  int failures = 0;
  void report(const std::string& name, bool ok, const std::string& detail = "") {
    if (ok) {
      std::printf("PASS %s\n", name.c_str());
    } else {
      std::printf("FAIL %s%s%s\n", name.c_str(), detail.empty() ? "" : ": ",
                  detail.c_str());
      ++failures;
    }
    std::fflush(stdout);
  }
};

}  // namespace

int run_grad_check(const RunConfig& cfg) {
  if (!cfg.seed_set) {
    throw std::invalid_argument("a --seed value is required for every command");
  }
  CheckTally tally;

  // Hand-sized scenario so rebuilt-loss finite differences stay cheap.
  ScenarioConfig sc;
  sc.N_t = 2;
  sc.M_x = 2;
  sc.M_y = 1;
  sc.R = 2;
  sc.K = 2;
  sc.L = 2;
  const Dataset ds = generate_dataset(sc, 4, cfg.seed, 3, 1);
  const double p_max = dbm_to_watts(20.0);
  const double noise = dbm_to_watts(sc.noise_power_dbm);
  const std::vector<std::size_t> chunk{0, 1, 2};
  const double eta = 0.3;

  for (const Model::Kind kind : {Model::Kind::kGnn, Model::Kind::kDnn}) {
    HgnnConfig mc;
    mc.hidden = 8;
    mc.depth = 4;
    mc.N_t = sc.N_t;
    mc.M = sc.M();
    mc.R = sc.R;
    mc.K = sc.K;
    Model model = init_model(kind, mc, cfg.seed + 17);
    model.input_scale = dataset_input_scale(ds);
    model.rate_scale = 1.0;
    const char* kname = kind == Model::Kind::kGnn ? "gnn" : "dnn";

    for (const bool soft : {true, false}) {
      // Analytic gradients of the batch loss.
      Tape tape;
      const BatchData batch =
          make_batch(ds, chunk, model.config, model.input_scale);
      std::map<std::string, Tape::NodeId> params;
      const ForwardNodes fwd =
          model_forward_graph(tape, batch, model, p_max, params, soft);
      const LossNodes loss =
          training_loss_graph(tape, batch, fwd, equal_weights(mc.K), noise, eta,
                              model.rate_scale, soft);
      const double base = tape.value(loss.total).at(0, 0);
      tally.report(std::string(kname) + (soft ? " soft" : " hard") +
                       " loss finite",
                   std::isfinite(base));
      tape.backward(loss.total);

      double worst = 0.0;
      std::string worst_name;
      std::size_t checked = 0;
      std::size_t t = 0;
      for (const auto& [name, tensor] : model.params) {
        const Tape::NodeId node = params.at(name);
        if (!tape.has_grad(node)) {
          ++t;
          continue;  // branch not built in this phase
        }
        const RealTensor& g = tape.grad(node);
        const std::size_t numel = tensor.rows() * tensor.cols();
        const std::size_t flat = (7 * t + 3) % numel;
        const double h = 1e-6 * std::max(1.0, std::abs(tensor[flat]));

        Model pert = model;
        pert.params[name][flat] = tensor[flat] + h;
        const double up = probe_loss(ds, pert, chunk, p_max, noise, eta, soft);
        pert.params[name][flat] = tensor[flat] - h;
        const double dn = probe_loss(ds, pert, chunk, p_max, noise, eta, soft);
        const double fd = (up - dn) / (2.0 * h);
        const double an = g[flat];
        // Central differences cannot resolve below ~eps*|loss|/h; entries under
        // that roundoff floor are compared against it instead of themselves.
        const double fd_floor =
            100.0 * 2.220446049250313e-16 * std::max(1.0, std::abs(base)) / h;
        const double rel = std::abs(fd - an) /
                           std::max({std::abs(fd), std::abs(an), fd_floor / 1e-5});
        if (rel > worst) {
          worst = rel;
          worst_name = name;
        }
        ++checked;
        ++t;
      }
      char detail[160];
      std::snprintf(detail, sizeof(detail),
                    "worst relative error %.3g at %s over %zu parameters", worst,
                    worst_name.c_str(), checked);
      tally.report(std::string(kname) + (soft ? " soft" : " hard") +
                       " gradient vs finite differences",
                   worst < 1e-5, detail);
    }

    // Determinism: identical rebuild gives bit-identical loss.
    const double a = probe_loss(ds, model, chunk, p_max, noise, eta, true);
    const double b = probe_loss(ds, model, chunk, p_max, noise, eta, true);
    tally.report(std::string(kname) + " rebuild determinism", a == b);
  }

  std::printf("%s\n", tally.failures == 0 ? "all checks passed"
                                          : "some checks FAILED");
  return tally.failures;
}

}  // namespace rislab
