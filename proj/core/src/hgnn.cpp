#include "rislab/hgnn.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "rislab/rng.hpp"

namespace rislab {

namespace {

constexpr double kInvLn2 = 1.4426950408889634074;
constexpr double kScoreClamp = 1e-12;

using NodeId = Tape::NodeId;

struct ParamSpec {
  std::size_t rows;
  std::size_t cols;
  std::size_t fan_in;
};

void add_mlp2_spec(std::map<std::string, ParamSpec>& specs, const std::string& prefix,
                   std::size_t in_dim, std::size_t hidden) {
  specs[prefix + "_w1"] = {in_dim, hidden, in_dim};
  specs[prefix + "_b1"] = {1, hidden, in_dim};
  specs[prefix + "_w2"] = {hidden, hidden, hidden};
  specs[prefix + "_b2"] = {1, hidden, hidden};
}

void add_linear_spec(std::map<std::string, ParamSpec>& specs, const std::string& prefix,
                     std::size_t in_dim, std::size_t out_dim) {
  specs[prefix + "_w"] = {in_dim, out_dim, in_dim};
  specs[prefix + "_b"] = {1, out_dim, in_dim};
}

std::map<std::string, ParamSpec> param_specs(Model::Kind kind,
                                             const HgnnConfig& c) {
  const std::size_t D = c.hidden;
  const std::size_t P = c.pair_feature_dim();
  std::map<std::string, ParamSpec> specs;
  if (kind == Model::Kind::kGnn) {
    add_linear_spec(specs, "enc_pair", P, D);
    add_linear_spec(specs, "enc_user", 2 * P, D);
    add_linear_spec(specs, "enc_ris", P, D);
    for (std::size_t s = 0; s < c.core_steps(); ++s) {
      const std::string pre = "core" + std::to_string(s) + "_";
      add_mlp2_spec(specs, pre + "msg_rr", D, D);
      add_mlp2_spec(specs, pre + "msg_ur", D, D);
      add_mlp2_spec(specs, pre + "msg_ru", D, D);
      add_mlp2_spec(specs, pre + "msg_uu", D, D);
      add_mlp2_spec(specs, pre + "upd_rr", 2 * D, D);
      add_mlp2_spec(specs, pre + "upd_ur", 2 * D, D);
      add_mlp2_spec(specs, pre + "upd_ru", 2 * D, D);
      add_mlp2_spec(specs, pre + "upd_uself", 2 * D, D);
      add_mlp2_spec(specs, pre + "upd_umax", D, D);
    }
    add_mlp2_spec(specs, "dec_u2b", D, D);
    add_mlp2_spec(specs, "dec_r2b", D, D);
    add_mlp2_spec(specs, "dec_u2r", 2 * D, D);
    add_mlp2_spec(specs, "dec_r2r", 2 * D, D);
    add_mlp2_spec(specs, "dec_r2u", 2 * D, D);
    add_mlp2_spec(specs, "dec_u2u", 2 * D, D);
    add_linear_spec(specs, "head_theta", D, 2 * c.M);
    add_linear_spec(specs, "head_f", 2 * D, 2 * c.N_t);
    add_linear_spec(specs, "head_assoc", 2 * D, 1);
  } else {
    add_linear_spec(specs, "dnn_enc", c.K * c.R * P, D);
    for (std::size_t s = 0; s < 4; ++s) {
      add_linear_spec(specs, "dnn_proc" + std::to_string(s), D, D);
    }
    add_linear_spec(specs, "dnn_dec", D, D);
    add_linear_spec(specs, "dnn_head_f", D, 2 * c.N_t * c.K);
    add_linear_spec(specs, "dnn_head_theta", D, 2 * c.M * c.R);
    add_linear_spec(specs, "dnn_head_assoc", D, c.K * c.R);
  }
  return specs;
}

/** Rows [blk*B, (blk+1)*B) of a block-major state matrix. */
NodeId block_rows(Tape& t, NodeId id, std::size_t blk, std::size_t B) {
  return t.slice(id, blk * B, (blk + 1) * B, 0, t.value(id).cols());
}

NodeId tile_rows(Tape& t, NodeId id, std::size_t n) {
  if (n == 1) return id;
  return t.concat(std::vector<NodeId>(n, id), 0);
}

NodeId mean_blocks(Tape& t, NodeId id, std::size_t n, std::size_t B) {
  if (n == 1) return id;
  NodeId acc = block_rows(t, id, 0, B);
  for (std::size_t b = 1; b < n; ++b) acc = t.add(acc, block_rows(t, id, b, B));
  return t.scale(acc, 1.0 / static_cast<double>(n));
}

NodeId max_blocks(Tape& t, NodeId id, std::size_t n, std::size_t B) {
  if (n == 1) return id;
  std::vector<NodeId> parts;
  parts.reserve(n);
  for (std::size_t b = 0; b < n; ++b) parts.push_back(block_rows(t, id, b, B));
  return t.max_many(parts);
}

}  // namespace

void HgnnConfig::validate() const {
  if (hidden < 1) throw std::invalid_argument("hgnn config: hidden width must be >= 1");
  if (depth < 3) {
    throw std::invalid_argument(
        "hgnn config: depth must be >= 3 (encoder + core + decoder)");
  }
  if (N_t < 1 || M < 1 || R < 1 || K < 1) {
    throw std::invalid_argument("hgnn config: system dimensions must be >= 1");
  }
  if (!(leaky_slope > 0.0) || leaky_slope >= 1.0) {
    throw std::invalid_argument("hgnn config: leaky slope must lie in (0, 1)");
  }
}

Model init_model(Model::Kind kind, const HgnnConfig& config, std::uint64_t seed) {
  config.validate();
  Model model;
  model.kind = kind;
  model.config = config;
  const auto specs = param_specs(kind, config);
  std::uint64_t index = 0;
  for (const auto& [name, spec] : specs) {
    RealTensor tensor(spec.rows, spec.cols);
    std::mt19937_64 rng(substream_seed(seed, index++));
    const double bound = 1.0 / std::sqrt(static_cast<double>(spec.fan_in));
    for (std::size_t i = 0; i < tensor.numel(); ++i) {
      tensor[i] = draw_uniform(rng, -bound, bound);
    }
    model.params.emplace(name, std::move(tensor));
  }
  return model;
}

std::size_t parameter_count(const Model& model) {
  std::size_t count = 0;
  for (const auto& [name, tensor] : model.params) count += tensor.numel();
  return count;
}

std::vector<double> user_raw_feature(const ChannelRealization& cr, std::size_t R,
                                     std::size_t K, std::size_t k) {
  if (k >= K || cr.H.size() != R * K) {
    throw std::invalid_argument("user_raw_feature: bad user index or realization");
  }
  const std::size_t per_block = cr.H_of(0, k, K).numel();
  std::vector<double> feat(2 * R * per_block);
  for (std::size_t i = 0; i < R; ++i) {
    const ComplexMatrix& H = cr.H_of(i, k, K);
    for (std::size_t e = 0; e < per_block; ++e) {
      feat[i * per_block + e] = H.data()[e].real();
      feat[R * per_block + i * per_block + e] = H.data()[e].imag();
    }
  }
  return feat;
}

double dataset_input_scale(const Dataset& ds) {
  if (ds.train_count == 0) {
    throw std::invalid_argument("dataset_input_scale: no training samples");
  }
  double sum_sq = 0.0;
  std::size_t count = 0;
  for (std::size_t s = 0; s < ds.train_count; ++s) {
    const ChannelRealization& cr = ds.samples[s];
    for (const ComplexMatrix& H : cr.H) {
      for (std::size_t e = 0; e < H.numel(); ++e) sum_sq += std::norm(H.data()[e]);
      count += H.numel();
    }
  }
  const double rms = std::sqrt(sum_sq / static_cast<double>(count));
  if (!(rms > 0.0)) {
    throw std::domain_error("dataset_input_scale: degenerate all-zero channels");
  }
  return rms;
}

BatchData make_batch(const Dataset& ds, const std::vector<std::size_t>& indices,
                     const HgnnConfig& dims, double input_scale,
                     CaseMode label_mode, std::size_t label_single_index) {
  dims.validate();
  if (indices.empty()) throw std::invalid_argument("make_batch: empty index list");
  if (!(input_scale > 0.0)) {
    throw std::invalid_argument("make_batch: input scale must be > 0");
  }
  const ScenarioConfig& sc = ds.scenario;
  if (sc.N_t != dims.N_t || sc.M() != dims.M || sc.R != dims.R || sc.K != dims.K) {
    throw std::invalid_argument("make_batch: model dimensions do not match dataset");
  }
  const std::size_t B = indices.size();
  const std::size_t K = dims.K;
  const std::size_t R = dims.R;
  const std::size_t M = dims.M;
  const std::size_t N_t = dims.N_t;
  const std::size_t P = dims.pair_feature_dim();

  BatchData batch;
  batch.B = B;
  batch.dims = dims;
  batch.sample_ids = indices;
  batch.pair_features = RealTensor(K * R * B, P);
  batch.user_context = RealTensor(K * B, 2 * P);
  batch.ris_context = RealTensor(R * B, P);
  batch.flat_features = RealTensor(B, K * R * P);
  batch.labels = RealTensor(K * B, R);
  batch.phase_kernels =
      std::make_shared<std::vector<double>>(K * R * B * (2 * M) * (2 * N_t));

  const double inv_scale = 1.0 / input_scale;
  std::vector<double> ybar(K * 2 * P);  // per-user [mean_i x; max_i x] summaries

  for (std::size_t b = 0; b < B; ++b) {
    const std::size_t idx = indices[b];
    if (idx >= ds.samples.size()) {
      throw std::invalid_argument("make_batch: sample index out of range");
    }
    const ChannelRealization& cr = ds.samples[idx];
    std::fill(ybar.begin(), ybar.end(), 0.0);

    for (std::size_t k = 0; k < K; ++k) {
      for (std::size_t i = 0; i < R; ++i) {
        const ComplexMatrix& H = cr.H_of(i, k, K);
        double* pair_row = batch.pair_features.data() + ((k * R + i) * B + b) * P;
        for (std::size_t e = 0; e < M * N_t; ++e) {
          pair_row[e] = H.data()[e].real() * inv_scale;
          pair_row[M * N_t + e] = H.data()[e].imag() * inv_scale;
        }
        double* mean_part = ybar.data() + k * 2 * P;
        double* max_part = mean_part + P;
        for (std::size_t e = 0; e < P; ++e) {
          mean_part[e] += pair_row[e] / static_cast<double>(R);
          if (i == 0 || pair_row[e] > max_part[e]) max_part[e] = pair_row[e];
        }
        double* ris_row = batch.ris_context.data() + (i * B + b) * P;
        for (std::size_t e = 0; e < P; ++e) {
          ris_row[e] += pair_row[e] / static_cast<double>(K);
        }

        // Realified right-multiplication kernel for theta -> theta * H_ik.
        double* W = batch.phase_kernels->data() +
                    ((k * R + i) * B + b) * (2 * M) * (2 * N_t);
        for (std::size_t m = 0; m < M; ++m) {
          for (std::size_t n = 0; n < N_t; ++n) {
            const cplx v = H.at(m, n);
            W[m * 2 * N_t + n] = v.real();
            W[m * 2 * N_t + N_t + n] = v.imag();
            W[(M + m) * 2 * N_t + n] = -v.imag();
            W[(M + m) * 2 * N_t + N_t + n] = v.real();
          }
        }
      }
      const std::vector<double> raw = user_raw_feature(cr, R, K, k);
      double* flat_row = batch.flat_features.data() + b * K * R * P + k * R * P;
      for (std::size_t e = 0; e < R * P; ++e) flat_row[e] = raw[e] * inv_scale;
    }

    // Interference-view user context: mean of the other users' summaries.
    for (std::size_t k = 0; k < K; ++k) {
      double* ctx = batch.user_context.data() + (k * B + b) * 2 * P;
      if (K == 1) continue;  // no other users: zero context
      for (std::size_t kp = 0; kp < K; ++kp) {
        if (kp == k) continue;
        const double* src = ybar.data() + kp * 2 * P;
        for (std::size_t e = 0; e < 2 * P; ++e) {
          ctx[e] += src[e] / static_cast<double>(K - 1);
        }
      }
    }

    // Nearest-surface labels (distance ties break to the lowest index).
    const Association labels =
        case_association(sc, cr, label_mode, label_single_index);
    for (std::size_t k = 0; k < K; ++k) {
      batch.labels.at(k * B + b, labels.served_by(k)) = 1.0;
    }
  }
  return batch;
}

namespace {

struct Builder {
  Tape& tape;
  const Model& model;
  std::map<std::string, NodeId>& param_nodes;

  NodeId p(const std::string& name) const {
    const auto it = param_nodes.find(name);
    if (it == param_nodes.end()) {
      throw std::logic_error("forward: unknown parameter " + name);
    }
    return it->second;
  }
  NodeId mlp(NodeId x, const std::string& prefix) const {
    return mlp2(tape, x, p(prefix + "_w1"), p(prefix + "_b1"), p(prefix + "_w2"),
                p(prefix + "_b2"), model.config.leaky_slope);
  }
  NodeId linear(NodeId x, const std::string& prefix) const {
    return tape.add(tape.matmul(x, p(prefix + "_w")), p(prefix + "_b"));
  }
  NodeId lrelu(NodeId x) const {
    return tape.leaky_relu(x, model.config.leaky_slope);
  }
};

void bind_params(Tape& tape, const Model& model,
                 std::map<std::string, NodeId>& param_nodes) {
  for (const auto& [name, tensor] : model.params) {
    param_nodes[name] = tape.input(tensor);
  }
}

NodeId project_full_power(Tape& tape, NodeId f_raw, double p_max_watts) {
  if (!(p_max_watts > 0.0)) {
    throw std::invalid_argument("forward: p_max must be > 0");
  }
  const NodeId norm = tape.sqrt(tape.sum_axis(tape.square(f_raw), 1));
  return tape.scale(tape.div(f_raw, norm), std::sqrt(p_max_watts));
}

/** Pair-major (K*R*B) tiling of a user-major (K*B) state. */
NodeId tile_user_to_pairs(Tape& tape, NodeId user_state, std::size_t K,
                          std::size_t R, std::size_t B) {
  std::vector<NodeId> parts;
  parts.reserve(K);
  for (std::size_t k = 0; k < K; ++k) {
    parts.push_back(tile_rows(tape, block_rows(tape, user_state, k, B), R));
  }
  if (parts.size() == 1) return parts[0];
  return tape.concat(parts, 0);
}

}  // namespace

ForwardNodes hgnn_forward_graph(Tape& tape, const BatchData& batch,
                                const Model& model, double p_max_watts,
                                std::map<std::string, NodeId>& param_nodes,
                                bool with_assoc_head) {
  if (model.kind != Model::Kind::kGnn) {
    throw std::invalid_argument("hgnn_forward_graph: model is not a graph network");
  }
  model.config.validate();
  const std::size_t B = batch.B;
  const std::size_t K = model.config.K;
  const std::size_t R = model.config.R;
  bind_params(tape, model, param_nodes);
  Builder g{tape, model, param_nodes};

  const NodeId X = tape.constant(batch.pair_features);
  const NodeId UX = tape.constant(batch.user_context);
  const NodeId RX = tape.constant(batch.ris_context);

  // Encoder: pair embeddings plus the two node trunks.
  const NodeId E = g.lrelu(g.linear(X, "enc_pair"));        // (K*R*B, D)
  NodeId u_state = g.lrelu(g.linear(UX, "enc_user"));       // (K*B, D)
  NodeId r_state = g.lrelu(g.linear(RX, "enc_ris"));        // (R*B, D)

  for (std::size_t s = 0; s < model.config.core_steps(); ++s) {
    const std::string pre = "core" + std::to_string(s) + "_";

    // Surface update: own message and the mean user message, each combined
    // with the previous state, averaged, plus the residual.
    const NodeId msg_r = g.mlp(r_state, pre + "msg_rr");
    const NodeId xi_rr =
        g.mlp(tape.concat({msg_r, r_state}, 1), pre + "upd_rr");
    const NodeId mean_u =
        mean_blocks(tape, g.mlp(u_state, pre + "msg_ur"), K, B);
    const NodeId xi_ur = g.mlp(
        tape.concat({tile_rows(tape, mean_u, R), r_state}, 1), pre + "upd_ur");
    const NodeId r_new =
        tape.add(tape.scale(tape.add(xi_rr, xi_ur), 0.5), r_state);

    // User update: mean surface message, plus the mean of the max-pooled and
    // self user messages, averaged, plus the residual.
    const NodeId mean_r =
        mean_blocks(tape, g.mlp(r_state, pre + "msg_ru"), R, B);
    const NodeId xi_ru = g.mlp(
        tape.concat({tile_rows(tape, mean_r, K), u_state}, 1), pre + "upd_ru");
    const NodeId msg_u = g.mlp(u_state, pre + "msg_uu");
    const NodeId xi_max = tile_rows(
        tape, g.mlp(max_blocks(tape, msg_u, K, B), pre + "upd_umax"), K);
    const NodeId xi_self =
        g.mlp(tape.concat({msg_u, u_state}, 1), pre + "upd_uself");
    const NodeId xi_uu = tape.scale(tape.add(xi_max, xi_self), 0.5);
    const NodeId u_new =
        tape.add(tape.scale(tape.add(xi_ru, xi_uu), 0.5), u_state);

    r_state = r_new;
    u_state = u_new;
  }

  ForwardNodes out;

  // Decoder, BS side: per-user messages, aggregated with the surface summary.
  const NodeId ucol = g.mlp(u_state, "dec_u2b");  // (K*B, D)
  const NodeId vb = tape.scale(
      tape.add(mean_blocks(tape, ucol, K, B),
               mean_blocks(tape, g.mlp(r_state, "dec_r2b"), R, B)),
      0.5);
  std::vector<NodeId> f_cols;
  f_cols.reserve(K);
  for (std::size_t k = 0; k < K; ++k) {
    const NodeId uk = block_rows(tape, ucol, k, B);
    f_cols.push_back(g.linear(tape.concat({uk, vb}, 1), "head_f"));
  }
  out.f_raw = (K == 1) ? f_cols[0] : tape.concat(f_cols, 1);  // (B, 2*N_t*K)
  out.f = project_full_power(tape, out.f_raw, p_max_watts);

  // Decoder, surface side: user messages carry the pair embedding so each
  // surface sees its own per-user channels.
  const NodeId u_tiled = tile_user_to_pairs(tape, u_state, K, R, B);
  const NodeId q = g.mlp(tape.concat({u_tiled, E}, 1), "dec_u2r");  // (K*R*B, D)
  std::vector<NodeId> xi_u_r_parts;
  xi_u_r_parts.reserve(R);
  for (std::size_t i = 0; i < R; ++i) {
    NodeId acc = block_rows(tape, q, 0 * R + i, B);
    for (std::size_t k = 1; k < K; ++k) {
      acc = tape.add(acc, block_rows(tape, q, k * R + i, B));
    }
    xi_u_r_parts.push_back(tape.scale(acc, 1.0 / static_cast<double>(K)));
  }
  const NodeId xi_u_r =
      (R == 1) ? xi_u_r_parts[0] : tape.concat(xi_u_r_parts, 0);  // (R*B, D)
  const NodeId xi_r_r = g.mlp(
      tape.concat({r_state, tile_rows(tape, mean_blocks(tape, r_state, R, B), R)},
                  1),
      "dec_r2r");
  const NodeId v_r = tape.scale(tape.add(xi_u_r, xi_r_r), 0.5);
  out.theta_raw = g.linear(v_r, "head_theta");  // (R*B, 2M)
  out.theta = tape.unit_modulus(out.theta_raw);

  if (with_assoc_head) {
    // Decoder, user side: per-pair surface messages m_{k,i} feed both the
    // user state aggregation and the association score for that pair.
    const NodeId r_tiled = tile_rows(tape, r_state, K);  // pair-major
    const NodeId m = g.mlp(tape.concat({r_tiled, E}, 1), "dec_r2u");
    std::vector<NodeId> xi_r_u_parts;
    xi_r_u_parts.reserve(K);
    for (std::size_t k = 0; k < K; ++k) {
      NodeId acc = block_rows(tape, m, k * R + 0, B);
      for (std::size_t i = 1; i < R; ++i) {
        acc = tape.add(acc, block_rows(tape, m, k * R + i, B));
      }
      xi_r_u_parts.push_back(tape.scale(acc, 1.0 / static_cast<double>(R)));
    }
    const NodeId xi_r_u =
        (K == 1) ? xi_r_u_parts[0] : tape.concat(xi_r_u_parts, 0);  // (K*B, D)
    const NodeId xi_u_u = g.mlp(
        tape.concat(
            {u_state, tile_rows(tape, mean_blocks(tape, u_state, K, B), K)}, 1),
        "dec_u2u");
    const NodeId v_u = tape.scale(tape.add(xi_r_u, xi_u_u), 0.5);  // (K*B, D)

    const NodeId v_u_tiled = tile_user_to_pairs(tape, v_u, K, R, B);
    const NodeId score_col =
        g.linear(tape.concat({v_u_tiled, m}, 1), "head_assoc");  // (K*R*B, 1)
    std::vector<NodeId> logit_rows;
    logit_rows.reserve(K);
    for (std::size_t k = 0; k < K; ++k) {
      std::vector<NodeId> cols;
      cols.reserve(R);
      for (std::size_t i = 0; i < R; ++i) {
        cols.push_back(block_rows(tape, score_col, k * R + i, B));
      }
      logit_rows.push_back((R == 1) ? cols[0] : tape.concat(cols, 1));
    }
    out.logits =
        (K == 1) ? logit_rows[0] : tape.concat(logit_rows, 0);  // (K*B, R)
    out.scores = tape.softmax(out.logits);
    out.has_scores = true;
  }
  return out;
}

ForwardNodes dnn_forward_graph(Tape& tape, const BatchData& batch,
                               const Model& model, double p_max_watts,
                               std::map<std::string, NodeId>& param_nodes) {
  if (model.kind != Model::Kind::kDnn) {
    throw std::invalid_argument("dnn_forward_graph: model is not the MLP benchmark");
  }
  model.config.validate();
  const std::size_t B = batch.B;
  const std::size_t K = model.config.K;
  const std::size_t R = model.config.R;
  const std::size_t M = model.config.M;
  bind_params(tape, model, param_nodes);
  Builder g{tape, model, param_nodes};

  NodeId h = g.lrelu(g.linear(tape.constant(batch.flat_features), "dnn_enc"));
  for (std::size_t s = 0; s < 4; ++s) {
    h = g.lrelu(g.linear(h, "dnn_proc" + std::to_string(s)));
  }
  h = g.lrelu(g.linear(h, "dnn_dec"));

  ForwardNodes out;
  out.f_raw = g.linear(h, "dnn_head_f");  // (B, 2*N_t*K)
  out.f = project_full_power(tape, out.f_raw, p_max_watts);

  const NodeId th_flat = g.linear(h, "dnn_head_theta");  // (B, 2M*R)
  std::vector<NodeId> th_parts;
  th_parts.reserve(R);
  for (std::size_t i = 0; i < R; ++i) {
    th_parts.push_back(tape.slice(th_flat, 0, B, i * 2 * M, (i + 1) * 2 * M));
  }
  out.theta_raw = (R == 1) ? th_parts[0] : tape.concat(th_parts, 0);
  out.theta = tape.unit_modulus(out.theta_raw);

  const NodeId as_flat = g.linear(h, "dnn_head_assoc");  // (B, K*R)
  std::vector<NodeId> as_parts;
  as_parts.reserve(K);
  for (std::size_t k = 0; k < K; ++k) {
    as_parts.push_back(tape.slice(as_flat, 0, B, k * R, (k + 1) * R));
  }
  out.logits = (K == 1) ? as_parts[0] : tape.concat(as_parts, 0);
  out.scores = tape.softmax(out.logits);
  out.has_scores = true;
  return out;
}

ForwardNodes model_forward_graph(Tape& tape, const BatchData& batch,
                                 const Model& model, double p_max_watts,
                                 std::map<std::string, NodeId>& param_nodes,
                                 bool with_assoc_head) {
  if (model.kind == Model::Kind::kGnn) {
    return hgnn_forward_graph(tape, batch, model, p_max_watts, param_nodes,
                              with_assoc_head);
  }
  return dnn_forward_graph(tape, batch, model, p_max_watts, param_nodes);
}

LossNodes training_loss_graph(Tape& tape, const BatchData& batch,
                              const ForwardNodes& fwd,
                              const std::vector<double>& weights,
                              double noise_power, double eta, double rate_scale,
                              bool soft_association) {
  const std::size_t B = batch.B;
  const std::size_t K = batch.dims.K;
  const std::size_t R = batch.dims.R;
  const std::size_t M = batch.dims.M;
  const std::size_t N_t = batch.dims.N_t;
  if (weights.size() != K) {
    throw std::invalid_argument("training_loss_graph: one weight per user required");
  }
  if (!(noise_power > 0.0)) {
    throw std::invalid_argument("training_loss_graph: noise power must be > 0");
  }
  if (!(rate_scale > 0.0)) {
    throw std::invalid_argument("training_loss_graph: rate scale must be > 0");
  }

  // Association weights as a pair-major column, soft (scores) or hard (labels).
  NodeId w_col;
  if (soft_association) {
    if (!fwd.has_scores) {
      throw std::invalid_argument(
          "training_loss_graph: soft association requires the score head");
    }
    std::vector<NodeId> parts;
    parts.reserve(K * R);
    for (std::size_t k = 0; k < K; ++k) {
      for (std::size_t i = 0; i < R; ++i) {
        parts.push_back(tape.slice(fwd.scores, k * B, (k + 1) * B, i, i + 1));
      }
    }
    w_col = (parts.size() == 1) ? parts[0] : tape.concat(parts, 0);
  } else {
    RealTensor col(K * R * B, 1);
    for (std::size_t k = 0; k < K; ++k) {
      for (std::size_t i = 0; i < R; ++i) {
        for (std::size_t b = 0; b < B; ++b) {
          col.at((k * R + i) * B + b, 0) = batch.labels.at(k * B + b, i);
        }
      }
    }
    w_col = tape.constant(std::move(col));
  }

  // Effective channels: apply phases through the per-pair kernels, weight by
  // the association, and sum the surface contributions per user.
  const NodeId theta_pairs = tile_rows(tape, fwd.theta, K);
  const NodeId applied =
      tape.linmap_rows(theta_pairs, batch.phase_kernels, 2 * M, 2 * N_t);
  const NodeId weighted = tape.mul(applied, w_col);
  std::vector<NodeId> h_user(K);
  for (std::size_t k = 0; k < K; ++k) {
    NodeId acc = block_rows(tape, weighted, k * R + 0, B);
    for (std::size_t i = 1; i < R; ++i) {
      acc = tape.add(acc, block_rows(tape, weighted, k * R + i, B));
    }
    h_user[k] = acc;  // (B, 2*N_t) realified row channel
  }

  NodeId wsr_col = 0;
  bool have_wsr = false;
  for (std::size_t k = 0; k < K; ++k) {
    const NodeId hr = tape.slice(h_user[k], 0, B, 0, N_t);
    const NodeId hi = tape.slice(h_user[k], 0, B, N_t, 2 * N_t);
    NodeId signal = 0;
    NodeId interference = 0;
    bool have_interference = false;
    for (std::size_t j = 0; j < K; ++j) {
      const NodeId fr = tape.slice(fwd.f, 0, B, j * 2 * N_t, j * 2 * N_t + N_t);
      const NodeId fi =
          tape.slice(fwd.f, 0, B, j * 2 * N_t + N_t, (j + 1) * 2 * N_t);
      const NodeId re =
          tape.sum_axis(tape.sub(tape.mul(hr, fr), tape.mul(hi, fi)), 1);
      const NodeId im =
          tape.sum_axis(tape.add(tape.mul(hr, fi), tape.mul(hi, fr)), 1);
      const NodeId power = tape.add(tape.square(re), tape.square(im));  // (B,1)
      if (j == k) {
        signal = power;
      } else if (!have_interference) {
        interference = power;
        have_interference = true;
      } else {
        interference = tape.add(interference, power);
      }
    }
    const NodeId denom = have_interference
                             ? tape.add_scalar(interference, noise_power)
                             : tape.constant(RealTensor(B, 1, noise_power));
    const NodeId ratio = tape.div(signal, denom);
    const NodeId rate =
        tape.scale(tape.log(tape.add_scalar(ratio, 1.0)), weights[k] * kInvLn2);
    wsr_col = have_wsr ? tape.add(wsr_col, rate) : rate;
    have_wsr = true;
  }

  LossNodes loss;
  loss.rate_loss = tape.scale(tape.mean_axis(wsr_col, 0), -1.0);

  if (fwd.has_scores) {
    const NodeId clamp_floor = tape.constant(RealTensor(K * B, R, kScoreClamp));
    const NodeId clamped = tape.max_many({fwd.scores, clamp_floor});
    const NodeId masked =
        tape.mul(tape.log(clamped), tape.constant(batch.labels));
    const NodeId row_sum = tape.sum_axis(masked, 1);  // (K*B, 1)
    NodeId per_sample = block_rows(tape, row_sum, 0, B);
    for (std::size_t k = 1; k < K; ++k) {
      per_sample = tape.add(per_sample, block_rows(tape, row_sum, k, B));
    }
    loss.ce_loss = tape.scale(tape.mean_axis(per_sample, 0), -1.0);
    loss.has_ce = true;
    loss.total = tape.add(tape.scale(loss.rate_loss, 1.0 / rate_scale),
                          tape.scale(loss.ce_loss, eta));
  } else {
    loss.total = tape.scale(loss.rate_loss, 1.0 / rate_scale);
  }
  return loss;
}

std::vector<DecodedSample> read_forward(const Tape& tape, const BatchData& batch,
                                        const ForwardNodes& fwd) {
  const std::size_t B = batch.B;
  const std::size_t K = batch.dims.K;
  const std::size_t R = batch.dims.R;
  const std::size_t M = batch.dims.M;
  const std::size_t N_t = batch.dims.N_t;
  const RealTensor& f = tape.value(fwd.f);
  const RealTensor& theta = tape.value(fwd.theta);

  std::vector<DecodedSample> out(B);
  for (std::size_t b = 0; b < B; ++b) {
    DecodedSample& s = out[b];
    s.F = ComplexMatrix(N_t, K);
    for (std::size_t k = 0; k < K; ++k) {
      for (std::size_t n = 0; n < N_t; ++n) {
        s.F.at(n, k) = cplx(f.at(b, k * 2 * N_t + n), f.at(b, k * 2 * N_t + N_t + n));
      }
    }
    s.theta.assign(R, ComplexMatrix(1, M));
    for (std::size_t i = 0; i < R; ++i) {
      for (std::size_t m = 0; m < M; ++m) {
        s.theta[i].at(0, m) =
            cplx(theta.at(i * B + b, m), theta.at(i * B + b, M + m));
      }
    }
    if (fwd.has_scores) {
      const RealTensor& scores = tape.value(fwd.scores);
      s.scores.resize(K * R);
      for (std::size_t k = 0; k < K; ++k) {
        for (std::size_t i = 0; i < R; ++i) {
          s.scores[k * R + i] = scores.at(k * B + b, i);
        }
      }
      s.assoc = decode_association(K, R, s.scores);
    }
  }
  return out;
}

double loss_wsr_value(const ProblemInstance& inst, const ComplexMatrix& F,
                      const std::vector<ComplexMatrix>& theta,
                      const std::vector<double>& assoc_weights) {
  inst.validate();
  const ScenarioConfig& sc = *inst.scenario;
  const std::size_t M = sc.M();
  if (assoc_weights.size() != sc.K * sc.R) {
    throw std::invalid_argument("loss_wsr_value: association weights must be K x R");
  }
  if (theta.size() != sc.R) {
    throw std::invalid_argument("loss_wsr_value: one phase row per surface required");
  }
  for (std::size_t k = 0; k < sc.K; ++k) {
    double row_sum = 0.0;
    for (std::size_t i = 0; i < sc.R; ++i) {
      const double w = assoc_weights[k * sc.R + i];
      if (std::isnan(w) || w < 0.0) {
        throw std::invalid_argument("loss_wsr_value: weights must be >= 0");
      }
      row_sum += w;
    }
    if (std::abs(row_sum - 1.0) > 1e-6) {
      throw std::invalid_argument("loss_wsr_value: weight rows must sum to 1");
    }
  }

  ComplexMatrix h(sc.K, sc.N_t);
  for (std::size_t k = 0; k < sc.K; ++k) {
    for (std::size_t i = 0; i < sc.R; ++i) {
      const double w = assoc_weights[k * sc.R + i];
      if (w == 0.0) continue;
      if (theta[i].rows() != 1 || theta[i].cols() != M) {
        throw std::invalid_argument("loss_wsr_value: phase rows must be 1 x M");
      }
      const ComplexMatrix row =
          multiply(theta[i], inst.realization->H_of(i, k, sc.K));
      for (std::size_t n = 0; n < sc.N_t; ++n) h.at(k, n) += w * row.at(0, n);
    }
  }
  return -wsr(inst, sinr(inst, h, F));
}

double loss_ce_value(const Association& labels, const std::vector<double>& scores,
                     std::size_t* clamp_count) {
  labels.validate();
  if (scores.size() != labels.K * labels.R) {
    throw std::invalid_argument("loss_ce_value: scores must be K x R");
  }
  double total = 0.0;
  for (std::size_t k = 0; k < labels.K; ++k) {
    for (std::size_t i = 0; i < labels.R; ++i) {
      if (labels.at(k, i) == 0) continue;
      double c = scores[k * labels.R + i];
      if (std::isnan(c) || c < 0.0) {
        throw std::invalid_argument("loss_ce_value: scores must be >= 0");
      }
      if (c < kScoreClamp) {
        c = kScoreClamp;
        if (clamp_count != nullptr) ++*clamp_count;
      }
      total -= std::log(c);
    }
  }
  return total;
}

}  // namespace rislab
