#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <string_view>
#include <vector>

#include "motg/autograd.hpp"
#include "motg/error.hpp"
#include "motg/rng.hpp"
#include "motg/sampling.hpp"
#include "motg/simplex.hpp"
#include "motg/tensor.hpp"

namespace motg {

/// Which activation is captured per layer in a HiddenStateTrace.
enum class TracePoint { residual, post_attention, post_mlp };

inline std::string_view to_string(TracePoint t) {
  switch (t) {
    case TracePoint::residual: return "residual";
    case TracePoint::post_attention: return "post_attention";
    case TracePoint::post_mlp: return "post_mlp";
  }
  return "?";
}

inline TracePoint trace_point_from_string(std::string_view s) {
  if (s == "residual") return TracePoint::residual;
  if (s == "post_attention") return TracePoint::post_attention;
  if (s == "post_mlp") return TracePoint::post_mlp;
  throw InvalidInput("unknown trace point '" + std::string(s) + "'");
}

struct ModelConfig {
  std::size_t vocab_size = 50;
  std::size_t embed_dim = 64;
  std::size_t hidden_dim = 256;  // feed-forward width
  std::size_t num_layers = 3;
  std::size_t num_heads = 4;
  std::size_t context_length = 40;
  std::uint64_t seed = 1;
  double init_std = 0.02;
  TracePoint trace_point = TracePoint::residual;

  void validate() const {
    if (vocab_size < 2) throw InvalidInput("model: vocab_size must be >= 2");
    if (embed_dim < 1 || num_heads < 1 || num_layers < 1 || hidden_dim < 1 || context_length < 1)
      throw InvalidInput("model: dimensions must be positive");
    if (embed_dim % num_heads != 0) throw InvalidInput("model: embed_dim must be divisible by num_heads");
    if (!(init_std > 0.0)) throw InvalidInput("model: init_std must be positive");
  }

  // Shape-defining fields only; seed and init do not affect compatibility.
  bool same_shape(const ModelConfig& o) const {
    return vocab_size == o.vocab_size && embed_dim == o.embed_dim && hidden_dim == o.hidden_dim &&
           num_layers == o.num_layers && num_heads == o.num_heads && context_length == o.context_length;
  }
};

template <class T>
struct LayerSet {
  T ln1_g, ln1_b, wq, wk, wv, wo, bo, ln2_g, ln2_b, w1, b1, w2, b2;

  template <class F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + "ln1_g", ln1_g); f(prefix + "ln1_b", ln1_b);
    f(prefix + "wq", wq); f(prefix + "wk", wk); f(prefix + "wv", wv);
    f(prefix + "wo", wo); f(prefix + "bo", bo);
    f(prefix + "ln2_g", ln2_g); f(prefix + "ln2_b", ln2_b);
    f(prefix + "w1", w1); f(prefix + "b1", b1); f(prefix + "w2", w2); f(prefix + "b2", b2);
  }
};

/// Everything trainable, generic over the leaf type (Matrix for values, Var for
/// graph bindings). `visit` enumerates leaves in a fixed order.
template <class T>
struct ParamSet {
  T tok_emb;  // vocab x d, also the (tied) output projection
  T pos_emb;  // context x d
  std::vector<LayerSet<T>> layers;
  T lnf_g, lnf_b;
  T out_bias;  // 1 x vocab

  template <class F>
  void visit(F&& f) {
    f(std::string("tok_emb"), tok_emb);
    f(std::string("pos_emb"), pos_emb);
    for (std::size_t l = 0; l < layers.size(); ++l) layers[l].visit("layer" + std::to_string(l) + ".", f);
    f(std::string("lnf_g"), lnf_g);
    f(std::string("lnf_b"), lnf_b);
    f(std::string("out_bias"), out_bias);
  }

  template <class F>
  void visit(F&& f) const {
    const_cast<ParamSet*>(this)->visit([&](const std::string& n, T& v) { f(n, static_cast<const T&>(v)); });
  }
};

using Parameters = ParamSet<Matrix>;
using ParameterVars = ParamSet<Var>;

inline std::size_t parameter_count(const Parameters& p) {
  std::size_t n = 0;
  p.visit([&](const std::string&, const Matrix& m) { n += static_cast<std::size_t>(m.size()); });
  return n;
}

inline Parameters zeros_like(const Parameters& p) {
  Parameters z = p;
  z.visit([](const std::string&, Matrix& m) { m.setZero(); });
  return z;
}

inline bool parameters_finite(const Parameters& p) {
  bool ok = true;
  p.visit([&](const std::string&, const Matrix& m) { ok = ok && m.allFinite(); });
  return ok;
}

inline bool parameters_equal(const Parameters& a, const Parameters& b) {
  std::vector<const Matrix*> av, bv;
  a.visit([&](const std::string&, const Matrix& m) { av.push_back(&m); });
  b.visit([&](const std::string&, const Matrix& m) { bv.push_back(&m); });
  if (av.size() != bv.size()) return false;
  for (std::size_t i = 0; i < av.size(); ++i)
    if (av[i]->rows() != bv[i]->rows() || av[i]->cols() != bv[i]->cols() || *av[i] != *bv[i]) return false;
  return true;
}

/// Random init: N(0, init_std) weights, unit layer-norm gains, zero biases.
/// Residual output projections are scaled by 1/sqrt(2 * num_layers).
inline Parameters init_parameters(const ModelConfig& cfg) {
  cfg.validate();
  Rng rng = Rng::stream(cfg.seed, "init");
  const auto d = static_cast<Eigen::Index>(cfg.embed_dim);
  const auto h = static_cast<Eigen::Index>(cfg.hidden_dim);
  const auto v = static_cast<Eigen::Index>(cfg.vocab_size);
  const auto n = static_cast<Eigen::Index>(cfg.context_length);
  auto normal = [&](Eigen::Index r, Eigen::Index c, double std) {
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = std * rng.normal();
    return m;
  };
  const double resid_std = cfg.init_std / std::sqrt(2.0 * static_cast<double>(cfg.num_layers));
  Parameters p;
  p.tok_emb = normal(v, d, cfg.init_std);
  p.pos_emb = normal(n, d, cfg.init_std);
  for (std::size_t l = 0; l < cfg.num_layers; ++l) {
    LayerSet<Matrix> L;
    L.ln1_g = Matrix::Ones(1, d);
    L.ln1_b = Matrix::Zero(1, d);
    L.wq = normal(d, d, cfg.init_std);
    L.wk = normal(d, d, cfg.init_std);
    L.wv = normal(d, d, cfg.init_std);
    L.wo = normal(d, d, resid_std);
    L.bo = Matrix::Zero(1, d);
    L.ln2_g = Matrix::Ones(1, d);
    L.ln2_b = Matrix::Zero(1, d);
    L.w1 = normal(d, h, cfg.init_std);
    L.b1 = Matrix::Zero(1, h);
    L.w2 = normal(h, d, resid_std);
    L.b2 = Matrix::Zero(1, d);
    p.layers.push_back(std::move(L));
  }
  p.lnf_g = Matrix::Ones(1, d);
  p.lnf_b = Matrix::Zero(1, d);
  p.out_bias = Matrix::Zero(1, v);
  return p;
}

inline ParameterVars bind_parameters(Graph& g, const Parameters& p, bool trainable) {
  ParameterVars vars;
  vars.layers.resize(p.layers.size());
  std::vector<Var> leaves;
  p.visit([&](const std::string&, const Matrix& m) { leaves.push_back(trainable ? g.parameter(m) : g.input(m)); });
  std::size_t i = 0;
  vars.visit([&](const std::string&, Var& v) { v = leaves[i++]; });
  return vars;
}

inline Parameters collect_gradients(const Graph& g, const ParameterVars& vars, const Parameters& like) {
  Parameters out = zeros_like(like);
  std::vector<Var> leaves;
  vars.visit([&](const std::string&, const Var& v) { leaves.push_back(v); });
  std::size_t i = 0;
  out.visit([&](const std::string&, Matrix& m) {
    const Matrix& gr = g.grad(leaves[i++]);
    if (gr.size() == m.size()) m = gr;
  });
  return out;
}

// ---------------------------------------------------------------------------
// Embedding lookup and sequences

enum class RowOrigin { prompt_token, mixture, answer_token };

/// Rows fed to the network plus where each came from.
struct EmbeddingSequence {
  Matrix rows;  // t x d
  std::vector<RowOrigin> origins;

  std::size_t length() const { return origins.size(); }
  void append(const RowVector& r, RowOrigin o) {
    rows.conservativeResize(rows.rows() + 1, r.size());
    rows.row(rows.rows() - 1) = r;
    origins.push_back(o);
  }
};

inline RowVector embed(const Parameters& p, TokenId id) {
  if (id >= static_cast<std::size_t>(p.tok_emb.rows())) throw InvalidInput("embed: token id out of range");
  return p.tok_emb.row(static_cast<Eigen::Index>(id));
}

inline EmbeddingSequence embed_sequence(const Parameters& p, std::span<const TokenId> ids,
                                        RowOrigin origin = RowOrigin::prompt_token) {
  EmbeddingSequence s;
  s.rows = Matrix(0, p.tok_emb.cols());
  for (TokenId id : ids) s.append(embed(p, id), origin);
  return s;
}

// ---------------------------------------------------------------------------
// Forward pass

/// Graph nodes produced by one forward pass.
struct ForwardNodes {
  Var log_probs;                // t x vocab
  std::vector<Var> layer_trace;  // per layer, t x d at the configured trace point
};

inline ForwardNodes build_forward(Graph& g, const ParameterVars& p, Var x, const ModelConfig& cfg) {
  const auto t = g.value(x).rows();
  if (t < 1) throw InvalidInput("forward: empty sequence");
  if (static_cast<std::size_t>(t) > cfg.context_length)
    throw ContextOverflow("forward: sequence length " + std::to_string(t) + " exceeds context " +
                          std::to_string(cfg.context_length));
  const auto d = static_cast<Eigen::Index>(cfg.embed_dim);
  const auto heads = static_cast<Eigen::Index>(cfg.num_heads);
  const Eigen::Index dh = d / heads;
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(dh));

  ForwardNodes out;
  Var h = g.add(x, g.slice_rows(p.pos_emb, 0, t));
  for (const auto& L : p.layers) {
    Var a = g.layer_norm(h, L.ln1_g, L.ln1_b);
    Var q = g.matmul(a, L.wq), k = g.matmul(a, L.wk), v = g.matmul(a, L.wv);
    std::vector<Var> head_out;
    head_out.reserve(static_cast<std::size_t>(heads));
    for (Eigen::Index hd = 0; hd < heads; ++hd) {
      Var qh = g.slice_cols(q, hd * dh, dh), kh = g.slice_cols(k, hd * dh, dh), vh = g.slice_cols(v, hd * dh, dh);
      Var att = g.causal_softmax(g.scale(g.matmul_nt(qh, kh), att_scale));
      head_out.push_back(g.matmul(att, vh));
    }
    Var attn = g.add_row(g.matmul(g.concat_cols(head_out), L.wo), L.bo);
    h = g.add(h, attn);
    Var post_attention = h;
    Var m = g.layer_norm(h, L.ln2_g, L.ln2_b);
    Var mlp = g.add_row(g.matmul(g.gelu(g.add_row(g.matmul(m, L.w1), L.b1)), L.w2), L.b2);
    h = g.add(h, mlp);
    switch (cfg.trace_point) {
      case TracePoint::residual: out.layer_trace.push_back(h); break;
      case TracePoint::post_attention: out.layer_trace.push_back(post_attention); break;
      case TracePoint::post_mlp: out.layer_trace.push_back(mlp); break;
    }
  }
  Var hf = g.layer_norm(h, p.lnf_g, p.lnf_b);
  Var logits = g.add_row(g.matmul_nt(hf, p.tok_emb), p.out_bias);
  out.log_probs = g.log_softmax(logits);
  return out;
}

struct ForwardResult {
  ProbabilityVector final_dist;            // distribution at the last position
  Matrix log_probs;                        // t x vocab
  std::vector<RowVector> final_hidden;     // per layer, hidden vector at the last position
};

inline ProbabilityVector row_distribution(const Matrix& log_probs, Eigen::Index row) {
  std::vector<double> p(static_cast<std::size_t>(log_probs.cols()));
  for (Eigen::Index j = 0; j < log_probs.cols(); ++j) p[static_cast<std::size_t>(j)] = std::exp(log_probs(row, j));
  return normalize(p);
}

/// Next-token distributions for an arbitrary sequence of real-valued rows.
inline ForwardResult forward(const Parameters& params, const ModelConfig& cfg, const Matrix& x) {
  Graph g(false);
  ParameterVars pv = bind_parameters(g, params, false);
  ForwardNodes nodes = build_forward(g, pv, g.input(x), cfg);
  const Matrix& lp = g.value(nodes.log_probs);
  if (!lp.allFinite()) throw NumericalFailure("forward produced non-finite log-probabilities", g.first_nonfinite());
  ForwardResult r{row_distribution(lp, lp.rows() - 1), lp, {}};
  for (Var v : nodes.layer_trace) r.final_hidden.push_back(g.value(v).row(g.value(v).rows() - 1));
  return r;
}

inline ForwardResult forward(const Parameters& params, const ModelConfig& cfg, const EmbeddingSequence& x) {
  return forward(params, cfg, x.rows);
}

/// Per layer, one row per executed generation step.
struct HiddenStateTrace {
  std::vector<Matrix> layers;

  void append(const std::vector<RowVector>& rows) {
    if (layers.empty()) layers.resize(rows.size());
    for (std::size_t l = 0; l < rows.size(); ++l) {
      Matrix& m = layers[l];
      m.conservativeResize(m.rows() + 1, rows[l].size());
      m.row(m.rows() - 1) = rows[l];
    }
  }
  std::size_t steps() const { return layers.empty() ? 0 : static_cast<std::size_t>(layers[0].rows()); }
};

// ---------------------------------------------------------------------------
// Loss and gradient

struct LossAndGrad {
  double loss = 0.0;
  Parameters grad;
};

using LossBuilder = std::function<Var(Graph&, const ParameterVars&)>;

/// Evaluates a scalar loss built from the parameters and its exact gradient.
inline LossAndGrad loss_and_grad(const Parameters& params, const LossBuilder& build) {
  Graph g(true);
  ParameterVars pv = bind_parameters(g, params, true);
  Var loss = build(g, pv);
  if (g.value(loss).size() != 1) throw InvalidInput("loss_and_grad: loss is not a scalar");
  const double value = g.scalar(loss);
  if (!std::isfinite(value)) throw NumericalFailure("non-finite loss", g.first_nonfinite());
  g.backward(loss);
  return {value, collect_gradients(g, pv, params)};
}

/// Loss value only, for finite-difference checks.
inline double loss_value(const Parameters& params, const LossBuilder& build) {
  Graph g(false);
  ParameterVars pv = bind_parameters(g, params, false);
  return g.scalar(build(g, pv));
}

/// Mean next-token cross-entropy of `tokens` (teacher forced), counting only
/// targets at positions >= first_target.
inline Var cross_entropy_loss(Graph& g, const ParameterVars& pv, const ModelConfig& cfg,
                              std::span<const TokenId> tokens, std::size_t first_target = 1) {
  if (tokens.size() < 2) throw InvalidInput("cross_entropy_loss: need at least two tokens");
  std::vector<RowSource> rows;
  for (std::size_t i = 0; i + 1 < tokens.size(); ++i) rows.push_back(RowMixture{{tokens[i]}, {1.0}});
  ForwardNodes f = build_forward(g, pv, g.embed_rows(pv.tok_emb, std::move(rows)), cfg);
  std::vector<Var> terms;
  for (std::size_t i = std::max<std::size_t>(first_target, 1); i < tokens.size(); ++i)
    terms.push_back(g.pick(f.log_probs, static_cast<Eigen::Index>(i - 1), static_cast<Eigen::Index>(tokens[i])));
  return g.scale(g.add_scalars(terms), -1.0 / static_cast<double>(terms.size()));
}

// ---------------------------------------------------------------------------
// Optimizer

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  Parameters m, v;
  std::uint64_t step = 0;
  std::uint64_t skipped = 0;

  static AdamState for_params(const Parameters& p) { return {zeros_like(p), zeros_like(p), 0, 0}; }
};

/// One Adam update. Returns false (and leaves everything untouched apart from
/// the skip counter) when the gradient holds a non-finite entry.
inline bool optimizer_step(Parameters& params, const Parameters& grads, AdamState& state, double lr,
                           const AdamConfig& hp = {}) {
  if (!parameters_finite(grads)) {
    ++state.skipped;
    return false;
  }
  ++state.step;
  const double bc1 = 1.0 - std::pow(hp.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(hp.beta2, static_cast<double>(state.step));
  std::vector<Matrix*> P, M, V;
  std::vector<const Matrix*> G;
  params.visit([&](const std::string&, Matrix& x) { P.push_back(&x); });
  state.m.visit([&](const std::string&, Matrix& x) { M.push_back(&x); });
  state.v.visit([&](const std::string&, Matrix& x) { V.push_back(&x); });
  grads.visit([&](const std::string&, const Matrix& x) { G.push_back(&x); });
  if (P.size() != G.size() || P.size() != M.size()) throw InvalidInput("optimizer_step: shape mismatch");
  for (std::size_t i = 0; i < P.size(); ++i) {
    if (P[i]->size() != G[i]->size()) throw InvalidInput("optimizer_step: shape mismatch");
    for (Eigen::Index j = 0; j < P[i]->size(); ++j) {
      const double gj = G[i]->data()[j];
      double& mj = M[i]->data()[j];
      double& vj = V[i]->data()[j];
      mj = hp.beta1 * mj + (1.0 - hp.beta1) * gj;
      vj = hp.beta2 * vj + (1.0 - hp.beta2) * gj * gj;
      P[i]->data()[j] -= lr * (mj / bc1) / (std::sqrt(vj / bc2) + hp.eps);
    }
  }
  return true;
}

inline double gradient_norm(const Parameters& g) {
  double s = 0.0;
  g.visit([&](const std::string&, const Matrix& m) { s += m.squaredNorm(); });
  return std::sqrt(s);
}

inline void scale_parameters(Parameters& g, double factor) {
  g.visit([&](const std::string&, Matrix& m) { m *= factor; });
}

inline void add_parameters(Parameters& acc, const Parameters& g) {
  std::vector<const Matrix*> gs;
  g.visit([&](const std::string&, const Matrix& m) { gs.push_back(&m); });
  std::size_t i = 0;
  acc.visit([&](const std::string&, Matrix& m) { m += *gs[i++]; });
}

}  // namespace motg
