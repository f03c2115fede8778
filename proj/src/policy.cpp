#include "lexma/policy.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <map>

namespace lexma::policy {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void check_temperature(double temperature) {
  if (!(temperature >= 0.0) || !std::isfinite(temperature)) {
    throw ContractError("temperature must be finite and non-negative");
  }
}

// h = B * x for the sparse context.
std::vector<double> project(const Matrix& b, const SparseFeatures& ctx) {
  std::vector<double> h(b.rows, 0.0);
  for (std::size_t r = 0; r < b.rows; ++r) {
    const auto row = b.row(r);
    double s = 0.0;
    for (const auto& [c, v] : ctx.entries) s += row[static_cast<std::size_t>(c)] * v;
    h[r] = s;
  }
  return h;
}

double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Raw (unscaled) logits for `tokens`, plus the adapter projections that the
// gradient pass reuses.
struct Forward {
  std::vector<double> logits;
  std::vector<double> h_acc;
  std::vector<double> h_tone;
};

Forward forward(const PolicyParams& p, const SparseFeatures& ctx, std::span<const int> tokens) {
  if (ctx.dim != p.context_dim()) throw ContractError("context dimension does not match the policy");
  Forward f;
  if (p.active.acc) f.h_acc = project(p.acc.b, ctx);
  if (p.active.tone) f.h_tone = project(p.tone.b, ctx);
  f.logits.resize(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const auto t = static_cast<std::size_t>(tokens[i]);
    const auto w = p.base.row(t);
    double z = 0.0;
    for (const auto& [c, v] : ctx.entries) z += w[static_cast<std::size_t>(c)] * v;
    if (p.active.acc) z += dot(p.acc.a.row(t), f.h_acc);
    if (p.active.tone) z += dot(p.tone.a.row(t), f.h_tone);
    f.logits[i] = z;
  }
  return f;
}

std::size_t argmax_lowest(const std::vector<double>& z) {
  // `z` is parallel to ascending token ids, so the first maximum is the lowest id.
  return static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin());
}

// Probabilities and log-probabilities of softmax(z / T).
void softmax(const std::vector<double>& z, double temperature, std::vector<double>& prob,
             std::vector<double>& logp) {
  const std::size_t n = z.size();
  prob.assign(n, 0.0);
  logp.assign(n, kNegInf);
  if (n == 0) return;
  if (temperature == 0.0) {
    const auto k = argmax_lowest(z);
    prob[k] = 1.0;
    logp[k] = 0.0;
    return;
  }
  const double zmax = *std::max_element(z.begin(), z.end());
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) sum += std::exp((z[i] - zmax) / temperature);
  const double log_sum = std::log(sum);
  for (std::size_t i = 0; i < n; ++i) {
    logp[i] = (z[i] - zmax) / temperature - log_sum;
    prob[i] = std::exp(logp[i]);
  }
}

std::size_t index_in(std::span<const int> allowed, int token) {
  auto it = std::lower_bound(allowed.begin(), allowed.end(), token);
  if (it == allowed.end() || *it != token) return allowed.size();
  return static_cast<std::size_t>(it - allowed.begin());
}

// Incrementally maintained context: narrative bag is fixed, prefix bag is
// recomputed from the trailing window.
class ContextBuilder {
 public:
  ContextBuilder(const TokenLayout& layout, std::span<const int> narrative) : layout_(layout) {
    std::map<int, double> bag;
    for (int t : narrative) {
      if (t < 0 || static_cast<std::size_t>(t) >= layout.vocab_size) {
        throw ContractError("narrative token outside the vocabulary");
      }
      bag[t] += 1.0;
    }
    narrative_.assign(bag.begin(), bag.end());
  }

  SparseFeatures build(std::span<const int> generated, Phase phase) const {
    SparseFeatures f;
    f.dim = layout_.context_dim();
    f.entries = narrative_;
    const std::size_t k = std::min(layout_.recent_window, generated.size());
    std::map<int, double> recent;
    for (std::size_t i = generated.size() - k; i < generated.size(); ++i) recent[generated[i]] += 1.0;
    const int offset = static_cast<int>(layout_.vocab_size);
    for (const auto& [t, c] : recent) f.entries.emplace_back(offset + t, c);
    f.entries.emplace_back(2 * offset + static_cast<int>(phase), 1.0);
    return f;
  }

 private:
  const TokenLayout& layout_;
  std::vector<std::pair<int, double>> narrative_;
};

void check_trajectory_tokens(const TokenLayout& layout, const Trajectory& traj) {
  if (traj.tokens.empty() || traj.explanation_end + 1 != traj.tokens.size() ||
      traj.reasoning_end > traj.explanation_end) {
    throw ContractError("trajectory segment bounds are inconsistent");
  }
  for (int t : traj.tokens) {
    if (t < 0 || static_cast<std::size_t>(t) >= layout.vocab_size) {
      throw ContractError("trajectory token outside the vocabulary");
    }
  }
}

}  // namespace

// ---------------------------------------------------------------------------

PolicyParams PolicyParams::zeros(std::size_t vocab, std::size_t context_dim, std::size_t rank) {
  if (vocab == 0 || context_dim == 0 || rank == 0) throw ContractError("policy dimensions must be positive");
  PolicyParams p;
  p.base = Matrix(vocab, context_dim);
  p.acc = {Matrix(vocab, rank), Matrix(rank, context_dim)};
  p.tone = {Matrix(vocab, rank), Matrix(rank, context_dim)};
  return p;
}

PolicyParams PolicyParams::random(std::size_t vocab, std::size_t context_dim, std::size_t rank,
                                  double scale, std::uint64_t seed) {
  auto p = zeros(vocab, context_dim, rank);
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, scale);
  for (double& w : p.base.data) w = normal(rng);
  return p;
}

Matrix PolicyParams::effective_weights() const {
  Matrix w = base;
  auto add = [&](const LowRankDelta& d) {
    for (std::size_t i = 0; i < w.rows; ++i) {
      for (std::size_t r = 0; r < d.a.cols; ++r) {
        const double a = d.a(i, r);
        if (a == 0.0) continue;
        for (std::size_t c = 0; c < w.cols; ++c) w(i, c) += a * d.b(r, c);
      }
    }
  };
  if (active.acc) add(acc);
  if (active.tone) add(tone);
  return w;
}

void attach_adapter(PolicyParams& params, Adapter which, double init_scale, std::uint64_t seed) {
  auto& d = params.delta(which);
  Rng rng(seed);
  std::normal_distribution<double> normal(0.0, init_scale);
  d.a.fill(0.0);
  for (double& v : d.b.data) v = normal(rng);
}

bool bit_identical(const Matrix& a, const Matrix& b) {
  return a.rows == b.rows && a.cols == b.cols &&
         std::memcmp(a.data.data(), b.data.data(), a.data.size() * sizeof(double)) == 0;
}

std::vector<double> SparseFeatures::dense() const {
  std::vector<double> out(dim, 0.0);
  for (const auto& [i, v] : entries) out[static_cast<std::size_t>(i)] += v;
  return out;
}

SparseFeatures context_features(const TokenLayout& layout, std::span<const int> narrative,
                                std::span<const int> generated, Phase phase) {
  return ContextBuilder(layout, narrative).build(generated, phase);
}

std::vector<double> logits(const PolicyParams& params, const SparseFeatures& ctx,
                           std::span<const int> tokens) {
  if (tokens.empty()) {
    std::vector<int> all(params.vocab_size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
    return forward(params, ctx, all).logits;
  }
  return forward(params, ctx, tokens).logits;
}

std::vector<double> next_token_dist(const PolicyParams& params, const SparseFeatures& ctx,
                                    double temperature) {
  std::vector<int> all(params.vocab_size());
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = static_cast<int>(i);
  return next_token_dist(params, ctx, temperature, all);
}

std::vector<double> next_token_dist(const PolicyParams& params, const SparseFeatures& ctx,
                                    double temperature, std::span<const int> allowed) {
  check_temperature(temperature);
  std::vector<double> prob, logp;
  softmax(forward(params, ctx, allowed).logits, temperature, prob, logp);
  return prob;
}

// ---------------------------------------------------------------------------

double Trajectory::logprob() const {
  double s = 0.0;
  for (double v : token_logprobs) s += v;
  return s;
}

std::vector<int> explanation_body(const TokenLayout& layout, const Trajectory& traj) {
  auto e = traj.explanation();
  std::vector<int> out(e.begin(), e.end());
  if (!out.empty() && out.back() == layout.end_explain) out.pop_back();
  return out;
}

void validate(const TokenLayout& layout, const Trajectory& traj, const GenerationCaps& caps) {
  check_trajectory_tokens(layout, traj);
  if (traj.tokens.size() > caps.total() || caps.total() > kGenerationCap) {
    throw ContractError("trajectory exceeds the generation cap");
  }
  if (traj.reasoning_end > caps.reasoning ||
      traj.explanation_end - traj.reasoning_end > caps.explanation) {
    throw ContractError("trajectory segment exceeds its cap");
  }
  for (std::size_t i = 0; i < traj.tokens.size(); ++i) {
    const auto phase = traj.phase_at(i);
    const auto& allowed = layout.allowed_in(phase);
    if (index_in(allowed, traj.tokens[i]) == allowed.size()) {
      throw ContractError("trajectory token not allowed in its phase");
    }
    const bool last_of_segment =
        (phase == Phase::Reasoning && i + 1 == traj.reasoning_end) ||
        (phase == Phase::Explanation && i + 1 == traj.explanation_end);
    const int end = phase == Phase::Reasoning ? layout.end_reason : layout.end_explain;
    if (phase != Phase::Prediction && traj.tokens[i] == end && !last_of_segment) {
      throw ContractError("segment-end token in the middle of a segment");
    }
  }
  if (traj.reasoning_end < caps.reasoning &&
      (traj.reasoning_end == 0 || traj.tokens[traj.reasoning_end - 1] != layout.end_reason)) {
    throw ContractError("reasoning segment ended without its end token");
  }
  const auto expl_len = traj.explanation_end - traj.reasoning_end;
  if (expl_len < caps.explanation &&
      (expl_len == 0 || traj.tokens[traj.explanation_end - 1] != layout.end_explain)) {
    throw ContractError("explanation segment ended without its end token");
  }
  const int pred = traj.prediction_token();
  if (pred != layout.approve && pred != layout.deny) {
    throw ContractError("prediction must be APPROVE or DENY");
  }
  if (traj.prediction != (pred == layout.approve ? 1 : 0)) {
    throw ContractError("prediction flag disagrees with the prediction token");
  }
}

Trajectory sample_trajectory(const PolicyParams& params, const TokenLayout& layout,
                             std::span<const int> narrative, double temperature,
                             const GenerationCaps& caps, std::uint64_t seed) {
  check_temperature(temperature);
  if (caps.reasoning == 0 || caps.explanation == 0) throw ContractError("generation caps must be positive");
  if (caps.total() > kGenerationCap) throw ContractError("generation caps exceed the total cap");

  Rng rng(seed);
  ContextBuilder builder(layout, narrative);
  Trajectory traj;
  traj.tokens.reserve(caps.total());
  traj.token_logprobs.reserve(caps.total());
  std::vector<double> prob, logp;

  auto emit = [&](Phase phase) {
    const auto& allowed = layout.allowed_in(phase);
    const auto ctx = builder.build(traj.tokens, phase);
    softmax(forward(params, ctx, allowed).logits, temperature, prob, logp);
    std::size_t k = 0;
    if (temperature == 0.0) {
      k = argmax_lowest(prob);
    } else {
      const double u = uniform01(rng);
      double acc = 0.0;
      k = allowed.size() - 1;
      for (std::size_t i = 0; i < allowed.size(); ++i) {
        acc += prob[i];
        if (u < acc) {
          k = i;
          break;
        }
      }
      // Guard against landing on a zero-mass tail token through rounding.
      while (prob[k] == 0.0 && k > 0) --k;
    }
    traj.tokens.push_back(allowed[k]);
    traj.token_logprobs.push_back(logp[k]);
    return allowed[k];
  };

  for (std::size_t n = 0; n < caps.reasoning; ++n) {
    if (emit(Phase::Reasoning) == layout.end_reason) break;
  }
  traj.reasoning_end = traj.tokens.size();
  for (std::size_t n = 0; n < caps.explanation; ++n) {
    if (emit(Phase::Explanation) == layout.end_explain) break;
  }
  traj.explanation_end = traj.tokens.size();
  traj.prediction = emit(Phase::Prediction) == layout.approve ? 1 : 0;
  return traj;
}

std::vector<double> token_logprobs(const PolicyParams& params, const TokenLayout& layout,
                                   std::span<const int> narrative, const Trajectory& traj,
                                   double temperature) {
  check_temperature(temperature);
  check_trajectory_tokens(layout, traj);
  ContextBuilder builder(layout, narrative);
  std::vector<double> out(traj.tokens.size(), kNegInf);
  std::vector<double> prob, logp;
  for (std::size_t i = 0; i < traj.tokens.size(); ++i) {
    const auto phase = traj.phase_at(i);
    const auto& allowed = layout.allowed_in(phase);
    const auto k = index_in(allowed, traj.tokens[i]);
    if (k == allowed.size()) continue;  // outside the phase: zero probability
    const auto ctx = builder.build(std::span<const int>(traj.tokens.data(), i), phase);
    softmax(forward(params, ctx, allowed).logits, temperature, prob, logp);
    out[i] = logp[k];
  }
  return out;
}

SegmentLogprob segment_logprobs(const PolicyParams& params, const TokenLayout& layout,
                                std::span<const int> narrative, const Trajectory& traj,
                                double temperature) {
  const auto lp = token_logprobs(params, layout, narrative, traj, temperature);
  SegmentLogprob s;
  for (std::size_t i = 0; i < lp.size(); ++i) {
    s.segment[static_cast<int>(traj.phase_at(i))] += lp[i];
    s.total += lp[i];
    if (lp[i] == kNegInf) s.zero_probability = true;
  }
  return s;
}

double trajectory_logprob(const PolicyParams& params, const TokenLayout& layout,
                          std::span<const int> narrative, const Trajectory& traj,
                          double temperature) {
  return segment_logprobs(params, layout, narrative, traj, temperature).total;
}

// ---------------------------------------------------------------------------
// Gradients

PolicyGrad PolicyGrad::zeros_like(const PolicyParams& p) {
  PolicyGrad g;
  if (p.trainable.base) g.base = Matrix(p.base.rows, p.base.cols);
  if (p.trainable.acc) g.acc = {Matrix(p.acc.a.rows, p.acc.a.cols), Matrix(p.acc.b.rows, p.acc.b.cols)};
  if (p.trainable.tone) g.tone = {Matrix(p.tone.a.rows, p.tone.a.cols), Matrix(p.tone.b.rows, p.tone.b.cols)};
  return g;
}

namespace {

void axpy(Matrix& y, const Matrix& x, double a) {
  if (x.empty()) return;
  if (y.empty()) y = Matrix(x.rows, x.cols);
  for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] += a * x.data[i];
}

}  // namespace

void PolicyGrad::add_scaled(const PolicyGrad& other, double s) {
  axpy(base, other.base, s);
  axpy(acc.a, other.acc.a, s);
  axpy(acc.b, other.acc.b, s);
  axpy(tone.a, other.tone.a, s);
  axpy(tone.b, other.tone.b, s);
}

void PolicyGrad::scale(double factor) {
  for (Matrix* m : {&base, &acc.a, &acc.b, &tone.a, &tone.b}) {
    for (double& v : m->data) v *= factor;
  }
}

std::vector<double> PolicyGrad::flatten() const {
  std::vector<double> out;
  for (const Matrix* m : {&base, &acc.a, &acc.b, &tone.a, &tone.b}) {
    out.insert(out.end(), m->data.begin(), m->data.end());
  }
  return out;
}

double accumulate_logprob_grad(const PolicyParams& params, const TokenLayout& layout,
                               std::span<const int> narrative, const Trajectory& traj,
                               double temperature, std::span<const double> weights,
                               PolicyGrad& out) {
  if (!(temperature > 0.0)) throw ContractError("gradients require a positive temperature");
  if (weights.size() != traj.tokens.size()) throw ContractError("one weight per trajectory token required");
  check_trajectory_tokens(layout, traj);
  const bool g_base = out.has_base();
  const bool g_acc = out.has_acc() && params.active.acc;
  const bool g_tone = out.has_tone() && params.active.tone;

  ContextBuilder builder(layout, narrative);
  std::vector<double> prob, logp, g;
  const std::size_t rank = params.rank();
  std::vector<double> u_acc(rank), u_tone(rank);
  double total = 0.0;
  for (std::size_t i = 0; i < traj.tokens.size(); ++i) {
    const double w = weights[i];
    if (w == 0.0) continue;
    const auto phase = traj.phase_at(i);
    const auto& allowed = layout.allowed_in(phase);
    const auto k = index_in(allowed, traj.tokens[i]);
    if (k == allowed.size()) throw ContractError("token not allowed in its phase");
    const auto ctx = builder.build(std::span<const int>(traj.tokens.data(), i), phase);
    const auto fwd = forward(params, ctx, allowed);
    softmax(fwd.logits, temperature, prob, logp);
    total += w * logp[k];

    // d log p_k / d z_j = (delta_jk - p_j) / T
    g.assign(allowed.size(), 0.0);
    for (std::size_t j = 0; j < allowed.size(); ++j) {
      g[j] = w * ((j == k ? 1.0 : 0.0) - prob[j]) / temperature;
    }

    if (g_base) {
      for (std::size_t j = 0; j < allowed.size(); ++j) {
        auto row = out.base.row(static_cast<std::size_t>(allowed[j]));
        for (const auto& [c, v] : ctx.entries) row[static_cast<std::size_t>(c)] += g[j] * v;
      }
    }
    auto adapter = [&](const LowRankDelta& d, const std::vector<double>& h, LowRankDelta& gd,
                       std::vector<double>& u) {
      std::fill(u.begin(), u.end(), 0.0);
      for (std::size_t j = 0; j < allowed.size(); ++j) {
        const auto t = static_cast<std::size_t>(allowed[j]);
        auto ga = gd.a.row(t);
        const auto a = d.a.row(t);
        for (std::size_t r = 0; r < rank; ++r) {
          ga[r] += g[j] * h[r];
          u[r] += g[j] * a[r];
        }
      }
      for (std::size_t r = 0; r < rank; ++r) {
        if (u[r] == 0.0) continue;
        auto gb = gd.b.row(r);
        for (const auto& [c, v] : ctx.entries) gb[static_cast<std::size_t>(c)] += u[r] * v;
      }
    };
    if (g_acc) adapter(params.acc, fwd.h_acc, out.acc, u_acc);
    if (g_tone) adapter(params.tone, fwd.h_tone, out.tone, u_tone);
  }
  return total;
}

PolicyGrad grad_logprob(const PolicyParams& params, const TokenLayout& layout,
                        std::span<const int> narrative, const Trajectory& traj,
                        double temperature) {
  auto g = PolicyGrad::zeros_like(params);
  if (g.empty()) return g;
  std::vector<double> ones(traj.tokens.size(), 1.0);
  accumulate_logprob_grad(params, layout, narrative, traj, temperature, ones, g);
  return g;
}

void apply_update(PolicyParams& params, const PolicyGrad& grad, double step) {
  if ((grad.has_base() && !params.trainable.base) || (grad.has_acc() && !params.trainable.acc) ||
      (grad.has_tone() && !params.trainable.tone)) {
    throw ContractError("gradient carries entries for a frozen tensor");
  }
  if (step == 0.0) return;
  auto update = [step](Matrix& p, const Matrix& g) {
    if (g.empty()) return;
    if (g.rows != p.rows || g.cols != p.cols) throw ContractError("gradient shape mismatch");
    for (std::size_t i = 0; i < p.data.size(); ++i) p.data[i] += step * g.data[i];
  };
  update(params.base, grad.base);
  update(params.acc.a, grad.acc.a);
  update(params.acc.b, grad.acc.b);
  update(params.tone.a, grad.tone.a);
  update(params.tone.b, grad.tone.b);
}

std::vector<double*> trainable_coordinates(PolicyParams& params) {
  std::vector<double*> out;
  auto push = [&](Matrix& m) {
    for (double& v : m.data) out.push_back(&v);
  };
  if (params.trainable.base) push(params.base);
  if (params.trainable.acc) {
    push(params.acc.a);
    push(params.acc.b);
  }
  if (params.trainable.tone) {
    push(params.tone.a);
    push(params.tone.b);
  }
  return out;
}

}  // namespace lexma::policy
