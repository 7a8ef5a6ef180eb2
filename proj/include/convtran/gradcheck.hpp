// SPDX-License-Identifier: Apache-2.0
// Copyright (c) 2026 The convtran authors

#pragma once

// Finite-difference verification of every differentiable op and of the
// composed transformer, backbone and full model.
//
// Error per parameter group: max|a - n| / max(max|n|, 1e-3), a = analytic,
// n = numeric. Double mode compares double analytic gradients with central
// differences (five-point stencil, adaptive step from 1e-4). Single mode
// compares float analytic gradients with double-precision differences on the
// same problem (all values are float-representable, so both problems are
// identical).

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

#include "convtran/model.hpp"

namespace convtran {

enum class Precision { double_precision, single_precision };

inline std::string to_string(Precision p) { return p == Precision::double_precision ? "double" : "single"; }

inline Precision parse_precision(const std::string& s) {
  if (s == "double") return Precision::double_precision;
  if (s == "single" || s == "float") return Precision::single_precision;
  throw ConfigError("unknown precision '" + s + "' (expected double or single)");
}

inline double default_tolerance(Precision p) { return p == Precision::double_precision ? 1e-6 : 1e-3; }

/// Scalar loss over a set of named leaf tensors.
template <typename T>
struct GradProblem {
  NamedTensors<T> inputs;
  std::function<Tensor<T>()> loss;
};

struct GradcheckCase {
  std::string name;
  std::string scope;  // ops | transformer | backbone | full
  std::function<GradProblem<double>()> make_double;
  std::function<GradProblem<float>()> make_float;
};

/// Wrap a generic builder `b(T{})` returning GradProblem<T> as a case.
template <typename Builder>
GradcheckCase make_gradcheck_case(std::string name, std::string scope, Builder b) {
  return {std::move(name), std::move(scope), [b] { return b(double{}); }, [b] { return b(float{}); }};
}

struct GradGroupResult {
  std::string case_name;
  std::string group;
  std::size_t checked = 0;
  double error = 0.0;
  bool passed = false;
};

struct GradcheckReport {
  std::string scope;
  Precision precision = Precision::double_precision;
  double tolerance = 1e-6;
  double seconds = 0.0;
  std::vector<GradGroupResult> groups;

  bool passed() const {
    return !groups.empty() && std::all_of(groups.begin(), groups.end(), [](const auto& g) { return g.passed; });
  }

  double max_error() const {
    double m = 0.0;
    for (const auto& g : groups) m = std::max(m, g.error);
    return m;
  }

  std::vector<std::string> failed_cases() const {
    std::vector<std::string> out;
    for (const auto& g : groups)
      if (!g.passed && std::find(out.begin(), out.end(), g.case_name) == out.end()) out.push_back(g.case_name);
    return out;
  }

  /// One line per group plus a summary; no timing so output is reproducible.
  std::string text() const {
    std::ostringstream os;
    os << "# gradcheck scope=" << scope << " precision=" << to_string(precision) << " tolerance=" << tolerance << "\n";
    char buf[64];
    for (const auto& g : groups) {
      std::snprintf(buf, sizeof(buf), "%.3e", g.error);
      os << (g.passed ? "PASS " : "FAIL ") << g.case_name << " " << g.group << " n=" << g.checked
         << " max_rel_error=" << buf << "\n";
    }
    std::snprintf(buf, sizeof(buf), "%.3e", max_error());
    os << (passed() ? "PASS" : "FAIL") << " overall groups=" << groups.size() << " max_rel_error=" << buf << "\n";
    return os.str();
  }
};

namespace detail {

template <typename T>
double eval_loss(const GradProblem<T>& p) {
  NoGradGuard guard;
  return static_cast<double>(p.loss().item());
}

template <typename T>
std::vector<std::vector<double>> analytic_grads(GradProblem<T>& p) {
  for (auto& [name, t] : p.inputs) t.clear_grad();
  auto loss = p.loss();
  loss.backward();
  std::vector<std::vector<double>> out;
  for (auto& [name, t] : p.inputs) {
    std::vector<double> g(t.numel(), 0.0);
    if (t.has_grad())
      for (std::size_t i = 0; i < g.size(); ++i) g[i] = static_cast<double>(t.grad()[i]);
    out.push_back(std::move(g));
  }
  return out;
}

/// Five-point derivative estimate. When the estimates at h and h/2 disagree
/// a kink lies inside the stencil, so the step shrinks tenfold (down to 1e-7).
inline std::vector<std::vector<double>> numeric_grads(GradProblem<double>& p, double h0) {
  std::vector<std::vector<double>> out;
  for (auto& [name, t] : p.inputs) {
    std::vector<double> g(t.numel());
    auto d = t.data();
    for (std::size_t i = 0; i < d.size(); ++i) {
      const double saved = d[i];
      auto f = [&](double step) {
        d[i] = saved + step;
        return eval_loss(p);
      };
      auto stencil = [&](double h) { return (-f(2 * h) + 8.0 * f(h) - 8.0 * f(-h) + f(-2 * h)) / (12.0 * h); };
      double h = h0;
      double wide = stencil(h), narrow = stencil(h / 2);
      while (h > 1e-7 && std::abs(wide - narrow) > 1e-8 * std::max(1.0, std::abs(narrow))) {
        h /= 10;
        wide = stencil(h);
        narrow = stencil(h / 2);
      }
      d[i] = saved;
      g[i] = narrow;
    }
    out.push_back(std::move(g));
  }
  return out;
}

inline double relative_error(const std::vector<double>& a, const std::vector<double>& n) {
  double diff = 0.0, scale = 1e-3;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff = std::max(diff, std::abs(a[i] - n[i]));
    scale = std::max(scale, std::abs(n[i]));
  }
  if (!std::isfinite(diff)) return std::numeric_limits<double>::infinity();
  return diff / scale;
}

/// Values drawn in double and rounded through float.
template <typename T>
Tensor<T> random_leaf(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0, bool requires_grad = true) {
  std::vector<T> v(shape_numel(shape));
  for (auto& x : v) x = static_cast<T>(static_cast<float>(rng.uniform(lo, hi)));
  return Tensor<T>(std::move(shape), std::move(v), requires_grad);
}

/// Magnitudes in [0.1, 1] with random sign, away from the ReLU kink.
template <typename T>
Tensor<T> random_away_from_zero(Shape shape, Rng& rng) {
  std::vector<T> v(shape_numel(shape));
  for (auto& x : v) {
    const double m = rng.uniform(0.1, 1.0);
    x = static_cast<T>(static_cast<float>(rng.uniform() < 0.5 ? -m : m));
  }
  return Tensor<T>(std::move(shape), std::move(v), true);
}

/// sum(out * R) with a fixed random R, reducing any op to a scalar.
template <typename T>
Tensor<T> weighted_sum(const Tensor<T>& out, const Tensor<T>& r) {
  return sum(mul(out, r));
}

template <typename T, typename Fn>
GradProblem<T> projected(NamedTensors<T> inputs, Shape out_shape, Rng& rng, Fn fn) {
  auto r = random_leaf<T>(std::move(out_shape), rng, -1.0, 1.0, false);
  return {std::move(inputs), [fn, r]() { return weighted_sum(fn(), r); }};
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Registry

inline BackboneConfig gradcheck_backbone_config() {
  BackboneConfig c;
  c.image_size = 8;
  c.stage_widths = {4, 8};
  c.blocks_per_stage = 1;
  c.strides = {2, 2};
  c.norm_mode = NormMode::ibn;
  return c;
}

/// Toy ConvTran: 8x8 input, two residual blocks, P = 2 (5 tokens), C = 8,
/// h = 2, L = 2, MLP width 16, ibn.
inline ModelConfig gradcheck_model_config() {
  TransformerConfig t;
  t.layers = 2;
  t.heads = 2;
  t.mlp_dim = 16;
  return ModelConfig::of_kind(ModelKind::convtran, gradcheck_backbone_config(), t, 4);
}

inline std::vector<GradcheckCase> gradcheck_cases() {
  using detail::projected;
  using detail::random_leaf;
  std::vector<GradcheckCase> cs;

#define CONVTRAN_T using T = decltype(tag)

  // Element-wise and reductions.
  cs.push_back(make_gradcheck_case("add", "ops", [](auto tag) {
    CONVTRAN_T;
    Rng rng(11);
    auto a = random_leaf<T>({3, 4}, rng), b = random_leaf<T>({3, 4}, rng);
    return projected<T>({{"a", a}, {"b", b}}, {3, 4}, rng, [a, b] { return add(a, b); });
  }));
  cs.push_back(make_gradcheck_case("sub", "ops", [](auto tag) {
    CONVTRAN_T;
    Rng rng(12);
    auto a = random_leaf<T>({3, 4}, rng), b = random_leaf<T>({3, 4}, rng);
    return projected<T>({{"a", a}, {"b", b}}, {3, 4}, rng, [a, b] { return sub(a, b); });
  }));
  cs.push_back(make_gradcheck_case("mul", "ops", [](auto tag) {
    CONVTRAN_T;
    Rng rng(13);
    auto a = random_leaf<T>({3, 4}, rng), b = random_leaf<T>({3, 4}, rng);
    return projected<T>({{"a", a}, {"b", b}}, {3, 4}, rng, [a, b] { return mul(a, b); });
  }));
  cs.push_back(make_gradcheck_case("scale", "ops", [](auto tag) {
    CONVTRAN_T;
    Rng rng(14);
    auto a = random_leaf<T>({2, 5}, rng);
    return projected<T>({{"a", a}}, {2, 5}, rng, [a] { return scale(a, T(-0.75)); });
  }));
  cs.push_back(make_gradcheck_case("add_bias", "ops", [](auto tag) {
    CONVTRAN_T;
    Rng rng(15);
    auto x = random_leaf<T>({3, 4}, rng), b = random_leaf<T>({4}, rng);
    return projected<T>({{"x", x}, {"b", b}}, {3, 4}, rng, [x, b] { return add_bias(x, b); });
  }));
  cs.push_back(make_gradcheck_case("relu", "ops", [](auto tag) {
    CONVTRAN_T;
    Rng rng(16);
    auto x = detail::random_away_from_zero<T>({4, 5}, rng);
    return projected<T>({{"x", x}}, {4, 5}, rng, [x] { return relu(x); });
  }));
  cs.push_back(make_gradcheck_case("sum", "ops", [](auto tag) {
    CONVTRAN_T;
    Rng rng(17);
    auto x = random_leaf<T>({3, 3}, rng);
    return GradProblem<T>{{{"x", x}}, [x] { return sum(x); }};
  }));
  cs.push_back(make_gradcheck_case("mean", "ops", [](auto tag) {
    CONVTRAN_T;
    Rng rng(18);
    auto x = random_leaf<T>({3, 3}, rng);
    return GradProblem<T>{{{"x", x}}, [x] { return mean(x); }};
  }));

  // Matrix ops.
  cs.push_back(make_gradcheck_case("matmul", "ops", [](auto tag) {
    CONVTRAN_T;
    Rng rng(21);
    auto a = random_leaf<T>({3, 4}, rng), b = random_leaf<T>({4, 5}, rng);
    return projected<T>({{"a", a}, {"b", b}}, {3, 5}, rng, [a, b] { return matmul(a, b); });
  }));
  cs.push_back(make_gradcheck_case("transpose", "ops", [](auto tag) {
    CONVTRAN_T;
    Rng rng(22);
    auto a = random_leaf<T>({3, 4}, rng);
    return projected<T>({{"a", a}}, {4, 3}, rng, [a] { return transpose(a); });
  }));
  cs.push_back(make_gradcheck_case("softmax_rows", "ops", [](auto tag) {
    CONVTRAN_T;
    Rng rng(23);
    auto a = random_leaf<T>({3, 5}, rng, -2.0, 2.0);
    return projected<T>({{"x", a}}, {3, 5}, rng, [a] { return softmax_rows(a); });
  }));
  cs.push_back(make_gradcheck_case("reshape", "ops", [](auto tag) {
    CONVTRAN_T;
    Rng rng(24);
    auto a = random_leaf<T>({2, 6}, rng);
    return projected<T>({{"x", a}}, {3, 4}, rng, [a] { return scale(a, T(1)).reshape({3, 4}); });
  }));

  // Normalization.
  cs.push_back(make_gradcheck_case("layer_norm", "ops", [](auto tag) {
    CONVTRAN_T;
    Rng rng(31);
    auto x = random_leaf<T>({3, 6}, rng, -2.0, 2.0);
    auto g = random_leaf<T>({6}, rng, 0.5, 1.5), b = random_leaf<T>({6}, rng);
    return projected<T>({{"x", x}, {"gamma", g}, {"beta", b}}, {3, 6}, rng, [x, g, b] { return layer_norm(x, g, b); });
  }));
  cs.push_back(make_gradcheck_case("instance_norm", "ops", [](auto tag) {
    CONVTRAN_T;
    Rng rng(32);
    auto x = random_leaf<T>({2, 3, 3, 3}, rng, -2.0, 2.0);
    return projected<T>({{"x", x}}, {2, 3, 3, 3}, rng, [x] { return instance_norm(x); });
  }));
  cs.push_back(make_gradcheck_case("channel_affine", "ops", [](auto tag) {
    CONVTRAN_T;
    Rng rng(33);
    auto x = random_leaf<T>({2, 3, 2, 2}, rng);
    auto g = random_leaf<T>({3}, rng), b = random_leaf<T>({3}, rng);
    return projected<T>({{"x", x}, {"gamma", g}, {"beta", b}}, {2, 3, 2, 2}, rng,
                        [x, g, b] { return channel_affine(x, g, b); });
  }));
  cs.push_back(make_gradcheck_case("batch_norm", "ops", [](auto tag) {
    CONVTRAN_T;
    Rng rng(34);
    auto x = random_leaf<T>({3, 2, 2, 2}, rng, -2.0, 2.0);
    auto state = std::make_shared<BatchNormState<T>>(2);
    return projected<T>({{"x", x}}, {3, 2, 2, 2}, rng, [x, state] { return batch_norm(x, *state, Mode::train); });
  }));

  // Convolution and loss.
  cs.push_back(make_gradcheck_case("conv2d", "ops", [](auto tag) {
    CONVTRAN_T;
    Rng rng(41);
    auto x = random_leaf<T>({2, 2, 5, 5}, rng);
    auto w = random_leaf<T>({3, 2, 3, 3}, rng), b = random_leaf<T>({3}, rng);
    return projected<T>({{"x", x}, {"weight", w}, {"bias", b}}, {2, 3, 5, 5}, rng,
                        [x, w, b] { return conv2d(x, w, b, 1, 1); });
  }));
  cs.push_back(make_gradcheck_case("conv2d_strided", "ops", [](auto tag) {
    CONVTRAN_T;
    Rng rng(42);
    auto x = random_leaf<T>({1, 2, 6, 6}, rng);
    auto w = random_leaf<T>({2, 2, 4, 4}, rng), b = random_leaf<T>({2}, rng);
    return projected<T>({{"x", x}, {"weight", w}, {"bias", b}}, {1, 2, 3, 3}, rng,
                        [x, w, b] { return conv2d(x, w, b, 2, 1); });
  }));
  cs.push_back(make_gradcheck_case("cross_entropy", "ops", [](auto tag) {
    CONVTRAN_T;
    Rng rng(43);
    auto z = random_leaf<T>({4, 3}, rng, -2.0, 2.0);
    return GradProblem<T>{{{"logits", z}}, [z] {
                            const std::vector<int> labels{0, 2, 1, 2};
                            return cross_entropy(z, std::span<const int>(labels));
                          }};
  }));

  // Shape ops.
  cs.push_back(make_gradcheck_case("concat_rows", "ops", [](auto tag) {
    CONVTRAN_T;
    Rng rng(51);
    auto a = random_leaf<T>({1, 3}, rng), b = random_leaf<T>({2, 3}, rng);
    return projected<T>({{"a", a}, {"b", b}}, {3, 3}, rng, [a, b] { return concat_rows<T>({a, b}); });
  }));
  cs.push_back(make_gradcheck_case("concat_cols", "ops", [](auto tag) {
    CONVTRAN_T;
    Rng rng(52);
    auto a = random_leaf<T>({2, 1}, rng), b = random_leaf<T>({2, 3}, rng);
    return projected<T>({{"a", a}, {"b", b}}, {2, 4}, rng, [a, b] { return concat_cols<T>({a, b}); });
  }));
  cs.push_back(make_gradcheck_case("slice_rows", "ops", [](auto tag) {
    CONVTRAN_T;
    Rng rng(53);
    auto a = random_leaf<T>({4, 3}, rng);
    return projected<T>({{"x", a}}, {2, 3}, rng, [a] { return slice_rows(a, 1, 3); });
  }));
  cs.push_back(make_gradcheck_case("take", "ops", [](auto tag) {
    CONVTRAN_T;
    Rng rng(54);
    auto a = random_leaf<T>({3, 2, 2}, rng);
    return projected<T>({{"x", a}}, {2, 2}, rng, [a] { return take(a, 1); });
  }));
  cs.push_back(make_gradcheck_case("nchw_to_nhwc", "ops", [](auto tag) {
    CONVTRAN_T;
    Rng rng(55);
    auto a = random_leaf<T>({2, 3, 2, 2}, rng);
    return projected<T>({{"x", a}}, {2, 2, 2, 3}, rng, [a] { return nchw_to_nhwc(a); });
  }));
  cs.push_back(make_gradcheck_case("grid_mean", "ops", [](auto tag) {
    CONVTRAN_T;
    Rng rng(56);
    auto a = random_leaf<T>({2, 2, 2, 3}, rng);
    return projected<T>({{"x", a}}, {2, 3}, rng, [a] { return grid_mean(a); });
  }));

  // Transformer pieces.
  cs.push_back(make_gradcheck_case("scaled_dot_attention", "transformer", [](auto tag) {
    CONVTRAN_T;
    Rng rng(61);
    auto q = random_leaf<T>({3, 4}, rng), k = random_leaf<T>({5, 4}, rng), v = random_leaf<T>({5, 2}, rng);
    return projected<T>({{"q", q}, {"k", k}, {"v", v}}, {3, 2}, rng,
                        [q, k, v] { return scaled_dot_attention<T>({q, k, v}).output; });
  }));
  cs.push_back(make_gradcheck_case("multi_head_self_attention", "transformer", [](auto tag) {
    CONVTRAN_T;
    Rng rng(62);
    auto x = random_leaf<T>({5, 8}, rng);
    auto p = std::make_shared<MultiHeadParams<T>>(8, 2, rng);
    NamedTensors<T> in{{"x", x}};
    p->collect("mha", in);
    return projected<T>(std::move(in), {5, 8}, rng, [x, p] { return multi_head_self_attention(x, *p); });
  }));
  cs.push_back(make_gradcheck_case("mlp_block", "transformer", [](auto tag) {
    CONVTRAN_T;
    Rng rng(63);
    auto x = random_leaf<T>({5, 8}, rng);
    auto p = std::make_shared<MlpParams<T>>(8, 16, rng);
    NamedTensors<T> in{{"x", x}};
    p->collect("mlp", in);
    return projected<T>(std::move(in), {5, 8}, rng, [x, p] { return mlp_block(x, *p); });
  }));
  cs.push_back(make_gradcheck_case("encoder_layer", "transformer", [](auto tag) {
    CONVTRAN_T;
    Rng rng(64);
    auto x = random_leaf<T>({5, 8}, rng);
    auto p = std::make_shared<EncoderLayerParams<T>>(8, 2, 16, rng);
    NamedTensors<T> in{{"x", x}};
    p->collect("layer", in);
    return projected<T>(std::move(in), {5, 8}, rng, [x, p] { return encoder_layer<T>({x, 0}, *p).x; });
  }));
  cs.push_back(make_gradcheck_case("transformer_encoder", "transformer", [](auto tag) {
    CONVTRAN_T;
    Rng rng(65);
    TransformerConfig cfg;
    cfg.mlp_dim = 16;
    auto tokens = random_leaf<T>({4, 8}, rng);
    auto enc = std::make_shared<TransformerEncoder<T>>(cfg, 4, 8, rng);
    NamedTensors<T> in{{"tokens", tokens}};
    enc->collect("encoder", in);
    return projected<T>(std::move(in), {1, 8}, rng,
                        [tokens, enc] { return class_token_output(enc->encode(tokens)); });
  }));

  // Backbone.
  cs.push_back(make_gradcheck_case("residual_block", "backbone", [](auto tag) {
    CONVTRAN_T;
    Rng rng(71);
    auto x = random_leaf<T>({2, 2, 4, 4}, rng);
    auto blk = std::make_shared<ResidualBlock<T>>(2, 3, 2, rng);
    NamedTensors<T> in{{"x", x}};
    blk->collect("block", in);
    return projected<T>(std::move(in), {2, 3, 2, 2}, rng, [x, blk] { return (*blk)(x, Mode::train); });
  }));
  for (auto mode : {NormMode::batch, NormMode::ibn}) {
    cs.push_back(make_gradcheck_case(std::string("backbone_") + (mode == NormMode::ibn ? "ibn" : "batch"), "backbone",
                                     [mode](auto tag) {
                                       CONVTRAN_T;
                                       Rng rng(72);
                                       auto cfg = gradcheck_backbone_config();
                                       cfg.norm_mode = mode;
                                       auto images = random_leaf<T>({2, 3, 8, 8}, rng);
                                       auto bb = std::make_shared<Backbone<T>>(cfg, rng);
                                       NamedTensors<T> in{{"images", images}};
                                       bb->collect("backbone", in);
                                       return projected<T>(std::move(in), {2, 2, 2, 8}, rng,
                                                           [images, bb] { return bb->forward(images, Mode::train); });
                                     }));
  }

  // Full model.
  cs.push_back(make_gradcheck_case("convtran_model", "full", [](auto tag) {
    CONVTRAN_T;
    Rng rng(81);
    auto images = random_leaf<T>({2, 3, 8, 8}, rng, 0.0, 1.0, false);
    auto model = std::make_shared<Model<T>>(gradcheck_model_config(), 82);
    return GradProblem<T>{model->parameters(), [images, model] {
                            const std::vector<int> labels{1, 3};
                            return cross_entropy(model->forward(images, Mode::train), std::span<const int>(labels));
                          }};
  }));

#undef CONVTRAN_T
  return cs;
}

inline std::vector<std::string> gradcheck_scopes() { return {"ops", "transformer", "backbone", "full", "all"}; }

/// Checks one case; appends one result per input group.
inline void run_gradcheck_case(const GradcheckCase& c, Precision precision, double tolerance,
                               std::vector<GradGroupResult>& out) {
  auto numeric_problem = c.make_double();
  std::vector<std::vector<double>> analytic;
  if (precision == Precision::double_precision) {
    auto p = c.make_double();
    analytic = detail::analytic_grads(p);
  } else {
    auto p = c.make_float();
    analytic = detail::analytic_grads(p);
  }
  const auto numeric = detail::numeric_grads(numeric_problem, 1e-4);
  for (std::size_t i = 0; i < numeric_problem.inputs.size(); ++i) {
    GradGroupResult r;
    r.case_name = c.name;
    r.group = numeric_problem.inputs[i].first;
    r.checked = numeric[i].size();
    r.error = detail::relative_error(analytic[i], numeric[i]);
    r.passed = r.error <= tolerance;
    out.push_back(std::move(r));
  }
}

/// Runs the registered cases of `scope` ("all" runs everything) plus
/// `extra` cases of any scope. Failures are report entries, never throws
/// for a bad gradient.
inline GradcheckReport gradcheck_suite(const std::string& scope, Precision precision,
                                       const std::vector<GradcheckCase>& extra = {}, double tolerance = -1.0) {
  const auto scopes = gradcheck_scopes();
  if (std::find(scopes.begin(), scopes.end(), scope) == scopes.end()) {
    throw ConfigError("unknown gradcheck scope '" + scope + "' (expected ops, transformer, backbone, full or all)");
  }
  GradcheckReport rep;
  rep.scope = scope;
  rep.precision = precision;
  rep.tolerance = tolerance > 0 ? tolerance : default_tolerance(precision);
  const auto start = std::chrono::steady_clock::now();
  auto cases = gradcheck_cases();
  for (const auto& c : cases)
    if (scope == "all" || c.scope == scope) run_gradcheck_case(c, precision, rep.tolerance, rep.groups);
  for (const auto& c : extra) run_gradcheck_case(c, precision, rep.tolerance, rep.groups);
  rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return rep;
}

}  // namespace convtran
