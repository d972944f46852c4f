#include "oracles.hpp"

#include <algorithm>
#include <cmath>

#include "apseg/dpat.hpp"
#include "apseg/layers.hpp"
#include "apseg/maskdec.hpp"
#include "apseg/mpg.hpp"
#include "apseg/ops.hpp"
#include "apseg/trainer.hpp"

namespace apseg::testing {

std::vector<double> random_values(Rng& rng, std::size_t n, double scale) {
  std::vector<double> v(n);
  for (auto& x : v) x = rng.normal(0.0, scale);
  return v;
}

Tensor<double> random_constant(Rng& rng, Shape shape, double scale) {
  const auto n = shape_numel(shape);
  return Tensor<double>::constant(std::move(shape), random_values(rng, n, scale));
}

Tensor<double> random_leaf(Rng& rng, Shape shape, double scale) {
  const auto n = shape_numel(shape);
  return Tensor<double>::leaf(std::move(shape), random_values(rng, n, scale));
}

std::vector<std::uint8_t> random_mask(Rng& rng, std::size_t n, double p) {
  std::vector<std::uint8_t> m(n);
  for (auto& v : m) v = rng.bernoulli(p) ? 1 : 0;
  return m;
}

MultiLevelFeatures<double> random_features(Rng& rng, std::size_t mid, std::size_t high,
                                           std::size_t h, std::size_t w) {
  MultiLevelFeatures<double> f;
  f.levels[0] = random_constant(rng, {mid, h, w});
  f.levels[1] = random_constant(rng, {mid, h, w});
  f.levels[2] = random_constant(rng, {high, h, w});
  return f;
}

namespace {

double cosine(const double* a, const double* b, std::size_t c) {
  double dot = 0, na = 0, nb = 0;
  for (std::size_t d = 0; d < c; ++d) dot += a[d] * b[d];
  for (std::size_t d = 0; d < c; ++d) na += a[d] * a[d];
  for (std::size_t d = 0; d < c; ++d) nb += b[d] * b[d];
  return dot / (std::sqrt(na) * std::sqrt(nb) + 1e-8);
}

}  // namespace

CcsReference ccs_reference(const std::vector<double>& support, const std::vector<double>& query,
                           std::size_t c, std::size_t hw, const std::vector<std::uint8_t>& region) {
  CcsReference out;
  std::vector<std::uint8_t> keep(hw, 0);
  for (std::size_t s = 0; s < hw; ++s) {
    if (!region[s]) continue;
    std::size_t best_q = 0;
    double best = -1e300;
    for (std::size_t q = 0; q < hw; ++q) {
      const double v = cosine(&support[s * c], &query[q * c], c);
      if (v > best) best = v, best_q = q;
    }
    std::size_t back = 0;
    best = -1e300;
    for (std::size_t s2 = 0; s2 < hw; ++s2) {
      const double v = cosine(&support[s2 * c], &query[best_q * c], c);
      if (v > best) best = v, back = s2;
    }
    if (region[back]) keep[best_q] = 1;
  }
  for (std::size_t q = 0; q < hw; ++q)
    if (keep[q]) out.kept.push_back(static_cast<std::uint32_t>(q));
  out.empty = out.kept.empty();
  out.prototype.assign(c, 0.0);
  if (!out.empty) {
    const double inv = 1.0 / static_cast<double>(out.kept.size());
    for (std::size_t d = 0; d < c; ++d) {
      double s = 0;
      for (auto q : out.kept) s += query[q * c + d];
      out.prototype[d] = s * inv;
    }
  }
  return out;
}

std::vector<double> locations_of(const Tensor<double>& map) {
  const std::size_t c = map.dim(0), hw = map.dim(1) * map.dim(2);
  std::vector<double> out(hw * c);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t p = 0; p < hw; ++p) out[p * c + ch] = map.at(ch * hw + p);
  return out;
}

double fd_relative_error(double analytic, double numeric) {
  return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), kFdFloor});
}

Tensor<double> project(const Tensor<double>& x, std::uint64_t seed) {
  Rng rng(mix_seed(seed, x.numel()));
  auto r = Tensor<double>::constant(x.shape(), random_values(rng, x.numel()));
  return sum(mul(x, r));
}

namespace {

double central_difference(double& slot, const std::function<double()>& eval) {
  const double keep = slot;
  slot = keep + kFdStep;
  const double up = eval();
  slot = keep - kFdStep;
  const double down = eval();
  slot = keep;
  return (up - down) / (2 * kFdStep);
}

}  // namespace

GradStats check_leaves(const std::string& name, const std::vector<Tensor<double>>& leaves,
                       const std::function<Tensor<double>()>& loss, std::size_t probes, Rng& rng) {
  for (auto leaf : leaves) leaf.zero_grad();
  backward(loss());
  std::vector<std::vector<double>> analytic;
  for (const auto& leaf : leaves) {
    if (leaf.has_grad())
      analytic.emplace_back(leaf.grad().begin(), leaf.grad().end());
    else
      analytic.emplace_back(leaf.numel(), 0.0);
  }
  GradStats stats{name};
  for (std::size_t p = 0; p < probes; ++p) {
    const std::size_t i = p % leaves.size();
    const std::size_t j = rng.integer(0, leaves[i].numel() - 1);
    const double num =
        central_difference(leaves[i].node()->value[j], [&] { return loss().item(); });
    stats.max_rel = std::max(stats.max_rel, fd_relative_error(analytic[i][j], num));
    ++stats.probes;
  }
  return stats;
}

GradStats check_parameters(const std::string& name, const std::vector<Parameter<double>*>& targets,
                           const std::function<Tensor<double>(Bindings<double>&)>& loss,
                           std::size_t probes, Rng& rng) {
  for (auto* t : targets) t->grad.clear();
  {
    Bindings<double> b(true);
    backward(loss(b));
    b.flush_gradients();
  }
  GradStats stats{name};
  const auto eval = [&] {
    Bindings<double> b(false);
    return loss(b).item();
  };
  for (std::size_t p = 0; p < probes; ++p) {
    auto* t = targets[p % targets.size()];
    const std::size_t j = rng.integer(0, t->numel() - 1);
    const double analytic = t->has_grad() ? t->grad[j] : 0.0;
    const double num = central_difference(t->value[j], eval);
    stats.max_rel = std::max(stats.max_rel, fd_relative_error(analytic, num));
    ++stats.probes;
  }
  return stats;
}

ModelConfig tiny_model_config(bool use_dpat, bool use_mpg) {
  ModelConfig m;
  m.use_dpat = use_dpat;
  m.use_mpg = use_mpg;
  m.mpg.mid_channels = 6;
  m.mpg.high_channels = 5;
  m.mpg.reduce_channels = 4;
  m.mpg.out_channels = 24;
  m.mpg.sparse_count = 2;
  m.mpg.pyramid = {2, 1};
  m.seed = 5;
  m.resolve();
  return m;
}

namespace {

std::vector<Parameter<double>*> all_of(ParameterSet<double>& ps) {
  std::vector<Parameter<double>*> out;
  for (std::size_t i = 0; i < ps.size(); ++i) out.push_back(&ps[i]);
  return out;
}

// Composed forward pass of a tiny model on random features; every
// parameter is probed at least once.
GradStats composed_case(const std::string& name, bool use_dpat, bool use_mpg, Rng& rng,
                        std::size_t probes) {
  ApsegModel<double> model(tiny_model_config(use_dpat, use_mpg));
  const std::size_t h = 4, w = 4;
  auto support = random_features(rng, 6, 5, h, w);
  auto query = random_features(rng, 6, 5, h, w);
  std::vector<std::uint8_t> mask(h * w, 0);
  for (std::size_t y = 1; y < 3; ++y)
    for (std::size_t x = 0; x < 3; ++x) mask[y * w + x] = 1;
  EpisodeInput<double> input;
  input.support = {&support};
  input.support_masks = {mask};
  input.query = &query;
  ImageSample gt;
  gt.height = gt.width = 16;
  gt.mask.assign(256, 0);
  for (std::size_t y = 3; y < 12; ++y)
    for (std::size_t x = 2; x < 10; ++x) gt.mask[y * 16 + x] = 1;
  auto params = all_of(model.parameters());
  return check_parameters(
      name, params,
      [&](Bindings<double>& b) { return dice_loss(model.forward(b, input).logits, gt); },
      std::max(probes, params.size()), rng);
}

}  // namespace

std::vector<GradStats> run_gradient_suite(std::uint64_t seed, std::size_t probes) {
  Rng rng(seed);
  std::vector<GradStats> out;
  auto leaves = [&](const std::string& name, std::vector<Tensor<double>> xs,
                    std::function<Tensor<double>()> f) {
    out.push_back(check_leaves(name, xs, f, probes, rng));
  };

  {
    auto a = random_leaf(rng, {3, 4}), b = random_leaf(rng, {4, 2});
    leaves("matmul", {a, b}, [=] { return project(matmul(a, b)); });
  }
  {
    auto a = random_leaf(rng, {3, 4});
    leaves("transpose", {a}, [=] { return project(transpose(a)); });
    leaves("reshape", {a}, [=] { return project(reshape(a, {2, 6})); });
  }
  {
    auto a = random_leaf(rng, {2, 3}), b = random_leaf(rng, {2, 3});
    leaves("add", {a, b}, [=] { return project(add(a, b)); });
    leaves("sub", {a, b}, [=] { return project(sub(a, b)); });
    leaves("mul", {a, b}, [=] { return project(mul(a, b)); });
    leaves("scale", {a}, [=] { return project(scale(a, -1.7)); });
  }
  {
    auto a = random_leaf(rng, {3, 5});
    leaves("relu", {a}, [=] { return project(relu(a)); });
    leaves("sigmoid", {a}, [=] { return project(sigmoid(a)); });
    leaves("sine", {a}, [=] { return project(sine(a)); });
    leaves("sum", {a}, [=] { return scale(sum(a), 0.3); });
    leaves("mean", {a}, [=] { return mean(mul(a, a)); });
    leaves("softmax_rows", {a}, [=] { return project(softmax_rows(a)); });
    leaves("row_max", {a}, [=] { return project(row_max(a)); });
  }
  {
    auto x = random_leaf(rng, {4, 6}), g = random_leaf(rng, {6}), b = random_leaf(rng, {6});
    leaves("layer_norm_rows", {x, g, b}, [=] { return project(layer_norm_rows(x, g, b)); });
  }
  {
    auto x = random_leaf(rng, {3, 4}), w = random_leaf(rng, {4, 5}), b = random_leaf(rng, {5});
    leaves("linear", {x, w, b}, [=] { return project(linear(x, w, b)); });
  }
  {
    auto x = random_leaf(rng, {3, 2, 3}), w = random_leaf(rng, {4, 3}), b = random_leaf(rng, {4});
    leaves("conv1x1", {x, w, b}, [=] { return project(conv1x1(x, w, b)); });
  }
  {
    auto a = random_leaf(rng, {2, 2, 2}), b = random_leaf(rng, {3, 2, 2});
    leaves("concat", {a, b}, [=] { return project(concat<double>({a, b, a})); });
  }
  {
    auto x = random_leaf(rng, {5, 3});
    leaves("slice_rows", {x}, [=] { return project(slice_rows(x, 1, 3)); });
    const std::vector<std::uint32_t> idx{2, 0, 2, 4};
    leaves("gather_rows", {x}, [=] { return project(gather_rows(x, std::span<const std::uint32_t>(idx))); });
  }
  {
    auto x = random_leaf(rng, {3, 3, 3});
    const auto m = std::vector<std::uint8_t>{1, 0, 1, 1, 0, 0, 0, 1, 1};
    leaves("masked_average_pool", {x},
           [=] { return project(masked_average_pool(x, std::span<const std::uint8_t>(m))); });
    auto v = random_leaf(rng, {3});
    leaves("tile_spatial", {v}, [=] { return project(tile_spatial(v, 2, 4)); });
  }
  {
    auto x = random_leaf(rng, {2, 3, 4});
    leaves("bilinear_resize up", {x}, [=] { return project(bilinear_resize(x, 5, 7)); });
    auto y = random_leaf(rng, {2, 5, 6});
    leaves("bilinear_resize down", {y}, [=] { return project(bilinear_resize(y, 3, 2)); });
    auto z = random_leaf(rng, {2, 5, 7});
    leaves("adaptive_avg_pool", {z}, [=] { return project(adaptive_avg_pool(z, 3, 2)); });
  }
  {
    auto a = random_leaf(rng, {4, 3}), b = random_leaf(rng, {5, 3});
    leaves("cosine_matrix", {a, b}, [=] { return project(cosine_matrix(a, b)); });
    auto v = random_leaf(rng, {3}), m = random_leaf(rng, {3, 3, 2});
    leaves("cosine_map", {v, m}, [=] { return project(cosine_map(v, m)); });
    auto p = random_leaf(rng, {4, 2});
    leaves("normalize_columns", {p}, [=] { return project(normalize_columns(p)); });
    auto u = random_leaf(rng, {1, 3, 3});
    leaves("minmax_normalize", {u}, [=] { return project(minmax_normalize(u)); });
  }
  {
    auto x = random_leaf(rng, {1, 4, 4});
    Rng trng(mix_seed(seed, 3));
    std::vector<double> target(16);
    for (auto& t : target) t = trng.bernoulli(0.4) ? 1.0 : 0.0;
    leaves("soft_dice", {x},
           [=] { return soft_dice(sigmoid(x), std::span<const double>(target), 1.0); });
  }
  {
    // W depends on the anchors only; the prototypes are episode constants.
    dpat::PrototypeMatrix<double> fused{random_constant(rng, {5}), random_constant(rng, {5})};
    auto anchor = random_leaf(rng, {5, 2});
    auto f = random_leaf(rng, {5, 2, 3});
    leaves("anchor transform", {anchor, f}, [=] {
      return project(dpat::apply_transform(dpat::compute_w(fused, anchor).w, f));
    });
  }

  // Layers, through their parameters.
  {
    ParameterSet<double> ps;
    Rng init(mix_seed(seed, 11));
    Linear<double> lin(ps, "lin", 4, 3, init);
    Conv1x1<double> conv(ps, "conv", 3, 4, init);
    LayerNorm<double> ln(ps, "ln", 4);
    Mlp<double> mlp(ps, "mlp", 4, 6, 3, init);
    Attention<double> attn(ps, "attn", 4, 2, init);
    DecoderBlock<double> dec(ps, "dec", 4, 16, init);
    TwoWayBlock<double> two(ps, "two", 8, 4, 16, init);
    const auto x = random_constant(rng, {3, 4});
    const auto img = random_constant(rng, {3, 2, 2});
    const auto keys = random_constant(rng, {6, 4});
    const auto vals = random_constant(rng, {6, 4});
    const auto toks8 = random_constant(rng, {3, 8});
    const auto image8 = random_constant(rng, {6, 8});
    auto params_of = [&](const std::string& prefix) {
      std::vector<Parameter<double>*> sel;
      for (std::size_t i = 0; i < ps.size(); ++i)
        if (ps[i].name.rfind(prefix + ".", 0) == 0) sel.push_back(&ps[i]);
      return sel;
    };
    auto layer = [&](const std::string& prefix, std::function<Tensor<double>(Bindings<double>&)> f) {
      auto targets = params_of(prefix);
      out.push_back(check_parameters("layer " + prefix, targets, f, std::max(probes, targets.size()), rng));
    };
    layer("lin", [&](Bindings<double>& b) { return project(lin(b, x)); });
    layer("conv", [&](Bindings<double>& b) { return project(conv(b, img)); });
    layer("ln", [&](Bindings<double>& b) { return project(ln(b, keys)); });
    layer("mlp", [&](Bindings<double>& b) { return project(mlp(b, x)); });
    layer("attn", [&](Bindings<double>& b) { return project(attn(b, x, keys, vals)); });
    layer("dec", [&](Bindings<double>& b) { return project(dec(b, x, keys, vals)); });
    layer("two", [&](Bindings<double>& b) {
      auto [t, i] = two(b, toks8, image8);
      return add(project(t, 1), project(i, 2));
    });
  }

  // Prompt generator and decoder on their own.
  {
    ParameterSet<double> ps;
    Rng init(mix_seed(seed, 12));
    auto cfg = tiny_model_config().mpg;
    MetaPromptGenerator<double> mpg(ps, "mpg", cfg, init);
    DecoderConfig dcfg;
    dcfg.in_channels = 5;
    dcfg.width = 24;
    MaskDecoder<double> dec(ps, "decoder", dcfg, init);
    std::vector<std::array<Tensor<double>, 3>> support(1);
    std::array<Tensor<double>, 3> query;
    for (std::size_t l = 0; l < 3; ++l) {
      const std::size_t c = l < 2 ? 6 : 5;
      support[0][l] = random_constant(rng, {c, 3, 4});
      query[l] = random_constant(rng, {c, 3, 4});
    }
    std::vector<std::vector<std::uint8_t>> masks{{1, 1, 0, 0, 1, 1, 0, 0, 0, 1, 0, 0}};
    std::vector<Parameter<double>*> mpg_params, dec_params;
    for (std::size_t i = 0; i < ps.size(); ++i)
      (ps[i].name.rfind("mpg.", 0) == 0 ? mpg_params : dec_params).push_back(&ps[i]);
    out.push_back(check_parameters(
        "prompt generator", mpg_params,
        [&](Bindings<double>& b) {
          auto o = mpg.generate(b, support, masks, query);
          return add(project(o.prompts.sparse, 1), project(o.prompts.dense, 2));
        },
        std::max(probes, mpg_params.size()), rng));
    const auto sparse = random_constant(rng, {2, 24});
    const auto dense = random_constant(rng, {24, 3, 4});
    out.push_back(check_parameters(
        "mask decoder", dec_params,
        [&](Bindings<double>& b) { return project(dec.decode(b, sparse, dense, query[2])); },
        std::max(probes, dec_params.size()), rng));
  }

  out.push_back(composed_case("composed full model", true, true, rng, probes));
  out.push_back(composed_case("composed without anchors", false, true, rng, probes));
  out.push_back(composed_case("composed baseline", false, false, rng, probes));
  return out;
}

double anchor_residual(const dpat::PrototypeMatrix<double>& fused, const Tensor<double>& anchor) {
  auto w = dpat::compute_w(fused, anchor).w;
  const std::size_t c = anchor.dim(0);
  auto p = fused.matrix();
  double worst = 0;
  for (std::size_t col = 0; col < 2; ++col) {
    double pn = 0, an = 0;
    for (std::size_t i = 0; i < c; ++i) pn += p.at(i * 2 + col) * p.at(i * 2 + col);
    for (std::size_t i = 0; i < c; ++i) an += anchor.at(i * 2 + col) * anchor.at(i * 2 + col);
    pn = std::sqrt(pn);
    an = std::sqrt(an);
    for (std::size_t r = 0; r < c; ++r) {
      double wp = 0;
      for (std::size_t i = 0; i < c; ++i) wp += w.at(r * c + i) * p.at(i * 2 + col) / pn;
      worst = std::max(worst, std::abs(wp - anchor.at(r * 2 + col) / an));
    }
  }
  return worst;
}

}  // namespace apseg::testing
