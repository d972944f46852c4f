#pragma once

// Independent reference implementations shared by the unit suites and the
// acceptance binary.

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "apseg/dpat.hpp"
#include "apseg/encoder.hpp"
#include "apseg/model.hpp"
#include "apseg/optim.hpp"
#include "apseg/random.hpp"

namespace apseg::testing {

std::vector<double> random_values(Rng& rng, std::size_t n, double scale = 1.0);
Tensor<double> random_constant(Rng& rng, Shape shape, double scale = 1.0);
Tensor<double> random_leaf(Rng& rng, Shape shape, double scale = 1.0);
std::vector<std::uint8_t> random_mask(Rng& rng, std::size_t n, double p);

/// Random three-level features: f1, f2 with `mid` channels, f3 with `high`.
MultiLevelFeatures<double> random_features(Rng& rng, std::size_t mid, std::size_t high,
                                           std::size_t h, std::size_t w);

// Brute-force cycle-consistent selection over location-major buffers
// (hw×c). Every cosine is recomputed from scratch with plain loops; argmax
// keeps the lowest index on ties.
struct CcsReference {
  std::vector<std::uint32_t> kept;
  std::vector<double> prototype;
  bool empty = true;
};
CcsReference ccs_reference(const std::vector<double>& support, const std::vector<double>& query,
                           std::size_t c, std::size_t hw, const std::vector<std::uint8_t>& region);

/// ‖W·P̄ − Ā‖∞ with W from compute_w and every product and column norm
/// recomputed by hand.
double anchor_residual(const dpat::PrototypeMatrix<double>& fused, const Tensor<double>& anchor);

/// Location-major copy of a c×h×w map.
std::vector<double> locations_of(const Tensor<double>& map);

// Central-difference gradient checks.
inline constexpr double kFdStep = 1e-6;
/// Gradients smaller than this are compared on an absolute scale instead.
inline constexpr double kFdFloor = 1e-3;
inline constexpr double kFdTolerance = 1e-4;

struct GradStats {
  std::string name;
  std::size_t probes = 0;
  double max_rel = 0;
  bool ok() const { return probes >= 20 && max_rel <= kFdTolerance; }
};

double fd_relative_error(double analytic, double numeric);

/// sum(x ⊙ R) for a fixed pseudo-random R; turns any output into a scalar
/// whose gradient exercises every output element.
Tensor<double> project(const Tensor<double>& x, std::uint64_t seed = 99);

/// Probes cycle over `leaves`; `loss` must rebuild the graph from them.
GradStats check_leaves(const std::string& name, const std::vector<Tensor<double>>& leaves,
                       const std::function<Tensor<double>()>& loss, std::size_t probes, Rng& rng);

/// Probes cycle over `targets`; `loss` runs a forward pass through the given
/// bindings.
GradStats check_parameters(const std::string& name, const std::vector<Parameter<double>*>& targets,
                           const std::function<Tensor<double>(Bindings<double>&)>& loss,
                           std::size_t probes, Rng& rng);

/// Small model used wherever a full forward pass is needed in tests:
/// mid 6, high 5, c_r 4, c_o 24, k 2, pyramid {2, 1}.
ModelConfig tiny_model_config(bool use_dpat = true, bool use_mpg = true);

/// Every differentiable op, the layers built from them, and the composed
/// anchor transform → prompt generator → decoder pass.
std::vector<GradStats> run_gradient_suite(std::uint64_t seed, std::size_t probes = 24);

}  // namespace apseg::testing
