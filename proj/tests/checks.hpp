#pragma once

// Checks shared by the unit tests and the acceptance binary: full-model
// gradient checks, the patch-permutation check and brute-force oracles that
// do not call into the code they verify.

#include <string>
#include <vector>

#include "vit/analysis.hpp"
#include "vit/encoder.hpp"
#include "vit/eval.hpp"
#include "vit/gradcheck.hpp"
#include "vit/selfsup.hpp"

namespace vit::checks {

/// 2 layers, D=16, 2 heads, 4x20 image with 4x4 patches (grid 1x5).
ViTConfig tiny_config(PositionalKind pos, HeadMode head);
/// Same token grid behind a one-stage conv stem (8x40 input, stride 2).
ViTConfig tiny_hybrid_config();

struct NamedConfig {
  std::string name;
  ViTConfig cfg;
  bool mpp_objective = false;
};

/// Every variant the full-model gradient check must cover.
std::vector<NamedConfig> gradcheck_variants();

/// Random-valued f64 model (no zero tensors, so every path carries gradient)
/// checked against central differences of the batch loss.
GradCheckReport model_gradcheck(const NamedConfig& variant, std::uint64_t seed, double tol = 1e-4);

/// Max |delta| of the class-token state over `trials` random patch
/// permutations of a model without positional information.
double permutation_max_diff(std::size_t trials, std::uint64_t seed);

/// Rows of A (N' x N', class token first) restricted to patches and
/// renormalized, times patch-centre distances, averaged over queries.
double distance_oracle(const Tensor<double>& a, std::size_t grid_h, std::size_t grid_w, std::size_t patch);

/// Product A_L ... A_1 of head-averaged attention, with (A + I)/2 mixing when
/// half_identity, computed with plain loops.
Tensor<double> rollout_oracle(const std::vector<AttentionRecord>& records, std::size_t image, bool half_identity);

/// (X^T X + lambda I)^-1 X^T Y via Gauss-Jordan with partial pivoting.
Tensor<double> probe_oracle(const Tensor<double>& x, const Tensor<double>& y, double lambda);

/// Random row-stochastic attention records for `layers` x `heads` on one image.
std::vector<AttentionRecord> random_records(std::size_t layers, std::size_t heads, std::size_t tokens,
                                            std::uint64_t seed);

Tensor<double> random_tensor(Shape shape, std::uint64_t seed, double scale = 1.0);

}  // namespace vit::checks
