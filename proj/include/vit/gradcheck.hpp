#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "vit/tape.hpp"

namespace vit {

struct GradCheckGroup {
  std::string name;
  std::size_t checked = 0;
  double max_rel_err = 0.0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
};

struct GradCheckReport {
  bool passed = false;
  double max_rel_err = 0.0;
  std::vector<GradCheckGroup> groups;
};

struct GradCheckOptions {
  double h = 1e-5;
  double tol = 1e-4;
  /// Denominator floor in |a - n| / max(|a|, |n|, floor), so coordinates with
  /// vanishing gradients are judged on an absolute scale.
  double floor = 1e-6;
  /// 0 checks every coordinate; otherwise an evenly strided subset per group.
  std::size_t max_coords_per_group = 0;
};

/// Scalar-valued function of the parameters, rebuilt on a fresh tape per call.
using LossFn = std::function<Var<double>(Tape<double>&)>;

/// Compares tape gradients of `f` with central finite differences for every
/// coordinate of every parameter. Throws ContractError if f is not scalar.
GradCheckReport check_gradients(const LossFn& f, std::span<Parameter<double>* const> params,
                                const GradCheckOptions& opts = {});

}  // namespace vit
