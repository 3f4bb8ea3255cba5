#include "vit/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace vit {

namespace {

double eval_loss(const LossFn& f) {
  Tape<double> tape(false);
  const Var<double> out = f(tape);
  if (out.value().size() != 1) throw ContractError("check_gradients: loss must be scalar");
  return out.value()[0];
}

}  // namespace

GradCheckReport check_gradients(const LossFn& f, std::span<Parameter<double>* const> params,
                                const GradCheckOptions& opts) {
  std::vector<Tensor<double>> analytic;
  {
    Tape<double> tape(true);
    const Var<double> out = f(tape);
    if (out.value().size() != 1) throw ContractError("check_gradients: loss must be scalar");
    tape.backward(out);
    for (auto* p : params) {
      const auto* g = tape.grad_of(*p);
      analytic.push_back(g ? *g : Tensor<double>(p->value.shape()));
    }
  }

  GradCheckReport report;
  report.passed = true;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter<double>& p = *params[k];
    GradCheckGroup group;
    group.name = p.name;
    const std::size_t n = p.value.size();
    const std::size_t step =
        (opts.max_coords_per_group == 0 || n <= opts.max_coords_per_group) ? 1 : n / opts.max_coords_per_group;
    for (std::size_t i = 0; i < n; i += step) {
      const double orig = p.value[i];
      p.value[i] = orig + opts.h;
      const double up = eval_loss(f);
      p.value[i] = orig - opts.h;
      const double down = eval_loss(f);
      p.value[i] = orig;
      const double numeric = (up - down) / (2.0 * opts.h);
      const double a = analytic[k][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), opts.floor});
      const double rel = std::abs(a - numeric) / denom;
      ++group.checked;
      if (group.checked == 1 || rel > group.max_rel_err) {
        group.max_rel_err = rel;
        group.worst_index = i;
        group.worst_analytic = a;
        group.worst_numeric = numeric;
      }
    }
    report.max_rel_err = std::max(report.max_rel_err, group.max_rel_err);
    if (group.max_rel_err > opts.tol) report.passed = false;
    report.groups.push_back(std::move(group));
  }
  return report;
}

}  // namespace vit
