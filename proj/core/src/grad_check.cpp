#include "dpt/numerics/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

namespace dpt::ad {

GradCheckResult grad_check(ParameterSet<double>& params, const std::function<Var<double>()>& f,
                           const GradCheckOptions& opts) {
  params.zero_grad();
  Var<double> loss = f();
  backward(loss);

  struct Entry {
    std::size_t param, index;
  };
  std::vector<Entry> entries;
  for (std::size_t p = 0; p < params.size(); ++p) {
    if (!params.items()[p].trainable) continue;
    for (std::size_t i = 0; i < params.items()[p].var.size(); ++i) entries.push_back({p, i});
  }
  if (opts.samples > 0 && opts.samples < entries.size()) {
    std::mt19937_64 rng(opts.seed);
    std::shuffle(entries.begin(), entries.end(), rng);
    entries.resize(opts.samples);
  }

  GradCheckResult result;
  NoGradGuard no_grad;
  for (const Entry& e : entries) {
    auto& param = params.items()[e.param];
    double& x = param.var.mutable_value()[e.index];
    const double saved = x;
    x = saved + opts.step;
    const double up = f().item();
    x = saved - opts.step;
    const double down = f().item();
    x = saved;
    const double numeric = (up - down) / (2 * opts.step);
    const double analytic = param.var.grad()[e.index];
    const double err = std::fabs(analytic - numeric) / std::max(1.0, std::fabs(numeric));
    ++result.checked;
    if (err > result.max_rel_error || result.worst.empty()) {
      result.max_rel_error = std::max(result.max_rel_error, err);
      if (err >= result.max_rel_error) result.worst = param.name + "[" + std::to_string(e.index) + "]";
    }
  }
  return result;
}

}  // namespace dpt::ad
