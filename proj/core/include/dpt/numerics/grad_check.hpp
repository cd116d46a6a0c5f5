#pragma once

#include <cstdint>
#include <functional>
#include <string>

#include "dpt/numerics/autodiff.hpp"

namespace dpt::ad {

struct GradCheckResult {
  double max_rel_error = 0;  // max |analytic - numeric| / max(1, |numeric|)
  std::size_t checked = 0;
  std::string worst;         // "name[index]" of the worst entry
};

struct GradCheckOptions {
  std::uint64_t seed = 0;
  // Number of randomly chosen scalar entries to check; 0 checks every entry.
  std::size_t samples = 0;
  double step = 1e-5;
};

// Central-difference check of `f` against its reverse-mode gradient. `f`
// must rebuild the graph from the current parameter values on every call and
// be deterministic (reseed any noise inside it).
GradCheckResult grad_check(ParameterSet<double>& params, const std::function<Var<double>()>& f,
                           const GradCheckOptions& opts = {});

}  // namespace dpt::ad
