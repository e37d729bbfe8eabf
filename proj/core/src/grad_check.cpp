#include "ctcycle/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

#include "ctcycle/rng.hpp"

namespace ctcycle {

template <typename T>
GradCheckReport grad_check(const std::function<Tensor<T>(Tape<T>*)>& f, Tensor<T> x,
                           const GradCheckOptions& options) {
  if (!x.requires_grad()) {
    throw ValidationError("grad_check: x must require gradients");
  }

  Tape<T> tape;
  auto loss = f(&tape);
  if (loss.size() != 1) throw ShapeError("grad_check: f must be scalar-valued");
  x.zero_grad();
  tape.backward(loss);
  std::vector<double> analytic(x.grad().begin(), x.grad().end());
  const double f0 = static_cast<double>(loss.item());

  std::vector<std::int64_t> indices(static_cast<std::size_t>(x.size()));
  std::iota(indices.begin(), indices.end(), 0);
  if (options.max_elements > 0 && options.max_elements < x.size()) {
    Rng rng(options.seed);
    for (std::int64_t i = 0; i < options.max_elements; ++i) {
      const auto j = i + static_cast<std::int64_t>(
                             rng.uniform_index(static_cast<std::uint64_t>(x.size() - i)));
      std::swap(indices[static_cast<std::size_t>(i)], indices[static_cast<std::size_t>(j)]);
    }
    indices.resize(static_cast<std::size_t>(options.max_elements));
  }

  GradCheckReport report;
  const double h = options.step;
  auto vals = x.values();
  for (const auto idx : indices) {
    const T orig = vals[static_cast<std::size_t>(idx)];
    vals[static_cast<std::size_t>(idx)] = orig + static_cast<T>(h);
    const double fp = static_cast<double>(f(nullptr).item());
    vals[static_cast<std::size_t>(idx)] = orig - static_cast<T>(h);
    const double fm = static_cast<double>(f(nullptr).item());
    vals[static_cast<std::size_t>(idx)] = orig;

    const double central = (fp - fm) / (2.0 * h);
    const double ad = analytic[static_cast<std::size_t>(idx)];
    // Cancellation noise bound of the central difference itself: gradients
    // below this are not measurable by the probe, so the denominator never
    // drops under noise/tolerance (a zero gradient against pure noise must
    // not read as a relative error).
    const double f_scale = std::max({std::fabs(f0), std::fabs(fp), std::fabs(fm), 1.0});
    const double fd_noise =
        32.0 * std::numeric_limits<double>::epsilon() * f_scale / (2.0 * h);
    const double rel = std::fabs(ad - central) /
                       std::max({std::fabs(ad), std::fabs(central), options.denom_floor,
                                 fd_noise / options.tolerance});
    ++report.checked;
    if (rel >= options.tolerance) {
      // One-sided slopes disagreeing flags a kink under the probe rather than
      // a wrong adjoint: smooth points have d+ ~ d- up to O(step * f''),
      // while an activation boundary inside the probe window splits them.
      const double d_plus = (fp - f0) / h;
      const double d_minus = (f0 - fm) / h;
      const double kink = std::fabs(d_plus - d_minus);
      if (kink > 3.0 * options.tolerance *
                     std::max({1.0, std::fabs(d_plus), std::fabs(d_minus)})) {
        ++report.flagged;
        continue;
      }
    }
    if (rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst_index = idx;
    }
  }
  return report;
}

template GradCheckReport grad_check<float>(const std::function<Tensor<float>(Tape<float>*)>&,
                                           Tensor<float>, const GradCheckOptions&);
template GradCheckReport grad_check<double>(const std::function<Tensor<double>(Tape<double>*)>&,
                                            Tensor<double>, const GradCheckOptions&);

}  // namespace ctcycle
