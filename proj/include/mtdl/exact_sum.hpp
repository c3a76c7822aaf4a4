#ifndef MTDL_EXACT_SUM_HPP_
#define MTDL_EXACT_SUM_HPP_

#include <cstddef>
#include <span>
#include <vector>

namespace mtdl {

// Exact floating-point accumulator (Shewchuk partials, fsum-style). The
// returned value is the correctly rounded sum of all inputs, so it does not
// depend on the order in which values were added. Pooling over memory items
// uses this to stay bit-identical under permutation of the item list.
class ExactSum {
 public:
  void add(double x);
  double result() const;
  void reset() { partials_.clear(); }

 private:
  std::vector<double> partials_;  // non-overlapping, increasing magnitude
};

double exact_sum(std::span<const double> values);

}  // namespace mtdl

#endif  // MTDL_EXACT_SUM_HPP_
