#pragma once

#include <string>
#include <utility>
#include <vector>

#include "skupatch/tensor.hpp"

namespace skupatch {

struct AdamWOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 1e-4;
};

/// Adam with decoupled weight decay: w ← w − lr·wd·w, then the bias-corrected
/// moment update. Parameters without an accumulated gradient are treated as
/// having a zero gradient.
template <class T>
class AdamW {
 public:
  using Named = std::vector<std::pair<std::string, Tensor<T>>>;

  AdamW(Named params, AdamWOptions options);

  /// Throws NumericalError naming the first parameter with a non-finite
  /// gradient; no parameter is modified in that case.
  void step();
  void zero_grad();
  /// Rescales all gradients so their global L2 norm is at most max_norm.
  /// Returns the norm before clipping.
  double clip_grad_norm(double max_norm);

  void set_lr(double lr) { options_.lr = lr; }
  const AdamWOptions& options() const { return options_; }
  std::uint64_t steps() const { return steps_; }
  const Named& params() const { return params_; }
  const std::vector<std::vector<T>>& first_moments() const { return m_; }
  const std::vector<std::vector<T>>& second_moments() const { return v_; }
  /// Restores saved moments; throws DimensionError on shape mismatch.
  void load_state(std::uint64_t steps, std::vector<std::vector<T>> first, std::vector<std::vector<T>> second);

 private:
  Named params_;
  AdamWOptions options_;
  std::uint64_t steps_ = 0;
  std::vector<std::vector<T>> m_;
  std::vector<std::vector<T>> v_;
};

}  // namespace skupatch
