#pragma once

#include <vector>

#include "windcomfort/autograd.hpp"

namespace wc {

template <typename T>
class Adam {
 public:
  Adam(std::vector<ag::Var<T>> params, double lr, double beta1, double beta2, double eps = 1e-8);

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }
  // Applies one update from the accumulated gradients, then clears them.
  void step();
  long steps() const { return t_; }

 private:
  std::vector<ag::Var<T>> params_;
  std::vector<std::vector<T>> m_;
  std::vector<std::vector<T>> v_;
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
};

}  // namespace wc
