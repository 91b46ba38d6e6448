#include "windcomfort/optim.hpp"

#include <cmath>

namespace wc {

template <typename T>
Adam<T>::Adam(std::vector<ag::Var<T>> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const auto& p : params_) {
    m_.emplace_back(p.value().numel(), T(0));
    v_.emplace_back(p.value().numel(), T(0));
  }
}

template <typename T>
void Adam<T>::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  const T b1 = static_cast<T>(beta1_), b2 = static_cast<T>(beta2_);
  const T step = static_cast<T>(lr_ / c1);
  const T inv_c2 = static_cast<T>(1.0 / c2);
  const T eps = static_cast<T>(eps_);
  for (std::size_t k = 0; k < params_.size(); ++k) {
    auto& p = params_[k];
    if (!p.node()->has_grad()) continue;
    T* w = p.value().ptr();
    T* g = p.grad().ptr();
    T* m = m_[k].data();
    T* v = v_[k].data();
    const long n = static_cast<long>(m_[k].size());
#pragma omp parallel for schedule(static)
    for (long i = 0; i < n; ++i) {
      m[i] = b1 * m[i] + (1 - b1) * g[i];
      v[i] = b2 * v[i] + (1 - b2) * g[i] * g[i];
      w[i] -= step * m[i] / (std::sqrt(v[i] * inv_c2) + eps);
      g[i] = 0;
    }
  }
}

template class Adam<float>;
template class Adam<double>;

}  // namespace wc
