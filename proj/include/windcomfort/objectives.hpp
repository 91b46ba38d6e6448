#pragma once

// Training losses.

#include <optional>

#include <json.hpp>

#include "windcomfort/autograd.hpp"

namespace wc {

struct LossReport {
  double loss_G_adv = 0;
  double loss_G_L1 = 0;
  double loss_G_total = 0;
  double loss_D = 0;
  std::optional<double> loss_cycle;
  double lambda = 100;

  bool finite() const;
  nlohmann::json to_json() const;
};

// Conditional adversarial loss on patch logits. loss_D is the mean of the real and fake
// BCE terms, halved; the generator term is non-saturating (fakes labelled real).
template <typename T>
ag::Var<T> adv_discriminator_loss(const ag::Var<T>& real_logits, const ag::Var<T>& fake_logits);

template <typename T>
ag::Var<T> adv_generator_loss(const ag::Var<T>& fake_logits);

template <typename T>
struct AdvLoss {
  ag::Var<T> loss_D;
  ag::Var<T> loss_G_adv;
};

template <typename T>
AdvLoss<T> adv_loss(const ag::Var<T>& real_logits, const ag::Var<T>& fake_logits);

template <typename T>
ag::Var<T> l1_loss(const ag::Var<T>& pred, const ag::Var<T>& target);

template <typename T>
ag::Var<T> pix2pix_objective(const ag::Var<T>& adv, const ag::Var<T>& l1, T lambda = T(100));

inline double pix2pix_objective(double adv, double l1, double lambda = 100.0) { return adv + lambda * l1; }

// Mean squared difference of raw discriminator scores to a constant label.
template <typename T>
ag::Var<T> lsgan_loss(const ag::Var<T>& d_out, T target);

// lambda * (|F(G(x)) - x|_1 + |G(F(y)) - y|_1), each term a mean.
template <typename T>
ag::Var<T> cycle_loss(const ag::Var<T>& x, const ag::Var<T>& x_cycled, const ag::Var<T>& y,
                      const ag::Var<T>& y_cycled, T lambda = T(10));

}  // namespace wc
