#include "windcomfort/objectives.hpp"

#include <cmath>

namespace wc {

namespace {

template <typename T>
void same_shape(const ag::Var<T>& a, const ag::Var<T>& b, const char* what) {
  require(a.shape() == b.shape(), ErrorCode::ShapeMismatch,
          std::string(what) + ": " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace

bool LossReport::finite() const {
  return std::isfinite(loss_G_adv) && std::isfinite(loss_G_L1) && std::isfinite(loss_G_total) &&
         std::isfinite(loss_D) && (!loss_cycle || std::isfinite(*loss_cycle));
}

nlohmann::json LossReport::to_json() const {
  nlohmann::json j{{"loss_G_adv", loss_G_adv},
                   {"loss_G_L1", loss_G_L1},
                   {"loss_G_total", loss_G_total},
                   {"loss_D", loss_D},
                   {"lambda", lambda}};
  if (loss_cycle) j["loss_cycle"] = *loss_cycle;
  return j;
}

template <typename T>
ag::Var<T> adv_discriminator_loss(const ag::Var<T>& real_logits, const ag::Var<T>& fake_logits) {
  same_shape(real_logits, fake_logits, "adv_loss");
  auto sum = ag::add(ag::bce_with_logits(real_logits, T(1)), ag::bce_with_logits(fake_logits, T(0)));
  return ag::scale(sum, T(0.25));
}

template <typename T>
ag::Var<T> adv_generator_loss(const ag::Var<T>& fake_logits) {
  return ag::bce_with_logits(fake_logits, T(1));
}

template <typename T>
AdvLoss<T> adv_loss(const ag::Var<T>& real_logits, const ag::Var<T>& fake_logits) {
  return {adv_discriminator_loss(real_logits, fake_logits), adv_generator_loss(fake_logits)};
}

template <typename T>
ag::Var<T> l1_loss(const ag::Var<T>& pred, const ag::Var<T>& target) {
  same_shape(pred, target, "l1_loss");
  return ag::l1_mean(pred, target);
}

template <typename T>
ag::Var<T> pix2pix_objective(const ag::Var<T>& adv, const ag::Var<T>& l1, T lambda) {
  return ag::add(adv, ag::scale(l1, lambda));
}

template <typename T>
ag::Var<T> lsgan_loss(const ag::Var<T>& d_out, T target) {
  return ag::mse_to_constant(d_out, target);
}

template <typename T>
ag::Var<T> cycle_loss(const ag::Var<T>& x, const ag::Var<T>& x_cycled, const ag::Var<T>& y,
                      const ag::Var<T>& y_cycled, T lambda) {
  return ag::scale(ag::add(l1_loss(x_cycled, x), l1_loss(y_cycled, y)), lambda);
}

#define WC_INSTANTIATE(T)                                                                         \
  template ag::Var<T> adv_discriminator_loss<T>(const ag::Var<T>&, const ag::Var<T>&);            \
  template ag::Var<T> adv_generator_loss<T>(const ag::Var<T>&);                                   \
  template AdvLoss<T> adv_loss<T>(const ag::Var<T>&, const ag::Var<T>&);                          \
  template ag::Var<T> l1_loss<T>(const ag::Var<T>&, const ag::Var<T>&);                           \
  template ag::Var<T> pix2pix_objective<T>(const ag::Var<T>&, const ag::Var<T>&, T);              \
  template ag::Var<T> lsgan_loss<T>(const ag::Var<T>&, T);                                        \
  template ag::Var<T> cycle_loss<T>(const ag::Var<T>&, const ag::Var<T>&, const ag::Var<T>&,      \
                                    const ag::Var<T>&, T);

WC_INSTANTIATE(float)
WC_INSTANTIATE(double)
#undef WC_INSTANTIATE

}  // namespace wc
