#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "etclip/common.hpp"
#include "etclip/tensor.hpp"

namespace etclip {

// Adam with bias correction. Moment buffers exist iff the parameter was
// registered; step() applies the update and clears gradients.
template <typename T>
class AdamT {
 public:
  T learning_rate = T(1e-3);
  T beta1 = T(0.9);
  T beta2 = T(0.999);
  T epsilon = T(1e-8);

  AdamT() = default;
  explicit AdamT(T lr) : learning_rate(lr) {}

  void add_param(const TensorT<T>& p) {
    ETCLIP_CHECK(p->requires_grad, "optimizer param must require grad");
    params_.push_back(p);
    m_.emplace_back(p->numel(), T(0));
    v_.emplace_back(p->numel(), T(0));
    p->ensure_grad();
  }

  void add_params(const std::vector<TensorT<T>>& ps) {
    for (auto& p : ps) add_param(p);
  }

  long step_count() const { return step_count_; }

  void zero_grads() {
    for (auto& p : params_) p->zero_grad();
  }

  void step() {
    ++step_count_;
    T bc1 = T(1) - static_cast<T>(std::pow(static_cast<double>(beta1),
                                           static_cast<double>(step_count_)));
    T bc2 = T(1) - static_cast<T>(std::pow(static_cast<double>(beta2),
                                           static_cast<double>(step_count_)));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto& p = params_[k];
      ETCLIP_CHECK(p->grad.size() == p->numel(),
                   "param " + std::to_string(k) + " has no gradient");
      auto& m = m_[k];
      auto& v = v_[k];
      for (std::size_t i = 0; i < p->numel(); ++i) {
        T g = p->grad[i];
        m[i] = beta1 * m[i] + (T(1) - beta1) * g;
        v[i] = beta2 * v[i] + (T(1) - beta2) * g * g;
        T mhat = m[i] / bc1;
        T vhat = v[i] / bc2;
        p->value[i] -= learning_rate * mhat / (std::sqrt(vhat) + epsilon);
      }
      p->zero_grad();
    }
  }

  std::size_t num_params() const { return params_.size(); }

  // State accessors for checkpointing.
  const std::vector<T>& moment1(std::size_t k) const { return m_[k]; }
  const std::vector<T>& moment2(std::size_t k) const { return v_[k]; }
  void restore_state(std::size_t k, std::vector<T> m, std::vector<T> v) {
    ETCLIP_CHECK(k < params_.size() && m.size() == params_[k]->numel() &&
                     v.size() == params_[k]->numel(),
                 "optimizer state restore mismatch at param " +
                     std::to_string(k));
    m_[k] = std::move(m);
    v_[k] = std::move(v);
  }
  void set_step_count(long s) { step_count_ = s; }

 private:
  std::vector<TensorT<T>> params_;
  std::vector<std::vector<T>> m_, v_;
  long step_count_ = 0;
};

using Adam = AdamT<float>;

}  // namespace etclip
