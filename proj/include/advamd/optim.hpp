#pragma once

#include <cstddef>
#include <vector>

#include "advamd/error.hpp"
#include "advamd/tensor.hpp"

namespace advamd {

// SGD with heavy-ball momentum:
//   v <- mu * v + (g + wd * theta)
//   theta <- theta - lr * v
class Sgd {
 public:
  Sgd(std::vector<Tensor*> params, double lr, double momentum, double weight_decay = 0.0)
      : params_(std::move(params)), lr_(lr), momentum_(momentum), weight_decay_(weight_decay) {
    require(lr >= 0.0, ErrorCode::InvalidArgument, "learning rate must be >= 0");
    require(momentum >= 0.0 && momentum < 1.0, ErrorCode::InvalidArgument, "momentum must be in [0,1)");
    velocity_.reserve(params_.size());
    for (const Tensor* p : params_) velocity_.emplace_back(p->size(), 0.0);
  }

  void zero_grad() {
    for (Tensor* p : params_) p->zero_grad();
  }

  void step() {
    if (lr_ == 0.0) return;
    for (std::size_t k = 0; k < params_.size(); ++k) {
      Tensor& p = *params_[k];
      std::vector<double>& v = velocity_[k];
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double g = p.grad[i] + weight_decay_ * p.values[i];
        v[i] = momentum_ * v[i] + g;
        p.values[i] -= lr_ * v[i];
      }
    }
  }

  double learning_rate() const { return lr_; }

 private:
  std::vector<Tensor*> params_;
  std::vector<std::vector<double>> velocity_;
  double lr_;
  double momentum_;
  double weight_decay_;
};

}  // namespace advamd
