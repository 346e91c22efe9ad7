#include "semalign/nn.hpp"

#include <cmath>

#include "semalign/ops.hpp"

namespace semalign {

Conv2d::Conv2d(std::string name, int in_channels, int out_channels, int kernel, int stride, Rng& rng,
               bool zero_init)
    : name_(std::move(name)), stride_(stride), pad_(kernel / 2) {
  Tensor w({out_channels, in_channels, kernel, kernel}, 0.0);
  if (!zero_init) {
    const double std = std::sqrt(2.0 / (in_channels * kernel * kernel));
    for (double& v : w.values()) v = gaussian(rng, 0.0, std);
  }
  weight_ = Var(std::move(w), true);
  bias_ = Var(Tensor({out_channels}, 0.0), true);
}

Var Conv2d::forward(const Var& x) const { return conv2d(x, weight_, bias_, stride_, pad_); }

void Conv2d::collect(std::vector<NamedParam>& out) const {
  out.push_back({name_ + ".weight", weight_});
  out.push_back({name_ + ".bias", bias_});
}

}  // namespace semalign
