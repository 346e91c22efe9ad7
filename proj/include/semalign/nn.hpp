#ifndef SEMALIGN_NN_HPP_
#define SEMALIGN_NN_HPP_

#include <string>
#include <vector>

#include "semalign/autograd.hpp"
#include "semalign/rng.hpp"

namespace semalign {

struct NamedParam {
  std::string name;
  Var var;
};

// k x k convolution with "same" padding (pad = k / 2).
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(std::string name, int in_channels, int out_channels, int kernel, int stride, Rng& rng,
         bool zero_init = false);

  Var forward(const Var& x) const;
  void collect(std::vector<NamedParam>& out) const;

  int in_channels() const { return weight_.value().dim(1); }
  int out_channels() const { return weight_.value().dim(0); }

 private:
  std::string name_;
  Var weight_;
  Var bias_;
  int stride_ = 1;
  int pad_ = 0;
};

}  // namespace semalign

#endif  // SEMALIGN_NN_HPP_
