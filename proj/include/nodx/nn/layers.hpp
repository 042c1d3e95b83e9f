#pragma once

#include <string>
#include <utility>
#include <vector>

#include "nodx/rng.hpp"
#include "nodx/tensor.hpp"

namespace nodx::nn {

/// Named view of one learnable tensor and its gradient accumulator.
struct ParamRef {
  std::string name;
  Tensor* value;
  Tensor* grad;
};
using ParamRefs = std::vector<ParamRef>;

void he_init(Tensor& w, int fan_in, Rng& rng);

/// 3-d convolution, kernel 1 or 3, stride 1 or 2, zero padding kernel/2.
/// Activations are (N, C, D, H, W); weights (out, in, k, k, k).
class Conv3d {
 public:
  Conv3d(int in_ch, int out_ch, int kernel, int stride = 1);

  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& gy);  // accumulates weight/bias grads

  void init(Rng& rng);
  void collect(const std::string& prefix, ParamRefs& out);

  int in_channels() const { return in_ch_; }
  int out_channels() const { return out_ch_; }

  Tensor weight, bias, wgrad, bgrad;

 private:
  int in_ch_, out_ch_, kernel_, stride_, pad_;
  Tensor x_;  // cached input
};

/// Per-channel batch normalization over (N, D, H, W).
class BatchNorm3d {
 public:
  explicit BatchNorm3d(int channels);

  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& gy);

  void collect(const std::string& prefix, ParamRefs& out);

  bool training = true;
  double eps = 1e-5;
  double momentum = 0.1;

  Tensor gamma, beta, ggrad, bgrad;
  Tensor running_mean, running_var;

 private:
  int ch_;
  Tensor xhat_;
  std::vector<double> invstd_;
  bool used_batch_stats_ = false;
};

class ReLU {
 public:
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& gy);

 private:
  Tensor x_;
};

/// 2x2x2 max pooling with stride 2; ties take the first element in scan order.
class MaxPool3d {
 public:
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& gy);

 private:
  std::vector<int> in_shape_;
  std::vector<size_t> argmax_;
};

/// Nearest-neighbor 2x upsampling in all three spatial axes.
class UpsampleNearest2x {
 public:
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& gy);

 private:
  std::vector<int> in_shape_;
};

/// Fully connected layer on (N, F) inputs.
class Linear {
 public:
  Linear(int in_features, int out_features);

  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& gy);

  void init(Rng& rng);
  void collect(const std::string& prefix, ParamRefs& out);

  Tensor weight, bias, wgrad, bgrad;

 private:
  int in_f_, out_f_;
  Tensor x_;
};

Tensor concat_channels(const Tensor& a, const Tensor& b);
std::pair<Tensor, Tensor> split_channels(const Tensor& g, int ca, int cb);

double sigmoid(double x);

}  // namespace nodx::nn
