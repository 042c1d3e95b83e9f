#pragma once

#include "nodx/nn/layers.hpp"

namespace nodx::nn {

/// Conv3d + BatchNorm + ReLU.
class ConvBlock {
 public:
  ConvBlock(int in_ch, int out_ch, int kernel = 3, int stride = 1)
      : conv(in_ch, out_ch, kernel, stride), bn(out_ch) {}

  Tensor forward(const Tensor& x) { return relu.forward(bn.forward(conv.forward(x))); }
  Tensor backward(const Tensor& gy) { return conv.backward(bn.backward(relu.backward(gy))); }

  void init(Rng& rng) { conv.init(rng); }
  void collect(const std::string& prefix, ParamRefs& out) {
    conv.collect(prefix + ".conv", out);
    bn.collect(prefix + ".bn", out);
  }
  void set_training(bool t) { bn.training = t; }

  Conv3d conv;
  BatchNorm3d bn;
  ReLU relu;
};

/// Anatomical attention gate. Image and ROI feature maps are concatenated
/// along channels; two 1x1x1 convolutions with sigmoid produce two spatial
/// gates g1, g2, and the output is image ⊙ g1 + image ⊙ g2.
class AagGate {
 public:
  AagGate(int image_ch, int roi_ch)
      : image_ch_(image_ch), roi_ch_(roi_ch),
        gate1(image_ch + roi_ch, 1, 1), gate2(image_ch + roi_ch, 1, 1) {}

  Tensor forward(const Tensor& image_feats, const Tensor& roi_feats);
  /// Returns (grad wrt image_feats, grad wrt roi_feats).
  std::pair<Tensor, Tensor> backward(const Tensor& gy);

  void init(Rng& rng) {
    gate1.init(rng);
    gate2.init(rng);
  }
  void collect(const std::string& prefix, ParamRefs& out) {
    gate1.collect(prefix + ".gate1", out);
    gate2.collect(prefix + ".gate2", out);
  }

  const Tensor& gate1_values() const { return g1_; }
  const Tensor& gate2_values() const { return g2_; }

  Conv3d gate1, gate2;

 private:
  int image_ch_, roi_ch_;
  Tensor img_, g1_, g2_;
};

/// Soft activation map: per-voxel channel-mean absolute activation, plus a
/// feature vector pooled with the softnorm-weighted activations.
class SamModule {
 public:
  struct Outputs {
    Tensor activation_map;   // (N, 1, D, H, W)
    Tensor feature_vector;   // (N, C)
  };

  Outputs forward(const Tensor& feats);
  Tensor backward(const Tensor& gvec, const Tensor* gmap = nullptr);

 private:
  Tensor feats_, map_, weights_;  // weights_ holds softnorm w(x), (N,1,D,H,W)
  std::vector<double> spatial_sum_;
};

/// Per-channel spatial maximum.
class GlobalMaxPool {
 public:
  Tensor forward(const Tensor& x);   // (N,C,D,H,W) -> (N,C)
  Tensor backward(const Tensor& gy);

 private:
  std::vector<int> in_shape_;
  std::vector<size_t> argmax_;
};

/// Two convolutional blocks with a projected shortcut; the first convolution
/// (and the projection) carry the block stride.
class ResidualBlock {
 public:
  ResidualBlock(int in_ch, int out_ch, int stride = 2)
      : conv1(in_ch, out_ch, 3, stride), bn1(out_ch), conv2(out_ch, out_ch, 3, 1),
        bn2(out_ch), proj(in_ch, out_ch, 1, stride), bnp(out_ch) {}

  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& gy);

  void init(Rng& rng) {
    conv1.init(rng);
    conv2.init(rng);
    proj.init(rng);
  }
  void collect(const std::string& prefix, ParamRefs& out) {
    conv1.collect(prefix + ".conv1", out);
    bn1.collect(prefix + ".bn1", out);
    conv2.collect(prefix + ".conv2", out);
    bn2.collect(prefix + ".bn2", out);
    proj.collect(prefix + ".proj", out);
    bnp.collect(prefix + ".bnp", out);
  }
  void set_training(bool t) {
    bn1.training = t;
    bn2.training = t;
    bnp.training = t;
  }

  Conv3d conv1;
  BatchNorm3d bn1;
  Conv3d conv2;
  BatchNorm3d bn2;
  Conv3d proj;
  BatchNorm3d bnp;

 private:
  ReLU relu1_, relu_out_;
};

}  // namespace nodx::nn
