#pragma once

#include <memory>

#include "nodx/nn/blocks.hpp"

namespace nodx::nn {

/// Small 3-level encoder-decoder producing one logit per voxel.
/// channels = {level1, level2, bottom}; input spatial dims must be
/// divisible by 4.
class SegUnet {
 public:
  explicit SegUnet(std::vector<int> channels = {16, 32, 64});

  Tensor forward(const Tensor& x);            // (N,1,D,H,W) -> logits, same dims
  Tensor backward(const Tensor& glogits);

  void init(Rng& rng);
  void collect(ParamRefs& out);
  void set_training(bool t);

  const std::vector<int>& channels() const { return channels_; }

 private:
  std::vector<int> channels_;
  ConvBlock enc1a_, enc1b_, enc2a_, enc2b_, bota_, botb_;
  MaxPool3d pool1_, pool2_;
  UpsampleNearest2x up2_, up1_;
  ConvBlock dec2a_, dec2b_, dec1a_, dec1b_;
  Conv3d head_;
};

}  // namespace nodx::nn
