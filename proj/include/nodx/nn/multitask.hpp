#pragma once

#include <array>
#include <string>
#include <vector>

#include "nodx/nn/blocks.hpp"

namespace nodx::nn {

struct NetworkConfig {
  std::array<int, 3> patch_extents{64, 64, 32};    // (x, y, z)
  std::vector<std::string> manifestation_names;    // K names, fixed order
  std::vector<int> encoder_channels{16, 32, 64};
  int bottom_channels = 128;
  int attention_levels = 3;  // conv+pool stages in the anatomical branch
  int residual_stride = 2;

  int k() const { return static_cast<int>(manifestation_names.size()); }
  void validate() const;
};

struct ForwardOutputs {
  Tensor diag_logit;             // (N)
  Tensor manif_logits;           // (N, K)
  Tensor sam_map_diag;           // (N, 1, d', h', w') at residual-block resolution
  Tensor sam_map_manif;
  Tensor fused_features_diag;    // (N, bottom_channels)
  Tensor fused_features_manif;
};

/// U-Net-like feature extractor with GMP high-level features, an anatomical
/// attention branch gated into the encoder after every pooling, and two
/// task-specific residual blocks each ending in a SAM module and an FC head.
class MultiTaskNet {
 public:
  explicit MultiTaskNet(NetworkConfig cfg);

  /// patch and probmap are (N, 1, D, H, W) with (D,H,W) = reversed patch_extents.
  ForwardOutputs forward(const Tensor& patch, const Tensor& probmap);

  /// gdiag is (N, 1); gmanif is (N, K). Returns (grad patch, grad probmap).
  std::pair<Tensor, Tensor> backward(const Tensor& gdiag, const Tensor& gmanif);

  void init(Rng& rng);
  void collect(ParamRefs& out);
  void set_training(bool t);

  const NetworkConfig& config() const { return cfg_; }

  /// Group id is the prefix before '/': extractor, anatomical_branch,
  /// aag_modules, diag, manif. The partition is total and disjoint.
  static std::string group_of(const std::string& param_name);

 private:
  NetworkConfig cfg_;
  int levels_;

  std::vector<ConvBlock> enc_a_, enc_b_;
  std::vector<MaxPool3d> pools_;
  std::vector<ConvBlock> anat_conv_;
  std::vector<MaxPool3d> anat_pools_;
  std::vector<AagGate> aags_;
  std::vector<UpsampleNearest2x> ups_;
  std::vector<ConvBlock> dec_a_, dec_b_;
  ConvBlock bot_a_, bot_b_;
  GlobalMaxPool gmp_;
  ResidualBlock res_diag_, res_manif_;
  SamModule sam_diag_, sam_manif_;
  Linear fc_diag_, fc_manif_;
};

/// Per-channel spatial maximum of a feature block (standalone helper).
Tensor global_max_pool(const Tensor& feats);

}  // namespace nodx::nn
