#include "nodx/nn/multitask.hpp"

#include <stdexcept>

namespace nodx::nn {

void NetworkConfig::validate() const {
  if (manifestation_names.empty())
    throw std::invalid_argument("NetworkConfig: manifestation_names must be nonempty");
  if (encoder_channels.empty())
    throw std::invalid_argument("NetworkConfig: encoder_channels must be nonempty");
  if (attention_levels != static_cast<int>(encoder_channels.size()))
    throw std::invalid_argument(
        "NetworkConfig: attention_levels must equal the number of encoder levels");
  for (int c : encoder_channels)
    if (c <= 0) throw std::invalid_argument("NetworkConfig: channel counts must be positive");
  if (bottom_channels <= 0)
    throw std::invalid_argument("NetworkConfig: bottom_channels must be positive");
  if (residual_stride != 1 && residual_stride != 2)
    throw std::invalid_argument("NetworkConfig: residual_stride must be 1 or 2");
  const int div = 1 << attention_levels;
  for (int a = 0; a < 3; ++a)
    if (patch_extents[a] <= 0 || patch_extents[a] % div != 0)
      throw std::invalid_argument(
          "NetworkConfig: patch extents must be positive and divisible by 2^attention_levels");
}

namespace {
NetworkConfig validated(NetworkConfig cfg) {
  cfg.validate();
  return cfg;
}
}  // namespace

MultiTaskNet::MultiTaskNet(NetworkConfig cfg)
    : cfg_(validated(std::move(cfg))),
      levels_(cfg_.attention_levels),
      bot_a_(cfg_.encoder_channels.back(), cfg_.bottom_channels),
      bot_b_(cfg_.bottom_channels, cfg_.bottom_channels),
      res_diag_(cfg_.encoder_channels.front(), cfg_.bottom_channels, cfg_.residual_stride),
      res_manif_(cfg_.encoder_channels.front(), cfg_.bottom_channels, cfg_.residual_stride),
      fc_diag_(cfg_.bottom_channels, 1),
      fc_manif_(cfg_.bottom_channels, cfg_.k()) {
  const auto& ch = cfg_.encoder_channels;
  const int cb = cfg_.bottom_channels;
  for (int i = 0; i < levels_; ++i) {
    const int cin = i == 0 ? 1 : ch[i - 1];
    enc_a_.emplace_back(cin, ch[i]);
    enc_b_.emplace_back(ch[i], ch[i]);
    pools_.emplace_back();
    anat_conv_.emplace_back(cin, ch[i]);
    anat_pools_.emplace_back();
    aags_.emplace_back(ch[i], ch[i]);
    ups_.emplace_back();
    const int up_ch = i == levels_ - 1 ? cb : ch[i + 1];
    dec_a_.emplace_back(up_ch + ch[i], ch[i]);
    dec_b_.emplace_back(ch[i], ch[i]);
  }
}

void MultiTaskNet::init(Rng& rng) {
  for (int i = 0; i < levels_; ++i) {
    enc_a_[i].init(rng);
    enc_b_[i].init(rng);
    anat_conv_[i].init(rng);
    aags_[i].init(rng);
    dec_a_[i].init(rng);
    dec_b_[i].init(rng);
  }
  bot_a_.init(rng);
  bot_b_.init(rng);
  res_diag_.init(rng);
  res_manif_.init(rng);
  fc_diag_.init(rng);
  fc_manif_.init(rng);
}

void MultiTaskNet::collect(ParamRefs& out) {
  for (int i = 0; i < levels_; ++i) {
    const std::string n = std::to_string(i + 1);
    enc_a_[i].collect("extractor/enc" + n + "a", out);
    enc_b_[i].collect("extractor/enc" + n + "b", out);
    anat_conv_[i].collect("anatomical_branch/conv" + n, out);
    aags_[i].collect("aag_modules/aag" + n, out);
    dec_a_[i].collect("extractor/dec" + n + "a", out);
    dec_b_[i].collect("extractor/dec" + n + "b", out);
  }
  bot_a_.collect("extractor/bota", out);
  bot_b_.collect("extractor/botb", out);
  res_diag_.collect("diag/res", out);
  fc_diag_.collect("diag/fc", out);
  res_manif_.collect("manif/res", out);
  fc_manif_.collect("manif/fc", out);
}

void MultiTaskNet::set_training(bool t) {
  for (int i = 0; i < levels_; ++i) {
    enc_a_[i].set_training(t);
    enc_b_[i].set_training(t);
    anat_conv_[i].set_training(t);
    dec_a_[i].set_training(t);
    dec_b_[i].set_training(t);
  }
  bot_a_.set_training(t);
  bot_b_.set_training(t);
  res_diag_.set_training(t);
  res_manif_.set_training(t);
}

std::string MultiTaskNet::group_of(const std::string& param_name) {
  const auto slash = param_name.find('/');
  if (slash == std::string::npos)
    throw std::invalid_argument("group_of: parameter name without group prefix");
  return param_name.substr(0, slash);
}

ForwardOutputs MultiTaskNet::forward(const Tensor& patch, const Tensor& probmap) {
  const auto check_extents = [&](const Tensor& t, const char* who) {
    if (t.ndim() != 5 || t.dim(1) != 1 || t.dim(2) != cfg_.patch_extents[2] ||
        t.dim(3) != cfg_.patch_extents[1] || t.dim(4) != cfg_.patch_extents[0])
      throw std::invalid_argument(std::string("MultiTaskNet: ") + who +
                                  " extents do not match the configured patch size");
  };
  check_extents(patch, "patch");
  check_extents(probmap, "probability map");
  if (patch.dim(0) != probmap.dim(0))
    throw std::invalid_argument("MultiTaskNet: batch size mismatch");
  if (!all_finite(patch) || !all_finite(probmap))
    throw std::runtime_error("MultiTaskNet: non-finite values in forward inputs");

  std::vector<Tensor> skips(static_cast<size_t>(levels_));
  Tensor p = patch;
  Tensor a = probmap;
  for (int i = 0; i < levels_; ++i) {
    Tensor t = enc_b_[i].forward(enc_a_[i].forward(p));
    skips[i] = t;
    Tensor pooled = pools_[i].forward(t);
    a = anat_pools_[i].forward(anat_conv_[i].forward(a));
    p = aags_[i].forward(pooled, a);
  }
  const Tensor bottom = bot_b_.forward(bot_a_.forward(p));
  const Tensor high = gmp_.forward(bottom);

  Tensor d = bottom;
  for (int i = levels_ - 1; i >= 0; --i) {
    d = concat_channels(ups_[i].forward(d), skips[i]);
    d = dec_b_[i].forward(dec_a_[i].forward(d));
  }

  const Tensor rd = res_diag_.forward(d);
  const Tensor rm = res_manif_.forward(d);
  auto sd = sam_diag_.forward(rd);
  auto sm = sam_manif_.forward(rm);

  ForwardOutputs out;
  out.fused_features_diag = sd.feature_vector;
  out.fused_features_diag += high;
  out.fused_features_manif = sm.feature_vector;
  out.fused_features_manif += high;
  const Tensor dl = fc_diag_.forward(out.fused_features_diag);
  out.manif_logits = fc_manif_.forward(out.fused_features_manif);
  out.diag_logit = Tensor({dl.dim(0)});
  for (int i = 0; i < dl.dim(0); ++i) out.diag_logit[i] = dl.at2(i, 0);
  out.sam_map_diag = std::move(sd.activation_map);
  out.sam_map_manif = std::move(sm.activation_map);

  if (!all_finite(out.diag_logit) || !all_finite(out.manif_logits))
    throw std::runtime_error("MultiTaskNet: non-finite logits (diverged forward pass)");
  return out;
}

std::pair<Tensor, Tensor> MultiTaskNet::backward(const Tensor& gdiag, const Tensor& gmanif) {
  Tensor gfused_d = fc_diag_.backward(gdiag);
  Tensor gfused_m = fc_manif_.backward(gmanif);

  Tensor ghigh = gfused_d;
  ghigh += gfused_m;

  const Tensor grd = sam_diag_.backward(gfused_d);
  const Tensor grm = sam_manif_.backward(gfused_m);
  Tensor gd = res_diag_.backward(grd);
  gd += res_manif_.backward(grm);

  // decoder backward, collecting skip and bottom gradients
  std::vector<Tensor> gskips(static_cast<size_t>(levels_));
  Tensor gbottom_from_dec;
  for (int i = 0; i < levels_; ++i) {
    Tensor gcat = dec_a_[i].backward(dec_b_[i].backward(gd));
    const int up_ch = i == levels_ - 1 ? cfg_.bottom_channels : cfg_.encoder_channels[i + 1];
    auto [gup, gskip] = split_channels(gcat, up_ch, cfg_.encoder_channels[i]);
    gskips[i] = std::move(gskip);
    gd = ups_[i].backward(gup);
  }
  gbottom_from_dec = std::move(gd);

  Tensor gbottom = gmp_.backward(ghigh);
  gbottom += gbottom_from_dec;
  Tensor gaag_out = bot_a_.backward(bot_b_.backward(gbottom));

  std::vector<Tensor> ganat(static_cast<size_t>(levels_));
  Tensor gpatch;
  for (int i = levels_ - 1; i >= 0; --i) {
    auto [gpooled, ga] = aags_[i].backward(gaag_out);
    ganat[i] = std::move(ga);
    Tensor gt = pools_[i].backward(gpooled);
    gt += gskips[i];
    Tensor glower = enc_a_[i].backward(enc_b_[i].backward(gt));
    if (i > 0)
      gaag_out = std::move(glower);
    else
      gpatch = std::move(glower);
  }

  Tensor gprobmap;
  for (int i = levels_ - 1; i >= 0; --i) {
    Tensor gstage = std::move(ganat[i]);
    if (i < levels_ - 1) gstage += gprobmap;
    gprobmap = anat_conv_[i].backward(anat_pools_[i].backward(gstage));
  }
  return {std::move(gpatch), std::move(gprobmap)};
}

Tensor global_max_pool(const Tensor& feats) {
  GlobalMaxPool pool;
  return pool.forward(feats);
}

}  // namespace nodx::nn
