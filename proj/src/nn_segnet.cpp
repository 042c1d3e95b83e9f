#include "nodx/nn/segnet.hpp"

#include <stdexcept>

namespace nodx::nn {

SegUnet::SegUnet(std::vector<int> channels)
    : channels_(channels),
      enc1a_(1, channels.at(0)), enc1b_(channels.at(0), channels.at(0)),
      enc2a_(channels.at(0), channels.at(1)), enc2b_(channels.at(1), channels.at(1)),
      bota_(channels.at(1), channels.at(2)), botb_(channels.at(2), channels.at(2)),
      dec2a_(channels.at(2) + channels.at(1), channels.at(1)),
      dec2b_(channels.at(1), channels.at(1)),
      dec1a_(channels.at(1) + channels.at(0), channels.at(0)),
      dec1b_(channels.at(0), channels.at(0)),
      head_(channels.at(0), 1, 1) {
  if (channels.size() != 3) throw std::invalid_argument("SegUnet: expected 3 channel counts");
}

void SegUnet::init(Rng& rng) {
  enc1a_.init(rng);
  enc1b_.init(rng);
  enc2a_.init(rng);
  enc2b_.init(rng);
  bota_.init(rng);
  botb_.init(rng);
  dec2a_.init(rng);
  dec2b_.init(rng);
  dec1a_.init(rng);
  dec1b_.init(rng);
  head_.init(rng);
}

void SegUnet::collect(ParamRefs& out) {
  enc1a_.collect("seg/enc1a", out);
  enc1b_.collect("seg/enc1b", out);
  enc2a_.collect("seg/enc2a", out);
  enc2b_.collect("seg/enc2b", out);
  bota_.collect("seg/bota", out);
  botb_.collect("seg/botb", out);
  dec2a_.collect("seg/dec2a", out);
  dec2b_.collect("seg/dec2b", out);
  dec1a_.collect("seg/dec1a", out);
  dec1b_.collect("seg/dec1b", out);
  head_.collect("seg/head", out);
}

void SegUnet::set_training(bool t) {
  enc1a_.set_training(t);
  enc1b_.set_training(t);
  enc2a_.set_training(t);
  enc2b_.set_training(t);
  bota_.set_training(t);
  botb_.set_training(t);
  dec2a_.set_training(t);
  dec2b_.set_training(t);
  dec1a_.set_training(t);
  dec1b_.set_training(t);
}

Tensor SegUnet::forward(const Tensor& x) {
  if (x.ndim() != 5 || x.dim(1) != 1)
    throw std::invalid_argument("SegUnet: expected (N,1,D,H,W) input");
  const Tensor s1 = enc1b_.forward(enc1a_.forward(x));
  const Tensor p1 = pool1_.forward(s1);
  const Tensor s2 = enc2b_.forward(enc2a_.forward(p1));
  const Tensor p2 = pool2_.forward(s2);
  const Tensor b = botb_.forward(bota_.forward(p2));
  const Tensor d2 = dec2b_.forward(dec2a_.forward(concat_channels(up2_.forward(b), s2)));
  const Tensor d1 = dec1b_.forward(dec1a_.forward(concat_channels(up1_.forward(d2), s1)));
  return head_.forward(d1);
}

Tensor SegUnet::backward(const Tensor& glogits) {
  const Tensor gd1 = head_.backward(glogits);
  Tensor gcat1 = dec1a_.backward(dec1b_.backward(gd1));
  auto [gup1, gs1a] = split_channels(gcat1, channels_[1], channels_[0]);
  const Tensor gd2 = up1_.backward(gup1);
  Tensor gcat2 = dec2a_.backward(dec2b_.backward(gd2));
  auto [gup2, gs2a] = split_channels(gcat2, channels_[2], channels_[1]);
  const Tensor gb = up2_.backward(gup2);
  const Tensor gp2 = bota_.backward(botb_.backward(gb));
  Tensor gs2 = pool2_.backward(gp2);
  gs2 += gs2a;
  const Tensor gp1 = enc2a_.backward(enc2b_.backward(gs2));
  Tensor gs1 = pool1_.backward(gp1);
  gs1 += gs1a;
  return enc1a_.backward(enc1b_.backward(gs1));
}

}  // namespace nodx::nn
