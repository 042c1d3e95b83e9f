#include "nodx/nn/blocks.hpp"

#include <cmath>
#include <stdexcept>

namespace nodx::nn {

// --- AagGate -------------------------------------------------------------------

Tensor AagGate::forward(const Tensor& image_feats, const Tensor& roi_feats) {
  for (int i : {0, 2, 3, 4})
    if (image_feats.dim(i) != roi_feats.dim(i))
      throw std::invalid_argument("AagGate: spatial extents of image and ROI features differ");
  if (image_feats.dim(1) != image_ch_ || roi_feats.dim(1) != roi_ch_)
    throw std::invalid_argument("AagGate: channel mismatch");

  img_ = image_feats;
  const Tensor cat = concat_channels(image_feats, roi_feats);
  Tensor z1 = gate1.forward(cat);
  Tensor z2 = gate2.forward(cat);
  g1_ = Tensor(z1.shape());
  g2_ = Tensor(z2.shape());
  for (size_t i = 0; i < z1.numel(); ++i) {
    g1_[i] = sigmoid(z1[i]);
    g2_[i] = sigmoid(z2[i]);
  }

  const int n = image_feats.dim(0), c = image_feats.dim(1);
  const size_t v = static_cast<size_t>(image_feats.dim(2)) * image_feats.dim(3) *
                   image_feats.dim(4);
  Tensor y(image_feats.shape());
  for (int i = 0; i < n; ++i) {
    const double* g1p = g1_.data() + i * v;
    const double* g2p = g2_.data() + i * v;
    for (int ci = 0; ci < c; ++ci) {
      const double* xp = image_feats.data() + (static_cast<size_t>(i) * c + ci) * v;
      double* yp = y.data() + (static_cast<size_t>(i) * c + ci) * v;
      for (size_t j = 0; j < v; ++j) yp[j] = xp[j] * (g1p[j] + g2p[j]);
    }
  }
  return y;
}

std::pair<Tensor, Tensor> AagGate::backward(const Tensor& gy) {
  const int n = img_.dim(0), c = img_.dim(1);
  const size_t v = static_cast<size_t>(img_.dim(2)) * img_.dim(3) * img_.dim(4);

  Tensor dimg(img_.shape());
  Tensor dz1(g1_.shape()), dz2(g2_.shape());
  for (int i = 0; i < n; ++i) {
    const double* g1p = g1_.data() + i * v;
    const double* g2p = g2_.data() + i * v;
    double* dz1p = dz1.data() + i * v;
    double* dz2p = dz2.data() + i * v;
    for (size_t j = 0; j < v; ++j) {
      double gsum = 0.0;
      for (int ci = 0; ci < c; ++ci) {
        const size_t o = (static_cast<size_t>(i) * c + ci) * v + j;
        gsum += gy[o] * img_[o];
        dimg[o] = gy[o] * (g1p[j] + g2p[j]);
      }
      dz1p[j] = gsum * g1p[j] * (1.0 - g1p[j]);
      dz2p[j] = gsum * g2p[j] * (1.0 - g2p[j]);
    }
  }

  Tensor dcat = gate1.backward(dz1);
  dcat += gate2.backward(dz2);
  auto [dimg_gate, droi] = split_channels(dcat, image_ch_, roi_ch_);
  dimg += dimg_gate;
  return {std::move(dimg), std::move(droi)};
}

// --- SamModule -----------------------------------------------------------------

SamModule::Outputs SamModule::forward(const Tensor& feats) {
  if (feats.ndim() != 5) throw std::invalid_argument("SamModule: expected 5-d tensor");
  feats_ = feats;
  const int n = feats.dim(0), c = feats.dim(1);
  const size_t v = static_cast<size_t>(feats.dim(2)) * feats.dim(3) * feats.dim(4);

  Outputs out;
  out.activation_map = Tensor({n, 1, feats.dim(2), feats.dim(3), feats.dim(4)});
  out.feature_vector = Tensor({n, c});
  weights_ = Tensor(out.activation_map.shape());
  spatial_sum_.assign(static_cast<size_t>(n), 0.0);

  for (int i = 0; i < n; ++i) {
    double* map = out.activation_map.data() + i * v;
    for (size_t j = 0; j < v; ++j) {
      double acc = 0.0;
      for (int ci = 0; ci < c; ++ci)
        acc += std::fabs(feats[(static_cast<size_t>(i) * c + ci) * v + j]);
      map[j] = acc / c;
    }
    double s = 0.0;
    for (size_t j = 0; j < v; ++j) s += map[j];
    spatial_sum_[i] = s;
    double* wp = weights_.data() + i * v;
    if (s > 0.0) {
      for (size_t j = 0; j < v; ++j) wp[j] = map[j] / s;
    } else {
      const double uniform = 1.0 / static_cast<double>(v);
      for (size_t j = 0; j < v; ++j) wp[j] = uniform;
    }
    for (int ci = 0; ci < c; ++ci) {
      const double* fp = feats.data() + (static_cast<size_t>(i) * c + ci) * v;
      double acc = 0.0;
      for (size_t j = 0; j < v; ++j) acc += wp[j] * fp[j];
      out.feature_vector.at2(i, ci) = acc;
    }
  }
  map_ = out.activation_map;
  return out;
}

Tensor SamModule::backward(const Tensor& gvec, const Tensor* gmap) {
  const int n = feats_.dim(0), c = feats_.dim(1);
  const size_t v = feats_.numel() / (static_cast<size_t>(n) * c);
  Tensor gx(feats_.shape());

  for (int i = 0; i < n; ++i) {
    const double* wp = weights_.data() + i * v;
    const double s = spatial_sum_[i];

    // T = sum_c gvec_c * v_c = sum_x g(x) w(x), with g(x) = sum_c gvec_c f_c(x).
    std::vector<double> gspace(v, 0.0);
    for (int ci = 0; ci < c; ++ci) {
      const double gv = gvec.at2(i, ci);
      const double* fp = feats_.data() + (static_cast<size_t>(i) * c + ci) * v;
      for (size_t j = 0; j < v; ++j) gspace[j] += gv * fp[j];
    }
    double t = 0.0;
    for (size_t j = 0; j < v; ++j) t += gspace[j] * wp[j];

    for (int ci = 0; ci < c; ++ci) {
      const double gv = gvec.at2(i, ci);
      const double* fp = feats_.data() + (static_cast<size_t>(i) * c + ci) * v;
      double* gp = gx.data() + (static_cast<size_t>(i) * c + ci) * v;
      for (size_t j = 0; j < v; ++j) {
        double grad = gv * wp[j];
        const double sgn = fp[j] > 0.0 ? 1.0 : (fp[j] < 0.0 ? -1.0 : 0.0);
        if (s > 0.0) grad += (gspace[j] - t) / s * sgn / c;
        if (gmap) grad += (*gmap)[i * v + j] * sgn / c;
        gp[j] = grad;
      }
    }
  }
  return gx;
}

// --- GlobalMaxPool ----------------------------------------------------------------

Tensor GlobalMaxPool::forward(const Tensor& x) {
  if (x.ndim() != 5) throw std::invalid_argument("GlobalMaxPool: expected 5-d tensor");
  in_shape_ = x.shape();
  const int n = x.dim(0), c = x.dim(1);
  const size_t v = x.numel() / (static_cast<size_t>(n) * c);
  Tensor y({n, c});
  argmax_.assign(static_cast<size_t>(n) * c, 0);
  for (int i = 0; i < n; ++i)
    for (int ci = 0; ci < c; ++ci) {
      const double* p = x.data() + (static_cast<size_t>(i) * c + ci) * v;
      double best = p[0];
      size_t best_j = 0;
      for (size_t j = 1; j < v; ++j)
        if (p[j] > best) {
          best = p[j];
          best_j = j;
        }
      y.at2(i, ci) = best;
      argmax_[static_cast<size_t>(i) * c + ci] = best_j;
    }
  return y;
}

Tensor GlobalMaxPool::backward(const Tensor& gy) {
  Tensor gx(in_shape_);
  const int n = in_shape_[0], c = in_shape_[1];
  const size_t v = gx.numel() / (static_cast<size_t>(n) * c);
  for (int i = 0; i < n; ++i)
    for (int ci = 0; ci < c; ++ci)
      gx[(static_cast<size_t>(i) * c + ci) * v + argmax_[static_cast<size_t>(i) * c + ci]] +=
          gy.at2(i, ci);
  return gx;
}

// --- ResidualBlock ----------------------------------------------------------------

Tensor ResidualBlock::forward(const Tensor& x) {
  Tensor main = bn2.forward(conv2.forward(relu1_.forward(bn1.forward(conv1.forward(x)))));
  Tensor skip = bnp.forward(proj.forward(x));
  main += skip;
  return relu_out_.forward(main);
}

Tensor ResidualBlock::backward(const Tensor& gy) {
  const Tensor g = relu_out_.backward(gy);
  Tensor gx = conv1.backward(bn1.backward(relu1_.backward(conv2.backward(bn2.backward(g)))));
  gx += proj.backward(bnp.backward(g));
  return gx;
}

}  // namespace nodx::nn
