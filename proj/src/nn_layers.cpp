#include "nodx/nn/layers.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>

#ifdef _OPENMP
#include <omp.h>
#endif

namespace nodx::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ColMat = Eigen::MatrixXd;

int conv_out_dim(int in, int kernel, int stride, int pad) {
  return (in + 2 * pad - kernel) / stride + 1;
}

void require_5d(const Tensor& x, const char* who) {
  if (x.ndim() != 5) throw std::invalid_argument(std::string(who) + ": expected 5-d tensor");
}

/// Valid output range [lo, hi) along one axis for a kernel tap: indices o with
/// 0 <= o*stride + tap - pad < in.
inline std::pair<int, int> tap_range(int in, int out, int stride, int tap, int pad) {
  int lo = 0;
  while (lo < out && lo * stride + tap - pad < 0) ++lo;
  int hi = ((in - 1) - tap + pad) / stride + 1;
  if (hi > out) hi = out;
  return {lo, hi < lo ? lo : hi};
}

/// Direct convolution for one sample: shifted-row accumulation with a
/// contiguous inner loop over the fastest axis.
void conv_direct_forward(const double* __restrict__ x, double* __restrict__ y, const double* __restrict__ weight, const double* __restrict__ bias,
                         int in_ch, int out_ch, int kernel, int stride, int pad, int d, int h,
                         int w, int od, int oh, int ow) {
  const size_t in_cv = static_cast<size_t>(d) * h * w;
  const size_t out_cv = static_cast<size_t>(od) * oh * ow;
  for (int oc = 0; oc < out_ch; ++oc) {
    double* yc = y + static_cast<size_t>(oc) * out_cv;
    std::fill(yc, yc + out_cv, bias[oc]);
  }
  for (int oc = 0; oc < out_ch; ++oc) {
    double* yc = y + static_cast<size_t>(oc) * out_cv;
    for (int ic = 0; ic < in_ch; ++ic) {
      const double* xc = x + static_cast<size_t>(ic) * in_cv;
      const double* wk = weight + ((static_cast<size_t>(oc) * in_ch + ic)) *
                                      (static_cast<size_t>(kernel) * kernel * kernel);
      for (int kd = 0; kd < kernel; ++kd) {
        const auto [zlo, zhi] = tap_range(d, od, stride, kd, pad);
        for (int kh = 0; kh < kernel; ++kh) {
          const auto [ylo, yhi] = tap_range(h, oh, stride, kh, pad);
          for (int kw = 0; kw < kernel; ++kw) {
            const double wv = wk[(kd * kernel + kh) * kernel + kw];
            if (wv == 0.0) continue;
            const auto [xlo, xhi] = tap_range(w, ow, stride, kw, pad);
            for (int oz = zlo; oz < zhi; ++oz) {
              const int z = oz * stride + kd - pad;
              for (int oy = ylo; oy < yhi; ++oy) {
                const int yy = oy * stride + kh - pad;
                double* yrow = yc + (static_cast<size_t>(oz) * oh + oy) * ow;
                const double* xrow = xc + (static_cast<size_t>(z) * h + yy) * w + (kw - pad);
                if (stride == 1) {
                  for (int ox = xlo; ox < xhi; ++ox) yrow[ox] += wv * xrow[ox];
                } else {
                  for (int ox = xlo; ox < xhi; ++ox) yrow[ox] += wv * xrow[ox * stride];
                }
              }
            }
          }
        }
      }
    }
  }
}

/// Gradient with respect to the input (scatter form of the forward loops).
void conv_direct_backward_input(double* __restrict__ gx, const double* __restrict__ gy, const double* __restrict__ weight, int in_ch,
                                int out_ch, int kernel, int stride, int pad, int d, int h,
                                int w, int od, int oh, int ow) {
  const size_t in_cv = static_cast<size_t>(d) * h * w;
  const size_t out_cv = static_cast<size_t>(od) * oh * ow;
  for (int oc = 0; oc < out_ch; ++oc) {
    const double* gyc = gy + static_cast<size_t>(oc) * out_cv;
    for (int ic = 0; ic < in_ch; ++ic) {
      double* gxc = gx + static_cast<size_t>(ic) * in_cv;
      const double* wk = weight + ((static_cast<size_t>(oc) * in_ch + ic)) *
                                      (static_cast<size_t>(kernel) * kernel * kernel);
      for (int kd = 0; kd < kernel; ++kd) {
        const auto [zlo, zhi] = tap_range(d, od, stride, kd, pad);
        for (int kh = 0; kh < kernel; ++kh) {
          const auto [ylo, yhi] = tap_range(h, oh, stride, kh, pad);
          for (int kw = 0; kw < kernel; ++kw) {
            const double wv = wk[(kd * kernel + kh) * kernel + kw];
            if (wv == 0.0) continue;
            const auto [xlo, xhi] = tap_range(w, ow, stride, kw, pad);
            for (int oz = zlo; oz < zhi; ++oz) {
              const int z = oz * stride + kd - pad;
              for (int oy = ylo; oy < yhi; ++oy) {
                const int yy = oy * stride + kh - pad;
                const double* gyrow = gyc + (static_cast<size_t>(oz) * oh + oy) * ow;
                double* gxrow = gxc + (static_cast<size_t>(z) * h + yy) * w + (kw - pad);
                if (stride == 1) {
                  for (int ox = xlo; ox < xhi; ++ox) gxrow[ox] += wv * gyrow[ox];
                } else {
                  for (int ox = xlo; ox < xhi; ++ox) gxrow[ox * stride] += wv * gyrow[ox];
                }
              }
            }
          }
        }
      }
    }
  }
}

/// Weight gradient: per-tap dot products of gy rows against shifted x rows.
void conv_direct_backward_weight(const double* __restrict__ x, const double* __restrict__ gy, double* __restrict__ gw, double* __restrict__ gb,
                                 int in_ch, int out_ch, int kernel, int stride, int pad, int d,
                                 int h, int w, int od, int oh, int ow) {
  const size_t in_cv = static_cast<size_t>(d) * h * w;
  const size_t out_cv = static_cast<size_t>(od) * oh * ow;
  for (int oc = 0; oc < out_ch; ++oc) {
    const double* gyc = gy + static_cast<size_t>(oc) * out_cv;
    double bacc = 0.0;
    for (size_t i = 0; i < out_cv; ++i) bacc += gyc[i];
    gb[oc] += bacc;
    for (int ic = 0; ic < in_ch; ++ic) {
      const double* xc = x + static_cast<size_t>(ic) * in_cv;
      double* wk = gw + ((static_cast<size_t>(oc) * in_ch + ic)) *
                       (static_cast<size_t>(kernel) * kernel * kernel);
      for (int kd = 0; kd < kernel; ++kd) {
        const auto [zlo, zhi] = tap_range(d, od, stride, kd, pad);
        for (int kh = 0; kh < kernel; ++kh) {
          const auto [ylo, yhi] = tap_range(h, oh, stride, kh, pad);
          for (int kw = 0; kw < kernel; ++kw) {
            const auto [xlo, xhi] = tap_range(w, ow, stride, kw, pad);
            // four independent accumulator chains: a fixed reassociation that
            // keeps results deterministic while freeing instruction-level
            // parallelism that a single serial FP chain forbids
            double a0 = 0.0, a1 = 0.0, a2 = 0.0, a3 = 0.0;
            for (int oz = zlo; oz < zhi; ++oz) {
              const int z = oz * stride + kd - pad;
              for (int oy = ylo; oy < yhi; ++oy) {
                const int yy = oy * stride + kh - pad;
                const double* gyrow = gyc + (static_cast<size_t>(oz) * oh + oy) * ow;
                const double* xrow = xc + (static_cast<size_t>(z) * h + yy) * w + (kw - pad);
                int ox = xlo;
                if (stride == 1) {
                  for (; ox + 4 <= xhi; ox += 4) {
                    a0 += gyrow[ox] * xrow[ox];
                    a1 += gyrow[ox + 1] * xrow[ox + 1];
                    a2 += gyrow[ox + 2] * xrow[ox + 2];
                    a3 += gyrow[ox + 3] * xrow[ox + 3];
                  }
                  for (; ox < xhi; ++ox) a0 += gyrow[ox] * xrow[ox];
                } else {
                  for (; ox + 4 <= xhi; ox += 4) {
                    a0 += gyrow[ox] * xrow[ox * stride];
                    a1 += gyrow[ox + 1] * xrow[(ox + 1) * stride];
                    a2 += gyrow[ox + 2] * xrow[(ox + 2) * stride];
                    a3 += gyrow[ox + 3] * xrow[(ox + 3) * stride];
                  }
                  for (; ox < xhi; ++ox) a0 += gyrow[ox] * xrow[ox * stride];
                }
              }
            }
            wk[(kd * kernel + kh) * kernel + kw] += (a0 + a1) + (a2 + a3);
          }
        }
      }
    }
  }
}

/// Gathers receptive fields for output voxels [m_begin, m_end) into a
/// column-major (K x chunk) matrix, K = C*k^3. Out-of-bounds taps are zero.
void im2col_range(const double* __restrict__ x, int ch, int d, int h, int w, int kernel,
                  int stride, int pad, int oh, int ow, size_t m_begin, size_t m_end,
                  double* __restrict__ col) {
  const int k3 = kernel * kernel * kernel;
  const size_t kk = static_cast<size_t>(ch) * k3;
  for (size_t m = m_begin; m < m_end; ++m) {
    double* column = col + (m - m_begin) * kk;
    const int wx = static_cast<int>(m % ow);
    const int hy = static_cast<int>((m / ow) % oh);
    const int dz = static_cast<int>(m / (static_cast<size_t>(ow) * oh));
    const int bz = dz * stride - pad;
    const int by = hy * stride - pad;
    const int bx = wx * stride - pad;
    size_t r = 0;
    for (int c = 0; c < ch; ++c) {
      const double* xc = x + static_cast<size_t>(c) * d * h * w;
      for (int kd = 0; kd < kernel; ++kd) {
        const int z = bz + kd;
        const bool zin = z >= 0 && z < d;
        for (int kh = 0; kh < kernel; ++kh) {
          const int y = by + kh;
          const bool yin = zin && y >= 0 && y < h;
          const double* xrow = yin ? xc + (static_cast<size_t>(z) * h + y) * w : nullptr;
          for (int kw = 0; kw < kernel; ++kw, ++r) {
            const int xx = bx + kw;
            column[r] = (yin && xx >= 0 && xx < w) ? xrow[xx] : 0.0;
          }
        }
      }
    }
  }
}

/// Adjoint of im2col_range: scatter-adds the columns back into gx.
void col2im_range(const double* __restrict__ col, int ch, int d, int h, int w, int kernel,
                  int stride, int pad, int oh, int ow, size_t m_begin, size_t m_end,
                  double* __restrict__ gx) {
  const int k3 = kernel * kernel * kernel;
  const size_t kk = static_cast<size_t>(ch) * k3;
  for (size_t m = m_begin; m < m_end; ++m) {
    const double* column = col + (m - m_begin) * kk;
    const int wx = static_cast<int>(m % ow);
    const int hy = static_cast<int>((m / ow) % oh);
    const int dz = static_cast<int>(m / (static_cast<size_t>(ow) * oh));
    const int bz = dz * stride - pad;
    const int by = hy * stride - pad;
    const int bx = wx * stride - pad;
    size_t r = 0;
    for (int c = 0; c < ch; ++c) {
      double* gc = gx + static_cast<size_t>(c) * d * h * w;
      for (int kd = 0; kd < kernel; ++kd) {
        const int z = bz + kd;
        const bool zin = z >= 0 && z < d;
        for (int kh = 0; kh < kernel; ++kh) {
          const int y = by + kh;
          const bool yin = zin && y >= 0 && y < h;
          double* grow = yin ? gc + (static_cast<size_t>(z) * h + y) * w : nullptr;
          for (int kw = 0; kw < kernel; ++kw, ++r) {
            const int xx = bx + kw;
            if (yin && xx >= 0 && xx < w) grow[xx] += column[r];
          }
        }
      }
    }
  }
}

constexpr size_t kColChunk = 2048;  // output voxels per GEMM tile

/// GEMM pays off once enough arithmetic amortizes the column gather.
inline bool use_gemm_path(int in_ch, int out_ch) { return in_ch * out_ch >= 32; }

}  // namespace

void he_init(Tensor& w, int fan_in, Rng& rng) {
  const double sd = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (size_t i = 0; i < w.numel(); ++i) w[i] = rng.normal(0.0, sd);
}

// --- Conv3d ------------------------------------------------------------------

Conv3d::Conv3d(int in_ch, int out_ch, int kernel, int stride)
    : in_ch_(in_ch), out_ch_(out_ch), kernel_(kernel), stride_(stride), pad_(kernel / 2) {
  if (kernel != 1 && kernel != 3) throw std::invalid_argument("Conv3d: kernel must be 1 or 3");
  if (stride != 1 && stride != 2) throw std::invalid_argument("Conv3d: stride must be 1 or 2");
  weight = Tensor({out_ch, in_ch, kernel, kernel, kernel});
  bias = Tensor({out_ch});
  wgrad = Tensor({out_ch, in_ch, kernel, kernel, kernel});
  bgrad = Tensor({out_ch});
}

void Conv3d::init(Rng& rng) {
  he_init(weight, in_ch_ * kernel_ * kernel_ * kernel_, rng);
  bias.zero();
}

void Conv3d::collect(const std::string& prefix, ParamRefs& out) {
  out.push_back({prefix + ".weight", &weight, &wgrad});
  out.push_back({prefix + ".bias", &bias, &bgrad});
}

Tensor Conv3d::forward(const Tensor& x) {
  require_5d(x, "Conv3d");
  if (x.dim(1) != in_ch_) throw std::invalid_argument("Conv3d: channel mismatch");
  x_ = x;
  const int n = x.dim(0), d = x.dim(2), h = x.dim(3), w = x.dim(4);
  const int od = conv_out_dim(d, kernel_, stride_, pad_);
  const int oh = conv_out_dim(h, kernel_, stride_, pad_);
  const int ow = conv_out_dim(w, kernel_, stride_, pad_);
  Tensor y({n, out_ch_, od, oh, ow});

  const size_t in_stride = static_cast<size_t>(in_ch_) * d * h * w;
  const size_t out_stride = static_cast<size_t>(out_ch_) * od * oh * ow;

  if (kernel_ == 1 && stride_ == 1) {
    // pointwise convolution is one GEMM per sample, no gather needed
    const size_t m = static_cast<size_t>(od) * oh * ow;
    Eigen::Map<const RowMat> wm(weight.data(), out_ch_, in_ch_);
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i) {
      Eigen::Map<const RowMat> xm(x.data() + i * in_stride, in_ch_,
                                  static_cast<Eigen::Index>(m));
      Eigen::Map<RowMat> ym(y.data() + i * out_stride, out_ch_, static_cast<Eigen::Index>(m));
      ym.noalias() = wm * xm;
      for (int c = 0; c < out_ch_; ++c) ym.row(c).array() += bias[c];
    }
  } else if (use_gemm_path(in_ch_, out_ch_)) {
    const size_t m = static_cast<size_t>(od) * oh * ow;
    const size_t kk = static_cast<size_t>(in_ch_) * kernel_ * kernel_ * kernel_;
    Eigen::Map<const RowMat> wm(weight.data(), out_ch_, static_cast<Eigen::Index>(kk));
#pragma omp parallel
    {
      std::vector<double> col(kk * std::min(m, kColChunk));
#pragma omp for schedule(static)
      for (int i = 0; i < n; ++i) {
        for (size_t m0 = 0; m0 < m; m0 += kColChunk) {
          const size_t m1 = std::min(m, m0 + kColChunk);
          im2col_range(x.data() + i * in_stride, in_ch_, d, h, w, kernel_, stride_, pad_, oh,
                       ow, m0, m1, col.data());
          Eigen::Map<const ColMat> cm(col.data(), static_cast<Eigen::Index>(kk),
                                      static_cast<Eigen::Index>(m1 - m0));
          Eigen::Map<RowMat, 0, Eigen::OuterStride<>> ym(
              y.data() + i * out_stride + m0, out_ch_, static_cast<Eigen::Index>(m1 - m0),
              Eigen::OuterStride<>(static_cast<Eigen::Index>(m)));
          ym.noalias() = wm * cm;
        }
        double* yp = y.data() + i * out_stride;
        for (int c = 0; c < out_ch_; ++c)
          for (size_t j = 0; j < m; ++j) yp[static_cast<size_t>(c) * m + j] += bias[c];
      }
    }
  } else {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i)
      conv_direct_forward(x.data() + i * in_stride, y.data() + i * out_stride, weight.data(),
                          bias.data(), in_ch_, out_ch_, kernel_, stride_, pad_, d, h, w, od,
                          oh, ow);
  }
  return y;
}

Tensor Conv3d::backward(const Tensor& gy) {
  const int n = x_.dim(0), d = x_.dim(2), h = x_.dim(3), w = x_.dim(4);
  const int od = gy.dim(2), oh = gy.dim(3), ow = gy.dim(4);
  Tensor gx(x_.shape());

  const size_t kk = weight.numel() / out_ch_;
  const size_t in_stride = static_cast<size_t>(in_ch_) * d * h * w;
  const size_t out_stride = static_cast<size_t>(out_ch_) * od * oh * ow;

  // Per-sample weight-gradient partials reduced in sample order afterwards,
  // so results do not depend on the number of threads.
  std::vector<double> wpart(static_cast<size_t>(n) * out_ch_ * kk, 0.0);
  std::vector<double> bpart(static_cast<size_t>(n) * out_ch_, 0.0);

  if (kernel_ == 1 && stride_ == 1) {
    const size_t m = static_cast<size_t>(od) * oh * ow;
    Eigen::Map<const RowMat> wm(weight.data(), out_ch_, in_ch_);
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i) {
      Eigen::Map<const RowMat> gym(gy.data() + i * out_stride, out_ch_,
                                   static_cast<Eigen::Index>(m));
      Eigen::Map<const RowMat> xm(x_.data() + i * in_stride, in_ch_,
                                  static_cast<Eigen::Index>(m));
      Eigen::Map<RowMat> gxm(gx.data() + i * in_stride, in_ch_, static_cast<Eigen::Index>(m));
      gxm.noalias() = wm.transpose() * gym;
      Eigen::Map<RowMat> wpm(wpart.data() + i * static_cast<size_t>(out_ch_) * kk, out_ch_,
                             in_ch_);
      wpm.noalias() = gym * xm.transpose();
      for (int c = 0; c < out_ch_; ++c)
        bpart[static_cast<size_t>(i) * out_ch_ + c] = gym.row(c).sum();
    }
  } else if (use_gemm_path(in_ch_, out_ch_)) {
    const size_t m = static_cast<size_t>(od) * oh * ow;
    Eigen::Map<const RowMat> wm(weight.data(), out_ch_, static_cast<Eigen::Index>(kk));
#pragma omp parallel
    {
      std::vector<double> col(kk * std::min(m, kColChunk));
      std::vector<double> dcol(kk * std::min(m, kColChunk));
#pragma omp for schedule(static)
      for (int i = 0; i < n; ++i) {
        Eigen::Map<RowMat> wpm(wpart.data() + i * static_cast<size_t>(out_ch_) * kk, out_ch_,
                               static_cast<Eigen::Index>(kk));
        for (size_t m0 = 0; m0 < m; m0 += kColChunk) {
          const size_t m1 = std::min(m, m0 + kColChunk);
          const Eigen::Index cols = static_cast<Eigen::Index>(m1 - m0);
          im2col_range(x_.data() + i * in_stride, in_ch_, d, h, w, kernel_, stride_, pad_, oh,
                       ow, m0, m1, col.data());
          Eigen::Map<const ColMat> cm(col.data(), static_cast<Eigen::Index>(kk), cols);
          Eigen::Map<const RowMat, 0, Eigen::OuterStride<>> gym(
              gy.data() + i * out_stride + m0, out_ch_, cols,
              Eigen::OuterStride<>(static_cast<Eigen::Index>(m)));
          wpm.noalias() += gym * cm.transpose();
          Eigen::Map<ColMat> dcm(dcol.data(), static_cast<Eigen::Index>(kk), cols);
          dcm.noalias() = wm.transpose() * gym;
          col2im_range(dcol.data(), in_ch_, d, h, w, kernel_, stride_, pad_, oh, ow, m0, m1,
                       gx.data() + i * in_stride);
        }
        const double* gyp = gy.data() + i * out_stride;
        for (int c = 0; c < out_ch_; ++c) {
          double acc = 0.0;
          for (size_t j = 0; j < m; ++j) acc += gyp[static_cast<size_t>(c) * m + j];
          bpart[static_cast<size_t>(i) * out_ch_ + c] = acc;
        }
      }
    }
  } else {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < n; ++i) {
      conv_direct_backward_input(gx.data() + i * in_stride, gy.data() + i * out_stride,
                                 weight.data(), in_ch_, out_ch_, kernel_, stride_, pad_, d, h,
                                 w, od, oh, ow);
      conv_direct_backward_weight(x_.data() + i * in_stride, gy.data() + i * out_stride,
                                  wpart.data() + i * static_cast<size_t>(out_ch_) * kk,
                                  bpart.data() + static_cast<size_t>(i) * out_ch_, in_ch_,
                                  out_ch_, kernel_, stride_, pad_, d, h, w, od, oh, ow);
    }
  }

  for (int i = 0; i < n; ++i) {
    const double* wp = wpart.data() + i * static_cast<size_t>(out_ch_) * kk;
    for (size_t j = 0; j < wgrad.numel(); ++j) wgrad[j] += wp[j];
    for (int c = 0; c < out_ch_; ++c) bgrad[c] += bpart[static_cast<size_t>(i) * out_ch_ + c];
  }
  return gx;
}

// --- BatchNorm3d ---------------------------------------------------------------

BatchNorm3d::BatchNorm3d(int channels) : ch_(channels) {
  gamma = Tensor::full({channels}, 1.0);
  beta = Tensor({channels});
  ggrad = Tensor({channels});
  bgrad = Tensor({channels});
  running_mean = Tensor({channels});
  running_var = Tensor::full({channels}, 1.0);
}

void BatchNorm3d::collect(const std::string& prefix, ParamRefs& out) {
  out.push_back({prefix + ".gamma", &gamma, &ggrad});
  out.push_back({prefix + ".beta", &beta, &bgrad});
}

Tensor BatchNorm3d::forward(const Tensor& x) {
  require_5d(x, "BatchNorm3d");
  const int n = x.dim(0), c = x.dim(1);
  const size_t v = static_cast<size_t>(x.dim(2)) * x.dim(3) * x.dim(4);
  const size_t cs = v;                       // channel stride
  const size_t ns = static_cast<size_t>(c) * v;  // sample stride
  const double count = static_cast<double>(n) * static_cast<double>(v);

  Tensor y(x.shape());
  used_batch_stats_ = training;
  if (training) {
    xhat_ = Tensor(x.shape());
    invstd_.assign(static_cast<size_t>(c), 0.0);
#pragma omp parallel for schedule(static)
    for (int ci = 0; ci < c; ++ci) {
      double sum = 0.0, sq = 0.0;
      for (int i = 0; i < n; ++i) {
        const double* p = x.data() + i * ns + ci * cs;
        for (size_t j = 0; j < v; ++j) {
          sum += p[j];
          sq += p[j] * p[j];
        }
      }
      const double mean = sum / count;
      const double var = std::max(sq / count - mean * mean, 0.0);
      const double inv = 1.0 / std::sqrt(var + eps);
      invstd_[ci] = inv;
      const double g = gamma[ci], b = beta[ci];
      for (int i = 0; i < n; ++i) {
        const double* p = x.data() + i * ns + ci * cs;
        double* xh = xhat_.data() + i * ns + ci * cs;
        double* yp = y.data() + i * ns + ci * cs;
        for (size_t j = 0; j < v; ++j) {
          xh[j] = (p[j] - mean) * inv;
          yp[j] = g * xh[j] + b;
        }
      }
      const double unbiased = count > 1.0 ? var * count / (count - 1.0) : var;
      running_mean[ci] = (1.0 - momentum) * running_mean[ci] + momentum * mean;
      running_var[ci] = (1.0 - momentum) * running_var[ci] + momentum * unbiased;
    }
  } else {
#pragma omp parallel for schedule(static)
    for (int ci = 0; ci < c; ++ci) {
      const double inv = 1.0 / std::sqrt(running_var[ci] + eps);
      const double g = gamma[ci], b = beta[ci], mean = running_mean[ci];
      for (int i = 0; i < n; ++i) {
        const double* p = x.data() + i * ns + ci * cs;
        double* yp = y.data() + i * ns + ci * cs;
        for (size_t j = 0; j < v; ++j) yp[j] = g * (p[j] - mean) * inv + b;
      }
    }
  }
  return y;
}

Tensor BatchNorm3d::backward(const Tensor& gy) {
  const int n = gy.dim(0), c = gy.dim(1);
  const size_t v = static_cast<size_t>(gy.dim(2)) * gy.dim(3) * gy.dim(4);
  const size_t cs = v;
  const size_t ns = static_cast<size_t>(c) * v;
  const double count = static_cast<double>(n) * static_cast<double>(v);

  Tensor gx(gy.shape());
  if (!used_batch_stats_) {
#pragma omp parallel for schedule(static)
    for (int ci = 0; ci < c; ++ci) {
      const double inv = 1.0 / std::sqrt(running_var[ci] + eps);
      const double g = gamma[ci];
      for (int i = 0; i < n; ++i) {
        const double* gp = gy.data() + i * ns + ci * cs;
        double* gxp = gx.data() + i * ns + ci * cs;
        for (size_t j = 0; j < v; ++j) gxp[j] = gp[j] * g * inv;
      }
    }
    return gx;
  }

#pragma omp parallel for schedule(static)
  for (int ci = 0; ci < c; ++ci) {
    double gsum = 0.0, gxsum = 0.0;
    for (int i = 0; i < n; ++i) {
      const double* gp = gy.data() + i * ns + ci * cs;
      const double* xh = xhat_.data() + i * ns + ci * cs;
      for (size_t j = 0; j < v; ++j) {
        gsum += gp[j];
        gxsum += gp[j] * xh[j];
      }
    }
    ggrad[ci] += gxsum;
    bgrad[ci] += gsum;
    const double g = gamma[ci], inv = invstd_[ci];
    const double k1 = gsum / count, k2 = gxsum / count;
    for (int i = 0; i < n; ++i) {
      const double* gp = gy.data() + i * ns + ci * cs;
      const double* xh = xhat_.data() + i * ns + ci * cs;
      double* gxp = gx.data() + i * ns + ci * cs;
      for (size_t j = 0; j < v; ++j) gxp[j] = g * inv * (gp[j] - k1 - xh[j] * k2);
    }
  }
  return gx;
}

// --- ReLU ---------------------------------------------------------------------

Tensor ReLU::forward(const Tensor& x) {
  x_ = x;
  Tensor y(x.shape());
  const size_t n = x.numel();
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < static_cast<long long>(n); ++i)
    y[static_cast<size_t>(i)] = x[static_cast<size_t>(i)] > 0.0 ? x[static_cast<size_t>(i)] : 0.0;
  return y;
}

Tensor ReLU::backward(const Tensor& gy) {
  Tensor gx(gy.shape());
  const size_t n = gy.numel();
#pragma omp parallel for schedule(static)
  for (long long i = 0; i < static_cast<long long>(n); ++i)
    gx[static_cast<size_t>(i)] =
        x_[static_cast<size_t>(i)] > 0.0 ? gy[static_cast<size_t>(i)] : 0.0;
  return gx;
}

// --- MaxPool3d ------------------------------------------------------------------

Tensor MaxPool3d::forward(const Tensor& x) {
  require_5d(x, "MaxPool3d");
  const int n = x.dim(0), c = x.dim(1), d = x.dim(2), h = x.dim(3), w = x.dim(4);
  if (d % 2 || h % 2 || w % 2)
    throw std::invalid_argument("MaxPool3d: spatial dims must be even");
  in_shape_ = x.shape();
  const int od = d / 2, oh = h / 2, ow = w / 2;
  Tensor y({n, c, od, oh, ow});
  argmax_.assign(y.numel(), 0);

  const long long nc = static_cast<long long>(n) * c;
#pragma omp parallel for schedule(static)
  for (long long ic = 0; ic < nc; ++ic) {
    const double* xc = x.data() + static_cast<size_t>(ic) * d * h * w;
    double* yc = y.data() + static_cast<size_t>(ic) * od * oh * ow;
    size_t* am = argmax_.data() + static_cast<size_t>(ic) * od * oh * ow;
    size_t o = 0;
    for (int dz = 0; dz < od; ++dz)
      for (int hy = 0; hy < oh; ++hy)
        for (int wx = 0; wx < ow; ++wx, ++o) {
          double best = -1e300;
          size_t best_idx = 0;
          for (int kz = 0; kz < 2; ++kz)
            for (int ky = 0; ky < 2; ++ky)
              for (int kx = 0; kx < 2; ++kx) {
                const size_t idx = (static_cast<size_t>(dz * 2 + kz) * h + (hy * 2 + ky)) * w +
                                   (wx * 2 + kx);
                if (xc[idx] > best) {
                  best = xc[idx];
                  best_idx = idx;
                }
              }
          yc[o] = best;
          am[o] = best_idx;
        }
  }
  return y;
}

Tensor MaxPool3d::backward(const Tensor& gy) {
  Tensor gx(in_shape_);
  const int n = in_shape_[0], c = in_shape_[1];
  const size_t in_cv = static_cast<size_t>(in_shape_[2]) * in_shape_[3] * in_shape_[4];
  const size_t out_cv = gy.numel() / (static_cast<size_t>(n) * c);
  const long long nc = static_cast<long long>(n) * c;
#pragma omp parallel for schedule(static)
  for (long long ic = 0; ic < nc; ++ic) {
    const double* gp = gy.data() + static_cast<size_t>(ic) * out_cv;
    const size_t* am = argmax_.data() + static_cast<size_t>(ic) * out_cv;
    double* gxc = gx.data() + static_cast<size_t>(ic) * in_cv;
    for (size_t o = 0; o < out_cv; ++o) gxc[am[o]] += gp[o];
  }
  return gx;
}

// --- UpsampleNearest2x ------------------------------------------------------------

Tensor UpsampleNearest2x::forward(const Tensor& x) {
  require_5d(x, "UpsampleNearest2x");
  in_shape_ = x.shape();
  const int n = x.dim(0), c = x.dim(1), d = x.dim(2), h = x.dim(3), w = x.dim(4);
  Tensor y({n, c, d * 2, h * 2, w * 2});
  const long long nc = static_cast<long long>(n) * c;
#pragma omp parallel for schedule(static)
  for (long long ic = 0; ic < nc; ++ic) {
    const double* xc = x.data() + static_cast<size_t>(ic) * d * h * w;
    double* yc = y.data() + static_cast<size_t>(ic) * d * h * w * 8;
    for (int dz = 0; dz < d * 2; ++dz)
      for (int hy = 0; hy < h * 2; ++hy)
        for (int wx = 0; wx < w * 2; ++wx)
          yc[(static_cast<size_t>(dz) * h * 2 + hy) * w * 2 + wx] =
              xc[(static_cast<size_t>(dz / 2) * h + hy / 2) * w + wx / 2];
  }
  return y;
}

Tensor UpsampleNearest2x::backward(const Tensor& gy) {
  Tensor gx(in_shape_);
  const int n = in_shape_[0], c = in_shape_[1], d = in_shape_[2], h = in_shape_[3],
            w = in_shape_[4];
  const long long nc = static_cast<long long>(n) * c;
#pragma omp parallel for schedule(static)
  for (long long ic = 0; ic < nc; ++ic) {
    const double* gp = gy.data() + static_cast<size_t>(ic) * d * h * w * 8;
    double* gxc = gx.data() + static_cast<size_t>(ic) * d * h * w;
    for (int dz = 0; dz < d * 2; ++dz)
      for (int hy = 0; hy < h * 2; ++hy)
        for (int wx = 0; wx < w * 2; ++wx)
          gxc[(static_cast<size_t>(dz / 2) * h + hy / 2) * w + wx / 2] +=
              gp[(static_cast<size_t>(dz) * h * 2 + hy) * w * 2 + wx];
  }
  return gx;
}

// --- Linear -------------------------------------------------------------------

Linear::Linear(int in_features, int out_features) : in_f_(in_features), out_f_(out_features) {
  weight = Tensor({out_features, in_features});
  bias = Tensor({out_features});
  wgrad = Tensor({out_features, in_features});
  bgrad = Tensor({out_features});
}

void Linear::init(Rng& rng) {
  he_init(weight, in_f_, rng);
  bias.zero();
}

void Linear::collect(const std::string& prefix, ParamRefs& out) {
  out.push_back({prefix + ".weight", &weight, &wgrad});
  out.push_back({prefix + ".bias", &bias, &bgrad});
}

Tensor Linear::forward(const Tensor& x) {
  if (x.ndim() != 2 || x.dim(1) != in_f_)
    throw std::invalid_argument("Linear: expected (N, in_features) input");
  x_ = x;
  const int n = x.dim(0);
  Tensor y({n, out_f_});
  Eigen::Map<const RowMat> xm(x.data(), n, in_f_);
  Eigen::Map<const RowMat> wm(weight.data(), out_f_, in_f_);
  Eigen::Map<RowMat> ym(y.data(), n, out_f_);
  ym.noalias() = xm * wm.transpose();
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < out_f_; ++j) y.at2(i, j) += bias[j];
  return y;
}

Tensor Linear::backward(const Tensor& gy) {
  const int n = x_.dim(0);
  Tensor gx({n, in_f_});
  Eigen::Map<const RowMat> gym(gy.data(), n, out_f_);
  Eigen::Map<const RowMat> xm(x_.data(), n, in_f_);
  Eigen::Map<const RowMat> wm(weight.data(), out_f_, in_f_);
  Eigen::Map<RowMat> wgm(wgrad.data(), out_f_, in_f_);
  Eigen::Map<RowMat> gxm(gx.data(), n, in_f_);
  wgm.noalias() += gym.transpose() * xm;
  for (int j = 0; j < out_f_; ++j) bgrad[j] += gym.col(j).sum();
  gxm.noalias() = gym * wm;
  return gx;
}

// --- channel concat / split --------------------------------------------------------

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  require_5d(a, "concat_channels");
  require_5d(b, "concat_channels");
  for (int i : {0, 2, 3, 4})
    if (a.dim(i) != b.dim(i))
      throw std::invalid_argument("concat_channels: spatial/batch mismatch");
  const int n = a.dim(0), ca = a.dim(1), cb = b.dim(1);
  const size_t v = static_cast<size_t>(a.dim(2)) * a.dim(3) * a.dim(4);
  Tensor y({n, ca + cb, a.dim(2), a.dim(3), a.dim(4)});
  for (int i = 0; i < n; ++i) {
    std::copy_n(a.data() + i * ca * v, ca * v, y.data() + i * (ca + cb) * v);
    std::copy_n(b.data() + i * cb * v, cb * v, y.data() + i * (ca + cb) * v + ca * v);
  }
  return y;
}

std::pair<Tensor, Tensor> split_channels(const Tensor& g, int ca, int cb) {
  require_5d(g, "split_channels");
  if (g.dim(1) != ca + cb) throw std::invalid_argument("split_channels: channel mismatch");
  const int n = g.dim(0);
  const size_t v = static_cast<size_t>(g.dim(2)) * g.dim(3) * g.dim(4);
  Tensor a({n, ca, g.dim(2), g.dim(3), g.dim(4)});
  Tensor b({n, cb, g.dim(2), g.dim(3), g.dim(4)});
  for (int i = 0; i < n; ++i) {
    std::copy_n(g.data() + i * (ca + cb) * v, ca * v, a.data() + i * ca * v);
    std::copy_n(g.data() + i * (ca + cb) * v + ca * v, cb * v, b.data() + i * cb * v);
  }
  return {std::move(a), std::move(b)};
}

double sigmoid(double x) {
  if (x >= 0.0) {
    const double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace nodx::nn
