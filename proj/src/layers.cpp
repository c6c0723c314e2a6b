#include "patchwork/layers.hpp"

#include <algorithm>
#include <cmath>

#include "patchwork/errors.hpp"

namespace patchwork {

namespace {

void require(bool ok, const std::string& msg) {
  if (!ok) throw ConfigError(msg);
}

}  // namespace

Conv2d::Conv2d(int in_channels, int out_channels, int kernel, int stride, int pad, Rng& init_rng)
    : in_channels_(in_channels),
      out_channels_(out_channels),
      kernel_(kernel),
      stride_(stride),
      pad_(pad) {
  require(in_channels > 0 && out_channels > 0 && kernel > 0 && stride > 0 && pad >= 0,
          "bad conv hyperparameters");
  w_.reset({out_channels, in_channels, kernel, kernel});
  b_.reset({out_channels});
  const double sigma = std::sqrt(2.0 / (static_cast<double>(in_channels) * kernel * kernel));
  for (double& v : w_.value.data) v = init_rng.normal() * sigma;
}

Tensor Conv2d::forward(const Tensor& x, Phase) {
  require(x.rank() == 4, "conv input must be rank 4, got " + shape_str(x));
  require(x.dim(1) == in_channels_,
          "conv expects " + std::to_string(in_channels_) + " input channels, got " + shape_str(x));
  x_cache_ = x;
  const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t OH = (H + 2 * pad_ - kernel_) / stride_ + 1;
  const int64_t OW = (W + 2 * pad_ - kernel_) / stride_ + 1;
  require(OH > 0 && OW > 0, "conv output would be empty for input " + shape_str(x));
  Tensor y({N, out_channels_, OH, OW});
  const double* xp = x.ptr();
  const double* wp = w_.value.ptr();
  double* yp = y.ptr();
  for (int64_t n = 0; n < N; ++n) {
    for (int64_t oc = 0; oc < out_channels_; ++oc) {
      double* ybase = yp + (n * out_channels_ + oc) * OH * OW;
      const double bias = b_.value.data[static_cast<size_t>(oc)];
      std::fill(ybase, ybase + OH * OW, bias);
      for (int64_t ic = 0; ic < C; ++ic) {
        const double* xplane = xp + (n * C + ic) * H * W;
        const double* wk = wp + ((oc * C + ic) * kernel_) * kernel_;
        for (int kh = 0; kh < kernel_; ++kh) {
          for (int kw = 0; kw < kernel_; ++kw) {
            const double wv = wk[kh * kernel_ + kw];
            for (int64_t oh = 0; oh < OH; ++oh) {
              const int64_t ih = oh * stride_ - pad_ + kh;
              if (ih < 0 || ih >= H) continue;
              const double* xrow = xplane + ih * W;
              double* yrow = ybase + oh * OW;
              if (stride_ == 1) {
                const int64_t off = kw - pad_;
                const int64_t ow0 = std::max<int64_t>(0, -off);
                const int64_t ow1 = std::min<int64_t>(OW, W - off);
                for (int64_t ow = ow0; ow < ow1; ++ow) yrow[ow] += wv * xrow[ow + off];
              } else {
                for (int64_t ow = 0; ow < OW; ++ow) {
                  const int64_t iw = ow * stride_ - pad_ + kw;
                  if (iw >= 0 && iw < W) yrow[ow] += wv * xrow[iw];
                }
              }
            }
          }
        }
      }
    }
  }
  return y;
}

Tensor Conv2d::backward(const Tensor& dy) {
  const Tensor& x = x_cache_;
  require(x.numel() > 0, "conv backward before forward");
  const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t OH = dy.dim(2), OW = dy.dim(3);
  require(dy.rank() == 4 && dy.dim(0) == N && dy.dim(1) == out_channels_,
          "conv backward shape mismatch: " + shape_str(dy));
  Tensor dx(x.shape);
  const double* dyp = dy.ptr();
  const double* xp = x.ptr();
  const double* wp = w_.value.ptr();
  double* dxp = dx.ptr();

  for (int64_t oc = 0; oc < out_channels_; ++oc) {
    double acc = 0.0;
    for (int64_t n = 0; n < N; ++n) {
      const double* dybase = dyp + (n * out_channels_ + oc) * OH * OW;
      for (int64_t i = 0; i < OH * OW; ++i) acc += dybase[i];
    }
    b_.grad.data[static_cast<size_t>(oc)] += acc;
  }

  for (int64_t oc = 0; oc < out_channels_; ++oc) {
    for (int64_t ic = 0; ic < C; ++ic) {
      double* dwk = w_.grad.ptr() + ((oc * C + ic) * kernel_) * kernel_;
      for (int kh = 0; kh < kernel_; ++kh) {
        for (int kw = 0; kw < kernel_; ++kw) {
          double acc = 0.0;
          for (int64_t n = 0; n < N; ++n) {
            const double* dybase = dyp + (n * out_channels_ + oc) * OH * OW;
            const double* xplane = xp + (n * C + ic) * H * W;
            for (int64_t oh = 0; oh < OH; ++oh) {
              const int64_t ih = oh * stride_ - pad_ + kh;
              if (ih < 0 || ih >= H) continue;
              const double* xrow = xplane + ih * W;
              const double* dyrow = dybase + oh * OW;
              if (stride_ == 1) {
                const int64_t off = kw - pad_;
                const int64_t ow0 = std::max<int64_t>(0, -off);
                const int64_t ow1 = std::min<int64_t>(OW, W - off);
                for (int64_t ow = ow0; ow < ow1; ++ow) acc += dyrow[ow] * xrow[ow + off];
              } else {
                for (int64_t ow = 0; ow < OW; ++ow) {
                  const int64_t iw = ow * stride_ - pad_ + kw;
                  if (iw >= 0 && iw < W) acc += dyrow[ow] * xrow[iw];
                }
              }
            }
          }
          dwk[kh * kernel_ + kw] += acc;
        }
      }
    }
  }

  for (int64_t n = 0; n < N; ++n) {
    for (int64_t oc = 0; oc < out_channels_; ++oc) {
      const double* dybase = dyp + (n * out_channels_ + oc) * OH * OW;
      for (int64_t ic = 0; ic < C; ++ic) {
        double* dxplane = dxp + (n * C + ic) * H * W;
        const double* wk = wp + ((oc * C + ic) * kernel_) * kernel_;
        for (int kh = 0; kh < kernel_; ++kh) {
          for (int kw = 0; kw < kernel_; ++kw) {
            const double wv = wk[kh * kernel_ + kw];
            for (int64_t oh = 0; oh < OH; ++oh) {
              const int64_t ih = oh * stride_ - pad_ + kh;
              if (ih < 0 || ih >= H) continue;
              double* dxrow = dxplane + ih * W;
              const double* dyrow = dybase + oh * OW;
              if (stride_ == 1) {
                const int64_t off = kw - pad_;
                const int64_t ow0 = std::max<int64_t>(0, -off);
                const int64_t ow1 = std::min<int64_t>(OW, W - off);
                for (int64_t ow = ow0; ow < ow1; ++ow) dxrow[ow + off] += wv * dyrow[ow];
              } else {
                for (int64_t ow = 0; ow < OW; ++ow) {
                  const int64_t iw = ow * stride_ - pad_ + kw;
                  if (iw >= 0 && iw < W) dxrow[iw] += wv * dyrow[ow];
                }
              }
            }
          }
        }
      }
    }
  }
  return dx;
}

MaxPool2d::MaxPool2d(int kernel, int stride) : kernel_(kernel), stride_(stride) {
  require(kernel > 0 && stride > 0, "bad pool hyperparameters");
}

Tensor MaxPool2d::forward(const Tensor& x, Phase) {
  require(x.rank() == 4, "pool input must be rank 4, got " + shape_str(x));
  const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t OH = (H - kernel_) / stride_ + 1;
  const int64_t OW = (W - kernel_) / stride_ + 1;
  require(OH > 0 && OW > 0, "pool output would be empty for input " + shape_str(x));
  in_shape_ = x.shape;
  Tensor y({N, C, OH, OW});
  argmax_.assign(static_cast<size_t>(y.numel()), 0);
  const double* xp = x.ptr();
  double* yp = y.ptr();
  int64_t out_idx = 0;
  for (int64_t n = 0; n < N; ++n) {
    for (int64_t c = 0; c < C; ++c) {
      const double* xplane = xp + (n * C + c) * H * W;
      for (int64_t oh = 0; oh < OH; ++oh) {
        for (int64_t ow = 0; ow < OW; ++ow) {
          const int64_t h0 = oh * stride_;
          const int64_t w0 = ow * stride_;
          double best = xplane[h0 * W + w0];
          int64_t best_at = h0 * W + w0;
          for (int kh = 0; kh < kernel_; ++kh) {
            for (int kw = 0; kw < kernel_; ++kw) {
              const int64_t idx = (h0 + kh) * W + (w0 + kw);
              if (xplane[idx] > best) {  // strict: ties keep the first index
                best = xplane[idx];
                best_at = idx;
              }
            }
          }
          yp[out_idx] = best;
          argmax_[static_cast<size_t>(out_idx)] = static_cast<int32_t>(best_at);
          ++out_idx;
        }
      }
    }
  }
  return y;
}

Tensor MaxPool2d::backward(const Tensor& dy) {
  require(!in_shape_.empty(), "pool backward before forward");
  Tensor dx(in_shape_);
  const int64_t N = in_shape_[0], C = in_shape_[1], H = in_shape_[2], W = in_shape_[3];
  const int64_t plane = H * W;
  const int64_t OHW = dy.dim(2) * dy.dim(3);
  const double* dyp = dy.ptr();
  double* dxp = dx.ptr();
  for (int64_t nc = 0; nc < N * C; ++nc) {
    double* dxplane = dxp + nc * plane;
    const double* dyrow = dyp + nc * OHW;
    const int32_t* am = argmax_.data() + nc * OHW;
    for (int64_t i = 0; i < OHW; ++i) dxplane[am[i]] += dyrow[i];
  }
  return dx;
}

Tensor Relu::forward(const Tensor& x, Phase) {
  x_cache_ = x;
  Tensor y(x.shape);
  for (int64_t i = 0; i < x.numel(); ++i) {
    y.data[static_cast<size_t>(i)] = std::max(0.0, x.data[static_cast<size_t>(i)]);
  }
  return y;
}

Tensor Relu::backward(const Tensor& dy) {
  Tensor dx(x_cache_.shape);
  for (int64_t i = 0; i < dx.numel(); ++i) {
    dx.data[static_cast<size_t>(i)] =
        x_cache_.data[static_cast<size_t>(i)] > 0.0 ? dy.data[static_cast<size_t>(i)] : 0.0;
  }
  return dx;
}

Lrn::Lrn(int size, double alpha, double beta, double k)
    : size_(size), alpha_(alpha), beta_(beta), k_(k) {
  require(size > 0, "lrn window must be positive");
}

Tensor Lrn::forward(const Tensor& x, Phase) {
  require(x.rank() == 4, "lrn input must be rank 4, got " + shape_str(x));
  x_cache_ = x;
  const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t plane = H * W;
  const int half = size_ / 2;
  denom_ = Tensor(x.shape);
  Tensor y(x.shape);
  for (int64_t n = 0; n < N; ++n) {
    const double* xn = x.ptr() + n * C * plane;
    double* dn = denom_.ptr() + n * C * plane;
    double* yn = y.ptr() + n * C * plane;
    for (int64_t c = 0; c < C; ++c) {
      const int64_t c0 = std::max<int64_t>(0, c - half);
      const int64_t c1 = std::min<int64_t>(C - 1, c + half);
      for (int64_t i = 0; i < plane; ++i) {
        double s = 0.0;
        for (int64_t cc = c0; cc <= c1; ++cc) {
          const double v = xn[cc * plane + i];
          s += v * v;
        }
        const double d = k_ + (alpha_ / size_) * s;
        dn[c * plane + i] = d;
        yn[c * plane + i] = xn[c * plane + i] * std::pow(d, -beta_);
      }
    }
  }
  return y;
}

Tensor Lrn::backward(const Tensor& dy) {
  const Tensor& x = x_cache_;
  require(x.numel() > 0, "lrn backward before forward");
  const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t plane = H * W;
  const int half = size_ / 2;
  Tensor dx(x.shape);
  std::vector<double> t(static_cast<size_t>(C));
  for (int64_t n = 0; n < N; ++n) {
    const double* xn = x.ptr() + n * C * plane;
    const double* dn = denom_.ptr() + n * C * plane;
    const double* dyn = dy.ptr() + n * C * plane;
    double* dxn = dx.ptr() + n * C * plane;
    for (int64_t i = 0; i < plane; ++i) {
      for (int64_t c = 0; c < C; ++c) {
        const double d = dn[c * plane + i];
        t[static_cast<size_t>(c)] =
            dyn[c * plane + i] * xn[c * plane + i] * std::pow(d, -beta_ - 1.0);
      }
      for (int64_t c = 0; c < C; ++c) {
        const int64_t c0 = std::max<int64_t>(0, c - half);
        const int64_t c1 = std::min<int64_t>(C - 1, c + half);
        double win = 0.0;
        for (int64_t cc = c0; cc <= c1; ++cc) win += t[static_cast<size_t>(cc)];
        const double d = dn[c * plane + i];
        dxn[c * plane + i] = dyn[c * plane + i] * std::pow(d, -beta_) -
                             (2.0 * alpha_ * beta_ / size_) * xn[c * plane + i] * win;
      }
    }
  }
  return dx;
}

BatchNormNA::BatchNormNA(int channels, double eps, double momentum)
    : channels_(channels), eps_(eps), momentum_(momentum) {
  require(channels > 0, "batchnorm needs a positive channel count");
  running_mean_.value = Tensor({channels});
  running_var_.value = Tensor({channels});
  for (double& v : running_var_.value.data) v = 1.0;
}

Tensor BatchNormNA::forward(const Tensor& x, Phase phase) {
  require(x.rank() == 2 || x.rank() == 4, "batchnorm input must be rank 2 or 4");
  require(x.dim(1) == channels_, "batchnorm expects " + std::to_string(channels_) +
                                     " channels, got " + shape_str(x));
  const int64_t N = x.dim(0);
  const int64_t plane = x.rank() == 4 ? x.dim(2) * x.dim(3) : 1;
  group_ = N * plane;
  last_phase_ = phase;
  inv_std_.assign(static_cast<size_t>(channels_), 0.0);
  Tensor y(x.shape);
  xhat_ = Tensor(x.shape);

  if (phase == Phase::kTrain) {
    if (N < 2) {
      throw ConfigError("batch normalization requires batch >= 2 in training mode, got " +
                        std::to_string(N));
    }
    for (int64_t c = 0; c < channels_; ++c) {
      double sum = 0.0, sum2 = 0.0;
      for (int64_t n = 0; n < N; ++n) {
        const double* xc = x.ptr() + (n * channels_ + c) * plane;
        for (int64_t i = 0; i < plane; ++i) {
          sum += xc[i];
          sum2 += xc[i] * xc[i];
        }
      }
      const double mean = sum / static_cast<double>(group_);
      const double var = std::max(0.0, sum2 / static_cast<double>(group_) - mean * mean);
      const double inv = 1.0 / std::sqrt(var + eps_);
      inv_std_[static_cast<size_t>(c)] = inv;
      auto& rm = running_mean_.value.data[static_cast<size_t>(c)];
      auto& rv = running_var_.value.data[static_cast<size_t>(c)];
      rm = momentum_ * rm + (1.0 - momentum_) * mean;
      rv = momentum_ * rv + (1.0 - momentum_) * var;
      for (int64_t n = 0; n < N; ++n) {
        const double* xc = x.ptr() + (n * channels_ + c) * plane;
        double* hc = xhat_.ptr() + (n * channels_ + c) * plane;
        double* yc = y.ptr() + (n * channels_ + c) * plane;
        for (int64_t i = 0; i < plane; ++i) {
          hc[i] = (xc[i] - mean) * inv;
          yc[i] = hc[i];
        }
      }
    }
  } else {
    for (int64_t c = 0; c < channels_; ++c) {
      const double mean = running_mean_.value.data[static_cast<size_t>(c)];
      const double var = running_var_.value.data[static_cast<size_t>(c)];
      const double inv = 1.0 / std::sqrt(var + eps_);
      inv_std_[static_cast<size_t>(c)] = inv;
      for (int64_t n = 0; n < N; ++n) {
        const double* xc = x.ptr() + (n * channels_ + c) * plane;
        double* hc = xhat_.ptr() + (n * channels_ + c) * plane;
        double* yc = y.ptr() + (n * channels_ + c) * plane;
        for (int64_t i = 0; i < plane; ++i) {
          hc[i] = (xc[i] - mean) * inv;
          yc[i] = hc[i];
        }
      }
    }
  }
  return y;
}

Tensor BatchNormNA::backward(const Tensor& dy) {
  require(group_ > 0, "batchnorm backward before forward");
  const int64_t N = dy.dim(0);
  const int64_t plane = dy.rank() == 4 ? dy.dim(2) * dy.dim(3) : 1;
  Tensor dx(dy.shape);
  if (last_phase_ == Phase::kInfer) {
    for (int64_t c = 0; c < channels_; ++c) {
      const double inv = inv_std_[static_cast<size_t>(c)];
      for (int64_t n = 0; n < N; ++n) {
        const double* dc = dy.ptr() + (n * channels_ + c) * plane;
        double* xc = dx.ptr() + (n * channels_ + c) * plane;
        for (int64_t i = 0; i < plane; ++i) xc[i] = dc[i] * inv;
      }
    }
    return dx;
  }
  const double g = static_cast<double>(group_);
  for (int64_t c = 0; c < channels_; ++c) {
    double s1 = 0.0, s2 = 0.0;
    for (int64_t n = 0; n < N; ++n) {
      const double* dc = dy.ptr() + (n * channels_ + c) * plane;
      const double* hc = xhat_.ptr() + (n * channels_ + c) * plane;
      for (int64_t i = 0; i < plane; ++i) {
        s1 += dc[i];
        s2 += dc[i] * hc[i];
      }
    }
    const double inv = inv_std_[static_cast<size_t>(c)];
    for (int64_t n = 0; n < N; ++n) {
      const double* dc = dy.ptr() + (n * channels_ + c) * plane;
      const double* hc = xhat_.ptr() + (n * channels_ + c) * plane;
      double* xc = dx.ptr() + (n * channels_ + c) * plane;
      for (int64_t i = 0; i < plane; ++i) {
        xc[i] = inv * (dc[i] - s1 / g - hc[i] * s2 / g);
      }
    }
  }
  return dx;
}

Fc::Fc(int64_t in_features, int out_features, Rng& init_rng)
    : in_features_(in_features), out_features_(out_features) {
  require(in_features > 0 && out_features > 0, "bad fc dimensions");
  w_.reset({out_features, in_features});
  b_.reset({out_features});
  const double sigma = std::sqrt(2.0 / static_cast<double>(in_features));
  for (double& v : w_.value.data) v = init_rng.normal() * sigma;
}

Tensor Fc::forward(const Tensor& x, Phase) {
  const int64_t N = x.dim(0);
  const int64_t D = x.numel() / N;
  require(D == in_features_, "fc expects " + std::to_string(in_features_) +
                                 " features, got " + shape_str(x));
  in_shape_ = x.shape;
  x_flat_ = x;
  x_flat_.shape = {N, D};
  Tensor y({N, out_features_});
  const double* xp = x_flat_.ptr();
  const double* wp = w_.value.ptr();
  double* yp = y.ptr();
  for (int64_t n = 0; n < N; ++n) {
    const double* xrow = xp + n * D;
    double* yrow = yp + n * out_features_;
    for (int64_t o = 0; o < out_features_; ++o) {
      const double* wrow = wp + o * D;
      double acc = b_.value.data[static_cast<size_t>(o)];
      for (int64_t d = 0; d < D; ++d) acc += xrow[d] * wrow[d];
      yrow[o] = acc;
    }
  }
  return y;
}

Tensor Fc::backward(const Tensor& dy) {
  require(!in_shape_.empty(), "fc backward before forward");
  const int64_t N = x_flat_.dim(0);
  const int64_t D = in_features_;
  Tensor dx_flat({N, D});
  const double* dyp = dy.ptr();
  const double* xp = x_flat_.ptr();
  const double* wp = w_.value.ptr();
  double* dwp = w_.grad.ptr();
  double* dxp = dx_flat.ptr();
  for (int64_t n = 0; n < N; ++n) {
    const double* dyrow = dyp + n * out_features_;
    const double* xrow = xp + n * D;
    double* dxrow = dxp + n * D;
    for (int64_t o = 0; o < out_features_; ++o) {
      const double g = dyrow[o];
      b_.grad.data[static_cast<size_t>(o)] += g;
      double* dwrow = dwp + o * D;
      const double* wrow = wp + o * D;
      for (int64_t d = 0; d < D; ++d) {
        dwrow[d] += g * xrow[d];
        dxrow[d] += g * wrow[d];
      }
    }
  }
  dx_flat.shape = in_shape_;
  return dx_flat;
}

SoftmaxXentResult softmax_xent(const Tensor& logits, const std::vector<int>& labels) {
  require(logits.rank() == 2, "logits must be rank 2, got " + shape_str(logits));
  const int64_t N = logits.dim(0);
  const int64_t K = logits.dim(1);
  require(static_cast<int64_t>(labels.size()) == N,
          "label count " + std::to_string(labels.size()) + " does not match batch " +
              std::to_string(N));
  SoftmaxXentResult res;
  res.dlogits = Tensor(logits.shape);
  res.probs = Tensor(logits.shape);
  res.predictions.resize(static_cast<size_t>(N));
  double total = 0.0;
  for (int64_t n = 0; n < N; ++n) {
    const int label = labels[static_cast<size_t>(n)];
    require(label >= 0 && label < K, "label " + std::to_string(label) + " out of range [0, " +
                                         std::to_string(K) + ")");
    const double* row = logits.ptr() + n * K;
    double mx = row[0];
    int arg = 0;
    for (int64_t k = 1; k < K; ++k) {
      if (row[k] > mx) {
        mx = row[k];
        arg = static_cast<int>(k);
      }
    }
    res.predictions[static_cast<size_t>(n)] = arg;
    double z = 0.0;
    for (int64_t k = 0; k < K; ++k) z += std::exp(row[k] - mx);
    const double logz = std::log(z);
    total += -(row[label] - mx - logz);
    double* prow = res.probs.ptr() + n * K;
    double* drow = res.dlogits.ptr() + n * K;
    for (int64_t k = 0; k < K; ++k) {
      const double p = std::exp(row[k] - mx) / z;
      prow[k] = p;
      drow[k] = (p - (k == label ? 1.0 : 0.0)) / static_cast<double>(N);
    }
  }
  res.loss = total / static_cast<double>(N);
  return res;
}

L2LossResult l2_loss(const Tensor& pred, const Tensor& target) {
  require(pred.same_shape(target), "l2 loss shape mismatch: " + shape_str(pred) + " vs " +
                                       shape_str(target));
  const int64_t N = pred.dim(0);
  L2LossResult res;
  res.dpred = Tensor(pred.shape);
  double total = 0.0;
  for (int64_t i = 0; i < pred.numel(); ++i) {
    const double e = pred.data[static_cast<size_t>(i)] - target.data[static_cast<size_t>(i)];
    total += e * e;
    res.dpred.data[static_cast<size_t>(i)] = 2.0 * e / static_cast<double>(N);
  }
  res.loss = total / static_cast<double>(N);
  return res;
}

void sgd_momentum_step(const std::vector<Param*>& params, double lr, double momentum) {
  for (Param* p : params) {
    double* v = p->mom.ptr();
    double* w = p->value.ptr();
    const double* g = p->grad.ptr();
    const int64_t n = p->value.numel();
    for (int64_t i = 0; i < n; ++i) {
      v[i] = momentum * v[i] - lr * g[i];
      w[i] += v[i];
    }
  }
}

}  // namespace patchwork
