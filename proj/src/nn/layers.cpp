#include "nbhd/nn/layers.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <numeric>

#include "nbhd/core/error.hpp"

namespace nbhd::nn {

namespace {

using MatR = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using CMapR = Eigen::Map<const MatR>;
using VecMap = Eigen::Map<Eigen::VectorXf>;
using CVecMap = Eigen::Map<const Eigen::VectorXf>;

std::size_t product(const std::vector<int>& s) {
  std::size_t n = 1;
  for (int d : s) n *= static_cast<std::size_t>(d);
  return n;
}

Param make_param(const std::string& name, std::vector<int> shape) {
  Param p;
  p.name = name;
  p.shape = std::move(shape);
  const std::size_t n = product(p.shape);
  p.value.assign(n, 0.0f);
  p.grad.assign(n, 0.0f);
  p.m.assign(n, 0.0f);
  p.v.assign(n, 0.0f);
  return p;
}

}  // namespace

Tensor::Tensor(std::vector<int> s, float fill) : shape(std::move(s)), data(product(shape), fill) {}

std::string Tensor::shape_string() const {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) s += (i ? ", " : "") + std::to_string(shape[i]);
  return s + ")";
}

void Param::zero_grad() { std::fill(grad.begin(), grad.end(), 0.0f); }

std::uint64_t Param::hash() const {
  return fnv1a64(value.data(), value.size() * sizeof(float), fnv1a64(name));
}

std::uint64_t hash_params(const std::vector<Param*>& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const Param* p : params) h = fnv1a64(p->value.data(), p->value.size() * sizeof(float), h);
  return h;
}

// ---------------------------------------------------------------- Linear

Linear::Linear(int in, int out, const std::string& name)
    : weight(make_param(name + ".weight", {out, in})),
      bias(make_param(name + ".bias", {out})),
      in_(in),
      out_(out) {}

void Linear::init(Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in_));
  for (auto& w : weight.value) w = static_cast<float>(rng.uniform(-bound, bound));
  for (auto& b : bias.value) b = static_cast<float>(rng.uniform(-bound, bound));
}

Tensor Linear::forward(const Tensor& x, bool train) {
  if (x.shape.size() != 2 || x.shape[1] != in_) {
    throw InputError("linear layer expects N x " + std::to_string(in_) + ", got " + x.shape_string());
  }
  const int n = x.shape[0];
  Tensor y({n, out_});
  CMapR X(x.data.data(), n, in_);
  CMapR W(weight.value.data(), out_, in_);
  MapR Y(y.data.data(), n, out_);
  Y.noalias() = X * W.transpose();
  Y.rowwise() += CVecMap(bias.value.data(), out_).transpose();
  if (train) cache_x_ = x;
  return y;
}

Tensor Linear::backward(const Tensor& grad_out) {
  const int n = grad_out.shape[0];
  CMapR G(grad_out.data.data(), n, out_);
  CMapR X(cache_x_.data.data(), n, in_);
  MapR dW(weight.grad.data(), out_, in_);
  dW.noalias() += G.transpose() * X;
  VecMap(bias.grad.data(), out_) += G.colwise().sum().transpose();
  if (!input_grad) return {};
  Tensor dx({n, in_});
  MapR dX(dx.data.data(), n, in_);
  dX.noalias() = G * CMapR(weight.value.data(), out_, in_);
  return dx;
}

// ---------------------------------------------------------------- Conv2d

Conv2d::Conv2d(int in_channels, int out_channels, int kernel, int stride, int padding,
               const std::string& name)
    : weight(make_param(name + ".weight", {out_channels, in_channels * kernel * kernel})),
      bias(make_param(name + ".bias", {out_channels})),
      cin_(in_channels),
      cout_(out_channels),
      k_(kernel),
      stride_(stride),
      pad_(padding) {
  if (kernel < 1 || stride < 1 || padding < 0) throw InputError("invalid convolution geometry");
}

void Conv2d::init_he(Rng& rng) {
  const double sd = std::sqrt(2.0 / (static_cast<double>(cin_) * k_ * k_));
  for (auto& w : weight.value) w = static_cast<float>(rng.normal(0.0, sd));
  std::fill(bias.value.begin(), bias.value.end(), 0.0f);
}

Tensor Conv2d::forward(const Tensor& x, bool train) {
  if (x.shape.size() != 4 || x.shape[1] != cin_) {
    throw InputError("convolution expects N x " + std::to_string(cin_) + " x H x W, got " +
                     x.shape_string());
  }
  const int n = x.shape[0];
  const int h = x.shape[2];
  const int w = x.shape[3];
  const int ho = out_size(h);
  const int wo = out_size(w);
  if (ho < 1 || wo < 1) throw InputError("input " + x.shape_string() + " too small for convolution");
  const int kk = cin_ * k_ * k_;
  const std::size_t p = static_cast<std::size_t>(ho) * wo;
  Tensor y({n, cout_, ho, wo});
  if (train) {
    cache_cols_.assign(static_cast<std::size_t>(n), {});
    cache_in_shape_ = x.shape;
  }
  FloatVec col;
  CMapR W(weight.value.data(), cout_, kk);
  CVecMap B(bias.value.data(), cout_);
  for (int s = 0; s < n; ++s) {
    col.assign(static_cast<std::size_t>(kk) * p, 0.0f);
    const float* xs = x.data.data() + static_cast<std::size_t>(s) * cin_ * h * w;
    for (int c = 0; c < cin_; ++c) {
      for (int ki = 0; ki < k_; ++ki) {
        for (int kj = 0; kj < k_; ++kj) {
          float* dst = col.data() + (static_cast<std::size_t>((c * k_ + ki) * k_ + kj)) * p;
          for (int oy = 0; oy < ho; ++oy) {
            const int iy = oy * stride_ - pad_ + ki;
            if (iy < 0 || iy >= h) continue;
            const float* src = xs + (static_cast<std::size_t>(c) * h + iy) * w;
            float* drow = dst + static_cast<std::size_t>(oy) * wo;
            for (int ox = 0; ox < wo; ++ox) {
              const int ix = ox * stride_ - pad_ + kj;
              if (ix >= 0 && ix < w) drow[ox] = src[ix];
            }
          }
        }
      }
    }
    MapR Y(y.data.data() + static_cast<std::size_t>(s) * cout_ * p, cout_, static_cast<Eigen::Index>(p));
    Y.noalias() = W * CMapR(col.data(), kk, static_cast<Eigen::Index>(p));
    Y.colwise() += B;
    if (train) cache_cols_[static_cast<std::size_t>(s)] = std::move(col);
  }
  return y;
}

Tensor Conv2d::backward(const Tensor& grad_out) {
  const int n = grad_out.shape[0];
  const int ho = grad_out.shape[2];
  const int wo = grad_out.shape[3];
  const int h = cache_in_shape_[2];
  const int w = cache_in_shape_[3];
  const int kk = cin_ * k_ * k_;
  const std::size_t p = static_cast<std::size_t>(ho) * wo;
  MapR dW(weight.grad.data(), cout_, kk);
  VecMap dB(bias.grad.data(), cout_);
  CMapR W(weight.value.data(), cout_, kk);
  Tensor dx;
  if (input_grad) dx = Tensor(cache_in_shape_);
  MatR dcol;
  for (int s = 0; s < n; ++s) {
    CMapR G(grad_out.data.data() + static_cast<std::size_t>(s) * cout_ * p, cout_, static_cast<Eigen::Index>(p));
    CMapR C(cache_cols_[static_cast<std::size_t>(s)].data(), kk, static_cast<Eigen::Index>(p));
    dW.noalias() += G * C.transpose();
    dB += G.rowwise().sum();
    if (!input_grad) continue;
    dcol.noalias() = W.transpose() * G;
    float* xs = dx.data.data() + static_cast<std::size_t>(s) * cin_ * h * w;
    for (int c = 0; c < cin_; ++c) {
      for (int ki = 0; ki < k_; ++ki) {
        for (int kj = 0; kj < k_; ++kj) {
          const float* src = dcol.data() + static_cast<std::size_t>((c * k_ + ki) * k_ + kj) * p;
          for (int oy = 0; oy < ho; ++oy) {
            const int iy = oy * stride_ - pad_ + ki;
            if (iy < 0 || iy >= h) continue;
            float* drow = xs + (static_cast<std::size_t>(c) * h + iy) * w;
            const float* srow = src + static_cast<std::size_t>(oy) * wo;
            for (int ox = 0; ox < wo; ++ox) {
              const int ix = ox * stride_ - pad_ + kj;
              if (ix >= 0 && ix < w) drow[ix] += srow[ox];
            }
          }
        }
      }
    }
  }
  cache_cols_.clear();
  return dx;
}

// ---------------------------------------------------------------- ReLU etc.

Tensor ReLU::forward(const Tensor& x, bool train) {
  Tensor y = x;
  if (train) mask_.assign(x.numel(), 0);
  for (std::size_t i = 0; i < y.data.size(); ++i) {
    if (y.data[i] > 0.0f) {
      if (train) mask_[i] = 1;
    } else {
      y.data[i] = 0.0f;
    }
  }
  return y;
}

Tensor ReLU::backward(const Tensor& grad_out) {
  Tensor g = grad_out;
  for (std::size_t i = 0; i < g.data.size(); ++i) {
    if (!mask_[i]) g.data[i] = 0.0f;
  }
  return g;
}

Tensor Dropout::forward(const Tensor& x, bool train) {
  if (!train || p_ <= 0.0) {
    scale_.assign(x.numel(), 1.0f);
    return x;
  }
  Tensor y = x;
  scale_.resize(x.numel());
  const float keep = static_cast<float>(1.0 / (1.0 - p_));
  for (std::size_t i = 0; i < y.data.size(); ++i) {
    scale_[i] = rng_.uniform() < p_ ? 0.0f : keep;
    y.data[i] *= scale_[i];
  }
  return y;
}

Tensor Dropout::backward(const Tensor& grad_out) {
  Tensor g = grad_out;
  for (std::size_t i = 0; i < g.data.size(); ++i) g.data[i] *= scale_[i];
  return g;
}

Tensor GlobalAvgPool::forward(const Tensor& x, bool train) {
  if (x.shape.size() != 4) throw InputError("global pooling expects N x C x H x W");
  const int n = x.shape[0];
  const int c = x.shape[1];
  const std::size_t hw = static_cast<std::size_t>(x.shape[2]) * x.shape[3];
  Tensor y({n, c});
  for (int s = 0; s < n; ++s) {
    for (int k = 0; k < c; ++k) {
      const float* src = x.data.data() + (static_cast<std::size_t>(s) * c + k) * hw;
      double acc = 0.0;
      for (std::size_t i = 0; i < hw; ++i) acc += src[i];
      y.data[static_cast<std::size_t>(s) * c + k] = static_cast<float>(acc / static_cast<double>(hw));
    }
  }
  if (train) in_shape_ = x.shape;
  return y;
}

Tensor GlobalAvgPool::backward(const Tensor& grad_out) {
  Tensor dx(in_shape_);
  const int n = in_shape_[0];
  const int c = in_shape_[1];
  const std::size_t hw = static_cast<std::size_t>(in_shape_[2]) * in_shape_[3];
  for (int s = 0; s < n; ++s) {
    for (int k = 0; k < c; ++k) {
      const float g = grad_out.data[static_cast<std::size_t>(s) * c + k] / static_cast<float>(hw);
      float* dst = dx.data.data() + (static_cast<std::size_t>(s) * c + k) * hw;
      std::fill(dst, dst + hw, g);
    }
  }
  return dx;
}

// ---------------------------------------------------------------- Sequential

void Sequential::add(std::unique_ptr<Layer> layer) {
  if (layers_.empty()) layer->input_grad = false;
  layers_.push_back(std::move(layer));
}

Tensor Sequential::forward(const Tensor& x, bool train) {
  Tensor cur = x;
  for (auto& l : layers_) cur = l->forward(cur, train);
  return cur;
}

Tensor Sequential::backward(const Tensor& grad_out) {
  Tensor g = grad_out;
  for (auto it = layers_.rbegin(); it != layers_.rend(); ++it) g = (*it)->backward(g);
  return g;
}

std::vector<Param*> Sequential::params() {
  std::vector<Param*> out;
  for (auto& l : layers_) {
    for (Param* p : l->params()) out.push_back(p);
  }
  return out;
}

// ---------------------------------------------------------------- losses

double l1_loss(const Tensor& pred, const Tensor& target, Tensor* grad) {
  if (pred.numel() != target.numel() || pred.numel() == 0) {
    throw InputError("loss: prediction/target size mismatch");
  }
  const double n = static_cast<double>(pred.numel());
  double acc = 0.0;
  if (grad) *grad = Tensor(pred.shape);
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const double d = static_cast<double>(pred.data[i]) - target.data[i];
    acc += std::abs(d);
    if (grad) grad->data[i] = static_cast<float>((d > 0 ? 1.0 : d < 0 ? -1.0 : 0.0) / n);
  }
  return acc / n;
}

double mse_loss(const Tensor& pred, const Tensor& target, Tensor* grad) {
  if (pred.numel() != target.numel() || pred.numel() == 0) {
    throw InputError("loss: prediction/target size mismatch");
  }
  const double n = static_cast<double>(pred.numel());
  double acc = 0.0;
  if (grad) *grad = Tensor(pred.shape);
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const double d = static_cast<double>(pred.data[i]) - target.data[i];
    acc += d * d;
    if (grad) grad->data[i] = static_cast<float>(2.0 * d / n);
  }
  return acc / n;
}

// ---------------------------------------------------------------- AdamW

AdamW::AdamW(std::vector<Param*> params, AdamWOptions options)
    : params_(std::move(params)), opt_(options) {
  if (!(opt_.lr >= 0.0) || !(opt_.weight_decay >= 0.0)) {
    throw ConfigError("learning rate and weight decay must be nonnegative");
  }
}

void AdamW::zero_grad() {
  for (Param* p : params_) p->zero_grad();
}

void AdamW::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
  const float b1 = static_cast<float>(opt_.beta1);
  const float b2 = static_cast<float>(opt_.beta2);
  const float decay = static_cast<float>(1.0 - opt_.lr * opt_.weight_decay);
  const double step = opt_.lr / bc1;
  const double sqrt_bc2 = std::sqrt(bc2);
  for (Param* p : params_) {
    if (!p->trainable) continue;
    for (std::size_t i = 0; i < p->value.size(); ++i) {
      const float g = p->grad[i];
      p->m[i] = b1 * p->m[i] + (1.0f - b1) * g;
      p->v[i] = b2 * p->v[i] + (1.0f - b2) * g * g;
      const double denom = std::sqrt(static_cast<double>(p->v[i])) / sqrt_bc2 + opt_.eps;
      p->value[i] = p->value[i] * decay - static_cast<float>(step * p->m[i] / denom);
    }
  }
}

}  // namespace nbhd::nn
