#pragma once

#include <memory>
#include <string>
#include <vector>

#include "nbhd/core/rng.hpp"
#include "nbhd/nn/tensor.hpp"

namespace nbhd::nn {

class Layer {
 public:
  virtual ~Layer() = default;
  // With train=true the layer keeps what backward() needs.
  virtual Tensor forward(const Tensor& x, bool train) = 0;
  virtual Tensor backward(const Tensor& grad_out) = 0;
  virtual std::vector<Param*> params() { return {}; }
  virtual std::string kind() const = 0;

  // The first layer of a network can skip computing d(loss)/d(input).
  bool input_grad = true;
};

class Linear : public Layer {
 public:
  Linear(int in, int out, const std::string& name);
  // Uniform(-1/sqrt(in), 1/sqrt(in)) for weights and bias.
  void init(Rng& rng);

  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& grad_out) override;
  std::vector<Param*> params() override { return {&weight, &bias}; }
  std::string kind() const override { return "linear"; }

  int in_features() const { return in_; }
  int out_features() const { return out_; }

  Param weight;  // out x in
  Param bias;    // out

 private:
  int in_;
  int out_;
  Tensor cache_x_;
};

class Conv2d : public Layer {
 public:
  Conv2d(int in_channels, int out_channels, int kernel, int stride, int padding,
         const std::string& name);
  void init_he(Rng& rng);

  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& grad_out) override;
  std::vector<Param*> params() override { return {&weight, &bias}; }
  std::string kind() const override { return "conv2d"; }

  int in_channels() const { return cin_; }
  int out_channels() const { return cout_; }
  int kernel() const { return k_; }
  int stride() const { return stride_; }
  int padding() const { return pad_; }
  int out_size(int n) const { return (n + 2 * pad_ - k_) / stride_ + 1; }

  Param weight;  // cout x (cin*k*k)
  Param bias;    // cout

 private:
  int cin_, cout_, k_, stride_, pad_;
  std::vector<FloatVec> cache_cols_;
  std::vector<int> cache_in_shape_;
};

class ReLU : public Layer {
 public:
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& grad_out) override;
  std::string kind() const override { return "relu"; }

 private:
  std::vector<std::uint8_t> mask_;
};

class Dropout : public Layer {
 public:
  Dropout(double p, std::uint64_t seed) : p_(p), rng_(seed) {}
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& grad_out) override;
  std::string kind() const override { return "dropout"; }
  void reseed(std::uint64_t seed) { rng_ = Rng(seed); }
  double p() const { return p_; }

 private:
  double p_;
  Rng rng_;
  FloatVec scale_;
};

// N x C x H x W -> N x C
class GlobalAvgPool : public Layer {
 public:
  Tensor forward(const Tensor& x, bool train) override;
  Tensor backward(const Tensor& grad_out) override;
  std::string kind() const override { return "gap"; }

 private:
  std::vector<int> in_shape_;
};

class Sequential {
 public:
  void add(std::unique_ptr<Layer> layer);
  Tensor forward(const Tensor& x, bool train);
  // Returns d(loss)/d(input) (empty when the first layer skips it).
  Tensor backward(const Tensor& grad_out);
  std::vector<Param*> params();
  std::size_t size() const { return layers_.size(); }
  Layer& at(std::size_t i) { return *layers_[i]; }
  const Layer& at(std::size_t i) const { return *layers_[i]; }

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
};

// Mean absolute error and its gradient w.r.t. predictions (subgradient 0 at 0).
double l1_loss(const Tensor& pred, const Tensor& target, Tensor* grad);
double mse_loss(const Tensor& pred, const Tensor& target, Tensor* grad);

struct AdamWOptions {
  double lr = 1e-4;
  double weight_decay = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with decoupled weight decay.
class AdamW {
 public:
  AdamW(std::vector<Param*> params, AdamWOptions options);
  void step();
  void zero_grad();
  long steps() const { return t_; }
  const AdamWOptions& options() const { return opt_; }

 private:
  std::vector<Param*> params_;
  AdamWOptions opt_;
  long t_ = 0;
};

// Order-sensitive fingerprint of parameter values.
std::uint64_t hash_params(const std::vector<Param*>& params);

}  // namespace nbhd::nn
