#pragma once

#include <memory>
#include <string>
#include <vector>

#include "patchwork/rng.hpp"
#include "patchwork/tensor.hpp"

namespace patchwork {

enum class Phase { kTrain, kInfer };

// Learnable parameter with gradient and momentum buffers. backward() calls
// accumulate into grad; call zero_grad() before each optimization step.
struct Param {
  std::string name;
  Tensor value, grad, mom;

  void reset(std::vector<int64_t> shape) {
    value = Tensor(shape);
    grad = Tensor(shape);
    mom = Tensor(std::move(shape));
  }
};

// Non-learnable state carried in checkpoints (batch-norm running stats).
struct StatBuf {
  std::string name;
  Tensor value;
};

class Layer {
 public:
  virtual ~Layer() = default;
  const std::string& name() const { return name_; }
  void set_name(std::string n) { name_ = std::move(n); }

  virtual Tensor forward(const Tensor& x, Phase phase) = 0;
  virtual Tensor backward(const Tensor& dy) = 0;
  virtual std::vector<Param*> params() { return {}; }
  virtual std::vector<StatBuf*> stats() { return {}; }

 protected:
  std::string name_;
};

// Direct cross-correlation, zero padding, square kernel and stride.
class Conv2d : public Layer {
 public:
  Conv2d(int in_channels, int out_channels, int kernel, int stride, int pad, Rng& init_rng);
  Tensor forward(const Tensor& x, Phase phase) override;
  Tensor backward(const Tensor& dy) override;
  std::vector<Param*> params() override { return {&w_, &b_}; }

  Param& weight() { return w_; }
  Param& bias() { return b_; }

 private:
  int in_channels_, out_channels_, kernel_, stride_, pad_;
  Param w_, b_;
  Tensor x_cache_;
};

// Max pooling; ties resolve to the first index in row-major scan order.
class MaxPool2d : public Layer {
 public:
  MaxPool2d(int kernel, int stride);
  Tensor forward(const Tensor& x, Phase phase) override;
  Tensor backward(const Tensor& dy) override;

 private:
  int kernel_, stride_;
  std::vector<int64_t> in_shape_;
  std::vector<int32_t> argmax_;
};

class Relu : public Layer {
 public:
  Tensor forward(const Tensor& x, Phase phase) override;
  Tensor backward(const Tensor& dy) override;

 private:
  Tensor x_cache_;
};

// Local response normalization across channels:
//   y = x / (k + (alpha / size) * sum_{window} x^2)^beta
class Lrn : public Layer {
 public:
  Lrn(int size = 5, double alpha = 1e-4, double beta = 0.75, double k = 2.0);
  Tensor forward(const Tensor& x, Phase phase) override;
  Tensor backward(const Tensor& dy) override;

 private:
  int size_;
  double alpha_, beta_, k_;
  Tensor x_cache_, denom_;
};

// Batch normalization without scale or shift. Normalizes per channel over
// (N, H, W) for rank-4 input or over N for rank-2. Training updates running
// stats with momentum 0.9; inference uses them.
class BatchNormNA : public Layer {
 public:
  explicit BatchNormNA(int channels, double eps = 1e-5, double momentum = 0.9);
  Tensor forward(const Tensor& x, Phase phase) override;
  Tensor backward(const Tensor& dy) override;
  std::vector<StatBuf*> stats() override { return {&running_mean_, &running_var_}; }

 private:
  int channels_;
  double eps_, momentum_;
  StatBuf running_mean_, running_var_;
  Tensor xhat_;
  std::vector<double> inv_std_;
  Phase last_phase_ = Phase::kTrain;
  int64_t group_ = 0;  // elements per channel in the last batch
};

// Fully connected; flattens all trailing dims of the input.
class Fc : public Layer {
 public:
  Fc(int64_t in_features, int out_features, Rng& init_rng);
  Tensor forward(const Tensor& x, Phase phase) override;
  Tensor backward(const Tensor& dy) override;
  std::vector<Param*> params() override { return {&w_, &b_}; }

  Param& weight() { return w_; }
  Param& bias() { return b_; }

 private:
  int64_t in_features_;
  int out_features_;
  Param w_, b_;
  Tensor x_flat_;
  std::vector<int64_t> in_shape_;
};

struct SoftmaxXentResult {
  double loss = 0.0;
  Tensor dlogits;       // (softmax - onehot) / batch
  Tensor probs;         // [N, K]
  std::vector<int> predictions;
};

// Mean cross-entropy over the batch, with max-subtraction for stability.
SoftmaxXentResult softmax_xent(const Tensor& logits, const std::vector<int>& labels);

struct L2LossResult {
  double loss = 0.0;  // mean over batch of squared error summed across dims
  Tensor dpred;
};

L2LossResult l2_loss(const Tensor& pred, const Tensor& target);

// v <- momentum * v - lr * grad;  w <- w + v
void sgd_momentum_step(const std::vector<Param*>& params, double lr, double momentum);

}  // namespace patchwork
