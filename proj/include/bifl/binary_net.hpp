#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "bifl/rng.hpp"
#include "bifl/tensor.hpp"

namespace bifl {

enum class LayerKind : uint8_t {
  Dense = 0,
  Conv2d = 1,
  BatchNorm = 2,
  Tanh = 3,
  Softmax = 4,
  PoolDown2 = 5,
};

// One trainable parameter tensor, viewed uniformly by the optimizer and the
// checkpoint writer. For binarized layers the view points at W-bar: the
// straight-through rule applies the binary-path gradient there, and the
// optimizer clips it to [-1, 1] after every step.
struct ParamView {
  std::string name;
  double* data = nullptr;
  double* grad = nullptr;
  size_t n = 0;
  bool clip_unit = false;
};

class Layer {
 public:
  virtual ~Layer() = default;
  virtual LayerKind kind() const = 0;
  virtual std::unique_ptr<Layer> clone() const = 0;
  // x is {batch, ...}. train toggles batch-vs-running statistics (BatchNorm
  // only); binary picks W^b over W-bar in binarized layers.
  virtual Tensor forward(const Tensor& x, bool train, bool binary) = 0;
  // g is dL/d(output). Accumulates parameter gradients; returns dL/d(input)
  // unless need_input_grad is false (first layer saves a third of its work).
  virtual Tensor backward(const Tensor& g, bool binary, bool need_input_grad) = 0;
  virtual void collect_params(std::vector<ParamView>& out, const std::string& prefix) {}
  // Re-derives W^b = Sign(W-bar) (Sign(0) = -1); no-op for layers without
  // binary weights.
  virtual void rebinarize() {}
  virtual size_t weight_count() const { return 0; }
  virtual bool binarized() const { return false; }
  // Flips a weight-carrying layer between binary and real mode in place;
  // W-bar carries over, clipping and W^b maintenance follow the new mode.
  virtual void set_binarized(bool) {}
};

class DenseLayer final : public Layer {
 public:
  DenseLayer(int in, int out, bool binarized, Rng& init);
  LayerKind kind() const override { return LayerKind::Dense; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<DenseLayer>(*this); }
  Tensor forward(const Tensor& x, bool train, bool binary) override;
  Tensor backward(const Tensor& g, bool binary, bool need_input_grad) override;
  void collect_params(std::vector<ParamView>& out, const std::string& prefix) override;
  void rebinarize() override;
  size_t weight_count() const override { return w_bar.numel(); }
  bool binarized() const override { return binarized_; }
  void set_binarized(bool b) override;

  int in, out;
  bool binarized_;
  Tensor w_bar;   // {out, in}
  Tensor w_bin;   // Sign(w_bar), kept in lockstep by rebinarize()
  double theta = 1.0;
  Tensor g_w;
  double g_theta = 0.0;

 private:
  Tensor x_, pre_;
};

class Conv2dLayer final : public Layer {
 public:
  // Valid padding, stride 1, bias-free.
  Conv2dLayer(int in_c, int out_c, int k, bool binarized, Rng& init);
  LayerKind kind() const override { return LayerKind::Conv2d; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<Conv2dLayer>(*this); }
  Tensor forward(const Tensor& x, bool train, bool binary) override;
  Tensor backward(const Tensor& g, bool binary, bool need_input_grad) override;
  void collect_params(std::vector<ParamView>& out, const std::string& prefix) override;
  void rebinarize() override;
  size_t weight_count() const override { return w_bar.numel(); }
  bool binarized() const override { return binarized_; }
  void set_binarized(bool b) override;

  int in_c, out_c, k;
  bool binarized_;
  Tensor w_bar;  // {out_c, in_c, k, k}
  Tensor w_bin;
  double theta = 1.0;
  Tensor g_w;
  double g_theta = 0.0;

 private:
  Tensor x_, pre_;
};

class BatchNormLayer final : public Layer {
 public:
  explicit BatchNormLayer(int features);
  LayerKind kind() const override { return LayerKind::BatchNorm; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<BatchNormLayer>(*this); }
  Tensor forward(const Tensor& x, bool train, bool binary) override;
  Tensor backward(const Tensor& g, bool binary, bool need_input_grad) override;
  void collect_params(std::vector<ParamView>& out, const std::string& prefix) override;

  int features;
  double momentum = 0.1;
  double eps = 1e-5;
  Tensor gamma, beta;          // trainable affine
  Tensor run_mean, run_var;    // eval-path statistics, biased variance
  Tensor g_gamma, g_beta;

 private:
  Tensor xhat_, inv_std_;
  int spatial_ = 1;
  bool train_mode_ = true;
};

class TanhLayer final : public Layer {
 public:
  LayerKind kind() const override { return LayerKind::Tanh; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<TanhLayer>(*this); }
  Tensor forward(const Tensor& x, bool train, bool binary) override;
  Tensor backward(const Tensor& g, bool binary, bool need_input_grad) override;

 private:
  Tensor y_;
};

class SoftmaxLayer final : public Layer {
 public:
  LayerKind kind() const override { return LayerKind::Softmax; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<SoftmaxLayer>(*this); }
  Tensor forward(const Tensor& x, bool train, bool binary) override;
  Tensor backward(const Tensor& g, bool binary, bool need_input_grad) override;

 private:
  Tensor y_;
};

class PoolDown2Layer final : public Layer {
 public:
  // 2x2 average pooling, stride 2; spatial dims must be even.
  LayerKind kind() const override { return LayerKind::PoolDown2; }
  std::unique_ptr<Layer> clone() const override { return std::make_unique<PoolDown2Layer>(*this); }
  Tensor forward(const Tensor& x, bool train, bool binary) override;
  Tensor backward(const Tensor& g, bool binary, bool need_input_grad) override;

 private:
  std::vector<int> in_shape_;
};

struct Model {
  std::vector<std::unique_ptr<Layer>> layers;

  Model() = default;
  Model(const Model& o);
  Model& operator=(const Model& o);
  Model(Model&&) = default;
  Model& operator=(Model&&) = default;

  Tensor forward(const Tensor& x, bool train, bool binary);
  // dout is dL/d(model output); parameter grads accumulate in the layers.
  void backward(const Tensor& dout, bool binary);
  void zero_grads();
  std::vector<ParamView> params();
  void rebinarize();
  void set_binarized(bool b);
  // N and L of the communication charge formulas: total dense/conv weight
  // count, and the number of scale-carrying (dense/conv) layers. Both are
  // architecture properties, independent of whether layers are binarized.
  size_t weight_count_total() const;
  int scale_layer_count() const;

  // dense 784-64 (binary) -> batchnorm -> tanh -> dense 64-10 (binary) -> softmax
  static Model desk(Rng& init, bool binarized = true);
  // conv k3 (binary) -> batchnorm -> tanh -> pool2 -> dense -> softmax,
  // for exercising the convolution/pooling path at small scale
  static Model conv_small(int image, int in_c, int conv_c, int classes, Rng& init,
                          bool binarized = true);
};

// Mean cross-entropy of probability rows against integer labels.
double cross_entropy(const Tensor& prob, const std::vector<int>& labels);
// dL/dprob for the mean cross-entropy.
Tensor cross_entropy_grad(const Tensor& prob, const std::vector<int>& labels);
// Fraction of rows whose argmax equals the label, in percent.
double accuracy_percent(const Tensor& prob, const std::vector<int>& labels);

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Optimizer {
 public:
  virtual ~Optimizer() = default;
  // Applies accumulated grads at rate lr, then clips unit-interval params
  // and re-binarizes. One optimizer instance per model; slot order follows
  // Model::params().
  virtual void step(Model& m, double lr) = 0;
  virtual std::unique_ptr<Optimizer> clone() const = 0;
};

class Sgd final : public Optimizer {
 public:
  void step(Model& m, double lr) override;
  std::unique_ptr<Optimizer> clone() const override { return std::make_unique<Sgd>(*this); }
};

class Adam final : public Optimizer {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}
  void step(Model& m, double lr) override;
  std::unique_ptr<Optimizer> clone() const override { return std::make_unique<Adam>(*this); }

 private:
  AdamConfig cfg_;
  std::vector<std::vector<double>> m_, v_;
  long t_ = 0;
};

struct TrainStats {
  double loss = 0.0;
  int correct = 0;
};

// forward (train mode) -> cross-entropy -> backward -> optimizer step.
// binary selects the forward/backward path of binarized layers.
TrainStats train_batch(Model& m, Optimizer& opt, const Tensor& x, const std::vector<int>& y,
                       double lr, bool binary);

struct EvalResult {
  double loss = 0.0;
  double accuracy = 0.0;  // percent
};

EvalResult evaluate(Model& m, const Tensor& x, const std::vector<int>& y, int batch, bool binary);

// Versioned little-endian binary checkpoint: layer specs, W-bar as float32,
// W^b packed one bit per weight, theta/BatchNorm parameters as float32, and
// the caller's RNG state. Byte layout documented in the README.
void save_checkpoint(const std::string& path, const Model& m, const Rng& rng);
struct Checkpoint {
  Model model;
  Rng rng;
};
Checkpoint load_checkpoint(const std::string& path);

}  // namespace bifl
