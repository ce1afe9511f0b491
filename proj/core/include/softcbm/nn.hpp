#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "softcbm/rng.hpp"
#include "softcbm/tensor.hpp"

namespace softcbm::nn {

enum class Mode { train, eval };

enum class ParamKind { conv_weight, linear_weight, linear_bias, norm_weight, norm_bias, running_mean, running_var };

/// Named learnable tensor, or a persisted buffer such as running statistics.
template <typename T>
struct Parameter {
  std::string name;
  ParamKind kind = ParamKind::conv_weight;
  Tensor<T> value;
  Tensor<T> grad;
  int fan_in = 0;
  int fan_out = 0;
  bool trainable = true;

  Parameter() = default;
  Parameter(std::string n, ParamKind k, std::vector<int> shape, int in = 0, int out = 0)
      : name(std::move(n)), kind(k), value(shape), grad(is_buffer_kind(k) ? std::vector<int>{0} : shape),
        fan_in(in), fan_out(out) {}

  bool is_buffer() const { return is_buffer_kind(kind); }
  static bool is_buffer_kind(ParamKind k) { return k == ParamKind::running_mean || k == ParamKind::running_var; }
};

/// LIFO store of activations recorded by forward() and consumed by backward().
template <typename T>
class Tape {
 public:
  void push(Tensor<T> t) { tensors_.push_back(std::move(t)); }
  Tensor<T> pop();
  void push_index(std::vector<std::int32_t> idx) { indices_.push_back(std::move(idx)); }
  std::vector<std::int32_t> pop_index();
  void push_flag(int flag) { flags_.push_back(flag); }
  int pop_flag();
  bool empty() const { return tensors_.empty() && indices_.empty() && flags_.empty(); }
  void clear() {
    tensors_.clear();
    indices_.clear();
    flags_.clear();
  }

 private:
  std::vector<Tensor<T>> tensors_;
  std::vector<std::vector<std::int32_t>> indices_;
  std::vector<int> flags_;
};

/// Forward-pass settings. When `tape` is null nothing is recorded and the
/// pass has no side effects, which makes eval-mode forward safe to run from
/// several threads on one model.
template <typename T>
struct Context {
  Mode mode = Mode::eval;
  Tape<T>* tape = nullptr;
  Rng* rng = nullptr;
};

template <typename T>
class Module {
 public:
  virtual ~Module() = default;
  virtual Tensor<T> forward(const Tensor<T>& x, Context<T>& ctx) const = 0;
  /// Consumes the entries forward() recorded, accumulates gradients of
  /// trainable parameters and returns the gradient w.r.t. the input.
  virtual Tensor<T> backward(const Tensor<T>& grad_out, Tape<T>& tape) = 0;
  virtual void collect(std::vector<Parameter<T>*>& out) = 0;
};

template <typename T>
class Conv3d final : public Module<T> {
 public:
  Conv3d(std::string name, int in_channels, int out_channels, int kernel, int stride, int padding);
  Tensor<T> forward(const Tensor<T>& x, Context<T>& ctx) const override;
  Tensor<T> backward(const Tensor<T>& grad_out, Tape<T>& tape) override;
  void collect(std::vector<Parameter<T>*>& out) override { out.push_back(&weight_); }

  int out_channels() const { return out_; }
  Parameter<T>& weight() { return weight_; }
  /// The first layer of a network does not need the gradient w.r.t. its input.
  void set_input_grad(bool enabled) { input_grad_ = enabled; }

 private:
  int in_, out_, kernel_, stride_, pad_;
  bool input_grad_ = true;
  Parameter<T> weight_;
};

template <typename T>
class BatchNorm3d final : public Module<T> {
 public:
  BatchNorm3d(std::string name, int channels, double momentum = 0.1, double eps = 1e-5);
  Tensor<T> forward(const Tensor<T>& x, Context<T>& ctx) const override;
  /// Train-mode backward also folds the recorded batch statistics into the running ones.
  Tensor<T> backward(const Tensor<T>& grad_out, Tape<T>& tape) override;
  void collect(std::vector<Parameter<T>*>& out) override;

 private:
  int channels_;
  double momentum_, eps_;
  Parameter<T> gamma_, beta_, running_mean_, running_var_;
};

template <typename T>
class Relu final : public Module<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, Context<T>& ctx) const override;
  Tensor<T> backward(const Tensor<T>& grad_out, Tape<T>& tape) override;
  void collect(std::vector<Parameter<T>*>&) override {}
};

/// Kernel 3, stride 2, padding 1.
template <typename T>
class MaxPool3d final : public Module<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, Context<T>& ctx) const override;
  Tensor<T> backward(const Tensor<T>& grad_out, Tape<T>& tape) override;
  void collect(std::vector<Parameter<T>*>&) override {}
};

/// Kernel 2, stride 2, ceil mode (a trailing odd element forms its own window).
template <typename T>
class AvgPool3d final : public Module<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, Context<T>& ctx) const override;
  Tensor<T> backward(const Tensor<T>& grad_out, Tape<T>& tape) override;
  void collect(std::vector<Parameter<T>*>&) override {}
};

/// (N, C, D, H, W) -> (N, C).
template <typename T>
class GlobalAvgPool final : public Module<T> {
 public:
  Tensor<T> forward(const Tensor<T>& x, Context<T>& ctx) const override;
  Tensor<T> backward(const Tensor<T>& grad_out, Tape<T>& tape) override;
  void collect(std::vector<Parameter<T>*>&) override {}
};

/// (N, in) -> (N, out).
template <typename T>
class Linear final : public Module<T> {
 public:
  Linear(std::string name, int in_features, int out_features);
  Tensor<T> forward(const Tensor<T>& x, Context<T>& ctx) const override;
  Tensor<T> backward(const Tensor<T>& grad_out, Tape<T>& tape) override;
  void collect(std::vector<Parameter<T>*>& out) override {
    out.push_back(&weight_);
    out.push_back(&bias_);
  }
  int in_features() const { return in_; }
  int out_features() const { return out_; }
  Parameter<T>& weight() { return weight_; }
  Parameter<T>& bias() { return bias_; }

 private:
  int in_, out_;
  Parameter<T> weight_, bias_;
};

/// Inverted dropout; active only in train mode with a non-null rng.
template <typename T>
class Dropout final : public Module<T> {
 public:
  explicit Dropout(double rate) : rate_(rate) {}
  Tensor<T> forward(const Tensor<T>& x, Context<T>& ctx) const override;
  Tensor<T> backward(const Tensor<T>& grad_out, Tape<T>& tape) override;
  void collect(std::vector<Parameter<T>*>&) override {}
  double rate() const { return rate_; }

 private:
  double rate_;
};

template <typename T>
class Sequential final : public Module<T> {
 public:
  void add(std::unique_ptr<Module<T>> m) { modules_.push_back(std::move(m)); }
  Tensor<T> forward(const Tensor<T>& x, Context<T>& ctx) const override;
  Tensor<T> backward(const Tensor<T>& grad_out, Tape<T>& tape) override;
  void collect(std::vector<Parameter<T>*>& out) override {
    for (auto& m : modules_) m->collect(out);
  }
  std::size_t size() const { return modules_.size(); }

 private:
  std::vector<std::unique_ptr<Module<T>>> modules_;
};

/// ResNet basic block: two 3x3x3 convolutions with batch norm and an
/// identity or 1x1x1-projection shortcut.
template <typename T>
class BasicBlock final : public Module<T> {
 public:
  BasicBlock(const std::string& name, int in_channels, int out_channels, int stride);
  Tensor<T> forward(const Tensor<T>& x, Context<T>& ctx) const override;
  Tensor<T> backward(const Tensor<T>& grad_out, Tape<T>& tape) override;
  void collect(std::vector<Parameter<T>*>& out) override;

 private:
  Conv3d<T> conv1_;
  BatchNorm3d<T> bn1_;
  Relu<T> relu1_;
  Conv3d<T> conv2_;
  BatchNorm3d<T> bn2_;
  std::unique_ptr<Conv3d<T>> down_conv_;
  std::unique_ptr<BatchNorm3d<T>> down_bn_;
  Relu<T> relu_out_;
};

/// DenseNet bottleneck layer (BN-ReLU-1x1 conv-BN-ReLU-3x3 conv); its output is
/// concatenated to the input by DenseBlock.
template <typename T>
class DenseBlock final : public Module<T> {
 public:
  DenseBlock(const std::string& name, int in_channels, int layers, int growth, int bottleneck_width);
  Tensor<T> forward(const Tensor<T>& x, Context<T>& ctx) const override;
  Tensor<T> backward(const Tensor<T>& grad_out, Tape<T>& tape) override;
  void collect(std::vector<Parameter<T>*>& out) override;
  int out_channels() const { return out_channels_; }

 private:
  std::vector<std::unique_ptr<Sequential<T>>> layers_;
  std::vector<int> layer_inputs_;
  int growth_;
  int out_channels_;
};

/// Concatenates along channels: (N, Ca, S) ++ (N, Cb, S).
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b);

/// Splits along channels at `first_channels`.
template <typename T>
void split_channels(const Tensor<T>& x, int first_channels, Tensor<T>& a, Tensor<T>& b);

/// Deterministic initialization: each parameter draws from its own stream,
/// derived from `seed` and its name. Convolutions: Kaiming normal (fan-out);
/// linear layers: uniform +-1/sqrt(fan_in); batch norm: gamma 1, beta 0.
template <typename T>
void initialize_parameters(const std::vector<Parameter<T>*>& params, std::uint64_t seed);

}  // namespace softcbm::nn
