#pragma once

#include <cstdint>
#include <memory>
#include <set>
#include <string>
#include <vector>

#include "softcbm/nn.hpp"
#include "softcbm/volume.hpp"

namespace softcbm {

enum class BackboneKind { resnet34_3d, densenet121_3d };

std::string to_string(BackboneKind kind);
/// Throws ValidationError for an unknown name.
BackboneKind parse_backbone_kind(const std::string& name);

const std::vector<std::string>& default_stage_names();

struct BackboneSpec {
  BackboneKind kind = BackboneKind::resnet34_3d;
  double width_scale = 1.0;
  Shape3 input_shape{96, 96, 96};
  std::vector<std::string> stage_names = default_stage_names();

  void validate() const;
  /// Channel count after rounding `base * width_scale` (at least 1).
  int scaled(int base) const;
  /// 512 (ResNet) or 1024 (DenseNet) at width_scale 1.
  int embedding_dim() const;
};

template <typename T>
struct ForwardOutput {
  Tensor<T> z;       // (N, z_dim)
  Tensor<T> c;       // (N, n_concepts), strictly inside (0,1)
  Tensor<T> logits;  // (N, 2)
};

/// Backbone + concept head + task head reading z concatenated with c.
///
/// Stages named "stem", "stage1".."stage4" make up the encoder. A stage that
/// is not trainable runs its normalization in inference mode and contributes
/// no gradient; backward stops at the earliest trainable stage.
template <typename T>
class BottleneckNet {
 public:
  BottleneckNet(const BackboneSpec& spec, int n_concepts, double dropout, std::uint64_t init_seed);
  BottleneckNet(const BottleneckNet&) = delete;
  BottleneckNet& operator=(const BottleneckNet&) = delete;
  BottleneckNet(BottleneckNet&&) noexcept = default;
  BottleneckNet& operator=(BottleneckNet&&) noexcept = default;

  const BackboneSpec& spec() const { return spec_; }
  int z_dim() const { return z_dim_; }
  int n_concepts() const { return n_concepts_; }
  int task_input_dim() const { return z_dim_ + n_concepts_; }
  int hidden_dim() const { return hidden_dim_; }
  double dropout() const { return dropout_; }

  /// `batch` is (N, 1, D, H, W) with D,H,W equal to the spec's input shape.
  /// With a tape, everything needed by backward() is recorded; without one the
  /// call has no side effects.
  ForwardOutput<T> forward(const Tensor<T>& batch, nn::Mode mode, nn::Tape<T>* tape = nullptr,
                           Rng* rng = nullptr) const;
  /// Task head in inference mode on explicit z and c, both (N, .).
  Tensor<T> task_logits(const Tensor<T>& z, const Tensor<T>& c) const;

  /// `d_logits` is dL/dlogits, `d_c` the direct dL/dc from the concept loss.
  /// The gradient reaching c through the task head is added to `d_c`.
  void backward(const Tensor<T>& d_logits, const Tensor<T>& d_c, nn::Tape<T>& tape);

  /// Throws ValidationError for a name outside the stage list.
  void set_trainable_stages(const std::set<std::string>& stages, bool heads_trainable);
  const std::set<std::string>& trainable_stages() const { return trainable_; }
  bool heads_trainable() const { return heads_trainable_; }

  const std::vector<nn::Parameter<T>*>& parameters() { return params_; }
  std::vector<const nn::Parameter<T>*> parameters() const;
  void zero_grad();

  /// Architecture identity used by checkpoints.
  std::string fingerprint() const;
  /// FNV-1a over the bytes of every parameter and buffer whose group is in
  /// `groups` (stage names, "concept_head", "task_head").
  std::uint64_t checksum(const std::set<std::string>& groups) const;

 private:
  struct Stage {
    std::string name;
    std::unique_ptr<nn::Module<T>> module;
  };

  BackboneSpec spec_;
  int n_concepts_;
  double dropout_;
  int z_dim_ = 0;
  int hidden_dim_ = 0;
  std::vector<Stage> stages_;
  std::unique_ptr<nn::GlobalAvgPool<T>> pool_;
  std::unique_ptr<nn::Linear<T>> concept_head_;
  std::unique_ptr<nn::Sequential<T>> task_head_;
  std::vector<nn::Parameter<T>*> params_;
  std::set<std::string> trainable_;
  bool heads_trainable_ = true;
};

/// First dotted component of a parameter name ("stage3.1.conv2.weight" -> "stage3").
std::string parameter_group(const std::string& name);

template <typename T>
BottleneckNet<T> build_model(const BackboneSpec& spec, int n_concepts, std::uint64_t init_seed, double dropout = 0.3) {
  return BottleneckNet<T>(spec, n_concepts, dropout, init_seed);
}

using Model = BottleneckNet<float>;

/// Copies a (D, H, W) volume list into an (N, 1, D, H, W) float batch.
Tensor<float> make_batch(const std::vector<const Volume*>& volumes);

}  // namespace softcbm
