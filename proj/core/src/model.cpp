#include "softcbm/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

#include "softcbm/error.hpp"
#include "softcbm/kv_document.hpp"

namespace softcbm {

using nn::Mode;

std::string to_string(BackboneKind kind) {
  return kind == BackboneKind::resnet34_3d ? "resnet34_3d" : "densenet121_3d";
}

BackboneKind parse_backbone_kind(const std::string& name) {
  if (name == "resnet34_3d") return BackboneKind::resnet34_3d;
  if (name == "densenet121_3d") return BackboneKind::densenet121_3d;
  throw ValidationError("unknown backbone kind: " + name);
}

const std::vector<std::string>& default_stage_names() {
  static const std::vector<std::string> names{"stem", "stage1", "stage2", "stage3", "stage4"};
  return names;
}

void BackboneSpec::validate() const {
  require(width_scale > 0.0 && width_scale <= 1.0, "width_scale must lie in (0, 1]");
  require(input_shape.d >= 8 && input_shape.h >= 8 && input_shape.w >= 8, "input shape must be at least 8 per axis");
  require(stage_names == default_stage_names(), "stage names must be stem, stage1..stage4");
}

int BackboneSpec::scaled(int base) const {
  return std::max(1, static_cast<int>(std::lround(base * width_scale)));
}

int BackboneSpec::embedding_dim() const {
  if (kind == BackboneKind::resnet34_3d) return scaled(512);
  // DenseNet-121 channel bookkeeping: blocks of 6, 12, 24, 16 layers with
  // transitions halving the width.
  const int growth = scaled(32);
  int c = scaled(64);
  const int layers[4] = {6, 12, 24, 16};
  for (int b = 0; b < 4; ++b) {
    c += layers[b] * growth;
    if (b < 3) c /= 2;
  }
  return c;
}

std::string parameter_group(const std::string& name) { return name.substr(0, name.find('.')); }

namespace {

template <typename T>
std::unique_ptr<nn::Sequential<T>> resnet_stem(const BackboneSpec& spec) {
  const int w = spec.scaled(64);
  auto s = std::make_unique<nn::Sequential<T>>();
  auto conv = std::make_unique<nn::Conv3d<T>>("stem.conv.weight", 1, w, 7, 2, 3);
  conv->set_input_grad(false);
  s->add(std::move(conv));
  s->add(std::make_unique<nn::BatchNorm3d<T>>("stem.bn", w));
  s->add(std::make_unique<nn::Relu<T>>());
  s->add(std::make_unique<nn::MaxPool3d<T>>());
  return s;
}

template <typename T>
std::unique_ptr<nn::Module<T>> resnet_stage(const BackboneSpec& spec, int index) {
  static const int blocks[4] = {3, 4, 6, 3};
  static const int widths[4] = {64, 128, 256, 512};
  const std::string name = "stage" + std::to_string(index + 1);
  const int in = spec.scaled(index == 0 ? 64 : widths[index - 1]);
  const int out = spec.scaled(widths[index]);
  auto s = std::make_unique<nn::Sequential<T>>();
  for (int b = 0; b < blocks[index]; ++b)
    s->add(std::make_unique<nn::BasicBlock<T>>(name + "." + std::to_string(b), b == 0 ? in : out, out,
                                               b == 0 && index > 0 ? 2 : 1));
  return s;
}

template <typename T>
std::unique_ptr<nn::Module<T>> densenet_stage(const BackboneSpec& spec, int index, int& channels) {
  static const int layers[4] = {6, 12, 24, 16};
  const std::string name = "stage" + std::to_string(index + 1);
  const int growth = spec.scaled(32);
  auto s = std::make_unique<nn::Sequential<T>>();
  auto block = std::make_unique<nn::DenseBlock<T>>(name + ".block", channels, layers[index], growth, 4 * growth);
  channels = block->out_channels();
  s->add(std::move(block));
  if (index < 3) {
    const int out = channels / 2;
    s->add(std::make_unique<nn::BatchNorm3d<T>>(name + ".transition.norm", channels));
    s->add(std::make_unique<nn::Relu<T>>());
    s->add(std::make_unique<nn::Conv3d<T>>(name + ".transition.conv.weight", channels, out, 1, 1, 0));
    s->add(std::make_unique<nn::AvgPool3d<T>>());
    channels = out;
  } else {
    s->add(std::make_unique<nn::BatchNorm3d<T>>(name + ".norm", channels));
    s->add(std::make_unique<nn::Relu<T>>());
  }
  return s;
}

template <typename T>
T clamp_open_unit(double v) {
  const double eps = std::numeric_limits<T>::epsilon();
  return static_cast<T>(std::clamp(v, eps, 1.0 - eps));
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = clamp_open_unit<T>(1.0 / (1.0 + std::exp(-static_cast<double>(x[i]))));
  return y;
}

}  // namespace

template <typename T>
BottleneckNet<T>::BottleneckNet(const BackboneSpec& spec, int n_concepts, double dropout, std::uint64_t init_seed)
    : spec_(spec), n_concepts_(n_concepts), dropout_(dropout) {
  spec_.validate();
  require(n_concepts >= 1, "n_concepts must be >= 1");
  require(dropout >= 0.0 && dropout < 1.0, "dropout must lie in [0, 1)");

  if (spec_.kind == BackboneKind::resnet34_3d) {
    stages_.push_back({"stem", resnet_stem<T>(spec_)});
    for (int i = 0; i < 4; ++i) stages_.push_back({"stage" + std::to_string(i + 1), resnet_stage<T>(spec_, i)});
    z_dim_ = spec_.scaled(512);
  } else {
    int channels = spec_.scaled(64);
    auto stem = std::make_unique<nn::Sequential<T>>();
    auto conv = std::make_unique<nn::Conv3d<T>>("stem.conv.weight", 1, channels, 7, 2, 3);
    conv->set_input_grad(false);
    stem->add(std::move(conv));
    stem->add(std::make_unique<nn::BatchNorm3d<T>>("stem.norm", channels));
    stem->add(std::make_unique<nn::Relu<T>>());
    stem->add(std::make_unique<nn::MaxPool3d<T>>());
    stages_.push_back({"stem", std::move(stem)});
    for (int i = 0; i < 4; ++i)
      stages_.push_back({"stage" + std::to_string(i + 1), densenet_stage<T>(spec_, i, channels)});
    z_dim_ = channels;
  }
  require(z_dim_ == spec_.embedding_dim(), "embedding size bookkeeping mismatch");

  hidden_dim_ = std::max(1, static_cast<int>(std::lround(z_dim_ / 4.0)));
  pool_ = std::make_unique<nn::GlobalAvgPool<T>>();
  concept_head_ = std::make_unique<nn::Linear<T>>("concept_head", z_dim_, n_concepts_);
  task_head_ = std::make_unique<nn::Sequential<T>>();
  task_head_->add(std::make_unique<nn::Linear<T>>("task_head.hidden", z_dim_ + n_concepts_, hidden_dim_));
  task_head_->add(std::make_unique<nn::Relu<T>>());
  task_head_->add(std::make_unique<nn::Dropout<T>>(dropout_));
  task_head_->add(std::make_unique<nn::Linear<T>>("task_head.out", hidden_dim_, 2));

  for (auto& s : stages_) s.module->collect(params_);
  concept_head_->collect(params_);
  task_head_->collect(params_);
  nn::initialize_parameters(params_, init_seed);
  set_trainable_stages({spec_.stage_names.begin(), spec_.stage_names.end()}, true);
}

template <typename T>
void BottleneckNet<T>::set_trainable_stages(const std::set<std::string>& stages, bool heads_trainable) {
  for (const auto& s : stages)
    require(std::find(spec_.stage_names.begin(), spec_.stage_names.end(), s) != spec_.stage_names.end(),
            "unknown stage name: " + s);
  trainable_ = stages;
  heads_trainable_ = heads_trainable;
  for (auto* p : params_) {
    const std::string g = parameter_group(p->name);
    const bool head = g == "concept_head" || g == "task_head";
    p->trainable = !p->is_buffer() && (head ? heads_trainable : stages.count(g) > 0);
  }
}

template <typename T>
std::vector<const nn::Parameter<T>*> BottleneckNet<T>::parameters() const {
  return {params_.begin(), params_.end()};
}

template <typename T>
void BottleneckNet<T>::zero_grad() {
  for (auto* p : params_) p->grad.fill(T(0));
}

template <typename T>
ForwardOutput<T> BottleneckNet<T>::forward(const Tensor<T>& batch, Mode mode, nn::Tape<T>* tape, Rng* rng) const {
  require(batch.rank() == 5 && batch.dim(1) == 1 && batch.dim(2) == spec_.input_shape.d &&
              batch.dim(3) == spec_.input_shape.h && batch.dim(4) == spec_.input_shape.w,
          "input batch shape does not match the model input shape " + spec_.input_shape.to_string());
  require(batch.dim(0) >= 1, "empty batch");

  // Stages before the first trainable one are recorded nowhere.
  std::size_t first_recorded = stages_.size();
  if (tape)
    for (std::size_t i = 0; i < stages_.size(); ++i)
      if (trainable_.count(stages_[i].name)) {
        first_recorded = i;
        break;
      }

  Tensor<T> h = batch;
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    nn::Context<T> ctx;
    ctx.mode = trainable_.count(stages_[i].name) ? mode : Mode::eval;
    ctx.tape = i >= first_recorded ? tape : nullptr;
    ctx.rng = rng;
    h = stages_[i].module->forward(h, ctx);
  }
  nn::Context<T> head_ctx{mode, tape, rng};
  nn::Context<T> pool_ctx{mode, first_recorded < stages_.size() ? tape : nullptr, rng};
  ForwardOutput<T> out;
  out.z = pool_->forward(h, pool_ctx);
  if (tape) tape->push_flag(static_cast<int>(first_recorded));

  out.c = sigmoid(concept_head_->forward(out.z, head_ctx));
  if (tape) tape->push(out.c);
  out.logits = task_head_->forward(nn::concat_channels(out.z, out.c), head_ctx);
  return out;
}

template <typename T>
Tensor<T> BottleneckNet<T>::task_logits(const Tensor<T>& z, const Tensor<T>& c) const {
  require(z.rank() == 2 && c.rank() == 2 && z.dim(0) == c.dim(0) && z.dim(1) == z_dim_ && c.dim(1) == n_concepts_,
          "task head input has the wrong shape");
  nn::Context<T> ctx;
  return task_head_->forward(nn::concat_channels(z, c), ctx);
}

template <typename T>
void BottleneckNet<T>::backward(const Tensor<T>& d_logits, const Tensor<T>& d_c, nn::Tape<T>& tape) {
  Tensor<T> dzc = task_head_->backward(d_logits, tape);
  Tensor<T> dz, dc;
  nn::split_channels(dzc, z_dim_, dz, dc);
  require(dc.same_shape(d_c), "concept gradient has the wrong shape");
  const Tensor<T> c = tape.pop();
  for (std::size_t i = 0; i < dc.size(); ++i) dc[i] = (dc[i] + d_c[i]) * c[i] * (T(1) - c[i]);
  const Tensor<T> dz_concept = concept_head_->backward(dc, tape);
  for (std::size_t i = 0; i < dz.size(); ++i) dz[i] += dz_concept[i];

  const std::size_t first_recorded = static_cast<std::size_t>(tape.pop_flag());
  if (first_recorded >= stages_.size()) return;
  Tensor<T> g = pool_->backward(dz, tape);
  for (std::size_t i = stages_.size(); i-- > first_recorded;) g = stages_[i].module->backward(g, tape);
}

template <typename T>
std::string BottleneckNet<T>::fingerprint() const {
  return to_string(spec_.kind) + ";width_scale=" + format_exact(spec_.width_scale) + ";input=" +
         spec_.input_shape.to_string() + ";z_dim=" + std::to_string(z_dim_) +
         ";n_concepts=" + std::to_string(n_concepts_) + ";hidden=" + std::to_string(hidden_dim_);
}

template <typename T>
std::uint64_t BottleneckNet<T>::checksum(const std::set<std::string>& groups) const {
  std::uint64_t h = 1469598103934665603ULL;
  for (const auto* p : params_) {
    if (!groups.count(parameter_group(p->name))) continue;
    const auto* bytes = reinterpret_cast<const unsigned char*>(p->value.data());
    for (std::size_t i = 0; i < p->value.size() * sizeof(T); ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  }
  return h;
}

Tensor<float> make_batch(const std::vector<const Volume*>& volumes) {
  require(!volumes.empty(), "empty batch");
  const Shape3 s = volumes.front()->shape();
  Tensor<float> t({static_cast<int>(volumes.size()), 1, s.d, s.h, s.w});
  for (std::size_t i = 0; i < volumes.size(); ++i) {
    require(volumes[i]->shape() == s, "batch volumes differ in shape");
    std::copy(volumes[i]->data().begin(), volumes[i]->data().end(), t.data() + i * s.voxels());
  }
  return t;
}

template class BottleneckNet<float>;
template class BottleneckNet<double>;

}  // namespace softcbm
