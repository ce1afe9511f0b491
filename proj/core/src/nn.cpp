#include "softcbm/nn.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Core>

#include "softcbm/error.hpp"

namespace softcbm::nn {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatMap = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMatMap = Eigen::Map<const RowMat<T>>;

template <typename T>
void push_shape(Tape<T>& tape, const std::vector<int>& shape) {
  for (int d : shape) tape.push_flag(d);
  tape.push_flag(static_cast<int>(shape.size()));
}

template <typename T>
std::vector<int> pop_shape(Tape<T>& tape) {
  std::vector<int> shape(static_cast<std::size_t>(tape.pop_flag()));
  for (auto it = shape.rbegin(); it != shape.rend(); ++it) *it = tape.pop_flag();
  return shape;
}

void check_activation(const std::vector<int>& shape, int channels, const char* what) {
  require(shape.size() == 5, std::string(what) + " expects a (N, C, D, H, W) input");
  require(channels < 0 || shape[1] == channels, std::string(what) + " got an unexpected channel count");
}

int conv_out(int n, int k, int s, int p) { return (n + 2 * p - k) / s + 1; }

struct ConvGeometry {
  int c, d, h, w, k, s, p, od, oh, ow;
  std::size_t rows() const { return static_cast<std::size_t>(c) * k * k * k; }
  std::size_t cols() const { return static_cast<std::size_t>(od) * oh * ow; }
};

template <typename T>
void im2col(const T* x, const ConvGeometry& g, T* col) {
  std::size_t row = 0;
  for (int c = 0; c < g.c; ++c)
    for (int kd = 0; kd < g.k; ++kd)
      for (int kh = 0; kh < g.k; ++kh)
        for (int kw = 0; kw < g.k; ++kw, ++row) {
          T* out = col + row * g.cols();
          const T* xc = x + static_cast<std::size_t>(c) * g.d * g.h * g.w;
          for (int od = 0; od < g.od; ++od) {
            const int id = od * g.s - g.p + kd;
            for (int oh = 0; oh < g.oh; ++oh) {
              const int ih = oh * g.s - g.p + kh;
              T* o = out + (static_cast<std::size_t>(od) * g.oh + oh) * g.ow;
              if (id < 0 || id >= g.d || ih < 0 || ih >= g.h) {
                std::fill(o, o + g.ow, T(0));
                continue;
              }
              const T* xr = xc + (static_cast<std::size_t>(id) * g.h + ih) * g.w;
              for (int ow = 0; ow < g.ow; ++ow) {
                const int iw = ow * g.s - g.p + kw;
                o[ow] = (iw >= 0 && iw < g.w) ? xr[iw] : T(0);
              }
            }
          }
        }
}

template <typename T>
void col2im(const T* col, const ConvGeometry& g, T* x) {
  std::size_t row = 0;
  for (int c = 0; c < g.c; ++c)
    for (int kd = 0; kd < g.k; ++kd)
      for (int kh = 0; kh < g.k; ++kh)
        for (int kw = 0; kw < g.k; ++kw, ++row) {
          const T* in = col + row * g.cols();
          T* xc = x + static_cast<std::size_t>(c) * g.d * g.h * g.w;
          for (int od = 0; od < g.od; ++od) {
            const int id = od * g.s - g.p + kd;
            if (id < 0 || id >= g.d) continue;
            for (int oh = 0; oh < g.oh; ++oh) {
              const int ih = oh * g.s - g.p + kh;
              if (ih < 0 || ih >= g.h) continue;
              const T* r = in + (static_cast<std::size_t>(od) * g.oh + oh) * g.ow;
              T* xr = xc + (static_cast<std::size_t>(id) * g.h + ih) * g.w;
              for (int ow = 0; ow < g.ow; ++ow) {
                const int iw = ow * g.s - g.p + kw;
                if (iw >= 0 && iw < g.w) xr[iw] += r[ow];
              }
            }
          }
        }
}

}  // namespace

template <typename T>
Tensor<T> Tape<T>::pop() {
  require(!tensors_.empty(), "tape underflow");
  Tensor<T> t = std::move(tensors_.back());
  tensors_.pop_back();
  return t;
}

template <typename T>
std::vector<std::int32_t> Tape<T>::pop_index() {
  require(!indices_.empty(), "tape index underflow");
  auto v = std::move(indices_.back());
  indices_.pop_back();
  return v;
}

template <typename T>
int Tape<T>::pop_flag() {
  require(!flags_.empty(), "tape flag underflow");
  const int f = flags_.back();
  flags_.pop_back();
  return f;
}

// ---- Conv3d ----

template <typename T>
Conv3d<T>::Conv3d(std::string name, int in_channels, int out_channels, int kernel, int stride, int padding)
    : in_(in_channels), out_(out_channels), kernel_(kernel), stride_(stride), pad_(padding),
      weight_(std::move(name), ParamKind::conv_weight, {out_channels, in_channels, kernel, kernel, kernel},
              in_channels * kernel * kernel * kernel, out_channels * kernel * kernel * kernel) {
  require(in_channels > 0 && out_channels > 0 && kernel > 0 && stride > 0 && padding >= 0,
          "invalid convolution geometry");
}

template <typename T>
Tensor<T> Conv3d<T>::forward(const Tensor<T>& x, Context<T>& ctx) const {
  check_activation(x.shape(), in_, "conv3d");
  const int n = x.dim(0);
  ConvGeometry g{in_, x.dim(2), x.dim(3), x.dim(4), kernel_, stride_, pad_, 0, 0, 0};
  g.od = conv_out(g.d, kernel_, stride_, pad_);
  g.oh = conv_out(g.h, kernel_, stride_, pad_);
  g.ow = conv_out(g.w, kernel_, stride_, pad_);
  require(g.od > 0 && g.oh > 0 && g.ow > 0, "convolution input is smaller than its kernel");
  Tensor<T> y({n, out_, g.od, g.oh, g.ow});
  const bool direct = kernel_ == 1 && stride_ == 1 && pad_ == 0;
  std::vector<T> col(direct ? 0 : g.rows() * g.cols());
  ConstMatMap<T> w(weight_.value.data(), out_, static_cast<Eigen::Index>(g.rows()));
  const std::size_t in_stride = static_cast<std::size_t>(in_) * g.d * g.h * g.w;
  const std::size_t out_stride = static_cast<std::size_t>(out_) * g.cols();
  for (int b = 0; b < n; ++b) {
    const T* xb = x.data() + b * in_stride;
    if (!direct) im2col(xb, g, col.data());
    ConstMatMap<T> cm(direct ? xb : col.data(), static_cast<Eigen::Index>(g.rows()),
                      static_cast<Eigen::Index>(g.cols()));
    MatMap<T> ym(y.data() + b * out_stride, out_, static_cast<Eigen::Index>(g.cols()));
    ym.noalias() = w * cm;
  }
  if (ctx.tape) ctx.tape->push(x);
  return y;
}

template <typename T>
Tensor<T> Conv3d<T>::backward(const Tensor<T>& grad_out, Tape<T>& tape) {
  const Tensor<T> x = tape.pop();
  const int n = x.dim(0);
  ConvGeometry g{in_, x.dim(2), x.dim(3), x.dim(4), kernel_, stride_, pad_,
                 grad_out.dim(2), grad_out.dim(3), grad_out.dim(4)};
  const bool direct = kernel_ == 1 && stride_ == 1 && pad_ == 0;
  std::vector<T> col(direct ? 0 : g.rows() * g.cols());
  std::vector<T> dcol(direct || !input_grad_ ? 0 : g.rows() * g.cols());
  ConstMatMap<T> w(weight_.value.data(), out_, static_cast<Eigen::Index>(g.rows()));
  MatMap<T> dw(weight_.grad.data(), out_, static_cast<Eigen::Index>(g.rows()));
  Tensor<T> dx(x.shape());
  const std::size_t in_stride = static_cast<std::size_t>(in_) * g.d * g.h * g.w;
  const std::size_t out_stride = static_cast<std::size_t>(out_) * g.cols();
  for (int b = 0; b < n; ++b) {
    ConstMatMap<T> dy(grad_out.data() + b * out_stride, out_, static_cast<Eigen::Index>(g.cols()));
    if (weight_.trainable) {
      const T* xb = x.data() + b * in_stride;
      if (!direct) im2col(xb, g, col.data());
      ConstMatMap<T> cm(direct ? xb : col.data(), static_cast<Eigen::Index>(g.rows()),
                        static_cast<Eigen::Index>(g.cols()));
      dw.noalias() += dy * cm.transpose();
    }
    if (!input_grad_) continue;
    if (direct) {
      MatMap<T> dxm(dx.data() + b * in_stride, static_cast<Eigen::Index>(g.rows()),
                    static_cast<Eigen::Index>(g.cols()));
      dxm.noalias() = w.transpose() * dy;
    } else {
      MatMap<T> dc(dcol.data(), static_cast<Eigen::Index>(g.rows()), static_cast<Eigen::Index>(g.cols()));
      dc.noalias() = w.transpose() * dy;
      col2im(dcol.data(), g, dx.data() + b * in_stride);
    }
  }
  return dx;
}

// ---- BatchNorm3d ----

template <typename T>
BatchNorm3d<T>::BatchNorm3d(std::string name, int channels, double momentum, double eps)
    : channels_(channels), momentum_(momentum), eps_(eps),
      gamma_(name + ".weight", ParamKind::norm_weight, {channels}),
      beta_(name + ".bias", ParamKind::norm_bias, {channels}),
      running_mean_(name + ".running_mean", ParamKind::running_mean, {channels}),
      running_var_(name + ".running_var", ParamKind::running_var, {channels}) {
  require(channels > 0, "batch norm needs at least one channel");
  gamma_.value.fill(T(1));
  running_var_.value.fill(T(1));
}

template <typename T>
void BatchNorm3d<T>::collect(std::vector<Parameter<T>*>& out) {
  out.push_back(&gamma_);
  out.push_back(&beta_);
  out.push_back(&running_mean_);
  out.push_back(&running_var_);
}

template <typename T>
Tensor<T> BatchNorm3d<T>::forward(const Tensor<T>& x, Context<T>& ctx) const {
  check_activation(x.shape(), channels_, "batch norm");
  const int n = x.dim(0);
  const std::size_t s = x.spatial();
  Tensor<T> y(x.shape());
  if (ctx.mode == Mode::eval) {
    for (int b = 0; b < n; ++b)
      for (int c = 0; c < channels_; ++c) {
        const double inv = 1.0 / std::sqrt(static_cast<double>(running_var_.value[c]) + eps_);
        const double scale = gamma_.value[c] * inv;
        const double shift = beta_.value[c] - running_mean_.value[c] * scale;
        const std::size_t off = (static_cast<std::size_t>(b) * channels_ + c) * s;
        for (std::size_t i = 0; i < s; ++i) y[off + i] = static_cast<T>(x[off + i] * scale + shift);
      }
    if (ctx.tape) {
      Tensor<T> xhat(x.shape());
      for (int b = 0; b < n; ++b)
        for (int c = 0; c < channels_; ++c) {
          const double inv = 1.0 / std::sqrt(static_cast<double>(running_var_.value[c]) + eps_);
          const std::size_t off = (static_cast<std::size_t>(b) * channels_ + c) * s;
          for (std::size_t i = 0; i < s; ++i) xhat[off + i] = static_cast<T>((x[off + i] - running_mean_.value[c]) * inv);
        }
      ctx.tape->push(std::move(xhat));
      ctx.tape->push_flag(0);
    }
    return y;
  }

  const double m = static_cast<double>(n) * static_cast<double>(s);
  require(m > 1.0, "batch norm in train mode needs more than one value per channel");
  Tensor<T> xhat(x.shape());
  Tensor<T> stats({3, channels_});  // inv std, batch mean, unbiased batch var
  for (int c = 0; c < channels_; ++c) {
    double sum = 0.0;
    for (int b = 0; b < n; ++b) {
      const T* p = x.data() + (static_cast<std::size_t>(b) * channels_ + c) * s;
      for (std::size_t i = 0; i < s; ++i) sum += p[i];
    }
    const double mean = sum / m;
    double sq = 0.0;
    for (int b = 0; b < n; ++b) {
      const T* p = x.data() + (static_cast<std::size_t>(b) * channels_ + c) * s;
      for (std::size_t i = 0; i < s; ++i) {
        const double d = p[i] - mean;
        sq += d * d;
      }
    }
    const double var = sq / m;
    const double inv = 1.0 / std::sqrt(var + eps_);
    stats[c] = static_cast<T>(inv);
    stats[channels_ + c] = static_cast<T>(mean);
    stats[2 * channels_ + c] = static_cast<T>(sq / (m - 1.0));
    const double g = gamma_.value[c], bt = beta_.value[c];
    for (int b = 0; b < n; ++b) {
      const std::size_t off = (static_cast<std::size_t>(b) * channels_ + c) * s;
      for (std::size_t i = 0; i < s; ++i) {
        const double h = (x[off + i] - mean) * inv;
        xhat[off + i] = static_cast<T>(h);
        y[off + i] = static_cast<T>(g * h + bt);
      }
    }
  }
  if (ctx.tape) {
    ctx.tape->push(std::move(xhat));
    ctx.tape->push(std::move(stats));
    ctx.tape->push_flag(1);
  }
  return y;
}

template <typename T>
Tensor<T> BatchNorm3d<T>::backward(const Tensor<T>& grad_out, Tape<T>& tape) {
  const bool train = tape.pop_flag() == 1;
  Tensor<T> stats;
  if (train) stats = tape.pop();
  const Tensor<T> xhat = tape.pop();
  const int n = xhat.dim(0);
  const std::size_t s = xhat.spatial();
  Tensor<T> dx(xhat.shape());
  for (int c = 0; c < channels_; ++c) {
    double sum_dy = 0.0, sum_dy_xhat = 0.0;
    for (int b = 0; b < n; ++b) {
      const std::size_t off = (static_cast<std::size_t>(b) * channels_ + c) * s;
      for (std::size_t i = 0; i < s; ++i) {
        sum_dy += grad_out[off + i];
        sum_dy_xhat += static_cast<double>(grad_out[off + i]) * xhat[off + i];
      }
    }
    if (gamma_.trainable) gamma_.grad[c] += static_cast<T>(sum_dy_xhat);
    if (beta_.trainable) beta_.grad[c] += static_cast<T>(sum_dy);
    const double g = gamma_.value[c];
    if (train) {
      const double m = static_cast<double>(n) * static_cast<double>(s);
      const double inv = stats[c];
      const double mean_dy = sum_dy / m, mean_dy_xhat = sum_dy_xhat / m;
      for (int b = 0; b < n; ++b) {
        const std::size_t off = (static_cast<std::size_t>(b) * channels_ + c) * s;
        for (std::size_t i = 0; i < s; ++i)
          dx[off + i] = static_cast<T>(g * inv * (grad_out[off + i] - mean_dy - xhat[off + i] * mean_dy_xhat));
      }
      running_mean_.value[c] =
          static_cast<T>((1.0 - momentum_) * running_mean_.value[c] + momentum_ * stats[channels_ + c]);
      running_var_.value[c] =
          static_cast<T>((1.0 - momentum_) * running_var_.value[c] + momentum_ * stats[2 * channels_ + c]);
    } else {
      const double inv = 1.0 / std::sqrt(static_cast<double>(running_var_.value[c]) + eps_);
      for (int b = 0; b < n; ++b) {
        const std::size_t off = (static_cast<std::size_t>(b) * channels_ + c) * s;
        for (std::size_t i = 0; i < s; ++i) dx[off + i] = static_cast<T>(grad_out[off + i] * g * inv);
      }
    }
  }
  return dx;
}

// ---- ReLU ----

template <typename T>
Tensor<T> Relu<T>::forward(const Tensor<T>& x, Context<T>& ctx) const {
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
  if (ctx.tape) ctx.tape->push(y);
  return y;
}

template <typename T>
Tensor<T> Relu<T>::backward(const Tensor<T>& grad_out, Tape<T>& tape) {
  const Tensor<T> y = tape.pop();
  Tensor<T> dx(y.shape());
  for (std::size_t i = 0; i < y.size(); ++i) dx[i] = y[i] > T(0) ? grad_out[i] : T(0);
  return dx;
}

// ---- MaxPool3d ----

template <typename T>
Tensor<T> MaxPool3d<T>::forward(const Tensor<T>& x, Context<T>& ctx) const {
  check_activation(x.shape(), -1, "max pool");
  const int n = x.dim(0), ch = x.dim(1), d = x.dim(2), h = x.dim(3), w = x.dim(4);
  const int od = conv_out(d, 3, 2, 1), oh = conv_out(h, 3, 2, 1), ow = conv_out(w, 3, 2, 1);
  Tensor<T> y({n, ch, od, oh, ow});
  std::vector<std::int32_t> arg(ctx.tape ? y.size() : 0);
  const std::size_t in_s = x.spatial(), out_s = y.spatial();
  for (std::size_t nc = 0; nc < static_cast<std::size_t>(n) * ch; ++nc) {
    const T* xp = x.data() + nc * in_s;
    std::size_t o = nc * out_s;
    for (int z = 0; z < od; ++z)
      for (int yy = 0; yy < oh; ++yy)
        for (int xx = 0; xx < ow; ++xx, ++o) {
          T best = -std::numeric_limits<T>::infinity();
          std::int32_t best_i = -1;
          for (int kz = z * 2 - 1; kz <= z * 2 + 1; ++kz) {
            if (kz < 0 || kz >= d) continue;
            for (int ky = yy * 2 - 1; ky <= yy * 2 + 1; ++ky) {
              if (ky < 0 || ky >= h) continue;
              for (int kx = xx * 2 - 1; kx <= xx * 2 + 1; ++kx) {
                if (kx < 0 || kx >= w) continue;
                const std::int32_t idx = (kz * h + ky) * w + kx;
                if (best_i < 0 || xp[idx] > best) {
                  best = xp[idx];
                  best_i = idx;
                }
              }
            }
          }
          y[o] = best;
          if (ctx.tape) arg[o] = best_i;
        }
  }
  if (ctx.tape) {
    ctx.tape->push_index(std::move(arg));
    push_shape(*ctx.tape, x.shape());
  }
  return y;
}

template <typename T>
Tensor<T> MaxPool3d<T>::backward(const Tensor<T>& grad_out, Tape<T>& tape) {
  const auto shape = pop_shape(tape);
  const auto arg = tape.pop_index();
  Tensor<T> dx(shape);
  const std::size_t in_s = dx.spatial(), out_s = grad_out.spatial();
  for (std::size_t o = 0; o < grad_out.size(); ++o) dx[(o / out_s) * in_s + arg[o]] += grad_out[o];
  return dx;
}

// ---- AvgPool3d ----

template <typename T>
Tensor<T> AvgPool3d<T>::forward(const Tensor<T>& x, Context<T>& ctx) const {
  check_activation(x.shape(), -1, "avg pool");
  const int n = x.dim(0), ch = x.dim(1), d = x.dim(2), h = x.dim(3), w = x.dim(4);
  const int od = (d + 1) / 2, oh = (h + 1) / 2, ow = (w + 1) / 2;
  Tensor<T> y({n, ch, od, oh, ow});
  const std::size_t in_s = x.spatial(), out_s = y.spatial();
  for (std::size_t nc = 0; nc < static_cast<std::size_t>(n) * ch; ++nc) {
    const T* xp = x.data() + nc * in_s;
    std::size_t o = nc * out_s;
    for (int z = 0; z < od; ++z)
      for (int yy = 0; yy < oh; ++yy)
        for (int xx = 0; xx < ow; ++xx, ++o) {
          double sum = 0.0;
          int count = 0;
          for (int kz = 2 * z; kz < std::min(2 * z + 2, d); ++kz)
            for (int ky = 2 * yy; ky < std::min(2 * yy + 2, h); ++ky)
              for (int kx = 2 * xx; kx < std::min(2 * xx + 2, w); ++kx, ++count) sum += xp[(kz * h + ky) * w + kx];
          y[o] = static_cast<T>(sum / count);
        }
  }
  if (ctx.tape) push_shape(*ctx.tape, x.shape());
  return y;
}

template <typename T>
Tensor<T> AvgPool3d<T>::backward(const Tensor<T>& grad_out, Tape<T>& tape) {
  Tensor<T> dx(pop_shape(tape));
  const int n = dx.dim(0), ch = dx.dim(1), d = dx.dim(2), h = dx.dim(3), w = dx.dim(4);
  const int od = grad_out.dim(2), oh = grad_out.dim(3), ow = grad_out.dim(4);
  const std::size_t in_s = dx.spatial(), out_s = grad_out.spatial();
  for (std::size_t nc = 0; nc < static_cast<std::size_t>(n) * ch; ++nc) {
    T* dp = dx.data() + nc * in_s;
    std::size_t o = nc * out_s;
    for (int z = 0; z < od; ++z)
      for (int yy = 0; yy < oh; ++yy)
        for (int xx = 0; xx < ow; ++xx, ++o) {
          const int z1 = std::min(2 * z + 2, d), y1 = std::min(2 * yy + 2, h), x1 = std::min(2 * xx + 2, w);
          const int count = (z1 - 2 * z) * (y1 - 2 * yy) * (x1 - 2 * xx);
          const T g = grad_out[o] / static_cast<T>(count);
          for (int kz = 2 * z; kz < z1; ++kz)
            for (int ky = 2 * yy; ky < y1; ++ky)
              for (int kx = 2 * xx; kx < x1; ++kx) dp[(kz * h + ky) * w + kx] += g;
        }
  }
  return dx;
}

// ---- GlobalAvgPool ----

template <typename T>
Tensor<T> GlobalAvgPool<T>::forward(const Tensor<T>& x, Context<T>& ctx) const {
  check_activation(x.shape(), -1, "global pool");
  const int n = x.dim(0), ch = x.dim(1);
  const std::size_t s = x.spatial();
  Tensor<T> y({n, ch});
  for (std::size_t nc = 0; nc < static_cast<std::size_t>(n) * ch; ++nc) {
    double sum = 0.0;
    for (std::size_t i = 0; i < s; ++i) sum += x[nc * s + i];
    y[nc] = static_cast<T>(sum / static_cast<double>(s));
  }
  if (ctx.tape) push_shape(*ctx.tape, x.shape());
  return y;
}

template <typename T>
Tensor<T> GlobalAvgPool<T>::backward(const Tensor<T>& grad_out, Tape<T>& tape) {
  Tensor<T> dx(pop_shape(tape));
  const std::size_t s = dx.spatial();
  for (std::size_t nc = 0; nc < grad_out.size(); ++nc) {
    const T g = grad_out[nc] / static_cast<T>(s);
    std::fill(dx.data() + nc * s, dx.data() + (nc + 1) * s, g);
  }
  return dx;
}

// ---- Linear ----

template <typename T>
Linear<T>::Linear(std::string name, int in_features, int out_features)
    : in_(in_features), out_(out_features),
      weight_(name + ".weight", ParamKind::linear_weight, {out_features, in_features}, in_features, out_features),
      bias_(name + ".bias", ParamKind::linear_bias, {out_features}, in_features, out_features) {
  require(in_features > 0 && out_features > 0, "linear layer needs positive sizes");
}

template <typename T>
Tensor<T> Linear<T>::forward(const Tensor<T>& x, Context<T>& ctx) const {
  require(x.rank() == 2 && x.dim(1) == in_, "linear layer got an unexpected input shape");
  const int n = x.dim(0);
  Tensor<T> y({n, out_});
  ConstMatMap<T> xm(x.data(), n, in_);
  ConstMatMap<T> wm(weight_.value.data(), out_, in_);
  MatMap<T> ym(y.data(), n, out_);
  ym.noalias() = xm * wm.transpose();
  for (int b = 0; b < n; ++b)
    for (int o = 0; o < out_; ++o) y[static_cast<std::size_t>(b) * out_ + o] += bias_.value[o];
  if (ctx.tape) ctx.tape->push(x);
  return y;
}

template <typename T>
Tensor<T> Linear<T>::backward(const Tensor<T>& grad_out, Tape<T>& tape) {
  const Tensor<T> x = tape.pop();
  const int n = x.dim(0);
  ConstMatMap<T> xm(x.data(), n, in_);
  ConstMatMap<T> dy(grad_out.data(), n, out_);
  ConstMatMap<T> wm(weight_.value.data(), out_, in_);
  if (weight_.trainable) {
    MatMap<T> dw(weight_.grad.data(), out_, in_);
    dw.noalias() += dy.transpose() * xm;
  }
  if (bias_.trainable)
    for (int b = 0; b < n; ++b)
      for (int o = 0; o < out_; ++o) bias_.grad[o] += grad_out[static_cast<std::size_t>(b) * out_ + o];
  Tensor<T> dx({n, in_});
  MatMap<T> dxm(dx.data(), n, in_);
  dxm.noalias() = dy * wm;
  return dx;
}

// ---- Dropout ----

template <typename T>
Tensor<T> Dropout<T>::forward(const Tensor<T>& x, Context<T>& ctx) const {
  const bool active = ctx.mode == Mode::train && ctx.rng && rate_ > 0.0;
  if (!active) {
    if (ctx.tape) ctx.tape->push_flag(0);
    return x;
  }
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate_));
  Tensor<T> mask(x.shape());
  Tensor<T> y(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    mask[i] = ctx.rng->bernoulli(rate_) ? T(0) : keep_scale;
    y[i] = x[i] * mask[i];
  }
  if (ctx.tape) {
    ctx.tape->push(std::move(mask));
    ctx.tape->push_flag(1);
  }
  return y;
}

template <typename T>
Tensor<T> Dropout<T>::backward(const Tensor<T>& grad_out, Tape<T>& tape) {
  if (tape.pop_flag() == 0) return grad_out;
  const Tensor<T> mask = tape.pop();
  Tensor<T> dx(grad_out.shape());
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] = grad_out[i] * mask[i];
  return dx;
}

// ---- Sequential ----

template <typename T>
Tensor<T> Sequential<T>::forward(const Tensor<T>& x, Context<T>& ctx) const {
  if (modules_.empty()) return x;
  Tensor<T> h = modules_.front()->forward(x, ctx);
  for (std::size_t i = 1; i < modules_.size(); ++i) h = modules_[i]->forward(h, ctx);
  return h;
}

template <typename T>
Tensor<T> Sequential<T>::backward(const Tensor<T>& grad_out, Tape<T>& tape) {
  Tensor<T> g = grad_out;
  for (auto it = modules_.rbegin(); it != modules_.rend(); ++it) g = (*it)->backward(g, tape);
  return g;
}

// ---- BasicBlock ----

template <typename T>
BasicBlock<T>::BasicBlock(const std::string& name, int in_channels, int out_channels, int stride)
    : conv1_(name + ".conv1.weight", in_channels, out_channels, 3, stride, 1),
      bn1_(name + ".bn1", out_channels),
      conv2_(name + ".conv2.weight", out_channels, out_channels, 3, 1, 1),
      bn2_(name + ".bn2", out_channels) {
  if (stride != 1 || in_channels != out_channels) {
    down_conv_ = std::make_unique<Conv3d<T>>(name + ".downsample.0.weight", in_channels, out_channels, 1, stride, 0);
    down_bn_ = std::make_unique<BatchNorm3d<T>>(name + ".downsample.1", out_channels);
  }
}

template <typename T>
void BasicBlock<T>::collect(std::vector<Parameter<T>*>& out) {
  conv1_.collect(out);
  bn1_.collect(out);
  conv2_.collect(out);
  bn2_.collect(out);
  if (down_conv_) {
    down_conv_->collect(out);
    down_bn_->collect(out);
  }
}

template <typename T>
Tensor<T> BasicBlock<T>::forward(const Tensor<T>& x, Context<T>& ctx) const {
  Tensor<T> h = relu1_.forward(bn1_.forward(conv1_.forward(x, ctx), ctx), ctx);
  h = bn2_.forward(conv2_.forward(h, ctx), ctx);
  if (down_conv_) {
    const Tensor<T> sc = down_bn_->forward(down_conv_->forward(x, ctx), ctx);
    for (std::size_t i = 0; i < h.size(); ++i) h[i] += sc[i];
  } else {
    for (std::size_t i = 0; i < h.size(); ++i) h[i] += x[i];
  }
  return relu_out_.forward(h, ctx);
}

template <typename T>
Tensor<T> BasicBlock<T>::backward(const Tensor<T>& grad_out, Tape<T>& tape) {
  const Tensor<T> g = relu_out_.backward(grad_out, tape);
  Tensor<T> dsc = g;
  if (down_conv_) dsc = down_conv_->backward(down_bn_->backward(g, tape), tape);
  Tensor<T> dx = conv1_.backward(bn1_.backward(relu1_.backward(conv2_.backward(bn2_.backward(g, tape), tape), tape), tape), tape);
  for (std::size_t i = 0; i < dx.size(); ++i) dx[i] += dsc[i];
  return dx;
}

// ---- DenseBlock ----

template <typename T>
DenseBlock<T>::DenseBlock(const std::string& name, int in_channels, int layers, int growth, int bottleneck_width)
    : growth_(growth) {
  int c = in_channels;
  for (int l = 0; l < layers; ++l) {
    const std::string p = name + ".denselayer" + std::to_string(l + 1);
    auto seq = std::make_unique<Sequential<T>>();
    seq->add(std::make_unique<BatchNorm3d<T>>(p + ".norm1", c));
    seq->add(std::make_unique<Relu<T>>());
    seq->add(std::make_unique<Conv3d<T>>(p + ".conv1.weight", c, bottleneck_width, 1, 1, 0));
    seq->add(std::make_unique<BatchNorm3d<T>>(p + ".norm2", bottleneck_width));
    seq->add(std::make_unique<Relu<T>>());
    seq->add(std::make_unique<Conv3d<T>>(p + ".conv2.weight", bottleneck_width, growth, 3, 1, 1));
    layers_.push_back(std::move(seq));
    layer_inputs_.push_back(c);
    c += growth;
  }
  out_channels_ = c;
}

template <typename T>
void DenseBlock<T>::collect(std::vector<Parameter<T>*>& out) {
  for (auto& l : layers_) l->collect(out);
}

template <typename T>
Tensor<T> DenseBlock<T>::forward(const Tensor<T>& x, Context<T>& ctx) const {
  Tensor<T> features = x;
  for (const auto& l : layers_) features = concat_channels(features, l->forward(features, ctx));
  return features;
}

template <typename T>
Tensor<T> DenseBlock<T>::backward(const Tensor<T>& grad_out, Tape<T>& tape) {
  Tensor<T> g = grad_out;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    Tensor<T> g_prev, g_new;
    split_channels(g, layer_inputs_[i], g_prev, g_new);
    const Tensor<T> d = layers_[i]->backward(g_new, tape);
    for (std::size_t j = 0; j < g_prev.size(); ++j) g_prev[j] += d[j];
    g = std::move(g_prev);
  }
  return g;
}

// ---- helpers ----

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& a, const Tensor<T>& b) {
  require(a.rank() >= 2 && a.rank() == b.rank() && a.dim(0) == b.dim(0) && a.spatial() == b.spatial(),
          "concat_channels needs matching batch and spatial sizes");
  std::vector<int> shape = a.shape();
  shape[1] = a.dim(1) + b.dim(1);
  Tensor<T> out(shape);
  const std::size_t sa = static_cast<std::size_t>(a.dim(1)) * a.spatial();
  const std::size_t sb = static_cast<std::size_t>(b.dim(1)) * b.spatial();
  for (int n = 0; n < a.dim(0); ++n) {
    T* dst = out.data() + n * (sa + sb);
    std::copy_n(a.data() + n * sa, sa, dst);
    std::copy_n(b.data() + n * sb, sb, dst + sa);
  }
  return out;
}

template <typename T>
void split_channels(const Tensor<T>& x, int first_channels, Tensor<T>& a, Tensor<T>& b) {
  require(x.rank() >= 2 && first_channels >= 0 && first_channels <= x.dim(1), "bad channel split");
  std::vector<int> sa_shape = x.shape(), sb_shape = x.shape();
  sa_shape[1] = first_channels;
  sb_shape[1] = x.dim(1) - first_channels;
  a = Tensor<T>(sa_shape);
  b = Tensor<T>(sb_shape);
  const std::size_t sa = static_cast<std::size_t>(sa_shape[1]) * x.spatial();
  const std::size_t sb = static_cast<std::size_t>(sb_shape[1]) * x.spatial();
  for (int n = 0; n < x.dim(0); ++n) {
    const T* src = x.data() + n * (sa + sb);
    std::copy_n(src, sa, a.data() + n * sa);
    std::copy_n(src + sa, sb, b.data() + n * sb);
  }
}

template <typename T>
void initialize_parameters(const std::vector<Parameter<T>*>& params, std::uint64_t seed) {
  for (Parameter<T>* p : params) {
    Rng rng(derive_seed({seed, hash_string(p->name)}));
    switch (p->kind) {
      case ParamKind::conv_weight: {
        const double sd = std::sqrt(2.0 / p->fan_out);
        for (T& v : p->value.values()) v = static_cast<T>(rng.normal(0.0, sd));
        break;
      }
      case ParamKind::linear_weight:
      case ParamKind::linear_bias: {
        const double bound = 1.0 / std::sqrt(static_cast<double>(p->fan_in));
        for (T& v : p->value.values()) v = static_cast<T>(rng.uniform(-bound, bound));
        break;
      }
      case ParamKind::norm_weight:
      case ParamKind::running_var: p->value.fill(T(1)); break;
      case ParamKind::norm_bias:
      case ParamKind::running_mean: p->value.fill(T(0)); break;
    }
    p->grad.fill(T(0));
  }
}

#define SOFTCBM_NN_INSTANTIATE(T)                                                              \
  template class Tape<T>;                                                                      \
  template class Conv3d<T>;                                                                    \
  template class BatchNorm3d<T>;                                                               \
  template class Relu<T>;                                                                      \
  template class MaxPool3d<T>;                                                                 \
  template class AvgPool3d<T>;                                                                 \
  template class GlobalAvgPool<T>;                                                             \
  template class Linear<T>;                                                                    \
  template class Dropout<T>;                                                                   \
  template class Sequential<T>;                                                                \
  template class BasicBlock<T>;                                                                \
  template class DenseBlock<T>;                                                                \
  template Tensor<T> concat_channels(const Tensor<T>&, const Tensor<T>&);                      \
  template void split_channels(const Tensor<T>&, int, Tensor<T>&, Tensor<T>&);                 \
  template void initialize_parameters(const std::vector<Parameter<T>*>&, std::uint64_t);

SOFTCBM_NN_INSTANTIATE(float)
SOFTCBM_NN_INSTANTIATE(double)

}  // namespace softcbm::nn
