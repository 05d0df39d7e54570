#include "segattack/nn/network.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <random>

#include "segattack/error.hpp"
#include "segattack/simd/kernels.hpp"

namespace segattack::nn {
namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

struct ConvGeometry {
  int out_h;
  int out_w;
  std::size_t col_rows;  // in * k * k
  std::size_t col_cols;  // out_h * out_w
};

ConvGeometry geometry(const Conv2d& conv, const Tensor3& in) {
  if (in.channels() != conv.in_channels) {
    fail(ErrorKind::shape, "convolution expects " + std::to_string(conv.in_channels) +
                               " input channels, got " + std::to_string(in.channels()));
  }
  ConvGeometry g{conv.out_size(in.height()), conv.out_size(in.width()), 0, 0};
  if (g.out_h < 1 || g.out_w < 1) fail(ErrorKind::shape, "input too small for convolution");
  g.col_rows = static_cast<std::size_t>(conv.in_channels) * static_cast<std::size_t>(conv.kernel * conv.kernel);
  g.col_cols = static_cast<std::size_t>(g.out_h) * static_cast<std::size_t>(g.out_w);
  return g;
}

bool is_pointwise(const Conv2d& conv) {
  return conv.kernel == 1 && conv.stride == 1 && conv.padding == 0;
}

void im2col(const Conv2d& conv, const Tensor3& in, const ConvGeometry& g, std::vector<double>& col) {
  col.assign(g.col_rows * g.col_cols, 0.0);
  const int k = conv.kernel;
  for (int c = 0; c < conv.in_channels; ++c) {
    const double* src = in.plane(c);
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        double* row = col.data() + (static_cast<std::size_t>((c * k + ky) * k + kx)) * g.col_cols;
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int iy = oy * conv.stride - conv.padding + ky * conv.dilation;
          if (iy < 0 || iy >= in.height()) continue;
          double* dst = row + static_cast<std::size_t>(oy) * static_cast<std::size_t>(g.out_w);
          const double* srow = src + static_cast<std::size_t>(iy) * static_cast<std::size_t>(in.width());
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int ix = ox * conv.stride - conv.padding + kx * conv.dilation;
            if (ix >= 0 && ix < in.width()) dst[ox] = srow[ix];
          }
        }
      }
    }
  }
}

void col2im(const Conv2d& conv, const std::vector<double>& col, const ConvGeometry& g, Tensor3& out) {
  const int k = conv.kernel;
  for (int c = 0; c < conv.in_channels; ++c) {
    double* dst = out.plane(c);
    for (int ky = 0; ky < k; ++ky) {
      for (int kx = 0; kx < k; ++kx) {
        const double* row = col.data() + (static_cast<std::size_t>((c * k + ky) * k + kx)) * g.col_cols;
        for (int oy = 0; oy < g.out_h; ++oy) {
          const int iy = oy * conv.stride - conv.padding + ky * conv.dilation;
          if (iy < 0 || iy >= out.height()) continue;
          const double* src = row + static_cast<std::size_t>(oy) * static_cast<std::size_t>(g.out_w);
          double* drow = dst + static_cast<std::size_t>(iy) * static_cast<std::size_t>(out.width());
          for (int ox = 0; ox < g.out_w; ++ox) {
            const int ix = ox * conv.stride - conv.padding + kx * conv.dilation;
            if (ix >= 0 && ix < out.width()) drow[ix] += src[ox];
          }
        }
      }
    }
  }
}

Tensor3 conv_forward(const Conv2d& conv, const Tensor3& in) {
  const auto g = geometry(conv, in);
  Tensor3 out(conv.out_channels, g.out_h, g.out_w);
  for (int m = 0; m < conv.out_channels; ++m) {
    std::fill(out.plane(m), out.plane(m) + g.col_cols, conv.bias[static_cast<std::size_t>(m)]);
  }
  const auto& kern = simd::active();
  if (is_pointwise(conv)) {
    kern.gemm_nn(static_cast<std::size_t>(conv.out_channels), g.col_cols, g.col_rows, conv.weight.data(),
                 g.col_rows, in.data(), g.col_cols, out.data(), g.col_cols);
    return out;
  }
  std::vector<double> col;
  im2col(conv, in, g, col);
  kern.gemm_nn(static_cast<std::size_t>(conv.out_channels), g.col_cols, g.col_rows, conv.weight.data(),
               g.col_rows, col.data(), g.col_cols, out.data(), g.col_cols);
  return out;
}

Tensor3 conv_backward(const Conv2d& conv, const Tensor3& in, const Tensor3& dout, std::vector<double>* dweight,
                      std::vector<double>* dbias) {
  const auto g = geometry(conv, in);
  const auto& kern = simd::active();
  const auto cout = static_cast<std::size_t>(conv.out_channels);
  std::vector<double> col;
  const double* col_ptr = in.data();
  if (!is_pointwise(conv)) {
    im2col(conv, in, g, col);
    col_ptr = col.data();
  }
  if (dbias != nullptr) {
    for (std::size_t m = 0; m < cout; ++m) {
      const double* row = dout.plane(static_cast<int>(m));
      double s = 0.0;
      for (std::size_t i = 0; i < g.col_cols; ++i) s += row[i];
      (*dbias)[m] += s;
    }
  }
  if (dweight != nullptr) {
    kern.gemm_nt(cout, g.col_rows, g.col_cols, dout.data(), g.col_cols, col_ptr, g.col_cols, dweight->data(),
                 g.col_rows);
  }
  std::vector<double> wt(g.col_rows * cout);
  for (std::size_t m = 0; m < cout; ++m) {
    for (std::size_t r = 0; r < g.col_rows; ++r) wt[r * cout + m] = conv.weight[m * g.col_rows + r];
  }
  Tensor3 din(in.channels(), in.height(), in.width());
  if (is_pointwise(conv)) {
    kern.gemm_nn(g.col_rows, g.col_cols, cout, wt.data(), cout, dout.data(), g.col_cols, din.data(), g.col_cols);
    return din;
  }
  std::vector<double> dcol(g.col_rows * g.col_cols, 0.0);
  kern.gemm_nn(g.col_rows, g.col_cols, cout, wt.data(), cout, dout.data(), g.col_cols, dcol.data(), g.col_cols);
  col2im(conv, dcol, g, din);
  return din;
}

struct AxisWeights {
  std::vector<int> lo;
  std::vector<int> hi;
  std::vector<double> w_hi;
};

AxisWeights axis_weights(int in_size, int scale) {
  const int out_size = in_size * scale;
  AxisWeights a;
  a.lo.resize(static_cast<std::size_t>(out_size));
  a.hi.resize(static_cast<std::size_t>(out_size));
  a.w_hi.resize(static_cast<std::size_t>(out_size));
  for (int o = 0; o < out_size; ++o) {
    double src = (static_cast<double>(o) + 0.5) / static_cast<double>(scale) - 0.5;
    if (src < 0.0) src = 0.0;
    int lo = static_cast<int>(std::floor(src));
    lo = std::min(lo, in_size - 1);
    const int hi = std::min(lo + 1, in_size - 1);
    const auto idx = static_cast<std::size_t>(o);
    a.lo[idx] = lo;
    a.hi[idx] = hi;
    a.w_hi[idx] = src - static_cast<double>(lo);
  }
  return a;
}

Tensor3 upsample_forward(const UpsampleBilinear& up, const Tensor3& in) {
  const auto ay = axis_weights(in.height(), up.scale);
  const auto ax = axis_weights(in.width(), up.scale);
  Tensor3 out(in.channels(), in.height() * up.scale, in.width() * up.scale);
  for (int c = 0; c < in.channels(); ++c) {
    for (int oy = 0; oy < out.height(); ++oy) {
      const auto yi = static_cast<std::size_t>(oy);
      const double wy = ay.w_hi[yi];
      for (int ox = 0; ox < out.width(); ++ox) {
        const auto xi = static_cast<std::size_t>(ox);
        const double wx = ax.w_hi[xi];
        const double top = (1.0 - wx) * in.at(c, ay.lo[yi], ax.lo[xi]) + wx * in.at(c, ay.lo[yi], ax.hi[xi]);
        const double bot = (1.0 - wx) * in.at(c, ay.hi[yi], ax.lo[xi]) + wx * in.at(c, ay.hi[yi], ax.hi[xi]);
        out.at(c, oy, ox) = (1.0 - wy) * top + wy * bot;
      }
    }
  }
  return out;
}

Tensor3 upsample_backward(const UpsampleBilinear& up, const Tensor3& in, const Tensor3& dout) {
  const auto ay = axis_weights(in.height(), up.scale);
  const auto ax = axis_weights(in.width(), up.scale);
  Tensor3 din(in.channels(), in.height(), in.width());
  for (int c = 0; c < in.channels(); ++c) {
    for (int oy = 0; oy < dout.height(); ++oy) {
      const auto yi = static_cast<std::size_t>(oy);
      const double wy = ay.w_hi[yi];
      for (int ox = 0; ox < dout.width(); ++ox) {
        const auto xi = static_cast<std::size_t>(ox);
        const double wx = ax.w_hi[xi];
        const double g = dout.at(c, oy, ox);
        din.at(c, ay.lo[yi], ax.lo[xi]) += (1.0 - wy) * (1.0 - wx) * g;
        din.at(c, ay.lo[yi], ax.hi[xi]) += (1.0 - wy) * wx * g;
        din.at(c, ay.hi[yi], ax.lo[xi]) += wy * (1.0 - wx) * g;
        din.at(c, ay.hi[yi], ax.hi[xi]) += wy * wx * g;
      }
    }
  }
  return din;
}

// Checkpoint I/O: native-endian fields, little-endian hosts only.
constexpr char kMagic[8] = {'S', 'G', 'A', 'T', 'N', 'E', 'T', '1'};

template <class T>
void put(std::ofstream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

void put_string(std::ofstream& out, const std::string& s) {
  put(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

void put_doubles(std::ofstream& out, const std::vector<double>& v) {
  put(out, static_cast<std::uint64_t>(v.size()));
  out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(double)));
}

template <class T>
T get(std::ifstream& in, const std::filesystem::path& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) fail(ErrorKind::load, "truncated checkpoint " + path.string());
  return v;
}

std::string get_string(std::ifstream& in, const std::filesystem::path& path) {
  const auto n = get<std::uint32_t>(in, path);
  if (n > (1U << 20)) fail(ErrorKind::load, "corrupt string length in " + path.string());
  std::string s(n, '\0');
  in.read(s.data(), static_cast<std::streamsize>(n));
  if (!in) fail(ErrorKind::load, "truncated checkpoint " + path.string());
  return s;
}

std::vector<double> get_doubles(std::ifstream& in, const std::filesystem::path& path, std::size_t expected) {
  const auto n = get<std::uint64_t>(in, path);
  if (n != expected) {
    fail(ErrorKind::load, "parameter count mismatch in " + path.string() + ": expected " +
                              std::to_string(expected) + ", found " + std::to_string(n));
  }
  std::vector<double> v(n);
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(n * sizeof(double)));
  if (!in) fail(ErrorKind::load, "truncated checkpoint " + path.string());
  return v;
}

}  // namespace

Conv2d Conv2d::make(int in, int out, int kernel, int stride, int padding, int dilation) {
  if (in < 1 || out < 1 || kernel < 1 || stride < 1 || padding < 0 || dilation < 1) {
    fail(ErrorKind::config, "invalid convolution geometry");
  }
  Conv2d c;
  c.in_channels = in;
  c.out_channels = out;
  c.kernel = kernel;
  c.stride = stride;
  c.padding = padding;
  c.dilation = dilation;
  c.weight.assign(static_cast<std::size_t>(out) * static_cast<std::size_t>(in * kernel * kernel), 0.0);
  c.bias.assign(static_cast<std::size_t>(out), 0.0);
  return c;
}

void ParamGrads::zero() {
  for (auto& w : weight) std::fill(w.begin(), w.end(), 0.0);
  for (auto& b : bias) std::fill(b.begin(), b.end(), 0.0);
}

Network::Network(std::string architecture, std::vector<Layer> layers)
    : architecture_(std::move(architecture)), layers_(std::move(layers)) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    for (std::size_t j = i + 1; j < layers_.size(); ++j) {
      if (!layers_[i].name.empty() && layers_[i].name == layers_[j].name) {
        fail(ErrorKind::config, "duplicate layer name " + layers_[i].name);
      }
    }
    if (const auto* up = std::get_if<UpsampleBilinear>(&layers_[i].op); up != nullptr && up->scale < 1) {
      fail(ErrorKind::config, "upsample scale must be >= 1");
    }
  }
}

std::optional<std::size_t> Network::find(std::string_view name) const {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (layers_[i].name == name) return i;
  }
  return std::nullopt;
}

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.size();
  return n;
}

void Network::initialize(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  for (auto& layer : layers_) {
    if (auto* conv = std::get_if<Conv2d>(&layer.op)) {
      const double fan_in = static_cast<double>(conv->in_channels * conv->kernel * conv->kernel);
      std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
      for (auto& w : conv->weight) w = dist(rng);
      std::fill(conv->bias.begin(), conv->bias.end(), 0.0);
    }
  }
}

Tensor3 Network::forward(const Tensor3& x, Activations* acts) const {
  if (acts != nullptr) {
    acts->outputs.clear();
    acts->outputs.reserve(layers_.size() + 1);
    acts->outputs.push_back(x);
  }
  Tensor3 cur = x;
  const auto& kern = simd::active();
  for (const auto& layer : layers_) {
    std::visit(Overloaded{
                   [&](const Conv2d& conv) { cur = conv_forward(conv, cur); },
                   [&](const Relu&) { kern.relu(cur.data(), cur.size()); },
                   [&](const UpsampleBilinear& up) { cur = upsample_forward(up, cur); },
               },
               layer.op);
    if (acts != nullptr) acts->outputs.push_back(cur);
  }
  return cur;
}

Tensor3 Network::backward(const Activations& acts, const Tensor3* top, std::span<const Injection> injections,
                          ParamGrads* grads) const {
  if (acts.outputs.size() != layers_.size() + 1) fail(ErrorKind::shape, "activations do not match network");
  if (layers_.empty()) {
    Tensor3 g(acts.outputs[0].channels(), acts.outputs[0].height(), acts.outputs[0].width());
    if (top != nullptr) g = *top;
    return g;
  }
  std::size_t start = 0;
  bool any = false;
  if (top != nullptr) {
    start = layers_.size() - 1;
    any = true;
  }
  for (const auto& inj : injections) {
    if (inj.layer_index >= layers_.size()) fail(ErrorKind::index, "injection layer out of range");
    if (!any || inj.layer_index > start) start = inj.layer_index;
    any = true;
  }
  const Tensor3& in0 = acts.outputs[0];
  if (!any) return Tensor3(in0.channels(), in0.height(), in0.width());

  const auto& kern = simd::active();
  const Tensor3& start_out = acts.outputs[start + 1];
  Tensor3 grad(start_out.channels(), start_out.height(), start_out.width());
  if (top != nullptr && start == layers_.size() - 1) {
    if (!top->same_shape(grad)) fail(ErrorKind::shape, "top gradient does not match network output");
    grad = *top;
  }
  for (std::size_t i = start + 1; i-- > 0;) {
    for (const auto& inj : injections) {
      if (inj.layer_index != i) continue;
      if (!inj.grad->same_shape(grad)) fail(ErrorKind::shape, "injected gradient has the wrong shape");
      kern.axpy(1.0, inj.grad->data(), grad.data(), grad.size());
    }
    const Tensor3& in = acts.outputs[i];
    const Tensor3& out = acts.outputs[i + 1];
    std::visit(Overloaded{
                   [&](const Conv2d& conv) {
                     std::vector<double>* dw = grads != nullptr ? &grads->weight[i] : nullptr;
                     std::vector<double>* db = grads != nullptr ? &grads->bias[i] : nullptr;
                     grad = conv_backward(conv, in, grad, dw, db);
                   },
                   [&](const Relu&) { kern.relu_backward(out.data(), grad.data(), grad.size()); },
                   [&](const UpsampleBilinear& up) { grad = upsample_backward(up, in, grad); },
               },
               layers_[i].op);
  }
  return grad;
}

ParamGrads Network::make_grads() const {
  ParamGrads g;
  g.weight.resize(layers_.size());
  g.bias.resize(layers_.size());
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (const auto* conv = std::get_if<Conv2d>(&layers_[i].op)) {
      g.weight[i].assign(conv->weight.size(), 0.0);
      g.bias[i].assign(conv->bias.size(), 0.0);
    }
  }
  return g;
}

std::vector<std::span<double>> Network::parameters() {
  std::vector<std::span<double>> out;
  for (auto& layer : layers_) {
    if (auto* conv = std::get_if<Conv2d>(&layer.op)) {
      out.emplace_back(conv->weight);
      out.emplace_back(conv->bias);
    }
  }
  return out;
}

std::vector<std::span<const double>> Network::parameters() const {
  std::vector<std::span<const double>> out;
  for (const auto& layer : layers_) {
    if (const auto* conv = std::get_if<Conv2d>(&layer.op)) {
      out.emplace_back(conv->weight);
      out.emplace_back(conv->bias);
    }
  }
  return out;
}

void Network::save(const std::filesystem::path& path) const {
  static_assert(std::endian::native == std::endian::little, "checkpoints assume a little-endian host");
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot write checkpoint " + path.string());
  out.write(kMagic, sizeof(kMagic));
  put_string(out, architecture_);
  put(out, static_cast<std::uint32_t>(layers_.size()));
  for (const auto& layer : layers_) {
    put_string(out, layer.name);
    std::visit(Overloaded{
                   [&](const Conv2d& conv) {
                     put(out, std::uint8_t{0});
                     for (int v : {conv.in_channels, conv.out_channels, conv.kernel, conv.stride, conv.padding,
                                   conv.dilation}) {
                       put(out, static_cast<std::int32_t>(v));
                     }
                     put_doubles(out, conv.weight);
                     put_doubles(out, conv.bias);
                   },
                   [&](const Relu&) { put(out, std::uint8_t{1}); },
                   [&](const UpsampleBilinear& up) {
                     put(out, std::uint8_t{2});
                     put(out, static_cast<std::int32_t>(up.scale));
                   },
               },
               layer.op);
  }
  if (!out) fail(ErrorKind::io, "failed writing checkpoint " + path.string());
}

Network Network::load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::io, "cannot open weights file " + path.string());
  char magic[sizeof(kMagic)];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
    fail(ErrorKind::load, path.string() + " is not a segattack checkpoint");
  }
  auto arch = get_string(in, path);
  const auto count = get<std::uint32_t>(in, path);
  if (count > 4096) fail(ErrorKind::load, "implausible layer count in " + path.string());
  std::vector<Layer> layers;
  layers.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    Layer layer;
    layer.name = get_string(in, path);
    const auto kind = get<std::uint8_t>(in, path);
    if (kind == 0) {
      std::int32_t v[6];
      for (auto& x : v) x = get<std::int32_t>(in, path);
      Conv2d conv = Conv2d::make(v[0], v[1], v[2], v[3], v[4], v[5]);
      conv.weight = get_doubles(in, path, conv.weight.size());
      conv.bias = get_doubles(in, path, conv.bias.size());
      layer.op = std::move(conv);
    } else if (kind == 1) {
      layer.op = Relu{};
    } else if (kind == 2) {
      layer.op = UpsampleBilinear{get<std::int32_t>(in, path)};
    } else {
      fail(ErrorKind::load, "unknown layer kind in " + path.string());
    }
    layers.push_back(std::move(layer));
  }
  return Network(std::move(arch), std::move(layers));
}

}  // namespace segattack::nn
