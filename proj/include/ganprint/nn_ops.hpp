#pragma once

// Dense kernels shared by the toy generator and the encoder. Activations are
// stored channel-major (C x H x W) per sample; convolution weights are laid
// out (out, in, ky, kx), i.e. a row-major (out x in*k*k) matrix.

#include <Eigen/Core>
#include <Eigen/StdVector>

#include <cmath>
#include <vector>

namespace ganprint::nn {

// Heap buffers aligned for the widest SIMD packet, so vectorised kernels take
// the same code path (and rounding) whichever thread allocated them.
template <class T>
using Buffer = std::vector<T, Eigen::aligned_allocator<T>>;

struct ConvShape {
  int cin = 0;
  int cout = 0;
  int kernel = 3;
  int stride = 1;
  int pad = 1;
  int hin = 0;
  int win = 0;

  int hout() const { return (hin + 2 * pad - kernel) / stride + 1; }
  int wout() const { return (win + 2 * pad - kernel) / stride + 1; }
  int patch() const { return cin * kernel * kernel; }
  int out_plane() const { return hout() * wout(); }
  std::size_t weight_count() const { return static_cast<std::size_t>(cout) * patch(); }
};

template <class T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class T>
using RowMap = Eigen::Map<RowMat<T>>;
template <class T>
using ConstRowMap = Eigen::Map<const RowMat<T>>;

template <class T>
void im2col(const ConvShape& s, const T* in, T* cols) {
  const int ho = s.hout(), wo = s.wout();
  const int plane = ho * wo;
  for (int c = 0; c < s.cin; ++c) {
    const T* src = in + static_cast<std::size_t>(c) * s.hin * s.win;
    for (int ky = 0; ky < s.kernel; ++ky) {
      for (int kx = 0; kx < s.kernel; ++kx) {
        T* row = cols + static_cast<std::size_t>((c * s.kernel + ky) * s.kernel + kx) * plane;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * s.stride - s.pad + ky;
          T* dst = row + oy * wo;
          if (iy < 0 || iy >= s.hin) {
            for (int ox = 0; ox < wo; ++ox) dst[ox] = T(0);
            continue;
          }
          const T* line = src + static_cast<std::size_t>(iy) * s.win;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * s.stride - s.pad + kx;
            dst[ox] = (ix >= 0 && ix < s.win) ? line[ix] : T(0);
          }
        }
      }
    }
  }
}

// Accumulates the column buffer back into the (zero-initialised or partial) input gradient.
template <class T>
void col2im(const ConvShape& s, const T* cols, T* din) {
  const int ho = s.hout(), wo = s.wout();
  const int plane = ho * wo;
  for (int c = 0; c < s.cin; ++c) {
    T* dst = din + static_cast<std::size_t>(c) * s.hin * s.win;
    for (int ky = 0; ky < s.kernel; ++ky) {
      for (int kx = 0; kx < s.kernel; ++kx) {
        const T* row = cols + static_cast<std::size_t>((c * s.kernel + ky) * s.kernel + kx) * plane;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * s.stride - s.pad + ky;
          if (iy < 0 || iy >= s.hin) continue;
          T* line = dst + static_cast<std::size_t>(iy) * s.win;
          const T* src = row + oy * wo;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * s.stride - s.pad + kx;
            if (ix >= 0 && ix < s.win) line[ix] += src[ox];
          }
        }
      }
    }
  }
}

// out = W * im2col(in) + b
template <class T>
void conv_forward(const ConvShape& s, const T* weights, const T* bias, const T* in, T* out,
                  Buffer<T>& scratch) {
  const int plane = s.out_plane();
  scratch.resize(static_cast<std::size_t>(s.patch()) * plane);
  im2col(s, in, scratch.data());
  ConstRowMap<T> w(weights, s.cout, s.patch());
  ConstRowMap<T> cols(scratch.data(), s.patch(), plane);
  RowMap<T> o(out, s.cout, plane);
  o.noalias() = w * cols;
  if (bias != nullptr) {
    for (int c = 0; c < s.cout; ++c) o.row(c).array() += bias[c];
  }
}

// Accumulates dW, db and (if din != nullptr) dIn. din is accumulated, not overwritten.
template <class T>
void conv_backward(const ConvShape& s, const T* weights, const T* in, const T* dout, T* dweights,
                   T* dbias, T* din, Buffer<T>& scratch) {
  const int plane = s.out_plane();
  scratch.resize(static_cast<std::size_t>(s.patch()) * plane);
  im2col(s, in, scratch.data());
  ConstRowMap<T> d(dout, s.cout, plane);
  {
    ConstRowMap<T> cols(scratch.data(), s.patch(), plane);
    RowMap<T> dw(dweights, s.cout, s.patch());
    dw.noalias() += d * cols.transpose();
  }
  if (dbias != nullptr) {
    for (int c = 0; c < s.cout; ++c) dbias[c] += d.row(c).sum();
  }
  if (din != nullptr) {
    ConstRowMap<T> w(weights, s.cout, s.patch());
    RowMap<T> dcols(scratch.data(), s.patch(), plane);
    dcols.noalias() = w.transpose() * d;
    col2im(s, scratch.data(), din);
  }
}

template <class T>
inline T leaky(T x, T slope) {
  return x > T(0) ? x : slope * x;
}

template <class T>
void leaky_relu(const T* in, T* out, std::size_t n, T slope) {
  for (std::size_t i = 0; i < n; ++i) out[i] = leaky(in[i], slope);
}

// grad_in[i] = grad_out[i] * f'(pre[i])
template <class T>
void leaky_relu_backward(const T* pre, const T* grad_out, T* grad_in, std::size_t n, T slope) {
  for (std::size_t i = 0; i < n; ++i) grad_in[i] = pre[i] > T(0) ? grad_out[i] : slope * grad_out[i];
}

// Nearest-neighbour 2x upsampling of a (c x h x w) tensor.
template <class T>
void upsample2x(const T* in, int c, int h, int w, T* out) {
  const int w2 = 2 * w;
  for (int ch = 0; ch < c; ++ch) {
    const T* src = in + static_cast<std::size_t>(ch) * h * w;
    T* dst = out + static_cast<std::size_t>(ch) * 4 * h * w;
    for (int y = 0; y < 2 * h; ++y) {
      for (int x = 0; x < w2; ++x) dst[y * w2 + x] = src[(y / 2) * w + x / 2];
    }
  }
}

}  // namespace ganprint::nn
