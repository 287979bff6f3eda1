#include "ser/ops.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <limits>

namespace ser {
namespace {

template <typename S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MatMap = Eigen::Map<RowMat<S>>;
template <typename S>
using ConstMatMap = Eigen::Map<const RowMat<S>>;
template <typename S>
using Array = typename Tensor<S>::Array;
template <typename S>
using Node = detail::Node<S>;

Index normalize_axis(Index axis, Index rank) {
  Index a = axis < 0 ? axis + rank : axis;
  if (a < 0 || a >= rank)
    throw Error(ErrorCode::ShapeMismatch, "axis " + std::to_string(axis) + " out of range for rank " +
                                              std::to_string(rank));
  return a;
}

// Splits a shape around `axis` into (outer, length, inner) extents.
struct AxisSplit {
  Index outer = 1, length = 1, inner = 1;
};

AxisSplit split_at(const Shape& shape, Index axis) {
  AxisSplit s;
  for (Index i = 0; i < static_cast<Index>(shape.size()); ++i) {
    if (i < axis) s.outer *= shape[static_cast<std::size_t>(i)];
    else if (i == axis) s.length = shape[static_cast<std::size_t>(i)];
    else s.inner *= shape[static_cast<std::size_t>(i)];
  }
  return s;
}

template <typename S>
bool wants_grad(const Node<S>& n) {
  return n.requires_grad;
}

void require(bool ok, const std::string& message) {
  if (!ok) throw Error(ErrorCode::ShapeMismatch, message);
}

// Lays the receptive fields of one [C,H,W] sample out as columns:
// (C*kh*kw) x (Ho*Wo).
template <typename S>
void im2col(const S* x, Index channels, Index h, Index w, Index kh, Index kw, Index pad, Index ho, Index wo,
            RowMat<S>& cols) {
  cols.resize(channels * kh * kw, ho * wo);
  for (Index c = 0; c < channels; ++c)
    for (Index i = 0; i < kh; ++i)
      for (Index j = 0; j < kw; ++j) {
        S* row = cols.row((c * kh + i) * kw + j).data();
        for (Index oy = 0; oy < ho; ++oy) {
          Index iy = oy + i - pad;
          S* dst = row + oy * wo;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + wo, S(0));
            continue;
          }
          const S* src = x + (c * h + iy) * w;
          for (Index ox = 0; ox < wo; ++ox) {
            Index ix = ox + j - pad;
            dst[ox] = (ix >= 0 && ix < w) ? src[ix] : S(0);
          }
        }
      }
}

template <typename S>
void col2im_add(const RowMat<S>& cols, Index channels, Index h, Index w, Index kh, Index kw, Index pad, Index ho,
                Index wo, S* dx) {
  for (Index c = 0; c < channels; ++c)
    for (Index i = 0; i < kh; ++i)
      for (Index j = 0; j < kw; ++j) {
        const S* row = cols.row((c * kh + i) * kw + j).data();
        for (Index oy = 0; oy < ho; ++oy) {
          Index iy = oy + i - pad;
          if (iy < 0 || iy >= h) continue;
          S* dst = dx + (c * h + iy) * w;
          const S* src = row + oy * wo;
          for (Index ox = 0; ox < wo; ++ox) {
            Index ix = ox + j - pad;
            if (ix >= 0 && ix < w) dst[ix] += src[ox];
          }
        }
      }
}

template <typename S>
Tensor<S> permute_impl(const Tensor<S>& x, const std::vector<Index>& order, std::string_view name) {
  const Shape& in = x.shape();
  const Index rank = x.rank();
  require(static_cast<Index>(order.size()) == rank, "permutation rank does not match " + shape_string(in));
  std::vector<bool> seen(static_cast<std::size_t>(rank), false);
  for (Index a : order) {
    require(a >= 0 && a < rank && !seen[static_cast<std::size_t>(a)], "invalid permutation");
    seen[static_cast<std::size_t>(a)] = true;
  }
  std::vector<Index> in_strides(static_cast<std::size_t>(rank), 1);
  for (Index i = rank - 2; i >= 0; --i)
    in_strides[static_cast<std::size_t>(i)] = in_strides[static_cast<std::size_t>(i) + 1] * in[static_cast<std::size_t>(i) + 1];

  Shape out_shape(static_cast<std::size_t>(rank));
  std::vector<Index> stride_of_out(static_cast<std::size_t>(rank));
  for (Index i = 0; i < rank; ++i) {
    out_shape[static_cast<std::size_t>(i)] = in[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])];
    stride_of_out[static_cast<std::size_t>(i)] = in_strides[static_cast<std::size_t>(order[static_cast<std::size_t>(i)])];
  }

  const Index n = x.size();
  auto source = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(n));
  std::vector<Index> counter(static_cast<std::size_t>(rank), 0);
  Index offset = 0;
  for (Index o = 0; o < n; ++o) {
    (*source)[static_cast<std::size_t>(o)] = offset;
    for (Index a = rank - 1; a >= 0; --a) {
      auto ua = static_cast<std::size_t>(a);
      if (++counter[ua] < out_shape[ua]) {
        offset += stride_of_out[ua];
        break;
      }
      offset -= (out_shape[ua] - 1) * stride_of_out[ua];
      counter[ua] = 0;
    }
  }

  Array<S> values(n);
  for (Index o = 0; o < n; ++o) values[o] = x.values()[(*source)[static_cast<std::size_t>(o)]];
  return Tensor<S>::from_op(name, out_shape, std::move(values), {x}, [source](Node<S>& self) {
    auto& dx = self.parents[0]->grad_buffer();
    for (Index o = 0; o < self.grad.size(); ++o) dx[(*source)[static_cast<std::size_t>(o)]] += self.grad[o];
  });
}

constexpr std::array<std::string_view, 20> kDifferentiableOps = {
    "add",    "mul",     "scale",  "sum",    "mean_over_axis", "reshape",    "permute",
    "transpose", "concat", "slice", "matmul", "linear",        "conv2d",     "relu",
    "maxpool2d", "softmax", "layer_norm", "batch_norm2d", "dropout", "cross_entropy"};

}  // namespace

std::span<const std::string_view> differentiable_ops() { return kDifferentiableOps; }

template <typename S>
Tensor<S> add(const Tensor<S>& a, const Tensor<S>& b) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa == sb) {
    return Tensor<S>::from_op("add", sa, a.values() + b.values(), {a, b}, [](Node<S>& self) {
      for (auto& p : self.parents)
        if (wants_grad(*p)) p->grad_buffer() += self.grad;
    });
  }
  bool suffix = sb.size() <= sa.size() && std::equal(sb.rbegin(), sb.rend(), sa.rbegin());
  require(suffix, "add: " + shape_string(sb) + " does not broadcast onto " + shape_string(sa));
  const Index inner = b.size();
  const Index outer = a.size() / inner;
  Array<S> values(a.size());
  Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>> out(values.data(), inner, outer);
  Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>> in(a.data(), inner, outer);
  out = in.colwise() + b.values().matrix();
  return Tensor<S>::from_op("add", sa, std::move(values), {a, b}, [inner, outer](Node<S>& self) {
    if (wants_grad(*self.parents[0])) self.parents[0]->grad_buffer() += self.grad;
    if (wants_grad(*self.parents[1])) {
      Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic>> g(self.grad.data(), inner, outer);
      self.parents[1]->grad_buffer() += g.rowwise().sum().array();
    }
  });
}

template <typename S>
Tensor<S> mul(const Tensor<S>& a, const Tensor<S>& b) {
  require(a.shape() == b.shape(), "mul: " + shape_string(a.shape()) + " vs " + shape_string(b.shape()));
  return Tensor<S>::from_op("mul", a.shape(), a.values() * b.values(), {a, b}, [](Node<S>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (wants_grad(pa)) pa.grad_buffer() += self.grad * pb.value;
    if (wants_grad(pb)) pb.grad_buffer() += self.grad * pa.value;
  });
}

template <typename S>
Tensor<S> scale(const Tensor<S>& x, S factor) {
  return Tensor<S>::from_op("scale", x.shape(), x.values() * factor, {x}, [factor](Node<S>& self) {
    self.parents[0]->grad_buffer() += self.grad * factor;
  });
}

template <typename S>
Tensor<S> sum(const Tensor<S>& x) {
  return Tensor<S>::from_op("sum", Shape{}, Array<S>::Constant(1, x.values().sum()), {x}, [](Node<S>& self) {
    self.parents[0]->grad_buffer() += self.grad[0];
  });
}

template <typename S>
Tensor<S> mean_over_axis(const Tensor<S>& x, Index axis) {
  const Index a = normalize_axis(axis, x.rank());
  const AxisSplit s = split_at(x.shape(), a);
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + a);
  Array<S> values = Array<S>::Zero(s.outer * s.inner);
  for (Index o = 0; o < s.outer; ++o)
    for (Index l = 0; l < s.length; ++l)
      values.segment(o * s.inner, s.inner) += x.values().segment((o * s.length + l) * s.inner, s.inner);
  values /= static_cast<S>(s.length);
  return Tensor<S>::from_op("mean_over_axis", out_shape, std::move(values), {x}, [s](Node<S>& self) {
    auto& dx = self.parents[0]->grad_buffer();
    const S inv = S(1) / static_cast<S>(s.length);
    for (Index o = 0; o < s.outer; ++o)
      for (Index l = 0; l < s.length; ++l)
        dx.segment((o * s.length + l) * s.inner, s.inner) += self.grad.segment(o * s.inner, s.inner) * inv;
  });
}

template <typename S>
Tensor<S> reshape(const Tensor<S>& x, Shape shape) {
  require(numel(shape) == x.size(), "reshape " + shape_string(x.shape()) + " -> " + shape_string(shape));
  return Tensor<S>::from_op("reshape", std::move(shape), x.values(), {x}, [](Node<S>& self) {
    self.parents[0]->grad_buffer() += self.grad;
  });
}

template <typename S>
Tensor<S> permute(const Tensor<S>& x, const std::vector<Index>& order) {
  return permute_impl(x, order, "permute");
}

template <typename S>
Tensor<S> transpose(const Tensor<S>& x, Index axis_a, Index axis_b) {
  const Index r = x.rank();
  std::vector<Index> order(static_cast<std::size_t>(r));
  for (Index i = 0; i < r; ++i) order[static_cast<std::size_t>(i)] = i;
  std::swap(order[static_cast<std::size_t>(normalize_axis(axis_a, r))],
            order[static_cast<std::size_t>(normalize_axis(axis_b, r))]);
  return permute_impl(x, order, "transpose");
}

template <typename S>
Tensor<S> concat(const std::vector<Tensor<S>>& parts, Index axis) {
  require(!parts.empty(), "concat of zero tensors");
  const Shape& first = parts.front().shape();
  const Index a = normalize_axis(axis, parts.front().rank());
  Shape out_shape = first;
  out_shape[static_cast<std::size_t>(a)] = 0;
  std::vector<Index> lengths;
  for (const auto& p : parts) {
    Shape probe = p.shape();
    require(probe.size() == first.size(), "concat rank mismatch");
    lengths.push_back(probe[static_cast<std::size_t>(a)]);
    out_shape[static_cast<std::size_t>(a)] += probe[static_cast<std::size_t>(a)];
    probe[static_cast<std::size_t>(a)] = first[static_cast<std::size_t>(a)];
    require(probe == first, "concat: " + shape_string(p.shape()) + " vs " + shape_string(first));
  }
  const AxisSplit s = split_at(out_shape, a);
  Array<S> values(numel(out_shape));
  Index offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Index block = lengths[k] * s.inner;
    for (Index o = 0; o < s.outer; ++o)
      values.segment(o * s.length * s.inner + offset, block) = parts[k].values().segment(o * block, block);
    offset += block;
  }
  return Tensor<S>::from_op("concat", out_shape, std::move(values), parts, [s, lengths](Node<S>& self) {
    Index offset = 0;
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      const Index block = lengths[k] * s.inner;
      if (wants_grad(*self.parents[k])) {
        auto& dp = self.parents[k]->grad_buffer();
        for (Index o = 0; o < s.outer; ++o)
          dp.segment(o * block, block) += self.grad.segment(o * s.length * s.inner + offset, block);
      }
      offset += block;
    }
  });
}

template <typename S>
Tensor<S> slice(const Tensor<S>& x, Index axis, Index start, Index length) {
  const Index a = normalize_axis(axis, x.rank());
  const AxisSplit s = split_at(x.shape(), a);
  require(start >= 0 && length >= 1 && start + length <= s.length, "slice out of range");
  Shape out_shape = x.shape();
  out_shape[static_cast<std::size_t>(a)] = length;
  const Index block = length * s.inner;
  Array<S> values(s.outer * block);
  for (Index o = 0; o < s.outer; ++o)
    values.segment(o * block, block) = x.values().segment((o * s.length + start) * s.inner, block);
  return Tensor<S>::from_op("slice", out_shape, std::move(values), {x}, [s, start, block](Node<S>& self) {
    auto& dx = self.parents[0]->grad_buffer();
    for (Index o = 0; o < s.outer; ++o)
      dx.segment((o * s.length + start) * s.inner, block) += self.grad.segment(o * block, block);
  });
}

template <typename S>
Tensor<S> matmul(const Tensor<S>& a, const Tensor<S>& b) {
  require(a.rank() >= 2 && b.rank() >= 2, "matmul needs rank >= 2 operands");
  const Index m = a.dim(-2), k = a.dim(-1), n = b.dim(-1);
  require(b.dim(-2) == k, "matmul inner dims: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  const bool shared_b = b.rank() == 2;
  const Index batch = a.size() / (m * k);
  if (!shared_b) {
    require(a.rank() == b.rank() && std::equal(a.shape().begin(), a.shape().end() - 2, b.shape().begin()),
            "matmul batch dims: " + shape_string(a.shape()) + " x " + shape_string(b.shape()));
  }
  Shape out_shape(a.shape().begin(), a.shape().end() - 2);
  out_shape.push_back(m);
  out_shape.push_back(n);
  Array<S> values(batch * m * n);
  const Index b_stride = shared_b ? 0 : k * n;
  for (Index i = 0; i < batch; ++i) {
    MatMap<S> c(values.data() + i * m * n, m, n);
    c.noalias() = ConstMatMap<S>(a.data() + i * m * k, m, k) * ConstMatMap<S>(b.data() + i * b_stride, k, n);
  }
  return Tensor<S>::from_op("matmul", out_shape, std::move(values), {a, b},
                            [m, k, n, batch, b_stride](Node<S>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    for (Index i = 0; i < batch; ++i) {
      ConstMatMap<S> g(self.grad.data() + i * m * n, m, n);
      if (wants_grad(pa)) {
        MatMap<S> da(pa.grad_buffer().data() + i * m * k, m, k);
        da.noalias() += g * ConstMatMap<S>(pb.value.data() + i * b_stride, k, n).transpose();
      }
      if (wants_grad(pb)) {
        MatMap<S> db(pb.grad_buffer().data() + i * b_stride, k, n);
        db.noalias() += ConstMatMap<S>(pa.value.data() + i * m * k, m, k).transpose() * g;
      }
    }
  });
}

template <typename S>
Tensor<S> linear(const Tensor<S>& x, const Tensor<S>& weight, const Tensor<S>& bias) {
  require(weight.rank() == 2, "linear weight must be rank 2");
  const Index d_in = weight.dim(0), d_out = weight.dim(1);
  require(x.rank() >= 1 && x.dim(-1) == d_in,
          "linear: input " + shape_string(x.shape()) + " vs weight " + shape_string(weight.shape()));
  const bool has_bias = bias.defined();
  if (has_bias) require(bias.rank() == 1 && bias.dim(0) == d_out, "linear bias shape " + shape_string(bias.shape()));
  const Index rows = x.size() / d_in;
  Shape out_shape = x.shape();
  out_shape.back() = d_out;
  Array<S> values(rows * d_out);
  MatMap<S> y(values.data(), rows, d_out);
  y.noalias() = ConstMatMap<S>(x.data(), rows, d_in) * ConstMatMap<S>(weight.data(), d_in, d_out);
  if (has_bias) y.rowwise() += bias.values().matrix().transpose();
  std::vector<Tensor<S>> parents{x, weight};
  if (has_bias) parents.push_back(bias);
  return Tensor<S>::from_op("linear", out_shape, std::move(values), std::move(parents),
                            [rows, d_in, d_out](Node<S>& self) {
    ConstMatMap<S> g(self.grad.data(), rows, d_out);
    auto& px = *self.parents[0];
    auto& pw = *self.parents[1];
    if (wants_grad(px))
      MatMap<S>(px.grad_buffer().data(), rows, d_in).noalias() += g * ConstMatMap<S>(pw.value.data(), d_in, d_out).transpose();
    if (wants_grad(pw))
      MatMap<S>(pw.grad_buffer().data(), d_in, d_out).noalias() += ConstMatMap<S>(px.value.data(), rows, d_in).transpose() * g;
    if (self.parents.size() > 2 && wants_grad(*self.parents[2]))
      self.parents[2]->grad_buffer() += g.colwise().sum().transpose().array();
  });
}

template <typename S>
Tensor<S> conv2d(const Tensor<S>& x, const Tensor<S>& kernel, const Tensor<S>& bias, Index padding) {
  require(x.rank() == 3 || x.rank() == 4, "conv2d input must be [C,H,W] or [N,C,H,W], got " + shape_string(x.shape()));
  require(kernel.rank() == 4, "conv2d kernel must be [O,C,kh,kw]");
  require(padding >= 0, "negative padding");
  const bool batched = x.rank() == 4;
  const Index n = batched ? x.dim(0) : 1;
  const Index c = x.dim(-3), h = x.dim(-2), w = x.dim(-1);
  const Index o = kernel.dim(0), kh = kernel.dim(2), kw = kernel.dim(3);
  require(kernel.dim(1) == c, "conv2d: kernel " + shape_string(kernel.shape()) + " vs input " + shape_string(x.shape()));
  require(kh <= h + 2 * padding && kw <= w + 2 * padding, "conv2d kernel larger than padded input");
  const bool has_bias = bias.defined();
  if (has_bias) require(bias.rank() == 1 && bias.dim(0) == o, "conv2d bias shape " + shape_string(bias.shape()));
  const Index ho = h + 2 * padding - kh + 1, wo = w + 2 * padding - kw + 1;
  const Index ckk = c * kh * kw, plane = ho * wo;

  Shape out_shape = batched ? Shape{n, o, ho, wo} : Shape{o, ho, wo};
  Array<S> values(n * o * plane);
  ConstMatMap<S> k(kernel.data(), o, ckk);
  RowMat<S> cols;
  for (Index i = 0; i < n; ++i) {
    im2col(x.data() + i * c * h * w, c, h, w, kh, kw, padding, ho, wo, cols);
    MatMap<S> y(values.data() + i * o * plane, o, plane);
    y.noalias() = k * cols;
    if (has_bias) y.colwise() += bias.values().matrix();
  }
  std::vector<Tensor<S>> parents{x, kernel};
  if (has_bias) parents.push_back(bias);
  return Tensor<S>::from_op("conv2d", out_shape, std::move(values), std::move(parents),
                            [=](Node<S>& self) {
    auto& px = *self.parents[0];
    auto& pk = *self.parents[1];
    ConstMatMap<S> kmat(pk.value.data(), o, ckk);
    RowMat<S> cols_b;
    RowMat<S> dcols;
    for (Index i = 0; i < n; ++i) {
      ConstMatMap<S> g(self.grad.data() + i * o * plane, o, plane);
      if (wants_grad(pk)) {
        im2col(px.value.data() + i * c * h * w, c, h, w, kh, kw, padding, ho, wo, cols_b);
        MatMap<S>(pk.grad_buffer().data(), o, ckk).noalias() += g * cols_b.transpose();
      }
      if (wants_grad(px)) {
        dcols.noalias() = kmat.transpose() * g;
        col2im_add(dcols, c, h, w, kh, kw, padding, ho, wo, px.grad_buffer().data() + i * c * h * w);
      }
      if (self.parents.size() > 2 && wants_grad(*self.parents[2]))
        self.parents[2]->grad_buffer() += g.rowwise().sum().array();
    }
  });
}

template <typename S>
Tensor<S> relu(const Tensor<S>& x) {
  return Tensor<S>::from_op("relu", x.shape(), x.values().max(S(0)), {x}, [](Node<S>& self) {
    auto& px = *self.parents[0];
    px.grad_buffer() += (px.value > S(0)).select(self.grad, S(0));
  });
}

template <typename S>
Tensor<S> maxpool2d(const Tensor<S>& x) {
  require(x.rank() >= 2, "maxpool2d needs rank >= 2");
  const Index h = x.dim(-2), w = x.dim(-1);
  require(h >= 2 && w >= 2, "maxpool2d needs spatial dims >= 2, got " + shape_string(x.shape()));
  const Index ho = h / 2, wo = w / 2;
  const Index planes = x.size() / (h * w);
  Shape out_shape = x.shape();
  out_shape[out_shape.size() - 2] = ho;
  out_shape.back() = wo;
  Array<S> values(planes * ho * wo);
  auto argmax = std::make_shared<std::vector<Index>>(static_cast<std::size_t>(values.size()));
  const S* in = x.data();
  for (Index p = 0; p < planes; ++p)
    for (Index i = 0; i < ho; ++i)
      for (Index j = 0; j < wo; ++j) {
        Index best = (p * h + 2 * i) * w + 2 * j;
        for (Index di = 0; di < 2; ++di)
          for (Index dj = 0; dj < 2; ++dj) {
            Index idx = (p * h + 2 * i + di) * w + 2 * j + dj;
            if (in[idx] > in[best]) best = idx;
          }
        Index out_idx = (p * ho + i) * wo + j;
        values[out_idx] = in[best];
        (*argmax)[static_cast<std::size_t>(out_idx)] = best;
      }
  return Tensor<S>::from_op("maxpool2d", out_shape, std::move(values), {x}, [argmax](Node<S>& self) {
    auto& dx = self.parents[0]->grad_buffer();
    for (Index o = 0; o < self.grad.size(); ++o) dx[(*argmax)[static_cast<std::size_t>(o)]] += self.grad[o];
  });
}

template <typename S>
Tensor<S> softmax(const Tensor<S>& x, Index axis) {
  const Index a = normalize_axis(axis, std::max<Index>(x.rank(), 1));
  const AxisSplit s = x.rank() == 0 ? AxisSplit{} : split_at(x.shape(), a);
  Array<S> y(x.size());
  const S* in = x.data();
  for (Index o = 0; o < s.outer; ++o)
    for (Index i = 0; i < s.inner; ++i) {
      const Index base = o * s.length * s.inner + i;
      S peak = -std::numeric_limits<S>::infinity();
      for (Index l = 0; l < s.length; ++l) peak = std::max(peak, in[base + l * s.inner]);
      S total = 0;
      for (Index l = 0; l < s.length; ++l) {
        S e = std::exp(in[base + l * s.inner] - peak);
        y[base + l * s.inner] = e;
        total += e;
      }
      for (Index l = 0; l < s.length; ++l) y[base + l * s.inner] /= total;
    }
  return Tensor<S>::from_op("softmax", x.shape(), std::move(y), {x}, [s](Node<S>& self) {
    auto& dx = self.parents[0]->grad_buffer();
    const Array<S>& y = self.value;
    for (Index o = 0; o < s.outer; ++o)
      for (Index i = 0; i < s.inner; ++i) {
        const Index base = o * s.length * s.inner + i;
        S dot = 0;
        for (Index l = 0; l < s.length; ++l) dot += self.grad[base + l * s.inner] * y[base + l * s.inner];
        for (Index l = 0; l < s.length; ++l) {
          const Index idx = base + l * s.inner;
          dx[idx] += y[idx] * (self.grad[idx] - dot);
        }
      }
  });
}

template <typename S>
Tensor<S> layer_norm(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta, double eps) {
  const Index d = x.dim(-1);
  require(gamma.size() == d && beta.size() == d, "layer_norm affine params must have " + std::to_string(d) + " entries");
  const Index rows = x.size() / d;
  auto xhat = std::make_shared<RowMat<S>>(rows, d);
  auto inv_std = std::make_shared<Eigen::Matrix<S, Eigen::Dynamic, 1>>(rows);
  ConstMatMap<S> in(x.data(), rows, d);
  for (Index r = 0; r < rows; ++r) {
    const S mean = in.row(r).mean();
    const S var = (in.row(r).array() - mean).square().mean();
    (*inv_std)[r] = S(1) / std::sqrt(var + static_cast<S>(eps));
    xhat->row(r) = (in.row(r).array() - mean) * (*inv_std)[r];
  }
  Array<S> values(x.size());
  MatMap<S> y(values.data(), rows, d);
  y = (xhat->array().rowwise() * gamma.values().transpose()).rowwise() + beta.values().transpose();
  return Tensor<S>::from_op("layer_norm", x.shape(), std::move(values), {x, gamma, beta},
                            [xhat, inv_std, rows, d](Node<S>& self) {
    ConstMatMap<S> g(self.grad.data(), rows, d);
    auto& px = *self.parents[0];
    auto& pg = *self.parents[1];
    auto& pb = *self.parents[2];
    if (wants_grad(pg)) pg.grad_buffer() += (g.array() * xhat->array()).colwise().sum().transpose();
    if (wants_grad(pb)) pb.grad_buffer() += g.colwise().sum().transpose().array();
    if (wants_grad(px)) {
      MatMap<S> dx(px.grad_buffer().data(), rows, d);
      const RowMat<S> dxhat = (g.array().rowwise() * pg.value.transpose()).matrix();
      for (Index r = 0; r < rows; ++r) {
        const S sum_d = dxhat.row(r).sum();
        const S sum_dx = dxhat.row(r).dot(xhat->row(r));
        dx.row(r).array() += ((*inv_std)[r] / static_cast<S>(d)) *
                             (static_cast<S>(d) * dxhat.row(r).array() - sum_d - xhat->row(r).array() * sum_dx);
      }
    }
  });
}

template <typename S>
Tensor<S> batch_norm2d(const Tensor<S>& x, const Tensor<S>& gamma, const Tensor<S>& beta, Tensor<S>& running_mean,
                       Tensor<S>& running_var, Mode mode, double momentum, double eps) {
  require(x.rank() == 4, "batch_norm2d input must be [N,C,H,W], got " + shape_string(x.shape()));
  const Index n = x.dim(0), c = x.dim(1), plane = x.dim(2) * x.dim(3);
  require(gamma.size() == c && beta.size() == c && running_mean.size() == c && running_var.size() == c,
          "batch_norm2d parameters must have " + std::to_string(c) + " entries");
  const bool train = mode == Mode::Train;
  if (train && n < 2) throw Error(ErrorCode::BatchTooSmall, "batch_norm2d in training mode needs N >= 2");

  const S count = static_cast<S>(n * plane);
  Eigen::Matrix<S, Eigen::Dynamic, 1> mean(c), inv_std(c);
  const S* in = x.data();
  for (Index ch = 0; ch < c; ++ch) {
    S m, v;
    if (train) {
      S acc = 0;
      for (Index i = 0; i < n; ++i)
        acc += Eigen::Map<const Array<S>>(in + (i * c + ch) * plane, plane).sum();
      m = acc / count;
      S sq = 0;
      for (Index i = 0; i < n; ++i)
        sq += (Eigen::Map<const Array<S>>(in + (i * c + ch) * plane, plane) - m).square().sum();
      v = sq / count;
      auto& rm = running_mean.mutable_values();
      auto& rv = running_var.mutable_values();
      const S mom = static_cast<S>(momentum);
      rm[ch] = (S(1) - mom) * rm[ch] + mom * m;
      rv[ch] = (S(1) - mom) * rv[ch] + mom * v;
    } else {
      m = running_mean.values()[ch];
      v = running_var.values()[ch];
    }
    mean[ch] = m;
    inv_std[ch] = S(1) / std::sqrt(v + static_cast<S>(eps));
  }

  auto xhat = std::make_shared<Array<S>>(x.size());
  Array<S> values(x.size());
  for (Index i = 0; i < n; ++i)
    for (Index ch = 0; ch < c; ++ch) {
      const Index off = (i * c + ch) * plane;
      xhat->segment(off, plane) = (Eigen::Map<const Array<S>>(in + off, plane) - mean[ch]) * inv_std[ch];
      values.segment(off, plane) = xhat->segment(off, plane) * gamma.values()[ch] + beta.values()[ch];
    }

  return Tensor<S>::from_op("batch_norm2d", x.shape(), std::move(values), {x, gamma, beta},
                            [xhat, inv_std, n, c, plane, count, train](Node<S>& self) {
    auto& px = *self.parents[0];
    auto& pg = *self.parents[1];
    auto& pb = *self.parents[2];
    for (Index ch = 0; ch < c; ++ch) {
      S sum_g = 0, sum_gx = 0;
      for (Index i = 0; i < n; ++i) {
        const Index off = (i * c + ch) * plane;
        sum_g += self.grad.segment(off, plane).sum();
        sum_gx += (self.grad.segment(off, plane) * xhat->segment(off, plane)).sum();
      }
      if (wants_grad(pg)) pg.grad_buffer()[ch] += sum_gx;
      if (wants_grad(pb)) pb.grad_buffer()[ch] += sum_g;
      if (!wants_grad(px)) continue;
      const S gam = pg.value[ch];
      auto& dx = px.grad_buffer();
      for (Index i = 0; i < n; ++i) {
        const Index off = (i * c + ch) * plane;
        if (train) {
          // d/dx of gamma * (x - mean_B) / std_B with batch statistics.
          dx.segment(off, plane) += (gam * inv_std[ch] / count) *
                                    (count * self.grad.segment(off, plane) - sum_g - xhat->segment(off, plane) * sum_gx);
        } else {
          dx.segment(off, plane) += self.grad.segment(off, plane) * (gam * inv_std[ch]);
        }
      }
    }
  });
}

template <typename S>
Tensor<S> dropout(const Tensor<S>& x, double p, Mode mode, const DropoutKey& key) {
  if (!(p >= 0.0 && p < 1.0)) throw Error(ErrorCode::ConfigError, "dropout probability must lie in [0, 1)");
  if (mode == Mode::Eval || p == 0.0) return x;
  const S keep_scale = static_cast<S>(1.0 / (1.0 - p));
  auto mask = std::make_shared<Array<S>>(x.size());
  for (Index i = 0; i < x.size(); ++i)
    (*mask)[i] = key.uniform(static_cast<std::uint64_t>(i)) < p ? S(0) : keep_scale;
  return Tensor<S>::from_op("dropout", x.shape(), x.values() * *mask, {x}, [mask](Node<S>& self) {
    self.parents[0]->grad_buffer() += self.grad * *mask;
  });
}

template <typename S>
Tensor<S> cross_entropy(const Tensor<S>& logits, std::span<const int> labels) {
  require(logits.rank() == 2, "cross_entropy logits must be [N,C], got " + shape_string(logits.shape()));
  const Index n = logits.dim(0), c = logits.dim(1);
  if (static_cast<Index>(labels.size()) != n)
    throw Error(ErrorCode::ShapeMismatch, std::to_string(labels.size()) + " labels for " + std::to_string(n) + " rows");
  for (int label : labels)
    if (label < 0 || label >= c)
      throw Error(ErrorCode::LabelOutOfRange, "label " + std::to_string(label) + " not in [0, " + std::to_string(c) + ")");

  ConstMatMap<S> z(logits.data(), n, c);
  auto probs = std::make_shared<RowMat<S>>(n, c);
  S total = 0;
  for (Index i = 0; i < n; ++i) {
    const S peak = z.row(i).maxCoeff();
    const auto shifted = (z.row(i).array() - peak).eval();
    const S lse = std::log(shifted.exp().sum());
    probs->row(i) = (shifted - lse).exp().matrix();
    total += lse - shifted[labels[static_cast<std::size_t>(i)]];
  }
  std::vector<int> saved(labels.begin(), labels.end());
  return Tensor<S>::from_op("cross_entropy", Shape{}, Array<S>::Constant(1, total / static_cast<S>(n)), {logits},
                            [probs, saved, n, c](Node<S>& self) {
    MatMap<S> dz(self.parents[0]->grad_buffer().data(), n, c);
    const S g = self.grad[0] / static_cast<S>(n);
    for (Index i = 0; i < n; ++i) {
      dz.row(i) += g * probs->row(i);
      dz(i, saved[static_cast<std::size_t>(i)]) -= g;
    }
  });
}

#define SER_INSTANTIATE_OPS(S)                                                                               \
  template Tensor<S> add(const Tensor<S>&, const Tensor<S>&);                                                \
  template Tensor<S> mul(const Tensor<S>&, const Tensor<S>&);                                                \
  template Tensor<S> scale(const Tensor<S>&, S);                                                             \
  template Tensor<S> sum(const Tensor<S>&);                                                                  \
  template Tensor<S> mean_over_axis(const Tensor<S>&, Index);                                                \
  template Tensor<S> reshape(const Tensor<S>&, Shape);                                                       \
  template Tensor<S> permute(const Tensor<S>&, const std::vector<Index>&);                                   \
  template Tensor<S> transpose(const Tensor<S>&, Index, Index);                                              \
  template Tensor<S> concat(const std::vector<Tensor<S>>&, Index);                                           \
  template Tensor<S> slice(const Tensor<S>&, Index, Index, Index);                                           \
  template Tensor<S> matmul(const Tensor<S>&, const Tensor<S>&);                                             \
  template Tensor<S> linear(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&);                           \
  template Tensor<S> conv2d(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, Index);                    \
  template Tensor<S> relu(const Tensor<S>&);                                                                 \
  template Tensor<S> maxpool2d(const Tensor<S>&);                                                            \
  template Tensor<S> softmax(const Tensor<S>&, Index);                                                       \
  template Tensor<S> layer_norm(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, double);               \
  template Tensor<S> batch_norm2d(const Tensor<S>&, const Tensor<S>&, const Tensor<S>&, Tensor<S>&, Tensor<S>&, \
                                  Mode, double, double);                                                     \
  template Tensor<S> dropout(const Tensor<S>&, double, Mode, const DropoutKey&);                             \
  template Tensor<S> cross_entropy(const Tensor<S>&, std::span<const int>);

SER_INSTANTIATE_OPS(float)
SER_INSTANTIATE_OPS(double)

#undef SER_INSTANTIATE_OPS

}  // namespace ser
