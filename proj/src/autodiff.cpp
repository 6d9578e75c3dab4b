#include "ff/autodiff.hpp"

#include "ff/errors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace ff {

template <typename Scalar>
const Tensor<Scalar>& Var<Scalar>::value() const {
  return tape->value(id);
}

template <typename Scalar>
bool Var<Scalar>::requires_grad() const {
  return tape->requires_grad(id);
}

// ---- tape ----------------------------------------------------------------

template <typename Scalar>
Var<Scalar> Tape<Scalar>::push(Node node) {
  nodes_.push_back(std::move(node));
  return Var<Scalar>{this, nodes_.size() - 1};
}

template <typename Scalar>
Var<Scalar> Tape<Scalar>::constant(Tensor<Scalar> value) {
  Node n;
  n.value = std::move(value);
  return push(std::move(n));
}

template <typename Scalar>
Var<Scalar> Tape<Scalar>::parameter(const Parameter<Scalar>& p, bool trainable) {
  Node n;
  n.external = &p.value;
  n.param = trainable ? &p : nullptr;
  n.requires_grad = trainable;
  return push(std::move(n));
}

template <typename Scalar>
Var<Scalar> Tape<Scalar>::detach(Var<Scalar> v) {
  if (v.tape != this) throw UsageError("detach: variable belongs to another tape");
  Node n;
  n.external = &value(v.id);
  return push(std::move(n));
}

template <typename Scalar>
Var<Scalar> Tape<Scalar>::record(Tensor<Scalar> value, std::initializer_list<Var<Scalar>> inputs,
                                 Backward backward) {
  Node n;
  n.value = std::move(value);
  for (const auto& in : inputs) {
    if (in.tape != this) throw UsageError("op inputs must be recorded on the same tape");
    n.requires_grad = n.requires_grad || nodes_[in.id].requires_grad;
  }
  if (n.requires_grad) n.backward = std::move(backward);
  return push(std::move(n));
}

template <typename Scalar>
const Tensor<Scalar>& Tape<Scalar>::value(std::size_t id) const {
  const Node& n = nodes_.at(id);
  return n.external ? *n.external : n.value;
}

template <typename Scalar>
Tensor<Scalar>* Tape<Scalar>::grad_buffer(Var<Scalar> v) {
  Node& n = nodes_.at(v.id);
  if (!n.requires_grad) return nullptr;
  if (!n.has_grad) {
    n.grad = Tensor<Scalar>::zeros(value(v.id).shape());
    n.has_grad = true;
  }
  return &n.grad;
}

template <typename Scalar>
Gradients<Scalar> Tape<Scalar>::backward(Var<Scalar> loss) {
  if (loss.tape != this || loss.id >= nodes_.size()) throw UsageError("backward: loss is not recorded on this tape");
  if (value(loss.id).size() != 1) {
    throw UsageError("backward: loss must be a scalar, got shape " + to_string(value(loss.id).shape()));
  }
  if (consumed_) throw UsageError("backward: tape already consumed");
  consumed_ = true;

  Gradients<Scalar> grads;
  if (!nodes_[loss.id].requires_grad) return grads;
  grad_buffer(loss)->vec().setConstant(1);

  for (std::size_t i = loss.id + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (!n.has_grad) continue;
    if (n.backward) n.backward(*this, n.grad);
    if (n.param) {
      auto it = grads.find(n.param);
      if (it == grads.end()) {
        grads.emplace(n.param, std::move(n.grad));
      } else {
        it->second.vec() += n.grad.vec();
      }
    }
  }
  return grads;
}

// ---- kernels -----------------------------------------------------------------

namespace {

template <typename Scalar>
using MatMap = Eigen::Map<RowMatrix<Scalar>>;
template <typename Scalar>
using ConstMatMap = Eigen::Map<const RowMatrix<Scalar>>;

struct ConvGeometry {
  Index n, c, h, w, f, kh, kw, stride, pad, oh, ow;
  Index patch() const { return c * kh * kw; }
  Index pixels() const { return oh * ow; }
};

template <typename Scalar>
void im2col(const Scalar* x, const ConvGeometry& g, RowMatrix<Scalar>& cols) {
  cols.resize(g.patch(), g.pixels());
  for (Index c = 0; c < g.c; ++c) {
    for (Index ki = 0; ki < g.kh; ++ki) {
      for (Index kj = 0; kj < g.kw; ++kj) {
        Scalar* row = cols.data() + ((c * g.kh + ki) * g.kw + kj) * g.pixels();
        for (Index oy = 0; oy < g.oh; ++oy) {
          const Index iy = oy * g.stride - g.pad + ki;
          Scalar* out = row + oy * g.ow;
          if (iy < 0 || iy >= g.h) {
            std::fill(out, out + g.ow, Scalar(0));
            continue;
          }
          const Scalar* in = x + (c * g.h + iy) * g.w;
          for (Index ox = 0; ox < g.ow; ++ox) {
            const Index ix = ox * g.stride - g.pad + kj;
            out[ox] = (ix >= 0 && ix < g.w) ? in[ix] : Scalar(0);
          }
        }
      }
    }
  }
}

template <typename Scalar>
void col2im_add(const RowMatrix<Scalar>& cols, const ConvGeometry& g, Scalar* dx) {
  for (Index c = 0; c < g.c; ++c) {
    for (Index ki = 0; ki < g.kh; ++ki) {
      for (Index kj = 0; kj < g.kw; ++kj) {
        const Scalar* row = cols.data() + ((c * g.kh + ki) * g.kw + kj) * g.pixels();
        for (Index oy = 0; oy < g.oh; ++oy) {
          const Index iy = oy * g.stride - g.pad + ki;
          if (iy < 0 || iy >= g.h) continue;
          Scalar* out = dx + (c * g.h + iy) * g.w;
          const Scalar* in = row + oy * g.ow;
          for (Index ox = 0; ox < g.ow; ++ox) {
            const Index ix = ox * g.stride - g.pad + kj;
            if (ix >= 0 && ix < g.w) out[ix] += in[ox];
          }
        }
      }
    }
  }
}

template <typename Scalar>
Index batch_of(const Tensor<Scalar>& t) {
  return t.shape()[0];
}

// (channels, spatial) view of axis 1 for BN / bias.
template <typename Scalar>
std::pair<Index, Index> channel_layout(const Tensor<Scalar>& x, const char* op) {
  if (x.rank() == 2) return {x.dim(1), 1};
  if (x.rank() == 4) return {x.dim(1), x.dim(2) * x.dim(3)};
  throw DimensionError(std::string(op) + ": expected rank 2 or 4 input, got " + to_string(x.shape()));
}

}  // namespace

template <typename Scalar>
Scalar softplus_value(Scalar x) {
  if (x > Scalar(kSoftplusThreshold)) return x;
  return std::log1p(std::exp(x));
}

template <typename Scalar>
Scalar sigmoid_value(Scalar x) {
  if (x >= 0) return Scalar(1) / (Scalar(1) + std::exp(-x));
  const Scalar e = std::exp(x);
  return e / (Scalar(1) + e);
}

// ---- ops -----------------------------------------------------------------

template <typename Scalar>
Var<Scalar> matmul(Var<Scalar> a, Var<Scalar> b) {
  const Tensor<Scalar>& av = a.value();
  const Tensor<Scalar>& bv = b.value();
  if (bv.rank() != 2 || av.sample_size() != bv.dim(0)) {
    throw DimensionError("matmul: inner dimensions differ: " + to_string(av.shape()) + " x " + to_string(bv.shape()));
  }
  const Index m = batch_of(av), k = bv.dim(0), n = bv.dim(1);
  Tensor<Scalar> out({m, n});
  out.matrix().noalias() = av.matrix() * bv.matrix();
  return a.tape->record(std::move(out), {a, b}, [a, b, m, k, n](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    if (auto* ga = t.grad_buffer(a)) {
      ga->matrix(m, k).noalias() += g.matrix() * t.value(b.id).matrix().transpose();
    }
    if (auto* gb = t.grad_buffer(b)) {
      gb->matrix().noalias() += t.value(a.id).matrix(m, k).transpose() * g.matrix();
    }
  });
}

template <typename Scalar>
Var<Scalar> add_bias(Var<Scalar> x, Var<Scalar> b) {
  const Tensor<Scalar>& xv = x.value();
  const auto [channels, spatial] = channel_layout(xv, "add_bias");
  if (b.value().size() != channels) {
    throw DimensionError("add_bias: bias " + to_string(b.value().shape()) + " does not match " + to_string(xv.shape()));
  }
  const Index n = batch_of(xv), per = channels * spatial;
  Tensor<Scalar> out = xv;
  const Vector<Scalar>& bias = b.value().vec();
  for (Index i = 0; i < n; ++i) MatMap<Scalar>(out.data() + i * per, channels, spatial).colwise() += bias;
  return x.tape->record(std::move(out), {x, b}, [x, b, n, channels, spatial, per](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    if (auto* gx = t.grad_buffer(x)) gx->vec() += g.vec();
    if (auto* gb = t.grad_buffer(b)) {
      for (Index i = 0; i < n; ++i) gb->vec() += ConstMatMap<Scalar>(g.data() + i * per, channels, spatial).rowwise().sum();
    }
  });
}

template <typename Scalar>
Var<Scalar> conv2d(Var<Scalar> x, Var<Scalar> w, Index stride, Index pad) {
  const Tensor<Scalar>& xv = x.value();
  const Tensor<Scalar>& wv = w.value();
  if (xv.rank() != 4 || wv.rank() != 4 || xv.dim(1) != wv.dim(1)) {
    throw DimensionError("conv2d: incompatible input " + to_string(xv.shape()) + " and kernel " + to_string(wv.shape()));
  }
  if (stride < 1 || pad < 0) throw UsageError("conv2d: stride must be >= 1 and pad >= 0");
  ConvGeometry geo{xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3), wv.dim(0), wv.dim(2), wv.dim(3), stride, pad, 0, 0};
  if (geo.kh > geo.h + 2 * pad || geo.kw > geo.w + 2 * pad) {
    throw DimensionError("conv2d: kernel " + to_string(wv.shape()) + " larger than padded input " + to_string(xv.shape()));
  }
  geo.oh = (geo.h + 2 * pad - geo.kh) / stride + 1;
  geo.ow = (geo.w + 2 * pad - geo.kw) / stride + 1;

  Tensor<Scalar> out({geo.n, geo.f, geo.oh, geo.ow});
  ConstMatMap<Scalar> wm(wv.data(), geo.f, geo.patch());
  RowMatrix<Scalar> cols;
  const Index in_stride = geo.c * geo.h * geo.w;
  const Index out_stride = geo.f * geo.pixels();
  for (Index i = 0; i < geo.n; ++i) {
    im2col(xv.data() + i * in_stride, geo, cols);
    MatMap<Scalar>(out.data() + i * out_stride, geo.f, geo.pixels()).noalias() = wm * cols;
  }
  return x.tape->record(std::move(out), {x, w}, [x, w, geo](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    auto* gx = t.grad_buffer(x);
    auto* gw = t.grad_buffer(w);
    const Tensor<Scalar>& xv = t.value(x.id);
    ConstMatMap<Scalar> wm(t.value(w.id).data(), geo.f, geo.patch());
    RowMatrix<Scalar> cols;
    RowMatrix<Scalar> dcols;
    const Index in_stride = geo.c * geo.h * geo.w;
    const Index out_stride = geo.f * geo.pixels();
    for (Index i = 0; i < geo.n; ++i) {
      ConstMatMap<Scalar> gi(g.data() + i * out_stride, geo.f, geo.pixels());
      if (gw) {
        im2col(xv.data() + i * in_stride, geo, cols);
        MatMap<Scalar>(gw->data(), geo.f, geo.patch()).noalias() += gi * cols.transpose();
      }
      if (gx) {
        dcols.noalias() = wm.transpose() * gi;
        col2im_add(dcols, geo, gx->data() + i * in_stride);
      }
    }
  });
}

template <typename Scalar>
Var<Scalar> maxpool2d(Var<Scalar> x, Index kernel, Index stride) {
  const Tensor<Scalar>& xv = x.value();
  if (xv.rank() != 4) throw DimensionError("maxpool2d: expected rank 4 input, got " + to_string(xv.shape()));
  if (kernel < 1 || stride < 1) throw UsageError("maxpool2d: kernel and stride must be >= 1");
  const Index n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  if (kernel > h || kernel > w) {
    throw DimensionError("maxpool2d: window " + std::to_string(kernel) + " exceeds input " + to_string(xv.shape()));
  }
  const Index oh = (h - kernel) / stride + 1, ow = (w - kernel) / stride + 1;
  Tensor<Scalar> out({n, c, oh, ow});
  std::vector<Index> argmax(static_cast<std::size_t>(out.size()));
  Index o = 0;
  for (Index plane = 0; plane < n * c; ++plane) {
    const Scalar* in = xv.data() + plane * h * w;
    for (Index oy = 0; oy < oh; ++oy) {
      for (Index ox = 0; ox < ow; ++ox, ++o) {
        Index best = (oy * stride) * w + ox * stride;
        for (Index ky = 0; ky < kernel; ++ky) {
          for (Index kx = 0; kx < kernel; ++kx) {
            const Index idx = (oy * stride + ky) * w + ox * stride + kx;
            if (in[idx] > in[best]) best = idx;
          }
        }
        out[o] = in[best];
        argmax[static_cast<std::size_t>(o)] = plane * h * w + best;
      }
    }
  }
  return x.tape->record(std::move(out), {x}, [x, argmax = std::move(argmax)](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    if (auto* gx = t.grad_buffer(x)) {
      for (std::size_t i = 0; i < argmax.size(); ++i) (*gx)[argmax[i]] += g[static_cast<Index>(i)];
    }
  });
}

template <typename Scalar>
Var<Scalar> relu(Var<Scalar> x) {
  Tensor<Scalar> out = x.value();
  out.vec() = out.vec().cwiseMax(Scalar(0));
  return x.tape->record(std::move(out), {x}, [x](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    if (auto* gx = t.grad_buffer(x)) {
      gx->vec().array() += (t.value(x.id).vec().array() > Scalar(0)).select(g.vec().array(), Scalar(0));
    }
  });
}

template <typename Scalar>
Var<Scalar> softplus_stable(Var<Scalar> x) {
  Tensor<Scalar> out = x.value();
  out.vec() = out.vec().unaryExpr([](Scalar v) { return softplus_value(v); });
  return x.tape->record(std::move(out), {x}, [x](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    if (auto* gx = t.grad_buffer(x)) {
      const auto& xv = t.value(x.id).vec();
      for (Index i = 0; i < xv.size(); ++i) {
        const Scalar d = xv[i] > Scalar(kSoftplusThreshold) ? Scalar(1) : sigmoid_value(xv[i]);
        (*gx)[i] += g[i] * d;
      }
    }
  });
}

namespace {

template <typename Scalar>
Var<Scalar> square_reduce(Var<Scalar> x, bool average) {
  const Tensor<Scalar>& xv = x.value();
  const Index n = batch_of(xv), d = xv.sample_size();
  const Scalar factor = average ? Scalar(1) / Scalar(d) : Scalar(1);
  Tensor<Scalar> out({n});
  out.vec() = xv.matrix().rowwise().squaredNorm() * factor;
  return x.tape->record(std::move(out), {x}, [x, factor](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    if (auto* gx = t.grad_buffer(x)) {
      const auto xm = t.value(x.id).matrix();
      gx->matrix().noalias() += (Scalar(2) * factor * g.vec()).asDiagonal() * xm;
    }
  });
}

}  // namespace

template <typename Scalar>
Var<Scalar> square_mean(Var<Scalar> x) {
  return square_reduce(x, true);
}

template <typename Scalar>
Var<Scalar> square_sum(Var<Scalar> x) {
  return square_reduce(x, false);
}

template <typename Scalar>
Var<Scalar> layernorm_reduced(Var<Scalar> x, Scalar eps) {
  const Tensor<Scalar>& xv = x.value();
  const Index n = batch_of(xv), d = xv.sample_size();
  const Vector<Scalar> rms = ((xv.matrix().rowwise().squaredNorm() / Scalar(d)).array() + eps).sqrt().matrix();
  Tensor<Scalar> out = xv;
  out.matrix() = rms.cwiseInverse().asDiagonal() * xv.matrix();
  return x.tape->record(std::move(out), {x}, [x, rms, n, d](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    if (auto* gx = t.grad_buffer(x)) {
      const auto xm = t.value(x.id).matrix();
      const auto gm = g.matrix();
      for (Index i = 0; i < n; ++i) {
        const Scalar r = rms[i];
        const Scalar dot = gm.row(i).dot(xm.row(i));
        gx->matrix().row(i) += gm.row(i) / r - xm.row(i) * (dot / (Scalar(d) * r * r * r));
      }
    }
  });
}

template <typename Scalar>
Var<Scalar> batchnorm(Var<Scalar> x, Var<Scalar> gamma, Var<Scalar> beta, BatchNormState<Scalar>& state,
                      BatchNormMode mode) {
  const Tensor<Scalar>& xv = x.value();
  const auto [channels, spatial] = channel_layout(xv, "batchnorm");
  const Index n = batch_of(xv), per = channels * spatial;
  if (gamma.value().size() != channels || beta.value().size() != channels ||
      state.running_mean.size() != channels) {
    throw DimensionError("batchnorm: parameters do not match " + std::to_string(channels) + " channels");
  }
  if (mode.stats == BatchNormStats::Batch && n < 2) {
    throw UsageError("batchnorm: train mode needs a batch of at least 2 samples; use rolling_train for single samples");
  }
  const Index count = n * spatial;
  auto sample = [&](Index i) { return ConstMatMap<Scalar>(xv.data() + i * per, channels, spatial); };

  Vector<Scalar> batch_mean, batch_var;
  if (mode.stats == BatchNormStats::Batch || mode.update_running) {
    batch_mean = Vector<Scalar>::Zero(channels);
    batch_var = Vector<Scalar>::Zero(channels);
    for (Index i = 0; i < n; ++i) batch_mean += sample(i).rowwise().sum();
    batch_mean /= Scalar(count);
    for (Index i = 0; i < n; ++i) batch_var += (sample(i).colwise() - batch_mean).rowwise().squaredNorm();
    batch_var /= Scalar(count);
  }
  if (mode.update_running) {
    const Scalar unbias = count > 1 ? Scalar(count) / Scalar(count - 1) : Scalar(1);
    const Scalar m = state.momentum;
    state.running_mean.vec() = m * state.running_mean.vec() + (Scalar(1) - m) * batch_mean;
    state.running_var.vec() = m * state.running_var.vec() + (Scalar(1) - m) * unbias * batch_var;
    ++state.updates;
  }
  const bool use_batch = mode.stats == BatchNormStats::Batch;
  const Vector<Scalar> mu = use_batch ? batch_mean : state.running_mean.vec();
  const Vector<Scalar> inv_std =
      ((use_batch ? batch_var : state.running_var.vec()).array() + state.eps).rsqrt().matrix();

  Tensor<Scalar> xhat(xv.shape());
  Tensor<Scalar> out(xv.shape());
  {
    const auto& gv = gamma.value().vec();
    const auto& bv = beta.value().vec();
    for (Index i = 0; i < n; ++i) {
      MatMap<Scalar> h(xhat.data() + i * per, channels, spatial);
      MatMap<Scalar> o(out.data() + i * per, channels, spatial);
      h = (sample(i).colwise() - mu).array().colwise() * inv_std.array();
      o = (h.array().colwise() * gv.array()).colwise() + bv.array();
    }
  }
  return x.tape->record(
      std::move(out), {x, gamma, beta},
      [x, gamma, beta, xhat = std::move(xhat), inv_std, use_batch, n, channels, spatial, per, count](
          Tape<Scalar>& t, const Tensor<Scalar>& g) {
        auto gs = [&](Index i) { return ConstMatMap<Scalar>(g.data() + i * per, channels, spatial); };
        auto hs = [&](Index i) { return ConstMatMap<Scalar>(xhat.data() + i * per, channels, spatial); };
        Vector<Scalar> sum_g = Vector<Scalar>::Zero(channels);
        Vector<Scalar> sum_gh = Vector<Scalar>::Zero(channels);
        for (Index i = 0; i < n; ++i) {
          sum_g += gs(i).rowwise().sum();
          sum_gh += gs(i).cwiseProduct(hs(i)).rowwise().sum();
        }
        if (auto* gg = t.grad_buffer(gamma)) gg->vec() += sum_gh;
        if (auto* gb = t.grad_buffer(beta)) gb->vec() += sum_g;
        if (auto* gx = t.grad_buffer(x)) {
          const Vector<Scalar> k = t.value(gamma.id).vec().cwiseProduct(inv_std);
          const Vector<Scalar> mean_g = sum_g / Scalar(count);
          const Vector<Scalar> mean_gh = sum_gh / Scalar(count);
          for (Index i = 0; i < n; ++i) {
            MatMap<Scalar> dx(gx->data() + i * per, channels, spatial);
            if (use_batch) {
              dx.array() += ((gs(i).array().colwise() - mean_g.array()) - hs(i).array().colwise() * mean_gh.array())
                                .colwise() * k.array();
            } else {
              dx.array() += gs(i).array().colwise() * k.array();
            }
          }
        }
      });
}

template <typename Scalar>
Var<Scalar> reshape(Var<Scalar> x, Shape shape) {
  Tensor<Scalar> out = x.value().reshaped(std::move(shape));
  return x.tape->record(std::move(out), {x}, [x](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    if (auto* gx = t.grad_buffer(x)) gx->vec() += g.vec();
  });
}

template <typename Scalar>
Var<Scalar> flatten(Var<Scalar> x) {
  const Tensor<Scalar>& xv = x.value();
  if (xv.rank() == 2) return x;
  return reshape(x, Shape{xv.dim(0), xv.sample_size()});
}

template <typename Scalar>
Var<Scalar> slice_batch(Var<Scalar> x, Index begin, Index count) {
  const Tensor<Scalar>& xv = x.value();
  if (begin < 0 || count < 1 || begin + count > xv.dim(0)) {
    throw DimensionError("slice_batch: rows [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                         ") outside " + to_string(xv.shape()));
  }
  Shape shape = xv.shape();
  shape[0] = count;
  const Index row = xv.sample_size();
  Tensor<Scalar> out(shape, xv.vec().segment(begin * row, count * row));
  return x.tape->record(std::move(out), {x}, [x, begin, row](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    if (auto* gx = t.grad_buffer(x)) gx->vec().segment(begin * row, g.size()) += g.vec();
  });
}

namespace {

template <typename Scalar>
void check_same_shape(const Tensor<Scalar>& a, const Tensor<Scalar>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shapes differ: " + to_string(a.shape()) + " vs " + to_string(b.shape()));
  }
}

}  // namespace

template <typename Scalar>
Var<Scalar> add(Var<Scalar> a, Var<Scalar> b) {
  check_same_shape(a.value(), b.value(), "add");
  Tensor<Scalar> out = a.value();
  out.vec() += b.value().vec();
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    if (auto* ga = t.grad_buffer(a)) ga->vec() += g.vec();
    if (auto* gb = t.grad_buffer(b)) gb->vec() += g.vec();
  });
}

template <typename Scalar>
Var<Scalar> sub(Var<Scalar> a, Var<Scalar> b) {
  check_same_shape(a.value(), b.value(), "sub");
  Tensor<Scalar> out = a.value();
  out.vec() -= b.value().vec();
  return a.tape->record(std::move(out), {a, b}, [a, b](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    if (auto* ga = t.grad_buffer(a)) ga->vec() += g.vec();
    if (auto* gb = t.grad_buffer(b)) gb->vec() -= g.vec();
  });
}

template <typename Scalar>
Var<Scalar> scale(Var<Scalar> x, Scalar factor) {
  Tensor<Scalar> out = x.value();
  out.vec() *= factor;
  return x.tape->record(std::move(out), {x}, [x, factor](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    if (auto* gx = t.grad_buffer(x)) gx->vec() += factor * g.vec();
  });
}

template <typename Scalar>
Var<Scalar> add_scalar(Var<Scalar> x, Scalar c) {
  Tensor<Scalar> out = x.value();
  out.vec().array() += c;
  return x.tape->record(std::move(out), {x}, [x](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    if (auto* gx = t.grad_buffer(x)) gx->vec() += g.vec();
  });
}

template <typename Scalar>
Var<Scalar> sum(Var<Scalar> x) {
  Tensor<Scalar> out = Tensor<Scalar>::scalar(x.value().vec().sum());
  return x.tape->record(std::move(out), {x}, [x](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    if (auto* gx = t.grad_buffer(x)) gx->vec().array() += g[0];
  });
}

template <typename Scalar>
Var<Scalar> mean(Var<Scalar> x) {
  const Index n = x.value().size();
  return scale(sum(x), Scalar(1) / Scalar(n));
}

template <typename Scalar>
Var<Scalar> weighted_sum(Var<Scalar> x, const Tensor<Scalar>& weights) {
  check_same_shape(x.value(), weights, "weighted_sum");
  Tensor<Scalar> out = Tensor<Scalar>::scalar(x.value().vec().dot(weights.vec()));
  return x.tape->record(std::move(out), {x}, [x, weights](Tape<Scalar>& t, const Tensor<Scalar>& g) {
    if (auto* gx = t.grad_buffer(x)) gx->vec() += g[0] * weights.vec();
  });
}

template <typename Scalar>
Var<Scalar> label_concat(Var<Scalar> images, std::span<const int> labels, Var<Scalar> embedding) {
  const Tensor<Scalar>& iv = images.value();
  const Tensor<Scalar>& ev = embedding.value();
  if (iv.rank() != 4) throw DimensionError("label_concat: images must be N x C x H x W, got " + to_string(iv.shape()));
  const Index n = iv.dim(0), c = iv.dim(1), plane = iv.dim(2) * iv.dim(3);
  if (ev.rank() != 2 || ev.dim(1) != plane) {
    throw DimensionError("label_concat: embedding " + to_string(ev.shape()) + " does not match image plane " +
                         to_string(iv.shape()));
  }
  if (static_cast<Index>(labels.size()) != n) throw DimensionError("label_concat: one label per image required");
  const Index k = ev.dim(0);
  Tensor<Scalar> out({n, c + 1, iv.dim(2), iv.dim(3)});
  std::vector<int> kept(labels.begin(), labels.end());
  for (Index i = 0; i < n; ++i) {
    const int label = kept[static_cast<std::size_t>(i)];
    if (label < 0 || label >= k) throw UsageError("label_concat: label " + std::to_string(label) + " out of range");
    Scalar* dst = out.data() + i * (c + 1) * plane;
    std::copy_n(iv.data() + i * c * plane, c * plane, dst);
    std::copy_n(ev.data() + label * plane, plane, dst + c * plane);
  }
  return images.tape->record(
      std::move(out), {images, embedding},
      [images, embedding, kept = std::move(kept), n, c, plane](Tape<Scalar>& t, const Tensor<Scalar>& g) {
        auto* gi = t.grad_buffer(images);
        auto* ge = t.grad_buffer(embedding);
        for (Index i = 0; i < n; ++i) {
          const Scalar* src = g.data() + i * (c + 1) * plane;
          if (gi) {
            Eigen::Map<Vector<Scalar>>(gi->data() + i * c * plane, c * plane) +=
                Eigen::Map<const Vector<Scalar>>(src, c * plane);
          }
          if (ge) {
            Eigen::Map<Vector<Scalar>>(ge->data() + kept[static_cast<std::size_t>(i)] * plane, plane) +=
                Eigen::Map<const Vector<Scalar>>(src + c * plane, plane);
          }
        }
      });
}

template <typename Scalar>
Var<Scalar> cross_entropy(Var<Scalar> logits, std::span<const int> labels) {
  const Tensor<Scalar>& lv = logits.value();
  if (lv.rank() != 2 || lv.dim(1) < 2) throw DimensionError("cross_entropy: logits must be N x K with K >= 2");
  const Index n = lv.dim(0), k = lv.dim(1);
  if (static_cast<Index>(labels.size()) != n) throw DimensionError("cross_entropy: one label per row required");
  RowMatrix<Scalar> probs(n, k);
  Scalar total = 0;
  std::vector<int> kept(labels.begin(), labels.end());
  for (Index i = 0; i < n; ++i) {
    const int y = kept[static_cast<std::size_t>(i)];
    if (y < 0 || y >= k) throw UsageError("cross_entropy: label " + std::to_string(y) + " out of range [0, " +
                                          std::to_string(k) + ")");
    const auto row = lv.matrix().row(i);
    const Scalar m = row.maxCoeff();
    probs.row(i) = (row.array() - m).exp();
    const Scalar z = probs.row(i).sum();
    probs.row(i) /= z;
    total += m + std::log(z) - row[y];
  }
  Tensor<Scalar> out = Tensor<Scalar>::scalar(total / Scalar(n));
  return logits.tape->record(std::move(out), {logits},
                             [logits, probs = std::move(probs), kept = std::move(kept), n](Tape<Scalar>& t,
                                                                                          const Tensor<Scalar>& g) {
                               if (auto* gl = t.grad_buffer(logits)) {
                                 RowMatrix<Scalar> d = probs;
                                 for (Index i = 0; i < n; ++i) d(i, kept[static_cast<std::size_t>(i)]) -= Scalar(1);
                                 gl->matrix().noalias() += (g[0] / Scalar(n)) * d;
                               }
                             });
}

#define FF_INSTANTIATE(S)                                                                                    \
  template struct Var<S>;                                                                                    \
  template class Tape<S>;                                                                                    \
  template S softplus_value<S>(S);                                                                           \
  template S sigmoid_value<S>(S);                                                                            \
  template Var<S> matmul<S>(Var<S>, Var<S>);                                                                 \
  template Var<S> add_bias<S>(Var<S>, Var<S>);                                                               \
  template Var<S> conv2d<S>(Var<S>, Var<S>, Index, Index);                                                   \
  template Var<S> maxpool2d<S>(Var<S>, Index, Index);                                                        \
  template Var<S> relu<S>(Var<S>);                                                                           \
  template Var<S> softplus_stable<S>(Var<S>);                                                                \
  template Var<S> square_mean<S>(Var<S>);                                                                    \
  template Var<S> square_sum<S>(Var<S>);                                                                     \
  template Var<S> layernorm_reduced<S>(Var<S>, S);                                                           \
  template Var<S> batchnorm<S>(Var<S>, Var<S>, Var<S>, BatchNormState<S>&, BatchNormMode);                   \
  template Var<S> reshape<S>(Var<S>, Shape);                                                                 \
  template Var<S> flatten<S>(Var<S>);                                                                        \
  template Var<S> slice_batch<S>(Var<S>, Index, Index);                                                      \
  template Var<S> add<S>(Var<S>, Var<S>);                                                                    \
  template Var<S> sub<S>(Var<S>, Var<S>);                                                                    \
  template Var<S> scale<S>(Var<S>, S);                                                                       \
  template Var<S> add_scalar<S>(Var<S>, S);                                                                  \
  template Var<S> mean<S>(Var<S>);                                                                           \
  template Var<S> sum<S>(Var<S>);                                                                            \
  template Var<S> weighted_sum<S>(Var<S>, const Tensor<S>&);                                                 \
  template Var<S> label_concat<S>(Var<S>, std::span<const int>, Var<S>);                                     \
  template Var<S> cross_entropy<S>(Var<S>, std::span<const int>);

FF_INSTANTIATE(float)
FF_INSTANTIATE(double)

#undef FF_INSTANTIATE

}  // namespace ff
