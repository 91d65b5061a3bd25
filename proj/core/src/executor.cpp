#include "gator/executor.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <Eigen/Core>

#include "gator/error.hpp"

namespace gator {

namespace {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapRM = Eigen::Map<MatRM>;
using ConstMapRM = Eigen::Map<const MatRM>;

struct ConvGeometry {
  std::size_t cin, h, w, cout, kh, kw, oh, ow, stride, padding;
  std::size_t k() const { return cin * kh * kw; }
  std::size_t p() const { return oh * ow; }
};

ConvGeometry geometry(const Tensor& input, const Tensor& weight,
                      std::size_t stride, std::size_t padding) {
  ConvGeometry g{};
  g.cin = input.c();
  g.h = input.h();
  g.w = input.w();
  g.cout = weight.dim(0);
  g.kh = weight.dim(2);
  g.kw = weight.dim(3);
  g.stride = stride;
  g.padding = padding;
  g.oh = (g.h + 2 * padding - g.kh) / stride + 1;
  g.ow = (g.w + 2 * padding - g.kw) / stride + 1;
  if (weight.dim(1) != g.cin) {
    throw InvalidInput("conv weight expects " + std::to_string(weight.dim(1)) +
                       " input channels, activation has " + std::to_string(g.cin));
  }
  return g;
}

// cols is [cin*kh*kw, oh*ow] for one sample
void im2col(const double* x, const ConvGeometry& g, double* cols) {
  const std::size_t p = g.p();
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        double* row = cols + ((c * g.kh + ki) * g.kw + kj) * p;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ki) - static_cast<long>(g.padding);
          double* dst = row + oy * g.ow;
          if (iy < 0 || iy >= static_cast<long>(g.h)) {
            std::fill(dst, dst + g.ow, 0.0);
            continue;
          }
          const double* src = x + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kj) - static_cast<long>(g.padding);
            dst[ox] = (ix < 0 || ix >= static_cast<long>(g.w)) ? 0.0 : src[ix];
          }
        }
      }
    }
  }
}

void col2im_add(const double* cols, const ConvGeometry& g, double* dx) {
  const std::size_t p = g.p();
  for (std::size_t c = 0; c < g.cin; ++c) {
    for (std::size_t ki = 0; ki < g.kh; ++ki) {
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const double* row = cols + ((c * g.kh + ki) * g.kw + kj) * p;
        for (std::size_t oy = 0; oy < g.oh; ++oy) {
          const long iy = static_cast<long>(oy * g.stride + ki) - static_cast<long>(g.padding);
          if (iy < 0 || iy >= static_cast<long>(g.h)) continue;
          double* dst = dx + (c * g.h + static_cast<std::size_t>(iy)) * g.w;
          for (std::size_t ox = 0; ox < g.ow; ++ox) {
            const long ix = static_cast<long>(ox * g.stride + kj) - static_cast<long>(g.padding);
            if (ix >= 0 && ix < static_cast<long>(g.w)) dst[ix] += row[oy * g.ow + ox];
          }
        }
      }
    }
  }
}

bool direct_1x1(const ConvGeometry& g) {
  return g.kh == 1 && g.kw == 1 && g.stride == 1 && g.padding == 0;
}

void add_into(Tensor& dst, const Tensor& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst.data[i] += src.data[i];
}

}  // namespace

namespace kernels {

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor* bias,
              std::size_t stride, std::size_t padding) {
  const ConvGeometry g = geometry(input, weight, stride, padding);
  const std::size_t n = input.n();
  Tensor out({n, g.cout, g.oh, g.ow});
  const std::size_t k = g.k(), p = g.p();
  std::vector<double> cols(direct_1x1(g) ? 0 : k * p);
  ConstMapRM w(weight.data.data(), static_cast<long>(g.cout), static_cast<long>(k));
  for (std::size_t b = 0; b < n; ++b) {
    double* y = out.data.data() + b * g.cout * p;
    if (k > 0 && g.cout > 0) {
      const double* x = input.data.data() + b * g.cin * g.h * g.w;
      const double* src = x;
      if (!direct_1x1(g)) {
        im2col(x, g, cols.data());
        src = cols.data();
      }
      MapRM(y, static_cast<long>(g.cout), static_cast<long>(p)).noalias() =
          w * ConstMapRM(src, static_cast<long>(k), static_cast<long>(p));
    }
    if (bias) {
      for (std::size_t c = 0; c < g.cout; ++c) {
        for (std::size_t q = 0; q < p; ++q) y[c * p + q] += bias->data[c];
      }
    }
  }
  return out;
}

Tensor conv2d_backward(const Tensor& input, const Tensor& weight,
                       const Tensor& grad_output, std::size_t stride,
                       std::size_t padding, Tensor& grad_weight,
                       Tensor* grad_bias) {
  const ConvGeometry g = geometry(input, weight, stride, padding);
  const std::size_t n = input.n();
  const std::size_t k = g.k(), p = g.p();
  Tensor dx(input.shape);
  if (grad_bias) {
    for (std::size_t b = 0; b < n; ++b) {
      const double* dy = grad_output.data.data() + b * g.cout * p;
      for (std::size_t c = 0; c < g.cout; ++c) {
        double s = 0.0;
        for (std::size_t q = 0; q < p; ++q) s += dy[c * p + q];
        grad_bias->data[c] += s;
      }
    }
  }
  if (k == 0 || g.cout == 0) return dx;
  const bool direct = direct_1x1(g);
  std::vector<double> cols(direct ? 0 : k * p);
  std::vector<double> dcols(direct ? 0 : k * p);
  ConstMapRM w(weight.data.data(), static_cast<long>(g.cout), static_cast<long>(k));
  MapRM dw(grad_weight.data.data(), static_cast<long>(g.cout), static_cast<long>(k));
  for (std::size_t b = 0; b < n; ++b) {
    const double* x = input.data.data() + b * g.cin * g.h * g.w;
    const double* dy_ptr = grad_output.data.data() + b * g.cout * p;
    ConstMapRM dy(dy_ptr, static_cast<long>(g.cout), static_cast<long>(p));
    double* dxb = dx.data.data() + b * g.cin * g.h * g.w;
    if (direct) {
      dw.noalias() += dy * ConstMapRM(x, static_cast<long>(k), static_cast<long>(p)).transpose();
      MapRM(dxb, static_cast<long>(k), static_cast<long>(p)).noalias() = w.transpose() * dy;
    } else {
      im2col(x, g, cols.data());
      dw.noalias() += dy * ConstMapRM(cols.data(), static_cast<long>(k), static_cast<long>(p)).transpose();
      MapRM(dcols.data(), static_cast<long>(k), static_cast<long>(p)).noalias() = w.transpose() * dy;
      col2im_add(dcols.data(), g, dxb);
    }
  }
  return dx;
}

}  // namespace kernels

// ---------------------------------------------------------------------------

Tensor Executor::forward(WeightStore& weights, const Tensor& batch,
                         const ForwardOptions& options) {
  const NetworkGraph& g = *graph_;
  const LayerInfo& in = g.info(g.input_index());
  if (batch.rank() != 4 || batch.c() != in.out_channels || batch.h() != in.out_h ||
      batch.w() != in.out_w) {
    throw InvalidInput("input batch has shape " + shape_to_string(batch.shape) +
                       ", network '" + g.name() + "' expects [N," +
                       std::to_string(in.out_channels) + "," + std::to_string(in.out_h) +
                       "," + std::to_string(in.out_w) + "]");
  }
  if (batch.n() == 0) throw InvalidInput("input batch is empty");
  outputs_.assign(g.size(), Tensor());
  pre_gate_.assign(g.size(), Tensor());
  bn_.assign(g.size(), BatchNormCache());
  argmax_.assign(g.size(), {});
  gate_ = options.gate;
  outputs_[g.input_index()] = batch;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (i == g.input_index()) continue;
    run_layer(weights, i, options);
  }
  return outputs_[g.output_index()];
}

Tensor Executor::forward(const WeightStore& weights, const Tensor& batch) {
  // eval mode never writes to the store
  return forward(const_cast<WeightStore&>(weights), batch,
                 ForwardOptions{Mode::kEval, false, nullptr});
}

Tensor Executor::rerun_from(WeightStore& weights, std::size_t first,
                            const ForwardOptions& options) {
  if (outputs_.size() != graph_->size()) {
    throw RuntimeFailure("rerun_from called before forward");
  }
  ForwardOptions opts = options;
  opts.update_running_stats = false;
  gate_ = opts.gate;
  for (std::size_t i = first; i < graph_->size(); ++i) {
    if (i == graph_->input_index()) continue;
    run_layer(weights, i, opts);
  }
  return outputs_[graph_->output_index()];
}

void Executor::run_layer(WeightStore& weights, std::size_t i,
                         const ForwardOptions& options) {
  const NetworkGraph& g = *graph_;
  const LayerSpec& spec = g.layer(i);
  const LayerInfo& info = g.info(i);
  const Tensor& x = outputs_[info.inputs[0]];
  Tensor y;
  switch (spec.kind) {
    case LayerKind::kInput:
      return;
    case LayerKind::kOutput:
    case LayerKind::kRelu:
      y = x;
      if (spec.kind == LayerKind::kRelu) {
        for (double& v : y.data) v = v > 0.0 ? v : 0.0;
      }
      break;
    case LayerKind::kConv: {
      const Tensor& w = weights.at(param_key(spec.id, "weight"));
      const Tensor* b = spec.bias ? &weights.at(param_key(spec.id, "bias")) : nullptr;
      y = kernels::conv2d(x, w, b, spec.stride, spec.padding);
      break;
    }
    case LayerKind::kFullyConnected: {
      const Tensor& w = weights.at(param_key(spec.id, "weight"));
      const std::size_t n = x.n(), fin = spec.in_channels, fout = spec.out_channels;
      y = Tensor({n, fout, 1, 1});
      if (fin > 0 && fout > 0) {
        MapRM(y.data.data(), static_cast<long>(n), static_cast<long>(fout)).noalias() =
            ConstMapRM(x.data.data(), static_cast<long>(n), static_cast<long>(fin)) *
            ConstMapRM(w.data.data(), static_cast<long>(fout), static_cast<long>(fin)).transpose();
      }
      if (spec.bias) {
        const Tensor& b = weights.at(param_key(spec.id, "bias"));
        for (std::size_t r = 0; r < n; ++r) {
          for (std::size_t c = 0; c < fout; ++c) y.data[r * fout + c] += b.data[c];
        }
      }
      break;
    }
    case LayerKind::kBatchNorm: {
      const std::size_t n = x.n(), c = x.c(), hw = x.h() * x.w();
      const Tensor& gamma = weights.at(param_key(spec.id, "gamma"));
      const Tensor& beta = weights.at(param_key(spec.id, "beta"));
      Tensor& rmean = weights.at(param_key(spec.id, "running_mean"));
      Tensor& rvar = weights.at(param_key(spec.id, "running_var"));
      BatchNormCache& cache = bn_[i];
      cache.batch_stats = options.mode == Mode::kTrain;
      cache.inv_std.assign(c, 0.0);
      cache.normalized = Tensor(x.shape);
      y = Tensor(x.shape);
      const double m = static_cast<double>(n * hw);
      for (std::size_t ch = 0; ch < c; ++ch) {
        double mean, var;
        if (cache.batch_stats) {
          double s = 0.0;
          for (std::size_t b = 0; b < n; ++b) {
            const double* p = x.data.data() + (b * c + ch) * hw;
            for (std::size_t q = 0; q < hw; ++q) s += p[q];
          }
          mean = s / m;
          double ss = 0.0;
          for (std::size_t b = 0; b < n; ++b) {
            const double* p = x.data.data() + (b * c + ch) * hw;
            for (std::size_t q = 0; q < hw; ++q) ss += (p[q] - mean) * (p[q] - mean);
          }
          var = ss / m;
          if (options.update_running_stats) {
            const double unbiased = m > 1.0 ? ss / (m - 1.0) : var;
            rmean.data[ch] = (1.0 - kBatchNormMomentum) * rmean.data[ch] + kBatchNormMomentum * mean;
            rvar.data[ch] = (1.0 - kBatchNormMomentum) * rvar.data[ch] + kBatchNormMomentum * unbiased;
          }
        } else {
          mean = rmean.data[ch];
          var = rvar.data[ch];
        }
        const double inv = 1.0 / std::sqrt(var + kBatchNormEpsilon);
        cache.inv_std[ch] = inv;
        for (std::size_t b = 0; b < n; ++b) {
          const std::size_t off = (b * c + ch) * hw;
          for (std::size_t q = 0; q < hw; ++q) {
            const double xn = (x.data[off + q] - mean) * inv;
            cache.normalized.data[off + q] = xn;
            y.data[off + q] = gamma.data[ch] * xn + beta.data[ch];
          }
        }
      }
      break;
    }
    case LayerKind::kAdd:
      y = x;
      for (std::size_t k = 1; k < info.inputs.size(); ++k) add_into(y, outputs_[info.inputs[k]]);
      break;
    case LayerKind::kGlobalAvgPool: {
      const std::size_t n = x.n(), c = x.c(), hw = x.h() * x.w();
      y = Tensor({n, c, 1, 1});
      for (std::size_t r = 0; r < n * c; ++r) {
        double s = 0.0;
        for (std::size_t q = 0; q < hw; ++q) s += x.data[r * hw + q];
        y.data[r] = s / static_cast<double>(hw);
      }
      break;
    }
    case LayerKind::kMaxPool: {
      const std::size_t n = x.n(), c = x.c();
      y = Tensor({n, c, info.out_h, info.out_w});
      auto& route = argmax_[i];
      route.assign(y.size(), 0);
      for (std::size_t r = 0; r < n * c; ++r) {
        const double* src = x.data.data() + r * x.h() * x.w();
        for (std::size_t oy = 0; oy < info.out_h; ++oy) {
          for (std::size_t ox = 0; ox < info.out_w; ++ox) {
            double best = -std::numeric_limits<double>::infinity();
            std::size_t arg = 0;
            for (std::size_t ki = 0; ki < spec.kernel_h; ++ki) {
              const long iy = static_cast<long>(oy * spec.stride + ki) - static_cast<long>(spec.padding);
              if (iy < 0 || iy >= static_cast<long>(x.h())) continue;
              for (std::size_t kj = 0; kj < spec.kernel_w; ++kj) {
                const long ix = static_cast<long>(ox * spec.stride + kj) - static_cast<long>(spec.padding);
                if (ix < 0 || ix >= static_cast<long>(x.w())) continue;
                const std::size_t idx = static_cast<std::size_t>(iy) * x.w() + static_cast<std::size_t>(ix);
                if (src[idx] > best) {
                  best = src[idx];
                  arg = idx;
                }
              }
            }
            const std::size_t o = (r * info.out_h + oy) * info.out_w + ox;
            y.data[o] = best;
            route[o] = r * x.h() * x.w() + arg;
          }
        }
      }
      break;
    }
  }
  if (gate_ && gate_->gates(i)) {
    pre_gate_[i] = std::move(y);
    outputs_[i] = gate_->apply(i, pre_gate_[i]);
  } else {
    outputs_[i] = std::move(y);
  }
}

WeightStore Executor::backward(const WeightStore& weights,
                               const Tensor& grad_output) {
  const NetworkGraph& g = *graph_;
  if (outputs_.size() != g.size()) throw RuntimeFailure("backward called before forward");
  if (grad_output.shape != outputs_[g.output_index()].shape) {
    throw InvalidInput("output gradient has shape " + shape_to_string(grad_output.shape) +
                       ", expected " + shape_to_string(outputs_[g.output_index()].shape));
  }
  WeightStore grads;
  for (const auto& [key, tensor] : weights) {
    if (key.ends_with(".running_mean") || key.ends_with(".running_var")) continue;
    grads.emplace(key, Tensor(tensor.shape));
  }

  std::vector<Tensor> dout(g.size());
  auto accumulate = [&](std::size_t layer, Tensor&& t) {
    if (dout[layer].data.empty() && dout[layer].shape.empty()) {
      dout[layer] = std::move(t);
    } else {
      add_into(dout[layer], t);
    }
  };
  dout[g.output_index()] = grad_output;

  for (std::size_t i = g.size(); i-- > 0;) {
    if (dout[i].shape.empty()) continue;
    const LayerSpec& spec = g.layer(i);
    const LayerInfo& info = g.info(i);
    Tensor dy = std::move(dout[i]);
    if (gate_ && gate_->gates(i)) dy = gate_->backprop(i, dy, pre_gate_[i]);
    if (spec.kind == LayerKind::kInput) continue;
    const Tensor& x = outputs_[info.inputs[0]];

    switch (spec.kind) {
      case LayerKind::kOutput:
        accumulate(info.inputs[0], std::move(dy));
        break;
      case LayerKind::kRelu: {
        for (std::size_t k = 0; k < dy.size(); ++k) {
          if (!(x.data[k] > 0.0)) dy.data[k] = 0.0;
        }
        accumulate(info.inputs[0], std::move(dy));
        break;
      }
      case LayerKind::kConv: {
        const Tensor& w = weights.at(param_key(spec.id, "weight"));
        Tensor* db = spec.bias ? &grads.at(param_key(spec.id, "bias")) : nullptr;
        accumulate(info.inputs[0],
                   kernels::conv2d_backward(x, w, dy, spec.stride, spec.padding,
                                            grads.at(param_key(spec.id, "weight")), db));
        break;
      }
      case LayerKind::kFullyConnected: {
        const Tensor& w = weights.at(param_key(spec.id, "weight"));
        const std::size_t n = x.n(), fin = spec.in_channels, fout = spec.out_channels;
        Tensor dx(x.shape);
        if (fin > 0 && fout > 0) {
          ConstMapRM dym(dy.data.data(), static_cast<long>(n), static_cast<long>(fout));
          ConstMapRM xm(x.data.data(), static_cast<long>(n), static_cast<long>(fin));
          MapRM(grads.at(param_key(spec.id, "weight")).data.data(), static_cast<long>(fout),
                static_cast<long>(fin))
              .noalias() += dym.transpose() * xm;
          MapRM(dx.data.data(), static_cast<long>(n), static_cast<long>(fin)).noalias() =
              dym * ConstMapRM(w.data.data(), static_cast<long>(fout), static_cast<long>(fin));
        }
        if (spec.bias) {
          Tensor& db = grads.at(param_key(spec.id, "bias"));
          for (std::size_t r = 0; r < n; ++r) {
            for (std::size_t c = 0; c < fout; ++c) db.data[c] += dy.data[r * fout + c];
          }
        }
        accumulate(info.inputs[0], std::move(dx));
        break;
      }
      case LayerKind::kBatchNorm: {
        const std::size_t n = x.n(), c = x.c(), hw = x.h() * x.w();
        const Tensor& gamma = weights.at(param_key(spec.id, "gamma"));
        Tensor& dgamma = grads.at(param_key(spec.id, "gamma"));
        Tensor& dbeta = grads.at(param_key(spec.id, "beta"));
        const BatchNormCache& cache = bn_[i];
        Tensor dx(x.shape);
        const double m = static_cast<double>(n * hw);
        for (std::size_t ch = 0; ch < c; ++ch) {
          double sum_dy = 0.0, sum_dy_xn = 0.0;
          for (std::size_t b = 0; b < n; ++b) {
            const std::size_t off = (b * c + ch) * hw;
            for (std::size_t q = 0; q < hw; ++q) {
              sum_dy += dy.data[off + q];
              sum_dy_xn += dy.data[off + q] * cache.normalized.data[off + q];
            }
          }
          dgamma.data[ch] += sum_dy_xn;
          dbeta.data[ch] += sum_dy;
          const double scale = gamma.data[ch] * cache.inv_std[ch];
          for (std::size_t b = 0; b < n; ++b) {
            const std::size_t off = (b * c + ch) * hw;
            for (std::size_t q = 0; q < hw; ++q) {
              if (cache.batch_stats) {
                dx.data[off + q] = scale * (dy.data[off + q] - sum_dy / m -
                                            cache.normalized.data[off + q] * sum_dy_xn / m);
              } else {
                dx.data[off + q] = scale * dy.data[off + q];
              }
            }
          }
        }
        accumulate(info.inputs[0], std::move(dx));
        break;
      }
      case LayerKind::kAdd:
        for (std::size_t k = 0; k + 1 < info.inputs.size(); ++k) {
          accumulate(info.inputs[k], Tensor(dy));
        }
        accumulate(info.inputs.back(), std::move(dy));
        break;
      case LayerKind::kGlobalAvgPool: {
        Tensor dx(x.shape);
        const std::size_t hw = x.h() * x.w();
        for (std::size_t r = 0; r < x.n() * x.c(); ++r) {
          const double v = dy.data[r] / static_cast<double>(hw);
          for (std::size_t q = 0; q < hw; ++q) dx.data[r * hw + q] = v;
        }
        accumulate(info.inputs[0], std::move(dx));
        break;
      }
      case LayerKind::kMaxPool: {
        Tensor dx(x.shape);
        const auto& route = argmax_[i];
        for (std::size_t o = 0; o < dy.size(); ++o) dx.data[route[o]] += dy.data[o];
        accumulate(info.inputs[0], std::move(dx));
        break;
      }
      case LayerKind::kInput:
        break;
    }
  }
  return grads;
}

}  // namespace gator
