#include "fedadapt/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "fedadapt/error.hpp"
#include "fedadapt/kernels.hpp"
#include "fedadapt/rng.hpp"

namespace fedadapt {
namespace {

std::size_t last_dim(const Tensor& t) {
  if (t.rank() == 0) throw DimensionError("expected a tensor of rank >= 1, got scalar");
  return t.shape.back();
}

Shape with_last(Shape s, std::size_t n) {
  s.back() = n;
  return s;
}

constexpr double kGeluC = 0.7978845608028654;  // sqrt(2/pi)

}  // namespace

const char* activation_name(Activation a) {
  return a == Activation::relu ? "relu" : "gelu";
}

Activation parse_activation(const std::string& s) {
  if (s == "relu") return Activation::relu;
  if (s == "gelu") return Activation::gelu;
  throw ConfigError("unknown activation '" + s + "' (expected relu or gelu)");
}

Tensor linear_forward(const Tensor& x, const Parameter& w, const Parameter& b) {
  const Shape& ws = w.value.shape;
  if (ws.size() != 2 || last_dim(x) != ws[0]) {
    throw DimensionError("linear: input " + shape_str(x.shape) + " vs weight " +
                         shape_str(ws) + " (" + w.name + ")");
  }
  if (b.value.shape != Shape{ws[1]}) {
    throw DimensionError("linear: bias " + shape_str(b.value.shape) + " vs weight " +
                         shape_str(ws) + " (" + b.name + ")");
  }
  const std::size_t rows = x.numel() / ws[0];
  Tensor out(with_last(x.shape, ws[1]));
  kernels::gemm(x.data, w.value.data, b.value.data, out.data, rows, ws[0], ws[1]);
  return out;
}

Tensor linear_backward(const Tensor& dout, const Tensor& x, Parameter& w,
                       Parameter& b, bool need_dx) {
  const std::size_t n_in = w.value.dim(0);
  const std::size_t n_out = w.value.dim(1);
  const std::size_t rows = x.numel() / n_in;
  if (dout.numel() != rows * n_out) {
    throw DimensionError("linear backward: grad " + shape_str(dout.shape) +
                         " vs input " + shape_str(x.shape) + " and weight " +
                         shape_str(w.value.shape));
  }
  if (w.trainable) kernels::gemm_tn_acc(x.data, dout.data, w.value.ensure_grad(), rows, n_in, n_out);
  if (b.trainable) kernels::col_sum_acc(dout.data, b.value.ensure_grad(), rows, n_out);
  if (!need_dx) return {};
  Tensor dx(x.shape);
  kernels::gemm_nt(dout.data, w.value.data, dx.data, rows, n_out, n_in, false);
  return dx;
}

Tensor layer_norm(const Tensor& x, const Parameter& gain, const Parameter& shift,
                  double eps, LayerNormCache* cache) {
  const std::size_t n = last_dim(x);
  if (gain.numel() != n || shift.numel() != n) {
    throw DimensionError("layer_norm: input " + shape_str(x.shape) + " vs gain " +
                         shape_str(gain.value.shape));
  }
  const std::size_t rows = x.numel() / n;
  Tensor y(x.shape);
  if (cache) {
    cache->xhat.assign(x.numel(), 0.0);
    cache->rstd.assign(rows, 0.0);
    cache->shape = x.shape;
  }
  const double* g = gain.value.data.data();
  const double* s = shift.value.data.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = x.data.data() + r * n;
    double mean = 0.0;
    for (std::size_t j = 0; j < n; ++j) mean += xr[j];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= static_cast<double>(n);
    const double rstd = 1.0 / std::sqrt(var + eps);
    double* yr = y.data.data() + r * n;
    for (std::size_t j = 0; j < n; ++j) {
      const double xh = (xr[j] - mean) * rstd;
      yr[j] = g[j] * xh + s[j];
      if (cache) cache->xhat[r * n + j] = xh;
    }
    if (cache) cache->rstd[r] = rstd;
  }
  return y;
}

Tensor layer_norm_backward(const Tensor& dy, const LayerNormCache& cache,
                           Parameter& gain, Parameter& shift) {
  const std::size_t n = cache.shape.back();
  const std::size_t rows = cache.rstd.size();
  if (dy.numel() != rows * n) {
    throw DimensionError("layer_norm backward: grad " + shape_str(dy.shape) +
                         " vs input " + shape_str(cache.shape));
  }
  if (gain.trainable) {
    auto gg = gain.value.ensure_grad();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < n; ++j) gg[j] += dy.data[r * n + j] * cache.xhat[r * n + j];
  }
  if (shift.trainable) kernels::col_sum_acc(dy.data, shift.value.ensure_grad(), rows, n);

  Tensor dx(cache.shape);
  const double* g = gain.value.data.data();
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* dyr = dy.data.data() + r * n;
    const double* xh = cache.xhat.data() + r * n;
    double mean_d = 0.0, mean_dx = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double d = dyr[j] * g[j];
      mean_d += d;
      mean_dx += d * xh[j];
    }
    mean_d *= inv_n;
    mean_dx *= inv_n;
    double* dxr = dx.data.data() + r * n;
    for (std::size_t j = 0; j < n; ++j) {
      dxr[j] = cache.rstd[r] * (dyr[j] * g[j] - mean_d - xh[j] * mean_dx);
    }
  }
  return dx;
}

Tensor activation_forward(const Tensor& pre, Activation act) {
  Tensor out(pre.shape);
  if (act == Activation::relu) {
    for (std::size_t i = 0; i < pre.numel(); ++i) out.data[i] = pre.data[i] > 0.0 ? pre.data[i] : 0.0;
  } else {
    for (std::size_t i = 0; i < pre.numel(); ++i) {
      const double x = pre.data[i];
      out.data[i] = 0.5 * x * (1.0 + std::tanh(kGeluC * (x + 0.044715 * x * x * x)));
    }
  }
  return out;
}

Tensor activation_backward(const Tensor& dy, const Tensor& pre, Activation act) {
  Tensor dx(pre.shape);
  if (act == Activation::relu) {
    for (std::size_t i = 0; i < pre.numel(); ++i) dx.data[i] = pre.data[i] > 0.0 ? dy.data[i] : 0.0;
  } else {
    for (std::size_t i = 0; i < pre.numel(); ++i) {
      const double x = pre.data[i];
      const double u = kGeluC * (x + 0.044715 * x * x * x);
      const double t = std::tanh(u);
      const double du = kGeluC * (1.0 + 3.0 * 0.044715 * x * x);
      dx.data[i] = dy.data[i] * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * du);
    }
  }
  return dx;
}

void AttentionParams::collect(std::vector<Parameter*>& out) {
  for (Parameter* p : {&wq, &bq, &wk, &bk, &wv, &bv, &wo, &bo}) out.push_back(p);
}

void AttentionParams::collect(std::vector<const Parameter*>& out) const {
  for (const Parameter* p : {&wq, &bq, &wk, &bk, &wv, &bv, &wo, &bo}) out.push_back(p);
}

Tensor multi_head_attention(const Tensor& x, const AttentionParams& p,
                            std::size_t heads, AttentionCache* cache) {
  if (x.rank() != 3) throw DimensionError("attention: expected [B x S x n], got " + shape_str(x.shape));
  const std::size_t B = x.dim(0), S = x.dim(1), n = x.dim(2);
  if (heads == 0 || n % heads != 0) {
    throw ConfigError("attention: hidden size " + std::to_string(n) +
                      " not divisible by " + std::to_string(heads) + " heads");
  }
  const std::size_t dh = n / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Tensor q = linear_forward(x, p.wq, p.bq);
  Tensor k = linear_forward(x, p.wk, p.bk);
  Tensor v = linear_forward(x, p.wv, p.bv);
  Tensor probs({B, heads, S, S});
  Tensor ctx({B, S, n});
  std::vector<double> scores(S);

  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < S; ++i) {
        const double* qi = q.data.data() + (b * S + i) * n + h * dh;
        double mx = -INFINITY;
        for (std::size_t j = 0; j < S; ++j) {
          const double* kj = k.data.data() + (b * S + j) * n + h * dh;
          double s = 0.0;
          for (std::size_t t = 0; t < dh; ++t) s += qi[t] * kj[t];
          scores[j] = s * scale;
          mx = std::max(mx, scores[j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < S; ++j) {
          scores[j] = std::exp(scores[j] - mx);
          z += scores[j];
        }
        double* prow = probs.data.data() + ((b * heads + h) * S + i) * S;
        double* ci = ctx.data.data() + (b * S + i) * n + h * dh;
        for (std::size_t j = 0; j < S; ++j) {
          prow[j] = scores[j] / z;
          const double* vj = v.data.data() + (b * S + j) * n + h * dh;
          for (std::size_t t = 0; t < dh; ++t) ci[t] += prow[j] * vj[t];
        }
      }
    }
  }

  Tensor out = linear_forward(ctx, p.wo, p.bo);
  if (cache) {
    cache->x = x;
    cache->q = std::move(q);
    cache->k = std::move(k);
    cache->v = std::move(v);
    cache->probs = std::move(probs);
    cache->ctx = std::move(ctx);
    cache->heads = heads;
  }
  return out;
}

Tensor multi_head_attention_backward(const Tensor& dout, const AttentionCache& c,
                                     AttentionParams& p, bool need_dx) {
  const std::size_t B = c.x.dim(0), S = c.x.dim(1), n = c.x.dim(2);
  const std::size_t heads = c.heads, dh = n / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Tensor dctx = linear_backward(dout, c.ctx, p.wo, p.bo, true);
  Tensor dq(c.q.shape), dk(c.k.shape), dv(c.v.shape);
  std::vector<double> dp(S);

  for (std::size_t b = 0; b < B; ++b) {
    for (std::size_t h = 0; h < heads; ++h) {
      for (std::size_t i = 0; i < S; ++i) {
        const double* prow = c.probs.data.data() + ((b * heads + h) * S + i) * S;
        const double* dci = dctx.data.data() + (b * S + i) * n + h * dh;
        double dot = 0.0;
        for (std::size_t j = 0; j < S; ++j) {
          const double* vj = c.v.data.data() + (b * S + j) * n + h * dh;
          double* dvj = dv.data.data() + (b * S + j) * n + h * dh;
          double s = 0.0;
          for (std::size_t t = 0; t < dh; ++t) {
            s += dci[t] * vj[t];
            dvj[t] += prow[j] * dci[t];
          }
          dp[j] = s;
          dot += prow[j] * s;
        }
        const double* qi = c.q.data.data() + (b * S + i) * n + h * dh;
        double* dqi = dq.data.data() + (b * S + i) * n + h * dh;
        for (std::size_t j = 0; j < S; ++j) {
          const double ds = prow[j] * (dp[j] - dot) * scale;
          const double* kj = c.k.data.data() + (b * S + j) * n + h * dh;
          double* dkj = dk.data.data() + (b * S + j) * n + h * dh;
          for (std::size_t t = 0; t < dh; ++t) {
            dqi[t] += ds * kj[t];
            dkj[t] += ds * qi[t];
          }
        }
      }
    }
  }

  Tensor dxq = linear_backward(dq, c.x, p.wq, p.bq, need_dx);
  Tensor dxk = linear_backward(dk, c.x, p.wk, p.bk, need_dx);
  Tensor dxv = linear_backward(dv, c.x, p.wv, p.bv, need_dx);
  if (!need_dx) return {};
  for (std::size_t i = 0; i < dxq.numel(); ++i) dxq.data[i] = (dxq.data[i] + dxk.data[i]) + dxv.data[i];
  return dxq;
}

LossResult cross_entropy_loss(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2) throw DimensionError("cross_entropy: expected [B x C], got " + shape_str(logits.shape));
  const std::size_t B = logits.dim(0), C = logits.dim(1);
  if (labels.size() != B) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) +
                         " labels for logits " + shape_str(logits.shape));
  }
  LossResult r;
  r.dlogits = Tensor(logits.shape);
  const double inv_b = 1.0 / static_cast<double>(B);
  for (std::size_t b = 0; b < B; ++b) {
    if (labels[b] < 0 || static_cast<std::size_t>(labels[b]) >= C) {
      throw DataError("cross_entropy: sample " + std::to_string(b) + " has label " +
                      std::to_string(labels[b]) + " outside [0, " + std::to_string(C) + ")");
    }
    const double* row = logits.data.data() + b * C;
    const double mx = *std::max_element(row, row + C);
    double z = 0.0;
    for (std::size_t c = 0; c < C; ++c) z += std::exp(row[c] - mx);
    const double log_z = std::log(z) + mx;
    r.loss += (log_z - row[labels[b]]) * inv_b;
    double* d = r.dlogits.data.data() + b * C;
    for (std::size_t c = 0; c < C; ++c) d[c] = std::exp(row[c] - log_z) * inv_b;
    d[labels[b]] -= inv_b;
  }
  return r;
}

void sgd_step(std::span<Parameter* const> params, double lr) {
  for (Parameter* p : params) {
    if (!p->trainable) continue;
    if (!p->value.has_grad()) throw TrainingError("sgd_step: trainable parameter '" + p->name + "' has no gradient");
  }
  for (Parameter* p : params) {
    if (!p->trainable) continue;
    auto& d = p->value.data;
    const auto& g = p->value.grad;
    for (std::size_t i = 0; i < d.size(); ++i) d[i] -= lr * g[i];
    p->value.clear_grad();
  }
}

double grad_check(const LossFn& f, std::span<Parameter* const> params,
                  const GradCheckOptions& opts) {
  for (Parameter* p : params) p->value.clear_grad();
  f(true);
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (Parameter* p : params) {
    analytic.push_back(p->value.has_grad() ? p->value.grad
                                           : std::vector<double>(p->numel(), 0.0));
    p->value.clear_grad();
  }

  SeededRng rng(opts.seed);
  double worst = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Parameter* p = params[pi];
    if (!p->trainable) continue;
    std::vector<std::size_t> coords;
    if (opts.max_coords_per_param == 0 || opts.max_coords_per_param >= p->numel()) {
      coords.resize(p->numel());
      for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    } else {
      for (std::size_t s = 0; s < opts.max_coords_per_param; ++s) coords.push_back(rng.uniform_index(p->numel()));
    }
    for (std::size_t i : coords) {
      double& x = p->value.data[i];
      const double saved = x;
      x = saved + opts.step;
      const double up = f(false);
      x = saved - opts.step;
      const double down = f(false);
      x = saved;
      const double numeric = (up - down) / (2.0 * opts.step);
      const double a = analytic[pi][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), opts.floor});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace fedadapt
