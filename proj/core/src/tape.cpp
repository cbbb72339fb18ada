#include "hvfcast/tape.hpp"

#include <Eigen/Core>
#include <cmath>
#include <memory>

#include "hvfcast/error.hpp"

namespace hvfcast::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatMap = Eigen::Map<RowMat>;
using ConstMatMap = Eigen::Map<const RowMat>;

Eigen::Index ix(std::size_t v) { return static_cast<Eigen::Index>(v); }

void require_rank(const Tensor& t, std::size_t rank, const char* what) {
  if (t.rank() != rank)
    throw ShapeError(std::string(what) + ": expected rank " + std::to_string(rank) + ", got " +
                     shape_str(t.shape()));
}

struct ConvGeom {
  std::size_t n, cin, h, w, cout, k, pad;
  std::size_t plane() const { return h * w; }
  std::size_t rows() const { return cin * k * k; }
  std::size_t cols() const { return n * h * w; }
};

// Column matrix (cin*k*k, n*h*w); column index = sample * h*w + pixel.
void im2col(const ConvGeom& g, const double* x, double* col) {
  const std::size_t P = g.plane(), C = g.cols();
  const long H = static_cast<long>(g.h), W = static_cast<long>(g.w);
  const long pad = static_cast<long>(g.pad);
  for (std::size_t ci = 0; ci < g.cin; ++ci)
    for (std::size_t kh = 0; kh < g.k; ++kh)
      for (std::size_t kw = 0; kw < g.k; ++kw) {
        double* row = col + ((ci * g.k + kh) * g.k + kw) * C;
        const long dh = static_cast<long>(kh) - pad, dw = static_cast<long>(kw) - pad;
        for (std::size_t s = 0; s < g.n; ++s) {
          const double* src = x + (s * g.cin + ci) * P;
          double* dst = row + s * P;
          for (long oh = 0; oh < H; ++oh) {
            const long ih = oh + dh;
            for (long ow = 0; ow < W; ++ow) {
              const long iw = ow + dw;
              dst[oh * W + ow] = (ih >= 0 && ih < H && iw >= 0 && iw < W) ? src[ih * W + iw] : 0.0;
            }
          }
        }
      }
}

void col2im_add(const ConvGeom& g, const double* col, double* dx) {
  const std::size_t P = g.plane(), C = g.cols();
  const long H = static_cast<long>(g.h), W = static_cast<long>(g.w);
  const long pad = static_cast<long>(g.pad);
  for (std::size_t ci = 0; ci < g.cin; ++ci)
    for (std::size_t kh = 0; kh < g.k; ++kh)
      for (std::size_t kw = 0; kw < g.k; ++kw) {
        const double* row = col + ((ci * g.k + kh) * g.k + kw) * C;
        const long dh = static_cast<long>(kh) - pad, dw = static_cast<long>(kw) - pad;
        for (std::size_t s = 0; s < g.n; ++s) {
          double* dst = dx + (s * g.cin + ci) * P;
          const double* src = row + s * P;
          for (long oh = 0; oh < H; ++oh) {
            const long ih = oh + dh;
            if (ih < 0 || ih >= H) continue;
            for (long ow = 0; ow < W; ++ow) {
              const long iw = ow + dw;
              if (iw >= 0 && iw < W) dst[ih * W + iw] += src[oh * W + ow];
            }
          }
        }
      }
}

}  // namespace

// ---- ParamSet ---------------------------------------------------------------

Parameter& ParamSet::add(std::string name, Tensor value) {
  if (index_.count(name)) throw DataError("duplicate parameter name " + name);
  index_[name] = entries_.size();
  Tensor grad(value.shape());
  entries_.push_back({std::move(name), std::move(value), std::move(grad)});
  return entries_.back();
}

Parameter& ParamSet::get(const std::string& name) {
  auto it = index_.find(name);
  if (it == index_.end()) throw DataError("unknown parameter " + name);
  return entries_[it->second];
}

const Parameter& ParamSet::get(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end()) throw DataError("unknown parameter " + name);
  return entries_[it->second];
}

std::size_t ParamSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : entries_) n += p.value.size();
  return n;
}

void ParamSet::zero_grad() {
  for (auto& p : entries_) p.grad.fill(0.0);
}

BatchNormState::BatchNormState(std::size_t channels)
    : running_mean(Shape{channels}, 0.0), running_var(Shape{channels}, 1.0) {}

// ---- Tape -------------------------------------------------------------------

const Tensor& Var::value() const { return tape_->value(id_); }

Var Tape::constant(Tensor value) {
  nodes_.push_back({std::move(value), {}, {}, {}, nullptr, false});
  return {this, nodes_.size() - 1};
}

Var Tape::parameter(Parameter& param) {
  nodes_.push_back({param.value, {}, {}, {}, &param, true});
  return {this, nodes_.size() - 1};
}

Var Tape::push(Tensor value, std::vector<std::size_t> parents, Backward backward) {
  bool needs = false;
  for (auto p : parents) needs = needs || nodes_.at(p).needs_grad;
  nodes_.push_back({std::move(value), {}, std::move(parents), std::move(backward), nullptr, needs});
  return {this, nodes_.size() - 1};
}

Tensor& Tape::grad(std::size_t id) {
  auto& node = nodes_[id];
  if (node.grad.empty() && !node.value.empty()) node.grad = Tensor(node.value.shape());
  return node.grad;
}

void Tape::backward(Var loss) {
  if (loss.value().size() != 1)
    throw ShapeError("backward: loss must be scalar, got " + shape_str(loss.shape()));
  grad(loss.id()).fill(1.0);
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    auto& node = nodes_[i];
    if (!node.needs_grad || node.grad.empty()) continue;
    if (node.param) {
      auto& dst = node.param->grad;
      for (std::size_t j = 0; j < dst.size(); ++j) dst[j] += node.grad[j];
    } else if (node.backward) {
      node.backward(*this, i);
    }
  }
}

void Tape::record_kinks(std::span<const double> args) {
  kinks_.reserve(kinks_.size() + args.size());
  for (double v : args) kinks_.push_back(static_cast<std::int8_t>((v > 0) - (v < 0)));
}

// ---- Layers -----------------------------------------------------------------

Var relu(Var x) {
  Tape& t = x.tape();
  const Tensor& in = x.value();
  t.record_kinks(in.data());
  Tensor out(in.shape());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
  return t.push(std::move(out), {x.id()}, [](Tape& tp, std::size_t self) {
    const auto src = tp.parents(self)[0];
    if (!tp.needs_grad(src)) return;
    const Tensor& in = tp.value(src);
    const Tensor& g = tp.grad(self);
    Tensor& dx = tp.grad(src);
    for (std::size_t i = 0; i < in.size(); ++i)
      if (in[i] > 0.0) dx[i] += g[i];
  });
}

Var conv2d(Var x, Var weight, Var bias, Activation act) {
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  require_rank(xv, 4, "conv2d input");
  require_rank(wv, 4, "conv2d weight");
  if (wv.dim(1) != xv.dim(1))
    throw ShapeError("conv2d: input " + shape_str(xv.shape()) + " does not match weight " +
                     shape_str(wv.shape()));
  if (wv.dim(2) != wv.dim(3) || wv.dim(2) % 2 == 0)
    throw ShapeError("conv2d: kernel must be odd and square, got " + shape_str(wv.shape()));
  if (bias.value().size() != wv.dim(0))
    throw ShapeError("conv2d: bias " + shape_str(bias.shape()) + " does not match weight " +
                     shape_str(wv.shape()));

  const ConvGeom g{xv.dim(0), xv.dim(1), xv.dim(2), xv.dim(3), wv.dim(0), wv.dim(2), wv.dim(2) / 2};
  const std::size_t P = g.plane();
  std::vector<double> col(g.rows() * g.cols());
  im2col(g, xv.ptr(), col.data());
  RowMat prod = ConstMatMap(wv.ptr(), ix(g.cout), ix(g.rows())) *
                ConstMatMap(col.data(), ix(g.rows()), ix(g.cols()));
  Tensor out(Shape{g.n, g.cout, g.h, g.w});
  const Tensor& bv = bias.value();
  for (std::size_t s = 0; s < g.n; ++s)
    for (std::size_t co = 0; co < g.cout; ++co) {
      double* dst = out.ptr() + (s * g.cout + co) * P;
      const double* src = prod.data() + co * g.cols() + s * P;
      for (std::size_t p = 0; p < P; ++p) dst[p] = src[p] + bv[co];
    }

  Tape& t = x.tape();
  Var y = t.push(std::move(out), {x.id(), weight.id(), bias.id()}, [g](Tape& tp, std::size_t self) {
    const auto& par = tp.parents(self);
    const std::size_t P = g.plane();
    const Tensor& dy = tp.grad(self);
    // dY rearranged to (cout, n*P) to match the column layout.
    RowMat dym(ix(g.cout), ix(g.cols()));
    for (std::size_t s = 0; s < g.n; ++s)
      for (std::size_t co = 0; co < g.cout; ++co) {
        const double* src = dy.ptr() + (s * g.cout + co) * P;
        double* dst = dym.data() + co * g.cols() + s * P;
        for (std::size_t p = 0; p < P; ++p) dst[p] = src[p];
      }
    if (tp.needs_grad(par[2])) {
      Tensor& db = tp.grad(par[2]);
      for (std::size_t co = 0; co < g.cout; ++co) {
        double acc = 0.0;
        const double* row = dym.data() + co * g.cols();
        for (std::size_t j = 0; j < g.cols(); ++j) acc += row[j];
        db[co] += acc;
      }
    }
    const bool need_w = tp.needs_grad(par[1]);
    const bool need_x = tp.needs_grad(par[0]);
    if (!need_w && !need_x) return;
    if (need_w) {
      std::vector<double> col(g.rows() * g.cols());
      im2col(g, tp.value(par[0]).ptr(), col.data());
      Tensor& dw = tp.grad(par[1]);
      MatMap(dw.ptr(), ix(g.cout), ix(g.rows())).noalias() +=
          dym * ConstMatMap(col.data(), ix(g.rows()), ix(g.cols())).transpose();
    }
    if (need_x) {
      const Tensor& wv = tp.value(par[1]);
      RowMat dcol = ConstMatMap(wv.ptr(), ix(g.cout), ix(g.rows())).transpose() * dym;
      col2im_add(g, dcol.data(), tp.grad(par[0]).ptr());
    }
  });
  return act == Activation::relu ? relu(y) : y;
}

Var batch_norm(Var x, Var gamma, Var beta, BatchNormState& state, Mode mode) {
  const Tensor& xv = x.value();
  require_rank(xv, 4, "batch_norm input");
  const std::size_t N = xv.dim(0), C = xv.dim(1), P = xv.dim(2) * xv.dim(3);
  if (state.channels() != C || gamma.value().size() != C || beta.value().size() != C)
    throw ShapeError("batch_norm: input " + shape_str(xv.shape()) + " has " + std::to_string(C) +
                     " channels, state has " + std::to_string(state.channels()));
  const double M = static_cast<double>(N * P);
  const Tensor& gv = gamma.value();
  const Tensor& bv = beta.value();

  // Normalized activations and per-channel inverse std are kept for backward.
  auto xhat = std::make_shared<Tensor>(xv.shape());
  auto inv_std = std::make_shared<std::vector<double>>(C);
  Tensor out(xv.shape());
  for (std::size_t c = 0; c < C; ++c) {
    double mean, var;
    if (mode == Mode::train) {
      double s = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        const double* src = xv.ptr() + (n * C + c) * P;
        for (std::size_t p = 0; p < P; ++p) s += src[p];
      }
      mean = s / M;
      double ss = 0.0;
      for (std::size_t n = 0; n < N; ++n) {
        const double* src = xv.ptr() + (n * C + c) * P;
        for (std::size_t p = 0; p < P; ++p) ss += (src[p] - mean) * (src[p] - mean);
      }
      var = ss / M;
      const double unbiased = M > 1.0 ? ss / (M - 1.0) : var;
      state.running_mean[c] = state.momentum * state.running_mean[c] + (1.0 - state.momentum) * mean;
      state.running_var[c] = state.momentum * state.running_var[c] + (1.0 - state.momentum) * unbiased;
    } else {
      mean = state.running_mean[c];
      var = state.running_var[c];
    }
    const double is = 1.0 / std::sqrt(var + state.epsilon);
    (*inv_std)[c] = is;
    for (std::size_t n = 0; n < N; ++n) {
      const std::size_t off = (n * C + c) * P;
      for (std::size_t p = 0; p < P; ++p) {
        const double h = (xv[off + p] - mean) * is;
        (*xhat)[off + p] = h;
        out[off + p] = gv[c] * h + bv[c];
      }
    }
  }

  Tape& t = x.tape();
  return t.push(std::move(out), {x.id(), gamma.id(), beta.id()},
                [xhat, inv_std, N, C, P, M, mode](Tape& tp, std::size_t self) {
                  const auto& par = tp.parents(self);
                  const Tensor& dy = tp.grad(self);
                  const Tensor& gv = tp.value(par[1]);
                  for (std::size_t c = 0; c < C; ++c) {
                    double sum_dy = 0.0, sum_dy_xhat = 0.0;
                    for (std::size_t n = 0; n < N; ++n) {
                      const std::size_t off = (n * C + c) * P;
                      for (std::size_t p = 0; p < P; ++p) {
                        sum_dy += dy[off + p];
                        sum_dy_xhat += dy[off + p] * (*xhat)[off + p];
                      }
                    }
                    if (tp.needs_grad(par[1])) tp.grad(par[1])[c] += sum_dy_xhat;
                    if (tp.needs_grad(par[2])) tp.grad(par[2])[c] += sum_dy;
                    if (!tp.needs_grad(par[0])) continue;
                    Tensor& dx = tp.grad(par[0]);
                    const double scale = gv[c] * (*inv_std)[c];
                    for (std::size_t n = 0; n < N; ++n) {
                      const std::size_t off = (n * C + c) * P;
                      for (std::size_t p = 0; p < P; ++p) {
                        if (mode == Mode::train)
                          dx[off + p] += scale * (dy[off + p] - sum_dy / M -
                                                  (*xhat)[off + p] * sum_dy_xhat / M);
                        else
                          dx[off + p] += scale * dy[off + p];
                      }
                    }
                  }
                });
}

Var dense(Var x, Var weight, Var bias, Activation act) {
  const Tensor& xv = x.value();
  const Tensor& wv = weight.value();
  require_rank(xv, 2, "dense input");
  require_rank(wv, 2, "dense weight");
  if (wv.dim(1) != xv.dim(1) || bias.value().size() != wv.dim(0))
    throw ShapeError("dense: input " + shape_str(xv.shape()) + " does not match weight " +
                     shape_str(wv.shape()) + " / bias " + shape_str(bias.shape()));
  const std::size_t N = xv.dim(0), in = xv.dim(1), outd = wv.dim(0);
  Tensor out(Shape{N, outd});
  MatMap(out.ptr(), ix(N), ix(outd)).noalias() =
      ConstMatMap(xv.ptr(), ix(N), ix(in)) * ConstMatMap(wv.ptr(), ix(outd), ix(in)).transpose();
  const Tensor& bv = bias.value();
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t o = 0; o < outd; ++o) out[n * outd + o] += bv[o];

  Tape& t = x.tape();
  Var y = t.push(std::move(out), {x.id(), weight.id(), bias.id()},
                 [N, in, outd](Tape& tp, std::size_t self) {
                   const auto& par = tp.parents(self);
                   const Tensor& dy = tp.grad(self);
                   ConstMatMap dym(dy.ptr(), ix(N), ix(outd));
                   if (tp.needs_grad(par[2])) {
                     Tensor& db = tp.grad(par[2]);
                     for (std::size_t n = 0; n < N; ++n)
                       for (std::size_t o = 0; o < outd; ++o) db[o] += dy[n * outd + o];
                   }
                   if (tp.needs_grad(par[1]))
                     MatMap(tp.grad(par[1]).ptr(), ix(outd), ix(in)).noalias() +=
                         dym.transpose() * ConstMatMap(tp.value(par[0]).ptr(), ix(N), ix(in));
                   if (tp.needs_grad(par[0]))
                     MatMap(tp.grad(par[0]).ptr(), ix(N), ix(in)).noalias() +=
                         dym * ConstMatMap(tp.value(par[1]).ptr(), ix(outd), ix(in));
                 });
  return act == Activation::relu ? relu(y) : y;
}

Var add(Var a, Var b) {
  if (a.shape() != b.shape())
    throw ShapeError("add: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += bv[i];
  return a.tape().push(std::move(out), {a.id(), b.id()}, [](Tape& tp, std::size_t self) {
    for (auto p : tp.parents(self)) {
      if (!tp.needs_grad(p)) continue;
      const Tensor& g = tp.grad(self);
      Tensor& d = tp.grad(p);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
    }
  });
}

Var mul(Var a, Var b) {
  if (a.shape() != b.shape())
    throw ShapeError("mul: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  Tensor out = a.value();
  const Tensor& bv = b.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= bv[i];
  return a.tape().push(std::move(out), {a.id(), b.id()}, [](Tape& tp, std::size_t self) {
    const auto pa = tp.parents(self)[0], pb = tp.parents(self)[1];
    const Tensor& g = tp.grad(self);
    if (tp.needs_grad(pa)) {
      Tensor& d = tp.grad(pa);
      const Tensor& other = tp.value(pb);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * other[i];
    }
    if (tp.needs_grad(pb)) {
      Tensor& d = tp.grad(pb);
      const Tensor& other = tp.value(pa);
      for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i] * other[i];
    }
  });
}

Var sum(Var x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return x.tape().push(Tensor(Shape{1}, s), {x.id()}, [](Tape& tp, std::size_t self) {
    const auto src = tp.parents(self)[0];
    if (!tp.needs_grad(src)) return;
    const double g = tp.grad(self)[0];
    Tensor& d = tp.grad(src);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += g;
  });
}

Var concat_channels(std::span<const Var> xs) {
  if (xs.empty()) throw ShapeError("concat_channels: no inputs");
  const Shape& s0 = xs[0].shape();
  if (s0.size() != 4) throw ShapeError("concat_channels: expected rank 4, got " + shape_str(s0));
  if (xs.size() == 1) return xs[0];
  std::size_t C = 0;
  std::vector<std::size_t> ids, chans;
  for (const auto& v : xs) {
    const Shape& s = v.shape();
    if (s.size() != 4 || s[0] != s0[0] || s[2] != s0[2] || s[3] != s0[3])
      throw ShapeError("concat_channels: " + shape_str(s) + " incompatible with " + shape_str(s0));
    C += s[1];
    ids.push_back(v.id());
    chans.push_back(s[1]);
  }
  const std::size_t N = s0[0], P = s0[2] * s0[3];
  Tensor out(Shape{N, C, s0[2], s0[3]});
  for (std::size_t n = 0; n < N; ++n) {
    std::size_t c_off = 0;
    for (std::size_t k = 0; k < xs.size(); ++k) {
      const double* src = xs[k].value().ptr() + n * chans[k] * P;
      std::copy(src, src + chans[k] * P, out.ptr() + (n * C + c_off) * P);
      c_off += chans[k];
    }
  }
  return xs[0].tape().push(std::move(out), ids, [chans, N, C, P](Tape& tp, std::size_t self) {
    const auto& par = tp.parents(self);
    const Tensor& g = tp.grad(self);
    std::size_t c_off = 0;
    for (std::size_t k = 0; k < par.size(); ++k) {
      if (tp.needs_grad(par[k])) {
        Tensor& d = tp.grad(par[k]);
        for (std::size_t n = 0; n < N; ++n) {
          const double* src = g.ptr() + (n * C + c_off) * P;
          double* dst = d.ptr() + n * chans[k] * P;
          for (std::size_t i = 0; i < chans[k] * P; ++i) dst[i] += src[i];
        }
      }
      c_off += chans[k];
    }
  });
}

Var reshape(Var x, Shape shape) {
  Tensor out = x.value().reshaped(std::move(shape));
  return x.tape().push(std::move(out), {x.id()}, [](Tape& tp, std::size_t self) {
    const auto src = tp.parents(self)[0];
    if (!tp.needs_grad(src)) return;
    const Tensor& g = tp.grad(self);
    Tensor& d = tp.grad(src);
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
  });
}

namespace {

std::size_t check_mae_args(const Tensor& pred, const Tensor& target, const std::vector<bool>& mask) {
  if (pred.shape() != target.shape())
    throw ShapeError("masked_mae: pred " + shape_str(pred.shape()) + " vs target " +
                     shape_str(target.shape()));
  if (pred.rank() != 4) throw ShapeError("masked_mae: expected rank 4, got " + shape_str(pred.shape()));
  const std::size_t P = pred.dim(2) * pred.dim(3), planes = pred.dim(0) * pred.dim(1);
  if (mask.size() != P && mask.size() != planes * P)
    throw ShapeError("masked_mae: mask size " + std::to_string(mask.size()) + " does not match grid");
  std::size_t m = 0;
  for (bool b : mask) m += b;
  if (m == 0) throw DataError("masked_mae: empty mask");
  return mask.size() == P ? m * planes : m;
}

}  // namespace

double masked_mae_value(const Tensor& pred, const Tensor& target, const std::vector<bool>& mask) {
  const std::size_t m = check_mae_args(pred, target, mask);
  const std::size_t shared = mask.size() == pred.dim(2) * pred.dim(3) ? mask.size() : pred.size();
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i)
    if (mask[i % shared]) s += std::abs(pred[i] - target[i]);
  return s / static_cast<double>(m);
}

Var masked_mae(Var pred, const Tensor& target, const std::vector<bool>& mask) {
  const Tensor& pv = pred.value();
  const std::size_t m = check_mae_args(pv, target, mask);
  const std::size_t shared = mask.size() == pv.dim(2) * pv.dim(3) ? mask.size() : pv.size();
  const double denom = static_cast<double>(m);
  // sign(pred - target) on masked cells, 0 elsewhere.
  auto sign = std::make_shared<std::vector<double>>(pv.size(), 0.0);
  std::vector<double> residuals;
  residuals.reserve(m);
  double s = 0.0;
  for (std::size_t i = 0; i < pv.size(); ++i) {
    if (!mask[i % shared]) continue;
    const double r = pv[i] - target[i];
    residuals.push_back(r);
    s += std::abs(r);
    (*sign)[i] = static_cast<double>((r > 0) - (r < 0));
  }
  Tape& t = pred.tape();
  t.record_kinks(residuals);
  return t.push(Tensor(Shape{1}, s / denom), {pred.id()}, [sign, denom](Tape& tp, std::size_t self) {
    const auto src = tp.parents(self)[0];
    if (!tp.needs_grad(src)) return;
    const double g = tp.grad(self)[0] / denom;
    Tensor& d = tp.grad(src);
    for (std::size_t i = 0; i < d.size(); ++i) d[i] += g * (*sign)[i];
  });
}

}  // namespace hvfcast::nn
