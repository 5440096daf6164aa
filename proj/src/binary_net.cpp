#include "bifl/binary_net.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace bifl {
namespace {

double sign_pm1(double w) { return w > 0.0 ? 1.0 : -1.0; }

void init_unit_interval(Tensor& t, Rng& rng) {
  for (auto& x : t.v) x = rng.uniform(-0.1, 0.1);
}

size_t batch_of(const Tensor& x) {
  if (x.shape.empty()) throw std::runtime_error("layer input must have a batch dimension");
  return size_t(x.shape[0]);
}

}  // namespace

// ---------------------------------------------------------------- Dense

DenseLayer::DenseLayer(int in_, int out_, bool binarized, Rng& init)
    : in(in_), out(out_), binarized_(binarized), w_bar({out_, in_}), w_bin({out_, in_}),
      g_w({out_, in_}) {
  init_unit_interval(w_bar, init);
  rebinarize();
}

void DenseLayer::rebinarize() {
  for (size_t i = 0; i < w_bar.numel(); ++i) w_bin[i] = sign_pm1(w_bar[i]);
}

Tensor DenseLayer::forward(const Tensor& x, bool, bool binary) {
  size_t b = batch_of(x);
  if (x.numel() != b * size_t(in))
    throw std::runtime_error("dense layer expects " + std::to_string(in) + " features, got " +
                             x.shape_str());
  x_ = x;
  const Tensor& w = (binarized_ && binary) ? w_bin : w_bar;
  pre_ = Tensor({int(b), out});
  for (size_t bi = 0; bi < b; ++bi) {
    const double* xr = &x.v[bi * in];
    double* pr = &pre_.v[bi * out];
    for (int o = 0; o < out; ++o) {
      const double* wr = &w.v[size_t(o) * in];
      double acc = 0.0;
      for (int i = 0; i < in; ++i) acc += wr[i] * xr[i];
      pr[o] = acc;
    }
  }
  Tensor y = pre_;
  for (auto& v : y.v) v *= theta;
  return y;
}

Tensor DenseLayer::backward(const Tensor& g, bool binary, bool need_input_grad) {
  size_t b = batch_of(g);
  const Tensor& w = (binarized_ && binary) ? w_bin : w_bar;
  for (size_t i = 0; i < g.numel(); ++i) g_theta += g.v[i] * pre_.v[i];
  for (size_t bi = 0; bi < b; ++bi) {
    const double* gr = &g.v[bi * out];
    const double* xr = &x_.v[bi * in];
    for (int o = 0; o < out; ++o) {
      double go = theta * gr[o];
      double* dw = &g_w.v[size_t(o) * in];
      for (int i = 0; i < in; ++i) dw[i] += go * xr[i];
    }
  }
  Tensor dx;
  if (need_input_grad) {
    dx = Tensor(x_.shape);
    for (size_t bi = 0; bi < b; ++bi) {
      double* dr = &dx.v[bi * in];
      const double* gr = &g.v[bi * out];
      for (int o = 0; o < out; ++o) {
        double go = theta * gr[o];
        const double* wr = &w.v[size_t(o) * in];
        for (int i = 0; i < in; ++i) dr[i] += go * wr[i];
      }
    }
  }
  return dx;
}

void DenseLayer::collect_params(std::vector<ParamView>& outp, const std::string& prefix) {
  outp.push_back({prefix + ".w", w_bar.v.data(), g_w.v.data(), w_bar.numel(), binarized_});
  outp.push_back({prefix + ".theta", &theta, &g_theta, 1, false});
}

void DenseLayer::set_binarized(bool b) {
  binarized_ = b;
  if (b) rebinarize();
}

// ---------------------------------------------------------------- Conv2d

Conv2dLayer::Conv2dLayer(int in_c_, int out_c_, int k_, bool binarized, Rng& init)
    : in_c(in_c_), out_c(out_c_), k(k_), binarized_(binarized),
      w_bar({out_c_, in_c_, k_, k_}), w_bin({out_c_, in_c_, k_, k_}),
      g_w({out_c_, in_c_, k_, k_}) {
  init_unit_interval(w_bar, init);
  rebinarize();
}

void Conv2dLayer::rebinarize() {
  for (size_t i = 0; i < w_bar.numel(); ++i) w_bin[i] = sign_pm1(w_bar[i]);
}

Tensor Conv2dLayer::forward(const Tensor& x, bool, bool binary) {
  if (x.shape.size() != 4 || x.shape[1] != in_c)
    throw std::runtime_error("conv layer expects {batch," + std::to_string(in_c) +
                             ",h,w}, got " + x.shape_str());
  int b = x.shape[0], h = x.shape[2], w = x.shape[3];
  int ho = h - k + 1, wo = w - k + 1;
  if (ho < 1 || wo < 1) throw std::runtime_error("conv kernel larger than input " + x.shape_str());
  x_ = x;
  const Tensor& wt = (binarized_ && binary) ? w_bin : w_bar;
  pre_ = Tensor({b, out_c, ho, wo});
  auto xat = [&](int bi, int c, int y, int xx) {
    return x.v[((size_t(bi) * in_c + c) * h + y) * w + xx];
  };
  for (int bi = 0; bi < b; ++bi)
    for (int o = 0; o < out_c; ++o)
      for (int y = 0; y < ho; ++y)
        for (int xx = 0; xx < wo; ++xx) {
          double acc = 0.0;
          for (int c = 0; c < in_c; ++c)
            for (int i = 0; i < k; ++i)
              for (int j = 0; j < k; ++j)
                acc += wt.v[((size_t(o) * in_c + c) * k + i) * k + j] * xat(bi, c, y + i, xx + j);
          pre_.v[((size_t(bi) * out_c + o) * ho + y) * wo + xx] = acc;
        }
  Tensor y = pre_;
  for (auto& v : y.v) v *= theta;
  return y;
}

Tensor Conv2dLayer::backward(const Tensor& g, bool binary, bool need_input_grad) {
  int b = x_.shape[0], h = x_.shape[2], w = x_.shape[3];
  int ho = h - k + 1, wo = w - k + 1;
  const Tensor& wt = (binarized_ && binary) ? w_bin : w_bar;
  for (size_t i = 0; i < g.numel(); ++i) g_theta += g.v[i] * pre_.v[i];
  auto gat = [&](int bi, int o, int y, int xx) {
    return g.v[((size_t(bi) * out_c + o) * ho + y) * wo + xx];
  };
  auto xat = [&](int bi, int c, int y, int xx) {
    return x_.v[((size_t(bi) * in_c + c) * h + y) * w + xx];
  };
  for (int bi = 0; bi < b; ++bi)
    for (int o = 0; o < out_c; ++o)
      for (int y = 0; y < ho; ++y)
        for (int xx = 0; xx < wo; ++xx) {
          double go = theta * gat(bi, o, y, xx);
          for (int c = 0; c < in_c; ++c)
            for (int i = 0; i < k; ++i)
              for (int j = 0; j < k; ++j)
                g_w.v[((size_t(o) * in_c + c) * k + i) * k + j] += go * xat(bi, c, y + i, xx + j);
        }
  Tensor dx;
  if (need_input_grad) {
    dx = Tensor(x_.shape);
    for (int bi = 0; bi < b; ++bi)
      for (int o = 0; o < out_c; ++o)
        for (int y = 0; y < ho; ++y)
          for (int xx = 0; xx < wo; ++xx) {
            double go = theta * gat(bi, o, y, xx);
            for (int c = 0; c < in_c; ++c)
              for (int i = 0; i < k; ++i)
                for (int j = 0; j < k; ++j)
                  dx.v[((size_t(bi) * in_c + c) * h + (y + i)) * w + (xx + j)] +=
                      go * wt.v[((size_t(o) * in_c + c) * k + i) * k + j];
          }
  }
  return dx;
}

void Conv2dLayer::collect_params(std::vector<ParamView>& outp, const std::string& prefix) {
  outp.push_back({prefix + ".w", w_bar.v.data(), g_w.v.data(), w_bar.numel(), binarized_});
  outp.push_back({prefix + ".theta", &theta, &g_theta, 1, false});
}

void Conv2dLayer::set_binarized(bool b) {
  binarized_ = b;
  if (b) rebinarize();
}

// ---------------------------------------------------------------- BatchNorm

BatchNormLayer::BatchNormLayer(int features_)
    : features(features_), gamma({features_}), beta({features_}), run_mean({features_}),
      run_var({features_}), g_gamma({features_}), g_beta({features_}) {
  gamma.fill(1.0);
  run_var.fill(1.0);
}

Tensor BatchNormLayer::forward(const Tensor& x, bool train, bool) {
  if (x.shape.size() < 2 || x.shape[1] != features)
    throw std::runtime_error("batchnorm expects " + std::to_string(features) +
                             " features on axis 1, got " + x.shape_str());
  int b = x.shape[0];
  spatial_ = int(x.numel() / (size_t(b) * features));
  size_t n = size_t(b) * spatial_;

  xhat_ = Tensor(x.shape);
  inv_std_ = Tensor({features});
  Tensor mean({features});
  auto idx = [&](int bi, int c, int s) { return (size_t(bi) * features + c) * spatial_ + s; };

  if (train) {
    Tensor var({features});
    for (int c = 0; c < features; ++c) {
      double s = 0.0;
      for (int bi = 0; bi < b; ++bi)
        for (int sp = 0; sp < spatial_; ++sp) s += x.v[idx(bi, c, sp)];
      mean[c] = s / double(n);
      double s2 = 0.0;
      for (int bi = 0; bi < b; ++bi)
        for (int sp = 0; sp < spatial_; ++sp) {
          double d = x.v[idx(bi, c, sp)] - mean[c];
          s2 += d * d;
        }
      var[c] = s2 / double(n);
      run_mean[c] = (1.0 - momentum) * run_mean[c] + momentum * mean[c];
      run_var[c] = (1.0 - momentum) * run_var[c] + momentum * var[c];
      inv_std_[c] = 1.0 / std::sqrt(var[c] + eps);
    }
  } else {
    for (int c = 0; c < features; ++c) {
      mean[c] = run_mean[c];
      inv_std_[c] = 1.0 / std::sqrt(run_var[c] + eps);
    }
  }
  train_mode_ = train;

  Tensor y(x.shape);
  for (int bi = 0; bi < b; ++bi)
    for (int c = 0; c < features; ++c)
      for (int sp = 0; sp < spatial_; ++sp) {
        size_t i = idx(bi, c, sp);
        xhat_[i] = (x.v[i] - mean[c]) * inv_std_[c];
        y.v[i] = gamma[c] * xhat_[i] + beta[c];
      }
  return y;
}

Tensor BatchNormLayer::backward(const Tensor& g, bool, bool need_input_grad) {
  int b = g.shape[0];
  size_t n = size_t(b) * spatial_;
  auto idx = [&](int bi, int c, int s) { return (size_t(bi) * features + c) * spatial_ + s; };

  Tensor dx;
  if (need_input_grad) dx = Tensor(g.shape);
  for (int c = 0; c < features; ++c) {
    double sum_g = 0.0, sum_gx = 0.0;
    for (int bi = 0; bi < b; ++bi)
      for (int sp = 0; sp < spatial_; ++sp) {
        size_t i = idx(bi, c, sp);
        sum_g += g.v[i];
        sum_gx += g.v[i] * xhat_[i];
      }
    g_beta[c] += sum_g;
    g_gamma[c] += sum_gx;
    if (need_input_grad) {
      double k = gamma[c] * inv_std_[c];
      if (train_mode_) {
        double mg = sum_g / double(n), mgx = sum_gx / double(n);
        for (int bi = 0; bi < b; ++bi)
          for (int sp = 0; sp < spatial_; ++sp) {
            size_t i = idx(bi, c, sp);
            dx.v[i] = k * (g.v[i] - mg - xhat_[i] * mgx);
          }
      } else {
        for (int bi = 0; bi < b; ++bi)
          for (int sp = 0; sp < spatial_; ++sp) {
            size_t i = idx(bi, c, sp);
            dx.v[i] = k * g.v[i];
          }
      }
    }
  }
  return dx;
}

void BatchNormLayer::collect_params(std::vector<ParamView>& outp, const std::string& prefix) {
  outp.push_back({prefix + ".gamma", gamma.v.data(), g_gamma.v.data(), gamma.numel(), false});
  outp.push_back({prefix + ".beta", beta.v.data(), g_beta.v.data(), beta.numel(), false});
}

// ---------------------------------------------------------------- Tanh / Softmax / Pool

Tensor TanhLayer::forward(const Tensor& x, bool, bool) {
  y_ = x;
  for (auto& v : y_.v) v = std::tanh(v);
  return y_;
}

Tensor TanhLayer::backward(const Tensor& g, bool, bool) {
  Tensor dx(g.shape);
  for (size_t i = 0; i < g.numel(); ++i) dx.v[i] = g.v[i] * (1.0 - y_[i] * y_[i]);
  return dx;
}

Tensor SoftmaxLayer::forward(const Tensor& x, bool, bool) {
  if (x.shape.size() != 2) throw std::runtime_error("softmax expects {batch, classes}");
  int b = x.shape[0], kk = x.shape[1];
  y_ = Tensor(x.shape);
  for (int bi = 0; bi < b; ++bi) {
    const double* xr = &x.v[size_t(bi) * kk];
    double* yr = &y_.v[size_t(bi) * kk];
    double mx = xr[0];
    for (int i = 1; i < kk; ++i) mx = std::max(mx, xr[i]);
    double s = 0.0;
    for (int i = 0; i < kk; ++i) {
      yr[i] = std::exp(xr[i] - mx);
      s += yr[i];
    }
    for (int i = 0; i < kk; ++i) yr[i] /= s;
  }
  return y_;
}

Tensor SoftmaxLayer::backward(const Tensor& g, bool, bool) {
  int b = g.shape[0], kk = g.shape[1];
  Tensor dx(g.shape);
  for (int bi = 0; bi < b; ++bi) {
    const double* gr = &g.v[size_t(bi) * kk];
    const double* yr = &y_.v[size_t(bi) * kk];
    double dot = 0.0;
    for (int i = 0; i < kk; ++i) dot += gr[i] * yr[i];
    double* dr = &dx.v[size_t(bi) * kk];
    for (int i = 0; i < kk; ++i) dr[i] = yr[i] * (gr[i] - dot);
  }
  return dx;
}

Tensor PoolDown2Layer::forward(const Tensor& x, bool, bool) {
  if (x.shape.size() != 4) throw std::runtime_error("pool expects {batch, c, h, w}");
  int b = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3];
  if (h % 2 || w % 2)
    throw std::runtime_error("pool-down2 needs even spatial dims, got " + x.shape_str());
  in_shape_ = x.shape;
  Tensor y({b, c, h / 2, w / 2});
  for (int bi = 0; bi < b; ++bi)
    for (int ci = 0; ci < c; ++ci)
      for (int yy = 0; yy < h / 2; ++yy)
        for (int xx = 0; xx < w / 2; ++xx) {
          auto at = [&](int dy, int dx2) {
            return x.v[((size_t(bi) * c + ci) * h + 2 * yy + dy) * w + 2 * xx + dx2];
          };
          y.v[((size_t(bi) * c + ci) * (h / 2) + yy) * (w / 2) + xx] =
              0.25 * (at(0, 0) + at(0, 1) + at(1, 0) + at(1, 1));
        }
  return y;
}

Tensor PoolDown2Layer::backward(const Tensor& g, bool, bool) {
  int b = in_shape_[0], c = in_shape_[1], h = in_shape_[2], w = in_shape_[3];
  Tensor dx(in_shape_);
  for (int bi = 0; bi < b; ++bi)
    for (int ci = 0; ci < c; ++ci)
      for (int yy = 0; yy < h / 2; ++yy)
        for (int xx = 0; xx < w / 2; ++xx) {
          double gv = 0.25 * g.v[((size_t(bi) * c + ci) * (h / 2) + yy) * (w / 2) + xx];
          for (int dy = 0; dy < 2; ++dy)
            for (int dx2 = 0; dx2 < 2; ++dx2)
              dx.v[((size_t(bi) * c + ci) * h + 2 * yy + dy) * w + 2 * xx + dx2] = gv;
        }
  return dx;
}

// ---------------------------------------------------------------- Model

Model::Model(const Model& o) {
  layers.reserve(o.layers.size());
  for (const auto& l : o.layers) layers.push_back(l->clone());
}

Model& Model::operator=(const Model& o) {
  if (this != &o) {
    layers.clear();
    layers.reserve(o.layers.size());
    for (const auto& l : o.layers) layers.push_back(l->clone());
  }
  return *this;
}

Tensor Model::forward(const Tensor& x, bool train, bool binary) {
  Tensor a = x;
  for (auto& l : layers) a = l->forward(a, train, binary);
  return a;
}

void Model::backward(const Tensor& dout, bool binary) {
  Tensor g = dout;
  for (size_t i = layers.size(); i-- > 0;) g = layers[i]->backward(g, binary, i > 0);
}

void Model::zero_grads() {
  for (auto& p : params())
    for (size_t i = 0; i < p.n; ++i) p.grad[i] = 0.0;
}

std::vector<ParamView> Model::params() {
  std::vector<ParamView> out;
  for (size_t i = 0; i < layers.size(); ++i)
    layers[i]->collect_params(out, "layer" + std::to_string(i));
  return out;
}

void Model::rebinarize() {
  for (auto& l : layers) l->rebinarize();
}

void Model::set_binarized(bool b) {
  for (auto& l : layers) l->set_binarized(b);
}

size_t Model::weight_count_total() const {
  size_t n = 0;
  for (const auto& l : layers) n += l->weight_count();
  return n;
}

int Model::scale_layer_count() const {
  int n = 0;
  for (const auto& l : layers)
    if (l->kind() == LayerKind::Dense || l->kind() == LayerKind::Conv2d) ++n;
  return n;
}

Model Model::desk(Rng& init, bool binarized) {
  Model m;
  m.layers.push_back(std::make_unique<DenseLayer>(784, 64, binarized, init));
  m.layers.push_back(std::make_unique<BatchNormLayer>(64));
  m.layers.push_back(std::make_unique<TanhLayer>());
  m.layers.push_back(std::make_unique<DenseLayer>(64, 10, binarized, init));
  m.layers.push_back(std::make_unique<SoftmaxLayer>());
  return m;
}

Model Model::conv_small(int image, int in_c, int conv_c, int classes, Rng& init, bool binarized) {
  int after_conv = image - 2;  // k = 3, valid padding
  if (after_conv % 2) throw std::runtime_error("conv_small needs (image - 2) even");
  int flat = conv_c * (after_conv / 2) * (after_conv / 2);
  Model m;
  m.layers.push_back(std::make_unique<Conv2dLayer>(in_c, conv_c, 3, binarized, init));
  m.layers.push_back(std::make_unique<BatchNormLayer>(conv_c));
  m.layers.push_back(std::make_unique<TanhLayer>());
  m.layers.push_back(std::make_unique<PoolDown2Layer>());
  m.layers.push_back(std::make_unique<DenseLayer>(flat, classes, binarized, init));
  m.layers.push_back(std::make_unique<SoftmaxLayer>());
  return m;
}

// ---------------------------------------------------------------- loss / eval

double cross_entropy(const Tensor& prob, const std::vector<int>& labels) {
  int b = prob.shape[0], k = prob.shape[1];
  if (labels.size() != size_t(b)) throw std::runtime_error("label count mismatch");
  double s = 0.0;
  for (int bi = 0; bi < b; ++bi) {
    int y = labels[bi];
    if (y < 0 || y >= k) throw std::runtime_error("label out of range");
    s -= std::log(prob.at(bi, y));
  }
  return s / b;
}

Tensor cross_entropy_grad(const Tensor& prob, const std::vector<int>& labels) {
  int b = prob.shape[0];
  Tensor g(prob.shape);
  for (int bi = 0; bi < b; ++bi) g.at(bi, labels[bi]) = -1.0 / (b * prob.at(bi, labels[bi]));
  return g;
}

double accuracy_percent(const Tensor& prob, const std::vector<int>& labels) {
  int b = prob.shape[0], k = prob.shape[1];
  int correct = 0;
  for (int bi = 0; bi < b; ++bi) {
    int arg = 0;
    for (int i = 1; i < k; ++i)
      if (prob.at(bi, i) > prob.at(bi, arg)) arg = i;
    if (arg == labels[bi]) ++correct;
  }
  return 100.0 * correct / b;
}

// ---------------------------------------------------------------- optimizers

namespace {

void clip_and_rebinarize(Model& m, const std::vector<ParamView>& views) {
  for (const auto& p : views)
    if (p.clip_unit)
      for (size_t i = 0; i < p.n; ++i) p.data[i] = std::clamp(p.data[i], -1.0, 1.0);
  m.rebinarize();
}

}  // namespace

void Sgd::step(Model& m, double lr) {
  auto views = m.params();
  for (auto& p : views)
    for (size_t i = 0; i < p.n; ++i) p.data[i] -= lr * p.grad[i];
  clip_and_rebinarize(m, views);
}

void Adam::step(Model& m, double lr) {
  auto views = m.params();
  if (m_.empty()) {
    m_.resize(views.size());
    v_.resize(views.size());
    for (size_t s = 0; s < views.size(); ++s) {
      m_[s].assign(views[s].n, 0.0);
      v_[s].assign(views[s].n, 0.0);
    }
  }
  if (m_.size() != views.size()) throw std::runtime_error("optimizer bound to another model");
  ++t_;
  double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
  double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
  for (size_t s = 0; s < views.size(); ++s) {
    auto& p = views[s];
    if (m_[s].size() != p.n) throw std::runtime_error("optimizer bound to another model");
    for (size_t i = 0; i < p.n; ++i) {
      double g = p.grad[i];
      m_[s][i] = cfg_.beta1 * m_[s][i] + (1.0 - cfg_.beta1) * g;
      v_[s][i] = cfg_.beta2 * v_[s][i] + (1.0 - cfg_.beta2) * g * g;
      p.data[i] -= lr * (m_[s][i] / bc1) / (std::sqrt(v_[s][i] / bc2) + cfg_.eps);
    }
  }
  clip_and_rebinarize(m, views);
}

TrainStats train_batch(Model& m, Optimizer& opt, const Tensor& x, const std::vector<int>& y,
                       double lr, bool binary) {
  m.zero_grads();
  Tensor p = m.forward(x, true, binary);
  TrainStats st;
  st.loss = cross_entropy(p, y);
  st.correct = int(std::lround(accuracy_percent(p, y) * p.shape[0] / 100.0));
  m.backward(cross_entropy_grad(p, y), binary);
  opt.step(m, lr);
  return st;
}

EvalResult evaluate(Model& m, const Tensor& x, const std::vector<int>& y, int batch, bool binary) {
  int n = x.shape[0];
  size_t row = x.numel() / size_t(n);
  EvalResult r;
  int correct = 0;
  for (int start = 0; start < n; start += batch) {
    int b = std::min(batch, n - start);
    std::vector<int> sh = x.shape;
    sh[0] = b;
    Tensor chunk(sh);
    std::copy_n(&x.v[size_t(start) * row], size_t(b) * row, chunk.v.begin());
    std::vector<int> yl(y.begin() + start, y.begin() + start + b);
    Tensor p = m.forward(chunk, false, binary);
    r.loss += cross_entropy(p, yl) * b;
    correct += int(std::lround(accuracy_percent(p, yl) * b / 100.0));
  }
  r.loss /= n;
  r.accuracy = 100.0 * correct / n;
  return r;
}

// ---------------------------------------------------------------- checkpoint

namespace {

constexpr char kMagic[4] = {'B', 'N', 'C', 'K'};
constexpr uint32_t kVersion = 1;

template <typename T>
void put(std::ofstream& f, const T& v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::ifstream& f, const char* what) {
  T v;
  f.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!f) throw std::runtime_error(std::string("checkpoint truncated while reading ") + what);
  return v;
}

void put_f32(std::ofstream& f, const Tensor& t) {
  for (double d : t.v) put(f, float(d));
}

void get_f32(std::ifstream& f, Tensor& t, const char* what) {
  for (auto& d : t.v) d = double(get<float>(f, what));
}

void put_bits(std::ofstream& f, const Tensor& t) {
  uint8_t byte = 0;
  int fill = 0;
  for (double d : t.v) {
    if (d > 0) byte |= uint8_t(1u << fill);
    if (++fill == 8) {
      put(f, byte);
      byte = 0;
      fill = 0;
    }
  }
  if (fill) put(f, byte);
}

void get_bits(std::ifstream& f, Tensor& t, const char* what) {
  uint8_t byte = 0;
  int fill = 8;
  for (auto& d : t.v) {
    if (fill == 8) {
      byte = get<uint8_t>(f, what);
      fill = 0;
    }
    d = (byte >> fill) & 1 ? 1.0 : -1.0;
    ++fill;
  }
}

}  // namespace

void save_checkpoint(const std::string& path, const Model& m, const Rng& rng) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint for writing: " + path);
  f.write(kMagic, 4);
  put(f, kVersion);
  put(f, uint32_t(m.layers.size()));
  for (const auto& lp : m.layers) {
    put(f, uint8_t(lp->kind()));
    put(f, uint8_t(lp->binarized() ? 1 : 0));
    switch (lp->kind()) {
      case LayerKind::Dense: {
        auto* l = static_cast<const DenseLayer*>(lp.get());
        put(f, int32_t(l->in));
        put(f, int32_t(l->out));
        put_f32(f, l->w_bar);
        put_bits(f, l->w_bin);
        put(f, float(l->theta));
        break;
      }
      case LayerKind::Conv2d: {
        auto* l = static_cast<const Conv2dLayer*>(lp.get());
        put(f, int32_t(l->in_c));
        put(f, int32_t(l->out_c));
        put(f, int32_t(l->k));
        put_f32(f, l->w_bar);
        put_bits(f, l->w_bin);
        put(f, float(l->theta));
        break;
      }
      case LayerKind::BatchNorm: {
        auto* l = static_cast<const BatchNormLayer*>(lp.get());
        put(f, int32_t(l->features));
        put_f32(f, l->gamma);
        put_f32(f, l->beta);
        put_f32(f, l->run_mean);
        put_f32(f, l->run_var);
        break;
      }
      default:
        break;
    }
  }
  for (uint64_t w : rng.state()) put(f, w);
  if (!f) throw std::runtime_error("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint: " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("not a checkpoint file (bad magic): " + path);
  uint32_t version = get<uint32_t>(f, "version");
  if (version != kVersion)
    throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
  uint32_t count = get<uint32_t>(f, "layer count");

  Checkpoint ck;
  Rng scratch(0);
  for (uint32_t li = 0; li < count; ++li) {
    auto kind = LayerKind(get<uint8_t>(f, "layer kind"));
    bool binarized = get<uint8_t>(f, "binarized flag") != 0;
    switch (kind) {
      case LayerKind::Dense: {
        int in = get<int32_t>(f, "dense in");
        int out = get<int32_t>(f, "dense out");
        auto l = std::make_unique<DenseLayer>(in, out, binarized, scratch);
        get_f32(f, l->w_bar, "dense weights");
        get_bits(f, l->w_bin, "dense binary weights");
        l->theta = double(get<float>(f, "dense theta"));
        ck.model.layers.push_back(std::move(l));
        break;
      }
      case LayerKind::Conv2d: {
        int in_c = get<int32_t>(f, "conv in channels");
        int out_c = get<int32_t>(f, "conv out channels");
        int k = get<int32_t>(f, "conv kernel");
        auto l = std::make_unique<Conv2dLayer>(in_c, out_c, k, binarized, scratch);
        get_f32(f, l->w_bar, "conv weights");
        get_bits(f, l->w_bin, "conv binary weights");
        l->theta = double(get<float>(f, "conv theta"));
        ck.model.layers.push_back(std::move(l));
        break;
      }
      case LayerKind::BatchNorm: {
        int features = get<int32_t>(f, "batchnorm features");
        auto l = std::make_unique<BatchNormLayer>(features);
        get_f32(f, l->gamma, "batchnorm gamma");
        get_f32(f, l->beta, "batchnorm beta");
        get_f32(f, l->run_mean, "batchnorm mean");
        get_f32(f, l->run_var, "batchnorm var");
        ck.model.layers.push_back(std::move(l));
        break;
      }
      case LayerKind::Tanh:
        ck.model.layers.push_back(std::make_unique<TanhLayer>());
        break;
      case LayerKind::Softmax:
        ck.model.layers.push_back(std::make_unique<SoftmaxLayer>());
        break;
      case LayerKind::PoolDown2:
        ck.model.layers.push_back(std::make_unique<PoolDown2Layer>());
        break;
      default:
        throw std::runtime_error("unknown layer kind in checkpoint");
    }
  }
  std::array<uint64_t, 4> st{};
  for (auto& w : st) w = get<uint64_t>(f, "rng state");
  ck.rng.set_state(st);
  return ck;
}

}  // namespace bifl
