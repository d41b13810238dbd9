#include "pmpc/mlp.hpp"

#include <cmath>

#include "pmpc/rng.hpp"

namespace pmpc {

std::string to_string(Activation a) {
  return a == Activation::tanh_fn ? "tanh" : "sigmoid";
}

Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::tanh_fn;
  if (s == "sigmoid") return Activation::sigmoid_fn;
  throw UsageError("unknown activation '" + s + "'");
}

NetConfig NetConfig::mlp(int d_x, int d_u, const std::vector<int>& hidden) {
  NetConfig c;
  c.layer_sizes.push_back(d_x + d_u);
  for (int h : hidden) c.layer_sizes.push_back(h);
  c.layer_sizes.push_back(d_x);
  c.validate();
  return c;
}

void NetConfig::validate() const {
  if (layer_sizes.size() < 2) throw UsageError("NetConfig: need at least input and output sizes");
  for (int s : layer_sizes)
    if (s < 1) throw UsageError("NetConfig: layer sizes must be positive");
}

MlpLayout::MlpLayout(const NetConfig& config) {
  config.validate();
  const int n = config.n_affine();
  layers.resize(n);
  int offset = 0;
  for (int l = 0; l < n; ++l) {
    layers[l].rows = config.layer_sizes[l + 1];
    layers[l].cols = config.layer_sizes[l];
    layers[l].w_offset = offset;
    offset += layers[l].rows * layers[l].cols;
    const bool has_bias = (l + 1 < n) || config.output_bias;
    if (has_bias) {
      layers[l].b_offset = offset;
      offset += layers[l].rows;
    }
  }
  total = offset;
}

int count_params(const NetConfig& config) { return MlpLayout(config).total; }

namespace {

using ConstMap = Eigen::Map<const MatrixXd>;
using ConstVecMap = Eigen::Map<const VectorXd>;

inline void apply_activation(Activation a, MatrixXd& m) {
  if (a == Activation::tanh_fn)
    m = m.array().tanh();
  else
    m = (1.0 + (-m.array()).exp()).inverse();
}

inline void apply_activation(Activation a, VectorXd& v) {
  if (a == Activation::tanh_fn)
    v = v.array().tanh();
  else
    v = (1.0 + (-v.array()).exp()).inverse();
}

void forward_core(const NetConfig& config, const MlpLayout& layout, const VectorXd& theta,
                  const VectorXd& z, Eigen::Ref<VectorXd> out, MlpScratch& scratch) {
  const int n = config.n_affine();
  scratch.act.resize(size_t(n));
  const VectorXd* cur = &z;
  for (int l = 0; l < n; ++l) {
    const auto& ly = layout.layers[l];
    ConstMap w(theta.data() + ly.w_offset, ly.rows, ly.cols);
    VectorXd& target = scratch.act[size_t(l)];
    target.resize(ly.rows);
    target.noalias() = w * (*cur);
    if (ly.b_offset >= 0) target += ConstVecMap(theta.data() + ly.b_offset, ly.rows);
    if (l + 1 < n) apply_activation(config.activation, target);
    cur = &target;
  }
  out = *cur;
}

}  // namespace

void mlp_forward_into(const NetConfig& config, const VectorXd& theta, const VectorXd& z,
                      Eigen::Ref<VectorXd> out, MlpScratch& scratch) {
  const MlpLayout layout(config);
  if (theta.size() != layout.total) throw UsageError("mlp_forward: parameter size mismatch");
  if (z.size() != config.input_dim()) throw UsageError("mlp_forward: input size mismatch");
  forward_core(config, layout, theta, z, out, scratch);
}

namespace {

void forward_and_jacobian_core(const NetConfig& config, const MlpLayout& layout,
                               const VectorXd& theta, const VectorXd& z, Eigen::Ref<VectorXd> f,
                               Eigen::Ref<MatrixXd> jac, MlpScratch& scratch) {
  const int n = config.n_affine();
  forward_core(config, layout, theta, z, f, scratch);

  // forward accumulation of d f / d z through the layers
  const auto& first = layout.layers[0];
  scratch.jac_a = ConstMap(theta.data() + first.w_offset, first.rows, first.cols);
  for (int l = 1; l < n; ++l) {
    const auto& ly = layout.layers[l];
    ConstMap w(theta.data() + ly.w_offset, ly.rows, ly.cols);
    const VectorXd& post = scratch.act[size_t(l - 1)];
    if (config.activation == Activation::tanh_fn)
      scratch.jac_a.array().colwise() *= (1.0 - post.array().square());
    else
      scratch.jac_a.array().colwise() *= post.array() * (1.0 - post.array());
    scratch.jac_b.noalias() = w * scratch.jac_a;
    scratch.jac_a.swap(scratch.jac_b);
  }
  jac = scratch.jac_a;
}

}  // namespace

void mlp_forward_and_jacobian(const NetConfig& config, const VectorXd& theta, const VectorXd& z,
                              Eigen::Ref<VectorXd> f, Eigen::Ref<MatrixXd> jac,
                              MlpScratch& scratch) {
  const MlpLayout layout(config);
  if (theta.size() != layout.total) throw UsageError("mlp_forward: parameter size mismatch");
  if (z.size() != config.input_dim()) throw UsageError("mlp_forward: input size mismatch");
  forward_and_jacobian_core(config, layout, theta, z, f, jac, scratch);
}

VectorXd mlp_forward(const NetConfig& config, const VectorXd& theta, const VectorXd& x,
                     const VectorXd& u) {
  VectorXd z(x.size() + u.size());
  z << x, u;
  VectorXd out(config.output_dim());
  MlpScratch scratch;
  mlp_forward_into(config, theta, z, out, scratch);
  return out;
}

MatrixXd mlp_jac_x(const NetConfig& config, const VectorXd& theta, const VectorXd& x,
                   const VectorXd& u) {
  VectorXd z(x.size() + u.size());
  z << x, u;
  VectorXd f(config.output_dim());
  MatrixXd jac(config.output_dim(), config.input_dim());
  MlpScratch scratch;
  mlp_forward_and_jacobian(config, theta, z, f, jac, scratch);
  return jac.leftCols(x.size());
}

MatrixXd mlp_jac_u(const NetConfig& config, const VectorXd& theta, const VectorXd& x,
                   const VectorXd& u) {
  VectorXd z(x.size() + u.size());
  z << x, u;
  VectorXd f(config.output_dim());
  MatrixXd jac(config.output_dim(), config.input_dim());
  MlpScratch scratch;
  mlp_forward_and_jacobian(config, theta, z, f, jac, scratch);
  return jac.rightCols(u.size());
}

void mlp_forward_batch(const NetConfig& config, const VectorXd& theta, const MatrixXd& Z,
                       MatrixXd& out, MlpBatchCache* cache) {
  const MlpLayout layout(config);
  if (theta.size() != layout.total) throw UsageError("mlp_forward_batch: parameter size mismatch");
  if (Z.rows() != config.input_dim()) throw UsageError("mlp_forward_batch: input size mismatch");
  const int n = config.n_affine();
  if (cache) {
    cache->input = Z;
    cache->post.resize(size_t(n - 1));
  }
  MatrixXd cur = Z;
  for (int l = 0; l < n; ++l) {
    const auto& ly = layout.layers[l];
    ConstMap w(theta.data() + ly.w_offset, ly.rows, ly.cols);
    MatrixXd next;
    next.noalias() = w * cur;
    if (ly.b_offset >= 0)
      next.colwise() += ConstVecMap(theta.data() + ly.b_offset, ly.rows);
    if (l + 1 < n) {
      apply_activation(config.activation, next);
      if (cache) cache->post[size_t(l)] = next;
    }
    cur = std::move(next);
  }
  out = std::move(cur);
}

void mlp_backward_batch(const NetConfig& config, const VectorXd& theta,
                        const MlpBatchCache& cache, const MatrixXd& out_bar,
                        Eigen::Ref<VectorXd> param_grad, MatrixXd* input_bar) {
  const MlpLayout layout(config);
  const int n = config.n_affine();
  MatrixXd delta = out_bar;
  for (int l = n - 1; l >= 0; --l) {
    const auto& ly = layout.layers[l];
    const MatrixXd& below = (l == 0) ? cache.input : cache.post[size_t(l - 1)];
    Eigen::Map<MatrixXd> gw(param_grad.data() + ly.w_offset, ly.rows, ly.cols);
    gw.noalias() += delta * below.transpose();
    if (ly.b_offset >= 0)
      Eigen::Map<VectorXd>(param_grad.data() + ly.b_offset, ly.rows) += delta.rowwise().sum();
    if (l > 0 || input_bar) {
      ConstMap w(theta.data() + ly.w_offset, ly.rows, ly.cols);
      MatrixXd back;
      back.noalias() = w.transpose() * delta;
      if (l > 0) {
        const MatrixXd& post = cache.post[size_t(l - 1)];
        if (config.activation == Activation::tanh_fn)
          delta = back.array() * (1.0 - post.array().square());
        else
          delta = back.array() * post.array() * (1.0 - post.array());
      } else {
        *input_bar = std::move(back);
      }
    }
  }
}

double mlp_param_grad(const NetConfig& config, const VectorXd& theta, const MatrixXd& X,
                      const MatrixXd& U, const MatrixXd& targets, VectorXd& grad) {
  const int batch = int(X.cols());
  if (U.cols() != batch || targets.cols() != batch)
    throw UsageError("mlp_param_grad: batch size mismatch");
  MatrixXd Z(X.rows() + U.rows(), batch);
  Z.topRows(X.rows()) = X;
  Z.bottomRows(U.rows()) = U;
  MlpBatchCache cache;
  MatrixXd out;
  mlp_forward_batch(config, theta, Z, out, &cache);
  MatrixXd residual = out - targets;
  const double loss = 0.5 * residual.squaredNorm() / double(batch);
  grad.setZero(theta.size());
  residual /= double(batch);
  mlp_backward_batch(config, theta, cache, residual, grad, nullptr);
  return loss;
}

VectorXd init_params(const NetConfig& config, std::uint64_t seed) {
  const MlpLayout layout(config);
  VectorXd theta = VectorXd::Zero(layout.total);
  Rng rng(seed);
  for (const auto& ly : layout.layers) {
    const double limit = std::sqrt(6.0 / double(ly.rows + ly.cols));
    for (int i = 0; i < ly.rows * ly.cols; ++i)
      theta[ly.w_offset + i] = rng.uniform(-limit, limit);
    // biases stay zero
  }
  return theta;
}

ModelList Ensemble::as_models() const {
  ModelList models;
  models.reserve(members.size());
  for (const auto& m : members) models.push_back(std::make_shared<MlpModel>(config, m));
  return models;
}

namespace {
struct MlpEvalBuffers {
  MlpScratch scratch;
  VectorXd z, f;
  MatrixXd jac;
};
MlpEvalBuffers& tls_buffers() {
  static thread_local MlpEvalBuffers buf;
  return buf;
}
}  // namespace

MlpModel::MlpModel(NetConfig config, VectorXd theta)
    : config_(std::move(config)), theta_(std::move(theta)), layout_(config_) {
  if (theta_.size() != layout_.total) throw UsageError("MlpModel: parameter size mismatch");
  d_x_ = config_.output_dim();
  d_u_ = config_.input_dim() - d_x_;
  if (d_u_ < 0) throw UsageError("MlpModel: input dim must be at least output dim");
}

void MlpModel::eval_f(const VectorXd& x, const VectorXd& u, double, Eigen::Ref<VectorXd> out) const {
  if (x.size() != d_x_ || u.size() != d_u_) throw UsageError("MlpModel: dimension mismatch");
  auto& b = tls_buffers();
  b.z.resize(d_x_ + d_u_);
  b.z << x, u;
  b.f.resize(d_x_);
  forward_core(config_, layout_, theta_, b.z, b.f, b.scratch);
  out = b.f;
}

void MlpModel::eval_jac_x(const VectorXd& x, const VectorXd& u, double t, Eigen::Ref<MatrixXd> out) const {
  VectorXd f(d_x_);
  MatrixXd jx(d_x_, d_x_), ju(d_x_, d_u_);
  eval_with_jacobians(x, u, t, f, jx, ju);
  out = jx;
}

void MlpModel::eval_jac_u(const VectorXd& x, const VectorXd& u, double t, Eigen::Ref<MatrixXd> out) const {
  VectorXd f(d_x_);
  MatrixXd jx(d_x_, d_x_), ju(d_x_, d_u_);
  eval_with_jacobians(x, u, t, f, jx, ju);
  out = ju;
}

void MlpModel::eval_with_jacobians(const VectorXd& x, const VectorXd& u, double,
                                   Eigen::Ref<VectorXd> f, Eigen::Ref<MatrixXd> jx,
                                   Eigen::Ref<MatrixXd> ju) const {
  if (x.size() != d_x_ || u.size() != d_u_) throw UsageError("MlpModel: dimension mismatch");
  auto& b = tls_buffers();
  b.z.resize(d_x_ + d_u_);
  b.z << x, u;
  const MlpLayout& layout = layout_;
  forward_core(config_, layout, theta_, b.z, f, b.scratch);

  const int n = config_.n_affine();
  const auto& first = layout.layers[0];
  b.scratch.jac_a = Eigen::Map<const MatrixXd>(theta_.data() + first.w_offset, first.rows, first.cols);
  for (int l = 1; l < n; ++l) {
    const auto& ly = layout.layers[l];
    Eigen::Map<const MatrixXd> w(theta_.data() + ly.w_offset, ly.rows, ly.cols);
    const VectorXd& post = b.scratch.act[size_t(l - 1)];
    if (config_.activation == Activation::tanh_fn)
      b.scratch.jac_a.array().colwise() *= (1.0 - post.array().square());
    else
      b.scratch.jac_a.array().colwise() *= post.array() * (1.0 - post.array());
    b.scratch.jac_b.noalias() = w * b.scratch.jac_a;
    b.scratch.jac_a.swap(b.scratch.jac_b);
  }
  jx = b.scratch.jac_a.leftCols(d_x_);
  ju = b.scratch.jac_a.rightCols(d_u_);
}

}  // namespace pmpc
