#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <string>
#include <vector>

#include "pmpc/common.hpp"
#include "pmpc/systems.hpp"

namespace pmpc {

enum class Activation { tanh_fn, sigmoid_fn };

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

/// Fixed feed-forward architecture on the concatenated input (x, u).
/// Hidden layers carry biases, the output layer does not (unless
/// output_bias is set); this is the convention behind the parameter
/// counts 1248 and 1376 for the benchmark systems.
struct NetConfig {
  std::vector<int> layer_sizes;  // [d_x + d_u, hidden..., d_x]
  Activation activation = Activation::tanh_fn;
  bool output_bias = false;

  static NetConfig mlp(int d_x, int d_u, const std::vector<int>& hidden = {32, 32});

  int input_dim() const { return layer_sizes.front(); }
  int output_dim() const { return layer_sizes.back(); }
  int n_affine() const { return int(layer_sizes.size()) - 1; }
  void validate() const;
};

int count_params(const NetConfig& config);

/// Offsets of the per-layer weight/bias blocks inside the flat vector.
struct MlpLayout {
  struct Layer {
    int w_offset = 0, rows = 0, cols = 0;
    int b_offset = -1;  // -1: no bias
  };
  std::vector<Layer> layers;
  int total = 0;

  explicit MlpLayout(const NetConfig& config);
};

/// Reusable buffers for single-sample evaluation.
struct MlpScratch {
  std::vector<VectorXd> act;  // act[0] = input, act[l] = hidden activations
  MatrixXd jac_a, jac_b;
  VectorXd z;
};

void mlp_forward_into(const NetConfig& config, const VectorXd& theta, const VectorXd& z,
                      Eigen::Ref<VectorXd> out, MlpScratch& scratch);

/// Value and full Jacobian d f / d z in one pass.
void mlp_forward_and_jacobian(const NetConfig& config, const VectorXd& theta, const VectorXd& z,
                              Eigen::Ref<VectorXd> f, Eigen::Ref<MatrixXd> jac,
                              MlpScratch& scratch);

VectorXd mlp_forward(const NetConfig& config, const VectorXd& theta, const VectorXd& x,
                     const VectorXd& u);
MatrixXd mlp_jac_x(const NetConfig& config, const VectorXd& theta, const VectorXd& x,
                   const VectorXd& u);
MatrixXd mlp_jac_u(const NetConfig& config, const VectorXd& theta, const VectorXd& x,
                   const VectorXd& u);

/// Batched evaluation, one sample per column.
struct MlpBatchCache {
  MatrixXd input;
  std::vector<MatrixXd> post;  // post-activation hidden outputs
};

void mlp_forward_batch(const NetConfig& config, const VectorXd& theta, const MatrixXd& Z,
                       MatrixXd& out, MlpBatchCache* cache = nullptr);

/// Reverse pass of the batched evaluation. Accumulates the parameter
/// gradient of sum_b out_bar_b . f(z_b) into param_grad and optionally
/// returns the input adjoint.
void mlp_backward_batch(const NetConfig& config, const VectorXd& theta,
                        const MlpBatchCache& cache, const MatrixXd& out_bar,
                        Eigen::Ref<VectorXd> param_grad, MatrixXd* input_bar = nullptr);

/// Gradient of the batch loss 1/(2N) sum_i ||f(x_i, u_i) - target_i||^2.
/// Returns the loss value; X, U, targets hold one sample per column.
double mlp_param_grad(const NetConfig& config, const VectorXd& theta, const MatrixXd& X,
                      const MatrixXd& U, const MatrixXd& targets, VectorXd& grad);

/// Glorot-uniform weights, zero biases; deterministic per seed.
VectorXd init_params(const NetConfig& config, std::uint64_t seed);

/// Deep ensemble: M parameter vectors sharing one architecture, treated as
/// a uniform mixture (every expectation is the arithmetic member mean).
struct Ensemble {
  NetConfig config;
  std::vector<VectorXd> members;

  int size() const { return int(members.size()); }
  ModelList as_models() const;
};

/// DynamicsModel adapter around one parameter vector. The time argument is
/// ignored (models are time-invariant). Evaluation uses thread-local
/// scratch, so concurrent calls from different threads are safe.
class MlpModel : public DynamicsModel {
public:
  MlpModel(NetConfig config, VectorXd theta);

  int state_dim() const override { return d_x_; }
  int control_dim() const override { return d_u_; }
  void eval_f(const VectorXd& x, const VectorXd& u, double t, Eigen::Ref<VectorXd> out) const override;
  void eval_jac_x(const VectorXd& x, const VectorXd& u, double t, Eigen::Ref<MatrixXd> out) const override;
  void eval_jac_u(const VectorXd& x, const VectorXd& u, double t, Eigen::Ref<MatrixXd> out) const override;
  void eval_with_jacobians(const VectorXd& x, const VectorXd& u, double t, Eigen::Ref<VectorXd> f,
                           Eigen::Ref<MatrixXd> jx, Eigen::Ref<MatrixXd> ju) const override;

  const NetConfig& config() const { return config_; }
  const VectorXd& params() const { return theta_; }

private:
  NetConfig config_;
  VectorXd theta_;
  MlpLayout layout_;
  int d_x_, d_u_;
};

}  // namespace pmpc
