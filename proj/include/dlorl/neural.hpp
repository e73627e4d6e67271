#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

namespace dlorl {

enum class Activation { Relu, Tanh, Identity };

std::string activation_name(Activation a);
Activation activation_from_name(const std::string& name);

struct MlpSpec {
  int input_dim = 0;
  std::vector<int> hidden;
  int output_dim = 0;
  Activation hidden_activation = Activation::Relu;
  Activation output_activation = Activation::Identity;

  int layer_count() const { return static_cast<int>(hidden.size()) + 1; }
  // [input_dim, hidden..., output_dim]
  std::vector<int> layer_dims() const;
  void validate() const;
  bool operator==(const MlpSpec&) const = default;
};

// Per-layer dense parameters; w[l] is (dims[l+1] x dims[l]).
struct MlpWeights {
  MlpSpec spec;
  std::vector<Eigen::MatrixXd> w;
  std::vector<Eigen::VectorXd> b;

  bool all_finite() const;
  long parameter_count() const;
};

// Parameter-shaped gradients, kept as first-class values so the trainer
// can sum them across workers before applying any update.
struct MlpGradients {
  std::vector<Eigen::MatrixXd> w;
  std::vector<Eigen::VectorXd> b;

  static MlpGradients zeros_like(const MlpWeights& weights);
  void set_zero();
  void accumulate(const MlpGradients& other);  // this += other
  void scale(double s);
  bool all_finite() const;
  bool same_shape(const MlpGradients& other) const;
};

// Activations retained by forward() for the matching backward().
// Batches are held column-wise: one sample per column.
struct ForwardCache {
  Eigen::MatrixXd input;
  std::vector<Eigen::MatrixXd> pre;   // z_l, one per layer
  std::vector<Eigen::MatrixXd> post;  // act(z_l)
};

struct AdamState {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  long step = 0;
  std::vector<Eigen::MatrixXd> m_w, v_w;
  std::vector<Eigen::VectorXd> m_b, v_b;

  static AdamState for_weights(const MlpWeights& weights, double learning_rate);
};

// Hidden layers U(-1/sqrt(fan_in), 1/sqrt(fan_in)); final layer U(-3e-3, 3e-3).
MlpWeights init_weights(const MlpSpec& spec, std::uint64_t seed);

// Single-sample and batched forward passes. The cache is optional; pass one
// when a backward pass follows.
Eigen::VectorXd forward(const MlpWeights& weights, const Eigen::VectorXd& input,
                        ForwardCache* cache = nullptr);
Eigen::MatrixXd forward_batch(const MlpWeights& weights, const Eigen::MatrixXd& inputs,
                              ForwardCache* cache = nullptr);

// Exact reverse-mode gradients. output_grad holds dLoss/d(output) per column;
// returns dLoss/d(input) per column (needed to chain critic -> actor).
Eigen::MatrixXd backward_batch(const MlpWeights& weights, const ForwardCache& cache,
                               const Eigen::MatrixXd& output_grad, MlpGradients& grads);
Eigen::VectorXd backward(const MlpWeights& weights, const ForwardCache& cache,
                         const Eigen::VectorXd& output_grad, MlpGradients& grads);

void adam_step(MlpWeights& weights, const MlpGradients& grads, AdamState& state);

// w_T <- tau*w + (1-tau)*w_T, elementwise over every parameter.
void polyak_update(MlpWeights& target, const MlpWeights& online, double tau);

// Versioned checkpoint container: "mlp v1" line, spec line, then the raw
// row-major float64 payload. Round-trips bit-exactly.
void save_weights(const MlpWeights& weights, std::ostream& out);
MlpWeights load_weights(std::istream& in);
void save_weights_file(const MlpWeights& weights, const std::string& path);
MlpWeights load_weights_file(const std::string& path);

struct OptimizerError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace dlorl
