#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dlorl/environment.hpp"
#include "dlorl/neural.hpp"
#include "dlorl/rng.hpp"

namespace dlorl {

struct Transition {
  Eigen::VectorXd state;
  Vec3 action = Vec3::Zero();
  double reward = 0.0;
  Eigen::VectorXd next_state;
  double done = 0.0;  // 0 or 1
};

// Column-per-sample views of a sampled minibatch.
struct Batch {
  Eigen::MatrixXd states;       // dim x N
  Eigen::MatrixXd actions;      // 3 x N
  Eigen::VectorXd rewards;      // N
  Eigen::MatrixXd next_states;  // dim x N
  Eigen::VectorXd dones;        // N

  Eigen::Index size() const { return rewards.size(); }
};

// Fixed-capacity FIFO ring with uniform with-replacement sampling.
class ReplayBuffer {
 public:
  explicit ReplayBuffer(size_t capacity);

  void store(Transition t);
  size_t size() const { return size_; }
  size_t capacity() const { return capacity_; }
  const Transition& at(size_t logical) const;  // 0 = oldest

  // std::nullopt while the buffer holds fewer than n transitions
  // (pre-training phase: keep collecting).
  std::optional<Batch> sample(size_t n, Rng& rng) const;

 private:
  size_t capacity_;
  size_t head_ = 0;  // next write slot
  size_t size_ = 0;
  std::vector<Transition> storage_;
};

struct OuNoise {
  double theta = 0.15;
  double sigma = 0.2;
  double dt = 1.0;
  Vec3 mu = Vec3::Zero();
  Vec3 state = Vec3::Zero();

  void reset() { state = mu; }
  // x += theta*(mu - x)*dt + sigma*sqrt(dt)*gaussian
  Vec3 sample(Rng& rng);
};

struct DdpgConfig {
  std::vector<int> hidden = {256, 256, 256};
  double gamma = 0.99;
  double tau = 0.01;
  double actor_lr = 1e-4;
  double critic_lr = 1e-3;
  int batch_size = 128;
  size_t buffer_capacity = 50000;
  double ou_theta = 0.15;
  double ou_sigma = 0.2;
  double ou_dt = 1.0;

  void validate() const;
};

// Names the update phases in order; apply_updates reports each phase as it
// runs so tests can observe the critic -> actor -> targets ordering.
using UpdateTrace = std::vector<std::string>;

class DdpgAgent {
 public:
  DdpgAgent(int state_dim, int action_dim, const DdpgConfig& config, std::uint64_t init_seed);

  // a = actor(state); with explore, a <- clamp(a + ou, -1, 1). The noise
  // stream advances only when explore is set.
  Vec3 select_action(const Eigen::VectorXd& state, bool explore, Rng& noise_rng);

  // Q_B = r + gamma * Q'(s', actor_target(s')) * (1 - d), target networks only.
  Eigen::VectorXd bellman_targets(const Batch& batch) const;

  struct LossAndGrads {
    double loss = 0.0;
    MlpGradients grads;
  };
  // MSE(Q_B, Q); gradients w.r.t. critic weights only, not applied.
  LossAndGrads critic_update(const Batch& batch) const;
  // -mean Q(s, actor(s)); gradient flows through the critic's action input
  // into the actor, critic weights untouched.
  LossAndGrads policy_update(const Batch& batch) const;

  // ADAM step on critic, then actor, then one Polyak update of both targets.
  void apply_updates(const MlpGradients& critic_grads, const MlpGradients& actor_grads,
                     UpdateTrace* trace = nullptr);

  ReplayBuffer& buffer() { return buffer_; }
  const ReplayBuffer& buffer() const { return buffer_; }
  OuNoise& noise() { return noise_; }

  const MlpWeights& actor() const { return actor_; }
  const MlpWeights& critic() const { return critic_; }
  const MlpWeights& actor_target() const { return actor_target_; }
  const MlpWeights& critic_target() const { return critic_target_; }
  const AdamState& actor_opt() const { return actor_opt_; }
  const AdamState& critic_opt() const { return critic_opt_; }
  const DdpgConfig& config() const { return config_; }
  int state_dim() const { return state_dim_; }
  int action_dim() const { return action_dim_; }

  MlpWeights& mutable_critic() { return critic_; }  // test instrumentation
  MlpWeights& mutable_actor() { return actor_; }

  // "ddpg v1" container: the four networks, both optimizer states, and a
  // metadata block (gamma, tau, batch size, noise params, env fingerprint).
  void save_checkpoint(const std::string& path, std::uint64_t env_fingerprint) const;
  static DdpgAgent load_checkpoint(const std::string& path,
                                   std::uint64_t* env_fingerprint = nullptr);

 private:
  DdpgAgent() = default;

  int state_dim_ = 0;
  int action_dim_ = 0;
  DdpgConfig config_;
  MlpWeights actor_, critic_, actor_target_, critic_target_;
  AdamState actor_opt_, critic_opt_;
  ReplayBuffer buffer_{1};
  OuNoise noise_;
};

}  // namespace dlorl
