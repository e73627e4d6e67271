#include "dlorl/agent.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace dlorl {

ReplayBuffer::ReplayBuffer(size_t capacity) : capacity_(capacity) {
  if (capacity == 0) throw std::invalid_argument("replay buffer: capacity must be > 0");
  storage_.reserve(capacity);
}

void ReplayBuffer::store(Transition t) {
  if (size_ < capacity_) {
    storage_.push_back(std::move(t));
    ++size_;
  } else {
    storage_[head_] = std::move(t);  // overwrite oldest
  }
  head_ = (head_ + 1) % capacity_;
}

const Transition& ReplayBuffer::at(size_t logical) const {
  if (logical >= size_) throw std::out_of_range("replay buffer index");
  if (size_ < capacity_) return storage_[logical];
  return storage_[(head_ + logical) % capacity_];
}

std::optional<Batch> ReplayBuffer::sample(size_t n, Rng& rng) const {
  if (size_ < n) return std::nullopt;
  const Transition& first = storage_.front();
  Batch batch;
  batch.states.resize(first.state.size(), n);
  batch.actions.resize(3, n);
  batch.rewards.resize(n);
  batch.next_states.resize(first.next_state.size(), n);
  batch.dones.resize(n);
  for (size_t i = 0; i < n; ++i) {
    const Transition& t = storage_[rng.randint(size_)];
    batch.states.col(i) = t.state;
    batch.actions.col(i) = t.action;
    batch.rewards(i) = t.reward;
    batch.next_states.col(i) = t.next_state;
    batch.dones(i) = t.done;
  }
  return batch;
}

Vec3 OuNoise::sample(Rng& rng) {
  Vec3 g(rng.gaussian(), rng.gaussian(), rng.gaussian());
  state += theta * (mu - state) * dt + sigma * std::sqrt(dt) * g;
  return state;
}

void DdpgConfig::validate() const {
  if (!(gamma >= 0.9 && gamma < 1.0)) throw std::invalid_argument("ddpg: gamma must be in [0.9, 1)");
  if (!(tau > 0.0 && tau <= 1.0)) throw std::invalid_argument("ddpg: tau must be in (0, 1]");
  if (batch_size < 1) throw std::invalid_argument("ddpg: batch_size must be >= 1");
  if (!(ou_theta > 0.0)) throw std::invalid_argument("ddpg: ou_theta must be > 0");
  if (!(ou_sigma >= 0.0)) throw std::invalid_argument("ddpg: ou_sigma must be >= 0");
}

DdpgAgent::DdpgAgent(int state_dim, int action_dim, const DdpgConfig& config,
                     std::uint64_t init_seed)
    : state_dim_(state_dim), action_dim_(action_dim), config_(config), buffer_(config.buffer_capacity) {
  config_.validate();
  MlpSpec actor_spec{state_dim, config.hidden, action_dim, Activation::Relu, Activation::Tanh};
  MlpSpec critic_spec{state_dim + action_dim, config.hidden, 1, Activation::Relu,
                      Activation::Identity};
  actor_ = init_weights(actor_spec, derive_seed(init_seed, 1));
  critic_ = init_weights(critic_spec, derive_seed(init_seed, 2));
  actor_target_ = actor_;    // targets start as copies
  critic_target_ = critic_;
  actor_opt_ = AdamState::for_weights(actor_, config.actor_lr);
  critic_opt_ = AdamState::for_weights(critic_, config.critic_lr);
  noise_.theta = config.ou_theta;
  noise_.sigma = config.ou_sigma;
  noise_.dt = config.ou_dt;
  noise_.reset();
}

Vec3 DdpgAgent::select_action(const Eigen::VectorXd& state, bool explore, Rng& noise_rng) {
  if (state.size() != state_dim_) throw std::invalid_argument("select_action: state dim mismatch");
  Eigen::VectorXd a = forward(actor_, state);
  Vec3 action(a(0), a(1), a(2));
  if (explore) {
    action += noise_.sample(noise_rng);
    action = action.cwiseMax(-1.0).cwiseMin(1.0);
  }
  return action;
}

namespace {

Eigen::MatrixXd stack_state_action(const Eigen::MatrixXd& states, const Eigen::MatrixXd& actions) {
  Eigen::MatrixXd sa(states.rows() + actions.rows(), states.cols());
  sa.topRows(states.rows()) = states;
  sa.bottomRows(actions.rows()) = actions;
  return sa;
}

}  // namespace

Eigen::VectorXd DdpgAgent::bellman_targets(const Batch& batch) const {
  if (batch.size() == 0) throw std::invalid_argument("bellman_targets: empty batch");
  const Eigen::MatrixXd next_actions = forward_batch(actor_target_, batch.next_states);
  const Eigen::MatrixXd next_q =
      forward_batch(critic_target_, stack_state_action(batch.next_states, next_actions));
  return batch.rewards.array() +
         config_.gamma * next_q.row(0).transpose().array() * (1.0 - batch.dones.array());
}

DdpgAgent::LossAndGrads DdpgAgent::critic_update(const Batch& batch) const {
  const Eigen::Index n = batch.size();
  const Eigen::VectorXd targets = bellman_targets(batch);
  ForwardCache cache;
  const Eigen::MatrixXd q =
      forward_batch(critic_, stack_state_action(batch.states, batch.actions), &cache);
  const Eigen::VectorXd err = q.row(0).transpose() - targets;
  LossAndGrads out;
  out.loss = err.squaredNorm() / static_cast<double>(n);
  if (!std::isfinite(out.loss)) throw OptimizerError("critic_update: non-finite loss");
  const Eigen::MatrixXd output_grad = (2.0 / static_cast<double>(n)) * err.transpose();
  backward_batch(critic_, cache, output_grad, out.grads);
  return out;
}

DdpgAgent::LossAndGrads DdpgAgent::policy_update(const Batch& batch) const {
  const Eigen::Index n = batch.size();
  ForwardCache actor_cache;
  const Eigen::MatrixXd actions = forward_batch(actor_, batch.states, &actor_cache);
  ForwardCache critic_cache;
  const Eigen::MatrixXd q =
      forward_batch(critic_, stack_state_action(batch.states, actions), &critic_cache);
  LossAndGrads out;
  out.loss = -q.row(0).mean();
  if (!std::isfinite(out.loss)) throw OptimizerError("policy_update: non-finite loss");

  // d(loss)/dQ = -1/N; chain through the critic's action input rows only
  Eigen::MatrixXd q_grad = Eigen::MatrixXd::Constant(1, n, -1.0 / static_cast<double>(n));
  MlpGradients critic_scratch;
  const Eigen::MatrixXd input_grad = backward_batch(critic_, critic_cache, q_grad, critic_scratch);
  const Eigen::MatrixXd action_grad = input_grad.bottomRows(action_dim_);
  backward_batch(actor_, actor_cache, action_grad, out.grads);
  return out;
}

void DdpgAgent::apply_updates(const MlpGradients& critic_grads, const MlpGradients& actor_grads,
                              UpdateTrace* trace) {
  adam_step(critic_, critic_grads, critic_opt_);
  if (trace) trace->push_back("critic_adam");
  adam_step(actor_, actor_grads, actor_opt_);
  if (trace) trace->push_back("actor_adam");
  polyak_update(critic_target_, critic_, config_.tau);
  polyak_update(actor_target_, actor_, config_.tau);
  if (trace) trace->push_back("target_polyak");
}

namespace {

void save_adam(std::ostream& out, const AdamState& s) {
  out << "adam " << s.learning_rate << ' ' << s.beta1 << ' ' << s.beta2 << ' ' << s.epsilon << ' '
      << s.step << '\n';
  auto dump = [&out](const auto& mats) {
    for (const auto& m : mats)
      out.write(reinterpret_cast<const char*>(m.data()),
                static_cast<std::streamsize>(m.size() * sizeof(double)));
  };
  dump(s.m_w);
  dump(s.v_w);
  dump(s.m_b);
  dump(s.v_b);
}

void load_adam(std::istream& in, AdamState& s) {
  std::string tag;
  in >> tag >> s.learning_rate >> s.beta1 >> s.beta2 >> s.epsilon >> s.step;
  if (tag != "adam" || !in) throw CheckpointError("ddpg checkpoint: bad adam block");
  in.ignore(1);  // newline
  auto slurp = [&in](auto& mats) {
    for (auto& m : mats) {
      in.read(reinterpret_cast<char*>(m.data()),
              static_cast<std::streamsize>(m.size() * sizeof(double)));
      if (!in) throw CheckpointError("ddpg checkpoint: truncated adam payload");
    }
  };
  slurp(s.m_w);
  slurp(s.v_w);
  slurp(s.m_b);
  slurp(s.v_b);
}

}  // namespace

void DdpgAgent::save_checkpoint(const std::string& path, std::uint64_t env_fingerprint) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot open for write: " + path);
  out.precision(17);
  out << "ddpg v1\n";
  out << "meta " << state_dim_ << ' ' << action_dim_ << ' ' << config_.gamma << ' ' << config_.tau
      << ' ' << config_.batch_size << ' ' << config_.buffer_capacity << ' ' << config_.actor_lr
      << ' ' << config_.critic_lr << ' ' << config_.ou_theta << ' ' << config_.ou_sigma << ' '
      << config_.ou_dt << ' ' << env_fingerprint << '\n';
  save_weights(actor_, out);
  save_weights(critic_, out);
  save_weights(actor_target_, out);
  save_weights(critic_target_, out);
  save_adam(out, actor_opt_);
  save_adam(out, critic_opt_);
}

DdpgAgent DdpgAgent::load_checkpoint(const std::string& path, std::uint64_t* env_fingerprint) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open for read: " + path);
  std::string header;
  std::getline(in, header);
  if (header != "ddpg v1") throw CheckpointError("ddpg checkpoint: bad header '" + header + "'");

  DdpgAgent agent;
  std::string tag;
  std::uint64_t fp = 0;
  in >> tag >> agent.state_dim_ >> agent.action_dim_ >> agent.config_.gamma >> agent.config_.tau >>
      agent.config_.batch_size >> agent.config_.buffer_capacity >> agent.config_.actor_lr >>
      agent.config_.critic_lr >> agent.config_.ou_theta >> agent.config_.ou_sigma >>
      agent.config_.ou_dt >> fp;
  if (tag != "meta" || !in) throw CheckpointError("ddpg checkpoint: bad meta line");
  in.ignore(1);
  if (env_fingerprint) *env_fingerprint = fp;

  agent.actor_ = load_weights(in);
  agent.critic_ = load_weights(in);
  agent.actor_target_ = load_weights(in);
  agent.critic_target_ = load_weights(in);
  agent.config_.hidden = agent.actor_.spec.hidden;
  agent.actor_opt_ = AdamState::for_weights(agent.actor_, agent.config_.actor_lr);
  agent.critic_opt_ = AdamState::for_weights(agent.critic_, agent.config_.critic_lr);
  load_adam(in, agent.actor_opt_);
  load_adam(in, agent.critic_opt_);
  agent.buffer_ = ReplayBuffer(agent.config_.buffer_capacity);
  agent.noise_.theta = agent.config_.ou_theta;
  agent.noise_.sigma = agent.config_.ou_sigma;
  agent.noise_.dt = agent.config_.ou_dt;
  agent.noise_.reset();
  if (agent.actor_.spec.input_dim != agent.state_dim_)
    throw CheckpointError("ddpg checkpoint: actor input dim mismatch");
  return agent;
}

}  // namespace dlorl
