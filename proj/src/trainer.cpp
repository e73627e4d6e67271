#include "dlorl/trainer.hpp"

#include <atomic>
#include <barrier>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iostream>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>

namespace dlorl {

void TrainConfig::validate() const {
  if (workers < 1) throw std::invalid_argument("train: workers must be >= 1");
  if (episodes < 1) throw std::invalid_argument("train: episodes must be >= 1");
  if (steps_per_episode < 1) throw std::invalid_argument("train: steps_per_episode must be >= 1");
  if (updates_per_step < 0) throw std::invalid_argument("train: updates_per_step must be >= 0");
  material.validate();
  agent.validate();
}

MlpGradients allreduce_sum(const std::vector<const MlpGradients*>& grads, bool compensated) {
  if (grads.empty()) throw std::invalid_argument("allreduce_sum: no gradients");
  for (size_t w = 1; w < grads.size(); ++w)
    if (!grads[0]->same_shape(*grads[w]))
      throw std::invalid_argument("allreduce_sum: shape mismatch across workers");

  MlpGradients sum = *grads[0];
  if (!compensated) {
    for (size_t w = 1; w < grads.size(); ++w) sum.accumulate(*grads[w]);
    return sum;
  }
  // Neumaier accumulation per element; the compensation term makes the sum
  // independent of worker order.
  auto reduce = [&](auto member, size_t layer, Eigen::Index i) {
    double s = 0.0, c = 0.0;
    for (const MlpGradients* g : grads) {
      const double x = (g->*member)[layer].data()[i];
      const double t = s + x;
      if (std::abs(s) >= std::abs(x))
        c += (s - t) + x;
      else
        c += (x - t) + s;
      s = t;
    }
    return s + c;
  };
  for (size_t l = 0; l < sum.w.size(); ++l)
    for (Eigen::Index i = 0; i < sum.w[l].size(); ++i)
      sum.w[l].data()[i] = reduce(&MlpGradients::w, l, i);
  for (size_t l = 0; l < sum.b.size(); ++l)
    for (Eigen::Index i = 0; i < sum.b[l].size(); ++i)
      sum.b[l].data()[i] = reduce(&MlpGradients::b, l, i);
  return sum;
}

namespace {

bool bits_equal(const double* a, const double* b, size_t n) {
  return std::memcmp(a, b, n * sizeof(double)) == 0;
}

// locate the first differing coordinate for the report
std::string first_diff(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) {
  for (Eigen::Index c = 0; c < a.cols(); ++c)
    for (Eigen::Index r = 0; r < a.rows(); ++r)
      if (std::memcmp(&a(r, c), &b(r, c), sizeof(double)) != 0) {
        std::ostringstream os;
        os << "(" << r << "," << c << ")";
        return os.str();
      }
  return "(?)";
}

bool compare_weights(const MlpWeights& a, const MlpWeights& b, const std::string& name,
                     int replica, std::string& where) {
  for (size_t l = 0; l < a.w.size(); ++l) {
    if (!bits_equal(a.w[l].data(), b.w[l].data(), static_cast<size_t>(a.w[l].size()))) {
      std::ostringstream os;
      os << "replica " << replica << " " << name << " layer " << l << " w"
         << first_diff(a.w[l], b.w[l]);
      where = os.str();
      return false;
    }
    if (!bits_equal(a.b[l].data(), b.b[l].data(), static_cast<size_t>(a.b[l].size()))) {
      std::ostringstream os;
      os << "replica " << replica << " " << name << " layer " << l << " b";
      where = os.str();
      return false;
    }
  }
  return true;
}

bool compare_adam(const AdamState& a, const AdamState& b, const std::string& name, int replica,
                  std::string& where) {
  auto fail = [&](const std::string& what) {
    std::ostringstream os;
    os << "replica " << replica << " " << name << " " << what;
    where = os.str();
    return false;
  };
  if (a.step != b.step) return fail("step counter");
  for (size_t l = 0; l < a.m_w.size(); ++l) {
    if (!bits_equal(a.m_w[l].data(), b.m_w[l].data(), static_cast<size_t>(a.m_w[l].size())))
      return fail("m_w layer " + std::to_string(l));
    if (!bits_equal(a.v_w[l].data(), b.v_w[l].data(), static_cast<size_t>(a.v_w[l].size())))
      return fail("v_w layer " + std::to_string(l));
    if (!bits_equal(a.m_b[l].data(), b.m_b[l].data(), static_cast<size_t>(a.m_b[l].size())))
      return fail("m_b layer " + std::to_string(l));
    if (!bits_equal(a.v_b[l].data(), b.v_b[l].data(), static_cast<size_t>(a.v_b[l].size())))
      return fail("v_b layer " + std::to_string(l));
  }
  return true;
}

}  // namespace

ConsistencyReport replica_consistency_check(const std::vector<const DdpgAgent*>& replicas) {
  ConsistencyReport report;
  if (replicas.size() < 2)
    throw std::invalid_argument("replica_consistency_check: need >= 2 replicas");
  const DdpgAgent& ref = *replicas[0];
  for (size_t r = 1; r < replicas.size(); ++r) {
    const DdpgAgent& other = *replicas[r];
    std::string where;
    if (!compare_weights(other.actor(), ref.actor(), "actor", static_cast<int>(r), where) ||
        !compare_weights(other.critic(), ref.critic(), "critic", static_cast<int>(r), where) ||
        !compare_weights(other.actor_target(), ref.actor_target(), "actor_target",
                         static_cast<int>(r), where) ||
        !compare_weights(other.critic_target(), ref.critic_target(), "critic_target",
                         static_cast<int>(r), where) ||
        !compare_adam(other.actor_opt(), ref.actor_opt(), "actor_opt", static_cast<int>(r),
                      where) ||
        !compare_adam(other.critic_opt(), ref.critic_opt(), "critic_opt", static_cast<int>(r),
                      where)) {
      report.consistent = false;
      report.first_divergence = where;
      return report;
    }
  }
  return report;
}

namespace {

struct GradSlot {
  MlpGradients critic;
  MlpGradients actor;
};

}  // namespace

TrainResult run_training(const TrainConfig& config, const DeformationDb& goals_db) {
  config.validate();
  const int W = config.workers;

  TetMesh mesh =
      build_bar_mesh(config.bar.length, config.bar.cross_section, config.bar.cells, config.material);
  EnvConfig env_cfg = config.env;
  if (env_cfg.selected_node_ids.empty())
    env_cfg.selected_node_ids = select_default_nodes(mesh, goals_db.m());
  env_cfg.validate(config.material.sim_dt);
  const std::uint64_t fp =
      environment_fingerprint(mesh, config.material, config.sim, env_cfg.selected_node_ids);
  check_fingerprint(goals_db, fp, config.strict_fingerprint);
  if (goals_db.m() != env_cfg.m())
    throw TrainError("train: database m does not match environment selection");
  if (goals_db.count() < W) throw TrainError("train: database smaller than worker count");

  // goals drawn up front: W distinct records per episode
  Rng goal_rng(derive_seed(config.seed, 0x60A15));
  std::vector<std::vector<GoalRecord>> episode_goals;
  episode_goals.reserve(config.episodes);
  for (int e = 0; e < config.episodes; ++e)
    episode_goals.push_back(sample_goals(goals_db, W, goal_rng, true));

  const int state_dim = env_cfg.state_dim();

  std::vector<std::unique_ptr<Environment>> envs(W);
  std::vector<std::unique_ptr<DdpgAgent>> agents(W);
  std::vector<GradSlot> slots(W);
  MlpGradients summed_critic, summed_actor;
  std::vector<double> ep_reward(W, 0.0), ep_final_dist(W, 0.0);
  std::vector<char> ep_done(W, 0), ep_diverged(W, 0);
  std::vector<EpisodeStats> curve;
  curve.reserve(config.episodes);

  std::atomic<bool> abort{false};
  std::atomic<int> phase{0};  // 1 = gradient reduce, 2 = episode stats
  std::mutex abort_mutex;
  std::string abort_msg;
  std::mutex log_mutex;
  int episode_index = 0;
  int diverged_episodes = 0;

  auto set_abort = [&](const std::string& msg) {
    std::lock_guard<std::mutex> lock(abort_mutex);
    if (!abort.load()) {
      abort_msg = msg;
      abort.store(true);
    }
  };

  auto completion = [&]() noexcept {
    try {
      const int p = phase.load();
      if (p == 1) {
        std::vector<const MlpGradients*> c(W), a(W);
        for (int w = 0; w < W; ++w) {
          c[w] = &slots[w].critic;
          a[w] = &slots[w].actor;
        }
        summed_critic = allreduce_sum(c, config.compensated_sum);
        summed_actor = allreduce_sum(a, config.compensated_sum);
        if (!config.sum_reduction) {
          summed_critic.scale(1.0 / W);
          summed_actor.scale(1.0 / W);
        }
        if (!summed_critic.all_finite() || !summed_actor.all_finite())
          set_abort("non-finite summed gradient");
      } else if (p == 2) {
        EpisodeStats st;
        st.episode = episode_index;
        st.worker_rewards.assign(ep_reward.begin(), ep_reward.end());
        double sum = 0.0, dsum = 0.0;
        double mn = std::numeric_limits<double>::infinity();
        double mx = -std::numeric_limits<double>::infinity();
        for (int w = 0; w < W; ++w) {
          sum += ep_reward[w];
          mn = std::min(mn, ep_reward[w]);
          mx = std::max(mx, ep_reward[w]);
          dsum += ep_final_dist[w];
          if (ep_done[w]) ++st.done_count;
          if (ep_diverged[w]) ++diverged_episodes;
        }
        st.mean_reward = sum / W;
        st.min_reward = mn;
        st.max_reward = mx;
        st.mean_final_distance = dsum / W;
        curve.push_back(std::move(st));
        if (config.checkpoint_every > 0 && !config.checkpoint_path.empty() &&
            (episode_index + 1) % config.checkpoint_every == 0 && agents[0])
          agents[0]->save_checkpoint(config.checkpoint_path, fp);
        ++episode_index;
      }
    } catch (const std::exception& e) {
      set_abort(std::string("synchronization: ") + e.what());
    } catch (...) {
      set_abort("synchronization: unknown error");
    }
  };

  std::barrier sync(W, completion);

  auto worker_fn = [&](int w) {
    try {
      envs[w] = std::make_unique<Environment>(mesh, config.material, config.sim, env_cfg);
      if (config.resume_checkpoint.empty()) {
        agents[w] = std::make_unique<DdpgAgent>(state_dim, 3, config.agent,
                                                derive_seed(config.seed, 1000));
      } else {
        agents[w] = std::make_unique<DdpgAgent>(DdpgAgent::load_checkpoint(config.resume_checkpoint));
        if (agents[w]->state_dim() != state_dim)
          throw TrainError("resume checkpoint state dim mismatch");
      }
      slots[w].critic = MlpGradients::zeros_like(agents[w]->critic());
      slots[w].actor = MlpGradients::zeros_like(agents[w]->actor());
    } catch (const std::exception& e) {
      set_abort(std::string("worker setup: ") + e.what());
    }
    phase.store(0);
    sync.arrive_and_wait();

    Rng noise_rng(derive_seed(config.seed, 2000 + static_cast<std::uint64_t>(w)));
    Rng sample_rng(derive_seed(config.seed, 3000 + static_cast<std::uint64_t>(w)));
    Eigen::VectorXd state;

    for (int e = 0; e < config.episodes; ++e) {
      bool diverged = false;
      bool done_ever = false;
      double cum_reward = 0.0;
      double final_dist = std::numeric_limits<double>::quiet_NaN();
      if (!abort.load()) {
        try {
          const GoalRecord& goal = episode_goals[e][w];
          Observation obs = envs[w]->reset(goal.targets, env_cfg.reinitialize, goal.id);
          agents[w]->noise().reset();
          state = obs.flatten();
          final_dist = envs[w]->current_mean_distance();
        } catch (const std::exception& ex) {
          set_abort(std::string("episode reset: ") + ex.what());
        }
      }
      for (int s = 0; s < config.steps_per_episode; ++s) {
        if (!abort.load() && !diverged) {
          try {
            const Vec3 a = agents[w]->select_action(state, true, noise_rng);
            const StepResult res = envs[w]->step(Action{a});
            Eigen::VectorXd next = res.observation.flatten();
            Transition t;
            t.state = state;
            t.action = a;
            t.reward = res.reward;
            t.next_state = next;
            t.done = res.done ? 1.0 : 0.0;
            agents[w]->buffer().store(std::move(t));
            state = std::move(next);
            cum_reward += res.reward;
            done_ever = done_ever || res.done;
            final_dist = res.info.mean_distance;
          } catch (const SimulationDiverged& ex) {
            diverged = true;
            std::lock_guard<std::mutex> lock(log_mutex);
            std::cerr << "[train] worker " << w << " episode " << e
                      << ": " << ex.what() << "; episode aborted for this worker\n";
          } catch (const std::exception& ex) {
            set_abort(std::string("env step: ") + ex.what());
          }
        }
        // all workers agree on this via shared arithmetic, so the barrier
        // sequence stays uniform even when one worker's episode died
        const long global_transitions =
            static_cast<long>(e) * config.steps_per_episode + s + 1;
        const bool update_now =
            config.updates_per_step > 0 && global_transitions >= config.agent.batch_size;
        if (!update_now) continue;
        for (int u = 0; u < config.updates_per_step; ++u) {
          if (!abort.load()) {
            try {
              auto batch =
                  agents[w]->buffer().sample(static_cast<size_t>(config.agent.batch_size), sample_rng);
              if (batch) {
                slots[w].critic = agents[w]->critic_update(*batch).grads;
                slots[w].actor = agents[w]->policy_update(*batch).grads;
              } else {
                slots[w].critic.set_zero();
                slots[w].actor.set_zero();
              }
            } catch (const std::exception& ex) {
              slots[w].critic.set_zero();
              slots[w].actor.set_zero();
              set_abort(std::string("gradient computation: ") + ex.what());
            }
          }
          phase.store(1);
          sync.arrive_and_wait();
          if (!abort.load()) {
            try {
              agents[w]->apply_updates(summed_critic, summed_actor);
            } catch (const std::exception& ex) {
              set_abort(std::string("apply update: ") + ex.what());
            }
          }
        }
      }
      ep_reward[w] = cum_reward;
      ep_final_dist[w] = final_dist;
      ep_done[w] = done_ever ? 1 : 0;
      ep_diverged[w] = diverged ? 1 : 0;
      phase.store(2);
      sync.arrive_and_wait();
    }
  };

  std::vector<std::thread> threads;
  threads.reserve(W);
  for (int w = 0; w < W; ++w) threads.emplace_back(worker_fn, w);
  for (auto& t : threads) t.join();

  if (abort.load()) throw TrainError(abort_msg);

  TrainResult result;
  result.curve = std::move(curve);
  result.env_fingerprint = fp;
  result.diverged_episodes = diverged_episodes;
  if (W >= 2) {
    std::vector<const DdpgAgent*> replicas;
    replicas.reserve(W);
    for (const auto& a : agents) replicas.push_back(a.get());
    result.final_consistency = replica_consistency_check(replicas);
  }
  result.agent = std::move(agents[0]);
  return result;
}

void write_learning_curve(const std::vector<EpisodeStats>& curve, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw TrainError("cannot open learning curve file: " + path);
  out.precision(17);
  out << "episode,mean_reward,min_reward,max_reward,mean_final_distance,done_count\n";
  for (const auto& st : curve)
    out << st.episode << ',' << st.mean_reward << ',' << st.min_reward << ',' << st.max_reward
        << ',' << st.mean_final_distance << ',' << st.done_count << '\n';
}

}  // namespace dlorl
