#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "dlorl/agent.hpp"
#include "dlorl/goaldb.hpp"

namespace dlorl {

struct EvalConfig {
  long episodes = 1000;
  int max_steps = 30;
  double threshold = 0.05;  // m
  bool reinitialize = true;
  std::uint64_t seed = 0;
  int workers = 1;  // parallel sharding; only used with reinitialize=true
  bool strict_fingerprint = true;

  void validate() const;
};

struct EvalEpisode {
  long episode = 0;
  std::int64_t goal_id = -1;
  int steps_taken = 0;
  bool done = false;
  double final_error = 0.0;  // mean selected-node distance at episode end
};

struct EvalReport {
  double done_pct = 0.0;
  double mean_error = 0.0;
  double std_error = 0.0;  // population standard deviation over all episodes
  double best_error = 0.0;
  long diverged = 0;
  std::vector<EvalEpisode> episodes;
};

// Deterministic-policy action: tanh actor output, no noise, no buffer writes.
Vec3 greedy_action(const DdpgAgent& agent, const Eigen::VectorXd& state);

// One goal drawn (with replacement) per episode from a per-episode seed, so
// results do not depend on the worker count. Episodes chain without
// reinitialization, which forces sequential execution in that mode.
EvalReport run_eval(const DdpgAgent& agent,
                    const std::function<std::unique_ptr<Environment>()>& make_env,
                    const DeformationDb& db, const EvalConfig& config);

// episode,goal_id,steps_taken,done,final_error_m
void write_episode_csv(const EvalReport& report, const std::string& path);

// Human-readable table plus a machine-readable JSON summary block.
void write_report(const EvalReport& report, const EvalConfig& config, std::ostream& out);
void write_report_file(const EvalReport& report, const EvalConfig& config,
                       const std::string& path);

struct EvalMetrics {
  double done_pct = 0.0;
  double mean_error = 0.0;
  double std_error = 0.0;
  double best_error = 0.0;
  long episodes = 0;
};

// Independent re-aggregation from the per-episode CSV.
EvalMetrics recompute_metrics_from_csv(const std::string& path);

struct EvalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace dlorl
