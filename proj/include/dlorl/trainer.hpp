#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "dlorl/agent.hpp"
#include "dlorl/goaldb.hpp"

namespace dlorl {

struct BarConfig {
  double length = 1.0;
  double cross_section = 0.05;
  std::array<int, 3> cells = {2, 2, 12};
};

struct TrainConfig {
  int workers = 32;
  int episodes = 63;
  int steps_per_episode = 300;
  std::uint64_t seed = 0;
  int updates_per_step = 1;
  bool sum_reduction = true;   // false: mean across workers (stability experiments)
  bool compensated_sum = false;
  bool strict_fingerprint = true;
  int checkpoint_every = 0;    // episodes; 0 disables periodic checkpoints
  std::string checkpoint_path;
  std::string resume_checkpoint;  // warm-start all replicas from this file

  BarConfig bar;
  MaterialParams material;
  SimConfig sim;
  EnvConfig env;   // selected_node_ids may be left empty: filled from env.box m-count default
  DdpgConfig agent;

  long episode_equivalents() const {
    return static_cast<long>(workers) * episodes;
  }
  void validate() const;
};

struct EpisodeStats {
  int episode = 0;
  std::vector<double> worker_rewards;  // cumulative per worker
  double mean_reward = 0.0;
  double min_reward = 0.0;
  double max_reward = 0.0;
  double mean_final_distance = 0.0;
  int done_count = 0;  // workers that reached the threshold at some step
};

struct ConsistencyReport {
  bool consistent = true;
  std::string first_divergence;  // empty when consistent
};

struct TrainResult {
  std::unique_ptr<DdpgAgent> agent;  // replica 0 after the final update
  std::vector<EpisodeStats> curve;
  ConsistencyReport final_consistency;
  std::uint64_t env_fingerprint = 0;
  int diverged_episodes = 0;
};

// Elementwise sum over worker gradients in worker-index order. With
// compensated=true a Neumaier accumulator makes the result independent of
// worker permutation.
MlpGradients allreduce_sum(const std::vector<const MlpGradients*>& grads,
                           bool compensated = false);

// Bit-equality of all replicas' four networks and optimizer states;
// pinpoints the first divergent parameter coordinate.
ConsistencyReport replica_consistency_check(const std::vector<const DdpgAgent*>& replicas);

// W workers, each with its own environment, replica, buffer, and noise
// stream. Each episode draws W distinct goals; at every synchronization
// point workers compute critic and actor gradients on their own batches,
// the sums are broadcast, and every replica applies the identical update.
TrainResult run_training(const TrainConfig& config, const DeformationDb& goals);

void write_learning_curve(const std::vector<EpisodeStats>& curve, const std::string& path);

struct TrainError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace dlorl
