#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "dlorl/softbody.hpp"

namespace dlorl {

struct WorkspaceBox {
  Vec3 center = Vec3::Zero();
  Vec3 extents = Vec3::Ones();  // full side lengths

  Vec3 lo() const { return center - extents / 2.0; }
  Vec3 hi() const { return center + extents / 2.0; }
  Vec3 clamp(const Vec3& p) const { return p.cwiseMax(lo()).cwiseMin(hi()); }
  bool contains(const Vec3& p, double eps = 0.0) const;
  void validate() const;

  // training box: 0.15 x 0.5 x 0.25 m; testing box: 0.2 x 0.8 x 0.3 m
  static WorkspaceBox small_box(const Vec3& center);
  static WorkspaceBox large_box(const Vec3& center);
};

struct Action {
  Vec3 tip_velocity = Vec3::Zero();  // componentwise in [-1, 1] m/s
  void validate() const;
};

// State of Eq.-(6) shape: (tip position, tip velocity, P_c, P_d).
struct Observation {
  Vec3 tip_pos = Vec3::Zero();
  Vec3 tip_vel = Vec3::Zero();
  Eigen::VectorXd current_nodes;  // 3m
  Eigen::VectorXd goal_nodes;     // 3m

  Eigen::VectorXd flatten() const;
};

struct StepInfo {
  double mean_distance = 0.0;
  std::vector<double> node_distances;
  bool clamped = false;
};

struct StepResult {
  Observation observation;
  double reward = 0.0;
  bool done = false;
  StepInfo info;
};

struct EnvConfig {
  std::vector<int> selected_node_ids;
  double control_dt = 0.06;
  int substeps = 20;
  double distance_threshold = 0.05;  // m
  int max_episode_steps = 300;
  WorkspaceBox box;
  bool reinitialize = true;

  int m() const { return static_cast<int>(selected_node_ids.size()); }
  int state_dim() const { return 6 + 6 * m(); }
  void validate(double sim_dt) const;
};

// r = -(1/m) * sum_i |P_c,i - P_d,i|
double reward(const Eigen::VectorXd& current, const Eigen::VectorXd& goal);

// m free nodes evenly spaced along the bar axis on the mesh surface,
// deterministic for a given mesh.
std::vector<int> select_default_nodes(const TetMesh& mesh, int m);

struct ProtocolError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Hash of the physical setup (mesh, material, gravity, selected nodes);
// goal databases record it so they cannot be replayed against a different rig.
std::uint64_t environment_fingerprint(const TetMesh& mesh, const MaterialParams& material,
                                      const SimConfig& sim_config,
                                      const std::vector<int>& selected);

class Environment {
 public:
  Environment(TetMesh mesh, const MaterialParams& material, const SimConfig& sim_config,
              EnvConfig env_config);

  // reinitialize=true restores the pristine settled state; false keeps the
  // mesh and tip exactly where the previous episode ended.
  Observation reset(const Eigen::VectorXd& goal_targets, bool reinitialize,
                    std::int64_t goal_id = -1);
  Observation reset(const Eigen::VectorXd& goal_targets, std::int64_t goal_id = -1);

  StepResult step(const Action& action);

  Observation observe() const;
  Eigen::VectorXd selected_positions() const;
  double current_mean_distance() const;

  const TetMesh& mesh() const { return sim_.mesh(); }
  const GripperTip& tip() const { return tip_; }
  const EnvConfig& config() const { return env_config_; }
  void set_distance_threshold(double threshold);
  void set_max_episode_steps(int steps);
  SoftBarSim& sim() { return sim_; }
  const TetMesh& pristine_mesh() const { return pristine_mesh_; }
  int steps_taken() const { return steps_taken_; }
  bool episode_active() const { return steps_taken_ < env_config_.max_episode_steps; }
  std::int64_t goal_id() const { return goal_id_; }
  std::uint64_t fingerprint() const;  // mesh + material + selected-node hash

 private:
  SoftBarSim sim_;
  EnvConfig env_config_;
  GripperTip tip_;
  TetMesh pristine_mesh_;
  GripperTip pristine_tip_;
  Eigen::VectorXd goal_;
  std::int64_t goal_id_ = -1;
  std::uint64_t fingerprint_ = 0;
  int steps_taken_ = 0;
  bool goal_set_ = false;
};

// One row per control step: episode, step, tip, action, reward, done,
// then the 3m goal and 3m current coordinates.
class TrajectoryWriter {
 public:
  TrajectoryWriter(const std::string& path, int m);
  void append(long episode, int step, const GripperTip& tip, const Action& action,
              const StepResult& result);

 private:
  std::ofstream out_;
};

}  // namespace dlorl
