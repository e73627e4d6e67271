#include "dlorl/environment.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>

namespace dlorl {

bool WorkspaceBox::contains(const Vec3& p, double eps) const {
  const Vec3 l = lo(), h = hi();
  for (int a = 0; a < 3; ++a)
    if (p[a] < l[a] - eps || p[a] > h[a] + eps) return false;
  return true;
}

void WorkspaceBox::validate() const {
  if (!(extents.minCoeff() > 0.0))
    throw std::invalid_argument("workspace box: extents must be > 0");
}

WorkspaceBox WorkspaceBox::small_box(const Vec3& center) {
  return {center, Vec3(0.15, 0.5, 0.25)};
}

WorkspaceBox WorkspaceBox::large_box(const Vec3& center) {
  return {center, Vec3(0.2, 0.8, 0.3)};
}

void Action::validate() const {
  for (int a = 0; a < 3; ++a)
    if (!(std::abs(tip_velocity[a]) <= 1.0 + 1e-12))
      throw std::invalid_argument("action: tip velocity component out of [-1, 1]");
}

Eigen::VectorXd Observation::flatten() const {
  Eigen::VectorXd s(6 + current_nodes.size() + goal_nodes.size());
  s.segment(0, 3) = tip_pos;
  s.segment(3, 3) = tip_vel;
  s.segment(6, current_nodes.size()) = current_nodes;
  s.segment(6 + current_nodes.size(), goal_nodes.size()) = goal_nodes;
  return s;
}

void EnvConfig::validate(double sim_dt) const {
  if (selected_node_ids.empty())
    throw std::invalid_argument("env: selected_node_ids must be nonempty");
  if (substeps < 1) throw std::invalid_argument("env: substeps must be >= 1");
  if (std::abs(control_dt - substeps * sim_dt) > 1e-9 * control_dt)
    throw std::invalid_argument("env: control_dt must equal substeps * sim_dt");
  if (!(distance_threshold > 0.0)) throw std::invalid_argument("env: threshold must be > 0");
  if (max_episode_steps < 1) throw std::invalid_argument("env: max_episode_steps must be >= 1");
  box.validate();
}

double reward(const Eigen::VectorXd& current, const Eigen::VectorXd& goal) {
  if (current.size() != goal.size() || current.size() % 3 != 0)
    throw std::invalid_argument("reward: length mismatch");
  const int m = static_cast<int>(current.size() / 3);
  double sum = 0.0;
  for (int i = 0; i < m; ++i)
    sum += (current.segment<3>(3 * i) - goal.segment<3>(3 * i)).norm();
  return -sum / m;
}

std::vector<int> select_default_nodes(const TetMesh& mesh, int m) {
  if (m < 1) throw std::invalid_argument("select_default_nodes: m must be >= 1");
  std::vector<char> constrained(mesh.node_pos.size(), 0);
  for (int p : mesh.pinned) constrained[p] = 1;
  for (int g : mesh.grasped) constrained[g] = 1;

  Vec3 lo = mesh.node_pos.front(), hi = mesh.node_pos.front();
  for (const auto& p : mesh.node_pos) {
    lo = lo.cwiseMin(p);
    hi = hi.cwiseMax(p);
  }
  const Vec3 extent = hi - lo;
  int axis = 0;
  for (int a = 1; a < 3; ++a)
    if (extent[a] > extent[axis]) axis = a;
  const int c1 = (axis + 1) % 3, c2 = (axis + 2) % 3;

  // candidates: free nodes on one surface corner column of the bar
  const double tol = 1e-12 * std::max(1.0, extent.maxCoeff());
  std::vector<int> candidates;
  for (int i = 0; i < mesh.node_count(); ++i) {
    if (constrained[i]) continue;
    const Vec3& p = mesh.node_pos[i];
    if (std::abs(p[c1] - hi[c1]) <= tol && std::abs(p[c2] - hi[c2]) <= tol)
      candidates.push_back(i);
  }
  std::sort(candidates.begin(), candidates.end(), [&](int a, int b) {
    return mesh.node_pos[a][axis] < mesh.node_pos[b][axis];
  });
  if (static_cast<int>(candidates.size()) < m)
    throw std::invalid_argument("select_default_nodes: not enough free surface nodes");

  const double a_lo = mesh.node_pos[candidates.front()][axis];
  const double a_hi = mesh.node_pos[candidates.back()][axis];
  std::vector<int> chosen;
  size_t cursor = 0;
  for (int j = 0; j < m; ++j) {
    const double target = a_lo + (a_hi - a_lo) * (j + 1) / (m + 1);
    size_t best = cursor;
    double best_d = std::numeric_limits<double>::infinity();
    for (size_t c = cursor; c < candidates.size(); ++c) {
      const double d = std::abs(mesh.node_pos[candidates[c]][axis] - target);
      if (d < best_d) {
        best_d = d;
        best = c;
      }
    }
    // keep the selection strictly increasing along the axis
    best = std::max(best, cursor);
    chosen.push_back(candidates[best]);
    cursor = best + 1;
    if (cursor > candidates.size() - (m - j - 1))
      cursor = candidates.size() - (m - j - 1);
  }
  return chosen;
}

namespace {

std::uint64_t fnv1a(std::uint64_t h, const void* data, size_t len) {
  const auto* bytes = static_cast<const unsigned char*>(data);
  for (size_t i = 0; i < len; ++i) {
    h ^= bytes[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

std::uint64_t fnv1a_double(std::uint64_t h, double v) {
  std::uint64_t bits;
  std::memcpy(&bits, &v, sizeof(bits));
  return fnv1a(h, &bits, sizeof(bits));
}

std::uint64_t fnv1a_int(std::uint64_t h, std::int64_t v) { return fnv1a(h, &v, sizeof(v)); }

}  // namespace

std::uint64_t environment_fingerprint(const TetMesh& mesh, const MaterialParams& material,
                                      const SimConfig& sim_config,
                                      const std::vector<int>& selected) {
  std::uint64_t h = 0xcbf29ce484222325ull;
  const char tag[] = "dlorl env v1";
  h = fnv1a(h, tag, sizeof(tag));
  h = fnv1a_int(h, mesh.node_count());
  for (const auto& t : mesh.tets)
    for (int idx : t) h = fnv1a_int(h, idx);
  for (const auto& e : mesh.edges) {
    h = fnv1a_int(h, e.a);
    h = fnv1a_int(h, e.b);
  }
  for (const auto& p : mesh.node_pos)
    for (int a = 0; a < 3; ++a) h = fnv1a_double(h, p[a]);
  for (int p : mesh.pinned) h = fnv1a_int(h, p);
  for (int g : mesh.grasped) h = fnv1a_int(h, g);
  h = fnv1a_double(h, material.young_modulus);
  h = fnv1a_double(h, material.poisson_ratio);
  h = fnv1a_double(h, material.total_mass);
  h = fnv1a_double(h, material.damping_ratio);
  h = fnv1a_double(h, material.sim_dt);
  h = fnv1a_int(h, sim_config.gravity_on ? 1 : 0);
  for (int a = 0; a < 3; ++a) h = fnv1a_double(h, sim_config.gravity[a]);
  for (int s : selected) h = fnv1a_int(h, s);
  return h;
}

Environment::Environment(TetMesh mesh, const MaterialParams& material,
                         const SimConfig& sim_config, EnvConfig env_config)
    : sim_(std::move(mesh), material, sim_config), env_config_(std::move(env_config)) {
  env_config_.validate(material.sim_dt);
  for (int id : env_config_.selected_node_ids)
    if (id < 0 || id >= sim_.mesh().node_count())
      throw std::invalid_argument("env: selected node id out of range");
  fingerprint_ = environment_fingerprint(sim_.mesh(), material, sim_config,
                                         env_config_.selected_node_ids);

  tip_.position = sim_.initial_tip_position();
  tip_.velocity.setZero();
  if (!env_config_.box.contains(tip_.position, 1e-12))
    throw std::invalid_argument("env: initial tip position outside workspace box");

  // pristine state: the bar settled under gravity at the initial tip pose
  if (sim_.config().gravity_on) {
    sim_.step(tip_);
    sim_.settle(tip_, 200000, 1e-6);
  }
  pristine_mesh_ = sim_.mesh();
  pristine_tip_ = tip_;
}

std::uint64_t Environment::fingerprint() const { return fingerprint_; }

void Environment::set_distance_threshold(double threshold) {
  if (!(threshold > 0.0)) throw std::invalid_argument("env: threshold must be > 0");
  env_config_.distance_threshold = threshold;
}

void Environment::set_max_episode_steps(int steps) {
  if (steps < 1) throw std::invalid_argument("env: max_episode_steps must be >= 1");
  env_config_.max_episode_steps = steps;
}

Observation Environment::observe() const {
  Observation obs;
  obs.tip_pos = tip_.position;
  obs.tip_vel = tip_.velocity;
  obs.current_nodes = selected_positions();
  obs.goal_nodes = goal_;
  return obs;
}

Eigen::VectorXd Environment::selected_positions() const {
  const auto& ids = env_config_.selected_node_ids;
  Eigen::VectorXd p(3 * ids.size());
  for (size_t i = 0; i < ids.size(); ++i) p.segment<3>(3 * i) = sim_.mesh().node_pos[ids[i]];
  return p;
}

double Environment::current_mean_distance() const {
  return -reward(selected_positions(), goal_);
}

Observation Environment::reset(const Eigen::VectorXd& goal_targets, bool reinitialize,
                               std::int64_t goal_id) {
  if (goal_targets.size() != 3 * env_config_.m())
    throw std::invalid_argument("reset: goal dimensionality mismatch");
  if (reinitialize) {
    sim_.set_state(pristine_mesh_);
    tip_ = pristine_tip_;
  }
  goal_ = goal_targets;
  goal_id_ = goal_id;
  goal_set_ = true;
  steps_taken_ = 0;
  return observe();
}

Observation Environment::reset(const Eigen::VectorXd& goal_targets, std::int64_t goal_id) {
  return reset(goal_targets, env_config_.reinitialize, goal_id);
}

StepResult Environment::step(const Action& action) {
  if (!goal_set_) throw ProtocolError("step: reset must be called first");
  if (steps_taken_ >= env_config_.max_episode_steps)
    throw ProtocolError("step: episode already finished");
  action.validate();

  const Vec3 start = tip_.position;
  const Vec3 target = start + action.tip_velocity * env_config_.control_dt;
  const Vec3 clamped = env_config_.box.clamp(target);
  const bool was_clamped = (clamped - target).cwiseAbs().maxCoeff() > 0.0;
  const Vec3 tip_velocity = (clamped - start) / env_config_.control_dt;

  GripperTip tip;
  tip.velocity = tip_velocity;
  for (int s = 1; s <= env_config_.substeps; ++s) {
    // end-of-substep tip position; the last substep lands exactly on target
    tip.position = (s == env_config_.substeps)
                       ? clamped
                       : start + tip_velocity * (env_config_.control_dt * s / env_config_.substeps);
    sim_.step(tip);
  }
  tip_.position = clamped;
  tip_.velocity = tip_velocity;
  ++steps_taken_;

  StepResult result;
  result.observation = observe();
  result.reward = reward(result.observation.current_nodes, goal_);
  result.info.clamped = was_clamped;
  result.info.mean_distance = -result.reward;
  const int m = env_config_.m();
  result.info.node_distances.resize(m);
  for (int i = 0; i < m; ++i)
    result.info.node_distances[i] =
        (result.observation.current_nodes.segment<3>(3 * i) - goal_.segment<3>(3 * i)).norm();
  result.done = result.info.mean_distance < env_config_.distance_threshold;
  return result;
}

TrajectoryWriter::TrajectoryWriter(const std::string& path, int m) : out_(path) {
  if (!out_) throw std::runtime_error("cannot open trajectory file: " + path);
  out_.precision(17);
  out_ << "episode,step,tip_x,tip_y,tip_z,action_vx,action_vy,action_vz,reward,done";
  for (int i = 0; i < 3 * m; ++i) out_ << ",goal_" << i;
  for (int i = 0; i < 3 * m; ++i) out_ << ",current_" << i;
  out_ << '\n';
}

void TrajectoryWriter::append(long episode, int step, const GripperTip& tip, const Action& action,
                              const StepResult& result) {
  out_ << episode << ',' << step;
  for (int a = 0; a < 3; ++a) out_ << ',' << tip.position[a];
  for (int a = 0; a < 3; ++a) out_ << ',' << action.tip_velocity[a];
  out_ << ',' << result.reward << ',' << (result.done ? 1 : 0);
  for (Eigen::Index i = 0; i < result.observation.goal_nodes.size(); ++i)
    out_ << ',' << result.observation.goal_nodes[i];
  for (Eigen::Index i = 0; i < result.observation.current_nodes.size(); ++i)
    out_ << ',' << result.observation.current_nodes[i];
  out_ << '\n';
}

}  // namespace dlorl
