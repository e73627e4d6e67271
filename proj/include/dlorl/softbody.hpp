#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <vector>

namespace dlorl {

using Vec3 = Eigen::Vector3d;

struct MaterialParams {
  double young_modulus = 2.5e6;  // Pa
  double poisson_ratio = 0.3;
  double total_mass = 0.2;    // kg
  double damping_ratio = 0.01;
  double friction_coeff = 0.5;  // stored for config completeness; no sliding contact is modeled
  double sim_dt = 0.003;        // s

  void validate() const;
};

struct Edge {
  int a = 0;
  int b = 0;
  double rest_length = 0.0;
};

struct TetMesh {
  std::vector<Vec3> node_pos;
  std::vector<Vec3> node_vel;
  std::vector<double> node_mass;
  std::vector<std::array<int, 4>> tets;
  std::vector<Edge> edges;
  std::vector<double> tet_rest_volume;
  std::vector<int> pinned;   // sorted, disjoint from grasped
  std::vector<int> grasped;  // sorted

  int node_count() const { return static_cast<int>(node_pos.size()); }
  void validate(double expected_total_mass = -1.0) const;
};

struct GripperTip {
  Vec3 position = Vec3::Zero();
  Vec3 velocity = Vec3::Zero();
};

struct MeshBuildError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SimulationDiverged : std::runtime_error {
  int node_index;
  explicit SimulationDiverged(int node)
      : std::runtime_error("simulation diverged at node " + std::to_string(node)),
        node_index(node) {}
};

// Box bar subdivided into hexahedral cells, each split into 5 tetrahedra
// (parity-alternated so shared faces match). Bottom-face nodes pinned,
// top-face nodes grasped, masses lumped uniformly. The bar spans
// [-cross/2, cross/2]^2 x [0, length].
TetMesh build_bar_mesh(double length, double cross_section, std::array<int, 3> cells,
                       const MaterialParams& material);

// Spring constants derived from the material:
//   per-edge   k_e = E * V_total / (edge_count * L_e^2)
//   per-tet    k_v = E / (3(1 - 2nu))
//   per-node   c   = 2 * damping_ratio * sqrt(k_mean * m_node)
struct Stiffness {
  std::vector<double> edge_k;
  double volume_k = 0.0;
  double damping_c = 0.0;
  double mean_edge_k = 0.0;
};

Stiffness derive_stiffness(const TetMesh& mesh, const MaterialParams& material);

// E = sum_edges 1/2 k_e (|xi-xj| - L)^2 + sum_tets 1/2 k_v (V - V0)^2 / V0
double elastic_energy(const TetMesh& mesh, const Stiffness& stiffness);

// -dE/dx per node, minus c*v when with_damping. Computed for every node;
// the integrator never applies forces to pinned or grasped nodes.
std::vector<Vec3> internal_forces(const TetMesh& mesh, const Stiffness& stiffness,
                                  bool with_damping = true);

double kinetic_energy(const TetMesh& mesh);

struct SimConfig {
  bool gravity_on = true;
  Vec3 gravity = Vec3(0.0, 0.0, -9.81);
  // Explicit integration of the paper's material at sim_dt needs internal
  // micro-steps; micro_dt <= substep_safety * 2 / omega_max.
  double substep_safety = 0.5;
  int micro_steps_override = 0;  // > 0 forces the count
};

struct SettleResult {
  bool converged = false;  // true: vel_tol fired; false: max_steps fired
  long steps = 0;
};

// Owns a mesh plus its derived spring constants and integration policy.
// Grasped nodes ride rigidly on the tip at their construction-time offsets.
// Deterministic: identical state and tip sequences give bit-identical runs.
class SoftBarSim {
 public:
  SoftBarSim(TetMesh mesh, const MaterialParams& material, const SimConfig& config = {});

  // One sim_dt step of semi-implicit Euler (internally micro-stepped):
  // v += dt*F/m, x += dt*v for free nodes; pinned nodes hold their initial
  // positions; grasped nodes follow the tip.
  void step(const GripperTip& tip);

  // Steps with a stationary tip until max free-node speed < vel_tol or
  // max_steps is reached. The convergence check runs before each step.
  SettleResult settle(const GripperTip& tip, long max_steps, double vel_tol);

  const TetMesh& mesh() const { return mesh_; }
  const MaterialParams& material() const { return material_; }
  const SimConfig& config() const { return config_; }
  const Stiffness& stiffness() const { return stiffness_; }
  int micro_steps() const { return micro_steps_; }
  const std::vector<Vec3>& grasp_offsets() const { return grasp_offsets_; }
  Vec3 initial_tip_position() const { return initial_tip_; }

  // Replaces node positions/velocities (topology must match); used by reset.
  void set_state(const TetMesh& mesh);

  double mechanical_energy(const GripperTip& tip) const;  // kinetic + elastic (+ gravity PE)
  double max_free_node_speed() const;

 private:
  void micro_step(const GripperTip& tip, double dt);

  TetMesh mesh_;
  MaterialParams material_;
  SimConfig config_;
  Stiffness stiffness_;
  std::vector<Vec3> grasp_offsets_;  // node_pos - tip at construction
  std::vector<char> constrained_;    // pinned or grasped
  std::vector<Vec3> pinned_pos_;
  std::vector<Vec3> force_scratch_;
  Vec3 initial_tip_ = Vec3::Zero();
  int micro_steps_ = 1;
};

// Top-face center: the natural tip position for a freshly built bar.
Vec3 bar_tip_position(const TetMesh& mesh);

// Plotting export: "tetmesh v1 <n_nodes> <n_tets> <n_edges>" header, node
// lines "x y z vx vy vz", tet lines, edge lines, pinned/grasped index lines.
void save_mesh(const TetMesh& mesh, std::ostream& out);
void save_mesh_file(const TetMesh& mesh, const std::string& path);
TetMesh load_mesh(std::istream& in);  // geometry-only reader for the dump format

}  // namespace dlorl
