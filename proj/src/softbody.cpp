#include "dlorl/softbody.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

namespace dlorl {

void MaterialParams::validate() const {
  if (!(young_modulus > 0.0)) throw std::invalid_argument("material: young_modulus must be > 0");
  if (!(poisson_ratio >= 0.0 && poisson_ratio < 0.5))
    throw std::invalid_argument("material: poisson_ratio must be in [0, 0.5)");
  if (!(total_mass > 0.0)) throw std::invalid_argument("material: total_mass must be > 0");
  if (!(damping_ratio >= 0.0)) throw std::invalid_argument("material: damping_ratio must be >= 0");
  if (!(sim_dt > 0.0)) throw std::invalid_argument("material: sim_dt must be > 0");
}

void TetMesh::validate(double expected_total_mass) const {
  const int n = node_count();
  if (static_cast<int>(node_vel.size()) != n || static_cast<int>(node_mass.size()) != n)
    throw std::invalid_argument("mesh: node array size mismatch");
  for (const auto& t : tets)
    for (int idx : t)
      if (idx < 0 || idx >= n) throw std::invalid_argument("mesh: tet index out of range");
  if (tets.size() != tet_rest_volume.size())
    throw std::invalid_argument("mesh: rest volume count mismatch");
  for (double v : tet_rest_volume)
    if (!(v > 0.0)) throw MeshBuildError("mesh: non-positive tet rest volume");
  for (const auto& e : edges) {
    if (e.a < 0 || e.a >= n || e.b < 0 || e.b >= n)
      throw std::invalid_argument("mesh: edge index out of range");
    if (!(e.rest_length > 0.0)) throw MeshBuildError("mesh: non-positive edge rest length");
  }
  for (int p : pinned)
    if (std::binary_search(grasped.begin(), grasped.end(), p))
      throw std::invalid_argument("mesh: pinned and grasped sets overlap");
  if (expected_total_mass >= 0.0) {
    double sum = 0.0;
    for (double m : node_mass) sum += m;
    if (std::abs(sum - expected_total_mass) > 1e-9 * expected_total_mass)
      throw std::invalid_argument("mesh: node masses do not sum to total mass");
  }
}

namespace {

double signed_volume(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d) {
  return (b - a).cross(c - a).dot(d - a) / 6.0;
}

// Classic 5-tet split of a unit cell: central tet on the even-parity
// corners plus one corner tet at each odd-parity corner. Odd cells are
// mirrored in x so diagonals on shared faces coincide.
constexpr int kEvenSplit[5][4] = {
    {0b000, 0b110, 0b101, 0b011},
    {0b100, 0b000, 0b110, 0b101},
    {0b010, 0b000, 0b110, 0b011},
    {0b001, 0b000, 0b101, 0b011},
    {0b111, 0b110, 0b101, 0b011},
};

}  // namespace

TetMesh build_bar_mesh(double length, double cross_section, std::array<int, 3> cells,
                       const MaterialParams& material) {
  material.validate();
  if (!(length > 0.0) || !(cross_section > 0.0))
    throw std::invalid_argument("build_bar_mesh: dimensions must be > 0");
  const int nx = cells[0], ny = cells[1], nz = cells[2];
  if (nx < 1 || ny < 1 || nz < 1)
    throw std::invalid_argument("build_bar_mesh: need >= 1 cell per axis");

  TetMesh mesh;
  const int sx = nx + 1, sy = ny + 1, sz = nz + 1;
  auto node_id = [&](int i, int j, int k) { return i + sx * (j + sy * k); };

  mesh.node_pos.reserve(static_cast<size_t>(sx) * sy * sz);
  for (int k = 0; k < sz; ++k)
    for (int j = 0; j < sy; ++j)
      for (int i = 0; i < sx; ++i)
        mesh.node_pos.emplace_back(-cross_section / 2.0 + cross_section * i / nx,
                                   -cross_section / 2.0 + cross_section * j / ny,
                                   length * k / nz);
  const int n = static_cast<int>(mesh.node_pos.size());
  mesh.node_vel.assign(n, Vec3::Zero());
  mesh.node_mass.assign(n, material.total_mass / n);

  for (int k = 0; k < nz; ++k)
    for (int j = 0; j < ny; ++j)
      for (int i = 0; i < nx; ++i) {
        const bool mirror = ((i + j + k) % 2) != 0;
        for (const auto& corners : kEvenSplit) {
          std::array<int, 4> tet;
          for (int v = 0; v < 4; ++v) {
            int cx = (corners[v] >> 2) & 1;
            const int cy = (corners[v] >> 1) & 1;
            const int cz = corners[v] & 1;
            if (mirror) cx = 1 - cx;
            tet[v] = node_id(i + cx, j + cy, k + cz);
          }
          double vol = signed_volume(mesh.node_pos[tet[0]], mesh.node_pos[tet[1]],
                                     mesh.node_pos[tet[2]], mesh.node_pos[tet[3]]);
          if (vol < 0.0) {
            std::swap(tet[2], tet[3]);
            vol = -vol;
          }
          if (!(vol > 0.0)) throw MeshBuildError("build_bar_mesh: degenerate tetrahedron");
          mesh.tets.push_back(tet);
          mesh.tet_rest_volume.push_back(vol);
        }
      }

  std::map<std::pair<int, int>, double> edge_set;
  for (const auto& t : mesh.tets)
    for (int a = 0; a < 4; ++a)
      for (int b = a + 1; b < 4; ++b) {
        const int lo = std::min(t[a], t[b]), hi = std::max(t[a], t[b]);
        edge_set.emplace(std::make_pair(lo, hi),
                         (mesh.node_pos[lo] - mesh.node_pos[hi]).norm());
      }
  mesh.edges.reserve(edge_set.size());
  for (const auto& [key, rest] : edge_set) mesh.edges.push_back({key.first, key.second, rest});

  for (int j = 0; j < sy; ++j)
    for (int i = 0; i < sx; ++i) {
      mesh.pinned.push_back(node_id(i, j, 0));
      mesh.grasped.push_back(node_id(i, j, nz));
    }
  std::sort(mesh.pinned.begin(), mesh.pinned.end());
  std::sort(mesh.grasped.begin(), mesh.grasped.end());

  mesh.validate(material.total_mass);
  return mesh;
}

Stiffness derive_stiffness(const TetMesh& mesh, const MaterialParams& material) {
  material.validate();
  Stiffness s;
  double v_total = 0.0;
  for (double v : mesh.tet_rest_volume) v_total += v;
  const double edge_count = static_cast<double>(mesh.edges.size());
  s.edge_k.reserve(mesh.edges.size());
  double k_sum = 0.0;
  for (const auto& e : mesh.edges) {
    const double k = material.young_modulus * v_total / (edge_count * e.rest_length * e.rest_length);
    s.edge_k.push_back(k);
    k_sum += k;
  }
  s.mean_edge_k = mesh.edges.empty() ? 0.0 : k_sum / edge_count;
  s.volume_k = material.young_modulus / (3.0 * (1.0 - 2.0 * material.poisson_ratio));
  double mean_mass = 0.0;
  for (double m : mesh.node_mass) mean_mass += m;
  if (!mesh.node_mass.empty()) mean_mass /= static_cast<double>(mesh.node_mass.size());
  s.damping_c = 2.0 * material.damping_ratio * std::sqrt(s.mean_edge_k * mean_mass);
  return s;
}

double elastic_energy(const TetMesh& mesh, const Stiffness& stiffness) {
  double e = 0.0;
  for (size_t i = 0; i < mesh.edges.size(); ++i) {
    const Edge& edge = mesh.edges[i];
    const double len = (mesh.node_pos[edge.a] - mesh.node_pos[edge.b]).norm();
    const double d = len - edge.rest_length;
    e += 0.5 * stiffness.edge_k[i] * d * d;
  }
  for (size_t t = 0; t < mesh.tets.size(); ++t) {
    const auto& tet = mesh.tets[t];
    const double v = signed_volume(mesh.node_pos[tet[0]], mesh.node_pos[tet[1]],
                                   mesh.node_pos[tet[2]], mesh.node_pos[tet[3]]);
    const double d = v - mesh.tet_rest_volume[t];
    e += 0.5 * stiffness.volume_k * d * d / mesh.tet_rest_volume[t];
  }
  return e;
}

namespace {

void accumulate_forces(const TetMesh& mesh, const Stiffness& stiffness, bool with_damping,
                       std::vector<Vec3>& forces) {
  forces.assign(mesh.node_pos.size(), Vec3::Zero());
  for (size_t i = 0; i < mesh.edges.size(); ++i) {
    const Edge& edge = mesh.edges[i];
    const Vec3 d = mesh.node_pos[edge.a] - mesh.node_pos[edge.b];
    const double len = d.norm();
    if (len <= 0.0) continue;
    const Vec3 f = (stiffness.edge_k[i] * (len - edge.rest_length) / len) * d;
    forces[edge.a] -= f;
    forces[edge.b] += f;
  }
  for (size_t t = 0; t < mesh.tets.size(); ++t) {
    const auto& tet = mesh.tets[t];
    const Vec3& x0 = mesh.node_pos[tet[0]];
    const Vec3 e1 = mesh.node_pos[tet[1]] - x0;
    const Vec3 e2 = mesh.node_pos[tet[2]] - x0;
    const Vec3 e3 = mesh.node_pos[tet[3]] - x0;
    const double v = e1.cross(e2).dot(e3) / 6.0;
    const double coeff = stiffness.volume_k * (v - mesh.tet_rest_volume[t]) / mesh.tet_rest_volume[t];
    const Vec3 g1 = e2.cross(e3) / 6.0;
    const Vec3 g2 = e3.cross(e1) / 6.0;
    const Vec3 g3 = e1.cross(e2) / 6.0;
    forces[tet[1]] -= coeff * g1;
    forces[tet[2]] -= coeff * g2;
    forces[tet[3]] -= coeff * g3;
    forces[tet[0]] += coeff * (g1 + g2 + g3);
  }
  if (with_damping && stiffness.damping_c > 0.0)
    for (size_t i = 0; i < mesh.node_vel.size(); ++i)
      forces[i] -= stiffness.damping_c * mesh.node_vel[i];
}

}  // namespace

std::vector<Vec3> internal_forces(const TetMesh& mesh, const Stiffness& stiffness,
                                  bool with_damping) {
  std::vector<Vec3> forces;
  accumulate_forces(mesh, stiffness, with_damping, forces);
  return forces;
}

double kinetic_energy(const TetMesh& mesh) {
  double e = 0.0;
  for (size_t i = 0; i < mesh.node_vel.size(); ++i)
    e += 0.5 * mesh.node_mass[i] * mesh.node_vel[i].squaredNorm();
  return e;
}

Vec3 bar_tip_position(const TetMesh& mesh) {
  if (mesh.grasped.empty()) throw std::invalid_argument("bar_tip_position: no grasped nodes");
  Vec3 c = Vec3::Zero();
  for (int g : mesh.grasped) c += mesh.node_pos[g];
  return c / static_cast<double>(mesh.grasped.size());
}

SoftBarSim::SoftBarSim(TetMesh mesh, const MaterialParams& material, const SimConfig& config)
    : mesh_(std::move(mesh)), material_(material), config_(config) {
  material_.validate();
  mesh_.validate();
  stiffness_ = derive_stiffness(mesh_, material_);

  constrained_.assign(mesh_.node_pos.size(), 0);
  for (int p : mesh_.pinned) constrained_[p] = 1;
  for (int g : mesh_.grasped) constrained_[g] = 1;
  pinned_pos_.reserve(mesh_.pinned.size());
  for (int p : mesh_.pinned) pinned_pos_.push_back(mesh_.node_pos[p]);
  if (!mesh_.grasped.empty()) {
    initial_tip_ = bar_tip_position(mesh_);
    grasp_offsets_.reserve(mesh_.grasped.size());
    for (int g : mesh_.grasped) grasp_offsets_.push_back(mesh_.node_pos[g] - initial_tip_);
  }

  if (config_.micro_steps_override > 0) {
    micro_steps_ = config_.micro_steps_override;
  } else {
    // Gershgorin-style bound on the per-node stiffness diagonal at rest.
    std::vector<double> k_node(mesh_.node_pos.size(), 0.0);
    for (size_t i = 0; i < mesh_.edges.size(); ++i) {
      k_node[mesh_.edges[i].a] += stiffness_.edge_k[i];
      k_node[mesh_.edges[i].b] += stiffness_.edge_k[i];
    }
    for (size_t t = 0; t < mesh_.tets.size(); ++t) {
      const auto& tet = mesh_.tets[t];
      const Vec3& x0 = mesh_.node_pos[tet[0]];
      const Vec3 e1 = mesh_.node_pos[tet[1]] - x0;
      const Vec3 e2 = mesh_.node_pos[tet[2]] - x0;
      const Vec3 e3 = mesh_.node_pos[tet[3]] - x0;
      const Vec3 g1 = e2.cross(e3) / 6.0;
      const Vec3 g2 = e3.cross(e1) / 6.0;
      const Vec3 g3 = e1.cross(e2) / 6.0;
      const double kv = stiffness_.volume_k / mesh_.tet_rest_volume[t];
      k_node[tet[1]] += kv * g1.squaredNorm();
      k_node[tet[2]] += kv * g2.squaredNorm();
      k_node[tet[3]] += kv * g3.squaredNorm();
      k_node[tet[0]] += kv * (g1 + g2 + g3).squaredNorm();
    }
    double omega_sq_max = 0.0;
    for (size_t i = 0; i < k_node.size(); ++i)
      omega_sq_max = std::max(omega_sq_max, 2.0 * k_node[i] / mesh_.node_mass[i]);
    if (omega_sq_max > 0.0) {
      const double micro_dt = config_.substep_safety * 2.0 / std::sqrt(omega_sq_max);
      micro_steps_ = std::max(1, static_cast<int>(std::ceil(material_.sim_dt / micro_dt)));
    }
  }
}

void SoftBarSim::set_state(const TetMesh& mesh) {
  if (mesh.node_pos.size() != mesh_.node_pos.size())
    throw std::invalid_argument("set_state: node count mismatch");
  mesh_.node_pos = mesh.node_pos;
  mesh_.node_vel = mesh.node_vel;
  pinned_pos_.clear();
  for (int p : mesh_.pinned) pinned_pos_.push_back(mesh_.node_pos[p]);
}

void SoftBarSim::micro_step(const GripperTip& tip, double dt) {
  accumulate_forces(mesh_, stiffness_, true, force_scratch_);
  const bool gravity = config_.gravity_on;
  for (size_t i = 0; i < mesh_.node_pos.size(); ++i) {
    if (constrained_[i]) continue;
    Vec3 f = force_scratch_[i];
    if (gravity) f += mesh_.node_mass[i] * config_.gravity;
    if (!f.allFinite()) throw SimulationDiverged(static_cast<int>(i));
    mesh_.node_vel[i] += dt / mesh_.node_mass[i] * f;
    mesh_.node_pos[i] += dt * mesh_.node_vel[i];
    if (!mesh_.node_pos[i].allFinite()) throw SimulationDiverged(static_cast<int>(i));
  }
  for (size_t p = 0; p < mesh_.pinned.size(); ++p) {
    mesh_.node_pos[mesh_.pinned[p]] = pinned_pos_[p];
    mesh_.node_vel[mesh_.pinned[p]].setZero();
  }
  for (size_t g = 0; g < mesh_.grasped.size(); ++g) {
    mesh_.node_pos[mesh_.grasped[g]] = tip.position + grasp_offsets_[g];
    mesh_.node_vel[mesh_.grasped[g]] = tip.velocity;
  }
}

void SoftBarSim::step(const GripperTip& tip) {
  // tip is the state at the END of this sim step; micro-steps interpolate
  // the grasped nodes backwards along the tip velocity.
  const double micro_dt = material_.sim_dt / micro_steps_;
  for (int q = 1; q <= micro_steps_; ++q) {
    GripperTip t = tip;
    const double remaining = static_cast<double>(micro_steps_ - q) * micro_dt;
    t.position = tip.position - tip.velocity * remaining;
    micro_step(t, micro_dt);
  }
}

double SoftBarSim::max_free_node_speed() const {
  double s = 0.0;
  for (size_t i = 0; i < mesh_.node_vel.size(); ++i)
    if (!constrained_[i]) s = std::max(s, mesh_.node_vel[i].norm());
  return s;
}

SettleResult SoftBarSim::settle(const GripperTip& tip, long max_steps, double vel_tol) {
  if (max_steps <= 0) throw std::invalid_argument("settle: max_steps must be > 0");
  GripperTip stationary;
  stationary.position = tip.position;
  stationary.velocity.setZero();
  SettleResult result;
  while (true) {
    if (max_free_node_speed() < vel_tol) {
      result.converged = true;
      return result;
    }
    if (result.steps >= max_steps) return result;
    step(stationary);
    ++result.steps;
  }
}

double SoftBarSim::mechanical_energy(const GripperTip&) const {
  double e = kinetic_energy(mesh_) + elastic_energy(mesh_, stiffness_);
  if (config_.gravity_on)
    for (size_t i = 0; i < mesh_.node_pos.size(); ++i)
      e -= mesh_.node_mass[i] * config_.gravity.dot(mesh_.node_pos[i]);
  return e;
}

void save_mesh(const TetMesh& mesh, std::ostream& out) {
  out.precision(17);
  out << "tetmesh v1 " << mesh.node_count() << ' ' << mesh.tets.size() << ' ' << mesh.edges.size()
      << '\n';
  for (int i = 0; i < mesh.node_count(); ++i) {
    const Vec3& p = mesh.node_pos[i];
    const Vec3& v = mesh.node_vel[i];
    out << p.x() << ' ' << p.y() << ' ' << p.z() << ' ' << v.x() << ' ' << v.y() << ' ' << v.z()
        << '\n';
  }
  for (const auto& t : mesh.tets) out << t[0] << ' ' << t[1] << ' ' << t[2] << ' ' << t[3] << '\n';
  for (const auto& e : mesh.edges) out << e.a << ' ' << e.b << ' ' << e.rest_length << '\n';
  out << "pinned " << mesh.pinned.size();
  for (int p : mesh.pinned) out << ' ' << p;
  out << "\ngrasped " << mesh.grasped.size();
  for (int g : mesh.grasped) out << ' ' << g;
  out << '\n';
}

void save_mesh_file(const TetMesh& mesh, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for write: " + path);
  save_mesh(mesh, out);
}

TetMesh load_mesh(std::istream& in) {
  std::string word, version;
  int n = 0;
  size_t n_tets = 0, n_edges = 0;
  in >> word >> version >> n >> n_tets >> n_edges;
  if (word != "tetmesh" || version != "v1")
    throw std::runtime_error("mesh dump: bad header");
  TetMesh mesh;
  mesh.node_pos.resize(n);
  mesh.node_vel.resize(n);
  mesh.node_mass.assign(n, 0.0);
  for (int i = 0; i < n; ++i) {
    Vec3& p = mesh.node_pos[i];
    Vec3& v = mesh.node_vel[i];
    in >> p.x() >> p.y() >> p.z() >> v.x() >> v.y() >> v.z();
  }
  mesh.tets.resize(n_tets);
  for (auto& t : mesh.tets) in >> t[0] >> t[1] >> t[2] >> t[3];
  mesh.tet_rest_volume.assign(n_tets, 0.0);
  for (size_t t = 0; t < n_tets; ++t) {
    const auto& tet = mesh.tets[t];
    mesh.tet_rest_volume[t] = std::abs(signed_volume(mesh.node_pos[tet[0]], mesh.node_pos[tet[1]],
                                                     mesh.node_pos[tet[2]], mesh.node_pos[tet[3]]));
  }
  mesh.edges.resize(n_edges);
  for (auto& e : mesh.edges) in >> e.a >> e.b >> e.rest_length;
  size_t count = 0;
  in >> word >> count;
  mesh.pinned.resize(count);
  for (auto& p : mesh.pinned) in >> p;
  in >> word >> count;
  mesh.grasped.resize(count);
  for (auto& g : mesh.grasped) in >> g;
  if (!in) throw std::runtime_error("mesh dump: truncated");
  return mesh;
}

}  // namespace dlorl
