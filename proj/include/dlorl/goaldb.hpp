#pragma once

#include <Eigen/Dense>
#include <array>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "dlorl/environment.hpp"
#include "dlorl/rng.hpp"

namespace dlorl {

struct GoalRecord {
  std::int64_t id = 0;
  Vec3 tip_pos = Vec3::Zero();     // gripper position that generated the deformation
  Eigen::VectorXd targets;         // 3m selected-node positions
};

struct DeformationDb {
  WorkspaceBox box;
  std::vector<int> selected_node_ids;
  std::uint64_t fingerprint = 0;
  std::vector<GoalRecord> records;

  int m() const { return static_cast<int>(selected_node_ids.size()); }
  std::int64_t count() const { return static_cast<std::int64_t>(records.size()); }
};

struct DbError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct GenDbConfig {
  std::array<int, 3> grid = {8, 12, 6};
  int workers = 1;
  long settle_max_steps = 50000;
  double settle_vel_tol = 1e-4;
  double transit_speed = 1.0;  // m/s per component cap while driving to a lattice point
};

// Sweeps the tip over a regular lattice in the box (boustrophedon order).
// Each record: reset to pristine, drive the tip to the lattice point with
// clamped velocity steps, settle, store the selected-node positions.
// Lattice points whose settling fails are skipped and counted.
struct GenDbResult {
  DeformationDb db;
  int skipped = 0;
};
GenDbResult generate_db(Environment& env, const WorkspaceBox& box, const GenDbConfig& config);

// Parallel variant: lattice points are sharded across workers, each with a
// private environment built by the factory; records merge in lattice order.
GenDbResult generate_db_parallel(const std::function<std::unique_ptr<Environment>()>& make_env,
                                 const WorkspaceBox& box, const GenDbConfig& config);

// Text format, full-precision decimals:
//   goaldb v1 m=<m> box=<cx cy cz ex ey ez> fingerprint=<hex> count=<n>
//   selected <id...>
//   <id> <tip xyz> <3m targets>
void save_db(const DeformationDb& db, std::ostream& out);
void save_db_file(const DeformationDb& db, const std::string& path);
DeformationDb load_db(std::istream& in);
DeformationDb load_db_file(const std::string& path);

// strict=true turns a fingerprint mismatch into an error; otherwise load_db
// callers may compare manually and warn.
void check_fingerprint(const DeformationDb& db, std::uint64_t expected, bool strict);

std::vector<GoalRecord> sample_goals(const DeformationDb& db, int k, Rng& rng,
                                     bool without_replacement);

}  // namespace dlorl
