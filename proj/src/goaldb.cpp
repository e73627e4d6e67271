#include "dlorl/goaldb.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <thread>

namespace dlorl {

namespace {

std::vector<Vec3> lattice_points(const WorkspaceBox& box, const std::array<int, 3>& grid) {
  for (int g : grid)
    if (g < 1) throw std::invalid_argument("generate_db: grid counts must be >= 1");
  auto coord = [&](int axis, int i) {
    if (grid[axis] == 1) return box.center[axis];
    const double lo = box.lo()[axis], hi = box.hi()[axis];
    return lo + (hi - lo) * i / (grid[axis] - 1);
  };
  // boustrophedon: x fastest, direction flipped by the parity of the outer
  // indices so consecutive points stay adjacent
  std::vector<Vec3> points;
  points.reserve(static_cast<size_t>(grid[0]) * grid[1] * grid[2]);
  for (int k = 0; k < grid[2]; ++k) {
    for (int jj = 0; jj < grid[1]; ++jj) {
      const int j = (k % 2 == 0) ? jj : grid[1] - 1 - jj;
      for (int ii = 0; ii < grid[0]; ++ii) {
        const int i = ((jj + k) % 2 == 0) ? ii : grid[0] - 1 - ii;
        points.emplace_back(coord(0, i), coord(1, j), coord(2, k));
      }
    }
  }
  return points;
}

// Drive the tip to `target` with per-component speed-capped control steps,
// then settle. Returns false if settling hit max_steps.
bool drive_and_settle(Environment& env, const Vec3& target, const GenDbConfig& config) {
  const double control_dt = env.config().control_dt;
  const int max_transits = 10000;
  for (int iter = 0; iter < max_transits; ++iter) {
    const Vec3 delta = target - env.tip().position;
    if (delta.cwiseAbs().maxCoeff() <= 0.0) break;
    Action a;
    a.tip_velocity = (delta / control_dt)
                         .cwiseMax(-config.transit_speed)
                         .cwiseMin(config.transit_speed);
    env.step(a);
  }
  const SettleResult settled =
      env.sim().settle(env.tip(), config.settle_max_steps, config.settle_vel_tol);
  return settled.converged;
}

}  // namespace

GenDbResult generate_db(Environment& env, const WorkspaceBox& box, const GenDbConfig& config) {
  GenDbResult result;
  result.db.box = box;
  result.db.selected_node_ids = env.config().selected_node_ids;
  result.db.fingerprint = env.fingerprint();

  const auto points = lattice_points(box, config.grid);
  const Eigen::VectorXd dummy_goal = Eigen::VectorXd::Zero(3 * env.config().m());
  std::int64_t id = 0;
  for (const Vec3& p : points) {
    env.reset(dummy_goal, /*reinitialize=*/true);
    bool ok = false;
    try {
      ok = drive_and_settle(env, p, config);
    } catch (const SimulationDiverged&) {
      ok = false;
    }
    if (!ok) {
      ++result.skipped;
      continue;
    }
    GoalRecord rec;
    rec.id = id++;
    rec.tip_pos = env.tip().position;
    rec.targets = env.selected_positions();
    result.db.records.push_back(std::move(rec));
  }
  return result;
}

GenDbResult generate_db_parallel(const std::function<std::unique_ptr<Environment>()>& make_env,
                                 const WorkspaceBox& box, const GenDbConfig& config) {
  const int workers = std::max(1, config.workers);
  if (workers == 1) {
    auto env = make_env();
    return generate_db(*env, box, config);
  }
  const auto points = lattice_points(box, config.grid);
  struct Slot {
    bool ok = false;
    GoalRecord rec;
  };
  std::vector<Slot> slots(points.size());
  std::vector<int> skipped(workers, 0);
  std::vector<std::thread> threads;
  threads.reserve(workers);
  for (int w = 0; w < workers; ++w) {
    threads.emplace_back([&, w]() {
      auto env = make_env();
      const Eigen::VectorXd dummy_goal = Eigen::VectorXd::Zero(3 * env->config().m());
      for (size_t i = w; i < points.size(); i += workers) {
        env->reset(dummy_goal, true);
        bool ok = false;
        try {
          ok = drive_and_settle(*env, points[i], config);
        } catch (const SimulationDiverged&) {
          ok = false;
        }
        if (!ok) {
          ++skipped[w];
          continue;
        }
        slots[i].ok = true;
        slots[i].rec.tip_pos = env->tip().position;
        slots[i].rec.targets = env->selected_positions();
      }
    });
  }
  for (auto& t : threads) t.join();

  auto env = make_env();
  GenDbResult result;
  result.db.box = box;
  result.db.selected_node_ids = env->config().selected_node_ids;
  result.db.fingerprint = env->fingerprint();
  std::int64_t id = 0;
  for (auto& slot : slots)
    if (slot.ok) {
      slot.rec.id = id++;
      result.db.records.push_back(std::move(slot.rec));
    }
  for (int s : skipped) result.skipped += s;
  return result;
}

void save_db(const DeformationDb& db, std::ostream& out) {
  out.precision(17);
  out << "goaldb v1 m=" << db.m() << " box=" << db.box.center.x() << ' ' << db.box.center.y()
      << ' ' << db.box.center.z() << ' ' << db.box.extents.x() << ' ' << db.box.extents.y() << ' '
      << db.box.extents.z() << " fingerprint=" << std::hex << db.fingerprint << std::dec
      << " count=" << db.records.size() << '\n';
  out << "selected";
  for (int s : db.selected_node_ids) out << ' ' << s;
  out << '\n';
  for (const auto& rec : db.records) {
    out << rec.id << ' ' << rec.tip_pos.x() << ' ' << rec.tip_pos.y() << ' ' << rec.tip_pos.z();
    for (Eigen::Index i = 0; i < rec.targets.size(); ++i) out << ' ' << rec.targets[i];
    out << '\n';
  }
}

void save_db_file(const DeformationDb& db, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw DbError("cannot open for write: " + path);
  save_db(db, out);
}

DeformationDb load_db(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw DbError("goaldb: empty file");
  std::istringstream header(line);
  std::string magic, version, kv;
  header >> magic >> version;
  if (magic != "goaldb" || version != "v1") throw DbError("goaldb: bad header '" + line + "'");

  DeformationDb db;
  int m = -1;
  std::int64_t count = -1;
  while (header >> kv) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw DbError("goaldb: malformed header token '" + kv + "'");
    const std::string key = kv.substr(0, eq);
    std::string value = kv.substr(eq + 1);
    if (key == "m") {
      m = std::stoi(value);
    } else if (key == "box") {
      db.box.center.x() = std::stod(value);
      header >> db.box.center.y() >> db.box.center.z() >> db.box.extents.x() >>
          db.box.extents.y() >> db.box.extents.z();
    } else if (key == "fingerprint") {
      db.fingerprint = std::stoull(value, nullptr, 16);
    } else if (key == "count") {
      count = std::stoll(value);
    } else {
      throw DbError("goaldb: unknown header key '" + key + "'");
    }
  }
  if (m < 1 || count < 0) throw DbError("goaldb: incomplete header");

  if (!std::getline(in, line)) throw DbError("goaldb: missing selected line");
  std::istringstream sel(line);
  std::string tag;
  sel >> tag;
  if (tag != "selected") throw DbError("goaldb: missing selected line");
  int idx;
  while (sel >> idx) db.selected_node_ids.push_back(idx);
  if (static_cast<int>(db.selected_node_ids.size()) != m)
    throw DbError("goaldb: selected count does not match m");

  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    GoalRecord rec;
    rec.targets.resize(3 * m);
    row >> rec.id >> rec.tip_pos.x() >> rec.tip_pos.y() >> rec.tip_pos.z();
    for (int i = 0; i < 3 * m; ++i) row >> rec.targets[i];
    if (!row) throw DbError("goaldb: malformed record line");
    db.records.push_back(std::move(rec));
  }
  if (db.count() != count) throw DbError("goaldb: header count does not match body");
  return db;
}

DeformationDb load_db_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DbError("cannot open for read: " + path);
  return load_db(in);
}

void check_fingerprint(const DeformationDb& db, std::uint64_t expected, bool strict) {
  if (db.fingerprint == expected) return;
  std::ostringstream msg;
  msg << "goaldb fingerprint mismatch: db=" << std::hex << db.fingerprint
      << " environment=" << expected;
  if (strict) throw DbError(msg.str());
}

std::vector<GoalRecord> sample_goals(const DeformationDb& db, int k, Rng& rng,
                                     bool without_replacement) {
  if (k < 0) throw std::invalid_argument("sample_goals: k must be >= 0");
  const auto n = static_cast<std::uint64_t>(db.records.size());
  std::vector<GoalRecord> out;
  out.reserve(k);
  if (without_replacement) {
    if (static_cast<std::uint64_t>(k) > n)
      throw std::invalid_argument("sample_goals: k exceeds record count");
    // partial Fisher-Yates over an index table
    std::vector<std::int64_t> idx(n);
    for (std::uint64_t i = 0; i < n; ++i) idx[i] = static_cast<std::int64_t>(i);
    for (int i = 0; i < k; ++i) {
      const auto j = i + rng.randint(n - i);
      std::swap(idx[i], idx[j]);
      out.push_back(db.records[idx[i]]);
    }
  } else {
    if (n == 0) throw std::invalid_argument("sample_goals: empty database");
    for (int i = 0; i < k; ++i) out.push_back(db.records[rng.randint(n)]);
  }
  return out;
}

}  // namespace dlorl
