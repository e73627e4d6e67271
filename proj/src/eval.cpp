#include "dlorl/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include <json.hpp>

namespace dlorl {

void EvalConfig::validate() const {
  if (episodes < 1) throw std::invalid_argument("eval: episodes must be >= 1");
  if (max_steps < 1) throw std::invalid_argument("eval: max_steps must be >= 1");
  if (!(threshold > 0.0)) throw std::invalid_argument("eval: threshold must be > 0");
  if (workers < 1) throw std::invalid_argument("eval: workers must be >= 1");
}

Vec3 greedy_action(const DdpgAgent& agent, const Eigen::VectorXd& state) {
  const Eigen::VectorXd a = forward(agent.actor(), state);
  return Vec3(a(0), a(1), a(2));
}

namespace {

std::int64_t draw_goal_index(std::uint64_t seed, long episode, std::uint64_t count) {
  Rng rng(derive_seed(seed, 0xE7A1ull + static_cast<std::uint64_t>(episode)));
  return static_cast<std::int64_t>(rng.randint(count));
}

EvalEpisode run_episode(const DdpgAgent& agent, Environment& env, const GoalRecord& goal,
                        long episode, const EvalConfig& config, bool reinitialize, long& diverged) {
  EvalEpisode rec;
  rec.episode = episode;
  rec.goal_id = goal.id;
  Observation obs = env.reset(goal.targets, reinitialize, goal.id);
  Eigen::VectorXd state = obs.flatten();
  rec.final_error = env.current_mean_distance();
  for (int s = 0; s < config.max_steps; ++s) {
    const Vec3 a = greedy_action(agent, state);
    try {
      const StepResult res = env.step(Action{a});
      state = res.observation.flatten();
      rec.final_error = res.info.mean_distance;
      ++rec.steps_taken;
      if (res.done) {
        rec.done = true;
        break;
      }
    } catch (const SimulationDiverged& ex) {
      ++diverged;
      rec.done = false;
      std::cerr << "[eval] episode " << episode << ": " << ex.what() << "\n";
      break;
    }
  }
  return rec;
}

void finalize_metrics(EvalReport& report) {
  const long n = static_cast<long>(report.episodes.size());
  long done_count = 0;
  double sum = 0.0;
  double best = std::numeric_limits<double>::infinity();
  for (const auto& e : report.episodes) {
    if (e.done) ++done_count;
    sum += e.final_error;
    best = std::min(best, e.final_error);
  }
  const double mean = sum / n;
  double var = 0.0;
  for (const auto& e : report.episodes) var += (e.final_error - mean) * (e.final_error - mean);
  report.done_pct = 100.0 * static_cast<double>(done_count) / static_cast<double>(n);
  report.mean_error = mean;
  report.std_error = std::sqrt(var / n);
  report.best_error = best;
}

}  // namespace

EvalReport run_eval(const DdpgAgent& agent,
                    const std::function<std::unique_ptr<Environment>()>& make_env,
                    const DeformationDb& db, const EvalConfig& config) {
  config.validate();
  if (db.records.empty()) throw EvalError("eval: empty goal database");

  EvalReport report;
  report.episodes.resize(config.episodes);

  auto prepare_env = [&]() {
    auto env = make_env();
    env->set_distance_threshold(config.threshold);
    env->set_max_episode_steps(config.max_steps);
    return env;
  };

  auto env0 = prepare_env();
  check_fingerprint(db, env0->fingerprint(), config.strict_fingerprint);

  const auto count = static_cast<std::uint64_t>(db.records.size());
  if (config.reinitialize && config.workers > 1) {
    std::vector<std::thread> threads;
    std::vector<long> diverged(config.workers, 0);
    std::vector<std::string> errors(config.workers);
    for (int w = 0; w < config.workers; ++w) {
      threads.emplace_back([&, w]() {
        try {
          auto owned = (w == 0) ? std::move(env0) : prepare_env();
          for (long e = w; e < config.episodes; e += config.workers) {
            const GoalRecord& goal = db.records[draw_goal_index(config.seed, e, count)];
            report.episodes[e] =
                run_episode(agent, *owned, goal, e, config, /*reinitialize=*/true, diverged[w]);
          }
        } catch (const std::exception& ex) {
          errors[w] = ex.what();
        }
      });
    }
    for (auto& t : threads) t.join();
    for (const auto& err : errors)
      if (!err.empty()) throw EvalError("eval worker failed: " + err);
    for (long d : diverged) report.diverged += d;
  } else {
    for (long e = 0; e < config.episodes; ++e) {
      const GoalRecord& goal = db.records[draw_goal_index(config.seed, e, count)];
      const bool reinit = config.reinitialize || e == 0;
      report.episodes[e] = run_episode(agent, *env0, goal, e, config, reinit, report.diverged);
    }
  }
  finalize_metrics(report);
  return report;
}

void write_episode_csv(const EvalReport& report, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw EvalError("cannot open episode csv: " + path);
  out.precision(17);
  out << "episode,goal_id,steps_taken,done,final_error_m\n";
  for (const auto& e : report.episodes)
    out << e.episode << ',' << e.goal_id << ',' << e.steps_taken << ',' << (e.done ? 1 : 0) << ','
        << e.final_error << '\n';
}

void write_report(const EvalReport& report, const EvalConfig& config, std::ostream& out) {
  out.precision(17);
  out << "dlorl evaluation report\n";
  out << "  episodes             " << report.episodes.size() << "\n";
  out << "  max steps            " << config.max_steps << "\n";
  out << "  threshold (m)        " << config.threshold << "\n";
  out << "  reinitialize         " << (config.reinitialize ? "yes" : "no") << "\n";
  out << "  done (%)             " << report.done_pct << "\n";
  out << "  mean error +/- sigma " << report.mean_error << " +/- " << report.std_error << " m\n";
  out << "  best (m)             " << report.best_error << "\n";
  out << "  diverged episodes    " << report.diverged << "\n";
  nlohmann::json j;
  j["version"] = "eval-report v1";
  j["episodes"] = report.episodes.size();
  j["max_steps"] = config.max_steps;
  j["threshold_m"] = config.threshold;
  j["reinitialize"] = config.reinitialize;
  j["seed"] = config.seed;
  j["done_pct"] = report.done_pct;
  j["mean_error_m"] = report.mean_error;
  j["std_error_m"] = report.std_error;
  j["best_error_m"] = report.best_error;
  j["diverged"] = report.diverged;
  out << j.dump() << "\n";
}

void write_report_file(const EvalReport& report, const EvalConfig& config,
                       const std::string& path) {
  std::ofstream out(path);
  if (!out) throw EvalError("cannot open report file: " + path);
  write_report(report, config, out);
}

EvalMetrics recompute_metrics_from_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw EvalError("cannot open episode csv: " + path);
  std::string line;
  if (!std::getline(in, line) || line.rfind("episode,", 0) != 0)
    throw EvalError("episode csv: bad header");
  EvalMetrics m;
  std::vector<double> errors;
  long done = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string field;
    std::vector<std::string> fields;
    while (std::getline(row, field, ',')) fields.push_back(field);
    if (fields.size() != 5) throw EvalError("episode csv: malformed row");
    done += std::stol(fields[3]);
    errors.push_back(std::stod(fields[4]));
  }
  if (errors.empty()) throw EvalError("episode csv: no rows");
  m.episodes = static_cast<long>(errors.size());
  m.done_pct = 100.0 * static_cast<double>(done) / static_cast<double>(m.episodes);
  double sum = 0.0;
  double best = std::numeric_limits<double>::infinity();
  for (double e : errors) {
    sum += e;
    best = std::min(best, e);
  }
  m.mean_error = sum / m.episodes;
  double var = 0.0;
  for (double e : errors) var += (e - m.mean_error) * (e - m.mean_error);
  m.std_error = std::sqrt(var / m.episodes);
  m.best_error = best;
  return m;
}

}  // namespace dlorl
