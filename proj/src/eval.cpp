#include "exohand/eval.hpp"

#include <cmath>
#include <sstream>

namespace exohand {

json trace_to_json(const EpisodeTrace& trace) {
  json steps = json::array();
  for (const auto& s : trace.steps) {
    steps.push_back({s.t, s.obj_pos_err, s.obj_ang_err, s.demo_err, s.reward, s.success,
                     to_json(s.wrist), to_json(s.middle_pip)});
  }
  return {{"condition", trace.condition},
          {"seed", trace.seed},
          {"fields", {"t", "obj_pos_err", "obj_ang_err", "demo_err", "reward", "success",
                      "wrist", "middle_pip"}},
          {"steps", steps}};
}

EpisodeTrace trace_from_json(const json& j) {
  EpisodeTrace tr;
  try {
    tr.condition = j.at("condition").get<std::string>();
    tr.seed = j.at("seed").get<std::uint64_t>();
    for (const auto& s : j.at("steps")) {
      TraceStep st;
      st.t = s.at(0).get<double>();
      st.obj_pos_err = s.at(1).get<double>();
      st.obj_ang_err = s.at(2).get<double>();
      st.demo_err = s.at(3).get<double>();
      st.reward = s.at(4).get<double>();
      st.success = s.at(5).get<bool>();
      st.wrist = vec3_from_json(s.at(6));
      st.middle_pip = vec3_from_json(s.at(7));
      tr.steps.push_back(st);
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("trace: ") + e.what());
  }
  return tr;
}

std::string trace_csv(const EpisodeTrace& trace) {
  std::ostringstream os;
  os.precision(10);
  os << "t,obj_err,demo_err,reward,success\n";
  for (const auto& s : trace.steps) {
    os << s.t << ',' << s.obj_pos_err << ',' << s.demo_err << ',' << s.reward << ','
       << (s.success ? 1 : 0) << '\n';
  }
  return os.str();
}

double success_rate(const EpisodeTrace& trace, double pos_tol) {
  if (trace.steps.empty()) throw ValidationError("success_rate of an empty trace");
  std::size_t ok = 0;
  for (const auto& s : trace.steps) ok += s.obj_pos_err <= pos_tol ? 1 : 0;
  return static_cast<double>(ok) / static_cast<double>(trace.steps.size());
}

Vec accumulated_error(const EpisodeTrace& trace, double punish, double far) {
  if (!(far > 0.0)) throw ConfigError("far threshold must be > 0");
  Vec c(static_cast<Eigen::Index>(trace.steps.size()));
  double acc = 0.0;
  for (std::size_t i = 0; i < trace.steps.size(); ++i) {
    const double e = trace.steps[i].obj_pos_err;
    acc += e + (e > far ? punish : 0.0);
    c[static_cast<Eigen::Index>(i)] = acc;
  }
  return c;
}

MeanStd pip_wrist_distance(const std::vector<EpisodeTrace>& traces) {
  if (traces.empty()) throw ValidationError("pip_wrist_distance needs at least one trace");
  const std::size_t len = traces.front().steps.size();
  for (const auto& tr : traces) {
    if (tr.steps.size() != len) throw ValidationError("traces have inconsistent lengths");
  }
  const auto n = static_cast<Eigen::Index>(traces.size());
  Mat d(static_cast<Eigen::Index>(len), n);
  for (Eigen::Index k = 0; k < n; ++k) {
    const auto& steps = traces[static_cast<std::size_t>(k)].steps;
    for (std::size_t t = 0; t < len; ++t) {
      d(static_cast<Eigen::Index>(t), k) = (steps[t].middle_pip - steps[t].wrist).norm();
    }
  }
  MeanStd r;
  r.mean = d.rowwise().mean();
  if (n > 1) {
    r.std = ((d.colwise() - r.mean).array().square().rowwise().sum() / static_cast<double>(n - 1))
                .sqrt()
                .matrix();
  } else {
    r.std = Vec::Zero(static_cast<Eigen::Index>(len));
  }
  return r;
}

double restoration_ratio(double glove_rate, double healthy_rate) {
  if (!(healthy_rate > 0.0)) {
    throw ValidationError("restoration ratio is undefined for a zero healthy success rate");
  }
  return glove_rate / healthy_rate;
}

void EvalConfig::validate() const {
  if (trials < 1) throw ConfigError("eval trials must be >= 1");
  if (!(far > 0.0)) throw ConfigError("eval far threshold must be > 0");
  if (!(pos_tol > 0.0)) throw ConfigError("eval pos_tol must be > 0");
  if (punish < 0.0) throw ConfigError("eval punish must be >= 0");
}

json eval_config_to_json(const EvalConfig& c) {
  return {{"trials", c.trials}, {"first_seed", c.first_seed}, {"punish", c.punish},
          {"far", c.far},       {"pos_tol", c.pos_tol},       {"task_threshold", c.task_threshold}};
}

EvalConfig eval_config_from_json(const json& j) {
  EvalConfig c;
  try {
    c.trials = j.value("trials", c.trials);
    c.first_seed = j.value("first_seed", c.first_seed);
    c.punish = j.value("punish", c.punish);
    c.far = j.value("far", c.far);
    c.pos_tol = j.value("pos_tol", c.pos_tol);
    c.task_threshold = j.value("task_threshold", c.task_threshold);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("eval config: ") + e.what());
  }
  c.validate();
  return c;
}

const ConditionMetrics* MetricReport::find(const std::string& condition) const {
  for (const auto& c : conditions) {
    if (c.condition == condition) return &c;
  }
  return nullptr;
}

json MetricReport::to_json() const {
  json conds = json::array();
  for (const auto& c : conditions) {
    conds.push_back({{"condition", c.condition},
                     {"trials", c.trials},
                     {"success_rate", c.success_rate},
                     {"success_rate_std", c.success_rate_std},
                     {"task_success_fraction", c.task_success_fraction},
                     {"trial_success", c.trial_success},
                     {"final_accumulated_error",
                      c.accumulated_error.size() ? c.accumulated_error.tail(1)[0] : 0.0},
                     {"accumulated_error", exohand::to_json(c.accumulated_error)},
                     {"pip_wrist_mean", exohand::to_json(c.pip_wrist_mean)},
                     {"pip_wrist_std", exohand::to_json(c.pip_wrist_std)}});
  }
  json j = {{"dt", dt}, {"conditions", conds}};
  if (restoration_ratio) j["restoration_ratio"] = *restoration_ratio;
  return j;
}

std::string MetricReport::pip_wrist_csv() const {
  std::ostringstream os;
  os.precision(10);
  os << 't';
  for (const auto& c : conditions) os << ',' << c.condition << "_mean," << c.condition << "_std";
  os << '\n';
  const Eigen::Index len = conditions.empty() ? 0 : conditions.front().pip_wrist_mean.size();
  for (Eigen::Index t = 0; t < len; ++t) {
    os << static_cast<double>(t + 1) * dt;
    for (const auto& c : conditions) os << ',' << c.pip_wrist_mean[t] << ',' << c.pip_wrist_std[t];
    os << '\n';
  }
  return os.str();
}

std::string MetricReport::accumulated_error_csv() const {
  std::ostringstream os;
  os.precision(10);
  os << 't';
  for (const auto& c : conditions) os << ',' << c.condition;
  os << '\n';
  const Eigen::Index len = conditions.empty() ? 0 : conditions.front().accumulated_error.size();
  for (Eigen::Index t = 0; t < len; ++t) {
    os << static_cast<double>(t + 1) * dt;
    for (const auto& c : conditions) os << ',' << c.accumulated_error[t];
    os << '\n';
  }
  return os.str();
}

MetricReport build_report(const std::map<std::string, std::vector<EpisodeTrace>>& traces,
                          const EvalConfig& cfg, double dt) {
  MetricReport rep;
  rep.dt = dt;
  // Fixed presentation order.
  for (const char* label : {kHealthy, kWeak, kWeakGlove}) {
    const auto it = traces.find(label);
    if (it == traces.end() || it->second.empty()) continue;
    const auto& trs = it->second;
    ConditionMetrics m;
    m.condition = label;
    m.trials = static_cast<int>(trs.size());
    Vec acc;
    for (const auto& tr : trs) {
      const double r = success_rate(tr, cfg.pos_tol);
      m.trial_success.push_back(r);
      m.success_rate += r / m.trials;
      if (task_successful(r, cfg.task_threshold)) m.task_success_fraction += 1.0 / m.trials;
      const Vec c = accumulated_error(tr, cfg.punish, cfg.far);
      if (acc.size() == 0) {
        acc = c;
      } else {
        if (c.size() != acc.size()) throw ValidationError("traces have inconsistent lengths");
        acc += c;
      }
    }
    m.accumulated_error = acc / static_cast<double>(m.trials);
    if (m.trials > 1) {
      double ss = 0.0;
      for (double r : m.trial_success) ss += (r - m.success_rate) * (r - m.success_rate);
      m.success_rate_std = std::sqrt(ss / (m.trials - 1));
    }
    const MeanStd pw = pip_wrist_distance(trs);
    m.pip_wrist_mean = pw.mean;
    m.pip_wrist_std = pw.std;
    rep.conditions.push_back(std::move(m));
  }
  for (const auto& [label, _] : traces) {
    if (label != kHealthy && label != kWeak && label != kWeakGlove) {
      throw ValidationError("unknown evaluation condition: " + label);
    }
  }
  const ConditionMetrics* healthy = rep.find(kHealthy);
  const ConditionMetrics* glove = rep.find(kWeakGlove);
  if (healthy && glove) {
    rep.restoration_ratio = restoration_ratio(glove->success_rate, healthy->success_rate);
  }
  return rep;
}

EpisodeTrace run_episode(Environment& env, const HandEnv& hand,
                         const std::function<Vec(const Vec&)>& policy, std::uint64_t seed,
                         const std::string& condition) {
  EpisodeTrace tr;
  tr.condition = condition;
  tr.seed = seed;
  const int horizon = hand.config().horizon;
  const double dt = hand.config().dt;
  const int mid_pip = keypoint_index(Finger::kMiddle, Knuckle::kPip);
  tr.steps.reserve(static_cast<std::size_t>(horizon));
  Vec obs = env.reset(seed);
  bool done = false;
  while (!done) {
    StepResult r;
    try {
      r = env.step(policy(obs));
    } catch (const StepError&) {
      break;
    }
    const Keypoints kp = hand.keypoints();
    TraceStep s;
    s.t = hand.step_index() * dt;
    s.obj_pos_err = r.info.obj_pos_err;
    s.obj_ang_err = r.info.obj_ang_err;
    s.demo_err = r.info.demo_err;
    s.reward = r.reward;
    s.success = r.info.success_step;
    s.wrist = kp.col(kWristKeypoint);
    s.middle_pip = kp.col(mid_pip);
    tr.steps.push_back(s);
    obs = std::move(r.obs);
    done = r.done;
  }
  if (tr.steps.empty()) throw NumericalError("episode diverged on its first step");
  while (static_cast<int>(tr.steps.size()) < horizon) {
    TraceStep s = tr.steps.back();
    s.t += dt;
    tr.steps.push_back(s);
  }
  return tr;
}

std::vector<EpisodeTrace> evaluate_condition(const std::string& condition,
                                             const EvalSetup& setup, const Agent& hand_agent,
                                             const Agent* glove_agent, const EvalConfig& cfg,
                                             ThreadPool* pool) {
  cfg.validate();
  const bool weak = condition == kWeak || condition == kWeakGlove;
  if (condition != kHealthy && !weak) {
    throw ConfigError("unknown evaluation condition: " + condition);
  }
  if (condition == kWeakGlove && !glove_agent) {
    throw ConfigError("weak+glove evaluation needs a glove policy");
  }
  const int workers = pool ? std::min(pool->threads(), cfg.trials) : 1;
  const auto frozen = std::make_shared<const FrozenPolicy>(hand_agent);
  std::vector<EpisodeTrace> out(static_cast<std::size_t>(cfg.trials));
  auto run_block = [&](int w) {
    const WeaknessProfile profile =
        weak ? setup.weakness : WeaknessProfile::identity(setup.scene.hand.num_muscles());
    auto hand = std::make_unique<HandEnv>(setup.scene, setup.env, setup.demo, profile);
    std::unique_ptr<GloveEnv> genv;
    if (condition == kWeakGlove) {
      genv = std::make_unique<GloveEnv>(std::move(hand), frozen, setup.glove);
    }
    for (int k = w; k < cfg.trials; k += workers) {
      const std::uint64_t seed = cfg.first_seed + static_cast<std::uint64_t>(k);
      auto& slot = out[static_cast<std::size_t>(k)];
      if (genv) {
        slot = run_episode(
            *genv, genv->hand(), [&](const Vec& o) { return glove_agent->act(o); }, seed,
            condition);
      } else {
        slot = run_episode(
            *hand, *hand, [&](const Vec& o) { return hand_agent.act(o); }, seed, condition);
      }
    }
  };
  if (pool && workers > 1) {
    pool->parallel_for(workers, run_block);
  } else {
    run_block(0);
  }
  return out;
}

}  // namespace exohand
