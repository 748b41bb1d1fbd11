#include "exohand/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#ifndef EXOHAND_VERSION
#define EXOHAND_VERSION "0.0.0"
#endif

namespace exohand {

namespace fs = std::filesystem;

const char* code_version() { return EXOHAND_VERSION; }

namespace {

constexpr const char* kPrior = "prior-train";
constexpr const char* kFinetune = "finetune";
constexpr const char* kGlove = "glove-train";
constexpr const char* kEvaluate = "evaluate";
constexpr const char* kDemoGen = "demo-gen";

// Checkpoint stage marks.
constexpr const char* kMarkPrior = "prior";
constexpr const char* kMarkFinetuned = "finetuned";
constexpr const char* kMarkGlove = "glove";

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

json demo_source_to_json(const DemoSource& d) {
  json j = {{"name", d.name}};
  if (d.path.empty()) {
    j["spec"] = demo_spec_to_json(d.spec);
  } else {
    j["path"] = d.path;
  }
  return j;
}

DemoSource demo_source_from_json(const json& j) {
  DemoSource d;
  try {
    d.name = j.at("name").get<std::string>();
    d.path = j.value("path", std::string());
    if (j.contains("spec")) d.spec = demo_spec_from_json(j["spec"]);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("demo source: ") + e.what());
  }
  return d;
}

json ppo_section(const PPOConfig& c) {
  json j = ppo_config_to_json(c);
  j.erase("seed");  // stage seeds derive from the global seed
  return j;
}

// Rejects keys of `j` that `schema` does not have. Objects listed in
// `free_form` (dotted paths) are not descended into.
void check_keys(const json& j, const json& schema, const std::string& prefix,
                const std::set<std::string>& free_form) {
  if (!j.is_object() || !schema.is_object()) return;
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
    if (!schema.contains(it.key())) throw ConfigError("unknown config key: " + path);
    if (free_form.count(path)) continue;
    check_keys(it.value(), schema[it.key()], path, free_form);
  }
}

bool is_desk_hand(const HandModel& hand) {
  return hand_model_to_json(hand) == hand_model_to_json(desk_hand_model());
}

}  // namespace

// --- config ----------------------------------------------------------------------

ExperimentConfig ExperimentConfig::desk() {
  ExperimentConfig c;
  DemoSpec reach;
  reach.kind = DemoKind::kReach;
  DemoSpec arc;
  arc.kind = DemoKind::kArc;
  DemoSpec lift_shifted;
  lift_shifted.kind = DemoKind::kLift;
  lift_shifted.object_start = Vec3(0.03, -0.02, 0.0);
  lift_shifted.object_yaw = 0.3;
  lift_shifted.lift_height = 0.10;
  DemoSpec arc_wide;
  arc_wide.kind = DemoKind::kArc;
  arc_wide.object_start = Vec3(-0.03, 0.02, 0.0);
  arc_wide.object_yaw = 0.5;
  arc_wide.arc_radius = 0.12;
  arc_wide.arc_angle = 0.7;
  c.prior_demos = {{"reach", reach, ""},
                   {"arc", arc, ""},
                   {"lift_shifted", lift_shifted, ""},
                   {"arc_wide", arc_wide, ""}};
  DemoSpec lift;
  lift.kind = DemoKind::kLift;
  c.task = {"lift", lift, ""};
  c.glove_model = GloveModel::for_hand(c.scene.hand);

  // Observation noise belongs to prior training only.
  c.env.noise_std_frac = 0.0;

  PPOConfig base;
  base.lr = 1e-3;
  base.epochs = 5;
  base.n_envs = 16;
  base.n_steps = 256;
  base.minibatch_size = 1024;
  base.checkpoint_every = 50;
  c.prior = base;
  c.prior.total_steps = 2'000'000;
  c.finetune = base;
  c.finetune.total_steps = 3'000'000;
  c.glove = base;
  c.glove.total_steps = 2'000'000;
  return c;
}

void ExperimentConfig::validate() const {
  if (run_id.empty() || run_id.find('/') != std::string::npos || run_id == "." ||
      run_id == "..") {
    throw ConfigError("run_id must be a plain directory name");
  }
  if (!(prior_noise >= 0.0)) throw ConfigError("prior_noise must be >= 0");
  env.validate();
  prior.validate();
  finetune.validate();
  glove.validate();
  eval.validate();
  if (prior_demos.empty()) throw ConfigError("prior training needs at least one demonstration");
  std::set<std::string> names;
  auto check_source = [&](const DemoSource& d) {
    if (d.name.empty()) throw ConfigError("demonstrations need a name");
    if (!names.insert(d.name).second) throw ConfigError("duplicate demonstration: " + d.name);
    if (!d.path.empty() && !fs::exists(d.path)) {
      throw ConfigError("demonstration file not found: " + d.path);
    }
  };
  for (const auto& d : prior_demos) check_source(d);
  check_source(task);
  // Stages must appear in pipeline order.
  const std::vector<std::string> order = {kDemoGen, kPrior, kFinetune, kGlove, kEvaluate};
  int last = -1;
  for (const auto& s : stages) {
    const auto it = std::find(order.begin(), order.end(), s);
    if (it == order.end()) throw ConfigError("unknown stage: " + s);
    const int pos = static_cast<int>(it - order.begin());
    if (pos <= last) throw ConfigError("stages out of order at: " + s);
    last = pos;
  }
  WeaknessProfile::uniform(scene.hand.num_muscles(), 1.0);  // hand sanity
  weakness_from_json(weakness, scene.hand);
  glove_model.validate(scene.hand);
}

json experiment_config_to_json(const ExperimentConfig& c) {
  json scene = scene_to_json(c.scene);
  scene.erase("object");
  if (is_desk_hand(c.scene.hand)) scene["hand"] = "desk";
  json prior = json::array();
  for (const auto& d : c.prior_demos) prior.push_back(demo_source_to_json(d));
  return {{"version", kConfigVersion},
          {"run_id", c.run_id},
          {"out_dir", c.out_dir},
          {"seed", c.seed},
          {"scene", scene},
          {"env", env_config_to_json(c.env)},
          {"prior_noise", c.prior_noise},
          {"demos", {{"prior", prior}, {"task", demo_source_to_json(c.task)}}},
          {"ppo",
           {{"prior", ppo_section(c.prior)},
            {"finetune", ppo_section(c.finetune)},
            {"glove", ppo_section(c.glove)}}},
          {"glove", glove_model_to_json(c.glove_model)},
          {"weakness", c.weakness},
          {"eval", eval_config_to_json(c.eval)},
          {"stages", c.stages}};
}

ExperimentConfig experiment_config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  if (!j.contains("version")) throw ConfigError("config is missing \"version\"");
  if (!j["version"].is_number_integer() || j["version"].get<int>() != kConfigVersion) {
    throw ConfigError("unsupported config version (expected " +
                      std::to_string(kConfigVersion) + ")");
  }
  const ExperimentConfig desk = ExperimentConfig::desk();
  json merged = experiment_config_to_json(desk);
  check_keys(j, merged, "", {"scene.hand", "weakness", "demos", "env.reward"});
  merged.merge_patch(j);
  ExperimentConfig c = desk;
  try {
    c.run_id = merged.at("run_id").get<std::string>();
    c.out_dir = merged.at("out_dir").get<std::string>();
    c.seed = merged.at("seed").get<std::uint64_t>();
    c.scene = scene_from_json(merged.at("scene"));
    c.env = env_config_from_json(merged.at("env"));
    c.prior_noise = merged.at("prior_noise").get<double>();
    const auto& demos = merged.at("demos");
    c.prior_demos.clear();
    for (const auto& d : demos.at("prior")) c.prior_demos.push_back(demo_source_from_json(d));
    c.task = demo_source_from_json(demos.at("task"));
    const auto& ppo = merged.at("ppo");
    c.prior = ppo_config_from_json(ppo.at("prior"));
    c.finetune = ppo_config_from_json(ppo.at("finetune"));
    c.glove = ppo_config_from_json(ppo.at("glove"));
    c.glove_model = glove_model_from_json(merged.at("glove"), c.scene.hand);
    c.weakness = merged.at("weakness");
    c.eval = eval_config_from_json(merged.at("eval"));
    c.stages = merged.at("stages").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  c.validate();
  return c;
}

ExperimentConfig load_experiment_config(const std::string& path) {
  json j;
  try {
    j = json::parse(read_file(path));
  } catch (const json::parse_error& e) {
    throw ParseError(path + ": " + e.what());
  }
  return experiment_config_from_json(j);
}

std::string config_digest(const ExperimentConfig& c) {
  return sha256_hex(experiment_config_to_json(c).dump());
}

std::uint64_t stage_seed(std::uint64_t seed, const std::string& stage) {
  const std::string h = sha256_hex(std::to_string(seed) + "|" + stage);
  return std::stoull(h.substr(0, 16), nullptr, 16);
}

WeaknessProfile weakness_from_json(const json& j, const HandModel& model) {
  const int m = model.num_muscles();
  WeaknessProfile p;
  try {
    if (!j.is_object() || j.size() != 1) {
      throw ConfigError("weakness must have exactly one of uniform, groups, scale");
    }
    if (j.contains("uniform")) {
      p = WeaknessProfile::uniform(m, j["uniform"].get<double>());
    } else if (j.contains("groups")) {
      p = WeaknessProfile::by_group(model, j["groups"].get<std::map<std::string, double>>());
    } else if (j.contains("scale")) {
      p.scale = vec_from_json(j["scale"]);
    } else {
      throw ConfigError("weakness must have exactly one of uniform, groups, scale");
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("weakness: ") + e.what());
  }
  p.validate(m);
  return p;
}

// --- paths and manifest ------------------------------------------------------------

RunPaths RunPaths::make(const std::string& out_dir, const std::string& run_id) {
  RunPaths p;
  p.root = (fs::path(out_dir) / run_id).string();
  p.manifest = (fs::path(p.root) / "manifest.json").string();
  p.demos = (fs::path(p.root) / "demos").string();
  p.checkpoints = (fs::path(p.root) / "checkpoints").string();
  p.reports = (fs::path(p.root) / "reports").string();
  p.plots = (fs::path(p.root) / "plots").string();
  return p;
}

std::string RunPaths::checkpoint(const std::string& name) const {
  return (fs::path(checkpoints) / (name + ".json")).string();
}

void RunPaths::create() const {
  for (const auto& d : {demos, checkpoints, reports, plots}) {
    std::error_code ec;
    fs::create_directories(d, ec);
    if (ec) throw ConfigError("cannot create " + d + ": " + ec.message());
  }
}

std::string RunPaths::relative(const std::string& path) const {
  return fs::path(path).lexically_relative(root).generic_string();
}

json RunManifest::to_json() const {
  json stages_j = json::object();
  for (const auto& [name, s] : stages) {
    json arts = json::array();
    for (const auto& a : s.artifacts) arts.push_back({{"path", a.path}, {"sha256", a.sha256}});
    stages_j[name] = {{"checkpoint", s.checkpoint},
                      {"started", s.started},
                      {"finished", s.finished},
                      {"artifacts", arts},
                      {"info", s.info}};
  }
  return {{"format", "exohand-manifest"},
          {"version", kManifestVersion},
          {"run_id", run_id},
          {"config_digest", config_digest},
          {"code_version", code_version},
          {"stages", stages_j}};
}

RunManifest RunManifest::from_json(const json& j) {
  RunManifest m;
  try {
    if (j.value("format", "") != "exohand-manifest") throw ParseError("not a run manifest");
    if (j.at("version").get<int>() != kManifestVersion) {
      throw ParseError("unsupported manifest version");
    }
    m.run_id = j.at("run_id").get<std::string>();
    m.config_digest = j.at("config_digest").get<std::string>();
    m.code_version = j.at("code_version").get<std::string>();
    for (auto it = j.at("stages").begin(); it != j.at("stages").end(); ++it) {
      StageRecord s;
      const auto& v = it.value();
      s.checkpoint = v.at("checkpoint").get<std::string>();
      s.started = v.at("started").get<std::string>();
      s.finished = v.at("finished").get<std::string>();
      for (const auto& a : v.at("artifacts")) {
        s.artifacts.push_back({a.at("path").get<std::string>(), a.at("sha256").get<std::string>()});
      }
      s.info = v.at("info");
      m.stages[it.key()] = std::move(s);
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("manifest: ") + e.what());
  }
  return m;
}

void RunManifest::verify(const RunPaths& paths) const {
  for (const auto& [name, s] : stages) {
    for (const auto& a : s.artifacts) {
      const std::string full = (fs::path(paths.root) / a.path).string();
      if (!fs::exists(full)) throw ValidationError("missing artifact of " + name + ": " + a.path);
      if (sha256_hex(read_file(full)) != a.sha256) {
        throw ValidationError("artifact digest does not verify: " + a.path);
      }
    }
  }
}

json RunManifest::stable_json() const {
  json j = to_json();
  for (auto& [name, s] : j["stages"].items()) {
    (void)name;
    s.erase("started");
    s.erase("finished");
  }
  return j;
}

RunManifest load_manifest(const RunPaths& paths) {
  if (!fs::exists(paths.manifest)) return {};
  json j;
  try {
    j = json::parse(read_file(paths.manifest));
  } catch (const json::parse_error& e) {
    throw ParseError(paths.manifest + ": " + e.what());
  }
  RunManifest m = RunManifest::from_json(j);
  m.verify(paths);
  return m;
}

void save_manifest(const RunManifest& m, const RunPaths& paths) {
  write_file(paths.manifest, m.to_json().dump(2) + "\n");
}

// --- environments --------------------------------------------------------------------

DemoMixEnv::DemoMixEnv(std::vector<std::unique_ptr<HandEnv>> envs) : envs_(std::move(envs)) {
  if (envs_.empty()) throw ConfigError("demo mixture needs at least one environment");
  for (const auto& e : envs_) {
    if (e->obs_dim() != envs_.front()->obs_dim() ||
        e->action_dim() != envs_.front()->action_dim()) {
      throw ValidationError("demonstrations disagree on observation or action size");
    }
  }
}

Vec DemoMixEnv::reset(std::uint64_t seed) {
  Rng pick(seed);
  active_ = static_cast<int>(pick.below(envs_.size()));
  return envs_[static_cast<std::size_t>(active_)]->reset(pick.next_u64());
}

StepResult DemoMixEnv::step(const Vec& action) {
  return envs_[static_cast<std::size_t>(active_)]->step(action);
}

json DemoMixEnv::save_state() const {
  return {{"active", active_}, {"env", envs_[static_cast<std::size_t>(active_)]->save_state()}};
}

void DemoMixEnv::load_state(const json& j) {
  const int a = j.at("active").get<int>();
  if (a < 0 || a >= static_cast<int>(envs_.size())) {
    throw ValidationError("demo mixture state refers to a missing demonstration");
  }
  active_ = a;
  envs_[static_cast<std::size_t>(a)]->load_state(j.at("env"));
}

DemoTrajectory build_demo(const DemoSource& source, const SceneConfig& scene) {
  if (!source.path.empty()) return load_demo(source.path);
  const RigidObject object = ycb_object(source.spec.object_id);
  return synth_demo(source.spec, scene.hand, object, scene.table, scene.gravity);
}

DemoSet build_demo_set(const std::vector<DemoSource>& sources, const SceneConfig& scene) {
  DemoSet set;
  for (const auto& s : sources) set[s.name] = build_demo(s, scene);
  validate_demo_set(set);
  return set;
}

SceneConfig scene_for(const SceneConfig& scene, const DemoTrajectory& demo) {
  SceneConfig s = scene;
  s.object = ycb_object(demo.object_id);
  return s;
}

double tracking_error(const Agent& agent, const std::vector<HandEnv*>& envs, int episodes,
                      std::uint64_t first_seed) {
  if (envs.empty() || episodes < 1) throw UsageError("tracking_error needs envs and episodes");
  double sum = 0.0;
  std::int64_t n = 0;
  for (HandEnv* env : envs) {
    for (int k = 0; k < episodes; ++k) {
      Vec obs = env->reset(first_seed + static_cast<std::uint64_t>(k));
      bool done = false;
      while (!done) {
        StepResult r = env->step(agent.act(obs));
        sum += r.info.demo_err;
        ++n;
        obs = std::move(r.obs);
        done = r.done;
      }
    }
  }
  return sum / static_cast<double>(n);
}

std::optional<std::int64_t> steps_to_threshold(const TrainReport& report, double threshold,
                                               int window) {
  if (window < 1) throw UsageError("window must be >= 1");
  const auto& it = report.iterations;
  double acc = 0.0;
  for (std::size_t i = 0; i < it.size(); ++i) {
    acc += it[i].rollout.mean_demo_err;
    if (i >= static_cast<std::size_t>(window)) acc -= it[i - window].rollout.mean_demo_err;
    if (i + 1 >= static_cast<std::size_t>(window) && acc / window <= threshold) {
      return it[i].env_steps;
    }
  }
  return std::nullopt;
}

// --- stages ---------------------------------------------------------------------------

namespace {

struct StageScope {
  RunPaths paths;
  RunManifest manifest;
  StageRecord record;
  std::string name;

  StageScope(const ExperimentConfig& cfg, std::string stage) : name(std::move(stage)) {
    cfg.validate();
    paths = RunPaths::make(cfg.out_dir, cfg.run_id);
    paths.create();
    manifest = load_manifest(paths);
    manifest.run_id = cfg.run_id;
    manifest.config_digest = config_digest(cfg);
    manifest.code_version = code_version();
    record.started = utc_now();
    record.info["config_digest"] = manifest.config_digest;
    record.info["seed"] = cfg.seed;
  }

  /// Writes a file and lists it as an artifact of this stage.
  std::string write(const std::string& path, const std::string& contents) {
    write_file(path, contents);
    add(path);
    return path;
  }

  void add(const std::string& path) {
    record.artifacts.push_back({paths.relative(path), sha256_hex(read_file(path))});
  }

  void finish() {
    record.finished = utc_now();
    manifest.stages[name] = record;
    save_manifest(manifest, paths);
    // Outputs must exist and verify before the command reports success.
    load_manifest(paths);
  }
};

EnvConfig stage_env(const ExperimentConfig& cfg, RewardMode mode) {
  EnvConfig e = cfg.env;
  e.reward_mode = mode;
  if (mode == RewardMode::kDemoOnly) e.noise_std_frac = cfg.prior_noise;
  return e;
}

PPOConfig stage_ppo(const PPOConfig& base, const ExperimentConfig& cfg, const std::string& stage) {
  PPOConfig p = base;
  p.seed = stage_seed(cfg.seed, stage);
  return p;
}

TrainState load_marked(const std::string& path, const char* mark, const std::string& what) {
  if (!fs::exists(path)) throw ConfigError(what + " checkpoint not found: " + path);
  TrainState s = load_checkpoint(path);
  if (s.stage != mark) {
    throw ValidationError(what + " checkpoint is marked '" + s.stage + "', expected '" + mark +
                          "'");
  }
  return s;
}

std::vector<Environment*> raw(const std::vector<std::unique_ptr<Environment>>& v) {
  std::vector<Environment*> out;
  for (const auto& e : v) out.push_back(e.get());
  return out;
}

void write_train_outputs(StageScope& scope, const TrainState& s, const std::string& prefix,
                         const std::string& checkpoint) {
  scope.write((fs::path(scope.paths.reports) / (prefix + "_train.jsonl")).string(),
              s.report.to_jsonl());
  scope.write((fs::path(scope.paths.reports) / (prefix + "_summary.csv")).string(),
              s.report.summary_csv());
  scope.add(checkpoint);
  scope.record.checkpoint = scope.paths.relative(checkpoint);
  scope.record.info["params_digest"] = s.params.digest();
  scope.record.info["env_steps"] = s.env_steps;
  scope.record.info["iterations"] = s.iteration;
}

Agent agent_of(const TrainState& s) { return Agent{s.params, s.obs_norm}; }

std::string traces_path(const RunPaths& p, const std::string& condition) {
  std::string file = condition;
  std::replace(file.begin(), file.end(), '+', '_');
  return (fs::path(p.reports) / "traces" / (file + ".jsonl")).string();
}

// metrics.json and the two plot CSVs; shared by evaluate and report.
void write_metric_files(StageScope& scope, const MetricReport& report) {
  scope.write((fs::path(scope.paths.reports) / "metrics.json").string(),
              report.to_json().dump(2) + "\n");
  scope.write((fs::path(scope.paths.plots) / "fig6_pip_wrist.csv").string(),
              report.pip_wrist_csv());
  scope.write((fs::path(scope.paths.plots) / "fig7_accumulated_error.csv").string(),
              report.accumulated_error_csv());
}

}  // namespace

std::vector<std::string> cmd_demo_gen(const ExperimentConfig& cfg) {
  StageScope scope(cfg, kDemoGen);
  std::vector<DemoSource> all = cfg.prior_demos;
  all.push_back(cfg.task);
  const DemoSet set = build_demo_set(all, cfg.scene);
  std::vector<std::string> written;
  for (const auto& [name, demo] : set) {
    written.push_back(scope.write((fs::path(scope.paths.demos) / (name + ".json")).string(),
                                  save_demo_string(demo)));
    written.push_back(scope.write((fs::path(scope.paths.demos) / (name + ".csv")).string(),
                                  keypoints_csv(demo)));
  }
  scope.finish();
  return written;
}

StageResult cmd_prior_train(const ExperimentConfig& cfg) {
  StageScope scope(cfg, kPrior);
  const DemoSet set = build_demo_set(cfg.prior_demos, cfg.scene);
  const EnvConfig env_cfg = stage_env(cfg, RewardMode::kDemoOnly);
  std::vector<HandEnv> protos;
  for (const auto& [name, demo] : set) {
    (void)name;
    protos.emplace_back(scene_for(cfg.scene, demo), env_cfg, demo);
  }
  const PPOConfig ppo = stage_ppo(cfg.prior, cfg, kPrior);
  std::vector<std::unique_ptr<Environment>> owned;
  for (int e = 0; e < ppo.n_envs; ++e) {
    std::vector<std::unique_ptr<HandEnv>> mix;
    for (const auto& p : protos) mix.push_back(std::make_unique<HandEnv>(p));
    owned.push_back(std::make_unique<DemoMixEnv>(std::move(mix)));
  }
  auto envs = raw(owned);
  TrainState state = make_train_state(envs, ppo);
  state.stage = kMarkPrior;
  state.meta = {{"demos", json::array()}, {"reward_mode", to_string(env_cfg.reward_mode)}};
  for (const auto& [name, demo] : set) {
    (void)demo;
    state.meta["demos"].push_back(name);
  }
  const std::string ckpt = scope.paths.checkpoint("prior");
  train(envs, ppo, state, {ckpt, nullptr});
  write_train_outputs(scope, state, "prior", ckpt);
  scope.finish();
  return {std::move(state), ckpt};
}

StageResult cmd_finetune(const ExperimentConfig& cfg, const FinetuneOptions& opts) {
  StageScope scope(cfg, kFinetune);
  const DemoTrajectory demo = build_demo(cfg.task, cfg.scene);
  const EnvConfig env_cfg = stage_env(cfg, RewardMode::kDemoPlusObj);
  const HandEnv proto(scene_for(cfg.scene, demo), env_cfg, demo);
  const PPOConfig ppo = stage_ppo(cfg.finetune, cfg, kFinetune);
  std::vector<std::unique_ptr<Environment>> owned;
  for (int e = 0; e < ppo.n_envs; ++e) owned.push_back(std::make_unique<HandEnv>(proto));
  auto envs = raw(owned);
  TrainState state;
  std::string source = "scratch";
  if (opts.from_scratch) {
    state = make_train_state(envs, ppo);
  } else {
    const std::string prior_path = scope.paths.checkpoint("prior");
    const TrainState prior = load_marked(prior_path, kMarkPrior, "prior");
    if (prior.params.obs_dim != proto.obs_dim() || prior.params.act_dim != proto.action_dim()) {
      throw ConfigError("prior checkpoint dimensions do not match the task environment");
    }
    state = make_train_state(envs, ppo, prior.params, prior.obs_norm);
    source = prior.params.digest();
  }
  state.stage = kMarkFinetuned;
  state.meta = {{"task", cfg.task.name},
                {"object", demo.object_id},
                {"initialized_from", source},
                {"reward_mode", to_string(env_cfg.reward_mode)}};
  const std::string name = opts.from_scratch ? "finetune_scratch" : "finetune";
  const std::string ckpt = scope.paths.checkpoint(name);
  train(envs, ppo, state, {ckpt, nullptr});
  write_train_outputs(scope, state, name, ckpt);
  if (opts.from_scratch) {
    // A scratch baseline is kept apart from the pipeline's finetune stage.
    scope.name = "finetune-scratch";
  }
  scope.finish();
  return {std::move(state), ckpt};
}

StageResult cmd_glove_train(const ExperimentConfig& cfg) {
  StageScope scope(cfg, kGlove);
  const TrainState hand = load_marked(scope.paths.checkpoint("finetune"), kMarkFinetuned, "hand");
  const DemoTrajectory demo = build_demo(cfg.task, cfg.scene);
  const EnvConfig env_cfg = stage_env(cfg, RewardMode::kDemoPlusObj);
  const SceneConfig scene = scene_for(cfg.scene, demo);
  const WeaknessProfile weakness = weakness_from_json(cfg.weakness, scene.hand);
  const HandEnv proto(scene, env_cfg, demo, weakness);
  if (hand.params.obs_dim != proto.obs_dim() || hand.params.act_dim != proto.action_dim()) {
    throw ConfigError("hand checkpoint dimensions do not match the task environment");
  }
  const auto frozen = std::make_shared<const FrozenPolicy>(agent_of(hand));
  const PPOConfig ppo = stage_ppo(cfg.glove, cfg, kGlove);
  std::vector<std::unique_ptr<Environment>> owned;
  for (int e = 0; e < ppo.n_envs; ++e) {
    owned.push_back(
        std::make_unique<GloveEnv>(std::make_unique<HandEnv>(proto), frozen, cfg.glove_model));
  }
  auto envs = raw(owned);
  TrainState state = make_train_state(envs, ppo);
  state.stage = kMarkGlove;
  state.meta = {{"hand_digest", frozen->digest()},
                {"weakness", to_json(weakness.scale)},
                {"glove", glove_model_to_json(cfg.glove_model)}};
  const std::string ckpt = scope.paths.checkpoint("glove");
  TrainHooks hooks;
  hooks.checkpoint_path = ckpt;
  hooks.on_iteration = [&](const TrainState&, const IterationRecord&) { frozen->verify(); };
  train(envs, ppo, state, hooks);
  frozen->verify();
  write_train_outputs(scope, state, "glove", ckpt);
  scope.record.info["hand_digest"] = frozen->digest();
  scope.finish();
  return {std::move(state), ckpt};
}

EvaluateResult cmd_evaluate(const ExperimentConfig& cfg,
                            const std::vector<std::string>& conditions) {
  StageScope scope(cfg, kEvaluate);
  std::vector<std::string> wanted = conditions;
  if (wanted.empty()) wanted = {kHealthy, kWeak, kWeakGlove};
  for (const auto& c : wanted) {
    if (c != kHealthy && c != kWeak && c != kWeakGlove) {
      throw ConfigError("unknown evaluation condition: " + c);
    }
  }
  const DemoTrajectory demo = build_demo(cfg.task, cfg.scene);
  EvalSetup setup;
  setup.scene = scene_for(cfg.scene, demo);
  setup.env = stage_env(cfg, RewardMode::kDemoPlusObj);
  setup.demo = demo;
  setup.weakness = weakness_from_json(cfg.weakness, setup.scene.hand);
  setup.glove = cfg.glove_model;

  EvaluateResult result;
  const std::string hand_path = scope.paths.checkpoint("finetune");
  const std::string glove_path = scope.paths.checkpoint("glove");
  std::optional<Agent> hand_agent;
  std::optional<Agent> glove_agent;
  if (fs::exists(hand_path)) hand_agent = agent_of(load_marked(hand_path, kMarkFinetuned, "hand"));
  if (fs::exists(glove_path) && hand_agent) {
    const TrainState g = load_marked(glove_path, kMarkGlove, "glove");
    const std::string expected = FrozenPolicy::compute_digest(*hand_agent);
    if (g.meta.value("hand_digest", std::string()) != expected) {
      throw ValidationError("glove checkpoint was trained against a different hand policy");
    }
    if (g.meta.contains("weakness") && vec_from_json(g.meta["weakness"]) != setup.weakness.scale) {
      throw ValidationError("glove checkpoint was trained for a different weakness profile");
    }
    glove_agent = agent_of(g);
  }

  ThreadPool pool(configured_threads());
  std::map<std::string, std::vector<EpisodeTrace>> traces;
  for (const auto& c : wanted) {
    if (!hand_agent || (c == kWeakGlove && !glove_agent)) {
      result.missing.push_back(c);
      continue;
    }
    traces[c] = evaluate_condition(c, setup, *hand_agent, glove_agent ? &*glove_agent : nullptr,
                                   cfg.eval, &pool);
    std::string lines;
    for (const auto& t : traces[c]) lines += trace_to_json(t).dump() + "\n";
    fs::create_directories(fs::path(traces_path(scope.paths, c)).parent_path());
    scope.write(traces_path(scope.paths, c), lines);
  }
  result.report = build_report(traces, cfg.eval, setup.env.dt);
  write_metric_files(scope, result.report);
  scope.record.info["conditions"] = json::array();
  for (const auto& [c, t] : traces) {
    (void)t;
    scope.record.info["conditions"].push_back(c);
  }
  scope.record.info["missing"] = result.missing;
  scope.finish();
  return result;
}

MetricReport cmd_report(const ExperimentConfig& cfg) {
  StageScope scope(cfg, "report");
  std::map<std::string, std::vector<EpisodeTrace>> traces;
  for (const char* c : {kHealthy, kWeak, kWeakGlove}) {
    const std::string path = traces_path(scope.paths, c);
    if (!fs::exists(path)) continue;
    std::istringstream in(read_file(path));
    std::string line;
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      try {
        traces[c].push_back(trace_from_json(json::parse(line)));
      } catch (const json::parse_error& e) {
        throw ParseError(path + ": " + e.what());
      }
    }
  }
  if (traces.empty()) throw ConfigError("no saved traces under " + scope.paths.reports);
  const MetricReport report = build_report(traces, cfg.eval, cfg.env.dt);
  write_metric_files(scope, report);
  scope.finish();
  return report;
}

void run_pipeline(const ExperimentConfig& cfg) {
  cfg.validate();
  for (const auto& s : cfg.stages) {
    if (s == kDemoGen) {
      cmd_demo_gen(cfg);
    } else if (s == kPrior) {
      cmd_prior_train(cfg);
    } else if (s == kFinetune) {
      cmd_finetune(cfg);
    } else if (s == kGlove) {
      cmd_glove_train(cfg);
    } else if (s == kEvaluate) {
      const auto r = cmd_evaluate(cfg);
      if (!r.missing.empty()) throw ValidationError("evaluation skipped conditions");
    }
  }
}

int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const ConfigError*>(&e) || dynamic_cast<const ParseError*>(&e) ||
      dynamic_cast<const UsageError*>(&e)) {
    return 2;
  }
  if (dynamic_cast<const ValidationError*>(&e)) return 3;
  if (dynamic_cast<const NumericalError*>(&e) || dynamic_cast<const StepError*>(&e)) return 4;
  return 1;
}

}  // namespace exohand
