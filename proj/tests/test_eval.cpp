#include <cmath>

#include "doctest.h"
#include "exohand/eval.hpp"

using namespace exohand;

namespace {

EpisodeTrace make_trace(const std::vector<double>& errs, double pip = 0.12) {
  EpisodeTrace tr;
  tr.condition = kHealthy;
  for (std::size_t i = 0; i < errs.size(); ++i) {
    TraceStep s;
    s.t = 0.002 * static_cast<double>(i + 1);
    s.obj_pos_err = errs[i];
    s.success = errs[i] <= 0.025;
    s.wrist = Vec3(0.0, 0.0, 0.0);
    s.middle_pip = Vec3(pip, 0.0, 0.0);
    tr.steps.push_back(s);
  }
  return tr;
}

const DemoTrajectory& demo() {
  static const DemoTrajectory d = [] {
    DemoSpec spec;
    return synth_demo(spec, desk_hand_model(), ycb_object(spec.object_id), SupportPlane{},
                      Vec3(0, 0, -9.81));
  }();
  return d;
}

}  // namespace

TEST_SUITE("eval") {

TEST_CASE("success rate counts steps within tolerance") {
  const EpisodeTrace tr = make_trace({0.0, 0.01, 0.025, 0.026, 0.5});
  CHECK(success_rate(tr) == doctest::Approx(0.6));
  CHECK(success_rate(tr, 0.001) == doctest::Approx(0.2));
  CHECK_THROWS_AS(success_rate(EpisodeTrace{}), ValidationError);
}

TEST_CASE("task success needs a rate above the threshold") {
  CHECK_FALSE(task_successful(0.8));
  CHECK(task_successful(0.81));
  CHECK(task_successful(0.5, 0.4));
}

TEST_CASE("accumulated error adds the far punishment") {
  const EpisodeTrace tr = make_trace({0.1, 0.3, 0.0, 0.25});
  const Vec c = accumulated_error(tr, 1.0, 0.2);
  REQUIRE(c.size() == 4);
  CHECK(c[0] == doctest::Approx(0.1));
  CHECK(c[1] == doctest::Approx(1.4));
  CHECK(c[2] == doctest::Approx(1.4));
  CHECK(c[3] == doctest::Approx(2.65));
}

TEST_CASE("accumulated error is non-decreasing") {
  Rng r(1);
  std::vector<double> e(300);
  for (auto& x : e) x = r.uniform(0.0, 0.4);
  const Vec c = accumulated_error(make_trace(e));
  for (Eigen::Index i = 1; i < c.size(); ++i) CHECK(c[i] >= c[i - 1]);
}

TEST_CASE("pip-wrist distance mean and sample deviation") {
  const std::vector<EpisodeTrace> trs = {make_trace({0, 0}, 0.10), make_trace({0, 0}, 0.12),
                                         make_trace({0, 0}, 0.14)};
  const MeanStd m = pip_wrist_distance(trs);
  CHECK(m.mean[0] == doctest::Approx(0.12));
  CHECK(m.std[1] == doctest::Approx(0.02));
  CHECK(pip_wrist_distance({trs[0]}).std[0] == 0.0);
  CHECK_THROWS_AS(pip_wrist_distance({trs[0], make_trace({0})}), ValidationError);
}

TEST_CASE("restoration ratio") {
  CHECK(restoration_ratio(0.45, 0.9) == doctest::Approx(0.5));
  CHECK_THROWS_AS(restoration_ratio(0.5, 0.0), ValidationError);
}

TEST_CASE("report aggregates conditions in a fixed order") {
  std::map<std::string, std::vector<EpisodeTrace>> traces;
  traces[kWeakGlove] = {make_trace({0.0, 0.0, 0.3, 0.0})};
  traces[kHealthy] = {make_trace({0.0, 0.0, 0.0, 0.0}), make_trace({0.0, 0.3, 0.3, 0.3})};
  traces[kWeak] = {make_trace({0.3, 0.3, 0.3, 0.3})};
  const MetricReport rep = build_report(traces, EvalConfig{}, 0.002);
  REQUIRE(rep.conditions.size() == 3);
  CHECK(rep.conditions[0].condition == kHealthy);
  CHECK(rep.conditions[1].condition == kWeak);
  CHECK(rep.conditions[2].condition == kWeakGlove);
  CHECK(rep.find(kHealthy)->success_rate == doctest::Approx(0.625));
  CHECK(rep.find(kHealthy)->task_success_fraction == doctest::Approx(0.5));
  CHECK(rep.find(kHealthy)->success_rate_std == doctest::Approx(std::sqrt(0.28125)));
  CHECK(rep.find(kWeak)->success_rate == 0.0);
  REQUIRE(rep.restoration_ratio.has_value());
  CHECK(*rep.restoration_ratio == doctest::Approx(0.75 / 0.625));
  CHECK(rep.find(kWeak)->accumulated_error[3] == doctest::Approx(4 * 1.3));
}

TEST_CASE("report is a pure function of the traces") {
  std::map<std::string, std::vector<EpisodeTrace>> traces;
  Rng r(2);
  for (const char* c : {kHealthy, kWeak}) {
    for (int k = 0; k < 5; ++k) {
      std::vector<double> e(50);
      for (auto& x : e) x = r.uniform(0.0, 0.3);
      traces[c].push_back(make_trace(e, r.uniform(0.1, 0.13)));
    }
  }
  const MetricReport a = build_report(traces, EvalConfig{}, 0.002);
  const MetricReport b = build_report(traces, EvalConfig{}, 0.002);
  CHECK(a.to_json().dump() == b.to_json().dump());
  CHECK(a.pip_wrist_csv() == b.pip_wrist_csv());
  CHECK(a.accumulated_error_csv() == b.accumulated_error_csv());
  CHECK_FALSE(a.restoration_ratio.has_value());
}

TEST_CASE("report rejects unknown conditions") {
  std::map<std::string, std::vector<EpisodeTrace>> traces;
  traces["strong"] = {make_trace({0.0})};
  CHECK_THROWS_AS(build_report(traces, EvalConfig{}, 0.002), ValidationError);
}

TEST_CASE("plot csv columns") {
  std::map<std::string, std::vector<EpisodeTrace>> traces;
  traces[kHealthy] = {make_trace({0.0, 0.1, 0.2})};
  traces[kWeak] = {make_trace({0.0, 0.1, 0.2})};
  const MetricReport rep = build_report(traces, EvalConfig{}, 0.002);
  const std::string pip = rep.pip_wrist_csv();
  CHECK(pip.substr(0, pip.find('\n')) == "t,healthy_mean,healthy_std,weak_mean,weak_std");
  const std::string acc = rep.accumulated_error_csv();
  CHECK(acc.substr(0, acc.find('\n')) == "t,healthy,weak");
  CHECK(std::count(acc.begin(), acc.end(), '\n') == 4);
}

TEST_CASE("trace json round trip") {
  EpisodeTrace tr = make_trace({0.01, 0.02, 0.5});
  tr.condition = kWeakGlove;
  tr.seed = 17;
  tr.steps[1].middle_pip = Vec3(0.1, 0.2, 0.3);
  const EpisodeTrace back = trace_from_json(json::parse(trace_to_json(tr).dump()));
  CHECK(back.condition == kWeakGlove);
  CHECK(back.seed == 17);
  REQUIRE(back.steps.size() == 3);
  CHECK(back.steps[1].middle_pip == tr.steps[1].middle_pip);
  CHECK(back.steps[2].obj_pos_err == tr.steps[2].obj_pos_err);
}

TEST_CASE("episodes span the horizon and evaluation is reproducible") {
  EnvConfig cfg;
  cfg.horizon = 40;
  EvalSetup setup{SceneConfig{}, cfg, demo(), WeaknessProfile::uniform(13, 0.5),
                  GloveModel::for_hand(desk_hand_model())};
  Rng r(3);
  const Agent hand{PolicyParams::init(126, 19, {16}, r), RunningNorm::identity(126)};
  const Agent glove{PolicyParams::init(126, 3, {16}, r), RunningNorm::identity(126)};
  EvalConfig ec;
  ec.trials = 3;
  for (const char* c : {kHealthy, kWeak, kWeakGlove}) {
    const auto a = evaluate_condition(c, setup, hand, &glove, ec);
    const auto b = evaluate_condition(c, setup, hand, &glove, ec);
    REQUIRE(a.size() == 3);
    for (std::size_t k = 0; k < a.size(); ++k) {
      CHECK(a[k].steps.size() == 40);
      CHECK(a[k].seed == ec.first_seed + k);
      CHECK(trace_to_json(a[k]).dump() == trace_to_json(b[k]).dump());
    }
  }
  CHECK_THROWS(evaluate_condition(kWeakGlove, setup, hand, nullptr, ec));
}

TEST_CASE("weakness changes the rollout of the same policy") {
  EnvConfig cfg;
  cfg.horizon = 60;
  EvalSetup setup{SceneConfig{}, cfg, demo(), WeaknessProfile::uniform(13, 0.5),
                  GloveModel::for_hand(desk_hand_model())};
  Rng r(4);
  Agent hand{PolicyParams::init(126, 19, {16}, r), RunningNorm::identity(126)};
  // Bias the muscle outputs to full excitation.
  const auto off = hand.params.log_std_offset() - 19;
  hand.params.flat.segment(off, 13).setConstant(1.0);
  EvalConfig ec;
  ec.trials = 1;
  const auto h = evaluate_condition(kHealthy, setup, hand, nullptr, ec);
  const auto w = evaluate_condition(kWeak, setup, hand, nullptr, ec);
  CHECK(h[0].steps.back().middle_pip != w[0].steps.back().middle_pip);
}

}
