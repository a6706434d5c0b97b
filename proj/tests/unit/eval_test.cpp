#include "pastel/common/error.hpp"
#include "pastel/common/io.hpp"
#include "pastel/eval/eval_harness.hpp"
#include "pastel/model/checkpoint.hpp"
#include "pastel/stl/linearize.hpp"
#include "pastel/stl/parser.hpp"
#include "pastel/stl/semantics.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

using namespace pastel;
using namespace pastel::eval;

namespace {

const env::EnvironmentSpec kWorld = env::EnvironmentSpec::default_world();
const std::filesystem::path kSpecs{PASTEL_SPECS_DIR};
const std::filesystem::path kData{PASTEL_TEST_DATA_DIR};

model::ModelConfig small_config(bool ablation = false) {
  model::ModelConfig c;
  c.d_model = 16;
  c.n_heads = 2;
  c.n_layers = 1;
  c.d_tok = 8;
  c.d_ff = 32;
  c.h_max = 30;
  c.ablation = ablation;
  c.norm = model::Normalization::from_environment(kWorld);
  return c;
}

EvalOptions options(int n, std::uint64_t seed) {
  EvalOptions o;
  o.n_samples = n;
  o.seed = seed;
  return o;
}

struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& name)
      : path(std::filesystem::temp_directory_path() / ("pastel_eval_" + name + "_" + std::to_string(::getpid()))) {
    std::filesystem::remove_all(path);
  }
  ~TempDir() { std::filesystem::remove_all(path); }
};

} // namespace

TEST(EvalSampling, SeededStatesAvoidObstacles) {
  const auto a = sample_initial_states(200, 3, kWorld);
  EXPECT_EQ(a, sample_initial_states(200, 3, kWorld));
  EXPECT_NE(a, sample_initial_states(200, 4, kWorld));
  // Prefixes agree: state i depends only on (seed, i).
  const auto b = sample_initial_states(10, 3, kWorld);
  EXPECT_TRUE(std::equal(b.begin(), b.end(), a.begin()));
  for (const auto& x : a) EXPECT_FALSE(kWorld.region("O1").bounds.strictly_contains(x.px, x.py));
}

TEST(EvalActuation, CountsComponentsBeyondTheBound) {
  std::vector<std::vector<env::Action>> acts{{{2.0 * kWorld.a_max(), 0.0}, {0.5, -0.5}}, {{0.0, -kWorld.a_max()}}};
  const auto a = actuation_audit(acts, kWorld);
  EXPECT_EQ(a.actions, 3u);
  EXPECT_EQ(a.violations, 1u);
  EXPECT_EQ(a.max_abs_action, 2.0 * kWorld.a_max());
  EXPECT_EQ(actuation_audit(std::span<const std::vector<env::Action>>{}, kWorld).violations, 0u);
}

TEST(EvalReplay, OracleRecordsAllSatisfy) {
  oracle::GenerationConfig g;
  g.per_spec_count = 4;
  g.seed = 11;
  g.oracle.iterations_per_stage = 80;
  const auto recs = oracle::generate_records({{"phi3", stl::load_spec_file(kSpecs / "phi3.stl")}}, kWorld, g).records;
  const auto e = replay_satisfaction(recs, kWorld);
  EXPECT_EQ(e.percentage, 100.0);
  EXPECT_EQ(e.actuation.violations, 0u);
  EXPECT_GT(e.robustness.min, 0.0);
  EXPECT_EQ(e.spec_id, "phi3");
}

TEST(EvalRobustnessStats, MinMedianMax) {
  const auto s = robustness_stats({3.0, -1.0, 2.0, 10.0});
  EXPECT_EQ(s.min, -1.0);
  EXPECT_EQ(s.median, 2.5);
  EXPECT_EQ(s.max, 10.0);
  EXPECT_EQ(robustness_stats({4.0, 1.0, 2.0}).median, 2.0);
}

TEST(EvalSatisfaction, UntrainedModelReportIsConsistent) {
  const model::PastelModel m(small_config(), 1);
  const std::string before = model::encode_checkpoint(m);
  const std::vector<oracle::NamedSpec> specs{{"phi2", stl::load_spec_file(kSpecs / "phi2.stl")},
                                             {"reach", stl::parse("F[0,8](R1)")}};
  const auto report = evaluate(m, "abc", specs, kWorld, options(30, 2));
  ASSERT_EQ(report.specs.size(), 2u);
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const auto& s = report.specs[i];
    EXPECT_EQ(s.n_samples, 30);
    ASSERT_EQ(s.rollouts.size(), 30u);
    int recount = 0;
    for (const auto& r : s.rollouts) {
      recount += r.satisfied;
      // The boolean column agrees with the sign of robustness whenever it is nonzero.
      if (r.robustness != 0.0) EXPECT_EQ(r.satisfied, r.robustness > 0.0);
    }
    EXPECT_EQ(recount, s.satisfied);
    EXPECT_DOUBLE_EQ(s.percentage, 100.0 * recount / 30.0);
    EXPECT_GE(s.percentage, 0.0);
    EXPECT_LE(s.percentage, 100.0);
    EXPECT_EQ(s.actuation.actions, 30u * static_cast<std::size_t>(stl::horizon(specs[i].formula)));
  }
  EXPECT_EQ(report.config_fingerprint, m.config().fingerprint());
  EXPECT_EQ(model::encode_checkpoint(m), before);

  auto jobs = options(30, 2);
  jobs.jobs = 3;
  EXPECT_EQ(report_to_json(evaluate(m, "abc", specs, kWorld, jobs)), report_to_json(report));
}

TEST(EvalSatisfaction, HorizonBeyondCapacityIsADomainError) {
  auto c = small_config();
  c.h_max = 20;
  const model::PastelModel m(c, 1);
  try {
    satisfaction_rate(m, {"phi3", stl::load_spec_file(kSpecs / "phi3.stl")}, kWorld, options(2, 0));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.category(), ErrorCategory::domain);
  }
  EXPECT_THROW(satisfaction_rate(m, {"r", stl::parse("F[0,3](R1)")}, kWorld, options(0, 0)), Error);
}

TEST(EvalReport, JsonRoundTripAndSchemaChecks) {
  const model::PastelModel m(small_config(), 2);
  const std::vector<oracle::NamedSpec> specs{{"reach", stl::parse("F[0,5](R1)")}};
  auto opt = options(5, 9);
  opt.mode = model::RolloutMode::open_loop;
  const auto report = evaluate(m, "d1", specs, kWorld, opt);
  const std::string json = report_to_json(report);
  const auto back = report_from_json(json);
  EXPECT_EQ(report_to_json(back), json);
  EXPECT_EQ(back.mode, model::RolloutMode::open_loop);
  EXPECT_NE(report_table(report).find("reach"), std::string::npos);

  std::string bad = json;
  bad.replace(bad.find("\"format_version\": 1"), 19, "\"format_version\": 9");
  try {
    report_from_json(bad);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.category(), ErrorCategory::schema);
  }
  EXPECT_THROW(report_from_json("{}"), Error);
}

TEST(EvalRelativeImprovement, NewMinusOldOverOld) {
  EXPECT_DOUBLE_EQ(*relative_improvement(40.0, 70.0), 0.75);
  EXPECT_DOUBLE_EQ(*relative_improvement(50.0, 25.0), -0.5);
  EXPECT_FALSE(relative_improvement(0.0, 10.0).has_value());
}

TEST(EvalPerturbation, SwapsAndDefaults) {
  const auto phi3 = stl::load_spec_file(kSpecs / "phi3.stl");
  EXPECT_EQ(swap_regions(phi3, "R1", "R2"), "F[0,15](R2 & F[0,15](R1))");
  const auto p = default_perturbations(phi3, kWorld);
  ASSERT_EQ(p.size(), 4u);
  EXPECT_EQ(p[0].name, "identity");
  EXPECT_EQ(p[0].formula, stl::render_canonical(phi3));
  EXPECT_EQ(p[1].name, "swap_R1_R2");
  EXPECT_EQ(p[3].name, "swap_R2_R3");
}

TEST(EvalPerturbation, IdentityMatchesAndAblationIsInvariant) {
  const auto f = stl::parse("F[0,8](R1 & F[0,4](R2))");
  std::vector<Perturbation> perts = default_perturbations(f, kWorld);
  perts.push_back({"broken", "F[0,8](R1 &"});
  perts.push_back({"unknown", "F[0,8](R7)"});
  perts.push_back({"shorter", "F[0,5](R1)"});

  const model::PastelModel pastel_model(small_config(false), 3);
  const auto study = perturbation_study(pastel_model, "d", f, perts, kWorld, options(20, 4));
  const auto base = satisfaction_rate(pastel_model, {"f", f}, kWorld, options(20, 4));
  ASSERT_EQ(study.rows.size(), perts.size());
  EXPECT_EQ(study.rows[0].rate_perturbed, base.percentage);
  EXPECT_EQ(*study.rows[0].rate_original, base.percentage);
  EXPECT_TRUE(study.rows[4].skipped);
  EXPECT_TRUE(study.rows[5].skipped);
  EXPECT_FALSE(study.rows[6].skipped);
  EXPECT_FALSE(study.rows[6].rate_original.has_value());
  EXPECT_NE(study_table(study).find("skipped"), std::string::npos);
  EXPECT_NE(study_to_json(study).find("\"rate_original\": null"), std::string::npos);

  // The ablation never sees spec tokens, so same-horizon rollouts are identical.
  const model::PastelModel pact_model(small_config(true), 3);
  const auto pact = perturbation_study(pact_model, "d", f, perts, kWorld, options(20, 4));
  for (std::size_t i = 1; i < 4; ++i) EXPECT_EQ(*pact.rows[i].rate_original, *pact.rows[0].rate_original);
}

TEST(EvalPlots, GoldenSvgForAThreeStepTrajectory) {
  const auto t = env::rollout_actions({1.0, 1.0, 0.0, 0.0}, {{1.0, 0.5}, {0.5, 1.0}, {-0.5, 0.0}}, kWorld);
  EXPECT_EQ(render_svg(t, kWorld), read_file(kData / "plot_3step.svg"));
}

TEST(EvalPlots, WritesFilesDeterministically) {
  TempDir a("plots_a"), b("plots_b");
  const auto t = env::rollout_actions({1.0, 1.0, 0.0, 0.0}, {{1.0, 0.5}, {0.5, 1.0}}, kWorld);
  const std::vector<env::Trajectory> trajs{t, t};
  export_plots(trajs, kWorld, a.path);
  export_plots(trajs, kWorld, b.path);
  for (const char* name : {"traj_000.svg", "traj_001.svg", "trajectories.csv"}) {
    EXPECT_EQ(read_file(a.path / name), read_file(b.path / name)) << name;
  }
  const std::string csv = read_file(a.path / "trajectories.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "trajectory,t,px,py,vx,vy,ax,ay");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 1 + 2 * 3);

  TempDir empty("plots_empty");
  export_plots({}, kWorld, empty.path);
  EXPECT_FALSE(std::filesystem::exists(empty.path));
}

TEST(EvalAttention, LabelsMassAndCsv) {
  EXPECT_EQ(position_label(0), "SPEC_0");
  EXPECT_EQ(position_label(4), "STATE_1");
  EXPECT_EQ(position_label(8), "ACTION_2");

  const model::PastelModel m(small_config(), 5);
  const auto f = stl::parse("F[0,4](R1)");
  const auto x0 = sample_initial_states(2, 1, kWorld);
  const auto a = inspect_attention(m, f, x0, kWorld);
  ASSERT_EQ(a.summary.spec_mass_by_layer.size(), 1u);
  for (double v : a.summary.spec_mass_by_layer) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
  // Uniform rows over 3t+2 visible positions with t+1 spec columns, t = 0..3.
  EXPECT_NEAR(a.summary.uniform_spec_mass, (1.0 / 2 + 2.0 / 5 + 3.0 / 8 + 4.0 / 11) / 4, 1e-15);

  TempDir d("attn");
  write_attention_csv(a, d.path);
  const std::string layer = read_file(d.path / "layer0_head1.csv");
  EXPECT_EQ(layer.substr(0, layer.find('\n')),
            "row,SPEC_0,STATE_0,ACTION_0,SPEC_1,STATE_1,ACTION_1,SPEC_2,STATE_2,ACTION_2,SPEC_3,STATE_3,ACTION_3");
  const std::string cross = read_file(d.path / "cross_head0.csv");
  EXPECT_NE(cross.find("\nTOKEN_0:F,"), std::string::npos);
  EXPECT_FALSE(std::filesystem::exists(d.path / "layer0_head2.csv"));
}
