// hoflow: verify | rate | train | sample | audit-net
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"

#include "hoflow/harness.hpp"

using namespace hoflow;

namespace {

struct Common {
  std::string config;
  std::string out;
  long long seed = -1;
  int jobs = 0;
};

void add_common(CLI::App* app, Common& c, const char* out_help) {
  app->add_option("--config", c.config, "experiment config (key = value)");
  app->add_option("--out", c.out, out_help);
  app->add_option("--seed", c.seed, "override the config seed");
  app->add_option("--jobs", c.jobs, "worker threads (default: HOFLOW_JOBS or 1)")->check(CLI::PositiveNumber);
}

ExperimentConfig resolve(const Common& c) {
  ExperimentConfig cfg = c.config.empty() ? ExperimentConfig() : ExperimentConfig::load(c.config);
  if (c.seed >= 0) cfg.set("seed", std::to_string(c.seed));
  return cfg;
}

int jobs_of(const Common& c) { return c.jobs > 0 ? c.jobs : default_jobs(); }

int finish(ExperimentReport& rep, const std::string& dir) {
  rep.write(dir);
  std::printf("%s: %s (%d pass, %d fail, %d not-applicable) config %s -> %s\n", rep.command.c_str(),
              rep.pass() ? "PASS" : "FAIL", rep.count(Verdict::Pass), rep.count(Verdict::Fail),
              rep.count(Verdict::NotApplicable), rep.config_hash.c_str(), dir.c_str());
  for (const auto& c : rep.checks)
    if (c.verdict == Verdict::Fail)
      std::printf("  FAIL %s/%s%s%s\n", c.suite.c_str(), c.name.c_str(), c.note.empty() ? "" : ": ", c.note.c_str());
  for (const auto& e : rep.errors) std::printf("  ERROR %s\n", e.c_str());
  return rep.pass() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Higher-order flow matching: bound verification, rate studies, training and sampling"};
  app.require_subcommand(1);

  Common vc, rc, tc, ac;
  std::vector<std::string> suites;
  auto* verify = app.add_subcommand("verify", "run the bound-verification suites");
  add_common(verify, vc, "report directory");
  verify->add_option("--suite", suites, "suite name (repeatable; default from config)");

  auto* rate = app.add_subcommand("rate", "run the small-t / large-t rate study");
  add_common(rate, rc, "report directory");

  std::string report_dir;
  auto* train = app.add_subcommand("train", "train velocity and acceleration networks, sample, compare");
  add_common(train, tc, "model file");
  train->add_option("--report", report_dir, "report directory (default: next to the model)");

  std::string model_path, points_path = "points.csv";
  int n = 4096, steps = 64, order = 2;
  long long sample_seed = 1;
  auto* sample = app.add_subcommand("sample", "sample a trained model with the Taylor ODE sampler");
  sample->add_option("--model", model_path, "model file")->required();
  sample->add_option("--n", n, "number of samples")->check(CLI::PositiveNumber);
  sample->add_option("--steps", steps, "ODE steps")->check(CLI::PositiveNumber);
  sample->add_option("--order", order, "1 (Euler) or 2 (second-order Taylor)")->check(CLI::IsMember({1, 2}));
  sample->add_option("--seed", sample_seed, "noise seed");
  sample->add_option("--out", points_path, "CSV of samples");

  auto* audit = app.add_subcommand("audit-net", "certify gadgets and the acceleration network");
  add_common(audit, ac, "report directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*verify) {
      ExperimentConfig cfg = resolve(vc);
      if (!suites.empty()) {
        std::string joined;
        for (const auto& s : suites) joined += (joined.empty() ? "" : ",") + s;
        cfg.set("verify.suites", joined);
      }
      ExperimentReport rep = run_verify(cfg, jobs_of(vc));
      return finish(rep, vc.out.empty() ? cfg.text("output.dir") : vc.out);
    }
    if (*rate) {
      const ExperimentConfig cfg = resolve(rc);
      ExperimentReport rep = run_rate_study(cfg, jobs_of(rc));
      for (const auto& f : rep.rate_fits)
        std::printf("  %s: slope %.3f [%.3f, %.3f] R2 %.3f%s\n", f.regime.c_str(), f.fit.slope, f.ci_low, f.ci_high,
                    f.fit.r2, f.saturated ? " (saturated)" : "");
      return finish(rep, rc.out.empty() ? cfg.text("output.dir") : rc.out);
    }
    if (*train) {
      const ExperimentConfig cfg = resolve(tc);
      const std::string model = tc.out.empty() ? (std::filesystem::path(cfg.text("output.dir")) / cfg.text("output.model")).string() : tc.out;
      const std::filesystem::path parent = std::filesystem::path(model).parent_path();
      if (!parent.empty()) std::filesystem::create_directories(parent);
      PipelineResult res = run_pipeline(cfg, jobs_of(tc));
      if (res.model) {
        res.model->save(model);
        res.report.artifacts.push_back(model);
      }
      for (const auto& d : res.report.distances)
        std::printf("  %-8s order %d steps %3d  W1 %.5f  W2 %.5f\n", d.source.c_str(), d.order, d.steps, d.W1, d.W2);
      return finish(res.report, report_dir.empty() ? (parent.empty() ? std::string(".") : parent.string()) : report_dir);
    }
    if (*sample) {
      const TrainedFlowModel m = TrainedFlowModel::load(model_path);
      const Eigen::MatrixXd X = sample_ode(m, n, steps, order, static_cast<std::uint64_t>(sample_seed));
      std::ofstream os(points_path);
      if (!os) throw ConfigError("sample: cannot write " + points_path);
      for (int i = 0; i < X.rows(); ++i) os << (i ? "," : "") << "x" << i;
      os << "\n";
      for (int c = 0; c < X.cols(); ++c) {
        for (int i = 0; i < X.rows(); ++i) os << (i ? "," : "") << fmt(X(i, c));
        os << "\n";
      }
      std::printf("sample: %d points (order %d, %d steps) -> %s\n", n, order, steps, points_path.c_str());
      return 0;
    }
    if (*audit) {
      const ExperimentConfig cfg = resolve(ac);
      ExperimentReport rep = run_audit_net(cfg, jobs_of(ac));
      return finish(rep, ac.out.empty() ? cfg.text("output.dir") : ac.out);
    }
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "hoflow: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "hoflow: %s\n", e.what());
    return 3;
  }
  return 0;
}
