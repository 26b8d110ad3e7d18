// Copyright 2026 The Contraction PPO Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "commands.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "config.hpp"
#include "cppo/certify.hpp"
#include "cppo/checkpoint.hpp"
#include "cppo/errors.hpp"
#include "cppo/random.hpp"
#include "cppo/trainer.hpp"

namespace cppo::tools {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

namespace {

class IoError : public Error {
 public:
  using Error::Error;
};

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory '" + dir.string() + "': " + ec.message());
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path.string() + "' for writing");
  out << content;
  out.flush();
  if (!out) throw IoError("write to '" + path.string() + "' failed");
}

std::string dump(const Json& j) { return j.dump(2) + "\n"; }

// Maps library errors onto exit codes so every command reports the same way.
template <class F>
int guarded(std::ostream& err, F&& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
  } catch (const CheckpointError& e) {
    err << "checkpoint error: " << e.what() << "\n";
  } catch (const IoError& e) {
    err << "io error: " << e.what() << "\n";
  } catch (const DivergenceError& e) {
    err << "diverged in " << e.component() << ": " << e.what() << "\n";
    return kExitDiverged;
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
  }
  return kExitConfig;
}

EnvOptions evaluation_env(const ExperimentConfig& cfg) {
  EnvOptions env = cfg.train.env;
  env.reset_fraction = cfg.evaluate.reset_fraction;
  env.stochastic = false;
  return env;
}

struct TrainOutcome {
  TrainResult result;
  ViolationStats initial;
  ViolationStats final_stats;
  EpisodeStats episodes;
};

// Trains from the config's initial state, writing checkpoint, metrics and
// summary into dir.
TrainOutcome train_into(const ControlAffineSystem& sys, const ExperimentConfig& cfg,
                        const fs::path& dir, std::ostream& log,
                        const IterationCallback& observe = {}) {
  ensure_dir(dir);
  const TrainConfig& tc = cfg.train;
  TrainState init = make_initial_state(sys, tc);
  const ViolationStats before =
      fresh_violation_rate(init.field, init.stack, sys, tc.alpha, tc.eps_margin,
                           cfg.evaluate.violation_samples, cfg.seeds.evaluate);

  std::ofstream metrics(dir / "metrics.csv", std::ios::binary | std::ios::trunc);
  if (!metrics) throw IoError("cannot open '" + (dir / "metrics.csv").string() + "'");
  write_metrics_header(metrics);
  const int every = std::max(1, tc.iterations / 20);
  auto on_iter = [&](const MetricsRow& row, const TrainState& state) {
    write_metrics_row(metrics, row);
    if (observe) observe(row, state);
    if (row.iter % every == 0 || row.iter + 1 == tc.iterations) {
      log << "iter " << row.iter << " reward " << format_double(row.mean_reward)
          << " violation " << format_double(row.violation_rate) << "\n";
    }
  };
  TrainOutcome out{train(sys, tc, std::move(init), on_iter), {}, {}, {}};
  metrics.flush();
  if (!metrics) throw IoError("write to metrics.csv failed");
  save_checkpoint(out.result.checkpoint, (dir / "checkpoint.bin").string());

  const TrainState& st = out.result.state;
  out.initial = before;
  out.final_stats = fresh_violation_rate(st.field, st.stack, sys, tc.alpha, tc.eps_margin,
                                         cfg.evaluate.violation_samples, cfg.seeds.evaluate);
  out.episodes = evaluate_episodes(st.stack, sys, evaluation_env(cfg), cfg.evaluate.episodes,
                                   cfg.seeds.evaluate);

  Json s;
  s["schema"] = "cppo.train_summary.v1";
  s["system"] = sys.name();
  s["iterations"] = static_cast<int>(out.result.log.size());
  s["diverged"] = out.result.diverged;
  s["divergence_component"] = out.result.divergence_component;
  s["skipped_contraction_samples"] = out.result.total_skipped;
  const double drop = before.rate > 0.0 ? 1.0 - out.final_stats.rate / before.rate : 0.0;
  s["violation"] = {{"samples", before.samples},
                    {"initial_rate", before.rate},
                    {"final_rate", out.final_stats.rate},
                    {"relative_drop", drop},
                    {"initial_skipped", before.skipped},
                    {"final_skipped", out.final_stats.skipped}};
  s["evaluation"] = {{"episodes", out.episodes.episodes},
                     {"failures", out.episodes.failures},
                     {"failure_rate", out.episodes.failure_rate},
                     {"mean_return", out.episodes.mean_return},
                     {"mean_step_reward", out.episodes.mean_step_reward}};
  const double l_m =
      out.result.log.empty() ? 0.0 : out.result.log.back().lipschitz_m;
  s["lipschitz"] = {{"L_pi", st.stack.deployed_lipschitz_bound()}, {"L_M", l_m}};
  write_file(dir / "train_summary.json", dump(s));
  return out;
}

TrainState load_state(const ControlAffineSystem& sys, const ExperimentConfig& cfg,
                      const std::string& checkpoint_path) {
  return state_from_checkpoint(sys, cfg.train, load_checkpoint(checkpoint_path));
}

IssOptions iss_options(const ExperimentConfig& cfg, double dbar) {
  IssOptions o;
  o.magnitudes = perturb_magnitudes(cfg.perturb, dbar);
  o.kind = cfg.perturb.kind;
  o.frequency = cfg.perturb.frequency;
  o.trajectories_per_magnitude = cfg.perturb.trajectories_per_magnitude;
  o.horizon_steps = cfg.perturb.horizon_steps;
  o.dt = cfg.train.env.dt;
  o.reset_fraction = cfg.perturb.reset_fraction;
  o.slack = cfg.perturb.slack;
  o.residual_stride = cfg.perturb.residual_stride;
  o.seed = cfg.seeds.perturb;
  return o;
}

// Unit direction over the velocity coordinates: where a push acts.
Vector push_direction(const ControlAffineSystem& sys) {
  Vector d = Vector::Zero(sys.state_dim());
  for (int i : sys.velocity_indices()) d(i) = 1.0;
  if (d.norm() == 0.0) d.setOnes();
  return d.normalized();
}

}  // namespace

int cmd_train(const std::string& config_path, std::ostream& log, std::ostream& err) {
  return cmd_train(config_path, log, err, {});
}

int cmd_train(const std::string& config_path, std::ostream& log, std::ostream& err,
              const IterationCallback& observe) {
  return guarded(err, [&] {
    const ExperimentConfig cfg = load_config(config_path);
    const auto sys = build_system(cfg.system);
    const fs::path dir = resolve_output_dir(cfg);
    const TrainOutcome out = train_into(*sys, cfg, dir, log, observe);
    log << "violation rate " << format_double(out.initial.rate) << " -> "
        << format_double(out.final_stats.rate) << ", episode failures "
        << out.episodes.failures << "/" << out.episodes.episodes << "\n";
    if (out.result.diverged) {
      err << "training diverged in " << out.result.divergence_component
          << "; last good parameters saved\n";
      return static_cast<int>(kExitDiverged);
    }
    return static_cast<int>(kExitOk);
  });
}

int cmd_certify(const std::string& checkpoint_path, const std::string& config_path,
                std::ostream& log, std::ostream& err) {
  return guarded(err, [&] {
    const ExperimentConfig cfg = load_config(config_path);
    const auto sys = build_system(cfg.system);
    const TrainState st = load_state(*sys, cfg, checkpoint_path);
    const PdPolicyController ctrl(st.stack, *sys);

    CertifyOptions opt;
    opt.samples = cfg.certify.samples;
    opt.boundary_fraction = cfg.certify.boundary_fraction;
    opt.safety = cfg.certify.safety;
    opt.alpha = cfg.train.alpha;
    opt.eps_margin = cfg.train.eps_margin;
    opt.seed = cfg.seeds.certify;
    opt.keep_rows = cfg.certify.dump_samples;
    CertificationReport report = certify(*sys, ctrl, st.field, opt);
    if (cfg.certify.iss) {
      report.iss = verify_iss(*sys, ctrl, st.field, cfg.train.alpha,
                              iss_options(cfg, sys->disturbance_bound()));
    }

    const fs::path dir = resolve_output_dir(cfg);
    ensure_dir(dir);
    write_file(dir / "certification.json", report_to_json(report));
    if (cfg.certify.dump_samples) {
      std::ostringstream csv;
      write_residual_csv(csv, report.residuals);
      write_file(dir / "residuals.csv", csv.str());
    }
    log << "verdict " << to_string(report.verdict) << ", margin "
        << format_double(report.theorem1_margin) << ", sampled worst "
        << format_double(report.residuals.worst_lambda_max) << ", violations "
        << report.residuals.violations << "/" << report.residuals.samples << "\n";
    if (!report.conservative) err << "warning: sampled residual exceeds the analytic margin\n";
    return static_cast<int>(report.verdict == Verdict::kFailed ? kExitCertificationFailed
                                                               : kExitOk);
  });
}

int cmd_perturb(const std::string& checkpoint_path, const std::string& config_path,
                std::ostream& log, std::ostream& err) {
  return guarded(err, [&] {
    const ExperimentConfig cfg = load_config(config_path);
    const auto sys = build_system(cfg.system);
    const TrainState st = load_state(*sys, cfg, checkpoint_path);
    const PdPolicyController ctrl(st.stack, *sys);
    const double alpha = cfg.train.alpha;
    const IssOptions opt = iss_options(cfg, sys->disturbance_bound());

    const IssResult iss = verify_iss(*sys, ctrl, st.field, alpha, opt, true);
    const PerturbConfig& pc = cfg.perturb;
    const DecayResult decay = verify_decay(*sys, ctrl, pc.decay_pairs, pc.decay_offset,
                                           pc.horizon_steps, cfg.train.env.dt,
                                           pc.reset_fraction, cfg.seeds.perturb);

    const fs::path dir = resolve_output_dir(cfg);
    const fs::path traj_dir = dir / "perturb";
    ensure_dir(traj_dir);

    std::vector<int> magnitude_index;
    for (const IssTrajectory& tr : iss.trajectories) {
      const auto it = std::find(opt.magnitudes.begin(), opt.magnitudes.end(), tr.magnitude);
      const int mi = static_cast<int>(it - opt.magnitudes.begin());
      magnitude_index.push_back(mi);
      std::ostringstream csv;
      csv << "t,error,bound\n";
      for (size_t k = 0; k < tr.times.size(); ++k) {
        csv << format_double(tr.times[k]) << ',' << format_double(tr.errors[k]) << ','
            << format_double(tr.bounds[k]) << '\n';
      }
      write_file(traj_dir / ("traj_m" + std::to_string(mi) + "_s" + std::to_string(tr.index) +
                             ".csv"),
                 csv.str());
    }
    {
      std::ostringstream csv;
      csv << "pair,t,error\n";
      for (size_t p = 0; p < decay.errors.size(); ++p) {
        for (size_t k = 0; k < decay.errors[p].size(); ++k) {
          csv << p << ',' << format_double(static_cast<double>(k) * cfg.train.env.dt) << ','
              << format_double(decay.errors[p][k]) << '\n';
        }
      }
      write_file(traj_dir / "decay.csv", csv.str());
    }

    Json s;
    s["schema"] = "cppo.perturb_summary.v1";
    s["system"] = sys->name();
    s["disturbance_bound"] = sys->disturbance_bound();
    s["kind"] = to_string(opt.kind);
    s["alpha"] = alpha;
    s["slack"] = opt.slack;
    Json per = Json::array();
    bool nondecreasing = true;
    for (size_t mi = 0; mi < opt.magnitudes.size(); ++mi) {
      int count = 0, clean = 0, within = 0;
      double max_ratio = 0.0;
      for (size_t k = 0; k < iss.trajectories.size(); ++k) {
        if (magnitude_index[k] != static_cast<int>(mi)) continue;
        const IssTrajectory& tr = iss.trajectories[k];
        ++count;
        if (tr.clean) {
          ++clean;
          if (tr.within_bound) ++within;
          max_ratio = std::max(max_ratio, tr.max_ratio);
        }
      }
      const double max_err = iss.max_error_per_magnitude[mi];
      if (mi > 0 && max_err < iss.max_error_per_magnitude[mi - 1]) nondecreasing = false;
      per.push_back({{"magnitude", opt.magnitudes[mi]},
                     {"trajectories", count},
                     {"max_error", max_err},
                     {"clean", clean},
                     {"clean_within_bound", within},
                     {"pass_rate", clean > 0 ? static_cast<double>(within) / clean : 0.0},
                     {"max_ratio_clean", max_ratio}});
    }
    s["magnitudes"] = per;
    s["max_error_nondecreasing"] = nondecreasing;
    s["iss_pass"] = iss.pass;
    s["decay"] = {{"pairs", static_cast<int>(decay.rates.size())},
                  {"rates", decay.rates},
                  {"min_rate", decay.min_rate},
                  {"required_rate", 0.5 * alpha},
                  {"pass", decay.min_rate >= 0.5 * alpha}};
    write_file(dir / "perturb_summary.json", dump(s));

    log << "iss " << (iss.pass ? "pass" : "fail") << " (" << iss.clean_within_bound << "/"
        << iss.clean << " clean trajectories within bound), decay rate "
        << format_double(decay.min_rate) << "\n";
    return static_cast<int>(kExitOk);
  });
}

int cmd_ablate(const std::string& config_path, std::ostream& log, std::ostream& err) {
  return guarded(err, [&] {
    const ExperimentConfig cfg = load_config(config_path);
    const auto sys = build_system(cfg.system);
    const fs::path dir = resolve_output_dir(cfg);
    const double dbar = sys->disturbance_bound();
    const std::vector<double> magnitudes = perturb_magnitudes(cfg.perturb, dbar);
    const EnvOptions env = evaluation_env(cfg);

    std::ostringstream table;
    table << "setting,magnitude,violation_rate,episodes,failures,failure_rate,mean_return\n";
    for (const char* setting : {"learned", "identity"}) {
      ExperimentConfig sc = cfg;
      sc.train.metric.identity = std::string(setting) == "identity";
      const fs::path sub = dir / "ablate" / setting;
      const fs::path ckpt = sub / "checkpoint.bin";
      TrainState st = [&] {
        if (fs::exists(ckpt)) {
          log << setting << ": reusing " << ckpt.string() << "\n";
          return load_state(*sys, sc, ckpt.string());
        }
        log << setting << ": training\n";
        TrainOutcome out = train_into(*sys, sc, sub, log);
        if (out.result.diverged) {
          throw DivergenceError("ablation run diverged", out.result.divergence_component);
        }
        return std::move(out.result.state);
      }();

      const ViolationStats v =
          fresh_violation_rate(st.field, st.stack, *sys, sc.train.alpha, sc.train.eps_margin,
                               sc.evaluate.violation_samples, sc.seeds.evaluate);
      for (double mag : magnitudes) {
        const DisturbanceModel dist =
            mag > 0.0 ? DisturbanceModel(cfg.perturb.kind, mag, push_direction(*sys), dbar,
                                         DisturbanceSchedule{0.0,
                                                             std::numeric_limits<double>::infinity(),
                                                             cfg.perturb.frequency,
                                                             cfg.seeds.perturb})
                      : DisturbanceModel();
        const EpisodeStats ep = evaluate_episodes(st.stack, *sys, env, sc.evaluate.episodes,
                                                  sc.seeds.evaluate, dist);
        table << setting << ',' << format_double(mag) << ',' << format_double(v.rate) << ','
              << ep.episodes << ',' << ep.failures << ',' << format_double(ep.failure_rate)
              << ',' << format_double(ep.mean_return) << '\n';
      }
      log << setting << ": violation rate " << format_double(v.rate) << "\n";
    }
    ensure_dir(dir);
    write_file(dir / "ablation.csv", table.str());
    return static_cast<int>(kExitOk);
  });
}

}  // namespace cppo::tools
