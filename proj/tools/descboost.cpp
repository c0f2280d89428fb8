// Copyright 2026 The descboost Authors. All Rights Reserved.
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

// descboost command-line tool. Exit codes: 0 success, 1 verification
// failure, 2 usage or configuration error, 3 numerical abort.

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "descboost/bench.hpp"
#include "descboost/fileio.hpp"
#include "descboost/trainer.hpp"
#include "descboost/verify.hpp"

namespace {

using namespace descboost;

constexpr int kExitOk = 0;
constexpr int kExitVerifyFailed = 1;
constexpr int kExitUsage = 2;
constexpr int kExitNumerical = 3;

constexpr const char* kFooter = R"(CSV schemas:
  train    <out-checkpoint>.metrics.csv: epoch,step,lr,loss,ap_boosted,ap_raw
           row 0 evaluates the initial weights on the held-out pairs; row e is
           the mean training loss of epoch e and held-out APs after it.
  match    stdout: i,j,distance,ratio (ratio empty when B has one descriptor)
  eval     <report>.csv: threshold_px,mma,correct,matches,features_a,features_b
           for thresholds 1..10 px; <report>.svg plots the same curve.
  bench    stdout: attention,n,d,trials,median_ms,peak_transient_bytes

Exit codes: 0 ok, 1 verification failed, 2 usage/configuration, 3 numerical abort.)";

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw ConfigurationError("cannot write '" + path + "'");
  f << text;
  if (!f) throw ConfigurationError("write failed for '" + path + "'");
}

SceneSpec load_scene(const std::string& path) {
  if (path.empty()) return SceneSpec{};
  auto c = KeyValueConfig::load(path);
  auto s = SceneSpec::from_config(c);
  s.validate();
  return s;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string config, out, scene;
  std::optional<std::uint64_t> seed;
};

int run_train(const TrainArgs& a) {
  auto c = KeyValueConfig::load(a.config);
  TrainConfig cfg = TrainConfig::from_config(c);
  if (a.seed) cfg.seed = *a.seed;
  cfg.validate();
  const SceneSpec scene = load_scene(a.scene);
  TrainHooks hooks;
  hooks.on_epoch = [](const MetricsRow& r) {
    std::fprintf(stderr, "epoch %zu  loss %.6f  ap_boosted %.4f  ap_raw %.4f\n", r.epoch, r.loss, r.ap_boosted,
                 r.ap_raw);
  };
  const TrainResult res = train_on_scene(cfg, scene, hooks);
  save_checkpoint(a.out, res.params);
  std::ostringstream csv;
  write_metrics_csv(csv, res.log);
  write_text(a.out + ".metrics.csv", csv.str());
  if (res.aborted) {
    std::fprintf(stderr, "numerical abort: %s\n", res.diagnostics.c_str());
    return kExitNumerical;
  }
  std::fprintf(stderr, "held-out AP %.4f -> %.4f (raw %.4f)\n", res.initial.ap_boosted, res.final_eval.ap_boosted,
               res.final_eval.ap_raw);
  return kExitOk;
}

int run_boost(const std::string& ckpt, const std::string& in, const std::string& out) {
  const auto p = load_checkpoint(ckpt);
  save_features(out, boost(load_features(in), p));
  return kExitOk;
}

struct MatchArgs {
  std::string a, b, metric, filter, warp, report;
};

std::string svg_plot(const MmaCurve& curve, const std::string& title) {
  // 400×300 canvas, 40 px margins; x = threshold 0..10, y = MMA 0..1.
  auto px = [](double t) { return 40.0 + 32.0 * t; };
  auto py = [](double m) { return 260.0 - 220.0 * m; };
  std::ostringstream s;
  s << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"400\" height=\"300\">\n"
    << "<rect width=\"400\" height=\"300\" fill=\"white\"/>\n"
    << "<text x=\"200\" y=\"20\" text-anchor=\"middle\" font-size=\"13\">" << title << "</text>\n"
    << "<line x1=\"40\" y1=\"260\" x2=\"360\" y2=\"260\" stroke=\"black\"/>\n"
    << "<line x1=\"40\" y1=\"260\" x2=\"40\" y2=\"40\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 10; t += 2) {
    s << "<text x=\"" << px(t) << "\" y=\"276\" text-anchor=\"middle\" font-size=\"10\">" << t << "</text>\n";
  }
  for (int k = 0; k <= 4; ++k) {
    s << "<text x=\"34\" y=\"" << py(k / 4.0) + 3 << "\" text-anchor=\"end\" font-size=\"10\">" << k / 4.0
      << "</text>\n";
  }
  s << "<text x=\"200\" y=\"294\" text-anchor=\"middle\" font-size=\"11\">threshold [px]</text>\n"
    << "<polyline fill=\"none\" stroke=\"#1f5fa8\" stroke-width=\"2\" points=\"";
  for (std::size_t t = 0; t < curve.size(); ++t) s << px(static_cast<double>(t + 1)) << ',' << py(curve[t]) << ' ';
  s << "\"/>\n</svg>\n";
  return s.str();
}

int run_match(const MatchArgs& a, bool require_warp) {
  if (require_warp && (a.warp.empty() || a.report.empty())) {
    throw ConfigurationError("eval needs --warp and --report");
  }
  const auto fa = load_features(a.a), fb = load_features(a.b);
  if (!fa.empty() && !fb.empty() && fa.kind() != fb.kind()) {
    throw ConfigurationError("descriptor kinds differ between --a and --b");
  }
  const Metric metric = a.metric.empty() ? default_metric(fa.empty() ? fb.kind() : fa.kind()) : parse_metric(a.metric);
  MatchSet ms = mutual_nn_match(fa, fb, metric);
  if (!a.filter.empty()) ms = filter_matches(ms, MatchFilter::parse(a.filter));

  std::printf("i,j,distance,ratio\n");
  for (const auto& m : ms.matches) {
    if (m.ratio) {
      std::printf("%u,%u,%.9g,%.9g\n", m.i, m.j, m.distance, *m.ratio);
    } else {
      std::printf("%u,%u,%.9g,\n", m.i, m.j, m.distance);
    }
  }
  if (a.warp.empty()) return kExitOk;
  const auto curve = mma(ms, load_warp(a.warp), fa, fb);
  std::ostringstream csv;
  csv << "threshold_px,mma,correct,matches,features_a,features_b\n";
  char buf[160];
  for (std::size_t t = 0; t < curve.size(); ++t) {
    const auto correct = static_cast<std::size_t>(std::llround(curve[t] * static_cast<double>(ms.size())));
    std::snprintf(buf, sizeof buf, "%zu,%.9f,%zu,%zu,%zu,%zu\n", t + 1, curve[t], correct, ms.size(), fa.size(),
                  fb.size());
    csv << buf;
  }
  if (a.report.empty()) {
    std::cerr << csv.str();
  } else {
    write_text(a.report + ".csv", csv.str());
    write_text(a.report + ".svg", svg_plot(curve, "MMA " + a.a));
  }
  return kExitOk;
}

struct BenchArgs {
  std::string attention = "aft";
  std::vector<std::size_t> n{1000, 2000, 4000};
  std::size_t d = 32;
  std::size_t trials = 5;
};

int run_bench(const BenchArgs& a) {
  std::vector<BenchRow> rows;
  const auto kind = parse_attention(a.attention);
  for (std::size_t n : a.n) rows.push_back(bench_attention(kind, n, a.d, a.trials));
  write_bench_csv(std::cout, rows);
  return kExitOk;
}

int run_verify(const std::string& suite) {
  if (suite != "gradcheck" && suite != "oracles" && suite != "all") {
    throw ConfigurationError("unknown suite '" + suite + "' (expected gradcheck, oracles or all)");
  }
  // Fault-injection hook for exercising the gradient checker itself.
  if (const char* p = std::getenv("DESCBOOST_PERTURB_BACKWARD")) debug::backward_perturbation().store(std::atof(p));
  std::vector<verify::CheckRow> rows;
  if (suite != "gradcheck") rows = verify::oracles_suite();
  if (suite != "oracles") {
    auto g = verify::gradcheck_suite();
    rows.insert(rows.end(), g.begin(), g.end());
  }
  verify::print_table(std::cout, rows);
  return verify::all_pass(rows) ? kExitOk : kExitVerifyFailed;
}

int run_gen(const std::string& scene, std::optional<std::uint64_t> seed, const std::string& out) {
  SceneSpec s = load_scene(scene);
  if (seed) s.seed = *seed;
  save_pair(PairPaths::from_prefix(out), generate_pair(s));
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"descboost: context-aware local descriptor boosting"};
  app.footer(kFooter);
  app.require_subcommand(1);

  TrainArgs train;
  auto* train_cmd = app.add_subcommand("train", "train a booster on a synthetic scene stream");
  train_cmd->add_option("--config", train.config, "training config (key = value)")->required()->check(CLI::ExistingFile);
  train_cmd->add_option("--out-checkpoint", train.out, "checkpoint to write; metrics go to <path>.metrics.csv")
      ->required();
  train_cmd->add_option("--scene", train.scene, "scene config (defaults when omitted)")->check(CLI::ExistingFile);
  train_cmd->add_option("--seed", train.seed, "overrides the config seed");

  std::string ckpt, in, out;
  auto* boost_cmd = app.add_subcommand("boost", "apply a trained booster to a feature file");
  boost_cmd->add_option("--checkpoint", ckpt)->required()->check(CLI::ExistingFile);
  boost_cmd->add_option("--in", in)->required()->check(CLI::ExistingFile);
  boost_cmd->add_option("--out", out)->required();

  MatchArgs match;
  auto add_match_flags = [&match](CLI::App* c) {
    c->add_option("--a", match.a)->required()->check(CLI::ExistingFile);
    c->add_option("--b", match.b)->required()->check(CLI::ExistingFile);
    c->add_option("--metric", match.metric, "euclidean or hamming (default from descriptor kind)");
    c->add_option("--filter", match.filter, "ratio:T or dist:T (none when omitted)");
    c->add_option("--warp", match.warp, "A-to-B homography (9 numbers) for MMA")->check(CLI::ExistingFile);
    c->add_option("--report", match.report, "prefix for <report>.csv and <report>.svg");
  };
  auto* match_cmd = app.add_subcommand("match", "mutual nearest-neighbor matching");
  add_match_flags(match_cmd);
  auto* eval_cmd = app.add_subcommand("eval", "matching plus MMA report (needs --warp and --report)");
  add_match_flags(eval_cmd);

  BenchArgs bench;
  auto* bench_cmd = app.add_subcommand("bench", "attention time and memory scaling");
  bench_cmd->add_option("--attention", bench.attention, "aft or mha")->check(CLI::IsMember({"aft", "mha"}));
  bench_cmd->add_option("--n", bench.n, "context sizes")->delimiter(',')->check(CLI::PositiveNumber);
  bench_cmd->add_option("--d", bench.d)->check(CLI::PositiveNumber);
  bench_cmd->add_option("--trials", bench.trials)->check(CLI::PositiveNumber);

  std::string suite = "all";
  auto* verify_cmd = app.add_subcommand("verify", "gradient checks and brute-force oracles");
  verify_cmd->add_option("--suite", suite, "gradcheck, oracles or all");

  std::string gen_scene, gen_out;
  std::optional<std::uint64_t> gen_seed;
  auto* gen_cmd = app.add_subcommand("gen", "write a synthetic pair: <out>.a.fbf, <out>.b.fbf, <out>.warp");
  gen_cmd->add_option("--scene", gen_scene)->check(CLI::ExistingFile);
  gen_cmd->add_option("--seed", gen_seed);
  gen_cmd->add_option("--out", gen_out)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (*train_cmd) return run_train(train);
    if (*boost_cmd) return run_boost(ckpt, in, out);
    if (*match_cmd) return run_match(match, false);
    if (*eval_cmd) return run_match(match, true);
    if (*bench_cmd) return run_bench(bench);
    if (*verify_cmd) return run_verify(suite);
    if (*gen_cmd) return run_gen(gen_scene, gen_seed, gen_out);
  } catch (const NumericalAbort& e) {
    std::fprintf(stderr, "numerical abort: %s\n", e.what());
    return kExitNumerical;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  }
  return kExitUsage;
}
