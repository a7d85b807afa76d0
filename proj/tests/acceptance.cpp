/* Copyright 2026 The advseg Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/
// Acceptance run: prints one "Criterion k: PASS|FAIL" line per criterion.
// Criteria 6-10 train real models and take tens of minutes on one core.
// The exit status is 0 whenever every criterion ran to completion, whatever
// its verdict; it is 1 only if the harness itself failed.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "advseg/checkpoint.hpp"
#include "advseg/experiment.hpp"
#include "advseg/losses.hpp"
#include "advseg/ops.hpp"
#include "advseg/warp.hpp"
#include "test_util.hpp"

namespace {

using namespace advseg;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

bool harness_ok = true;

void report(int k, const std::function<Verdict()>& body) {
  const auto t0 = Clock::now();
  Verdict v;
  try {
    v = body();
  } catch (const std::exception& e) {
    v = {false, std::string("exception: ") + e.what()};
    harness_ok = false;
  }
  std::cout << "Criterion " << k << ": " << (v.pass ? "PASS" : "FAIL") << " - " << v.detail << " ["
            << fmt("%.1f", seconds_since(t0)) << " s]" << std::endl;
}

// 1. Closed-form loss examples.
Verdict loss_oracles() {
  struct Case {
    const char* name;
    double got;
    double oracle;
  };
  using SoftD = SoftSegmentationT<double>;
  auto pixel = [](std::initializer_list<double> p) {
    SoftD s{Tensor<double>({1, int(p.size()), 1, 1})};
    std::copy(p.begin(), p.end(), s.probs.data());
    return s;
  };
  DeformationFieldT<double> ones{ImageT<double>::Ones(2, 2), ImageT<double>::Ones(2, 2)};
  const auto w = wgan_pair(0.3, 0.1);
  LossComponents<double> comp;
  comp.gen_adv = 0.2;
  comp.target = 2.25;
  comp.reg_d = 0.1;
  comp.reg_v = 0.0025;
  const double h08 = -(0.2 * std::log(0.2) + 0.8 * std::log(0.8));
  const std::vector<Case> cases = {
      {"reg_D mean", reg_deformation(ones, 0.1, NormMode::kMean), 0.1 * 1.0},
      {"reg_D sum", reg_deformation(ones, 0.1, NormMode::kSum), 0.1 * 8.0},
      {"reg_V mean", reg_intensity<double>(ImageT<double>::Constant(3, 3, 0.5), 0.01, NormMode::kMean), 0.01 * 0.25},
      {"wgan gen", w.gen, 0.3 - 0.1},
      {"wgan disc", w.disc, 0.1 - 0.3},
      {"xent 0.8", xent(pixel({0.2, 0.8}), pixel({0, 1})), -std::log(0.8)},
      {"xent uniform", xent(pixel({0.2, 0.2, 0.2, 0.2, 0.2}), pixel({0, 0, 0, 1, 0})), std::log(5.0)},
      {"masked_xent", masked_xent(pixel({0.5, 0.5}), pixel({0.2, 0.8})), 0.8 * -std::log(0.5)},
      {"masked_xent self", masked_xent(pixel({0.2, 0.8}), pixel({0.2, 0.8})), 0.8 * h08},
      {"target", target_loss_value(0.5, 2.0), (2.0 - 0.5) * (2.0 - 0.5)},
      {"L_gen", total_losses(comp).gen, 0.2 + 2.25 + 0.1 + 0.0025},
  };
  // Published four/five-digit values, checked against the oracles.
  const std::vector<std::pair<double, double>> quoted = {
      {-std::log(0.8), 0.22314}, {std::log(5.0), 1.60944}, {0.8 * std::log(2.0), 0.55452}, {0.8 * h08, 0.40032}};
  double worst = 0;
  std::string worst_name = "-";
  for (const auto& c : cases) {
    const double e = std::abs(c.got - c.oracle);
    if (e >= worst) {
      worst = e;
      worst_name = c.name;
    }
  }
  bool quoted_ok = true;
  for (const auto& [exact, q] : quoted) quoted_ok = quoted_ok && std::abs(exact - q) < 5e-6;
  return {worst < 1e-6 && quoted_ok, std::to_string(cases.size()) + " examples, max abs error " +
                                         fmt("%.2e", worst) + " (" + worst_name + ")" +
                                         (quoted_ok ? "" : "; quoted values disagree")};
}

// 2. 0.7 x baseline row reproduces the 30%-decrease row.
Verdict threshold_arithmetic() {
  const double baseline[] = {80.07, 94.74, 94.71, 94.76};
  const double published[] = {56.05, 66.32, 66.30, 66.33};
  double worst = 0;
  std::string got;
  for (int i = 0; i < 4; ++i) {
    const double t = kSuccessRatio * baseline[i];
    worst = std::max(worst, std::abs(t - published[i]));
    got += (i ? ", " : "") + fmt("%.3f", t);
  }
  return {worst <= 0.01, "thresholds {" + got + "}, max deviation " + fmt("%.4f", worst)};
}

// 3. Success flags of three published rows.
Verdict success_flags() {
  const bool pancreas = attack_success(0.8007, 0.5359);
  const bool kidneys = attack_success(0.9474, 0.6697);
  const bool liver = attack_success(0.9471, 0.5951);
  const bool ok = pancreas && !kidneys && liver;
  return {ok, std::string("pancreas xi=2.0 ") + (pancreas ? "success" : "no success") + ", kidneys xi=1.5 " +
                  (kidneys ? "success" : "no success") + ", liver xi=1.0 " + (liver ? "success" : "no success")};
}

// 4. Warp properties and 100 double-precision gradient checks.
Verdict warp_suite() {
  using ImageD = ImageT<double>;
  using FieldD = DeformationFieldT<double>;
  std::mt19937_64 rng(2026);
  std::uniform_real_distribution<double> u(-1, 1), frac(0.05, 0.95);
  std::uniform_int_distribution<int> shift(-2, 2);
  auto random_image = [&](int h, int w) {
    ImageD img(h, w);
    for (Index i = 0; i < img.size(); ++i) img.data()[i] = u(rng);
    return img;
  };
  auto random_field = [&](int h, int w) {
    FieldD d = FieldD::zeros(h, w);
    for (Index i = 0; i < d.dx.size(); ++i) {
      d.dx.data()[i] = shift(rng) + frac(rng);
      d.dy.data()[i] = shift(rng) + frac(rng);
    }
    return d;
  };

  const ImageD base = random_image(12, 10);
  const bool identity = (apply_deformation(base, FieldD::zeros(12, 10)) == base).all();

  bool bounded = true;
  for (int t = 0; t < 20; ++t) {
    const ImageD img = random_image(9, 9);
    const FieldD d = random_field(9, 9);
    const ImageD out = apply_deformation(img, d);
    for (int r = 0; r < 9; ++r) {
      for (int c = 0; c < 9; ++c) {
        const double y = std::clamp(r + d.dy(r, c), 0.0, 8.0), x = std::clamp(c + d.dx(r, c), 0.0, 8.0);
        const int y0 = int(y), x0 = int(x), y1 = std::min(y0 + 1, 8), x1 = std::min(x0 + 1, 8);
        const double lo = std::min({img(y0, x0), img(y0, x1), img(y1, x0), img(y1, x1)});
        const double hi = std::max({img(y0, x0), img(y0, x1), img(y1, x0), img(y1, x1)});
        bounded = bounded && out(r, c) >= lo - 1e-12 && out(r, c) <= hi + 1e-12;
      }
    }
  }

  bool equivariant = true;
  for (int sy = -2; sy <= 2; ++sy) {
    for (int sx = -2; sx <= 2; ++sx) {
      FieldD d = FieldD::zeros(12, 10);
      d.dx.setConstant(sx);
      d.dy.setConstant(sy);
      const ImageD out = apply_deformation(base, d);
      equivariant = equivariant && (out.block(2, 2, 8, 6) == base.block(2 + sy, 2 + sx, 8, 6)).all();
    }
  }

  double worst = 0;
  for (int t = 0; t < 100; ++t) {
    const int h = 6 + int(rng() % 5), w = 6 + int(rng() % 5);
    ImageD smooth(h, w);
    const double a = 0.2 + std::abs(u(rng)), b = 0.2 + std::abs(u(rng));
    for (int r = 0; r < h; ++r)
      for (int c = 0; c < w; ++c) smooth(r, c) = std::sin(a * r) + std::cos(b * c);
    worst = std::max(worst, warp_jacobian_check(smooth, random_field(h, w), 1e-4));
  }
  const bool ok = identity && bounded && equivariant && worst < 1e-3;
  return {ok, std::string("identity ") + (identity ? "ok" : "broken") + ", bounds " + (bounded ? "ok" : "violated") +
                  ", shift " + (equivariant ? "ok" : "broken") + ", max gradient rel. error " +
                  fmt("%.2e", worst) + " over 100 trials"};
}

// 5. Loss and reparameterization gradients against central differences on 4x4 probes.
Verdict gradient_suite() {
  using advseg::testing::gradient_check;
  using advseg::testing::random_simplex;
  using advseg::testing::random_tensor;
  using VD = std::vector<Var<double>>;
  std::mt19937_64 rng(5);
  const Tensor<double> s0 = random_simplex({2, 3, 4, 4}, rng);
  const Tensor<double> target = random_simplex({2, 3, 4, 4}, rng);
  const Tensor<double> noise = random_tensor({2, 16, 1, 1}, rng, -2, 2);
  struct Probe {
    const char* name;
    double err;
  };
  std::vector<Probe> probes = {
      {"masked_xent",
       gradient_check([](Graph<double>&, const VD& v) { return masked_xent_op(v[0], v[1]); },
                      {random_simplex({2, 3, 4, 4}, rng), s0}, {true, false})},
      {"target(masked_xent(softmax))",
       gradient_check(
           [&s0](Graph<double>& g, const VD& v) {
             return target_loss_op(masked_xent_op(softmax_channels(v[0]), g.constant(s0)), 2.0);
           },
           {random_tensor({2, 3, 4, 4}, rng, -2, 2)}, {true})},
      {"xent", gradient_check([&target](Graph<double>&, const VD& v) { return xent_op(v[0], target); },
                              {random_simplex({2, 3, 4, 4}, rng)}, {true})},
      {"reg mean", gradient_check([](Graph<double>&, const VD& v) { return squared_norm_op(v[0], 0.1, NormMode::kMean); },
                                  {random_tensor({2, 2, 4, 4}, rng)}, {true})},
      {"reg sum", gradient_check([](Graph<double>&, const VD& v) { return squared_norm_op(v[0], 0.01, NormMode::kSum); },
                                 {random_tensor({2, 1, 4, 4}, rng)}, {true})},
      {"wgan", gradient_check([](Graph<double>&, const VD& v) { return sub(mean(v[0]), mean(v[1])); },
                              {random_tensor({4, 1, 1, 1}, rng), random_tensor({4, 1, 1, 1}, rng)}, {true, true})},
      {"reparameterize",
       gradient_check([&noise](Graph<double>&, const VD& v) { return reparameterize(v[0], v[1], noise); },
                      {random_tensor({2, 16, 1, 1}, rng), random_tensor({2, 16, 1, 1}, rng)}, {true, true})},
  };
  double worst = 0;
  std::string detail;
  for (const auto& p : probes) {
    worst = std::max(worst, p.err);
    detail += std::string(detail.empty() ? "" : ", ") + p.name + " " + fmt("%.1e", p.err);
  }
  return {worst < 1e-3, "max rel. error " + fmt("%.2e", worst) + " (" + detail + ")"};
}

ExperimentConfig main_config(const fs::path& workdir) {
  ExperimentConfig cfg;
  cfg.seed = 0;
  cfg.output_dir = workdir / "main";
  cfg.trainer.total_steps = 600;
  cfg.eval.xi_list = {0.5, 2.0};
  return cfg;
}

double mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / double(v.size()); }

const EvalReport& find_row(const ReportTable& t, double xi, AttackMode m) {
  for (const auto& r : t.rows)
    if (r.xi == xi && r.mode == m) return r;
  throw std::runtime_error("report row missing");
}

struct Pipeline {
  ExperimentConfig cfg;
  SegTrainResult seg;
  ReportTable table;
  std::vector<TrainLog> logs;
  double seg_seconds = 0;
  double attack_seconds = 0;
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"advseg acceptance run"};
  fs::path workdir = fs::temp_directory_path() / "advseg_acceptance";
  app.add_option("--workdir", workdir, "Scratch directory (recreated)");
  CLI11_PARSE(app, argc, argv);
  fs::remove_all(workdir);
  fs::create_directories(workdir);

  const auto t1 = Clock::now();
  report(1, [&] {
    Verdict v = loss_oracles();
    const double s = seconds_since(t1);
    v.pass = v.pass && s < 10;
    return v;
  });
  report(2, threshold_arithmetic);
  report(3, success_flags);
  const auto t4 = Clock::now();
  report(4, [&] {
    Verdict v = warp_suite();
    v.pass = v.pass && seconds_since(t4) < 60;
    return v;
  });
  const auto t5 = Clock::now();
  report(5, [&] {
    Verdict v = gradient_suite();
    v.pass = v.pass && seconds_since(t5) < 60;
    return v;
  });

  Pipeline p;
  p.cfg = main_config(workdir);
  const Experiment exp(p.cfg, true);
  report(6, [&] {
    const auto t0 = Clock::now();
    exp.make_phantoms();
    p.seg = exp.train_segmenter();
    p.seg_seconds = seconds_since(t0);
    const auto dice = evaluate_segmenter(exp.load_segmenter(), exp.load_slices("val"), p.cfg.data.num_classes);
    const double m = mean(dice);
    std::string per;
    for (double d : dice) per += (per.empty() ? "" : ", ") + fmt("%.3f", d);
    return Verdict{m >= 0.85 && p.seg_seconds <= 20 * 60,
                   "validation mean foreground Dice " + fmt("%.4f", m) + " {" + per + "} after " +
                       std::to_string(p.cfg.segmenter.train.epochs) + " epochs (best epoch " +
                       std::to_string(p.seg.best_epoch) + "), " + fmt("%.0f", p.seg_seconds) + " s"};
  });

  std::uint64_t seg_hash_before = 0;
  std::vector<std::string> stored_hashes;
  report(7, [&] {
    const auto t0 = Clock::now();
    seg_hash_before = exp.load_segmenter().state_hash();
    for (double xi : p.cfg.eval.xi_list) {
      p.logs.push_back(exp.train_attack(xi).log);
      std::ifstream meta(exp.attacker_dir(xi) / "meta.json");
      stored_hashes.push_back(nlohmann::json::parse(meta).at("segmenter_hash").get<std::string>());
    }
    p.table = exp.evaluate(p.cfg.eval.xi_list, p.cfg.eval.modes);
    p.attack_seconds = seconds_since(t0);
    const int large = p.cfg.data.num_classes - 1;
    const EvalReport& lo = find_row(p.table, 0.5, AttackMode::kDV);
    const EvalReport& hi = find_row(p.table, 2.0, AttackMode::kDV);
    const EvalReport& d_only = find_row(p.table, 2.0, AttackMode::kDOnly);
    const EvalReport& v_only = find_row(p.table, 2.0, AttackMode::kVOnly);
    const bool a = hi.per_class_dice[std::size_t(large)] < lo.per_class_dice[std::size_t(large)];
    int successes = 0;
    for (bool s : hi.success) successes += s;
    const bool b = successes >= 1;
    const bool c = hi.perceptibility <= 0.15;
    const bool d = d_only.mean_dice() >= hi.mean_dice() && v_only.mean_dice() >= hi.mean_dice();
    const bool t = p.attack_seconds <= 45 * 60;
    std::ostringstream s;
    s << "(a) large-class Dice xi=2.0 " << fmt("%.4f", hi.per_class_dice[std::size_t(large)]) << " vs xi=0.5 "
      << fmt("%.4f", lo.per_class_dice[std::size_t(large)]) << (a ? " ok" : " FAIL") << "; (b) " << successes
      << " class(es) successful" << (b ? " ok" : " FAIL") << "; (c) perceptibility " << fmt("%.4f", hi.perceptibility)
      << (c ? " ok" : " FAIL (> 0.15)") << "; (d) mean Dice D_only " << fmt("%.4f", d_only.mean_dice()) << ", V_only "
      << fmt("%.4f", v_only.mean_dice()) << " vs DV " << fmt("%.4f", hi.mean_dice()) << (d ? " ok" : " FAIL")
      << "; " << fmt("%.0f", p.attack_seconds) << " s" << (t ? "" : " (over budget)");
    return Verdict{a && b && c && d && t, s.str()};
  });
  if (p.logs.size() == 2) {
    for (std::size_t k = 0; k < 2; ++k) {
      const double xi = p.cfg.eval.xi_list[k];
      const auto& rows = p.logs[k].rows;
      const std::size_t w = std::min<std::size_t>(20, rows.size());
      double start = 0, end = 0;
      for (std::size_t i = 0; i < w; ++i) {
        start += std::abs(rows[i].masked_xent - xi) / double(w);
        end += std::abs(rows[rows.size() - 1 - i].masked_xent - xi) / double(w);
      }
      std::cout << "  note: xi=" << fmt("%g", xi) << " |masked_xent - xi| first " << w << " steps " << fmt("%.4f", start)
                << ", last " << w << " steps " << fmt("%.4f", end) << std::endl;
    }
    std::cout << p.table.csv();
  }

  std::uint64_t seg_hash_xi0_before = 0, seg_hash_xi0_after = 0;
  report(8, [&] {
    const auto t0 = Clock::now();
    const UNet<float> seg = exp.load_segmenter();
    const SliceSet train = exp.load_slices("train");
    TrainConfig tc = p.cfg.trainer;
    tc.seed = p.cfg.seed;
    tc.weights.xi = 0.0;
    tc.total_steps = 400;
    AttackerConfig ac = p.cfg.attacker.model;
    ac.rows = p.cfg.data.rows;
    ac.cols = p.cfg.data.cols;
    ac.seed = p.cfg.seed;
    const CriticModel<float> critic(
        CriticConfig{p.cfg.data.rows, p.cfg.data.cols, p.cfg.attacker.critic_base_channels, p.cfg.seed + 1});
    seg_hash_xi0_before = seg.state_hash();
    const auto r = train_attacker(AttackerModel<float>(ac), critic, seg, train.images, tc);
    seg_hash_xi0_after = seg.state_hash();
    const auto& first = r.log.rows.front();
    const auto& last = r.log.rows.back();
    const bool d = last.mean_abs_d < first.mean_abs_d;
    const bool v = last.mean_abs_v < first.mean_abs_v;
    const bool pc = last.perceptibility < 0.02;
    const bool t = seconds_since(t0) <= 10 * 60;
    return Verdict{d && v && pc && t, "mean|D| " + fmt("%.4f", first.mean_abs_d) + " -> " + fmt("%.4f", last.mean_abs_d) +
                                     ", mean|V| " + fmt("%.4f", first.mean_abs_v) + " -> " +
                                     fmt("%.4f", last.mean_abs_v) + ", final perceptibility " +
                                     fmt("%.4f", last.perceptibility) + " over 400 steps"};
  });

  report(9, [&] {
    std::string reports[2];
    std::string logs[2];
    for (int run = 0; run < 2; ++run) {
      ExperimentConfig cfg;
      cfg.seed = 11;
      cfg.output_dir = workdir / ("determinism_" + std::to_string(run));
      cfg.data.num_subjects = 6;
      cfg.data.slices_per_subject = 4;
      cfg.data.split = {4, 1, 1};
      cfg.segmenter.train.epochs = 2;
      cfg.trainer.total_steps = 20;
      cfg.eval.xi_list = {2.0};
      const Experiment e(cfg, true);
      e.make_phantoms();
      e.train_segmenter();
      e.train_attack(2.0);
      e.evaluate(cfg.eval.xi_list, cfg.eval.modes);
      std::ifstream rin(cfg.output_dir / "eval" / "report.csv", std::ios::binary);
      std::ifstream lin(cfg.output_dir / "attacker" / "xi_2" / "train_log.csv", std::ios::binary);
      std::ostringstream rs, ls;
      rs << rin.rdbuf();
      ls << lin.rdbuf();
      reports[run] = rs.str();
      logs[run] = ls.str();
    }
    const bool same = !reports[0].empty() && reports[0] == reports[1];
    const bool same_log = logs[0] == logs[1];
    return Verdict{same && same_log, std::string("report.csv ") + (same ? "identical" : "differs") + " (" +
                                         std::to_string(reports[0].size()) + " bytes), train_log.csv " +
                                         (same_log ? "identical" : "differs")};
  });

  report(10, [&] {
    const std::uint64_t after = exp.load_segmenter().state_hash();
    bool stored = !stored_hashes.empty();
    for (const auto& h : stored_hashes) stored = stored && h == hash_hex(seg_hash_before);
    const bool ok = seg_hash_before != 0 && after == seg_hash_before && stored &&
                    seg_hash_xi0_before == seg_hash_xi0_after && seg_hash_xi0_after == seg_hash_before;
    return Verdict{ok, "segmenter hash " + hash_hex(seg_hash_before) + " before, " + hash_hex(after) +
                           " after attack training (in-memory xi=0 run " + hash_hex(seg_hash_xi0_after) + ")"};
  });
  return harness_ok ? 0 : 1;
}
