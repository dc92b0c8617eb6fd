// SPDX-License-Identifier: Apache-2.0
//
// Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>
#include <unistd.h>

#include "gradcheck.hpp"
#include "mpq/allocator.hpp"
#include "mpq/cost_model.hpp"
#include "mpq/indicator_trainer.hpp"
#include "mpq/pipeline.hpp"
#include "mpq/quantizer.hpp"
#include "mpq/search.hpp"
#include "mpq/training.hpp"
#include "oracles.hpp"

using namespace mpq;
namespace fs = std::filesystem;

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

struct Verdict {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& name, const std::function<Verdict()>& body) {
  const auto t0 = Clock::now();
  Verdict v;
  try {
    v = body();
  } catch (const std::exception& e) {
    v = {false, std::string("exception: ") + e.what()};
  }
  if (!v.pass) ++failures;
  std::printf("%s %2d %s (%.1fs) %s\n", v.pass ? "PASS" : "FAIL", id, name.c_str(),
              seconds_since(t0), v.detail.c_str());
  std::fflush(stdout);
}

fs::path scratch_root() {
  static const fs::path root =
      fs::temp_directory_path() / ("mpq-acceptance-" + std::to_string(::getpid()));
  return root;
}

// 1 --------------------------------------------------------------------------
Verdict quantizer_exactness() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(101);
  std::uniform_int_distribution<int> bits_d(2, 16), kind_d(0, 1);
  std::uniform_real_distribution<double> log_s(-5, 2), unit(0, 1);
  std::size_t bad = 0;
  for (int c = 0; c < 10000; ++c) {
    const int b = bits_d(rng);
    const bool is_signed = kind_d(rng) == 1;
    const auto spec = QuantSpec::make(b, is_signed ? TensorKind::weights : TensorKind::activations);
    const double s = std::pow(10.0, log_s(rng));
    const double lo = static_cast<double>(spec.min_level()), hi = static_cast<double>(spec.max_level());
    const double v[2] = {s * (lo - 4 + unit(rng) * (hi - lo + 8)),
                         s * (lo - 4 + unit(rng) * (hi - lo + 8))};
    const auto q = quantize_forward(v, s, spec);
    const auto codes = quantize_codes(v, s, spec);
    for (int k = 0; k < 2; ++k) {
      // grid membership
      if (codes[k] < spec.min_level() || codes[k] > spec.max_level()) ++bad;
      if (q[k] != static_cast<double>(codes[k]) * s) ++bad;
      if (q[k] != oracle::quantize(v[k], s, b, is_signed)) ++bad;
    }
    // idempotence
    if (quantize_forward(q, s, spec) != q) ++bad;
    // monotonicity
    const bool ordered = v[0] <= v[1];
    if (ordered ? q[0] > q[1] : q[0] < q[1]) ++bad;
  }
  const double t = seconds_since(t0);
  std::ostringstream d;
  d << "10000 cases, " << bad << " violations, " << t << "s";
  return {bad == 0 && t < 5.0, d.str()};
}

// 2 --------------------------------------------------------------------------
Verdict gradient_fidelity() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(202);
  std::uniform_real_distribution<double> unit(0, 1);
  std::size_t cases = 0, failed = 0;

  // Quantizer: grad_v and grad_s against the straight-through surrogate, and
  // against the literal quantizer where it is differentiable in s (clipped).
  for (int trial = 0; trial < 300; ++trial) {
    const int b = 2 + trial % 7;
    const bool is_signed = trial % 2 == 0;
    const auto spec = QuantSpec::make(b, is_signed ? TensorKind::weights : TensorKind::activations);
    const double s0 = 0.05 + unit(rng);
    const double lo = oracle::level_min(b, is_signed), hi = oracle::level_max(b, is_signed);
    double u0;
    do {
      u0 = lo - 3 + unit(rng) * (hi - lo + 6);
    } while (std::abs(u0 - lo) < 1e-3 || std::abs(u0 - hi) < 1e-3 ||
             std::abs(std::abs(u0 - std::floor(u0)) - 0.5) < 1e-3 || std::abs(u0) < 1e-3);
    const double v0 = u0 * s0;
    auto v = Tensor::from({1}, {v0}, true);
    auto s = Tensor::scalar(s0, true);
    Graph g;
    g.backward(g.sum(fake_quantize(g, v, s, spec, false)));
    const double hv = 1e-4 * s0, hs = 1e-4 * s0 / std::max(1.0, std::abs(u0));
    const double nv = oracle::central_difference(
        [&](double x) { return oracle::ste_surrogate(x, s0, v0, s0, b, is_signed); }, v0, hv);
    const double ns = oracle::central_difference(
        [&](double x) { return oracle::ste_surrogate(v0, x, v0, s0, b, is_signed); }, s0, hs);
    cases += 2;
    if (!oracle::rel_close(v.grad()[0], nv, 1e-4, 1e-9)) ++failed;
    if (!oracle::rel_close(s.grad()[0], ns, 1e-4, 1e-9)) ++failed;
    if (u0 <= lo || u0 >= hi) {
      const double lit = oracle::central_difference(
          [&](double x) { return oracle::quantize(v0, x, b, is_signed); }, s0, hs);
      ++cases;
      if (!oracle::rel_close(s.grad()[0], lit, 1e-4, 1e-9)) ++failed;
    }
  }

  using V = std::vector<Tensor>;
  auto add = [&](const gradcheck::Outcome& o) {
    cases += o.checked;
    failed += o.failed;
  };
  for (int trial = 0; trial < 3; ++trial) {
    add(gradcheck::check([](Graph& g, const V& in) { return g.matmul(in[0], in[1]); },
                         {gradcheck::random_tensor(rng, {3, 4}), gradcheck::random_tensor(rng, {4, 2})}, rng));
    add(gradcheck::check([](Graph& g, const V& in) { return g.conv2d(in[0], in[1], {1, 1}); },
                         {gradcheck::random_tensor(rng, {2, 2, 5, 4}), gradcheck::random_tensor(rng, {3, 2, 3, 3})}, rng));
    add(gradcheck::check([](Graph& g, const V& in) { return g.conv2d(in[0], in[1], {2, 0}); },
                         {gradcheck::random_tensor(rng, {1, 3, 7, 7}), gradcheck::random_tensor(rng, {2, 3, 3, 3})}, rng));
    add(gradcheck::check([](Graph& g, const V& in) { return g.add_bias(in[0], in[1]); },
                         {gradcheck::random_tensor(rng, {2, 3, 2, 2}), gradcheck::random_tensor(rng, {3})}, rng));
    add(gradcheck::check([](Graph& g, const V& in) { return g.relu(in[0]); },
                         {gradcheck::away_from_zero(rng, {4, 5})}, rng));
    add(gradcheck::check([](Graph& g, const V& in) { return g.flatten(in[0]); },
                         {gradcheck::random_tensor(rng, {2, 3, 2})}, rng));
    add(gradcheck::check([](Graph& g, const V& in) { return g.mul(in[0], in[1]); },
                         {gradcheck::random_tensor(rng, {6}), gradcheck::random_tensor(rng, {6})}, rng));
    add(gradcheck::check([](Graph& g, const V& in) { return g.sum(in[0]); },
                         {gradcheck::random_tensor(rng, {7})}, rng));
    const std::vector<int> labels{1, 0, 3};
    add(gradcheck::check([&](Graph& g, const V& in) { return g.softmax_cross_entropy(in[0], labels); },
                         {gradcheck::random_tensor(rng, {3, 4}, -3, 3)}, rng));
  }
  const double t = seconds_since(t0);
  std::ostringstream d;
  d << cases << " cases, " << failed << " outside 1e-4, " << t << "s";
  return {cases >= 1000 && failed == 0 && t < 30.0, d.str()};
}

// 3 --------------------------------------------------------------------------
Verdict oracle_equivalence() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(303);
  const std::vector<std::vector<int>> bit_sets{{2, 4}, {2, 4, 8}, {2, 3, 4, 8}};
  int agree = 0, total = 0, skipped_infeasible = 0;
  while (total < 200) {
    const auto& bits = bit_sets[static_cast<std::size_t>(total) % bit_sets.size()];
    // keep n^(2L) within the oracle limit
    const std::size_t max_l = bits.size() == 2 ? 6 : bits.size() == 3 ? 5 : 4;
    std::uniform_int_distribution<std::size_t> l_d(1, max_l);
    const auto inst = oracle::random_instance(rng, l_d(rng), bits, total % 3);
    const auto min_ref = oracle::enumerate(inst, false);
    const auto max_ref = oracle::enumerate(inst, true);
    if (!min_ref.feasible) {
      ++skipped_infeasible;
      continue;
    }
    ++total;
    const auto p = solve_exact(inst);
    const auto r = solve_reversed(inst);
    const auto bf = brute_force_oracle(inst, Objective::minimize);
    const auto bfr = brute_force_oracle(inst, Objective::maximize);
    const std::size_t n = bits.size();
    const bool ok = oracle::policy_combo(p, n) == min_ref.combo && p.objective == min_ref.value &&
                    oracle::policy_combo(bf, n) == min_ref.combo &&
                    oracle::policy_combo(r, n) == max_ref.combo && r.objective == max_ref.value &&
                    oracle::policy_combo(bfr, n) == max_ref.combo;
    if (ok) ++agree;
  }
  const double t = seconds_since(t0);
  std::ostringstream d;
  d << agree << "/" << total << " identical (min and max), " << t << "s";
  (void)skipped_infeasible;
  return {agree == 200 && t < 120.0, d.str()};
}

// 4 --------------------------------------------------------------------------
// Quantized layers of a ResNet18 at 224x224 with stem and classifier kept in
// full precision: 16 3x3 block convolutions and 3 1x1 downsample projections.
std::vector<LayerDesc> resnet18_body() {
  std::vector<LayerDesc> arch;
  auto conv = [&](std::size_t cin, std::size_t cout, std::size_t k, std::size_t hw) {
    LayerDesc d;
    d.kind = "conv2d";
    d.layer_id = static_cast<int>(arch.size());
    d.in_channels = cin;
    d.out_channels = cout;
    d.kernel_h = d.kernel_w = k;
    d.out_h = d.out_w = hw;
    arch.push_back(d);
  };
  const std::size_t widths[4] = {64, 128, 256, 512}, sizes[4] = {56, 28, 14, 7};
  for (int stage = 0; stage < 4; ++stage) {
    const std::size_t c = widths[stage], hw = sizes[stage];
    const std::size_t cin = stage == 0 ? 64 : widths[stage - 1];
    conv(cin, c, 3, hw);
    conv(c, c, 3, hw);
    if (stage > 0) conv(cin, c, 1, hw);
    conv(c, c, 3, hw);
    conv(c, c, 3, hw);
  }
  return arch;
}

Verdict solver_speed() {
  const auto stats = layer_stats(resnet18_body());
  const std::vector<int> bits{2, 3, 4, 6, 8};
  IndicatorReport rep;
  rep.bits = bits;
  std::mt19937_64 rng(404);
  std::uniform_real_distribution<double> mag(0.5, 2.0), jitter(0.9, 1.1);
  for (const auto& s : stats) {
    rep.layer_ids.push_back(s.layer_id);
    std::vector<double> w, a;
    const double mw = mag(rng), ma = mag(rng);
    for (int b : bits) {
      w.push_back(mw * jitter(rng) / std::ldexp(1.0, b));
      a.push_back(ma * jitter(rng) / std::ldexp(1.0, b));
    }
    rep.weight_scales.push_back(w);
    rep.act_scales.push_back(a);
  }
  Budget budget;
  budget.bitops = level_bitops(stats, 3);
  const auto inst = build_instance(rep, stats, 1.0, budget);
  const auto t0 = Clock::now();
  const auto p = solve_exact(inst);
  const double t = seconds_since(t0);
  std::ostringstream d;
  d << "L=" << inst.layers() << " n=" << inst.options() << ", " << p.nodes << " nodes, " << t
    << "s";
  return {inst.layers() == 19 && inst.options() == 5 && policy_consistent(inst, p) && t < 1.0,
          d.str()};
}

// 5 --------------------------------------------------------------------------
Verdict contrast() {
  int holds = 0;
  const std::vector<int> bits{2, 3, 4, 8};
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    SynthSpec ss;
    ss.input_shape = {1, 1, 10};
    ss.noise = 0.5;
    ss.train_samples = 1000;
    ss.val_samples = 10;
    ss.seed = seed;
    const auto data = synth_dataset(ss);
    ModelOptions mo;
    mo.name = "contrast";
    mo.input_shape = ss.input_shape;
    mo.seed = seed;
    IndicatorConfig ic;
    ic.bits = bits;
    ic.steps = 200;
    ic.seed = seed;
    const auto r = train_indicators(make_model(mo), data.train, ic);
    bool all = true;
    for (std::size_t i = 0; i < bits.size(); ++i) all = all && r.weight_scales[0][i] > r.weight_scales[1][i];
    if (all) ++holds;
  }
  return {holds >= 9, std::to_string(holds) + "/10 seeds"};
}

// 6 --------------------------------------------------------------------------
Verdict monotonicity() {
  int slots = 0, monotone = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    SynthSpec ss;
    ss.noise = 0.5;
    ss.val_samples = 10;
    ss.seed = seed;
    const auto data = synth_dataset(ss);
    ModelOptions mo;
    mo.seed = seed;
    auto net = make_model(mo);
    TrainOptions pre;
    pre.seed = seed;
    train_full_precision(net, data.train, pre);
    IndicatorConfig ic;
    ic.steps = 200;
    ic.seed = seed;
    const auto r = train_indicators(net, data.train, ic);
    for (const auto* table : {&r.weight_scales, &r.act_scales}) {
      for (const auto& row : *table) {
        ++slots;
        if (std::is_sorted(row.rbegin(), row.rend())) ++monotone;
      }
    }
  }
  std::ostringstream d;
  d << monotone << "/" << slots << " (layer, kind) slots non-increasing";
  return {monotone * 10 >= slots * 9, d.str()};
}

// 7 --------------------------------------------------------------------------
Verdict mechanics() {
  SynthSpec ss;
  ss.noise = 0.5;
  ss.val_samples = 10;
  const auto data = synth_dataset(ss);
  ModelOptions mo;
  auto net = make_model(mo);
  IndicatorConfig ic;
  ic.steps = 0;
  ic.trace = true;
  IndicatorSession s(net, data.train, ic);
  s.initialize();
  BatchSampler sampler(s.subset(), ic.batch_size, 7);
  const std::size_t T = 400, n = ic.bits.size();
  bool passes = true, frozen = true;
  for (std::size_t t = 0; t < T; ++t) {
    const auto m = s.atomic_update_step(sampler.next(), 1.0);
    passes = passes && m.trace.forward_passes == n + 1 && m.trace.backward_passes == n + 1;
    frozen = frozen && m.trace.parameters_frozen_within_step;
  }
  const auto& tc = s.touches();
  const double p = 1.0 / static_cast<double>(n);
  const double mean = static_cast<double>(T) * p;
  const double bound = 4.0 * std::sqrt(static_cast<double>(T) * p * (1 - p));
  bool uniform_exact = true, within = true;
  for (std::size_t k = 0; k < tc.uniform_weight.size(); ++k) {
    uniform_exact = uniform_exact && tc.uniform_weight[k] == T && tc.uniform_act[k] == T;
    within = within && std::abs(static_cast<double>(tc.random_weight[k]) - mean) <= bound &&
             std::abs(static_cast<double>(tc.random_act[k]) - mean) <= bound;
  }
  std::ostringstream d;
  d << "passes " << (passes ? "n+1" : "WRONG") << ", frozen " << (frozen ? "yes" : "NO")
    << ", uniform touches " << (uniform_exact ? "exact" : "WRONG") << ", random touches "
    << (within ? "within" : "OUTSIDE") << " " << mean << "+-" << bound;
  return {passes && frozen && uniform_exact && within, d.str()};
}

// 8 --------------------------------------------------------------------------
Verdict ablation() {
  const auto t0 = Clock::now();
  const auto cfg = load_config(fs::path(MPQ_SOURCE_DIR) / "configs" / "cnn.conf");
  const auto results = ablate_reverse_seeds(cfg, {0, 1, 2}, scratch_root() / "ablation", false, 1);
  double routine = 0, reversed = 0, uniform = 0;
  for (const auto& r : results) {
    routine += *r.routine.metric("finetune_top1");
    reversed += *r.reversed.metric("finetune_top1");
    uniform += *r.routine.metric("uniform_top1");
  }
  const double k = static_cast<double>(results.size());
  routine /= k;
  reversed /= k;
  uniform /= k;
  const double t = seconds_since(t0);
  std::ostringstream d;
  d << "mean top-1 routine " << routine << ", reversed " << reversed << ", uniform-"
    << cfg.baseline_uniform_bits << " " << uniform << ", " << t << "s";
  return {routine >= reversed && routine >= uniform - 0.005 && t < 3600.0, d.str()};
}

// 9 --------------------------------------------------------------------------
Verdict compression() {
  ModelOptions mo;
  mo.name = "cnn";
  mo.input_shape = {1, 16, 16};
  const auto stats = layer_stats(make_model(mo).arch());
  const std::vector<int> three(stats.size(), 3), full(stats.size(), 32);
  const double rate = compression_rate(stats, three);
  const bool sizes = model_size_bits(stats, full) * 3 == model_size_bits(stats, three) * 32;
  std::ostringstream d;
  d.precision(17);
  d << "rate " << rate;
  return {sizes && rate == 32.0 / 3.0, d.str()};
}

// 10 -------------------------------------------------------------------------
int run_cli(const std::string& args) {
  const std::string cmd = std::string(MPQ_FORGE_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

Verdict data_independence() {
  const fs::path root = scratch_root() / "offline";
  const fs::path data_dir = root / "dataset", out = root / "run";
  fs::create_directories(data_dir);
  SynthSpec ss;
  ss.train_samples = 600;
  ss.val_samples = 100;
  const auto data = synth_dataset(ss);
  auto bytes = [](const Split& s) {
    std::vector<std::uint8_t> px, lb;
    for (double v : s.pixels) px.push_back(static_cast<std::uint8_t>(std::lround(v * 255.0)));
    for (int l : s.labels) lb.push_back(static_cast<std::uint8_t>(l));
    return std::pair{px, lb};
  };
  const auto [tp, tl] = bytes(data.train);
  const auto [vp, vl] = bytes(data.val);
  write_idx_images(data_dir / "train-images", 8, 8, tp);
  write_idx_labels(data_dir / "train-labels", tl);
  write_idx_images(data_dir / "val-images", 8, 8, vp);
  write_idx_labels(data_dir / "val-labels", vl);
  {
    std::ofstream cfg(root / "run.conf");
    cfg << "[data]\nsource = idx\ntrain_images = " << (data_dir / "train-images").string()
        << "\ntrain_labels = " << (data_dir / "train-labels").string()
        << "\nval_images = " << (data_dir / "val-images").string()
        << "\nval_labels = " << (data_dir / "val-labels").string()
        << "\n[pretrain]\nsteps = 100\n[indicators]\nsteps = 20\n[search]\nbudget_bitops_level = 3\n";
  }
  const int trained = run_cli("train-indicators --config " + (root / "run.conf").string() +
                              " --out-dir " + out.string());
  fs::remove_all(data_dir);
  const int searched = run_cli("search --config " + (root / "run.conf").string() +
                               " --indicators " + (out / "indicators.txt").string() +
                               " --output " + (out / "policy.txt").string());
  const bool ok = trained == 0 && searched == 0 && !fs::exists(data_dir) &&
                  fs::exists(out / "policy.txt");
  std::ostringstream d;
  d << "train-indicators exit " << trained << ", search exit " << searched
    << " with the dataset directory removed";
  return {ok, d.str()};
}

}  // namespace

int main() {
  fs::remove_all(scratch_root());
  fs::create_directories(scratch_root());
  report(1, "quantizer exactness", quantizer_exactness);
  report(2, "gradient fidelity", gradient_fidelity);
  report(3, "ILP oracle equivalence", oracle_equivalence);
  report(4, "solver speed, ResNet18-shaped instance", solver_speed);
  report(5, "indicator sensitivity contrast", contrast);
  report(6, "indicator bit-width monotonicity", monotonicity);
  report(7, "joint-training mechanics", mechanics);
  report(8, "end-to-end ablation on the synthetic CNN", ablation);
  report(9, "compression-rate arithmetic", compression);
  report(10, "search without training data", data_independence);
  fs::remove_all(scratch_root());
  std::printf("%s: %d failing\n", failures == 0 ? "ALL PASS" : "FAILURES", failures);
  return failures == 0 ? 0 : 1;
}
