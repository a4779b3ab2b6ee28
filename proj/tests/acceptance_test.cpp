// Exit gate: one PASS/FAIL line per acceptance criterion.
// Usage: acceptance_test [criterion numbers...]   (default: all nine)

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "froc_fixture.hpp"
#include "lssg/experiment.hpp"
#include "lssg/verify.hpp"

#ifndef LSSG_CLI_PATH
#error "LSSG_CLI_PATH must point at the lssg executable"
#endif

namespace {

using namespace lssg;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), f, v);
  return buf;
}

Volume<double> uniform_volume(Shape4 s, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1, 1);
  Volume<double> v(s);
  for (auto& x : v.values()) x = u(rng);
  return v;
}

AttentionWeights<double> uniform_weights(std::size_t c, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-1, 1);
  auto w = AttentionWeights<double>::zeros(c);
  for (Matrix<double>* m : {&w.w_theta, &w.w_phi, &w.w_g})
    for (auto& x : m->values()) x = u(rng);
  return w;
}

bool same_bits(const Volume<double>& a, const Volume<double>& b) {
  if (a.shape() != b.shape()) return false;
  return std::memcmp(a.values().data(), b.values().data(), a.values().size() * sizeof(double)) == 0;
}

// 1. fast compact path vs the pairwise oracle
Outcome oracle_equivalence() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<std::size_t> dc(1, 4), dx(1, 16);
  double worst = 0;
  const std::size_t trials = 24;
  for (std::size_t t = 0; t < trials; ++t) {
    Shape4 s{4, 16, 8, 8};  // first trial sits on the cap
    if (t > 0) {
      do {
        s = {dc(rng), dx(rng), dx(rng), dx(rng)};
      } while (s.size() > kDefaultOracleCap);
    }
    const auto x = uniform_volume(s, rng);
    const auto w = uniform_weights(s.c, rng);
    worst = std::max(worst, relative_error(compact_nonlocal_fast(x, w), compact_nonlocal_naive(x, w)));
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-10 && secs < 30, std::to_string(trials) + " volumes, max rel error " + fmt("%.2e", worst) +
                                          ", " + fmt("%.1f", secs) + " s (limits 1e-10, 30 s)"};
}

// 2. every (D, G) with G | D <= 32: partition and scatter(gather) == identity
Outcome grouping_bijection() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(12);
  std::size_t cases = 0, bad = 0;
  for (std::size_t d = 1; d <= 32; ++d)
    for (std::size_t g = 1; g <= d; ++g) {
      if (d % g) continue;
      for (auto mode : {GroupingMode::Short, GroupingMode::Long}) {
        ++cases;
        const auto sg = build_grouping(mode, d, g);
        try {
          validate_partition(sg);
        } catch (const PartitionError&) {
          ++bad;
          continue;
        }
        const auto x = uniform_volume({2, d, 2, 3}, rng);
        std::vector<Volume<double>> parts;
        for (std::size_t k = 0; k < g; ++k) parts.push_back(gather_group(x, sg, k));
        if (!same_bits(scatter_groups(parts, sg), x)) ++bad;
      }
    }
  const double secs = seconds_since(t0);
  return {bad == 0 && secs < 5, std::to_string(cases) + " (D,G,mode) cases, " + std::to_string(bad) + " broken, " +
                                    fmt("%.2f", secs) + " s (limit 5 s)"};
}

// 3. G = 1 is bit-identical to the ungrouped compact kernel
Outcome degeneracy() {
  std::mt19937_64 rng(13);
  std::size_t cases = 0, bad = 0;
  for (Shape4 s : {Shape4{1, 1, 1, 1}, Shape4{2, 8, 3, 3}, Shape4{4, 16, 8, 8}, Shape4{3, 5, 7, 2}})
    for (auto mode : {GroupingMode::Short, GroupingMode::Long}) {
      ++cases;
      const auto x = uniform_volume(s, rng);
      const auto w = uniform_weights(s.c, rng);
      if (!same_bits(lssg_forward(x, w, build_grouping(mode, s.d, 1)), compact_nonlocal_fast(x, w))) ++bad;
    }
  return {bad == 0, std::to_string(cases) + " shape/mode cases, " + std::to_string(bad) + " differ in any bit"};
}

// 4. finite-difference checks of every backward pass
Outcome gradcheck_suites() {
  const auto t0 = Clock::now();
  double ops = 0;
  for (auto mode : {GroupingMode::Short, GroupingMode::Long})
    for (auto k : {AttentionKernel::NonLocal, AttentionKernel::CompactNonLocal})
      for (std::size_t g : {1u, 2u, 4u}) {
        ops = std::max(ops, max_error(attention_gradcheck({2, 8, 3, 3}, mode, g, k, 41)));
        ops = std::max(ops, max_error(block_gradcheck({4, 8, 2, 3}, mode, g, k, 42)));
      }
  ops = std::max(ops, max_error(group_norm_gradcheck({4, 8, 3, 3}, 2, 43)));
  double net = 0;
  for (std::uint64_t seed : {44u, 45u}) net = std::max(net, max_error(network_gradcheck(seed)));
  const double secs = seconds_since(t0);
  return {ops < kOpGradTolerance && net < kNetGradTolerance && secs < 300,
          "ops max rel error " + fmt("%.2e", ops) + " (< 1e-6), end-to-end " + fmt("%.2e", net) + " (< 1e-4), " +
              fmt("%.1f", secs) + " s (limit 300 s)"};
}

// 5. every layout x G x kernel builds and completes one training step
Outcome configuration_matrix() {
  const auto t0 = Clock::now();
  std::size_t ok = 0, total = 0;
  std::string failures;
  std::mt19937_64 rng(14);
  for (const char* layout : {"5/0", "3/2", "2/3", "0/5"})
    for (std::size_t g : {2u, 4u, 8u})
      for (auto kernel : {AttentionKernel::NonLocal, AttentionKernel::CompactNonLocal}) {
        ++total;
        try {
          LayoutConfig l;
          l.block_sequence = parse_layout(layout);
          l.group_count = g;
          l.kernel = kernel;
          l.patch = {64, 16, 16};
          auto p = build_network<double>(l, 5);
          // non-zero gammas so the attention path is exercised
          for (auto& [key, t] : p.tensors) {
            if (key.ends_with("gn.gamma")) std::fill(t.values.begin(), t.values.end(), 0.5);
          }
          std::uniform_real_distribution<double> u(0, 1);
          Volume<double> x({1, 64, 16, 16});
          for (auto& v : x.values()) v = u(rng);
          const std::vector<Box3D> gts{{30, 8, 8, 8, 8, 8}};
          auto f = network_forward(p, x);
          const auto fd = l.feature_dims();
          const Shape4 want{l.anchor_sizes.size(), fd[0], fd[1], fd[2]};
          if (f.rpn.logits.shape() != want) throw ShapeError("logits " + f.rpn.logits.shape().str());
          const auto anchors = generate_anchors(fd, l.anchors());
          auto loss = detection_loss(f.rpn, anchors, gts, {});
          auto grads = zeros_like(p.tensors);
          network_backward(p, f, loss.grad_logits, loss.grad_offsets, grads);
          fpr_train_sample(p, f, gts, {}, grads, 1.0);
          ParamMap<double> vel;
          sgd_step(p.tensors, grads, TrainConfig{}, vel);
          for (const auto& [key, t] : p.tensors) {
            if (!all_finite<double>(t.values)) throw NumericError(key);
          }
          ++ok;
        } catch (const std::exception& e) {
          failures += std::string(" ") + layout + "/G" + std::to_string(g) + "/" + to_string(kernel) + ": " + e.what();
        }
      }
  const double secs = seconds_since(t0);
  return {ok == total && secs < 120, std::to_string(ok) + "/" + std::to_string(total) + " configurations stepped, " +
                                         fmt("%.1f", secs) + " s (limit 120 s)" + failures};
}

// 6. FROC fixture, randomized properties and a published results row
Outcome froc_correctness() {
  std::vector<std::string> errs;
  const std::array<double, 7> sens{1.0 / 3, 1.0 / 3, 1.0 / 3, 2.0 / 3, 2.0 / 3, 2.0 / 3, 2.0 / 3};
  for (const auto& crit : {MatchCriterion::center(), MatchCriterion::iou(0.3)}) {
    if (evaluate_froc(test::fixture_dets(), test::fixture_gt(), crit).sensitivities != sens) {
      errs.push_back("fixture (" + crit.str() + ")");
    }
  }
  std::mt19937_64 rng(15);
  std::size_t broken = 0;
  for (int trial = 0; trial < 100; ++trial) {
    auto c = test::random_case(rng, trial % 2 == 0);
    const auto crit = trial % 3 == 0 ? MatchCriterion::iou(0.2) : MatchCriterion::center();
    const auto r = evaluate_froc(c.dets, c.gts, crit);
    bool ok = true;
    for (std::size_t i = 1; i < r.curve.size(); ++i) {
      ok &= r.curve[i].fp_per_scan >= r.curve[i - 1].fp_per_scan && r.curve[i].sensitivity >= r.curve[i - 1].sensitivity;
    }
    for (std::size_t i = 1; i < 7; ++i) ok &= r.sensitivities[i] >= r.sensitivities[i - 1];
    for (auto& [id, list] : c.dets)
      for (auto& d : list) d.score *= 0.5;
    const auto s = evaluate_froc(c.dets, c.gts, crit);
    ok &= s.sensitivities == r.sensitivities && s.average == r.average;
    broken += !ok;
  }
  if (broken) errs.push_back(std::to_string(broken) + " randomized cases");
  FrocResult lssa;
  lssa.sensitivities = {0.5159, 0.5159, 0.5818, 0.6688, 0.7733, 0.8535, 0.8987};
  lssa.average = 0.6869;
  const std::string row = format_froc_table({{"LSSANet", lssa}});
  if (row != "Method 0.125 0.25 0.5 1.0 2.0 4.0 8.0 | Avg\nLSSANet 51.59 51.59 58.18 66.88 77.33 85.35 89.87 | 68.69\n") {
    errs.push_back("table row rendered as: " + row);
  }
  std::string detail = "fixture exact, 100 randomized cases monotone and invariant to score scaling, LSSANet row byte-exact";
  if (!errs.empty()) {
    detail = "failed:";
    for (const auto& e : errs) detail += " " + e + ";";
  }
  return {errs.empty(), detail};
}

// 7. 2/3 layout beats the attention-free baseline on >= 4 of 5 seeds
Outcome toy_experiment() {
  const auto t0 = Clock::now();
  const auto train = generate_dataset<double>(kToyTrainSize, Difficulty::Hard, kToyTrainDataSeed);
  const auto eval = generate_dataset<double>(kToyEvalSize, Difficulty::Hard, kToyEvalDataSeed);
  LayoutConfig attn, base;
  attn.block_sequence = parse_layout("2/3");
  base.block_sequence = parse_layout("0/0");
  int wins = 0;
  std::string rows = format_froc_header();
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    const auto cfg = toy_train_config(seed);
    const auto a = run_experiment(attn, train, eval, cfg, MatchCriterion::center());
    const auto b = run_experiment(base, train, eval, cfg, MatchCriterion::center());
    wins += a.rpn.average > b.rpn.average;
    rows += format_froc_row("2/3-s" + std::to_string(seed), a.rpn) + format_froc_row("0/0-s" + std::to_string(seed), b.rpn);
    std::fprintf(stderr, "  seed %llu: 2/3 %.4f (fpr stage %.4f)  0/0 %.4f (fpr stage %.4f)  [%.0f s]\n",
                 static_cast<unsigned long long>(seed), a.rpn.average, a.fpr.average, b.rpn.average, b.fpr.average,
                 seconds_since(t0));
  }
  std::cerr << rows;
  const double secs = seconds_since(t0);
  return {wins >= 4 && secs < 3600, "2/3 ahead of 0/0 on " + std::to_string(wins) + "/5 seeds (need 4), " +
                                        fmt("%.0f", secs) + " s (limit 3600 s)"};
}

// 8. fast path at least 10x the naive one at C*D*H*W = 4096
Outcome performance_floor() {
  std::mt19937_64 rng(16);
  const auto x = uniform_volume({4, 16, 8, 8}, rng);
  const auto w = uniform_weights(4, rng);
  auto best = [](auto&& f, int reps) {
    double m = 1e30;
    for (int r = 0; r < reps; ++r) {
      const auto t0 = Clock::now();
      auto y = f();
      m = std::min(m, seconds_since(t0));
      if (y.values().empty()) m = 0;
    }
    return m;
  };
  const double naive = best([&] { return compact_nonlocal_naive(x, w); }, 3);
  const double fast = best([&] { return compact_nonlocal_fast(x, w); }, 50);
  const double ratio = naive / std::max(fast, 1e-12);
  return {ratio >= 10, "naive " + fmt("%.3e", naive) + " s, fast " + fmt("%.3e", fast) + " s, speedup " +
                           fmt("%.0f", ratio) + "x (need 10x)"};
}

// 9. every CLI command twice with fixed seeds -> identical output bytes
std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (!e.is_regular_file()) continue;
    const std::string name = e.path().filename().string();
    if (name == "bench_timing.csv" || name == "bench_report.txt") continue;  // wall-clock
    files[fs::relative(e.path(), dir).string()] = read_file(e.path());
  }
  return files;
}

Outcome cli_determinism() {
  const fs::path work = fs::current_path() / "acceptance_cli";
  fs::remove_all(work);
  fs::create_directories(work);
  const std::string cli = LSSG_CLI_PATH;
  const std::string data = (work / "data").string();
  const std::vector<std::pair<std::string, std::string>> commands{
      {"phantom", "phantom --count 4 --eval-count 3 --dims 16x16x16 --seed 5 --out "},
      {"gradcheck", "gradcheck --seed 3 --out "},
      {"oracle", "oracle --seed 3 --trials 5 --out "},
      {"bench", "bench --reps 1 --seed 3 --out "},
      {"experiment", "experiment --data " + data + " --criterion center --groups 2 --epochs 1 --seed 3 --out "},
      {"froc", "froc --det " + (work / "experiment" / "detections_rpn.csv").string() + " --gt " + data +
                   "/eval/ground_truth.csv --criterion iou:0.1 --out "},
  };
  std::string bad;
  std::size_t compared = 0;
  for (const auto& [name, args] : commands) {
    const fs::path out = work / name;
    std::map<std::string, std::string> runs[2];
    for (int r = 0; r < 2; ++r) {
      fs::remove_all(out);
      const std::string cmd = cli + " " + args + out.string() + " > " + (work / (name + ".log")).string() + " 2>&1";
      if (std::system(cmd.c_str()) != 0) bad += " " + name + "(exit status)";
      runs[r] = snapshot(out);
    }
    // the phantom output doubles as the experiment's input
    if (name == "phantom") fs::copy(out, data, fs::copy_options::recursive | fs::copy_options::overwrite_existing);
    if (runs[0] != runs[1] || runs[0].empty()) bad += " " + name;
    compared += runs[0].size();
  }
  return {bad.empty(), std::to_string(commands.size()) + " commands, " + std::to_string(compared) +
                           " output files compared" + (bad.empty() ? "" : ", differing:" + bad)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"oracle equivalence", oracle_equivalence},
      {"grouping bijection", grouping_bijection},
      {"G=1 degeneracy", degeneracy},
      {"gradient checks", gradcheck_suites},
      {"layout/G/kernel matrix", configuration_matrix},
      {"FROC correctness", froc_correctness},
      {"toy experiment signal", toy_experiment},
      {"performance floor", performance_floor},
      {"CLI determinism", cli_determinism},
  };
  std::set<int> pick;
  for (int i = 1; i < argc; ++i) pick.insert(std::atoi(argv[i]));
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int n = int(i) + 1;
    if (!pick.empty() && !pick.contains(n)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("criterion %d (%s): %s - %s\n", n, criteria[i].first, o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
  }
  return failed == 0 ? 0 : 1;
}
