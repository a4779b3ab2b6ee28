// lssg: verification suites, benchmarks, phantom data, the toy experiment
// and FROC scoring. Exit codes: 0 pass, 1 check failure, 2 usage error.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <new>
#include <numeric>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "lssg/experiment.hpp"
#include "lssg/verify.hpp"

// ---- allocation accounting for `bench` ----

namespace {
std::size_t g_live = 0;
std::size_t g_peak = 0;
constexpr std::size_t kPad = alignof(std::max_align_t);

void* counted_alloc(std::size_t n) {
  void* raw = std::malloc(n + kPad);
  if (raw == nullptr) throw std::bad_alloc();
  *static_cast<std::size_t*>(raw) = n;
  g_live += n;
  g_peak = std::max(g_peak, g_live);
  return static_cast<char*>(raw) + kPad;
}

void counted_free(void* p) noexcept {
  if (p == nullptr) return;
  void* raw = static_cast<char*>(p) - kPad;
  g_live -= *static_cast<std::size_t*>(raw);
  std::free(raw);
}
}  // namespace

void* operator new(std::size_t n) { return counted_alloc(n); }
void* operator new[](std::size_t n) { return counted_alloc(n); }
void* operator new(std::size_t n, const std::nothrow_t&) noexcept {
  try {
    return counted_alloc(n);
  } catch (...) {
    return nullptr;
  }
}
void* operator new[](std::size_t n, const std::nothrow_t& t) noexcept { return operator new(n, t); }
void operator delete(void* p) noexcept { counted_free(p); }
void operator delete[](void* p) noexcept { counted_free(p); }
void operator delete(void* p, std::size_t) noexcept { counted_free(p); }
void operator delete[](void* p, std::size_t) noexcept { counted_free(p); }

namespace {

using namespace lssg;
namespace fs = std::filesystem;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum Exit { kPass = 0, kFail = 1, kUsage = 2 };

// Header line stamped on every report: command, seed and every flag value.
struct Stamp {
  std::string command;
  std::vector<std::pair<std::string, std::string>> flags;

  void add(const std::string& k, const std::string& v) { flags.emplace_back(k, v); }
  std::string line() const {
    std::string s = "# lssg " + command;
    for (const auto& [k, v] : flags) s += " --" + k + "=" + v;
    return s + "\n";
  }
};

Stamp stamp_of(const CLI::App& sub) {
  Stamp st{sub.get_name(), {}};
  for (const CLI::Option* o : sub.get_options()) {
    if (o->get_lnames().empty() || o->get_lnames()[0] == "help") continue;
    if (o->get_group().empty() && o->count() == 0) continue;  // unused hidden hooks
    if (o->get_type_size() == 0) {
      st.add(o->get_lnames()[0], o->count() ? "true" : "false");
      continue;
    }
    std::string v = o->count() ? o->as<std::string>() : o->get_default_str();
    st.add(o->get_lnames()[0], v.empty() ? "-" : v);
  }
  return st;
}

void write_text(const fs::path& p, const std::string& s) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  write_file(p, s);
}

// Prints the report and saves it next to the machine-readable outputs.
void emit_report(const fs::path& out, const std::string& name, const Stamp& st, const std::string& body) {
  const std::string text = st.line() + body;
  std::cout << text;
  write_text(out / (name + "_report.txt"), text);
}

Shape4 parse_shape(const std::string& s) {
  std::vector<std::size_t> v;
  std::stringstream in(s);
  std::string part;
  while (std::getline(in, part, 'x')) {
    if (part.empty() || part.find_first_not_of("0123456789") != std::string::npos || part.size() > 9) {
      throw UsageError("--shape must be CxDxHxW with positive integers, got '" + s + "'");
    }
    v.push_back(std::stoul(part));
  }
  if (v.size() != 4 || std::find(v.begin(), v.end(), 0u) != v.end()) {
    throw UsageError("--shape must be CxDxHxW with positive integers, got '" + s + "'");
  }
  return {v[0], v[1], v[2], v[3]};
}

std::vector<std::size_t> parse_counts(const std::string& flag, const std::string& s) {
  std::vector<std::size_t> v;
  std::stringstream in(s);
  std::string part;
  while (std::getline(in, part, ',')) {
    if (part.empty() || part.find_first_not_of("0123456789") != std::string::npos || part.size() > 9) {
      throw UsageError("--" + flag + " must be a comma-separated list of positive integers, got '" + s + "'");
    }
    v.push_back(std::stoul(part));
    if (v.back() == 0) throw UsageError("--" + flag + " values must be >= 1");
  }
  if (v.empty()) throw UsageError("--" + flag + " is empty");
  return v;
}

std::vector<GroupingMode> parse_modes(const std::string& s) {
  if (s == "both") return {GroupingMode::Short, GroupingMode::Long};
  return {parse_mode(s)};
}

std::vector<AttentionKernel> parse_kernels(const std::string& s) {
  if (s == "both") return {AttentionKernel::NonLocal, AttentionKernel::CompactNonLocal};
  return {parse_kernel(s)};
}

std::string sci(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3e", v);
  return buf;
}

// ---- gradcheck ----

struct GradcheckOpts {
  std::string shape = "2x8x3x3", mode = "both", groups = "1,2,4", kernel = "both", corrupt;
  std::uint64_t seed = 0;
  bool network = true;
  std::string out = "out";
};

int cmd_gradcheck(const GradcheckOpts& o, const Stamp& st) {
  const Shape4 shape = parse_shape(o.shape);
  const auto groups = parse_counts("groups", o.groups);
  const auto modes = parse_modes(o.mode);
  const auto kernels = parse_kernels(o.kernel);
  for (std::size_t g : groups) {
    if (shape.d % g != 0) {
      throw UsageError("G=" + std::to_string(g) + " does not divide depth D=" + std::to_string(shape.d));
    }
  }

  std::string csv = "suite,mode,kernel,groups,param,count,rel_error,tolerance,status\n";
  std::string body, failures;
  auto record = [&](const std::string& suite, const std::string& mode, const std::string& kernel, std::size_t g,
                    const std::vector<GradReport>& reports, double tol) {
    double worst = 0;
    for (const auto& r : reports) {
      const bool ok = r.rel_error < tol;
      worst = std::max(worst, r.rel_error);
      csv += suite + "," + mode + "," + kernel + "," + std::to_string(g) + "," + r.name + "," + std::to_string(r.count) +
             "," + sci(r.rel_error) + "," + sci(tol) + "," + (ok ? "pass" : "FAIL") + "\n";
      if (!ok) {
        failures += "FAIL " + suite + " " + mode + " " + kernel + " G=" + std::to_string(g) + " parameter '" + r.name +
                    "' rel_error " + sci(r.rel_error) + " >= " + sci(tol) + "\n";
      }
    }
    body += suite + " " + mode + " " + kernel + " G=" + std::to_string(g) + ": max rel error " + sci(worst) + "\n";
  };

  for (auto m : modes)
    for (auto k : kernels)
      for (std::size_t g : groups) {
        record("attention", to_string(m), to_string(k), g, attention_gradcheck(shape, m, g, k, o.seed, o.corrupt),
               kOpGradTolerance);
      }
  const std::size_t gn = std::gcd<std::size_t>(kDefaultGnGroups, shape.c);
  record("group_norm", "-", "-", gn, group_norm_gradcheck(shape, gn, o.seed, o.corrupt), kOpGradTolerance);
  for (auto m : modes)
    for (auto k : kernels)
      for (std::size_t g : groups) {
        record("block", to_string(m), to_string(k), g, block_gradcheck(shape, m, g, k, o.seed, o.corrupt),
               kOpGradTolerance);
      }
  if (o.network) {
    record("network", miniature_layout().layout_string(), "cnl", miniature_layout().group_count, network_gradcheck(o.seed, o.corrupt),
           kNetGradTolerance);
  }

  const fs::path out(o.out);
  write_text(out / "gradcheck.csv", csv);
  body += failures.empty() ? "PASS all gradients within tolerance\n" : failures;
  emit_report(out, "gradcheck", st, body);
  if (!failures.empty()) std::cerr << failures;
  return failures.empty() ? kPass : kFail;
}

// ---- oracle ----

struct OracleOpts {
  std::size_t trials = 20;
  std::uint64_t seed = 0;
  std::string shape;
  std::string out = "out";
};

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

int cmd_oracle(const OracleOpts& o, const Stamp& st) {
  if (o.trials == 0) throw UsageError("--trials must be >= 1");
  const std::size_t cap = oracle_cap_from_env();
  std::optional<Shape4> fixed;
  if (!o.shape.empty()) {
    fixed = parse_shape(o.shape);
    if (fixed->size() > cap) {
      throw UsageError("--shape " + o.shape + " has C*D*H*W = " + std::to_string(fixed->size()) + ", above the cap " +
                       std::to_string(cap) + " (raise LSSG_ORACLE_CAP)");
    }
  }
  std::mt19937_64 rng(o.seed);
  std::uniform_int_distribution<std::size_t> dc(1, 4), dx(1, 12);
  std::string csv = "trial,shape,elements,rel_error\n";
  double worst = 0;
  for (std::size_t t = 0; t < o.trials; ++t) {
    Shape4 s{};
    if (fixed) {
      s = *fixed;
    } else {
      do {
        s = {dc(rng), dx(rng), dx(rng), dx(rng)};
      } while (s.size() > cap);
    }
    const auto x = uniform_volume(s, rng);
    const auto w = uniform_weights(s.c, rng);
    const double err = relative_error(compact_nonlocal_fast(x, w), compact_nonlocal_naive(x, w, cap));
    worst = std::max(worst, err);
    csv += std::to_string(t) + "," + s.str() + "," + std::to_string(s.size()) + "," + sci(err) + "\n";
  }
  const fs::path out(o.out);
  write_text(out / "oracle.csv", csv);
  const bool ok = worst < 1e-10;
  emit_report(out, "oracle", st,
              std::to_string(o.trials) + " trials, cap " + std::to_string(cap) + ", max rel error " + sci(worst) +
                  (ok ? "\nPASS fast path equals naive pairwise oracle\n" : "\nFAIL max rel error >= 1e-10\n"));
  return ok ? kPass : kFail;
}

// ---- bench ----

struct BenchOpts {
  std::string shape = "4x16x8x8", groups = "2,4,8";
  std::size_t reps = 3;
  std::uint64_t seed = 0;
  std::string out = "out";
};

struct Timing {
  double min = 0, median = 0;
  std::size_t peak = 0;
  double checksum = 0;
};

template <typename F>
Timing measure(std::size_t reps, F&& f) {
  std::vector<double> secs;
  Timing t;
  for (std::size_t r = 0; r < reps; ++r) {
    const std::size_t base = g_live;
    g_peak = g_live;
    const auto t0 = std::chrono::steady_clock::now();
    Volume<double> y = f();
    secs.push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    t.peak = g_peak - base;
    t.checksum = std::accumulate(y.values().begin(), y.values().end(), 0.0);
  }
  std::sort(secs.begin(), secs.end());
  t.min = secs.front();
  t.median = secs[secs.size() / 2];
  return t;
}

int cmd_bench(const BenchOpts& o, const Stamp& st) {
  if (o.reps == 0) throw UsageError("--reps must be >= 1");
  const Shape4 shape = parse_shape(o.shape);
  const auto groups = parse_counts("groups", o.groups);
  const std::size_t cap = oracle_cap_from_env();
  std::mt19937_64 rng(o.seed);
  const auto x = uniform_volume(shape, rng);
  const auto w = uniform_weights(shape.c, rng);

  // bench.csv holds the deterministic columns, bench_timing.csv the clock.
  std::string det = "variant,groups,shape,elements,peak_bytes,output_sum,status\n";
  std::string tim = "variant,groups,seconds_min,seconds_median\n";
  auto row = [&](const std::string& v, std::size_t g, const Timing* t, const std::string& status) {
    det += v + "," + std::to_string(g) + "," + shape.str() + "," + std::to_string(shape.size()) + "," +
           (t ? std::to_string(t->peak) + "," + format_number(t->checksum) : std::string(",")) + "," + status + "\n";
    if (t) tim += v + "," + std::to_string(g) + "," + sci(t->min) + "," + sci(t->median) + "\n";
  };
  auto run = [&](const std::string& v, std::size_t g, auto&& f) {
    const Timing t = measure(o.reps, f);
    row(v, g, &t, "ok");
  };

  run("nl", 1, [&] { return nonlocal_original(x, w); });
  if (shape.size() <= cap) {
    run("cnl_naive", 1, [&] { return compact_nonlocal_naive(x, w, cap); });
  } else {
    row("cnl_naive", 1, nullptr, "skipped: above cap " + std::to_string(cap));
  }
  run("cnl_fast", 1, [&] { return compact_nonlocal_fast(x, w); });
  for (auto mode : {GroupingMode::Short, GroupingMode::Long}) {
    for (std::size_t g : groups) {
      if (shape.d % g != 0) {
        row(to_string(mode), g, nullptr, "skipped: G does not divide D");
        continue;
      }
      const auto sg = build_grouping(mode, shape.d, g);
      run(to_string(mode), g, [&] { return lssg_forward(x, w, sg, AttentionKernel::CompactNonLocal); });
    }
  }

  // 10x floor at the cap boundary, C*D*H*W = 4096.
  std::string body;
  bool ok = true;
  const Shape4 boundary{4, 16, 8, 8};
  if (cap >= boundary.size()) {
    std::mt19937_64 brng(o.seed + 1);
    const auto bx = uniform_volume(boundary, brng);
    const auto bw = uniform_weights(boundary.c, brng);
    const std::size_t reps = std::max<std::size_t>(o.reps, 3);
    const Timing naive = measure(reps, [&] { return compact_nonlocal_naive(bx, bw, cap); });
    const Timing fast = measure(reps, [&] { return compact_nonlocal_fast(bx, bw); });
    const double ratio = naive.min / std::max(fast.min, 1e-12);
    ok = ratio >= 10.0;
    char buf[160];
    std::snprintf(buf, sizeof(buf), "floor at %s: naive %.3e s, fast %.3e s, speedup %.1fx (need >= 10x)\n",
                  boundary.str().c_str(), naive.min, fast.min, ratio);
    body += buf;
  } else {
    body += "floor skipped: cap " + std::to_string(cap) + " is below 4096\n";
  }
  const fs::path out(o.out);
  write_text(out / "bench.csv", det);
  write_text(out / "bench_timing.csv", tim);
  body += tim;
  body += ok ? "PASS\n" : "FAIL fast path below the 10x floor\n";
  emit_report(out, "bench", st, body);
  return ok ? kPass : kFail;
}

// ---- phantom ----

struct PhantomOpts {
  std::size_t count = 100, eval_count = 0;
  std::string difficulty = "hard", dims = "32x32x32";
  std::uint64_t seed = kToyTrainDataSeed, eval_seed = kToyEvalDataSeed;
  std::string out = "out";
};

std::array<std::size_t, 3> parse_dims(const std::string& s) {
  const Shape4 sh = parse_shape("1x" + s);
  return {sh.d, sh.h, sh.w};
}

int cmd_phantom(const PhantomOpts& o, const Stamp& st) {
  if (o.count == 0) throw UsageError("--count must be >= 1");
  const auto diff = parse_difficulty(o.difficulty);
  const auto dims = parse_dims(o.dims);
  const fs::path out(o.out);
  std::string manifest = "split,scan_id,nodules\n";
  auto split = [&](const std::string& name, std::size_t n, std::uint64_t seed) {
    const auto data = generate_dataset<double>(n, diff, seed, dims);
    write_dataset(out / name, data);
    GroundTruthByScan gts;
    for (const auto& s : data) {
      manifest += name + "," + s.id + "," + std::to_string(s.gt_boxes.size()) + "\n";
      gts[s.id] = s.gt_boxes;
    }
    write_text(out / name / "ground_truth.csv", ground_truth_to_csv(gts));
  };
  split("train", o.count, o.seed);
  if (o.eval_count > 0) split("eval", o.eval_count, o.eval_seed);
  write_text(out / "manifest.csv", manifest);
  emit_report(out, "phantom", st,
              "wrote " + std::to_string(o.count) + " train" +
                  (o.eval_count ? " and " + std::to_string(o.eval_count) + " eval" : std::string()) + " samples (" +
                  o.difficulty + ", " + o.dims + ") to " + out.string() + "\n");
  return kPass;
}

// ---- experiment ----

struct ExperimentOpts {
  std::string layout = "2/3", kernel = "cnl", data, criterion, config, name;
  std::size_t groups = 4;
  std::uint64_t seed = 0;
  std::optional<std::size_t> epochs, batch;
  std::optional<double> lr;
  std::string out = "out";
};

int cmd_experiment(const ExperimentOpts& o, const Stamp& st) {
  const auto criterion = parse_criterion(o.criterion);
  LayoutConfig layout;
  layout.block_sequence = parse_layout(o.layout);
  layout.group_count = o.groups;
  layout.kernel = parse_kernel(o.kernel);
  TrainConfig cfg = toy_train_config(o.seed);
  if (!o.config.empty()) {
    if (!fs::is_regular_file(o.config)) throw UsageError("--config file not found: " + o.config);
    cfg = train_config_from(parse_key_values(read_file(o.config)), cfg);
    cfg.seed = o.seed;
  }
  if (o.epochs) cfg.epochs = *o.epochs;
  if (o.batch) cfg.batch_size = *o.batch;
  if (o.lr) cfg.learning_rate = *o.lr;
  cfg.validate();

  const fs::path data(o.data);
  if (!fs::is_directory(data / "train") || !fs::is_directory(data / "eval")) {
    throw UsageError("--data must contain train/ and eval/ (see `lssg phantom --eval-count`): " + o.data);
  }
  const auto train = read_dataset<double>(data / "train");
  const auto eval = read_dataset<double>(data / "eval");

  const fs::path out(o.out);
  const auto r = run_experiment(layout, train, eval, cfg, criterion, {}, [](const TrainLogRow& row) {
    if (row.step % 50 == 0) std::cerr << "step " << row.step << " loss " << row.loss_total << "\n";
  });
  const std::string name = o.name.empty() ? "toy-" + o.layout + "-G" + std::to_string(o.groups) + "-" + o.kernel +
                                                "-s" + std::to_string(o.seed)
                                          : o.name;
  write_text(out / "train_log.csv", train_log_csv(r.log));
  write_text(out / "detections_rpn.csv", detections_to_csv(r.rpn_detections));
  write_text(out / "detections_fpr.csv", detections_to_csv(r.fpr_detections));
  write_text(out / "froc_curve.csv", froc_curve_csv(r.rpn));
  write_text(out / "froc_summary.csv", froc_summary_csv(r.rpn));
  write_text(out / "froc_fpr_summary.csv", froc_summary_csv(r.fpr));
  write_text(out / "model.lssp", encode_checkpoint(r.params));

  const fs::path table = out / "table.txt";
  std::string rows = fs::exists(table) ? read_file(table) : format_froc_header();
  rows += format_froc_row(name, r.rpn);
  write_text(table, rows);

  std::string body = "trained " + std::to_string(r.log.size()) + " steps on " + std::to_string(train.size()) +
                     " samples; evaluated on " + std::to_string(eval.size()) + " (criterion " + criterion.str() + ")\n";
  body += format_froc_header() + format_froc_row(name, r.rpn) + format_froc_row(name + "+fpr", r.fpr);
  emit_report(out, "experiment", st, body);
  return kPass;
}

// ---- froc ----

struct FrocOpts {
  std::string det, gt, criterion, name = "method";
  std::string out = "out";
};

int cmd_froc(const FrocOpts& o, const Stamp& st) {
  const auto criterion = parse_criterion(o.criterion);
  for (const auto& p : {o.det, o.gt}) {
    if (!fs::is_regular_file(p)) throw UsageError("file not found: " + p);
  }
  const auto r = evaluate_froc(read_detections(o.det), read_ground_truth(o.gt), criterion);
  const fs::path out(o.out);
  write_text(out / "froc_curve.csv", froc_curve_csv(r));
  write_text(out / "froc_summary.csv", froc_summary_csv(r));
  emit_report(out, "froc", st, format_froc_header() + format_froc_row(o.name, r));
  return kPass;
}

int run(int argc, char** argv) {
  CLI::App app{"lssg: slice-grouped attention toolkit"};
  app.require_subcommand(1);

  GradcheckOpts go;
  auto* g = app.add_subcommand("gradcheck", "finite-difference checks of every backward pass");
  g->add_option("--shape", go.shape, "CxDxHxW")->capture_default_str();
  g->add_option("--mode", go.mode, "ssg|lsg|both")->capture_default_str();
  g->add_option("--groups", go.groups, "comma-separated G values")->capture_default_str();
  g->add_option("--kernel", go.kernel, "nl|cnl|both")->capture_default_str();
  g->add_option("--seed", go.seed)->capture_default_str();
  g->add_option("--out", go.out)->capture_default_str();
  g->add_flag("!--no-network", go.network, "skip the end-to-end network check");
  g->add_option("--corrupt-grad", go.corrupt)->group("");

  OracleOpts oo;
  auto* orc = app.add_subcommand("oracle", "fast compact path vs the naive pairwise oracle");
  orc->add_option("--trials", oo.trials)->capture_default_str();
  orc->add_option("--seed", oo.seed)->capture_default_str();
  orc->add_option("--shape", oo.shape, "fixed CxDxHxW (default: random shapes under the cap)");
  orc->add_option("--out", oo.out)->capture_default_str();

  BenchOpts bo;
  auto* b = app.add_subcommand("bench", "time and memory per attention variant");
  b->add_option("--shape", bo.shape)->capture_default_str();
  b->add_option("--groups", bo.groups)->capture_default_str();
  b->add_option("--reps", bo.reps)->capture_default_str();
  b->add_option("--seed", bo.seed)->capture_default_str();
  b->add_option("--out", bo.out)->capture_default_str();

  PhantomOpts po;
  auto* ph = app.add_subcommand("phantom", "write a synthetic phantom dataset");
  ph->add_option("--count", po.count)->capture_default_str();
  ph->add_option("--eval-count", po.eval_count)->capture_default_str();
  ph->add_option("--difficulty", po.difficulty, "easy|medium|hard")->capture_default_str();
  ph->add_option("--dims", po.dims, "DxHxW")->capture_default_str();
  ph->add_option("--seed", po.seed)->capture_default_str();
  ph->add_option("--eval-seed", po.eval_seed)->capture_default_str();
  ph->add_option("--out", po.out)->required();

  ExperimentOpts eo;
  auto* ex = app.add_subcommand("experiment", "train the toy detector and score it with FROC");
  ex->add_option("--layout", eo.layout, "A/B SSG/LSG blocks")->capture_default_str();
  ex->add_option("--groups", eo.groups)->capture_default_str();
  ex->add_option("--kernel", eo.kernel, "nl|cnl")->capture_default_str();
  ex->add_option("--data", eo.data, "directory with train/ and eval/")->required();
  ex->add_option("--criterion", eo.criterion, "center|iou:T")->required();
  ex->add_option("--config", eo.config, "key = value training overrides");
  ex->add_option("--epochs", eo.epochs);
  ex->add_option("--batch", eo.batch);
  ex->add_option("--lr", eo.lr);
  ex->add_option("--name", eo.name, "row label in table.txt");
  ex->add_option("--seed", eo.seed)->capture_default_str();
  ex->add_option("--out", eo.out)->capture_default_str();

  FrocOpts fo;
  auto* fr = app.add_subcommand("froc", "score a detection CSV against ground truth");
  fr->add_option("--det", fo.det)->required();
  fr->add_option("--gt", fo.gt)->required();
  fr->add_option("--criterion", fo.criterion, "center|iou:T")->required();
  fr->add_option("--name", fo.name)->capture_default_str();
  fr->add_option("--out", fo.out)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kPass : kUsage;
  }

  try {
    if (*g) return cmd_gradcheck(go, stamp_of(*g));
    if (*orc) return cmd_oracle(oo, stamp_of(*orc));
    if (*b) return cmd_bench(bo, stamp_of(*b));
    if (*ph) return cmd_phantom(po, stamp_of(*ph));
    if (*ex) return cmd_experiment(eo, stamp_of(*ex));
    if (*fr) return cmd_froc(fo, stamp_of(*fr));
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return kUsage;
  } catch (const Error& e) {
    // bad data or parameters supplied by the caller; internal failures are 1
    const bool internal = dynamic_cast<const NumericError*>(&e) || dynamic_cast<const StateError*>(&e);
    std::cerr << (internal ? "error: " : "usage error: ") << e.what() << "\n";
    return internal ? kFail : kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kFail;
  }
  return kUsage;
}

}  // namespace

int main(int argc, char** argv) { return run(argc, argv); }
