// sbp: command-line front end.
//
//   sbp analyze CFG [--input N] [--out DIR]
//   sbp forward CFG [--input N] [--weights PREFIX] [--seed S] [--out DIR]
//   sbp init-weights CFG [--seed S] [--out DIR]
//   sbp gradcheck [--trials N] [--seed S] [--alpha A] [--c C] [--sweep-offset] [--out DIR]
//   sbp eval DETS GTS [--interpolation all-point|coco101] [--out DIR]
//
// Exit codes: 0 success, 1 a check failed, 2 bad input.

#include <chrono>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "sbp/sbp.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kOk = 0;
constexpr int kCheckFailed = 1;
constexpr int kInputError = 2;

struct InputError : sbp::Error {
  using sbp::Error::Error;
};

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string utc_now() {
  const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
  std::tm tm{};
  gmtime_r(&t, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

std::string format(const char* fmt, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, fmt, v);
  return buf;
}

// Everything a run writes goes under one directory, recorded in manifest.txt.
class RunDir {
 public:
  RunDir(std::string subcommand, const std::string& dir) : subcommand_(std::move(subcommand)), dir_(dir) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) throw InputError("cannot create output directory " + dir + ": " + ec.message());
  }

  void record(const std::string& key, const std::string& value) { entries_.emplace_back(key, value); }

  std::ofstream open(const std::string& name) {
    std::ofstream f(dir_ / name);
    if (!f) throw InputError("cannot write " + (dir_ / name).string());
    outputs_.push_back(name);
    return f;
  }

  fs::path path(const std::string& name) {
    outputs_.push_back(name);
    return dir_ / name;
  }

  void finish(const std::string& status) {
    std::ofstream m(dir_ / "manifest.txt");
    m << "tool sbp " << sbp::kVersion << "\n";
    m << "subcommand " << subcommand_ << "\n";
    for (const auto& [k, v] : entries_) m << k << " " << v << "\n";
    for (const auto& o : outputs_) m << "output " << o << "\n";
    m << "status " << status << "\n";
    m << "created " << utc_now() << "\n";
  }

 private:
  std::string subcommand_;
  fs::path dir_;
  std::vector<std::pair<std::string, std::string>> entries_;
  std::vector<std::string> outputs_;
};

sbp::ArchGraph load_graph(const std::string& path, int input_size) {
  sbp::ArchGraph g = sbp::parse_config(read_file(path), path);
  if (input_size > 0) g.meta.input = {g.meta.input.c, input_size, input_size};
  return sbp::infer_shapes(std::move(g));
}

// ---------------------------------------------------------------- analyze

struct AnalyzeArgs {
  std::string config;
  int input = 0;
  std::string out = "sbp-out";
};

int cmd_analyze(const AnalyzeArgs& a) {
  const sbp::ArchGraph g = load_graph(a.config, a.input);
  const sbp::CostReport r = sbp::analyze(g);
  RunDir run("analyze", a.out);
  run.record("config", a.config);
  run.record("input", std::to_string(r.input.c) + "x" + std::to_string(r.input.h) + "x" + std::to_string(r.input.w));
  run.record("conventions", "flops_per_mac=2,flops_per_mac=1 bias_in_flops=false");
  {
    auto f = run.open("cost_2flops_per_mac.txt");
    sbp::write_cost_records(f, r, 2, "graph=" + g.meta.name);
  }
  {
    auto f = run.open("cost_1flop_per_mac.txt");
    sbp::write_cost_records(f, r, 1, "graph=" + g.meta.name);
  }
  sbp::write_cost_table(std::cout, r);
  run.finish("ok");
  return kOk;
}

// ---------------------------------------------------------------- init-weights / forward

struct WeightArgs {
  std::string config;
  std::uint64_t seed = sbp::InitOptions{}.seed;
  int input = 0;
  std::string weights;  // prefix: PREFIX.bin + PREFIX.manifest
  std::string out = "sbp-out";
  bool detections = false;
  double score_threshold = 0.25;
};

int cmd_init_weights(const WeightArgs& a) {
  const sbp::ArchGraph g = load_graph(a.config, a.input);
  sbp::InitOptions opt;
  opt.seed = a.seed;
  const sbp::WeightStore store = sbp::random_weights(g, opt);
  RunDir run("init-weights", a.out);
  run.record("config", a.config);
  run.record("seed", std::to_string(a.seed));
  store.save(run.path("weights.bin"), run.path("weights.manifest"));
  std::cout << "wrote " << store.total() << " parameters for " << store.blocks().size() << " nodes\n";
  run.finish("ok");
  return kOk;
}

int cmd_forward(const WeightArgs& a) {
  const sbp::ArchGraph g = load_graph(a.config, a.input);
  sbp::WeightStore store;
  if (a.weights.empty()) {
    sbp::InitOptions opt;
    opt.seed = a.seed;
    store = sbp::random_weights(g, opt);
  } else {
    store = sbp::WeightStore::load(a.weights + ".bin", a.weights + ".manifest");
  }

  const sbp::Shape3 in = g.meta.input;
  sbp::Tensor x(sbp::Shape{1, in.c, in.h, in.w});
  std::mt19937_64 rng(a.seed);
  std::uniform_real_distribution<double> pixel(0.0, 1.0);
  for (double& v : x.data()) v = pixel(rng);

  const sbp::ForwardResult res = sbp::forward(g, x, store);
  const std::vector<int> strides = sbp::head_strides(g);

  RunDir run("forward", a.out);
  run.record("config", a.config);
  run.record("weights", a.weights.empty() ? "random seed=" + std::to_string(a.seed) : a.weights);
  run.record("seed", std::to_string(a.seed));
  run.record("input", "1x" + std::to_string(in.c) + "x" + std::to_string(in.h) + "x" + std::to_string(in.w));

  std::ostringstream report;
  report << "# level n c h w stride mean std min max\n";
  for (std::size_t i = 0; i < res.heads.size(); ++i) {
    const sbp::Tensor& t = res.heads[i];
    double sum = 0.0;
    double sq = 0.0;
    double lo = t.data().front();
    double hi = lo;
    for (double v : t.data()) {
      sum += v;
      sq += v * v;
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    const double n = static_cast<double>(t.data().size());
    const double mean = sum / n;
    const double sd = std::sqrt(std::max(0.0, sq / n - mean * mean));
    report << i << " " << t.n() << " " << t.c() << " " << t.h() << " " << t.w() << " "
           << (i < strides.size() ? strides[i] : 0) << " " << format("%.9e", mean) << " " << format("%.9e", sd) << " "
           << format("%.9e", lo) << " " << format("%.9e", hi) << "\n";
  }
  report << "# node outputs\n";
  for (const auto& node : g.nodes) {
    report << "node " << node.id << " " << sbp::to_string(node.kind);
    for (const auto& s : res.node_shapes[static_cast<std::size_t>(node.id)]) report << " " << sbp::to_string(s);
    report << "\n";
  }
  {
    auto f = run.open("forward.txt");
    f << report.str();
  }
  for (std::size_t i = 0; i < res.heads.size(); ++i) {
    const sbp::Tensor& t = res.heads[i];
    std::cout << "head " << i << ": (" << t.c() << ", " << t.h() << ", " << t.w() << ")\n";
  }

  if (a.detections) {
    sbp::DecodeOptions d;
    d.num_classes = g.meta.num_classes;
    d.reg_max = g.meta.reg_max;
    d.score_threshold = a.score_threshold;
    const auto dets = sbp::decode_detections(res.heads, strides, d);
    auto f = run.open("detections.txt");
    f << "# image_id class_id cx cy w h score\n";
    for (const auto& det : dets) {
      f << det.image_id << " " << det.class_id << " " << format("%.6f", det.box.cx) << " " << format("%.6f", det.box.cy)
        << " " << format("%.6f", det.box.w) << " " << format("%.6f", det.box.h) << " " << format("%.6f", det.score)
        << "\n";
    }
    std::cout << dets.size() << " detections after NMS\n";
  }
  run.finish("ok");
  return kOk;
}

// ---------------------------------------------------------------- gradcheck

struct GradArgs {
  int trials = 1000;
  std::uint64_t seed = sbp::GradcheckOptions{}.seed;
  std::vector<double> alphas;
  double c = 0.5;
  bool sweep = false;
  std::string out = "sbp-out";
};

int cmd_gradcheck(const GradArgs& a) {
  std::vector<double> alphas = a.alphas.empty() ? std::vector<double>{0.0, 0.5, 1.0} : a.alphas;
  for (double al : alphas) sbp::validate(sbp::HybridLossParams{a.c, al});
  if (a.trials < 1) throw InputError("--trials must be >= 1");

  RunDir run("gradcheck", a.out);
  run.record("seed", std::to_string(a.seed));
  run.record("trials", std::to_string(a.trials));
  run.record("c", format("%g", a.c));
  std::string alpha_list;
  for (double al : alphas) alpha_list += (alpha_list.empty() ? "" : ",") + format("%g", al);
  run.record("iou_ratio", alpha_list);

  bool all_ok = true;
  std::ostringstream text;
  text << "# iou_ratio trials disjoint rejected max_rel_error verdict\n";
  for (double al : alphas) {
    sbp::GradcheckOptions opt;
    opt.trials = a.trials;
    opt.seed = a.seed;
    opt.params = {a.c, al};
    const sbp::GradcheckResult r = sbp::run_gradcheck(opt);
    all_ok = all_ok && r.passed;
    text << format("%g", al) << " " << r.trials << " " << r.disjoint << " " << r.rejected << " "
         << format("%.3e", r.max_rel_error) << " " << (r.passed ? "PASS" : "FAIL") << "\n";
  }
  {
    auto f = run.open("gradcheck.txt");
    f << text.str();
  }
  std::cout << text.str();

  if (a.sweep) {
    // Unit target; the prediction slides from overlap to well past contact.
    const sbp::Box target{0.0, 0.0, 1.0, 1.0};
    const auto rows = sbp::offset_sweep(target, a.c, 0.0, 3.0, 1e-3);
    auto f = run.open("offset_sweep.txt");
    f << "# offset iou_loss nwd_loss d_iou/dcx d_nwd/dcx\n";
    int disjoint = 0;
    int nwd_live = 0;
    for (const auto& row : rows) {
      f << format("%.3f", row.offset) << " " << format("%.9f", row.iou_loss) << " " << format("%.9f", row.nwd_loss)
        << " " << format("%.9e", row.iou_grad_cx) << " " << format("%.9e", row.nwd_grad_cx) << "\n";
      if (row.offset > 1.0) {
        ++disjoint;
        if (row.nwd_grad_cx > 0.0) ++nwd_live;
      }
    }
    std::cout << "offset sweep (0..3, step 1e-3): " << nwd_live << "/" << disjoint
              << " disjoint offsets have nonzero NWD gradient; IoU gradient there is 0\n";
    for (double t : {0.0, 0.5, 0.999, 1.001, 1.5, 2.0, 3.0}) {
      const auto r = sbp::offset_sweep(target, a.c, t, t, 1.0).front();
      std::cout << "  t=" << format("%.3f", t) << "  d_iou/dcx=" << format("% .6f", r.iou_grad_cx)
                << "  d_nwd/dcx=" << format("% .6f", r.nwd_grad_cx) << "\n";
    }
  }
  std::cout << (all_ok ? "PASS" : "FAIL") << "\n";
  run.finish(all_ok ? "pass" : "fail");
  return all_ok ? kOk : kCheckFailed;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  std::string dets;
  std::string gts;
  std::string interpolation = "all-point";
  std::string out = "sbp-out";
};

int cmd_eval(const EvalArgs& a) {
  std::istringstream d(read_file(a.dets));
  std::istringstream g(read_file(a.gts));
  const auto dets = sbp::read_detections(d, a.dets);
  const auto gts = sbp::read_ground_truths(g, a.gts);
  const auto mode = a.interpolation == "coco101" ? sbp::Interpolation::coco101 : sbp::Interpolation::all_point;
  const sbp::EvalResult r = sbp::evaluate(dets, gts, mode);

  RunDir run("eval", a.out);
  run.record("detections", a.dets);
  run.record("ground_truth", a.gts);
  run.record("interpolation", a.interpolation);
  {
    auto f = run.open("eval.txt");
    sbp::write_eval_records(f, r);
  }
  sbp::write_eval_table(std::cout, r);
  run.finish("ok");
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Lightweight detector toolkit: cost analysis, forward runs, loss checks, evaluation"};
  app.fallthrough();  // global flags may follow the subcommand
  app.require_subcommand(1);
  int threads = 1;
  app.add_option("--threads", threads, "worker threads for convolutions (results do not depend on it)")
      ->check(CLI::Range(1, 256));
  app.set_version_flag("--version", std::string("sbp ") + sbp::kVersion);

  AnalyzeArgs analyze;
  auto* an = app.add_subcommand("analyze", "static parameter / FLOP report");
  an->add_option("config", analyze.config, "architecture config")->required();
  an->add_option("--input", analyze.input, "square input size (default: the config's)")->check(CLI::PositiveNumber);
  an->add_option("--out", analyze.out, "output directory");

  WeightArgs init;
  auto* in = app.add_subcommand("init-weights", "write seeded random weights for a config");
  in->add_option("config", init.config, "architecture config")->required();
  in->add_option("--seed", init.seed, "RNG seed");
  in->add_option("--input", init.input, "square input size")->check(CLI::PositiveNumber);
  in->add_option("--out", init.out, "output directory");

  WeightArgs fwd;
  auto* fw = app.add_subcommand("forward", "run the graph on a seeded random image and dump head statistics");
  fw->add_option("config", fwd.config, "architecture config")->required();
  fw->add_option("--input", fwd.input, "square input size")->check(CLI::PositiveNumber);
  fw->add_option("--weights", fwd.weights, "weight prefix (PREFIX.bin, PREFIX.manifest); random if omitted");
  fw->add_option("--seed", fwd.seed, "seed for the input image and random weights");
  fw->add_flag("--detections", fwd.detections, "decode heads, apply NMS and write detections.txt");
  fw->add_option("--score-threshold", fwd.score_threshold, "decode score threshold")->check(CLI::Range(0.0, 1.0));
  fw->add_option("--out", fwd.out, "output directory");

  GradArgs grad;
  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of the hybrid box loss gradient");
  gc->add_option("--trials", grad.trials, "random box pairs per iou_ratio");
  gc->add_option("--seed", grad.seed, "RNG seed");
  gc->add_option("--alpha", grad.alphas, "iou_ratio value(s); default 0 0.5 1");
  gc->add_option("--c", grad.c, "NWD normalization constant");
  gc->add_flag("--sweep-offset", grad.sweep, "also write the gradient-vs-offset table");
  gc->add_option("--out", grad.out, "output directory");

  EvalArgs ev;
  auto* e = app.add_subcommand("eval", "precision / recall / AP / mAP from record files");
  e->add_option("detections", ev.dets, "detection records")->required();
  e->add_option("ground_truth", ev.gts, "ground-truth records")->required();
  e->add_option("--interpolation", ev.interpolation, "all-point (exact envelope area) or coco101")
      ->check(CLI::IsMember({"all-point", "coco101"}));
  e->add_option("--out", ev.out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& s) {
    return app.exit(s);
  } catch (const CLI::ParseError& err) {
    app.exit(err);
    return kInputError;
  }

  sbp::set_threads(threads);
  try {
    if (*an) return cmd_analyze(analyze);
    if (*in) return cmd_init_weights(init);
    if (*fw) return cmd_forward(fwd);
    if (*gc) return cmd_gradcheck(grad);
    if (*e) return cmd_eval(ev);
  } catch (const sbp::Error& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kInputError;
  } catch (const std::exception& err) {
    std::cerr << "error: " << err.what() << "\n";
    return kInputError;
  }
  return kInputError;
}
