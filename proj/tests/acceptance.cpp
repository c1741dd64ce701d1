// Acceptance suite: one PASS/FAIL line per criterion.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <iomanip>
#include <iostream>
#include <random>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include "bootstrap_oracle.hpp"
#include "gradcheck.hpp"
#include "gradient_suite.hpp"
#include "hcn/cli.hpp"
#include "hcn/dataio.hpp"
#include "hcn/ecoc.hpp"
#include "hcn/evaluation.hpp"
#include "hcn/explain.hpp"
#include "hcn/features.hpp"
#include "hcn/fusion.hpp"
#include "hcn/ops.hpp"
#include "metrics_oracle.hpp"

using namespace hcn;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(double v, int digits = 4) {
  std::ostringstream os;
  os << std::setprecision(digits) << v;
  return os.str();
}

const fs::path& workdir() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "hcn_acceptance";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

// Runs the command-line front end in-process; returns the exit code.
int hcn_cli(const std::vector<std::string>& args, std::string* stdout_text = nullptr) {
  std::ostringstream out, err;
  const int rc = cli::run(args, out, err);
  if (stdout_text) *stdout_text = out.str();
  if (rc != 0) std::cerr << "  hcn " << args.front() << " failed (" << rc << "): " << err.str();
  return rc;
}

std::optional<double> csv_accuracy(const std::string& csv, const std::string& label) {
  for (const auto& row : evaluation::parse_report_csv(csv))
    if (row.strategy == label && row.metric == "accuracy") return row.value;
  return std::nullopt;
}

// ---- 1 -------------------------------------------------------------------------

Outcome gradient_suite() {
  const auto t0 = Clock::now();
  double worst_op = 0.0;
  std::string worst_name;
  for (const auto& c : testing::operator_gradient_suite()) {
    if (c.checked == 0) return {false, c.name + " checked nothing"};
    if (!(c.max_rel_error <= worst_op)) {
      worst_op = c.max_rel_error;
      worst_name = c.name;
    }
  }
  const auto net = testing::backbone_gradient_check();
  const double secs = seconds_since(t0);
  const bool ok = worst_op < 1e-4 && net.max_rel_error < 1e-3 && net.checked > 0 && secs < 60.0;
  return {ok, "operators max rel err " + fmt(worst_op) + " (" + worst_name + "), backbone " +
                  fmt(net.max_rel_error) + ", " + fmt(secs, 3) + " s"};
}

// ---- 2 -------------------------------------------------------------------------

Outcome pooling_round_trip() {
  std::mt19937_64 rng(2);
  std::uniform_int_distribution<std::size_t> rows(1, 10), cols(1, 12), chans(1, 48);
  for (int t = 0; t < 100; ++t) {
    const TensorD m = testing::random_tensor({3 * rows(rng), cols(rng), chans(rng)}, rng);
    const auto parts = features::pool1_split(m);
    if (!(concat_rows(std::vector<TensorD>(parts.begin(), parts.end())) == channel_max(m)))
      return {false, "map " + std::to_string(t) + " differs"};
  }
  return {true, "100 random maps bit-exact"};
}

// ---- 3 -------------------------------------------------------------------------

Outcome fuse_contract() {
  std::mt19937_64 rng(3);
  for (int t = 0; t < 50; ++t) {
    const std::size_t h = 1 + rng() % 8, w = 1 + rng() % 8, f = 1 + rng() % 6;
    const TensorD a = testing::random_tensor({h, w, f}, rng), b = testing::random_tensor({h, w, f}, rng);
    if (!(features::conv_sum_fuse(a, b, ConvParams<double>::zeros(1, 1, 2 * f, f)) == a))
      return {false, "zero parameters are not the identity"};
    ConvParams<double> p{testing::random_tensor({1, 1, 2 * f, f}, rng), testing::random_tensor({f}, rng), {}, {}};
    if (features::conv_sum_fuse(a, b, p).shape() != a.shape()) return {false, "shape changed"};
  }
  // y = w1 a + w2 b + c + a on 2x2x1.
  const TensorD a({2, 2, 1}, std::vector<double>{0.5, -1.25, 2.0, 0.125});
  const TensorD b({2, 2, 1}, std::vector<double>{-0.75, 0.25, 1.5, -2.0});
  const double w1 = 0.3, w2 = -1.2, c = 0.05;
  const ConvParams<double> p{TensorD({1, 1, 2, 1}, std::vector<double>{w1, w2}), TensorD({1}, c), {}, {}};
  const TensorD y = features::conv_sum_fuse(a, b, p);
  double err = 0.0;
  for (std::size_t i = 0; i < 4; ++i) err = std::max(err, std::abs(y[i] - (w1 * a[i] + w2 * b[i] + c + a[i])));
  return {err < 1e-12, "identity and shape on 50 random cases, 2x2x1 oracle error " + fmt(err)};
}

// ---- 4 -------------------------------------------------------------------------

Outcome jcl_solver() {
  const auto t0 = Clock::now();
  ecoc::Features x;
  std::vector<std::size_t> y;
  std::mt19937_64 rng(11);
  std::normal_distribution<double> noise(0.0, 0.6);
  const double centres[3][2] = {{-2.0, 0.0}, {2.0, 1.5}, {2.0, -1.5}};
  for (std::size_t k = 0; k < 3; ++k)
    for (int n = 0; n < 20; ++n) {
      x.push_back({centres[k][0] + noise(rng), centres[k][1] + noise(rng)});
      y.push_back(k);
    }
  ecoc::JclHyper h;
  h.tau = 1;
  const auto names = ecoc::default_class_names(3);
  const auto sol = ecoc::jcl_optimize(x, y, names, h);
  double best = 1e300;
  for (const auto& z : ecoc::enumerate_tree_codes(names, h.tau)) best = std::min(best, ecoc::refit_objective(x, y, z, h));
  bool monotone = true;
  for (std::size_t i = 1; i < sol.objective_trace.size(); ++i)
    monotone = monotone && sol.objective_trace[i] <= sol.objective_trace[i - 1];

  // Ternary entries, balance, both signs present, slack >= 0, margin.
  const auto& z = sol.codes;
  bool ternary = true, balanced = true, signs = true, slack = true, margin = true;
  for (std::size_t i = 0; i < z.columns(); ++i) {
    int sum = 0, pos = 0, neg = 0;
    for (std::size_t k = 0; k < z.classes(); ++k) {
      const int v = z.at(k, i);
      ternary = ternary && (v == -1 || v == 0 || v == 1);
      sum += v;
      pos += v > 0;
      neg += v < 0;
    }
    balanced = balanced && std::abs(sum) <= h.tau;
    signs = signs && pos > 0 && neg > 0;
    for (std::size_t n = 0; n < x.size(); ++n) {
      const double a = sol.slacks[i][n];
      slack = slack && a >= 0.0;
      const int code = z.at(y[n], i);
      if (code != 0) margin = margin && code * sol.classifiers[i].decision(x[n]) >= 1.0 - a - 1e-9;
    }
  }
  const bool valid = ecoc::validate_matrix(z).empty();
  const double secs = seconds_since(t0);
  const bool ok = z.columns() == 2 && sol.objective <= best + 1e-6 && monotone && ternary && balanced && signs &&
                  slack && margin && valid && secs < 120.0;
  return {ok, "objective " + fmt(sol.objective, 8) + " vs brute force " + fmt(best, 8) + ", trace " +
                  (monotone ? "monotone" : "NOT monotone") + ", constraints " +
                  (ternary && balanced && signs && slack && margin && valid ? "hold" : "VIOLATED") + ", " +
                  fmt(secs, 3) + " s"};
}

// ---- 5 -------------------------------------------------------------------------

Outcome ecoc_decode() {
  std::mt19937_64 rng(5);
  std::size_t matrices = 0;
  for (int t = 0; t < 200; ++t) {
    const std::size_t c = 2 + static_cast<std::size_t>(t % 4);
    const auto z = ecoc::random_tree_code(ecoc::default_class_names(c), 1 + t % 2, rng);
    if (!ecoc::validate_matrix(z).empty()) return {false, "random code " + std::to_string(t) + " invalid"};
    const auto tree = ecoc::build_hierarchy(z);
    for (std::size_t k = 0; k < c; ++k)
      if (ecoc::decode(tree, [&](std::size_t col) { return z.at(k, col); }) != k)
        return {false, "class " + std::to_string(k) + " of matrix " + std::to_string(t) + " not recovered"};
    ++matrices;
  }
  return {true, std::to_string(matrices) + " matrices, c in 2..5, every class recovered"};
}

// ---- 6 -------------------------------------------------------------------------

Outcome bootstrap_sampler() {
  const auto r = testing::check_bootstrap(5, 100, 1000, 32, 6);
  return {r.exact_counts && r.within_3sigma(),
          std::string(r.exact_counts ? "all 1000 batches 16/16" : "class counts WRONG") + ", duplicates/batch " +
              fmt(r.observed_mean) + " vs expected " + fmt(r.expected_mean) + " (3 sigma = " +
              fmt(3 * r.sigma_of_mean) + ")"};
}

// ---- 7, 8, 12 ------------------------------------------------------------------

struct DeskRun {
  bool synth_ok = false;
  std::vector<std::string> failures;
  std::map<std::string, double> train_seconds;
  std::string fm_csv;
  std::string fm_csv_repeat;
  std::string comparison_text, comparison_csv;
  std::string ablation_text, ablation_csv;
};

const DeskRun& desk_run() {
  static const DeskRun run = [] {
    DeskRun r;
    const fs::path dir = workdir() / "desk";
    const std::string manifest = (dir / "data" / "manifest.csv").string();
    r.synth_ok = hcn_cli({"synth", "--out", (dir / "data").string()}) == 0;
    if (!r.synth_ok) return r;
    auto train = [&](const std::string& name, std::vector<std::string> extra) {
      std::vector<std::string> args{"train", "--manifest", manifest, "--out", (dir / (name + ".hcn")).string(),
                                    "--quiet"};
      args.insert(args.end(), extra.begin(), extra.end());
      const auto t0 = Clock::now();
      const bool ok = hcn_cli(args) == 0;
      r.train_seconds[name] = seconds_since(t0);
      if (!ok) r.failures.push_back(name);
      return ok;
    };
    auto eval = [&](const std::vector<std::string>& names, const std::string& report, std::string* text,
                    std::string* csv) {
      std::vector<std::string> args{"eval", "--manifest", manifest, "--report", (dir / report).string()};
      for (const auto& n : names) {
        args.push_back("--model");
        args.push_back((dir / (n + ".hcn")).string());
      }
      if (hcn_cli(args, text) != 0) {
        r.failures.push_back("eval " + report);
        return;
      }
      *csv = dataio::read_file(dir / report);
    };
    for (const std::string s : {"fm", "flf", "dwa", "dml"}) train(s, {"--strategy", s});
    std::string ignore;
    eval({"fm"}, "fm.csv", &ignore, &r.fm_csv);
    train("fm_repeat", {"--strategy", "fm"});
    eval({"fm_repeat"}, "fm_repeat.csv", &ignore, &r.fm_csv_repeat);
    eval({"fm", "flf", "dwa", "dml"}, "comparison.csv", &r.comparison_text, &r.comparison_csv);
    train("dml_no_ecoc", {"--strategy", "dml", "--no-ecoc"});
    train("dml_no_boot", {"--strategy", "dml", "--no-bootstrap"});
    train("dml_no_both", {"--strategy", "dml", "--no-ecoc", "--no-bootstrap"});
    eval({"dml", "dml_no_ecoc", "dml_no_boot", "dml_no_both"}, "ablation.csv", &r.ablation_text, &r.ablation_csv);
    return r;
  }();
  return run;
}

Outcome end_to_end() {
  const auto& r = desk_run();
  if (!r.synth_ok) return {false, "synth failed"};
  for (const auto& f : r.failures)
    if (f.rfind("dml_", 0) != 0 && f != "eval ablation.csv") return {false, f + " failed"};
  const auto acc = csv_accuracy(r.fm_csv, "HCN-FM");
  const double fm_secs = r.train_seconds.at("fm");
  bool all_rows = true;
  for (const char* label : {"HCN-FM", "HCN-FLF", "HCN-DWA", "HCN-DML"})
    all_rows = all_rows && csv_accuracy(r.comparison_csv, label).has_value();
  const bool ranked = r.comparison_text.find("Ranking by accuracy") != std::string::npos;
  std::string accs;
  for (const char* label : {"HCN-FM", "HCN-FLF", "HCN-DWA", "HCN-DML"})
    if (auto a = csv_accuracy(r.comparison_csv, label)) accs += std::string(" ") + label + "=" + fmt(*a);
  const bool ok = acc && *acc >= 0.90 && fm_secs < 600.0 && all_rows && ranked;
  return {ok, "FM test accuracy " + (acc ? fmt(*acc) : std::string("n/a")) + " after " + fmt(fm_secs, 3) +
                  " s of training; comparison:" + accs};
}

Outcome ablations() {
  const auto& r = desk_run();
  if (!r.synth_ok) return {false, "synth failed"};
  for (const auto& f : r.failures)
    if (f.rfind("dml_", 0) == 0 || f == "eval ablation.csv") return {false, f + " failed"};
  std::string detail;
  bool ok = true;
  for (const char* row : {"HCN-DML", "HCN-DML w/o ECOC", "HCN-DML w/o Bootstrapping", "HCN-DML w/o ECOC + Bootstrapping"}) {
    const auto a = csv_accuracy(r.ablation_csv, row);
    const bool in_text = r.ablation_text.find(row) != std::string::npos;
    ok = ok && a.has_value() && in_text;
    detail += std::string(detail.empty() ? "" : "; ") + row + " " + (a ? fmt(*a) : std::string("MISSING"));
  }
  return {ok, detail};
}

Outcome determinism() {
  const auto& r = desk_run();
  const bool ok = !r.fm_csv.empty() && r.fm_csv == r.fm_csv_repeat;
  return {ok, ok ? "two seeded runs gave byte-identical CSVs (" + std::to_string(r.fm_csv.size()) + " bytes)"
                 : "report CSVs differ"};
}

// ---- 9 -------------------------------------------------------------------------

Outcome gradcam_criterion() {
  // Invariants on random inputs.
  const auto spec = backbone::BackboneSpec::darknet_mini({24, 24, 1}, 3);
  {
    const auto m = backbone::BackboneModel<double>::create(spec, 9);
    std::mt19937_64 rng(9);
    for (int i = 0; i < 50; ++i) {
      const TensorD x = testing::random_tensor({24, 24, 1}, rng, 0.0, 1.0);
      const auto s = explain::gradcam(m, x, static_cast<std::size_t>(i % 3));
      double mx = 0.0;
      for (double v : s.map.data()) {
        if (!(v >= 0.0 && v <= 1.0)) return {false, "map value outside [0, 1]"};
        mx = std::max(mx, v);
      }
      if (!(mx == 0.0 || mx == 1.0)) return {false, "map not max-normalised"};
    }
  }
  // Localisation on a network trained on the synthetic images.
  dataio::SyntheticSpec synth;
  const auto data = dataio::make_synthetic(synth);
  std::vector<TensorF> inputs;
  std::vector<std::size_t> targets;
  for (const auto& s : data.train) {
    inputs.push_back(s.image);
    targets.push_back(s.label);
  }
  backbone::TrainConfig cfg;
  cfg.seed = 9;
  const auto net = backbone::train_classifier(inputs, targets, spec, cfg).model;
  double mass = 0.0;
  std::size_t used = 0, correct = 0;
  for (std::size_t i = 0; i < data.test.size() && used < 20; i += 3, ++used) {
    const auto& img = data.test[i].image;
    const auto probs = net.probabilities(img);
    std::size_t pred = 0;
    for (std::size_t k = 1; k < 3; ++k)
      if (probs[k] > probs[pred]) pred = k;
    correct += pred == data.test[i].label;
    const auto s = explain::gradcam(net, img, pred);
    const auto [b, e] = dataio::region_rows(pred, 3, synth.size);
    double inside = 0.0, total = 0.0;
    for (std::size_t r = 0; r < s.map.dim(0); ++r)
      for (std::size_t c = 0; c < s.map.dim(1); ++c) {
        const double v = s.map[r * s.map.dim(1) + c];
        total += v;
        if (r >= b && r < e) inside += v;
      }
    mass += total > 0.0 ? inside / total : 0.0;
  }
  mass /= static_cast<double>(used);
  return {mass >= 0.60, "invariants hold on 50 inputs; mean saliency mass in the predicted class's third " +
                            fmt(mass) + " over " + std::to_string(used) + " images (" + std::to_string(correct) +
                            " predicted correctly)"};
}

// ---- 10 ------------------------------------------------------------------------

Outcome metrics_criterion() {
  const bool oracle = testing::metrics_agree_with_oracle(1000, 10);
  const auto r = evaluation::metrics(evaluation::ConfusionMatrix(3, {8, 1, 1, 0, 9, 1, 1, 0, 9}));
  const bool hand = std::abs(*r.sensitivity[0] - 0.8) < 5e-5 && std::abs(*r.precision[0] - 0.8889) < 5e-5 &&
                    std::abs(*r.specificity[0] - 0.95) < 5e-5 && std::abs(r.accuracy - 0.8667) < 5e-5;
  return {oracle && hand, std::string("oracle ") + (oracle ? "agrees" : "DISAGREES") + " on 1000 sets; hand matrix " +
                              fmt(*r.sensitivity[0]) + " / " + fmt(*r.precision[0]) + " / " + fmt(*r.specificity[0]) +
                              " / " + fmt(r.accuracy)};
}

// ---- 11 ------------------------------------------------------------------------

Outcome persistence() {
  dataio::SyntheticSpec synth;
  const auto data = dataio::make_synthetic(synth);
  fusion::HcnConfig cfg;
  cfg.strategy = fusion::Strategy::DML;
  cfg.train.epochs = 4;
  cfg.seed = 11;
  const auto model = fusion::train_hcn(data, cfg).model;
  auto report = [&](const fusion::HcnModel& m) {
    std::vector<std::size_t> pred, truth;
    std::string scores;
    for (const auto& s : data.test) {
      const auto p = fusion::predict(m, s.image);
      pred.push_back(p.label);
      truth.push_back(s.label);
      for (double v : p.scores) scores += evaluation::format_double(v) + ",";
    }
    return evaluation::compare_strategies(
               {evaluation::metrics(evaluation::confusion(pred, truth, 3), m.class_names, "HCN-DML")})
               .csv +
           scores;
  };
  const std::string before = report(model);
  const fs::path file = workdir() / "persist.hcn";
  dataio::save_model(model, file);
  const std::string bytes = dataio::read_file(file);
  const auto loaded = dataio::load_model(file);
  const bool exact = dataio::serialize_model(loaded) == bytes;
  const bool same_eval = report(loaded) == before;
  return {exact && same_eval, std::string("archive ") + (exact ? "bit-exact" : "DIFFERS") + " after reload (" +
                                  std::to_string(bytes.size()) + " bytes); eval and scores " +
                                  (same_eval ? "identical" : "DIFFER")};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"gradient suite", gradient_suite},
      {"pooling round trip", pooling_round_trip},
      {"convolution-sum fusion contract", fuse_contract},
      {"joint classifier learning solver", jcl_solver},
      {"ECOC decode", ecoc_decode},
      {"bootstrap sampler", bootstrap_sampler},
      {"end-to-end desk run", end_to_end},
      {"ablation harness", ablations},
      {"Grad-CAM", gradcam_criterion},
      {"metrics oracle", metrics_criterion},
      {"persistence", persistence},
      {"determinism", determinism},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::cout << (o.pass ? "PASS" : "FAIL") << "  " << std::setw(2) << i + 1 << "  " << criteria[i].first << ": "
              << o.detail << std::endl;
  }
  std::cout << (criteria.size() - failed) << "/" << criteria.size() << " criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
