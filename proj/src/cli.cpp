#include "hcn/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <iomanip>
#include <optional>
#include <sstream>

#include "hcn/dataio.hpp"
#include "hcn/errors.hpp"
#include "hcn/evaluation.hpp"
#include "hcn/explain.hpp"
#include "hcn/fusion.hpp"

namespace hcn::cli {

namespace {

fusion::Dataset load_dataset(const dataio::DatasetManifest& m, std::size_t h, std::size_t w) {
  fusion::Dataset d;
  d.class_names = m.class_names;
  d.train = dataio::load_split(m, dataio::Split::Train, h, w);
  d.val = dataio::load_split(m, dataio::Split::Val, h, w);
  d.test = dataio::load_split(m, dataio::Split::Test, h, w);
  return d;
}

std::vector<std::size_t> truths_of(const std::vector<fusion::Sample>& samples) {
  std::vector<std::size_t> t;
  for (const auto& s : samples) t.push_back(s.label);
  return t;
}

evaluation::ClassificationReport evaluate(const fusion::HcnModel& m, const std::vector<fusion::Sample>& samples) {
  std::vector<std::size_t> pred;
  for (const auto& s : samples) pred.push_back(fusion::predict(m, s.image).label);
  auto r = evaluation::metrics(evaluation::confusion(pred, truths_of(samples), m.class_names.size()), m.class_names,
                               fusion::strategy_label(m.strategy));
  r.no_ecoc = !m.use_ecoc;
  r.no_bootstrap = !m.bootstrap;
  return r;
}

struct Options {
  // synth
  std::string synth_spec, synth_out;
  std::optional<std::uint64_t> synth_seed;
  // train
  std::string manifest, config, strategy, model_out;
  bool no_ecoc = false, no_bootstrap = false, quiet = false;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs;
  // eval
  std::vector<std::string> models;
  std::string split = "test", report;
  // gradcam
  std::string model, image, cam_out;
  // triage
  std::string triage_out;
};

int do_synth(const Options& o, std::ostream& out) {
  dataio::SyntheticSpec spec = o.synth_spec.empty() ? dataio::SyntheticSpec{} : dataio::load_config(o.synth_spec).synth;
  if (o.synth_seed) spec.seed = *o.synth_seed;
  const auto manifest = dataio::write_synthetic(spec, o.synth_out);
  out << "wrote " << manifest.string() << '\n';
  return 0;
}

int do_train(const Options& o, std::ostream& out) {
  dataio::RunConfig rc = o.config.empty() ? dataio::RunConfig{} : dataio::load_config(o.config);
  auto& cfg = rc.hcn;
  if (!o.strategy.empty()) cfg.strategy = fusion::parse_strategy(o.strategy);
  if (o.no_ecoc) cfg.use_ecoc = false;
  if (o.no_bootstrap) cfg.train.bootstrap = false;
  if (o.seed) cfg.seed = *o.seed;
  if (o.epochs) cfg.train.epochs = *o.epochs;
  const auto m = dataio::load_manifest(o.manifest);
  const auto data = load_dataset(m, rc.image_height, rc.image_width);
  if (!o.quiet)
    out << "training " << fusion::strategy_label(cfg.strategy) << (cfg.use_ecoc ? "" : " w/o ECOC")
        << (cfg.train.bootstrap ? "" : " w/o Bootstrapping") << " on " << data.train.size() << " images\n";
  auto progress = [&](const fusion::StreamLog& log) {
    if (o.quiet) return;
    for (std::size_t e = 0; e < log.loss_trace.size(); ++e)
      out << "column " << log.column << " stream " << log.stream << " epoch " << e + 1 << " loss " << std::fixed
          << std::setprecision(6) << log.loss_trace[e] << std::defaultfloat << '\n';
  };
  const auto result = fusion::train_hcn(data, cfg, progress);
  dataio::save_model(result.model, o.model_out);
  if (!o.quiet) out << "saved " << o.model_out << '\n';
  return 0;
}

int do_eval(const Options& o, std::ostream& out) {
  const auto m = dataio::load_manifest(o.manifest);
  const auto split = dataio::parse_split(o.split);
  std::vector<evaluation::ClassificationReport> reports;
  for (const auto& p : o.models) {
    const auto model = dataio::load_model(p);
    if (model.class_names != m.class_names) throw ContractError("model '" + p + "' was trained on different classes");
    const auto samples =
        dataio::load_split(m, split, model.extractor.image_height, model.extractor.image_width);
    if (samples.empty()) throw ContractError("manifest has no '" + o.split + "' rows");
    reports.push_back(evaluate(model, samples));
  }
  const auto cmp = evaluation::compare_strategies(reports);
  out << cmp.text;
  if (!o.report.empty()) dataio::write_file(o.report, cmp.csv);
  return 0;
}

int do_gradcam(const Options& o, std::ostream& out) {
  const auto model = dataio::load_model(o.model);
  const TensorF raw = dataio::read_pgm(o.image);
  const TensorF image =
      dataio::resize_image(raw, model.extractor.image_height, model.extractor.image_width);
  const auto fs = features::extract_features(image, model.extractor);
  const auto pred = fusion::predict_features(model, fs);

  // The column that settled the prediction and the side it chose.
  std::size_t column = 0, target = pred.label;
  if (model.use_ecoc) {
    column = pred.trace.back().column;
    target = pred.trace.back().decision > 0 ? 1 : 0;
  }
  const auto& col = model.columns[column];
  const auto inputs = fusion::stream_inputs(model.strategy, fs);
  // Explain the stream input the deciding network is most confident on.
  std::size_t best_stream = 0, best_input = 0;
  double best_p = -1.0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const std::size_t s = col.streams.size() == 1 ? 0 : i;
    const double p = col.streams[s].probabilities(inputs[i])[target];
    if (p > best_p) {
      best_p = p;
      best_stream = s;
      best_input = i;
    }
  }
  auto cam = explain::gradcam(col.streams[best_stream], inputs[best_input], target, raw.dim(0), raw.dim(1));
  cam.source_column = column;
  dataio::write_ppm(o.cam_out, explain::overlay(cam, raw));
  std::ostringstream note;
  note << "stream " << best_stream << " input " << best_input << " feature map resized to the image";
  dataio::write_file(o.cam_out + ".txt", explain::sidecar_text(model.class_names, pred.scores, pred.label, cam, note.str()));
  out << "predicted " << model.class_names[pred.label] << "; wrote " << o.cam_out << '\n';
  return 0;
}

int do_triage(const Options& o, std::ostream& out) {
  const auto model = dataio::load_model(o.model);
  const auto m = dataio::load_manifest(o.manifest, model.class_names);
  const auto split = dataio::parse_split(o.split);
  std::ostringstream csv;
  csv << "path,predicted";
  for (const auto& n : model.class_names) csv << ",p_" << n;
  csv << ",route\n";
  std::map<std::string, std::size_t> counts;
  for (const auto* r : m.split(split)) {
    const TensorF img = dataio::resize_image(dataio::read_pgm(r->path), model.extractor.image_height,
                                             model.extractor.image_width);
    const auto p = fusion::predict(model, img);
    const std::string& name = model.class_names[p.label];
    const std::string route = dataio::triage_route(name);
    ++counts[route];
    csv << r->path.string() << ',' << name;
    for (double s : p.scores) csv << ',' << evaluation::format_double(s);
    csv << ',' << route << '\n';
  }
  dataio::write_file(o.triage_out, csv.str());
  for (const auto& [route, n] : counts) out << std::setw(5) << n << "  " << route << '\n';
  return 0;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Hierarchical classification network for chest X-ray triage", "hcn"};
  app.require_subcommand(1);
  Options o;

  auto* synth = app.add_subcommand("synth", "Write a synthetic band corpus with a manifest");
  synth->add_option("--spec", o.synth_spec, "Config file with a [synth] section")->check(CLI::ExistingFile);
  synth->add_option("--out", o.synth_out, "Output directory")->required();
  synth->add_option("--seed", o.synth_seed, "Override the corpus seed");

  auto* train = app.add_subcommand("train", "Train a model from a manifest");
  train->add_option("--manifest", o.manifest, "CSV manifest (path,label,split)")->required();
  train->add_option("--config", o.config, "INI configuration file");
  train->add_option("--strategy", o.strategy, "fm, flf, dwa or dml");
  train->add_option("--out", o.model_out, "Model archive to write")->required();
  train->add_flag("--no-ecoc", o.no_ecoc, "Single multi-class network per stream");
  train->add_flag("--no-bootstrap", o.no_bootstrap, "Plain shuffled batches");
  train->add_option("--seed", o.seed, "Run seed");
  train->add_option("--epochs", o.epochs, "Override the epoch count");
  train->add_flag("--quiet", o.quiet, "Suppress the loss log");

  auto* eval = app.add_subcommand("eval", "Evaluate one or more models and compare them");
  eval->add_option("--model", o.models, "Model archive (repeatable)")->required();
  eval->add_option("--manifest", o.manifest, "CSV manifest")->required();
  eval->add_option("--split", o.split, "train, val or test");
  eval->add_option("--report", o.report, "CSV report to write");

  auto* cam = app.add_subcommand("gradcam", "Saliency overlay for one image");
  cam->add_option("--model", o.model, "Model archive")->required();
  cam->add_option("--image", o.image, "PGM image")->required();
  cam->add_option("--out", o.cam_out, "PPM overlay to write (a .txt sidecar is added)")->required();

  auto* triage = app.add_subcommand("triage", "Route every image of a split");
  triage->add_option("--model", o.model, "Model archive")->required();
  triage->add_option("--manifest", o.manifest, "CSV manifest")->required();
  triage->add_option("--split", o.split, "train, val or test");
  triage->add_option("--out", o.triage_out, "CSV to write")->required();

  auto* keys = app.add_subcommand("config", "List every configuration key with its default");

  try {
    std::vector<std::string> reversed(args.rbegin(), args.rend());
    app.parse(reversed);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "hcn: " << e.what() << "\n\n" << app.help();
    return 1;
  }

  try {
    if (synth->parsed()) return do_synth(o, out);
    if (train->parsed()) return do_train(o, out);
    if (eval->parsed()) return do_eval(o, out);
    if (cam->parsed()) return do_gradcam(o, out);
    if (triage->parsed()) return do_triage(o, out);
    if (keys->parsed()) {
      for (const auto& k : dataio::config_keys()) out << k << '\n';
      return 0;
    }
  } catch (const IoError& e) {
    err << "hcn: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "hcn: " << e.what() << '\n';
    return 1;
  }
  return 1;
}

}  // namespace hcn::cli
