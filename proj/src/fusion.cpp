#include "hcn/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "hcn/errors.hpp"

namespace hcn::fusion {

std::string strategy_name(Strategy s) {
  switch (s) {
    case Strategy::FM: return "fm";
    case Strategy::FLF: return "flf";
    case Strategy::DWA: return "dwa";
    case Strategy::DML: return "dml";
  }
  return "fm";
}

std::string strategy_label(Strategy s) {
  std::string n = strategy_name(s);
  std::transform(n.begin(), n.end(), n.begin(), [](unsigned char ch) { return static_cast<char>(std::toupper(ch)); });
  return "HCN-" + n;
}

Strategy parse_strategy(const std::string& text) {
  std::string t = text;
  std::transform(t.begin(), t.end(), t.begin(), [](unsigned char ch) { return static_cast<char>(std::tolower(ch)); });
  if (t == "fm") return Strategy::FM;
  if (t == "flf") return Strategy::FLF;
  if (t == "dwa") return Strategy::DWA;
  if (t == "dml") return Strategy::DML;
  throw ContractError("unknown strategy '" + text + "' (expected fm, flf, dwa or dml)");
}

std::vector<double> fit_dwa_weights(const std::vector<double>& acc) {
  if (acc.empty()) throw ContractError("fit_dwa_weights: no streams");
  double total = 0.0;
  for (double a : acc) {
    if (!(a >= 0.0 && a <= 1.0)) throw ContractError("fit_dwa_weights: accuracy outside [0, 1]");
    total += a;
  }
  if (total == 0.0) throw ContractError("fit_dwa_weights: every stream has zero validation accuracy");
  std::vector<double> w;
  for (double a : acc) w.push_back(a / total);
  return w;
}

// ---- meta model -----------------------------------------------------------------

namespace {

std::vector<double> softmax_row(std::vector<double> z) {
  const double mx = *std::max_element(z.begin(), z.end());
  double s = 0.0;
  for (auto& v : z) s += (v = std::exp(v - mx));
  for (auto& v : z) v /= s;
  return z;
}

std::size_t argmax(const std::vector<double>& v) {
  return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace

std::vector<double> MetaModel::predict_proba(const std::vector<double>& x) const {
  if (x.size() != inputs()) throw DimensionError("meta model: expected " + std::to_string(inputs()) + " inputs");
  const std::size_t k = classes();
  std::vector<double> z(k);
  for (std::size_t c = 0; c < k; ++c) {
    double s = bias[c];
    for (std::size_t i = 0; i < x.size(); ++i) s += static_cast<double>(weight[i * k + c]) * x[i];
    z[c] = s;
  }
  return softmax_row(std::move(z));
}

std::size_t MetaModel::predict(const std::vector<double>& x) const { return argmax(predict_proba(x)); }

MetaModel fit_meta(const std::vector<std::vector<double>>& x, const std::vector<std::size_t>& labels,
                   std::size_t classes, const MetaConfig& cfg) {
  if (x.empty() || x.size() != labels.size()) throw DimensionError("fit_meta: bad sample counts");
  if (classes < 2) throw ContractError("fit_meta: need at least 2 classes");
  const std::size_t d = x.front().size();
  std::vector<std::size_t> seen(classes, 0);
  for (std::size_t n = 0; n < x.size(); ++n) {
    if (x[n].size() != d) throw DimensionError("fit_meta: feature vectors differ in length");
    if (labels[n] >= classes) throw ContractError("fit_meta: label out of range");
    ++seen[labels[n]];
  }
  if (std::count(seen.begin(), seen.end(), std::size_t{0}) == static_cast<std::ptrdiff_t>(classes - 1))
    throw ContractError("fit_meta: single-label input");

  std::vector<double> w(d * classes, 0.0), b(classes, 0.0), gw(d * classes), gb(classes);
  const double inv_n = 1.0 / static_cast<double>(x.size());
  for (std::size_t it = 0; it < cfg.max_iterations; ++it) {
    for (std::size_t j = 0; j < w.size(); ++j) gw[j] = cfg.l2 * w[j];
    std::fill(gb.begin(), gb.end(), 0.0);
    for (std::size_t n = 0; n < x.size(); ++n) {
      std::vector<double> z(classes);
      for (std::size_t c = 0; c < classes; ++c) {
        double s = b[c];
        for (std::size_t i = 0; i < d; ++i) s += w[i * classes + c] * x[n][i];
        z[c] = s;
      }
      const auto p = softmax_row(std::move(z));
      for (std::size_t c = 0; c < classes; ++c) {
        const double r = (p[c] - (labels[n] == c ? 1.0 : 0.0)) * inv_n;
        gb[c] += r;
        for (std::size_t i = 0; i < d; ++i) gw[i * classes + c] += r * x[n][i];
      }
    }
    double gmax = 0.0;
    for (double g : gw) gmax = std::max(gmax, std::abs(g));
    for (double g : gb) gmax = std::max(gmax, std::abs(g));
    if (gmax < cfg.tolerance) break;
    for (std::size_t j = 0; j < w.size(); ++j) w[j] -= cfg.step * gw[j];
    for (std::size_t c = 0; c < classes; ++c) b[c] -= cfg.step * gb[c];
  }
  MetaModel m{TensorF({d, classes}), TensorF({classes})};
  for (std::size_t j = 0; j < w.size(); ++j) m.weight[j] = static_cast<float>(w[j]);
  for (std::size_t c = 0; c < classes; ++c) m.bias[c] = static_cast<float>(b[c]);
  return m;
}

// ---- HCN ----------------------------------------------------------------------

void HcnConfig::validate() const {
  jcl.validate();
  train.validate();
  if (stem_out == 0 || stem_channels == 0) throw ContractError("hcn: stem geometry must be positive");
  if (backbone_convs == 0 || backbone_width == 0) throw ContractError("hcn: backbone size must be positive");
}

std::size_t HcnModel::expected_streams() const {
  return strategy == Strategy::DWA || strategy == Strategy::DML ? features::kStems : 1;
}

void HcnModel::validate() const {
  extractor.validate();
  const std::size_t c = class_names.size();
  if (c < 2) throw ContractError("hcn model: need at least 2 classes");
  if (use_ecoc) {
    const auto v = ecoc::validate_matrix(codes);
    if (!v.empty()) throw ContractError("hcn model: invalid coding matrix: " + ecoc::describe(v));
    if (codes.classes() != c) throw ContractError("hcn model: coding matrix class count mismatch");
  }
  const std::size_t ncol = use_ecoc ? codes.columns() : 1;
  const std::size_t outputs = use_ecoc ? 2 : c;
  if (columns.size() != ncol)
    throw ContractError("hcn model: " + std::to_string(columns.size()) + " column models for " + std::to_string(ncol) +
                        " columns");
  for (std::size_t i = 0; i < columns.size(); ++i) {
    const auto& col = columns[i];
    if (col.streams.size() != expected_streams())
      throw ContractError("hcn model: column " + std::to_string(i) + " has " + std::to_string(col.streams.size()) +
                          " backbones, strategy " + strategy_name(strategy) + " needs " +
                          std::to_string(expected_streams()));
    for (const auto& s : col.streams) {
      s.validate();
      if (s.spec.input_shape != extractor.feature_shape() || s.spec.classes != outputs)
        throw DimensionError("hcn model: column " + std::to_string(i) + " backbone does not match the features");
    }
    if (strategy == Strategy::DWA) {
      if (col.dwa_weights.size() != features::kStems) throw ContractError("hcn model: DWA weights missing");
      double sum = 0.0;
      for (float w : col.dwa_weights) {
        if (!(w >= 0.0f)) throw ContractError("hcn model: negative DWA weight");
        sum += w;
      }
      if (std::abs(sum - 1.0) > 1e-5) throw ContractError("hcn model: DWA weights do not sum to 1");
    }
    if (strategy == Strategy::DML) {
      if (!col.meta) throw ContractError("hcn model: DML meta model missing");
      if (col.meta->inputs() != features::kStems * outputs || col.meta->classes() != outputs)
        throw DimensionError("hcn model: DML meta model shape mismatch");
    }
  }
}

std::vector<TensorF> stream_inputs(Strategy s, const features::FeatureStack<float>& fs) {
  if (s == Strategy::FLF) return {features::gradient_sum_pool(fs.maps)};
  return {fs.maps.begin(), fs.maps.end()};
}

namespace {

std::vector<double> to_vec(const TensorF& probs) {
  std::vector<double> v;
  for (float p : probs.data()) v.push_back(p);
  return v;
}

// Per-stream probability vectors of one column.
std::vector<std::vector<double>> stream_probs(const HcnModel& m, const ColumnModel& col,
                                              const std::vector<TensorF>& inputs) {
  std::vector<std::vector<double>> out;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const auto& net = col.streams.size() == 1 ? col.streams[0] : col.streams[k];
    out.push_back(to_vec(net.probabilities(inputs[k])));
  }
  (void)m;
  return out;
}

std::vector<double> normalized(std::vector<double> p) {
  double s = 0.0;
  for (double v : p) s += v;
  for (auto& v : p) v /= s;
  return p;
}

}  // namespace

std::vector<double> column_probability(const HcnModel& m, std::size_t column, const features::FeatureStack<float>& fs) {
  const ColumnModel& col = m.columns.at(column);
  const auto probs = stream_probs(m, col, stream_inputs(m.strategy, fs));
  const std::size_t k = col.outputs();
  std::vector<double> out(k, 0.0);
  switch (m.strategy) {
    case Strategy::FM:
      for (const auto& p : probs)
        for (std::size_t c = 0; c < k; ++c) out[c] += p[c] / static_cast<double>(probs.size());
      return normalized(out);
    case Strategy::FLF:
      return normalized(probs.front());
    case Strategy::DWA:
      for (std::size_t s = 0; s < probs.size(); ++s)
        for (std::size_t c = 0; c < k; ++c) out[c] += col.dwa_weights[s] * probs[s][c];
      return normalized(out);
    case Strategy::DML: {
      std::vector<double> x;
      for (const auto& p : probs) x.insert(x.end(), p.begin(), p.end());
      return col.meta->predict_proba(x);
    }
  }
  return out;
}

Prediction assemble(const ecoc::Hierarchy& tree, std::size_t classes,
                    const std::function<std::vector<double>(std::size_t)>& column_prob) {
  Prediction pred;
  pred.scores.assign(classes, 1.0);
  std::size_t node = 0;
  while (true) {
    const auto& n = tree.nodes.at(node);
    const auto p = column_prob(n.column);
    if (p.size() != 2) throw DimensionError("assemble: column decider must return 2 probabilities");
    const int decision = p[1] >= p[0] ? +1 : -1;
    pred.trace.push_back({n.column, decision});
    pred.column_probs.push_back(p);
    // Classes on each side of this node inherit that side's probability.
    std::function<void(const ecoc::Child&, double)> scale = [&](const ecoc::Child& ch, double f) {
      if (ch.leaf) {
        pred.scores[ch.index] *= f;
        return;
      }
      for (auto c : tree.nodes[ch.index].classes) pred.scores[c] *= f;
    };
    scale(n.positive, p[1]);
    scale(n.negative, p[0]);
    const ecoc::Child& next = decision > 0 ? n.positive : n.negative;
    if (next.leaf) {
      pred.label = next.index;
      return pred;
    }
    node = next.index;
  }
}

Prediction predict_features(const HcnModel& m, const features::FeatureStack<float>& fs) {
  if (m.columns.empty()) throw ContractError("predict: untrained model");
  if (!m.use_ecoc) {
    Prediction pred;
    pred.scores = column_probability(m, 0, fs);
    pred.column_probs.push_back(pred.scores);
    pred.label = argmax(pred.scores);
    return pred;
  }
  const auto tree = ecoc::build_hierarchy(m.codes);
  return assemble(tree, m.class_names.size(), [&](std::size_t col) { return column_probability(m, col, fs); });
}

Prediction predict(const HcnModel& m, const Image& image) {
  return predict_features(m, features::extract_features(image, m.extractor));
}

// ---- training -------------------------------------------------------------------

namespace {

std::vector<features::FeatureStack<float>> extract_all(const std::vector<const Sample*>& samples,
                                                       const features::FeatureExtractor<float>& fx) {
  std::vector<features::FeatureStack<float>> out;
  out.reserve(samples.size());
  for (const auto* s : samples) {
    auto fs = features::extract_features(s->image, fx);
    fs.label = s->label;
    fs.source_id = s->id;
    out.push_back(std::move(fs));
  }
  return out;
}

// Channel means of the gradient-pooled map: a compact vector for code learning.
std::vector<double> summary_vector(const features::FeatureStack<float>& fs) {
  const TensorF pooled = features::gradient_sum_pool(fs.maps);
  const std::size_t c = pooled.shape().back();
  std::vector<double> v(c, 0.0);
  for (std::size_t i = 0; i < pooled.size(); ++i) v[i % c] += pooled[i];
  for (auto& x : v) x /= static_cast<double>(pooled.size() / c);
  return v;
}

}  // namespace

TrainOutcome train_hcn(const Dataset& data, const HcnConfig& cfg, const ProgressFn& progress) {
  cfg.validate();
  const std::size_t c = data.class_names.size();
  if (c < 2) throw ContractError("train_hcn: need at least 2 classes");
  if (data.train.empty()) throw ContractError("train_hcn: empty training split");
  const bool needs_val = cfg.strategy == Strategy::DWA || cfg.strategy == Strategy::DML;
  if (needs_val && data.val.empty())
    throw ContractError("train_hcn: strategy " + strategy_name(cfg.strategy) + " needs a validation split");
  const Shape& ishape = data.train.front().image.shape();
  if (ishape.size() != 3 || ishape[2] != 1) throw DimensionError("train_hcn: images must be H x W x 1");
  for (const auto* split : {&data.train, &data.val})
    for (const auto& s : *split) {
      if (s.image.shape() != ishape) throw DimensionError("train_hcn: image '" + s.id + "' has a different size");
      if (s.label >= c) throw ContractError("train_hcn: label out of range for '" + s.id + "'");
    }

  TrainOutcome out;
  HcnModel& m = out.model;
  m.strategy = cfg.strategy;
  m.use_ecoc = cfg.use_ecoc;
  m.bootstrap = cfg.train.bootstrap;
  m.class_names = data.class_names;
  m.seed = cfg.seed;
  m.epochs = cfg.train.epochs;
  m.extractor = features::FeatureExtractor<float>::create(ishape[0], ishape[1], cfg.stem_out, cfg.stem_channels,
                                                          cfg.seed);

  // Raw-image augmentation before feature extraction.
  std::vector<Sample> augmented;
  if (cfg.augment_copies > 0) {
    Rng rng = derive_rng(cfg.seed, 200);
    for (std::size_t copy = 0; copy < cfg.augment_copies; ++copy)
      for (const auto& s : data.train)
        augmented.push_back({backbone::augment(s.image, cfg.train.augment, rng), s.label,
                             s.id + "#aug" + std::to_string(copy)});
  }
  std::vector<const Sample*> train_ptrs, val_ptrs;
  for (const auto& s : data.train) train_ptrs.push_back(&s);
  for (const auto& s : augmented) train_ptrs.push_back(&s);
  for (const auto& s : data.val) val_ptrs.push_back(&s);
  const auto train_fs = extract_all(train_ptrs, m.extractor);
  const auto val_fs = needs_val ? extract_all(val_ptrs, m.extractor) : std::vector<features::FeatureStack<float>>{};

  if (cfg.use_ecoc) {
    if (cfg.optimize_codes) {
      ecoc::Features feats;
      std::vector<std::size_t> labels;
      for (const auto& fs : train_fs) {
        feats.push_back(summary_vector(fs));
        labels.push_back(*fs.label);
      }
      m.codes = ecoc::jcl_optimize(feats, labels, data.class_names, cfg.jcl).codes;
    } else {
      m.codes = ecoc::default_tree_code(data.class_names, cfg.jcl.tau);
    }
  }
  const std::size_t ncol = cfg.use_ecoc ? m.codes.columns() : 1;
  const std::size_t outputs = cfg.use_ecoc ? 2 : c;
  const auto spec = backbone::BackboneSpec::darknet_mini(m.extractor.feature_shape(), outputs, cfg.backbone_convs,
                                                         cfg.backbone_width);

  // Column target of a label, or nullopt when the class does not participate.
  auto target_of = [&](std::size_t col, std::size_t label) -> std::optional<std::size_t> {
    if (!cfg.use_ecoc) return label;
    const int code = m.codes.at(label, col);
    if (code == 0) return std::nullopt;
    return code > 0 ? 1u : 0u;
  };

  for (std::size_t col = 0; col < ncol; ++col) {
    std::vector<const features::FeatureStack<float>*> part;
    std::vector<std::size_t> part_targets;
    for (const auto& fs : train_fs)
      if (auto t = target_of(col, *fs.label)) {
        part.push_back(&fs);
        part_targets.push_back(*t);
      }
    ColumnModel cm;
    const std::size_t nstreams = m.expected_streams();
    for (std::size_t s = 0; s < nstreams; ++s) {
      std::vector<TensorF> inputs;
      std::vector<std::size_t> targets;
      for (std::size_t i = 0; i < part.size(); ++i) {
        auto ins = stream_inputs(cfg.strategy, *part[i]);
        if (nstreams > 1) ins = {ins[s]};
        for (auto& x : ins) {
          inputs.push_back(std::move(x));
          targets.push_back(part_targets[i]);
        }
      }
      backbone::TrainConfig tc = cfg.train;
      Rng seeder = derive_rng(cfg.seed, 300 + 16 * col + s);
      tc.seed = seeder();
      auto result = backbone::train_classifier(inputs, targets, spec, tc);
      StreamLog log{col, s, result.loss_trace, result.samples_seen, part.size()};
      if (progress) progress(log);
      out.logs.push_back(std::move(log));
      cm.streams.push_back(std::move(result.model));
    }

    if (needs_val) {
      std::vector<std::vector<double>> meta_x;
      std::vector<std::size_t> meta_y;
      std::vector<std::size_t> hits(nstreams, 0);
      for (const auto& fs : val_fs) {
        const auto t = target_of(col, *fs.label);
        if (!t) continue;
        const auto probs = stream_probs(m, cm, stream_inputs(cfg.strategy, fs));
        std::vector<double> x;
        for (std::size_t s = 0; s < nstreams; ++s) {
          hits[s] += argmax(probs[s]) == *t;
          x.insert(x.end(), probs[s].begin(), probs[s].end());
        }
        meta_x.push_back(std::move(x));
        meta_y.push_back(*t);
      }
      if (meta_x.empty())
        throw ContractError("train_hcn: validation split has no samples for column " + std::to_string(col));
      if (cfg.strategy == Strategy::DWA) {
        std::vector<double> acc;
        for (auto h : hits) acc.push_back(static_cast<double>(h) / static_cast<double>(meta_x.size()));
        if (std::all_of(acc.begin(), acc.end(), [](double a) { return a == 0.0; })) acc.assign(nstreams, 1.0);
        for (double w : fit_dwa_weights(acc)) cm.dwa_weights.push_back(static_cast<float>(w));
      } else {
        cm.meta = fit_meta(meta_x, meta_y, outputs, cfg.meta);
      }
    }
    m.columns.push_back(std::move(cm));
  }
  m.validate();
  return out;
}

}  // namespace hcn::fusion
