#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "hcn/backbone.hpp"
#include "hcn/ecoc.hpp"
#include "hcn/features.hpp"

namespace hcn::fusion {

enum class Strategy { FM, FLF, DWA, DML };

std::string strategy_name(Strategy s);  // "fm", "flf", "dwa", "dml"
std::string strategy_label(Strategy s); // "HCN-FM", ...
Strategy parse_strategy(const std::string& text);

// Stream weights proportional to validation accuracy.
std::vector<double> fit_dwa_weights(const std::vector<double>& val_accuracies);

// Multinomial logistic regression on concatenated stream probabilities.
struct MetaModel {
  TensorF weight;  // inputs x classes
  TensorF bias;    // classes

  std::size_t inputs() const { return weight.dim(0); }
  std::size_t classes() const { return weight.dim(1); }
  std::vector<double> predict_proba(const std::vector<double>& x) const;
  std::size_t predict(const std::vector<double>& x) const;
};

struct MetaConfig {
  double l2 = 1e-3;
  double step = 1.0;
  std::size_t max_iterations = 3000;
  double tolerance = 1e-9;  // stop when the gradient max-norm falls below
};

// Full-batch gradient descent from zero weights.
MetaModel fit_meta(const std::vector<std::vector<double>>& x, const std::vector<std::size_t>& labels,
                   std::size_t classes, const MetaConfig& cfg = {});

// ---- HCN model ----------------------------------------------------------------

using Image = TensorF;  // H x W x 1, values in [0, 1]

struct Sample {
  Image image;
  std::size_t label = 0;
  std::string id;
};

struct Dataset {
  std::vector<std::string> class_names;
  std::vector<Sample> train;
  std::vector<Sample> val;
  std::vector<Sample> test;
};

struct HcnConfig {
  Strategy strategy = Strategy::FM;
  bool use_ecoc = true;
  bool optimize_codes = false;  // run joint classifier learning instead of the default tree
  ecoc::JclHyper jcl;
  backbone::TrainConfig train;
  std::size_t augment_copies = 0;  // extra augmented copies of each training image
  std::size_t stem_out = 7;
  std::size_t stem_channels = 16;
  std::size_t backbone_convs = 6;
  std::size_t backbone_width = 8;
  MetaConfig meta;
  std::uint64_t seed = 1;

  void validate() const;
};

// One hierarchy column (or, without ECOC, the single multi-class problem).
struct ColumnModel {
  std::vector<backbone::BackboneModel<float>> streams;  // 1 for FM/FLF, 4 for DWA/DML
  std::vector<float> dwa_weights;                       // DWA only
  std::optional<MetaModel> meta;                        // DML only
  std::size_t outputs() const { return streams.front().spec.classes; }
};

struct HcnModel {
  Strategy strategy = Strategy::FM;
  bool use_ecoc = true;
  bool bootstrap = true;
  std::vector<std::string> class_names;
  features::FeatureExtractor<float> extractor;
  ecoc::CodingMatrix codes;  // empty without ECOC
  std::vector<ColumnModel> columns;
  std::uint64_t seed = 0;
  std::size_t epochs = 0;

  std::size_t expected_streams() const;
  void validate() const;
};

struct StreamLog {
  std::size_t column = 0;
  std::size_t stream = 0;
  std::vector<double> loss_trace;
  std::vector<std::size_t> samples_seen;
  std::size_t participating_images = 0;
};

struct TrainOutcome {
  HcnModel model;
  std::vector<StreamLog> logs;
};

using ProgressFn = std::function<void(const StreamLog&)>;

TrainOutcome train_hcn(const Dataset& data, const HcnConfig& cfg, const ProgressFn& progress = {});

struct Prediction {
  std::size_t label = 0;
  std::vector<double> scores;                         // per class
  std::vector<ecoc::TraversalStep> trace;             // empty without ECOC
  std::vector<std::vector<double>> column_probs;      // one distribution per visited column
};

// Fused probability distribution of one column for one feature stack.
std::vector<double> column_probability(const HcnModel& m, std::size_t column,
                                       const features::FeatureStack<float>& fs);

// Walks the hierarchy with `column_prob` and assigns each class the product of
// branch probabilities along its path, stopping where the walk left it.
Prediction assemble(const ecoc::Hierarchy& tree, std::size_t classes,
                    const std::function<std::vector<double>(std::size_t)>& column_prob);

Prediction predict_features(const HcnModel& m, const features::FeatureStack<float>& fs);
Prediction predict(const HcnModel& m, const Image& image);

// Stream inputs of one column for a feature stack, in the order the stream
// backbones expect (FM: the four maps, FLF: the pooled map, DWA/DML: map k).
std::vector<TensorF> stream_inputs(Strategy s, const features::FeatureStack<float>& fs);

}  // namespace hcn::fusion
