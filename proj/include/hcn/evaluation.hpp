#pragma once

#include <optional>
#include <string>
#include <vector>

namespace hcn::evaluation {

// Rows are true classes, columns predicted classes.
class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes = 0) : classes_(classes), counts_(classes * classes, 0) {}
  ConfusionMatrix(std::size_t classes, std::vector<std::size_t> counts);

  std::size_t classes() const noexcept { return classes_; }
  std::size_t at(std::size_t truth, std::size_t predicted) const { return counts_[truth * classes_ + predicted]; }
  std::size_t& at(std::size_t truth, std::size_t predicted) { return counts_[truth * classes_ + predicted]; }
  std::size_t total() const;
  std::size_t trace() const;
  const std::vector<std::size_t>& counts() const noexcept { return counts_; }
  bool operator==(const ConfusionMatrix&) const = default;

 private:
  std::size_t classes_;
  std::vector<std::size_t> counts_;
};

ConfusionMatrix confusion(const std::vector<std::size_t>& predictions, const std::vector<std::size_t>& truths,
                          std::size_t classes);

// nullopt marks an undefined ratio (zero denominator).
using Metric = std::optional<double>;

struct ClassificationReport {
  std::string strategy;  // e.g. "HCN-DML"
  bool no_ecoc = false;
  bool no_bootstrap = false;
  std::vector<std::string> class_names;
  std::vector<Metric> sensitivity;
  std::vector<Metric> specificity;
  std::vector<Metric> precision;
  double accuracy = 0.0;
  std::size_t samples = 0;
  std::vector<std::size_t> support;  // true-class counts

  // Strategy plus ablation suffix, e.g. "HCN-FM w/o ECOC + Bootstrapping".
  std::string label() const;
};

ClassificationReport metrics(const ConfusionMatrix& cm, std::vector<std::string> class_names = {},
                             std::string strategy = "");

struct CsvRow {
  std::string strategy;
  std::string metric;
  std::string cls;
  Metric value;
  bool operator==(const CsvRow&) const = default;
};

struct Comparison {
  std::string text;
  std::string csv;
};

// Rows grouped per report and metric, columns per class. Values in the text
// table are percentages with two decimals; the CSV keeps full precision
// (shortest round-trip form) and writes NA for undefined values.
Comparison compare_strategies(const std::vector<ClassificationReport>& reports);

std::vector<CsvRow> parse_report_csv(const std::string& csv);

// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

}  // namespace hcn::evaluation
