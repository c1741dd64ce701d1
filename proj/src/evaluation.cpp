#include "hcn/evaluation.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "hcn/errors.hpp"

namespace hcn::evaluation {

ConfusionMatrix::ConfusionMatrix(std::size_t classes, std::vector<std::size_t> counts)
    : classes_(classes), counts_(std::move(counts)) {
  if (counts_.size() != classes_ * classes_) throw DimensionError("confusion matrix: wrong number of counts");
}

std::size_t ConfusionMatrix::total() const { return std::accumulate(counts_.begin(), counts_.end(), std::size_t{0}); }

std::size_t ConfusionMatrix::trace() const {
  std::size_t t = 0;
  for (std::size_t k = 0; k < classes_; ++k) t += at(k, k);
  return t;
}

ConfusionMatrix confusion(const std::vector<std::size_t>& predictions, const std::vector<std::size_t>& truths,
                          std::size_t classes) {
  if (predictions.size() != truths.size()) throw DimensionError("confusion: predictions and truths differ in length");
  ConfusionMatrix cm(classes);
  for (std::size_t i = 0; i < truths.size(); ++i) {
    if (truths[i] >= classes || predictions[i] >= classes)
      throw ContractError("confusion: label out of range at position " + std::to_string(i));
    ++cm.at(truths[i], predictions[i]);
  }
  return cm;
}

std::string ClassificationReport::label() const {
  std::string s = strategy;
  if (no_ecoc && no_bootstrap) return s + " w/o ECOC + Bootstrapping";
  if (no_ecoc) return s + " w/o ECOC";
  if (no_bootstrap) return s + " w/o Bootstrapping";
  return s;
}

namespace {

Metric ratio(std::size_t num, std::size_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

}  // namespace

ClassificationReport metrics(const ConfusionMatrix& cm, std::vector<std::string> class_names, std::string strategy) {
  const std::size_t c = cm.classes();
  const std::size_t total = cm.total();
  if (total == 0) throw ContractError("metrics: empty confusion matrix");
  if (class_names.empty())
    for (std::size_t k = 0; k < c; ++k) class_names.push_back("class" + std::to_string(k));
  if (class_names.size() != c) throw DimensionError("metrics: class name count mismatch");
  ClassificationReport r;
  r.strategy = std::move(strategy);
  r.class_names = std::move(class_names);
  r.samples = total;
  r.accuracy = static_cast<double>(cm.trace()) / static_cast<double>(total);
  for (std::size_t k = 0; k < c; ++k) {
    std::size_t row = 0, col = 0;
    for (std::size_t j = 0; j < c; ++j) {
      row += cm.at(k, j);
      col += cm.at(j, k);
    }
    const std::size_t tp = cm.at(k, k), fn = row - tp, fp = col - tp, tn = total - tp - fn - fp;
    r.sensitivity.push_back(ratio(tp, tp + fn));
    r.precision.push_back(ratio(tp, tp + fp));
    r.specificity.push_back(ratio(tn, tn + fp));
    r.support.push_back(row);
  }
  return r;
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

namespace {

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char ch : s) {
    if (ch == '"') q += '"';
    q += ch;
  }
  return q + "\"";
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char ch = line[i];
    if (quoted) {
      if (ch == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (ch == '"') {
        quoted = false;
      } else {
        cur += ch;
      }
    } else if (ch == '"') {
      quoted = true;
    } else if (ch == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += ch;
    }
  }
  out.push_back(cur);
  return out;
}

std::string percent(const Metric& m) {
  if (!m) return "NA";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f%%", *m * 100.0);
  return buf;
}

}  // namespace

Comparison compare_strategies(const std::vector<ClassificationReport>& reports) {
  if (reports.empty()) throw ContractError("compare_strategies: no reports");
  Comparison out;
  std::ostringstream csv;
  csv << "strategy,metric,class,value\n";
  auto emit = [&](const std::string& strat, const char* metric, const std::string& cls, const Metric& v) {
    csv << csv_field(strat) << ',' << metric << ',' << csv_field(cls) << ',' << (v ? format_double(*v) : "NA") << '\n';
  };
  for (const auto& r : reports) {
    const std::string lab = r.label();
    for (std::size_t k = 0; k < r.class_names.size(); ++k) {
      emit(lab, "sensitivity", r.class_names[k], r.sensitivity[k]);
      emit(lab, "precision", r.class_names[k], r.precision[k]);
      emit(lab, "specificity", r.class_names[k], r.specificity[k]);
    }
    emit(lab, "accuracy", "all", r.accuracy);
  }
  out.csv = csv.str();

  std::ostringstream txt;
  std::size_t label_w = 8;
  for (const auto& r : reports) label_w = std::max(label_w, r.label().size());
  const std::size_t col_w = 22;
  for (const auto& r : reports) {
    txt << std::left << std::setw(static_cast<int>(label_w + 14)) << r.label();
    for (const auto& n : r.class_names) txt << std::setw(static_cast<int>(col_w)) << n;
    txt << '\n';
    const std::pair<const char*, const std::vector<Metric>*> rows[] = {
        {"Sensitivity", &r.sensitivity}, {"Precision", &r.precision}, {"Specificity", &r.specificity}};
    for (const auto& [name, vals] : rows) {
      txt << std::setw(static_cast<int>(label_w + 14)) << (std::string("  ") + name);
      for (const auto& v : *vals) txt << std::setw(static_cast<int>(col_w)) << percent(v);
      txt << '\n';
    }
    txt << std::setw(static_cast<int>(label_w + 14)) << "  Accuracy" << percent(r.accuracy) << "  (n=" << r.samples
        << ")\n\n";
  }
  // Ranking by accuracy; ties keep input order.
  std::vector<std::size_t> order(reports.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return reports[a].accuracy > reports[b].accuracy; });
  txt << "Ranking by accuracy:\n";
  for (std::size_t i = 0; i < order.size(); ++i)
    txt << "  " << i + 1 << ". " << reports[order[i]].label() << "  " << percent(reports[order[i]].accuracy) << '\n';
  out.text = txt.str();
  return out;
}

std::vector<CsvRow> parse_report_csv(const std::string& csv) {
  std::istringstream is(csv);
  std::string line;
  if (!std::getline(is, line) || line != "strategy,metric,class,value")
    throw IoError("report csv: missing header 'strategy,metric,class,value'");
  std::vector<CsvRow> rows;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 4) throw IoError("report csv: line " + std::to_string(lineno) + " does not have 4 fields");
    CsvRow r{f[0], f[1], f[2], std::nullopt};
    if (f[3] != "NA") {
      double v = 0.0;
      const auto res = std::from_chars(f[3].data(), f[3].data() + f[3].size(), v);
      if (res.ec != std::errc() || res.ptr != f[3].data() + f[3].size())
        throw IoError("report csv: line " + std::to_string(lineno) + " has a bad value '" + f[3] + "'");
      r.value = v;
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

}  // namespace hcn::evaluation
