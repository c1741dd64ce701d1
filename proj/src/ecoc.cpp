#include "hcn/ecoc.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "hcn/errors.hpp"

namespace hcn::ecoc {

CodingMatrix::CodingMatrix(std::size_t classes, std::size_t columns, std::vector<int> entries,
                           std::vector<std::string> class_names, int tolerance)
    : classes_(classes), columns_(columns), entries_(std::move(entries)), names_(std::move(class_names)),
      tolerance_(tolerance) {
  if (entries_.size() != classes_ * columns_)
    throw DimensionError("coding matrix: " + std::to_string(entries_.size()) + " entries for " +
                         std::to_string(classes_) + "x" + std::to_string(columns_));
  if (names_.size() != classes_)
    throw DimensionError("coding matrix: " + std::to_string(names_.size()) + " class names for " +
                         std::to_string(classes_) + " classes");
  if (tolerance_ < 0) throw ContractError("coding matrix: tolerance must be non-negative");
}

std::vector<int> CodingMatrix::codeword(std::size_t class_index) const {
  return {entries_.begin() + static_cast<std::ptrdiff_t>(class_index * columns_),
          entries_.begin() + static_cast<std::ptrdiff_t>((class_index + 1) * columns_)};
}

std::string CodingMatrix::to_text() const {
  std::ostringstream os;
  os << classes_ << ' ' << columns_ << ' ' << tolerance_ << '\n';
  for (std::size_t c = 0; c < classes_; ++c) {
    for (std::size_t i = 0; i < columns_; ++i) os << (i ? " " : "") << at(c, i);
    os << '\n';
  }
  for (const auto& n : names_) os << n << '\n';
  return os.str();
}

CodingMatrix CodingMatrix::from_text(const std::string& text) {
  std::istringstream is(text);
  std::string line;
  auto next_line = [&](const char* what) {
    if (!std::getline(is, line)) throw IoError(std::string("coding matrix: missing ") + what);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    return line;
  };
  std::istringstream header(next_line("header line"));
  std::size_t c = 0, l = 0;
  int tau = 0;
  if (!(header >> c >> l >> tau)) throw IoError("coding matrix: header must be 'c l tau'");
  std::vector<int> entries;
  for (std::size_t r = 0; r < c; ++r) {
    std::istringstream row(next_line("matrix row"));
    for (std::size_t i = 0; i < l; ++i) {
      int v = 0;
      if (!(row >> v)) throw IoError("coding matrix: row " + std::to_string(r) + " is short");
      if (v < -1 || v > 1) throw IoError("coding matrix: entry " + std::to_string(v) + " not in {-1,0,1}");
      entries.push_back(v);
    }
  }
  std::vector<std::string> names;
  for (std::size_t r = 0; r < c; ++r) names.push_back(next_line("class name"));
  return CodingMatrix(c, l, std::move(entries), std::move(names), tau);
}

namespace {

using ClassSet = std::vector<std::size_t>;

ClassSet support_of(const CodingMatrix& z, std::size_t column, int sign = 0) {
  ClassSet s;
  for (std::size_t c = 0; c < z.classes(); ++c) {
    const int v = z.at(c, column);
    if (sign == 0 ? v != 0 : v == sign) s.push_back(c);
  }
  return s;
}

std::string set_string(const ClassSet& s) {
  std::ostringstream os;
  os << '{';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << '}';
  return os.str();
}

}  // namespace

std::vector<Violation> validate_matrix(const CodingMatrix& z) {
  std::vector<Violation> out;
  const std::size_t c = z.classes(), l = z.columns();
  if (c < 2) out.push_back({std::nullopt, "need at least 2 classes"});
  if (l == 0) out.push_back({std::nullopt, "coding matrix has no columns"});
  for (int v : z.entries())
    if (v < -1 || v > 1) {
      out.push_back({std::nullopt, "entry " + std::to_string(v) + " not in {-1,0,+1}"});
      break;
    }
  for (std::size_t i = 0; i < l; ++i) {
    int pos = 0, neg = 0, sum = 0;
    for (std::size_t k = 0; k < c; ++k) {
      pos += z.at(k, i) > 0;
      neg += z.at(k, i) < 0;
      sum += z.at(k, i);
    }
    if (pos == 0) out.push_back({i, "no positive class"});
    if (neg == 0) out.push_back({i, "no negative class"});
    if (std::abs(sum) > z.tolerance())
      out.push_back({i, "column sum " + std::to_string(sum) + " outside [-" + std::to_string(z.tolerance()) + ", " +
                            std::to_string(z.tolerance()) + "]"});
  }
  for (std::size_t a = 0; a < c; ++a)
    for (std::size_t b = a + 1; b < c; ++b)
      if (z.codeword(a) == z.codeword(b))
        out.push_back({std::nullopt, "codewords not distinct (classes " + std::to_string(a) + " and " +
                                         std::to_string(b) + ")"});
  if (l == 0 || c < 2) return out;

  // Tree property.
  ClassSet all(c);
  std::iota(all.begin(), all.end(), 0);
  if (support_of(z, 0) != all) out.push_back({0, "root column does not cover every class"});
  for (std::size_t k = 1; k < l; ++k) {
    const ClassSet s = support_of(z, k);
    bool nested = false;
    for (std::size_t j = 0; j < k && !nested; ++j)
      nested = s == support_of(z, j, +1) || s == support_of(z, j, -1);
    if (!nested) out.push_back({k, "support " + set_string(s) + " is not a sign class of an earlier column"});
  }
  for (std::size_t j = 0; j < l; ++j)
    for (int sign : {+1, -1}) {
      const ClassSet side = support_of(z, j, sign);
      if (side.size() < 2) continue;
      std::size_t splits = 0;
      for (std::size_t k = j + 1; k < l; ++k) splits += support_of(z, k) == side;
      if (splits == 0)
        out.push_back({j, "classes " + set_string(side) + " on the " + (sign > 0 ? "positive" : "negative") +
                              " side never reach a leaf"});
      else if (splits > 1)
        out.push_back({j, "classes " + set_string(side) + " are split by more than one column"});
    }
  return out;
}

std::string describe(const std::vector<Violation>& violations) {
  std::ostringstream os;
  for (std::size_t i = 0; i < violations.size(); ++i) {
    if (i) os << "; ";
    if (violations[i].column) os << "column " << *violations[i].column << ": ";
    os << violations[i].message;
  }
  return os.str();
}

int encode(const CodingMatrix& z, std::size_t class_index, std::size_t column) {
  if (class_index >= z.classes() || column >= z.columns())
    throw ContractError("encode: (" + std::to_string(class_index) + ", " + std::to_string(column) +
                        ") outside coding matrix " + std::to_string(z.classes()) + "x" + std::to_string(z.columns()));
  return z.at(class_index, column);
}

bool splittable(std::size_t size, int tolerance) {
  thread_local std::map<std::pair<std::size_t, int>, bool> memo;
  if (size <= 1) return true;
  const auto key = std::make_pair(size, tolerance);
  if (auto it = memo.find(key); it != memo.end()) return it->second;
  bool ok = false;
  for (std::size_t p = 1; p < size && !ok; ++p) {
    const long diff = 2 * static_cast<long>(p) - static_cast<long>(size);
    ok = std::labs(diff) <= tolerance && splittable(p, tolerance) && splittable(size - p, tolerance);
  }
  return memo[key] = ok;
}

std::vector<std::string> default_class_names(std::size_t classes) {
  if (classes == 3) return {"Normal", "Bacterial Pneumonia", "Viral Pneumonia"};
  std::vector<std::string> names;
  for (std::size_t k = 0; k < classes; ++k) names.push_back("class" + std::to_string(k));
  return names;
}

namespace {

struct Split {
  ClassSet positive;
  ClassSet negative;
};

bool balanced(std::size_t p, std::size_t n, int tolerance) {
  return std::labs(static_cast<long>(p) - static_cast<long>(n)) <= tolerance;
}

CodingMatrix from_splits(const std::vector<Split>& splits, std::vector<std::string> names, int tolerance) {
  const std::size_t c = names.size(), l = splits.size();
  std::vector<int> entries(c * l, 0);
  for (std::size_t i = 0; i < l; ++i) {
    for (auto k : splits[i].positive) entries[k * l + i] = +1;
    for (auto k : splits[i].negative) entries[k * l + i] = -1;
  }
  return CodingMatrix(c, l, std::move(entries), std::move(names), tolerance);
}

void default_splits(const ClassSet& s, int tolerance, std::vector<Split>& out) {
  if (s.size() < 2) return;
  const std::size_t column = out.size();
  const std::size_t p = s.size() / 2;
  if (!balanced(p, s.size() - p, tolerance))
    throw InfeasibleError("column " + std::to_string(column) + " (" + std::to_string(s.size()) +
                          " classes): no split satisfies tolerance " + std::to_string(tolerance));
  Split split{ClassSet(s.begin(), s.begin() + static_cast<std::ptrdiff_t>(p)),
              ClassSet(s.begin() + static_cast<std::ptrdiff_t>(p), s.end())};
  out.push_back(split);
  default_splits(split.positive, tolerance, out);
  default_splits(split.negative, tolerance, out);
}

std::vector<std::vector<Split>> all_splits(const ClassSet& s, int tolerance, std::size_t limit) {
  if (s.size() < 2) return {{}};
  std::vector<std::vector<Split>> out;
  const std::size_t n = s.size();
  for (std::size_t mask = 1; mask + 1 < (std::size_t{1} << n); ++mask) {
    Split split;
    for (std::size_t i = 0; i < n; ++i) (mask >> i & 1 ? split.positive : split.negative).push_back(s[i]);
    if (!balanced(split.positive.size(), split.negative.size(), tolerance)) continue;
    if (!splittable(split.positive.size(), tolerance) || !splittable(split.negative.size(), tolerance)) continue;
    const auto left = all_splits(split.positive, tolerance, limit);
    const auto right = all_splits(split.negative, tolerance, limit);
    for (const auto& a : left)
      for (const auto& b : right) {
        std::vector<Split> tree{split};
        tree.insert(tree.end(), a.begin(), a.end());
        tree.insert(tree.end(), b.begin(), b.end());
        out.push_back(std::move(tree));
        if (out.size() > limit) throw ContractError("enumerate_tree_codes: more than " + std::to_string(limit) + " codes");
      }
  }
  return out;
}

struct RandomNode {
  Split split;
  std::optional<std::size_t> parent;
};

void random_splits(const ClassSet& s, int tolerance, std::mt19937_64& rng, std::optional<std::size_t> parent,
                   std::vector<RandomNode>& out) {
  if (s.size() < 2) return;
  std::vector<std::size_t> sizes;
  for (std::size_t p = 1; p < s.size(); ++p)
    if (balanced(p, s.size() - p, tolerance) && splittable(p, tolerance) && splittable(s.size() - p, tolerance))
      sizes.push_back(p);
  if (sizes.empty())
    throw InfeasibleError(std::to_string(s.size()) + " classes cannot be split within tolerance " +
                          std::to_string(tolerance));
  const std::size_t p = sizes[std::uniform_int_distribution<std::size_t>(0, sizes.size() - 1)(rng)];
  ClassSet shuffled = s;
  std::shuffle(shuffled.begin(), shuffled.end(), rng);
  Split split{ClassSet(shuffled.begin(), shuffled.begin() + static_cast<std::ptrdiff_t>(p)),
              ClassSet(shuffled.begin() + static_cast<std::ptrdiff_t>(p), shuffled.end())};
  std::sort(split.positive.begin(), split.positive.end());
  std::sort(split.negative.begin(), split.negative.end());
  const std::size_t me = out.size();
  out.push_back({split, parent});
  random_splits(split.positive, tolerance, rng, me, out);
  random_splits(split.negative, tolerance, rng, me, out);
}

ClassSet all_classes(std::size_t c) {
  ClassSet s(c);
  std::iota(s.begin(), s.end(), 0);
  return s;
}

}  // namespace

CodingMatrix default_tree_code(std::vector<std::string> class_names, int tolerance) {
  if (class_names.size() < 2) throw ContractError("default_tree_code: need at least 2 classes");
  std::vector<Split> splits;
  default_splits(all_classes(class_names.size()), tolerance, splits);
  return from_splits(splits, std::move(class_names), tolerance);
}

std::vector<CodingMatrix> enumerate_tree_codes(std::vector<std::string> class_names, int tolerance,
                                               std::size_t limit) {
  std::vector<CodingMatrix> out;
  for (const auto& tree : all_splits(all_classes(class_names.size()), tolerance, limit))
    out.push_back(from_splits(tree, class_names, tolerance));
  return out;
}

CodingMatrix random_tree_code(std::vector<std::string> class_names, int tolerance, std::mt19937_64& rng) {
  std::vector<RandomNode> nodes;
  random_splits(all_classes(class_names.size()), tolerance, rng, std::nullopt, nodes);
  // Random column order in which every parent precedes its children.
  std::vector<bool> placed(nodes.size(), false);
  std::vector<Split> ordered;
  while (ordered.size() < nodes.size()) {
    std::vector<std::size_t> ready;
    for (std::size_t i = 0; i < nodes.size(); ++i)
      if (!placed[i] && (!nodes[i].parent || placed[*nodes[i].parent])) ready.push_back(i);
    const std::size_t pick = ready[std::uniform_int_distribution<std::size_t>(0, ready.size() - 1)(rng)];
    placed[pick] = true;
    ordered.push_back(nodes[pick].split);
  }
  return from_splits(ordered, std::move(class_names), tolerance);
}

// ---- hierarchy ------------------------------------------------------------------

std::size_t Hierarchy::node_for_column(std::size_t column) const {
  for (std::size_t i = 0; i < nodes.size(); ++i)
    if (nodes[i].column == column) return i;
  throw ContractError("hierarchy has no node for column " + std::to_string(column));
}

std::size_t Hierarchy::depth() const {
  std::function<std::size_t(const Child&)> walk = [&](const Child& ch) -> std::size_t {
    if (ch.leaf) return 0;
    const auto& n = nodes[ch.index];
    return 1 + std::max(walk(n.positive), walk(n.negative));
  };
  return nodes.empty() ? 0 : walk(Child{false, 0});
}

Hierarchy build_hierarchy(const CodingMatrix& z) {
  const auto violations = validate_matrix(z);
  if (!violations.empty()) throw ContractError("build_hierarchy: invalid coding matrix: " + describe(violations));
  Hierarchy h;
  h.classes = z.classes();
  std::function<std::size_t(std::size_t)> build = [&](std::size_t column) -> std::size_t {
    const std::size_t me = h.nodes.size();
    h.nodes.push_back({column, support_of(z, column), {}, {}});
    for (int sign : {+1, -1}) {
      const ClassSet side = support_of(z, column, sign);
      Child child;
      if (side.size() == 1) {
        child = {true, side.front()};
      } else {
        std::size_t next = column + 1;
        while (support_of(z, next) != side) ++next;  // validated above, so it exists
        child = {false, build(next)};
      }
      (sign > 0 ? h.nodes[me].positive : h.nodes[me].negative) = child;
    }
    return me;
  };
  build(0);
  return h;
}

std::size_t decode(const Hierarchy& tree, const std::function<int(std::size_t)>& decider,
                   std::vector<TraversalStep>* trace) {
  if (tree.nodes.empty()) throw ContractError("decode: empty hierarchy");
  if (trace) trace->clear();
  std::size_t node = 0;
  while (true) {
    const HierarchyNode& n = tree.nodes[node];
    const int d = decider(n.column) >= 0 ? +1 : -1;
    if (trace) trace->push_back({n.column, d});
    const Child& next = d > 0 ? n.positive : n.negative;
    if (next.leaf) return next.index;
    node = next.index;
  }
}

// ---- joint classifier learning -----------------------------------------------

void JclHyper::validate() const {
  if (!std::isfinite(delta) || delta < 0) throw ContractError("JCL: delta must be finite and >= 0");
  if (!std::isfinite(lambda) || lambda < 0) throw ContractError("JCL: lambda must be finite and >= 0");
  if (!std::isfinite(xi) || xi < 0) throw ContractError("JCL: xi must be finite and >= 0");
  if (tau < 0) throw ContractError("JCL: tau must be >= 0");
  if (max_alternations < 1) throw ContractError("JCL: max_alternations must be >= 1");
  if (fit_iterations < 1) throw ContractError("JCL: fit_iterations must be >= 1");
}

double LinearClassifier::decision(const std::vector<double>& x) const {
  double f = bias;
  for (std::size_t j = 0; j < weights.size(); ++j) f += weights[j] * x[j];
  return f;
}

namespace {

double column_objective(const Features& x, const std::vector<std::size_t>& labels, const std::vector<int>& codes,
                        const LinearClassifier& clf, const JclHyper& h, std::vector<double>* slack) {
  double hinge = 0.0;
  if (slack) slack->assign(x.size(), 0.0);
  for (std::size_t n = 0; n < x.size(); ++n) {
    const int y = codes[labels[n]];
    if (y == 0) continue;
    const double a = std::max(0.0, 1.0 - y * clf.decision(x[n]));
    hinge += a;
    if (slack) (*slack)[n] = a;
  }
  double norm = 0.0;
  for (double w : clf.weights) norm += w * w;
  return h.delta * hinge + 0.5 * h.lambda * norm;
}

}  // namespace

LinearClassifier fit_column(const Features& x, const std::vector<std::size_t>& labels,
                            const std::vector<int>& codes, const JclHyper& h) {
  const std::size_t d = x.empty() ? 0 : x.front().size();
  std::vector<std::size_t> part;
  for (std::size_t n = 0; n < x.size(); ++n)
    if (codes.at(labels[n]) != 0) part.push_back(n);
  LinearClassifier clf{std::vector<double>(d, 0.0), 0.0};
  if (part.empty()) return clf;

  // Diagonal preconditioner from the second moment of each feature, which
  // makes the iterates equivariant under a positive rescaling of the inputs.
  std::vector<double> precond(d, 0.0);
  for (auto n : part)
    for (std::size_t j = 0; j < d; ++j) precond[j] += x[n][j] * x[n][j];
  for (auto& p : precond) {
    p /= static_cast<double>(part.size());
    p = p > 0 ? 1.0 / p : 1.0;
  }

  LinearClassifier best = clf;
  double best_obj = column_objective(x, labels, codes, clf, h, nullptr);
  const double inv_n = 1.0 / static_cast<double>(part.size());
  std::vector<double> grad(d);
  for (std::size_t t = 0; t < h.fit_iterations; ++t) {
    for (std::size_t j = 0; j < d; ++j) grad[j] = h.lambda * clf.weights[j];
    double grad_b = 0.0;
    for (auto n : part) {
      const int y = codes[labels[n]];
      if (y * clf.decision(x[n]) < 1.0) {
        for (std::size_t j = 0; j < d; ++j) grad[j] -= h.delta * y * x[n][j];
        grad_b -= h.delta * y;
      }
    }
    bool zero = grad_b == 0.0;
    for (double g : grad) zero = zero && g == 0.0;
    if (zero) break;
    const double eta = h.step / std::sqrt(static_cast<double>(t) + 1.0);
    for (std::size_t j = 0; j < d; ++j) clf.weights[j] -= eta * precond[j] * grad[j] * inv_n;
    clf.bias -= eta * grad_b * inv_n;
    const double obj = column_objective(x, labels, codes, clf, h, nullptr);
    if (obj < best_obj) {
      best_obj = obj;
      best = clf;
    }
  }
  return best;
}

double jcl_objective(const Features& x, const std::vector<std::size_t>& labels, const CodingMatrix& z,
                     const std::vector<LinearClassifier>& classifiers, const JclHyper& h,
                     std::vector<std::vector<double>>* slacks) {
  double total = 0.0;
  if (slacks) slacks->assign(z.columns(), {});
  for (std::size_t i = 0; i < z.columns(); ++i) {
    std::vector<int> codes(z.classes());
    for (std::size_t c = 0; c < z.classes(); ++c) codes[c] = z.at(c, i);
    total += column_objective(x, labels, codes, classifiers.at(i), h, slacks ? &(*slacks)[i] : nullptr);
  }
  for (int v : z.entries()) total += h.xi * std::abs(v);
  return total;
}

namespace {

std::vector<int> column_codes(const CodingMatrix& z, std::size_t i) {
  std::vector<int> codes(z.classes());
  for (std::size_t c = 0; c < z.classes(); ++c) codes[c] = z.at(c, i);
  return codes;
}

// Column fits keyed by the column's codes, so each distinct binary problem is
// solved once per optimization.
class FitCache {
 public:
  FitCache(const Features& x, const std::vector<std::size_t>& labels, const JclHyper& h) : x_(x), labels_(labels), h_(h) {}

  const LinearClassifier& fit(const std::vector<int>& codes) {
    auto it = cache_.find(codes);
    if (it == cache_.end()) it = cache_.emplace(codes, fit_column(x_, labels_, codes, h_)).first;
    return it->second;
  }

  double objective(const CodingMatrix& z, std::vector<LinearClassifier>* out) {
    std::vector<LinearClassifier> clfs;
    for (std::size_t i = 0; i < z.columns(); ++i) clfs.push_back(fit(column_codes(z, i)));
    const double obj = jcl_objective(x_, labels_, z, clfs, h_);
    if (out) *out = std::move(clfs);
    return obj;
  }

 private:
  const Features& x_;
  const std::vector<std::size_t>& labels_;
  const JclHyper& h_;
  std::map<std::vector<int>, LinearClassifier> cache_;
};

// Code step with classifiers held fixed: walk the hierarchy top-down and, at
// each node, send to the positive side the classes whose samples pay the least
// extra hinge loss there. Node sizes (hence balance and tree shape) are kept.
CodingMatrix reassign_codes(const CodingMatrix& z, const std::vector<LinearClassifier>& clfs, const Features& x,
                            const std::vector<std::size_t>& labels) {
  const Hierarchy tree = build_hierarchy(z);
  std::vector<int> entries(z.classes() * z.columns(), 0);
  const std::size_t l = z.columns();
  std::function<void(std::size_t, const ClassSet&)> visit = [&](std::size_t node, const ClassSet& s) {
    const HierarchyNode& n = tree.nodes[node];
    std::size_t p = 0;
    for (auto k : n.classes) p += z.at(k, n.column) > 0;
    struct Cand {
      double diff;
      bool incumbent;
      std::size_t cls;
    };
    std::vector<Cand> cands;
    for (auto k : s) {
      double plus = 0, minus = 0;
      for (std::size_t i = 0; i < x.size(); ++i) {
        if (labels[i] != k) continue;
        const double f = clfs[n.column].decision(x[i]);
        plus += std::max(0.0, 1.0 - f);
        minus += std::max(0.0, 1.0 + f);
      }
      cands.push_back({plus - minus, z.at(k, n.column) > 0, k});
    }
    std::sort(cands.begin(), cands.end(), [](const Cand& a, const Cand& b) {
      if (a.diff != b.diff) return a.diff < b.diff;
      if (a.incumbent != b.incumbent) return a.incumbent;
      return a.cls < b.cls;
    });
    ClassSet pos, neg;
    for (std::size_t i = 0; i < cands.size(); ++i) (i < p ? pos : neg).push_back(cands[i].cls);
    std::sort(pos.begin(), pos.end());
    std::sort(neg.begin(), neg.end());
    for (auto k : pos) entries[k * l + n.column] = +1;
    for (auto k : neg) entries[k * l + n.column] = -1;
    if (!n.positive.leaf) visit(n.positive.index, pos);
    if (!n.negative.leaf) visit(n.negative.index, neg);
  };
  visit(0, all_classes(z.classes()));
  return CodingMatrix(z.classes(), z.columns(), std::move(entries), z.class_names(), z.tolerance());
}

}  // namespace

double refit_objective(const Features& x, const std::vector<std::size_t>& labels, const CodingMatrix& z,
                       const JclHyper& h, std::vector<LinearClassifier>* classifiers) {
  std::vector<LinearClassifier> clfs;
  for (std::size_t i = 0; i < z.columns(); ++i) clfs.push_back(fit_column(x, labels, column_codes(z, i), h));
  const double obj = jcl_objective(x, labels, z, clfs, h);
  if (classifiers) *classifiers = std::move(clfs);
  return obj;
}

JclSolution jcl_optimize(const Features& x, const std::vector<std::size_t>& labels,
                         std::vector<std::string> class_names, const JclHyper& h) {
  h.validate();
  const std::size_t c = class_names.size();
  if (c < 2) throw ContractError("jcl_optimize: need at least 2 classes");
  if (x.size() != labels.size()) throw DimensionError("jcl_optimize: features and labels differ in length");
  if (x.empty()) throw ContractError("jcl_optimize: no samples");
  std::vector<std::size_t> per_class(c, 0);
  for (std::size_t n = 0; n < x.size(); ++n) {
    if (labels[n] >= c) throw ContractError("jcl_optimize: label " + std::to_string(labels[n]) + " out of range");
    if (x[n].size() != x.front().size()) throw DimensionError("jcl_optimize: feature vectors differ in length");
    ++per_class[labels[n]];
  }
  for (std::size_t k = 0; k < c; ++k)
    if (per_class[k] == 0) throw ContractError("jcl_optimize: class " + std::to_string(k) + " has no samples");

  CodingMatrix z = default_tree_code(class_names, h.tau);
  std::optional<std::vector<CodingMatrix>> candidates;
  try {
    auto all = enumerate_tree_codes(class_names, h.tau, h.exhaustive_limit);
    candidates = std::move(all);
  } catch (const ContractError&) {
    candidates.reset();  // too many codes: fixed-classifier reassignment only
  }

  FitCache cache(x, labels, h);
  std::vector<LinearClassifier> clfs;
  double obj = cache.objective(z, &clfs);
  JclSolution sol;
  sol.objective_trace.push_back(obj);

  for (std::size_t it = 0; it < h.max_alternations; ++it) {
    bool changed = false;
    const CodingMatrix reassigned = reassign_codes(z, clfs, x, labels);
    if (!(reassigned == z)) {
      std::vector<LinearClassifier> trial;
      const double o = cache.objective(reassigned, &trial);
      if (o < obj - h.tolerance) {
        z = reassigned;
        clfs = std::move(trial);
        obj = o;
        changed = true;
      }
    }
    if (candidates) {
      const CodingMatrix* best = nullptr;
      double best_obj = obj;
      for (const auto& cand : *candidates) {
        const double o = cache.objective(cand, nullptr);
        if (o < best_obj - h.tolerance) {
          best_obj = o;
          best = &cand;
        }
      }
      if (best) {
        z = *best;
        obj = cache.objective(z, &clfs);
        changed = true;
      }
    }
    if (!changed) break;
    sol.objective_trace.push_back(obj);
  }

  sol.codes = z;
  sol.classifiers = clfs;
  sol.objective = jcl_objective(x, labels, z, clfs, h, &sol.slacks);
  return sol;
}

}  // namespace hcn::ecoc
