#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

namespace hcn::ecoc {

// c x l ternary matrix. Row k is the codeword of class k; column i is one
// binary sub-problem (+1 positive, -1 negative, 0 not participating).
class CodingMatrix {
 public:
  CodingMatrix() = default;
  CodingMatrix(std::size_t classes, std::size_t columns, std::vector<int> entries,
               std::vector<std::string> class_names, int tolerance);

  std::size_t classes() const noexcept { return classes_; }
  std::size_t columns() const noexcept { return columns_; }
  int tolerance() const noexcept { return tolerance_; }
  const std::vector<std::string>& class_names() const noexcept { return names_; }

  int at(std::size_t class_index, std::size_t column) const { return entries_[class_index * columns_ + column]; }
  void set(std::size_t class_index, std::size_t column, int value) { entries_[class_index * columns_ + column] = value; }
  std::vector<int> codeword(std::size_t class_index) const;
  const std::vector<int>& entries() const noexcept { return entries_; }

  // "c l tau", c rows of entries, then c class names (one per line).
  std::string to_text() const;
  static CodingMatrix from_text(const std::string& text);

  friend bool operator==(const CodingMatrix& a, const CodingMatrix& b) {
    return a.classes_ == b.classes_ && a.columns_ == b.columns_ && a.entries_ == b.entries_ &&
           a.tolerance_ == b.tolerance_ && a.names_ == b.names_;
  }

 private:
  std::size_t classes_ = 0;
  std::size_t columns_ = 0;
  std::vector<int> entries_;
  std::vector<std::string> names_;
  int tolerance_ = 1;
};

struct Violation {
  std::optional<std::size_t> column;
  std::string message;
};

// Every violated constraint, each tagged with its column when it has one.
std::vector<Violation> validate_matrix(const CodingMatrix& z);
std::string describe(const std::vector<Violation>& violations);

// Matrix lookup with bounds checking.
int encode(const CodingMatrix& z, std::size_t class_index, std::size_t column);

// Whether a set of `size` classes can be recursively split into singletons
// with every split balanced within `tolerance`.
bool splittable(std::size_t size, int tolerance);

std::vector<std::string> default_class_names(std::size_t classes);

// Deterministic tree code: each node sends its first floor(n/2) classes to the
// positive side. For three classes this is {0} vs {1,2}, then {1} vs {2}.
// Throws InfeasibleError (naming the column) when tolerance rules a split out.
CodingMatrix default_tree_code(std::vector<std::string> class_names, int tolerance);

// All valid tree codes (columns in pre-order) for c classes. Intended for small c.
std::vector<CodingMatrix> enumerate_tree_codes(std::vector<std::string> class_names, int tolerance,
                                               std::size_t limit = 100000);

// Uniformly random split sizes/subsets and a random parent-first column order.
CodingMatrix random_tree_code(std::vector<std::string> class_names, int tolerance, std::mt19937_64& rng);

// ---- hierarchy ------------------------------------------------------------------

struct Child {
  bool leaf = true;
  std::size_t index = 0;  // class index when leaf, node index otherwise
};

struct HierarchyNode {
  std::size_t column = 0;
  std::vector<std::size_t> classes;  // participating classes at this node
  Child positive;
  Child negative;
};

// Nodes stored flat; nodes[0] is the root (column 0).
struct Hierarchy {
  std::vector<HierarchyNode> nodes;
  std::size_t classes = 0;

  const HierarchyNode& root() const { return nodes.front(); }
  // Index of the node evaluating `column`.
  std::size_t node_for_column(std::size_t column) const;
  std::size_t depth() const;
};

Hierarchy build_hierarchy(const CodingMatrix& z);

struct TraversalStep {
  std::size_t column;
  int decision;
};

// Root-to-leaf walk following decider(column) in {-1, +1}.
std::size_t decode(const Hierarchy& tree, const std::function<int(std::size_t)>& decider,
                   std::vector<TraversalStep>* trace = nullptr);

// ---- joint classifier learning -----------------------------------------------

struct JclHyper {
  double delta = 1.0;    // weight of the slack (mismatch) term
  double lambda = 0.01;  // L2 weight on each column classifier
  double xi = 0.001;     // weight on the number of non-zero codes
  int tau = 1;           // column balance tolerance
  std::size_t max_alternations = 20;
  double tolerance = 1e-9;
  std::size_t fit_iterations = 600;
  double step = 1.0;
  // Above this many valid codes only the fixed-classifier reassignment is used.
  std::size_t exhaustive_limit = 2000;

  void validate() const;
};

struct LinearClassifier {
  std::vector<double> weights;
  double bias = 0.0;

  double decision(const std::vector<double>& x) const;
};

struct JclSolution {
  CodingMatrix codes;
  std::vector<LinearClassifier> classifiers;     // one per column
  std::vector<std::vector<double>> slacks;       // [column][sample], 0 for non-participants
  std::vector<double> objective_trace;           // one entry per accepted alternation
  double objective = 0.0;
};

using Features = std::vector<std::vector<double>>;

// Hinge-loss fit of one column on the samples whose class code is non-zero.
LinearClassifier fit_column(const Features& features, const std::vector<std::size_t>& labels,
                            const std::vector<int>& column_codes, const JclHyper& hyper);

// delta * sum(slack) + lambda/2 * sum ||w||^2 + xi * sum |code| for given classifiers.
double jcl_objective(const Features& features, const std::vector<std::size_t>& labels, const CodingMatrix& z,
                     const std::vector<LinearClassifier>& classifiers, const JclHyper& hyper,
                     std::vector<std::vector<double>>* slacks = nullptr);

// Fits every column of `z` and returns the resulting objective.
double refit_objective(const Features& features, const std::vector<std::size_t>& labels, const CodingMatrix& z,
                       const JclHyper& hyper, std::vector<LinearClassifier>* classifiers = nullptr);

// Alternating minimization over classifiers and tree codes.
JclSolution jcl_optimize(const Features& features, const std::vector<std::size_t>& labels,
                         std::vector<std::string> class_names, const JclHyper& hyper);

}  // namespace hcn::ecoc
