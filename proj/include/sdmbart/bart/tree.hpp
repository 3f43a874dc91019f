#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "sdmbart/error.hpp"

namespace sdm::bart {

/// Mutable tree used by the sampler. Nodes live in a slot vector; pruned
/// slots are recycled. An observation goes left when x[var] <= cut.
class Tree {
 public:
  struct Node {
    int var = -1;  // -1 for leaves
    double cut = 0.0;
    int left = -1;
    int right = -1;
    int parent = -1;
    std::size_t depth = 0;
    double mu = 0.0;
    bool live = true;

    bool is_leaf() const { return var < 0; }
  };

  Tree() { nodes_.push_back(Node{}); }

  static constexpr int root() { return 0; }

  const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }
  std::size_t slot_count() const { return nodes_.size(); }

  void set_mu(int leaf, double mu) { nodes_[static_cast<std::size_t>(leaf)].mu = mu; }
  void set_rule(int internal, int var, double cut) {
    auto& n = nodes_[static_cast<std::size_t>(internal)];
    n.var = var;
    n.cut = cut;
  }

  std::vector<int> leaves() const {
    std::vector<int> out;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      if (nodes_[i].live && nodes_[i].is_leaf()) out.push_back(static_cast<int>(i));
    }
    return out;
  }

  /// Internal nodes whose children are both leaves.
  std::vector<int> nogs() const {
    std::vector<int> out;
    for (std::size_t i = 0; i < nodes_.size(); ++i) {
      if (is_nog(static_cast<int>(i))) out.push_back(static_cast<int>(i));
    }
    return out;
  }

  bool is_nog(int id) const {
    const auto& n = node(id);
    return n.live && !n.is_leaf() && node(n.left).is_leaf() && node(n.right).is_leaf();
  }

  std::size_t leaf_count() const { return leaves().size(); }

  std::size_t max_depth() const {
    std::size_t d = 0;
    for (const auto& n : nodes_) {
      if (n.live && n.is_leaf() && n.depth > d) d = n.depth;
    }
    return d;
  }

  /// Turns a leaf into an internal node with two fresh leaf children.
  std::pair<int, int> grow(int leaf, int var, double cut) {
    if (!node(leaf).live || !node(leaf).is_leaf()) throw Error(ErrorKind::parameter, "grow target is not a leaf");
    const int l = allocate(leaf);
    const int r = allocate(leaf);
    auto& n = nodes_[static_cast<std::size_t>(leaf)];
    n.var = var;
    n.cut = cut;
    n.left = l;
    n.right = r;
    return {l, r};
  }

  /// Collapses a nog node back into a leaf.
  void prune(int id) {
    if (!is_nog(id)) throw Error(ErrorKind::parameter, "prune target must have two leaf children");
    auto& n = nodes_[static_cast<std::size_t>(id)];
    release(n.left);
    release(n.right);
    n.var = -1;
    n.left = -1;
    n.right = -1;
    n.mu = 0.0;
  }

  int find_leaf(std::span<const double> x) const { return find_leaf(x.data()); }
  int find_leaf(const double* x) const {
    int id = root();
    while (!node(id).is_leaf()) {
      const auto& n = node(id);
      id = x[n.var] <= n.cut ? n.left : n.right;
    }
    return id;
  }

  double evaluate(const double* x) const { return node(find_leaf(x)).mu; }

  /// Structural equality (rules and shape; leaf values ignored).
  bool same_structure(const Tree& other) const { return same_structure(root(), other, other.root()); }

 private:
  bool same_structure(int a, const Tree& other, int b) const {
    const auto& na = node(a);
    const auto& nb = other.node(b);
    if (na.is_leaf() || nb.is_leaf()) return na.is_leaf() && nb.is_leaf();
    return na.var == nb.var && na.cut == nb.cut && same_structure(na.left, other, nb.left) &&
           same_structure(na.right, other, nb.right);
  }

  int allocate(int parent) {
    Node n;
    n.parent = parent;
    n.depth = node(parent).depth + 1;
    if (!free_.empty()) {
      const int id = free_.back();
      free_.pop_back();
      nodes_[static_cast<std::size_t>(id)] = n;
      return id;
    }
    nodes_.push_back(n);
    return static_cast<int>(nodes_.size() - 1);
  }

  void release(int id) {
    nodes_[static_cast<std::size_t>(id)].live = false;
    free_.push_back(id);
  }

  std::vector<Node> nodes_;
  std::vector<int> free_;
};

/// Compact node of a stored draw. `value` is the cut for internal nodes and
/// mu for leaves; child indices are absolute positions in Forest::nodes.
struct FlatNode {
  std::int32_t var = -1;
  std::int32_t left = -1;
  std::int32_t right = -1;
  double value = 0.0;

  bool operator==(const FlatNode&) const = default;
};

/// One posterior draw of the ensemble, stored contiguously.
struct Forest {
  std::vector<FlatNode> nodes;
  std::vector<std::uint32_t> roots;

  std::size_t tree_count() const { return roots.size(); }

  double evaluate_tree(std::size_t j, const double* x) const {
    std::size_t id = roots[j];
    while (nodes[id].var >= 0) {
      const auto& n = nodes[id];
      id = static_cast<std::size_t>(x[n.var] <= n.value ? n.left : n.right);
    }
    return nodes[id].value;
  }

  /// Sum over trees, accumulated in tree order.
  double evaluate(const double* x) const {
    double sum = 0.0;
    for (std::size_t j = 0; j < roots.size(); ++j) sum += evaluate_tree(j, x);
    return sum;
  }
  double evaluate(std::span<const double> x) const { return evaluate(x.data()); }

  void append(const Tree& tree) {
    roots.push_back(static_cast<std::uint32_t>(nodes.size()));
    append_subtree(tree, Tree::root());
  }

  /// Variables used by any split.
  std::vector<bool> used_variables(std::size_t n_vars) const {
    std::vector<bool> used(n_vars, false);
    for (const auto& n : nodes) {
      if (n.var >= 0 && static_cast<std::size_t>(n.var) < n_vars) used[static_cast<std::size_t>(n.var)] = true;
    }
    return used;
  }

  bool operator==(const Forest&) const = default;

 private:
  std::size_t append_subtree(const Tree& tree, int id) {
    const std::size_t pos = nodes.size();
    const auto& n = tree.node(id);
    nodes.push_back(FlatNode{n.var, -1, -1, n.is_leaf() ? n.mu : n.cut});
    if (!n.is_leaf()) {
      const auto l = append_subtree(tree, n.left);
      const auto r = append_subtree(tree, n.right);
      nodes[pos].left = static_cast<std::int32_t>(l);
      nodes[pos].right = static_cast<std::int32_t>(r);
    }
    return pos;
  }
};

}  // namespace sdm::bart
