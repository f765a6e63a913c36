#include "causex/taxonomy.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "causex/error.hpp"

namespace causex {

namespace {

bool skippable(const std::string& line) {
  const auto first = line.find_first_not_of(" \t\r");
  return first == std::string::npos || line[first] == '#';
}

}  // namespace

TaxonomyTree TaxonomyTree::build(
    const std::vector<std::pair<std::string, std::string>>& edges,
    const std::vector<std::pair<std::uint32_t, std::string>>& mapping) {
  TaxonomyTree tree;
  std::unordered_map<std::string, NodeId> ids;
  auto intern = [&](const std::string& name) {
    auto [it, inserted] = ids.emplace(name, tree.names_.size());
    if (inserted) {
      tree.names_.push_back(name);
      tree.parent_.emplace_back();
    }
    return it->second;
  };

  for (const auto& [parent_name, child_name] : edges) {
    const NodeId parent = intern(parent_name);
    const NodeId child = intern(child_name);
    if (parent == child) throw IngestionError("self-loop on " + child_name);
    auto& slot = tree.parent_[child];
    if (slot && *slot != parent) {
      throw IngestionError("node " + child_name + " has two parents (" +
                           tree.names_[*slot] + ", " + parent_name + ")");
    }
    slot = parent;
  }
  if (tree.names_.empty()) throw IngestionError("taxonomy has no edges");

  std::vector<NodeId> roots;
  for (NodeId n = 0; n < tree.names_.size(); ++n) {
    if (!tree.parent_[n]) roots.push_back(n);
  }
  // Walk every chain once; a chain that revisits a node on the current path is
  // a cycle. Cycles without any root also end up here.
  constexpr std::size_t kUnknown = static_cast<std::size_t>(-1);
  tree.depth_.assign(tree.names_.size(), kUnknown);
  std::vector<std::uint8_t> on_path(tree.names_.size(), 0);
  for (NodeId start = 0; start < tree.names_.size(); ++start) {
    std::vector<NodeId> path;
    NodeId node = start;
    while (tree.depth_[node] == kUnknown) {
      if (on_path[node]) throw IngestionError("cycle through node " + tree.names_[node]);
      on_path[node] = 1;
      path.push_back(node);
      if (!tree.parent_[node]) {
        tree.depth_[node] = 0;
        path.pop_back();
        on_path[node] = 0;
        break;
      }
      node = *tree.parent_[node];
    }
    std::size_t depth = tree.depth_[node];
    for (auto it = path.rbegin(); it != path.rend(); ++it) {
      tree.depth_[*it] = ++depth;
      on_path[*it] = 0;
    }
  }
  if (roots.size() != 1) {
    std::string names;
    for (std::size_t i = 0; i < std::min<std::size_t>(roots.size(), 5); ++i) {
      names += (i ? ", " : "") + tree.names_[roots[i]];
    }
    throw IngestionError("taxonomy must have exactly one root, found " +
                         std::to_string(roots.size()) + (names.empty() ? "" : " (" + names + ")"));
  }
  tree.root_ = roots.front();

  for (const auto& [class_index, node_name] : mapping) {
    const auto it = ids.find(node_name);
    if (it == ids.end()) {
      throw IngestionError("class " + std::to_string(class_index) + " maps to unknown node " +
                           node_name);
    }
    if (!tree.class_to_node_.emplace(class_index, it->second).second) {
      throw IngestionError("class " + std::to_string(class_index) + " is mapped twice");
    }
  }
  if (tree.class_to_node_.empty()) throw IngestionError("class mapping is empty");
  return tree;
}

std::optional<TaxonomyTree::NodeId> TaxonomyTree::parent(NodeId node) const {
  return parent_[node];
}

TaxonomyTree::NodeId TaxonomyTree::node_of_class(std::uint32_t class_index) const {
  const auto it = class_to_node_.find(class_index);
  if (it == class_to_node_.end()) {
    throw LookupError("class " + std::to_string(class_index) + " is not in the taxonomy");
  }
  return it->second;
}

std::vector<std::uint32_t> TaxonomyTree::classes() const {
  std::vector<std::uint32_t> out;
  out.reserve(class_to_node_.size());
  for (const auto& [c, _] : class_to_node_) out.push_back(c);
  std::sort(out.begin(), out.end());
  return out;
}

std::size_t TaxonomyTree::node_distance(NodeId a, NodeId b) const {
  std::size_t steps = 0;
  while (depth_[a] > depth_[b]) {
    a = *parent_[a];
    ++steps;
  }
  while (depth_[b] > depth_[a]) {
    b = *parent_[b];
    ++steps;
  }
  while (a != b) {
    a = *parent_[a];
    b = *parent_[b];
    steps += 2;
  }
  return steps;
}

std::size_t TaxonomyTree::shortest_path(std::uint32_t class_a, std::uint32_t class_b) const {
  return node_distance(node_of_class(class_a), node_of_class(class_b));
}

std::size_t TaxonomyTree::class_diameter() const {
  std::vector<NodeId> nodes;
  for (const auto& [_, node] : class_to_node_) nodes.push_back(node);
  std::sort(nodes.begin(), nodes.end());
  nodes.erase(std::unique(nodes.begin(), nodes.end()), nodes.end());
  std::size_t best = 0;
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    for (std::size_t j = i + 1; j < nodes.size(); ++j) {
      best = std::max(best, node_distance(nodes[i], nodes[j]));
    }
  }
  return best;
}

TaxonomyTree load_taxonomy(const std::filesystem::path& edges_path,
                           const std::filesystem::path& mapping_path) {
  std::ifstream edges_in(edges_path);
  if (!edges_in) throw IngestionError("cannot open edge file " + edges_path.string());
  std::vector<std::pair<std::string, std::string>> edges;
  std::string line;
  for (std::size_t number = 1; std::getline(edges_in, line); ++number) {
    if (skippable(line)) continue;
    std::istringstream fields(line);
    std::string parent, child, extra;
    if (!(fields >> parent >> child) || (fields >> extra)) {
      throw IngestionError(edges_path.string() + ":" + std::to_string(number) +
                           ": expected 'parent child', got '" + line + "'");
    }
    edges.emplace_back(parent, child);
  }

  std::ifstream map_in(mapping_path);
  if (!map_in) throw IngestionError("cannot open class map " + mapping_path.string());
  std::vector<std::pair<std::uint32_t, std::string>> mapping;
  for (std::size_t number = 1; std::getline(map_in, line); ++number) {
    if (skippable(line)) continue;
    std::istringstream fields(line);
    long long index = -1;
    std::string node, extra;
    if (!(fields >> index >> node) || (fields >> extra) || index < 0 || index > 0xffffffffLL) {
      throw IngestionError(mapping_path.string() + ":" + std::to_string(number) +
                           ": expected 'class_index node', got '" + line + "'");
    }
    mapping.emplace_back(static_cast<std::uint32_t>(index), node);
  }
  return TaxonomyTree::build(edges, mapping);
}

}  // namespace causex
