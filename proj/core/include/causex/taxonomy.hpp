#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

namespace causex {

// Is-a tree over class identifiers (e.g. WordNet ids) with model classes
// attached to nodes. Immutable once loaded.
class TaxonomyTree {
 public:
  using NodeId = std::size_t;

  // Throws IngestionError for several parents, cycles, several roots, and
  // mappings to unknown nodes or duplicate class indices.
  static TaxonomyTree build(const std::vector<std::pair<std::string, std::string>>& edges,
                            const std::vector<std::pair<std::uint32_t, std::string>>& mapping);

  std::size_t node_count() const { return names_.size(); }
  std::size_t class_count() const { return class_to_node_.size(); }
  NodeId root() const { return root_; }
  const std::string& name(NodeId node) const { return names_[node]; }
  std::optional<NodeId> parent(NodeId node) const;
  std::size_t depth(NodeId node) const { return depth_[node]; }
  // Throws LookupError for unmapped classes.
  NodeId node_of_class(std::uint32_t class_index) const;
  std::vector<std::uint32_t> classes() const;

  // Edges between the two classes' nodes, via their lowest common ancestor.
  std::size_t shortest_path(std::uint32_t class_a, std::uint32_t class_b) const;
  std::size_t node_distance(NodeId a, NodeId b) const;
  // Largest shortest_path over all pairs of mapped classes.
  std::size_t class_diameter() const;

 private:
  std::vector<std::string> names_;
  std::vector<std::optional<NodeId>> parent_;
  std::vector<std::size_t> depth_;
  NodeId root_ = 0;
  std::unordered_map<std::uint32_t, NodeId> class_to_node_;
};

// Edge file: "parent child" per line. Mapping file: "class_index node" per
// line. Blank lines and lines starting with '#' are ignored.
TaxonomyTree load_taxonomy(const std::filesystem::path& edges_path,
                           const std::filesystem::path& mapping_path);

}  // namespace causex
