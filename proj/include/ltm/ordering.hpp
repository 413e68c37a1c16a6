#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "ltm/lattice.hpp"

namespace ltm {

/// A labelling of lattice sites. perm[k] is the site carrying label k and
/// inv[site] is that site's label.
struct Ordering {
  std::string name;
  std::vector<int> perm;
  std::vector<int> inv;

  /// Builds the inverse and checks that `perm` is a bijection on {0..N-1}.
  static Ordering from_permutation(std::string name, std::vector<int> perm);

  int size() const { return static_cast<int>(perm.size()); }
};

Ordering lexicographic_ordering(const LatticeGeometry& geom);

/// Even-parity sites first, then odd-parity sites, each in row-major order.
/// Requires an even extent.
Ordering checkerboard_ordering(const LatticeGeometry& geom);

/// Greedy farthest-point labelling under the periodic squared Euclidean
/// distance, ties broken by the smallest site index.
Ordering maxmin_ordering(const LatticeGeometry& geom, int start_site = 0);

/// Dispatches on "lexicographic", "checkerboard" or "maxmin".
Ordering make_ordering(const std::string& name, const LatticeGeometry& geom);

/// Squared Euclidean distance between two sites on the torus.
int periodic_distance_sq(int a, int b, const LatticeGeometry& geom);

/// Cumulative stencil order: 1 nearest neighbours, 2 adds diagonals,
/// 3 adds knight moves.
struct NeighborhoodSpec {
  int order = 1;
};

/// Lattice offsets making up the stencil of the given order.
std::vector<std::vector<int>> stencil_offsets(NeighborhoodSpec spec, int dim);

/// Sorted distinct sites in the stencil around `site` (excluding `site`).
std::vector<int> neighborhood(int site, NeighborhoodSpec spec, const LatticeGeometry& geom);

/// For each label j, the sorted earlier labels that component j conditions on.
struct ConditioningSets {
  std::vector<std::vector<int>> sets;

  int size() const { return static_cast<int>(sets.size()); }
  long total() const;
  double average() const;
};

/// sets[j] = labels of stencil neighbours of perm[j] that are smaller than j.
ConditioningSets conditioning_sets(const Ordering& ordering, NeighborhoodSpec spec,
                                   const LatticeGeometry& geom);

/// sets[j] = {0, ..., j-1}.
ConditioningSets dense_conditioning_sets(int size);

/// Dependency sets of the exact Knothe-Rosenblatt conditionals, from symbolic
/// elimination of labels in reverse order on the nearest-neighbour graph.
ConditioningSets exact_dependency_sets(const Ordering& ordering, const LatticeGeometry& geom);

/// Same, for an arbitrary undirected graph given as site adjacency lists.
ConditioningSets exact_dependency_sets(const Ordering& ordering,
                                       const std::vector<std::vector<int>>& adjacency);

struct FillInRow {
  std::string ordering;
  int extent = 0;
  double avg_sparse = 0.0;
  double avg_exact = 0.0;
  double fill_ratio = 0.0;
};

/// One row per (ordering, L) with order-1 sparse and exact set statistics.
std::vector<FillInRow> fill_in_stats(const std::vector<std::string>& orderings, const std::vector<int>& sizes,
                                     int dim = 2);

void write_fill_in_csv(std::ostream& out, const std::vector<FillInRow>& rows);

}  // namespace ltm
