#include "ltm/ordering.hpp"

#include <algorithm>
#include <cstdint>
#include <limits>
#include <ostream>
#include <stdexcept>

namespace ltm {

Ordering Ordering::from_permutation(std::string name, std::vector<int> perm) {
  const int n = static_cast<int>(perm.size());
  std::vector<int> inv(n, -1);
  for (int k = 0; k < n; ++k) {
    const int site = perm[k];
    if (site < 0 || site >= n || inv[site] != -1) {
      throw std::invalid_argument("ordering '" + name + "' is not a permutation");
    }
    inv[site] = k;
  }
  return Ordering{std::move(name), std::move(perm), std::move(inv)};
}

Ordering lexicographic_ordering(const LatticeGeometry& geom) {
  std::vector<int> perm(geom.volume());
  for (int k = 0; k < geom.volume(); ++k) perm[k] = k;
  return Ordering::from_permutation("lexicographic", std::move(perm));
}

Ordering checkerboard_ordering(const LatticeGeometry& geom) {
  if (geom.extent() % 2 != 0) {
    throw std::invalid_argument("checkerboard ordering needs an even lattice extent, got " +
                                std::to_string(geom.extent()));
  }
  std::vector<int> even, odd;
  for (int site = 0; site < geom.volume(); ++site) {
    int parity = 0;
    for (int c : geom.coords(site)) parity += c;
    (parity % 2 == 0 ? even : odd).push_back(site);
  }
  even.insert(even.end(), odd.begin(), odd.end());
  return Ordering::from_permutation("checkerboard", std::move(even));
}

int periodic_distance_sq(int a, int b, const LatticeGeometry& geom) {
  const auto ca = geom.coords(a);
  const auto cb = geom.coords(b);
  int d2 = 0;
  for (std::size_t k = 0; k < ca.size(); ++k) {
    int d = std::abs(ca[k] - cb[k]);
    d = std::min(d, geom.extent() - d);
    d2 += d * d;
  }
  return d2;
}

Ordering maxmin_ordering(const LatticeGeometry& geom, int start_site) {
  const int n = geom.volume();
  if (start_site < 0 || start_site >= n) {
    throw std::out_of_range("maxmin start site " + std::to_string(start_site) + " out of range");
  }
  std::vector<std::vector<int>> coords(n);
  for (int s = 0; s < n; ++s) coords[s] = geom.coords(s);
  auto dist = [&](int a, int b) {
    int d2 = 0;
    for (int k = 0; k < geom.dim(); ++k) {
      int d = std::abs(coords[a][k] - coords[b][k]);
      d = std::min(d, geom.extent() - d);
      d2 += d * d;
    }
    return d2;
  };

  std::vector<int> perm{start_site};
  std::vector<bool> taken(n, false);
  taken[start_site] = true;
  std::vector<int> min_dist(n, std::numeric_limits<int>::max());
  for (int s = 0; s < n; ++s) min_dist[s] = dist(s, start_site);

  while (static_cast<int>(perm.size()) < n) {
    int best = -1;
    for (int s = 0; s < n; ++s) {
      if (!taken[s] && (best < 0 || min_dist[s] > min_dist[best])) best = s;
    }
    perm.push_back(best);
    taken[best] = true;
    for (int s = 0; s < n; ++s) min_dist[s] = std::min(min_dist[s], dist(s, best));
  }
  return Ordering::from_permutation("maxmin", std::move(perm));
}

Ordering make_ordering(const std::string& name, const LatticeGeometry& geom) {
  if (name == "lexicographic") return lexicographic_ordering(geom);
  if (name == "checkerboard") return checkerboard_ordering(geom);
  if (name == "maxmin") return maxmin_ordering(geom);
  throw std::invalid_argument("unknown ordering '" + name + "'");
}

std::vector<std::vector<int>> stencil_offsets(NeighborhoodSpec spec, int dim) {
  if (spec.order < 1 || spec.order > 3) {
    throw std::invalid_argument("neighbourhood order must be 1, 2 or 3, got " + std::to_string(spec.order));
  }
  std::vector<std::vector<int>> offsets;
  auto planar = [&](int a, int b) {
    for (int mu = 0; mu < dim; ++mu) {
      for (int nu = mu + 1; nu < dim; ++nu) {
        for (int sa : {-1, 1}) {
          for (int sb : {-1, 1}) {
            std::vector<int> o(dim, 0);
            o[mu] = sa * a;
            o[nu] = sb * b;
            offsets.push_back(o);
          }
        }
      }
    }
  };
  for (int mu = 0; mu < dim; ++mu) {
    for (int s : {-1, 1}) {
      std::vector<int> o(dim, 0);
      o[mu] = s;
      offsets.push_back(o);
    }
  }
  if (spec.order >= 2) planar(1, 1);
  if (spec.order >= 3) {
    planar(1, 2);
    planar(2, 1);
  }
  return offsets;
}

std::vector<int> neighborhood(int site, NeighborhoodSpec spec, const LatticeGeometry& geom) {
  std::vector<int> out;
  for (const auto& offset : stencil_offsets(spec, geom.dim())) {
    const int other = geom.shifted(site, offset);
    if (other != site) out.push_back(other);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

long ConditioningSets::total() const {
  long t = 0;
  for (const auto& s : sets) t += static_cast<long>(s.size());
  return t;
}

double ConditioningSets::average() const {
  return sets.empty() ? 0.0 : static_cast<double>(total()) / static_cast<double>(sets.size());
}

ConditioningSets conditioning_sets(const Ordering& ordering, NeighborhoodSpec spec,
                                   const LatticeGeometry& geom) {
  if (ordering.size() != geom.volume()) throw std::invalid_argument("ordering does not match lattice");
  ConditioningSets out;
  out.sets.resize(ordering.size());
  for (int j = 0; j < ordering.size(); ++j) {
    for (int site : neighborhood(ordering.perm[j], spec, geom)) {
      const int label = ordering.inv[site];
      if (label < j) out.sets[j].push_back(label);
    }
    std::sort(out.sets[j].begin(), out.sets[j].end());
  }
  return out;
}

ConditioningSets dense_conditioning_sets(int size) {
  ConditioningSets out;
  out.sets.resize(size);
  for (int j = 0; j < size; ++j) {
    out.sets[j].resize(j);
    for (int i = 0; i < j; ++i) out.sets[j][i] = i;
  }
  return out;
}

ConditioningSets exact_dependency_sets(const Ordering& ordering, const LatticeGeometry& geom) {
  std::vector<std::vector<int>> adjacency(geom.volume());
  for (int s = 0; s < geom.volume(); ++s) {
    for (int t : geom.neighbors(s)) {
      if (t != s) adjacency[s].push_back(t);
    }
  }
  return exact_dependency_sets(ordering, adjacency);
}

ConditioningSets exact_dependency_sets(const Ordering& ordering,
                                       const std::vector<std::vector<int>>& adjacency) {
  const int n = ordering.size();
  if (static_cast<int>(adjacency.size()) != n) throw std::invalid_argument("graph does not match ordering");

  // Adjacency bitsets in label space.
  const int words = (n + 63) / 64;
  std::vector<std::uint64_t> bits(static_cast<std::size_t>(n) * words, 0);
  auto row = [&](int label) { return bits.data() + static_cast<std::size_t>(label) * words; };
  auto set_bit = [&](int a, int b) { row(a)[b / 64] |= std::uint64_t{1} << (b % 64); };
  for (int s = 0; s < n; ++s) {
    for (int t : adjacency[s]) {
      if (t < 0 || t >= n) throw std::invalid_argument("graph edge out of range");
      if (t == s) continue;
      set_bit(ordering.inv[s], ordering.inv[t]);
      set_bit(ordering.inv[t], ordering.inv[s]);
    }
  }

  ConditioningSets out;
  out.sets.resize(n);
  std::vector<std::uint64_t> lower(words);
  for (int k = n - 1; k >= 0; --k) {
    // Remaining neighbours of k are exactly its neighbours with smaller labels.
    for (int w = 0; w < words; ++w) {
      const int lo = w * 64;
      std::uint64_t mask = 0;
      if (k >= lo + 64) {
        mask = ~std::uint64_t{0};
      } else if (k > lo) {
        mask = (std::uint64_t{1} << (k - lo)) - 1;
      }
      lower[w] = row(k)[w] & mask;
    }
    auto& set = out.sets[k];
    for (int w = 0; w < words; ++w) {
      for (std::uint64_t b = lower[w]; b != 0; b &= b - 1) set.push_back(w * 64 + __builtin_ctzll(b));
    }
    // Eliminating k joins its remaining neighbours into a clique.
    for (int i : set) {
      auto* r = row(i);
      for (int w = 0; w < words; ++w) r[w] |= lower[w];
      r[i / 64] &= ~(std::uint64_t{1} << (i % 64));
    }
  }
  return out;
}

std::vector<FillInRow> fill_in_stats(const std::vector<std::string>& orderings, const std::vector<int>& sizes,
                                     int dim) {
  std::vector<FillInRow> rows;
  for (const auto& name : orderings) {
    for (int extent : sizes) {
      if (extent < 3) throw std::invalid_argument("fill-in sizes must be at least 3");
      const LatticeGeometry geom(extent, dim);
      const Ordering ordering = make_ordering(name, geom);
      const auto sparse = conditioning_sets(ordering, NeighborhoodSpec{1}, geom);
      const auto exact = exact_dependency_sets(ordering, geom);
      const double n = geom.volume();
      rows.push_back(FillInRow{name, extent, sparse.average(), exact.average(),
                               static_cast<double>(exact.total() - sparse.total()) / (n * n)});
    }
  }
  return rows;
}

void write_fill_in_csv(std::ostream& out, const std::vector<FillInRow>& rows) {
  out << "ordering,L,avg_sparse,avg_exact,fill_ratio\n";
  const auto old_precision = out.precision(17);
  for (const auto& r : rows) {
    out << r.ordering << ',' << r.extent << ',' << r.avg_sparse << ',' << r.avg_exact << ',' << r.fill_ratio
        << '\n';
  }
  out.precision(old_precision);
}

}  // namespace ltm
