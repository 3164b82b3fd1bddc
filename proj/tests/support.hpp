#pragma once

// Random generators and brute-force reference implementations used by the
// unit and acceptance tests. The references are written from the definitions,
// not from the library code, and trade speed for obviousness.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "casc/casc.hpp"

namespace casc::testkit {

// ---- generators ----

inline Mask3D random_mask3(std::mt19937_64& g, std::size_t d, std::size_t r, std::size_t c, double density) {
  std::bernoulli_distribution on(density);
  Mask3D m(d, r, c, 0);
  for (auto& v : m.values()) v = on(g) ? 1 : 0;
  return m;
}

// A few random boxes: blob-like masks with real interiors.
inline Mask3D random_blobs3(std::mt19937_64& g, std::size_t d, std::size_t r, std::size_t c, int blobs) {
  Mask3D m(d, r, c, 0);
  for (int b = 0; b < blobs; ++b) {
    std::uniform_int_distribution<std::size_t> zd(0, d - 1), rd(0, r - 1), cd(0, c - 1);
    std::size_t z0 = zd(g), z1 = zd(g), r0 = rd(g), r1 = rd(g), c0 = cd(g), c1 = cd(g);
    if (z0 > z1) std::swap(z0, z1);
    if (r0 > r1) std::swap(r0, r1);
    if (c0 > c1) std::swap(c0, c1);
    for (std::size_t z = z0; z <= z1; ++z)
      for (std::size_t y = r0; y <= r1; ++y)
        for (std::size_t x = c0; x <= c1; ++x) m(z, y, x) = 1;
  }
  return m;
}

inline Mask2D random_mask2(std::mt19937_64& g, std::size_t r, std::size_t c, double density) {
  std::bernoulli_distribution on(density);
  Mask2D m(r, c, 0);
  for (auto& v : m.values()) v = on(g) ? 1 : 0;
  return m;
}

inline Grid2<float> random_grid(std::mt19937_64& g, std::size_t r, std::size_t c, float lo, float hi) {
  std::uniform_real_distribution<float> u(lo, hi);
  Grid2<float> out(r, c, 0.0f);
  for (auto& v : out.values()) v = u(g);
  return out;
}

inline std::vector<double> random_vector(std::mt19937_64& g, std::size_t n) {
  std::normal_distribution<double> nd(0.0, 1.0);
  std::vector<double> v(n);
  for (auto& x : v) x = nd(g);
  return v;
}

// ---- oracles ----

inline std::size_t oracle_count(const Mask3D& m) {
  std::size_t n = 0;
  for (std::size_t z = 0; z < m.depth(); ++z)
    for (std::size_t y = 0; y < m.rows(); ++y)
      for (std::size_t x = 0; x < m.cols(); ++x) n += m(z, y, x) != 0;
  return n;
}

// 2|A∩B| / (|A|+|B|) over explicit coordinate sets.
inline double oracle_dsc(const Mask3D& a, const Mask3D& b) {
  std::set<std::size_t> A, B;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i]) A.insert(i);
    if (b[i]) B.insert(i);
  }
  if (A.empty() && B.empty()) return 1.0;
  std::vector<std::size_t> inter;
  std::set_intersection(A.begin(), A.end(), B.begin(), B.end(), std::back_inserter(inter));
  return 2.0 * static_cast<double>(inter.size()) / static_cast<double>(A.size() + B.size());
}

struct Voxel {
  long z, y, x;
};

inline std::vector<Voxel> oracle_surface(const Mask3D& m) {
  const long D = static_cast<long>(m.depth()), R = static_cast<long>(m.rows()), C = static_cast<long>(m.cols());
  auto at = [&](long z, long y, long x) {
    if (z < 0 || y < 0 || x < 0 || z >= D || y >= R || x >= C) return false;
    return m(static_cast<std::size_t>(z), static_cast<std::size_t>(y), static_cast<std::size_t>(x)) != 0;
  };
  static constexpr long off[6][3] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}, {0, 0, 1}, {0, 0, -1}};
  std::vector<Voxel> out;
  for (long z = 0; z < D; ++z)
    for (long y = 0; y < R; ++y)
      for (long x = 0; x < C; ++x) {
        if (!at(z, y, x)) continue;
        bool border = false;
        for (const auto& o : off) border = border || !at(z + o[0], y + o[1], x + o[2]);
        if (border) out.push_back({z, y, x});
      }
  return out;
}

// All-pairs surface distances, then the nearest-rank 95th percentile by sorting.
inline double oracle_hd95(const Mask3D& a, const Mask3D& b, const Spacing& s, double penalty) {
  const auto sa = oracle_surface(a), sb = oracle_surface(b);
  if (sa.empty() && sb.empty()) return 0.0;
  if (sa.empty() || sb.empty()) return penalty;
  auto nearest = [&](const Voxel& p, const std::vector<Voxel>& set) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto& q : set) {
      const double dz = (p.z - q.z) * s.dz, dy = (p.y - q.y) * s.dy, dx = (p.x - q.x) * s.dx;
      best = std::min(best, std::sqrt(dz * dz + dy * dy + dx * dx));
    }
    return best;
  };
  std::vector<double> d;
  for (const auto& p : sa) d.push_back(nearest(p, sb));
  for (const auto& p : sb) d.push_back(nearest(p, sa));
  std::sort(d.begin(), d.end());
  const auto rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(d.size())));
  return d[std::max<std::size_t>(rank, 1) - 1];
}

// Sorted-array nearest rank: the smallest value with at least p% of the data at or below it.
inline double oracle_percentile(std::vector<double> xs, double p) {
  std::sort(xs.begin(), xs.end());
  for (std::size_t k = 1; k <= xs.size(); ++k) {
    if (100.0 * static_cast<double>(k) >= p * static_cast<double>(xs.size()) - 1e-9) return xs[k - 1];
  }
  return xs.back();
}

// Q(i,j) = sum_k mean(G_k) * max(0, G_k(i,j)), one pixel at a time.
inline Grid2<double> oracle_layer_cam(const std::vector<Grid2<float>>& grads) {
  const std::size_t R = grads[0].rows(), C = grads[0].cols();
  Grid2<double> q(R, C, 0.0);
  for (std::size_t i = 0; i < R; ++i) {
    for (std::size_t j = 0; j < C; ++j) {
      double acc = 0.0;
      for (const auto& g : grads) {
        double w = 0.0;
        for (std::size_t a = 0; a < R; ++a)
          for (std::size_t b = 0; b < C; ++b) w += g(a, b);
        w /= static_cast<double>(R * C);
        acc += w * std::max(0.0, static_cast<double>(g(i, j)));
      }
      q(i, j) = acc;
    }
  }
  return q;
}

inline std::vector<double> oracle_softmax_of_cosines(const std::vector<double>& f, const std::vector<std::vector<double>>& gs) {
  std::vector<double> e;
  double total = 0.0;
  for (const auto& g : gs) {
    double dot = 0.0, nf = 0.0, ng = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) {
      dot += f[i] * g[i];
      nf += f[i] * f[i];
      ng += g[i] * g[i];
    }
    e.push_back(std::exp(dot / std::sqrt(nf * ng)));
    total += e.back();
  }
  for (auto& x : e) x /= total;
  return e;
}

// Connected components via union-find over 4-neighbours; returns component pixel lists.
inline std::vector<std::vector<std::size_t>> oracle_components(const Mask2D& m) {
  const std::size_t n = m.size(), C = m.cols();
  std::vector<std::size_t> parent(n);
  for (std::size_t i = 0; i < n; ++i) parent[i] = i;
  auto find = [&](std::size_t i) {
    while (parent[i] != i) i = parent[i] = parent[parent[i]];
    return i;
  };
  for (std::size_t i = 0; i < n; ++i) {
    if (!m[i]) continue;
    if (i % C + 1 < C && m[i + 1]) parent[find(i)] = find(i + 1);
    if (i + C < n && m[i + C]) parent[find(i)] = find(i + C);
  }
  std::map<std::size_t, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < n; ++i) {
    if (m[i]) groups[find(i)].push_back(i);
  }
  std::vector<std::vector<std::size_t>> out;
  for (auto& [_, v] : groups) out.push_back(std::move(v));
  return out;
}

// Align-corners bilinear sample of a grid at fractional (y, x).
inline double oracle_bilinear(const Grid2<double>& g, double y, double x) {
  const std::size_t y0 = static_cast<std::size_t>(std::floor(y)), x0 = static_cast<std::size_t>(std::floor(x));
  const std::size_t y1 = std::min(y0 + 1, g.rows() - 1), x1 = std::min(x0 + 1, g.cols() - 1);
  const double fy = y - static_cast<double>(y0), fx = x - static_cast<double>(x0);
  return (1 - fy) * (1 - fx) * g(y0, x0) + (1 - fy) * fx * g(y0, x1) + fy * (1 - fx) * g(y1, x0) + fy * fx * g(y1, x1);
}

inline double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  auto ranks = [](const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(), [&](std::size_t x, std::size_t y) { return v[x] < v[y]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
      std::size_t j = i;
      while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
      const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
      for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
      i = j + 1;
    }
    return r;
  };
  const auto ra = ranks(a), rb = ranks(b);
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= n;
  mb /= n;
  double cov = 0, va = 0, vb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    cov += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  return cov / std::sqrt(va * vb);
}

// Fresh per-test scratch directory under the build tree.
inline std::filesystem::path scratch_dir(const std::string& name) {
  const auto p = std::filesystem::temp_directory_path() / ("casc-test-" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

}  // namespace casc::testkit
