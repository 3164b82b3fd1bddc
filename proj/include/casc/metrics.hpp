#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "casc/core/error.hpp"
#include "casc/core/grid.hpp"
#include "casc/core/percentile.hpp"

namespace casc::metrics {

inline void require_same_shape(const Mask3D& a, const Mask3D& b, const char* what) {
  if (!a.same_shape(b)) fail(ErrorKind::shape, std::string(what) + ": mask shapes differ");
}

// Dice similarity; both empty -> 1, exactly one empty -> 0.
inline double dsc(const Mask3D& a, const Mask3D& b) {
  require_same_shape(a, b, "dsc");
  std::size_t na = 0, nb = 0, both = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const bool x = a[i] != 0, y = b[i] != 0;
    na += x;
    nb += y;
    both += x && y;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

// Set voxels with at least one 6-neighbour that is unset or outside the grid.
inline Mask3D surface(const Mask3D& m) {
  Mask3D out(m.depth(), m.rows(), m.cols(), 0);
  const std::size_t D = m.depth(), R = m.rows(), C = m.cols();
  for (std::size_t d = 0; d < D; ++d) {
    for (std::size_t r = 0; r < R; ++r) {
      for (std::size_t c = 0; c < C; ++c) {
        if (!m(d, r, c)) continue;
        const bool edge = d == 0 || d + 1 == D || r == 0 || r + 1 == R || c == 0 || c + 1 == C;
        if (edge || !m(d - 1, r, c) || !m(d + 1, r, c) || !m(d, r - 1, c) || !m(d, r + 1, c) || !m(d, r, c - 1) ||
            !m(d, r, c + 1)) {
          out(d, r, c) = 1;
        }
      }
    }
  }
  return out;
}

namespace detail {

constexpr double kInf = std::numeric_limits<double>::infinity();

// 1D squared distance transform (lower envelope of parabolas) with sample step `step`.
// f holds squared distances in mm^2 (or +inf); result written back in place.
inline void edt_1d(std::vector<double>& f, double step, std::vector<double>& out, std::vector<std::size_t>& v,
                   std::vector<double>& z) {
  const std::size_t n = f.size();
  out.assign(n, kInf);
  v.assign(n, 0);
  z.assign(n + 1, 0.0);
  std::size_t k = 0;
  bool any = false;
  for (std::size_t q = 0; q < n; ++q) {
    if (f[q] == kInf) continue;
    if (!any) {
      any = true;
      k = 0;
      v[0] = q;
      z[0] = -kInf;
      z[1] = kInf;
      continue;
    }
    const double pq = static_cast<double>(q) * step;
    double s = 0.0;
    while (true) {
      const double pv = static_cast<double>(v[k]) * step;
      s = ((f[q] + pq * pq) - (f[v[k]] + pv * pv)) / (2.0 * (pq - pv));
      if (s <= z[k] && k > 0) {
        --k;
        continue;
      }
      break;
    }
    if (s <= z[k]) {
      // k == 0 and the new parabola dominates everywhere
      v[0] = q;
      z[0] = -kInf;
      z[1] = kInf;
      continue;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kInf;
  }
  if (!any) {
    f = out;
    return;
  }
  k = 0;
  for (std::size_t q = 0; q < n; ++q) {
    const double pq = static_cast<double>(q) * step;
    while (z[k + 1] < pq) ++k;
    const double d = (pq - static_cast<double>(v[k]) * step);
    out[q] = d * d + f[v[k]];
  }
  f = out;
}

}  // namespace detail

// Exact squared Euclidean distance (mm^2) from every voxel to the nearest set voxel of `sites`.
inline Grid3<double> squared_distance_field(const Mask3D& sites, const Spacing& spacing) {
  const std::size_t D = sites.depth(), R = sites.rows(), C = sites.cols();
  Grid3<double> dist(D, R, C, detail::kInf);
  for (std::size_t i = 0; i < sites.size(); ++i) {
    if (sites[i]) dist[i] = 0.0;
  }
  std::vector<double> line, out, z;
  std::vector<std::size_t> v;
  // columns (x)
  line.resize(C);
  for (std::size_t d = 0; d < D; ++d) {
    for (std::size_t r = 0; r < R; ++r) {
      for (std::size_t c = 0; c < C; ++c) line[c] = dist(d, r, c);
      detail::edt_1d(line, spacing.dx, out, v, z);
      for (std::size_t c = 0; c < C; ++c) dist(d, r, c) = line[c];
    }
  }
  // rows (y)
  line.resize(R);
  for (std::size_t d = 0; d < D; ++d) {
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t r = 0; r < R; ++r) line[r] = dist(d, r, c);
      detail::edt_1d(line, spacing.dy, out, v, z);
      for (std::size_t r = 0; r < R; ++r) dist(d, r, c) = line[r];
    }
  }
  // depth (z)
  line.resize(D);
  for (std::size_t r = 0; r < R; ++r) {
    for (std::size_t c = 0; c < C; ++c) {
      for (std::size_t d = 0; d < D; ++d) line[d] = dist(d, r, c);
      detail::edt_1d(line, spacing.dz, out, v, z);
      for (std::size_t d = 0; d < D; ++d) dist(d, r, c) = line[d];
    }
  }
  return dist;
}

// Length of the volume diagonal in mm; the default one-empty HD95 penalty.
inline double diagonal_mm(const Mask3D& m, const Spacing& s) {
  const double z = static_cast<double>(m.depth()) * s.dz;
  const double y = static_cast<double>(m.rows()) * s.dy;
  const double x = static_cast<double>(m.cols()) * s.dx;
  return std::sqrt(z * z + y * y + x * x);
}

// Symmetric surface distances: each surface voxel of a to the nearest surface voxel of b, and vice versa.
inline std::vector<double> symmetric_surface_distances(const Mask3D& a, const Mask3D& b, const Spacing& spacing) {
  const Mask3D sa = surface(a), sb = surface(b);
  const auto to_b = squared_distance_field(sb, spacing);
  const auto to_a = squared_distance_field(sa, spacing);
  std::vector<double> d;
  for (std::size_t i = 0; i < sa.size(); ++i) {
    if (sa[i]) d.push_back(std::sqrt(to_b[i]));
  }
  for (std::size_t i = 0; i < sb.size(); ++i) {
    if (sb[i]) d.push_back(std::sqrt(to_a[i]));
  }
  return d;
}

// 95th nearest-rank percentile of the symmetric surface distance set, in mm.
// Both empty -> 0; exactly one empty -> penalty (default: volume diagonal).
inline double hd95(const Mask3D& a, const Mask3D& b, const Spacing& spacing,
                   std::optional<double> empty_penalty = std::nullopt) {
  require_same_shape(a, b, "hd95");
  const bool ea = popcount(a) == 0, eb = popcount(b) == 0;
  if (ea && eb) return 0.0;
  if (ea || eb) return empty_penalty.value_or(diagonal_mm(a, spacing));
  return percentile_nearest_rank(symmetric_surface_distances(a, b, spacing), 95.0);
}

enum class SizeGroup { tiny, small, medium, large, huge };

inline const char* to_string(SizeGroup g) {
  static constexpr const char* names[] = {"tiny", "small", "medium", "large", "huge"};
  return names[static_cast<int>(g)];
}

inline constexpr std::array<SizeGroup, 5> kAllGroups = {SizeGroup::tiny, SizeGroup::small, SizeGroup::medium,
                                                         SizeGroup::large, SizeGroup::huge};

// Quintile bins with boundaries at the nearest-rank 20/40/60/80 percentiles.
// A size equal to a boundary falls into the lower bin.
inline std::vector<SizeGroup> size_strata(const std::vector<std::size_t>& gt_sizes) {
  if (gt_sizes.empty()) fail(ErrorKind::contract, "size_strata: no volumes");
  std::array<std::size_t, 4> bounds{};
  for (int q = 0; q < 4; ++q) bounds[q] = percentile_nearest_rank(gt_sizes, 20.0 * (q + 1));
  std::vector<SizeGroup> groups;
  groups.reserve(gt_sizes.size());
  for (auto s : gt_sizes) {
    int g = 0;
    while (g < 4 && s > bounds[g]) ++g;
    groups.push_back(static_cast<SizeGroup>(g));
  }
  return groups;
}

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;
  std::size_t n = 0;
};

inline MeanStd mean_std(const std::vector<double>& xs) {
  MeanStd m;
  m.n = xs.size();
  if (xs.empty()) return m;
  double s = 0.0;
  for (double x : xs) s += x;
  m.mean = s / static_cast<double>(xs.size());
  double ss = 0.0;
  for (double x : xs) ss += (x - m.mean) * (x - m.mean);
  m.std = std::sqrt(ss / static_cast<double>(xs.size()));
  return m;
}

struct VolumeMetrics {
  std::string volume_id;
  double dsc = 0.0;
  double hd95_mm = 0.0;
  std::size_t gt_size_voxels = 0;
  SizeGroup size_group = SizeGroup::tiny;
};

struct MetricsReport {
  std::vector<VolumeMetrics> per_volume;
  MeanStd dsc;
  MeanStd hd95;
  std::map<SizeGroup, MeanStd> group_dsc;
  std::map<SizeGroup, MeanStd> group_hd95;
};

struct LabeledMask {
  std::string id;
  Mask3D mask;
  Spacing spacing;
};

// Per-volume DSC/HD95, size quintiles by GT voxel count, population mean/std overall and per group.
inline MetricsReport evaluate(const std::vector<LabeledMask>& predictions, const std::vector<LabeledMask>& ground_truths,
                              std::optional<double> empty_penalty = std::nullopt) {
  std::map<std::string, const LabeledMask*> pred_by_id, gt_by_id;
  for (const auto& p : predictions) pred_by_id[p.id] = &p;
  for (const auto& g : ground_truths) gt_by_id[g.id] = &g;
  std::vector<std::string> missing_pred, missing_gt;
  for (const auto& [id, _] : gt_by_id) {
    if (!pred_by_id.count(id)) missing_pred.push_back(id);
  }
  for (const auto& [id, _] : pred_by_id) {
    if (!gt_by_id.count(id)) missing_gt.push_back(id);
  }
  if (!missing_pred.empty() || !missing_gt.empty() || gt_by_id.empty()) {
    std::ostringstream msg;
    msg << "evaluate: id sets differ;";
    msg << " missing predictions: [";
    for (std::size_t i = 0; i < missing_pred.size(); ++i) msg << (i ? "," : "") << missing_pred[i];
    msg << "] missing ground truths: [";
    for (std::size_t i = 0; i < missing_gt.size(); ++i) msg << (i ? "," : "") << missing_gt[i];
    msg << "]";
    fail(ErrorKind::contract, msg.str());
  }

  MetricsReport report;
  std::vector<std::size_t> sizes;
  for (const auto& [id, gt] : gt_by_id) {
    const auto& pred = *pred_by_id.at(id);
    VolumeMetrics vm;
    vm.volume_id = id;
    vm.dsc = dsc(pred.mask, gt->mask);
    vm.hd95_mm = hd95(pred.mask, gt->mask, gt->spacing, empty_penalty);
    vm.gt_size_voxels = popcount(gt->mask);
    sizes.push_back(vm.gt_size_voxels);
    report.per_volume.push_back(vm);
  }
  const auto groups = size_strata(sizes);
  std::vector<double> all_dsc, all_hd;
  std::map<SizeGroup, std::vector<double>> gd, gh;
  for (std::size_t i = 0; i < report.per_volume.size(); ++i) {
    auto& vm = report.per_volume[i];
    vm.size_group = groups[i];
    all_dsc.push_back(vm.dsc);
    all_hd.push_back(vm.hd95_mm);
    gd[vm.size_group].push_back(vm.dsc);
    gh[vm.size_group].push_back(vm.hd95_mm);
  }
  report.dsc = mean_std(all_dsc);
  report.hd95 = mean_std(all_hd);
  for (auto g : kAllGroups) {
    report.group_dsc[g] = mean_std(gd[g]);
    report.group_hd95[g] = mean_std(gh[g]);
  }
  return report;
}

inline nlohmann::json to_json(const MeanStd& m) { return {{"mean", m.mean}, {"std", m.std}, {"n", m.n}}; }

inline nlohmann::json to_json(const MetricsReport& r) {
  nlohmann::json per = nlohmann::json::array();
  for (const auto& v : r.per_volume) {
    per.push_back({{"volume_id", v.volume_id},
                   {"dsc", v.dsc},
                   {"hd95_mm", v.hd95_mm},
                   {"gt_size_voxels", v.gt_size_voxels},
                   {"size_group", to_string(v.size_group)}});
  }
  nlohmann::json groups = nlohmann::json::object();
  for (auto g : kAllGroups) {
    groups[to_string(g)] = {{"dsc", to_json(r.group_dsc.at(g))}, {"hd95_mm", to_json(r.group_hd95.at(g))}};
  }
  return {{"per_volume", per}, {"aggregate", {{"dsc", to_json(r.dsc)}, {"hd95_mm", to_json(r.hd95)}, {"groups", groups}}}};
}

inline SizeGroup size_group_from(const std::string& s) {
  for (auto g : kAllGroups) {
    if (s == to_string(g)) return g;
  }
  fail(ErrorKind::contract, "unknown size group " + s);
}

inline MeanStd mean_std_from_json(const nlohmann::json& j) {
  return {j.at("mean").get<double>(), j.at("std").get<double>(), j.at("n").get<std::size_t>()};
}

inline MetricsReport report_from_json(const nlohmann::json& j) {
  MetricsReport r;
  for (const auto& v : j.at("per_volume")) {
    r.per_volume.push_back({v.at("volume_id").get<std::string>(), v.at("dsc").get<double>(), v.at("hd95_mm").get<double>(),
                            v.at("gt_size_voxels").get<std::size_t>(),
                            size_group_from(v.at("size_group").get<std::string>())});
  }
  const auto& agg = j.at("aggregate");
  r.dsc = mean_std_from_json(agg.at("dsc"));
  r.hd95 = mean_std_from_json(agg.at("hd95_mm"));
  for (auto g : kAllGroups) {
    const auto& gj = agg.at("groups").at(to_string(g));
    r.group_dsc[g] = mean_std_from_json(gj.at("dsc"));
    r.group_hd95[g] = mean_std_from_json(gj.at("hd95_mm"));
  }
  return r;
}

// Plain-text table: overall DSC(%) and HD95(mm), then DSC(%) per size group.
inline std::string to_table(const MetricsReport& r, const std::string& method = "casc") {
  auto cell = [](const MeanStd& m, double scale) {
    if (m.n == 0) return std::string("-");
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.2f±%.2f", m.mean * scale, m.std * scale);
    return std::string(buf);
  };
  std::vector<std::string> header = {"Method", "DSC(%)", "HD95(mm)", "Tiny", "Small", "Medium", "Large", "Huge"};
  std::vector<std::string> row = {method, cell(r.dsc, 100.0), cell(r.hd95, 1.0)};
  for (auto g : kAllGroups) row.push_back(cell(r.group_dsc.at(g), 100.0));
  std::vector<std::size_t> width(header.size());
  // "±" is two bytes but one column
  auto display = [](const std::string& s) {
    std::size_t n = 0;
    for (unsigned char ch : s) n += (ch & 0xC0) != 0x80;
    return n;
  };
  for (std::size_t i = 0; i < header.size(); ++i) width[i] = std::max(display(header[i]), display(row[i]));
  std::ostringstream os;
  auto emit = [&](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      os << cells[i] << std::string(width[i] - display(cells[i]) + (i + 1 < cells.size() ? 2 : 0), ' ');
    }
    os << '\n';
  };
  emit(header);
  std::size_t total = 0;
  for (auto w : width) total += w + 2;
  os << std::string(total - 2, '-') << '\n';
  emit(row);
  return os.str();
}

}  // namespace casc::metrics
