#pragma once

// Seeded synthetic corpus: an ellipsoidal "brain" of near-uniform intensity
// with one or two brighter ellipsoidal tumors. Ground truth is the tumor set.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "casc/core/grid.hpp"
#include "casc/core/rng.hpp"
#include "casc/io/tensor_file.hpp"

namespace casc::pipeline::synthetic {

struct CorpusOptions {
  std::size_t count = 40;
  std::size_t size = 64;
  std::uint64_t seed = 1;
  double noise_sd = 0.01;
  double min_tumor_axis = 4.0;
  double max_tumor_axis = 9.0;
  Spacing spacing;
};

struct Case {
  Volume volume;
  Mask3D ground_truth;
  std::size_t tumors = 0;
};

struct Ellipsoid {
  double cz, cy, cx, az, ay, ax;

  bool contains(double z, double y, double x) const {
    const double a = (z - cz) / az, b = (y - cy) / ay, c = (x - cx) / ax;
    return a * a + b * b + c * c <= 1.0;
  }
};

inline std::string case_id(std::size_t i) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "synth-%03zu", i);
  return buf;
}

inline Case make_case(const CorpusOptions& opt, std::size_t index) {
  Rng rng(mix_seed(opt.seed, "synthetic-case", index));
  const double s = static_cast<double>(opt.size);
  const double mid = (s - 1.0) / 2.0;
  const Ellipsoid brain{mid + rng.uniform(-1.0, 1.0), mid + rng.uniform(-1.0, 1.0), mid + rng.uniform(-1.0, 1.0),
                        0.38 * s * rng.uniform(0.95, 1.05), 0.42 * s * rng.uniform(0.95, 1.05),
                        0.40 * s * rng.uniform(0.95, 1.05)};
  const double tissue = rng.uniform(0.9, 1.1);

  Case c;
  c.tumors = 1 + static_cast<std::size_t>(rng.below(2));
  std::vector<Ellipsoid> tumors;
  std::vector<double> gains;
  for (std::size_t t = 0; t < c.tumors; ++t) {
    double oz, oy, ox;
    do {
      oz = rng.uniform(-1.0, 1.0);
      oy = rng.uniform(-1.0, 1.0);
      ox = rng.uniform(-1.0, 1.0);
    } while (oz * oz + oy * oy + ox * ox > 1.0);
    tumors.push_back({brain.cz + 0.3 * brain.az * oz, brain.cy + 0.3 * brain.ay * oy, brain.cx + 0.3 * brain.ax * ox,
                      rng.uniform(opt.min_tumor_axis, opt.max_tumor_axis),
                      rng.uniform(opt.min_tumor_axis, opt.max_tumor_axis),
                      rng.uniform(opt.min_tumor_axis, opt.max_tumor_axis)});
    gains.push_back(rng.uniform(1.6, 2.0));
  }

  const std::size_t n = opt.size;
  c.volume.id = case_id(index);
  c.volume.spacing = opt.spacing;
  c.volume.voxels = Grid3<float>(n, n, n, 0.0f);
  c.ground_truth = Mask3D(n, n, n, 0);
  for (std::size_t d = 0; d < n; ++d) {
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t col = 0; col < n; ++col) {
        const double z = static_cast<double>(d), y = static_cast<double>(r), x = static_cast<double>(col);
        if (!brain.contains(z, y, x)) continue;
        double value = tissue;
        for (std::size_t t = 0; t < tumors.size(); ++t) {
          if (tumors[t].contains(z, y, x)) {
            value = std::max(value, tissue * gains[t]);
            c.ground_truth(d, r, col) = 1;
          }
        }
        value += opt.noise_sd * rng.normal();
        c.volume.voxels(d, r, col) = static_cast<float>(std::max(value, 1e-3));
      }
    }
  }
  return c;
}

// Writes input/{id}.tnsr and gt/{id}.tnsr under `workdir`.
inline std::vector<std::string> write_corpus(const std::filesystem::path& workdir, const CorpusOptions& opt) {
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < opt.count; ++i) {
    const auto c = make_case(opt, i);
    io::save_tensor(workdir / "input" / (c.volume.id + ".tnsr"), io::to_tensor(c.volume));
    io::save_tensor(workdir / "gt" / (c.volume.id + ".tnsr"),
                    io::to_tensor(c.ground_truth, c.volume.id, c.volume.spacing));
    ids.push_back(c.volume.id);
  }
  return ids;
}

}  // namespace casc::pipeline::synthetic
