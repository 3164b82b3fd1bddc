#include <gtest/gtest.h>

#include <random>

#include "support.hpp"

using namespace casc;
using namespace casc::metrics;
namespace t = casc::testkit;

TEST(Dsc, Examples) {
  Mask3D a(1, 2, 4, 0), b(1, 2, 4, 0);
  EXPECT_EQ(dsc(a, b), 1.0);
  a[0] = 1;
  EXPECT_EQ(dsc(a, b), 0.0);
  for (int i = 0; i < 6; ++i) a[i] = 1;
  b[0] = b[1] = 1;
  EXPECT_DOUBLE_EQ(dsc(a, b), 0.5);
  EXPECT_DOUBLE_EQ(dsc(a, a), 1.0);
  try {
    dsc(a, Mask3D(1, 1, 1, 0));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::shape);
  }
}

TEST(Dsc, PropertiesAgainstOracle) {
  std::mt19937_64 g(41);
  for (int k = 0; k < 100; ++k) {
    const auto a = t::random_mask3(g, 5, 6, 7, 0.3), b = t::random_mask3(g, 5, 6, 7, 0.3);
    EXPECT_EQ(dsc(a, b), t::oracle_dsc(a, b));
    EXPECT_EQ(dsc(a, b), dsc(b, a));
    // translation of both masks inside a larger grid
    Mask3D A(8, 8, 9, 0), B(8, 8, 9, 0);
    for (std::size_t z = 0; z < 5; ++z)
      for (std::size_t y = 0; y < 6; ++y)
        for (std::size_t x = 0; x < 7; ++x) {
          A(z + 2, y + 1, x + 2) = a(z, y, x);
          B(z + 2, y + 1, x + 2) = b(z, y, x);
        }
    EXPECT_EQ(dsc(A, B), dsc(a, b));
  }
}

TEST(Surface, InteriorVoxelsExcluded) {
  Mask3D cube(5, 5, 5, 0);
  for (std::size_t z = 1; z < 4; ++z)
    for (std::size_t y = 1; y < 4; ++y)
      for (std::size_t x = 1; x < 4; ++x) cube(z, y, x) = 1;
  const auto s = surface(cube);
  EXPECT_EQ(popcount(s), 26u);
  EXPECT_EQ(s(2, 2, 2), 0);
  // set voxels on the grid border count as surface
  EXPECT_EQ(popcount(surface(Mask3D(3, 3, 3, 1))), 26u);
}

TEST(Hd95, Examples) {
  Mask3D a(3, 3, 8, 0), b(3, 3, 8, 0);
  EXPECT_EQ(hd95(a, b, {}), 0.0);
  a(1, 1, 1) = 1;
  b(1, 1, 4) = 1;
  EXPECT_DOUBLE_EQ(hd95(a, b, {1, 1, 2}), 6.0);
  EXPECT_EQ(hd95(a, a, {}), 0.0);
  const Mask3D empty(3, 3, 8, 0);
  EXPECT_DOUBLE_EQ(hd95(a, empty, {1, 1, 1}), std::sqrt(9.0 + 9.0 + 64.0));
  EXPECT_DOUBLE_EQ(hd95(empty, a, {1, 1, 1}, 12.5), 12.5);
}

TEST(Hd95, MatchesBruteForce) {
  std::mt19937_64 g(43);
  for (int k = 0; k < 120; ++k) {
    std::uniform_int_distribution<std::size_t> n(2, 12);
    const std::size_t D = n(g), R = n(g), C = n(g);
    const Spacing s{std::uniform_real_distribution<double>(0.5, 3)(g), std::uniform_real_distribution<double>(0.5, 3)(g),
                    std::uniform_real_distribution<double>(0.5, 3)(g)};
    const auto a = k % 2 ? t::random_mask3(g, D, R, C, 0.2) : t::random_blobs3(g, D, R, C, 2);
    const auto b = k % 3 ? t::random_mask3(g, D, R, C, 0.1) : t::random_blobs3(g, D, R, C, 1);
    EXPECT_NEAR(hd95(a, b, s), t::oracle_hd95(a, b, s, diagonal_mm(a, s)), 1e-9);
  }
}

TEST(Hd95, SymmetricAndScalesWithSpacing) {
  std::mt19937_64 g(47);
  for (int k = 0; k < 50; ++k) {
    const auto a = t::random_blobs3(g, 8, 9, 10, 2), b = t::random_blobs3(g, 8, 9, 10, 2);
    const Spacing s{1.0, 0.7, 1.3}, s2{2.0, 1.4, 2.6};
    const double h = hd95(a, b, s);
    EXPECT_EQ(h, hd95(b, a, s));
    EXPECT_NEAR(hd95(a, b, s2), 2.0 * h, 1e-9);
  }
}

TEST(SizeStrata, Examples) {
  const auto ten = size_strata({10, 1, 9, 2, 8, 3, 7, 4, 6, 5});
  std::map<SizeGroup, int> count;
  for (auto g : ten) count[g]++;
  for (auto g : kAllGroups) EXPECT_EQ(count[g], 2);
  EXPECT_EQ(ten[1], SizeGroup::tiny);
  EXPECT_EQ(ten[0], SizeGroup::huge);

  EXPECT_EQ(size_strata({42}), std::vector<SizeGroup>{SizeGroup::tiny});
  for (auto g : size_strata({5, 5, 5, 5})) EXPECT_EQ(g, SizeGroup::tiny);
}

TEST(SizeStrata, PermutationInvariant) {
  std::mt19937_64 g(53);
  for (int k = 0; k < 30; ++k) {
    std::vector<std::size_t> sizes(1 + g() % 30);
    for (auto& s : sizes) s = g() % 50;
    const auto base = size_strata(sizes);
    std::vector<std::size_t> idx(sizes.size());
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
    std::shuffle(idx.begin(), idx.end(), g);
    std::vector<std::size_t> perm;
    for (auto i : idx) perm.push_back(sizes[i]);
    const auto pg = size_strata(perm);
    for (std::size_t i = 0; i < idx.size(); ++i) EXPECT_EQ(pg[i], base[idx[i]]);
  }
}

namespace {
LabeledMask box_mask(const std::string& id, std::size_t n, std::size_t lo, std::size_t hi) {
  Mask3D m(n, n, n, 0);
  for (std::size_t z = lo; z <= hi; ++z)
    for (std::size_t y = lo; y <= hi; ++y)
      for (std::size_t x = lo; x <= hi; ++x) m(z, y, x) = 1;
  return {id, m, {}};
}
}  // namespace

TEST(Evaluate, PerfectAndEmpty) {
  std::vector<LabeledMask> gts;
  for (int i = 0; i < 5; ++i) gts.push_back(box_mask("v" + std::to_string(i), 8, 1, 1 + i));
  const auto perfect = evaluate(gts, gts);
  EXPECT_DOUBLE_EQ(perfect.dsc.mean, 1.0);
  EXPECT_DOUBLE_EQ(perfect.hd95.mean, 0.0);

  std::vector<LabeledMask> empty;
  for (const auto& g : gts) empty.push_back({g.id, Mask3D(8, 8, 8, 0), {}});
  const auto none = evaluate(empty, gts, 99.0);
  EXPECT_DOUBLE_EQ(none.dsc.mean, 0.0);
  EXPECT_DOUBLE_EQ(none.hd95.mean, 99.0);
}

TEST(Evaluate, HandComputedReport) {
  // six GT cubes of edge 1..6; predictions are the same cube shifted by one voxel along x
  std::vector<LabeledMask> gts, preds;
  std::vector<double> dscs, hds;
  for (std::size_t e = 1; e <= 6; ++e) {
    auto gt = box_mask("c" + std::to_string(e), 10, 1, e);
    Mask3D p(10, 10, 10, 0);
    for (std::size_t z = 1; z <= e; ++z)
      for (std::size_t y = 1; y <= e; ++y)
        for (std::size_t x = 2; x <= e + 1; ++x) p(z, y, x) = 1;
    preds.push_back({gt.id, p, {}});
    gts.push_back(gt);
    dscs.push_back(2.0 * static_cast<double>((e - 1) * e * e) / static_cast<double>(2 * e * e * e));
    hds.push_back(1.0);  // every surface voxel has a surface voxel of the other cube at distance <= 1
  }
  const auto r = evaluate(preds, gts);
  double m = 0;
  for (double d : dscs) m += d / 6.0;
  double v = 0;
  for (double d : dscs) v += (d - m) * (d - m) / 6.0;
  EXPECT_NEAR(r.dsc.mean, m, 1e-12);
  EXPECT_NEAR(r.dsc.std, std::sqrt(v), 1e-12);
  EXPECT_NEAR(r.hd95.mean, 1.0, 1e-12);
  // sizes 1, 8, 27, 64, 125, 216: boundaries at ranks 2,3,4,5 -> (tiny x2, small, medium, large, huge)
  EXPECT_EQ(r.group_dsc.at(SizeGroup::tiny).n, 2u);
  EXPECT_EQ(r.group_dsc.at(SizeGroup::huge).n, 1u);
  EXPECT_NEAR(r.group_dsc.at(SizeGroup::huge).mean, dscs[5], 1e-12);

  const auto j = to_json(r);
  EXPECT_EQ(j["per_volume"].size(), 6u);
  const auto back = report_from_json(j);
  EXPECT_EQ(to_json(back), j);
  const auto table = to_table(r);
  EXPECT_NE(table.find("DSC(%)"), std::string::npos);
  EXPECT_NE(table.find("Huge"), std::string::npos);
}

TEST(Evaluate, IdMismatchListsDifference) {
  auto a = box_mask("a", 4, 0, 1), b = box_mask("b", 4, 0, 1);
  try {
    evaluate({a}, {b});
    FAIL();
  } catch (const Error& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("missing predictions: [b]"), std::string::npos) << msg;
    EXPECT_NE(msg.find("missing ground truths: [a]"), std::string::npos) << msg;
  }
}

TEST(S3f, Scores) {
  Mask3D a(1, 1, 8, 0), b(1, 1, 8, 0);
  EXPECT_EQ(s3f::score(a, b), 1.0);
  for (int i = 0; i < 4; ++i) a[i] = 1;
  EXPECT_EQ(s3f::score(a, a), 1.0);
  for (int i = 4; i < 8; ++i) b[i] = 1;
  EXPECT_EQ(s3f::score(a, b), 0.0);
  Mask3D c(1, 1, 8, 0);
  c[2] = c[3] = c[4] = c[5] = 1;
  EXPECT_DOUBLE_EQ(s3f::score(a, c), 0.5);
  EXPECT_THROW(s3f::score(a, Mask3D(1, 1, 7, 0)), Error);
}

namespace {
s3f::TrainingPool pool_of(const std::vector<double>& scores) {
  s3f::TrainingPool p;
  p.stage = s3f::PoolStage::D3;
  for (std::size_t i = 0; i < scores.size(); ++i) p.entries.push_back({"v" + std::to_string(i), "p/v" + std::to_string(i), scores[i], true});
  return p;
}
}  // namespace

TEST(S3f, FilterExamples) {
  const auto ten = pool_of({0.1, 0.9, 0.5, 0.3, 0.7, 0.2, 0.8, 0.4, 0.6, 0.95});
  const auto f = s3f::filter_pool(ten, 20);
  std::size_t kept = 0;
  for (const auto& e : f.entries) {
    kept += e.retained;
    EXPECT_EQ(e.retained, *e.score > 0.2);
  }
  EXPECT_EQ(kept, 8u);
  EXPECT_EQ(f.stage, s3f::PoolStage::D4);
  EXPECT_DOUBLE_EQ(*f.threshold, 0.2);

  for (const auto& e : s3f::filter_pool(ten, 0).entries) EXPECT_TRUE(e.retained);
  for (const auto& e : s3f::filter_pool(pool_of({0.5, 0.5, 0.5}), 20).entries) EXPECT_TRUE(e.retained);

  try {
    s3f::filter_pool(pool_of({}), 20);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::empty_pool);
  }
}

TEST(S3f, FilterProperties) {
  std::mt19937_64 g(59);
  for (int k = 0; k < 50; ++k) {
    std::vector<double> scores(3 + g() % 30);
    for (auto& s : scores) s = static_cast<double>(g() % 20) / 20.0;
    const auto pool = pool_of(scores);
    std::size_t prev = scores.size() + 1;
    for (double beta : {0.0, 10.0, 20.0, 35.0, 50.0, 80.0, 99.0}) {
      const auto f = s3f::filter_pool(pool, beta);
      std::size_t kept = 0;
      for (std::size_t i = 0; i < f.entries.size(); ++i) {
        EXPECT_EQ(f.entries[i].score, pool.entries[i].score);
        EXPECT_EQ(f.entries[i].pseudo_label, pool.entries[i].pseudo_label);
        kept += f.entries[i].retained;
        for (std::size_t j = 0; j < f.entries.size(); ++j) {
          if (f.entries[i].retained && *f.entries[j].score >= *f.entries[i].score) {
            EXPECT_TRUE(f.entries[j].retained);
          }
        }
      }
      EXPECT_LE(kept, prev);
      prev = kept;
    }
  }
}

TEST(S3f, ManifestRoundTrip) {
  const auto f = s3f::filter_pool(pool_of({0.1, 0.9, 0.5}), 20);
  const auto text = s3f::to_manifest(f);
  EXPECT_EQ(std::count(text.begin(), text.end(), '\n'), 3);
  const auto back = s3f::from_manifest(text);
  ASSERT_EQ(back.entries.size(), 3u);
  EXPECT_EQ(back.entries[1].volume_id, "v1");
  EXPECT_EQ(back.entries[0].retained, false);
  EXPECT_EQ(back.entries[2].score, 0.5);
  EXPECT_EQ(s3f::to_manifest(back), text);
}
