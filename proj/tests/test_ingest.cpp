#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "nodx/ingest.hpp"
#include "nodx/rng.hpp"

using namespace nodx;

namespace {

MaskGrid make_mask(std::array<int, 3> ext, const std::vector<uint8_t>& vals) {
  MaskGrid m(ext, {1, 1, 1});
  m.values = vals;
  return m;
}

// Independent dense trilinear evaluation used as the resampling oracle.
double oracle_trilinear(const VolumeGrid& v, double sx, double sy, double sz) {
  const auto clampd = [](double a, double lo, double hi) { return std::min(std::max(a, lo), hi); };
  sx = clampd(sx, 0.0, v.extents[0] - 1.0);
  sy = clampd(sy, 0.0, v.extents[1] - 1.0);
  sz = clampd(sz, 0.0, v.extents[2] - 1.0);
  const int x0 = static_cast<int>(sx), y0 = static_cast<int>(sy), z0 = static_cast<int>(sz);
  const int x1 = std::min(x0 + 1, v.extents[0] - 1);
  const int y1 = std::min(y0 + 1, v.extents[1] - 1);
  const int z1 = std::min(z0 + 1, v.extents[2] - 1);
  const double fx = sx - x0, fy = sy - y0, fz = sz - z0;
  double acc = 0.0;
  for (int dz = 0; dz < 2; ++dz)
    for (int dy = 0; dy < 2; ++dy)
      for (int dx = 0; dx < 2; ++dx) {
        const double wx = dx ? fx : 1 - fx;
        const double wy = dy ? fy : 1 - fy;
        const double wz = dz ? fz : 1 - fz;
        acc += wx * wy * wz * v.at(dx ? x1 : x0, dy ? y1 : y0, dz ? z1 : z0);
      }
  return acc;
}

// Independent percentile: sort + linear interpolation between order statistics.
double oracle_percentile(std::vector<double> vals, double pct) {
  std::sort(vals.begin(), vals.end());
  const double rank = pct / 100.0 * (vals.size() - 1);
  const size_t lo = static_cast<size_t>(rank);
  const double frac = rank - lo;
  if (lo + 1 >= vals.size()) return vals.back();
  return vals[lo] * (1 - frac) + vals[lo + 1] * frac;
}

}  // namespace

TEST_CASE("consensus consolidation threshold rule") {
  const std::array<int, 3> ext{2, 2, 1};
  // voxel 0 marked by all four raters; voxel 1 by two; voxel 2 by one; voxel 3 by none
  std::vector<MaskGrid> masks;
  masks.push_back(make_mask(ext, {1, 1, 1, 0}));
  masks.push_back(make_mask(ext, {1, 1, 0, 0}));
  masks.push_back(make_mask(ext, {1, 0, 0, 0}));
  masks.push_back(make_mask(ext, {1, 0, 0, 0}));

  const MaskGrid c = consolidate_consensus(masks, 0.5);
  CHECK(c.values[0] == 1);  // 4/4
  CHECK(c.values[1] == 1);  // 2/4 >= 0.5, ties include
  CHECK(c.values[2] == 0);  // 1/4
  CHECK(c.values[3] == 0);

  CHECK_THROWS_AS(consolidate_consensus({}, 0.5), std::invalid_argument);
  auto bad = masks;
  bad.push_back(make_mask({2, 2, 2}, std::vector<uint8_t>(8, 0)));
  CHECK_THROWS_AS(consolidate_consensus(bad, 0.5), std::invalid_argument);
  CHECK_THROWS_AS(consolidate_consensus(masks, 0.0), std::invalid_argument);
  CHECK_THROWS_AS(consolidate_consensus(masks, 1.5), std::invalid_argument);
}

TEST_CASE("consensus monotone under added votes") {
  Rng rng(101);
  const std::array<int, 3> ext{4, 4, 2};
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<MaskGrid> masks;
    const int n = rng.uniform_int(2, 6);
    for (int i = 0; i < n; ++i) {
      MaskGrid m(ext, {1, 1, 1});
      for (auto& v : m.values) v = rng.uniform() < 0.4 ? 1 : 0;
      masks.push_back(std::move(m));
    }
    const MaskGrid before = consolidate_consensus(masks, 0.5);
    MaskGrid all_ones(ext, {1, 1, 1});
    std::fill(all_ones.values.begin(), all_ones.values.end(), uint8_t{1});
    masks.push_back(all_ones);
    const MaskGrid after = consolidate_consensus(masks, 0.5);
    for (size_t i = 0; i < before.values.size(); ++i)
      if (before.values[i] == 1) CHECK(after.values[i] == 1);
  }
}

TEST_CASE("malignancy labeling rule") {
  CHECK(label_malignancy({4, 4, 5}) == Diagnosis::positive);
  CHECK(label_malignancy({3, 3}) == Diagnosis::indeterminate);
  CHECK(label_malignancy({1, 2}) == Diagnosis::negative);
  CHECK(label_malignancy({3}) == Diagnosis::indeterminate);
  CHECK_THROWS_AS(label_malignancy({}), std::invalid_argument);
  CHECK_THROWS_AS(label_malignancy({0, 3}), std::invalid_argument);
  CHECK_THROWS_AS(label_malignancy({6}), std::invalid_argument);

  // permutation invariance
  Rng rng(5);
  for (int t = 0; t < 30; ++t) {
    std::vector<int> scores;
    for (int i = 0, n = rng.uniform_int(1, 6); i < n; ++i)
      scores.push_back(rng.uniform_int(1, 5));
    auto shuffled = scores;
    rng.shuffle(shuffled);
    CHECK(label_malignancy(scores) == label_malignancy(shuffled));
  }
}

TEST_CASE("enrollment criteria and first-failure reason") {
  NoduleRecord r;
  r.diameter_mm = 5.0;
  r.annotations.resize(4);
  r.diagnosis_label = Diagnosis::positive;
  CHECK(enroll(r).include);

  NoduleRecord small = r;
  small.diameter_mm = 2.0;
  auto d = enroll(small);
  CHECK(!d.include);
  CHECK(d.reason == "diameter");

  NoduleRecord indet = r;
  indet.diameter_mm = 8.0;
  indet.annotations.resize(3);
  indet.diagnosis_label = Diagnosis::indeterminate;
  d = enroll(indet);
  CHECK(!d.include);
  CHECK(d.reason == "indeterminate");

  NoduleRecord lone = r;
  lone.annotations.resize(1);
  d = enroll(lone);
  CHECK(!d.include);
  CHECK(d.reason == "raters");

  // boundary: exactly 3 mm is excluded (criterion is "larger than 3 mm")
  NoduleRecord edge = r;
  edge.diameter_mm = 3.0;
  CHECK(!enroll(edge).include);
}

TEST_CASE("resample identity and forced extents") {
  VolumeGrid v({8, 8, 4}, {0.7, 0.7, 1.25});
  Rng rng(17);
  for (auto& x : v.values) x = rng.normal(0, 50);

  const VolumeGrid same = resample(v, {0.7, 0.7, 1.25});
  CHECK(same.extents == v.extents);
  CHECK(same.values == v.values);

  VolumeGrid coarse({64, 64, 32}, {1.4, 1.4, 2.5});
  const VolumeGrid fine = resample(coarse, {0.7, 0.7, 1.25});
  CHECK(fine.extents == std::array<int, 3>{128, 128, 64});
  CHECK(fine.spacing == std::array<double, 3>{0.7, 0.7, 1.25});

  VolumeGrid degenerate({8, 8, 1}, {1, 1, 1});
  CHECK_THROWS_AS(resample(degenerate, {0.5, 0.5, 0.5}), std::invalid_argument);
}

TEST_CASE("resample linear ramp matches dense oracle") {
  VolumeGrid v({10, 9, 8}, {1.0, 1.0, 1.0});
  for (int z = 0; z < 8; ++z)
    for (int y = 0; y < 9; ++y)
      for (int x = 0; x < 10; ++x) v.at(x, y, z) = 3.0 * x - 2.0 * y + 0.5 * z + 1.0;

  const VolumeGrid up = resample(v, {0.5, 0.5, 0.5});
  CHECK(up.extents == std::array<int, 3>{20, 18, 16});
  for (int z = 0; z < up.extents[2]; ++z)
    for (int y = 0; y < up.extents[1]; ++y)
      for (int x = 0; x < up.extents[0]; ++x) {
        const double expect = oracle_trilinear(v, x * 0.5, y * 0.5, z * 0.5);
        CHECK(std::fabs(up.at(x, y, z) - expect) < 1e-6);
      }
}

TEST_CASE("resample is idempotent at fixed spacing") {
  VolumeGrid v({12, 10, 8}, {1.3, 0.9, 2.1});
  Rng rng(23);
  for (auto& x : v.values) x = rng.normal(0, 100);
  const VolumeGrid once = resample(v, {0.7, 0.7, 1.25});
  const VolumeGrid twice = resample(once, {0.7, 0.7, 1.25});
  REQUIRE(once.extents == twice.extents);
  for (size_t i = 0; i < once.values.size(); ++i)
    CHECK(std::fabs(once.values[i] - twice.values[i]) < 1e-6);
}

TEST_CASE("mask resampling is nearest neighbor") {
  MaskGrid m({4, 4, 2}, {2, 2, 2});
  m.at(1, 1, 0) = 1;
  const MaskGrid r = resample_mask(m, {1, 1, 1});
  CHECK(r.extents == std::array<int, 3>{8, 8, 4});
  for (uint8_t v : r.values) CHECK((v == 0 || v == 1));
  CHECK(r.at(2, 2, 0) == 1);  // 2*0.5 rounds onto source voxel 1
}

TEST_CASE("normalize endpoints forced by min-max") {
  // Two-value volume: a single hot voxel above the 99.5th percentile clips
  // down to it, and min-max then forces the output endpoints to {0, 1}.
  VolumeGrid v({10, 10, 2}, {1, 1, 1});
  std::fill(v.values.begin(), v.values.end(), 0.0);
  v.values[100] = 1000.0;
  const auto res = normalize_intensity(v);
  CHECK(!res.constant_input);
  CHECK(res.clip_hi > res.clip_lo);
  CHECK(res.clip_hi < 1000.0);  // hot voxel was clipped
  const auto [mn, mx] = std::minmax_element(res.volume.values.begin(), res.volume.values.end());
  CHECK(*mn == 0.0);
  CHECK(*mx == 1.0);
}

TEST_CASE("normalize constant volume flags degenerate input") {
  VolumeGrid v({4, 4, 4}, {1, 1, 1});
  std::fill(v.values.begin(), v.values.end(), 40.0);
  const auto res = normalize_intensity(v);
  CHECK(res.constant_input);
  for (double x : res.volume.values) CHECK(x == 0.0);
}

TEST_CASE("normalize ramp matches percentile oracle") {
  VolumeGrid v({100, 100, 100}, {1, 1, 1});
  for (size_t i = 0; i < v.values.size(); ++i)
    v.values[i] = 1000.0 * static_cast<double>(i) / (v.values.size() - 1);
  const auto res = normalize_intensity(v, 0.5, 99.5);
  const double p_lo = oracle_percentile(v.values, 0.5);
  const double p_hi = oracle_percentile(v.values, 99.5);
  CHECK(res.clip_lo == doctest::Approx(p_lo).epsilon(1e-12));
  CHECK(res.clip_hi == doctest::Approx(p_hi).epsilon(1e-12));
  for (size_t i : {size_t{0}, size_t{12345}, size_t{500000}, size_t{999999}}) {
    const double expect =
        std::clamp((v.values[i] - p_lo) / (p_hi - p_lo), 0.0, 1.0);
    CHECK(std::fabs(res.volume.values[i] - expect) < 1e-6);
  }
  for (double x : res.volume.values) {
    CHECK(x >= 0.0);
    CHECK(x <= 1.0);
  }
}

TEST_CASE("patch extraction: interior, corner padding, gather oracle") {
  VolumeGrid v({40, 40, 30}, {1, 1, 1});
  Rng rng(31);
  for (auto& x : v.values) x = rng.uniform();

  SUBCASE("deep interior equals direct slicing") {
    const auto p = extract_patch(v, {20, 20, 15}, {8, 8, 6});
    for (int z = 0; z < 6; ++z)
      for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x)
          CHECK(p.at(x, y, z) == v.at(20 - 4 + x, 20 - 4 + y, 15 - 3 + z));
  }

  SUBCASE("corner center pads roughly 7/8 with zeros") {
    const auto p = extract_patch(v, {0, 0, 0}, {8, 8, 6});
    size_t zeros = 0, inside = 0;
    for (int z = 0; z < 6; ++z)
      for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) {
          const int sx = x - 4, sy = y - 4, sz = z - 3;
          if (sx >= 0 && sy >= 0 && sz >= 0) {
            ++inside;
            CHECK(p.at(x, y, z) == v.at(sx, sy, sz));
          } else {
            ++zeros;
            CHECK(p.at(x, y, z) == 0.0);
          }
        }
    CHECK(inside == 4u * 4 * 3);
    CHECK(zeros == p.numel() - inside);
  }

  SUBCASE("random centers match bounds-checked gather oracle") {
    for (int t = 0; t < 20; ++t) {
      const std::array<int, 3> c{rng.uniform_int(0, 39), rng.uniform_int(0, 39),
                                 rng.uniform_int(0, 29)};
      const std::array<int, 3> size{10, 6, 4};
      const auto p = extract_patch(v, c, size);
      for (int z = 0; z < size[2]; ++z)
        for (int y = 0; y < size[1]; ++y)
          for (int x = 0; x < size[0]; ++x) {
            const int sx = c[0] - size[0] / 2 + x;
            const int sy = c[1] - size[1] / 2 + y;
            const int sz = c[2] - size[2] / 2 + z;
            const double expect = v.contains(sx, sy, sz) ? v.at(sx, sy, sz) : 0.0;
            CHECK(p.at(x, y, z) == expect);
          }
    }
  }

  SUBCASE("center outside volume is rejected") {
    CHECK_THROWS_AS(extract_patch(v, {40, 0, 0}, {8, 8, 6}), std::invalid_argument);
    CHECK_THROWS_AS(extract_patch(v, {-1, 0, 0}, {8, 8, 6}), std::invalid_argument);
  }
}

TEST_CASE("ingest path is deterministic") {
  VolumeGrid v({20, 20, 12}, {1.3, 1.3, 2.0});
  Rng rng(77);
  for (auto& x : v.values) x = rng.normal(-500, 300);

  const auto run = [&] {
    const VolumeGrid r = resample(v, {1, 1, 1});
    const auto n = normalize_intensity(r);
    const auto c = map_center_to_spacing({10, 10, 6}, v.spacing, {1, 1, 1});
    return extract_patch(n.volume, c, {16, 16, 8});
  };
  const auto a = run();
  const auto b = run();
  CHECK(a.values == b.values);  // bit-identical
}

TEST_CASE("equivalent sphere diameter from mask") {
  MaskGrid m({30, 30, 30}, {1, 1, 1});
  const double r = 6.0;
  for (int z = 0; z < 30; ++z)
    for (int y = 0; y < 30; ++y)
      for (int x = 0; x < 30; ++x) {
        const double dx = x - 15.0, dy = y - 15.0, dz = z - 15.0;
        if (std::sqrt(dx * dx + dy * dy + dz * dz) <= r) m.at(x, y, z) = 1;
      }
  CHECK(equivalent_sphere_diameter_mm(m) == doctest::Approx(2 * r).epsilon(0.05));
}
