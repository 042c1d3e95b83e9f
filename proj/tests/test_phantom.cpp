#include <doctest.h>

#include <cmath>

#include "nodx/phantom.hpp"

using namespace nodx;

TEST_CASE("plain sphere volume matches analytic oracle") {
  PhantomSpec spec;
  spec.radius_mm = 6.0;
  spec.noise_sd = 0.0;
  spec.seed = 1;
  const auto res = generate_phantom(spec, {32, 32, 32}, {1, 1, 1});
  size_t count = 0;
  for (uint8_t v : res.mask.values) count += v;
  const double analytic = 4.0 / 3.0 * M_PI * std::pow(spec.radius_mm, 3);
  CHECK(std::fabs(static_cast<double>(count) - analytic) / analytic < 0.05);
}

TEST_CASE("calcified core produces hyperdense voxels") {
  PhantomSpec spec;
  spec.radius_mm = 5.0;
  spec.calcified = true;
  spec.noise_sd = 20.0;
  spec.seed = 2;
  const auto res = generate_phantom(spec, {28, 28, 28}, {1, 1, 1});
  const PhantomIntensities hu;
  bool found = false;
  for (int z = 0; z < 28 && !found; ++z)
    for (int y = 0; y < 28 && !found; ++y)
      for (int x = 0; x < 28 && !found; ++x)
        if (res.mask.at(x, y, z) && res.volume.at(x, y, z) >= hu.nodule_solid + 500.0)
          found = true;
  CHECK(found);
}

TEST_CASE("same spec and seed give bit-identical volumes") {
  PhantomSpec spec;
  spec.radius_mm = 4.0;
  spec.lobulation_count = 2;
  spec.spicule_count = 3;
  spec.tube_count = 1;
  spec.noise_sd = 35.0;
  spec.seed = 99;
  const auto a = generate_phantom(spec, {28, 28, 26}, {1, 1, 1});
  const auto b = generate_phantom(spec, {28, 28, 26}, {1, 1, 1});
  CHECK(a.volume.values == b.volume.values);
  CHECK(a.mask.values == b.mask.values);
}

TEST_CASE("labels are pure functions of the spec") {
  PhantomSpec spec;
  spec.radius_mm = 4.0;
  spec.lobulation_count = 2;
  spec.spicule_count = 0;
  spec.calcified = true;
  spec.texture = PhantomTexture::ground_glass;
  spec.tube_count = 2;
  spec.seed = 5;
  const auto res = generate_phantom(spec, {30, 30, 26}, {1, 1, 1});
  const auto& labels = res.record.manifestation_labels;
  CHECK(labels.at("lobulation") == 1);
  CHECK(labels.at("spiculation") == 0);
  CHECK(labels.at("calcification") == 1);
  CHECK(labels.at("solid_texture") == 0);
  CHECK(labels.at("tube_contact") == 1);
  // lobulation_count >= 2 -> positive by the phantom diagnosis rule
  CHECK(res.record.diagnosis_label == Diagnosis::positive);

  spec.lobulation_count = 1;
  spec.spicule_count = 2;
  CHECK(phantom_diagnosis(spec) == Diagnosis::negative);
  spec.spicule_count = 3;
  CHECK(phantom_diagnosis(spec) == Diagnosis::positive);
}

TEST_CASE("record passes enrollment and is self-consistent") {
  PhantomSpec spec;
  spec.radius_mm = 4.5;
  spec.seed = 12;
  const auto res = generate_phantom(spec, {28, 28, 24}, {1, 1, 1});
  CHECK(res.record.diameter_mm > 3.0);
  CHECK(res.record.annotations.size() >= 2);
  CHECK(enroll(res.record).include);
  CHECK(res.record.manifestation_labels.size() == phantom_manifestation_names().size());
  // rater malignancy scores reproduce the diagnosis label
  std::vector<int> scores;
  for (const auto& a : res.record.annotations) scores.push_back(a.malignancy_score);
  CHECK(label_malignancy(scores) == res.record.diagnosis_label);
}

TEST_CASE("nodule not fitting the grid is rejected") {
  PhantomSpec spec;
  spec.radius_mm = 10.0;
  spec.seed = 3;
  CHECK_THROWS_AS(generate_phantom(spec, {24, 24, 16}, {1, 1, 1}), std::invalid_argument);
}

TEST_CASE("batch planner hits requested positive fractions exactly") {
  PhantomBatchSpec batch;
  batch.count = 40;
  batch.seed = 7;
  batch.positive_fractions = {{"lobulation", 0.5},
                              {"spiculation", 0.25},
                              {"calcification", 0.75},
                              {"solid_texture", 0.5},
                              {"tube_contact", 0.1}};
  const auto specs = plan_phantom_batch(batch);
  REQUIRE(specs.size() == 40u);
  std::map<std::string, int> counts;
  for (const auto& s : specs)
    for (const auto& [name, v] : phantom_labels(s)) counts[name] += v;
  CHECK(counts["lobulation"] == 20);
  CHECK(counts["spiculation"] == 10);
  CHECK(counts["calcification"] == 30);
  CHECK(counts["solid_texture"] == 20);
  CHECK(counts["tube_contact"] == 4);

  // both diagnosis classes appear
  int pos = 0;
  for (const auto& s : specs) pos += phantom_diagnosis(s) == Diagnosis::positive ? 1 : 0;
  CHECK(pos > 0);
  CHECK(pos < 40);

  // planning is deterministic
  const auto again = plan_phantom_batch(batch);
  for (size_t i = 0; i < specs.size(); ++i) {
    CHECK(specs[i].seed == again[i].seed);
    CHECK(specs[i].radius_mm == again[i].radius_mm);
    CHECK(specs[i].spicule_count == again[i].spicule_count);
  }
}
