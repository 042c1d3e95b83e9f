#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "nodx/ingest.hpp"
#include "nodx/volume.hpp"

namespace nodx {

enum class PhantomTexture { solid, ground_glass };

/// Recipe for one synthetic nodule. Manifestation labels are pure functions
/// of these fields (lobulation label = lobulation_count > 0, etc.).
struct PhantomSpec {
  double radius_mm = 4.0;
  int lobulation_count = 0;
  int spicule_count = 0;
  bool calcified = false;
  PhantomTexture texture = PhantomTexture::solid;
  int tube_count = 0;  // bronchus/vessel-like cylinders touching the nodule
  double noise_sd = 0.0;
  uint64_t seed = 0;
};

/// HU-like intensities chosen to survive percentile normalization.
struct PhantomIntensities {
  double background = -850.0;
  double nodule_solid = 20.0;
  double nodule_ground_glass = -350.0;
  double calcification = 820.0;
  double tube = -30.0;
};

struct PhantomResult {
  VolumeGrid volume;
  MaskGrid mask;  // consensus nodule mask
  NoduleRecord record;
};

const std::vector<std::string>& phantom_manifestation_names();

/// Diagnosis rule: positive iff spicule_count >= 3 or lobulation_count >= 2,
/// making malignancy a learnable function of the manifestations.
Diagnosis phantom_diagnosis(const PhantomSpec& spec);

std::map<std::string, int> phantom_labels(const PhantomSpec& spec);

/// Rasterize one nodule (sphere deformed by lobulation bumps and spicule
/// spikes) plus optional calcification core and tubes, with Gaussian noise.
/// Rejects specs whose nodule does not fit with a 4-voxel margin.
PhantomResult generate_phantom(const PhantomSpec& spec, const std::array<int, 3>& extents,
                               const std::array<double, 3>& spacing,
                               const PhantomIntensities& hu = {});

/// Exact per-manifestation class balance for a generated batch.
struct PhantomBatchSpec {
  int count = 0;
  uint64_t seed = 0;
  std::array<int, 3> grid_extents{24, 24, 24};
  std::array<double, 3> spacing{1.0, 1.0, 1.0};
  std::map<std::string, double> positive_fractions;  // name -> fraction in [0,1]
  double noise_sd = 30.0;
  double radius_lo_mm = 2.8;
  double radius_hi_mm = 3.6;
};

/// Generates `count` phantoms whose per-manifestation positive counts equal
/// round(fraction * count) exactly.
std::vector<PhantomSpec> plan_phantom_batch(const PhantomBatchSpec& batch);

}  // namespace nodx
