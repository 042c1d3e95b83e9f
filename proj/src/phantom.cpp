#include "nodx/phantom.hpp"

#include <algorithm>
#include <cmath>

#include "nodx/rng.hpp"

namespace nodx {

namespace {

constexpr double kLobulationAmp = 0.25;
constexpr double kLobulationSigma = 0.45;  // radians
constexpr double kSpiculeAmp = 0.65;
constexpr double kSpiculeSigma = 0.13;
constexpr double kRadiusCap = 1.5;         // r(u) <= radius_mm * cap
constexpr double kCalcCoreFraction = 0.35;
constexpr int kFitMarginVoxels = 4;

struct Vec3 {
  double x, y, z;
};

Vec3 random_unit(Rng& rng) {
  while (true) {
    const Vec3 v{rng.normal(), rng.normal(), rng.normal()};
    const double n = std::sqrt(v.x * v.x + v.y * v.y + v.z * v.z);
    if (n > 1e-8) return {v.x / n, v.y / n, v.z / n};
  }
}

double angle_between(const Vec3& a, const Vec3& b) {
  const double dot = std::clamp(a.x * b.x + a.y * b.y + a.z * b.z, -1.0, 1.0);
  return std::acos(dot);
}

}  // namespace

const std::vector<std::string>& phantom_manifestation_names() {
  static const std::vector<std::string> names = {"lobulation", "spiculation", "calcification",
                                                 "solid_texture", "tube_contact"};
  return names;
}

Diagnosis phantom_diagnosis(const PhantomSpec& spec) {
  return (spec.spicule_count >= 3 || spec.lobulation_count >= 2) ? Diagnosis::positive
                                                                 : Diagnosis::negative;
}

std::map<std::string, int> phantom_labels(const PhantomSpec& spec) {
  return {{"lobulation", spec.lobulation_count > 0 ? 1 : 0},
          {"spiculation", spec.spicule_count > 0 ? 1 : 0},
          {"calcification", spec.calcified ? 1 : 0},
          {"solid_texture", spec.texture == PhantomTexture::solid ? 1 : 0},
          {"tube_contact", spec.tube_count > 0 ? 1 : 0}};
}

PhantomResult generate_phantom(const PhantomSpec& spec, const std::array<int, 3>& extents,
                               const std::array<double, 3>& spacing,
                               const PhantomIntensities& hu) {
  if (spec.radius_mm <= 0.0) throw std::invalid_argument("phantom: radius must be positive");
  if (spec.lobulation_count < 0 || spec.spicule_count < 0 || spec.tube_count < 0)
    throw std::invalid_argument("phantom: feature counts must be nonnegative");
  if (spec.noise_sd < 0.0) throw std::invalid_argument("phantom: noise_sd must be nonnegative");

  const std::array<int, 3> center{extents[0] / 2, extents[1] / 2, extents[2] / 2};
  const double boost_bound = std::min(kRadiusCap - 1.0, kLobulationAmp * spec.lobulation_count +
                                                            kSpiculeAmp * spec.spicule_count);
  const double reach_mm = spec.radius_mm * (1.0 + boost_bound);
  for (int a = 0; a < 3; ++a) {
    const double margin_mm = kFitMarginVoxels * spacing[a];
    const double lo = center[a] * spacing[a];
    const double hi = (extents[a] - 1 - center[a]) * spacing[a];
    if (lo < reach_mm + margin_mm || hi < reach_mm + margin_mm)
      throw std::invalid_argument("phantom: nodule does not fit inside grid with a 4-voxel margin");
  }

  Rng rng(spec.seed);
  std::vector<Vec3> bump_dirs, spike_dirs, tube_dirs;
  for (int i = 0; i < spec.lobulation_count; ++i) bump_dirs.push_back(random_unit(rng));
  for (int i = 0; i < spec.spicule_count; ++i) spike_dirs.push_back(random_unit(rng));
  for (int i = 0; i < spec.tube_count; ++i) tube_dirs.push_back(random_unit(rng));
  std::vector<double> tube_radius_mm;
  for (int i = 0; i < spec.tube_count; ++i) tube_radius_mm.push_back(rng.uniform(0.8, 1.4));

  const double nodule_hu =
      spec.texture == PhantomTexture::solid ? hu.nodule_solid : hu.nodule_ground_glass;
  const double calc_radius_mm = kCalcCoreFraction * spec.radius_mm;

  VolumeGrid volume(extents, spacing);
  MaskGrid mask(extents, spacing);

  for (int z = 0; z < extents[2]; ++z)
    for (int y = 0; y < extents[1]; ++y)
      for (int x = 0; x < extents[0]; ++x) {
        const double px = (x - center[0]) * spacing[0];
        const double py = (y - center[1]) * spacing[1];
        const double pz = (z - center[2]) * spacing[2];
        const double dist = std::sqrt(px * px + py * py + pz * pz);

        double radius = spec.radius_mm;
        if (dist > 1e-12 && (!bump_dirs.empty() || !spike_dirs.empty())) {
          const Vec3 u{px / dist, py / dist, pz / dist};
          double boost = 0.0;
          for (const auto& d : bump_dirs) {
            const double ang = angle_between(u, d);
            boost += kLobulationAmp * std::exp(-0.5 * ang * ang / (kLobulationSigma * kLobulationSigma));
          }
          for (const auto& d : spike_dirs) {
            const double ang = angle_between(u, d);
            boost += kSpiculeAmp * std::exp(-0.5 * ang * ang / (kSpiculeSigma * kSpiculeSigma));
          }
          radius = std::min(spec.radius_mm * (1.0 + boost), spec.radius_mm * kRadiusCap);
        }

        const bool inside = dist <= radius;
        mask.at(x, y, z) = inside ? 1 : 0;

        double value = hu.background;
        if (inside) {
          value = dist <= calc_radius_mm && spec.calcified ? hu.calcification : nodule_hu;
        } else {
          for (size_t t = 0; t < tube_dirs.size(); ++t) {
            const Vec3& d = tube_dirs[t];
            const double along = px * d.x + py * d.y + pz * d.z;
            const double ox = px - along * d.x;
            const double oy = py - along * d.y;
            const double oz = pz - along * d.z;
            if (std::sqrt(ox * ox + oy * oy + oz * oz) <= tube_radius_mm[t]) {
              value = hu.tube;
              break;
            }
          }
        }
        volume.at(x, y, z) = value;
      }

  if (spec.noise_sd > 0.0)
    for (double& v : volume.values) v += rng.normal(0.0, spec.noise_sd);

  PhantomResult res;
  res.record.id = "phantom-" + std::to_string(spec.seed);
  res.record.center_voxel = center;
  res.record.diameter_mm = equivalent_sphere_diameter_mm(mask);
  res.record.consensus_mask = mask;
  res.record.diagnosis_label = phantom_diagnosis(spec);
  res.record.manifestation_labels = phantom_labels(spec);
  res.record.provenance = "synthetic phantom";
  // Four concordant virtual raters so enrollment criteria are exercised.
  const int malignancy = res.record.diagnosis_label == Diagnosis::positive ? 5 : 1;
  for (int r = 0; r < 4; ++r) {
    RaterAnnotation ann;
    ann.mask = mask;
    ann.malignancy_score = malignancy;
    for (const auto& [name, v] : res.record.manifestation_labels)
      ann.attribute_scores[name] = v ? 5 : 1;
    res.record.annotations.push_back(std::move(ann));
  }
  res.volume = std::move(volume);
  res.mask = std::move(mask);
  return res;
}

std::vector<PhantomSpec> plan_phantom_batch(const PhantomBatchSpec& batch) {
  if (batch.count <= 0) throw std::invalid_argument("phantom batch: count must be positive");
  const auto& names = phantom_manifestation_names();
  for (const auto& [name, frac] : batch.positive_fractions) {
    if (std::find(names.begin(), names.end(), name) == names.end())
      throw std::invalid_argument("phantom batch: unknown manifestation '" + name + "'");
    if (frac < 0.0 || frac > 1.0)
      throw std::invalid_argument("phantom batch: fraction outside [0,1]");
  }

  const int n = batch.count;
  std::map<std::string, std::vector<int>> positive;
  for (const auto& name : names) {
    const auto it = batch.positive_fractions.find(name);
    const double frac = it == batch.positive_fractions.end() ? 0.5 : it->second;
    const int n_pos = static_cast<int>(std::llround(frac * n));
    std::vector<int> flags(static_cast<size_t>(n), 0);
    std::fill(flags.begin(), flags.begin() + n_pos, 1);
    Rng stream(Rng::mix(batch.seed, fnv1a64(name)));
    stream.shuffle(flags);
    positive[name] = std::move(flags);
  }

  Rng rng(Rng::mix(batch.seed, 0x9e3779b9));
  std::vector<PhantomSpec> specs;
  specs.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    PhantomSpec s;
    s.seed = Rng::mix(batch.seed, 0x5eed0000ULL + static_cast<uint64_t>(i));
    s.radius_mm = rng.uniform(batch.radius_lo_mm, batch.radius_hi_mm);
    s.noise_sd = batch.noise_sd;
    s.calcified = positive["calcification"][i] != 0;
    s.texture = positive["solid_texture"][i] ? PhantomTexture::solid : PhantomTexture::ground_glass;
    s.tube_count = positive["tube_contact"][i] ? rng.uniform_int(1, 2) : 0;

    // Counts steer the diagnosis label while respecting positivity:
    // spicules >= 3 or lobulations >= 2 make the phantom malignant.
    const bool spic = positive["spiculation"][i] != 0;
    const bool lob = positive["lobulation"][i] != 0;
    const bool want_malignant = (spic || lob) && rng.uniform() < 0.5;
    if (spic)
      s.spicule_count = want_malignant ? rng.uniform_int(3, 5) : rng.uniform_int(1, 2);
    if (lob)
      s.lobulation_count = want_malignant && !(spic && s.spicule_count >= 3)
                               ? rng.uniform_int(2, 3)
                               : (want_malignant ? rng.uniform_int(1, 3) : 1);
    specs.push_back(s);
  }
  return specs;
}

}  // namespace nodx
