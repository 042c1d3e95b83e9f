#pragma once

#include <array>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "nodx/volume.hpp"

namespace nodx {

enum class Diagnosis { negative, positive, indeterminate };

std::string to_string(Diagnosis d);
Diagnosis diagnosis_from_string(const std::string& s);

struct RaterAnnotation {
  MaskGrid mask;
  std::map<std::string, int> attribute_scores;  // manifestation name -> ordinal score
  int malignancy_score = 0;                     // 1..5
};

struct NoduleRecord {
  std::string id;
  std::array<int, 3> center_voxel{0, 0, 0};
  double diameter_mm = 0.0;
  std::vector<RaterAnnotation> annotations;
  MaskGrid consensus_mask;
  Diagnosis diagnosis_label = Diagnosis::indeterminate;
  std::map<std::string, int> manifestation_labels;  // name -> {0,1}
  std::string provenance;
};

enum class Split { train, validation, test };
std::string to_string(Split s);
Split split_from_string(const std::string& s);

/// One manifest row. Optional columns (mask_path, n_raters) may be absent.
struct ManifestEntry {
  std::string record_id;
  std::string source_path;
  std::string mask_path;  // empty when the column is absent
  std::array<int, 3> center{0, 0, 0};
  double diameter_mm = 0.0;
  Split split = Split::train;
  Diagnosis diagnosis = Diagnosis::indeterminate;
  std::map<std::string, int> manifestation_labels;
  int n_raters = -1;  // -1 when the column is absent
};

struct CohortManifest {
  std::vector<std::string> manifestation_names;  // fixed order; indexes logits downstream
  std::vector<ManifestEntry> entries;

  std::vector<const ManifestEntry*> split_entries(Split s) const;
};

CohortManifest read_manifest_csv(const std::filesystem::path& path);
void write_manifest_csv(const std::filesystem::path& path, const CohortManifest& manifest);

// --- consensus / labeling / enrollment -------------------------------------

/// Voxelwise vote: output voxel is 1 iff the fraction of masks marking it is
/// >= threshold_fraction (ties include).
MaskGrid consolidate_consensus(const std::vector<MaskGrid>& masks,
                               double threshold_fraction = 0.5);

/// Mean malignancy rule: > 3 positive, == 3 indeterminate, < 3 negative.
Diagnosis label_malignancy(const std::vector<int>& scores);

struct EnrollDecision {
  bool include = false;
  std::string reason;  // first failing criterion when excluded
};

EnrollDecision enroll(const NoduleRecord& record);

/// Equivalent-sphere diameter 2*(3V/4pi)^(1/3) of a mask, in mm.
double equivalent_sphere_diameter_mm(const MaskGrid& mask);

// --- preprocessing ----------------------------------------------------------

/// Trilinear resampling to the target spacing. Output extents are
/// round(extent * spacing / target). Out-of-range samples clamp to the edge.
VolumeGrid resample(const VolumeGrid& volume, const std::array<double, 3>& target_spacing);

/// Nearest-neighbor resampling for masks and probability maps.
MaskGrid resample_mask(const MaskGrid& mask, const std::array<double, 3>& target_spacing);

struct NormalizeResult {
  VolumeGrid volume;        // values in [0, 1]
  double clip_lo = 0.0;     // percentile values used
  double clip_hi = 0.0;
  bool constant_input = false;  // degenerate volume mapped to all zeros
};

/// Clip to [lo_pct, hi_pct] percentiles of this volume, then min-max map to
/// [0, 1]. A constant volume maps to all zeros and sets constant_input.
NormalizeResult normalize_intensity(const VolumeGrid& volume, double lo_pct = 0.5,
                                    double hi_pct = 99.5);

/// Percentile with linear interpolation between order statistics.
double percentile(std::vector<double> values, double pct);

/// Axis-aligned crop centered at `center`; out-of-bounds voxels are zero.
VolumeGrid extract_patch(const VolumeGrid& volume, const std::array<int, 3>& center,
                         const std::array<int, 3>& size);
MaskGrid extract_mask_patch(const MaskGrid& mask, const std::array<int, 3>& center,
                            const std::array<int, 3>& size);

/// Voxel index of a point after resampling to a new spacing (round to nearest).
std::array<int, 3> map_center_to_spacing(const std::array<int, 3>& center,
                                         const std::array<double, 3>& from_spacing,
                                         const std::array<double, 3>& to_spacing);

}  // namespace nodx
