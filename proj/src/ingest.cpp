#include "nodx/ingest.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

namespace nodx {

std::string to_string(Diagnosis d) {
  switch (d) {
    case Diagnosis::negative: return "negative";
    case Diagnosis::positive: return "positive";
    case Diagnosis::indeterminate: return "indeterminate";
  }
  return "indeterminate";
}

Diagnosis diagnosis_from_string(const std::string& s) {
  if (s == "negative" || s == "0") return Diagnosis::negative;
  if (s == "positive" || s == "1") return Diagnosis::positive;
  if (s == "indeterminate") return Diagnosis::indeterminate;
  throw std::invalid_argument("unknown diagnosis value '" + s + "'");
}

std::string to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::validation: return "validation";
    case Split::test: return "test";
  }
  return "train";
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "validation" || s == "val") return Split::validation;
  if (s == "test") return Split::test;
  throw std::invalid_argument("unknown split value '" + s + "'");
}

std::vector<const ManifestEntry*> CohortManifest::split_entries(Split s) const {
  std::vector<const ManifestEntry*> out;
  for (const auto& e : entries)
    if (e.split == s) out.push_back(&e);
  return out;
}

// --- consensus / labeling / enrollment -------------------------------------

MaskGrid consolidate_consensus(const std::vector<MaskGrid>& masks, double threshold_fraction) {
  if (masks.empty()) throw std::invalid_argument("consolidate_consensus: empty mask list");
  if (!(threshold_fraction > 0.0 && threshold_fraction <= 1.0))
    throw std::invalid_argument("consolidate_consensus: threshold must be in (0, 1]");
  const MaskGrid& first = masks.front();
  for (const auto& m : masks)
    if (!m.same_extents(first))
      throw std::invalid_argument("consolidate_consensus: mismatched mask extents");

  MaskGrid out(first.extents, first.spacing, first.origin);
  const size_t n = first.numel();
  const double denom = static_cast<double>(masks.size());
  for (size_t i = 0; i < n; ++i) {
    int count = 0;
    for (const auto& m : masks) count += m.values[i] != 0 ? 1 : 0;
    out.values[i] = (count / denom >= threshold_fraction - 1e-12) ? 1 : 0;
  }
  return out;
}

Diagnosis label_malignancy(const std::vector<int>& scores) {
  if (scores.empty()) throw std::invalid_argument("label_malignancy: no scores");
  long long sum = 0;
  for (int s : scores) {
    if (s < 1 || s > 5)
      throw std::invalid_argument("label_malignancy: score outside 1-5");
    sum += s;
  }
  const long long pivot = 3LL * static_cast<long long>(scores.size());
  if (sum > pivot) return Diagnosis::positive;
  if (sum == pivot) return Diagnosis::indeterminate;
  return Diagnosis::negative;
}

EnrollDecision enroll(const NoduleRecord& record) {
  if (!(record.diameter_mm > 3.0)) return {false, "diameter"};
  if (record.annotations.size() < 2) return {false, "raters"};
  if (record.diagnosis_label == Diagnosis::indeterminate) return {false, "indeterminate"};
  return {true, ""};
}

double equivalent_sphere_diameter_mm(const MaskGrid& mask) {
  size_t count = 0;
  for (uint8_t v : mask.values) count += v != 0 ? 1 : 0;
  const double voxel_volume = mask.spacing[0] * mask.spacing[1] * mask.spacing[2];
  const double v = static_cast<double>(count) * voxel_volume;
  return 2.0 * std::cbrt(3.0 * v / (4.0 * M_PI));
}

// --- preprocessing ----------------------------------------------------------

namespace {

std::array<int, 3> resampled_extents(const std::array<int, 3>& extents,
                                     const std::array<double, 3>& spacing,
                                     const std::array<double, 3>& target) {
  std::array<int, 3> out{};
  for (int a = 0; a < 3; ++a) {
    if (!(target[a] > 0.0))
      throw std::invalid_argument("resample: target spacing must be positive");
    if (extents[a] < 2)
      throw std::invalid_argument("resample: degenerate single-voxel axis");
    out[a] = std::max(
        1, static_cast<int>(std::llround(extents[a] * spacing[a] / target[a])));
  }
  return out;
}

}  // namespace

VolumeGrid resample(const VolumeGrid& volume, const std::array<double, 3>& target_spacing) {
  volume.validate();
  const auto out_ext = resampled_extents(volume.extents, volume.spacing, target_spacing);
  VolumeGrid out(out_ext, target_spacing, volume.origin);

  const int nx = volume.extents[0], ny = volume.extents[1], nz = volume.extents[2];
  const double rx = target_spacing[0] / volume.spacing[0];
  const double ry = target_spacing[1] / volume.spacing[1];
  const double rz = target_spacing[2] / volume.spacing[2];

  for (int z = 0; z < out_ext[2]; ++z) {
    const double sz = std::clamp(z * rz, 0.0, static_cast<double>(nz - 1));
    const int z0 = static_cast<int>(sz);
    const int z1 = std::min(z0 + 1, nz - 1);
    const double fz = sz - z0;
    for (int y = 0; y < out_ext[1]; ++y) {
      const double sy = std::clamp(y * ry, 0.0, static_cast<double>(ny - 1));
      const int y0 = static_cast<int>(sy);
      const int y1 = std::min(y0 + 1, ny - 1);
      const double fy = sy - y0;
      for (int x = 0; x < out_ext[0]; ++x) {
        const double sx = std::clamp(x * rx, 0.0, static_cast<double>(nx - 1));
        const int x0 = static_cast<int>(sx);
        const int x1 = std::min(x0 + 1, nx - 1);
        const double fx = sx - x0;

        const double c00 = volume.at(x0, y0, z0) * (1 - fx) + volume.at(x1, y0, z0) * fx;
        const double c10 = volume.at(x0, y1, z0) * (1 - fx) + volume.at(x1, y1, z0) * fx;
        const double c01 = volume.at(x0, y0, z1) * (1 - fx) + volume.at(x1, y0, z1) * fx;
        const double c11 = volume.at(x0, y1, z1) * (1 - fx) + volume.at(x1, y1, z1) * fx;
        const double c0 = c00 * (1 - fy) + c10 * fy;
        const double c1 = c01 * (1 - fy) + c11 * fy;
        out.at(x, y, z) = c0 * (1 - fz) + c1 * fz;
      }
    }
  }
  return out;
}

MaskGrid resample_mask(const MaskGrid& mask, const std::array<double, 3>& target_spacing) {
  mask.validate();
  const auto out_ext = resampled_extents(mask.extents, mask.spacing, target_spacing);
  MaskGrid out(out_ext, target_spacing, mask.origin);
  const double rx = target_spacing[0] / mask.spacing[0];
  const double ry = target_spacing[1] / mask.spacing[1];
  const double rz = target_spacing[2] / mask.spacing[2];
  for (int z = 0; z < out_ext[2]; ++z) {
    const int sz = std::clamp(static_cast<int>(std::llround(z * rz)), 0, mask.extents[2] - 1);
    for (int y = 0; y < out_ext[1]; ++y) {
      const int sy = std::clamp(static_cast<int>(std::llround(y * ry)), 0, mask.extents[1] - 1);
      for (int x = 0; x < out_ext[0]; ++x) {
        const int sx = std::clamp(static_cast<int>(std::llround(x * rx)), 0, mask.extents[0] - 1);
        out.at(x, y, z) = mask.at(sx, sy, sz);
      }
    }
  }
  return out;
}

double percentile(std::vector<double> values, double pct) {
  if (values.empty()) throw std::invalid_argument("percentile: empty input");
  if (pct < 0.0 || pct > 100.0) throw std::invalid_argument("percentile: pct outside [0,100]");
  std::sort(values.begin(), values.end());
  const double rank = pct / 100.0 * static_cast<double>(values.size() - 1);
  const size_t lo = static_cast<size_t>(rank);
  const double frac = rank - static_cast<double>(lo);
  if (lo + 1 >= values.size()) return values.back();
  return values[lo] * (1.0 - frac) + values[lo + 1] * frac;
}

NormalizeResult normalize_intensity(const VolumeGrid& volume, double lo_pct, double hi_pct) {
  if (volume.values.empty()) throw std::invalid_argument("normalize_intensity: empty volume");
  if (!(lo_pct < hi_pct))
    throw std::invalid_argument("normalize_intensity: lo_pct must be below hi_pct");

  NormalizeResult res;
  res.clip_lo = percentile(volume.values, lo_pct);
  res.clip_hi = percentile(volume.values, hi_pct);
  res.volume = volume;

  if (res.clip_hi <= res.clip_lo) {
    res.constant_input = true;
    std::fill(res.volume.values.begin(), res.volume.values.end(), 0.0);
    return res;
  }
  const double scale = 1.0 / (res.clip_hi - res.clip_lo);
  for (double& v : res.volume.values) {
    const double clipped = std::clamp(v, res.clip_lo, res.clip_hi);
    v = (clipped - res.clip_lo) * scale;
  }
  return res;
}

VolumeGrid extract_patch(const VolumeGrid& volume, const std::array<int, 3>& center,
                         const std::array<int, 3>& size) {
  if (!volume.contains(center[0], center[1], center[2]))
    throw std::invalid_argument("extract_patch: center outside volume");
  for (int a = 0; a < 3; ++a)
    if (size[a] <= 0) throw std::invalid_argument("extract_patch: nonpositive size");

  std::array<int, 3> start{};
  for (int a = 0; a < 3; ++a) start[a] = center[a] - size[a] / 2;

  VolumeGrid out(size, volume.spacing,
                 {volume.origin[0] + start[0] * volume.spacing[0],
                  volume.origin[1] + start[1] * volume.spacing[1],
                  volume.origin[2] + start[2] * volume.spacing[2]});
  for (int z = 0; z < size[2]; ++z)
    for (int y = 0; y < size[1]; ++y)
      for (int x = 0; x < size[0]; ++x) {
        const int sx = start[0] + x, sy = start[1] + y, sz = start[2] + z;
        out.at(x, y, z) = volume.contains(sx, sy, sz) ? volume.at(sx, sy, sz) : 0.0;
      }
  return out;
}

MaskGrid extract_mask_patch(const MaskGrid& mask, const std::array<int, 3>& center,
                            const std::array<int, 3>& size) {
  if (!mask.contains(center[0], center[1], center[2]))
    throw std::invalid_argument("extract_patch: center outside volume");
  std::array<int, 3> start{};
  for (int a = 0; a < 3; ++a) start[a] = center[a] - size[a] / 2;
  MaskGrid out(size, mask.spacing, mask.origin);
  for (int z = 0; z < size[2]; ++z)
    for (int y = 0; y < size[1]; ++y)
      for (int x = 0; x < size[0]; ++x) {
        const int sx = start[0] + x, sy = start[1] + y, sz = start[2] + z;
        out.at(x, y, z) = mask.contains(sx, sy, sz) ? mask.at(sx, sy, sz) : 0;
      }
  return out;
}

std::array<int, 3> map_center_to_spacing(const std::array<int, 3>& center,
                                         const std::array<double, 3>& from_spacing,
                                         const std::array<double, 3>& to_spacing) {
  std::array<int, 3> out{};
  for (int a = 0; a < 3; ++a)
    out[a] = static_cast<int>(std::llround(center[a] * from_spacing[a] / to_spacing[a]));
  return out;
}

// --- manifest CSV -----------------------------------------------------------

namespace {

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char c : line) {
    if (c == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (c != '\r') {
      cur.push_back(c);
    }
  }
  fields.push_back(cur);
  return fields;
}

bool trimmed_empty(const std::string& s) {
  return s.find_first_not_of(" \t\r\n") == std::string::npos;
}

}  // namespace

CohortManifest read_manifest_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("manifest: cannot open " + path.string());

  std::string header_line;
  if (!std::getline(in, header_line))
    throw std::runtime_error("manifest: empty file " + path.string());
  const auto header = split_csv_line(header_line);

  static const std::vector<std::string> fixed = {
      "record_id", "source_path", "center_i", "center_j",
      "center_k",  "diameter_mm", "split",    "diagnosis"};
  static const std::vector<std::string> optional = {"mask_path", "n_raters"};

  std::map<std::string, int> col;
  CohortManifest manifest;
  for (size_t i = 0; i < header.size(); ++i) {
    const std::string& name = header[i];
    if (col.count(name))
      throw std::runtime_error("manifest: duplicate column '" + name + "'");
    col[name] = static_cast<int>(i);
    const bool is_fixed = std::find(fixed.begin(), fixed.end(), name) != fixed.end();
    const bool is_opt = std::find(optional.begin(), optional.end(), name) != optional.end();
    if (!is_fixed && !is_opt) manifest.manifestation_names.push_back(name);
  }
  for (const auto& name : fixed)
    if (!col.count(name))
      throw std::runtime_error("manifest: missing required column '" + name + "'");

  std::string line;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trimmed_empty(line)) continue;
    const auto f = split_csv_line(line);
    if (f.size() != header.size())
      throw std::runtime_error("manifest: wrong field count at line " + std::to_string(lineno));
    ManifestEntry e;
    e.record_id = f[col["record_id"]];
    e.source_path = f[col["source_path"]];
    if (col.count("mask_path")) e.mask_path = f[col["mask_path"]];
    e.center = {std::stoi(f[col["center_i"]]), std::stoi(f[col["center_j"]]),
                std::stoi(f[col["center_k"]])};
    e.diameter_mm = std::stod(f[col["diameter_mm"]]);
    e.split = split_from_string(f[col["split"]]);
    e.diagnosis = diagnosis_from_string(f[col["diagnosis"]]);
    if (col.count("n_raters")) e.n_raters = std::stoi(f[col["n_raters"]]);
    for (const auto& name : manifest.manifestation_names) {
      const int v = std::stoi(f[col[name]]);
      if (v != 0 && v != 1)
        throw std::runtime_error("manifest: manifestation label must be 0/1 at line " +
                                 std::to_string(lineno));
      e.manifestation_labels[name] = v;
    }
    manifest.entries.push_back(std::move(e));
  }
  return manifest;
}

void write_manifest_csv(const std::filesystem::path& path, const CohortManifest& manifest) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("manifest: cannot write " + path.string());
  out << "record_id,source_path,mask_path,center_i,center_j,center_k,diameter_mm,split,"
         "n_raters,diagnosis";
  for (const auto& name : manifest.manifestation_names) out << ',' << name;
  out << '\n';
  for (const auto& e : manifest.entries) {
    out << e.record_id << ',' << e.source_path << ',' << e.mask_path << ',' << e.center[0]
        << ',' << e.center[1] << ',' << e.center[2] << ',' << e.diameter_mm << ','
        << to_string(e.split) << ',' << (e.n_raters < 0 ? 0 : e.n_raters) << ','
        << (e.diagnosis == Diagnosis::indeterminate
                ? "indeterminate"
                : std::to_string(e.diagnosis == Diagnosis::positive ? 1 : 0));
    for (const auto& name : manifest.manifestation_names)
      out << ',' << e.manifestation_labels.at(name);
    out << '\n';
  }
}

}  // namespace nodx
