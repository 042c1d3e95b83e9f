#include "nodx/volume.hpp"

#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

namespace nodx {

namespace {

struct MhaHeader {
  std::array<int, 3> dims{};
  std::array<double, 3> spacing{1, 1, 1};
  std::array<double, 3> offset{0, 0, 0};
  std::string element_type;
  size_t data_begin = 0;
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

MhaHeader parse_mha_header(std::ifstream& in, const std::filesystem::path& path) {
  MhaHeader h;
  std::string line;
  bool saw_dims = false, saw_type = false;
  while (std::getline(in, line)) {
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("MHA: malformed header line in " + path.string());
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    if (key == "NDims") {
      if (val != "3") throw std::runtime_error("MHA: only NDims = 3 supported: " + path.string());
    } else if (key == "DimSize") {
      std::istringstream is(val);
      is >> h.dims[0] >> h.dims[1] >> h.dims[2];
      if (!is) throw std::runtime_error("MHA: bad DimSize in " + path.string());
      saw_dims = true;
    } else if (key == "ElementSpacing") {
      std::istringstream is(val);
      is >> h.spacing[0] >> h.spacing[1] >> h.spacing[2];
    } else if (key == "Offset" || key == "Position" || key == "Origin") {
      std::istringstream is(val);
      is >> h.offset[0] >> h.offset[1] >> h.offset[2];
    } else if (key == "ElementType") {
      h.element_type = val;
      saw_type = true;
    } else if (key == "BinaryData") {
      if (val != "True" && val != "true")
        throw std::runtime_error("MHA: only binary data supported: " + path.string());
    } else if (key == "CompressedData") {
      if (val != "False" && val != "false")
        throw std::runtime_error("MHA: compressed data not supported: " + path.string());
    } else if (key == "BinaryDataByteOrderMSB" || key == "ElementByteOrderMSB") {
      if (val != "False" && val != "false")
        throw std::runtime_error("MHA: big-endian data not supported: " + path.string());
    } else if (key == "ElementDataFile") {
      if (val != "LOCAL")
        throw std::runtime_error("MHA: only ElementDataFile = LOCAL supported: " + path.string());
      break;
    }
    // Other keys (ObjectType, TransformMatrix, ...) are ignored.
  }
  if (!saw_dims || !saw_type)
    throw std::runtime_error("MHA: incomplete header in " + path.string());
  h.data_begin = static_cast<size_t>(in.tellg());
  return h;
}

template <class Raw, class T>
void read_raw_as(std::ifstream& in, size_t n, std::vector<T>& out) {
  std::vector<Raw> buf(n);
  in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n * sizeof(Raw)));
  if (!in) throw std::runtime_error("MHA: truncated data section");
  out.resize(n);
  for (size_t i = 0; i < n; ++i) out[i] = static_cast<T>(buf[i]);
}

template <class T>
Grid3<T> read_mha_as(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("MHA: cannot open " + path.string());
  const MhaHeader h = parse_mha_header(in, path);
  Grid3<T> g(h.dims, h.spacing, h.offset);
  const size_t n = g.numel();
  if (h.element_type == "MET_DOUBLE")
    read_raw_as<double>(in, n, g.values);
  else if (h.element_type == "MET_FLOAT")
    read_raw_as<float>(in, n, g.values);
  else if (h.element_type == "MET_SHORT")
    read_raw_as<int16_t>(in, n, g.values);
  else if (h.element_type == "MET_USHORT")
    read_raw_as<uint16_t>(in, n, g.values);
  else if (h.element_type == "MET_UCHAR")
    read_raw_as<uint8_t>(in, n, g.values);
  else if (h.element_type == "MET_CHAR")
    read_raw_as<int8_t>(in, n, g.values);
  else if (h.element_type == "MET_INT")
    read_raw_as<int32_t>(in, n, g.values);
  else
    throw std::runtime_error("MHA: unsupported ElementType " + h.element_type);
  return g;
}

template <class T>
void write_mha(const std::filesystem::path& path, const Grid3<T>& g,
               const char* element_type) {
  g.validate();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("MHA: cannot write " + path.string());
  out << "ObjectType = Image\n"
      << "NDims = 3\n"
      << "BinaryData = True\n"
      << "BinaryDataByteOrderMSB = False\n"
      << "CompressedData = False\n"
      << "TransformMatrix = 1 0 0 0 1 0 0 0 1\n";
  out << "Offset = " << g.origin[0] << ' ' << g.origin[1] << ' ' << g.origin[2] << '\n';
  out << "ElementSpacing = " << g.spacing[0] << ' ' << g.spacing[1] << ' ' << g.spacing[2]
      << '\n';
  out << "DimSize = " << g.extents[0] << ' ' << g.extents[1] << ' ' << g.extents[2] << '\n';
  out << "ElementType = " << element_type << '\n';
  out << "ElementDataFile = LOCAL\n";
  out.write(reinterpret_cast<const char*>(g.values.data()),
            static_cast<std::streamsize>(g.values.size() * sizeof(T)));
  if (!out) throw std::runtime_error("MHA: write failed for " + path.string());
}

std::map<std::string, VolumeReader>& reader_registry() {
  static std::map<std::string, VolumeReader> registry = {
      {".mha", [](const std::filesystem::path& p) { return read_volume_mha(p); }}};
  return registry;
}

}  // namespace

VolumeGrid read_volume_mha(const std::filesystem::path& path) {
  return read_mha_as<double>(path);
}

MaskGrid read_mask_mha(const std::filesystem::path& path) {
  auto g = read_mha_as<double>(path);
  MaskGrid m(g.extents, g.spacing, g.origin);
  for (size_t i = 0; i < g.values.size(); ++i) m.values[i] = g.values[i] != 0.0 ? 1 : 0;
  return m;
}

void write_volume_mha(const std::filesystem::path& path, const VolumeGrid& v) {
  write_mha(path, v, "MET_DOUBLE");
}

void write_mask_mha(const std::filesystem::path& path, const MaskGrid& m) {
  write_mha(path, m, "MET_UCHAR");
}

void register_volume_reader(const std::string& extension, VolumeReader reader) {
  reader_registry()[extension] = std::move(reader);
}

VolumeGrid read_volume(const std::filesystem::path& path) {
  const std::string ext = path.extension().string();
  const auto& registry = reader_registry();
  const auto it = registry.find(ext);
  if (it == registry.end())
    throw std::runtime_error("no volume reader registered for extension '" + ext + "'");
  return it->second(path);
}

}  // namespace nodx
