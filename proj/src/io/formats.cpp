#include <fmt/format.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "atom/binary_io.hpp"
#include "atom/io.hpp"

namespace atom {

namespace {

// Next whitespace-delimited token of a PPM header, skipping comments.
std::string ppm_token(std::istream& in) {
  std::string tok;
  char c = 0;
  while (in.get(c)) {
    if (c == '#') {
      std::string rest;
      std::getline(in, rest);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!tok.empty()) return tok;
      continue;
    }
    tok.push_back(c);
  }
  return tok;
}

int ppm_int(std::istream& in, const std::filesystem::path& path) {
  const auto tok = ppm_token(in);
  try {
    std::size_t used = 0;
    const int v = std::stoi(tok, &used);
    if (used != tok.size()) throw std::invalid_argument(tok);
    return v;
  } catch (const std::exception&) {
    throw IoError(fmt::format("{}: bad PPM header field '{}'", path.string(), tok));
  }
}

}  // namespace

std::uint8_t to_byte(double v) {
  if (!(v > 0.0)) return 0;
  if (v >= 1.0) return 255;
  return static_cast<std::uint8_t>(std::lround(255.0 * v));
}

void write_ply(const PlyMesh& mesh, const std::filesystem::path& path) {
  const auto nv = mesh.positions.size() / 3;
  if (mesh.positions.size() % 3 != 0 || mesh.colors.size() != nv * 3)
    throw IoError(fmt::format("{}: vertex arrays disagree", path.string()));
  for (const auto& f : mesh.faces)
    for (auto i : f)
      if (i < 0 || static_cast<std::size_t>(i) >= nv) throw IoError(fmt::format("{}: face index {} out of range", path.string(), i));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(fmt::format("cannot write {}", path.string()));
  out << "ply\nformat binary_little_endian 1.0\ncomment atom mesh export\n"
      << "element vertex " << nv << "\n"
      << "property float x\nproperty float y\nproperty float z\n"
      << "property uchar red\nproperty uchar green\nproperty uchar blue\n"
      << "element face " << mesh.faces.size() << "\n"
      << "property list uchar int vertex_indices\nend_header\n";
  for (std::size_t v = 0; v < nv; ++v) {
    le::put_floats(out, mesh.positions.data() + v * 3, 3);
    out.write(reinterpret_cast<const char*>(mesh.colors.data() + v * 3), 3);
  }
  for (const auto& f : mesh.faces) {
    le::put<std::uint8_t>(out, 3);
    for (auto i : f) le::put<std::int32_t>(out, i);
  }
  if (!out) throw IoError(fmt::format("write failed: {}", path.string()));
}

void write_ply(const TriMesh<float>& mesh, const std::filesystem::path& path) {
  PlyMesh m;
  if (mesh.vertex_count() > 0) {
    m.positions = mesh.positions.to_vector();
    for (float c : mesh.colors.to_vector()) m.colors.push_back(to_byte(c));
  }
  m.faces = mesh.faces;
  write_ply(m, path);
}

PlyMesh read_ply(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("missing PLY file {}", path.string()));
  std::string line;
  std::vector<std::string> header;
  while (std::getline(in, line)) {
    if (line == "end_header") break;
    header.push_back(line);
  }
  if (!in || header.empty() || header[0] != "ply") throw IoError(fmt::format("{}: not a PLY file", path.string()));
  const std::vector<std::string> expected_props{"property float x",        "property float y",         "property float z",
                                                "property uchar red",      "property uchar green",     "property uchar blue"};
  std::size_t nv = 0, nf = 0;
  bool le_format = false;
  std::vector<std::string> props;
  std::string list_prop;
  for (const auto& h : header) {
    std::istringstream ss(h);
    std::string word;
    ss >> word;
    if (word == "format") le_format = h == "format binary_little_endian 1.0";
    if (word == "element") {
      std::string what;
      std::size_t n = 0;
      ss >> what >> n;
      (what == "vertex" ? nv : nf) = n;
    }
    if (word == "property") (h.find("list") != std::string::npos ? list_prop : props.emplace_back()) = h;
  }
  if (!le_format || props != expected_props || list_prop != "property list uchar int vertex_indices")
    throw IoError(fmt::format("{}: unsupported PLY layout", path.string()));
  PlyMesh m;
  m.positions.resize(nv * 3);
  m.colors.resize(nv * 3);
  try {
    for (std::size_t v = 0; v < nv; ++v) {
      le::get_floats(in, m.positions.data() + v * 3, 3);
      for (int c = 0; c < 3; ++c) m.colors[v * 3 + static_cast<std::size_t>(c)] = le::get<std::uint8_t>(in);
    }
    m.faces.resize(nf);
    for (auto& f : m.faces) {
      if (le::get<std::uint8_t>(in) != 3) throw IoError(fmt::format("{}: non-triangle face", path.string()));
      for (auto& i : f) i = le::get<std::int32_t>(in);
    }
  } catch (const IoError&) {
    throw;
  } catch (const std::runtime_error& e) {
    throw IoError(fmt::format("{}: {}", path.string(), e.what()));
  }
  return m;
}

void write_ppm(std::span<const float> rgb, int width, int height, const std::filesystem::path& path) {
  if (width <= 0 || height <= 0 || rgb.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * 3)
    throw IoError(fmt::format("{}: image buffer does not match {}x{}", path.string(), width, height));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError(fmt::format("cannot write {}", path.string()));
  out << "P6\n" << width << " " << height << "\n255\n";
  std::vector<char> bytes(rgb.size());
  for (std::size_t i = 0; i < rgb.size(); ++i) bytes[i] = static_cast<char>(to_byte(rgb[i]));
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError(fmt::format("write failed: {}", path.string()));
}

Image read_ppm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(fmt::format("missing PPM file {}", path.string()));
  if (ppm_token(in) != "P6") throw IoError(fmt::format("{}: not a binary PPM", path.string()));
  Image img;
  img.width = ppm_int(in, path);
  img.height = ppm_int(in, path);
  if (ppm_int(in, path) != 255 || img.width <= 0 || img.height <= 0)
    throw IoError(fmt::format("{}: unsupported PPM header", path.string()));
  img.rgb.resize(static_cast<std::size_t>(img.width) * static_cast<std::size_t>(img.height) * 3);
  in.read(reinterpret_cast<char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
  if (!in) throw IoError(fmt::format("{}: truncated pixel data", path.string()));
  return img;
}

}  // namespace atom
