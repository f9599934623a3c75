#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <sstream>

#include "atom/io.hpp"

using namespace atom;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "atom_test_io";
  fs::create_directories(dir);
  return dir / name;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// Minimal reader written against the PLY 1.0 layout, independent of read_ply.
struct MiniPly {
  std::string header;
  std::vector<float> xyz;
  std::vector<unsigned char> rgb;
  std::vector<int> idx;
};

MiniPly mini_read_ply(const fs::path& p) {
  const auto bytes = slurp(p);
  const auto end = bytes.find("end_header\n");
  REQUIRE(end != std::string::npos);
  MiniPly m;
  m.header = bytes.substr(0, end);
  std::istringstream hs(m.header);
  std::string line;
  std::size_t nv = 0, nf = 0;
  while (std::getline(hs, line)) {
    if (line.rfind("element vertex ", 0) == 0) nv = std::stoul(line.substr(15));
    if (line.rfind("element face ", 0) == 0) nf = std::stoul(line.substr(13));
  }
  std::size_t at = end + 11;
  for (std::size_t v = 0; v < nv; ++v) {
    for (int k = 0; k < 3; ++k) {
      float f;
      std::memcpy(&f, bytes.data() + at, 4);
      at += 4;
      m.xyz.push_back(f);
    }
    for (int k = 0; k < 3; ++k) m.rgb.push_back(static_cast<unsigned char>(bytes[at++]));
  }
  for (std::size_t f = 0; f < nf; ++f) {
    REQUIRE(static_cast<unsigned char>(bytes[at++]) == 3);
    for (int k = 0; k < 3; ++k) {
      std::int32_t i;
      std::memcpy(&i, bytes.data() + at, 4);
      at += 4;
      m.idx.push_back(i);
    }
  }
  CHECK(at == bytes.size());
  return m;
}

PlyMesh triangle(double c) {
  PlyMesh m;
  m.positions = {0.f, 0.f, 0.f, 1.f, 0.f, 0.f, 0.f, 1.f, 0.25f};
  m.colors.assign(9, to_byte(c));
  m.faces = {{0, 1, 2}};
  return m;
}

}  // namespace

TEST_CASE("ply header declares counts and property types") {
  const auto path = scratch("tri.ply");
  write_ply(triangle(0.5), path);
  const auto m = mini_read_ply(path);
  CHECK(m.header.find("format binary_little_endian 1.0\n") != std::string::npos);
  CHECK(m.header.find("\nelement vertex 3\n") != std::string::npos);
  CHECK(m.header.find("\nelement face 1\n") != std::string::npos);
  CHECK(m.header.find("property float x\nproperty float y\nproperty float z\n") != std::string::npos);
  CHECK(m.header.find("property uchar red\nproperty uchar green\nproperty uchar blue\n") != std::string::npos);
  CHECK(m.header.find("property list uchar int vertex_indices") != std::string::npos);
  CHECK(m.rgb == std::vector<unsigned char>(9, 128));
  CHECK(m.idx == std::vector<int>{0, 1, 2});
}

TEST_CASE("color rounding") {
  CHECK(to_byte(0.5) == 128);
  CHECK(to_byte(0.0) == 0);
  CHECK(to_byte(1.0) == 255);
  CHECK(to_byte(-0.2) == 0);
  CHECK(to_byte(7.0) == 255);
  CHECK(to_byte(1.0 / 255.0) == 1);
  CHECK(to_byte(0.499 / 255.0) == 0);
}

TEST_CASE("ply round trip from a marched mesh") {
  // A real extracted mesh, so positions carry arbitrary float bits.
  const auto grid = build_grid(6, 1.0);
  GridField<float> field;
  std::vector<float> sdf, colors;
  std::mt19937 rng(4);
  std::uniform_real_distribution<float> u(0.f, 1.f);
  for (const auto& p : grid.lattice) {
    sdf.push_back(static_cast<float>(length(p) - 0.61));
    for (int c = 0; c < 3; ++c) colors.push_back(u(rng));
  }
  field.sdf = Tensor<float>::from_vector({static_cast<std::int64_t>(sdf.size())}, sdf);
  field.colors = Tensor<float>::from_vector({static_cast<std::int64_t>(sdf.size()), 3}, colors);
  const auto mesh = march_tets(grid, field);
  REQUIRE(mesh.faces.size() > 50);
  const auto path = scratch("sphere.ply");
  write_ply(mesh, path);

  const auto pos = mesh.positions.to_vector();
  const auto col = mesh.colors.to_vector();
  const auto mini = mini_read_ply(path);
  const auto back = read_ply(path);
  REQUIRE(mini.xyz.size() == pos.size());
  CHECK(std::memcmp(mini.xyz.data(), pos.data(), pos.size() * sizeof(float)) == 0);
  CHECK(std::memcmp(back.positions.data(), pos.data(), pos.size() * sizeof(float)) == 0);
  REQUIRE(back.faces.size() == mesh.faces.size());
  for (std::size_t f = 0; f < mesh.faces.size(); ++f) {
    CHECK(back.faces[f] == mesh.faces[f]);
    for (int k = 0; k < 3; ++k) CHECK(mini.idx[f * 3 + static_cast<std::size_t>(k)] == mesh.faces[f][static_cast<std::size_t>(k)]);
  }
  for (std::size_t i = 0; i < col.size(); ++i) {
    CHECK(std::abs(back.colors[i] / 255.0 - col[i]) <= 0.5 / 255.0 + 1e-9);
    CHECK(back.colors[i] == mini.rgb[i]);
  }
  // Rewriting what was read is byte-identical.
  const auto again = scratch("sphere2.ply");
  write_ply(back, again);
  CHECK(slurp(again) == slurp(path));
}

TEST_CASE("ply errors") {
  CHECK_THROWS_AS(read_ply(scratch("does_not_exist.ply")), IoError);
  auto bad = triangle(0.2);
  bad.faces = {{0, 1, 3}};
  CHECK_THROWS_AS(write_ply(bad, scratch("bad.ply")), IoError);
  CHECK_THROWS_AS(write_ply(triangle(0.2), "/nonexistent_dir_atom/x.ply"), IoError);
  const auto path = scratch("trunc.ply");
  write_ply(triangle(0.3), path);
  auto bytes = slurp(path);
  bytes.resize(bytes.size() - 5);
  std::ofstream(path, std::ios::binary) << bytes;
  CHECK_THROWS_AS(read_ply(path), IoError);
  std::ofstream(path, std::ios::binary) << "ply\nformat ascii 1.0\nend_header\n";
  CHECK_THROWS_AS(read_ply(path), IoError);
  // An empty mesh is still a valid file.
  write_ply(PlyMesh{}, path);
  const auto e = read_ply(path);
  CHECK(e.positions.empty());
  CHECK(e.faces.empty());
}

TEST_CASE("ppm byte layout") {
  const auto white = scratch("white.ppm");
  const std::vector<float> w{1.f, 1.f, 1.f};
  write_ppm(w, 1, 1, white);
  const auto wb = slurp(white);
  CHECK(wb == std::string("P6\n1 1\n255\n\xff\xff\xff", 14));

  const auto two = scratch("two.ppm");
  const std::vector<float> px{0.f, 0.f, 0.f, 1.f, 0.f, 0.f};
  write_ppm(px, 2, 1, two);
  const auto tb = slurp(two);
  const std::string payload = tb.substr(tb.size() - 6);
  CHECK(payload == std::string("\x00\x00\x00\xff\x00\x00", 6));
}

TEST_CASE("ppm round trip and errors") {
  std::mt19937 rng(11);
  std::uniform_real_distribution<float> u(0.f, 1.f);
  std::vector<float> img(7 * 5 * 3);
  for (auto& v : img) v = u(rng);
  const auto path = scratch("rand.ppm");
  write_ppm(img, 7, 5, path);
  const auto back = read_ppm(path);
  CHECK(back.width == 7);
  CHECK(back.height == 5);
  REQUIRE(back.rgb.size() == img.size());
  for (std::size_t i = 0; i < img.size(); ++i) CHECK(std::abs(back.rgb[i] / 255.0 - img[i]) <= 1.0 / 255.0);

  CHECK_THROWS_AS(write_ppm(img, 6, 5, path), IoError);
  CHECK_THROWS_AS(read_ppm(scratch("nope.ppm")), IoError);
  std::ofstream(path, std::ios::binary) << "P6\n# comment\n2 2\n255\n\x01\x02";
  CHECK_THROWS_AS(read_ppm(path), IoError);
  std::ofstream(path, std::ios::binary) << "P3\n1 1\n255\n0 0 0\n";
  CHECK_THROWS_AS(read_ppm(path), IoError);
  std::ofstream(path, std::ios::binary) << "P6\n# made by hand\n1 1\n255\n\x10\x20\x30";
  const auto c = read_ppm(path);
  CHECK(c.rgb == std::vector<std::uint8_t>{0x10, 0x20, 0x30});
}

TEST_CASE("run config: defaults, strictness, round trip") {
  const auto c = run_config_from_json(nlohmann::json::object());
  CHECK(c.train.seen.size() == 12);
  CHECK(c.train.unseen.size() == 4);
  CHECK(c.guidance == "oracle");
  const auto spec = c.dataset_spec();
  REQUIRE(spec.profiles.size() == 3);
  CHECK(spec.profiles[0].name == "stage1");
  CHECK(spec.profiles[0].width == c.train.stage1.resolution);
  CHECK(spec.profiles[1].width == c.train.stage2.resolution);
  CHECK(spec.profiles[2].name == "eval");
  CHECK(spec.distance == c.train.cameras.distance);

  nlohmann::json j = {{"dataset_dir", "/tmp/d"},
                      {"guidance", "tcp:localhost:7000"},
                      {"dataset", {{"rows", 3}, {"cols", 3}}},
                      {"export", {{"grid_resolution", 40}}},
                      {"stage1", {{"lr", 1e-3}}}};
  const auto r = run_config_from_json(j);
  CHECK(r.dataset_dir == fs::path("/tmp/d"));
  CHECK(r.train.stage1.lr == 1e-3);
  CHECK(r.train.seen.size() == 6);
  CHECK(r.export_options.grid_resolution == 40);
  const auto r2 = run_config_from_json(to_json(r));
  CHECK(to_json(r2) == to_json(r));

  auto message = [](const nlohmann::json& bad) {
    try {
      run_config_from_json(bad);
    } catch (const ConfigError& e) {
      return std::string(e.what());
    }
    return std::string("no error");
  };
  CHECK(message({{"datset_dir", "x"}}).find("datset_dir") != std::string::npos);
  CHECK(message({{"dataset", {{"rowz", 2}}}}).find("dataset.rowz") != std::string::npos);
  CHECK(message({{"export", {{"grid", 2}}}}).find("export.grid") != std::string::npos);
  CHECK(message({{"stage2", {{"itersations", 2}}}}).find("stage2.itersations") != std::string::npos);
  CHECK(message({{"guidance", "carrier-pigeon"}}).find("guidance") != std::string::npos);
  CHECK(message({{"log_every", "often"}}).find("log_every") != std::string::npos);
  CHECK(message(nlohmann::json::array()) != "no error");

  const auto file = scratch("cfg.json");
  std::ofstream(file) << "{ \"seed\": 9, ";
  CHECK_THROWS_AS(load_run_config(file), ConfigError);
  CHECK_THROWS_AS(load_run_config(scratch("missing.json")), ConfigError);
}
