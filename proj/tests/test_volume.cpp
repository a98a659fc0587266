#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>

#include <unistd.h>

#include "evofcn/errors.hpp"
#include "evofcn/volume.hpp"
#include "oracles.hpp"

using namespace evofcn;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("evofcn_volume_" + std::to_string(::getpid()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

void write_raw(const fs::path& p, const std::string& header, const std::string& payload) {
  std::ofstream out(p, std::ios::binary);
  out << header << "\n" << payload;
}

ScalarGrid random_scalar(Rng& rng, Shape3 d) {
  ScalarGrid g(d, {0.5, 0.75, 1.5});
  for (auto& v : g.data) v = static_cast<float>(rng.uniform(-100, 100));
  return g;
}

}  // namespace

TEST_CASE("SVOL round trip") {
  TempDir tmp;
  Rng rng(1);
  SUBCASE("labels") {
    LabelGrid g({5, 4, 3}, {1.0, 1.0, 1.5});
    for (auto& v : g.data) v = static_cast<std::uint8_t>(rng.below(4));
    write_volume(g, tmp.path / "l.svol");
    const auto back = read_label_volume(tmp.path / "l.svol");
    CHECK(back == g);
    CHECK(std::holds_alternative<LabelGrid>(read_volume(tmp.path / "l.svol")));
  }
  SUBCASE("scalars, including awkward floats") {
    ScalarGrid g = random_scalar(rng, {3, 3, 2});
    g.data[0] = -0.0f;
    g.data[1] = 1e-40f;  // subnormal
    g.data[2] = 3.4028235e38f;
    write_volume(g, tmp.path / "s.svol");
    const auto back = read_scalar_volume(tmp.path / "s.svol");
    CHECK(back.dims == g.dims);
    CHECK(back.spacing == g.spacing);
    CHECK(std::memcmp(back.data.data(), g.data.data(), g.data.size() * 4) == 0);
  }
  SUBCASE("header line and little-endian payload") {
    ScalarGrid g({2, 1, 1}, {1, 1, 1.5});
    g.data = {1.0f, -2.0f};
    write_volume(g, tmp.path / "h.svol");
    std::ifstream in(tmp.path / "h.svol", std::ios::binary);
    std::string line;
    std::getline(in, line);
    CHECK(line == R"({"magic":"SVOL1","dims":[2,1,1],"spacing":[1.0,1.0,1.5],"dtype":"f32"})");
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    CHECK(in.gcount() == 8);
    const unsigned char want[8] = {0x00, 0x00, 0x80, 0x3f, 0x00, 0x00, 0x00, 0xc0};
    CHECK(std::memcmp(b, want, 8) == 0);
    CHECK(in.peek() == EOF);
  }
  SUBCASE("files written by hand are readable") {
    write_raw(tmp.path / "m.svol", R"({"magic":"SVOL1","dims":[3,1,1],"spacing":[2,2,2],"dtype":"u8","note":"x"})",
              std::string("\x01\x00\x02", 3));
    const auto g = read_label_volume(tmp.path / "m.svol");
    CHECK(g.data == std::vector<std::uint8_t>{1, 0, 2});
    CHECK(g.spacing == Spacing{2, 2, 2});
  }
}

TEST_CASE("SVOL errors") {
  TempDir tmp;
  const std::string ok = R"({"magic":"SVOL1","dims":[2,2,1],"spacing":[1,1,1],"dtype":"u8"})";
  write_raw(tmp.path / "short.svol", ok, std::string(3, '\1'));
  CHECK_THROWS_AS(read_volume(tmp.path / "short.svol"), IoError);
  write_raw(tmp.path / "long.svol", ok, std::string(5, '\1'));
  CHECK_THROWS_AS(read_volume(tmp.path / "long.svol"), IoError);
  write_raw(tmp.path / "magic.svol", R"({"magic":"SVOL2","dims":[2,2,1],"spacing":[1,1,1],"dtype":"u8"})",
            std::string(4, '\1'));
  CHECK_THROWS_AS(read_volume(tmp.path / "magic.svol"), IoError);
  write_raw(tmp.path / "dtype.svol", R"({"magic":"SVOL1","dims":[2,2,1],"spacing":[1,1,1],"dtype":"f64"})",
            std::string(32, '\1'));
  CHECK_THROWS_AS(read_volume(tmp.path / "dtype.svol"), IoError);
  write_raw(tmp.path / "json.svol", "not json", "");
  CHECK_THROWS_AS(read_volume(tmp.path / "json.svol"), IoError);
  CHECK_THROWS_AS(read_volume(tmp.path / "missing.svol"), IoError);
  CHECK_THROWS_AS(read_scalar_volume((write_raw(tmp.path / "u8.svol", ok, std::string(4, '\1')), tmp.path / "u8.svol")),
                  IoError);
  CHECK_THROWS_AS(write_volume(LabelGrid({0, 1, 1}, {1, 1, 1}), tmp.path / "empty.svol"), ValidationError);
}

TEST_CASE("probability map files") {
  TempDir tmp;
  ProbabilityMap m;
  ScalarGrid c0({4, 4, 2}, {1, 1, 2}), c1 = c0;
  Rng rng(2);
  for (std::size_t i = 0; i < c0.size(); ++i) {
    c0.data[i] = static_cast<float>(rng.uniform());
    c1.data[i] = 1.0f - c0.data[i];
  }
  m.classes = {c0, c1};
  write_probability_map(m, tmp.path / "case.json");
  const auto idx = nlohmann::json::parse(std::ifstream(tmp.path / "case.json"));
  CHECK(idx.at("format") == "SVOL-PROB1");
  CHECK(idx.at("classes").size() == 2);
  const auto back = read_probability_map(tmp.path / "case.json");
  REQUIRE(back.n_classes() == 2);
  CHECK(back.classes[0] == c0);
  CHECK(back.classes[1] == c1);
  CHECK_NOTHROW(validate_probability_map(back));
  m.classes[1].data[0] += 0.01f;
  CHECK_THROWS_AS(validate_probability_map(m), ValidationError);
}

TEST_CASE("normalize_intensity") {
  SUBCASE("constant volume") {
    ScalarGrid g({3, 3, 3}, {1, 1, 1}, 42.0f);
    for (float v : normalize_intensity(g).data) CHECK(v == 0.0f);
  }
  SUBCASE("range is exactly [0, 1]") {
    Rng rng(3);
    for (int t = 0; t < 20; ++t) {
      const auto out = normalize_intensity(random_scalar(rng, {6, 5, 4}));
      CHECK(*std::min_element(out.data.begin(), out.data.end()) == 0.0f);
      CHECK(*std::max_element(out.data.begin(), out.data.end()) == 1.0f);
    }
  }
  SUBCASE("an outlier is clipped before rescaling") {
    Rng rng(4);
    ScalarGrid g({10, 10, 10}, {1, 1, 1});
    for (auto& v : g.data) v = static_cast<float>(rng.uniform(0, 1));
    g.data[123] = 1e6f;
    const auto out = normalize_intensity(g);
    const auto ref = oracle::normalize(g.data);
    for (std::size_t i = 0; i < ref.size(); ++i) REQUIRE(std::abs(out.data[i] - ref[i]) < 1e-5);
    CHECK(out.data[123] == 1.0f);
    // Unclipped, the unit-interval voxels would top out near 1e-6.
    CHECK(*std::max_element(out.data.begin(), out.data.begin() + 123) > 5e-6f);
  }
}

TEST_CASE("resample_volume") {
  Rng rng(5);
  SUBCASE("identity") {
    const auto g = random_scalar(rng, {7, 6, 5});
    CHECK(resample_volume(g, g.spacing, g.dims, Interpolation::trilinear) == g);
    CHECK(resample_volume(g, g.spacing, g.dims, Interpolation::nearest) == g);
  }
  SUBCASE("nearest up then down recovers labels") {
    LabelGrid g({5, 4, 3}, {1, 1, 1.5});
    for (auto& v : g.data) v = static_cast<std::uint8_t>(rng.below(3));
    const auto up = resample_volume(g, {0.5, 0.5, 0.75}, {10, 8, 6});
    for (int z = 0; z < 6; ++z)
      for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 10; ++x) REQUIRE(up.at(x, y, z) == g.at(x / 2, y / 2, z / 2));
    CHECK(resample_volume(up, g.spacing, g.dims) == g);
  }
  SUBCASE("nearest never invents labels") {
    LabelGrid g({9, 7, 5}, {1, 1, 1});
    for (auto& v : g.data) v = rng.bernoulli(0.5) ? 2 : 5;
    const auto out = resample_volume(g, {0.7, 1.3, 0.9}, {13, 5, 6});
    for (auto v : out.data) CHECK((v == 2 || v == 5));
  }
  SUBCASE("trilinear reproduces a linear ramp") {
    const Shape3 d{8, 6, 5};
    const Spacing s{1, 1, 1.5};
    ScalarGrid g(d, s);
    auto ramp = [](double x, double y, double z) { return 2.0 * x - 0.5 * y + 0.25 * z + 3.0; };
    // Physical coordinates relative to the shared centre.
    auto phys = [](int i, int n, double sp) { return (i - (n - 1) / 2.0) * sp; };
    for (int z = 0; z < d[2]; ++z)
      for (int y = 0; y < d[1]; ++y)
        for (int x = 0; x < d[0]; ++x)
          g.at(x, y, z) = static_cast<float>(ramp(phys(x, d[0], s[0]), phys(y, d[1], s[1]), phys(z, d[2], s[2])));
    const Shape3 td{11, 7, 6};
    const Spacing ts{0.6, 0.75, 1.1};
    const auto out = resample_volume(g, ts, td, Interpolation::trilinear);
    for (int z = 0; z < td[2]; ++z)
      for (int y = 0; y < td[1]; ++y)
        for (int x = 0; x < td[0]; ++x)
          REQUIRE(std::abs(out.at(x, y, z) - ramp(phys(x, td[0], ts[0]), phys(y, td[1], ts[1]),
                                                   phys(z, td[2], ts[2]))) < 1e-4);
  }
  SUBCASE("trilinear on labels is rejected") {
    LabelGrid g({2, 2, 2}, {1, 1, 1});
    CHECK_THROWS_AS(resample_volume(g, {1, 1, 1}, {2, 2, 2}, Interpolation::trilinear), ValidationError);
  }
}

TEST_CASE("kfold_split") {
  SUBCASE("fifty items in five folds") {
    const auto folds = kfold_split(50, 5, 9);
    REQUIRE(folds.size() == 5);
    std::set<int> all;
    for (const auto& f : folds) {
      CHECK(f.validation.size() == 10);
      CHECK(f.train.size() == 40);
      for (int i : f.validation) CHECK(all.insert(i).second);
      for (int i : f.validation) CHECK(std::find(f.train.begin(), f.train.end(), i) == f.train.end());
    }
    CHECK(all.size() == 50);
  }
  SUBCASE("singletons") {
    for (const auto& f : kfold_split(5, 5, 1)) CHECK(f.validation.size() == 1);
  }
  SUBCASE("uneven sizes") {
    const auto folds = kfold_split(12, 5, 1);
    std::vector<std::size_t> sizes;
    for (const auto& f : folds) sizes.push_back(f.validation.size());
    CHECK(sizes == std::vector<std::size_t>{3, 3, 2, 2, 2});
  }
  SUBCASE("determinism and seed sensitivity") {
    CHECK(kfold_split(50, 5, 3)[0].validation == kfold_split(50, 5, 3)[0].validation);
    CHECK(kfold_split(50, 5, 3)[0].validation != kfold_split(50, 5, 4)[0].validation);
  }
  CHECK_THROWS_AS(kfold_split(4, 5, 1), ValidationError);
}
