#include <gtest/gtest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

#include "oracles.hpp"
#include "svin/io.hpp"
#include "svin/phantom.hpp"

using namespace svin;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("svin_test_phantom_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::size_t count_on(const Volume& m) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < m.size(); ++i) n += m[i] > 0.5f;
  return n;
}

ParseError::Kind parse_kind(const std::vector<std::uint8_t>& bytes) {
  try {
    decode_svv(bytes);
  } catch (const ParseError& e) {
    return e.kind();
  }
  ADD_FAILURE() << "decode succeeded";
  return ParseError::Kind::bad_header;
}

}  // namespace

TEST(PhantomSpec, Validation) {
  PhantomSpec s;
  EXPECT_TRUE(s.validate().empty());
  s.radii[2] = 15;
  s.alpha = 1.0;
  const auto errs = s.validate();
  ASSERT_EQ(errs.size(), 2u);
  EXPECT_NE(errs[0].find("exceeds the grid along x"), std::string::npos);
  EXPECT_THROW(generate_phantom(s, 3), ValidationError);
  EXPECT_THROW(generate_phantom(PhantomSpec{}, 2), ValidationError);
}

TEST(GeneratePhantom, NoMotionGivesIdenticalPhases) {
  PhantomSpec s;
  s.alpha = 0;
  s.twist = 0;
  s.noise = 0;
  const auto p = generate_phantom(s, 5);
  EXPECT_TRUE(p.es == p.ed);
  for (const auto& f : p.intermediates) EXPECT_TRUE(f.volume == p.ed);
}

TEST(GeneratePhantom, LinearLawHalvesField) {
  PhantomSpec s;
  s.exponent = 1;
  const auto p = generate_phantom(s, 3);
  ASSERT_EQ(p.intermediates.size(), 1u);
  EXPECT_EQ(p.intermediates[0].t, 0.5);
  const auto& mid = *p.intermediates[0].true_field;
  const auto& es = *p.es_field;
  for (std::size_t i = 0; i < mid.tensor().size(); ++i) EXPECT_EQ(mid.tensor()[i], 0.5f * es.tensor()[i]);
}

TEST(GeneratePhantom, SeedDeterminism) {
  PhantomSpec s = PhantomSpec::for_dims(Dims{48, 48, 48});
  s.alpha = 0.3;
  s.exponent = 2;
  s.twist = 0.3;
  s.noise = 0.01;
  s.seed = 7;
  const auto a = generate_phantom(s, 5), b = generate_phantom(s, 5);
  EXPECT_TRUE(a.ed == b.ed && a.es == b.es);
  for (std::size_t k = 0; k < a.intermediates.size(); ++k) EXPECT_TRUE(a.intermediates[k].volume == b.intermediates[k].volume);
  s.seed = 8;
  EXPECT_FALSE(generate_phantom(s, 5).ed == a.ed);
}

TEST(GeneratePhantom, ShellShrinksMonotonically) {
  const auto p = generate_phantom(PhantomSpec{}, 6);
  std::vector<std::size_t> sizes{count_on(*p.ed_mask)};
  for (const auto& f : p.intermediates) sizes.push_back(count_on(*f.mask));
  sizes.push_back(count_on(*p.es_mask));
  for (std::size_t k = 1; k < sizes.size(); ++k) EXPECT_LE(sizes[k], sizes[k - 1]) << k;
  EXPECT_LT(sizes.back(), sizes.front());
}

TEST(GeneratePhantom, PhasesAreWarpsOfEd) {
  PhantomSpec s;
  s.noise = 0;
  const auto p = generate_phantom(s, 5);
  const Volume clean = phantom_ed_image(s);
  EXPECT_TRUE(p.ed == clean);
  const Tensor<double> es = oracle::warp(clean.tensor(), p.es_field->tensor());
  for (std::size_t i = 0; i < es.size(); ++i) EXPECT_NEAR(p.es[i], es[i], 1e-5);
  for (const auto& f : p.intermediates) {
    const Tensor<double> ref = oracle::warp(clean.tensor(), f.true_field->tensor());
    for (std::size_t i = 0; i < ref.size(); ++i) ASSERT_NEAR(f.volume[i], ref[i], 1e-5);
  }
}

TEST(GeneratePhantom, NonlinearTimeLaw) {
  PhantomSpec s;
  s.exponent = 2;
  const auto p = generate_phantom(s, 5);
  const auto unit = phantom_unit_field(s);
  for (const auto& f : p.intermediates) {
    const float k = float(f.t * f.t);
    for (std::size_t i = 0; i < unit.tensor().size(); i += 97) EXPECT_EQ(f.true_field->tensor()[i], unit.tensor()[i] * k);
  }
  EXPECT_EQ(p.intermediates[0].t, 0.25);
  EXPECT_EQ(p.intermediates[2].t, 0.75);
}

TEST(GeneratePhantom, DatasetJitterIsValidAndDistinct) {
  const auto data = generate_phantom_dataset(PhantomSpec{}, 4, 5);
  ASSERT_EQ(data.size(), 4u);
  EXPECT_EQ(data[0].id, "sample_000");
  EXPECT_EQ(data[3].id, "sample_003");
  EXPECT_FALSE(data[0].ed == data[1].ed);
  for (const auto& s : data) {
    EXPECT_NO_THROW(s.validate());
    EXPECT_EQ(s.intermediates.size(), 3u);
  }
}

TEST(Svv, RoundTripFuzz) {
  std::mt19937_64 rng(1);
  std::uniform_int_distribution<int> ext(1, 9);
  std::uniform_real_distribution<double> sp(0.1, 4.0);
  std::uniform_int_distribution<std::uint32_t> bits;
  for (int trial = 0; trial < 200; ++trial) {
    const Dims d{ext(rng), ext(rng), ext(rng)};
    const char* kind = trial % 3 == 0 ? "field" : (trial % 3 == 1 ? "volume" : "mask");
    Tensor<float> t(std::strcmp(kind, "field") == 0 ? 3 : 1, d);
    for (auto& v : t.span()) {
      float f;
      do f = std::bit_cast<float>(bits(rng));
      while (!std::isfinite(f));
      v = f;
    }
    const SvvData in{kind, Spacing{sp(rng), sp(rng), sp(rng)}, t};
    const SvvData out = decode_svv(encode_svv(in));
    EXPECT_EQ(out.kind, in.kind);
    EXPECT_EQ(out.spacing, in.spacing);
    ASSERT_EQ(out.data.size(), t.size());
    EXPECT_EQ(std::memcmp(out.data.data(), t.data(), 4 * t.size()), 0);
  }
}

TEST(Svv, FileRoundTripAndLayout) {
  const fs::path dir = scratch("svv");
  std::mt19937_64 rng(2);
  const Volume v(oracle::random_tensor<float>(1, Dims{3, 4, 5}, rng), Spacing{1.5, 0.7, 0.7});
  save_volume(v, dir / "v.svv");
  EXPECT_TRUE(load_volume(dir / "v.svv") == v);
  std::ifstream f(dir / "v.svv", std::ios::binary);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(f)), {});
  ASSERT_GE(bytes.size(), 8u);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 4), "SVV1");
  const std::uint32_t hlen = bytes[4] | bytes[5] << 8 | bytes[6] << 16 | std::uint32_t(bytes[7]) << 24;
  const auto header = nlohmann::json::parse(std::string(bytes.begin() + 8, bytes.begin() + 8 + hlen));
  EXPECT_EQ(header["dims"], nlohmann::json({3, 4, 5}));
  EXPECT_EQ(header["dtype"], "f32le");
  EXPECT_EQ(header["kind"], "volume");
  EXPECT_EQ(bytes.size(), 8 + hlen + 4 * 60u);
  // x fastest: the second payload float is voxel (0,0,1).
  float second;
  std::memcpy(&second, bytes.data() + 8 + hlen + 4, 4);
  EXPECT_EQ(second, v.at(0, 0, 1));

  const VectorField fld(oracle::random_tensor<float>(3, Dims{2, 2, 2}, rng));
  save_field(fld, dir / "f.svv");
  EXPECT_TRUE(load_field(dir / "f.svv") == fld);
  EXPECT_THROW(load_volume(dir / "f.svv"), ParseError);
  EXPECT_THROW(load_volume(dir / "missing.svv"), IoError);
}

TEST(Svv, DistinctParseErrors) {
  const auto good = encode_svv({"volume", {}, Tensor<float>(1, Dims{2, 2, 2}, 1.f)});
  auto bad_magic = good;
  bad_magic[0] = 'X';
  EXPECT_EQ(parse_kind(bad_magic), ParseError::Kind::bad_magic);
  auto short_payload = good;
  short_payload.resize(good.size() - 4);
  EXPECT_EQ(parse_kind(short_payload), ParseError::Kind::payload_size);
  EXPECT_EQ(parse_kind(std::vector<std::uint8_t>(good.begin(), good.begin() + 6)), ParseError::Kind::truncated);
  EXPECT_EQ(parse_kind(std::vector<std::uint8_t>(good.begin(), good.begin() + 12)), ParseError::Kind::truncated);
  auto bad_json = good;
  bad_json[8] = '!';
  EXPECT_EQ(parse_kind(bad_json), ParseError::Kind::bad_header);
}

TEST(Dataset, RoundTrip) {
  const fs::path dir = scratch("dataset");
  auto spec = PhantomSpec::for_dims(Dims{16, 16, 16});
  const auto data = generate_phantom_dataset(spec, 2, 5);
  write_dataset(dir, data);
  for (const char* f : {"ed.svv", "es.svv", "t_1.svv", "t_2.svv", "t_3.svv", "sample.json"})
    EXPECT_TRUE(fs::exists(dir / "sample_000" / f)) << f;
  const auto back = read_dataset(dir);
  ASSERT_EQ(back.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(back[i].id, data[i].id);
    EXPECT_TRUE(back[i].ed == data[i].ed);
    EXPECT_TRUE(*back[i].es_mask == *data[i].es_mask);
    ASSERT_EQ(back[i].intermediates.size(), 3u);
    for (std::size_t k = 0; k < 3; ++k) {
      EXPECT_EQ(back[i].intermediates[k].t, data[i].intermediates[k].t);
      EXPECT_TRUE(back[i].intermediates[k].volume == data[i].intermediates[k].volume);
      EXPECT_TRUE(*back[i].intermediates[k].true_field == *data[i].intermediates[k].true_field);
    }
  }
  EXPECT_THROW(read_dataset(dir / "nope"), IoError);
}

TEST(Preprocess, IdentitySettingsNormalizeOnly) {
  std::mt19937_64 rng(3);
  const Volume v(oracle::random_tensor<float>(1, Dims{4, 6, 6}, rng, -2, 5));
  EXPECT_TRUE(preprocess(v, v.dims(), v.dims(), 4) == normalize(v));
  const Volume c = preprocess(Volume(Dims{4, 4, 4}, {}, 3.f), Dims{4, 4, 4}, Dims{4, 4, 4}, 4);
  for (std::size_t i = 0; i < c.size(); ++i) EXPECT_EQ(c[i], 0.f);
}

TEST(Preprocess, SymmetricZPadding) {
  Volume v(Dims{10, 16, 16}, {}, 1.f);
  v.at(0, 0, 0) = 2.f;
  const Volume p = pad_z(v, 12);
  ASSERT_EQ(p.dims(), (Dims{12, 16, 16}));
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 16; ++x) {
      EXPECT_EQ(p.at(0, y, x), 0.f);
      EXPECT_EQ(p.at(11, y, x), 0.f);
      for (int z = 1; z < 11; ++z) EXPECT_EQ(p.at(z, y, x), v.at(z - 1, y, x));
    }
  const Volume big = preprocess(Volume(Dims{10, 160, 160}, {}, 1.f), Dims{10, 160, 160}, Dims{10, 160, 160}, 12);
  EXPECT_EQ(big.dims(), (Dims{12, 160, 160}));
}

TEST(Preprocess, CropAndErrors) {
  Volume v(Dims{4, 6, 8});
  for (int z = 0; z < 4; ++z)
    for (int y = 0; y < 6; ++y)
      for (int x = 0; x < 8; ++x) v.at(z, y, x) = float(100 * z + 10 * y + x);
  const Volume c = center_crop(v, Dims{2, 2, 4});
  EXPECT_EQ(c.at(0, 0, 0), v.at(1, 2, 2));
  EXPECT_EQ(c.at(1, 1, 3), v.at(2, 3, 5));
  EXPECT_THROW(preprocess(v, Dims{4, 6, 8}, Dims{4, 6, 10}, 4), ValidationError);
  EXPECT_THROW(pad_z(v, 3), ValidationError);
  const Volume r = preprocess(v, Dims{8, 12, 16}, Dims{8, 8, 8}, 10);
  EXPECT_EQ(r.dims(), (Dims{10, 8, 8}));
  float lo = 1, hi = 0;
  for (std::size_t i = 0; i < r.size(); ++i) {
    lo = std::min(lo, r[i]);
    hi = std::max(hi, r[i]);
  }
  EXPECT_EQ(lo, 0.f);
  EXPECT_EQ(hi, 1.f);
}
