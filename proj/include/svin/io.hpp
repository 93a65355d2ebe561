#pragma once

// .svv volume files and the on-disk dataset layout.
//
// File: "SVV1" | u32le header length | JSON header | f32le payload (x fastest,
// fields component-planar: all x-displacements, then y, then z).

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "svin/sample.hpp"

namespace svin {

namespace fs = std::filesystem;

inline constexpr char kSvvMagic[4] = {'S', 'V', 'V', '1'};

/// Decoded .svv contents; `kind` is "volume", "field" or "mask".
struct SvvData {
  std::string kind = "volume";
  Spacing spacing{};
  Tensor<float> data;
};

namespace detail {

inline void put_u32le(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

inline std::uint32_t get_u32le(const std::uint8_t* p) {
  return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 | std::uint32_t(p[3]) << 24;
}

inline void put_f32le(std::uint8_t* dst, float f) {
  const auto bits = std::bit_cast<std::uint32_t>(f);
  for (int i = 0; i < 4; ++i) dst[i] = static_cast<std::uint8_t>(bits >> (8 * i));
}

inline float get_f32le(const std::uint8_t* p) { return std::bit_cast<float>(get_u32le(p)); }

inline int channels_for(const std::string& kind) {
  if (kind == "volume" || kind == "mask") return 1;
  if (kind == "field") return 3;
  throw ParseError(ParseError::Kind::bad_header, "unknown svv kind '" + kind + "'");
}

inline std::vector<std::uint8_t> read_bytes(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void write_bytes(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  if (path.has_parent_path()) {
    std::error_code ec;
    fs::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_svv(const SvvData& v) {
  if (v.data.channels() != detail::channels_for(v.kind)) {
    throw ShapeError("svv kind '" + v.kind + "' does not match tensor " + v.data.shape_str());
  }
  const Dims d = v.data.dims();
  const nlohmann::json header = {{"dims", {d.d, d.h, d.w}},
                                 {"spacing", {v.spacing.z, v.spacing.y, v.spacing.x}},
                                 {"dtype", "f32le"},
                                 {"kind", v.kind}};
  const std::string h = header.dump();
  std::vector<std::uint8_t> out(kSvvMagic, kSvvMagic + 4);
  detail::put_u32le(out, static_cast<std::uint32_t>(h.size()));
  out.insert(out.end(), h.begin(), h.end());
  const std::size_t base = out.size();
  out.resize(base + 4 * v.data.size());
  for (std::size_t i = 0; i < v.data.size(); ++i) detail::put_f32le(out.data() + base + 4 * i, v.data[i]);
  return out;
}

inline SvvData decode_svv(const std::vector<std::uint8_t>& bytes) {
  using K = ParseError::Kind;
  if (bytes.size() < 4) throw ParseError(K::truncated, "svv: file shorter than magic");
  if (std::memcmp(bytes.data(), kSvvMagic, 4) != 0) throw ParseError(K::bad_magic, "svv: magic mismatch");
  if (bytes.size() < 8) throw ParseError(K::truncated, "svv: missing header length");
  const std::uint32_t hlen = detail::get_u32le(bytes.data() + 4);
  if (bytes.size() - 8 < hlen) throw ParseError(K::truncated, "svv: header truncated");

  SvvData v;
  Dims d;
  try {
    const auto header =
        nlohmann::json::parse(std::string_view(reinterpret_cast<const char*>(bytes.data()) + 8, hlen));
    const auto& dims = header.at("dims");
    const auto& sp = header.at("spacing");
    if (dims.size() != 3 || sp.size() != 3) throw ParseError(K::bad_header, "svv: dims/spacing need 3 entries");
    d = Dims{dims[0].get<int>(), dims[1].get<int>(), dims[2].get<int>()};
    v.spacing = Spacing{sp[0].get<double>(), sp[1].get<double>(), sp[2].get<double>()};
    if (header.at("dtype").get<std::string>() != "f32le") throw ParseError(K::bad_header, "svv: dtype must be f32le");
    v.kind = header.at("kind").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(K::bad_header, std::string("svv: bad header: ") + e.what());
  }
  if (!d.positive()) throw ParseError(K::bad_header, "svv: dims must be positive, got " + d.str());
  if (!v.spacing.positive()) throw ParseError(K::bad_header, "svv: spacing must be positive");
  const int channels = detail::channels_for(v.kind);

  const std::size_t payload = bytes.size() - 8 - hlen;
  const std::size_t expected = 4 * static_cast<std::size_t>(channels) * d.voxels();
  if (payload != expected) {
    throw ParseError(K::payload_size, "svv: header " + d.str() + " x" + std::to_string(channels) + " needs " +
                                          std::to_string(expected) + " payload bytes, found " +
                                          std::to_string(payload));
  }
  v.data = Tensor<float>(channels, d);
  const std::uint8_t* p = bytes.data() + 8 + hlen;
  for (std::size_t i = 0; i < v.data.size(); ++i) v.data[i] = detail::get_f32le(p + 4 * i);
  return v;
}

inline void write_svv(const fs::path& path, const SvvData& v) { detail::write_bytes(path, encode_svv(v)); }
inline SvvData read_svv(const fs::path& path) { return decode_svv(detail::read_bytes(path)); }

inline void save_volume(const Volume& v, const fs::path& path, const std::string& kind = "volume") {
  if (kind != "volume" && kind != "mask") throw ValidationError("save_volume: kind must be volume or mask");
  write_svv(path, {kind, v.spacing(), v.tensor()});
}

inline Volume load_volume(const fs::path& path) {
  SvvData d = read_svv(path);
  if (d.kind == "field") throw ParseError(ParseError::Kind::bad_header, path.string() + " holds a field, not a volume");
  return Volume(std::move(d.data), d.spacing);
}

inline void save_field(const VectorField& f, const fs::path& path) { write_svv(path, {"field", f.spacing(), f.tensor()}); }

inline VectorField load_field(const fs::path& path) {
  SvvData d = read_svv(path);
  if (d.kind != "field") throw ParseError(ParseError::Kind::bad_header, path.string() + " does not hold a field");
  return VectorField(std::move(d.data), d.spacing);
}

// ---------------------------------------------------------------------------
// Dataset directories
//
// <root>/dataset.json            {"samples": [ids...]}
// <root>/<id>/sample.json        {"id", "phases": [t_1..t_N], "dims": [D,H,W]}
// <root>/<id>/ed.svv, es.svv, t_<k>.svv (k = 1..N)
// optional: mask_ed.svv, mask_es.svv, mask_t_<k>.svv, field_es.svv, field_t_<k>.svv

inline void write_sample(const fs::path& dir, const PhaseSample& s) {
  s.validate();
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  save_volume(s.ed, dir / "ed.svv");
  save_volume(s.es, dir / "es.svv");
  if (s.ed_mask) save_volume(*s.ed_mask, dir / "mask_ed.svv", "mask");
  if (s.es_mask) save_volume(*s.es_mask, dir / "mask_es.svv", "mask");
  if (s.es_field) save_field(*s.es_field, dir / "field_es.svv");
  nlohmann::json phases = nlohmann::json::array();
  for (std::size_t k = 0; k < s.intermediates.size(); ++k) {
    const auto& f = s.intermediates[k];
    const std::string n = std::to_string(k + 1);
    save_volume(f.volume, dir / ("t_" + n + ".svv"));
    if (f.mask) save_volume(*f.mask, dir / ("mask_t_" + n + ".svv"), "mask");
    if (f.true_field) save_field(*f.true_field, dir / ("field_t_" + n + ".svv"));
    phases.push_back(f.t);
  }
  const Dims d = s.ed.dims();
  const nlohmann::json manifest = {{"id", s.id}, {"phases", phases}, {"dims", {d.d, d.h, d.w}}};
  const std::string text = manifest.dump(2) + "\n";
  detail::write_bytes(dir / "sample.json", std::vector<std::uint8_t>(text.begin(), text.end()));
}

inline PhaseSample read_sample(const fs::path& dir) {
  const fs::path mpath = dir / "sample.json";
  if (!fs::exists(mpath)) throw IoError("missing " + mpath.string());
  nlohmann::json manifest;
  try {
    const auto bytes = detail::read_bytes(mpath);
    manifest = nlohmann::json::parse(bytes.begin(), bytes.end());
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(ParseError::Kind::bad_header, mpath.string() + ": " + e.what());
  }
  PhaseSample s;
  s.id = manifest.value("id", dir.filename().string());
  s.ed = load_volume(dir / "ed.svv");
  s.es = load_volume(dir / "es.svv");
  auto opt_volume = [](const fs::path& p) { return fs::exists(p) ? std::optional<Volume>(load_volume(p)) : std::nullopt; };
  auto opt_field = [](const fs::path& p) { return fs::exists(p) ? std::optional<VectorField>(load_field(p)) : std::nullopt; };
  s.ed_mask = opt_volume(dir / "mask_ed.svv");
  s.es_mask = opt_volume(dir / "mask_es.svv");
  s.es_field = opt_field(dir / "field_es.svv");
  const auto phases = manifest.value("phases", std::vector<double>{});
  for (std::size_t k = 0; k < phases.size(); ++k) {
    const std::string n = std::to_string(k + 1);
    s.intermediates.push_back({phases[k], load_volume(dir / ("t_" + n + ".svv")),
                               opt_volume(dir / ("mask_t_" + n + ".svv")), opt_field(dir / ("field_t_" + n + ".svv"))});
  }
  s.validate();
  return s;
}

inline void write_dataset(const fs::path& root, const std::vector<PhaseSample>& samples) {
  nlohmann::json ids = nlohmann::json::array();
  for (const auto& s : samples) {
    write_sample(root / s.id, s);
    ids.push_back(s.id);
  }
  const std::string text = nlohmann::json{{"samples", ids}}.dump(2) + "\n";
  detail::write_bytes(root / "dataset.json", std::vector<std::uint8_t>(text.begin(), text.end()));
}

/// Samples listed in dataset.json, or every subdirectory with a sample.json (sorted).
inline std::vector<std::string> dataset_ids(const fs::path& root) {
  if (!fs::is_directory(root)) throw IoError("dataset directory " + root.string() + " does not exist");
  std::vector<std::string> ids;
  if (fs::exists(root / "dataset.json")) {
    const auto bytes = detail::read_bytes(root / "dataset.json");
    try {
      ids = nlohmann::json::parse(bytes.begin(), bytes.end()).at("samples").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(ParseError::Kind::bad_header, "dataset.json: " + std::string(e.what()));
    }
    return ids;
  }
  for (const auto& e : fs::directory_iterator(root)) {
    if (e.is_directory() && fs::exists(e.path() / "sample.json")) ids.push_back(e.path().filename().string());
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

inline std::vector<PhaseSample> read_dataset(const fs::path& root) {
  std::vector<PhaseSample> out;
  for (const auto& id : dataset_ids(root)) out.push_back(read_sample(root / id));
  return out;
}

}  // namespace svin
