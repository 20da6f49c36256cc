#pragma once

// Dataset directory: manifest.json plus <split>.bin per split, each a flat
// little-endian float32 array shaped [N, N_c, N_t, 2 (link), 2 (re/im)].

#include <bit>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "json.hpp"

#include "csi_djscc/data_gen.hpp"
#include "csi_djscc/errors.hpp"

namespace csi_djscc {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace detail {

inline void write_floats(const std::filesystem::path& p, const std::vector<float>& v) {
  std::ofstream os(p, std::ios::binary | std::ios::trunc);
  if (!os) throw Error("cannot open " + p.string() + " for writing");
  os.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(float)));
  if (!os) throw Error("write failed: " + p.string());
}

inline std::vector<float> read_floats(const std::filesystem::path& p, std::size_t expected) {
  std::ifstream is(p, std::ios::binary | std::ios::ate);
  if (!is) throw FormatError("cannot open " + p.string());
  const auto bytes = static_cast<std::size_t>(is.tellg());
  if (bytes != expected * sizeof(float))
    throw ShapeError(p.filename().string() + ": size " + std::to_string(bytes) + " bytes does not match manifest (" +
                     std::to_string(expected * sizeof(float)) + ")");
  std::vector<float> v(expected);
  is.seekg(0);
  is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(bytes));
  if (!is) throw FormatError("read failed: " + p.string());
  return v;
}

inline nlohmann::json read_json(const std::filesystem::path& p) {
  std::ifstream is(p);
  if (!is) throw FormatError("cannot open " + p.string());
  try {
    return nlohmann::json::parse(is);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(p.string() + ": " + e.what());
  }
}

inline void write_text(const std::filesystem::path& p, const std::string& text) {
  std::ofstream os(p, std::ios::trunc);
  if (!os) throw Error("cannot open " + p.string() + " for writing");
  os << text;
  if (!os) throw Error("write failed: " + p.string());
}

}  // namespace detail

inline void save_dataset(const CsiDataset& d, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  detail::write_text(dir / "manifest.json", nlohmann::json(d.manifest()).dump(2) + "\n");
  for (Split s : {Split::train, Split::val, Split::test})
    detail::write_floats(dir / (std::string(split_name(s)) + ".bin"), d.block(s));
}

inline CsiDataset load_dataset(const std::filesystem::path& dir) {
  const auto j = detail::read_json(dir / "manifest.json");
  if (!j.is_object() || !j.contains("version")) throw FormatError("manifest.json: missing version tag");
  if (j.at("version") != kDatasetVersion)
    throw VersionError("manifest.json: unsupported version '" + j.at("version").dump() + "'");
  DatasetManifest m;
  try {
    m = j.get<DatasetManifest>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("manifest.json: ") + e.what());
  }
  m.scenario.validate();
  CsiDataset d(m);
  for (Split s : {Split::train, Split::val, Split::test})
    d.block(s) = detail::read_floats(dir / (std::string(split_name(s)) + ".bin"), d.count(s) * d.sample_floats());
  return d;
}

}  // namespace csi_djscc
