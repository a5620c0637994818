// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "epit/binary_io.hpp"
#include "epit/error.hpp"
#include "epit/light_field.hpp"
#include "epit/png.hpp"

namespace epit {

// Binary layout: "LF4D", u16 version, u32 U V H W C, then f32 samples in
// (u, v, h, w, c) order. All integers and floats little-endian.
inline constexpr char kLfMagic[4] = {'L', 'F', '4', 'D'};
inline constexpr std::uint16_t kLfVersion = 1;

inline void write_lf_binary(std::ostream& os, const LightField& lf) {
  os.write(kLfMagic, 4);
  io::put_u16(os, kLfVersion);
  const LfExtents& e = lf.extents();
  for (std::size_t x : {e.u, e.v, e.h, e.w, e.c}) io::put_u32(os, static_cast<std::uint32_t>(x));
  for (float f : lf.data()) io::put_f32(os, f);
}

inline LightField read_lf_binary(std::istream& is, const std::string& source) {
  io::Reader in(is, source);
  const std::string magic = in.bytes(4, "magic");
  if (magic != std::string(kLfMagic, 4)) throw DataError(source + ": bad magic, expected LF4D");
  const std::uint16_t version = in.u16("version");
  if (version != kLfVersion) {
    throw DataError(source + ": unsupported LF4D version " + std::to_string(version));
  }
  LfExtents e;
  e.u = in.u32("extent U");
  e.v = in.u32("extent V");
  e.h = in.u32("extent H");
  e.w = in.u32("extent W");
  e.c = in.u32("extent C");
  if (e.u == 0 || e.v == 0 || e.h == 0 || e.w == 0 || e.c == 0) {
    throw DataError(source + ": zero extent in header " + e.str());
  }
  std::vector<float> data(e.size());
  for (float& f : data) {
    f = in.f32("payload");
    if (!std::isfinite(f)) throw DataError(source + ": non-finite sample in payload");
  }
  return LightField(e, std::move(data));
}

namespace detail {

inline LightField load_lf_directory(const std::filesystem::path& dir) {
  const auto meta_path = dir / "lf.meta";
  std::ifstream meta(meta_path);
  if (!meta) throw DataError(meta_path.string() + ": missing metadata file");
  std::size_t u_views = 0;
  std::size_t v_views = 0;
  std::string line;
  while (std::getline(meta, line)) {
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError(meta_path.string() + ": malformed line '" + line + "'");
    const std::string key = line.substr(0, eq);
    const std::size_t value = std::stoul(line.substr(eq + 1));
    if (key == "U") u_views = value;
    else if (key == "V") v_views = value;
  }
  if (u_views == 0 || v_views == 0) throw DataError(meta_path.string() + ": U and V must be >= 1");

  LightField lf;
  for (std::size_t u = 0; u < u_views; ++u) {
    for (std::size_t v = 0; v < v_views; ++v) {
      const auto path = dir / ("view_" + std::to_string(u) + "_" + std::to_string(v) + ".png");
      if (!std::filesystem::exists(path)) throw DataError(path.string() + ": missing view");
      const png::Raster r = png::read(path.string());
      if (u == 0 && v == 0) {
        lf = LightField({u_views, v_views, r.height, r.width, r.channels});
      } else if (r.height != lf.extents().h || r.width != lf.extents().w ||
                 r.channels != lf.extents().c) {
        throw DataError(path.string() + ": view dimensions differ from view_0_0.png");
      }
      for (std::size_t h = 0; h < r.height; ++h)
        for (std::size_t w = 0; w < r.width; ++w)
          for (std::size_t c = 0; c < r.channels; ++c)
            lf(u, v, h, w, c) =
                static_cast<float>(r.pixels[(h * r.width + w) * r.channels + c]) / 255.0f;
    }
  }
  return lf;
}

inline void save_lf_directory(const LightField& lf, const std::filesystem::path& dir) {
  const LfExtents& e = lf.extents();
  if (e.c != 1 && e.c != 3) throw DataError("save_lf: PNG views need 1 or 3 channels");
  std::filesystem::create_directories(dir);
  {
    std::ofstream meta(dir / "lf.meta");
    meta << "U=" << e.u << "\nV=" << e.v << "\n";
    if (!meta) throw DataError((dir / "lf.meta").string() + ": write failed");
  }
  for (std::size_t u = 0; u < e.u; ++u)
    for (std::size_t v = 0; v < e.v; ++v) {
      png::Raster r{e.h, e.w, e.c, std::vector<std::uint8_t>(e.h * e.w * e.c)};
      for (std::size_t h = 0; h < e.h; ++h)
        for (std::size_t w = 0; w < e.w; ++w)
          for (std::size_t c = 0; c < e.c; ++c) {
            const float x = std::clamp(lf(u, v, h, w, c), 0.0f, 1.0f);
            r.pixels[(h * e.w + w) * e.c + c] = static_cast<std::uint8_t>(std::lround(x * 255.0f));
          }
      png::write((dir / ("view_" + std::to_string(u) + "_" + std::to_string(v) + ".png")).string(),
                 r);
    }
}

}  // namespace detail

/// Loads a light field from a view directory (lf.meta + view_{u}_{v}.png) or
/// an LF4D binary file. Directory samples are normalised by 1/255.
inline LightField load_lf(const std::filesystem::path& path) {
  if (std::filesystem::is_directory(path)) return detail::load_lf_directory(path);
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError(path.string() + ": cannot open");
  return read_lf_binary(is, path.string());
}

/// Writes LF4D when `path` has a file extension, otherwise a view directory.
inline void save_lf(const LightField& lf, const std::filesystem::path& path) {
  if (!path.has_extension()) {
    detail::save_lf_directory(lf, path);
    return;
  }
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError(path.string() + ": cannot create");
  write_lf_binary(os, lf);
  if (!os) throw DataError(path.string() + ": write failed");
}

/// Clamps every sample to [0, 1]; applied when ingesting external data.
inline LightField clamp_unit(LightField lf) {
  for (float& x : lf.data()) x = std::clamp(x, 0.0f, 1.0f);
  return lf;
}

}  // namespace epit
