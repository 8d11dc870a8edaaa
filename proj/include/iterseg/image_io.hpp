#pragma once

// Binary PPM (P6) / PGM (P5) with maxval 255.

#include <cctype>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <sstream>
#include <string>
#include <vector>

#include "iterseg/error.hpp"
#include "iterseg/grid.hpp"

namespace iterseg {

namespace detail {

inline std::string netpbm_header(const char* magic, std::size_t w, std::size_t h) {
  std::ostringstream os;
  os << magic << "\n" << w << " " << h << "\n255\n";
  return os.str();
}

inline void write_bytes(const std::filesystem::path& path, const std::string& header,
                        const std::uint8_t* data, std::size_t n) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(n));
  if (!out) throw IoError("failed writing " + path.string());
}

inline std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

struct NetpbmHeader {
  std::string magic;
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t maxval = 0;
  std::size_t data_offset = 0;
};

inline NetpbmHeader parse_netpbm(const std::vector<std::uint8_t>& bytes,
                                 const std::filesystem::path& path) {
  NetpbmHeader h;
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto token = [&] {
    skip_space();
    std::string t;
    while (pos < bytes.size() && !std::isspace(bytes[pos])) t += static_cast<char>(bytes[pos++]);
    return t;
  };
  try {
    h.magic = token();
    h.width = std::stoul(token());
    h.height = std::stoul(token());
    h.maxval = std::stoul(token());
  } catch (const std::exception&) {
    throw DataError("malformed netpbm header in " + path.string());
  }
  if (pos >= bytes.size()) throw DataError("truncated netpbm file " + path.string());
  h.data_offset = pos + 1;  // single whitespace byte after maxval
  if (h.maxval != 255)
    throw DataError("unsupported maxval " + std::to_string(h.maxval) + " in " +
                    path.string());
  return h;
}

}  // namespace detail

inline void write_ppm(const std::filesystem::path& path, const RgbImage& img) {
  detail::write_bytes(path, detail::netpbm_header("P6", img.width, img.height),
                      img.pixels.data(), img.pixels.size());
}

inline RgbImage read_ppm(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  const auto h = detail::parse_netpbm(bytes, path);
  if (h.magic != "P6") throw DataError(path.string() + " is not a binary PPM");
  RgbImage img(h.width, h.height);
  if (bytes.size() < h.data_offset + img.pixels.size())
    throw DataError("truncated pixel data in " + path.string());
  std::copy_n(bytes.begin() + static_cast<long>(h.data_offset), img.pixels.size(),
              img.pixels.begin());
  return img;
}

inline void write_pgm(const std::filesystem::path& path, const Grid<std::uint8_t>& g) {
  detail::write_bytes(path, detail::netpbm_header("P5", g.width, g.height),
                      g.values.data(), g.values.size());
}

inline Grid<std::uint8_t> read_pgm(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  const auto h = detail::parse_netpbm(bytes, path);
  if (h.magic != "P5") throw DataError(path.string() + " is not a binary PGM");
  Grid<std::uint8_t> g(h.width, h.height);
  if (bytes.size() < h.data_offset + g.values.size())
    throw DataError("truncated pixel data in " + path.string());
  std::copy_n(bytes.begin() + static_cast<long>(h.data_offset), g.values.size(),
              g.values.begin());
  return g;
}

// Region masks are stored with 255 for foreground.
inline void write_mask_pgm(const std::filesystem::path& path, const Mask& m) {
  Grid<std::uint8_t> g(m.width, m.height);
  for (std::size_t i = 0; i < m.size(); ++i) g.values[i] = m.values[i] ? 255 : 0;
  write_pgm(path, g);
}

inline Mask read_mask_pgm(const std::filesystem::path& path) {
  Grid<std::uint8_t> g = read_pgm(path);
  Mask m(g.width, g.height);
  for (std::size_t i = 0; i < g.size(); ++i) m.values[i] = g.values[i] >= 128 ? 1 : 0;
  return m;
}

}  // namespace iterseg
