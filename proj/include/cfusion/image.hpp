#pragma once

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <tuple>

#include <Eigen/Dense>

#include "cfusion/common.hpp"

namespace cfusion {

using Grid = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Bilinear resize using half-pixel centers with edge clamping (the OpenCV
// INTER_LINEAR convention). Identity when the size is unchanged.
inline Grid resize_bilinear(const Grid& src, Eigen::Index out_rows, Eigen::Index out_cols) {
  if (src.rows() < 1 || src.cols() < 1) throw InvalidInput("resize of an empty grid");
  if (out_rows < 1 || out_cols < 1) throw InvalidInput("resize to an empty grid");

  auto source_coord = [](Eigen::Index i, Eigen::Index in, Eigen::Index out) {
    double s = (static_cast<double>(i) + 0.5) * static_cast<double>(in) / static_cast<double>(out) - 0.5;
    s = std::clamp(s, 0.0, static_cast<double>(in - 1));
    const auto i0 = static_cast<Eigen::Index>(std::floor(s));
    const auto i1 = std::min<Eigen::Index>(i0 + 1, in - 1);
    return std::tuple{i0, i1, s - static_cast<double>(i0)};
  };

  Grid out(out_rows, out_cols);
  for (Eigen::Index r = 0; r < out_rows; ++r) {
    const auto [r0, r1, wr] = source_coord(r, src.rows(), out_rows);
    for (Eigen::Index c = 0; c < out_cols; ++c) {
      const auto [c0, c1, wc] = source_coord(c, src.cols(), out_cols);
      const double top = (1.0 - wc) * src(r0, c0) + wc * src(r0, c1);
      const double bottom = (1.0 - wc) * src(r1, c0) + wc * src(r1, c1);
      out(r, c) = (1.0 - wr) * top + wr * bottom;
    }
  }
  return out;
}

namespace detail {

inline void skip_pgm_space(std::istream& in) {
  for (;;) {
    const int c = in.peek();
    if (c == '#') {
      std::string line;
      std::getline(in, line);
    } else if (c != EOF && std::isspace(c)) {
      in.get();
    } else {
      return;
    }
  }
}

}  // namespace detail

// Reads a binary 8-bit PGM (P5). Intensities are returned as raw 0..maxval values.
inline Grid read_pgm(std::istream& in) {
  std::string magic;
  in >> magic;
  if (magic != "P5") throw InvalidInput("not a binary PGM (P5) stream");
  long width = 0, height = 0, maxval = 0;
  detail::skip_pgm_space(in);
  in >> width;
  detail::skip_pgm_space(in);
  in >> height;
  detail::skip_pgm_space(in);
  in >> maxval;
  if (!in || width < 1 || height < 1) throw InvalidInput("malformed PGM header");
  if (maxval < 1 || maxval > 255) throw InvalidInput("only 8-bit PGM is supported");
  in.get();  // single whitespace byte before the raster

  Grid g(height, width);
  for (long r = 0; r < height; ++r) {
    for (long c = 0; c < width; ++c) {
      const int byte = in.get();
      if (byte == EOF) throw InvalidInput("truncated PGM raster");
      g(r, c) = static_cast<double>(byte);
    }
  }
  return g;
}

inline Grid read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InvalidInput("cannot open " + path.string());
  return read_pgm(in);
}

// Writes a grid as 8-bit PGM after linear mapping of [0, 1] to [0, 255].
inline void write_pgm(std::ostream& out, const Grid& g) {
  out << "P5\n" << g.cols() << ' ' << g.rows() << "\n255\n";
  for (Eigen::Index r = 0; r < g.rows(); ++r) {
    for (Eigen::Index c = 0; c < g.cols(); ++c) {
      const double v = std::clamp(g(r, c), 0.0, 1.0);
      out.put(static_cast<char>(static_cast<std::uint8_t>(std::lround(v * 255.0))));
    }
  }
}

}  // namespace cfusion
