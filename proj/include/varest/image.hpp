// Grayscale image type plus plain PGM (P5) reading and writing.
#pragma once

#include <Eigen/Core>
#include <algorithm>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "varest/common.hpp"

namespace varest {

// Row-major indexing convention: image(y, x), intensities in [0, 1].
using Image = Eigen::ArrayXXd;

inline Image rgb_to_gray(const Image& r, const Image& g, const Image& b) {
  if (r.rows() != g.rows() || r.rows() != b.rows() || r.cols() != g.cols() ||
      r.cols() != b.cols()) {
    throw ValidationError("rgb_to_gray: channel shapes differ");
  }
  // ITU-R BT.601 luma weights.
  return 0.299 * r + 0.587 * g + 0.114 * b;
}

inline void write_pgm(const std::string& path, const Image& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + path);
  out << "P5\n" << img.cols() << " " << img.rows() << "\n255\n";
  std::vector<unsigned char> row(static_cast<size_t>(img.cols()));
  for (Eigen::Index y = 0; y < img.rows(); ++y) {
    for (Eigen::Index x = 0; x < img.cols(); ++x) {
      double v = std::clamp(img(y, x), 0.0, 1.0);
      row[static_cast<size_t>(x)] =
          static_cast<unsigned char>(std::lround(v * 255.0));
    }
    out.write(reinterpret_cast<const char*>(row.data()),
              static_cast<std::streamsize>(row.size()));
  }
  if (!out) throw IoError("short write: " + path);
}

inline Image read_pgm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open: " + path);
  std::string magic;
  in >> magic;
  if (magic != "P5") throw IoError("not a P5 PGM file: " + path);
  auto skip_ws_comments = [&in]() {
    while (true) {
      int c = in.peek();
      if (c == '#') {
        std::string line;
        std::getline(in, line);
      } else if (std::isspace(c)) {
        in.get();
      } else {
        break;
      }
    }
  };
  long w = 0, h = 0, maxval = 0;
  skip_ws_comments();
  in >> w;
  skip_ws_comments();
  in >> h;
  skip_ws_comments();
  in >> maxval;
  if (!in || w <= 0 || h <= 0 || maxval <= 0 || maxval > 255) {
    throw IoError("bad PGM header: " + path);
  }
  in.get();  // single whitespace before raster
  std::vector<unsigned char> buf(static_cast<size_t>(w) * static_cast<size_t>(h));
  in.read(reinterpret_cast<char*>(buf.data()),
          static_cast<std::streamsize>(buf.size()));
  if (in.gcount() != static_cast<std::streamsize>(buf.size())) {
    throw IoError("truncated PGM raster: " + path);
  }
  Image img(h, w);
  for (long y = 0; y < h; ++y) {
    for (long x = 0; x < w; ++x) {
      img(y, x) = buf[static_cast<size_t>(y) * static_cast<size_t>(w) +
                      static_cast<size_t>(x)] /
                  static_cast<double>(maxval);
    }
  }
  return img;
}

}  // namespace varest
