// 2D FFT helpers built on Eigen's unsupported FFT module (row/column passes).
#pragma once

#include <Eigen/Core>
#include <complex>
#include <unsupported/Eigen/FFT>
#include <vector>

namespace varest {

using ComplexField = Eigen::ArrayXX<std::complex<double>>;

inline ComplexField fft2(const Eigen::ArrayXXd& img) {
  const Eigen::Index h = img.rows(), w = img.cols();
  Eigen::FFT<double> fft;
  ComplexField out(h, w);
  std::vector<std::complex<double>> line, spec;
  // rows
  line.resize(static_cast<size_t>(w));
  for (Eigen::Index y = 0; y < h; ++y) {
    for (Eigen::Index x = 0; x < w; ++x) line[static_cast<size_t>(x)] = img(y, x);
    fft.fwd(spec, line);
    for (Eigen::Index x = 0; x < w; ++x) out(y, x) = spec[static_cast<size_t>(x)];
  }
  // columns
  line.resize(static_cast<size_t>(h));
  for (Eigen::Index x = 0; x < w; ++x) {
    for (Eigen::Index y = 0; y < h; ++y) line[static_cast<size_t>(y)] = out(y, x);
    fft.fwd(spec, line);
    for (Eigen::Index y = 0; y < h; ++y) out(y, x) = spec[static_cast<size_t>(y)];
  }
  return out;
}

inline ComplexField ifft2(const ComplexField& spec) {
  const Eigen::Index h = spec.rows(), w = spec.cols();
  Eigen::FFT<double> fft;
  ComplexField out(h, w);
  std::vector<std::complex<double>> line, time;
  line.resize(static_cast<size_t>(w));
  for (Eigen::Index y = 0; y < h; ++y) {
    for (Eigen::Index x = 0; x < w; ++x) line[static_cast<size_t>(x)] = spec(y, x);
    fft.inv(time, line);
    for (Eigen::Index x = 0; x < w; ++x) out(y, x) = time[static_cast<size_t>(x)];
  }
  line.resize(static_cast<size_t>(h));
  for (Eigen::Index x = 0; x < w; ++x) {
    for (Eigen::Index y = 0; y < h; ++y) line[static_cast<size_t>(y)] = out(y, x);
    fft.inv(time, line);
    for (Eigen::Index y = 0; y < h; ++y) out(y, x) = time[static_cast<size_t>(y)];
  }
  return out;
}

}  // namespace varest
