#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pcaae/errors.hpp"
#include "pcaae/rng.hpp"
#include "pcaae/tensor.hpp"

namespace pcaae::ellipse {

inline constexpr double kMinSemiAxis = 4.0;
inline constexpr double kDefaultBlur = 0.8;

struct EllipseParams {
  double a = 0;    // semi-axis along the rotated x direction, pixels
  double b = 0;    // semi-axis along the rotated y direction, pixels
  double phi = 0;  // rotation, radians
};

struct Attributes {
  double area = 0;  // A
  double r1 = 0;    // vertical / horizontal support width
  double r2 = 0;    // 45° / 135° support width
};

struct EllipseSample {
  std::vector<float> image;
  EllipseParams params;
  Attributes attrs;
};

/// a, b ~ U(a_min, s/2), phi ~ U(0, π/2).
inline EllipseParams sample_params(Rng& rng, std::size_t image_size, double min_semi_axis = kMinSemiAxis) {
  const double hi = static_cast<double>(image_size) / 2.0;
  if (!(min_semi_axis > 0) || !(min_semi_axis < hi))
    throw std::invalid_argument("minimum semi-axis must lie in (0, s/2), got " + std::to_string(min_semi_axis));
  EllipseParams p;
  p.a = rng.uniform(min_semi_axis, hi);
  p.b = rng.uniform(min_semi_axis, hi);
  p.phi = rng.uniform(0.0, std::numbers::pi / 2.0);
  return p;
}

/// Extent of the ellipse along direction theta: 2·√(a²cos²(θ−φ) + b²sin²(θ−φ)).
inline double support_width(const EllipseParams& p, double theta) {
  const double c = std::cos(theta - p.phi), s = std::sin(theta - p.phi);
  return 2.0 * std::sqrt(p.a * p.a * c * c + p.b * p.b * s * s);
}

inline Attributes attributes(const EllipseParams& p) {
  constexpr double pi = std::numbers::pi;
  return {pi * p.a * p.b, support_width(p, pi / 2) / support_width(p, 0.0),
          support_width(p, pi / 4) / support_width(p, 3 * pi / 4)};
}

/// Binary mask sampled at pixel centres, origin at the image centre, y up.
inline std::vector<float> render_mask(const EllipseParams& p, std::size_t s) {
  std::vector<float> img(s * s, 0.0f);
  const double half = static_cast<double>(s) / 2.0;
  const double c = std::cos(p.phi), sn = std::sin(p.phi);
  for (std::size_t row = 0; row < s; ++row) {
    const double y = half - (static_cast<double>(row) + 0.5);
    for (std::size_t col = 0; col < s; ++col) {
      const double x = static_cast<double>(col) + 0.5 - half;
      const double u = (x * c + y * sn) / p.a;
      const double v = (-x * sn + y * c) / p.b;
      img[row * s + col] = (u * u + v * v <= 1.0) ? 1.0f : 0.0f;
    }
  }
  return img;
}

/// Normalized Gaussian taps for offsets −r..r, r = ⌈3σ⌉.
inline std::vector<double> gaussian_kernel(double sigma) {
  const int radius = static_cast<int>(std::ceil(3.0 * sigma));
  std::vector<double> k(2 * radius + 1);
  double total = 0;
  for (int i = -radius; i <= radius; ++i) total += k[i + radius] = std::exp(-(i * i) / (2.0 * sigma * sigma));
  for (auto& v : k) v /= total;
  return k;
}

/// Separable blur with zero padding outside the image.
inline std::vector<float> gaussian_blur(const std::vector<float>& img, std::size_t s, double sigma) {
  if (sigma <= 0) return img;
  const auto k = gaussian_kernel(sigma);
  const int radius = static_cast<int>(k.size() / 2);
  const int n = static_cast<int>(s);
  std::vector<double> tmp(s * s, 0.0);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) {
      double acc = 0;
      for (int d = -radius; d <= radius; ++d)
        if (c + d >= 0 && c + d < n) acc += k[d + radius] * img[r * n + c + d];
      tmp[r * n + c] = acc;
    }
  std::vector<float> out(s * s);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c) {
      double acc = 0;
      for (int d = -radius; d <= radius; ++d)
        if (r + d >= 0 && r + d < n) acc += k[d + radius] * tmp[(r + d) * n + c];
      out[r * n + c] = static_cast<float>(std::clamp(acc, 0.0, 1.0));
    }
  return out;
}

inline std::vector<float> render(const EllipseParams& p, std::size_t s, double blur_sigma = kDefaultBlur) {
  if (s < 16) throw std::invalid_argument("image size must be at least 16, got " + std::to_string(s));
  return gaussian_blur(render_mask(p, s), s, blur_sigma);
}

/// Sample k of a dataset: each index draws from its own substream of the master seed.
inline EllipseSample make_sample(std::uint64_t seed, std::uint64_t index, std::size_t s, double blur_sigma,
                                 double min_semi_axis = kMinSemiAxis) {
  Rng rng(derive_seed(seed, {index}));
  EllipseSample out;
  out.params = sample_params(rng, s, min_semi_axis);
  out.attrs = attributes(out.params);
  out.image = render(out.params, s, blur_sigma);
  return out;
}

// ---------------------------------------------------------------------------
// Dataset file: "PCAD" | u32 version | u64 count | u32 height | u32 width |
// f64 blur σ | count·height·width little-endian f32. Attributes go to the
// sidecar "<path>.attrs.csv" with header "index,a,b,phi,A,R1,R2".

inline constexpr std::uint32_t kDatasetVersion = 1;

inline std::string sidecar_path(const std::string& path) { return path + ".attrs.csv"; }

struct DatasetHeader {
  std::uint64_t count = 0;
  std::uint32_t height = 0;
  std::uint32_t width = 0;
  double blur_sigma = 0;
};

struct Dataset {
  DatasetHeader header;
  std::vector<float> images;  // count × height × width
  std::vector<EllipseParams> params;
  std::vector<Attributes> attrs;

  std::size_t size() const { return header.count; }
  std::size_t pixels() const { return std::size_t{header.height} * header.width; }
  const float* image(std::size_t k) const { return images.data() + k * pixels(); }
};

inline std::string format_row(std::uint64_t index, const EllipseParams& p, const Attributes& a) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%llu,%.17g,%.17g,%.17g,%.17g,%.17g,%.17g", static_cast<unsigned long long>(index),
                p.a, p.b, p.phi, a.area, a.r1, a.r2);
  return buf;
}

/// Streams `count` samples to disk; memory use is one image regardless of count.
inline DatasetHeader generate_dataset(std::uint64_t count, std::size_t s, std::uint64_t seed, const std::string& path,
                                      double blur_sigma = kDefaultBlur, double min_semi_axis = kMinSemiAxis) {
  if (count < 1) throw std::invalid_argument("dataset count must be >= 1");
  if (s < 16) throw std::invalid_argument("image size must be at least 16, got " + std::to_string(s));
  std::ofstream bin(path, std::ios::binary | std::ios::trunc);
  if (!bin) throw IoError("cannot write dataset: " + path);
  std::ofstream csv(sidecar_path(path), std::ios::trunc);
  if (!csv) throw IoError("cannot write attribute table: " + sidecar_path(path));
  DatasetHeader h{count, static_cast<std::uint32_t>(s), static_cast<std::uint32_t>(s), blur_sigma};
  bin.write("PCAD", 4);
  bin.write(reinterpret_cast<const char*>(&kDatasetVersion), 4);
  bin.write(reinterpret_cast<const char*>(&h.count), 8);
  bin.write(reinterpret_cast<const char*>(&h.height), 4);
  bin.write(reinterpret_cast<const char*>(&h.width), 4);
  bin.write(reinterpret_cast<const char*>(&h.blur_sigma), 8);
  csv << "index,a,b,phi,A,R1,R2\n";
  for (std::uint64_t k = 0; k < count; ++k) {
    const auto sample = make_sample(seed, k, s, blur_sigma, min_semi_axis);
    bin.write(reinterpret_cast<const char*>(sample.image.data()),
              static_cast<std::streamsize>(sample.image.size() * sizeof(float)));
    csv << format_row(k, sample.params, sample.attrs) << '\n';
  }
  if (!bin || !csv) throw IoError("failed writing dataset: " + path);
  return h;
}

inline Dataset load_dataset(const std::string& path) {
  std::ifstream bin(path, std::ios::binary);
  if (!bin) throw IoError("cannot open dataset: " + path);
  char magic[4];
  std::uint32_t version = 0;
  Dataset d;
  bin.read(magic, 4);
  bin.read(reinterpret_cast<char*>(&version), 4);
  bin.read(reinterpret_cast<char*>(&d.header.count), 8);
  bin.read(reinterpret_cast<char*>(&d.header.height), 4);
  bin.read(reinterpret_cast<char*>(&d.header.width), 4);
  bin.read(reinterpret_cast<char*>(&d.header.blur_sigma), 8);
  if (!bin || std::memcmp(magic, "PCAD", 4) != 0) throw IoError("not a dataset file: " + path);
  if (version != kDatasetVersion) throw IoError("unsupported dataset version in " + path);
  d.images.resize(d.header.count * d.pixels());
  bin.read(reinterpret_cast<char*>(d.images.data()), static_cast<std::streamsize>(d.images.size() * sizeof(float)));
  if (!bin) throw IoError("truncated dataset payload: " + path);

  std::ifstream csv(sidecar_path(path));
  if (!csv) throw IoError("cannot open attribute table: " + sidecar_path(path));
  std::string line;
  std::getline(csv, line);
  if (line != "index,a,b,phi,A,R1,R2") throw IoError("unexpected attribute table header in " + sidecar_path(path));
  while (std::getline(csv, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    std::string cell;
    std::vector<double> v;
    while (std::getline(row, cell, ',')) v.push_back(std::stod(cell));
    if (v.size() != 7) throw IoError("malformed attribute row: " + line);
    d.params.push_back({v[1], v[2], v[3]});
    d.attrs.push_back({v[4], v[5], v[6]});
  }
  if (d.attrs.size() != d.header.count)
    throw IoError("attribute table has " + std::to_string(d.attrs.size()) + " rows, dataset has " +
                  std::to_string(d.header.count));
  return d;
}

inline std::uint64_t file_checksum(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  std::vector<char> buf(1 << 16);
  std::uint64_t h = 1469598103934665603ull;
  while (is) {
    is.read(buf.data(), static_cast<std::streamsize>(buf.size()));
    h = fnv1a(buf.data(), static_cast<std::size_t>(is.gcount()), h);
  }
  return h;
}

}  // namespace pcaae::ellipse
