#pragma once

#include <filesystem>
#include <fstream>
#include <string>

#include "pcaae/ellipse.hpp"

namespace pcaae::testing {

/// Per-suite scratch directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& suite) {
  auto dir = std::filesystem::temp_directory_path() / ("pcaae_" + suite);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

/// In-memory ellipse dataset, identical to what generate_dataset would write.
inline ellipse::Dataset small_dataset(std::size_t count, std::size_t s, std::uint64_t seed) {
  ellipse::Dataset d;
  d.header = {count, static_cast<std::uint32_t>(s), static_cast<std::uint32_t>(s), ellipse::kDefaultBlur};
  for (std::size_t k = 0; k < count; ++k) {
    auto sample = ellipse::make_sample(seed, k, s, ellipse::kDefaultBlur);
    d.images.insert(d.images.end(), sample.image.begin(), sample.image.end());
    d.params.push_back(sample.params);
    d.attrs.push_back(sample.attrs);
  }
  return d;
}

}  // namespace pcaae::testing
