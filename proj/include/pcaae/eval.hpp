#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "pcaae/ellipse.hpp"
#include "pcaae/errors.hpp"

namespace pcaae::eval {

inline const std::array<const char*, 3> kAttributeNames{"A", "R1", "R2"};

/// |cov(attr, z)| / (σ_attr σ_z) with population moments, clamped to [0, 1].
inline double abs_pcc(std::span<const double> attr, std::span<const double> z) {
  if (attr.size() != z.size()) throw DimensionError("abs_pcc: length mismatch");
  const std::size_t n = attr.size();
  if (n < 2) throw std::invalid_argument("abs_pcc needs at least 2 samples");
  double ma = 0, mz = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(attr[i]) || !std::isfinite(z[i])) throw std::invalid_argument("abs_pcc: non-finite input");
    ma += attr[i];
    mz += z[i];
  }
  ma /= static_cast<double>(n);
  mz /= static_cast<double>(n);
  double saa = 0, szz = 0, saz = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double da = attr[i] - ma, dz = z[i] - mz;
    saa += da * da;
    szz += dz * dz;
    saz += da * dz;
  }
  // Relative threshold: a constant vector still leaves rounding residue.
  const auto degenerate = [n](double ss, double mean) {
    return ss <= 1e-24 * static_cast<double>(n) * std::max(1.0, mean * mean);
  };
  if (degenerate(saa, ma)) throw DegenerateVarianceError("abs_pcc: attribute has zero variance");
  if (degenerate(szz, mz)) throw DegenerateVarianceError("abs_pcc: latent component has zero variance");
  return std::clamp(std::abs(saz) / std::sqrt(saa * szz), 0.0, 1.0);
}

/// Rows are latent components, columns the attributes A, R1, R2.
struct PccMatrix {
  std::vector<std::array<double, 3>> rows;

  std::size_t dominant(std::size_t row) const {
    const auto& r = rows.at(row);
    return static_cast<std::size_t>(std::max_element(r.begin(), r.end()) - r.begin());
  }
};

/// Columns of an [N×n] row-major code buffer against the three attributes.
inline PccMatrix pcc_matrix(std::span<const double> codes, std::size_t latent,
                            const std::vector<ellipse::Attributes>& attrs) {
  const std::size_t n = attrs.size();
  if (codes.size() != n * latent) throw DimensionError("pcc_matrix: code buffer does not match attribute count");
  std::array<std::vector<double>, 3> columns;
  for (auto& c : columns) c.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    columns[0][i] = attrs[i].area;
    columns[1][i] = attrs[i].r1;
    columns[2][i] = attrs[i].r2;
  }
  PccMatrix m;
  std::vector<double> z(n);
  for (std::size_t j = 0; j < latent; ++j) {
    for (std::size_t i = 0; i < n; ++i) z[i] = codes[i * latent + j];
    std::array<double, 3> row{};
    for (std::size_t a = 0; a < 3; ++a) {
      try {
        row[a] = abs_pcc(columns[a], z);
      } catch (const DegenerateVarianceError& e) {
        throw DegenerateVarianceError("latent component Z" + std::to_string(j + 1) + ": " + e.what(),
                                      static_cast<int>(j + 1));
      }
    }
    m.rows.push_back(row);
  }
  return m;
}

struct ComponentSummary {
  std::size_t dominant = 0;
  double value = 0;
  double margin = 0;  // dominant minus runner-up
};

struct DominanceReport {
  std::vector<ComponentSummary> components;
  std::vector<std::size_t> entangled_attributes;  // attributes at >= threshold on >= 2 components
  bool entangled() const { return !entangled_attributes.empty(); }
};

/// Flags an attribute as entangled when its entry reaches `threshold` on two
/// or more components, whether or not it is the dominant one there.
inline DominanceReport dominance_report(const PccMatrix& m, double threshold = 0.3) {
  DominanceReport rep;
  std::array<int, 3> counts{};
  for (std::size_t j = 0; j < m.rows.size(); ++j) {
    auto sorted = m.rows[j];
    std::sort(sorted.begin(), sorted.end(), std::greater<>());
    rep.components.push_back({m.dominant(j), sorted[0], sorted[0] - sorted[1]});
    for (std::size_t a = 0; a < 3; ++a)
      if (m.rows[j][a] >= threshold) ++counts[a];
  }
  for (std::size_t a = 0; a < 3; ++a)
    if (counts[a] >= 2) rep.entangled_attributes.push_back(a);
  return rep;
}

inline std::string matrix_csv(const PccMatrix& m) {
  std::ostringstream os;
  os << "component,A,R1,R2\n";
  char buf[128];
  for (std::size_t j = 0; j < m.rows.size(); ++j) {
    std::snprintf(buf, sizeof buf, "Z%zu,%.6f,%.6f,%.6f\n", j + 1, m.rows[j][0], m.rows[j][1], m.rows[j][2]);
    os << buf;
  }
  return os.str();
}

inline std::string report_text(const PccMatrix& m, const DominanceReport& rep) {
  std::ostringstream os;
  char buf[160];
  os << "absolute PCC (rows: latent components, columns: attributes)\n\n";
  os << "        A        R1       R2\n";
  for (std::size_t j = 0; j < m.rows.size(); ++j) {
    std::snprintf(buf, sizeof buf, "Z%-3zu", j + 1);
    os << buf;
    for (std::size_t a = 0; a < 3; ++a) {
      std::snprintf(buf, sizeof buf, "  %6.4f%s", m.rows[j][a], a == m.dominant(j) ? "*" : " ");
      os << buf;
    }
    os << '\n';
  }
  os << "\ndominance:\n";
  for (std::size_t j = 0; j < rep.components.size(); ++j) {
    const auto& c = rep.components[j];
    std::snprintf(buf, sizeof buf, "  Z%zu -> %s (%.4f, margin %.4f)\n", j + 1, kAttributeNames[c.dominant], c.value,
                  c.margin);
    os << buf;
  }
  if (rep.entangled()) {
    for (auto a : rep.entangled_attributes) os << "ENTANGLED: attribute " << kAttributeNames[a] << " reaches the threshold on several components\n";
  } else {
    os << "no entanglement flags\n";
  }
  return os.str();
}

/// One-sample Kolmogorov–Smirnov statistic against N(0, 1).
inline double ks_statistic_normal(std::vector<double> samples) {
  if (samples.empty()) throw std::invalid_argument("ks statistic of an empty sample");
  std::sort(samples.begin(), samples.end());
  const double n = static_cast<double>(samples.size());
  double d = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const double cdf = 0.5 * std::erfc(-samples[i] / std::numbers::sqrt2);
    d = std::max({d, static_cast<double>(i + 1) / n - cdf, cdf - static_cast<double>(i) / n});
  }
  return d;
}

}  // namespace pcaae::eval
