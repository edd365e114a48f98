#pragma once

// Synthetic two-domain classification data with a controllable domain gap.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <utility>
#include <vector>

#include "fdan/domain.hpp"
#include "fdan/error.hpp"
#include "fdan/random.hpp"
#include "json.hpp"

namespace fdan {

struct SynthSpec {
  std::size_t classes = 3;
  std::size_t input_width = 16;
  std::size_t samples_per_class = 60;
  double center_scale = 1.5;
  double rotation = 0.5;  // radians, applied in the first two coordinates
  double shift = 2.0;     // added to every acoustic coordinate
  double noise_std = 1.0;
  std::uint64_t seed = 1;

  void validate() const {
    if (classes < 2) throw ConfigError("synthetic spec needs at least 2 classes");
    if (input_width < 2) throw ConfigError("synthetic spec needs input width >= 2");
    if (samples_per_class < 2) throw ConfigError("synthetic spec needs >= 2 samples per class");
    if (!(noise_std >= 0.0) || !std::isfinite(center_scale) || !std::isfinite(rotation) ||
        !std::isfinite(shift)) {
      throw ConfigError("synthetic spec has a non-finite or negative parameter");
    }
  }
};

inline void to_json(nlohmann::json& j, const SynthSpec& s) {
  j = nlohmann::json{{"classes", s.classes},       {"d_in", s.input_width},
                     {"samples_per_class", s.samples_per_class},
                     {"center_scale", s.center_scale}, {"rotation", s.rotation},
                     {"shift", s.shift},           {"noise_std", s.noise_std},
                     {"seed", s.seed}};
}

/// Missing keys keep their defaults.
inline void from_json(const nlohmann::json& j, SynthSpec& s) {
  s.classes = j.value("classes", s.classes);
  s.input_width = j.value("d_in", s.input_width);
  s.samples_per_class = j.value("samples_per_class", s.samples_per_class);
  s.center_scale = j.value("center_scale", s.center_scale);
  s.rotation = j.value("rotation", s.rotation);
  s.shift = j.value("shift", s.shift);
  s.noise_std = j.value("noise_std", s.noise_std);
  s.seed = j.value("seed", s.seed);
}

/// Class centers of norm `center_scale`: a centered regular simplex in the
/// first C coordinates when C <= d_in, seeded random directions otherwise.
inline std::vector<std::vector<double>> class_centers(const SynthSpec& s) {
  const std::size_t c_count = s.classes;
  const std::size_t d = s.input_width;
  std::vector<std::vector<double>> centers(c_count, std::vector<double>(d, 0.0));
  if (c_count <= d) {
    const double inv_c = 1.0 / static_cast<double>(c_count);
    const double norm = std::sqrt(1.0 - inv_c);
    for (std::size_t c = 0; c < c_count; ++c)
      for (std::size_t k = 0; k < c_count; ++k)
        centers[c][k] = s.center_scale * ((k == c ? 1.0 : 0.0) - inv_c) / norm;
  } else {
    Rng rng(derive_seed(s.seed, "centers"));
    for (auto& center : centers) {
      double n2 = 0.0;
      for (double& v : center) {
        v = rng.normal();
        n2 += v * v;
      }
      for (double& v : center) v *= s.center_scale / std::sqrt(n2);
    }
  }
  return centers;
}

/// Visual samples are center + noise. Acoustic samples use centers rotated by
/// `rotation` in the (0, 1) plane and offset by `shift`, plus noise. Sample i
/// belongs to class i mod C.
inline std::pair<FeatureDomain, FeatureDomain> synth_domains(const SynthSpec& s) {
  s.validate();
  const auto centers = class_centers(s);
  const double cs = std::cos(s.rotation);
  const double sn = std::sin(s.rotation);
  auto acoustic_center = [&](const std::vector<double>& c) {
    std::vector<double> out = c;
    out[0] = cs * c[0] - sn * c[1];
    out[1] = sn * c[0] + cs * c[1];
    for (double& v : out) v += s.shift;
    return out;
  };

  const std::size_t n = s.classes * s.samples_per_class;
  auto draw = [&](std::string_view stream, bool acoustic) {
    Rng rng(derive_seed(s.seed, stream));
    Matrix x(n, s.input_width);
    std::vector<std::size_t> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t c = i % s.classes;
      labels[i] = c;
      const auto center = acoustic ? acoustic_center(centers[c]) : centers[c];
      for (std::size_t k = 0; k < s.input_width; ++k)
        x(i, k) = center[k] + s.noise_std * rng.normal();
    }
    return make_domain(std::move(x), labels, s.classes,
                       acoustic ? Modality::kAcoustic : Modality::kVisual);
  };
  return {draw("visual", false), draw("acoustic", true)};
}

}  // namespace fdan
