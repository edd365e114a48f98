#pragma once

// Labeled feature matrices for one modality and their on-disk forms.
//
// Binary feature file (all integers little-endian):
//   "FDFX" | u32 version = 1 | u32 n | u32 d_in | u32 C | u8 modality (0 visual, 1 acoustic)
//   | n*d_in f32 features, row-major | n u32 class indices in [0, C)
//
// CSV: optional header line; each row holds d_in reals followed by an integer
// class index. The modality is supplied by the caller.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "fdan/binary_io.hpp"
#include "fdan/error.hpp"
#include "fdan/matrix.hpp"
#include "fdan/model.hpp"
#include "fdan/random.hpp"

namespace fdan {

struct FeatureDomain {
  Matrix features;  // n x d_in
  Matrix labels;    // n x C, one-hot
  std::vector<std::string> class_names;
  Modality modality = Modality::kVisual;

  std::size_t size() const { return features.rows(); }
  std::size_t width() const { return features.cols(); }
  std::size_t classes() const { return labels.cols(); }

  std::vector<std::size_t> label_indices() const {
    std::vector<std::size_t> out(labels.rows());
    for (std::size_t r = 0; r < labels.rows(); ++r)
      for (std::size_t c = 0; c < labels.cols(); ++c)
        if (labels(r, c) == 1.0) out[r] = c;
    return out;
  }
};

inline std::vector<std::string> default_class_names(std::size_t classes) {
  std::vector<std::string> names;
  for (std::size_t c = 0; c < classes; ++c) names.push_back(std::to_string(c));
  return names;
}

/// Builds a domain from class indices; throws LabelError on an index >= classes.
inline FeatureDomain make_domain(Matrix features, std::span<const std::size_t> labels,
                                 std::size_t classes, Modality modality,
                                 std::vector<std::string> class_names = {}) {
  if (features.rows() != labels.size()) {
    throw InputError(std::to_string(features.rows()) + " feature rows but " +
                     std::to_string(labels.size()) + " labels");
  }
  if (classes == 0) throw InputError("a feature domain needs at least one class");
  if (class_names.empty()) class_names = default_class_names(classes);
  if (class_names.size() != classes) throw InputError("class name count differs from C");
  Matrix one_hot(labels.size(), classes);
  for (std::size_t r = 0; r < labels.size(); ++r) {
    if (labels[r] >= classes) {
      throw LabelError("class index " + std::to_string(labels[r]) + " outside [0, " +
                           std::to_string(classes) + ")",
                       r);
    }
    one_hot(r, labels[r]) = 1.0;
  }
  return {std::move(features), std::move(one_hot), std::move(class_names), modality};
}

/// Rows `indices` of a domain, in that order.
inline FeatureDomain subset(const FeatureDomain& d, std::span<const std::size_t> indices) {
  return {gather_rows(d.features, indices), gather_rows(d.labels, indices), d.class_names,
          d.modality};
}

/// Stacks domains of one modality; widths and class names must agree.
inline FeatureDomain concatenate(std::span<const FeatureDomain> parts) {
  if (parts.empty()) throw InputError("nothing to concatenate");
  FeatureDomain out = parts.front();
  for (std::size_t i = 1; i < parts.size(); ++i) {
    const FeatureDomain& p = parts[i];
    if (p.class_names != out.class_names) {
      throw ConfigError("source files disagree on their class lists");
    }
    if (p.width() != out.width()) {
      throw ConfigError("source files disagree on feature width (" + std::to_string(p.width()) +
                        " vs " + std::to_string(out.width()) + ")");
    }
    out.features = vstack(out.features, p.features);
    out.labels = vstack(out.labels, p.labels);
  }
  return out;
}

/// Per-class stratified split. Each supported class keeps
/// max(1, round((1 - train_fraction) * support)) samples for testing.
inline std::pair<FeatureDomain, FeatureDomain> stratified_split(const FeatureDomain& d,
                                                                double train_fraction,
                                                                std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ConfigError("split fraction must lie strictly between 0 and 1");
  }
  Rng rng(derive_seed(seed, "split"));
  const auto labels = d.label_indices();
  std::vector<std::size_t> train_idx, test_idx;
  for (std::size_t c = 0; c < d.classes(); ++c) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i] == c) members.push_back(i);
    if (members.empty()) continue;
    rng.shuffle(std::span<std::size_t>(members));
    const double wanted = (1.0 - train_fraction) * static_cast<double>(members.size());
    const std::size_t n_test = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(wanted)));
    test_idx.insert(test_idx.end(), members.begin(), members.begin() + n_test);
    train_idx.insert(train_idx.end(), members.begin() + n_test, members.end());
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(test_idx.begin(), test_idx.end());
  return {subset(d, train_idx), subset(d, test_idx)};
}

// ---------------------------------------------------------------------------
// Binary feature files

inline constexpr std::string_view kFeatureMagic = "FDFX";
inline constexpr std::uint32_t kFeatureVersion = 1;

inline std::string encode_feature_file(const FeatureDomain& d) {
  ByteWriter w;
  w.raw(kFeatureMagic);
  w.u32(kFeatureVersion);
  w.u32(static_cast<std::uint32_t>(d.size()));
  w.u32(static_cast<std::uint32_t>(d.width()));
  w.u32(static_cast<std::uint32_t>(d.classes()));
  w.u8(static_cast<std::uint8_t>(d.modality));
  for (double v : d.features.values()) w.f32(static_cast<float>(v));
  for (std::size_t label : d.label_indices()) w.u32(static_cast<std::uint32_t>(label));
  return w.bytes();
}

inline FeatureDomain decode_feature_file(std::string_view bytes, const std::string& source) {
  ByteReader r(bytes, source);
  if (r.raw(4) != kFeatureMagic) throw FormatError(source + ": bad magic, not a feature file");
  if (const auto v = r.u32(); v != kFeatureVersion) {
    throw FormatError(source + ": unsupported feature file version " + std::to_string(v));
  }
  const std::size_t n = r.u32();
  const std::size_t width = r.u32();
  const std::size_t classes = r.u32();
  const std::uint8_t tag = r.u8();
  if (n == 0 || width == 0 || classes == 0) {
    throw FormatError(source + ": empty dimension in header");
  }
  if (tag > 1) throw FormatError(source + ": unknown modality tag " + std::to_string(tag));
  if (static_cast<double>(n) * static_cast<double>(width + 1) * 4.0 >
      static_cast<double>(r.remaining())) {
    throw LengthError(source + ": payload shorter than the header declares");
  }
  Matrix features(n, width);
  for (double& v : features.values()) {
    v = r.f32();
    if (!std::isfinite(v)) throw FormatError(source + ": non-finite feature value");
  }
  std::vector<std::size_t> labels(n);
  for (auto& l : labels) l = r.u32();
  if (r.remaining() != 0) throw FormatError(source + ": trailing bytes after labels");
  return make_domain(std::move(features), labels, classes, static_cast<Modality>(tag));
}

// ---------------------------------------------------------------------------
// CSV

namespace detail {
inline std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    std::string_view f = line.substr(start, comma == std::string_view::npos ? comma : comma - start);
    while (!f.empty() && (f.front() == ' ' || f.front() == '\t')) f.remove_prefix(1);
    while (!f.empty() && (f.back() == ' ' || f.back() == '\t' || f.back() == '\r')) f.remove_suffix(1);
    out.push_back(f);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

inline std::optional<double> parse_real(std::string_view s) {
  double v = 0.0;
  const auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}
}  // namespace detail

/// `classes` defaults to the largest label + 1.
inline FeatureDomain parse_feature_csv(std::string_view text, Modality modality,
                                       const std::string& source,
                                       std::optional<std::size_t> classes = std::nullopt) {
  std::vector<double> values;
  std::vector<std::size_t> labels;
  std::size_t width = 0;
  std::size_t line_no = 0;
  std::size_t start = 0;
  bool first_content = true;
  while (start < text.size()) {
    std::size_t end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    start = end + 1;
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string_view::npos) continue;
    const auto fields = detail::split_fields(line);
    const bool numeric = detail::parse_real(fields.front()).has_value();
    if (first_content && !numeric) {
      first_content = false;
      continue;  // header
    }
    first_content = false;
    const std::string where = source + ":" + std::to_string(line_no);
    if (fields.size() < 2) throw FormatError(where + ": need at least one feature and a label");
    if (width == 0) width = fields.size() - 1;
    if (fields.size() - 1 != width) {
      throw FormatError(where + ": expected " + std::to_string(width + 1) + " fields, got " +
                        std::to_string(fields.size()));
    }
    for (std::size_t k = 0; k < width; ++k) {
      const auto v = detail::parse_real(fields[k]);
      if (!v || !std::isfinite(*v)) throw FormatError(where + ": bad feature value");
      values.push_back(*v);
    }
    std::size_t label = 0;
    const std::string_view lf = fields.back();
    const auto [ptr, ec] = std::from_chars(lf.data(), lf.data() + lf.size(), label);
    if (ec != std::errc() || ptr != lf.data() + lf.size()) {
      throw LabelError(where + ": label is not a nonnegative integer", labels.size());
    }
    labels.push_back(label);
  }
  if (labels.empty()) throw FormatError(source + ": no samples");
  const std::size_t c =
      classes.value_or(*std::max_element(labels.begin(), labels.end()) + 1);
  return make_domain(Matrix(labels.size(), width, std::move(values)), labels, c, modality);
}

inline std::string format_feature_csv(const FeatureDomain& d) {
  std::ostringstream out;
  out.precision(9);
  for (std::size_t k = 0; k < d.width(); ++k) out << 'f' << k << ',';
  out << "label\n";
  const auto labels = d.label_indices();
  for (std::size_t r = 0; r < d.size(); ++r) {
    for (double v : d.features.row(r)) out << v << ',';
    out << labels[r] << '\n';
  }
  return out.str();
}

inline bool is_csv_path(const std::filesystem::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char ch) {
    return static_cast<char>(std::tolower(ch));
  });
  return ext == ".csv";
}

/// Loads a binary or (by extension) CSV feature file. `csv_modality` tags CSV
/// input; binary files carry their own tag.
inline FeatureDomain load_feature_file(const std::filesystem::path& path,
                                       Modality csv_modality = Modality::kAcoustic,
                                       std::optional<std::size_t> csv_classes = std::nullopt) {
  const std::string bytes = read_file(path);
  if (is_csv_path(path)) return parse_feature_csv(bytes, csv_modality, path.string(), csv_classes);
  return decode_feature_file(bytes, path.string());
}

inline void save_feature_file(const std::filesystem::path& path, const FeatureDomain& d) {
  write_file_atomic(path, is_csv_path(path) ? format_feature_csv(d) : encode_feature_file(d));
}

}  // namespace fdan
