#pragma once

// The full network: per-modality input projection, a stack of cross-attention
// layers, and a classifier head shared by both modalities. Also the training
// objective: both cross-entropy terms plus alpha times the layer-wise LMMD sum.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "fdan/attention.hpp"
#include "fdan/binary_io.hpp"
#include "fdan/error.hpp"
#include "fdan/kernel.hpp"
#include "fdan/matrix.hpp"
#include "fdan/random.hpp"
#include "fdan/tape.hpp"

namespace fdan {

enum class Modality : std::uint8_t { kVisual = 0, kAcoustic = 1 };

inline const char* modality_name(Modality m) {
  return m == Modality::kVisual ? "visual" : "acoustic";
}

struct Architecture {
  std::size_t input_visual = 0;
  std::size_t input_acoustic = 0;
  std::size_t width = 64;
  std::size_t hidden = 128;
  std::size_t layers = 2;
  std::size_t classes = 0;
  /// One classifier for both modalities. Separate heads exist for isolation
  /// experiments and cannot be checkpointed.
  bool shared_classifier = true;

  void validate() const {
    if (input_visual == 0 || input_acoustic == 0) throw ConfigError("input widths must be >= 1");
    if (width < 2) throw ConfigError("model width must be >= 2");
    if (hidden == 0) throw ConfigError("hidden width must be >= 1");
    if (layers == 0) throw ConfigError("at least one cross-attention layer is required");
    if (classes < 2) throw ConfigError("at least two classes are required");
  }
  bool operator==(const Architecture&) const = default;
};

template <class T>
struct Affine {
  T weight;  // in x out
  T bias;    // 1 x out
};

template <class T>
struct ModelTensors {
  Affine<T> input_visual;
  Affine<T> input_acoustic;
  std::vector<BlockParams<T>> layers;
  Affine<T> classifier;
  std::optional<Affine<T>> acoustic_classifier;

  const Affine<T>& head(Modality m) const {
    return (m == Modality::kAcoustic && acoustic_classifier) ? *acoustic_classifier
                                                             : classifier;
  }
  const Affine<T>& input(Modality m) const {
    return m == Modality::kVisual ? input_visual : input_acoustic;
  }

  template <class F>
  void for_each(F&& f) {
    f(input_visual.weight), f(input_visual.bias);
    f(input_acoustic.weight), f(input_acoustic.bias);
    for (auto& layer : layers) layer.for_each(f);
    f(classifier.weight), f(classifier.bias);
    if (acoustic_classifier) f(acoustic_classifier->weight), f(acoustic_classifier->bias);
  }
  template <class F>
  void for_each(F&& f) const {
    f(input_visual.weight), f(input_visual.bias);
    f(input_acoustic.weight), f(input_acoustic.bias);
    for (const auto& layer : layers) layer.for_each(f);
    f(classifier.weight), f(classifier.bias);
    if (acoustic_classifier) f(acoustic_classifier->weight), f(acoustic_classifier->bias);
  }
};

struct ModelParams {
  Architecture arch;
  ModelTensors<Matrix> tensors;

  std::size_t tensor_count() const {
    std::size_t n = 0;
    tensors.for_each([&](const Matrix&) { ++n; });
    return n;
  }
  std::vector<Matrix*> tensor_list() {
    std::vector<Matrix*> out;
    tensors.for_each([&](Matrix& m) { out.push_back(&m); });
    return out;
  }
  std::vector<const Matrix*> tensor_list() const {
    std::vector<const Matrix*> out;
    tensors.for_each([&](const Matrix& m) { out.push_back(&m); });
    return out;
  }
  bool operator==(const ModelParams& o) const {
    const auto a = tensor_list();
    const auto b = o.tensor_list();
    if (!(arch == o.arch) || a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i)
      if (!(*a[i] == *b[i])) return false;
    return true;
  }
};

/// Seeded initialization: fan-in uniform weights, unit gains, zero biases.
inline ModelParams init_model(const Architecture& arch, std::uint64_t seed) {
  arch.validate();
  Rng rng(derive_seed(seed, "init"));
  ModelParams p{arch, {}};
  auto& t = p.tensors;
  t.input_visual = {uniform_fan_in(arch.input_visual, arch.width, rng), Matrix(1, arch.width)};
  t.input_acoustic = {uniform_fan_in(arch.input_acoustic, arch.width, rng),
                      Matrix(1, arch.width)};
  for (std::size_t i = 0; i < arch.layers; ++i)
    t.layers.push_back(init_block(arch.width, arch.hidden, rng));
  t.classifier = {uniform_fan_in(arch.width, arch.classes, rng), Matrix(1, arch.classes)};
  if (!arch.shared_classifier) {
    t.acoustic_classifier =
        Affine<Matrix>{uniform_fan_in(arch.width, arch.classes, rng), Matrix(1, arch.classes)};
  }
  return p;
}

/// Parameters placed on a tape, plus the leaf handles in declaration order.
struct BoundModel {
  ModelTensors<Var> tensors;
  std::vector<Var> leaves;
};

inline BoundModel bind_variables(Tape& tape, const ModelParams& p) {
  BoundModel b;
  auto leaf = [&](const Matrix& m) {
    const Var v = tape.variable(m);
    b.leaves.push_back(v);
    return v;
  };
  auto affine = [&](const Affine<Matrix>& a) { return Affine<Var>{leaf(a.weight), leaf(a.bias)}; };
  const auto& t = p.tensors;
  b.tensors.input_visual = affine(t.input_visual);
  b.tensors.input_acoustic = affine(t.input_acoustic);
  for (const auto& layer : t.layers) {
    BlockParams<Var> bp;
    bp.visual = bind(tape, layer.visual, [&](Tape&, const Matrix& m) { return leaf(m); });
    bp.acoustic = bind(tape, layer.acoustic, [&](Tape&, const Matrix& m) { return leaf(m); });
    b.tensors.layers.push_back(std::move(bp));
  }
  b.tensors.classifier = affine(t.classifier);
  if (t.acoustic_classifier) b.tensors.acoustic_classifier = affine(*t.acoustic_classifier);
  return b;
}

/// Gradient of every parameter tensor, in declaration order.
inline std::vector<Matrix> collect_gradients(const Gradients& g, const BoundModel& b) {
  std::vector<Matrix> out;
  out.reserve(b.leaves.size());
  for (const Var& v : b.leaves) out.push_back(g.of(v));
  return out;
}

inline Var affine(Var x, const Affine<Var>& a) {
  return add_row(matmul(x, a.weight), a.bias);
}

struct TapedTrace {
  std::vector<std::pair<Var, Var>> layers;  // (Zv^i, Za^i) after each block
  std::vector<std::pair<Var, Var>> attention;
  Var logits_visual;
  Var logits_acoustic;
};

/// Coupled forward pass over both modalities. `attend` false drops the
/// cross-propagated terms (no-attention ablation).
inline TapedTrace forward(const ModelTensors<Var>& m, Var xv, Var xa, bool attend = true) {
  if (xv.cols() != m.input_visual.weight.rows()) {
    throw ShapeError("visual features have width " + std::to_string(xv.cols()) +
                     ", model expects " + std::to_string(m.input_visual.weight.rows()));
  }
  if (xa.cols() != m.input_acoustic.weight.rows()) {
    throw ShapeError("acoustic features have width " + std::to_string(xa.cols()) +
                     ", model expects " + std::to_string(m.input_acoustic.weight.rows()));
  }
  TapedTrace trace;
  Var zv = affine(xv, m.input_visual);
  Var za = affine(xa, m.input_acoustic);
  for (const auto& layer : m.layers) {
    const BlockOutput out = cross_attention_block(zv, za, layer, attend);
    zv = out.visual;
    za = out.acoustic;
    trace.layers.emplace_back(zv, za);
    trace.attention.emplace_back(out.weights_to_visual, out.weights_to_acoustic);
  }
  trace.logits_visual = affine(zv, m.head(Modality::kVisual));
  trace.logits_acoustic = affine(za, m.head(Modality::kAcoustic));
  return trace;
}

struct StreamTrace {
  Var activations;  // final layer
  Var logits;
};

/// One modality on its own: every block applied with dZ = 0.
inline StreamTrace forward_stream(const ModelTensors<Var>& m, Var x, Modality modality) {
  const Affine<Var>& in = m.input(modality);
  if (x.cols() != in.weight.rows()) {
    throw ShapeError(std::string(modality_name(modality)) + " features have width " +
                     std::to_string(x.cols()) + ", model expects " +
                     std::to_string(in.weight.rows()));
  }
  Var z = affine(x, in);
  for (const auto& layer : m.layers)
    z = self_update(z, modality == Modality::kVisual ? layer.visual : layer.acoustic);
  return {z, affine(z, m.head(modality))};
}

/// Value-only copy of a coupled forward pass.
struct ForwardTrace {
  std::vector<std::pair<Matrix, Matrix>> layers;
  Matrix logits_visual;
  Matrix logits_acoustic;
};

inline ForwardTrace forward(const ModelParams& p, const Matrix& xv, const Matrix& xa,
                            bool attend = true) {
  Tape tape;
  const BoundModel b = bind_variables(tape, p);
  const TapedTrace t = forward(b.tensors, tape.constant(xv), tape.constant(xa), attend);
  ForwardTrace out;
  for (const auto& [v, a] : t.layers) out.layers.emplace_back(v.value(), a.value());
  out.logits_visual = t.logits_visual.value();
  out.logits_acoustic = t.logits_acoustic.value();
  return out;
}

struct StreamOutput {
  Matrix activations;
  Matrix logits;
};

inline StreamOutput infer(const ModelParams& p, const Matrix& x, Modality modality) {
  Tape tape;
  const BoundModel b = bind_variables(tape, p);
  const StreamTrace t = forward_stream(b.tensors, tape.constant(x), modality);
  return {t.activations.value(), t.logits.value()};
}

/// Mean cross-entropy of one-hot labels under softmax(logits).
inline Var cross_entropy(Var logits, const Matrix& one_hot) {
  if (!logits.value().same_shape(one_hot)) {
    throw ShapeError("cross_entropy: logits " + logits.value().shape_string() + " vs labels " +
                     one_hot.shape_string());
  }
  require_one_hot(one_hot);
  return softmax_cross_entropy(logits, one_hot);
}

inline double cross_entropy(const Matrix& logits, const Matrix& one_hot) {
  Tape t;
  return cross_entropy(t.constant(logits), one_hot).scalar();
}

struct LossTerms {
  Var total;
  Var ce_acoustic;
  Var ce_visual;
  Var lmmd_sum;
  std::vector<Var> lmmd_per_layer;
};

struct LossValues {
  double total = 0.0;
  double ce_acoustic = 0.0;
  double ce_visual = 0.0;
  double lmmd_sum = 0.0;
};

inline LossValues values_of(const LossTerms& t) {
  return {t.total.scalar(), t.ce_acoustic.scalar(), t.ce_visual.scalar(), t.lmmd_sum.scalar()};
}

/// ce_a + ce_v + alpha * sum_i lmmd_i, with equal layer weights and class
/// weights taken from the true labels of each batch.
inline LossTerms total_loss(const TapedTrace& trace, const Matrix& labels_visual,
                            const Matrix& labels_acoustic, double alpha,
                            const KernelSpec& spec) {
  if (!(alpha >= 0.0)) throw ParameterError("alpha must be nonnegative");
  if (labels_visual.cols() != labels_acoustic.cols() ||
      labels_visual.cols() != trace.logits_visual.cols()) {
    throw ShapeError("class counts disagree between labels and classifier");
  }
  Tape& tape = *trace.logits_visual.tape();
  LossTerms out;
  out.ce_acoustic = cross_entropy(trace.logits_acoustic, labels_acoustic);
  out.ce_visual = cross_entropy(trace.logits_visual, labels_visual);
  const ClassWeights wv = class_weights(labels_visual);
  const ClassWeights wa = class_weights(labels_acoustic);
  for (const auto& [zv, za] : trace.layers) {
    const Var d = lmmd(zv, za, wv, wa, spec).value;
    out.lmmd_per_layer.push_back(d);
    out.lmmd_sum = out.lmmd_sum.valid() ? out.lmmd_sum + d : d;
  }
  if (!out.lmmd_sum.valid()) out.lmmd_sum = tape.constant(Matrix(1, 1, 0.0));
  out.total = (out.ce_acoustic + out.ce_visual) + scale(out.lmmd_sum, alpha);
  return out;
}

inline LossValues total_loss(const ForwardTrace& trace, const Matrix& labels_visual,
                             const Matrix& labels_acoustic, double alpha,
                             const KernelSpec& spec) {
  Tape tape;
  TapedTrace t;
  for (const auto& [v, a] : trace.layers) t.layers.emplace_back(tape.constant(v), tape.constant(a));
  t.logits_visual = tape.constant(trace.logits_visual);
  t.logits_acoustic = tape.constant(trace.logits_acoustic);
  return values_of(total_loss(t, labels_visual, labels_acoustic, alpha, spec));
}

// ---------------------------------------------------------------------------
// Checkpoint: "FDAN", u32 version, u32 {d_in_v, d_in_a, d, h, l, C}, then
// every tensor in declaration order as f64 little-endian, row-major.

inline constexpr std::string_view kCheckpointMagic = "FDAN";
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::string encode_checkpoint(const ModelParams& p) {
  if (!p.arch.shared_classifier) {
    throw ConfigError("checkpoints store shared-classifier models only");
  }
  ByteWriter w;
  w.raw(kCheckpointMagic);
  w.u32(kCheckpointVersion);
  const Architecture& a = p.arch;
  for (std::size_t v : {a.input_visual, a.input_acoustic, a.width, a.hidden, a.layers, a.classes})
    w.u32(static_cast<std::uint32_t>(v));
  p.tensors.for_each([&](const Matrix& m) {
    for (double v : m.values()) w.f64(v);
  });
  return w.bytes();
}

inline ModelParams decode_checkpoint(std::string_view bytes, const std::string& source) {
  ByteReader r(bytes, source);
  if (r.raw(4) != kCheckpointMagic) throw FormatError(source + ": not a model checkpoint");
  if (const auto v = r.u32(); v != kCheckpointVersion) {
    throw FormatError(source + ": unsupported checkpoint version " + std::to_string(v));
  }
  Architecture a;
  a.input_visual = r.u32();
  a.input_acoustic = r.u32();
  a.width = r.u32();
  a.hidden = r.u32();
  a.layers = r.u32();
  a.classes = r.u32();
  try {
    a.validate();
  } catch (const ConfigError& e) {
    throw FormatError(source + ": invalid architecture header: " + e.what());
  }
  // Size check before allocating anything a corrupt header asks for.
  const double v_in = static_cast<double>(a.input_visual), a_in = static_cast<double>(a.input_acoustic);
  const double d = static_cast<double>(a.width), h = static_cast<double>(a.hidden);
  const double c = static_cast<double>(a.classes);
  const double per_stream = 3 * d * d + 4 * d + d * h + h + h * d + d;
  const double expected = (v_in + 1) * d + (a_in + 1) * d +
                          static_cast<double>(a.layers) * 2 * per_stream + (d + 1) * c;
  if (expected * 8 != static_cast<double>(r.remaining())) {
    if (expected * 8 > static_cast<double>(r.remaining())) {
      throw LengthError(source + ": checkpoint payload is shorter than its header declares");
    }
    throw FormatError(source + ": trailing bytes after parameters");
  }
  // Allocates correctly shaped tensors; every value is overwritten below.
  ModelParams p = init_model(a, 0);
  p.tensors.for_each([&](Matrix& m) {
    for (double& v : m.values()) v = r.f64();
  });
  return p;
}

inline void save_model(const std::filesystem::path& path, const ModelParams& p) {
  write_file_atomic(path, encode_checkpoint(p));
}

inline ModelParams load_model(const std::filesystem::path& path) {
  return decode_checkpoint(read_file(path), path.string());
}

}  // namespace fdan
