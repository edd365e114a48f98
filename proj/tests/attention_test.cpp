#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "fdan/attention.hpp"
#include "test_support.hpp"

namespace fdan {
namespace {

using testing::max_relative_error;
using testing::numeric_gradient;
using testing::random_matrix;

StreamParams<Var> constants(Tape& t, const StreamParams<Matrix>& p) {
  return bind(t, p, [](Tape& tape, const Matrix& m) { return tape.constant(m); });
}

BlockParams<Var> constants(Tape& t, const AttentionBlockParams& p) {
  return {constants(t, p.visual), constants(t, p.acoustic)};
}

AttentionBlockParams random_block(std::size_t d, std::size_t h, std::uint64_t seed) {
  Rng rng(seed);
  AttentionBlockParams p = init_block(d, h, rng);
  // Non-trivial norm parameters so every tensor is exercised.
  auto jitter = [&](Matrix& m, double base) {
    for (double& v : m.values()) v = base + rng.uniform(-0.3, 0.3);
  };
  for (StreamParams<Matrix>* s : {&p.visual, &p.acoustic}) {
    jitter(s->norm1_gain, 1.0);
    jitter(s->norm1_bias, 0.0);
    jitter(s->norm2_gain, 1.0);
    jitter(s->norm2_bias, 0.0);
    jitter(s->ffn_b1, 0.0);
    jitter(s->ffn_b2, 0.0);
  }
  return p;
}

Matrix standardize_rows(const Matrix& z) {
  Matrix out = z;
  for (std::size_t r = 0; r < z.rows(); ++r) {
    double mean = 0.0;
    for (double v : z.row(r)) mean += v;
    mean /= static_cast<double>(z.cols());
    double var = 0.0;
    for (double v : z.row(r)) var += (v - mean) * (v - mean);
    var /= static_cast<double>(z.cols());
    for (std::size_t c = 0; c < z.cols(); ++c) out(r, c) = (z(r, c) - mean) / std::sqrt(var);
  }
  return out;
}

TEST(ProjectQkv, IdentityProjectionsGiveTranspose) {
  std::mt19937_64 gen(1);
  const Matrix z = random_matrix(3, 4, gen);
  StreamParams<Matrix> p = zero_stream(4, 8);
  p.w_query = p.w_key = p.w_value = Matrix::identity(4);
  Tape t;
  const QueryKeyValue qkv = project_qkv(t.constant(z), constants(t, p));
  EXPECT_EQ(qkv.query.value(), z.transposed());
  EXPECT_EQ(qkv.key.value(), z.transposed());
  EXPECT_EQ(qkv.value.value(), z.transposed());
}

TEST(ProjectQkv, EqualsThreeMatmulsAgainstTranspose) {
  std::mt19937_64 gen(2);
  const Matrix z = random_matrix(3, 4, gen);
  Rng rng(2);
  const StreamParams<Matrix> p = init_stream(4, 8, rng);
  Tape t;
  const QueryKeyValue qkv = project_qkv(t.constant(z), constants(t, p));
  EXPECT_EQ(qkv.query.value().shape_string(), "4x3");
  EXPECT_EQ(qkv.query.value(), matmul(p.w_query, z.transposed()));
  EXPECT_EQ(qkv.key.value(), matmul(p.w_key, z.transposed()));
  EXPECT_EQ(qkv.value.value(), matmul(p.w_value, z.transposed()));
}

TEST(ProjectQkv, WidthMismatchIsShapeError) {
  Tape t;
  EXPECT_THROW(project_qkv(t.constant(Matrix(3, 5)), constants(t, zero_stream(4, 8))), ShapeError);
}

TEST(CrossPropagate, IdenticalKeysAverageValues) {
  std::mt19937_64 gen(3);
  const Matrix q = random_matrix(4, 2, gen);
  Matrix k(4, 3);
  for (std::size_t r = 0; r < 4; ++r)
    for (std::size_t c = 0; c < 3; ++c) k(r, c) = 0.1 * static_cast<double>(r + 1);
  const Matrix v = random_matrix(4, 3, gen);
  Tape t;
  const Propagation p = cross_propagate(t.constant(q), t.constant(k), t.constant(v));
  ASSERT_EQ(p.output.value().shape_string(), "2x4");
  for (std::size_t i = 0; i < 2; ++i) {
    for (std::size_t j = 0; j < 3; ++j) EXPECT_NEAR(p.weights.value()(i, j), 1.0 / 3.0, 1e-15);
    for (std::size_t c = 0; c < 4; ++c) {
      const double mean = (v(c, 0) + v(c, 1) + v(c, 2)) / 3.0;
      EXPECT_NEAR(p.output.value()(i, c), mean, 1e-14);
    }
  }
}

TEST(CrossPropagate, DominantKeySaturates) {
  std::mt19937_64 gen(4);
  Matrix q = random_matrix(4, 1, gen);
  double norm = 0.0;
  for (double x : q.values()) norm += x * x;
  norm = std::sqrt(norm);
  Matrix k = random_matrix(4, 3, gen, -0.2, 0.2);
  for (std::size_t r = 0; r < 4; ++r) k(r, 1) += 20.0 * q(r, 0) / norm;
  const Matrix v = random_matrix(4, 3, gen);

  // Direct evaluation of the softmax over the three scores.
  double scores[3];
  for (std::size_t j = 0; j < 3; ++j) {
    scores[j] = 0.0;
    for (std::size_t r = 0; r < 4; ++r) scores[j] += q(r, 0) * k(r, j);
    scores[j] /= 2.0;
  }
  const double z = std::exp(scores[0]) + std::exp(scores[1]) + std::exp(scores[2]);

  Tape t;
  const Propagation p = cross_propagate(t.constant(q), t.constant(k), t.constant(v));
  EXPECT_NEAR(p.weights.value()(0, 1), std::exp(scores[1]) / z, 1e-12);
  EXPECT_GT(p.weights.value()(0, 1), 0.99);
  for (std::size_t c = 0; c < 4; ++c) EXPECT_NEAR(p.output.value()(0, c), v(c, 1), 1e-2);
}

TEST(CrossPropagate, WeightsAreRowStochastic) {
  std::mt19937_64 gen(5);
  std::uniform_int_distribution<std::size_t> n(1, 12);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t nt = n(gen), ns = n(gen);
    Tape t;
    const Propagation p = cross_propagate(t.constant(random_matrix(6, nt, gen, -3, 3)),
                                          t.constant(random_matrix(6, ns, gen, -3, 3)),
                                          t.constant(random_matrix(6, ns, gen)));
    for (std::size_t r = 0; r < nt; ++r) {
      double s = 0.0;
      for (double w : p.weights.value().row(r)) s += w;
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
  }
}

TEST(CrossPropagate, MismatchedWidthIsShapeError) {
  Tape t;
  EXPECT_THROW(cross_propagate(t.constant(Matrix(4, 2)), t.constant(Matrix(3, 3)),
                               t.constant(Matrix(4, 3))),
               ShapeError);
}

TEST(FuseUpdate, DegenerateParamsStandardizeRows) {
  std::mt19937_64 gen(6);
  const Matrix z = random_matrix(5, 6, gen, -3, 3);
  Tape t;
  const Var out = fuse_update(t.constant(z), t.constant(Matrix(5, 6)), constants(t, zero_stream(6, 12)));
  EXPECT_EQ(out.value().shape_string(), "5x6");
  EXPECT_LE(max_abs_diff(out.value(), standardize_rows(z)), 1e-4);
}

TEST(FuseUpdate, ShapeMismatchIsShapeError) {
  Tape t;
  EXPECT_THROW(fuse_update(t.constant(Matrix(5, 6)), t.constant(Matrix(4, 6)),
                           constants(t, zero_stream(6, 12))),
               ShapeError);
}

TEST(FuseUpdate, GradientMatchesFiniteDifferences) {
  std::mt19937_64 gen(7);
  const Matrix z = random_matrix(4, 5, gen);
  const Matrix dz = random_matrix(4, 5, gen);
  const Matrix readout = random_matrix(4, 5, gen);
  const AttentionBlockParams params = random_block(5, 7, 7);
  auto f = [&](const Matrix& zz, const Matrix& dd, const StreamParams<Matrix>& p) {
    Tape t;
    return sum(hadamard(fuse_update(t.constant(zz), t.constant(dd), constants(t, p)),
                        t.constant(readout)))
        .scalar();
  };
  Tape t;
  const Var vz = t.variable(z);
  const Var vd = t.variable(dz);
  const StreamParams<Var> vp = bind_variables(t, params.visual);
  const Gradients g = t.backward(sum(hadamard(fuse_update(vz, vd, vp), t.constant(readout))));
  EXPECT_LE(max_relative_error(g.of(vz), numeric_gradient(
                                             [&](const Matrix& m) { return f(m, dz, params.visual); }, z)),
            1e-4);
  EXPECT_LE(max_relative_error(g.of(vd), numeric_gradient(
                                             [&](const Matrix& m) { return f(z, m, params.visual); }, dz)),
            1e-4);

  // Every parameter tensor, in declaration order.
  std::vector<Var> leaves;
  vp.for_each([&](const Var& v) { leaves.push_back(v); });
  std::size_t index = 0;
  params.visual.for_each([&](const Matrix& m) {
    const Var leaf = leaves[index];
    const std::size_t which = index++;
    const Matrix numeric = numeric_gradient(
        [&](const Matrix& probe) {
          StreamParams<Matrix> p = params.visual;
          std::size_t k = 0;
          p.for_each([&](Matrix& dst) {
            if (k++ == which) dst = probe;
          });
          return f(z, dz, p);
        },
        m);
    EXPECT_LE(max_relative_error(g.of(leaf), numeric), 1e-4) << "tensor " << which;
  });
}

TEST(CrossAttentionBlock, UnequalSampleCountsKeepShapes) {
  std::mt19937_64 gen(8);
  std::uniform_int_distribution<std::size_t> n(1, 9);
  const AttentionBlockParams params = random_block(4, 8, 8);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t nv = n(gen), na = n(gen);
    Tape t;
    const BlockOutput out = cross_attention_block(t.constant(random_matrix(nv, 4, gen)),
                                                  t.constant(random_matrix(na, 4, gen)),
                                                  constants(t, params));
    EXPECT_EQ(out.visual.rows(), nv);
    EXPECT_EQ(out.acoustic.rows(), na);
    EXPECT_EQ(out.visual.cols(), 4u);
    EXPECT_EQ(out.acoustic.cols(), 4u);
    EXPECT_EQ(out.weights_to_visual.value().shape_string(),
              std::to_string(nv) + "x" + std::to_string(na));
  }
}

TEST(CrossAttentionBlock, PermutationEquivariant) {
  std::mt19937_64 gen(9);
  for (int trial = 0; trial < 100; ++trial) {
    const AttentionBlockParams params = random_block(4, 8, 100 + trial);
    const Matrix zv = random_matrix(5, 4, gen, -2, 2);
    const Matrix za = random_matrix(3, 4, gen, -2, 2);
    const auto pv = testing::random_permutation(5, gen);
    const auto pa = testing::random_permutation(3, gen);
    Tape t;
    const BlockOutput base = cross_attention_block(t.constant(zv), t.constant(za), constants(t, params));
    const BlockOutput moved_a = cross_attention_block(t.constant(zv), t.constant(gather_rows(za, pa)),
                                                      constants(t, params));
    EXPECT_LE(max_abs_diff(moved_a.visual.value(), base.visual.value()), 1e-12);
    EXPECT_LE(max_abs_diff(moved_a.acoustic.value(), gather_rows(base.acoustic.value(), pa)), 1e-12);
    const BlockOutput moved_v = cross_attention_block(t.constant(gather_rows(zv, pv)), t.constant(za),
                                                      constants(t, params));
    EXPECT_LE(max_abs_diff(moved_v.acoustic.value(), base.acoustic.value()), 1e-12);
    EXPECT_LE(max_abs_diff(moved_v.visual.value(), gather_rows(base.visual.value(), pv)), 1e-12);
  }
}

TEST(CrossAttentionBlock, DegenerateParamsStandardizeBothInputs) {
  std::mt19937_64 gen(10);
  const Matrix zv = random_matrix(5, 6, gen, -3, 3);
  const Matrix za = random_matrix(3, 6, gen, -3, 3);
  AttentionBlockParams p{zero_stream(6, 12), zero_stream(6, 12)};
  Tape t;
  const BlockOutput out = cross_attention_block(t.constant(zv), t.constant(za), constants(t, p));
  EXPECT_LE(max_abs_diff(out.visual.value(), standardize_rows(zv)), 1e-4);
  EXPECT_LE(max_abs_diff(out.acoustic.value(), standardize_rows(za)), 1e-4);
}

TEST(CrossAttentionBlock, VisualOutputDependsOnAcousticOnlyThroughAttention) {
  std::mt19937_64 gen(11);
  const AttentionBlockParams params = random_block(4, 8, 11);
  const Matrix zv = random_matrix(5, 4, gen);
  Tape t;
  const Var a1 = t.constant(random_matrix(3, 4, gen));
  const Var a2 = t.constant(random_matrix(3, 4, gen));
  const BlockParams<Var> p = constants(t, params);
  EXPECT_EQ(cross_attention_block(t.constant(zv), a1, p, false).visual.value(),
            cross_attention_block(t.constant(zv), a2, p, false).visual.value());
  EXPECT_NE(cross_attention_block(t.constant(zv), a1, p).visual.value(),
            cross_attention_block(t.constant(zv), a2, p).visual.value());
}

TEST(CrossAttentionBlock, ReadoutGradientMatchesFiniteDifferences) {
  std::mt19937_64 gen(12);
  const AttentionBlockParams params = random_block(4, 6, 12);
  const Matrix zv = random_matrix(5, 4, gen);
  const Matrix za = random_matrix(3, 4, gen);
  const Matrix rv = random_matrix(5, 4, gen);
  const Matrix ra = random_matrix(3, 4, gen);
  auto readout = [&](Tape& t, const BlockOutput& o) {
    return sum(hadamard(o.visual, t.constant(rv))) + sum(hadamard(o.acoustic, t.constant(ra)));
  };
  auto f = [&](const Matrix& v, const Matrix& a) {
    Tape t;
    return readout(t, cross_attention_block(t.constant(v), t.constant(a), constants(t, params))).scalar();
  };
  Tape t;
  const Var vv = t.variable(zv);
  const Var va = t.variable(za);
  const Gradients g = t.backward(readout(t, cross_attention_block(vv, va, constants(t, params))));
  EXPECT_LE(max_relative_error(g.of(vv), numeric_gradient([&](const Matrix& m) { return f(m, za); }, zv)),
            1e-4);
  EXPECT_LE(max_relative_error(g.of(va), numeric_gradient([&](const Matrix& m) { return f(zv, m); }, za)),
            1e-4);
}

TEST(SelfUpdate, MatchesBlockWithoutAttention) {
  std::mt19937_64 gen(13);
  const AttentionBlockParams params = random_block(4, 8, 13);
  const Matrix za = random_matrix(3, 4, gen);
  Tape t;
  const BlockParams<Var> p = constants(t, params);
  const Var direct = self_update(t.constant(za), p.acoustic);
  const BlockOutput block = cross_attention_block(t.constant(random_matrix(2, 4, gen)),
                                                  t.constant(za), p, false);
  EXPECT_EQ(direct.value(), block.acoustic.value());
}

}  // namespace
}  // namespace fdan
