#include "ff/autodiff.hpp"
#include "ff/errors.hpp"
#include "support/gradcheck.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <random>

using namespace ff;
using ff::testing::random_tensor;

namespace {

Tensor<double> naive_matmul(const Tensor<double>& a, const Tensor<double>& b) {
  const Index m = a.dim(0), k = a.dim(1), n = b.dim(1);
  Tensor<double> c({m, n});
  for (Index i = 0; i < m; ++i)
    for (Index j = 0; j < n; ++j) {
      double s = 0;
      for (Index p = 0; p < k; ++p) s += a.at({i, p}) * b.at({p, j});
      c.at({i, j}) = s;
    }
  return c;
}

Tensor<double> naive_conv(const Tensor<double>& x, const Tensor<double>& w, Index stride, Index pad) {
  const Index n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const Index f = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const Index oh = (h + 2 * pad - kh) / stride + 1, ow = (wd + 2 * pad - kw) / stride + 1;
  Tensor<double> y({n, f, oh, ow});
  for (Index s = 0; s < n; ++s)
    for (Index o = 0; o < f; ++o)
      for (Index i = 0; i < oh; ++i)
        for (Index j = 0; j < ow; ++j) {
          double acc = 0;
          for (Index ch = 0; ch < c; ++ch)
            for (Index u = 0; u < kh; ++u)
              for (Index v = 0; v < kw; ++v) {
                const Index yy = i * stride + u - pad, xx = j * stride + v - pad;
                if (yy < 0 || yy >= h || xx < 0 || xx >= wd) continue;
                acc += x.at({s, ch, yy, xx}) * w.at({o, ch, u, v});
              }
          y.at({s, o, i, j}) = acc;
        }
  return y;
}

Tensor<double> naive_maxpool(const Tensor<double>& x, Index k, Index stride) {
  const Index oh = (x.dim(2) - k) / stride + 1, ow = (x.dim(3) - k) / stride + 1;
  Tensor<double> y({x.dim(0), x.dim(1), oh, ow});
  for (Index s = 0; s < x.dim(0); ++s)
    for (Index c = 0; c < x.dim(1); ++c)
      for (Index i = 0; i < oh; ++i)
        for (Index j = 0; j < ow; ++j) {
          double m = -INFINITY;
          for (Index u = 0; u < k; ++u)
            for (Index v = 0; v < k; ++v) m = std::max(m, x.at({s, c, i * stride + u, j * stride + v}));
          y.at({s, c, i, j}) = m;
        }
  return y;
}

void expect_close(const Tensor<double>& a, const Tensor<double>& b, double tol) {
  ASSERT_EQ(a.shape(), b.shape());
  for (Index i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], tol) << "at " << i;
}

}  // namespace

TEST(Ops, MatmulMatchesTripleLoop) {
  std::mt19937_64 rng(1);
  auto a = random_tensor({7, 5}, rng), b = random_tensor({5, 3}, rng);
  Tape<double> t;
  expect_close(matmul(t.constant(a), t.constant(b)).value(), naive_matmul(a, b), 1e-12);
}

TEST(Ops, ConvMatchesDirectLoop) {
  std::mt19937_64 rng(2);
  for (auto [stride, pad] : {std::pair<Index, Index>{1, 1}, {2, 0}, {2, 1}, {1, 0}}) {
    auto x = random_tensor({2, 3, 6, 5}, rng), w = random_tensor({4, 3, 3, 3}, rng);
    Tape<double> t;
    expect_close(conv2d(t.constant(x), t.constant(w), stride, pad).value(), naive_conv(x, w, stride, pad), 1e-12);
  }
}

TEST(Ops, MaxpoolMatchesWindowScan) {
  std::mt19937_64 rng(3);
  auto x = random_tensor({2, 3, 6, 6}, rng);
  Tape<double> t;
  expect_close(maxpool2d(t.constant(x), 2, 2).value(), naive_maxpool(x, 2, 2), 0);
  expect_close(maxpool2d(t.constant(x), 3, 1).value(), naive_maxpool(x, 3, 1), 0);
}

TEST(Ops, MaxpoolTieSendsAdjointToFirstElement) {
  Tape<double> t;
  Parameter<double> x{"x", Tensor<double>::constant({1, 1, 2, 2}, 1.0)};
  auto g = t.backward(sum(maxpool2d(t.parameter(x), 2, 2)));
  EXPECT_EQ(g.at(&x)[0], 1.0);
  EXPECT_EQ(g.at(&x)[1] + g.at(&x)[2] + g.at(&x)[3], 0.0);
}

TEST(Ops, LayernormReducedHasUnitMeanSquare) {
  std::mt19937_64 rng(4);
  auto x = random_tensor({3, 2, 4, 4}, rng, -5, 5);
  Tape<double> t;
  const auto y = layernorm_reduced(t.constant(x)).value();
  for (Index s = 0; s < 3; ++s) {
    double ms = 0, msx = 0;
    for (Index i = 0; i < 32; ++i) {
      ms += y[s * 32 + i] * y[s * 32 + i];
      msx += x[s * 32 + i] * x[s * 32 + i];
    }
    EXPECT_NEAR(ms / 32, msx / 32 / (msx / 32 + 1e-8), 1e-12);
    // No mean subtraction: the sign pattern is preserved.
    for (Index i = 0; i < 32; ++i) EXPECT_EQ(std::signbit(y[s * 32 + i]), std::signbit(x[s * 32 + i]));
  }
}

TEST(Ops, LayernormReducedZeroInputStaysFinite) {
  Tape<double> t;
  EXPECT_TRUE(layernorm_reduced(t.constant(Tensor<double>::zeros({2, 4}))).value().all_finite());
}

TEST(Ops, BatchnormBatchStatsMatchPerChannelFormula) {
  std::mt19937_64 rng(5);
  auto x = random_tensor({4, 2, 3, 3}, rng);
  Tape<double> t;
  BatchNormState<double> st(2);
  auto y = batchnorm(t.constant(x), t.constant(Tensor<double>::constant({2}, 1.0)),
                     t.constant(Tensor<double>::zeros({2})), st, {BatchNormStats::Batch, true})
               .value();
  for (Index c = 0; c < 2; ++c) {
    double mu = 0, var = 0;
    for (Index s = 0; s < 4; ++s)
      for (Index i = 0; i < 9; ++i) mu += x.at({s, c, i / 3, i % 3});
    mu /= 36;
    for (Index s = 0; s < 4; ++s)
      for (Index i = 0; i < 9; ++i) var += std::pow(x.at({s, c, i / 3, i % 3}) - mu, 2);
    const double biased = var / 36, unbiased = var / 35;
    for (Index s = 0; s < 4; ++s)
      for (Index i = 0; i < 9; ++i)
        EXPECT_NEAR(y.at({s, c, i / 3, i % 3}), (x.at({s, c, i / 3, i % 3}) - mu) / std::sqrt(biased + 1e-5), 1e-12);
    EXPECT_NEAR(st.running_mean[c], 0.1 * mu, 1e-12);
    EXPECT_NEAR(st.running_var[c], 0.9 + 0.1 * unbiased, 1e-12);
  }
  EXPECT_EQ(st.updates, 1);
}

TEST(Ops, BatchnormRunningModeLeavesStateUntouched) {
  std::mt19937_64 rng(6);
  BatchNormState<double> st(3);
  st.running_mean = random_tensor({3}, rng);
  st.running_var = random_tensor({3}, rng, 0.5, 2);
  const auto before = st.running_mean;
  Tape<double> t;
  auto x = random_tensor({5, 3}, rng);
  auto y = batchnorm(t.constant(x), t.constant(Tensor<double>::constant({3}, 2.0)),
                     t.constant(Tensor<double>::constant({3}, 0.5)), st, {BatchNormStats::Running, false})
               .value();
  for (Index s = 0; s < 5; ++s)
    for (Index c = 0; c < 3; ++c)
      EXPECT_NEAR(y.at({s, c}), 2.0 * (x.at({s, c}) - before[c]) / std::sqrt(st.running_var[c] + 1e-5) + 0.5, 1e-12);
  expect_close(st.running_mean, before, 0);
  EXPECT_EQ(st.updates, 0);
}

TEST(Ops, SoftplusBranches) {
  EXPECT_NEAR(softplus_value(0.0), std::log(2.0), 1e-15);
  EXPECT_NEAR(softplus_value(-30.0), std::exp(-30.0), 1e-25);
  EXPECT_EQ(softplus_value(25.0), 25.0);
  EXPECT_NEAR(softplus_value(20.0), std::log1p(std::exp(20.0)), 1e-12);
  EXPECT_TRUE(std::isfinite(softplus_value(1e6)));
  EXPECT_NEAR(sigmoid_value(0.0), 0.5, 1e-15);
}

TEST(Ops, CrossEntropyOfUniformLogitsIsLogK) {
  Tape<double> t;
  const std::vector<int> labels{0, 3};
  EXPECT_NEAR(cross_entropy(t.constant(Tensor<double>::zeros({2, 5})), labels).value().item(), std::log(5.0), 1e-14);
}

TEST(Ops, LabelConcatAppendsEmbeddingRow) {
  Tape<double> t;
  auto img = Tensor<double>::constant({2, 1, 2, 2}, 9.0);
  auto emb = Tensor<double>::from({3, 4}, {0, 1, 2, 3, 10, 11, 12, 13, 20, 21, 22, 23});
  const std::vector<int> labels{2, 1};
  auto y = label_concat(t.constant(img), labels, t.constant(emb)).value();
  ASSERT_EQ(y.shape(), (Shape{2, 2, 2, 2}));
  for (Index i = 0; i < 4; ++i) {
    EXPECT_EQ(y.at({0, 0, i / 2, i % 2}), 9.0);
    EXPECT_EQ(y.at({0, 1, i / 2, i % 2}), 20.0 + static_cast<double>(i));
    EXPECT_EQ(y.at({1, 1, i / 2, i % 2}), 10.0 + static_cast<double>(i));
  }
}

TEST(Tape, DetachStopsGradient) {
  Parameter<double> a{"a", Tensor<double>::constant({2, 2}, 1.5)};
  Parameter<double> b{"b", Tensor<double>::constant({2, 2}, 0.5)};
  Tape<double> t;
  auto h = t.detach(scale(t.parameter(a), 2.0));
  auto g = t.backward(sum(square_sum(add(h, t.parameter(b)))));
  EXPECT_EQ(g.count(&a), 0u);
  ASSERT_EQ(g.count(&b), 1u);
  EXPECT_NEAR(g.at(&b)[0], 2 * (3.0 + 0.5), 1e-12);
}

TEST(Tape, FrozenParameterGetsNoEntry) {
  Parameter<double> a{"a", Tensor<double>::constant({3}, 1.0)};
  Tape<double> t;
  auto g = t.backward(sum(t.parameter(a, false)));
  EXPECT_TRUE(g.empty());
}

TEST(Tape, SharedParameterAccumulates) {
  Parameter<double> a{"a", Tensor<double>::from({2}, {1.0, -2.0})};
  Tape<double> t;
  auto g = t.backward(sum(add(t.parameter(a), scale(t.parameter(a), 3.0))));
  EXPECT_EQ(g.at(&a)[0], 4.0);
  EXPECT_EQ(g.at(&a)[1], 4.0);
}

TEST(Tape, BackwardRequiresScalarAndRunsOnce) {
  Parameter<double> a{"a", Tensor<double>::constant({3}, 1.0)};
  Tape<double> t;
  auto x = t.parameter(a);
  EXPECT_THROW(t.backward(x), UsageError);
  auto s = sum(x);
  t.backward(s);
  EXPECT_THROW(t.backward(s), UsageError);
}

TEST(Ops, ShapeMismatchesThrow) {
  Tape<double> t;
  auto a = t.constant(Tensor<double>::zeros({2, 3}));
  auto b = t.constant(Tensor<double>::zeros({4, 2}));
  EXPECT_THROW(matmul(a, b), DimensionError);
  EXPECT_THROW(add(a, b), DimensionError);
  EXPECT_THROW(slice_batch(a, 1, 2), DimensionError);
}

TEST(GradCheck, EveryOpAndBlockVariant) {
  const auto results = ff::testing::all_grad_checks();
  EXPECT_GE(results.size(), 20u);
  for (const auto& r : results) EXPECT_LT(r.rel_error, 1e-6) << r.name << " over " << r.entries << " entries";
}

TEST(GradCheck, FloatInstantiationAgreesWithDouble) {
  std::mt19937_64 rng(8);
  auto xd = random_tensor({4, 6}, rng);
  Parameter<double> pd{"x", xd};
  Parameter<float> pf{"x", xd.cast<float>()};
  Tape<double> td;
  Tape<float> tf;
  auto gd = td.backward(mean(square_mean(layernorm_reduced(relu(td.parameter(pd))))));
  auto gf = tf.backward(mean(square_mean(layernorm_reduced(relu(tf.parameter(pf))))));
  for (Index i = 0; i < xd.size(); ++i) EXPECT_NEAR(gd.at(&pd)[i], gf.at(&pf)[i], 1e-5);
}
