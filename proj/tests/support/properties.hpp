#pragma once

#include "ff/goodness.hpp"
#include "ff/layers.hpp"
#include "support/gradcheck.hpp"

#include <cmath>
#include <random>
#include <string>

namespace ff::testing {

// Closed form, independent of the library loss: L = z(tau - gp) + z(gn - tau)
// with the exact softplus.
inline double ftl_oracle(double g_pos, double g_neg, double tau) {
  return std::log1p(std::exp(tau - g_pos)) + std::log1p(std::exp(g_neg - tau));
}

inline double ftl_library(double g_pos, double g_neg, double tau) {
  GoodnessBatch<double> b{Tensor<double>::scalar(g_pos), Tensor<double>::scalar(g_neg)};
  return ftl_loss(b, tau);
}

struct PropertyReport {
  bool pass = true;
  double worst_equal = 0;          // largest |difference| where equality must hold
  double smallest_unequal = 1e300; // smallest |difference| where it must not
  std::string detail;
};

// L(tau + a, tau + b) == L(tau - a, tau - b) iff a == b, and the FTL derivative
// magnitudes balance iff delta_pos == delta_neg.
inline PropertyReport ftl_symmetry(std::uint64_t seed = 11, int pairs = 100) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-5.0, 5.0), t(0.5, 10.0);
  PropertyReport r;
  for (int i = 0; i < pairs; ++i) {
    const double tau = t(rng);
    const double a = u(rng);
    double b = u(rng);
    if (std::abs(a - b) < 1e-3) b = a + 0.5;

    const double eq = std::abs(ftl_library(tau + a, tau + a, tau) - ftl_library(tau - a, tau - a, tau));
    const double ne = std::abs(ftl_library(tau + a, tau + b, tau) - ftl_library(tau - a, tau - b, tau));
    const auto bal_eq = ftl_gradient_balance(a, a, tau);
    const auto bal_ne = ftl_gradient_balance(a, b, tau);
    const double beq = std::abs(bal_eq.d_neg - bal_eq.d_pos);
    const double bne = std::abs(bal_ne.d_neg - bal_ne.d_pos);
    r.worst_equal = std::max({r.worst_equal, eq, beq});
    r.smallest_unequal = std::min({r.smallest_unequal, ne, bne});
  }
  r.pass = r.worst_equal <= 1e-12 && r.smallest_unequal > 1e-6;
  r.detail = "max equal-case diff " + std::to_string(r.worst_equal) + ", min unequal-case diff " +
             std::to_string(r.smallest_unequal);
  return r;
}

// relu(F(x, a * theta)) == a * relu(F(x, theta)) for unnormalized dense and
// conv blocks.
inline PropertyReport scaling_identity(std::uint64_t seed = 12) {
  Rng rng(seed);
  PropertyReport r;
  r.smallest_unequal = 0;
  for (BlockKind kind : {BlockKind::Dense, BlockKind::Conv}) {
    BlockConfig cfg;
    cfg.kind = kind;
    cfg.norm = NormKind::None;
    cfg.width = 6;
    const Shape in = kind == BlockKind::Dense ? Shape{20} : Shape{3, 8, 8};
    LayerBlock<double> block(cfg, in, rng, "b");
    Shape batch{4};
    batch.insert(batch.end(), in.begin(), in.end());
    const auto x = random_tensor(batch, rng);
    Tape<double> tape;
    const auto base = block_forward(block, tape.constant(x), Mode::Eval).value();
    for (double alpha : {0.5, 2.0, 10.0}) {
      LayerBlock<double> scaled = block;
      scaled.weight.value.vec() *= alpha;
      scaled.bias.value.vec() *= alpha;
      const auto y = block_forward(scaled, tape.constant(x), Mode::Eval).value();
      r.worst_equal = std::max(r.worst_equal, (y.vec() - alpha * base.vec()).cwiseAbs().maxCoeff());
    }
  }
  r.pass = r.worst_equal <= 1e-6;
  r.detail = "max |relu(F(x, a theta)) - a relu(F(x, theta))| = " + std::to_string(r.worst_equal);
  return r;
}

}  // namespace ff::testing
