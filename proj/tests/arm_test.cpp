#include "idnerf/arm.hpp"

#include <gtest/gtest.h>

#include <cmath>

#include "idnerf/gradcheck.hpp"

using namespace idnerf;

namespace {

Tensor random_tensor(const Shape& s, Rng& rng, double lo = -1, double hi = 1) {
  Tensor t = Tensor::zeros(s);
  for (double& v : t.values()) v = rng.uniform(lo, hi);
  return t;
}

ArmConfig small_cfg() {
  ArmConfig c;
  c.token_width = 21;
  c.layers = 2;
  c.dim = 8;
  c.head_dim = 4;
  c.heads = 4;
  c.latent_hw = 8;
  return c;
}

// Reference dense attention for one head, plain loops.
std::vector<double> attention_oracle(const std::vector<double>& x, int64_t B,
                                     int64_t T, int64_t d,
                                     const std::vector<double>& wq,
                                     const std::vector<double>& wk,
                                     const std::vector<double>& wv, int64_t dp,
                                     const std::vector<double>& key_bias) {
  auto proj = [&](const std::vector<double>& w, int64_t b, int64_t t, int64_t p) {
    double s = 0;
    for (int64_t i = 0; i < d; ++i)
      s += x[static_cast<size_t>((b * T + t) * d + i)] *
           w[static_cast<size_t>(i * dp + p)];
    return s;
  };
  std::vector<double> out(static_cast<size_t>(B * T * dp), 0.0);
  for (int64_t b = 0; b < B; ++b)
    for (int64_t t = 0; t < T; ++t) {
      std::vector<double> score(static_cast<size_t>(T));
      for (int64_t u = 0; u < T; ++u) {
        double s = 0;
        for (int64_t p = 0; p < dp; ++p)
          s += proj(wq, b, t, p) * proj(wk, b, u, p);
        score[static_cast<size_t>(u)] =
            s / std::sqrt(static_cast<double>(dp)) +
            key_bias[static_cast<size_t>(b * T + u)];
      }
      double mx = *std::max_element(score.begin(), score.end());
      double zsum = 0;
      for (double& s : score) {
        s = std::exp(s - mx);
        zsum += s;
      }
      for (int64_t u = 0; u < T; ++u)
        for (int64_t p = 0; p < dp; ++p)
          out[static_cast<size_t>((b * T + t) * dp + p)] +=
              score[static_cast<size_t>(u)] / zsum * proj(wv, b, u, p);
    }
  return out;
}

}  // namespace

TEST(Attention, SingleTokenIsIdentityWeight) {
  // With one token the softmax row is exactly 1, so the output is just the
  // value projection of that token.
  Rng rng(2);
  int64_t d = 6, dp = 3;
  Tensor x = random_tensor({1, 1, d}, rng);
  Tensor wq = random_tensor({d, dp}, rng);
  Tensor wk = random_tensor({d, dp}, rng);
  Tensor wv = random_tensor({d, dp}, rng);
  Tensor bias = Tensor::zeros({1, 1, 1});
  Tensor out = self_attention(x, wq, wk, wv, bias);
  Tensor v = matmul(reshape(x, {1, d}), wv);
  for (int64_t p = 0; p < dp; ++p)
    EXPECT_NEAR(out.values()[static_cast<size_t>(p)],
                v.values()[static_cast<size_t>(p)], 1e-12);
}

TEST(Attention, TwoIdenticalTokensSplitEvenly) {
  // Identical tokens give identical scores: each weight is exactly 1/2 and
  // the output equals the shared value row.
  Rng rng(3);
  int64_t d = 5, dp = 4;
  Tensor tok = random_tensor({1, 1, d}, rng);
  std::vector<double> two = tok.values();
  two.insert(two.end(), tok.values().begin(), tok.values().end());
  Tensor x = Tensor::from({1, 2, d}, two);
  Tensor wq = random_tensor({d, dp}, rng);
  Tensor wk = random_tensor({d, dp}, rng);
  Tensor wv = random_tensor({d, dp}, rng);
  Tensor out = self_attention(x, wq, wk, wv, Tensor::zeros({1, 1, 2}));
  Tensor v = matmul(reshape(tok, {1, d}), wv);
  for (int64_t t = 0; t < 2; ++t)
    for (int64_t p = 0; p < dp; ++p)
      EXPECT_NEAR(out.values()[static_cast<size_t>(t * dp + p)],
                  v.values()[static_cast<size_t>(p)], 1e-12);
}

TEST(Attention, MatchesDenseOracle) {
  Rng rng(4);
  int64_t B = 2, T = 4, d = 8, dp = 3;
  Tensor x = random_tensor({B, T, d}, rng);
  Tensor wq = random_tensor({d, dp}, rng);
  Tensor wk = random_tensor({d, dp}, rng);
  Tensor wv = random_tensor({d, dp}, rng);
  std::vector<double> bias(static_cast<size_t>(B * T), 0.0);
  bias[3] = -1e30;  // one masked key in batch 0
  Tensor out = self_attention(x, wq, wk, wv, Tensor::from({B, 1, T}, bias));
  auto want = attention_oracle(x.values(), B, T, d, wq.values(), wk.values(),
                               wv.values(), dp, bias);
  ASSERT_EQ(out.values().size(), want.size());
  for (size_t i = 0; i < want.size(); ++i)
    EXPECT_NEAR(out.values()[i], want[i], 1e-12);
}

TEST(Attention, LiteralValueProjectionUsesQueries) {
  Rng rng(5);
  int64_t B = 1, T = 3, d = 6, dp = 2;
  Tensor x = random_tensor({B, T, d}, rng);
  Tensor wq = random_tensor({d, dp}, rng);
  Tensor wk = random_tensor({d, dp}, rng);
  Tensor wv = random_tensor({d, dp}, rng);
  std::vector<double> nobias(static_cast<size_t>(T), 0.0);
  Tensor lit = self_attention(x, wq, wk, wv, Tensor::from({B, 1, T}, nobias), true);
  // Oracle with W_q standing in for the value projection.
  auto want = attention_oracle(x.values(), B, T, d, wq.values(), wk.values(),
                               wq.values(), dp, nobias);
  for (size_t i = 0; i < want.size(); ++i)
    EXPECT_NEAR(lit.values()[i], want[i], 1e-12);
  // And it differs from the standard path.
  Tensor std_out = self_attention(x, wq, wk, wv, Tensor::from({B, 1, T}, nobias));
  double diff = 0;
  for (size_t i = 0; i < want.size(); ++i)
    diff += std::fabs(std_out.values()[i] - lit.values()[i]);
  EXPECT_GT(diff, 1e-9);
}

TEST(Attention, MismatchedWidthNamed) {
  Rng rng(6);
  Tensor x = random_tensor({1, 2, 5}, rng);
  Tensor w = random_tensor({4, 2}, rng);
  try {
    self_attention(x, w, w, w, Tensor::zeros({1, 1, 2}));
    FAIL() << "expected ContractError";
  } catch (const ContractError& e) {
    std::string msg = e.what();
    EXPECT_NE(msg.find("4"), std::string::npos);
    EXPECT_NE(msg.find("5"), std::string::npos);
  }
}

TEST(Arm, CompressShapesAndZero) {
  Rng rng(7);
  ArmConfig cfg = small_cfg();
  ArmModule arm(cfg, rng);
  Tensor z = Tensor::zeros({4, cfg.latent_hw, cfg.latent_hw});
  Tensor f = arm.compress_latent(z);
  EXPECT_EQ(f.shape(), (Shape{cfg.dim}));
  for (double v : f.values()) EXPECT_DOUBLE_EQ(v, 0.0);
  EXPECT_THROW(arm.compress_latent(Tensor::zeros({4, 16, 16})), ContractError);
  EXPECT_THROW(arm.compress_latent(Tensor::zeros({3, 8, 8})), ContractError);
}

TEST(Arm, PermutationInvariantPooling) {
  // Equivariant attention + symmetric masked mean: shuffling the reprojected
  // tokens (with their mask) cannot change f_c.
  Rng rng(8);
  ArmConfig cfg = small_cfg();
  ArmModule arm(cfg, rng);
  int64_t B = 2, N = 4;
  Tensor tokens = random_tensor({B, N, cfg.token_width}, rng);
  std::vector<double> mask = {1, 1, 0, 1, 1, 1, 1, 0};
  Tensor f_tv = random_tensor({cfg.dim}, rng);
  Tensor base = arm.refine(tokens, mask, f_tv);

  // permutation (2,0,3,1) applied per batch row
  const int64_t perm[4] = {2, 0, 3, 1};
  std::vector<double> pv(tokens.values().size());
  std::vector<double> pmask(mask.size());
  for (int64_t b = 0; b < B; ++b)
    for (int64_t n = 0; n < N; ++n) {
      for (int64_t k = 0; k < cfg.token_width; ++k)
        pv[static_cast<size_t>((b * N + n) * cfg.token_width + k)] =
            tokens.values()[static_cast<size_t>(
                (b * N + perm[n]) * cfg.token_width + k)];
      pmask[static_cast<size_t>(b * N + n)] =
          mask[static_cast<size_t>(b * N + perm[n])];
    }
  Tensor shuffled = Tensor::from({B, N, cfg.token_width}, pv);
  Tensor out = arm.refine(shuffled, pmask, f_tv);
  for (size_t i = 0; i < base.values().size(); ++i)
    EXPECT_NEAR(out.values()[i], base.values()[i], 1e-12);
}

TEST(Arm, ZeroLayersIsMaskedMean) {
  Rng rng(9);
  ArmConfig cfg = small_cfg();
  cfg.layers = 0;
  ArmModule arm(cfg, rng);
  int64_t B = 1, N = 3;
  Tensor tokens = random_tensor({B, N, cfg.token_width}, rng);
  std::vector<double> mask = {1, 0, 1};
  Tensor out = arm.refine(tokens, mask, Tensor());
  // oracle: mean of the projected valid rows
  Tensor proj = arm.token_proj.forward(reshape(tokens, {N, cfg.token_width}));
  for (int64_t k = 0; k < cfg.dim; ++k) {
    double want = (proj.values()[static_cast<size_t>(k)] +
                   proj.values()[static_cast<size_t>(2 * cfg.dim + k)]) /
                  2.0;
    EXPECT_NEAR(out.values()[static_cast<size_t>(k)], want, 1e-12);
  }
}

TEST(Arm, ZeroValidTokensDegeneratesToLatent) {
  Rng rng(10);
  ArmConfig cfg = small_cfg();
  ArmModule arm(cfg, rng);
  int64_t B = 1, N = 3;
  Tensor tokens = random_tensor({B, N, cfg.token_width}, rng);
  std::vector<double> dead = {0, 0, 0};
  Tensor f_tv = random_tensor({cfg.dim}, rng);
  Tensor with = arm.refine(tokens, dead, f_tv);
  EXPECT_EQ(with.shape(), (Shape{B, cfg.dim}));
  // The reprojected tokens are fully masked: their content cannot matter.
  Tensor other = arm.refine(random_tensor({B, N, cfg.token_width}, rng), dead, f_tv);
  for (size_t i = 0; i < with.values().size(); ++i)
    EXPECT_NEAR(with.values()[i], other.values()[i], 1e-12);
  // Without any latent token either, the output is all zeros.
  Tensor none = arm.refine(tokens, dead, Tensor());
  for (double v : none.values()) EXPECT_DOUBLE_EQ(v, 0.0);
}

TEST(Arm, LatentPathwayIsLive) {
  Rng rng(11);
  ArmConfig cfg = small_cfg();
  ArmModule arm(cfg, rng);
  Tensor tokens = random_tensor({1, 3, cfg.token_width}, rng);
  std::vector<double> mask = {1, 1, 1};
  Tensor f_tv = random_tensor({cfg.dim}, rng);
  Tensor with = arm.refine(tokens, mask, f_tv);
  Tensor zeroed = arm.refine(tokens, mask, Tensor::zeros({cfg.dim}));
  double l2 = 0;
  for (size_t i = 0; i < with.values().size(); ++i) {
    double d = with.values()[i] - zeroed.values()[i];
    l2 += d * d;
  }
  EXPECT_GT(l2, 0.0);
}

TEST(Arm, PoolLatentTokenMode) {
  Rng rng(12);
  ArmConfig cfg = small_cfg();
  cfg.layers = 0;
  cfg.pool_latent_token = true;
  ArmModule arm(cfg, rng);
  Tensor tokens = random_tensor({2, 3, cfg.token_width}, rng);
  std::vector<double> mask = {1, 1, 1, 1, 1, 1};
  Tensor f_tv = random_tensor({cfg.dim}, rng);
  // With zero layers the pooled latent row is the latent token itself.
  Tensor out = arm.refine(tokens, mask, f_tv);
  for (int64_t b = 0; b < 2; ++b)
    for (int64_t k = 0; k < cfg.dim; ++k)
      EXPECT_NEAR(out.values()[static_cast<size_t>(b * cfg.dim + k)],
                  f_tv.values()[static_cast<size_t>(k)], 1e-12);
  EXPECT_THROW(arm.refine(tokens, mask, Tensor()), ContractError);
}

TEST(Arm, GradcheckThroughRefineAndCompress) {
  Rng rng(13);
  ArmConfig cfg = small_cfg();
  cfg.layers = 1;
  cfg.latent_hw = 4;
  ArmModule arm(cfg, rng);
  Tensor z_tv = random_tensor({4, 4, 4}, rng).set_requires_grad();
  Tensor tokens = random_tensor({2, 3, cfg.token_width}, rng).set_requires_grad();
  std::vector<double> mask = {1, 1, 0, 1, 1, 1};
  NamedParams ps;
  arm.params(ps);
  ps.emplace_back("z_tv", z_tv);
  ps.emplace_back("tokens", tokens);
  auto loss_fn = [&]() {
    Tensor f_c = arm.refine(tokens, mask, arm.compress_latent(z_tv));
    return sum_all(mul(f_c, f_c));
  };
  auto gc = gradcheck(loss_fn, ps, 1e-5, 13);
  EXPECT_LT(gc.max_rel_err, 1e-4);
  EXPECT_GT(gc.checked, 50);
}

TEST(Arm, MaskedTokenGradientIsZero) {
  Rng rng(14);
  ArmConfig cfg = small_cfg();
  ArmModule arm(cfg, rng);
  Tensor tokens = random_tensor({1, 3, cfg.token_width}, rng).set_requires_grad();
  std::vector<double> mask = {1, 0, 1};
  Tensor f_tv = random_tensor({cfg.dim}, rng);
  Tape tape;
  Tape::Scope scope(tape);
  Tensor f_c = arm.refine(tokens, mask, f_tv);
  tape.backward(sum_all(mul(f_c, f_c)));
  for (int64_t k = 0; k < cfg.token_width; ++k)
    EXPECT_DOUBLE_EQ(tokens.grad()[static_cast<size_t>(cfg.token_width + k)], 0.0);
  double live = 0;
  for (int64_t k = 0; k < cfg.token_width; ++k)
    live += std::fabs(tokens.grad()[static_cast<size_t>(k)]);
  EXPECT_GT(live, 0.0);
}
