#include <cmath>
#include <set>

#include <gtest/gtest.h>

#include "mdcpc/causality.hpp"
#include "mdcpc/cpc.hpp"
#include "mdcpc/error.hpp"
#include "mdcpc/gradcheck.hpp"
#include "mdcpc/model.hpp"
#include "test_util.hpp"

using namespace mdcpc;
using tu::random_tensor;

namespace {

// Cross-entropy of the positive (class 0) under a plain softmax over
// [positive, negatives...], with no log-sum-exp shift.
long double oracle_nce(const std::vector<Real>& pred, const std::vector<Real>& pos,
                       const std::vector<std::vector<Real>>& negs) {
  auto score = [&](const std::vector<Real>& v) {
    long double s = 0;
    for (std::size_t i = 0; i < v.size(); ++i) s += static_cast<long double>(pred[i]) * v[i];
    return s;
  };
  long double denom = std::exp(score(pos));
  for (const auto& n : negs) denom += std::exp(score(n));
  return -std::log(std::exp(score(pos)) / denom);
}

std::vector<Real> random_vec(int d, Rng& rng) {
  std::normal_distribution<Real> g(0.0, 1.0);
  std::vector<Real> v(static_cast<std::size_t>(d));
  for (auto& x : v) x = g(rng);
  return v;
}

CpcConfig toy_config(MaskKind kind, Directional d) {
  CpcConfig c;
  c.encoder.latent_dim = 8;
  c.encoder.patch_size = 8;
  c.encoder.toy_width = 4;
  c.autoregressor.channels = 8;
  c.autoregressor.directional = d;
  c.mask_kind = kind;
  c.image_size = 32;
  c.stride = 4;
  c.negatives = 4;
  return c;
}

}  // namespace

TEST(Mask, InfillRing) {
  const LatentMask m = make_infill_mask(7);
  EXPECT_EQ(m.context_count(), 24);
  EXPECT_EQ(m.target_count(), 25);
  EXPECT_TRUE(m.is_context(0, 3));
  EXPECT_TRUE(m.is_target(1, 1));
  EXPECT_EQ(m.target_positions().front(), GridPos(1, 1));
  EXPECT_EQ(m.target_positions().back(), GridPos(5, 5));
  EXPECT_EQ(make_infill_mask(3).target_count(), 1);
  EXPECT_THROW(make_infill_mask(2), InvalidArgument);
}

TEST(Mask, TopDownRows) {
  const LatentMask m = make_topdown_mask(7, 3);
  EXPECT_EQ(m.context_count(), 21);
  EXPECT_EQ(m.target_count(), 28);
  EXPECT_TRUE(m.is_context(2, 6));
  EXPECT_TRUE(m.is_target(3, 0));
  EXPECT_THROW(make_topdown_mask(7, 0), InvalidArgument);
  EXPECT_THROW(make_topdown_mask(7, 7), InvalidArgument);
}

TEST(Mask, ApplyZeroesTargetsOnly) {
  const LatentGrid z = FeatureGrid::from_tensor(random_tensor({1, 5, 5, 3}, 1));
  const LatentMask m = make_infill_mask(5);
  const LatentGrid masked = apply_mask(z, m);
  const ag::Var mv = apply_mask(ag::constant(z.to_tensor()), m);
  for (int r = 0; r < 5; ++r)
    for (int c = 0; c < 5; ++c)
      for (int d = 0; d < 3; ++d) {
        const Real expect = m.is_target(r, c) ? 0.0 : z.at(r, c)[d];
        EXPECT_EQ(masked.at(r, c)[d], expect);
        EXPECT_EQ(mv->value.at(0, r, c, d), expect);
      }
  EXPECT_THROW(apply_mask(z, make_infill_mask(4)), GeometryError);
}

TEST(InfoNce, MatchesSoftmaxOracle) {
  Rng rng(123);
  double worst = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int targets = 1 + static_cast<int>(rng() % 4), d = 2 + static_cast<int>(rng() % 5);
    const int n = 1 + static_cast<int>(rng() % 16);
    std::vector<std::vector<Real>> preds, pos;
    std::vector<std::vector<std::vector<Real>>> negs(static_cast<std::size_t>(targets));
    long double oracle = 0;
    for (int t = 0; t < targets; ++t) {
      preds.push_back(random_vec(d, rng));
      pos.push_back(random_vec(d, rng));
      for (int k = 0; k < n; ++k) negs[static_cast<std::size_t>(t)].push_back(random_vec(d, rng));
      oracle += oracle_nce(preds.back(), pos.back(), negs[static_cast<std::size_t>(t)]);
    }
    oracle /= targets;
    worst = std::max(worst, std::abs(static_cast<double>(oracle) - info_nce_loss(preds, pos, negs)));
  }
  EXPECT_LE(worst, 1e-6);
}

TEST(InfoNce, EqualScoresGiveLogOfCandidates) {
  std::vector<std::vector<Real>> preds = {{0, 0}}, pos = {{1, 2}};
  std::vector<std::vector<std::vector<Real>>> negs = {{{3, 4}, {5, 6}, {7, 8}, {9, 1}}};
  EXPECT_NEAR(info_nce_loss(preds, pos, negs), std::log(5.0), 1e-15);
}

TEST(InfoNce, ShapeAndValueErrors) {
  std::vector<std::vector<Real>> preds = {{1, 0}}, pos = {{1, 2, 3}};
  std::vector<std::vector<std::vector<Real>>> negs = {{{1, 0}}};
  EXPECT_THROW(info_nce_loss(preds, pos, negs), GeometryError);
  EXPECT_THROW(info_nce_loss({}, {}, {}), InvalidArgument);
  pos = {{1, 2}};
  negs = {{{std::numeric_limits<Real>::infinity(), 0}}};
  EXPECT_THROW(info_nce_loss(preds, pos, negs), NumericError);
}

TEST(InfoNce, GraphFormMatchesValueFormAndGradients) {
  const int n = 3, g = 3, d = 4;
  const std::vector<GridPos> targets = {{1, 1}, {2, 0}};
  const Tensor z = random_tensor({n, g, g, d}, 5);
  const Tensor p = random_tensor({n * 2, d}, 6);
  Rng rng(7);
  std::vector<std::vector<int>> neg_idx;
  std::vector<std::vector<Real>> preds, pos;
  std::vector<std::vector<std::vector<Real>>> negs;
  for (int i = 0; i < n; ++i)
    for (int t = 0; t < 2; ++t) {
      neg_idx.push_back(sample_negative_indices(n, i, 3, rng));
      const auto [r, c] = targets[static_cast<std::size_t>(t)];
      auto vec = [&](int img) {
        std::vector<Real> v;
        for (int k = 0; k < d; ++k) v.push_back(z.at(img, r, c, k));
        return v;
      };
      preds.emplace_back(p.data() + (i * 2 + t) * d, p.data() + (i * 2 + t + 1) * d);
      pos.push_back(vec(i));
      negs.emplace_back();
      for (int j : neg_idx.back()) negs.back().push_back(vec(j));
    }
  ParamSet ps;
  ag::Var pv = ps.add("p", p), zv = ps.add("z", z);
  auto objective = [&] { return info_nce(pv, zv, targets, neg_idx); };
  EXPECT_NEAR(objective()->value[0], info_nce_loss(preds, pos, negs), 1e-12);
  EXPECT_LE(gradient_check(ps, objective).max_relative_error, 1e-6);
}

TEST(Negatives, ExcludePositiveAndCoverOthers) {
  Rng rng(3);
  std::set<int> seen;
  for (int k = 0; k < 200; ++k)
    for (int j : sample_negative_indices(5, 2, 4, rng)) {
      EXPECT_NE(j, 2);
      EXPECT_GE(j, 0);
      EXPECT_LT(j, 5);
      seen.insert(j);
    }
  EXPECT_EQ(seen, (std::set<int>{0, 1, 3, 4}));
  EXPECT_EQ(sample_negative_indices(2, 0, 3, rng), (std::vector<int>{1, 1, 1}));
  EXPECT_THROW(sample_negative_indices(1, 0, 3, rng), InvalidArgument);
  EXPECT_THROW(sample_negative_indices(4, 0, 0, rng), InvalidArgument);
}

TEST(Negatives, ReturnTrueLatentsAtPosition) {
  std::vector<LatentGrid> batch;
  for (int i = 0; i < 4; ++i) batch.push_back(FeatureGrid::from_tensor(random_tensor({1, 3, 3, 2}, 10 + i)));
  const auto negs = sample_negatives(batch, 1, {2, 1}, 6, 99);
  ASSERT_EQ(negs.size(), 6u);
  for (const auto& v : negs) {
    int matches = 0;
    for (int i = 0; i < 4; ++i) {
      const Real* z = batch[static_cast<std::size_t>(i)].at(2, 1);
      if (v[0] == z[0] && v[1] == z[1]) {
        EXPECT_NE(i, 1);
        ++matches;
      }
    }
    EXPECT_EQ(matches, 1);
  }
  EXPECT_EQ(negs, sample_negatives(batch, 1, {2, 1}, 6, 99));
  EXPECT_THROW(sample_negatives(batch, 1, {3, 0}, 2, 1), GeometryError);
}

TEST(Head, TopDownUsesDeepestContextRow) {
  const int g = 5, d = 3, rows = 2;
  std::vector<Tensor> maps;
  for (int k = 0; k < g - rows; ++k) maps.push_back(random_tensor({d, d}, 20 + k));
  const PredictionHead head(MaskKind::top_down, rows, maps);
  const LatentMask mask = make_topdown_mask(g, rows);
  const ContextGrid ctx = FeatureGrid::from_tensor(random_tensor({1, g, g, d}, 30));
  const auto preds = predict_targets(ctx, mask, head);
  const auto targets = mask.target_positions();
  ASSERT_EQ(preds.size(), targets.size());
  for (std::size_t t = 0; t < targets.size(); ++t) {
    const auto [r, c] = targets[t];
    const Tensor& w = maps[static_cast<std::size_t>(r - rows)];
    for (int o = 0; o < d; ++o) {
      Real expect = 0;
      for (int i = 0; i < d; ++i) expect += ctx.at(rows - 1, c)[i] * w[static_cast<std::size_t>(i * d + o)];
      EXPECT_NEAR(preds[t][static_cast<std::size_t>(o)], expect, 1e-12);
    }
  }
}

TEST(Head, InfillUsesContextAtTarget) {
  const int g = 4, d = 3;
  const Tensor w = random_tensor({d, d}, 40);
  const PredictionHead head(MaskKind::infill, 0, {w});
  const LatentMask mask = make_infill_mask(g);
  const ContextGrid ctx = FeatureGrid::from_tensor(random_tensor({1, g, g, d}, 41));
  const auto preds = predict_targets(ctx, mask, head);
  const auto targets = mask.target_positions();
  for (std::size_t t = 0; t < targets.size(); ++t) {
    const auto [r, c] = targets[t];
    for (int o = 0; o < d; ++o) {
      Real expect = 0;
      for (int i = 0; i < d; ++i) expect += ctx.at(r, c)[i] * w[static_cast<std::size_t>(i * d + o)];
      EXPECT_NEAR(preds[t][static_cast<std::size_t>(o)], expect, 1e-12);
    }
  }
}

TEST(Head, Errors) {
  const PredictionHead infill(MaskKind::infill, 5, 0, 3, 1);
  const ContextGrid ctx = FeatureGrid::from_tensor(random_tensor({1, 5, 5, 3}, 1));
  EXPECT_THROW(predict_targets(ctx, make_topdown_mask(5, 2), infill), ConfigError);
  EXPECT_THROW(predict_targets(ctx, make_infill_mask(4), infill), GeometryError);
  const PredictionHead td(MaskKind::top_down, 5, 2, 3, 1);
  EXPECT_EQ(td.map_count(), 3);
  EXPECT_THROW(predict_targets(ctx, make_topdown_mask(5, 3), td), ConfigError);
  EXPECT_THROW(PredictionHead(MaskKind::infill, 0, {Tensor({3, 3}), Tensor({3, 3})}), ConfigError);
  EXPECT_THROW(PredictionHead(MaskKind::infill, 0, {Tensor({3, 2})}), ConfigError);
  EXPECT_THROW(PredictionHead(MaskKind::top_down, 5, 5, 3, 1), ConfigError);
  EXPECT_THROW(parse_mask_kind("diagonal"), ConfigError);
}

TEST(CpcModel, ToyInitialLossNearLogFive) {
  CpcConfig c = toy_config(MaskKind::infill, Directional::multi);
  const DatasetStore data = generate_synthetic(8, 32, 5);
  std::vector<const ImageSample*> batch;
  for (int i = 0; i < 8; ++i) batch.push_back(&data.train[static_cast<std::size_t>(i)]);
  const CpcModel model(c, 11);
  Rng rng(12);
  const Real loss = model.loss(batch, rng)->value[0];
  EXPECT_NEAR(loss, std::log(5.0), 0.3);
}

TEST(CpcModel, ConfigValidation) {
  CpcConfig c = toy_config(MaskKind::infill, Directional::multi);
  c.autoregressor.channels = 4;
  EXPECT_THROW(CpcModel(c, 1), ConfigError);
  c = toy_config(MaskKind::top_down, Directional::single);
  c.context_rows = c.grid();
  EXPECT_THROW(CpcModel(c, 1), ConfigError);
  c = toy_config(MaskKind::infill, Directional::multi);
  c.negatives = 0;
  EXPECT_THROW(CpcModel(c, 1), ConfigError);
  EXPECT_EQ(cpc_config_from_json(to_json(default_cpc_config())).grid(), 7);
}

TEST(CpcModel, LeakcheckPassesForBothModes) {
  for (auto [kind, dir] : {std::pair{MaskKind::infill, Directional::multi},
                           std::pair{MaskKind::top_down, Directional::single}}) {
    CpcConfig c = toy_config(kind, dir);
    c.autoregressor.depth = 2;
    c.image_size = 28;  // 6x6 grid
    const CpcModel model(c, 2);
    for (const auto& r : run_leakcheck(model, 3, 4)) EXPECT_TRUE(r.passed) << r.detail;
  }
}

TEST(Gradcheck, ToyCpcGraph) {
  const CpcConfig c = gradcheck_cpc_config();
  const CpcModel model(c, 1);
  EXPECT_LE(model.params().count(), 1000u);
  const auto report = gradient_check_cpc(c, 1);
  EXPECT_EQ(report.checked, model.params().count());
  EXPECT_LE(report.max_relative_error, 1e-4);
}
