// Copyright 2026 The capreg Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.


#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "capreg/atlas.h"
#include "capreg/models.h"

namespace capreg {
namespace {

using Td = ad::Tensor<double>;

Td random_tensor(ad::Shape s, Rng& rng) {
  Td t(std::move(s));
  for (double& v : t.storage()) v = rng.normal();
  return t;
}

TEST(Layers, OrthogonalInitHasOrthonormalColumns) {
  Rng rng(1);
  const Td w = orthogonal_init<double>(7, 3, 2.0, rng);
  for (std::size_t a = 0; a < 3; ++a)
    for (std::size_t b = 0; b < 3; ++b) {
      double dot = 0;
      for (std::size_t i = 0; i < 7; ++i) dot += w.at(i, a) * w.at(i, b);
      EXPECT_NEAR(dot, a == b ? 4.0 : 0.0, 1e-10);
    }
}

TEST(Atlas, ShapesAndSingleHead) {
  Rng rng(2);
  for (std::size_t heads : {1u, 3u}) {
    ad::ParameterStore<double> store;
    AtlasConfig c;
    c.n_heads = heads;
    c.units_per_head = 5;
    c.hidden_units = 6;
    c.membership_enabled = true;
    Atlas<double> atlas(c, 4, store, rng);
    ad::Tape<double> tape;
    AtlasOutput<double> out = atlas.forward(tape.constant(random_tensor({3, 4}, rng)), true);
    EXPECT_EQ(out.charts.shape(), (ad::Shape{3, heads, 5}));
    ASSERT_TRUE(out.membership.has_value());
    EXPECT_EQ(out.membership->shape(), (ad::Shape{3, heads}));
    for (std::size_t b = 0; b < 3; ++b) {
      double s = 0;
      for (std::size_t n = 0; n < heads; ++n) s += out.membership->value().at(b, n);
      EXPECT_NEAR(s, 1.0, 1e-12);
    }
    if (heads == 1) {
      for (double q : out.membership->value().storage()) EXPECT_EQ(q, 1.0);
    }
  }
}

TEST(Atlas, ZeroInitOutputGivesZeroCharts) {
  Rng rng(3);
  for (HeadKind kind : {HeadKind::kMlp, HeadKind::kLinear}) {
    ad::ParameterStore<double> store;
    AtlasConfig c;
    c.n_heads = 2;
    c.units_per_head = 3;
    c.hidden_units = 4;
    c.head_kind = kind;
    c.zero_init_output = true;
    Atlas<double> atlas(c, 5, store, rng);
    ad::Tape<double> tape;
    const Td charts =
        atlas.forward(tape.constant(random_tensor({4, 5}, rng)), true).charts.value();
    for (double v : charts.storage()) EXPECT_EQ(v, 0.0);
  }
}

TEST(Atlas, ZeroInitMembershipIsUniform) {
  Rng rng(4);
  ad::ParameterStore<double> store;
  AtlasConfig c;
  c.n_heads = 4;
  c.units_per_head = 2;
  c.hidden_units = 3;
  c.membership_enabled = true;
  c.zero_init_membership = true;
  Atlas<double> atlas(c, 6, store, rng);
  ad::Tape<double> tape;
  for (double q : atlas.membership(tape.constant(random_tensor({5, 6}, rng))).value().storage())
    EXPECT_NEAR(q, 0.25, 1e-15);
}

TEST(Atlas, MembershipRequiresEnabledAndValidConfig) {
  Rng rng(5);
  ad::ParameterStore<double> store;
  AtlasConfig c;
  c.n_heads = 2;
  c.units_per_head = 2;
  c.hidden_units = 2;
  Atlas<double> atlas(c, 3, store, rng);
  ad::Tape<double> tape;
  EXPECT_THROW(atlas.membership(tape.constant(Td({1, 3}))), std::logic_error);
  AtlasConfig bad = c;
  bad.n_heads = 0;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  bad = c;
  bad.membership_temperature = 0;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
}

TEST(Atlas, TemperatureSharpensMembership) {
  Rng rng(6);
  AtlasConfig c;
  c.n_heads = 3;
  c.units_per_head = 2;
  c.hidden_units = 2;
  c.membership_enabled = true;
  const Td latent = random_tensor({1, 4}, rng);
  auto top = [&](double tau) {
    Rng init(7);
    ad::ParameterStore<double> store;
    c.membership_temperature = tau;
    Atlas<double> atlas(c, 4, store, init);
    ad::Tape<double> tape;
    const Td q = atlas.membership(tape.constant(latent)).value();
    return std::max({q[0], q[1], q[2]});
  };
  EXPECT_GT(top(0.1), top(1.0));
}

TEST(SelectChart, ExamplesAndTies) {
  EXPECT_EQ(select_chart(std::vector<double>{0.1, 0.7, 0.2}), 1u);
  EXPECT_EQ(select_chart(std::vector<double>{0.4, 0.4, 0.2}), 0u);
  EXPECT_EQ(select_chart(std::vector<double>{0.25, 0.25, 0.25, 0.25}), 0u);
  EXPECT_EQ(select_chart(std::vector<double>{1.0}), 0u);
  EXPECT_THROW(select_chart(std::vector<double>{}), std::invalid_argument);
}

TEST(SelectChart, InvariantUnderMonotoneTransform) {
  Rng rng(8);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> q(5), e(5);
    for (std::size_t i = 0; i < 5; ++i) {
      q[i] = rng.uniform();
      e[i] = std::exp(3.0 * q[i]) + 1.0;
    }
    EXPECT_EQ(select_chart(q), select_chart(e));
  }
}

TEST(InferenceFeatures, BackboneAndArgmax) {
  const Td latent({2, 3}, {1, 2, 3, 4, 5, 6});
  const Td charts({2, 2, 2}, {10, 11, 20, 21, 30, 31, 40, 41});
  const Td membership({2, 2}, {0.2, 0.8, 0.9, 0.1});
  const Td backbone = inference_features(latent, charts, &membership, FeatureRule::kBackboneOnly);
  EXPECT_EQ(backbone.shape(), latent.shape());
  EXPECT_EQ(backbone.storage(), latent.storage());
  const Td picked = inference_features(latent, charts, &membership, FeatureRule::kArgmaxHead);
  EXPECT_EQ(picked.shape(), (ad::Shape{2, 2}));
  EXPECT_EQ(picked.storage(), (std::vector<double>{20, 21, 30, 31}));
}

TEST(Encoder, PaperShapes) {
  const EncoderConfig c = EncoderConfig::paper();
  const auto shapes = c.layer_shapes();
  ASSERT_EQ(shapes.size(), 4u);
  // Valid convolution: floor((n - k) / s) + 1 per layer.
  std::size_t h = 160, w = 210;
  const std::size_t k[] = {8, 4, 4, 3}, s[] = {4, 2, 2, 1}, ch[] = {32, 64, 128, 64};
  for (int i = 0; i < 4; ++i) {
    h = (h - k[i]) / s[i] + 1;
    w = (w - k[i]) / s[i] + 1;
    EXPECT_EQ(shapes[i].height, h);
    EXPECT_EQ(shapes[i].width, w);
    EXPECT_EQ(shapes[i].channels, ch[i]);
  }
  EXPECT_EQ(c.local_shape().height, 8u);
  EXPECT_EQ(c.local_shape().width, 11u);
  EXPECT_EQ(shapes[3].height, 6u);
  EXPECT_EQ(shapes[3].width, 9u);
  EXPECT_EQ(c.latent_dim(), 3456u);
  EXPECT_EQ(c.parameter_count(),
            8u * 8 * 1 * 32 + 32 + 4u * 4 * 32 * 64 + 64 + 4u * 4 * 64 * 128 + 128 +
                3u * 3 * 128 * 64 + 64);
}

TEST(Encoder, ParameterCountMatchesStore) {
  Rng rng(9);
  ad::ParameterStore<double> store;
  const EncoderConfig c = EncoderConfig::desk();
  Encoder<double> enc(c, store, rng);
  EXPECT_EQ(store.scalar_count(), c.parameter_count());
}

TEST(Encoder, RejectsEmptyLayersAndBadTap) {
  EncoderConfig c = EncoderConfig::desk();
  c.input_height = 10;
  EXPECT_THROW(c.validate(), ad::ShapeError);
  c = EncoderConfig::desk();
  c.local_tap_index = 4;
  EXPECT_THROW(c.validate(), ad::ShapeError);
  c.convs.clear();
  EXPECT_THROW(c.validate(), ad::ShapeError);
}

TEST(Encoder, ForwardShapesZeroInputAndWrongFrames) {
  Rng rng(10);
  ad::ParameterStore<double> store;
  EncoderConfig c;
  c.input_height = 16;
  c.input_width = 12;
  c.convs = {{4, 2, 3}, {3, 1, 4}};
  c.local_tap_index = 0;
  Encoder<double> enc(c, store, rng);
  ad::Tape<double> tape;
  EncoderOutput<double> out = enc.forward(tape.constant(Td({2, 1, 16, 12})));
  EXPECT_EQ(out.latent.shape(), (ad::Shape{2, c.latent_dim()}));
  EXPECT_EQ(out.local.shape(), (ad::Shape{2, 7, 5, 3}));
  for (double v : out.latent.value().storage()) EXPECT_EQ(v, 0.0);
  for (double v : out.local.value().storage()) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(enc.forward(tape.constant(Td({2, 1, 12, 16}))), ad::ShapeError);
  // Non-negative after ReLU on random input.
  out = enc.forward(tape.constant(random_tensor({2, 1, 16, 12}, rng)));
  for (double v : out.latent.value().storage()) EXPECT_GE(v, 0.0);
}

TEST(ScorePairs, Examples) {
  ad::Tape<double> tape;
  const Td q({2, 2}, {1, 0, 0, 1});
  const Td k({3, 2}, {1, 2, 3, 4, 5, 6});
  const Td s = score_pairs(tape.constant(q), tape.constant(k)).value();
  EXPECT_EQ(s.shape(), (ad::Shape{2, 3}));
  EXPECT_EQ(s.storage(), (std::vector<double>{1, 3, 5, 2, 4, 6}));
  EXPECT_THROW(score_pairs(tape.constant(q), tape.constant(Td({3, 3}))), ad::ShapeError);
}

TEST(Critic, ProjectionMatchesManualProduct) {
  Rng rng(11);
  ad::ParameterStore<double> store;
  Critic<double> critic(store, "critic", 3, 2, rng);
  const Td x = random_tensor({4, 3}, rng);
  const Td& w = *store.get("critic.weight");
  ad::Tape<double> tape;
  const Td y = critic(tape.constant(x)).value();
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 2; ++j) {
      double e = 0;
      for (std::size_t k = 0; k < 3; ++k) e += x.at(i, k) * w.at(k, j);
      EXPECT_NEAR(y.at(i, j), e, 1e-12);
    }
}

}  // namespace
}  // namespace capreg
