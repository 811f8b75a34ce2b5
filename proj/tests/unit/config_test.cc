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

#include <string>

#include "capreg/config.h"

namespace capreg {
namespace {

int error_line(std::string_view text) {
  try {
    parse_run_config(text);
  } catch (const ConfigError& e) {
    return e.line();
  }
  return -1;
}

std::string error_field(std::string_view text) {
  try {
    parse_run_config(text);
  } catch (const ConfigError& e) {
    return e.field();
  }
  return "<none>";
}

TEST(Ini, SectionsCommentsAndLines) {
  const IniDocument doc = parse_ini(
      "# leading comment\n"
      "[train]\n"
      "mode = dim-c   ; trailing\n"
      "\n"
      "  steps=10\n"
      "[probe]\n"
      "lr = 0.5\n");
  EXPECT_EQ(doc.at("train").at("mode").text, "dim-c");
  EXPECT_EQ(doc.at("train").at("mode").line, 3);
  EXPECT_EQ(doc.at("train").at("steps").text, "10");
  EXPECT_EQ(doc.at("train").at("steps").line, 5);
  EXPECT_EQ(doc.at("probe").at("lr").text, "0.5");
}

TEST(Ini, MalformedInput) {
  EXPECT_THROW(parse_ini("[train\nmode = dim\n"), ConfigError);
  EXPECT_THROW(parse_ini("mode = dim\n"), ConfigError);
  EXPECT_THROW(parse_ini("[train]\njust words\n"), ConfigError);
  EXPECT_THROW(parse_ini("[train]\nmode = a\nmode = b\n"), ConfigError);
}

TEST(RunConfig, MinimalUsesDefaults) {
  const RunConfig c = parse_run_config("[train]\nmode = dim-c\n");
  EXPECT_EQ(c.mode, Mode::kDimC);
  EXPECT_EQ(c.batch_size, 32u);
  EXPECT_EQ(c.steps, 2000);
  EXPECT_DOUBLE_EQ(c.weights.epsilon, 0.0005);
  EXPECT_DOUBLE_EQ(c.weights.ua_coefficient, -0.05);
  EXPECT_EQ(c.atlas.n_heads, 4u);
  EXPECT_EQ(c.atlas.units_per_head, 64u);
  EXPECT_FALSE(c.atlas.membership_enabled);
  EXPECT_EQ(c.pooling(), GlobalPooling::kPerHead);
  EXPECT_EQ(c.feature_rule(), FeatureRule::kBackboneOnly);
  EXPECT_DOUBLE_EQ(c.pixel_factor(), 1.0 / 255.0);
}

TEST(RunConfig, MembershipModeDefaults) {
  const RunConfig c = parse_run_config("[train]\nmode = dim-uac\n");
  EXPECT_TRUE(c.atlas.membership_enabled);
  EXPECT_EQ(c.pooling(), GlobalPooling::kHeadMean);
  EXPECT_EQ(c.feature_rule(), FeatureRule::kArgmaxHead);
}

TEST(RunConfig, FullDocumentParses) {
  const RunConfig c = parse_run_config(
      "[train]\nmode = simclr-c\nbatch_size = 16\nsteps = 5\nlr = 1e-3\nepsilon = 0.1\n"
      "tau = 0.2\nseed = 9\nprecision = f64\n"
      "[encoder]\nprofile = desk\nlocal_tap_index = 1\npixel_scale = raw\n"
      "[atlas]\nn_heads = 2\nunits_per_head = 8\nhead_kind = linear\n"
      "[data]\nepisodes = 10\nepisode_length = 20\nseed = 4\nnoise_amplitude = 0\n"
      "[probe]\nsteps = 50\npatience = 2\nshuffle_labels = yes\n");
  EXPECT_EQ(c.mode, Mode::kSimclrC);
  EXPECT_EQ(c.batch_size, 16u);
  EXPECT_DOUBLE_EQ(c.weights.tau, 0.2);
  EXPECT_EQ(c.precision, ad::Precision::kFloat64);
  EXPECT_EQ(c.encoder.local_tap_index, 1u);
  EXPECT_EQ(c.pixel_factor(), 1.0);
  EXPECT_EQ(c.atlas.head_kind, HeadKind::kLinear);
  EXPECT_EQ(c.data.episodes, 10);
  EXPECT_EQ(c.data_seed, 4u);
  EXPECT_TRUE(c.probe.shuffle_labels);
  EXPECT_EQ(c.probe.steps, 50);
}

TEST(RunConfig, ErrorsCarryLineAndField) {
  EXPECT_EQ(error_field("[train]\nsteps = 3\n"), "train.mode");
  EXPECT_EQ(error_line("[train]\nmode = dim-c\nsteps = many\n"), 3);
  EXPECT_EQ(error_field("[train]\nmode = dim-c\nsteps = many\n"), "train.steps");
  EXPECT_EQ(error_line("[train]\nmode = nonsense\n"), 2);
  EXPECT_EQ(error_field("[train]\nmode = dim-c\n[atlas]\ncolour = red\n"), "atlas.colour");
  EXPECT_EQ(error_line("[train]\nmode = dim-c\n[atlas]\ncolour = red\n"), 4);
  EXPECT_EQ(error_field("[train]\nmode = dim-c\n[extras]\nx = 1\n"), "extras");
  EXPECT_EQ(error_field("[train]\nmode = dim-c\n[atlas]\nn_heads = 0\n"), "atlas.n_heads");
  EXPECT_EQ(error_field("[train]\nmode = dim-c\nepsilon = -1\n"), "train.epsilon");
  EXPECT_THROW(parse_run_config("[train]\nmode = dim-c\nlr = -0.1\n"), ConfigError);
  EXPECT_EQ(error_field("[train]\nmode = dim-c\n[encoder]\nconvs = 8/4/16, 4/2/32\nlocal_tap_index = 5\n"),
            "encoder.convs");
  EXPECT_EQ(error_field("[train]\nmode = dim-c\n[probe]\nfeature_rule = argmax_head\n"),
            "probe.feature_rule");
  EXPECT_EQ(error_field("[train]\nmode = dim-c\nglobal_pooling = membership\n"),
            "train.global_pooling");
  EXPECT_EQ(error_field("[train]\nmode = bt-c\nbatch_size = 1\n"), "train.batch_size");
  // Five episodes leave the test split empty.
  EXPECT_THROW(parse_run_config("[train]\nmode = dim-c\n[data]\nepisodes = 5\n"), ConfigError);
  EXPECT_NO_THROW(parse_run_config("[train]\nmode = dim-c\n[data]\nepisodes = 6\n"));
}

TEST(RunConfig, ParseErrorMessageNamesTheLine) {
  try {
    parse_run_config("[train]\nmode = dim-c\nbatch_size = -4\n");
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("line 3"), std::string::npos) << e.what();
    EXPECT_NE(std::string(e.what()).find("train.batch_size"), std::string::npos) << e.what();
  }
}

TEST(RunConfig, CanonicalRoundTripAndHash) {
  const RunConfig a = parse_run_config(
      "[train]\nmode = dim-uac\nepsilon = 0.1\nlr = 0.0003\nseed = 12\n"
      "[atlas]\nn_heads = 8\nunits_per_head = 32\nmembership_temperature = 0.5\n"
      "[probe]\nsteps = 20\n");
  const std::string text = a.canonical();
  const RunConfig b = parse_run_config(text);
  EXPECT_EQ(b.canonical(), text);
  EXPECT_EQ(b.hash(), a.hash());
  EXPECT_EQ(b.atlas.n_heads, 8u);
  EXPECT_DOUBLE_EQ(b.weights.epsilon, 0.1);
  EXPECT_EQ(b.hash().size(), 64u);

  RunConfig c = a;
  c.seed = 13;
  EXPECT_NE(c.hash(), a.hash());
}

TEST(RunConfig, CanonicalPreservesAwkwardDoubles) {
  RunConfig c = parse_run_config("[train]\nmode = dim-c\n");
  c.lr = 0.1 + 0.2;
  c.weights.epsilon = 1.0 / 3.0;
  const RunConfig back = parse_run_config(c.canonical());
  EXPECT_EQ(back.lr, c.lr);
  EXPECT_EQ(back.weights.epsilon, c.weights.epsilon);
}

TEST(RunConfig, PaperProfileNeedsPaperWorld) {
  EXPECT_THROW(parse_run_config("[train]\nmode = dim-c\n[encoder]\nprofile = paper\n"),
               ConfigError);
  const RunConfig c = parse_run_config(
      "[train]\nmode = dim-c\n[encoder]\nprofile = paper\n[world]\npreset = paper\n");
  EXPECT_EQ(c.encoder.latent_dim(), 3456u);
}

}  // namespace
}  // namespace capreg
