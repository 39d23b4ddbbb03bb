// Copyright 2026 The rrmoe Authors
// SPDX-License-Identifier: Apache-2.0

#include "rrmoe/config.hpp"

#include <gtest/gtest.h>

#include "rrmoe/errors.hpp"

namespace rrmoe {
namespace {

TEST(Config, ParsesKeyValueLinesAndComments) {
  const ConfigTree t = ConfigTree::parse(
      "# header\n"
      "model.experts = 4   # trailing\n"
      "\n"
      "  train.lr=0.001\n"
      "model.use_moe = false\n"
      "profile = desk\n");
  EXPECT_EQ(t.get_int("model.experts", 0), 4);
  EXPECT_DOUBLE_EQ(t.get_double("train.lr", 0), 0.001);
  EXPECT_FALSE(t.get_bool("model.use_moe", true));
  EXPECT_EQ(t.get_string("profile", ""), "desk");
  EXPECT_EQ(t.get_int("missing", 17), 17);
}

TEST(Config, CanonicalFormIsOrderIndependent) {
  const ConfigTree a = ConfigTree::parse("b = 2\na = 1\n");
  const ConfigTree b = ConfigTree::parse("a=1\n\n  b   =   2 # x\n");
  EXPECT_EQ(a.canonical(), "a = 1\nb = 2\n");
  EXPECT_EQ(a.canonical(), b.canonical());
  EXPECT_EQ(a.hash(), b.hash());
  EXPECT_NE(a.hash(), ConfigTree::parse("a = 1\nb = 3\n").hash());
}

TEST(Config, CanonicalTextRoundTrips) {
  const ConfigTree a = ConfigTree::parse("seed = 9\nmodel.dim = 32\n");
  EXPECT_EQ(ConfigTree::parse(a.canonical()).canonical(), a.canonical());
}

TEST(Config, TypedGettersRejectMalformedValues) {
  const ConfigTree t = ConfigTree::parse("i = 4x\nd = nope\nb = maybe\n");
  try {
    t.get_int("i", 0);
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field(), "i");
  }
  EXPECT_THROW(t.get_double("d", 0), ConfigError);
  EXPECT_THROW(t.get_bool("b", false), ConfigError);
}

TEST(Config, MalformedLinesAreRejected) {
  EXPECT_THROW(ConfigTree::parse("just a line\n"), ConfigError);
  EXPECT_THROW(ConfigTree::parse(" = 3\n"), ConfigError);
}

TEST(Config, UnknownKeysAreNamed) {
  const ConfigTree t = ConfigTree::parse("model.experts = 2\nmodel.expertz = 3\n");
  try {
    t.require_known({"model.experts"});
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field(), "model.expertz");
  }
}

}  // namespace
}  // namespace rrmoe
