// SPDX-License-Identifier: Apache-2.0
#include <gtest/gtest.h>

#include "siaf/config_io.hpp"
#include "siaf/generate.hpp"
#include "siaf/reference.hpp"

namespace siaf {
namespace {

ParseError parse_failure(const std::string& text) {
  try {
    parse_config(text, "c.cfg");
  } catch (const ParseError& e) {
    return e;
  }
  ADD_FAILURE() << "no ParseError for:\n" << text;
  return ParseError("", 0, "");
}

TEST(ConfigText, RoundTripsEverySizeClass) {
  for (SizeClass s : {SizeClass::kTiny, SizeClass::kSmall, SizeClass::kPaper384}) {
    const ModelConfig cfg = generate_model(s, 5, 2);
    const std::string text = write_config(cfg);
    LoadedConfig back = parse_config(text);
    EXPECT_EQ(write_config(back.model), text);
    EXPECT_FALSE(back.energy);
  }
}

TEST(ConfigText, BoundWeightsReproduceLogits) {
  const ModelConfig cfg = generate_model(SizeClass::kTiny, 8, 4);
  LoadedConfig back = parse_config(write_config(cfg));
  bind_weights(back.model, TensorFile::parse(weights_file(cfg).serialize()));
  const ByteImage img = generate_image(cfg, 8);
  EXPECT_EQ(model_forward(img, back.model).logits, model_forward(img, cfg).logits);
}

TEST(ConfigText, CommentsAndBlankLines) {
  const ModelConfig cfg = generate_model(SizeClass::kTiny, 8, 4);
  std::string text = write_config(cfg);
  text.insert(text.find('\n') + 1, "\n# a comment\n   \n");
  EXPECT_EQ(write_config(parse_config(text).model), write_config(cfg));
}

TEST(ConfigText, ErrorsCarryLineNumbers) {
  const std::string good = write_config(generate_model(SizeClass::kTiny, 1, 4));
  EXPECT_EQ(parse_failure("nonsense\n").offset(), 1u);
  std::string bad = good;
  bad.replace(bad.find("stride=1"), 8, "stride=x");
  EXPECT_EQ(parse_failure(bad).offset(), 3u);
  bad = good;
  bad.replace(bad.find("maxpool"), 7, "avgpool");
  EXPECT_EQ(parse_failure(bad).offset(), 7u);
  bad = good;
  bad.replace(bad.find("lif_q=32:2"), 10, "lif_q=32");
  EXPECT_EQ(parse_failure(bad).offset(), 15u);
  bad = good.substr(0, good.find("\nhead ") + 1);
  EXPECT_NE(std::string(parse_failure(bad).what()).find("missing 'head'"), std::string::npos);
  EXPECT_NE(std::string(parse_failure("siaf-model 2\n").what()).find("c.cfg:1:"), std::string::npos);
  EXPECT_EQ(parse_failure("siaf-model 1\nmodel time_steps=4 in_channels=3 height=8 width=8 colour=red\n").offset(), 2u);
}

TEST(ConfigText, EnergyLineOverridesDefaults) {
  std::string text = write_config(generate_model(SizeClass::kTiny, 1, 4));
  text += "energy spike_op=0.5 temp.read=2 offchip_word=7\n";
  const LoadedConfig c = parse_config(text);
  ASSERT_TRUE(c.energy);
  EXPECT_DOUBLE_EQ(c.energy->spike_op_pj, 0.5);
  EXPECT_DOUBLE_EQ(c.energy->banks.at("temp").read_pj, 2.0);
  EXPECT_DOUBLE_EQ(c.energy->banks.at("temp").write_pj, 0.6);
  EXPECT_DOUBLE_EQ(c.energy->offchip_word_pj, 7.0);
  EXPECT_THROW(parse_config(text + "energy flux.read=1\n"), ParseError);
  EXPECT_THROW(parse_config(text + "energy spike_op=-1\n"), ParseError);
}

TEST(Weights, MissingAndExtraTensorsAreErrors) {
  const ModelConfig cfg = generate_model(SizeClass::kTiny, 2, 4);
  TensorFile f = weights_file(cfg);
  TensorFile extra = f;
  extra.put("stray", AccTensor(Shape{1}, 0));
  LoadedConfig c = parse_config(write_config(cfg));
  EXPECT_THROW(bind_weights(c.model, extra), ConfigError);

  TensorFile missing;
  for (const auto& [name, t] : f.tensors()) {
    if (name != "head.bias") missing.put(name, t);
  }
  c = parse_config(write_config(cfg));
  try {
    bind_weights(c.model, missing);
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("head.bias"), std::string::npos);
  }
}

TEST(Weights, WrongShapeIsRejected) {
  const ModelConfig cfg = generate_model(SizeClass::kTiny, 2, 4);
  TensorFile f = weights_file(cfg);
  f.put("head.weight", QTensor({10, 15}, -6));
  LoadedConfig c = parse_config(write_config(cfg));
  EXPECT_THROW(bind_weights(c.model, f), ConfigError);
}

TEST(RawImage, RoundTripAndHeaderOrder) {
  const ByteImage img = generate_image(3, 4, 5, 1);
  const auto bytes = serialize_image(img);
  ASSERT_EQ(bytes.size(), 12u + 60u);
  EXPECT_EQ(bytes[0], 5);  // width first
  EXPECT_EQ(bytes[4], 4);
  EXPECT_EQ(bytes[8], 3);
  EXPECT_EQ(bytes[12], img.at(0, 0, 0));
  EXPECT_EQ(bytes[13], img.at(0, 0, 1));
  EXPECT_EQ(parse_image(bytes), img);
}

TEST(RawImage, MalformedFilesReportOffsets) {
  auto bytes = serialize_image(generate_image(3, 4, 5, 1));
  auto offset_of = [](const std::vector<std::uint8_t>& b) -> std::uint64_t {
    try {
      parse_image(b, "i.raw");
    } catch (const ParseError& e) {
      return e.offset();
    }
    return ~0ull;
  };
  EXPECT_EQ(offset_of({1, 0, 0, 0, 1, 0}), 4u);
  auto truncated = bytes;
  truncated.pop_back();
  EXPECT_EQ(offset_of(truncated), 12u);
  auto trailing = bytes;
  trailing.push_back(0);
  EXPECT_EQ(offset_of(trailing), 72u);
  auto zero = bytes;
  zero[0] = 0;
  EXPECT_EQ(offset_of(zero), 0u);
}

TEST(Generate, SeedsChangeWeightsNotShapes) {
  const ModelConfig a = generate_model(SizeClass::kSmall, 1, 4);
  const ModelConfig b = generate_model(SizeClass::kSmall, 2, 4);
  EXPECT_EQ(write_config(a), write_config(b));
  EXPECT_NE(weights_file(a).serialize(), weights_file(b).serialize());
  EXPECT_EQ(weights_file(a).serialize(), weights_file(generate_model(SizeClass::kSmall, 1, 4)).serialize());
}

TEST(Generate, SizeClassShapes) {
  const ModelConfig t = generate_model(SizeClass::kTiny, 1, 4);
  EXPECT_EQ(t.blocks.size(), 1u);
  EXPECT_EQ(t.head.dim, 16u);
  EXPECT_EQ(t.in_height, 8u);
  const ModelConfig p = generate_model(SizeClass::kPaper384, 1, 4);
  EXPECT_EQ(p.blocks.size(), 8u);
  EXPECT_EQ(p.head.dim, 384u);
  EXPECT_THROW(parse_size_class("huge"), ConfigError);
  EXPECT_THROW(generate_model(SizeClass::kTiny, 1, 3), ConfigError);
}

}  // namespace
}  // namespace siaf
