#pragma once

#include <string>

#include "mpresnet/blocks.hpp"
#include "mpresnet/config.hpp"

namespace mpresnet::graph {

// Tap names recorded by the network descriptions.
inline constexpr const char* kTapStem = "stem";
inline constexpr const char* kTapShared = "encoder.shared";
inline constexpr const char* kTapEncoder = "encoder";
inline constexpr const char* kTapDecoder = "decoder";
inline constexpr const char* kTapLogits = "logits";
inline std::string branch_tap(int i) { return "branch" + std::to_string(i); }

// stem + stage 1 (1/4) + stage 2 (stride 2, 1/8).
template <class Ctx>
Value<Ctx> shared_trunk(Ctx& ctx, const ModelConfig& cfg, const Value<Ctx>& x) {
  auto h = stem(ctx, "stem", x, cfg.num_input_channels, cfg.stem_width);
  ctx.tap(kTapStem, h);
  h = res_stage(ctx, "layer1", h, cfg.stem_width, cfg.stage_width(1), cfg.stage_blocks[0], 1);
  h = res_stage(ctx, "layer2", h, cfg.stage_width(1), cfg.stage_width(2), cfg.stage_blocks[1], 2);
  ctx.tap(kTapShared, h);
  return h;
}

// Segmentation head on a 1/8 feature of width `in_channels`, producing
// logits at out_h x out_w.
template <class Ctx>
Value<Ctx> head(Ctx& ctx, const ModelConfig& cfg, const Value<Ctx>& x, int64_t in_channels, int64_t out_h,
                int64_t out_w, bool refine) {
  Value<Ctx> h = x;
  int64_t width = in_channels;
  if (refine || cfg.head == HeadKind::kProgressive) {
    width = cfg.decoder_width;
    h = ctx.conv("head.conv", h, conv_spec(in_channels, width, 3));
    h = ctx.batch_norm("head.bn", h, width);
    h = ctx.relu("head.relu", h);
  }
  if (cfg.head == HeadKind::kProgressive) {
    const int64_t d = cfg.decoder_width;
    h = deconv_block(ctx, "head.up3", h, d, d / 2);
    h = deconv_block(ctx, "head.up2", h, d / 2, d / 4);
    h = deconv_block(ctx, "head.up1", h, d / 4, d / 4);
    width = d / 4;
  }
  ConvSpec cls = conv_spec(width, cfg.num_classes, 1);
  cls.has_bias = true;
  h = ctx.conv("head.classifier", h, cls);
  if (cfg.head == HeadKind::kBilinear8x) h = ctx.upsample("head.upsample", h, out_h, out_w);
  ctx.tap(kTapLogits, h);
  return h;
}

// Shared trunk, three parallel branches at 1/8, 1/16 and 1/32 with the same
// block count, coarse-to-fine additive fusion through deconvolution blocks.
template <class Ctx>
Value<Ctx> mp_resnet(Ctx& ctx, const ModelConfig& cfg, const Value<Ctx>& x, int64_t height, int64_t width) {
  const auto trunk = shared_trunk(ctx, cfg, x);
  const int64_t w2 = cfg.stage_width(2), w3 = cfg.stage_width(3);
  std::array<Value<Ctx>, 3> branches;
  for (int i = 0; i < 3; ++i) {
    const std::string p = "branch" + std::to_string(i);
    const int steps = cfg.branch_downsamples(i);
    auto h = res_stage(ctx, p + ".layer3", trunk, w2, w3, cfg.stage_blocks[2], steps >= 1 ? 2 : 1);
    h = res_stage(ctx, p + ".layer4", h, w3, cfg.branch_width(i), cfg.stage_blocks[3], steps >= 2 ? 2 : 1);
    ctx.tap(branch_tap(i), h);
    branches[static_cast<size_t>(i)] = h;
  }
  const int64_t d = cfg.decoder_width;
  auto fused = branches[2];
  int64_t fused_width = cfg.branch_width(2);
  for (int i = 1; i >= 0; --i) {
    const std::string s = std::to_string(i);
    const auto up = deconv_block(ctx, "decoder.up" + std::to_string(i + 1), fused, fused_width, d);
    auto skip = branches[static_cast<size_t>(i)];
    if (cfg.branch_width(i) != d) skip = projection(ctx, "decoder.proj" + s, skip, cfg.branch_width(i), d);
    fused = ctx.add("decoder.fuse" + s, skip, up);
    fused_width = d;
  }
  ctx.tap(kTapDecoder, fused);
  return head(ctx, cfg, fused, d, height, width, true);
}

// ResNet-34 with stages 3 and 4 dilated (2, 4) to hold output stride 8.
template <class Ctx>
Value<Ctx> fcn_baseline(Ctx& ctx, const ModelConfig& cfg, const Value<Ctx>& x, int64_t height, int64_t width) {
  auto h = shared_trunk(ctx, cfg, x);
  h = res_stage(ctx, "layer3", h, cfg.stage_width(2), cfg.stage_width(3), cfg.stage_blocks[2], 1, 2);
  h = res_stage(ctx, "layer4", h, cfg.stage_width(3), cfg.stage_width(4), cfg.stage_blocks[3], 1, 4);
  ctx.tap(kTapEncoder, h);
  return head(ctx, cfg, h, cfg.stage_width(4), height, width, false);
}

template <class Ctx>
Value<Ctx> network(Ctx& ctx, const ModelConfig& cfg, const Value<Ctx>& x, int64_t height, int64_t width) {
  return cfg.variant == Variant::kMpResnet ? mp_resnet(ctx, cfg, x, height, width)
                                           : fcn_baseline(ctx, cfg, x, height, width);
}

}  // namespace mpresnet::graph
