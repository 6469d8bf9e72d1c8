#include "dadet/detector.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dadet {

// ---- geometry ----

BoxF anchor_to_box(const Anchor& a) {
  return {a.cx - 0.5f * a.w, a.cy - 0.5f * a.h, a.cx + 0.5f * a.w,
          a.cy + 0.5f * a.h};
}

float iou_boxf(const BoxF& a, const BoxF& b) {
  const float ix1 = std::max(a.x1, b.x1);
  const float iy1 = std::max(a.y1, b.y1);
  const float ix2 = std::min(a.x2, b.x2);
  const float iy2 = std::min(a.y2, b.y2);
  const float iw = std::max(0.0f, ix2 - ix1);
  const float ih = std::max(0.0f, iy2 - iy1);
  const float inter = iw * ih;
  const float area_a = std::max(0.0f, a.x2 - a.x1) * std::max(0.0f, a.y2 - a.y1);
  const float area_b = std::max(0.0f, b.x2 - b.x1) * std::max(0.0f, b.y2 - b.y1);
  const float uni = area_a + area_b - inter;
  return uni > 0.0f ? inter / uni : 0.0f;
}

std::array<float, 4> encode_box(const Anchor& a, const BoxF& gt) {
  const float gw = gt.x2 - gt.x1;
  const float gh = gt.y2 - gt.y1;
  const float gcx = gt.x1 + 0.5f * gw;
  const float gcy = gt.y1 + 0.5f * gh;
  return {(gcx - a.cx) / a.w, (gcy - a.cy) / a.h, std::log(gw / a.w),
          std::log(gh / a.h)};
}

BoxF decode_box(const Anchor& a, const std::array<float, 4>& d) {
  const float cx = a.cx + d[0] * a.w;
  const float cy = a.cy + d[1] * a.h;
  // exp clamp keeps wildly wrong regressions finite
  const float w = a.w * std::exp(std::min(d[2], 4.0f));
  const float h = a.h * std::exp(std::min(d[3], 4.0f));
  return {cx - 0.5f * w, cy - 0.5f * h, cx + 0.5f * w, cy + 0.5f * h};
}

// ---- anchors ----

std::vector<Anchor> build_anchors(int image_size, const ModelConfig& cfg) {
  std::vector<Anchor> anchors;
  const int strides[3] = {4, 8, 16};
  for (int li = 0; li < 3; ++li) {
    const int stride = strides[li];
    const int grid = image_size / stride;
    for (int y = 0; y < grid; ++y)
      for (int x = 0; x < grid; ++x)
        for (int a = 0; a < cfg.anchors_per_cell; ++a) {
          const float size =
              cfg.anchor_base_sizes[li] *
              cfg.anchor_scales[a % cfg.anchor_scales.size()];
          anchors.push_back({li + 3, (x + 0.5f) * stride, (y + 0.5f) * stride,
                             size, size});
        }
  }
  return anchors;
}

// ---- matching ----

AnchorMatch match_anchors(const std::vector<Anchor>& anchors,
                          const std::vector<GtBox>& gts, float pos_thresh,
                          float neg_thresh) {
  if (anchors.empty())
    throw std::invalid_argument("match_anchors: empty anchor set");
  if (pos_thresh <= neg_thresh)
    throw std::invalid_argument("match_anchors: pos_thresh must exceed neg_thresh");

  AnchorMatch m;
  m.assignment.assign(anchors.size(), kAnchorBackground);
  if (gts.empty()) return m;

  const std::size_t n_gt = gts.size();
  std::vector<float> best_iou(anchors.size(), 0.0f);
  std::vector<int> best_gt(anchors.size(), -1);
  std::vector<float> gt_best_iou(n_gt, 0.0f);
  std::vector<int> gt_best_anchor(n_gt, -1);

  for (std::size_t ai = 0; ai < anchors.size(); ++ai) {
    const BoxF ab = anchor_to_box(anchors[ai]);
    for (std::size_t gi = 0; gi < n_gt; ++gi) {
      const float v = iou_boxf(ab, gts[gi].box);
      if (v > best_iou[ai]) {  // lowest GT index wins on ties
        best_iou[ai] = v;
        best_gt[ai] = static_cast<int>(gi);
      }
      if (v > gt_best_iou[gi]) {  // lowest anchor index wins on ties
        gt_best_iou[gi] = v;
        gt_best_anchor[gi] = static_cast<int>(ai);
      }
    }
  }

  for (std::size_t ai = 0; ai < anchors.size(); ++ai) {
    if (best_iou[ai] >= pos_thresh)
      m.assignment[ai] = best_gt[ai];
    else if (best_iou[ai] >= neg_thresh)
      m.assignment[ai] = kAnchorIgnore;
  }

  // Low-quality force matches: each GT claims its single best-IoU anchor,
  // applied only when that anchor is not already positive from thresholding.
  // When several GTs claim the same anchor the highest IoU wins; overwriting
  // only on strictly greater IoU makes the lowest GT index win ties.
  std::vector<float> claim_iou(anchors.size(), -1.0f);
  std::vector<int> claim_gt(anchors.size(), -1);
  for (std::size_t gi = 0; gi < n_gt; ++gi) {
    const int ai = gt_best_anchor[gi];
    if (ai < 0 || m.assignment[ai] >= 0) continue;
    if (gt_best_iou[gi] > claim_iou[ai]) {
      claim_iou[ai] = gt_best_iou[gi];
      claim_gt[ai] = static_cast<int>(gi);
    }
  }
  for (std::size_t ai = 0; ai < anchors.size(); ++ai)
    if (claim_gt[ai] >= 0) m.assignment[ai] = claim_gt[ai];

  for (int a : m.assignment)
    if (a >= 0) ++m.num_positive;
  return m;
}

// ---- model ----

namespace {

Tensor conv_bn_relu(Conv2d& conv, BatchNorm2d& bn, const Tensor& x,
                    bool training) {
  return relu(bn.forward(conv.forward(x), training));
}

}  // namespace

Detector::Detector(const ModelConfig& cfg, Rng& rng) : cfg_(cfg) {
  if (cfg.image_size % 16 != 0)
    throw std::invalid_argument("detector: image size must be divisible by 16");
  const auto& ch = cfg.stage_channels;
  auto block = [&rng](int in, int out, int stride) {
    return ConvBn{Conv2d(in, out, 3, stride, 1, rng), BatchNorm2d(out)};
  };
  stem1_ = block(3, ch[0], 2);
  stem2_ = block(ch[0], ch[0], 1);
  s2a_ = block(ch[0], ch[1], 2);
  s2b_ = block(ch[1], ch[1], 1);
  s3a_ = block(ch[1], ch[2], 2);
  s3b_ = block(ch[2], ch[2], 1);
  s4a_ = block(ch[2], ch[3], 2);
  s4b_ = block(ch[3], ch[3], 1);
  lat3_ = Conv2d(ch[1], cfg.pyramid_channels, 1, 1, 0, rng);
  lat4_ = Conv2d(ch[2], cfg.pyramid_channels, 1, 1, 0, rng);
  lat5_ = Conv2d(ch[3], cfg.pyramid_channels, 1, 1, 0, rng);

  for (int i = 0; i < cfg.head_depth; ++i) {
    const int in = i == 0 ? cfg.pyramid_channels : cfg.head_channels;
    cls_tower_.emplace_back(in, cfg.head_channels, 3, 1, 1, rng);
    box_tower_.emplace_back(in, cfg.head_channels, 3, 1, 1, rng);
  }
  const int tower_out = cfg.head_depth > 0 ? cfg.head_channels : cfg.pyramid_channels;
  cls_out_ = Conv2d(tower_out, cfg.num_classes * cfg.anchors_per_cell, 3, 1, 1,
                    rng);
  box_out_ = Conv2d(tower_out, 4 * cfg.anchors_per_cell, 3, 1, 1, rng);
  // Rare-foreground prior keeps early focal loss from exploding.
  const float bias0 = -std::log((1.0f - cfg.cls_prior) / cfg.cls_prior);
  std::fill(cls_out_.bias.values().begin(), cls_out_.bias.values().end(), bias0);

  anchors_ = build_anchors(cfg.image_size, cfg);
}

Tensor Detector::stage_forward(ConvBn& a, ConvBn& b, const Tensor& x,
                               bool training) {
  return conv_bn_relu(b.conv, b.bn, conv_bn_relu(a.conv, a.bn, x, training),
                      training);
}

FeaturePyramid Detector::backbone_forward(const Tensor& images, bool training) {
  if (images.shape().size() != 4 || images.dim(1) != 3)
    throw std::invalid_argument("backbone: input must be [B,3,S,S]");
  if (images.dim(2) % 16 != 0 || images.dim(2) != images.dim(3))
    throw std::invalid_argument(
        "backbone: spatial size must be square and divisible by 16");
  FeaturePyramid f;
  const Tensor stem = stage_forward(stem1_, stem2_, images, training);
  f.c3 = stage_forward(s2a_, s2b_, stem, training);
  f.c4 = stage_forward(s3a_, s3b_, f.c3, training);
  f.c5 = stage_forward(s4a_, s4b_, f.c4, training);
  f.p5 = lat5_.forward(f.c5);
  f.p4 = add(lat4_.forward(f.c4), upsample_nearest_2x(f.p5));
  f.p3 = add(lat3_.forward(f.c3), upsample_nearest_2x(f.p4));
  return f;
}

HeadOutputs Detector::head_forward(const FeaturePyramid& pyr) {
  HeadOutputs out;
  const Tensor* levels[3] = {&pyr.p3, &pyr.p4, &pyr.p5};
  for (int li = 0; li < 3; ++li) {
    Tensor c = *levels[li];
    for (auto& conv : cls_tower_) c = relu(conv.forward(c));
    out.cls[li] = cls_out_.forward(c);
    Tensor b = *levels[li];
    for (auto& conv : box_tower_) b = relu(conv.forward(b));
    out.box[li] = box_out_.forward(b);
  }
  return out;
}

DetLoss Detector::loss(const HeadOutputs& out,
                       const std::vector<std::vector<GtBox>>& gts_per_image) {
  const int B = out.cls[0].dim(0);
  if (static_cast<int>(gts_per_image.size()) != B)
    throw std::invalid_argument("detector loss: batch size mismatch");
  const int K = cfg_.num_classes;
  const int A = cfg_.anchors_per_cell;

  // Level extents within the flat anchor list.
  std::array<int, 3> grid{}, level_off{};
  int off = 0;
  for (int li = 0; li < 3; ++li) {
    grid[li] = cfg_.image_size / (4 << li);
    level_off[li] = off;
    off += grid[li] * grid[li] * A;
  }

  std::array<Tensor, 3> cls_t, cls_m, box_t, box_m;
  for (int li = 0; li < 3; ++li) {
    const Shape cs = {B, K * A, grid[li], grid[li]};
    const Shape bs = {B, 4 * A, grid[li], grid[li]};
    cls_t[li] = Tensor::zeros(cs);
    cls_m[li] = Tensor::full(cs, 1.0f);
    box_t[li] = Tensor::zeros(bs);
    box_m[li] = Tensor::zeros(bs);
  }

  int num_pos = 0;
  for (int b = 0; b < B; ++b) {
    const AnchorMatch match = match_anchors(anchors_, gts_per_image[b],
                                            cfg_.pos_iou_threshold,
                                            cfg_.neg_iou_threshold);
    num_pos += match.num_positive;
    for (int li = 0; li < 3; ++li) {
      const int g = grid[li];
      const std::size_t plane = static_cast<std::size_t>(g) * g;
      auto& ct = cls_t[li].values();
      auto& cm = cls_m[li].values();
      auto& bt = box_t[li].values();
      auto& bm = box_m[li].values();
      for (int y = 0; y < g; ++y)
        for (int x = 0; x < g; ++x)
          for (int a = 0; a < A; ++a) {
            const int ai = level_off[li] + (y * g + x) * A + a;
            const int assign = match.assignment[ai];
            const std::size_t cell = static_cast<std::size_t>(y) * g + x;
            if (assign == kAnchorIgnore) {
              for (int k = 0; k < K; ++k)
                cm[(static_cast<std::size_t>(b) * K * A + a * K + k) * plane +
                   cell] = 0.0f;
            } else if (assign >= 0) {
              const GtBox& gt = gts_per_image[b][assign];
              ct[(static_cast<std::size_t>(b) * K * A + a * K + gt.class_id) *
                     plane +
                 cell] = 1.0f;
              const auto delta = encode_box(anchors_[ai], gt.box);
              for (int c = 0; c < 4; ++c) {
                const std::size_t idx =
                    (static_cast<std::size_t>(b) * 4 * A + a * 4 + c) * plane +
                    cell;
                bt[idx] = delta[c];
                bm[idx] = 1.0f;
              }
            }
          }
    }
  }

  const float norm = static_cast<float>(std::max(1, num_pos));
  Tensor cls_sum =
      focal_loss_sum(out.cls[0], cls_t[0], cls_m[0], cfg_.focal_alpha,
                     cfg_.focal_gamma);
  Tensor box_sum =
      smooth_l1_sum(out.box[0], box_t[0], box_m[0], cfg_.smooth_l1_beta);
  for (int li = 1; li < 3; ++li) {
    cls_sum = add(cls_sum, focal_loss_sum(out.cls[li], cls_t[li], cls_m[li],
                                          cfg_.focal_alpha, cfg_.focal_gamma));
    box_sum = add(box_sum, smooth_l1_sum(out.box[li], box_t[li], box_m[li],
                                         cfg_.smooth_l1_beta));
  }
  DetLoss dl;
  dl.l_class = scale(cls_sum, 1.0f / norm);
  dl.l_box = scale(box_sum, 1.0f / norm);
  dl.num_positive = num_pos;
  return dl;
}

Tensor box_loss(const Tensor& pred_deltas, const Tensor& target_deltas,
                const Tensor& positive_mask, float beta) {
  std::size_t flagged = 0;
  for (float v : positive_mask.values())
    if (v != 0.0f) ++flagged;
  const float num_pos = static_cast<float>(flagged) / 4.0f;
  Tensor total = smooth_l1_sum(pred_deltas, target_deltas, positive_mask, beta);
  return scale(total, num_pos > 0.0f ? 1.0f / num_pos : 0.0f);
}

std::vector<Detection> nms(std::vector<Detection> dets, float iou_thresh) {
  std::stable_sort(dets.begin(), dets.end(),
                   [](const Detection& a, const Detection& b) {
                     return a.score > b.score;
                   });
  std::vector<Detection> kept;
  std::vector<bool> suppressed(dets.size(), false);
  for (std::size_t i = 0; i < dets.size(); ++i) {
    if (suppressed[i]) continue;
    kept.push_back(dets[i]);
    for (std::size_t j = i + 1; j < dets.size(); ++j) {
      if (suppressed[j]) continue;
      if (dets[i].class_id == dets[j].class_id &&
          iou_boxf(dets[i].box, dets[j].box) > iou_thresh)
        suppressed[j] = true;
    }
  }
  return kept;
}

std::vector<std::vector<Detection>> Detector::decode(const HeadOutputs& out,
                                                     float score_thresh,
                                                     float nms_iou,
                                                     int max_dets) const {
  const int B = out.cls[0].dim(0);
  const int K = cfg_.num_classes;
  const int A = cfg_.anchors_per_cell;
  const float S = static_cast<float>(cfg_.image_size);

  std::array<int, 3> grid{}, level_off{};
  int off = 0;
  for (int li = 0; li < 3; ++li) {
    grid[li] = out.cls[li].dim(2);
    level_off[li] = off;
    off += grid[li] * grid[li] * A;
  }

  std::vector<std::vector<Detection>> result(B);
  for (int b = 0; b < B; ++b) {
    std::vector<Detection> cands;
    for (int li = 0; li < 3; ++li) {
      const int g = grid[li];
      const std::size_t plane = static_cast<std::size_t>(g) * g;
      const auto& cv = out.cls[li].values();
      const auto& bv = out.box[li].values();
      for (int y = 0; y < g; ++y)
        for (int x = 0; x < g; ++x)
          for (int a = 0; a < A; ++a) {
            const std::size_t cell = static_cast<std::size_t>(y) * g + x;
            const int ai = level_off[li] + (y * g + x) * A + a;
            std::array<float, 4> delta;
            for (int c = 0; c < 4; ++c)
              delta[c] =
                  bv[(static_cast<std::size_t>(b) * 4 * A + a * 4 + c) * plane +
                     cell];
            for (int k = 0; k < K; ++k) {
              const float logit =
                  cv[(static_cast<std::size_t>(b) * K * A + a * K + k) * plane +
                     cell];
              float p;
              if (logit >= 0.0f)
                p = 1.0f / (1.0f + std::exp(-logit));
              else {
                const float e = std::exp(logit);
                p = e / (1.0f + e);
              }
              if (p < score_thresh) continue;
              BoxF box = decode_box(anchors_[ai], delta);
              box.x1 = std::clamp(box.x1, 0.0f, S);
              box.y1 = std::clamp(box.y1, 0.0f, S);
              box.x2 = std::clamp(box.x2, 0.0f, S);
              box.y2 = std::clamp(box.y2, 0.0f, S);
              if (box.x2 <= box.x1 || box.y2 <= box.y1) continue;
              cands.push_back({k, p, box});
            }
          }
    }
    std::vector<Detection> kept = nms(std::move(cands), nms_iou);
    std::stable_sort(kept.begin(), kept.end(),
                     [](const Detection& a, const Detection& b) {
                       return a.score > b.score;
                     });
    if (static_cast<int>(kept.size()) > max_dets) kept.resize(max_dets);
    result[b] = std::move(kept);
  }
  return result;
}

ParamMap Detector::parameters() const {
  ParamMap p;
  auto add_block = [&p](const std::string& name, const ConvBn& blk) {
    blk.conv.collect(name + ".conv", p);
    blk.bn.collect(name + ".bn", p);
  };
  add_block("backbone.stem1", stem1_);
  add_block("backbone.stem2", stem2_);
  add_block("backbone.stage2a", s2a_);
  add_block("backbone.stage2b", s2b_);
  add_block("backbone.stage3a", s3a_);
  add_block("backbone.stage3b", s3b_);
  add_block("backbone.stage4a", s4a_);
  add_block("backbone.stage4b", s4b_);
  lat3_.collect("fpn.lateral3", p);
  lat4_.collect("fpn.lateral4", p);
  lat5_.collect("fpn.lateral5", p);
  for (std::size_t i = 0; i < cls_tower_.size(); ++i)
    cls_tower_[i].collect("heads.cls_tower." + std::to_string(i), p);
  for (std::size_t i = 0; i < box_tower_.size(); ++i)
    box_tower_[i].collect("heads.box_tower." + std::to_string(i), p);
  cls_out_.collect("heads.cls_out", p);
  box_out_.collect("heads.box_out", p);
  return p;
}

}  // namespace dadet
