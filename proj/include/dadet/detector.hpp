#pragma once

#include <array>
#include <vector>

#include "dadet/losses.hpp"
#include "dadet/nn.hpp"
#include "dadet/tensor.hpp"

namespace dadet {

struct ModelConfig {
  int image_size = 128;  // S, divisible by 16
  int num_classes = 8;   // K
  int anchors_per_cell = 3;
  std::array<int, 4> stage_channels = {16, 32, 64, 128};
  int pyramid_channels = 64;
  int head_depth = 2;
  int head_channels = 64;
  std::array<float, 3> anchor_base_sizes = {16.0f, 32.0f, 64.0f};  // per level
  std::array<float, 3> anchor_scales = {1.0f, 1.26f, 1.587f};
  float pos_iou_threshold = 0.5f;
  float neg_iou_threshold = 0.4f;
  float focal_alpha = 0.25f;
  float focal_gamma = 2.0f;
  float smooth_l1_beta = 1.0f / 9.0f;
  float score_threshold = 0.05f;
  float nms_iou = 0.5f;
  int max_detections = 100;
  float cls_prior = 0.01f;  // pi for the classification bias init
};

struct FeaturePyramid {
  Tensor c3, c4, c5;  // strides 4/8/16, channels per stage_channels[1..3]
  Tensor p3, p4, p5;  // uniform pyramid_channels
};

struct HeadOutputs {
  // index 0/1/2 <-> levels 3/4/5
  std::array<Tensor, 3> cls;  // [B, K*A, H, W]
  std::array<Tensor, 3> box;  // [B, 4*A, H, W]
};

struct Anchor {
  int level;  // 3|4|5
  float cx, cy, w, h;
};

struct BoxF {
  float x1, y1, x2, y2;
};

struct Detection {
  int class_id;
  float score;
  BoxF box;
};

struct GtBox {
  int class_id;
  BoxF box;
};

struct DetLoss {
  Tensor l_class;
  Tensor l_box;
  int num_positive = 0;
};

/// Anchor grid for one image size: levels 3,4,5 in order; within a level
/// cells row-major, then scale index. Count = sum_level H*W*A.
std::vector<Anchor> build_anchors(int image_size, const ModelConfig& cfg);

constexpr int kAnchorIgnore = -2;
constexpr int kAnchorBackground = -1;

struct AnchorMatch {
  // per anchor: kAnchorIgnore, kAnchorBackground, or a ground-truth index
  std::vector<int> assignment;
  int num_positive = 0;
};

/// RetinaNet-style assignment: positive at IoU >= pos_thresh (argmax GT,
/// lowest index on ties), background below neg_thresh, ignore between. Each
/// GT also claims its best-IoU anchor when that anchor is not already
/// positive (highest IoU claim wins, lowest GT index on ties).
AnchorMatch match_anchors(const std::vector<Anchor>& anchors,
                          const std::vector<GtBox>& gts, float pos_thresh,
                          float neg_thresh);

/// (dx,dy,dw,dh) parameterization with log-size terms.
std::array<float, 4> encode_box(const Anchor& anchor, const BoxF& gt);
BoxF decode_box(const Anchor& anchor, const std::array<float, 4>& delta);

float iou_boxf(const BoxF& a, const BoxF& b);
BoxF anchor_to_box(const Anchor& a);

/// Smooth-L1 over the coordinates flagged by positive_mask, averaged over
/// positive anchors (mask count / 4); exactly zero when no anchor is positive.
Tensor box_loss(const Tensor& pred_deltas, const Tensor& target_deltas,
                const Tensor& positive_mask, float beta = 1.0f / 9.0f);

/// Miniature detector: 4-stage backbone (stem + three stride-2 stages, two
/// convs each), 1x1 lateral projections with nearest-neighbor top-down
/// addition, and classification/regression subnets shared across levels.
class Detector {
 public:
  Detector(const ModelConfig& cfg, Rng& rng);

  FeaturePyramid backbone_forward(const Tensor& images, bool training);
  HeadOutputs head_forward(const FeaturePyramid& pyr);

  /// Detection losses on a batch: focal classification (summed over levels,
  /// normalized by positive-anchor count) and smooth-L1 box regression
  /// (averaged over positive anchors).
  DetLoss loss(const HeadOutputs& out,
               const std::vector<std::vector<GtBox>>& gts_per_image);

  /// Per-image detections: score filter, delta decode, clamp, per-class NMS,
  /// top max_dets by score. Reads head output values only (no tape).
  std::vector<std::vector<Detection>> decode(const HeadOutputs& out,
                                             float score_thresh, float nms_iou,
                                             int max_dets) const;

  ParamMap parameters() const;
  const ModelConfig& config() const { return cfg_; }
  const std::vector<Anchor>& anchors() const { return anchors_; }

 private:
  struct ConvBn {
    Conv2d conv;
    BatchNorm2d bn;
  };
  Tensor stage_forward(ConvBn& a, ConvBn& b, const Tensor& x, bool training);

  ModelConfig cfg_;
  ConvBn stem1_, stem2_;
  ConvBn s2a_, s2b_, s3a_, s3b_, s4a_, s4b_;
  Conv2d lat3_, lat4_, lat5_;
  std::vector<Conv2d> cls_tower_, box_tower_;
  Conv2d cls_out_, box_out_;
  std::vector<Anchor> anchors_;
};

/// Greedy per-class NMS; `dets` need not be sorted.
std::vector<Detection> nms(std::vector<Detection> dets, float iou_thresh);

}  // namespace dadet
