#pragma once

#include <vector>

#include "motarfuse/fusion.hpp"
#include "motarfuse/objectives.hpp"

namespace motarfuse {

// Intermediate results of one forward pass.
struct ForwardResult {
  TokenSequence visual;
  MotionTokens motion;
  FusedRepresentation fused;
  Var logits;  // invalid when the head was not requested
};

// Backbone, visual adapter, motion-aware transformer, fusion encoder and
// identity head over one parameter set.
class Network {
 public:
  // num_classes falls back to cfg.num_classes; it must be positive in the end.
  Network(const ModelConfig& cfg, std::size_t num_classes, std::uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  std::size_t num_classes() const { return num_classes_; }
  ParameterSet& params() { return params_; }
  const ParameterSet& params() const { return params_; }
  const BackboneParams& backbone() const { return backbone_; }
  const MotionParams& motion() const { return motion_; }
  const FusionParams& fusion() const { return fusion_; }
  const ClassifierParams& head() const { return head_; }

  // Patch embedding and encoder for one frame.
  TokenSequence encode_frame(Binder& b, const ImageFrame& frame, int frame_index = 0) const;

  // Adapter onward, starting from already encoded frames (T = per_frame.size()).
  ForwardResult forward_encoded(Binder& b, const std::vector<TokenSequence>& per_frame, bool with_logits = true,
                                AdapterTrace* adapter_trace = nullptr, Tensor* motion_weights = nullptr) const;

  ForwardResult forward(Binder& b, const std::vector<ImageFrame>& frames, bool with_logits = true) const;

  // h_m_cls for an image (one frame) or a clip, computed without a gradient tape.
  std::vector<double> feature(const std::vector<ImageFrame>& frames) const;

 private:
  ModelConfig cfg_;
  std::size_t num_classes_;
  ParameterSet params_;
  BackboneParams backbone_;
  MotionParams motion_;
  FusionParams fusion_;
  ClassifierParams head_;
};

}  // namespace motarfuse
