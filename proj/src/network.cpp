#include "motarfuse/network.hpp"

#include "motarfuse/error.hpp"

namespace motarfuse {

Network::Network(const ModelConfig& cfg, std::size_t num_classes, std::uint64_t seed)
    : cfg_(cfg), num_classes_(num_classes != 0 ? num_classes : cfg.num_classes) {
  cfg_.validate();
  if (num_classes_ == 0) throw ConfigError("network: number of classes is unknown");
  cfg_.num_classes = num_classes_;
  Rng rng(seed);
  backbone_ = make_backbone(params_, cfg_, rng);
  motion_ = make_motion(params_, cfg_, rng);
  fusion_ = make_fusion(params_, cfg_, rng);
  head_ = make_classifier(params_, cfg_.d_model, num_classes_, cfg_.init_std, rng);
}

TokenSequence Network::encode_frame(Binder& b, const ImageFrame& frame, int frame_index) const {
  if (frame.height != cfg_.image_height || frame.width != cfg_.image_width) {
    throw ShapeError("network expects " + std::to_string(cfg_.image_height) + "x" + std::to_string(cfg_.image_width) +
                     " frames, got " + std::to_string(frame.height) + "x" + std::to_string(frame.width));
  }
  return encode(b, backbone_.encoder, embed_frame(b, backbone_, frame, frame_index));
}

ForwardResult Network::forward_encoded(Binder& b, const std::vector<TokenSequence>& per_frame, bool with_logits,
                                       AdapterTrace* adapter_trace, Tensor* motion_weights) const {
  ForwardResult r;
  r.visual = adapt(b, backbone_, per_frame, adapter_trace);
  const SourceMode mode = per_frame.size() == 1   ? SourceMode::single_frame
                          : per_frame.size() == 2 ? SourceMode::frame_pair
                                                  : SourceMode::clip;
  r.motion = motion_tokens(b, motion_, r.visual, mode, motion_weights);
  r.fused = fuse(b, fusion_, r.visual, r.motion);
  if (with_logits) r.logits = classify(b, head_, r.fused.h_m_cls);
  return r;
}

ForwardResult Network::forward(Binder& b, const std::vector<ImageFrame>& frames, bool with_logits) const {
  if (frames.empty()) throw ContractError("network: no frames to encode");
  std::vector<TokenSequence> enc;
  enc.reserve(frames.size());
  for (std::size_t t = 0; t < frames.size(); ++t) enc.push_back(encode_frame(b, frames[t], static_cast<int>(t)));
  return forward_encoded(b, enc, with_logits);
}

std::vector<double> Network::feature(const std::vector<ImageFrame>& frames) const {
  Tape tape(false);
  Binder b(tape, params_, false);
  const ForwardResult r = forward(b, frames, false);
  const auto data = r.fused.h_m_cls.value().data();
  return {data.begin(), data.end()};
}

}  // namespace motarfuse
