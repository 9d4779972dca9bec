#pragma once

#include <vector>

#include <torch/torch.h>

#include "sketchfill/image.hpp"

namespace sketchfill {

// HWC images <-> CHW float tensors (no batch dimension).
torch::Tensor to_tensor(const Image& img);
torch::Tensor to_tensor(const Bitmap& map);
Image to_image(const torch::Tensor& chw);
Bitmap to_bitmap(const torch::Tensor& chw, float threshold = 0.5f);

torch::Tensor stack_images(const std::vector<Image>& imgs);

/// Scoped CPU bf16 autocast; a no-op when `enable` is false.
class AutocastGuard {
 public:
  explicit AutocastGuard(bool enable);
  ~AutocastGuard();
  AutocastGuard(const AutocastGuard&) = delete;
  AutocastGuard& operator=(const AutocastGuard&) = delete;

 private:
  bool enabled_;
  bool previous_ = false;
};

}  // namespace sketchfill
