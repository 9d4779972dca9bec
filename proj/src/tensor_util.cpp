#include "sketchfill/tensor_util.hpp"

#include <ATen/autocast_mode.h>

#include <algorithm>

namespace sketchfill {

torch::Tensor to_tensor(const Image& img) {
  auto t = torch::empty({img.channels(), img.height(), img.width()}, torch::kFloat);
  auto acc = t.accessor<float, 3>();
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      for (int c = 0; c < img.channels(); ++c) acc[c][y][x] = img.at(y, x, c);
  return t;
}

torch::Tensor to_tensor(const Bitmap& map) {
  auto t = torch::empty({1, map.height(), map.width()}, torch::kFloat);
  auto acc = t.accessor<float, 3>();
  for (int y = 0; y < map.height(); ++y)
    for (int x = 0; x < map.width(); ++x) acc[0][y][x] = map.at(y, x);
  return t;
}

Image to_image(const torch::Tensor& chw) {
  if (chw.dim() != 3) throw ContractError("to_image: expected CHW tensor");
  auto t = chw.detach().to(torch::kFloat).contiguous();
  Image img(static_cast<int>(t.size(2)), static_cast<int>(t.size(1)), static_cast<int>(t.size(0)));
  auto acc = t.accessor<float, 3>();
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      for (int c = 0; c < img.channels(); ++c) img.at(y, x, c) = acc[c][y][x];
  return img;
}

Bitmap to_bitmap(const torch::Tensor& chw, float threshold) {
  if (chw.dim() != 3 || chw.size(0) != 1) throw ContractError("to_bitmap: expected 1xHxW tensor");
  auto t = chw.detach().to(torch::kFloat).contiguous();
  Bitmap b(static_cast<int>(t.size(2)), static_cast<int>(t.size(1)));
  auto acc = t.accessor<float, 3>();
  for (int y = 0; y < b.height(); ++y)
    for (int x = 0; x < b.width(); ++x) b.set(y, x, acc[0][y][x] >= threshold);
  return b;
}

torch::Tensor stack_images(const std::vector<Image>& imgs) {
  std::vector<torch::Tensor> ts;
  ts.reserve(imgs.size());
  for (const auto& im : imgs) ts.push_back(to_tensor(im));
  return torch::stack(ts);
}

AutocastGuard::AutocastGuard(bool enable) : enabled_(enable) {
  if (!enabled_) return;
  previous_ = at::autocast::is_autocast_enabled(at::kCPU);
  at::autocast::set_autocast_dtype(at::kCPU, at::kBFloat16);
  at::autocast::set_autocast_enabled(at::kCPU, true);
}

AutocastGuard::~AutocastGuard() {
  if (!enabled_) return;
  at::autocast::set_autocast_enabled(at::kCPU, previous_);
  if (!previous_) at::autocast::clear_cache();
}

}  // namespace sketchfill
