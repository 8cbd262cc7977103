#pragma once

#include <cstddef>
#include <vector>

#include "didfuse/tensor.hpp"

namespace didfuse {

// Single-channel 2-D real image, row-major.
struct Image {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;

  Image() = default;
  Image(std::size_t h, std::size_t w, double fill = 0.0) : height(h), width(w), pixels(h * w, fill) {}

  std::size_t size() const { return pixels.size(); }
  bool empty() const { return pixels.empty(); }
  double& at(std::size_t y, std::size_t x) { return pixels[y * width + x]; }
  double at(std::size_t y, std::size_t x) const { return pixels[y * width + x]; }
};

// Channel `c` of batch item `n` as an Image.
template <typename T>
Image channel_image(const Tensor<T>& t, std::size_t n = 0, std::size_t c = 0) {
  Image img(t.shape().h, t.shape().w);
  const T* p = t.plane(n, c);
  for (std::size_t i = 0; i < img.size(); ++i) img.pixels[i] = static_cast<double>(p[i]);
  return img;
}

// Stacks equally sized images into an (n,1,h,w) tensor.
template <typename T>
Tensor<T> images_to_tensor(const std::vector<const Image*>& images) {
  if (images.empty()) throw ShapeError("cannot batch zero images");
  const std::size_t h = images.front()->height, w = images.front()->width;
  Tensor<T> out(Shape{images.size(), 1, h, w});
  for (std::size_t n = 0; n < images.size(); ++n) {
    if (images[n]->height != h || images[n]->width != w) throw ShapeError("images in a batch differ in size");
    T* dst = out.plane(n, 0);
    for (std::size_t i = 0; i < h * w; ++i) dst[i] = static_cast<T>(images[n]->pixels[i]);
  }
  return out;
}

}  // namespace didfuse
