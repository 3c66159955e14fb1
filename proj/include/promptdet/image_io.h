// Copyright 2026 The promptdet Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace promptdet {

// 8-bit interleaved RGB.
struct Image {
  int width = 0;
  int height = 0;
  std::vector<uint8_t> rgb;

  uint8_t* pixel(int x, int y) { return rgb.data() + 3 * (static_cast<size_t>(y) * width + x); }
  const uint8_t* pixel(int x, int y) const {
    return rgb.data() + 3 * (static_cast<size_t>(y) * width + x);
  }
  static Image filled(int width, int height, uint8_t r, uint8_t g, uint8_t b);
};

class ImageDecodeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// PNG or binary PPM (P6).
Image decode_image(const std::string& bytes);
std::string encode_png(const Image& image);
Image read_image(const std::string& path);
void write_png(const Image& image, const std::string& path);

// (3, H, W) float tensor, each channel mapped to (x / 255 - 0.5) / 0.25.
torch::Tensor image_to_tensor(const Image& image);

}  // namespace promptdet
