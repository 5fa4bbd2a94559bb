// Copyright (c) 2026 the wsolkit authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <string>
#include <vector>

#include "wsol/image.hpp"

namespace wsol {

// 8-bit RGB PNG. Pixels are quantized to k/255 on write; synthetic data is
// generated on that grid so PNG storage round-trips exactly.
Image read_png(const std::string& path);
void write_png(const std::string& path, const Image& img);
void write_png_gray(const std::string& path, int width, int height, const std::vector<uint8_t>& values);

// Raw float32 container: magic "WSOL", u32 width, u32 height, u32 channels,
// then row-major little-endian f32 data. Lossless round trip.
Image read_wsol(const std::string& path);
void write_wsol(const std::string& path, const Image& img);

/// Dispatch on file extension (.png / .wsol).
Image read_image(const std::string& path);

}  // namespace wsol
