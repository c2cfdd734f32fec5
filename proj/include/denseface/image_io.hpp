#pragma once

// 8-bit PPM (P6) / PGM (P5) image files and the [-1,1] <-> byte mapping
// used when decoding diffusion outputs.

#include <cstdint>
#include <string>
#include <vector>

#include "denseface/tensor.hpp"

namespace df {

struct ImageU8 {
    int w = 0, h = 0, channels = 0;  // channels: 1 or 3, interleaved rows
    std::vector<uint8_t> data;
};

void write_ppm(const std::string& path, const ImageU8& img);
ImageU8 read_ppm(const std::string& path);
void write_pgm(const std::string& path, const ImageU8& img);
ImageU8 read_pgm(const std::string& path);

// [3,H,W] in [-1,1] -> interleaved RGB bytes (clamp, then round)
ImageU8 decode_image(const TensorF& chw);
// inverse byte -> [-1,1]
TensorF encode_image(const ImageU8& img);

// [H,W] in [0,1] -> grayscale bytes
ImageU8 gray_to_u8(const TensorF& hw);
TensorF u8_to_gray(const ImageU8& img);

}  // namespace df
