#include "denseface/image_io.hpp"

#include <cmath>
#include <fstream>

#include "denseface/error.hpp"

namespace df {

namespace {

void write_pnm(const std::string& path, const ImageU8& img, const char* magic, int channels) {
    if (img.channels != channels) throw ContractError("pnm channel mismatch");
    if (static_cast<int>(img.data.size()) != img.w * img.h * channels)
        throw ContractError("pnm data size mismatch");
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot write " + path);
    f << magic << "\n" << img.w << " " << img.h << "\n255\n";
    f.write(reinterpret_cast<const char*>(img.data.data()), static_cast<std::streamsize>(img.data.size()));
    if (!f) throw IoError("short write to " + path);
}

ImageU8 read_pnm(const std::string& path, const char* magic, int channels) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open " + path);
    std::string m;
    f >> m;
    if (m != magic) throw CorruptArtifactError(path + ": expected " + magic + ", got " + m);
    int w = 0, h = 0, maxv = 0;
    f >> w >> h >> maxv;
    if (w <= 0 || h <= 0 || maxv != 255) throw CorruptArtifactError(path + ": bad header");
    f.get();  // single whitespace after maxval
    ImageU8 img;
    img.w = w;
    img.h = h;
    img.channels = channels;
    img.data.resize(static_cast<size_t>(w * h * channels));
    f.read(reinterpret_cast<char*>(img.data.data()), static_cast<std::streamsize>(img.data.size()));
    if (f.gcount() != static_cast<std::streamsize>(img.data.size()))
        throw CorruptArtifactError(path + ": truncated pixel data");
    return img;
}

}  // namespace

void write_ppm(const std::string& path, const ImageU8& img) { write_pnm(path, img, "P6", 3); }
ImageU8 read_ppm(const std::string& path) { return read_pnm(path, "P6", 3); }
void write_pgm(const std::string& path, const ImageU8& img) { write_pnm(path, img, "P5", 1); }
ImageU8 read_pgm(const std::string& path) { return read_pnm(path, "P5", 1); }

ImageU8 decode_image(const TensorF& chw) {
    if (chw.ndim() != 3 || chw.dim(0) != 3)
        throw ShapeError("decode_image expects [3,H,W], got " + shape_str(chw.shape()));
    const int H = static_cast<int>(chw.dim(1)), W = static_cast<int>(chw.dim(2));
    ImageU8 img;
    img.w = W;
    img.h = H;
    img.channels = 3;
    img.data.resize(static_cast<size_t>(3 * H * W));
    const auto& v = chw.values();
    for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
            for (int c = 0; c < 3; ++c) {
                float val = v[static_cast<size_t>((c * H + y) * W + x)];
                val = std::min(1.0f, std::max(-1.0f, val));
                const int b = static_cast<int>(std::lround((val + 1.0f) * 0.5f * 255.0f));
                img.data[static_cast<size_t>((y * W + x) * 3 + c)] =
                    static_cast<uint8_t>(std::min(255, std::max(0, b)));
            }
    return img;
}

TensorF encode_image(const ImageU8& img) {
    if (img.channels != 3) throw ShapeError("encode_image expects 3 channels");
    TensorF t({3, img.h, img.w});
    auto& v = t.mutable_values();
    for (int y = 0; y < img.h; ++y)
        for (int x = 0; x < img.w; ++x)
            for (int c = 0; c < 3; ++c)
                v[static_cast<size_t>((c * img.h + y) * img.w + x)] =
                    static_cast<float>(img.data[static_cast<size_t>((y * img.w + x) * 3 + c)]) / 255.0f * 2.0f - 1.0f;
    return t;
}

ImageU8 gray_to_u8(const TensorF& hw) {
    if (hw.ndim() != 2) throw ShapeError("gray_to_u8 expects [H,W]");
    ImageU8 img;
    img.h = static_cast<int>(hw.dim(0));
    img.w = static_cast<int>(hw.dim(1));
    img.channels = 1;
    img.data.resize(static_cast<size_t>(img.w * img.h));
    const auto& v = hw.values();
    for (size_t i = 0; i < v.size(); ++i) {
        const float x = std::min(1.0f, std::max(0.0f, v[i]));
        img.data[i] = static_cast<uint8_t>(std::lround(x * 255.0f));
    }
    return img;
}

TensorF u8_to_gray(const ImageU8& img) {
    if (img.channels != 1) throw ShapeError("u8_to_gray expects 1 channel");
    TensorF t({img.h, img.w});
    auto& v = t.mutable_values();
    for (size_t i = 0; i < v.size(); ++i) v[i] = static_cast<float>(img.data[i]) / 255.0f;
    return t;
}

}  // namespace df
