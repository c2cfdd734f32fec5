#pragma once

// Shared color palettes: the renderer paints with them, captions name them,
// and the attribute metrics classify against them.

#include <array>
#include <cstdint>
#include <string>

namespace df {

struct PaletteColor {
    const char* name;
    uint8_t r, g, b;
};

inline constexpr std::array<PaletteColor, 8> kHairColors = {{
    {"black", 20, 20, 20},
    {"brown", 101, 67, 33},
    {"blond", 240, 220, 130},
    {"red", 181, 57, 36},
    {"gray", 128, 128, 128},
    {"white", 245, 245, 245},
    {"blue", 50, 90, 220},
    {"green", 40, 160, 70},
}};

inline constexpr std::array<PaletteColor, 8> kEyeColors = {{
    {"blue", 60, 110, 230},
    {"green", 60, 170, 90},
    {"brown", 120, 80, 40},
    {"gray", 150, 150, 150},
    {"black", 25, 25, 25},
    {"amber", 255, 191, 0},
    {"red", 200, 40, 40},
    {"violet", 150, 60, 200},
}};

inline constexpr std::array<PaletteColor, 8> kBackgroundColors = {{
    {"white", 255, 255, 255},
    {"black", 0, 0, 0},
    {"red", 220, 60, 50},
    {"green", 70, 180, 90},
    {"blue", 70, 110, 230},
    {"yellow", 240, 220, 80},
    {"purple", 140, 70, 190},
    {"orange", 240, 150, 60},
}};

inline constexpr std::array<PaletteColor, 6> kSkinTones = {{
    {"skin0", 255, 224, 189},
    {"skin1", 241, 194, 125},
    {"skin2", 224, 172, 105},
    {"skin3", 198, 134, 66},
    {"skin4", 141, 85, 36},
    {"skin5", 92, 51, 23},
}};

// Map a continuous [0,1] parameter onto a palette index.
template <size_t N>
int palette_index(double p, const std::array<PaletteColor, N>& pal) {
    int idx = static_cast<int>(p * static_cast<double>(pal.size()));
    if (idx >= static_cast<int>(pal.size())) idx = static_cast<int>(pal.size()) - 1;
    if (idx < 0) idx = 0;
    return idx;
}

template <size_t N>
int nearest_palette(double r, double g, double b, const std::array<PaletteColor, N>& pal) {
    int best = 0;
    double bestd = 1e18;
    for (size_t i = 0; i < pal.size(); ++i) {
        const double dr = r - pal[i].r, dg = g - pal[i].g, db = b - pal[i].b;
        const double d = dr * dr + dg * dg + db * db;
        if (d < bestd) {
            bestd = d;
            best = static_cast<int>(i);
        }
    }
    return best;
}

}  // namespace df
