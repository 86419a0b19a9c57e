// Generates the bundled mini-corpus: small procedural RGB images with natural
// mid-range statistics, split into train/ and test/. Also prints the sigma=50
// noisy-input PSNR over test crops as a sanity number for the benchmark's
// input column.

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "tws/data.hpp"
#include "tws/eval.hpp"
#include "tws/rng.hpp"

using namespace tws;
namespace fs = std::filesystem;

namespace {

float smoothstep(float t) { return t * t * (3 - 2 * t); }

// Smooth value noise: bilinear interpolation of a coarse random lattice.
Tensor<float> value_noise(int h, int w, int cell, Rng& rng) {
    int gh = h / cell + 2, gw = w / cell + 2;
    std::vector<float> lattice(size_t(gh) * gw);
    for (auto& v : lattice) v = float(rng.uniform());
    Tensor<float> out(1, h, w);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            float fy = float(y) / cell, fx = float(x) / cell;
            int y0 = int(fy), x0 = int(fx);
            float ty = smoothstep(fy - y0), tx = smoothstep(fx - x0);
            auto at = [&](int yy, int xx) { return lattice[size_t(yy) * gw + xx]; };
            float a = at(y0, x0) * (1 - tx) + at(y0, x0 + 1) * tx;
            float b = at(y0 + 1, x0) * (1 - tx) + at(y0 + 1, x0 + 1) * tx;
            out.at(0, y, x) = a * (1 - ty) + b * ty;
        }
    return out;
}

Tensor<float> make_image(int h, int w, uint64_t seed) {
    Rng rng(seed);
    int style = int(rng.below(4));
    Tensor<float> img(3, h, w);

    // layered smooth noise as the base luminance
    Tensor<float> base = value_noise(h, w, 16, rng);
    Tensor<float> mid = value_noise(h, w, 6, rng);
    Tensor<float> fine = value_noise(h, w, 3, rng);
    for (size_t i = 0; i < base.size(); ++i)
        base.v[i] = 0.55f * base.v[i] + 0.3f * mid.v[i] + 0.15f * fine.v[i];

    double hue[3] = {rng.uniform(0.7, 1.0), rng.uniform(0.7, 1.0), rng.uniform(0.7, 1.0)};
    double plaid_fx = rng.uniform(0.05, 0.3), plaid_fy = rng.uniform(0.05, 0.3);
    double phase = rng.uniform(0, 6.28);
    int nshapes = 2 + int(rng.below(4));
    struct Disc { double cy, cx, r, v; };
    std::vector<Disc> discs;
    for (int s = 0; s < nshapes; ++s)
        discs.push_back({rng.uniform(0, h), rng.uniform(0, w), rng.uniform(4, h / 3.0),
                         rng.uniform(-0.25, 0.25)});

    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double lum = base.at(0, y, x);
            if (style == 1)  // plaid overlay
                lum = 0.7 * lum + 0.3 * (0.5 + 0.5 * std::sin(plaid_fx * x + phase) *
                                                   std::cos(plaid_fy * y));
            if (style == 2)  // flat discs on the background
                for (const auto& d : discs) {
                    double dy = y - d.cy, dx = x - d.cx;
                    if (dy * dy + dx * dx < d.r * d.r) lum = 0.5 + d.v;
                }
            if (style == 3)  // diagonal gradient wash
                lum = 0.6 * lum + 0.4 * (double(x + y) / (h + w));
            // compress into the mid-range so sigma=50 noise behaves like it
            // does on natural images
            lum = 0.5 + 0.62 * (lum - 0.5);
            for (int c = 0; c < 3; ++c) {
                double v = lum * hue[c] + 0.04 * (c == 1 ? 1 : -1) * (base.at(0, y, x) - 0.5);
                img.at(c, y, x) = float(std::min(0.95, std::max(0.05, v)));
            }
        }
    return img;
}

}  // namespace

int main(int argc, char** argv) {
    std::string root = argc > 1 ? argv[1] : "data/corpus";
    fs::create_directories(root + "/train");
    fs::create_directories(root + "/test");
    const int kTrain = 40, kTest = 20, size = 64;
    std::vector<Tensor<float>> test_imgs;
    for (int i = 0; i < kTrain; ++i) {
        char name[64];
        std::snprintf(name, sizeof(name), "%s/train/img%03d.png", root.c_str(), i);
        save_png(make_image(size, size, 1000 + i), name);
    }
    for (int i = 0; i < kTest; ++i) {
        char name[64];
        std::snprintf(name, sizeof(name), "%s/test/img%03d.png", root.c_str(), i);
        Tensor<float> img = make_image(size, size, 2000 + i);
        save_png(img, name);
        test_imgs.push_back(load_png(name));  // quantized, as the benchmark sees it
    }

    // sigma = 50 noisy-input PSNR over 100 32x32 crops of the test images
    PatchDataset patches(test_imgs, 32, AugmentFlags{false, false}, 9);
    Rng crop_rng(11), noise_rng(13);
    double acc = 0;
    const int n = 100;
    for (int i = 0; i < n; ++i) {
        Tensor<float> x = patches.random_patch(crop_rng);
        Tensor<float> y = x;
        for (auto& v : y.v) v += float(50.0 / 255.0 * noise_rng.normal());
        acc += psnr(y.clamped(0.0f, 1.0f), x);
    }
    std::printf("sigma=50 input PSNR over %d test crops: %.3f dB\n", n, acc / n);
    return 0;
}
