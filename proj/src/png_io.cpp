#include <png.h>

#include <algorithm>
#include <cmath>
#include <csetjmp>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <iostream>
#include <stdexcept>

#include "tws/data.hpp"

namespace tws {

namespace {

struct MemReader {
    const unsigned char* data;
    size_t size;
    size_t pos;
};

void read_fn(png_structp png, png_bytep out, png_size_t n) {
    auto* r = static_cast<MemReader*>(png_get_io_ptr(png));
    if (r->pos + n > r->size) png_error(png, "truncated PNG");
    std::memcpy(out, r->data + r->pos, n);
    r->pos += n;
}

void write_fn(png_structp png, png_bytep data, png_size_t n) {
    auto* out = static_cast<std::vector<unsigned char>*>(png_get_io_ptr(png));
    out->insert(out->end(), data, data + n);
}

void flush_fn(png_structp) {}

}  // namespace

Tensor<float> decode_png(const std::vector<unsigned char>& bytes) {
    if (bytes.size() < 8 || png_sig_cmp(bytes.data(), 0, 8))
        throw std::runtime_error("decode_png: not a PNG file");
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (!png || !info) throw std::runtime_error("decode_png: libpng init failed");
    MemReader reader{bytes.data(), bytes.size(), 0};
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("decode_png: malformed PNG");
    }
    png_set_read_fn(png, &reader, read_fn);
    png_read_info(png, info);

    png_uint_32 w, h;
    int bit_depth, color_type;
    png_get_IHDR(png, info, &w, &h, &bit_depth, &color_type, nullptr, nullptr, nullptr);

    if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
    if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
    if (color_type & PNG_COLOR_MASK_ALPHA || png_get_valid(png, info, PNG_INFO_tRNS)) {
        std::cerr << "twsolver: warning: stripping alpha channel from PNG\n";
        png_set_strip_alpha(png);
    }
    if (bit_depth == 16) png_set_swap(png);  // data arrives little-endian after this
    png_read_update_info(png, info);
    png_get_IHDR(png, info, &w, &h, &bit_depth, &color_type, nullptr, nullptr, nullptr);

    int channels = png_get_channels(png, info);
    if (channels != 1 && channels != 3) {
        png_destroy_read_struct(&png, &info, nullptr);
        throw std::runtime_error("decode_png: unsupported color type");
    }

    size_t rowbytes = png_get_rowbytes(png, info);
    std::vector<unsigned char> raster(rowbytes * h);
    std::vector<png_bytep> rows(h);
    for (png_uint_32 y = 0; y < h; ++y) rows[y] = raster.data() + y * rowbytes;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);

    Tensor<float> img(channels, int(h), int(w));
    const float denom = bit_depth == 16 ? 65535.0f : 255.0f;
    for (png_uint_32 y = 0; y < h; ++y) {
        const unsigned char* row = raster.data() + y * rowbytes;
        for (png_uint_32 x = 0; x < w; ++x)
            for (int c = 0; c < channels; ++c) {
                unsigned s;
                if (bit_depth == 16) {
                    size_t i = (size_t(x) * channels + c) * 2;
                    s = unsigned(row[i]) | (unsigned(row[i + 1]) << 8);
                } else {
                    s = row[size_t(x) * channels + c];
                }
                img.at(c, int(y), int(x)) = float(s) / denom;
            }
    }
    return img;
}

std::vector<unsigned char> encode_png(const Tensor<float>& img) {
    if (img.channels != 1 && img.channels != 3)
        throw std::runtime_error("encode_png: only 1- or 3-channel images supported");
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info = png_create_info_struct(png);
    if (!png || !info) throw std::runtime_error("encode_png: libpng init failed");
    std::vector<unsigned char> out;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("encode_png: write failed");
    }
    png_set_write_fn(png, &out, write_fn, flush_fn);
    int color = img.channels == 1 ? PNG_COLOR_TYPE_GRAY : PNG_COLOR_TYPE_RGB;
    png_set_IHDR(png, info, img.width, img.height, 8, color, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);

    std::vector<unsigned char> row(size_t(img.width) * img.channels);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < img.channels; ++c) {
                float v = std::min(1.0f, std::max(0.0f, img.at(c, y, x)));
                row[size_t(x) * img.channels + c] =
                    static_cast<unsigned char>(std::lround(v * 255.0f));
            }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
    return out;
}

Tensor<float> load_png(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path);
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                     std::istreambuf_iterator<char>());
    return decode_png(bytes);
}

void save_png(const Tensor<float>& img, const std::string& path) {
    auto bytes = encode_png(img);
    std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw std::runtime_error("cannot write " + path);
        f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
    }
    std::filesystem::rename(tmp, path);
}

PatchDataset::PatchDataset(const std::string& dir, int crop_size, AugmentFlags aug, uint64_t seed)
    : crop_(crop_size), aug_(aug), seed_(seed) {
    std::vector<std::filesystem::path> paths;
    for (const auto& e : std::filesystem::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".png") paths.push_back(e.path());
    std::sort(paths.begin(), paths.end());
    for (const auto& p : paths) {
        Tensor<float> img = load_png(p.string());
        if (img.height >= crop_ && img.width >= crop_) images_.push_back(std::move(img));
    }
    check();
}

PatchDataset::PatchDataset(std::vector<Tensor<float>> images, int crop_size, AugmentFlags aug,
                           uint64_t seed)
    : crop_(crop_size), aug_(aug), seed_(seed) {
    for (auto& img : images)
        if (img.height >= crop_ && img.width >= crop_) images_.push_back(std::move(img));
    check();
}

void PatchDataset::check() const {
    if (images_.empty())
        throw std::runtime_error("dataset: no decodable image at least crop_size large");
}

Tensor<float> PatchDataset::random_patch(Rng& rng) const {
    const Tensor<float>& img = images_[rng.below(images_.size())];
    int oy = int(rng.below(uint64_t(img.height - crop_ + 1)));
    int ox = int(rng.below(uint64_t(img.width - crop_ + 1)));
    Tensor<float> patch(img.channels, crop_, crop_);
    for (int c = 0; c < img.channels; ++c)
        for (int y = 0; y < crop_; ++y)
            for (int x = 0; x < crop_; ++x) patch.at(c, y, x) = img.at(c, oy + y, ox + x);

    bool fh = aug_.flips && rng.below(2);
    bool fv = aug_.flips && rng.below(2);
    int rot = aug_.rotations ? int(rng.below(4)) : 0;
    if (!fh && !fv && rot == 0) return patch;
    Tensor<float> out(patch.channels, crop_, crop_);
    for (int c = 0; c < patch.channels; ++c)
        for (int y = 0; y < crop_; ++y)
            for (int x = 0; x < crop_; ++x) {
                int sy = fv ? crop_ - 1 - y : y;
                int sx = fh ? crop_ - 1 - x : x;
                for (int r = 0; r < rot; ++r) {
                    int t = sy;
                    sy = crop_ - 1 - sx;
                    sx = t;
                }
                out.at(c, y, x) = patch.at(c, sy, sx);
            }
    return out;
}

}  // namespace tws
