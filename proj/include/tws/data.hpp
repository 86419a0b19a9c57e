#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "tws/denoiser.hpp"
#include "tws/rng.hpp"
#include "tws/tensor.hpp"

namespace tws {

// ---- PNG --------------------------------------------------------------------
// decode maps sample s of bit depth b to s/(2^b - 1); alpha channels are
// stripped with a warning, palettes expand to RGB. encode clamps to [0,1] and
// quantizes to 8-bit.
Tensor<float> decode_png(const std::vector<unsigned char>& bytes);
std::vector<unsigned char> encode_png(const Tensor<float>& img);
Tensor<float> load_png(const std::string& path);
void save_png(const Tensor<float>& img, const std::string& path);

// ---- binary containers ------------------------------------------------------
struct NamedTensorF {
    std::string name;
    std::vector<uint64_t> dims;
    std::vector<float> data;
};

// Model checkpoint: magic "TWSV", version, architecture descriptor, named
// float32 parameter tensors, trailing CRC32. Little-endian throughout.
struct CheckpointFile {
    uint32_t depth = 0, channels = 0, kernel = 0, input_channels = 0;
    std::vector<NamedTensorF> tensors;
};

inline constexpr uint32_t kCheckpointVersion = 1;

void write_checkpoint(const std::string& path, const CheckpointFile& ckpt);
CheckpointFile read_checkpoint(const std::string& path);

// Measurement container ("TWMV"): a JSON metadata block (operator descriptor
// and provenance) plus named tensors, same encoding and CRC as checkpoints.
struct MeasurementFile {
    std::string meta_json;
    std::vector<NamedTensorF> tensors;
};

void write_measurement(const std::string& path, const MeasurementFile& m);
MeasurementFile read_measurement(const std::string& path);

uint32_t file_crc32(const std::string& path);

// ---- model <-> checkpoint ---------------------------------------------------
template <typename T>
CheckpointFile to_checkpoint(const BiasFreeCNN<T>& net) {
    CheckpointFile c;
    const auto& cfg = net.config();
    c.depth = cfg.depth;
    c.channels = cfg.channels;
    c.kernel = cfg.kernel_size;
    c.input_channels = cfg.input_channels;
    const auto& layers = net.layers();
    for (size_t l = 0; l < layers.size(); ++l) {
        NamedTensorF t;
        t.name = "conv" + std::to_string(l) + ".weight";
        t.dims = {uint64_t(layers[l].out_ch), uint64_t(layers[l].in_ch), uint64_t(layers[l].k),
                  uint64_t(layers[l].k)};
        t.data.assign(layers[l].w.begin(), layers[l].w.end());
        c.tensors.push_back(std::move(t));
    }
    return c;
}

template <typename T>
BiasFreeCNN<T> from_checkpoint(const CheckpointFile& c) {
    BiasFreeCNNConfig cfg;
    cfg.depth = int(c.depth);
    cfg.channels = int(c.channels);
    cfg.kernel_size = int(c.kernel);
    cfg.input_channels = int(c.input_channels);
    BiasFreeCNN<T> net(cfg);
    auto& layers = net.layers();
    if (c.tensors.size() != layers.size())
        throw std::runtime_error("checkpoint: tensor count does not match architecture");
    for (size_t l = 0; l < layers.size(); ++l) {
        if (c.tensors[l].data.size() != layers[l].w.size())
            throw std::runtime_error("checkpoint: tensor size mismatch for " + c.tensors[l].name);
        layers[l].w.assign(c.tensors[l].data.begin(), c.tensors[l].data.end());
    }
    return net;
}

template <typename T>
void save_checkpoint(const BiasFreeCNN<T>& net, const std::string& path) {
    write_checkpoint(path, to_checkpoint(net));
}

template <typename T>
BiasFreeCNN<T> load_checkpoint(const std::string& path) {
    return from_checkpoint<T>(read_checkpoint(path));
}

// ---- dataset ----------------------------------------------------------------
struct AugmentFlags {
    bool flips = true;
    bool rotations = true;
};

// Directory of decoded PNGs yielding seeded random square crops with optional
// flip / 90-degree-rotation augmentation. Patch draws are deterministic per
// (dataset seed, epoch) stream.
class PatchDataset {
  public:
    PatchDataset(const std::string& dir, int crop_size, AugmentFlags aug, uint64_t seed);
    PatchDataset(std::vector<Tensor<float>> images, int crop_size, AugmentFlags aug,
                 uint64_t seed);

    size_t image_count() const { return images_.size(); }
    int crop_size() const { return crop_; }
    const std::vector<Tensor<float>>& images() const { return images_; }

    Rng epoch_stream(uint64_t epoch) const { return Rng(derive_seed(seed_, "epoch", epoch)); }
    Tensor<float> random_patch(Rng& rng) const;

  private:
    void check() const;

    std::vector<Tensor<float>> images_;
    int crop_;
    AugmentFlags aug_;
    uint64_t seed_;
};

}  // namespace tws
