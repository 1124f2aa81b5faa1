#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dfpt/tensor.hpp"

namespace dfpt::data {

// Immutable image-classification split: NCHW float images in [0, 1] plus
// integer class labels.
struct LabeledDataset {
    Tensor images;                     // [count, channels, H, W], f32
    std::vector<std::int64_t> labels;  // one class index per image
    std::int64_t classes = 0;
    std::string split;

    std::int64_t count() const { return static_cast<std::int64_t>(labels.size()); }
};

// Recipe for the deterministic synthetic generator: each class gets a smooth
// random template; samples are the template plus difficulty-scaled noise.
struct SynthSpec {
    std::int64_t classes = 10;
    std::int64_t per_class = 250;  // overall, split 80/20 into train/test
    std::int64_t size = 16;        // square images
    std::int64_t channels = 3;
    double difficulty = 1.0;       // noise std in units of the base noise scale
    std::uint64_t seed = 0;
};

struct SynthData {
    LabeledDataset train;
    LabeledDataset test;
};

SynthData gen_synth(const SynthSpec& spec);

// IDX (big-endian) image + label file pair; a channel axis is added and
// pixel bytes are scaled so 255 -> 1.0 exactly.
LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path,
                        std::int64_t classes, std::string split);

// Record-per-row binary files (label byte(s) + 3 x 1024 pixel bytes). The
// label width is derived from the file size; two-label records use the
// second (fine) byte.
LabeledDataset load_cifar_binary(const std::vector<std::string>& files, std::int64_t classes,
                                 std::string split);

struct Batch {
    Tensor images;
    std::vector<std::int64_t> labels;
};

// One epoch of seeded-shuffle batches; the order depends on (seed, epoch)
// only. Optional augmentation = random crop after 4-pixel zero padding plus
// a coin-flip horizontal mirror. The trailing partial batch is kept.
class BatchStream {
public:
    BatchStream(const LabeledDataset& ds, std::int64_t batch_size, std::uint64_t seed,
                std::int64_t epoch, bool augment);

    bool next(Batch& out);  // false once the epoch is exhausted
    std::int64_t batches_per_epoch() const;

private:
    const LabeledDataset* ds_;
    std::int64_t batch_size_;
    bool augment_;
    std::vector<std::int64_t> order_;
    std::size_t pos_ = 0;
    Rng rng_;
};

// Checkpoint-container persistence (images as f32 tensors, labels as exact
// small integers in f32).
void save_dataset(const LabeledDataset& ds, const std::string& path);
LabeledDataset load_dataset(const std::string& path);

}  // namespace dfpt::data
