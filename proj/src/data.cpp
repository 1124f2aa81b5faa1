#include "dfpt/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <utility>

#include "dfpt/checkpoint.hpp"

namespace dfpt::data {

namespace {

// Template geometry: a coarse random control grid upsampled bilinearly gives
// a smooth low-frequency class pattern; noise rides on top of it.
constexpr std::int64_t kGridSide = 4;
constexpr double kTemplateAmp = 0.2;  // contrast around mid-grey 0.5
constexpr double kNoiseScale = 0.2;   // per-unit-difficulty noise std
constexpr std::int64_t kCropPad = 4;

std::vector<unsigned char> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("data: cannot open '" + path + "'");
    in.seekg(0, std::ios::end);
    const auto n = static_cast<std::size_t>(in.tellg());
    in.seekg(0, std::ios::beg);
    std::vector<unsigned char> buf(n);
    if (n && !in.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(n)))
        throw Error("data: failed to read '" + path + "'");
    return buf;
}

std::uint32_t be_u32(const std::vector<unsigned char>& b, std::size_t off, const std::string& path) {
    if (off + 4 > b.size()) throw Error("idx: unexpected end of file in '" + path + "'");
    return (static_cast<std::uint32_t>(b[off]) << 24) | (static_cast<std::uint32_t>(b[off + 1]) << 16) |
           (static_cast<std::uint32_t>(b[off + 2]) << 8) | static_cast<std::uint32_t>(b[off + 3]);
}

std::vector<float> make_template(std::int64_t channels, std::int64_t size, Rng& rng) {
    std::vector<double> grid(static_cast<std::size_t>(channels * kGridSide * kGridSide));
    for (auto& g : grid) g = rng.normal();
    std::vector<float> out(static_cast<std::size_t>(channels * size * size));
    for (std::int64_t c = 0; c < channels; ++c)
        for (std::int64_t y = 0; y < size; ++y)
            for (std::int64_t x = 0; x < size; ++x) {
                const double fy = size > 1 ? static_cast<double>(y) * (kGridSide - 1) / (size - 1) : 0.0;
                const double fx = size > 1 ? static_cast<double>(x) * (kGridSide - 1) / (size - 1) : 0.0;
                const auto y0 = static_cast<std::int64_t>(fy), x0 = static_cast<std::int64_t>(fx);
                const std::int64_t y1 = std::min(y0 + 1, kGridSide - 1);
                const std::int64_t x1 = std::min(x0 + 1, kGridSide - 1);
                const double wy = fy - static_cast<double>(y0), wx = fx - static_cast<double>(x0);
                const auto at = [&](std::int64_t gy, std::int64_t gx) {
                    return grid[static_cast<std::size_t>((c * kGridSide + gy) * kGridSide + gx)];
                };
                const double v = (1 - wy) * ((1 - wx) * at(y0, x0) + wx * at(y0, x1)) +
                                 wy * ((1 - wx) * at(y1, x0) + wx * at(y1, x1));
                out[static_cast<std::size_t>((c * size + y) * size + x)] =
                    static_cast<float>(0.5 + kTemplateAmp * v);
            }
    return out;
}

}  // namespace

SynthData gen_synth(const SynthSpec& spec) {
    if (spec.classes < 1) throw Error("synth: classes must be >= 1");
    if (spec.size < 1) throw Error("synth: size must be >= 1");
    if (spec.channels < 1) throw Error("synth: channels must be >= 1");
    if (!(spec.difficulty > 0.0)) throw Error("synth: difficulty must be > 0");
    const std::int64_t train_per_class = spec.per_class * 4 / 5;
    const std::int64_t test_per_class = spec.per_class - train_per_class;
    if (train_per_class < 1 || test_per_class < 1)
        throw Error("synth: per_class must give both splits at least one sample");

    const std::int64_t pixels = spec.channels * spec.size * spec.size;
    SynthData out;
    out.train.images = Tensor::zeros({spec.classes * train_per_class, spec.channels, spec.size, spec.size});
    out.test.images = Tensor::zeros({spec.classes * test_per_class, spec.channels, spec.size, spec.size});
    out.train.labels.resize(static_cast<std::size_t>(spec.classes * train_per_class));
    out.test.labels.resize(static_cast<std::size_t>(spec.classes * test_per_class));
    out.train.classes = out.test.classes = spec.classes;
    out.train.split = "train";
    out.test.split = "test";

    float* train_px = out.train.images.data<float>();
    float* test_px = out.test.images.data<float>();
    for (std::int64_t c = 0; c < spec.classes; ++c) {
        // One stream per class id: distinct templates even under equal seeds.
        Rng rng(Rng::fold(spec.seed, static_cast<std::uint64_t>(c) + 1));
        const std::vector<float> tmpl = make_template(spec.channels, spec.size, rng);
        for (std::int64_t s = 0; s < spec.per_class; ++s) {
            const bool is_train = s < train_per_class;
            const std::int64_t row = is_train ? c * train_per_class + s
                                              : c * test_per_class + (s - train_per_class);
            float* dst = (is_train ? train_px : test_px) + row * pixels;
            for (std::int64_t p = 0; p < pixels; ++p) {
                const double v = static_cast<double>(tmpl[static_cast<std::size_t>(p)]) +
                                 spec.difficulty * kNoiseScale * rng.normal();
                dst[p] = static_cast<float>(std::clamp(v, 0.0, 1.0));
            }
            (is_train ? out.train.labels : out.test.labels)[static_cast<std::size_t>(row)] = c;
        }
    }
    return out;
}

LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path,
                        std::int64_t classes, std::string split) {
    if (classes < 1) throw Error("idx: classes must be >= 1");
    const auto img = read_file(images_path);
    if (img.size() < 4 || img[0] != 0 || img[1] != 0 || img[2] != 0x08 || img[3] != 3)
        throw Error("idx: bad magic in '" + images_path + "' (want ubyte rank-3 images)");
    const std::int64_t count = be_u32(img, 4, images_path);
    const std::int64_t h = be_u32(img, 8, images_path);
    const std::int64_t w = be_u32(img, 12, images_path);
    const std::size_t need = 16 + static_cast<std::size_t>(count * h * w);
    if (img.size() < need) throw Error("idx: unexpected end of file in '" + images_path + "'");
    if (img.size() > need) throw Error("idx: trailing bytes in '" + images_path + "'");

    const auto lab = read_file(labels_path);
    if (lab.size() < 4 || lab[0] != 0 || lab[1] != 0 || lab[2] != 0x08 || lab[3] != 1)
        throw Error("idx: bad magic in '" + labels_path + "' (want ubyte rank-1 labels)");
    const std::int64_t lcount = be_u32(lab, 4, labels_path);
    if (lcount != count)
        throw Error("idx: " + std::to_string(count) + " images vs " + std::to_string(lcount) +
                    " labels");
    if (lab.size() != 8 + static_cast<std::size_t>(lcount))
        throw Error(lab.size() < 8 + static_cast<std::size_t>(lcount)
                        ? "idx: unexpected end of file in '" + labels_path + "'"
                        : "idx: trailing bytes in '" + labels_path + "'");

    LabeledDataset ds;
    ds.images = Tensor::zeros({count, 1, h, w});
    ds.classes = classes;
    ds.split = std::move(split);
    float* px = ds.images.data<float>();
    for (std::int64_t i = 0; i < count * h * w; ++i)
        px[i] = static_cast<float>(img[16 + static_cast<std::size_t>(i)]) / 255.0f;
    ds.labels.resize(static_cast<std::size_t>(count));
    for (std::int64_t i = 0; i < count; ++i) {
        const std::int64_t y = lab[8 + static_cast<std::size_t>(i)];
        if (y >= classes)
            throw Error("idx: label " + std::to_string(y) + " out of range for " +
                        std::to_string(classes) + " classes");
        ds.labels[static_cast<std::size_t>(i)] = y;
    }
    return ds;
}

LabeledDataset load_cifar_binary(const std::vector<std::string>& files, std::int64_t classes,
                                 std::string split) {
    if (files.empty()) throw Error("cifar: no files given");
    if (classes < 1) throw Error("cifar: classes must be >= 1");
    constexpr std::int64_t kImageBytes = 3 * 32 * 32;

    std::vector<float> pixels;
    std::vector<std::int64_t> labels;
    for (const auto& path : files) {
        const auto buf = read_file(path);
        std::int64_t label_bytes;
        if (!buf.empty() && buf.size() % (kImageBytes + 1) == 0)
            label_bytes = 1;
        else if (!buf.empty() && buf.size() % (kImageBytes + 2) == 0)
            label_bytes = 2;  // coarse + fine; the fine label is used
        else
            throw Error("cifar: '" + path + "' is not a whole number of records");
        const std::int64_t record = kImageBytes + label_bytes;
        const auto n = static_cast<std::int64_t>(buf.size()) / record;
        for (std::int64_t r = 0; r < n; ++r) {
            const std::size_t base = static_cast<std::size_t>(r * record);
            const std::int64_t y = buf[base + static_cast<std::size_t>(label_bytes - 1)];
            if (y >= classes)
                throw Error("cifar: label " + std::to_string(y) + " out of range for " +
                            std::to_string(classes) + " classes");
            labels.push_back(y);
            for (std::int64_t p = 0; p < kImageBytes; ++p)
                pixels.push_back(
                    static_cast<float>(buf[base + static_cast<std::size_t>(label_bytes + p)]) /
                    255.0f);
        }
    }

    LabeledDataset ds;
    const auto count = static_cast<std::int64_t>(labels.size());
    ds.images = Tensor::zeros({count, 3, 32, 32});
    std::memcpy(ds.images.data<float>(), pixels.data(), pixels.size() * sizeof(float));
    ds.labels = std::move(labels);
    ds.classes = classes;
    ds.split = std::move(split);
    return ds;
}

BatchStream::BatchStream(const LabeledDataset& ds, std::int64_t batch_size, std::uint64_t seed,
                         std::int64_t epoch, bool augment)
    : ds_(&ds),
      batch_size_(batch_size),
      augment_(augment),
      rng_(Rng::fold(Rng::fold(seed, static_cast<std::uint64_t>(epoch)), 1)) {
    if (batch_size < 1 || batch_size > ds.count())
        throw Error("batches: batch size must be in 1.." + std::to_string(ds.count()));
    order_.resize(static_cast<std::size_t>(ds.count()));
    for (std::int64_t i = 0; i < ds.count(); ++i) order_[static_cast<std::size_t>(i)] = i;
    Rng shuffle(Rng::fold(Rng::fold(seed, static_cast<std::uint64_t>(epoch)), 0));
    for (std::int64_t i = ds.count() - 1; i > 0; --i)
        std::swap(order_[static_cast<std::size_t>(i)],
                  order_[static_cast<std::size_t>(shuffle.uniform_int(i + 1))]);
}

std::int64_t BatchStream::batches_per_epoch() const {
    return (ds_->count() + batch_size_ - 1) / batch_size_;
}

bool BatchStream::next(Batch& out) {
    if (pos_ >= order_.size()) return false;
    const auto take = std::min<std::size_t>(static_cast<std::size_t>(batch_size_),
                                            order_.size() - pos_);
    const auto& shape = ds_->images.shape();
    const std::int64_t c = shape[1], h = shape[2], w = shape[3];
    const std::int64_t pixels = c * h * w;
    out.images = Tensor::zeros({static_cast<std::int64_t>(take), c, h, w});
    out.labels.resize(take);
    float* dst = out.images.data<float>();
    const float* src = ds_->images.data<float>();
    for (std::size_t b = 0; b < take; ++b) {
        const std::int64_t row = order_[pos_ + b];
        out.labels[b] = ds_->labels[static_cast<std::size_t>(row)];
        const float* img = src + row * pixels;
        float* put = dst + static_cast<std::int64_t>(b) * pixels;
        if (!augment_) {
            std::memcpy(put, img, static_cast<std::size_t>(pixels) * sizeof(float));
            continue;
        }
        // Random crop out of a zero-padded frame, then an optional mirror.
        const std::int64_t dy = rng_.uniform_int(2 * kCropPad + 1) - kCropPad;
        const std::int64_t dx = rng_.uniform_int(2 * kCropPad + 1) - kCropPad;
        const bool flip = rng_.uniform_int(2) == 1;
        for (std::int64_t ch = 0; ch < c; ++ch)
            for (std::int64_t y = 0; y < h; ++y)
                for (std::int64_t x = 0; x < w; ++x) {
                    const std::int64_t sy = y + dy;
                    const std::int64_t sx = (flip ? w - 1 - x : x) + dx;
                    const float v = (sy < 0 || sy >= h || sx < 0 || sx >= w)
                                        ? 0.0f
                                        : img[(ch * h + sy) * w + sx];
                    put[(ch * h + y) * w + x] = v;
                }
    }
    pos_ += take;
    return true;
}

void save_dataset(const LabeledDataset& ds, const std::string& path) {
    CheckpointData cd;
    cd.arch = "dataset";
    cd.extra.emplace_back("kind", "dataset");
    cd.extra.emplace_back("classes", std::to_string(ds.classes));
    cd.extra.emplace_back("split", ds.split);
    Tensor labels = Tensor::zeros({ds.count()});
    for (std::int64_t i = 0; i < ds.count(); ++i)
        labels.data<float>()[i] = static_cast<float>(ds.labels[static_cast<std::size_t>(i)]);
    cd.tensors.push_back({"images", ds.images});
    cd.tensors.push_back({"labels", labels});
    save_checkpoint(cd, path);
}

LabeledDataset load_dataset(const std::string& path) {
    const CheckpointData cd = load_checkpoint(path);
    const std::string* kind = cd.find_extra("kind");
    if (!kind || *kind != "dataset")
        throw Error("checkpoint: '" + path + "' is not a dataset file");
    const std::string* classes = cd.find_extra("classes");
    const std::string* split = cd.find_extra("split");
    if (!classes || !split) throw Error("checkpoint: dataset header incomplete in '" + path + "'");

    LabeledDataset ds;
    ds.classes = std::stoll(*classes);
    ds.split = *split;
    const nn::NamedTensor* images = nullptr;
    const nn::NamedTensor* labels = nullptr;
    for (const auto& t : cd.tensors) {
        if (t.name == "images") images = &t;
        if (t.name == "labels") labels = &t;
    }
    if (!images || !labels || images->tensor.ndim() != 4 || labels->tensor.ndim() != 1)
        throw Error("checkpoint: dataset tensors malformed in '" + path + "'");
    if (images->tensor.shape()[0] != labels->tensor.shape()[0])
        throw Error("checkpoint: dataset image/label counts differ in '" + path + "'");
    ds.images = images->tensor;
    ds.labels.resize(static_cast<std::size_t>(labels->tensor.numel()));
    for (std::int64_t i = 0; i < labels->tensor.numel(); ++i) {
        const double v = labels->tensor.data<float>()[i];
        const auto y = static_cast<std::int64_t>(v);
        if (static_cast<double>(y) != v || y < 0 || y >= ds.classes)
            throw Error("checkpoint: dataset label " + std::to_string(v) + " invalid in '" + path +
                        "'");
        ds.labels[static_cast<std::size_t>(i)] = y;
    }
    return ds;
}

}  // namespace dfpt::data
