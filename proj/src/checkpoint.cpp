#include "dfpt/checkpoint.hpp"

#include <cstring>
#include <fstream>

namespace dfpt {

namespace {

constexpr char kMagic[4] = {'D', 'F', 'P', 'T'};
constexpr std::uint32_t kVersion = 1;

struct Writer {
    std::vector<char> buf;

    void raw(const void* p, std::size_t n) {
        const char* c = static_cast<const char*>(p);
        buf.insert(buf.end(), c, c + n);
    }
    void u8(std::uint8_t v) { raw(&v, 1); }
    void u32(std::uint32_t v) { raw(&v, 4); }
    void u64(std::uint64_t v) { raw(&v, 8); }
    void f64(double v) { raw(&v, 8); }
    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        raw(s.data(), s.size());
    }
};

struct Reader {
    const char* p;
    std::size_t n;
    std::size_t off = 0;

    void raw(void* out, std::size_t k) {
        if (off + k > n) throw Error("checkpoint: unexpected end of file");
        std::memcpy(out, p + off, k);
        off += k;
    }
    std::uint8_t u8() {
        std::uint8_t v;
        raw(&v, 1);
        return v;
    }
    std::uint32_t u32() {
        std::uint32_t v;
        raw(&v, 4);
        return v;
    }
    std::uint64_t u64() {
        std::uint64_t v;
        raw(&v, 8);
        return v;
    }
    double f64() {
        double v;
        raw(&v, 8);
        return v;
    }
    std::string str() {
        const std::uint32_t k = u32();
        if (off + k > n) throw Error("checkpoint: unexpected end of file");
        std::string s(p + off, k);
        off += k;
        return s;
    }
};

}  // namespace

const std::string* CheckpointData::find_extra(const std::string& key) const {
    for (const auto& kv : extra)
        if (kv.first == key) return &kv.second;
    return nullptr;
}

void save_checkpoint(const CheckpointData& data, const std::string& path) {
    Writer w;
    w.raw(kMagic, 4);
    w.u32(kVersion);
    w.str(data.arch);
    w.u64(data.seed);
    w.u32(static_cast<std::uint32_t>(data.extra.size()));
    for (const auto& kv : data.extra) {
        w.str(kv.first);
        w.str(kv.second);
    }
    w.u32(static_cast<std::uint32_t>(data.metrics.size()));
    for (const auto& m : data.metrics) {
        w.str(m.first);
        w.f64(m.second);
    }
    w.u32(static_cast<std::uint32_t>(data.tensors.size()));
    for (const auto& nt : data.tensors) {
        const Tensor& t = nt.tensor;
        if (!t.defined()) throw Error("checkpoint: undefined tensor '" + nt.name + "'");
        w.str(nt.name);
        w.u8(static_cast<std::uint8_t>(t.dtype()));
        const Shape& s = t.shape();
        w.u32(static_cast<std::uint32_t>(s.size()));
        for (auto d : s) w.u64(static_cast<std::uint64_t>(d));
        const std::uint64_t bytes = static_cast<std::uint64_t>(t.numel()) * dtype_size(t.dtype());
        w.u64(bytes);
        w.raw(t.impl()->storage->data(), bytes);
    }

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("checkpoint: cannot open '" + path + "' for writing");
    f.write(w.buf.data(), static_cast<std::streamsize>(w.buf.size()));
    if (!f) throw Error("checkpoint: write failed for '" + path + "'");
}

CheckpointData load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("checkpoint: cannot open '" + path + "'");
    std::vector<char> buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

    Reader r{buf.data(), buf.size()};
    char magic[4];
    r.raw(magic, 4);
    if (std::memcmp(magic, kMagic, 4) != 0) throw Error("checkpoint: bad magic in '" + path + "'");
    const std::uint32_t version = r.u32();
    if (version != kVersion)
        throw Error("checkpoint: unsupported version " + std::to_string(version));

    CheckpointData data;
    data.arch = r.str();
    data.seed = r.u64();
    const std::uint32_t ne = r.u32();
    for (std::uint32_t i = 0; i < ne; ++i) {
        std::string k = r.str();
        std::string v = r.str();
        data.extra.emplace_back(std::move(k), std::move(v));
    }
    const std::uint32_t nm = r.u32();
    for (std::uint32_t i = 0; i < nm; ++i) {
        std::string k = r.str();
        const double v = r.f64();
        data.metrics.emplace_back(std::move(k), v);
    }
    const std::uint32_t nt = r.u32();
    for (std::uint32_t i = 0; i < nt; ++i) {
        std::string name = r.str();
        const std::uint8_t dt = r.u8();
        if (dt > 1) throw Error("checkpoint: bad dtype byte for '" + name + "'");
        const std::uint32_t ndim = r.u32();
        Shape shape(ndim);
        for (auto& d : shape) d = static_cast<std::int64_t>(r.u64());
        const std::uint64_t bytes = r.u64();
        Tensor t = Tensor::zeros(shape, static_cast<DType>(dt));
        if (bytes != static_cast<std::uint64_t>(t.numel()) * dtype_size(t.dtype()))
            throw Error("checkpoint: byte count does not match shape for '" + name + "'");
        r.raw(t.impl()->storage->data(), bytes);
        data.tensors.push_back({std::move(name), std::move(t)});
    }
    if (r.off != buf.size()) throw Error("checkpoint: trailing bytes in '" + path + "'");
    return data;
}

void copy_stored_tensors(const CheckpointData& data, std::vector<nn::NamedTensor> live,
                         const std::string& path) {
    if (live.size() != data.tensors.size())
        throw Error("checkpoint: '" + path + "' holds " + std::to_string(data.tensors.size()) +
                    " tensors, target has " + std::to_string(live.size()));
    for (const auto& rec : data.tensors) {
        nn::NamedTensor* dst = nullptr;
        for (auto& s : live)
            if (s.name == rec.name) {
                dst = &s;
                break;
            }
        if (!dst) throw Error("checkpoint: target has no tensor named '" + rec.name + "'");
        if (dst->tensor.shape() != rec.tensor.shape() || dst->tensor.dtype() != rec.tensor.dtype())
            throw Error("checkpoint: shape mismatch for '" + rec.name + "'");
        std::memcpy(dst->tensor.impl()->storage->data(), rec.tensor.impl()->storage->data(),
                    dst->tensor.impl()->storage->size());
    }
}

namespace {

std::int64_t extra_int(const CheckpointData& data, const std::string& key) {
    const std::string* v = data.find_extra(key);
    if (!v) throw Error("checkpoint: missing '" + key + "' entry");
    return std::stoll(*v);
}

}  // namespace

void save_model(const models::StagedModel& m, const std::string& path,
                const std::vector<std::pair<std::string, double>>& metrics,
                const std::vector<std::pair<std::string, std::string>>& extra) {
    CheckpointData data;
    data.arch = m.spec.name;
    data.seed = m.seed;
    data.extra.emplace_back("classes", std::to_string(m.spec.classes));
    data.extra.emplace_back("in_channels", std::to_string(m.spec.in_channels));
    for (const auto& kv : extra) data.extra.push_back(kv);
    data.metrics = metrics;
    data.tensors = m.named_state();
    save_checkpoint(data, path);
}

models::StagedModel load_model(const std::string& path) {
    const CheckpointData data = load_checkpoint(path);
    models::StagedModel m = models::build(
        models::arch_spec(data.arch, extra_int(data, "classes"), extra_int(data, "in_channels")),
        data.seed);
    copy_stored_tensors(data, m.named_state(), path);
    return m;
}

void load_into(models::StagedModel& m, const std::string& path) {
    const CheckpointData data = load_checkpoint(path);
    if (data.arch != m.spec.name)
        throw Error("checkpoint: arch mismatch: file has '" + data.arch + "', model is '" +
                    m.spec.name + "'");
    copy_stored_tensors(data, m.named_state(), path);
}

}  // namespace dfpt
