#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "dfpt/models.hpp"
#include "dfpt/nn.hpp"
#include "dfpt/tensor.hpp"

namespace dfpt {

// On-disk container: magic "DFPT", u32 version, arch string, u64 seed, a
// free-form key/value section, named f64 metrics, then length-prefixed tensor
// records (name, dtype, dims, raw little-endian bytes).
struct CheckpointData {
    std::string arch;
    std::uint64_t seed = 0;
    std::vector<std::pair<std::string, std::string>> extra;
    std::vector<std::pair<std::string, double>> metrics;
    std::vector<nn::NamedTensor> tensors;

    const std::string* find_extra(const std::string& key) const;
};

void save_checkpoint(const CheckpointData& data, const std::string& path);
CheckpointData load_checkpoint(const std::string& path);

// Copies every stored tensor into the equally named live tensor (shared
// storage handles, so the owning module sees the bytes). Counts, names,
// shapes and dtypes must match exactly.
void copy_stored_tensors(const CheckpointData& data, std::vector<nn::NamedTensor> live,
                         const std::string& path);

// Whole-model persistence: stores every parameter and buffer by name plus the
// arch/classes/seed needed to rebuild the skeleton.
void save_model(const models::StagedModel& m, const std::string& path,
                const std::vector<std::pair<std::string, double>>& metrics = {},
                const std::vector<std::pair<std::string, std::string>>& extra = {});
models::StagedModel load_model(const std::string& path);
// Copies stored weights into an existing model; arch names and every tensor
// shape must match.
void load_into(models::StagedModel& m, const std::string& path);

}  // namespace dfpt
