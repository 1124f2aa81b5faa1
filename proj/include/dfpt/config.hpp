#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dfpt/data.hpp"
#include "dfpt/prompt_path.hpp"
#include "dfpt/trainer.hpp"

namespace dfpt::config {

// Where a run gets its train/test splits from.
enum class DataSource : std::uint8_t { synth, files, idx, cifar };

DataSource parse_data_source(const std::string& name);
std::string data_source_name(DataSource s);

struct DataConfig {
    DataSource source = DataSource::synth;
    data::SynthSpec synth;  // used when source = synth
    // source = files: dataset containers written by save_dataset.
    std::string train_path, test_path;
    // source = idx: big-endian image/label file pairs.
    std::string train_images, train_labels, test_images, test_labels;
    // source = cifar: record-per-row binary batches.
    std::vector<std::string> train_files, test_files;
    std::int64_t classes = 10;  // class count for idx/cifar sources
};

// Fully materialised run description: every field has a default, the rendered
// form writes all of them back out, and parsing rejects unknown keys.
struct RunConfig {
    train::TrainConfig train;
    std::string teacher_arch = "tiny-resnet-T";
    std::string student_arch = "tiny-resnet-S";
    PromptConfig prompt;
    DataConfig data;
};

// `key = value` lines grouped under one-level [sections]; '#' starts a
// comment. Unknown sections/keys, duplicate keys and malformed values throw.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::string& path);

// Serialises every field (defaults included) so a run directory carries the
// complete configuration. parse(render(c)) reproduces c exactly.
std::string render_run_config(const RunConfig& c);

// Applies a command-line prompt token such as "r1=4,4,4,4", "r2=0.5" or
// "k=3,5,7" on top of an existing prompt configuration.
void apply_prompt_token(PromptConfig& p, const std::string& token);

// Materialises the configured dataset pair.
data::SynthData resolve_data(const DataConfig& c);

}  // namespace dfpt::config
