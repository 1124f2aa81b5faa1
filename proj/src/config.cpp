#include "dfpt/config.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include "dfpt/tensor.hpp"

namespace dfpt::config {
namespace {

std::string trim(const std::string& s) {
    size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::int64_t parse_i64(const std::string& v, const std::string& key) {
    const std::string t = trim(v);
    if (!t.empty()) {
        char* end = nullptr;
        errno = 0;
        long long x = std::strtoll(t.c_str(), &end, 10);
        if (errno == 0 && end == t.c_str() + t.size()) return x;
    }
    throw Error("config: bad integer '" + v + "' for key '" + key + "'");
}

double parse_f64(const std::string& v, const std::string& key) {
    const std::string t = trim(v);
    if (!t.empty()) {
        char* end = nullptr;
        double x = std::strtod(t.c_str(), &end);
        if (end == t.c_str() + t.size()) return x;
    }
    throw Error("config: bad number '" + v + "' for key '" + key + "'");
}

bool parse_bool(const std::string& v, const std::string& key) {
    const std::string t = trim(v);
    if (t == "true") return true;
    if (t == "false") return false;
    throw Error("config: bad boolean '" + v + "' for key '" + key + "' (want true or false)");
}

std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : v) {
        if (c == ',') {
            out.push_back(trim(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    cur = trim(cur);
    if (!cur.empty() || !out.empty()) out.push_back(cur);
    return out;
}

std::vector<std::int64_t> parse_i64_list(const std::string& v, const std::string& key) {
    std::vector<std::int64_t> out;
    for (const std::string& cell : split_list(v)) out.push_back(parse_i64(cell, key));
    return out;
}

std::vector<std::string> parse_str_list(const std::string& v) {
    std::vector<std::string> out;
    for (const std::string& cell : split_list(v)) {
        if (!cell.empty()) out.push_back(cell);
    }
    return out;
}

// Shortest decimal form that parses back to the same double.
std::string fmt_double(double v) {
    char buf[40];
    for (int prec = 15; prec <= 17; ++prec) {
        std::snprintf(buf, sizeof(buf), "%.*g", prec, v);
        if (std::strtod(buf, nullptr) == v) return buf;
    }
    return buf;
}

std::string fmt_i64_list(const std::vector<std::int64_t>& v) {
    std::string out;
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(v[i]);
    }
    return out;
}

std::string fmt_str_list(const std::vector<std::string>& v) {
    std::string out;
    for (size_t i = 0; i < v.size(); ++i) {
        if (i) out += ",";
        out += v[i];
    }
    return out;
}

GradFlow parse_grad_flow(const std::string& v, const std::string& key) {
    const std::string t = trim(v);
    if (t == "through-frozen") return GradFlow::through_frozen;
    if (t == "detached-base") return GradFlow::detached_base;
    throw Error("config: bad value '" + v + "' for key '" + key +
                "' (want through-frozen or detached-base)");
}

std::string grad_flow_name(GradFlow f) {
    return f == GradFlow::through_frozen ? "through-frozen" : "detached-base";
}

// Routes one parsed `section.key = value` into the config; false = unknown.
bool assign(RunConfig& c, const std::string& sec, const std::string& key,
            const std::string& val) {
    const std::string full = sec + "." + key;
    if (sec == "train") {
        auto& t = c.train;
        if (key == "method") t.method = train::parse_method(trim(val));
        else if (key == "lambda") t.lambda = parse_f64(val, full);
        else if (key == "alpha") t.alpha = parse_f64(val, full);
        else if (key == "beta") t.beta = parse_f64(val, full);
        else if (key == "tau") t.tau = parse_f64(val, full);
        else if (key == "epochs") t.epochs = parse_i64(val, full);
        else if (key == "batch") t.batch = parse_i64(val, full);
        else if (key == "lr") t.lr = parse_f64(val, full);
        else if (key == "momentum") t.momentum = parse_f64(val, full);
        else if (key == "weight_decay") t.weight_decay = parse_f64(val, full);
        else if (key == "milestones") t.milestones = parse_i64_list(val, full);
        else if (key == "lr_decay") t.lr_decay = parse_f64(val, full);
        else if (key == "teacher_lr_scale") t.teacher_lr_scale = parse_f64(val, full);
        else if (key == "seed") t.seed = static_cast<std::uint64_t>(parse_i64(val, full));
        else if (key == "tau_compensate") t.tau_compensate = parse_bool(val, full);
        else if (key == "grad_flow") t.grad_flow = parse_grad_flow(val, full);
        else if (key == "augment") t.augment = parse_bool(val, full);
        else return false;
        return true;
    }
    if (sec == "model") {
        if (key == "teacher_arch") c.teacher_arch = trim(val);
        else if (key == "student_arch") c.student_arch = trim(val);
        else return false;
        return true;
    }
    if (sec == "prompt") {
        auto& p = c.prompt;
        if (key == "r1") p.r1 = parse_i64_list(val, full);
        else if (key == "r2") p.r2 = parse_f64(val, full);
        else if (key == "kernels") p.kernels = parse_i64_list(val, full);
        else if (key == "insert_stages") p.insert_stages = parse_i64_list(val, full);
        else if (key == "blocks_per_stage") p.blocks_per_stage = parse_i64(val, full);
        else if (key == "fusion_convs") p.fusion_convs = parse_i64(val, full);
        else if (key == "use_fusion") p.use_fusion = parse_bool(val, full);
        else if (key == "copy_head") p.copy_head = parse_bool(val, full);
        else return false;
        return true;
    }
    if (sec == "data") {
        auto& d = c.data;
        if (key == "source") d.source = parse_data_source(trim(val));
        else if (key == "classes") {
            d.classes = parse_i64(val, full);
            d.synth.classes = d.classes;
        } else if (key == "per_class") d.synth.per_class = parse_i64(val, full);
        else if (key == "size") d.synth.size = parse_i64(val, full);
        else if (key == "channels") d.synth.channels = parse_i64(val, full);
        else if (key == "difficulty") d.synth.difficulty = parse_f64(val, full);
        else if (key == "seed") d.synth.seed = static_cast<std::uint64_t>(parse_i64(val, full));
        else if (key == "train_path") d.train_path = trim(val);
        else if (key == "test_path") d.test_path = trim(val);
        else if (key == "train_images") d.train_images = trim(val);
        else if (key == "train_labels") d.train_labels = trim(val);
        else if (key == "test_images") d.test_images = trim(val);
        else if (key == "test_labels") d.test_labels = trim(val);
        else if (key == "train_files") d.train_files = parse_str_list(val);
        else if (key == "test_files") d.test_files = parse_str_list(val);
        else return false;
        return true;
    }
    return false;
}

}  // namespace

DataSource parse_data_source(const std::string& name) {
    if (name == "synth") return DataSource::synth;
    if (name == "files") return DataSource::files;
    if (name == "idx") return DataSource::idx;
    if (name == "cifar") return DataSource::cifar;
    throw Error("config: unknown data source '" + name + "' (want synth, files, idx or cifar)");
}

std::string data_source_name(DataSource s) {
    switch (s) {
        case DataSource::synth: return "synth";
        case DataSource::files: return "files";
        case DataSource::idx: return "idx";
        case DataSource::cifar: return "cifar";
    }
    throw Error("config: bad data source value");
}

RunConfig parse_run_config(const std::string& text) {
    RunConfig c;
    std::string section;
    std::set<std::string> seen;
    std::istringstream in(text);
    std::string raw;
    int lineno = 0;
    while (std::getline(in, raw)) {
        ++lineno;
        const size_t hash = raw.find('#');
        if (hash != std::string::npos) raw.erase(hash);
        const std::string line = trim(raw);
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw Error("config: malformed section header at line " + std::to_string(lineno));
            section = trim(line.substr(1, line.size() - 2));
            if (section != "train" && section != "model" && section != "prompt" &&
                section != "data")
                throw Error("config: unknown section '" + section + "'");
            continue;
        }
        const size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw Error("config: expected 'key = value' at line " + std::to_string(lineno));
        const std::string key = trim(line.substr(0, eq));
        const std::string val = line.substr(eq + 1);
        if (key.empty())
            throw Error("config: empty key at line " + std::to_string(lineno));
        if (section.empty())
            throw Error("config: key '" + key + "' appears before any [section]");
        const std::string full = section + "." + key;
        if (!seen.insert(full).second) throw Error("config: duplicate key '" + full + "'");
        if (!assign(c, section, key, val)) throw Error("config: unknown key '" + full + "'");
    }
    return c;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("config: cannot open '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse_run_config(buf.str());
}

std::string render_run_config(const RunConfig& c) {
    const auto& t = c.train;
    const auto& p = c.prompt;
    const auto& d = c.data;
    std::string out;
    out += "[train]\n";
    out += "method = " + train::method_name(t.method) + "\n";
    out += "lambda = " + fmt_double(t.lambda) + "\n";
    out += "alpha = " + fmt_double(t.alpha) + "\n";
    out += "beta = " + fmt_double(t.beta) + "\n";
    out += "tau = " + fmt_double(t.tau) + "\n";
    out += "epochs = " + std::to_string(t.epochs) + "\n";
    out += "batch = " + std::to_string(t.batch) + "\n";
    out += "lr = " + fmt_double(t.lr) + "\n";
    out += "momentum = " + fmt_double(t.momentum) + "\n";
    out += "weight_decay = " + fmt_double(t.weight_decay) + "\n";
    out += "milestones = " + fmt_i64_list(t.milestones) + "\n";
    out += "lr_decay = " + fmt_double(t.lr_decay) + "\n";
    out += "teacher_lr_scale = " + fmt_double(t.teacher_lr_scale) + "\n";
    out += "seed = " + std::to_string(t.seed) + "\n";
    out += std::string("tau_compensate = ") + (t.tau_compensate ? "true" : "false") + "\n";
    out += "grad_flow = " + grad_flow_name(t.grad_flow) + "\n";
    out += std::string("augment = ") + (t.augment ? "true" : "false") + "\n";
    out += "\n[model]\n";
    out += "teacher_arch = " + c.teacher_arch + "\n";
    out += "student_arch = " + c.student_arch + "\n";
    out += "\n[prompt]\n";
    out += "r1 = " + fmt_i64_list(p.r1) + "\n";
    out += "r2 = " + fmt_double(p.r2) + "\n";
    out += "kernels = " + fmt_i64_list(p.kernels) + "\n";
    out += "insert_stages = " + fmt_i64_list(p.insert_stages) + "\n";
    out += "blocks_per_stage = " + std::to_string(p.blocks_per_stage) + "\n";
    out += "fusion_convs = " + std::to_string(p.fusion_convs) + "\n";
    out += std::string("use_fusion = ") + (p.use_fusion ? "true" : "false") + "\n";
    out += std::string("copy_head = ") + (p.copy_head ? "true" : "false") + "\n";
    out += "\n[data]\n";
    out += "source = " + data_source_name(d.source) + "\n";
    out += "classes = " + std::to_string(d.classes) + "\n";
    out += "per_class = " + std::to_string(d.synth.per_class) + "\n";
    out += "size = " + std::to_string(d.synth.size) + "\n";
    out += "channels = " + std::to_string(d.synth.channels) + "\n";
    out += "difficulty = " + fmt_double(d.synth.difficulty) + "\n";
    out += "seed = " + std::to_string(d.synth.seed) + "\n";
    out += "train_path = " + d.train_path + "\n";
    out += "test_path = " + d.test_path + "\n";
    out += "train_images = " + d.train_images + "\n";
    out += "train_labels = " + d.train_labels + "\n";
    out += "test_images = " + d.test_images + "\n";
    out += "test_labels = " + d.test_labels + "\n";
    out += "train_files = " + fmt_str_list(d.train_files) + "\n";
    out += "test_files = " + fmt_str_list(d.test_files) + "\n";
    return out;
}

void apply_prompt_token(PromptConfig& p, const std::string& token) {
    const size_t eq = token.find('=');
    if (eq == std::string::npos)
        throw Error("config: bad prompt token '" + token + "' (want name=value)");
    const std::string name = trim(token.substr(0, eq));
    const std::string val = token.substr(eq + 1);
    if (name == "r1") p.r1 = parse_i64_list(val, "prompt.r1");
    else if (name == "r2") p.r2 = parse_f64(val, "prompt.r2");
    else if (name == "k" || name == "kernels") p.kernels = parse_i64_list(val, "prompt.kernels");
    else if (name == "stages") p.insert_stages = parse_i64_list(val, "prompt.insert_stages");
    else if (name == "blocks") p.blocks_per_stage = parse_i64(val, "prompt.blocks_per_stage");
    else if (name == "fusion_convs") p.fusion_convs = parse_i64(val, "prompt.fusion_convs");
    else if (name == "fusion") p.use_fusion = parse_bool(val, "prompt.use_fusion");
    else if (name == "copy_head") p.copy_head = parse_bool(val, "prompt.copy_head");
    else throw Error("config: unknown prompt key '" + name + "'");
}

data::SynthData resolve_data(const DataConfig& c) {
    switch (c.source) {
        case DataSource::synth:
            return data::gen_synth(c.synth);
        case DataSource::files: {
            if (c.train_path.empty() || c.test_path.empty())
                throw Error("config: data source 'files' needs train_path and test_path");
            return {data::load_dataset(c.train_path), data::load_dataset(c.test_path)};
        }
        case DataSource::idx: {
            if (c.train_images.empty() || c.train_labels.empty() || c.test_images.empty() ||
                c.test_labels.empty())
                throw Error(
                    "config: data source 'idx' needs train_images, train_labels, test_images "
                    "and test_labels");
            return {data::load_idx(c.train_images, c.train_labels, c.classes, "train"),
                    data::load_idx(c.test_images, c.test_labels, c.classes, "test")};
        }
        case DataSource::cifar: {
            if (c.train_files.empty() || c.test_files.empty())
                throw Error("config: data source 'cifar' needs train_files and test_files");
            return {data::load_cifar_binary(c.train_files, c.classes, "train"),
                    data::load_cifar_binary(c.test_files, c.classes, "test")};
        }
    }
    throw Error("config: bad data source value");
}

}  // namespace dfpt::config
