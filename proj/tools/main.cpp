// Command-line front end: experiment orchestration, accounting reports and
// plot emission. Exit codes: 0 success, 2 usage error, 3 input mismatch,
// 4 runtime failure.
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "dfpt/analysis.hpp"
#include "dfpt/autograd.hpp"
#include "dfpt/checkpoint.hpp"
#include "dfpt/config.hpp"
#include "dfpt/data.hpp"
#include "dfpt/hash.hpp"
#include "dfpt/models.hpp"
#include "dfpt/prompt_path.hpp"
#include "dfpt/svg.hpp"
#include "dfpt/tensor.hpp"
#include "dfpt/trainer.hpp"

namespace fs = std::filesystem;
using namespace dfpt;

namespace {

// Thrown for problems the user fixes by changing flags or the config file.
struct UsageError {
    std::string msg;
};
// Thrown when inputs disagree with each other (arch vs checkpoint, dataset vs
// model, malformed input files).
struct MismatchError {
    std::string msg;
};

std::string fmt4(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.4f", v);
    return buf;
}

std::string fmt_g6(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6g", v);
    return buf;
}

// Relative run directories resolve against DFPT_RUN_ROOT when it is set.
fs::path resolve_out(const std::string& out) {
    fs::path p(out);
    if (p.is_relative()) {
        if (const char* root = std::getenv("DFPT_RUN_ROOT"); root && *root)
            p = fs::path(root) / p;
    }
    return p;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cli: cannot write '" + path.string() + "'");
    out << text;
}

// Content ledger making a run directory self-describing: the command, the
// resolved-config digest and one digest per binary input file.
struct InputLedger {
    std::string text;

    explicit InputLedger(const std::string& command) { text = "command = " + command + "\n"; }
    void add_content(const std::string& label, const std::string& content) {
        text += label + " = sha256:" + sha256_hex(content) + "\n";
    }
    void add_file(const std::string& label, const std::string& path) {
        text += label + " = sha256:" + sha256_file(path) + "  " + path + "\n";
    }
};

// Hashes whatever file inputs the data source references.
void ledger_data_files(InputLedger& ledger, const config::DataConfig& d) {
    using config::DataSource;
    switch (d.source) {
        case DataSource::synth: break;
        case DataSource::files:
            ledger.add_file("data.train_path", d.train_path);
            ledger.add_file("data.test_path", d.test_path);
            break;
        case DataSource::idx:
            ledger.add_file("data.train_images", d.train_images);
            ledger.add_file("data.train_labels", d.train_labels);
            ledger.add_file("data.test_images", d.test_images);
            ledger.add_file("data.test_labels", d.test_labels);
            break;
        case DataSource::cifar:
            for (size_t i = 0; i < d.train_files.size(); ++i)
                ledger.add_file("data.train_files[" + std::to_string(i) + "]", d.train_files[i]);
            for (size_t i = 0; i < d.test_files.size(); ++i)
                ledger.add_file("data.test_files[" + std::to_string(i) + "]", d.test_files[i]);
            break;
    }
}

config::RunConfig load_config_or_usage(const std::string& path) {
    try {
        return config::load_run_config(path);
    } catch (const Error& e) {
        throw UsageError{e.what()};
    }
}

void validate_or_usage(const config::RunConfig& cfg, bool needs_student) {
    try {
        train::validate(cfg.train);
        models::arch_spec(cfg.teacher_arch, cfg.data.classes);
        if (needs_student) models::arch_spec(cfg.student_arch, cfg.data.classes);
    } catch (const Error& e) {
        throw UsageError{e.what()};
    }
}

data::SynthData resolve_data_classified(const config::DataConfig& d) {
    try {
        return config::resolve_data(d);
    } catch (const Error& e) {
        // missing paths in the config are usage; unreadable/malformed files
        // are input problems
        if (d.source == config::DataSource::synth) throw UsageError{e.what()};
        std::string what = e.what();
        if (what.rfind("config:", 0) == 0) throw UsageError{what};
        throw MismatchError{what};
    }
}

models::StagedModel load_model_or_mismatch(const std::string& path) {
    try {
        return load_model(path);
    } catch (const Error& e) {
        throw MismatchError{e.what()};
    }
}

double final_top1(const train::MetricsLog& log, const std::string& split) {
    double v = std::numeric_limits<double>::quiet_NaN();
    for (const auto& r : log.rows)
        if (r.split == split) v = r.top1;
    return v;
}

// ---------------------------------------------------------------- pretrain

struct PretrainArgs {
    std::string config, out;
    std::optional<std::int64_t> seed;
};

int cmd_pretrain(const PretrainArgs& a) {
    config::RunConfig cfg = load_config_or_usage(a.config);
    cfg.train.method = train::Method::ce_only;  // pretraining is plain CE
    if (a.seed) cfg.train.seed = static_cast<std::uint64_t>(*a.seed);
    validate_or_usage(cfg, false);
    data::SynthData ds = resolve_data_classified(cfg.data);

    const fs::path out = resolve_out(a.out);
    fs::create_directories(out);
    const std::string resolved = config::render_run_config(cfg);
    write_text(out / "resolved.cfg", resolved);
    InputLedger ledger("pretrain");
    ledger.add_content("config", resolved);
    ledger_data_files(ledger, cfg.data);
    write_text(out / "inputs.txt", ledger.text);

    train::MetricsLog log;
    models::StagedModel teacher =
        train::pretrain_teacher(cfg.teacher_arch, ds.train, ds.test, cfg.train, &log);
    log.save_csv((out / "metrics.csv").string());
    const double train_top1 = final_top1(log, "train");
    const double test_top1 = final_top1(log, "test");
    save_model(teacher, (out / "teacher.ckpt").string(),
               {{"train_top1", train_top1}, {"test_top1", test_top1}},
               {{"command", "pretrain"}});
    std::printf("pretrain done: arch=%s epochs=%lld final test top1=%s -> %s\n",
                cfg.teacher_arch.c_str(), static_cast<long long>(cfg.train.epochs),
                fmt4(test_top1).c_str(), out.string().c_str());
    return 0;
}

// ----------------------------------------------------------------- distill

struct DistillArgs {
    std::string config, teacher, method, out;
    std::optional<double> teacher_lr_scale;
    std::optional<std::int64_t> seed;
};

int cmd_distill(const DistillArgs& a) {
    config::RunConfig cfg = load_config_or_usage(a.config);
    try {
        cfg.train.method = train::parse_method(a.method);
    } catch (const Error& e) {
        throw UsageError{e.what()};
    }
    if (cfg.train.method == train::Method::ce_only)
        throw UsageError{"distill: method ce-only is not a distillation method; use pretrain"};
    if (a.teacher_lr_scale) cfg.train.teacher_lr_scale = *a.teacher_lr_scale;
    if (a.seed) cfg.train.seed = static_cast<std::uint64_t>(*a.seed);
    validate_or_usage(cfg, true);

    models::StagedModel teacher = load_model_or_mismatch(a.teacher);
    if (teacher.spec.name != cfg.teacher_arch)
        throw MismatchError{"distill: config expects teacher arch '" + cfg.teacher_arch +
                            "' but checkpoint '" + a.teacher + "' holds '" + teacher.spec.name +
                            "'"};
    data::SynthData ds = resolve_data_classified(cfg.data);
    if (teacher.spec.classes != ds.train.classes)
        throw MismatchError{"distill: teacher checkpoint has " +
                            std::to_string(teacher.spec.classes) + " classes, dataset has " +
                            std::to_string(ds.train.classes)};

    const fs::path out = resolve_out(a.out);
    fs::create_directories(out);
    const std::string resolved = config::render_run_config(cfg);
    write_text(out / "resolved.cfg", resolved);
    InputLedger ledger("distill");
    ledger.add_content("config", resolved);
    ledger.add_file("teacher", a.teacher);
    ledger_data_files(ledger, cfg.data);
    write_text(out / "inputs.txt", ledger.text);

    train::RunArtifacts arts =
        train::run(cfg.train, cfg.student_arch, &teacher, ds.train, ds.test, cfg.prompt);
    arts.log.save_csv((out / "metrics.csv").string());
    const double test_top1 = final_top1(arts.log, "test");
    const std::string method = train::method_name(cfg.train.method);
    save_model(arts.student, (out / "student.ckpt").string(), {{"test_top1", test_top1}},
               {{"command", "distill"}, {"method", method}});
    if (arts.dual) {
        save_prompt_path(*arts.dual, (out / "prompt_path.ckpt").string(),
                         {{"test_top1", test_top1}}, {{"method", method}});
        if (cfg.train.method == train::Method::dfpt_kd_dagger)
            save_model(arts.dual->teacher(), (out / "teacher_tuned.ckpt").string(), {},
                       {{"command", "distill"}, {"method", method}});
    }
    std::printf("distill done: method=%s student=%s final test top1=%s -> %s\n", method.c_str(),
                cfg.student_arch.c_str(), fmt4(test_top1).c_str(), out.string().c_str());
    return 0;
}

// ----------------------------------------------------------------- gendata

struct GendataArgs {
    std::int64_t classes = 10, per_class = 200, size = 16, channels = 3;
    double difficulty = 1.0;
    std::int64_t seed = 0;
    std::string out;
};

int cmd_gendata(const GendataArgs& a) {
    data::SynthSpec spec;
    spec.classes = a.classes;
    spec.per_class = a.per_class;
    spec.size = a.size;
    spec.channels = a.channels;
    spec.difficulty = a.difficulty;
    spec.seed = static_cast<std::uint64_t>(a.seed);
    data::SynthData ds;
    try {
        ds = data::gen_synth(spec);
    } catch (const Error& e) {
        throw UsageError{e.what()};
    }
    const fs::path out = resolve_out(a.out);
    fs::create_directories(out);
    const std::string train_path = (out / "train.bin").string();
    const std::string test_path = (out / "test.bin").string();
    data::save_dataset(ds.train, train_path);
    data::save_dataset(ds.test, test_path);
    std::string manifest;
    manifest += "classes = " + std::to_string(spec.classes) + "\n";
    manifest += "per_class = " + std::to_string(spec.per_class) + "\n";
    manifest += "size = " + std::to_string(spec.size) + "\n";
    manifest += "channels = " + std::to_string(spec.channels) + "\n";
    manifest += "difficulty = " + fmt_g6(spec.difficulty) + "\n";
    manifest += "seed = " + std::to_string(a.seed) + "\n";
    manifest += "train.bin = sha256:" + sha256_file(train_path) + "\n";
    manifest += "test.bin = sha256:" + sha256_file(test_path) + "\n";
    write_text(out / "gendata.txt", manifest);
    std::printf("gendata done: train=%lld test=%lld -> %s\n",
                static_cast<long long>(ds.train.count()), static_cast<long long>(ds.test.count()),
                out.string().c_str());
    return 0;
}

// -------------------------------------------------------------------- eval

struct EvalArgs {
    std::string model, dataset;
};

int cmd_eval(const EvalArgs& a) {
    models::StagedModel model = load_model_or_mismatch(a.model);
    data::LabeledDataset ds;
    try {
        ds = data::load_dataset(a.dataset);
    } catch (const Error& e) {
        throw MismatchError{e.what()};
    }
    if (ds.classes != model.spec.classes)
        throw MismatchError{"eval: model has " + std::to_string(model.spec.classes) +
                            " classes, dataset has " + std::to_string(ds.classes)};
    NoGradGuard ng;
    const std::int64_t batch = std::min<std::int64_t>(64, ds.count());
    data::BatchStream stream(ds, batch, 0, 0, false);
    data::Batch b;
    std::int64_t correct = 0, total = 0;
    while (stream.next(b)) {
        const std::vector<std::int64_t> pred = argmax_rows(model.forward(b.images, false));
        for (size_t i = 0; i < pred.size(); ++i) correct += pred[i] == b.labels[i];
        total += static_cast<std::int64_t>(pred.size());
    }
    std::printf("top1=%s\n", fmt_g6(static_cast<double>(correct) / static_cast<double>(total)).c_str());
    return 0;
}

// ----------------------------------------------------------------- analyze

struct FlopsArgs {
    std::string arch = "resnet32x4";
    std::int64_t size = 32, classes = 100;
    std::vector<std::string> prompt;
    std::string csv;
};

int cmd_analyze_flops(const FlopsArgs& a) {
    models::ArchSpec spec;
    PromptConfig prompt;
    analysis::PromptCost pc;
    try {
        spec = models::arch_spec(a.arch, a.classes);
        for (const std::string& tok : a.prompt) config::apply_prompt_token(prompt, tok);
        pc = analysis::prompt_path_cost(spec, prompt, a.size, a.size);
    } catch (const Error& e) {
        throw UsageError{e.what()};
    }
    // Walk a live dual path as well so the report shows per-layer rows that
    // are guaranteed to agree with the closed forms.
    models::StagedModel model = models::build(spec, 0);
    DualForwardTeacher dual(std::move(model), prompt, 0);
    const analysis::CostReport rep = analysis::count_costs(dual, a.size, a.size);
    std::fputs(rep.to_text().c_str(), stdout);
    std::printf("\nprompt-path additions on %s at %lldx%lld:\n", a.arch.c_str(),
                static_cast<long long>(a.size), static_cast<long long>(a.size));
    std::printf("  prompt blocks: params=%lld macs=%lld\n",
                static_cast<long long>(pc.prompt_params), static_cast<long long>(pc.prompt_macs));
    std::printf("  fusion blocks: params=%lld macs=%lld\n",
                static_cast<long long>(pc.fusion_params), static_cast<long long>(pc.fusion_macs));
    std::printf("  auxiliary head: params=%lld macs=%lld\n",
                static_cast<long long>(pc.head_params), static_cast<long long>(pc.head_macs));
    std::printf("  total: params=%lld (%.2fM) macs=%lld (%.2fM)\n",
                static_cast<long long>(pc.params_total()), pc.params_total() / 1e6,
                static_cast<long long>(pc.macs_total()), pc.macs_total() / 1e6);
    if (!a.csv.empty()) {
        write_text(a.csv, rep.to_csv());
        std::printf("cost table written: %s\n", a.csv.c_str());
    }
    return 0;
}

struct GapArgs {
    std::string rows, csv;
};

int cmd_analyze_gap(const GapArgs& a) {
    std::ifstream in(a.rows, std::ios::binary);
    if (!in) throw MismatchError{"gap: cannot open '" + a.rows + "'"};
    std::string line;
    if (!std::getline(in, line) ||
        (line != "method,teacher_top1,student_top1" &&
         line != "method,teacher_top1,student_top1\r"))
        throw MismatchError{"gap: '" + a.rows +
                            "' must start with header 'method,teacher_top1,student_top1'"};
    std::vector<analysis::GapInput> rows;
    int lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const size_t c1 = line.find(',');
        const size_t c2 = c1 == std::string::npos ? std::string::npos : line.find(',', c1 + 1);
        char* end = nullptr;
        if (c2 == std::string::npos)
            throw MismatchError{"gap: bad row at line " + std::to_string(lineno)};
        analysis::GapInput r;
        r.method = line.substr(0, c1);
        const std::string t = line.substr(c1 + 1, c2 - c1 - 1);
        const std::string s = line.substr(c2 + 1);
        r.teacher_top1 = std::strtod(t.c_str(), &end);
        if (end != t.c_str() + t.size())
            throw MismatchError{"gap: bad number at line " + std::to_string(lineno)};
        r.student_top1 = std::strtod(s.c_str(), &end);
        if (end != s.c_str() + s.size())
            throw MismatchError{"gap: bad number at line " + std::to_string(lineno)};
        rows.push_back(std::move(r));
    }
    analysis::GapReport rep;
    try {
        rep = analysis::gap_report(rows);
    } catch (const Error& e) {
        throw MismatchError{e.what()};
    }
    std::fputs(rep.to_text().c_str(), stdout);
    if (!a.csv.empty()) {
        write_text(a.csv, rep.to_csv());
        std::printf("gap table written: %s\n", a.csv.c_str());
    }
    return 0;
}

struct SimilarityArgs {
    std::string a, b;
    std::string split = "test";
};

int cmd_analyze_similarity(const SimilarityArgs& args) {
    if (args.split != "train" && args.split != "test")
        throw UsageError{"similarity: --split must be train or test"};
    train::MetricsLog la, lb;
    try {
        la = train::MetricsLog::from_csv_file(args.a);
        lb = train::MetricsLog::from_csv_file(args.b);
    } catch (const Error& e) {
        throw MismatchError{e.what()};
    }
    std::printf("# student-prediction KL similarity per epoch (split=%s)\n", args.split.c_str());
    std::printf("# a = %s\n# b = %s\n", args.a.c_str(), args.b.c_str());
    std::printf("%6s %12s %12s %12s %12s\n", "epoch", "a:kl_s_t", "a:kl_s_p", "b:kl_s_t",
                "b:kl_s_p");
    std::int64_t shown = 0;
    for (const auto& ra : la.rows) {
        if (ra.split != args.split) continue;
        const train::MetricsRow* rb = lb.find(ra.epoch, args.split);
        if (!rb) continue;
        std::printf("%6lld %12s %12s %12s %12s\n", static_cast<long long>(ra.epoch),
                    fmt_g6(ra.kl_s_t).c_str(), fmt_g6(ra.kl_s_p).c_str(),
                    fmt_g6(rb->kl_s_t).c_str(), fmt_g6(rb->kl_s_p).c_str());
        ++shown;
    }
    if (shown == 0)
        throw MismatchError{"similarity: the two logs share no epochs on split '" + args.split +
                            "'"};
    return 0;
}

// -------------------------------------------------------------------- plot

struct PlotArgs {
    std::string csv, cols = "top1", out;
    std::string split = "test";
    std::string title = "training metrics";
};

double metrics_col(const train::MetricsRow& r, const std::string& name) {
    if (name == "top1") return r.top1;
    if (name == "ce") return r.ce;
    if (name == "kd_t") return r.kd_t;
    if (name == "kd_p") return r.kd_p;
    if (name == "prompt_top1") return r.prompt_top1;
    if (name == "kl_s_t") return r.kl_s_t;
    if (name == "kl_s_p") return r.kl_s_p;
    if (name == "one_minus_pt_t") return r.one_minus_pt_t;
    if (name == "one_minus_pt_p") return r.one_minus_pt_p;
    if (name == "lr") return r.lr;
    throw UsageError{"plot: unknown column '" + name +
                     "' (want top1, ce, kd_t, kd_p, prompt_top1, kl_s_t, kl_s_p, "
                     "one_minus_pt_t, one_minus_pt_p or lr)"};
}

int cmd_plot(const PlotArgs& a) {
    if (a.split != "train" && a.split != "test" && a.split != "both")
        throw UsageError{"plot: --split must be train, test or both"};
    train::MetricsLog log;
    try {
        log = train::MetricsLog::from_csv_file(a.csv);
    } catch (const Error& e) {
        throw MismatchError{e.what()};
    }
    std::vector<std::string> cols;
    {
        std::string cur;
        for (char c : a.cols + ",") {
            if (c == ',') {
                if (!cur.empty()) cols.push_back(cur);
                cur.clear();
            } else if (c != ' ') {
                cur += c;
            }
        }
    }
    if (cols.empty()) throw UsageError{"plot: --cols names no columns"};
    std::vector<std::string> splits;
    if (a.split == "both") splits = {"train", "test"};
    else splits = {a.split};

    std::vector<svg::Series> series;
    for (const std::string& col : cols) {
        for (const std::string& split : splits) {
            svg::Series s;
            s.label = splits.size() > 1 ? split + " " + col : col;
            for (const auto& r : log.rows) {
                if (r.split != split) continue;
                s.x.push_back(static_cast<double>(r.epoch));
                s.y.push_back(metrics_col(r, col));
            }
            if (!s.x.empty()) series.push_back(std::move(s));
        }
    }
    std::string doc;
    try {
        doc = svg::line_chart(series, a.title, "epoch", a.cols);
    } catch (const Error& e) {
        throw MismatchError{e.what()};
    }
    write_text(a.out, doc);
    std::printf("plot written: %s\n", a.out.c_str());
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"dual forward path teacher knowledge distillation toolkit"};
    app.require_subcommand(1);
    int rc = 0;

    PretrainArgs pre;
    auto* c_pre = app.add_subcommand("pretrain", "Train a teacher from scratch (plain CE)");
    c_pre->add_option("--config", pre.config, "run configuration file")->required();
    c_pre->add_option("--out", pre.out, "run directory")->required();
    c_pre->add_option("--seed", pre.seed, "override [train] seed");
    c_pre->callback([&] { rc = cmd_pretrain(pre); });

    DistillArgs dis;
    auto* c_dis = app.add_subcommand("distill", "Distill a student from a teacher checkpoint");
    c_dis->add_option("--config", dis.config, "run configuration file")->required();
    c_dis->add_option("--teacher", dis.teacher, "teacher checkpoint")->required();
    c_dis->add_option("--method", dis.method, "kd, dfpt or dfpt-t")->required();
    c_dis->add_option("--out", dis.out, "run directory")->required();
    c_dis->add_option("--teacher-lr-scale", dis.teacher_lr_scale,
                      "override [train] teacher_lr_scale");
    c_dis->add_option("--seed", dis.seed, "override [train] seed");
    c_dis->callback([&] { rc = cmd_distill(dis); });

    GendataArgs gen;
    auto* c_gen = app.add_subcommand("gendata", "Write a deterministic synthetic dataset");
    c_gen->add_option("--classes", gen.classes, "number of classes");
    c_gen->add_option("--per-class", gen.per_class, "samples per class before the 80/20 split");
    c_gen->add_option("--size", gen.size, "square image size");
    c_gen->add_option("--channels", gen.channels, "image channels");
    c_gen->add_option("--difficulty", gen.difficulty, "noise level");
    c_gen->add_option("--seed", gen.seed, "generator seed");
    c_gen->add_option("--out", gen.out, "output directory")->required();
    c_gen->callback([&] { rc = cmd_gendata(gen); });

    EvalArgs ev;
    auto* c_ev = app.add_subcommand("eval", "Report a checkpoint's top-1 on a dataset");
    c_ev->add_option("--model", ev.model, "model checkpoint")->required();
    c_ev->add_option("--data", ev.dataset, "dataset file")->required();
    c_ev->callback([&] { rc = cmd_eval(ev); });

    auto* c_an = app.add_subcommand("analyze", "Accounting and comparison reports");
    c_an->require_subcommand(1);

    FlopsArgs fl;
    auto* c_fl = c_an->add_subcommand("flops", "Parameter/MAC accounting for a prompted model");
    c_fl->add_option("--arch", fl.arch, "zoo architecture name");
    c_fl->add_option("--size", fl.size, "input spatial size");
    c_fl->add_option("--classes", fl.classes, "class count");
    c_fl->add_option("--prompt", fl.prompt, "prompt tokens, e.g. r1=4,4,4,4 r2=0.5 k=3,5,7")
        ->expected(-1);
    c_fl->add_option("--csv", fl.csv, "also write the per-layer table as CSV");
    c_fl->callback([&] { rc = cmd_analyze_flops(fl); });

    GapArgs gap;
    auto* c_gap = c_an->add_subcommand("gap", "Teacher/student capacity-gap table");
    c_gap->add_option("--rows", gap.rows, "CSV of method,teacher_top1,student_top1")->required();
    c_gap->add_option("--csv", gap.csv, "also write the report as CSV");
    c_gap->callback([&] { rc = cmd_analyze_gap(gap); });

    SimilarityArgs sim;
    auto* c_sim = c_an->add_subcommand("similarity", "Compare per-epoch KL columns of two runs");
    c_sim->add_option("--a", sim.a, "first metrics CSV")->required();
    c_sim->add_option("--b", sim.b, "second metrics CSV")->required();
    c_sim->add_option("--split", sim.split, "train or test (default test)");
    c_sim->callback([&] { rc = cmd_analyze_similarity(sim); });

    PlotArgs plot;
    auto* c_plot = app.add_subcommand("plot", "Render metric columns as an SVG line chart");
    c_plot->add_option("--csv", plot.csv, "metrics CSV")->required();
    c_plot->add_option("--cols", plot.cols, "comma-separated column names");
    c_plot->add_option("--out", plot.out, "output SVG path")->required();
    c_plot->add_option("--split", plot.split, "train, test or both (default test)");
    c_plot->add_option("--title", plot.title, "chart title");
    c_plot->callback([&] { rc = cmd_plot(plot); });

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const UsageError& e) {
        std::fprintf(stderr, "error: %s\n", e.msg.c_str());
        std::fprintf(stderr, "run with --help for usage\n");
        return 2;
    } catch (const MismatchError& e) {
        std::fprintf(stderr, "error: %s\n", e.msg.c_str());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 4;
    }
    return rc;
}
