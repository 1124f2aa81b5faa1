#include "dfpt/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace dfpt::analysis {

namespace {

struct Dims {
    std::int64_t c = 0, h = 0, w = 0;
};

std::int64_t conv_out(std::int64_t size, std::int64_t k, std::int64_t s, std::int64_t p) {
    const std::int64_t out = (size + 2 * p - k) / s + 1;
    if (out < 1) throw Error("cost: spatial size collapses below 1x1");
    return out;
}

void add_row(CostReport& rep, std::string name, nn::Group g, std::int64_t params,
             std::int64_t macs) {
    rep.rows.push_back({std::move(name), g, params, macs});
}

void walk(const nn::Module& m, const std::string& name, nn::Group g, Dims& d, CostReport& rep);

void walk_conv(const nn::Conv2d& c, const std::string& name, nn::Group g, Dims& d,
               CostReport& rep) {
    if (d.c != c.in_ch)
        throw Error("cost: layer '" + name + "' expects " + std::to_string(c.in_ch) +
                    " channels, input has " + std::to_string(d.c));
    const std::int64_t oh = conv_out(d.h, c.kernel, c.stride, c.padding);
    const std::int64_t ow = conv_out(d.w, c.kernel, c.stride, c.padding);
    const std::int64_t params = c.weight.numel() + (c.bias.defined() ? c.bias.numel() : 0);
    const std::int64_t macs = oh * ow * c.out_ch * c.kernel * c.kernel * c.in_ch;
    add_row(rep, name, g, params, macs);
    d = {c.out_ch, oh, ow};
}

void walk_prompt(const PromptBlock& pb, const std::string& name, nn::Group g, Dims& d,
                 CostReport& rep) {
    const Dims in = d;
    Dims t = in;
    walk_conv(pb.down, name + ".down", g, t, rep);
    for (std::size_t j = 0; j < pb.scales.size(); ++j) {
        const std::string sn = name + ".scale" + std::to_string(j);
        Dims slice{pb.partial_channels(), in.h, in.w};
        walk_conv(pb.scales[j].partial, sn + ".partial", g, slice, rep);
        Dims full{pb.bottleneck(), in.h, in.w};
        walk_conv(pb.scales[j].pointwise, sn + ".pointwise", g, full, rep);
    }
    Dims up{pb.bottleneck(), in.h, in.w};
    walk_conv(pb.up, name + ".up", g, up, rep);
    d = in;  // the block returns an additive term of the input shape
}

void walk(const nn::Module& m, const std::string& name, nn::Group g, Dims& d, CostReport& rep) {
    if (const auto* c = dynamic_cast<const nn::Conv2d*>(&m)) {
        walk_conv(*c, name, g, d, rep);
    } else if (const auto* bn = dynamic_cast<const nn::BatchNorm2d*>(&m)) {
        if (bn->gamma.numel() != d.c)
            throw Error("cost: layer '" + name + "' expects " + std::to_string(bn->gamma.numel()) +
                        " channels, input has " + std::to_string(d.c));
        add_row(rep, name, g, bn->gamma.numel() + bn->beta.numel(), 0);
    } else if (dynamic_cast<const nn::ReLU*>(&m)) {
        // free by convention
    } else if (dynamic_cast<const nn::GlobalAvgPool*>(&m)) {
        d = {d.c, 1, 1};
    } else if (const auto* l = dynamic_cast<const nn::Linear*>(&m)) {
        const std::int64_t in_features = l->weight.shape()[1];
        const std::int64_t out_features = l->weight.shape()[0];
        if (in_features != d.c * d.h * d.w)
            throw Error("cost: layer '" + name + "' expects " + std::to_string(in_features) +
                        " features, input has " + std::to_string(d.c * d.h * d.w));
        add_row(rep, name, g, in_features * out_features + out_features,
                in_features * out_features);
        d = {out_features, 1, 1};
    } else if (const auto* s = dynamic_cast<const nn::Sequential*>(&m)) {
        std::size_t i = 0;
        for (const auto& child : s->children())
            walk(*child, name + "." + std::to_string(i++), g, d, rep);
    } else if (const auto* b = dynamic_cast<const nn::BasicBlock*>(&m)) {
        const Dims in = d;
        walk_conv(b->conv1, name + ".conv1", g, d, rep);
        walk(b->bn1, name + ".bn1", g, d, rep);
        walk_conv(b->conv2, name + ".conv2", g, d, rep);
        walk(b->bn2, name + ".bn2", g, d, rep);
        if (b->down_conv) {
            Dims skip = in;
            walk_conv(*b->down_conv, name + ".down_conv", g, skip, rep);
            walk(*b->down_bn, name + ".down_bn", g, skip, rep);
        }
    } else if (const auto* pb = dynamic_cast<const PromptBlock*>(&m)) {
        walk_prompt(*pb, name, g, d, rep);
    } else if (const auto* fb = dynamic_cast<const FusionBlock*>(&m)) {
        std::size_t i = 0;
        for (const auto& conv : fb->convs) walk_conv(conv, name + "." + std::to_string(i++), g, d, rep);
    } else {
        throw Error("cost: unsupported module type at '" + name + "'");
    }
}

void walk_staged(const models::StagedModel& m, const std::string& prefix, nn::Group g, Dims& d,
                 CostReport& rep, std::vector<Dims>* stage_dims) {
    for (std::size_t i = 0; i < m.stages.size(); ++i) {
        walk(*m.stages[i], prefix + "stage" + std::to_string(i + 1), g, d, rep);
        if (stage_dims) stage_dims->push_back(d);
    }
    walk(*m.head_seq, prefix + "head", g, d, rep);
}

std::string format_si(std::int64_t v) {
    std::ostringstream os;
    os << v;
    return os.str();
}

}  // namespace

std::int64_t CostReport::params(nn::Group g) const {
    std::int64_t total = 0;
    for (const auto& r : rows)
        if (r.group == g) total += r.params;
    return total;
}

std::int64_t CostReport::macs(nn::Group g) const {
    std::int64_t total = 0;
    for (const auto& r : rows)
        if (r.group == g) total += r.macs;
    return total;
}

std::int64_t CostReport::params_total() const {
    std::int64_t total = 0;
    for (const auto& r : rows) total += r.params;
    return total;
}

std::int64_t CostReport::macs_total() const {
    std::int64_t total = 0;
    for (const auto& r : rows) total += r.macs;
    return total;
}

std::string CostReport::to_text() const {
    std::size_t name_w = 12, param_w = 6, mac_w = 12;  // >= widest total line
    for (const auto& r : rows) {
        name_w = std::max(name_w, r.name.size());
        param_w = std::max(param_w, format_si(r.params).size());
        mac_w = std::max(mac_w, format_si(r.macs).size());
    }
    param_w = std::max(param_w, format_si(params_total()).size());
    mac_w = std::max(mac_w, format_si(macs_total()).size());
    std::ostringstream os;
    os << "# FLOPs = multiply-accumulates; batchnorm, activations, bias and pooling excluded\n";
    auto line = [&](const std::string& name, const std::string& group, std::int64_t p,
                    std::int64_t f) {
        os << name << std::string(name_w - name.size() + 2, ' ') << group
           << std::string(7 - group.size() + 2, ' ');
        const std::string ps = format_si(p), fs = format_si(f);
        os << std::string(param_w - ps.size(), ' ') << ps << "  "
           << std::string(mac_w - fs.size(), ' ') << fs << '\n';
    };
    os << "layer" << std::string(name_w - 5 + 2, ' ') << "group    "
       << std::string(param_w - 6, ' ') << "params  " << std::string(mac_w - 12, ' ')
       << "flops (macs)\n";
    for (const auto& r : rows) line(r.name, nn::group_name(r.group), r.params, r.macs);
    for (nn::Group g : {nn::Group::theta, nn::Group::phi, nn::Group::psi}) {
        if (params(g) == 0 && macs(g) == 0) continue;
        line(std::string("total(") + nn::group_name(g) + ")", nn::group_name(g), params(g),
             macs(g));
    }
    line("total", "all", params_total(), macs_total());
    return os.str();
}

std::string CostReport::to_csv() const {
    std::string out = "name,group,params,macs\n";
    for (const auto& r : rows) {
        out += r.name;
        out += ',';
        out += nn::group_name(r.group);
        out += ',';
        out += std::to_string(r.params);
        out += ',';
        out += std::to_string(r.macs);
        out += '\n';
    }
    return out;
}

CostReport count_costs(const nn::Module& m, std::int64_t in_channels, std::int64_t height,
                       std::int64_t width, nn::Group group) {
    if (in_channels < 1 || height < 1 || width < 1)
        throw Error("cost: input dims must be >= 1");
    CostReport rep;
    Dims d{in_channels, height, width};
    if (const auto* staged = dynamic_cast<const models::StagedModel*>(&m)) {
        walk_staged(*staged, "", group, d, rep, nullptr);
    } else {
        walk(m, "module", group, d, rep);
    }
    return rep;
}

CostReport count_costs(const models::StagedModel& m, std::int64_t height, std::int64_t width) {
    return count_costs(m, m.spec.in_channels, height, width, m.group);
}

CostReport count_costs(const DualForwardTeacher& t, std::int64_t height, std::int64_t width) {
    const models::StagedModel& teacher = t.teacher();
    if (height < 1 || width < 1) throw Error("cost: input dims must be >= 1");
    CostReport rep;
    Dims d{teacher.spec.in_channels, height, width};
    const std::int64_t stages = teacher.spec.num_stages();
    for (std::int64_t i = 0; i < stages; ++i) {
        walk(*teacher.stages[i], "teacher.stage" + std::to_string(i + 1), nn::Group::theta, d,
             rep);
        if (t.stage_selected(i + 1)) {
            const auto& blocks = t.prompts[static_cast<std::size_t>(i)];
            for (std::size_t b = 0; b < blocks.size(); ++b) {
                Dims pd = d;
                walk_prompt(*blocks[b], "prompt" + std::to_string(i + 1) + "." + std::to_string(b),
                            nn::Group::phi, pd, rep);
            }
            if (t.fusions[static_cast<std::size_t>(i)]) {
                Dims fd = d;
                walk(*t.fusions[static_cast<std::size_t>(i)], "fusion" + std::to_string(i + 1),
                     nn::Group::phi, fd, rep);
            }
        }
    }
    const Dims feat = d;  // both heads read the last stage's output shape
    walk(*teacher.head_seq, "teacher.head", nn::Group::theta, d, rep);
    Dims hd = feat;
    walk(*t.head_phi, "head_phi", nn::Group::phi, hd, rep);
    return rep;
}

std::int64_t prompt_block_macs(std::int64_t channels, std::int64_t r1, double r2,
                               const std::vector<std::int64_t>& kernels, std::int64_t height,
                               std::int64_t width) {
    // Reuses the block's own geometry validation.
    (void)PromptBlock::expected_params(channels, r1, r2, kernels);
    if (height < 1 || width < 1) throw Error("cost: input dims must be >= 1");
    const std::int64_t d = (channels + r1 - 1) / r1;
    const std::int64_t m =
        std::min<std::int64_t>(d, static_cast<std::int64_t>(std::floor(r2 * static_cast<double>(d))));
    const std::int64_t px = height * width;
    std::int64_t macs = px * d * channels;  // down 1x1
    for (const auto k : kernels) macs += px * (m * m * k * k + d * d);
    return macs + px * channels * d;  // up 1x1
}

PromptCost prompt_path_cost(const models::ArchSpec& spec, const PromptConfig& cfg,
                            std::int64_t height, std::int64_t width) {
    const std::int64_t stages = spec.num_stages();
    std::vector<std::int64_t> r1 = cfg.r1;
    if (r1.size() == 1) r1.assign(static_cast<std::size_t>(stages), r1[0]);
    if (static_cast<std::int64_t>(r1.size()) != stages)
        throw Error("prompt config: r1 needs 1 or " + std::to_string(stages) + " entries");
    std::vector<bool> selected(static_cast<std::size_t>(stages), cfg.insert_stages.empty());
    if (!cfg.insert_stages.empty()) {
        for (const auto s : cfg.insert_stages) {
            if (s < 1 || s > stages)
                throw Error("prompt config: insert stage " + std::to_string(s) +
                            " out of range 1.." + std::to_string(stages));
            selected[static_cast<std::size_t>(s - 1)] = true;
        }
    }
    if (cfg.blocks_per_stage < 1) throw Error("prompt config: blocks_per_stage must be >= 1");
    if (cfg.fusion_convs < 1) throw Error("prompt config: fusion_convs must be >= 1");

    PromptCost out;
    std::int64_t h = height, w = width;
    for (std::int64_t i = 0; i < stages; ++i) {
        const std::int64_t s = spec.strides[static_cast<std::size_t>(i)];
        h = conv_out(h, 3, s, 1);
        w = conv_out(w, 3, s, 1);
        if (!selected[static_cast<std::size_t>(i)]) continue;
        const std::int64_t c = spec.widths[static_cast<std::size_t>(i)];
        const std::int64_t bp =
            PromptBlock::expected_params(c, r1[static_cast<std::size_t>(i)], cfg.r2, cfg.kernels);
        const std::int64_t bm =
            prompt_block_macs(c, r1[static_cast<std::size_t>(i)], cfg.r2, cfg.kernels, h, w);
        out.prompt_params += cfg.blocks_per_stage * bp;
        out.prompt_macs += cfg.blocks_per_stage * bm;
        if (cfg.use_fusion) {
            out.fusion_params += cfg.fusion_convs * (c * c + c);
            out.fusion_macs += cfg.fusion_convs * (h * w * c * c);
        }
    }
    out.head_params = spec.widths.back() * spec.classes + spec.classes;
    out.head_macs = spec.widths.back() * spec.classes;
    return out;
}

double kl_similarity(const kd::SoftPrediction& a, const kd::SoftPrediction& b) {
    return kd::kl_distillation(a, b, false);
}

double nontarget_mass(const kd::SoftPrediction& p, std::int64_t t) {
    if (t < 0 || t >= static_cast<std::int64_t>(p.p.size()))
        throw Error("nontarget mass: class index " + std::to_string(t) + " out of range for " +
                    std::to_string(p.p.size()) + " classes");
    return 1.0 - p.p[static_cast<std::size_t>(t)];
}

GapReport gap_report(const std::vector<GapInput>& rows) {
    if (rows.empty()) throw Error("gap report: no rows");
    GapReport rep;
    for (const auto& r : rows) {
        GapRow g;
        g.method = r.method;
        g.teacher_top1 = r.teacher_top1;
        g.student_top1 = r.student_top1;
        g.gap = r.teacher_top1 - r.student_top1;
        rep.rows.push_back(g);
        rep.avg_teacher += r.teacher_top1;
        rep.avg_student += r.student_top1;
    }
    const double n = static_cast<double>(rows.size());
    rep.avg_teacher /= n;
    rep.avg_student /= n;
    rep.avg_gap = rep.avg_teacher - rep.avg_student;
    return rep;
}

namespace {

std::string fmt2(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.2f", v);
    return buf;
}

}  // namespace

std::string GapReport::to_text() const {
    std::size_t method_w = 7;
    for (const auto& r : rows) method_w = std::max(method_w, r.method.size());
    std::ostringstream os;
    os << "method" << std::string(method_w - 6 + 2, ' ') << "teacher  student     gap\n";
    auto line = [&](const std::string& m, double t, double s, double g) {
        const std::string ts = fmt2(t), ss = fmt2(s), gs = fmt2(g);
        os << m << std::string(method_w - m.size() + 2, ' ') << std::string(7 - ts.size(), ' ')
           << ts << "  " << std::string(7 - ss.size(), ' ') << ss << "  "
           << std::string(6 - std::min<std::size_t>(6, gs.size()), ' ') << gs << '\n';
    };
    for (const auto& r : rows) line(r.method, r.teacher_top1, r.student_top1, r.gap);
    line("average", avg_teacher, avg_student, avg_gap);
    return os.str();
}

std::string GapReport::to_csv() const {
    std::string out = "method,teacher_top1,student_top1,gap\n";
    auto line = [&](const std::string& m, double t, double s, double g) {
        out += m;
        out += ',';
        out += fmt2(t);
        out += ',';
        out += fmt2(s);
        out += ',';
        out += fmt2(g);
        out += '\n';
    };
    for (const auto& r : rows) line(r.method, r.teacher_top1, r.student_top1, r.gap);
    line("average", avg_teacher, avg_student, avg_gap);
    return out;
}

}  // namespace dfpt::analysis
