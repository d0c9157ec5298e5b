#include "sylloscope/report.hpp"

#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "sylloscope/errors.hpp"

namespace syl {

using nlohmann::json;

namespace {

/// Shortest round-trip representation of a float, carried as the double that
/// parses back from it, so JSON output reads "0.15" rather than float
/// widening noise. NaN propagates (nlohmann serializes it as null).
double jnum(float v) {
    if (!std::isfinite(v)) return static_cast<double>(v);
    char buf[48];
    auto res = std::to_chars(buf, buf + sizeof buf, v);
    *res.ptr = '\0';
    return std::strtod(buf, nullptr);
}

double jnum(double v) { return jnum(static_cast<float>(v)); }

json meta_json(const ReportMeta& meta) {
    return json{{"model_fingerprint", meta.model_fingerprint},
                {"seed", meta.seed},
                {"config_fingerprint", meta.config_fingerprint},
                {"dataset_fingerprint", meta.dataset_fingerprint}};
}

json instance_json(const SyllogismInstance& inst) {
    return json{{"scheme", inst.scheme},
                {"terms",
                 {{"s", inst.term_s}, {"m1", inst.term_m1}, {"m2", inst.term_m2}, {"p", inst.term_p}}},
                {"prompt", inst.prompt},
                {"tokens", inst.tokens},
                {"roles",
                 {{"s", inst.roles.s},
                  {"m1", inst.roles.m1},
                  {"m2", inst.roles.m2},
                  {"p", inst.roles.p},
                  {"last", inst.roles.last}}},
                {"answer_token", inst.answer_token},
                {"distractor_token", inst.distractor_token},
                {"tag", inst.tag}};
}

SyllogismInstance instance_from_json(const json& j) {
    SyllogismInstance inst;
    inst.scheme = j.at("scheme").get<std::string>();
    inst.term_s = j.at("terms").at("s").get<std::string>();
    inst.term_m1 = j.at("terms").at("m1").get<std::string>();
    inst.term_m2 = j.at("terms").at("m2").get<std::string>();
    inst.term_p = j.at("terms").at("p").get<std::string>();
    inst.prompt = j.at("prompt").get<std::string>();
    inst.tokens = j.at("tokens").get<std::vector<int>>();
    inst.roles.s = j.at("roles").at("s").get<std::vector<int>>();
    inst.roles.m1 = j.at("roles").at("m1").get<int>();
    inst.roles.m2 = j.at("roles").at("m2").get<int>();
    inst.roles.p = j.at("roles").at("p").get<int>();
    inst.roles.last = j.at("roles").at("last").get<int>();
    inst.answer_token = j.at("answer_token").get<int>();
    inst.distractor_token = j.at("distractor_token").get<int>();
    inst.tag = j.value("tag", "");
    return inst;
}

std::vector<json> read_jsonl(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw_data("cannot open dataset file: " + path.string());
    std::vector<json> lines;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            lines.push_back(json::parse(line));
        } catch (const json::exception& e) {
            throw_data("bad JSON on line " + std::to_string(line_no) + " of " + path.string() +
                       ": " + e.what());
        }
    }
    return lines;
}

const char* axis_name(SweepAxis axis) {
    return axis == SweepAxis::layer_position ? "layer_position" : "layer_head";
}

}  // namespace

std::string fingerprint_text(std::string_view text) {
    uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

void write_text_atomic(const std::filesystem::path& path, std::string_view text) {
    if (path.has_parent_path()) {
        std::error_code ec;
        std::filesystem::create_directories(path.parent_path(), ec);
    }
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw_data("cannot write file: " + tmp.string());
        out.write(text.data(), static_cast<std::streamsize>(text.size()));
        if (!out) throw_data("short write to " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

std::string instances_to_jsonl(std::span<const SyllogismInstance> instances) {
    std::string out;
    for (const auto& inst : instances) {
        out += instance_json(inst).dump();
        out += '\n';
    }
    return out;
}

std::vector<SyllogismInstance> instances_from_jsonl(const std::filesystem::path& path) {
    std::vector<SyllogismInstance> out;
    for (const auto& j : read_jsonl(path)) out.push_back(instance_from_json(j));
    return out;
}

std::string pairs_to_jsonl(std::span<const PromptPair> pairs) {
    std::string out;
    for (const auto& pr : pairs) {
        json j{{"intervention", intervention_name(pr.intervention)},
               {"clean", instance_json(pr.clean)},
               {"corrupted", instance_json(pr.corrupted)}};
        out += j.dump();
        out += '\n';
    }
    return out;
}

std::vector<PromptPair> pairs_from_jsonl(const std::filesystem::path& path) {
    std::vector<PromptPair> out;
    for (const auto& j : read_jsonl(path)) {
        PromptPair pr;
        pr.intervention = parse_intervention(j.at("intervention").get<std::string>());
        pr.clean = instance_from_json(j.at("clean"));
        pr.corrupted = instance_from_json(j.at("corrupted"));
        out.push_back(std::move(pr));
    }
    return out;
}

std::string sweep_to_json(const SweepResult& sweep, const ReportMeta& meta) {
    json rows = json::array();
    for (int r = 0; r < sweep.rows; ++r) {
        json mean_row = json::array(), std_row = json::array(), count_row = json::array();
        for (int c = 0; c < sweep.cols; ++c) {
            mean_row.push_back(jnum(sweep.mean_at(r, c)));
            std_row.push_back(jnum(sweep.stdev_at(r, c)));
            count_row.push_back(sweep.count_at(r, c));
        }
        rows.push_back(json{{"layer", r}, {"mean", mean_row}, {"std", std_row}, {"n", count_row}});
    }
    json j{{"kind", "patching_sweep"},
           {"axis", axis_name(sweep.axis)},
           {"direction", direction_name(sweep.direction)},
           {"intervention", intervention_name(sweep.intervention)},
           {"samples", sweep.n},
           {"col_labels", sweep.col_labels},
           {"cells", rows},
           {"meta", meta_json(meta)}};
    return j.dump(2) + "\n";
}

std::string sweep_to_csv(const SweepResult& sweep) {
    std::ostringstream out;
    out << "layer";
    for (const auto& label : sweep.col_labels) out << "," << label;
    out << "\n";
    for (int r = 0; r < sweep.rows; ++r) {
        out << r;
        for (int c = 0; c < sweep.cols; ++c) {
            float v = sweep.mean_at(r, c);
            out << ",";
            if (!std::isnan(v)) {
                char buf[48];
                auto res = std::to_chars(buf, buf + sizeof buf, v);
                out.write(buf, res.ptr - buf);
            }
        }
        out << "\n";
    }
    return out.str();
}

std::string profile_to_json(const AttentionProfile& profile, const ReportMeta& meta) {
    json heads = json::array();
    const int G = profile.n_groups();
    for (int l = 0; l < profile.n_layers; ++l) {
        for (int h = 0; h < profile.n_heads; ++h) {
            json mean_row = json::array(), std_row = json::array();
            for (int g = 0; g < G; ++g) {
                mean_row.push_back(jnum(profile.mean_at(l, h, g)));
                std_row.push_back(jnum(profile.stdev_at(l, h, g)));
            }
            heads.push_back(json{{"layer", l}, {"head", h}, {"mean", mean_row}, {"std", std_row}});
        }
    }
    json j{{"kind", "attention_profile"},
           {"query_role", role_name(profile.query_role)},
           {"query_position", profile.query_position},
           {"group_labels", profile.group_labels},
           {"group_positions", profile.group_positions},
           {"heads", heads},
           {"meta", meta_json(meta)}};
    return j.dump(2) + "\n";
}

std::string profile_to_csv(const AttentionProfile& profile) {
    std::ostringstream out;
    out << "layer,head";
    for (const auto& label : profile.group_labels) out << "," << label;
    out << "\n";
    for (int l = 0; l < profile.n_layers; ++l) {
        for (int h = 0; h < profile.n_heads; ++h) {
            out << l << "," << h;
            for (int g = 0; g < profile.n_groups(); ++g) {
                char buf[48];
                auto res = std::to_chars(buf, buf + sizeof buf, profile.mean_at(l, h, g));
                out << ",";
                out.write(buf, res.ptr - buf);
            }
            out << "\n";
        }
    }
    return out.str();
}

std::string lens_to_json(const LensMatrix& lens, float diag_score, const ReportMeta& meta) {
    const int k = static_cast<int>(lens.matrix.dim(0));
    json rows = json::array();
    for (int i = 0; i < k; ++i) {
        json row = json::array();
        for (int j2 = 0; j2 < k; ++j2) row.push_back(jnum(lens.matrix(i, j2)));
        rows.push_back(row);
    }
    json j{{"kind", "ov_lens"},
           {"layer", lens.head.layer},
           {"head", lens.head.head},
           {"token_ids", lens.token_ids},
           {"labels", lens.labels},
           {"diagonal_score", jnum(diag_score)},
           {"matrix", rows},
           {"meta", meta_json(meta)}};
    return j.dump(2) + "\n";
}

std::string lens_to_csv(const LensMatrix& lens) {
    std::ostringstream out;
    out << "source\\output";
    for (const auto& label : lens.labels) out << "," << label;
    out << "\n";
    const int k = static_cast<int>(lens.matrix.dim(0));
    for (int i = 0; i < k; ++i) {
        out << lens.labels[static_cast<size_t>(i)];
        for (int j = 0; j < k; ++j) {
            char buf[48];
            auto res = std::to_chars(buf, buf + sizeof buf, lens.matrix(i, j));
            out << ",";
            out.write(buf, res.ptr - buf);
        }
        out << "\n";
    }
    return out.str();
}

std::string curve_to_json(const AblationCurve& curve, const ReportMeta& meta) {
    json steps = json::array();
    for (const auto& step : curve.steps) {
        json heads = json::array();
        for (const auto& h : step.heads_changed) {
            heads.push_back(std::to_string(h.layer) + "." + std::to_string(h.head));
        }
        steps.push_back(
            json{{"heads", heads}, {"mean", jnum(step.mean)}, {"std", jnum(step.stddev)}});
    }
    json j{{"kind", "ablation_curve"},
           {"mode", ablation_mode_name(curve.mode)},
           {"baseline", {{"mean", jnum(curve.baseline_mean)}, {"std", jnum(curve.baseline_std)}}},
           {"samples", curve.n},
           {"steps", steps},
           {"meta", meta_json(meta)}};
    return j.dump(2) + "\n";
}

std::string movers_to_json(std::span<const MoverClassification> movers, const ReportMeta& meta) {
    json rows = json::array();
    for (const auto& m : movers) {
        rows.push_back(json{{"layer", m.head.layer},
                            {"head", m.head.head},
                            {"s_all", jnum(m.s_all)},
                            {"s_p", jnum(m.s_p)},
                            {"s_m1", jnum(m.s_m1)},
                            {"s_m2", jnum(m.s_m2)},
                            {"ppd", jnum(m.ppd)},
                            {"quadrant", quadrant_name(m.quadrant)},
                            {"outlier", m.outlier}});
    }
    json j{{"kind", "mover_classification"}, {"heads", rows}, {"meta", meta_json(meta)}};
    return j.dump(2) + "\n";
}

std::string pathpatch_to_json(std::span<const PathPatchResult> results, const ReportMeta& meta) {
    json rows = json::array();
    for (const auto& r : results) {
        rows.push_back(json{
            {"sender", std::to_string(r.sender.layer) + "." + std::to_string(r.sender.head)},
            {"receiver",
             std::to_string(r.receiver.layer) + "." + std::to_string(r.receiver.head)},
            {"mean", jnum(r.stats.mean)},
            {"std", jnum(r.stats.stddev)},
            {"n", r.stats.count},
            {"missing", r.missing}});
    }
    json j{{"kind", "path_patching"}, {"results", rows}, {"meta", meta_json(meta)}};
    return j.dump(2) + "\n";
}

std::string conditions_to_csv(std::span<const SchemeConditionRow> rows) {
    std::ostringstream out;
    out << "scheme,C1,C2,C3,accuracy\n";
    for (const auto& row : rows) {
        char buf[48];
        auto res = std::to_chars(buf, buf + sizeof buf,
                                 static_cast<float>(row.report.accuracy));
        out << row.scheme << "," << (row.report.c1 ? "yes" : "no") << ","
            << (row.report.c2 ? "yes" : "no") << "," << (row.report.c3 ? "yes" : "no") << ",";
        out.write(buf, res.ptr - buf);
        out << "\n";
    }
    return out.str();
}

std::string matrix_to_ppm(int rows, int cols, std::span<const float> values, int cell_px) {
    if (rows * cols != static_cast<int>(values.size())) throw_data("matrix size mismatch");
    float max_abs = 0.0f;
    for (float v : values) {
        if (std::isfinite(v)) max_abs = std::max(max_abs, std::fabs(v));
    }
    if (max_abs == 0.0f) max_abs = 1.0f;

    const int W = cols * cell_px, H = rows * cell_px;
    std::string out = "P6\n" + std::to_string(W) + " " + std::to_string(H) + "\n255\n";
    out.reserve(out.size() + static_cast<size_t>(W) * H * 3);
    for (int y = 0; y < H; ++y) {
        for (int x = 0; x < W; ++x) {
            float v = values[static_cast<size_t>(y / cell_px) * cols + (x / cell_px)];
            unsigned char r, g, b;
            if (!std::isfinite(v)) {
                r = g = b = 128;
            } else {
                float t = std::clamp(v / max_abs, -1.0f, 1.0f);
                if (t >= 0.0f) {  // white -> red
                    r = 255;
                    g = b = static_cast<unsigned char>(255.0f * (1.0f - t));
                } else {  // white -> blue
                    b = 255;
                    r = g = static_cast<unsigned char>(255.0f * (1.0f + t));
                }
            }
            out.push_back(static_cast<char>(r));
            out.push_back(static_cast<char>(g));
            out.push_back(static_cast<char>(b));
        }
    }
    return out;
}

}  // namespace syl
