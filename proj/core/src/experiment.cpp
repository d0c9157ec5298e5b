#include "sylloscope/experiment.hpp"

#include <fstream>
#include <ostream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "sylloscope/circuits.hpp"
#include "sylloscope/errors.hpp"
#include "sylloscope/lens.hpp"
#include "sylloscope/metrics.hpp"
#include "sylloscope/pathpatch.hpp"
#include "sylloscope/report.hpp"
#include "sylloscope/runner.hpp"
#include "sylloscope/sweeps.hpp"

namespace syl {

using nlohmann::json;

namespace {

std::string read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw_data("cannot open file: " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

ReportMeta make_meta(const ExperimentConfig& config, const ModelBundle* bundle,
                     const std::string& dataset_text) {
    ReportMeta meta;
    if (bundle != nullptr) meta.model_fingerprint = bundle->weights_fingerprint;
    meta.seed = config.seed;
    meta.config_fingerprint = fingerprint_text(config.canonical_text());
    if (!dataset_text.empty()) meta.dataset_fingerprint = fingerprint_text(dataset_text);
    return meta;
}

std::vector<SyllogismInstance> generate_with_config(const ExperimentConfig& config,
                                                    const Tokenizer& tokenizer) {
    if (config.samples < 1) throw_usage("samples must be >= 1");
    std::vector<SyllogismInstance> instances;
    if (!config.nonsymbolic_file.empty()) {
        IngestResult r = ingest_nonsymbolic(config.nonsymbolic_file, tokenizer);
        instances = std::move(r.instances);
    } else {
        instances = generate_symbolic(find_scheme(config.scheme), config.samples,
                                      config.require_seed(), tokenizer);
    }
    if (config.perturbation == "numeric") {
        for (auto& inst : instances) inst = perturb(inst, Perturbation::numeric, tokenizer);
    } else if (config.perturbation == "quantifier") {
        for (auto& inst : instances) inst = perturb(inst, Perturbation::quantifier, tokenizer);
    } else if (config.perturbation != "none") {
        throw_usage("unknown perturbation: " + config.perturbation);
    }
    return instances;
}

/// Word instances need replacement terms drawn from the batch's own subject
/// vocabulary; symbol instances use their own alphabet.
std::vector<std::string> replacement_pool_for(const std::vector<SyllogismInstance>& instances) {
    const auto& first = instances.front();
    bool symbolic = first.term_s.size() == 2;
    if (symbolic) return {};
    std::set<std::string> words;
    for (const auto& inst : instances) words.insert(inst.term_s);
    return {words.begin(), words.end()};
}

struct LoadedDataset {
    std::vector<SyllogismInstance> instances;  // clean side
    std::vector<PromptPair> pairs;             // empty when the file held instances
    std::string raw_text;
};

LoadedDataset load_dataset(const std::filesystem::path& path) {
    if (path.empty()) throw_usage("this command needs dataset=<file.jsonl>");
    LoadedDataset ds;
    ds.raw_text = read_file(path);
    // peek the first line to decide on instances vs pairs
    std::istringstream ss(ds.raw_text);
    std::string first_line;
    while (std::getline(ss, first_line) && first_line.empty()) {
    }
    if (first_line.empty()) throw_data("dataset file is empty: " + path.string());
    json j = json::parse(first_line);
    if (j.contains("clean")) {
        ds.pairs = pairs_from_jsonl(path);
        for (const auto& pr : ds.pairs) ds.instances.push_back(pr.clean);
    } else {
        ds.instances = instances_from_jsonl(path);
    }
    return ds;
}

std::vector<float> clean_deltas(const ModelBundle& bundle,
                                const std::vector<SyllogismInstance>& instances, int workers) {
    BatchRunner runner(bundle, workers);
    std::vector<std::vector<int>> seqs;
    std::vector<ScoreTokens> score;
    for (const auto& inst : instances) {
        seqs.push_back(inst.tokens);
        score.push_back({inst.answer_token, inst.distractor_token});
    }
    return runner.deltas(seqs, score, instances.front().roles.last);
}

CircuitSpec load_circuit(const ExperimentConfig& config) {
    if (config.circuit_file.empty()) return CircuitSpec::default_circuit();
    json j = json::parse(read_file(config.circuit_file));
    CircuitSpec c;
    c.name = j.value("name", config.circuit_file.stem().string());
    for (const auto& h : j.at("heads")) c.heads.push_back(parse_head(h.get<std::string>()));
    return c;
}

}  // namespace

HeadRef parse_head(const std::string& text) {
    auto dot = text.find('.');
    if (dot == std::string::npos) throw_usage("head must look like '11.10': " + text);
    try {
        return {std::stoi(text.substr(0, dot)), std::stoi(text.substr(dot + 1))};
    } catch (const std::exception&) {
        throw_usage("head must look like '11.10': " + text);
    }
}

ExperimentConfig ExperimentConfig::from_file(const std::filesystem::path& path) {
    ExperimentConfig config;
    std::ifstream in(path);
    if (!in) throw_usage("cannot open config file: " + path.string());
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        size_t hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        size_t eq = line.find('=');
        if (eq == std::string::npos) {
            if (line.find_first_not_of(" \t\r") != std::string::npos) {
                throw_usage("config line " + std::to_string(line_no) + " is not key = value");
            }
            continue;
        }
        auto trim = [](std::string s) {
            size_t b = s.find_first_not_of(" \t\r");
            size_t e = s.find_last_not_of(" \t\r");
            return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
        };
        config.set(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
    return config;
}

void ExperimentConfig::set(const std::string& key, const std::string& value) {
    try {
        if (key == "model_dir") model_dir = value;
        else if (key == "checkpoint") checkpoint = value;
        else if (key == "vocab") vocab = value;
        else if (key == "merges") merges = value;
        else if (key == "scheme") scheme = value;
        else if (key == "samples") samples = std::stoi(value);
        else if (key == "seed") { seed = std::stoull(value); seed_set = true; }
        else if (key == "perturbation") perturbation = value;
        else if (key == "intervention") intervention = value;
        else if (key == "nonsymbolic_file") nonsymbolic_file = value;
        else if (key == "dataset") dataset = value;
        else if (key == "sweep_type") sweep_type = value;
        else if (key == "direction") direction = value;
        else if (key == "query_role") query_role = value;
        else if (key == "circuit_file") circuit_file = value;
        else if (key == "c1_factor") c1_factor = std::stod(value);
        else if (key == "c2_factor") c2_factor = std::stod(value);
        else if (key == "receiver") receiver = value;
        else if (key == "senders") senders = value;
        else if (key == "lens_head") lens_head = value;
        else if (key == "out_dir") out_dir = value;
        else if (key == "workers") workers = std::stoi(value);
        else throw_usage("unknown config key: " + key);
    } catch (const Error&) {
        throw;
    } catch (const std::exception&) {
        throw_usage("bad value for config key " + key + ": " + value);
    }
}

std::string ExperimentConfig::canonical_text() const {
    std::map<std::string, std::string> kv = {
        {"model_dir", model_dir.string()},
        {"checkpoint", checkpoint.string()},
        {"vocab", vocab.string()},
        {"merges", merges.string()},
        {"scheme", scheme},
        {"samples", std::to_string(samples)},
        {"seed", seed_set ? std::to_string(seed) : ""},
        {"perturbation", perturbation},
        {"intervention", intervention},
        {"nonsymbolic_file", nonsymbolic_file.string()},
        {"dataset", dataset.string()},
        {"sweep_type", sweep_type},
        {"direction", direction},
        {"query_role", query_role},
        {"circuit_file", circuit_file.string()},
        {"c1_factor", std::to_string(c1_factor)},
        {"c2_factor", std::to_string(c2_factor)},
        {"receiver", receiver},
        {"senders", senders},
        {"lens_head", lens_head},
        {"out_dir", out_dir.string()},
        {"workers", std::to_string(workers)},
    };
    std::string out;
    for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
    return out;
}

std::filesystem::path ExperimentConfig::checkpoint_path() const {
    if (!checkpoint.empty()) return checkpoint;
    if (model_dir.empty()) throw_usage("set model_dir= or checkpoint= to locate the model");
    return model_dir / "model.safetensors";
}

std::filesystem::path ExperimentConfig::vocab_path() const {
    if (!vocab.empty()) return vocab;
    if (model_dir.empty()) throw_usage("set model_dir= or vocab= to locate the tokenizer");
    return model_dir / "vocab.json";
}

std::filesystem::path ExperimentConfig::merges_path() const {
    if (!merges.empty()) return merges;
    if (model_dir.empty()) throw_usage("set model_dir= or merges= to locate the tokenizer");
    return model_dir / "merges.txt";
}

ModelBundle ExperimentConfig::load_model() const {
    auto ckpt = checkpoint_path();
    if (!std::filesystem::exists(ckpt)) {
        throw_model("checkpoint not found: " + ckpt.string() +
                    " (download the GPT-2 safetensors checkpoint and point model_dir at it)");
    }
    return load_bundle(ckpt, {vocab_path(), merges_path()});
}

uint64_t ExperimentConfig::require_seed() const {
    if (!seed_set) throw_usage("seed= is mandatory for this command (no implicit randomness)");
    return seed;
}

void cmd_generate(const ExperimentConfig& config, std::ostream& log) {
    Tokenizer tokenizer = Tokenizer::load(config.vocab_path(), config.merges_path());
    std::vector<SyllogismInstance> instances = generate_with_config(config, tokenizer);

    std::string text;
    if (config.intervention != "none" && !config.intervention.empty()) {
        Intervention iv = parse_intervention(config.intervention);
        auto pool = replacement_pool_for(instances);
        std::vector<PromptPair> pairs;
        pairs.reserve(instances.size());
        uint64_t seed = config.require_seed();
        for (size_t i = 0; i < instances.size(); ++i) {
            pairs.push_back(corrupt(instances[i], iv, seed + i + 1, tokenizer, pool));
        }
        text = pairs_to_jsonl(pairs);
    } else {
        text = instances_to_jsonl(instances);
    }

    std::filesystem::path out =
        config.dataset.empty() ? config.out_dir / "dataset.jsonl" : config.dataset;
    write_text_atomic(out, text);

    std::set<std::string> us, um, up;
    for (const auto& inst : instances) {
        us.insert(inst.term_s);
        um.insert(inst.term_m1);
        up.insert(inst.term_p);
    }
    log << "wrote " << out.string() << "\n"
        << "samples: " << instances.size() << "\n"
        << "token sequence length: " << instances.front().n_tokens() << "\n"
        << "unique terms s/m/p: " << us.size() << "/" << um.size() << "/" << up.size() << "\n";
}

void cmd_run(const ExperimentConfig& config, std::ostream& log) {
    LoadedDataset ds = load_dataset(config.dataset);
    ModelBundle bundle = config.load_model();
    std::vector<float> deltas = clean_deltas(bundle, ds.instances, config.workers);
    BatchStats st = batch_stats(deltas);
    double acc = accuracy(deltas);

    json per_sample = json::array();
    for (float d : deltas) per_sample.push_back(d);
    json j{{"kind", "run_scores"},
           {"accuracy", acc},
           {"delta", {{"mean", st.mean}, {"std", st.stddev}, {"n", st.count}}},
           {"per_sample_delta", per_sample},
           {"meta",
            {{"model_fingerprint", bundle.weights_fingerprint},
             {"seed", config.seed},
             {"config_fingerprint", fingerprint_text(config.canonical_text())},
             {"dataset_fingerprint", fingerprint_text(ds.raw_text)}}}};
    std::filesystem::path out = config.out_dir / "run_scores.json";
    write_text_atomic(out, j.dump(2) + "\n");
    log << "wrote " << out.string() << "\n"
        << "accuracy: " << acc << "  delta: " << st.mean << " +/- " << st.stddev << " (n=" << st.count
        << ")\n";
}

void cmd_sweep(const ExperimentConfig& config, std::ostream& log) {
    LoadedDataset ds = load_dataset(config.dataset);
    ModelBundle bundle = config.load_model();
    ReportMeta meta = make_meta(config, &bundle, ds.raw_text);
    SweepOptions opts{config.workers};

    if (config.sweep_type == "attention_profile") {
        AttentionProfile prof =
            attention_profile(bundle, ds.instances, parse_role(config.query_role), opts);
        std::filesystem::path out = config.out_dir / "attention_profile.json";
        write_text_atomic(out, profile_to_json(prof, meta));
        write_text_atomic(config.out_dir / "attention_profile.csv", profile_to_csv(prof));
        log << "wrote " << out.string() << "\n";
        return;
    }

    if (ds.pairs.empty()) {
        throw_data("sweeps need a pairs dataset (generate with intervention=...)");
    }
    Direction dir = config.direction == "noise" ? Direction::noise : Direction::denoise;
    SweepResult result;
    if (config.sweep_type == "residual") {
        result = residual_sweep(bundle, ds.pairs, dir, opts);
    } else if (config.sweep_type == "head_output") {
        result = head_output_sweep(bundle, ds.pairs, dir, opts);
    } else if (config.sweep_type == "head_value") {
        result = head_value_sweep(bundle, ds.pairs, dir, opts);
    } else {
        throw_usage("unknown sweep_type: " + config.sweep_type);
    }
    std::string stem = "sweep_" + config.sweep_type;
    write_text_atomic(config.out_dir / (stem + ".json"), sweep_to_json(result, meta));
    write_text_atomic(config.out_dir / (stem + ".csv"), sweep_to_csv(result));
    log << "wrote " << (config.out_dir / (stem + ".json")).string() << "\n";
    if (result.axis == SweepAxis::layer_head) {
        auto ranked = result.ranked_heads();
        log << "top heads:";
        for (size_t i = 0; i < ranked.size() && i < 5; ++i) {
            log << " h" << ranked[i].first.layer << "." << ranked[i].first.head << "="
                << ranked[i].second;
        }
        log << "\n";
    }
}

void cmd_path_patch(const ExperimentConfig& config, std::ostream& log) {
    LoadedDataset ds = load_dataset(config.dataset);
    if (ds.pairs.empty()) throw_data("path patching needs a pairs dataset");
    ModelBundle bundle = config.load_model();
    ReportMeta meta = make_meta(config, &bundle, ds.raw_text);

    HeadRef receiver = parse_head(config.receiver);
    std::vector<HeadRef> senders;
    std::stringstream ss(config.senders);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        if (!tok.empty()) senders.push_back(parse_head(tok));
    }
    if (senders.empty()) throw_usage("senders= must list at least one head (e.g. 5.8,6.1)");

    auto results = path_patch_senders(bundle, ds.pairs, senders, receiver,
                                      SweepOptions{config.workers});
    std::filesystem::path out = config.out_dir / "path_patch.json";
    write_text_atomic(out, pathpatch_to_json(results, meta));
    log << "wrote " << out.string() << "\n";
    for (const auto& r : results) {
        log << "sender h" << r.sender.layer << "." << r.sender.head << " -> receiver h"
            << r.receiver.layer << "." << r.receiver.head << ": " << r.stats.mean << " +/- "
            << r.stats.stddev << "\n";
    }
}

void cmd_lens(const ExperimentConfig& config, std::ostream& log) {
    ModelBundle bundle = config.load_model();
    ReportMeta meta = make_meta(config, &bundle, "");
    HeadRef head = parse_head(config.lens_head);
    std::vector<int> subset = default_letter_subset(bundle.tokenizer);
    LensMatrix lens = ov_lens(bundle, head, subset);
    float diag = diagonal_score(lens);
    std::string stem =
        "lens_h" + std::to_string(head.layer) + "." + std::to_string(head.head);
    write_text_atomic(config.out_dir / (stem + ".json"), lens_to_json(lens, diag, meta));
    write_text_atomic(config.out_dir / (stem + ".csv"), lens_to_csv(lens));
    log << "wrote " << (config.out_dir / (stem + ".json")).string() << "\n"
        << "diagonal score: " << diag << "\n";
}

void cmd_ablate(const ExperimentConfig& config, std::ostream& log) {
    LoadedDataset ds = load_dataset(config.dataset);
    ModelBundle bundle = config.load_model();
    ReportMeta meta = make_meta(config, &bundle, ds.raw_text);
    SweepOptions opts{config.workers};
    CircuitSpec circuit = load_circuit(config);

    MeanTable means = mean_table(bundle, ds.instances, opts);
    AblationCurve nec = necessity_curve(bundle, circuit, ds.instances, means, opts);
    AblationCurve suf = sufficiency_curve(bundle, circuit, ds.instances, means, opts);
    std::vector<float> baseline = clean_deltas(bundle, ds.instances, config.workers);
    ConditionReport cond = evaluate_conditions(nec, suf, baseline,
                                               {config.c1_factor, config.c2_factor});

    write_text_atomic(config.out_dir / "ablation_necessity.json", curve_to_json(nec, meta));
    write_text_atomic(config.out_dir / "ablation_sufficiency.json", curve_to_json(suf, meta));
    SchemeConditionRow row{ds.instances.front().scheme, cond};
    write_text_atomic(config.out_dir / "conditions.csv",
                      conditions_to_csv(std::span<const SchemeConditionRow>(&row, 1)));
    log << "baseline " << cond.baseline_mean << ", necessity final " << cond.necessity_final
        << ", sufficiency final " << cond.sufficiency_final << "\n"
        << "C1=" << (cond.c1 ? "yes" : "no") << " C2=" << (cond.c2 ? "yes" : "no")
        << " C3=" << (cond.c3 ? "yes" : "no") << " accuracy=" << cond.accuracy << "\n";
}

void cmd_movers(const ExperimentConfig& config, std::ostream& log) {
    LoadedDataset ds = load_dataset(config.dataset);
    if (ds.pairs.empty()) throw_data("mover classification needs an all_term pairs dataset");
    for (const auto& pr : ds.pairs) {
        if (pr.intervention != Intervention::all_term) {
            throw_data("mover classification expects all_term pairs");
        }
    }
    ModelBundle bundle = config.load_model();
    ReportMeta meta = make_meta(config, &bundle, ds.raw_text);
    ValueSweepByRole sweeps =
        head_value_sweep_by_role(bundle, ds.pairs, Direction::denoise, SweepOptions{config.workers});
    auto movers = classify_movers(sweeps);

    write_text_atomic(config.out_dir / "movers.json", movers_to_json(movers, meta));
    write_text_atomic(config.out_dir / "sweep_value_all.json", sweep_to_json(sweeps.all, meta));
    int outliers = 0;
    for (const auto& m : movers) outliers += m.outlier ? 1 : 0;
    log << "wrote " << (config.out_dir / "movers.json").string() << "\n"
        << "outlier heads: " << outliers << "\n";
    for (const auto& m : movers) {
        if (m.outlier) {
            log << "  h" << m.head.layer << "." << m.head.head << " " << quadrant_name(m.quadrant)
                << " S=" << m.s_all << " PPD=" << m.ppd << "\n";
        }
    }
}

void cmd_subject_bias(const ExperimentConfig& config, std::ostream& log) {
    LoadedDataset ds = load_dataset(config.dataset);
    ModelBundle bundle = config.load_model();
    uint64_t seed = config.require_seed();
    auto pool = replacement_pool_for(ds.instances);

    std::vector<PromptPair> pairs;
    pairs.reserve(ds.instances.size());
    for (size_t i = 0; i < ds.instances.size(); ++i) {
        pairs.push_back(corrupt(ds.instances[i], Intervention::subject_term, seed + i + 1,
                                bundle.tokenizer, pool));
    }

    BatchRunner runner(bundle, config.workers);
    std::vector<std::vector<int>> clean_seqs, corr_seqs;
    std::vector<ScoreTokens> score;
    for (const auto& pr : pairs) {
        clean_seqs.push_back(pr.clean.tokens);
        corr_seqs.push_back(pr.corrupted.tokens);
        score.push_back({pr.clean.answer_token, pr.clean.distractor_token});
    }
    int last = pairs.front().clean.roles.last;
    std::vector<float> dplus = runner.deltas(clean_seqs, score, last);
    std::vector<float> dminus = runner.deltas(corr_seqs, score, last);
    std::vector<float> degradation(dplus.size());
    for (size_t i = 0; i < dplus.size(); ++i) degradation[i] = dplus[i] - dminus[i];
    BatchStats st = batch_stats(degradation);

    json per_sample = json::array();
    for (float d : degradation) per_sample.push_back(d);
    json j{{"kind", "subject_bias"},
           {"degradation", {{"mean", st.mean}, {"std", st.stddev}, {"n", st.count}}},
           {"per_sample", per_sample},
           {"meta",
            {{"model_fingerprint", bundle.weights_fingerprint},
             {"seed", config.seed},
             {"config_fingerprint", fingerprint_text(config.canonical_text())},
             {"dataset_fingerprint", fingerprint_text(ds.raw_text)}}}};
    std::filesystem::path out = config.out_dir / "subject_bias.json";
    write_text_atomic(out, j.dump(2) + "\n");
    log << "wrote " << out.string() << "\n"
        << "degradation: " << st.mean << " +/- " << st.stddev << " (n=" << st.count << ")\n";
}

void cmd_report(const ExperimentConfig& config, const std::filesystem::path& input,
                std::ostream& log) {
    json j = json::parse(read_file(input));
    std::string kind = j.value("kind", "");
    std::filesystem::path stem = config.out_dir / input.stem();

    if (kind == "patching_sweep") {
        int rows = static_cast<int>(j.at("cells").size());
        int cols = static_cast<int>(j.at("col_labels").size());
        std::vector<float> values;
        for (const auto& row : j.at("cells")) {
            for (const auto& v : row.at("mean")) {
                values.push_back(v.is_null() ? std::nanf("") : v.get<float>());
            }
        }
        write_text_atomic(stem.string() + ".ppm",
                          matrix_to_ppm(rows, cols, values));
        log << "wrote " << stem.string() + ".ppm" << "\n";
    } else if (kind == "ov_lens") {
        int k = static_cast<int>(j.at("labels").size());
        std::vector<float> values;
        for (const auto& row : j.at("matrix")) {
            for (const auto& v : row) values.push_back(v.get<float>());
        }
        write_text_atomic(stem.string() + ".ppm", matrix_to_ppm(k, k, values));
        log << "wrote " << stem.string() + ".ppm" << "\n";
    } else {
        throw_data("report rendering supports patching_sweep and ov_lens inputs, got '" + kind +
                   "'");
    }
}

}  // namespace syl
