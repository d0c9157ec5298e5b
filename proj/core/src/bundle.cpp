#include "sylloscope/bundle.hpp"

#include <cstring>
#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "sylloscope/checkpoint.hpp"
#include "sylloscope/errors.hpp"

namespace syl {
namespace {

void check_shape(const Tensor& t, std::vector<int64_t> expect, const std::string& name) {
    if (t.shape() != expect) {
        std::string got = "[", want = "[";
        for (auto d : t.shape()) got += std::to_string(d) + ",";
        for (auto d : expect) want += std::to_string(d) + ",";
        throw_model("tensor '" + name + "' has shape " + got + "], expected " + want + "]");
    }
}

void check_finite(const Tensor& t, const std::string& name) {
    if (!t.all_finite()) throw_model("tensor '" + name + "' contains non-finite values");
}

uint64_t fnv1a(uint64_t h, const void* data, size_t bytes) {
    const unsigned char* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < bytes; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

std::string hex64(uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace

void ModelConfig::validate() const {
    if (n_layers <= 0 || n_heads <= 0 || d_model <= 0 || d_head <= 0 || d_mlp <= 0 ||
        vocab_size <= 0 || max_positions <= 0) {
        throw_model("model config has non-positive dimension");
    }
    if (d_model != n_heads * d_head) throw_model("d_model must equal n_heads * d_head");
    if (ln_epsilon <= 0.0f) throw_model("ln_epsilon must be positive");
}

ModelBundle load_bundle(const std::filesystem::path& checkpoint_path,
                        const TokenizerPaths& tokenizer_paths) {
    CheckpointFile ckpt = CheckpointFile::open(checkpoint_path);

    // infer layer count from per-layer names
    int n_layers = 0;
    while (ckpt.has("h." + std::to_string(n_layers) + ".ln_1.weight")) ++n_layers;
    if (n_layers == 0) throw_model("checkpoint has no transformer blocks (h.0.ln_1.weight missing)");

    Tensor wte = ckpt.read_f32("wte.weight");
    Tensor wpe = ckpt.read_f32("wpe.weight");
    if (wte.rank() != 2 || wpe.rank() != 2) throw_model("embedding tensors must be rank 2");

    ModelConfig cfg;
    cfg.n_layers = n_layers;
    cfg.vocab_size = static_cast<int>(wte.dim(0));
    cfg.d_model = static_cast<int>(wte.dim(1));
    cfg.max_positions = static_cast<int>(wpe.dim(0));
    cfg.d_head = 64;  // GPT-2 family constant, overridden by config.json below
    cfg.n_heads = cfg.d_model / cfg.d_head;
    cfg.ln_epsilon = 1e-5f;

    auto cfg_json = checkpoint_path.parent_path() / "config.json";
    if (std::filesystem::exists(cfg_json)) {
        std::ifstream in(cfg_json);
        nlohmann::json j;
        try {
            in >> j;
            if (j.contains("n_head")) {
                cfg.n_heads = j["n_head"].get<int>();
                cfg.d_head = cfg.d_model / cfg.n_heads;
            }
            if (j.contains("layer_norm_epsilon")) cfg.ln_epsilon = j["layer_norm_epsilon"].get<float>();
        } catch (const nlohmann::json::exception& e) {
            throw_model("config.json next to checkpoint is invalid: " + std::string(e.what()));
        }
    }

    const int D = cfg.d_model;
    Tensor fc0 = ckpt.read_f32("h.0.mlp.c_fc.weight");
    if (fc0.rank() != 2 || fc0.dim(0) != D) throw_model("h.0.mlp.c_fc.weight must be [d_model, d_mlp]");
    cfg.d_mlp = static_cast<int>(fc0.dim(1));
    cfg.validate();

    ModelBundle b;
    b.config = cfg;
    b.token_embedding = std::move(wte);
    b.position_embedding = std::move(wpe);
    check_finite(b.token_embedding, "wte.weight");
    check_finite(b.position_embedding, "wpe.weight");

    uint64_t fp = 0xcbf29ce484222325ull;
    fp = fnv1a(fp, b.token_embedding.data(), b.token_embedding.size() * sizeof(float));
    fp = fnv1a(fp, b.position_embedding.data(), b.position_embedding.size() * sizeof(float));

    b.layers.resize(static_cast<size_t>(cfg.n_layers));
    for (int l = 0; l < cfg.n_layers; ++l) {
        const std::string p = "h." + std::to_string(l) + ".";
        LayerWeights& lw = b.layers[static_cast<size_t>(l)];

        lw.ln1_gamma = ckpt.read_f32(p + "ln_1.weight");
        lw.ln1_beta = ckpt.read_f32(p + "ln_1.bias");
        check_shape(lw.ln1_gamma, {D}, p + "ln_1.weight");
        check_shape(lw.ln1_beta, {D}, p + "ln_1.bias");

        Tensor qkv = ckpt.read_f32(p + "attn.c_attn.weight");
        Tensor qkv_b = ckpt.read_f32(p + "attn.c_attn.bias");
        check_shape(qkv, {D, 3 * D}, p + "attn.c_attn.weight");
        check_shape(qkv_b, {3 * D}, p + "attn.c_attn.bias");

        // split fused qkv columns into separate q/k/v matrices
        lw.w_q = Tensor({D, D});
        lw.w_k = Tensor({D, D});
        lw.w_v = Tensor({D, D});
        for (int r = 0; r < D; ++r) {
            const float* src = qkv.row(r);
            std::memcpy(lw.w_q.row(r), src, sizeof(float) * static_cast<size_t>(D));
            std::memcpy(lw.w_k.row(r), src + D, sizeof(float) * static_cast<size_t>(D));
            std::memcpy(lw.w_v.row(r), src + 2 * D, sizeof(float) * static_cast<size_t>(D));
        }
        lw.b_q = Tensor({D});
        lw.b_k = Tensor({D});
        lw.b_v = Tensor({D});
        std::memcpy(lw.b_q.data(), qkv_b.data(), sizeof(float) * static_cast<size_t>(D));
        std::memcpy(lw.b_k.data(), qkv_b.data() + D, sizeof(float) * static_cast<size_t>(D));
        std::memcpy(lw.b_v.data(), qkv_b.data() + 2 * D, sizeof(float) * static_cast<size_t>(D));

        lw.w_o = ckpt.read_f32(p + "attn.c_proj.weight");
        lw.b_o = ckpt.read_f32(p + "attn.c_proj.bias");
        check_shape(lw.w_o, {D, D}, p + "attn.c_proj.weight");
        check_shape(lw.b_o, {D}, p + "attn.c_proj.bias");

        lw.ln2_gamma = ckpt.read_f32(p + "ln_2.weight");
        lw.ln2_beta = ckpt.read_f32(p + "ln_2.bias");
        check_shape(lw.ln2_gamma, {D}, p + "ln_2.weight");
        check_shape(lw.ln2_beta, {D}, p + "ln_2.bias");

        lw.w_in = ckpt.read_f32(p + "mlp.c_fc.weight");
        lw.b_in = ckpt.read_f32(p + "mlp.c_fc.bias");
        lw.w_out = ckpt.read_f32(p + "mlp.c_proj.weight");
        lw.b_out = ckpt.read_f32(p + "mlp.c_proj.bias");
        check_shape(lw.w_in, {D, cfg.d_mlp}, p + "mlp.c_fc.weight");
        check_shape(lw.b_in, {cfg.d_mlp}, p + "mlp.c_fc.bias");
        check_shape(lw.w_out, {cfg.d_mlp, D}, p + "mlp.c_proj.weight");
        check_shape(lw.b_out, {D}, p + "mlp.c_proj.bias");

        for (const Tensor* t : {&lw.ln1_gamma, &lw.ln1_beta, &lw.w_q, &lw.w_k, &lw.w_v,
                                &lw.b_q, &lw.b_k, &lw.b_v, &lw.w_o, &lw.b_o,
                                &lw.ln2_gamma, &lw.ln2_beta, &lw.w_in, &lw.b_in,
                                &lw.w_out, &lw.b_out}) {
            if (!t->all_finite()) throw_model("layer " + std::to_string(l) + " contains non-finite values");
            fp = fnv1a(fp, t->data(), static_cast<size_t>(t->size()) * sizeof(float));
        }
    }

    b.lnf_gamma = ckpt.read_f32("ln_f.weight");
    b.lnf_beta = ckpt.read_f32("ln_f.bias");
    check_shape(b.lnf_gamma, {D}, "ln_f.weight");
    check_shape(b.lnf_beta, {D}, "ln_f.bias");
    check_finite(b.lnf_gamma, "ln_f.weight");
    check_finite(b.lnf_beta, "ln_f.bias");
    fp = fnv1a(fp, b.lnf_gamma.data(), static_cast<size_t>(b.lnf_gamma.size()) * sizeof(float));
    fp = fnv1a(fp, b.lnf_beta.data(), static_cast<size_t>(b.lnf_beta.size()) * sizeof(float));

    // tied unembedding: materialized transpose of the token embedding
    b.unembedding = Tensor({D, cfg.vocab_size});
    for (int v = 0; v < cfg.vocab_size; ++v) {
        const float* src = b.token_embedding.row(v);
        for (int i = 0; i < D; ++i) b.unembedding(i, v) = src[i];
    }

    b.tokenizer = Tokenizer::load(tokenizer_paths.vocab_json, tokenizer_paths.merges_txt);
    if (b.tokenizer.vocab_size() != cfg.vocab_size) {
        throw_model("tokenizer vocab size " + std::to_string(b.tokenizer.vocab_size()) +
                    " does not match checkpoint vocab " + std::to_string(cfg.vocab_size));
    }

    b.weights_fingerprint = hex64(fp);
    return b;
}

ModelBundle load_bundle_dir(const std::filesystem::path& model_dir) {
    return load_bundle(model_dir / "model.safetensors",
                       {model_dir / "vocab.json", model_dir / "merges.txt"});
}

}  // namespace syl
