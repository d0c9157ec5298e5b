#include "sylloscope/blocks.hpp"

#include <cmath>

#include <Eigen/Dense>

namespace syl::blocks {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;
using Stride = Eigen::OuterStride<>;
using BlockMap = Eigen::Map<const RowMat, 0, Stride>;

void layer_norm(const float* x, int64_t rows, int d, const float* gamma, const float* beta,
                float eps, float* out) {
    Eigen::Map<const Eigen::VectorXf> g(gamma, d), b(beta, d);
    for (int64_t r = 0; r < rows; ++r) {
        Eigen::Map<const Eigen::VectorXf> xi(x + r * d, d);
        Eigen::Map<Eigen::VectorXf> yi(out + r * d, d);
        float mean = xi.mean();
        float var = (xi.array() - mean).square().mean();
        float inv = 1.0f / std::sqrt(var + eps);
        yi = ((xi.array() - mean) * inv).matrix().cwiseProduct(g) + b;
    }
}

void linear(const float* x, int64_t rows, int in_dim, int out_dim, const float* w,
            const float* b, float* out) {
    CMapMat X(x, rows, in_dim);
    CMapMat W(w, in_dim, out_dim);
    MapMat Y(out, rows, out_dim);
    Y.noalias() = X * W;
    if (b != nullptr) {
        Y.rowwise() += Eigen::Map<const Eigen::RowVectorXf>(b, out_dim);
    }
}

void gelu(float* x, int64_t n) {
    // 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
    constexpr float kSqrt2OverPi = 0.7978845608028654f;
    Eigen::Map<Eigen::ArrayXf> a(x, n);
    a = 0.5f * a * (1.0f + ((kSqrt2OverPi * (a + 0.044715f * a.cube())).tanh()));
}

void causal_softmax(float* scores, int n) {
    for (int i = 0; i < n; ++i) {
        float* row = scores + static_cast<int64_t>(i) * n;
        float mx = row[0];
        for (int j = 1; j <= i; ++j) mx = std::max(mx, row[j]);
        float sum = 0.0f;
        for (int j = 0; j <= i; ++j) {
            row[j] = std::exp(row[j] - mx);
            sum += row[j];
        }
        float inv = 1.0f / sum;
        for (int j = 0; j <= i; ++j) row[j] *= inv;
        for (int j = i + 1; j < n; ++j) row[j] = 0.0f;
    }
}

void attention_details(const LayerWeights& lw, const ModelConfig& cfg, const float* xn, int n,
                       AttnScratch& scratch, Tensor* patterns, Tensor* values, Tensor* head_outs) {
    const int D = cfg.d_model;
    const int H = cfg.n_heads;
    const int d = cfg.d_head;
    const float scale = 1.0f / std::sqrt(static_cast<float>(d));

    auto ensure = [&](Tensor& t, std::vector<int64_t> shape) {
        if (t.shape() != shape) t = Tensor(shape);
    };
    ensure(scratch.q, {n, D});
    ensure(scratch.k, {n, D});
    ensure(scratch.v, {n, D});
    ensure(scratch.ctx, {n, d});
    ensure(scratch.scores, {n, n});

    linear(xn, n, D, D, lw.w_q.data(), lw.b_q.data(), scratch.q.data());
    linear(xn, n, D, D, lw.w_k.data(), lw.b_k.data(), scratch.k.data());
    linear(xn, n, D, D, lw.w_v.data(), lw.b_v.data(), scratch.v.data());

    for (int h = 0; h < H; ++h) {
        BlockMap Qh(scratch.q.data() + h * d, n, d, Stride(D));
        BlockMap Kh(scratch.k.data() + h * d, n, d, Stride(D));
        BlockMap Vh(scratch.v.data() + h * d, n, d, Stride(D));

        MapMat S(scratch.scores.data(), n, n);
        S.noalias() = (Qh * Kh.transpose()) * scale;
        causal_softmax(scratch.scores.data(), n);

        if (patterns != nullptr) {
            std::copy(scratch.scores.flat().begin(), scratch.scores.flat().end(),
                      patterns[h].data());
        }
        if (values != nullptr) {
            MapMat(values[h].data(), n, d) = Vh;
        }
        if (head_outs != nullptr) {
            MapMat C(scratch.ctx.data(), n, d);
            C.noalias() = S * Vh;
            // head h's slice of w_o: rows [h*d, (h+1)*d)
            CMapMat Wo(lw.w_o.data() + static_cast<int64_t>(h) * d * D, d, D);
            MapMat(head_outs[h].data(), n, D).noalias() = C * Wo;
        }
    }
}

float logit_at(const ModelBundle& bundle, const float* lnf_row, int token) {
    const int D = bundle.config.d_model;
    Eigen::Map<const Eigen::VectorXf> x(lnf_row, D);
    Eigen::Map<const Eigen::VectorXf> wu(bundle.token_embedding.row(token), D);
    return x.dot(wu);
}

}  // namespace syl::blocks
