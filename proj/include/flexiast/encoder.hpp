#pragma once

#include <cmath>
#include <random>
#include <string>
#include <vector>

#include "flexiast/types.hpp"

namespace flexiast {

struct EncoderConfig {
    int d = 64;
    int n_layers = 4;
    int n_heads = 4;
    int d_ff = 256;
    int n_classes = 8;

    void validate() const {
        if (d < 1 || n_layers < 0 || n_heads < 1 || d_ff < 1 || n_classes < 1)
            throw Error("EncoderConfig: sizes must be positive");
        if (d % n_heads != 0)
            throw Error("EncoderConfig: d=" + std::to_string(d) + " not divisible by n_heads=" +
                        std::to_string(n_heads));
    }
    bool operator==(const EncoderConfig&) const = default;
};

/// Pre-norm transformer encoder plus classifier on the CLS output. Vectors
/// (gains, biases) are stored as 1 x n matrices so every block can be
/// visited uniformly.
template <typename T>
struct EncoderParams {
    struct Layer {
        Matrix<T> ln1_g, ln1_b;
        Matrix<T> wq, wk, wv, wo;  // d x d, heads are contiguous column blocks
        Matrix<T> ln2_g, ln2_b;
        Matrix<T> w1, b1;          // d x d_ff, 1 x d_ff
        Matrix<T> w2, b2;          // d_ff x d, 1 x d
    };

    EncoderConfig cfg;
    std::vector<Layer> layers;
    Matrix<T> lnf_g, lnf_b;
    Matrix<T> wc, bc;  // d x n_classes, 1 x n_classes

    static EncoderParams zeros(const EncoderConfig& cfg) {
        cfg.validate();
        EncoderParams p;
        p.cfg = cfg;
        const int d = cfg.d;
        for (int l = 0; l < cfg.n_layers; ++l) {
            Layer L;
            L.ln1_g = Matrix<T>::Zero(1, d);
            L.ln1_b = Matrix<T>::Zero(1, d);
            L.wq = Matrix<T>::Zero(d, d);
            L.wk = Matrix<T>::Zero(d, d);
            L.wv = Matrix<T>::Zero(d, d);
            L.wo = Matrix<T>::Zero(d, d);
            L.ln2_g = Matrix<T>::Zero(1, d);
            L.ln2_b = Matrix<T>::Zero(1, d);
            L.w1 = Matrix<T>::Zero(d, cfg.d_ff);
            L.b1 = Matrix<T>::Zero(1, cfg.d_ff);
            L.w2 = Matrix<T>::Zero(cfg.d_ff, d);
            L.b2 = Matrix<T>::Zero(1, d);
            p.layers.push_back(std::move(L));
        }
        p.lnf_g = Matrix<T>::Zero(1, d);
        p.lnf_b = Matrix<T>::Zero(1, d);
        p.wc = Matrix<T>::Zero(d, cfg.n_classes);
        p.bc = Matrix<T>::Zero(1, cfg.n_classes);
        return p;
    }

    /// Unit norm gains, zero biases, weights ~ N(0, 1/fan_in).
    template <typename Rng>
    static EncoderParams init(const EncoderConfig& cfg, Rng& rng) {
        auto p = zeros(cfg);
        std::normal_distribution<double> n01(0.0, 1.0);
        auto fill = [&](Matrix<T>& m, double stddev) {
            for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = T(stddev * n01(rng));
        };
        const double sd = 1.0 / std::sqrt(double(cfg.d));
        for (auto& L : p.layers) {
            L.ln1_g.setOnes();
            L.ln2_g.setOnes();
            fill(L.wq, sd);
            fill(L.wk, sd);
            fill(L.wv, sd);
            fill(L.wo, sd);
            fill(L.w1, sd);
            fill(L.w2, 1.0 / std::sqrt(double(cfg.d_ff)));
        }
        p.lnf_g.setOnes();
        fill(p.wc, sd);
        return p;
    }

    /// Every parameter block in a fixed order.
    std::vector<Matrix<T>*> blocks() {
        std::vector<Matrix<T>*> out;
        for (auto& L : layers)
            for (auto* m : {&L.ln1_g, &L.ln1_b, &L.wq, &L.wk, &L.wv, &L.wo, &L.ln2_g, &L.ln2_b,
                            &L.w1, &L.b1, &L.w2, &L.b2})
                out.push_back(m);
        for (auto* m : {&lnf_g, &lnf_b, &wc, &bc}) out.push_back(m);
        return out;
    }
    std::vector<const Matrix<T>*> blocks() const {
        std::vector<const Matrix<T>*> out;
        for (auto* m : const_cast<EncoderParams*>(this)->blocks()) out.push_back(m);
        return out;
    }

    static std::vector<std::string> block_names(const EncoderConfig& cfg) {
        std::vector<std::string> out;
        for (int l = 0; l < cfg.n_layers; ++l)
            for (const char* n : {"ln1_g", "ln1_b", "wq", "wk", "wv", "wo", "ln2_g", "ln2_b", "w1",
                                  "b1", "w2", "b2"})
                out.push_back("layer" + std::to_string(l) + "." + n);
        for (const char* n : {"lnf_g", "lnf_b", "wc", "bc"}) out.push_back(n);
        return out;
    }

    EncoderParams zeros_like() const { return zeros(cfg); }

    EncoderParams& operator+=(const EncoderParams& o) {
        auto a = blocks();
        auto b = o.blocks();
        for (std::size_t i = 0; i < a.size(); ++i) *a[i] += *b[i];
        return *this;
    }

    bool all_finite() const {
        for (auto* m : blocks())
            if (!m->allFinite()) return false;
        return true;
    }

    template <typename U>
    EncoderParams<U> cast() const {
        auto out = EncoderParams<U>::zeros(cfg);
        auto dst = out.blocks();
        auto src = blocks();
        for (std::size_t i = 0; i < src.size(); ++i) *dst[i] = src[i]->template cast<U>();
        return out;
    }
};

namespace detail {

inline constexpr double kLayerNormEps = 1e-5;

template <typename T>
struct NormCache {
    Matrix<T> xhat;
    Vector<T> rstd;
};

template <typename T>
Matrix<T> layer_norm(const Matrix<T>& x, const Matrix<T>& g, const Matrix<T>& b,
                     NormCache<T>& c) {
    const auto n = x.rows();
    const T inv_d = T(1) / T(x.cols());
    c.xhat.resize(n, x.cols());
    c.rstd.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const T mu = x.row(i).sum() * inv_d;
        auto centered = (x.row(i).array() - mu).eval();
        const T var = centered.square().sum() * inv_d;
        c.rstd(i) = T(1) / std::sqrt(var + T(kLayerNormEps));
        c.xhat.row(i) = centered * c.rstd(i);
    }
    Matrix<T> y = c.xhat.array().rowwise() * g.row(0).array();
    y.array().rowwise() += b.row(0).array();
    return y;
}

/// Returns dL/dx; accumulates gain and offset gradients.
template <typename T>
Matrix<T> layer_norm_backward(const Matrix<T>& dy, const Matrix<T>& g, const NormCache<T>& c,
                              Matrix<T>& dg, Matrix<T>& db) {
    dg += (dy.array() * c.xhat.array()).colwise().sum().matrix();
    db += dy.colwise().sum();
    Matrix<T> dxhat = dy.array().rowwise() * g.row(0).array();
    const T inv_d = T(1) / T(dy.cols());
    Matrix<T> dx(dy.rows(), dy.cols());
    for (Eigen::Index i = 0; i < dy.rows(); ++i) {
        const T m1 = dxhat.row(i).sum() * inv_d;
        const T m2 = dxhat.row(i).dot(c.xhat.row(i)) * inv_d;
        dx.row(i) = c.rstd(i) * (dxhat.row(i).array() - m1 - c.xhat.row(i).array() * m2);
    }
    return dx;
}

template <typename T>
inline T gelu(T x) {
    constexpr double k = 0.7978845608028654;  // sqrt(2/pi)
    return T(0.5) * x * (T(1) + std::tanh(T(k) * (x + T(0.044715) * x * x * x)));
}

template <typename T>
inline T gelu_grad(T x) {
    constexpr double k = 0.7978845608028654;
    const T th = std::tanh(T(k) * (x + T(0.044715) * x * x * x));
    return T(0.5) * (T(1) + th) +
           T(0.5) * x * (T(1) - th * th) * T(k) * (T(1) + T(3 * 0.044715) * x * x);
}

template <typename T>
void softmax_rows(Matrix<T>& s) {
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
        const T m = s.row(i).maxCoeff();
        s.row(i) = (s.row(i).array() - m).exp();
        s.row(i) /= s.row(i).sum();
    }
}

}  // namespace detail

/// Intermediate activations kept for the backward pass. `attn` holds the
/// per-head attention weights and doubles as a debug view.
template <typename T>
struct EncoderCache {
    struct Layer {
        Matrix<T> x_in;
        detail::NormCache<T> ln1;
        Matrix<T> h1, q, k, v, o;
        std::vector<Matrix<T>> attn;
        Matrix<T> x_mid;
        detail::NormCache<T> ln2;
        Matrix<T> h2, z1, act;
    };
    std::vector<Layer> layers;
    Matrix<T> x_out;
    detail::NormCache<T> lnf;
    Matrix<T> cls_repr;
};

template <typename T>
RowVector<T> forward(const Matrix<T>& tokens, const EncoderParams<T>& p, EncoderCache<T>* cache) {
    const auto& cfg = p.cfg;
    if (tokens.cols() != cfg.d)
        throw Error("encoder forward: token width " + std::to_string(tokens.cols()) +
                    " != d=" + std::to_string(cfg.d));
    if (tokens.rows() < 1) throw Error("encoder forward: empty token sequence");
    const int dh = cfg.d / cfg.n_heads;
    const T scale = T(1) / std::sqrt(T(dh));
    EncoderCache<T> local;
    EncoderCache<T>& c = cache ? *cache : local;
    c.layers.resize(p.layers.size());

    Matrix<T> x = tokens;
    for (std::size_t l = 0; l < p.layers.size(); ++l) {
        const auto& L = p.layers[l];
        auto& C = c.layers[l];
        C.x_in = x;
        C.h1 = detail::layer_norm(x, L.ln1_g, L.ln1_b, C.ln1);
        C.q.noalias() = C.h1 * L.wq;
        C.k.noalias() = C.h1 * L.wk;
        C.v.noalias() = C.h1 * L.wv;
        C.o.resize(x.rows(), cfg.d);
        C.attn.resize(cfg.n_heads);
        for (int h = 0; h < cfg.n_heads; ++h) {
            auto& a = C.attn[h];
            a.noalias() = C.q.middleCols(h * dh, dh) * C.k.middleCols(h * dh, dh).transpose();
            a *= scale;
            detail::softmax_rows(a);
            C.o.middleCols(h * dh, dh).noalias() = a * C.v.middleCols(h * dh, dh);
        }
        x.noalias() += C.o * L.wo;
        C.x_mid = x;
        C.h2 = detail::layer_norm(x, L.ln2_g, L.ln2_b, C.ln2);
        C.z1.noalias() = C.h2 * L.w1;
        C.z1.rowwise() += L.b1.row(0);
        C.act = C.z1.unaryExpr([](T v) { return detail::gelu(v); });
        x.noalias() += C.act * L.w2;
        x.rowwise() += L.b2.row(0);
    }
    c.x_out = x;
    Matrix<T> cls = x.topRows(1);
    c.cls_repr = detail::layer_norm(cls, p.lnf_g, p.lnf_b, c.lnf);
    RowVector<T> logits = c.cls_repr * p.wc;
    logits += p.bc.row(0);
    return logits;
}

template <typename T>
RowVector<T> forward(const Matrix<T>& tokens, const EncoderParams<T>& p) {
    return forward<T>(tokens, p, nullptr);
}

/// Reverse pass. Accumulates parameter gradients into `grads` and returns
/// d(loss)/d(tokens).
template <typename T>
Matrix<T> backward(const EncoderParams<T>& p, const EncoderCache<T>& c,
                   const RowVector<T>& logit_grad, EncoderParams<T>& grads) {
    const auto& cfg = p.cfg;
    if (logit_grad.size() != cfg.n_classes) throw Error("encoder backward: logit width mismatch");
    if (c.layers.size() != p.layers.size()) throw Error("encoder backward: cache/layer mismatch");
    const int dh = cfg.d / cfg.n_heads;
    const T scale = T(1) / std::sqrt(T(dh));

    grads.wc.noalias() += c.cls_repr.transpose() * logit_grad;
    grads.bc += logit_grad;
    Matrix<T> dcls = logit_grad * p.wc.transpose();
    Matrix<T> dx = Matrix<T>::Zero(c.x_out.rows(), cfg.d);
    dx.topRows(1) = detail::layer_norm_backward(dcls, p.lnf_g, c.lnf, grads.lnf_g, grads.lnf_b);

    for (std::size_t li = p.layers.size(); li-- > 0;) {
        const auto& L = p.layers[li];
        const auto& C = c.layers[li];
        auto& G = grads.layers[li];

        // MLP branch
        G.w2.noalias() += C.act.transpose() * dx;
        G.b2 += dx.colwise().sum();
        Matrix<T> dz = dx * L.w2.transpose();
        dz.array() *= C.z1.unaryExpr([](T v) { return detail::gelu_grad(v); }).array();
        G.w1.noalias() += C.h2.transpose() * dz;
        G.b1 += dz.colwise().sum();
        Matrix<T> dh2 = dz * L.w1.transpose();
        dx += detail::layer_norm_backward(dh2, L.ln2_g, C.ln2, G.ln2_g, G.ln2_b);

        // attention branch
        G.wo.noalias() += C.o.transpose() * dx;
        Matrix<T> dout = dx * L.wo.transpose();
        Matrix<T> dq(dx.rows(), cfg.d), dk(dx.rows(), cfg.d), dv(dx.rows(), cfg.d);
        for (int h = 0; h < cfg.n_heads; ++h) {
            const auto& a = C.attn[h];
            const auto doh = dout.middleCols(h * dh, dh);
            dv.middleCols(h * dh, dh).noalias() = a.transpose() * doh;
            Matrix<T> da = doh * C.v.middleCols(h * dh, dh).transpose();
            Vector<T> rs = (da.array() * a.array()).rowwise().sum();
            Matrix<T> ds = a.array() * (da.colwise() - rs).array();
            ds *= scale;
            dq.middleCols(h * dh, dh).noalias() = ds * C.k.middleCols(h * dh, dh);
            dk.middleCols(h * dh, dh).noalias() = ds.transpose() * C.q.middleCols(h * dh, dh);
        }
        G.wq.noalias() += C.h1.transpose() * dq;
        G.wk.noalias() += C.h1.transpose() * dk;
        G.wv.noalias() += C.h1.transpose() * dv;
        Matrix<T> dh1 = dq * L.wq.transpose();
        dh1.noalias() += dk * L.wk.transpose();
        dh1.noalias() += dv * L.wv.transpose();
        dx += detail::layer_norm_backward(dh1, L.ln1_g, C.ln1, G.ln1_g, G.ln1_b);
    }
    return dx;
}

}  // namespace flexiast
