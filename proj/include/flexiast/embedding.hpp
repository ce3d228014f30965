#pragma once

#include <memory>
#include <random>

#include "flexiast/resize.hpp"
#include "flexiast/spectrogram.hpp"

namespace flexiast {

/// Patch-size dependent parameters: patch-embedding filters at the base
/// shape, positional grid at the canonical input's base grid, and CLS.
template <typename T>
struct EmbeddingBank {
    PatchShape base_shape{16, 16};
    int d = 0;
    int canon_freq = 0;  // canonical input size fixing the positional grid
    int canon_time = 0;
    Matrix<T> omega;     // d x base_shape.area(), row k = vec(omega_k)
    Matrix<T> pos;       // pos_grid.count() x d
    RowVector<T> cls;    // 1 x d

    Grid pos_grid() const { return grid_for(canon_freq, canon_time, base_shape); }

    static EmbeddingBank zeros(int d, PatchShape base, int canon_freq, int canon_time) {
        require_valid(base, "EmbeddingBank base shape");
        if (d < 1 || canon_freq < 1 || canon_time < 1)
            throw Error("EmbeddingBank: width and canonical size must be positive");
        EmbeddingBank b;
        b.base_shape = base;
        b.d = d;
        b.canon_freq = canon_freq;
        b.canon_time = canon_time;
        b.omega = Matrix<T>::Zero(d, base.area());
        b.pos = Matrix<T>::Zero(b.pos_grid().count(), d);
        b.cls = RowVector<T>::Zero(d);
        return b;
    }

    template <typename Rng>
    static EmbeddingBank random(int d, PatchShape base, int canon_freq, int canon_time, Rng& rng) {
        auto b = zeros(d, base, canon_freq, canon_time);
        std::normal_distribution<double> n01(0.0, 1.0);
        const double w_std = 1.0 / std::sqrt(double(base.area()));
        for (Eigen::Index i = 0; i < b.omega.size(); ++i) b.omega.data()[i] = T(w_std * n01(rng));
        for (Eigen::Index i = 0; i < b.pos.size(); ++i) b.pos.data()[i] = T(0.02 * n01(rng));
        for (Eigen::Index i = 0; i < b.cls.size(); ++i) b.cls.data()[i] = T(0.02 * n01(rng));
        return b;
    }

    void validate() const {
        if (omega.rows() != d || omega.cols() != base_shape.area())
            throw Error("EmbeddingBank: omega must be d x base area");
        if (pos.rows() != pos_grid().count() || pos.cols() != d)
            throw Error("EmbeddingBank: positional grid does not match canonical input");
        if (cls.size() != d) throw Error("EmbeddingBank: CLS width mismatch");
        if (!omega.allFinite() || !pos.allFinite() || !cls.allFinite())
            throw Error("EmbeddingBank: non-finite parameters");
    }

    template <typename U>
    EmbeddingBank<U> cast() const {
        return {base_shape, d, canon_freq, canon_time, omega.template cast<U>(),
                pos.template cast<U>(), cls.template cast<U>()};
    }
};

template <typename T>
struct Patches {
    Matrix<T> rows;  // one flattened patch per row, grid order
    Grid grid;
    PatchShape shape;
};

template <typename T>
struct TokenSequence {
    Matrix<T> tokens;  // (1 + h*w) x d, CLS first
    Grid grid;
    PatchShape patch_shape;
};

/// Non-overlapping tiling of a zero-padded (right/bottom) spectrogram,
/// frequency-major.
template <typename T>
Patches<T> patchify(const Matrix<T>& x, PatchShape shape) {
    require_valid(shape, "patchify");
    const int f = static_cast<int>(x.rows());
    const int t = static_cast<int>(x.cols());
    const Grid g = grid_for(f, t, shape);
    Patches<T> out{Matrix<T>::Zero(g.count(), shape.area()), g, shape};
    for (int gi = 0; gi < g.h; ++gi) {
        for (int gj = 0; gj < g.w; ++gj) {
            auto row = out.rows.row(gi * g.w + gj);
            const int f0 = gi * shape.freq;
            const int t0 = gj * shape.time;
            const int nf = std::min(shape.freq, f - f0);
            const int nt = std::min(shape.time, t - t0);
            for (int a = 0; a < nf; ++a)
                for (int b = 0; b < nt; ++b) row(a * shape.time + b) = x(f0 + a, t0 + b);
        }
    }
    return out;
}

template <typename T>
Patches<T> patchify(const Spectrogram<T>& spec, PatchShape shape) {
    return patchify(spec.data, shape);
}

/// Bilinearly resamples every channel of a positional grid.
template <typename T>
Matrix<T> resize_positions(const Matrix<T>& pos, Grid from, Grid to) {
    if (to.h < 1 || to.w < 1) throw Error("resize_positions: empty target grid");
    if (pos.rows() != from.count()) throw Error("resize_positions: grid/row mismatch");
    if (from == to) return pos;
    const auto op = build_bilinear<T>({from.h, from.w}, {to.h, to.w});
    return op.matrix * pos;
}

/// Gradients of the embedding parameters, at either the resized or base shape.
template <typename T>
struct BankGrad {
    Matrix<T> omega;
    Matrix<T> pos;
    RowVector<T> cls;

    static BankGrad zeros(int d, int area, int n_pos) {
        return {Matrix<T>::Zero(d, area), Matrix<T>::Zero(n_pos, d), RowVector<T>::Zero(d)};
    }
    BankGrad& operator+=(const BankGrad& o) {
        omega += o.omega;
        pos += o.pos;
        cls += o.cls;
        return *this;
    }
};

/// A bank resized to one patch shape and token grid. Built once per step or
/// evaluation pass; embedding individual spectrograms is then read-only.
template <typename T>
class EmbedPlan {
public:
    EmbedPlan(const EmbeddingBank<T>& bank, PatchShape shape, Grid grid, ResizeKind kind,
              AxisMode axis, const OperatorCache<T>* cache = nullptr)
        : shape_(shape), grid_(grid) {
        require_valid(shape, "embed");
        if (axis == AxisMode::TimeOnly && shape.freq != bank.base_shape.freq)
            throw Error("time-only embedding needs patch frequency " +
                        std::to_string(bank.base_shape.freq) + ", got " + shape.str());
        if (axis == AxisMode::FreqOnly && shape.time != bank.base_shape.time)
            throw Error("freq-only embedding needs patch time " +
                        std::to_string(bank.base_shape.time) + ", got " + shape.str());
        const Grid g0 = bank.pos_grid();
        weight_op_ = cache ? cache->get(bank.base_shape, shape, kind)
                           : std::make_shared<const ResizeOperator<T>>(
                                 build_operator<T>(bank.base_shape, shape, kind));
        pos_op_ = cache ? cache->get({g0.h, g0.w}, {grid.h, grid.w}, ResizeKind::Bilinear)
                        : std::make_shared<const ResizeOperator<T>>(
                              build_bilinear<T>({g0.h, g0.w}, {grid.h, grid.w}));
        omega_hat_ = shape == bank.base_shape ? bank.omega : weight_op_->apply(bank.omega);
        pos_hat_ = grid == g0 ? bank.pos : Matrix<T>(pos_op_->matrix * bank.pos);
        cls_ = bank.cls;
        identity_weights_ = shape == bank.base_shape;
        identity_pos_ = grid == g0;
    }

    EmbedPlan(const EmbeddingBank<T>& bank, PatchShape shape, int freq, int time, ResizeKind kind,
              AxisMode axis, const OperatorCache<T>* cache = nullptr)
        : EmbedPlan(bank, shape, grid_for(freq, time, shape), kind, axis, cache) {}

    PatchShape shape() const { return shape_; }
    Grid grid() const { return grid_; }
    const Matrix<T>& omega_hat() const { return omega_hat_; }
    const Matrix<T>& pos_hat() const { return pos_hat_; }

    TokenSequence<T> embed(const Patches<T>& p) const {
        if (p.grid != grid_ || p.shape != shape_) throw Error("embed: patches do not match plan");
        const auto d = omega_hat_.rows();
        TokenSequence<T> ts{Matrix<T>(1 + grid_.count(), d), grid_, shape_};
        ts.tokens.row(0) = cls_;
        ts.tokens.bottomRows(grid_.count()).noalias() = p.rows * omega_hat_.transpose();
        ts.tokens.bottomRows(grid_.count()) += pos_hat_;
        return ts;
    }

    TokenSequence<T> embed(const Spectrogram<T>& spec) const {
        return embed(patchify(spec.data, shape_));
    }

    /// Accumulates d(loss)/d(resized params) for one item given d(loss)/d(tokens).
    void accumulate(const Patches<T>& p, const Matrix<T>& token_grad, BankGrad<T>& g) const {
        const auto body = token_grad.bottomRows(grid_.count());
        g.omega.noalias() += body.transpose() * p.rows;
        g.pos += body;
        g.cls += token_grad.row(0);
    }

    BankGrad<T> zero_grad() const {
        return BankGrad<T>::zeros(static_cast<int>(omega_hat_.rows()), shape_.area(),
                                  grid_.count());
    }

    /// Pulls resized-space gradients back to the base parameterisation
    /// through the adjoints of the fixed resize maps.
    BankGrad<T> pullback(const BankGrad<T>& g) const {
        BankGrad<T> out;
        out.omega = identity_weights_ ? g.omega : weight_op_->apply_adjoint(g.omega);
        out.pos = identity_pos_ ? g.pos : Matrix<T>(pos_op_->matrix.transpose() * g.pos);
        out.cls = g.cls;
        return out;
    }

private:
    PatchShape shape_;
    Grid grid_;
    std::shared_ptr<const ResizeOperator<T>> weight_op_;
    std::shared_ptr<const ResizeOperator<T>> pos_op_;
    Matrix<T> omega_hat_;
    Matrix<T> pos_hat_;
    RowVector<T> cls_;
    bool identity_weights_ = false;
    bool identity_pos_ = false;
};

template <typename T>
TokenSequence<T> embed(const Spectrogram<T>& spec, const EmbeddingBank<T>& bank, PatchShape shape,
                       ResizeKind kind, AxisMode axis = AxisMode::Full) {
    EmbedPlan<T> plan(bank, shape, spec.freq(), spec.time(), kind, axis);
    return plan.embed(spec);
}

/// Re-bases a bank trained at one patch shape onto another: PI-resize for
/// the filters, bilinear for the positional grid.
template <typename T>
EmbeddingBank<T> init_from_fixed(const EmbeddingBank<T>& src, PatchShape base_shape) {
    src.validate();
    require_valid(base_shape, "init_from_fixed");
    EmbeddingBank<T> out = src;
    out.base_shape = base_shape;
    if (base_shape != src.base_shape)
        out.omega = build_pi_resize<T>(src.base_shape, base_shape).apply(src.omega);
    out.pos = resize_positions(src.pos, src.pos_grid(), out.pos_grid());
    return out;
}

}  // namespace flexiast
