#pragma once

#include <cmath>
#include <iomanip>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <ostream>
#include <span>
#include <tuple>

#include <Eigen/SVD>

#include "flexiast/types.hpp"

namespace flexiast {

/// Singular values below this fraction of the largest are dropped by the
/// pseudoinverse.
inline constexpr double kPinvTolerance = 1e-6;

/// Dense linear map between flattened patch spaces. Rows index the target
/// patch (frequency-major), columns the source patch.
template <typename T>
struct ResizeOperator {
    PatchShape source;
    PatchShape target;
    ResizeKind kind = ResizeKind::Bilinear;
    Matrix<T> matrix;

    /// Resizes a stack of flattened patches, one per row.
    Matrix<T> apply(const Matrix<T>& stack) const {
        if (stack.cols() != source.area())
            throw Error("resize apply: slice length " + std::to_string(stack.cols()) +
                        " does not match source " + source.str());
        return stack * matrix.transpose();
    }

    /// Adjoint of apply: maps target-space rows back to source space.
    Matrix<T> apply_adjoint(const Matrix<T>& stack) const {
        if (stack.cols() != target.area())
            throw Error("resize adjoint: slice length " + std::to_string(stack.cols()) +
                        " does not match target " + target.str());
        return stack * matrix;
    }

    template <typename U>
    ResizeOperator<U> cast() const {
        return {source, target, kind, matrix.template cast<U>()};
    }
};

/// 1-D align-corners linear interpolation matrix (m x n), mapping n samples to m.
inline Matrix<double> linear_interp_1d(int n, int m) {
    if (n < 1 || m < 1) throw Error("linear_interp_1d: sizes must be positive");
    Matrix<double> a = Matrix<double>::Zero(m, n);
    if (n == 1) {
        a.setOnes();
        return a;
    }
    const double scale = m > 1 ? double(n - 1) / double(m - 1) : 0.0;
    for (int j = 0; j < m; ++j) {
        const double x = j * scale;
        int i0 = static_cast<int>(std::floor(x));
        if (i0 >= n - 1) i0 = n - 2;
        const double frac = x - i0;
        a(j, i0) += 1.0 - frac;
        a(j, i0 + 1) += frac;
    }
    return a;
}

/// Kronecker product for row-major vec(): vec(A X C^T) == kron(A, C) vec(X).
template <typename Derived1, typename Derived2>
Matrix<typename Derived1::Scalar> kron(const Eigen::MatrixBase<Derived1>& a,
                                       const Eigen::MatrixBase<Derived2>& c) {
    using S = typename Derived1::Scalar;
    Matrix<S> out(a.rows() * c.rows(), a.cols() * c.cols());
    for (Eigen::Index i = 0; i < a.rows(); ++i)
        for (Eigen::Index j = 0; j < a.cols(); ++j)
            out.block(i * c.rows(), j * c.cols(), c.rows(), c.cols()) = a(i, j) * c;
    return out;
}

/// Moore-Penrose pseudoinverse through an SVD. Throws on a failed or
/// non-finite decomposition.
inline Matrix<double> pseudo_inverse(const Matrix<double>& a, double tol = kPinvTolerance) {
    if (a.size() == 0) throw Error("pseudo_inverse: empty matrix");
    if (!a.allFinite()) throw Error("pseudo_inverse: non-finite input");
    Eigen::BDCSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
    if (svd.info() != Eigen::Success) throw Error("pseudo_inverse: SVD did not converge");
    const Eigen::VectorXd& s = svd.singularValues();
    if (!s.allFinite()) throw Error("pseudo_inverse: non-finite singular values");
    const double cutoff = tol * (s.size() ? s(0) : 0.0);
    Eigen::VectorXd inv = Eigen::VectorXd::Zero(s.size());
    for (Eigen::Index i = 0; i < s.size(); ++i)
        if (s(i) > cutoff) inv(i) = 1.0 / s(i);
    Matrix<double> out = svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose();
    if (!out.allFinite()) throw Error("pseudo_inverse: non-finite result");
    return out;
}

template <typename T = double>
ResizeOperator<T> build_bilinear(PatchShape source, PatchShape target) {
    require_valid(source, "build_bilinear source");
    require_valid(target, "build_bilinear target");
    Matrix<double> b = kron(linear_interp_1d(source.freq, target.freq),
                            linear_interp_1d(source.time, target.time));
    return {source, target, ResizeKind::Bilinear, b.cast<T>()};
}

/// PI-resize: the pseudoinverse of B^T. The bilinear map is separable, so
/// pinv(B^T) = kron(pinv(Bf^T), pinv(Bt^T)) and only the 1-D factors are
/// decomposed.
template <typename T = double>
ResizeOperator<T> build_pi_resize(PatchShape source, PatchShape target) {
    require_valid(source, "build_pi_resize source");
    require_valid(target, "build_pi_resize target");
    Matrix<double> pf = pseudo_inverse(linear_interp_1d(source.freq, target.freq).transpose());
    Matrix<double> pt = pseudo_inverse(linear_interp_1d(source.time, target.time).transpose());
    Matrix<double> p = kron(pf, pt);
    return {source, target, ResizeKind::PseudoInverse, p.cast<T>()};
}

inline void check_axis(PatchShape source, PatchShape target, AxisMode axis) {
    if (axis == AxisMode::TimeOnly && source.freq != target.freq)
        throw Error("time-only resize cannot change frequency: " + source.str() + " -> " +
                    target.str());
    if (axis == AxisMode::FreqOnly && source.time != target.time)
        throw Error("freq-only resize cannot change time: " + source.str() + " -> " +
                    target.str());
}

/// PI-resize that leaves one axis untouched; the frozen factor is the identity.
template <typename T = double>
ResizeOperator<T> build_axis_restricted(PatchShape source, PatchShape target, AxisMode axis) {
    check_axis(source, target, axis);
    return build_pi_resize<T>(source, target);
}

template <typename T = double>
ResizeOperator<T> build_operator(PatchShape source, PatchShape target, ResizeKind kind,
                                 AxisMode axis = AxisMode::Full) {
    check_axis(source, target, axis);
    return kind == ResizeKind::Bilinear ? build_bilinear<T>(source, target)
                                        : build_pi_resize<T>(source, target);
}

/// Writes the matrix row-major as CSV with round-trip precision.
template <typename T>
void dump_csv(const ResizeOperator<T>& op, std::ostream& os) {
    os << std::setprecision(std::numeric_limits<T>::max_digits10);
    for (Eigen::Index r = 0; r < op.matrix.rows(); ++r) {
        for (Eigen::Index c = 0; c < op.matrix.cols(); ++c) {
            if (c) os << ',';
            os << op.matrix(r, c);
        }
        os << '\n';
    }
}

/// Thread-safe memo of operators. Entries are immutable once inserted.
template <typename T>
class OperatorCache {
public:
    using Ptr = std::shared_ptr<const ResizeOperator<T>>;

    Ptr get(PatchShape source, PatchShape target, ResizeKind kind) const {
        const Key key{source, target, kind};
        {
            std::lock_guard lock(mutex_);
            if (auto it = ops_.find(key); it != ops_.end()) return it->second;
        }
        auto op = std::make_shared<const ResizeOperator<T>>(build_operator<T>(source, target, kind));
        std::lock_guard lock(mutex_);
        return ops_.emplace(key, std::move(op)).first->second;
    }

    void precompute(PatchShape source, std::span<const PatchShape> targets,
                    std::span<const ResizeKind> kinds) const {
        for (auto t : targets)
            for (auto k : kinds) get(source, t, k);
    }

    std::size_t size() const {
        std::lock_guard lock(mutex_);
        return ops_.size();
    }

private:
    using Key = std::tuple<PatchShape, PatchShape, ResizeKind>;
    mutable std::mutex mutex_;
    mutable std::map<Key, Ptr> ops_;
};

}  // namespace flexiast
