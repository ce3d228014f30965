#pragma once

#include <cmath>

#include "flexiast/spectrogram.hpp"

namespace flexiast {

template <typename T>
struct LossResult {
    T value = 0;
    RowVector<T> grad;  // d(loss)/d(logits)
};

template <typename T>
RowVector<T> log_softmax(const RowVector<T>& z) {
    const T m = z.maxCoeff();
    const T lse = m + std::log((z.array() - m).exp().sum());
    return (z.array() - lse).matrix();
}

template <typename T>
RowVector<T> softmax(const RowVector<T>& z) {
    return log_softmax(z).array().exp().matrix();
}

/// Softmax cross-entropy for one-hot labels, summed sigmoid binary
/// cross-entropy for multi-hot labels.
template <typename T>
LossResult<T> loss_supervised(const RowVector<T>& logits, const Label& label) {
    if (logits.size() != static_cast<Eigen::Index>(label.n_classes))
        throw Error("loss_supervised: logits width " + std::to_string(logits.size()) +
                    " != label width " + std::to_string(label.n_classes));
    LossResult<T> r;
    if (label.kind == LabelKind::OneHot) {
        if (label.index >= label.n_classes) throw Error("loss_supervised: class index out of range");
        const RowVector<T> lp = log_softmax(logits);
        r.value = -lp(label.index);
        r.grad = lp.array().exp().matrix();
        r.grad(label.index) -= T(1);
        return r;
    }
    r.grad.resize(logits.size());
    for (Eigen::Index c = 0; c < logits.size(); ++c) {
        const T z = logits(c);
        const T y = label.hot[c] ? T(1) : T(0);
        // log(1 + exp(-|z|)) form keeps large logits finite
        r.value += std::max(z, T(0)) - z * y + std::log1p(std::exp(-std::abs(z)));
        r.grad(c) = T(1) / (T(1) + std::exp(-z)) - y;
    }
    return r;
}

/// KL(softmax(teacher) || softmax(student)); the teacher is a constant.
template <typename T>
LossResult<T> loss_distill(const RowVector<T>& student, const RowVector<T>& teacher) {
    if (student.size() != teacher.size()) throw Error("loss_distill: width mismatch");
    const RowVector<T> ls = log_softmax(student);
    const RowVector<T> lt = log_softmax(teacher);
    const RowVector<T> pt = lt.array().exp().matrix();
    LossResult<T> r;
    r.value = (pt.array() * (lt.array() - ls.array())).sum();
    r.grad = ls.array().exp().matrix() - pt;
    return r;
}

}  // namespace flexiast
