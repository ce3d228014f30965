#pragma once

#include <cstdint>
#include <vector>

#include "flexiast/types.hpp"

namespace flexiast {

enum class LabelKind : std::uint8_t { OneHot = 0, MultiHot = 1 };

struct Label {
    LabelKind kind = LabelKind::OneHot;
    std::uint32_t n_classes = 0;
    std::uint32_t index = 0;        // OneHot
    std::vector<std::uint8_t> hot;  // MultiHot, n_classes entries of {0,1}

    static Label one_hot(std::uint32_t index, std::uint32_t n_classes) {
        return {LabelKind::OneHot, n_classes, index, {}};
    }
    static Label multi_hot(std::vector<std::uint8_t> hot) {
        const auto n = static_cast<std::uint32_t>(hot.size());
        return {LabelKind::MultiHot, n, 0, std::move(hot)};
    }

    bool positive(std::size_t c) const {
        return kind == LabelKind::OneHot ? c == index : hot.at(c) != 0;
    }

    bool operator==(const Label&) const = default;
};

/// Log-mel style feature matrix, frequency bins x time frames.
template <typename T>
struct Spectrogram {
    Matrix<T> data;
    Label label;

    int freq() const { return static_cast<int>(data.rows()); }
    int time() const { return static_cast<int>(data.cols()); }

    template <typename U>
    Spectrogram<U> cast() const {
        return {data.template cast<U>(), label};
    }
};

}  // namespace flexiast
