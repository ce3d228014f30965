#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

#include <Eigen/Dense>

namespace flexiast {

// Row-major everywhere: a patch flattened with vec() is frequency-major,
// time-minor, which matches the token grid ordering.
template <typename T>
using Matrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;
template <typename T>
using RowVector = Eigen::Matrix<T, 1, Eigen::Dynamic>;

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct PatchShape {
    int freq = 16;
    int time = 16;

    constexpr PatchShape() = default;
    constexpr PatchShape(int f, int t) : freq(f), time(t) {}
    static constexpr PatchShape square(int p) { return {p, p}; }

    constexpr int area() const { return freq * time; }
    constexpr bool valid() const { return freq >= 1 && time >= 1; }
    constexpr bool operator==(const PatchShape&) const = default;
    constexpr auto operator<=>(const PatchShape&) const = default;

    std::string str() const { return std::to_string(freq) + "x" + std::to_string(time); }
};

inline void require_valid(PatchShape s, const char* what) {
    if (!s.valid())
        throw Error(std::string(what) + ": invalid patch shape " + s.str());
}

/// Token grid (rows along frequency, columns along time).
struct Grid {
    int h = 0;
    int w = 0;
    constexpr int count() const { return h * w; }
    constexpr bool operator==(const Grid&) const = default;
};

constexpr int ceil_div(int a, int b) { return (a + b - 1) / b; }

constexpr Grid grid_for(int f, int t, PatchShape s) {
    return {ceil_div(f, s.freq), ceil_div(t, s.time)};
}

enum class ResizeKind { Bilinear, PseudoInverse };
enum class AxisMode { Full, TimeOnly, FreqOnly };

inline const char* to_string(ResizeKind k) {
    return k == ResizeKind::Bilinear ? "bl" : "pi";
}

inline ResizeKind parse_resize_kind(const std::string& s) {
    if (s == "bl" || s == "bilinear") return ResizeKind::Bilinear;
    if (s == "pi" || s == "pseudoinverse") return ResizeKind::PseudoInverse;
    throw Error("unknown resize kind '" + s + "' (expected pi or bl)");
}

inline const char* to_string(AxisMode m) {
    switch (m) {
    case AxisMode::Full: return "full";
    case AxisMode::TimeOnly: return "time";
    case AxisMode::FreqOnly: return "freq";
    }
    return "?";
}

inline AxisMode parse_axis_mode(const std::string& s) {
    if (s == "full") return AxisMode::Full;
    if (s == "time" || s == "time-only") return AxisMode::TimeOnly;
    if (s == "freq" || s == "freq-only") return AxisMode::FreqOnly;
    throw Error("unknown axis mode '" + s + "' (expected full, time or freq)");
}

}  // namespace flexiast
