#pragma once

#include <cstdint>
#include <istream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "flexiast/encoder.hpp"
#include "flexiast/types.hpp"

namespace flexiast {

enum class TrainMode { FlexiSupervised, FlexiDistill, FixedSupervised };

inline const char* to_string(TrainMode m) {
    switch (m) {
    case TrainMode::FlexiSupervised: return "flexi";
    case TrainMode::FlexiDistill: return "flexi-distill";
    case TrainMode::FixedSupervised: return "fixed";
    }
    return "?";
}

inline TrainMode parse_train_mode(const std::string& s) {
    if (s == "flexi" || s == "flexi-supervised") return TrainMode::FlexiSupervised;
    if (s == "flexi-distill" || s == "distill") return TrainMode::FlexiDistill;
    if (s == "fixed" || s == "fixed-supervised") return TrainMode::FixedSupervised;
    throw Error("unknown training mode '" + s + "' (expected flexi, flexi-distill or fixed)");
}

/// Parses "16" as 16x16 (or base-anchored under an axis mode) and "16x32" as
/// an explicit shape.
inline PatchShape parse_shape(const std::string& tok, AxisMode axis, PatchShape base) {
    const auto x = tok.find('x');
    try {
        if (x != std::string::npos) {
            PatchShape s{std::stoi(tok.substr(0, x)), std::stoi(tok.substr(x + 1))};
            require_valid(s, "parse_shape");
            return s;
        }
        const int p = std::stoi(tok);
        PatchShape s = axis == AxisMode::TimeOnly   ? PatchShape{base.freq, p}
                       : axis == AxisMode::FreqOnly ? PatchShape{p, base.time}
                                                    : PatchShape::square(p);
        require_valid(s, "parse_shape");
        return s;
    } catch (const std::logic_error&) {
        throw Error("bad patch shape '" + tok + "'");
    }
}

inline std::vector<PatchShape> parse_shape_list(const std::string& csv, AxisMode axis,
                                                PatchShape base) {
    std::vector<PatchShape> out;
    std::stringstream ss(csv);
    std::string tok;
    while (std::getline(ss, tok, ','))
        if (!tok.empty()) out.push_back(parse_shape(tok, axis, base));
    if (out.empty()) throw Error("empty patch shape list");
    return out;
}

inline std::string format_shape_list(const std::vector<PatchShape>& shapes) {
    std::string out;
    for (std::size_t i = 0; i < shapes.size(); ++i) out += (i ? "," : "") + shapes[i].str();
    return out;
}

/// Patch sizes sampled during flexible training.
inline const std::vector<int>& default_patch_sizes() {
    static const std::vector<int> sizes{8, 10, 12, 16, 20, 24, 30, 32, 40, 48};
    return sizes;
}

struct PatchSet {
    std::vector<PatchShape> shapes;

    static PatchSet from_sizes(const std::vector<int>& sizes, AxisMode axis, PatchShape base) {
        PatchSet ps;
        for (int p : sizes) ps.shapes.push_back(parse_shape(std::to_string(p), axis, base));
        return ps;
    }

    void validate(PatchShape base, AxisMode axis) const {
        if (shapes.empty()) throw Error("PatchSet: empty");
        bool has_base = false;
        for (auto s : shapes) {
            require_valid(s, "PatchSet");
            if (axis == AxisMode::TimeOnly && s.freq != base.freq)
                throw Error("PatchSet: time-only set contains " + s.str() +
                            " with frequency != base " + std::to_string(base.freq));
            if (axis == AxisMode::FreqOnly && s.time != base.time)
                throw Error("PatchSet: freq-only set contains " + s.str());
            has_base |= s == base;
        }
        if (!has_base) throw Error("PatchSet: must contain the base shape " + base.str());
    }
};

struct TrainConfig {
    TrainMode mode = TrainMode::FlexiSupervised;
    PatchShape base_shape{16, 16};   // underlying parameterisation (flexi modes)
    PatchShape fixed_shape{16, 16};  // FixedSupervised only
    AxisMode axis_mode = AxisMode::Full;
    ResizeKind resize_kind = ResizeKind::PseudoInverse;
    std::vector<PatchShape> patch_set = PatchSet::from_sizes(default_patch_sizes(), AxisMode::Full,
                                                             {16, 16}).shapes;
    EncoderConfig encoder;
    int epochs = 30;
    int batch_size = 32;
    double learning_rate = 0.05;
    double momentum = 0.9;
    double grad_clip = 0.0;  // global-norm clip, 0 disables
    std::uint64_t seed = 7;
    double distill_weight = 1.0;  // 1 = pure KL, 0 = pure supervised
    std::string teacher_checkpoint;
    std::string init_checkpoint;
    bool cache_teacher = true;
    int threads = 1;

    /// Shape of the stored patch weights.
    PatchShape stored_shape() const {
        return mode == TrainMode::FixedSupervised ? fixed_shape : base_shape;
    }

    void validate() const {
        encoder.validate();
        require_valid(base_shape, "base_shape");
        require_valid(fixed_shape, "fixed_shape");
        if (!(learning_rate >= 0.0)) throw Error("TrainConfig: learning_rate must be >= 0");
        if (epochs < 0) throw Error("TrainConfig: epochs must be >= 0");
        if (batch_size < 1) throw Error("TrainConfig: batch_size must be >= 1");
        if (momentum < 0.0 || momentum >= 1.0) throw Error("TrainConfig: momentum must be in [0,1)");
        if (distill_weight < 0.0 || distill_weight > 1.0)
            throw Error("TrainConfig: distill_weight must be in [0,1]");
        if (mode == TrainMode::FlexiDistill && teacher_checkpoint.empty())
            throw Error("TrainConfig: flexi-distill requires a teacher checkpoint");
        if (mode != TrainMode::FixedSupervised) PatchSet{patch_set}.validate(base_shape, axis_mode);
    }

    /// Flat key=value form, one per line, stable key order.
    std::string to_kv() const {
        std::ostringstream os;
        os.precision(17);
        os << "mode=" << to_string(mode) << '\n'
           << "base_shape=" << base_shape.str() << '\n'
           << "fixed_shape=" << fixed_shape.str() << '\n'
           << "axis_mode=" << to_string(axis_mode) << '\n'
           << "resize_kind=" << to_string(resize_kind) << '\n'
           << "patch_set=" << format_shape_list(patch_set) << '\n'
           << "d=" << encoder.d << '\n'
           << "n_layers=" << encoder.n_layers << '\n'
           << "n_heads=" << encoder.n_heads << '\n'
           << "d_ff=" << encoder.d_ff << '\n'
           << "n_classes=" << encoder.n_classes << '\n'
           << "epochs=" << epochs << '\n'
           << "batch_size=" << batch_size << '\n'
           << "learning_rate=" << learning_rate << '\n'
           << "momentum=" << momentum << '\n'
           << "grad_clip=" << grad_clip << '\n'
           << "seed=" << seed << '\n'
           << "distill_weight=" << distill_weight << '\n'
           << "teacher_checkpoint=" << teacher_checkpoint << '\n'
           << "init_checkpoint=" << init_checkpoint << '\n'
           << "cache_teacher=" << (cache_teacher ? 1 : 0) << '\n';
        return os.str();
    }

    /// Applies one key=value setting. Unknown keys are an error.
    void set(const std::string& key, const std::string& value) {
        try {
            if (key == "mode") mode = parse_train_mode(value);
            else if (key == "base_shape") base_shape = parse_shape(value, AxisMode::Full, base_shape);
            else if (key == "fixed_shape") fixed_shape = parse_shape(value, AxisMode::Full, fixed_shape);
            else if (key == "axis_mode") axis_mode = parse_axis_mode(value);
            else if (key == "resize_kind") resize_kind = parse_resize_kind(value);
            else if (key == "patch_set") patch_set = parse_shape_list(value, axis_mode, base_shape);
            else if (key == "d") encoder.d = std::stoi(value);
            else if (key == "n_layers") encoder.n_layers = std::stoi(value);
            else if (key == "n_heads") encoder.n_heads = std::stoi(value);
            else if (key == "d_ff") encoder.d_ff = std::stoi(value);
            else if (key == "n_classes") encoder.n_classes = std::stoi(value);
            else if (key == "epochs") epochs = std::stoi(value);
            else if (key == "batch_size") batch_size = std::stoi(value);
            else if (key == "learning_rate") learning_rate = std::stod(value);
            else if (key == "momentum") momentum = std::stod(value);
            else if (key == "grad_clip") grad_clip = std::stod(value);
            else if (key == "seed") seed = std::stoull(value);
            else if (key == "distill_weight") distill_weight = std::stod(value);
            else if (key == "teacher_checkpoint") teacher_checkpoint = value;
            else if (key == "init_checkpoint") init_checkpoint = value;
            else if (key == "cache_teacher") cache_teacher = value == "1" || value == "true";
            else if (key == "threads") threads = std::stoi(value);
            else throw Error("unknown config key '" + key + "'");
        } catch (const std::logic_error&) {
            throw Error("bad value '" + value + "' for config key '" + key + "'");
        }
    }

    /// Reads key=value lines; '#' starts a comment. Keys are applied in file
    /// order, except patch_set which is applied last so it sees the final
    /// axis mode and base shape.
    void load_kv(std::istream& is) {
        std::string line;
        std::optional<std::string> pending_set;
        while (std::getline(is, line)) {
            if (auto h = line.find('#'); h != std::string::npos) line.erase(h);
            while (!line.empty() && (line.back() == '\r' || line.back() == ' ')) line.pop_back();
            if (line.empty()) continue;
            const auto eq = line.find('=');
            if (eq == std::string::npos) throw Error("config line without '=': " + line);
            std::string key = line.substr(0, eq);
            std::string val = line.substr(eq + 1);
            if (key == "patch_set") pending_set = val;
            else set(key, val);
        }
        if (pending_set) set("patch_set", *pending_set);
    }

    static TrainConfig from_kv(const std::string& text) {
        TrainConfig c;
        std::istringstream is(text);
        c.load_kv(is);
        return c;
    }
};

}  // namespace flexiast
