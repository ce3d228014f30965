#pragma once

#include <random>

#include "flexiast/embedding.hpp"
#include "flexiast/encoder.hpp"
#include "flexiast/loss.hpp"

namespace flexiast {

/// The full classifier: patch-size dependent embedding bank plus the
/// patch-size independent encoder.
template <typename T>
struct Model {
    EmbeddingBank<T> bank;
    EncoderParams<T> encoder;

    static Model init(const EncoderConfig& cfg, PatchShape base, int canon_freq, int canon_time,
                      std::uint64_t seed) {
        std::seed_seq seq{seed, std::uint64_t{0x1417}};
        std::mt19937_64 rng(seq);
        Model m;
        m.bank = EmbeddingBank<T>::random(cfg.d, base, canon_freq, canon_time, rng);
        m.encoder = EncoderParams<T>::init(cfg, rng);
        return m;
    }

    void validate() const {
        bank.validate();
        encoder.cfg.validate();
        if (bank.d != encoder.cfg.d) throw Error("Model: bank width != encoder width");
        if (!encoder.all_finite()) throw Error("Model: non-finite encoder parameters");
    }

    template <typename U>
    Model<U> cast() const {
        return {bank.template cast<U>(), encoder.template cast<U>()};
    }
};

/// Logits for one spectrogram under a prepared plan.
template <typename T>
RowVector<T> predict(const EmbedPlan<T>& plan, const EncoderParams<T>& enc,
                     const Spectrogram<T>& spec) {
    return forward(plan.embed(spec).tokens, enc);
}

template <typename T>
RowVector<T> predict(const Model<T>& m, const Spectrogram<T>& spec, PatchShape shape,
                     ResizeKind kind, AxisMode axis = AxisMode::Full) {
    EmbedPlan<T> plan(m.bank, shape, spec.freq(), spec.time(), kind, axis);
    return predict(plan, m.encoder, spec);
}

}  // namespace flexiast
