#pragma once

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <functional>
#include <map>
#include <numeric>
#include <ostream>
#include <random>
#include <span>
#include <sstream>

#include <nlohmann/json.hpp>

#include "flexiast/config.hpp"
#include "flexiast/model.hpp"
#include "flexiast/parallel.hpp"

namespace flexiast {

template <typename T>
struct Dataset {
    std::vector<Spectrogram<T>> items;
    std::uint32_t n_classes = 0;
    LabelKind label_kind = LabelKind::OneHot;

    bool empty() const { return items.empty(); }
    std::size_t size() const { return items.size(); }
};

/// Everything needed to resume evaluation of a trained model.
struct Checkpoint {
    TrainConfig config;
    Model<float> model;
    std::uint64_t seed = 0;
    std::string history;
};

template <typename T>
struct ModelGrad {
    BankGrad<T> bank;
    EncoderParams<T> encoder;
};

template <typename T>
struct BatchItem {
    const Spectrogram<T>* spec = nullptr;
    const RowVector<T>* teacher = nullptr;  // distillation target logits
};

template <typename T>
struct GradResult {
    T loss = 0;
    ModelGrad<T> grad;  // at the base parameterisation, averaged over the batch
};

template <typename T>
LossResult<T> item_loss(const RowVector<T>& logits, const BatchItem<T>& item,
                        const TrainConfig& cfg) {
    if (cfg.mode != TrainMode::FlexiDistill) return loss_supervised(logits, item.spec->label);
    if (!item.teacher) throw Error("distillation step without teacher logits");
    auto kd = loss_distill(logits, *item.teacher);
    if (cfg.distill_weight >= 1.0) return kd;
    auto sup = loss_supervised(logits, item.spec->label);
    const T w = T(cfg.distill_weight);
    return {w * kd.value + (T(1) - w) * sup.value, w * kd.grad + (T(1) - w) * sup.grad};
}

/// Mean loss and exact gradients of one batch at patch shape `shape`. The
/// resized-space embedding gradients are pulled back through the adjoints
/// of the resize maps, so only base parameters receive gradient.
template <typename T>
GradResult<T> compute_gradients(std::span<const BatchItem<T>> batch, const Model<T>& model,
                                PatchShape shape, const TrainConfig& cfg,
                                const OperatorCache<T>* cache = nullptr, int threads = 1) {
    if (batch.empty()) throw Error("compute_gradients: empty batch");
    const int f = batch[0].spec->freq();
    const int t = batch[0].spec->time();
    for (const auto& it : batch)
        if (it.spec->freq() != f || it.spec->time() != t)
            throw Error("compute_gradients: batch items differ in size");

    EmbedPlan<T> plan(model.bank, shape, f, t, cfg.resize_kind, cfg.axis_mode, cache);
    struct PerItem {
        T loss = 0;
        EncoderParams<T> enc;
        BankGrad<T> bank;
    };
    std::vector<PerItem> per(batch.size());
    parallel_for(batch.size(), threads, [&](std::size_t i) {
        auto& out = per[i];
        const auto patches = patchify(batch[i].spec->data, shape);
        const auto ts = plan.embed(patches);
        EncoderCache<T> ec;
        const RowVector<T> logits = forward(ts.tokens, model.encoder, &ec);
        const auto l = item_loss(logits, batch[i], cfg);
        out.loss = l.value;
        out.enc = model.encoder.zeros_like();
        const Matrix<T> dtok = backward(model.encoder, ec, l.grad, out.enc);
        out.bank = plan.zero_grad();
        plan.accumulate(patches, dtok, out.bank);
    });

    // serial reduction in item order keeps results independent of threads
    GradResult<T> r;
    r.grad.encoder = model.encoder.zeros_like();
    BankGrad<T> resized = plan.zero_grad();
    for (auto& p : per) {
        r.loss += p.loss;
        r.grad.encoder += p.enc;
        resized += p.bank;
    }
    const T inv = T(1) / T(batch.size());
    r.loss *= inv;
    for (auto* m : r.grad.encoder.blocks()) *m *= inv;
    resized.omega *= inv;
    resized.pos *= inv;
    resized.cls *= inv;
    r.grad.bank = plan.pullback(resized);
    return r;
}

/// Mini-batch SGD with heavy-ball momentum.
template <typename T>
class Sgd {
public:
    explicit Sgd(const Model<T>& m) : vel_{{Matrix<T>::Zero(m.bank.omega.rows(), m.bank.omega.cols()),
                                            Matrix<T>::Zero(m.bank.pos.rows(), m.bank.pos.cols()),
                                            RowVector<T>::Zero(m.bank.cls.size())},
                                           m.encoder.zeros_like()} {}

    void step(Model<T>& m, const ModelGrad<T>& g, double lr, double momentum, double clip = 0.0) {
        T scale = T(1);
        if (clip > 0.0) {
            T sq = g.bank.omega.squaredNorm() + g.bank.pos.squaredNorm() + g.bank.cls.squaredNorm();
            for (auto* b : g.encoder.blocks()) sq += b->squaredNorm();
            const T norm = std::sqrt(sq);
            if (norm > T(clip)) scale = T(clip) / norm;
        }
        const T mu = T(momentum);
        const T eta = T(lr);
        auto upd = [&](auto& p, auto& v, const auto& grad) {
            v = mu * v + scale * grad;
            p -= eta * v;
        };
        upd(m.bank.omega, vel_.bank.omega, g.bank.omega);
        upd(m.bank.pos, vel_.bank.pos, g.bank.pos);
        upd(m.bank.cls, vel_.bank.cls, g.bank.cls);
        auto pb = m.encoder.blocks();
        auto vb = vel_.encoder.blocks();
        auto gb = g.encoder.blocks();
        for (std::size_t i = 0; i < pb.size(); ++i) upd(*pb[i], *vb[i], *gb[i]);
    }

private:
    ModelGrad<T> vel_;
};

struct StepStats {
    int epoch = 0;
    long step = 0;
    PatchShape shape;
    double loss = 0;
    double elapsed_s = 0;
};

/// Logits of a teacher at its own stored (native) patch shape.
template <typename T>
RowVector<T> teacher_logits(const Model<T>& teacher, const Spectrogram<T>& spec) {
    return predict(teacher, spec, teacher.bank.base_shape, ResizeKind::PseudoInverse);
}

inline RowVector<float> teacher_logits(const Checkpoint& teacher, const Spectrogram<float>& spec) {
    return teacher_logits(teacher.model, spec);
}

/// Uniform draw of one patch shape per optimiser step, from its own stream.
class ShapeSampler {
public:
    ShapeSampler(std::vector<PatchShape> shapes, std::uint64_t seed)
        : shapes_(std::move(shapes)), rng_(make_rng(seed)) {
        if (shapes_.empty()) throw Error("ShapeSampler: empty shape set");
    }

    PatchShape next() {
        if (shapes_.size() == 1) return shapes_[0];
        std::uniform_int_distribution<std::size_t> pick(0, shapes_.size() - 1);
        return shapes_[pick(rng_)];
    }

private:
    static std::mt19937_64 make_rng(std::uint64_t seed) {
        std::seed_seq seq{seed, std::uint64_t{2}};
        return std::mt19937_64(seq);
    }

    std::vector<PatchShape> shapes_;
    std::mt19937_64 rng_;
};

struct TrainResources {
    const Checkpoint* teacher = nullptr;  // required for FlexiDistill
    const Checkpoint* init = nullptr;     // optional warm start, re-based via init_from_fixed
    std::ostream* log = nullptr;          // line-delimited JSON records
    std::function<void(const StepStats&, const Model<float>&)> on_step;
};

/// Builds the starting model: a warm start re-based to the stored shape, or
/// a fresh seeded initialisation.
inline Model<float> initial_model(const Dataset<float>& data, const TrainConfig& cfg,
                                  const Checkpoint* init) {
    const PatchShape stored = cfg.stored_shape();
    if (init) {
        if (init->model.encoder.cfg != cfg.encoder)
            throw Error("init checkpoint encoder shape differs from the training config");
        Model<float> m{init_from_fixed(init->model.bank, stored), init->model.encoder};
        m.validate();
        return m;
    }
    if (data.empty()) throw Error("cannot infer the canonical input size from an empty dataset");
    if (data.n_classes != static_cast<std::uint32_t>(cfg.encoder.n_classes))
        throw Error("dataset has " + std::to_string(data.n_classes) + " classes but config has " +
                    std::to_string(cfg.encoder.n_classes));
    return Model<float>::init(cfg.encoder, stored, data.items[0].freq(), data.items[0].time(),
                              cfg.seed);
}

/// Flexible or fixed-shape training. One patch shape is sampled uniformly
/// per optimiser step and shared across the batch.
inline Checkpoint train(const Dataset<float>& data, const TrainConfig& cfg,
                        const TrainResources& res = {}) {
    cfg.validate();
    if (cfg.mode == TrainMode::FlexiDistill && !res.teacher)
        throw Error("flexi-distill training needs a loaded teacher checkpoint");
    Model<float> model = initial_model(data, cfg, res.init);
    model.validate();
    Sgd<float> opt(model);
    const auto t0 = std::chrono::steady_clock::now();

    // Independent streams: shuffling never depends on how shapes are drawn.
    std::seed_seq shuffle_seq{cfg.seed, std::uint64_t{1}};
    std::mt19937_64 shuffle_rng(shuffle_seq);

    const bool fixed = cfg.mode == TrainMode::FixedSupervised;
    const std::vector<PatchShape> shapes = fixed ? std::vector<PatchShape>{cfg.fixed_shape}
                                                 : cfg.patch_set;
    ShapeSampler sampler(shapes, cfg.seed);
    OperatorCache<float> cache;
    const std::array<ResizeKind, 1> kinds{cfg.resize_kind};
    cache.precompute(cfg.stored_shape(), shapes, kinds);

    std::vector<RowVector<float>> teacher_out;
    if (cfg.mode == TrainMode::FlexiDistill && cfg.cache_teacher) {
        teacher_out.resize(data.size());
        parallel_for(data.size(), cfg.threads, [&](std::size_t i) {
            teacher_out[i] = teacher_logits(*res.teacher, data.items[i]);
        });
    }

    std::ostringstream history;
    history.precision(9);
    std::map<PatchShape, long> histogram;
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), 0);
    long step = 0;
    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), shuffle_rng);
        double epoch_loss = 0;
        long epoch_steps = 0;
        for (std::size_t lo = 0; lo < order.size(); lo += cfg.batch_size) {
            const std::size_t hi = std::min(order.size(), lo + cfg.batch_size);
            std::vector<BatchItem<float>> batch;
            std::vector<RowVector<float>> fresh_teacher;
            if (cfg.mode == TrainMode::FlexiDistill && !cfg.cache_teacher)
                fresh_teacher.reserve(hi - lo);
            for (std::size_t i = lo; i < hi; ++i) {
                const auto idx = order[i];
                BatchItem<float> it{&data.items[idx], nullptr};
                if (cfg.mode == TrainMode::FlexiDistill) {
                    if (cfg.cache_teacher) {
                        it.teacher = &teacher_out[idx];
                    } else {
                        fresh_teacher.push_back(teacher_logits(*res.teacher, data.items[idx]));
                        it.teacher = &fresh_teacher.back();
                    }
                }
                batch.push_back(it);
            }
            const PatchShape shape = sampler.next();
            auto gr = compute_gradients<float>(batch, model, shape, cfg, &cache, cfg.threads);
            if (!std::isfinite(gr.loss))
                throw Error("training diverged: non-finite loss at epoch " + std::to_string(epoch) +
                            " step " + std::to_string(step) + " shape " + shape.str());
            opt.step(model, gr.grad, cfg.learning_rate, cfg.momentum, cfg.grad_clip);
            ++histogram[shape];
            epoch_loss += gr.loss;
            ++epoch_steps;

            StepStats st{epoch, step, shape, gr.loss,
                         std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()};
            if (res.log) {
                nlohmann::json rec{{"epoch", st.epoch},  {"step", st.step},
                                   {"shape", shape.str()}, {"loss", st.loss},
                                   {"elapsed_s", st.elapsed_s}};
                *res.log << rec.dump() << '\n';
            }
            if (res.on_step) res.on_step(st, model);
            ++step;
        }
        const double mean = epoch_steps ? epoch_loss / epoch_steps : 0.0;
        history << "epoch " << epoch << " loss " << mean << '\n';
        if (res.log) {
            nlohmann::json hist = nlohmann::json::object();
            for (auto& [s, n] : histogram) hist[s.str()] = n;
            *res.log << nlohmann::json{{"epoch", epoch}, {"mean_loss", mean}, {"shape_histogram", hist}}
                            .dump()
                     << '\n';
        }
    }
    history << "shapes";
    for (auto& [s, n] : histogram) history << ' ' << s.str() << ':' << n;
    history << '\n';
    return {cfg, std::move(model), cfg.seed, history.str()};
}

}  // namespace flexiast
