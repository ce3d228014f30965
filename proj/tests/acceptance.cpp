// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any
// criterion fails. Every tolerance, seed and budget is fixed below.
//
//   acceptance [--workdir DIR] [--threads N]

#include <chrono>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <functional>
#include <iostream>
#include <random>
#include <sstream>

#include "flexiast/flexiast.hpp"
#include "oracles.hpp"

using namespace flexiast;
namespace fs = std::filesystem;

namespace {

// Criterion 1-3
constexpr double kUpsampleAbsTol = 1e-4;
constexpr int kUpsampleDraws = 100;
constexpr double kDownsampleRelTol = 1e-4;
constexpr double kIdentityTol = 1e-6;
// Criterion 4
constexpr double kGradRelTol = 1e-3;
constexpr double kFdStep = 1e-5;
// Criterion 5
constexpr int kDegenerateSteps = 50;
// Criterion 6
constexpr double kFixedDropBL = 0.30;
constexpr double kFlatnessRatio = 0.9;
constexpr double kFlexiVsFixedAt16 = 0.05;
// Criterion 7
constexpr int kMinStrictWins = 3;
// Criterion 8
constexpr double kAxisGap = 0.15;
// Criterion 9
constexpr double kDistillGap = 0.05;
// Criterion 10
constexpr int kMapCases = 1000;

// Runtime budgets in seconds
constexpr double kBudget1 = 30, kBudget2 = 30, kBudget3 = 5, kBudget4 = 120, kBudget6 = 20 * 60;

// Recorded seeds and desk-scale settings
constexpr std::uint64_t kMultiscaleDataSeed = 1;
constexpr std::uint64_t kMultiscaleTrainSeed = 1;
constexpr std::uint64_t kSpeakerDataSeed = 1;
constexpr std::uint64_t kSpeakerTrainSeed = 7;
constexpr int kFixedEpochs = 30;
constexpr int kFlexiEpochs = 60;
constexpr int kSpeakerEpochs = 30;
const EncoderConfig kDeskEncoder{32, 2, 4, 64, 0};  // class count taken from the data

struct Clock {
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
};

int g_failed = 0;

void report(int id, const std::string& name, bool pass, const std::string& detail) {
    std::printf("criterion %2d %s  %s: %s\n", id, pass ? "PASS" : "FAIL", name.c_str(), detail.c_str());
    std::fflush(stdout);
    g_failed += !pass;
}

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

// Runs one criterion; an exception is a failure with its message.
void criterion(int id, const std::string& name, const std::function<std::pair<bool, std::string>()>& body) {
    try {
        const auto [pass, detail] = body();
        report(id, name, pass, detail);
    } catch (const std::exception& e) {
        report(id, name, false, std::string("exception: ") + e.what());
    }
}

std::vector<PatchShape> square_set() {
    return PatchSet::from_sizes(default_patch_sizes(), AxisMode::Full, {16, 16}).shapes;
}

std::string row_string(const SweepReport& r, ResizeKind k) {
    std::string s;
    for (const auto& row : r.rows)
        if (row.resize_kind == k) s += fmt("%s=%.3f ", row.shape.str().c_str(), row.value);
    if (!s.empty()) s.pop_back();
    return s;
}

std::pair<double, double> min_max(const SweepReport& r, ResizeKind k) {
    double lo = 1e300, hi = -1e300;
    for (const auto& row : r.rows)
        if (row.resize_kind == k) lo = std::min(lo, row.value), hi = std::max(hi, row.value);
    return {lo, hi};
}

// ---------------------------------------------------------------------------

std::pair<bool, std::string> upsampling_exactness() {
    Clock clk;
    std::mt19937_64 rng(101);
    std::normal_distribution<float> n01;
    const auto P = default_patch_sizes();
    double worst = 0;
    int pairs = 0;
    for (std::size_t i = 0; i < P.size(); ++i)
        for (std::size_t j = 0; j < P.size(); ++j) {
            if (P[j] <= P[i]) continue;
            const PatchShape s{P[i], P[i]}, t{P[j], P[j]};
            const auto B = build_bilinear<float>(s, t);
            const auto PI = build_pi_resize<float>(s, t);
            for (int d = 0; d < kUpsampleDraws; ++d) {
                Matrix<float> x(1, s.area()), w(1, s.area());
                for (Eigen::Index k = 0; k < x.size(); ++k) x.data()[k] = n01(rng), w.data()[k] = n01(rng);
                const float lhs = (x.array() * w.array()).sum();
                const float rhs = (B.apply(x).array() * PI.apply(w).array()).sum();
                worst = std::max(worst, double(std::abs(lhs - rhs)));
            }
            ++pairs;
        }
    const double secs = clk.seconds();
    return {worst <= kUpsampleAbsTol && secs < kBudget1,
            fmt("%d pairs x %d draws, max |<x,w> - <Bx,Pw>| = %.2e (tol %.0e), %.1f s (budget %.0f s)",
                pairs, kUpsampleDraws, worst, kUpsampleAbsTol, secs, kBudget1)};
}

std::pair<bool, std::string> downsampling_optimality() {
    Clock clk;
    std::mt19937_64 rng(202);
    const auto P = default_patch_sizes();
    double worst = 0;
    int pairs = 0;
    for (std::size_t i = 0; i < P.size(); ++i)
        for (std::size_t j = 0; j < P.size(); ++j) {
            if (P[j] >= P[i]) continue;
            const int p = P[i], q = P[j];
            const auto B = oracle::bilinear_matrix(p, p, q, q);
            const auto PI = build_pi_resize<double>({p, p}, {q, q});
            const oracle::Mat w = oracle::random_matrix(p * p, 3, rng);
            const oracle::Mat ref = oracle::least_squares_normal_cols(B, w);
            const oracle::Mat got = PI.matrix * w;
            for (Eigen::Index d = 0; d < w.cols(); ++d)
                worst = std::max(worst, (got.col(d) - ref.col(d)).norm() / ref.col(d).norm());
            ++pairs;
        }
    const double secs = clk.seconds();
    return {worst <= kDownsampleRelTol && secs < kBudget2,
            fmt("%d pairs, max relative error vs normal equations = %.2e (tol %.0e), %.1f s (budget %.0f s)",
                pairs, worst, kDownsampleRelTol, secs, kBudget2)};
}

std::pair<bool, std::string> identity_and_constancy() {
    Clock clk;
    const auto P = default_patch_sizes();
    double id_err = 0, const_err = 0;
    for (int p : P) {
        const PatchShape s{p, p};
        for (auto k : {ResizeKind::Bilinear, ResizeKind::PseudoInverse}) {
            const auto op = build_operator<double>(s, s, k);
            id_err = std::max(id_err, (op.matrix - Matrix<double>::Identity(s.area(), s.area())).cwiseAbs().maxCoeff());
        }
        for (int q : P) {
            const auto op = build_bilinear<double>(s, {q, q});
            for (double c : {1.0, -3.5}) {
                const Matrix<double> in = Matrix<double>::Constant(1, s.area(), c);
                const_err = std::max(const_err, (op.apply(in).array() - c).abs().maxCoeff());
            }
        }
    }
    const double secs = clk.seconds();
    return {id_err <= kIdentityTol && const_err <= kIdentityTol && secs < kBudget3,
            fmt("same-shape max |op - I| = %.2e, bilinear constant error = %.2e (tol %.0e), %.2f s (budget %.0f s)",
                id_err, const_err, kIdentityTol, secs, kBudget3)};
}

std::pair<bool, std::string> gradient_check() {
    Clock clk;
    std::mt19937_64 rng(404);
    Dataset<double> data;
    data.n_classes = 3;
    for (int i = 0; i < 2; ++i) data.items.push_back({oracle::random_matrix(32, 32, rng), Label::one_hot(i, 3)});
    std::vector<BatchItem<double>> batch{{&data.items[0], nullptr}, {&data.items[1], nullptr}};
    TrainConfig cfg;
    cfg.encoder = {8, 1, 2, 16, 3};
    double worst = 0;
    std::string worst_at;
    int blocks_checked = 0;
    for (auto kind : {ResizeKind::PseudoInverse, ResizeKind::Bilinear})
        for (PatchShape shape : {PatchShape{16, 16}, PatchShape{8, 8}}) {
            cfg.resize_kind = kind;
            auto model = Model<double>::init(cfg.encoder, {16, 16}, 32, 32, 405);
            // perturb gains and biases away from their initial constants
            std::normal_distribution<double> n01;
            for (auto* m : model.encoder.blocks())
                for (Eigen::Index i = 0; i < m->size(); ++i) m->data()[i] += 0.1 * n01(rng);
            const auto g = compute_gradients<double>(batch, model, shape, cfg);
            auto loss = [&] { return compute_gradients<double>(batch, model, shape, cfg).loss; };
            auto check = [&](double* param, const double* analytic, Eigen::Index n, const std::string& name) {
                Matrix<double> fd(1, n), an(1, n);
                for (Eigen::Index i = 0; i < n; ++i) {
                    const double keep = param[i];
                    param[i] = keep + kFdStep;
                    const double lp = loss();
                    param[i] = keep - kFdStep;
                    const double lm = loss();
                    param[i] = keep;
                    fd(0, i) = (lp - lm) / (2 * kFdStep);
                    an(0, i) = analytic[i];
                }
                const double e = (fd - an).norm() / std::max(1e-300, fd.norm() + an.norm());
                if (e > worst) worst = e, worst_at = name + " " + to_string(kind) + " " + shape.str();
                ++blocks_checked;
            };
            check(model.bank.omega.data(), g.grad.bank.omega.data(), model.bank.omega.size(), "omega");
            check(model.bank.pos.data(), g.grad.bank.pos.data(), model.bank.pos.size(), "pos");
            check(model.bank.cls.data(), g.grad.bank.cls.data(), model.bank.cls.size(), "cls");
            auto enc = model.encoder.blocks();
            const auto genc = g.grad.encoder.blocks();
            const auto names = EncoderParams<double>::block_names(cfg.encoder);
            for (std::size_t b = 0; b < enc.size(); ++b)
                check(enc[b]->data(), genc[b]->data(), enc[b]->size(), names[b]);
        }
    const double secs = clk.seconds();
    return {worst <= kGradRelTol && secs < kBudget4,
            fmt("%d blocks (pi/bl x 16x16/8x8), worst relative error %.2e at %s (tol %.0e), %.1f s (budget %.0f s)",
                blocks_checked, worst, worst_at.c_str(), kGradRelTol, secs, kBudget4)};
}

std::pair<bool, std::string> degenerate_equivalence(const Dataset<float>& full) {
    Dataset<float> data;
    data.n_classes = full.n_classes;
    for (std::size_t i = 0; i < 64; ++i) data.items.push_back(full.items[i * full.size() / 64]);
    TrainConfig cfg;
    cfg.encoder = {16, 1, 2, 32, int(data.n_classes)};
    cfg.batch_size = 8;
    cfg.epochs = (kDegenerateSteps + 7) / 8;
    cfg.seed = 505;
    cfg.grad_clip = 1.0;
    auto record = [&](TrainMode mode) {
        TrainConfig c = cfg;
        c.mode = mode;
        c.patch_set = {{16, 16}};
        std::vector<Model<float>> traj;
        TrainResources res;
        res.on_step = [&](const StepStats&, const Model<float>& m) {
            if (traj.size() < std::size_t(kDegenerateSteps)) traj.push_back(m);
        };
        train(data, c, res);
        return traj;
    };
    const auto flexi = record(TrainMode::FlexiSupervised);
    const auto fixed = record(TrainMode::FixedSupervised);
    int first_diff = -1;
    for (std::size_t s = 0; s < std::min(flexi.size(), fixed.size()) && first_diff < 0; ++s) {
        const auto& a = flexi[s];
        const auto& b = fixed[s];
        bool same = a.bank.omega == b.bank.omega && a.bank.pos == b.bank.pos && a.bank.cls == b.bank.cls;
        const auto ba = a.encoder.blocks(), bb = b.encoder.blocks();
        for (std::size_t k = 0; k < ba.size() && same; ++k) same = *ba[k] == *bb[k];
        if (!same) first_diff = int(s);
    }
    const bool pass = flexi.size() == std::size_t(kDegenerateSteps) &&
                      fixed.size() == std::size_t(kDegenerateSteps) && first_diff < 0;
    return {pass, first_diff < 0 ? fmt("%zu / %zu steps recorded, all parameters bit-identical", flexi.size(), fixed.size())
                                 : fmt("trajectories diverge at step %d", first_diff)};
}

// ---------------------------------------------------------------------------

struct DeskRuns {
    Checkpoint fixed, flexi;
    SweepReport fixed_sweep, flexi_sweep;
    double secs = 0;
};

TrainConfig desk_config(const Dataset<float>& tr, std::uint64_t seed, int threads) {
    TrainConfig cfg;
    cfg.encoder = kDeskEncoder;
    cfg.encoder.n_classes = int(tr.n_classes);
    cfg.learning_rate = 0.05;
    cfg.grad_clip = 1.0;
    cfg.seed = seed;
    cfg.threads = threads;
    return cfg;
}

std::pair<bool, std::string> desk_trend(const Dataset<float>& tr, const Dataset<float>& te,
                                        const fs::path& work, int threads, DeskRuns& out) {
    Clock clk;
    TrainConfig cfg = desk_config(tr, kMultiscaleTrainSeed, threads);
    cfg.mode = TrainMode::FixedSupervised;
    cfg.epochs = kFixedEpochs;
    out.fixed = train(tr, cfg);
    save_checkpoint(work / "fixed16.fack", out.fixed);

    cfg.mode = TrainMode::FlexiSupervised;
    cfg.epochs = kFlexiEpochs;
    cfg.init_checkpoint = (work / "fixed16.fack").string();
    out.flexi = train_from_config(tr, cfg);
    save_checkpoint(work / "flexi.fack", out.flexi);

    const auto P = square_set();
    out.fixed_sweep = sweep(out.fixed, te, P, {ResizeKind::PseudoInverse, ResizeKind::Bilinear}, "fixed16",
                            "multiscale", threads);
    out.flexi_sweep = sweep(out.flexi, te, P, {ResizeKind::PseudoInverse}, "flexi", "multiscale", threads);
    out.secs = clk.seconds();

    const auto& fs_ = out.fixed_sweep;
    const double at16 = fs_.at({16, 16}, ResizeKind::Bilinear);
    const auto [bl_lo, bl_hi] = min_max(fs_, ResizeKind::Bilinear);
    (void)bl_lo;
    const double drop8 = at16 - fs_.at({8, 8}, ResizeKind::Bilinear);
    const double drop32 = at16 - fs_.at({32, 32}, ResizeKind::Bilinear);
    const bool a = at16 >= bl_hi && drop8 >= kFixedDropBL && drop32 >= kFixedDropBL;
    const auto [fx_lo, fx_hi] = min_max(out.flexi_sweep, ResizeKind::PseudoInverse);
    const bool b = fx_lo >= kFlatnessRatio * fx_hi;
    const double gap16 = std::abs(out.flexi_sweep.at({16, 16}, ResizeKind::PseudoInverse) -
                                  fs_.at({16, 16}, ResizeKind::PseudoInverse));
    const bool c = gap16 <= kFlexiVsFixedAt16;
    const bool t = out.secs < kBudget6;
    std::printf("    fixed16 bl: %s\n    fixed16 pi: %s\n    flexi   pi: %s\n",
                row_string(fs_, ResizeKind::Bilinear).c_str(), row_string(fs_, ResizeKind::PseudoInverse).c_str(),
                row_string(out.flexi_sweep, ResizeKind::PseudoInverse).c_str());
    return {a && b && c && t,
            fmt("(a) %s fixed max at 16 (%.3f), BL drop 8: %.3f, 32: %.3f (need >= %.2f); "
                "(b) %s flexi min/max = %.3f/%.3f = %.3f (need >= %.2f); "
                "(c) %s |flexi16 - fixed16| = %.3f (need <= %.2f); %.0f s (budget %.0f s)",
                a ? "ok" : "NO", at16, drop8, drop32, kFixedDropBL, b ? "ok" : "NO", fx_lo, fx_hi, fx_lo / fx_hi,
                kFlatnessRatio, c ? "ok" : "NO", gap16, kFlexiVsFixedAt16, out.secs, kBudget6)};
}

std::pair<bool, std::string> pi_dominates_bl(const SweepReport& r) {
    int strict = 0, losses = 0;
    std::string lost;
    for (auto s : square_set()) {
        if (s == PatchShape{16, 16}) continue;
        const double pi = r.at(s, ResizeKind::PseudoInverse), bl = r.at(s, ResizeKind::Bilinear);
        strict += pi > bl;
        if (pi < bl) ++losses, lost += " " + s.str();
    }
    return {losses == 0 && strict >= kMinStrictWins,
            fmt("PI > BL at %d of 9 untrained shapes (need >= %d), PI < BL at %d%s", strict, kMinStrictWins, losses,
                lost.c_str())};
}

std::pair<bool, std::string> axis_restriction(const Dataset<float>& tr, const Dataset<float>& te, int threads) {
    Clock clk;
    TrainConfig cfg = desk_config(tr, kSpeakerTrainSeed, threads);
    cfg.mode = TrainMode::FlexiSupervised;
    cfg.epochs = kSpeakerEpochs;
    const auto full = train(tr, cfg);
    cfg.axis_mode = AxisMode::TimeOnly;
    cfg.patch_set = PatchSet::from_sizes(default_patch_sizes(), AxisMode::TimeOnly, {16, 16}).shapes;
    const auto tonly = train(tr, cfg);
    const auto rf = sweep(full, te, square_set(), {ResizeKind::PseudoInverse}, "full", "speaker", threads);
    const auto rt = sweep(tonly, te, cfg.patch_set, {ResizeKind::PseudoInverse}, "time", "speaker", threads);
    std::printf("    full  pi: %s\n    time  pi: %s\n", row_string(rf, ResizeKind::PseudoInverse).c_str(),
                row_string(rt, ResizeKind::PseudoInverse).c_str());
    const auto [t_lo, t_hi] = min_max(rt, ResizeKind::PseudoInverse);
    const auto [f_lo, f_hi] = min_max(rf, ResizeKind::PseudoInverse);
    (void)f_hi;
    const bool flat = t_lo >= kFlatnessRatio * t_hi;
    const bool gap = t_lo - f_lo >= kAxisGap;
    return {flat && gap, fmt("time-only min/max = %.3f/%.3f = %.3f (need >= %.2f); worst full %.3f vs worst "
                             "time-only %.3f, gap %.3f (need >= %.2f); %.0f s",
                             t_lo, t_hi, t_lo / t_hi, kFlatnessRatio, f_lo, t_lo, t_lo - f_lo, kAxisGap,
                             clk.seconds())};
}

std::pair<bool, std::string> distillation(const Dataset<float>& tr, const Dataset<float>& te, const fs::path& work,
                                          int threads, const DeskRuns& desk) {
    Clock clk;
    TrainConfig cfg = desk_config(tr, kMultiscaleTrainSeed, threads);
    cfg.mode = TrainMode::FlexiDistill;
    cfg.epochs = kFlexiEpochs;
    cfg.teacher_checkpoint = (work / "fixed16.fack").string();
    cfg.init_checkpoint = cfg.teacher_checkpoint;
    const auto kd = train_from_config(tr, cfg);
    const auto rk = sweep(kd, te, square_set(), {ResizeKind::PseudoInverse}, "distill", "multiscale", threads);
    std::printf("    distill pi: %s\n", row_string(rk, ResizeKind::PseudoInverse).c_str());
    double worst = 0;
    PatchShape at{0, 0};
    for (auto s : square_set()) {
        const double g = desk.flexi_sweep.at(s, ResizeKind::PseudoInverse) - rk.at(s, ResizeKind::PseudoInverse);
        if (g > worst) worst = g, at = s;
    }
    return {worst <= kDistillGap,
            fmt("largest shortfall vs flexi %.3f at %s (need <= %.2f); %.0f s", worst,
                worst > 0 ? at.str().c_str() : "-", kDistillGap, clk.seconds())};
}

std::pair<bool, std::string> map_oracle() {
    std::mt19937_64 rng(1010);
    std::uniform_int_distribution<int> n_dist(1, 8), c_dist(1, 3), level(0, 5);
    int checked = 0, mismatches = 0;
    while (checked < kMapCases) {
        const int n = n_dist(rng), c = c_dist(rng);
        Matrix<double> s(n, c);
        Matrix<std::uint8_t> y(n, c);
        const bool coarse = rng() % 2;  // half the cases force ties
        std::normal_distribution<double> n01;
        for (Eigen::Index i = 0; i < s.size(); ++i) {
            s.data()[i] = coarse ? level(rng) / 5.0 : n01(rng);
            y.data()[i] = rng() % 2;
        }
        double total = 0;
        int included = 0;
        for (int k = 0; k < c; ++k) {
            std::vector<double> sc(n);
            std::vector<std::uint8_t> lb(n);
            for (int i = 0; i < n; ++i) sc[i] = s(i, k), lb[i] = y(i, k);
            if (std::count(lb.begin(), lb.end(), 1) == 0) continue;
            total += oracle::ap_bruteforce(sc, lb);
            ++included;
        }
        if (included == 0) continue;
        mismatches += map_score(s, y) != total / included;
        ++checked;
    }
    return {mismatches == 0, fmt("%d cases (<= 8 samples, <= 3 classes), %d inexact", checked, mismatches)};
}

std::pair<bool, std::string> persistence(const Dataset<float>& te, const fs::path& work, const DeskRuns& desk,
                                         int threads) {
    // spectrogram files
    std::mt19937_64 rng(1111);
    int spec_bad = 0;
    for (int i = 0; i < 50; ++i) {
        Spectrogram<float> s{oracle::random_matrix(1 + rng() % 64, 1 + rng() % 128, rng).cast<float>(),
                             i % 2 ? Label::one_hot(std::uint32_t(rng() % 5), 5)
                                   : Label::multi_hot({1, std::uint8_t(rng() % 2), 0, 1})};
        if (i == 0) s.data(0, 0) = -0.0f;
        const fs::path p = work / "roundtrip.fast";
        write_spectrogram(p, s);
        const auto back = read_spectrogram(p);
        const bool same = encode_spectrogram(back) == detail::read_file(p) &&
                          std::memcmp(back.data.data(), s.data.data(), sizeof(float) * s.data.size()) == 0 &&
                          back.data.rows() == s.data.rows() && back.label.kind == s.label.kind &&
                          back.label.index == s.label.index && back.label.hot == s.label.hot;
        spec_bad += !same;
    }
    // checkpoints written by criterion 6
    int ck_bad = 0;
    for (const char* name : {"fixed16.fack", "flexi.fack"}) {
        const auto bytes = detail::read_file(work / name);
        ck_bad += encode_checkpoint(decode_checkpoint(bytes)) != bytes;
    }
    ck_bad += encode_checkpoint(desk.fixed) != detail::read_file(work / "fixed16.fack");
    // reloaded sweep equals the in-memory sweep
    const auto reloaded = load_checkpoint(work / "fixed16.fack");
    const auto again = sweep(reloaded, te, square_set(), {ResizeKind::PseudoInverse, ResizeKind::Bilinear}, "fixed16",
                             "multiscale", threads);
    std::ostringstream a, b;
    write_csv(desk.fixed_sweep, a);
    write_csv(again, b);
    const bool sweep_same = a.str() == b.str();
    return {spec_bad == 0 && ck_bad == 0 && sweep_same,
            fmt("50 spectrogram files (%d differ), checkpoints (%d differ), reloaded %zu-cell sweep %s", spec_bad,
                ck_bad, again.rows.size(), sweep_same ? "bit-identical" : "DIFFERS")};
}

}  // namespace

int main(int argc, char** argv) {
    fs::path work = fs::temp_directory_path() / "flexiast_acceptance";
    int threads = 1;
    for (int i = 1; i < argc; ++i) {
        const std::string a = argv[i];
        if (a == "--workdir" && i + 1 < argc) work = argv[++i];
        else if (a == "--threads" && i + 1 < argc) threads = std::stoi(argv[++i]);
        else {
            std::cerr << "usage: acceptance [--workdir DIR] [--threads N]\n";
            return 2;
        }
    }
    Clock total;
    fs::create_directories(work);
    std::printf("workdir %s, threads %d\n", work.string().c_str(), threads);

    criterion(1, "PI upsampling exactness", upsampling_exactness);
    criterion(2, "PI downsampling optimality", downsampling_optimality);
    criterion(3, "identity and constancy", identity_and_constancy);
    criterion(4, "end-to-end gradient check", gradient_check);

    Dataset<float> ms_train, ms_test, spk_train, spk_test;
    try {
        SyntheticSpec sp;
        sp.seed = kMultiscaleDataSeed;
        const auto m = read_manifest(gen_synthetic(work / "multiscale", sp).location);
        ms_train = load_split(m, "train");
        ms_test = load_split(m, "test");
        SpeakerSpec ss;
        ss.seed = kSpeakerDataSeed;
        const auto k = read_manifest(gen_speaker_synthetic(work / "speaker", ss).location);
        spk_train = load_split(k, "train");
        spk_test = load_split(k, "test");
    } catch (const std::exception& e) {
        std::printf("dataset generation failed: %s\n", e.what());
        return 1;
    }

    criterion(5, "degenerate-set equivalence", [&] { return degenerate_equivalence(ms_train); });
    DeskRuns desk;
    bool have_desk = false;
    criterion(6, "fixed vs flexi trend", [&] {
        auto r = desk_trend(ms_train, ms_test, work, threads, desk);
        have_desk = true;
        return r;
    });
    criterion(7, "PI dominates BL for the fixed model", [&] {
        if (!have_desk) throw Error("criterion 6 runs did not complete");
        return pi_dominates_bl(desk.fixed_sweep);
    });
    criterion(8, "time-only vs full-axis on speaker data", [&] { return axis_restriction(spk_train, spk_test, threads); });
    criterion(9, "distillation matches supervised flexi", [&] {
        if (!have_desk) throw Error("criterion 6 runs did not complete");
        return distillation(ms_train, ms_test, work, threads, desk);
    });
    criterion(10, "mAP equals brute-force oracle", map_oracle);
    criterion(11, "persistence round-trips", [&] {
        if (!have_desk) throw Error("criterion 6 runs did not complete");
        return persistence(ms_test, work, desk, threads);
    });

    std::printf("%d of 11 criteria failed, total %.0f s\n", g_failed, total.seconds());
    return g_failed ? 1 : 0;
}
