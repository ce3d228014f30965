// flexiast-cli: data generation, training, evaluation sweeps, weight
// conversion and a self-test, one subcommand per invocation.

#include <CLI11.hpp>

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <random>

#include "flexiast/flexiast.hpp"

namespace fs = std::filesystem;
using namespace flexiast;

namespace {

// Runtime failure tagged with the module that raised it.
struct StageError : std::runtime_error {
    StageError(const std::string& module, const std::string& cause)
        : std::runtime_error(module + ": " + cause) {}
};

template <typename F>
auto stage(const char* module, F&& f) -> decltype(f()) {
    try {
        return f();
    } catch (const StageError&) {
        throw;
    } catch (const std::exception& e) {
        throw StageError(module, e.what());
    }
}

fs::path default_out_dir() {
    const char* env = std::getenv("FLEXIAST_OUT");
    return env && *env ? fs::path(env) : fs::path("flexiast_out");
}

std::vector<ResizeKind> parse_kinds(const std::string& csv) {
    std::vector<ResizeKind> out;
    std::stringstream ss(csv);
    std::string tok;
    while (std::getline(ss, tok, ','))
        if (!tok.empty()) out.push_back(parse_resize_kind(tok));
    if (out.empty()) throw Error("empty resize kind list");
    return out;
}

void write_text(const fs::path& p, const std::string& text) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    detail::write_file(p, text);
}

// ---------------------------------------------------------------------------
// gen-data

struct GenDataOpts {
    std::string kind = "multiscale";
    std::string out;
    std::uint64_t seed = 1;
    int classes = 0;
    int train_per_class = 200;
    int test_per_class = 50;
    int freq = 64;
    int time = 128;
    double difficulty = 0.0;
};

int run_gen_data(const GenDataOpts& o) {
    const fs::path dir = o.out.empty() ? default_out_dir() / "data" : fs::path(o.out);
    const auto m = stage("dataio", [&] {
        if (o.kind == "multiscale") {
            SyntheticSpec sp;
            sp.n_classes = o.classes > 0 ? o.classes : 8;
            sp.n_per_class = o.train_per_class;
            sp.test_per_class = o.test_per_class;
            sp.freq = o.freq;
            sp.time = o.time;
            sp.difficulty = o.difficulty;
            sp.seed = o.seed;
            return gen_synthetic(dir, sp);
        }
        SpeakerSpec sp;
        sp.n_speakers = o.classes > 0 ? o.classes : 4;
        sp.n_per_speaker = o.train_per_class;
        sp.test_per_speaker = o.test_per_class;
        sp.freq = o.freq;
        sp.time = o.time;
        sp.seed = o.seed;
        return gen_speaker_synthetic(dir, sp);
    });
    std::cout << m.location.string() << '\n';
    return 0;
}

// ---------------------------------------------------------------------------
// train

struct TrainOpts {
    std::string data;
    std::string split = "train";
    std::string config;
    std::string out;
    std::string log;
    std::vector<std::string> sets;
    std::optional<std::string> mode, patch_set, axis, resize, teacher, init, fixed_shape, base_shape;
    std::optional<std::uint64_t> seed;
    std::optional<int> epochs, batch_size, threads;
    std::optional<double> lr, clip, distill_weight;
};

TrainConfig build_train_config(const TrainOpts& o, const Dataset<float>& data) {
    TrainConfig cfg;
    cfg.encoder.n_classes = static_cast<int>(data.n_classes);
    if (!o.config.empty()) {
        std::ifstream is(o.config);
        if (!is) throw Error("cannot open config file " + o.config);
        cfg.load_kv(is);
    }
    // Flags win over the file. Axis and base shape go first so the patch
    // set is parsed under them.
    if (o.axis) cfg.set("axis_mode", *o.axis);
    if (o.base_shape) cfg.set("base_shape", *o.base_shape);
    for (const auto& kv : o.sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) throw Error("--set expects key=value, got '" + kv + "'");
        cfg.set(kv.substr(0, eq), kv.substr(eq + 1));
    }
    if (o.mode) cfg.set("mode", *o.mode);
    if (o.fixed_shape) cfg.set("fixed_shape", *o.fixed_shape);
    if (o.patch_set) {
        cfg.set("patch_set", *o.patch_set);
    } else if (cfg.axis_mode != AxisMode::Full) {
        // keep the sizes of the default or file patch set, anchored on the axis
        std::vector<int> sizes;
        for (auto s : cfg.patch_set) sizes.push_back(cfg.axis_mode == AxisMode::FreqOnly ? s.freq : s.time);
        cfg.patch_set = PatchSet::from_sizes(sizes, cfg.axis_mode, cfg.base_shape).shapes;
    }
    if (o.resize) cfg.set("resize_kind", *o.resize);
    if (o.teacher) cfg.teacher_checkpoint = *o.teacher;
    if (o.init) cfg.init_checkpoint = *o.init;
    if (o.seed) cfg.seed = *o.seed;
    if (o.epochs) cfg.epochs = *o.epochs;
    if (o.batch_size) cfg.batch_size = *o.batch_size;
    if (o.threads) cfg.threads = *o.threads;
    if (o.lr) cfg.learning_rate = *o.lr;
    if (o.clip) cfg.grad_clip = *o.clip;
    if (o.distill_weight) cfg.distill_weight = *o.distill_weight;
    cfg.validate();
    return cfg;
}

int run_train(const TrainOpts& o) {
    const auto data = stage("dataio", [&] { return load_split(read_manifest(o.data), o.split); });
    const auto cfg = stage("config", [&] { return build_train_config(o, data); });
    const fs::path out = o.out.empty() ? default_out_dir() / "checkpoint.fack" : fs::path(o.out);
    std::ofstream log_file;
    if (!o.log.empty()) {
        if (fs::path(o.log).has_parent_path()) fs::create_directories(fs::path(o.log).parent_path());
        log_file.open(o.log);
        if (!log_file) throw StageError("cli", "cannot open log file " + o.log);
    }
    const auto ck = stage("flexitrain", [&] {
        return train_from_config(data, cfg, o.log.empty() ? nullptr : &log_file);
    });
    stage("dataio", [&] {
        if (out.has_parent_path()) fs::create_directories(out.parent_path());
        save_checkpoint(out, ck);
    });
    std::cout << out.string() << '\n';
    return 0;
}

// ---------------------------------------------------------------------------
// eval-sweep

struct SweepOpts {
    std::string checkpoint;
    std::string data;
    std::string split = "test";
    std::string shapes = "8,10,12,16,20,24,30,32,40,48";
    std::string resize = "pi,bl";
    std::string out;
    std::string svg;
    std::string label;
    int threads = 1;
};

int run_sweep(const SweepOpts& o) {
    const auto ck = stage("dataio", [&] { return load_checkpoint(o.checkpoint); });
    const auto data = stage("dataio", [&] { return load_split(read_manifest(o.data), o.split); });
    const auto shapes = stage("cli", [&] {
        return parse_shape_list(o.shapes, eval_axis(ck), ck.model.bank.base_shape);
    });
    const auto kinds = stage("cli", [&] { return parse_kinds(o.resize); });
    const std::string label = o.label.empty() ? fs::path(o.checkpoint).stem().string() : o.label;
    const auto rep = stage("metrics_harness", [&] {
        return sweep(ck, data, shapes, kinds, label, o.data, o.threads);
    });
    const fs::path csv = o.out.empty() ? default_out_dir() / "sweep.csv" : fs::path(o.out);
    const fs::path svg = o.svg.empty() ? fs::path(csv).replace_extension(".svg") : fs::path(o.svg);
    stage("metrics_harness", [&] {
        std::ostringstream c, s;
        write_csv(rep, c);
        write_svg(s, std::vector<SweepReport>{rep}, label);
        write_text(csv, c.str());
        write_text(svg, s.str());
    });
    std::cout << csv.string() << '\n' << svg.string() << '\n';
    return 0;
}

// ---------------------------------------------------------------------------
// resize-weights

struct ResizeOpts {
    std::string checkpoint;
    std::string base_shape;
    std::string out;
    std::string dump_operator;
    std::string from = "16";
    std::string to = "8";
    std::string resize = "pi";
};

int run_resize(const ResizeOpts& o) {
    if (!o.dump_operator.empty()) {
        stage("resize_core", [&] {
            const auto src = parse_shape(o.from, AxisMode::Full, {16, 16});
            const auto dst = parse_shape(o.to, AxisMode::Full, {16, 16});
            const auto op = build_operator<double>(src, dst, parse_resize_kind(o.resize));
            std::ostringstream os;
            dump_csv(op, os);
            write_text(o.dump_operator, os.str());
        });
        std::cout << o.dump_operator << '\n';
        if (o.checkpoint.empty()) return 0;
    }
    auto ck = stage("dataio", [&] { return load_checkpoint(o.checkpoint); });
    stage("embedding", [&] {
        const auto target = parse_shape(o.base_shape, AxisMode::Full, ck.model.bank.base_shape);
        ck.model.bank = init_from_fixed(ck.model.bank, target);
        if (ck.config.mode == TrainMode::FixedSupervised) ck.config.fixed_shape = target;
        else ck.config.base_shape = target;
        ck.history += "resize-weights " + target.str() + "\n";
    });
    const fs::path out = o.out.empty() ? default_out_dir() / "resized.fack" : fs::path(o.out);
    stage("dataio", [&] {
        if (out.has_parent_path()) fs::create_directories(out.parent_path());
        save_checkpoint(out, ck);
    });
    std::cout << out.string() << '\n';
    return 0;
}

// ---------------------------------------------------------------------------
// selftest

Matrix<double> random_matrix(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng) {
    std::normal_distribution<double> n01;
    Matrix<double> m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n01(rng);
    return m;
}

double rel(const Matrix<double>& a, const Matrix<double>& b) {
    return (a - b).norm() / std::max(1e-300, std::max(a.norm(), b.norm()));
}

struct Group {
    const char* name;
    std::function<std::string()> run;  // empty string on pass, else the failure
};

std::string check_identity() {
    for (int p : {8, 12, 16, 30}) {
        const PatchShape s{p, p};
        for (auto k : {ResizeKind::Bilinear, ResizeKind::PseudoInverse}) {
            const auto op = build_operator<double>(s, s, k);
            const double e = (op.matrix - Matrix<double>::Identity(s.area(), s.area())).cwiseAbs().maxCoeff();
            if (e > 1e-6) return s.str() + " " + to_string(k) + " deviates by " + std::to_string(e);
        }
    }
    return {};
}

std::string check_constants() {
    const std::vector<PatchShape> shapes{{8, 8}, {16, 16}, {10, 24}, {48, 48}, {16, 8}};
    for (auto a : shapes)
        for (auto b : shapes) {
            const auto op = build_bilinear<double>(a, b);
            const Matrix<double> ones = Matrix<double>::Constant(1, a.area(), 2.5);
            const double e = (op.apply(ones).array() - 2.5).abs().maxCoeff();
            if (e > 1e-6) return a.str() + "->" + b.str() + " off by " + std::to_string(e);
        }
    return {};
}

std::string check_upsampling() {
    std::mt19937_64 rng(11);
    const std::vector<int> P = default_patch_sizes();
    for (std::size_t i = 0; i < P.size(); ++i)
        for (std::size_t j = i + 1; j < P.size(); ++j) {
            const PatchShape s{P[i], P[i]}, t{P[j], P[j]};
            const auto B = build_bilinear<float>(s, t);
            const auto PI = build_pi_resize<float>(s, t);
            for (int draw = 0; draw < 5; ++draw) {
                const Matrix<float> x = random_matrix(1, s.area(), rng).cast<float>();
                const Matrix<float> w = random_matrix(1, s.area(), rng).cast<float>();
                const float lhs = (x.array() * w.array()).sum();
                const float rhs = (B.apply(x).array() * PI.apply(w).array()).sum();
                if (std::abs(lhs - rhs) > 1e-4f * std::max(1.0f, std::abs(lhs)))
                    return s.str() + "->" + t.str() + " token mismatch " + std::to_string(lhs - rhs);
            }
        }
    return {};
}

std::string check_downsampling() {
    for (auto [a, b] : std::vector<std::pair<int, int>>{{16, 8}, {16, 10}, {24, 12}, {48, 20}}) {
        const PatchShape s{a, a}, t{b, b};
        const Matrix<double> B = build_bilinear<double>(s, t).matrix;  // t x s
        const Matrix<double> BBt = B * B.transpose();
        const Matrix<double> normal = BBt.ldlt().solve(B);
        const double e = rel(build_pi_resize<double>(s, t).matrix, normal);
        if (e > 1e-4) return s.str() + "->" + t.str() + " relative error " + std::to_string(e);
    }
    return {};
}

std::string check_gradients() {
    std::mt19937_64 rng(5);
    Dataset<double> data;
    data.n_classes = 3;
    for (int i = 0; i < 2; ++i) data.items.push_back({random_matrix(32, 32, rng), Label::one_hot(i, 3)});
    TrainConfig cfg;
    cfg.encoder = {8, 1, 2, 16, 3};
    std::vector<BatchItem<double>> batch{{&data.items[0], nullptr}, {&data.items[1], nullptr}};
    for (auto kind : {ResizeKind::PseudoInverse, ResizeKind::Bilinear}) {
        cfg.resize_kind = kind;
        for (PatchShape shape : {PatchShape{16, 16}, PatchShape{8, 8}}) {
            auto model = Model<double>::init(cfg.encoder, {16, 16}, 32, 32, 3);
            const auto g = compute_gradients<double>(batch, model, shape, cfg);
            auto loss = [&] { return compute_gradients<double>(batch, model, shape, cfg).loss; };
            std::vector<std::pair<Matrix<double>*, const Matrix<double>*>> blocks{
                {&model.bank.omega, &g.grad.bank.omega}, {&model.bank.pos, &g.grad.bank.pos}};
            const Matrix<double> gcls = g.grad.bank.cls;
            auto enc = model.encoder.blocks();
            auto genc = g.grad.encoder.blocks();
            for (std::size_t b = 0; b < enc.size(); ++b) blocks.push_back({enc[b], genc[b]});
            // central differences on up to 48 sampled coordinates per block
            auto fd_block = [&](auto get, auto set, Eigen::Index n, const Matrix<double>& analytic) {
                std::uniform_int_distribution<Eigen::Index> pick(0, n - 1);
                Matrix<double> fd(1, std::min<Eigen::Index>(n, 48)), an(1, fd.cols());
                for (Eigen::Index c = 0; c < fd.cols(); ++c) {
                    const Eigen::Index i = n <= 48 ? c : pick(rng);
                    const double keep = get(i), h = 1e-5;
                    set(i, keep + h);
                    const double lp = loss();
                    set(i, keep - h);
                    const double lm = loss();
                    set(i, keep);
                    fd(0, c) = (lp - lm) / (2 * h);
                    an(0, c) = analytic.data()[i];
                }
                return (fd - an).norm() / std::max(1e-12, fd.norm() + an.norm());
            };
            std::string where = to_string(kind) + std::string(" at ") + shape.str();
            for (std::size_t b = 0; b < blocks.size(); ++b) {
                auto* m = blocks[b].first;
                const double e = fd_block([&](Eigen::Index i) { return m->data()[i]; },
                                          [&](Eigen::Index i, double v) { m->data()[i] = v; },
                                          m->size(), *blocks[b].second);
                if (e > 1e-3) return where + ": block " + std::to_string(b) + " relative error " + std::to_string(e);
            }
            const double e = fd_block([&](Eigen::Index i) { return model.bank.cls(i); },
                                      [&](Eigen::Index i, double v) { model.bank.cls(i) = v; },
                                      model.bank.cls.size(), gcls);
            if (e > 1e-3) return where + ": cls relative error " + std::to_string(e);
        }
    }
    return {};
}

std::string check_checkpoint() {
    Checkpoint ck;
    ck.config.encoder = {8, 1, 2, 16, 3};
    ck.model = Model<float>::init(ck.config.encoder, {16, 16}, 32, 32, 9);
    ck.seed = 9;
    const auto bytes = encode_checkpoint(ck);
    if (encode_checkpoint(decode_checkpoint(bytes)) != bytes) return "re-encoding changed the bytes";
    return {};
}

int run_selftest() {
    const std::vector<Group> groups{
        {"resize.identity", check_identity},
        {"resize.constants", check_constants},
        {"resize.upsampling", check_upsampling},
        {"resize.downsampling", check_downsampling},
        {"gradients", check_gradients},
        {"checkpoint.roundtrip", check_checkpoint},
    };
    int failed = 0;
    for (const auto& g : groups) {
        std::string why;
        try {
            why = g.run();
        } catch (const std::exception& e) {
            why = std::string("exception: ") + e.what();
        }
        std::cout << (why.empty() ? "PASS " : "FAIL ") << g.name;
        if (!why.empty()) std::cout << " (" << why << ")";
        std::cout << '\n';
        failed += !why.empty();
    }
    if (failed) throw StageError("selftest", std::to_string(failed) + " group(s) failed");
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Patch-size-flexible spectrogram transformer toolkit"};
    app.require_subcommand(1, 1);
    app.footer("Default output directory: $FLEXIAST_OUT, else ./flexiast_out");
    app.failure_message(CLI::FailureMessage::help);

    GenDataOpts gd;
    auto* gen = app.add_subcommand("gen-data", "Write a synthetic dataset and its manifest");
    gen->add_option("--kind", gd.kind, "multiscale or speaker")
        ->check(CLI::IsMember({"multiscale", "speaker"}))
        ->capture_default_str();
    gen->add_option("--out", gd.out, "Output directory (default <out-dir>/data)");
    gen->add_option("--seed", gd.seed, "Generator seed")->capture_default_str();
    gen->add_option("--classes", gd.classes, "Classes or speakers (default 8 / 4)");
    gen->add_option("--train-per-class", gd.train_per_class)->capture_default_str();
    gen->add_option("--test-per-class", gd.test_per_class)->capture_default_str();
    gen->add_option("--freq", gd.freq, "Frequency bins")->capture_default_str();
    gen->add_option("--time", gd.time, "Time frames")->capture_default_str();
    gen->add_option("--difficulty", gd.difficulty, "Ridge attenuation in [0,1] (multiscale)")
        ->capture_default_str();

    TrainOpts tr;
    auto* trn = app.add_subcommand("train", "Train a fixed or flexible model");
    trn->add_option("--data", tr.data, "Dataset manifest")->required();
    trn->add_option("--split", tr.split, "Manifest split to train on")->capture_default_str();
    trn->add_option("--config", tr.config, "key=value config file (flags override it)");
    trn->add_option("--out", tr.out, "Checkpoint path (default <out-dir>/checkpoint.fack)");
    trn->add_option("--log", tr.log, "Line-delimited JSON training log");
    trn->add_option("--mode", tr.mode, "flexi, flexi-distill or fixed");
    trn->add_option("--patch-set", tr.patch_set, "Comma list of sizes or FxT shapes");
    trn->add_option("--axis", tr.axis, "full or time");
    trn->add_option("--resize", tr.resize, "pi or bl");
    trn->add_option("--fixed-shape", tr.fixed_shape, "Patch shape for fixed mode");
    trn->add_option("--base-shape", tr.base_shape, "Stored patch shape for flexi modes");
    trn->add_option("--seed", tr.seed, "Training seed");
    trn->add_option("--epochs", tr.epochs);
    trn->add_option("--batch-size", tr.batch_size);
    trn->add_option("--lr", tr.lr, "Learning rate");
    trn->add_option("--clip", tr.clip, "Global gradient-norm clip, 0 disables");
    trn->add_option("--distill-weight", tr.distill_weight, "KL share of the distillation loss");
    trn->add_option("--teacher", tr.teacher, "Teacher checkpoint (flexi-distill)");
    trn->add_option("--init", tr.init, "Warm-start checkpoint");
    trn->add_option("--threads", tr.threads, "Worker threads");
    trn->add_option("--set", tr.sets, "Extra config key=value, repeatable");

    SweepOpts sw;
    auto* swp = app.add_subcommand("eval-sweep", "Evaluate a checkpoint over patch shapes and resize kinds");
    swp->add_option("--checkpoint", sw.checkpoint)->required();
    swp->add_option("--data", sw.data, "Dataset manifest")->required();
    swp->add_option("--split", sw.split)->capture_default_str();
    swp->add_option("--shapes", sw.shapes, "Comma list of sizes or FxT shapes")->capture_default_str();
    swp->add_option("--resize", sw.resize, "Comma list of pi, bl")->capture_default_str();
    swp->add_option("--out", sw.out, "CSV path (default <out-dir>/sweep.csv)");
    swp->add_option("--svg", sw.svg, "SVG path (default: CSV path with .svg)");
    swp->add_option("--label", sw.label, "Series label (default: checkpoint file stem)");
    swp->add_option("--threads", sw.threads)->capture_default_str();

    ResizeOpts rs;
    auto* rsz = app.add_subcommand("resize-weights",
                                   "Re-base a checkpoint's patch weights, or dump a resize operator");
    rsz->add_option("--checkpoint", rs.checkpoint);
    rsz->add_option("--base-shape", rs.base_shape, "New stored patch shape");
    rsz->add_option("--out", rs.out, "Output checkpoint (default <out-dir>/resized.fack)");
    rsz->add_option("--dump-operator", rs.dump_operator, "Write the --from -> --to operator as CSV");
    rsz->add_option("--from", rs.from)->capture_default_str();
    rsz->add_option("--to", rs.to)->capture_default_str();
    rsz->add_option("--resize", rs.resize, "pi or bl")->capture_default_str();

    app.add_subcommand("selftest", "Check resize, gradient and checkpoint invariants");

    try {
        app.parse(argc, argv);
        if (rsz->parsed() && rs.dump_operator.empty() && (rs.checkpoint.empty() || rs.base_shape.empty()))
            throw CLI::ValidationError("resize-weights needs --checkpoint and --base-shape, or --dump-operator");
        if (rsz->parsed() && !rs.checkpoint.empty() && rs.base_shape.empty())
            throw CLI::ValidationError("--checkpoint requires --base-shape");
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    try {
        if (gen->parsed()) return run_gen_data(gd);
        if (trn->parsed()) return run_train(tr);
        if (swp->parsed()) return run_sweep(sw);
        if (rsz->parsed()) return run_resize(rs);
        return run_selftest();
    } catch (const std::exception& e) {
        std::cerr << "flexiast-cli: " << e.what() << '\n';
        return 1;
    }
}
