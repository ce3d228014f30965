#pragma once

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "flexiast/spectrogram.hpp"
#include "flexiast/train.hpp"

namespace flexiast {

namespace fs = std::filesystem;

namespace detail {

class ByteWriter {
public:
    void u8(std::uint8_t v) { buf_.push_back(static_cast<char>(v)); }
    void u16(std::uint16_t v) { put(v, 2); }
    void u32(std::uint32_t v) { put(v, 4); }
    void u64(std::uint64_t v) { put(v, 8); }
    void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
    void bytes(std::string_view s) { buf_.append(s); }
    void matrix(const Matrix<float>& m) {
        u32(static_cast<std::uint32_t>(m.rows()));
        u32(static_cast<std::uint32_t>(m.cols()));
        for (Eigen::Index i = 0; i < m.size(); ++i) f32(m.data()[i]);
    }
    std::string& str() { return buf_; }

private:
    void put(std::uint64_t v, int n) {
        for (int i = 0; i < n; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
    }
    std::string buf_;
};

class ByteReader {
public:
    ByteReader(std::string_view data, const char* what) : data_(data), what_(what) {}

    std::uint8_t u8() { return static_cast<std::uint8_t>(take(1)[0]); }
    std::uint16_t u16() { return static_cast<std::uint16_t>(get(2)); }
    std::uint32_t u32() { return static_cast<std::uint32_t>(get(4)); }
    std::uint64_t u64() { return get(8); }
    float f32() { return std::bit_cast<float>(u32()); }
    std::string_view take(std::size_t n) {
        if (n > data_.size() - pos_)
            throw Error(std::string("corrupt ") + what_ + ": truncated at byte " +
                        std::to_string(pos_));
        auto s = data_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    Matrix<float> matrix() {
        const auto r = u32();
        const auto c = u32();
        if (std::uint64_t(r) * c * 4 > remaining())
            throw Error(std::string("corrupt ") + what_ + ": matrix larger than file");
        Matrix<float> m(r, c);
        for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = f32();
        return m;
    }
    std::size_t remaining() const { return data_.size() - pos_; }
    std::size_t pos() const { return pos_; }

private:
    std::uint64_t get(int n) {
        auto s = take(n);
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) v |= std::uint64_t(static_cast<unsigned char>(s[i])) << (8 * i);
        return v;
    }
    std::string_view data_;
    const char* what_;
    std::size_t pos_ = 0;
};

inline std::string read_file(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    if (!is) throw Error("cannot open " + p.string());
    std::ostringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

inline void write_file(const fs::path& p, std::string_view bytes) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream os(p, std::ios::binary | std::ios::trunc);
    if (!os) throw Error("cannot write " + p.string());
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw Error("write failed for " + p.string());
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Spectrogram files
//
//   "FAST" | u16 version | u32 f | u32 t | u8 label_kind | u32 n_classes |
//   label (u32 index, or n_classes bytes of 0/1) | f*t float32, freq-major
// All integers and floats little-endian.

inline constexpr std::uint16_t kSpectrogramVersion = 1;

inline std::string encode_spectrogram(const Spectrogram<float>& s) {
    if (s.data.rows() < 1 || s.data.cols() < 1) throw Error("spectrogram: empty data");
    if (!s.data.allFinite()) throw Error("spectrogram: non-finite values");
    detail::ByteWriter w;
    w.bytes("FAST");
    w.u16(kSpectrogramVersion);
    w.u32(static_cast<std::uint32_t>(s.data.rows()));
    w.u32(static_cast<std::uint32_t>(s.data.cols()));
    w.u8(static_cast<std::uint8_t>(s.label.kind));
    w.u32(s.label.n_classes);
    if (s.label.kind == LabelKind::OneHot) {
        if (s.label.index >= s.label.n_classes) throw Error("spectrogram: label index out of range");
        w.u32(s.label.index);
    } else {
        if (s.label.hot.size() != s.label.n_classes) throw Error("spectrogram: label width mismatch");
        for (auto b : s.label.hot) w.u8(b ? 1 : 0);
    }
    for (Eigen::Index i = 0; i < s.data.size(); ++i) w.f32(s.data.data()[i]);
    return std::move(w.str());
}

inline Spectrogram<float> decode_spectrogram(std::string_view bytes) {
    detail::ByteReader r(bytes, "spectrogram file");
    if (r.take(4) != "FAST") throw Error("corrupt spectrogram file: bad magic");
    const auto version = r.u16();
    if (version != kSpectrogramVersion)
        throw Error("spectrogram file version " + std::to_string(version) + " not supported");
    const auto f = r.u32();
    const auto t = r.u32();
    if (f < 1 || t < 1) throw Error("corrupt spectrogram file: empty dimensions");
    const auto kind = r.u8();
    if (kind > 1) throw Error("corrupt spectrogram file: label kind " + std::to_string(kind));
    const auto n_classes = r.u32();
    Spectrogram<float> s;
    if (kind == 0) {
        const auto idx = r.u32();
        if (idx >= n_classes) throw Error("corrupt spectrogram file: label index out of range");
        s.label = Label::one_hot(idx, n_classes);
    } else {
        if (n_classes > r.remaining()) throw Error("corrupt spectrogram file: truncated label");
        std::vector<std::uint8_t> hot(n_classes);
        for (auto& b : hot) {
            b = r.u8();
            if (b > 1) throw Error("corrupt spectrogram file: label byte not 0/1");
        }
        s.label = Label::multi_hot(std::move(hot));
    }
    if (r.remaining() != std::uint64_t(f) * t * 4)
        throw Error("corrupt spectrogram file: expected " + std::to_string(std::uint64_t(f) * t * 4) +
                    " data bytes, found " + std::to_string(r.remaining()));
    s.data.resize(f, t);
    for (Eigen::Index i = 0; i < s.data.size(); ++i) s.data.data()[i] = r.f32();
    if (!s.data.allFinite()) throw Error("corrupt spectrogram file: non-finite values");
    return s;
}

inline void write_spectrogram(const fs::path& p, const Spectrogram<float>& s) {
    detail::write_file(p, encode_spectrogram(s));
}

inline Spectrogram<float> read_spectrogram(const fs::path& p) {
    return decode_spectrogram(detail::read_file(p));
}

// ---------------------------------------------------------------------------
// Manifests: one "path<TAB>split" line per file; relative paths resolve
// against the manifest's directory.

struct ManifestEntry {
    std::string path;
    std::string split;  // train, val or test
    bool operator==(const ManifestEntry&) const = default;
};

struct DatasetManifest {
    fs::path location;  // manifest file, empty when not yet written
    std::vector<ManifestEntry> entries;
    std::uint32_t n_classes = 0;
    LabelKind label_kind = LabelKind::OneHot;

    bool empty() const { return entries.empty(); }

    fs::path resolve(const ManifestEntry& e) const {
        fs::path p(e.path);
        return p.is_absolute() || location.empty() ? p : location.parent_path() / p;
    }
};

inline void write_manifest(const DatasetManifest& m, const fs::path& p) {
    std::string out;
    for (const auto& e : m.entries) {
        if (e.path.find('\t') != std::string::npos || e.path.find('\n') != std::string::npos)
            throw Error("manifest path contains a tab or newline: " + e.path);
        out += e.path + '\t' + e.split + '\n';
    }
    detail::write_file(p, out);
}

/// Parses a manifest and checks every file shares the same label layout.
inline DatasetManifest read_manifest(const fs::path& p, bool verify_files = true) {
    DatasetManifest m;
    m.location = p;
    std::istringstream is(detail::read_file(p));
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos)
            throw Error("manifest " + p.string() + ":" + std::to_string(lineno) + ": missing tab");
        m.entries.push_back({line.substr(0, tab), line.substr(tab + 1)});
    }
    if (verify_files) {
        bool first = true;
        for (const auto& e : m.entries) {
            const auto s = read_spectrogram(m.resolve(e));
            if (first) {
                m.n_classes = s.label.n_classes;
                m.label_kind = s.label.kind;
                first = false;
            } else if (s.label.n_classes != m.n_classes || s.label.kind != m.label_kind) {
                throw Error("manifest " + p.string() + ": " + e.path +
                            " disagrees on label kind or class count");
            }
        }
    }
    return m;
}

inline Dataset<float> load_split(const DatasetManifest& m, const std::string& split) {
    Dataset<float> d;
    d.n_classes = m.n_classes;
    d.label_kind = m.label_kind;
    for (const auto& e : m.entries)
        if (e.split == split) d.items.push_back(read_spectrogram(m.resolve(e)));
    for (const auto& s : d.items)
        if (s.label.n_classes != d.n_classes || s.label.kind != d.label_kind)
            throw Error("dataset split " + split + " mixes label layouts");
    return d;
}

// ---------------------------------------------------------------------------
// Synthetic data

struct SyntheticSpec {
    int n_per_class = 200;      // train items per class
    int test_per_class = 50;
    int n_classes = 8;
    int freq = 64;
    int time = 128;
    double difficulty = 0.0;
    std::uint64_t seed = 1;
};

namespace detail {

/// Adds a Gaussian-profile line segment centred at (f0, t0).
inline void draw_segment(Matrix<float>& x, double f0, double t0, double angle, double length,
                         double width, double amp) {
    const double df = std::sin(angle), dt = std::cos(angle);
    const double half = length / 2;
    const double reach = half + 3 * width;
    const int flo = std::max(0, int(std::floor(f0 - reach)));
    const int fhi = std::min(int(x.rows()) - 1, int(std::ceil(f0 + reach)));
    const int tlo = std::max(0, int(std::floor(t0 - reach)));
    const int thi = std::min(int(x.cols()) - 1, int(std::ceil(t0 + reach)));
    const double inv = 1.0 / (2 * width * width);
    for (int i = flo; i <= fhi; ++i)
        for (int j = tlo; j <= thi; ++j) {
            const double u = (i - f0) * df + (j - t0) * dt;  // along the segment
            const double v = -(i - f0) * dt + (j - t0) * df; // across it
            const double over = std::max(0.0, std::abs(u) - half);
            x(i, j) += float(amp * std::exp(-(v * v + over * over) * inv));
        }
}

inline Spectrogram<float> render_multiscale(int cls, const SyntheticSpec& sp, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::normal_distribution<double> n01(0.0, 1.0);
    const double pi = 3.14159265358979323846;
    Matrix<float> x = Matrix<float>::Zero(sp.freq, sp.time);
    // Class = (frequency band, level). Up to four bands; further classes
    // reuse the bands at a higher ridge level.
    const int n_bands = std::min(sp.n_classes, 4);
    const int n_levels = (sp.n_classes + n_bands - 1) / n_bands;
    const int band = cls % n_bands;
    const int level = cls / n_bands;
    const double angle = 0.3 * (u01(rng) - 0.5);
    const double gain = n_levels > 1 ? std::pow(3.0, double(level) / (n_levels - 1)) : 1.0;
    const double band_lo = double(sp.freq) * band / n_bands;
    const double band_hi = double(sp.freq) * (band + 1) / n_bands;
    static constexpr double widths[] = {0.7, 1.5, 3.0};
    const double ridge_amp = 1.0 - 0.5 * std::clamp(sp.difficulty, 0.0, 1.0);
    Matrix<float> ridges = Matrix<float>::Zero(sp.freq, sp.time);
    const int n_seg = 3 + int(u01(rng) * 4);
    for (int s = 0; s < n_seg; ++s) {
        const double f0 = band_lo + (band_hi - band_lo) * (0.2 + 0.6 * u01(rng));
        const double t0 = u01(rng) * (sp.time - 1);
        const double len = 10 + u01(rng) * 30;
        const double w = widths[int(u01(rng) * 3) % 3];
        const double amp = gain * ridge_amp * (0.85 + 0.3 * u01(rng));
        draw_segment(ridges, f0, t0, angle + 0.05 * n01(rng), len, w, amp);
    }
    // band-limit: soft taper outside the class band
    for (int i = 0; i < sp.freq; ++i) {
        const double out = std::max({0.0, band_lo - i, i - band_hi});
        ridges.row(i) *= float(std::exp(-out * out / 8.0));
    }
    x += ridges;
    const double noise = 0.1 + 0.5 * sp.difficulty;
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] += float(noise * n01(rng));
    return {std::move(x), Label::one_hot(static_cast<std::uint32_t>(cls), sp.n_classes)};
}

inline Spectrogram<float> render_speaker(int spk, int n_speakers, int freq, int time,
                                         std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u01(0.0, 1.0);
    std::normal_distribution<double> n01(0.0, 1.0);
    Matrix<float> x = Matrix<float>::Zero(freq, time);
    // Identity lives only in the fine comb structure along frequency.
    const int period = 4 + spk / 4;
    const int offset = spk % 4;
    std::vector<double> comb(freq, 0.0);
    for (int i = 0; i < freq; ++i) {
        double v = 0;
        for (int k = offset; k < freq; k += period) v += std::exp(-(i - k) * (i - k) / (2 * 0.4 * 0.4));
        comb[i] = v;
    }
    // Utterance-specific formant-like bumps: smooth structure a coarse
    // frequency view cannot tell apart from an aliased comb.
    std::vector<double> bumps(freq, 0.0);
    for (int b = 0; b < std::max(1, freq / 6); ++b) {
        const double c = u01(rng) * freq;
        const double w = 1.5 + 1.5 * u01(rng);
        const double a = 0.5 + 0.5 * u01(rng);
        for (int i = 0; i < freq; ++i) bumps[i] += a * std::exp(-(i - c) * (i - c) / (2 * w * w));
    }
    // Utterance-specific broad spectral tilt and random voiced segments.
    const double tilt = 0.5 * n01(rng);
    std::vector<double> env(time, 0.0);
    for (int j = 0; j < time;) {
        const int len = 4 + int(u01(rng) * 20);
        const double amp = u01(rng) < 0.7 ? 0.6 + 0.8 * u01(rng) : 0.0;
        for (int k = j; k < std::min(time, j + len); ++k) env[k] = amp;
        j += len;
    }
    for (int i = 0; i < freq; ++i) {
        const double g = 1.0 + tilt * (double(i) / freq - 0.5);
        for (int j = 0; j < time; ++j) x(i, j) = float((comb[i] + bumps[i]) * g * env[j] + 0.15 * n01(rng));
    }
    return {std::move(x), Label::one_hot(static_cast<std::uint32_t>(spk), n_speakers)};
}

template <typename Render>
DatasetManifest write_dataset(const fs::path& dir, int n_classes, int train_per_class,
                              int test_per_class, std::uint64_t seed, Render&& render) {
    fs::create_directories(dir);
    DatasetManifest m;
    m.location = dir / "manifest.tsv";
    m.n_classes = static_cast<std::uint32_t>(n_classes);
    m.label_kind = LabelKind::OneHot;
    std::seed_seq seq{seed, std::uint64_t{0xDA7A}};
    std::mt19937_64 rng(seq);
    for (const char* split : {"train", "test"}) {
        const int per = std::string(split) == "train" ? train_per_class : test_per_class;
        for (int i = 0; i < per; ++i)
            for (int c = 0; c < n_classes; ++c) {
                char name[64];
                std::snprintf(name, sizeof name, "%s/c%02d_%05d.fast", split, c, i);
                write_spectrogram(dir / name, render(c, rng));
                m.entries.push_back({name, split});
            }
    }
    write_manifest(m, m.location);
    return m;
}

}  // namespace detail

/// Multi-scale oriented-ridge classification data. Writes `dir/manifest.tsv`
/// plus one file per item; output is a pure function of the arguments.
inline DatasetManifest gen_synthetic(const fs::path& dir, const SyntheticSpec& sp) {
    if (sp.n_classes < 2) throw Error("gen_synthetic: need at least two classes");
    if (sp.freq < 1 || sp.time < 1 || sp.n_per_class < 0 || sp.test_per_class < 0)
        throw Error("gen_synthetic: bad dimensions");
    return detail::write_dataset(dir, sp.n_classes, sp.n_per_class, sp.test_per_class, sp.seed,
                                 [&](int c, std::mt19937_64& rng) {
                                     return detail::render_multiscale(c, sp, rng);
                                 });
}

struct SpeakerSpec {
    int n_speakers = 4;
    int n_per_speaker = 200;
    int test_per_speaker = 50;
    int freq = 64;
    int time = 128;
    std::uint64_t seed = 1;
};

/// Speaker-identity data: each class is a harmonic comb at a fixed
/// frequency position with random temporal content.
inline DatasetManifest gen_speaker_synthetic(const fs::path& dir, const SpeakerSpec& sp) {
    if (sp.n_speakers < 2) throw Error("gen_speaker_synthetic: need at least two speakers");
    if (sp.freq < 1 || sp.time < 1 || sp.n_per_speaker < 0 || sp.test_per_speaker < 0)
        throw Error("gen_speaker_synthetic: bad dimensions");
    return detail::write_dataset(dir, sp.n_speakers, sp.n_per_speaker, sp.test_per_speaker, sp.seed,
                                 [&](int c, std::mt19937_64& rng) {
                                     return detail::render_speaker(c, sp.n_speakers, sp.freq,
                                                                   sp.time, rng);
                                 });
}

// ---------------------------------------------------------------------------
// Checkpoints: "FACK" | u32 version | sections of (4-byte tag, u64 length,
// payload). Sections: CONF (key=value text), SEED, HIST (text), BANK, ENCD.

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::string encode_checkpoint(const Checkpoint& ck) {
    ck.model.validate();
    detail::ByteWriter w;
    w.bytes("FACK");
    w.u32(kCheckpointVersion);
    auto section = [&](const char* tag, const std::string& payload) {
        w.bytes(std::string_view(tag, 4));
        w.u64(payload.size());
        w.bytes(payload);
    };
    section("CONF", ck.config.to_kv());
    {
        detail::ByteWriter s;
        s.u64(ck.seed);
        section("SEED", s.str());
    }
    section("HIST", ck.history);
    {
        const auto& b = ck.model.bank;
        detail::ByteWriter s;
        s.u32(b.base_shape.freq);
        s.u32(b.base_shape.time);
        s.u32(b.d);
        s.u32(b.canon_freq);
        s.u32(b.canon_time);
        s.matrix(b.omega);
        s.matrix(b.pos);
        s.matrix(Matrix<float>(b.cls));
        section("BANK", s.str());
    }
    {
        const auto& e = ck.model.encoder;
        detail::ByteWriter s;
        for (int v : {e.cfg.d, e.cfg.n_layers, e.cfg.n_heads, e.cfg.d_ff, e.cfg.n_classes})
            s.u32(static_cast<std::uint32_t>(v));
        for (const auto* m : e.blocks()) s.matrix(*m);
        section("ENCD", s.str());
    }
    return std::move(w.str());
}

inline Checkpoint decode_checkpoint(std::string_view bytes) {
    detail::ByteReader r(bytes, "checkpoint");
    if (r.take(4) != "FACK") throw Error("corrupt checkpoint: bad magic");
    const auto version = r.u32();
    if (version != kCheckpointVersion)
        throw Error("checkpoint version " + std::to_string(version) + " not supported (expected " +
                    std::to_string(kCheckpointVersion) + ")");
    Checkpoint ck;
    bool have_conf = false, have_seed = false, have_hist = false, have_bank = false,
         have_enc = false;
    while (r.remaining() > 0) {
        const std::string tag(r.take(4));
        const auto len = r.u64();
        if (len > r.remaining()) throw Error("corrupt checkpoint: section " + tag + " truncated");
        const auto payload = r.take(len);
        detail::ByteReader s(payload, "checkpoint section");
        if (tag == "CONF") {
            ck.config = TrainConfig::from_kv(std::string(payload));
            have_conf = true;
        } else if (tag == "SEED") {
            ck.seed = s.u64();
            have_seed = true;
        } else if (tag == "HIST") {
            ck.history = std::string(payload);
            have_hist = true;
        } else if (tag == "BANK") {
            auto& b = ck.model.bank;
            b.base_shape.freq = static_cast<int>(s.u32());
            b.base_shape.time = static_cast<int>(s.u32());
            b.d = static_cast<int>(s.u32());
            b.canon_freq = static_cast<int>(s.u32());
            b.canon_time = static_cast<int>(s.u32());
            b.omega = s.matrix();
            b.pos = s.matrix();
            const auto cls = s.matrix();
            if (cls.rows() != 1) throw Error("corrupt checkpoint: CLS must be a row vector");
            b.cls = cls.row(0);
            have_bank = true;
        } else if (tag == "ENCD") {
            EncoderConfig c;
            c.d = int(s.u32());
            c.n_layers = int(s.u32());
            c.n_heads = int(s.u32());
            c.d_ff = int(s.u32());
            c.n_classes = int(s.u32());
            if (c.n_layers > 1024) throw Error("corrupt checkpoint: implausible layer count");
            auto& e = ck.model.encoder;
            e = EncoderParams<float>::zeros(c);
            for (auto* m : e.blocks()) {
                const auto rows = m->rows(), cols = m->cols();
                *m = s.matrix();
                if (m->rows() != rows || m->cols() != cols)
                    throw Error("corrupt checkpoint: encoder block shape mismatch");
            }
            have_enc = true;
        } else {
            throw Error("corrupt checkpoint: unknown section '" + tag + "'");
        }
        if (s.remaining() != 0 && tag != "CONF" && tag != "HIST")
            throw Error("corrupt checkpoint: trailing bytes in section " + tag);
    }
    if (!(have_conf && have_seed && have_hist && have_bank && have_enc))
        throw Error("corrupt checkpoint: missing section");
    try {
        ck.model.validate();
    } catch (const Error& e) {
        throw Error(std::string("corrupt checkpoint: ") + e.what());
    }
    return ck;
}

inline void save_checkpoint(const fs::path& p, const Checkpoint& ck) {
    detail::write_file(p, encode_checkpoint(ck));
}

inline Checkpoint load_checkpoint(const fs::path& p) {
    return decode_checkpoint(detail::read_file(p));
}

/// Loads teacher / init checkpoints named in the config, then trains.
inline Checkpoint train_from_config(const Dataset<float>& data, const TrainConfig& cfg,
                                    std::ostream* log = nullptr) {
    TrainResources res;
    res.log = log;
    Checkpoint teacher, init;
    if (!cfg.teacher_checkpoint.empty()) {
        teacher = load_checkpoint(cfg.teacher_checkpoint);
        res.teacher = &teacher;
    }
    if (!cfg.init_checkpoint.empty()) {
        init = load_checkpoint(cfg.init_checkpoint);
        res.init = &init;
    }
    return train(data, cfg, res);
}

}  // namespace flexiast
