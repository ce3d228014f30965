#pragma once

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <ostream>
#include <string>
#include <vector>

#include "flexiast/model.hpp"
#include "flexiast/parallel.hpp"
#include "flexiast/train.hpp"

namespace flexiast {

/// Average precision of one ranking: mean of precision@k over the ranks k
/// holding a positive. Ties keep the original order.
inline double average_precision(std::span<const double> scores, std::span<const std::uint8_t> labels) {
    std::vector<std::size_t> idx(scores.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(),
                     [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    double hits = 0, sum = 0;
    for (std::size_t r = 0; r < idx.size(); ++r) {
        if (labels[idx[r]]) {
            hits += 1;
            sum += hits / double(r + 1);
        }
    }
    return hits > 0 ? sum / hits : 0.0;
}

/// Macro-averaged AP over classes with at least one positive.
/// `scores` and `labels` are n_samples x n_classes, row-major.
inline double map_score(const Matrix<double>& scores, const Matrix<std::uint8_t>& labels) {
    if (scores.rows() != labels.rows() || scores.cols() != labels.cols())
        throw Error("map_score: score/label shape mismatch");
    double total = 0;
    int included = 0;
    for (Eigen::Index c = 0; c < scores.cols(); ++c) {
        std::vector<double> s(scores.rows());
        std::vector<std::uint8_t> y(scores.rows());
        for (Eigen::Index i = 0; i < scores.rows(); ++i) {
            s[i] = scores(i, c);
            y[i] = labels(i, c);
        }
        if (std::none_of(y.begin(), y.end(), [](auto v) { return v != 0; })) continue;
        total += average_precision(s, y);
        ++included;
    }
    if (included == 0) throw Error("map_score: no class has a positive label");
    return total / included;
}

inline std::size_t argmax(const RowVector<double>& v) {
    Eigen::Index best = 0;
    for (Eigen::Index i = 1; i < v.size(); ++i)
        if (v(i) > v(best)) best = i;
    return static_cast<std::size_t>(best);
}

/// Scores the logits of a whole dataset: top-1 accuracy for single-label
/// data, mAP for multi-label data.
inline double score_logits(const std::vector<RowVector<double>>& logits, const Dataset<float>& data) {
    if (logits.size() != data.size()) throw Error("score_logits: size mismatch");
    if (data.empty()) throw Error("score_logits: empty dataset");
    if (data.label_kind == LabelKind::OneHot) {
        std::size_t correct = 0;
        for (std::size_t i = 0; i < logits.size(); ++i)
            correct += argmax(logits[i]) == data.items[i].label.index;
        return double(correct) / double(logits.size());
    }
    const auto n = static_cast<Eigen::Index>(logits.size());
    const auto c = static_cast<Eigen::Index>(data.n_classes);
    Matrix<double> s(n, c);
    Matrix<std::uint8_t> y(n, c);
    for (Eigen::Index i = 0; i < n; ++i) {
        s.row(i) = logits[i];
        for (Eigen::Index k = 0; k < c; ++k) y(i, k) = data.items[i].label.hot.at(k);
    }
    return map_score(s, y);
}

inline const char* metric_name(LabelKind k) { return k == LabelKind::OneHot ? "accuracy" : "mAP"; }

/// Resizes the weights (resize_kind) and positions (bilinear) once for the
/// requested shape, then scores the whole dataset.
inline double evaluate(const Model<float>& model, const Dataset<float>& data, PatchShape shape,
                       ResizeKind kind, AxisMode axis = AxisMode::Full, int threads = 1) {
    if (data.empty()) throw Error("evaluate: empty dataset");
    const int f = data.items[0].freq();
    const int t = data.items[0].time();
    EmbedPlan<float> plan(model.bank, shape, f, t, kind, axis);
    std::vector<RowVector<double>> logits(data.size());
    parallel_for(data.size(), threads, [&](std::size_t i) {
        const auto& s = data.items[i];
        if (s.freq() != f || s.time() != t) throw Error("evaluate: dataset items differ in size");
        logits[i] = predict(plan, model.encoder, s).cast<double>();
    });
    return score_logits(logits, data);
}

/// Axis mode a checkpoint's weights may be resized under.
inline AxisMode eval_axis(const Checkpoint& ck) {
    return ck.config.mode == TrainMode::FixedSupervised ? AxisMode::Full : ck.config.axis_mode;
}

inline double evaluate(const Checkpoint& ck, const Dataset<float>& data, PatchShape shape,
                       ResizeKind kind, int threads = 1) {
    return evaluate(ck.model, data, shape, kind, eval_axis(ck), threads);
}

struct SweepRow {
    PatchShape shape;
    ResizeKind resize_kind = ResizeKind::PseudoInverse;
    std::string metric;
    double value = 0;
    std::size_t n_samples = 0;
};

struct SweepReport {
    std::string checkpoint_id;
    std::string dataset_id;
    std::vector<SweepRow> rows;

    /// Metric for one grid cell; throws when the cell was not swept.
    double at(PatchShape s, ResizeKind k) const {
        for (const auto& r : rows)
            if (r.shape == s && r.resize_kind == k) return r.value;
        throw Error("SweepReport: no row for " + s.str() + " " + to_string(k));
    }
};

/// Cartesian evaluation: shapes in the outer loop, resize kinds inner.
inline SweepReport sweep(const Checkpoint& ck, const Dataset<float>& data,
                         const std::vector<PatchShape>& shapes, const std::vector<ResizeKind>& kinds,
                         std::string checkpoint_id = {}, std::string dataset_id = {},
                         int threads = 1) {
    if (shapes.empty() || kinds.empty()) throw Error("sweep: empty grid");
    SweepReport rep{std::move(checkpoint_id), std::move(dataset_id), {}};
    for (auto s : shapes)
        for (auto k : kinds)
            rep.rows.push_back({s, k, metric_name(data.label_kind), evaluate(ck, data, s, k, threads),
                                data.size()});
    return rep;
}

inline void write_csv(const SweepReport& rep, std::ostream& os) {
    os << "shape_freq,shape_time,resize_kind,metric,value,n_samples\n";
    char buf[64];
    for (const auto& r : rep.rows) {
        std::snprintf(buf, sizeof buf, "%.17g", r.value);
        os << r.shape.freq << ',' << r.shape.time << ',' << to_string(r.resize_kind) << ','
           << r.metric << ',' << buf << ',' << r.n_samples << '\n';
    }
}

struct PlotSeries {
    std::string label;
    std::vector<double> values;  // one per x tick, NaN for a gap
};

/// Line chart, metric in [0,1] against categorical patch-shape ticks.
inline void write_svg(std::ostream& os, const std::vector<std::string>& ticks,
                      const std::vector<PlotSeries>& series, const std::string& title,
                      const std::string& y_label) {
    constexpr double W = 640, H = 400, L = 60, R = 150, Tm = 40, B = 50;
    const double pw = W - L - R, ph = H - Tm - B;
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                   "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"};
    auto xpos = [&](std::size_t i) {
        return ticks.size() > 1 ? L + pw * double(i) / double(ticks.size() - 1) : L + pw / 2;
    };
    auto ypos = [&](double v) { return Tm + ph * (1.0 - std::clamp(v, 0.0, 1.0)); };
    char buf[256];
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
       << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    os << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    os << "<text x=\"" << W / 2 << "\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">" << title
       << "</text>\n";
    for (int g = 0; g <= 5; ++g) {
        const double v = g / 5.0;
        std::snprintf(buf, sizeof buf,
                      "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"#ddd\"/>\n"
                      "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"end\">%.1f</text>\n",
                      L, ypos(v), L + pw, ypos(v), L - 6, ypos(v) + 4, v);
        os << buf;
    }
    for (std::size_t i = 0; i < ticks.size(); ++i) {
        std::snprintf(buf, sizeof buf, "<text x=\"%.1f\" y=\"%.1f\" text-anchor=\"middle\">",
                      xpos(i), Tm + ph + 18);
        os << buf << ticks[i] << "</text>\n";
    }
    os << "<text x=\"" << L + pw / 2 << "\" y=\"" << H - 10
       << "\" text-anchor=\"middle\">patch shape</text>\n";
    std::snprintf(buf, sizeof buf,
                  "<text transform=\"translate(16,%.1f) rotate(-90)\" text-anchor=\"middle\">",
                  Tm + ph / 2);
    os << buf << y_label << "</text>\n";
    for (std::size_t s = 0; s < series.size(); ++s) {
        const char* col = colors[s % std::size(colors)];
        os << "<polyline fill=\"none\" stroke=\"" << col << "\" stroke-width=\"2\" points=\"";
        for (std::size_t i = 0; i < series[s].values.size() && i < ticks.size(); ++i) {
            if (!std::isfinite(series[s].values[i])) continue;
            std::snprintf(buf, sizeof buf, "%.1f,%.1f ", xpos(i), ypos(series[s].values[i]));
            os << buf;
        }
        os << "\"/>\n";
        for (std::size_t i = 0; i < series[s].values.size() && i < ticks.size(); ++i) {
            if (!std::isfinite(series[s].values[i])) continue;
            std::snprintf(buf, sizeof buf, "<circle cx=\"%.1f\" cy=\"%.1f\" r=\"3\" fill=\"%s\"/>\n",
                          xpos(i), ypos(series[s].values[i]), col);
            os << buf;
        }
        std::snprintf(buf, sizeof buf,
                      "<line x1=\"%.1f\" y1=\"%.1f\" x2=\"%.1f\" y2=\"%.1f\" stroke=\"%s\" "
                      "stroke-width=\"2\"/>\n<text x=\"%.1f\" y=\"%.1f\">",
                      L + pw + 12, Tm + 10 + 18.0 * s, L + pw + 32, Tm + 10 + 18.0 * s, col,
                      L + pw + 38, Tm + 14 + 18.0 * s);
        os << buf << series[s].label << "</text>\n";
    }
    os << "</svg>\n";
}

/// One series per (report, resize kind), shapes in first-seen order.
inline void write_svg(std::ostream& os, const std::vector<SweepReport>& reports,
                      const std::string& title) {
    std::vector<PatchShape> shapes;
    std::vector<ResizeKind> kinds;
    std::string metric = "metric";
    for (const auto& rep : reports)
        for (const auto& r : rep.rows) {
            if (std::find(shapes.begin(), shapes.end(), r.shape) == shapes.end())
                shapes.push_back(r.shape);
            if (std::find(kinds.begin(), kinds.end(), r.resize_kind) == kinds.end())
                kinds.push_back(r.resize_kind);
            metric = r.metric;
        }
    std::vector<std::string> ticks;
    for (auto s : shapes) ticks.push_back(s.freq == s.time ? std::to_string(s.freq) : s.str());
    std::vector<PlotSeries> series;
    for (const auto& rep : reports)
        for (auto k : kinds) {
            PlotSeries ps;
            ps.label = (rep.checkpoint_id.empty() ? std::string() : rep.checkpoint_id + " ") +
                       to_string(k);
            bool any = false;
            for (auto s : shapes) {
                double v = std::numeric_limits<double>::quiet_NaN();
                for (const auto& r : rep.rows)
                    if (r.shape == s && r.resize_kind == k) v = r.value, any = true;
                ps.values.push_back(v);
            }
            if (any) series.push_back(std::move(ps));
        }
    write_svg(os, ticks, series, title, metric);
}

}  // namespace flexiast
