#include "babyit/report.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <set>

#include <fmt/format.h>

namespace babyit::report {

ScoreMatrix ScoreMatrix::from_results(const std::vector<eval::TaskResult>& results) {
    std::set<std::string> models, tasks;
    std::map<std::string, eval::Metric> metric_of;
    for (const auto& r : results) {
        models.insert(r.model_id);
        tasks.insert(r.task);
        auto [it, inserted] = metric_of.emplace(r.task, r.metric);
        if (!inserted && it->second != r.metric) {
            throw Error(fmt::format("task '{}' mixes metrics {} and {}", r.task, eval::to_string(it->second), eval::to_string(r.metric)));
        }
    }
    ScoreMatrix m;
    m.models.assign(models.begin(), models.end());
    m.tasks.assign(tasks.begin(), tasks.end());
    for (const auto& t : m.tasks) {
        m.metrics.push_back(metric_of.at(t));
    }
    m.cells.assign(m.models.size(), std::vector<std::optional<double>>(m.tasks.size()));
    auto index = [](const std::vector<std::string>& v, const std::string& s) {
        return static_cast<std::size_t>(std::lower_bound(v.begin(), v.end(), s) - v.begin());
    };
    for (const auto& r : results) {
        auto& cell = m.cells[index(m.models, r.model_id)][index(m.tasks, r.task)];
        if (cell) {
            throw Error(fmt::format("duplicate result for task '{}', model '{}'", r.task, r.model_id));
        }
        cell = r.value;
    }
    return m;
}

namespace {

struct Moments {
    double mean = 0.0;
    double std = 0.0;
    std::size_t n = 0;
};

Moments population_moments(const std::vector<double>& xs) {
    Moments m;
    m.n = xs.size();
    if (xs.empty()) {
        return m;
    }
    for (double x : xs) {
        m.mean += x;
    }
    m.mean /= static_cast<double>(xs.size());
    double ss = 0.0;
    for (double x : xs) {
        ss += (x - m.mean) * (x - m.mean);
    }
    m.std = std::sqrt(ss / static_cast<double>(xs.size()));
    return m;
}

}  // namespace

ZScoreReport zscores(const ScoreMatrix& matrix, Standardization mode, std::vector<std::string>* warnings) {
    const auto n_models = matrix.models.size();
    const auto n_tasks = matrix.tasks.size();
    auto column = [&](std::size_t t) {
        std::vector<double> xs;
        for (std::size_t m = 0; m < n_models; ++m) {
            if (matrix.cells[m][t]) {
                xs.push_back(*matrix.cells[m][t]);
            }
        }
        return xs;
    };

    std::vector<Moments> moments(n_tasks);
    if (mode == Standardization::per_task) {
        for (std::size_t t = 0; t < n_tasks; ++t) {
            moments[t] = population_moments(column(t));
        }
    } else {
        std::map<eval::Metric, std::vector<double>> pools;
        for (std::size_t t = 0; t < n_tasks; ++t) {
            auto xs = column(t);
            auto& pool = pools[matrix.metrics[t]];
            pool.insert(pool.end(), xs.begin(), xs.end());
        }
        for (std::size_t t = 0; t < n_tasks; ++t) {
            moments[t] = population_moments(pools[matrix.metrics[t]]);
        }
    }

    ZScoreReport report;
    report.models = matrix.models;
    report.z.assign(n_models, {});
    for (std::size_t t = 0; t < n_tasks; ++t) {
        const auto& mo = moments[t];
        const auto present = column(t).size();
        if (present < 2 || mo.n < 2 || !(mo.std > 0.0)) {
            report.dropped.push_back(matrix.tasks[t]);
            if (warnings) {
                warnings->push_back(present < 2 ? fmt::format("task '{}' has fewer than 2 scores; dropped", matrix.tasks[t])
                                                : fmt::format("task '{}' has zero variance; dropped", matrix.tasks[t]));
            }
            continue;
        }
        report.tasks.push_back(matrix.tasks[t]);
        for (std::size_t m = 0; m < n_models; ++m) {
            const auto& cell = matrix.cells[m][t];
            report.z[m].push_back(cell ? std::optional<double>((*cell - mo.mean) / mo.std) : std::nullopt);
        }
    }
    return report;
}

std::vector<ModelIndex> aggregate_model_index(const ZScoreReport& report) {
    std::vector<ModelIndex> out;
    for (std::size_t m = 0; m < report.models.size(); ++m) {
        ModelIndex idx{report.models[m], 0.0, 0};
        for (const auto& z : report.z[m]) {
            if (z) {
                idx.mean_z += *z;
                ++idx.n_tasks;
            }
        }
        if (idx.n_tasks == 0) {
            continue;
        }
        idx.mean_z /= static_cast<double>(idx.n_tasks);
        out.push_back(idx);
    }
    return out;
}

double quantile(const std::vector<double>& sorted, double p) {
    if (sorted.empty()) {
        throw Error("quantile: empty data");
    }
    const double h = static_cast<double>(sorted.size() - 1) * p;
    const auto lo = static_cast<std::size_t>(std::floor(h));
    if (lo + 1 >= sorted.size()) {
        return sorted.back();
    }
    return sorted[lo] + (h - static_cast<double>(lo)) * (sorted[lo + 1] - sorted[lo]);
}

BoxStats box_stats(std::vector<double> values) {
    if (values.empty()) {
        throw Error("box_stats: no values");
    }
    std::sort(values.begin(), values.end());
    BoxStats b;
    b.median = quantile(values, 0.5);
    b.q1 = quantile(values, 0.25);
    b.q3 = quantile(values, 0.75);
    b.iqr = b.q3 - b.q1;
    b.lower_fence = b.q1 - 1.5 * b.iqr;
    b.upper_fence = b.q3 + 1.5 * b.iqr;
    b.whisker_low = b.q1;
    b.whisker_high = b.q3;
    bool any_inside = false;
    for (double v : values) {
        if (v < b.lower_fence || v > b.upper_fence) {
            b.outliers.push_back(v);
        } else if (!any_inside) {
            b.whisker_low = b.whisker_high = v;
            any_inside = true;
        } else {
            b.whisker_high = v;
        }
    }
    return b;
}

namespace {

std::vector<double> present(const std::vector<std::optional<double>>& row) {
    std::vector<double> out;
    for (const auto& z : row) {
        if (z) {
            out.push_back(*z);
        }
    }
    return out;
}

}  // namespace

std::string zscores_csv(const ScoreMatrix& matrix, const ZScoreReport& report) {
    std::string out = "model_id,task,value,z\n";
    for (std::size_t m = 0; m < report.models.size(); ++m) {
        const auto mi = static_cast<std::size_t>(std::find(matrix.models.begin(), matrix.models.end(), report.models[m]) - matrix.models.begin());
        for (std::size_t t = 0; t < report.tasks.size(); ++t) {
            const auto ti = static_cast<std::size_t>(std::find(matrix.tasks.begin(), matrix.tasks.end(), report.tasks[t]) - matrix.tasks.begin());
            const auto& z = report.z[m][t];
            if (!z) {
                continue;
            }
            out += fmt::format("{},{},{},{}\n", csv_field(report.models[m]), csv_field(report.tasks[t]), fixed(*matrix.cells[mi][ti], 6),
                               fixed(*z, 12));
        }
    }
    return out;
}

std::string model_index_csv(const std::vector<ModelIndex>& index) {
    std::string out = "model_id,mean_z,n_tasks\n";
    for (const auto& i : index) {
        out += fmt::format("{},{},{}\n", csv_field(i.model), fixed(i.mean_z, 12), i.n_tasks);
    }
    return out;
}

std::string box_stats_csv(const ZScoreReport& report) {
    std::string out = "model_id,median,q1,q3,iqr,lower_fence,upper_fence,outliers\n";
    for (std::size_t m = 0; m < report.models.size(); ++m) {
        const auto values = present(report.z[m]);
        if (values.empty()) {
            continue;
        }
        const auto b = box_stats(values);
        std::vector<std::string> outliers;
        for (double v : b.outliers) {
            outliers.push_back(fixed(v, 12));
        }
        out += fmt::format("{},{},{},{},{},{},{},{}\n", csv_field(report.models[m]), fixed(b.median, 12), fixed(b.q1, 12), fixed(b.q3, 12),
                           fixed(b.iqr, 12), fixed(b.lower_fence, 12), fixed(b.upper_fence, 12), join(outliers, ";"));
    }
    return out;
}

namespace {

std::string xml_escape(std::string_view s) {
    std::string out;
    for (char c : s) {
        switch (c) {
            case '&':
                out += "&amp;";
                break;
            case '<':
                out += "&lt;";
                break;
            case '>':
                out += "&gt;";
                break;
            case '"':
                out += "&quot;";
                break;
            default:
                out += c;
        }
    }
    return out;
}

}  // namespace

std::string box_plot_svg(const ZScoreReport& report, const std::string& title, const std::string& comment) {
    constexpr double kLeft = 60.0, kTop = 40.0, kSlot = 90.0, kPlotHeight = 280.0, kBoxWidth = 40.0;
    std::vector<std::pair<std::string, BoxStats>> boxes;
    double lo = -1.0, hi = 1.0;
    for (std::size_t m = 0; m < report.models.size(); ++m) {
        const auto values = present(report.z[m]);
        if (values.empty()) {
            continue;
        }
        auto b = box_stats(values);
        lo = std::min({lo, b.whisker_low, b.outliers.empty() ? lo : b.outliers.front()});
        hi = std::max({hi, b.whisker_high, b.outliers.empty() ? hi : b.outliers.back()});
        boxes.emplace_back(report.models[m], std::move(b));
    }
    lo = std::floor(lo);
    hi = std::ceil(hi);
    const double width = kLeft + kSlot * static_cast<double>(std::max<std::size_t>(boxes.size(), 1)) + 20.0;
    const double height = kTop + kPlotHeight + 60.0;
    auto y_of = [&](double v) { return kTop + (hi - v) / (hi - lo) * kPlotHeight; };
    auto num = [](double v) { return fixed(v, 2); };

    std::string s;
    s += "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n";
    if (!comment.empty()) {
        std::string safe = comment;
        for (auto pos = safe.find("--"); pos != std::string::npos; pos = safe.find("--")) {
            safe.replace(pos, 2, "- -");
        }
        s += fmt::format("<!-- {} -->\n", safe);
    }
    s += fmt::format("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {} {}\">\n", num(width), num(height),
                     num(width), num(height));
    s += fmt::format("<rect x=\"0\" y=\"0\" width=\"{}\" height=\"{}\" fill=\"white\"/>\n", num(width), num(height));
    s += fmt::format("<text x=\"{}\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\" text-anchor=\"middle\">{}</text>\n", num(width / 2),
                     xml_escape(title));
    s += fmt::format("<line x1=\"{0}\" y1=\"{1}\" x2=\"{0}\" y2=\"{2}\" stroke=\"black\"/>\n", num(kLeft), num(kTop), num(kTop + kPlotHeight));
    for (auto v = static_cast<long>(lo); v <= static_cast<long>(hi); ++v) {
        const double y = y_of(static_cast<double>(v));
        s += fmt::format("<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"{}\"/>\n", num(kLeft - 4), num(y), num(width - 20), num(y),
                         v == 0 ? "#999999" : "#e0e0e0");
        s += fmt::format("<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{}</text>\n", num(kLeft - 8),
                         num(y + 4), v);
    }
    s += fmt::format("<text x=\"14\" y=\"{0}\" font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 14 {0})\" "
                     "text-anchor=\"middle\">z-score</text>\n",
                     num(kTop + kPlotHeight / 2));
    for (std::size_t i = 0; i < boxes.size(); ++i) {
        const auto& [model, b] = boxes[i];
        const double cx = kLeft + kSlot * (static_cast<double>(i) + 0.5);
        const double x0 = cx - kBoxWidth / 2, x1 = cx + kBoxWidth / 2;
        s += fmt::format("<g class=\"box\" data-model=\"{}\">\n", xml_escape(model));
        s += fmt::format("<line x1=\"{0}\" y1=\"{1}\" x2=\"{0}\" y2=\"{2}\" stroke=\"black\"/>\n", num(cx), num(y_of(b.whisker_high)),
                         num(y_of(b.q3)));
        s += fmt::format("<line x1=\"{0}\" y1=\"{1}\" x2=\"{0}\" y2=\"{2}\" stroke=\"black\"/>\n", num(cx), num(y_of(b.q1)),
                         num(y_of(b.whisker_low)));
        for (double w : {b.whisker_low, b.whisker_high}) {
            s += fmt::format("<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n", num(cx - 10), num(y_of(w)), num(cx + 10),
                             num(y_of(w)));
        }
        s += fmt::format("<rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"#9ecae1\" stroke=\"black\"/>\n", num(x0), num(y_of(b.q3)),
                         num(kBoxWidth), num(y_of(b.q1) - y_of(b.q3)));
        s += fmt::format("<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\" stroke-width=\"2\"/>\n", num(x0), num(y_of(b.median)),
                         num(x1), num(y_of(b.median)));
        for (double o : b.outliers) {
            s += fmt::format("<circle cx=\"{}\" cy=\"{}\" r=\"3\" fill=\"none\" stroke=\"black\"/>\n", num(cx), num(y_of(o)));
        }
        s += fmt::format("<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{}</text>\n", num(cx),
                         num(kTop + kPlotHeight + 18), xml_escape(model));
        s += "</g>\n";
    }
    s += "</svg>\n";
    return s;
}

}  // namespace babyit::report
