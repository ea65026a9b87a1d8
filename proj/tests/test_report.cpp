#include <doctest.h>

#include <sstream>

#include "babyit/report.hpp"
#include "golden.hpp"

using namespace babyit;
using namespace babyit::report;
using eval::Metric;
using eval::TaskResult;

namespace {

TaskResult res(std::string task, std::string model, double v, Metric m = Metric::accuracy) {
    return TaskResult{std::move(task), std::move(model), m, v, 10, 0};
}

std::vector<std::vector<std::string>> rows_of(const std::string& csv) {
    std::vector<std::vector<std::string>> out;
    std::istringstream in(csv);
    std::string line;
    while (std::getline(in, line)) {
        std::vector<std::string> cells;
        std::size_t start = 0;
        for (std::size_t pos; (pos = line.find(',', start)) != std::string::npos; start = pos + 1) {
            cells.push_back(line.substr(start, pos - start));
        }
        cells.push_back(line.substr(start));
        out.push_back(std::move(cells));
    }
    return out;
}

bool numeric(const std::string& s) {
    char* end = nullptr;
    std::strtod(s.c_str(), &end);
    return !s.empty() && end == s.c_str() + s.size();
}

// Same shape, same text cells, numbers within tol. Cells holding ';'-separated
// lists are compared element by element.
void check_csv_close(const std::string& actual, const std::string& expected, double tol) {
    const auto a = rows_of(actual), e = rows_of(expected);
    REQUIRE(a.size() == e.size());
    for (std::size_t r = 0; r < a.size(); ++r) {
        REQUIRE(a[r].size() == e[r].size());
        for (std::size_t c = 0; c < a[r].size(); ++c) {
            CAPTURE(r);
            CAPTURE(c);
            std::vector<std::string> xs, ys;
            for (auto [cell, out] : {std::pair{&a[r][c], &xs}, std::pair{&e[r][c], &ys}}) {
                std::size_t start = 0;
                for (std::size_t pos; (pos = cell->find(';', start)) != std::string::npos; start = pos + 1) {
                    out->push_back(cell->substr(start, pos - start));
                }
                out->push_back(cell->substr(start));
            }
            REQUIRE(xs.size() == ys.size());
            for (std::size_t i = 0; i < xs.size(); ++i) {
                if (numeric(xs[i]) && numeric(ys[i])) {
                    CHECK(std::abs(std::stod(xs[i]) - std::stod(ys[i])) < tol);
                } else {
                    CHECK(xs[i] == ys[i]);
                }
            }
        }
    }
}

ZScoreReport golden_report(ScoreMatrix* matrix_out = nullptr, std::vector<std::string>* warnings = nullptr) {
    const auto results = eval::parse_results_csv(read_file(golden::path("report_results.csv")));
    const auto matrix = ScoreMatrix::from_results(results);
    if (matrix_out) {
        *matrix_out = matrix;
    }
    return zscores(matrix, Standardization::per_task, warnings);
}

}  // namespace

TEST_CASE("two models on one task get z of minus one and one") {
    const auto m = ScoreMatrix::from_results({res("t", "a", 0.5), res("t", "b", 0.7)});
    const auto z = zscores(m);
    REQUIRE(z.tasks.size() == 1);
    CHECK(*z.z[0][0] == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK(*z.z[1][0] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("zero-variance and single-score tasks are dropped with a warning") {
    const auto m = ScoreMatrix::from_results({res("flat", "a", 0.5), res("flat", "b", 0.5), res("lone", "a", 0.9), res("t", "a", 0.1),
                                              res("t", "b", 0.3)});
    std::vector<std::string> warnings;
    const auto z = zscores(m, Standardization::per_task, &warnings);
    CHECK(z.tasks == std::vector<std::string>{"t"});
    CHECK(z.dropped == std::vector<std::string>{"flat", "lone"});
    REQUIRE(warnings.size() == 2);
    CHECK(warnings[0].find("flat") != std::string::npos);
}

TEST_CASE("each retained column has mean zero and unit population std") {
    const auto z = golden_report();
    for (std::size_t t = 0; t < z.tasks.size(); ++t) {
        std::vector<double> col;
        for (const auto& row : z.z) {
            if (row[t]) {
                col.push_back(*row[t]);
            }
        }
        double mean = 0.0, var = 0.0;
        for (double v : col) {
            mean += v;
        }
        mean /= static_cast<double>(col.size());
        for (double v : col) {
            var += (v - mean) * (v - mean);
        }
        var /= static_cast<double>(col.size());
        CHECK(std::abs(mean) < 1e-9);
        CHECK(std::abs(std::sqrt(var) - 1.0) < 1e-9);
    }
}

TEST_CASE("missing cells stay missing and shrink the model's task count") {
    ScoreMatrix m;
    const auto z = golden_report(&m);
    const auto wiki = static_cast<std::size_t>(std::find(z.models.begin(), z.models.end(), "it_wiki_only") - z.models.begin());
    const auto wug = static_cast<std::size_t>(std::find(z.tasks.begin(), z.tasks.end(), "wug") - z.tasks.begin());
    CHECK_FALSE(z.z[wiki][wug]);
    const auto index = aggregate_model_index(z);
    for (const auto& i : index) {
        CHECK(i.n_tasks == (i.model == "it_wiki_only" ? 4u : 5u));
    }
}

TEST_CASE("with no missing cells the model index averages to zero") {
    std::vector<TaskResult> rs;
    Rng rng(3);
    for (const char* t : {"a", "b", "c"}) {
        for (const char* m : {"m1", "m2", "m3", "m4"}) {
            rs.push_back(res(t, m, rng.uniform()));
        }
    }
    const auto index = aggregate_model_index(zscores(ScoreMatrix::from_results(rs)));
    double total = 0.0;
    for (const auto& i : index) {
        total += i.mean_z;
    }
    CHECK(std::abs(total / static_cast<double>(index.size())) < 1e-12);
}

TEST_CASE("pooled standardization shares moments within a metric") {
    const auto m = ScoreMatrix::from_results({res("a", "x", 0.2), res("a", "y", 0.4), res("b", "x", 0.6), res("b", "y", 0.8),
                                              res("r", "x", 0.01, Metric::delta_r2), res("r", "y", 0.03, Metric::delta_r2)});
    const auto z = zscores(m, Standardization::pooled_by_metric);
    // accuracy pool {0.2, 0.4, 0.6, 0.8}: mean 0.5, std sqrt(0.05)
    CHECK(*z.z[0][0] == doctest::Approx(-0.3 / std::sqrt(0.05)).epsilon(1e-12));
    CHECK(*z.z[1][1] == doctest::Approx(0.3 / std::sqrt(0.05)).epsilon(1e-12));
    CHECK(*z.z[1][2] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("matrix construction rejects duplicates and mixed metrics") {
    CHECK_THROWS(ScoreMatrix::from_results({res("t", "a", 0.5), res("t", "a", 0.6)}));
    CHECK_THROWS(ScoreMatrix::from_results({res("t", "a", 0.5), res("t", "b", 0.01, Metric::delta_r2)}));
}

TEST_CASE("box statistics") {
    const auto b = box_stats({5, 3, 1, 4, 2});
    CHECK(b.median == 3.0);
    CHECK(b.q1 == 2.0);
    CHECK(b.q3 == 4.0);
    CHECK(b.iqr == 2.0);
    CHECK(b.lower_fence == -1.0);
    CHECK(b.upper_fence == 7.0);
    CHECK(b.outliers.empty());
    CHECK(b.whisker_low == 1.0);
    CHECK(b.whisker_high == 5.0);

    const auto o = box_stats({1, 1, 1, 100});
    CHECK(o.q1 == 1.0);
    CHECK(o.q3 == doctest::Approx(25.75));
    CHECK(o.outliers == std::vector<double>{100.0});
    CHECK(o.whisker_high == 1.0);

    const auto s = box_stats({0.3});
    CHECK(s.median == 0.3);
    CHECK(s.iqr == 0.0);
    CHECK(s.outliers.empty());
    CHECK_THROWS(box_stats({}));
}

TEST_CASE("report tables match the numpy reference") {
    ScoreMatrix m;
    std::vector<std::string> warnings;
    const auto z = golden_report(&m, &warnings);
    CHECK(z.dropped == std::vector<std::string>{"flat"});
    CHECK(warnings.size() == 1);
    check_csv_close(zscores_csv(m, z), read_file(golden::path("report_zscores.csv")), 1e-9);
    check_csv_close(model_index_csv(aggregate_model_index(z)), read_file(golden::path("report_model_index.csv")), 1e-9);
    check_csv_close(box_stats_csv(z), read_file(golden::path("report_box_stats.csv")), 1e-9);
}

TEST_CASE("box plot is byte-stable") {
    const auto z = golden_report();
    const auto svg = box_plot_svg(z, "Task z-scores per model", "fixture");
    CHECK(svg == box_plot_svg(golden_report(), "Task z-scores per model", "fixture"));
    CHECK(svg == golden::expect("report_box_plot.svg", svg));
    CHECK(svg.find("<!-- fixture -->") != std::string::npos);
    CHECK(svg.find("data-model=\"it_switch_wiki\"") != std::string::npos);
    CHECK(box_plot_svg(z, "t", "a -- b").find("a - - b") != std::string::npos);
}
