#pragma once

// Cross-task aggregation: per-task z-scores, a per-model mean index, box
// statistics and an SVG box plot.

#include <optional>
#include <string>
#include <vector>

#include "babyit/eval.hpp"

namespace babyit::report {

struct ScoreMatrix {
    std::vector<std::string> models;  // sorted
    std::vector<std::string> tasks;   // sorted
    std::vector<eval::Metric> metrics;  // one per task
    std::vector<std::vector<std::optional<double>>> cells;  // [model][task]

    // Throws on duplicate (task, model) pairs or a task with mixed metrics.
    static ScoreMatrix from_results(const std::vector<eval::TaskResult>& results);
};

enum class Standardization {
    per_task,          // one population per task column
    pooled_by_metric,  // all cells sharing a metric form one population
};

struct ZScoreReport {
    std::vector<std::string> models;
    std::vector<std::string> tasks;  // retained columns only
    std::vector<std::vector<std::optional<double>>> z;  // [model][task]
    std::vector<std::string> dropped;
};

// z = (x - mean) / population std over the non-missing cells of each column.
// Columns with fewer than two cells or zero variance are dropped and named in
// warnings.
ZScoreReport zscores(const ScoreMatrix& matrix, Standardization mode = Standardization::per_task,
                     std::vector<std::string>* warnings = nullptr);

struct ModelIndex {
    std::string model;
    double mean_z = 0.0;
    std::size_t n_tasks = 0;
};

// Mean z per model over its available tasks. Models without any z are left out.
std::vector<ModelIndex> aggregate_model_index(const ZScoreReport& report);

struct BoxStats {
    double median = 0.0;
    double q1 = 0.0;
    double q3 = 0.0;
    double iqr = 0.0;
    double lower_fence = 0.0;
    double upper_fence = 0.0;
    double whisker_low = 0.0;   // smallest value inside the fences
    double whisker_high = 0.0;  // largest value inside the fences
    std::vector<double> outliers;  // ascending
};

// Quantile of sorted data by linear interpolation between order statistics:
// position (n - 1) * p, counted from 0.
double quantile(const std::vector<double>& sorted, double p);

// Quartiles as above; outliers lie strictly outside [q1 - 1.5 iqr, q3 + 1.5 iqr].
BoxStats box_stats(std::vector<double> values);

// model_id,task,value,z
std::string zscores_csv(const ScoreMatrix& matrix, const ZScoreReport& report);

// model_id,mean_z,n_tasks
std::string model_index_csv(const std::vector<ModelIndex>& index);

// model_id,median,q1,q3,iqr,lower_fence,upper_fence,outliers
std::string box_stats_csv(const ZScoreReport& report);

// One box per model over its task z-scores. Byte-identical for identical
// input. comment, if nonempty, is embedded as an XML comment.
std::string box_plot_svg(const ZScoreReport& report, const std::string& title, const std::string& comment = "");

}  // namespace babyit::report
