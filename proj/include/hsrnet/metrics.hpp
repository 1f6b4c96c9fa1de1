#pragma once

#include <array>
#include <string>
#include <utility>
#include <vector>

#include "hsrnet/density.hpp"

namespace hsrnet {

// (MAE, MSE) over (gt_count, pred_count) pairs. "MSE" is the root of the
// mean squared count error, so it is directly comparable to MAE.
std::pair<double, double> mae_mse(const std::vector<std::pair<double, double>>& pairs);

// Grid Average Mean absolute Error: split both maps into a 2^level × 2^level
// grid (floor-index boundaries) and sum |regional count difference|.
// level 0 reduces to the absolute total-count error.
double game(const DensityMap& pred, const DensityMap& gt, int level);

struct EvalRow {
    std::string id;
    double gt_count = 0.0;
    double pred_count = 0.0;
    std::array<double, 4> game{};  // levels 0..3
};

// One quantile group of images by ground-truth count.
struct EvalBin {
    double lo = 0.0;
    double hi = 0.0;
    int64_t images = 0;
    double mae = 0.0;
};

struct EvalReport {
    double mae = 0.0;
    double mse = 0.0;
    std::array<double, 4> game{};  // mean over images per level
    std::vector<EvalRow> rows;
    std::vector<EvalBin> bins;

    std::string to_json() const;
    std::string to_csv() const;  // per-image rows
};

// Aggregates rows into a report; bins > 0 adds that many quantile groups
// (images sorted by gt count, floor-index group boundaries).
EvalReport make_report(std::vector<EvalRow> rows, int bins);

}  // namespace hsrnet
