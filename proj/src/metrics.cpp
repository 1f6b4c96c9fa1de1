#include "hsrnet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <stdexcept>

#include "json.hpp"

namespace hsrnet {

std::pair<double, double> mae_mse(const std::vector<std::pair<double, double>>& pairs) {
    if (pairs.empty()) throw std::invalid_argument("mae_mse: empty list");
    double abs_acc = 0.0, sq_acc = 0.0;
    for (const auto& [gt, pred] : pairs) {
        const double d = gt - pred;
        abs_acc += std::abs(d);
        sq_acc += d * d;
    }
    const double n = static_cast<double>(pairs.size());
    return {abs_acc / n, std::sqrt(sq_acc / n)};
}

double game(const DensityMap& pred, const DensityMap& gt, int level) {
    if (level < 0 || level > 3) {
        throw std::invalid_argument("game: level must be in [0,3], got " + std::to_string(level));
    }
    if (pred.h != gt.h || pred.w != gt.w) {
        throw std::invalid_argument("game: map dims differ");
    }
    const int64_t cells = int64_t{1} << level;
    auto bound = [cells](int64_t dim, int64_t j) { return dim * j / cells; };
    double total = 0.0;
    for (int64_t by = 0; by < cells; ++by) {
        const int64_t y0 = bound(pred.h, by), y1 = bound(pred.h, by + 1);
        for (int64_t bx = 0; bx < cells; ++bx) {
            const int64_t x0 = bound(pred.w, bx), x1 = bound(pred.w, bx + 1);
            double dp = 0.0, dg = 0.0;
            for (int64_t y = y0; y < y1; ++y) {
                for (int64_t x = x0; x < x1; ++x) {
                    dp += pred.at(y, x);
                    dg += gt.at(y, x);
                }
            }
            total += std::abs(dp - dg);
        }
    }
    return total;
}

EvalReport make_report(std::vector<EvalRow> rows, int bins) {
    if (rows.empty()) throw std::invalid_argument("make_report: empty dataset");
    EvalReport rep;
    rep.rows = std::move(rows);

    std::vector<std::pair<double, double>> pairs;
    pairs.reserve(rep.rows.size());
    for (const EvalRow& r : rep.rows) pairs.emplace_back(r.gt_count, r.pred_count);
    std::tie(rep.mae, rep.mse) = mae_mse(pairs);

    const double n = static_cast<double>(rep.rows.size());
    for (size_t level = 0; level < rep.game.size(); ++level) {
        double acc = 0.0;
        for (const EvalRow& r : rep.rows) acc += r.game[level];
        rep.game[level] = acc / n;
    }

    if (bins > 0) {
        std::vector<size_t> order(rep.rows.size());
        for (size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::sort(order.begin(), order.end(), [&](size_t a, size_t b) {
            const EvalRow& ra = rep.rows[a];
            const EvalRow& rb = rep.rows[b];
            if (ra.gt_count != rb.gt_count) return ra.gt_count < rb.gt_count;
            return ra.id < rb.id;
        });
        const size_t total = order.size();
        const size_t k = static_cast<size_t>(bins);
        for (size_t b = 0; b < k; ++b) {
            const size_t lo = total * b / k;
            const size_t hi = total * (b + 1) / k;
            if (lo == hi) continue;  // fewer images than bins
            EvalBin bin;
            bin.images = static_cast<int64_t>(hi - lo);
            bin.lo = rep.rows[order[lo]].gt_count;
            bin.hi = rep.rows[order[hi - 1]].gt_count;
            double acc = 0.0;
            for (size_t i = lo; i < hi; ++i) {
                const EvalRow& r = rep.rows[order[i]];
                acc += std::abs(r.gt_count - r.pred_count);
            }
            bin.mae = acc / static_cast<double>(bin.images);
            rep.bins.push_back(bin);
        }
    }
    return rep;
}

std::string EvalReport::to_json() const {
    nlohmann::ordered_json j;
    j["images"] = rows.size();
    j["mae"] = mae;
    j["mse"] = mse;
    for (size_t level = 0; level < game.size(); ++level) {
        j["game" + std::to_string(level)] = game[level];
    }
    j["bins"] = nlohmann::ordered_json::array();
    for (const EvalBin& b : bins) {
        j["bins"].push_back(nlohmann::ordered_json{
            {"lo", b.lo}, {"hi", b.hi}, {"images", b.images}, {"mae", b.mae}});
    }
    return j.dump(2) + "\n";
}

std::string EvalReport::to_csv() const {
    std::string out = "image,gt,pred,game0,game1,game2,game3\n";
    char buf[256];
    for (const EvalRow& r : rows) {
        std::snprintf(buf, sizeof buf, "%s,%.10g,%.10g,%.10g,%.10g,%.10g,%.10g\n", r.id.c_str(),
                      r.gt_count, r.pred_count, r.game[0], r.game[1], r.game[2], r.game[3]);
        out += buf;
    }
    return out;
}

}  // namespace hsrnet
