#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

#include "colony/agent.hpp"
#include "colony/error.hpp"
#include "colony/mnist.hpp"
#include "colony/nn.hpp"

namespace colony {

// rows = true label, columns = predicted label
struct confusion_matrix {
    int k = 10;
    std::vector<std::int64_t> counts;

    explicit confusion_matrix(int classes = 10) : k(classes), counts(std::size_t(classes) * classes, 0) {}

    std::int64_t& at(int truth, int pred) { return counts[std::size_t(truth) * k + pred]; }
    std::int64_t at(int truth, int pred) const { return counts[std::size_t(truth) * k + pred]; }

    std::int64_t total() const { return std::accumulate(counts.begin(), counts.end(), std::int64_t(0)); }
};

struct score_matrix {
    int n = 0, k = 10;
    std::vector<float> scores; // n x k softmax rows
    std::vector<int> labels;

    float at(int i, int c) const { return scores[std::size_t(i) * k + c]; }
};

// Ten per-class F1 values plus their macro average; `degenerate` flags the
// zero-denominator convention (F1 := 0).
struct f1_row {
    std::vector<double> f1;
    double macro = 0.0;
    std::vector<std::uint8_t> degenerate;
};

inline f1_row per_class_f1(const confusion_matrix& cm) {
    if (cm.total() <= 0) throw input_error("confusion matrix is empty");
    f1_row out;
    out.f1.resize(std::size_t(cm.k), 0.0);
    out.degenerate.assign(std::size_t(cm.k), 0);
    for (int c = 0; c < cm.k; ++c) {
        std::int64_t tp = cm.at(c, c), row = 0, col = 0;
        for (int j = 0; j < cm.k; ++j) {
            row += cm.at(c, j);
            col += cm.at(j, c);
        }
        const std::int64_t denom = row + col; // 2TP + FP + FN
        if (denom == 0) {
            out.degenerate[std::size_t(c)] = 1;
            out.f1[std::size_t(c)] = 0.0;
        } else {
            out.f1[std::size_t(c)] = 2.0 * double(tp) / double(denom);
        }
    }
    out.macro = std::accumulate(out.f1.begin(), out.f1.end(), 0.0) / double(cm.k);
    return out;
}

struct roc_point {
    double fpr = 0.0, tpr = 0.0;
};

struct roc_curve {
    std::vector<roc_point> points;
    double auc = 0.0;
};

// One-vs-rest threshold sweep; equal scores collapse into a single sweep step,
// so the trapezoid AUC equals the tie-corrected Mann-Whitney statistic.
inline roc_curve roc_one_vs_rest(const score_matrix& sm, int cls) {
    if (cls < 0 || cls >= sm.k) throw input_error("roc class out of range");
    std::int64_t pos = 0, neg = 0;
    for (int i = 0; i < sm.n; ++i) (sm.labels[std::size_t(i)] == cls ? pos : neg)++;
    if (pos == 0 || neg == 0)
        throw eval_error("roc for class " + std::to_string(cls) +
                         " needs both positives and negatives");

    std::vector<std::pair<double, int>> items(std::size_t(sm.n)); // (score, is_pos)
    for (int i = 0; i < sm.n; ++i)
        items[std::size_t(i)] = {double(sm.at(i, cls)), sm.labels[std::size_t(i)] == cls ? 1 : 0};
    std::sort(items.begin(), items.end(),
              [](const auto& a, const auto& b) { return a.first > b.first; });

    roc_curve out;
    out.points.push_back({0.0, 0.0});
    double auc = 0.0;
    std::int64_t tp = 0, fp = 0;
    std::size_t i = 0;
    while (i < items.size()) {
        std::size_t j = i;
        std::int64_t dtp = 0, dfp = 0;
        while (j < items.size() && items[j].first == items[i].first) {
            (items[j].second ? dtp : dfp)++;
            ++j;
        }
        const double fpr0 = double(fp) / double(neg), tpr0 = double(tp) / double(pos);
        tp += dtp;
        fp += dfp;
        const double fpr1 = double(fp) / double(neg), tpr1 = double(tp) / double(pos);
        auc += (fpr1 - fpr0) * (tpr0 + tpr1) * 0.5;
        out.points.push_back({fpr1, tpr1});
        i = j;
    }
    out.auc = auc;
    return out;
}

enum class vote_mode { majority, f1_weighted_soft };

// Aggregate one image's member scores into a single colony label.
// majority: plurality of member argmaxes, softmax-sum then lowest label on ties.
// f1_weighted_soft: argmax_c sum_m F1_m(c) * score_m(c), lowest label on ties.
inline int collective_decide(const std::vector<std::vector<double>>& member_scores,
                             const std::vector<f1_row>& member_weights, vote_mode mode) {
    if (member_scores.empty()) throw input_error("collective decision needs at least one member");
    const std::size_t k = member_scores.front().size();
    for (const auto& s : member_scores)
        if (s.size() != k) throw input_error("member score lengths disagree");

    if (mode == vote_mode::majority) {
        std::vector<int> votes(k, 0);
        std::vector<double> mass(k, 0.0);
        for (const auto& s : member_scores) {
            int arg = 0;
            for (std::size_t c = 1; c < k; ++c)
                if (s[c] > s[arg]) arg = int(c);
            ++votes[std::size_t(arg)];
            for (std::size_t c = 0; c < k; ++c) mass[c] += s[c];
        }
        int best = 0;
        for (std::size_t c = 1; c < k; ++c) {
            if (votes[c] > votes[std::size_t(best)] ||
                (votes[c] == votes[std::size_t(best)] && mass[c] > mass[std::size_t(best)]))
                best = int(c);
        }
        return best;
    }

    if (member_weights.size() != member_scores.size())
        throw input_error("f1-weighted vote needs one weight row per member");
    std::vector<double> agg(k, 0.0);
    for (std::size_t m = 0; m < member_scores.size(); ++m) {
        if (member_weights[m].f1.size() != k)
            throw input_error("weight row length does not match score length");
        for (std::size_t c = 0; c < k; ++c)
            agg[c] += member_weights[m].f1[c] * member_scores[m][c];
    }
    int best = 0;
    for (std::size_t c = 1; c < k; ++c)
        if (agg[c] > agg[std::size_t(best)]) best = int(c);
    return best;
}

// Batched eval-mode scoring of a dataset subset.
inline score_matrix evaluate_scores(const network<float>& net,
                                    const std::vector<labeled_image>& items,
                                    const std::vector<int>& idx, int batch_size = 256) {
    score_matrix sm;
    sm.n = int(idx.size());
    sm.k = net.classes;
    sm.scores.resize(std::size_t(sm.n) * sm.k);
    sm.labels = labels_of(items, idx);
    for (int at = 0; at < sm.n; at += batch_size) {
        const int take = std::min(batch_size, sm.n - at);
        std::vector<int> chunk(idx.begin() + at, idx.begin() + at + take);
        const tensor<float> batch = to_batch(items, chunk);
        const tensor<float> probs = net.forward_eval(batch);
        std::copy(probs.data(), probs.data() + std::size_t(take) * sm.k,
                  sm.scores.begin() + std::size_t(at) * sm.k);
    }
    return sm;
}

inline confusion_matrix confusion_from(const score_matrix& sm) {
    confusion_matrix cm(sm.k);
    for (int i = 0; i < sm.n; ++i) {
        int arg = 0;
        for (int c = 1; c < sm.k; ++c)
            if (sm.at(i, c) > sm.at(i, arg)) arg = c;
        ++cm.at(sm.labels[std::size_t(i)], arg);
    }
    return cm;
}

struct agent_evaluation {
    confusion_matrix cm;
    score_matrix scores;
    f1_row f1;
};

inline agent_evaluation evaluate_agent(const agent& a, const std::vector<labeled_image>& items,
                                       const std::vector<int>& idx, int batch_size = 256) {
    if (idx.empty()) throw input_error("evaluation needs a nonempty split");
    agent_evaluation ev{confusion_matrix(a.net.classes), evaluate_scores(a.net, items, idx, batch_size), {}};
    ev.cm = confusion_from(ev.scores);
    ev.f1 = per_class_f1(ev.cm);
    return ev;
}

// Convenience wrapper: run each member on one image and aggregate.
inline int collective_predict(const std::vector<std::pair<const agent*, f1_row>>& members,
                              const tensor<float>& image, vote_mode mode = vote_mode::f1_weighted_soft) {
    if (members.empty()) throw input_error("collective decision needs at least one member");
    std::vector<std::vector<double>> scores;
    std::vector<f1_row> weights;
    for (const auto& [a, w] : members) {
        const tensor<float> p = a->net.forward_eval(image);
        std::vector<double> row(std::size_t(p.dim(1)));
        for (int c = 0; c < p.dim(1); ++c) row[std::size_t(c)] = double(p.at2(0, c));
        scores.push_back(std::move(row));
        weights.push_back(w);
    }
    return collective_decide(scores, weights, mode);
}

} // namespace colony
