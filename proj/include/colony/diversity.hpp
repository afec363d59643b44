#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "colony/error.hpp"

namespace colony {

// p models x k labels of F1 scores; the input of the diversity-quality
// estimator.
class accuracy_grid {
public:
    accuracy_grid(int models, int labels, std::vector<double> values,
                  std::vector<std::string> row_labels = {}, std::vector<std::string> col_labels = {})
        : p_(models), k_(labels), v_(std::move(values)), rows_(std::move(row_labels)),
          cols_(std::move(col_labels)) {
        if (p_ < 2 || k_ < 2) throw input_error("accuracy grid needs p >= 2 models and k >= 2 labels");
        if (v_.size() != std::size_t(p_) * std::size_t(k_))
            throw input_error("accuracy grid value count does not match p*k");
        for (double x : v_)
            if (!(x >= 0.0 && x <= 1.0)) throw input_error("accuracy grid entries must be in [0,1]");
        if (rows_.empty()) rows_.resize(std::size_t(p_));
        if (cols_.empty()) cols_.resize(std::size_t(k_));
    }

    int models() const { return p_; }
    int labels() const { return k_; }
    double at(int i, int j) const { return v_[std::size_t(i) * k_ + j]; }
    const std::vector<double>& values() const { return v_; }
    const std::vector<std::string>& row_labels() const { return rows_; }
    const std::vector<std::string>& col_labels() const { return cols_; }

    std::vector<double> row(int i) const {
        return {v_.begin() + std::size_t(i) * k_, v_.begin() + std::size_t(i + 1) * k_};
    }

    // header of class labels, then one row per family tuple
    static accuracy_grid from_csv(std::istream& in) {
        std::vector<std::string> cols;
        std::vector<std::string> rows;
        std::vector<double> vals;
        std::string line;
        int k = -1;
        int line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            if (line.empty()) continue;
            std::vector<std::string> fields;
            std::stringstream ss(line);
            std::string f;
            while (std::getline(ss, f, ',')) fields.push_back(f);
            if (line_no == 1) {
                cols.assign(fields.begin() + 1, fields.end());
                k = int(cols.size());
                continue;
            }
            if (int(fields.size()) != k + 1)
                throw input_error("grid csv line " + std::to_string(line_no) + ": expected " +
                                  std::to_string(k + 1) + " fields, got " +
                                  std::to_string(fields.size()));
            rows.push_back(fields[0]);
            for (int j = 1; j <= k; ++j) {
                try {
                    vals.push_back(std::stod(fields[std::size_t(j)]));
                } catch (const std::exception&) {
                    throw input_error("grid csv line " + std::to_string(line_no) +
                                      ": bad number '" + fields[std::size_t(j)] + "'");
                }
            }
        }
        if (k < 0 || rows.empty()) throw input_error("grid csv has no data rows");
        return accuracy_grid(int(rows.size()), k, std::move(vals), std::move(rows),
                             std::move(cols));
    }

    static accuracy_grid from_csv_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw io_error("cannot open grid csv " + path);
        return from_csv(in);
    }

private:
    int p_, k_;
    std::vector<double> v_;
    std::vector<std::string> rows_, cols_;
};

// mean over model pairs and labels of |F1_i(d) - F1_j(d)|
inline double pairwise_disagreement(const accuracy_grid& g) {
    const int p = g.models(), k = g.labels();
    double sum = 0.0;
    std::int64_t terms = 0;
    for (int i = 0; i < p; ++i)
        for (int j = i + 1; j < p; ++j)
            for (int d = 0; d < k; ++d) {
                sum += std::abs(g.at(i, d) - g.at(j, d));
                ++terms;
            }
    return sum / double(terms);
}

// mean over rows of the Shannon entropy (nats) of the normalized row
inline double system_entropy(const accuracy_grid& g) {
    const int p = g.models(), k = g.labels();
    double total = 0.0;
    for (int i = 0; i < p; ++i) {
        double s = 0.0;
        for (int d = 0; d < k; ++d) s += g.at(i, d);
        if (s <= 0.0) throw input_error("system entropy: row " + std::to_string(i) + " sums to zero");
        double h = 0.0;
        for (int d = 0; d < k; ++d) {
            const double q = g.at(i, d) / s;
            if (q > 0.0) h -= q * std::log(q);
        }
        total += h;
    }
    return total / double(p);
}

// mean over labels of the population variance of that label's F1 across
// models (calibrated against the published scores; see tests)
inline double accuracy_variance(const accuracy_grid& g) {
    const int p = g.models(), k = g.labels();
    double total = 0.0;
    for (int d = 0; d < k; ++d) {
        double m = 0.0;
        for (int i = 0; i < p; ++i) m += g.at(i, d);
        m /= double(p);
        double v = 0.0;
        for (int i = 0; i < p; ++i) {
            const double diff = g.at(i, d) - m;
            v += diff * diff;
        }
        total += v / double(p);
    }
    return total / double(k);
}

namespace detail {

// inversion counter for Knight's tau algorithm
inline std::int64_t merge_count(std::vector<double>& a, std::vector<double>& buf, std::size_t lo,
                                std::size_t hi) {
    if (hi - lo < 2) return 0;
    const std::size_t mid = (lo + hi) / 2;
    std::int64_t inv = merge_count(a, buf, lo, mid) + merge_count(a, buf, mid, hi);
    std::size_t i = lo, j = mid, out = lo;
    while (i < mid && j < hi) {
        if (a[j] < a[i]) { // strict: ties are not inversions
            inv += std::int64_t(mid - i);
            buf[out++] = a[j++];
        } else {
            buf[out++] = a[i++];
        }
    }
    while (i < mid) buf[out++] = a[i++];
    while (j < hi) buf[out++] = a[j++];
    std::copy(buf.begin() + std::ptrdiff_t(lo), buf.begin() + std::ptrdiff_t(hi),
              a.begin() + std::ptrdiff_t(lo));
    return inv;
}

} // namespace detail

// Tie-corrected Kendall tau-b via sort + inversion counting; nullopt when a
// side is fully tied (tau undefined).
inline std::optional<double> kendall_tau_b(const std::vector<double>& x,
                                           const std::vector<double>& y) {
    const std::size_t n = x.size();
    if (y.size() != n) throw input_error("kendall tau: length mismatch");
    if (n < 2) throw input_error("kendall tau needs at least two items");

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (x[a] != x[b]) return x[a] < x[b];
        return y[a] < y[b];
    });

    const std::int64_t n0 = std::int64_t(n) * std::int64_t(n - 1) / 2;
    std::int64_t n1 = 0, n3 = 0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j < n && x[order[j]] == x[order[i]]) ++j;
        const std::int64_t t = std::int64_t(j - i);
        n1 += t * (t - 1) / 2;
        for (std::size_t a = i; a < j;) {
            std::size_t b = a;
            while (b < j && y[order[b]] == y[order[a]]) ++b;
            const std::int64_t u = std::int64_t(b - a);
            n3 += u * (u - 1) / 2;
            a = b;
        }
        i = j;
    }
    std::int64_t n2 = 0;
    {
        std::vector<double> ys = y;
        std::sort(ys.begin(), ys.end());
        for (std::size_t i = 0; i < n;) {
            std::size_t j = i;
            while (j < n && ys[j] == ys[i]) ++j;
            const std::int64_t t = std::int64_t(j - i);
            n2 += t * (t - 1) / 2;
            i = j;
        }
    }
    if (n0 == n1 || n0 == n2) return std::nullopt;

    std::vector<double> yseq(n), buf(n);
    for (std::size_t i = 0; i < n; ++i) yseq[i] = y[order[i]];
    const std::int64_t discordant = detail::merge_count(yseq, buf, 0, n);
    const std::int64_t concordant = n0 - n1 - n2 + n3 - discordant;
    return double(concordant - discordant) /
           std::sqrt(double(n0 - n1) * double(n0 - n2));
}

struct tau_stats {
    double mean = std::numeric_limits<double>::quiet_NaN();
    double stddev = std::numeric_limits<double>::quiet_NaN();
    int excluded_pairs = 0; // pairs with undefined tau
};

// mean and population std of tau-b over all model pairs
inline tau_stats kendall_tau_stats(const accuracy_grid& g) {
    const int p = g.models();
    std::vector<double> taus;
    tau_stats out;
    for (int i = 0; i < p; ++i)
        for (int j = i + 1; j < p; ++j) {
            const auto t = kendall_tau_b(g.row(i), g.row(j));
            if (t)
                taus.push_back(*t);
            else
                ++out.excluded_pairs;
        }
    if (taus.empty()) return out;
    double m = 0.0;
    for (double t : taus) m += t;
    m /= double(taus.size());
    double v = 0.0;
    for (double t : taus) v += (t - m) * (t - m);
    out.mean = m;
    out.stddev = std::sqrt(v / double(taus.size()));
    return out;
}

struct kde_config {
    double bandwidth = 0.0;       // <= 0: Silverman's rule per row
    double bandwidth_floor = 0.01;
    int grid_points = 512;
    double extent = 3.0;          // grid spans [0,1] extended by extent*h
};

// Kernel density estimator with the exponential kernel K(u) = 0.5*exp(-|u|).
// Mass and first-moment integrals are closed-form; the density exported on the
// evaluation grid is renormalized over the grid range so it integrates to one
// there.
class exponential_kde {
public:
    exponential_kde(std::vector<double> samples, const kde_config& cfg) : x_(std::move(samples)) {
        if (x_.empty()) throw input_error("kde needs at least one sample");
        h_ = cfg.bandwidth > 0.0 ? cfg.bandwidth : silverman(x_);
        h_ = std::max(h_, cfg.bandwidth_floor);
        lo_ = 0.0 - cfg.extent * h_;
        hi_ = 1.0 + cfg.extent * h_;
        points_ = cfg.grid_points;
        norm_ = raw_mass(lo_, hi_);
    }

    double bandwidth() const { return h_; }
    double grid_lo() const { return lo_; }
    double grid_hi() const { return hi_; }

    // normalized density over the evaluation window
    double density(double u) const {
        double s = 0.0;
        for (double xi : x_) s += std::exp(-std::abs(u - xi) / h_);
        return s / (2.0 * h_ * double(x_.size())) / norm_;
    }

    std::vector<double> density_grid() const {
        std::vector<double> g(std::size_t(points_));
        for (int i = 0; i < points_; ++i)
            g[std::size_t(i)] = density(lo_ + (hi_ - lo_) * double(i) / double(points_ - 1));
        return g;
    }

    // exact integral of the normalized density over the evaluation window
    double integral_over_grid() const { return raw_mass(lo_, hi_) / norm_; }

    // expectation of the density restricted to [a,b] (renormalization cancels)
    double window_mean(double a, double b) const {
        const double mass = raw_mass(a, b);
        if (mass <= 0.0) return (a + b) * 0.5;
        return raw_moment(a, b) / mass;
    }

    static double silverman(const std::vector<double>& v) {
        const std::size_t n = v.size();
        if (n < 2) return 0.0;
        double m = 0.0;
        for (double x : v) m += x;
        m /= double(n);
        double var = 0.0;
        for (double x : v) var += (x - m) * (x - m);
        var /= double(n - 1);
        const double sd = std::sqrt(var);
        std::vector<double> s = v;
        std::sort(s.begin(), s.end());
        auto quantile = [&](double q) {
            const double pos = q * double(n - 1);
            const std::size_t i = std::size_t(pos);
            const double fr = pos - double(i);
            return i + 1 < n ? s[i] * (1.0 - fr) + s[i + 1] * fr : s[i];
        };
        const double iqr = quantile(0.75) - quantile(0.25);
        const double spread = iqr > 0.0 ? std::min(sd, iqr / 1.34) : sd;
        return 0.9 * spread * std::pow(double(n), -0.2);
    }

private:
    // per-sample CDF and first-moment antiderivative of the exponential kernel
    double cdf1(double u, double xi) const {
        const double z = (u - xi) / h_;
        return z < 0.0 ? 0.5 * std::exp(z) : 1.0 - 0.5 * std::exp(-z);
    }
    double mom1(double u, double xi) const {
        const double z = (u - xi) / h_;
        if (z <= 0.0) return 0.5 * std::exp(z) * (u - h_);
        return xi - 0.5 * std::exp(-z) * (u + h_);
    }

    double raw_mass(double a, double b) const {
        double s = 0.0;
        for (double xi : x_) s += cdf1(b, xi) - cdf1(a, xi);
        return s / double(x_.size());
    }
    double raw_moment(double a, double b) const {
        double s = 0.0;
        for (double xi : x_) s += mom1(b, xi) - mom1(a, xi);
        return s / double(x_.size());
    }

    std::vector<double> x_;
    double h_ = 0.0, lo_ = 0.0, hi_ = 0.0, norm_ = 1.0;
    int points_ = 512;
};

// Each entry replaced by the KDE expectation within one bandwidth around it.
inline std::vector<double> kde_smooth_row(const std::vector<double>& row, const kde_config& cfg,
                                          double* bandwidth_used = nullptr) {
    exponential_kde kde(row, cfg);
    if (bandwidth_used) *bandwidth_used = kde.bandwidth();
    std::vector<double> out(row.size());
    for (std::size_t i = 0; i < row.size(); ++i)
        out[i] = kde.window_mean(row[i] - kde.bandwidth(), row[i] + kde.bandwidth());
    return out;
}

enum class dq_mode { plain, kde };

struct dq_report {
    double disagreement = 0.0;
    double entropy = 0.0;
    double variance = 0.0;
    double tau_mean = std::numeric_limits<double>::quiet_NaN();
    double tau_std = std::numeric_limits<double>::quiet_NaN();
    int tau_excluded = 0;
    dq_mode mode = dq_mode::plain;
    std::vector<double> bandwidths; // per row, kde mode only
};

inline dq_report compute_dq(const accuracy_grid& g, dq_mode mode, const kde_config& cfg = {}) {
    dq_report rep;
    rep.mode = mode;
    const accuracy_grid* use = &g;
    std::optional<accuracy_grid> smoothed;
    if (mode == dq_mode::kde) {
        std::vector<double> vals;
        vals.reserve(std::size_t(g.models()) * std::size_t(g.labels()));
        rep.bandwidths.resize(std::size_t(g.models()));
        for (int i = 0; i < g.models(); ++i) {
            const auto row = kde_smooth_row(g.row(i), cfg, &rep.bandwidths[std::size_t(i)]);
            for (double v : row) vals.push_back(std::clamp(v, 0.0, 1.0));
        }
        smoothed.emplace(g.models(), g.labels(), std::move(vals), g.row_labels(), g.col_labels());
        use = &*smoothed;
    }
    rep.disagreement = pairwise_disagreement(*use);
    rep.entropy = system_entropy(*use);
    rep.variance = accuracy_variance(*use);
    const tau_stats ts = kendall_tau_stats(*use);
    rep.tau_mean = ts.mean;
    rep.tau_std = ts.stddev;
    rep.tau_excluded = ts.excluded_pairs;
    return rep;
}

inline nlohmann::json dq_to_json(const dq_report& r) {
    nlohmann::json j{
        {"mode", r.mode == dq_mode::plain ? "plain" : "kde"},
        {"pairwise_disagreement", r.disagreement},
        {"system_entropy", r.entropy},
        {"accuracy_variance", r.variance},
        {"tau_pairs_excluded", r.tau_excluded},
    };
    j["mean_kendall_tau"] = std::isnan(r.tau_mean) ? nlohmann::json(nullptr) : nlohmann::json(r.tau_mean);
    j["std_kendall_tau"] = std::isnan(r.tau_std) ? nlohmann::json(nullptr) : nlohmann::json(r.tau_std);
    if (r.mode == dq_mode::kde) j["bandwidths"] = r.bandwidths;
    return j;
}

} // namespace colony
