// forest.hpp
//
// Random forests grown from scratch: bootstrap resampling, Gini splits over
// sqrt(n_features) random candidate features, unlimited depth. On top sit
// SMOTE oversampling and a stacked model (high-precision forest on the
// imbalanced data, high-recall forest on SMOTE-balanced data, and a meta
// forest over their two probabilities), plus a checksummed text format.

#ifndef KEYHUNT_FOREST_HPP
#define KEYHUNT_FOREST_HPP

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "core.hpp"

namespace keyhunt {

// ---------------------------------------------------------------------------
// samples

/// row-major feature matrix with binary labels
template <typename T>
struct basic_sample_set {
    std::size_t n_features = 0;
    std::vector<T> x;
    std::vector<std::uint8_t> y;

    basic_sample_set() = default;
    explicit basic_sample_set(std::size_t features) : n_features{features} {}

    std::size_t size() const noexcept { return y.size(); }
    std::span<const T> row(std::size_t i) const { return {x.data() + i * n_features, n_features}; }

    void add(std::span<const T> features, int label) {
        if (features.size() != n_features) {
            throw error{errc::invalid_argument, "feature vector has " + std::to_string(features.size()) +
                                                    " entries, expected " + std::to_string(n_features)};
        }
        x.insert(x.end(), features.begin(), features.end());
        y.push_back(static_cast<std::uint8_t>(label != 0));
    }

    std::size_t positives() const {
        return static_cast<std::size_t>(std::count(y.begin(), y.end(), std::uint8_t{1}));
    }

    basic_sample_set subset(const std::vector<std::size_t> &rows) const {
        basic_sample_set out{n_features};
        out.x.reserve(rows.size() * n_features);
        out.y.reserve(rows.size());
        for (std::size_t r : rows) { out.add(row(r), y[r]); }
        return out;
    }
};

using sample_set = basic_sample_set<std::uint8_t>;
using real_sample_set = basic_sample_set<double>;

inline sample_set to_sample_set(const std::vector<slice_sample> &slices) {
    sample_set s{slices.empty() ? slice_window : slices.front().data.size()};
    s.x.reserve(slices.size() * s.n_features);
    s.y.reserve(slices.size());
    for (const auto &sl : slices) { s.add(sl.data, sl.label > 0 ? 1 : 0); }
    return s;
}

// ---------------------------------------------------------------------------
// trees

struct tree_node {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    int left = -1;
    int right = -1;
    double leaf_probability = 0.0;

    bool is_leaf() const noexcept { return feature < 0; }
    bool operator==(const tree_node &) const = default;
};

struct decision_tree {
    std::vector<tree_node> nodes;

    /// rows with x[feature] <= threshold go left
    template <typename T>
    double predict(std::span<const T> x) const {
        std::size_t n = 0;
        while (!nodes[n].is_leaf()) {
            const auto &node = nodes[n];
            n = static_cast<std::size_t>(static_cast<double>(x[static_cast<std::size_t>(node.feature)]) <= node.threshold
                                             ? node.left
                                             : node.right);
        }
        return nodes[n].leaf_probability;
    }

    bool operator==(const decision_tree &) const = default;
};

/// a candidate split and its exact Gini score components
struct split_choice {
    int feature = -1;
    double threshold = 0.0;
    // score = (pl^2 + ql^2) / nl + (pr^2 + qr^2) / nr, larger is purer
    __int128 num = 0;
    __int128 den = 1;

    bool valid() const noexcept { return feature >= 0; }
};

namespace detail {

/// true iff candidate a beats b: higher score, then lower feature, then lower threshold
inline bool better_split(const split_choice &a, const split_choice &b) {
    if (!b.valid()) { return a.valid(); }
    const __int128 lhs = a.num * b.den;
    const __int128 rhs = b.num * a.den;
    if (lhs != rhs) { return lhs > rhs; }
    if (a.feature != b.feature) { return a.feature < b.feature; }
    return a.threshold < b.threshold;
}

inline split_choice score_split(int feature, double threshold, std::int64_t pl, std::int64_t ql, std::int64_t pr,
                                std::int64_t qr) {
    split_choice s;
    s.feature = feature;
    s.threshold = threshold;
    const __int128 nl = pl + ql;
    const __int128 nr = pr + qr;
    const __int128 a = static_cast<__int128>(pl) * pl + static_cast<__int128>(ql) * ql;
    const __int128 b = static_cast<__int128>(pr) * pr + static_cast<__int128>(qr) * qr;
    s.num = a * nr + b * nl;
    s.den = nl * nr;
    return s;
}

}  // namespace detail

/// best threshold for one feature over the weighted node rows, or an
/// invalid choice when the feature is constant there
template <typename T>
split_choice best_split_on_feature(const basic_sample_set<T> &data, std::span<const std::uint32_t> weights,
                                   std::span<const std::size_t> rows, int feature) {
    const std::size_t f = static_cast<std::size_t>(feature);
    split_choice best;
    if constexpr (std::is_same_v<T, std::uint8_t>) {
        std::array<std::int64_t, 256> pos{}, neg{};
        for (std::size_t r : rows) {
            const std::uint8_t v = data.x[r * data.n_features + f];
            (data.y[r] ? pos : neg)[v] += weights[r];
        }
        std::int64_t tp = 0, tn = 0;
        for (int v = 0; v < 256; ++v) { tp += pos[static_cast<std::size_t>(v)]; tn += neg[static_cast<std::size_t>(v)]; }
        std::int64_t lp = 0, ln = 0;
        int prev = -1;
        for (int v = 0; v < 256; ++v) {
            const auto vi = static_cast<std::size_t>(v);
            if (pos[vi] == 0 && neg[vi] == 0) { continue; }
            if (prev >= 0) {
                const auto cand = detail::score_split(feature, (prev + v) / 2.0, lp, ln, tp - lp, tn - ln);
                if (detail::better_split(cand, best)) { best = cand; }
            }
            lp += pos[vi];
            ln += neg[vi];
            prev = v;
        }
    } else {
        std::vector<std::size_t> order(rows.begin(), rows.end());
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            return data.x[a * data.n_features + f] < data.x[b * data.n_features + f];
        });
        std::int64_t tp = 0, tn = 0;
        for (std::size_t r : order) { (data.y[r] ? tp : tn) += weights[r]; }
        std::int64_t lp = 0, ln = 0;
        for (std::size_t i = 0; i + 1 < order.size(); ++i) {
            const std::size_t r = order[i];
            (data.y[r] ? lp : ln) += weights[r];
            const T a = data.x[r * data.n_features + f];
            const T b = data.x[order[i + 1] * data.n_features + f];
            if (a == b) { continue; }
            double mid = a / 2.0 + b / 2.0;
            if (!(mid < b)) { mid = a; }  // adjacent doubles
            const auto cand = detail::score_split(feature, mid, lp, ln, tp - lp, tn - ln);
            if (detail::better_split(cand, best)) { best = cand; }
        }
    }
    return best;
}

/// best split among the given candidate features
template <typename T>
split_choice best_split(const basic_sample_set<T> &data, std::span<const std::uint32_t> weights,
                        std::span<const std::size_t> rows, std::span<const int> features) {
    split_choice best;
    for (int f : features) {
        const auto cand = best_split_on_feature(data, weights, rows, f);
        if (detail::better_split(cand, best)) { best = cand; }
    }
    return best;
}

inline std::size_t default_max_features(std::size_t n_features) {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(std::sqrt(static_cast<double>(n_features)))));
}

/// grows one unpruned tree on a bootstrap resample drawn from `seed`
template <typename T>
decision_tree grow_tree(const basic_sample_set<T> &data, std::uint64_t seed, std::size_t max_features) {
    rng r{seed};
    const std::size_t n = data.size();
    std::vector<std::uint32_t> weights(n, 0);
    for (std::size_t i = 0; i < n; ++i) { ++weights[r.below(n)]; }
    std::vector<std::size_t> rows;
    rows.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (weights[i] > 0) { rows.push_back(i); }
    }

    decision_tree tree;
    struct pending { std::size_t begin, end; int node; };
    std::vector<pending> stack;
    tree.nodes.emplace_back();
    stack.push_back({0, rows.size(), 0});
    std::vector<int> features(data.n_features);

    while (!stack.empty()) {
        const pending job = stack.back();
        stack.pop_back();
        const std::span<const std::size_t> node_rows{rows.data() + job.begin, job.end - job.begin};
        std::int64_t p = 0, q = 0;
        for (std::size_t row : node_rows) { (data.y[row] ? p : q) += weights[row]; }
        const double prob = static_cast<double>(p) / static_cast<double>(p + q);

        split_choice best;
        if (p > 0 && q > 0 && node_rows.size() >= 2) {
            // visit features in random order until max_features non-constant ones were scored
            std::iota(features.begin(), features.end(), 0);
            std::size_t scored = 0;
            for (std::size_t k = 0; k < features.size() && scored < max_features; ++k) {
                std::swap(features[k], features[k + r.below(features.size() - k)]);
                const auto cand = best_split_on_feature(data, weights, node_rows, features[k]);
                if (!cand.valid()) { continue; }
                ++scored;
                if (detail::better_split(cand, best)) { best = cand; }
            }
        }
        if (!best.valid()) {
            tree.nodes[static_cast<std::size_t>(job.node)].leaf_probability = prob;
            continue;
        }
        const std::size_t f = static_cast<std::size_t>(best.feature);
        auto mid = std::partition(rows.begin() + static_cast<std::ptrdiff_t>(job.begin),
                                  rows.begin() + static_cast<std::ptrdiff_t>(job.end), [&](std::size_t row) {
                                      return static_cast<double>(data.x[row * data.n_features + f]) <= best.threshold;
                                  });
        const std::size_t split_at = static_cast<std::size_t>(mid - rows.begin());
        const int left = static_cast<int>(tree.nodes.size());
        tree.nodes.emplace_back();
        const int right = static_cast<int>(tree.nodes.size());
        tree.nodes.emplace_back();
        auto &node = tree.nodes[static_cast<std::size_t>(job.node)];
        node.feature = best.feature;
        node.threshold = best.threshold;
        node.left = left;
        node.right = right;
        // right first so the left subtree is expanded next (stable node order)
        stack.push_back({split_at, job.end, right});
        stack.push_back({job.begin, split_at, left});
    }
    return tree;
}

// ---------------------------------------------------------------------------
// forests

struct forest_params {
    std::size_t n_estimators = 5;
    std::size_t max_features = 0;  // 0: floor(sqrt(n_features))
    std::uint64_t seed = 0;
    unsigned workers = 1;
};

struct forest_model {
    std::vector<decision_tree> trees;
    std::size_t n_estimators = 5;
    std::size_t n_features = 0;
    std::size_t max_features = 0;
    std::uint64_t seed = 0;
    std::size_t n_samples = 0;
    std::size_t n_positive = 0;

    bool trained() const noexcept { return !trees.empty(); }

    /// arithmetic mean of the tree leaf probabilities
    template <typename T>
    double predict(std::span<const T> x) const {
        if (!trained()) { throw error{errc::untrained_model, "forest has no trees"}; }
        if (x.size() != n_features) {
            throw error{errc::invalid_argument, "expected " + std::to_string(n_features) + " features"};
        }
        double sum = 0.0;
        for (const auto &t : trees) { sum += t.predict(x); }
        return sum / static_cast<double>(trees.size());
    }

    bool operator==(const forest_model &) const = default;
};

/// trees are independent (one derived RNG stream each) and may be grown in parallel
template <typename T>
forest_model train_forest(const basic_sample_set<T> &data, const forest_params &params = {}) {
    const std::size_t pos = data.positives();
    if (pos == 0 || pos == data.size()) {
        throw error{errc::single_class_data, "training data must contain both classes"};
    }
    if (params.n_estimators == 0) { throw error{errc::invalid_argument, "n_estimators must be positive"}; }
    forest_model m;
    m.n_estimators = params.n_estimators;
    m.n_features = data.n_features;
    m.max_features = params.max_features ? params.max_features : default_max_features(data.n_features);
    m.seed = params.seed;
    m.n_samples = data.size();
    m.n_positive = pos;
    m.trees.resize(params.n_estimators);

    const unsigned workers = std::max(1u, std::min<unsigned>(params.workers, static_cast<unsigned>(params.n_estimators)));
    auto grow = [&](std::size_t t) { m.trees[t] = grow_tree(data, derive_seed(params.seed, t), m.max_features); };
    if (workers == 1) {
        for (std::size_t t = 0; t < params.n_estimators; ++t) { grow(t); }
    } else {
        std::vector<std::thread> pool;
        for (unsigned w = 0; w < workers; ++w) {
            pool.emplace_back([&, w] {
                for (std::size_t t = w; t < params.n_estimators; t += workers) { grow(t); }
            });
        }
        for (auto &th : pool) { th.join(); }
    }
    return m;
}

// ---------------------------------------------------------------------------
// SMOTE

/// How a synthetic byte is computed from a (row, neighbor, u) draw.
///  interpolate: round(a + u * (b - a)) clamped to [0, 255], a point on the segment
///  byte_wrap:   trunc(a + u * ((b - a) mod 256)) mod 256, which is what
///               imbalanced-learn's SMOTE produces when fed uint8 arrays
enum class smote_arithmetic { interpolate, byte_wrap };

inline const char *smote_arithmetic_name(smote_arithmetic a) {
    return a == smote_arithmetic::byte_wrap ? "byte-wrap" : "interpolate";
}

inline smote_arithmetic parse_smote_arithmetic(std::string_view s) {
    if (s == "interpolate") { return smote_arithmetic::interpolate; }
    if (s == "byte-wrap") { return smote_arithmetic::byte_wrap; }
    throw error{errc::invalid_argument, "unknown oversampling arithmetic '" + std::string{s} + "'"};
}

/// appends synthetic minority rows, each drawn between a random minority
/// row and one of its k nearest minority neighbors, until
/// minority == round(target_ratio * majority)
inline sample_set smote_oversample(const sample_set &data, std::size_t k_neighbors = 5, double target_ratio = 1.0,
                                   std::uint64_t seed = 0,
                                   smote_arithmetic arithmetic = smote_arithmetic::interpolate) {
    const std::size_t pos = data.positives();
    const std::uint8_t minority_label = pos * 2 <= data.size() ? 1 : 0;
    std::vector<std::size_t> minority;
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (data.y[i] == minority_label) { minority.push_back(i); }
    }
    const std::size_t majority = data.size() - minority.size();
    if (minority.size() < k_neighbors + 1) {
        throw error{errc::too_few_minority, std::to_string(minority.size()) + " minority rows, need " +
                                                std::to_string(k_neighbors + 1)};
    }
    const auto wanted = static_cast<std::size_t>(std::llround(target_ratio * static_cast<double>(majority)));
    sample_set out = data;
    if (wanted <= minority.size()) { return out; }
    const std::size_t to_make = wanted - minority.size();

    // k nearest minority neighbors (squared Euclidean, ties by index)
    const std::size_t m = minority.size();
    const std::size_t nf = data.n_features;
    std::vector<std::size_t> neighbors(m * k_neighbors);
    std::vector<std::pair<std::uint64_t, std::size_t>> dist(m);
    for (std::size_t i = 0; i < m; ++i) {
        const std::uint8_t *a = data.x.data() + minority[i] * nf;
        for (std::size_t j = 0; j < m; ++j) {
            const std::uint8_t *b = data.x.data() + minority[j] * nf;
            std::uint64_t d = 0;
            for (std::size_t f = 0; f < nf; ++f) {
                const int diff = int{a[f]} - int{b[f]};
                d += static_cast<std::uint64_t>(diff * diff);
            }
            dist[j] = {j == i ? ~std::uint64_t{0} : d, j};
        }
        std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k_neighbors), dist.end());
        for (std::size_t k = 0; k < k_neighbors; ++k) { neighbors[i * k_neighbors + k] = dist[k].second; }
    }

    rng r{seed};
    std::vector<std::uint8_t> synth(nf);
    out.x.reserve(out.x.size() + to_make * nf);
    out.y.reserve(out.y.size() + to_make);
    for (std::size_t s = 0; s < to_make; ++s) {
        const std::size_t i = r.below(m);
        const std::size_t j = neighbors[i * k_neighbors + r.below(k_neighbors)];
        const double u = r.uniform01();
        const std::uint8_t *a = data.x.data() + minority[i] * nf;
        const std::uint8_t *b = data.x.data() + minority[j] * nf;
        if (arithmetic == smote_arithmetic::interpolate) {
            for (std::size_t f = 0; f < nf; ++f) {
                const double v = std::floor(a[f] + u * (static_cast<double>(b[f]) - a[f]) + 0.5);
                synth[f] = static_cast<std::uint8_t>(std::clamp(v, 0.0, 255.0));
            }
        } else {
            for (std::size_t f = 0; f < nf; ++f) {
                const auto diff = static_cast<std::uint8_t>(b[f] - a[f]);
                const double v = a[f] + u * diff;  // in [0, 510]
                synth[f] = static_cast<std::uint8_t>(static_cast<unsigned>(v));
            }
        }
        out.add(std::span<const std::uint8_t>{synth}, minority_label);
    }
    return out;
}

// ---------------------------------------------------------------------------
// stacking

struct stacked_params {
    std::size_t n_estimators = 5;
    double holdout_fraction = 0.25;
    std::size_t smote_k = 5;
    double smote_ratio = 1.0;
    smote_arithmetic oversampling = smote_arithmetic::byte_wrap;
    double decision_threshold = 0.5;
    std::uint64_t seed = 0;
    unsigned workers = 1;
};

struct stacked_probabilities {
    double high_precision;
    double high_recall;
    double stacked;
};

struct stacked_model {
    forest_model high_precision;
    forest_model high_recall;
    forest_model meta;  // two inputs: (p_high_precision, p_high_recall)
    double decision_threshold = 0.5;
    double holdout_fraction = 0.25;
    smote_arithmetic oversampling = smote_arithmetic::byte_wrap;
    std::uint64_t seed = 0;
    std::size_t base_rows_count = 0;
    std::size_t holdout_rows_count = 0;

    // rows of the training set used for the base forests and for the meta
    // forest; kept in memory only
    std::vector<std::size_t> base_rows;
    std::vector<std::size_t> holdout_rows;

    bool trained() const noexcept { return high_precision.trained() && high_recall.trained() && meta.trained(); }

    stacked_probabilities predict_all(std::span<const std::uint8_t> x) const {
        if (!trained()) { throw error{errc::untrained_model, "stacked model is not trained"}; }
        stacked_probabilities p;
        p.high_precision = high_precision.predict(x);
        p.high_recall = high_recall.predict(x);
        const double pair[2] = {p.high_precision, p.high_recall};
        p.stacked = meta.predict(std::span<const double>{pair, 2});
        return p;
    }

    double predict(std::span<const std::uint8_t> x) const { return predict_all(x).stacked; }

    bool classify(std::span<const std::uint8_t> x) const { return predict(x) >= decision_threshold; }
};

/// stratified split: holdout takes round(fraction * class count) rows of each class
inline std::pair<std::vector<std::size_t>, std::vector<std::size_t>>
stratified_split(const std::vector<std::uint8_t> &labels, double fraction, std::uint64_t seed) {
    rng r{seed};
    std::vector<std::size_t> by_class[2];
    for (std::size_t i = 0; i < labels.size(); ++i) { by_class[labels[i] ? 1 : 0].push_back(i); }
    std::vector<std::size_t> base, holdout;
    for (auto &rows : by_class) {
        r.shuffle(rows);
        auto take = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(rows.size())));
        if (take == 0 && rows.size() >= 2 && fraction > 0) { take = 1; }
        holdout.insert(holdout.end(), rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(take));
        base.insert(base.end(), rows.begin() + static_cast<std::ptrdiff_t>(take), rows.end());
    }
    std::sort(base.begin(), base.end());
    std::sort(holdout.begin(), holdout.end());
    return {std::move(base), std::move(holdout)};
}

/// base forests learn from the non-holdout rows; the meta forest learns
/// from the base probabilities on the disjoint holdout rows
inline stacked_model train_stacked(const sample_set &data, const stacked_params &params = {}) {
    const std::size_t pos = data.positives();
    if (pos == 0 || pos == data.size()) {
        throw error{errc::single_class_data, "training data must contain both classes"};
    }
    stacked_model m;
    m.decision_threshold = params.decision_threshold;
    m.holdout_fraction = params.holdout_fraction;
    m.oversampling = params.oversampling;
    m.seed = params.seed;
    std::tie(m.base_rows, m.holdout_rows) = stratified_split(data.y, params.holdout_fraction, derive_seed(params.seed, 1));
    m.base_rows_count = m.base_rows.size();
    m.holdout_rows_count = m.holdout_rows.size();

    const sample_set base = data.subset(m.base_rows);
    forest_params fp;
    fp.n_estimators = params.n_estimators;
    fp.workers = params.workers;
    fp.seed = derive_seed(params.seed, 2);
    m.high_precision = train_forest(base, fp);

    const sample_set balanced = smote_oversample(base, params.smote_k, params.smote_ratio, derive_seed(params.seed, 3),
                                                params.oversampling);
    fp.seed = derive_seed(params.seed, 4);
    m.high_recall = train_forest(balanced, fp);

    real_sample_set meta_data{2};
    for (std::size_t r : m.holdout_rows) {
        const auto x = data.row(r);
        const double pair[2] = {m.high_precision.predict(x), m.high_recall.predict(x)};
        meta_data.add(std::span<const double>{pair, 2}, data.y[r]);
    }
    fp.seed = derive_seed(params.seed, 5);
    m.meta = train_forest(meta_data, fp);
    return m;
}

// ---------------------------------------------------------------------------
// serialization
//
// keyhunt-model 1
// decision_threshold <real>     holdout_fraction <real>
// oversampling <interpolate|byte-wrap>     seed <u64>
// base_rows <n>                 holdout_rows <n>
// forest <high_precision|high_recall|meta>
//   n_estimators, n_features, max_features, seed, samples, positives
//   tree <index> <node count>
//   <feature> <threshold> <left> <right> <leaf_probability>   (one line per node)
// checksum <16 hex digits: FNV-1a 64 of every preceding byte>

inline constexpr int model_format_version = 1;

namespace detail {

inline std::string fmt_double(double v) {
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string{buf, res.ptr};
}

inline void write_forest(std::ostringstream &os, const char *name, const forest_model &f) {
    os << "forest " << name << '\n'
       << "n_estimators " << f.n_estimators << '\n'
       << "n_features " << f.n_features << '\n'
       << "max_features " << f.max_features << '\n'
       << "seed " << f.seed << '\n'
       << "samples " << f.n_samples << '\n'
       << "positives " << f.n_positive << '\n';
    for (std::size_t t = 0; t < f.trees.size(); ++t) {
        os << "tree " << t << ' ' << f.trees[t].nodes.size() << '\n';
        for (const auto &n : f.trees[t].nodes) {
            os << n.feature << ' ' << fmt_double(n.threshold) << ' ' << n.left << ' ' << n.right << ' '
               << fmt_double(n.leaf_probability) << '\n';
        }
    }
}

class model_parser {
public:
    explicit model_parser(std::string_view text) : text_{text} {}

    std::string_view line() {
        if (pos_ >= text_.size()) { fail("unexpected end of model"); }
        const std::size_t nl = text_.find('\n', pos_);
        if (nl == std::string_view::npos) { fail("unterminated line"); }
        std::string_view l = text_.substr(pos_, nl - pos_);
        pos_ = nl + 1;
        return l;
    }

    std::vector<std::string_view> fields() {
        std::string_view l = line();
        std::vector<std::string_view> out;
        std::size_t i = 0;
        while (i < l.size()) {
            while (i < l.size() && l[i] == ' ') { ++i; }
            std::size_t j = i;
            while (j < l.size() && l[j] != ' ') { ++j; }
            if (j > i) { out.push_back(l.substr(i, j - i)); }
            i = j;
        }
        return out;
    }

    std::string_view keyed(std::string_view key) {
        auto f = fields();
        if (f.size() != 2 || f[0] != key) { fail("expected '" + std::string{key} + "'"); }
        return f[1];
    }

    template <typename N>
    static N number(std::string_view s) {
        N v{};
        const auto res = std::from_chars(s.data(), s.data() + s.size(), v);
        if (res.ec != std::errc{} || res.ptr != s.data() + s.size()) {
            fail("bad number '" + std::string{s} + "'");
        }
        return v;
    }

    [[noreturn]] static void fail(const std::string &why) { throw error{errc::corrupt_model, why}; }

private:
    std::string_view text_;
    std::size_t pos_ = 0;
};

inline forest_model read_forest(model_parser &p, std::string_view name) {
    const auto head = p.fields();
    if (head.size() != 2 || head[0] != "forest" || head[1] != name) {
        model_parser::fail("expected forest " + std::string{name});
    }
    forest_model f;
    f.n_estimators = model_parser::number<std::size_t>(p.keyed("n_estimators"));
    f.n_features = model_parser::number<std::size_t>(p.keyed("n_features"));
    f.max_features = model_parser::number<std::size_t>(p.keyed("max_features"));
    f.seed = model_parser::number<std::uint64_t>(p.keyed("seed"));
    f.n_samples = model_parser::number<std::size_t>(p.keyed("samples"));
    f.n_positive = model_parser::number<std::size_t>(p.keyed("positives"));
    if (f.n_estimators == 0 || f.n_estimators > 100000) { model_parser::fail("bad estimator count"); }
    for (std::size_t t = 0; t < f.n_estimators; ++t) {
        const auto th = p.fields();
        if (th.size() != 3 || th[0] != "tree" || model_parser::number<std::size_t>(th[1]) != t) {
            model_parser::fail("expected tree " + std::to_string(t));
        }
        const auto count = model_parser::number<std::size_t>(th[2]);
        if (count == 0) { model_parser::fail("empty tree"); }
        decision_tree tree;
        tree.nodes.resize(count);
        for (std::size_t i = 0; i < count; ++i) {
            const auto nf = p.fields();
            if (nf.size() != 5) { model_parser::fail("bad node line"); }
            auto &n = tree.nodes[i];
            n.feature = model_parser::number<int>(nf[0]);
            n.threshold = model_parser::number<double>(nf[1]);
            n.left = model_parser::number<int>(nf[2]);
            n.right = model_parser::number<int>(nf[3]);
            n.leaf_probability = model_parser::number<double>(nf[4]);
            if (!n.is_leaf()) {
                const auto valid_child = [&](int c) { return c > static_cast<int>(i) && c < static_cast<int>(count); };
                if (static_cast<std::size_t>(n.feature) >= f.n_features || !valid_child(n.left) || !valid_child(n.right)) {
                    model_parser::fail("node links out of range");
                }
            }
        }
        f.trees.push_back(std::move(tree));
    }
    return f;
}

}  // namespace detail

inline std::string serialize_model(const stacked_model &m) {
    if (!m.trained()) { throw error{errc::untrained_model, "cannot save an untrained model"}; }
    std::ostringstream os;
    os << "keyhunt-model " << model_format_version << '\n'
       << "decision_threshold " << detail::fmt_double(m.decision_threshold) << '\n'
       << "holdout_fraction " << detail::fmt_double(m.holdout_fraction) << '\n'
       << "oversampling " << smote_arithmetic_name(m.oversampling) << '\n'
       << "seed " << m.seed << '\n'
       << "base_rows " << m.base_rows_count << '\n'
       << "holdout_rows " << m.holdout_rows_count << '\n';
    detail::write_forest(os, "high_precision", m.high_precision);
    detail::write_forest(os, "high_recall", m.high_recall);
    detail::write_forest(os, "meta", m.meta);
    std::string body = os.str();
    char sum[32];
    std::snprintf(sum, sizeof sum, "%016llx", static_cast<unsigned long long>(fnv1a64(body)));
    return body + "checksum " + sum + "\n";
}

inline stacked_model deserialize_model(std::string_view text) {
    const std::size_t mark = text.rfind("checksum ");
    if (mark == std::string_view::npos || (mark != 0 && text[mark - 1] != '\n')) {
        throw error{errc::corrupt_model, "missing checksum trailer"};
    }
    std::string_view trailer = text.substr(mark + 9);
    while (!trailer.empty() && (trailer.back() == '\n' || trailer.back() == '\r')) { trailer.remove_suffix(1); }
    std::uint64_t expected = 0;
    try {
        expected = parse_hex_u64(trailer);
    } catch (const error &) {
        throw error{errc::corrupt_model, "bad checksum trailer"};
    }
    const std::string_view body = text.substr(0, mark);
    if (fnv1a64(body) != expected) { throw error{errc::corrupt_model, "checksum mismatch"}; }

    detail::model_parser p{body};
    const auto head = p.fields();
    if (head.size() != 2 || head[0] != "keyhunt-model") { detail::model_parser::fail("not a keyhunt model"); }
    if (detail::model_parser::number<int>(head[1]) != model_format_version) {
        detail::model_parser::fail("unsupported model version " + std::string{head[1]});
    }
    stacked_model m;
    m.decision_threshold = detail::model_parser::number<double>(p.keyed("decision_threshold"));
    m.holdout_fraction = detail::model_parser::number<double>(p.keyed("holdout_fraction"));
    try {
        m.oversampling = parse_smote_arithmetic(p.keyed("oversampling"));
    } catch (const error &e) {
        detail::model_parser::fail(e.what());
    }
    m.seed = detail::model_parser::number<std::uint64_t>(p.keyed("seed"));
    m.base_rows_count = detail::model_parser::number<std::size_t>(p.keyed("base_rows"));
    m.holdout_rows_count = detail::model_parser::number<std::size_t>(p.keyed("holdout_rows"));
    m.high_precision = detail::read_forest(p, "high_precision");
    m.high_recall = detail::read_forest(p, "high_recall");
    m.meta = detail::read_forest(p, "meta");
    if (m.meta.n_features != 2 || m.high_precision.n_features != m.high_recall.n_features) {
        detail::model_parser::fail("inconsistent feature counts");
    }
    return m;
}

inline void save_model(const stacked_model &m, const std::filesystem::path &path) {
    const std::string text = serialize_model(m);
    std::ofstream out{path, std::ios::binary};
    if (!out) { throw error{errc::io, "cannot write " + path.string()}; }
    out << text;
    if (!out) { throw error{errc::io, "short write to " + path.string()}; }
}

inline stacked_model load_model(const std::filesystem::path &path) {
    std::ifstream in{path, std::ios::binary};
    if (!in) { throw error{errc::io, "cannot open model " + path.string()}; }
    std::ostringstream ss;
    ss << in.rdbuf();
    return deserialize_model(ss.str());
}

}  // namespace keyhunt

#endif  // KEYHUNT_FOREST_HPP
