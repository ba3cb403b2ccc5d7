// eval.hpp
//
// Result views: slice metrics per classifier, key retrieval per key
// length, and brute-force vs. ML timing. Each report renders as an
// aligned text table and as CSV (one record per line after a header).

#ifndef KEYHUNT_EVAL_HPP
#define KEYHUNT_EVAL_HPP

#include <array>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "aes.hpp"
#include "core.hpp"
#include "dataset.hpp"
#include "forest.hpp"
#include "pipeline.hpp"

namespace keyhunt {

// ---------------------------------------------------------------------------
// metrics

struct confusion_counts {
    std::size_t tp = 0, fp = 0, tn = 0, fn = 0;

    std::size_t total() const noexcept { return tp + fp + tn + fn; }

    void add(bool predicted, bool actual) {
        if (predicted) {
            ++(actual ? tp : fp);
        } else {
            ++(actual ? fn : tn);
        }
    }

    bool operator==(const confusion_counts &) const = default;
};

/// percentages; a ratio with a zero denominator is absent
struct metrics {
    std::optional<double> accuracy;
    std::optional<double> precision;
    std::optional<double> recall;
    std::optional<double> f1;
};

inline metrics compute_metrics(const confusion_counts &c) {
    auto ratio = [](std::size_t num, std::size_t den) -> std::optional<double> {
        if (den == 0) { return std::nullopt; }
        return 100.0 * static_cast<double>(num) / static_cast<double>(den);
    };
    metrics m;
    m.accuracy = ratio(c.tp + c.tn, c.total());
    m.precision = ratio(c.tp, c.tp + c.fp);
    m.recall = ratio(c.tp, c.tp + c.fn);
    // 2tp / (2tp + fp + fn) equals the harmonic mean whenever both exist
    if (m.precision && m.recall) { m.f1 = ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn); }
    return m;
}

inline std::string format_percent(const std::optional<double> &v) {
    if (!v) { return "-"; }
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.2f", *v);
    return buf;
}

inline constexpr std::array<slice_selector, 3> report_classifiers = {
    slice_selector::high_precision, slice_selector::high_recall, slice_selector::stacked};

/// confusion counts of the three classifiers over labeled windows
struct classifier_report {
    std::array<confusion_counts, 3> counts{};  // order of report_classifiers

    confusion_counts &of(slice_selector s) { return counts[index(s)]; }
    const confusion_counts &of(slice_selector s) const { return counts[index(s)]; }

    static std::size_t index(slice_selector s) {
        switch (s) {
        case slice_selector::high_precision: return 0;
        case slice_selector::high_recall:    return 1;
        case slice_selector::stacked:        return 2;
        }
        return 2;
    }
};

inline void tally(classifier_report &rep, const std::vector<scored_slice> &scored, double threshold) {
    for (const auto &s : scored) {
        for (auto sel : report_classifiers) {
            rep.of(sel).add(selected_probability(s.p, sel) >= threshold, s.slice.label == 1);
        }
    }
}

// ---------------------------------------------------------------------------
// retrieval

struct length_retrieval {
    std::size_t total = 0;
    std::array<std::size_t, 3> retrieved{};  // order of report_classifiers
};

/// key length -> counts; every annotated key counts under its own length
struct retrieval_report {
    std::map<std::size_t, length_retrieval> by_length;
};

/// a key is retrieved by a classifier iff one of its positive windows
/// overlaps the key's byte range
inline void tally(retrieval_report &rep, const std::vector<key_annotation> &keys,
                  const std::vector<scored_slice> &scored, double threshold) {
    for (const auto &k : keys) {
        auto &row = rep.by_length[k.length];
        ++row.total;
        for (auto sel : report_classifiers) {
            for (const auto &s : scored) {
                if (selected_probability(s.p, sel) >= threshold &&
                    ranges_intersect(s.slice.offset, s.slice.data.size(), k.offset, k.length)) {
                    ++row.retrieved[classifier_report::index(sel)];
                    break;
                }
            }
        }
    }
}

struct evaluation {
    classifier_report classifiers;
    retrieval_report retrieval;
    std::size_t entries = 0;
    std::size_t heap_bytes = 0;
    /// union of the windows kept by the scan selector, summed over heaps
    std::size_t selected_bytes = 0;
};

/// scores every entry once and fills both views
template <typename Entries>
evaluation evaluate_entries(const Entries &entries, const stacked_model &model, const scan_options &opt = {}) {
    evaluation ev;
    for (const dataset_entry &e : entries) {
        const auto scored = score_heap(model, e.heap, opt, &e.annotations);
        tally(ev.classifiers, scored, opt.decision_threshold);
        tally(ev.retrieval, e.annotations, scored, opt.decision_threshold);
        std::vector<candidate_region> kept;
        for (const auto &s : scored) {
            if (selected_probability(s.p, opt.selector) >= opt.decision_threshold) {
                kept.push_back({s.slice.offset, s.slice.data.size(), region_origin::classifier});
            }
        }
        ++ev.entries;
        ev.heap_bytes += e.heap.size();
        ev.selected_bytes += total_length(merge_regions(std::move(kept)));
    }
    return ev;
}

template <typename Entries>
retrieval_report retrieval_by_key_length(const Entries &entries, const stacked_model &model,
                                         const scan_options &opt = {}) {
    retrieval_report rep;
    for (const dataset_entry &e : entries) {
        tally(rep, e.annotations, score_heap(model, e.heap, opt), opt.decision_threshold);
    }
    return rep;
}

// ---------------------------------------------------------------------------
// benchmarks

enum class bench_method { brute_force, ml };

inline const char *bench_method_name(bench_method m) { return m == bench_method::ml ? "ml" : "brute-force"; }

struct bench_record {
    std::string entry;
    bench_method method = bench_method::brute_force;
    double heap_kb = 0.0;
    double reduced_kb = 0.0;  // page-filtered heap or selected windows
    double mean_seconds = 0.0;
    double stddev_seconds = 0.0;
    std::size_t runs = 0;
    bool found = false;
    std::size_t iv_offset = 0;
    std::size_t key_offset = 0;
};

struct bench_options {
    std::size_t runs = 5;
    brute_options brute;
    scan_options scan;
    search_options search;
};

struct bench_case {
    std::string name;
    const heap_snapshot *heap = nullptr;
    const validation_packet *packet = nullptr;
};

namespace detail {

inline void mean_stddev(const std::vector<double> &xs, double &mean, double &sd) {
    mean = 0.0;
    for (double x : xs) { mean += x; }
    mean /= static_cast<double>(xs.size());
    double ss = 0.0;
    for (double x : xs) { ss += (x - mean) * (x - mean); }
    sd = xs.size() > 1 ? std::sqrt(ss / static_cast<double>(xs.size() - 1)) : 0.0;
}

}  // namespace detail

/// One discarded warm-up run, then `runs` timed runs per method, methods
/// in sequence. The ML time covers loading the model file, scanning and
/// the search. A run that does not find the pair marks the record as failed.
inline std::vector<bench_record> benchmark(const std::vector<bench_case> &cases, const std::filesystem::path &model_path,
                                           const std::vector<bench_method> &methods, const bench_options &opt = {}) {
    if (opt.runs < 3) { throw error{errc::invalid_argument, "benchmarks need at least 3 runs"}; }
    std::vector<bench_record> out;
    for (const auto &c : cases) {
        for (bench_method method : methods) {
            bench_record rec;
            rec.entry = c.name;
            rec.method = method;
            rec.heap_kb = static_cast<double>(c.heap->size()) / 1024.0;
            rec.runs = opt.runs;
            rec.found = true;
            std::vector<double> times;
            for (std::size_t run = 0; run <= opt.runs; ++run) {
                const auto t0 = std::chrono::steady_clock::now();
                extraction_result res;
                if (method == bench_method::ml) {
                    const auto model = load_model(model_path);
                    res = ml_extract(*c.packet, *c.heap, model, opt.scan, opt.search);
                } else {
                    res = brute_extract(*c.packet, *c.heap, opt.brute);
                }
                const double dt = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
                if (run == 0) { continue; }
                times.push_back(dt);
                rec.reduced_kb = static_cast<double>(res.reduced_bytes) / 1024.0;
                if (res.search.found()) {
                    rec.iv_offset = res.search.match->iv_offset;
                    rec.key_offset = res.search.match->key_offset;
                } else {
                    rec.found = false;
                }
            }
            detail::mean_stddev(times, rec.mean_seconds, rec.stddev_seconds);
            out.push_back(rec);
        }
    }
    return out;
}

struct bench_summary {
    bench_method method;
    std::size_t entries = 0;
    std::size_t failures = 0;  // excluded from the means
    double mean_seconds = 0.0;
    double heap_kb = 0.0;
    double reduced_kb = 0.0;
};

inline std::vector<bench_summary> summarize(const std::vector<bench_record> &records) {
    std::vector<bench_summary> out;
    for (bench_method m : {bench_method::brute_force, bench_method::ml}) {
        bench_summary s{m};
        for (const auto &r : records) {
            if (r.method != m) { continue; }
            ++s.entries;
            if (!r.found) { ++s.failures; continue; }
            s.mean_seconds += r.mean_seconds;
            s.heap_kb += r.heap_kb;
            s.reduced_kb += r.reduced_kb;
        }
        if (s.entries == 0) { continue; }
        if (const std::size_t ok = s.entries - s.failures) {
            s.mean_seconds /= static_cast<double>(ok);
            s.heap_kb /= static_cast<double>(ok);
            s.reduced_kb /= static_cast<double>(ok);
        }
        out.push_back(s);
    }
    return out;
}

// ---------------------------------------------------------------------------
// report rendering

/// "# cpu: ..., threads: N, aes: aes-ni|table" header line for reports
inline std::string hardware_header() {
    std::string cpu = "unknown";
    std::ifstream info{"/proc/cpuinfo"};
    for (std::string line; std::getline(info, line);) {
        if (line.rfind("model name", 0) == 0) {
            const auto colon = line.find(':');
            if (colon != std::string::npos) { cpu = line.substr(colon + 2); }
            break;
        }
    }
    return "# cpu: " + cpu + ", threads: " + std::to_string(std::thread::hardware_concurrency()) +
           ", aes: " + (aes::hardware_enabled() ? "aes-ni" : "table");
}

inline std::string metrics_table(const classifier_report &rep) {
    std::ostringstream os;
    char line[160];
    std::snprintf(line, sizeof line, "%-16s %9s %9s %9s %9s %9s %9s %9s %9s\n", "classifier", "accuracy", "precision",
                  "recall", "f1", "tp", "fp", "tn", "fn");
    os << line;
    for (auto sel : report_classifiers) {
        const auto &c = rep.of(sel);
        const auto m = compute_metrics(c);
        std::snprintf(line, sizeof line, "%-16s %9s %9s %9s %9s %9zu %9zu %9zu %9zu\n", selector_name(sel),
                      format_percent(m.accuracy).c_str(), format_percent(m.precision).c_str(),
                      format_percent(m.recall).c_str(), format_percent(m.f1).c_str(), c.tp, c.fp, c.tn, c.fn);
        os << line;
    }
    return os.str();
}

/// classifier,accuracy,precision,recall,f1,tp,fp,tn,fn ("-" marks an absent ratio)
inline std::string metrics_csv(const classifier_report &rep) {
    std::ostringstream os;
    os << "classifier,accuracy,precision,recall,f1,tp,fp,tn,fn\n";
    for (auto sel : report_classifiers) {
        const auto &c = rep.of(sel);
        const auto m = compute_metrics(c);
        os << selector_name(sel) << ',' << format_percent(m.accuracy) << ',' << format_percent(m.precision) << ','
           << format_percent(m.recall) << ',' << format_percent(m.f1) << ',' << c.tp << ',' << c.fp << ',' << c.tn
           << ',' << c.fn << '\n';
    }
    return os.str();
}

inline std::string retrieval_table(const retrieval_report &rep) {
    std::ostringstream os;
    char line[160];
    std::snprintf(line, sizeof line, "%-8s %10s %12s %15s %10s\n", "key_len", "total", "high-recall", "high-precision",
                  "stacked");
    os << line;
    for (const auto &[len, row] : rep.by_length) {
        std::snprintf(line, sizeof line, "%-8zu %10zu %12zu %15zu %10zu\n", len, row.total,
                      row.retrieved[classifier_report::index(slice_selector::high_recall)],
                      row.retrieved[classifier_report::index(slice_selector::high_precision)],
                      row.retrieved[classifier_report::index(slice_selector::stacked)]);
        os << line;
    }
    return os.str();
}

/// key_len,total,high_recall,high_precision,stacked
inline std::string retrieval_csv(const retrieval_report &rep) {
    std::ostringstream os;
    os << "key_len,total,high_recall,high_precision,stacked\n";
    for (const auto &[len, row] : rep.by_length) {
        os << len << ',' << row.total << ',' << row.retrieved[classifier_report::index(slice_selector::high_recall)]
           << ',' << row.retrieved[classifier_report::index(slice_selector::high_precision)] << ','
           << row.retrieved[classifier_report::index(slice_selector::stacked)] << '\n';
    }
    return os.str();
}

inline std::string bench_table(const std::vector<bench_record> &records) {
    std::ostringstream os;
    char line[256];
    std::snprintf(line, sizeof line, "%-28s %-12s %9s %11s %12s %10s %5s %6s\n", "entry", "method", "heap_kb",
                  "reduced_kb", "mean_s", "stddev_s", "runs", "found");
    os << line;
    for (const auto &r : records) {
        std::snprintf(line, sizeof line, "%-28s %-12s %9.2f %11.2f %12.4f %10.4f %5zu %6s\n", r.entry.c_str(),
                      bench_method_name(r.method), r.heap_kb, r.reduced_kb, r.mean_seconds, r.stddev_seconds, r.runs,
                      r.found ? "yes" : "no");
        os << line;
    }
    for (const auto &s : summarize(records)) {
        std::snprintf(line, sizeof line, "# %s: %zu entries, %zu failed, mean %.4f s, heap %.2f KB, reduced %.2f KB\n",
                      bench_method_name(s.method), s.entries, s.failures, s.mean_seconds, s.heap_kb, s.reduced_kb);
        os << line;
    }
    return os.str();
}

/// entry,method,heap_kb,reduced_kb,mean_seconds,stddev_seconds,runs,found,iv_offset,key_offset
inline std::string bench_csv(const std::vector<bench_record> &records) {
    std::ostringstream os;
    os << "entry,method,heap_kb,reduced_kb,mean_seconds,stddev_seconds,runs,found,iv_offset,key_offset\n";
    char buf[64];
    for (const auto &r : records) {
        os << r.entry << ',' << bench_method_name(r.method) << ',';
        std::snprintf(buf, sizeof buf, "%.2f,%.2f,%.6f,%.6f", r.heap_kb, r.reduced_kb, r.mean_seconds, r.stddev_seconds);
        os << buf << ',' << r.runs << ',' << (r.found ? 1 : 0) << ',' << r.iv_offset << ',' << r.key_offset << '\n';
    }
    return os.str();
}

}  // namespace keyhunt

#endif  // KEYHUNT_EVAL_HPP
