#include <gtest/gtest.h>

#include <filesystem>
#include <sstream>

#include <unistd.h>

#include <keyhunt/eval.hpp>

using namespace keyhunt;
namespace fs = std::filesystem;

namespace {

forest_model constant_forest(double p, std::size_t features) {
    forest_model f;
    f.n_features = features;
    f.n_estimators = 5;
    decision_tree t;
    t.nodes.push_back(tree_node{-1, 0.0, -1, -1, p});
    f.trees.assign(5, t);
    return f;
}

/// a model whose three probabilities are fixed
stacked_model constant_model(double p) {
    stacked_model m;
    m.high_precision = constant_forest(p, slice_window);
    m.high_recall = constant_forest(p, slice_window);
    m.meta = constant_forest(p, 2);
    return m;
}

std::vector<dataset_entry> synthetic_entries(std::size_t n, std::uint64_t seed, std::size_t heap_size) {
    corpus_spec spec;
    spec.seed = seed;
    spec.heap_size = heap_size;
    std::vector<dataset_entry> out;
    for (std::size_t i = 0; i < n; ++i) { out.push_back(generate_synthetic(corpus_recipe(spec, i)).entry); }
    return out;
}

/// model trained once for the whole suite
class TrainedModel : public ::testing::Test {
protected:
    static void SetUpTestSuite() {
        const auto train = synthetic_entries(12, 100, 64 * 1024);
        model_ = new stacked_model(train_on_entries(train));
    }
    static void TearDownTestSuite() {
        delete model_;
        model_ = nullptr;
    }
    static stacked_model *model_;
};

stacked_model *TrainedModel::model_ = nullptr;

}  // namespace

// ---------------------------------------------------------------------------
// metrics

TEST(Metrics, HandArithmetic) {
    const auto m = compute_metrics({9, 1, 89, 1});
    EXPECT_EQ(format_percent(m.precision), "90.00");
    EXPECT_EQ(format_percent(m.recall), "90.00");
    EXPECT_EQ(format_percent(m.accuracy), "98.00");
    EXPECT_EQ(format_percent(m.f1), "90.00");
}

TEST(Metrics, DegenerateCountsAreAbsentNotZero) {
    const auto m = compute_metrics({0, 0, 10, 0});
    EXPECT_FALSE(m.precision);
    EXPECT_FALSE(m.recall);
    EXPECT_FALSE(m.f1);
    EXPECT_EQ(format_percent(m.accuracy), "100.00");
    EXPECT_EQ(format_percent(m.precision), "-");
    const auto empty = compute_metrics({});
    EXPECT_FALSE(empty.accuracy);
}

TEST(Metrics, F1IsHarmonicMean) {
    rng r{1};
    for (int i = 0; i < 500; ++i) {
        const confusion_counts c{1 + r.below(100), r.below(100), r.below(100), r.below(100)};
        const auto m = compute_metrics(c);
        const double p = *m.precision, q = *m.recall;
        EXPECT_NEAR(*m.f1, 2 * p * q / (p + q), 1e-9);
    }
}

TEST_F(TrainedModel, MetricsAgreeWithRecount) {
    const auto entries = synthetic_entries(4, 200, 64 * 1024);
    const scan_options opt;
    const auto ev = evaluate_entries(entries, *model_, opt);

    // recount straight from the windows and the model
    std::size_t n = 0;
    std::array<std::array<std::size_t, 4>, 3> c{};  // tp fp tn fn per classifier
    for (const auto &e : entries) {
        for (const auto &s : extract_slices(e.heap, entropy_mask(e.heap), &e.annotations)) {
            ++n;
            const auto p = model_->predict_all(s.data);
            const double probs[3] = {p.high_precision, p.high_recall, p.stacked};
            for (int k = 0; k < 3; ++k) {
                const bool pred = probs[k] >= 0.5, actual = s.label == 1;
                ++c[static_cast<std::size_t>(k)][pred ? (actual ? 0 : 1) : (actual ? 3 : 2)];
            }
        }
    }
    for (std::size_t k = 0; k < 3; ++k) {
        const auto &got = ev.classifiers.counts[k];
        EXPECT_EQ(got.total(), n);
        EXPECT_EQ(got.tp, c[k][0]);
        EXPECT_EQ(got.fp, c[k][1]);
        EXPECT_EQ(got.tn, c[k][2]);
        EXPECT_EQ(got.fn, c[k][3]);
        const double acc = 100.0 * static_cast<double>(c[k][0] + c[k][2]) / static_cast<double>(n);
        EXPECT_DOUBLE_EQ(*compute_metrics(got).accuracy, acc);
    }
    EXPECT_EQ(ev.entries, 4u);
    EXPECT_EQ(ev.heap_bytes, 4u * 64 * 1024);
    EXPECT_LE(ev.selected_bytes, ev.heap_bytes);
}

// ---------------------------------------------------------------------------
// retrieval

TEST(Retrieval, BoundsWithConstantModels) {
    const auto entries = synthetic_entries(6, 300, 32768);
    const auto all = retrieval_by_key_length(entries, constant_model(1.0));
    const auto none = retrieval_by_key_length(entries, constant_model(0.0));
    std::size_t keys = 0;
    for (const auto &e : entries) { keys += e.annotations.size(); }
    std::size_t total = 0;
    for (const auto &[len, row] : all.by_length) {
        total += row.total;
        for (auto r : row.retrieved) { EXPECT_EQ(r, row.total) << len; }
        EXPECT_EQ(none.by_length.at(len).total, row.total);
        for (auto r : none.by_length.at(len).retrieved) { EXPECT_EQ(r, 0u); }
    }
    EXPECT_EQ(total, keys);
    // IVs, cipher keys of all three sizes, and integrity keys
    EXPECT_TRUE(all.by_length.count(16));
    EXPECT_TRUE(all.by_length.count(24));
    EXPECT_TRUE(all.by_length.count(32));
}

TEST_F(TrainedModel, RetrievalMonotoneInThreshold) {
    const auto entries = synthetic_entries(3, 400, 64 * 1024);
    std::optional<retrieval_report> prev;
    for (double t = 0.0; t <= 1.0; t += 0.1) {
        scan_options opt;
        opt.decision_threshold = t;
        const auto rep = retrieval_by_key_length(entries, *model_, opt);
        for (const auto &[len, row] : rep.by_length) {
            for (std::size_t k = 0; k < 3; ++k) {
                EXPECT_LE(row.retrieved[k], row.total);
                if (prev) { EXPECT_LE(row.retrieved[k], prev->by_length.at(len).retrieved[k]) << t; }
            }
        }
        prev = rep;
    }
}

// ---------------------------------------------------------------------------
// benchmarks

class Bench : public TrainedModel {
protected:
    void SetUp() override {
        path_ = fs::temp_directory_path() / ("keyhunt-eval-bench-" + std::to_string(::getpid()) + ".txt");
        save_model(*model_, path_);
    }
    void TearDown() override { fs::remove(path_); }
    fs::path path_;
};

TEST_F(Bench, RecordsPerCaseAndMethod) {
    corpus_spec spec;
    spec.seed = 500;
    spec.heap_size = 264 * 1024;
    std::vector<synthetic_entry> syn;
    for (std::size_t i : {1u, 2u}) {  // aes192 and aes256: 24- and 32-byte keys
        auto rec = corpus_recipe(spec, i);
        rec = random_recipe(rec.rng_seed, rec.heap_size, rec.cipher, rec.heap_size * 3 / 4);
        syn.push_back(generate_synthetic(rec));
    }
    std::vector<bench_case> cases;
    for (const auto &s : syn) { cases.push_back({s.stem, &s.entry.heap, &*s.packet}); }
    bench_options opt;
    opt.runs = 3;
    const auto records = benchmark(cases, path_, {bench_method::brute_force, bench_method::ml}, opt);
    ASSERT_EQ(records.size(), 4u);
    for (std::size_t i = 0; i < records.size(); ++i) {
        const auto &r = records[i];
        const auto &e = syn[i / 2].entry;
        EXPECT_EQ(r.method, i % 2 ? bench_method::ml : bench_method::brute_force);
        EXPECT_EQ(r.runs, 3u);
        EXPECT_GE(r.stddev_seconds, 0.0);
        EXPECT_DOUBLE_EQ(r.heap_kb, 264.0);
        ASSERT_TRUE(r.found) << bench_method_name(r.method);
        EXPECT_EQ(r.iv_offset, e.find(key_role::A)->offset);
        EXPECT_EQ(r.key_offset, e.find(key_role::C)->offset);
        if (r.method == bench_method::ml) {
            EXPECT_LT(r.reduced_kb / r.heap_kb, 0.05);
            EXPECT_LT(r.mean_seconds, records[i - 1].mean_seconds);
        } else {
            EXPECT_GE(r.reduced_kb / r.heap_kb, 0.25);
            EXPECT_LE(r.reduced_kb / r.heap_kb, 0.35);
        }
    }
    const auto summary = summarize(records);
    ASSERT_EQ(summary.size(), 2u);
    EXPECT_EQ(summary[0].entries, 2u);
    EXPECT_EQ(summary[0].failures, 0u);

    const auto csv = bench_csv(records);
    EXPECT_EQ(csv.substr(0, csv.find('\n')),
              "entry,method,heap_kb,reduced_kb,mean_seconds,stddev_seconds,runs,found,iv_offset,key_offset");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 5);
    EXPECT_NE(bench_table(records).find("brute-force"), std::string::npos);

    opt.runs = 2;
    EXPECT_THROW(benchmark(cases, path_, {bench_method::ml}, opt), error);
}

TEST(BenchSummary, FailuresExcludedFromMeans) {
    std::vector<bench_record> records(3);
    records[0] = {"a", bench_method::ml, 264, 5, 0.5, 0.01, 5, true, 0, 8};
    records[1] = {"b", bench_method::ml, 264, 5, 0.1, 0.01, 5, false, 0, 0};
    records[2] = {"c", bench_method::ml, 264, 7, 0.3, 0.01, 5, true, 0, 8};
    const auto s = summarize(records);
    ASSERT_EQ(s.size(), 1u);
    EXPECT_EQ(s[0].method, bench_method::ml);
    EXPECT_EQ(s[0].entries, 3u);
    EXPECT_EQ(s[0].failures, 1u);
    EXPECT_DOUBLE_EQ(s[0].mean_seconds, 0.4);
    EXPECT_DOUBLE_EQ(s[0].reduced_kb, 6.0);
}

// ---------------------------------------------------------------------------
// reports

TEST(Reports, CsvHeadersAndRows) {
    classifier_report rep;
    rep.of(slice_selector::high_precision) = {9, 1, 89, 1};
    rep.of(slice_selector::stacked) = {0, 0, 10, 0};
    const auto csv = metrics_csv(rep);
    std::istringstream in{csv};
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "classifier,accuracy,precision,recall,f1,tp,fp,tn,fn");
    std::getline(in, line);
    EXPECT_EQ(line, "high-precision,98.00,90.00,90.00,90.00,9,1,89,1");
    std::getline(in, line);
    EXPECT_EQ(line.rfind("high-recall,", 0), 0u);
    std::getline(in, line);
    EXPECT_EQ(line, "stacked,100.00,-,-,-,0,0,10,0");

    retrieval_report ret;
    ret.by_length[24] = {10, {7, 10, 9}};  // high-precision, high-recall, stacked
    const auto rcsv = retrieval_csv(ret);
    EXPECT_EQ(rcsv, "key_len,total,high_recall,high_precision,stacked\n24,10,10,7,9\n");
    EXPECT_NE(metrics_table(rep).find("90.00"), std::string::npos);
    EXPECT_NE(retrieval_table(ret).find("24"), std::string::npos);
}

TEST(Reports, HardwareHeaderNamesThreads) {
    const auto h = hardware_header();
    EXPECT_NE(h.find("threads"), std::string::npos);
}
