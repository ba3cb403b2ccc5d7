// Acceptance run: one PASS/FAIL line per criterion AC1..AC9, exit status 1
// when any fails. Corpora are generated in memory from fixed seeds; models
// and reports of each repetition go to <work>/run1 and <work>/run2.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <keyhunt/keyhunt.hpp>

#include "reference_mask.hpp"

namespace fs = std::filesystem;
using namespace keyhunt;

namespace {

using clock_type = std::chrono::steady_clock;

double since(clock_type::time_point t0) { return std::chrono::duration<double>(clock_type::now() - t0).count(); }

struct criterion {
    std::string id;
    bool pass = false;
    std::string detail;
};

std::string fmt(const char *f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

constexpr std::uint64_t validation_seed = 1001;
constexpr std::uint64_t ml_train_seed = 2002;
constexpr std::uint64_t metrics_seed = 4004;
constexpr std::uint64_t speed_seed = 7007;
constexpr std::size_t validation_heaps = 100;

/// 100 heaps of 132 or 264 KB over aes128/192/256-ctr; every 25th pair of
/// entries pins the IV and key to the first and last rows
std::vector<synthetic_entry> validation_corpus() {
    corpus_spec spec;
    spec.seed = validation_seed;
    std::vector<synthetic_entry> out;
    for (std::size_t i = 0; i < validation_heaps; ++i) {
        auto rec = corpus_recipe(spec, i);
        if (i % 25 == 0) {
            rec.iv_offset = 0;
            rec.key_offset = rec.heap_size - rec.cipher.key_len;
        } else if (i % 25 == 1) {
            rec.key_offset = 0;
            rec.iv_offset = rec.heap_size - rec.cipher.iv_len;
        }
        out.push_back(generate_synthetic(rec));
    }
    return out;
}

std::vector<dataset_entry> entries_of(const std::vector<synthetic_entry> &syn, std::size_t from = 0,
                                      std::size_t to = ~std::size_t{0}) {
    std::vector<dataset_entry> out;
    for (std::size_t i = from; i < std::min(to, syn.size()); ++i) { out.push_back(syn[i].entry); }
    return out;
}

std::vector<synthetic_entry> corpus(std::uint64_t seed, std::size_t n) {
    corpus_spec spec;
    spec.seed = seed;
    std::vector<synthetic_entry> out;
    for (std::size_t i = 0; i < n; ++i) { out.push_back(generate_synthetic(corpus_recipe(spec, i))); }
    return out;
}

bool is_truth(const key_match &m, const dataset_entry &e) {
    const auto *a = e.find(key_role::A);
    const auto *c = e.find(key_role::C);
    return a && c && m.iv_offset == a->offset && m.key_offset == c->offset && m.iv == a->value && m.key == c->value;
}

std::string match_line(const char *method, std::size_t i, const search_result &r) {
    if (!r.found()) { return fmt("%s %zu not-found\n", method, i); }
    const auto &m = *r.match;
    return fmt("%s %zu %zu %zu %s %s\n", method, i, m.iv_offset, m.key_offset, to_hex(m.iv).c_str(),
               to_hex(m.key).c_str());
}

void write_text(const fs::path &p, const std::string &text) {
    write_file(p, byte_span{reinterpret_cast<const std::uint8_t *>(text.data()), text.size()});
}

std::string read_text(const fs::path &p) {
    std::ifstream in{p, std::ios::binary};
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

double percent(const std::optional<double> &v) { return v ? *v : -1.0; }

struct core_run {
    std::vector<criterion> results;  // AC1..AC5
    std::vector<std::string> artifacts;
};

/// criteria 1 to 5; `dir` receives models, reports and recovered keys
core_run run_core(const fs::path &dir) {
    fs::create_directories(dir);
    core_run out;
    std::string keys;

    const auto val = validation_corpus();

    // AC1: page-filtered brute force recovers the planted pair
    {
        const auto t0 = clock_type::now();
        std::size_t exact = 0;
        std::string misses;
        for (std::size_t i = 0; i < val.size(); ++i) {
            const auto res = brute_extract(*val[i].packet, val[i].entry.heap);
            keys += match_line("brute", i, res.search);
            if (res.search.found() && is_truth(*res.search.match, val[i].entry)) {
                ++exact;
            } else {
                misses += fmt(" %zu", i);
            }
        }
        const double secs = since(t0);
        out.results.push_back({"AC1", exact == val.size() && secs < 300.0,
                               fmt("exact IV and key in %zu/%zu heaps, %.1f s (limit 300 s)%s%s", exact, val.size(),
                                   secs, misses.empty() ? "" : "; missed:", misses.c_str())});
    }

    // AC2 and AC3: ML path with a model from a disjoint 50-heap corpus
    {
        const auto train = entries_of(corpus(ml_train_seed, 50));
        const auto model = train_on_entries(train);
        save_model(model, dir / "ml-model.txt");
        out.artifacts.push_back("ml-model.txt");

        std::size_t found = 0, valid = 0, exact = 0;
        std::size_t heap_bytes = 0, selected = 0;
        std::vector<double> ratios;
        for (std::size_t i = 0; i < val.size(); ++i) {
            const auto &e = val[i].entry;
            const auto res = ml_extract(*val[i].packet, e.heap, model);
            keys += match_line("ml", i, res.search);
            heap_bytes += e.heap.size();
            selected += res.reduced_bytes;
            ratios.push_back(static_cast<double>(res.reduced_bytes) / static_cast<double>(e.heap.size()));
            if (!res.search.found()) { continue; }
            ++found;
            const auto &m = *res.search.match;
            valid += validate_probe(*val[i].packet, m.iv, m.key).valid;
            exact += is_truth(m, e);
        }
        out.results.push_back({"AC2", found >= 98 && valid == found,
                               fmt("validating pair in %zu/%zu heaps (need 98), %zu of them pass validate_probe, "
                                   "%zu equal the planted pair",
                                   found, val.size(), valid, exact)});

        std::sort(ratios.begin(), ratios.end());
        const double median = (ratios[49] + ratios[50]) / 2.0;
        const double total = static_cast<double>(selected) / static_cast<double>(heap_bytes);
        out.results.push_back({"AC3", total <= 0.10 && median <= 0.05,
                               fmt("selected bytes %.3f%% of heap bytes in total (limit 10%%), median %.3f%% "
                                   "(limit 5%%), max %.3f%%",
                                   100 * total, 100 * median, 100 * ratios.back())});
        std::string cover;
        for (double r : ratios) { cover += fmt("%.6f\n", r); }
        write_text(dir / "coverage.txt", cover);
        out.artifacts.push_back("coverage.txt");
    }

    // AC4: classifier metrics on held-out heaps of a 300-heap corpus
    {
        const auto all = corpus(metrics_seed, 300);
        std::size_t windows = 0, positives = 0;
        for (const auto &s : all) {
            for (const auto &w : extract_slices(s.entry.heap, entropy_mask(s.entry.heap), &s.entry.annotations)) {
                ++windows;
                positives += w.label;
            }
        }
        const double imbalance =
            positives ? static_cast<double>(windows - positives) / static_cast<double>(positives) : 0.0;

        const auto train = entries_of(all, 0, 225);
        const auto held = entries_of(all, 225);
        const auto t0 = clock_type::now();
        const auto model = train_on_entries(train);
        const double train_secs = since(t0);
        save_model(model, dir / "metrics-model.txt");
        out.artifacts.push_back("metrics-model.txt");

        const auto ev = evaluate_entries(held, model);
        write_text(dir / "metrics.csv", metrics_csv(ev.classifiers));
        write_text(dir / "metrics-retrieval.csv", retrieval_csv(ev.retrieval));
        out.artifacts.push_back("metrics.csv");
        out.artifacts.push_back("metrics-retrieval.csv");

        const auto hp = compute_metrics(ev.classifiers.of(slice_selector::high_precision));
        const auto hr = compute_metrics(ev.classifiers.of(slice_selector::high_recall));
        const auto st = compute_metrics(ev.classifiers.of(slice_selector::stacked));
        const double min_base_f1 = std::min(percent(hp.f1), percent(hr.f1));
        const bool pass = windows >= 100000 && imbalance >= 50 && imbalance <= 200 && percent(hr.recall) >= 95.0 &&
                          percent(hp.precision) >= 85.0 && percent(st.f1) > min_base_f1 && train_secs < 600.0;
        out.results.push_back(
            {"AC4", pass,
             fmt("%zu windows at stride 64, %.1f:1 negatives to positives; held-out high-recall recall %.2f%% "
                 "(need 95), high-precision precision %.2f%% (need 85), stacked F1 %.2f vs base min %.2f; "
                 "training %.1f s (limit 600 s)",
                 windows, imbalance, percent(hr.recall), percent(hp.precision), percent(st.f1), min_base_f1,
                 train_secs)});

        // AC5: retrieval per key length on the validation heaps
        const auto rep = retrieval_by_key_length(entries_of(val), model);
        write_text(dir / "retrieval.csv", retrieval_csv(rep));
        out.artifacts.push_back("retrieval.csv");
        bool ok = true;
        std::string detail = "high-recall retrieval:";
        for (std::size_t len : {16u, 24u, 32u}) {
            const auto it = rep.by_length.find(len);
            if (it == rep.by_length.end() || it->second.total == 0) {
                ok = false;
                detail += fmt(" %zu-byte none", len);
                continue;
            }
            const auto got = it->second.retrieved[classifier_report::index(slice_selector::high_recall)];
            const double frac = static_cast<double>(got) / static_cast<double>(it->second.total);
            ok = ok && frac >= 0.99;
            detail += fmt(" %zu-byte %zu/%zu (%.2f%%)", len, got, it->second.total, 100 * frac);
        }
        out.results.push_back({"AC5", ok, detail + " (need 99% each)"});
    }

    write_text(dir / "keys.txt", keys);
    out.artifacts.push_back("keys.txt");
    return out;
}

// AC6: fast entropy mask against the per-element reference
criterion mask_oracle() {
    const auto t0 = clock_type::now();
    rng r{6006};
    std::size_t mismatched = 0, rows = 0;
    for (int trial = 0; trial < 1000; ++trial) {
        const std::size_t n = 64 + r.below(64 * 1024 - 64 + 1);
        const heap_snapshot heap{test::mixed_bytes(r, n), 0};
        const auto fast = entropy_mask(heap);
        const auto ref = test::reference_mask(heap.bytes, mask_options{});
        rows += fast.size();
        if (std::vector<bool>(fast.z.begin(), fast.z.end()) != ref.z ||
            std::vector<bool>(fast.r.begin(), fast.r.end()) != ref.r) {
            ++mismatched;
        }
    }
    const double secs = since(t0);
    return {"AC6", mismatched == 0 && secs < 30.0,
            fmt("%zu of 1000 heaps differ in Z or R (%zu rows compared), %.1f s (limit 30 s)", mismatched, rows,
                secs)};
}

// AC7: ML path against page-filtered brute force, keys in the final quartile
criterion speedup(const fs::path &model_path) {
    corpus_spec spec;
    spec.seed = speed_seed;
    spec.heap_size = 264 * 1024;
    std::vector<synthetic_entry> syn;
    for (std::size_t i = 0; i < 6; ++i) {
        auto rec = corpus_recipe(spec, i);
        rec = random_recipe(rec.rng_seed, rec.heap_size, rec.cipher, rec.heap_size * 3 / 4);
        syn.push_back(generate_synthetic(rec));
    }
    std::vector<bench_case> cases;
    for (const auto &s : syn) { cases.push_back({s.stem, &s.entry.heap, &*s.packet}); }
    bench_options opt;
    opt.runs = 3;
    const auto records = benchmark(cases, model_path, {bench_method::brute_force, bench_method::ml}, opt);

    bool ok = true;
    double min_ratio = 1e300, max_ml = 0.0, brute_sum = 0.0, ml_sum = 0.0;
    for (std::size_t i = 0; i + 1 < records.size(); i += 2) {
        const auto &b = records[i], &m = records[i + 1];
        ok = ok && b.found && m.found;
        min_ratio = std::min(min_ratio, b.mean_seconds / m.mean_seconds);
        max_ml = std::max(max_ml, m.mean_seconds);
        brute_sum += b.mean_seconds;
        ml_sum += m.mean_seconds;
    }
    ok = ok && min_ratio >= 10.0 && max_ml < 1.0;
    return {"AC7", ok,
            fmt("%zu heaps of 264 KB: brute force mean %.3f s, ML mean %.4f s with model load; smallest per-heap "
                "speedup %.1fx (need 10x), slowest ML %.4f s (limit 1 s)",
                cases.size(), brute_sum / static_cast<double>(cases.size()), ml_sum / static_cast<double>(cases.size()),
                min_ratio, max_ml)};
}

// AC8: random wrong probes against a known packet
criterion false_accepts() {
    corpus_spec spec;
    spec.seed = validation_seed;
    const auto s = generate_synthetic(corpus_recipe(spec, 0));
    const auto &packet = *s.packet;
    const auto &cipher = lookup_cipher(packet.cipher_name);
    const auto *a = s.entry.find(key_role::A);
    const auto *c = s.entry.find(key_role::C);
    rng r{8008};
    byte_vector iv(cipher.iv_len), key(cipher.key_len);
    constexpr std::size_t probes = 1'000'000;
    std::size_t accepted = 0;
    for (std::size_t i = 0; i < probes; ++i) {
        r.fill(iv);
        r.fill(key);
        if (iv == a->value && key == c->value) { continue; }
        accepted += validate_probe(packet, iv, key).valid;
    }
    const double rate = static_cast<double>(accepted) / probes;
    return {"AC8", rate < 1e-3,
            fmt("%zu of %zu random %s probes accepted, rate %.2e (limit 1e-3)", accepted, probes,
                cipher.name.c_str(), rate)};
}

// AC9: a second run of criteria 1 to 5 reproduces every artifact
criterion determinism(const core_run &first, const fs::path &a, const fs::path &b) {
    const auto second = run_core(b);
    std::string differ;
    for (const auto &name : first.artifacts) {
        const auto x = read_text(a / name), y = read_text(b / name);
        if (x.empty() || x != y) { differ += " " + name; }
    }
    bool same_verdicts = true;
    for (std::size_t i = 0; i < first.results.size(); ++i) {
        same_verdicts = same_verdicts && first.results[i].pass == second.results[i].pass;
    }
    std::string names;
    for (const auto &n : first.artifacts) { names += (names.empty() ? "" : ", ") + n; }
    return {"AC9", differ.empty() && same_verdicts,
            differ.empty() ? fmt("rerun of AC1-AC5 reproduced %s byte for byte", names.c_str())
                           : "artifacts differ:" + differ};
}

void print(const criterion &c) {
    std::printf("%s %s: %s\n", c.id.c_str(), c.pass ? "PASS" : "FAIL", c.detail.c_str());
    std::fflush(stdout);
}

}  // namespace

int main(int argc, char **argv) {
    CLI::App app{"keyhunt acceptance run"};
    std::string work = (fs::temp_directory_path() / "keyhunt-acceptance").string();
    app.add_option("--work", work, "directory for models and reports")->capture_default_str();
    CLI11_PARSE(app, argc, argv);

    const fs::path root{work};
    fs::remove_all(root);
    std::printf("%s\n", hardware_header().c_str());

    std::vector<criterion> all;
    try {
        const auto first = run_core(root / "run1");
        for (const auto &c : first.results) {
            print(c);
            all.push_back(c);
        }
        for (auto c : {mask_oracle(), speedup(root / "run1" / "ml-model.txt"), false_accepts(),
                       determinism(first, root / "run1", root / "run2")}) {
            print(c);
            all.push_back(c);
        }
    } catch (const std::exception &e) {
        std::printf("acceptance aborted: %s\n", e.what());
        return 1;
    }
    const auto passed = std::count_if(all.begin(), all.end(), [](const auto &c) { return c.pass; });
    std::printf("acceptance: %zu/%zu passed\n", static_cast<std::size_t>(passed), all.size());
    return passed == static_cast<long>(all.size()) ? 0 : 1;
}
