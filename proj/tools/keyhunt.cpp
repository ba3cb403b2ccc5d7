// keyhunt: command-line front end
//
//   keyhunt generate   --out DIR [--n N] [--seed S] [--split training|validation] [--cipher C] [--heap-kb K]
//   keyhunt preprocess (--entry JSON | --heap RAW | --dataset DIR) [--out FILE]
//   keyhunt train      --dataset DIR --model FILE
//   keyhunt classify   --model FILE (--entry JSON | --heap RAW) [--out FILE]
//   keyhunt extract    (--entry JSON | --heap RAW --cipher C) [--pcap F | --ciphertext F] [--mode ml|brute|both]
//   keyhunt evaluate   --dataset DIR --model FILE [--out DIR]
//   keyhunt bench      --dataset DIR --model FILE [--n N] [--runs R] [--out DIR]
//
// Exit codes: 0 success, 2 usage or configuration error, 3 key not found,
// 4 data error.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include <keyhunt/keyhunt.hpp>

namespace fs = std::filesystem;
using namespace keyhunt;

namespace {

enum exit_code { ok = 0, usage = 2, not_found = 3, data = 4 };

struct run_config {
    std::string subcommand;
    std::string dataset;
    std::string split = "";
    std::optional<std::string> scenario_filter;
    std::optional<std::string> version_filter;
    std::optional<std::size_t> key_len;
    std::string model;
    std::string pcap_path;
    std::string ciphertext_path;
    std::string cipher;
    std::string entry;
    std::string heap;
    double page_threshold = default_page_threshold;
    double decision_threshold = 0.5;
    std::size_t window = slice_window;
    std::size_t stride = default_stride;
    std::size_t train_stride = 16;
    std::uint64_t seed = 0;
    unsigned workers = 1;
    std::string mode = "ml";
    std::vector<std::string> literal;
    std::string out;
    std::size_t n = 10;
    std::size_t runs = 5;
    std::string select = "high-recall";
    std::string oversampling = "byte-wrap";
    std::string dir = "client-to-server";
    std::optional<std::size_t> heap_kb;

    bool has_literal(const char *flag) const {
        return std::find(literal.begin(), literal.end(), flag) != literal.end();
    }

    mask_options mask() const {
        mask_options m;
        m.bitwise_and = has_literal("eq1-bitwise");
        m.printed_polarity = has_literal("eq2-printed");
        return m;
    }

    search_options search() const {
        search_options s;
        s.literal_outer_advance = has_literal("alg1-literal");
        s.workers = workers;
        return s;
    }

    scan_options scan() const {
        scan_options s;
        s.window = window;
        s.stride = stride;
        s.mask = mask();
        s.decision_threshold = decision_threshold;
        s.selector = parse_selector(select);
        return s;
    }

    direction packet_direction() const {
        return dir == "server-to-client" ? direction::server_to_client : direction::client_to_server;
    }
};

class usage_error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

int exit_for(errc e) {
    switch (e) {
    case errc::invalid_argument:
    case errc::unknown_cipher:
    case errc::unsupported_cipher:
    case errc::empty_selection:
        return usage;
    default:
        return data;
    }
}

void write_text(const fs::path &path, const std::string &text) {
    write_file(path, byte_span{reinterpret_cast<const std::uint8_t *>(text.data()), text.size()});
}

/// prints to stdout, or writes to --out when given
void emit(const run_config &cfg, const std::string &text) {
    if (cfg.out.empty()) {
        std::fputs(text.c_str(), stdout);
    } else {
        write_text(cfg.out, text);
    }
}

split parse_split(const std::string &s, split fallback) {
    if (s.empty()) { return fallback; }
    if (s == "training") { return split::training; }
    if (s == "validation") { return split::validation; }
    throw usage_error{"--split must be training or validation"};
}

std::vector<dataset_entry> load_selection(const run_config &cfg, split fallback) {
    if (cfg.dataset.empty()) { throw usage_error{"--dataset is required"}; }
    walk_filters f;
    f.scenario = cfg.scenario_filter;
    f.version = cfg.version_filter;
    f.key_len = cfg.key_len;
    auto walker = walk_dataset(cfg.dataset, parse_split(cfg.split, fallback), f);
    std::vector<dataset_entry> out;
    while (auto e = walker.next()) { out.push_back(std::move(*e)); }
    if (out.empty()) { throw error{errc::empty_selection, "no readable entries in the selection"}; }
    return out;
}

/// the heap named by --entry (with annotations) or --heap (bare, base 0)
dataset_entry load_single(const run_config &cfg) {
    if (!cfg.entry.empty()) { return load_entry(cfg.entry); }
    if (!cfg.heap.empty()) {
        dataset_entry e;
        e.heap = heap_snapshot{read_file(cfg.heap), 0, {}, scenario::basic_connect, cfg.heap};
        e.heap_path = cfg.heap;
        return e;
    }
    throw usage_error{"one of --entry or --heap is required"};
}

stacked_model require_model(const run_config &cfg) {
    if (cfg.model.empty()) { throw usage_error{"--model is required"}; }
    if (!fs::exists(cfg.model)) { throw usage_error{"model file " + cfg.model + " does not exist"}; }
    return load_model(cfg.model);
}

// ---------------------------------------------------------------------------

int cmd_generate(const run_config &cfg) {
    if (cfg.out.empty()) { throw usage_error{"--out is required"}; }
    corpus_spec spec;
    spec.n = cfg.n;
    spec.seed = cfg.seed;
    if (!cfg.cipher.empty()) { spec.cipher = lookup_cipher(cfg.cipher).name; }
    if (cfg.key_len && cfg.cipher.empty()) { spec.cipher = ctr_cipher_for_key_len(*cfg.key_len).name; }
    if (cfg.heap_kb) { spec.heap_size = *cfg.heap_kb * 1024; }
    if (cfg.scenario_filter) { spec.scenario_kind = parse_scenario(*cfg.scenario_filter); }
    spec.version = cfg.version_filter;
    const auto written = generate_corpus(cfg.out, parse_split(cfg.split, split::training), spec);
    std::printf("generated %zu entries under %s\n", written.size(), cfg.out.c_str());
    return ok;
}

int cmd_preprocess(const run_config &cfg) {
    std::vector<dataset_entry> entries;
    if (!cfg.dataset.empty()) {
        entries = load_selection(cfg, split::validation);
    } else {
        entries.push_back(load_single(cfg));
    }
    std::string text = "heap,bytes,page_filtered_bytes,marked_rows,slices\n";
    for (const auto &e : entries) {
        const auto kept = total_length(page_filter(e.heap, default_page_len, cfg.page_threshold));
        const auto marks = entropy_mask(e.heap, cfg.mask());
        std::size_t marked = 0;
        for (auto v : marks.r) { marked += v; }
        const auto slices = extract_slices(e.heap, marks, nullptr, cfg.window, cfg.stride);
        text += fs::path{e.heap_path}.filename().string() + ',' + std::to_string(e.heap.size()) + ',' +
                std::to_string(kept) + ',' + std::to_string(marked) + ',' + std::to_string(slices.size()) + '\n';
    }
    emit(cfg, text);
    return ok;
}

int cmd_train(const run_config &cfg) {
    if (cfg.model.empty()) { throw usage_error{"--model (output path) is required"}; }
    const auto entries = load_selection(cfg, split::training);
    training_options opt;
    opt.corpus.window = cfg.window;
    opt.corpus.stride = cfg.train_stride;
    opt.corpus.mask = cfg.mask();
    opt.stack.seed = cfg.seed;
    opt.stack.workers = cfg.workers;
    opt.stack.decision_threshold = cfg.decision_threshold;
    opt.stack.oversampling = parse_smote_arithmetic(cfg.oversampling);

    sample_set set{opt.corpus.window};
    for (const auto &e : entries) { append_slices(set, e, opt.corpus); }
    const std::size_t pos = set.positives();
    log(log_level::info, "training on " + std::to_string(set.size()) + " windows (" + std::to_string(pos) + " positive)");
    const auto model = train_stacked(set, opt.stack);
    save_model(model, cfg.model);
    std::printf("entries %zu\nwindows %zu\npositives %zu\nmodel %s\n", entries.size(), set.size(), pos,
                cfg.model.c_str());
    return ok;
}

int cmd_classify(const run_config &cfg) {
    const auto model = require_model(cfg);
    const auto e = load_single(cfg);
    std::string text;
    for (const auto &s : select_slices(model, e.heap, cfg.scan())) { text += std::to_string(s.offset) + '\n'; }
    emit(cfg, text);
    return ok;
}

int cmd_extract(const run_config &cfg) {
    if (cfg.mode != "ml" && cfg.mode != "brute" && cfg.mode != "both") {
        throw usage_error{"--mode must be ml, brute or both"};
    }
    std::optional<stacked_model> model;
    if (cfg.mode != "brute") { model = require_model(cfg); }
    const auto e = load_single(cfg);

    std::string cipher = cfg.cipher;
    if (cipher.empty() && !e.annotations.empty()) {
        const auto *d = e.find(key_role::D);
        cipher = cfg.packet_direction() == direction::server_to_client && d ? d->cipher_name : e.cipher_name();
    }
    if (cipher.empty()) { throw usage_error{"--cipher is required when no JSON log is given"}; }

    std::optional<validation_packet> packet;
    if (!cfg.pcap_path.empty()) {
        packet = pcap::extract_first_encrypted_packet(cfg.pcap_path, cipher, cfg.packet_direction());
    } else if (!cfg.ciphertext_path.empty()) {
        packet = load_raw_ciphertext(cfg.ciphertext_path, cipher, cfg.packet_direction());
    } else if (!cfg.entry.empty()) {
        packet = sibling_packet(e, cfg.packet_direction());
    }
    if (!packet) { throw usage_error{"no packet: pass --pcap or --ciphertext"}; }
    packet->cipher_name = lookup_cipher(cipher).name;

    bool all_found = true;
    auto report = [&](const char *method, const extraction_result &r) {
        std::printf("method %s\nsearch_bytes %zu\n", method, r.reduced_bytes);
        if (r.search.found()) {
            const auto &m = *r.search.match;
            std::printf("iv_offset %zu\nkey_offset %zu\niv %s\nkey %s\n", m.iv_offset, m.key_offset,
                        to_hex(m.iv).c_str(), to_hex(m.key).c_str());
        } else {
            std::printf("result not-found\n");
            all_found = false;
        }
        std::printf("probes %llu\n", static_cast<unsigned long long>(r.search.probes_tried));
        std::printf("elapsed_s %.6f\n", r.seconds);
    };
    if (cfg.mode != "brute") {
        report("ml", ml_extract(*packet, e.heap, *model, cfg.scan(), cfg.search()));
    }
    if (cfg.mode != "ml") {
        brute_options b;
        b.page_threshold = cfg.page_threshold;
        b.search = cfg.search();
        report("brute", brute_extract(*packet, e.heap, b));
    }
    return all_found ? ok : not_found;
}

int cmd_evaluate(const run_config &cfg) {
    const auto model = require_model(cfg);
    const auto entries = load_selection(cfg, split::validation);
    const auto ev = evaluate_entries(entries, model, cfg.scan());
    char cover[128];
    std::snprintf(cover, sizeof cover, "# entries %zu, heap bytes %zu, selected bytes %zu (%s)\n", ev.entries,
                  ev.heap_bytes, ev.selected_bytes, selector_name(cfg.scan().selector));
    const std::string text = metrics_table(ev.classifiers) + "\n" + retrieval_table(ev.retrieval) + cover;
    std::fputs(text.c_str(), stdout);
    if (!cfg.out.empty()) {
        fs::create_directories(cfg.out);
        write_text(fs::path{cfg.out} / "report.txt", text);
        write_text(fs::path{cfg.out} / "metrics.csv", metrics_csv(ev.classifiers));
        write_text(fs::path{cfg.out} / "retrieval.csv", retrieval_csv(ev.retrieval));
    }
    return ok;
}

int cmd_bench(const run_config &cfg) {
    require_model(cfg);
    auto entries = load_selection(cfg, split::validation);
    std::vector<validation_packet> packets;
    std::vector<const dataset_entry *> usable;
    for (const auto &e : entries) {
        if (usable.size() == cfg.n) { break; }
        if (!lookup_cipher(e.cipher_name()).validatable) { continue; }
        if (auto p = sibling_packet(e, cfg.packet_direction())) {
            packets.push_back(std::move(*p));
            usable.push_back(&e);
        }
    }
    if (usable.empty()) { throw error{errc::empty_selection, "no entries with a validatable packet"}; }
    std::vector<bench_case> cases;
    for (std::size_t i = 0; i < usable.size(); ++i) {
        cases.push_back({fs::path{usable[i]->json_path}.stem().string(), &usable[i]->heap, &packets[i]});
    }
    bench_options opt;
    opt.runs = cfg.runs;
    opt.brute.page_threshold = cfg.page_threshold;
    opt.brute.search = cfg.search();
    opt.scan = cfg.scan();
    opt.search = cfg.search();
    const auto records = benchmark(cases, cfg.model, {bench_method::brute_force, bench_method::ml}, opt);
    const std::string header = hardware_header() + "\n";
    std::fputs((header + bench_table(records)).c_str(), stdout);
    if (!cfg.out.empty()) {
        fs::create_directories(cfg.out);
        write_text(fs::path{cfg.out} / "bench.txt", header + bench_table(records));
        write_text(fs::path{cfg.out} / "bench.csv", header + bench_csv(records));
    }
    return ok;
}

}  // namespace

int main(int argc, char **argv) {
    CLI::App app{"keyhunt: SSH session key extraction from heap dumps"};
    app.require_subcommand(1);
    app.fallthrough();
    run_config cfg;

    app.add_option("--dataset", cfg.dataset, "dataset root (<root>/<split>/<scenario>/<version>/<key_len>)");
    app.add_option("--split", cfg.split, "training | validation")->check(CLI::IsMember({"training", "validation"}));
    app.add_option("--scenario", cfg.scenario_filter, "scenario directory filter");
    app.add_option("--version", cfg.version_filter, "OpenSSH version directory filter");
    app.add_option("--key-len", cfg.key_len, "key length directory filter");
    app.add_option("--model", cfg.model, "model file");
    app.add_option("--pcap", cfg.pcap_path, "capture holding the first encrypted packet");
    app.add_option("--ciphertext", cfg.ciphertext_path, "raw ciphertext of one packet");
    app.add_option("--cipher", cfg.cipher, "cipher name, required without a JSON log");
    app.add_option("--entry", cfg.entry, "JSON key log of one heap");
    app.add_option("--heap", cfg.heap, "raw heap file");
    app.add_option("--page-threshold", cfg.page_threshold, "page filter cut, fraction of 8 bits")->capture_default_str();
    app.add_option("--decision-threshold", cfg.decision_threshold, "probability cut for windows")->capture_default_str();
    app.add_option("--window", cfg.window, "window bytes")->capture_default_str();
    app.add_option("--stride", cfg.stride, "window stride when scanning")->capture_default_str();
    app.add_option("--train-stride", cfg.train_stride, "window stride when building training data")
        ->capture_default_str();
    app.add_option("--seed", cfg.seed, "seed for every randomized step")->capture_default_str();
    app.add_option("--workers", cfg.workers, "worker threads")->capture_default_str()->check(CLI::PositiveNumber);
    app.add_option("--mode", cfg.mode, "ml | brute | both")
        ->check(CLI::IsMember({"ml", "brute", "both"}))
        ->capture_default_str();
    app.add_option("--paper-literal", cfg.literal, "literal variants: eq1-bitwise, eq2-printed, alg1-literal")
        ->check(CLI::IsMember({"eq1-bitwise", "eq2-printed", "alg1-literal"}))
        ->delimiter(',');
    app.add_option("--out", cfg.out, "output file or directory");
    app.add_option("--n", cfg.n, "entries to generate or benchmark")->capture_default_str();
    app.add_option("--runs", cfg.runs, "timed runs per benchmark")->capture_default_str();
    app.add_option("--select", cfg.select, "window selector: high-recall | stacked | high-precision")
        ->check(CLI::IsMember({"high-recall", "stacked", "high-precision"}))
        ->capture_default_str();
    app.add_option("--oversampling", cfg.oversampling, "SMOTE arithmetic: byte-wrap | interpolate")
        ->check(CLI::IsMember({"byte-wrap", "interpolate"}))
        ->capture_default_str();
    app.add_option("--direction", cfg.dir, "client-to-server (keys A/C) | server-to-client (keys B/D)")
        ->check(CLI::IsMember({"client-to-server", "server-to-client"}))
        ->capture_default_str();
    app.add_option("--heap-kb", cfg.heap_kb, "fixed heap size for generate");

    for (const char *name : {"generate", "preprocess", "train", "classify", "extract", "evaluate", "bench"}) {
        app.add_subcommand(name)->callback([&cfg, name] { cfg.subcommand = name; });
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        const int rc = app.exit(e);
        return rc == 0 ? ok : usage;
    }

    try {
        if (cfg.subcommand == "generate") { return cmd_generate(cfg); }
        if (cfg.subcommand == "preprocess") { return cmd_preprocess(cfg); }
        if (cfg.subcommand == "train") { return cmd_train(cfg); }
        if (cfg.subcommand == "classify") { return cmd_classify(cfg); }
        if (cfg.subcommand == "extract") { return cmd_extract(cfg); }
        if (cfg.subcommand == "evaluate") { return cmd_evaluate(cfg); }
        if (cfg.subcommand == "bench") { return cmd_bench(cfg); }
    } catch (const usage_error &e) {
        std::fprintf(stderr, "keyhunt: %s\n", e.what());
        return usage;
    } catch (const error &e) {
        std::fprintf(stderr, "keyhunt: %s\n", e.what());
        return exit_for(e.code());
    } catch (const std::exception &e) {
        std::fprintf(stderr, "keyhunt: %s\n", e.what());
        return data;
    }
    return usage;
}
