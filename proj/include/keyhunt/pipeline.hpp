// pipeline.hpp
//
// The two extraction workflows end to end. Brute force: page filter, then
// the double loop over the surviving pages. ML: entropy mask, window
// scoring by a stacked model, then the double loop over the selected
// windows. Also the synthetic corpus layout and corpus -> training set.

#ifndef KEYHUNT_PIPELINE_HPP
#define KEYHUNT_PIPELINE_HPP

#include <chrono>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "bruteforce.hpp"
#include "core.hpp"
#include "dataset.hpp"
#include "forest.hpp"
#include "preprocess.hpp"
#include "validate.hpp"

namespace keyhunt {

// ---------------------------------------------------------------------------
// window scoring

/// which probability of the stacked model decides that a window is kept
enum class slice_selector { stacked, high_recall, high_precision };

inline const char *selector_name(slice_selector s) {
    switch (s) {
    case slice_selector::stacked:        return "stacked";
    case slice_selector::high_recall:    return "high-recall";
    case slice_selector::high_precision: return "high-precision";
    }
    return "stacked";
}

inline slice_selector parse_selector(std::string_view s) {
    for (auto v : {slice_selector::stacked, slice_selector::high_recall, slice_selector::high_precision}) {
        if (s == selector_name(v)) { return v; }
    }
    throw error{errc::invalid_argument, "unknown slice selector '" + std::string{s} + "'"};
}

inline double selected_probability(const stacked_probabilities &p, slice_selector s) {
    switch (s) {
    case slice_selector::stacked:        return p.stacked;
    case slice_selector::high_recall:    return p.high_recall;
    case slice_selector::high_precision: return p.high_precision;
    }
    return p.stacked;
}

struct scan_options {
    std::size_t window = slice_window;
    std::size_t stride = default_stride;
    mask_options mask;
    double decision_threshold = 0.5;
    /// the key search runs over windows kept by the high-recall forest
    slice_selector selector = slice_selector::high_recall;
};

struct scored_slice {
    slice_sample slice;
    stacked_probabilities p;
};

/// every mask-selected window of the heap with all three probabilities
inline std::vector<scored_slice> score_heap(const stacked_model &model, const heap_snapshot &heap,
                                            const scan_options &opt = {},
                                            const std::vector<key_annotation> *annotations = nullptr) {
    auto slices = extract_slices(heap, entropy_mask(heap, opt.mask), annotations, opt.window, opt.stride);
    std::vector<scored_slice> out;
    out.reserve(slices.size());
    for (auto &s : slices) {
        const auto p = model.predict_all(s.data);
        out.push_back({std::move(s), p});
    }
    return out;
}

/// windows whose selected probability reaches the decision threshold
inline std::vector<slice_sample> select_slices(const stacked_model &model, const heap_snapshot &heap,
                                               const scan_options &opt = {}) {
    auto slices = extract_slices(heap, entropy_mask(heap, opt.mask), nullptr, opt.window, opt.stride);
    std::vector<slice_sample> kept;
    for (auto &s : slices) {
        if (selected_probability(model.predict_all(s.data), opt.selector) >= opt.decision_threshold) {
            kept.push_back(std::move(s));
        }
    }
    return kept;
}

// ---------------------------------------------------------------------------
// extraction

struct extraction_result {
    search_result search;
    search_source source = search_source::full_heap;
    std::size_t reduced_bytes = 0;  // size of the searched space
    std::size_t slices = 0;         // ML path only
    double seconds = 0.0;           // whole path, preprocessing included
};

struct brute_options {
    std::size_t page_len = default_page_len;
    double page_threshold = default_page_threshold;
    search_options search;
};

/// page filter, then the double loop over the kept pages
inline extraction_result brute_extract(const validation_packet &packet, const heap_snapshot &heap,
                                       const brute_options &opt = {}) {
    const auto t0 = std::chrono::steady_clock::now();
    extraction_result out;
    out.source = search_source::page_filtered;
    const auto space =
        search_space::from_regions(page_filter(heap, opt.page_len, opt.page_threshold), search_source::page_filtered);
    out.reduced_bytes = space.bytes();
    out.search = find_iv_and_key(packet, space, heap, opt.search);
    out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
}

/// entropy mask, window selection, then the double loop over the windows
inline extraction_result ml_extract(const validation_packet &packet, const heap_snapshot &heap,
                                    const stacked_model &model, const scan_options &scan = {},
                                    const search_options &search = {}) {
    const auto t0 = std::chrono::steady_clock::now();
    extraction_result out;
    out.source = search_source::classifier_slices;
    const auto slices = select_slices(model, heap, scan);
    out.slices = slices.size();
    out.reduced_bytes = total_length(slices_to_regions(slices));
    out.search = find_in_slices(packet, slices, heap, search);
    out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return out;
}

// ---------------------------------------------------------------------------
// training corpora

struct corpus_options {
    std::size_t window = slice_window;
    /// training windows overlap more than scanning windows
    std::size_t stride = 16;
    mask_options mask;
};

/// appends the labeled mask-selected windows of one entry
inline void append_slices(sample_set &set, const dataset_entry &entry, const corpus_options &opt = {}) {
    const auto slices =
        extract_slices(entry.heap, entropy_mask(entry.heap, opt.mask), &entry.annotations, opt.window, opt.stride);
    for (const auto &s : slices) { set.add(s.data, s.label); }
}

struct training_options {
    corpus_options corpus;
    stacked_params stack;
};

template <typename Entries>
stacked_model train_on_entries(const Entries &entries, const training_options &opt = {}) {
    sample_set set{opt.corpus.window};
    for (const auto &e : entries) { append_slices(set, e, opt.corpus); }
    return train_stacked(set, opt.stack);
}

// ---------------------------------------------------------------------------
// synthetic corpora on disk

inline constexpr const char *synthetic_versions[] = {"V_7_1_P1", "V_7_8_P1", "V_7_9_P1", "V_8_0_P1", "V_8_1_P1"};

struct corpus_spec {
    std::size_t n = 10;
    std::uint64_t seed = 0;
    /// fixed cipher; otherwise entries cycle through aes128/192/256-ctr
    std::optional<std::string> cipher;
    /// fixed heap size; otherwise entries alternate 132 KB / 264 KB
    std::optional<std::size_t> heap_size;
    std::optional<scenario> scenario_kind;
    std::optional<std::string> version;
};

/// recipe of entry `index` of a corpus: keys anywhere in the heap
inline synthetic_recipe corpus_recipe(const corpus_spec &spec, std::size_t index) {
    static constexpr const char *ctr[] = {"aes128-ctr", "aes192-ctr", "aes256-ctr"};
    const cipher_spec &cipher = lookup_cipher(spec.cipher ? *spec.cipher : ctr[index % 3]);
    const std::size_t size = spec.heap_size ? *spec.heap_size : ((index / 3) % 2 ? 264 : 132) * 1024;
    auto rec = random_recipe(derive_seed(spec.seed, index), size, cipher);
    rec.ssh_version = spec.version ? *spec.version : synthetic_versions[(index / 6) % 5];
    rec.scenario_kind = spec.scenario_kind ? *spec.scenario_kind : scenario::basic_connect;
    return rec;
}

/// directory of an entry: <root>/<split>/<scenario>/<version>/<key_len>
inline fs::path entry_dir(const fs::path &root, split which, const synthetic_recipe &rec) {
    return root / split_name(which) / scenario_name(rec.scenario_kind) / rec.ssh_version /
           std::to_string(rec.cipher.key_len);
}

/// writes `spec.n` entries under <root>/<split> plus <root>/<split>-manifest.json
inline std::vector<fs::path> generate_corpus(const fs::path &root, split which, const corpus_spec &spec) {
    std::error_code ec;
    fs::create_directories(root, ec);
    if (ec) { throw error{errc::io, "cannot create " + root.string() + ": " + ec.message()}; }
    nlohmann::json manifest;
    manifest["split"] = split_name(which);
    manifest["seed"] = spec.seed;
    manifest["entries"] = nlohmann::json::array();
    std::vector<fs::path> written;
    for (std::size_t i = 0; i < spec.n; ++i) {
        const auto rec = corpus_recipe(spec, i);
        const auto s = generate_synthetic(rec);
        const fs::path dir = entry_dir(root, which, rec);
        write_synthetic(s, dir);
        const fs::path json = dir / (s.stem + ".json");
        written.push_back(json);
        manifest["entries"].push_back({{"json", fs::relative(json, root).generic_string()},
                                       {"cipher", rec.cipher.name},
                                       {"heap_size", rec.heap_size},
                                       {"seed", rec.rng_seed}});
    }
    const std::string text = manifest.dump(2) + "\n";
    write_file(root / (std::string{split_name(which)} + "-manifest.json"),
               byte_span{reinterpret_cast<const std::uint8_t *>(text.data()), text.size()});
    return written;
}

}  // namespace keyhunt

#endif  // KEYHUNT_PIPELINE_HPP
