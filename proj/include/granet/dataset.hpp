#pragma once

#include <algorithm>
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <regex>
#include <string>
#include <vector>

#include "granet/image.hpp"

namespace granet {

struct DatasetPair {
    std::string id; // shared filename stem
    std::filesystem::path rainy;
    std::filesystem::path clean;
};

struct ScanResult {
    std::vector<DatasetPair> pairs;
    std::vector<std::string> warnings; // orphans, rejected pairs
};

/// Pair rainy/clean PNGs by filename stem (after optionally stripping a
/// regex suffix from the rainy stem). Pairs whose images differ in size are
/// rejected with a warning; unmatched files are reported. Ordering is
/// lexicographic by pair id.
inline ScanResult scan_dataset(const std::filesystem::path& rainy_dir,
                               const std::filesystem::path& clean_dir,
                               const std::string& suffix_strip_regex = "") {
    namespace fs = std::filesystem;
    if (!fs::is_directory(rainy_dir))
        throw IoError("rainy directory '" + rainy_dir.string() + "' does not exist");
    if (!fs::is_directory(clean_dir))
        throw IoError("clean directory '" + clean_dir.string() + "' does not exist");

    auto list_pngs = [](const fs::path& dir) {
        std::vector<fs::path> out;
        for (const auto& e : fs::directory_iterator(dir))
            if (e.is_regular_file() && e.path().extension() == ".png") out.push_back(e.path());
        std::sort(out.begin(), out.end());
        return out;
    };

    std::optional<std::regex> strip;
    if (!suffix_strip_regex.empty()) {
        try {
            strip.emplace(suffix_strip_regex);
        } catch (const std::regex_error& e) {
            throw ConfigError("invalid pair_suffix_strip regex '" + suffix_strip_regex +
                              "': " + e.what());
        }
    }

    std::map<std::string, fs::path> clean_by_stem;
    for (const auto& p : list_pngs(clean_dir)) clean_by_stem[p.stem().string()] = p;

    ScanResult res;
    std::set<std::string> matched_clean;
    for (const auto& p : list_pngs(rainy_dir)) {
        std::string stem = p.stem().string();
        if (strip) stem = std::regex_replace(stem, *strip, "");
        auto it = clean_by_stem.find(stem);
        if (it == clean_by_stem.end()) {
            res.warnings.push_back("unpaired rainy image: " + p.filename().string());
            continue;
        }
        matched_clean.insert(stem);
        const auto [rh, rw] = png_dimensions(p.string());
        const auto [ch, cw] = png_dimensions(it->second.string());
        if (rh != ch || rw != cw) {
            res.warnings.push_back("pair '" + stem + "' rejected: rainy is " + std::to_string(rh) +
                                   "x" + std::to_string(rw) + " but clean is " + std::to_string(ch) +
                                   "x" + std::to_string(cw));
            continue;
        }
        res.pairs.push_back({stem, p, it->second});
    }
    for (const auto& [stem, path] : clean_by_stem)
        if (!matched_clean.count(stem))
            res.warnings.push_back("unpaired clean image: " + path.filename().string());

    std::sort(res.pairs.begin(), res.pairs.end(),
              [](const DatasetPair& a, const DatasetPair& b) { return a.id < b.id; });
    return res;
}

/// In-memory pair, already decoded and long-side constrained.
struct LoadedPair {
    std::string id;
    ImageF32 rainy;
    ImageF32 clean;
};

inline std::vector<LoadedPair> load_pairs(const std::vector<DatasetPair>& pairs, int max_long_side) {
    std::vector<LoadedPair> out;
    out.reserve(pairs.size());
    for (const auto& p : pairs) {
        LoadedPair lp;
        lp.id = p.id;
        lp.rainy = resize_long_side(to_f32(load_image(p.rainy.string())), max_long_side);
        lp.clean = resize_long_side(to_f32(load_image(p.clean.string())), max_long_side);
        out.push_back(std::move(lp));
    }
    return out;
}

} // namespace granet
