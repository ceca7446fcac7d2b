#pragma once

#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "granet/core.hpp"
#include "granet/model.hpp"

namespace granet {

/// Line-based "key = value" configuration with dotted keys. '#' starts a
/// comment. Typed getters mark keys as consumed so that unknown keys can be
/// rejected after binding.
class ConfigMap {
public:
    static ConfigMap parse_string(const std::string& text, const std::string& origin = "<string>") {
        ConfigMap cm;
        std::istringstream in(text);
        std::string line;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            const std::string trimmed = trim(line);
            if (trimmed.empty()) continue;
            const auto eq = trimmed.find('=');
            if (eq == std::string::npos)
                throw ConfigError(origin + ":" + std::to_string(lineno) +
                                  ": expected 'key = value', got '" + trimmed + "'");
            const std::string key = trim(trimmed.substr(0, eq));
            const std::string value = trim(trimmed.substr(eq + 1));
            if (key.empty())
                throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
            if (cm.entries_.count(key))
                throw ConfigError(origin + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
            cm.entries_[key] = value;
        }
        return cm;
    }

    static ConfigMap parse_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw IoError("cannot open config file '" + path + "'");
        std::ostringstream ss;
        ss << in.rdbuf();
        return parse_string(ss.str(), path);
    }

    bool has(const std::string& key) const { return entries_.count(key) != 0; }

    std::string get_string(const std::string& key, const std::string& def) {
        auto it = entries_.find(key);
        if (it == entries_.end()) return def;
        consumed_.insert(key);
        return it->second;
    }

    long long get_int(const std::string& key, long long def) {
        auto it = entries_.find(key);
        if (it == entries_.end()) return def;
        consumed_.insert(key);
        try {
            std::size_t pos = 0;
            const long long v = std::stoll(it->second, &pos);
            if (pos != it->second.size()) throw std::invalid_argument("");
            return v;
        } catch (const std::exception&) {
            throw ConfigError("key '" + key + "': expected an integer, got '" + it->second + "'");
        }
    }

    double get_double(const std::string& key, double def) {
        auto it = entries_.find(key);
        if (it == entries_.end()) return def;
        consumed_.insert(key);
        try {
            std::size_t pos = 0;
            const double v = std::stod(it->second, &pos);
            if (pos != it->second.size()) throw std::invalid_argument("");
            return v;
        } catch (const std::exception&) {
            throw ConfigError("key '" + key + "': expected a number, got '" + it->second + "'");
        }
    }

    bool get_bool(const std::string& key, bool def) {
        auto it = entries_.find(key);
        if (it == entries_.end()) return def;
        consumed_.insert(key);
        if (it->second == "true" || it->second == "1") return true;
        if (it->second == "false" || it->second == "0") return false;
        throw ConfigError("key '" + key + "': expected true/false, got '" + it->second + "'");
    }

    std::vector<int> get_int_list(const std::string& key, std::vector<int> def) {
        auto it = entries_.find(key);
        if (it == entries_.end()) return def;
        consumed_.insert(key);
        std::vector<int> out;
        std::istringstream ss(it->second);
        std::string item;
        while (std::getline(ss, item, ',')) {
            item = trim(item);
            try {
                std::size_t pos = 0;
                out.push_back(static_cast<int>(std::stol(item, &pos)));
                if (pos != item.size()) throw std::invalid_argument("");
            } catch (const std::exception&) {
                throw ConfigError("key '" + key + "': expected a comma-separated integer list, got '" +
                                  it->second + "'");
            }
        }
        if (out.empty())
            throw ConfigError("key '" + key + "': empty list");
        return out;
    }

    /// Throws naming the first key that no getter consumed.
    void require_all_consumed() const {
        for (const auto& [key, value] : entries_)
            if (!consumed_.count(key))
                throw ConfigError("unknown config key '" + key + "'");
    }

private:
    static std::string trim(const std::string& s) {
        const auto b = s.find_first_not_of(" \t\r\n");
        if (b == std::string::npos) return "";
        const auto e = s.find_last_not_of(" \t\r\n");
        return s.substr(b, e - b + 1);
    }

    std::map<std::string, std::string> entries_;
    std::set<std::string> consumed_;
};

struct TrainSettings {
    double lr = 5e-4;
    double min_lr = 1e-4;
    double factor = 0.9;
    int patience = 3;
    int stop_patience = 5;
    int max_epochs = 100;
    long long max_steps = 0; // 0 = unlimited
    std::uint32_t seed = 1;
    bool augment = true;
};

struct DataSettings {
    int max_long_side = 512;
    std::string pair_suffix_strip; // regex stripped from rainy stems before pairing
};

struct RainSettings {
    int streaks_min = 40;
    int streaks_max = 120;
    double length_min = 8;
    double length_max = 28;
    double angle_mean_deg = 0;  // from vertical
    double angle_std_deg = 6;
    double width_min = 1.0;
    double width_max = 2.5;
    double intensity_min = 0.08;
    double intensity_max = 0.35;
    double mist_strength = 0.03;
    std::uint32_t seed = 1;

    void validate() const {
        if (streaks_min < 0 || streaks_max < streaks_min)
            throw ConfigError("rain.streaks range invalid");
        if (length_min <= 0 || length_max < length_min) throw ConfigError("rain.length range invalid");
        if (width_min <= 0 || width_max < width_min) throw ConfigError("rain.width range invalid");
        if (intensity_min < 0 || intensity_max < intensity_min || intensity_max > 1)
            throw ConfigError("rain.intensity range must lie in [0,1]");
        if (angle_std_deg < 0) throw ConfigError("rain.angle_std must be >= 0");
        if (mist_strength < 0) throw ConfigError("rain.mist_strength must be >= 0");
    }
};

struct ResolvedConfig {
    GraNetConfig model;
    TrainSettings train;
    DataSettings data;
    RainSettings rain;
};

inline ResolvedConfig bind_config(ConfigMap& cm) {
    ResolvedConfig rc;
    auto list3 = [&](const std::string& key, std::array<int, 3> def) {
        std::vector<int> v = cm.get_int_list(key, {def[0], def[1], def[2]});
        if (v.size() != 3)
            throw ConfigError("key '" + key + "': expected exactly 3 entries, got " +
                              std::to_string(v.size()));
        return std::array<int, 3>{v[0], v[1], v[2]};
    };
    rc.model.coarse_channels = list3("model.coarse_channels", rc.model.coarse_channels);
    rc.model.region_grids = list3("model.region_grids", rc.model.region_grids);
    rc.model.dense_layers = static_cast<int>(cm.get_int("model.dense_layers", rc.model.dense_layers));
    rc.model.dense_growth = static_cast<int>(cm.get_int("model.dense_growth", rc.model.dense_growth));
    rc.model.fine_channels = static_cast<int>(cm.get_int("model.fine_channels", rc.model.fine_channels));
    rc.model.fine_num_dense_blocks =
        static_cast<int>(cm.get_int("model.fine_num_dense_blocks", rc.model.fine_num_dense_blocks));
    rc.model.merge_k = static_cast<int>(cm.get_int("model.merge_k", rc.model.merge_k));
    rc.model.use_ra = cm.get_bool("model.use_ra", rc.model.use_ra);
    rc.model.use_fine = cm.get_bool("model.use_fine", rc.model.use_fine);
    rc.model.use_merge = cm.get_bool("model.use_merge", rc.model.use_merge);
    rc.model.fine_residual = cm.get_bool("model.fine_residual", rc.model.fine_residual);

    rc.train.lr = cm.get_double("train.lr", rc.train.lr);
    rc.train.min_lr = cm.get_double("train.min_lr", rc.train.min_lr);
    rc.train.factor = cm.get_double("train.factor", rc.train.factor);
    rc.train.patience = static_cast<int>(cm.get_int("train.patience", rc.train.patience));
    rc.train.stop_patience = static_cast<int>(cm.get_int("train.stop_patience", rc.train.stop_patience));
    rc.train.max_epochs = static_cast<int>(cm.get_int("train.max_epochs", rc.train.max_epochs));
    rc.train.max_steps = cm.get_int("train.max_steps", rc.train.max_steps);
    rc.train.seed = static_cast<std::uint32_t>(cm.get_int("train.seed", rc.train.seed));
    rc.train.augment = cm.get_bool("train.augment", rc.train.augment);

    rc.data.max_long_side = static_cast<int>(cm.get_int("data.max_long_side", rc.data.max_long_side));
    rc.data.pair_suffix_strip = cm.get_string("data.pair_suffix_strip", rc.data.pair_suffix_strip);

    rc.rain.streaks_min = static_cast<int>(cm.get_int("rain.streaks_min", rc.rain.streaks_min));
    rc.rain.streaks_max = static_cast<int>(cm.get_int("rain.streaks_max", rc.rain.streaks_max));
    rc.rain.length_min = cm.get_double("rain.length_min", rc.rain.length_min);
    rc.rain.length_max = cm.get_double("rain.length_max", rc.rain.length_max);
    rc.rain.angle_mean_deg = cm.get_double("rain.angle_mean", rc.rain.angle_mean_deg);
    rc.rain.angle_std_deg = cm.get_double("rain.angle_std", rc.rain.angle_std_deg);
    rc.rain.width_min = cm.get_double("rain.width_min", rc.rain.width_min);
    rc.rain.width_max = cm.get_double("rain.width_max", rc.rain.width_max);
    rc.rain.intensity_min = cm.get_double("rain.intensity_min", rc.rain.intensity_min);
    rc.rain.intensity_max = cm.get_double("rain.intensity_max", rc.rain.intensity_max);
    rc.rain.mist_strength = cm.get_double("rain.mist_strength", rc.rain.mist_strength);
    rc.rain.seed = static_cast<std::uint32_t>(cm.get_int("rain.seed", rc.rain.seed));

    cm.require_all_consumed();
    rc.model.validate();
    rc.rain.validate();
    if (rc.train.lr <= 0 || rc.train.min_lr <= 0 || rc.train.min_lr > rc.train.lr)
        throw ConfigError("train.lr/train.min_lr must satisfy 0 < min_lr <= lr");
    if (rc.train.factor <= 0 || rc.train.factor >= 1)
        throw ConfigError("train.factor must lie in (0,1)");
    return rc;
}

inline std::string fmt_num(double v) {
    std::ostringstream ss;
    ss << v;
    return ss.str();
}

/// Canonical sorted "key = value" rendering of the model section; its FNV
/// hash is the fingerprint that ties checkpoints to compatible configs.
inline std::string model_config_text(const GraNetConfig& m) {
    std::ostringstream ss;
    ss << "model.coarse_channels = " << m.coarse_channels[0] << "," << m.coarse_channels[1] << ","
       << m.coarse_channels[2] << "\n";
    ss << "model.dense_growth = " << m.dense_growth << "\n";
    ss << "model.dense_layers = " << m.dense_layers << "\n";
    ss << "model.fine_channels = " << m.fine_channels << "\n";
    ss << "model.fine_num_dense_blocks = " << m.fine_num_dense_blocks << "\n";
    ss << "model.fine_residual = " << (m.fine_residual ? "true" : "false") << "\n";
    ss << "model.merge_k = " << m.merge_k << "\n";
    ss << "model.region_grids = " << m.region_grids[0] << "," << m.region_grids[1] << ","
       << m.region_grids[2] << "\n";
    ss << "model.use_fine = " << (m.use_fine ? "true" : "false") << "\n";
    ss << "model.use_merge = " << (m.use_merge ? "true" : "false") << "\n";
    ss << "model.use_ra = " << (m.use_ra ? "true" : "false") << "\n";
    return ss.str();
}

inline std::string resolved_config_text(const ResolvedConfig& rc) {
    std::ostringstream ss;
    ss << "data.max_long_side = " << rc.data.max_long_side << "\n";
    ss << "data.pair_suffix_strip = " << rc.data.pair_suffix_strip << "\n";
    ss << model_config_text(rc.model);
    ss << "rain.angle_mean = " << fmt_num(rc.rain.angle_mean_deg) << "\n";
    ss << "rain.angle_std = " << fmt_num(rc.rain.angle_std_deg) << "\n";
    ss << "rain.intensity_max = " << fmt_num(rc.rain.intensity_max) << "\n";
    ss << "rain.intensity_min = " << fmt_num(rc.rain.intensity_min) << "\n";
    ss << "rain.length_max = " << fmt_num(rc.rain.length_max) << "\n";
    ss << "rain.length_min = " << fmt_num(rc.rain.length_min) << "\n";
    ss << "rain.mist_strength = " << fmt_num(rc.rain.mist_strength) << "\n";
    ss << "rain.seed = " << rc.rain.seed << "\n";
    ss << "rain.streaks_max = " << rc.rain.streaks_max << "\n";
    ss << "rain.streaks_min = " << rc.rain.streaks_min << "\n";
    ss << "rain.width_max = " << fmt_num(rc.rain.width_max) << "\n";
    ss << "rain.width_min = " << fmt_num(rc.rain.width_min) << "\n";
    ss << "train.augment = " << (rc.train.augment ? "true" : "false") << "\n";
    ss << "train.factor = " << fmt_num(rc.train.factor) << "\n";
    ss << "train.lr = " << fmt_num(rc.train.lr) << "\n";
    ss << "train.max_epochs = " << rc.train.max_epochs << "\n";
    ss << "train.max_steps = " << rc.train.max_steps << "\n";
    ss << "train.min_lr = " << fmt_num(rc.train.min_lr) << "\n";
    ss << "train.patience = " << rc.train.patience << "\n";
    ss << "train.seed = " << rc.train.seed << "\n";
    ss << "train.stop_patience = " << rc.train.stop_patience << "\n";
    return ss.str();
}

inline std::string config_fingerprint(const GraNetConfig& m) {
    const std::string text = model_config_text(m);
    return to_hex(fnv1a(text.data(), text.size()));
}

} // namespace granet
