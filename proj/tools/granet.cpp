// Command-line front end: data synthesis, training, inference, evaluation
// and the gradient-check verification suite.
//
// Exit codes: 0 success, 1 runtime/numeric failure, 2 usage/config error.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "granet/config.hpp"
#include "granet/dataset.hpp"
#include "granet/gradsuite.hpp"
#include "granet/rain.hpp"
#include "granet/train.hpp"

namespace fs = std::filesystem;
using namespace granet;

namespace {

struct CommonOpts {
    std::string config_path;
    long long seed = -1; // -1 = keep config value
    bool no_ra = false, no_fine = false, no_merge = false;
};

ResolvedConfig resolve(const CommonOpts& opts, bool seed_is_rain = false) {
    ConfigMap cm = opts.config_path.empty() ? ConfigMap::parse_string("")
                                            : ConfigMap::parse_file(opts.config_path);
    ResolvedConfig rc = bind_config(cm);
    if (opts.no_ra) rc.model.use_ra = false;
    if (opts.no_fine) rc.model.use_fine = false;
    if (opts.no_merge) rc.model.use_merge = false;
    if (opts.seed >= 0) {
        if (seed_is_rain)
            rc.rain.seed = static_cast<std::uint32_t>(opts.seed);
        else
            rc.train.seed = static_cast<std::uint32_t>(opts.seed);
    }
    rc.model.validate();
    return rc;
}

void print_resolved(const ResolvedConfig& rc, std::uint32_t seed) {
    std::cout << "resolved configuration:\n" << resolved_config_text(rc);
    std::cout << "seed = " << seed << "\n";
}

std::vector<fs::path> list_pngs(const fs::path& dir) {
    std::vector<fs::path> out;
    for (const auto& e : fs::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".png") out.push_back(e.path());
    std::sort(out.begin(), out.end());
    return out;
}

int cmd_synth(const CommonOpts& common, const std::string& clean_dir, const std::string& out_dir,
              int count) {
    if (!fs::is_directory(clean_dir)) {
        std::cerr << "error: clean directory '" << clean_dir << "' does not exist\n";
        return 2;
    }
    ResolvedConfig rc = resolve(common, /*seed_is_rain=*/true);
    print_resolved(rc, rc.rain.seed);

    const auto cleans = list_pngs(clean_dir);
    if (count > 0 && cleans.empty()) {
        std::cerr << "error: no .png files in clean directory '" << clean_dir << "'\n";
        return 2;
    }
    fs::create_directories(fs::path(out_dir) / "rainy");
    fs::create_directories(fs::path(out_dir) / "clean");
    fs::create_directories(fs::path(out_dir) / "mask");

    std::ofstream manifest(fs::path(out_dir) / "manifest.txt");
    if (!manifest) throw IoError("cannot write manifest in '" + out_dir + "'");
    for (int i = 0; i < count; ++i) {
        const auto& src = cleans[static_cast<std::size_t>(i) % cleans.size()];
        ImageF32 clean = to_f32(load_image(src.string()));
        std::mt19937 rng(rc.rain.seed + 0x9e3779b9u * static_cast<std::uint32_t>(i));
        RainResult rr = synth_rain(clean, rc.rain, rng);
        char name[32];
        std::snprintf(name, sizeof name, "pair_%04d.png", i);
        save_image((fs::path(out_dir) / "rainy" / name).string(), rr.rainy);
        save_image((fs::path(out_dir) / "clean" / name).string(), clean);
        save_image((fs::path(out_dir) / "mask" / name).string(), rr.mask);
        manifest << name << " rainy/" << name << " clean/" << name << " mask/" << name << "\n";
    }
    std::cout << "wrote " << count << " pairs to " << out_dir << "\n";
    return 0;
}

std::vector<LoadedPair> load_split(const fs::path& dir, const ResolvedConfig& rc) {
    ScanResult sr = scan_dataset(dir / "rainy", dir / "clean", rc.data.pair_suffix_strip);
    for (const auto& w : sr.warnings) std::cerr << "warning: " << w << "\n";
    return load_pairs(sr.pairs, rc.data.max_long_side);
}

int cmd_train(const CommonOpts& common, const std::string& train_dir, const std::string& val_dir,
              const std::string& out_path, const std::string& resume_path,
              const std::string& csv_path, const std::string& out_last_path, int max_epochs_flag) {
    for (const auto& d : {train_dir, val_dir})
        if (!fs::is_directory(fs::path(d) / "rainy") || !fs::is_directory(fs::path(d) / "clean")) {
            std::cerr << "error: '" << d << "' must contain rainy/ and clean/ subdirectories\n";
            return 2;
        }
    ResolvedConfig rc = resolve(common);
    if (max_epochs_flag > 0) rc.train.max_epochs = max_epochs_flag;
    print_resolved(rc, rc.train.seed);

    const auto train_set = load_split(train_dir, rc);
    const auto val_set = load_split(val_dir, rc);
    if (train_set.empty() || val_set.empty()) {
        std::cerr << "error: empty training or validation set\n";
        return 2;
    }

    Checkpoint resume;
    const Checkpoint* resume_ptr = nullptr;
    if (!resume_path.empty()) {
        resume = load_checkpoint(resume_path);
        if (resume.fingerprint != config_fingerprint(rc.model)) {
            std::cerr << "error: checkpoint '" << resume_path
                      << "' was trained with a different model config (fingerprint "
                      << resume.fingerprint << " vs " << config_fingerprint(rc.model) << ")\n";
            return 2;
        }
        resume_ptr = &resume;
    }

    const std::string csv = csv_path.empty() ? out_path + ".csv" : csv_path;
    TrainResult res =
        train(rc.model, rc.train, rc, train_set, val_set, resume_ptr, &std::cout, csv);
    save_checkpoint(res.best_checkpoint, out_path);
    if (!out_last_path.empty()) save_checkpoint(res.final_checkpoint, out_last_path);
    std::cout << "best epoch " << res.best_epoch << " val_psnr " << res.best_val_psnr
              << "; checkpoint written to " << out_path << "\n";
    return 0;
}

ImageF32 normalize_signed(const ImageF32& img) {
    float lo = img.data.empty() ? 0.f : img.data[0];
    float hi = lo;
    for (float v : img.data) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    ImageF32 out = img;
    if (hi > lo)
        for (auto& v : out.data) v = (v - lo) / (hi - lo);
    else
        for (auto& v : out.data) v = 0.5f;
    return out;
}

int cmd_infer(const std::string& ckpt_path, const std::string& input_path,
              const std::string& out_dir, bool dump_intermediates,
              const std::string& cross_config) {
    if (!fs::exists(ckpt_path)) {
        std::cerr << "error: checkpoint '" << ckpt_path << "' does not exist\n";
        return 2;
    }
    if (!fs::exists(input_path)) {
        std::cerr << "error: input '" << input_path << "' does not exist\n";
        return 2;
    }
    Checkpoint ck = load_checkpoint(ckpt_path);
    ConfigMap cm = ConfigMap::parse_string(ck.config_text, ckpt_path + ":embedded-config");
    ResolvedConfig rc = bind_config(cm);
    if (!cross_config.empty()) {
        ConfigMap cm2 = ConfigMap::parse_file(cross_config);
        ResolvedConfig rc2 = bind_config(cm2);
        if (config_fingerprint(rc2.model) != ck.fingerprint) {
            std::cerr << "error: --config does not match the checkpoint (fingerprint "
                      << config_fingerprint(rc2.model) << " vs " << ck.fingerprint << ")\n";
            return 2;
        }
    }
    print_resolved(rc, rc.train.seed);
    WeightStore<float> ws = restore_weights(rc.model, ck);

    std::vector<fs::path> inputs;
    if (fs::is_directory(input_path))
        inputs = list_pngs(input_path);
    else
        inputs.push_back(input_path);
    if (inputs.empty()) {
        std::cerr << "error: no .png inputs under '" << input_path << "'\n";
        return 2;
    }
    fs::create_directories(out_dir);

    for (const auto& in : inputs) {
        ImageF32 img = to_f32(load_image(in.string()));
        Graph<float> g(false);
        ForwardOutputs<float> out = granet_forward(g, to_tensor(img), rc.model, ws);
        const std::string stem = in.stem().string();
        save_image((fs::path(out_dir) / (stem + "_final.png")).string(), from_tensor(out.final_out));
        if (dump_intermediates) {
            // signed mask is affine-mapped to [0,1] for viewing
            save_image((fs::path(out_dir) / (stem + "_mask.png")).string(),
                       normalize_signed(from_tensor(out.mask)));
            save_image((fs::path(out_dir) / (stem + "_coarse.png")).string(),
                       from_tensor(out.coarse));
        }
        std::cout << in.filename().string() << " -> " << stem << "_final.png\n";
    }
    return 0;
}

double quantile(std::vector<double> v, double q) {
    std::sort(v.begin(), v.end());
    const double pos = q * (static_cast<double>(v.size()) - 1);
    const std::size_t lo = static_cast<std::size_t>(pos);
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return v[lo] * (1 - frac) + v[hi] * frac;
}

void print_summary(const std::string& label, const std::vector<double>& values, int inf_count) {
    std::vector<double> finite;
    for (double v : values)
        if (std::isfinite(v)) finite.push_back(v);
    std::cout << label << ": n=" << values.size();
    if (inf_count > 0) std::cout << " (" << inf_count << " identical pairs excluded from mean as +inf)";
    if (finite.empty()) {
        std::cout << "\n";
        return;
    }
    double mean = 0;
    for (double v : finite) mean += v;
    mean /= static_cast<double>(finite.size());
    std::cout << " mean=" << mean << " min=" << quantile(finite, 0.0) << " q1=" << quantile(finite, 0.25)
              << " median=" << quantile(finite, 0.5) << " q3=" << quantile(finite, 0.75)
              << " max=" << quantile(finite, 1.0) << "\n";
}

int cmd_eval(const std::string& pred_dir, const std::string& gt_dir) {
    if (!fs::is_directory(pred_dir) || !fs::is_directory(gt_dir)) {
        std::cerr << "error: --pred-dir and --gt-dir must be existing directories\n";
        return 2;
    }
    std::map<std::string, fs::path> gt;
    for (const auto& p : list_pngs(gt_dir)) gt[p.filename().string()] = p;
    std::vector<std::pair<fs::path, fs::path>> pairs;
    for (const auto& p : list_pngs(pred_dir)) {
        auto it = gt.find(p.filename().string());
        if (it == gt.end())
            std::cerr << "warning: no ground truth for " << p.filename().string() << "\n";
        else
            pairs.emplace_back(p, it->second);
    }
    if (pairs.empty()) {
        std::cerr << "error: prediction and ground-truth directories share no filenames\n";
        return 2;
    }

    std::vector<double> psnrs, ssims;
    int inf_count = 0;
    for (const auto& [pp, gp] : pairs) {
        const ImageF32 pred = to_f32(load_image(pp.string()));
        const ImageF32 ref = to_f32(load_image(gp.string()));
        if (pred.h != ref.h || pred.w != ref.w) {
            std::cerr << "warning: size mismatch for " << pp.filename().string() << ", skipped\n";
            continue;
        }
        const LumaPlane a = rgb_to_luminance(pred), b = rgb_to_luminance(ref);
        const double p = psnr(a, b);
        const double s = (pred.h >= 11 && pred.w >= 11) ? ssim(a, b) : 1.0;
        if (!std::isfinite(p)) ++inf_count;
        psnrs.push_back(p);
        ssims.push_back(s);
        std::cout << pp.filename().string() << " psnr=" << p << " ssim=" << s << "\n";
    }
    print_summary("PSNR(dB)", psnrs, inf_count);
    print_summary("SSIM", ssims, 0);
    return 0;
}

int cmd_gradcheck(const CommonOpts& common, int size) {
    if (size < 8) {
        std::cerr << "error: --size must be at least 8 (three 2x2 poolings)\n";
        return 2;
    }
    ResolvedConfig rc = resolve(common);
    print_resolved(rc, rc.train.seed);
    const bool sabotage = std::getenv("GRANET_GRADCHECK_SABOTAGE") != nullptr;
    const auto reports = run_gradcheck_suite(rc.model, size, sabotage);
    bool all_pass = true;
    for (const auto& r : reports) {
        std::cout << (r.pass ? "PASS" : "FAIL") << "  " << r.name << "  max_rel_err=" << r.fd.max_rel_err
                  << " checked=" << r.fd.checked << " skipped_kinks=" << r.fd.skipped_kinks << "\n";
        all_pass = all_pass && r.pass;
    }
    std::cout << (all_pass ? "gradient check suite: all units passed\n"
                           : "gradient check suite: FAILURES present\n");
    return all_pass ? 0 : 1;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"GraNet: coarse-to-fine single-image de-raining"};
    app.require_subcommand(1);

    CommonOpts common;

    auto* synth = app.add_subcommand("synth", "generate paired rainy/clean/mask images");
    std::string clean_dir, out_dir;
    int count = 0;
    synth->add_option("--clean-dir", clean_dir, "directory of clean .png images")->required();
    synth->add_option("--out-dir", out_dir, "output dataset directory")->required();
    synth->add_option("--count", count, "number of pairs to generate")->required();
    synth->add_option("--config", common.config_path, "key = value config file");
    synth->add_option("--seed", common.seed, "override rain.seed");

    auto* train_cmd = app.add_subcommand("train", "train on a paired dataset");
    std::string train_dir, val_dir, out_path, resume_path, csv_path, out_last_path;
    int max_epochs_flag = 0;
    train_cmd->add_option("--config", common.config_path, "key = value config file");
    train_cmd->add_option("--train-dir", train_dir, "dataset dir with rainy/ and clean/")->required();
    train_cmd->add_option("--val-dir", val_dir, "validation dataset dir")->required();
    train_cmd->add_option("--out", out_path, "best-validation checkpoint path")->required();
    train_cmd->add_option("--resume", resume_path, "checkpoint to resume from");
    train_cmd->add_option("--csv", csv_path, "metrics CSV path (default: <out>.csv)");
    train_cmd->add_option("--out-last", out_last_path, "also write the final-state checkpoint here");
    train_cmd->add_option("--max-epochs", max_epochs_flag, "override train.max_epochs");
    train_cmd->add_option("--seed", common.seed, "override train.seed");
    train_cmd->add_flag("--no-ra", common.no_ra, "ablation: remove region-aware blocks");
    train_cmd->add_flag("--no-fine", common.no_fine, "ablation: coarse stage only");
    train_cmd->add_flag("--no-merge", common.no_merge,
                        "ablation: replace the merging block with a 1x1 conv");

    auto* infer = app.add_subcommand("infer", "de-rain an image or a directory of images");
    std::string ckpt_path, input_path, infer_out, cross_config;
    bool dump_intermediates = false;
    infer->add_option("--checkpoint", ckpt_path, "trained checkpoint")->required();
    infer->add_option("--input", input_path, "input .png file or directory")->required();
    infer->add_option("--out", infer_out, "output directory")->required();
    infer->add_flag("--dump-intermediates", dump_intermediates,
                    "also write _mask and _coarse images");
    infer->add_option("--config", cross_config, "optional config to cross-check the checkpoint");

    auto* eval_cmd = app.add_subcommand("eval", "PSNR/SSIM of predictions against ground truth");
    std::string pred_dir, gt_dir;
    eval_cmd->add_option("--pred-dir", pred_dir, "predicted images")->required();
    eval_cmd->add_option("--gt-dir", gt_dir, "ground-truth images")->required();

    auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference verification suite");
    int size = 16;
    gradcheck->add_option("--config", common.config_path, "key = value config file");
    gradcheck->add_option("--size", size, "full-model input size (>= 8)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (app.got_subcommand(synth)) return cmd_synth(common, clean_dir, out_dir, count);
        if (app.got_subcommand(train_cmd))
            return cmd_train(common, train_dir, val_dir, out_path, resume_path, csv_path,
                             out_last_path, max_epochs_flag);
        if (app.got_subcommand(infer))
            return cmd_infer(ckpt_path, input_path, infer_out, dump_intermediates, cross_config);
        if (app.got_subcommand(eval_cmd)) return cmd_eval(pred_dir, gt_dir);
        if (app.got_subcommand(gradcheck)) return cmd_gradcheck(common, size);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 2;
}
