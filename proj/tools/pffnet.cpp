// pffnet: haze synthesis, patch building, training, ablation, dehazing, evaluation and
// gradient checking from the command line.

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pffnet/checkpoint.hpp"
#include "pffnet/data.hpp"
#include "pffnet/error.hpp"
#include "pffnet/gradcheck.hpp"
#include "pffnet/haze.hpp"
#include "pffnet/image_io.hpp"
#include "pffnet/inference.hpp"
#include "pffnet/keyvalue.hpp"
#include "pffnet/metrics.hpp"
#include "pffnet/trainer.hpp"

namespace fs = std::filesystem;
using namespace pffnet;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

// Bad flag values or combinations that CLI11 cannot see on its own.
class UsageError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

bool is_image_file(const fs::path& p) {
    std::string ext = p.extension().string();
    std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
    return ext == ".png" || ext == ".ppm" || ext == ".pgm";
}

// Image files of a directory keyed by filename stem. Two files sharing a stem is an error.
std::map<std::string, std::string> images_by_stem(const std::string& dir) {
    if (!fs::is_directory(dir)) throw IoError(dir, "not a directory");
    std::map<std::string, std::string> out;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file() || !is_image_file(entry.path())) continue;
        const std::string stem = entry.path().stem().string();
        if (!out.emplace(stem, entry.path().string()).second) {
            throw IoError(entry.path().string(), "another image in " + dir + " has the stem '" + stem + "'");
        }
    }
    return out;
}

std::uint64_t image_seed(std::uint64_t seed, std::size_t index) {
    std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (index + 1);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
    return z ^ (z >> 31);
}

TrainConfig resolve_config(const std::string& config_path, const std::vector<std::string>& overrides,
                           const std::optional<std::uint64_t>& seed) {
    TrainConfig config;
    if (!config_path.empty()) apply_key_values(config, read_key_value_file(config_path));
    KeyValues extra;
    for (const auto& o : overrides) {
        const auto eq = o.find('=');
        if (eq == std::string::npos || eq == 0) throw UsageError("--set expects key=value, got '" + o + "'");
        extra.emplace_back(trim(o.substr(0, eq)), trim(o.substr(eq + 1)));
    }
    apply_key_values(config, extra);
    if (seed) config.seed = *seed;
    config.validate();
    return config;
}

PatchSet read_patch_data(const std::string& data) {
    const fs::path p(data);
    return read_manifest(fs::is_directory(p) ? (p / "manifest.tsv").string() : data);
}

// --- synth ---------------------------------------------------------------------------

struct SynthArgs {
    std::string clear_dir, depth_dir, out_dir;
    std::uint64_t seed = 0;
};

int run_synth(const SynthArgs& a) {
    const auto clear = images_by_stem(a.clear_dir);
    const auto depth = images_by_stem(a.depth_dir);
    fs::create_directories(a.out_dir);
    const std::string manifest_path = (fs::path(a.out_dir) / "params.tsv").string();
    std::ofstream manifest(manifest_path);
    if (!manifest) throw IoError(manifest_path, "cannot open for writing");
    manifest << "# name\tA_r\tA_g\tA_b\tbeta\tseed\n";

    std::size_t index = 0, written = 0, failed = 0;
    for (const auto& [stem, clear_path] : clear) {
        const std::uint64_t seed = image_seed(a.seed, index++);
        try {
            const auto it = depth.find(stem);
            if (it == depth.end()) throw IoError(clear_path, "no depth map named '" + stem + "' in " + a.depth_dir);
            const ImageBuffer j = load_image(clear_path);
            const ImageBuffer d = load_image(it->second);
            if (d.height != j.height || d.width != j.width) {
                throw ShapeError(stem + ": depth map is " + std::to_string(d.height) + "x" + std::to_string(d.width) +
                                 ", clear image is " + std::to_string(j.height) + "x" + std::to_string(j.width));
            }
            // Depth is read from the first channel of the (already [0, 1]-normalized) file.
            Tensor64 depth_map(Shape{1, 1, d.height, d.width});
            for (std::size_t y = 0; y < d.height; ++y)
                for (std::size_t x = 0; x < d.width; ++x) depth_map.at(0, 0, y, x) = d.at(y, x, 0);

            const HazeParams params = sample_haze_params(seed);
            const Tensor64 t = transmission_from_depth(depth_map, params.beta());
            const Tensor64 hazy = synthesize_haze(image_to_tensor<double>(j), t, params);
            save_image(tensor_to_image(hazy), (fs::path(a.out_dir) / (stem + ".png")).string());

            const auto& airlight = params.airlight();
            manifest << stem << '\t' << format_double(airlight[0]) << '\t' << format_double(airlight[1]) << '\t'
                     << format_double(airlight[2]) << '\t' << format_double(params.beta()) << '\t' << seed << '\n';
            ++written;
        } catch (const Error& e) {
            std::cerr << "synth: " << e.what() << '\n';
            ++failed;
        }
    }
    for (const auto& [stem, path] : depth) {
        if (!clear.count(stem)) {
            std::cerr << "synth: " << path << ": no clear image named '" << stem << "'\n";
            ++failed;
        }
    }
    std::cout << "wrote " << written << " hazy images to " << a.out_dir << " (" << failed << " failed)\n";
    return failed == 0 ? kExitOk : kExitFailure;
}

// --- patches -------------------------------------------------------------------------

struct PatchArgs {
    std::string hazy_dir, clear_dir, out_dir;
    std::size_t crop = kDefaultCropSize;
    std::size_t stride = kDefaultCropStride;
    bool no_augment = false;
};

int run_patches(const PatchArgs& a) {
    const auto hazy = images_by_stem(a.hazy_dir);
    const auto clear = images_by_stem(a.clear_dir);
    std::vector<SceneSource> scenes;
    for (const auto& [stem, path] : hazy) {
        const auto it = clear.find(stem);
        if (it == clear.end()) throw IoError(path, "no clear image named '" + stem + "' in " + a.clear_dir);
        scenes.push_back({stem, fs::absolute(path).string(), fs::absolute(it->second).string()});
    }
    const PatchSet set = build_patchset(scenes, a.crop, a.stride, !a.no_augment);
    fs::create_directories(a.out_dir);
    const std::string path = (fs::path(a.out_dir) / "manifest.tsv").string();
    write_manifest(set, path);
    std::cout << set.size() << " patches from " << scenes.size() << " scenes written to " << path << '\n';
    return kExitOk;
}

// --- train / ablate ------------------------------------------------------------------

struct TrainArgs {
    std::string config_path, data, validation, out_dir, resume;
    std::vector<std::string> overrides;
    std::optional<std::uint64_t> seed;
    std::size_t checkpoint_every = 1;
    std::uint64_t stop_after = 0;
};

int run_train(const TrainArgs& a) {
    TrainConfig config = resolve_config(a.config_path, a.overrides, a.seed);
    TrainOptions opt;
    opt.out_dir = a.out_dir;
    opt.checkpoint_every = a.checkpoint_every;
    opt.stop_after = a.stop_after;
    opt.log = &std::cout;
    if (!a.resume.empty()) {
        Checkpoint ckpt = load_checkpoint(a.resume);
        if (!(ckpt.config.model == config.model)) {
            throw UsageError("--resume checkpoint was trained with a different model configuration");
        }
        if (!ckpt.has_optimizer) throw UsageError("--resume checkpoint has no optimizer state");
        opt.resume = std::move(ckpt.state);
    }
    ManifestDataset data(read_patch_data(a.data));
    std::optional<ManifestDataset> val;
    if (!a.validation.empty()) {
        val.emplace(read_patch_data(a.validation));
        opt.validation = &*val;
    }
    std::cout << "# " << data.size() << " patches, " << param_count(config.model) << " parameters\n"
              << metric_log_header() << std::endl;
    const TrainResult r = train(config, data, opt);
    for (const auto& path : r.checkpoints) std::cerr << "saved " << path << '\n';
    return kExitOk;
}

struct AblateArgs {
    TrainArgs train;
    std::vector<std::size_t> blocks{6, 12, 18, 24};
    std::size_t nsc_blocks = 12;
    double threshold_db = 30.0;
};

int run_ablate(const AblateArgs& a) {
    if (a.blocks.empty() && a.nsc_blocks == 0) throw UsageError("nothing to run: empty --blocks and --nsc-blocks 0");
    TrainConfig config = resolve_config(a.train.config_path, a.train.overrides, a.train.seed);
    std::vector<AblationVariant> variants;
    for (std::size_t b : a.blocks) variants.push_back({std::to_string(b) + "_resblock", b, true});
    if (a.nsc_blocks > 0) variants.push_back({"nsc_resblock", a.nsc_blocks, false});

    TrainOptions opt;
    opt.out_dir = a.train.out_dir;
    opt.checkpoint_every = a.train.checkpoint_every;
    opt.log = &std::cout;
    ManifestDataset data(read_patch_data(a.train.data));
    std::optional<ManifestDataset> val;
    if (!a.train.validation.empty()) {
        val.emplace(read_patch_data(a.train.validation));
        opt.validation = &*val;
    }
    const auto curves = run_ablation(config, variants, data, opt);
    std::printf("\n%-16s %7s %5s %14s %12s\n", "variant", "blocks", "skip", "final loss", "iters to dB");
    for (const auto& c : curves) {
        const auto hit = c.iterations_to(a.threshold_db);
        std::printf("%-16s %7zu %5s %14.6g %12s\n", c.variant.name.c_str(), c.variant.res_blocks,
                    c.variant.skip_connections ? "yes" : "no", c.losses.empty() ? 0.0 : c.losses.back(),
                    hit ? std::to_string(*hit).c_str() : "-");
    }
    return kExitOk;
}

// --- dehaze --------------------------------------------------------------------------

struct DehazeArgs {
    std::string input, output, checkpoint;
    std::size_t tile = 0;
    std::size_t overlap = kDefaultOverlap;
    int bits = 8;
    bool memory = false;
};

int run_dehaze(const DehazeArgs& a) {
    const Model model = load_model(a.checkpoint);
    const ImageBuffer image = load_image(a.input);
    if (a.memory) {
        std::cerr << memory_estimate(image.height, image.width, model.config, a.tile, a.tile ? a.overlap : 0).describe();
    }
    ImageBuffer out;
    if (a.tile > 0) {
        TiledStats stats;
        out = dehaze_tiled(image, model, a.tile, a.overlap, &stats);
        std::cerr << stats.tiles << " tiles, peak " << stats.peak_bytes / (1024 * 1024) << " MiB\n";
    } else {
        out = dehaze(image, model);
    }
    save_image(out, a.output, a.bits);
    std::cout << a.output << ": " << out.width << "x" << out.height << '\n';
    return kExitOk;
}

// --- eval ----------------------------------------------------------------------------

struct EvalArgs {
    std::string pairs, tsv;
};

int run_eval(const EvalArgs& a) {
    const MetricReport report = evaluate_files(read_pair_list(a.pairs));
    for (const auto& f : report.failures) std::cerr << "eval: skipped " << f.name << ": " << f.message << '\n';
    std::cout << report.to_table();
    if (!a.tsv.empty()) {
        std::ofstream out(a.tsv);
        if (!out) throw IoError(a.tsv, "cannot open for writing");
        out << report.to_tsv();
    }
    return report.failures.empty() ? kExitOk : kExitFailure;
}

// --- gradcheck -----------------------------------------------------------------------

struct GradArgs {
    std::size_t seeds = 50;
    std::uint64_t first_seed = 0;
    double tolerance = 1e-4;
    std::size_t network_coords = 20;
    std::size_t size = 16;
    std::size_t res_blocks = 2;
};

int run_gradcheck(const GradArgs& a) {
    if (a.size == 0 || a.size % 4 != 0) throw UsageError("--size must be a positive multiple of 4");
    GradCheckOptions opt;
    opt.tolerance = a.tolerance;
    double worst = 0.0;
    std::size_t failures = 0, checks = 0;
    std::map<std::string, double> per_op;
    for (std::uint64_t s = a.first_seed; s < a.first_seed + a.seeds; ++s) {
        opt.seed = s;
        for (const auto& r : check_ops(s, opt)) {
            const std::string op = r.name.substr(0, r.name.find(' '));
            per_op[op] = std::max(per_op[op], r.report.max_rel_error);
            worst = std::max(worst, r.report.max_rel_error);
            ++checks;
            if (!r.report.passed) {
                ++failures;
                std::cout << "FAIL seed " << s << " " << r.name << ": " << r.report.summary() << '\n';
            }
        }
        PFFNetConfig tiny = PFFNetConfig::tiny();
        tiny.res_blocks = a.res_blocks;
        opt.coords_per_input = a.network_coords;
        const GradCheckReport net = check_network(tiny, a.size, a.size, s, opt);
        opt.coords_per_input = 0;
        per_op["network"] = std::max(per_op["network"], net.max_rel_error);
        worst = std::max(worst, net.max_rel_error);
        ++checks;
        if (!net.passed) {
            ++failures;
            std::cout << "FAIL seed " << s << " network: " << net.summary() << '\n';
        }
    }
    for (const auto& [op, err] : per_op) std::printf("%-16s max rel err %.3e\n", op.c_str(), err);
    std::printf("%zu checks over %zu seeds, %zu failed, worst %.3e (tolerance %.1e)\n", checks, a.seeds, failures,
                worst, a.tolerance);
    return failures == 0 ? kExitOk : kExitFailure;
}

void add_train_flags(CLI::App* cmd, TrainArgs& a, bool with_resume) {
    cmd->add_option("--config", a.config_path, "key=value config file (e.g. profiles/tiny.cfg); full-size defaults otherwise")
        ->check(CLI::ExistingFile);
    cmd->add_option("--data", a.data, "patch manifest, or a directory holding manifest.tsv")->required();
    cmd->add_option("--val", a.validation, "separate validation manifest; default holds out val_fraction of --data");
    cmd->add_option("--out", a.out_dir, "output directory for checkpoints and metric logs")->required();
    cmd->add_option("--set", a.overrides, "override one config key, key=value (repeatable)");
    cmd->add_option("--seed", a.seed, "override the config seed");
    cmd->add_option("--checkpoint-every", a.checkpoint_every, "save a checkpoint every N epochs")
        ->check(CLI::PositiveNumber);
    if (with_resume) {
        cmd->add_option("--resume", a.resume, "continue from this checkpoint")->check(CLI::ExistingFile);
        cmd->add_option("--stop-after", a.stop_after, "stop after this many total iterations (0 runs to the end)");
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"PFFNet dehazing: synthesis, training, inference and evaluation"};
    app.require_subcommand(1);
    app.option_defaults()->always_capture_default();

    SynthArgs synth;
    auto* synth_cmd = app.add_subcommand("synth", "synthesize hazy images from clear images and depth maps");
    synth_cmd->add_option("--clear", synth.clear_dir, "directory of clear images")->required()->check(CLI::ExistingDirectory);
    synth_cmd->add_option("--depth", synth.depth_dir, "directory of depth maps with matching stems")
        ->required()
        ->check(CLI::ExistingDirectory);
    synth_cmd->add_option("--out", synth.out_dir, "output directory for hazy PNGs and params.tsv")->required();
    synth_cmd->add_option("--seed", synth.seed, "base seed for per-image haze parameters");

    PatchArgs patches;
    auto* patch_cmd = app.add_subcommand("patches", "build a patch manifest from paired hazy/clear images");
    patch_cmd->add_option("--hazy", patches.hazy_dir, "directory of hazy images")->required()->check(CLI::ExistingDirectory);
    patch_cmd->add_option("--clear", patches.clear_dir, "directory of clear images with matching stems")
        ->required()
        ->check(CLI::ExistingDirectory);
    patch_cmd->add_option("--out", patches.out_dir, "output directory; manifest.tsv is written there")->required();
    patch_cmd->add_option("--crop", patches.crop, "crop size in pixels")->check(CLI::PositiveNumber);
    patch_cmd->add_option("--stride", patches.stride, "crop stride in pixels")->check(CLI::PositiveNumber);
    patch_cmd->add_flag("--no-augment", patches.no_augment, "skip the 12 rotation/flip variants");

    TrainArgs train;
    auto* train_cmd = app.add_subcommand("train", "train a network on a patch manifest");
    add_train_flags(train_cmd, train, true);

    AblateArgs ablate;
    auto* ablate_cmd = app.add_subcommand("ablate", "train block-count and skip-connection variants side by side");
    add_train_flags(ablate_cmd, ablate.train, false);
    ablate_cmd->add_option("--blocks", ablate.blocks, "residual block counts to compare")->delimiter(',');
    ablate_cmd->add_option("--nsc-blocks", ablate.nsc_blocks, "block count of the no-skip variant (0 disables it)");
    ablate_cmd->add_option("--threshold", ablate.threshold_db, "training PSNR (dB) reported as iterations-to-threshold");

    DehazeArgs dehaze_args;
    auto* dehaze_cmd = app.add_subcommand("dehaze", "dehaze one image with a trained checkpoint");
    dehaze_cmd->add_option("--in", dehaze_args.input, "hazy input image")->required()->check(CLI::ExistingFile);
    dehaze_cmd->add_option("--out", dehaze_args.output, "restored output image (.png, .ppm or .pgm)")->required();
    dehaze_cmd->add_option("--checkpoint", dehaze_args.checkpoint, "trained checkpoint")
        ->required()
        ->check(CLI::ExistingFile);
    dehaze_cmd->add_option("--tile", dehaze_args.tile, "tile size for tiled inference; 0 processes the whole image");
    dehaze_cmd->add_option("--overlap", dehaze_args.overlap, "tile overlap in pixels (with --tile)");
    dehaze_cmd->add_option("--bits", dehaze_args.bits, "output bit depth")->check(CLI::IsMember({8, 16}));
    dehaze_cmd->add_flag("--memory", dehaze_args.memory, "print the memory estimate before running");

    EvalArgs eval;
    auto* eval_cmd = app.add_subcommand("eval", "PSNR/SSIM of restored images against ground truth");
    eval_cmd->add_option("--pairs", eval.pairs, "tab-separated list of restored<TAB>truth paths")
        ->required()
        ->check(CLI::ExistingFile);
    eval_cmd->add_option("--tsv", eval.tsv, "also write the per-image report here");

    GradArgs grad;
    auto* grad_cmd = app.add_subcommand("gradcheck", "finite-difference check of every op and a tiny network");
    grad_cmd->add_option("--seeds", grad.seeds, "number of random seeds")->check(CLI::PositiveNumber);
    grad_cmd->add_option("--first-seed", grad.first_seed, "first seed");
    grad_cmd->add_option("--tolerance", grad.tolerance, "relative error tolerance")->check(CLI::PositiveNumber);
    grad_cmd->add_option("--network-coords", grad.network_coords, "sampled coordinates per network tensor");
    grad_cmd->add_option("--size", grad.size, "network input height and width");
    grad_cmd->add_option("--res-blocks", grad.res_blocks, "residual blocks in the checked network")
        ->check(CLI::PositiveNumber);

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        if (*synth_cmd) return run_synth(synth);
        if (*patch_cmd) return run_patches(patches);
        if (*train_cmd) return run_train(train);
        if (*ablate_cmd) return run_ablate(ablate);
        if (*dehaze_cmd) return run_dehaze(dehaze_args);
        if (*eval_cmd) return run_eval(eval);
        if (*grad_cmd) return run_gradcheck(grad);
    } catch (const UsageError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const ConfigError& e) {
        std::cerr << "configuration error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitFailure;
    }
    return kExitUsage;
}
