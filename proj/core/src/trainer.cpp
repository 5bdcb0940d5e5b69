#include "pffnet/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <memory>
#include <ostream>

#include "pffnet/checkpoint.hpp"
#include "pffnet/error.hpp"
#include "pffnet/inference.hpp"

namespace pffnet {
namespace {

void require_positive(double v, const char* name) {
    if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(std::string(name) + " must be positive");
}

template <typename T>
void require_matching(const ParamStore<T>& ref, const ParamStore<T>& other, const char* what) {
    if (ref.size() != other.size()) {
        throw ConfigError(std::string(what) + " has " + std::to_string(other.size()) + " tensors, expected " +
                          std::to_string(ref.size()));
    }
    for (const auto& [key, tensor] : ref) {
        if (!other.contains(key)) throw ConfigError(std::string(what) + " is missing key " + key);
        if (other.at(key).shape() != tensor.shape()) {
            throw ConfigError(std::string(what) + " key " + key + " has shape " + other.at(key).shape().str() +
                              ", expected " + tensor.shape().str());
        }
    }
}

std::string checkpoint_name(std::size_t epoch) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "epoch_%04zu.ckpt", epoch);
    return buf;
}

// Training loss on a batch whose spatial dims are not multiples of the network divisor:
// the batch is reflect-padded, and only the original region enters the loss.
struct StepResult {
    double loss = 0.0;
    Gradients<float> grads;
};

StepResult train_step(const Batch& batch, const ParamStore<float>& params, const PFFNetConfig& config) {
    CropRecord record;
    const Tensor32 input = pad_to_multiple(batch.hazy, config.divisor(), &record);
    ForwardTrace<float> trace;
    const Tensor32 out = forward(input, params, config, &trace);
    if (out.shape() == batch.clear.shape()) {
        MseResult<float> mse = mse_loss(out, batch.clear);
        return {mse.loss, backward(trace, mse.grad, params, config)};
    }
    MseResult<float> mse = mse_loss(unpad(out, record), batch.clear);
    Tensor32 grad(out.shape());
    const Shape& s = mse.grad.shape();
    for (std::size_t n = 0; n < s.n; ++n)
        for (std::size_t c = 0; c < s.c; ++c)
            for (std::size_t y = 0; y < s.h; ++y)
                std::copy_n(&mse.grad.at(n, c, y, 0), s.w, &grad.at(n, c, y, 0));
    return {mse.loss, backward(trace, grad, params, config)};
}

}  // namespace

void TrainConfig::validate() const {
    require_positive(lr, "lr");
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (iters_per_epoch == 0) throw ConfigError("iters_per_epoch must be positive");
    if (total_epochs == 0) throw ConfigError("epochs must be positive");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0)) throw ConfigError("beta1 must be in [0, 1)");
    if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) throw ConfigError("beta2 must be in [0, 1)");
    require_positive(adam_eps, "eps");
    if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
        throw ConfigError("val_fraction must be in [0, 1)");
    }
    model.validate();
}

void apply_key_values(TrainConfig& c, const KeyValues& kv) {
    for (const auto& [key, value] : kv) {
        if (key == "lr") c.lr = parse_double(value, key);
        else if (key == "batch_size") c.batch_size = parse_size(value, key);
        else if (key == "iters_per_epoch") c.iters_per_epoch = parse_size(value, key);
        else if (key == "epochs") c.total_epochs = parse_size(value, key);
        else if (key == "beta1") c.adam_beta1 = parse_double(value, key);
        else if (key == "beta2") c.adam_beta2 = parse_double(value, key);
        else if (key == "eps") c.adam_eps = parse_double(value, key);
        else if (key == "seed") c.seed = parse_u64(value, key);
        else if (key == "eval_every") c.eval_every = parse_size(value, key);
        else if (key == "val_fraction") c.validation_fraction = parse_double(value, key);
        else if (key == "stem_kernel") c.model.stem_kernel = parse_size(value, key);
        else if (key == "base_channels") c.model.base_channels = parse_size(value, key);
        else if (key == "encoder_levels") c.model.encoder_levels = parse_size(value, key);
        else if (key == "res_blocks") c.model.res_blocks = parse_size(value, key);
        else if (key == "skip") c.model.skip_connections = parse_bool(value, key);
        else if (key == "image_channels") c.model.image_channels = parse_size(value, key);
        else throw ConfigError("unknown config key '" + key + "'");
    }
}

KeyValues to_key_values(const TrainConfig& c) {
    return {
        {"lr", format_double(c.lr)},
        {"batch_size", std::to_string(c.batch_size)},
        {"iters_per_epoch", std::to_string(c.iters_per_epoch)},
        {"epochs", std::to_string(c.total_epochs)},
        {"beta1", format_double(c.adam_beta1)},
        {"beta2", format_double(c.adam_beta2)},
        {"eps", format_double(c.adam_eps)},
        {"seed", std::to_string(c.seed)},
        {"eval_every", std::to_string(c.eval_every)},
        {"val_fraction", format_double(c.validation_fraction)},
        {"stem_kernel", std::to_string(c.model.stem_kernel)},
        {"base_channels", std::to_string(c.model.base_channels)},
        {"encoder_levels", std::to_string(c.model.encoder_levels)},
        {"res_blocks", std::to_string(c.model.res_blocks)},
        {"skip", c.model.skip_connections ? "true" : "false"},
        {"image_channels", std::to_string(c.model.image_channels)},
    };
}

template <typename T>
AdamState<T> adam_init(const ParamStore<T>& params) {
    AdamState<T> s;
    for (const auto& [key, tensor] : params) {
        s.m.insert(key, Tensor<T>(tensor.shape()));
        s.v.insert(key, Tensor<T>(tensor.shape()));
    }
    return s;
}

template <typename T>
void adam_step(ParamStore<T>& params, const ParamStore<T>& grads, AdamState<T>& state, const AdamHyper& hyper) {
    require_matching(params, grads, "gradient store");
    require_matching(params, state.m, "adam first moment");
    require_matching(params, state.v, "adam second moment");

    const std::uint64_t t = state.step + 1;
    const double b1 = hyper.beta1, b2 = hyper.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t));

    for (const auto& key : params.keys()) {
        const T* g = grads.at(key).ptr();
        T* p = params.mutable_at(key).ptr();
        T* m = state.m.mutable_at(key).ptr();
        T* v = state.v.mutable_at(key).ptr();
        const long n = static_cast<long>(grads.at(key).size());
#pragma omp parallel for schedule(static) if (n > 65536)
        for (long i = 0; i < n; ++i) {
            const double gi = g[i];
            const double mi = b1 * static_cast<double>(m[i]) + (1.0 - b1) * gi;
            const double vi = b2 * static_cast<double>(v[i]) + (1.0 - b2) * gi * gi;
            m[i] = static_cast<T>(mi);
            v[i] = static_cast<T>(vi);
            const double mhat = static_cast<double>(m[i]) / c1;
            const double vhat = static_cast<double>(v[i]) / c2;
            p[i] = static_cast<T>(static_cast<double>(p[i]) - hyper.lr * mhat / (std::sqrt(vhat) + hyper.eps));
        }
    }
    state.step = t;
}

template <typename T>
MseResult<T> mse_loss(const Tensor<T>& prediction, const Tensor<T>& target) {
    require_same_shape(prediction.shape(), target.shape(), "mse_loss");
    MseResult<T> r{0.0, Tensor<T>(prediction.shape())};
    const std::size_t n = prediction.size();
    if (n == 0) return r;
    const double scale = 2.0 / static_cast<double>(n);
    double sum = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double d = static_cast<double>(prediction[i]) - static_cast<double>(target[i]);
        sum += d * d;
        r.grad[i] = static_cast<T>(scale * d);
    }
    r.loss = sum / static_cast<double>(n);
    return r;
}

double psnr_from_mse(double mse) {
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return -10.0 * std::log10(mse);
}

std::string metric_log_header() { return "epoch\titer\tloss\tval_psnr\twall_seconds"; }

std::string format_metric_row(const EpochRecord& r) {
    char buf[160];
    std::string val = "nan";
    if (std::isinf(r.val_psnr)) {
        val = "inf";
    } else if (!std::isnan(r.val_psnr)) {
        char v[32];
        std::snprintf(v, sizeof v, "%.4f", r.val_psnr);
        val = v;
    }
    std::snprintf(buf, sizeof buf, "%zu\t%llu\t%.9g\t%s\t%.3f", r.epoch,
                  static_cast<unsigned long long>(r.iteration), r.loss, val.c_str(), r.wall_seconds);
    return buf;
}

std::vector<std::size_t> validation_indices(std::size_t count, double fraction, std::uint64_t seed) {
    if (count < 2 || fraction <= 0.0) return {};
    std::size_t k = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(count)));
    k = std::min(k, count - 1);
    // A pass number the batch stream never reaches in practice keeps the split independent
    // of the training order.
    auto perm = epoch_permutation(count, seed, ~std::uint64_t{0});
    perm.resize(k);
    std::sort(perm.begin(), perm.end());
    return perm;
}

double validation_psnr(const ParamStore<float>& params, const PFFNetConfig& config, const PairDataset& data) {
    double sum = 0.0;
    std::size_t finite = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        const PatchPair pair = data.get(i);
        Tensor32 out = predict(image_to_tensor<float>(pair.hazy), params, config);
        const Tensor32 truth = image_to_tensor<float>(pair.clear);
        require_same_shape(out.shape(), truth.shape(), "validation pair");
        double sse = 0.0;
        for (std::size_t j = 0; j < out.size(); ++j) {
            const double d = std::clamp(static_cast<double>(out[j]), 0.0, 1.0) - static_cast<double>(truth[j]);
            sse += d * d;
        }
        const double p = psnr_from_mse(sse / static_cast<double>(out.size()));
        if (std::isfinite(p)) {
            sum += p;
            ++finite;
        }
    }
    return finite ? sum / static_cast<double>(finite) : std::numeric_limits<double>::quiet_NaN();
}

TrainResult train(const TrainConfig& config, const PairDataset& data, const TrainOptions& options) {
    config.validate();
    if (data.size() == 0) throw ConfigError("training data is empty");

    const PairDataset* train_data = &data;
    const PairDataset* val_data = options.validation;
    std::unique_ptr<SubsetDataset> train_subset, val_subset;
    if (!val_data && config.eval_every > 0) {
        auto held = validation_indices(data.size(), config.validation_fraction, config.seed);
        if (!held.empty()) {
            std::vector<std::size_t> rest;
            for (std::size_t i = 0, h = 0; i < data.size(); ++i) {
                if (h < held.size() && held[h] == i) ++h;
                else rest.push_back(i);
            }
            train_subset = std::make_unique<SubsetDataset>(data, std::move(rest));
            val_subset = std::make_unique<SubsetDataset>(data, std::move(held));
            train_data = train_subset.get();
            val_data = val_subset.get();
        }
    }
    if (train_data->size() < config.batch_size) {
        throw ConfigError("training set has " + std::to_string(train_data->size()) +
                          " patches, fewer than one batch of " + std::to_string(config.batch_size));
    }

    TrainResult result;
    TrainState& state = result.state;
    BatchStream stream(*train_data, config.batch_size, config.seed);
    if (options.resume) {
        state = *options.resume;
        check_params(state.params, config.model);
        require_matching(state.params, state.adam.m, "adam first moment");
        require_matching(state.params, state.adam.v, "adam second moment");
        stream.seek(state.data_position);
    } else {
        state.params = init_params<float>(config.model, config.seed);
        state.adam = adam_init(state.params);
    }

    namespace fs = std::filesystem;
    const bool write = !options.out_dir.empty();
    std::ofstream metrics;
    if (write) {
        fs::create_directories(options.out_dir);
        const std::string path = (fs::path(options.out_dir) / "metrics.tsv").string();
        const bool append = options.resume && fs::exists(path);
        metrics.open(path, append ? std::ios::app : std::ios::trunc);
        if (!metrics) throw IoError(path, "cannot open for writing");
        if (!append) metrics << metric_log_header() << '\n';
    }
    auto save = [&](const std::string& name) {
        const std::string path = (fs::path(options.out_dir) / name).string();
        save_checkpoint(path, Checkpoint{config, state, true});
        return path;
    };

    const AdamHyper hyper{config.lr, config.adam_beta1, config.adam_beta2, config.adam_eps};
    const std::uint64_t total = static_cast<std::uint64_t>(config.total_epochs) * config.iters_per_epoch;
    const auto start = std::chrono::steady_clock::now();

    while (state.iteration < total) {
        if (options.stop_after != 0 && state.iteration >= options.stop_after) {
            result.interrupted = true;
            if (write) result.checkpoints.push_back(save("interrupted.ckpt"));
            break;
        }
        const Batch batch = stream.next();
        StepResult step = train_step(batch, state.params, config.model);
        if (!std::isfinite(step.loss)) {
            std::string where = "non-finite loss at iteration " + std::to_string(state.iteration + 1);
            if (write) where += "; state before the step saved to " + save("diverged.ckpt");
            throw NumericError(where);
        }
        adam_step(state.params, step.grads.params, state.adam, hyper);
        ++state.iteration;
        state.epoch_loss_sum += step.loss;
        state.data_position = stream.position();
        result.losses.push_back(step.loss);
        if (options.on_iteration) options.on_iteration(state.iteration, step.loss);

        if (state.iteration % config.iters_per_epoch != 0) continue;
        ++state.epoch;
        EpochRecord rec;
        rec.epoch = state.epoch;
        rec.iteration = state.iteration;
        rec.loss = state.epoch_loss_sum / static_cast<double>(config.iters_per_epoch);
        rec.val_psnr = std::numeric_limits<double>::quiet_NaN();
        if (val_data && val_data->size() > 0 && config.eval_every > 0 && state.epoch % config.eval_every == 0) {
            rec.val_psnr = validation_psnr(state.params, config.model, *val_data);
        }
        rec.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        state.epoch_loss_sum = 0.0;
        result.epochs.push_back(rec);
        if (options.log) *options.log << format_metric_row(rec) << std::endl;
        if (write) {
            metrics << format_metric_row(rec) << '\n' << std::flush;
            const std::size_t every = std::max<std::size_t>(options.checkpoint_every, 1);
            if (state.epoch % every == 0 || state.epoch == config.total_epochs) {
                result.checkpoints.push_back(save(checkpoint_name(state.epoch)));
            }
        }
    }
    return result;
}

std::vector<AblationVariant> default_ablation_variants() {
    return {
        {"6_resblock", 6, true},
        {"12_resblock", 12, true},
        {"18_resblock", 18, true},
        {"24_resblock", 24, true},
        {"nsc_resblock", 12, false},
    };
}

std::optional<std::uint64_t> AblationCurve::iterations_to(double db) const {
    for (std::size_t i = 0; i < losses.size(); ++i) {
        if (psnr_from_mse(losses[i]) >= db) return i + 1;
    }
    return std::nullopt;
}

std::vector<AblationCurve> run_ablation(const TrainConfig& base, const std::vector<AblationVariant>& variants,
                                        const PairDataset& data, const TrainOptions& options) {
    namespace fs = std::filesystem;
    for (const auto& v : variants) {
        if (v.name.empty() || v.name.find_first_of("/\\\t\n") != std::string::npos) {
            throw ConfigError("invalid ablation variant name '" + v.name + "'");
        }
        TrainConfig c = base;
        c.model.res_blocks = v.res_blocks;
        c.model.skip_connections = v.skip_connections;
        c.validate();
    }

    std::vector<AblationCurve> curves;
    for (const auto& v : variants) {
        TrainConfig c = base;
        c.model.res_blocks = v.res_blocks;
        c.model.skip_connections = v.skip_connections;
        TrainOptions opt = options;
        opt.resume.reset();
        opt.stop_after = 0;
        if (!options.out_dir.empty()) opt.out_dir = (fs::path(options.out_dir) / v.name).string();
        if (options.log) *options.log << "# variant " << v.name << std::endl;
        TrainResult r = train(c, data, opt);
        curves.push_back({v, std::move(r.epochs), std::move(r.losses)});
    }

    if (!options.out_dir.empty()) {
        fs::create_directories(options.out_dir);
        for (const auto& curve : curves) {
            const std::string path = (fs::path(options.out_dir) / (curve.variant.name + ".tsv")).string();
            std::ofstream out(path);
            if (!out) throw IoError(path, "cannot open for writing");
            out << metric_log_header() << '\n';
            for (const auto& rec : curve.epochs) out << format_metric_row(rec) << '\n';
        }
        const std::string path = (fs::path(options.out_dir) / "ablation.tsv").string();
        std::ofstream out(path);
        if (!out) throw IoError(path, "cannot open for writing");
        // Validation PSNR when evaluated, otherwise the training PSNR implied by the epoch loss.
        out << "epoch";
        for (const auto& curve : curves) out << '\t' << curve.variant.name;
        out << '\n';
        const std::size_t epochs = curves.empty() ? 0 : curves.front().epochs.size();
        for (std::size_t e = 0; e < epochs; ++e) {
            out << e + 1;
            for (const auto& curve : curves) {
                const EpochRecord& rec = curve.epochs[e];
                const double db = std::isnan(rec.val_psnr) ? psnr_from_mse(rec.loss) : rec.val_psnr;
                char buf[32];
                std::snprintf(buf, sizeof buf, "\t%.4f", db);
                out << buf;
            }
            out << '\n';
        }
    }
    return curves;
}

template AdamState<float> adam_init(const ParamStore<float>&);
template AdamState<double> adam_init(const ParamStore<double>&);
template void adam_step(ParamStore<float>&, const ParamStore<float>&, AdamState<float>&, const AdamHyper&);
template void adam_step(ParamStore<double>&, const ParamStore<double>&, AdamState<double>&, const AdamHyper&);
template MseResult<float> mse_loss(const Tensor<float>&, const Tensor<float>&);
template MseResult<double> mse_loss(const Tensor<double>&, const Tensor<double>&);

}  // namespace pffnet
